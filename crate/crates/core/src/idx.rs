//! IDX binary tensors (the MNIST file format).
//!
//! Header: two zero bytes, a type code, the number of dimensions, then one
//! big-endian `u32` per dimension, followed by the payload in row-major
//! order. Supported layouts:
//!
//! | magic        | payload              | meaning                         |
//! |--------------|----------------------|---------------------------------|
//! | `0x00000801` | `u8 [count]`         | labels                          |
//! | `0x00000803` | `u8 [count,rows,cols]` | images, scaled to `[0, 1]`    |
//! | `0x00000E02` | `f64 [count,dim]`    | real-valued feature rows        |
//!
//! The `f64` layout carries synthetic features without quantization.

use std::fs;
use std::path::Path;

use crate::data::LabeledDataset;
use crate::error::{Error, Result};

pub const MAGIC_LABELS: u32 = 0x0000_0801;
pub const MAGIC_IMAGES: u32 = 0x0000_0803;
pub const MAGIC_F64_ROWS: u32 = 0x0000_0E02;

#[derive(Debug, Clone, PartialEq)]
pub enum IdxTensor {
    Labels(Vec<u8>),
    Images { count: usize, rows: usize, cols: usize, pixels: Vec<u8> },
    Rows { count: usize, dim: usize, values: Vec<f64> },
}

impl IdxTensor {
    pub fn count(&self) -> usize {
        match self {
            IdxTensor::Labels(l) => l.len(),
            IdxTensor::Images { count, .. } | IdxTensor::Rows { count, .. } => *count,
        }
    }

    /// Feature rows: image pixels scaled by 1/255, or the stored reals.
    pub fn features(&self) -> Option<(usize, Vec<f64>)> {
        match self {
            IdxTensor::Labels(_) => None,
            IdxTensor::Images { rows, cols, pixels, .. } => {
                Some((rows * cols, pixels.iter().map(|&p| f64::from(p) / 255.0).collect()))
            }
            IdxTensor::Rows { dim, values, .. } => Some((*dim, values.clone())),
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Parse {
                offset: self.pos,
                msg: format!(
                    "truncated {what}: need {n} bytes, {} remain",
                    self.bytes.len() - self.pos
                ),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn parse_idx(bytes: &[u8]) -> Result<IdxTensor> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.u32("magic")?;
    let dims_expected = match magic {
        MAGIC_LABELS => 1,
        MAGIC_IMAGES => 3,
        MAGIC_F64_ROWS => 2,
        other => {
            return Err(Error::Parse { offset: 0, msg: format!("unsupported magic 0x{other:08X}") });
        }
    };
    let mut dims = Vec::with_capacity(dims_expected);
    for k in 0..dims_expected {
        dims.push(r.u32(&format!("dimension {k}"))? as usize);
    }
    let elems = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Parse { offset: 4, msg: "dimension product overflows".into() })?;
    let width = if magic == MAGIC_F64_ROWS { 8 } else { 1 };
    let payload_len = elems
        .checked_mul(width)
        .ok_or_else(|| Error::Parse { offset: 4, msg: "payload size overflows".into() })?;
    let payload = r.take(payload_len, "payload")?.to_vec();
    if r.pos != bytes.len() {
        return Err(Error::Parse {
            offset: r.pos,
            msg: format!("{} trailing bytes after payload", bytes.len() - r.pos),
        });
    }
    Ok(match magic {
        MAGIC_LABELS => IdxTensor::Labels(payload),
        MAGIC_IMAGES => IdxTensor::Images {
            count: dims[0],
            rows: dims[1],
            cols: dims[2],
            pixels: payload,
        },
        _ => IdxTensor::Rows {
            count: dims[0],
            dim: dims[1],
            values: payload
                .chunks_exact(8)
                .map(|c| f64::from_be_bytes(c.try_into().expect("chunk of 8")))
                .collect(),
        },
    })
}

pub fn read_idx(path: impl AsRef<Path>) -> Result<IdxTensor> {
    parse_idx(&fs::read(path)?)
}

fn dim_u32(d: usize) -> Result<[u8; 4]> {
    u32::try_from(d)
        .map(u32::to_be_bytes)
        .map_err(|_| Error::data(format!("dimension {d} does not fit the IDX header")))
}

pub fn encode_idx(tensor: &IdxTensor) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    match tensor {
        IdxTensor::Labels(l) => {
            out.extend_from_slice(&MAGIC_LABELS.to_be_bytes());
            out.extend_from_slice(&dim_u32(l.len())?);
            out.extend_from_slice(l);
        }
        IdxTensor::Images { count, rows, cols, pixels } => {
            if pixels.len() != count * rows * cols {
                return Err(Error::data("pixel buffer does not match image dimensions"));
            }
            out.extend_from_slice(&MAGIC_IMAGES.to_be_bytes());
            for d in [count, rows, cols] {
                out.extend_from_slice(&dim_u32(*d)?);
            }
            out.extend_from_slice(pixels);
        }
        IdxTensor::Rows { count, dim, values } => {
            if values.len() != count * dim {
                return Err(Error::data("value buffer does not match row dimensions"));
            }
            out.extend_from_slice(&MAGIC_F64_ROWS.to_be_bytes());
            out.extend_from_slice(&dim_u32(*count)?);
            out.extend_from_slice(&dim_u32(*dim)?);
            for v in values {
                out.extend_from_slice(&v.to_be_bytes());
            }
        }
    }
    Ok(out)
}

pub fn write_idx(path: impl AsRef<Path>, tensor: &IdxTensor) -> Result<()> {
    fs::write(path, encode_idx(tensor)?)?;
    Ok(())
}

/// Joins a feature tensor and a label tensor into a dataset. Labels must be
/// below `classes`, or `classes = None` to use `max label + 1`.
pub fn pair(features: &IdxTensor, labels: &IdxTensor, classes: Option<usize>) -> Result<LabeledDataset> {
    let IdxTensor::Labels(l) = labels else {
        return Err(Error::data("second tensor is not a label file"));
    };
    let Some((dim, values)) = features.features() else {
        return Err(Error::data("first tensor is not an image or feature file"));
    };
    if features.count() != l.len() {
        return Err(Error::data(format!(
            "pairing error: {} feature rows but {} labels",
            features.count(),
            l.len()
        )));
    }
    let labels: Vec<usize> = l.iter().map(|&y| usize::from(y)).collect();
    let classes = classes.unwrap_or_else(|| labels.iter().max().map_or(1, |m| m + 1));
    LabeledDataset::new(values, labels, dim, classes)
}

/// Feature and label tensors for a dataset (real-valued rows + `u8` labels).
pub fn dataset_tensors(ds: &LabeledDataset) -> Result<(IdxTensor, IdxTensor)> {
    let labels = ds
        .labels()
        .iter()
        .map(|&y| u8::try_from(y).map_err(|_| Error::data(format!("label {y} does not fit in a byte"))))
        .collect::<Result<Vec<u8>>>()?;
    Ok((
        IdxTensor::Rows { count: ds.len(), dim: ds.dim(), values: ds.features().to_vec() },
        IdxTensor::Labels(labels),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn two_by_two_images() {
        let mut bytes = vec![0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2];
        bytes.extend_from_slice(&[0, 255, 128, 1, 2, 3, 4, 5]);
        let t = parse_idx(&bytes).unwrap();
        let IdxTensor::Images { count, rows, cols, .. } = &t else { panic!("not images") };
        assert_eq!((*count, *rows, *cols), (2, 2, 2));
        let (dim, f) = t.features().unwrap();
        assert_eq!(dim, 4);
        assert_eq!(f[1], 1.0);
        assert_eq!(f[0], 0.0);
    }

    #[test]
    fn wrong_magic_and_truncation() {
        let e = parse_idx(&[0, 0, 8, 4, 0, 0, 0, 1]).unwrap_err();
        assert!(matches!(e, Error::Parse { offset: 0, .. }));
        let e = parse_idx(&[0, 0, 8, 1, 0, 0, 0, 3, 7, 7]).unwrap_err();
        assert!(matches!(e, Error::Parse { offset: 8, .. }), "{e}");
        let e = parse_idx(&[0, 0, 8, 1, 0, 0]).unwrap_err();
        assert!(matches!(e, Error::Parse { offset: 4, .. }), "{e}");
        let e = parse_idx(&[0, 0, 8, 1, 0, 0, 0, 1, 7, 7]).unwrap_err();
        assert!(matches!(e, Error::Parse { offset: 9, .. }), "{e}");
    }

    #[test]
    fn pairing_counts_must_match() {
        let img = IdxTensor::Images { count: 2, rows: 1, cols: 1, pixels: vec![0, 255] };
        let lab = IdxTensor::Labels(vec![1, 0, 1]);
        assert!(matches!(pair(&img, &lab, None), Err(Error::Data(m)) if m.contains("pairing")));
        let ok = pair(&img, &IdxTensor::Labels(vec![1, 0]), None).unwrap();
        assert_eq!(ok.classes(), 2);
        assert_eq!(ok.row(1), &[1.0]);
    }

    proptest! {
        #[test]
        fn roundtrip_is_bit_exact(
            count in 0usize..6,
            dim in 1usize..5,
            seed in any::<u64>(),
        ) {
            use rand::Rng;
            let mut rng = crate::rng::seeded(seed);
            let values: Vec<f64> = (0..count * dim).map(|_| rng.random::<f64>() * 1e3 - 5e2).collect();
            let pixels: Vec<u8> = (0..count * dim).map(|_| rng.random()).collect();
            for t in [
                IdxTensor::Rows { count, dim, values: values.clone() },
                IdxTensor::Images { count, rows: 1, cols: dim, pixels },
                IdxTensor::Labels((0..count as u8).collect()),
            ] {
                let back = parse_idx(&encode_idx(&t).unwrap()).unwrap();
                prop_assert_eq!(back, t);
            }
        }
    }
}
