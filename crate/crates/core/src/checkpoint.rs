//! Parameter checkpoints: a JSON header plus a little-endian `.f32` blob.
//!
//! Tensors are stored in a fixed order: `lin.weight`, `lin.bias`,
//! `im1.weight`, `im1.bias`, `t1.weight`, `t1.bias`, `t2.weight`, `t2.bias`,
//! `w_r`, `w_d`, then `head.weight`, `head.bias` when a classifier head is
//! present. Matrices are row-major. The header lists every tensor with its
//! shape and byte offset.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{Affine, FusionConfig, FusionDims, FusionParams, FusionWeights, GateVariant};
use crate::optim::ParamTensors;
use crate::scalar::Scalar;
use crate::store::LabelLevel;
use crate::tensor::{DenseMatrix, DenseVector};
use crate::train::ClassifierHead;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadHeader {
    pub level: LabelLevel,
    pub classes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub dims: FusionDims,
    pub gate_variant: GateVariant,
    pub l2_normalize_output: bool,
    pub seed: u64,
    pub step: u64,
    pub tensors: Vec<TensorEntry>,
    pub head: Option<HeadHeader>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub params: FusionParams<T>,
    pub head: Option<ClassifierHead<T>>,
    pub seed: u64,
    pub step: u64,
}

fn shapes(dims: &FusionDims, head_classes: Option<usize>) -> Vec<(&'static str, Vec<usize>)> {
    let mut out = vec![
        ("lin.weight", vec![dims.hidden, dims.image + dims.text]),
        ("lin.bias", vec![dims.hidden]),
        ("im1.weight", vec![dims.image, dims.hidden]),
        ("im1.bias", vec![dims.image]),
        ("t1.weight", vec![dims.hidden2, dims.hidden]),
        ("t1.bias", vec![dims.hidden2]),
        ("t2.weight", vec![dims.image, dims.hidden2]),
        ("t2.bias", vec![dims.image]),
        ("w_r", vec![1]),
        ("w_d", vec![1]),
    ];
    if let Some(c) = head_classes {
        out.push(("head.weight", vec![c, dims.image]));
        out.push(("head.bias", vec![c]));
    }
    out
}

impl<T: Scalar> Checkpoint<T> {
    pub fn header(&self) -> CheckpointHeader {
        let dims = self.params.dims();
        let mut offset = 0u64;
        let tensors = shapes(&dims, self.head.as_ref().map(|h| h.classes.len()))
            .into_iter()
            .map(|(name, shape)| {
                let entry = TensorEntry {
                    name: name.to_string(),
                    offset,
                    shape: shape.clone(),
                };
                offset += 4 * shape.iter().product::<usize>() as u64;
                entry
            })
            .collect();
        CheckpointHeader {
            format_version: CHECKPOINT_VERSION,
            dims,
            gate_variant: self.params.config.gate,
            l2_normalize_output: self.params.config.l2_normalize_output,
            seed: self.seed,
            step: self.step,
            tensors,
            head: self.head.as_ref().map(|h| HeadHeader {
                level: h.level,
                classes: h.classes.clone(),
            }),
        }
    }

    pub fn blob(&self) -> Vec<u8> {
        let mut tensors = self.params.weights.tensors();
        if let Some(h) = &self.head {
            tensors.push(("head.weight", h.layer.weight.as_slice()));
            tensors.push(("head.bias", h.layer.bias.as_slice()));
        }
        let mut out = Vec::new();
        for (_, t) in tensors {
            for v in t {
                out.extend_from_slice(&v.to_f32_bits().to_le_bytes());
            }
        }
        out
    }

    pub fn save(&self, header_path: &Path, blob_path: &Path) -> Result<()> {
        let mut json = serde_json::to_vec_pretty(&self.header())?;
        json.push(b'\n');
        fs::write(header_path, json).map_err(|e| Error::io(header_path, e))?;
        fs::write(blob_path, self.blob()).map_err(|e| Error::io(blob_path, e))?;
        Ok(())
    }

    pub fn load(header_path: &Path, blob_path: &Path) -> Result<Self> {
        let text = fs::read(header_path).map_err(|e| Error::io(header_path, e))?;
        let header: CheckpointHeader =
            serde_json::from_slice(&text).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let blob = fs::read(blob_path).map_err(|e| Error::io(blob_path, e))?;
        Self::from_parts(&header, &blob)
    }

    pub fn from_parts(header: &CheckpointHeader, blob: &[u8]) -> Result<Self> {
        if header.format_version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {}",
                header.format_version
            )));
        }
        let dims = header.dims;
        let expected = shapes(&dims, header.head.as_ref().map(|h| h.classes.len()));
        if expected.len() != header.tensors.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, header lists {}",
                expected.len(),
                header.tensors.len()
            )));
        }
        let mut offset = 0u64;
        let mut values: Vec<Vec<T>> = Vec::new();
        for ((name, shape), entry) in expected.iter().zip(&header.tensors) {
            if entry.name != *name || entry.shape != *shape || entry.offset != offset {
                return Err(Error::Checkpoint(format!(
                    "tensor entry {:?} does not match expected {name} {shape:?} at offset {offset}",
                    entry
                )));
            }
            let len = shape.iter().product::<usize>();
            let end = offset as usize + 4 * len;
            let bytes = blob.get(offset as usize..end).ok_or_else(|| {
                Error::Checkpoint(format!("blob too short for tensor {name}"))
            })?;
            let tensor: Vec<T> = bytes
                .chunks_exact(4)
                .map(|c| T::from_f32_bits(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
                .collect();
            if tensor.iter().any(|v| !v.is_finite()) {
                return Err(Error::Checkpoint(format!("non-finite value in tensor {name}")));
            }
            values.push(tensor);
            offset = end as u64;
        }
        if offset as usize != blob.len() {
            return Err(Error::BlobSize {
                expected: offset,
                actual: blob.len() as u64,
            });
        }

        let mut by_name: std::collections::HashMap<&str, Vec<T>> =
            expected.iter().map(|(n, _)| *n).zip(values).collect();
        let mut take = |name: &str| by_name.remove(name).expect("tensor count checked");
        let mut affine = |prefix: &str, rows: usize, cols: usize| -> Result<Affine<T>> {
            Ok(Affine {
                weight: DenseMatrix::from_vec(rows, cols, take(&format!("{prefix}.weight")))?,
                bias: DenseVector::from_vec(take(&format!("{prefix}.bias")))?,
            })
        };
        let lin = affine("lin", dims.hidden, dims.image + dims.text)?;
        let im1 = affine("im1", dims.image, dims.hidden)?;
        let t1 = affine("t1", dims.hidden2, dims.hidden)?;
        let t2 = affine("t2", dims.image, dims.hidden2)?;
        let head = match &header.head {
            Some(h) => Some(ClassifierHead {
                layer: affine("head", h.classes.len(), dims.image)?,
                classes: h.classes.clone(),
                level: h.level,
            }),
            None => None,
        };
        let w_r = take("w_r")[0];
        let w_d = take("w_d")[0];
        let config = FusionConfig {
            dims,
            gate: header.gate_variant,
            l2_normalize_output: header.l2_normalize_output,
        };
        let params = FusionParams::from_weights(
            config,
            FusionWeights {
                lin,
                im1,
                t1,
                t2,
                w_r,
                w_d,
            },
        )?;
        Ok(Self {
            params,
            head,
            seed: header.seed,
            step: header.step,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn sample(with_head: bool) -> Checkpoint<f32> {
        let cfg = FusionConfig::new(FusionDims {
            image: 4,
            text: 3,
            hidden: 5,
            hidden2: 2,
        });
        Checkpoint {
            params: FusionParams::init(cfg, 11),
            head: with_head.then(|| {
                ClassifierHead::init(4, vec!["x".into(), "y".into()], LabelLevel::Category, 11)
            }),
            seed: 11,
            step: 42,
        }
    }

    #[test]
    fn round_trip_with_and_without_head() {
        let dir = tempdir().unwrap();
        for with_head in [false, true] {
            let ck = sample(with_head);
            let (h, b) = (dir.path().join("c.json"), dir.path().join("c.f32"));
            ck.save(&h, &b).unwrap();
            let back = Checkpoint::<f32>::load(&h, &b).unwrap();
            assert_eq!(back, ck);
            assert_eq!(fs::read(&b).unwrap(), back.blob());
        }
    }

    #[test]
    fn header_offsets_are_contiguous() {
        let header = sample(true).header();
        let mut expect = 0;
        for t in &header.tensors {
            assert_eq!(t.offset, expect);
            expect += 4 * t.shape.iter().product::<usize>() as u64;
        }
        assert_eq!(expect as usize, sample(true).blob().len());
    }

    #[test]
    fn truncated_blob_rejected() {
        let ck = sample(false);
        let blob = ck.blob();
        assert!(Checkpoint::<f32>::from_parts(&ck.header(), &blob[..blob.len() - 4]).is_err());
        let mut longer = blob.clone();
        longer.extend_from_slice(&[0; 4]);
        assert!(Checkpoint::<f32>::from_parts(&ck.header(), &longer).is_err());
    }

    #[test]
    fn mismatched_shape_rejected() {
        let ck = sample(false);
        let mut header = ck.header();
        header.tensors[0].shape = vec![1, 1];
        assert!(Checkpoint::<f32>::from_parts(&header, &ck.blob()).is_err());
    }
}
