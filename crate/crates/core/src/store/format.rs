//! JSON manifest + little-endian `.f32` blob interchange format.
//!
//! The manifest lists records in blob order. Record `i` occupies bytes
//! `[offset_i, offset_i + 4 * (dim_image + dim_text))` of the blob: the image
//! vector first, then the text vector.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dataset, EmbeddingRecord, Split};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::DenseVector;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub dim_image: usize,
    pub dim_text: usize,
    pub records: Vec<ManifestRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub id: String,
    pub category: String,
    pub subcategory: String,
    pub split: Split,
    pub offset: u64,
}

impl Manifest {
    pub fn record_bytes(&self) -> u64 {
        4 * (self.dim_image + self.dim_text) as u64
    }

    /// Structural checks that need only the blob length.
    pub fn validate(&self, blob_len: u64) -> Result<()> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::ManifestField {
                field: "format_version".into(),
                message: format!("expected {FORMAT_VERSION}, found {}", self.format_version),
            });
        }
        if self.dim_image == 0 || self.dim_text == 0 {
            return Err(Error::ManifestField {
                field: "dim_image/dim_text".into(),
                message: "dimensions must be at least 1".into(),
            });
        }
        let rb = self.record_bytes();
        let expected = rb * self.records.len() as u64;
        if blob_len != expected {
            return Err(Error::BlobSize {
                expected,
                actual: blob_len,
            });
        }
        let mut next_free = 0u64;
        for (i, r) in self.records.iter().enumerate() {
            let field = |msg: String| Error::ManifestField {
                field: format!("records[{i}].offset"),
                message: msg,
            };
            if r.id.is_empty() {
                return Err(Error::ManifestField {
                    field: format!("records[{i}].id"),
                    message: "empty id".into(),
                });
            }
            if r.category.is_empty() || r.subcategory.is_empty() {
                return Err(Error::ManifestField {
                    field: format!("records[{i}].category/subcategory"),
                    message: format!("record `{}` has an empty label", r.id),
                });
            }
            if i > 0 && r.offset <= self.records[i - 1].offset {
                return Err(field(format!(
                    "offsets must be strictly increasing ({} after {})",
                    r.offset,
                    self.records[i - 1].offset
                )));
            }
            if r.offset < next_free {
                return Err(field(format!("record `{}` overlaps its predecessor", r.id)));
            }
            if r.offset + rb > blob_len {
                return Err(field(format!(
                    "record `{}` ends at byte {} past blob end {blob_len}",
                    r.id,
                    r.offset + rb
                )));
            }
            next_free = r.offset + rb;
        }
        Ok(())
    }
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::ManifestParse {
        path: path.to_path_buf(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

fn decode_f32s<T: Scalar>(bytes: &[u8]) -> Vec<T> {
    bytes
        .chunks_exact(4)
        .map(|c| T::from_f32_bits(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
        .collect()
}

/// Loads and validates a dataset. Vectors are materialized in `T`; any
/// non-finite value fails the load with the offending record id and index.
pub fn load_dataset<T: Scalar>(manifest_path: &Path, blob_path: &Path) -> Result<Dataset<T>> {
    let manifest = read_manifest(manifest_path)?;
    let blob = fs::read(blob_path).map_err(|e| Error::io(blob_path, e))?;
    manifest.validate(blob.len() as u64)?;

    let img_bytes = 4 * manifest.dim_image;
    let rb = manifest.record_bytes() as usize;
    let mut records = Vec::with_capacity(manifest.records.len());
    for r in &manifest.records {
        let start = r.offset as usize;
        let raw = &blob[start..start + rb];
        let image: Vec<T> = decode_f32s(&raw[..img_bytes]);
        let text: Vec<T> = decode_f32s(&raw[img_bytes..]);
        for (values, modality) in [(&image, "image"), (&text, "text")] {
            if let Some(index) = values.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFiniteRecord {
                    id: r.id.clone(),
                    modality,
                    index,
                });
            }
        }
        records.push(EmbeddingRecord {
            id: r.id.clone(),
            image: DenseVector::from_vec_unchecked(image),
            text: DenseVector::from_vec_unchecked(text),
            category: r.category.clone(),
            subcategory: r.subcategory.clone(),
            split: r.split,
        });
    }
    let dataset = Dataset {
        dim_image: manifest.dim_image,
        dim_text: manifest.dim_text,
        records,
    };
    dataset.validate()?;
    Ok(dataset)
}

/// Builds the manifest for `dataset` with records packed contiguously.
pub fn manifest_for<T: Scalar>(dataset: &Dataset<T>) -> Manifest {
    let rb = 4 * (dataset.dim_image + dataset.dim_text) as u64;
    Manifest {
        format_version: FORMAT_VERSION,
        dim_image: dataset.dim_image,
        dim_text: dataset.dim_text,
        records: dataset
            .records
            .iter()
            .enumerate()
            .map(|(i, r)| ManifestRecord {
                id: r.id.clone(),
                category: r.category.clone(),
                subcategory: r.subcategory.clone(),
                split: r.split,
                offset: i as u64 * rb,
            })
            .collect(),
    }
}

pub fn encode_blob<T: Scalar>(dataset: &Dataset<T>) -> Vec<u8> {
    let mut blob =
        Vec::with_capacity(dataset.records.len() * 4 * (dataset.dim_image + dataset.dim_text));
    for r in &dataset.records {
        for v in r.image.iter().chain(r.text.iter()) {
            blob.extend_from_slice(&v.to_f32_bits().to_le_bytes());
        }
    }
    blob
}

pub fn write_dataset<T: Scalar>(dataset: &Dataset<T>, manifest_path: &Path, blob_path: &Path) -> Result<()> {
    dataset.validate()?;
    let mut json = serde_json::to_vec_pretty(&manifest_for(dataset))?;
    json.push(b'\n');
    fs::write(manifest_path, json).map_err(|e| Error::io(manifest_path, e))?;
    fs::write(blob_path, encode_blob(dataset)).map_err(|e| Error::io(blob_path, e))?;
    Ok(())
}
