//! Paired image/text embedding datasets with two-level labels.

mod format;
mod split;
mod synth;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::DenseVector;

pub use format::{
    encode_blob, load_dataset, manifest_for, read_manifest, write_dataset, Manifest, ManifestRecord,
    FORMAT_VERSION,
};
pub use split::{stratified_split, SplitConfig, SplitOutcome};
pub use synth::{category_name, subcategory_name, synth_generate, SynthConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

/// Which label a classifier or triplet miner works with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelLevel {
    #[default]
    Subcategory,
    Category,
}

impl FromStr for LabelLevel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "subcategory" => Ok(Self::Subcategory),
            "category" => Ok(Self::Category),
            other => Err(Error::Parameter(format!("unknown label level `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord<T> {
    pub id: String,
    pub image: DenseVector<T>,
    pub text: DenseVector<T>,
    pub category: String,
    pub subcategory: String,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    pub dim_image: usize,
    pub dim_text: usize,
    pub records: Vec<EmbeddingRecord<T>>,
}

impl<T: Scalar> Dataset<T> {
    /// Checks the record-level invariants: dims, finiteness, non-empty labels,
    /// unique ids and a single category per subcategory.
    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for r in &self.records {
            if r.image.len() != self.dim_image {
                return Err(Error::shape("record image", self.dim_image, r.image.len()));
            }
            if r.text.len() != self.dim_text {
                return Err(Error::shape("record text", self.dim_text, r.text.len()));
            }
            if let Some(index) = r.image.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFiniteRecord {
                    id: r.id.clone(),
                    modality: "image",
                    index,
                });
            }
            if let Some(index) = r.text.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFiniteRecord {
                    id: r.id.clone(),
                    modality: "text",
                    index,
                });
            }
            if r.category.is_empty() || r.subcategory.is_empty() {
                return Err(Error::ManifestField {
                    field: format!("record `{}` labels", r.id),
                    message: "category and subcategory must be non-empty".into(),
                });
            }
            if !seen.insert(r.id.as_str()) {
                return Err(Error::ManifestField {
                    field: "id".into(),
                    message: format!("duplicate record id `{}`", r.id),
                });
            }
        }
        LabelVocab::from_records(&self.records)?;
        Ok(())
    }

    pub fn vocab(&self) -> Result<LabelVocab> {
        LabelVocab::from_records(&self.records)
    }

    pub fn indices_in(&self, split: Split) -> Vec<usize> {
        self.records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.split == split)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Sorted label vocabularies and the subcategory to category map.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVocab {
    pub categories: Vec<String>,
    pub subcategories: Vec<String>,
    /// `category_of[s]` is the category index of subcategory `s`.
    pub category_of: Vec<usize>,
}

impl LabelVocab {
    pub fn from_records<T>(records: &[EmbeddingRecord<T>]) -> Result<Self> {
        let mut owner: BTreeMap<&str, &str> = BTreeMap::new();
        for r in records {
            match owner.insert(&r.subcategory, &r.category) {
                Some(prev) if prev != r.category => {
                    return Err(Error::ManifestField {
                        field: "subcategory".into(),
                        message: format!(
                            "subcategory `{}` appears under categories `{prev}` and `{}`",
                            r.subcategory, r.category
                        ),
                    })
                }
                _ => {}
            }
        }
        let mut categories: Vec<String> = owner.values().map(|c| c.to_string()).collect();
        categories.sort();
        categories.dedup();
        let subcategories: Vec<String> = owner.keys().map(|s| s.to_string()).collect();
        let category_of = owner
            .values()
            .map(|c| categories.binary_search_by(|x| x.as_str().cmp(c)).unwrap_or(0))
            .collect();
        Ok(Self {
            categories,
            subcategories,
            category_of,
        })
    }

    pub fn subcategory_index(&self, name: &str) -> Option<usize> {
        self.subcategories.binary_search_by(|s| s.as_str().cmp(name)).ok()
    }

    pub fn category_index(&self, name: &str) -> Option<usize> {
        self.categories.binary_search_by(|s| s.as_str().cmp(name)).ok()
    }

    pub fn class_names(&self, level: LabelLevel) -> &[String] {
        match level {
            LabelLevel::Subcategory => &self.subcategories,
            LabelLevel::Category => &self.categories,
        }
    }

    /// Label indices for `records` at the requested level. Records whose
    /// labels are not in the vocabulary produce an error.
    pub fn labels<T>(&self, records: &[EmbeddingRecord<T>], level: LabelLevel) -> Result<Vec<usize>> {
        records
            .iter()
            .map(|r| {
                let found = match level {
                    LabelLevel::Subcategory => self.subcategory_index(&r.subcategory),
                    LabelLevel::Category => self.category_index(&r.category),
                };
                found.ok_or_else(|| {
                    Error::Parameter(format!("record `{}` has a label outside the vocabulary", r.id))
                })
            })
            .collect()
    }
}

/// Scales each modality to unit L2 norm and concatenates them.
pub fn normalize_concat<T: Scalar>(image: &[T], text: &[T]) -> Result<DenseVector<T>> {
    let mut out = Vec::with_capacity(image.len() + text.len());
    for (values, modality) in [(image, "image"), (text, "text")] {
        let norm = crate::tensor::dot_slices(values, values).sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::Normalization { modality });
        }
        out.extend(values.iter().map(|&v| T::narrow(v.widen() / norm)));
    }
    Ok(DenseVector::from_vec_unchecked(out))
}

/// Unit-normalizes a vector; zero vectors are returned unchanged.
pub(crate) fn unit<T: Scalar>(values: &[T]) -> Vec<T> {
    let norm = crate::tensor::dot_slices(values, values).sqrt();
    if norm == 0.0 {
        return values.to_vec();
    }
    values.iter().map(|&v| T::narrow(v.widen() / norm)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_concat_three_four_five() {
        let out = normalize_concat(&[3.0f64, 4.0], &[0.0, 5.0]).unwrap();
        let expected = [0.6, 0.8, 0.0, 1.0];
        for (a, b) in out.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn normalize_concat_keeps_unit_halves() {
        let img = [0.6f32, 0.8];
        let txt = [1.0f32, 0.0, 0.0];
        let out = normalize_concat(&img, &txt).unwrap();
        assert_eq!(&out[..2], &img);
        assert_eq!(&out[2..], &txt);
    }

    #[test]
    fn normalize_concat_rejects_zero_modality() {
        let err = normalize_concat(&[0.0f32, 0.0], &[1.0, 0.0]).unwrap_err();
        assert!(matches!(err, Error::Normalization { modality: "image" }));
        let err = normalize_concat(&[1.0f32], &[0.0]).unwrap_err();
        assert!(matches!(err, Error::Normalization { modality: "text" }));
    }

    #[test]
    fn vocab_rejects_subcategory_in_two_categories() {
        let rec = |cat: &str, sub: &str| EmbeddingRecord::<f32> {
            id: format!("{cat}-{sub}"),
            image: DenseVector::zeros(1),
            text: DenseVector::zeros(1),
            category: cat.into(),
            subcategory: sub.into(),
            split: Split::Train,
        };
        assert!(LabelVocab::from_records(&[rec("a", "x"), rec("b", "x")]).is_err());
        let v = LabelVocab::from_records(&[rec("b", "y"), rec("a", "x"), rec("b", "z")]).unwrap();
        assert_eq!(v.categories, ["a", "b"]);
        assert_eq!(v.subcategories, ["x", "y", "z"]);
        assert_eq!(v.category_of, [0, 1, 1]);
    }
}
