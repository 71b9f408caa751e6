//! Synthetic stand-in for a real image/text card corpus.
//!
//! Subcategories inside a category are grouped in runs of `ceil(S / 2)`.
//! Every subcategory in a group shares one image centroid, so images alone
//! cannot tell group members apart. Text centroids are built from a
//! per-category "position" direction (shared by the subcategories holding the
//! same slot in different groups) plus a weaker subcategory-specific
//! direction, so text alone confuses subcategories across groups. Only the
//! (image, text) pair identifies the subcategory reliably.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{unit, Dataset, EmbeddingRecord, Split};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::DenseVector;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_per_subcat: usize,
    pub n_categories: usize,
    pub n_subcats_per_cat: usize,
    /// Dimension of both the image and the text vectors.
    pub dim: usize,
    /// Per-coordinate standard deviation of the additive Gaussian noise.
    pub noise: f64,
    /// Weight of the subcategory-specific text direction relative to the
    /// shared slot direction.
    pub text_specificity: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_per_subcat: 50,
            n_categories: 3,
            n_subcats_per_cat: 4,
            dim: 64,
            noise: 0.2,
            text_specificity: 0.25,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("per-subcat", self.n_per_subcat),
            ("categories", self.n_categories),
            ("subcats", self.n_subcats_per_cat),
            ("dim", self.dim),
        ] {
            if v == 0 {
                return Err(Error::Parameter(format!("{name} must be at least 1")));
            }
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::Parameter(format!("noise must be finite and >= 0, got {}", self.noise)));
        }
        if !(self.text_specificity >= 0.0 && self.text_specificity.is_finite()) {
            return Err(Error::Parameter("text specificity must be finite and >= 0".into()));
        }
        Ok(())
    }

    /// Number of subcategories sharing one image centroid.
    pub fn group_size(&self) -> usize {
        self.n_subcats_per_cat.div_ceil(2)
    }
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn unit_sphere(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v = gaussian(rng, dim);
        if v.iter().any(|x| *x != 0.0) {
            return unit(&v);
        }
    }
}

fn noisy<T: Scalar>(rng: &mut ChaCha8Rng, centroid: &[f64], sigma: f64) -> DenseVector<T> {
    let v: Vec<f64> = if sigma == 0.0 {
        centroid.to_vec()
    } else {
        centroid
            .iter()
            .map(|c| c + sigma * rng.sample::<f64, _>(StandardNormal))
            .collect()
    };
    DenseVector::from_vec_unchecked(unit(&v).into_iter().map(T::narrow).collect())
}

pub fn category_name(c: usize) -> String {
    format!("category-{c}")
}

pub fn subcategory_name(c: usize, s: usize) -> String {
    format!("category-{c}/sub-{s}")
}

/// Generates `n_categories * n_subcats_per_cat * n_per_subcat` records, all
/// assigned to the train split.
pub fn synth_generate<T: Scalar>(cfg: &SynthConfig) -> Result<Dataset<T>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let group = cfg.group_size();
    let n_groups = cfg.n_subcats_per_cat.div_ceil(group);

    // Centroids first, so record noise never shifts them.
    let mut image_centroids = Vec::new();
    let mut text_centroids = Vec::new();
    for _ in 0..cfg.n_categories {
        let groups: Vec<Vec<f64>> = (0..n_groups).map(|_| unit_sphere(&mut rng, cfg.dim)).collect();
        let slots: Vec<Vec<f64>> = (0..group).map(|_| unit_sphere(&mut rng, cfg.dim)).collect();
        let mut img = Vec::new();
        let mut txt = Vec::new();
        for s in 0..cfg.n_subcats_per_cat {
            img.push(groups[s / group].clone());
            let own = unit_sphere(&mut rng, cfg.dim);
            let mixed: Vec<f64> = slots[s % group]
                .iter()
                .zip(&own)
                .map(|(a, b)| a + cfg.text_specificity * b)
                .collect();
            txt.push(unit(&mixed));
        }
        image_centroids.push(img);
        text_centroids.push(txt);
    }

    let mut records = Vec::with_capacity(cfg.n_categories * cfg.n_subcats_per_cat * cfg.n_per_subcat);
    for c in 0..cfg.n_categories {
        for s in 0..cfg.n_subcats_per_cat {
            for _ in 0..cfg.n_per_subcat {
                let image = noisy(&mut rng, &image_centroids[c][s], cfg.noise);
                let text = noisy(&mut rng, &text_centroids[c][s], cfg.noise);
                records.push(EmbeddingRecord {
                    id: format!("card-{:06}", records.len()),
                    image,
                    text,
                    category: category_name(c),
                    subcategory: subcategory_name(c, s),
                    split: Split::Train,
                });
            }
        }
    }
    Ok(Dataset {
        dim_image: cfg.dim,
        dim_text: cfg.dim,
        records,
    })
}
