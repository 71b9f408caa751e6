//! In-batch negative mining.
//!
//! Every ordered same-class pair `(a, p)` with `a != p` becomes one triplet.
//! For the semi-hard rule the negative is chosen as follows, with `d` the
//! squared Euclidean distance and ties broken by the lowest batch index:
//!
//! 1. the closest negative with `d(a,p) < d(a,n) < d(a,p) + margin`;
//! 2. otherwise the closest negative with `d(a,n) > d(a,p)`;
//! 3. otherwise the farthest negative.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::TripletBatch;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{squared_distance, DenseMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mining {
    #[default]
    SemiHard,
    /// Closest negative.
    Hard,
    /// Uniformly random negative drawn from the seed.
    Random,
}

impl FromStr for Mining {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "semi_hard" | "semi-hard" => Ok(Self::SemiHard),
            "hard" => Ok(Self::Hard),
            "random" => Ok(Self::Random),
            other => Err(Error::Parameter(format!("unknown mining strategy `{other}`"))),
        }
    }
}

impl fmt::Display for Mining {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::SemiHard => "semi_hard",
            Self::Hard => "hard",
            Self::Random => "random",
        })
    }
}

fn pairwise<T: Scalar>(emb: &DenseMatrix<T>) -> Vec<f64> {
    let n = emb.rows();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let v = squared_distance(emb.row(i), emb.row(j));
            d[i * n + j] = v;
            d[j * n + i] = v;
        }
    }
    d
}

/// Picks the negative for one anchor/positive pair under the semi-hard rule.
fn semi_hard_choice(d_ap: f64, negatives: &[(usize, f64)], margin: f64) -> usize {
    let closest_where = |pred: &dyn Fn(f64) -> bool| {
        negatives
            .iter()
            .filter(|(_, d)| pred(*d))
            .min_by(|x, y| x.1.total_cmp(&y.1).then(x.0.cmp(&y.0)))
            .map(|(i, _)| *i)
    };
    closest_where(&|d| d > d_ap && d < d_ap + margin)
        .or_else(|| closest_where(&|d| d > d_ap))
        .unwrap_or_else(|| {
            negatives
                .iter()
                .max_by(|x, y| x.1.total_cmp(&y.1).then(y.0.cmp(&x.0)))
                .map(|(i, _)| *i)
                .expect("non-empty negatives")
        })
}

pub fn mine_triplets<T: Scalar>(
    emb: &DenseMatrix<T>,
    labels: &[usize],
    margin: f64,
    strategy: Mining,
    seed: u64,
) -> Result<TripletBatch> {
    let n = emb.rows();
    if labels.len() != n {
        return Err(Error::shape("mine_triplets", emb.shape(), format!("{} labels", labels.len())));
    }
    let dist = pairwise(emb);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = TripletBatch::default();
    let mut negatives = Vec::with_capacity(n);
    for a in 0..n {
        let has_positive = (0..n).any(|p| p != a && labels[p] == labels[a]);
        if !has_positive {
            continue;
        }
        negatives.clear();
        negatives.extend(
            (0..n)
                .filter(|&j| labels[j] != labels[a])
                .map(|j| (j, dist[a * n + j])),
        );
        if negatives.is_empty() {
            return Err(Error::NoNegative { class: labels[a] });
        }
        for p in 0..n {
            if p == a || labels[p] != labels[a] {
                continue;
            }
            let d_ap = dist[a * n + p];
            let neg = match strategy {
                Mining::SemiHard => semi_hard_choice(d_ap, &negatives, margin),
                Mining::Hard => {
                    negatives
                        .iter()
                        .min_by(|x, y| x.1.total_cmp(&y.1).then(x.0.cmp(&y.0)))
                        .expect("non-empty negatives")
                        .0
                }
                Mining::Random => negatives[rng.random_range(0..negatives.len())].0,
            };
            out.push(a, p, neg);
        }
    }
    Ok(out)
}

/// Semi-hard mining; `seed` is accepted for interface symmetry with the
/// other strategies but the rule itself is deterministic.
pub fn mine_semi_hard<T: Scalar>(
    emb: &DenseMatrix<T>,
    labels: &[usize],
    margin: f64,
    seed: u64,
) -> Result<TripletBatch> {
    mine_triplets(emb, labels, margin, Mining::SemiHard, seed)
}
