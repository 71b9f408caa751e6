//! Exact brute-force k-nearest-neighbor classification.
//!
//! Neighbors are ordered by `(distance, tie key)`, where the tie key is the
//! training row index unless explicit ids are attached. Among labels with
//! the highest vote count the one whose nearest member ranks first wins.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{dot_slices, squared_distance, DenseMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    #[default]
    Euclidean,
    /// `1 - cos(a, b)`; zero vectors are at distance 1 from everything.
    Cosine,
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euclidean" => Ok(Self::Euclidean),
            "cosine" => Ok(Self::Cosine),
            other => Err(Error::Parameter(format!("unknown metric `{other}`"))),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Euclidean => "euclidean",
            Self::Cosine => "cosine",
        })
    }
}

#[derive(Debug, Clone)]
pub struct KnnIndex<'a, T> {
    rows: &'a DenseMatrix<T>,
    labels: &'a [usize],
    ids: Option<&'a [u64]>,
    metric: Metric,
    norms: Vec<f64>,
}

impl<'a, T: Scalar> KnnIndex<'a, T> {
    pub fn new(rows: &'a DenseMatrix<T>, labels: &'a [usize], metric: Metric) -> Result<Self> {
        if rows.rows() != labels.len() {
            return Err(Error::shape("knn index", rows.shape(), format!("{} labels", labels.len())));
        }
        let norms = match metric {
            Metric::Euclidean => Vec::new(),
            Metric::Cosine => rows.iter_rows().map(|r| dot_slices(r, r).sqrt()).collect(),
        };
        Ok(Self {
            rows,
            labels,
            ids: None,
            metric,
            norms,
        })
    }

    /// Uses `ids` instead of row positions to break distance ties, so a
    /// shuffled copy of the training set classifies identically.
    pub fn with_ids(mut self, ids: &'a [u64]) -> Result<Self> {
        if ids.len() != self.labels.len() {
            return Err(Error::shape("knn ids", self.labels.len(), ids.len()));
        }
        self.ids = Some(ids);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn distance(&self, row: usize, query: &[T], query_norm: f64) -> f64 {
        let r = self.rows.row(row);
        match self.metric {
            Metric::Euclidean => squared_distance(r, query),
            Metric::Cosine => {
                let denom = self.norms[row] * query_norm;
                if denom == 0.0 {
                    1.0
                } else {
                    1.0 - dot_slices(r, query) / denom
                }
            }
        }
    }

    /// The `k` nearest training rows as `(distance, tie key, row)`, nearest first.
    pub fn neighbors(&self, query: &[T], k: usize) -> Result<Vec<(f64, u64, usize)>> {
        if k == 0 {
            return Err(Error::Parameter("k must be at least 1".into()));
        }
        if k > self.len() {
            return Err(Error::Parameter(format!(
                "k = {k} exceeds the {} training rows",
                self.len()
            )));
        }
        if query.len() != self.rows.cols() {
            return Err(Error::shape("knn query", self.rows.cols(), query.len()));
        }
        let query_norm = match self.metric {
            Metric::Cosine => dot_slices(query, query).sqrt(),
            Metric::Euclidean => 0.0,
        };
        let mut keys: Vec<(f64, u64, usize)> = (0..self.len())
            .map(|i| {
                let tie = self.ids.map_or(i as u64, |ids| ids[i]);
                (self.distance(i, query, query_norm), tie, i)
            })
            .collect();
        let cmp = |a: &(f64, u64, usize), b: &(f64, u64, usize)| -> Ordering {
            a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
        };
        if k < keys.len() {
            keys.select_nth_unstable_by(k - 1, cmp);
            keys.truncate(k);
        }
        keys.sort_unstable_by(cmp);
        Ok(keys)
    }

    pub fn classify(&self, query: &[T], k: usize) -> Result<usize> {
        let neighbors = self.neighbors(query, k)?;
        // (label, votes, rank of nearest member), in order of first appearance
        let mut tally: Vec<(usize, usize, usize)> = Vec::new();
        for (rank, &(_, _, row)) in neighbors.iter().enumerate() {
            let label = self.labels[row];
            match tally.iter_mut().find(|t| t.0 == label) {
                Some(t) => t.1 += 1,
                None => tally.push((label, 1, rank)),
            }
        }
        let best = tally
            .iter()
            .max_by(|a, b| a.1.cmp(&b.1).then(b.2.cmp(&a.2)))
            .expect("k >= 1");
        Ok(best.0)
    }
}

/// Euclidean kNN prediction for one query.
pub fn knn_classify<T: Scalar>(
    train: &DenseMatrix<T>,
    labels: &[usize],
    query: &[T],
    k: usize,
) -> Result<usize> {
    KnnIndex::new(train, labels, Metric::Euclidean)?.classify(query, k)
}
