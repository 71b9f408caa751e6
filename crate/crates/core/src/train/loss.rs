use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{squared_distance, DenseMatrix};

/// Parallel index lists into a batch's embedding matrix.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TripletBatch {
    pub anchor: Vec<usize>,
    pub positive: Vec<usize>,
    pub negative: Vec<usize>,
}

impl TripletBatch {
    pub fn len(&self) -> usize {
        self.anchor.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchor.is_empty()
    }

    pub fn push(&mut self, a: usize, p: usize, n: usize) {
        self.anchor.push(a);
        self.positive.push(p);
        self.negative.push(n);
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        self.anchor
            .iter()
            .zip(&self.positive)
            .zip(&self.negative)
            .map(|((&a, &p), &n)| (a, p, n))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TripletLoss<T> {
    /// `Σ max(0, d²(a,p) - d²(a,n) + margin)` over all triplets.
    pub loss: f64,
    /// Gradient of `loss` with respect to every embedding row.
    pub grad: DenseMatrix<T>,
    pub active: usize,
    /// Set when there were no triplets to score.
    pub empty: bool,
}

/// Summed hinge triplet loss on squared Euclidean distances.
///
/// A triplet whose hinge argument is exactly zero is inactive.
pub fn triplet_loss<T: Scalar>(
    emb: &DenseMatrix<T>,
    triplets: &TripletBatch,
    margin: f64,
) -> Result<TripletLoss<T>> {
    let n = emb.rows();
    if triplets.positive.len() != triplets.len() || triplets.negative.len() != triplets.len() {
        return Err(Error::Parameter("triplet index lists differ in length".into()));
    }
    if let Some(bad) = triplets.iter().flat_map(|(a, p, q)| [a, p, q]).find(|&i| i >= n) {
        return Err(Error::Parameter(format!("triplet index {bad} out of range for {n} embeddings")));
    }
    let dim = emb.cols();
    let mut grad = vec![0.0f64; n * dim];
    let mut loss = 0.0;
    let mut active = 0;
    for (a, p, q) in triplets.iter() {
        let (ea, ep, en) = (emb.row(a), emb.row(p), emb.row(q));
        let hinge = squared_distance(ea, ep) - squared_distance(ea, en) + margin;
        if hinge <= 0.0 {
            continue;
        }
        loss += hinge;
        active += 1;
        for j in 0..dim {
            let (xa, xp, xn) = (ea[j].widen(), ep[j].widen(), en[j].widen());
            grad[a * dim + j] += 2.0 * (xn - xp);
            grad[p * dim + j] -= 2.0 * (xa - xp);
            grad[q * dim + j] += 2.0 * (xa - xn);
        }
    }
    let grad = DenseMatrix::from_vec(n, dim, grad.into_iter().map(T::narrow).collect())?;
    Ok(TripletLoss {
        loss,
        grad,
        active,
        empty: triplets.is_empty(),
    })
}

/// Mean softmax cross-entropy over the batch and its gradient
/// `(softmax - onehot) / batch` with respect to the logits.
pub fn cross_entropy_loss<T: Scalar>(logits: &DenseMatrix<T>, labels: &[usize]) -> Result<(f64, DenseMatrix<T>)> {
    if logits.rows() != labels.len() {
        return Err(Error::shape("cross_entropy_loss", logits.shape(), format!("{} labels", labels.len())));
    }
    let classes = logits.cols();
    if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::LabelRange { label, classes });
    }
    let batch = labels.len().max(1) as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(logits.rows() * classes);
    for (row, &label) in logits.iter_rows().zip(labels) {
        let max = row.iter().map(|v| v.widen()).fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|v| (v.widen() - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        loss += total.ln() - (row[label].widen() - max);
        for (c, e) in exps.iter().enumerate() {
            let onehot = if c == label { 1.0 } else { 0.0 };
            grad.push(T::narrow((e / total - onehot) / batch));
        }
    }
    let grad = DenseMatrix::from_vec(logits.rows(), classes, grad)?;
    Ok((loss / batch, grad))
}
