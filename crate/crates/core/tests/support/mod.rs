//! Harnesses shared by the integration tests and the acceptance target.
#![allow(dead_code)]

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use rtext_core::fusion::{FusionConfig, FusionDims, FusionParams, FusionWeights, GateVariant};
use rtext_core::knn::{KnnIndex, Metric};
use rtext_core::optim::ParamTensors;
use rtext_core::store::{EmbeddingRecord, LabelLevel, Split};
use rtext_core::tensor::{DenseMatrix, DenseVector};
use rtext_core::train::{
    cross_entropy_objective, mine_semi_hard, triplet_objective, ClassifierHead, TripletBatch,
};
use rtext_oracle::{self as oracle, NaiveFusion};

pub const FD_STEP: f64 = 1e-5;
/// Gradients smaller than this are compared absolutely.
pub const REL_FLOOR: f64 = 1e-6;

fn rows(m: &DenseMatrix<f64>) -> Vec<Vec<f64>> {
    m.iter_rows().map(|r| r.to_vec()).collect()
}

pub fn naive_from(params: &FusionParams<f64>) -> NaiveFusion {
    let w = &params.weights;
    NaiveFusion {
        lin_w: rows(&w.lin.weight),
        lin_b: w.lin.bias.to_vec(),
        im1_w: rows(&w.im1.weight),
        im1_b: w.im1.bias.to_vec(),
        t1_w: rows(&w.t1.weight),
        t1_b: w.t1.bias.to_vec(),
        t2_w: rows(&w.t2.weight),
        t2_b: w.t2.bias.to_vec(),
        w_r: w.w_r,
        w_d: w.w_d,
        tirg: params.config.gate == GateVariant::Tirg,
        l2: params.config.l2_normalize_output,
    }
}

/// Glorot weights plus small random biases and a non-trivial residual
/// weight, so every tensor carries gradient.
pub fn random_params(dims: FusionDims, gate: GateVariant, l2: bool, seed: u64) -> FusionParams<f64> {
    let config = FusionConfig {
        dims,
        gate,
        l2_normalize_output: l2,
    };
    let mut p = FusionParams::init(config, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xb1a5);
    for (name, t) in p.weights.tensors_mut() {
        if name.ends_with(".bias") {
            t.iter_mut().for_each(|v| *v = rng.random_range(-0.1..0.1));
        }
    }
    p.weights.w_r = rng.random_range(0.5..1.5);
    p.weights.w_d = rng.random_range(0.3..1.0);
    p
}

pub fn uniform(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// `n` records spread round-robin over `classes` subcategories.
pub fn random_batch(seed: u64, n: usize, dim_image: usize, dim_text: usize, classes: usize) -> Vec<EmbeddingRecord<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| EmbeddingRecord {
            id: format!("r{i}"),
            image: DenseVector::from_vec(uniform(&mut rng, dim_image)).unwrap(),
            text: DenseVector::from_vec(uniform(&mut rng, dim_text)).unwrap(),
            category: "c".into(),
            subcategory: format!("c/{}", i % classes),
            split: Split::Train,
        })
        .collect()
}

fn set_param(params: &FusionParams<f64>, tensor: usize, index: usize, value: f64) -> FusionParams<f64> {
    let mut p = params.clone();
    p.weights.tensors_mut()[tensor].1[index] = value;
    p
}

/// Largest relative error between `analytic` and central differences of
/// `loss` over every scalar of every fusion tensor, with the tensor name.
pub fn fd_fusion_params(
    params: &FusionParams<f64>,
    analytic: &FusionWeights<f64>,
    loss: impl Fn(&FusionParams<f64>) -> f64,
) -> (f64, String) {
    let mut worst = (0.0, String::new());
    let grads = analytic.tensors();
    for (t, (name, values)) in params.weights.tensors().iter().enumerate() {
        for (i, &v) in values.iter().enumerate() {
            let fd = oracle::central_difference(|x| loss(&set_param(params, t, i, x)), v, FD_STEP);
            let err = oracle::relative_error(grads[t].1[i], fd, REL_FLOOR);
            if err > worst.0 {
                worst = (err, format!("{name}[{i}]"));
            }
        }
    }
    worst
}

#[derive(Debug, Clone)]
pub struct GradientCase {
    pub triplet_worst: (f64, String),
    pub cross_entropy_worst: (f64, String),
    pub head_worst: (f64, String),
    pub n_triplets: usize,
}

impl GradientCase {
    pub fn max_error(&self) -> f64 {
        self.triplet_worst.0.max(self.cross_entropy_worst.0).max(self.head_worst.0)
    }
}

/// End-to-end gradients of both training objectives at one seed, with the
/// mined triplets held fixed while differencing.
pub fn gradient_case(seed: u64, dim: usize, batch: usize, gate: GateVariant, l2: bool) -> GradientCase {
    let dims = FusionDims {
        image: dim,
        text: dim,
        hidden: dim,
        hidden2: dim,
    };
    let params = random_params(dims, gate, l2, seed);
    let classes = 3;
    let records = random_batch(seed.wrapping_add(1000), batch, dim, dim, classes);
    let refs: Vec<&EmbeddingRecord<f64>> = records.iter().collect();
    let labels: Vec<usize> = (0..batch).map(|i| i % classes).collect();
    let margin = 0.2;

    let emb: Vec<DenseVector<f64>> = refs
        .iter()
        .map(|r| rtext_core::fusion::fusion_forward(&params, &r.image, &r.text).unwrap().0)
        .collect();
    let emb = DenseMatrix::stack(&emb, dim).unwrap();
    let triplets: TripletBatch = mine_semi_hard(&emb, &labels, margin, seed).unwrap();
    let obj = triplet_objective(&params, &refs, &triplets, margin).unwrap();
    let triplet_worst = fd_fusion_params(&params, &obj.grads, |p| {
        triplet_objective(p, &refs, &triplets, margin).unwrap().loss
    });

    let names = (0..classes).map(|c| format!("c/{c}")).collect();
    let head = ClassifierHead::init(dim, names, LabelLevel::Subcategory, seed);
    let obj = cross_entropy_objective(&params, &head, &refs, &labels).unwrap();
    let cross_entropy_worst = fd_fusion_params(&params, &obj.grads, |p| {
        cross_entropy_objective(p, &head, &refs, &labels).unwrap().loss
    });
    let head_grads = obj.head_grads.expect("head gradients");
    let mut head_worst = (0.0, String::new());
    for (part, len) in [("head.weight", head.layer.weight.as_slice().len()), ("head.bias", head.layer.bias.len())] {
        for i in 0..len {
            let value_of = |h: &ClassifierHead<f64>| match part {
                "head.weight" => h.layer.weight.as_slice()[i],
                _ => h.layer.bias[i],
            };
            let analytic = match part {
                "head.weight" => head_grads.weight.as_slice()[i],
                _ => head_grads.bias[i],
            };
            let fd = oracle::central_difference(
                |x| {
                    let mut h = head.clone();
                    match part {
                        "head.weight" => h.layer.weight.as_mut_slice()[i] = x,
                        _ => h.layer.bias.as_mut_slice()[i] = x,
                    }
                    cross_entropy_objective(&params, &h, &refs, &labels).unwrap().loss
                },
                value_of(&head),
                FD_STEP,
            );
            let err = oracle::relative_error(analytic, fd, REL_FLOOR);
            if err > head_worst.0 {
                head_worst = (err, format!("{part}[{i}]"));
            }
        }
    }
    GradientCase {
        triplet_worst,
        cross_entropy_worst,
        head_worst,
        n_triplets: triplets.len(),
    }
}

/// Number of queries whose kNN label differs from the exhaustive oracle.
pub fn knn_mismatches(seed: u64, n_train: usize, n_query: usize, k: usize, grid: bool, metric: Metric) -> usize {
    let dim = if grid { 3 } else { 6 };
    let (train, queries) = if grid {
        (
            oracle::grid_rows(seed, n_train, dim, 4),
            oracle::grid_rows(seed + 1, n_query, dim, 4),
        )
    } else {
        (
            oracle::uniform_rows(seed, n_train, dim),
            oracle::uniform_rows(seed + 1, n_query, dim),
        )
    };
    let labels = oracle::random_labels(seed + 2, n_train, 7);
    let matrix = DenseMatrix::from_rows(&train).unwrap();
    let index = KnnIndex::new(&matrix, &labels, metric).unwrap();
    let ties: Vec<u64> = (0..n_train as u64).collect();
    queries
        .iter()
        .filter(|q| {
            let got = index.classify(q, k).unwrap();
            got != oracle::knn_exhaustive(&train, &labels, &ties, q, k, metric == Metric::Cosine)
        })
        .count()
}

/// Mines one random batch and compares with the exhaustive miner. Returns
/// the batch size and whether the triplets match exactly.
pub fn miner_case(seed: u64) -> (usize, bool) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(3..=32);
    let classes = rng.random_range(2..=5).min(n);
    let dim = 4;
    let emb = if seed % 2 == 0 {
        oracle::grid_rows(seed, n, dim, 3)
    } else {
        oracle::uniform_rows(seed, n, dim)
    };
    // round-robin start guarantees at least two classes
    let mut labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
    for l in labels.iter_mut().skip(classes) {
        *l = rng.random_range(0..classes);
    }
    let margin = [0.2, 0.5, 1.0][rng.random_range(0..3)];
    let matrix = DenseMatrix::from_rows(&emb).unwrap();
    let got: Vec<_> = mine_semi_hard(&matrix, &labels, margin, seed).unwrap().iter().collect();
    (n, got == oracle::semi_hard_exhaustive(&emb, &labels, margin))
}
