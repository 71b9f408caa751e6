//! End-to-end training of the fusion network.

mod loss;
mod mining;

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{
    fusion_backward_into, fusion_forward, Affine, FusionConfig, FusionDims, FusionParams, FusionWeights,
    GateVariant, ParamGrads,
};
use crate::optim::{OptimizerConfig, OptimizerState, ParamTensors};
use crate::scalar::Scalar;
use crate::store::{Dataset, EmbeddingRecord, LabelLevel, Split};
use crate::tensor::{DenseMatrix, DenseVector};

pub use loss::{cross_entropy_loss, triplet_loss, TripletBatch, TripletLoss};
pub use mining::{mine_semi_hard, mine_triplets, Mining};

/// Samples per backward work unit. Gradients are summed within a chunk and
/// then across chunks in order, so results do not depend on thread count.
const GRAD_CHUNK: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    #[default]
    Triplet,
    CrossEntropy,
}

impl FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "triplet" => Ok(Self::Triplet),
            "cross_entropy" | "cross-entropy" | "ce" => Ok(Self::CrossEntropy),
            other => Err(Error::Parameter(format!("unknown objective `{other}`"))),
        }
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Triplet => "triplet",
            Self::CrossEntropy => "cross_entropy",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub objective: Objective,
    pub margin: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub optimizer: OptimizerConfig,
    pub seed: u64,
    pub mining: Mining,
    pub label_level: LabelLevel,
    pub gate: GateVariant,
    /// Defaults to the image dimension.
    pub hidden: Option<usize>,
    pub hidden2: Option<usize>,
    pub l2_normalize_output: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            objective: Objective::Triplet,
            margin: 0.2,
            batch_size: 64,
            steps: 2000,
            optimizer: OptimizerConfig::default(),
            seed: 0,
            mining: Mining::SemiHard,
            label_level: LabelLevel::Subcategory,
            gate: GateVariant::Paper,
            hidden: None,
            hidden2: None,
            l2_normalize_output: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return Err(Error::Parameter(format!("margin must be positive, got {}", self.margin)));
        }
        let min_batch = match self.objective {
            Objective::Triplet => 3,
            Objective::CrossEntropy => 1,
        };
        if self.batch_size < min_batch {
            return Err(Error::Parameter(format!(
                "batch size must be at least {min_batch} for the {} objective",
                self.objective
            )));
        }
        if self.hidden == Some(0) || self.hidden2 == Some(0) {
            return Err(Error::Parameter("hidden widths must be at least 1".into()));
        }
        self.optimizer.validate()
    }

    pub fn fusion_config(&self, dim_image: usize, dim_text: usize) -> FusionConfig {
        let base = FusionDims::for_inputs(dim_image, dim_text);
        FusionConfig {
            dims: FusionDims {
                hidden: self.hidden.unwrap_or(base.hidden),
                hidden2: self.hidden2.unwrap_or(base.hidden2),
                ..base
            },
            gate: self.gate,
            l2_normalize_output: self.l2_normalize_output,
        }
    }
}

/// Fully connected softmax head on top of fused embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierHead<T> {
    pub layer: Affine<T>,
    pub classes: Vec<String>,
    pub level: LabelLevel,
}

impl<T: Scalar> ClassifierHead<T> {
    pub fn init(in_dim: usize, classes: Vec<String>, level: LabelLevel, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6865_6164);
        Self {
            layer: Affine::glorot(classes.len(), in_dim, &mut rng),
            classes,
            level,
        }
    }

    pub fn logits(&self, emb: &[T]) -> Result<DenseVector<T>> {
        self.layer.forward(emb)
    }

    /// Index of the largest logit, lowest index on ties.
    pub fn predict(&self, emb: &[T]) -> Result<usize> {
        let logits = self.logits(emb)?;
        let mut best = 0;
        for (i, v) in logits.iter().enumerate() {
            if *v > logits[best] {
                best = i;
            }
        }
        Ok(best)
    }
}

/// Parameters the optimizer sees: the fusion network plus an optional head.
#[derive(Debug, Clone, PartialEq)]
pub struct Trainable<T> {
    pub fusion: FusionWeights<T>,
    pub head: Option<Affine<T>>,
}

impl<T: Scalar> ParamTensors<T> for Trainable<T> {
    fn tensors(&self) -> Vec<(&'static str, &[T])> {
        let mut out = self.fusion.tensors();
        if let Some(h) = &self.head {
            out.push(("head.weight", h.weight.as_slice()));
            out.push(("head.bias", h.bias.as_slice()));
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<(&'static str, &mut [T])> {
        let mut out = self.fusion.tensors_mut();
        if let Some(h) = &mut self.head {
            out.push(("head.weight", h.weight.as_mut_slice()));
            out.push(("head.bias", h.bias.as_mut_slice()));
        }
        out
    }
}

/// Loss and parameter gradients for one batch.
#[derive(Debug, Clone)]
pub struct BatchObjective<T> {
    pub loss: f64,
    pub grads: ParamGrads<T>,
    pub head_grads: Option<Affine<T>>,
    pub n_triplets: usize,
}

fn forward_batch<T: Scalar>(
    params: &FusionParams<T>,
    batch: &[&EmbeddingRecord<T>],
) -> Result<(DenseMatrix<T>, Vec<crate::fusion::ForwardTrace<T>>)> {
    let results: Vec<_> = batch
        .par_iter()
        .map(|r| fusion_forward(params, &r.image, &r.text))
        .collect::<Result<_>>()?;
    let (outs, traces): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    Ok((DenseMatrix::stack(&outs, params.dims().image)?, traces))
}

fn backward_batch<T: Scalar>(
    params: &FusionParams<T>,
    traces: &[crate::fusion::ForwardTrace<T>],
    upstream: &DenseMatrix<T>,
) -> Result<ParamGrads<T>> {
    let partials: Vec<ParamGrads<T>> = traces
        .par_chunks(GRAD_CHUNK)
        .enumerate()
        .map(|(c, chunk)| {
            let mut g = params.zero_grads();
            for (k, trace) in chunk.iter().enumerate() {
                let row = upstream.row(c * GRAD_CHUNK + k);
                if row.iter().all(|v| *v == T::zero()) {
                    continue;
                }
                fusion_backward_into(trace, params, row, &mut g)?;
            }
            Ok(g)
        })
        .collect::<Result<_>>()?;
    let mut total = params.zero_grads();
    for p in &partials {
        total.accumulate(p);
    }
    Ok(total)
}

/// Mean triplet loss over `triplets` (indices into `batch`) and its
/// gradient with respect to the fusion parameters.
pub fn triplet_objective<T: Scalar>(
    params: &FusionParams<T>,
    batch: &[&EmbeddingRecord<T>],
    triplets: &TripletBatch,
    margin: f64,
) -> Result<BatchObjective<T>> {
    let (emb, traces) = forward_batch(params, batch)?;
    triplet_objective_from(params, &emb, &traces, triplets, margin)
}

fn triplet_objective_from<T: Scalar>(
    params: &FusionParams<T>,
    emb: &DenseMatrix<T>,
    traces: &[crate::fusion::ForwardTrace<T>],
    triplets: &TripletBatch,
    margin: f64,
) -> Result<BatchObjective<T>> {
    let out = triplet_loss(emb, triplets, margin)?;
    if out.empty {
        return Ok(BatchObjective {
            loss: 0.0,
            grads: params.zero_grads(),
            head_grads: None,
            n_triplets: 0,
        });
    }
    let scale = 1.0 / triplets.len() as f64;
    let mut grads = backward_batch(params, traces, &out.grad)?;
    grads.scale(T::narrow(scale));
    Ok(BatchObjective {
        loss: out.loss * scale,
        grads,
        head_grads: None,
        n_triplets: triplets.len(),
    })
}

/// Mean cross-entropy of `head(fusion(x))` and gradients for both parts.
pub fn cross_entropy_objective<T: Scalar>(
    params: &FusionParams<T>,
    head: &ClassifierHead<T>,
    batch: &[&EmbeddingRecord<T>],
    labels: &[usize],
) -> Result<BatchObjective<T>> {
    let (emb, traces) = forward_batch(params, batch)?;
    let logits: Vec<DenseVector<T>> = emb.iter_rows().map(|r| head.logits(r)).collect::<Result<_>>()?;
    let logits = DenseMatrix::stack(&logits, head.classes.len())?;
    let (loss, g_logits) = cross_entropy_loss(&logits, labels)?;
    let mut head_grads = Affine::zeros(head.layer.out_dim(), head.layer.in_dim());
    let mut g_emb = Vec::with_capacity(emb.rows());
    for (i, row) in emb.iter_rows().enumerate() {
        g_emb.push(head.layer.backward(row, g_logits.row(i), &mut head_grads)?);
    }
    let g_emb = DenseMatrix::stack(&g_emb, emb.cols())?;
    let grads = backward_batch(params, &traces, &g_emb)?;
    Ok(BatchObjective {
        loss,
        grads,
        head_grads: Some(head_grads),
        n_triplets: 0,
    })
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub params: FusionParams<T>,
    pub head: Option<ClassifierHead<T>>,
    /// Mean batch loss per optimizer step.
    pub losses: Vec<f64>,
    pub warnings: Vec<String>,
}

/// Cycles through seeded shuffles of the training indices.
struct BatchSampler {
    order: Vec<usize>,
    cursor: usize,
    batch: usize,
    rng: ChaCha8Rng,
}

impl BatchSampler {
    fn new(indices: Vec<usize>, batch: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6261_7463_6865_7321);
        let mut order = indices;
        order.shuffle(&mut rng);
        Self {
            batch: batch.min(order.len()),
            order,
            cursor: 0,
            rng,
        }
    }

    fn next_batch(&mut self) -> Vec<usize> {
        if self.cursor + self.batch > self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        let b = self.order[self.cursor..self.cursor + self.batch].to_vec();
        self.cursor += self.batch;
        b
    }
}

/// Trains on the dataset's train split.
pub fn train<T: Scalar>(dataset: &Dataset<T>, cfg: &TrainConfig) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    let vocab = dataset.vocab()?;
    let train_idx = dataset.indices_in(Split::Train);
    if train_idx.is_empty() {
        return Err(Error::Parameter("dataset has no training records".into()));
    }
    let labels = vocab.labels(&dataset.records, cfg.label_level)?;
    let classes = vocab.class_names(cfg.label_level).to_vec();

    let mut warnings = Vec::new();
    if cfg.objective == Objective::Triplet {
        let mut counts = vec![0usize; classes.len()];
        for &i in &train_idx {
            counts[labels[i]] += 1;
        }
        let present = counts.iter().filter(|&&c| c > 0).count();
        if present < 2 || counts.iter().all(|&c| c < 2) {
            return Err(Error::Parameter(
                "triplet training needs at least two classes and a class with two records".into(),
            ));
        }
        if cfg.batch_size > train_idx.len() {
            warnings.push(format!(
                "batch size {} exceeds {} training records; using full batches",
                cfg.batch_size,
                train_idx.len()
            ));
        }
    }

    let params = FusionParams::init(cfg.fusion_config(dataset.dim_image, dataset.dim_text), cfg.seed);
    let head = match cfg.objective {
        Objective::CrossEntropy => Some(ClassifierHead::init(
            dataset.dim_image,
            classes.clone(),
            cfg.label_level,
            cfg.seed,
        )),
        Objective::Triplet => None,
    };
    let config = params.config;
    let mut model = Trainable {
        fusion: params.weights,
        head: head.as_ref().map(|h| h.layer.clone()),
    };
    let mut optimizer = OptimizerState::new(cfg.optimizer)?;
    let mut sampler = BatchSampler::new(train_idx, cfg.batch_size, cfg.seed);
    let mut losses = Vec::with_capacity(cfg.steps);

    for step in 0..cfg.steps {
        let idx = sampler.next_batch();
        let batch: Vec<&EmbeddingRecord<T>> = idx.iter().map(|&i| &dataset.records[i]).collect();
        let batch_labels: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
        let current = FusionParams {
            config,
            weights: model.fusion.clone(),
        };
        let fail = |message: String| Error::Training {
            step,
            message,
            batch_ids: batch.iter().map(|r| r.id.clone()).collect(),
        };

        let objective = match cfg.objective {
            Objective::Triplet => {
                let (emb, traces) = forward_batch(&current, &batch).map_err(|e| fail(e.to_string()))?;
                let mining_seed = cfg.seed.wrapping_add(step as u64);
                let triplets = mine_triplets(&emb, &batch_labels, cfg.margin, cfg.mining, mining_seed)
                    .map_err(|e| fail(e.to_string()))?;
                triplet_objective_from(&current, &emb, &traces, &triplets, cfg.margin)?
            }
            Objective::CrossEntropy => {
                let h = ClassifierHead {
                    layer: model.head.clone().expect("head present for cross entropy"),
                    classes: classes.clone(),
                    level: cfg.label_level,
                };
                cross_entropy_objective(&current, &h, &batch, &batch_labels)
                    .map_err(|e| fail(e.to_string()))?
            }
        };
        if !objective.loss.is_finite() {
            return Err(fail(format!("non-finite loss {}", objective.loss)));
        }
        losses.push(objective.loss);
        let grads = Trainable {
            fusion: objective.grads,
            head: objective.head_grads,
        };
        optimizer
            .step(&mut model, &grads)
            .map_err(|e| fail(e.to_string()))?;
    }

    let params = FusionParams {
        config,
        weights: model.fusion,
    };
    let head = head.map(|h| ClassifierHead {
        layer: model.head.expect("head kept"),
        ..h
    });
    Ok(TrainOutcome {
        params,
        head,
        losses,
        warnings,
    })
}

/// Loss curve as `step,loss` CSV with a header line.
pub fn loss_csv(losses: &[f64]) -> String {
    let mut out = String::from("step,loss\n");
    for (i, l) in losses.iter().enumerate() {
        out.push_str(&format!("{i},{l}\n"));
    }
    out
}
