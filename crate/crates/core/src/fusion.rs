//! Text-modified image composition network.
//!
//! ```text
//! x      = [image, text]
//! h      = ReLU(W_lin x)                      shared by both branches
//! f      = W_im1 h
//! f_ref  = sigmoid(f ⊙ image)                 (GateVariant::Paper)
//!        = sigmoid(f) ⊙ image                 (GateVariant::Tirg)
//! f_res  = W_t2 ReLU(W_t1 h)
//! out    = w_r f_ref + w_d f_res
//! ```
//!
//! `W_lin` is a single tensor; its gradient is the sum of the contributions
//! from the reference branch and the residual branch.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::ParamTensors;
use crate::scalar::{lit, Scalar};
use crate::store::{normalize_concat, EmbeddingRecord};
use crate::tensor::{
    dot_slices, hadamard, linear_backward, linear_forward, relu, relu_backward, sigmoid, DenseMatrix,
    DenseVector,
};

/// Order of the gate nonlinearity and the elementwise product.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GateVariant {
    /// `sigmoid(f ⊙ image)`
    #[default]
    Paper,
    /// `sigmoid(f) ⊙ image`
    Tirg,
}

impl FromStr for GateVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Self::Paper),
            "tirg" => Ok(Self::Tirg),
            other => Err(Error::Parameter(format!("unknown gate variant `{other}`"))),
        }
    }
}

impl fmt::Display for GateVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Paper => "paper",
            Self::Tirg => "tirg",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FusionDims {
    pub image: usize,
    pub text: usize,
    pub hidden: usize,
    pub hidden2: usize,
}

impl FusionDims {
    /// Hidden widths follow the image width (512 to 512).
    pub fn for_inputs(image: usize, text: usize) -> Self {
        Self {
            image,
            text,
            hidden: image,
            hidden2: image,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FusionConfig {
    pub dims: FusionDims,
    pub gate: GateVariant,
    pub l2_normalize_output: bool,
}

impl FusionConfig {
    pub fn new(dims: FusionDims) -> Self {
        Self {
            dims,
            gate: GateVariant::Paper,
            l2_normalize_output: false,
        }
    }
}

/// Weight matrix and bias of one affine layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Affine<T> {
    pub weight: DenseMatrix<T>,
    pub bias: DenseVector<T>,
}

impl<T: Scalar> Affine<T> {
    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Self {
            weight: DenseMatrix::zeros(out_dim, in_dim),
            bias: DenseVector::zeros(out_dim),
        }
    }

    /// Glorot-uniform weights, zero bias.
    pub fn glorot(out_dim: usize, in_dim: usize, rng: &mut impl Rng) -> Self {
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let data = (0..out_dim * in_dim)
            .map(|_| T::narrow(rng.random_range(-limit..limit)))
            .collect();
        Self {
            weight: DenseMatrix::from_vec(out_dim, in_dim, data).expect("finite glorot weights"),
            bias: DenseVector::zeros(out_dim),
        }
    }

    pub fn forward(&self, x: &[T]) -> Result<DenseVector<T>> {
        linear_forward(&self.weight, &self.bias, x)
    }

    /// Accumulates this layer's gradients into `grads`, returns `dL/dx`.
    pub fn backward(&self, x: &[T], grad_out: &[T], grads: &mut Affine<T>) -> Result<DenseVector<T>> {
        linear_backward(&self.weight, x, grad_out, &mut grads.weight, &mut grads.bias)
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }
}

/// Every learnable tensor of the network. Also used, zero-initialized, as
/// the gradient buffer ([`ParamGrads`]).
#[derive(Debug, Clone, PartialEq)]
pub struct FusionWeights<T> {
    pub lin: Affine<T>,
    pub im1: Affine<T>,
    pub t1: Affine<T>,
    pub t2: Affine<T>,
    pub w_r: T,
    pub w_d: T,
}

pub type ParamGrads<T> = FusionWeights<T>;

impl<T: Scalar> FusionWeights<T> {
    pub fn zeros(dims: &FusionDims) -> Self {
        Self {
            lin: Affine::zeros(dims.hidden, dims.image + dims.text),
            im1: Affine::zeros(dims.image, dims.hidden),
            t1: Affine::zeros(dims.hidden2, dims.hidden),
            t2: Affine::zeros(dims.image, dims.hidden2),
            w_r: T::zero(),
            w_d: T::zero(),
        }
    }

    pub fn dims(&self) -> FusionDims {
        FusionDims {
            image: self.im1.out_dim(),
            text: self.lin.in_dim() - self.im1.out_dim(),
            hidden: self.lin.out_dim(),
            hidden2: self.t1.out_dim(),
        }
    }

    /// Adds `other` into `self` entry by entry.
    pub fn accumulate(&mut self, other: &Self) {
        for ((_, dst), (_, src)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = *d + s;
            }
        }
    }

    pub fn scale(&mut self, factor: T) {
        for (_, t) in self.tensors_mut() {
            for v in t.iter_mut() {
                *v = *v * factor;
            }
        }
    }

    pub fn fill_zero(&mut self) {
        for (_, t) in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v = T::zero());
        }
    }
}

impl<T> ParamTensors<T> for FusionWeights<T>
where
    T: Scalar,
{
    fn tensors(&self) -> Vec<(&'static str, &[T])> {
        vec![
            ("lin.weight", self.lin.weight.as_slice()),
            ("lin.bias", self.lin.bias.as_slice()),
            ("im1.weight", self.im1.weight.as_slice()),
            ("im1.bias", self.im1.bias.as_slice()),
            ("t1.weight", self.t1.weight.as_slice()),
            ("t1.bias", self.t1.bias.as_slice()),
            ("t2.weight", self.t2.weight.as_slice()),
            ("t2.bias", self.t2.bias.as_slice()),
            ("w_r", std::slice::from_ref(&self.w_r)),
            ("w_d", std::slice::from_ref(&self.w_d)),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<(&'static str, &mut [T])> {
        vec![
            ("lin.weight", self.lin.weight.as_mut_slice()),
            ("lin.bias", self.lin.bias.as_mut_slice()),
            ("im1.weight", self.im1.weight.as_mut_slice()),
            ("im1.bias", self.im1.bias.as_mut_slice()),
            ("t1.weight", self.t1.weight.as_mut_slice()),
            ("t1.bias", self.t1.bias.as_mut_slice()),
            ("t2.weight", self.t2.weight.as_mut_slice()),
            ("t2.bias", self.t2.bias.as_mut_slice()),
            ("w_r", std::slice::from_mut(&mut self.w_r)),
            ("w_d", std::slice::from_mut(&mut self.w_d)),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionParams<T> {
    pub config: FusionConfig,
    pub weights: FusionWeights<T>,
}

impl<T: Scalar> FusionParams<T> {
    /// Glorot weights drawn from `seed`, zero biases, `w_r = 1`, `w_d = 0.1`.
    pub fn init(config: FusionConfig, seed: u64) -> Self {
        let d = config.dims;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights = FusionWeights {
            lin: Affine::glorot(d.hidden, d.image + d.text, &mut rng),
            im1: Affine::glorot(d.image, d.hidden, &mut rng),
            t1: Affine::glorot(d.hidden2, d.hidden, &mut rng),
            t2: Affine::glorot(d.image, d.hidden2, &mut rng),
            w_r: T::one(),
            w_d: lit(0.1),
        };
        Self { config, weights }
    }

    /// Wraps existing weights, checking they have the shapes `config` implies.
    pub fn from_weights(config: FusionConfig, weights: FusionWeights<T>) -> Result<Self> {
        let expected = FusionWeights::<T>::zeros(&config.dims);
        for ((name, want), (_, got)) in expected.tensors().iter().zip(weights.tensors()) {
            if want.len() != got.len() {
                return Err(Error::shape("fusion params", format!("{name}[{}]", want.len()), got.len()));
            }
        }
        if weights.dims() != config.dims {
            return Err(Error::shape("fusion params", format!("{:?}", config.dims), format!("{:?}", weights.dims())));
        }
        Ok(Self { config, weights })
    }

    pub fn dims(&self) -> FusionDims {
        self.config.dims
    }

    pub fn zero_grads(&self) -> ParamGrads<T> {
        FusionWeights::zeros(&self.config.dims)
    }
}

/// Intermediates of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace<T> {
    pub x_cat: DenseVector<T>,
    pub hidden_pre: DenseVector<T>,
    pub hidden: DenseVector<T>,
    pub joint: DenseVector<T>,
    /// Argument of the sigmoid: `f ⊙ image` (paper) or `f` (tirg).
    pub gate_pre: DenseVector<T>,
    pub gate: DenseVector<T>,
    pub f_ref: DenseVector<T>,
    pub f_r: DenseVector<T>,
    pub f_r_act: DenseVector<T>,
    pub f_res: DenseVector<T>,
    /// `w_r f_ref + w_d f_res` before optional normalization.
    pub mixed: DenseVector<T>,
    pub output: DenseVector<T>,
}

impl<T: Scalar> ForwardTrace<T> {
    pub fn image(&self) -> &[T] {
        &self.x_cat[..self.joint.len()]
    }
}

pub fn fusion_forward<T: Scalar>(
    params: &FusionParams<T>,
    image: &[T],
    text: &[T],
) -> Result<(DenseVector<T>, ForwardTrace<T>)> {
    let d = params.dims();
    if image.len() != d.image {
        return Err(Error::shape("fusion_forward image", d.image, image.len()));
    }
    if text.len() != d.text {
        return Err(Error::shape("fusion_forward text", d.text, text.len()));
    }
    let w = &params.weights;
    let mut x = Vec::with_capacity(d.image + d.text);
    x.extend_from_slice(image);
    x.extend_from_slice(text);
    let x_cat = DenseVector::from_vec(x)?;

    let hidden_pre = w.lin.forward(&x_cat)?;
    let hidden = relu(&hidden_pre);
    let joint = w.im1.forward(&hidden)?;
    let (gate_pre, gate, f_ref) = match params.config.gate {
        GateVariant::Paper => {
            let pre = hadamard(&joint, image)?;
            let g = sigmoid(&pre);
            let f_ref = g.clone();
            (pre, g, f_ref)
        }
        GateVariant::Tirg => {
            let g = sigmoid(&joint);
            let f_ref = hadamard(&g, image)?;
            (joint.clone(), g, f_ref)
        }
    };
    let f_r = w.t1.forward(&hidden)?;
    let f_r_act = relu(&f_r);
    let f_res = w.t2.forward(&f_r_act)?;

    let (wr, wd) = (w.w_r.widen(), w.w_d.widen());
    let mixed: Vec<T> = f_ref
        .iter()
        .zip(f_res.iter())
        .map(|(&a, &b)| T::narrow(wr * a.widen() + wd * b.widen()))
        .collect();
    let mixed = DenseVector::from_vec(mixed)
        .map_err(|_| Error::NonFinite("fusion output".into()))?;
    let output = if params.config.l2_normalize_output {
        let norm = mixed.l2_norm();
        if norm == 0.0 {
            return Err(Error::Normalization { modality: "fused" });
        }
        DenseVector::from_vec_unchecked(mixed.iter().map(|&v| T::narrow(v.widen() / norm)).collect())
    } else {
        mixed.clone()
    };
    let trace = ForwardTrace {
        x_cat,
        hidden_pre,
        hidden,
        joint,
        gate_pre,
        gate,
        f_ref,
        f_r,
        f_r_act,
        f_res,
        mixed,
        output: output.clone(),
    };
    Ok((output, trace))
}

/// Backpropagates `upstream = dL/d(output)`, accumulating parameter
/// gradients into `grads`. Returns `(dL/d image, dL/d text)`.
pub fn fusion_backward_into<T: Scalar>(
    trace: &ForwardTrace<T>,
    params: &FusionParams<T>,
    upstream: &[T],
    grads: &mut ParamGrads<T>,
) -> Result<(DenseVector<T>, DenseVector<T>)> {
    let d = params.dims();
    let consistent = trace.output.len() == d.image
        && trace.x_cat.len() == d.image + d.text
        && trace.hidden.len() == d.hidden
        && trace.f_r.len() == d.hidden2;
    if !consistent {
        return Err(Error::StaleTrace(format!(
            "trace dims (out {}, in {}, hidden {}, hidden2 {}) vs params {:?}",
            trace.output.len(),
            trace.x_cat.len(),
            trace.hidden.len(),
            trace.f_r.len(),
            d
        )));
    }
    if upstream.len() != d.image {
        return Err(Error::shape("fusion_backward upstream", d.image, upstream.len()));
    }
    if grads.dims() != d {
        return Err(Error::StaleTrace("gradient buffer shape differs from params".into()));
    }
    let w = &params.weights;
    let image = trace.image();

    let g_mixed: Vec<f64> = if params.config.l2_normalize_output {
        let norm = trace.mixed.l2_norm();
        let proj = dot_slices(&trace.output, upstream);
        trace
            .output
            .iter()
            .zip(upstream)
            .map(|(&y, &g)| (g.widen() - y.widen() * proj) / norm)
            .collect()
    } else {
        upstream.iter().map(|g| g.widen()).collect()
    };

    grads.w_r = grads.w_r + T::narrow(g_mixed.iter().zip(trace.f_ref.iter()).map(|(g, a)| g * a.widen()).sum());
    grads.w_d = grads.w_d + T::narrow(g_mixed.iter().zip(trace.f_res.iter()).map(|(g, b)| g * b.widen()).sum());

    let (wr, wd) = (w.w_r.widen(), w.w_d.widen());
    let g_ref: Vec<f64> = g_mixed.iter().map(|g| g * wr).collect();
    let g_res: Vec<T> = g_mixed.iter().map(|g| T::narrow(g * wd)).collect();

    // Reference branch: gradient w.r.t. the joint feature f and the direct
    // image contribution through the gate.
    let mut g_joint = Vec::with_capacity(d.image);
    let mut g_image_direct = Vec::with_capacity(d.image);
    for i in 0..d.image {
        let s = trace.gate[i].widen();
        let ds = s * (1.0 - s);
        let x = image[i].widen();
        match params.config.gate {
            GateVariant::Paper => {
                let g_pre = g_ref[i] * ds;
                g_joint.push(T::narrow(g_pre * x));
                g_image_direct.push(g_pre * trace.joint[i].widen());
            }
            GateVariant::Tirg => {
                g_joint.push(T::narrow(g_ref[i] * x * ds));
                g_image_direct.push(g_ref[i] * s);
            }
        }
    }

    // Residual branch.
    let g_fr_act = w.t2.backward(&trace.f_r_act, &g_res, &mut grads.t2)?;
    let g_fr = relu_backward(&trace.f_r, &g_fr_act);
    let g_hidden_res = w.t1.backward(&trace.hidden, &g_fr, &mut grads.t1)?;
    let g_hidden_ref = w.im1.backward(&trace.hidden, &g_joint, &mut grads.im1)?;

    // Both branches read the same ReLU(W_lin x); their gradients add.
    let g_hidden: Vec<T> = g_hidden_ref
        .iter()
        .zip(g_hidden_res.iter())
        .map(|(&a, &b)| a + b)
        .collect();
    let g_pre = relu_backward(&trace.hidden_pre, &g_hidden);
    let g_x = w.lin.backward(&trace.x_cat, &g_pre, &mut grads.lin)?;

    let g_image = g_x[..d.image]
        .iter()
        .zip(&g_image_direct)
        .map(|(&a, &b)| T::narrow(a.widen() + b))
        .collect();
    let g_text = g_x[d.image..].to_vec();
    Ok((
        DenseVector::from_vec_unchecked(g_image),
        DenseVector::from_vec_unchecked(g_text),
    ))
}

/// Fresh-buffer form of [`fusion_backward_into`].
pub fn fusion_backward<T: Scalar>(
    trace: &ForwardTrace<T>,
    params: &FusionParams<T>,
    upstream: &[T],
) -> Result<(ParamGrads<T>, DenseVector<T>, DenseVector<T>)> {
    let mut grads = params.zero_grads();
    let (gi, gt) = fusion_backward_into(trace, params, upstream, &mut grads)?;
    Ok((grads, gi, gt))
}

/// Which representation of a record to classify or compare.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingMode {
    #[serde(rename = "image")]
    ImageOnly,
    #[serde(rename = "text")]
    TextOnly,
    Concat,
    Fused,
}

impl EmbeddingMode {
    pub const ALL: [EmbeddingMode; 4] = [Self::ImageOnly, Self::TextOnly, Self::Concat, Self::Fused];

    pub fn name(&self) -> &'static str {
        match self {
            Self::ImageOnly => "image",
            Self::TextOnly => "text",
            Self::Concat => "concat",
            Self::Fused => "fused",
        }
    }
}

impl fmt::Display for EmbeddingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EmbeddingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "image" | "image_only" => Ok(Self::ImageOnly),
            "text" | "text_only" => Ok(Self::TextOnly),
            "concat" => Ok(Self::Concat),
            "fused" => Ok(Self::Fused),
            other => Err(Error::Parameter(format!("unknown embedding mode `{other}`"))),
        }
    }
}

/// One embedding row per record in the requested mode. `params` is only
/// consulted for [`EmbeddingMode::Fused`].
pub fn embed_dataset<T: Scalar>(
    params: Option<&FusionParams<T>>,
    records: &[EmbeddingRecord<T>],
    mode: EmbeddingMode,
) -> Result<DenseMatrix<T>> {
    let rows: Vec<DenseVector<T>> = match mode {
        EmbeddingMode::ImageOnly => records.iter().map(|r| r.image.clone()).collect(),
        EmbeddingMode::TextOnly => records.iter().map(|r| r.text.clone()).collect(),
        EmbeddingMode::Concat => records
            .iter()
            .map(|r| normalize_concat(&r.image, &r.text))
            .collect::<Result<_>>()?,
        EmbeddingMode::Fused => {
            let params = params
                .ok_or_else(|| Error::Parameter("fused embeddings need trained parameters".into()))?;
            records
                .par_iter()
                .map(|r| fusion_forward(params, &r.image, &r.text).map(|(out, _)| out))
                .collect::<Result<_>>()?
        }
    };
    let cols = match (rows.first(), mode) {
        (Some(r), _) => r.len(),
        (None, EmbeddingMode::Fused) => params.map_or(0, |p| p.dims().image),
        (None, _) => 0,
    };
    DenseMatrix::stack(&rows, cols)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::DenseVector;

    fn small(gate: GateVariant, seed: u64) -> FusionParams<f64> {
        let mut cfg = FusionConfig::new(FusionDims {
            image: 8,
            text: 6,
            hidden: 7,
            hidden2: 5,
        });
        cfg.gate = gate;
        FusionParams::init(cfg, seed)
    }

    fn inputs(seed: u64, n: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn zero_weights_give_half_vector() {
        let dims = FusionDims::for_inputs(4, 3);
        let mut weights = FusionWeights::<f32>::zeros(&dims);
        weights.w_r = 1.0;
        let params = FusionParams::from_weights(FusionConfig::new(dims), weights).unwrap();
        let (out, _) = fusion_forward(&params, &[0.3, -1.0, 2.0, 0.1], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(out.as_slice(), &[0.5; 4]);
    }

    #[test]
    fn pure_residual_mixture() {
        let mut params = small(GateVariant::Paper, 3);
        params.weights.w_r = 0.0;
        params.weights.w_d = 1.0;
        let (out, trace) = fusion_forward(&params, &inputs(1, 8), &inputs(2, 6)).unwrap();
        assert_eq!(out, trace.f_res);
    }

    #[test]
    fn rejects_wrong_input_dims() {
        let params = small(GateVariant::Paper, 0);
        assert!(fusion_forward(&params, &inputs(1, 7), &inputs(2, 6)).is_err());
        assert!(fusion_forward(&params, &inputs(1, 8), &inputs(2, 5)).is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let params = small(GateVariant::Paper, 4);
        let (_, trace) = fusion_forward(&params, &inputs(1, 8), &inputs(2, 6)).unwrap();
        let (g, gi, gt) = fusion_backward(&trace, &params, &[0.0; 8]).unwrap();
        assert!(g.tensors().iter().all(|(_, t)| t.iter().all(|v| *v == 0.0)));
        assert!(gi.iter().chain(gt.iter()).all(|v| *v == 0.0));
    }

    #[test]
    fn mixture_weight_gradients_are_branch_sums() {
        let params = small(GateVariant::Paper, 5);
        let (_, trace) = fusion_forward(&params, &inputs(1, 8), &inputs(2, 6)).unwrap();
        let (g, _, _) = fusion_backward(&trace, &params, &[1.0; 8]).unwrap();
        let sum_ref: f64 = trace.f_ref.iter().sum();
        let sum_res: f64 = trace.f_res.iter().sum();
        assert!((g.w_r - sum_ref).abs() < 1e-12);
        assert!((g.w_d - sum_res).abs() < 1e-12);
    }

    #[test]
    fn stale_trace_rejected() {
        let params = small(GateVariant::Paper, 5);
        let other = FusionParams::<f64>::init(FusionConfig::new(FusionDims::for_inputs(4, 4)), 0);
        let (_, trace) = fusion_forward(&other, &inputs(1, 4), &inputs(2, 4)).unwrap();
        assert!(matches!(
            fusion_backward(&trace, &params, &[1.0; 8]),
            Err(Error::StaleTrace(_))
        ));
    }

    #[test]
    fn gate_is_bounded_for_product_gate() {
        let mut params = small(GateVariant::Paper, 9);
        params.weights.w_d = 0.0;
        params.weights.w_r = 2.5;
        for s in 0..10 {
            let (out, trace) = fusion_forward(&params, &inputs(s, 8), &inputs(s + 100, 6)).unwrap();
            assert!(trace.f_ref.iter().all(|&v| v > 0.0 && v < 1.0));
            assert!(out.iter().all(|&v| v > 0.0 && v < 2.5));
        }
    }

    #[test]
    fn output_is_linear_in_mixture_weights() {
        let base = small(GateVariant::Tirg, 11);
        let img = inputs(3, 8);
        let txt = inputs(4, 6);
        let eval = |wr: f64, wd: f64| {
            let mut p = base.clone();
            p.weights.w_r = wr;
            p.weights.w_d = wd;
            fusion_forward(&p, &img, &txt).unwrap().0
        };
        // Three collinear points in (w_r, w_d) map to collinear outputs.
        let (a, b, c) = (eval(0.0, 1.0), eval(1.0, 0.5), eval(2.0, 0.0));
        for i in 0..8 {
            assert!((b[i] - 0.5 * (a[i] + c[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let params = small(GateVariant::Paper, 12);
        let a = fusion_forward(&params, &inputs(5, 8), &inputs(6, 6)).unwrap();
        let b = fusion_forward(&params, &inputs(5, 8), &inputs(6, 6)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn embed_modes() {
        let records: Vec<EmbeddingRecord<f64>> = (0..10)
            .map(|i| EmbeddingRecord {
                id: i.to_string(),
                image: DenseVector::from_vec(inputs(i, 8)).unwrap(),
                text: DenseVector::from_vec(inputs(i + 50, 6)).unwrap(),
                category: "c".into(),
                subcategory: "s".into(),
                split: crate::store::Split::Train,
            })
            .collect();
        let img = embed_dataset(None, &records, EmbeddingMode::ImageOnly).unwrap();
        for (row, r) in img.iter_rows().zip(&records) {
            assert_eq!(row, r.image.as_slice());
        }
        let cat = embed_dataset(None, &records, EmbeddingMode::Concat).unwrap();
        for row in cat.iter_rows() {
            assert!((dot_slices(row, row).sqrt() - 2f64.sqrt()).abs() < 1e-12);
        }
        let params = small(GateVariant::Paper, 1);
        assert!(embed_dataset(None, &records, EmbeddingMode::Fused).is_err());
        let fused = embed_dataset(Some(&params), &records, EmbeddingMode::Fused).unwrap();
        for (row, r) in fused.iter_rows().zip(&records) {
            let (out, _) = fusion_forward(&params, &r.image, &r.text).unwrap();
            assert_eq!(row, out.as_slice());
        }
    }

    #[test]
    fn mode_names_round_trip() {
        for m in EmbeddingMode::ALL {
            assert_eq!(m.name().parse::<EmbeddingMode>().unwrap(), m);
        }
    }
}
