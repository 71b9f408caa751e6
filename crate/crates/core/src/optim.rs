//! SGD and Adam over named parameter tensors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// A set of named flat tensors, visited in a fixed order.
///
/// Parameters and their gradients implement this with identical names and
/// lengths so the optimizer can pair them positionally.
pub trait ParamTensors<T> {
    fn tensors(&self) -> Vec<(&'static str, &[T])>;
    fn tensors_mut(&mut self) -> Vec<(&'static str, &mut [T])>;

    fn num_values(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub algorithm: Algorithm,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Adam,
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl OptimizerConfig {
    pub fn sgd(learning_rate: f64) -> Self {
        Self {
            algorithm: Algorithm::Sgd,
            learning_rate,
            ..Self::default()
        }
    }

    pub fn adam(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Parameter(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Parameter("adam betas must lie in [0, 1)".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Parameter("adam epsilon must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub config: OptimizerConfig,
    step: u64,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(config: OptimizerConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            step: 0,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update. Gradients are checked for finiteness before any
    /// parameter is touched, so a failed step leaves `params` unchanged.
    pub fn step<T, P>(&mut self, params: &mut P, grads: &P) -> Result<()>
    where
        T: Scalar,
        P: ParamTensors<T>,
    {
        let grads = grads.tensors();
        for (name, g) in &grads {
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient((*name).to_string()));
            }
        }
        let mut params = params.tensors_mut();
        if params.len() != grads.len() {
            return Err(Error::shape("optimizer_step", params.len(), grads.len()));
        }
        for ((pname, p), (gname, g)) in params.iter().zip(&grads) {
            if pname != gname || p.len() != g.len() {
                return Err(Error::shape(
                    "optimizer_step",
                    format!("{pname}[{}]", p.len()),
                    format!("{gname}[{}]", g.len()),
                ));
            }
        }

        let cfg = self.config;
        self.step += 1;
        match cfg.algorithm {
            Algorithm::Sgd => {
                for ((_, p), (_, g)) in params.iter_mut().zip(&grads) {
                    for (w, &d) in p.iter_mut().zip(g.iter()) {
                        *w = T::narrow(w.widen() - cfg.learning_rate * d.widen());
                    }
                }
            }
            Algorithm::Adam => {
                if self.first_moment.is_empty() {
                    self.first_moment = grads.iter().map(|(_, g)| vec![0.0; g.len()]).collect();
                    self.second_moment = self.first_moment.clone();
                }
                let t = self.step as i32;
                let bias1 = 1.0 - cfg.beta1.powi(t);
                let bias2 = 1.0 - cfg.beta2.powi(t);
                for (((_, p), (_, g)), (m, v)) in params
                    .iter_mut()
                    .zip(&grads)
                    .zip(self.first_moment.iter_mut().zip(self.second_moment.iter_mut()))
                {
                    for (((w, &d), m), v) in p.iter_mut().zip(g.iter()).zip(m).zip(v) {
                        let d = d.widen();
                        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * d;
                        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * d * d;
                        let m_hat = *m / bias1;
                        let v_hat = *v / bias2;
                        *w = T::narrow(
                            w.widen() - cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon),
                        );
                    }
                }
            }
        }
        Ok(())
    }
}
