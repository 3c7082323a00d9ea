//! Linear layers and the mini-batch loop shared by both heads.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[default]
    Sgd,
    Adam,
}

/// Hyper-parameters for fitting either head.
///
/// Defaults follow the published fine-tuning recipe (lr 5e-5, batch 8,
/// 3 epochs). With a frozen encoder those settings barely move the heads;
/// desk-scale runs typically use Adam with lr around 1e-2 and more epochs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 5e-5,
            batch_size: 8,
            epochs: 3,
            seed: 0,
            optimizer: OptimizerKind::Sgd,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be positive".into()));
        }
        Ok(())
    }
}

/// Mean training loss after each epoch, measured on the full training set
/// with the parameters at the end of that epoch.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epoch_losses: Vec<f64>,
}

/// Affine map `x -> W x + b` with `W` stored row-major ahead of `b` in one
/// flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct LinearLayer {
    pub outputs: usize,
    pub dim: usize,
    pub params: Vec<f64>,
}

impl LinearLayer {
    pub fn zeros(outputs: usize, dim: usize) -> Self {
        LinearLayer {
            outputs,
            dim,
            params: vec![0.0; outputs * dim + outputs],
        }
    }

    pub fn from_parts(weights: &[Vec<f64>], bias: &[f64]) -> Result<Self> {
        let outputs = bias.len();
        if weights.len() != outputs {
            return Err(Error::InvalidModel(format!(
                "{} weight rows for {} outputs",
                weights.len(),
                outputs
            )));
        }
        let dim = weights.first().map_or(0, Vec::len);
        let mut params = Vec::with_capacity(outputs * dim + outputs);
        for row in weights {
            if row.len() != dim {
                return Err(Error::InvalidModel("ragged weight matrix".into()));
            }
            params.extend_from_slice(row);
        }
        params.extend_from_slice(bias);
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidModel("non-finite parameter".into()));
        }
        Ok(LinearLayer {
            outputs,
            dim,
            params,
        })
    }

    pub fn weight_rows(&self) -> Vec<Vec<f64>> {
        self.params[..self.outputs * self.dim]
            .chunks_exact(self.dim.max(1))
            .take(self.outputs)
            .map(<[f64]>::to_vec)
            .collect()
    }

    pub fn weight_row(&self, j: usize) -> &[f64] {
        &self.params[j * self.dim..(j + 1) * self.dim]
    }

    pub fn bias(&self) -> &[f64] {
        &self.params[self.outputs * self.dim..]
    }

    pub fn check_input(&self, found: usize) -> Result<()> {
        if found != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found,
            });
        }
        Ok(())
    }

    pub fn logits_into(&self, x: &[f64], out: &mut [f64]) {
        let bias = self.bias();
        for (j, o) in out.iter_mut().enumerate() {
            *o = dot(self.weight_row(j), x) + bias[j];
        }
    }

    /// Adds the gradient contribution of one input given `dL/dlogits`.
    pub fn accumulate(&self, x: &[f64], delta: &[f64], grad: &mut [f64]) {
        let (gw, gb) = grad.split_at_mut(self.outputs * self.dim);
        for (j, &dj) in delta.iter().enumerate() {
            if dj == 0.0 {
                continue;
            }
            for (g, xi) in gw[j * self.dim..(j + 1) * self.dim].iter_mut().zip(x) {
                *g += dj * xi;
            }
            gb[j] += dj;
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

enum Optimizer {
    Sgd {
        lr: f64,
    },
    Adam {
        lr: f64,
        m: Vec<f64>,
        v: Vec<f64>,
        t: i32,
    },
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

impl Optimizer {
    fn new(config: &TrainConfig, n: usize) -> Self {
        match config.optimizer {
            OptimizerKind::Sgd => Optimizer::Sgd { lr: config.lr },
            OptimizerKind::Adam => Optimizer::Adam {
                lr: config.lr,
                m: vec![0.0; n],
                v: vec![0.0; n],
                t: 0,
            },
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        match self {
            Optimizer::Sgd { lr } => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= *lr * g;
                }
            }
            Optimizer::Adam { lr, m, v, t } => {
                *t += 1;
                let c1 = 1.0 - BETA1.powi(*t);
                let c2 = 1.0 - BETA2.powi(*t);
                for i in 0..params.len() {
                    m[i] = BETA1 * m[i] + (1.0 - BETA1) * grad[i];
                    v[i] = BETA2 * v[i] + (1.0 - BETA2) * grad[i] * grad[i];
                    params[i] -= *lr * (m[i] / c1) / ((v[i] / c2).sqrt() + EPS);
                }
            }
        }
    }
}

/// Runs shuffled mini-batch descent over `examples`.
///
/// `objective(layer, example, grad)` returns the example's summed loss and
/// the number of loss terms it contributed, adding its gradient into `grad`
/// when one is supplied. Batch gradients are averaged over loss terms.
pub(crate) fn fit<E, F>(
    layer: &mut LinearLayer,
    examples: &[E],
    config: &TrainConfig,
    objective: F,
) -> Result<TrainLog>
where
    F: Fn(&LinearLayer, &E, Option<&mut [f64]>) -> (f64, usize),
{
    if examples.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut optimizer = Optimizer::new(config, layer.params.len());
    let mut grad = vec![0.0; layer.params.len()];
    let mut log = TrainLog::default();

    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let mut units = 0;
            for &i in batch {
                units += objective(layer, &examples[i], Some(&mut grad)).1;
            }
            if units == 0 {
                continue;
            }
            let scale = 1.0 / units as f64;
            grad.iter_mut().for_each(|g| *g *= scale);
            optimizer.step(&mut layer.params, &grad);
        }
        let (total, units) = examples
            .iter()
            .map(|e| objective(layer, e, None))
            .fold((0.0, 0), |(l, n), (el, en)| (l + el, n + en));
        log.epoch_losses.push(total / units.max(1) as f64);
    }
    Ok(log)
}

/// On-disk JSON layout shared by both heads.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct ModelFile {
    pub kind: String,
    pub dim: usize,
    pub categories: Vec<String>,
    #[serde(rename = "W")]
    pub weights: Vec<Vec<f64>>,
    #[serde(rename = "b")]
    pub bias: Vec<f64>,
    pub config: TrainConfig,
}

impl ModelFile {
    pub fn new(kind: &str, categories: &[&str], layer: &LinearLayer, config: TrainConfig) -> Self {
        ModelFile {
            kind: kind.to_string(),
            dim: layer.dim,
            categories: categories.iter().map(|c| c.to_string()).collect(),
            weights: layer.weight_rows(),
            bias: layer.bias().to_vec(),
            config,
        }
    }

    /// Checks the header against what the caller expects and rebuilds the layer.
    pub fn into_layer(self, kind: &str, categories: &[&str]) -> Result<(LinearLayer, TrainConfig)> {
        if self.kind != kind {
            return Err(Error::InvalidModel(format!(
                "expected kind {kind:?}, found {:?}",
                self.kind
            )));
        }
        if self.categories != categories {
            return Err(Error::InvalidModel(format!(
                "expected categories {categories:?}, found {:?}",
                self.categories
            )));
        }
        let layer = LinearLayer::from_parts(&self.weights, &self.bias)?;
        if layer.dim != self.dim {
            return Err(Error::InvalidModel(format!(
                "declared dim {} but weights have {}",
                self.dim, layer.dim
            )));
        }
        Ok((layer, self.config))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_recipe() {
        let c = TrainConfig::default();
        assert_eq!(c.lr, 5e-5);
        assert_eq!(c.batch_size, 8);
        assert_eq!(c.epochs, 3);
        assert_eq!(c.optimizer, OptimizerKind::Sgd);
    }

    #[test]
    fn rejects_bad_config() {
        let mut c = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(c.validate().is_err());
        c.batch_size = 1;
        c.lr = -1.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn layer_accumulates_outer_product() {
        let layer = LinearLayer::zeros(2, 3);
        let mut grad = vec![0.0; 8];
        layer.accumulate(&[1.0, 2.0, 3.0], &[0.5, -1.0], &mut grad);
        assert_eq!(grad, vec![0.5, 1.0, 1.5, -1.0, -2.0, -3.0, 0.5, -1.0]);
    }

    #[test]
    fn adam_minimizes_quadratic() {
        // f(p) = (p - 3)^2 summed over one unit.
        let mut layer = LinearLayer::zeros(1, 0);
        let config = TrainConfig {
            lr: 0.1,
            batch_size: 1,
            epochs: 500,
            optimizer: OptimizerKind::Adam,
            ..TrainConfig::default()
        };
        let log = fit(&mut layer, &[()], &config, |l, _, g| {
            let p = l.params[0];
            if let Some(g) = g {
                g[0] += 2.0 * (p - 3.0);
            }
            ((p - 3.0).powi(2), 1)
        })
        .unwrap();
        assert!((layer.params[0] - 3.0).abs() < 1e-2);
        assert!(log.epoch_losses.last().unwrap() < &1e-3);
    }
}
