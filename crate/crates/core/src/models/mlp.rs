//! Multilayer perceptron with rectified hidden layers and a logistic output.
//!
//! The batch objective is mean binary cross-entropy plus
//! `alpha / (2 * B) * ||W||^2` over all weight matrices (biases excluded),
//! where `B` is the batch size. Training uses Adam on mini-batches whose
//! order is reshuffled every epoch from the seed, and stops once the epoch
//! loss fails to improve by `1e-4` for ten consecutive epochs.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::NUM_FIELDS;
use crate::error::{Error, Result};

use super::{sigmoid, Row, Standardization};

const TOL: f64 = 1e-4;
const NO_CHANGE_EPOCHS: usize = 10;
const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlpParams {
    pub hidden_layers: Vec<usize>,
    /// L2 penalty on weights.
    pub alpha: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_iter: usize,
}

impl Default for MlpParams {
    fn default() -> Self {
        Self {
            hidden_layers: vec![15],
            alpha: 1e-4,
            learning_rate: 1e-3,
            batch_size: 200,
            max_iter: 200,
        }
    }
}

impl MlpParams {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_layers.is_empty() || self.hidden_layers.contains(&0) {
            return Err(Error::InvalidConfig(format!("bad hidden layer sizes {:?}", self.hidden_layers)));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidConfig(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!("learning rate {}", self.learning_rate)));
        }
        if self.batch_size == 0 || self.max_iter == 0 {
            return Err(Error::InvalidConfig("batch_size and max_iter must be positive".into()));
        }
        Ok(())
    }
}

/// Dense layer; `weights` is row-major `outputs x inputs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpNetwork {
    pub layers: Vec<Layer>,
}

impl MlpNetwork {
    /// Glorot-uniform initialization of weights and biases.
    pub fn init(hidden: &[usize], rng: &mut impl Rng) -> Self {
        let mut sizes = vec![NUM_FIELDS];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let layers = sizes
            .windows(2)
            .map(|w| {
                let (inputs, outputs) = (w[0], w[1]);
                let bound = (6.0 / (inputs + outputs) as f64).sqrt();
                Layer {
                    inputs,
                    outputs,
                    weights: (0..inputs * outputs).map(|_| rng.random_range(-bound..bound)).collect(),
                    biases: (0..outputs).map(|_| rng.random_range(-bound..bound)).collect(),
                }
            })
            .collect();
        Self { layers }
    }

    pub fn shape(&self) -> Vec<usize> {
        let mut s: Vec<usize> = self.layers.iter().map(|l| l.inputs).collect();
        s.extend(self.layers.last().map(|l| l.outputs));
        s
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    /// Parameters flattened layer by layer, weights before biases.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.biases);
        }
        out
    }

    pub fn set_params(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.param_count());
        let mut at = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&flat[at..at + nw]);
            at += nw;
            let nb = l.biases.len();
            l.biases.copy_from_slice(&flat[at..at + nb]);
            at += nb;
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = !self.layers.is_empty()
            && self.layers[0].inputs == NUM_FIELDS
            && self.layers.last().unwrap().outputs == 1
            && self.layers.windows(2).all(|w| w[0].outputs == w[1].inputs)
            && self
                .layers
                .iter()
                .all(|l| l.weights.len() == l.inputs * l.outputs && l.biases.len() == l.outputs)
            && self.params().iter().all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig("inconsistent network shapes or parameters".into()))
        }
    }

    /// Activations of every layer; the last entry is the output logit.
    fn forward(&self, row: &[f64], acts: &mut Vec<Vec<f64>>) {
        acts.resize(self.layers.len() + 1, Vec::new());
        acts[0].clear();
        acts[0].extend_from_slice(row);
        for (k, l) in self.layers.iter().enumerate() {
            let (done, rest) = acts.split_at_mut(k + 1);
            let input = &done[k];
            let out = &mut rest[0];
            out.clear();
            let last = k + 1 == self.layers.len();
            for o in 0..l.outputs {
                let w = &l.weights[o * l.inputs..(o + 1) * l.inputs];
                let mut s = l.biases[o];
                for (wi, xi) in w.iter().zip(input) {
                    s += wi * xi;
                }
                out.push(if last { s } else { s.max(0.0) });
            }
        }
    }

    pub fn logit(&self, row: &[f64]) -> f64 {
        let mut acts = Vec::new();
        self.forward(row, &mut acts);
        acts.last().unwrap()[0]
    }

    pub fn predict(&self, row: &[f64]) -> f64 {
        sigmoid(self.logit(row))
    }

    /// Batch objective and its gradient in [`params`](Self::params) order.
    pub fn loss_and_grad(&self, x: &[Row], y: &[bool], alpha: f64) -> (f64, Vec<f64>) {
        let b = x.len() as f64;
        let mut grads: Vec<(Vec<f64>, Vec<f64>)> = self
            .layers
            .iter()
            .map(|l| (vec![0.0; l.weights.len()], vec![0.0; l.biases.len()]))
            .collect();
        let mut acts = Vec::new();
        let mut delta: Vec<f64> = Vec::new();
        let mut prev_delta: Vec<f64> = Vec::new();
        let mut loss = 0.0;
        for (row, &label) in x.iter().zip(y) {
            self.forward(row, &mut acts);
            let t = acts.last().unwrap()[0];
            let target = f64::from(u8::from(label));
            loss += t.max(0.0) + (-t.abs()).exp().ln_1p() - target * t;
            delta.clear();
            delta.push((sigmoid(t) - target) / b);
            for k in (0..self.layers.len()).rev() {
                let l = &self.layers[k];
                let input = &acts[k];
                let (gw, gb) = &mut grads[k];
                for o in 0..l.outputs {
                    gb[o] += delta[o];
                    let row_g = &mut gw[o * l.inputs..(o + 1) * l.inputs];
                    for (g, xi) in row_g.iter_mut().zip(input) {
                        *g += delta[o] * xi;
                    }
                }
                if k > 0 {
                    prev_delta.clear();
                    prev_delta.resize(l.inputs, 0.0);
                    for o in 0..l.outputs {
                        let w = &l.weights[o * l.inputs..(o + 1) * l.inputs];
                        for (pd, wi) in prev_delta.iter_mut().zip(w) {
                            *pd += delta[o] * wi;
                        }
                    }
                    for (pd, a) in prev_delta.iter_mut().zip(input) {
                        if *a <= 0.0 {
                            *pd = 0.0;
                        }
                    }
                    std::mem::swap(&mut delta, &mut prev_delta);
                }
            }
        }
        let mut penalty = 0.0;
        for (l, (gw, _)) in self.layers.iter().zip(&mut grads) {
            for (g, w) in gw.iter_mut().zip(&l.weights) {
                penalty += w * w;
                *g += alpha * w / b;
            }
        }
        let loss = loss / b + alpha / (2.0 * b) * penalty;
        let flat = grads.into_iter().flat_map(|(w, bb)| w.into_iter().chain(bb)).collect();
        (loss, flat)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub params: MlpParams,
    pub standardization: Option<Standardization>,
    pub training_digest: Option<String>,
    network: Option<MlpNetwork>,
    converged: bool,
}

impl MlpModel {
    pub fn new(params: MlpParams) -> Self {
        Self {
            params,
            standardization: None,
            training_digest: None,
            network: None,
            converged: false,
        }
    }

    pub(crate) fn from_parts(
        params: MlpParams,
        network: MlpNetwork,
        standardization: Standardization,
        training_digest: Option<String>,
    ) -> Result<Self> {
        network.validate()?;
        let mut expected = vec![NUM_FIELDS];
        expected.extend_from_slice(&params.hidden_layers);
        expected.push(1);
        if network.shape() != expected {
            return Err(Error::InvalidConfig(format!(
                "network shape {:?} does not match hidden layers {:?}",
                network.shape(),
                params.hidden_layers
            )));
        }
        Ok(Self {
            params,
            standardization: Some(standardization),
            training_digest,
            network: Some(network),
            converged: true,
        })
    }

    pub fn network(&self) -> Result<&MlpNetwork> {
        self.network.as_ref().ok_or(Error::Untrained)
    }

    pub fn converged(&self) -> bool {
        self.converged
    }

    pub fn fit(&mut self, x: &[Row], y: &[bool], seed: u64) -> Result<()> {
        self.params.validate()?;
        super::check_classes(y)?;
        let std = Standardization::fit(x);
        let z: Vec<Row> = x.iter().map(|r| std.apply(r)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = MlpNetwork::init(&self.params.hidden_layers, &mut rng);
        let mut theta = net.params();
        let mut m = vec![0.0; theta.len()];
        let mut v = vec![0.0; theta.len()];
        let mut step = 0i32;
        let mut order: Vec<usize> = (0..z.len()).collect();
        let batch = self.params.batch_size.min(z.len());
        let mut best = f64::INFINITY;
        let mut stale = 0;
        let mut converged = false;
        let mut bx: Vec<Row> = Vec::with_capacity(batch);
        let mut by: Vec<bool> = Vec::with_capacity(batch);
        for _epoch in 0..self.params.max_iter {
            order.shuffle(&mut rng);
            let mut epoch_loss = 0.0;
            for chunk in order.chunks(batch) {
                bx.clear();
                by.clear();
                bx.extend(chunk.iter().map(|&i| z[i]));
                by.extend(chunk.iter().map(|&i| y[i]));
                let (loss, grad) = net.loss_and_grad(&bx, &by, self.params.alpha);
                epoch_loss += loss * chunk.len() as f64;
                step += 1;
                let c1 = 1.0 - BETA1.powi(step);
                let c2 = 1.0 - BETA2.powi(step);
                let lr = self.params.learning_rate * c2.sqrt() / c1;
                for j in 0..theta.len() {
                    m[j] = BETA1 * m[j] + (1.0 - BETA1) * grad[j];
                    v[j] = BETA2 * v[j] + (1.0 - BETA2) * grad[j] * grad[j];
                    theta[j] -= lr * m[j] / (v[j].sqrt() + EPS);
                }
                net.set_params(&theta);
            }
            epoch_loss /= z.len() as f64;
            if epoch_loss > best - TOL {
                stale += 1;
            } else {
                stale = 0;
            }
            best = best.min(epoch_loss);
            if stale >= NO_CHANGE_EPOCHS {
                converged = true;
                break;
            }
        }
        if !converged {
            log::warn!("perceptron did not converge in {} epochs (best loss {best:.6})", self.params.max_iter);
        }
        self.standardization = Some(std);
        self.network = Some(net);
        self.converged = converged;
        Ok(())
    }

    pub fn predict_proba(&self, row: &Row) -> Result<f64> {
        let net = self.network()?;
        let std = self.standardization.as_ref().ok_or(Error::Untrained)?;
        Ok(net.predict(&std.apply(row)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> (Vec<Row>, Vec<bool>) {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        (0..300)
            .map(|i| {
                let pos = i % 3 == 0;
                let base = if pos { 0.85 } else { 0.05 };
                (std::array::from_fn(|_| base + rng.random_range(0.0..0.1)), pos)
            })
            .unzip()
    }

    #[test]
    fn shapes_and_flat_params() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut net = MlpNetwork::init(&[10, 3], &mut rng);
        assert_eq!(net.shape(), [5, 10, 3, 1]);
        assert_eq!(net.param_count(), 5 * 10 + 10 + 10 * 3 + 3 + 3 + 1);
        let p = net.params();
        let doubled: Vec<f64> = p.iter().map(|v| v * 2.0).collect();
        net.set_params(&doubled);
        assert_eq!(net.params(), doubled);
    }

    #[test]
    fn separable_toy_is_learned() {
        let (x, y) = toy();
        let mut m = MlpModel::new(MlpParams {
            batch_size: 32,
            ..Default::default()
        });
        m.fit(&x, &y, 4).unwrap();
        for (r, &l) in x.iter().zip(&y) {
            assert_eq!(m.predict_proba(r).unwrap() >= 0.5, l);
        }
    }

    #[test]
    fn same_seed_same_parameters() {
        let (x, y) = toy();
        let params = MlpParams {
            hidden_layers: vec![6, 2],
            max_iter: 20,
            ..Default::default()
        };
        let fit = |seed| {
            let mut m = MlpModel::new(params.clone());
            m.fit(&x, &y, seed).unwrap();
            m.network().unwrap().params()
        };
        assert_eq!(fit(1), fit(1));
        assert_ne!(fit(1), fit(2));
    }

    #[test]
    fn rejects_shape_mismatch_on_load() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = MlpNetwork::init(&[10], &mut rng);
        let std = Standardization {
            mean: [0.0; NUM_FIELDS],
            scale: [1.0; NUM_FIELDS],
        };
        assert!(MlpModel::from_parts(MlpParams::default(), net, std, None).is_err());
    }
}
