//! Class-weighted, regularized logistic regression.
//!
//! The objective over `N` standardized rows is
//! `(1/N) * sum_i s_i * logloss_i + R(w) / (C * N)` where `s_i` is the class
//! weight for positives and 1 for negatives, `R` is `||w||_1` or
//! `||w||^2 / 2`, and the bias is not penalized. It is minimized by
//! accelerated proximal gradient descent with backtracking; the L1 term is
//! handled by soft-thresholding.

use serde::{Deserialize, Serialize};

use crate::encoder::NUM_FIELDS;
use crate::error::{Error, Result};

use super::{sigmoid, Row, Standardization};

const TOL: f64 = 1e-6;
const NPARAM: usize = NUM_FIELDS + 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Penalty {
    L1,
    L2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LogisticParams {
    /// Weight of positive examples relative to negatives.
    pub class_weight: f64,
    pub penalty: Penalty,
    /// Inverse regularization strength.
    pub c: f64,
    pub max_iter: usize,
}

impl Default for LogisticParams {
    fn default() -> Self {
        Self {
            class_weight: 1.0,
            penalty: Penalty::L2,
            c: 1.0,
            max_iter: 100,
        }
    }
}

impl LogisticParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.class_weight > 0.0 && self.class_weight.is_finite()) {
            return Err(Error::InvalidConfig(format!("class_weight must be positive, got {}", self.class_weight)));
        }
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::InvalidConfig(format!("C must be positive, got {}", self.c)));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidConfig("max_iter must be positive".into()));
        }
        Ok(())
    }
}

/// Fitted coefficients over standardized inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticParameters {
    pub weights: [f64; NUM_FIELDS],
    pub bias: f64,
    pub final_loss: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// The training objective over already standardized rows.
pub struct LogisticObjective<'a> {
    pub z: &'a [Row],
    pub y: &'a [bool],
    pub class_weight: f64,
    pub penalty: Penalty,
    pub c: f64,
}

fn softplus(t: f64) -> f64 {
    t.max(0.0) + (-t.abs()).exp().ln_1p()
}

fn linear(theta: &[f64; NPARAM], row: &Row) -> f64 {
    row.iter().zip(theta).map(|(x, w)| x * w).sum::<f64>() + theta[NUM_FIELDS]
}

impl LogisticObjective<'_> {
    fn n(&self) -> f64 {
        self.z.len() as f64
    }

    fn lambda(&self) -> f64 {
        1.0 / (self.c * self.n())
    }

    fn data_loss(&self, theta: &[f64; NPARAM]) -> f64 {
        let mut total = 0.0;
        for (row, &label) in self.z.iter().zip(self.y) {
            let t = linear(theta, row);
            if label {
                total += self.class_weight * (softplus(t) - t);
            } else {
                total += softplus(t);
            }
        }
        total / self.n()
    }

    fn data_gradient(&self, theta: &[f64; NPARAM]) -> [f64; NPARAM] {
        let mut g = [0.0; NPARAM];
        for (row, &label) in self.z.iter().zip(self.y) {
            let p = sigmoid(linear(theta, row));
            let r = if label { self.class_weight * (p - 1.0) } else { p };
            for j in 0..NUM_FIELDS {
                g[j] += r * row[j];
            }
            g[NUM_FIELDS] += r;
        }
        g.map(|v| v / self.n())
    }

    fn penalty_value(&self, theta: &[f64; NPARAM]) -> f64 {
        let w = &theta[..NUM_FIELDS];
        let r = match self.penalty {
            Penalty::L1 => w.iter().map(|v| v.abs()).sum(),
            Penalty::L2 => 0.5 * w.iter().map(|v| v * v).sum::<f64>(),
        };
        r * self.lambda()
    }

    /// Full objective value.
    pub fn value(&self, theta: &[f64; NPARAM]) -> f64 {
        self.data_loss(theta) + self.penalty_value(theta)
    }

    /// Gradient of [`value`](Self::value); for L1 this is the derivative
    /// away from zero coefficients.
    pub fn gradient(&self, theta: &[f64; NPARAM]) -> [f64; NPARAM] {
        let mut g = self.data_gradient(theta);
        let lambda = self.lambda();
        for j in 0..NUM_FIELDS {
            g[j] += lambda
                * match self.penalty {
                    Penalty::L1 if theta[j] == 0.0 => 0.0,
                    Penalty::L1 => theta[j].signum(),
                    Penalty::L2 => theta[j],
                };
        }
        g
    }

    fn smooth(&self, theta: &[f64; NPARAM]) -> (f64, [f64; NPARAM]) {
        match self.penalty {
            Penalty::L2 => (self.value(theta), self.gradient(theta)),
            Penalty::L1 => (self.data_loss(theta), self.data_gradient(theta)),
        }
    }

    fn prox(&self, theta: [f64; NPARAM], step: f64) -> [f64; NPARAM] {
        match self.penalty {
            Penalty::L2 => theta,
            Penalty::L1 => {
                let k = step * self.lambda();
                let mut out = theta;
                for v in out.iter_mut().take(NUM_FIELDS) {
                    *v = v.signum() * (v.abs() - k).max(0.0);
                }
                out
            }
        }
    }

    /// Accelerated proximal gradient from zero parameters.
    pub fn minimize(&self, max_iter: usize) -> LogisticParameters {
        let mut theta = [0.0; NPARAM];
        let mut momentum_point = theta;
        let mut t_k: f64 = 1.0;
        let mut step = 1.0;
        let mut f_theta = self.value(&theta);
        let mut converged = false;
        let mut iterations = 0;
        while iterations < max_iter {
            iterations += 1;
            let (f_y, g_y) = self.smooth(&momentum_point);
            let next = loop {
                let candidate = self.prox(std::array::from_fn(|j| momentum_point[j] - step * g_y[j]), step);
                let diff: [f64; NPARAM] = std::array::from_fn(|j| candidate[j] - momentum_point[j]);
                let model = f_y
                    + diff.iter().zip(&g_y).map(|(d, g)| d * g).sum::<f64>()
                    + diff.iter().map(|d| d * d).sum::<f64>() / (2.0 * step);
                if self.smooth(&candidate).0 <= model + 1e-12 || step < 1e-12 {
                    break candidate;
                }
                step *= 0.5;
            };
            let f_next = self.value(&next);
            let moved = next
                .iter()
                .zip(&theta)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            if f_next > f_theta {
                // restart momentum from the last accepted point
                momentum_point = theta;
                t_k = 1.0;
                continue;
            }
            let t_next = (1.0 + (1.0 + 4.0 * t_k * t_k).sqrt()) / 2.0;
            let prev = theta;
            theta = next;
            momentum_point = std::array::from_fn(|j| theta[j] + (t_k - 1.0) / t_next * (theta[j] - prev[j]));
            t_k = t_next;
            let improvement = f_theta - f_next;
            f_theta = f_next;
            step *= 2.0;
            if moved < TOL || improvement < TOL * TOL * f_theta.max(1.0) {
                converged = true;
                break;
            }
        }
        let mut weights = [0.0; NUM_FIELDS];
        weights.copy_from_slice(&theta[..NUM_FIELDS]);
        LogisticParameters {
            weights,
            bias: theta[NUM_FIELDS],
            final_loss: f_theta,
            iterations,
            converged,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticModel {
    pub params: LogisticParams,
    pub standardization: Option<Standardization>,
    pub training_digest: Option<String>,
    fitted: Option<LogisticParameters>,
}

impl LogisticModel {
    pub fn new(params: LogisticParams) -> Self {
        Self {
            params,
            standardization: None,
            training_digest: None,
            fitted: None,
        }
    }

    pub(crate) fn from_parts(
        params: LogisticParams,
        fitted: LogisticParameters,
        standardization: Standardization,
        training_digest: Option<String>,
    ) -> Self {
        Self {
            params,
            standardization: Some(standardization),
            training_digest,
            fitted: Some(fitted),
        }
    }

    pub fn fit(&mut self, x: &[Row], y: &[bool]) -> Result<()> {
        self.params.validate()?;
        super::check_classes(y)?;
        let std = Standardization::fit(x);
        let z: Vec<Row> = x.iter().map(|r| std.apply(r)).collect();
        let objective = LogisticObjective {
            z: &z,
            y,
            class_weight: self.params.class_weight,
            penalty: self.params.penalty,
            c: self.params.c,
        };
        let fitted = objective.minimize(self.params.max_iter);
        if !fitted.converged {
            log::warn!(
                "logistic regression did not converge in {} iterations (loss {:.6})",
                fitted.iterations,
                fitted.final_loss
            );
        }
        self.standardization = Some(std);
        self.fitted = Some(fitted);
        Ok(())
    }

    pub fn parameters(&self) -> Result<&LogisticParameters> {
        self.fitted.as_ref().ok_or(Error::Untrained)
    }

    pub fn converged(&self) -> bool {
        self.fitted.as_ref().is_some_and(|f| f.converged)
    }

    pub fn predict_proba(&self, row: &Row) -> Result<f64> {
        let fitted = self.parameters()?;
        let std = self.standardization.as_ref().ok_or(Error::Untrained)?;
        let z = std.apply(row);
        let mut theta = [0.0; NPARAM];
        theta[..NUM_FIELDS].copy_from_slice(&fitted.weights);
        theta[NUM_FIELDS] = fitted.bias;
        Ok(sigmoid(linear(&theta, &z)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn separable() -> (Vec<Row>, Vec<bool>) {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..200 {
            let pos = i % 4 == 0;
            let base = if pos { 0.9 } else { 0.0 };
            x.push(std::array::from_fn(|_| base + rng.random_range(0.0..0.1)));
            y.push(pos);
        }
        (x, y)
    }

    #[test]
    fn zero_parameters_give_one_half() {
        let m = LogisticModel::from_parts(
            LogisticParams::default(),
            LogisticParameters {
                weights: [0.0; NUM_FIELDS],
                bias: 0.0,
                final_loss: 0.0,
                iterations: 0,
                converged: true,
            },
            Standardization {
                mean: [0.0; NUM_FIELDS],
                scale: [1.0; NUM_FIELDS],
            },
            None,
        );
        assert_eq!(m.predict_proba(&[0.3; NUM_FIELDS]).unwrap(), 0.5);
        assert_eq!(m.predict_proba(&[1.0; NUM_FIELDS]).unwrap(), 0.5);
    }

    #[test]
    fn separable_toy_is_learned() {
        let (x, y) = separable();
        for penalty in [Penalty::L1, Penalty::L2] {
            let mut m = LogisticModel::new(LogisticParams {
                penalty,
                max_iter: 200,
                ..Default::default()
            });
            m.fit(&x, &y).unwrap();
            let correct = x
                .iter()
                .zip(&y)
                .filter(|(r, &l)| (m.predict_proba(r).unwrap() >= 0.5) == l)
                .count();
            assert_eq!(correct, x.len(), "{penalty:?}");
        }
    }

    #[test]
    fn training_is_deterministic() {
        let (x, y) = separable();
        let mut a = LogisticModel::new(LogisticParams::default());
        let mut b = LogisticModel::new(LogisticParams::default());
        a.fit(&x, &y).unwrap();
        b.fit(&x, &y).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn strong_l1_zeroes_weights() {
        let (x, y) = separable();
        let mut m = LogisticModel::new(LogisticParams {
            penalty: Penalty::L1,
            c: 1e-5,
            max_iter: 200,
            ..Default::default()
        });
        m.fit(&x, &y).unwrap();
        assert!(m.parameters().unwrap().weights.iter().all(|&w| w == 0.0));
    }

    #[test]
    fn class_weight_moves_the_bias() {
        let (x, y) = separable();
        let fit = |cw: f64| {
            let mut m = LogisticModel::new(LogisticParams {
                class_weight: cw,
                c: 1e-3,
                max_iter: 200,
                ..Default::default()
            });
            m.fit(&x, &y).unwrap();
            m.parameters().unwrap().bias
        };
        assert!(fit(100.0) > fit(0.01));
    }

    #[test]
    fn rejects_bad_params_and_single_class() {
        let (x, _) = separable();
        let mut m = LogisticModel::new(LogisticParams {
            c: 0.0,
            ..Default::default()
        });
        assert!(m.fit(&x, &vec![true; x.len()]).is_err());
        let mut m = LogisticModel::new(LogisticParams::default());
        assert!(matches!(m.fit(&x, &vec![false; x.len()]), Err(Error::Degenerate(_))));
    }
}
