use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::Decision;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThresholdParams {
    pub beta: f64,
}

impl Default for ThresholdParams {
    fn default() -> Self {
        Self { beta: 0.75 }
    }
}

impl ThresholdParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(Error::InvalidConfig(format!("beta must be in (0, 1], got {}", self.beta)));
        }
        Ok(())
    }
}

/// Match iff the pooled coefficient reaches `beta`.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdModel {
    pub params: ThresholdParams,
    pub training_digest: Option<String>,
}

impl ThresholdModel {
    pub fn new(beta: f64) -> Result<Self> {
        let params = ThresholdParams { beta };
        params.validate()?;
        Ok(Self {
            params,
            training_digest: None,
        })
    }

    pub fn beta(&self) -> f64 {
        self.params.beta
    }

    pub fn predict(&self, d_all: f64) -> Decision {
        let is_match = d_all >= self.params.beta;
        Decision {
            is_match,
            confidence: if is_match { d_all } else { 1.0 - d_all },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_boundary_and_confidence() {
        let m = ThresholdModel::new(0.75).unwrap();
        assert_eq!(m.predict(0.75), Decision { is_match: true, confidence: 0.75 });
        let d = m.predict(0.3);
        assert!(!d.is_match);
        assert!((d.confidence - 0.7).abs() < 1e-15);
        assert_eq!(ThresholdModel::new(1.0).unwrap().predict(1.0).confidence, 1.0);
    }

    #[test]
    fn beta_range() {
        assert!(ThresholdModel::new(0.0).is_err());
        assert!(ThresholdModel::new(1.01).is_err());
        assert!(ThresholdModel::new(f64::NAN).is_err());
    }

    #[test]
    fn monotone_in_d_all() {
        let m = ThresholdModel::new(0.6).unwrap();
        let mut seen_match = false;
        for i in 0..=1000 {
            let d = m.predict(f64::from(i) / 1000.0);
            assert!(!seen_match || d.is_match);
            seen_match |= d.is_match;
        }
    }
}
