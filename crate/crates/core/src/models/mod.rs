//! Pairwise match classifiers over per-field Dice features.
//!
//! The threshold model decides on the pooled coefficient alone; the logistic,
//! tree and perceptron models consume the five per-field coefficients and
//! output a match probability. Probabilistic models call a match at
//! `p >= 0.5` and report `max(p, 1 - p)` as confidence.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::encoder::NUM_FIELDS;
use crate::error::{Error, Result};
use crate::pairgen::LabeledDataset;
use crate::similarity::FeatureVector;

pub mod logistic;
pub mod mlp;
pub mod threshold;
pub mod tree;

pub use logistic::{LogisticModel, LogisticObjective, LogisticParams, Penalty};
pub use mlp::{MlpModel, MlpNetwork, MlpParams};
pub use threshold::{ThresholdModel, ThresholdParams};
pub use tree::{TreeModel, TreeNode, TreeParams};

pub const ARTIFACT_VERSION: u32 = 1;

pub type Row = [f64; NUM_FIELDS];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelType {
    Threshold,
    Lr,
    Tree,
    Mlp,
}

impl ModelType {
    pub fn name(self) -> &'static str {
        match self {
            ModelType::Threshold => "threshold",
            ModelType::Lr => "lr",
            ModelType::Tree => "tree",
            ModelType::Mlp => "mlp",
        }
    }
}

impl std::str::FromStr for ModelType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "threshold" => Ok(ModelType::Threshold),
            "lr" => Ok(ModelType::Lr),
            "tree" => Ok(ModelType::Tree),
            "mlp" => Ok(ModelType::Mlp),
            other => Err(Error::InvalidConfig(format!("unknown model type `{other}`"))),
        }
    }
}

impl std::fmt::Display for ModelType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Hyperparameters for any model type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model_type", rename_all = "lowercase")]
pub enum Hyperparameters {
    Threshold(ThresholdParams),
    Lr(LogisticParams),
    Tree(TreeParams),
    Mlp(MlpParams),
}

impl Hyperparameters {
    pub fn default_for(model_type: ModelType) -> Self {
        match model_type {
            ModelType::Threshold => Hyperparameters::Threshold(ThresholdParams::default()),
            ModelType::Lr => Hyperparameters::Lr(LogisticParams::default()),
            ModelType::Tree => Hyperparameters::Tree(TreeParams::default()),
            ModelType::Mlp => Hyperparameters::Mlp(MlpParams::default()),
        }
    }

    pub fn model_type(&self) -> ModelType {
        match self {
            Hyperparameters::Threshold(_) => ModelType::Threshold,
            Hyperparameters::Lr(_) => ModelType::Lr,
            Hyperparameters::Tree(_) => ModelType::Tree,
            Hyperparameters::Mlp(_) => ModelType::Mlp,
        }
    }

    /// Stable string form used for tie-breaking and reports.
    pub fn canonical(&self) -> String {
        serde_json::to_string(self).expect("hyperparameters serialize")
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Hyperparameters::Threshold(p) => p.validate(),
            Hyperparameters::Lr(p) => p.validate(),
            Hyperparameters::Tree(p) => p.validate(),
            Hyperparameters::Mlp(p) => p.validate(),
        }
    }
}

/// A binary match decision with its confidence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decision {
    pub is_match: bool,
    pub confidence: f64,
}

impl Decision {
    /// Decision for a match probability, closed at 0.5.
    pub fn from_probability(p: f64) -> Self {
        let is_match = p >= 0.5;
        Decision {
            is_match,
            confidence: if is_match { p } else { 1.0 - p },
        }
    }
}

/// Per-feature mean and scale fit on training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: Row,
    pub scale: Row,
}

impl Standardization {
    pub fn fit(x: &[Row]) -> Self {
        let n = x.len().max(1) as f64;
        let mut mean = [0.0; NUM_FIELDS];
        for row in x {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = [0.0; NUM_FIELDS];
        for row in x {
            for j in 0..NUM_FIELDS {
                var[j] += (row[j] - mean[j]).powi(2);
            }
        }
        let scale = var.map(|v| {
            let sd = (v / n).sqrt();
            if sd > 1e-12 {
                sd
            } else {
                1.0
            }
        });
        Self { mean, scale }
    }

    pub fn apply(&self, row: &Row) -> Row {
        std::array::from_fn(|j| (row[j] - self.mean[j]) / self.scale[j])
    }
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Model inputs and labels of the materialized pairs.
pub fn training_rows(ds: &LabeledDataset) -> Result<(Vec<Row>, Vec<bool>)> {
    let (x, y) = training_rows_unchecked(ds)?;
    check_classes(&y)?;
    Ok((x, y))
}

/// As [`training_rows`], without requiring both classes.
pub fn training_rows_unchecked(ds: &LabeledDataset) -> Result<(Vec<Row>, Vec<bool>)> {
    let mut x = Vec::with_capacity(ds.len());
    let mut y = Vec::with_capacity(ds.len());
    for p in &ds.pairs {
        let label = p.label.ok_or_else(|| Error::Degenerate("unlabeled pair in data set".into()))?;
        x.push(*p.features.inputs());
        y.push(label);
    }
    Ok((x, y))
}

pub(crate) fn check_classes(y: &[bool]) -> Result<()> {
    let pos = y.iter().filter(|&&v| v).count();
    if pos == 0 || pos == y.len() {
        return Err(Error::Degenerate(format!(
            "training data has {pos} positives and {} negatives",
            y.len() - pos
        )));
    }
    Ok(())
}

/// SHA-256 over hyperparameters, rows and labels.
pub fn training_digest(hp: &Hyperparameters, x: &[Row], y: &[bool]) -> String {
    let mut h = Sha256::new();
    h.update(hp.canonical().as_bytes());
    for (row, &label) in x.iter().zip(y) {
        for v in row {
            h.update(v.to_le_bytes());
        }
        h.update([u8::from(label)]);
    }
    hex::encode(h.finalize())
}

/// A trained classifier of any type.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Threshold(ThresholdModel),
    Lr(LogisticModel),
    Tree(TreeModel),
    Mlp(MlpModel),
}

impl Model {
    pub fn model_type(&self) -> ModelType {
        self.hyperparameters().model_type()
    }

    pub fn hyperparameters(&self) -> Hyperparameters {
        match self {
            Model::Threshold(m) => Hyperparameters::Threshold(m.params.clone()),
            Model::Lr(m) => Hyperparameters::Lr(m.params.clone()),
            Model::Tree(m) => Hyperparameters::Tree(m.params.clone()),
            Model::Mlp(m) => Hyperparameters::Mlp(m.params.clone()),
        }
    }

    pub fn predict(&self, fv: &FeatureVector) -> Result<Decision> {
        match self {
            Model::Threshold(m) => Ok(m.predict(fv.d_all)),
            Model::Lr(m) => m.predict_proba(fv.inputs()).map(Decision::from_probability),
            Model::Tree(m) => m.predict_proba(fv.inputs()).map(Decision::from_probability),
            Model::Mlp(m) => m.predict_proba(fv.inputs()).map(Decision::from_probability),
        }
    }

    pub fn training_digest(&self) -> Option<&str> {
        match self {
            Model::Threshold(m) => m.training_digest.as_deref(),
            Model::Lr(m) => m.training_digest.as_deref(),
            Model::Tree(m) => m.training_digest.as_deref(),
            Model::Mlp(m) => m.training_digest.as_deref(),
        }
    }

    pub fn to_artifact(&self) -> Result<ModelArtifact> {
        let (parameters, standardization) = match self {
            Model::Threshold(_) => (serde_json::Value::Null, None),
            Model::Lr(m) => (serde_json::to_value(m.parameters()?)?, m.standardization.clone()),
            Model::Tree(m) => (serde_json::to_value(m.nodes()?)?, None),
            Model::Mlp(m) => (serde_json::to_value(m.network()?)?, m.standardization.clone()),
        };
        let mut hyperparameters = serde_json::to_value(self.hyperparameters())?;
        if let Some(obj) = hyperparameters.as_object_mut() {
            obj.remove("model_type");
        }
        Ok(ModelArtifact {
            format_version: ARTIFACT_VERSION,
            model_type: self.model_type(),
            hyperparameters,
            parameters,
            standardization,
            training_digest: self.training_digest().map(str::to_string),
        })
    }

    pub fn from_artifact(a: ModelArtifact) -> Result<Self> {
        if a.format_version != ARTIFACT_VERSION {
            return Err(Error::InvalidConfig(format!(
                "unsupported model artifact version {}",
                a.format_version
            )));
        }
        let mut hp = a.hyperparameters;
        if let Some(obj) = hp.as_object_mut() {
            obj.insert("model_type".into(), serde_json::Value::String(a.model_type.name().into()));
        }
        let hp: Hyperparameters = serde_json::from_value(hp)?;
        hp.validate()?;
        let digest = a.training_digest;
        let model = match hp {
            Hyperparameters::Threshold(p) => Model::Threshold(ThresholdModel {
                params: p,
                training_digest: digest,
            }),
            Hyperparameters::Lr(p) => {
                let std = a.standardization.ok_or(Error::Untrained)?;
                Model::Lr(LogisticModel::from_parts(p, serde_json::from_value(a.parameters)?, std, digest))
            }
            Hyperparameters::Tree(p) => Model::Tree(TreeModel::from_parts(p, serde_json::from_value(a.parameters)?, digest)?),
            Hyperparameters::Mlp(p) => {
                let std = a.standardization.ok_or(Error::Untrained)?;
                Model::Mlp(MlpModel::from_parts(p, serde_json::from_value(a.parameters)?, std, digest)?)
            }
        };
        Ok(model)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_artifact()?)? + "\n")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Self::from_artifact(serde_json::from_str(s)?)
    }
}

/// Persisted form of a trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub format_version: u32,
    pub model_type: ModelType,
    pub hyperparameters: serde_json::Value,
    pub parameters: serde_json::Value,
    pub standardization: Option<Standardization>,
    pub training_digest: Option<String>,
}

/// Trains a model of the type implied by `hp` on the materialized pairs.
pub fn train(ds: &LabeledDataset, hp: &Hyperparameters, seed: u64) -> Result<Model> {
    let (x, y) = training_rows(ds)?;
    let d_all: Vec<f64> = ds.pairs.iter().map(|p| p.features.d_all).collect();
    train_rows(&x, &d_all, &y, hp, seed)
}

/// Trains on raw rows; `d_all` is only read by the threshold model.
pub fn train_rows(x: &[Row], d_all: &[f64], y: &[bool], hp: &Hyperparameters, seed: u64) -> Result<Model> {
    hp.validate()?;
    if x.len() != y.len() || d_all.len() != y.len() {
        return Err(Error::MisalignedInputs(x.len(), y.len()));
    }
    check_classes(y)?;
    let digest = Some(training_digest(hp, x, y));
    Ok(match hp {
        Hyperparameters::Threshold(p) => Model::Threshold(ThresholdModel {
            params: p.clone(),
            training_digest: digest,
        }),
        Hyperparameters::Lr(p) => {
            let mut m = LogisticModel::new(p.clone());
            m.fit(x, y)?;
            m.training_digest = digest;
            Model::Lr(m)
        }
        Hyperparameters::Tree(p) => {
            let mut m = TreeModel::new(p.clone());
            m.fit(x, y)?;
            m.training_digest = digest;
            Model::Tree(m)
        }
        Hyperparameters::Mlp(p) => {
            let mut m = MlpModel::new(p.clone());
            m.fit(x, y, seed)?;
            m.training_digest = digest;
            Model::Mlp(m)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn probability_decision_boundary() {
        let d = Decision::from_probability(0.5);
        assert!(d.is_match);
        assert_eq!(d.confidence, 0.5);
        let d = Decision::from_probability(0.2);
        assert!(!d.is_match);
        assert!((d.confidence - 0.8).abs() < 1e-15);
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0);
        assert_eq!(sigmoid(800.0), 1.0);
        assert!((sigmoid(2.0) + sigmoid(-2.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn standardization_handles_constant_columns() {
        let x = vec![[1.0, 0.0, 2.0, 2.0, 2.0], [3.0, 0.0, 2.0, 2.0, 2.0]];
        let s = Standardization::fit(&x);
        assert_eq!(s.mean[0], 2.0);
        assert_eq!(s.scale[0], 1.0);
        assert_eq!(s.scale[1], 1.0);
        assert_eq!(s.apply(&x[0])[0], -1.0);
    }

    #[test]
    fn model_type_names_round_trip() {
        for t in [ModelType::Threshold, ModelType::Lr, ModelType::Tree, ModelType::Mlp] {
            assert_eq!(t.name().parse::<ModelType>().unwrap(), t);
        }
        assert!("svm".parse::<ModelType>().is_err());
    }

    #[test]
    fn untrained_models_refuse_to_predict() {
        let x = [0.5; NUM_FIELDS];
        assert!(matches!(
            LogisticModel::new(LogisticParams::default()).predict_proba(&x),
            Err(Error::Untrained)
        ));
        assert!(matches!(
            TreeModel::new(TreeParams::default()).predict_proba(&x),
            Err(Error::Untrained)
        ));
        assert!(matches!(
            MlpModel::new(MlpParams::default()).predict_proba(&x),
            Err(Error::Untrained)
        ));
    }
}
