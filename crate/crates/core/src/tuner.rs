//! Grid search with stratified k-fold cross-validation.
//!
//! Every (combination, fold) pair is an independent task; tasks run in
//! parallel and are reduced in combination order. The winner has the highest
//! mean F1, then the highest mean precision, then the smallest canonical
//! hyperparameter string.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::evaluate::{pair_metrics, PairMetrics};
use crate::models::{self, Hyperparameters, Model, ModelType, Row};
use crate::pairgen::{stratified_kfold, LabeledDataset};
use crate::similarity::FeatureVector;

/// Named hyperparameter axes for one model type.
///
/// JSON form: `{"model_type": "lr", "c": [0.1, 1.0], "penalty": ["l1", "l2"]}`.
/// Axes not listed keep their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub model_type: ModelType,
    #[serde(flatten)]
    pub axes: BTreeMap<String, Vec<Value>>,
}

fn decades(from: i32, to: i32) -> Vec<Value> {
    (from..=to).map(|e| Value::from(10f64.powi(e))).collect()
}

impl Grid {
    /// Default search space per model type.
    pub fn default_for(model_type: ModelType) -> Self {
        let mut axes = BTreeMap::new();
        match model_type {
            ModelType::Threshold => {
                axes.insert(
                    "beta".into(),
                    (1..=20).map(|i| Value::from(f64::from(i) / 20.0)).collect(),
                );
            }
            ModelType::Lr => {
                let mut cw = decades(-2, 2);
                cw.push(Value::from(500.0));
                axes.insert("class_weight".into(), cw);
                axes.insert("penalty".into(), vec!["l1".into(), "l2".into()]);
                axes.insert("c".into(), decades(-5, 0));
                axes.insert("max_iter".into(), vec![50.into(), 100.into(), 200.into()]);
            }
            ModelType::Tree => {
                axes.insert("max_leaf_nodes".into(), vec![5.into(), 6.into()]);
                axes.insert("ccp_alpha".into(), vec![Value::from(1e-4), Value::from(1e-5)]);
            }
            ModelType::Mlp => {
                axes.insert(
                    "hidden_layers".into(),
                    [vec![15], vec![10], vec![20], vec![10, 3], vec![6, 2]]
                        .into_iter()
                        .map(Value::from)
                        .collect(),
                );
                axes.insert("alpha".into(), decades(-7, 0));
            }
        }
        Self { model_type, axes }
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let g: Grid = serde_json::from_str(s)?;
        g.combinations()?;
        Ok(g)
    }

    pub fn combination_count(&self) -> usize {
        self.axes.values().map(Vec::len).product()
    }

    /// All combinations, axes varying fastest in reverse name order.
    pub fn combinations(&self) -> Result<Vec<Hyperparameters>> {
        if let Some((name, _)) = self.axes.iter().find(|(_, v)| v.is_empty()) {
            return Err(Error::InvalidConfig(format!("grid axis `{name}` is empty")));
        }
        let names: Vec<&String> = self.axes.keys().collect();
        let mut out = Vec::with_capacity(self.combination_count());
        let mut idx = vec![0usize; names.len()];
        loop {
            let mut obj = serde_json::Map::new();
            obj.insert("model_type".into(), Value::from(self.model_type.name()));
            for (k, name) in names.iter().enumerate() {
                obj.insert((*name).clone(), self.axes[*name][idx[k]].clone());
            }
            let hp: Hyperparameters = serde_json::from_value(Value::Object(obj))
                .map_err(|e| Error::InvalidConfig(format!("grid combination: {e}")))?;
            hp.validate()?;
            out.push(hp);
            let mut k = names.len();
            loop {
                if k == 0 {
                    return Ok(out);
                }
                k -= 1;
                idx[k] += 1;
                if idx[k] < self.axes[names[k]].len() {
                    break;
                }
                idx[k] = 0;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldScore {
    pub combination: usize,
    pub fold: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombinationSummary {
    pub combination: usize,
    pub hyperparameters: Hyperparameters,
    pub mean_precision: f64,
    pub mean_recall: f64,
    pub mean_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningReport {
    pub model_type: ModelType,
    pub folds: usize,
    pub seed: u64,
    pub combinations: usize,
    pub scores: Vec<FoldScore>,
    pub summaries: Vec<CombinationSummary>,
    pub best: Hyperparameters,
    /// How the winner was separated from equally scored combinations.
    pub tie_break: Vec<String>,
}

struct Prepared {
    x: Vec<Row>,
    d_all: Vec<f64>,
    y: Vec<bool>,
}

impl Prepared {
    fn subset(&self, idx: &[usize]) -> Prepared {
        Prepared {
            x: idx.iter().map(|&i| self.x[i]).collect(),
            d_all: idx.iter().map(|&i| self.d_all[i]).collect(),
            y: idx.iter().map(|&i| self.y[i]).collect(),
        }
    }
}

fn score(model: &Model, data: &Prepared) -> Result<PairMetrics> {
    let predictions = data
        .x
        .iter()
        .zip(&data.d_all)
        .map(|(row, &d_all)| model.predict(&FeatureVector { d: *row, d_all }).map(|d| d.is_match))
        .collect::<Result<Vec<bool>>>()?;
    pair_metrics(&predictions, &data.y)
}

/// Metrics of `model` on labeled pairs; implicit negatives count as true negatives.
pub fn evaluate_model(model: &Model, ds: &LabeledDataset) -> Result<PairMetrics> {
    let (x, y) = models::training_rows_unchecked(ds)?;
    let d_all = ds.pairs.iter().map(|p| p.features.d_all).collect();
    Ok(score(model, &Prepared { x, d_all, y })?.with_implicit_negatives(ds.implicit_negatives))
}

/// Fold seed for training inside cross-validation.
fn fold_seed(seed: u64, fold: usize) -> u64 {
    seed.wrapping_add(1 + fold as u64)
}

pub fn grid_search(train: &LabeledDataset, grid: &Grid, folds: usize, seed: u64, workers: usize) -> Result<TuningReport> {
    let combos = grid.combinations()?;
    log::info!(
        "grid search over {} combinations x {folds} folds for {}",
        combos.len(),
        grid.model_type
    );
    let assignment = stratified_kfold(train, folds, seed)?;
    let (x, y) = models::training_rows(train)?;
    let data = Prepared {
        x,
        d_all: train.pairs.iter().map(|p| p.features.d_all).collect(),
        y,
    };
    let splits: Vec<(Prepared, Prepared)> = (0..folds)
        .map(|k| {
            let (held, kept): (Vec<usize>, Vec<usize>) = (0..assignment.len()).partition(|&i| assignment[i] == k);
            (data.subset(&kept), data.subset(&held))
        })
        .collect();
    let tasks: Vec<(usize, usize)> = (0..combos.len())
        .flat_map(|c| (0..folds).map(move |k| (c, k)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    let results: Vec<Result<FoldScore>> = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(c, k)| {
                let (fit, held) = &splits[k];
                let model = models::train_rows(&fit.x, &fit.d_all, &fit.y, &combos[c], fold_seed(seed, k))?;
                let m = score(&model, held)?;
                Ok(FoldScore {
                    combination: c,
                    fold: k,
                    precision: m.precision,
                    recall: m.recall,
                    f1: m.f1,
                })
            })
            .collect()
    });
    let scores = results.into_iter().collect::<Result<Vec<_>>>()?;

    let summaries: Vec<CombinationSummary> = combos
        .iter()
        .enumerate()
        .map(|(c, hp)| {
            let rows = &scores[c * folds..(c + 1) * folds];
            let mean = |f: fn(&FoldScore) -> f64| rows.iter().map(f).sum::<f64>() / folds as f64;
            CombinationSummary {
                combination: c,
                hyperparameters: hp.clone(),
                mean_precision: mean(|s| s.precision),
                mean_recall: mean(|s| s.recall),
                mean_f1: mean(|s| s.f1),
            }
        })
        .collect();
    let (best, tie_break) = select(&summaries);
    Ok(TuningReport {
        model_type: grid.model_type,
        folds,
        seed,
        combinations: combos.len(),
        scores,
        best: summaries[best].hyperparameters.clone(),
        summaries,
        tie_break,
    })
}

fn select(summaries: &[CombinationSummary]) -> (usize, Vec<String>) {
    let mut trail = Vec::new();
    let top_f1 = summaries.iter().map(|s| s.mean_f1).fold(f64::NEG_INFINITY, f64::max);
    let mut pool: Vec<&CombinationSummary> = summaries.iter().filter(|s| s.mean_f1 == top_f1).collect();
    trail.push(format!("mean_f1 = {top_f1}: {} combination(s)", pool.len()));
    if pool.len() > 1 {
        let top_p = pool.iter().map(|s| s.mean_precision).fold(f64::NEG_INFINITY, f64::max);
        pool.retain(|s| s.mean_precision == top_p);
        trail.push(format!("mean_precision = {top_p}: {} combination(s)", pool.len()));
    }
    if pool.len() > 1 {
        pool.sort_by_key(|s| s.hyperparameters.canonical());
        trail.push(format!("smallest hyperparameters: {}", pool[0].hyperparameters.canonical()));
    }
    (pool[0].combination, trail)
}

/// Refits the selected hyperparameters on the whole training set.
pub fn final_fit(train: &LabeledDataset, best: &Hyperparameters, seed: u64) -> Result<Model> {
    models::train(train, best, seed)
}
