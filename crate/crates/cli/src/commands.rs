use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::Context;
use hhlink_core::cluster::{self, Algorithm, LinkEdge};
use hhlink_core::data_io::{self, StageRecord};
use hhlink_core::encoder::{Encoder, EncoderConfig};
use hhlink_core::evaluate::{cluster_metrics, EvalReport, PairwiseRow};
use hhlink_core::models::{Hyperparameters, Model};
use hhlink_core::pairgen::{self, CandidatePair, CompareOptions, LabeledDataset};
use hhlink_core::synth::{self, ClusterSizeDistribution, PatternDistribution};
use hhlink_core::tuner::{self, Grid};
use hhlink_core::usage::{self, Tenure, UsageReport};
use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::args::*;
use crate::{invalid, server};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

pub fn dispatch(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Encode(a) => encode(a),
        Command::Synth(a) => synth(a),
        Command::Pairs(a) => pairs(a),
        Command::Tune(a) => tune(a),
        Command::Train(a) => train(a),
        Command::Link(a) => link(a),
        Command::Cluster(a) => cluster(a),
        Command::Eval(a) => eval(a),
        Command::Metrics(a) => metrics(a),
        Command::DemoStays(a) => demo_stays(a),
        Command::Serve(a) => serve(a),
    }
}

/// Collects a stage's provenance and writes it to the output directory's manifest.
struct Stage {
    name: &'static str,
    dir: PathBuf,
    record: StageRecord,
}

impl Stage {
    fn new(name: &'static str, dir: PathBuf) -> anyhow::Result<Self> {
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Self {
            name,
            dir,
            record: StageRecord::new(TOOL_VERSION),
        })
    }

    /// Stage writing the single file `out`; the manifest goes next to it.
    fn for_file(name: &'static str, out: &Path) -> anyhow::Result<Self> {
        let dir = match out.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        Self::new(name, dir)
    }

    fn input(&mut self, path: &Path) -> anyhow::Result<()> {
        self.record.input(path)?;
        Ok(())
    }

    fn output(&mut self, path: &Path) -> anyhow::Result<()> {
        self.record.output(path)?;
        Ok(())
    }

    fn config(&mut self, key: &str, value: impl ToString) {
        self.record.config(key, value);
    }

    fn seed(&mut self, seed: u64) {
        self.record.seed = Some(seed);
    }

    fn finish(self) -> anyhow::Result<()> {
        data_io::record_stage(&self.dir, self.name, self.record)?;
        Ok(())
    }
}

fn load_key(key_file: Option<&Path>) -> anyhow::Result<(Vec<u8>, &'static str)> {
    let (key, source) = match key_file {
        Some(p) => {
            let mut k = std::fs::read(p).map_err(|e| invalid(format!("reading key file {}: {e}", p.display())))?;
            while k.last().is_some_and(|b| *b == b'\n' || *b == b'\r') {
                k.pop();
            }
            (k, "key-file")
        }
        None => match std::env::var("HHLINK_KEY") {
            Ok(k) => (k.into_bytes(), "env"),
            Err(_) => return Err(invalid("no key: set HHLINK_KEY or pass --key-file")),
        },
    };
    if key.is_empty() {
        return Err(invalid("the key is empty"));
    }
    Ok((key, source))
}

fn encode(a: EncodeArgs) -> anyhow::Result<()> {
    let (key, key_source) = load_key(a.key_file.as_deref())?;
    let encoder = Encoder::new(EncoderConfig::new(a.m, a.k, key)?)?;
    let profiles = data_io::read_profiles(&a.profiles)?;
    let encoded: Vec<_> = profiles.iter().map(|p| encoder.encode_profile(p)).collect();
    let flagged = encoded.iter().filter(|e| e.empty_mask() != 0).count();
    if flagged > 0 {
        warn!("{flagged} profiles have a field that is empty after normalization");
    }
    let mut stage = Stage::for_file("encode", &a.out)?;
    data_io::write_encoded(&a.out, &encoded)?;
    stage.input(&a.profiles)?;
    stage.output(&a.out)?;
    stage.config("m", a.m);
    stage.config("k", a.k);
    stage.config("key_source", key_source);
    info!("encoded {} profiles at m={}", encoded.len(), a.m);
    stage.finish()
}

fn synth(a: SynthArgs) -> anyhow::Result<()> {
    let mut stage = Stage::new("synth", a.out.clone())?;
    let roster = match (&a.roster, a.bundled_roster) {
        (Some(p), _) => {
            stage.input(p)?;
            data_io::read_profiles(p)?
        }
        (None, Some(n)) => {
            stage.config("bundled_roster", n);
            synth::bundled_roster(n, a.seed)
        }
        (None, None) => return Err(invalid("pass --roster or --bundled-roster")),
    };
    let sizes = match &a.size_dist {
        Some(p) => {
            stage.input(p)?;
            data_io::read_size_dist(p)?
        }
        None => ClusterSizeDistribution::manual_default(),
    };
    let patterns = match &a.patterns {
        Some(p) => {
            stage.input(p)?;
            data_io::read_patterns(p)?
        }
        None => PatternDistribution::manual_default(),
    };
    let corpus = synth::generate_corpus(&roster, &sizes, &patterns, a.seed)?;
    let profiles = a.out.join("profiles.csv");
    let truth = a.out.join("truth.csv");
    let stats = a.out.join("synth_stats.json");
    data_io::write_profiles(&profiles, &corpus.profiles)?;
    data_io::write_truth(&truth, &corpus.truth)?;
    data_io::write_json(&stats, &corpus.stats)?;
    for p in [&profiles, &truth, &stats] {
        stage.output(p)?;
    }
    stage.seed(a.seed);
    info!(
        "{} originals -> {} profiles, {} positive pairs",
        corpus.stats.originals, corpus.stats.total_profiles, corpus.stats.positive_pairs
    );
    stage.finish()
}

/// Counts reported next to `pairs.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairSummary {
    pub profiles: usize,
    pub comparisons: u64,
    pub floor: f64,
    pub candidates: usize,
    pub labeled: bool,
    pub positives: Option<usize>,
    pub negatives: Option<usize>,
    /// Non-matching pairs below the floor, never written out.
    pub implicit_negatives: Option<u64>,
}

fn compare_options(c: &CompareArgs) -> CompareOptions {
    CompareOptions {
        floor: c.floor,
        workers: c.workers,
        block_size: c.block_size,
    }
}

fn pairs(a: PairsArgs) -> anyhow::Result<()> {
    let encoded = data_io::read_encoded(&a.encoded)?;
    let candidates = pairgen::compare_all(&encoded, &compare_options(&a.compare))?;
    let n_candidates = candidates.len();
    let mut stage = Stage::for_file("pairs", &a.out)?;
    stage.input(&a.encoded)?;
    let (pairs, summary) = match &a.truth {
        Some(t) => {
            stage.input(t)?;
            let truth = data_io::read_truth(t)?;
            let ds = pairgen::label_pairs(candidates, &encoded, &truth)?;
            let pos = ds.pairs.iter().filter(|p| p.label == Some(true)).count();
            let summary = PairSummary {
                profiles: encoded.len(),
                comparisons: pairgen::pair_count(encoded.len() as u64),
                floor: a.compare.floor,
                candidates: n_candidates,
                labeled: true,
                positives: Some(pos),
                negatives: Some(ds.len() - pos),
                implicit_negatives: Some(ds.implicit_negatives),
            };
            (ds.pairs, summary)
        }
        None => {
            let summary = PairSummary {
                profiles: encoded.len(),
                comparisons: pairgen::pair_count(encoded.len() as u64),
                floor: a.compare.floor,
                candidates: n_candidates,
                labeled: false,
                positives: None,
                negatives: None,
                implicit_negatives: None,
            };
            (candidates, summary)
        }
    };
    data_io::write_pairs(&a.out, &pairs)?;
    let summary_path = stage.dir.join("pair_summary.json");
    data_io::write_json(&summary_path, &summary)?;
    stage.output(&a.out)?;
    stage.output(&summary_path)?;
    stage.config("floor", a.compare.floor);
    stage.config("block_size", a.compare.block_size);
    info!(
        "{} of {} pairs at or above floor {}; {} written",
        n_candidates,
        summary.comparisons,
        a.compare.floor,
        pairs.len()
    );
    stage.finish()
}

fn load_dataset(pairs: &Path, summary: Option<&Path>) -> anyhow::Result<LabeledDataset> {
    let pairs = data_io::read_pairs(pairs)?;
    if pairs.iter().any(|p| p.label.is_none()) {
        return Err(invalid("pairs have no labels; run `hhlink pairs` with --truth"));
    }
    let mut ds = LabeledDataset::new(pairs);
    if let Some(s) = summary {
        let s: PairSummary = data_io::read_json(s)?;
        ds.implicit_negatives = s.implicit_negatives.unwrap_or(0);
    }
    Ok(ds)
}

/// Train and test sides of the labeled pairs.
fn split(ds: &LabeledDataset, test_frac: f64, seed: u64) -> anyhow::Result<(LabeledDataset, LabeledDataset)> {
    if !(0.0..1.0).contains(&test_frac) {
        return Err(invalid(format!("--test-frac must be in [0, 1), got {test_frac}")));
    }
    if test_frac == 0.0 {
        return Ok((ds.clone(), LabeledDataset::new(Vec::new())));
    }
    Ok(pairgen::stratified_split(ds, 1.0 - test_frac, seed)?)
}

fn dataset_stage(stage: &mut Stage, d: &DatasetArgs) -> anyhow::Result<()> {
    stage.input(&d.pairs)?;
    if let Some(s) = &d.pair_summary {
        stage.input(s)?;
    }
    stage.config("test_frac", d.test_frac);
    stage.seed(d.seed);
    Ok(())
}

fn tune(a: TuneArgs) -> anyhow::Result<()> {
    let mut stage = Stage::new("tune", a.out.clone())?;
    let grid = match &a.grid {
        Some(p) => {
            stage.input(p)?;
            let text = std::fs::read_to_string(p).map_err(|e| invalid(format!("reading {}: {e}", p.display())))?;
            Grid::from_json(&text)?
        }
        None => Grid::default_for(a.model.expect("clap requires --model without --grid")),
    };
    if let Some(m) = a.model {
        if m != grid.model_type {
            return Err(invalid(format!("--model {m} does not match the grid's model type {}", grid.model_type)));
        }
    }
    let ds = load_dataset(&a.data.pairs, a.data.pair_summary.as_deref())?;
    let (train, _) = split(&ds, a.data.test_frac, a.data.seed)?;
    let report = tuner::grid_search(&train, &grid, a.folds, a.data.seed, a.workers)?;
    let out = a.out.join("tuning_report.json");
    data_io::write_json(&out, &report)?;
    dataset_stage(&mut stage, &a.data)?;
    stage.output(&out)?;
    stage.config("model", grid.model_type);
    stage.config("folds", a.folds);
    info!("best of {} combinations: {}", report.combinations, report.best.canonical());
    stage.finish()
}

fn read_hyperparameters(path: &Path) -> anyhow::Result<Hyperparameters> {
    let v: serde_json::Value = data_io::read_json(path)?;
    let v = match v.get("best") {
        Some(best) => best.clone(),
        None => v,
    };
    let hp: Hyperparameters =
        serde_json::from_value(v).map_err(|e| invalid(format!("{}: bad hyperparameters: {e}", path.display())))?;
    hp.validate()?;
    Ok(hp)
}

fn train(a: TrainArgs) -> anyhow::Result<()> {
    let mut stage = Stage::for_file("train", &a.out)?;
    let hp = match &a.params {
        Some(p) => {
            stage.input(p)?;
            read_hyperparameters(p)?
        }
        None => Hyperparameters::default_for(a.model.expect("clap requires --model without --params")),
    };
    if let Some(m) = a.model {
        if m != hp.model_type() {
            return Err(invalid(format!("--model {m} does not match hyperparameters for {}", hp.model_type())));
        }
    }
    let ds = load_dataset(&a.data.pairs, a.data.pair_summary.as_deref())?;
    let (train, _) = split(&ds, a.data.test_frac, a.data.seed)?;
    let model = tuner::final_fit(&train, &hp, a.data.seed)?;
    data_io::write_text(&a.out, &model.to_json()?)?;
    dataset_stage(&mut stage, &a.data)?;
    stage.output(&a.out)?;
    stage.config("hyperparameters", hp.canonical());
    info!("trained {} on {} pairs", hp.model_type(), train.len());
    stage.finish()
}

fn read_model(path: &Path) -> anyhow::Result<Model> {
    let text = std::fs::read_to_string(path).map_err(|e| invalid(format!("reading {}: {e}", path.display())))?;
    Ok(Model::from_json(&text)?)
}

fn link(a: LinkArgs) -> anyhow::Result<()> {
    let model = read_model(&a.model)?;
    let encoded = data_io::read_encoded(&a.encoded)?;
    let mut stage = Stage::for_file("link", &a.out)?;
    stage.input(&a.model)?;
    stage.input(&a.encoded)?;
    let candidates: Vec<CandidatePair> = match &a.pairs {
        Some(p) => {
            stage.input(p)?;
            let pairs = data_io::read_pairs(p)?;
            let ids: HashSet<&str> = encoded.iter().map(|e| e.profile_id.as_str()).collect();
            if let Some(bad) = pairs
                .iter()
                .flat_map(|p| [&*p.id_a, &*p.id_b])
                .find(|id| !ids.contains(id))
            {
                return Err(hhlink_core::Error::UnknownProfile(bad.to_string()).into());
            }
            pairs
        }
        None => {
            stage.config("floor", a.compare.floor);
            stage.config("block_size", a.compare.block_size);
            pairgen::compare_all(&encoded, &compare_options(&a.compare))?
        }
    };
    let mut links = Vec::new();
    for c in &candidates {
        let d = model.predict(&c.features)?;
        if d.is_match {
            links.push(LinkEdge::new(&*c.id_a, &*c.id_b, d.confidence)?);
        }
    }
    data_io::write_links(&a.out, &links)?;
    stage.output(&a.out)?;
    info!("{} of {} candidate pairs linked", links.len(), candidates.len());
    stage.finish()
}

fn algorithm_name(a: Algorithm) -> &'static str {
    match a {
        Algorithm::Center => "center",
        Algorithm::MergeCenter => "merge-center",
    }
}

fn cluster(a: ClusterArgs) -> anyhow::Result<()> {
    let edges = data_io::read_links(&a.links)?;
    let ids: Vec<String> = data_io::read_encoded(&a.encoded)?
        .into_iter()
        .map(|e| e.profile_id)
        .collect();
    let clustering = cluster::run(a.algo, &ids, &edges)?;
    let mut stage = Stage::for_file("cluster", &a.out)?;
    data_io::write_clusters(&a.out, &clustering)?;
    stage.input(&a.links)?;
    stage.input(&a.encoded)?;
    stage.output(&a.out)?;
    stage.config("algo", algorithm_name(a.algo));
    info!("{} profiles in {} clusters", clustering.profile_count(), clustering.len());
    stage.finish()
}

fn clustering_name(spec: &str) -> (String, PathBuf) {
    match spec.split_once('=') {
        Some((name, path)) if !name.is_empty() => (name.to_string(), PathBuf::from(path)),
        _ => {
            let path = PathBuf::from(spec);
            let name = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| spec.to_string());
            (name, path)
        }
    }
}

fn eval(a: EvalArgs) -> anyhow::Result<()> {
    let mut stage = Stage::new("eval", a.out.clone())?;
    let mut report = EvalReport::default();
    if let Some(pairs) = &a.pairs {
        stage.input(pairs)?;
        if let Some(s) = &a.pair_summary {
            stage.input(s)?;
        }
        let ds = load_dataset(pairs, a.pair_summary.as_deref())?;
        let (train, test) = split(&ds, a.test_frac, a.seed)?;
        for path in &a.model {
            stage.input(path)?;
            let model = read_model(path)?;
            let hp = model.to_artifact()?.hyperparameters;
            for (name, part) in [("train", &train), ("test", &test)] {
                if part.is_empty() {
                    continue;
                }
                report.pairwise.push(PairwiseRow {
                    model: model.model_type().to_string(),
                    dataset: name.to_string(),
                    hyperparameters: Some(hp.clone()),
                    metrics: tuner::evaluate_model(&model, part)?,
                });
            }
        }
        stage.config("test_frac", a.test_frac);
        stage.seed(a.seed);
    }
    if let Some(t) = &a.truth {
        stage.input(t)?;
        let truth = data_io::read_truth(t)?;
        let mut names = HashSet::new();
        for spec in &a.clusters {
            let (name, path) = clustering_name(spec);
            if !names.insert(name.clone()) {
                return Err(invalid(format!("clustering name `{name}` used twice")));
            }
            stage.input(&path)?;
            let c = data_io::read_clusters(&path)?;
            let m = cluster_metrics(&truth, &c)?;
            report.add_clustering(&name, &m, &cluster::cluster_stats(&c));
        }
    }
    let out = a.out.join("eval_report.json");
    data_io::write_json(&out, &report)?;
    stage.output(&out)?;
    stage.finish()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UsageOutput {
    pub top_percent: f64,
    pub reports: Vec<UsageReport>,
}

fn metrics(a: MetricsArgs) -> anyhow::Result<()> {
    if !(a.top_percent > 0.0 && a.top_percent <= 100.0) {
        return Err(invalid(format!("--top-percent must be in (0, 100], got {}", a.top_percent)));
    }
    let tenure = match a.tenure {
        TenureArg::Exclusive => Tenure::Exclusive,
        TenureArg::Inclusive => Tenure::Inclusive,
    };
    let mut stage = Stage::new("metrics", a.out.clone())?;
    let stays = data_io::read_stays(&a.stays)?;
    stage.input(&a.stays)?;
    let mut persons = vec![("unmerged".to_string(), usage::unmerged_stays(&stays))];
    if let Some(c) = &a.clusters {
        stage.input(c)?;
        let clustering = data_io::read_clusters(c)?;
        persons.push(("merged".to_string(), usage::merge_stays(&stays, &clustering)));
    }
    let mut reports = Vec::new();
    let mut hists = Vec::new();
    for (name, p) in &persons {
        let (r, h) = usage::usage_report(name, p, tenure, a.top_percent)?;
        if r.cohorts.too_small {
            warn!("{name}: too few persons for a top cohort");
        }
        reports.push(r);
        hists.push((name.clone(), h));
    }
    let report_path = a.out.join("usage_report.json");
    let hist_path = a.out.join("episode_hist.csv");
    data_io::write_json(
        &report_path,
        &UsageOutput {
            top_percent: a.top_percent,
            reports,
        },
    )?;
    data_io::write_episode_hist(&hist_path, &hists)?;
    stage.output(&report_path)?;
    stage.output(&hist_path)?;
    stage.config("tenure", format!("{tenure:?}").to_lowercase());
    stage.config("top_percent", a.top_percent);
    stage.finish()
}

fn demo_stays(a: DemoStaysArgs) -> anyhow::Result<()> {
    let mut stage = Stage::for_file("demo-stays", &a.out)?;
    let ids: Vec<String> = match (&a.encoded, &a.profiles) {
        (Some(e), _) => {
            stage.input(e)?;
            data_io::read_encoded(e)?.into_iter().map(|p| p.profile_id).collect()
        }
        (None, Some(p)) => {
            stage.input(p)?;
            data_io::read_profiles(p)?.into_iter().map(|p| p.profile_id).collect()
        }
        (None, None) => return Err(invalid("pass --encoded or --profiles")),
    };
    if a.shelters == 0 || a.days == 0 {
        return Err(invalid("--shelters and --days must be positive"));
    }
    let stays = usage::demo_stays(&ids, a.shelters, a.start, a.days, a.seed);
    data_io::write_stays(&a.out, &stays)?;
    stage.output(&a.out)?;
    stage.seed(a.seed);
    stage.config("shelters", a.shelters);
    stage.config("start", a.start);
    stage.config("days", a.days);
    info!("{} stays for {} profiles", stays.len(), ids.len());
    stage.finish()
}

fn serve(a: ServeArgs) -> anyhow::Result<()> {
    let profiles = data_io::read_profiles(&a.profiles)?;
    let mut adj = hhlink_core::adjudication::Adjudicator::with_log(profiles, a.seed, &a.decisions)?;
    adj.set_lease(Duration::from_secs(a.lease_minutes * 60));
    let addr = format!("{}:{}", a.host, a.port);
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(server::serve(adj, &addr, a.ui_dir.as_deref()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clustering_specs() {
        assert_eq!(clustering_name("cc=out/c.csv"), ("cc".to_string(), PathBuf::from("out/c.csv")));
        assert_eq!(clustering_name("out/merge.csv"), ("merge".to_string(), PathBuf::from("out/merge.csv")));
    }
}
