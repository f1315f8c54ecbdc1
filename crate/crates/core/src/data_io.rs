//! Readers and writers for the pipeline's file formats.
//!
//! Readers check the header, report bad values with their line number and
//! reject duplicate ids. Writers sort rows canonically, print reals with six
//! decimals and replace the target file atomically, so repeated runs produce
//! byte-identical files.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use chrono::NaiveDate;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cluster::{Cluster, Clustering, LinkEdge, Member};
use crate::encoder::{BloomVector, EncodedProfile, PlainProfile, NUM_FIELDS};
use crate::error::{Error, Result};
use crate::pairgen::CandidatePair;
use crate::similarity::FeatureVector;
use crate::synth::{ClusterSizeDistribution, ErrorPattern, PatternDistribution};
use crate::truth::GroundTruth;
use crate::usage::StayRecord;

pub const PROFILE_COLUMNS: [&str; 6] = ["profile_id", "first_name", "last_name", "dob_day", "dob_month", "dob_year"];
pub const PAIR_COLUMNS: [&str; 8] = ["id_a", "id_b", "d_first", "d_last", "d_day", "d_month", "d_year", "d_all"];
pub const LINK_COLUMNS: [&str; 3] = ["id_a", "id_b", "confidence"];
pub const CLUSTER_COLUMNS: [&str; 4] = ["profile_id", "cluster_id", "is_center", "confidence"];
pub const TRUTH_COLUMNS: [&str; 2] = ["cluster_id", "profile_id"];
pub const STAY_COLUMNS: [&str; 3] = ["profile_id", "shelter_id", "date"];
pub const SIZE_DIST_COLUMNS: [&str; 2] = ["size", "weight"];
pub const PATTERN_COLUMNS: [&str; 6] = ["d_first", "d_last", "d_day", "d_month", "d_year", "weight"];

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

fn display_name(path: &Path) -> String {
    path.display().to_string()
}

fn file_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::File {
        path: path.to_path_buf(),
        source,
    }
}

pub fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(file_err(path))
}

/// Writes `path` through a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, body: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    let tmp = tmp_path(path);
    let result = (|| {
        let mut w = BufWriter::new(File::create(&tmp).map_err(file_err(&tmp))?);
        body(&mut w)?;
        w.flush().map_err(file_err(&tmp))?;
        std::fs::rename(&tmp, path).map_err(file_err(path))
    })();
    if result.is_err() {
        let _ = std::fs::remove_file(&tmp);
    }
    result
}

fn tmp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".tmp");
    path.with_file_name(name)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    write_atomic(path, |w| Ok(w.write_all(text.as_bytes())?))
}

/// Pretty JSON with a trailing newline.
pub fn to_json_string<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &to_json_string(value)?)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(file_err(path))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(&display_name(path), e.line() as u64, e.to_string()))
}

/// Lowercase hex SHA-256 of a file's bytes.
pub fn file_digest(path: &Path) -> Result<String> {
    let mut r = open(path)?;
    let mut h = Sha256::new();
    let mut buf = [0u8; 1 << 16];
    loop {
        let n = r.read(&mut buf).map_err(file_err(path))?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

pub fn fmt_real(v: f64) -> String {
    format!("{v:.6}")
}

// ---------------------------------------------------------------------------
// CSV plumbing

struct Row<'a> {
    file: &'a str,
    line: u64,
    record: &'a csv::StringRecord,
    header: &'a [&'a str],
    index: &'a [Option<usize>],
}

impl Row<'_> {
    fn get(&self, col: usize) -> &str {
        let i = self.index[col].expect("required column");
        &self.record[i]
    }

    fn opt(&self, col: usize) -> Option<&str> {
        self.index[col].map(|i| &self.record[i])
    }

    fn err(&self, message: impl Into<String>) -> Error {
        Error::parse(self.file, self.line, message)
    }

    fn parse<T: FromStr>(&self, col: usize) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let raw = self.get(col);
        raw.parse()
            .map_err(|e| self.err(format!("column `{}`: bad value `{raw}`: {e}", self.header[col])))
    }

    fn non_empty(&self, col: usize) -> Result<&str> {
        let v = self.get(col);
        if v.is_empty() {
            return Err(self.err(format!("column `{}` is empty", self.header[col])));
        }
        Ok(v)
    }

    fn real(&self, col: usize) -> Result<f64> {
        let v: f64 = self.parse(col)?;
        if !v.is_finite() {
            return Err(self.err(format!("column `{}` is not finite", self.header[col])));
        }
        Ok(v)
    }

    fn unit(&self, col: usize) -> Result<f64> {
        let v = self.real(col)?;
        if !(0.0..=1.0).contains(&v) {
            return Err(self.err(format!("column `{}` = {v} outside [0, 1]", self.header[col])));
        }
        Ok(v)
    }

    fn flag(&self, col: usize) -> Result<bool> {
        flag_value(self.get(col)).ok_or_else(|| self.err(format!("column `{}` must be 0 or 1", self.header[col])))
    }
}

fn flag_value(s: &str) -> Option<bool> {
    match s {
        "1" => Some(true),
        "0" => Some(false),
        _ => None,
    }
}

fn flag_str(b: bool) -> &'static str {
    if b {
        "1"
    } else {
        "0"
    }
}

/// Reads a headered CSV. Columns in `required` must exist, columns in
/// `optional` may; any others are ignored.
fn read_table<R: Read, T>(
    file: &str,
    reader: R,
    required: &[&str],
    optional: &[&str],
    mut f: impl FnMut(&Row) -> Result<T>,
) -> Result<Vec<T>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::parse(file, 1, e.to_string()))?
        .clone();
    let position: HashMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h, i)).collect();
    let mut index = Vec::with_capacity(required.len() + optional.len());
    for &col in required {
        let i = position.get(col).copied().ok_or_else(|| Error::Schema {
            file: file.to_string(),
            column: col.to_string(),
        })?;
        index.push(Some(i));
    }
    index.extend(optional.iter().map(|col| position.get(col).copied()));
    let header: Vec<&str> = required.iter().chain(optional).copied().collect();

    let mut out = Vec::new();
    let mut record = csv::StringRecord::new();
    loop {
        match rdr.read_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line());
                return Err(Error::parse(file, line, e.to_string()));
            }
        }
        let line = record.position().map_or(0, |p| p.line());
        out.push(f(&Row {
            file,
            line,
            record: &record,
            header: &header,
            index: &index,
        })?);
    }
    Ok(out)
}

fn csv_writer(w: &mut dyn Write) -> csv::Writer<&mut dyn Write> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(w)
}

fn write_table<I>(path: &Path, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = Vec<String>>,
{
    write_atomic(path, |w| {
        let mut wtr = csv_writer(w);
        wtr.write_record(header)?;
        for row in rows {
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    })
}

fn check_unique<'a>(ids: impl IntoIterator<Item = &'a str>) -> Result<()> {
    let mut seen = HashSet::new();
    for id in ids {
        if !seen.insert(id) {
            return Err(Error::DuplicateId(id.to_string()));
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// profiles.csv / roster.csv

pub fn parse_profiles<R: Read>(file: &str, reader: R) -> Result<Vec<PlainProfile>> {
    let profiles = read_table(file, reader, &PROFILE_COLUMNS, &[], |r| {
        let p = PlainProfile {
            profile_id: r.non_empty(0)?.to_string(),
            first_name: r.get(1).to_string(),
            last_name: r.get(2).to_string(),
            dob_day: r.parse(3)?,
            dob_month: r.parse(4)?,
            dob_year: r.parse(5)?,
        };
        p.validate().map_err(|e| r.err(e.to_string()))?;
        Ok(p)
    })?;
    check_unique(profiles.iter().map(|p| p.profile_id.as_str()))?;
    Ok(profiles)
}

pub fn read_profiles(path: &Path) -> Result<Vec<PlainProfile>> {
    parse_profiles(&display_name(path), open(path)?)
}

pub fn write_profiles(path: &Path, profiles: &[PlainProfile]) -> Result<()> {
    let mut sorted: Vec<&PlainProfile> = profiles.iter().collect();
    sorted.sort_by(|a, b| a.profile_id.cmp(&b.profile_id));
    write_table(
        path,
        &PROFILE_COLUMNS,
        sorted.into_iter().map(|p| {
            vec![
                p.profile_id.clone(),
                p.first_name.clone(),
                p.last_name.clone(),
                p.dob_day.to_string(),
                p.dob_month.to_string(),
                p.dob_year.to_string(),
            ]
        }),
    )
}

// ---------------------------------------------------------------------------
// encoded.jsonl

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EncodedLine {
    profile_id: String,
    m: u32,
    fields: Vec<String>,
}

pub fn encoded_line(p: &EncodedProfile) -> String {
    let line = EncodedLine {
        profile_id: p.profile_id.clone(),
        m: p.m,
        fields: p.fields.iter().map(BloomVector::to_hex).collect(),
    };
    serde_json::to_string(&line).expect("encoded line serializes")
}

pub fn parse_encoded<R: BufRead>(file: &str, reader: R) -> Result<Vec<EncodedProfile>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i as u64 + 1;
        let line = line?;
        let err = |m: String| Error::parse(file, line_no, m);
        let rec: EncodedLine = serde_json::from_str(&line).map_err(|e| err(e.to_string()))?;
        if rec.profile_id.is_empty() {
            return Err(err("empty profile_id".into()));
        }
        if rec.m != 32 && rec.m != 64 {
            return Err(err(format!("m must be 32 or 64, got {}", rec.m)));
        }
        if rec.fields.len() != NUM_FIELDS {
            return Err(err(format!("expected {NUM_FIELDS} fields, found {}", rec.fields.len())));
        }
        let mut fields = [BloomVector::zeros(rec.m); NUM_FIELDS];
        for (j, hex) in rec.fields.iter().enumerate() {
            if hex.bytes().any(|b| b.is_ascii_uppercase()) {
                return Err(err(format!("field {j}: hex must be lowercase")));
            }
            fields[j] = BloomVector::from_hex(hex, rec.m).map_err(|e| err(format!("field {j}: {e}")))?;
        }
        out.push(EncodedProfile {
            profile_id: rec.profile_id,
            m: rec.m,
            fields,
        });
    }
    check_unique(out.iter().map(|p| p.profile_id.as_str()))?;
    Ok(out)
}

pub fn read_encoded(path: &Path) -> Result<Vec<EncodedProfile>> {
    parse_encoded(&display_name(path), open(path)?)
}

pub fn write_encoded(path: &Path, profiles: &[EncodedProfile]) -> Result<()> {
    let mut sorted: Vec<&EncodedProfile> = profiles.iter().collect();
    sorted.sort_by(|a, b| a.profile_id.cmp(&b.profile_id));
    write_atomic(path, |w| {
        for p in sorted {
            writeln!(w, "{}", encoded_line(p))?;
        }
        Ok(())
    })
}

// ---------------------------------------------------------------------------
// pairs.csv

/// Reads pairs; the `label` column is optional.
pub fn parse_pairs<R: Read>(file: &str, reader: R) -> Result<Vec<CandidatePair>> {
    let mut interned: HashMap<String, Arc<str>> = HashMap::new();
    let mut intern = |s: &str| -> Arc<str> {
        if let Some(a) = interned.get(s) {
            return a.clone();
        }
        let a: Arc<str> = Arc::from(s);
        interned.insert(s.to_string(), a.clone());
        a
    };
    let pairs = read_table(file, reader, &PAIR_COLUMNS, &["label"], |r| {
        let (a, b) = (r.non_empty(0)?, r.non_empty(1)?);
        if a == b {
            return Err(r.err(format!("pair links `{a}` to itself")));
        }
        let features = FeatureVector {
            d: [r.unit(2)?, r.unit(3)?, r.unit(4)?, r.unit(5)?, r.unit(6)?],
            d_all: r.unit(7)?,
        };
        let mut pair = CandidatePair::new(intern(a), intern(b), features);
        pair.label = match r.opt(8) {
            None => None,
            Some(v) => Some(flag_value(v).ok_or_else(|| r.err("column `label` must be 0 or 1"))?),
        };
        Ok(pair)
    })?;
    let mut seen = HashSet::new();
    for p in &pairs {
        if !seen.insert(p.key()) {
            return Err(Error::DuplicateId(format!("{},{}", p.id_a, p.id_b)));
        }
    }
    Ok(pairs)
}

pub fn read_pairs(path: &Path) -> Result<Vec<CandidatePair>> {
    parse_pairs(&display_name(path), open(path)?)
}

/// Writes pairs sorted by `(id_a, id_b)`. The label column is written when
/// every pair carries a label.
pub fn write_pairs(path: &Path, pairs: &[CandidatePair]) -> Result<()> {
    let labeled = !pairs.is_empty() && pairs.iter().all(|p| p.label.is_some());
    let mut header = PAIR_COLUMNS.to_vec();
    if labeled {
        header.push("label");
    }
    let mut sorted: Vec<&CandidatePair> = pairs.iter().collect();
    sorted.sort_by(|a, b| a.key().cmp(&b.key()));
    write_table(
        path,
        &header,
        sorted.into_iter().map(|p| {
            let mut row = Vec::with_capacity(9);
            row.push(p.id_a.to_string());
            row.push(p.id_b.to_string());
            row.extend(p.features.d.iter().map(|&v| fmt_real(v)));
            row.push(fmt_real(p.features.d_all));
            if let Some(l) = p.label.filter(|_| labeled) {
                row.push(flag_str(l).to_string());
            }
            row
        }),
    )
}

/// Rounds features to the precision written to `pairs.csv`.
pub fn round_features(fv: &FeatureVector) -> FeatureVector {
    let r = |v: f64| fmt_real(v).parse().expect("formatted real parses");
    FeatureVector {
        d: fv.d.map(r),
        d_all: r(fv.d_all),
    }
}

// ---------------------------------------------------------------------------
// links.csv

pub fn parse_links<R: Read>(file: &str, reader: R) -> Result<Vec<LinkEdge>> {
    let links = read_table(file, reader, &LINK_COLUMNS, &[], |r| {
        LinkEdge::new(r.non_empty(0)?, r.non_empty(1)?, r.real(2)?).map_err(|e| r.err(e.to_string()))
    })?;
    let mut seen = HashSet::new();
    for l in &links {
        if !seen.insert((l.id_a.as_str(), l.id_b.as_str())) {
            return Err(Error::DuplicateId(format!("{},{}", l.id_a, l.id_b)));
        }
    }
    Ok(links)
}

pub fn read_links(path: &Path) -> Result<Vec<LinkEdge>> {
    parse_links(&display_name(path), open(path)?)
}

pub fn write_links(path: &Path, links: &[LinkEdge]) -> Result<()> {
    let mut sorted: Vec<&LinkEdge> = links.iter().collect();
    sorted.sort_by(|a, b| (&a.id_a, &a.id_b).cmp(&(&b.id_a, &b.id_b)));
    write_table(
        path,
        &LINK_COLUMNS,
        sorted
            .into_iter()
            .map(|l| vec![l.id_a.clone(), l.id_b.clone(), fmt_real(l.weight)]),
    )
}

// ---------------------------------------------------------------------------
// clusters.csv

pub fn parse_clusters<R: Read>(file: &str, reader: R) -> Result<Clustering> {
    struct Rec {
        line: u64,
        profile: String,
        cluster: String,
        center: bool,
        confidence: Option<f64>,
    }
    let recs = read_table(file, reader, &CLUSTER_COLUMNS, &[], |r| {
        let confidence = match r.get(3) {
            "" => None,
            _ => Some(r.unit(3)?),
        };
        Ok(Rec {
            line: r.line,
            profile: r.non_empty(0)?.to_string(),
            cluster: r.non_empty(1)?.to_string(),
            center: r.flag(2)?,
            confidence,
        })
    })?;
    let mut groups: BTreeMap<String, Vec<Rec>> = BTreeMap::new();
    for rec in recs {
        if rec.center && rec.profile != rec.cluster {
            return Err(Error::parse(
                file,
                rec.line,
                format!("center `{}` must name its own cluster, found `{}`", rec.profile, rec.cluster),
            ));
        }
        groups.entry(rec.cluster.clone()).or_default().push(rec);
    }
    let mut clusters = Vec::with_capacity(groups.len());
    for (id, recs) in groups {
        let centers = recs.iter().filter(|r| r.center).count();
        if centers != 1 {
            return Err(Error::parse(file, recs[0].line, format!("cluster `{id}` has {centers} centers")));
        }
        clusters.push(Cluster {
            center: id,
            members: recs
                .into_iter()
                .map(|r| Member {
                    profile_id: r.profile,
                    confidence: r.confidence,
                })
                .collect(),
        });
    }
    Clustering::new(clusters)
}

pub fn read_clusters(path: &Path) -> Result<Clustering> {
    parse_clusters(&display_name(path), open(path)?)
}

pub fn write_clusters(path: &Path, clustering: &Clustering) -> Result<()> {
    write_table(
        path,
        &CLUSTER_COLUMNS,
        clustering.clusters().iter().flat_map(|c| {
            c.members.iter().map(move |m| {
                vec![
                    m.profile_id.clone(),
                    c.center.clone(),
                    flag_str(m.profile_id == c.center).to_string(),
                    m.confidence.map(fmt_real).unwrap_or_default(),
                ]
            })
        }),
    )
}

// ---------------------------------------------------------------------------
// truth.csv

pub fn parse_truth<R: Read>(file: &str, reader: R) -> Result<GroundTruth> {
    let rows = read_table(file, reader, &TRUTH_COLUMNS, &[], |r| {
        Ok((r.non_empty(0)?.to_string(), r.non_empty(1)?.to_string()))
    })?;
    GroundTruth::from_assignments(rows)
}

pub fn read_truth(path: &Path) -> Result<GroundTruth> {
    parse_truth(&display_name(path), open(path)?)
}

pub fn truth_csv(truth: &GroundTruth) -> Result<String> {
    let mut buf = Vec::new();
    {
        let mut wtr = csv_writer(&mut buf);
        wtr.write_record(TRUTH_COLUMNS)?;
        for (c, p) in truth.rows() {
            wtr.write_record([c, p])?;
        }
        wtr.flush()?;
    }
    Ok(String::from_utf8(buf).expect("csv output is utf-8"))
}

pub fn write_truth(path: &Path, truth: &GroundTruth) -> Result<()> {
    write_text(path, &truth_csv(truth)?)
}

// ---------------------------------------------------------------------------
// stays.csv

pub fn parse_stays<R: Read>(file: &str, reader: R) -> Result<Vec<StayRecord>> {
    read_table(file, reader, &STAY_COLUMNS, &[], |r| {
        let raw = r.get(2);
        let date = NaiveDate::parse_from_str(raw, "%Y-%m-%d")
            .map_err(|e| r.err(format!("column `date`: bad value `{raw}`: {e}")))?;
        Ok(StayRecord {
            profile_id: r.non_empty(0)?.to_string(),
            shelter_id: r.non_empty(1)?.to_string(),
            date,
        })
    })
}

pub fn read_stays(path: &Path) -> Result<Vec<StayRecord>> {
    parse_stays(&display_name(path), open(path)?)
}

/// Writes stays sorted by profile, date and shelter.
pub fn write_stays(path: &Path, stays: &[StayRecord]) -> Result<()> {
    let mut sorted: Vec<&StayRecord> = stays.iter().collect();
    sorted.sort_by(|a, b| (&a.profile_id, a.date, &a.shelter_id).cmp(&(&b.profile_id, b.date, &b.shelter_id)));
    write_table(
        path,
        &STAY_COLUMNS,
        sorted
            .into_iter()
            .map(|s| vec![s.profile_id.clone(), s.shelter_id.clone(), s.date.format("%Y-%m-%d").to_string()]),
    )
}

// ---------------------------------------------------------------------------
// size_dist.csv / patterns.csv

fn normalize(weights: &[f64], file: &str) -> Result<Vec<f64>> {
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::BadDistribution(format!("{file}: weights sum to {total}")));
    }
    Ok(weights.iter().map(|w| w / total).collect())
}

fn weight(r: &Row, col: usize) -> Result<f64> {
    let w = r.real(col)?;
    if w < 0.0 {
        return Err(r.err("negative weight"));
    }
    Ok(w)
}

/// Reads `size,weight` rows; weights are normalized to probabilities.
pub fn parse_size_dist<R: Read>(file: &str, reader: R) -> Result<ClusterSizeDistribution> {
    let rows = read_table(file, reader, &SIZE_DIST_COLUMNS, &[], |r| Ok((r.parse::<usize>(0)?, weight(r, 1)?)))?;
    let probs = normalize(&rows.iter().map(|r| r.1).collect::<Vec<_>>(), file)?;
    ClusterSizeDistribution::new(rows.iter().map(|r| r.0).zip(probs).collect())
}

pub fn read_size_dist(path: &Path) -> Result<ClusterSizeDistribution> {
    parse_size_dist(&display_name(path), open(path)?)
}

pub fn write_size_dist(path: &Path, dist: &ClusterSizeDistribution) -> Result<()> {
    write_table(
        path,
        &SIZE_DIST_COLUMNS,
        dist.buckets().iter().map(|&(s, p)| vec![s.to_string(), format!("{p}")]),
    )
}

/// Reads per-field distance patterns with weights, normalized to probabilities.
pub fn parse_patterns<R: Read>(file: &str, reader: R) -> Result<PatternDistribution> {
    let rows = read_table(file, reader, &PATTERN_COLUMNS, &[], |r| {
        let distances = [r.parse(0)?, r.parse(1)?, r.parse(2)?, r.parse(3)?, r.parse(4)?];
        Ok((distances, weight(r, 5)?))
    })?;
    let probs = normalize(&rows.iter().map(|r| r.1).collect::<Vec<_>>(), file)?;
    let mut seen = HashSet::new();
    for (d, _) in &rows {
        if !seen.insert(*d) {
            return Err(Error::BadDistribution(format!("{file}: pattern {d:?} listed twice")));
        }
    }
    PatternDistribution::new(
        rows.into_iter()
            .zip(probs)
            .map(|((distances, _), probability)| ErrorPattern { distances, probability })
            .collect(),
    )
}

pub fn read_patterns(path: &Path) -> Result<PatternDistribution> {
    parse_patterns(&display_name(path), open(path)?)
}

pub fn write_patterns(path: &Path, dist: &PatternDistribution) -> Result<()> {
    write_table(
        path,
        &PATTERN_COLUMNS,
        dist.patterns().iter().map(|p| {
            let mut row: Vec<String> = p.distances.iter().map(usize::to_string).collect();
            row.push(format!("{}", p.probability));
            row
        }),
    )
}

// ---------------------------------------------------------------------------
// episode_hist.csv

/// Episode length in stays against the number of episodes, per clustering.
pub fn write_episode_hist(path: &Path, hists: &[(String, Vec<(usize, usize)>)]) -> Result<()> {
    write_table(
        path,
        &["clustering", "episode_stays", "count"],
        hists.iter().flat_map(|(name, hist)| {
            hist.iter()
                .map(move |&(len, n)| vec![name.clone(), len.to_string(), n.to_string()])
        }),
    )
}

// ---------------------------------------------------------------------------
// manifest.json

/// Provenance of one pipeline stage's outputs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub tool_version: String,
    /// Input file name to SHA-256.
    pub inputs: BTreeMap<String, String>,
    /// Output file name to SHA-256.
    pub outputs: BTreeMap<String, String>,
    pub seed: Option<u64>,
    pub config: BTreeMap<String, String>,
}

impl StageRecord {
    pub fn new(tool_version: impl Into<String>) -> Self {
        Self {
            tool_version: tool_version.into(),
            ..Self::default()
        }
    }

    /// Records an input by file name and digest.
    pub fn input(&mut self, path: &Path) -> Result<&mut Self> {
        self.inputs.insert(file_label(path), file_digest(path)?);
        Ok(self)
    }

    pub fn output(&mut self, path: &Path) -> Result<&mut Self> {
        self.outputs.insert(file_label(path), file_digest(path)?);
        Ok(self)
    }

    pub fn config(&mut self, key: impl Into<String>, value: impl ToString) -> &mut Self {
        self.config.insert(key.into(), value.to_string());
        self
    }
}

/// File name without directories, so records do not depend on where a run was placed.
pub fn file_label(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub stages: BTreeMap<String, StageRecord>,
}

impl Default for Manifest {
    fn default() -> Self {
        Self {
            format_version: MANIFEST_VERSION,
            stages: BTreeMap::new(),
        }
    }
}

impl Manifest {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        if !path.exists() {
            return Ok(Self::default());
        }
        let m: Manifest = read_json(&path)?;
        if m.format_version != MANIFEST_VERSION {
            return Err(Error::InvalidConfig(format!(
                "{}: unsupported manifest version {}",
                path.display(),
                m.format_version
            )));
        }
        Ok(m)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        write_json(&dir.join(MANIFEST_FILE), self)
    }
}

/// Adds or replaces `stage` in the manifest of `dir`.
pub fn record_stage(dir: &Path, stage: &str, record: StageRecord) -> Result<()> {
    let mut m = Manifest::load(dir)?;
    m.stages.insert(stage.to_string(), record);
    m.save(dir)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{Encoder, EncoderConfig};

    fn profile(id: &str, first: &str, last: &str) -> PlainProfile {
        PlainProfile {
            profile_id: id.into(),
            first_name: first.into(),
            last_name: last.into(),
            dob_day: 3,
            dob_month: 11,
            dob_year: 1980,
        }
    }

    #[test]
    fn profiles_round_trip_with_quoting() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("profiles.csv");
        let ps = vec![profile("b", "Anne, Marie", "O\"Neil"), profile("a", "Geoff", "Smith")];
        write_profiles(&path, &ps).unwrap();
        let back = read_profiles(&path).unwrap();
        assert_eq!(back, vec![ps[1].clone(), ps[0].clone()]);
    }

    #[test]
    fn missing_column_names_it() {
        let data = "profile_id,first_name,dob_day,dob_month,dob_year\nx,a,1,1,1990\n";
        match parse_profiles("p.csv", data.as_bytes()) {
            Err(Error::Schema { column, .. }) => assert_eq!(column, "last_name"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_value_reports_line() {
        let data = "profile_id,first_name,last_name,dob_day,dob_month,dob_year\nx,a,b,1,1,1990\ny,a,b,x,1,1990\n";
        match parse_profiles("p.csv", data.as_bytes()) {
            Err(Error::Parse { line, message, .. }) => {
                assert_eq!(line, 3);
                assert!(message.contains("dob_day"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn duplicate_profile_id() {
        let data = "profile_id,first_name,last_name,dob_day,dob_month,dob_year\nx,a,b,1,1,1990\nx,c,d,1,1,1990\n";
        assert!(matches!(parse_profiles("p.csv", data.as_bytes()), Err(Error::DuplicateId(id)) if id == "x"));
    }

    #[test]
    fn encoded_round_trip_and_hex_length() {
        let enc = Encoder::new(EncoderConfig::new(64, 2, b"k".to_vec()).unwrap()).unwrap();
        let ps: Vec<_> = [profile("2", "ann", "lee"), profile("1", "bob", "ray")]
            .iter()
            .map(|p| enc.encode_profile(p))
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("encoded.jsonl");
        write_encoded(&path, &ps).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("{\"profile_id\":\"1\",\"m\":64,\"fields\":[\""));
        let back = read_encoded(&path).unwrap();
        assert_eq!(back, vec![ps[1].clone(), ps[0].clone()]);

        let long = text.lines().nth(1).unwrap().replacen("\"fields\":[\"", "\"fields\":[\"0", 1);
        let short = format!("{}\n{long}\n", text.lines().next().unwrap());
        match parse_encoded("e.jsonl", short.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn pairs_round_trip_at_written_precision() {
        let mk = |a: &str, b: &str, v: f64, l: bool| {
            let mut p = CandidatePair::new(
                a.into(),
                b.into(),
                FeatureVector {
                    d: [v, 1.0, 0.0, 2.0 / 3.0, 0.5],
                    d_all: v,
                },
            );
            p.label = Some(l);
            p
        };
        let pairs = vec![mk("c", "a", 0.123_456_78, true), mk("a", "b", 1.0 / 3.0, false)];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pairs.csv");
        write_pairs(&path, &pairs).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            "id_a,id_b,d_first,d_last,d_day,d_month,d_year,d_all,label"
        );
        assert_eq!(text.lines().nth(1).unwrap(), "a,b,0.333333,1.000000,0.000000,0.666667,0.500000,0.333333,0");
        let back = read_pairs(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[1].key(), ("a", "c"));
        assert_eq!(back[1].features, round_features(&pairs[0].features));
        assert_eq!(back[0].label, Some(false));
    }

    #[test]
    fn unlabeled_pairs_omit_label_column() {
        let p = CandidatePair::new("a".into(), "b".into(), FeatureVector::ONES);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pairs.csv");
        write_pairs(&path, &[p]).unwrap();
        let back = read_pairs(&path).unwrap();
        assert_eq!(back[0].label, None);
    }

    #[test]
    fn clusters_round_trip() {
        let c = Clustering::new(vec![
            Cluster {
                center: "a".into(),
                members: vec![
                    Member {
                        profile_id: "a".into(),
                        confidence: Some(0.9),
                    },
                    Member {
                        profile_id: "c".into(),
                        confidence: Some(0.8),
                    },
                ],
            },
            Cluster {
                center: "b".into(),
                members: vec![Member {
                    profile_id: "b".into(),
                    confidence: None,
                }],
            },
        ])
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("clusters.csv");
        write_clusters(&path, &c).unwrap();
        assert_eq!(
            std::fs::read_to_string(&path).unwrap(),
            "profile_id,cluster_id,is_center,confidence\na,a,1,0.900000\nc,a,0,0.800000\nb,b,1,\n"
        );
        assert_eq!(read_clusters(&path).unwrap(), c);
    }

    #[test]
    fn cluster_without_center_is_rejected() {
        let data = "profile_id,cluster_id,is_center,confidence\na,a,0,\n";
        assert!(matches!(parse_clusters("c.csv", data.as_bytes()), Err(Error::Parse { .. })));
    }

    #[test]
    fn truth_and_links_round_trip() {
        let t = GroundTruth::from_assignments([("g2", "c"), ("g1", "b"), ("g1", "a")]).unwrap();
        let csv = truth_csv(&t).unwrap();
        assert_eq!(csv, "cluster_id,profile_id\ng1,a\ng1,b\ng2,c\n");
        assert_eq!(parse_truth("t.csv", csv.as_bytes()).unwrap(), t);

        let links = vec![LinkEdge::new("b", "a", 0.5).unwrap(), LinkEdge::new("a", "c", 1.0).unwrap()];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("links.csv");
        write_links(&path, &links).unwrap();
        assert_eq!(read_links(&path).unwrap(), links);
    }

    #[test]
    fn stays_parse_dates_strictly() {
        let ok = "profile_id,shelter_id,date\np,S01,2020-02-29\n";
        assert_eq!(parse_stays("s.csv", ok.as_bytes()).unwrap()[0].date.to_string(), "2020-02-29");
        let bad = "profile_id,shelter_id,date\np,S01,2021-02-29\n";
        assert!(matches!(parse_stays("s.csv", bad.as_bytes()), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn distributions_normalize_weights() {
        let d = parse_size_dist("s.csv", "size,weight\n1,3\n2,1\n".as_bytes()).unwrap();
        assert_eq!(d.buckets(), &[(1, 0.75), (2, 0.25)]);
        let p = parse_patterns(
            "p.csv",
            "d_first,d_last,d_day,d_month,d_year,weight\n0,0,0,0,0,1\n1,0,0,0,0,1\n".as_bytes(),
        )
        .unwrap();
        assert_eq!(p.identical_share(), 0.5);
    }

    #[test]
    fn default_distributions_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let sp = dir.path().join("size_dist.csv");
        let pp = dir.path().join("patterns.csv");
        write_size_dist(&sp, &ClusterSizeDistribution::manual_default()).unwrap();
        write_patterns(&pp, &PatternDistribution::manual_default()).unwrap();
        let s = read_size_dist(&sp).unwrap();
        let p = read_patterns(&pp).unwrap();
        for (a, b) in s.buckets().iter().zip(ClusterSizeDistribution::manual_default().buckets()) {
            assert_eq!(a.0, b.0);
            assert!((a.1 - b.1).abs() < 1e-15);
        }
        assert!((p.identical_share() - PatternDistribution::manual_default().identical_share()).abs() < 1e-15);
    }

    #[test]
    fn manifest_accumulates_stages() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("x.csv");
        write_text(&f, "abc").unwrap();
        let mut r = StageRecord::new("0.1.0");
        r.output(&f).unwrap().config("m", 64);
        r.seed = Some(7);
        record_stage(dir.path(), "encode", r.clone()).unwrap();
        record_stage(dir.path(), "pairs", StageRecord::new("0.1.0")).unwrap();
        let m = Manifest::load(dir.path()).unwrap();
        assert_eq!(m.stages.len(), 2);
        assert_eq!(
            m.stages["encode"].outputs["x.csv"],
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        assert!(!dir.path().join("manifest.json.tmp").exists());
    }
}
