//! Manual ground-truth workflow.
//!
//! A reviewer is shown a random anchor profile next to its ten nearest
//! profiles by edit distance on the concatenated name and birth date, and
//! records which of them are the same person. Decisions go to an append-only
//! NDJSON log that is replayed on startup; a snapshot of the replayed state is
//! written every [`SNAPSHOT_EVERY`] decisions so restarts skip the prefix.

use std::collections::{BTreeSet, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant, SystemTime};

use chrono::{DateTime, SecondsFormat, Utc};
use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cluster::UnionFind;
use crate::data_io;
use crate::encoder::{PlainProfile, NUM_FIELDS};
use crate::error::{Error, Result};
use crate::similarity::edit_distance_chars;
use crate::truth::GroundTruth;

pub const TOP_CANDIDATES: usize = 10;
pub const DEFAULT_LEASE: Duration = Duration::from_secs(15 * 60);
pub const SNAPSHOT_EVERY: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldDistances {
    pub first_name: usize,
    pub last_name: usize,
    pub dob_day: usize,
    pub dob_month: usize,
    pub dob_year: usize,
}

impl From<[usize; NUM_FIELDS]> for FieldDistances {
    fn from(d: [usize; NUM_FIELDS]) -> Self {
        Self {
            first_name: d[0],
            last_name: d[1],
            dob_day: d[2],
            dob_month: d[3],
            dob_year: d[4],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub profile: PlainProfile,
    pub field_distances: FieldDistances,
    /// Distance between the concatenated normalized strings.
    pub distance: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjudicationTask {
    pub anchor: PlainProfile,
    pub candidates: Vec<Candidate>,
}

/// A reviewer's verdict on one served task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub anchor_id: String,
    #[serde(default)]
    pub accepted: BTreeSet<String>,
    #[serde(default)]
    pub rejected: BTreeSet<String>,
    #[serde(default)]
    pub reviewer: String,
    /// RFC 3339; filled in on receipt when absent.
    #[serde(default)]
    pub timestamp: Option<String>,
}

impl Decision {
    fn same_verdict(&self, other: &Decision) -> bool {
        self.anchor_id == other.anchor_id && self.accepted == other.accepted && self.rejected == other.rejected
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub profiles: usize,
    pub decisions: usize,
    pub adjudicated: usize,
    pub remaining: usize,
    pub clusters: usize,
    pub accepted: usize,
    pub rejected: usize,
    pub accept_rate: Option<f64>,
}

/// Outcome of a submission.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Submission {
    Recorded,
    Duplicate,
}

struct Prepared {
    concat: Vec<char>,
    fields: [Vec<char>; NUM_FIELDS],
}

fn prepare(p: &PlainProfile) -> Prepared {
    let fields = p.normalized_fields();
    Prepared {
        concat: fields.concat().chars().collect(),
        fields: fields.map(|f| f.chars().collect()),
    }
}

/// Per-field and concatenated distances between two profiles.
pub fn profile_distances(a: &PlainProfile, b: &PlainProfile) -> ([usize; NUM_FIELDS], usize) {
    let (pa, pb) = (prepare(a), prepare(b));
    let fields = std::array::from_fn(|i| edit_distance_chars(&pa.fields[i], &pb.fields[i]));
    (fields, edit_distance_chars(&pa.concat, &pb.concat))
}

struct Lease {
    session: String,
    expires: Instant,
}

#[derive(Default)]
struct Session {
    order: Vec<usize>,
    cursor: usize,
    current: Option<usize>,
}

#[derive(Serialize, Deserialize)]
struct Snapshot {
    log_bytes: u64,
    log_sha256: String,
    decisions: Vec<Decision>,
}

/// Adjudication state over one plaintext corpus.
pub struct Adjudicator {
    profiles: Vec<PlainProfile>,
    prepared: Vec<Prepared>,
    index: HashMap<String, usize>,
    seed: u64,
    lease: Duration,
    sessions: HashMap<String, Session>,
    leases: HashMap<usize, Lease>,
    /// Candidate ids of every served task, by anchor index.
    served: HashMap<usize, Vec<usize>>,
    decisions: Vec<Decision>,
    by_anchor: HashMap<usize, usize>,
    /// Profiles that are an anchor or an accepted candidate of some decision.
    covered: Vec<bool>,
    log: Option<PathBuf>,
}

impl Adjudicator {
    /// In-memory state without a decision log.
    pub fn new(mut profiles: Vec<PlainProfile>, seed: u64) -> Result<Self> {
        if profiles.is_empty() {
            return Err(Error::InvalidConfig("adjudication needs at least one profile".into()));
        }
        profiles.sort_by(|a, b| a.profile_id.cmp(&b.profile_id));
        let mut index = HashMap::with_capacity(profiles.len());
        for (i, p) in profiles.iter().enumerate() {
            p.validate()?;
            if index.insert(p.profile_id.clone(), i).is_some() {
                return Err(Error::DuplicateId(p.profile_id.clone()));
            }
        }
        let n = profiles.len();
        Ok(Self {
            prepared: profiles.iter().map(prepare).collect(),
            profiles,
            index,
            seed,
            lease: DEFAULT_LEASE,
            sessions: HashMap::new(),
            leases: HashMap::new(),
            served: HashMap::new(),
            decisions: Vec::new(),
            by_anchor: HashMap::new(),
            covered: vec![false; n],
            log: None,
        })
    }

    /// State backed by the NDJSON log at `log`, replaying what it holds.
    pub fn with_log(profiles: Vec<PlainProfile>, seed: u64, log: &Path) -> Result<Self> {
        let mut adj = Self::new(profiles, seed)?;
        adj.replay(log)?;
        adj.log = Some(log.to_path_buf());
        Ok(adj)
    }

    pub fn set_lease(&mut self, lease: Duration) {
        self.lease = lease;
    }

    pub fn profiles(&self) -> &[PlainProfile] {
        &self.profiles
    }

    pub fn decisions(&self) -> &[Decision] {
        &self.decisions
    }

    /// Indices of the nearest profiles to `anchor`, by concatenated distance then id.
    fn rank(&self, anchor: usize) -> Vec<(usize, usize)> {
        let a = &self.prepared[anchor].concat;
        let mut scored: Vec<(usize, usize)> = (0..self.profiles.len())
            .filter(|&i| i != anchor)
            .map(|i| (edit_distance_chars(a, &self.prepared[i].concat), i))
            .collect();
        // Profiles are sorted by id, so index order is id order.
        scored.sort_unstable();
        scored.truncate(TOP_CANDIDATES);
        scored
    }

    /// The task for `anchor_id`, independent of any session.
    pub fn task_for(&self, anchor_id: &str) -> Result<AdjudicationTask> {
        let anchor = *self
            .index
            .get(anchor_id)
            .ok_or_else(|| Error::UnknownProfile(anchor_id.to_string()))?;
        Ok(self.build_task(anchor))
    }

    fn build_task(&self, anchor: usize) -> AdjudicationTask {
        let pa = &self.prepared[anchor];
        let candidates = self
            .rank(anchor)
            .into_iter()
            .map(|(distance, i)| {
                let pb = &self.prepared[i];
                let d: [usize; NUM_FIELDS] = std::array::from_fn(|f| edit_distance_chars(&pa.fields[f], &pb.fields[f]));
                Candidate {
                    profile: self.profiles[i].clone(),
                    field_distances: d.into(),
                    distance,
                }
            })
            .collect();
        AdjudicationTask {
            anchor: self.profiles[anchor].clone(),
            candidates,
        }
    }

    fn session_order(&self, session: &str) -> Vec<usize> {
        let digest = Sha256::digest(session.as_bytes());
        let mut salt = [0u8; 8];
        salt.copy_from_slice(&digest[..8]);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ u64::from_be_bytes(salt));
        let mut order: Vec<usize> = (0..self.profiles.len()).collect();
        order.shuffle(&mut rng);
        order
    }

    fn available(&self, i: usize, session: &str, now: Instant) -> bool {
        if self.covered[i] {
            return false;
        }
        match self.leases.get(&i) {
            Some(l) => l.session == session || l.expires <= now,
            None => true,
        }
    }

    pub fn next_task(&mut self, session: &str) -> Result<AdjudicationTask> {
        self.next_task_at(session, Instant::now())
    }

    /// Serves the session's leased task if it is still open, otherwise the
    /// next unadjudicated anchor in the session's random order.
    pub fn next_task_at(&mut self, session: &str, now: Instant) -> Result<AdjudicationTask> {
        if !self.sessions.contains_key(session) {
            let order = self.session_order(session);
            self.sessions.insert(
                session.to_string(),
                Session {
                    order,
                    ..Session::default()
                },
            );
        }
        let current = self.sessions[session].current;
        if let Some(i) = current {
            if self.available(i, session, now) {
                self.take_lease(i, session, now);
                return Ok(self.served_task(i));
            }
        }
        let s = &self.sessions[session];
        let mut cursor = s.cursor;
        while s.order.get(cursor).is_some_and(|&i| self.covered[i]) {
            cursor += 1;
        }
        let found = s.order[cursor..]
            .iter()
            .copied()
            .find(|&i| self.available(i, session, now));
        let s = self.sessions.get_mut(session).expect("session exists");
        s.cursor = cursor;
        s.current = found;
        let i = found.ok_or(Error::Exhausted)?;
        self.take_lease(i, session, now);
        Ok(self.served_task(i))
    }

    fn take_lease(&mut self, i: usize, session: &str, now: Instant) {
        self.leases.insert(
            i,
            Lease {
                session: session.to_string(),
                expires: now + self.lease,
            },
        );
    }

    fn served_task(&mut self, anchor: usize) -> AdjudicationTask {
        let task = self.build_task(anchor);
        let ids = task
            .candidates
            .iter()
            .map(|c| self.index[&c.profile.profile_id])
            .collect();
        self.served.insert(anchor, ids);
        task
    }

    fn validate(&self, d: &Decision, candidates: &[usize]) -> Result<()> {
        if let Some(id) = d.accepted.intersection(&d.rejected).next() {
            return Err(Error::InvalidIds(format!("`{id}` is both accepted and rejected")));
        }
        for id in d.accepted.iter().chain(&d.rejected) {
            let ok = self.index.get(id).is_some_and(|i| candidates.contains(i));
            if !ok {
                return Err(Error::InvalidIds(format!("`{id}` is not a candidate of `{}`", d.anchor_id)));
            }
        }
        Ok(())
    }

    pub fn submit(&mut self, d: Decision) -> Result<Submission> {
        self.submit_at(d, SystemTime::now())
    }

    /// Records a decision. Resubmitting the same verdict is a no-op; a
    /// different verdict for an adjudicated anchor is rejected.
    pub fn submit_at(&mut self, mut d: Decision, now: SystemTime) -> Result<Submission> {
        let anchor = *self
            .index
            .get(&d.anchor_id)
            .ok_or_else(|| Error::UnknownTask(d.anchor_id.clone()))?;
        if let Some(&k) = self.by_anchor.get(&anchor) {
            return if self.decisions[k].same_verdict(&d) {
                Ok(Submission::Duplicate)
            } else {
                Err(Error::ConflictingDecision(d.anchor_id))
            };
        }
        let candidates = self
            .served
            .get(&anchor)
            .ok_or_else(|| Error::UnknownTask(d.anchor_id.clone()))?;
        self.validate(&d, candidates)?;
        if d.timestamp.is_none() {
            d.timestamp = Some(DateTime::<Utc>::from(now).to_rfc3339_opts(SecondsFormat::Secs, true));
        }
        if let Some(path) = &self.log {
            append_line(path, &serde_json::to_string(&d)?)?;
        }
        self.apply(anchor, d);
        self.served.remove(&anchor);
        self.leases.remove(&anchor);
        if self.log.is_some() && self.decisions.len().is_multiple_of(SNAPSHOT_EVERY) {
            if let Err(e) = self.write_snapshot() {
                warn!("snapshot not written: {e}");
            }
        }
        Ok(Submission::Recorded)
    }

    fn apply(&mut self, anchor: usize, d: Decision) {
        self.covered[anchor] = true;
        for id in &d.accepted {
            self.covered[self.index[id]] = true;
        }
        self.by_anchor.insert(anchor, self.decisions.len());
        self.decisions.push(d);
    }

    fn replay_one(&mut self, d: Decision, file: &str, line: u64) -> Result<()> {
        let anchor = *self
            .index
            .get(&d.anchor_id)
            .ok_or_else(|| Error::parse(file, line, format!("unknown anchor `{}`", d.anchor_id)))?;
        if let Some(&k) = self.by_anchor.get(&anchor) {
            if self.decisions[k].same_verdict(&d) {
                return Ok(());
            }
            return Err(Error::parse(file, line, format!("conflicting decision for `{}`", d.anchor_id)));
        }
        let candidates: Vec<usize> = self.rank(anchor).into_iter().map(|(_, i)| i).collect();
        self.validate(&d, &candidates)
            .map_err(|e| Error::parse(file, line, e.to_string()))?;
        self.apply(anchor, d);
        Ok(())
    }

    fn replay(&mut self, log: &Path) -> Result<()> {
        let file = log.display().to_string();
        let bytes = match std::fs::read(log) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
            Err(source) => {
                return Err(Error::File {
                    path: log.to_path_buf(),
                    source,
                })
            }
        };
        let mut start = 0usize;
        let mut line_no = 0u64;
        if let Some(snap) = self.load_snapshot(log, &bytes) {
            start = snap.log_bytes as usize;
            line_no = bytes[..start].iter().filter(|&&b| b == b'\n').count() as u64;
            for d in snap.decisions {
                self.replay_one(d, &file, 0)?;
            }
        }
        for line in BufReader::new(&bytes[start..]).lines() {
            line_no += 1;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let d: Decision = serde_json::from_str(&line).map_err(|e| Error::parse(&file, line_no, e.to_string()))?;
            self.replay_one(d, &file, line_no)?;
        }
        if !self.decisions.is_empty() {
            info!("replayed {} decisions from {file}", self.decisions.len());
        }
        Ok(())
    }

    fn load_snapshot(&self, log: &Path, bytes: &[u8]) -> Option<Snapshot> {
        let path = snapshot_path(log);
        let mut text = String::new();
        File::open(&path).ok()?.read_to_string(&mut text).ok()?;
        let snap: Snapshot = match serde_json::from_str(&text) {
            Ok(s) => s,
            Err(e) => {
                warn!("ignoring unreadable snapshot {}: {e}", path.display());
                return None;
            }
        };
        let len = snap.log_bytes as usize;
        if len > bytes.len() || hex::encode(Sha256::digest(&bytes[..len])) != snap.log_sha256 {
            warn!("snapshot {} does not match the log; replaying in full", path.display());
            return None;
        }
        Some(snap)
    }

    fn write_snapshot(&self) -> Result<()> {
        let log = self.log.as_ref().expect("snapshots need a log");
        let bytes = std::fs::read(log)?;
        let snap = Snapshot {
            log_bytes: bytes.len() as u64,
            log_sha256: hex::encode(Sha256::digest(&bytes)),
            decisions: self.decisions.clone(),
        };
        data_io::write_text(&snapshot_path(log), &serde_json::to_string(&snap)?)
    }

    /// Anchor plus accepted profiles per decision, with overlapping groups
    /// merged. Cluster ids are the smallest member id.
    pub fn export_truth(&self) -> Result<GroundTruth> {
        let n = self.profiles.len();
        let mut uf = UnionFind::new(n);
        let mut owner: Vec<Option<usize>> = vec![None; n];
        for d in &self.decisions {
            let anchor = self.index[&d.anchor_id];
            let members = std::iter::once(anchor).chain(d.accepted.iter().map(|id| self.index[id]));
            for m in members {
                if let Some(prev) = owner[m] {
                    if uf.find(prev) != uf.find(anchor) {
                        warn!(
                            "profile `{}` accepted under `{}` and `{}`; merging",
                            self.profiles[m].profile_id, self.profiles[prev].profile_id, d.anchor_id
                        );
                    }
                }
                owner[m].get_or_insert(anchor);
                uf.union(m, anchor);
            }
        }
        let mut groups: HashMap<usize, Vec<usize>> = HashMap::new();
        for (i, o) in owner.iter().enumerate() {
            if o.is_some() {
                groups.entry(uf.find(i)).or_default().push(i);
            }
        }
        let rows = groups.into_values().flat_map(|members| {
            let id = members.iter().min().map(|&m| self.profiles[m].profile_id.clone()).unwrap_or_default();
            members
                .into_iter()
                .map(move |m| (id.clone(), self.profiles[m].profile_id.clone()))
        });
        GroundTruth::from_assignments(rows)
    }

    pub fn export_csv(&self) -> Result<String> {
        data_io::truth_csv(&self.export_truth()?)
    }

    pub fn stats(&self) -> Result<Stats> {
        let adjudicated = self.covered.iter().filter(|&&c| c).count();
        let accepted: usize = self.decisions.iter().map(|d| d.accepted.len()).sum();
        let rejected: usize = self.decisions.iter().map(|d| d.rejected.len()).sum();
        let judged = accepted + rejected;
        Ok(Stats {
            profiles: self.profiles.len(),
            decisions: self.decisions.len(),
            adjudicated,
            remaining: self.profiles.len() - adjudicated,
            clusters: self.export_truth()?.len(),
            accepted,
            rejected,
            accept_rate: (judged > 0).then(|| accepted as f64 / judged as f64),
        })
    }
}

fn snapshot_path(log: &Path) -> PathBuf {
    let mut name = log.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".snapshot.json");
    log.with_file_name(name)
}

fn append_line(path: &Path, line: &str) -> Result<()> {
    let err = |source| Error::File {
        path: path.to_path_buf(),
        source,
    };
    let mut f = OpenOptions::new().create(true).append(true).open(path).map_err(err)?;
    f.write_all(format!("{line}\n").as_bytes()).map_err(err)?;
    f.sync_data().map_err(err)
}
