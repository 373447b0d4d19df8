//! CSV and JSON file formats.
//!
//! `observations.csv`: `agent_id,event_id,label` with 0-based labels.
//! `network.csv`: `agent_a,agent_b`, undirected.
//! `truth.csv`: `event_id,state`.
//! Agent and event IDs are arbitrary strings; they are mapped to dense
//! indices in sorted order (numeric when every ID is an integer).

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use log::warn;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generator::GenConfig;
use crate::model::{GroundTruth, ObservationSet, Report, SocialGraph};
use crate::rng::RngStream;

pub const SCHEMA_VERSION: u32 = 1;

/// Dense index ↔ original ID.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IdMap {
    ids: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl IdMap {
    /// Sorted numerically when every ID parses as an integer, otherwise
    /// lexicographically.
    pub fn from_ids<'a>(ids: impl IntoIterator<Item = &'a str>) -> Self {
        let mut ids: Vec<String> = ids.into_iter().map(str::to_owned).collect();
        ids.sort();
        ids.dedup();
        if ids.iter().all(|s| s.parse::<i64>().is_ok()) {
            ids.sort_by_key(|s| s.parse::<i64>().unwrap());
        }
        Self::from_sorted(ids)
    }

    pub fn from_sorted(ids: Vec<String>) -> Self {
        let index = ids.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        Self { ids, index }
    }

    pub fn dense(n: usize) -> Self {
        Self::from_sorted((0..n).map(|i| i.to_string()).collect())
    }

    pub fn get(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn id(&self, i: usize) -> &str {
        &self.ids[i]
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// A loaded dataset with its ID tables.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub obs: ObservationSet,
    pub graph: SocialGraph,
    pub agents: IdMap,
    pub events: IdMap,
    /// Network rows whose endpoints never report.
    pub dropped_edges: usize,
    /// Reports added by the flip augmentation.
    pub flipped: usize,
}

fn open_csv(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file))
}

fn check_header(reader: &mut csv::Reader<File>, path: &Path, expected: &[&str]) -> Result<()> {
    let header = reader.headers()?;
    let got: Vec<&str> = header.iter().collect();
    if got != expected {
        return Err(Error::Schema {
            path: path.display().to_string(),
            line: 1,
            msg: format!("expected header {}, got {}", expected.join(","), got.join(",")),
        });
    }
    Ok(())
}

/// Rows of a CSV with a fixed header, each tagged with its 1-based line.
fn read_rows(path: &Path, header: &[&str]) -> Result<Vec<(usize, Vec<String>)>> {
    let mut reader = open_csv(path)?;
    check_header(&mut reader, path, header)?;
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            Error::Schema { path: path.display().to_string(), line, msg: e.to_string() }
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != header.len() {
            return Err(Error::Schema {
                path: path.display().to_string(),
                line,
                msg: format!("expected {} fields, got {}", header.len(), record.len()),
            });
        }
        if record.iter().any(str::is_empty) {
            return Err(Error::Schema { path: path.display().to_string(), line, msg: "empty field".into() });
        }
        rows.push((line, record.iter().map(str::to_owned).collect()));
    }
    Ok(rows)
}

fn parse_label(path: &Path, line: usize, field: &str) -> Result<usize> {
    field.parse().map_err(|_| Error::Schema {
        path: path.display().to_string(),
        line,
        msg: format!("label {field:?} is not a non-negative integer"),
    })
}

/// Reads `event_id,state` rows.
pub fn read_truth(path: &Path) -> Result<Vec<(String, usize)>> {
    let rows = read_rows(path, &["event_id", "state"])?;
    let mut seen = HashMap::new();
    rows.into_iter()
        .map(|(line, f)| {
            if seen.insert(f[0].clone(), line).is_some() {
                return Err(Error::Schema {
                    path: path.display().to_string(),
                    line,
                    msg: format!("duplicate event {}", f[0]),
                });
            }
            Ok((f[0].clone(), parse_label(path, line, &f[1])?))
        })
        .collect()
}

/// Loads observations and an optional network. The state arity defaults to
/// one more than the largest label (at least 2).
pub fn load_dataset(observations: &Path, network: Option<&Path>, n_states: Option<usize>) -> Result<Dataset> {
    let rows = read_rows(observations, &["agent_id", "event_id", "label"])?;
    if rows.is_empty() {
        return Err(Error::Invalid(format!("{} has no reports", observations.display())));
    }
    let agents = IdMap::from_ids(rows.iter().map(|(_, f)| f[0].as_str()));
    let events = IdMap::from_ids(rows.iter().map(|(_, f)| f[1].as_str()));
    let mut reports = Vec::with_capacity(rows.len());
    let mut seen: HashMap<(usize, usize), usize> = HashMap::new();
    let mut max_label = 0;
    for (line, f) in &rows {
        let label = parse_label(observations, *line, &f[2])?;
        let agent = agents.get(&f[0]).expect("mapped");
        let event = events.get(&f[1]).expect("mapped");
        if let Some(first) = seen.insert((agent, event), *line) {
            return Err(Error::Schema {
                path: observations.display().to_string(),
                line: *line,
                msg: format!("agent {} already reported event {} on line {first}", f[0], f[1]),
            });
        }
        max_label = max_label.max(label);
        reports.push(Report { agent, event, label });
    }
    let r = n_states.unwrap_or((max_label + 1).max(2));
    if max_label >= r {
        return Err(Error::Invalid(format!("label {max_label} is out of range for {r} states")));
    }
    let obs = ObservationSet::new(agents.len(), events.len(), r, reports)?;

    let mut edges = Vec::new();
    let mut dropped_edges = 0;
    if let Some(path) = network {
        for (line, f) in read_rows(path, &["agent_a", "agent_b"])? {
            match (agents.get(&f[0]), agents.get(&f[1])) {
                (Some(a), Some(b)) if a != b => edges.push((a.min(b), a.max(b))),
                (Some(_), Some(_)) => {
                    return Err(Error::Schema {
                        path: path.display().to_string(),
                        line,
                        msg: format!("self loop on {}", f[0]),
                    })
                }
                _ => dropped_edges += 1,
            }
        }
    }
    if dropped_edges > 0 {
        warn!("dropped {dropped_edges} network rows with endpoints that never report");
    }
    let graph = SocialGraph::new(agents.len(), edges)?;
    Ok(Dataset { obs, graph, agents, events, dropped_edges, flipped: 0 })
}

/// Flip augmentation for binary data: for every event with a known truth,
/// round(fraction · N) randomly chosen agents that did not report it are
/// given a report of the opposite state.
pub fn flip_reports(data: &mut Dataset, truth: &[(String, usize)], fraction: f64, seed: u64) -> Result<()> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::Invalid(format!("flip fraction must lie in [0, 1], got {fraction}")));
    }
    if fraction == 0.0 {
        return Ok(());
    }
    if data.obs.n_states() != 2 {
        return Err(Error::Invalid(format!(
            "flip augmentation needs binary states, data has {}",
            data.obs.n_states()
        )));
    }
    let n = data.obs.n_agents();
    let want = (fraction * n as f64).round() as usize;
    let master = RngStream::new(seed);
    let mut reports = data.obs.reports().to_vec();
    let mut flipped = 0;
    for (id, state) in truth {
        let Some(l) = data.events.get(id) else { continue };
        if *state > 1 {
            return Err(Error::Invalid(format!("truth state {state} for event {id} is not binary")));
        }
        let silent: Vec<usize> = (0..n).filter(|&a| data.obs.find(a, l).is_none()).collect();
        let mut rng = master.split(l as u64);
        for &agent in silent.choose_multiple(&mut rng, want.min(silent.len())) {
            reports.push(Report { agent, event: l, label: 1 - state });
            flipped += 1;
        }
    }
    data.obs = ObservationSet::new(n, data.obs.n_events(), 2, reports)?;
    data.flipped += flipped;
    Ok(())
}

/// Loads a dataset and applies the optional flip augmentation.
pub fn load_real_dataset(
    observations: &Path,
    network: Option<&Path>,
    truth: Option<&Path>,
    flip: Option<(f64, u64)>,
) -> Result<Dataset> {
    let mut data = load_dataset(observations, network, None)?;
    if let Some((fraction, seed)) = flip {
        let Some(truth) = truth else {
            return Err(Error::Invalid("flip augmentation needs a truth file".into()));
        };
        let truth = read_truth(truth)?;
        flip_reports(&mut data, &truth, fraction, seed)?;
    }
    Ok(data)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    Ok(csv::Writer::from_writer(create(path)?))
}

pub fn write_observations(path: &Path, obs: &ObservationSet) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["agent_id", "event_id", "label"])?;
    for rep in obs.reports() {
        w.serialize((rep.agent, rep.event, rep.label))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_network(path: &Path, graph: &SocialGraph) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["agent_a", "agent_b"])?;
    for &(a, b) in graph.edges() {
        w.serialize((a, b))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_truth(path: &Path, theta: &[usize]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["event_id", "state"])?;
    for (l, s) in theta.iter().enumerate() {
        w.serialize((l, s))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Contents of `gen_meta.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenMeta {
    pub schema_version: u32,
    pub seed: u64,
    pub config: GenConfig,
    pub truth: GroundTruth,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
}

/// Writes the four generator outputs into `dir`.
pub fn write_generated(
    dir: &Path,
    obs: &ObservationSet,
    graph: &SocialGraph,
    meta: &GenMeta,
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_observations(&dir.join("observations.csv"), obs)?;
    write_network(&dir.join("network.csv"), graph)?;
    write_truth(&dir.join("truth.csv"), &meta.truth.theta)?;
    write_json(&dir.join("gen_meta.json"), meta)
}

/// Sparse per-report community assignment used by the switching MSE.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub agent: usize,
    pub event: usize,
    pub community: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventEstimate {
    pub id: String,
    pub state: usize,
    /// Posterior ν for the variational methods, normalized vote shares for
    /// majority voting.
    pub distribution: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentEstimate {
    pub id: String,
    /// argmax_k Σ_l ψ.
    pub community: usize,
    /// E_q[ω] for that community, row-major R×R.
    pub omega: Vec<f64>,
    pub gamma: Vec<f64>,
    /// E_q[ω_k] for every community some report of this agent is assigned to.
    pub omega_by_community: BTreeMap<usize, Vec<f64>>,
}

/// Contents of `report.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InferenceReport {
    pub schema_version: u32,
    pub method: String,
    pub seed: u64,
    pub n_states: usize,
    pub events: Vec<EventEstimate>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub agents: Vec<AgentEstimate>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub assignments: Vec<Assignment>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub lambda: Vec<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<crate::visit::Trace>,
    #[serde(default)]
    pub dropped_edges: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_seconds: Option<f64>,
}

/// Contents of `metrics.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub schema_version: u32,
    pub method: String,
    pub accuracy: f64,
    /// Switching-community MSE, when ground-truth ω is available.
    pub mse: Option<f64>,
    pub mse_fixed: Option<f64>,
    pub runs: usize,
    pub events_evaluated: usize,
}
