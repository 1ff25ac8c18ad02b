//! A scenario is one link's per-slot capacity over a horizon plus the slice requests
//! offered during it. The evaluation helpers here are shared by the engine and the
//! oracle so that both account revenue with identical arithmetic.

use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::link_capacity::{self, check_header, AcmTable, LinkError, RslTrace};
use crate::num::{fmt_f64, mean, parse_f64};
use crate::rate_control::{allocate, Allocation, Demand};
use crate::slicing::{self, SliceRequest, SlicingError, DEFAULT_KAPPA};

pub const DEFAULT_DELTA: f64 = 1e-6;
pub const CAPACITY_HEADER: [&str; 3] = ["t", "level", "capacity_mbps"];
/// Window, in slots, of the per-scenario RSL coefficient of variation.
pub const CV_WINDOW: usize = 60;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("scenario {name}: {reason}")]
    Invalid { name: String, reason: String },
    #[error("{path}: {source}")]
    File { path: PathBuf, source: Box<ScenarioError> },
    #[error("bundle line {line}: {reason}")]
    Bundle { line: usize, reason: String },
    #[error("unknown ACM table {0:?}")]
    UnknownTable(String),
    #[error("no trace landed in CV bucket {bucket}")]
    SuiteBucket { bucket: usize },
    #[error(transparent)]
    Link(#[from] LinkError),
    #[error(transparent)]
    Slicing(#[from] SlicingError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Mean of the RSL coefficient of variation over consecutive [`CV_WINDOW`]-slot
/// windows; shorter traces use one window spanning the whole trace.
pub fn trace_cv(rsl: &[f64]) -> f64 {
    let window = rsl.len().min(CV_WINDOW);
    if window < 2 {
        return 0.0;
    }
    mean(&link_capacity::coefficient_of_variation(rsl, window).expect("window fits the trace"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub table: AcmTable,
    levels: Vec<usize>,
    rsl: Vec<f64>,
    requests: Vec<SliceRequest>,
    /// Underprovisioning gate threshold.
    pub delta: f64,
    /// `arrival_ranges[t]` indexes the requests arriving at slot `t`.
    arrival_ranges: Vec<std::ops::Range<usize>>,
}

impl Scenario {
    /// Requests must be indexed `0..N` in non-decreasing arrival order, with every
    /// arrival inside the horizon.
    pub fn new(
        name: impl Into<String>,
        table: AcmTable,
        levels: Vec<usize>,
        rsl: Vec<f64>,
        requests: Vec<SliceRequest>,
        delta: f64,
    ) -> Result<Self, ScenarioError> {
        let name = name.into();
        let invalid = |reason: String| ScenarioError::Invalid { name: name.clone(), reason };
        if levels.is_empty() {
            return Err(invalid("horizon must be at least one slot".into()));
        }
        if levels.len() != rsl.len() {
            return Err(invalid(format!("{} levels but {} RSL samples", levels.len(), rsl.len())));
        }
        if let Some(l) = levels.iter().find(|l| **l >= table.len()) {
            return Err(invalid(format!("level {l} outside table {}", table.name())));
        }
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(invalid(format!("delta must be positive, got {delta}")));
        }
        let horizon = levels.len();
        let mut arrival_ranges = vec![0..0; horizon];
        for (i, r) in requests.iter().enumerate() {
            if r.index != i {
                return Err(invalid(format!("request at position {i} has index {}", r.index)));
            }
            if r.arrival_slot >= horizon {
                return Err(invalid(format!("request {i} arrives at {} beyond horizon {horizon}", r.arrival_slot)));
            }
            if i > 0 && requests[i - 1].arrival_slot > r.arrival_slot {
                return Err(invalid("requests must be sorted by arrival slot".into()));
            }
            if r.type_id() >= slicing::CATALOG_SIZE {
                return Err(invalid(format!("request {i} has type {} outside the catalog", r.type_id())));
            }
            let range = &mut arrival_ranges[r.arrival_slot];
            if range.start == range.end {
                *range = i..i + 1;
            } else {
                range.end = i + 1;
            }
        }
        Ok(Self { name, table, levels, rsl, requests, delta, arrival_ranges })
    }

    /// Capacity from mapping `trace` through `table`, starting from the trace's own
    /// initial level unless one is given.
    pub fn from_trace(
        name: impl Into<String>,
        table: AcmTable,
        trace: &RslTrace,
        initial_level: Option<usize>,
        requests: Vec<SliceRequest>,
        delta: f64,
    ) -> Result<Self, ScenarioError> {
        let first = *trace.samples().first().ok_or(LinkError::EmptyTrace)?;
        let init = initial_level.unwrap_or_else(|| table.initial_level(first));
        let series = link_capacity::map_rsl_to_capacity(trace, &table, init)?;
        Self::new(name, table, series.levels, trace.samples().to_vec(), requests, delta)
    }

    /// Capacity given directly as levels; each slot's RSL is the level's representative
    /// value so that forecasters still have a signal.
    pub fn from_levels(
        name: impl Into<String>,
        table: AcmTable,
        levels: Vec<usize>,
        requests: Vec<SliceRequest>,
        delta: f64,
    ) -> Result<Self, ScenarioError> {
        let rsl = levels.iter().map(|&l| if l < table.len() { table.representative_rsl(l) } else { 0.0 }).collect();
        Self::new(name, table, levels, rsl, requests, delta)
    }

    pub fn horizon(&self) -> usize {
        self.levels.len()
    }

    pub fn levels(&self) -> &[usize] {
        &self.levels
    }

    pub fn level(&self, t: usize) -> usize {
        self.levels[t]
    }

    pub fn capacity(&self, t: usize) -> f64 {
        self.table.capacity(self.levels[t])
    }

    pub fn rsl(&self) -> &[f64] {
        &self.rsl
    }

    pub fn requests(&self) -> &[SliceRequest] {
        &self.requests
    }

    pub fn len(&self) -> usize {
        self.requests.len()
    }

    pub fn is_empty(&self) -> bool {
        self.requests.is_empty()
    }

    /// Indices of requests arriving at slot `t`.
    pub fn arrivals_at(&self, t: usize) -> std::ops::Range<usize> {
        self.arrival_ranges[t].clone()
    }

    /// Last slot (exclusive) in which request `i` is active, truncated at the horizon.
    pub fn end_slot(&self, i: usize) -> usize {
        self.requests[i].end_slot().min(self.horizon())
    }

    pub fn cv(&self) -> f64 {
        trace_cv(&self.rsl)
    }

    /// Rate-control allocation at slot `t` over `members` (request indices, ascending).
    pub fn allocate_members(&self, members: &[usize], t: usize) -> Allocation {
        let demands: Vec<Demand> = members.iter().map(|&i| Demand::from(&self.requests[i].slice)).collect();
        allocate(&demands, self.capacity(t))
    }

    /// Admitted requests active at `t`, ascending. With `include_arrivals` false only
    /// those that arrived before `t` count (the set the gate looks at).
    pub fn admitted_active(&self, admitted: &[bool], t: usize, include_arrivals: bool) -> Vec<usize> {
        (0..self.requests.len())
            .filter(|&i| {
                let a = self.requests[i].arrival_slot;
                admitted[i] && (a < t || (include_arrivals && a == t)) && t < self.end_slot(i)
            })
            .collect()
    }

    /// Whether admission is closed at `t`: some request that was already active
    /// before `t` pays a penalty of at least `delta`.
    pub fn gate_closed_for(&self, members: &[usize], t: usize) -> bool {
        !members.is_empty() && self.allocate_members(members, t).max_penalty() >= self.delta
    }

    pub fn with_requests(&self, requests: Vec<SliceRequest>) -> Result<Self, ScenarioError> {
        Self::new(self.name.clone(), self.table.clone(), self.levels.clone(), self.rsl.clone(), requests, self.delta)
    }

    /// Writes `<stem>.rsl.csv`, `<stem>.capacity.csv` and `<stem>.sr.csv` into `dir`, plus
    /// `<stem>.acm.csv` for a table that is not bundled, and returns the bundle entry
    /// pointing at them (paths relative to `dir`).
    pub fn write_files(&self, dir: &Path, stem: &str) -> Result<ScenarioEntry, ScenarioError> {
        let rsl_name = format!("{stem}.rsl.csv");
        let cap_name = format!("{stem}.capacity.csv");
        let sr_name = format!("{stem}.sr.csv");
        let trace = RslTrace::new(self.name.clone(), 0, self.rsl.clone())?;
        trace.write_csv(File::create(dir.join(&rsl_name))?)?;
        write_capacity_csv(self, File::create(dir.join(&cap_name))?)?;
        slicing::write_slice_requests(&self.requests, File::create(dir.join(&sr_name))?)?;
        let kappa = self.requests.first().map_or(DEFAULT_KAPPA, |r| r.slice.kappa);
        let acm_table = if AcmTable::bundled(self.table.name()).is_some_and(|t| t == self.table) {
            self.table.name().to_string()
        } else {
            let name = format!("{stem}.acm.csv");
            self.table.write_csv(File::create(dir.join(&name))?)?;
            name
        };
        Ok(ScenarioEntry {
            name: self.name.clone(),
            acm_table,
            rsl_csv: Some(rsl_name),
            capacity_csv: Some(cap_name),
            sr_csv: sr_name,
            delta: self.delta,
            kappa,
        })
    }
}

/// Revenue bookkeeping shared by the engine and the oracle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Totals {
    pub reward: f64,
    pub penalty: f64,
    pub revenue: f64,
    /// `penalty - reward`, the minimization objective.
    pub objective: f64,
}

/// Rewards summed in request order, penalties in slot order.
pub fn totals(requests: &[SliceRequest], admitted: &[bool], slot_penalties: &[f64]) -> Totals {
    let reward: f64 = requests.iter().zip(admitted).filter(|(_, a)| **a).map(|(r, _)| r.reward).sum();
    let penalty: f64 = slot_penalties.iter().sum();
    let revenue = reward - penalty;
    Totals { reward, penalty, revenue, objective: -revenue }
}

pub fn write_capacity_csv<W: Write>(scenario: &Scenario, mut out: W) -> std::io::Result<()> {
    writeln!(out, "{}", CAPACITY_HEADER.join(","))?;
    for t in 0..scenario.horizon() {
        writeln!(out, "{},{},{}", t, scenario.level(t), fmt_f64(scenario.capacity(t)))?;
    }
    Ok(())
}

/// Reads `t,level,capacity_mbps`; slots must run `0, 1, ...` and each capacity must be
/// the table's capacity for the level.
pub fn read_capacity_csv<R: Read>(source: R, table: &AcmTable) -> Result<Vec<usize>, ScenarioError> {
    let mut reader = csv::ReaderBuilder::new().from_reader(source);
    check_header(reader.headers()?, &CAPACITY_HEADER)?;
    let mut levels = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let bad = |reason: String| LinkError::MalformedRow { line, reason };
        if record.len() != 3 {
            return Err(bad("expected 3 fields".into()).into());
        }
        let t: usize = record[0].trim().parse().map_err(|_| bad("bad t".into()))?;
        let level: usize = record[1].trim().parse().map_err(|_| bad("bad level".into()))?;
        let cap = parse_f64(&record[2]).ok_or_else(|| bad("bad capacity".into()))?;
        if t != levels.len() {
            return Err(bad(format!("expected slot {}, found {t}", levels.len())).into());
        }
        table.check_level(level)?;
        if (table.capacity(level) - cap).abs() > 1e-9 {
            return Err(bad(format!("capacity {cap} does not match level {level} ({})", table.capacity(level))).into());
        }
        levels.push(level);
    }
    Ok(levels)
}

/// One line of a scenario bundle. File paths are relative to the bundle's directory;
/// `acm_table` is a bundled table name or a path to a table CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioEntry {
    pub name: String,
    pub acm_table: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rsl_csv: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capacity_csv: Option<String>,
    pub sr_csv: String,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_kappa")]
    pub kappa: f64,
}

fn default_delta() -> f64 {
    DEFAULT_DELTA
}

fn default_kappa() -> f64 {
    DEFAULT_KAPPA
}

pub fn load_table(spec: &str, base: &Path) -> Result<AcmTable, ScenarioError> {
    if let Some(t) = AcmTable::bundled(spec) {
        return Ok(t);
    }
    let path = base.join(spec);
    let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or(spec).to_string();
    let file = File::open(&path).map_err(|e| ScenarioError::File { path: path.clone(), source: Box::new(e.into()) })?;
    Ok(AcmTable::from_csv(&name, file)?)
}

fn open(base: &Path, rel: &str) -> Result<(PathBuf, File), ScenarioError> {
    let path = base.join(rel);
    match File::open(&path) {
        Ok(f) => Ok((path, f)),
        Err(e) => Err(ScenarioError::File { path, source: Box::new(e.into()) }),
    }
}

fn in_file<T>(path: &Path, r: Result<T, impl Into<ScenarioError>>) -> Result<T, ScenarioError> {
    r.map_err(|e| ScenarioError::File { path: path.to_path_buf(), source: Box::new(e.into()) })
}

impl ScenarioEntry {
    pub fn load(&self, base: &Path) -> Result<Scenario, ScenarioError> {
        let table = load_table(&self.acm_table, base)?;
        let requests = {
            let (path, f) = open(base, &self.sr_csv)?;
            in_file(&path, slicing::read_slice_requests(f, self.kappa))?
        };
        let trace = match &self.rsl_csv {
            Some(rel) => {
                let (path, f) = open(base, rel)?;
                Some(in_file(&path, link_capacity::ingest_rsl_trace(f, &self.name))?)
            }
            None => None,
        };
        let levels = match &self.capacity_csv {
            Some(rel) => {
                let (path, f) = open(base, rel)?;
                Some(in_file(&path, read_capacity_csv(f, &table))?)
            }
            None => None,
        };
        match (trace, levels) {
            (Some(trace), Some(levels)) => {
                Scenario::new(self.name.clone(), table, levels, trace.samples().to_vec(), requests, self.delta)
            }
            (Some(trace), None) => Scenario::from_trace(self.name.clone(), table, &trace, None, requests, self.delta),
            (None, Some(levels)) => Scenario::from_levels(self.name.clone(), table, levels, requests, self.delta),
            (None, None) => Err(ScenarioError::Invalid {
                name: self.name.clone(),
                reason: "needs rsl_csv or capacity_csv".into(),
            }),
        }
    }
}

/// Reads a JSON-lines bundle; blank lines are skipped.
pub fn load_bundle(path: &Path) -> Result<Vec<Scenario>, ScenarioError> {
    let base = path.parent().unwrap_or(Path::new("."));
    let file = File::open(path).map_err(|e| ScenarioError::File { path: path.to_path_buf(), source: Box::new(e.into()) })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: ScenarioEntry =
            serde_json::from_str(&line).map_err(|e| ScenarioError::Bundle { line: i + 1, reason: e.to_string() })?;
        out.push(entry.load(base)?);
    }
    Ok(out)
}

pub fn write_bundle<W: Write>(entries: &[ScenarioEntry], mut out: W) -> std::io::Result<()> {
    for e in entries {
        writeln!(out, "{}", serde_json::to_string(e).expect("entry serializes"))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::slicing::{Service, SliceType};

    fn sr(index: usize, arrival: usize, demand: f64, duration: usize) -> SliceRequest {
        SliceRequest::new(index, arrival, SliceType::new(4, Service::Embb, demand, duration, 0.2))
    }

    #[test]
    fn arrival_ranges_and_truncation() {
        let reqs = vec![sr(0, 0, 1.0, 2), sr(1, 0, 1.0, 5), sr(2, 2, 1.0, 1)];
        let s = Scenario::from_levels("x", AcmTable::af60(), vec![7; 3], reqs, DEFAULT_DELTA).unwrap();
        assert_eq!(s.arrivals_at(0), 0..2);
        assert_eq!(s.arrivals_at(1), 0..0);
        assert_eq!(s.arrivals_at(2), 2..3);
        assert_eq!(s.end_slot(1), 3);
    }

    #[test]
    fn rejects_bad_inputs() {
        let t = AcmTable::af60();
        assert!(Scenario::from_levels("x", t.clone(), vec![], vec![], 1e-6).is_err());
        assert!(Scenario::from_levels("x", t.clone(), vec![8], vec![], 1e-6).is_err());
        assert!(Scenario::from_levels("x", t.clone(), vec![1], vec![sr(0, 1, 1.0, 1)], 1e-6).is_err());
        assert!(Scenario::from_levels("x", t, vec![1; 3], vec![sr(0, 1, 1.0, 1), sr(1, 0, 1.0, 1)], 1e-6).is_err());
    }

    #[test]
    fn bundle_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let reqs = vec![sr(0, 0, 8.8, 2), sr(1, 1, 19.2, 3)];
        let s = Scenario::from_levels("round", AcmTable::wave(), vec![7, 6, 0, 3], reqs, 1e-6).unwrap();
        let entry = s.write_files(dir.path(), "round").unwrap();
        assert_eq!(entry.kappa, 0.2);
        let bundle = dir.path().join("bundle.jsonl");
        write_bundle(&[entry], File::create(&bundle).unwrap()).unwrap();
        let loaded = load_bundle(&bundle).unwrap();
        assert_eq!(loaded, vec![s]);
    }

    #[test]
    fn capacity_must_match_level() {
        let csv = "t,level,capacity_mbps\n0,7,1950.0\n1,6,1000.0\n";
        assert!(read_capacity_csv(csv.as_bytes(), &AcmTable::af60()).is_err());
        let csv = "t,level,capacity_mbps\n0,7,1950.0\n1,6,1200.0\n";
        assert_eq!(read_capacity_csv(csv.as_bytes(), &AcmTable::af60()).unwrap(), vec![7, 6]);
    }
}
