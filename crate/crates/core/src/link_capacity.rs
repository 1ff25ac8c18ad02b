//! RSL traces and the hysteresis-based ACM mapping from signal level to link capacity.
//!
//! Traces are one sample per minute; timestamps are minutes since an arbitrary epoch and
//! must advance by exactly one. An [`AcmTable`] holds the discrete capacity levels with
//! their up/down thresholds. Capacities are stored in Mbps, the crate-wide unit; the
//! table files carry Gbps and are converted at load.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::num::{fmt_f64, mean, parse_f64, population_std};

pub const RSL_HEADER: [&str; 2] = ["timestamp_min", "rsl_dbm"];
pub const ACM_HEADER: [&str; 4] = ["level", "capacity_gbps", "up_dbm", "down_dbm"];

const AF60_CSV: &str = include_str!("../assets/af60.csv");
const WAVE_CSV: &str = include_str!("../assets/wave.csv");

#[derive(Debug, Error)]
pub enum LinkError {
    #[error("unexpected header {found:?}, expected {expected:?}")]
    MalformedHeader { found: Vec<String>, expected: Vec<String> },
    #[error("line {line}: {reason}")]
    MalformedRow { line: u64, reason: String },
    #[error("line {line}: timestamp {found} does not follow {previous}")]
    NonMonotonicTime { line: u64, previous: i64, found: i64 },
    #[error("line {line}: expected timestamp {expected}, found {found}")]
    GapInTrace { line: u64, expected: i64, found: i64 },
    #[error("trace has no samples")]
    EmptyTrace,
    #[error("invalid ACM table: {0}")]
    InvalidTable(String),
    #[error("level {level} out of range for a table with {levels} levels")]
    InvalidLevel { level: usize, levels: usize },
    #[error("window {window} invalid for a trace of {len} samples (need 2 <= window <= len)")]
    InvalidWindow { window: usize, len: usize },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One-minute RSL samples for a single link.
#[derive(Debug, Clone, PartialEq)]
pub struct RslTrace {
    link_id: String,
    start_min: i64,
    samples: Vec<f64>,
}

impl RslTrace {
    /// Builds a trace starting at `start_min`. Fails on an empty or non-finite series.
    pub fn new(link_id: impl Into<String>, start_min: i64, samples: Vec<f64>) -> Result<Self, LinkError> {
        if samples.is_empty() {
            return Err(LinkError::EmptyTrace);
        }
        if let Some(i) = samples.iter().position(|x| !x.is_finite()) {
            return Err(LinkError::MalformedRow {
                line: i as u64 + 2,
                reason: format!("non-finite rsl {}", samples[i]),
            });
        }
        Ok(Self { link_id: link_id.into(), start_min, samples })
    }

    pub fn link_id(&self) -> &str {
        &self.link_id
    }

    pub fn start_min(&self) -> i64 {
        self.start_min
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn timestamps(&self) -> impl Iterator<Item = i64> + '_ {
        (0..self.samples.len() as i64).map(move |i| self.start_min + i)
    }

    /// Writes the `timestamp_min,rsl_dbm` CSV form. Output of [`ingest_rsl_trace`] re-exported
    /// through this function is byte-identical to a file produced by this function.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<(), LinkError> {
        writeln!(out, "{}", RSL_HEADER.join(","))?;
        for (t, rsl) in self.timestamps().zip(&self.samples) {
            writeln!(out, "{t},{}", fmt_f64(*rsl))?;
        }
        Ok(())
    }

    /// Shifts the trace so its median sits 4 dB above the table's first degradation
    /// threshold (the top level's down threshold). Lets one table serve links with
    /// different installation budgets.
    pub fn normalized_to(&self, table: &AcmTable) -> RslTrace {
        let mut sorted = self.samples.clone();
        sorted.sort_by(f64::total_cmp);
        let median = crate::num::percentile(&sorted, 50.0);
        let target = table.top().down_dbm + 4.0;
        let shift = target - median;
        RslTrace {
            link_id: self.link_id.clone(),
            start_min: self.start_min,
            samples: self.samples.iter().map(|x| x + shift).collect(),
        }
    }

    pub fn coefficient_of_variation(&self, window: usize) -> Result<Vec<f64>, LinkError> {
        coefficient_of_variation(&self.samples, window)
    }
}

/// Parses an RSL CSV (`timestamp_min,rsl_dbm`), verifying unit-minute spacing.
pub fn ingest_rsl_trace<R: Read>(source: R, link_id: &str) -> Result<RslTrace, LinkError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(source);
    check_header(reader.headers()?, &RSL_HEADER)?;

    let mut start = None;
    let mut previous: Option<i64> = None;
    let mut samples = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != 2 {
            return Err(LinkError::MalformedRow { line, reason: format!("expected 2 fields, found {}", record.len()) });
        }
        let t: i64 = record[0]
            .trim()
            .parse()
            .map_err(|_| LinkError::MalformedRow { line, reason: format!("bad timestamp {:?}", &record[0]) })?;
        let rsl = parse_f64(&record[1])
            .filter(|x| x.is_finite())
            .ok_or_else(|| LinkError::MalformedRow { line, reason: format!("bad rsl {:?}", &record[1]) })?;
        if let Some(prev) = previous {
            if t <= prev {
                return Err(LinkError::NonMonotonicTime { line, previous: prev, found: t });
            }
            if t != prev + 1 {
                return Err(LinkError::GapInTrace { line, expected: prev + 1, found: t });
            }
        } else {
            start = Some(t);
        }
        previous = Some(t);
        samples.push(rsl);
    }
    let start = start.ok_or(LinkError::EmptyTrace)?;
    RslTrace::new(link_id, start, samples)
}

pub(crate) fn check_header(found: &csv::StringRecord, expected: &[&str]) -> Result<(), LinkError> {
    if found.iter().map(str::trim).eq(expected.iter().copied()) {
        Ok(())
    } else {
        Err(LinkError::MalformedHeader {
            found: found.iter().map(String::from).collect(),
            expected: expected.iter().map(|s| s.to_string()).collect(),
        })
    }
}

/// One row of an ACM table. `up_dbm` is `+inf` on the top level, `down_dbm` is `-inf` on level 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AcmLevel {
    pub capacity_mbps: f64,
    pub up_dbm: f64,
    pub down_dbm: f64,
}

/// Discrete capacity levels with hysteresis thresholds, ordered from level 0 upwards.
#[derive(Debug, Clone, PartialEq)]
pub struct AcmTable {
    name: String,
    levels: Vec<AcmLevel>,
}

impl AcmTable {
    pub fn new(name: impl Into<String>, levels: Vec<AcmLevel>) -> Result<Self, LinkError> {
        let table = Self { name: name.into(), levels };
        table.validate()?;
        Ok(table)
    }

    fn validate(&self) -> Result<(), LinkError> {
        let bad = |msg: String| Err(LinkError::InvalidTable(msg));
        let n = self.levels.len();
        if n < 2 {
            return bad(format!("need at least 2 levels, got {n}"));
        }
        if self.levels[0].down_dbm != f64::NEG_INFINITY {
            return bad("level 0 down threshold must be -inf".into());
        }
        if self.levels[n - 1].up_dbm != f64::INFINITY {
            return bad("top level up threshold must be +inf".into());
        }
        for (l, lvl) in self.levels.iter().enumerate() {
            if !lvl.capacity_mbps.is_finite() || lvl.capacity_mbps < 0.0 {
                return bad(format!("level {l}: capacity must be finite and >= 0"));
            }
            if lvl.up_dbm.is_nan() || lvl.down_dbm.is_nan() {
                return bad(format!("level {l}: NaN threshold"));
            }
            if (l > 0 && !lvl.down_dbm.is_finite()) || (l + 1 < n && !lvl.up_dbm.is_finite()) {
                return bad(format!("level {l}: only the outer sentinels may be infinite"));
            }
            if lvl.down_dbm >= lvl.up_dbm {
                return bad(format!("level {l}: down threshold must be below up threshold"));
            }
        }
        for l in 1..n {
            let (lo, hi) = (&self.levels[l - 1], &self.levels[l]);
            if lo.capacity_mbps >= hi.capacity_mbps {
                return bad(format!("capacities must strictly increase (level {l})"));
            }
            if l + 1 < n && lo.up_dbm >= hi.up_dbm {
                return bad(format!("up thresholds must strictly increase (level {l})"));
            }
            if l > 1 && lo.down_dbm >= hi.down_dbm {
                return bad(format!("down thresholds must strictly increase (level {l})"));
            }
        }
        Ok(())
    }

    /// Reads the `level,capacity_gbps,up_dbm,down_dbm` format.
    pub fn from_csv<R: Read>(name: &str, source: R) -> Result<Self, LinkError> {
        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(source);
        check_header(reader.headers()?, &ACM_HEADER)?;
        let mut rows: Vec<(usize, AcmLevel)> = Vec::new();
        for record in reader.records() {
            let record = record?;
            let line = record.position().map_or(0, |p| p.line());
            if record.len() != 4 {
                return Err(LinkError::MalformedRow { line, reason: format!("expected 4 fields, found {}", record.len()) });
            }
            let field = |i: usize| {
                parse_f64(&record[i]).ok_or_else(|| LinkError::MalformedRow {
                    line,
                    reason: format!("bad number {:?}", &record[i]),
                })
            };
            let level: usize = record[0]
                .trim()
                .parse()
                .map_err(|_| LinkError::MalformedRow { line, reason: format!("bad level {:?}", &record[0]) })?;
            rows.push((level, AcmLevel { capacity_mbps: field(1)? * 1000.0, up_dbm: field(2)?, down_dbm: field(3)? }));
        }
        rows.sort_by_key(|(l, _)| *l);
        if rows.iter().enumerate().any(|(i, (l, _))| i != *l) {
            return Err(LinkError::InvalidTable("level indices must be 0..L-1 without gaps".into()));
        }
        Self::new(name, rows.into_iter().map(|(_, lvl)| lvl).collect())
    }

    /// Inverse of [`AcmTable::from_csv`]. Reading the output back reproduces the capacities
    /// only up to the Gbps/Mbps rescaling, which is exact for round Mbps values.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<(), LinkError> {
        writeln!(out, "{}", ACM_HEADER.join(","))?;
        for (l, lvl) in self.levels.iter().enumerate() {
            writeln!(out, "{l},{},{},{}", fmt_f64(lvl.capacity_mbps / 1000.0), fmt_f64(lvl.up_dbm), fmt_f64(lvl.down_dbm))?;
        }
        Ok(())
    }

    /// The AF60-LR cluster table (top capacity 1.95 Gbps).
    pub fn af60() -> Self {
        Self::from_csv("af60", AF60_CSV.as_bytes()).expect("bundled af60 table is valid")
    }

    /// The Wave cluster table (top capacity 1.0 Gbps).
    pub fn wave() -> Self {
        Self::from_csv("wave", WAVE_CSV.as_bytes()).expect("bundled wave table is valid")
    }

    /// Looks up a bundled table by name.
    pub fn bundled(name: &str) -> Option<Self> {
        match name {
            "af60" => Some(Self::af60()),
            "wave" => Some(Self::wave()),
            _ => None,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn levels(&self) -> &[AcmLevel] {
        &self.levels
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn level(&self, l: usize) -> &AcmLevel {
        &self.levels[l]
    }

    pub fn top(&self) -> &AcmLevel {
        self.levels.last().expect("validated table is non-empty")
    }

    pub fn top_level(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn capacity(&self, l: usize) -> f64 {
        self.levels[l].capacity_mbps
    }

    pub fn check_level(&self, level: usize) -> Result<(), LinkError> {
        if level < self.levels.len() {
            Ok(())
        } else {
            Err(LinkError::InvalidLevel { level, levels: self.levels.len() })
        }
    }

    /// One slot of the hysteresis state machine. Drops take precedence; either direction
    /// repeats until no further threshold is crossed, so deep fades can skip levels.
    pub fn step(&self, mut level: usize, rsl: f64) -> usize {
        if rsl <= self.levels[level].down_dbm {
            while level > 0 && rsl <= self.levels[level].down_dbm {
                level -= 1;
            }
        } else {
            while level + 1 < self.levels.len() && rsl >= self.levels[level].up_dbm {
                level += 1;
            }
        }
        level
    }

    /// Default starting level: climb from level 0 as far as the first sample allows.
    pub fn initial_level(&self, first_rsl: f64) -> usize {
        self.step(0, first_rsl)
    }

    /// A signal level inside the stay band of `l`, used to synthesize traces from level series.
    pub fn representative_rsl(&self, l: usize) -> f64 {
        let lvl = &self.levels[l];
        match (lvl.down_dbm.is_finite(), lvl.up_dbm.is_finite()) {
            (true, true) => 0.5 * (lvl.down_dbm + lvl.up_dbm),
            (false, true) => lvl.up_dbm - 5.0,
            (true, false) => lvl.down_dbm + 4.0,
            (false, false) => 0.0,
        }
    }
}

/// Per-slot ACM level and capacity (Mbps).
#[derive(Debug, Clone, PartialEq)]
pub struct CapacitySeries {
    pub levels: Vec<usize>,
    pub capacities: Vec<f64>,
}

impl CapacitySeries {
    pub fn from_levels(table: &AcmTable, levels: Vec<usize>) -> Result<Self, LinkError> {
        for &l in &levels {
            table.check_level(l)?;
        }
        let capacities = levels.iter().map(|&l| table.capacity(l)).collect();
        Ok(Self { levels, capacities })
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }
}

/// Runs the hysteresis state machine over the whole trace.
pub fn map_rsl_to_capacity(trace: &RslTrace, table: &AcmTable, initial_level: usize) -> Result<CapacitySeries, LinkError> {
    table.check_level(initial_level)?;
    let mut level = initial_level;
    let levels: Vec<usize> = trace
        .samples()
        .iter()
        .map(|&rsl| {
            level = table.step(level, rsl);
            level
        })
        .collect();
    CapacitySeries::from_levels(table, levels)
}

/// `|stddev / mean|` over consecutive non-overlapping windows; a trailing partial window is
/// dropped. A window whose mean is exactly zero yields `f64::INFINITY`.
pub fn coefficient_of_variation(samples: &[f64], window: usize) -> Result<Vec<f64>, LinkError> {
    if window < 2 || samples.len() < window {
        return Err(LinkError::InvalidWindow { window, len: samples.len() });
    }
    Ok(samples
        .chunks_exact(window)
        .map(|w| {
            let m = mean(w);
            if m == 0.0 {
                f64::INFINITY
            } else {
                (population_std(w) / m).abs()
            }
        })
        .collect())
}

/// Parameters for [`generate_synthetic_rsl`].
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SyntheticRslParams {
    pub baseline_dbm: f64,
    pub event_count: usize,
    pub event_depth_db: f64,
    pub event_duration_min: usize,
    pub noise_std_db: f64,
}

impl Default for SyntheticRslParams {
    fn default() -> Self {
        Self { baseline_dbm: -48.5, event_count: 1, event_depth_db: 20.0, event_duration_min: 20, noise_std_db: 0.3 }
    }
}

/// Baseline plus Gaussian noise with `event_count` raised-cosine fades. Overlapping fades
/// take the deeper attenuation rather than stacking.
pub fn generate_synthetic_rsl(params: &SyntheticRslParams, length: usize, seed: u64) -> Result<RslTrace, LinkError> {
    if length == 0 {
        return Err(LinkError::EmptyTrace);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut attenuation = vec![0.0_f64; length];
    let dur = params.event_duration_min.max(1);
    for _ in 0..params.event_count {
        let latest = length.saturating_sub(dur);
        let start = rng.random_range(0..=latest);
        for tau in 0..=dur {
            let t = start + tau;
            if t >= length {
                break;
            }
            let phase = 2.0 * std::f64::consts::PI * tau as f64 / dur as f64;
            let a = params.event_depth_db * 0.5 * (1.0 - phase.cos());
            attenuation[t] = attenuation[t].max(a);
        }
    }
    let noise = if params.noise_std_db > 0.0 {
        Some(Normal::new(0.0, params.noise_std_db).map_err(|e| LinkError::InvalidTable(e.to_string()))?)
    } else {
        None
    };
    let samples = attenuation
        .iter()
        .map(|a| params.baseline_dbm - a + noise.as_ref().map_or(0.0, |n| n.sample(&mut rng)))
        .collect();
    RslTrace::new("synthetic", 0, samples)
}
