//! Gaussian RSL forecasts and their conversion into per-step capacity distributions.
//!
//! A forecast made at slot `t` carries `(mu, sigma2)` for steps `t+1 ..= t+H`. The
//! capacity PMF for step 1 is the normalized row of level-transition probabilities out
//! of the current level; later steps push the previous step's PMF through the
//! transition matrix built from that step's `(mu, sigma)`.
//!
//! The interval form of the transition probability overlaps across hysteresis bands,
//! so raw rows can sum above one. Rows are clamped at zero and renormalized.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use thiserror::Error;

use crate::link_capacity::{check_header, AcmTable, LinkError};
use crate::num::{fmt_f64, normal_cdf, parse_f64, sample_std};

pub const FORECAST_HEADER: [&str; 4] = ["origin_slot", "h", "mu_dbm", "sigma2_db2"];

/// Lower bound applied to calibrated residual standard deviations, in dB.
pub const SIGMA_FLOOR_DB: f64 = 0.1;
/// Minimum number of residual pairs per horizon step for calibration.
pub const MIN_CALIBRATION_PAIRS: usize = 30;
pub const DEFAULT_HORIZON: usize = 5;
pub const DEFAULT_LOOKBACK: usize = 15;

#[derive(Debug, Error)]
pub enum ForecastError {
    #[error("forecast history is empty")]
    EmptyHistory,
    #[error("horizon must be at least 1")]
    ZeroHorizon,
    #[error("calibration covers {available} steps, forecast needs {needed}")]
    CalibrationTooShort { available: usize, needed: usize },
    #[error("horizon step {h}: {found} calibration pairs, need at least {MIN_CALIBRATION_PAIRS}")]
    TooFewSamples { h: usize, found: usize },
    #[error("invalid forecast step {h}: {reason}")]
    InvalidStep { h: usize, reason: String },
    #[error("step {h}: all transition probabilities out of level {source_level} are zero")]
    DegenerateRow { source_level: usize, h: usize },
    #[error("origin slot {origin}: missing horizon step {h}")]
    MissingHorizonStep { origin: usize, h: usize },
    #[error("line {line}: variance must be positive and finite")]
    NonPositiveVariance { line: u64 },
    #[error("line {line}: duplicate row for origin {origin}, step {h}")]
    DuplicateRow { line: u64, origin: usize, h: usize },
    #[error("line {line}: {reason}")]
    MalformedRow { line: u64, reason: String },
    #[error(transparent)]
    Link(#[from] LinkError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForecastStep {
    pub mu: f64,
    pub sigma2: f64,
}

/// `H`-step mean/variance forecast issued at `origin_slot`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianForecast {
    origin_slot: usize,
    steps: Vec<ForecastStep>,
}

impl GaussianForecast {
    pub fn new(origin_slot: usize, steps: Vec<ForecastStep>) -> Result<Self, ForecastError> {
        if steps.is_empty() {
            return Err(ForecastError::ZeroHorizon);
        }
        for (i, s) in steps.iter().enumerate() {
            if !s.mu.is_finite() {
                return Err(ForecastError::InvalidStep { h: i + 1, reason: format!("mu {} not finite", s.mu) });
            }
            if !(s.sigma2 > 0.0 && s.sigma2.is_finite()) {
                return Err(ForecastError::InvalidStep { h: i + 1, reason: format!("sigma2 {} not positive", s.sigma2) });
            }
        }
        Ok(Self { origin_slot, steps })
    }

    pub fn origin_slot(&self) -> usize {
        self.origin_slot
    }

    pub fn horizon(&self) -> usize {
        self.steps.len()
    }

    pub fn steps(&self) -> &[ForecastStep] {
        &self.steps
    }

    /// Step `h` counted from 1.
    pub fn step(&self, h: usize) -> ForecastStep {
        self.steps[h - 1]
    }
}

/// Residual standard deviation per horizon step, floored and made non-decreasing.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceCalibration {
    sigma: Vec<f64>,
}

impl VarianceCalibration {
    /// Applies the floor and the running-maximum clamp to raw per-step deviations.
    pub fn from_raw(raw: &[f64]) -> Self {
        let mut running = 0.0_f64;
        let sigma = raw
            .iter()
            .map(|s| {
                running = running.max(s.max(SIGMA_FLOOR_DB));
                running
            })
            .collect();
        Self { sigma }
    }

    /// Same deviation at every step.
    pub fn constant(sigma: f64, horizon: usize) -> Self {
        Self::from_raw(&vec![sigma; horizon])
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    pub fn horizon(&self) -> usize {
        self.sigma.len()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "h,sigma_db")?;
        for (i, s) in self.sigma.iter().enumerate() {
            writeln!(out, "{},{}", i + 1, fmt_f64(*s))?;
        }
        Ok(())
    }

    pub fn read_csv<R: Read>(source: R) -> Result<Self, ForecastError> {
        let mut reader = csv::ReaderBuilder::new().from_reader(source);
        check_header(reader.headers()?, &["h", "sigma_db"])?;
        let mut raw = Vec::new();
        for record in reader.records() {
            let record = record?;
            let line = record.position().map_or(0, |p| p.line());
            let h: usize = record[0].trim().parse().map_err(|_| ForecastError::MalformedRow { line, reason: "bad h".into() })?;
            if h != raw.len() + 1 {
                return Err(ForecastError::MissingHorizonStep { origin: 0, h: raw.len() + 1 });
            }
            let s = parse_f64(&record[1])
                .filter(|s| s.is_finite())
                .ok_or_else(|| ForecastError::MalformedRow { line, reason: "bad sigma".into() })?;
            raw.push(s);
        }
        Ok(Self::from_raw(&raw))
    }
}

/// Estimates per-step residual deviations from `(forecast mean, realized)` pairs;
/// `pairs[h - 1]` holds the pairs for step `h`.
pub fn calibrate_variance(pairs: &[Vec<(f64, f64)>]) -> Result<VarianceCalibration, ForecastError> {
    if pairs.is_empty() {
        return Err(ForecastError::ZeroHorizon);
    }
    let mut raw = Vec::with_capacity(pairs.len());
    for (i, step) in pairs.iter().enumerate() {
        if step.len() < MIN_CALIBRATION_PAIRS {
            return Err(ForecastError::TooFewSamples { h: i + 1, found: step.len() });
        }
        let residuals: Vec<f64> = step.iter().map(|(mu, x)| x - mu).collect();
        raw.push(sample_std(&residuals));
    }
    Ok(VarianceCalibration::from_raw(&raw))
}

/// Calibrates the persistence forecaster on a trace: the step-`h` forecast at `t` is `x[t]`.
pub fn calibrate_naive(samples: &[f64], horizon: usize) -> Result<VarianceCalibration, ForecastError> {
    let pairs: Vec<Vec<(f64, f64)>> = (1..=horizon)
        .map(|h| samples.windows(h + 1).map(|w| (w[0], w[h])).collect())
        .collect();
    calibrate_variance(&pairs)
}

/// Persistence forecast: every step's mean is the last observed value.
pub fn naive_forecast(
    origin_slot: usize,
    history: &[f64],
    horizon: usize,
    calib: &VarianceCalibration,
) -> Result<GaussianForecast, ForecastError> {
    let last = *history.last().ok_or(ForecastError::EmptyHistory)?;
    if horizon == 0 {
        return Err(ForecastError::ZeroHorizon);
    }
    if calib.horizon() < horizon {
        return Err(ForecastError::CalibrationTooShort { available: calib.horizon(), needed: horizon });
    }
    let steps = calib.sigma()[..horizon].iter().map(|s| ForecastStep { mu: last, sigma2: s * s }).collect();
    GaussianForecast::new(origin_slot, steps)
}

/// Raw probability of moving from `from` to `to` given a Gaussian RSL with mean `mu` and
/// standard deviation `sigma`, before row normalization. Negative values clamp to zero.
pub fn transition_probability(from: usize, to: usize, mu: f64, sigma: f64, table: &AcmTable) -> f64 {
    let src = table.level(from);
    let dst = table.level(to);
    let upper = dst.up_dbm.max(src.down_dbm);
    let lower = dst.down_dbm.min(src.up_dbm);
    let p = normal_cdf((upper - mu) / sigma) - normal_cdf((lower - mu) / sigma);
    p.max(0.0)
}

/// Normalized transition row out of `from` for one forecast step.
pub fn transition_row(from: usize, step: ForecastStep, h: usize, table: &AcmTable) -> Result<Vec<f64>, ForecastError> {
    let sigma = step.sigma2.sqrt();
    let mut row: Vec<f64> = (0..table.len()).map(|to| transition_probability(from, to, step.mu, sigma, table)).collect();
    let total: f64 = row.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(ForecastError::DegenerateRow { source_level: from, h });
    }
    row.iter_mut().for_each(|p| *p /= total);
    Ok(row)
}

/// Per-step distribution over capacity levels; `probs[h - 1][l]` is the probability of
/// level `l` at step `h`.
#[derive(Debug, Clone, PartialEq)]
pub struct CapacityPmf {
    origin_level: usize,
    probs: Vec<Vec<f64>>,
}

impl CapacityPmf {
    /// Builds a PMF from explicit per-step vectors (each normalized on entry).
    pub fn from_probs(origin_level: usize, probs: Vec<Vec<f64>>) -> Self {
        let probs = probs
            .into_iter()
            .map(|v| {
                let total: f64 = v.iter().sum();
                v.into_iter().map(|p| p / total).collect()
            })
            .collect();
        Self { origin_level, probs }
    }

    /// All mass on `level` for each of `horizon` steps.
    pub fn point_mass(origin_level: usize, level: usize, levels: usize, horizon: usize) -> Self {
        let mut v = vec![0.0; levels];
        v[level] = 1.0;
        Self { origin_level, probs: vec![v; horizon] }
    }

    pub fn horizon(&self) -> usize {
        self.probs.len()
    }

    pub fn levels(&self) -> usize {
        self.probs.first().map_or(0, Vec::len)
    }

    pub fn origin_level(&self) -> usize {
        self.origin_level
    }

    /// Distribution at step `h` counted from 1.
    pub fn step(&self, h: usize) -> &[f64] {
        &self.probs[h - 1]
    }

    pub fn steps(&self) -> &[Vec<f64>] {
        &self.probs
    }

    /// Per-level probability mass summed over all steps.
    pub fn level_weights(&self) -> Vec<f64> {
        let mut w = vec![0.0; self.levels()];
        for step in &self.probs {
            for (acc, p) in w.iter_mut().zip(step) {
                *acc += p;
            }
        }
        w
    }

    /// Most likely level at step `h`. Exact ties go to the level nearest the origin level,
    /// then to the lower one.
    pub fn most_likely_level(&self, h: usize) -> usize {
        let step = self.step(h);
        let origin = self.origin_level as isize;
        let mut best = 0;
        for l in 1..step.len() {
            let (p, q) = (step[l], step[best]);
            let closer = (l as isize - origin).abs() < (best as isize - origin).abs();
            if p > q || (p == q && closer) {
                best = l;
            }
        }
        best
    }
}

/// Propagates the forecast through the level-transition chain starting at `current_level`.
pub fn capacity_pmf_horizon(
    current_level: usize,
    forecast: &GaussianForecast,
    table: &AcmTable,
) -> Result<CapacityPmf, ForecastError> {
    table.check_level(current_level)?;
    let levels = table.len();
    let mut probs: Vec<Vec<f64>> = Vec::with_capacity(forecast.horizon());
    probs.push(transition_row(current_level, forecast.step(1), 1, table)?);
    for h in 2..=forecast.horizon() {
        let prev = &probs[h - 2];
        let mut next = vec![0.0; levels];
        for (j, &weight) in prev.iter().enumerate() {
            if weight == 0.0 {
                continue;
            }
            let row = transition_row(j, forecast.step(h), h, table)?;
            for (acc, p) in next.iter_mut().zip(&row) {
                *acc += p * weight;
            }
        }
        let total: f64 = next.iter().sum();
        next.iter_mut().for_each(|p| *p /= total);
        probs.push(next);
    }
    Ok(CapacityPmf { origin_level: current_level, probs })
}

/// Source of forecasts for the simulation loop.
pub trait Forecaster: Send + Sync {
    /// Forecast issued at `origin_slot`; `history` holds the RSL samples up to and
    /// including that slot. `None` means no forecast is available.
    fn forecast(&self, origin_slot: usize, history: &[f64]) -> Option<GaussianForecast>;
}

/// Persistence forecaster with calibrated variances.
#[derive(Debug, Clone)]
pub struct NaiveForecaster {
    pub horizon: usize,
    pub lookback: usize,
    pub calibration: VarianceCalibration,
}

impl NaiveForecaster {
    pub fn new(horizon: usize, calibration: VarianceCalibration) -> Self {
        Self { horizon, lookback: DEFAULT_LOOKBACK, calibration }
    }
}

impl Forecaster for NaiveForecaster {
    fn forecast(&self, origin_slot: usize, history: &[f64]) -> Option<GaussianForecast> {
        let start = history.len().saturating_sub(self.lookback);
        naive_forecast(origin_slot, &history[start..], self.horizon, &self.calibration).ok()
    }
}

/// Forecasts loaded from a file, indexed by origin slot.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ForecastProvider {
    by_origin: BTreeMap<usize, GaussianForecast>,
}

impl ForecastProvider {
    pub fn get(&self, origin_slot: usize) -> Option<&GaussianForecast> {
        self.by_origin.get(&origin_slot)
    }

    pub fn len(&self) -> usize {
        self.by_origin.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_origin.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &GaussianForecast> {
        self.by_origin.values()
    }

    pub fn insert(&mut self, forecast: GaussianForecast) {
        self.by_origin.insert(forecast.origin_slot(), forecast);
    }

    /// Writes the `origin_slot,h,mu_dbm,sigma2_db2` format.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{}", FORECAST_HEADER.join(","))?;
        for f in self.by_origin.values() {
            for (i, s) in f.steps().iter().enumerate() {
                writeln!(out, "{},{},{},{}", f.origin_slot(), i + 1, fmt_f64(s.mu), fmt_f64(s.sigma2))?;
            }
        }
        Ok(())
    }
}

/// Reads forecasts in the `origin_slot,h,mu_dbm,sigma2_db2` format. Each origin must
/// list steps `1..=H` without gaps; rows may appear in any order.
pub fn load_external_forecasts<R: Read>(source: R) -> Result<ForecastProvider, ForecastError> {
    let mut reader = csv::ReaderBuilder::new().from_reader(source);
    check_header(reader.headers()?, &FORECAST_HEADER)?;
    let mut rows: BTreeMap<usize, BTreeMap<usize, ForecastStep>> = BTreeMap::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let malformed = |reason: String| ForecastError::MalformedRow { line, reason };
        if record.len() != 4 {
            return Err(malformed(format!("expected 4 fields, found {}", record.len())));
        }
        let origin: usize = record[0].trim().parse().map_err(|_| malformed(format!("bad origin {:?}", &record[0])))?;
        let h: usize = record[1].trim().parse().map_err(|_| malformed(format!("bad step {:?}", &record[1])))?;
        if h == 0 {
            return Err(malformed("horizon steps start at 1".into()));
        }
        let mu = parse_f64(&record[2]).filter(|m| m.is_finite()).ok_or_else(|| malformed(format!("bad mu {:?}", &record[2])))?;
        let sigma2 = parse_f64(&record[3]).ok_or_else(|| malformed(format!("bad sigma2 {:?}", &record[3])))?;
        if !(sigma2 > 0.0 && sigma2.is_finite()) {
            return Err(ForecastError::NonPositiveVariance { line });
        }
        if rows.entry(origin).or_default().insert(h, ForecastStep { mu, sigma2 }).is_some() {
            return Err(ForecastError::DuplicateRow { line, origin, h });
        }
    }
    let mut provider = ForecastProvider::default();
    for (origin, steps) in rows {
        let horizon = *steps.keys().next_back().expect("origin has at least one row");
        let mut ordered = Vec::with_capacity(horizon);
        for h in 1..=horizon {
            ordered.push(*steps.get(&h).ok_or(ForecastError::MissingHorizonStep { origin, h })?);
        }
        provider.insert(GaussianForecast::new(origin, ordered)?);
    }
    Ok(provider)
}

/// File-backed forecaster; slots without a forecast fall back to `fallback` when set.
#[derive(Debug, Clone)]
pub struct ExternalForecaster {
    pub provider: ForecastProvider,
    pub fallback: Option<NaiveForecaster>,
}

impl Forecaster for ExternalForecaster {
    fn forecast(&self, origin_slot: usize, history: &[f64]) -> Option<GaussianForecast> {
        self.provider
            .get(origin_slot)
            .cloned()
            .or_else(|| self.fallback.as_ref().and_then(|f| f.forecast(origin_slot, history)))
    }
}
