//! TOML run configuration. Paths inside the file are relative to the file's directory.

use std::fmt;
use std::fs::File;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};
use slice_admission::engine::{default_forecaster, ForecasterSet};
use slice_admission::forecast::{
    load_external_forecasts, ExternalForecaster, Forecaster, NaiveForecaster, VarianceCalibration, DEFAULT_HORIZON,
    DEFAULT_LOOKBACK,
};
use slice_admission::link_capacity::ingest_rsl_trace;
use slice_admission::policies::{PolicyKind, PolicyParams, QConfig, QTable, DEFAULT_LO_THRESHOLD};
use slice_admission::scenario::{load_bundle, load_table, read_capacity_csv, Scenario, DEFAULT_DELTA};
use slice_admission::slicing::{
    generate_slice_requests, read_flows, read_slice_requests, Catalog, SliceRequest, DEFAULT_KAPPA,
};

pub const SEED_ENV: &str = "AWARESAC_SEED";

/// Invalid configuration; the CLI exits with status 2 on these.
#[derive(Debug)]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(field: &str, message: impl Into<String>) -> Self {
        Self { field: field.to_string(), message: message.into() }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub out_dir: PathBuf,
    /// Forecast horizon H in slots.
    pub horizon: usize,
    /// Forecaster lookback T in slots.
    pub lookback: usize,
    pub delta: f64,
    pub kappa: f64,
    pub scenario: ScenarioSection,
    pub policy: PolicySection,
    pub q: QConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: None,
            out_dir: PathBuf::from("out"),
            horizon: DEFAULT_HORIZON,
            lookback: DEFAULT_LOOKBACK,
            delta: DEFAULT_DELTA,
            kappa: DEFAULT_KAPPA,
            scenario: ScenarioSection::default(),
            policy: PolicySection::default(),
            q: QConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSection {
    /// JSON-lines scenario bundle; excludes the single-scenario keys below.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bundle: Option<PathBuf>,
    /// Bundle entry used by single-scenario commands.
    pub index: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rsl: Option<PathBuf>,
    /// Bundled table name or table CSV path.
    pub acm_table: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub capacity: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub srs: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub flows: Option<PathBuf>,
    /// "canned" or "stats"; used with `flows`.
    pub catalog: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub forecasts: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub calibration: Option<PathBuf>,
}

impl Default for ScenarioSection {
    fn default() -> Self {
        Self {
            bundle: None,
            index: 0,
            rsl: None,
            acm_table: "af60".into(),
            capacity: None,
            srs: None,
            flows: None,
            catalog: "canned".into(),
            forecasts: None,
            calibration: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicySection {
    pub name: String,
    /// Frozen Q-table for the Q-learning policies.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub qtable: Option<PathBuf>,
    pub lo_threshold: usize,
}

impl Default for PolicySection {
    fn default() -> Self {
        Self { name: "locally-optimal".into(), qtable: None, lo_threshold: DEFAULT_LO_THRESHOLD }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| {
            let field = e.message().split('`').nth(1).unwrap_or("config").to_string();
            ConfigError::new(&field, e.to_string().trim())
        })
    }

    /// Reads `path` (or the defaults when `None`) and makes relative paths absolute
    /// against the file's directory.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::new("config", format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.rebase(base);
        Ok(cfg)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(p) = p {
                *p = base.join(&*p);
            }
        };
        let s = &mut self.scenario;
        for p in [&mut s.bundle, &mut s.rsl, &mut s.capacity, &mut s.srs, &mut s.flows, &mut s.forecasts, &mut s.calibration] {
            fix(p);
        }
        fix(&mut self.policy.qtable);
        if is_table_path(&s.acm_table) {
            s.acm_table = base.join(&s.acm_table).to_string_lossy().into_owned();
        }
        self.out_dir = base.join(&self.out_dir);
    }

    #[cfg(test)]
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Field-level checks that do not need to load any data.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.horizon == 0 {
            return Err(ConfigError::new("horizon", "must be at least 1"));
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(ConfigError::new("delta", format!("must be positive, got {}", self.delta)));
        }
        if !(self.kappa >= 0.0 && self.kappa.is_finite()) {
            return Err(ConfigError::new("kappa", format!("must be non-negative, got {}", self.kappa)));
        }
        self.policy_kind()?;
        let s = &self.scenario;
        if s.catalog != "canned" && s.catalog != "stats" {
            return Err(ConfigError::new("scenario.catalog", format!("expected canned or stats, got {:?}", s.catalog)));
        }
        let files = [
            ("scenario.bundle", &s.bundle),
            ("scenario.rsl", &s.rsl),
            ("scenario.capacity", &s.capacity),
            ("scenario.srs", &s.srs),
            ("scenario.flows", &s.flows),
            ("scenario.forecasts", &s.forecasts),
            ("scenario.calibration", &s.calibration),
            ("policy.qtable", &self.policy.qtable),
        ];
        for (field, p) in files {
            if let Some(p) = p {
                if !p.is_file() {
                    return Err(ConfigError::new(field, format!("file not found: {}", p.display())));
                }
            }
        }
        if s.bundle.is_some() {
            for (field, set) in [
                ("scenario.rsl", s.rsl.is_some()),
                ("scenario.capacity", s.capacity.is_some()),
                ("scenario.srs", s.srs.is_some()),
                ("scenario.flows", s.flows.is_some()),
                ("scenario.forecasts", s.forecasts.is_some()),
            ] {
                if set {
                    return Err(ConfigError::new(field, "cannot be combined with scenario.bundle"));
                }
            }
        } else {
            if s.rsl.is_none() && s.capacity.is_none() {
                return Err(ConfigError::new("scenario.rsl", "one of scenario.rsl, scenario.capacity or scenario.bundle is required"));
            }
            if s.srs.is_some() == s.flows.is_some() {
                return Err(ConfigError::new("scenario.srs", "exactly one of scenario.srs and scenario.flows is required"));
            }
            if is_table_path(&s.acm_table) && !Path::new(&s.acm_table).is_file() {
                return Err(ConfigError::new("scenario.acm_table", format!("unknown table or missing file: {}", s.acm_table)));
            }
        }
        Ok(())
    }

    pub fn policy_kind(&self) -> Result<PolicyKind, ConfigError> {
        self.policy.name.parse().map_err(|e: slice_admission::policies::UnknownPolicy| ConfigError::new("policy.name", e.to_string()))
    }

    pub fn policy_params(&self) -> PolicyParams {
        PolicyParams { lo_threshold: self.policy.lo_threshold, q: self.q.clone() }
    }

    pub fn qtable(&self) -> anyhow::Result<Option<QTable>> {
        let Some(path) = &self.policy.qtable else { return Ok(None) };
        let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
        Ok(Some(QTable::read(std::io::BufReader::new(file)).with_context(|| format!("reading {}", path.display()))?))
    }

    /// Every scenario the configuration describes.
    pub fn scenarios(&self) -> anyhow::Result<Vec<Scenario>> {
        let s = &self.scenario;
        if let Some(bundle) = &s.bundle {
            return Ok(load_bundle(bundle)?);
        }
        let here = Path::new(".");
        let table = load_table(&s.acm_table, here)?;
        let requests = if let Some(p) = &s.srs {
            read_slice_requests(open(p)?, self.kappa).with_context(|| format!("reading {}", p.display()))?
        } else {
            let p = s.flows.as_ref().expect("validated");
            let flows = read_flows(open(p)?).with_context(|| format!("reading {}", p.display()))?;
            let catalog = match s.catalog.as_str() {
                "stats" => Catalog::from_flows(&flows, self.kappa)?,
                _ => Catalog::canned(self.kappa),
            };
            generate_slice_requests(&flows, &catalog)?
        };
        let name = s
            .rsl
            .as_ref()
            .or(s.capacity.as_ref())
            .and_then(|p| p.file_stem())
            .map_or("scenario".to_string(), |n| n.to_string_lossy().into_owned());
        let trace = match &s.rsl {
            Some(p) => Some(ingest_rsl_trace(open(p)?, &name).with_context(|| format!("reading {}", p.display()))?),
            None => None,
        };
        let levels = match &s.capacity {
            Some(p) => Some(read_capacity_csv(open(p)?, &table).with_context(|| format!("reading {}", p.display()))?),
            None => None,
        };
        let horizon = levels.as_ref().map(Vec::len).or(trace.as_ref().map(|t| t.len())).expect("validated");
        let requests = if s.flows.is_some() { within_horizon(requests, horizon) } else { requests };
        let scenario = match (trace, levels) {
            (Some(t), Some(l)) => Scenario::new(name, table, l, t.samples().to_vec(), requests, self.delta)?,
            (Some(t), None) => Scenario::from_trace(name, table, &t, None, requests, self.delta)?,
            (None, Some(l)) => Scenario::from_levels(name, table, l, requests, self.delta)?,
            (None, None) => unreachable!("validated"),
        };
        Ok(vec![scenario])
    }

    /// The scenario at `scenario.index`.
    pub fn scenario(&self) -> anyhow::Result<Scenario> {
        let mut all = self.scenarios()?;
        let n = all.len();
        if self.scenario.index >= n {
            return Err(ConfigError::new("scenario.index", format!("{} out of range for {n} scenarios", self.scenario.index)).into());
        }
        Ok(all.swap_remove(self.scenario.index))
    }

    /// Forecaster per scenario: the forecast file (falling back to the naive forecaster on
    /// missing slots), else the naive forecaster with the given or in-sample calibration.
    pub fn forecasters(&self, scenarios: &[Scenario]) -> anyhow::Result<ForecasterSet> {
        let calibration = match &self.scenario.calibration {
            Some(p) => Some(VarianceCalibration::read_csv(open(p)?).with_context(|| format!("reading {}", p.display()))?),
            None => None,
        };
        let external = match &self.scenario.forecasts {
            Some(p) => Some(load_external_forecasts(open(p)?).with_context(|| format!("reading {}", p.display()))?),
            None => None,
        };
        let items = scenarios
            .iter()
            .map(|s| {
                let naive = match &calibration {
                    Some(c) => NaiveForecaster { horizon: self.horizon, lookback: self.lookback, calibration: c.clone() },
                    None => default_forecaster(s, self.horizon, self.lookback),
                };
                let f: Box<dyn Forecaster> = match &external {
                    Some(provider) => Box::new(ExternalForecaster { provider: provider.clone(), fallback: Some(naive) }),
                    None => Box::new(naive),
                };
                Some(f)
            })
            .collect();
        Ok(ForecasterSet::new(items))
    }
}

fn is_table_path(spec: &str) -> bool {
    slice_admission::link_capacity::AcmTable::bundled(spec).is_none()
}

/// Keeps the requests arriving before `horizon`, renumbered from 0.
pub fn within_horizon(requests: Vec<SliceRequest>, horizon: usize) -> Vec<SliceRequest> {
    let mut kept: Vec<SliceRequest> = requests.into_iter().filter(|r| r.arrival_slot < horizon).collect();
    for (i, r) in kept.iter_mut().enumerate() {
        r.index = i;
    }
    kept
}

fn open(path: &Path) -> anyhow::Result<File> {
    File::open(path).with_context(|| format!("opening {}", path.display()))
}

/// Flag, then config, then `AWARESAC_SEED`, then 0.
pub fn resolve_seed(flag: Option<u64>, config: Option<u64>) -> Result<u64, ConfigError> {
    if let Some(s) = flag.or(config) {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v.trim().parse().map_err(|_| ConfigError::new(SEED_ENV, format!("not an unsigned integer: {v:?}"))),
        Err(_) => Ok(0),
    }
}
