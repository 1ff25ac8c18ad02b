//! Synthetic scenario collections: the CV-bucketed trend suite and the small random
//! instances used to check the oracle.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::link_capacity::{generate_synthetic_rsl, AcmLevel, AcmTable, SyntheticRslParams};
use crate::scenario::{Scenario, ScenarioError, DEFAULT_DELTA};
use crate::slicing::{generate_slice_requests, generate_synthetic_flows, Catalog, SliceRequest, SyntheticFlowParams};

pub const DEFAULT_CV_EDGES: [f64; 2] = [0.2, 0.6];

/// Bucket index of `cv` for ascending `edges`: bucket `k` holds `edges[k-1] <= cv < edges[k]`.
pub fn cv_bucket(cv: f64, edges: &[f64]) -> usize {
    edges.iter().take_while(|&&e| cv >= e).count()
}

pub fn cv_bucket_label(bucket: usize, edges: &[f64]) -> String {
    match bucket {
        0 => format!("<{}", edges.first().copied().unwrap_or(f64::INFINITY)),
        b if b >= edges.len() => format!(">{}", edges[edges.len() - 1]),
        b => format!("[{},{}]", edges[b - 1], edges[b]),
    }
}

/// Knobs of the trend suite. Fades deeper than the lowest ACM threshold read as outages;
/// CV is measured on the dBm trace so the upper buckets need such outages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuiteParams {
    pub per_bucket: usize,
    pub horizon: usize,
    pub table: String,
    pub kappa: f64,
    pub flows: SyntheticFlowParams,
    /// Fade depth range in dB per bucket.
    pub depth_db: [[f64; 2]; 3],
    /// Fade count range per bucket.
    pub fades: [[usize; 2]; 3],
    pub fade_minutes: [usize; 2],
    pub max_attempts: usize,
}

impl Default for SuiteParams {
    fn default() -> Self {
        Self {
            per_bucket: 10,
            horizon: 60,
            table: "af60".into(),
            kappa: crate::slicing::DEFAULT_KAPPA,
            flows: SyntheticFlowParams {
                arrivals_per_slot: [1.5, 2.0, 1.5],
                median_throughput: [4.0, 12.0, 8.0],
                throughput_sigma: 0.8,
                mean_duration: [6.0, 15.0, 10.0],
            },
            depth_db: [[0.0, 3.0], [30.0, 90.0], [120.0, 260.0]],
            fades: [[0, 1], [1, 2], [2, 3]],
            fade_minutes: [8, 24],
            max_attempts: 500,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SuiteScenario {
    pub scenario: Scenario,
    pub bucket: usize,
    pub cv: f64,
}

/// `per_bucket` scenarios in each CV bucket, interleaved low/mid/high. Every scenario
/// draws its trace until its CV lands in the intended bucket. SRs that would run past
/// the horizon are dropped.
pub fn trend_suite(params: &SuiteParams, seed: u64) -> Result<Vec<SuiteScenario>, ScenarioError> {
    let table = AcmTable::bundled(&params.table).ok_or_else(|| ScenarioError::UnknownTable(params.table.clone()))?;
    let catalog = Catalog::canned(params.kappa);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for k in 0..params.per_bucket * 3 {
        let bucket = k % 3;
        let mut trace = None;
        for _ in 0..params.max_attempts {
            let [lo, hi] = params.depth_db[bucket];
            let [fmin, fmax] = params.fades[bucket];
            let p = SyntheticRslParams {
                event_count: rng.random_range(fmin..=fmax),
                event_depth_db: if hi > lo { rng.random_range(lo..hi) } else { lo },
                event_duration_min: rng.random_range(params.fade_minutes[0]..=params.fade_minutes[1]),
                ..SyntheticRslParams::default()
            };
            let t = generate_synthetic_rsl(&p, params.horizon, rng.random())?;
            let cv = crate::scenario::trace_cv(t.samples());
            if cv_bucket(cv, &DEFAULT_CV_EDGES) == bucket {
                trace = Some(t);
                break;
            }
        }
        let trace = trace.ok_or(ScenarioError::SuiteBucket { bucket })?;
        let flows = generate_synthetic_flows(&params.flows, params.horizon, rng.random());
        let requests = renumber(
            generate_slice_requests(&flows, &catalog)?.into_iter().filter(|r| r.end_slot() <= params.horizon).collect(),
        );
        let scenario = Scenario::from_trace(format!("suite-{k:02}"), table.clone(), &trace, None, requests, DEFAULT_DELTA)?;
        let cv = scenario.cv();
        out.push(SuiteScenario { scenario, bucket, cv });
    }
    Ok(out)
}

fn renumber(mut requests: Vec<SliceRequest>) -> Vec<SliceRequest> {
    for (i, r) in requests.iter_mut().enumerate() {
        r.index = i;
    }
    requests
}

/// Four-level table sized to the canned demands, so a handful of SRs can overload it.
pub fn small_table() -> AcmTable {
    let lvl = |c: f64, up: f64, down: f64| AcmLevel { capacity_mbps: c, up_dbm: up, down_dbm: down };
    AcmTable::new(
        "small4",
        vec![
            lvl(0.0, -70.0, f64::NEG_INFINITY),
            lvl(20.0, -62.0, -74.0),
            lvl(40.0, -54.0, -66.0),
            lvl(60.0, f64::INFINITY, -58.0),
        ],
    )
    .expect("valid table")
}

/// Random instance with at most `max_n` SRs, horizon 25..=60 and the four-level table.
/// Every SR finishes within the horizon.
pub fn small_random_scenario(seed: u64, max_n: usize) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let table = small_table();
    let horizon = rng.random_range(25..=60);
    let mut level = rng.random_range(1..table.len());
    let mut levels = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        if rng.random_bool(0.2) {
            level = if rng.random_bool(0.5) { level.saturating_sub(1) } else { (level + 1).min(table.len() - 1) };
        }
        levels.push(level);
    }
    let catalog = Catalog::canned(crate::slicing::DEFAULT_KAPPA);
    let n = rng.random_range(1..=max_n);
    let mut picks: Vec<(usize, usize)> = (0..n)
        .map(|_| {
            let ty = rng.random_range(0..catalog.types().len());
            let latest = horizon - catalog.types()[ty].duration_slots;
            (rng.random_range(0..=latest), ty)
        })
        .collect();
    picks.sort();
    let requests = picks
        .into_iter()
        .enumerate()
        .map(|(i, (t, ty))| SliceRequest::new(i, t, catalog.types()[ty].clone()))
        .collect();
    Scenario::from_levels(format!("small-{seed}"), table, levels, requests, DEFAULT_DELTA).expect("valid scenario")
}
