//! Scenario × policy sweeps in long format, one row per run.

use std::collections::HashMap;
use std::io::Write;

use serde::Serialize;

use crate::engine::{self, metrics, ForecasterSet, SimulationResult};
use crate::exec::Execution;
use crate::num::fmt_f64;
use crate::policies::{PolicyKind, PolicyParams, QTable};
use crate::scenario::Scenario;
use crate::suite::{cv_bucket, cv_bucket_label};

pub const SWEEP_HEADER: [&str; 10] = [
    "scenario",
    "policy",
    "kind",
    "cv",
    "cv_bucket",
    "revenue",
    "normalized_revenue",
    "pct_negative",
    "underprov_fraction",
    "error",
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub scenario: String,
    pub policy: String,
    /// `policy` for requested cells, `reference` for the per-scenario AdmitAll and
    /// Naive Greedy runs.
    pub kind: &'static str,
    pub cv: f64,
    pub cv_bucket: String,
    pub revenue: Option<f64>,
    pub normalized_revenue: Option<f64>,
    pub pct_negative: Option<f64>,
    pub underprov_fraction: Option<f64>,
    pub error: Option<String>,
}

pub struct SweepSpec<'a> {
    pub policies: &'a [PolicyKind],
    pub params: &'a PolicyParams,
    /// Frozen tables for the Q-learning kinds; a kind without one learns during its run.
    pub tables: &'a HashMap<PolicyKind, QTable>,
    pub cv_edges: &'a [f64],
    pub seed: u64,
}

/// Runs every scenario under the two reference policies and each requested policy.
/// Scenario `k` uses seed `seed + k` for all of its runs. Scenarios run as parallel jobs
/// under [`Execution::Parallel`]; a failing run becomes a row with `error` set.
pub fn sweep(scenarios: &[Scenario], forecasters: &ForecasterSet, spec: &SweepSpec, exec: Execution) -> Vec<SweepRow> {
    let jobs: Vec<usize> = (0..scenarios.len()).collect();
    exec.map(&jobs, |&k| sweep_scenario(&scenarios[k], forecasters.get(k), spec, spec.seed.wrapping_add(k as u64)))
        .into_iter()
        .flatten()
        .collect()
}

fn sweep_scenario(scenario: &Scenario, fc: Option<&dyn crate::forecast::Forecaster>, spec: &SweepSpec, seed: u64) -> Vec<SweepRow> {
    let cv = scenario.cv();
    let bucket = cv_bucket_label(cv_bucket(cv, spec.cv_edges), spec.cv_edges);
    let run = |kind: PolicyKind| -> Result<SimulationResult, String> {
        let mut policy = kind.build(spec.params, spec.tables.get(&kind).cloned());
        engine::run(scenario, policy.as_mut(), fc, seed).map_err(|e| e.to_string())
    };
    let admit_all = run(PolicyKind::AdmitAll);
    let greedy = run(PolicyKind::NaiveGreedy);
    let row = |kind: &'static str, policy: PolicyKind, result: &Result<SimulationResult, String>| {
        let mut row = SweepRow {
            scenario: scenario.name.clone(),
            policy: policy.name().to_string(),
            kind,
            cv,
            cv_bucket: bucket.clone(),
            revenue: None,
            normalized_revenue: None,
            pct_negative: None,
            underprov_fraction: None,
            error: None,
        };
        match result {
            Ok(r) => {
                let m = metrics(r, greedy.as_ref().ok(), admit_all.as_ref().ok(), cv);
                row.revenue = Some(m.revenue);
                row.normalized_revenue = m.normalized_revenue;
                row.pct_negative = Some(m.pct_negative);
                row.underprov_fraction = m.underprov_fraction;
            }
            Err(e) => row.error = Some(e.clone()),
        }
        row
    };
    let mut rows = vec![
        row("reference", PolicyKind::AdmitAll, &admit_all),
        row("reference", PolicyKind::NaiveGreedy, &greedy),
    ];
    for &kind in spec.policies {
        rows.push(row("policy", kind, &run(kind)));
    }
    rows
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{}", SWEEP_HEADER.join(","))?;
    let opt = |x: Option<f64>| x.map(fmt_f64).unwrap_or_default();
    for r in rows {
        let error = r.error.as_deref().unwrap_or("").replace([',', '\n'], ";");
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.scenario,
            r.policy,
            r.kind,
            fmt_f64(r.cv),
            r.cv_bucket,
            opt(r.revenue),
            opt(r.normalized_revenue),
            opt(r.pct_negative),
            opt(r.underprov_fraction),
            error
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::suite::{small_random_scenario, DEFAULT_CV_EDGES};

    #[test]
    fn rows_per_scenario() {
        let scenarios: Vec<Scenario> = (0..2).map(|s| small_random_scenario(s, 6)).collect();
        let fcs = ForecasterSet::for_scenarios(&scenarios, 5, 15);
        let tables = HashMap::new();
        let policies = [PolicyKind::Random, PolicyKind::LocallyOptimal];
        let spec = SweepSpec { policies: &policies, params: &PolicyParams::default(), tables: &tables, cv_edges: &DEFAULT_CV_EDGES, seed: 0 };
        let rows = sweep(&scenarios, &fcs, &spec, Execution::Parallel);
        assert_eq!(rows.iter().filter(|r| r.kind == "policy").count(), 4);
        assert_eq!(rows.iter().filter(|r| r.kind == "reference").count(), 4);
        assert!(rows.iter().all(|r| r.error.is_none()));
        assert_eq!(rows, sweep(&scenarios, &fcs, &spec, Execution::Sequential));
        let greedy = rows.iter().find(|r| r.policy == "naive-greedy").unwrap();
        assert!(greedy.revenue == Some(0.0) || greedy.normalized_revenue == Some(1.0));

        let mut buf = Vec::new();
        write_sweep_csv(&[], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 1);
    }
}
