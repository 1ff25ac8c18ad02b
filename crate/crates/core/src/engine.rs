//! Slot-by-slot simulation of one admission policy on one scenario, plus the metrics
//! derived from runs and the online training loop for the Q-learning policies.
//!
//! Within a slot: SRs whose window ended leave; the gate is evaluated on the SRs that
//! were already active; if it is open the policy sees the arrival batch and admitted SRs
//! are credited their full reward at once; finally rate control runs over everything
//! active in the slot, newly admitted SRs included, and the penalties are charged.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::forecast::{self, capacity_pmf_horizon, ForecastError, Forecaster, NaiveForecaster, VarianceCalibration};
use crate::num::fmt_f64;
use crate::policies::{AdmissionPolicy, PolicyContext, QLearner};
use crate::scenario::{totals, Scenario, Totals};
use crate::slicing::SliceRequest;

/// Residual deviation used when a trace is too short to calibrate on.
pub const FALLBACK_SIGMA_DB: f64 = 1.0;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("slot {slot}: policy needs a forecast and none is available")]
    ForecastMissing { slot: usize },
    #[error("slot {slot}: {source}")]
    Forecast { slot: usize, source: ForecastError },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SlotRecord {
    pub t: usize,
    pub level: usize,
    pub capacity: f64,
    /// Demand of every SR active in the slot, including ones admitted in it.
    pub active_demand: f64,
    pub allocated: f64,
    pub penalty: f64,
    pub arrivals: usize,
    pub admitted_count: usize,
    pub gate_closed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SrRecord {
    pub index: usize,
    pub admitted: bool,
    pub reward: f64,
    pub cumulative_penalty: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationResult {
    pub scenario: String,
    pub policy: String,
    pub seed: u64,
    pub slots: Vec<SlotRecord>,
    pub srs: Vec<SrRecord>,
    pub totals: Totals,
}

impl SimulationResult {
    pub fn revenue(&self) -> f64 {
        self.totals.revenue
    }

    pub fn admitted_mask(&self) -> Vec<bool> {
        self.srs.iter().map(|r| r.admitted).collect()
    }

    pub fn admitted_count(&self) -> usize {
        self.srs.iter().filter(|r| r.admitted).count()
    }

    /// `t,capacity,active_demand,penalty,admitted_count`.
    pub fn write_slots_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "t,capacity,active_demand,penalty,admitted_count")?;
        for s in &self.slots {
            writeln!(
                out,
                "{},{},{},{},{}",
                s.t,
                fmt_f64(s.capacity),
                fmt_f64(s.active_demand),
                fmt_f64(s.penalty),
                s.admitted_count
            )?;
        }
        Ok(())
    }
}

/// Runs `policy` over `scenario`. The forecaster is consulted only in slots where the
/// policy is offered arrivals and asks for a forecast.
pub fn run(
    scenario: &Scenario,
    policy: &mut dyn AdmissionPolicy,
    forecaster: Option<&dyn Forecaster>,
    seed: u64,
) -> Result<SimulationResult, EngineError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = scenario.len();
    let requests = scenario.requests();
    let mut admitted = vec![false; n];
    let mut cumulative = vec![0.0; n];
    let mut active: Vec<usize> = Vec::new();
    let mut slots = Vec::with_capacity(scenario.horizon());
    let mut slot_penalties = Vec::with_capacity(scenario.horizon());

    for t in 0..scenario.horizon() {
        active.retain(|&i| scenario.end_slot(i) > t);
        let level = scenario.level(t);
        let capacity = scenario.capacity(t);
        let gate_closed = scenario.gate_closed_for(&active, t);
        let arrivals = scenario.arrivals_at(t);
        let offered = arrivals.len();
        let mut admitted_now = Vec::new();

        if offered > 0 && (!gate_closed || policy.bypasses_gate()) {
            let pmf = if policy.needs_forecast() {
                let fc = forecaster
                    .and_then(|f| f.forecast(t, &scenario.rsl()[..=t]))
                    .ok_or(EngineError::ForecastMissing { slot: t })?;
                Some(capacity_pmf_horizon(level, &fc, &scenario.table).map_err(|source| EngineError::Forecast { slot: t, source })?)
            } else {
                None
            };
            let active_refs: Vec<&SliceRequest> = active.iter().map(|&i| &requests[i]).collect();
            let arrival_refs: Vec<&SliceRequest> = arrivals.clone().map(|i| &requests[i]).collect();
            let ctx = PolicyContext {
                slot: t,
                active: &active_refs,
                arrivals: &arrival_refs,
                capacity,
                level,
                table: &scenario.table,
                pmf: pmf.as_ref(),
            };
            let mask = policy.decide(&ctx, &mut rng);
            for (i, admit) in arrivals.zip(mask) {
                if admit {
                    admitted[i] = true;
                    admitted_now.push(i);
                }
            }
        }

        active.extend_from_slice(&admitted_now);
        let active_demand: f64 = active.iter().map(|&i| requests[i].demand()).sum();
        let (penalty, allocated) = if active.is_empty() {
            (0.0, 0.0)
        } else {
            let alloc = scenario.allocate_members(&active, t);
            for (k, &i) in active.iter().enumerate() {
                cumulative[i] += alloc.penalties[k];
            }
            let allocated = active.iter().zip(&alloc.fractions).map(|(&i, f)| requests[i].demand() * f).sum();
            (alloc.total_penalty, allocated)
        };
        slot_penalties.push(penalty);
        slots.push(SlotRecord {
            t,
            level,
            capacity,
            active_demand,
            allocated,
            penalty,
            arrivals: offered,
            admitted_count: admitted_now.len(),
            gate_closed,
        });
    }

    let srs = (0..n)
        .map(|i| SrRecord { index: i, admitted: admitted[i], reward: requests[i].reward, cumulative_penalty: cumulative[i] })
        .collect();
    Ok(SimulationResult {
        scenario: scenario.name.clone(),
        policy: policy.name().to_string(),
        seed,
        slots,
        srs,
        totals: totals(requests, &admitted, &slot_penalties),
    })
}

/// Persistence forecaster calibrated on the scenario's own RSL when it is long enough,
/// otherwise with a flat [`FALLBACK_SIGMA_DB`].
pub fn default_forecaster(scenario: &Scenario, horizon: usize, lookback: usize) -> NaiveForecaster {
    let calibration = forecast::calibrate_naive(scenario.rsl(), horizon)
        .unwrap_or_else(|_| VarianceCalibration::constant(FALLBACK_SIGMA_DB, horizon));
    NaiveForecaster { horizon, lookback, calibration }
}

/// One optional forecaster per scenario, by position.
#[derive(Default)]
pub struct ForecasterSet {
    items: Vec<Option<Box<dyn Forecaster>>>,
}

impl ForecasterSet {
    pub fn new(items: Vec<Option<Box<dyn Forecaster>>>) -> Self {
        Self { items }
    }

    /// [`default_forecaster`] for each scenario.
    pub fn for_scenarios(scenarios: &[Scenario], horizon: usize, lookback: usize) -> Self {
        Self {
            items: scenarios
                .iter()
                .map(|s| Some(Box::new(default_forecaster(s, horizon, lookback)) as Box<dyn Forecaster>))
                .collect(),
        }
    }

    pub fn get(&self, k: usize) -> Option<&dyn Forecaster> {
        self.items.get(k).and_then(|f| f.as_deref())
    }
}

/// Admits exactly the SRs flagged in `z` (subject to the gate like any other policy).
#[derive(Debug, Clone)]
pub struct ReplayPolicy {
    pub z: Vec<bool>,
}

impl AdmissionPolicy for ReplayPolicy {
    fn name(&self) -> &str {
        "replay"
    }

    fn decide(&mut self, ctx: &PolicyContext, _rng: &mut ChaCha8Rng) -> Vec<bool> {
        ctx.arrivals.iter().map(|r| self.z[r.index]).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub scenario: String,
    pub policy: String,
    pub cv: f64,
    pub reward: f64,
    pub penalty: f64,
    pub revenue: f64,
    pub normalized_revenue: Option<f64>,
    /// Percentage of admitted SRs whose cumulative penalty exceeds their reward.
    pub pct_negative: f64,
    pub offered: usize,
    pub admitted: usize,
    pub underprov_fraction: Option<f64>,
}

/// Fraction of slots in which capacity falls short of the active demand.
pub fn underprovisioning_fraction(admit_all: &SimulationResult) -> f64 {
    if admit_all.slots.is_empty() {
        return 0.0;
    }
    let short = admit_all.slots.iter().filter(|s| s.capacity < s.active_demand).count();
    short as f64 / admit_all.slots.len() as f64
}

pub fn pct_negative_revenue(result: &SimulationResult) -> f64 {
    let admitted: Vec<&SrRecord> = result.srs.iter().filter(|r| r.admitted).collect();
    if admitted.is_empty() {
        return 0.0;
    }
    let negative = admitted.iter().filter(|r| r.cumulative_penalty > r.reward).count();
    100.0 * negative as f64 / admitted.len() as f64
}

/// Normalized revenue is `revenue / baseline revenue` and is left out when the baseline
/// earned nothing.
pub fn metrics(
    result: &SimulationResult,
    baseline: Option<&SimulationResult>,
    admit_all: Option<&SimulationResult>,
    cv: f64,
) -> MetricsReport {
    MetricsReport {
        scenario: result.scenario.clone(),
        policy: result.policy.clone(),
        cv,
        reward: result.totals.reward,
        penalty: result.totals.penalty,
        revenue: result.revenue(),
        normalized_revenue: baseline.map(|b| b.revenue()).filter(|r| *r != 0.0).map(|b| result.revenue() / b),
        pct_negative: pct_negative_revenue(result),
        offered: result.srs.len(),
        admitted: result.admitted_count(),
        underprov_fraction: admit_all.map(underprovisioning_fraction),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainingReport {
    pub passes: usize,
    pub updates: u64,
    pub converged: bool,
    /// Learning stopped on the update budget rather than on the convergence rule.
    pub hit_update_cap: bool,
}

/// Online training over the scenario collection, repeated until the learner freezes
/// itself or `max_passes` passes are done. Pass `p`, scenario `k` runs with seed
/// `seed + p * len + k`. Leaves the learner frozen.
pub fn train(
    learner: &mut QLearner,
    scenarios: &[Scenario],
    forecasters: &ForecasterSet,
    seed: u64,
    max_passes: usize,
) -> Result<TrainingReport, EngineError> {
    let mut passes = 0;
    while learner.is_learning() && passes < max_passes {
        let before = learner.updates();
        for (k, sc) in scenarios.iter().enumerate() {
            if !learner.is_learning() {
                break;
            }
            let s = seed.wrapping_add((passes * scenarios.len() + k) as u64);
            run(sc, learner, forecasters.get(k), s)?;
        }
        passes += 1;
        if learner.updates() == before {
            break;
        }
    }
    let hit_update_cap = !learner.converged() && learner.updates() >= learner.config.max_updates;
    let report = TrainingReport { passes, updates: learner.updates(), converged: learner.converged(), hit_update_cap };
    learner.freeze();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::link_capacity::AcmTable;
    use crate::policies::{AdmitAll, NaiveGreedy};
    use crate::slicing::{Service, SliceType};

    fn sr(index: usize, arrival: usize, demand: f64, duration: usize) -> SliceRequest {
        SliceRequest::new(index, arrival, SliceType::new(4, Service::Embb, demand, duration, 0.2))
    }

    #[test]
    fn abundant_capacity_collects_every_reward() {
        let reqs: Vec<SliceRequest> = (0..6).map(|i| sr(i, i, 27.2, 5)).collect();
        let total: f64 = reqs.iter().map(|r| r.reward).sum();
        let s = Scenario::from_levels("max", AcmTable::af60(), vec![7; 12], reqs, 1e-6).unwrap();
        let r = run(&s, &mut NaiveGreedy, None, 0).unwrap();
        assert_eq!(r.revenue(), total);
        assert_eq!(r.totals.penalty, 0.0);
    }

    #[test]
    fn dead_link_admits_nothing() {
        let reqs: Vec<SliceRequest> = (0..4).map(|i| sr(i, i, 0.4, 3)).collect();
        let s = Scenario::from_levels("dead", AcmTable::af60(), vec![0; 6], reqs, 1e-6).unwrap();
        let r = run(&s, &mut NaiveGreedy, None, 0).unwrap();
        assert_eq!(r.revenue(), 0.0);
        assert_eq!(r.admitted_count(), 0);
    }

    #[test]
    fn drop_below_demand_costs_rate_controlled_penalty() {
        // Level 1 of af60 carries 200 Mbps; the SR needs 300.
        let ty = SliceType::new(4, Service::Embb, 300.0, 6, 0.2);
        let r0 = SliceRequest::new(0, 0, ty.clone());
        let s = Scenario::from_levels("drop", AcmTable::af60(), vec![7, 7, 1, 1, 1, 7], vec![r0.clone()], 1e-6).unwrap();
        let r = run(&s, &mut AdmitAll, None, 0).unwrap();
        let expected = r0.reward - 3.0 * ty.penalty(200.0 / 300.0);
        assert!((r.revenue() - expected).abs() < 1e-9);
        assert!(r.slots[2].gate_closed || r.slots[2].arrivals == 0);
    }

    #[test]
    fn forecast_required_for_predictive_policies() {
        let s = Scenario::from_levels("f", AcmTable::af60(), vec![7; 3], vec![sr(0, 1, 1.0, 1)], 1e-6).unwrap();
        let mut lo = crate::policies::LocallyOptimal::default();
        assert!(matches!(run(&s, &mut lo, None, 0), Err(EngineError::ForecastMissing { slot: 1 })));
        let fc = default_forecaster(&s, 5, 15);
        assert!(run(&s, &mut lo, Some(&fc), 0).is_ok());
    }

    #[test]
    fn metrics_basics() {
        let reqs: Vec<SliceRequest> = (0..3).map(|i| sr(i, i, 8.8, 2)).collect();
        let s = Scenario::from_levels("m", AcmTable::af60(), vec![7; 5], reqs, 1e-6).unwrap();
        let r = run(&s, &mut NaiveGreedy, None, 0).unwrap();
        let all = run(&s, &mut AdmitAll, None, 0).unwrap();
        let m = metrics(&r, Some(&r), Some(&all), s.cv());
        assert_eq!(m.pct_negative, 0.0);
        assert_eq!(m.normalized_revenue, Some(1.0));
        assert_eq!(m.underprov_fraction, Some(0.0));
    }
}
