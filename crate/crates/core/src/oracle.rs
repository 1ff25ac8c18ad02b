//! Perfect-information benchmark: choose the admission vector `z` minimizing total
//! penalty minus total reward over the whole horizon, subject to the gate (no admission
//! in a slot where an already active SR pays at least `delta`).
//!
//! For a fixed `z` the per-slot fraction/penalty variables decouple, and each slot is a
//! rate-control problem, so evaluating `z` is exact. The search over `z` is either full
//! enumeration or a depth-first branch and bound in arrival order.

use std::io::Write;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Execution;
use crate::num::fmt_f64;
pub use crate::scenario::Scenario;
use crate::scenario::{totals, Totals};

pub const MAX_EXHAUSTIVE: usize = 20;
/// Branch-and-bound subtrees handed to the thread pool are rooted this deep.
const SPLIT_DEPTH: usize = 6;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("exhaustive search supports at most {MAX_EXHAUSTIVE} requests, scenario has {0}")]
    InstanceTooLarge(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OracleMode {
    Exhaustive,
    BranchAndBound,
}

impl std::str::FromStr for OracleMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "exhaustive" => Ok(OracleMode::Exhaustive),
            "branch-and-bound" | "bnb" => Ok(OracleMode::BranchAndBound),
            other => Err(format!("unknown oracle mode {other:?} (expected exhaustive or branch-and-bound)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub feasible: bool,
    pub totals: Totals,
    pub slot_penalties: Vec<f64>,
}

impl Evaluation {
    pub fn objective(&self) -> f64 {
        self.totals.objective
    }
}

/// Objective and gate feasibility of admission vector `z`.
pub fn evaluate_admission_vector(z: &[bool], scenario: &Scenario) -> Evaluation {
    assert_eq!(z.len(), scenario.len(), "admission vector length");
    let mut slot_penalties = Vec::with_capacity(scenario.horizon());
    let mut feasible = true;
    for t in 0..scenario.horizon() {
        let members = scenario.admitted_active(z, t, true);
        slot_penalties.push(if members.is_empty() { 0.0 } else { scenario.allocate_members(&members, t).total_penalty });
        if feasible && scenario.arrivals_at(t).any(|i| z[i]) {
            let before = scenario.admitted_active(z, t, false);
            feasible = !scenario.gate_closed_for(&before, t);
        }
    }
    Evaluation { feasible, totals: totals(scenario.requests(), z, &slot_penalties), slot_penalties }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SlotFraction {
    pub t: usize,
    pub sr_index: usize,
    pub f: f64,
    pub penalty: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleSolution {
    pub z: Vec<bool>,
    pub totals: Totals,
    pub fractions: Vec<SlotFraction>,
    /// Admission vectors evaluated (exhaustive) or search nodes expanded (branch and bound).
    pub nodes: u64,
}

impl OracleSolution {
    pub fn objective(&self) -> f64 {
        self.totals.objective
    }

    fn build(scenario: &Scenario, z: Vec<bool>, nodes: u64) -> Self {
        let eval = evaluate_admission_vector(&z, scenario);
        debug_assert!(eval.feasible);
        let mut fractions = Vec::new();
        for t in 0..scenario.horizon() {
            let members = scenario.admitted_active(&z, t, true);
            if members.is_empty() {
                continue;
            }
            let alloc = scenario.allocate_members(&members, t);
            for (k, &i) in members.iter().enumerate() {
                fractions.push(SlotFraction { t, sr_index: i, f: alloc.fractions[k], penalty: alloc.penalties[k] });
            }
        }
        Self { z, totals: eval.totals, fractions, nodes }
    }

    /// `sr_index,z` rows.
    pub fn write_decisions<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "sr_index,z")?;
        for (i, z) in self.z.iter().enumerate() {
            writeln!(out, "{i},{}", *z as u8)?;
        }
        Ok(())
    }

    /// `t,sr_index,f,penalty` rows.
    pub fn write_fractions<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "t,sr_index,f,penalty")?;
        for s in &self.fractions {
            writeln!(out, "{},{},{},{}", s.t, s.sr_index, fmt_f64(s.f), fmt_f64(s.penalty))?;
        }
        Ok(())
    }
}

/// Candidate ordering: lower objective first, then lexicographically smaller `z`.
fn better(a: &(f64, Vec<bool>), b: &(f64, Vec<bool>)) -> bool {
    a.0 < b.0 || (a.0 == b.0 && a.1 < b.1)
}

fn pick(a: Option<(f64, Vec<bool>)>, b: Option<(f64, Vec<bool>)>) -> Option<(f64, Vec<bool>)> {
    match (a, b) {
        (Some(a), Some(b)) => Some(if better(&b, &a) { b } else { a }),
        (a, None) => a,
        (None, b) => b,
    }
}

pub fn solve_oracle(scenario: &Scenario, mode: OracleMode, exec: Execution) -> Result<OracleSolution, OracleError> {
    match mode {
        OracleMode::Exhaustive => solve_exhaustive(scenario, exec),
        OracleMode::BranchAndBound => Ok(solve_branch_and_bound(scenario, exec)),
    }
}

fn mask_to_z(mask: u64, n: usize) -> Vec<bool> {
    (0..n).map(|i| mask >> i & 1 == 1).collect()
}

/// Evaluates all `2^N` admission vectors.
pub fn solve_exhaustive(scenario: &Scenario, exec: Execution) -> Result<OracleSolution, OracleError> {
    let n = scenario.len();
    if n > MAX_EXHAUSTIVE {
        return Err(OracleError::InstanceTooLarge(n));
    }
    let best = exec.map_reduce(
        0..1u64 << n,
        None,
        |mask| {
            let z = mask_to_z(mask, n);
            let e = evaluate_admission_vector(&z, scenario);
            e.feasible.then(|| (e.objective(), z))
        },
        pick,
    );
    let (_, z) = best.expect("the empty admission vector is always feasible");
    Ok(OracleSolution::build(scenario, z, 1u64 << n))
}

fn fetch_min(cell: &AtomicU64, value: f64) {
    let mut current = cell.load(Ordering::Relaxed);
    while value < f64::from_bits(current) {
        match cell.compare_exchange_weak(current, value.to_bits(), Ordering::Relaxed, Ordering::Relaxed) {
            Ok(_) => return,
            Err(seen) => current = seen,
        }
    }
}

struct Search<'a> {
    sc: &'a Scenario,
    /// `suffix_reward[k]` = reward of requests `k..N`.
    suffix_reward: Vec<f64>,
    /// Absolute slack subtracted from bounds to cover floating-point summation order.
    slack: f64,
    shared: &'a AtomicU64,
}

struct Node {
    z: Vec<bool>,
    slot_penalty: Vec<f64>,
    decided_reward: f64,
}

impl Search<'_> {
    fn refresh_window(&self, node: &mut Node, k: usize) {
        let sc = self.sc;
        for t in sc.requests()[k].arrival_slot..sc.end_slot(k) {
            let members = sc.admitted_active(&node.z, t, true);
            node.slot_penalty[t] = if members.is_empty() { 0.0 } else { sc.allocate_members(&members, t).total_penalty };
        }
    }

    /// Applies `z_k = admit` if the gate allows it; returns false otherwise.
    fn apply(&self, node: &mut Node, k: usize, admit: bool) -> bool {
        if !admit {
            return true;
        }
        let t = self.sc.requests()[k].arrival_slot;
        let before = self.sc.admitted_active(&node.z, t, false);
        if self.sc.gate_closed_for(&before, t) {
            return false;
        }
        node.z[k] = true;
        node.decided_reward += self.sc.requests()[k].reward;
        self.refresh_window(node, k);
        true
    }

    fn undo(&self, node: &mut Node, k: usize, saved: &[f64], reward: f64) {
        node.z[k] = false;
        node.decided_reward = reward;
        let window = self.sc.requests()[k].arrival_slot..self.sc.end_slot(k);
        node.slot_penalty[window.clone()].copy_from_slice(&saved[window]);
    }

    fn dfs(&self, node: &mut Node, k: usize, best: &mut Option<(f64, Vec<bool>)>, nodes: &mut u64) {
        *nodes += 1;
        let n = self.sc.len();
        // Penalties only grow as more requests are admitted, rewards are bounded by
        // everything still undecided.
        let bound = node.slot_penalty.iter().sum::<f64>() - node.decided_reward - self.suffix_reward[k] - self.slack;
        if bound > f64::from_bits(self.shared.load(Ordering::Relaxed)) {
            return;
        }
        if let Some((inc, inc_z)) = best.as_ref() {
            if bound > *inc {
                return;
            }
            // `z[..k]` followed by zeros is the smallest completion of this prefix; if it
            // does not precede the incumbent, no completion can win a tie.
            let smallest_not_before = match node.z[..k].cmp(&inc_z[..k]) {
                std::cmp::Ordering::Greater => true,
                std::cmp::Ordering::Less => false,
                std::cmp::Ordering::Equal => inc_z[k..].iter().all(|b| !b),
            };
            if bound >= *inc && smallest_not_before {
                return;
            }
        }
        if k == n {
            let e = evaluate_admission_vector(&node.z, self.sc);
            debug_assert!(e.feasible);
            let cand = (e.objective(), node.z.clone());
            if best.as_ref().is_none_or(|b| better(&cand, b)) {
                fetch_min(self.shared, cand.0);
                *best = Some(cand);
            }
            return;
        }
        let saved: Vec<f64> = node.slot_penalty.clone();
        let reward = node.decided_reward;
        if self.apply(node, k, true) {
            self.dfs(node, k + 1, best, nodes);
            self.undo(node, k, &saved, reward);
        }
        self.dfs(node, k + 1, best, nodes);
    }
}

/// Depth-first branch and bound over requests in arrival order, admit branch first.
/// Subtrees below the first few decisions run in parallel under `exec`, sharing the
/// best objective found so far for pruning.
pub fn solve_branch_and_bound(scenario: &Scenario, exec: Execution) -> OracleSolution {
    let n = scenario.len();
    let mut suffix_reward = vec![0.0; n + 1];
    for k in (0..n).rev() {
        suffix_reward[k] = suffix_reward[k + 1] + scenario.requests()[k].reward;
    }
    let slack = 1e-9 * (suffix_reward[0] + 1.0) + 1e-9 * scenario.horizon() as f64;
    let shared = AtomicU64::new(f64::INFINITY.to_bits());
    let search = Search { sc: scenario, suffix_reward, slack, shared: &shared };

    let depth = if exec.is_parallel() { SPLIT_DEPTH.min(n) } else { 0 };
    let prefixes: Vec<u64> = (0..1u64 << depth).collect();
    let results = exec.map(&prefixes, |&prefix| {
        let mut node = Node { z: vec![false; n], slot_penalty: vec![0.0; scenario.horizon()], decided_reward: 0.0 };
        // Admit bits are listed most significant first so that, under sequential
        // scheduling, prefixes run admit-first like the recursion below.
        for k in 0..depth {
            let admit = prefix >> (depth - 1 - k) & 1 == 0;
            if !search.apply(&mut node, k, admit) {
                return (None, 0);
            }
        }
        let mut best = None;
        let mut nodes = 0;
        search.dfs(&mut node, depth, &mut best, &mut nodes);
        (best, nodes)
    });
    let nodes = results.iter().map(|r| r.1).sum();
    let best = results.into_iter().map(|r| r.0).fold(None, pick);
    let (_, z) = best.expect("the empty admission vector is always feasible");
    OracleSolution::build(scenario, z, nodes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::link_capacity::AcmTable;
    use crate::slicing::{Service, SliceRequest, SliceType};

    fn sr(index: usize, arrival: usize, service: Service, demand: f64, duration: usize) -> SliceRequest {
        SliceRequest::new(index, arrival, SliceType::new(service.index() * 4, service, demand, duration, 0.2))
    }

    /// Two-level toy table: level 0 carries 0 Mbps, level 1 carries 10 Mbps.
    fn toy() -> AcmTable {
        use crate::link_capacity::AcmLevel;
        AcmTable::new(
            "toy",
            vec![
                AcmLevel { capacity_mbps: 0.0, up_dbm: -60.0, down_dbm: f64::NEG_INFINITY },
                AcmLevel { capacity_mbps: 10.0, up_dbm: f64::INFINITY, down_dbm: -65.0 },
            ],
        )
        .unwrap()
    }

    #[test]
    fn empty_vector_is_feasible_with_zero_objective() {
        let s = Scenario::from_levels("x", toy(), vec![1; 3], vec![sr(0, 0, Service::Embb, 5.0, 2)], 1e-6).unwrap();
        let e = evaluate_admission_vector(&[false], &s);
        assert!(e.feasible);
        assert_eq!(e.objective(), 0.0);
    }

    #[test]
    fn single_sr_with_room() {
        let r = sr(0, 0, Service::Embb, 5.0, 2);
        let reward = r.reward;
        let s = Scenario::from_levels("x", toy(), vec![1; 3], vec![r], 1e-6).unwrap();
        let e = evaluate_admission_vector(&[true], &s);
        assert!(e.feasible);
        assert_eq!(e.objective(), -reward);
        for mode in [OracleMode::Exhaustive, OracleMode::BranchAndBound] {
            let sol = solve_oracle(&s, mode, Execution::Sequential).unwrap();
            assert_eq!(sol.z, vec![true]);
            assert_eq!(sol.objective(), -reward);
        }
    }

    #[test]
    fn starved_active_sr_blocks_new_arrival() {
        // A (10 Mbps) is active from slot 0; capacity drops to 0 at slot 1, when B arrives.
        let reqs = vec![sr(0, 0, Service::Embb, 10.0, 3), sr(1, 1, Service::Embb, 1.0, 1)];
        let s = Scenario::from_levels("gate", toy(), vec![1, 0, 1], reqs, 1e-6).unwrap();
        assert!(!evaluate_admission_vector(&[true, true], &s).feasible);
        assert!(evaluate_admission_vector(&[true, false], &s).feasible);
        assert!(evaluate_admission_vector(&[false, true], &s).feasible);
    }

    #[test]
    fn picks_higher_reward_when_only_one_fits() {
        // With kappa = 10 starving the eMBB request for two slots costs 2 * 100, more
        // than its reward of 100.
        let heavy = |index, service: Service| {
            SliceRequest::new(index, 0, SliceType::new(service.index() * 4, service, 10.0, 2, 10.0))
        };
        let reqs = vec![heavy(0, Service::Urllc), heavy(1, Service::Embb)];
        let s = Scenario::from_levels("one", toy(), vec![1, 1], reqs, 1e-6).unwrap();
        for mode in [OracleMode::Exhaustive, OracleMode::BranchAndBound] {
            for exec in [Execution::Sequential, Execution::Parallel] {
                assert_eq!(solve_oracle(&s, mode, exec).unwrap().z, vec![true, false]);
            }
        }
    }

    #[test]
    fn equal_objectives_resolve_to_smallest_vector() {
        // On a dead link a 0.4 Mbps one-slot BE request earns 1.0 and pays 1.0, so all
        // four admission vectors score 0.
        let reqs = vec![sr(0, 0, Service::Be, 0.4, 1), sr(1, 0, Service::Be, 0.4, 1)];
        let s = Scenario::from_levels("tie", toy(), vec![0], reqs, 1e-6).unwrap();
        assert_eq!(evaluate_admission_vector(&[true, true], &s).objective(), 0.0);
        for mode in [OracleMode::Exhaustive, OracleMode::BranchAndBound] {
            for exec in [Execution::Sequential, Execution::Parallel] {
                assert_eq!(solve_oracle(&s, mode, exec).unwrap().z, vec![false, false]);
            }
        }
    }

    #[test]
    fn exhaustive_limit() {
        let reqs: Vec<SliceRequest> = (0..21).map(|i| sr(i, 0, Service::Be, 0.4, 1)).collect();
        let s = Scenario::from_levels("big", toy(), vec![1], reqs, 1e-6).unwrap();
        assert!(matches!(solve_exhaustive(&s, Execution::Sequential), Err(OracleError::InstanceTooLarge(21))));
    }
}
