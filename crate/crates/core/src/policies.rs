//! Online admission policies. Each slot with arrivals, the engine hands a policy the
//! beginning-of-slot active set, the arrival batch, the current capacity and (when the
//! policy asks for it) a capacity PMF over the next `H` slots.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::forecast::CapacityPmf;
use crate::link_capacity::AcmTable;
use crate::rate_control::PenaltyMemo;
use crate::slicing::{SliceRequest, SliceType};

pub mod qlearning;

pub use qlearning::{QConfig, QLearner, QState, QTable, QTableError, CfMode};

pub const DEFAULT_LO_THRESHOLD: usize = 8;

/// Everything a policy sees when deciding one arrival batch.
#[derive(Debug, Clone, Copy)]
pub struct PolicyContext<'a> {
    pub slot: usize,
    /// Admitted SRs active at the start of the slot.
    pub active: &'a [&'a SliceRequest],
    /// Requests arriving in this slot, in index order.
    pub arrivals: &'a [&'a SliceRequest],
    pub capacity: f64,
    pub level: usize,
    pub table: &'a AcmTable,
    pub pmf: Option<&'a CapacityPmf>,
}

impl PolicyContext<'_> {
    pub fn committed_demand(&self) -> f64 {
        self.active.iter().map(|r| r.demand()).sum()
    }
}

pub trait AdmissionPolicy: Send {
    fn name(&self) -> &str;

    /// Whether `decide` reads `ctx.pmf`.
    fn needs_forecast(&self) -> bool {
        false
    }

    /// Whether arrivals are offered even while active SRs are underprovisioned.
    fn bypasses_gate(&self) -> bool {
        false
    }

    /// Admission mask aligned with `ctx.arrivals`.
    fn decide(&mut self, ctx: &PolicyContext, rng: &mut ChaCha8Rng) -> Vec<bool>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    Random,
    NaiveGreedy,
    LocallyOptimal,
    NaiveQl,
    PredictiveQl,
    AdmitAll,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 6] = [
        PolicyKind::Random,
        PolicyKind::NaiveGreedy,
        PolicyKind::LocallyOptimal,
        PolicyKind::NaiveQl,
        PolicyKind::PredictiveQl,
        PolicyKind::AdmitAll,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Random => "random",
            PolicyKind::NaiveGreedy => "naive-greedy",
            PolicyKind::LocallyOptimal => "locally-optimal",
            PolicyKind::NaiveQl => "naive-ql",
            PolicyKind::PredictiveQl => "predictive-ql",
            PolicyKind::AdmitAll => "admit-all",
        }
    }

    pub fn is_learning(self) -> bool {
        matches!(self, PolicyKind::NaiveQl | PolicyKind::PredictiveQl)
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnknownPolicy(pub String);

impl fmt::Display for UnknownPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = PolicyKind::ALL.iter().map(|k| k.name()).collect();
        write!(f, "unknown policy {:?} (expected one of {})", self.0, names.join(", "))
    }
}

impl std::error::Error for UnknownPolicy {}

impl FromStr for PolicyKind {
    type Err = UnknownPolicy;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "random" => Ok(PolicyKind::Random),
            "naive-greedy" | "ng" | "greedy" => Ok(PolicyKind::NaiveGreedy),
            "locally-optimal" | "lo" => Ok(PolicyKind::LocallyOptimal),
            "naive-ql" | "nql" => Ok(PolicyKind::NaiveQl),
            "predictive-ql" | "pql" => Ok(PolicyKind::PredictiveQl),
            "admit-all" => Ok(PolicyKind::AdmitAll),
            _ => Err(UnknownPolicy(s.to_string())),
        }
    }
}

/// Policy-level knobs shared by every entry point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyParams {
    pub lo_threshold: usize,
    pub q: QConfig,
}

impl Default for PolicyParams {
    fn default() -> Self {
        Self { lo_threshold: DEFAULT_LO_THRESHOLD, q: QConfig::default() }
    }
}

impl PolicyKind {
    pub fn cf_mode(self) -> Option<CfMode> {
        match self {
            PolicyKind::NaiveQl => Some(CfMode::Static),
            PolicyKind::PredictiveQl => Some(CfMode::Predictive),
            _ => None,
        }
    }

    /// Q-learning kinds come out frozen when given a table and learning otherwise.
    pub fn build(self, params: &PolicyParams, table: Option<QTable>) -> Box<dyn AdmissionPolicy> {
        match (self, self.cf_mode()) {
            (_, Some(mode)) => match table {
                Some(t) => Box::new(QLearner::frozen(mode, params.q.clone(), t)),
                None => Box::new(QLearner::new(mode, params.q.clone())),
            },
            (PolicyKind::Random, _) => Box::new(RandomPolicy),
            (PolicyKind::NaiveGreedy, _) => Box::new(NaiveGreedy),
            (PolicyKind::LocallyOptimal, _) => Box::new(LocallyOptimal { exhaustive_threshold: params.lo_threshold }),
            _ => Box::new(AdmitAll),
        }
    }
}

/// Fair coin per arrival.
#[derive(Debug, Clone, Default)]
pub struct RandomPolicy;

impl AdmissionPolicy for RandomPolicy {
    fn name(&self) -> &str {
        PolicyKind::Random.name()
    }

    fn decide(&mut self, ctx: &PolicyContext, rng: &mut ChaCha8Rng) -> Vec<bool> {
        ctx.arrivals.iter().map(|_| rng.random_bool(0.5)).collect()
    }
}

/// Admits in index order while the committed demand still fits the current capacity.
#[derive(Debug, Clone, Default)]
pub struct NaiveGreedy;

impl AdmissionPolicy for NaiveGreedy {
    fn name(&self) -> &str {
        PolicyKind::NaiveGreedy.name()
    }

    fn decide(&mut self, ctx: &PolicyContext, _rng: &mut ChaCha8Rng) -> Vec<bool> {
        let mut committed = ctx.committed_demand();
        ctx.arrivals
            .iter()
            .map(|r| {
                let fits = committed + r.demand() <= ctx.capacity;
                if fits {
                    committed += r.demand();
                }
                fits
            })
            .collect()
    }
}

/// Admits the whole batch and ignores the underprovisioning gate. Only used to measure
/// how often a scenario is overloaded.
#[derive(Debug, Clone, Default)]
pub struct AdmitAll;

impl AdmissionPolicy for AdmitAll {
    fn name(&self) -> &str {
        PolicyKind::AdmitAll.name()
    }

    fn bypasses_gate(&self) -> bool {
        true
    }

    fn decide(&mut self, ctx: &PolicyContext, _rng: &mut ChaCha8Rng) -> Vec<bool> {
        vec![true; ctx.arrivals.len()]
    }
}

/// Memo key for the slot's own, already known, capacity.
const CURRENT_CAPACITY_KEY: usize = usize::MAX;

/// Reward of `candidate` minus the penalty the enlarged active set would pay now and,
/// in expectation, over the forecast horizon. Nothing is assumed to expire in between.
pub fn expected_short_term_revenue(candidate: &[&SliceRequest], ctx: &PolicyContext, memo: &mut PenaltyMemo) -> f64 {
    let pmf = ctx.pmf.expect("expected revenue needs a capacity PMF");
    let weights = pmf.level_weights();
    let types: Vec<&SliceType> = ctx.active.iter().chain(candidate).map(|r| &r.slice).collect();
    let reward: f64 = candidate.iter().map(|r| r.reward).sum();
    let mut expected_penalty = memo.penalty_for_level(&types, CURRENT_CAPACITY_KEY, ctx.capacity);
    for (l, w) in weights.iter().enumerate() {
        if *w > 0.0 {
            expected_penalty += w * memo.penalty_for_level(&types, l, ctx.table.capacity(l));
        }
    }
    reward - expected_penalty
}

/// Maximizes expected short-term revenue: by enumeration for batches up to
/// `exhaustive_threshold`, else greedily in decreasing reward order.
#[derive(Debug, Clone)]
pub struct LocallyOptimal {
    pub exhaustive_threshold: usize,
}

impl Default for LocallyOptimal {
    fn default() -> Self {
        Self { exhaustive_threshold: DEFAULT_LO_THRESHOLD }
    }
}

impl LocallyOptimal {
    /// Enumerates subsets as bit masks in increasing order; the first best mask wins.
    pub fn decide_exhaustive(ctx: &PolicyContext, memo: &mut PenaltyMemo) -> Vec<bool> {
        let n = ctx.arrivals.len();
        let mut best = (f64::NEG_INFINITY, 0u64);
        for mask in 0..(1u64 << n) {
            let cand: Vec<&SliceRequest> = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| ctx.arrivals[i]).collect();
            let value = expected_short_term_revenue(&cand, ctx, memo);
            if value > best.0 {
                best = (value, mask);
            }
        }
        (0..n).map(|i| best.1 >> i & 1 == 1).collect()
    }

    pub fn decide_greedy(ctx: &PolicyContext, memo: &mut PenaltyMemo) -> Vec<bool> {
        let mut order: Vec<usize> = (0..ctx.arrivals.len()).collect();
        order.sort_by(|&a, &b| ctx.arrivals[b].reward.total_cmp(&ctx.arrivals[a].reward));
        let mut admitted = vec![false; ctx.arrivals.len()];
        let mut chosen: Vec<&SliceRequest> = Vec::new();
        let mut current = expected_short_term_revenue(&chosen, ctx, memo);
        for i in order {
            chosen.push(ctx.arrivals[i]);
            let value = expected_short_term_revenue(&chosen, ctx, memo);
            if value > current {
                current = value;
                admitted[i] = true;
            } else {
                chosen.pop();
            }
        }
        admitted
    }
}

impl AdmissionPolicy for LocallyOptimal {
    fn name(&self) -> &str {
        PolicyKind::LocallyOptimal.name()
    }

    fn needs_forecast(&self) -> bool {
        true
    }

    fn decide(&mut self, ctx: &PolicyContext, _rng: &mut ChaCha8Rng) -> Vec<bool> {
        let mut memo = PenaltyMemo::new();
        if ctx.arrivals.len() <= self.exhaustive_threshold {
            Self::decide_exhaustive(ctx, &mut memo)
        } else {
            Self::decide_greedy(ctx, &mut memo)
        }
    }
}

/// Number of forecast steps whose predicted capacity covers `total_demand`. The
/// prediction at step `h` is the capacity of the PMF's most likely level.
pub fn compute_cf(pmf: &CapacityPmf, table: &AcmTable, total_demand: f64) -> usize {
    (1..=pmf.horizon()).filter(|&h| total_demand <= table.capacity(pmf.most_likely_level(h))).count()
}

/// Same count against fixed per-step capacities.
pub fn count_satisfied(predicted: &[f64], total_demand: f64) -> usize {
    predicted.iter().filter(|c| total_demand <= **c).count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::slicing::{Catalog, Service};
    use rand::SeedableRng;

    fn sr(index: usize, ty: &SliceType) -> SliceRequest {
        SliceRequest::new(index, 0, ty.clone())
    }

    fn ctx<'a>(
        active: &'a [&'a SliceRequest],
        arrivals: &'a [&'a SliceRequest],
        capacity: f64,
        table: &'a AcmTable,
        pmf: Option<&'a CapacityPmf>,
    ) -> PolicyContext<'a> {
        PolicyContext { slot: 0, active, arrivals, capacity, level: table.top_level(), table, pmf }
    }

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(0)
    }

    #[test]
    fn naive_greedy_running_sum() {
        let t = AcmTable::af60();
        let ty = SliceType::new(4, Service::Embb, 6.0, 5, 0.2);
        let reqs: Vec<SliceRequest> = (0..3).map(|i| sr(i, &ty)).collect();
        let refs: Vec<&SliceRequest> = reqs.iter().collect();
        assert_eq!(NaiveGreedy.decide(&ctx(&[], &refs, 13.0, &t, None), &mut rng()), vec![true, true, false]);
        assert_eq!(NaiveGreedy.decide(&ctx(&[], &refs, 0.0, &t, None), &mut rng()), vec![false; 3]);
        assert_eq!(NaiveGreedy.decide(&ctx(&[], &refs, 18.0, &t, None), &mut rng()), vec![true; 3]);
    }

    #[test]
    fn random_admits_half() {
        let t = AcmTable::af60();
        let ty = SliceType::new(0, Service::Urllc, 0.4, 5, 0.2);
        let reqs: Vec<SliceRequest> = (0..10_000).map(|i| sr(i, &ty)).collect();
        let refs: Vec<&SliceRequest> = reqs.iter().collect();
        let mask = RandomPolicy.decide(&ctx(&[], &refs, 0.0, &t, None), &mut rng());
        let rate = mask.iter().filter(|m| **m).count() as f64 / mask.len() as f64;
        assert!((rate - 0.5).abs() < 0.02, "{rate}");
        assert_eq!(mask, RandomPolicy.decide(&ctx(&[], &refs, 0.0, &t, None), &mut rng()));
        assert!(RandomPolicy.decide(&ctx(&[], &[], 0.0, &t, None), &mut rng()).is_empty());
    }

    #[test]
    fn lo_admits_everything_with_abundant_capacity() {
        let t = AcmTable::af60();
        let cat = Catalog::canned(0.2);
        let reqs: Vec<SliceRequest> = cat.types().iter().take(10).enumerate().map(|(i, ty)| sr(i, ty)).collect();
        let refs: Vec<&SliceRequest> = reqs.iter().collect();
        let pmf = CapacityPmf::point_mass(7, 7, t.len(), 5);
        for n in [0, 3, 10] {
            let c = ctx(&[], &refs[..n], t.top().capacity_mbps, &t, Some(&pmf));
            assert_eq!(LocallyOptimal::default().decide(&c, &mut rng()), vec![true; n]);
            let mut memo = PenaltyMemo::new();
            let total: f64 = refs[..n].iter().map(|r| r.reward).sum();
            assert_eq!(expected_short_term_revenue(&refs[..n], &c, &mut memo), total);
        }
    }

    #[test]
    fn cf_counts_satisfied_steps() {
        assert_eq!(count_satisfied(&[10.0, 10.0, 5.0, 5.0, 5.0], 7.0), 2);
        let t = AcmTable::af60();
        let top = CapacityPmf::point_mass(7, 7, t.len(), 5);
        assert_eq!(compute_cf(&top, &t, 0.4), 5);
        let zero = CapacityPmf::point_mass(7, 0, t.len(), 5);
        assert_eq!(compute_cf(&zero, &t, 0.4), 0);
    }

    #[test]
    fn policy_names_parse() {
        for k in PolicyKind::ALL {
            assert_eq!(k.name().parse::<PolicyKind>().unwrap(), k);
        }
        assert_eq!("PQL".parse::<PolicyKind>().unwrap(), PolicyKind::PredictiveQl);
        assert!("oracle".parse::<PolicyKind>().is_err());
    }
}
