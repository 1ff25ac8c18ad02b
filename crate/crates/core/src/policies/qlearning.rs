//! Tabular Q-learning admission. Arrivals in a batch are visited in decreasing reward
//! order; each visit is one transition whose state holds the per-type active counts,
//! the candidate's type and `c_f`, the number of forecast steps on which the link would
//! still carry everything if the candidate were admitted.

use std::collections::{HashMap, VecDeque};
use std::fmt::Write as _;
use std::io::{BufRead, Write};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{count_satisfied, AdmissionPolicy, PolicyContext, PolicyKind};
use crate::slicing::CATALOG_SIZE;

/// Per-type count ceiling inside a state.
pub const COUNT_CAP: u8 = 15;
/// `new_type` of the terminal state reached after the last arrival of a batch.
pub const NO_ARRIVAL: u8 = CATALOG_SIZE as u8;

#[derive(Debug, Error)]
pub enum QTableError {
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct QState {
    pub counts: [u8; CATALOG_SIZE],
    pub new_type: u8,
    pub cf: u8,
}

impl QState {
    pub fn new(counts: &[usize; CATALOG_SIZE], new_type: usize, cf: usize) -> Self {
        let mut c = [0u8; CATALOG_SIZE];
        for (dst, src) in c.iter_mut().zip(counts) {
            *dst = (*src).min(COUNT_CAP as usize) as u8;
        }
        Self { counts: c, new_type: new_type as u8, cf: cf as u8 }
    }

    /// `c0,...,c11|type|cf`.
    pub fn key(&self) -> String {
        let mut s = String::new();
        for (i, c) in self.counts.iter().enumerate() {
            if i > 0 {
                s.push(',');
            }
            write!(s, "{c}").expect("write to string");
        }
        write!(s, "|{}|{}", self.new_type, self.cf).expect("write to string");
        s
    }

    pub fn parse_key(key: &str) -> Option<Self> {
        let mut parts = key.split('|');
        let counts_part = parts.next()?;
        let new_type: u8 = parts.next()?.parse().ok()?;
        let cf: u8 = parts.next()?.parse().ok()?;
        if parts.next().is_some() || new_type > NO_ARRIVAL {
            return None;
        }
        let mut counts = [0u8; CATALOG_SIZE];
        let mut n = 0;
        for (i, c) in counts_part.split(',').enumerate() {
            if i >= CATALOG_SIZE {
                return None;
            }
            counts[i] = c.parse().ok().filter(|c| *c <= COUNT_CAP)?;
            n += 1;
        }
        (n == CATALOG_SIZE).then_some(Self { counts, new_type, cf })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct QEntry {
    pub q: f64,
    pub visits: u64,
}

/// `(state, action) -> (q, visits)`; missing pairs read as zero.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct QTable {
    entries: HashMap<(QState, bool), QEntry>,
}

impl QTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entry(&self, s: &QState, admit: bool) -> QEntry {
        self.entries.get(&(*s, admit)).copied().unwrap_or_default()
    }

    pub fn q(&self, s: &QState, admit: bool) -> f64 {
        self.entry(s, admit).q
    }

    pub fn max_q(&self, s: &QState) -> f64 {
        self.q(s, false).max(self.q(s, true))
    }

    /// Greedy action; ties reject.
    pub fn best_action(&self, s: &QState) -> bool {
        self.q(s, true) > self.q(s, false)
    }

    pub fn set(&mut self, s: QState, admit: bool, entry: QEntry) {
        self.entries.insert((s, admit), entry);
    }

    /// One update `Q += alpha * (r + max Q(s') - Q)` with `alpha = 0.5 / visits`.
    /// Returns the change applied to `Q(s, a)`.
    pub fn update(&mut self, s: QState, admit: bool, reward: f64, next: &QState) -> f64 {
        let bootstrap = self.max_q(next);
        let e = self.entries.entry((s, admit)).or_default();
        e.visits += 1;
        let alpha = 0.5 / e.visits as f64;
        let delta = alpha * (reward + bootstrap - e.q);
        e.q += delta;
        delta
    }

    /// Writes `state_key TAB action TAB q TAB visits`, sorted by key and action.
    pub fn write<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let mut rows: Vec<(String, u8, QEntry)> =
            self.entries.iter().map(|((s, a), e)| (s.key(), *a as u8, *e)).collect();
        rows.sort_by(|x, y| x.0.cmp(&y.0).then(x.1.cmp(&y.1)));
        for (key, action, e) in rows {
            writeln!(out, "{key}\t{action}\t{:?}\t{}", e.q, e.visits)?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(source: R) -> Result<Self, QTableError> {
        let mut table = QTable::new();
        for (i, line) in source.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let bad = |reason: &str| QTableError::Malformed { line: i + 1, reason: reason.to_string() };
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 4 {
                return Err(bad("expected 4 tab-separated fields"));
            }
            let state = QState::parse_key(fields[0]).ok_or_else(|| bad("bad state key"))?;
            let admit = match fields[1] {
                "0" => false,
                "1" => true,
                _ => return Err(bad("action must be 0 or 1")),
            };
            let q: f64 = fields[2].parse().ok().filter(|q: &f64| q.is_finite()).ok_or_else(|| bad("bad q"))?;
            let visits: u64 = fields[3].parse().map_err(|_| bad("bad visit count"))?;
            table.set(state, admit, QEntry { q, visits });
        }
        Ok(table)
    }
}

/// Where `c_f` gets its predicted capacities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CfMode {
    /// Most likely level of the forecast PMF at each step.
    Predictive,
    /// The table's top capacity at every step.
    Static,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QConfig {
    /// Risk scaling of the admission reward.
    pub lambda: f64,
    pub epsilon0: f64,
    pub epsilon_decay: f64,
    pub epsilon_min: f64,
    /// Horizon used by the static `c_f` (the predictive one takes the PMF's).
    pub horizon: usize,
    pub max_updates: u64,
    pub convergence_window: usize,
    pub convergence_tol: f64,
}

impl Default for QConfig {
    fn default() -> Self {
        Self {
            lambda: 0.5,
            epsilon0: 1.0,
            epsilon_decay: 0.999,
            epsilon_min: 0.01,
            horizon: crate::forecast::DEFAULT_HORIZON,
            max_updates: 100_000,
            convergence_window: 10_000,
            convergence_tol: 1e-3,
        }
    }
}

/// Reward for one decision: 0 on reject, `R - R * (1 - cf / H) * lambda` on admit.
pub fn admission_reward(admit: bool, reward: f64, cf: usize, horizon: usize, lambda: f64) -> f64 {
    if admit {
        reward - reward * (1.0 - cf as f64 / horizon as f64) * lambda
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrainingPoint {
    pub updates: u64,
    pub epsilon: f64,
    pub mean_abs_delta: f64,
}

/// Q-learning admission policy. While `learning`, actions are epsilon-greedy and every
/// decision updates the table; learning switches itself off once the update budget is
/// spent or the recent updates have settled.
#[derive(Debug, Clone)]
pub struct QLearner {
    pub mode: CfMode,
    pub config: QConfig,
    pub table: QTable,
    pub epsilon: f64,
    learning: bool,
    converged: bool,
    updates: u64,
    window: VecDeque<f64>,
    window_sum: f64,
    curve: Vec<TrainingPoint>,
}

impl QLearner {
    pub fn new(mode: CfMode, config: QConfig) -> Self {
        Self {
            mode,
            epsilon: config.epsilon0,
            config,
            table: QTable::new(),
            learning: true,
            converged: false,
            updates: 0,
            window: VecDeque::new(),
            window_sum: 0.0,
            curve: Vec::new(),
        }
    }

    /// Greedy, non-updating policy over a fixed table.
    pub fn frozen(mode: CfMode, config: QConfig, table: QTable) -> Self {
        let mut l = Self::new(mode, config);
        l.table = table;
        l.freeze();
        l
    }

    pub fn freeze(&mut self) {
        self.learning = false;
        self.epsilon = 0.0;
    }

    pub fn is_learning(&self) -> bool {
        self.learning
    }

    pub fn converged(&self) -> bool {
        self.converged
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn curve(&self) -> &[TrainingPoint] {
        &self.curve
    }

    pub fn mean_abs_delta(&self) -> f64 {
        if self.window.is_empty() {
            f64::INFINITY
        } else {
            self.window_sum / self.window.len() as f64
        }
    }

    fn record_update(&mut self, delta: f64) {
        self.updates += 1;
        self.window.push_back(delta.abs());
        self.window_sum += delta.abs();
        if self.window.len() > self.config.convergence_window {
            self.window_sum -= self.window.pop_front().expect("non-empty window");
        }
        if self.updates % 1000 == 0 {
            self.curve.push(TrainingPoint { updates: self.updates, epsilon: self.epsilon, mean_abs_delta: self.mean_abs_delta() });
        }
        let settled = self.window.len() == self.config.convergence_window && self.mean_abs_delta() < self.config.convergence_tol;
        if settled {
            self.converged = true;
        }
        if settled || self.updates >= self.config.max_updates {
            self.learning = false;
        }
    }

    fn predicted_capacities(&self, ctx: &PolicyContext) -> Vec<f64> {
        match self.mode {
            CfMode::Static => vec![ctx.table.top().capacity_mbps; self.config.horizon],
            CfMode::Predictive => {
                let pmf = ctx.pmf.expect("predictive c_f needs a capacity PMF");
                (1..=pmf.horizon()).map(|h| ctx.table.capacity(pmf.most_likely_level(h))).collect()
            }
        }
    }
}

impl AdmissionPolicy for QLearner {
    fn name(&self) -> &str {
        match self.mode {
            CfMode::Predictive => PolicyKind::PredictiveQl.name(),
            CfMode::Static => PolicyKind::NaiveQl.name(),
        }
    }

    fn needs_forecast(&self) -> bool {
        self.mode == CfMode::Predictive
    }

    fn decide(&mut self, ctx: &PolicyContext, rng: &mut ChaCha8Rng) -> Vec<bool> {
        let predicted = self.predicted_capacities(ctx);
        let horizon = predicted.len();
        let mut counts = [0usize; CATALOG_SIZE];
        for r in ctx.active {
            counts[r.type_id()] += 1;
        }
        let mut committed = ctx.committed_demand();
        let mut order: Vec<usize> = (0..ctx.arrivals.len()).collect();
        order.sort_by(|&a, &b| ctx.arrivals[b].reward.total_cmp(&ctx.arrivals[a].reward));

        let mut admitted = vec![false; ctx.arrivals.len()];
        for (k, &i) in order.iter().enumerate() {
            let sr = ctx.arrivals[i];
            let cf = count_satisfied(&predicted, committed + sr.demand());
            let state = QState::new(&counts, sr.type_id(), cf);
            let explore = self.learning && self.epsilon > 0.0 && rng.random::<f64>() < self.epsilon;
            let admit = if explore { rng.random_bool(0.5) } else { self.table.best_action(&state) };
            let r = admission_reward(admit, sr.reward, cf, horizon, self.config.lambda);
            if admit {
                admitted[i] = true;
                counts[sr.type_id()] += 1;
                committed += sr.demand();
            }
            if self.learning {
                let next = match order.get(k + 1) {
                    Some(&j) => {
                        let nxt = ctx.arrivals[j];
                        QState::new(&counts, nxt.type_id(), count_satisfied(&predicted, committed + nxt.demand()))
                    }
                    None => QState::new(&counts, NO_ARRIVAL as usize, count_satisfied(&predicted, committed)),
                };
                let delta = self.table.update(state, admit, r, &next);
                self.record_update(delta);
            }
        }
        if self.learning {
            self.epsilon = (self.epsilon * self.config.epsilon_decay).max(self.config.epsilon_min);
        }
        admitted
    }
}
