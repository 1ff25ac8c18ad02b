//! Per-slot rate control: split capacity among active slices to minimize the summed
//! convex piecewise-linear penalty.
//!
//! Written in terms of the shortfall `u = 1 - f`, each penalty is a convex function of
//! `u` on `[0, 1]`. Funding a slice walks `u` down from 1, through its envelope pieces
//! from the steepest to the flattest; a piece with slope `s` on a slice with demand `d`
//! removes `s / d` penalty per Mbps. Funding pieces in decreasing `s / d` order is optimal
//! because every slice's pieces already come in decreasing slope order.

use std::collections::HashMap;

use crate::slicing::{penalty, PenaltySegment, SliceType};

/// A linear piece of a penalty envelope over the shortfall interval `[start, end]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Piece {
    pub start: f64,
    pub end: f64,
    pub slope: f64,
}

/// Upper envelope of `segments` and the zero floor over `u` in `[0, 1]`, as pieces with
/// strictly increasing slope ordered by `u`.
pub fn envelope(segments: &[PenaltySegment]) -> Vec<Piece> {
    let floor = PenaltySegment { slope: 0.0, intercept: 0.0 };
    let lines: Vec<PenaltySegment> = std::iter::once(floor).chain(segments.iter().copied()).collect();
    let mut cuts = vec![0.0, 1.0];
    for (i, a) in lines.iter().enumerate() {
        for b in &lines[i + 1..] {
            if a.slope != b.slope {
                let u = (b.intercept - a.intercept) / (a.slope - b.slope);
                if u > 0.0 && u < 1.0 {
                    cuts.push(u);
                }
            }
        }
    }
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();

    let mut pieces: Vec<Piece> = Vec::new();
    for w in cuts.windows(2) {
        let mid = 0.5 * (w[0] + w[1]);
        // At the midpoint the top line is unique unless two lines coincide, in which
        // case they share a slope anyway.
        let top = lines
            .iter()
            .max_by(|x, y| (x.slope * mid + x.intercept).total_cmp(&(y.slope * mid + y.intercept)))
            .expect("floor line always present");
        match pieces.last_mut() {
            Some(last) if last.slope == top.slope => last.end = w[1],
            _ => pieces.push(Piece { start: w[0], end: w[1], slope: top.slope }),
        }
    }
    pieces
}

/// One active slice as seen by rate control.
#[derive(Debug, Clone, Copy)]
pub struct Demand<'a> {
    pub segments: &'a [PenaltySegment],
    pub demand: f64,
}

impl<'a> From<&'a SliceType> for Demand<'a> {
    fn from(t: &'a SliceType) -> Self {
        Self { segments: &t.segments, demand: t.demand_mbps }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Allocation {
    pub fractions: Vec<f64>,
    pub penalties: Vec<f64>,
    pub total_penalty: f64,
}

impl Allocation {
    pub fn allocated(&self, active: &[Demand]) -> f64 {
        active.iter().zip(&self.fractions).map(|(a, f)| a.demand * f).sum()
    }

    pub fn max_penalty(&self) -> f64 {
        self.penalties.iter().copied().fold(0.0, f64::max)
    }
}

/// Exact penalty-minimizing split of `capacity` (Mbps) over `active`. Equal marginal
/// rates are funded in list order.
pub fn allocate(active: &[Demand], capacity: f64) -> Allocation {
    let total: f64 = active.iter().map(|a| a.demand).sum();
    let fractions = if total <= capacity {
        vec![1.0; active.len()]
    } else {
        greedy_fractions(active, capacity.max(0.0))
    };
    let penalties: Vec<f64> = active.iter().zip(&fractions).map(|(a, f)| penalty(a.segments, *f)).collect();
    let total_penalty = penalties.iter().sum();
    Allocation { fractions, penalties, total_penalty }
}

fn greedy_fractions(active: &[Demand], capacity: f64) -> Vec<f64> {
    // (marginal, slice, width in u)
    let mut queue: Vec<(f64, usize, f64)> = Vec::new();
    let mut piece_count = vec![0usize; active.len()];
    for (i, a) in active.iter().enumerate() {
        let pieces = envelope(a.segments);
        piece_count[i] = pieces.len();
        for p in pieces.iter().rev() {
            queue.push((p.slope / a.demand, i, p.end - p.start));
        }
    }
    // Stable sort keeps each slice's pieces steepest first and lower indices first on ties.
    queue.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)));

    let mut fractions = vec![0.0; active.len()];
    let mut funded = vec![0usize; active.len()];
    let mut left = capacity;
    for (_, i, width) in queue {
        if left <= 0.0 {
            break;
        }
        let need = width * active[i].demand;
        if need <= left {
            left -= need;
            funded[i] += 1;
            fractions[i] = if funded[i] == piece_count[i] { 1.0 } else { fractions[i] + width };
        } else {
            fractions[i] += left / active[i].demand;
            left = 0.0;
        }
    }
    fractions
}

/// Total penalty at capacity `capacity`.
pub fn penalty_for_level(active: &[Demand], capacity: f64) -> f64 {
    allocate(active, capacity).total_penalty
}

/// Memo of rate-control penalties keyed by the multiset of active slice types and the
/// capacity level. Lives for one admission decision.
#[derive(Debug, Default)]
pub struct PenaltyMemo {
    cache: HashMap<(Vec<(usize, u64, u64)>, usize), f64>,
}

impl PenaltyMemo {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.cache.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cache.is_empty()
    }

    pub fn penalty_for_level(&mut self, active: &[&SliceType], level: usize, capacity: f64) -> f64 {
        let mut key: Vec<(usize, u64, u64)> =
            active.iter().map(|t| (t.id, t.demand_mbps.to_bits(), t.price.to_bits())).collect();
        key.sort_unstable();
        *self.cache.entry((key, level)).or_insert_with(|| {
            let demands: Vec<Demand> = active.iter().map(|t| Demand::from(*t)).collect();
            penalty_for_level(&demands, capacity)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::slicing::{penalty_coefficients, Service};

    fn segs(price: f64) -> Vec<PenaltySegment> {
        penalty_coefficients(0.2, price).to_vec()
    }

    #[test]
    fn urllc_envelope_has_kink_at_half() {
        let p = envelope(&segs(10.0));
        assert_eq!(p, vec![Piece { start: 0.0, end: 0.5, slope: 2.0 }, Piece { start: 0.5, end: 1.0, slope: 6.0 }]);
    }

    #[test]
    fn envelope_with_floor_region() {
        // 2u - 1 is negative below u = 0.5, so the floor takes over there.
        let p = envelope(&[PenaltySegment { slope: 2.0, intercept: -1.0 }]);
        assert_eq!(p, vec![Piece { start: 0.0, end: 0.5, slope: 0.0 }, Piece { start: 0.5, end: 1.0, slope: 2.0 }]);
    }

    #[test]
    fn worked_case() {
        let (u, b) = (segs(10.0), segs(2.5));
        let active = [Demand { segments: &u, demand: 10.0 }, Demand { segments: &b, demand: 10.0 }];
        let a = allocate(&active, 10.0);
        assert_eq!(a.fractions, vec![1.0, 0.0]);
        assert_eq!(a.total_penalty, 1.0);
    }

    #[test]
    fn sufficient_and_zero_capacity() {
        let u = segs(10.0);
        let one = [Demand { segments: &u, demand: 10.0 }];
        let a = allocate(&one, 10.0);
        assert_eq!((a.fractions[0], a.total_penalty), (1.0, 0.0));
        let t = SliceType::new(0, Service::Urllc, 10.0, 1, 0.2);
        let a = allocate(&one, 0.0);
        assert_eq!((a.fractions[0], a.total_penalty), (0.0, t.penalty(0.0)));
    }

    #[test]
    fn single_slice_gets_capacity_over_demand() {
        let e = segs(5.0);
        let a = allocate(&[Demand { segments: &e, demand: 8.8 }], 3.0);
        assert!((a.fractions[0] - 3.0 / 8.8).abs() < 1e-15);
    }

    #[test]
    fn equal_marginals_fund_lower_index_first() {
        let e = segs(5.0);
        let active = [Demand { segments: &e, demand: 4.0 }, Demand { segments: &e, demand: 4.0 }];
        // Steep pieces (slope 3 over u in [0.5, 1]) are worth 2 Mbps each and go first.
        let a = allocate(&active, 3.0);
        assert_eq!(a.fractions, vec![0.5, 0.25]);
        let a = allocate(&active, 5.0);
        assert_eq!(a.fractions, vec![0.75, 0.5]);
    }

    #[test]
    fn memo_matches_direct_and_reuses_entries() {
        let types: Vec<SliceType> = (0..3).map(|i| SliceType::new(i, Service::Embb, 5.0 + i as f64, 3, 0.2)).collect();
        let refs: Vec<&SliceType> = types.iter().collect();
        let mut memo = PenaltyMemo::new();
        let direct = penalty_for_level(&types.iter().map(Demand::from).collect::<Vec<_>>(), 7.0);
        assert_eq!(memo.penalty_for_level(&refs, 3, 7.0), direct);
        let reversed: Vec<&SliceType> = types.iter().rev().collect();
        assert_eq!(memo.penalty_for_level(&reversed, 3, 7.0), direct);
        assert_eq!(memo.len(), 1);
        assert_eq!(memo.penalty_for_level(&[], 0, 0.0), 0.0);
    }
}
