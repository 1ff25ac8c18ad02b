//! Slice economy: the 12-type catalog, rewards, penalty functions, and the
//! flow-to-slice-request packing pipeline.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::link_capacity::{check_header, LinkError};
use crate::num::{fmt_f64, parse_f64, percentile};

pub const FLOW_HEADER: [&str; 4] = ["start_slot", "duration_slots", "throughput_mbps", "service"];
pub const SR_HEADER: [&str; 7] = ["index", "arrival_slot", "type_id", "service", "demand_mbps", "duration_slots", "reward"];

pub const DEFAULT_KAPPA: f64 = 0.2;
pub const DEMANDS_PER_SERVICE: usize = 4;
pub const CATALOG_SIZE: usize = 12;
pub const MIN_FLOWS_PER_SERVICE: usize = 20;
/// Per-flow throughput is multiplied by this before it becomes a catalog demand.
pub const DEMAND_SCALE: f64 = 4.0;
pub const DEMAND_PERCENTILES: [f64; DEMANDS_PER_SERVICE] = [25.0, 50.0, 75.0, 95.0];
pub const DURATION_PERCENTILE: f64 = 90.0;
/// Canned demands in Mbps, shared by all services.
pub const CANNED_DEMANDS: [f64; DEMANDS_PER_SERVICE] = [0.4, 8.8, 19.2, 27.2];
/// Canned durations in slots for URLLC, eMBB, BE.
pub const CANNED_DURATIONS: [usize; 3] = [8, 20, 12];

#[derive(Debug, Error)]
pub enum SlicingError {
    #[error("service {service}: {found} flows, need at least {MIN_FLOWS_PER_SERVICE}")]
    TooFewFlows { service: Service, found: usize },
    #[error("no flows for service {0}")]
    MissingService(Service),
    #[error("unknown service {0:?}")]
    UnknownService(String),
    #[error("invalid catalog: {0}")]
    InvalidCatalog(String),
    #[error("line {line}: {reason}")]
    MalformedRow { line: u64, reason: String },
    #[error("flows must be sorted by start slot (line {line})")]
    UnsortedFlows { line: u64 },
    #[error(transparent)]
    Link(#[from] LinkError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Service {
    #[serde(rename = "URLLC")]
    Urllc,
    #[serde(rename = "eMBB")]
    Embb,
    #[serde(rename = "BE")]
    Be,
}

impl Service {
    pub const ALL: [Service; 3] = [Service::Urllc, Service::Embb, Service::Be];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Price per Mbps per slot.
    pub fn price(self) -> f64 {
        match self {
            Service::Urllc => 10.0,
            Service::Embb => 5.0,
            Service::Be => 2.5,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Service::Urllc => "URLLC",
            Service::Embb => "eMBB",
            Service::Be => "BE",
        }
    }
}

impl fmt::Display for Service {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Service {
    type Err = SlicingError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "URLLC" => Ok(Service::Urllc),
            "eMBB" => Ok(Service::Embb),
            "BE" => Ok(Service::Be),
            other => Err(SlicingError::UnknownService(other.to_string())),
        }
    }
}

/// One linear piece `slope * (1 - f) + intercept` of a penalty function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltySegment {
    pub slope: f64,
    pub intercept: f64,
}

impl PenaltySegment {
    pub fn at(&self, f: f64) -> f64 {
        self.slope * (1.0 - f) + self.intercept
    }
}

/// The two segments `kappa*rho*(2 - 3f)` and `kappa*rho*(1 - f)` in slope/intercept form.
pub fn penalty_coefficients(kappa: f64, price: f64) -> [PenaltySegment; 2] {
    let k = kappa * price;
    [PenaltySegment { slope: 3.0 * k, intercept: -k }, PenaltySegment { slope: k, intercept: 0.0 }]
}

/// Penalty of serving fraction `f` of the demand: the segment maximum, floored at zero.
pub fn penalty(segments: &[PenaltySegment], f: f64) -> f64 {
    segments.iter().map(|s| s.at(f)).fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceType {
    pub id: usize,
    pub service: Service,
    pub demand_mbps: f64,
    pub duration_slots: usize,
    pub price: f64,
    pub kappa: f64,
    pub segments: Vec<PenaltySegment>,
}

impl SliceType {
    pub fn new(id: usize, service: Service, demand_mbps: f64, duration_slots: usize, kappa: f64) -> Self {
        Self {
            id,
            service,
            demand_mbps,
            duration_slots,
            price: service.price(),
            kappa,
            segments: penalty_coefficients(kappa, service.price()).to_vec(),
        }
    }

    pub fn reward(&self) -> f64 {
        self.price * self.demand_mbps * self.duration_slots as f64
    }

    pub fn penalty(&self, f: f64) -> f64 {
        penalty(&self.segments, f)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceRequest {
    pub index: usize,
    pub arrival_slot: usize,
    pub slice: SliceType,
    pub reward: f64,
}

impl SliceRequest {
    pub fn new(index: usize, arrival_slot: usize, slice: SliceType) -> Self {
        let reward = slice.reward();
        Self { index, arrival_slot, slice, reward }
    }

    pub fn demand(&self) -> f64 {
        self.slice.demand_mbps
    }

    pub fn type_id(&self) -> usize {
        self.slice.id
    }

    /// First slot after the activity window.
    pub fn end_slot(&self) -> usize {
        self.arrival_slot + self.slice.duration_slots
    }

    pub fn is_active_at(&self, t: usize) -> bool {
        self.arrival_slot <= t && t < self.end_slot()
    }
}

/// The 12 slice types, ordered by service then ascending demand; `id = 4 * service + rank`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Catalog {
    kappa: f64,
    types: Vec<SliceType>,
}

impl Catalog {
    pub fn new(kappa: f64, durations: [usize; 3], demands: [[f64; DEMANDS_PER_SERVICE]; 3]) -> Result<Self, SlicingError> {
        if !(kappa > 0.0 && kappa.is_finite()) {
            return Err(SlicingError::InvalidCatalog(format!("kappa must be positive, got {kappa}")));
        }
        let mut types = Vec::with_capacity(CATALOG_SIZE);
        for service in Service::ALL {
            let s = service.index();
            if durations[s] == 0 {
                return Err(SlicingError::InvalidCatalog(format!("{service} duration must be at least 1")));
            }
            for (rank, &d) in demands[s].iter().enumerate() {
                if !(d > 0.0 && d.is_finite()) {
                    return Err(SlicingError::InvalidCatalog(format!("{service} demand {d} must be positive")));
                }
                if rank > 0 && d < demands[s][rank - 1] {
                    return Err(SlicingError::InvalidCatalog(format!("{service} demands must be non-decreasing")));
                }
                types.push(SliceType::new(s * DEMANDS_PER_SERVICE + rank, service, d, durations[s], kappa));
            }
        }
        Ok(Self { kappa, types })
    }

    pub fn canned(kappa: f64) -> Self {
        Self::new(kappa, CANNED_DURATIONS, [CANNED_DEMANDS; 3]).expect("canned catalog is valid")
    }

    /// Builds the catalog from flow statistics: per service, duration is the 90th
    /// percentile of flow durations (rounded up to whole slots) and the demands are the
    /// 25/50/75/95th percentiles of aggregated throughput, scaled by [`DEMAND_SCALE`].
    /// Flows sharing a start slot and duration are aggregated into one sample.
    pub fn from_flows(flows: &[FlowRecord], kappa: f64) -> Result<Self, SlicingError> {
        let mut durations = [0usize; 3];
        let mut demands = [[0.0; DEMANDS_PER_SERVICE]; 3];
        for service in Service::ALL {
            let mine: Vec<&FlowRecord> = flows.iter().filter(|f| f.service == service).collect();
            if mine.is_empty() {
                return Err(SlicingError::MissingService(service));
            }
            if mine.len() < MIN_FLOWS_PER_SERVICE {
                return Err(SlicingError::TooFewFlows { service, found: mine.len() });
            }
            let mut dur: Vec<f64> = mine.iter().map(|f| f.duration_slots as f64).collect();
            dur.sort_by(f64::total_cmp);
            durations[service.index()] = (percentile(&dur, DURATION_PERCENTILE).ceil() as usize).max(1);

            let mut groups: BTreeMap<(usize, usize), f64> = BTreeMap::new();
            for f in &mine {
                *groups.entry((f.start_slot, f.duration_slots)).or_default() += f.throughput_mbps;
            }
            let mut tput: Vec<f64> = groups.into_values().collect();
            tput.sort_by(f64::total_cmp);
            for (k, q) in DEMAND_PERCENTILES.iter().enumerate() {
                demands[service.index()][k] = percentile(&tput, *q) * DEMAND_SCALE;
            }
        }
        Self::new(kappa, durations, demands)
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn types(&self) -> &[SliceType] {
        &self.types
    }

    pub fn get(&self, id: usize) -> Option<&SliceType> {
        self.types.get(id)
    }

    pub fn for_service(&self, service: Service) -> &[SliceType] {
        let s = service.index() * DEMANDS_PER_SERVICE;
        &self.types[s..s + DEMANDS_PER_SERVICE]
    }

    /// Smallest type of `service` whose demand covers `throughput`.
    pub fn smallest_fitting(&self, service: Service, throughput: f64) -> Option<&SliceType> {
        self.for_service(service).iter().find(|t| t.demand_mbps >= throughput)
    }

    pub fn largest(&self, service: Service) -> &SliceType {
        &self.for_service(service)[DEMANDS_PER_SERVICE - 1]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowRecord {
    pub start_slot: usize,
    pub duration_slots: usize,
    pub throughput_mbps: f64,
    pub service: Service,
}

pub fn read_flows<R: Read>(source: R) -> Result<Vec<FlowRecord>, SlicingError> {
    let mut reader = csv::ReaderBuilder::new().from_reader(source);
    check_header(reader.headers()?, &FLOW_HEADER)?;
    let mut flows = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let bad = |reason: &str| SlicingError::MalformedRow { line, reason: reason.to_string() };
        if record.len() != 4 {
            return Err(bad("expected 4 fields"));
        }
        let start_slot = record[0].trim().parse().map_err(|_| bad("bad start_slot"))?;
        let duration_slots: usize = record[1].trim().parse().map_err(|_| bad("bad duration_slots"))?;
        let throughput_mbps = parse_f64(&record[2]).ok_or_else(|| bad("bad throughput_mbps"))?;
        if duration_slots == 0 {
            return Err(bad("duration must be at least 1"));
        }
        if !(throughput_mbps > 0.0 && throughput_mbps.is_finite()) {
            return Err(bad("throughput must be positive"));
        }
        let service = record[3].parse()?;
        if flows.last().is_some_and(|f: &FlowRecord| f.start_slot > start_slot) {
            return Err(SlicingError::UnsortedFlows { line });
        }
        flows.push(FlowRecord { start_slot, duration_slots, throughput_mbps, service });
    }
    Ok(flows)
}

pub fn write_flows<W: Write>(flows: &[FlowRecord], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{}", FLOW_HEADER.join(","))?;
    for f in flows {
        writeln!(out, "{},{},{},{}", f.start_slot, f.duration_slots, fmt_f64(f.throughput_mbps), f.service)?;
    }
    Ok(())
}

pub fn write_slice_requests<W: Write>(requests: &[SliceRequest], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{}", SR_HEADER.join(","))?;
    for r in requests {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.index,
            r.arrival_slot,
            r.type_id(),
            r.slice.service,
            fmt_f64(r.demand()),
            r.slice.duration_slots,
            fmt_f64(r.reward)
        )?;
    }
    Ok(())
}

/// Reads the SR CSV. Penalty segments are rebuilt from the service price and `kappa`;
/// the reward column must match `price * demand * duration`.
pub fn read_slice_requests<R: Read>(source: R, kappa: f64) -> Result<Vec<SliceRequest>, SlicingError> {
    let mut reader = csv::ReaderBuilder::new().from_reader(source);
    check_header(reader.headers()?, &SR_HEADER)?;
    let mut out: Vec<SliceRequest> = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let bad = |reason: String| SlicingError::MalformedRow { line, reason };
        if record.len() != SR_HEADER.len() {
            return Err(bad(format!("expected {} fields", SR_HEADER.len())));
        }
        let index: usize = record[0].trim().parse().map_err(|_| bad("bad index".into()))?;
        let arrival: usize = record[1].trim().parse().map_err(|_| bad("bad arrival_slot".into()))?;
        let type_id: usize = record[2].trim().parse().map_err(|_| bad("bad type_id".into()))?;
        let service: Service = record[3].parse()?;
        let demand = parse_f64(&record[4]).filter(|d| *d > 0.0 && d.is_finite()).ok_or_else(|| bad("bad demand_mbps".into()))?;
        let duration: usize = record[5].trim().parse().ok().filter(|d| *d > 0).ok_or_else(|| bad("bad duration_slots".into()))?;
        let reward = parse_f64(&record[6]).ok_or_else(|| bad("bad reward".into()))?;
        if type_id >= CATALOG_SIZE {
            return Err(bad(format!("type_id {type_id} outside the catalog")));
        }
        if index != out.len() {
            return Err(bad(format!("index {index} out of sequence")));
        }
        if out.last().is_some_and(|r| r.arrival_slot > arrival) {
            return Err(bad("arrival slots must be non-decreasing".into()));
        }
        let sr = SliceRequest::new(index, arrival, SliceType::new(type_id, service, demand, duration, kappa));
        if (sr.reward - reward).abs() > 1e-9 * sr.reward.max(1.0) {
            return Err(bad(format!("reward {reward} does not equal price*demand*duration = {}", sr.reward)));
        }
        out.push(sr);
    }
    Ok(out)
}

#[derive(Debug, Clone)]
struct OpenSlice {
    service: Service,
    demand: f64,
    expiry: usize,
    /// `(end_slot, throughput)` of hosted flow pieces.
    hosted: Vec<(usize, f64)>,
}

impl OpenSlice {
    fn residual(&self, t: usize) -> f64 {
        self.demand - self.hosted.iter().filter(|(end, _)| *end > t).map(|(_, q)| q).sum::<f64>()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
struct PendingKey {
    slot: usize,
    /// 0 for tails of flows whose slice expired, 1 for fresh flows.
    class: u8,
    seq: usize,
}

/// Packs flows into slice requests, tenant style: a flow goes into the first active
/// slice of its service with enough spare throughput, otherwise a new slice of the
/// smallest fitting type is requested. Flows above the largest demand are split
/// largest-first. A flow that outlives its slice comes back as a new flow at the
/// slice's expiry slot; at a given slot such tails are handled before fresh flows.
pub fn generate_slice_requests(flows: &[FlowRecord], catalog: &Catalog) -> Result<Vec<SliceRequest>, SlicingError> {
    let mut pending: BinaryHeap<Reverse<(PendingKey, usize)>> = BinaryHeap::new();
    let mut store: Vec<(usize, f64, Service)> = Vec::new(); // (end_slot, throughput, service)
    for (seq, f) in flows.iter().enumerate() {
        if seq > 0 && flows[seq - 1].start_slot > f.start_slot {
            return Err(SlicingError::UnsortedFlows { line: seq as u64 + 2 });
        }
        store.push((f.start_slot + f.duration_slots, f.throughput_mbps, f.service));
        pending.push(Reverse((PendingKey { slot: f.start_slot, class: 1, seq }, seq)));
    }
    let mut open: Vec<OpenSlice> = Vec::new();
    let mut requests = Vec::new();
    let mut tail_seq = 0usize;

    while let Some(Reverse((key, id))) = pending.pop() {
        let t = key.slot;
        open.retain(|s| s.expiry > t);
        let (end, mut q, service) = store[id];
        loop {
            let (host, piece) = match open.iter().position(|s| s.service == service && s.residual(t) >= q) {
                Some(pos) => (pos, q),
                None => {
                    let ty = catalog.smallest_fitting(service, q).unwrap_or_else(|| catalog.largest(service));
                    let sr = SliceRequest::new(requests.len(), t, ty.clone());
                    open.push(OpenSlice { service, demand: ty.demand_mbps, expiry: sr.end_slot(), hosted: Vec::new() });
                    requests.push(sr);
                    (open.len() - 1, q.min(ty.demand_mbps))
                }
            };
            let expiry = open[host].expiry;
            open[host].hosted.push((end.min(expiry), piece));
            if end > expiry {
                store.push((end, piece, service));
                pending.push(Reverse((PendingKey { slot: expiry, class: 0, seq: tail_seq }, store.len() - 1)));
                tail_seq += 1;
            }
            q -= piece;
            if q <= 0.0 {
                break;
            }
        }
    }
    Ok(requests)
}

/// Parameters of the synthetic flow generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticFlowParams {
    /// Mean new flows per slot for URLLC, eMBB, BE.
    pub arrivals_per_slot: [f64; 3],
    /// Median per-flow throughput in Mbps.
    pub median_throughput: [f64; 3],
    /// Log-space standard deviation of the throughput.
    pub throughput_sigma: f64,
    /// Mean flow duration in slots.
    pub mean_duration: [f64; 3],
}

impl Default for SyntheticFlowParams {
    fn default() -> Self {
        Self {
            arrivals_per_slot: [0.3, 0.5, 0.4],
            median_throughput: [0.3, 3.0, 1.5],
            throughput_sigma: 1.0,
            mean_duration: [6.0, 15.0, 10.0],
        }
    }
}

/// Poisson arrivals per slot, log-normal throughput, geometric durations.
pub fn generate_synthetic_flows(params: &SyntheticFlowParams, horizon: usize, seed: u64) -> Vec<FlowRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut flows = Vec::new();
    for t in 0..horizon {
        for service in Service::ALL {
            let s = service.index();
            let lambda = params.arrivals_per_slot[s];
            let count = if lambda > 0.0 { Poisson::new(lambda).expect("positive rate").sample(&mut rng) as usize } else { 0 };
            let tput = LogNormal::new(params.median_throughput[s].ln(), params.throughput_sigma).expect("valid log-normal");
            let p_end = 1.0 / params.mean_duration[s].max(1.0);
            for _ in 0..count {
                let mut duration = 1;
                while !rng.random_bool(p_end) {
                    duration += 1;
                }
                flows.push(FlowRecord { start_slot: t, duration_slots: duration, throughput_mbps: tput.sample(&mut rng), service });
            }
        }
    }
    flows
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flow(start: usize, dur: usize, q: f64, service: Service) -> FlowRecord {
        FlowRecord { start_slot: start, duration_slots: dur, throughput_mbps: q, service }
    }

    #[test]
    fn table_one_coefficients() {
        let seg = |s: [PenaltySegment; 2]| [s[0].slope, s[0].intercept, s[1].slope, s[1].intercept];
        assert_eq!(seg(penalty_coefficients(0.2, 10.0)), [6.0, -2.0, 2.0, 0.0]);
        assert_eq!(seg(penalty_coefficients(0.2, 5.0)), [3.0, -1.0, 1.0, 0.0]);
        assert_eq!(seg(penalty_coefficients(0.2, 2.5)), [1.5, -0.5, 0.5, 0.0]);
    }

    #[test]
    fn urllc_penalty_points() {
        let t = SliceType::new(0, Service::Urllc, 1.0, 1, 0.2);
        assert_eq!(t.penalty(1.0), 0.0);
        assert_eq!(t.penalty(0.0), 4.0);
        assert_eq!(t.penalty(0.5), 1.0);
    }

    #[test]
    fn canned_catalog_layout() {
        let c = Catalog::canned(DEFAULT_KAPPA);
        assert_eq!(c.types().len(), 12);
        for (id, t) in c.types().iter().enumerate() {
            assert_eq!(t.id, id);
            assert_eq!(t.demand_mbps, CANNED_DEMANDS[id % 4]);
            assert_eq!(t.service, Service::ALL[id / 4]);
            assert_eq!(t.reward(), t.price * t.demand_mbps * t.duration_slots as f64);
        }
    }

    #[test]
    fn identical_flows_give_equal_demands() {
        let mut flows = Vec::new();
        for service in Service::ALL {
            for t in 0..25 {
                flows.push(flow(t, 7, 1.5, service));
            }
        }
        let c = Catalog::from_flows(&flows, 0.2).unwrap();
        for t in c.types() {
            assert_eq!(t.demand_mbps, 6.0);
            assert_eq!(t.duration_slots, 7);
        }
    }

    #[test]
    fn flows_sharing_start_and_duration_aggregate() {
        let mut flows = Vec::new();
        for service in Service::ALL {
            for t in 0..20 {
                flows.push(flow(t, 3, 1.0, service));
                flows.push(flow(t, 3, 1.0, service));
            }
        }
        flows.sort_by_key(|f| f.start_slot);
        let c = Catalog::from_flows(&flows, 0.2).unwrap();
        assert!(c.types().iter().all(|t| t.demand_mbps == 8.0));
    }

    #[test]
    fn catalog_stat_errors() {
        let few: Vec<FlowRecord> = Service::ALL.iter().flat_map(|&s| (0..19).map(move |t| flow(t, 1, 1.0, s))).collect();
        assert!(matches!(Catalog::from_flows(&few, 0.2), Err(SlicingError::TooFewFlows { found: 19, .. })));
        let no_be: Vec<FlowRecord> = (0..30).map(|t| flow(t, 1, 1.0, Service::Urllc)).chain((0..30).map(|t| flow(t, 1, 1.0, Service::Embb))).collect();
        assert!(matches!(Catalog::from_flows(&no_be, 0.2), Err(SlicingError::MissingService(Service::Be))));
    }

    #[test]
    fn packing_examples() {
        let c = Catalog::canned(0.2);
        assert!(generate_slice_requests(&[], &c).unwrap().is_empty());

        let srs = generate_slice_requests(&[flow(0, 5, 7.0, Service::Embb)], &c).unwrap();
        assert_eq!(srs.len(), 1);
        assert_eq!(srs[0].demand(), 8.8);

        let two = [flow(0, 3, 0.3, Service::Be), flow(0, 3, 0.3, Service::Be)];
        let srs = generate_slice_requests(&two, &c).unwrap();
        assert_eq!(srs.len(), 2);
        assert!(srs.iter().all(|s| s.demand() == 0.4));
    }

    #[test]
    fn second_flow_reuses_spare_capacity() {
        let c = Catalog::canned(0.2);
        let flows = [flow(0, 3, 5.0, Service::Embb), flow(1, 2, 3.0, Service::Embb), flow(1, 2, 3.0, Service::Be)];
        let srs = generate_slice_requests(&flows, &c).unwrap();
        assert_eq!(srs.len(), 2);
        assert_eq!(srs[1].slice.service, Service::Be);
    }

    #[test]
    fn oversized_flow_splits_largest_first() {
        let c = Catalog::canned(0.2);
        let srs = generate_slice_requests(&[flow(0, 2, 30.0, Service::Urllc)], &c).unwrap();
        let demands: Vec<f64> = srs.iter().map(|s| s.demand()).collect();
        assert_eq!(demands, vec![27.2, 8.8]);
    }

    #[test]
    fn long_flow_resubmitted_at_expiry() {
        let c = Catalog::canned(0.2);
        let d = c.for_service(Service::Urllc)[0].duration_slots;
        let srs = generate_slice_requests(&[flow(0, 2 * d + 1, 0.2, Service::Urllc)], &c).unwrap();
        let arrivals: Vec<usize> = srs.iter().map(|s| s.arrival_slot).collect();
        assert_eq!(arrivals, vec![0, d, 2 * d]);
    }

    #[test]
    fn sr_csv_round_trip() {
        let c = Catalog::canned(0.2);
        let flows = generate_synthetic_flows(&SyntheticFlowParams::default(), 60, 3);
        let srs = generate_slice_requests(&flows, &c).unwrap();
        let mut buf = Vec::new();
        write_slice_requests(&srs, &mut buf).unwrap();
        assert_eq!(read_slice_requests(buf.as_slice(), 0.2).unwrap(), srs);
        let mut fbuf = Vec::new();
        write_flows(&flows, &mut fbuf).unwrap();
        assert_eq!(read_flows(fbuf.as_slice()).unwrap(), flows);
    }
}
