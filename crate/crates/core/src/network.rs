//! Directed traffic-network representation: stream distance, flow
//! connectivity, time-binned confluence-additive segment weights, and the
//! tail-up exponential spatial correlation.
//!
//! Correlation is nonzero only for flow-connected locations. For a connected
//! pair the formula is applied in the flow direction: `C(d) * sqrt(w_up / w_down)`
//! with `C(d) = beta * exp(-d / sigma)`.

use alloc::collections::{BTreeMap, BinaryHeap};
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::fmt;

use crate::math;

/// A geo-location on the network: a segment plus meters from its upstream end.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkLocation {
    pub segment: String,
    pub offset_m: f64,
}

impl NetworkLocation {
    pub fn new(segment: impl Into<String>, offset_m: f64) -> Self {
        NetworkLocation {
            segment: segment.into(),
            offset_m,
        }
    }
}

/// Resolved location: segment index + offset. Cheap to copy, used internally.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Loc {
    pub seg: u32,
    pub offset_m: f64,
}

#[derive(Clone, Debug)]
pub struct SegmentSpec {
    pub id: String,
    pub length_m: f64,
    pub to: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct SensorSpec {
    pub id: usize,
    pub segment: String,
    pub offset_m: f64,
}

/// Parsed network description, prior to validation.
#[derive(Clone, Debug, Default)]
pub struct NetworkSpec {
    pub segments: Vec<SegmentSpec>,
    pub sensors: Vec<SensorSpec>,
}

#[derive(Clone, Debug)]
struct Segment {
    id: String,
    length_m: f64,
    to: Vec<u32>,
}

#[derive(Clone, Debug)]
pub struct Sensor {
    pub id: usize,
    pub loc: Loc,
}

/// Validated directed segment graph with sensor placements.
///
/// Immutable after construction; safe to read from many threads.
#[derive(Clone, Debug)]
pub struct TrafficNetwork {
    segments: Vec<Segment>,
    id_index: BTreeMap<String, u32>,
    sensors: Vec<Sensor>,
    /// Sensors per segment (the location-space index).
    seg_sensors: Vec<Vec<u32>>,
    /// Junction ids: entry/exit node per segment. Node k's inbound segments
    /// are those with `exit_node == k`, outbound those with `entry_node == k`.
    entry_node: Vec<u32>,
    exit_node: Vec<u32>,
    n_nodes: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub enum NetworkError {
    DanglingReference { from: String, to: String },
    NonPositiveLength { segment: String },
    DuplicateSegmentId { segment: String },
    DuplicateSensorId { sensor: usize },
    SensorIdsNotDense { expected: usize, got: usize },
    SensorOffSegment { sensor: usize, segment: String, offset_m: f64, length_m: f64 },
    UnknownSegment { segment: String },
    OffsetOutOfRange { segment: String, offset_m: f64, length_m: f64 },
    NonPositiveWeight { segment: String, bin: i64 },
    MissingWeightBin { bin: i64 },
    IncompleteWeightBin { bin: i64, segment: String },
    BinNotAligned { bin_start_h: f64 },
    WeightGapTooLarge { node: u32, bin: i64, relative_gap: f64 },
    RenormalizationDiverged { bin: i64 },
}

impl fmt::Display for NetworkError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use NetworkError::*;
        match self {
            DanglingReference { from, to } => {
                write!(f, "dangling reference: segment {from} points to missing segment {to}")
            }
            NonPositiveLength { segment } => write!(f, "segment {segment} has non-positive length"),
            DuplicateSegmentId { segment } => write!(f, "duplicate segment id {segment}"),
            DuplicateSensorId { sensor } => write!(f, "duplicate sensor id {sensor}"),
            SensorIdsNotDense { expected, got } => {
                write!(f, "sensor ids must be dense 0..{expected}, got id {got}")
            }
            SensorOffSegment { sensor, segment, offset_m, length_m } => write!(
                f,
                "sensor {sensor} offset {offset_m} m outside segment {segment} (length {length_m} m)"
            ),
            UnknownSegment { segment } => write!(f, "unknown segment {segment}"),
            OffsetOutOfRange { segment, offset_m, length_m } => write!(
                f,
                "offset {offset_m} m outside segment {segment} (length {length_m} m)"
            ),
            NonPositiveWeight { segment, bin } => {
                write!(f, "non-positive weight for segment {segment} in bin {bin}")
            }
            MissingWeightBin { bin } => write!(f, "missing weight bin {bin}"),
            IncompleteWeightBin { bin, segment } => {
                write!(f, "weight bin {bin} is missing segment {segment}")
            }
            BinNotAligned { bin_start_h } => {
                write!(f, "bin start {bin_start_h} h is not a multiple of the bin duration")
            }
            WeightGapTooLarge { node, bin, relative_gap } => write!(
                f,
                "confluence {node} in bin {bin} violates additivity by {relative_gap:.3e} (> 5%)"
            ),
            RenormalizationDiverged { bin } => {
                write!(f, "weight renormalization did not converge in bin {bin}")
            }
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for NetworkError {}

/// Build and validate a network from its parsed description.
pub fn build_network(spec: &NetworkSpec) -> Result<TrafficNetwork, NetworkError> {
    let mut id_index: BTreeMap<String, u32> = BTreeMap::new();
    for (i, s) in spec.segments.iter().enumerate() {
        if s.length_m <= 0.0 || !s.length_m.is_finite() {
            return Err(NetworkError::NonPositiveLength { segment: s.id.clone() });
        }
        if id_index.insert(s.id.clone(), i as u32).is_some() {
            return Err(NetworkError::DuplicateSegmentId { segment: s.id.clone() });
        }
    }
    let mut segments = Vec::with_capacity(spec.segments.len());
    for s in &spec.segments {
        let mut to = Vec::with_capacity(s.to.len());
        for t in &s.to {
            match id_index.get(t) {
                Some(&idx) => to.push(idx),
                None => {
                    return Err(NetworkError::DanglingReference { from: s.id.clone(), to: t.clone() })
                }
            }
        }
        segments.push(Segment { id: s.id.clone(), length_m: s.length_m, to });
    }

    // Union segment endpoints into junction nodes.
    let n = segments.len();
    let mut parent: Vec<u32> = (0..2 * n as u32).collect(); // 2i = entry(i), 2i+1 = exit(i)
    fn find(parent: &mut [u32], x: u32) -> u32 {
        let mut r = x;
        while parent[r as usize] != r {
            r = parent[r as usize];
        }
        let mut c = x;
        while parent[c as usize] != r {
            let next = parent[c as usize];
            parent[c as usize] = r;
            c = next;
        }
        r
    }
    for (i, s) in segments.iter().enumerate() {
        for &j in &s.to {
            let a = find(&mut parent, 2 * i as u32 + 1);
            let b = find(&mut parent, 2 * j);
            if a != b {
                parent[a as usize] = b;
            }
        }
    }
    let mut node_of_root: BTreeMap<u32, u32> = BTreeMap::new();
    let mut entry_node = Vec::with_capacity(n);
    let mut exit_node = Vec::with_capacity(n);
    for i in 0..n {
        for (list, endpoint) in [(&mut entry_node, 2 * i as u32), (&mut exit_node, 2 * i as u32 + 1)] {
            let root = find(&mut parent, endpoint);
            let next = node_of_root.len() as u32;
            let id = *node_of_root.entry(root).or_insert(next);
            list.push(id);
        }
    }
    let n_nodes = node_of_root.len();

    let mut sensors: Vec<Option<Sensor>> = alloc::vec![None; spec.sensors.len()];
    let mut seg_sensors = alloc::vec![Vec::new(); n];
    for sp in &spec.sensors {
        let seg = *id_index
            .get(&sp.segment)
            .ok_or_else(|| NetworkError::UnknownSegment { segment: sp.segment.clone() })?;
        let len = segments[seg as usize].length_m;
        if !(0.0..=len).contains(&sp.offset_m) || !sp.offset_m.is_finite() {
            return Err(NetworkError::SensorOffSegment {
                sensor: sp.id,
                segment: sp.segment.clone(),
                offset_m: sp.offset_m,
                length_m: len,
            });
        }
        if sp.id >= spec.sensors.len() {
            return Err(NetworkError::SensorIdsNotDense { expected: spec.sensors.len(), got: sp.id });
        }
        if sensors[sp.id].is_some() {
            return Err(NetworkError::DuplicateSensorId { sensor: sp.id });
        }
        sensors[sp.id] = Some(Sensor { id: sp.id, loc: Loc { seg, offset_m: sp.offset_m } });
        seg_sensors[seg as usize].push(sp.id as u32);
    }
    let sensors: Vec<Sensor> = sensors.into_iter().map(|s| s.expect("dense ids")).collect();

    Ok(TrafficNetwork {
        segments,
        id_index,
        sensors,
        seg_sensors,
        entry_node,
        exit_node,
        n_nodes,
    })
}

/// Min-heap entry for Dijkstra over segment entries.
#[derive(PartialEq)]
struct HeapItem {
    cost: f64,
    seg: u32,
}
impl Eq for HeapItem {}
impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        // reversed: BinaryHeap is a max-heap
        other
            .cost
            .total_cmp(&self.cost)
            .then_with(|| other.seg.cmp(&self.seg))
    }
}
impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl TrafficNetwork {
    pub fn segment_count(&self) -> usize {
        self.segments.len()
    }

    pub fn sensor_count(&self) -> usize {
        self.sensors.len()
    }

    pub fn sensors(&self) -> &[Sensor] {
        &self.sensors
    }

    pub fn sensor_loc(&self, sensor: usize) -> Loc {
        self.sensors[sensor].loc
    }

    pub fn sensors_on_segment(&self, seg: u32) -> &[u32] {
        &self.seg_sensors[seg as usize]
    }

    pub fn segment_id(&self, seg: u32) -> &str {
        &self.segments[seg as usize].id
    }

    pub fn segment_length(&self, seg: u32) -> f64 {
        self.segments[seg as usize].length_m
    }

    pub fn segment_index(&self, id: &str) -> Option<u32> {
        self.id_index.get(id).copied()
    }

    /// Resolve a named location, checking the segment exists and the offset
    /// lies within it.
    pub fn resolve(&self, loc: &NetworkLocation) -> Result<Loc, NetworkError> {
        let seg = self
            .segment_index(&loc.segment)
            .ok_or_else(|| NetworkError::UnknownSegment { segment: loc.segment.clone() })?;
        let len = self.segments[seg as usize].length_m;
        if !(0.0..=len).contains(&loc.offset_m) || !loc.offset_m.is_finite() {
            return Err(NetworkError::OffsetOutOfRange {
                segment: loc.segment.clone(),
                offset_m: loc.offset_m,
                length_m: len,
            });
        }
        Ok(Loc { seg, offset_m: loc.offset_m })
    }

    /// Shortest distance (meters) travelling with the flow from `u` to `v`,
    /// or `None` when `v` is not reachable from `u`. Cycles are permitted.
    pub fn directed_distance(&self, u: Loc, v: Loc) -> Option<f64> {
        if u.seg == v.seg && u.offset_m <= v.offset_m {
            return Some(v.offset_m - u.offset_m);
        }
        // Dijkstra over segment entries: entering segment s from seg t costs
        // length(t). Start by exiting u's segment.
        let mut best: Vec<f64> = alloc::vec![f64::INFINITY; self.segments.len()];
        let mut heap = BinaryHeap::new();
        let exit_cost = self.segments[u.seg as usize].length_m - u.offset_m;
        for &s in &self.segments[u.seg as usize].to {
            if exit_cost < best[s as usize] {
                best[s as usize] = exit_cost;
                heap.push(HeapItem { cost: exit_cost, seg: s });
            }
        }
        while let Some(HeapItem { cost, seg }) = heap.pop() {
            if cost > best[seg as usize] {
                continue;
            }
            if seg == v.seg {
                return Some(cost + v.offset_m);
            }
            let through = cost + self.segments[seg as usize].length_m;
            for &s in &self.segments[seg as usize].to {
                if through < best[s as usize] {
                    best[s as usize] = through;
                    heap.push(HeapItem { cost: through, seg: s });
                }
            }
        }
        None
    }

    /// Directed connectivity and in-flow distance for a resolved pair:
    /// `(upstream-to-downstream distance, u_is_upstream)`, preferring the
    /// `u -> v` direction when both hold (cycles).
    pub(crate) fn flow_relation(&self, u: Loc, v: Loc) -> Option<(f64, bool)> {
        match (self.directed_distance(u, v), self.directed_distance(v, u)) {
            (Some(duv), Some(dvu)) => {
                if duv <= dvu {
                    Some((duv, true))
                } else {
                    Some((dvu, false))
                }
            }
            (Some(d), None) => Some((d, true)),
            (None, Some(d)) => Some((d, false)),
            (None, None) => None,
        }
    }

    /// Normalized planar coordinates per sensor, derived deterministically
    /// from the topology: (flow depth + offset, segment-id rank).
    pub fn sensor_positions(&self) -> Vec<[f64; 2]> {
        let n = self.segments.len();
        // Depth = shortest metres of fully traversed segments from any
        // source segment's entry. Source = segment with no inbound edges.
        let mut indegree = alloc::vec![0usize; n];
        for s in &self.segments {
            for &t in &s.to {
                indegree[t as usize] += 1;
            }
        }
        let mut depth = alloc::vec![f64::INFINITY; n];
        let mut heap = BinaryHeap::new();
        for i in 0..n {
            if indegree[i] == 0 {
                depth[i] = 0.0;
                heap.push(HeapItem { cost: 0.0, seg: i as u32 });
            }
        }
        while let Some(HeapItem { cost, seg }) = heap.pop() {
            if cost > depth[seg as usize] {
                continue;
            }
            let through = cost + self.segments[seg as usize].length_m;
            for &s in &self.segments[seg as usize].to {
                if through < depth[s as usize] {
                    depth[s as usize] = through;
                    heap.push(HeapItem { cost: through, seg: s });
                }
            }
        }
        // Rank of each segment id among sorted ids (id_index iterates sorted).
        let mut rank = alloc::vec![0usize; n];
        for (r, (_, &idx)) in self.id_index.iter().enumerate() {
            rank[idx as usize] = r;
        }
        let raw: Vec<[f64; 2]> = self
            .sensors
            .iter()
            .map(|s| {
                let d = depth[s.loc.seg as usize];
                let along = if d.is_finite() { d + s.loc.offset_m } else { s.loc.offset_m };
                let across = rank[s.loc.seg as usize] as f64 / (n.max(2) - 1) as f64;
                [along, across]
            })
            .collect();
        let max_along = raw.iter().map(|p| p[0]).fold(0.0f64, f64::max);
        raw.iter()
            .map(|p| [if max_along > 0.0 { p[0] / max_along } else { 0.0 }, p[1]])
            .collect()
    }

    /// Confluence nodes: junctions with at least one inbound and one
    /// outbound segment, as `(node, inbound segs, outbound segs)`.
    pub(crate) fn confluences(&self) -> Vec<(u32, Vec<u32>, Vec<u32>)> {
        let mut inbound: Vec<Vec<u32>> = alloc::vec![Vec::new(); self.n_nodes];
        let mut outbound: Vec<Vec<u32>> = alloc::vec![Vec::new(); self.n_nodes];
        for i in 0..self.segments.len() {
            outbound[self.entry_node[i] as usize].push(i as u32);
            inbound[self.exit_node[i] as usize].push(i as u32);
        }
        (0..self.n_nodes as u32)
            .filter(|&k| !inbound[k as usize].is_empty() && !outbound[k as usize].is_empty())
            .map(|k| (k, inbound[k as usize].clone(), outbound[k as usize].clone()))
            .collect()
    }

    /// Nodes in topological order (Kahn); `None` if the junction graph has a
    /// cycle.
    fn node_topo_order(&self) -> Option<Vec<u32>> {
        let mut indeg = alloc::vec![0usize; self.n_nodes];
        for i in 0..self.segments.len() {
            indeg[self.exit_node[i] as usize] += 1;
        }
        let mut queue: Vec<u32> = (0..self.n_nodes as u32)
            .filter(|&k| indeg[k as usize] == 0)
            .collect();
        let mut order = Vec::with_capacity(self.n_nodes);
        let mut head = 0;
        while head < queue.len() {
            let k = queue[head];
            head += 1;
            order.push(k);
            for i in 0..self.segments.len() {
                if self.entry_node[i] == k {
                    let e = self.exit_node[i] as usize;
                    indeg[e] -= 1;
                    if indeg[e] == 0 {
                        queue.push(self.exit_node[i]);
                    }
                }
            }
        }
        (order.len() == self.n_nodes).then_some(order)
    }
}

/// Stream distance between two locations: the directed along-network path
/// length if they are flow-connected (shorter direction if both hold),
/// otherwise `None`. `stream_distance(u, u) == Some(0)`.
pub fn stream_distance(
    net: &TrafficNetwork,
    u: &NetworkLocation,
    v: &NetworkLocation,
) -> Result<Option<f64>, NetworkError> {
    let (u, v) = (net.resolve(u)?, net.resolve(v)?);
    Ok(net.flow_relation(u, v).map(|(d, _)| d))
}

/// True iff one location is reachable from the other along the flow.
pub fn flow_connected(
    net: &TrafficNetwork,
    u: &NetworkLocation,
    v: &NetworkLocation,
) -> Result<bool, NetworkError> {
    let (u, v) = (net.resolve(u)?, net.resolve(v)?);
    Ok(net.flow_relation(u, v).is_some())
}

/// Tail-up parameters. Stored unconstrained; `beta()`/`sigma()` are the
/// softplus-mapped positive values used by the correlation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TailupParams {
    pub raw_beta: f64,
    pub raw_sigma: f64,
}

impl TailupParams {
    pub fn from_raw(raw_beta: f64, raw_sigma: f64) -> Self {
        TailupParams { raw_beta, raw_sigma }
    }

    /// Construct from the positive values themselves.
    pub fn from_values(beta: f64, sigma: f64) -> Self {
        assert!(beta > 0.0 && sigma > 0.0);
        TailupParams {
            raw_beta: math::inv_softplus(beta),
            raw_sigma: math::inv_softplus(sigma),
        }
    }

    pub fn beta(&self) -> f64 {
        math::softplus(self.raw_beta)
    }

    pub fn sigma(&self) -> f64 {
        math::softplus(self.raw_sigma)
    }
}

/// Time-binned positive segment weights `w_t^l`.
///
/// Every stored bin carries a weight for every segment. Weights are additive
/// at confluences after [`SegmentWeights::reconcile`].
#[derive(Clone, Debug)]
pub struct SegmentWeights {
    bin_hours: f64,
    bins: BTreeMap<i64, Vec<f64>>,
}

/// One additivity violation found by [`validate_weights`].
#[derive(Clone, Debug, PartialEq)]
pub struct WeightViolation {
    pub bin: i64,
    pub node: u32,
    pub inbound_sum: f64,
    pub outbound_sum: f64,
}

impl WeightViolation {
    pub fn relative_gap(&self) -> f64 {
        let m = self.inbound_sum.max(self.outbound_sum);
        if m == 0.0 {
            0.0
        } else {
            (self.inbound_sum - self.outbound_sum).abs() / m
        }
    }
}

pub const ADDITIVITY_TOL: f64 = 1e-6;
const RENORMALIZABLE_GAP: f64 = 0.05;

impl SegmentWeights {
    pub fn new(bin_hours: f64) -> Self {
        assert!(bin_hours > 0.0);
        SegmentWeights { bin_hours, bins: BTreeMap::new() }
    }

    /// Uniform weight for every segment in a single bin covering all time
    /// (bin 0 is used for any `t >= 0`; see `bin_of`).
    pub fn uniform(net: &TrafficNetwork, bin_hours: f64, weight: f64) -> Self {
        let mut w = SegmentWeights::new(bin_hours);
        w.bins.insert(0, alloc::vec![weight; net.segment_count()]);
        w
    }

    pub fn bin_hours(&self) -> f64 {
        self.bin_hours
    }

    pub fn bin_indices(&self) -> impl Iterator<Item = i64> + '_ {
        self.bins.keys().copied()
    }

    /// Bin containing time `t` (hours). Falls back to the single stored bin
    /// when only one exists, so time-constant weights need no duplication.
    pub fn bin_of(&self, t: f64) -> i64 {
        if self.bins.len() == 1 {
            *self.bins.keys().next().expect("non-empty")
        } else {
            math::floor(t / self.bin_hours) as i64
        }
    }

    /// Build from `(bin_start_h, segment_id, weight)` entries; every bin
    /// mentioned must end up covering every segment.
    pub fn from_entries(
        net: &TrafficNetwork,
        bin_hours: f64,
        entries: &[(f64, String, f64)],
    ) -> Result<Self, NetworkError> {
        assert!(bin_hours > 0.0);
        let mut bins: BTreeMap<i64, Vec<f64>> = BTreeMap::new();
        for (start, seg_id, weight) in entries {
            let bin_f = start / bin_hours;
            let bin = math::round(bin_f) as i64;
            if (bin_f - bin as f64).abs() > 1e-9 {
                return Err(NetworkError::BinNotAligned { bin_start_h: *start });
            }
            let seg = net
                .segment_index(seg_id)
                .ok_or_else(|| NetworkError::UnknownSegment { segment: seg_id.clone() })?;
            if !(*weight > 0.0) || !weight.is_finite() {
                return Err(NetworkError::NonPositiveWeight { segment: seg_id.clone(), bin });
            }
            bins.entry(bin)
                .or_insert_with(|| alloc::vec![f64::NAN; net.segment_count()])[seg as usize] = *weight;
        }
        for (&bin, w) in &bins {
            for (i, v) in w.iter().enumerate() {
                if v.is_nan() {
                    return Err(NetworkError::IncompleteWeightBin {
                        bin,
                        segment: String::from(net.segment_id(i as u32)),
                    });
                }
            }
        }
        Ok(SegmentWeights { bin_hours, bins })
    }

    pub fn weight(&self, bin: i64, seg: u32) -> Option<f64> {
        self.bins.get(&bin).map(|w| w[seg as usize])
    }

    /// Weight of the segment under `t`'s bin; error when the bin is absent.
    pub fn weight_at(&self, t: f64, seg: u32) -> Result<f64, NetworkError> {
        let bin = self.bin_of(t);
        self.weight(bin, seg).ok_or(NetworkError::MissingWeightBin { bin })
    }

    /// Project to the nearest additive assignment by proportionally scaling
    /// inbound weights at each confluence, sinks first. Violations above 5%
    /// relative are errors.
    pub fn reconcile(&mut self, net: &TrafficNetwork) -> Result<(), NetworkError> {
        for v in validate_weights(net, self)? {
            if v.relative_gap() > RENORMALIZABLE_GAP {
                return Err(NetworkError::WeightGapTooLarge {
                    node: v.node,
                    bin: v.bin,
                    relative_gap: v.relative_gap(),
                });
            }
        }
        let confluences = net.confluences();
        // Reverse topological node order makes one sweep exact on DAGs;
        // cyclic junction graphs fall back to fixed-point sweeps.
        let order: Vec<u32> = match net.node_topo_order() {
            Some(mut o) => {
                o.reverse();
                o
            }
            None => (0..net.n_nodes as u32).collect(),
        };
        let by_node: BTreeMap<u32, &(u32, Vec<u32>, Vec<u32>)> =
            confluences.iter().map(|c| (c.0, c)).collect();
        let bins: Vec<i64> = self.bins.keys().copied().collect();
        for bin in bins {
            let mut converged = false;
            for _ in 0..1000 {
                let mut worst: f64 = 0.0;
                for node in &order {
                    let Some((_, inb, outb)) = by_node.get(node) else { continue };
                    let w = self.bins.get_mut(&bin).expect("bin exists");
                    let in_sum: f64 = inb.iter().map(|&s| w[s as usize]).sum();
                    let out_sum: f64 = outb.iter().map(|&s| w[s as usize]).sum();
                    let gap = (in_sum - out_sum).abs() / in_sum.max(out_sum);
                    worst = worst.max(gap);
                    if gap > 0.0 {
                        let scale = out_sum / in_sum;
                        for &s in inb.iter() {
                            w[s as usize] *= scale;
                        }
                    }
                }
                if worst <= ADDITIVITY_TOL {
                    converged = true;
                    break;
                }
            }
            if !converged {
                return Err(NetworkError::RenormalizationDiverged { bin });
            }
        }
        Ok(())
    }
}

/// Additivity report: one entry per (bin, confluence) whose inbound and
/// outbound weight sums differ by more than `ADDITIVITY_TOL` relative.
pub fn validate_weights(
    net: &TrafficNetwork,
    w: &SegmentWeights,
) -> Result<Vec<WeightViolation>, NetworkError> {
    let confluences = net.confluences();
    let mut out = Vec::new();
    for (&bin, weights) in &w.bins {
        if weights.len() != net.segment_count() {
            return Err(NetworkError::IncompleteWeightBin { bin, segment: String::new() });
        }
        for (node, inb, outb) in &confluences {
            let inbound_sum: f64 = inb.iter().map(|&s| weights[s as usize]).sum();
            let outbound_sum: f64 = outb.iter().map(|&s| weights[s as usize]).sum();
            let v = WeightViolation { bin, node: *node, inbound_sum, outbound_sum };
            if v.relative_gap() > ADDITIVITY_TOL {
                out.push(v);
            }
        }
    }
    Ok(out)
}

/// Tail-up exponential correlation `alpha_t(u, v)`.
///
/// Zero for flow-unconnected pairs; otherwise `C(d) * sqrt(w(up) / w(down))`
/// with `C(d) = beta * exp(-d / sigma)`, evaluated in the flow direction.
pub fn tailup_correlation(
    net: &TrafficNetwork,
    w: &SegmentWeights,
    t: f64,
    u: &NetworkLocation,
    v: &NetworkLocation,
    p: &TailupParams,
) -> Result<f64, NetworkError> {
    let (ur, vr) = (net.resolve(u)?, net.resolve(v)?);
    match net.flow_relation(ur, vr) {
        None => Ok(0.0),
        Some((d, u_upstream)) => {
            let (up, down) = if u_upstream { (ur, vr) } else { (vr, ur) };
            let w_up = w.weight_at(t, up.seg)?;
            let w_down = w.weight_at(t, down.seg)?;
            Ok(p.beta() * math::exp(-d / p.sigma()) * math::sqrt(w_up / w_down))
        }
    }
}
