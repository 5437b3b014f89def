//! The conditional intensity `lambda*(t, k) = mu0 + mu1 + lambda'` and
//! everything built on it: compensator integration, log-likelihood,
//! conditional density, and next-event prediction.
//!
//! Evaluation is generic over [`Scalar`], so the identical code path yields
//! plain values (`f64`) or tape-recorded values ([`Var`]) for gradients.
//! Integration is piecewise trapezoid with pieces split at every event time,
//! incident start/end, and weight-bin boundary, where the integrand jumps.

use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::attention::{self, score, value_embedding, AttentionParams, EventEmbedding};
use crate::autodiff::{Scalar, Tape, Var};
use crate::events::EventSequence;
use crate::math;
use crate::network::{Loc, NetworkError, SegmentWeights, TailupParams, TrafficNetwork};
use crate::rng;

/// Hyperparameters fixing every parameter shape.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelConfig {
    /// Number of sensors K (intensity channels).
    pub sensors: usize,
    /// Attention heads M.
    pub heads: usize,
    /// Value-embedding dimension p.
    pub value_dim: usize,
    /// Hidden width of each score network.
    pub hidden: usize,
    /// Score on temporal distance alone (time-only data).
    pub temporal_only: bool,
    /// Piecewise-constant time-of-day multipliers on mu0; 0 disables.
    pub tod_bins: usize,
    /// Period (hours) the time-of-day bins divide.
    pub tod_period_h: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            sensors: 1,
            heads: 3,
            value_dim: 8,
            hidden: 32,
            temporal_only: false,
            tod_bins: 0,
            tod_period_h: 24.0,
        }
    }
}

/// Every trainable parameter of the model. Positive quantities
/// (gamma, beta, sigma, mu0, time-of-day multipliers) are stored
/// unconstrained and mapped through softplus.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<S = f64> {
    pub config: ModelConfig,
    pub attention: AttentionParams<S>,
    pub raw_beta: S,
    pub raw_sigma: S,
    pub raw_gamma: S,
    pub raw_mu0: Vec<S>,
    pub raw_tod: Vec<S>,
}

impl ModelParams<f64> {
    /// Deterministic initialization: Glorot attention weights, positive
    /// scalars at softplus ~= 0.1, time-of-day multipliers at 1.
    pub fn init(config: ModelConfig, seed: u64) -> Self {
        let mut rng = rng::rng_from_seed(rng::derive_seed(seed, 0x1417));
        let attention = AttentionParams::init(
            config.heads,
            config.value_dim,
            config.hidden,
            config.temporal_only,
            &mut rng,
        );
        let raw01 = math::inv_softplus(0.1);
        ModelParams {
            config,
            attention,
            raw_beta: raw01,
            raw_sigma: raw01,
            raw_gamma: raw01,
            raw_mu0: alloc::vec![raw01; config.sensors],
            raw_tod: alloc::vec![math::inv_softplus(1.0); config.tod_bins],
        }
    }

    pub fn tailup(&self) -> TailupParams {
        TailupParams::from_raw(self.raw_beta, self.raw_sigma)
    }

    /// Set the tail-up scale and range to given positive values. The range
    /// `sigma` lives in meters of stream distance, so leaving it at the
    /// generic 0.1 init underflows `exp(-d/sigma)` on any real network.
    pub fn with_tailup(mut self, beta: f64, sigma: f64) -> Self {
        let t = TailupParams::from_values(beta, sigma);
        self.raw_beta = t.raw_beta;
        self.raw_sigma = t.raw_sigma;
        self
    }

    /// Set every sensor's background so that `softplus(raw) = rate`.
    pub fn with_mu0_rate(mut self, rate: f64) -> Self {
        let raw = math::inv_softplus(rate.max(1e-6));
        for r in self.raw_mu0.iter_mut() {
            *r = raw;
        }
        self
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        self.for_each(|v| out.push(v));
        out
    }

    pub fn from_flat(config: ModelConfig, flat: &[f64]) -> Self {
        let mut it = flat.iter().copied();
        let p = Self::from_iter(config, &mut it);
        assert!(it.next().is_none(), "parameter vector longer than the model");
        p
    }

    /// Register every parameter on `tape` (flattening order) and return the
    /// bound copy whose scalars are tape inputs.
    pub fn bind<'t>(&self, tape: &'t Tape) -> ModelParams<Var<'t>> {
        self.map(|v| tape.input(v))
    }

    /// Named parameter blocks in flattening order (checkpoint layout).
    pub fn blocks(&self) -> Vec<(String, Vec<f64>)> {
        use alloc::format;
        let mut out = Vec::new();
        for (m, h) in self.attention.heads.iter().enumerate() {
            out.push((format!("head{m}.w1"), h.score_net.w1.clone()));
            out.push((format!("head{m}.b1"), h.score_net.b1.clone()));
            out.push((format!("head{m}.w2"), h.score_net.w2.clone()));
            out.push((format!("head{m}.b2"), h.score_net.b2.clone()));
            out.push((format!("head{m}.w3"), h.score_net.w3.clone()));
            out.push((format!("head{m}.b3"), alloc::vec![h.score_net.b3]));
            out.push((format!("head{m}.value_w"), h.value_w.clone()));
        }
        out.push((String::from("out_w"), self.attention.out_w.clone()));
        out.push((String::from("out_b"), alloc::vec![self.attention.out_b]));
        out.push((String::from("raw_beta"), alloc::vec![self.raw_beta]));
        out.push((String::from("raw_sigma"), alloc::vec![self.raw_sigma]));
        out.push((String::from("raw_gamma"), alloc::vec![self.raw_gamma]));
        out.push((String::from("raw_mu0"), self.raw_mu0.clone()));
        out.push((String::from("raw_tod"), self.raw_tod.clone()));
        out
    }
}

impl<S: Copy> ModelParams<S> {
    pub fn param_count(&self) -> usize {
        self.attention.param_count() + 3 + self.raw_mu0.len() + self.raw_tod.len()
    }

    pub fn map<T: Copy>(&self, mut f: impl FnMut(S) -> T) -> ModelParams<T> {
        ModelParams {
            config: self.config,
            attention: self.attention.map(&mut f),
            raw_beta: f(self.raw_beta),
            raw_sigma: f(self.raw_sigma),
            raw_gamma: f(self.raw_gamma),
            raw_mu0: self.raw_mu0.iter().map(|&v| f(v)).collect(),
            raw_tod: self.raw_tod.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn for_each(&self, mut f: impl FnMut(S)) {
        self.attention.for_each(&mut f);
        f(self.raw_beta);
        f(self.raw_sigma);
        f(self.raw_gamma);
        self.raw_mu0.iter().for_each(|&v| f(v));
        self.raw_tod.iter().for_each(|&v| f(v));
    }

    pub fn from_iter(config: ModelConfig, it: &mut impl Iterator<Item = S>) -> Self {
        let in_dim = if config.temporal_only { 1 } else { 2 };
        let attention =
            AttentionParams::from_flat(config.heads, config.value_dim, config.hidden, in_dim, it);
        let raw_beta = it.next().expect("parameter vector too short");
        let raw_sigma = it.next().expect("parameter vector too short");
        let raw_gamma = it.next().expect("parameter vector too short");
        let raw_mu0: Vec<S> = it.by_ref().take(config.sensors).collect();
        assert_eq!(raw_mu0.len(), config.sensors);
        let raw_tod: Vec<S> = it.by_ref().take(config.tod_bins).collect();
        assert_eq!(raw_tod.len(), config.tod_bins);
        ModelParams { config, attention, raw_beta, raw_sigma, raw_gamma, raw_mu0, raw_tod }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ModelError {
    Network(NetworkError),
    SensorOutOfRange { sensor: usize, sensors: usize },
    IncidentsRequireNetwork,
    SpatialModeRequiresNetwork,
}

impl fmt::Display for ModelError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelError::Network(e) => write!(f, "{e}"),
            ModelError::SensorOutOfRange { sensor, sensors } => {
                write!(f, "event sensor {sensor} out of range for K = {sensors}")
            }
            ModelError::IncidentsRequireNetwork => {
                write!(f, "sequence has incidents but no network/weights were supplied")
            }
            ModelError::SpatialModeRequiresNetwork => {
                write!(f, "spatio-temporal score requires a network and weights")
            }
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for ModelError {}

impl From<NetworkError> for ModelError {
    fn from(e: NetworkError) -> Self {
        ModelError::Network(e)
    }
}

/// Precomputed sensor geometry over a network + weights: embedding
/// coordinates and flow relations for every ordered sensor pair. Build once,
/// share across sequences and threads.
pub struct NetContext<'a> {
    pub net: &'a TrafficNetwork,
    pub weights: &'a SegmentWeights,
    sensor_pos: Vec<[f64; 2]>,
    /// `(distance, upstream seg, downstream seg)` per ordered pair (k, k').
    pair_rel: Vec<Option<(f64, u32, u32)>>,
    sensor_locs: Vec<Loc>,
}

impl<'a> NetContext<'a> {
    pub fn new(net: &'a TrafficNetwork, weights: &'a SegmentWeights) -> Self {
        let k = net.sensor_count();
        let sensor_locs: Vec<Loc> = (0..k).map(|i| net.sensor_loc(i)).collect();
        let mut pair_rel = Vec::with_capacity(k * k);
        for a in 0..k {
            for b in 0..k {
                pair_rel.push(flow_rel_of(net, sensor_locs[a], sensor_locs[b]));
            }
        }
        NetContext {
            net,
            weights,
            sensor_pos: net.sensor_positions(),
            pair_rel,
            sensor_locs,
        }
    }

    pub fn sensor_count(&self) -> usize {
        self.sensor_locs.len()
    }

    pub fn sensor_position(&self, k: usize) -> [f64; 2] {
        self.sensor_pos[k]
    }

    fn pair(&self, k_query: usize, k_src: usize) -> Option<(f64, u32, u32)> {
        self.pair_rel[k_query * self.sensor_locs.len() + k_src]
    }

    /// Tail-up correlation between two sensors at time `t` (plain values;
    /// used by exports and the network-Hawkes generator).
    pub fn sensor_alpha(
        &self,
        t: f64,
        k_query: usize,
        k_src: usize,
        p: &TailupParams,
    ) -> Result<f64, NetworkError> {
        match self.pair(k_query, k_src) {
            None => Ok(0.0),
            Some((d, up, down)) => {
                let wu = self.weights.weight_at(t, up)?;
                let wd = self.weights.weight_at(t, down)?;
                Ok(p.beta() * math::exp(-d / p.sigma()) * math::sqrt(wu / wd))
            }
        }
    }
}

fn flow_rel_of(net: &TrafficNetwork, u: Loc, v: Loc) -> Option<(f64, u32, u32)> {
    net.flow_relation(u, v)
        .map(|(d, u_up)| if u_up { (d, u.seg, v.seg) } else { (d, v.seg, u.seg) })
}

/// A parameterized model plus (optionally) the network it lives on.
#[derive(Clone, Copy)]
pub struct Model<'a, S: Scalar = f64> {
    pub params: &'a ModelParams<S>,
    pub spatial: Option<&'a NetContext<'a>>,
}

impl<'a, S: Scalar> Model<'a, S> {
    pub fn new(params: &'a ModelParams<S>, spatial: Option<&'a NetContext<'a>>) -> Self {
        Model { params, spatial }
    }

    /// Build the per-sequence evaluator.
    pub fn eval(&self, seq: &'a EventSequence) -> Result<SeqEval<'a, S>, ModelError> {
        SeqEval::new(self.params, self.spatial, seq)
    }
}

/// Softplus-mapped positives, computed once per evaluation.
struct Mapped<S> {
    beta: S,
    sigma: S,
    gamma: S,
    mu0: Vec<S>,
    tod: Vec<S>,
}

/// Evaluation regime of a query point or integration piece: which events are
/// history, which incidents are active, which weight bin applies.
struct Regime {
    hist_end: usize,
    active_incidents: Vec<usize>,
    bin: i64,
}

/// History substitution: the full prefix, or per-head retained index sets
/// (online attention).
pub enum HistoryView<'h> {
    Prefix(usize),
    PerHead(&'h [Vec<usize>]),
}

/// Maps "number of events that happened" to the history the attention sees.
trait HistSource {
    fn view(&self, hist_end: usize) -> HistoryView<'_>;
}

/// Full history: every past event.
struct FullHist;
impl HistSource for FullHist {
    fn view(&self, hist_end: usize) -> HistoryView<'_> {
        HistoryView::Prefix(hist_end)
    }
}

/// Online attention: per-head retained sets snapshotted after each event.
struct SnapshotHist<'a>(&'a [Vec<Vec<usize>>]);
impl HistSource for SnapshotHist<'_> {
    fn view(&self, hist_end: usize) -> HistoryView<'_> {
        HistoryView::PerHead(&self.0[hist_end])
    }
}

/// Per-sequence evaluator: the bound parameters plus every precomputed table
/// the intensity needs (value embeddings, per-bin tail-up correlations).
pub struct SeqEval<'a, S: Scalar> {
    pub params: ModelParams<S>,
    pub seq: &'a EventSequence,
    spatial: Option<&'a NetContext<'a>>,
    mapped: Mapped<S>,
    /// phi_m(x_j): value embeddings, `[heads][event][value_dim]`.
    phi: Vec<Vec<Vec<S>>>,
    /// Tail-up correlation per (bin slot, query sensor * K + event sensor).
    alpha_events: Vec<Vec<S>>,
    /// Tail-up correlation per (bin slot, query sensor * N_y + incident).
    alpha_incidents: Vec<Vec<S>>,
    /// Bin index of each slot in the alpha tables.
    bin_slots: Vec<i64>,
    zero: S,
}

impl<'a, S: Scalar> SeqEval<'a, S> {
    fn new(
        params: &ModelParams<S>,
        spatial: Option<&'a NetContext<'a>>,
        seq: &'a EventSequence,
    ) -> Result<Self, ModelError> {
        let cfg = params.config;
        let k = cfg.sensors;
        for e in &seq.congestion {
            if e.sensor >= k {
                return Err(ModelError::SensorOutOfRange { sensor: e.sensor, sensors: k });
            }
        }
        if !seq.incidents.is_empty() && spatial.is_none() {
            return Err(ModelError::IncidentsRequireNetwork);
        }
        if !cfg.temporal_only && spatial.is_none() {
            return Err(ModelError::SpatialModeRequiresNetwork);
        }

        let params = params.map(|v| v);
        let mapped = Mapped {
            beta: params.raw_beta.softplus(),
            sigma: params.raw_sigma.softplus(),
            gamma: params.raw_gamma.softplus(),
            mu0: params.raw_mu0.iter().map(|v| v.softplus()).collect(),
            tod: params.raw_tod.iter().map(|v| v.softplus()).collect(),
        };
        let zero = params.raw_beta.lit(0.0);

        // Value embeddings of every event.
        let embeddings: Vec<EventEmbedding> = seq
            .congestion
            .iter()
            .map(|e| {
                let pos = spatial.map(|s| s.sensor_position(e.sensor));
                EventEmbedding::new(e.t, seq.horizon, pos)
            })
            .collect();
        let phi: Vec<Vec<Vec<S>>> = params
            .attention
            .heads
            .iter()
            .map(|h| {
                embeddings
                    .iter()
                    .map(|emb| value_embedding(&h.value_w, emb, cfg.value_dim))
                    .collect()
            })
            .collect();

        // Tail-up correlations for every weight bin touched by [0, T).
        let mut bin_slots: Vec<i64> = Vec::new();
        let mut alpha_events: Vec<Vec<S>> = Vec::new();
        let mut alpha_incidents: Vec<Vec<S>> = Vec::new();
        if let Some(ctx) = spatial {
            let mut incident_rel: Vec<Option<(f64, u32, u32)>> =
                Vec::with_capacity(k * seq.incidents.len());
            for q in 0..k {
                let q_loc = ctx.sensor_locs[q];
                for y in &seq.incidents {
                    let loc = ctx.net.resolve(&y.location)?;
                    incident_rel.push(flow_rel_of(ctx.net, q_loc, loc));
                }
            }
            let first = ctx.weights.bin_of(0.0);
            let last = ctx.weights.bin_of((seq.horizon - 1e-12).max(0.0));
            for bin in first..=last {
                let dist_ratio =
                    |rel: Option<(f64, u32, u32)>| -> Result<Option<(f64, f64)>, ModelError> {
                        match rel {
                            None => Ok(None),
                            Some((d, up, down)) => {
                                let wu = ctx
                                    .weights
                                    .weight(bin, up)
                                    .ok_or(NetworkError::MissingWeightBin { bin })?;
                                let wd = ctx
                                    .weights
                                    .weight(bin, down)
                                    .ok_or(NetworkError::MissingWeightBin { bin })?;
                                Ok(Some((d, math::sqrt(wu / wd))))
                            }
                        }
                    };
                let alpha_of = |inp: Option<(f64, f64)>| -> S {
                    match inp {
                        None => zero,
                        Some((d, r)) => {
                            let c = (-(zero.lit(d) / mapped.sigma)).exp() * mapped.beta;
                            c * zero.lit(r)
                        }
                    }
                };
                let mut ev_row = Vec::new();
                if !cfg.temporal_only {
                    ev_row.reserve(k * k);
                    for q in 0..k {
                        for src in 0..k {
                            ev_row.push(alpha_of(dist_ratio(ctx.pair(q, src))?));
                        }
                    }
                }
                let mut inc_row = Vec::with_capacity(incident_rel.len());
                for rel in &incident_rel {
                    inc_row.push(alpha_of(dist_ratio(*rel)?));
                }
                bin_slots.push(bin);
                alpha_events.push(ev_row);
                alpha_incidents.push(inc_row);
            }
        }

        Ok(SeqEval {
            params,
            seq,
            spatial,
            mapped,
            phi,
            alpha_events,
            alpha_incidents,
            bin_slots,
            zero,
        })
    }

    fn sensors(&self) -> usize {
        self.params.config.sensors
    }

    fn bin_slot(&self, bin: i64) -> usize {
        match self.bin_slots.first() {
            Some(&first) => {
                let slot = (bin - first) as usize;
                assert!(slot < self.bin_slots.len(), "weight bin {bin} outside the horizon");
                slot
            }
            None => 0,
        }
    }

    fn bin_of(&self, t: f64) -> i64 {
        self.spatial.map(|s| s.weights.bin_of(t)).unwrap_or(0)
    }

    fn regime_at(&self, t: f64) -> Regime {
        Regime {
            hist_end: self.seq.congestion.partition_point(|e| e.t < t),
            active_incidents: self.incidents_active_at(t),
            bin: self.bin_of(t),
        }
    }

    fn incidents_active_at(&self, t: f64) -> Vec<usize> {
        self.seq
            .incidents
            .iter()
            .enumerate()
            .filter(|(_, y)| y.t <= t && t < y.t + y.z)
            .map(|(j, _)| j)
            .collect()
    }

    /// Regime for an integration piece `(a, b)` free of interior jumps.
    fn regime_for_piece(&self, a: f64, b: f64) -> Regime {
        let mid = 0.5 * (a + b);
        Regime {
            hist_end: self.seq.congestion.partition_point(|e| e.t <= a),
            active_incidents: self.incidents_active_at(mid),
            bin: self.bin_of(mid),
        }
    }

    /// Background `mu0(t, k)`: softplus of the per-sensor raw, optionally
    /// times the piecewise-constant time-of-day multiplier.
    pub fn mu0_at(&self, t: f64, k: usize) -> S {
        let base = self.mapped.mu0[k];
        let cfg = &self.params.config;
        if cfg.tod_bins == 0 {
            return base;
        }
        let period = cfg.tod_period_h;
        let frac = ((t % period) + period) % period / period;
        let bin = ((frac * cfg.tod_bins as f64) as usize).min(cfg.tod_bins - 1);
        base * self.mapped.tod[bin]
    }

    /// Exogenous promotion `mu1(t, k)` under the incidents active at `t`.
    pub fn mu1_at(&self, t: f64, k: usize) -> S {
        self.mu1_in(k, &self.regime_at(t))
    }

    fn mu1_in(&self, k: usize, reg: &Regime) -> S {
        if reg.active_incidents.is_empty() {
            return self.zero;
        }
        let slot = self.bin_slot(reg.bin);
        let n_inc = self.seq.incidents.len();
        let mut acc = self.zero;
        for &j in &reg.active_incidents {
            acc = acc + self.alpha_incidents[slot][k * n_inc + j];
        }
        acc * self.mapped.gamma
    }

    /// Endogenous self-excitation at `(t, k)` for a given history view.
    fn lambda_prime_in(&self, t: f64, k: usize, reg: &Regime, hist: &HistoryView<'_>) -> S {
        let m = self.params.config.heads;
        let temporal = self.params.config.temporal_only;
        let slot = if temporal { 0 } else { self.bin_slot(reg.bin) };
        let kk = self.sensors();
        let mut raw_scores: Vec<Vec<S>> = Vec::with_capacity(m);
        let mut values: Vec<Vec<Vec<S>>> = Vec::with_capacity(m);
        for mi in 0..m {
            let head = &self.params.attention.heads[mi];
            let iter: Box<dyn Iterator<Item = usize> + '_> = match hist {
                HistoryView::Prefix(n) => Box::new(0..*n),
                HistoryView::PerHead(sets) => Box::new(sets[mi].iter().copied()),
            };
            let mut rs = Vec::new();
            let mut vs = Vec::new();
            for j in iter {
                let e = &self.seq.congestion[j];
                debug_assert!(e.t <= t);
                let dt = self.zero.lit(t - e.t);
                let alpha = if temporal {
                    None
                } else {
                    Some(self.alpha_events[slot][k * kk + e.sensor])
                };
                rs.push(score(&head.score_net, dt, alpha));
                vs.push(self.phi[mi][j].clone());
            }
            raw_scores.push(rs);
            values.push(vs);
        }
        attention::self_excitation(&self.params.attention, &raw_scores, &values)
    }

    /// Intensity components `(mu0, mu1, lambda')` at `(t, k)` with the
    /// history being exactly the events before `t`.
    pub fn components_at(&self, t: f64, k: usize) -> (S, S, S) {
        let reg = self.regime_at(t);
        let hist = HistoryView::Prefix(reg.hist_end);
        (
            self.mu0_at(t, k),
            self.mu1_in(k, &reg),
            self.lambda_prime_in(t, k, &reg, &hist),
        )
    }

    /// `lambda*(t, k)` against the events strictly before `t`.
    pub fn lambda_at(&self, t: f64, k: usize) -> S {
        let (a, b, c) = self.components_at(t, k);
        a + b + c
    }

    /// `lambda*(t, k)` with per-head retained sets substituted for the
    /// history (online attention).
    pub fn lambda_with_history(&self, t: f64, k: usize, sets: &[Vec<usize>]) -> S {
        let reg = self.regime_at(t);
        let hist = HistoryView::PerHead(sets);
        self.mu0_at(t, k) + self.mu1_in(k, &reg) + self.lambda_prime_in(t, k, &reg, &hist)
    }

    /// Jump locations of the integrand inside `(t0, t1)`, bounds included.
    fn split_points(&self, t0: f64, t1: f64, with_events: bool) -> Vec<f64> {
        let mut pts = alloc::vec![t0, t1];
        if with_events {
            for e in &self.seq.congestion {
                if e.t > t0 && e.t < t1 {
                    pts.push(e.t);
                }
            }
        }
        for y in &self.seq.incidents {
            for b in [y.t, y.t + y.z] {
                if b > t0 && b < t1 {
                    pts.push(b);
                }
            }
        }
        if self.bin_slots.len() > 1 {
            if let Some(ctx) = self.spatial {
                let h = ctx.weights.bin_hours();
                let mut b = (math::floor(t0 / h) + 1.0) * h;
                while b < t1 {
                    pts.push(b);
                    b += h;
                }
            }
        }
        let cfg = &self.params.config;
        if cfg.tod_bins > 0 {
            let h = cfg.tod_period_h / cfg.tod_bins as f64;
            let mut b = (math::floor(t0 / h) + 1.0) * h;
            while b < t1 {
                pts.push(b);
                b += h;
            }
        }
        pts.sort_by(f64::total_cmp);
        pts.dedup();
        pts
    }

    /// `int_{t0}^{t1} lambda*(tau, k) dtau` by piecewise trapezoid with
    /// `n_sub` subdivisions per piece.
    pub fn compensator(&self, t0: f64, t1: f64, k: usize, n_sub: usize) -> S {
        self.compensator_channels(t0, t1, n_sub, &[k]).pop().expect("one channel")
    }

    /// Compensators for several sensors in one sweep (pieces shared; in
    /// temporal-only mode the self-excitation is shared across sensors too).
    pub fn compensator_channels(&self, t0: f64, t1: f64, n_sub: usize, ks: &[usize]) -> Vec<S> {
        self.compensator_channels_with(t0, t1, n_sub, ks, &FullHist)
    }

    fn compensator_channels_with(
        &self,
        t0: f64,
        t1: f64,
        n_sub: usize,
        ks: &[usize],
        hist_src: &dyn HistSource,
    ) -> Vec<S> {
        assert!(t0 < t1 && t1 <= self.seq.horizon + 1e-9, "bad integration bounds");
        assert!(n_sub >= 1);
        let pts = self.split_points(t0, t1, true);
        let temporal = self.params.config.temporal_only;
        let mut totals = alloc::vec![self.zero; ks.len()];
        for w in pts.windows(2) {
            let (a, b) = (w[0], w[1]);
            let reg = self.regime_for_piece(a, b);
            let hist = hist_src.view(reg.hist_end);
            let h = (b - a) / n_sub as f64;
            for q in 0..=n_sub {
                let tau = if q == n_sub { b } else { a + q as f64 * h };
                let weight = if q == 0 || q == n_sub { 0.5 * h } else { h };
                let lp_shared = if temporal {
                    Some(self.lambda_prime_in(tau, 0, &reg, &hist))
                } else {
                    None
                };
                for (ki, &k) in ks.iter().enumerate() {
                    let lp = match lp_shared {
                        Some(v) => v,
                        None => self.lambda_prime_in(tau, k, &reg, &hist),
                    };
                    let lam = self.mu0_at(tau, k) + self.mu1_in(k, &reg) + lp;
                    totals[ki] = self.zero.lit(weight).mul_add(lam, totals[ki]);
                }
            }
        }
        totals
    }

    /// Sequence log-likelihood: sum of log-intensities at the events minus
    /// the summed per-sensor compensators over `[0, T)`.
    pub fn log_likelihood(&self, n_sub: usize) -> S {
        self.log_likelihood_with(n_sub, &FullHist)
    }

    /// Log-likelihood with online attention: for any query with `i` observed
    /// events, the history is `snapshots[i]` (per-head retained sets, as
    /// produced by the online selection).
    pub fn log_likelihood_online(&self, n_sub: usize, snapshots: &[Vec<Vec<usize>>]) -> S {
        assert_eq!(snapshots.len(), self.seq.congestion.len() + 1);
        self.log_likelihood_with(n_sub, &SnapshotHist(snapshots))
    }

    fn log_likelihood_with(&self, n_sub: usize, hist_src: &dyn HistSource) -> S {
        let mut ll = self.zero;
        for e in &self.seq.congestion {
            let reg = self.regime_at(e.t);
            let hist = hist_src.view(reg.hist_end);
            let lam = self.mu0_at(e.t, e.sensor)
                + self.mu1_in(e.sensor, &reg)
                + self.lambda_prime_in(e.t, e.sensor, &reg, &hist);
            ll = ll + lam.ln();
        }
        let ks: Vec<usize> = (0..self.sensors()).collect();
        for c in self.compensator_channels_with(0.0, self.seq.horizon, n_sub, &ks, hist_src) {
            ll = ll - c;
        }
        ll
    }

    /// Conditional density `f*(t, k)` of the next event given the first
    /// `prefix_len` events: `lambda*(t,k) exp(-int_{t_n}^t lambda*(tau,k) dtau)`
    /// with the congestion history frozen at the prefix.
    pub fn conditional_density(&self, prefix_len: usize, t: f64, k: usize, n_sub: usize) -> S {
        let t_n = self.prefix_time(prefix_len);
        debug_assert!(t >= t_n);
        let lam = self.lambda_frozen(prefix_len, t, k);
        if t == t_n {
            return lam;
        }
        let integral = self.frozen_compensator(prefix_len, t_n, t, k, n_sub);
        lam * (-integral).exp()
    }

    pub fn prefix_time(&self, prefix_len: usize) -> f64 {
        if prefix_len == 0 {
            0.0
        } else {
            self.seq.congestion[prefix_len - 1].t
        }
    }

    /// `lambda*(t, k)` with the congestion history frozen at a prefix
    /// (incident activity still follows the data at `t`).
    pub fn lambda_frozen(&self, prefix_len: usize, t: f64, k: usize) -> S {
        let reg = Regime {
            hist_end: prefix_len,
            active_incidents: self.incidents_active_at(t),
            bin: self.bin_of(t),
        };
        let hist = HistoryView::Prefix(prefix_len);
        self.mu0_at(t, k) + self.mu1_in(k, &reg) + self.lambda_prime_in(t, k, &reg, &hist)
    }

    fn frozen_compensator(&self, prefix_len: usize, t0: f64, t1: f64, k: usize, n_sub: usize) -> S {
        if t1 <= t0 {
            return self.zero;
        }
        let pts = self.split_points(t0, t1, false);
        let mut total = self.zero;
        for w in pts.windows(2) {
            let (a, b) = (w[0], w[1]);
            let mid = 0.5 * (a + b);
            let reg = Regime {
                hist_end: prefix_len,
                active_incidents: self.incidents_active_at(mid),
                bin: self.bin_of(mid),
            };
            let hist = HistoryView::Prefix(prefix_len);
            let h = (b - a) / n_sub as f64;
            for q in 0..=n_sub {
                let tau = if q == n_sub { b } else { a + q as f64 * h };
                let lam = self.mu0_at(tau, k)
                    + self.mu1_in(k, &reg)
                    + self.lambda_prime_in(tau, k, &reg, &hist);
                let weight = if q == 0 || q == n_sub { 0.5 * h } else { h };
                total = self.zero.lit(weight).mul_add(lam, total);
            }
        }
        total
    }
}

/// Outcome of [`SeqEval::predict_next`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prediction {
    pub t_hat: f64,
    pub sensor_hat: usize,
    /// `int_{t_n}^{T} sum_k f*(tau, k) dtau` (diagnostic; < 1 when density
    /// mass escapes past the horizon).
    pub mass: f64,
}

impl<'a> SeqEval<'a, f64> {
    /// Raw score of event `i` against earlier event `j` in one head:
    /// `psi_m(t_i - t_j, alpha_{t_i}(r_{s_i}, r_{s_j}))`.
    pub fn event_score(&self, head: usize, i: usize, j: usize) -> f64 {
        debug_assert!(j < i);
        let e = &self.seq.congestion[i];
        let p = &self.seq.congestion[j];
        let alpha = if self.params.config.temporal_only {
            None
        } else {
            let slot = self.bin_slot(self.bin_of(e.t));
            Some(self.alpha_events[slot][e.sensor * self.sensors() + p.sensor])
        };
        score(&self.params.attention.heads[head].score_net, e.t - p.t, alpha)
    }

    /// Predict the next event after the first `prefix_len` events:
    /// `t_hat = int tau sum_k f*(tau,k) dtau`,
    /// `s_hat = argmax_k int f*(tau,k) dtau` (ties to the lowest index),
    /// trapezoid on `grid` intervals over `[t_n, T]`. `normalize` divides
    /// the time integral by the total mass (off by default: the printed,
    /// unnormalized estimator).
    pub fn predict_next(&self, prefix_len: usize, grid: usize, normalize: bool) -> Prediction {
        assert!(grid >= 2);
        let t_n = self.prefix_time(prefix_len);
        let t_end = self.seq.horizon;
        let k = self.sensors();
        let h = (t_end - t_n) / grid as f64;
        let mut cum = alloc::vec![0.0f64; k];
        let mut prev_lam = alloc::vec![0.0f64; k];
        let mut prev_f = alloc::vec![0.0f64; k];
        let mut mass_k = alloc::vec![0.0f64; k];
        let mut t_num = 0.0f64;
        let mut prev_tf = 0.0f64;
        for q in 0..=grid {
            let tau = if q == grid { t_end } else { t_n + q as f64 * h };
            let mut f_sum = 0.0;
            for ki in 0..k {
                let lam = self.lambda_frozen(prefix_len, tau, ki);
                if q > 0 {
                    cum[ki] += 0.5 * (prev_lam[ki] + lam) * h;
                }
                prev_lam[ki] = lam;
                let f = lam * math::exp(-cum[ki]);
                if q > 0 {
                    mass_k[ki] += 0.5 * (prev_f[ki] + f) * h;
                }
                prev_f[ki] = f;
                f_sum += f;
            }
            let tf = tau * f_sum;
            if q > 0 {
                t_num += 0.5 * (prev_tf + tf) * h;
            }
            prev_tf = tf;
        }
        let mass: f64 = mass_k.iter().sum();
        let mut sensor_hat = 0;
        for ki in 1..k {
            if mass_k[ki] > mass_k[sensor_hat] {
                sensor_hat = ki;
            }
        }
        let t_hat = if normalize && mass > 0.0 { t_num / mass } else { t_num };
        Prediction { t_hat, sensor_hat, mass }
    }
}

/// Per-sensor intensity trace on a uniform grid with the component
/// breakdown (the `export-intensity` payload).
#[derive(Clone, Debug)]
pub struct IntensityTrace {
    pub sensor: usize,
    pub times: Vec<f64>,
    pub mu0: Vec<f64>,
    pub mu1: Vec<f64>,
    pub lambda_prime: Vec<f64>,
    pub lambda_star: Vec<f64>,
}

/// Evaluate the model on `grid` points over `[0, T)` for every sensor.
pub fn intensity_trace(
    model: &Model<'_, f64>,
    seq: &EventSequence,
    grid: usize,
) -> Result<Vec<IntensityTrace>, ModelError> {
    assert!(grid >= 2);
    let ev = model.eval(seq)?;
    let k = model.params.config.sensors;
    let step = seq.horizon / grid as f64;
    let times: Vec<f64> = (0..grid).map(|q| q as f64 * step).collect();
    let mut out = Vec::with_capacity(k);
    for ki in 0..k {
        let mut tr = IntensityTrace {
            sensor: ki,
            times: times.clone(),
            mu0: Vec::with_capacity(grid),
            mu1: Vec::with_capacity(grid),
            lambda_prime: Vec::with_capacity(grid),
            lambda_star: Vec::with_capacity(grid),
        };
        for &t in &times {
            let (m0, m1, lp) = ev.components_at(t, ki);
            tr.mu0.push(m0);
            tr.mu1.push(m1);
            tr.lambda_prime.push(lp);
            tr.lambda_star.push(m0 + m1 + lp);
        }
        out.push(tr);
    }
    Ok(out)
}

/// Raw pairwise scores of each event against every earlier one, per head:
/// rows `(i, j, scores)` for all `j < i` — `n(n-1)/2` rows (the
/// `export-scores` payload).
pub fn score_matrix(
    model: &Model<'_, f64>,
    seq: &EventSequence,
) -> Result<Vec<(usize, usize, Vec<f64>)>, ModelError> {
    let ev = model.eval(seq)?;
    let m = model.params.config.heads;
    let kk = model.params.config.sensors;
    let temporal = model.params.config.temporal_only;
    let mut rows = Vec::new();
    for (i, e) in seq.congestion.iter().enumerate() {
        let slot = if temporal { 0 } else { ev.bin_slot(ev.bin_of(e.t)) };
        for (j, p) in seq.congestion.iter().enumerate().take(i) {
            let mut per_head = Vec::with_capacity(m);
            for mi in 0..m {
                let alpha = if temporal {
                    None
                } else {
                    Some(ev.alpha_events[slot][e.sensor * kk + p.sensor])
                };
                per_head.push(score(&ev.params.attention.heads[mi].score_net, e.t - p.t, alpha));
            }
            rows.push((i, j, per_head));
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::CongestionEvent;

    pub(crate) fn constant_model(rate: f64, k: usize) -> ModelParams {
        // attention output weights zero and output bias very negative: the
        // self-excitation is softplus(-60) ~ 1e-26, numerically nothing.
        let config = ModelConfig {
            sensors: k,
            heads: 1,
            value_dim: 2,
            hidden: 4,
            temporal_only: true,
            ..ModelConfig::default()
        };
        let mut p = ModelParams::init(config, 1);
        for w in p.attention.out_w.iter_mut() {
            *w = 0.0;
        }
        p.attention.out_b = -60.0;
        for r in p.raw_mu0.iter_mut() {
            *r = math::inv_softplus(rate);
        }
        p
    }

    fn seq_with(times: &[f64], horizon: f64) -> EventSequence {
        EventSequence {
            horizon,
            congestion: times.iter().map(|&t| CongestionEvent { t, sensor: 0 }).collect(),
            incidents: alloc::vec![],
        }
    }

    #[test]
    fn empty_history_intensity_is_mu0() {
        let p = constant_model(0.7, 1);
        let model = Model::new(&p, None);
        let seq = seq_with(&[], 10.0);
        let ev = model.eval(&seq).unwrap();
        assert!((ev.lambda_at(3.0, 0) - 0.7).abs() < 1e-12);
    }

    #[test]
    fn components_sum_to_lambda() {
        let config = ModelConfig {
            sensors: 1,
            heads: 2,
            value_dim: 3,
            hidden: 6,
            temporal_only: true,
            ..ModelConfig::default()
        };
        let p = ModelParams::init(config, 7);
        let model = Model::new(&p, None);
        let seq = seq_with(&[0.2, 0.5, 1.1], 4.0);
        let ev = model.eval(&seq).unwrap();
        for t in [0.1, 0.3, 0.9, 3.7] {
            let (m0, m1, lp) = ev.components_at(t, 0);
            let lam = ev.lambda_at(t, 0);
            assert!((lam - (m0 + m1 + lp)).abs() < 1e-15);
            assert!(lam > 0.0);
        }
    }

    #[test]
    fn constant_rate_closed_form_likelihood() {
        // lambda = 2, K = 1, T = 1, events {0.3, 0.7}: 2 ln 2 - 2
        let p = constant_model(2.0, 1);
        let model = Model::new(&p, None);
        let seq = seq_with(&[0.3, 0.7], 1.0);
        let ev = model.eval(&seq).unwrap();
        let ll = ev.log_likelihood(10);
        let expect = 2.0 * math::ln(2.0) - 2.0;
        assert!((ll - expect).abs() < 1e-9, "{ll} vs {expect}");
        assert!((ll + 0.613_705_638_880_109_5).abs() < 1e-9);
    }

    #[test]
    fn no_events_likelihood_is_minus_lambda_t_k() {
        let k = 3;
        let p = constant_model(1.3, k);
        let model = Model::new(&p, None);
        let seq = seq_with(&[], 2.0);
        let ev = model.eval(&seq).unwrap();
        let ll = ev.log_likelihood(5);
        assert!((ll - (-1.3 * 2.0 * k as f64)).abs() < 1e-9);
    }

    #[test]
    fn compensator_exact_for_constant_intensity() {
        let p = constant_model(2.0, 1);
        let model = Model::new(&p, None);
        let seq = seq_with(&[], 1.0);
        let ev = model.eval(&seq).unwrap();
        assert!((ev.compensator(0.0, 1.0, 0, 1) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn compensator_order_two_convergence() {
        // smooth lambda' from a real attention model: halving the step
        // shrinks the remaining error by roughly 4x
        let config = ModelConfig {
            sensors: 1,
            heads: 2,
            value_dim: 4,
            hidden: 8,
            temporal_only: true,
            ..ModelConfig::default()
        };
        let p = ModelParams::init(config, 3);
        let model = Model::new(&p, None);
        let seq = seq_with(&[0.11, 0.35, 0.52], 1.0);
        let ev = model.eval(&seq).unwrap();
        let exact: f64 = ev.compensator(0.0, 1.0, 0, 256);
        let e1 = (ev.compensator(0.0, 1.0, 0, 4) - exact).abs();
        let e2 = (ev.compensator(0.0, 1.0, 0, 8) - exact).abs();
        assert!(e2 < e1 / 2.5, "no order-2 convergence: {e1} -> {e2}");
    }

    #[test]
    fn conditional_density_is_exponential_for_constant_rate() {
        let lam = 1.7;
        let p = constant_model(lam, 1);
        let model = Model::new(&p, None);
        let seq = seq_with(&[0.4], 40.0);
        let ev = model.eval(&seq).unwrap();
        for dt in [0.0, 0.3, 1.2] {
            let f: f64 = ev.conditional_density(1, 0.4 + dt, 0, 8);
            let expect = lam * math::exp(-lam * dt);
            assert!((f - expect).abs() < 1e-9, "dt={dt}: {f} vs {expect}");
        }
        let f0: f64 = ev.conditional_density(1, 0.4, 0, 8);
        assert!((f0 - lam).abs() < 1e-12);
    }

    #[test]
    fn conditional_density_integrates_to_one() {
        let lam = 2.5;
        let p = constant_model(lam, 1);
        let model = Model::new(&p, None);
        let seq = seq_with(&[0.1], 30.0);
        let ev = model.eval(&seq).unwrap();
        let n = 6000;
        let h = (30.0 - 0.1) / n as f64;
        let mut total = 0.0;
        let mut prev: f64 = ev.conditional_density(1, 0.1, 0, 2);
        for q in 1..=n {
            let t = 0.1 + q as f64 * h;
            let f: f64 = ev.conditional_density(1, t, 0, 2);
            total += 0.5 * (prev + f) * h;
            prev = f;
        }
        assert!((total - 1.0).abs() < 5e-5, "mass {total}");
    }

    #[test]
    fn predict_constant_rate_mean_is_inverse_rate() {
        let lam = 4.0;
        let p = constant_model(lam, 1);
        let model = Model::new(&p, None);
        let seq = seq_with(&[1.0], 20.0);
        let ev = model.eval(&seq).unwrap();
        let pred = ev.predict_next(1, 4000, false);
        assert_eq!(pred.sensor_hat, 0);
        assert!((pred.t_hat - (1.0 + 1.0 / lam)).abs() < 2e-3, "t_hat = {}", pred.t_hat);
        assert!((pred.mass - 1.0).abs() < 1e-4);
    }

    #[test]
    fn prediction_tie_breaks_to_lowest_sensor() {
        let p = constant_model(1.0, 4);
        let model = Model::new(&p, None);
        let seq = seq_with(&[], 5.0);
        let ev = model.eval(&seq).unwrap();
        assert_eq!(ev.predict_next(0, 500, false).sensor_hat, 0);
    }

    #[test]
    fn trace_components_are_consistent() {
        let config = ModelConfig {
            sensors: 1,
            heads: 1,
            value_dim: 2,
            hidden: 4,
            temporal_only: true,
            ..ModelConfig::default()
        };
        let p = ModelParams::init(config, 11);
        let model = Model::new(&p, None);
        let seq = seq_with(&[0.5, 1.5], 3.0);
        let traces = intensity_trace(&model, &seq, 16).unwrap();
        assert_eq!(traces.len(), 1);
        let tr = &traces[0];
        for i in 0..tr.times.len() {
            let sum = tr.mu0[i] + tr.mu1[i] + tr.lambda_prime[i];
            assert!((tr.lambda_star[i] - sum).abs() < 1e-14);
            assert!(tr.lambda_star[i] > 0.0);
        }
    }

    #[test]
    fn score_matrix_has_lower_triangle_size() {
        let config = ModelConfig {
            sensors: 1,
            heads: 2,
            value_dim: 2,
            hidden: 4,
            temporal_only: true,
            ..ModelConfig::default()
        };
        let p = ModelParams::init(config, 2);
        let model = Model::new(&p, None);
        let seq = seq_with(&[0.1, 0.4, 0.6, 0.9], 1.0);
        let rows = score_matrix(&model, &seq).unwrap();
        assert_eq!(rows.len(), 4 * 3 / 2);
        for (i, j, scores) in &rows {
            assert!(j < i);
            assert_eq!(scores.len(), 2);
            assert!(scores.iter().all(|&s| s > 0.0));
        }
    }

    #[test]
    fn flatten_round_trip() {
        let config = ModelConfig {
            sensors: 3,
            heads: 2,
            value_dim: 4,
            hidden: 6,
            temporal_only: true,
            tod_bins: 4,
            ..ModelConfig::default()
        };
        let p = ModelParams::init(config, 5);
        let flat = p.flatten();
        assert_eq!(flat.len(), p.param_count());
        let q = ModelParams::from_flat(config, &flat);
        assert_eq!(p, q);
    }

    #[test]
    fn incidents_without_network_are_rejected() {
        let p = constant_model(1.0, 1);
        let model = Model::new(&p, None);
        let mut seq = seq_with(&[], 1.0);
        seq.incidents.push(crate::events::IncidentEvent {
            t: 0.1,
            location: crate::network::NetworkLocation::new("L1", 0.0),
            z: 0.5,
        });
        assert!(matches!(model.eval(&seq), Err(ModelError::IncidentsRequireNetwork)));
    }

    #[test]
    fn background_time_of_day_multiplier() {
        let config = ModelConfig {
            sensors: 1,
            heads: 1,
            value_dim: 2,
            hidden: 4,
            temporal_only: true,
            tod_bins: 2,
            tod_period_h: 24.0,
            ..ModelConfig::default()
        };
        let mut p = ModelParams::init(config, 1);
        p.raw_mu0[0] = math::inv_softplus(0.1);
        p.raw_tod = alloc::vec![math::inv_softplus(2.0), math::inv_softplus(1.0)];
        let model = Model::new(&p, None);
        let seq = seq_with(&[], 24.0);
        let ev = model.eval(&seq).unwrap();
        // first half of the day: multiplier 2 -> 0.2; second half: 0.1
        assert!((ev.mu0_at(3.0, 0) - 0.2).abs() < 1e-12);
        assert!((ev.mu0_at(15.0, 0) - 0.1).abs() < 1e-12);
    }
}
