//! Score function, normalized attention weights, multi-head aggregation, and
//! the endogenous self-excitation.
//!
//! Normalization follows the positive-score form: weights are
//! `v_i / sum_j v_j` over the history, no exponentiation. The first event has
//! no history and contributes no self-excitation.

use alloc::vec::Vec;
use rand::Rng;

use crate::autodiff::{mlp_forward, MlpParams, Scalar};
use crate::math;

/// The d = 3 event embedding: time normalized by the horizon plus the two
/// normalized planar coordinates of the event's sensor (zeros when no
/// network geometry is available).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EventEmbedding(pub [f64; 3]);

impl EventEmbedding {
    pub const DIM: usize = 3;

    pub fn new(t: f64, horizon: f64, sensor_pos: Option<[f64; 2]>) -> Self {
        let p = sensor_pos.unwrap_or([0.0, 0.0]);
        EventEmbedding([t / horizon, p[0], p[1]])
    }
}

/// One attention head: its score network and its 3 x p value matrix
/// (row-major, one row per embedding component).
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionHead<S = f64> {
    pub score_net: MlpParams<S>,
    pub value_w: Vec<S>,
}

/// All M heads plus the output layer of the self-excitation.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams<S = f64> {
    /// Value-embedding dimension p.
    pub value_dim: usize,
    pub heads: Vec<AttentionHead<S>>,
    /// Output weights, length M * p.
    pub out_w: Vec<S>,
    pub out_b: S,
}

impl AttentionParams<f64> {
    /// M heads with score networks of the given hidden width. Score input is
    /// `(dt, alpha)`, or `dt` alone in temporal-only mode.
    pub fn init(
        heads: usize,
        value_dim: usize,
        hidden: usize,
        temporal_only: bool,
        rng: &mut impl Rng,
    ) -> Self {
        assert!(heads >= 1 && value_dim >= 1);
        let in_dim = if temporal_only { 1 } else { 2 };
        let glorot = |fan_in: usize, fan_out: usize, n: usize, rng: &mut dyn rand::RngCore| {
            let a = math::sqrt(6.0 / (fan_in + fan_out) as f64);
            (0..n).map(|_| rng.random_range(-a..a)).collect::<Vec<f64>>()
        };
        let head_params: Vec<AttentionHead> = (0..heads)
            .map(|_| AttentionHead {
                score_net: MlpParams::init(in_dim, hidden, rng),
                value_w: glorot(EventEmbedding::DIM, value_dim, EventEmbedding::DIM * value_dim, rng),
            })
            .collect();
        AttentionParams {
            value_dim,
            out_w: glorot(heads * value_dim, 1, heads * value_dim, rng),
            out_b: 0.0,
            heads: head_params,
        }
    }
}

impl<S: Copy> AttentionParams<S> {
    pub fn head_count(&self) -> usize {
        self.heads.len()
    }

    pub fn score_in_dim(&self) -> usize {
        self.heads[0].score_net.in_dim
    }

    pub fn param_count(&self) -> usize {
        let per_head: usize = self
            .heads
            .iter()
            .map(|h| h.score_net.param_count() + h.value_w.len())
            .sum();
        per_head + self.out_w.len() + 1
    }

    pub fn map<T: Copy>(&self, mut f: impl FnMut(S) -> T) -> AttentionParams<T> {
        AttentionParams {
            value_dim: self.value_dim,
            heads: self
                .heads
                .iter()
                .map(|h| AttentionHead {
                    score_net: h.score_net.map(&mut f),
                    value_w: h.value_w.iter().map(|&v| f(v)).collect(),
                })
                .collect(),
            out_w: self.out_w.iter().map(|&v| f(v)).collect(),
            out_b: f(self.out_b),
        }
    }

    pub fn for_each(&self, mut f: impl FnMut(S)) {
        for h in &self.heads {
            h.score_net.for_each(&mut f);
            h.value_w.iter().for_each(|&v| f(v));
        }
        self.out_w.iter().for_each(|&v| f(v));
        f(self.out_b);
    }

    pub fn from_flat(
        heads: usize,
        value_dim: usize,
        hidden: usize,
        in_dim: usize,
        it: &mut impl Iterator<Item = S>,
    ) -> Self {
        let head_params: Vec<AttentionHead<S>> = (0..heads)
            .map(|_| {
                let score_net = MlpParams::from_flat(in_dim, hidden, it);
                let value_w = it.by_ref().take(EventEmbedding::DIM * value_dim).collect::<Vec<S>>();
                assert_eq!(value_w.len(), EventEmbedding::DIM * value_dim);
                AttentionHead { score_net, value_w }
            })
            .collect();
        let out_w: Vec<S> = it.by_ref().take(heads * value_dim).collect();
        assert_eq!(out_w.len(), heads * value_dim);
        AttentionParams {
            value_dim,
            heads: head_params,
            out_w,
            out_b: it.next().expect("missing output bias"),
        }
    }
}

/// Importance score of a query event against a past event: the head's score
/// network applied to `(dt, alpha)`, or `dt` alone in temporal-only mode.
/// Strictly positive. `dt` must be nonnegative: event pairs always have
/// `t' < t`, and integrand evaluation at the right limit of an event time
/// reaches `dt = 0` exactly.
pub fn score<S: Scalar>(score_net: &MlpParams<S>, dt: S, alpha: Option<S>) -> S {
    debug_assert!(dt.value() >= 0.0, "score requires t' <= t (got dt = {})", dt.value());
    match alpha {
        None => {
            debug_assert_eq!(score_net.in_dim, 1);
            mlp_forward(score_net, &[dt])
        }
        Some(a) => {
            debug_assert_eq!(score_net.in_dim, 2);
            mlp_forward(score_net, &[dt, a])
        }
    }
}

/// Normalize positive raw scores into weights summing to one.
/// The caller must handle the empty history before calling.
pub fn normalize_scores<S: Scalar>(raw: &[S]) -> Vec<S> {
    assert!(!raw.is_empty(), "normalize_scores on empty history");
    let mut sum = raw[0];
    for &v in &raw[1..] {
        sum = sum + v;
    }
    raw.iter().map(|&v| v / sum).collect()
}

/// Value embedding `phi_m(x) = emb^T W_m^v` of one event.
pub fn value_embedding<S: Scalar>(value_w: &[S], emb: &EventEmbedding, value_dim: usize) -> Vec<S> {
    assert_eq!(value_w.len(), EventEmbedding::DIM * value_dim);
    let mut out = Vec::with_capacity(value_dim);
    for c in 0..value_dim {
        let mut acc = value_w[c].lit(0.0);
        for r in 0..EventEmbedding::DIM {
            let e = acc.lit(emb.0[r]);
            acc = e.mul_add(value_w[r * value_dim + c], acc);
        }
        out.push(acc);
    }
    out
}

/// One attention head's output: the score-weighted sum of value embeddings.
/// Empty history yields the zero vector.
pub fn attention_head<S: Scalar>(
    raw_scores: &[S],
    values: &[Vec<S>],
    value_dim: usize,
    zero: S,
) -> Vec<S> {
    assert_eq!(raw_scores.len(), values.len());
    if raw_scores.is_empty() {
        return alloc::vec![zero.lit(0.0); value_dim];
    }
    let weights = normalize_scores(raw_scores);
    let mut out = alloc::vec![zero.lit(0.0); value_dim];
    for (w, phi) in weights.iter().zip(values) {
        debug_assert_eq!(phi.len(), value_dim);
        for c in 0..value_dim {
            out[c] = w.mul_add(phi[c], out[c]);
        }
    }
    out
}

/// Endogenous self-excitation: `softplus(concat(h_1..h_M)^T W + b)` for a
/// non-empty history, exactly zero for an empty one.
pub fn self_excitation<S: Scalar>(
    params: &AttentionParams<S>,
    raw_scores_per_head: &[Vec<S>],
    values_per_head: &[Vec<Vec<S>>],
) -> S {
    let m = params.head_count();
    assert_eq!(raw_scores_per_head.len(), m);
    assert_eq!(values_per_head.len(), m);
    if raw_scores_per_head.iter().all(|s| s.is_empty()) {
        return params.out_b.lit(0.0);
    }
    let p = params.value_dim;
    let mut acc = params.out_b;
    for (mi, (scores, values)) in raw_scores_per_head.iter().zip(values_per_head).enumerate() {
        let h = attention_head(scores, values, p, params.out_b);
        for c in 0..p {
            acc = params.out_w[mi * p + c].mul_add(h[c], acc);
        }
    }
    acc.softplus()
}
