//! Ogata-thinning simulation and the synthetic generators: Hawkes,
//! self-correcting, two non-homogeneous Poisson variants, a multivariate
//! network-Hawkes with tail-up cross-excitation gains, and sampling from a
//! fitted model.
//!
//! Thinning uses an adaptive lookahead window: the bound is 1.5x the max of
//! the intensity on a 20-point probe grid over the window; a candidate that
//! exceeds the bound halves the window and retries the whole window, so
//! increasing intensities (self-correcting) stay exact.

use alloc::vec::Vec;
use core::fmt;

use rand::Rng;

use crate::events::{CongestionEvent, EventSequence};
use crate::intensity::{Model, ModelError, NetContext};
use crate::math;
use crate::network::{NetworkError, TailupParams};
use crate::rng::{self, DetRng};

pub const DEFAULT_EVENT_CAP: usize = 500;
const PROBE_POINTS: usize = 20;
const BOUND_MARGIN: f64 = 1.5;
/// Expected candidates per window before it gets shrunk pre-emptively.
const CANDIDATE_BUDGET: f64 = 32.0;

/// What to generate. Parameters follow the four synthetic processes plus the
/// network-Hawkes ground truth; `FittedModel` samples a trained model.
#[derive(Clone, Debug, PartialEq)]
pub enum GeneratorKind {
    Hawkes { mu: f64, alpha: f64, beta: f64 },
    SelfCorrecting { mu: f64, alpha: f64 },
    NonHomo1 { c: f64 },
    NonHomo2 { c1: f64, c2: f64 },
    NetworkHawkes { mu0: f64, alpha: f64, beta_time: f64, tailup_beta: f64, tailup_sigma: f64 },
    FittedModel,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorSpec {
    pub kind: GeneratorKind,
    pub horizon: f64,
    pub count: usize,
    pub seed: u64,
    pub max_events: usize,
}

impl GeneratorSpec {
    pub fn new(kind: GeneratorKind, horizon: f64, count: usize, seed: u64) -> Self {
        GeneratorSpec { kind, horizon, count, seed, max_events: DEFAULT_EVENT_CAP }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum SimError {
    NeedsNetwork,
    NeedsModel,
    Network(NetworkError),
    Model(ModelError),
    BadParameter { what: &'static str },
}

impl fmt::Display for SimError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SimError::NeedsNetwork => write!(f, "network-hawkes generation needs a network and weights"),
            SimError::NeedsModel => write!(f, "fitted-model generation needs a checkpoint"),
            SimError::Network(e) => write!(f, "{e}"),
            SimError::Model(e) => write!(f, "{e}"),
            SimError::BadParameter { what } => write!(f, "bad generator parameter: {what}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for SimError {}

impl From<NetworkError> for SimError {
    fn from(e: NetworkError) -> Self {
        SimError::Network(e)
    }
}

impl From<ModelError> for SimError {
    fn from(e: ModelError) -> Self {
        SimError::Model(e)
    }
}

/// Sampled sequences plus a truncation flag per sequence (hit the event cap).
#[derive(Clone, Debug)]
pub struct GenOutput {
    pub sequences: Vec<EventSequence>,
    pub truncated: Vec<bool>,
}

impl GenOutput {
    pub fn truncated_count(&self) -> usize {
        self.truncated.iter().filter(|&&t| t).count()
    }
}

/// Exact thinning of a univariate process. `lambda(t, history)` is the
/// conditional intensity given the (sorted) event times so far.
pub fn thinning_simulate(
    mut lambda: impl FnMut(f64, &[f64]) -> f64,
    horizon: f64,
    seed: u64,
    cap: usize,
) -> (Vec<f64>, bool) {
    let mut rng = rng::rng_from_seed(seed);
    let mut times: Vec<f64> = Vec::new();
    let mut t = 0.0f64;
    let mut truncated = false;
    'outer: while t < horizon {
        if times.len() >= cap {
            truncated = true;
            break;
        }
        let mut window = horizon - t;
        'window: loop {
            // bound over [t, t + window] from the probe grid
            let mut bound = 0.0f64;
            for q in 0..PROBE_POINTS {
                let tau = t + window * q as f64 / (PROBE_POINTS - 1) as f64;
                bound = bound.max(lambda(tau, &times));
            }
            bound *= BOUND_MARGIN;
            if bound <= 0.0 {
                t += window;
                continue 'outer;
            }
            if bound * window > CANDIDATE_BUDGET {
                window = CANDIDATE_BUDGET / bound;
                continue 'window;
            }
            let mut s = t;
            loop {
                let u: f64 = rng.random();
                s += -math::ln(1.0 - u) / bound;
                if s > t + window {
                    t += window;
                    continue 'outer;
                }
                let lam = lambda(s, &times);
                if lam > bound {
                    // probe missed a peak: discard this window and retry at
                    // half width
                    window *= 0.5;
                    continue 'window;
                }
                let a: f64 = rng.random();
                if a * bound <= lam {
                    times.push(s);
                    t = s;
                    continue 'outer;
                }
            }
        }
    }
    (times, truncated)
}

/// Exact thinning of a K-channel marked process. `lambda_all(t, history)`
/// returns the per-sensor intensities.
pub fn thinning_simulate_marked(
    sensors: usize,
    mut lambda_all: impl FnMut(f64, &[CongestionEvent]) -> Vec<f64>,
    horizon: f64,
    seed: u64,
    cap: usize,
) -> (Vec<CongestionEvent>, bool) {
    let mut rng = rng::rng_from_seed(seed);
    let mut events: Vec<CongestionEvent> = Vec::new();
    let mut t = 0.0f64;
    let mut truncated = false;
    'outer: while t < horizon {
        if events.len() >= cap {
            truncated = true;
            break;
        }
        let mut window = horizon - t;
        'window: loop {
            let mut bound = 0.0f64;
            for q in 0..PROBE_POINTS {
                let tau = t + window * q as f64 / (PROBE_POINTS - 1) as f64;
                bound = bound.max(lambda_all(tau, &events).iter().sum());
            }
            bound *= BOUND_MARGIN;
            if bound <= 0.0 {
                t += window;
                continue 'outer;
            }
            if bound * window > CANDIDATE_BUDGET {
                window = CANDIDATE_BUDGET / bound;
                continue 'window;
            }
            let mut s = t;
            loop {
                let u: f64 = rng.random();
                s += -math::ln(1.0 - u) / bound;
                if s > t + window {
                    t += window;
                    continue 'outer;
                }
                let lams = lambda_all(s, &events);
                let total: f64 = lams.iter().sum();
                if total > bound {
                    window *= 0.5;
                    continue 'window;
                }
                let a: f64 = rng.random();
                if a * bound <= total {
                    // assign the mark by inverse CDF over channels
                    let pick: f64 = rng.random::<f64>() * total;
                    let mut acc = 0.0;
                    let mut sensor = sensors - 1;
                    for (k, &l) in lams.iter().enumerate() {
                        acc += l;
                        if pick <= acc {
                            sensor = k;
                            break;
                        }
                    }
                    events.push(CongestionEvent { t: s, sensor });
                    t = s;
                    continue 'outer;
                }
            }
        }
    }
    (events, truncated)
}

/// `lambda*(t) = mu + alpha * sum_j beta e^{-beta (t - t_j)}`.
pub fn hawkes_intensity(mu: f64, alpha: f64, beta: f64, t: f64, times: &[f64]) -> f64 {
    let mut acc = 0.0;
    for &tj in times {
        if tj < t {
            acc += math::exp(-beta * (t - tj));
        } else {
            break;
        }
    }
    mu + alpha * beta * acc
}

/// `lambda*(t) = exp(mu t - alpha N(t))`.
pub fn self_correcting_intensity(mu: f64, alpha: f64, t: f64, times: &[f64]) -> f64 {
    let n = times.partition_point(|&tj| tj < t);
    math::exp(mu * t - alpha * n as f64)
}

/// `lambda*(t) = c u phi(t - 0.5)` with `phi` the standard normal PDF.
pub fn nonhomo1_intensity(c: f64, u: f64, t: f64) -> f64 {
    c * u * math::normal_pdf(t - 0.5)
}

/// `lambda*(t) = c1 u1 phi(6(t - 0.35)) + c2 u2 phi(6(t - 0.75))`.
pub fn nonhomo2_intensity(c1: f64, c2: f64, u1: f64, u2: f64, t: f64) -> f64 {
    c1 * u1 * math::normal_pdf(6.0 * (t - 0.35)) + c2 * u2 * math::normal_pdf(6.0 * (t - 0.75))
}

fn univariate_dataset(
    count: usize,
    horizon: f64,
    seed: u64,
    cap: usize,
    mut lambda_for: impl FnMut(&mut DetRng) -> alloc::boxed::Box<dyn FnMut(f64, &[f64]) -> f64>,
) -> GenOutput {
    let mut sequences = Vec::with_capacity(count);
    let mut truncated = Vec::with_capacity(count);
    for i in 0..count {
        let sub = rng::derive_seed(seed, i as u64);
        // amplitude draws (if any) come from a side stream so the thinning
        // stream stays aligned
        let mut amp_rng = rng::rng_from_seed(rng::derive_seed(sub, 0xA3));
        let lambda = lambda_for(&mut amp_rng);
        let (times, trunc) = thinning_simulate(lambda, horizon, sub, cap);
        sequences.push(EventSequence {
            horizon,
            congestion: times.into_iter().map(|t| CongestionEvent { t, sensor: 0 }).collect(),
            incidents: Vec::new(),
        });
        truncated.push(trunc);
    }
    GenOutput { sequences, truncated }
}

/// Hawkes datasets (`mu = 10, alpha = 1, beta = 1` in the reference setup).
pub fn gen_hawkes(
    mu: f64,
    alpha: f64,
    beta: f64,
    horizon: f64,
    count: usize,
    seed: u64,
    cap: usize,
) -> Result<GenOutput, SimError> {
    if !(mu > 0.0 && beta > 0.0) || alpha < 0.0 {
        return Err(SimError::BadParameter { what: "hawkes needs mu, beta > 0 and alpha >= 0" });
    }
    Ok(univariate_dataset(count, horizon, seed, cap, |_| {
        alloc::boxed::Box::new(move |t, hist| hawkes_intensity(mu, alpha, beta, t, hist))
    }))
}

/// Self-correcting datasets (`mu = 10, alpha = 1` in the reference setup).
pub fn gen_self_correcting(
    mu: f64,
    alpha: f64,
    horizon: f64,
    count: usize,
    seed: u64,
    cap: usize,
) -> Result<GenOutput, SimError> {
    if !(mu > 0.0 && alpha > 0.0) {
        return Err(SimError::BadParameter { what: "self-correcting needs mu, alpha > 0" });
    }
    Ok(univariate_dataset(count, horizon, seed, cap, |_| {
        alloc::boxed::Box::new(move |t, hist| self_correcting_intensity(mu, alpha, t, hist))
    }))
}

/// Non-homogeneous Poisson datasets. Variant 1: one normal bump scaled by a
/// per-sequence `U[0,1]` amplitude; variant 2: two bumps with independent
/// amplitudes.
pub fn gen_nonhomo(
    variant: u8,
    horizon: f64,
    count: usize,
    seed: u64,
    cap: usize,
) -> Result<GenOutput, SimError> {
    match variant {
        1 => Ok(univariate_dataset(count, horizon, seed, cap, |amp| {
            let u: f64 = amp.random();
            alloc::boxed::Box::new(move |t, _| nonhomo1_intensity(100.0, u, t))
        })),
        2 => Ok(univariate_dataset(count, horizon, seed, cap, |amp| {
            let u1: f64 = amp.random();
            let u2: f64 = amp.random();
            alloc::boxed::Box::new(move |t, _| nonhomo2_intensity(50.0, 50.0, u1, u2, t))
        })),
        _ => Err(SimError::BadParameter { what: "nonhomo variant must be 1 or 2" }),
    }
}

/// Per-sensor intensities of the network-Hawkes ground truth:
/// `lambda_k(t) = mu0 + sum_j gain[k][s_j] * beta e^{-beta (t - t_j)}` with
/// `gain[k][k'] = alpha * alpha_tailup(r_k', r_k)`.
pub fn network_hawkes_intensity(
    gains: &[Vec<f64>],
    mu0: f64,
    beta_time: f64,
    t: f64,
    history: &[CongestionEvent],
) -> Vec<f64> {
    let k = gains.len();
    let mut out = alloc::vec![mu0; k];
    for e in history {
        if e.t >= t {
            break;
        }
        let decay = beta_time * math::exp(-beta_time * (t - e.t));
        for (ki, lam) in out.iter_mut().enumerate() {
            *lam += gains[ki][e.sensor] * decay;
        }
    }
    out
}

/// Cross-excitation gain matrix from the tail-up correlation: flow-unconnected
/// sensor pairs get exactly zero gain.
pub fn network_hawkes_gains(
    ctx: &NetContext<'_>,
    tailup: &TailupParams,
    alpha: f64,
) -> Result<Vec<Vec<f64>>, NetworkError> {
    let k = ctx.sensor_count();
    let mut gains = Vec::with_capacity(k);
    for to in 0..k {
        let mut row = Vec::with_capacity(k);
        for from in 0..k {
            row.push(alpha * ctx.sensor_alpha(0.0, from, to, tailup)?);
        }
        gains.push(row);
    }
    Ok(gains)
}

/// Multivariate Hawkes over the network's sensors with exponential temporal
/// kernel and tail-up spatial gains.
#[allow(clippy::too_many_arguments)]
pub fn gen_network_hawkes(
    ctx: &NetContext<'_>,
    tailup: &TailupParams,
    mu0: f64,
    alpha: f64,
    beta_time: f64,
    horizon: f64,
    count: usize,
    seed: u64,
    cap: usize,
) -> Result<GenOutput, SimError> {
    if !(mu0 > 0.0 && beta_time > 0.0) || alpha < 0.0 {
        return Err(SimError::BadParameter { what: "network-hawkes needs mu0, beta > 0, alpha >= 0" });
    }
    let k = ctx.sensor_count();
    if k == 0 {
        return Err(SimError::BadParameter { what: "network has no sensors" });
    }
    let gains = network_hawkes_gains(ctx, tailup, alpha)?;
    let mut sequences = Vec::with_capacity(count);
    let mut truncated = Vec::with_capacity(count);
    for i in 0..count {
        let sub = rng::derive_seed(seed, i as u64);
        let (events, trunc) = thinning_simulate_marked(
            k,
            |t, hist| network_hawkes_intensity(&gains, mu0, beta_time, t, hist),
            horizon,
            sub,
            cap,
        );
        sequences.push(EventSequence { horizon, congestion: events, incidents: Vec::new() });
        truncated.push(trunc);
    }
    Ok(GenOutput { sequences, truncated })
}

/// Sample sequences from a fitted model (its full conditional intensity,
/// incident-free).
pub fn gen_from_model(
    model: &Model<'_, f64>,
    horizon: f64,
    count: usize,
    seed: u64,
    cap: usize,
) -> Result<GenOutput, SimError> {
    let k = model.params.config.sensors;
    let mut sequences = Vec::with_capacity(count);
    let mut truncated = Vec::with_capacity(count);
    for i in 0..count {
        let sub = rng::derive_seed(seed, i as u64);
        let mut cache: Option<(usize, EventSequence)> = None;
        let (events, trunc) = thinning_simulate_marked(
            k,
            |t, hist| {
                let stale = match &cache {
                    Some((n, _)) => *n != hist.len(),
                    None => true,
                };
                if stale {
                    cache = Some((
                        hist.len(),
                        EventSequence {
                            horizon,
                            congestion: hist.to_vec(),
                            incidents: Vec::new(),
                        },
                    ));
                }
                let seq = &cache.as_ref().expect("cache filled").1;
                let ev = model.eval(seq).expect("model evaluation");
                (0..k).map(|ki| ev.lambda_at(t, ki)).collect()
            },
            horizon,
            sub,
            cap,
        );
        sequences.push(EventSequence { horizon, congestion: events, incidents: Vec::new() });
        truncated.push(trunc);
    }
    Ok(GenOutput { sequences, truncated })
}
