//! Bounded-memory event selection for online attention.
//!
//! Per head, at most `eta` past events are retained. When a new event
//! arrives it is scored against the retained set, the normalized scores are
//! folded into each retained event's running average, the event is inserted,
//! and once more than `eta` events have been seen the retained past event
//! with the lowest average score is evicted (ties evict the oldest).

use alloc::vec::Vec;
use core::fmt;

use crate::autodiff::Scalar;
use crate::intensity::SeqEval;

#[derive(Clone, Copy, Debug)]
struct Retained {
    /// Index of the event in its stream (chronological).
    index: usize,
    t: f64,
    /// Running sum and count of normalized scores against later events.
    score_sum: f64,
    score_count: u32,
}

impl Retained {
    fn average(&self) -> f64 {
        if self.score_count == 0 {
            0.0
        } else {
            self.score_sum / self.score_count as f64
        }
    }
}

/// Per-head retained sets and running score averages.
#[derive(Clone, Debug)]
pub struct OnlineSelection {
    eta: usize,
    retained: Vec<Vec<Retained>>,
    seen: usize,
    last_t: f64,
    score_evals: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum OnlineError {
    OutOfOrder { t: f64, last_t: f64 },
}

impl fmt::Display for OnlineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OnlineError::OutOfOrder { t, last_t } => {
                write!(f, "out-of-order event: t = {t} after t = {last_t}")
            }
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for OnlineError {}

impl OnlineSelection {
    pub fn new(heads: usize, eta: usize) -> Self {
        assert!(heads >= 1 && eta >= 1);
        OnlineSelection {
            eta,
            retained: alloc::vec![Vec::with_capacity(eta + 1); heads],
            seen: 0,
            last_t: f64::NEG_INFINITY,
            score_evals: 0,
        }
    }

    pub fn eta(&self) -> usize {
        self.eta
    }

    pub fn seen(&self) -> usize {
        self.seen
    }

    /// Raw score evaluations so far (cost instrumentation: O(eta * M) per
    /// event).
    pub fn score_evals(&self) -> u64 {
        self.score_evals
    }

    /// Retained event indices per head, chronological.
    pub fn retained_sets(&self) -> Vec<Vec<usize>> {
        self.retained
            .iter()
            .map(|r| r.iter().map(|e| e.index).collect())
            .collect()
    }

    /// Running average score of a retained event in one head, if present.
    pub fn average_score(&self, head: usize, index: usize) -> Option<f64> {
        self.retained[head]
            .iter()
            .find(|e| e.index == index)
            .map(|e| e.average())
    }

    /// Fold one event into the state. `raw_score(head, past_index)` must
    /// return the unnormalized score of this event against the retained past
    /// event.
    pub fn observe(
        &mut self,
        index: usize,
        t: f64,
        mut raw_score: impl FnMut(usize, usize) -> f64,
    ) -> Result<(), OnlineError> {
        if t < self.last_t {
            return Err(OnlineError::OutOfOrder { t, last_t: self.last_t });
        }
        let newcomer = Retained { index, t, score_sum: 0.0, score_count: 0 };
        for head in 0..self.retained.len() {
            // score against the retained past, normalize over that set
            let raw: Vec<f64> = self.retained[head]
                .iter()
                .map(|e| raw_score(head, e.index))
                .collect();
            self.score_evals += raw.len() as u64;
            let total: f64 = raw.iter().sum();
            if total > 0.0 {
                for (e, &v) in self.retained[head].iter_mut().zip(&raw) {
                    e.score_sum += v / total;
                    e.score_count += 1;
                }
            }
            self.retained[head].push(newcomer);
            if self.seen + 1 > self.eta {
                // evict the lowest-average event strictly earlier than the
                // newcomer; ties evict the oldest
                let mut victim: Option<usize> = None;
                for (pos, e) in self.retained[head].iter().enumerate() {
                    if e.t < t {
                        match victim {
                            None => victim = Some(pos),
                            Some(v) => {
                                if e.average() < self.retained[head][v].average() {
                                    victim = Some(pos);
                                }
                            }
                        }
                    }
                }
                if let Some(v) = victim {
                    self.retained[head].remove(v);
                }
            }
        }
        self.seen += 1;
        self.last_t = t;
        Ok(())
    }
}

/// Replay a whole sequence through the selection, scoring with the model's
/// own score networks; returns the final state plus the per-head retained
/// sets after each event count (`snapshots[i]` = sets once `i` events have
/// been observed; `snapshots[0]` is empty).
pub fn select_events(
    ev: &SeqEval<'_, f64>,
    eta: usize,
) -> Result<(OnlineSelection, Vec<Vec<Vec<usize>>>), OnlineError> {
    let heads = ev.params.config.heads;
    let mut state = OnlineSelection::new(heads, eta);
    let mut snapshots = Vec::with_capacity(ev.seq.congestion.len() + 1);
    snapshots.push(alloc::vec![Vec::new(); heads]);
    for (i, e) in ev.seq.congestion.iter().enumerate() {
        state.observe(i, e.t, |head, j| ev.event_score(head, i, j))?;
        snapshots.push(state.retained_sets());
    }
    Ok((state, snapshots))
}

/// `lambda*(t, k)` with the history replaced by the per-head retained sets.
/// The state must be current up to the last event before `t`.
pub fn online_intensity<S: Scalar>(
    ev: &SeqEval<'_, S>,
    state: &OnlineSelection,
    t: f64,
    k: usize,
) -> S {
    ev.lambda_with_history(t, k, &state.retained_sets())
}
