//! Event data model, congestion extraction from count series, and dataset
//! splitting. (De)serialization of the on-disk formats lives in the `stpp`
//! companion crate.

use alloc::vec::Vec;
use core::fmt;

use rand::seq::SliceRandom;

use crate::network::NetworkLocation;
use crate::rng;

/// A congestion event: occurrence time (hours) and sensor index.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CongestionEvent {
    pub t: f64,
    pub sensor: usize,
}

/// A traffic incident: call time (hours), location on the network, and
/// processing time `z > 0` (hours). The incident is active on `[t, t + z)`.
#[derive(Clone, Debug, PartialEq)]
pub struct IncidentEvent {
    pub t: f64,
    pub location: NetworkLocation,
    pub z: f64,
}

/// One observation window: horizon `T` plus time-sorted congestion and
/// incident events, all with `t < T`.
#[derive(Clone, Debug, PartialEq)]
pub struct EventSequence {
    pub horizon: f64,
    pub congestion: Vec<CongestionEvent>,
    pub incidents: Vec<IncidentEvent>,
}

/// Vehicle counts for one sensor in fixed-duration bins.
#[derive(Clone, Debug, PartialEq)]
pub struct CountSeries {
    pub sensor: usize,
    pub bin_minutes: f64,
    pub counts: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum EventError {
    NonPositiveHorizon { horizon: f64 },
    TimeBeyondHorizon { t: f64, horizon: f64 },
    NegativeTime { t: f64 },
    Unsorted { index: usize },
    NonPositiveProcessingTime { t: f64, z: f64 },
    TooFewSequences { got: usize },
    BadSplitRatio { ratio: f64 },
}

impl fmt::Display for EventError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use EventError::*;
        match self {
            NonPositiveHorizon { horizon } => write!(f, "horizon T = {horizon} must be positive"),
            TimeBeyondHorizon { t, horizon } => {
                write!(f, "time beyond horizon: t = {t} with T = {horizon}")
            }
            NegativeTime { t } => write!(f, "negative event time {t}"),
            Unsorted { index } => write!(f, "events not time-sorted at index {index}"),
            NonPositiveProcessingTime { t, z } => {
                write!(f, "incident at t = {t} has non-positive processing time {z}")
            }
            TooFewSequences { got } => write!(f, "need at least 2 sequences to split, got {got}"),
            BadSplitRatio { ratio } => write!(f, "split ratio {ratio} must lie in (0, 1)"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for EventError {}

impl EventSequence {
    pub fn empty(horizon: f64) -> Self {
        EventSequence { horizon, congestion: Vec::new(), incidents: Vec::new() }
    }

    /// Validate every invariant: positive horizon, times in `[0, T)`,
    /// both lists sorted by `(t, id)` strictly, `z > 0`.
    pub fn validate(&self) -> Result<(), EventError> {
        if !(self.horizon > 0.0) {
            return Err(EventError::NonPositiveHorizon { horizon: self.horizon });
        }
        for (i, e) in self.congestion.iter().enumerate() {
            if e.t < 0.0 {
                return Err(EventError::NegativeTime { t: e.t });
            }
            if e.t >= self.horizon {
                return Err(EventError::TimeBeyondHorizon { t: e.t, horizon: self.horizon });
            }
            if i > 0 {
                let p = &self.congestion[i - 1];
                if (e.t, e.sensor) <= (p.t, p.sensor) {
                    return Err(EventError::Unsorted { index: i });
                }
            }
        }
        for (i, y) in self.incidents.iter().enumerate() {
            if y.t < 0.0 {
                return Err(EventError::NegativeTime { t: y.t });
            }
            if y.t >= self.horizon {
                return Err(EventError::TimeBeyondHorizon { t: y.t, horizon: self.horizon });
            }
            if !(y.z > 0.0) {
                return Err(EventError::NonPositiveProcessingTime { t: y.t, z: y.z });
            }
            if i > 0 && y.t < self.incidents[i - 1].t {
                return Err(EventError::Unsorted { index: i });
            }
        }
        Ok(())
    }

    /// Drop incidents with processing time below `min_z` hours (ingestion
    /// filter; default 0.25 h mirrors "processing time larger than 15 min").
    pub fn filter_incidents(&mut self, min_z: f64) {
        self.incidents.retain(|y| y.z >= min_z);
    }

    /// Number of congestion events strictly before `t`.
    pub fn prefix_len(&self, t: f64) -> usize {
        self.congestion.partition_point(|e| e.t < t)
    }
}

pub const DEFAULT_MIN_PROCESSING_TIME_H: f64 = 0.25;

/// One event per upward threshold crossing: `count[i] >= threshold` with
/// `count[i-1] < threshold` (`count[-1]` counts as below). Event time is the
/// bin start, in hours.
pub fn detect_congestion(series: &CountSeries, threshold: f64) -> Vec<CongestionEvent> {
    assert!(threshold > 0.0, "threshold must be positive");
    let mut events = Vec::new();
    let mut prev_above = false;
    for (i, &c) in series.counts.iter().enumerate() {
        let above = (c as f64) >= threshold;
        if above && !prev_above {
            events.push(CongestionEvent {
                t: i as f64 * series.bin_minutes / 60.0,
                sensor: series.sensor,
            });
        }
        prev_above = above;
    }
    events
}

/// Default congestion threshold for a sensor: mean + 2 standard deviations
/// of its counts.
pub fn default_threshold(series: &CountSeries) -> f64 {
    let n = series.counts.len().max(1) as f64;
    let mean = series.counts.iter().map(|&c| c as f64).sum::<f64>() / n;
    let var = series
        .counts
        .iter()
        .map(|&c| {
            let d = c as f64 - mean;
            d * d
        })
        .sum::<f64>()
        / n;
    mean + 2.0 * crate::math::sqrt(var)
}

/// Deterministic shuffled split: `|train| = round(ratio * N)` (half up),
/// clamped so both sides end up non-empty.
pub fn split_dataset(
    seqs: &[EventSequence],
    ratio: f64,
    seed: u64,
) -> Result<(Vec<EventSequence>, Vec<EventSequence>), EventError> {
    if seqs.len() < 2 {
        return Err(EventError::TooFewSequences { got: seqs.len() });
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(EventError::BadSplitRatio { ratio });
    }
    let mut order: Vec<usize> = (0..seqs.len()).collect();
    order.shuffle(&mut rng::rng_from_seed(rng::derive_seed(seed, 0x5911)));
    let n_train =
        (crate::math::floor(ratio * seqs.len() as f64 + 0.5) as usize).clamp(1, seqs.len() - 1);
    let train = order[..n_train].iter().map(|&i| seqs[i].clone()).collect();
    let test = order[n_train..].iter().map(|&i| seqs[i].clone()).collect();
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_crossing_when_all_below() {
        let s = CountSeries { sensor: 0, bin_minutes: 5.0, counts: alloc::vec![1, 2, 3] };
        assert!(detect_congestion(&s, 5.0).is_empty());
    }

    #[test]
    fn single_crossing_hand_case() {
        let s = CountSeries { sensor: 2, bin_minutes: 5.0, counts: alloc::vec![3, 3, 9, 9, 3] };
        let ev = detect_congestion(&s, 5.0);
        assert_eq!(ev.len(), 1);
        assert!((ev[0].t - 1.0 / 6.0).abs() < 1e-15); // bin 2 starts at 10 min
        assert_eq!(ev[0].sensor, 2);
    }

    #[test]
    fn one_event_per_maximal_run() {
        let s = CountSeries {
            sensor: 0,
            bin_minutes: 5.0,
            counts: alloc::vec![9, 1, 9, 9, 1, 1, 9],
        };
        let ev = detect_congestion(&s, 5.0);
        assert_eq!(ev.len(), 3); // runs start at bins 0, 2, 6
        assert!((ev[0].t - 0.0).abs() < 1e-15);
    }

    #[test]
    fn rise_then_fall_clusters_at_onsets() {
        // rise above, dip, rise again: events exactly at the exceedance onsets
        let s = CountSeries {
            sensor: 0,
            bin_minutes: 5.0,
            counts: alloc::vec![2, 4, 8, 12, 9, 4, 2, 6, 11, 3],
        };
        let ev = detect_congestion(&s, 6.0);
        let times_min: Vec<f64> = ev.iter().map(|e| e.t * 60.0).collect();
        assert_eq!(times_min, alloc::vec![10.0, 35.0]);
    }

    #[test]
    fn default_threshold_is_mean_plus_two_sigma() {
        let s = CountSeries { sensor: 0, bin_minutes: 5.0, counts: alloc::vec![2, 4, 6, 8] };
        let mean = 5.0;
        let var: f64 = (9.0 + 1.0 + 1.0 + 9.0) / 4.0;
        assert!((default_threshold(&s) - (mean + 2.0 * var.sqrt())).abs() < 1e-12);
    }

    fn dummy_seqs(n: usize) -> Vec<EventSequence> {
        (0..n)
            .map(|i| EventSequence {
                horizon: 24.0,
                congestion: alloc::vec![CongestionEvent { t: i as f64 * 0.1, sensor: 0 }],
                incidents: alloc::vec![],
            })
            .collect()
    }

    #[test]
    fn split_80_20() {
        let (train, test) = split_dataset(&dummy_seqs(10), 0.8, 7).unwrap();
        assert_eq!((train.len(), test.len()), (8, 2));
    }

    #[test]
    fn split_rounds_half_up() {
        let (train, test) = split_dataset(&dummy_seqs(5), 0.5, 7).unwrap();
        assert_eq!((train.len(), test.len()), (3, 2));
    }

    #[test]
    fn split_is_deterministic_and_a_partition() {
        let seqs = dummy_seqs(9);
        let (tr1, te1) = split_dataset(&seqs, 0.6, 42).unwrap();
        let (tr2, te2) = split_dataset(&seqs, 0.6, 42).unwrap();
        assert_eq!(tr1, tr2);
        assert_eq!(te1, te2);
        let mut all: Vec<f64> = tr1
            .iter()
            .chain(te1.iter())
            .map(|s| s.congestion[0].t)
            .collect();
        all.sort_by(f64::total_cmp);
        let expect: Vec<f64> = (0..9).map(|i| i as f64 * 0.1).collect();
        assert_eq!(all, expect);
    }

    #[test]
    fn split_rejects_tiny_datasets() {
        assert!(matches!(
            split_dataset(&dummy_seqs(1), 0.8, 7),
            Err(EventError::TooFewSequences { .. })
        ));
    }

    #[test]
    fn validation_catches_horizon_and_order() {
        let mut s = EventSequence::empty(24.0);
        s.congestion.push(CongestionEvent { t: 25.0, sensor: 0 });
        assert!(matches!(s.validate(), Err(EventError::TimeBeyondHorizon { .. })));

        let mut s = EventSequence::empty(24.0);
        s.congestion.push(CongestionEvent { t: 2.0, sensor: 0 });
        s.congestion.push(CongestionEvent { t: 1.0, sensor: 0 });
        assert!(matches!(s.validate(), Err(EventError::Unsorted { index: 1 })));

        let mut s = EventSequence::empty(24.0);
        s.incidents.push(IncidentEvent {
            t: 1.0,
            location: NetworkLocation::new("L1", 0.0),
            z: 0.0,
        });
        assert!(matches!(s.validate(), Err(EventError::NonPositiveProcessingTime { .. })));
    }

    #[test]
    fn incident_filter_drops_short_processing_times() {
        let mut s = EventSequence::empty(24.0);
        for z in [0.1, 0.25, 0.9] {
            s.incidents.push(IncidentEvent {
                t: 1.0,
                location: NetworkLocation::new("L1", 0.0),
                z,
            });
        }
        s.filter_incidents(DEFAULT_MIN_PROCESSING_TIME_H);
        assert_eq!(s.incidents.len(), 2);
    }
}
