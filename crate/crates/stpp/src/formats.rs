//! On-disk formats: network JSON, weights CSV, event JSON-lines, count CSV,
//! parameter checkpoints, generator specs, and the CSV exports.
//!
//! Times are serialized as decimals with 9 significant digits, which makes
//! save-then-load a bit-exact fixed point. Unknown JSON fields are rejected.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use stpp_core::events::{CongestionEvent, CountSeries, EventSequence, IncidentEvent};
use stpp_core::intensity::{ModelConfig, ModelParams};
use stpp_core::network::{
    build_network, NetworkLocation, NetworkSpec, SegmentSpec, SegmentWeights, SensorSpec,
    TrafficNetwork,
};
use stpp_core::simulate::{GeneratorKind, GeneratorSpec};

/// Round to at most 9 significant decimal digits. Values that came from a
/// 9-digit decimal representation are fixed points.
pub fn round_sig9(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{x:.8e}").parse().expect("sig-9 round trip")
}

// ------------------------------------------------------------ network JSON

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SegmentDto {
    id: String,
    length_m: f64,
    to: Vec<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SensorDto {
    id: usize,
    segment: String,
    offset_m: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkDto {
    segments: Vec<SegmentDto>,
    sensors: Vec<SensorDto>,
}

pub fn load_network(path: &Path) -> Result<TrafficNetwork> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let dto: NetworkDto = serde_json::from_reader(BufReader::new(file))
        .with_context(|| format!("parsing network file {}", path.display()))?;
    let spec = NetworkSpec {
        segments: dto
            .segments
            .into_iter()
            .map(|s| SegmentSpec { id: s.id, length_m: s.length_m, to: s.to })
            .collect(),
        sensors: dto
            .sensors
            .into_iter()
            .map(|s| SensorSpec { id: s.id, segment: s.segment, offset_m: s.offset_m })
            .collect(),
    };
    build_network(&spec).map_err(|e| anyhow::anyhow!("invalid network: {e}"))
}

pub fn save_network(spec: &NetworkSpec, path: &Path) -> Result<()> {
    let dto = NetworkDto {
        segments: spec
            .segments
            .iter()
            .map(|s| SegmentDto { id: s.id.clone(), length_m: s.length_m, to: s.to.clone() })
            .collect(),
        sensors: spec
            .sensors
            .iter()
            .map(|s| SensorDto { id: s.id, segment: s.segment.clone(), offset_m: s.offset_m })
            .collect(),
    };
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut w, &dto)?;
    w.write_all(b"\n")?;
    Ok(())
}

// ------------------------------------------------------------- weights CSV

/// Load `bin_start_h,segment,weight` rows into time-binned segment weights.
pub fn load_weights(path: &Path, net: &TrafficNetwork, bin_hours: f64) -> Result<SegmentWeights> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut entries: Vec<(f64, String, f64)> = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if lineno == 0 {
            if line != "bin_start_h,segment,weight" {
                bail!("bad weights header: expected `bin_start_h,segment,weight`, got `{line}`");
            }
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 3 {
            bail!("weights line {} malformed: `{line}`", lineno + 1);
        }
        let bin_start: f64 = parts[0].trim().parse().with_context(|| format!("line {}", lineno + 1))?;
        let weight: f64 = parts[2].trim().parse().with_context(|| format!("line {}", lineno + 1))?;
        entries.push((bin_start, parts[1].trim().to_string(), weight));
    }
    SegmentWeights::from_entries(net, bin_hours, &entries)
        .map_err(|e| anyhow::anyhow!("invalid weights: {e}"))
}

// --------------------------------------------------------- event JSON-lines

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CongestionDto {
    t: f64,
    sensor: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct IncidentDto {
    t: f64,
    segment: String,
    offset_m: f64,
    z: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SequenceDto {
    #[serde(rename = "T")]
    horizon: f64,
    congestion: Vec<CongestionDto>,
    incidents: Vec<IncidentDto>,
}

/// Load a JSON-lines event dataset; every sequence is validated.
pub fn load_dataset(path: &Path) -> Result<Vec<EventSequence>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let dto: SequenceDto = serde_json::from_str(&line)
            .with_context(|| format!("{}:{}: malformed sequence", path.display(), lineno + 1))?;
        let seq = EventSequence {
            horizon: dto.horizon,
            congestion: dto
                .congestion
                .into_iter()
                .map(|e| CongestionEvent { t: e.t, sensor: e.sensor })
                .collect(),
            incidents: dto
                .incidents
                .into_iter()
                .map(|y| IncidentEvent {
                    t: y.t,
                    location: NetworkLocation::new(y.segment, y.offset_m),
                    z: y.z,
                })
                .collect(),
        };
        seq.validate()
            .map_err(|e| anyhow::anyhow!("{}:{}: {e}", path.display(), lineno + 1))?;
        out.push(seq);
    }
    Ok(out)
}

/// Save a dataset as JSON-lines with 9-significant-digit times.
pub fn save_dataset(seqs: &[EventSequence], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for seq in seqs {
        let dto = SequenceDto {
            horizon: round_sig9(seq.horizon),
            congestion: seq
                .congestion
                .iter()
                .map(|e| CongestionDto { t: round_sig9(e.t), sensor: e.sensor })
                .collect(),
            incidents: seq
                .incidents
                .iter()
                .map(|y| IncidentDto {
                    t: round_sig9(y.t),
                    segment: y.location.segment.clone(),
                    offset_m: round_sig9(y.location.offset_m),
                    z: round_sig9(y.z),
                })
                .collect(),
        };
        serde_json::to_writer(&mut w, &dto)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

// --------------------------------------------------------------- count CSV

/// Load `sensor,bin_start_min,count` rows; bins per sensor must be dense
/// multiples of `bin_minutes` starting at 0.
pub fn load_counts(path: &Path, bin_minutes: f64) -> Result<Vec<CountSeries>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut per_sensor: std::collections::BTreeMap<usize, Vec<(usize, u32)>> = Default::default();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if lineno == 0 {
            if line != "sensor,bin_start_min,count" {
                bail!("bad counts header: expected `sensor,bin_start_min,count`, got `{line}`");
            }
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 3 {
            bail!("counts line {} malformed: `{line}`", lineno + 1);
        }
        let sensor: usize = parts[0].trim().parse().with_context(|| format!("line {}", lineno + 1))?;
        let start: f64 = parts[1].trim().parse().with_context(|| format!("line {}", lineno + 1))?;
        let count: u32 = parts[2].trim().parse().with_context(|| format!("line {}", lineno + 1))?;
        let idx = (start / bin_minutes).round();
        if (start - idx * bin_minutes).abs() > 1e-9 || idx < 0.0 {
            bail!("counts line {}: bin start {start} not aligned to {bin_minutes} min", lineno + 1);
        }
        per_sensor.entry(sensor).or_default().push((idx as usize, count));
    }
    let mut out = Vec::new();
    for (sensor, mut bins) in per_sensor {
        bins.sort_unstable();
        let mut counts = Vec::with_capacity(bins.len());
        for (want, (idx, c)) in bins.iter().enumerate() {
            if *idx != want {
                bail!("sensor {sensor}: missing count bin {want}");
            }
            counts.push(*c);
        }
        out.push(CountSeries { sensor, bin_minutes, counts });
    }
    Ok(out)
}

// -------------------------------------------------------------- checkpoint

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigDto {
    sensors: usize,
    heads: usize,
    value_dim: usize,
    hidden: usize,
    temporal_only: bool,
    tod_bins: usize,
    tod_period_h: f64,
}

impl From<ModelConfig> for ConfigDto {
    fn from(c: ModelConfig) -> Self {
        ConfigDto {
            sensors: c.sensors,
            heads: c.heads,
            value_dim: c.value_dim,
            hidden: c.hidden,
            temporal_only: c.temporal_only,
            tod_bins: c.tod_bins,
            tod_period_h: c.tod_period_h,
        }
    }
}

impl From<ConfigDto> for ModelConfig {
    fn from(c: ConfigDto) -> Self {
        ModelConfig {
            sensors: c.sensors,
            heads: c.heads,
            value_dim: c.value_dim,
            hidden: c.hidden,
            temporal_only: c.temporal_only,
            tod_bins: c.tod_bins,
            tod_period_h: c.tod_period_h,
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointDto {
    version: u32,
    config: ConfigDto,
    /// Parameter blocks; serde_json maps iterate sorted by name, so the file
    /// is canonical.
    blocks: std::collections::BTreeMap<String, Vec<f64>>,
}

pub fn save_checkpoint(params: &ModelParams<f64>, path: &Path) -> Result<()> {
    let dto = CheckpointDto {
        version: CHECKPOINT_VERSION,
        config: params.config.into(),
        blocks: params.blocks().into_iter().collect(),
    };
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut w, &dto)?;
    w.write_all(b"\n")?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams<f64>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let dto: CheckpointDto = serde_json::from_reader(BufReader::new(file))
        .with_context(|| format!("parsing checkpoint {}", path.display()))?;
    if dto.version != CHECKPOINT_VERSION {
        bail!("unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})", dto.version);
    }
    let config: ModelConfig = dto.config.into();
    // reassemble the flat vector in block order, validating shapes
    let reference = ModelParams::init(config, 0);
    let mut flat = Vec::with_capacity(reference.param_count());
    for (name, expect) in reference.blocks() {
        let got = dto
            .blocks
            .get(&name)
            .with_context(|| format!("checkpoint missing block {name}"))?;
        if got.len() != expect.len() {
            bail!("checkpoint block {name} has {} values, expected {}", got.len(), expect.len());
        }
        flat.extend_from_slice(got);
    }
    Ok(ModelParams::from_flat(config, &flat))
}

// ---------------------------------------------------------- generator spec

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "kebab-case")]
enum GenKindDto {
    Hawkes { mu: f64, alpha: f64, beta: f64 },
    SelfCorrecting { mu: f64, alpha: f64 },
    Nonhomo1 { c: f64 },
    Nonhomo2 { c1: f64, c2: f64 },
    NetworkHawkes { mu0: f64, alpha: f64, beta_time: f64, tailup_beta: f64, tailup_sigma: f64 },
    FittedModel {},
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GenSpecDto {
    #[serde(flatten)]
    kind: GenKindDto,
    #[serde(rename = "T")]
    horizon: f64,
    n: usize,
    seed: u64,
    #[serde(default = "default_cap")]
    cap: usize,
}

fn default_cap() -> usize {
    stpp_core::simulate::DEFAULT_EVENT_CAP
}

pub fn load_generator_spec(path: &Path) -> Result<GeneratorSpec> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let dto: GenSpecDto = serde_json::from_reader(BufReader::new(file))
        .with_context(|| format!("parsing generator spec {}", path.display()))?;
    let kind = match dto.kind {
        GenKindDto::Hawkes { mu, alpha, beta } => GeneratorKind::Hawkes { mu, alpha, beta },
        GenKindDto::SelfCorrecting { mu, alpha } => GeneratorKind::SelfCorrecting { mu, alpha },
        GenKindDto::Nonhomo1 { c } => GeneratorKind::NonHomo1 { c },
        GenKindDto::Nonhomo2 { c1, c2 } => GeneratorKind::NonHomo2 { c1, c2 },
        GenKindDto::NetworkHawkes { mu0, alpha, beta_time, tailup_beta, tailup_sigma } => {
            GeneratorKind::NetworkHawkes { mu0, alpha, beta_time, tailup_beta, tailup_sigma }
        }
        GenKindDto::FittedModel {} => GeneratorKind::FittedModel,
    };
    Ok(GeneratorSpec {
        kind,
        horizon: dto.horizon,
        count: dto.n,
        seed: dto.seed,
        max_events: dto.cap,
    })
}

// -------------------------------------------------------------- CSV output

/// Format a float with at most 9 significant digits (shortest form).
pub fn fmt_g9(x: f64) -> String {
    let mut s = serde_json::Number::from_f64(round_sig9(x))
        .map(|n| n.to_string())
        .unwrap_or_else(|| x.to_string());
    if !s.contains('.') && !s.contains('e') && !s.contains("inf") && !s.contains("nan") {
        s.push_str(".0");
    }
    s
}

pub fn write_trace_csv(trace: &[f64], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "epoch,avg_loglik")?;
    for (i, ll) in trace.iter().enumerate() {
        writeln!(w, "{},{}", i, fmt_g9(*ll))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn sig9_round_trip_is_a_fixed_point() {
        for &x in &[0.0, 7.25, 1.0 / 3.0, 123456.789123, -2.5e-7, 1e17] {
            let once = round_sig9(x);
            assert_eq!(once.to_bits(), round_sig9(once).to_bits());
        }
    }

    #[test]
    fn event_round_trip_bit_exact() {
        let dir = tempdir().unwrap();
        let p1 = dir.path().join("a.jsonl");
        let p2 = dir.path().join("b.jsonl");
        let seqs = vec![
            EventSequence::empty(24.0),
            EventSequence {
                horizon: 24.0,
                congestion: vec![
                    CongestionEvent { t: 7.25, sensor: 3 },
                    CongestionEvent { t: 11.123456789, sensor: 0 },
                    CongestionEvent { t: std::f64::consts::PI * 5.0, sensor: 2 },
                ],
                incidents: vec![IncidentEvent {
                    t: 7.0,
                    location: NetworkLocation::new("L1", 500.0),
                    z: 0.6,
                }],
            },
        ];
        save_dataset(&seqs, &p1).unwrap();
        let loaded = load_dataset(&p1).unwrap();
        save_dataset(&loaded, &p2).unwrap();
        let b1 = std::fs::read(&p1).unwrap();
        let b2 = std::fs::read(&p2).unwrap();
        assert_eq!(b1, b2, "save(load(f)) must reproduce f");
        let reloaded = load_dataset(&p2).unwrap();
        assert_eq!(loaded, reloaded);
    }

    #[test]
    fn load_rejects_beyond_horizon_and_unknown_fields() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("bad.jsonl");
        std::fs::write(&p, "{\"T\":24.0,\"congestion\":[{\"t\":25.0,\"sensor\":0}],\"incidents\":[]}\n")
            .unwrap();
        let err = load_dataset(&p).unwrap_err().to_string();
        assert!(err.contains("beyond horizon"), "{err}");

        std::fs::write(&p, "{\"T\":24.0,\"congestion\":[],\"incidents\":[],\"extra\":1}\n").unwrap();
        assert!(load_dataset(&p).is_err());

        std::fs::write(&p, "{\"T\":24.0,\"congestion\":[{\"t\":2.0,\"sensor\":0},{\"t\":1.0,\"sensor\":0}],\"incidents\":[]}\n").unwrap();
        let err = load_dataset(&p).unwrap_err().to_string();
        assert!(err.contains("not time-sorted"), "{err}");
    }

    #[test]
    fn empty_sequence_loads() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("empty.jsonl");
        std::fs::write(&p, "{\"T\":24.0,\"congestion\":[],\"incidents\":[]}\n").unwrap();
        let seqs = load_dataset(&p).unwrap();
        assert_eq!(seqs.len(), 1);
        assert_eq!(seqs[0].horizon, 24.0);
        assert!(seqs[0].congestion.is_empty());
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("ckpt.json");
        let config = ModelConfig {
            sensors: 2,
            heads: 2,
            value_dim: 3,
            hidden: 5,
            temporal_only: true,
            ..ModelConfig::default()
        };
        let params = ModelParams::init(config, 42);
        save_checkpoint(&params, &p).unwrap();
        let loaded = load_checkpoint(&p).unwrap();
        assert_eq!(params, loaded);
    }

    #[test]
    fn checkpoint_rejects_bad_version() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("ckpt.json");
        std::fs::write(&p, "{\"version\":99,\"config\":{\"sensors\":1,\"heads\":1,\"value_dim\":1,\"hidden\":1,\"temporal_only\":true,\"tod_bins\":0,\"tod_period_h\":24.0},\"blocks\":{}}").unwrap();
        let err = load_checkpoint(&p).unwrap_err().to_string();
        assert!(err.contains("version"), "{err}");
    }

    #[test]
    fn network_and_weights_load() {
        let dir = tempdir().unwrap();
        let np = dir.path().join("net.json");
        std::fs::write(
            &np,
            "{\"segments\":[{\"id\":\"L1\",\"length_m\":1200.0,\"to\":[\"L2\"]},{\"id\":\"L2\",\"length_m\":800.0,\"to\":[]}],\"sensors\":[{\"id\":0,\"segment\":\"L2\",\"offset_m\":300.0}]}",
        )
        .unwrap();
        let net = load_network(&np).unwrap();
        assert_eq!(net.segment_count(), 2);
        assert_eq!(net.sensor_count(), 1);

        let wp = dir.path().join("w.csv");
        std::fs::write(&wp, "bin_start_h,segment,weight\n0.0,L1,1.0\n0.0,L2,1.0\n").unwrap();
        let w = load_weights(&wp, &net, 2.0).unwrap();
        assert_eq!(w.weight_at(0.5, 0).unwrap(), 1.0);

        // unknown field rejected
        let bad = dir.path().join("bad.json");
        std::fs::write(&bad, "{\"segments\":[],\"sensors\":[],\"extra\":true}").unwrap();
        assert!(load_network(&bad).is_err());
    }

    #[test]
    fn counts_load_and_reject_gaps() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("c.csv");
        std::fs::write(&p, "sensor,bin_start_min,count\n0,0,3\n0,5,9\n1,0,2\n").unwrap();
        let series = load_counts(&p, 5.0).unwrap();
        assert_eq!(series.len(), 2);
        assert_eq!(series[0].counts, vec![3, 9]);

        std::fs::write(&p, "sensor,bin_start_min,count\n0,0,3\n0,10,9\n").unwrap();
        assert!(load_counts(&p, 5.0).is_err());
    }

    #[test]
    fn generator_spec_parses() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("gen.json");
        std::fs::write(&p, "{\"kind\":\"hawkes\",\"mu\":10.0,\"alpha\":1.0,\"beta\":1.0,\"T\":1.0,\"n\":50,\"seed\":7}")
            .unwrap();
        let spec = load_generator_spec(&p).unwrap();
        assert_eq!(spec.count, 50);
        assert_eq!(spec.max_events, stpp_core::simulate::DEFAULT_EVENT_CAP);
        assert!(matches!(spec.kind, GeneratorKind::Hawkes { mu, .. } if mu == 10.0));
    }
}
