//! Play sequences, their JSONL file format, dataset splitting and a
//! synthetic role-driven play generator.
//!
//! Agent indices are fixed: attackers `0..5`, defenders `5..10`, ball `10`.
//! In synthetic plays defender `5 + i` marks attacker `i`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffcore::{Rng, Tensor};
use crate::error::{Error, Result};

pub const COURT_LENGTH: f64 = 28.65;
pub const COURT_WIDTH: f64 = 15.24;
pub const BASKET: [f64; 2] = [26.75, 7.62];
pub const T_OBS: usize = 5;
pub const K_FUT: usize = 10;
pub const N_FRAMES: usize = T_OBS + K_FUT;
pub const N_AGENTS: usize = 11;
pub const N_PLAYERS: usize = 10;
pub const N_ATTACKERS: usize = 5;
pub const BALL: usize = 10;
pub const FRAME_INTERVAL: f64 = 0.4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentRole {
    Attacker,
    Defender,
    Ball,
}

impl AgentRole {
    /// Role of agent `index` under the fixed index convention.
    pub fn of_index(index: usize) -> AgentRole {
        match index {
            0..=4 => AgentRole::Attacker,
            5..=9 => AgentRole::Defender,
            _ => AgentRole::Ball,
        }
    }

    pub fn canonical() -> Vec<AgentRole> {
        (0..N_AGENTS).map(AgentRole::of_index).collect()
    }
}

/// One play: `frames` has shape `[T_OBS + K_FUT, N_AGENTS, 2]` in meters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySequence {
    pub sequence_id: String,
    pub frames: Tensor,
    pub roles: Vec<AgentRole>,
    pub frame_interval: f64,
}

impl TrajectorySequence {
    pub fn t_obs(&self) -> usize {
        T_OBS
    }

    pub fn k_fut(&self) -> usize {
        K_FUT
    }

    pub fn n_frames(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn position(&self, frame: usize, agent: usize) -> [f64; 2] {
        let off = (frame * N_AGENTS + agent) * 2;
        let d = self.frames.data();
        [d[off], d[off + 1]]
    }

    fn frame_slice(&self, frames: std::ops::Range<usize>, agents: usize) -> Tensor {
        let n = frames.len();
        let mut out = Vec::with_capacity(n * agents * 2);
        for t in frames {
            let start = t * N_AGENTS * 2;
            out.extend_from_slice(&self.frames.data()[start..start + agents * 2]);
        }
        Tensor::new(vec![n, agents, 2], out).expect("consistent slice")
    }

    /// `[T_OBS, N_AGENTS, 2]`
    pub fn observed(&self) -> Tensor {
        self.frame_slice(0..T_OBS, N_AGENTS)
    }

    /// `[K_FUT, N_AGENTS, 2]`
    pub fn future(&self) -> Tensor {
        self.frame_slice(T_OBS..N_FRAMES, N_AGENTS)
    }

    /// `[K_FUT, N_PLAYERS, 2]`, ball excluded.
    pub fn future_players(&self) -> Tensor {
        self.frame_slice(T_OBS..N_FRAMES, N_PLAYERS)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |rule: String| Error::Validation {
            sequence_id: self.sequence_id.clone(),
            rule,
        };
        if self.frames.shape() != [N_FRAMES, N_AGENTS, 2] {
            return Err(fail(format!(
                "frames must have shape [{N_FRAMES}, {N_AGENTS}, 2], got {:?}",
                self.frames.shape()
            )));
        }
        if self.roles != AgentRole::canonical() {
            return Err(fail(
                "roles must be 5 attackers, 5 defenders, then the ball".into(),
            ));
        }
        if !(self.frame_interval > 0.0) || !self.frame_interval.is_finite() {
            return Err(fail(format!(
                "frame_interval must be positive, got {}",
                self.frame_interval
            )));
        }
        for t in 0..N_FRAMES {
            for a in 0..N_AGENTS {
                let [x, y] = self.position(t, a);
                if !x.is_finite() || !y.is_finite() {
                    return Err(fail(format!("non-finite coordinate at frame {t}, agent {a}")));
                }
                if !(0.0..=COURT_LENGTH).contains(&x) || !(0.0..=COURT_WIDTH).contains(&y) {
                    return Err(fail(format!(
                        "out of court bounds: ({x}, {y}) at frame {t}, agent {a}"
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct SequenceRecord {
    sequence_id: String,
    frames: Vec<Vec<[f64; 2]>>,
    roles: Vec<AgentRole>,
    frame_interval: f64,
}

impl SequenceRecord {
    fn from_sequence(seq: &TrajectorySequence) -> Self {
        let frames = (0..seq.n_frames())
            .map(|t| (0..N_AGENTS).map(|a| seq.position(t, a)).collect())
            .collect();
        Self {
            sequence_id: seq.sequence_id.clone(),
            frames,
            roles: seq.roles.clone(),
            frame_interval: seq.frame_interval,
        }
    }

    fn into_sequence(self) -> Result<TrajectorySequence> {
        let invalid = |rule: String| Error::Validation {
            sequence_id: self.sequence_id.clone(),
            rule,
        };
        if self.frames.len() != N_FRAMES {
            return Err(invalid(format!("expected {N_FRAMES} frames, got {}", self.frames.len())));
        }
        if let Some(f) = self.frames.iter().find(|f| f.len() != N_AGENTS) {
            return Err(invalid(format!("expected {N_AGENTS} agents per frame, got {}", f.len())));
        }
        let data: Vec<f64> = self.frames.iter().flatten().flatten().copied().collect();
        Ok(TrajectorySequence {
            frames: Tensor::new(vec![N_FRAMES, N_AGENTS, 2], data)?,
            sequence_id: self.sequence_id,
            roles: self.roles,
            frame_interval: self.frame_interval,
        })
    }
}

/// Reads a JSONL sequence file, validating every sequence.
pub fn load_sequences(path: impl AsRef<Path>) -> Result<Vec<TrajectorySequence>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: SequenceRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        let seq = record.into_sequence()?;
        seq.validate()?;
        out.push(seq);
    }
    Ok(out)
}

/// Writes one JSON object per line; floats use the shortest round-trip form.
pub fn save_sequences(seqs: &[TrajectorySequence], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for seq in seqs {
        let line = serde_json::to_string(&SequenceRecord::from_sequence(seq))
            .map_err(|e| Error::Data(e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
    pub split_seed: u64,
}

const SPLIT_TRAIN: f64 = 60_708.0;
const SPLIT_VAL: f64 = 15_244.0;
const SPLIT_TEST: f64 = 19_050.0;

impl DatasetSplit {
    /// Sequences of each part, in split order.
    pub fn select<'a>(
        &self,
        seqs: &'a [TrajectorySequence],
    ) -> (Vec<&'a TrajectorySequence>, Vec<&'a TrajectorySequence>, Vec<&'a TrajectorySequence>) {
        let by_id: std::collections::HashMap<&str, &TrajectorySequence> =
            seqs.iter().map(|s| (s.sequence_id.as_str(), s)).collect();
        let pick = |ids: &[String]| ids.iter().filter_map(|id| by_id.get(id.as_str()).copied()).collect();
        (pick(&self.train), pick(&self.val), pick(&self.test))
    }
}

/// Random train/val/test partition in the 60708 : 15244 : 19050 proportions.
pub fn split_dataset(seqs: &[TrajectorySequence], seed: u64) -> Result<DatasetSplit> {
    let n = seqs.len();
    if n < 3 {
        return Err(Error::Size(format!("need at least 3 sequences to split, got {n}")));
    }
    let total = SPLIT_TRAIN + SPLIT_VAL + SPLIT_TEST;
    let n_val = ((n as f64 * SPLIT_VAL / total).round() as usize).max(1);
    let n_test = ((n as f64 * SPLIT_TEST / total).round() as usize).max(1);
    let n_train = n - n_val - n_test;
    let mut ids: Vec<String> = seqs.iter().map(|s| s.sequence_id.clone()).collect();
    Rng::new(seed).shuffle(&mut ids);
    let test = ids.split_off(n_train + n_val);
    let val = ids.split_off(n_train);
    Ok(DatasetSplit {
        train: ids,
        val,
        test,
        split_seed: seed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_sequences: usize,
    pub seed: u64,
    /// Per-frame probability that the possessor passes.
    pub pass_probability: f64,
    /// Fraction of the gap to the marking target a defender closes per frame.
    pub defender_gain: f64,
    /// Standard deviation of defender position noise, meters.
    pub noise_sigma: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_sequences: 2000,
            seed: 0,
            pass_probability: 0.05,
            defender_gain: 0.5,
            noise_sigma: 0.1,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_sequences == 0 {
            return Err(Error::Config("n_sequences must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.pass_probability) {
            return Err(Error::Config("pass_probability must be in [0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.defender_gain) {
            return Err(Error::Config("defender_gain must be in [0, 1]".into()));
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return Err(Error::Config("noise_sigma must be non-negative".into()));
        }
        Ok(())
    }
}

// Play dynamics.
const FORMATION_SPREAD: f64 = 1.5; // radians either side of the basket axis
const FORMATION_RADIUS: f64 = 7.0;
const VELOCITY_PERSISTENCE: f64 = 0.8;
const VELOCITY_JITTER: f64 = 0.25;
const SPOT_ATTRACTION: f64 = 0.3;
const DRIVE_SPEED: f64 = 0.8;
const DRIVE_STOP_RADIUS: f64 = 1.5;

fn clip(p: [f64; 2]) -> [f64; 2] {
    [p[0].clamp(0.0, COURT_LENGTH), p[1].clamp(0.0, COURT_WIDTH)]
}

pub fn midpoint_to_basket(p: [f64; 2]) -> [f64; 2] {
    [(p[0] + BASKET[0]) / 2.0, (p[1] + BASKET[1]) / 2.0]
}

fn simulate_play(config: &SynthConfig, index: usize) -> TrajectorySequence {
    let mut rng = Rng::new(config.seed).child(index as u64);
    let mut spots = [[0.0; 2]; N_ATTACKERS];
    let mut att = [[0.0; 2]; N_ATTACKERS];
    let mut vel = [[0.0; 2]; N_ATTACKERS];
    for i in 0..N_ATTACKERS {
        let base = -FORMATION_SPREAD + 2.0 * FORMATION_SPREAD * i as f64 / (N_ATTACKERS - 1) as f64;
        let angle = base + rng.normal(0.0, 0.1);
        let radius = FORMATION_RADIUS + rng.normal(0.0, 0.7);
        spots[i] = [BASKET[0] - angle.cos() * radius, BASKET[1] + angle.sin() * radius];
        att[i] = clip([spots[i][0] + rng.normal(0.0, 0.8), spots[i][1] + rng.normal(0.0, 0.8)]);
        vel[i] = [rng.normal(0.0, VELOCITY_JITTER), rng.normal(0.0, VELOCITY_JITTER)];
    }
    let mut def = [[0.0; 2]; N_ATTACKERS];
    for i in 0..N_ATTACKERS {
        let m = midpoint_to_basket(att[i]);
        def[i] = clip([m[0] + rng.normal(0.0, 1.0), m[1] + rng.normal(0.0, 1.0)]);
    }
    let mut possessor = rng.index(N_ATTACKERS);

    let rho = VELOCITY_PERSISTENCE;
    let mut data = Vec::with_capacity(N_FRAMES * N_AGENTS * 2);
    for t in 0..N_FRAMES {
        if t > 0 {
            if rng.bernoulli(config.pass_probability) {
                possessor = (possessor + 1 + rng.index(N_ATTACKERS - 1)) % N_ATTACKERS;
            }
            for i in 0..N_ATTACKERS {
                let (pull, jitter) = if i == possessor {
                    let to = [BASKET[0] - att[i][0], BASKET[1] - att[i][1]];
                    let dist = to[0].hypot(to[1]);
                    let drive = if dist > DRIVE_STOP_RADIUS {
                        [DRIVE_SPEED * to[0] / dist, DRIVE_SPEED * to[1] / dist]
                    } else {
                        [0.0, 0.0]
                    };
                    (drive, VELOCITY_JITTER * (1.0 - rho))
                } else {
                    let to = [spots[i][0] - att[i][0], spots[i][1] - att[i][1]];
                    ([SPOT_ATTRACTION * to[0], SPOT_ATTRACTION * to[1]], VELOCITY_JITTER)
                };
                for d in 0..2 {
                    vel[i][d] = rho * vel[i][d] + (1.0 - rho) * pull[d] + rng.normal(0.0, jitter);
                }
                att[i] = clip([att[i][0] + vel[i][0], att[i][1] + vel[i][1]]);
            }
            for i in 0..N_ATTACKERS {
                let m = midpoint_to_basket(att[i]);
                let mut next = [0.0; 2];
                for d in 0..2 {
                    next[d] = def[i][d]
                        + config.defender_gain * (m[d] - def[i][d])
                        + if config.noise_sigma > 0.0 { rng.normal(0.0, config.noise_sigma) } else { 0.0 };
                }
                def[i] = clip(next);
            }
        }
        for p in att.iter().chain(def.iter()) {
            data.extend_from_slice(p);
        }
        data.extend_from_slice(&att[possessor]);
    }
    TrajectorySequence {
        sequence_id: format!("synth-{}-{index:06}", config.seed),
        frames: Tensor::new(vec![N_FRAMES, N_AGENTS, 2], data).expect("fixed shape"),
        roles: AgentRole::canonical(),
        frame_interval: FRAME_INTERVAL,
    }
}

/// Simulates `config.n_sequences` plays. Each play draws from its own child
/// stream, so the output does not depend on the worker count.
pub fn generate_synthetic(config: &SynthConfig) -> Result<Vec<TrajectorySequence>> {
    config.validate()?;
    Ok((0..config.n_sequences)
        .into_par_iter()
        .map(|i| simulate_play(config, i))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> SynthConfig {
        SynthConfig {
            n_sequences: 20,
            seed,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn generator_is_deterministic_and_valid() {
        let a = generate_synthetic(&small(7)).unwrap();
        let b = generate_synthetic(&small(7)).unwrap();
        assert_eq!(a, b);
        for s in &a {
            s.validate().unwrap();
        }
        assert_ne!(a, generate_synthetic(&small(8)).unwrap());
    }

    #[test]
    fn unit_gain_defenders_sit_on_midpoints() {
        let cfg = SynthConfig {
            defender_gain: 1.0,
            noise_sigma: 0.0,
            ..small(3)
        };
        for s in generate_synthetic(&cfg).unwrap() {
            for t in 1..N_FRAMES {
                for i in 0..N_ATTACKERS {
                    assert_eq!(s.position(t, 5 + i), midpoint_to_basket(s.position(t, i)));
                }
            }
        }
    }

    #[test]
    fn config_validation() {
        assert!(SynthConfig { n_sequences: 0, ..small(1) }.validate().is_err());
        assert!(SynthConfig { pass_probability: 1.5, ..small(1) }.validate().is_err());
        assert!(SynthConfig { noise_sigma: -0.1, ..small(1) }.validate().is_err());
    }

    #[test]
    fn split_proportions() {
        let mut cfg = small(1);
        cfg.n_sequences = 1000;
        let seqs = generate_synthetic(&cfg).unwrap();
        let s = split_dataset(&seqs, 1).unwrap();
        assert!((s.train.len() as i64 - 639).abs() <= 1);
        assert!((s.val.len() as i64 - 160).abs() <= 1);
        assert!((s.test.len() as i64 - 201).abs() <= 1);
        assert_eq!(s, split_dataset(&seqs, 1).unwrap());
        assert_ne!(s, split_dataset(&seqs, 2).unwrap());
        assert!(matches!(split_dataset(&seqs[..2], 1), Err(Error::Size(_))));
    }

    #[test]
    fn validation_rejects_out_of_court() {
        let mut s = generate_synthetic(&small(1)).unwrap().remove(0);
        s.frames.set(&[3, 2, 0], 30.0);
        let err = s.validate().unwrap_err().to_string();
        assert!(err.contains("out of court bounds"), "{err}");
        assert!(err.contains(&s.sequence_id));
    }
}
