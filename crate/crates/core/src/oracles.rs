//! Hand-defined player orderings: random, distance to the ball, and distance
//! to the ball with each attacker followed by its marker.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::diffcore::{child_seed, Rng};
use crate::error::{Error, Result};
use crate::gamedata::{TrajectorySequence, BALL, N_ATTACKERS, N_FRAMES, N_PLAYERS, T_OBS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderingKind {
    None,
    BallDistance,
    BallDistanceMarking,
    OracularFuture,
}

impl OrderingKind {
    pub const ALL: [OrderingKind; 4] = [
        OrderingKind::None,
        OrderingKind::BallDistance,
        OrderingKind::BallDistanceMarking,
        OrderingKind::OracularFuture,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OrderingKind::None => "none",
            OrderingKind::BallDistance => "ball_distance",
            OrderingKind::BallDistanceMarking => "ball_distance_marking",
            OrderingKind::OracularFuture => "oracular_future",
        }
    }
}

impl fmt::Display for OrderingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OrderingKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        OrderingKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown ordering `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceFrame {
    LastObserved,
    LastFuture,
}

impl ReferenceFrame {
    pub fn index(self) -> usize {
        match self {
            ReferenceFrame::LastObserved => T_OBS - 1,
            ReferenceFrame::LastFuture => N_FRAMES - 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrderingSpec {
    pub kind: OrderingKind,
    pub reference_frame: ReferenceFrame,
}

impl OrderingSpec {
    pub fn new(kind: OrderingKind) -> Self {
        let reference_frame = match kind {
            OrderingKind::OracularFuture => ReferenceFrame::LastFuture,
            _ => ReferenceFrame::LastObserved,
        };
        Self { kind, reference_frame }
    }

    pub fn validate(&self) -> Result<()> {
        let expected = OrderingSpec::new(self.kind).reference_frame;
        if self.reference_frame != expected {
            return Err(Error::Config(format!(
                "ordering {} must use reference frame {expected:?}",
                self.kind
            )));
        }
        Ok(())
    }
}

fn distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Distance of each of the 10 players to the ball at `frame`.
pub fn euclidean_distances_to_ball(seq: &TrajectorySequence, frame: usize) -> Result<Vec<f64>> {
    if frame >= seq.n_frames() {
        return Err(Error::Bounds(format!(
            "frame {frame} of a {}-frame sequence",
            seq.n_frames()
        )));
    }
    let ball = seq.position(frame, BALL);
    Ok((0..N_PLAYERS).map(|p| distance(seq.position(frame, p), ball)).collect())
}

fn ascending(indices: impl Iterator<Item = usize>, key: &[f64]) -> Vec<usize> {
    let mut v: Vec<usize> = indices.collect();
    v.sort_by(|&a, &b| key[a].total_cmp(&key[b]).then(a.cmp(&b)));
    v
}

/// FNV-1a, used to key per-sequence random orderings on the sequence id.
fn id_hash(id: &str) -> u64 {
    id.bytes().fold(0xCBF2_9CE4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

/// Player order (slot -> player index) for `spec`; `seed` only affects the
/// random ordering.
pub fn order_players(spec: &OrderingSpec, seq: &TrajectorySequence, seed: u64) -> Result<Vec<usize>> {
    spec.validate()?;
    if spec.kind == OrderingKind::None {
        let mut rng = Rng::new(child_seed(seed, id_hash(&seq.sequence_id)));
        return Ok(rng.permutation(N_PLAYERS));
    }
    let frame = spec.reference_frame.index();
    if frame >= seq.n_frames() {
        return Err(Error::Data(format!(
            "sequence `{}` has no frame {frame} for {} ordering",
            seq.sequence_id, spec.kind
        )));
    }
    let dist = euclidean_distances_to_ball(seq, frame)?;
    if spec.kind == OrderingKind::BallDistance {
        return Ok(ascending(0..N_PLAYERS, &dist));
    }
    let mut free: Vec<usize> = (N_ATTACKERS..N_PLAYERS).collect();
    let mut order = Vec::with_capacity(N_PLAYERS);
    for attacker in ascending(0..N_ATTACKERS, &dist) {
        let pos = seq.position(frame, attacker);
        let (slot, _) = free
            .iter()
            .enumerate()
            .map(|(slot, &d)| (slot, distance(seq.position(frame, d), pos)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("one defender per attacker");
        order.push(attacker);
        order.push(free.remove(slot));
    }
    Ok(order)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::Tensor;
    use crate::gamedata::{AgentRole, FRAME_INTERVAL, N_AGENTS};

    /// Sequence with every frame equal to `positions` (missing agents parked far away).
    fn static_seq(positions: &[(usize, [f64; 2])]) -> TrajectorySequence {
        let mut frame = [[20.0, 14.0]; N_AGENTS];
        for (i, p) in positions {
            frame[*i] = *p;
        }
        let data: Vec<f64> = (0..N_FRAMES).flat_map(|_| frame.iter().flatten().copied().collect::<Vec<_>>()).collect();
        TrajectorySequence {
            sequence_id: "t".into(),
            frames: Tensor::new(vec![N_FRAMES, N_AGENTS, 2], data).unwrap(),
            roles: AgentRole::canonical(),
            frame_interval: FRAME_INTERVAL,
        }
    }

    #[test]
    fn ball_distance_sorts_ascending() {
        let mut pos: Vec<(usize, [f64; 2])> = vec![(BALL, [0.0, 0.0]), (0, [5.0, 0.0]), (1, [2.0, 0.0]), (2, [9.0, 0.0])];
        for i in 3..10 {
            pos.push((i, [10.0 + i as f64, 0.0]));
        }
        let seq = static_seq(&pos);
        let order = order_players(&OrderingSpec::new(OrderingKind::BallDistance), &seq, 0).unwrap();
        assert_eq!(&order[..3], &[1, 0, 2]);
    }

    #[test]
    fn distances_three_four_five() {
        let seq = static_seq(&[(BALL, [0.0, 0.0]), (0, [3.0, 4.0]), (1, [0.0, 0.0])]);
        let d = euclidean_distances_to_ball(&seq, 2).unwrap();
        assert_eq!(d[0], 5.0);
        assert_eq!(d[1], 0.0);
        assert!(matches!(euclidean_distances_to_ball(&seq, 15), Err(Error::Bounds(_))));
    }

    #[test]
    fn marking_pairs_follow_attackers() {
        // A0 near the ball, A1 farther; D5 beside A0, D6 beside A1.
        let mut pos = vec![
            (BALL, [1.0, 1.0]),
            (0, [2.0, 1.0]),
            (1, [5.0, 1.0]),
            (5, [2.0, 2.0]),
            (6, [5.0, 2.0]),
        ];
        for (k, i) in [2, 3, 4].into_iter().enumerate() {
            pos.push((i, [15.0 + 3.0 * k as f64, 10.0]));
            pos.push((i + 5, [15.0 + 3.0 * k as f64, 11.0]));
        }
        let seq = static_seq(&pos);
        let order = order_players(&OrderingSpec::new(OrderingKind::BallDistanceMarking), &seq, 0).unwrap();
        assert_eq!(&order[..4], &[0, 5, 1, 6]);
    }

    #[test]
    fn greedy_marking_resolves_conflicts_in_attacker_order() {
        // Both A0 and A1 are nearest to D5; A0 is nearer the ball and takes it.
        let mut pos = vec![
            (BALL, [1.0, 1.0]),
            (0, [2.0, 1.0]),
            (1, [4.0, 1.0]),
            (5, [3.0, 1.2]),
            (6, [4.0, 4.0]),
        ];
        for (k, i) in [2, 3, 4].into_iter().enumerate() {
            pos.push((i, [15.0 + 3.0 * k as f64, 10.0]));
            pos.push((i + 5, [15.0 + 3.0 * k as f64, 11.0]));
        }
        let seq = static_seq(&pos);
        let d5 = (3.0f64 - 4.0).hypot(1.2 - 1.0);
        let d6 = (4.0f64 - 4.0).hypot(4.0 - 1.0);
        assert!(d5 < d6, "geometry: A1 is nearer D5 than D6");
        let order = order_players(&OrderingSpec::new(OrderingKind::BallDistanceMarking), &seq, 0).unwrap();
        assert_eq!(&order[..4], &[0, 5, 1, 6]);
    }

    #[test]
    fn reference_frame_invariant_enforced() {
        let bad = OrderingSpec {
            kind: OrderingKind::OracularFuture,
            reference_frame: ReferenceFrame::LastObserved,
        };
        assert!(bad.validate().is_err());
        assert_eq!(OrderingSpec::new(OrderingKind::OracularFuture).reference_frame, ReferenceFrame::LastFuture);
    }

    #[test]
    fn random_ordering_is_seeded() {
        let seq = static_seq(&[(BALL, [0.0, 0.0])]);
        let spec = OrderingSpec::new(OrderingKind::None);
        assert_eq!(order_players(&spec, &seq, 4).unwrap(), order_players(&spec, &seq, 4).unwrap());
        assert_ne!(order_players(&spec, &seq, 4).unwrap(), order_players(&spec, &seq, 5).unwrap());
    }

    #[test]
    fn kind_names_round_trip() {
        for k in OrderingKind::ALL {
            assert_eq!(k.name().parse::<OrderingKind>().unwrap(), k);
        }
        assert!("sideways".parse::<OrderingKind>().is_err());
    }
}
