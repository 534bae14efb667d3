//! Simulated ordering errors: swapping two players or moving one player to a
//! wrong slot, either nearby ("light") or far away ("heavy").

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::diffcore::Rng;
use crate::error::{Error, Result};
use crate::metrics::validate_permutation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbKind {
    LightSwap,
    LightInsert,
    HeavySwap,
    HeavyInsert,
}

impl PerturbKind {
    pub const ALL: [PerturbKind; 4] = [
        PerturbKind::LightSwap,
        PerturbKind::LightInsert,
        PerturbKind::HeavySwap,
        PerturbKind::HeavyInsert,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PerturbKind::LightSwap => "light_swap",
            PerturbKind::LightInsert => "light_insert",
            PerturbKind::HeavySwap => "heavy_swap",
            PerturbKind::HeavyInsert => "heavy_insert",
        }
    }

    /// Inclusive slot-displacement range.
    pub fn displacement(self) -> (usize, usize) {
        match self {
            PerturbKind::LightSwap => (1, 1),
            PerturbKind::LightInsert => (1, 2),
            PerturbKind::HeavySwap | PerturbKind::HeavyInsert => (3, 5),
        }
    }

    fn is_swap(self) -> bool {
        matches!(self, PerturbKind::LightSwap | PerturbKind::HeavySwap)
    }
}

impl FromStr for PerturbKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PerturbKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown perturbation `{s}`")))
    }
}

/// A perturbation, or several applied in sequence, hitting each ordering with
/// `probability`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbSpec {
    pub kinds: Vec<PerturbKind>,
    pub probability: f64,
    pub seed: u64,
}

impl PerturbSpec {
    pub fn new(kinds: Vec<PerturbKind>, seed: u64) -> Self {
        Self {
            kinds,
            probability: 1.0,
            seed,
        }
    }

    /// Parses `light_swap` or a combination such as `light_swap+light_insert`.
    pub fn parse(text: &str, seed: u64) -> Result<Self> {
        let kinds = text
            .split('+')
            .map(|s| s.trim().parse())
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::new(kinds, seed))
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.probability) {
            return Err(Error::Config(format!(
                "perturbation probability {} outside [0, 1]",
                self.probability
            )));
        }
        if self.kinds.is_empty() {
            return Err(Error::Config("empty perturbation".into()));
        }
        Ok(())
    }

    pub fn label(&self) -> String {
        self.kinds.iter().map(|k| k.name()).collect::<Vec<_>>().join("+")
    }
}

impl fmt::Display for PerturbSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// Removes the element at `from` and reinserts it at `to`.
pub fn move_element(order: &mut Vec<usize>, from: usize, to: usize) {
    let v = order.remove(from);
    order.insert(to, v);
}

fn apply_one(kind: PerturbKind, order: &mut Vec<usize>, rng: &mut Rng) {
    let n = order.len();
    let (lo, hi) = kind.displacement();
    let hi = hi.min(n - 1);
    if lo > hi {
        return;
    }
    let d = lo + rng.index(hi - lo + 1);
    if kind.is_swap() {
        let i = rng.index(n - d);
        order.swap(i, i + d);
    } else {
        // all ordered (from, to) pairs at distance d are equally likely
        let pick = rng.index(2 * (n - d));
        let (from, to) = if pick < n - d {
            (pick, pick + d)
        } else {
            (pick - (n - d) + d, pick - (n - d))
        };
        move_element(order, from, to);
    }
}

/// Applies `spec` to `order` using `rng`.
pub fn apply_perturbation(spec: &PerturbSpec, order: &[usize], rng: &mut Rng) -> Result<Vec<usize>> {
    spec.validate()?;
    validate_permutation(order, order.len())?;
    let mut out = order.to_vec();
    if out.len() < 2 || !rng.bernoulli(spec.probability) {
        return Ok(out);
    }
    for &kind in &spec.kinds {
        apply_one(kind, &mut out, rng);
    }
    Ok(out)
}
