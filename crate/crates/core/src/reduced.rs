//! The two-word chain on type counts `(X, Y, Z)`.
//!
//! With only words A and B alive every agent is of type A, B or AB. The
//! counts form a continuous-time Markov chain with eight reactions:
//!
//! | # | reaction          | jump (X, Y, Z) | rate × 2d      |
//! |---|-------------------|----------------|----------------|
//! | 1 | A + AB → 2 AB     | (−1, 0, +1)    | X·Z            |
//! | 2 | A + AB → 2 A      | (+1, 0, −1)    | 3·X·Z          |
//! | 3 | B + AB → 2 AB     | (0, −1, +1)    | Y·Z            |
//! | 4 | B + AB → 2 B      | (0, +1, −1)    | 3·Y·Z          |
//! | 5 | AB + AB → 2 A     | (+2, 0, −2)    | Z·(Z−1)        |
//! | 6 | AB + AB → 2 B     | (0, +2, −2)    | Z·(Z−1)        |
//! | 7 | A + B → A + AB    | (0, −1, +1)    | 2·X·Y          |
//! | 8 | A + B → B + AB    | (−1, 0, +1)    | 2·X·Y          |
//!
//! where `d = n − 1` in [`RateMode::Exact`] and `d = n` in
//! [`RateMode::Normalized`].
//!
//! Reactions are selected with exact integer weights, so the embedded jump
//! chain carries no floating-point bias.

use std::fmt;
use std::io::Write;

use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::model::{Configuration, WordId};
use crate::rng::{rng_from_seed, SimRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ReducedState {
    /// Agents knowing only A.
    pub x: u64,
    /// Agents knowing only B.
    pub y: u64,
    /// Agents knowing both.
    pub z: u64,
}

impl ReducedState {
    pub fn new(x: u64, y: u64, z: u64) -> Self {
        Self { x, y, z }
    }

    pub fn n(&self) -> u64 {
        self.x + self.y + self.z
    }

    pub fn winner(&self) -> Option<Winner> {
        let n = self.n();
        if self.x == n {
            Some(Winner::A)
        } else if self.y == n {
            Some(Winner::B)
        } else {
            None
        }
    }

    pub fn is_absorbing(&self) -> bool {
        self.winner().is_some()
    }

    /// `|X − Y| / n`.
    pub fn u(&self) -> f64 {
        self.x.abs_diff(self.y) as f64 / self.n() as f64
    }

    /// `Z / n`.
    pub fn z_frac(&self) -> f64 {
        self.z as f64 / self.n() as f64
    }

    fn apply(&mut self, jump: [i8; 3]) {
        self.x = self.x.wrapping_add_signed(jump[0] as i64);
        self.y = self.y.wrapping_add_signed(jump[1] as i64);
        self.z = self.z.wrapping_add_signed(jump[2] as i64);
    }
}

impl fmt::Display for ReducedState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.x, self.y, self.z)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Winner {
    A,
    B,
}

impl Winner {
    pub fn as_str(self) -> &'static str {
        match self {
            Winner::A => "A",
            Winner::B => "B",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RateMode {
    /// Listener uniform among the other `n − 1` agents: the chain of the full model.
    #[default]
    Exact,
    /// Rates divided by `n` instead of `n − 1`.
    Normalized,
}

impl RateMode {
    pub fn as_str(self) -> &'static str {
        match self {
            RateMode::Exact => "exact",
            RateMode::Normalized => "normalized",
        }
    }

    fn denominator(self, n: u64) -> f64 {
        match self {
            RateMode::Exact => (n - 1) as f64,
            RateMode::Normalized => n as f64,
        }
    }
}

impl std::str::FromStr for RateMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "exact" => Ok(RateMode::Exact),
            "normalized" => Ok(RateMode::Normalized),
            other => Err(format!("unknown rate mode {other:?} (expected exact or normalized)")),
        }
    }
}

/// One row of the reaction table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Reaction {
    pub label: &'static str,
    pub jump: [i8; 3],
}

pub const REACTIONS: [Reaction; 8] = [
    Reaction { label: "A+AB->2AB", jump: [-1, 0, 1] },
    Reaction { label: "A+AB->2A", jump: [1, 0, -1] },
    Reaction { label: "B+AB->2AB", jump: [0, -1, 1] },
    Reaction { label: "B+AB->2B", jump: [0, 1, -1] },
    Reaction { label: "AB+AB->2A", jump: [2, 0, -2] },
    Reaction { label: "AB+AB->2B", jump: [0, 2, -2] },
    Reaction { label: "A+B->A+AB", jump: [0, -1, 1] },
    Reaction { label: "A+B->B+AB", jump: [-1, 0, 1] },
];

/// Integer weights `2d × rate`.
pub fn reaction_weights(s: &ReducedState) -> [u64; 8] {
    let xz = s.x * s.z;
    let yz = s.y * s.z;
    let zz = s.z * s.z.saturating_sub(1);
    let xy2 = 2 * s.x * s.y;
    [xz, 3 * xz, yz, 3 * yz, zz, zz, xy2, xy2]
}

pub fn reaction_rates(s: &ReducedState, mode: RateMode) -> [f64; 8] {
    let scale = 1.0 / (2.0 * mode.denominator(s.n()));
    reaction_weights(s).map(|w| w as f64 * scale)
}

pub fn total_rate(s: &ReducedState, mode: RateMode) -> f64 {
    reaction_weights(s).iter().sum::<u64>() as f64 / (2.0 * mode.denominator(s.n()))
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ReducedError {
    #[error("state {0} is absorbing")]
    Absorbed(ReducedState),
    #[error("reduced chain needs n >= 2, got {0}")]
    TooSmall(u64),
    #[error("agent {agent} has a vocabulary outside the two words")]
    NotTwoWord { agent: usize },
    #[error("no consensus after {steps} steps (state {state} at t={time})")]
    Timeout { steps: u64, time: f64, state: ReducedState },
}

/// Direct-method step: returns the holding time and the index of the reaction fired.
pub fn gillespie_step(
    state: &mut ReducedState,
    mode: RateMode,
    rng: &mut impl Rng,
) -> Result<(f64, usize), ReducedError> {
    if state.is_absorbing() {
        return Err(ReducedError::Absorbed(*state));
    }
    let w = reaction_weights(state);
    let total: u64 = w.iter().sum();
    let rate = total as f64 / (2.0 * mode.denominator(state.n()));
    let e: f64 = rng.sample(Exp1);
    let mut pick = rng.random_range(0..total);
    let mut k = 0;
    while pick >= w[k] {
        pick -= w[k];
        k += 1;
    }
    state.apply(REACTIONS[k].jump);
    Ok((e / rate, k))
}

/// Result of one absorbed trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsensusRun {
    pub time: f64,
    pub winner: Winner,
    pub steps: u64,
}

/// Runs until absorption. `observe(t, state)` sees the initial state and
/// every post-jump state.
pub fn simulate_to_consensus(
    init: ReducedState,
    mode: RateMode,
    rng: &mut impl Rng,
    step_cap: Option<u64>,
    mut observe: impl FnMut(f64, &ReducedState),
) -> Result<ConsensusRun, ReducedError> {
    if init.n() < 2 {
        return Err(ReducedError::TooSmall(init.n()));
    }
    let mut s = init;
    let mut t = 0.0;
    let mut steps = 0u64;
    observe(t, &s);
    while s.winner().is_none() {
        if step_cap.is_some_and(|cap| steps >= cap) {
            return Err(ReducedError::Timeout { steps, time: t, state: s });
        }
        let (dt, _) = gillespie_step(&mut s, mode, rng)?;
        t += dt;
        steps += 1;
        observe(t, &s);
    }
    Ok(ConsensusRun { time: t, winner: s.winner().unwrap(), steps })
}

/// Consensus time from a seed with no observer.
pub fn consensus_from_seed(init: ReducedState, mode: RateMode, seed: u64) -> Result<ConsensusRun, ReducedError> {
    simulate_to_consensus(init, mode, &mut rng_from_seed(seed), None, |_, _| {})
}

/// Type counts of a configuration whose vocabularies are non-empty subsets of `{a, b}`.
pub fn project_full_to_reduced(config: &Configuration, a: WordId, b: WordId) -> Result<ReducedState, ReducedError> {
    let mut s = ReducedState::new(0, 0, 0);
    for v in 0..config.n() {
        match config.vocabulary(v) {
            [w] if *w == a => s.x += 1,
            [w] if *w == b => s.y += 1,
            [p, q] if (*p == a && *q == b) || (*p == b && *q == a) => s.z += 1,
            _ => return Err(ReducedError::NotTwoWord { agent: v }),
        }
    }
    Ok(s)
}

/// Configuration with `x` agents knowing `{A}`, then `y` knowing `{B}`, then
/// `z` knowing both. A is the word of agent 0 and B that of agent `n − 1`.
pub fn two_word_configuration(s: ReducedState) -> Result<(Configuration, WordId, WordId), crate::model::ModelError> {
    let n = s.n() as usize;
    let a = WordId(0);
    let b = WordId((n - 1) as u32);
    let mut vocab = Vec::with_capacity(n);
    for _ in 0..s.z {
        vocab.push(vec![a, b]);
    }
    for _ in 0..s.x {
        vocab.push(vec![a]);
    }
    for _ in 0..s.y {
        vocab.push(vec![b]);
    }
    let cfg = Configuration::from_vocabularies(vocab)?;
    Ok((cfg, a, b))
}

/// Drift of `u = |X − Y| / n`.
pub fn drift_u(s: &ReducedState, mode: RateMode) -> f64 {
    let nf = s.n() as f64;
    let (x, y, z) = (s.x as f64 / nf, s.y as f64 / nf, s.z as f64 / nf);
    let u = s.u();
    let normalized = match s.x.abs_diff(s.y) {
        0 => 2.0 * z * (1.0 - z) + 2.0 * z * (z - 1.0 / nf) + 2.0 * x * y,
        1 => u * z + z * (z - 1.0 / nf),
        _ => u * z,
    };
    normalized * mode_factor(s.n(), mode)
}

/// Drift of `b = Z/n − z*`.
pub fn drift_b(s: &ReducedState, mode: RateMode) -> f64 {
    let nf = s.n() as f64;
    let z = s.z_frac();
    let u = s.u();
    let root5 = 5f64.sqrt();
    let b = z - (root5 - 2.0);
    let normalized = 0.5 * (-b * (z + 2.0 + root5) - u * u) + 2.0 * z / nf;
    normalized * mode_factor(s.n(), mode)
}

fn mode_factor(n: u64, mode: RateMode) -> f64 {
    match mode {
        RateMode::Exact => n as f64 / (n - 1) as f64,
        RateMode::Normalized => 1.0,
    }
}

/// One row of the consensus-run table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsensusRow {
    pub n: u64,
    pub replicate: u64,
    pub seed: u64,
    #[serde(rename = "X0")]
    pub x0: u64,
    #[serde(rename = "Y0")]
    pub y0: u64,
    #[serde(rename = "Z0")]
    pub z0: u64,
    pub mode: RateMode,
    #[serde(rename = "Tc")]
    pub tc: f64,
    pub winner: Winner,
}

pub fn write_consensus_csv<W: Write>(rows: &[ConsensusRow], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    if rows.is_empty() {
        w.write_record(["n", "replicate", "seed", "X0", "Y0", "Z0", "mode", "Tc", "winner"])?;
    }
    w.flush()?;
    Ok(())
}

/// Convenience stream for one replicate.
pub fn replicate_run(
    init: ReducedState,
    mode: RateMode,
    master: u64,
    replicate: u64,
) -> Result<ConsensusRow, ReducedError> {
    let seed = crate::rng::replicate_seed(master, replicate);
    let mut rng: SimRng = rng_from_seed(seed);
    let run = simulate_to_consensus(init, mode, &mut rng, None, |_, _| {})?;
    Ok(ConsensusRow {
        n: init.n(),
        replicate,
        seed,
        x0: init.x,
        y0: init.y,
        z0: init.z,
        mode,
        tc: run.time,
        winner: run.winner,
    })
}
