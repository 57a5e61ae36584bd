//! Empirical checks of the concentration machinery.
//!
//! * Compensator tracking: for a jump process with rates `q_i` and a scalar
//!   functional `f`, the drift `μ = Σ q_i Δ_i f` and diffusivity
//!   `σ² = Σ q_i (Δ_i f)²` are constant between jumps, so their path integrals
//!   are exact piecewise-linear functions.
//! * The exponential martingale bound: if `λ c_Δ ≤ 1/2` then
//!   `P(±(X_t − X_0 − ∫μ) ≥ a + λ ∫σ² for some t) ≤ e^{−λa}`.
//! * Poisson moderate deviations and last-passage times of a Poisson process
//!   above/below `λt ± κ(λt)^{1/2+α}`.
//! * Two elementary inequalities (an exponential tail integral and a
//!   reciprocal bound).
//! * The branching process with immigration that dominates cluster growth,
//!   simulated exactly with coupled randomness so that pathwise comparisons
//!   between variants are meaningful.
//!
//! Every tail check produces [`TailCell`]s: a cell passes when the empirical
//! frequency is at most `bound + 3·SE`, with the binomial SE evaluated at the
//! bound. Cells whose bound exceeds 1 pass automatically.

use std::collections::BTreeMap;
use std::io::Write;

use rand::Rng;
use rand_distr::{Binomial, Distribution, Exp1, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{DiscreteCDF, Poisson as PoissonLaw};
use statrs::function::gamma::{gamma, gamma_ur};

use crate::model::{Configuration, WordId};
use crate::reduced::{reaction_rates, RateMode, ReducedState, REACTIONS};
use crate::rng::{labelled_seed, replicate_seed, rng_from_seed};

/// Slack, in standard errors, granted to every Monte Carlo tail cell.
pub const SE_SLACK: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConcError {
    #[error("jump of size {size} exceeds the declared bound {bound}")]
    JumpTooLarge { size: f64, bound: f64 },
    #[error("λ·c_Δ = {0} exceeds 1/2")]
    LambdaTooLarge(f64),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("no paths supplied")]
    NoPaths,
}

// ---------------------------------------------------------------------------
// tail cells and reports

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailCell {
    pub params: BTreeMap<String, f64>,
    pub empirical: f64,
    pub bound: f64,
    pub se: f64,
    /// Number of Monte Carlo trials; 0 for exact evaluations.
    pub trials: u64,
    pub pass: bool,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extra: BTreeMap<String, f64>,
}

pub fn params<const N: usize>(pairs: [(&str, f64); N]) -> BTreeMap<String, f64> {
    pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

impl TailCell {
    /// Monte Carlo frequency `hits / trials` against `bound`.
    pub fn monte_carlo(params: BTreeMap<String, f64>, hits: u64, trials: u64, bound: f64) -> Self {
        let empirical = hits as f64 / trials.max(1) as f64;
        let se = crate::stats::binomial_se(bound.min(1.0), trials.max(1) as usize);
        let pass = bound >= 1.0 || empirical <= bound + SE_SLACK * se;
        Self { params, empirical, bound, se, trials, pass, extra: BTreeMap::new() }
    }

    /// Exactly computed value against `bound`, with a relative tolerance for rounding.
    pub fn exact(params: BTreeMap<String, f64>, value: f64, bound: f64) -> Self {
        let pass = bound >= 1.0 || value <= bound * (1.0 + 1e-9) + 1e-300;
        Self { params, empirical: value, bound, se: 0.0, trials: 0, pass, extra: BTreeMap::new() }
    }

    /// Monte Carlo frequency that must stay strictly below a fixed rate, no slack.
    pub fn strict_rate(params: BTreeMap<String, f64>, hits: u64, trials: u64, limit: f64) -> Self {
        let empirical = hits as f64 / trials.max(1) as f64;
        let se = crate::stats::binomial_se(empirical, trials.max(1) as usize);
        Self { params, empirical, bound: limit, se, trials, pass: empirical < limit, extra: BTreeMap::new() }
    }

    pub fn with_extra(mut self, key: &str, value: f64) -> Self {
        self.extra.insert(key.to_string(), value);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailBoundReport {
    pub check: String,
    pub cells: Vec<TailCell>,
}

impl TailBoundReport {
    pub fn new(check: impl Into<String>) -> Self {
        Self { check: check.into(), cells: Vec::new() }
    }

    pub fn violations(&self) -> usize {
        self.cells.iter().filter(|c| !c.pass).count()
    }

    pub fn all_pass(&self) -> bool {
        self.violations() == 0
    }

    pub fn write_json<W: Write>(&self, out: W) -> serde_json::Result<()> {
        serde_json::to_writer_pretty(out, self)
    }
}

// ---------------------------------------------------------------------------
// jump processes and compensators

/// A continuous-time Markov jump process given by its transitions.
pub trait JumpProcess {
    type State: Clone;
    /// Pushes `(rate, post-jump state)` for every transition out of `s`.
    fn transitions(&self, s: &Self::State, out: &mut Vec<(f64, Self::State)>);
}

/// Counting process with constant intensity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoissonCounter {
    pub rate: f64,
}

impl JumpProcess for PoissonCounter {
    type State = u64;
    fn transitions(&self, s: &u64, out: &mut Vec<(f64, u64)>) {
        out.push((self.rate, s + 1));
    }
}

/// The two-word chain as a [`JumpProcess`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReducedChain {
    pub mode: RateMode,
}

impl JumpProcess for ReducedChain {
    type State = ReducedState;
    fn transitions(&self, s: &ReducedState, out: &mut Vec<(f64, ReducedState)>) {
        for (rate, r) in reaction_rates(s, self.mode).into_iter().zip(REACTIONS) {
            if rate > 0.0 {
                let next = ReducedState::new(
                    s.x.wrapping_add_signed(r.jump[0] as i64),
                    s.y.wrapping_add_signed(r.jump[1] as i64),
                    s.z.wrapping_add_signed(r.jump[2] as i64),
                );
                out.push((rate, next));
            }
        }
    }
}

/// A trajectory on `[0, horizon]`: `states[0]` is the initial state and
/// `states[k]` the state after the jump at `times[k − 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct JumpPath<S> {
    pub times: Vec<f64>,
    pub states: Vec<S>,
    pub horizon: f64,
}

/// Gillespie simulation up to `horizon` (or until no transition is possible).
pub fn simulate_jump_path<P: JumpProcess>(
    process: &P,
    init: P::State,
    horizon: f64,
    rng: &mut impl Rng,
) -> JumpPath<P::State> {
    let mut path = JumpPath { times: Vec::new(), states: vec![init], horizon };
    let mut out = Vec::new();
    let mut t = 0.0;
    loop {
        out.clear();
        process.transitions(path.states.last().unwrap(), &mut out);
        let total: f64 = out.iter().map(|(q, _)| q).sum();
        if total <= 0.0 {
            break;
        }
        t += rng.sample::<f64, _>(Exp1) / total;
        if t > horizon {
            break;
        }
        let mut pick = rng.random::<f64>() * total;
        let mut k = 0;
        while k + 1 < out.len() && pick >= out[k].0 {
            pick -= out[k].0;
            k += 1;
        }
        path.times.push(t);
        path.states.push(out.swap_remove(k).1);
    }
    path
}

/// Functional value before and after a time, with compensator integrals at that time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompSample {
    pub t: f64,
    pub before: f64,
    pub after: f64,
    /// `∫₀ᵗ μ_s ds`.
    pub drift: f64,
    /// `∫₀ᵗ σ²_s ds`.
    pub diffusivity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompensatedPath {
    pub initial: f64,
    /// Initial time, every jump time, then the horizon.
    pub samples: Vec<CompSample>,
    pub c_delta: f64,
    /// Largest total jump rate seen along the path.
    pub c_q: f64,
    /// Largest diffusivity seen along the path.
    pub max_sigma2: f64,
}

impl CompensatedPath {
    /// Does `sign·(X_t − X_0 − ∫μ) ≥ a + λ∫σ²` hold at some time?
    ///
    /// Both sides are affine between jumps, so checking the one-sided limits
    /// at each jump and the endpoints is exact.
    pub fn exceeds(&self, lambda: f64, a: f64, sign: Sign) -> bool {
        let s = sign.factor();
        self.samples.iter().any(|p| {
            let rhs = a + lambda * p.diffusivity;
            let d_before = s * (p.before - self.initial - p.drift);
            let d_after = s * (p.after - self.initial - p.drift);
            d_before >= rhs || d_after >= rhs
        })
    }

    pub fn final_sample(&self) -> CompSample {
        *self.samples.last().expect("at least the initial sample")
    }
}

/// Exact compensator of `f` along `path`.
pub fn track_compensator<P: JumpProcess>(
    process: &P,
    path: &JumpPath<P::State>,
    f: impl Fn(&P::State) -> f64,
    c_delta: f64,
) -> Result<CompensatedPath, ConcError> {
    let mut out = Vec::new();
    let initial = f(&path.states[0]);
    let mut samples = Vec::with_capacity(path.states.len() + 1);
    samples.push(CompSample { t: 0.0, before: initial, after: initial, drift: 0.0, diffusivity: 0.0 });
    let (mut drift, mut diff, mut t) = (0.0, 0.0, 0.0);
    let (mut c_q, mut max_sigma2) = (0.0f64, 0.0f64);
    let tol = c_delta * 1e-9 + 1e-12;
    for (k, s) in path.states.iter().enumerate() {
        let fs = f(s);
        out.clear();
        process.transitions(s, &mut out);
        let (mut mu, mut sigma2, mut q) = (0.0, 0.0, 0.0);
        for (rate, next) in &out {
            let d = f(next) - fs;
            if d.abs() > c_delta + tol {
                return Err(ConcError::JumpTooLarge { size: d.abs(), bound: c_delta });
            }
            mu += rate * d;
            sigma2 += rate * d * d;
            q += rate;
        }
        c_q = c_q.max(q);
        max_sigma2 = max_sigma2.max(sigma2);
        let end = path.times.get(k).copied().unwrap_or(path.horizon);
        drift += mu * (end - t);
        diff += sigma2 * (end - t);
        t = end;
        let after = path.states.get(k + 1).map(&f).unwrap_or(fs);
        samples.push(CompSample { t, before: fs, after, drift, diffusivity: diff });
    }
    debug_assert!(max_sigma2 <= c_q * c_delta * c_delta * (1.0 + 1e-9) + 1e-15);
    Ok(CompensatedPath { initial, samples, c_delta, c_q, max_sigma2 })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub fn factor(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }
}

/// Exceedance frequency of the exponential martingale bound over an ensemble.
pub fn check_azuma(paths: &[CompensatedPath], lambda: f64, a: f64, sign: Sign) -> Result<TailCell, ConcError> {
    let first = paths.first().ok_or(ConcError::NoPaths)?;
    let mut tally = AzumaTally::new(lambda, a, sign, first.c_delta)?;
    for p in paths {
        tally.add(p);
    }
    Ok(tally.cell())
}

/// Streaming form of [`check_azuma`], for ensembles too large to hold.
#[derive(Debug, Clone, PartialEq)]
pub struct AzumaTally {
    pub lambda: f64,
    pub a: f64,
    pub sign: Sign,
    pub c_delta: f64,
    pub hits: u64,
    pub trials: u64,
}

impl AzumaTally {
    pub fn new(lambda: f64, a: f64, sign: Sign, c_delta: f64) -> Result<Self, ConcError> {
        if !(lambda > 0.0 && a > 0.0) {
            return Err(ConcError::InvalidParameter(format!("need λ > 0 and a > 0, got {lambda}, {a}")));
        }
        if lambda * c_delta > 0.5 + 1e-12 {
            return Err(ConcError::LambdaTooLarge(lambda * c_delta));
        }
        Ok(Self { lambda, a, sign, c_delta, hits: 0, trials: 0 })
    }

    pub fn add(&mut self, path: &CompensatedPath) {
        assert!(path.c_delta <= self.c_delta * (1.0 + 1e-12), "path has a larger jump bound than the tally");
        self.trials += 1;
        self.hits += path.exceeds(self.lambda, self.a, self.sign) as u64;
    }

    pub fn merge(&mut self, other: &AzumaTally) {
        self.hits += other.hits;
        self.trials += other.trials;
    }

    pub fn cell(&self) -> TailCell {
        let bound = (-self.lambda * self.a).exp();
        TailCell::monte_carlo(
            params([("lambda", self.lambda), ("a", self.a), ("sign", self.sign.factor()), ("c_delta", self.c_delta)]),
            self.hits,
            self.trials,
            bound,
        )
    }
}

/// Azuma cells for `f` over an ensemble of simulated paths of `process`.
///
/// `cells` lists `(λ, a)` pairs; each is checked for both signs.
#[allow(clippy::too_many_arguments)]
pub fn azuma_ensemble<P>(
    process: &P,
    init: P::State,
    horizon: f64,
    f: impl Fn(&P::State) -> f64 + Sync,
    c_delta: f64,
    cells: &[(f64, f64)],
    paths: u64,
    seed: u64,
) -> Result<Vec<TailCell>, ConcError>
where
    P: JumpProcess + Sync,
    P::State: Send + Sync,
{
    let mut proto = Vec::new();
    for &(lambda, a) in cells {
        for sign in [Sign::Plus, Sign::Minus] {
            proto.push(AzumaTally::new(lambda, a, sign, c_delta)?);
        }
    }
    let tallies = (0..paths)
        .into_par_iter()
        .map(|i| -> Result<Vec<AzumaTally>, ConcError> {
            let mut rng = rng_from_seed(replicate_seed(seed, i));
            let path = simulate_jump_path(process, init.clone(), horizon, &mut rng);
            let comp = track_compensator(process, &path, &f, c_delta)?;
            let mut local = proto.clone();
            for t in local.iter_mut() {
                t.add(&comp);
            }
            Ok(local)
        })
        .try_reduce(
            || proto.clone(),
            |mut acc, part| {
                for (a, b) in acc.iter_mut().zip(&part) {
                    a.merge(b);
                }
                Ok(acc)
            },
        )?;
    Ok(tallies.iter().map(AzumaTally::cell).collect())
}

// ---------------------------------------------------------------------------
// Poisson tails

fn poisson_cdf(lambda: f64, k: i64) -> f64 {
    if k < 0 {
        0.0
    } else {
        PoissonLaw::new(lambda).expect("positive mean").cdf(k as u64)
    }
}

/// Largest integer strictly below `v`, treating values within 1e-9 of an integer as that integer.
fn floor_strict(v: f64) -> i64 {
    let r = v.round();
    if (v - r).abs() < 1e-9 {
        r as i64 - 1
    } else {
        v.floor() as i64
    }
}

/// Largest integer at most `v`, with the same rounding guard.
fn floor_weak(v: f64) -> i64 {
    let r = v.round();
    if (v - r).abs() < 1e-9 {
        r as i64
    } else {
        v.floor() as i64
    }
}

/// Moderate deviations of Poisson(λ): `P(X < λ − x√λ) ≤ e^{−x²/2}` and
/// `P(X > λ + x√λ) ≤ e^{−x²/3}` for `0 < x ≤ √λ`.
///
/// Each `(λ, x)` gets an exact cell from the Poisson CDF and, when
/// `samples > 0`, a Monte Carlo cell. `x` values above `√λ` are skipped;
/// `include_boundary` adds `x = √λ`.
pub fn poisson_tail_check(
    lambdas: &[f64],
    xs: &[f64],
    include_boundary: bool,
    samples: u64,
    seed: u64,
) -> Result<TailBoundReport, ConcError> {
    let mut report = TailBoundReport::new("poisson-tail");
    for (li, &lambda) in lambdas.iter().enumerate() {
        if !(lambda > 0.0) {
            return Err(ConcError::InvalidParameter(format!("Poisson mean must be positive, got {lambda}")));
        }
        let root = lambda.sqrt();
        let mut grid: Vec<f64> = xs.iter().copied().filter(|&x| x > 0.0 && x <= root).collect();
        if include_boundary && !grid.iter().any(|&x| (x - root).abs() < 1e-12) {
            grid.push(root);
        }
        let draws: Vec<u64> = if samples > 0 {
            let law = Poisson::new(lambda).map_err(|e| ConcError::InvalidParameter(e.to_string()))?;
            let mut rng = rng_from_seed(replicate_seed(labelled_seed(seed, "poisson-tail"), li as u64));
            (0..samples).map(|_| law.sample(&mut rng) as u64).collect()
        } else {
            Vec::new()
        };
        for x in grid {
            let lo = floor_strict(lambda - x * root);
            let hi = floor_weak(lambda + x * root);
            let lower_bound = (-x * x / 2.0).exp();
            let upper_bound = (-x * x / 3.0).exp();
            let p_lower = poisson_cdf(lambda, lo);
            let p_upper = 1.0 - poisson_cdf(lambda, hi);
            let base = |side: f64, mc: f64| params([("lambda", lambda), ("x", x), ("side", side), ("monte_carlo", mc)]);
            report.cells.push(TailCell::exact(base(-1.0, 0.0), p_lower, lower_bound));
            report.cells.push(TailCell::exact(base(1.0, 0.0), p_upper, upper_bound));
            if samples > 0 {
                let below = draws.iter().filter(|&&d| (d as i64) <= lo).count() as u64;
                let above = draws.iter().filter(|&&d| (d as i64) > hi).count() as u64;
                report.cells.push(TailCell::monte_carlo(base(-1.0, 1.0), below, samples, lower_bound));
                report.cells.push(TailCell::monte_carlo(base(1.0, 1.0), above, samples, upper_bound));
            }
        }
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// last passage

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LastPassageConfig {
    pub lambda: f64,
    pub alpha: f64,
    /// Curve half-width factor: curves are `λt ± κ(λt)^{1/2+α}`.
    pub kappa: f64,
    pub times: Vec<f64>,
    pub paths: u64,
    pub seed: u64,
}

impl LastPassageConfig {
    pub fn new(lambda: f64, alpha: f64, times: Vec<f64>, paths: u64, seed: u64) -> Self {
        Self { lambda, alpha, kappa: 0.5, times, paths, seed }
    }
}

/// `6 t^{1−2α} e^{−(λt)^{2α}/3}`, bound on `P(τ_above > t)`.
pub fn last_passage_bound_above(lambda: f64, alpha: f64, t: f64) -> f64 {
    6.0 * t.powf(1.0 - 2.0 * alpha) * (-(lambda * t).powf(2.0 * alpha) / 3.0).exp()
}

/// `4 t^{1−2α} e^{−(λt)^{2α}/2}`, bound on `P(τ_below > t)`.
pub fn last_passage_bound_below(lambda: f64, alpha: f64, t: f64) -> f64 {
    4.0 * t.powf(1.0 - 2.0 * alpha) * (-(lambda * t).powf(2.0 * alpha) / 2.0).exp()
}

/// Whether a Poisson path of rate `lambda`, observed on `[0, 4t]`, crosses
/// the upper / lower curve at some time after `t`.
fn late_crossings(jumps: &[f64], lambda: f64, beta: f64, kappa: f64, t: f64, horizon: f64) -> (bool, bool) {
    let width = |s: f64| kappa * (lambda * s).powf(beta);
    let above = |s: f64, n: f64| n - lambda * s >= width(s);
    let below = |s: f64, n: f64| n - lambda * s <= -width(s);
    let start = jumps.partition_point(|&s| s <= t);
    let n_t = start as f64;
    // upper curve increases, so on each constant stretch the gap is largest at its left end
    let mut up = above(t, n_t);
    // the lower curve is convex, so on each constant stretch it is largest at an endpoint
    let mut down = below(t, n_t);
    for (k, &s) in jumps[start..].iter().enumerate() {
        if s > horizon {
            break;
        }
        let before = n_t + k as f64;
        up = up || above(s, before + 1.0);
        down = down || below(s, before);
        if up && down {
            break;
        }
    }
    let last = n_t + jumps[start..].iter().filter(|&&s| s <= horizon).count() as f64;
    down = down || below(horizon, last);
    (up, down)
}

/// Empirical last-passage tails of a Poisson process against their closed-form bounds.
///
/// Each path is simulated on `[0, 4t]`; missing crossings after `4t` biases
/// the estimate down by at most the bound evaluated at `4t`, reported as
/// `truncation_bias`.
pub fn last_passage_check(cfg: &LastPassageConfig) -> Result<TailBoundReport, ConcError> {
    let LastPassageConfig { lambda, alpha, kappa, ref times, paths, seed } = *cfg;
    if lambda < 1.0 || !(alpha > 0.0 && alpha <= 0.5) || !(kappa > 0.0) {
        return Err(ConcError::InvalidParameter(format!(
            "need λ ≥ 1, α ∈ (0, 1/2], κ > 0; got {lambda}, {alpha}, {kappa}"
        )));
    }
    if paths == 0 {
        return Err(ConcError::NoPaths);
    }
    let beta = 0.5 + alpha;
    let mut report = TailBoundReport::new("last-passage");
    for (ti, &t) in times.iter().enumerate() {
        if t.powf(2.0 * alpha) < 6.0 {
            return Err(ConcError::InvalidParameter(format!("t^(2α) must be at least 6, got t = {t}")));
        }
        let horizon = 4.0 * t;
        let base = labelled_seed(seed, "last-passage");
        let (up, down) = (0..paths)
            .into_par_iter()
            .map(|i| {
                let mut rng = rng_from_seed(replicate_seed(base ^ (ti as u64) << 48, i));
                let mut jumps = Vec::new();
                let mut s = 0.0;
                loop {
                    s += rng.sample::<f64, _>(Exp1) / lambda;
                    if s > horizon {
                        break;
                    }
                    jumps.push(s);
                }
                let (u, d) = late_crossings(&jumps, lambda, beta, kappa, t, horizon);
                (u as u64, d as u64)
            })
            .reduce(|| (0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
        let b_up = last_passage_bound_above(lambda, alpha, t);
        let b_down = last_passage_bound_below(lambda, alpha, t);
        let p = |side: f64| params([("lambda", lambda), ("alpha", alpha), ("kappa", kappa), ("t", t), ("side", side)]);
        report.cells.push(
            TailCell::monte_carlo(p(1.0), up, paths, b_up)
                .with_extra("truncation_bias", last_passage_bound_above(lambda, alpha, horizon).min(1.0)),
        );
        report.cells.push(
            TailCell::monte_carlo(p(-1.0), down, paths, b_down)
                .with_extra("truncation_bias", last_passage_bound_below(lambda, alpha, horizon).min(1.0)),
        );
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// elementary inequalities

/// `(c − (1+a−β)x^{−β})^{−1} x^{1+a−β} e^{−c x^β}`, valid when the first factor is positive.
pub fn exp_tail_bound(a: f64, beta: f64, c: f64, x: f64) -> Option<f64> {
    let lead = c - (1.0 + a - beta) * x.powf(-beta);
    (lead > 0.0).then(|| x.powf(1.0 + a - beta) * (-c * x.powf(beta)).exp() / lead)
}

/// Same integral bound with the lead term `cβ − (1+a−β)x^{−β}` that the
/// derivative of `x^{1+a−β} e^{−c x^β}` actually produces. Valid when
/// `1 + a ≥ β` and the lead term is positive.
pub fn exp_tail_bound_corrected(a: f64, beta: f64, c: f64, x: f64) -> Option<f64> {
    let k = 1.0 + a - beta;
    let lead = c * beta - k * x.powf(-beta);
    (k >= 0.0 && lead > 0.0).then(|| x.powf(k) * (-c * x.powf(beta)).exp() / lead)
}

/// `∫_x^∞ t^a e^{−c t^β} dt` via the upper incomplete gamma function.
pub fn exp_tail_gamma(a: f64, beta: f64, c: f64, x: f64) -> f64 {
    let s = (a + 1.0) / beta;
    gamma_ur(s, c * x.powf(beta)) * gamma(s) * c.powf(-s) / beta
}

fn simpson(
    f: &impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        left + right + delta / 15.0
    } else {
        simpson(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
            + simpson(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
    }
}

/// Adaptive Simpson quadrature on `[a, b]` to relative accuracy `rel_tol`.
pub fn integrate_adaptive(f: impl Fn(f64) -> f64, a: f64, b: f64, rel_tol: f64) -> f64 {
    // scale for the tolerance from a composite rule
    let panels = 64;
    let h = (b - a) / panels as f64;
    let crude: f64 = (0..panels)
        .map(|k| {
            let l = a + k as f64 * h;
            h / 6.0 * (f(l) + 4.0 * f(l + 0.5 * h) + f(l + h))
        })
        .sum();
    let tol = rel_tol * crude.abs() + f64::MIN_POSITIVE;
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson(&f, a, b, fa, fm, fb, whole, tol, 40)
}

/// `∫_x^∞ t^a e^{−c t^β} dt` by adaptive quadrature in `s = ln t` over unit panels.
pub fn exp_tail_quadrature(a: f64, beta: f64, c: f64, x: f64) -> f64 {
    let g = |s: f64| ((a + 1.0) * s - c * (beta * s).exp()).exp();
    // in s the integrand is unimodal; past the mode a negligible panel ends the sum
    let mode = ((a + 1.0) / (c * beta)).ln() / beta;
    let mut total = 0.0f64;
    let mut lo = x.ln();
    for _ in 0..10_000 {
        let piece = integrate_adaptive(g, lo, lo + 1.0, 1e-13);
        total += piece;
        lo += 1.0;
        if lo > mode && piece <= 1e-17 * total {
            break;
        }
    }
    total
}

/// Checks the exponential tail integral bound (as stated and corrected) and
/// the reciprocal bound on grids.
pub fn appendix_inequality_checks() -> Vec<TailBoundReport> {
    let mut stated = TailBoundReport::new("exp-tail-integral");
    let mut corrected = TailBoundReport::new("exp-tail-integral-corrected");
    for &a in &[0.0, 0.5, 1.0, 2.0] {
        for &beta in &[0.25, 0.5, 1.0, 2.0] {
            for &c in &[1.0 / 3.0, 0.5, 1.0, 2.0] {
                for &x in &[1.0, 2.0, 4.0, 16.0, 64.0] {
                    let stated_bound = exp_tail_bound(a, beta, c, x);
                    let corrected_bound = exp_tail_bound_corrected(a, beta, c, x);
                    if stated_bound.is_none() && corrected_bound.is_none() {
                        continue;
                    }
                    let quad = exp_tail_quadrature(a, beta, c, x);
                    let via_gamma = exp_tail_gamma(a, beta, c, x);
                    let agree = if quad == via_gamma { 0.0 } else { ((quad - via_gamma) / via_gamma).abs() };
                    let p = params([("a", a), ("beta", beta), ("c", c), ("x", x)]);
                    for (bound, report) in [(stated_bound, &mut stated), (corrected_bound, &mut corrected)] {
                        let Some(bound) = bound else { continue };
                        let mut cell = TailCell::exact(p.clone(), quad, bound)
                            .with_extra("gamma_oracle", via_gamma)
                            .with_extra("oracle_rel_diff", agree);
                        cell.pass = cell.pass && via_gamma <= bound * (1.0 + 1e-9) + 1e-300 && agree < 1e-6;
                        report.cells.push(cell);
                    }
                }
            }
        }
    }
    let mut recip = TailBoundReport::new("reciprocal-bound");
    for k in 0..=60 {
        let lambda = 10f64.powf(k as f64 / 10.0);
        for j in 1..=10 {
            let alpha = j as f64 / 20.0;
            let lhs = 1.0 / (1.0 + lambda - lambda.powf(0.5 + alpha) / 2.0);
            let rhs = 1.0 / (1.0 + lambda) + (1.0 + lambda).powf(-1.5 + alpha);
            recip.cells.push(TailCell::exact(params([("lambda", lambda), ("alpha", alpha)]), lhs, rhs));
        }
    }
    vec![stated, corrected, recip]
}

// ---------------------------------------------------------------------------
// branching dominator

/// One member of a coupled family of branching processes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BranchingVariant {
    /// Immigration rate.
    pub b: f64,
    /// Rate of each individual's environment clock.
    pub r: f64,
    /// Use each individual's clock value at its arrival instead of the running value.
    pub frozen: bool,
}

impl BranchingVariant {
    pub fn new(b: f64, r: f64, frozen: bool) -> Self {
        Self { b, r, frozen }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchingPath {
    pub variant: BranchingVariant,
    /// Times at which the population went from `k + 1` to `k + 2`.
    pub births: Vec<f64>,
    pub horizon: f64,
    /// The population cap was hit before the horizon; the path stops there.
    pub truncated: bool,
}

impl BranchingPath {
    pub fn population_at(&self, t: f64) -> u64 {
        1 + self.births.partition_point(|&s| s <= t) as u64
    }

    pub fn final_population(&self) -> u64 {
        1 + self.births.len() as u64
    }

    /// First birth time at which the population exceeds `envelope(t)`.
    pub fn first_exceedance(&self, envelope: impl Fn(f64) -> f64) -> Option<f64> {
        self.births.iter().enumerate().find(|(k, &t)| (*k as f64 + 2.0) > envelope(t)).map(|(_, &t)| t)
    }
}

/// `M·x·(x + ln(1+t))·(1+t)^{1/r}`.
pub fn branching_envelope(m: f64, x: f64, r: f64, t: f64) -> f64 {
    m * x * (x + (1.0 + t).ln()) * (1.0 + t).powf(1.0 / r)
}

struct Member {
    v: BranchingVariant,
    rate_idx: usize,
    pop: usize,
    /// `Σ_{i=2}^{pop} 1/(1+N^i)`, running or frozen.
    load: f64,
    births: Vec<f64>,
}

/// Exact simulation of a family of branching processes on shared randomness.
///
/// Individual `i` (the `i`-th arrival, counting the founder as 1) owns an
/// environment clock `N^i`, a Poisson process started at time 0. Clocks for
/// different rates `r` are thinnings of one master clock of rate `max r`
/// with uniform marks. Births in all variants are driven by one Poisson
/// point process in time × level: a variant gives birth when the level is
/// below its current rate. Consequently a variant with larger `b`, larger
/// clock values suppressed (smaller `r`), or frozen clocks is never below
/// its counterpart.
pub fn simulate_coupled(
    variants: &[BranchingVariant],
    horizon: f64,
    cap: usize,
    rng: &mut impl Rng,
) -> Result<Vec<BranchingPath>, ConcError> {
    if variants.is_empty() {
        return Err(ConcError::InvalidParameter("no variants".into()));
    }
    for v in variants {
        if !(v.b >= 0.0 && v.r > 0.0 && v.r <= 1.0) {
            return Err(ConcError::InvalidParameter(format!("bad variant {v:?}")));
        }
    }
    // distinct clock rates, descending
    let mut rates: Vec<f64> = variants.iter().map(|v| v.r).collect();
    rates.sort_by(|a, b| b.partial_cmp(a).unwrap());
    rates.dedup();
    let r_max = rates[0];
    let mut members: Vec<Member> = variants
        .iter()
        .map(|&v| Member {
            v,
            rate_idx: rates.iter().position(|&r| r == v.r).unwrap(),
            pop: 1,
            load: 0.0,
            births: Vec::new(),
        })
        .collect();
    // clocks[i][j] = value of individual i's clock thinned to rates[j]; index 0 is the founder
    let mut clocks: Vec<Vec<u32>> = vec![vec![0; rates.len()]];
    let mut active = 1usize;
    let mut t = 0.0;
    let mut truncated = false;
    let mut since_refresh = 0u32;

    let activate = |clocks: &mut Vec<Vec<u32>>, t: f64, rng: &mut dyn rand::RngCore| {
        let master = Poisson::new(r_max * t).map(|p| p.sample(rng) as u64).unwrap_or(0);
        let mut counts = Vec::with_capacity(rates.len());
        let mut prev = (master, r_max);
        for &r in &rates {
            let c = if r == prev.1 { prev.0 } else { Binomial::new(prev.0, r / prev.1).unwrap().sample(rng) };
            counts.push(c as u32);
            prev = (c, r);
        }
        clocks.push(counts);
    };

    loop {
        let rate_of = |m: &Member| m.v.b + m.load;
        let birth_max = members.iter().map(rate_of).fold(0.0, f64::max);
        let tick_rate = r_max * (active - 1) as f64;
        let total = birth_max + tick_rate;
        if total <= 0.0 {
            break;
        }
        t += rng.sample::<f64, _>(Exp1) / total;
        if t > horizon {
            break;
        }
        if rng.random::<f64>() * total < birth_max {
            let level = rng.random::<f64>() * birth_max;
            for m in members.iter_mut() {
                if level < m.v.b + m.load {
                    m.pop += 1;
                    m.births.push(t);
                    let idx = m.pop - 1;
                    if idx >= active {
                        activate(&mut clocks, t, rng);
                        active += 1;
                    }
                    m.load += 1.0 / (1.0 + clocks[idx][m.rate_idx] as f64);
                    if m.pop >= cap {
                        truncated = true;
                    }
                }
            }
            if truncated {
                break;
            }
        } else {
            let i = 1 + rng.random_range(0..active - 1);
            let mark = rng.random::<f64>() * r_max;
            for (j, &r) in rates.iter().enumerate() {
                if mark < r {
                    let old = clocks[i][j] as f64;
                    clocks[i][j] += 1;
                    for m in members.iter_mut().filter(|m| m.rate_idx == j && !m.v.frozen && i < m.pop) {
                        m.load += 1.0 / (2.0 + old) - 1.0 / (1.0 + old);
                    }
                }
            }
        }
        since_refresh += 1;
        if since_refresh >= 1 << 14 {
            since_refresh = 0;
            for m in members.iter_mut().filter(|m| !m.v.frozen) {
                m.load = (1..m.pop).map(|i| 1.0 / (1.0 + clocks[i][m.rate_idx] as f64)).sum();
            }
        }
    }
    Ok(members.into_iter().map(|m| BranchingPath { variant: m.v, births: m.births, horizon, truncated }).collect())
}

/// A single dominator path.
pub fn simulate_branching_dominator(
    variant: BranchingVariant,
    horizon: f64,
    cap: usize,
    seed: u64,
) -> Result<BranchingPath, ConcError> {
    let mut rng = rng_from_seed(seed);
    Ok(simulate_coupled(&[variant], horizon, cap, &mut rng)?.pop().unwrap())
}

/// Fraction of paths exceeding the envelope on `[0, horizon]`.
pub fn envelope_check(paths: &[BranchingPath], m: f64, x: f64, limit: f64) -> TailCell {
    let r = paths.first().map(|p| p.variant.r).unwrap_or(1.0);
    let b = paths.first().map(|p| p.variant.b).unwrap_or(0.0);
    let hits = paths
        .iter()
        .filter(|p| p.truncated || p.first_exceedance(|t| branching_envelope(m, x, p.variant.r, t)).is_some())
        .count() as u64;
    let horizon = paths.first().map(|p| p.horizon).unwrap_or(0.0);
    TailCell::strict_rate(
        params([("b", b), ("r", r), ("M", m), ("x", x), ("horizon", horizon)]),
        hits,
        paths.len() as u64,
        limit,
    )
}

/// Cluster sizes `|C_t(w)|` of every word (0 for words not alive).
pub fn cluster_sizes(config: &Configuration) -> Vec<u32> {
    (0..config.n()).map(|w| config.knowers(WordId(w as u32)) as u32).collect()
}

/// Quantile comparison of per-word cluster sizes against dominator populations.
///
/// For each `p`, the fraction of cluster sizes above the dominator's
/// `p`-quantile must be at most `1 − p` (plus 3 SE, with one trial counted
/// per independent run).
pub fn domination_check(
    clusters_per_run: &[Vec<u32>],
    dominator: &[u64],
    probs: &[f64],
    t: f64,
    n: usize,
) -> Result<Vec<TailCell>, ConcError> {
    if clusters_per_run.is_empty() || dominator.is_empty() {
        return Err(ConcError::NoPaths);
    }
    let mut dom: Vec<u64> = dominator.to_vec();
    dom.sort_unstable();
    let total: usize = clusters_per_run.iter().map(Vec::len).sum();
    let runs = clusters_per_run.len() as u64;
    let mut cells = Vec::new();
    for &p in probs {
        let idx = ((p * dom.len() as f64).ceil() as usize).clamp(1, dom.len()) - 1;
        let q = dom[idx];
        let above = clusters_per_run.iter().flatten().filter(|&&s| s as u64 > q).count();
        let frac = above as f64 / total as f64;
        let bound = 1.0 - p;
        let se = crate::stats::binomial_se(bound, runs as usize);
        let mut cell = TailCell {
            params: params([("n", n as f64), ("t", t), ("p", p)]),
            empirical: frac,
            bound,
            se,
            trials: runs,
            pass: frac <= bound + SE_SLACK * se,
            extra: BTreeMap::new(),
        };
        cell.extra.insert("dominator_quantile".into(), q as f64);
        let mut sizes: Vec<u32> = clusters_per_run.iter().flatten().copied().collect();
        sizes.sort_unstable();
        let cq = sizes[((p * sizes.len() as f64).ceil() as usize).clamp(1, sizes.len()) - 1];
        cell.extra.insert("cluster_quantile".into(), cq as f64);
        cells.push(cell);
    }
    Ok(cells)
}
