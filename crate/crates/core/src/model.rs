//! Full naming-game process on the complete graph `K_n`.
//!
//! Agents are `0..n`. Each word is identified with the agent that invented
//! it, so a word id is an agent index. Vocabularies are kept sorted by
//! creator id; the uniform-word rule picks the `i`-th smallest word.
//!
//! Two event sources drive the same transition function:
//!
//! * [`AgentClock`]: one aggregate exponential clock of rate `n`, a uniform
//!   speaker and a uniform listener among the other `n - 1` agents. This is
//!   the production scheduler, O(1) per event.
//! * [`GraphicalClock`]: one marked Poisson stream of intensity `1/(n-1)` per
//!   directed edge, merged in time order. Memory is O(n²), so it is capped and
//!   only used as an oracle for small `n`.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;
use std::io::Write;

use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{rng_from_seed, SimRng};

/// Default agent cap for the graphical construction.
pub const DEFAULT_GRAPHICAL_CAP: usize = 64;

pub type Agent = usize;

/// A word, named after the agent that invented it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct WordId(pub u32);

impl WordId {
    pub fn creator(self) -> Agent {
        self.0 as Agent
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for WordId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("need at least 2 agents, got {0}")]
    TooFewAgents(usize),
    #[error("graphical construction needs {edges} edge processes for n = {n}, above the cap of n = {cap}")]
    GraphTooLarge { n: usize, cap: usize, edges: usize },
    #[error("invalid vocabulary for agent {agent}: {reason}")]
    InvalidVocabulary { agent: Agent, reason: String },
    #[error("horizon must be a non-negative number, got {0}")]
    InvalidHorizon(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Outcome {
    Invention,
    Adoption,
    Agreement,
}

impl Outcome {
    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Invention => "invention",
            Outcome::Adoption => "adoption",
            Outcome::Agreement => "agreement",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InteractionEvent {
    pub time: f64,
    pub speaker: Agent,
    pub listener: Agent,
    pub word: WordId,
    pub outcome: Outcome,
}

/// Picks the `i`-th smallest word with `(i-1)/k <= u < i/k`.
///
/// Panics on an empty vocabulary: a mute speaker invents instead.
pub fn choose_word(vocab: &[WordId], u: f64) -> WordId {
    assert!(!vocab.is_empty(), "choose_word on an empty vocabulary");
    debug_assert!((0.0..1.0).contains(&u), "mark {u} outside [0, 1)");
    let k = vocab.len();
    // u * k can round up to k when u is within an ulp of 1.
    let i = ((u * k as f64) as usize).min(k - 1);
    vocab[i]
}

/// Per-agent vocabularies plus the counters needed to detect consensus in O(1).
#[derive(Debug, Clone, PartialEq)]
pub struct Configuration {
    vocab: Vec<Vec<WordId>>,
    knowers: Vec<u32>,
    total: usize,
    mute: usize,
    time: f64,
}

impl Configuration {
    /// All agents mute at time 0.
    pub fn mute(n: usize) -> Result<Self, ModelError> {
        if n < 2 {
            return Err(ModelError::TooFewAgents(n));
        }
        Ok(Self { vocab: vec![Vec::new(); n], knowers: vec![0; n], total: 0, mute: n, time: 0.0 })
    }

    /// Arbitrary initial vocabularies. Each list is sorted on the way in; a word
    /// may only appear if its creator is not mute.
    pub fn from_vocabularies(mut vocab: Vec<Vec<WordId>>) -> Result<Self, ModelError> {
        let n = vocab.len();
        if n < 2 {
            return Err(ModelError::TooFewAgents(n));
        }
        let mut knowers = vec![0u32; n];
        let mut total = 0;
        for (agent, words) in vocab.iter_mut().enumerate() {
            words.sort_unstable();
            if words.windows(2).any(|w| w[0] == w[1]) {
                return Err(ModelError::InvalidVocabulary { agent, reason: "duplicate word".into() });
            }
            for w in words.iter() {
                if w.index() >= n {
                    return Err(ModelError::InvalidVocabulary {
                        agent,
                        reason: format!("word {w} has no creator among {n} agents"),
                    });
                }
                knowers[w.index()] += 1;
            }
            total += words.len();
        }
        for (w, &k) in knowers.iter().enumerate() {
            if k > 0 && vocab[w].is_empty() {
                return Err(ModelError::InvalidVocabulary {
                    agent: w,
                    reason: format!("word {w} is known but its creator is mute"),
                });
            }
        }
        let mute = vocab.iter().filter(|v| v.is_empty()).count();
        Ok(Self { vocab, knowers, total, mute, time: 0.0 })
    }

    pub fn n(&self) -> usize {
        self.vocab.len()
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn vocabulary(&self, agent: Agent) -> &[WordId] {
        &self.vocab[agent]
    }

    pub fn vocabularies(&self) -> &[Vec<WordId>] {
        &self.vocab
    }

    pub fn vocab_size(&self, agent: Agent) -> usize {
        self.vocab[agent].len()
    }

    /// Number of agents that know `word`.
    pub fn knowers(&self, word: WordId) -> usize {
        self.knowers[word.index()] as usize
    }

    pub fn mute_count(&self) -> usize {
        self.mute
    }

    /// Sum of all vocabulary sizes.
    pub fn total_vocabulary(&self) -> usize {
        self.total
    }

    /// The common word if every agent holds exactly that single word.
    pub fn consensus(&self) -> Option<WordId> {
        if self.mute != 0 || self.total != self.n() {
            return None;
        }
        let w = *self.vocab[0].first()?;
        (self.knowers(w) == self.n()).then_some(w)
    }

    /// Works out what happens when `speaker` talks to `listener` with mark `u`,
    /// without changing anything.
    pub fn resolve(&self, time: f64, speaker: Agent, listener: Agent, u: f64) -> InteractionEvent {
        assert_ne!(speaker, listener, "an agent cannot speak to itself");
        let spoken = &self.vocab[speaker];
        let (word, outcome) = if spoken.is_empty() {
            (WordId(speaker as u32), Outcome::Invention)
        } else {
            let word = choose_word(spoken, u);
            if self.vocab[listener].binary_search(&word).is_ok() {
                (word, Outcome::Agreement)
            } else {
                (word, Outcome::Adoption)
            }
        };
        InteractionEvent { time, speaker, listener, word, outcome }
    }

    /// Applies an event produced by [`Configuration::resolve`] on this state.
    pub fn commit(&mut self, ev: &InteractionEvent) {
        debug_assert!(ev.time >= self.time);
        let (s, l, w) = (ev.speaker, ev.listener, ev.word);
        match ev.outcome {
            Outcome::Invention => {
                debug_assert!(self.vocab[s].is_empty());
                self.add_word(s, w);
                self.add_word(l, w);
            }
            Outcome::Adoption => self.add_word(l, w),
            Outcome::Agreement => {
                for agent in [s, l] {
                    let words = &mut self.vocab[agent];
                    self.total -= words.len();
                    for old in words.drain(..) {
                        self.knowers[old.index()] -= 1;
                    }
                    words.push(w);
                }
                self.knowers[w.index()] += 2;
                self.total += 2;
            }
        }
        self.time = ev.time;
    }

    fn add_word(&mut self, agent: Agent, w: WordId) {
        let v = &mut self.vocab[agent];
        if v.is_empty() {
            self.mute -= 1;
        }
        match v.binary_search(&w) {
            Ok(_) => debug_assert!(false, "adding known word {w} to agent {agent}"),
            Err(pos) => v.insert(pos, w),
        }
        self.knowers[w.index()] += 1;
        self.total += 1;
    }

    /// `resolve` followed by `commit`.
    pub fn apply_interaction(&mut self, time: f64, speaker: Agent, listener: Agent, u: f64) -> InteractionEvent {
        let ev = self.resolve(time, speaker, listener, u);
        self.commit(&ev);
        ev
    }

    /// Sets the clock without an event (end of a horizon).
    pub fn advance_to(&mut self, t: f64) {
        debug_assert!(t >= self.time);
        self.time = t;
    }

    /// Recomputes every cached counter and checks the structural invariants.
    pub fn check_consistency(&self) -> Result<(), String> {
        let n = self.n();
        let mut knowers = vec![0u32; n];
        for (v, words) in self.vocab.iter().enumerate() {
            if words.windows(2).any(|p| p[0] >= p[1]) {
                return Err(format!("vocabulary of {v} not strictly sorted"));
            }
            if words.len() > n {
                return Err(format!("vocabulary of {v} larger than n"));
            }
            for w in words {
                knowers[w.index()] += 1;
            }
        }
        if knowers != self.knowers {
            return Err("knower counts out of sync".into());
        }
        for (w, &k) in knowers.iter().enumerate() {
            if k > 0 && self.vocab[w].is_empty() {
                return Err(format!("word {w} known while its creator is mute"));
            }
        }
        let total: usize = self.vocab.iter().map(Vec::len).sum();
        if total != self.total {
            return Err("total vocabulary out of sync".into());
        }
        if self.vocab.iter().filter(|v| v.is_empty()).count() != self.mute {
            return Err("mute count out of sync".into());
        }
        Ok(())
    }
}

/// One speaking opportunity: `speaker` talks to `listener` at `time` with mark `mark`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ring {
    pub time: f64,
    pub speaker: Agent,
    pub listener: Agent,
    pub mark: f64,
}

/// Source of speaking opportunities, strictly increasing in time.
pub trait Clock {
    fn n(&self) -> usize;
    /// Time of the next ring, without consuming it.
    fn peek(&mut self) -> f64;
    fn pop(&mut self) -> Ring;
}

/// Superposed agent clocks: exponential gaps of rate `n`, uniform speaker,
/// uniform listener among the other agents.
#[derive(Debug, Clone)]
pub struct AgentClock {
    n: usize,
    now: f64,
    rng: SimRng,
    pending: Option<Ring>,
}

impl AgentClock {
    pub fn new(n: usize, rng: SimRng) -> Result<Self, ModelError> {
        if n < 2 {
            return Err(ModelError::TooFewAgents(n));
        }
        Ok(Self { n, now: 0.0, rng, pending: None })
    }

    fn draw(&mut self) -> Ring {
        let rate = self.n as f64;
        let time = loop {
            let gap: f64 = self.rng.sample(Exp1);
            let t = self.now + gap / rate;
            // ties have probability zero; redraw the rare float collision
            if t > self.now {
                break t;
            }
        };
        let speaker = self.rng.random_range(0..self.n);
        let mut listener = self.rng.random_range(0..self.n - 1);
        if listener >= speaker {
            listener += 1;
        }
        let mark = self.rng.random::<f64>();
        Ring { time, speaker, listener, mark }
    }
}

impl Clock for AgentClock {
    fn n(&self) -> usize {
        self.n
    }

    fn peek(&mut self) -> f64 {
        if self.pending.is_none() {
            self.pending = Some(self.draw());
        }
        self.pending.as_ref().map(|r| r.time).unwrap_or(f64::INFINITY)
    }

    fn pop(&mut self) -> Ring {
        let ring = match self.pending.take() {
            Some(r) => r,
            None => self.draw(),
        };
        self.now = ring.time;
        ring
    }
}

#[derive(Debug, Clone, Copy)]
struct EdgePoint {
    time: f64,
    mark: f64,
    speaker: u32,
    listener: u32,
}

impl PartialEq for EdgePoint {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for EdgePoint {}
impl PartialOrd for EdgePoint {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for EdgePoint {
    // reversed so that BinaryHeap pops the earliest point
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.speaker.cmp(&self.speaker))
            .then_with(|| other.listener.cmp(&self.listener))
    }
}

/// Literal per-directed-edge construction: every ordered pair `(v, w)` carries
/// its own augmented Poisson stream of intensity `1/deg(v) = 1/(n-1)`.
#[derive(Debug, Clone)]
pub struct GraphicalClock {
    n: usize,
    intensity: f64,
    now: f64,
    rng: SimRng,
    heap: BinaryHeap<EdgePoint>,
}

impl GraphicalClock {
    pub fn new(n: usize, rng: SimRng, cap: usize) -> Result<Self, ModelError> {
        if n < 2 {
            return Err(ModelError::TooFewAgents(n));
        }
        if n > cap {
            return Err(ModelError::GraphTooLarge { n, cap, edges: n * (n - 1) });
        }
        let intensity = 1.0 / (n - 1) as f64;
        let mut clock = Self { n, intensity, now: 0.0, rng, heap: BinaryHeap::with_capacity(n * (n - 1)) };
        for v in 0..n {
            for w in 0..n {
                if v != w {
                    let p = clock.next_point(0.0, v as u32, w as u32);
                    clock.heap.push(p);
                }
            }
        }
        Ok(clock)
    }

    /// Intensity of each directed edge process.
    pub fn edge_intensity(&self) -> f64 {
        self.intensity
    }

    fn next_point(&mut self, from: f64, speaker: u32, listener: u32) -> EdgePoint {
        let gap: f64 = self.rng.sample(Exp1);
        let mark = self.rng.random::<f64>();
        EdgePoint { time: from + gap / self.intensity, mark, speaker, listener }
    }
}

impl Clock for GraphicalClock {
    fn n(&self) -> usize {
        self.n
    }

    fn peek(&mut self) -> f64 {
        loop {
            let top = *self.heap.peek().expect("edge heap is never empty");
            if top.time > self.now {
                return top.time;
            }
            // float tie with the previous point: redraw this edge's point from
            // the current time, which leaves its law unchanged
            self.heap.pop();
            let p = self.next_point(self.now, top.speaker, top.listener);
            self.heap.push(p);
        }
    }

    fn pop(&mut self) -> Ring {
        self.peek();
        let p = self.heap.pop().expect("edge heap is never empty");
        let next = self.next_point(p.time, p.speaker, p.listener);
        self.heap.push(next);
        self.now = p.time;
        Ring { time: p.time, speaker: p.speaker as Agent, listener: p.listener as Agent, mark: p.mark }
    }
}

/// Receives every event together with the configuration just before it.
pub trait Observer {
    fn on_event(&mut self, _before: &Configuration, _event: &InteractionEvent) {}
    /// The simulation clock moved to `t` without an event (end of a run).
    fn on_advance(&mut self, _config: &Configuration, _t: f64) {}
}

/// Observer that ignores everything.
#[derive(Debug, Default, Clone, Copy)]
pub struct NoObserver;
impl Observer for NoObserver {}

impl<O: Observer + ?Sized> Observer for &mut O {
    fn on_event(&mut self, before: &Configuration, event: &InteractionEvent) {
        (**self).on_event(before, event)
    }
    fn on_advance(&mut self, config: &Configuration, t: f64) {
        (**self).on_advance(config, t)
    }
}

impl<A: Observer, B: Observer> Observer for (A, B) {
    fn on_event(&mut self, before: &Configuration, event: &InteractionEvent) {
        self.0.on_event(before, event);
        self.1.on_event(before, event);
    }
    fn on_advance(&mut self, config: &Configuration, t: f64) {
        self.0.on_advance(config, t);
        self.1.on_advance(config, t);
    }
}

/// Closure adapter.
pub struct FnObserver<F>(pub F);
impl<F: FnMut(&Configuration, &InteractionEvent)> Observer for FnObserver<F> {
    fn on_event(&mut self, before: &Configuration, event: &InteractionEvent) {
        (self.0)(before, event)
    }
}

/// Records every event.
#[derive(Debug, Default, Clone)]
pub struct EventTrace {
    pub events: Vec<InteractionEvent>,
}

impl Observer for EventTrace {
    fn on_event(&mut self, _before: &Configuration, event: &InteractionEvent) {
        self.events.push(*event);
    }
}

/// Formats a non-negative time as a plain decimal with 12 significant digits.
pub fn format_time(t: f64) -> String {
    if t == 0.0 || !t.is_finite() {
        return format!("{t:.11}");
    }
    let magnitude = t.abs().log10().floor() as i32;
    let decimals = (11 - magnitude).max(0) as usize;
    format!("{t:.decimals$}")
}

/// Event-trace CSV: `t,speaker,listener,word,outcome`.
pub fn write_trace_csv<W: Write>(events: &[InteractionEvent], mut out: W) -> std::io::Result<()> {
    writeln!(out, "t,speaker,listener,word,outcome")?;
    for e in events {
        writeln!(out, "{},{},{},{},{}", format_time(e.time), e.speaker, e.listener, e.word, e.outcome.as_str())?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Consensus {
    pub time: f64,
    pub word: WordId,
    pub events: u64,
}

#[derive(Debug, Clone, Error)]
#[error("no consensus before time cap {cap} ({events} events)")]
pub struct Timeout {
    pub cap: f64,
    pub events: u64,
    pub state: Box<Configuration>,
}

/// Drives a configuration with a clock.
#[derive(Debug, Clone)]
pub struct Simulator<C> {
    config: Configuration,
    clock: C,
    events: u64,
}

impl<C: Clock> Simulator<C> {
    pub fn new(config: Configuration, clock: C) -> Self {
        assert_eq!(config.n(), clock.n(), "clock and configuration disagree on n");
        Self { config, clock, events: 0 }
    }

    pub fn config(&self) -> &Configuration {
        &self.config
    }

    pub fn into_config(self) -> Configuration {
        self.config
    }

    pub fn events(&self) -> u64 {
        self.events
    }

    pub fn time(&self) -> f64 {
        self.config.time()
    }

    /// Time of the next event.
    pub fn next_time(&mut self) -> f64 {
        self.clock.peek()
    }

    pub fn step<O: Observer>(&mut self, obs: &mut O) -> InteractionEvent {
        let ring = self.clock.pop();
        assert!(ring.time > self.config.time(), "event times must increase strictly");
        let ev = self.config.resolve(ring.time, ring.speaker, ring.listener, ring.mark);
        obs.on_event(&self.config, &ev);
        self.config.commit(&ev);
        self.events += 1;
        ev
    }

    /// Applies every event up to and including `horizon`, then moves the clock
    /// to `horizon`.
    pub fn run_until<O: Observer>(&mut self, horizon: f64, obs: &mut O) {
        while self.clock.peek() <= horizon {
            self.step(obs);
        }
        if horizon > self.config.time() && horizon.is_finite() {
            self.config.advance_to(horizon);
            obs.on_advance(&self.config, horizon);
        }
    }

    /// Steps until `stop` returns true after an event, or the next event would
    /// fall after `cap`. Returns the stopping time, or `None` on timeout.
    pub fn run_while<O: Observer>(
        &mut self,
        cap: f64,
        obs: &mut O,
        mut stop: impl FnMut(&Configuration, &InteractionEvent) -> bool,
    ) -> Option<f64> {
        while self.clock.peek() <= cap {
            let ev = self.step(obs);
            if stop(&self.config, &ev) {
                return Some(ev.time);
            }
        }
        None
    }

    /// Runs until every agent holds the same single word.
    pub fn run_to_consensus<O: Observer>(&mut self, cap: f64, obs: &mut O) -> Result<Consensus, Timeout> {
        if let Some(word) = self.config.consensus() {
            return Ok(Consensus { time: self.config.time(), word, events: self.events });
        }
        let mut word = None;
        let hit = self.run_while(cap, obs, |cfg, ev| {
            // consensus can only be created by an agreement
            if ev.outcome == Outcome::Agreement {
                word = cfg.consensus();
            }
            word.is_some()
        });
        match (hit, word) {
            (Some(time), Some(word)) => Ok(Consensus { time, word, events: self.events }),
            _ => Err(Timeout { cap, events: self.events, state: Box::new(self.config.clone()) }),
        }
    }
}

fn check_horizon(horizon: f64) -> Result<(), ModelError> {
    if horizon.is_nan() || horizon < 0.0 {
        return Err(ModelError::InvalidHorizon(horizon));
    }
    Ok(())
}

/// Agent-clock simulation from all-mute agents up to `horizon`.
pub fn simulate_agent_clock<O: Observer>(
    n: usize,
    horizon: f64,
    seed: u64,
    obs: &mut O,
) -> Result<Configuration, ModelError> {
    check_horizon(horizon)?;
    let clock = AgentClock::new(n, rng_from_seed(seed))?;
    let mut sim = Simulator::new(Configuration::mute(n)?, clock);
    sim.run_until(horizon, obs);
    Ok(sim.into_config())
}

/// Graphical-construction simulation from all-mute agents up to `horizon`.
pub fn simulate_graphical<O: Observer>(
    n: usize,
    horizon: f64,
    seed: u64,
    cap: usize,
    obs: &mut O,
) -> Result<Configuration, ModelError> {
    check_horizon(horizon)?;
    if horizon.is_infinite() {
        return Err(ModelError::InvalidHorizon(horizon));
    }
    let clock = GraphicalClock::new(n, rng_from_seed(seed), cap)?;
    let mut sim = Simulator::new(Configuration::mute(n)?, clock);
    sim.run_until(horizon, obs);
    Ok(sim.into_config())
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Timeout(#[from] Timeout),
}

/// Agent-clock run from all-mute agents until consensus or `cap`.
pub fn run_until_consensus(n: usize, seed: u64, cap: f64) -> Result<Consensus, RunError> {
    let clock = AgentClock::new(n, rng_from_seed(seed))?;
    let mut sim = Simulator::new(Configuration::mute(n)?, clock);
    Ok(sim.run_to_consensus(cap, &mut NoObserver)?)
}

/// Outcome of running from all-mute agents until nobody is mute.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EarlyPhase {
    /// Words ever created.
    pub words_created: usize,
    /// First time every agent knows a word.
    pub all_speak_time: f64,
    pub events: u64,
}

/// Runs a simulator until no agent is mute.
pub fn run_early_phase<C: Clock>(sim: &mut Simulator<C>) -> EarlyPhase {
    let mut created = 0;
    let t = sim
        .run_while(f64::INFINITY, &mut NoObserver, |cfg, ev| {
            if ev.outcome == Outcome::Invention {
                created += 1;
            }
            cfg.mute_count() == 0
        })
        .expect("the mute set empties in finite time");
    EarlyPhase { words_created: created, all_speak_time: t, events: sim.events() }
}

/// Words created and time until nobody is mute, agent-clock scheduler.
pub fn early_phase_agent_clock(n: usize, seed: u64) -> Result<EarlyPhase, ModelError> {
    let mut sim = Simulator::new(Configuration::mute(n)?, AgentClock::new(n, rng_from_seed(seed))?);
    Ok(run_early_phase(&mut sim))
}

/// Words created and time until nobody is mute, graphical construction.
pub fn early_phase_graphical(n: usize, seed: u64, cap: usize) -> Result<EarlyPhase, ModelError> {
    let mut sim = Simulator::new(Configuration::mute(n)?, GraphicalClock::new(n, rng_from_seed(seed), cap)?);
    Ok(run_early_phase(&mut sim))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn w(i: u32) -> WordId {
        WordId(i)
    }

    #[test]
    fn choose_word_follows_interval_rule() {
        let v = [w(1), w(2), w(3)];
        assert_eq!(choose_word(&v, 0.5), w(2));
        assert_eq!(choose_word(&v, 0.0), w(1));
        assert_eq!(choose_word(&v, 1.0 / 3.0), w(2));
        assert_eq!(choose_word(&v, 0.999_999), w(3));
        assert_eq!(choose_word(&[w(7)], 0.73), w(7));
        assert_eq!(choose_word(&[w(1), w(2)], 0.0), w(1));
        assert_eq!(choose_word(&v, 1.0 - f64::EPSILON / 2.0), w(3));
    }

    #[test]
    #[should_panic]
    fn choose_word_rejects_empty() {
        choose_word(&[], 0.2);
    }

    #[test]
    fn invention_adds_speaker_word() {
        // agent 0 mute, agent 1 knows word 2
        let mut c = Configuration::from_vocabularies(vec![vec![], vec![w(2)], vec![w(2)]]).unwrap();
        let ev = c.apply_interaction(0.5, 0, 1, 0.3);
        assert_eq!(ev.outcome, Outcome::Invention);
        assert_eq!(ev.word, w(0));
        assert_eq!(c.vocabulary(0), &[w(0)]);
        assert_eq!(c.vocabulary(1), &[w(0), w(2)]);
        assert_eq!(c.vocabulary(2), &[w(2)]);
        c.check_consistency().unwrap();
    }

    #[test]
    fn agreement_collapses_both_vocabularies() {
        // speaker {a,b} = {0,1}, listener {a,c} = {0,2}; u = 0.1 picks a
        let mut c =
            Configuration::from_vocabularies(vec![vec![w(0), w(1)], vec![w(1)], vec![w(0), w(2)], vec![w(0)]]).unwrap();
        let ev = c.apply_interaction(1.0, 0, 2, 0.1);
        assert_eq!(ev.outcome, Outcome::Agreement);
        assert_eq!(ev.word, w(0));
        assert_eq!(c.vocabulary(0), &[w(0)]);
        assert_eq!(c.vocabulary(2), &[w(0)]);
        assert_eq!(c.vocabulary(1), &[w(1)]);
        assert_eq!(c.vocabulary(3), &[w(0)]);
        assert_eq!(c.knowers(w(2)), 0);
        c.check_consistency().unwrap();
    }

    #[test]
    fn adoption_adds_word_to_listener_only() {
        let mut c = Configuration::from_vocabularies(vec![vec![w(0)], vec![w(1)]]).unwrap();
        let ev = c.apply_interaction(0.1, 1, 0, 0.9);
        assert_eq!(ev.outcome, Outcome::Adoption);
        assert_eq!(c.vocabulary(1), &[w(1)]);
        assert_eq!(c.vocabulary(0), &[w(0), w(1)]);
        c.check_consistency().unwrap();
    }

    #[test]
    fn rejects_invalid_configurations() {
        assert_eq!(Configuration::mute(1), Err(ModelError::TooFewAgents(1)));
        assert!(Configuration::from_vocabularies(vec![vec![w(0), w(0)], vec![]]).is_err());
        assert!(Configuration::from_vocabularies(vec![vec![w(5)], vec![]]).is_err());
        // word 1 known while agent 1 is mute
        assert!(Configuration::from_vocabularies(vec![vec![w(1)], vec![]]).is_err());
    }

    #[test]
    fn two_agents_start_with_invention_and_reach_consensus() {
        for seed in 0..200 {
            let mut first = None;
            let mut obs = FnObserver(|_: &Configuration, ev: &InteractionEvent| {
                first.get_or_insert(ev.outcome);
            });
            let mut sim =
                Simulator::new(Configuration::mute(2).unwrap(), AgentClock::new(2, rng_from_seed(seed)).unwrap());
            let c = sim.run_to_consensus(1e6, &mut obs).unwrap();
            assert_eq!(first, Some(Outcome::Invention));
            assert!(c.word == w(0) || c.word == w(1));
            assert!(c.events >= 2, "one event cannot synchronize both singletons");
            let cfg = sim.config();
            assert_eq!(cfg.vocabulary(0), &[c.word]);
            assert_eq!(cfg.vocabulary(1), &[c.word]);
        }
    }

    #[test]
    fn consensus_state_is_a_single_word() {
        for n in [3, 5, 8] {
            let c = run_until_consensus(n, 11, 1e7).unwrap();
            let mut sim =
                Simulator::new(Configuration::mute(n).unwrap(), AgentClock::new(n, rng_from_seed(11)).unwrap());
            let c2 = sim.run_to_consensus(1e7, &mut NoObserver).unwrap();
            assert_eq!(c, c2, "deterministic given seed");
            for v in 0..n {
                assert_eq!(sim.config().vocabulary(v), &[c.word]);
            }
        }
    }

    #[test]
    fn timeout_carries_partial_state() {
        let err = run_until_consensus(50, 3, 0.5).unwrap_err();
        match err {
            RunError::Timeout(t) => {
                assert_eq!(t.state.n(), 50);
                assert!(t.state.time() <= 0.5);
                assert!(t.events > 0);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn graphical_cap_is_enforced() {
        let err = GraphicalClock::new(65, rng_from_seed(0), DEFAULT_GRAPHICAL_CAP).unwrap_err();
        assert!(matches!(err, ModelError::GraphTooLarge { n: 65, cap: 64, .. }));
        assert!(GraphicalClock::new(64, rng_from_seed(0), DEFAULT_GRAPHICAL_CAP).is_ok());
        let g = GraphicalClock::new(3, rng_from_seed(0), 8).unwrap();
        assert_eq!(g.edge_intensity(), 0.5);
    }

    #[test]
    fn simulations_are_deterministic_given_seed() {
        let a = simulate_agent_clock(30, 4.0, 9, &mut NoObserver).unwrap();
        let b = simulate_agent_clock(30, 4.0, 9, &mut NoObserver).unwrap();
        assert_eq!(a, b);
        let g1 = simulate_graphical(6, 3.0, 9, 64, &mut NoObserver).unwrap();
        let g2 = simulate_graphical(6, 3.0, 9, 64, &mut NoObserver).unwrap();
        assert_eq!(g1, g2);
        assert_eq!(a.time(), 4.0);
        assert!(simulate_agent_clock(30, -1.0, 9, &mut NoObserver).is_err());
    }

    #[test]
    fn trace_csv_has_header_and_precision() {
        let mut trace = EventTrace::default();
        simulate_agent_clock(4, 0.5, 2, &mut trace).unwrap();
        let mut buf = Vec::new();
        write_trace_csv(&trace.events, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("t,speaker,listener,word,outcome"));
        let first = lines.next().unwrap();
        let t = first.split(',').next().unwrap();
        let digits = t.chars().filter(|c| c.is_ascii_digit()).collect::<String>();
        assert!(digits.trim_start_matches('0').len() >= 9, "{t}");
        assert!(first.ends_with("invention"));
        assert_eq!(format_time(0.001234), "0.00123400000000");
        assert_eq!(format_time(12.5), "12.5000000000");
    }

    proptest! {
        #[test]
        fn interactions_preserve_invariants(seed in any::<u64>(), n in 2usize..12, steps in 1usize..300) {
            let mut sim = Simulator::new(Configuration::mute(n).unwrap(), AgentClock::new(n, rng_from_seed(seed)).unwrap());
            let mut invented = vec![false; n];
            for _ in 0..steps {
                let before = sim.config().clone();
                let ev = sim.step(&mut NoObserver);
                let after = sim.config();
                prop_assert!(after.check_consistency().is_ok());
                prop_assert_eq!(ev.outcome == Outcome::Invention, before.vocabulary(ev.speaker).is_empty());
                if ev.outcome == Outcome::Invention {
                    invented[ev.speaker] = true;
                }
                // provenance
                for v in 0..n {
                    for word in after.vocabulary(v) {
                        prop_assert!(invented[word.creator()]);
                    }
                }
                // only speaker and listener change
                for v in 0..n {
                    if v != ev.speaker && v != ev.listener {
                        prop_assert_eq!(before.vocabulary(v), after.vocabulary(v));
                    }
                }
                if ev.outcome == Outcome::Agreement {
                    prop_assert_eq!(after.vocabulary(ev.speaker), &[ev.word]);
                    prop_assert_eq!(after.vocabulary(ev.listener), &[ev.word]);
                }
            }
        }
    }
}
