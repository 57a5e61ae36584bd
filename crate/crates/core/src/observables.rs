//! Population statistics maintained incrementally from the event stream.
//!
//! [`Observables`] plugs into a simulator as an [`Observer`] and keeps
//!
//! * the word ledger: words ever created, words created then extinct, words alive;
//! * the cluster index: for each word the agents that know it, and the exact
//!   multiset of cluster sizes so the largest cluster is available in O(1);
//! * agreement statistics: number of agreements, agents that took part in one,
//!   the mute count and the first time nobody is mute.
//!
//! Each event costs O(size of the vocabularies it touches).

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::model::{format_time, Agent, Configuration, InteractionEvent, Observer, Outcome, WordId};

/// Created / deleted / alive words.
#[derive(Debug, Clone, PartialEq)]
pub struct WordLedger {
    created: Vec<bool>,
    deleted: Vec<bool>,
    created_count: usize,
    deleted_count: usize,
    alive: Vec<u32>,
    alive_pos: Vec<u32>,
}

const NOT_ALIVE: u32 = u32::MAX;

impl WordLedger {
    fn new(n: usize) -> Self {
        Self {
            created: vec![false; n],
            deleted: vec![false; n],
            created_count: 0,
            deleted_count: 0,
            alive: Vec::new(),
            alive_pos: vec![NOT_ALIVE; n],
        }
    }

    fn create(&mut self, w: WordId) {
        let i = w.index();
        assert!(!self.created[i], "word {w} created twice");
        self.created[i] = true;
        self.created_count += 1;
        self.alive_pos[i] = self.alive.len() as u32;
        self.alive.push(w.0);
    }

    fn delete(&mut self, w: WordId) {
        let i = w.index();
        assert!(self.created[i] && !self.deleted[i], "word {w} deleted while not alive");
        self.deleted[i] = true;
        self.deleted_count += 1;
        let pos = self.alive_pos[i] as usize;
        self.alive.swap_remove(pos);
        if pos < self.alive.len() {
            self.alive_pos[self.alive[pos] as usize] = pos as u32;
        }
        self.alive_pos[i] = NOT_ALIVE;
    }

    pub fn is_created(&self, w: WordId) -> bool {
        self.created[w.index()]
    }

    pub fn is_deleted(&self, w: WordId) -> bool {
        self.deleted[w.index()]
    }

    pub fn is_alive(&self, w: WordId) -> bool {
        self.alive_pos[w.index()] != NOT_ALIVE
    }

    /// Words ever in existence.
    pub fn created_count(&self) -> usize {
        self.created_count
    }

    /// Words created and since gone extinct.
    pub fn deleted_count(&self) -> usize {
        self.deleted_count
    }

    pub fn alive_count(&self) -> usize {
        self.alive.len()
    }

    /// Alive words in no particular order.
    pub fn alive_words(&self) -> impl Iterator<Item = WordId> + '_ {
        self.alive.iter().map(|&w| WordId(w))
    }
}

/// Word → knowers, with an exact histogram of cluster sizes.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterIndex {
    members: Vec<Vec<u32>>,
    /// `hist[s]` = number of words whose cluster has size `s`, for `s >= 1`.
    hist: Vec<u32>,
    max: usize,
}

impl ClusterIndex {
    fn new(n: usize) -> Self {
        Self { members: vec![Vec::new(); n], hist: vec![0; n + 1], max: 0 }
    }

    fn resize(&mut self, from: usize, to: usize) {
        if from > 0 {
            self.hist[from] -= 1;
        }
        if to > 0 {
            self.hist[to] += 1;
        }
        if to > self.max {
            self.max = to;
        }
        while self.max > 0 && self.hist[self.max] == 0 {
            self.max -= 1;
        }
    }

    fn add(&mut self, w: WordId, agent: Agent) {
        let m = &mut self.members[w.index()];
        debug_assert!(!m.contains(&(agent as u32)));
        m.push(agent as u32);
        let s = m.len();
        self.resize(s - 1, s);
    }

    /// Returns true when the cluster became empty.
    fn remove(&mut self, w: WordId, agent: Agent) -> bool {
        let m = &mut self.members[w.index()];
        let pos = m.iter().position(|&a| a as Agent == agent).expect("agent not in cluster");
        m.swap_remove(pos);
        let s = m.len();
        self.resize(s + 1, s);
        s == 0
    }

    /// Agents that know `w`, unordered.
    pub fn members(&self, w: WordId) -> &[u32] {
        &self.members[w.index()]
    }

    pub fn size(&self, w: WordId) -> usize {
        self.members[w.index()].len()
    }

    /// Largest cluster size.
    pub fn max_size(&self) -> usize {
        self.max
    }

    /// Number of words with a cluster of exactly `size` agents (`size >= 1`).
    pub fn words_of_size(&self, size: usize) -> usize {
        self.hist.get(size).copied().unwrap_or(0) as usize
    }

    pub fn total_membership(&self) -> usize {
        self.members.iter().map(Vec::len).sum()
    }

    /// Checks the word/agent duality against a configuration.
    pub fn check(&self, config: &Configuration) -> Result<(), String> {
        let n = config.n();
        for w in 0..n {
            let word = WordId(w as u32);
            let mut m: Vec<u32> = self.members[w].clone();
            m.sort_unstable();
            let expected: Vec<u32> =
                (0..n).filter(|&v| config.vocabulary(v).binary_search(&word).is_ok()).map(|v| v as u32).collect();
            if m != expected {
                return Err(format!("cluster of word {w} out of sync"));
            }
        }
        if self.total_membership() != config.total_vocabulary() {
            return Err("cluster membership total differs from vocabulary total".into());
        }
        let max = self.members.iter().map(Vec::len).max().unwrap_or(0);
        if max != self.max {
            return Err(format!("max cluster {} but tracked {}", max, self.max));
        }
        for s in 1..=n {
            let c = self.members.iter().filter(|m| m.len() == s).count();
            if c != self.hist[s] as usize {
                return Err(format!("histogram wrong at size {s}"));
            }
        }
        Ok(())
    }
}

/// Agreement count, agents involved in agreements, mute count.
#[derive(Debug, Clone, PartialEq)]
pub struct AgreementCounter {
    agreements: u64,
    first_agreement: Vec<f64>,
    involved_count: usize,
    mute: usize,
    all_speak_time: Option<f64>,
}

impl AgreementCounter {
    fn new(n: usize, mute: usize) -> Self {
        Self {
            agreements: 0,
            first_agreement: vec![f64::INFINITY; n],
            involved_count: 0,
            mute,
            all_speak_time: (mute == 0).then_some(0.0),
        }
    }

    fn involve(&mut self, agent: Agent, t: f64) {
        if self.first_agreement[agent].is_infinite() {
            self.first_agreement[agent] = t;
            self.involved_count += 1;
        }
    }

    fn unmute(&mut self, t: f64) {
        self.mute -= 1;
        if self.mute == 0 && self.all_speak_time.is_none() {
            self.all_speak_time = Some(t);
        }
    }

    pub fn agreements(&self) -> u64 {
        self.agreements
    }

    /// Agents (equivalently, the words they created) that took part in an agreement.
    pub fn involved_count(&self) -> usize {
        self.involved_count
    }

    pub fn is_involved(&self, agent: Agent) -> bool {
        self.first_agreement[agent].is_finite()
    }

    /// First time `agent` took part in an agreement.
    pub fn first_agreement_time(&self, agent: Agent) -> Option<f64> {
        let t = self.first_agreement[agent];
        t.is_finite().then_some(t)
    }

    pub fn mute_count(&self) -> usize {
        self.mute
    }

    /// First time every agent knows at least one word.
    pub fn all_speak_time(&self) -> Option<f64> {
        self.all_speak_time
    }
}

/// When to record a [`SeriesRow`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Cadence {
    /// After every event.
    EveryEvent,
    /// At `0, dt, 2dt, ...`
    Grid { dt: f64 },
    /// At `0` and then `start, start·factor, start·factor², ...`
    LogGrid { start: f64, factor: f64 },
}

impl Default for Cadence {
    fn default() -> Self {
        Cadence::Grid { dt: 0.1 }
    }
}

/// One time-series sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesRow {
    pub t: f64,
    /// Words alive.
    pub alive: usize,
    /// Words ever created.
    pub created: usize,
    /// Words created then extinct.
    pub deleted: usize,
    /// Largest cluster.
    pub max_cluster: usize,
    pub agreements: u64,
    pub mute: usize,
    /// `|X - Y| / n` when exactly two words are alive and nobody is mute.
    pub two_word_u: Option<f64>,
}

pub fn write_series_csv<W: Write>(rows: &[SeriesRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "t,V,Vo,Vx,S,A,Z")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            format_time(r.t),
            r.alive,
            r.created,
            r.deleted,
            r.max_cluster,
            r.agreements,
            r.mute
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
struct Recorder {
    cadence: Cadence,
    next: f64,
    step: u64,
    rows: Vec<SeriesRow>,
}

impl Recorder {
    fn new(cadence: Cadence) -> Self {
        Self { cadence, next: 0.0, step: 0, rows: Vec::new() }
    }

    fn advance_grid(&mut self) {
        self.step += 1;
        self.next = match self.cadence {
            Cadence::EveryEvent => f64::INFINITY,
            Cadence::Grid { dt } => dt * self.step as f64,
            Cadence::LogGrid { start, factor } => start * factor.powi(self.step as i32 - 1),
        };
    }
}

/// Ledger, cluster index and agreement counter for one trajectory.
#[derive(Debug, Clone)]
pub struct Observables {
    n: usize,
    ledger: WordLedger,
    clusters: ClusterIndex,
    counter: AgreementCounter,
    recorder: Option<Recorder>,
}

impl Observables {
    /// Statistics of `config` at its current time; no time series.
    pub fn new(config: &Configuration) -> Self {
        let n = config.n();
        let mut ledger = WordLedger::new(n);
        let mut clusters = ClusterIndex::new(n);
        for v in 0..n {
            for &w in config.vocabulary(v) {
                if !ledger.is_created(w) {
                    ledger.create(w);
                }
                clusters.add(w, v);
            }
        }
        Self { n, ledger, clusters, counter: AgreementCounter::new(n, config.mute_count()), recorder: None }
    }

    /// Same, also recording a time series at the given cadence.
    pub fn with_series(config: &Configuration, cadence: Cadence) -> Self {
        let mut obs = Self::new(config);
        let mut rec = Recorder::new(cadence);
        rec.next = config.time();
        if cadence == Cadence::EveryEvent {
            rec.rows.push(obs.snapshot(config.time()));
            rec.next = f64::INFINITY;
        }
        obs.recorder = Some(rec);
        obs
    }

    pub fn ledger(&self) -> &WordLedger {
        &self.ledger
    }

    pub fn clusters(&self) -> &ClusterIndex {
        &self.clusters
    }

    pub fn counter(&self) -> &AgreementCounter {
        &self.counter
    }

    pub fn series(&self) -> &[SeriesRow] {
        self.recorder.as_ref().map(|r| r.rows.as_slice()).unwrap_or(&[])
    }

    pub fn take_series(&mut self) -> Vec<SeriesRow> {
        self.recorder.as_mut().map(|r| std::mem::take(&mut r.rows)).unwrap_or_default()
    }

    /// Current statistics stamped with time `t`.
    pub fn snapshot(&self, t: f64) -> SeriesRow {
        SeriesRow {
            t,
            alive: self.ledger.alive_count(),
            created: self.ledger.created_count(),
            deleted: self.ledger.deleted_count(),
            max_cluster: self.clusters.max_size(),
            agreements: self.counter.agreements(),
            mute: self.counter.mute_count(),
            two_word_u: self.two_word_u(),
        }
    }

    fn two_word_u(&self) -> Option<f64> {
        if self.ledger.alive_count() != 2 || self.counter.mute_count() != 0 {
            return None;
        }
        let mut it = self.ledger.alive_words();
        let (a, b) = (it.next()?, it.next()?);
        let (sa, sb) = (self.clusters.size(a) as f64, self.clusters.size(b) as f64);
        Some((sa - sb).abs() / self.n as f64)
    }

    fn flush_until(&mut self, t: f64, inclusive: bool) {
        let snap = self.snapshot(0.0);
        if let Some(rec) = self.recorder.as_mut() {
            while rec.next < t || (inclusive && rec.next == t) {
                rec.rows.push(SeriesRow { t: rec.next, ..snap });
                rec.advance_grid();
            }
        }
    }

    /// Recomputes everything from `config` and compares.
    pub fn check(&self, config: &Configuration) -> Result<(), String> {
        self.clusters.check(config)?;
        if self.counter.mute_count() != config.mute_count() {
            return Err("mute count out of sync".into());
        }
        for w in 0..self.n {
            let word = WordId(w as u32);
            let alive = config.knowers(word) > 0;
            if alive != self.ledger.is_alive(word) {
                return Err(format!("alive status of word {w} out of sync"));
            }
            if self.ledger.is_deleted(word) && !self.counter.is_involved(w) {
                return Err(format!("word {w} deleted but its creator never agreed"));
            }
        }
        if self.ledger.deleted_count() as u64 > 2 * self.counter.agreements() {
            return Err("more deletions than twice the agreements".into());
        }
        if self.counter.involved_count() as u64 > 2 * self.counter.agreements() {
            return Err("more involved agents than twice the agreements".into());
        }
        Ok(())
    }
}

impl Observer for Observables {
    fn on_event(&mut self, before: &Configuration, ev: &InteractionEvent) {
        self.flush_until(ev.time, false);
        let (s, l, w) = (ev.speaker, ev.listener, ev.word);
        match ev.outcome {
            Outcome::Invention => {
                debug_assert!(before.vocabulary(s).is_empty());
                self.ledger.create(w);
                self.clusters.add(w, s);
                self.clusters.add(w, l);
                self.counter.unmute(ev.time);
                if before.vocabulary(l).is_empty() {
                    self.counter.unmute(ev.time);
                }
            }
            Outcome::Adoption => {
                self.clusters.add(w, l);
                if before.vocabulary(l).is_empty() {
                    self.counter.unmute(ev.time);
                }
            }
            Outcome::Agreement => {
                for agent in [s, l] {
                    for &old in before.vocabulary(agent) {
                        if old != w && self.clusters.remove(old, agent) {
                            self.ledger.delete(old);
                        }
                    }
                }
                self.counter.agreements += 1;
                self.counter.involve(s, ev.time);
                self.counter.involve(l, ev.time);
            }
        }
        if let Some(rec) = self.recorder.as_ref() {
            if rec.cadence == Cadence::EveryEvent {
                let row = self.snapshot(ev.time);
                self.recorder.as_mut().unwrap().rows.push(row);
            }
        }
    }

    fn on_advance(&mut self, _config: &Configuration, t: f64) {
        self.flush_until(t, true);
    }
}

/// Rate at which `word` is spoken: `1(N(w) = 0) + Σ_{v knows w} 1/N(v)`.
pub fn word_rate(config: &Configuration, clusters: &ClusterIndex, word: WordId) -> f64 {
    let mute_creator = if config.vocabulary(word.creator()).is_empty() { 1.0 } else { 0.0 };
    mute_creator + clusters.members(word).iter().map(|&v| 1.0 / config.vocab_size(v as Agent) as f64).sum::<f64>()
}

/// Current total agreement rate and the largest cluster, which bounds it.
///
/// The rate is `Σ_w R(w) P(w)` over words with a non-empty cluster, where
/// `P(w) = (S(w) - 1)/(n - 1)` is the chance that a uniform listener also
/// knows `w`.
pub fn agreement_rate_bound(config: &Configuration, obs: &Observables) -> (f64, f64) {
    let n = config.n();
    let clusters = obs.clusters();
    let rate = obs
        .ledger()
        .alive_words()
        .map(|w| {
            let s = clusters.size(w);
            let p = (s as f64 - 1.0) / (n as f64 - 1.0);
            word_rate(config, clusters, w) * p
        })
        .sum();
    (rate, clusters.max_size() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AgentClock, NoObserver, Simulator};
    use crate::rng::rng_from_seed;
    use proptest::prelude::*;

    fn w(i: u32) -> WordId {
        WordId(i)
    }

    /// Agreement rate by enumerating every ordered pair.
    fn brute_agreement_rate(config: &Configuration) -> f64 {
        let n = config.n();
        let mut rate = 0.0;
        for v in 0..n {
            let wv = config.vocabulary(v);
            if wv.is_empty() {
                continue;
            }
            for u in 0..n {
                if u == v {
                    continue;
                }
                let shared = wv.iter().filter(|x| config.vocabulary(u).binary_search(x).is_ok()).count();
                rate += shared as f64 / wv.len() as f64 / (n - 1) as f64;
            }
        }
        rate
    }

    #[test]
    fn starts_empty() {
        let c = Configuration::mute(7).unwrap();
        let o = Observables::new(&c);
        let row = o.snapshot(0.0);
        assert_eq!((row.alive, row.created, row.deleted, row.mute, row.max_cluster), (0, 0, 0, 7, 0));
        for i in 0..7 {
            assert_eq!(word_rate(&c, o.clusters(), w(i)), 1.0);
        }
        assert_eq!(agreement_rate_bound(&c, &o), (0.0, 0.0));
    }

    #[test]
    fn invention_and_adoption_update_clusters() {
        let mut c = Configuration::mute(4).unwrap();
        let mut o = Observables::new(&c);
        let ev = c.resolve(0.1, 2, 0, 0.5);
        o.on_event(&c, &ev);
        c.commit(&ev);
        assert!(o.ledger().is_created(w(2)));
        assert_eq!(o.clusters().size(w(2)), 2);
        assert_eq!(o.counter().mute_count(), 2);
        let ev = c.resolve(0.2, 0, 3, 0.5);
        assert_eq!(ev.outcome, Outcome::Adoption);
        o.on_event(&c, &ev);
        c.commit(&ev);
        assert_eq!(o.clusters().size(w(2)), 3);
        assert_eq!(o.ledger().deleted_count(), 0);
        o.check(&c).unwrap();
    }

    #[test]
    fn agreement_empties_clusters_into_deleted() {
        let mut c =
            Configuration::from_vocabularies(vec![vec![w(0), w(1)], vec![w(1)], vec![w(0), w(2)], vec![w(3)]]).unwrap();
        // word 2 only known by agent 2 but creator 2 is not mute: valid
        let mut o = Observables::new(&c);
        let ev = c.resolve(1.0, 0, 2, 0.1);
        assert_eq!(ev.outcome, Outcome::Agreement);
        o.on_event(&c, &ev);
        c.commit(&ev);
        assert!(o.ledger().is_deleted(w(2)));
        assert!(!o.ledger().is_deleted(w(1)));
        assert_eq!(o.clusters().size(w(1)), 1);
        assert_eq!(o.counter().agreements(), 1);
        assert_eq!(o.counter().involved_count(), 2);
        o.check(&c).unwrap();
    }

    #[test]
    fn word_rates_sum_to_n() {
        let n = 40;
        let mut sim = Simulator::new(Configuration::mute(n).unwrap(), AgentClock::new(n, rng_from_seed(3)).unwrap());
        let mut o = Observables::new(sim.config());
        for _ in 0..400 {
            sim.step(&mut o);
            let total: f64 = (0..n).map(|i| word_rate(sim.config(), o.clusters(), w(i as u32))).sum();
            assert!((total - n as f64).abs() < 1e-9);
        }
    }

    #[test]
    fn agreement_rate_at_consensus_equals_n() {
        let n = 6;
        let c = Configuration::from_vocabularies(vec![vec![w(0)]; n]).unwrap();
        let o = Observables::new(&c);
        let (rate, bound) = agreement_rate_bound(&c, &o);
        assert!((rate - n as f64).abs() < 1e-12);
        assert_eq!(bound, n as f64);
        let singletons = Configuration::from_vocabularies((0..n as u32).map(|i| vec![w(i)]).collect()).unwrap();
        let o = Observables::new(&singletons);
        assert_eq!(agreement_rate_bound(&singletons, &o), (0.0, 1.0));
    }

    #[test]
    fn grid_series_samples_state_before_each_event() {
        let n = 20;
        let mut sim = Simulator::new(Configuration::mute(n).unwrap(), AgentClock::new(n, rng_from_seed(8)).unwrap());
        let mut o = Observables::with_series(sim.config(), Cadence::Grid { dt: 0.25 });
        sim.run_until(3.0, &mut o);
        let rows = o.series();
        assert_eq!(rows.len(), 13);
        assert_eq!(rows[0].t, 0.0);
        assert_eq!(rows[0].mute, n);
        assert_eq!(rows[12].t, 3.0);
        assert_eq!(rows[12].mute, sim.config().mute_count());
        assert!(rows.windows(2).all(|p| p[0].created <= p[1].created));

        let mut buf = Vec::new();
        write_series_csv(rows, &mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("t,V,Vo,Vx,S,A,Z\n0.00000000000,0,0,0,0,0,20\n"));
    }

    #[test]
    fn every_event_and_log_cadences() {
        let n = 10;
        let mut sim = Simulator::new(Configuration::mute(n).unwrap(), AgentClock::new(n, rng_from_seed(2)).unwrap());
        let mut o = Observables::with_series(sim.config(), Cadence::EveryEvent);
        for _ in 0..25 {
            sim.step(&mut o);
        }
        assert_eq!(o.series().len(), 26);

        let mut sim = Simulator::new(Configuration::mute(n).unwrap(), AgentClock::new(n, rng_from_seed(2)).unwrap());
        let mut o = Observables::with_series(sim.config(), Cadence::LogGrid { start: 0.01, factor: 10.0 });
        sim.run_until(10.0, &mut o);
        let ts: Vec<f64> = o.series().iter().map(|r| r.t).collect();
        assert_eq!(ts.len(), 5);
        assert!((ts[4] - 10.0).abs() < 1e-12);
    }

    #[test]
    fn two_word_projection_in_snapshot() {
        // X = 2 know {0}, Y = 1 knows {1}, Z = 1 knows both
        let c = Configuration::from_vocabularies(vec![vec![w(0)], vec![w(1)], vec![w(0)], vec![w(0), w(1)]]).unwrap();
        let o = Observables::new(&c);
        assert_eq!(o.snapshot(0.0).two_word_u, Some(0.25));
        let _ = NoObserver;
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn incremental_state_matches_recomputation(seed in any::<u64>(), n in 2usize..30, steps in 1usize..600) {
            let mut sim = Simulator::new(Configuration::mute(n).unwrap(), AgentClock::new(n, rng_from_seed(seed)).unwrap());
            let mut o = Observables::new(sim.config());
            let mut last_created = 0;
            let mut last_deleted = 0;
            for _ in 0..steps {
                sim.step(&mut o);
                let cfg = sim.config();
                prop_assert!(o.check(cfg).is_ok(), "{:?}", o.check(cfg));
                let row = o.snapshot(cfg.time());
                prop_assert!(row.created >= last_created && row.deleted >= last_deleted);
                prop_assert_eq!(row.alive + row.deleted, row.created);
                prop_assert!(row.deleted as u64 <= 2 * row.agreements);
                if o.counter().all_speak_time().is_some() {
                    prop_assert_eq!(row.created, last_created.max(row.created));
                }
                last_created = row.created;
                last_deleted = row.deleted;
                let (rate, bound) = agreement_rate_bound(cfg, &o);
                prop_assert!(rate <= bound + 1e-9);
                prop_assert!((rate - brute_agreement_rate(cfg)).abs() < 1e-9);
            }
        }
    }
}
