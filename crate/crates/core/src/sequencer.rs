//! Events in 1+1 spacetime and random total orders of them.
//!
//! Timelike and lightlike pairs are ordered by time; spacelike pairs have no
//! frame-independent order, so a run picks one of the linear extensions of
//! the light-cone order. [`ExtensionSampler`] draws them uniformly by counting
//! extensions over the lattice of downsets.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::collapse::{CollapseEngine, Interaction, InteractionStream, ShiftParams, WalkView};
use crate::error::{validation, Error, Result};
use crate::rng::{Draws, KeyedDraws, Purpose, TrialRng};
use crate::signaling::{outcome_weights, ProbabilityRule};
use crate::state::EntangledState;
use crate::stats::{chi_square_homogeneity, ChiSquareTest};
use crate::tolerance::{ALGEBRAIC, ZERO_AMPLITUDE};

/// An entangling interaction placed in spacetime (c = 1).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpacetimeEvent {
    pub id: u64,
    pub t: f64,
    pub x: f64,
    /// Detector (wing) whose split this interaction drives.
    pub detector: usize,
    /// Entangled system the interaction acts on.
    pub system: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Interval {
    Timelike,
    Lightlike,
    Spacelike,
}

pub fn classify_interval(a: &SpacetimeEvent, b: &SpacetimeEvent) -> Interval {
    let dt2 = (a.t - b.t).powi(2);
    let dx2 = (a.x - b.x).powi(2);
    if (dt2 - dx2).abs() <= ALGEBRAIC {
        Interval::Lightlike
    } else if dt2 > dx2 {
        Interval::Timelike
    } else {
        Interval::Spacelike
    }
}

/// How a total order is drawn from the light-cone partial order.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SequencerPolicy {
    /// Every linear extension equally likely.
    #[default]
    UniformExtension,
    /// Repeatedly pick uniformly among the currently minimal events. Cheaper,
    /// but not uniform over extensions.
    RandomTopological,
}

/// Largest poset without chain structure whose order is tabulated pairwise.
pub const MAX_GENERAL_EVENTS: usize = 5_000;
/// Most distinct positions tried for the disjoint-chain form.
const MAX_CHAINS: usize = 64;

/// Events with their light-cone order `a ≺ b` iff the pair is timelike or
/// lightlike and `t_a < t_b`.
///
/// Events that sit at a few fixed positions, with every cross-position pair
/// spacelike, are stored as disjoint time-ordered chains; this covers the
/// usual two-wing layout at any size. Anything else is tabulated pairwise.
#[derive(Clone, Debug)]
pub struct EventPoset {
    events: Vec<SpacetimeEvent>,
    index: HashMap<u64, usize>,
    /// Predecessors whose placement implies the whole past is placed: every
    /// predecessor in general, the previous chain event in chain form.
    gates: Vec<Vec<usize>>,
    unlocks: Vec<Vec<usize>>,
    chains: Option<Vec<Vec<usize>>>,
}

fn find_chains(events: &[SpacetimeEvent]) -> Option<Vec<Vec<usize>>> {
    let mut groups: Vec<(u64, Vec<usize>)> = Vec::new();
    for (i, e) in events.iter().enumerate() {
        let key = (e.x + 0.0).to_bits();
        if let Some(g) = groups.iter_mut().find(|g| g.0 == key) {
            g.1.push(i);
        } else if groups.len() == MAX_CHAINS {
            return None;
        } else {
            groups.push((key, vec![i]));
        }
    }
    for (_, g) in &mut groups {
        g.sort_by(|&a, &b| events[a].t.total_cmp(&events[b].t));
        if g.windows(2).any(|w| events[w[0]].t >= events[w[1]].t) {
            return None;
        }
    }
    let span = |g: &[usize]| (events[g[0]].t, events[g[g.len() - 1]].t, events[g[0]].x);
    for a in 0..groups.len() {
        for b in a + 1..groups.len() {
            let (lo_a, hi_a, xa) = span(&groups[a].1);
            let (lo_b, hi_b, xb) = span(&groups[b].1);
            let dt = (hi_a - lo_b).max(hi_b - lo_a);
            if (xa - xb).powi(2) - dt * dt <= ALGEBRAIC {
                return None;
            }
        }
    }
    Some(groups.into_iter().map(|g| g.1).collect())
}

impl EventPoset {
    pub fn new(events: Vec<SpacetimeEvent>) -> Result<Self> {
        let mut index = HashMap::with_capacity(events.len());
        for (i, e) in events.iter().enumerate() {
            if !(e.t.is_finite() && e.x.is_finite()) {
                return Err(validation(format!("event {} has non-finite coordinates", e.id)));
            }
            if index.insert(e.id, i).is_some() {
                return Err(validation(format!("duplicate event id {}", e.id)));
            }
        }
        let n = events.len();
        let mut gates = vec![Vec::new(); n];
        let chains = find_chains(&events);
        match &chains {
            Some(chains) => {
                for c in chains {
                    c.windows(2).for_each(|w| gates[w[1]].push(w[0]));
                }
            }
            None => {
                if n > MAX_GENERAL_EVENTS {
                    return Err(Error::TooLarge(format!(
                        "{n} events without chain structure; the limit is {MAX_GENERAL_EVENTS}"
                    )));
                }
                for (j, g) in gates.iter_mut().enumerate() {
                    g.extend((0..n).filter(|&i| i != j && precedes(&events[i], &events[j])));
                }
            }
        }
        let mut unlocks = vec![Vec::new(); n];
        for (j, g) in gates.iter().enumerate() {
            g.iter().for_each(|&i| unlocks[i].push(j));
        }
        Ok(EventPoset { events, index, gates, unlocks, chains })
    }

    pub fn events(&self) -> &[SpacetimeEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn position(&self, id: u64) -> Option<usize> {
        self.index.get(&id).copied()
    }

    pub fn precedes(&self, i: usize, j: usize) -> bool {
        precedes(&self.events[i], &self.events[j])
    }

    /// Event positions of each chain in time order, when the poset is a
    /// disjoint union of chains.
    pub fn chains(&self) -> Option<&[Vec<usize>]> {
        self.chains.as_deref()
    }

    /// Checks that `order` lists every event once and respects `≺`; returns
    /// the order as event positions.
    pub fn check_extension(&self, order: &[u64]) -> Result<Vec<usize>> {
        if order.len() != self.len() {
            return Err(validation(format!("order has {} events, scenario has {}", order.len(), self.len())));
        }
        let mut placed = vec![false; self.len()];
        let mut out = Vec::with_capacity(order.len());
        for id in order {
            let i = self.position(*id).ok_or_else(|| validation(format!("unknown event id {id}")))?;
            if placed[i] {
                return Err(validation(format!("event {id} appears twice")));
            }
            if let Some(&p) = self.gates[i].iter().find(|&&p| !placed[p]) {
                return Err(validation(format!(
                    "event {id} placed before event {} which precedes it",
                    self.events[p].id
                )));
            }
            placed[i] = true;
            out.push(i);
        }
        Ok(out)
    }

    fn ids(&self, positions: &[usize]) -> Vec<u64> {
        positions.iter().map(|&i| self.events[i].id).collect()
    }
}

fn precedes(a: &SpacetimeEvent, b: &SpacetimeEvent) -> bool {
    a.t < b.t && classify_interval(a, b) != Interval::Spacelike
}

/// Largest downset lattice [`ExtensionSampler`] will build.
pub const MAX_DOWNSETS: usize = 2_000_000;

type Bits = Box<[u64]>;

/// Exact uniform sampler over the linear extensions of an [`EventPoset`].
///
/// For disjoint chains with `r_i` events left, the next event comes from
/// chain `i` with probability `r_i / Σr`. Otherwise downsets are enumerated
/// level by level; `ln N(S)`, the log-count of ways to finish from downset
/// `S`, is accumulated backwards, and a sample walks forward choosing each
/// next event with probability `N(S + e) / N(S)`.
#[derive(Clone, Debug)]
pub struct ExtensionSampler {
    kind: SamplerKind,
}

#[derive(Clone, Debug)]
enum SamplerKind {
    Lattice { children: Vec<Vec<(u32, u32)>>, log_count: Vec<f64> },
    Chains(Vec<Vec<usize>>),
}

/// Progress through one extension being drawn.
#[derive(Clone, Debug)]
pub struct ExtensionCursor {
    at: usize,
    taken: Vec<usize>,
}

impl ExtensionSampler {
    pub fn new(poset: &EventPoset) -> Result<Self> {
        match poset.chains() {
            Some(chains) => Ok(ExtensionSampler { kind: SamplerKind::Chains(chains.to_vec()) }),
            None => Self::lattice(poset),
        }
    }

    /// Counts over the downset lattice whatever the poset's shape.
    pub fn lattice(poset: &EventPoset) -> Result<Self> {
        let n = poset.len();
        let words = n.div_ceil(64).max(1);
        let gate_bits: Vec<Bits> = poset
            .gates
            .iter()
            .map(|ps| {
                let mut b = vec![0u64; words].into_boxed_slice();
                ps.iter().for_each(|&p| b[p / 64] |= 1 << (p % 64));
                b
            })
            .collect();
        let mut sets: Vec<Bits> = vec![vec![0u64; words].into_boxed_slice()];
        let mut children: Vec<Vec<(u32, u32)>> = vec![Vec::new()];
        let mut level: Vec<usize> = vec![0];
        for _ in 0..n {
            let mut next_ids: HashMap<Bits, u32> = HashMap::new();
            let mut next_level = Vec::new();
            for &s in &level {
                for e in 0..n {
                    let set = &sets[s];
                    if set[e / 64] >> (e % 64) & 1 == 1 {
                        continue;
                    }
                    if gate_bits[e].iter().zip(set.iter()).any(|(p, s)| p & !s != 0) {
                        continue;
                    }
                    let mut child = set.clone();
                    child[e / 64] |= 1 << (e % 64);
                    let id = match next_ids.get(&child) {
                        Some(&id) => id,
                        None => {
                            let id = sets.len() as u32;
                            if sets.len() >= MAX_DOWNSETS {
                                return Err(Error::TooLarge(format!(
                                    "more than {MAX_DOWNSETS} downsets; use the random-topological policy"
                                )));
                            }
                            next_ids.insert(child.clone(), id);
                            sets.push(child);
                            children.push(Vec::new());
                            next_level.push(id as usize);
                            id
                        }
                    };
                    children[s].push((e as u32, id));
                }
            }
            level = next_level;
        }
        drop(sets);
        let mut log_count = vec![0.0; children.len()];
        for s in (0..children.len()).rev() {
            if children[s].is_empty() {
                continue;
            }
            let max = children[s].iter().map(|&(_, c)| log_count[c as usize]).fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = children[s].iter().map(|&(_, c)| (log_count[c as usize] - max).exp()).sum();
            log_count[s] = max + sum.ln();
        }
        Ok(ExtensionSampler { kind: SamplerKind::Lattice { children, log_count } })
    }

    /// Natural log of the number of linear extensions.
    pub fn log_count(&self) -> f64 {
        match &self.kind {
            SamplerKind::Lattice { log_count, .. } => log_count[0],
            SamplerKind::Chains(chains) => {
                let total: usize = chains.iter().map(Vec::len).sum();
                ln_gamma(total as f64 + 1.0) - chains.iter().map(|c| ln_gamma(c.len() as f64 + 1.0)).sum::<f64>()
            }
        }
    }

    /// Number of linear extensions (may be `inf` for large posets).
    pub fn count(&self) -> f64 {
        self.log_count().exp()
    }

    /// Size of the downset lattice (saturating).
    pub fn downsets(&self) -> usize {
        match &self.kind {
            SamplerKind::Lattice { children, .. } => children.len(),
            SamplerKind::Chains(chains) => chains.iter().fold(1usize, |acc, c| acc.saturating_mul(c.len() + 1)),
        }
    }

    pub fn start(&self) -> ExtensionCursor {
        let chains = match &self.kind {
            SamplerKind::Chains(c) => c.len(),
            SamplerKind::Lattice { .. } => 0,
        };
        ExtensionCursor { at: 0, taken: vec![0; chains] }
    }

    /// Draws the next event position, or `None` once every event is placed.
    pub fn next(&self, cursor: &mut ExtensionCursor, rng: &mut TrialRng) -> Option<usize> {
        match &self.kind {
            SamplerKind::Lattice { children, log_count } => {
                let kids = &children[cursor.at];
                let last = *kids.last()?;
                let here = log_count[cursor.at];
                let mut u = rng.next_unit();
                let mut pick = last;
                for &(e, c) in kids {
                    let p = (log_count[c as usize] - here).exp();
                    if u < p {
                        pick = (e, c);
                        break;
                    }
                    u -= p;
                }
                cursor.at = pick.1 as usize;
                Some(pick.0 as usize)
            }
            SamplerKind::Chains(chains) => {
                let left = |k: usize| chains[k].len() - cursor.taken[k];
                let total: usize = (0..chains.len()).map(left).sum();
                if total == 0 {
                    return None;
                }
                let mut u = rng.next_unit() * total as f64;
                let mut pick = (0..chains.len()).rev().find(|&k| left(k) > 0)?;
                for k in 0..chains.len() {
                    let r = left(k) as f64;
                    if r > 0.0 && u < r {
                        pick = k;
                        break;
                    }
                    u -= r;
                }
                cursor.taken[pick] += 1;
                Some(chains[pick][cursor.taken[pick] - 1])
            }
        }
    }

    /// One uniformly random extension, as event positions.
    pub fn sample(&self, rng: &mut TrialRng) -> Vec<usize> {
        let mut cursor = self.start();
        std::iter::from_fn(|| self.next(&mut cursor, rng)).collect()
    }
}

/// Incremental random topological sort.
#[derive(Clone, Debug)]
struct Topological {
    remaining: Vec<usize>,
    ready: Vec<usize>,
}

impl Topological {
    fn new(poset: &EventPoset) -> Self {
        let remaining: Vec<usize> = poset.gates.iter().map(|p| p.len()).collect();
        let ready = (0..poset.len()).filter(|&i| remaining[i] == 0).collect();
        Topological { remaining, ready }
    }

    fn step(&mut self, poset: &EventPoset, rng: &mut TrialRng) -> Option<usize> {
        if self.ready.is_empty() {
            return None;
        }
        // keep `ready` sorted so a draw does not depend on insertion history
        self.ready.sort_unstable();
        let k = ((rng.next_unit() * self.ready.len() as f64) as usize).min(self.ready.len() - 1);
        let e = self.ready.remove(k);
        for &s in &poset.unlocks[e] {
            self.remaining[s] -= 1;
            if self.remaining[s] == 0 {
                self.ready.push(s);
            }
        }
        Some(e)
    }
}

fn random_topological(poset: &EventPoset, rng: &mut TrialRng) -> Vec<usize> {
    let mut t = Topological::new(poset);
    std::iter::from_fn(|| t.step(poset, rng)).collect()
}

/// Orders prepared once per scenario, from which each trial draws lazily.
#[derive(Clone, Debug)]
pub enum PreparedOrdering {
    Uniform(ExtensionSampler),
    Topological,
}

impl PreparedOrdering {
    pub fn new(poset: &EventPoset, policy: SequencerPolicy) -> Result<Self> {
        Ok(match policy {
            SequencerPolicy::UniformExtension => PreparedOrdering::Uniform(ExtensionSampler::new(poset)?),
            SequencerPolicy::RandomTopological => PreparedOrdering::Topological,
        })
    }
}

/// Interaction stream that draws a random total order of the events one
/// event at a time, so a walk that absorbs early never pays for the rest.
/// Event at position `i` is emitted as `Interaction { id, split: detector }`.
pub struct EventStream<'a> {
    poset: &'a EventPoset,
    state: StreamState<'a>,
    rng: TrialRng,
}

enum StreamState<'a> {
    Uniform { sampler: &'a ExtensionSampler, cursor: ExtensionCursor },
    Topological(Topological),
}

impl<'a> EventStream<'a> {
    pub fn new(poset: &'a EventPoset, ordering: &'a PreparedOrdering, rng: TrialRng) -> Self {
        let state = match ordering {
            PreparedOrdering::Uniform(sampler) => StreamState::Uniform { sampler, cursor: sampler.start() },
            PreparedOrdering::Topological => StreamState::Topological(Topological::new(poset)),
        };
        EventStream { poset, state, rng }
    }
}

impl InteractionStream for EventStream<'_> {
    fn next_interaction(&mut self, _view: &WalkView<'_>, _draws: &mut dyn Draws) -> Option<Interaction> {
        let e = match &mut self.state {
            StreamState::Uniform { sampler, cursor } => sampler.next(cursor, &mut self.rng)?,
            StreamState::Topological(t) => t.step(self.poset, &mut self.rng)?,
        };
        let ev = &self.poset.events[e];
        Some(Interaction { id: ev.id, split: ev.detector })
    }
}

/// Draws `count` total orders (as event ids); draw `i` uses the ordering
/// stream of trial `i`.
pub fn sample_orders(poset: &EventPoset, policy: SequencerPolicy, seed: u64, count: u64) -> Result<Vec<Vec<u64>>> {
    match policy {
        SequencerPolicy::UniformExtension => {
            let sampler = ExtensionSampler::new(poset)?;
            Ok((0..count)
                .map(|i| poset.ids(&sampler.sample(&mut TrialRng::new(seed, i, Purpose::Ordering))))
                .collect())
        }
        SequencerPolicy::RandomTopological => Ok((0..count)
            .map(|i| poset.ids(&random_topological(poset, &mut TrialRng::new(seed, i, Purpose::Ordering))))
            .collect()),
    }
}

/// One total order of `events`.
pub fn sequence_events(events: &[SpacetimeEvent], policy: SequencerPolicy, seed: u64) -> Result<Vec<u64>> {
    let poset = EventPoset::new(events.to_vec())?;
    Ok(sample_orders(&poset, policy, seed, 1)?.remove(0))
}

/// Admission record of a discrete sequencing surface. Each admitted event
/// gets the next `s` label; an event can only be admitted once everything
/// in its past light cone has been.
#[derive(Clone, Debug)]
pub struct SequencingSurface<'a> {
    poset: &'a EventPoset,
    s: u64,
    included: Vec<u64>,
    admitted: Vec<bool>,
}

impl<'a> SequencingSurface<'a> {
    pub fn new(poset: &'a EventPoset) -> Self {
        SequencingSurface { poset, s: 0, included: Vec::new(), admitted: vec![false; poset.len()] }
    }

    /// Current surface label.
    pub fn s(&self) -> u64 {
        self.s
    }

    pub fn included(&self) -> &[u64] {
        &self.included
    }

    /// Events that may be admitted next.
    pub fn frontier(&self) -> Vec<u64> {
        (0..self.poset.len())
            .filter(|&i| !self.admitted[i] && self.poset.gates[i].iter().all(|&p| self.admitted[p]))
            .map(|i| self.poset.events[i].id)
            .collect()
    }

    /// Pushes the surface past event `id`; returns its `s` label.
    pub fn admit(&mut self, id: u64) -> Result<u64> {
        let i = self.poset.position(id).ok_or_else(|| validation(format!("unknown event id {id}")))?;
        if self.admitted[i] {
            return Err(validation(format!("event {id} already admitted")));
        }
        if let Some(&p) = self.poset.gates[i].iter().find(|&&p| !self.admitted[p]) {
            return Err(validation(format!(
                "event {id} cannot be admitted before event {}",
                self.poset.events[p].id
            )));
        }
        self.admitted[i] = true;
        self.included.push(id);
        self.s += 1;
        Ok(self.s)
    }
}

/// `per_wing` events on each side of a two-wing experiment: wing 0 at
/// `x = −separation`, wing 1 at `x = +separation`, one per unit time.
/// Ids `0..per_wing` belong to wing 0.
pub fn bell_events(per_wing: usize, separation: f64) -> Vec<SpacetimeEvent> {
    (0..2)
        .flat_map(|wing| {
            (0..per_wing).map(move |i| SpacetimeEvent {
                id: (wing * per_wing + i) as u64,
                t: i as f64,
                x: if wing == 0 { -separation } else { separation },
                detector: wing,
                system: 0,
            })
        })
        .collect()
}

/// All events of wing `first` followed by all events of the other wing,
/// each wing in time order.
pub fn wing_first_order(events: &[SpacetimeEvent], first: usize) -> Vec<u64> {
    let mut sorted: Vec<&SpacetimeEvent> = events.iter().collect();
    sorted.sort_by(|a, b| (a.detector != first).cmp(&(b.detector != first)).then(a.t.total_cmp(&b.t)));
    sorted.iter().map(|e| e.id).collect()
}

/// What happens at each event of an order-invariance run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum OutcomeDynamics {
    /// ±d density shifts on the event's wing split.
    DensityWalk { params: ShiftParams },
    /// A wing's first event projects it at once with weights from `rule`
    /// applied to the current state; later events on that wing do nothing.
    RuleProjection { rule: ProbabilityRule },
}

/// Two-qubit experiment, state already written in each wing's measurement
/// basis; `event.detector` is the wing.
#[derive(Clone, Debug)]
pub struct WingSetup {
    pub state: EntangledState,
    pub events: Vec<SpacetimeEvent>,
}

/// Joint outcome counts per order and their homogeneity test.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvarianceReport {
    pub orders: usize,
    pub trials: u64,
    /// Cell `2a + b`: outcome `a` on wing 0, `b` on wing 1.
    pub tables: Vec<[u64; 4]>,
    /// Trials per order whose events ran out before both wings resolved.
    pub incomplete: Vec<u64>,
    pub chi_square: ChiSquareTest,
}

struct OrderStream<'a> {
    items: &'a [Interaction],
    pos: usize,
}

impl InteractionStream for OrderStream<'_> {
    fn next_interaction(&mut self, _view: &WalkView<'_>, _draws: &mut dyn Draws) -> Option<Interaction> {
        let it = self.items.get(self.pos).copied();
        self.pos += 1;
        it
    }
}

fn project_trial(
    rule: &ProbabilityRule,
    state: &EntangledState,
    first_events: [(usize, u64); 2],
    draws: &mut KeyedDraws,
) -> Result<usize> {
    let mut outcome = [0usize; 2];
    let mut amps = state.amps().to_vec();
    for &(wing, id) in &first_events {
        let other = 1 - wing;
        let mut branch = [num_complex::Complex64::new(0.0, 0.0); 2];
        for (level, b) in branch.iter_mut().enumerate() {
            let mut norm = 0.0;
            let mut lead = None;
            for k in 0..2 {
                let mut levels = [0usize; 2];
                levels[wing] = level;
                levels[other] = k;
                let a = amps[state.index_of(&levels)?];
                norm += a.norm_sqr();
                if lead.is_none() && a.norm() > ZERO_AMPLITUDE {
                    lead = Some(a.arg());
                }
            }
            *b = num_complex::Complex64::from_polar(norm.sqrt(), lead.unwrap_or(0.0));
        }
        let w = outcome_weights(rule, &branch)?;
        let u = draws.unit(id, 1);
        let level = if u < w[0] { 0 } else { 1 };
        outcome[wing] = level;
        for (i, a) in amps.iter_mut().enumerate() {
            if state.digit(i, wing) != level {
                *a = num_complex::Complex64::new(0.0, 0.0);
            }
        }
        let n: f64 = amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        amps.iter_mut().for_each(|a| *a /= n);
    }
    Ok(2 * outcome[0] + outcome[1])
}

/// Runs `trials` trials under each order, with the random draw for every
/// event keyed by `(trial, event id)` so that orders differ only in
/// sequence, and tests the joint tables for homogeneity.
pub fn order_invariance_test(
    setup: &WingSetup,
    orders: &[Vec<u64>],
    trials: u64,
    seed: u64,
    dynamics: OutcomeDynamics,
) -> Result<InvarianceReport> {
    if setup.state.dims() != [2, 2] {
        return Err(Error::Unsupported("order invariance needs a two-qubit state".into()));
    }
    if orders.is_empty() || trials == 0 {
        return Err(validation("need at least one order and one trial"));
    }
    if setup.events.iter().any(|e| e.detector > 1) {
        return Err(validation("event detector must be wing 0 or 1"));
    }
    let poset = EventPoset::new(setup.events.clone())?;
    let splits = [setup.state.level_set(0, 0)?, setup.state.level_set(1, 0)?];
    let mut tables = Vec::with_capacity(orders.len());
    let mut incomplete = Vec::with_capacity(orders.len());
    for order in orders {
        let positions = poset.check_extension(order)?;
        let interactions: Vec<Interaction> = positions
            .iter()
            .map(|&i| Interaction { id: poset.events[i].id, split: poset.events[i].detector })
            .collect();
        let cells: Vec<Option<usize>> = match dynamics {
            OutcomeDynamics::DensityWalk { params } => {
                let engine = CollapseEngine::new(&setup.state, &splits, params)?;
                let reps = engine.branch_representatives();
                (0..trials)
                    .into_par_iter()
                    .map(|trial| {
                        let mut draws = KeyedDraws::new(seed, trial);
                        let mut stream = OrderStream { items: &interactions, pos: 0 };
                        let t = engine.walk(&mut stream, &mut draws, None, false);
                        t.outcome().map(|b| {
                            let i = reps[b];
                            2 * setup.state.digit(i, 0) + setup.state.digit(i, 1)
                        })
                    })
                    .collect()
            }
            OutcomeDynamics::RuleProjection { rule } => {
                let mut firsts = Vec::new();
                for it in &interactions {
                    if !firsts.iter().any(|&(w, _)| w == it.split) {
                        firsts.push((it.split, it.id));
                    }
                }
                if firsts.len() != 2 {
                    return Err(validation("both wings need at least one event"));
                }
                let firsts = [firsts[0], firsts[1]];
                (0..trials)
                    .into_par_iter()
                    .map(|trial| {
                        let mut draws = KeyedDraws::new(seed, trial);
                        project_trial(&rule, &setup.state, firsts, &mut draws).map(Some)
                    })
                    .collect::<Result<Vec<_>>>()?
            }
        };
        let mut table = [0u64; 4];
        let mut missing = 0;
        for c in cells {
            match c {
                Some(c) => table[c] += 1,
                None => missing += 1,
            }
        }
        tables.push(table);
        incomplete.push(missing);
    }
    let rows: Vec<Vec<u64>> = tables.iter().map(|t| t.to_vec()).collect();
    let chi_square = chi_square_homogeneity(&rows)?;
    Ok(InvarianceReport { orders: orders.len(), trials, tables, incomplete, chi_square })
}
