//! Density shifts and the walk to absorption.
//!
//! Each entangling interaction defines a bifurcation of the state. The shift
//! moves Born density `d` into or out of the interacting component with equal
//! probability, rescaling each component as a whole so that phases and
//! amplitude ratios inside a component never change.
//!
//! [`apply_shift`] works on a full [`EntangledState`]. [`CollapseEngine`] runs
//! long walks on the coarser partition generated by the splits a scenario can
//! produce; because shifts only ever rescale whole cells of that partition,
//! the state after any walk is recovered exactly by [`CollapseEngine::materialize`].

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{validation, Error, Result};
use crate::rng::{Draws, Purpose, TrialRng};
use crate::state::{BasisRotation, Bifurcation, BranchSet, EntangledState};
use crate::tolerance::{ABSORPTION, ALGEBRAIC};

/// Sign of a density shift relative to the interacting component.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    /// `p → p + d`, `q → q − d`.
    Increase,
    /// `p → p − d`, `q → q + d`.
    Decrease,
}

impl Direction {
    pub fn sign(self) -> f64 {
        match self {
            Direction::Increase => 1.0,
            Direction::Decrease => -1.0,
        }
    }

    pub fn flip(self) -> Direction {
        match self {
            Direction::Increase => Direction::Decrease,
            Direction::Decrease => Direction::Increase,
        }
    }
}

/// How the per-interaction step size is chosen.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepDistribution {
    /// Every interaction shifts by `d`.
    #[default]
    Fixed,
    /// Each interaction draws its step uniformly from `[d/2, 3d/2]`.
    UniformSpread,
}

/// What happens when a step is larger than the room left in `p` or `q`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClampMode {
    /// The step shrinks to `min(p, q)` in both directions, so the
    /// boundary-ward draw absorbs and the walk stays a martingale.
    #[default]
    ReduceToBoundary,
}

/// Parameters of the density shift.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShiftParams {
    d: f64,
    steps: StepDistribution,
    clamp: ClampMode,
}

impl ShiftParams {
    /// Probability of each direction.
    pub const DIRECTION_PROB: f64 = 0.5;

    pub fn new(d: f64) -> Result<Self> {
        ShiftParams::with_steps(d, StepDistribution::Fixed)
    }

    pub fn with_steps(d: f64, steps: StepDistribution) -> Result<Self> {
        if !(d > 0.0 && d < 1.0) {
            return Err(validation(format!("step size d = {d} outside (0, 1)")));
        }
        if steps == StepDistribution::UniformSpread && 1.5 * d >= 1.0 {
            return Err(validation(format!("spread steps up to 1.5·d = {} reach 1", 1.5 * d)));
        }
        Ok(ShiftParams { d, steps, clamp: ClampMode::ReduceToBoundary })
    }

    pub fn d(&self) -> f64 {
        self.d
    }

    pub fn steps(&self) -> StepDistribution {
        self.steps
    }

    pub fn clamp_mode(&self) -> ClampMode {
        self.clamp
    }

    /// Mean step size.
    pub fn mean_step(&self) -> f64 {
        self.d
    }

    /// Step size for a uniform draw `u ∈ [0, 1)`.
    #[inline]
    pub fn step_for(&self, u: f64) -> f64 {
        match self.steps {
            StepDistribution::Fixed => self.d,
            StepDistribution::UniformSpread => self.d * (0.5 + u),
        }
    }
}

/// Result of a single shift on a full state.
#[derive(Clone, Debug, PartialEq)]
pub enum Shift {
    Applied { state: EntangledState, effective_d: f64, clamped: bool },
    /// The bifurcation already has `p` or `q` at zero; nothing moves.
    AlreadyAbsorbed,
}

/// Shifts density `step` toward (`Increase`) or away from (`Decrease`) the
/// interacting component of `bif`.
///
/// Interacting amplitudes are scaled by `√(p′/p)` and the complement by
/// `√(q′/q)`. The step is clamped to `min(p, q)`. A component left with
/// density below the absorption tolerance is zeroed and the rest renormalized.
pub fn apply_shift(
    state: &EntangledState,
    bif: &Bifurcation,
    direction: Direction,
    step: f64,
) -> Result<Shift> {
    if !(step > 0.0 && step < 1.0) {
        return Err(validation(format!("step size {step} outside (0, 1)")));
    }
    let p = state.born_density(bif.interacting())?;
    let q = state.born_density(bif.complement())?;
    if (p - bif.p()).abs() > ABSORPTION {
        return Err(Error::InconsistentBifurcation { recorded: bif.p(), actual: p });
    }
    if bif.interacting().len() + bif.complement().len() != state.len() {
        return Err(validation("bifurcation does not cover the state's basis"));
    }
    if p <= ABSORPTION || q <= ABSORPTION {
        return Ok(Shift::AlreadyAbsorbed);
    }
    let effective_d = step.min(p).min(q);
    let clamped = effective_d < step;
    let (mut p_new, mut q_new) = (p + direction.sign() * effective_d, q - direction.sign() * effective_d);
    let snapped = if p_new <= ABSORPTION {
        (p_new, q_new) = (0.0, 1.0);
        true
    } else if q_new <= ABSORPTION {
        (p_new, q_new) = (1.0, 0.0);
        true
    } else {
        false
    };
    let sp = (p_new / p).sqrt();
    let sq = (q_new / q).sqrt();
    let mut amps = state.amps().to_vec();
    for &i in bif.interacting().indices() {
        amps[i] *= sp;
    }
    for &i in bif.complement().indices() {
        amps[i] *= sq;
    }
    let new_state = if snapped {
        EntangledState::normalized(state.dims().to_vec(), state.labels().to_vec(), amps)?
    } else {
        EntangledState::new(state.dims().to_vec(), state.labels().to_vec(), amps)?
    };
    Ok(Shift::Applied { state: new_state, effective_d, clamped })
}

/// Density change of the first basis vector of `rot` (the `|u⟩` outcome on
/// the other particle) caused by a `+d` shift on `bif`.
///
/// `bif` must be a level split of one qubit of a two-qubit state and `rot`
/// must act on the other qubit. The change is
/// `d · (|⟨u|ψᵢ⟩|² − |⟨u|ψ_c⟩|²)` where `ψᵢ`, `ψ_c` are the other particle's
/// conditional states on the interacting and complementary branches; for
/// `α|x⟩|y⟩ + β|y⟩|x⟩` this is `d(δδ* − γγ*)`.
pub fn induced_step(
    state: &EntangledState,
    bif: &Bifurcation,
    rot: &BasisRotation,
    d: f64,
) -> Result<f64> {
    if state.dims() != [2, 2] {
        return Err(Error::Unsupported("induced steps need a two-qubit state".into()));
    }
    let aligned = (0..2)
        .flat_map(|s| (0..2).map(move |l| (s, l)))
        .find(|&(s, l)| state.level_set(s, l).map(|set| &set == bif.interacting()).unwrap_or(false));
    let Some((subsystem, level)) = aligned else {
        return Err(Error::Unsupported(
            "bifurcation is not a level split of a single subsystem".into(),
        ));
    };
    let other = 1 - subsystem;
    if rot.subsystem() != other {
        return Err(Error::Unsupported(
            "rotation must act on the particle that is not split".into(),
        ));
    }
    let conditional = |lvl: usize| -> Result<[num_complex::Complex64; 2]> {
        let mut levels = [0usize; 2];
        levels[subsystem] = lvl;
        let mut psi = [num_complex::Complex64::new(0.0, 0.0); 2];
        for (k, slot) in psi.iter_mut().enumerate() {
            levels[other] = k;
            *slot = state.amps()[state.index_of(&levels)?];
        }
        let n = (psi[0].norm_sqr() + psi[1].norm_sqr()).sqrt();
        if n <= ALGEBRAIC {
            return Err(Error::Unsupported("bifurcation component has zero density".into()));
        }
        Ok([psi[0] / n, psi[1] / n])
    };
    let inside = rot.project(0, conditional(level)?).norm_sqr();
    let outside = rot.project(0, conditional(1 - level)?).norm_sqr();
    Ok(d * (inside - outside))
}

/// One elementary interaction: an id (for keyed randomness and traces) and
/// the index of the split it defines.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Interaction {
    pub id: u64,
    pub split: usize,
}

/// Read-only view of a walk in progress, given to interaction streams.
pub struct WalkView<'a> {
    densities: &'a [f64],
    masks: &'a [u64],
}

impl WalkView<'_> {
    /// Density of the interacting side of split `split`.
    pub fn split_density(&self, split: usize) -> f64 {
        masked_sum(self.densities, self.masks[split])
    }

    pub fn branch_densities(&self) -> &[f64] {
        self.densities
    }

    pub fn split_count(&self) -> usize {
        self.masks.len()
    }
}

/// Source of interactions for a walk.
pub trait InteractionStream {
    /// Next interaction, or `None` when the stream is exhausted.
    fn next_interaction(&mut self, view: &WalkView<'_>, draws: &mut dyn Draws) -> Option<Interaction>;
}

/// The same split at every step.
#[derive(Clone, Debug)]
pub struct FixedSplit {
    split: usize,
    next_id: u64,
    limit: Option<u64>,
}

impl FixedSplit {
    pub fn new(split: usize) -> Self {
        FixedSplit { split, next_id: 0, limit: None }
    }

    /// Ends after `limit` interactions.
    pub fn limited(split: usize, limit: u64) -> Self {
        FixedSplit { split, next_id: 0, limit: Some(limit) }
    }
}

impl InteractionStream for FixedSplit {
    fn next_interaction(&mut self, _view: &WalkView<'_>, _draws: &mut dyn Draws) -> Option<Interaction> {
        if self.limit.is_some_and(|l| self.next_id >= l) {
            return None;
        }
        let id = self.next_id;
        self.next_id += 1;
        Some(Interaction { id, split: self.split })
    }
}

/// Picks one detector per step, with probability proportional to its weight,
/// among detectors whose branch still carries density.
#[derive(Clone, Debug)]
pub struct WeightedDetectors {
    weights: Vec<f64>,
    next_id: u64,
    limit: Option<u64>,
}

impl WeightedDetectors {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() || weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(validation("detector weights must be finite and non-negative"));
        }
        if weights.iter().sum::<f64>() <= 0.0 {
            return Err(validation("detector weights sum to zero"));
        }
        Ok(WeightedDetectors { weights, next_id: 0, limit: None })
    }

    pub fn uniform(detectors: usize) -> Result<Self> {
        WeightedDetectors::new(vec![1.0; detectors])
    }

    pub fn with_limit(mut self, limit: u64) -> Self {
        self.limit = Some(limit);
        self
    }
}

impl InteractionStream for WeightedDetectors {
    fn next_interaction(&mut self, view: &WalkView<'_>, draws: &mut dyn Draws) -> Option<Interaction> {
        if self.limit.is_some_and(|l| self.next_id >= l) {
            return None;
        }
        let alive = |i: usize| {
            let p = view.split_density(i);
            p > ABSORPTION && p < 1.0 - ABSORPTION
        };
        let total: f64 = (0..self.weights.len()).filter(|&i| alive(i)).map(|i| self.weights[i]).sum();
        if total <= 0.0 {
            return None;
        }
        let id = self.next_id;
        self.next_id += 1;
        let mut target = draws.unit(id, 1) * total;
        let mut chosen = None;
        for (i, w) in self.weights.iter().enumerate() {
            if !alive(i) || *w == 0.0 {
                continue;
            }
            chosen = Some(i);
            if target < *w {
                break;
            }
            target -= w;
        }
        chosen.map(|split| Interaction { id, split })
    }
}

/// A fixed, finite sequence of interactions.
#[derive(Clone, Debug)]
pub struct OrderedInteractions {
    items: Vec<Interaction>,
    pos: usize,
}

impl OrderedInteractions {
    pub fn new(items: Vec<Interaction>) -> Self {
        OrderedInteractions { items, pos: 0 }
    }
}

impl InteractionStream for OrderedInteractions {
    fn next_interaction(&mut self, _view: &WalkView<'_>, _draws: &mut dyn Draws) -> Option<Interaction> {
        let it = self.items.get(self.pos).copied();
        self.pos += 1;
        it
    }
}

/// One recorded shift.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub interaction: u64,
    pub split: usize,
    /// Density of the interacting component before the shift.
    pub p_before: f64,
    pub direction: Direction,
    pub effective_d: f64,
    pub clamped: bool,
}

/// Why a walk stopped.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum WalkEnd {
    /// One branch holds all the density.
    Absorbed { branch: usize },
    /// The stream ran out (or only offered absorbed splits) first.
    Exhausted,
    /// A fixed-step run applied all of its steps.
    StepsDone,
}

/// Record of one trial.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WalkTrace {
    /// Per-step records; empty unless recording was requested.
    pub steps: Vec<StepRecord>,
    pub end: WalkEnd,
    /// Final density of each branch of the engine's partition.
    pub final_densities: Vec<f64>,
    /// Number of shifts applied (no-op interactions excluded).
    pub step_count: u64,
    /// Number of shifts whose size was reduced to `min(p, q)`.
    pub clamps: u64,
}

impl WalkTrace {
    pub fn outcome(&self) -> Option<usize> {
        match self.end {
            WalkEnd::Absorbed { branch } => Some(branch),
            _ => None,
        }
    }

    pub fn is_absorbed(&self) -> bool {
        self.outcome().is_some()
    }
}

/// Result of running a walk until absorption.
#[derive(Clone, Debug, PartialEq)]
pub enum CollapseOutcome {
    Collapsed(WalkTrace),
    /// The stream ended before any branch reached density 1.
    Incomplete(WalkTrace),
}

impl CollapseOutcome {
    pub fn trace(&self) -> &WalkTrace {
        match self {
            CollapseOutcome::Collapsed(t) | CollapseOutcome::Incomplete(t) => t,
        }
    }

    pub fn into_trace(self) -> WalkTrace {
        match self {
            CollapseOutcome::Collapsed(t) | CollapseOutcome::Incomplete(t) => t,
        }
    }
}

/// Consecutive no-op interactions after which a walk is declared stalled.
const MAX_IDLE: u32 = 100_000;

#[inline]
fn masked_sum(densities: &[f64], mask: u64) -> f64 {
    densities
        .iter()
        .enumerate()
        .filter(|(a, _)| mask >> a & 1 == 1)
        .map(|(_, w)| *w)
        .sum()
}

/// Walk runner over the partition generated by a fixed family of splits.
#[derive(Clone, Debug)]
pub struct CollapseEngine {
    initial: EntangledState,
    branch_of: Vec<usize>,
    initial_densities: Vec<f64>,
    masks: Vec<u64>,
    params: ShiftParams,
}

impl CollapseEngine {
    /// Partitions the basis of `state` by membership in each of `splits`.
    /// Branches are numbered by their lowest basis index.
    pub fn new(state: &EntangledState, splits: &[BranchSet], params: ShiftParams) -> Result<Self> {
        if splits.is_empty() {
            return Err(validation("at least one split is required"));
        }
        for s in splits {
            if s.indices().last().is_some_and(|&i| i >= state.len()) {
                return Err(validation("split index out of range"));
            }
        }
        let mut lookup: HashMap<Vec<bool>, usize> = HashMap::new();
        let mut branch_of = Vec::with_capacity(state.len());
        for i in 0..state.len() {
            let sig: Vec<bool> = splits.iter().map(|s| s.contains(i)).collect();
            let next = lookup.len();
            branch_of.push(*lookup.entry(sig).or_insert(next));
        }
        let branches = lookup.len();
        if branches > 64 {
            return Err(Error::Unsupported(format!("{branches} branches; at most 64 supported")));
        }
        let mut initial_densities = vec![0.0; branches];
        for (i, a) in state.amps().iter().enumerate() {
            initial_densities[branch_of[i]] += a.norm_sqr();
        }
        let masks = splits
            .iter()
            .map(|s| {
                s.indices().iter().fold(0u64, |m, &i| m | 1 << branch_of[i])
            })
            .collect();
        Ok(CollapseEngine { initial: state.clone(), branch_of, initial_densities, masks, params })
    }

    pub fn params(&self) -> &ShiftParams {
        &self.params
    }

    pub fn initial_state(&self) -> &EntangledState {
        &self.initial
    }

    pub fn branch_count(&self) -> usize {
        self.initial_densities.len()
    }

    pub fn initial_densities(&self) -> &[f64] {
        &self.initial_densities
    }

    /// Branch that basis element `index` belongs to.
    pub fn branch_of(&self, index: usize) -> usize {
        self.branch_of[index]
    }

    /// Lowest basis index of each branch.
    pub fn branch_representatives(&self) -> Vec<usize> {
        let mut reps = vec![usize::MAX; self.branch_count()];
        for (i, &b) in self.branch_of.iter().enumerate() {
            reps[b] = reps[b].min(i);
        }
        reps
    }

    /// Rebuilds the full state for a given set of branch densities.
    pub fn materialize(&self, densities: &[f64]) -> Result<EntangledState> {
        if densities.len() != self.branch_count() {
            return Err(validation("one density per branch required"));
        }
        let amps = self
            .initial
            .amps()
            .iter()
            .enumerate()
            .map(|(i, a)| {
                let b = self.branch_of[i];
                let w0 = self.initial_densities[b];
                if w0 > 0.0 {
                    a * (densities[b] / w0).sqrt()
                } else {
                    *a * 0.0
                }
            })
            .collect();
        EntangledState::normalized(self.initial.dims().to_vec(), self.initial.labels().to_vec(), amps)
    }

    fn absorbed_branch(densities: &[f64]) -> Option<usize> {
        densities.iter().position(|&w| w >= 1.0 - ABSORPTION)
    }

    /// Applies one shift on the branch densities. Returns `(p_before,
    /// effective_d)` or `None` when the split is already absorbed.
    #[inline]
    fn shift_densities(&self, dens: &mut [f64], mask: u64, step: f64, dir: Direction) -> Option<(f64, f64)> {
        let mut p = 0.0;
        let mut q = 0.0;
        for (a, w) in dens.iter().enumerate() {
            if mask >> a & 1 == 1 {
                p += w;
            } else {
                q += w;
            }
        }
        let total = p + q;
        p /= total;
        q /= total;
        if p <= ABSORPTION || q <= ABSORPTION {
            return None;
        }
        let d_eff = step.min(p).min(q);
        let mut p_new = p + dir.sign() * d_eff;
        let mut q_new = q - dir.sign() * d_eff;
        if p_new <= ABSORPTION {
            p_new = 0.0;
            q_new = 1.0;
        } else if q_new <= ABSORPTION {
            p_new = 1.0;
            q_new = 0.0;
        }
        let sp = p_new / (p * total);
        let sq = q_new / (q * total);
        for (a, w) in dens.iter_mut().enumerate() {
            *w *= if mask >> a & 1 == 1 { sp } else { sq };
        }
        Some((p, d_eff))
    }

    /// Runs until a branch absorbs all density, the stream ends, or (with
    /// `max_shifts`) that many shifts have been applied.
    pub fn walk<S: InteractionStream + ?Sized, D: Draws>(
        &self,
        stream: &mut S,
        draws: &mut D,
        max_shifts: Option<u64>,
        record: bool,
    ) -> WalkTrace {
        let mut dens = self.initial_densities.clone();
        let mut steps = Vec::new();
        let mut step_count = 0u64;
        let mut clamps = 0u64;
        let mut idle = 0u32;
        let end = loop {
            if let Some(b) = Self::absorbed_branch(&dens) {
                dens.iter_mut().enumerate().for_each(|(a, w)| *w = if a == b { 1.0 } else { 0.0 });
                break WalkEnd::Absorbed { branch: b };
            }
            if max_shifts.is_some_and(|m| step_count >= m) {
                break WalkEnd::StepsDone;
            }
            let view = WalkView { densities: &dens, masks: &self.masks };
            let Some(it) = stream.next_interaction(&view, draws) else {
                break WalkEnd::Exhausted;
            };
            let mask = self.masks[it.split];
            let p = masked_sum(&dens, mask);
            if p <= ABSORPTION || p >= 1.0 - ABSORPTION {
                idle += 1;
                if idle >= MAX_IDLE {
                    break WalkEnd::Exhausted;
                }
                continue;
            }
            idle = 0;
            let dir = draws.direction(it.id);
            let step = match self.params.steps() {
                StepDistribution::Fixed => self.params.d(),
                StepDistribution::UniformSpread => self.params.step_for(draws.unit(it.id, 2)),
            };
            if let Some((p_before, d_eff)) = self.shift_densities(&mut dens, mask, step, dir) {
                step_count += 1;
                let clamped = d_eff < step;
                if clamped {
                    clamps += 1;
                }
                if record {
                    steps.push(StepRecord {
                        interaction: it.id,
                        split: it.split,
                        p_before,
                        direction: dir,
                        effective_d: d_eff,
                        clamped,
                    });
                }
            }
        };
        WalkTrace { steps, end, final_densities: dens, step_count, clamps }
    }

    /// Walks until absorption; an exhausted stream yields
    /// [`CollapseOutcome::Incomplete`] with the partial trace.
    pub fn run_collapse<S: InteractionStream + ?Sized, D: Draws>(
        &self,
        stream: &mut S,
        draws: &mut D,
        record: bool,
    ) -> CollapseOutcome {
        let trace = self.walk(stream, draws, None, record);
        if trace.is_absorbed() {
            CollapseOutcome::Collapsed(trace)
        } else {
            CollapseOutcome::Incomplete(trace)
        }
    }

    /// Applies exactly `n_steps` shifts, or fewer if a branch absorbs first
    /// (then `trace.end` is `Absorbed`). Returns the evolved state.
    pub fn run_fixed_steps<S: InteractionStream + ?Sized, D: Draws>(
        &self,
        stream: &mut S,
        draws: &mut D,
        n_steps: u64,
        record: bool,
    ) -> Result<(EntangledState, WalkTrace)> {
        let trace = self.walk(stream, draws, Some(n_steps), record);
        let state = self.materialize(&trace.final_densities)?;
        Ok((state, trace))
    }
}

/// Convenience: one trial's walk to absorption with a fresh per-trial stream.
pub fn run_collapse(
    state: &EntangledState,
    splits: &[BranchSet],
    stream: &mut dyn InteractionStream,
    params: ShiftParams,
    rng_seed: u64,
) -> Result<CollapseOutcome> {
    let engine = CollapseEngine::new(state, splits, params)?;
    let mut draws = TrialRng::new(rng_seed, 0, Purpose::Shifts);
    Ok(engine.run_collapse(stream, &mut draws, true))
}

/// Convenience: exactly `n_steps` shifts with a fresh per-trial stream.
pub fn run_fixed_steps(
    state: &EntangledState,
    splits: &[BranchSet],
    stream: &mut dyn InteractionStream,
    params: ShiftParams,
    n_steps: u64,
    rng_seed: u64,
) -> Result<(EntangledState, WalkTrace)> {
    let engine = CollapseEngine::new(state, splits, params)?;
    let mut draws = TrialRng::new(rng_seed, 0, Purpose::Shifts);
    engine.run_fixed_steps(stream, &mut draws, n_steps, true)
}
