//! Measurement scenarios and closed-form predictions.
//!
//! A [`Scenario`] bundles an initial state (already written in the basis the
//! detectors measure), the splits its interactions produce, and how each
//! trial's interactions are chosen.

use std::f64::consts::SQRT_2;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::collapse::{CollapseEngine, FixedSplit, InteractionStream, ShiftParams, WeightedDetectors};
use crate::error::{validation, Result};
use crate::rng::{Purpose, TrialRng};
use crate::sequencer::{bell_events, EventPoset, EventStream, PreparedOrdering, SequencerPolicy, SpacetimeEvent};
use crate::state::{BasisRotation, BranchSet, EntangledState};

/// Amplitude in a config: a real number or `[re, im]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AmpSpec {
    Real(f64),
    Complex([f64; 2]),
}

impl AmpSpec {
    pub fn value(self) -> Complex64 {
        match self {
            AmpSpec::Real(x) => Complex64::new(x, 0.0),
            AmpSpec::Complex([re, im]) => Complex64::new(re, im),
        }
    }
}

impl From<f64> for AmpSpec {
    fn from(x: f64) -> Self {
        AmpSpec::Real(x)
    }
}

/// Measurement basis `u = γx + δy`, `v = δ*x − γ*y`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisSpec {
    pub gamma: AmpSpec,
    pub delta: AmpSpec,
}

impl BasisSpec {
    pub fn rotation(&self, subsystem: usize) -> Result<BasisRotation> {
        BasisRotation::new(subsystem, self.gamma.value(), self.delta.value(), ["u", "v"])
    }
}

/// Scenario section of an experiment config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ScenarioConfig {
    /// `α|x⟩ + β|y⟩` with every interaction splitting off `|x⟩`.
    Binary { alpha: AmpSpec, beta: AmpSpec },
    /// One detector per outcome; each step one detector interacts.
    MultiOutcome {
        densities: Vec<f64>,
        #[serde(default)]
        detector_weights: Option<Vec<f64>>,
    },
    /// `α|x⟩|y⟩ + β|y⟩|x⟩`, wing `a` (particle 1) and wing `b` measured in
    /// the given bases.
    BellEpr {
        alpha: AmpSpec,
        beta: AmpSpec,
        #[serde(default)]
        basis_a: Option<BasisSpec>,
        #[serde(default)]
        basis_b: Option<BasisSpec>,
        /// Events per wing when `events` is not given.
        #[serde(default)]
        events_per_wing: Option<usize>,
        #[serde(default)]
        events: Option<Vec<SpacetimeEvent>>,
    },
    /// `α|x↑⟩ + β|x↓⟩` correlated with `n` detectors in the x basis.
    EraserChain { alpha: AmpSpec, beta: AmpSpec, n: u64 },
    /// `α|x↑⟩ + β|x↓⟩` with `|α|² = d`, one correlating interaction.
    AmplifiedAlpha {},
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    Binary,
    MultiOutcome,
    BellEpr,
    EraserChain,
    AmplifiedAlpha,
}

/// How a trial's interactions are generated.
#[derive(Clone, Debug)]
pub enum Driver {
    /// Split 0 at every step.
    Fixed,
    /// One of the splits per step, weighted, among live branches.
    Weighted(Vec<f64>),
    /// Spacetime events in a random admissible order.
    Events { poset: EventPoset, ordering: PreparedOrdering },
}

/// A built scenario.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub kind: ScenarioKind,
    pub state: EntangledState,
    pub splits: Vec<BranchSet>,
    pub driver: Driver,
    /// Fixed number of shifts per trial (eraser-like scenarios).
    pub n_steps: Option<u64>,
}

/// Events per wing so that an unresolved wing after the last event is a
/// ~16-mean-duration tail event.
pub fn default_events_per_wing(d: f64) -> usize {
    (4.0 / (d * d)).ceil() as usize
}

fn qubit(labels: [&str; 2], alpha: Complex64, beta: Complex64) -> Result<EntangledState> {
    EntangledState::qubit(labels, alpha, beta)
}

impl Scenario {
    pub fn binary(alpha: Complex64, beta: Complex64) -> Result<Scenario> {
        let state = qubit(["x", "y"], alpha, beta)?;
        let splits = vec![state.level_set(0, 0)?];
        Ok(Scenario { kind: ScenarioKind::Binary, state, splits, driver: Driver::Fixed, n_steps: None })
    }

    /// Binary scenario with real amplitudes `√p0`, `√(1 − p0)`.
    pub fn binary_density(p0: f64) -> Result<Scenario> {
        if !(0.0..=1.0).contains(&p0) {
            return Err(validation(format!("p0 = {p0} outside [0, 1]")));
        }
        Scenario::binary(Complex64::new(p0.sqrt(), 0.0), Complex64::new((1.0 - p0).sqrt(), 0.0))
    }

    pub fn multi_outcome(densities: &[f64], weights: Option<Vec<f64>>) -> Result<Scenario> {
        if densities.len() < 2 || densities.iter().any(|&w| w.is_nan() || w < 0.0) {
            return Err(validation("multi-outcome needs at least two non-negative densities"));
        }
        let total: f64 = densities.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(validation(format!("densities sum to {total}, not 1")));
        }
        let dim = densities.len();
        let labels = vec![(1..=dim).map(|i| format!("o{i}")).collect()];
        let amps = densities.iter().map(|w| Complex64::new(w.sqrt(), 0.0)).collect();
        let state = EntangledState::new(vec![dim], labels, amps)?;
        let splits = (0..dim).map(|l| state.level_set(0, l)).collect::<Result<_>>()?;
        let weights = weights.unwrap_or_else(|| vec![1.0; dim]);
        if weights.len() != dim {
            return Err(validation("one detector weight per outcome required"));
        }
        WeightedDetectors::new(weights.clone())?;
        Ok(Scenario { kind: ScenarioKind::MultiOutcome, state, splits, driver: Driver::Weighted(weights), n_steps: None })
    }

    /// `α|x⟩|y⟩ + β|y⟩|x⟩` rotated into the wing bases.
    pub fn bell(
        alpha: Complex64,
        beta: Complex64,
        basis_a: Option<&BasisRotation>,
        basis_b: Option<&BasisRotation>,
        events: Vec<SpacetimeEvent>,
        policy: SequencerPolicy,
    ) -> Result<Scenario> {
        let labels = vec![vec!["x".into(), "y".into()], vec!["x".into(), "y".into()]];
        let zero = Complex64::new(0.0, 0.0);
        let mut state = EntangledState::new(vec![2, 2], labels, vec![zero, alpha, beta, zero])?;
        for (wing, basis) in [(0, basis_a), (1, basis_b)] {
            if let Some(b) = basis {
                state = state.rotate_subsystem(&b.on_subsystem(wing))?;
            }
        }
        let wings: Vec<usize> = events.iter().map(|e| e.detector).collect();
        if wings.iter().any(|&w| w > 1) {
            return Err(validation("bell-epr events must name detector 0 or 1"));
        }
        if !(wings.contains(&0) && wings.contains(&1)) {
            return Err(validation("bell-epr needs events on both wings"));
        }
        let splits = vec![state.level_set(0, 0)?, state.level_set(1, 0)?];
        let poset = EventPoset::new(events)?;
        let ordering = PreparedOrdering::new(&poset, policy)?;
        Ok(Scenario { kind: ScenarioKind::BellEpr, state, splits, driver: Driver::Events { poset, ordering }, n_steps: None })
    }

    /// Reduced two-branch form of the eraser chain: after `n` correlating
    /// interactions only the two x branches carry amplitude, and every
    /// interaction bifurcates along the same split.
    pub fn eraser(alpha: Complex64, beta: Complex64, n: u64) -> Result<Scenario> {
        let state = qubit(["x-up", "x-down"], alpha, beta)?;
        let splits = vec![state.level_set(0, 0)?];
        Ok(Scenario { kind: ScenarioKind::EraserChain, state, splits, driver: Driver::Fixed, n_steps: Some(n) })
    }

    pub fn amplified(d: f64) -> Result<Scenario> {
        if !(d > 0.0 && d < 1.0) {
            return Err(validation(format!("amplified scheme needs 0 < d < 1, got {d}")));
        }
        let state = qubit(["x-up", "x-down"], Complex64::new(d.sqrt(), 0.0), Complex64::new((1.0 - d).sqrt(), 0.0))?;
        let splits = vec![state.level_set(0, 0)?];
        Ok(Scenario { kind: ScenarioKind::AmplifiedAlpha, state, splits, driver: Driver::Fixed, n_steps: Some(1) })
    }

    pub fn engine(&self, params: ShiftParams) -> Result<CollapseEngine> {
        CollapseEngine::new(&self.state, &self.splits, params)
    }

    /// Fresh interaction stream for one trial.
    pub fn stream(&self, seed: u64, trial: u64) -> Box<dyn InteractionStream + '_> {
        match &self.driver {
            Driver::Fixed => Box::new(FixedSplit::new(0)),
            Driver::Weighted(w) => Box::new(WeightedDetectors::new(w.clone()).expect("validated at build")),
            Driver::Events { poset, ordering } => {
                Box::new(EventStream::new(poset, ordering, TrialRng::new(seed, trial, Purpose::Ordering)))
            }
        }
    }

    /// Human-readable label of each engine branch.
    pub fn branch_labels(&self, engine: &CollapseEngine) -> Vec<String> {
        engine.branch_representatives().into_iter().map(|i| self.state.basis_label(i)).collect()
    }
}

/// Builds a scenario from its config section.
pub fn build_scenario(config: &ScenarioConfig, d: f64, policy: SequencerPolicy) -> Result<Scenario> {
    match config {
        ScenarioConfig::Binary { alpha, beta } => Scenario::binary(alpha.value(), beta.value()),
        ScenarioConfig::MultiOutcome { densities, detector_weights } => {
            Scenario::multi_outcome(densities, detector_weights.clone())
        }
        ScenarioConfig::BellEpr { alpha, beta, basis_a, basis_b, events_per_wing, events } => {
            let ra = basis_a.map(|b| b.rotation(0)).transpose()?;
            let rb = basis_b.map(|b| b.rotation(1)).transpose()?;
            let events = match (events, events_per_wing) {
                (Some(_), Some(_)) => return Err(validation("give either events or events_per_wing, not both")),
                (Some(e), None) => e.clone(),
                (None, n) => {
                    let n = n.unwrap_or_else(|| default_events_per_wing(d));
                    if n == 0 {
                        return Err(validation("events_per_wing must be positive"));
                    }
                    bell_events(n, n as f64)
                }
            };
            Scenario::bell(alpha.value(), beta.value(), ra.as_ref(), rb.as_ref(), events, policy)
        }
        ScenarioConfig::EraserChain { alpha, beta, n } => Scenario::eraser(alpha.value(), beta.value(), *n),
        ScenarioConfig::AmplifiedAlpha {} => Scenario::amplified(d),
    }
}

/// Cross-term amplitude `(α′ − β′)/2` of the eraser chain after the branch
/// amplitudes moved from `(α, β)` to `(α′, β′)`; each of the two cross terms
/// has this amplitude.
pub fn eraser_cross_amplitude(alpha_new: Complex64, beta_new: Complex64) -> Complex64 {
    (alpha_new - beta_new) / 2.0
}

/// Leading-order eraser prediction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EraserPrediction {
    pub n: u64,
    pub d: f64,
    /// `|α′ − β′|/2` with `α′ = α(1 + s/2|α|²)`, `β′ = β(1 − s/2|β|²)`, `s = d√N`.
    pub cross_amp: f64,
    /// Probability of one cross term, `cross_amp²`.
    pub deviant_prob_per_term: f64,
    /// Both cross terms together, `2·cross_amp²`.
    pub deviant_prob_total: f64,
    /// `d√N / min(|α|², |β|²)`; the expansion needs this ≪ 1.
    pub regime_ratio: f64,
    pub regime_warning: bool,
}

pub fn predict_eraser_deviation(n: u64, d: f64, alpha: Complex64, beta: Complex64) -> Result<EraserPrediction> {
    if !(0.0..1.0).contains(&d) {
        return Err(validation(format!("d = {d} outside [0, 1)")));
    }
    if ((alpha.norm_sqr() + beta.norm_sqr()) - 1.0).abs() > 1e-12 {
        return Err(validation("α and β must be normalized"));
    }
    let s = d * (n as f64).sqrt();
    let (pa, pb) = (alpha.norm_sqr(), beta.norm_sqr());
    let min = pa.min(pb);
    let (alpha_new, beta_new) = if min > 0.0 {
        (alpha * (1.0 + s / (2.0 * pa)), beta * (1.0 - s / (2.0 * pb)))
    } else {
        (alpha, beta)
    };
    let cross_amp = (alpha_new - beta_new).norm() / 2.0;
    let regime_ratio = if min > 0.0 { s / min } else { f64::INFINITY };
    Ok(EraserPrediction {
        n,
        d,
        cross_amp,
        deviant_prob_per_term: cross_amp * cross_amp,
        deviant_prob_total: 2.0 * cross_amp * cross_amp,
        regime_ratio,
        regime_warning: regime_ratio > 0.1,
    })
}

/// Correlation loss `1 − (αα′ + ββ′)²` for real amplitudes.
pub fn correlation_loss(alpha: f64, beta: f64, alpha_new: f64, beta_new: f64) -> f64 {
    let overlap = alpha * alpha_new + beta * beta_new;
    1.0 - overlap * overlap
}

/// Three numbers for the absorbed case, the doubled case and their mean.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseTriple {
    pub case_absorbed: f64,
    pub case_doubled: f64,
    pub average: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AmplifiedPrediction {
    pub d: f64,
    pub exact: CaseTriple,
    /// First order in `d`: `d`, `(3 − 2√2)d`, `(2 − √2)d`.
    pub leading_order: CaseTriple,
    /// Rounded coefficients `d`, `0.2d`, `0.6d`.
    pub rounded: CaseTriple,
    pub regime_warning: bool,
}

/// Correlation loss after one shift of size `d = |α|²`: either `α′ = 0`
/// (absorbed) or `|α′|² = 2d` (doubled), each with probability ½.
pub fn predict_amplified_deviation(d: f64) -> Result<AmplifiedPrediction> {
    if !(d > 0.0 && d <= 0.5) {
        return Err(validation(format!("amplified scheme needs 0 < d ≤ 1/2, got {d}")));
    }
    let (a, b) = (d.sqrt(), (1.0 - d).sqrt());
    let case_absorbed = correlation_loss(a, b, 0.0, 1.0);
    let case_doubled = correlation_loss(a, b, (2.0 * d).sqrt(), (1.0 - 2.0 * d).sqrt());
    let c = 3.0 - 2.0 * SQRT_2;
    Ok(AmplifiedPrediction {
        d,
        exact: CaseTriple { case_absorbed, case_doubled, average: (case_absorbed + case_doubled) / 2.0 },
        leading_order: CaseTriple { case_absorbed: d, case_doubled: c * d, average: (1.0 + c) / 2.0 * d },
        rounded: CaseTriple { case_absorbed: d, case_doubled: 0.2 * d, average: 0.6 * d },
        regime_warning: d >= 0.1,
    })
}

/// Size chain from the smallest free-living organisms to the mean step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaleEstimate {
    pub organism_particles: [f64; 2],
    pub safety_factor: [f64; 2],
    /// Steps for complete collapse: particles / safety factor.
    pub steps_range: [f64; 2],
    /// Geometric mean of `steps_range`.
    pub nominal_steps: f64,
    /// `1/√nominal_steps`.
    pub d_bar: f64,
    /// `d_bar` to one significant figure.
    pub d_bar_rounded: f64,
    /// `round(1/d_bar²)`.
    pub steps_to_collapse: f64,
    /// `1/d_bar` to one significant figure.
    pub one_part_in: f64,
    pub grw_lambda: f64,
    pub grw_collapse_time: f64,
    /// Particles for a collapse within `grw_collapse_time`: `1/(λt)`.
    pub grw_system_size: f64,
}

/// Default GRW collapse time for the comparison, in seconds.
pub const GRW_COLLAPSE_TIME: f64 = 0.01;
pub const GRW_LAMBDA: f64 = 1e-16;

/// Rounds to one significant figure.
pub fn one_sig_fig(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    let e = x.abs().log10().floor() as i32;
    if e < 0 {
        let scale = 10f64.powi(-e);
        (x * scale).round() / scale
    } else {
        let scale = 10f64.powi(e);
        (x / scale).round() * scale
    }
}

pub fn estimate_scale(
    particles_low: f64,
    particles_high: f64,
    safety_low: f64,
    safety_high: f64,
) -> Result<ScaleEstimate> {
    estimate_scale_with(particles_low, particles_high, safety_low, safety_high, GRW_LAMBDA, GRW_COLLAPSE_TIME)
}

pub fn estimate_scale_with(
    particles_low: f64,
    particles_high: f64,
    safety_low: f64,
    safety_high: f64,
    grw_lambda: f64,
    grw_collapse_time: f64,
) -> Result<ScaleEstimate> {
    let all = [particles_low, particles_high, safety_low, safety_high, grw_lambda, grw_collapse_time];
    if all.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
        return Err(validation("scale inputs must be positive"));
    }
    if particles_low > particles_high || safety_low > safety_high {
        return Err(validation("ranges must be given low, high"));
    }
    let steps_range = [particles_low / safety_high, particles_high / safety_low];
    let nominal_steps = (steps_range[0] * steps_range[1]).sqrt();
    let d_bar = 1.0 / nominal_steps.sqrt();
    let d_bar_rounded = one_sig_fig(d_bar);
    Ok(ScaleEstimate {
        organism_particles: [particles_low, particles_high],
        safety_factor: [safety_low, safety_high],
        steps_range,
        nominal_steps,
        d_bar,
        d_bar_rounded,
        steps_to_collapse: (1.0 / (d_bar * d_bar)).round(),
        one_part_in: one_sig_fig(1.0 / d_bar),
        grw_lambda,
        grw_collapse_time,
        grw_system_size: 1.0 / grw_lambda / grw_collapse_time,
    })
}

/// Born probabilities of the four joint outcomes `|x u⟩, |x v⟩, |y u⟩, |y v⟩`
/// of `α|x⟩|y⟩ + β|y⟩|x⟩` measured with particle 2 in the `(γ, δ)` basis.
pub fn bell_joint_densities(alpha: Complex64, beta: Complex64, gamma: Complex64, delta: Complex64) -> [f64; 4] {
    [
        (alpha * delta.conj()).norm_sqr(),
        (alpha * gamma).norm_sqr(),
        (beta * gamma.conj()).norm_sqr(),
        (beta * delta).norm_sqr(),
    ]
}

/// Dense `n`-detector eraser state: subject `α′|x↑⟩ + β′|x↓⟩` correlated
/// with `n` detectors in the x basis, then every subsystem rotated to z.
/// Small `n` only (`2^(n+1)` amplitudes).
pub fn eraser_dense_state(alpha: Complex64, beta: Complex64, n: usize) -> Result<EntangledState> {
    let mut s = qubit(["x-up", "x-down"], alpha, beta)?;
    for k in 1..=n {
        s = s.tensor_extend(2, "x-ready")?;
        s = s.correlate(0, k, None)?;
    }
    for k in 0..=n {
        s = s.rotate_subsystem(&BasisRotation::hadamard(k, ["z-up", "z-down"]))?;
    }
    Ok(s)
}

/// Cross-term ("deviant") density of a z-rotated eraser state: subject z↑
/// with an odd number of detector z↓, or subject z↓ with an even number.
/// Returns `(up_odd, down_even)`.
pub fn eraser_cross_densities(z_state: &EntangledState) -> (f64, f64) {
    let n_sub = z_state.subsystem_count();
    let mut up_odd = 0.0;
    let mut down_even = 0.0;
    for (i, a) in z_state.amps().iter().enumerate() {
        let downs = (1..n_sub).filter(|&k| z_state.digit(i, k) == 1).count();
        match (z_state.digit(i, 0), downs % 2) {
            (0, 1) => up_odd += a.norm_sqr(),
            (1, 0) => down_even += a.norm_sqr(),
            _ => {}
        }
    }
    (up_odd, down_even)
}
