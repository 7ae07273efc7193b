//! Candidate probability rules and their signaling gaps.
//!
//! A rule turns the amplitudes of an orthogonal decomposition into outcome
//! weights. Applied to a two-particle state it predicts a marginal for one
//! wing; if that marginal changes when the other wing is measured first in
//! some basis, the rule would let a distant choice of basis be read off
//! locally. All numbers here are exact; nothing is sampled.

use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::state::{BasisRotation, EntangledState};
use crate::tolerance::ZERO_AMPLITUDE;

/// Map from amplitudes to outcome weights.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ProbabilityRule {
    /// `|aᵢ|²`.
    Born,
    /// `|aᵢ| / Σ|aⱼ|`.
    AbsAmplitude,
    /// Uniform over amplitudes with `|aᵢ| > 1e-12`.
    EqualNonzero,
    /// All weight on the largest `|aᵢ|`; ties go to the lowest index.
    MaxDeterministic,
    /// `(1 + cos arg aᵢ)/2` on nonzero amplitudes, normalized. Falls back to
    /// uniform over nonzero amplitudes when every phase is π.
    CosineAngle,
    /// `|aᵢ|^k`, normalized.
    PowerLaw { k: f64 },
}

impl ProbabilityRule {
    pub fn name(&self) -> &'static str {
        match self {
            ProbabilityRule::Born => "born",
            ProbabilityRule::AbsAmplitude => "abs-amplitude",
            ProbabilityRule::EqualNonzero => "equal-nonzero",
            ProbabilityRule::MaxDeterministic => "max-deterministic",
            ProbabilityRule::CosineAngle => "cosine-angle",
            ProbabilityRule::PowerLaw { .. } => "power-law",
        }
    }

    /// Exponent for power-law rules, 2 for Born, none otherwise.
    pub fn exponent(&self) -> Option<f64> {
        match self {
            ProbabilityRule::Born => Some(2.0),
            ProbabilityRule::PowerLaw { k } => Some(*k),
            _ => None,
        }
    }
}

fn normalize(mut w: Vec<f64>) -> Vec<f64> {
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= total);
    w
}

/// True when the largest modulus is shared by more than one amplitude.
pub fn has_max_tie(amps: &[Complex64]) -> bool {
    let max = amps.iter().map(|a| a.norm()).fold(0.0, f64::max);
    amps.iter().filter(|a| (a.norm() - max).abs() <= ZERO_AMPLITUDE).count() > 1
}

/// Outcome weights of `rule` for the amplitudes of an orthogonal
/// decomposition. Non-negative and summing to one.
pub fn outcome_weights(rule: &ProbabilityRule, amps: &[Complex64]) -> Result<Vec<f64>> {
    let nonzero: Vec<bool> = amps.iter().map(|a| a.norm() > ZERO_AMPLITUDE).collect();
    if !nonzero.iter().any(|&b| b) {
        return Err(domain("outcome weights of a zero vector"));
    }
    let w = match rule {
        ProbabilityRule::Born => normalize(amps.iter().map(|a| a.norm_sqr()).collect()),
        ProbabilityRule::AbsAmplitude => normalize(amps.iter().map(|a| a.norm()).collect()),
        ProbabilityRule::EqualNonzero => normalize(nonzero.iter().map(|&b| f64::from(u8::from(b))).collect()),
        ProbabilityRule::MaxDeterministic => {
            let mut best = 0;
            for (i, a) in amps.iter().enumerate() {
                if a.norm() > amps[best].norm() + ZERO_AMPLITUDE {
                    best = i;
                }
            }
            (0..amps.len()).map(|i| if i == best { 1.0 } else { 0.0 }).collect()
        }
        ProbabilityRule::CosineAngle => {
            let raw: Vec<f64> = amps
                .iter()
                .zip(&nonzero)
                .map(|(a, &nz)| if nz { (1.0 + a.arg().cos()) / 2.0 } else { 0.0 })
                .collect();
            if raw.iter().sum::<f64>() <= ZERO_AMPLITUDE {
                normalize(nonzero.iter().map(|&b| f64::from(u8::from(b))).collect())
            } else {
                normalize(raw)
            }
        }
        ProbabilityRule::PowerLaw { k } => {
            if !(k.is_finite() && *k > 0.0) {
                return Err(domain(format!("power-law exponent {k} must be positive")));
            }
            normalize(amps.iter().zip(&nonzero).map(|(a, &nz)| if nz { a.norm().powf(*k) } else { 0.0 }).collect())
        }
    };
    Ok(w)
}

/// Splits a two-qubit state along `wing`: for each level of `wing`, the
/// branch amplitude (norm times the phase of its first nonzero component)
/// and the other particle's conditional state.
fn branches(state: &EntangledState, wing: usize) -> Result<Vec<(Complex64, [Complex64; 2])>> {
    let other = 1 - wing;
    (0..2)
        .map(|level| {
            let mut slice = [Complex64::new(0.0, 0.0); 2];
            for (k, s) in slice.iter_mut().enumerate() {
                let mut levels = [0usize; 2];
                levels[wing] = level;
                levels[other] = k;
                *s = state.amps()[state.index_of(&levels)?];
            }
            let norm = (slice[0].norm_sqr() + slice[1].norm_sqr()).sqrt();
            if norm <= ZERO_AMPLITUDE {
                return Ok((Complex64::new(0.0, 0.0), [Complex64::new(0.0, 0.0); 2]));
            }
            let lead = slice.iter().find(|a| a.norm() > ZERO_AMPLITUDE).copied().unwrap_or(slice[0]);
            let amp = Complex64::from_polar(norm, lead.arg());
            Ok((amp, [slice[0] / amp, slice[1] / amp]))
        })
        .collect()
}

fn require_two_qubits(state: &EntangledState) -> Result<()> {
    if state.dims() != [2, 2] {
        return Err(Error::Unsupported("signaling analysis needs a two-qubit state".into()));
    }
    Ok(())
}

/// Joint outcome distribution when `first` is measured first and the other
/// wing second, each by `rule`. Cell `2a + b` holds outcome `a` on wing 0
/// and `b` on wing 1, in the state's stored bases.
pub fn sequential_joint(rule: &ProbabilityRule, state: &EntangledState, first: usize) -> Result<[f64; 4]> {
    require_two_qubits(state)?;
    let br = branches(state, first)?;
    let amps: Vec<Complex64> = br.iter().map(|b| b.0).collect();
    let w_first = outcome_weights(rule, &amps)?;
    let mut joint = [0.0; 4];
    for (a, (amp, cond)) in br.iter().enumerate() {
        if w_first[a] == 0.0 || amp.norm() <= ZERO_AMPLITUDE {
            continue;
        }
        let w_second = outcome_weights(rule, cond)?;
        for (b, w) in w_second.iter().enumerate() {
            let cell = if first == 0 { 2 * a + b } else { 2 * b + a };
            joint[cell] += w_first[a] * w;
        }
    }
    Ok(joint)
}

/// Marginal of `wing` from `rule` applied once to the four joint components.
pub fn joint_marginal(rule: &ProbabilityRule, state: &EntangledState, wing: usize) -> Result<[f64; 2]> {
    require_two_qubits(state)?;
    let w = outcome_weights(rule, state.amps())?;
    let mut m = [0.0; 2];
    for (i, wi) in w.iter().enumerate() {
        m[state.digit(i, wing)] += wi;
    }
    Ok(m)
}

fn tv(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    0.5 * ((a[0] - b[0]).abs() + (a[1] - b[1]).abs())
}

/// Outcome of [`marginal_gap`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignalingReport {
    pub rule: ProbabilityRule,
    /// Wing whose marginal is compared.
    pub wing: usize,
    /// Marginal with nothing measured on the other wing.
    pub unconditioned: [f64; 2],
    /// Marginal averaged over the other wing's outcomes, per probe basis.
    pub conditioned: Vec<[f64; 2]>,
    pub gaps: Vec<f64>,
    pub max_gap: f64,
    /// Index of the probe basis achieving `max_gap`.
    pub witness: usize,
    /// A max-deterministic tie was broken towards the lowest index.
    pub tie_broken: bool,
}

/// Compares the marginal of `wing` with no distant measurement against the
/// marginal obtained after measuring the other wing in each probe basis.
/// Probe rotations must act on the other wing.
pub fn marginal_gap(
    rule: &ProbabilityRule,
    state: &EntangledState,
    wing: usize,
    probes: &[BasisRotation],
) -> Result<SignalingReport> {
    require_two_qubits(state)?;
    if wing > 1 {
        return Err(domain(format!("wing {wing} out of range")));
    }
    let other = 1 - wing;
    let mut tie_broken = *rule == ProbabilityRule::MaxDeterministic && has_max_tie(state.amps());
    let unconditioned = joint_marginal(rule, state, wing)?;
    let mut conditioned = Vec::with_capacity(probes.len());
    for probe in probes {
        if probe.subsystem() != other {
            return Err(domain("probe bases must act on the other wing"));
        }
        let rotated = state.rotate_subsystem(probe)?;
        let br = branches(&rotated, other)?;
        let amps: Vec<Complex64> = br.iter().map(|b| b.0).collect();
        if *rule == ProbabilityRule::MaxDeterministic {
            tie_broken |= has_max_tie(&amps) || br.iter().any(|b| has_max_tie(&b.1));
        }
        let w_other = outcome_weights(rule, &amps)?;
        let mut m = [0.0; 2];
        for (j, (amp, cond)) in br.iter().enumerate() {
            if w_other[j] == 0.0 || amp.norm() <= ZERO_AMPLITUDE {
                continue;
            }
            let w = outcome_weights(rule, cond)?;
            m[0] += w_other[j] * w[0];
            m[1] += w_other[j] * w[1];
        }
        conditioned.push(m);
    }
    let gaps: Vec<f64> = conditioned.iter().map(|c| tv(&unconditioned, c)).collect();
    let (witness, max_gap) = gaps
        .iter()
        .copied()
        .enumerate()
        .fold((0, 0.0), |best, (i, g)| if g > best.1 { (i, g) } else { best });
    Ok(SignalingReport { rule: *rule, wing, unconditioned, conditioned, gaps, max_gap, witness, tie_broken })
}

/// Both sides of `P(α)P(γ*) + P(β)P(δ*) = P(αγ*) + P(βδ*)` with `P` the
/// given rule's single-amplitude weight `|a|^k` (Born: k = 2).
pub fn interchange_sides(k: f64, alpha: Complex64, beta: Complex64, gamma: Complex64, delta: Complex64) -> (f64, f64) {
    let p = |a: Complex64| a.norm().powf(k);
    let lhs = p(alpha) * p(gamma.conj()) + p(beta) * p(delta.conj());
    let rhs = p(alpha * gamma.conj()) + p(beta * delta.conj());
    (lhs, rhs)
}

/// Random normalized two-qubit state with Gaussian components.
pub fn random_two_qubit_state<R: Rng>(rng: &mut R) -> EntangledState {
    let amps: Vec<Complex64> = (0..4).map(|_| gaussian_complex(rng)).collect();
    let labels = vec![vec!["x".into(), "y".into()], vec!["x".into(), "y".into()]];
    EntangledState::normalized(vec![2, 2], labels, amps).expect("nonzero Gaussian vector")
}

/// Random unitary basis on `subsystem`.
pub fn random_basis<R: Rng>(rng: &mut R, subsystem: usize) -> BasisRotation {
    let g = gaussian_complex(rng);
    let d = gaussian_complex(rng);
    let n = (g.norm_sqr() + d.norm_sqr()).sqrt();
    BasisRotation::new(subsystem, g / n, d / n, ["u", "v"]).expect("normalized by construction")
}

fn gaussian_complex<R: Rng>(rng: &mut R) -> Complex64 {
    Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
}

/// One (rule, state, basis) evaluation of a scan.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanRow {
    pub rule: String,
    pub k: Option<f64>,
    pub state_id: usize,
    pub basis_id: usize,
    pub gap: f64,
}

/// Result of [`born_uniqueness_scan`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanReport {
    pub rows: Vec<ScanRow>,
    /// `(k, max gap over all probes)` per grid point.
    pub max_gap_by_k: Vec<(f64, f64)>,
    /// Grid points whose max gap is at most `tolerance`.
    pub zero_at: Vec<f64>,
    pub tolerance: f64,
}

/// Evaluates power-law rules `|a|^k` for each `k` on random two-qubit states,
/// each probed with `bases_per_state` random bases on wing 0 while wing 1's
/// marginal is watched.
pub fn born_uniqueness_scan(
    ks: &[f64],
    states: usize,
    bases_per_state: usize,
    seed: u64,
    tolerance: f64,
) -> Result<ScanReport> {
    let rules: Vec<ProbabilityRule> = ks.iter().map(|&k| ProbabilityRule::PowerLaw { k }).collect();
    scan_rules(&rules, states, bases_per_state, seed, tolerance)
}

/// Same as [`born_uniqueness_scan`] for an arbitrary list of rules; probes
/// are identical across rules for a given seed.
pub fn scan_rules(
    rules: &[ProbabilityRule],
    states: usize,
    bases_per_state: usize,
    seed: u64,
    tolerance: f64,
) -> Result<ScanReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let probes: Vec<(EntangledState, Vec<BasisRotation>)> = (0..states)
        .map(|_| {
            let s = random_two_qubit_state(&mut rng);
            let b = (0..bases_per_state).map(|_| random_basis(&mut rng, 0)).collect();
            (s, b)
        })
        .collect();
    let mut rows = Vec::new();
    let mut max_gap_by_k = Vec::new();
    for rule in rules {
        let mut worst: f64 = 0.0;
        for (state_id, (state, bases)) in probes.iter().enumerate() {
            let rep = marginal_gap(rule, state, 1, bases)?;
            for (basis_id, gap) in rep.gaps.iter().enumerate() {
                worst = worst.max(*gap);
                rows.push(ScanRow { rule: rule.name().into(), k: rule.exponent(), state_id, basis_id, gap: *gap });
            }
        }
        max_gap_by_k.push((rule.exponent().unwrap_or(f64::NAN), worst));
    }
    let zero_at = max_gap_by_k.iter().filter(|(_, g)| *g <= tolerance).map(|(k, _)| *k).collect();
    Ok(ScanReport { rows, max_gap_by_k, zero_at, tolerance })
}
