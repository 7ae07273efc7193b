//! Entangled branch states over labeled product bases.
//!
//! A state is a dense amplitude vector over the product basis of its
//! subsystems. The first subsystem is the most significant digit of the flat
//! index, so for two qubits `|a⟩|b⟩` lives at `2 * a + b`.

use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{domain, validation, Error, Result};
use crate::tolerance::{ALGEBRAIC, MAX_AMPLITUDES, ZERO_AMPLITUDE};

/// Complex probability amplitude.
pub type ComplexAmplitude = Complex64;

/// A sorted, duplicate-free set of flat product-basis indices.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BranchSet(Vec<usize>);

impl BranchSet {
    pub fn new(indices: impl IntoIterator<Item = usize>) -> Self {
        let mut v: Vec<usize> = indices.into_iter().collect();
        v.sort_unstable();
        v.dedup();
        BranchSet(v)
    }

    pub fn empty() -> Self {
        BranchSet(Vec::new())
    }

    /// Every index of a basis with `len` elements.
    pub fn full(len: usize) -> Self {
        BranchSet((0..len).collect())
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, index: usize) -> bool {
        self.0.binary_search(&index).is_ok()
    }

    /// Indices of `0..len` not in this set.
    pub fn complement(&self, len: usize) -> BranchSet {
        BranchSet((0..len).filter(|i| !self.contains(*i)).collect())
    }

    pub fn union(&self, other: &BranchSet) -> BranchSet {
        BranchSet::new(self.0.iter().chain(other.0.iter()).copied())
    }
}

impl FromIterator<usize> for BranchSet {
    fn from_iter<T: IntoIterator<Item = usize>>(iter: T) -> Self {
        BranchSet::new(iter)
    }
}

/// Normalized pure state of `n` finite-dimensional subsystems.
///
/// Values are immutable: every operation returns a new state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "StateSnapshot", into = "StateSnapshot")]
pub struct EntangledState {
    dims: Vec<usize>,
    labels: Vec<Vec<String>>,
    amps: Vec<Complex64>,
}

/// JSON form of a state: `{dims, labels, amps: [[re, im], ...]}`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StateSnapshot {
    pub dims: Vec<usize>,
    pub labels: Vec<Vec<String>>,
    pub amps: Vec<[f64; 2]>,
}

impl From<EntangledState> for StateSnapshot {
    fn from(s: EntangledState) -> Self {
        StateSnapshot {
            dims: s.dims,
            labels: s.labels,
            amps: s.amps.iter().map(|a| [a.re, a.im]).collect(),
        }
    }
}

impl TryFrom<StateSnapshot> for EntangledState {
    type Error = Error;

    fn try_from(s: StateSnapshot) -> Result<Self> {
        let amps = s.amps.iter().map(|[re, im]| Complex64::new(*re, *im)).collect();
        EntangledState::new(s.dims, s.labels, amps)
    }
}

fn check_shape(dims: &[usize], labels: &[Vec<String>], len: usize) -> Result<()> {
    if dims.is_empty() {
        return Err(validation("a state needs at least one subsystem"));
    }
    if let Some(d) = dims.iter().find(|&&d| d < 2) {
        return Err(validation(format!("subsystem dimension {d} < 2")));
    }
    let total = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .filter(|&n| n <= MAX_AMPLITUDES)
        .ok_or_else(|| validation(format!("product basis exceeds {MAX_AMPLITUDES} amplitudes")))?;
    if total != len {
        return Err(validation(format!(
            "amplitude vector has length {len}, product of dims is {total}"
        )));
    }
    if labels.len() != dims.len() {
        return Err(validation("one label list per subsystem required"));
    }
    for (k, (l, d)) in labels.iter().zip(dims).enumerate() {
        if l.len() != *d {
            return Err(validation(format!(
                "subsystem {k} has dimension {d} but {} labels",
                l.len()
            )));
        }
    }
    Ok(())
}

impl EntangledState {
    /// Builds a state, rejecting non-finite amplitudes and norms that differ
    /// from one by more than the algebraic tolerance.
    pub fn new(dims: Vec<usize>, labels: Vec<Vec<String>>, amps: Vec<Complex64>) -> Result<Self> {
        check_shape(&dims, &labels, amps.len())?;
        if amps.iter().any(|a| !a.re.is_finite() || !a.im.is_finite()) {
            return Err(validation("non-finite amplitude"));
        }
        let norm: f64 = amps.iter().map(|a| a.norm_sqr()).sum();
        if (norm - 1.0).abs() > ALGEBRAIC {
            return Err(validation(format!("state norm {norm} is not 1")));
        }
        Ok(EntangledState { dims, labels, amps })
    }

    /// Builds a state after rescaling the amplitudes to unit norm.
    pub fn normalized(
        dims: Vec<usize>,
        labels: Vec<Vec<String>>,
        amps: Vec<Complex64>,
    ) -> Result<Self> {
        check_shape(&dims, &labels, amps.len())?;
        let norm: f64 = amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        if !norm.is_finite() || norm == 0.0 {
            return Err(domain("cannot normalize a zero or non-finite vector"));
        }
        let amps = amps.into_iter().map(|a| a / norm).collect();
        EntangledState::new(dims, labels, amps)
    }

    /// Single qubit `a|l0⟩ + b|l1⟩`.
    pub fn qubit(labels: [&str; 2], a: Complex64, b: Complex64) -> Result<Self> {
        EntangledState::new(vec![2], vec![labels.map(String::from).to_vec()], vec![a, b])
    }

    /// Product-basis vector with all amplitude at `index`.
    pub fn basis_state(dims: Vec<usize>, labels: Vec<Vec<String>>, index: usize) -> Result<Self> {
        let len = dims.iter().product::<usize>();
        if index >= len {
            return Err(domain(format!("basis index {index} out of range")));
        }
        let mut amps = vec![Complex64::new(0.0, 0.0); len];
        amps[index] = Complex64::new(1.0, 0.0);
        EntangledState::new(dims, labels, amps)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn labels(&self) -> &[Vec<String>] {
        &self.labels
    }

    pub fn amps(&self) -> &[Complex64] {
        &self.amps
    }

    pub fn len(&self) -> usize {
        self.amps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.amps.is_empty()
    }

    pub fn subsystem_count(&self) -> usize {
        self.dims.len()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }

    fn stride(&self, subsystem: usize) -> usize {
        self.dims[subsystem + 1..].iter().product()
    }

    fn check_subsystem(&self, subsystem: usize) -> Result<()> {
        if subsystem >= self.dims.len() {
            return Err(domain(format!(
                "subsystem {subsystem} out of range for {} subsystems",
                self.dims.len()
            )));
        }
        Ok(())
    }

    /// Level of `subsystem` in the product-basis element `index`.
    pub fn digit(&self, index: usize, subsystem: usize) -> usize {
        (index / self.stride(subsystem)) % self.dims[subsystem]
    }

    /// Flat index of the product-basis element with the given levels.
    pub fn index_of(&self, levels: &[usize]) -> Result<usize> {
        if levels.len() != self.dims.len() {
            return Err(domain("one level per subsystem required"));
        }
        levels.iter().zip(&self.dims).try_fold(0usize, |acc, (&l, &d)| {
            if l >= d {
                Err(domain(format!("level {l} out of range for dimension {d}")))
            } else {
                Ok(acc * d + l)
            }
        })
    }

    /// Product label such as `x-up|x-down` for a flat index.
    pub fn basis_label(&self, index: usize) -> String {
        (0..self.dims.len())
            .map(|s| self.labels[s][self.digit(index, s)].as_str())
            .collect::<Vec<_>>()
            .join("|")
    }

    /// All product-basis indices where `subsystem` is at `level`.
    pub fn level_set(&self, subsystem: usize, level: usize) -> Result<BranchSet> {
        self.check_subsystem(subsystem)?;
        if level >= self.dims[subsystem] {
            return Err(domain(format!("level {level} out of range")));
        }
        Ok((0..self.len()).filter(|&i| self.digit(i, subsystem) == level).collect())
    }

    /// Σ|aᵢ|² over `subset`.
    pub fn born_density(&self, subset: &BranchSet) -> Result<f64> {
        if let Some(&bad) = subset.indices().iter().find(|&&i| i >= self.len()) {
            return Err(domain(format!("index {bad} out of range for {} amplitudes", self.len())));
        }
        Ok(subset.indices().iter().map(|&i| self.amps[i].norm_sqr()).sum())
    }

    /// Re-expresses one qubit subsystem in the basis given by `rot`.
    pub fn rotate_subsystem(&self, rot: &BasisRotation) -> Result<EntangledState> {
        let s = rot.subsystem;
        self.check_subsystem(s)?;
        if self.dims[s] != 2 {
            return Err(Error::Unsupported(format!(
                "rotations act on qubits; subsystem {s} has dimension {}",
                self.dims[s]
            )));
        }
        let stride = self.stride(s);
        let m = rot.matrix;
        let mut amps = self.amps.clone();
        for i in 0..self.len() {
            if self.digit(i, s) != 0 {
                continue;
            }
            let (a0, a1) = (self.amps[i], self.amps[i + stride]);
            amps[i] = m[0][0].conj() * a0 + m[0][1].conj() * a1;
            amps[i + stride] = m[1][0].conj() * a0 + m[1][1].conj() * a1;
        }
        let mut labels = self.labels.clone();
        labels[s] = rot.labels.to_vec();
        Ok(EntangledState { dims: self.dims.clone(), labels, amps })
    }

    /// Appends a subsystem of dimension `dim` prepared in its first basis
    /// vector, labeled `ready_label`.
    pub fn tensor_extend(&self, dim: usize, ready_label: &str) -> Result<EntangledState> {
        if dim < 2 {
            return Err(validation(format!("new subsystem dimension {dim} < 2")));
        }
        let len = self
            .len()
            .checked_mul(dim)
            .filter(|&n| n <= MAX_AMPLITUDES)
            .ok_or_else(|| validation(format!("product basis exceeds {MAX_AMPLITUDES} amplitudes")))?;
        let mut amps = vec![Complex64::new(0.0, 0.0); len];
        for (i, a) in self.amps.iter().enumerate() {
            amps[i * dim] = *a;
        }
        let mut dims = self.dims.clone();
        dims.push(dim);
        let mut labels = self.labels.clone();
        labels.push(
            std::iter::once(ready_label.to_string())
                .chain((1..dim).map(|k| format!("{ready_label}+{k}")))
                .collect(),
        );
        Ok(EntangledState { dims, labels, amps })
    }

    /// Deterministic entangling map: the target subsystem copies the source's
    /// basis index.
    ///
    /// With `basis`, the source is first re-expressed in that basis and the
    /// result stays in it. The target must be in its ready (first) level on
    /// every branch. The map is the permutation `|k⟩|j⟩ → |k⟩|j + k mod dₜ⟩`,
    /// so it is unitary; the target takes over the source's labels.
    pub fn correlate(
        &self,
        source: usize,
        target: usize,
        basis: Option<&BasisRotation>,
    ) -> Result<EntangledState> {
        self.check_subsystem(source)?;
        self.check_subsystem(target)?;
        if source == target {
            return Err(domain("source and target must differ"));
        }
        if self.dims[source] != 2 {
            return Err(Error::Unsupported("correlation source must be a qubit".into()));
        }
        if self.dims[target] < self.dims[source] {
            return Err(Error::Unsupported(
                "target dimension smaller than source dimension".into(),
            ));
        }
        let base = match basis {
            Some(rot) if rot.subsystem != source => {
                return Err(domain("correlation basis must act on the source subsystem"))
            }
            Some(rot) => self.rotate_subsystem(rot)?,
            None => self.clone(),
        };
        let not_ready = (0..base.len())
            .any(|i| base.digit(i, target) != 0 && base.amps[i].norm() > ZERO_AMPLITUDE);
        if not_ready {
            return Err(Error::Precondition(format!(
                "target subsystem {target} is not in its ready state"
            )));
        }
        let dt = base.dims[target];
        let ts = base.stride(target);
        let mut amps = vec![Complex64::new(0.0, 0.0); base.len()];
        for (i, a) in base.amps.iter().enumerate() {
            let k = base.digit(i, source);
            let j = base.digit(i, target);
            let shifted = (j + k) % dt;
            amps[i - j * ts + shifted * ts] = *a;
        }
        let mut labels = base.labels.clone();
        for (k, l) in base.labels[source].iter().enumerate() {
            labels[target][k] = l.clone();
        }
        Ok(EntangledState { dims: base.dims, labels, amps })
    }
}

impl fmt::Display for EntangledState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for (i, a) in self.amps.iter().enumerate() {
            if a.norm() <= ZERO_AMPLITUDE {
                continue;
            }
            if !first {
                write!(f, " + ")?;
            }
            first = false;
            write!(f, "({:.6}{:+.6}i)|{}⟩", a.re, a.im, self.basis_label(i))?;
        }
        if first {
            write!(f, "0")?;
        }
        Ok(())
    }
}

/// Binary split of a state's product basis into interacting and
/// non-interacting components, with their Born densities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bifurcation {
    interacting: BranchSet,
    complement: BranchSet,
    p: f64,
    q: f64,
}

impl Bifurcation {
    /// Binds a split to `state`, computing `p` and `q` from its amplitudes.
    pub fn of(state: &EntangledState, interacting: BranchSet) -> Result<Self> {
        let p = state.born_density(&interacting)?;
        let complement = interacting.complement(state.len());
        let q = state.born_density(&complement)?;
        Ok(Bifurcation { interacting, complement, p, q })
    }

    /// Split on one subsystem: `level` of `subsystem` interacts.
    pub fn on_level(state: &EntangledState, subsystem: usize, level: usize) -> Result<Self> {
        Bifurcation::of(state, state.level_set(subsystem, level)?)
    }

    pub fn interacting(&self) -> &BranchSet {
        &self.interacting
    }

    pub fn complement(&self) -> &BranchSet {
        &self.complement
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn q(&self) -> f64 {
        self.q
    }
}

/// Change of basis on one qubit subsystem.
///
/// Row `k` of the matrix holds the coordinates of the new basis vector `k`
/// in the old basis: `|u⟩ = γ|x⟩ + δ|y⟩`, `|v⟩ = δ*|x⟩ − γ*|y⟩` is the matrix
/// `[[γ, δ], [δ*, −γ*]]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BasisRotation {
    subsystem: usize,
    matrix: [[Complex64; 2]; 2],
    labels: [String; 2],
}

impl BasisRotation {
    /// The `(γ, δ)` family; requires `|γ|² + |δ|² = 1`.
    pub fn new(
        subsystem: usize,
        gamma: Complex64,
        delta: Complex64,
        labels: [&str; 2],
    ) -> Result<Self> {
        let norm = gamma.norm_sqr() + delta.norm_sqr();
        if (norm - 1.0).abs() > ALGEBRAIC {
            return Err(validation(format!("|γ|² + |δ|² = {norm}, expected 1")));
        }
        BasisRotation::from_matrix(
            subsystem,
            [[gamma, delta], [delta.conj(), -gamma.conj()]],
            labels,
        )
    }

    /// Any 2×2 unitary; rejects matrices with `‖M·M† − I‖∞ > 1e-12`.
    pub fn from_matrix(
        subsystem: usize,
        matrix: [[Complex64; 2]; 2],
        labels: [&str; 2],
    ) -> Result<Self> {
        if matrix.iter().flatten().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(validation("non-finite rotation entry"));
        }
        for r in 0..2 {
            for c in 0..2 {
                let dot: Complex64 = (0..2).map(|k| matrix[r][k] * matrix[c][k].conj()).sum();
                let expected = if r == c { 1.0 } else { 0.0 };
                if (dot - expected).norm() > ALGEBRAIC {
                    return Err(validation(format!(
                        "rotation matrix is not unitary (entry ({r},{c}) of M·M† is {dot})"
                    )));
                }
            }
        }
        Ok(BasisRotation { subsystem, matrix, labels: labels.map(String::from) })
    }

    pub fn identity(subsystem: usize, labels: [&str; 2]) -> Self {
        let one = Complex64::new(1.0, 0.0);
        let zero = Complex64::new(0.0, 0.0);
        BasisRotation { subsystem, matrix: [[one, zero], [zero, one]], labels: labels.map(String::from) }
    }

    /// `γ = δ = 1/√2`: maps x-spin labels to z-spin labels.
    pub fn hadamard(subsystem: usize, labels: [&str; 2]) -> Self {
        let h = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        BasisRotation { subsystem, matrix: [[h, h], [h, -h]], labels: labels.map(String::from) }
    }

    /// Rotation back to the previous basis, which gets `labels`.
    pub fn inverse(&self, labels: [&str; 2]) -> BasisRotation {
        let m = self.matrix;
        BasisRotation {
            subsystem: self.subsystem,
            matrix: [[m[0][0].conj(), m[1][0].conj()], [m[0][1].conj(), m[1][1].conj()]],
            labels: labels.map(String::from),
        }
    }

    /// The same rotation applied to a different subsystem.
    pub fn on_subsystem(&self, subsystem: usize) -> BasisRotation {
        BasisRotation { subsystem, ..self.clone() }
    }

    pub fn subsystem(&self) -> usize {
        self.subsystem
    }

    pub fn matrix(&self) -> &[[Complex64; 2]; 2] {
        &self.matrix
    }

    pub fn labels(&self) -> &[String; 2] {
        &self.labels
    }

    /// `γ`, the x-coordinate of the first new basis vector.
    pub fn gamma(&self) -> Complex64 {
        self.matrix[0][0]
    }

    /// `δ`, the y-coordinate of the first new basis vector.
    pub fn delta(&self) -> Complex64 {
        self.matrix[0][1]
    }

    /// `⟨new_k|ψ⟩` for a single-qubit vector `ψ` in the old basis.
    pub fn project(&self, k: usize, psi: [Complex64; 2]) -> Complex64 {
        self.matrix[k][0].conj() * psi[0] + self.matrix[k][1].conj() * psi[1]
    }
}
