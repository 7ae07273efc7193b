//! Config-driven runs: trials, reports and closed-form predictions.

use std::time::Instant;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::collapse::{ClampMode, CollapseEngine, FixedSplit, ShiftParams, StepDistribution, WalkEnd, WalkTrace};
use crate::error::{validation, Result};
use crate::oracle;
use crate::rng::{Purpose, TrialRng};
use crate::scenario::{
    build_scenario, correlation_loss, estimate_scale_with, predict_amplified_deviation, predict_eraser_deviation,
    AmplifiedPrediction, EraserPrediction, ScaleEstimate, Scenario, ScenarioConfig, ScenarioKind, GRW_COLLAPSE_TIME,
    GRW_LAMBDA,
};
use crate::sequencer::SequencerPolicy;
use crate::stats::{chi_square_gof, BinomialCheck, ChiSquareTest, Moments};

/// Environment variable overriding the worker count.
pub const THREADS_ENV: &str = "COLLAPSE_WALK_THREADS";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShiftConfig {
    /// Mean step size. Zero disables shifts (eraser and predictions only).
    pub d: f64,
    #[serde(default)]
    pub steps: StepDistribution,
    #[serde(default)]
    pub clamp: ClampMode,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default)]
    pub dir: Option<String>,
    #[serde(default)]
    pub traces: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToleranceConfig {
    /// Binomial checks pass within this many standard deviations.
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    /// Relative tolerance against leading-order predictions.
    #[serde(default = "default_relative")]
    pub relative: f64,
}

fn default_sigma() -> f64 {
    4.0
}

fn default_relative() -> f64 {
    0.25
}

impl Default for ToleranceConfig {
    fn default() -> Self {
        ToleranceConfig { sigma: default_sigma(), relative: default_relative() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScaleConfig {
    pub organism_particles: [f64; 2],
    pub safety_factor: [f64; 2],
    #[serde(default = "default_lambda")]
    pub grw_lambda: f64,
    #[serde(default = "default_collapse_time")]
    pub grw_collapse_time: f64,
}

fn default_lambda() -> f64 {
    GRW_LAMBDA
}

fn default_collapse_time() -> f64 {
    GRW_COLLAPSE_TIME
}

impl Default for ScaleConfig {
    fn default() -> Self {
        ScaleConfig {
            organism_particles: [1e10, 1e11],
            safety_factor: [10.0, 100.0],
            grw_lambda: GRW_LAMBDA,
            grw_collapse_time: GRW_COLLAPSE_TIME,
        }
    }
}

/// Everything a run or prediction needs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: ScenarioConfig,
    pub trials: u64,
    /// Required for runs; there is no clock-based default.
    #[serde(default)]
    pub master_seed: Option<u64>,
    pub shift: ShiftConfig,
    #[serde(default)]
    pub sequencer: SequencerPolicy,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub tolerance: ToleranceConfig,
    /// Worker threads; defaults to the available cores.
    #[serde(default)]
    pub threads: Option<usize>,
    #[serde(default)]
    pub scale: Option<ScaleConfig>,
}

impl ExperimentConfig {
    fn shifts_disabled_ok(&self) -> bool {
        matches!(self.scenario, ScenarioConfig::EraserChain { .. })
    }

    /// Checks everything except the seed.
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(validation("trials must be at least 1"));
        }
        let d = self.shift.d;
        if d == 0.0 {
            if !self.shifts_disabled_ok() {
                return Err(validation("d = 0 is only allowed for the eraser chain"));
            }
        } else {
            ShiftParams::with_steps(d, self.shift.steps)?;
        }
        if !(self.tolerance.sigma > 0.0 && self.tolerance.relative > 0.0) {
            return Err(validation("tolerances must be positive"));
        }
        if self.threads == Some(0) {
            return Err(validation("threads must be at least 1"));
        }
        Ok(())
    }

    /// `None` when shifts are disabled.
    pub fn shift_params(&self) -> Result<Option<ShiftParams>> {
        if self.shift.d == 0.0 {
            Ok(None)
        } else {
            ShiftParams::with_steps(self.shift.d, self.shift.steps).map(Some)
        }
    }

    /// Builds the scenario. With shifts disabled, `d` only sizes defaults.
    /// Builds the scenario. With `d = 0` the d-dependent defaults (events per
    /// wing) fall back to `d = 0.01`.
    pub fn build(&self) -> Result<Scenario> {
        let d = if self.shift.d > 0.0 { self.shift.d } else { 1e-2 };
        build_scenario(&self.scenario, d, self.sequencer)
    }
}

/// Worker count: the environment variable wins, then the config, then all cores.
pub fn thread_count(config: Option<usize>) -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .or(config)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

/// Runs `f` on a pool of `threads` workers.
pub fn with_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

/// One trial per element, in trial order. Deterministic in `(seed, trial)`
/// regardless of the worker count.
pub fn run_trials(scenario: &Scenario, engine: &CollapseEngine, seed: u64, trials: u64, record: bool) -> Vec<WalkTrace> {
    let limit = scenario.n_steps;
    (0..trials)
        .into_par_iter()
        .map(|trial| {
            let mut draws = TrialRng::new(seed, trial, Purpose::Shifts);
            match scenario.driver {
                crate::scenario::Driver::Fixed => engine.walk(&mut FixedSplit::new(0), &mut draws, limit, record),
                _ => {
                    let mut stream = scenario.stream(seed, trial);
                    engine.walk(&mut *stream, &mut draws, limit, record)
                }
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutcomeRow {
    pub label: String,
    pub count: u64,
    pub frequency: f64,
    /// Born density of the branch.
    pub expected: f64,
    pub binomial: BinomialCheck,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanSummary {
    pub mean: f64,
    pub std_error: f64,
}

impl From<Moments> for MeanSummary {
    fn from(m: Moments) -> Self {
        MeanSummary { mean: m.mean, std_error: m.std_error() }
    }
}

/// Exact ensemble value with a ±3σ band for the mean over the run's trials.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExactBand {
    pub mean: f64,
    pub low: f64,
    pub high: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EraserSummary {
    /// How the deviant probability is measured.
    pub estimator: String,
    pub per_term: MeanSummary,
    pub total: MeanSummary,
    pub predicted: EraserPrediction,
    /// Exact per-term expectation from the walk distribution, if the grid allows.
    pub exact_per_term: Option<ExactBand>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AmplifiedSummary {
    pub loss: MeanSummary,
    pub predicted: AmplifiedPrediction,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckSummary {
    pub passed: bool,
    pub failures: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub version: String,
    pub config: ExperimentConfig,
    pub scenario: ScenarioKind,
    pub trials: u64,
    pub outcomes: Vec<OutcomeRow>,
    /// Trials that ended without absorption (stream exhausted or step limit).
    pub unabsorbed: u64,
    pub chi_square: Option<ChiSquareTest>,
    pub steps: MeanSummary,
    pub clamps: u64,
    pub eraser: Option<EraserSummary>,
    pub amplified: Option<AmplifiedSummary>,
    pub check: CheckSummary,
    pub wall_time_s: f64,
}

/// One row of the per-trial summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub trial: u64,
    pub outcome: String,
    pub steps: u64,
    pub clamps: u64,
    /// Final density of split 0's interacting side.
    pub final_p: f64,
}

/// Report plus per-trial data for artifacts.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub report: RunReport,
    pub summaries: Vec<TrialSummary>,
    pub traces: Vec<WalkTrace>,
}

fn eraser_amplitudes(config: &ScenarioConfig) -> Option<(Complex64, Complex64)> {
    match config {
        ScenarioConfig::EraserChain { alpha, beta, .. } => Some((alpha.value(), beta.value())),
        _ => None,
    }
}

/// Executes the configured trials. `seed` must be resolved by the caller.
pub fn run_experiment(config: &ExperimentConfig, seed: u64, record: bool) -> Result<RunOutput> {
    config.validate()?;
    let start = Instant::now();
    let mut echo = config.clone();
    echo.master_seed = Some(seed);
    let scenario = config.build()?;
    let params = config.shift_params()?;
    let threads = thread_count(config.threads);
    let traces = match params {
        Some(p) => {
            let engine = scenario.engine(p)?;
            let traces = with_pool(threads, || run_trials(&scenario, &engine, seed, config.trials, record));
            Some((engine, traces))
        }
        None => None,
    };
    let split0 = &scenario.splits[0];
    let p0 = scenario.state.born_density(split0)?;

    // shifts disabled: every trial keeps the initial state
    let (labels, expected, traces, engine_mask) = match traces {
        Some((engine, traces)) => {
            let labels = scenario.branch_labels(&engine);
            let expected = engine.initial_densities().to_vec();
            let reps = engine.branch_representatives();
            let mask: Vec<bool> = reps.iter().map(|&i| split0.contains(i)).collect();
            (labels, expected, traces, mask)
        }
        None => {
            let labels = vec![scenario.state.basis_label(0), scenario.state.basis_label(1)];
            let idle = WalkTrace {
                steps: Vec::new(),
                end: WalkEnd::StepsDone,
                final_densities: vec![p0, 1.0 - p0],
                step_count: 0,
                clamps: 0,
            };
            (labels, vec![p0, 1.0 - p0], vec![idle; config.trials as usize], vec![true, false])
        }
    };

    let mut counts = vec![0u64; labels.len()];
    let mut unabsorbed = 0;
    let mut clamps = 0;
    let mut steps = Moments::default();
    let mut summaries = Vec::with_capacity(traces.len());
    for (trial, t) in traces.iter().enumerate() {
        match t.outcome() {
            Some(b) => counts[b] += 1,
            None => unabsorbed += 1,
        }
        clamps += t.clamps;
        steps.push(t.step_count as f64);
        let final_p: f64 =
            t.final_densities.iter().zip(&engine_mask).filter(|(_, &m)| m).map(|(w, _)| *w).sum();
        summaries.push(TrialSummary {
            trial: trial as u64,
            outcome: t.outcome().map(|b| labels[b].clone()).unwrap_or_else(|| "none".into()),
            steps: t.step_count,
            clamps: t.clamps,
            final_p,
        });
    }

    let tol = &config.tolerance;
    let mut failures = Vec::new();
    let absorbing = scenario.n_steps.is_none();
    let mut outcomes = Vec::new();
    let mut chi_square = None;
    if absorbing {
        for (i, label) in labels.iter().enumerate() {
            let binomial = BinomialCheck::new(counts[i], config.trials, expected[i].clamp(0.0, 1.0))?;
            if !binomial.within(tol.sigma) {
                failures.push(format!("outcome {label}: z = {:.3} beyond {}σ", binomial.z, tol.sigma));
            }
            outcomes.push(OutcomeRow {
                label: label.clone(),
                count: counts[i],
                frequency: binomial.frequency,
                expected: expected[i],
                binomial,
            });
        }
        if unabsorbed > 0 {
            failures.push(format!("{unabsorbed} trials ended without absorption"));
        } else {
            chi_square = Some(chi_square_gof(&counts, &expected)?);
        }
    }

    let mut eraser = None;
    let mut amplified = None;
    match scenario.kind {
        ScenarioKind::EraserChain => {
            let (alpha, beta) = eraser_amplitudes(&config.scenario).expect("eraser config");
            let n = scenario.n_steps.unwrap_or(0);
            let (pa, pb) = (alpha.norm_sqr(), beta.norm_sqr());
            let per_term = |p: f64| {
                let a = if pa > 0.0 { alpha * (p / pa).sqrt() } else { alpha };
                let b = if pb > 0.0 { beta * ((1.0 - p) / pb).sqrt() } else { beta };
                (a - b).norm_sqr() / 4.0
            };
            let m: Moments = summaries.iter().map(|s| per_term(s.final_p)).collect();
            let predicted = predict_eraser_deviation(n, config.shift.d, alpha, beta)?;
            let exact_per_term = if config.shift.d > 0.0 {
                oracle::walk_expectation(pa, config.shift.d, n as usize, per_term).ok().map(|(mean, var)| {
                    let half = 3.0 * (var / config.trials as f64).sqrt();
                    ExactBand { mean, low: mean - half, high: mean + half }
                })
            } else {
                Some(ExactBand { mean: per_term(pa), low: per_term(pa), high: per_term(pa) })
            };
            if let Some(band) = exact_per_term {
                if m.mean < band.low - 1e-15 || m.mean > band.high + 1e-15 {
                    failures.push(format!("eraser per-term mean {:.6} outside exact band", m.mean));
                }
            }
            let leading = predicted.deviant_prob_per_term;
            if leading > 0.0 && ((m.mean - leading) / leading).abs() > tol.relative {
                failures.push(format!("eraser per-term mean {:.6} not within {} of {:.6}", m.mean, tol.relative, leading));
            }
            let total = Moments::from_iter(summaries.iter().map(|s| 2.0 * per_term(s.final_p)));
            eraser = Some(EraserSummary {
                estimator: "cross-term density of the post-walk state".into(),
                per_term: m.into(),
                total: total.into(),
                predicted,
                exact_per_term,
            });
        }
        ScenarioKind::AmplifiedAlpha => {
            let d = config.shift.d;
            let (a, b) = (d.sqrt(), (1.0 - d).sqrt());
            let m: Moments =
                summaries.iter().map(|s| correlation_loss(a, b, s.final_p.sqrt(), (1.0 - s.final_p).sqrt())).collect();
            let predicted = predict_amplified_deviation(d)?;
            if (m.mean - predicted.exact.average).abs() > tol.sigma * m.std_error().max(1e-300) {
                failures.push(format!(
                    "amplified mean loss {:.6e} not within {}σ of exact {:.6e}",
                    m.mean, tol.sigma, predicted.exact.average
                ));
            }
            amplified = Some(AmplifiedSummary { loss: m.into(), predicted });
        }
        _ => {}
    }

    let report = RunReport {
        version: env!("CARGO_PKG_VERSION").into(),
        config: echo,
        scenario: scenario.kind,
        trials: config.trials,
        outcomes,
        unabsorbed,
        chi_square,
        steps: steps.into(),
        clamps,
        eraser,
        amplified,
        check: CheckSummary { passed: failures.is_empty(), failures },
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    Ok(RunOutput { report, summaries, traces: if record { traces } else { Vec::new() } })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutcomeExpectation {
    pub label: String,
    pub probability: f64,
}

/// Closed-form values for a config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub version: String,
    pub scenario: ScenarioKind,
    pub d: f64,
    pub outcomes: Vec<OutcomeExpectation>,
    /// Mean shifts to absorption, `p q / d²`, for a single fixed split.
    pub expected_steps: Option<f64>,
    pub eraser: Option<EraserPrediction>,
    pub amplified: Option<AmplifiedPrediction>,
    pub scale: ScaleEstimate,
}

pub fn predict(config: &ExperimentConfig) -> Result<Prediction> {
    if !(0.0..1.0).contains(&config.shift.d) {
        return Err(validation(format!("d = {} outside [0, 1)", config.shift.d)));
    }
    let d = config.shift.d;
    let scenario = match (&config.scenario, d) {
        (ScenarioConfig::AmplifiedAlpha {}, 0.0) => None,
        _ => Some(config.build()?),
    };
    let mut outcomes = Vec::new();
    let mut expected_steps = None;
    if let Some(s) = &scenario {
        let engine = CollapseEngine::new(&s.state, &s.splits, ShiftParams::new(d.max(1e-2))?)?;
        for (label, p) in s.branch_labels(&engine).into_iter().zip(engine.initial_densities()) {
            outcomes.push(OutcomeExpectation { label, probability: *p });
        }
        if s.kind == ScenarioKind::Binary && d > 0.0 {
            let p = s.state.born_density(&s.splits[0])?;
            expected_steps = Some(p * (1.0 - p) / (d * d));
        }
    }
    let eraser = match &config.scenario {
        ScenarioConfig::EraserChain { alpha, beta, n } => {
            Some(predict_eraser_deviation(*n, d, alpha.value(), beta.value())?)
        }
        _ => None,
    };
    let amplified = match &config.scenario {
        ScenarioConfig::AmplifiedAlpha {} => Some(if d == 0.0 {
            let zero = crate::scenario::CaseTriple { case_absorbed: 0.0, case_doubled: 0.0, average: 0.0 };
            AmplifiedPrediction { d, exact: zero, leading_order: zero, rounded: zero, regime_warning: false }
        } else {
            predict_amplified_deviation(d)?
        }),
        _ => None,
    };
    let sc = config.scale.clone().unwrap_or_default();
    let scale = estimate_scale_with(
        sc.organism_particles[0],
        sc.organism_particles[1],
        sc.safety_factor[0],
        sc.safety_factor[1],
        sc.grw_lambda,
        sc.grw_collapse_time,
    )?;
    Ok(Prediction {
        version: env!("CARGO_PKG_VERSION").into(),
        scenario: scenario.map(|s| s.kind).unwrap_or(ScenarioKind::AmplifiedAlpha),
        d,
        outcomes,
        expected_steps,
        eraser,
        amplified,
        scale,
    })
}
