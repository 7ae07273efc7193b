use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use num_complex::Complex64;
use serde::Serialize;

use collapse_walk::experiment::{predict, run_experiment, ExperimentConfig, RunOutput};
use collapse_walk::oracle::{enumerate_extensions, markov_absorption, singlet_expansion, walk_expectation};
use collapse_walk::scenario::{build_scenario, predict_eraser_deviation, Driver, ScenarioConfig};
use collapse_walk::sequencer::{
    order_invariance_test, wing_first_order, EventPoset, ExtensionSampler, OutcomeDynamics, SpacetimeEvent, WingSetup,
};
use collapse_walk::signaling::{joint_marginal, scan_rules, sequential_joint, ProbabilityRule};
use collapse_walk::state::{BasisRotation, EntangledState};
use collapse_walk::ShiftParams;

mod output;

/// Exit code when `--check` finds a failed statistical test.
const CHECK_FAILED: u8 = 2;

#[derive(Parser)]
#[command(name = "collapse-walk", version, about = "Density-shift collapse simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the trials of an experiment config.
    Run(RunArgs),
    /// Print the closed-form predictions for a config.
    Predict {
        #[arg(long)]
        config: PathBuf,
        /// Also write the JSON to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Exact reference values for small instances.
    #[command(subcommand)]
    Oracle(OracleCommand),
    /// Signaling gaps of candidate probability rules on random probes.
    SignalScan(ScanArgs),
    /// Compare joint outcome tables of a bell-epr config across wing orders.
    SequenceTest(SequenceArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Master seed; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Trial count; overrides the config.
    #[arg(long)]
    trials: Option<u64>,
    /// Exit with 2 when a statistical check fails.
    #[arg(long)]
    check: bool,
    /// Artifact directory; overrides the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write per-step traces as JSON lines.
    #[arg(long)]
    traces: bool,
    /// Write the initial state snapshot.
    #[arg(long)]
    dump_state: bool,
}

#[derive(Subcommand)]
enum OracleCommand {
    /// Absorption probability and mean duration of the ±d walk.
    Markov {
        #[arg(long)]
        p0: f64,
        #[arg(long)]
        d: f64,
    },
    /// Linear extensions of a JSON list of events, by enumeration.
    Extensions {
        #[arg(long)]
        events: PathBuf,
    },
    /// Exact joint and marginal distributions of α|x⟩|y⟩ + β|y⟩|x⟩.
    Marginals {
        #[arg(long, default_value = "born", value_parser = parse_rule)]
        rule: ProbabilityRule,
        #[arg(long, value_parser = parse_complex, allow_hyphen_values = true)]
        alpha: Complex64,
        #[arg(long, value_parser = parse_complex, allow_hyphen_values = true)]
        beta: Complex64,
        /// Particle-2 basis `u = γx + δy`; identity if omitted.
        #[arg(long, value_parser = parse_complex, allow_hyphen_values = true, requires = "delta")]
        gamma: Option<Complex64>,
        #[arg(long, value_parser = parse_complex, allow_hyphen_values = true, requires = "gamma")]
        delta: Option<Complex64>,
    },
    /// Components of α|x⟩|y⟩ + β|y⟩|x⟩ in the particle-2 basis (γ, δ).
    SingletExpansion {
        #[arg(long, value_parser = parse_complex, allow_hyphen_values = true)]
        alpha: Complex64,
        #[arg(long, value_parser = parse_complex, allow_hyphen_values = true)]
        beta: Complex64,
        #[arg(long, value_parser = parse_complex, allow_hyphen_values = true)]
        gamma: Complex64,
        #[arg(long, value_parser = parse_complex, allow_hyphen_values = true)]
        delta: Complex64,
        /// Print the rotated state snapshot as well.
        #[arg(long)]
        dump_state: bool,
    },
    /// Exact per-term deviant probability of the eraser chain after `n` shifts.
    EraserMoments {
        #[arg(long)]
        n: u64,
        #[arg(long)]
        d: f64,
        #[arg(long, default_value = "0.7071067811865476", value_parser = parse_complex, allow_hyphen_values = true)]
        alpha: Complex64,
        #[arg(long, default_value = "0.7071067811865476", value_parser = parse_complex, allow_hyphen_values = true)]
        beta: Complex64,
    },
}

#[derive(Args)]
struct ScanArgs {
    /// Power-law exponents to scan.
    #[arg(long, value_delimiter = ',', default_values_t = [0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 4.0])]
    ks: Vec<f64>,
    /// Named rules to scan as well (born, abs-amplitude, equal-nonzero,
    /// max-deterministic, cosine-angle).
    #[arg(long, value_delimiter = ',', value_parser = parse_rule)]
    rules: Vec<ProbabilityRule>,
    #[arg(long, default_value_t = 100)]
    states: usize,
    #[arg(long, default_value_t = 10)]
    bases: usize,
    #[arg(long)]
    seed: u64,
    /// Gap at or below which a rule counts as non-signaling.
    #[arg(long, default_value_t = 1e-12)]
    tolerance: f64,
    /// CSV output; stdout if omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Exit with 2 unless k = 2 is the only zero-gap exponent.
    #[arg(long)]
    check: bool,
}

#[derive(Args)]
struct SequenceArgs {
    /// A bell-epr experiment config.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<u64>,
    /// Project each wing at its first event with this rule instead of walking.
    #[arg(long, value_parser = parse_rule)]
    rule: Option<ProbabilityRule>,
    /// Exit with 2 if the tables differ (p ≤ 0.01) or a trial did not resolve.
    #[arg(long)]
    check: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_complex(s: &str) -> std::result::Result<Complex64, String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let num = |p: &str| p.parse::<f64>().map_err(|e| format!("{p:?}: {e}"));
    match parts.as_slice() {
        [re] => Ok(Complex64::new(num(re)?, 0.0)),
        [re, im] => Ok(Complex64::new(num(re)?, num(im)?)),
        _ => Err("expected RE or RE,IM".into()),
    }
}

fn parse_rule(s: &str) -> std::result::Result<ProbabilityRule, String> {
    Ok(match s {
        "born" => ProbabilityRule::Born,
        "abs-amplitude" => ProbabilityRule::AbsAmplitude,
        "equal-nonzero" => ProbabilityRule::EqualNonzero,
        "max-deterministic" => ProbabilityRule::MaxDeterministic,
        "cosine-angle" => ProbabilityRule::CosineAngle,
        other => match other.strip_prefix("power-law:") {
            Some(k) => ProbabilityRule::PowerLaw { k: k.parse().map_err(|e| format!("{k:?}: {e}"))? },
            None => return Err(format!("unknown rule {other:?}")),
        },
    })
}

fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("invalid config {}", path.display()))
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    let mut out = std::io::stdout().lock();
    let written = serde_json::to_writer_pretty(&mut out, value)
        .map_err(std::io::Error::from)
        .and_then(|_| writeln!(out));
    match written {
        // a closed pipe (`| head`) is not an error
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        other => Ok(other?),
    }
}

/// `Ok(true)` when every check passed.
fn run(args: RunArgs) -> Result<bool> {
    let mut config = load_config(&args.config)?;
    if let Some(t) = args.trials {
        config.trials = t;
    }
    let seed = args
        .seed
        .or(config.master_seed)
        .ok_or_else(|| anyhow!("a seed is required: set master_seed in the config or pass --seed"))?;
    config.master_seed = Some(seed);
    config.validate()?;
    let out_dir = args.out.clone().or_else(|| config.output.dir.clone().map(PathBuf::from));
    let traces = args.traces || config.output.traces;
    if (traces || args.dump_state) && out_dir.is_none() {
        bail!("--traces and --dump-state need an output directory (--out or output.dir)");
    }
    if let Some(dir) = &out_dir {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    let output: RunOutput = run_experiment(&config, seed, traces)?;
    if let Some(dir) = &out_dir {
        output::write_run(dir, &output, traces)?;
        if args.dump_state {
            let scenario = config.build()?;
            output::write_json(&dir.join("state.json"), &scenario.state)?;
        }
    }
    print_json(&output.report)?;
    for failure in &output.report.check.failures {
        eprintln!("check failed: {failure}");
    }
    Ok(output.report.check.passed)
}

#[derive(Serialize)]
struct ExtensionsOut {
    events: usize,
    count: usize,
    sampler_count: f64,
    orders: Vec<Vec<u64>>,
}

#[derive(Serialize)]
struct MarginalsOut {
    rule: ProbabilityRule,
    /// Cells `|x u⟩, |x v⟩, |y u⟩, |y v⟩`, wing 1 measured first.
    joint: [f64; 4],
    wing_0: [f64; 2],
    wing_1: [f64; 2],
}

#[derive(Serialize)]
struct ExpansionOut {
    /// `[re, im]` of `|x u⟩, |x v⟩, |y u⟩, |y v⟩`.
    components: Vec<[f64; 2]>,
    densities: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    state: Option<EntangledState>,
}

#[derive(Serialize)]
struct EraserMomentsOut {
    n: u64,
    d: f64,
    exact_per_term_mean: f64,
    exact_per_term_std: f64,
    exact_total_mean: f64,
    leading_order: collapse_walk::scenario::EraserPrediction,
}

fn bell_state(alpha: Complex64, beta: Complex64, basis: Option<(Complex64, Complex64)>) -> Result<EntangledState> {
    let labels = vec![vec!["x".into(), "y".into()], vec!["x".into(), "y".into()]];
    let zero = Complex64::new(0.0, 0.0);
    let state = EntangledState::new(vec![2, 2], labels, vec![zero, alpha, beta, zero])?;
    Ok(match basis {
        Some((g, d)) => state.rotate_subsystem(&BasisRotation::new(1, g, d, ["u", "v"])?)?,
        None => state,
    })
}

fn oracle(cmd: OracleCommand) -> Result<()> {
    match cmd {
        OracleCommand::Markov { p0, d } => print_json(&markov_absorption(p0, d)?),
        OracleCommand::Extensions { events } => {
            let text = fs::read_to_string(&events).with_context(|| format!("cannot read {}", events.display()))?;
            let list: Vec<SpacetimeEvent> = serde_json::from_str(&text).context("invalid event list")?;
            let poset = EventPoset::new(list)?;
            let orders = enumerate_extensions(poset.len(), |i, j| poset.precedes(i, j))?;
            let ids = |o: &Vec<usize>| o.iter().map(|&i| poset.events()[i].id).collect::<Vec<_>>();
            print_json(&ExtensionsOut {
                events: poset.len(),
                count: orders.len(),
                sampler_count: ExtensionSampler::new(&poset)?.count().round(),
                orders: orders.iter().map(ids).collect(),
            })
        }
        OracleCommand::Marginals { rule, alpha, beta, gamma, delta } => {
            let state = bell_state(alpha, beta, gamma.zip(delta))?;
            print_json(&MarginalsOut {
                rule,
                joint: sequential_joint(&rule, &state, 1)?,
                wing_0: joint_marginal(&rule, &state, 0)?,
                wing_1: joint_marginal(&rule, &state, 1)?,
            })
        }
        OracleCommand::SingletExpansion { alpha, beta, gamma, delta, dump_state } => {
            let c = singlet_expansion(alpha, beta, gamma, delta);
            print_json(&ExpansionOut {
                components: c.iter().map(|z| [z.re, z.im]).collect(),
                densities: c.iter().map(|z| z.norm_sqr()).collect(),
                state: if dump_state { Some(bell_state(alpha, beta, Some((gamma, delta)))?) } else { None },
            })
        }
        OracleCommand::EraserMoments { n, d, alpha, beta } => {
            let (pa, pb) = (alpha.norm_sqr(), beta.norm_sqr());
            if (pa + pb - 1.0).abs() > 1e-9 {
                bail!("|alpha|^2 + |beta|^2 = {} is not 1", pa + pb);
            }
            let per_term = |p: f64| {
                let a = if pa > 0.0 { alpha * (p / pa).sqrt() } else { alpha };
                let b = if pb > 0.0 { beta * ((1.0 - p) / pb).sqrt() } else { beta };
                (a - b).norm_sqr() / 4.0
            };
            let (mean, var) = if d == 0.0 { (per_term(pa), 0.0) } else { walk_expectation(pa, d, n as usize, per_term)? };
            print_json(&EraserMomentsOut {
                n,
                d,
                exact_per_term_mean: mean,
                exact_per_term_std: var.sqrt(),
                exact_total_mean: 2.0 * mean,
                leading_order: predict_eraser_deviation(n, d, alpha, beta)?,
            })
        }
    }
}

fn signal_scan(args: ScanArgs) -> Result<bool> {
    let mut rules = args.rules.clone();
    rules.extend(args.ks.iter().map(|&k| ProbabilityRule::PowerLaw { k }));
    if rules.is_empty() {
        bail!("nothing to scan");
    }
    let report = scan_rules(&rules, args.states, args.bases, args.seed, args.tolerance)?;
    match &args.out {
        Some(path) => output::write_csv(path, &report.rows)?,
        None => output::write_csv_to(std::io::stdout().lock(), &report.rows)?,
    }
    for (rule, (k, gap)) in rules.iter().zip(&report.max_gap_by_k) {
        match rule {
            ProbabilityRule::PowerLaw { .. } => eprintln!("power-law k={k}: max gap {gap:.3e}"),
            other => eprintln!("{}: max gap {gap:.3e}", other.name()),
        }
    }
    let zero_k: Vec<f64> = rules
        .iter()
        .zip(&report.max_gap_by_k)
        .filter(|(r, (_, g))| matches!(r, ProbabilityRule::PowerLaw { .. }) && *g <= args.tolerance)
        .map(|(_, (k, _))| *k)
        .collect();
    eprintln!("zero-gap exponents: {zero_k:?}");
    Ok(!args.check || zero_k == [2.0])
}

fn sequence_test(args: SequenceArgs) -> Result<bool> {
    let config = load_config(&args.config)?;
    if !matches!(config.scenario, ScenarioConfig::BellEpr { .. }) {
        bail!("sequence-test needs a bell-epr config");
    }
    let seed = args
        .seed
        .or(config.master_seed)
        .ok_or_else(|| anyhow!("a seed is required: set master_seed in the config or pass --seed"))?;
    let trials = args.trials.unwrap_or(config.trials);
    config.validate()?;
    let scenario = build_scenario(&config.scenario, config.shift.d, config.sequencer)?;
    let Driver::Events { poset, .. } = &scenario.driver else {
        bail!("bell-epr scenario without events");
    };
    let events = poset.events().to_vec();
    let orders = [wing_first_order(&events, 0), wing_first_order(&events, 1)];
    let dynamics = match args.rule {
        Some(rule) => OutcomeDynamics::RuleProjection { rule },
        None => OutcomeDynamics::DensityWalk { params: ShiftParams::with_steps(config.shift.d, config.shift.steps)? },
    };
    let threads = collapse_walk::experiment::thread_count(config.threads);
    let setup = WingSetup { state: scenario.state.clone(), events };
    let report = collapse_walk::experiment::with_pool(threads, || order_invariance_test(&setup, &orders, trials, seed, dynamics))?;
    if let Some(path) = &args.out {
        output::write_json(path, &report)?;
    }
    print_json(&report)?;
    let open: u64 = report.incomplete.iter().sum();
    Ok(!args.check || (report.chi_square.p_value > 0.01 && open == 0))
}

fn dispatch(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run(args) => {
            let check = args.check;
            Ok(run(args)? || !check)
        }
        Command::Predict { config, out } => {
            let p = predict(&load_config(&config)?)?;
            if let Some(path) = out {
                output::write_json(&path, &p)?;
            }
            print_json(&p)?;
            Ok(true)
        }
        Command::Oracle(cmd) => oracle(cmd).map(|_| true),
        Command::SignalScan(args) => signal_scan(args),
        Command::SequenceTest(args) => sequence_test(args),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(CHECK_FAILED),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
