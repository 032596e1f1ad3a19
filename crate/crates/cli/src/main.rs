use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use mjnn_core::augment::EstimatorGains;
use mjnn_core::io::{certificate_to_json, gains_to_json, load_gains, load_model, IoError, LoadedModel};
use mjnn_core::lmi::Certificate;
use mjnn_core::sdp::SolveStatus;
use mjnn_core::sim::{ensemble_metrics, simulate_ensemble, write_ensemble_csv, write_trajectory_csv, DisturbanceSignal, RatioEstimate, SimConfig};
use mjnn_core::synthesis::{bisect_gamma, bisect_verify, ccl_synthesize, verify_gains, CclConfig, CclIterate, SynthesisError, SynthesisResult, SynthesisStatus};

#[derive(Parser, Debug)]
#[command(name = "mjnn", version, about = "Protocol-scheduled state estimation for Markovian jumping neural networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check a model file and print every violation.
    Validate {
        model: PathBuf,
    },
    /// Design estimator gains at a level or over a bracket.
    Synthesize(RunArgs),
    /// Check gains against the stability or performance conditions.
    Verify(RunArgs),
    /// Monte Carlo simulation of the estimator with given gains.
    Simulate(RunArgs),
    /// Bisect the smallest level at which synthesis converges.
    Sweep(RunArgs),
}

#[derive(Args, Debug, Clone)]
struct RunArgs {
    model: PathBuf,
    /// Gain file; overrides a gain grid inside the model file.
    #[arg(long)]
    gains: Option<PathBuf>,
    #[arg(long, conflicts_with = "gamma_bracket")]
    gamma: Option<f64>,
    #[arg(long, num_args = 2, value_names = ["LO", "HI"])]
    gamma_bracket: Option<Vec<f64>>,
    /// Bisection halvings after the bracket ends are probed.
    #[arg(long, default_value_t = 10)]
    steps: usize,
    #[arg(long, default_value_t = 200)]
    horizon: usize,
    #[arg(long, default_value_t = 100)]
    runs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Half-width of uniform random initial histories; 0 starts from rest.
    #[arg(long, default_value_t = 0.0)]
    initial_scale: f64,
    #[arg(long, default_value_t = 1e-6)]
    mu: f64,
    #[arg(long, default_value_t = 50)]
    max_iters: usize,
    #[arg(long, default_value = "mjnn-out")]
    out: PathBuf,
    /// Use the envelope `e^{-0.05^k}` for the disturbances.
    #[arg(long)]
    literal_exponent: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum CommandKind {
    Synthesize,
    Verify,
    Simulate,
    Sweep,
}

impl CommandKind {
    fn name(self) -> &'static str {
        match self {
            CommandKind::Synthesize => "synthesize",
            CommandKind::Verify => "verify",
            CommandKind::Simulate => "simulate",
            CommandKind::Sweep => "sweep",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Level {
    Stability,
    Fixed(f64),
    Bracket(f64, f64),
}

/// Effective settings of one command after flag parsing.
#[derive(Debug, Clone)]
struct RunConfig {
    command: CommandKind,
    args: RunArgs,
    level: Level,
}

impl RunConfig {
    fn new(command: CommandKind, args: RunArgs) -> Self {
        let level = match (&args.gamma, &args.gamma_bracket) {
            (Some(g), _) => Level::Fixed(*g),
            (None, Some(b)) => Level::Bracket(b[0], b[1]),
            (None, None) => Level::Stability,
        };
        Self { command, args, level }
    }

    fn ccl(&self) -> CclConfig {
        CclConfig { mu: self.args.mu, max_iters: self.args.max_iters, ..Default::default() }
    }

    fn to_json(&self) -> Value {
        let a = &self.args;
        let (gamma, bracket) = match self.level {
            Level::Stability => (Value::Null, Value::Null),
            Level::Fixed(g) => (json!(g), Value::Null),
            Level::Bracket(lo, hi) => (Value::Null, json!([lo, hi])),
        };
        json!({
            "command": self.command.name(),
            "model": a.model.display().to_string(),
            "gains": a.gains.as_ref().map(|p| p.display().to_string()),
            "gamma": gamma,
            "gamma_bracket": bracket,
            "steps": a.steps,
            "horizon": a.horizon,
            "runs": a.runs,
            "seed": a.seed,
            "initial_scale": a.initial_scale,
            "mu": a.mu,
            "max_iters": a.max_iters,
            "literal_exponent": a.literal_exponent,
            "out": a.out.display().to_string(),
        })
    }
}

#[derive(Debug)]
enum Failure {
    /// Infeasible design or invalid input.
    Rejected(String),
    Io(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Rejected(_) => 1,
            Failure::Io(_) => 2,
        }
    }
}

impl From<IoError> for Failure {
    fn from(e: IoError) -> Self {
        match e {
            IoError::Read { .. } => Failure::Io(e.to_string()),
            _ => Failure::Rejected(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

fn rejected(e: impl std::fmt::Display) -> Failure {
    Failure::Rejected(e.to_string())
}

fn write_json(path: &Path, v: &Value) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(v).map_err(|e| Failure::Io(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| Failure::Io(format!("{}: {e}", path.display())))
}

fn create(path: &Path) -> Result<BufWriter<fs::File>, Failure> {
    fs::File::create(path).map(BufWriter::new).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))
}

fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

fn write_trace(path: &Path, trace: &[CclIterate]) -> Result<(), Failure> {
    let mut f = create(path)?;
    writeln!(f, "iter,objective,eq55_residual,max_coupling_residual")?;
    for t in trace {
        writeln!(f, "{},{},{},{}", t.iter, fmt(t.objective), fmt(t.trace_residual), fmt(t.max_coupling_residual))?;
    }
    f.flush()?;
    Ok(())
}

fn write_probes(path: &Path, probes: &[(f64, bool)]) -> Result<(), Failure> {
    let mut f = create(path)?;
    writeln!(f, "gamma,feasible")?;
    for (g, ok) in probes {
        writeln!(f, "{},{}", fmt(*g), ok)?;
    }
    f.flush()?;
    Ok(())
}

fn write_certificate(out: &Path, cert: &Certificate) -> Result<(), Failure> {
    write_json(&out.join("certificate.json"), &certificate_to_json(cert))
}

fn gains_for(cfg: &RunConfig, loaded: &LoadedModel) -> Result<EstimatorGains, Failure> {
    match (&cfg.args.gains, &loaded.gains) {
        (Some(path), _) => Ok(load_gains(path, &loaded.model, &loaded.wtod)?),
        (None, Some(g)) => Ok(g.clone()),
        (None, None) => Err(rejected(format!("{} needs --gains or a gain grid in the model file", cfg.command.name()))),
    }
}

fn report_synthesis(out: &Path, r: &SynthesisResult) -> Result<(), Failure> {
    write_trace(&out.join("ccl_trace.csv"), &r.trace)?;
    if let Some(g) = &r.gains {
        write_json(&out.join("gains.json"), &gains_to_json(g))?;
    }
    if let Some(c) = &r.certificate {
        write_certificate(out, c)?;
    }
    println!("status: {:?} at gamma = {}", r.status, r.gamma);
    if r.status == SynthesisStatus::Converged {
        Ok(())
    } else {
        Err(rejected(format!("synthesis did not converge at gamma = {}", r.gamma)))
    }
}

fn bisect_error(e: SynthesisError) -> Failure {
    match e {
        SynthesisError::NoFeasibleLevel { lo, hi } => Failure::Rejected(format!("infeasible at every gamma in [{lo}, {hi}]")),
        other => rejected(other),
    }
}

fn synthesize(cfg: &RunConfig, loaded: &LoadedModel) -> Result<(), Failure> {
    let out = &cfg.args.out;
    match cfg.level {
        Level::Fixed(g) => {
            let r = ccl_synthesize(&loaded.model, &loaded.wtod, g, &cfg.ccl()).map_err(rejected)?;
            report_synthesis(out, &r)
        }
        Level::Bracket(lo, hi) => {
            let r = bisect_gamma(&loaded.model, &loaded.wtod, lo, hi, cfg.args.steps, &cfg.ccl()).map_err(bisect_error)?;
            write_probes(&out.join("bracket.csv"), &r.probes)?;
            report_synthesis(out, &r.synthesis)
        }
        Level::Stability => Err(rejected("synthesize needs --gamma or --gamma-bracket")),
    }
}

fn sweep(cfg: &RunConfig, loaded: &LoadedModel) -> Result<(), Failure> {
    let Level::Bracket(lo, hi) = cfg.level else {
        return Err(rejected("sweep needs --gamma-bracket"));
    };
    let result = bisect_gamma(&loaded.model, &loaded.wtod, lo, hi, cfg.args.steps, &cfg.ccl());
    let probes: Vec<(f64, bool)> = match &result {
        Ok(r) => r.probes.clone(),
        Err(SynthesisError::NoFeasibleLevel { .. }) => vec![(hi, false)],
        Err(_) => Vec::new(),
    };
    write_probes(&cfg.args.out.join("bracket.csv"), &probes)?;
    let r = result.map_err(bisect_error)?;
    println!("smallest converged gamma: {}", r.gamma);
    report_synthesis(&cfg.args.out, &r.synthesis)
}

fn verify(cfg: &RunConfig, loaded: &LoadedModel) -> Result<(), Failure> {
    let gains = gains_for(cfg, loaded)?;
    let ccl = cfg.ccl();
    let opts = mjnn_core::lmi::AssemblyOptions { eps: ccl.eps, partial_mode: ccl.partial_mode };
    let (m, w) = (&loaded.model, &loaded.wtod);
    let (gamma, result) = match cfg.level {
        Level::Stability => (None, verify_gains(m, w, &gains, None, &opts, &ccl.solver).map_err(rejected)?),
        Level::Fixed(g) => (Some(g), verify_gains(m, w, &gains, Some(g), &opts, &ccl.solver).map_err(rejected)?),
        Level::Bracket(lo, hi) => {
            let r = bisect_verify(m, w, &gains, lo, hi, cfg.args.steps, &opts, &ccl.solver);
            let probes = match &r {
                Ok(b) => b.probes.clone(),
                Err(SynthesisError::NoFeasibleLevel { .. }) => vec![(hi, false)],
                Err(_) => Vec::new(),
            };
            write_probes(&cfg.args.out.join("bracket.csv"), &probes)?;
            let r = r.map_err(bisect_error)?;
            (Some(r.gamma), r.verify)
        }
    };
    let label = gamma.map_or("stability".to_string(), |g| format!("gamma = {g}"));
    match (&result.status, &result.certificate) {
        (SolveStatus::Feasible, Some(c)) => {
            write_certificate(&cfg.args.out, c)?;
            println!("feasible at {label}");
            Ok(())
        }
        _ => {
            println!("infeasible at {label} ({:?}, residual {:e})", result.status, result.residual);
            Err(rejected(format!("infeasible at {label}")))
        }
    }
}

fn simulate(cfg: &RunConfig, loaded: &LoadedModel) -> Result<(), Failure> {
    let gains = gains_for(cfg, loaded)?;
    let completion = loaded
        .completion
        .as_ref()
        .ok_or_else(|| rejected("simulation needs a completion for the unknown transition probabilities"))?;
    let a = &cfg.args;
    let disturbance = DisturbanceSignal::DecayingSinusoid { literal_exponent: a.literal_exponent };
    let sim = SimConfig::new(a.horizon, a.seed);
    let trajs =
        simulate_ensemble(&loaded.model, &loaded.wtod, &gains, completion, &disturbance, a.runs, &sim, a.initial_scale)
            .map_err(rejected)?;
    let metrics = ensemble_metrics(&trajs, loaded.wtod.nodes());
    let mut f = create(&a.out.join("trajectory.csv"))?;
    write_trajectory_csv(&mut f, &trajs[0], loaded.model.nx(), None)?;
    f.flush()?;
    let mut f = create(&a.out.join("ensemble.csv"))?;
    write_ensemble_csv(&mut f, &metrics)?;
    f.flush()?;
    let ratio = match metrics.ratio {
        RatioEstimate::NotApplicable => Value::Null,
        RatioEstimate::Value { ratio, single_count_ratio, std_err, peak_step } => json!({
            "ratio": ratio,
            "single_count_ratio": single_count_ratio,
            "std_err": std_err,
            "peak_step": peak_step,
        }),
    };
    write_json(
        &a.out.join("metrics.json"),
        &json!({ "runs": metrics.runs, "sum_w_sq": metrics.sum_w_sq, "ratio": ratio, "node_counts": metrics.node_counts }),
    )?;
    println!("simulated {} runs over {} steps", metrics.runs, a.horizon);
    Ok(())
}

fn validate(model: &Path) -> Result<(), Failure> {
    match load_model(model) {
        Ok(_) => {
            println!("no violations");
            Ok(())
        }
        Err(IoError::Invalid(errs)) => {
            for e in &errs {
                println!("{e:?}");
            }
            Err(Failure::Rejected(format!("{} violation(s)", errs.len())))
        }
        Err(e) => Err(e.into()),
    }
}

fn run(cfg: &RunConfig) -> Result<(), Failure> {
    let loaded = load_model(&cfg.args.model)?;
    fs::create_dir_all(&cfg.args.out).map_err(|e| Failure::Io(format!("{}: {e}", cfg.args.out.display())))?;
    write_json(&cfg.args.out.join("config.json"), &cfg.to_json())?;
    match cfg.command {
        CommandKind::Synthesize => synthesize(cfg, &loaded),
        CommandKind::Verify => verify(cfg, &loaded),
        CommandKind::Simulate => simulate(cfg, &loaded),
        CommandKind::Sweep => sweep(cfg, &loaded),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Validate { model } => validate(&model),
        Command::Synthesize(a) => run(&RunConfig::new(CommandKind::Synthesize, a)),
        Command::Verify(a) => run(&RunConfig::new(CommandKind::Verify, a)),
        Command::Simulate(a) => run(&RunConfig::new(CommandKind::Simulate, a)),
        Command::Sweep(a) => run(&RunConfig::new(CommandKind::Sweep, a)),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Rejected(m) => eprintln!("error: {m}"),
                Failure::Io(m) => eprintln!("i/o error: {m}"),
            }
            ExitCode::from(f.code())
        }
    }
}
