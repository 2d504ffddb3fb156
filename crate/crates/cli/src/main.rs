use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use corrfactor::correlation::{self, Engine, EngineConfig, Scenario};
use corrfactor::ising::{self, IsingProblem, Sidecar};
use corrfactor::{Error, Family, HopModel, LatticeConfig, LatticeSpec};

mod decode;
mod output;

use output::{emit, Format, RunManifest};

#[derive(Parser)]
#[command(name = "corrfactor", version, about = "Tracer correlation factors for vacancy diffusion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Correlation factor at one truncation horizon.
    Compute(ComputeArgs),
    /// Correlation factor for a list of horizons.
    Table(TableArgs),
    /// Export trajectory problems as QUBO files with JSON sidecars.
    Qubo(QuboArgs),
    /// Decode annealer samples of an exported problem.
    Decode(DecodeArgs),
    /// List the built-in lattices or print one as JSON.
    Lattices(LatticesArgs),
}

#[derive(Args)]
struct LatticeArgs {
    /// Built-in lattice name or path to a lattice JSON file.
    #[arg(long)]
    lattice: String,
    /// JSON object mapping direction labels to barrier energies.
    #[arg(long)]
    barriers: Option<PathBuf>,
    /// Temperature in barrier units (k_B = 1).
    #[arg(long)]
    temperature: Option<f64>,
    /// Direction label of the tracer neighbor the vacancy starts on.
    #[arg(long)]
    start: Option<String>,
}

#[derive(Args)]
struct EngineArgs {
    #[arg(long, default_value = "mu", value_parser = parse_engine)]
    engine: Engine,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Walkers for the crw engine.
    #[arg(long, default_value_t = 10_000_000)]
    walkers: u64,
    /// Maximum annealing restarts per N.
    #[arg(long, default_value_t = 10_000)]
    restarts: usize,
    /// Stop annealing after this many restarts without a new trajectory.
    #[arg(long, default_value_t = ising::DEFAULT_SATURATION_WINDOW)]
    window: usize,
    /// Constraint penalty weight for the anneal engine.
    #[arg(long)]
    penalty: Option<f64>,
}

#[derive(Args)]
struct ComputeArgs {
    #[command(flatten)]
    lattice: LatticeArgs,
    #[command(flatten)]
    engine: EngineArgs,
    #[arg(long)]
    nmax: usize,
    #[arg(long, value_enum, default_value = "text")]
    format: Format,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TableArgs {
    #[command(flatten)]
    lattice: LatticeArgs,
    #[command(flatten)]
    engine: EngineArgs,
    /// Comma-separated horizons.
    #[arg(long, value_delimiter = ',', conflicts_with = "nmax_upto", required_unless_present = "nmax_upto")]
    nmax_list: Vec<usize>,
    /// Every horizon from 2 up to this value.
    #[arg(long)]
    nmax_upto: Option<usize>,
    #[arg(long, value_enum, default_value = "text")]
    format: Format,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct QuboArgs {
    #[command(flatten)]
    lattice: LatticeArgs,
    #[arg(long)]
    nmax: usize,
    /// Output prefix; files are written as <prefix>_N<n>.qubo and .json.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    penalty: Option<f64>,
}

#[derive(Args)]
struct DecodeArgs {
    #[arg(long)]
    sidecar: PathBuf,
    /// One 0/1 string per line, variables in id order.
    #[arg(long)]
    samples: PathBuf,
    #[arg(long, value_enum, default_value = "text")]
    format: Format,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct LatticesArgs {
    /// Print this built-in lattice as JSON.
    #[arg(long)]
    emit: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_engine(s: &str) -> std::result::Result<Engine, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = configure_threads() {
        eprintln!("error: {e:#}");
        return ExitCode::from(2);
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    match e.chain().find_map(|c| c.downcast_ref::<Error>()) {
        Some(Error::Config(_) | Error::Parse { .. } | Error::Json(_) | Error::Domain(_)) => 2,
        Some(Error::Infeasible(_)) => 3,
        _ => 1,
    }
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("CORRFACTOR_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| Error::Config(format!("CORRFACTOR_THREADS must be a positive integer, got '{v}'")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("cannot configure the worker pool")?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Compute(a) => compute(a),
        Command::Table(a) => table(a),
        Command::Qubo(a) => qubo(a),
        Command::Decode(a) => decode::run(&a.sidecar, &a.samples, a.format, a.out.as_deref()),
        Command::Lattices(a) => lattices(a),
    }
}

/// Built-in name, or a JSON file holding a lattice and optional barriers.
fn load_lattice(args: &LatticeArgs) -> Result<(LatticeSpec, HopModel)> {
    let (spec, mut model) = if let Ok(family) = args.lattice.parse::<Family>() {
        (LatticeSpec::from_family(family, 2)?, HopModel::uniform())
    } else {
        let path = Path::new(&args.lattice);
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Config(format!("'{}' is neither a built-in lattice nor a readable file: {e}", args.lattice))
        })?;
        let cfg = LatticeConfig::from_json(&text)?;
        let model = cfg.hop_model();
        (cfg.lattice, model)
    };
    if let Some(path) = &args.barriers {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let barriers: BTreeMap<String, f64> = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("invalid barriers file {}: {e}", path.display())))?;
        model = HopModel::with_barriers(barriers, model.temperature)?;
    }
    if let Some(t) = args.temperature {
        model.temperature = t;
        model.validate()?;
    }
    model.distributions(&spec)?;
    Ok((spec, model))
}

fn scenario(args: &LatticeArgs, n_max: usize) -> Result<Scenario> {
    let (spec, model) = load_lattice(args)?;
    let s = match &args.start {
        Some(label) => Scenario::with_start(&spec, &model, n_max, label)?,
        None => Scenario::new(&spec, &model, n_max)?,
    };
    Ok(s)
}

fn engine_config(a: &EngineArgs) -> EngineConfig {
    EngineConfig {
        walkers: a.walkers,
        seed: a.seed,
        restarts: a.restarts,
        saturation_window: a.window,
        penalty: a.penalty,
        ..EngineConfig::default()
    }
}

fn manifest(command: &str, lattice: &LatticeArgs, scenario: &Scenario, e: &EngineArgs, n_max: Vec<usize>) -> RunManifest {
    let mut m = RunManifest::new(command, &lattice.lattice, &scenario.model).param("start", &scenario.start_label);
    m.engine = Some(e.engine.to_string());
    m.n_max = n_max;
    m.seed = e.seed;
    match e.engine {
        Engine::Crw => m.param("walkers", e.walkers),
        Engine::Anneal => m
            .param("restarts", e.restarts)
            .param("window", e.window)
            .param("penalty", e.penalty),
        _ => m,
    }
}

fn compute(a: ComputeArgs) -> Result<()> {
    let s = scenario(&a.lattice, a.nmax)?;
    let est = correlation::estimate(&s, a.engine.engine, &engine_config(&a.engine), a.nmax)?;
    let m = manifest("compute", &a.lattice, &s, &a.engine, vec![a.nmax]);
    let text = match a.format {
        Format::Json => output::json_document(&m, "estimate", &est)?,
        Format::Csv => {
            let row = correlation::TableRow {
                n_max: a.nmax,
                engine: est.engine,
                estimate: Some(est),
                note: None,
            };
            output::table_csv(&m, &[row])?
        }
        Format::Text => {
            let mut t = format!(
                "lattice {}  engine {}  N_max {}\n<cos θ> = {:.10}\nf = {:.10}\ncaptured mass = {:.10}\n",
                s.spec.name, est.engine, est.n_max, est.avg_cos, est.f, est.captured_mass
            );
            if let Some(se) = est.stderr_f {
                t.push_str(&format!("stderr(f) = {se:.3e}\n"));
            }
            if let Some(n) = est.trajectories {
                t.push_str(&format!("trajectories = {n}\n"));
            }
            t
        }
    };
    emit(a.out.as_deref(), &text)
}

fn table(a: TableArgs) -> Result<()> {
    let n_list: Vec<usize> = match a.nmax_upto {
        Some(top) => (2..=top).collect(),
        None => a.nmax_list.clone(),
    };
    let top = n_list
        .iter()
        .copied()
        .max()
        .ok_or_else(|| Error::Config("no horizons requested".into()))?;
    let s = scenario(&a.lattice, top.max(2))?;
    let rows = correlation::convergence_table(&s, a.engine.engine, &engine_config(&a.engine), &n_list)?;
    let m = manifest("table", &a.lattice, &s, &a.engine, n_list);
    let text = match a.format {
        Format::Json => output::json_document(&m, "rows", &rows)?,
        Format::Csv => output::table_csv(&m, &rows)?,
        Format::Text => output::table_text(&rows),
    };
    emit(a.out.as_deref(), &text)
}

fn qubo(a: QuboArgs) -> Result<()> {
    let s = scenario(&a.lattice, a.nmax.max(2))?;
    if a.nmax < 2 {
        return Err(Error::Domain(format!("n_max must be at least 2, got {}", a.nmax)).into());
    }
    // render everything first so a failure leaves no files behind
    let mut files = Vec::new();
    for n in 2..=a.nmax {
        let problem: IsingProblem = s.ising_problem(n, a.penalty)?;
        let mut side = Sidecar::new(&problem);
        let m = RunManifest::new("qubo", &a.lattice.lattice, &s.model)
            .param("start", &s.start_label)
            .param("n_steps", n)
            .param("penalty", problem.penalty);
        side.manifest = Some(m.to_value());
        let stem = format!("{}_N{n}", a.out.display());
        files.push((PathBuf::from(format!("{stem}.qubo")), ising::qubo_text(&problem)));
        files.push((PathBuf::from(format!("{stem}.json")), side.to_json()?));
        println!(
            "N = {n}: {} variables on {} sites -> {stem}.qubo",
            problem.num_vars(),
            problem.sites.len()
        );
    }
    for (path, text) in files {
        output::write_atomic(&path, text.as_bytes())?;
    }
    Ok(())
}

fn lattices(a: LatticesArgs) -> Result<()> {
    if let Some(name) = a.emit {
        let family: Family = name.parse()?;
        let cfg = LatticeConfig::from(LatticeSpec::from_family(family, 2)?);
        let mut text = cfg.to_json()?;
        text.push('\n');
        return emit(a.out.as_deref(), &text);
    }
    let mut text = format!("{:<11} {:>3} {:>3} {:>4}  {}\n", "lattice", "dim", "Z", "sub", "f (uniform)");
    for fam in Family::ALL {
        let spec = LatticeSpec::from_family(fam, 2)?;
        let alt = fam
            .alternate_reference_f()
            .map(|f| format!(" (also {})", short(f)))
            .unwrap_or_default();
        text.push_str(&format!(
            "{:<11} {:>3} {:>3} {:>4}  {}{alt}\n",
            fam.name(),
            fam.dimension(),
            fam.coordination(),
            spec.num_sublattices(),
            short(fam.reference_f())
        ));
    }
    emit(a.out.as_deref(), &text)
}

/// Five decimals with trailing zeros removed.
fn short(x: f64) -> String {
    let s = format!("{x:.5}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}
