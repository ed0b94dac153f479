use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use kinfrac_core::cli_io::config::InitialKind;
use kinfrac_core::cli_io::{emit_plot, parse_config, ArtifactWriter, Header, PlotKind, RunConfig};
use kinfrac_core::equilibria::ModelParams;
use kinfrac_core::field::{Cosine, ExtendedField};
use kinfrac_core::frac_solver::{assemble, regularity_probe};
use kinfrac_core::harness::{
    diffusion_reference, duality_residual, kinetic_vs_diffusion, op_convergence, standard_test_function, ComparisonSpec,
    ConvergenceReport, NamedForcing, OpSweepSettings, Provenance,
};
use kinfrac_core::kinetic_mc::{run_histograms, Dynamics, InitialData, Samplers};
use kinfrac_core::model::Model;
use kinfrac_core::testfn::{lambda_table, Cutoff};
use kinfrac_core::Error;

#[derive(Parser)]
#[command(name = "kinfrac", version, about = "Kinetic and fractional diffusion experiments")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Tabulate the kernels F0, F1 and their tail deviations.
    Kernels,
    /// Operator errors over the eps sweep.
    Operators,
    /// Correction coefficients of the kinetic test function over the eps sweep.
    Testfn,
    /// Particle simulation; one histogram CSV per snapshot.
    Kinetic {
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long)]
        particles: Option<usize>,
        /// Comma-separated snapshot times.
        #[arg(long, value_delimiter = ',')]
        snapshots: Option<Vec<f64>>,
        #[arg(long)]
        cells: Option<usize>,
    },
    /// Galerkin evolution of the limit equation at the snapshot times.
    Diffusion,
    /// Boundary exponents of the explicit stationary profile.
    Regularity,
    /// Run a named experiment: operators, kinetic, duality, regularity.
    Converge { experiment: Option<String> },
    /// Render a CSV artifact as SVG.
    Plot {
        #[arg(long)]
        kind: String,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
}

/// Outcome of a verification run.
enum Outcome {
    Done,
    ToleranceFailed(String),
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::InvalidParameter(_) | Error::Schema(_) | Error::BudgetInsufficient { .. } => 2,
        Error::Tolerance(_)
        | Error::ResidualTooLarge { .. }
        | Error::Quadrature(_)
        | Error::Assembly(_)
        | Error::DegenerateSystem { .. }
        | Error::TimeSupport(_) => 3,
        _ => 1,
    }
}

struct Context {
    cfg: RunConfig,
    writer: ArtifactWriter,
    provenance: Provenance,
}

impl Context {
    fn model(&self) -> Result<Model, Error> {
        Model::new(ModelParams::new(self.cfg.s, self.cfg.nu0)?)
    }

    fn initial_data(&self) -> Result<InitialData, Error> {
        match self.cfg.kinetic.initial {
            InitialKind::Uniform => InitialData::uniform(1.0),
            InitialKind::Cosine => InitialData::cosine(self.cfg.kinetic.amplitude),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::ToleranceFailed(msg)) => {
            eprintln!("tolerance failure: {msg}");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cli: Cli) -> Result<Outcome, Error> {
    let mut cfg = parse_config(cli.global.config.as_deref())?;
    if let Some(seed) = cli.global.seed {
        cfg.seed = seed;
    }
    if let Some(out) = cli.global.out {
        cfg.out = out;
    }
    if let Some(t) = cli.global.threads {
        if t == 0 {
            return Err(Error::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    if let Command::Kinetic {
        eps,
        particles,
        snapshots,
        cells,
    } = &cli.command
    {
        if let Some(e) = eps {
            cfg.kinetic.eps = *e;
        }
        if let Some(p) = particles {
            cfg.budget.particles = *p;
        }
        if let Some(s) = snapshots {
            cfg.kinetic.snapshots = s.clone();
        }
        if let Some(c) = cells {
            cfg.kinetic.cells = *c;
        }
    }
    cfg.validate()?;
    let hash = cfg.hash();
    let ctx = Context {
        writer: ArtifactWriter::new(cfg.out.clone(), Header::new(&hash, cfg.seed)),
        provenance: Provenance {
            seed: cfg.seed,
            config_hash: hash,
        },
        cfg,
    };
    match cli.command {
        Command::Kernels => kernels(&ctx),
        Command::Operators => operators(&ctx).map(|_| Outcome::Done),
        Command::Testfn => testfn(&ctx),
        Command::Kinetic { .. } => kinetic(&ctx),
        Command::Diffusion => diffusion(&ctx),
        Command::Regularity => regularity(&ctx),
        Command::Converge { experiment } => {
            let name = experiment.unwrap_or_else(|| ctx.cfg.experiment.clone());
            converge(&ctx, &name)
        }
        Command::Plot { kind, input, output } => {
            let kind: PlotKind = kind.parse()?;
            let text = std::fs::read_to_string(&input).map_err(|e| Error::Config(format!("cannot read {}: {e}", input.display())))?;
            let svg = emit_plot(&text, kind)?;
            let dir = output.parent().map(PathBuf::from).unwrap_or_default();
            let name = output
                .file_name()
                .ok_or_else(|| Error::Config("--output must name a file".into()))?
                .to_string_lossy()
                .to_string();
            ArtifactWriter::new(dir, ctx.writer.header.clone()).svg(&name, &svg)?;
            Ok(Outcome::Done)
        }
    }
}

fn kernels(ctx: &Context) -> Result<Outcome, Error> {
    let model = ctx.model()?;
    let k = &model.kernels;
    let rows: Vec<Vec<f64>> = (0..=120)
        .map(|j| {
            let z = 10f64.powf(-3.0 + 6.0 * j as f64 / 120.0);
            vec![z, k.kernel(0, z), k.kernel(1, z), k.tail_deviation(0, z), k.tail_deviation(1, z)]
        })
        .collect();
    ctx.writer.csv("kernels.csv", &["z", "f0", "f1", "tail_deviation0", "tail_deviation1"], &rows)?;
    ctx.writer.json("constants.json", &model.constants)?;
    Ok(Outcome::Done)
}

fn operators(ctx: &Context) -> Result<Vec<ConvergenceReport>, Error> {
    let model = ctx.model()?;
    let psi = standard_test_function(&model)?;
    let out = op_convergence(
        &model,
        &psi,
        &Cutoff::default(),
        &ctx.cfg.sweep.eps,
        OpSweepSettings::default(),
        &ctx.provenance,
    )?;
    let rows: Vec<Vec<f64>> = out
        .levels
        .iter()
        .map(|l| vec![l.eps, l.generator_l1, l.gradient_sup, l.lambda_sum, l.transport_l2])
        .collect();
    ctx.writer.csv(
        "operators.csv",
        &["eps", "generator_l1", "gradient_sup", "lambda_sum", "transport_l2"],
        &rows,
    )?;
    for r in &out.reports {
        write_rate_csv(ctx, r)?;
    }
    ctx.writer.json("operators.json", &out)?;
    Ok(out.reports)
}

fn write_rate_csv(ctx: &Context, r: &ConvergenceReport) -> Result<(), Error> {
    let name = format!("{}_{}.csv", r.experiment, r.metric);
    match &r.stderr {
        Some(se) => {
            let rows: Vec<Vec<f64>> = r.levels.iter().zip(&r.errors).zip(se).map(|((l, e), s)| vec![*l, *e, *s]).collect();
            ctx.writer.csv(&name, &["level", "error", "stderr"], &rows)?;
        }
        None => {
            let rows: Vec<Vec<f64>> = r.levels.iter().zip(&r.errors).map(|(l, e)| vec![*l, *e]).collect();
            ctx.writer.csv(&name, &["level", "error"], &rows)?;
        }
    }
    Ok(())
}

fn testfn(ctx: &Context) -> Result<Outcome, Error> {
    let model = ctx.model()?;
    let base = ExtendedField::profile(Cosine {
        mode: 1.0,
        amplitude: 1.0,
    });
    let table = lambda_table(&model, &base, &Cutoff::default(), &ctx.cfg.sweep.eps)?;
    let rows: Vec<Vec<f64>> = table.iter().map(|r| vec![r.eps, r.lambda0, r.lambda1, r.res0, r.res1]).collect();
    ctx.writer.csv("testfn.csv", &["eps", "lambda0", "lambda1", "residual0", "residual1"], &rows)?;
    Ok(Outcome::Done)
}

fn kinetic(ctx: &Context) -> Result<Outcome, Error> {
    let model = ctx.model()?;
    let samplers = Samplers::new(&model)?;
    let k = &ctx.cfg.kinetic;
    let dynamics = Dynamics::new(&model, &samplers, k.eps)?;
    let data = ctx.initial_data()?;
    let run = run_histograms(&dynamics, &data, ctx.cfg.budget.particles, ctx.cfg.seed, &k.snapshots, k.cells)?;
    for (i, snap) in run.snapshots.iter().enumerate() {
        let rows: Vec<Vec<f64>> = snap
            .centers()
            .into_iter()
            .zip(snap.averages())
            .zip(snap.stderr())
            .map(|((x, r), s)| vec![x, r, s])
            .collect();
        ctx.writer
            .csv(&format!("kinetic_snapshot_{i:02}.csv"), &["x_center", "rho_hat", "stderr"], &rows)?;
    }
    let times: Vec<f64> = run.snapshots.iter().map(|s| s.time).collect();
    ctx.writer.json(
        "kinetic.json",
        &serde_json::json!({ "eps": run.eps, "times": times, "events": run.events, "initial": data.label }),
    )?;
    Ok(Outcome::Done)
}

fn diffusion(ctx: &Context) -> Result<Outcome, Error> {
    let model = ctx.model()?;
    let ops = assemble(ctx.cfg.budget.nodes, model.s())?;
    let data = ctx.initial_data()?;
    let reference = diffusion_reference(&model, &ops, &data, &ctx.cfg.kinetic.snapshots, ctx.cfg.budget.dt)?;
    for (i, u) in reference.values.iter().enumerate() {
        let rows: Vec<Vec<f64>> = ops.nodes.iter().zip(u).map(|(x, v)| vec![*x, *v]).collect();
        ctx.writer.csv(&format!("diffusion_snapshot_{i:02}.csv"), &["x", "rho"], &rows)?;
    }
    Ok(Outcome::Done)
}

fn regularity_study(ctx: &Context) -> Result<Vec<String>, Error> {
    let mut failures = Vec::new();
    let mut reports = Vec::new();
    for &s in &ctx.cfg.sweep.s_values {
        let r = regularity_probe(s, ctx.cfg.budget.nodes)?;
        let rows: Vec<Vec<f64>> = r
            .samples
            .iter()
            .filter(|p| p[0] > 0.0 && p[0] <= 0.5)
            .map(|p| vec![p[0], (p[1] - r.samples[0][1]).abs()])
            .filter(|row| row[1] > 0.0)
            .collect();
        ctx.writer.csv(&format!("regularity_s{s}.csv"), &["distance", "increment"], &rows)?;
        for (side, fit) in [("left", r.exponent_left), ("right", r.exponent_right)] {
            if (fit.slope - s).abs() > ctx.cfg.tolerance.exponent {
                failures.push(format!("s={s}: {side} exponent {:.4}", fit.slope));
            }
        }
        reports.push(r);
    }
    ctx.writer.json("regularity.json", &serde_json::json!({ "reports": reports, "provenance": ctx.provenance }))?;
    Ok(failures)
}

fn regularity(ctx: &Context) -> Result<Outcome, Error> {
    let failures = regularity_study(ctx)?;
    Ok(if failures.is_empty() {
        Outcome::Done
    } else {
        Outcome::ToleranceFailed(failures.join("; "))
    })
}

fn converge(ctx: &Context, name: &str) -> Result<Outcome, Error> {
    let failures: Vec<String> = match name {
        "operators" => operators(ctx)?
            .iter()
            .filter(|r| r.passed == Some(false) || !r.monotone)
            .map(|r| format!("{}: monotone={} rate={:?}", r.metric, r.monotone, r.rate()))
            .collect(),
        "kinetic" => {
            let model = ctx.model()?;
            let data = ctx.initial_data()?;
            let spec = ComparisonSpec {
                eps: ctx.cfg.kinetic.comparison_eps.clone(),
                times: ctx.cfg.kinetic.snapshots.clone(),
                particles: ctx.cfg.budget.particles,
                cells: ctx.cfg.kinetic.cells,
                reference_cells: ctx.cfg.kinetic.reference_cells,
                dt: ctx.cfg.budget.dt,
                signal_floor: ctx.cfg.tolerance.signal_floor,
                seed: ctx.cfg.seed,
                ..Default::default()
            };
            let out = kinetic_vs_diffusion(&model, &data, &spec, &ctx.provenance)?;
            for r in &out.reports {
                write_rate_csv(ctx, r)?;
            }
            ctx.writer.json("report.json", &out)?;
            spec.times
                .iter()
                .zip(&out.decreasing_beyond_noise)
                .filter(|(_, ok)| !**ok)
                .map(|(t, _)| format!("weak distance at t={t} does not decrease beyond noise"))
                .collect()
        }
        "duality" => {
            let model = ctx.model()?;
            let rho = |x: f64| 1.0 + 0.5 * (std::f64::consts::PI * x).cos();
            let g1 = |x: f64| (2.0 * std::f64::consts::PI * x).cos();
            let g2 = |x: f64| x * x;
            let forcings = [NamedForcing { name: "cos2pix", f: &g1 }, NamedForcing { name: "x_squared", f: &g2 }];
            let b = &ctx.cfg.budget;
            let out = duality_residual(&model, b.nodes, b.dt, b.horizon, &rho, &ctx.cfg.sweep.lambda, &forcings, &ctx.provenance)?;
            let rows: Vec<Vec<f64>> = out
                .entries
                .iter()
                .enumerate()
                .map(|(i, e)| vec![e.lambda, (i % forcings.len()) as f64, e.residual, e.normalized])
                .collect();
            ctx.writer.csv("duality.csv", &["lambda", "forcing", "residual", "normalized"], &rows)?;
            ctx.writer.json("report.json", &out)?;
            out.entries
                .iter()
                .filter(|e| !(e.normalized <= ctx.cfg.tolerance.duality))
                .map(|e| format!("lambda={} {}: {:.3e}", e.lambda, e.forcing, e.normalized))
                .collect()
        }
        "regularity" => regularity_study(ctx)?,
        other => {
            return Err(Error::Config(format!(
                "unknown experiment {other:?}; expected operators, kinetic, duality or regularity"
            )))
        }
    };
    Ok(if failures.is_empty() {
        Outcome::Done
    } else {
        Outcome::ToleranceFailed(failures.join("; "))
    })
}
