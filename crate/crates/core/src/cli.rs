//! Command-line front end. Every artifact is written below the output
//! directory; input data directories are only read.

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::config::{ConfigError, Experiment, ExperimentConfig};
use crate::domain::{Grid, MaskRole};
use crate::forward::{solve_forward, step_restriction, ForwardError, Trajectory};
use crate::inverse::{
    reduce, relative_error, source_from_trajectory, variational_reconstruct, InverseError, Method,
    ReconstructionResult, ReductionOptions, VariationalOptions,
};
use crate::measure::{add_noise, observe, MeasureError, MeasurementSet, Variant};
use crate::model::check_admissibility;
use crate::stability::{
    emit_report, run_holder_ensemble, run_lipschitz_ensemble, EnsembleSpec, Family, Setup, StabilityError,
};
use crate::weights::{
    build_d, check_dt_alpha_bound, empirical_carleman_constant, integral_estimate_check, regular_weights,
    select_beta_r, singular_weights, WeightFunctionD, WeightsError,
};

#[derive(Debug, Parser)]
#[command(
    name = "kgs",
    version,
    about = "Inverse source experiments for the Klausmeier-Gray-Scott system"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory; overrides `output.dir`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Seed for noise, ensembles and random test functions.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for ensembles.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the forward problem and export the trajectory.
    Forward,
    /// Reconstruct the source from measured or generated data.
    Reconstruct,
    /// Run the Lipschitz and Hölder stability ensembles.
    Stability,
    /// Verify the weight functions and weighted estimates.
    WeightsCheck,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("solver refused: {0}")]
    Solver(String),
    #[error("reduction refused: {0}")]
    Positivity(String),
    #[error("weight check failed ({check}): {message}")]
    Weights { check: &'static str, message: String },
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) | CliError::Io(_) => 1,
            CliError::Solver(_) => 2,
            CliError::Positivity(_) => 3,
            CliError::Weights { .. } => 4,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<ForwardError> for CliError {
    fn from(e: ForwardError) -> Self {
        CliError::Solver(e.to_string())
    }
}

impl From<MeasureError> for CliError {
    fn from(e: MeasureError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<InverseError> for CliError {
    fn from(e: InverseError) -> Self {
        match e {
            e if e.is_positivity() => CliError::Positivity(e.to_string()),
            InverseError::Measure(m) => m.into(),
            e @ InverseError::Shape(_) => CliError::Validation(e.to_string()),
            e => CliError::Solver(e.to_string()),
        }
    }
}

impl From<StabilityError> for CliError {
    fn from(e: StabilityError) -> Self {
        match e {
            StabilityError::Io(e) => CliError::Io(e),
            StabilityError::Base(m) => CliError::Solver(m),
            e => CliError::Validation(e.to_string()),
        }
    }
}

/// Parses arguments, runs the command and returns the exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli, stdout) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: &Cli, out: &mut dyn Write) -> Result<(), CliError> {
    let path = cli
        .common
        .config
        .as_ref()
        .ok_or_else(|| CliError::Validation("--config <path> is required".into()))?;
    let mut config = ExperimentConfig::load(path)?;
    if let Some(seed) = cli.common.seed {
        config.measurement.seed = seed;
        config.ensemble.seed = seed;
    }
    if let Some(dir) = &cli.common.out {
        config.output.dir = dir.clone();
    }
    if cli.common.threads == Some(0) {
        return Err(CliError::Validation("--threads must be positive".into()));
    }
    let exp = config.resolve()?;
    let dir = config.output.dir.clone();
    fs::create_dir_all(&dir)?;
    match cli.command {
        Command::Forward => cmd_forward(&exp, &dir, out),
        Command::Reconstruct => cmd_reconstruct(&exp, &dir, out),
        Command::Stability => cmd_stability(&exp, &dir, cli.common.threads, out),
        Command::WeightsCheck => cmd_weights_check(&exp, &dir, out),
    }
}

fn check_step(exp: &Experiment) -> Result<(), CliError> {
    let required = step_restriction(&exp.problem, &exp.grid, &exp.time);
    if exp.time.dt() > required * (1.0 + 1e-12) {
        return Err(ForwardError::StepRestriction {
            dt: exp.time.dt(),
            required,
        }
        .into());
    }
    Ok(())
}

/// Two- or three-column gnuplot file.
fn write_dat(path: &Path, grid: &Grid, values: &[f64]) -> io::Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for (k, v) in values.iter().enumerate() {
        let c = grid.coord(k);
        if grid.dim() == 1 {
            writeln!(w, "{:.12e} {v:.12e}", c[0])?;
        } else {
            if k > 0 && grid.ij(k).0 == 0 {
                writeln!(w)?;
            }
            writeln!(w, "{:.12e} {:.12e} {v:.12e}", c[0], c[1])?;
        }
    }
    w.flush()
}

fn solve(exp: &Experiment) -> Result<Trajectory, CliError> {
    check_step(exp)?;
    Ok(solve_forward(&exp.problem, &exp.grid, &exp.time)?)
}

pub fn cmd_forward(exp: &Experiment, dir: &Path, out: &mut dyn Write) -> Result<(), CliError> {
    let traj = solve(exp)?;
    traj.write_binary(BufWriter::new(fs::File::create(dir.join("trajectory.bin"))?))?;
    traj.write_csv(BufWriter::new(fs::File::create(dir.join("trajectory.csv"))?))?;
    let last = traj.levels() - 1;
    write_dat(&dir.join("u_final.dat"), &exp.grid, &traj.u[last])?;
    write_dat(&dir.join("v_final.dat"), &exp.grid, &traj.v[last])?;
    let adm = check_admissibility(&traj, &exp.problem.f, &exp.problem.bounds);
    fs::write(dir.join("admissibility.txt"), format!("{adm}\n"))?;
    writeln!(out, "forward: {} levels, dt = {}", traj.levels(), traj.dt())?;
    writeln!(
        out,
        "min u = {:.6e}, min v = {:.6e}",
        traj.global_min(crate::forward::Component::U),
        traj.global_min(crate::forward::Component::V)
    )?;
    writeln!(out, "{adm}")?;
    Ok(())
}

fn acquire(exp: &Experiment, dir: &Path) -> Result<(MeasurementSet, Option<Trajectory>), CliError> {
    let m = &exp.config.measurement;
    if let Some(src) = &m.data_dir {
        let ms = MeasurementSet::read_dir(src)?;
        if ms.grid != exp.grid {
            return Err(CliError::Validation(format!(
                "data grid ({}) does not match the configured grid ({})",
                ms.grid.header(),
                exp.grid.header()
            )));
        }
        return Ok((ms, None));
    }
    let traj = solve(exp)?;
    let f = (exp.variant == Variant::M3).then_some(exp.problem.f.as_slice());
    let mut ms = observe(&traj, exp.variant, &exp.subdomains, f)?;
    if m.noise > 0.0 {
        ms = add_noise(&ms, m.noise, m.seed)?;
    }
    ms.write_dir(&dir.join("data"))?;
    Ok((ms, Some(traj)))
}

pub fn cmd_reconstruct(exp: &Experiment, dir: &Path, out: &mut dyn Write) -> Result<(), CliError> {
    let s = &exp.config.solver;
    let (data, traj) = acquire(exp, dir)?;
    writeln!(out, "data: variant {}", data.variant)?;
    let result = if s.method == "identity" {
        let traj = traj.ok_or_else(|| {
            CliError::Validation(
                "solver.method = identity needs full fields at t0; it cannot run on a data directory".into(),
            )
        })?;
        ReconstructionResult {
            f_hat: source_from_trajectory(&exp.problem, &traj)?,
            method: Method::SourceIdentity,
            log: Vec::new(),
            support: MaskRole::OmegaBig,
            converged: true,
        }
    } else {
        let ropts = ReductionOptions {
            eps_pos: s.eps_pos,
            eps_neg: s.eps_neg,
        };
        let (m1, diag) = reduce(&data, &exp.problem, &ropts)?;
        for line in &diag.trace {
            writeln!(out, "{line}")?;
        }
        let init = match s.init.as_str() {
            "truth" => exp.truth.clone().expect("validated"),
            _ => vec![0.0; exp.grid.len()],
        };
        variational_reconstruct(
            &exp.problem,
            &m1,
            &init,
            &VariationalOptions {
                gamma: s.gamma,
                tol: s.tol,
                max_iter: s.max_iter,
                ..Default::default()
            },
        )?
    };
    let mut extra = serde_json::json!({ "variant": data.variant.to_string() });
    writeln!(
        out,
        "method {}: {} iterations, final J = {:.6e}, converged = {}",
        result.method,
        result.iterations(),
        result.final_j(),
        result.converged
    )?;
    if let Some(truth) = &exp.truth {
        let big = Some(exp.subdomains.omega_big.as_slice());
        let e0 = relative_error(&result.f_hat, truth, big, &exp.grid);
        let e = relative_error(&result.f_hat, truth, None, &exp.grid);
        writeln!(out, "relative error on Omega0: {e0:.6e}")?;
        writeln!(out, "relative error on Omega: {e:.6e}")?;
        extra["relative_error_omega_big"] = e0.into();
        extra["relative_error_omega"] = e.into();
    }
    result.write_dir(&dir.join("reconstruction"), &exp.grid, &extra)?;
    Ok(())
}

fn ensemble_spec(exp: &Experiment) -> EnsembleSpec {
    let e = &exp.config.ensemble;
    EnsembleSpec {
        family: if e.family == "single" {
            Family::SingleMode { k: e.k }
        } else {
            Family::RandomTrig { modes: e.modes }
        },
        sizes: e.sizes.clone(),
        trials: e.trials,
        seed: e.seed,
    }
}

pub fn cmd_stability(
    exp: &Experiment,
    dir: &Path,
    threads: Option<usize>,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    if exp.config.ensemble.trials == 0 {
        return Err(StabilityError::NoRows.into());
    }
    check_step(exp)?;
    let setup = Setup {
        problem: &exp.problem,
        grid: &exp.grid,
        time: &exp.time,
        subdomains: &exp.subdomains,
    };
    let spec = ensemble_spec(exp);
    for (name, rep) in [
        ("lipschitz.csv", run_lipschitz_ensemble(&setup, &spec, threads)?),
        ("holder.csv", run_holder_ensemble(&setup, &spec, threads)?),
    ] {
        emit_report(&rep, &dir.join(name))?;
        for line in rep.footer() {
            writeln!(out, "# {line}")?;
        }
    }
    Ok(())
}

fn weights_err(check: &'static str) -> impl Fn(WeightsError) -> CliError {
    move |e| CliError::Weights {
        check,
        message: e.to_string(),
    }
}

fn fail(check: &'static str, message: String) -> CliError {
    CliError::Weights { check, message }
}

/// Smooth random field vanishing on the boundary.
fn random_field(grid: &Grid, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let (lx, ly) = (grid.extent(0), grid.extent(1));
    let c: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
    let two_d = grid.dim() == 2;
    grid.sample(|x, y| {
        let pi = std::f64::consts::PI;
        let by = if two_d { (pi * y / ly).sin() } else { 1.0 };
        by * (1..=3).map(|k| c[k - 1] * (k as f64 * pi * x / lx).sin()).sum::<f64>()
    })
}

pub fn cmd_weights_check(exp: &Experiment, dir: &Path, out: &mut dyn Write) -> Result<(), CliError> {
    let w = &exp.config.weights;
    let grid = &exp.grid;
    let tg = &exp.time;
    let mut report = Vec::new();
    let d = match &w.d {
        None => build_d(grid, &exp.subdomains.omega0, w.lambda),
        Some(text) => {
            let e =
                crate::expr::Expression::parse(text).map_err(|e| CliError::Validation(format!("weights.d: {e}")))?;
            WeightFunctionD::from_values(
                grid,
                grid.sample(|x, y| e.eval(x, y, 0.0)),
                &exp.subdomains.omega0,
                w.lambda,
            )
        }
    }
    .map_err(weights_err("weight profile d"))?;
    report.push(format!(
        "profile: ||d|| = {:.6e}, min over omega0 = {:.6e}, corners tolerated = {}",
        d.sup,
        d.min_omega0,
        d.tolerated_corners.len()
    ));

    let sw =
        singular_weights(&d, tg.delta(), tg.t0(), w.s_ladder[0], w.steps).map_err(weights_err("singular weights"))?;
    let inv = sw.invariants();
    if !inv.passed() {
        return Err(fail("alpha sign and maximum at t0", format!("{inv:?}")));
    }
    report.push(format!(
        "alpha: max = {:.6e}, max alpha(t) - alpha(t0) = {:.6e}",
        inv.max_alpha, inv.max_excess
    ));
    let dta = check_dt_alpha_bound(&sw);
    if !dta.passed() {
        return Err(fail(
            "time derivative of alpha",
            format!("max ratio {:.6e} at t = {:.4}", dta.max_ratio, dta.at_time),
        ));
    }
    report.push(format!("dt alpha bound: max ratio = {:.6e}", dta.max_ratio));

    let (beta, r) = match (w.beta, w.r) {
        (Some(b), Some(r)) => (b, r),
        _ => {
            let br = select_beta_r(&d, &exp.subdomains.omega_big, tg.delta0(), tg.dt())
                .map_err(weights_err("beta and r selection"))?;
            report.push(format!(
                "beta range ({:.6e}, {:.6e}) at r = {}",
                br.lower, br.upper, br.r
            ));
            (br.beta, br.r)
        }
    };
    let rw = regular_weights(&d, &exp.subdomains.omega_big, beta, r, tg.delta0(), tg.t0(), w.steps)
        .map_err(weights_err("separation of the regular weight"))?;
    report.push(format!(
        "regular weight: beta = {beta:.6e}, r = {r}, rho1 = {:.6e}, rho2 = {:.6e}, rho2/rho1 = {:.6e}",
        rw.rho1,
        rw.rho2,
        rw.margin()
    ));

    let mut rng = ChaCha8Rng::seed_from_u64(exp.config.measurement.seed);
    let tau0 = 2.0 * tg.delta0() / w.steps as f64;
    let mut worst: f64 = 0.0;
    for s in [1.0, 5.0, 10.0] {
        let wf: Vec<Vec<f64>> = (0..=w.steps).map(|_| random_field(grid, &mut rng)).collect();
        let rep = integral_estimate_check(&wf, &rw, grid, s).map_err(weights_err("integral estimate"))?;
        if !rep.passed(tau0) {
            return Err(fail(
                "integral estimate",
                format!("ratio {:.6e} exceeds delta0^2 (1 + 10 dt) at s = {s}", rep.ratio),
            ));
        }
        worst = worst.max(rep.ratio);
    }
    report.push(format!(
        "integral estimate: max ratio = {worst:.6e}, delta0^2 = {:.6e}",
        tg.delta0().powi(2)
    ));

    let samples: Vec<Vec<Vec<f64>>> = (0..w.samples)
        .map(|_| {
            let base = random_field(grid, &mut rng);
            let omega = rng.random_range(0.5..2.0);
            (0..=sw.steps())
                .map(|i| {
                    let t = i as f64 / sw.steps() as f64;
                    base.iter().map(|b| b * (omega * t).cos()).collect()
                })
                .collect()
        })
        .collect();
    let car = empirical_carleman_constant(
        &samples,
        &sw,
        grid,
        exp.problem.d1,
        w.b,
        &exp.subdomains.omega0,
        &w.s_ladder,
    )
    .map_err(weights_err("carleman exploration"))?;
    car.write_csv(BufWriter::new(fs::File::create(dir.join("carleman.csv"))?))?;
    if !car.finite() {
        return Err(fail("carleman exploration", "C(s) is not finite".into()));
    }
    report.push(format!(
        "carleman: C(s) = [{}], s0 = {}, non-increasing tail = {}",
        car.rows
            .iter()
            .map(|r| format!("{:.4e}", r.constant))
            .collect::<Vec<_>>()
            .join(", "),
        car.s0,
        car.tail_non_increasing()
    ));

    sw.write_csv(
        grid,
        BufWriter::new(fs::File::create(dir.join("singular_weights.csv"))?),
    )?;
    rw.write_csv(grid, BufWriter::new(fs::File::create(dir.join("regular_weights.csv"))?))?;
    write_dat(&dir.join("d.dat"), grid, &d.values)?;
    let text = report.join("\n") + "\n";
    fs::write(dir.join("weights_report.txt"), &text)?;
    write!(out, "{text}")?;
    writeln!(out, "all weight checks passed")?;
    Ok(())
}
