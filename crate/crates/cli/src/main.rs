//! `barrier-iqc`: batch certification, margin sweeps, simulation and the
//! property suite.
//!
//! Exit codes: 0 certified / all passed, 1 not certified / bracket error /
//! failed property, 2 unknown verdict or numerical failure, 3 configuration
//! or usage error.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod config;
mod report;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use barrier_iqc::analysis::{certify, prepare, run_cells, BisectOptions, CellOutcome, ControllerKind, MarginTarget};
use barrier_iqc::kyp::Verdict;
use barrier_iqc::multipliers::MultiplierClass;
use barrier_iqc::properties::{run_suite, SuiteOptions};
use barrier_iqc::simulate::{closed_loop_simulate, random_initial_states, ClosedLoop, ControlLaw, Trajectory, Uncertainty};
use clap::{Args, Parser, Subcommand};
use nalgebra::DVector;
use serde::Serialize;

use config::{CellConfig, ClassName, RunConfig, SimulationConfig, TargetName};
use report::{num, Band, Csv, Series};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{0}")]
    NotCertified(String),
    #[error("{0}")]
    Numerical(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::NotCertified(_) => 1,
            CliError::Numerical(_) | CliError::Io(_) => 2,
            CliError::Config(_) => 3,
        }
    }
}

#[derive(Parser)]
#[command(name = "barrier-iqc", version, about = "Robust-stability certification of barrier MPC with Zames-Falb multipliers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the KYP LMI once and report the verdict.
    Certify {
        #[command(flatten)]
        common: Common,
    },
    /// Bisect the stability margin for each table cell.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Swept parameter; defaults to `task.target` in the config.
        #[arg(long, value_enum)]
        target: Option<TargetName>,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Closed-loop simulation from several initial states.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Randomized property checks of the controller and multiplier theory.
    Suite {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        #[arg(long)]
        filter: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        workers: Option<usize>,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Output directory; defaults to `output.dir` or the working directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// FIR taps on each side of the multiplier.
    #[arg(long)]
    nzf: Option<usize>,
    #[arg(long, value_enum)]
    multiplier: Option<ClassName>,
}

impl Common {
    /// Loads the config and applies multiplier overrides; an override
    /// replaces any cell list with the single overridden cell.
    fn load(&self) -> Result<RunConfig, CliError> {
        let mut cfg = RunConfig::load(&self.config)?;
        if self.nzf.is_some() || self.multiplier.is_some() {
            if let Some(class) = self.multiplier {
                cfg.multiplier.class = class;
            }
            if let Some(n) = self.nzf {
                cfg.multiplier.nzf = n;
            }
            if let Some(task) = cfg.task.as_mut() {
                task.cells.clear();
            }
        }
        cfg.analysis()?;
        Ok(cfg)
    }

    fn out_dir(&self, cfg: &RunConfig) -> Result<PathBuf, CliError> {
        let dir = self.out.clone().or_else(|| cfg.output.dir.clone()).unwrap_or_else(|| PathBuf::from("."));
        ensure_dir(&dir)?;
        Ok(dir)
    }
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("cannot create {}: {e}", dir.display())))
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 3 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Certify { common } => cmd_certify(&common),
        Command::Sweep { common, target, workers } => cmd_sweep(&common, target, workers.unwrap_or_else(default_workers)),
        Command::Simulate { common, steps, seed } => cmd_simulate(&common, steps, seed),
        Command::Suite { seed, samples, filter, out, workers } => cmd_suite(seed, samples, filter, out, workers),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("barrier-iqc: {e}");
            ExitCode::from(e.code())
        }
    }
}

#[derive(Serialize)]
struct CertifyReport<'a> {
    config_sha256: String,
    controller: ControllerKind,
    multiplier: &'a config::MultiplierConfig,
    kappa: f64,
    r: f64,
    b: f64,
    verdict: Verdict,
    lambda: f64,
    lambda_backend: f64,
    multiplier_parameters: Vec<f64>,
    solver_status: String,
    iterations: usize,
    seconds: f64,
}

fn cmd_certify(common: &Common) -> Result<(), CliError> {
    let cfg = common.load()?;
    let out = common.out_dir(&cfg)?;
    let analysis = cfg.analysis()?;
    let rep = certify(&analysis).map_err(|e| CliError::Numerical(format!("certification failed: {e}")))?;
    let report = CertifyReport {
        config_sha256: cfg.hash(),
        controller: cfg.controller,
        multiplier: &cfg.multiplier,
        kappa: cfg.kappa,
        r: cfg.r,
        b: cfg.b,
        verdict: rep.verdict,
        lambda: rep.lambda,
        lambda_backend: rep.lambda_backend,
        multiplier_parameters: rep.params.iter().copied().collect(),
        solver_status: rep.status.clone(),
        iterations: rep.iterations,
        seconds: rep.seconds,
    };
    let text = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
    report::write_file(&out.join("certify.json"), &text)?;
    println!("verdict {:?}, lambda {:.6e}, {} iterations, {:.2} s", rep.verdict, rep.lambda, rep.iterations, rep.seconds);
    match rep.verdict {
        Verdict::Certified => Ok(()),
        Verdict::NotCertified => Err(CliError::NotCertified(format!("not certified (lambda {:.3e})", rep.lambda))),
        Verdict::Unknown => Err(CliError::Numerical(format!("verdict unknown: {}", rep.status))),
    }
}

fn class_label(class: MultiplierClass) -> &'static str {
    match class {
        MultiplierClass::StaticSector => ClassName::General.label(),
        MultiplierClass::ZfSiso => ClassName::Zf.label(),
        MultiplierClass::CzfDiagonal => ClassName::Czf.label(),
    }
}

fn controller_label(c: ControllerKind) -> &'static str {
    match c {
        ControllerKind::Barrier => "barrier",
        ControllerKind::Nominal => "nominal",
    }
}

fn cmd_sweep(common: &Common, target: Option<TargetName>, workers: usize) -> Result<(), CliError> {
    let cfg = common.load()?;
    let out = common.out_dir(&cfg)?;
    let task = cfg.task.clone().unwrap_or(config::TaskConfig { target: None, bracket: None, tol: 1e-3, scan_points: 0, cells: Vec::new() });
    let name = target.or(task.target).ok_or_else(|| CliError::Config("no sweep target: pass --target or set task.target".into()))?;
    let target = name.target();
    if target == MarginTarget::MinR && task.bracket.is_some_and(|[lo, _]| lo <= 0.0) {
        return Err(CliError::Config("the r bracket must be positive".into()));
    }
    let mut opts = BisectOptions::for_target(target);
    if let Some([lo, hi]) = task.bracket {
        (opts.lo, opts.hi) = (lo, hi);
    }
    opts.tol = task.tol;
    opts.scan_points = task.scan_points;
    let cells = if task.cells.is_empty() { vec![CellConfig { controller: cfg.controller, multiplier: cfg.multiplier }] } else { task.cells.clone() };
    let cells = cells.iter().map(CellConfig::cell).collect::<Result<Vec<_>, _>>()?;

    let results = run_cells(&cfg.analysis()?, target, &opts, &cells, workers).map_err(|e| CliError::Numerical(e.to_string()))?;
    let hash = cfg.hash();
    let label = target.label();
    let value_col = format!("{label}_margin");
    let mut table = Csv::new(
        &format!("sweep --target {label}"),
        &hash,
        &[(&value_col, "same unit as the swept parameter (dimensionless)"), ("probes", "count")],
        &["controller", "multiplier", "nzf", "outcome", &value_col, "probes", "message"].map(String::from),
    );
    let mut trace = Csv::new(
        &format!("sweep --target {label} (probes)"),
        &hash,
        &[(label, "dimensionless"), ("lambda", "LMI margin, dimensionless")],
        &["controller", "multiplier", "nzf", label, "verdict", "lambda"].map(String::from),
    );
    let mut series = Vec::new();
    let mut bracket_errors = Vec::new();
    let mut failures = Vec::new();
    for res in &results {
        let (ctrl, class, nzf) = (controller_label(res.cell.controller), class_label(res.cell.multiplier.class), res.cell.multiplier.n_plus);
        let cell_name = format!("{ctrl}/{class}/{nzf}");
        let (outcome, value) = match res.outcome {
            CellOutcome::Margin(v) => ("margin", v),
            CellOutcome::CertifiedBracket(v) => ("certified-bracket", v),
            CellOutcome::FailedBracket => ("failed-bracket", f64::NAN),
            CellOutcome::Error => ("error", f64::NAN),
        };
        match res.outcome {
            CellOutcome::Margin(v) => println!("{cell_name}: {label} margin {v:.6}"),
            CellOutcome::Error => failures.push(format!("{cell_name}: {}", res.message.clone().unwrap_or_default())),
            _ => bracket_errors.push(format!("{cell_name}: {}", res.message.clone().unwrap_or_default())),
        }
        let message = res.message.clone().unwrap_or_default().replace([',', '\n'], ";");
        table.row([ctrl.into(), class.into(), nzf.to_string(), outcome.into(), num(value), res.trace.len().to_string(), message]);
        let mut points: Vec<(f64, f64)> = res.trace.iter().map(|p| (p.value, p.lambda)).collect();
        points.sort_by(|a, b| a.0.total_cmp(&b.0));
        for p in &res.trace {
            trace.row([ctrl.into(), class.into(), nzf.to_string(), num(p.value), format!("{:?}", p.verdict), num(p.lambda)]);
        }
        series.push(Series { label: cell_name, points });
    }
    table.write(&out.join(format!("sweep-{label}.csv")))?;
    trace.write(&out.join(format!("sweep-{label}-probes.csv")))?;
    let svg = report::line_plot(&format!("LMI margin vs {label}"), label, "lambda", &series);
    report::write_file(&out.join(format!("sweep-{label}.svg")), &svg)?;
    if !failures.is_empty() {
        return Err(CliError::Numerical(failures.join("\n")));
    }
    if !bracket_errors.is_empty() {
        return Err(CliError::NotCertified(format!("bracket error\n{}", bracket_errors.join("\n"))));
    }
    Ok(())
}

fn cmd_simulate(common: &Common, steps: Option<usize>, seed: Option<u64>) -> Result<(), CliError> {
    let mut cfg = common.load()?;
    let mut sim = cfg.simulation.clone().unwrap_or_default();
    if let Some(steps) = steps {
        sim.steps = steps;
    }
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    cfg.simulation = Some(sim.clone());
    let out = common.out_dir(&cfg)?;
    let analysis = cfg.analysis()?;
    let prep = prepare(&analysis).map_err(|e| CliError::Numerical(e.to_string()))?;
    let law = sim.law.unwrap_or(match cfg.controller {
        ControllerKind::Barrier => ControlLaw::Barrier,
        ControllerKind::Nominal => ControlLaw::ConstrainedQp,
    });
    let loop_ = ClosedLoop { plant: &analysis.plant, kappa: analysis.kappa, observer: &prep.observer, problem: &prep.problem, law };
    let starts = initial_states(&sim, analysis.plant.n_states(), cfg.seed);
    let mut runs = Vec::with_capacity(starts.len());
    for (k, x0) in starts.iter().enumerate() {
        let delta = (sim.uncertainty && cfg.b > 0.0).then(|| Uncertainty::sample(cfg.b, cfg.seed.wrapping_add(k as u64 + 1)));
        let traj = closed_loop_simulate(&loop_, delta, x0, sim.steps).map_err(|e| CliError::Numerical(format!("run {k}: {e}")))?;
        println!("run {k}: max |x| {:.4e}, final |x| {:.4e}", traj.max_state_norm(), traj.final_state_norm());
        runs.push(traj);
    }
    write_trajectories(&cfg, &out, &runs, sim.steps)
}

fn initial_states(sim: &SimulationConfig, nx: usize, seed: u64) -> Vec<DVector<f64>> {
    if sim.x0.is_empty() {
        random_initial_states(nx, sim.count, sim.radius, seed)
    } else {
        sim.x0.iter().map(|x| DVector::from_column_slice(x)).collect()
    }
}

fn write_trajectories(cfg: &RunConfig, out: &Path, runs: &[Trajectory], steps: usize) -> Result<(), CliError> {
    let first = runs.first();
    let (nx, nu, ny) = first.map_or((0, 0, 0), |t| (t.x[0].len(), t.u.first().map_or(0, |v| v.len()), t.y.first().map_or(0, |v| v.len())));
    let mut columns = vec!["run".to_string(), "k".to_string()];
    columns.extend((1..=nx).map(|i| format!("x{i}")));
    columns.extend((1..=nx).map(|i| format!("xhat{i}")));
    columns.extend((1..=nu).map(|i| format!("u{i}")));
    columns.extend((1..=ny).map(|i| format!("y{i}")));
    let mut csv = Csv::new(
        "simulate",
        &cfg.hash(),
        &[("k", "sample index"), ("x, xhat", "plant state units"), ("u", "plant input units"), ("y", "plant output units")],
        &columns,
    );
    for (run, t) in runs.iter().enumerate() {
        for k in 0..steps {
            let mut row = vec![run.to_string(), k.to_string()];
            row.extend(t.x[k].iter().chain(t.xhat[k].iter()).chain(t.u[k].iter()).chain(t.y[k].iter()).map(|&v| num(v)));
            csv.row(row);
        }
    }
    csv.write(&out.join("simulate.csv"))?;
    let ks: Vec<f64> = (0..steps).map(|k| k as f64).collect();
    let bands: Vec<Band> = (0..ny)
        .map(|i| {
            let at = |k: usize| runs.iter().map(move |t| t.y[k][i]);
            Band {
                label: format!("y{}", i + 1),
                x: ks.clone(),
                lower: (0..steps).map(|k| at(k).fold(f64::INFINITY, f64::min)).collect(),
                upper: (0..steps).map(|k| at(k).fold(f64::NEG_INFINITY, f64::max)).collect(),
                centre: (0..steps).map(|k| at(k).sum::<f64>() / runs.len() as f64).collect(),
            }
        })
        .collect();
    let svg = report::band_plot(&format!("Output envelope over {} initial states", runs.len()), "k", "y", &bands);
    report::write_file(&out.join("simulate.svg"), &svg)
}

fn cmd_suite(seed: u64, samples: usize, filter: Option<String>, out: Option<PathBuf>, workers: Option<usize>) -> Result<(), CliError> {
    let out = out.unwrap_or_else(|| PathBuf::from("."));
    ensure_dir(&out)?;
    let options = SuiteOptions { seed, filter, samples, ..SuiteOptions::default() };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.unwrap_or_else(default_workers).max(1))
        .build()
        .map_err(|e| CliError::Numerical(format!("cannot start worker pool: {e}")))?;
    let report = pool.install(|| run_suite(&options));
    let text = report.to_text();
    print!("{text}");
    report::write_file(&out.join("suite.txt"), &text)?;
    report::write_file(&out.join("suite.json"), &(serde_json::to_string_pretty(&report).expect("report serializes") + "\n"))?;
    if report.all_passed() {
        Ok(())
    } else {
        Err(CliError::NotCertified("property suite has failing cases".into()))
    }
}
