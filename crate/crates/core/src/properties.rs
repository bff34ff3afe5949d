//! Seeded property battery over the whole toolbox.
//!
//! Each registered case names the invariants it exercises; [`INVARIANTS`]
//! lists every invariant the library promises, and [`uncovered_invariants`]
//! reports the ones without a case.

use std::sync::OnceLock;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::analysis::{build_lmi, certify, prepare, AnalysisConfig, ControllerKind, MarginTarget, TracePoint};
use crate::error::{Error, Result};
use crate::kyp::{kyp_frequency_margin, solve_kyp_lmi, InteriorPoint, LmiProblem, Verdict};
use crate::lti::{dare_kalman, interconnect, riccati_residual, schur_stable, Interconnection, StateSpace};
use crate::mpc::{relaxed_log, BarrierKind, BarrierProblem, ConstraintSet, NEWTON_TOL};
use crate::multipliers::{
    pi_frequency, psi_realize, static_multiplier, iqc_time_sum, Multiplier, MultiplierClass, MultiplierSpec, MultiplierStructure, EPS_POS,
};
use crate::slope::{compute_m, m_grid_oracle};

/// Every invariant promised by the library, as `(module, id)`. A case covers
/// an invariant of its own module by id, or of another module as `module/id`.
pub const INVARIANTS: &[(&str, &str)] = &[
    ("lti", "series-frequency-product"),
    ("lti", "riccati-stationarity"),
    ("lti", "conjugate-symmetry"),
    ("mpc", "sector"),
    ("mpc", "slope"),
    ("mpc", "cyclic-monotone"),
    ("mpc", "relaxed-splice"),
    ("mpc", "hard-feasibility"),
    ("mpc", "recentered"),
    ("mpc", "psi-phi-equivalence"),
    ("mpc", "parallel-decomposition"),
    ("slope", "m-below-oracle"),
    ("slope", "hessian-lower-bound"),
    ("slope", "h-tilde-exact"),
    ("multipliers", "factorization"),
    ("multipliers", "hermitian"),
    ("multipliers", "static-degeneration"),
    ("multipliers", "time-domain-iqc"),
    ("multipliers", "hyperdominance"),
    ("kyp", "frequency-consistency"),
    ("kyp", "homogeneity"),
    ("kyp", "monotone-certification"),
    ("analysis", "verdict-monotone"),
    ("analysis", "class-ordering"),
    ("analysis", "barrier-dominates-nominal"),
];

#[derive(Debug, Clone)]
pub struct SuiteOptions {
    pub seed: u64,
    /// Runs only cases whose name contains this substring.
    pub filter: Option<String>,
    pub samples: usize,
    /// Multiplies the certified `m` (fault injection; 1 for a normal run).
    pub m_inflation: f64,
    /// Inclusive range of cycle lengths for the cyclic-monotone case.
    pub cycle_lengths: (usize, usize),
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self { seed: 0, filter: None, samples: 1000, m_inflation: 1.0, cycle_lengths: (2, 6) }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CaseReport {
    pub name: String,
    pub module: String,
    pub covers: Vec<String>,
    pub tolerance: f64,
    pub checks: usize,
    /// Largest measured excess; a check fails when its excess exceeds the tolerance.
    pub worst: f64,
    pub passed: bool,
    pub counterexample: Option<String>,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub seed: u64,
    pub samples: usize,
    pub m_inflation: f64,
    pub cases: Vec<CaseReport>,
    pub uncovered: Vec<String>,
}

impl SuiteReport {
    pub fn all_passed(&self) -> bool {
        self.uncovered.is_empty() && self.cases.iter().all(|c| c.passed)
    }

    pub fn case(&self, name: &str) -> Option<&CaseReport> {
        self.cases.iter().find(|c| c.name == name)
    }

    /// One line per case plus a summary line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for c in &self.cases {
            out.push_str(&format!(
                "{} {:<26} [{}] checks={} worst={:.3e} tol={:.1e} ({:.2}s)\n",
                if c.passed { "PASS" } else { "FAIL" },
                c.name,
                c.module,
                c.checks,
                c.worst,
                c.tolerance,
                c.seconds
            ));
            if let Some(ce) = &c.counterexample {
                out.push_str(&format!("     counterexample: {ce}\n"));
            }
        }
        for id in &self.uncovered {
            out.push_str(&format!("FAIL meta: invariant {id} has no registered case\n"));
        }
        let passed = self.cases.iter().filter(|c| c.passed).count();
        out.push_str(&format!("summary: {passed}/{} cases passed, seed {}, {} samples\n", self.cases.len(), self.seed, self.samples));
        out
    }
}

/// Accumulates checks of the form `excess ≤ tolerance`.
pub struct Tracker {
    tolerance: f64,
    checks: usize,
    worst: f64,
    counterexample: Option<String>,
}

impl Tracker {
    fn new(tolerance: f64) -> Self {
        Self { tolerance, checks: 0, worst: f64::NEG_INFINITY, counterexample: None }
    }

    fn record(&mut self, excess: f64, describe: impl FnOnce() -> String) {
        self.checks += 1;
        if excess.is_nan() {
            self.worst = f64::NAN;
        } else if !self.worst.is_nan() {
            self.worst = self.worst.max(excess);
        }
        if (excess.is_nan() || excess > self.tolerance) && self.counterexample.is_none() {
            self.counterexample = Some(format!("excess {excess:.3e}: {}", describe()));
        }
    }

    fn fail(&mut self, msg: String) {
        self.checks += 1;
        if self.counterexample.is_none() {
            self.counterexample = Some(msg);
        }
    }
}

type CaseFn = fn(&Context, &mut Tracker, &mut ChaCha8Rng) -> Result<()>;

pub struct PropertyCase {
    pub name: &'static str,
    pub module: &'static str,
    pub covers: &'static [&'static str],
    pub tolerance: f64,
    run: CaseFn,
}

/// Controller problem together with its (possibly inflated) slope data.
pub struct Fixture {
    pub name: &'static str,
    pub problem: BarrierProblem,
    pub m: f64,
    pub h_tilde: DMatrix<f64>,
}

pub struct Context {
    pub options: SuiteOptions,
    pub fixtures: Vec<Fixture>,
    grid: OnceLock<std::result::Result<KappaGrid, String>>,
}

const KAPPA_GRID: [f64; 7] = [1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0];

/// Verdicts on a fixed gain grid for several controller / multiplier pairs.
struct KappaGrid {
    static_barrier: Vec<Verdict>,
    zf_barrier: Vec<Verdict>,
    czf_barrier: Vec<Verdict>,
    czf_nominal: Vec<Verdict>,
}

fn fixed_h3() -> DMatrix<f64> {
    DMatrix::from_row_slice(3, 3, &[2.0, 0.3, -0.2, 0.3, 1.5, 0.1, -0.2, 0.1, 1.2])
}

fn build_fixtures(m_inflation: f64) -> Result<Vec<Fixture>> {
    let example = prepare(&AnalysisConfig::second_order_example())?;
    let h2 = example.problem.h().clone();
    let box2 = example.problem.constraints().clone();
    let box3 = ConstraintSet::boxed(&[-0.5, -1.0, -0.3], &[1.0, 0.4, 0.8])?;
    let staged = ConstraintSet::staged(vec![
        (DMatrix::from_row_slice(2, 3, &[1.0, -1.0, 0.0, -1.0, 1.0, 0.0]), DVector::from_vec(vec![0.6, 0.4])),
        (DMatrix::from_row_slice(2, 3, &[1.0, 1.0, 0.0, -1.0, -1.0, 0.0]), DVector::from_vec(vec![0.8, 0.5])),
        (DMatrix::from_row_slice(2, 3, &[0.0, 0.0, 1.0, 0.0, 0.0, -1.0]), DVector::from_vec(vec![1.0, 0.7])),
    ])?;
    let problems = vec![
        ("example-box", example.problem.clone()),
        ("weighted-box3", BarrierProblem::new(fixed_h3(), DMatrix::zeros(3, 1), box3.clone(), BarrierKind::weighted_for_pairs(&box3)?, 0.5)?),
        ("relaxed-box", BarrierProblem::new(h2, DMatrix::zeros(2, 1), box2.clone(), BarrierKind::relaxed_default(&box2), 0.8)?),
        ("staged-slabs", BarrierProblem::new(fixed_h3(), DMatrix::zeros(3, 1), staged, BarrierKind::GradientRecentered, 1.0)?),
    ];
    problems
        .into_iter()
        .map(|(name, problem)| {
            let m = compute_m(&problem)?.m * m_inflation;
            let n = problem.n_inputs();
            let h_tilde = problem.h() + DMatrix::identity(n, n) * (problem.mu() * m);
            Ok(Fixture { name, problem, m, h_tilde })
        })
        .collect()
}

impl Context {
    fn kappa_grid(&self) -> std::result::Result<&KappaGrid, String> {
        self.grid
            .get_or_init(|| {
                let run = |controller: ControllerKind, class: MultiplierClass, n: usize| -> std::result::Result<Vec<Verdict>, String> {
                    KAPPA_GRID
                        .par_iter()
                        .map(|&kappa| {
                            let mut cfg = AnalysisConfig::second_order_example();
                            cfg.kappa = kappa;
                            cfg.controller = controller;
                            cfg.multiplier = MultiplierSpec::symmetric(class, n).map_err(|e| e.to_string())?;
                            Ok(certify(&cfg).map(|r| r.verdict).unwrap_or(Verdict::Unknown))
                        })
                        .collect()
                };
                Ok(KappaGrid {
                    static_barrier: run(ControllerKind::Barrier, MultiplierClass::StaticSector, 0)?,
                    zf_barrier: run(ControllerKind::Barrier, MultiplierClass::ZfSiso, 1)?,
                    czf_barrier: run(ControllerKind::Barrier, MultiplierClass::CzfDiagonal, 1)?,
                    czf_nominal: run(ControllerKind::Nominal, MultiplierClass::CzfDiagonal, 1)?,
                })
            })
            .as_ref()
            .map_err(Clone::clone)
    }
}

fn sample_ball(rng: &mut ChaCha8Rng, n: usize, radius: f64) -> DVector<f64> {
    loop {
        let v = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        if v.norm() <= 1.0 {
            return v * radius;
        }
    }
}

fn theta_radius(p: &BarrierProblem) -> f64 {
    10.0 * p.constraints().w().amax()
}

fn fmt_vec(v: &DVector<f64>) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.6e}")).collect();
    format!("[{}]", parts.join(", "))
}

/// Interior point by rejection from a cube around the origin (any point for relaxed barriers).
fn sample_interior(rng: &mut ChaCha8Rng, p: &BarrierProblem) -> DVector<f64> {
    let half = 2.0 * p.constraints().w().amax();
    loop {
        let u = DVector::from_fn(p.n_inputs(), |_, _| rng.gen_range(-half..half));
        if !p.is_hard() || p.constraints().slacks(&u).min() > 1e-9 {
            return u;
        }
    }
}

fn random_symmetric(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    (&a + a.transpose()) * 0.5
}

fn random_stable(rng: &mut ChaCha8Rng, nx: usize, nu: usize, ny: usize) -> Result<StateSpace> {
    let mut a = DMatrix::from_fn(nx, nx, |_, _| rng.gen_range(-1.0..1.0));
    let rho = crate::lti::spectral_radius(&a)?;
    if rho > 0.0 {
        a *= rng.gen_range(0.2..0.9) / rho;
    }
    let b = DMatrix::from_fn(nx, nu, |_, _| rng.gen_range(-1.0..1.0));
    let c = DMatrix::from_fn(ny, nx, |_, _| rng.gen_range(-1.0..1.0));
    let d = DMatrix::from_fn(ny, nu, |_, _| rng.gen_range(-1.0..1.0));
    StateSpace::new(a, b, c, d)
}

fn random_params(rng: &mut ChaCha8Rng, spec: &MultiplierSpec, groups: usize) -> DVector<f64> {
    let mut p = DVector::zeros(spec.n_taps() * groups);
    for j in spec.taps() {
        for g in 0..groups {
            let i = Multiplier::param_index(spec, groups, j, g);
            p[i] = if j == 0 { rng.gen_range(EPS_POS..1.0) } else if rng.gen_bool(0.2) { 0.0 } else { rng.gen_range(0.0..1.0) };
        }
    }
    p
}

fn complex_gap(a: &DMatrix<Complex64>, b: &DMatrix<Complex64>) -> f64 {
    (a - b).iter().map(|z| z.norm()).fold(0.0, f64::max)
}

// ---- lti ----

fn case_series(_: &Context, t: &mut Tracker, rng: &mut ChaCha8Rng) -> Result<()> {
    for _ in 0..20 {
        let g1 = random_stable(rng, 3, 2, 2)?;
        let g2 = random_stable(rng, 2, 2, 1)?;
        let s = interconnect(Interconnection::Series, &[g1.clone(), g2.clone()])?;
        for k in 0..64 {
            let w = std::f64::consts::PI * k as f64 / 63.0;
            let expect = g2.freq_response(w)? * g1.freq_response(w)?;
            let got = s.freq_response(w)?;
            let scale = expect.iter().map(|z| z.norm()).fold(1.0, f64::max);
            t.record(complex_gap(&got, &expect) / scale, || format!("omega {w:.4}"));
        }
    }
    Ok(())
}

fn case_conjugate(_: &Context, t: &mut Tracker, rng: &mut ChaCha8Rng) -> Result<()> {
    for _ in 0..20 {
        let g = random_stable(rng, 3, 2, 2)?;
        for k in 1..64 {
            let w = std::f64::consts::PI * k as f64 / 64.0;
            let pos = g.freq_response(w)?;
            let neg = g.freq_response(-w)?;
            t.record(complex_gap(&neg, &pos.map(|z| z.conj())), || format!("omega {w:.4}"));
        }
    }
    Ok(())
}

fn case_riccati(ctx: &Context, t: &mut Tracker, rng: &mut ChaCha8Rng) -> Result<()> {
    let cfg = AnalysisConfig::second_order_example();
    let mut systems = vec![(cfg.plant.a.clone(), cfg.plant.c.clone(), cfg.plant.b.clone())];
    for _ in 0..10 {
        let g = random_stable(rng, 3, 1, 1)?;
        systems.push((g.a, g.c, g.b));
    }
    let _ = ctx;
    for (a, c, b) in systems {
        let qn = DMatrix::identity(a.nrows(), a.nrows());
        let rn = DMatrix::identity(c.nrows(), c.nrows());
        let obs = dare_kalman(&a, &c, &b, &qn, &rn)?;
        let res = riccati_residual(&a, &c, &qn, &rn, &obs.covariance);
        t.record(res, || format!("A = {a}"));
        if !schur_stable(obs.state_matrix())? {
            t.fail("observer matrix A − ALC is not Schur stable".into());
        }
    }
    Ok(())
}

// ---- mpc ----

fn case_sector(ctx: &Context, t: &mut Tracker, rng: &mut ChaCha8Rng) -> Result<()> {
    for f in &ctx.fixtures {
        let p = &f.problem;
        for _ in 0..ctx.options.samples {
            let theta = sample_ball(rng, p.n_inputs(), theta_radius(p));
            let u = p.phi_solve(&theta)?;
            let v = u.dot(&(&f.h_tilde * &u)) - u.dot(&theta);
            t.record(v, || format!("{}: theta {}", f.name, fmt_vec(&theta)));
        }
    }
    Ok(())
}

fn case_slope(ctx: &Context, t: &mut Tracker, rng: &mut ChaCha8Rng) -> Result<()> {
    for f in &ctx.fixtures {
        let p = &f.problem;
        let n = p.n_inputs();
        for k in 0..ctx.options.samples {
            // Half the pairs are global, half are close pairs around an interior point.
            let (tx, ty) = if k % 2 == 0 {
                (sample_ball(rng, n, theta_radius(p)), sample_ball(rng, n, theta_radius(p)))
            } else {
                let u = sample_interior(rng, p);
                let d = sample_ball(rng, n, 1e-2 * p.constraints().w().amin());
                let v = &u + d;
                if p.is_hard() && p.constraints().slacks(&v).min() <= 1e-9 {
                    continue;
                }
                let map = |u: &DVector<f64>| -> Result<DVector<f64>> {
                    let (_, g, _) = p.barrier_eval(u)?;
                    Ok(p.h() * u + g * p.mu())
                };
                (map(&u)?, map(&v)?)
            };
            let ux = p.phi_solve(&tx)?;
            let uy = p.phi_solve(&ty)?;
            let du = &ux - &uy;
            let v = du.dot(&(&f.h_tilde * &du - (&tx - &ty)));
            t.record(v, || format!("{}: theta_x {} theta_y {}", f.name, fmt_vec(&tx), fmt_vec(&ty)));
        }
    }
    Ok(())
}

fn case_cyclic(ctx: &Context, t: &mut Tracker, rng: &mut ChaCha8Rng) -> Result<()> {
    let (lo, hi) = ctx.options.cycle_lengths;
    for f in &ctx.fixtures {
        let p = &f.problem;
        for _ in 0..ctx.options.samples {
            let len = rng.gen_range(lo..=hi.max(lo));
            let thetas: Vec<DVector<f64>> = (0..len).map(|_| sample_ball(rng, p.n_inputs(), theta_radius(p))).collect();
            let mut sum = 0.0;
            for k in 0..len {
                let u = p.phi_solve(&thetas[k])?;
                sum += u.dot(&(&thetas[k] - &thetas[(k + 1) % len]));
            }
            t.record(-sum, || format!("{}: cycle of length {len} starting at {}", f.name, fmt_vec(&thetas[0])));
        }
    }
    Ok(())
}

fn case_splice(_: &Context, t: &mut Tracker, rng: &mut ChaCha8Rng) -> Result<()> {
    for _ in 0..200 {
        let delta: f64 = 10f64.powf(rng.gen_range(-3.0..1.0));
        let (v, d1, d2) = relaxed_log(delta, delta);
        let exact = (-delta.ln(), -1.0 / delta, 1.0 / (delta * delta));
        for (got, want) in [(v, exact.0), (d1, exact.1), (d2, exact.2)] {
            t.record((got - want).abs() / want.abs().max(1.0), || format!("delta {delta:.6e}"));
        }
        // C² matching leaves only a third-order gap just inside the splice point
        let eps = 1e-4 * delta;
        let (q, _, _) = relaxed_log(delta - eps, delta);
        let gap = (q + (delta - eps).ln()).abs() - (eps / delta).powi(3) / 3.0;
        t.record(gap.abs() / exact.0.abs().max(1.0), || format!("third-order gap at delta {delta:.6e}"));
    }
    Ok(())
}

fn case_feasibility(ctx: &Context, t: &mut Tracker, rng: &mut ChaCha8Rng) -> Result<()> {
    for f in ctx.fixtures.iter().filter(|f| f.problem.is_hard()) {
        let p = &f.problem;
        for _ in 0..ctx.options.samples {
            let theta = sample_ball(rng, p.n_inputs(), theta_radius(p));
            let u = p.phi_solve(&theta)?;
            let worst_row = -p.constraints().slacks(&u).min();
            t.record(worst_row, || format!("{}: theta {}", f.name, fmt_vec(&theta)));
            let res = p.phi_residual(&theta, &u)?;
            t.record(res - NEWTON_TOL, || format!("{}: stationarity residual at theta {}", f.name, fmt_vec(&theta)));
        }
    }
    Ok(())
}

fn case_recentered(ctx: &Context, t: &mut Tracker, _: &mut ChaCha8Rng) -> Result<()> {
    for f in &ctx.fixtures {
        let (b, g, h) = f.problem.barrier_eval(&DVector::zeros(f.problem.n_inputs()))?;
        t.record(b.abs().max(g.amax()), || format!("{}: B(0) = {b:e}", f.name));
        if h.clone().cholesky().is_none() {
            t.fail(format!("{}: barrier Hessian at 0 is not positive definite", f.name));
        }
        let u = f.problem.phi_solve(&DVector::zeros(f.problem.n_inputs()))?;
        t.record(u.amax(), || format!("{}: phi(0) = {}", f.name, fmt_vec(&u)));
    }
    Ok(())
}

/// The equivalence is a KKT identity: it uses the quadratic weight `H` of `φ`.
fn case_psi_phi(ctx: &Context, t: &mut Tracker, rng: &mut ChaCha8Rng) -> Result<()> {
    for f in &ctx.fixtures {
        let p = &f.problem;
        for _ in 0..ctx.options.samples {
            let theta = sample_ball(rng, p.n_inputs(), theta_radius(p));
            let u = p.phi_solve(&theta)?;
            let theta_prime = p.psi_input(&theta, &u, p.h());
            let v = p.psi_solve(&theta_prime)?;
            t.record((&u - &v).amax(), || format!("{}: theta {}", f.name, fmt_vec(&theta)));
        }
    }
    Ok(())
}

fn case_parallel(ctx: &Context, t: &mut Tracker, rng: &mut ChaCha8Rng) -> Result<()> {
    for f in ctx.fixtures.iter().filter(|f| f.problem.constraints().is_separable()) {
        let p = &f.problem;
        for _ in 0..ctx.options.samples {
            let theta = sample_ball(rng, p.n_inputs(), theta_radius(p));
            let a = p.psi_solve(&theta)?;
            let b = p.parallel_decompose_solve(&theta)?;
            t.record((&a - &b).amax(), || format!("{}: theta' {}", f.name, fmt_vec(&theta)));
        }
    }
    Ok(())
}

// ---- slope ----

fn box_problem(lower: &[f64], upper: &[f64], kind_weighted: bool, mu: f64) -> Result<BarrierProblem> {
    let set = ConstraintSet::boxed(lower, upper)?;
    let n = lower.len();
    let kind = if kind_weighted { BarrierKind::weighted_for_pairs(&set)? } else { BarrierKind::GradientRecentered };
    BarrierProblem::new(DMatrix::identity(n, n), DMatrix::zeros(n, 1), set, kind, mu)
}

fn case_m_oracle(ctx: &Context, t: &mut Tracker, rng: &mut ChaCha8Rng) -> Result<()> {
    let mut problems: Vec<BarrierProblem> =
        ctx.fixtures.iter().filter(|f| f.problem.constraints().box_bounds().is_some()).map(|f| f.problem.clone()).collect();
    for k in 0..9 {
        let n = 1 + k % 3;
        let lower: Vec<f64> = (0..n).map(|_| -rng.gen_range(0.1..2.0)).collect();
        let upper: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..2.0)).collect();
        problems.push(box_problem(&lower, &upper, k % 2 == 1, 1.0)?);
    }
    for p in problems.iter().filter(|p| p.n_inputs() <= 3) {
        let bounds = p.constraints().box_bounds().expect("box sets only");
        let width = bounds.0.iter().zip(&bounds.1).map(|(l, u)| u - l).fold(0.0, f64::max);
        let resolution = width / if p.n_inputs() == 3 { 60.0 } else { 400.0 };
        let m = compute_m(p)?.m * ctx.options.m_inflation;
        let grid = m_grid_oracle(p, resolution)?;
        t.record((m - grid) / grid.max(1e-12), || format!("box {bounds:?}: m {m:.6e} grid {grid:.6e}"));
    }
    Ok(())
}

fn case_hessian_bound(ctx: &Context, t: &mut Tracker, rng: &mut ChaCha8Rng) -> Result<()> {
    for f in &ctx.fixtures {
        let p = &f.problem;
        for _ in 0..10_000 {
            let u = sample_interior(rng, p);
            let (_, _, h) = p.barrier_eval(&u)?;
            let low = h.symmetric_eigenvalues().min();
            t.record(f.m - low, || format!("{}: u {}", f.name, fmt_vec(&u)));
        }
    }
    Ok(())
}

fn case_h_tilde(ctx: &Context, t: &mut Tracker, _: &mut ChaCha8Rng) -> Result<()> {
    for f in &ctx.fixtures {
        let cert = compute_m(&f.problem)?;
        let n = f.problem.n_inputs();
        let expect = f.problem.h() + DMatrix::identity(n, n) * (f.problem.mu() * cert.m);
        t.record((&cert.h_tilde - expect).amax(), || f.name.to_string());
    }
    Ok(())
}

// ---- multipliers ----

fn multiplier_samples(ctx: &Context, rng: &mut ChaCha8Rng) -> Result<Vec<(&'static str, Multiplier, DMatrix<f64>)>> {
    let mut out = Vec::new();
    for f in &ctx.fixtures {
        let set = f.problem.constraints();
        for (class, nm, np) in [(MultiplierClass::StaticSector, 0, 0), (MultiplierClass::ZfSiso, 1, 2), (MultiplierClass::CzfDiagonal, 2, 1)] {
            let spec = MultiplierSpec::new(class, nm, np)?;
            let structure = MultiplierStructure::for_class(class, set)?;
            for _ in 0..4 {
                let params = random_params(rng, &spec, structure.n_groups());
                out.push((f.name, Multiplier::new(spec, structure.clone(), params)?, f.h_tilde.clone()));
            }
        }
    }
    Ok(out)
}

fn case_factorization(ctx: &Context, t: &mut Tracker, rng: &mut ChaCha8Rng) -> Result<()> {
    for (name, mult, ht) in multiplier_samples(ctx, rng)? {
        let n = mult.structure.n_channels();
        let k = crate::multipliers::assemble_k(&mult, &ht)?.map(Complex64::from);
        let psi = psi_realize(n, mult.spec.order());
        for i in 0..64 {
            let w = std::f64::consts::PI * i as f64 / 63.0;
            let pw = psi.freq_response(w)?;
            let lhs = pw.adjoint() * &k * &pw;
            let rhs = pi_frequency(&mult, &ht, w)?;
            t.record(complex_gap(&lhs, &rhs), || format!("{name} {:?} omega {w:.4}", mult.spec));
        }
    }
    Ok(())
}

fn case_hermitian(ctx: &Context, t: &mut Tracker, rng: &mut ChaCha8Rng) -> Result<()> {
    for (name, mult, ht) in multiplier_samples(ctx, rng)? {
        for i in 0..64 {
            let w = std::f64::consts::PI * i as f64 / 63.0;
            let pi = pi_frequency(&mult, &ht, w)?;
            t.record(complex_gap(&pi, &pi.adjoint()), || format!("{name} {:?} omega {w:.4}", mult.spec));
        }
    }
    Ok(())
}

fn case_static(ctx: &Context, t: &mut Tracker, rng: &mut ChaCha8Rng) -> Result<()> {
    for f in &ctx.fixtures {
        for class in [MultiplierClass::ZfSiso, MultiplierClass::CzfDiagonal] {
            let spec = MultiplierSpec::symmetric(class, 2)?;
            let structure = MultiplierStructure::for_class(class, f.problem.constraints())?;
            let groups = structure.n_groups();
            let r0 = rng.gen_range(0.1..2.0);
            let mut params = DVector::zeros(spec.n_taps() * groups);
            for g in 0..groups {
                params[Multiplier::param_index(&spec, groups, 0, g)] = r0;
            }
            let mult = Multiplier::new(spec, structure, params)?;
            let expect = (static_multiplier(&f.h_tilde)? * r0).map(Complex64::from);
            for i in 0..16 {
                let w = std::f64::consts::PI * i as f64 / 15.0;
                t.record(complex_gap(&pi_frequency(&mult, &f.h_tilde, w)?, &expect), || format!("{} {class:?}", f.name));
            }
        }
    }
    Ok(())
}

fn case_iqc(ctx: &Context, t: &mut Tracker, rng: &mut ChaCha8Rng) -> Result<()> {
    for f in &ctx.fixtures {
        let p = &f.problem;
        let spec = MultiplierSpec::symmetric(MultiplierClass::CzfDiagonal, 3)?;
        let structure = MultiplierStructure::for_class(spec.class, p.constraints())?;
        for _ in 0..5 {
            let mult = Multiplier::new(spec, structure.clone(), random_params(rng, &spec, structure.n_groups()))?;
            let len = 200;
            let theta: Vec<DVector<f64>> = (0..len).map(|_| sample_ball(rng, p.n_inputs(), theta_radius(p))).collect();
            let u: Vec<DVector<f64>> = theta.iter().map(|th| p.phi_solve(th)).collect::<Result<_>>()?;
            let sum = iqc_time_sum(&mult, &f.h_tilde, &theta, &u)?;
            let scale = theta.iter().map(|v| v.norm_squared()).sum::<f64>().max(1.0);
            t.record(-sum / scale, || format!("{}: sequence of length {len}, sum {sum:.6e}", f.name));
        }
    }
    Ok(())
}

fn case_dominance(ctx: &Context, t: &mut Tracker, rng: &mut ChaCha8Rng) -> Result<()> {
    // Coordinate dominance applies where the channel groups are coordinate projectors.
    for (name, mult, _) in multiplier_samples(ctx, rng)? {
        let diagonal = mult.structure.projectors().iter().all(|p| (p - DMatrix::from_diagonal(&p.diagonal())).amax() == 0.0);
        if !diagonal {
            continue;
        }
        t.record(-mult.dominance_margin(), || format!("{name} {:?} params {}", mult.spec, fmt_vec(&mult.params)));
    }
    Ok(())
}

// ---- kyp / analysis ----

fn kyp_configs() -> Vec<AnalysisConfig> {
    let mut out = Vec::new();
    for (class, n) in [(MultiplierClass::StaticSector, 0), (MultiplierClass::ZfSiso, 1), (MultiplierClass::CzfDiagonal, 1)] {
        for kappa in [1.0, 2.0] {
            let mut cfg = AnalysisConfig::second_order_example();
            cfg.kappa = kappa;
            cfg.multiplier = MultiplierSpec::symmetric(class, n).expect("valid spec");
            out.push(cfg);
        }
    }
    let mut with_b = AnalysisConfig::second_order_example();
    with_b.b = 0.25;
    out.push(with_b);
    out
}

fn case_kyp_frequency(_: &Context, t: &mut Tracker, _: &mut ChaCha8Rng) -> Result<()> {
    let backend = InteriorPoint::default();
    for cfg in kyp_configs() {
        let prep = prepare(&cfg)?;
        let lmi = build_lmi(&cfg, &prep)?;
        let report = solve_kyp_lmi(&lmi, &backend)?;
        if report.feasible() {
            let worst = kyp_frequency_margin(&lmi, &report, 512)?;
            t.record(worst + report.lambda / 2.0, || format!("kappa {} b {} {:?}", cfg.kappa, cfg.b, cfg.multiplier));
        }
    }
    Ok(())
}

fn case_homogeneity(_: &Context, t: &mut Tracker, rng: &mut ChaCha8Rng) -> Result<()> {
    let cfg = AnalysisConfig::second_order_example();
    let prep = prepare(&cfg)?;
    let lmi = build_lmi(&cfg, &prep)?;
    let nx = lmi.g_psi.n_states();
    for _ in 0..20 {
        let y: Vec<f64> = (0..lmi.k.terms.len()).map(|_| rng.gen_range(0.0..1.0)).collect();
        let k = lmi.k.eval(&y);
        let p = random_symmetric(rng, nx);
        let alpha = rng.gen_range(0.1..10.0);
        let eval = |scale: f64| -> Result<DMatrix<f64>> {
            let fixed = crate::kyp::KParam { constant: &k * scale, terms: vec![], names: vec![], lower: vec![], normalized: vec![] };
            let prob = LmiProblem::new(lmi.g_psi.clone(), fixed)?;
            Ok(prob.to_program().evaluate(&[0.0], Some(&(&p * scale))))
        };
        let base = eval(1.0)?;
        let scaled = eval(alpha)?;
        t.record((scaled - base.clone() * alpha).amax() / (alpha * base.amax().max(1.0)), || format!("alpha {alpha:.4}"));
    }
    Ok(())
}

fn grid_trace(verdicts: &[Verdict]) -> Vec<TracePoint> {
    KAPPA_GRID
        .iter()
        .zip(verdicts)
        .filter(|(_, v)| **v != Verdict::Unknown)
        .map(|(&value, &verdict)| TracePoint { value, verdict, lambda: f64::NAN })
        .collect()
}

fn case_monotone(ctx: &Context, t: &mut Tracker, _: &mut ChaCha8Rng) -> Result<()> {
    let grid = ctx.kappa_grid().map_err(Error::Solver)?;
    for (label, v) in [("static", &grid.static_barrier), ("zf", &grid.zf_barrier), ("czf", &grid.czf_barrier), ("nominal czf", &grid.czf_nominal)] {
        let verdict = crate::analysis::check_monotone(&grid_trace(v), MarginTarget::MaxKappa);
        t.record(if verdict.is_ok() { 0.0 } else { 1.0 }, || format!("{label}: {}", verdict.unwrap_err()));
    }
    Ok(())
}

/// `weaker[i]` certified must imply `stronger[i]` certified.
fn implication(t: &mut Tracker, weaker: &[Verdict], stronger: &[Verdict], label: &str) {
    for (i, (a, b)) in weaker.iter().zip(stronger).enumerate() {
        let broken = *a == Verdict::Certified && *b == Verdict::NotCertified;
        t.record(if broken { 1.0 } else { 0.0 }, || format!("{label} at kappa {}", KAPPA_GRID[i]));
    }
}

fn case_ordering(ctx: &Context, t: &mut Tracker, _: &mut ChaCha8Rng) -> Result<()> {
    let grid = ctx.kappa_grid().map_err(Error::Solver)?;
    implication(t, &grid.static_barrier, &grid.zf_barrier, "static certified but ZF not");
    implication(t, &grid.zf_barrier, &grid.czf_barrier, "ZF certified but C-ZF not");
    Ok(())
}

fn case_barrier_nominal(ctx: &Context, t: &mut Tracker, _: &mut ChaCha8Rng) -> Result<()> {
    let grid = ctx.kappa_grid().map_err(Error::Solver)?;
    implication(t, &grid.czf_nominal, &grid.czf_barrier, "nominal certified but barrier not");
    Ok(())
}

pub fn registry() -> Vec<PropertyCase> {
    macro_rules! case {
        ($name:expr, $module:expr, [$($cov:expr),*], $tol:expr, $f:expr) => {
            PropertyCase { name: $name, module: $module, covers: &[$($cov),*], tolerance: $tol, run: $f }
        };
    }
    vec![
        case!("series-frequency", "lti", ["series-frequency-product"], 1e-10, case_series),
        case!("conjugate-symmetry", "lti", ["conjugate-symmetry"], 1e-12, case_conjugate),
        case!("riccati", "lti", ["riccati-stationarity"], 1e-8, case_riccati),
        case!("sector", "mpc", ["sector"], 1e-7, case_sector),
        case!("slope", "mpc", ["slope"], 1e-7, case_slope),
        case!("cyclic", "mpc", ["cyclic-monotone"], 1e-7, case_cyclic),
        case!("relaxed-splice", "mpc", ["relaxed-splice"], 1e-10, case_splice),
        case!("hard-feasibility", "mpc", ["hard-feasibility"], 0.0, case_feasibility),
        case!("recentered", "mpc", ["recentered"], 1e-10, case_recentered),
        case!("psi-phi", "mpc", ["psi-phi-equivalence"], 1e-8, case_psi_phi),
        case!("parallel-decomposition", "mpc", ["parallel-decomposition"], 1e-8, case_parallel),
        case!("m-oracle", "slope", ["m-below-oracle"], 1e-9, case_m_oracle),
        case!("hessian-bound", "slope", ["hessian-lower-bound"], 1e-8, case_hessian_bound),
        case!("h-tilde", "slope", ["h-tilde-exact"], 0.0, case_h_tilde),
        case!("factorization", "multipliers", ["factorization"], 1e-8, case_factorization),
        case!("hermitian", "multipliers", ["hermitian"], 1e-12, case_hermitian),
        case!("static-degeneration", "multipliers", ["static-degeneration"], 1e-12, case_static),
        case!("iqc-time-domain", "multipliers", ["time-domain-iqc"], 1e-7, case_iqc),
        case!("hyperdominance", "multipliers", ["hyperdominance"], 1e-12, case_dominance),
        case!("kyp-frequency", "kyp", ["frequency-consistency"], 0.0, case_kyp_frequency),
        case!("kyp-homogeneity", "kyp", ["homogeneity"], 1e-10, case_homogeneity),
        case!("monotone-verdicts", "analysis", ["kyp/monotone-certification", "verdict-monotone"], 0.0, case_monotone),
        case!("class-ordering", "analysis", ["class-ordering"], 0.0, case_ordering),
        case!("barrier-vs-nominal", "analysis", ["barrier-dominates-nominal"], 0.0, case_barrier_nominal),
    ]
}

/// `module/id` of every invariant no registered case covers.
pub fn uncovered_invariants(cases: &[PropertyCase]) -> Vec<String> {
    INVARIANTS
        .iter()
        .filter(|(module, id)| {
            let qualified = format!("{module}/{id}");
            !cases.iter().any(|c| c.covers.iter().any(|cov| (c.module == *module && cov == id) || *cov == qualified))
        })
        .map(|(module, id)| format!("{module}/{id}"))
        .collect()
}

/// Runs the registered cases (in parallel, each with its own seeded stream).
pub fn run_suite(options: &SuiteOptions) -> SuiteReport {
    let cases = registry();
    let uncovered = uncovered_invariants(&cases);
    let mut reports = Vec::new();
    match build_fixtures(options.m_inflation) {
        Ok(fixtures) => {
            let ctx = Context { options: options.clone(), fixtures, grid: OnceLock::new() };
            let selected: Vec<(usize, &PropertyCase)> =
                cases.iter().enumerate().filter(|(_, c)| options.filter.as_ref().is_none_or(|f| c.name.contains(f.as_str()))).collect();
            reports = selected
                .par_iter()
                .map(|&(index, case)| {
                    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
                    rng.set_stream(index as u64);
                    let mut tracker = Tracker::new(case.tolerance);
                    let start = Instant::now();
                    if let Err(e) = (case.run)(&ctx, &mut tracker, &mut rng) {
                        tracker.fail(format!("error: {e}"));
                    }
                    finish(case, tracker, start.elapsed().as_secs_f64())
                })
                .collect();
        }
        Err(e) => {
            for case in &cases {
                let mut tracker = Tracker::new(case.tolerance);
                tracker.fail(format!("fixture construction failed: {e}"));
                reports.push(finish(case, tracker, 0.0));
            }
        }
    }
    SuiteReport { seed: options.seed, samples: options.samples, m_inflation: options.m_inflation, cases: reports, uncovered }
}

fn finish(case: &PropertyCase, t: Tracker, seconds: f64) -> CaseReport {
    CaseReport {
        name: case.name.to_string(),
        module: case.module.to_string(),
        covers: case.covers.iter().map(|s| s.to_string()).collect(),
        tolerance: case.tolerance,
        checks: t.checks,
        worst: if t.checks == 0 { 0.0 } else { t.worst },
        passed: t.counterexample.is_none() && !t.worst.is_nan(),
        counterexample: t.counterexample,
        seconds,
    }
}
