//! Uncertain closed loop `M_s`, single certifications and margin bisection.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kyp::{build_g_psi, solve_kyp_lmi, CertificationReport, InteriorPoint, KParam, LmiProblem, SdpBackend, Verdict};
use crate::lti::{dare_kalman, ObserverPair, StateSpace};
use crate::mpc::{condense, first_move_selector, BarrierKind, BarrierProblem, ConstraintSet};
use crate::multipliers::{assemble_k, multiplier_constraint_set, psi11, Multiplier, MultiplierClass, MultiplierSpec, MultiplierStructure};
use crate::slope::{compute_m, SlopeCertificate, SlopeMethod};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ControllerKind {
    /// Barrier MPC with slope matrix `H + μmI`.
    Barrier,
    /// Constrained QP MPC with slope matrix `H`.
    Nominal,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BarrierChoice {
    GradientRecentered,
    /// Weights chosen automatically for boxes.
    WeightRecentered,
    /// Threshold `δ_i = fraction · W_i`.
    Relaxed { fraction: f64 },
}

impl BarrierChoice {
    pub fn kind(&self, set: &ConstraintSet) -> Result<BarrierKind> {
        Ok(match *self {
            BarrierChoice::GradientRecentered => BarrierKind::GradientRecentered,
            BarrierChoice::WeightRecentered => BarrierKind::weighted_for_pairs(set)?,
            BarrierChoice::Relaxed { fraction } => BarrierKind::Relaxed { delta: set.w().iter().map(|w| fraction * w).collect() },
        })
    }
}

#[derive(Debug, Clone)]
pub struct AnalysisConfig {
    pub plant: StateSpace,
    pub observer_q: DMatrix<f64>,
    pub observer_r: DMatrix<f64>,
    pub horizon: usize,
    /// State weight of the MPC cost.
    pub q: DMatrix<f64>,
    /// Input weight: `R = r I`.
    pub r: f64,
    pub mu: f64,
    pub barrier: BarrierChoice,
    /// Per-stage input bounds.
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub multiplier: MultiplierSpec,
    pub controller: ControllerKind,
    /// Norm bound of the output uncertainty (`0` removes the channel).
    pub b: f64,
    /// Gain on the plant output.
    pub kappa: f64,
}

impl AnalysisConfig {
    /// Second-order non-minimum-phase example with box bounds `−0.5 ≤ u ≤ 1`.
    pub fn second_order_example() -> Self {
        let a = DMatrix::from_row_slice(2, 2, &[0.7, 0.3, 0.8, 0.01]);
        let b = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let c = DMatrix::from_row_slice(1, 2, &[1.0, 1.5]);
        Self {
            plant: StateSpace::strictly_proper(a, b, c).expect("valid example plant"),
            observer_q: DMatrix::identity(2, 2),
            observer_r: DMatrix::identity(1, 1),
            horizon: 2,
            q: DMatrix::identity(2, 2),
            r: 0.1,
            mu: 0.8,
            barrier: BarrierChoice::GradientRecentered,
            lower: vec![-0.5],
            upper: vec![1.0],
            multiplier: MultiplierSpec { class: MultiplierClass::CzfDiagonal, n_minus: 1, n_plus: 1 },
            controller: ControllerKind::Barrier,
            b: 0.0,
            kappa: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.b >= 0.0 && self.b.is_finite()) {
            return Err(Error::InvalidInput("uncertainty bound b must be non-negative".into()));
        }
        if !(self.kappa > 0.0 && self.kappa.is_finite()) {
            return Err(Error::InvalidInput("output gain kappa must be positive".into()));
        }
        if !(self.r > 0.0 && self.r.is_finite()) {
            return Err(Error::InvalidInput("input weight r must be positive".into()));
        }
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return Err(Error::InvalidInput("barrier weight mu must be positive".into()));
        }
        if self.lower.len() != self.plant.n_inputs() || self.upper.len() != self.plant.n_inputs() {
            return Err(Error::Dimension("input bounds must have one entry per plant input".into()));
        }
        if self.plant.d.amax() != 0.0 {
            return Err(Error::InvalidInput("the plant must be strictly proper".into()));
        }
        Ok(())
    }

    pub fn n_inputs_stacked(&self) -> usize {
        self.horizon * self.plant.n_inputs()
    }
}

/// Quantities derived from a configuration once per certification.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub problem: BarrierProblem,
    pub observer: ObserverPair,
    pub slope: SlopeCertificate,
}

impl Prepared {
    pub fn h_tilde(&self) -> &DMatrix<f64> {
        &self.slope.h_tilde
    }
}

pub fn prepare(cfg: &AnalysisConfig) -> Result<Prepared> {
    cfg.validate()?;
    let g = &cfg.plant;
    let nu = g.n_inputs();
    let (h, s) = condense(&g.a, &g.b, &cfg.q, &(DMatrix::identity(nu, nu) * cfg.r), cfg.horizon)?;
    let set = ConstraintSet::horizon_box(&cfg.lower, &cfg.upper, cfg.horizon)?;
    let kind = cfg.barrier.kind(&set)?;
    let problem = BarrierProblem::new(h, s, set, kind, cfg.mu)?;
    let observer = dare_kalman(&g.a, &g.c, &g.b, &cfg.observer_q, &cfg.observer_r)?;
    let slope = match cfg.controller {
        ControllerKind::Barrier => compute_m(&problem)?,
        ControllerKind::Nominal => SlopeCertificate::with_m(&problem, 0.0, SlopeMethod::FallbackZero),
    };
    Ok(Prepared { problem, observer, slope })
}

/// `M_s`: inputs `[w; U]`, outputs `[v; θ]`, states `[x; x̂]`.
///
/// `x⁺ = Ax + BEU`, `x̂⁺ = (A − ALC)x̂ + BEU + AL(κCx + √b w)`,
/// `v = √b κCx`, `θ = −S x̂`. With `b = 0` the `w`/`v` channel is absent.
pub fn build_ms(cfg: &AnalysisConfig, prep: &Prepared) -> Result<StateSpace> {
    if cfg.b < 0.0 {
        return Err(Error::InvalidInput("b must be non-negative".into()));
    }
    let g = &cfg.plant;
    let (nx, nu, ny) = (g.n_states(), g.n_inputs(), g.n_outputs());
    let n_u = cfg.n_inputs_stacked();
    let e = first_move_selector(nu, cfg.horizon);
    let ao = prep.observer.state_matrix();
    let al = &prep.observer.j_y.b;
    let s = prep.problem.s();
    if s.ncols() != nx || al.shape() != (nx, ny) {
        return Err(Error::Dimension("observer or prediction matrices do not match the plant".into()));
    }
    let kc = &g.c * cfg.kappa;
    let mut a = DMatrix::zeros(2 * nx, 2 * nx);
    a.view_mut((0, 0), (nx, nx)).copy_from(&g.a);
    a.view_mut((nx, 0), (nx, nx)).copy_from(&(al * &kc));
    a.view_mut((nx, nx), (nx, nx)).copy_from(ao);
    let be = &g.b * &e;
    let nw = if cfg.b > 0.0 { ny } else { 0 };
    let sb = cfg.b.sqrt();
    let mut b = DMatrix::zeros(2 * nx, nw + n_u);
    if nw > 0 {
        b.view_mut((nx, 0), (nx, ny)).copy_from(&(al * sb));
    }
    b.view_mut((0, nw), (nx, n_u)).copy_from(&be);
    b.view_mut((nx, nw), (nx, n_u)).copy_from(&be);
    let mut c = DMatrix::zeros(nw + n_u, 2 * nx);
    if nw > 0 {
        c.view_mut((0, 0), (ny, nx)).copy_from(&(&kc * sb));
    }
    c.view_mut((nw, nx), (n_u, nx)).copy_from(&(-s));
    let d = DMatrix::zeros(nw + n_u, nw + n_u);
    StateSpace::new(a, b, c, d)
}

/// Multiplier grouping for the configured class.
pub fn multiplier_structure(cfg: &AnalysisConfig, prep: &Prepared) -> Result<MultiplierStructure> {
    MultiplierStructure::for_class(cfg.multiplier.class, prep.problem.constraints())
}

/// KYP problem for `M_s` with the controller multiplier and, when `b > 0`,
/// the uncertainty multiplier `τ diag(I, −I)`.
pub fn build_lmi(cfg: &AnalysisConfig, prep: &Prepared) -> Result<LmiProblem> {
    let ms = build_ms(cfg, prep)?;
    let n = cfg.n_inputs_stacked();
    let spec = cfg.multiplier;
    let structure = multiplier_structure(cfg, prep)?;
    let order = spec.order();
    let nw = ms.n_inputs() - n;
    let half = n * (order + 1);
    let total = 2 * nw + 2 * half;

    // Ψ_total = diag(I, Ψ₁₁, I, Ψ₁₁) on [v; θ; w; U]
    let p11 = psi11(n, order);
    let ident = StateSpace::identity(nw);
    let psi = ident.diagonal(&p11).diagonal(&ident).diagonal(&p11);
    let g_psi = build_g_psi(&ms, &psi)?;

    // place a [θ-blocks; U-blocks] matrix into the total layout
    let embed = |k: &DMatrix<f64>| {
        let mut out = DMatrix::zeros(total, total);
        let map = |i: usize| if i < half { nw + i } else { 2 * nw + i };
        for r in 0..2 * half {
            for c in 0..2 * half {
                out[(map(r), map(c))] = k[(r, c)];
            }
        }
        out
    };
    let n_params = spec.n_taps() * structure.n_groups();
    let h_tilde = prep.h_tilde();
    let mut terms = Vec::with_capacity(n_params + 1);
    let mut names = Vec::with_capacity(n_params + 1);
    let mut lower = vec![None; n_params];
    for i in 0..n_params {
        let mut p = nalgebra::DVector::zeros(n_params);
        p[i] = 1.0;
        let mult = Multiplier::new(spec, structure.clone(), p)?;
        terms.push(embed(&assemble_k(&mult, h_tilde)?));
        let j = i / structure.n_groups();
        names.push(format!("r[{},{}]", j as i64 - spec.n_minus as i64, i % structure.n_groups()));
    }
    for bound in multiplier_constraint_set(&spec, structure.n_groups()) {
        lower[bound.index] = Some(bound.lower);
    }
    if nw > 0 {
        let mut t = DMatrix::zeros(total, total);
        for i in 0..nw {
            t[(i, i)] = 1.0;
            t[(nw + half + i, nw + half + i)] = -1.0;
        }
        terms.push(t);
        names.push("tau".into());
        lower.push(Some(0.0));
    }
    let normalized = (0..terms.len()).collect();
    let k = KParam { constant: DMatrix::zeros(total, total), terms, names, lower, normalized };
    LmiProblem::new(g_psi, k)
}

pub fn certify(cfg: &AnalysisConfig) -> Result<CertificationReport> {
    certify_with(cfg, &InteriorPoint::default())
}

pub fn certify_with(cfg: &AnalysisConfig, backend: &dyn SdpBackend) -> Result<CertificationReport> {
    let prep = prepare(cfg)?;
    let lmi = build_lmi(cfg, &prep)?;
    solve_kyp_lmi(&lmi, backend)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MarginTarget {
    MaxKappa,
    MinR,
    MaxB,
}

impl MarginTarget {
    pub fn default_bracket(self) -> (f64, f64) {
        match self {
            MarginTarget::MaxKappa => (1.0, 10.0),
            MarginTarget::MinR => (1e-4, 10.0),
            MarginTarget::MaxB => (0.0, 1.0),
        }
    }

    pub fn log_scale(self) -> bool {
        self == MarginTarget::MinR
    }

    /// Whether larger values are harder to certify.
    pub fn is_max(self) -> bool {
        self != MarginTarget::MinR
    }

    pub fn apply(self, cfg: &AnalysisConfig, value: f64) -> AnalysisConfig {
        let mut out = cfg.clone();
        match self {
            MarginTarget::MaxKappa => out.kappa = value,
            MarginTarget::MinR => out.r = value,
            MarginTarget::MaxB => out.b = value,
        }
        out
    }

    pub fn label(self) -> &'static str {
        match self {
            MarginTarget::MaxKappa => "kappa",
            MarginTarget::MinR => "r",
            MarginTarget::MaxB => "b",
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BisectOptions {
    pub lo: f64,
    pub hi: f64,
    /// Relative tolerance on the bracket width.
    pub tol: f64,
    /// Extra uniformly spaced probes checked for monotone verdicts.
    pub scan_points: usize,
}

impl BisectOptions {
    pub fn for_target(target: MarginTarget) -> Self {
        let (lo, hi) = target.default_bracket();
        Self { lo, hi, tol: 1e-3, scan_points: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TracePoint {
    pub value: f64,
    pub verdict: Verdict,
    pub lambda: f64,
}

#[derive(Debug, Clone)]
pub struct MarginResult {
    /// Last certified value.
    pub value: f64,
    pub trace: Vec<TracePoint>,
}

/// Bisection on one parameter. A solver failure at a probe counts as not
/// certified; the trace records it as `Unknown`.
pub fn bisect_margin(cfg: &AnalysisConfig, target: MarginTarget, opts: &BisectOptions, backend: &dyn SdpBackend) -> Result<MarginResult> {
    if !(opts.lo < opts.hi) || !(opts.tol > 0.0) || (target.log_scale() && opts.lo <= 0.0) {
        return Err(Error::InvalidInput("bisection needs lo < hi, tol > 0 and lo > 0 on a log scale".into()));
    }
    let mut trace = Vec::new();
    let probe = |value: f64, trace: &mut Vec<TracePoint>| -> bool {
        let point = match certify_with(&target.apply(cfg, value), backend) {
            Ok(rep) => TracePoint { value, verdict: rep.verdict, lambda: rep.lambda },
            Err(_) => TracePoint { value, verdict: Verdict::Unknown, lambda: f64::NAN },
        };
        trace.push(point);
        point.verdict == Verdict::Certified
    };
    // `good` is the end expected to certify.
    let (mut good, mut bad) = if target.is_max() { (opts.lo, opts.hi) } else { (opts.hi, opts.lo) };
    let good_ok = probe(good, &mut trace);
    let bad_ok = probe(bad, &mut trace);
    match (good_ok, bad_ok) {
        (true, true) => {
            return Err(Error::Bracket { all_certified: true, detail: format!("{} certified over [{}, {}]", target.label(), opts.lo, opts.hi) })
        }
        (false, false) => {
            return Err(Error::Bracket { all_certified: false, detail: format!("{} fails over [{}, {}]", target.label(), opts.lo, opts.hi) })
        }
        (false, true) => {
            return Err(Error::NonMonotone(format!("{} certified only at the end expected to fail", target.label())));
        }
        (true, false) => {}
    }
    for k in 1..=opts.scan_points {
        let t = k as f64 / (opts.scan_points + 1) as f64;
        let v = if target.log_scale() { opts.lo * (opts.hi / opts.lo).powf(t) } else { opts.lo + t * (opts.hi - opts.lo) };
        probe(v, &mut trace);
    }
    check_monotone(&trace, target)?;
    // shrink the bracket to the scan points
    for p in &trace {
        let between = (p.value - good) * (p.value - bad) < 0.0;
        if between {
            if p.verdict == Verdict::Certified && (p.value - good).abs() > 0.0 && closer(p.value, bad, good) {
                good = p.value;
            } else if p.verdict != Verdict::Certified && closer(p.value, good, bad) {
                bad = p.value;
            }
        }
    }
    loop {
        let width = (bad - good).abs();
        let done = if target.log_scale() { (bad.max(good) / bad.min(good)) - 1.0 <= opts.tol } else { width <= opts.tol * bad.abs().max(good.abs()) };
        if done {
            break;
        }
        let mid = if target.log_scale() { (good * bad).sqrt() } else { 0.5 * (good + bad) };
        if probe(mid, &mut trace) {
            good = mid;
        } else {
            bad = mid;
        }
    }
    check_monotone(&trace, target)?;
    Ok(MarginResult { value: good, trace })
}

fn closer(v: f64, to: f64, from: f64) -> bool {
    (v - to).abs() < (from - to).abs()
}

/// No certified value beyond an uncertified one in the hard direction.
pub fn check_monotone(trace: &[TracePoint], target: MarginTarget) -> Result<()> {
    let sign = if target.is_max() { 1.0 } else { -1.0 };
    let worst_certified = trace.iter().filter(|p| p.verdict == Verdict::Certified).map(|p| sign * p.value).fold(f64::NEG_INFINITY, f64::max);
    let best_failed = trace.iter().filter(|p| p.verdict != Verdict::Certified).map(|p| sign * p.value).fold(f64::INFINITY, f64::min);
    if worst_certified > best_failed {
        return Err(Error::NonMonotone(format!(
            "{} = {} certified but {} = {} not",
            target.label(),
            sign * worst_certified,
            target.label(),
            sign * best_failed
        )));
    }
    Ok(())
}

/// One row/column entry of a margin table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct TableCell {
    pub controller: ControllerKind,
    pub multiplier: MultiplierSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum CellOutcome {
    Margin(f64),
    /// Certified over the whole bracket; carries the hardest end.
    CertifiedBracket(f64),
    /// Not certified anywhere in the bracket.
    FailedBracket,
    Error,
}

#[derive(Debug, Clone)]
pub struct CellResult {
    pub cell: TableCell,
    pub outcome: CellOutcome,
    pub trace: Vec<TracePoint>,
    pub message: Option<String>,
}

/// Runs one bisection per cell on a pool of `workers` threads.
pub fn run_cells(cfg: &AnalysisConfig, target: MarginTarget, opts: &BisectOptions, cells: &[TableCell], workers: usize) -> Result<Vec<CellResult>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidInput(format!("cannot start worker pool: {e}")))?;
    let backend = InteriorPoint::default();
    Ok(pool.install(|| {
        cells
            .par_iter()
            .map(|cell| {
                let mut c = cfg.clone();
                c.controller = cell.controller;
                c.multiplier = cell.multiplier;
                match bisect_margin(&c, target, opts, &backend) {
                    Ok(res) => CellResult { cell: *cell, outcome: CellOutcome::Margin(res.value), trace: res.trace, message: None },
                    Err(Error::Bracket { all_certified, detail }) => {
                        let hard_end = if target.is_max() { opts.hi } else { opts.lo };
                        let outcome = if all_certified { CellOutcome::CertifiedBracket(hard_end) } else { CellOutcome::FailedBracket };
                        CellResult { cell: *cell, outcome, trace: Vec::new(), message: Some(detail) }
                    }
                    Err(e) => CellResult { cell: *cell, outcome: CellOutcome::Error, trace: Vec::new(), message: Some(e.to_string()) },
                }
            })
            .collect()
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ms_without_uncertainty_is_single_loop() {
        let cfg = AnalysisConfig::second_order_example();
        let prep = prepare(&cfg).unwrap();
        let ms = build_ms(&cfg, &prep).unwrap();
        assert_eq!((ms.n_inputs(), ms.n_outputs(), ms.n_states()), (2, 2, 4));
        let mut with_b = cfg.clone();
        with_b.b = 0.25;
        let ms_b = build_ms(&with_b, &prep).unwrap();
        assert_eq!((ms_b.n_inputs(), ms_b.n_outputs()), (3, 3));
    }

    #[test]
    fn rejects_bad_config() {
        let mut cfg = AnalysisConfig::second_order_example();
        cfg.b = -0.1;
        assert!(prepare(&cfg).is_err());
        let mut cfg = AnalysisConfig::second_order_example();
        cfg.kappa = 0.0;
        assert!(prepare(&cfg).is_err());
    }

    #[test]
    fn monotone_check_flags_inversions() {
        let pts = [
            TracePoint { value: 1.0, verdict: Verdict::Certified, lambda: 0.1 },
            TracePoint { value: 2.0, verdict: Verdict::NotCertified, lambda: -0.1 },
            TracePoint { value: 3.0, verdict: Verdict::Certified, lambda: 0.1 },
        ];
        assert!(check_monotone(&pts, MarginTarget::MaxKappa).is_err());
        assert!(check_monotone(&pts[..2], MarginTarget::MaxKappa).is_ok());
        assert!(check_monotone(&pts[..2], MarginTarget::MinR).is_err());
    }
}
