//! KYP-lemma LMI for `[G; I]* Ψ* K Ψ [G; I] ≺ 0` and its feasibility verdict.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::lti::StateSpace;
use iqc_sdp::{CongruenceTerm, LinearIneq, LmiProgram, MatrixVar, Settings, Solution};

/// Smallest margin accepted as a strict LMI.
pub const LAMBDA_MIN: f64 = 1e-9;
/// Relative tolerance for dropping uncontrollable directions of `G_Ψ`.
pub const CONTROLLABILITY_TOL: f64 = 1e-9;

/// `G_Ψ = Ψ [G; I]`.
pub fn build_g_psi(g: &StateSpace, psi: &StateSpace) -> Result<StateSpace> {
    let gi = g.stack(&StateSpace::identity(g.n_inputs()))?;
    if psi.n_inputs() != gi.n_outputs() {
        return Err(Error::Dimension(format!(
            "Ψ takes {} inputs but [G; I] has {} outputs",
            psi.n_inputs(),
            gi.n_outputs()
        )));
    }
    gi.series(psi)
}

/// Affine parameter matrix `K(y) = K₀ + Σ_i y_i K_i` with bounds on `y`.
#[derive(Debug, Clone)]
pub struct KParam {
    pub constant: DMatrix<f64>,
    pub terms: Vec<DMatrix<f64>>,
    pub names: Vec<String>,
    pub lower: Vec<Option<f64>>,
    /// Variables entering the normalization `Σ y_i ≤ 1`.
    pub normalized: Vec<usize>,
}

impl KParam {
    pub fn eval(&self, y: &[f64]) -> DMatrix<f64> {
        let mut k = self.constant.clone();
        for (ki, &yi) in self.terms.iter().zip(y) {
            k += ki * yi;
        }
        k
    }

    pub fn dim(&self) -> usize {
        self.constant.nrows()
    }
}

/// The LMI `[A B]ᵀP[A B] − [I 0]ᵀP[I 0] + [C D]ᵀK(y)[C D] ⪯ −λI`.
#[derive(Debug, Clone)]
pub struct LmiProblem {
    pub g_psi: StateSpace,
    pub k: KParam,
}

impl LmiProblem {
    pub fn new(g_psi: StateSpace, k: KParam) -> Result<Self> {
        if k.dim() != g_psi.n_outputs() {
            return Err(Error::Dimension(format!("K is {0}x{0} but G_Ψ has {1} outputs", k.dim(), g_psi.n_outputs())));
        }
        for t in &k.terms {
            if t.shape() != k.constant.shape() || (t - t.transpose()).amax() > 1e-12 * t.amax().max(1.0) {
                return Err(Error::Structure("K terms must be symmetric and equally sized".into()));
            }
        }
        if k.names.len() != k.terms.len() || k.lower.len() != k.terms.len() {
            return Err(Error::Structure("K parameter metadata does not match the terms".into()));
        }
        Ok(Self { g_psi, k })
    }

    /// Conic program over `(y, λ, P)` maximizing `λ`; `λ` is the last scalar.
    pub fn to_program(&self) -> LmiProgram {
        let g = &self.g_psi;
        let (nx, nu) = (g.n_states(), g.n_inputs());
        let dim = nx + nu;
        let mut cd = DMatrix::zeros(g.n_outputs(), dim);
        cd.view_mut((0, 0), (g.n_outputs(), nx)).copy_from(&g.c);
        cd.view_mut((0, nx), (g.n_outputs(), nu)).copy_from(&g.d);
        let quad = |k: &DMatrix<f64>| {
            let m = cd.transpose() * k * &cd;
            (&m + m.transpose()) * 0.5
        };
        let mut prog = LmiProgram::new(quad(&self.k.constant));
        for (i, t) in self.k.terms.iter().enumerate() {
            let idx = prog.add_scalar(self.k.names[i].clone(), quad(t), 0.0);
            if let Some(lo) = self.k.lower[i] {
                prog.add_inequality(LinearIneq::lower_bound(idx, lo));
            }
        }
        let lam = prog.add_scalar("lambda", DMatrix::identity(dim, dim), 1.0);
        prog.add_inequality(LinearIneq::upper_bound(lam, 1.0));
        if !self.k.normalized.is_empty() {
            prog.add_inequality(LinearIneq::new(self.k.normalized.iter().map(|&i| (i, 1.0)).collect(), 1.0));
        }
        if nx > 0 {
            let mut ab = DMatrix::zeros(nx, dim);
            ab.view_mut((0, 0), (nx, nx)).copy_from(&g.a);
            ab.view_mut((0, nx), (nx, nu)).copy_from(&g.b);
            let mut i0 = DMatrix::zeros(nx, dim);
            i0.view_mut((0, 0), (nx, nx)).fill_with_identity();
            prog.set_matrix_var(MatrixVar {
                dim: nx,
                terms: vec![CongruenceTerm { weight: 1.0, map: ab }, CongruenceTerm { weight: -1.0, map: i0 }],
            });
        }
        prog
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Certified,
    NotCertified,
    /// The backend did not confirm an answer; never read as stable.
    Unknown,
}

#[derive(Debug, Clone)]
pub struct CertificationReport {
    pub verdict: Verdict,
    /// Margin of the re-substituted solution: `−λ_max` of the LMI matrix.
    pub lambda: f64,
    /// Margin reported by the backend.
    pub lambda_backend: f64,
    pub params: DVector<f64>,
    pub p: DMatrix<f64>,
    pub status: String,
    pub iterations: usize,
    pub seconds: f64,
}

impl CertificationReport {
    pub fn feasible(&self) -> bool {
        self.verdict == Verdict::Certified
    }
}

/// A semidefinite backend able to maximize the margin of an [`LmiProgram`].
pub trait SdpBackend: Sync {
    fn solve(&self, prog: &LmiProgram) -> Result<Solution>;
    fn name(&self) -> &'static str;
}

/// The bundled primal-dual interior-point solver.
#[derive(Debug, Clone, Default)]
pub struct InteriorPoint {
    pub settings: Settings,
}

impl SdpBackend for InteriorPoint {
    fn solve(&self, prog: &LmiProgram) -> Result<Solution> {
        Ok(iqc_sdp::solve(prog, &self.settings)?)
    }

    fn name(&self) -> &'static str {
        "interior-point"
    }
}

/// Solves the LMI after removing uncontrollable directions of `G_Ψ`, then
/// re-substitutes the (bound-projected) solution to obtain the verdict.
pub fn solve_kyp_lmi(problem: &LmiProblem, backend: &dyn SdpBackend) -> Result<CertificationReport> {
    if !problem.g_psi.is_stable() {
        return Err(Error::InvalidInput("G_Ψ must be Schur stable".into()));
    }
    let start = Instant::now();
    let reduced = LmiProblem { g_psi: problem.g_psi.controllable_part(CONTROLLABILITY_TOL), k: problem.k.clone() };
    let prog = reduced.to_program();
    let sol = backend.solve(&prog)?;
    let nparams = problem.k.terms.len();
    let mut y: Vec<f64> = sol.scalars[..nparams].to_vec();
    for (yi, lo) in y.iter_mut().zip(&problem.k.lower) {
        if let Some(lo) = lo {
            *yi = yi.max(*lo);
        }
    }
    let nx = reduced.g_psi.n_states();
    let p = sol.matrix.clone().unwrap_or_else(|| DMatrix::zeros(nx, nx));
    let mut scalars = y.clone();
    scalars.push(0.0);
    let f = prog.evaluate(&scalars, Some(&p));
    let lambda = -f.symmetric_eigenvalues().max();
    let verdict = if !sol.status.is_converged() || !lambda.is_finite() {
        Verdict::Unknown
    } else if lambda >= LAMBDA_MIN {
        Verdict::Certified
    } else {
        Verdict::NotCertified
    };
    Ok(CertificationReport {
        verdict,
        lambda,
        lambda_backend: sol.scalars[nparams],
        params: DVector::from_vec(y),
        p,
        status: format!("{:?}", sol.status),
        iterations: sol.iterations,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Largest eigenvalue of `[G; I]* Π [G; I]` over `n_freq` frequencies spread
/// uniformly on `[0, π]`, with the frequency where it occurs.
pub fn frequency_check<F>(g: &StateSpace, pi: F, n_freq: usize) -> Result<(f64, f64)>
where
    F: Fn(f64) -> Result<DMatrix<Complex64>>,
{
    let m = g.n_inputs();
    let mut worst = (f64::NEG_INFINITY, 0.0);
    let count = n_freq.max(2);
    for k in 0..count {
        let w = std::f64::consts::PI * k as f64 / (count - 1) as f64;
        let gw = g.freq_response(w)?;
        let mut gi = DMatrix::zeros(gw.nrows() + m, m);
        gi.view_mut((0, 0), (gw.nrows(), m)).copy_from(&gw);
        gi.view_mut((gw.nrows(), 0), (m, m)).fill_with_identity();
        let pw = pi(w)?;
        if pw.shape() != (gi.nrows(), gi.nrows()) {
            return Err(Error::Dimension("Π does not match [G; I]".into()));
        }
        let q = gi.adjoint() * pw * &gi;
        let q = (&q + q.adjoint()) * Complex64::new(0.5, 0.0);
        let top = q.symmetric_eigenvalues().max();
        if top > worst.0 {
            worst = (top, w);
        }
    }
    Ok(worst)
}

/// Largest eigenvalue of `G_Ψ* K G_Ψ` on the frequency grid, for a solved report.
pub fn kyp_frequency_margin(problem: &LmiProblem, report: &CertificationReport, n_freq: usize) -> Result<f64> {
    let k = problem.k.eval(report.params.as_slice()).map(Complex64::from);
    let g = &problem.g_psi;
    let count = n_freq.max(2);
    let mut worst = f64::NEG_INFINITY;
    for i in 0..count {
        let w = std::f64::consts::PI * i as f64 / (count - 1) as f64;
        let gw = g.freq_response(w)?;
        let q = gw.adjoint() * &k * &gw;
        let q = (&q + q.adjoint()) * Complex64::new(0.5, 0.0);
        worst = worst.max(q.symmetric_eigenvalues().max());
    }
    Ok(worst)
}

/// Plain-text dump of an assembled program for cross-checking elsewhere.
///
/// Format: a `#` header, then one block per line as `name rows cols v11 v12 …`
/// (row-major). Blocks: `F0` (constant), one `F<i>` per scalar, and for the
/// matrix variable `T<k>` maps with their `W<k>` weights, meaning
/// `F0 + Σ y_i F_i + Σ_k W_k T_kᵀ P T_k ⪯ 0`, maximize `Σ c_i y_i` (`C` line).
pub fn export_text(prog: &LmiProgram) -> String {
    let mut out = String::new();
    out.push_str("# lmi-dump v1: F0 + sum_i y_i F_i + sum_k W_k T_k' P T_k <= 0; maximize C'y\n");
    let block = |name: &str, m: &DMatrix<f64>| {
        let mut s = format!("{name} {} {}", m.nrows(), m.ncols());
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                s.push_str(&format!(" {:.17e}", m[(r, c)]));
            }
        }
        s.push('\n');
        s
    };
    out.push_str(&block("F0", &prog.constant));
    for (i, v) in prog.scalars.iter().enumerate() {
        out.push_str(&block(&format!("F{}", i + 1), &v.coeff));
    }
    let c = DMatrix::from_iterator(1, prog.scalars.len(), prog.scalars.iter().map(|v| v.objective));
    out.push_str(&block("C", &c));
    if let Some(mv) = &prog.matrix_var {
        for (k, t) in mv.terms.iter().enumerate() {
            out.push_str(&format!("W{} 1 1 {:.17e}\n", k + 1, t.weight));
            out.push_str(&block(&format!("T{}", k + 1), &t.map));
        }
    }
    for (i, ineq) in prog.inequalities.iter().enumerate() {
        let mut row = DMatrix::zeros(1, prog.scalars.len() + 1);
        for &(j, v) in &ineq.coeffs {
            row[(0, j)] = v;
        }
        row[(0, prog.scalars.len())] = ineq.rhs;
        out.push_str(&block(&format!("G{}", i + 1), &row));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diag_pi(n_out: usize, n_in: usize) -> impl Fn(f64) -> Result<DMatrix<Complex64>> {
        move |_| {
            let mut p = DMatrix::zeros(n_out + n_in, n_out + n_in);
            for i in 0..n_out {
                p[(i, i)] = Complex64::new(1.0, 0.0);
            }
            for i in n_out..n_out + n_in {
                p[(i, i)] = Complex64::new(-1.0, 0.0);
            }
            Ok(p)
        }
    }

    #[test]
    fn zero_plant_gives_minus_one() {
        let g = StateSpace::static_gain(DMatrix::zeros(1, 1));
        let (top, _) = frequency_check(&g, diag_pi(1, 1), 16).unwrap();
        assert!((top + 1.0).abs() < 1e-14);
    }

    #[test]
    fn gain_two_gives_three() {
        // G(z) = 1/(z − 0.5) has peak gain 2 at ω = 0.
        let g = StateSpace::strictly_proper(DMatrix::from_element(1, 1, 0.5), DMatrix::identity(1, 1), DMatrix::identity(1, 1)).unwrap();
        let (top, w) = frequency_check(&g, diag_pi(1, 1), 64).unwrap();
        assert!((top - 3.0).abs() < 1e-12);
        assert_eq!(w, 0.0);
    }

    #[test]
    fn identity_psi_gives_stacked_response() {
        let g = StateSpace::strictly_proper(DMatrix::from_element(1, 1, 0.3), DMatrix::identity(1, 1), DMatrix::from_element(1, 1, 2.0)).unwrap();
        let gp = build_g_psi(&g, &StateSpace::identity(2)).unwrap();
        for &w in &[0.0, 1.0, 2.0] {
            let a = gp.freq_response(w).unwrap();
            let b = g.freq_response(w).unwrap();
            assert!((a[(0, 0)] - b[(0, 0)]).norm() < 1e-14);
            assert!((a[(1, 0)] - Complex64::new(1.0, 0.0)).norm() < 1e-14);
        }
        assert!(build_g_psi(&g, &StateSpace::identity(3)).is_err());
    }

    #[test]
    fn export_has_header_and_blocks() {
        let mut prog = LmiProgram::new(DMatrix::identity(2, 2) * -1.0);
        prog.add_scalar("lambda", DMatrix::identity(2, 2), 1.0);
        prog.add_inequality(LinearIneq::upper_bound(0, 1.0));
        let txt = export_text(&prog);
        let lines: Vec<&str> = txt.lines().collect();
        assert!(lines[0].starts_with('#'));
        assert!(lines[1].starts_with("F0 2 2 "));
        assert!(lines.iter().any(|l| l.starts_with("G1 1 2 ")));
    }
}
