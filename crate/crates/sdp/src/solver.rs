use nalgebra::{DMatrix, DVector};

use crate::problem::LmiProgram;
use crate::SdpError;

/// Interior-point settings.
#[derive(Debug, Clone)]
pub struct Settings {
    pub max_iter: usize,
    /// Relative duality-gap tolerance.
    pub tol_gap: f64,
    /// Relative primal and dual residual tolerance.
    pub tol_feas: f64,
    /// Looser tolerance accepted when progress stalls.
    pub tol_inaccurate: f64,
    /// Iterates with a variable norm beyond this are treated as a breakdown.
    pub max_var_norm: f64,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            max_iter: 120,
            tol_gap: 1e-8,
            tol_feas: 1e-8,
            tol_inaccurate: 1e-6,
            max_var_norm: 1e12,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    /// Converged to the requested tolerances.
    Optimal,
    /// Stalled, but within the looser tolerance.
    AlmostOptimal,
    MaxIterations,
    /// Iterates diverged or a factorization broke down.
    NumericalFailure,
}

impl SolveStatus {
    pub fn is_converged(self) -> bool {
        matches!(self, SolveStatus::Optimal | SolveStatus::AlmostOptimal)
    }
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub status: SolveStatus,
    pub scalars: Vec<f64>,
    pub matrix: Option<DMatrix<f64>>,
    /// Objective at the returned point (a lower bound on the optimum).
    pub objective: f64,
    /// Objective of the dual certificate (an upper bound on the optimum).
    pub upper_bound: f64,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub relative_gap: f64,
}

/// Linear operator `y ↦ Σ y_i A_i` and its adjoint over the block space
/// (one dense PSD block plus a diagonal block for the linear inequalities).
struct Operator<'a> {
    prog: &'a LmiProgram,
    n: usize,
    ns: usize,
    k: usize,
    pairs: Vec<(usize, usize)>,
    /// Linear inequality matrix, `nl × ns`.
    g: DMatrix<f64>,
    h: DVector<f64>,
    b: DVector<f64>,
}

impl<'a> Operator<'a> {
    fn new(prog: &'a LmiProgram) -> Self {
        let ns = prog.scalars.len();
        let k = prog.matrix_var_dim();
        let mut pairs = Vec::with_capacity(k * (k + 1) / 2);
        for a in 0..k {
            for b in a..k {
                pairs.push((a, b));
            }
        }
        let nl = prog.inequalities.len();
        let mut g = DMatrix::zeros(nl, ns);
        let mut h = DVector::zeros(nl);
        for (r, ineq) in prog.inequalities.iter().enumerate() {
            for &(i, c) in &ineq.coeffs {
                g[(r, i)] += c;
            }
            h[r] = ineq.rhs;
        }
        let mut b = DVector::zeros(ns + pairs.len());
        for (i, s) in prog.scalars.iter().enumerate() {
            b[i] = s.objective;
        }
        Self { prog, n: prog.dim, ns, k, pairs, g, h, b }
    }

    fn m(&self) -> usize {
        self.ns + self.pairs.len()
    }

    fn nl(&self) -> usize {
        self.g.nrows()
    }

    fn matrix_from(&self, y: &DVector<f64>) -> DMatrix<f64> {
        let mut p = DMatrix::zeros(self.k, self.k);
        for (idx, &(a, b)) in self.pairs.iter().enumerate() {
            let v = y[self.ns + idx];
            p[(a, b)] = v;
            p[(b, a)] = v;
        }
        p
    }

    /// `Σ y_i A_i`
    fn adjoint(&self, y: &DVector<f64>) -> (DMatrix<f64>, DVector<f64>) {
        let mut s = DMatrix::zeros(self.n, self.n);
        for (i, sv) in self.prog.scalars.iter().enumerate() {
            if y[i] != 0.0 {
                s += &sv.coeff * y[i];
            }
        }
        if let Some(mv) = &self.prog.matrix_var {
            let p = self.matrix_from(y);
            for t in &mv.terms {
                s += t.map.transpose() * &p * &t.map * t.weight;
            }
        }
        let ys = y.rows(0, self.ns);
        let l = &self.g * ys;
        (s, l)
    }

    /// `(⟨A_i, X⟩)_i` for symmetric `X`.
    fn forward(&self, xs: &DMatrix<f64>, xl: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.m());
        for (i, sv) in self.prog.scalars.iter().enumerate() {
            out[i] = sv.coeff.dot(xs);
        }
        let gl = self.g.transpose() * xl;
        for i in 0..self.ns {
            out[i] += gl[i];
        }
        if let Some(mv) = &self.prog.matrix_var {
            let v = self.congruence_adjoint(mv, xs);
            self.write_pairs(&v, &mut out);
        }
        out
    }

    fn congruence_adjoint(&self, mv: &crate::problem::MatrixVar, w: &DMatrix<f64>) -> DMatrix<f64> {
        let mut v = DMatrix::zeros(self.k, self.k);
        for t in &mv.terms {
            v += &t.map * w * t.map.transpose() * t.weight;
        }
        v
    }

    fn write_pairs(&self, v: &DMatrix<f64>, out: &mut DVector<f64>) {
        for (idx, &(a, b)) in self.pairs.iter().enumerate() {
            out[self.ns + idx] = if a == b { v[(a, a)] } else { v[(a, b)] + v[(b, a)] };
        }
    }

    /// HKM Schur complement `M_ij = tr(A_i X A_j Z⁻¹) + Σ_l g_li g_lj x_l / z_l`.
    fn schur(&self, x: &DMatrix<f64>, zinv: &DMatrix<f64>, xl: &DVector<f64>, zl: &DVector<f64>) -> DMatrix<f64> {
        let m = self.m();
        let ns = self.ns;
        let mut mat = DMatrix::zeros(m, m);

        let ws: Vec<DMatrix<f64>> = self.prog.scalars.iter().map(|sv| x * &sv.coeff * zinv).collect();
        for i in 0..ns {
            for j in i..ns {
                let v = self.prog.scalars[i].coeff.dot(&ws[j]);
                mat[(i, j)] = v;
                mat[(j, i)] = v;
            }
        }
        for l in 0..self.nl() {
            let d = xl[l] / zl[l];
            for i in 0..ns {
                let gi = self.g[(l, i)];
                if gi == 0.0 {
                    continue;
                }
                for j in 0..ns {
                    mat[(i, j)] += gi * self.g[(l, j)] * d;
                }
            }
        }

        let Some(mv) = &self.prog.matrix_var else {
            return mat;
        };

        let mut col = DVector::zeros(m);
        for (i, w) in ws.iter().enumerate() {
            let sym = (w + w.transpose()) * 0.5;
            let v = self.congruence_adjoint(mv, &sym);
            self.write_pairs(&v, &mut col);
            for idx in 0..self.pairs.len() {
                mat[(i, ns + idx)] = col[ns + idx];
                mat[(ns + idx, i)] = col[ns + idx];
            }
        }

        // Matrix-variable block: Σ_{t,u} w_t w_u Σ X_tu[q,r] Y_ut[s,p] over the
        // ordered index pairs (p,q) of entry (a,b) and (r,s) of entry (c,d).
        let nt = mv.terms.len();
        let mut xtu = Vec::with_capacity(nt * nt);
        let mut yut = Vec::with_capacity(nt * nt);
        let mut wtu = Vec::with_capacity(nt * nt);
        for t in &mv.terms {
            for u in &mv.terms {
                xtu.push(&t.map * x * u.map.transpose());
                yut.push(&u.map * zinv * t.map.transpose());
                wtu.push(t.weight * u.weight);
            }
        }
        let np = self.pairs.len();
        for i1 in 0..np {
            let (a, b) = self.pairs[i1];
            for i2 in i1..np {
                let (c, d) = self.pairs[i2];
                let mut acc = 0.0;
                for ((xm, ym), w) in xtu.iter().zip(&yut).zip(&wtu) {
                    let mut s = xm[(b, c)] * ym[(d, a)];
                    if c != d {
                        s += xm[(b, d)] * ym[(c, a)];
                    }
                    if a != b {
                        s += xm[(a, c)] * ym[(d, b)];
                        if c != d {
                            s += xm[(a, d)] * ym[(c, b)];
                        }
                    }
                    acc += w * s;
                }
                mat[(ns + i1, ns + i2)] = acc;
                mat[(ns + i2, ns + i1)] = acc;
            }
        }
        mat
    }

    /// Frobenius norms of the block coefficients of each variable.
    fn coeff_norms(&self) -> Vec<f64> {
        let mut norms: Vec<f64> = (0..self.ns)
            .map(|i| {
                let gcol = self.g.column(i).norm_squared();
                (self.prog.scalars[i].coeff.norm_squared() + gcol).sqrt()
            })
            .collect();
        if let Some(mv) = &self.prog.matrix_var {
            for &(a, b) in &self.pairs {
                let mut e = DMatrix::zeros(self.k, self.k);
                e[(a, b)] = 1.0;
                e[(b, a)] = 1.0;
                let mut s = DMatrix::zeros(self.n, self.n);
                for t in &mv.terms {
                    s += t.map.transpose() * &e * &t.map * t.weight;
                }
                norms.push(s.norm());
            }
        }
        norms
    }
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Largest `α` with `x + α dx ⪰ 0`, given the Cholesky factor of `x`.
fn max_step_psd(chol_x: &DMatrix<f64>, dx: &DMatrix<f64>) -> f64 {
    let l = chol_x;
    let n = l.nrows();
    let linv = match l.clone().solve_lower_triangular(&DMatrix::identity(n, n)) {
        Some(v) => v,
        None => return 0.0,
    };
    let s = symmetrize(&(&linv * dx * linv.transpose()));
    let ev = s.symmetric_eigenvalues();
    let min = ev.iter().cloned().fold(f64::INFINITY, f64::min);
    if min >= 0.0 {
        f64::INFINITY
    } else {
        -1.0 / min
    }
}

fn max_step_lp(x: &DVector<f64>, dx: &DVector<f64>) -> f64 {
    x.iter()
        .zip(dx.iter())
        .filter(|(_, &d)| d < 0.0)
        .map(|(&v, &d)| -v / d)
        .fold(f64::INFINITY, f64::min)
}

struct Direction {
    dy: DVector<f64>,
    dxs: DMatrix<f64>,
    dxl: DVector<f64>,
    dzs: DMatrix<f64>,
    dzl: DVector<f64>,
}

/// Solves the program with a Mehrotra predictor-corrector primal-dual
/// path-following method using the HKM search direction.
pub fn solve(prog: &LmiProgram, settings: &Settings) -> Result<Solution, SdpError> {
    prog.validate()?;
    let op = Operator::new(prog);
    let n = op.n;
    let nl = op.nl();
    let m = op.m();
    let cs = -&prog.constant;
    let cs = symmetrize(&cs);
    let cl = op.h.clone();

    let c_norm = (cs.norm_squared() + cl.norm_squared()).sqrt();
    let b_norm = op.b.norm();
    let norms = op.coeff_norms();
    if let Some((idx, _)) = norms.iter().enumerate().find(|(_, &v)| v == 0.0) {
        return Err(SdpError::Dimension(format!("variable {idx} does not enter any constraint")));
    }
    let sqrt_n = (n as f64).sqrt();
    let mut xi: f64 = 10.0_f64.max(sqrt_n);
    for (i, nv) in norms.iter().enumerate() {
        xi = xi.max(sqrt_n * (1.0 + op.b[i].abs()) / (1.0 + nv));
    }
    let mut eta: f64 = 10.0_f64.max(sqrt_n).max(c_norm);
    for nv in &norms {
        eta = eta.max(*nv);
    }

    let mut x = DMatrix::identity(n, n) * xi;
    let mut z = DMatrix::identity(n, n) * eta;
    let mut xl = DVector::from_element(nl, xi);
    let mut zl = DVector::from_element(nl, eta);
    let mut y = DVector::zeros(m);
    let total = (n + nl) as f64;

    let mut status = SolveStatus::MaxIterations;
    let mut iterations = 0;
    let mut metrics = (f64::INFINITY, f64::INFINITY, f64::INFINITY);
    let mut best: Option<(f64, DVector<f64>)> = None;

    for iter in 0..settings.max_iter {
        iterations = iter;
        let (aty_s, aty_l) = op.adjoint(&y);
        let rd_s = symmetrize(&(&cs - &z - &aty_s));
        let rd_l = &cl - &zl - &aty_l;
        let rp = &op.b - op.forward(&x, &xl);
        let pobj = cs.dot(&x) + cl.dot(&xl);
        let dobj = op.b.dot(&y);
        let gap = x.dot(&z) + xl.dot(&zl);
        let mu = gap / total;
        let rel_gap = gap.abs().max((pobj - dobj).abs()) / (1.0 + pobj.abs() + dobj.abs());
        let pinf = rp.norm() / (1.0 + b_norm);
        let dinf = (rd_s.norm_squared() + rd_l.norm_squared()).sqrt() / (1.0 + c_norm);
        metrics = (pinf, dinf, rel_gap);

        let worst = pinf.max(dinf).max(rel_gap);
        if best.as_ref().is_none_or(|(w, _)| worst < *w) {
            best = Some((worst, y.clone()));
        }
        if rel_gap < settings.tol_gap && pinf < settings.tol_feas && dinf < settings.tol_feas {
            status = SolveStatus::Optimal;
            break;
        }
        if y.amax() > settings.max_var_norm || x.amax() > settings.max_var_norm {
            status = SolveStatus::NumericalFailure;
            break;
        }

        let Some(chol_z) = z.clone().cholesky() else {
            status = SolveStatus::NumericalFailure;
            break;
        };
        let Some(chol_x) = x.clone().cholesky() else {
            status = SolveStatus::NumericalFailure;
            break;
        };
        let zinv = symmetrize(&chol_z.inverse());
        let schur = op.schur(&x, &zinv, &xl, &zl);
        let Some(factor) = factor_schur(schur) else {
            status = SolveStatus::NumericalFailure;
            break;
        };

        let xrdz = &x * &rd_s * &zinv;
        let xrdz_l = xl.component_mul(&rd_l).component_div(&zl);
        let zinv_l = zl.map(|v| 1.0 / v);

        let direction = |target: f64, corr: Option<&Direction>| -> Direction {
            let mut rc_s = &zinv * target - &x;
            let mut rc_l = &zinv_l * target - &xl;
            if let Some(c) = corr {
                rc_s -= symmetrize(&(&c.dxs * &c.dzs * &zinv));
                rc_l -= c.dxl.component_mul(&c.dzl).component_div(&zl);
            }
            let rhs = &rp - op.forward(&rc_s, &rc_l) + op.forward(&symmetrize(&xrdz), &xrdz_l);
            let dy = factor.solve(&rhs);
            let (ady_s, ady_l) = op.adjoint(&dy);
            let dzs = &rd_s - ady_s;
            let dzl = &rd_l - ady_l;
            let dxs = &rc_s - symmetrize(&(&x * &dzs * &zinv));
            let dxl = &rc_l - xl.component_mul(&dzl).component_div(&zl);
            Direction { dy, dxs, dxl, dzs, dzl }
        };

        let lx = chol_x.l();
        let lz = chol_z.l();
        let steps = |d: &Direction| -> (f64, f64) {
            let ap = max_step_psd(&lx, &d.dxs).min(max_step_lp(&xl, &d.dxl));
            let ad = max_step_psd(&lz, &d.dzs).min(max_step_lp(&zl, &d.dzl));
            (ap, ad)
        };

        let pred = direction(0.0, None);
        let (ap, ad) = steps(&pred);
        let ap1 = ap.min(1.0);
        let ad1 = ad.min(1.0);
        let mu_aff = ((&x + &pred.dxs * ap1).dot(&(&z + &pred.dzs * ad1))
            + (&xl + &pred.dxl * ap1).dot(&(&zl + &pred.dzl * ad1)))
            / total;
        let ratio = (mu_aff / mu).clamp(0.0, 1.0);
        let expon = if mu > 1e-6 { 3.0_f64.max(3.0 * ap1.min(ad1).powi(2)) } else { 3.0 };
        let sigma = ratio.powf(expon).clamp(0.0, 1.0);

        let corr = direction(sigma * mu, Some(&pred));
        let (ap, ad) = steps(&corr);
        let gamma = 0.9 + 0.09 * ap.min(ad).min(1.0);
        let alpha_p = (gamma * ap).min(1.0);
        let alpha_d = (gamma * ad).min(1.0);
        if !(alpha_p.is_finite() && alpha_d.is_finite()) || alpha_p < 1e-12 && alpha_d < 1e-12 {
            status = SolveStatus::NumericalFailure;
            break;
        }

        x += &corr.dxs * alpha_p;
        xl += &corr.dxl * alpha_p;
        y += &corr.dy * alpha_d;
        z += &corr.dzs * alpha_d;
        zl += &corr.dzl * alpha_d;
        x = symmetrize(&x);
        z = symmetrize(&z);
        iterations = iter + 1;
    }

    if status != SolveStatus::Optimal {
        let (pinf, dinf, gap) = metrics;
        if pinf.max(dinf).max(gap) < settings.tol_inaccurate {
            status = SolveStatus::AlmostOptimal;
        } else if let Some((w, yb)) = best {
            if w < settings.tol_inaccurate {
                y = yb;
                status = SolveStatus::AlmostOptimal;
            }
        }
    }

    let scalars: Vec<f64> = y.rows(0, op.ns).iter().cloned().collect();
    let matrix = prog.matrix_var.as_ref().map(|_| op.matrix_from(&y));
    Ok(Solution {
        status,
        objective: op.b.dot(&y),
        upper_bound: cs.dot(&x) + cl.dot(&xl),
        scalars,
        matrix,
        iterations,
        primal_residual: metrics.0,
        dual_residual: metrics.1,
        relative_gap: metrics.2,
    })
}

enum SchurFactor {
    Chol(nalgebra::Cholesky<f64, nalgebra::Dyn>),
    Lu(nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>),
}

impl SchurFactor {
    fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        match self {
            SchurFactor::Chol(c) => c.solve(rhs),
            SchurFactor::Lu(lu) => lu.solve(rhs).unwrap_or_else(|| DVector::zeros(rhs.len())),
        }
    }
}

fn factor_schur(mut m: DMatrix<f64>) -> Option<SchurFactor> {
    let diag_max = m.diagonal().amax().max(1e-300);
    if let Some(c) = m.clone().cholesky() {
        return Some(SchurFactor::Chol(c));
    }
    for scale in [1e-14, 1e-12, 1e-10] {
        let mut reg = m.clone();
        for i in 0..reg.nrows() {
            reg[(i, i)] += scale * diag_max;
        }
        if let Some(c) = reg.cholesky() {
            return Some(SchurFactor::Chol(c));
        }
    }
    for i in 0..m.nrows() {
        m[(i, i)] += 1e-10 * diag_max;
    }
    let lu = m.lu();
    if lu.is_invertible() {
        Some(SchurFactor::Lu(lu))
    } else {
        None
    }
}
