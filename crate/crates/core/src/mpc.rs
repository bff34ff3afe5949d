//! Condensed MPC with recentered (or relaxed) logarithmic barriers.
//!
//! The controller map is `φ(θ) = argmin ½UᵀHU − θᵀU + μB(U)` with `θ = −S x`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Fraction of the current slack each Newton step must preserve.
const BOUNDARY_FRACTION: f64 = 0.01;
pub const NEWTON_TOL: f64 = 1e-10;
pub const NEWTON_MAX_ITER: usize = 200;
/// Default relaxation threshold as a fraction of `W_i`.
pub const DEFAULT_RELAX_FRACTION: f64 = 0.1;

/// Prediction matrices `H = 2(ΓᵀQ̄Γ + R̄)` and `S = 2ΓᵀQ̄Ω`, so that the
/// stationarity condition of the condensed problem reads `HU − θ = 0` with
/// `θ = −S x`.
pub fn condense(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>, horizon: usize) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let nx = a.nrows();
    let nu = b.ncols();
    if horizon == 0 {
        return Err(Error::InvalidInput("horizon must be at least 1".into()));
    }
    if a.ncols() != nx || b.nrows() != nx || q.shape() != (nx, nx) || r.shape() != (nu, nu) {
        return Err(Error::Dimension("condense: A, B, Q, R sizes are inconsistent".into()));
    }
    if r.clone().cholesky().is_none() || (r - r.transpose()).amax() > 1e-12 {
        return Err(Error::InvalidInput("R must be symmetric positive definite".into()));
    }
    let n = horizon;
    // powers[i] = A^i
    let mut powers = vec![DMatrix::identity(nx, nx)];
    for i in 1..=n {
        powers.push(a * &powers[i - 1]);
    }
    let mut gamma = DMatrix::zeros(n * nx, n * nu);
    let mut omega = DMatrix::zeros(n * nx, nx);
    for i in 0..n {
        omega.view_mut((i * nx, 0), (nx, nx)).copy_from(&powers[i + 1]);
        for l in 0..=i {
            gamma.view_mut((i * nx, l * nu), (nx, nu)).copy_from(&(&powers[i - l] * b));
        }
    }
    let qbar = block_diag_repeat(q, n);
    let rbar = block_diag_repeat(r, n);
    let gq = gamma.transpose() * &qbar;
    let h = (&gq * &gamma + rbar) * 2.0;
    let h = (&h + h.transpose()) * 0.5;
    let s = gq * omega * 2.0;
    Ok((h, s))
}

pub fn block_diag_repeat(m: &DMatrix<f64>, count: usize) -> DMatrix<f64> {
    let (r, c) = m.shape();
    let mut out = DMatrix::zeros(r * count, c * count);
    for i in 0..count {
        out.view_mut((i * r, i * c), (r, c)).copy_from(m);
    }
    out
}

/// Selector `E = [I 0 … 0]` picking the first move out of the stacked inputs.
pub fn first_move_selector(nu: usize, horizon: usize) -> DMatrix<f64> {
    let mut e = DMatrix::zeros(nu, nu * horizon);
    e.view_mut((0, 0), (nu, nu)).fill_with_identity();
    e
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConstraintKind {
    Box,
    Staged,
    Polytope,
}

/// Linear constraint set `L U ≤ W` with `W > 0`, so the origin is interior.
///
/// Box and staged sets keep their row blocks; blocks are mutually orthogonal
/// (`L_i L_jᵀ = 0`).
#[derive(Debug, Clone)]
pub struct ConstraintSet {
    kind: ConstraintKind,
    l: DMatrix<f64>,
    w: DVector<f64>,
    blocks: Vec<std::ops::Range<usize>>,
}

const ORTHO_TOL: f64 = 1e-10;

impl ConstraintSet {
    /// Coordinate bounds `lower ≤ U ≤ upper`. Infinite bounds produce no row.
    pub fn boxed(lower: &[f64], upper: &[f64]) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(Error::Dimension("box bounds must have equal, non-zero length".into()));
        }
        let n = lower.len();
        let mut rows = Vec::new();
        let mut w = Vec::new();
        let mut blocks = Vec::new();
        for i in 0..n {
            if lower[i].is_nan() || upper[i].is_nan() || !(lower[i] < 0.0 && upper[i] > 0.0) {
                return Err(Error::InvalidInput(format!(
                    "box bounds [{}, {}] on coordinate {i} must strictly contain 0",
                    lower[i], upper[i]
                )));
            }
            let start = rows.len();
            if upper[i].is_finite() {
                let mut row = DVector::zeros(n);
                row[i] = 1.0;
                rows.push(row);
                w.push(upper[i]);
            }
            if lower[i].is_finite() {
                let mut row = DVector::zeros(n);
                row[i] = -1.0;
                rows.push(row);
                w.push(-lower[i]);
            }
            if rows.len() > start {
                blocks.push(start..rows.len());
            }
        }
        Ok(Self { kind: ConstraintKind::Box, l: rows_to_matrix(&rows, n), w: DVector::from_vec(w), blocks })
    }

    /// Per-stage input bounds repeated over the horizon.
    pub fn horizon_box(lower: &[f64], upper: &[f64], horizon: usize) -> Result<Self> {
        let lo: Vec<f64> = (0..horizon).flat_map(|_| lower.iter().copied()).collect();
        let hi: Vec<f64> = (0..horizon).flat_map(|_| upper.iter().copied()).collect();
        Self::boxed(&lo, &hi)
    }

    /// Staged constraints from blocks `(L_i, W_i)` with `L_i L_jᵀ = 0` for `i ≠ j`.
    pub fn staged(blocks: Vec<(DMatrix<f64>, DVector<f64>)>) -> Result<Self> {
        let n = blocks.first().map(|(l, _)| l.ncols()).ok_or_else(|| Error::InvalidInput("no blocks".into()))?;
        for (i, (li, wi)) in blocks.iter().enumerate() {
            if li.ncols() != n || li.nrows() != wi.len() || li.nrows() == 0 {
                return Err(Error::Dimension(format!("staged block {i} has inconsistent size")));
            }
            for (lj, _) in blocks.iter().skip(i + 1) {
                let cross = li * lj.transpose();
                if cross.amax() > ORTHO_TOL * li.amax().max(lj.amax()).max(1.0) {
                    return Err(Error::InvalidInput(format!("staged block {i} is not orthogonal to a later block")));
                }
            }
        }
        let total: usize = blocks.iter().map(|(l, _)| l.nrows()).sum();
        let mut l = DMatrix::zeros(total, n);
        let mut w = DVector::zeros(total);
        let mut ranges = Vec::new();
        let mut at = 0;
        for (li, wi) in &blocks {
            l.view_mut((at, 0), (li.nrows(), n)).copy_from(li);
            w.rows_mut(at, wi.len()).copy_from(wi);
            ranges.push(at..at + li.nrows());
            at += li.nrows();
        }
        let set = Self { kind: ConstraintKind::Staged, l, w, blocks: ranges };
        set.check_data()?;
        Ok(set)
    }

    pub fn polytope(l: DMatrix<f64>, w: DVector<f64>) -> Result<Self> {
        if l.nrows() != w.len() || l.ncols() == 0 {
            return Err(Error::Dimension("polytope: L and W sizes differ".into()));
        }
        let blocks: Vec<_> = (l.nrows() > 0).then(|| 0..l.nrows()).into_iter().collect();
        let set = Self { kind: ConstraintKind::Polytope, l, w, blocks };
        set.check_data()?;
        Ok(set)
    }

    fn check_data(&self) -> Result<()> {
        if self.l.iter().chain(self.w.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("constraint data".into()));
        }
        if let Some(i) = self.w.iter().position(|&v| v <= 0.0) {
            return Err(Error::InvalidInput(format!("W_{i} must be strictly positive so that 0 is interior")));
        }
        Ok(())
    }

    pub fn kind(&self) -> ConstraintKind {
        self.kind
    }

    pub fn l(&self) -> &DMatrix<f64> {
        &self.l
    }

    pub fn w(&self) -> &DVector<f64> {
        &self.w
    }

    pub fn n_vars(&self) -> usize {
        self.l.ncols()
    }

    pub fn n_rows(&self) -> usize {
        self.l.nrows()
    }

    /// Row ranges of the staged blocks (one per coordinate for boxes).
    pub fn blocks(&self) -> &[std::ops::Range<usize>] {
        &self.blocks
    }

    pub fn is_separable(&self) -> bool {
        matches!(self.kind, ConstraintKind::Box | ConstraintKind::Staged)
    }

    pub fn slacks(&self, u: &DVector<f64>) -> DVector<f64> {
        &self.w - &self.l * u
    }

    pub fn contains(&self, u: &DVector<f64>) -> bool {
        self.slacks(u).iter().all(|&s| s >= 0.0)
    }

    /// Orthonormal basis (as rows) of the span of the rows of block `i`.
    pub fn block_basis(&self, i: usize) -> DMatrix<f64> {
        let range = self.blocks[i].clone();
        let li = self.l.rows(range.start, range.len()).into_owned();
        row_space_basis(&li)
    }

    /// Coordinate bounds of box sets: `(lower, upper)` per coordinate.
    pub fn box_bounds(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        if self.kind != ConstraintKind::Box {
            return None;
        }
        let n = self.n_vars();
        let mut lo = vec![f64::NEG_INFINITY; n];
        let mut hi = vec![f64::INFINITY; n];
        for r in 0..self.n_rows() {
            let (idx, &val) = self.l.row(r).iter().enumerate().find(|(_, v)| **v != 0.0).expect("box row");
            if val > 0.0 {
                hi[idx] = self.w[r] / val;
            } else {
                lo[idx] = self.w[r] / val;
            }
        }
        Some((lo, hi))
    }

    /// Restriction of block `i` to coordinates `q` with `U = L̄ᵢᵀ q`.
    fn block_in_basis(&self, i: usize, basis: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
        let range = self.blocks[i].clone();
        let li = self.l.rows(range.start, range.len()).into_owned();
        (li * basis.transpose(), self.w.rows(range.start, range.len()).into_owned())
    }
}

fn rows_to_matrix(rows: &[DVector<f64>], n: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(rows.len(), n);
    for (i, r) in rows.iter().enumerate() {
        m.set_row(i, &r.transpose());
    }
    m
}

/// Orthonormal rows spanning the row space of `m`.
pub fn row_space_basis(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.ncols();
    if m.nrows() == 0 {
        return DMatrix::zeros(0, n);
    }
    let gram = m.transpose() * m;
    let eig = gram.symmetric_eigen();
    let top = eig.eigenvalues.amax();
    let keep: Vec<usize> = (0..n).filter(|&k| eig.eigenvalues[k] > 1e-12 * top.max(1e-300)).collect();
    let mut basis = DMatrix::zeros(keep.len(), n);
    for (r, &k) in keep.iter().enumerate() {
        basis.set_row(r, &eig.eigenvectors.column(k).transpose());
    }
    basis
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BarrierKind {
    /// `−ln(W_i − L_iU) + ln W_i − L_iU / W_i`
    GradientRecentered,
    /// `(1 + w_i)(−ln(W_i − L_iU) + ln W_i)`, with weights making `∇B(0) = 0`.
    WeightRecentered { weights: Vec<f64> },
    /// Gradient-recentered barrier whose logarithm is replaced below slack
    /// `δ_i` by the quadratic with matching value, slope and curvature.
    Relaxed { delta: Vec<f64> },
}

impl BarrierKind {
    /// Relaxed barrier with `δ_i = 0.1 W_i`.
    pub fn relaxed_default(set: &ConstraintSet) -> Self {
        BarrierKind::Relaxed { delta: set.w().iter().map(|w| DEFAULT_RELAX_FRACTION * w).collect() }
    }

    /// Smallest weights recentering a set whose rows come in opposite pairs
    /// (boxes and slab blocks): `1 + w_i ∝ W_i` within each pair.
    pub fn weighted_for_pairs(set: &ConstraintSet) -> Result<Self> {
        let mut weights = vec![0.0; set.n_rows()];
        for range in set.blocks() {
            if range.len() != 2 {
                return Err(Error::Unsupported("automatic recentering weights need opposite row pairs".into()));
            }
            let (i, j) = (range.start, range.start + 1);
            let (ri, rj) = (set.l().row(i), set.l().row(j));
            let ni = ri.norm();
            let nj = rj.norm();
            if (ri / ni + rj / nj).amax() > 1e-12 {
                return Err(Error::Unsupported("automatic recentering weights need opposite row pairs".into()));
            }
            // (1+w_i) n_i / W_i = (1+w_j) n_j / W_j
            let ci = set.w()[i] / ni;
            let cj = set.w()[j] / nj;
            let base = ci.min(cj);
            weights[i] = ci / base - 1.0;
            weights[j] = cj / base - 1.0;
        }
        Ok(BarrierKind::WeightRecentered { weights })
    }
}

/// Per-row data of a separable barrier `Σ_i scale_i (ℓ_i(z_i) + ln W_i) − lin_i L_iU`,
/// `z = W − LU`, `ℓ = −ln` (or its quadratic extension below `δ_i`).
#[derive(Debug, Clone)]
pub(crate) struct RowBarrier {
    pub l: DMatrix<f64>,
    pub w: DVector<f64>,
    pub scale: DVector<f64>,
    pub lin: DVector<f64>,
    pub delta: Option<DVector<f64>>,
}

/// Quadratic extension of `−ln` at `δ`: value, first and second derivative.
pub fn relaxed_log(z: f64, delta: f64) -> (f64, f64, f64) {
    if z > delta {
        (-z.ln(), -1.0 / z, 1.0 / (z * z))
    } else {
        let t = z - delta;
        (-delta.ln() - t / delta + t * t / (2.0 * delta * delta), -1.0 / delta + t / (delta * delta), 1.0 / (delta * delta))
    }
}

impl RowBarrier {
    pub(crate) fn new(set: &ConstraintSet, kind: &BarrierKind) -> Result<Self> {
        let rows = set.n_rows();
        let w = set.w().clone();
        let check_len = |v: &Vec<f64>, what: &str| -> Result<()> {
            if v.len() != rows {
                return Err(Error::Dimension(format!("{what} has {} entries for {rows} constraint rows", v.len())));
            }
            Ok(())
        };
        let (scale, lin, delta) = match kind {
            BarrierKind::GradientRecentered => (DVector::from_element(rows, 1.0), w.map(|v| 1.0 / v), None),
            BarrierKind::WeightRecentered { weights } => {
                check_len(weights, "weights")?;
                if weights.iter().any(|v| !v.is_finite() || *v < 0.0) {
                    return Err(Error::InvalidInput("recentering weights must be non-negative".into()));
                }
                (DVector::from_iterator(rows, weights.iter().map(|v| 1.0 + v)), DVector::zeros(rows), None)
            }
            BarrierKind::Relaxed { delta } => {
                check_len(delta, "relaxation thresholds")?;
                for (i, (&d, &wi)) in delta.iter().zip(w.iter()).enumerate() {
                    if !(d > 0.0 && d < wi) {
                        return Err(Error::InvalidInput(format!("relaxation threshold {i} must lie in (0, W_i)")));
                    }
                }
                (DVector::from_element(rows, 1.0), w.map(|v| 1.0 / v), Some(DVector::from_vec(delta.clone())))
            }
        };
        Ok(Self { l: set.l().clone(), w, scale, lin, delta })
    }

    /// Plain (non-recentered) log barrier, used by the exact QP solver.
    pub(crate) fn plain(set: &ConstraintSet) -> Self {
        let rows = set.n_rows();
        Self {
            l: set.l().clone(),
            w: set.w().clone(),
            scale: DVector::from_element(rows, 1.0),
            lin: DVector::zeros(rows),
            delta: None,
        }
    }

    pub(crate) fn is_hard(&self) -> bool {
        self.delta.is_none()
    }

    pub(crate) fn eval(&self, u: &DVector<f64>) -> Result<(f64, DVector<f64>, DMatrix<f64>)> {
        let n = u.len();
        let z = &self.w - &self.l * u;
        let mut value = 0.0;
        let mut grad = DVector::zeros(n);
        let mut hess = DMatrix::zeros(n, n);
        for i in 0..z.len() {
            let (f, df, d2f) = match &self.delta {
                None => {
                    if z[i] <= 0.0 {
                        return Err(Error::Domain(format!("slack {i} is {:e}", z[i])));
                    }
                    (-z[i].ln(), -1.0 / z[i], 1.0 / (z[i] * z[i]))
                }
                Some(d) => relaxed_log(z[i], d[i]),
            };
            let s = self.scale[i];
            let row = self.l.row(i).transpose();
            let lu = self.w[i] - z[i];
            value += s * (f + self.w[i].ln()) - self.lin[i] * lu;
            // d/dU ℓ(W − LU) = −ℓ'(z) Lᵀ
            grad.axpy(-s * df - self.lin[i], &row, 1.0);
            hess.ger(s * d2f, &row, &row, 1.0);
        }
        Ok((value, grad, hess))
    }
}

/// Condensed barrier MPC problem.
#[derive(Debug, Clone)]
pub struct BarrierProblem {
    h: DMatrix<f64>,
    s: DMatrix<f64>,
    constraints: ConstraintSet,
    kind: BarrierKind,
    mu: f64,
    rows: RowBarrier,
}

/// Tolerance on `B(0) = 0` and `∇B(0) = 0`.
pub const RECENTER_TOL: f64 = 1e-10;

const ACTIVE_SET_MAX_ROWS: usize = 12;

impl BarrierProblem {
    pub fn new(h: DMatrix<f64>, s: DMatrix<f64>, constraints: ConstraintSet, kind: BarrierKind, mu: f64) -> Result<Self> {
        let n = h.nrows();
        if h.ncols() != n || s.nrows() != n || constraints.n_vars() != n {
            return Err(Error::Dimension("H, S and the constraint set disagree on the number of inputs".into()));
        }
        if (&h - h.transpose()).amax() > 1e-10 * h.amax().max(1.0) {
            return Err(Error::InvalidInput("H must be symmetric".into()));
        }
        if h.clone().cholesky().is_none() {
            return Err(Error::InvalidInput("H must be positive definite".into()));
        }
        if !(mu > 0.0 && mu.is_finite()) {
            return Err(Error::InvalidInput("mu must be positive".into()));
        }
        let rows = RowBarrier::new(&constraints, &kind)?;
        let (v0, g0, _) = rows.eval(&DVector::zeros(n))?;
        if v0.abs() > RECENTER_TOL || g0.amax() > RECENTER_TOL {
            return Err(Error::InvalidInput(format!(
                "barrier is not recentered at 0 (B(0) = {v0:e}, |∇B(0)| = {:e})",
                g0.amax()
            )));
        }
        Ok(Self { h, s, constraints, kind, mu, rows })
    }

    pub fn h(&self) -> &DMatrix<f64> {
        &self.h
    }

    pub fn s(&self) -> &DMatrix<f64> {
        &self.s
    }

    pub fn constraints(&self) -> &ConstraintSet {
        &self.constraints
    }

    pub fn kind(&self) -> &BarrierKind {
        &self.kind
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn n_inputs(&self) -> usize {
        self.h.nrows()
    }

    pub fn is_hard(&self) -> bool {
        self.rows.is_hard()
    }

    /// `θ = −S x`
    pub fn theta(&self, x: &DVector<f64>) -> DVector<f64> {
        -(&self.s * x)
    }

    /// Barrier value, gradient and Hessian at `u`.
    pub fn barrier_eval(&self, u: &DVector<f64>) -> Result<(f64, DVector<f64>, DMatrix<f64>)> {
        if u.len() != self.n_inputs() {
            return Err(Error::Dimension("barrier_eval: wrong vector length".into()));
        }
        self.rows.eval(u)
    }

    /// Stationarity residual `‖QU − θ + μ∇B(U)‖` with `Q = H`.
    pub fn phi_residual(&self, theta: &DVector<f64>, u: &DVector<f64>) -> Result<f64> {
        let (_, g, _) = self.rows.eval(u)?;
        Ok((&self.h * u - theta + g * self.mu).norm())
    }

    /// `φ(θ)`: the barrier MPC control sequence.
    pub fn phi_solve(&self, theta: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_theta(theta)?;
        newton_minimize(&self.h, theta, &self.rows, self.mu, DVector::zeros(self.n_inputs()), NEWTON_TOL)
    }

    /// `ψ(θ') = argmin ½UᵀU − θ'ᵀU + μB(U)`.
    pub fn psi_solve(&self, theta: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_theta(theta)?;
        let n = self.n_inputs();
        newton_minimize(&DMatrix::identity(n, n), theta, &self.rows, self.mu, DVector::zeros(n), NEWTON_TOL)
    }

    /// `ψ` evaluated block by block: `U = Σ_i L̄ᵢᵀ νᵢ(L̄ᵢ θ') + (I − Σ_i L̄ᵢᵀL̄ᵢ) θ'`.
    pub fn parallel_decompose_solve(&self, theta: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_theta(theta)?;
        if !self.constraints.is_separable() {
            return Err(Error::Unsupported("parallel decomposition needs box or staged constraints".into()));
        }
        let n = self.n_inputs();
        let mut u = theta.clone();
        for (i, range) in self.constraints.blocks().iter().enumerate() {
            let basis = self.constraints.block_basis(i);
            let (lq, wq) = self.constraints.block_in_basis(i, &basis);
            let r = basis.nrows();
            let sub = RowBarrier {
                l: lq,
                w: wq,
                scale: self.rows.scale.rows(range.start, range.len()).into_owned(),
                lin: self.rows.lin.rows(range.start, range.len()).into_owned(),
                delta: self.rows.delta.as_ref().map(|d| d.rows(range.start, range.len()).into_owned()),
            };
            let p = &basis * theta;
            let q = newton_minimize(&DMatrix::identity(r, r), &p, &sub, self.mu, DVector::zeros(r), NEWTON_TOL)?;
            // replace the component of θ' in this block's span by L̄ᵢᵀ νᵢ
            u += basis.transpose() * (q - p);
        }
        debug_assert_eq!(u.len(), n);
        Ok(u)
    }

    /// `θ' = θ + (I − H̃) φ(θ)`.
    pub fn psi_input(&self, theta: &DVector<f64>, phi: &DVector<f64>, h_tilde: &DMatrix<f64>) -> DVector<f64> {
        let n = self.n_inputs();
        theta + (DMatrix::identity(n, n) - h_tilde) * phi
    }

    /// Exact solution of the constrained QP `argmin ½UᵀHU − θᵀU s.t. LU ≤ W`
    /// (the nominal controller), by barrier continuation.
    pub fn qp_solve(&self, theta: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_theta(theta)?;
        if self.constraints.n_rows() <= ACTIVE_SET_MAX_ROWS {
            if let Some(u) = self.qp_active_set(theta) {
                return Ok(u);
            }
        }
        let rows = RowBarrier::plain(&self.constraints);
        let mut u = DVector::zeros(self.n_inputs());
        let mut t = 1.0;
        while t > 1e-11 {
            u = newton_minimize(&self.h, theta, &rows, t, u, NEWTON_TOL)?;
            t *= 0.1;
        }
        Ok(u)
    }

    /// Enumerates active sets and returns the unique KKT point.
    fn qp_active_set(&self, theta: &DVector<f64>) -> Option<DVector<f64>> {
        let n = self.n_inputs();
        let l = self.constraints.l();
        let w = self.constraints.w();
        let m = l.nrows();
        let scale = 1.0 + theta.amax() + w.amax();
        let tol = 1e-9 * scale;
        for mask in 0u32..(1u32 << m) {
            let active: Vec<usize> = (0..m).filter(|i| mask & (1 << i) != 0).collect();
            let k = active.len();
            if k > n {
                continue;
            }
            let mut kkt = DMatrix::zeros(n + k, n + k);
            kkt.view_mut((0, 0), (n, n)).copy_from(&self.h);
            let mut rhs = DVector::zeros(n + k);
            rhs.rows_mut(0, n).copy_from(theta);
            for (j, &i) in active.iter().enumerate() {
                for c in 0..n {
                    kkt[(n + j, c)] = l[(i, c)];
                    kkt[(c, n + j)] = l[(i, c)];
                }
                rhs[n + j] = w[i];
            }
            let Some(sol) = kkt.lu().solve(&rhs) else { continue };
            let u = sol.rows(0, n).into_owned();
            let multipliers_ok = sol.rows(n, k).iter().all(|&nu| nu >= -tol);
            let feasible = (w - l * &u).iter().all(|&z| z >= -tol);
            if multipliers_ok && feasible && u.iter().all(|v| v.is_finite()) {
                return Some(u);
            }
        }
        None
    }

    fn check_theta(&self, theta: &DVector<f64>) -> Result<()> {
        if theta.len() != self.n_inputs() {
            return Err(Error::Dimension(format!("theta has length {}, expected {}", theta.len(), self.n_inputs())));
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("theta".into()));
        }
        Ok(())
    }
}

/// Damped Newton with a fraction-to-boundary rule and Armijo backtracking on
/// `½UᵀQU − θᵀU + μB(U)`.
pub(crate) fn newton_minimize(q: &DMatrix<f64>, theta: &DVector<f64>, rows: &RowBarrier, mu: f64, start: DVector<f64>, tol: f64) -> Result<DVector<f64>> {
    let objective = |u: &DVector<f64>| -> Result<(f64, DVector<f64>, DMatrix<f64>)> {
        let (b, gb, hb) = rows.eval(u)?;
        let qu = q * u;
        let f = 0.5 * u.dot(&qu) - theta.dot(u) + mu * b;
        Ok((f, qu - theta + gb * mu, q + hb * mu))
    };
    let mut u = start;
    let (mut f, mut g, mut hs) = objective(&u)?;
    for _ in 0..NEWTON_MAX_ITER {
        let gnorm = g.norm();
        if gnorm <= tol {
            return Ok(u);
        }
        let chol = hs.clone().cholesky().ok_or(Error::Convergence { what: "Newton (indefinite Hessian)", iterations: 0, residual: gnorm })?;
        let d = -chol.solve(&g);
        let slope = g.dot(&d);

        let mut alpha: f64 = 1.0;
        if rows.is_hard() {
            let z = &rows.w - &rows.l * &u;
            let ld = &rows.l * &d;
            for i in 0..z.len() {
                if ld[i] > 0.0 {
                    alpha = alpha.min((1.0 - BOUNDARY_FRACTION) * z[i] / ld[i]);
                }
            }
        }
        let mut accepted = false;
        while alpha > 1e-16 {
            let cand = &u + &d * alpha;
            if let Ok((fc, gc, hc)) = objective(&cand) {
                let slack = 1e-13 * (1.0 + f.abs());
                if fc <= f + 1e-4 * alpha * slope + slack {
                    u = cand;
                    f = fc;
                    g = gc;
                    hs = hc;
                    accepted = true;
                    break;
                }
            }
            alpha *= 0.5;
        }
        if !accepted {
            // Rounding floor: the Newton decrement is already negligible.
            if -slope < 1e-24 {
                return Ok(u);
            }
            return Err(Error::Convergence { what: "Newton line search", iterations: 0, residual: gnorm });
        }
    }
    let residual = g.norm();
    Err(Error::Convergence { what: "Newton", iterations: NEWTON_MAX_ITER, residual })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_problem(mu: f64) -> BarrierProblem {
        let set = ConstraintSet::boxed(&[-2.0], &[1.0]).unwrap();
        BarrierProblem::new(DMatrix::from_element(1, 1, 0.5), DMatrix::zeros(1, 1), set, BarrierKind::GradientRecentered, mu).unwrap()
    }

    #[test]
    fn scalar_barrier_matches_closed_form() {
        let p = scalar_problem(1.0);
        for &u in &[-1.9, -1.0, -0.3, 0.0, 0.5, 0.99] {
            let (v, g, h) = p.barrier_eval(&DVector::from_element(1, u)).unwrap();
            let expect = -(1.0 - u).ln() - (2.0 + u).ln() - 0.5 * u + 2.0_f64.ln();
            // the recentered form also adds ln(W) terms so that B(0) = 0
            assert!((v - expect).abs() < 1e-12, "u={u}");
            let dexp = 1.0 / (1.0 - u) - 1.0 / (2.0 + u) - 0.5;
            assert!((g[0] - dexp).abs() < 1e-12);
            let hexp = 1.0 / (1.0 - u).powi(2) + 1.0 / (2.0 + u).powi(2);
            assert!((h[(0, 0)] - hexp).abs() < 1e-10);
        }
    }

    #[test]
    fn barrier_vanishes_at_origin() {
        let set = ConstraintSet::horizon_box(&[-0.5], &[1.0], 3).unwrap();
        for kind in [
            BarrierKind::GradientRecentered,
            BarrierKind::weighted_for_pairs(&set).unwrap(),
            BarrierKind::relaxed_default(&set),
        ] {
            let rows = RowBarrier::new(&set, &kind).unwrap();
            let (v, g, h) = rows.eval(&DVector::zeros(3)).unwrap();
            assert!(v.abs() < 1e-12 && g.amax() < 1e-12);
            assert!(h.cholesky().is_some());
        }
    }

    #[test]
    fn hard_barrier_outside_domain_is_an_error() {
        let p = scalar_problem(1.0);
        assert!(matches!(p.barrier_eval(&DVector::from_element(1, 1.0)), Err(Error::Domain(_))));
        assert!(matches!(p.barrier_eval(&DVector::from_element(1, -3.0)), Err(Error::Domain(_))));
    }

    #[test]
    fn relaxed_log_is_c2_at_threshold() {
        for &d in &[0.05, 0.1, 1.0] {
            let below = relaxed_log(d, d);
            let (f, df, d2f) = (-d.ln(), -1.0 / d, 1.0 / (d * d));
            assert!((below.0 - f).abs() < 1e-12 && (below.1 - df).abs() < 1e-12 && (below.2 - d2f).abs() < 1e-10);
        }
    }

    #[test]
    fn phi_at_zero_is_zero() {
        let p = scalar_problem(0.8);
        assert_eq!(p.phi_solve(&DVector::zeros(1)).unwrap()[0], 0.0);
        assert_eq!(p.psi_solve(&DVector::zeros(1)).unwrap()[0], 0.0);
    }

    #[test]
    fn condense_single_step_and_zero_input() {
        let a = DMatrix::from_row_slice(2, 2, &[0.7, 0.3, 0.8, 0.01]);
        let b = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let q = DMatrix::identity(2, 2);
        let r = DMatrix::from_element(1, 1, 0.1);
        let (h, _) = condense(&a, &b, &q, &r, 1).unwrap();
        let expect = (b.transpose() * &q * &b + &r) * 2.0;
        assert!((h - expect).amax() < 1e-14);
        let (h0, s0) = condense(&a, &DMatrix::zeros(2, 1), &q, &r, 3).unwrap();
        assert!((h0 - block_diag_repeat(&r, 3) * 2.0).amax() < 1e-14);
        assert_eq!(s0.amax(), 0.0);
        assert!(condense(&a, &b, &q, &DMatrix::zeros(1, 1), 2).is_err());
        assert!(condense(&a, &b, &q, &r, 0).is_err());
    }

    #[test]
    fn rejects_non_interior_origin_and_bad_h() {
        assert!(ConstraintSet::boxed(&[0.0], &[1.0]).is_err());
        let set = ConstraintSet::boxed(&[-1.0], &[1.0]).unwrap();
        let bad_h = DMatrix::from_element(1, 1, 0.0);
        assert!(BarrierProblem::new(bad_h, DMatrix::zeros(1, 1), set.clone(), BarrierKind::GradientRecentered, 1.0).is_err());
        let bad_w = BarrierKind::WeightRecentered { weights: vec![0.0, 1.0] };
        assert!(BarrierProblem::new(DMatrix::identity(1, 1), DMatrix::zeros(1, 1), set, bad_w, 1.0).is_err());
    }

    #[test]
    fn staged_blocks_must_be_orthogonal() {
        let b0 = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, -1.0, -1.0]);
        let b1 = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, -1.0, 0.0]);
        let w = DVector::from_vec(vec![1.0, 1.0]);
        assert!(ConstraintSet::staged(vec![(b0, w.clone()), (b1, w)]).is_err());
    }

    #[test]
    fn decomposition_rejects_polytope() {
        let set = ConstraintSet::polytope(DMatrix::from_row_slice(1, 1, &[1.0]), DVector::from_element(1, 1.0)).unwrap();
        let p = BarrierProblem::new(DMatrix::identity(1, 1), DMatrix::zeros(1, 1), set, BarrierKind::GradientRecentered, 1.0).unwrap();
        assert!(matches!(p.parallel_decompose_solve(&DVector::zeros(1)), Err(Error::Unsupported(_))));
    }
}
