//! Discrete-time LTI state-space algebra.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Margin kept from the unit circle by [`schur_stable`].
pub const EPS_STAB: f64 = 1e-10;

/// Realization `x⁺ = A x + B u`, `y = C x + D u`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpace {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
}

impl StateSpace {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>, d: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::Dimension(format!("A is {}x{}", a.nrows(), a.ncols())));
        }
        if b.nrows() != n {
            return Err(Error::Dimension(format!("B has {} rows, expected {n}", b.nrows())));
        }
        if c.ncols() != n {
            return Err(Error::Dimension(format!("C has {} columns, expected {n}", c.ncols())));
        }
        if d.nrows() != c.nrows() || d.ncols() != b.ncols() {
            return Err(Error::Dimension(format!(
                "D is {}x{}, expected {}x{}",
                d.nrows(),
                d.ncols(),
                c.nrows(),
                b.ncols()
            )));
        }
        for (name, m) in [("A", &a), ("B", &b), ("C", &c), ("D", &d)] {
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(name.into()));
            }
        }
        Ok(Self { a, b, c, d })
    }

    /// Strictly proper realization with `D = 0`.
    pub fn strictly_proper(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>) -> Result<Self> {
        let d = DMatrix::zeros(c.nrows(), b.ncols());
        Self::new(a, b, c, d)
    }

    /// Memoryless gain.
    pub fn static_gain(d: DMatrix<f64>) -> Self {
        let (p, m) = d.shape();
        Self { a: DMatrix::zeros(0, 0), b: DMatrix::zeros(0, m), c: DMatrix::zeros(p, 0), d }
    }

    pub fn identity(n: usize) -> Self {
        Self::static_gain(DMatrix::identity(n, n))
    }

    pub fn n_states(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_inputs(&self) -> usize {
        self.b.ncols()
    }

    pub fn n_outputs(&self) -> usize {
        self.c.nrows()
    }

    pub fn is_stable(&self) -> bool {
        self.n_states() == 0 || schur_stable(&self.a).unwrap_or(false)
    }

    /// `G(e^{jω}) = C (e^{jω} I − A)⁻¹ B + D`.
    pub fn freq_response(&self, omega: f64) -> Result<DMatrix<Complex64>> {
        let d = self.d.map(Complex64::from);
        let n = self.n_states();
        if n == 0 {
            return Ok(d);
        }
        let z = Complex64::from_polar(1.0, omega);
        let m = DMatrix::<Complex64>::identity(n, n) * z - self.a.map(Complex64::from);
        let lu = m.lu();
        let x = lu.solve(&self.b.map(Complex64::from)).ok_or(Error::SingularResolvent { omega })?;
        if x.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::SingularResolvent { omega });
        }
        Ok(self.c.map(Complex64::from) * x + d)
    }

    /// Cascade: the output of `self` drives `next`, giving `next(z)·self(z)`.
    pub fn series(&self, next: &StateSpace) -> Result<StateSpace> {
        if next.n_inputs() != self.n_outputs() {
            return Err(Error::Dimension(format!(
                "series: {} outputs feed {} inputs",
                self.n_outputs(),
                next.n_inputs()
            )));
        }
        let (n1, n2) = (self.n_states(), next.n_states());
        let mut a = DMatrix::zeros(n1 + n2, n1 + n2);
        a.view_mut((0, 0), (n1, n1)).copy_from(&self.a);
        a.view_mut((n1, 0), (n2, n1)).copy_from(&(&next.b * &self.c));
        a.view_mut((n1, n1), (n2, n2)).copy_from(&next.a);
        let mut b = DMatrix::zeros(n1 + n2, self.n_inputs());
        b.view_mut((0, 0), (n1, self.n_inputs())).copy_from(&self.b);
        b.view_mut((n1, 0), (n2, self.n_inputs())).copy_from(&(&next.b * &self.d));
        let mut c = DMatrix::zeros(next.n_outputs(), n1 + n2);
        c.view_mut((0, 0), (next.n_outputs(), n1)).copy_from(&(&next.d * &self.c));
        c.view_mut((0, n1), (next.n_outputs(), n2)).copy_from(&next.c);
        let d = &next.d * &self.d;
        StateSpace::new(a, b, c, d)
    }

    /// Block-diagonal augmentation `diag(self, other)`.
    pub fn diagonal(&self, other: &StateSpace) -> StateSpace {
        let (n1, n2) = (self.n_states(), other.n_states());
        let (m1, m2) = (self.n_inputs(), other.n_inputs());
        let (p1, p2) = (self.n_outputs(), other.n_outputs());
        let mut a = DMatrix::zeros(n1 + n2, n1 + n2);
        a.view_mut((0, 0), (n1, n1)).copy_from(&self.a);
        a.view_mut((n1, n1), (n2, n2)).copy_from(&other.a);
        let mut b = DMatrix::zeros(n1 + n2, m1 + m2);
        b.view_mut((0, 0), (n1, m1)).copy_from(&self.b);
        b.view_mut((n1, m1), (n2, m2)).copy_from(&other.b);
        let mut c = DMatrix::zeros(p1 + p2, n1 + n2);
        c.view_mut((0, 0), (p1, n1)).copy_from(&self.c);
        c.view_mut((p1, n1), (p2, n2)).copy_from(&other.c);
        let mut d = DMatrix::zeros(p1 + p2, m1 + m2);
        d.view_mut((0, 0), (p1, m1)).copy_from(&self.d);
        d.view_mut((p1, m1), (p2, m2)).copy_from(&other.d);
        StateSpace { a, b, c, d }
    }

    /// Vertical stack `[self; other]` driven by a shared input.
    pub fn stack(&self, other: &StateSpace) -> Result<StateSpace> {
        if self.n_inputs() != other.n_inputs() {
            return Err(Error::Dimension(format!(
                "stack: input sizes {} and {}",
                self.n_inputs(),
                other.n_inputs()
            )));
        }
        let (n1, n2) = (self.n_states(), other.n_states());
        let m = self.n_inputs();
        let (p1, p2) = (self.n_outputs(), other.n_outputs());
        let mut a = DMatrix::zeros(n1 + n2, n1 + n2);
        a.view_mut((0, 0), (n1, n1)).copy_from(&self.a);
        a.view_mut((n1, n1), (n2, n2)).copy_from(&other.a);
        let mut b = DMatrix::zeros(n1 + n2, m);
        b.view_mut((0, 0), (n1, m)).copy_from(&self.b);
        b.view_mut((n1, 0), (n2, m)).copy_from(&other.b);
        let mut c = DMatrix::zeros(p1 + p2, n1 + n2);
        c.view_mut((0, 0), (p1, n1)).copy_from(&self.c);
        c.view_mut((p1, n1), (p2, n2)).copy_from(&other.c);
        let mut d = DMatrix::zeros(p1 + p2, m);
        d.view_mut((0, 0), (p1, m)).copy_from(&self.d);
        d.view_mut((p1, 0), (p2, m)).copy_from(&other.d);
        StateSpace::new(a, b, c, d)
    }

    pub fn scale_output(&self, gain: f64) -> StateSpace {
        StateSpace { a: self.a.clone(), b: self.b.clone(), c: &self.c * gain, d: &self.d * gain }
    }

    /// Restriction to the controllable subspace (orthonormal Krylov basis).
    /// Removed modes do not affect the transfer function.
    pub fn controllable_part(&self, tol: f64) -> StateSpace {
        let n = self.n_states();
        if n == 0 {
            return self.clone();
        }
        let scale = self.a.amax().max(self.b.amax()).max(1.0);
        let thresh = tol * scale;
        let mut basis: Vec<nalgebra::DVector<f64>> = Vec::new();
        let mut frontier: Vec<nalgebra::DVector<f64>> = self.b.column_iter().map(|c| c.into_owned()).collect();
        while !frontier.is_empty() && basis.len() < n {
            let mut added = Vec::new();
            for mut v in frontier {
                for _ in 0..2 {
                    for q in &basis {
                        let proj = q.dot(&v);
                        v.axpy(-proj, q, 1.0);
                    }
                }
                let nv = v.norm();
                if nv > thresh && basis.len() < n {
                    let q = v / nv;
                    basis.push(q.clone());
                    added.push(q);
                }
            }
            frontier = added.iter().map(|q| &self.a * q).collect();
        }
        if basis.len() == n {
            return self.clone();
        }
        let v = DMatrix::from_columns(&basis);
        let k = v.ncols();
        StateSpace {
            a: v.transpose() * &self.a * &v,
            b: if k == 0 { DMatrix::zeros(0, self.n_inputs()) } else { v.transpose() * &self.b },
            c: &self.c * &v,
            d: self.d.clone(),
        }
    }
}

/// Eigenvalues of a real square matrix.
pub fn eigenvalues(a: &DMatrix<f64>) -> Result<Vec<Complex64>> {
    check_square(a)?;
    if a.nrows() == 0 {
        return Ok(Vec::new());
    }
    Ok(a.clone().complex_eigenvalues().iter().map(|z| Complex64::new(z.re, z.im)).collect())
}

pub fn spectral_radius(a: &DMatrix<f64>) -> Result<f64> {
    Ok(eigenvalues(a)?.iter().map(|z| z.norm()).fold(0.0, f64::max))
}

/// True iff the spectral radius is below `1 − EPS_STAB`.
pub fn schur_stable(a: &DMatrix<f64>) -> Result<bool> {
    Ok(spectral_radius(a)? < 1.0 - EPS_STAB)
}

fn check_square(a: &DMatrix<f64>) -> Result<()> {
    if a.nrows() != a.ncols() {
        return Err(Error::Dimension(format!("matrix is {}x{}, expected square", a.nrows(), a.ncols())));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("matrix".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Interconnection {
    /// Parts applied in order: the first part sees the external input.
    Series,
    DiagonalAugment,
    /// Scales the output of a single part by the given gain.
    OutputGain(f64),
}

pub fn interconnect(mode: Interconnection, parts: &[StateSpace]) -> Result<StateSpace> {
    let (first, rest) = parts
        .split_first()
        .ok_or_else(|| Error::Dimension("interconnect needs at least one part".into()))?;
    match mode {
        Interconnection::Series => rest.iter().try_fold(first.clone(), |acc, p| acc.series(p)),
        Interconnection::DiagonalAugment => Ok(rest.iter().fold(first.clone(), |acc, p| acc.diagonal(p))),
        Interconnection::OutputGain(k) => {
            if !rest.is_empty() {
                return Err(Error::Dimension("output gain takes exactly one part".into()));
            }
            Ok(first.scale_output(k))
        }
    }
}

/// Steady-state Kalman predictor `x̂⁺ = (A − ALC) x̂ + B u + AL y`.
#[derive(Debug, Clone)]
pub struct ObserverPair {
    /// `(zI − A + ALC)⁻¹ B`
    pub j_u: StateSpace,
    /// `(zI − A + ALC)⁻¹ A L`
    pub j_y: StateSpace,
    pub gain: DMatrix<f64>,
    /// Stationary a-priori error covariance.
    pub covariance: DMatrix<f64>,
}

impl ObserverPair {
    pub fn state_matrix(&self) -> &DMatrix<f64> {
        &self.j_u.a
    }
}

pub const RICCATI_TOL: f64 = 1e-12;
pub const RICCATI_MAX_ITER: usize = 10_000;

fn riccati_step(a: &DMatrix<f64>, c: &DMatrix<f64>, qn: &DMatrix<f64>, rn: &DMatrix<f64>, p: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let s = c * p * c.transpose() + rn;
    let s_inv = s.cholesky()?.inverse();
    let apc = a * p * c.transpose();
    let next = a * p * a.transpose() - &apc * s_inv * apc.transpose() + qn;
    Some((&next + next.transpose()) * 0.5)
}

/// Residual of the filtering Riccati equation at `p`.
pub fn riccati_residual(a: &DMatrix<f64>, c: &DMatrix<f64>, qn: &DMatrix<f64>, rn: &DMatrix<f64>, p: &DMatrix<f64>) -> f64 {
    match riccati_step(a, c, qn, rn, p) {
        Some(next) => (next - p).amax(),
        None => f64::INFINITY,
    }
}

/// Observer gain from the stationary Riccati solution, by fixed-point iteration.
pub fn dare_kalman(a: &DMatrix<f64>, c: &DMatrix<f64>, b: &DMatrix<f64>, qn: &DMatrix<f64>, rn: &DMatrix<f64>) -> Result<ObserverPair> {
    check_square(a)?;
    let n = a.nrows();
    let p_out = c.nrows();
    if c.ncols() != n || b.nrows() != n {
        return Err(Error::Dimension("observer: C or B does not match A".into()));
    }
    if qn.shape() != (n, n) || rn.shape() != (p_out, p_out) {
        return Err(Error::Dimension("observer weights have the wrong size".into()));
    }
    for (name, w) in [("Q_n", qn), ("R_n", rn)] {
        if (w - w.transpose()).amax() > 1e-12 || w.clone().cholesky().is_none() {
            return Err(Error::InvalidInput(format!("{name} must be symmetric positive definite")));
        }
    }

    let mut p = qn.clone();
    let mut residual = f64::INFINITY;
    let mut converged = false;
    for _ in 0..RICCATI_MAX_ITER {
        let next = riccati_step(a, c, qn, rn, &p)
            .ok_or_else(|| Error::InvalidInput("innovation covariance is singular".into()))?;
        residual = (&next - &p).amax();
        p = next;
        if residual <= RICCATI_TOL * p.amax().max(1.0) {
            converged = true;
            break;
        }
    }
    if !converged || p.iter().any(|v| !v.is_finite()) {
        return Err(Error::Convergence { what: "Riccati iteration", iterations: RICCATI_MAX_ITER, residual });
    }
    let s = c * &p * c.transpose() + rn;
    let gain = &p * c.transpose() * s.cholesky().expect("checked above").inverse();
    let obs_a = a - a * &gain * c;
    let eye = DMatrix::identity(n, n);
    let j_u = StateSpace::strictly_proper(obs_a.clone(), b.clone(), eye.clone())?;
    let j_y = StateSpace::strictly_proper(obs_a, a * &gain, eye)?;
    Ok(ObserverPair { j_u, j_y, gain, covariance: p })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plant() -> StateSpace {
        StateSpace::strictly_proper(
            DMatrix::from_row_slice(2, 2, &[0.7, 0.3, 0.8, 0.01]),
            DMatrix::from_column_slice(2, 1, &[1.0, 0.0]),
            DMatrix::from_row_slice(1, 2, &[1.0, 1.5]),
        )
        .unwrap()
    }

    #[test]
    fn example_plant_eigenvalues() {
        let a = plant().a;
        let mut ev: Vec<f64> = eigenvalues(&a).unwrap().iter().map(|z| z.re).collect();
        ev.sort_by(|x, y| y.partial_cmp(x).unwrap());
        assert!((ev[0] - 0.9542).abs() < 5e-5);
        assert!((ev[1] + 0.2442).abs() < 5e-5);
        assert!(schur_stable(&a).unwrap());
    }

    #[test]
    fn schur_edge_cases() {
        assert!(schur_stable(&DMatrix::zeros(3, 3)).unwrap());
        assert!(!schur_stable(&DMatrix::identity(2, 2)).unwrap());
        assert!(schur_stable(&DMatrix::zeros(2, 3)).is_err());
        assert!(schur_stable(&DMatrix::from_element(1, 1, f64::NAN)).is_err());
    }

    #[test]
    fn rejects_inconsistent_dimensions() {
        let err = StateSpace::new(DMatrix::zeros(2, 2), DMatrix::zeros(3, 1), DMatrix::zeros(1, 2), DMatrix::zeros(1, 1));
        assert!(matches!(err, Err(Error::Dimension(_))));
        let g = plant();
        let two_in = StateSpace::static_gain(DMatrix::zeros(1, 2));
        assert!(g.series(&two_in).is_err());
    }

    #[test]
    fn singular_resolvent_detected() {
        let g = StateSpace::strictly_proper(DMatrix::identity(1, 1), DMatrix::identity(1, 1), DMatrix::identity(1, 1)).unwrap();
        assert!(matches!(g.freq_response(0.0), Err(Error::SingularResolvent { .. })));
    }

    #[test]
    fn static_gain_response() {
        let d = DMatrix::from_row_slice(2, 1, &[2.0, -1.0]);
        let g = StateSpace::static_gain(d.clone());
        let r = g.freq_response(1.234).unwrap();
        assert_eq!(r.map(|z| z.re), d);
        assert!(r.iter().all(|z| z.im == 0.0));
    }

    #[test]
    fn dare_trivial_case() {
        let a = DMatrix::zeros(2, 2);
        let c = DMatrix::identity(2, 2);
        let obs = dare_kalman(&a, &c, &DMatrix::zeros(2, 1), &DMatrix::identity(2, 2), &DMatrix::identity(2, 2)).unwrap();
        assert!((&obs.gain - DMatrix::identity(2, 2) * 0.5).amax() < 1e-14);
        assert!(obs.state_matrix().amax() == 0.0);
    }

    #[test]
    fn dare_rejects_indefinite_weight() {
        let g = plant();
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(dare_kalman(&g.a, &g.c, &g.b, &bad, &DMatrix::identity(1, 1)).is_err());
    }

    #[test]
    fn controllable_part_drops_unreachable_mode() {
        let a = DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 0.2]);
        let b = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let c = DMatrix::from_row_slice(1, 2, &[1.0, 3.0]);
        let g = StateSpace::strictly_proper(a, b, c).unwrap();
        let r = g.controllable_part(1e-10);
        assert_eq!(r.n_states(), 1);
        for w in [0.0, 0.7, 2.0] {
            let diff = g.freq_response(w).unwrap() - r.freq_response(w).unwrap();
            assert!(diff.iter().all(|z| z.norm() < 1e-12));
        }
    }
}
