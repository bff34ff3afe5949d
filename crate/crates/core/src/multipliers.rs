//! Zames-Falb type IQC multipliers for the barrier MPC map, their FIR
//! factorization `Π = Ψ* K Ψ` and the class constraints on the parameters.
//!
//! The multiplier acts on the pair `(θ, U)` through the quadratic form
//! `2 Re U* M (θ − H̃U)` with `M(z) = R_0 + Σ_{j≠0} R_j (1 − z^j)`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::lti::StateSpace;
use crate::mpc::ConstraintSet;

/// Lower bound on `R_0`, standing in for the strict inequality `R_0 > 0`.
pub const EPS_POS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MultiplierClass {
    /// `M = R_0 I`: the plain slope (sector) bound.
    StaticSector,
    /// `M(z) = m(z) I` with one scalar FIR filter for all channels.
    ZfSiso,
    /// One scalar FIR filter per constraint block.
    CzfDiagonal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct MultiplierSpec {
    pub class: MultiplierClass,
    pub n_minus: usize,
    pub n_plus: usize,
}

impl MultiplierSpec {
    pub fn new(class: MultiplierClass, n_minus: usize, n_plus: usize) -> Result<Self> {
        if class == MultiplierClass::StaticSector && (n_minus > 0 || n_plus > 0) {
            return Err(Error::Structure("static sector multipliers have no dynamic taps".into()));
        }
        Ok(Self { class, n_minus, n_plus })
    }

    pub fn static_sector() -> Self {
        Self { class: MultiplierClass::StaticSector, n_minus: 0, n_plus: 0 }
    }

    /// Symmetric tap range `j ∈ {−n, …, n}`.
    pub fn symmetric(class: MultiplierClass, n: usize) -> Result<Self> {
        Self::new(class, n, n)
    }

    /// Length of the delay lines in `Ψ`.
    pub fn order(&self) -> usize {
        self.n_minus.max(self.n_plus)
    }

    pub fn taps(&self) -> impl Iterator<Item = i64> {
        -(self.n_minus as i64)..=(self.n_plus as i64)
    }

    pub fn n_taps(&self) -> usize {
        self.n_minus + self.n_plus + 1
    }
}

/// Channel grouping of the multiplier: `R_j = Σ_g r_{j,g} P_g` with
/// orthogonal projectors `P_g` summing to the identity.
#[derive(Debug, Clone)]
pub struct MultiplierStructure {
    projectors: Vec<DMatrix<f64>>,
}

impl MultiplierStructure {
    /// A single group: `R_j = r_j I`.
    pub fn scalar(n: usize) -> Self {
        Self { projectors: vec![DMatrix::identity(n, n)] }
    }

    /// One group per constraint block, plus the unconstrained complement.
    pub fn from_constraints(set: &ConstraintSet) -> Result<Self> {
        if !set.is_separable() {
            return Err(Error::Structure("block-diagonal multipliers need box or staged constraints".into()));
        }
        let n = set.n_vars();
        let mut projectors = Vec::new();
        let mut covered = DMatrix::zeros(n, n);
        for i in 0..set.blocks().len() {
            let basis = set.block_basis(i);
            let p = basis.transpose() * &basis;
            covered += &p;
            projectors.push(p);
        }
        let complement = DMatrix::identity(n, n) - covered;
        if complement.amax() > 1e-10 {
            projectors.push(complement);
        }
        Ok(Self { projectors })
    }

    /// Grouping implied by the multiplier class.
    pub fn for_class(class: MultiplierClass, set: &ConstraintSet) -> Result<Self> {
        match class {
            MultiplierClass::StaticSector | MultiplierClass::ZfSiso => Ok(Self::scalar(set.n_vars())),
            MultiplierClass::CzfDiagonal => Self::from_constraints(set),
        }
    }

    pub fn n_channels(&self) -> usize {
        self.projectors[0].nrows()
    }

    pub fn n_groups(&self) -> usize {
        self.projectors.len()
    }

    pub fn projectors(&self) -> &[DMatrix<f64>] {
        &self.projectors
    }
}

/// Multiplier parameters `r_{j,g}`, stored tap-major: index `(j + n_minus)·G + g`.
#[derive(Debug, Clone)]
pub struct Multiplier {
    pub spec: MultiplierSpec,
    pub structure: MultiplierStructure,
    pub params: DVector<f64>,
}

impl Multiplier {
    pub fn new(spec: MultiplierSpec, structure: MultiplierStructure, params: DVector<f64>) -> Result<Self> {
        let expect = spec.n_taps() * structure.n_groups();
        if params.len() != expect {
            return Err(Error::Structure(format!("expected {expect} multiplier parameters, got {}", params.len())));
        }
        if spec.class != MultiplierClass::CzfDiagonal && structure.n_groups() != 1 {
            return Err(Error::Structure("this multiplier class uses a single channel group".into()));
        }
        Ok(Self { spec, structure, params })
    }

    pub fn param_index(spec: &MultiplierSpec, n_groups: usize, j: i64, g: usize) -> usize {
        (j + spec.n_minus as i64) as usize * n_groups + g
    }

    /// `R_j` (zero outside the tap range).
    pub fn r(&self, j: i64) -> DMatrix<f64> {
        let n = self.structure.n_channels();
        if j < -(self.spec.n_minus as i64) || j > self.spec.n_plus as i64 {
            return DMatrix::zeros(n, n);
        }
        let g_count = self.structure.n_groups();
        let mut out = DMatrix::zeros(n, n);
        for (g, p) in self.structure.projectors.iter().enumerate() {
            out += p * self.params[Self::param_index(&self.spec, g_count, j, g)];
        }
        out
    }

    /// `M(e^{jω})`.
    pub fn m_frequency(&self, omega: f64) -> DMatrix<Complex64> {
        let mut m = self.r(0).map(Complex64::from);
        for j in self.spec.taps().filter(|&j| j != 0) {
            let factor = Complex64::new(1.0, 0.0) - Complex64::from_polar(1.0, omega * j as f64);
            m += self.r(j).map(|v| factor * v);
        }
        m
    }

    /// Static part `H_s = Σ_j R_j` and the taps `−R_j` of the impulse response.
    pub fn dominance_margin(&self) -> f64 {
        let n = self.structure.n_channels();
        let mut hs = DMatrix::zeros(n, n);
        for j in self.spec.taps() {
            hs += self.r(j);
        }
        let mut margin = f64::INFINITY;
        for i in 0..n {
            let mut row = 0.0;
            let mut col = 0.0;
            for k in 0..n {
                if k != i {
                    row += hs[(i, k)].abs();
                    col += hs[(k, i)].abs();
                }
            }
            for j in self.spec.taps().filter(|&j| j != 0) {
                let rj = self.r(j);
                for k in 0..n {
                    row += rj[(i, k)].abs();
                    col += rj[(k, i)].abs();
                }
            }
            margin = margin.min(hs[(i, i)] - row).min(hs[(i, i)] - col);
        }
        margin
    }
}

/// `[[0, I], [I, −2H̃]]`
pub fn static_multiplier(h_tilde: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = h_tilde.nrows();
    if h_tilde.ncols() != n {
        return Err(Error::Dimension("H̃ must be square".into()));
    }
    let mut pi = DMatrix::zeros(2 * n, 2 * n);
    pi.view_mut((0, n), (n, n)).fill_with_identity();
    pi.view_mut((n, 0), (n, n)).fill_with_identity();
    pi.view_mut((n, n), (n, n)).copy_from(&(h_tilde * -2.0));
    Ok(pi)
}

/// `Π(e^{jω}) = [[0, M*], [M, −MH̃ − H̃M*]]` on `(θ, U)`.
pub fn pi_frequency(mult: &Multiplier, h_tilde: &DMatrix<f64>, omega: f64) -> Result<DMatrix<Complex64>> {
    let n = mult.structure.n_channels();
    if h_tilde.shape() != (n, n) {
        return Err(Error::Dimension("H̃ does not match the multiplier channels".into()));
    }
    let m = mult.m_frequency(omega);
    let mh = m.adjoint();
    let hc = h_tilde.map(Complex64::from);
    let mut pi = DMatrix::zeros(2 * n, 2 * n);
    pi.view_mut((0, n), (n, n)).copy_from(&mh);
    pi.view_mut((n, 0), (n, n)).copy_from(&m);
    pi.view_mut((n, n), (n, n)).copy_from(&(-(&m * &hc) - &hc * &mh));
    Ok(pi)
}

/// `Ψ₁₁ = [I; (1 − z⁻¹)I; …; (1 − z^{−N})I]` on an `n`-channel signal.
pub fn psi11(n: usize, order: usize) -> StateSpace {
    let ns = n * order;
    let mut a = DMatrix::zeros(ns, ns);
    let mut b = DMatrix::zeros(ns, n);
    let mut c = DMatrix::zeros(n * (order + 1), ns);
    let mut d = DMatrix::zeros(n * (order + 1), n);
    d.view_mut((0, 0), (n, n)).fill_with_identity();
    if order > 0 {
        b.view_mut((0, 0), (n, n)).fill_with_identity();
    }
    for k in 1..=order {
        if k > 1 {
            a.view_mut(((k - 1) * n, (k - 2) * n), (n, n)).fill_with_identity();
        }
        d.view_mut((k * n, 0), (n, n)).fill_with_identity();
        c.view_mut((k * n, (k - 1) * n), (n, n)).fill_diagonal(-1.0);
    }
    StateSpace { a, b, c, d }
}

/// `Ψ = diag(Ψ₁₁, Ψ₁₁)` acting on `(θ, U)`.
pub fn psi_realize(n: usize, order: usize) -> StateSpace {
    let p = psi11(n, order);
    p.diagonal(&p)
}

/// Symmetric `K` with `Ψ* K Ψ = Π`, on the stacked filter outputs
/// `[ψ_0 θ; …; ψ_N θ; ψ_0 U; …; ψ_N U]`, `ψ_0 = 1`, `ψ_k = 1 − z^{−k}`.
pub fn assemble_k(mult: &Multiplier, h_tilde: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = mult.structure.n_channels();
    if h_tilde.shape() != (n, n) {
        return Err(Error::Dimension("H̃ does not match the multiplier channels".into()));
    }
    let order = mult.spec.order();
    let nb = order + 1;
    // X[b][a]: coefficient of (ψ_b U)* · (ψ_a θ) in U* M θ.
    let mut x = vec![vec![DMatrix::<f64>::zeros(n, n); nb]; nb];
    x[0][0] = mult.r(0);
    for k in 1..=order as i64 {
        x[0][k as usize] = mult.r(-k);
        x[k as usize][0] = mult.r(k);
    }
    let half = n * nb;
    let mut k = DMatrix::zeros(2 * half, 2 * half);
    for bi in 0..nb {
        for ai in 0..nb {
            let xb = &x[bi][ai];
            if xb.amax() == 0.0 {
                continue;
            }
            // 2 Re t*X s  →  K_ts = X, K_st = Xᵀ
            k.view_mut((half + bi * n, ai * n), (n, n)).copy_from(xb);
            k.view_mut((ai * n, half + bi * n), (n, n)).copy_from(&xb.transpose());
            // −2 Re t* X H̃ t  →  K_tt −= X H̃ + (X H̃)ᵀ on the (b, a) / (a, b) blocks
            let y = xb * h_tilde;
            let mut blk = k.view_mut((half + bi * n, half + ai * n), (n, n));
            blk -= &y;
            let mut blk = k.view_mut((half + ai * n, half + bi * n), (n, n));
            blk -= y.transpose();
        }
    }
    Ok(k)
}

/// Linear constraint `params[index] ≥ lower`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamBound {
    pub index: usize,
    pub lower: f64,
}

/// Class constraints: `R_0 ≥ ε_pos`, `R_j ≥ 0` for `j ≠ 0`, group-wise.
pub fn multiplier_constraint_set(spec: &MultiplierSpec, n_groups: usize) -> Vec<ParamBound> {
    let mut out = Vec::new();
    for j in spec.taps() {
        for g in 0..n_groups {
            let index = Multiplier::param_index(spec, n_groups, j, g);
            out.push(ParamBound { index, lower: if j == 0 { EPS_POS } else { 0.0 } });
        }
    }
    out
}

/// Time-domain value of the multiplier quadratic form on finite sequences
/// (zero outside the window): `Σ_k 2 U_kᵀ (M ζ)_k`, `ζ = θ − H̃U`. The IQC
/// asserts this is non-negative whenever `U = φ(θ)` pointwise.
pub fn iqc_time_sum(mult: &Multiplier, h_tilde: &DMatrix<f64>, theta: &[DVector<f64>], u: &[DVector<f64>]) -> Result<f64> {
    if theta.len() != u.len() {
        return Err(Error::Dimension("θ and U sequences differ in length".into()));
    }
    let zeta: Vec<DVector<f64>> = theta.iter().zip(u).map(|(t, v)| t - h_tilde * v).collect();
    let len = zeta.len() as i64;
    let mut hs = mult.r(0);
    for j in mult.spec.taps().filter(|&j| j != 0) {
        hs += mult.r(j);
    }
    let mut total = 0.0;
    for k in 0..len {
        let mut mz = &hs * &zeta[k as usize];
        for j in mult.spec.taps().filter(|&j| j != 0) {
            let idx = k + j;
            if (0..len).contains(&idx) {
                mz -= mult.r(j) * &zeta[idx as usize];
            }
        }
        total += 2.0 * u[k as usize].dot(&mz);
    }
    Ok(total)
}
