//! Strong-convexity parameter `m` of the barrier (`∇²B ⪰ mI` on the feasible
//! set) and the tightened slope matrix `H̃ = H + μ m I`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::mpc::{BarrierProblem, ConstraintKind, ConstraintSet, RowBarrier};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SlopeMethod {
    AnalyticBox,
    AnalyticStaged,
    FallbackZero,
}

#[derive(Debug, Clone)]
pub struct SlopeCertificate {
    pub m: f64,
    pub h_tilde: DMatrix<f64>,
    pub method: SlopeMethod,
    /// Set when `m = 0` was taken because no bound could be computed.
    pub warning: Option<String>,
}

impl SlopeCertificate {
    /// Certificate with a given `m` (`m = 0` recovers the plain slope bound `H`).
    pub fn with_m(p: &BarrierProblem, m: f64, method: SlopeMethod) -> Self {
        let n = p.n_inputs();
        let h_tilde = p.h() + DMatrix::identity(n, n) * (p.mu() * m);
        Self { m, h_tilde, method, warning: None }
    }
}

/// Infimum over `x ∈ (−ℓ, u)` of `α/(u−x)² + β/(ℓ+x)²`.
pub fn pair_bound(u: f64, l: f64, alpha: f64, beta: f64) -> f64 {
    let r = (beta / alpha).cbrt();
    (1.0 + r).powi(2) * (alpha + beta / (r * r)) / (u + l).powi(2)
}

/// Relaxed variant: the logarithmic pieces are replaced by constant curvature
/// `α/δ_u²` and `β/δ_ℓ²` once the slack falls below the thresholds.
pub fn pair_bound_relaxed(u: f64, l: f64, alpha: f64, beta: f64, delta_u: f64, delta_l: f64) -> f64 {
    let r = (beta / alpha).cbrt();
    let x = (r * u - l) / (1.0 + r);
    let mut best = (alpha / (delta_u * delta_u)).min(beta / (delta_l * delta_l));
    if u - x >= delta_u && l + x >= delta_l {
        best = best.min(pair_bound(u, l, alpha, beta));
    }
    best
}

pub fn compute_m(p: &BarrierProblem) -> Result<SlopeCertificate> {
    let rows = RowBarrier::new(p.constraints(), p.kind())?;
    let (m, method, warning) = barrier_m(p.constraints(), &rows);
    let mut cert = SlopeCertificate::with_m(p, m, method);
    cert.warning = warning;
    Ok(cert)
}

fn fallback(msg: &str) -> (f64, SlopeMethod, Option<String>) {
    (0.0, SlopeMethod::FallbackZero, Some(msg.to_string()))
}

fn barrier_m(set: &ConstraintSet, rows: &RowBarrier) -> (f64, SlopeMethod, Option<String>) {
    let method = match set.kind() {
        ConstraintKind::Box => SlopeMethod::AnalyticBox,
        ConstraintKind::Staged => SlopeMethod::AnalyticStaged,
        ConstraintKind::Polytope => return fallback("general polytope: no curvature bound, using m = 0"),
    };
    let n = set.n_vars();
    let mut spanned = 0;
    let mut m = f64::INFINITY;
    for (i, range) in set.blocks().iter().enumerate() {
        let basis = set.block_basis(i);
        spanned += basis.nrows();
        if basis.nrows() != 1 {
            return fallback("staged block of rank above one: using m = 0");
        }
        let dir = basis.row(0).transpose();
        let mut coeff = Vec::with_capacity(range.len());
        for r in range.clone() {
            let c = rows.l.row(r).transpose().dot(&dir);
            let delta = rows.delta.as_ref().map(|d| d[r]);
            coeff.push(SlabRow { c, w: rows.w[r], a: rows.scale[r], delta });
        }
        match slab_bound(&coeff) {
            Some(v) => m = m.min(v),
            None => return fallback("constraint set is unbounded along some direction: using m = 0"),
        }
    }
    if spanned < n {
        return fallback("constraint blocks do not bound every input direction: using m = 0");
    }
    (m, method, None)
}

/// One constraint row `c·s ≤ w` along a block direction, with barrier scale `a`.
#[derive(Debug, Clone, Copy)]
struct SlabRow {
    c: f64,
    w: f64,
    a: f64,
    delta: Option<f64>,
}

/// Lower bound on `inf_s Σ a c² h(w − c s)` where `h(z) = 1/z²` (or `1/max(z, δ)²`
/// when relaxed). `None` if the slab is unbounded on one side.
fn slab_bound(rows: &[SlabRow]) -> Option<f64> {
    let hi = rows.iter().filter(|r| r.c > 0.0).map(|r| r.w / r.c).fold(f64::INFINITY, f64::min);
    let lo = rows.iter().filter(|r| r.c < 0.0).map(|r| r.w / r.c).fold(f64::NEG_INFINITY, f64::max);
    if !hi.is_finite() || !lo.is_finite() {
        return None;
    }
    // Exact closed form for a single opposite pair.
    if rows.len() == 2 && rows[0].c * rows[1].c < 0.0 {
        let (up, dn) = if rows[0].c > 0.0 { (rows[0], rows[1]) } else { (rows[1], rows[0]) };
        let (u, l) = (up.w / up.c, -dn.w / dn.c);
        return Some(match (up.delta, dn.delta) {
            (Some(du), Some(dl)) => pair_bound_relaxed(u, l, up.a, dn.a, du / up.c, dl / -dn.c),
            _ => pair_bound(u, l, up.a, dn.a),
        });
    }
    let relaxed = rows.iter().all(|r| r.delta.is_some());
    // Convex minimization on the region where every logarithm is active.
    let (mut a, mut b) = (lo, hi);
    if relaxed {
        for r in rows {
            let d = r.delta.unwrap_or(0.0);
            let edge = (r.w - d) / r.c;
            if r.c > 0.0 {
                b = b.min(edge);
            } else {
                a = a.max(edge);
            }
        }
    }
    let mut best = f64::INFINITY;
    if relaxed {
        best = rows.iter().map(|r| r.a * r.c * r.c / (r.delta.unwrap() * r.delta.unwrap())).fold(f64::INFINITY, f64::min);
    }
    if a < b {
        best = best.min(convex_slab_min(rows, a, b));
    }
    Some(best)
}

/// Lower bound on the minimum of the convex `f(s) = Σ a c²/(w − c s)²` on `[a, b]`.
fn convex_slab_min(rows: &[SlabRow], a: f64, b: f64) -> f64 {
    let f = |s: f64| rows.iter().map(|r| r.a * r.c * r.c / (r.w - r.c * s).powi(2)).sum::<f64>();
    let df = |s: f64| rows.iter().map(|r| 2.0 * r.a * r.c.powi(3) / (r.w - r.c * s).powi(3)).sum::<f64>();
    let (mut lo, mut hi) = (a, b);
    // Closed ends are kept only where the endpoint is not a pole.
    let open_lo = rows.iter().any(|r| r.c < 0.0 && ((r.w - r.c * a).abs() < 1e-300));
    let open_hi = rows.iter().any(|r| r.c > 0.0 && ((r.w - r.c * b).abs() < 1e-300));
    if !open_lo && df(lo) >= 0.0 {
        return f(lo);
    }
    if !open_hi && df(hi) <= 0.0 {
        return f(hi);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if df(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let s = 0.5 * (lo + hi);
    // Convexity: f* ≥ f(s) − |f'(s)|·dist(s, s*), with dist ≤ hi − lo.
    (f(s) - df(s).abs() * (hi - lo)).max(0.0)
}

/// Dense-grid estimate of `min λ_min(∇²B(u))` over the interior of the
/// constraint set. Upper-bounds the true `m`; meant as a test oracle for up to
/// three inputs.
pub fn m_grid_oracle(p: &BarrierProblem, resolution: f64) -> Result<f64> {
    let set = p.constraints();
    let n = set.n_vars();
    if n > 3 {
        return Err(Error::Unsupported(format!("grid oracle supports at most 3 inputs, got {n}")));
    }
    if !(resolution > 0.0) {
        return Err(Error::InvalidInput("grid resolution must be positive".into()));
    }
    let (lo, hi) = bounding_box(set)?;
    let counts: Vec<usize> = (0..n).map(|k| (((hi[k] - lo[k]) / resolution).ceil() as usize).max(1)).collect();
    let total: usize = counts.iter().product();
    if total > 50_000_000 {
        return Err(Error::Unsupported("grid is too fine for the oracle".into()));
    }
    let mut best = f64::INFINITY;
    let mut idx = vec![0usize; n];
    let mut u = DVector::zeros(n);
    for _ in 0..total {
        for k in 0..n {
            let step = (hi[k] - lo[k]) / counts[k] as f64;
            u[k] = lo[k] + (idx[k] as f64 + 0.5) * step;
        }
        if p.is_hard() && set.slacks(&u).iter().any(|&z| z <= 0.0) {
            // outside the domain
        } else {
            let (_, _, h) = p.barrier_eval(&u)?;
            best = best.min(h.symmetric_eigenvalues().min());
        }
        for k in 0..n {
            idx[k] += 1;
            if idx[k] < counts[k] {
                break;
            }
            idx[k] = 0;
        }
    }
    Ok(best)
}

/// Axis-aligned bounding box of `{u : L u ≤ W}` by vertex enumeration.
fn bounding_box(set: &ConstraintSet) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = set.n_vars();
    let rows = set.n_rows();
    let mut lo = vec![f64::INFINITY; n];
    let mut hi = vec![f64::NEG_INFINITY; n];
    let mut found = false;
    let mut pick: Vec<usize> = (0..n).collect();
    if rows < n {
        return Err(Error::Unsupported("constraint set is unbounded".into()));
    }
    loop {
        let mut a = DMatrix::zeros(n, n);
        let mut b = DVector::zeros(n);
        for (k, &r) in pick.iter().enumerate() {
            a.set_row(k, &set.l().row(r));
            b[k] = set.w()[r];
        }
        if let Some(v) = a.clone().lu().solve(&b) {
            if (&a * &v - &b).amax() < 1e-9 && set.slacks(&v).iter().all(|&z| z >= -1e-9) {
                found = true;
                for k in 0..n {
                    lo[k] = lo[k].min(v[k]);
                    hi[k] = hi[k].max(v[k]);
                }
            }
        }
        // next combination
        let mut i = n;
        loop {
            if i == 0 {
                if !found {
                    return Err(Error::Unsupported("constraint set has no vertices".into()));
                }
                // Unbounded sets have fewer vertices than needed to contain
                // the box; reject those whose box midpoint pushed outward
                // still satisfies every constraint.
                for k in 0..n {
                    let mut probe = DVector::zeros(n);
                    probe[k] = 2.0 * (hi[k] - lo[k]).abs() + hi[k].abs() + 1.0;
                    for sign in [1.0, -1.0] {
                        if set.contains(&(&probe * sign)) {
                            return Err(Error::Unsupported("constraint set is unbounded".into()));
                        }
                    }
                }
                return Ok((lo, hi));
            }
            i -= 1;
            if pick[i] < rows - n + i {
                pick[i] += 1;
                for j in i + 1..n {
                    pick[j] = pick[j - 1] + 1;
                }
                break;
            }
        }
    }
}
