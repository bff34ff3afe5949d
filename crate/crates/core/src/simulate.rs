//! Closed-loop simulation of plant, Kalman predictor and MPC law.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::lti::{ObserverPair, StateSpace};
use crate::mpc::{first_move_selector, BarrierProblem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ControlLaw {
    /// `U = φ(θ)`
    Barrier,
    /// Exact constrained QP solution (nominal MPC).
    ConstrainedQp,
    /// `U = H⁻¹θ`
    Unconstrained,
}

/// Stable first-order output uncertainty `Δ(z) = g (1 − |a|) z / (z − a)`,
/// with `‖Δ‖_∞ = |g|`. It perturbs the measurement: `y_meas = y + Δ y`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Uncertainty {
    pub gain: f64,
    pub pole: f64,
}

impl Uncertainty {
    /// Random realization with norm `b`: pole in `(−0.9, 0.9)`, random sign.
    pub fn sample(b: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pole = rng.gen_range(-0.9..0.9);
        let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        Self { gain: sign * b, pole }
    }

    pub fn hinf_norm(&self) -> f64 {
        self.gain.abs()
    }
}

#[derive(Debug, Clone)]
pub struct ClosedLoop<'a> {
    pub plant: &'a StateSpace,
    /// Output gain applied to the plant.
    pub kappa: f64,
    pub observer: &'a ObserverPair,
    pub problem: &'a BarrierProblem,
    pub law: ControlLaw,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    pub x: Vec<DVector<f64>>,
    pub xhat: Vec<DVector<f64>>,
    pub u: Vec<DVector<f64>>,
    pub y: Vec<DVector<f64>>,
}

impl Trajectory {
    pub fn max_state_norm(&self) -> f64 {
        self.x.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn final_state_norm(&self) -> f64 {
        self.x.last().map_or(0.0, |v| v.norm())
    }

    /// Largest output norm over the last `window` steps.
    pub fn tail_output_peak(&self, window: usize) -> f64 {
        let start = self.y.len().saturating_sub(window);
        self.y[start..].iter().map(|v| v.norm()).fold(0.0, f64::max)
    }
}

/// Runs `steps` steps from plant state `x0` with the observer started at zero.
///
/// Each step: `θ = −S x̂`, `U` from the control law, `u = E U`, `y = κCx`,
/// `x̂⁺ = (A − ALC)x̂ + Bu + AL(y + Δy)`, `x⁺ = Ax + Bu`.
pub fn closed_loop_simulate(cl: &ClosedLoop, delta: Option<Uncertainty>, x0: &DVector<f64>, steps: usize) -> Result<Trajectory> {
    let g = cl.plant;
    let (nx, nu) = (g.n_states(), g.n_inputs());
    if x0.len() != nx {
        return Err(Error::Dimension(format!("x0 has length {}, expected {nx}", x0.len())));
    }
    if steps == 0 {
        return Err(Error::InvalidInput("steps must be at least 1".into()));
    }
    let horizon = cl.problem.n_inputs() / nu.max(1);
    if horizon * nu != cl.problem.n_inputs() || cl.problem.s().ncols() != nx {
        return Err(Error::Dimension("MPC problem does not match the plant".into()));
    }
    if let Some(d) = delta {
        if !(d.pole.abs() < 1.0) {
            return Err(Error::InvalidInput("uncertainty pole must lie inside the unit disc".into()));
        }
    }
    let e = first_move_selector(nu, horizon);
    let ao = cl.observer.state_matrix();
    let al = &cl.observer.j_y.b;
    let h_chol = cl.problem.h().clone().cholesky();
    let mut x = x0.clone();
    let mut xh = DVector::zeros(nx);
    let mut w = DVector::zeros(g.n_outputs());
    let mut traj = Trajectory::default();
    for k in 0..steps {
        let theta = cl.problem.theta(&xh);
        let big_u = match cl.law {
            ControlLaw::Barrier => cl.problem.phi_solve(&theta),
            ControlLaw::ConstrainedQp => cl.problem.qp_solve(&theta),
            ControlLaw::Unconstrained => Ok(h_chol.as_ref().expect("H is positive definite").solve(&theta)),
        }
        .map_err(|e| Error::Simulation { step: k, source: Box::new(e) })?;
        let u: DVector<f64> = &e * big_u;
        let y: DVector<f64> = &g.c * &x * cl.kappa;
        let y_meas = match delta {
            Some(d) => {
                w = &w * d.pole + &y * (d.gain * (1.0 - d.pole.abs()));
                &y + &w
            }
            None => y.clone(),
        };
        if x.iter().chain(u.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Simulation { step: k, source: Box::new(Error::NonFinite("closed-loop state".into())) });
        }
        traj.x.push(x.clone());
        traj.xhat.push(xh.clone());
        traj.u.push(u.clone());
        traj.y.push(y);
        xh = ao * &xh + &g.b * &u + al * y_meas;
        x = &g.a * &x + &g.b * &u;
    }
    traj.x.push(x);
    traj.xhat.push(xh);
    Ok(traj)
}

/// `count` initial states drawn uniformly from the sphere of radius `radius`.
pub fn random_initial_states(n: usize, count: usize, radius: f64, seed: u64) -> Vec<DVector<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| loop {
            let v = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
            let norm = v.norm();
            if norm > 1e-3 && norm <= 1.0 {
                break v * (radius / norm);
            }
        })
        .collect()
}

/// Dense matrix of a trajectory field, one row per step.
pub fn stack_rows(series: &[DVector<f64>]) -> DMatrix<f64> {
    let cols = series.first().map_or(0, |v| v.len());
    DMatrix::from_fn(series.len(), cols, |r, c| series[r][c])
}
