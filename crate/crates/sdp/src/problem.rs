use nalgebra::DMatrix;

use crate::SdpError;

/// A scalar decision variable and its coefficient in the matrix inequality.
#[derive(Debug, Clone)]
pub struct ScalarVar {
    pub name: String,
    /// Symmetric coefficient multiplying the variable inside the LMI.
    pub coeff: DMatrix<f64>,
    /// Weight in the (maximized) objective.
    pub objective: f64,
}

/// One congruence term `weight * Tᵀ P T` of a symmetric matrix variable.
#[derive(Debug, Clone)]
pub struct CongruenceTerm {
    pub weight: f64,
    /// `k × n` map, where `k` is the size of the matrix variable.
    pub map: DMatrix<f64>,
}

/// Symmetric matrix variable entering the LMI through congruence terms.
///
/// This is the shape of the Lyapunov part of a discrete KYP inequality:
/// `[A B]ᵀ P [A B] - [I 0]ᵀ P [I 0]`.
#[derive(Debug, Clone)]
pub struct MatrixVar {
    pub dim: usize,
    pub terms: Vec<CongruenceTerm>,
}

/// Linear inequality `Σ coeff·y ≤ rhs` over scalar variables.
#[derive(Debug, Clone)]
pub struct LinearIneq {
    pub coeffs: Vec<(usize, f64)>,
    pub rhs: f64,
}

impl LinearIneq {
    pub fn new(coeffs: Vec<(usize, f64)>, rhs: f64) -> Self {
        Self { coeffs, rhs }
    }

    /// `y_i ≥ lower`
    pub fn lower_bound(var: usize, lower: f64) -> Self {
        Self::new(vec![(var, -1.0)], -lower)
    }

    /// `y_i ≤ upper`
    pub fn upper_bound(var: usize, upper: f64) -> Self {
        Self::new(vec![(var, 1.0)], upper)
    }
}

/// Maximize `Σ objective_i y_i` subject to
///
/// ```text
/// constant + Σ y_i coeff_i + Σ_t weight_t T_tᵀ P T_t ⪯ 0
/// Σ coeff·y ≤ rhs           (each linear inequality)
/// ```
///
/// with `P` symmetric and sign-free.
#[derive(Debug, Clone)]
pub struct LmiProgram {
    pub dim: usize,
    pub constant: DMatrix<f64>,
    pub scalars: Vec<ScalarVar>,
    pub matrix_var: Option<MatrixVar>,
    pub inequalities: Vec<LinearIneq>,
}

impl LmiProgram {
    pub fn new(constant: DMatrix<f64>) -> Self {
        Self {
            dim: constant.nrows(),
            constant,
            scalars: Vec::new(),
            matrix_var: None,
            inequalities: Vec::new(),
        }
    }

    /// Adds a scalar variable and returns its index.
    pub fn add_scalar(&mut self, name: impl Into<String>, coeff: DMatrix<f64>, objective: f64) -> usize {
        self.scalars.push(ScalarVar { name: name.into(), coeff, objective });
        self.scalars.len() - 1
    }

    pub fn set_matrix_var(&mut self, var: MatrixVar) {
        self.matrix_var = Some(var);
    }

    pub fn add_inequality(&mut self, ineq: LinearIneq) {
        self.inequalities.push(ineq);
    }

    pub fn matrix_var_dim(&self) -> usize {
        self.matrix_var.as_ref().map_or(0, |v| v.dim)
    }

    /// Number of free entries of the matrix variable (upper triangle).
    pub fn num_matrix_entries(&self) -> usize {
        let k = self.matrix_var_dim();
        k * (k + 1) / 2
    }

    pub fn num_vars(&self) -> usize {
        self.scalars.len() + self.num_matrix_entries()
    }

    pub fn validate(&self) -> Result<(), SdpError> {
        let n = self.dim;
        if n == 0 {
            return Err(SdpError::Dimension("LMI has zero size".into()));
        }
        check_symmetric("constant", &self.constant, n)?;
        for s in &self.scalars {
            check_symmetric(&s.name, &s.coeff, n)?;
            if !s.objective.is_finite() {
                return Err(SdpError::NonFinite(format!("objective of {}", s.name)));
            }
        }
        if let Some(mv) = &self.matrix_var {
            for (i, t) in mv.terms.iter().enumerate() {
                if t.map.nrows() != mv.dim || t.map.ncols() != n {
                    return Err(SdpError::Dimension(format!(
                        "congruence term {i} is {}x{}, expected {}x{}",
                        t.map.nrows(),
                        t.map.ncols(),
                        mv.dim,
                        n
                    )));
                }
                if t.map.iter().any(|v| !v.is_finite()) || !t.weight.is_finite() {
                    return Err(SdpError::NonFinite(format!("congruence term {i}")));
                }
            }
        }
        for (k, ineq) in self.inequalities.iter().enumerate() {
            if !ineq.rhs.is_finite() {
                return Err(SdpError::NonFinite(format!("rhs of inequality {k}")));
            }
            for &(i, c) in &ineq.coeffs {
                if i >= self.scalars.len() {
                    return Err(SdpError::Dimension(format!("inequality {k} references variable {i}")));
                }
                if !c.is_finite() {
                    return Err(SdpError::NonFinite(format!("inequality {k}")));
                }
            }
        }
        Ok(())
    }

    /// Evaluates the LMI matrix at the given scalar values and matrix variable.
    pub fn evaluate(&self, scalars: &[f64], p: Option<&DMatrix<f64>>) -> DMatrix<f64> {
        let mut f = self.constant.clone();
        for (s, &v) in self.scalars.iter().zip(scalars) {
            f += &s.coeff * v;
        }
        if let (Some(mv), Some(p)) = (&self.matrix_var, p) {
            for t in &mv.terms {
                f += t.map.transpose() * p * &t.map * t.weight;
            }
        }
        (&f + f.transpose()) * 0.5
    }

    /// Largest violation of the linear inequalities (≤ 0 when all hold).
    pub fn max_inequality_violation(&self, scalars: &[f64]) -> f64 {
        self.inequalities
            .iter()
            .map(|ineq| ineq.coeffs.iter().map(|&(i, c)| c * scalars[i]).sum::<f64>() - ineq.rhs)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

fn check_symmetric(name: &str, m: &DMatrix<f64>, n: usize) -> Result<(), SdpError> {
    if m.nrows() != n || m.ncols() != n {
        return Err(SdpError::Dimension(format!(
            "{name} is {}x{}, expected {n}x{n}",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(SdpError::NonFinite(name.to_string()));
    }
    let scale = m.amax().max(1.0);
    if (m - m.transpose()).amax() > 1e-9 * scale {
        return Err(SdpError::NotSymmetric(name.to_string()));
    }
    Ok(())
}
