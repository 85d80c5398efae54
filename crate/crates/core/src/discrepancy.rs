//! Per-action sensitivity bounds and the accumulated swap-error series.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::lts::{ActionId, Norm, TransitionSystem};

/// Largest matrix size handled by a dense eigendecomposition.
const EIGEN_LIMIT: usize = 16;
const POWER_TOL: f64 = 1e-10;
const POWER_MAX_ITER: usize = 100_000;

/// A discrepancy function β: bounds `|a(q).X − a(q').X|` by `β(|q.X − q'.X|)`.
///
/// Non-linear variants must be non-negative, non-decreasing and vanish at 0.
#[derive(Clone)]
pub enum Discrepancy {
    /// `β(v) = c·v`
    Linear(f64),
    /// Pointwise maximum.
    Max(Vec<Discrepancy>),
    Custom(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl fmt::Debug for Discrepancy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Discrepancy::Linear(c) => write!(f, "Linear({c})"),
            Discrepancy::Max(parts) => f.debug_tuple("Max").field(parts).finish(),
            Discrepancy::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

impl Discrepancy {
    pub fn eval(&self, v: f64) -> f64 {
        match self {
            Discrepancy::Linear(c) => c * v,
            Discrepancy::Max(parts) => parts.iter().map(|b| b.eval(v)).fold(0.0, f64::max),
            Discrepancy::Custom(f) => f(v),
        }
    }

    /// Coefficient when the function is linear.
    pub fn coefficient(&self) -> Option<f64> {
        match self {
            Discrepancy::Linear(c) => Some(*c),
            _ => None,
        }
    }
}

/// Induced operator norm of `m` for the given vector norm.
pub fn induced_norm(m: &DMatrix<f64>, norm: Norm) -> Result<f64> {
    check_finite(m)?;
    match norm {
        Norm::L2 => induced_2norm(m),
        Norm::Linf => Ok(m.row_iter().map(|r| r.iter().map(|x| x.abs()).sum::<f64>()).fold(0.0, f64::max)),
    }
}

/// Largest singular value.
pub fn induced_2norm(m: &DMatrix<f64>) -> Result<f64> {
    check_finite(m)?;
    if m.is_empty() {
        return Ok(0.0);
    }
    let gram = m.transpose() * m;
    if gram.nrows() <= EIGEN_LIMIT {
        let eig = SymmetricEigen::new(gram);
        let top = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
        return Ok(top.max(0.0).sqrt());
    }
    power_iteration(&gram).map(f64::sqrt)
}

/// Dominant eigenvalue of a positive semi-definite matrix.
fn power_iteration(gram: &DMatrix<f64>) -> Result<f64> {
    let n = gram.nrows();
    // irrational-ish start vector, unlikely to be orthogonal to the top eigenvector
    let mut v = DVector::from_fn(n, |i, _| 1.0 + ((i as f64 + 1.0) * 0.618_033_988_75).fract());
    v /= v.norm();
    let mut lambda = 0.0;
    for _ in 0..POWER_MAX_ITER {
        let w = gram * &v;
        let next = w.norm();
        if next == 0.0 {
            return Ok(0.0);
        }
        v = w / next;
        if (next - lambda).abs() <= POWER_TOL * next {
            return Ok(next);
        }
        lambda = next;
    }
    Err(Error::NonConvergence { what: "power iteration", iterations: POWER_MAX_ITER })
}

fn check_finite(m: &DMatrix<f64>) -> Result<()> {
    if m.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite("matrix has non-finite entries".into()))
    }
}

/// `β(v) = |A|·v` under the system norm.
pub fn linear_discrepancy(m: &DMatrix<f64>, norm: Norm) -> Result<Discrepancy> {
    if m.nrows() != m.ncols() {
        return Err(Error::Domain(format!("matrix is {}×{}, expected square", m.nrows(), m.ncols())));
    }
    Ok(Discrepancy::Linear(induced_norm(m, norm)?))
}

/// One linear discrepancy per action, in declaration order.
pub fn system_discrepancies(system: &TransitionSystem) -> Result<Vec<Discrepancy>> {
    system.actions.iter().map(|a| linear_discrepancy(&a.matrix, system.norm)).collect()
}

/// Pointwise maximum. Linear inputs collapse to the largest coefficient.
pub fn beta_max<'a, I>(betas: I) -> Result<Discrepancy>
where
    I: IntoIterator<Item = &'a Discrepancy>,
{
    let parts: Vec<&Discrepancy> = betas.into_iter().collect();
    if parts.is_empty() {
        return Err(Error::Domain("maximum of an empty set of discrepancy functions".into()));
    }
    if parts.len() == 1 {
        return Ok(parts[0].clone());
    }
    if let Some(coeffs) = parts.iter().map(|b| b.coefficient()).collect::<Option<Vec<_>>>() {
        return Ok(Discrepancy::Linear(coeffs.into_iter().fold(0.0, f64::max)));
    }
    Ok(Discrepancy::Max(parts.into_iter().cloned().collect()))
}

/// `γ_n(ε) = Σ_{i=0}^{n} β^i(ε)`.
pub fn gamma(n: usize, epsilon: f64, beta: &Discrepancy) -> Result<f64> {
    if !(epsilon >= 0.0) {
        return Err(Error::Domain(format!("ε must be non-negative, got {epsilon}")));
    }
    if let Discrepancy::Linear(c) = beta {
        let c = *c;
        if c == 1.0 {
            return Ok((n as f64 + 1.0) * epsilon);
        }
        // the closed form cancels badly near c = 1
        if (c - 1.0).abs() > 1e-6 {
            return Ok(epsilon * (c.powi(n as i32 + 1) - 1.0) / (c - 1.0));
        }
    }
    let mut term = epsilon;
    let mut sum = epsilon;
    for _ in 0..n {
        term = beta.eval(term);
        sum += term;
    }
    Ok(sum)
}

/// `β_{a_n} ∘ … ∘ β_{a_0}(δ)`
pub fn compose_along_trace(trace: &[ActionId], delta: f64, betas: &[Discrepancy]) -> Result<f64> {
    if !(delta >= 0.0) {
        return Err(Error::Domain(format!("δ must be non-negative, got {delta}")));
    }
    trace.iter().try_fold(delta, |acc, &a| {
        betas
            .get(a)
            .map(|b| b.eval(acc))
            .ok_or_else(|| Error::UnknownAction(format!("#{a}")))
    })
}
