//! Saddle-point solves and the damped Newton method.
//!
//! Every linear system has the block form
//!
//! ```text
//! [ A  -Bᵀ  0 ] [v]   [f]
//! [ B   0   m ] [q] = [h]
//! [ 0   mᵀ  0 ] [λ]   [0]
//! ```
//!
//! where the scalar multiplier `λ` pins the pressure mean to zero. Since
//! `1ᵀ B = 0`, the second block row is solvable for any `h`; `λ` absorbs the
//! mean of `h`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sparse::{norm, CscMatrix, CscPattern, SparseLu};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NewtonConfig {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_iter: usize,
    pub backtrack_factor: f64,
    pub max_halvings: usize,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        Self { abs_tol: 1e-8, rel_tol: 1e-8, max_iter: 50, backtrack_factor: 0.5, max_halvings: 20 }
    }
}

impl NewtonConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.abs_tol > 0.0 && self.rel_tol > 0.0) {
            return Err(Error::Config("Newton tolerances must be positive".into()));
        }
        if self.max_iter == 0 {
            return Err(Error::Config("Newton max_iter must be at least 1".into()));
        }
        if !(self.backtrack_factor > 0.0 && self.backtrack_factor < 1.0) {
            return Err(Error::Config("backtracking factor must lie in (0, 1)".into()));
        }
        Ok(())
    }

    pub fn tolerance(&self, initial: f64) -> f64 {
        self.abs_tol.max(self.rel_tol * initial)
    }
}

/// Block saddle-point operator with a reusable sparsity pattern and factorization.
pub struct SaddleSystem {
    nv: usize,
    np: usize,
    pattern: Arc<CscPattern>,
    velocity_pattern: Arc<CscPattern>,
    /// Big-matrix slot for every velocity-block slot.
    a_slots: Vec<usize>,
    /// Values of the constant blocks, zeros in the velocity block.
    base: Vec<f64>,
    lu: Option<SparseLu>,
}

impl SaddleSystem {
    /// `coupling` is `B` (pressure rows), `mean` the vector `m`.
    pub fn new(velocity_pattern: Arc<CscPattern>, coupling: &CscMatrix, mean: &[f64]) -> Self {
        let nv = velocity_pattern.ncols;
        let np = coupling.nrows();
        assert_eq!(coupling.ncols(), nv);
        assert_eq!(mean.len(), np);
        let n = nv + np + 1;
        let mut triplets: Vec<(usize, usize, f64)> = Vec::new();
        for c in 0..nv {
            for s in velocity_pattern.col_ptr[c]..velocity_pattern.col_ptr[c + 1] {
                triplets.push((velocity_pattern.row_idx[s], c, 0.0));
            }
        }
        for c in 0..nv {
            for s in coupling.pattern.col_ptr[c]..coupling.pattern.col_ptr[c + 1] {
                let q = coupling.pattern.row_idx[s];
                let b = coupling.values[s];
                triplets.push((nv + q, c, b));
                triplets.push((c, nv + q, -b));
            }
        }
        for (q, &mq) in mean.iter().enumerate() {
            triplets.push((nv + q, nv + np, mq));
            triplets.push((nv + np, nv + q, mq));
        }
        let full = CscMatrix::from_triplets(n, n, &triplets);
        let a_slots = (0..nv)
            .flat_map(|c| {
                let vp = &velocity_pattern;
                (vp.col_ptr[c]..vp.col_ptr[c + 1]).map(move |s| (vp.row_idx[s], c))
            })
            .map(|(r, c)| full.pattern.slot(r, c).expect("velocity entry"))
            .collect();
        Self { nv, np, pattern: full.pattern, velocity_pattern, a_slots, base: full.values, lu: None }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.nv, self.np)
    }

    /// Assembles the block matrix for velocity block `a` and factorizes it.
    pub fn factor(&mut self, a: &CscMatrix) -> Result<()> {
        let m = self.matrix(a);
        match self.lu.as_mut() {
            Some(lu) => lu.refactor(&m)?,
            None => self.lu = Some(SparseLu::new(&m)?),
        }
        Ok(())
    }

    pub fn matrix(&self, a: &CscMatrix) -> CscMatrix {
        assert!(*a.pattern == *self.velocity_pattern, "velocity block pattern mismatch");
        let mut values = self.base.clone();
        for (s, &v) in self.a_slots.iter().zip(&a.values) {
            values[*s] += v;
        }
        CscMatrix { pattern: self.pattern.clone(), values }
    }

    /// Solves with the last factorization; returns `(v, q, λ)`.
    pub fn solve(&self, rhs_v: &[f64], rhs_q: &[f64]) -> Result<(Vec<f64>, Vec<f64>, f64)> {
        self.solve_with_mean(rhs_v, rhs_q, 0.0)
    }

    /// As [`solve`](Self::solve) with `mᵀ q = rhs_mean`.
    pub fn solve_with_mean(&self, rhs_v: &[f64], rhs_q: &[f64], rhs_mean: f64) -> Result<(Vec<f64>, Vec<f64>, f64)> {
        let lu = self.lu.as_ref().ok_or_else(|| Error::LinearSolver("system not factorized".into()))?;
        let mut rhs = Vec::with_capacity(self.nv + self.np + 1);
        rhs.extend_from_slice(rhs_v);
        rhs.extend_from_slice(rhs_q);
        rhs.push(rhs_mean);
        let mut x = lu.solve(&rhs)?;
        let lambda = x.pop().expect("multiplier");
        let q = x.split_off(self.nv);
        Ok((x, q, lambda))
    }
}

/// Block residuals `(A v − Bᵀ q − f, B v + m λ − h)`.
pub fn saddle_residual(
    a: &CscMatrix,
    coupling: &CscMatrix,
    mean: &[f64],
    sol: (&[f64], &[f64], f64),
    rhs_v: &[f64],
    rhs_q: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let (v, q, lambda) = sol;
    let av = a.mul_vec(v);
    let btq = coupling.transpose_mul_vec(q);
    let rv = av.iter().zip(&btq).zip(rhs_v).map(|((a, b), f)| a - b - f).collect();
    let bv = coupling.mul_vec(v);
    let rq = bv.iter().zip(mean).zip(rhs_q).map(|((b, m), h)| b + m * lambda - h).collect();
    (rv, rq)
}

/// One-shot saddle solve; the returned pressure has zero mean.
pub fn solve_saddle(
    a: &CscMatrix,
    coupling: &CscMatrix,
    mean: &[f64],
    rhs_v: &[f64],
    rhs_q: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut sys = SaddleSystem::new(a.pattern.clone(), coupling, mean);
    sys.factor(a)?;
    let (v, q, _) = sys.solve(rhs_v, rhs_q)?;
    Ok((v, q))
}

/// A nonlinear system `R(x) = 0` solved by Newton's method.
pub trait NewtonProblem {
    fn residual(&mut self, x: &[f64]) -> Result<Vec<f64>>;
    /// Solves `J(x) δ = r` for the Newton correction (applied as `x − δ`).
    fn solve_linearised(&mut self, x: &[f64], r: &[f64]) -> Result<Vec<f64>>;
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NewtonReport {
    pub iterations: usize,
    pub initial_residual: f64,
    pub final_residual: f64,
}

/// Damped Newton with backtracking on the residual norm.
pub fn newton_solve<P: NewtonProblem>(
    problem: &mut P,
    x0: Vec<f64>,
    cfg: &NewtonConfig,
) -> Result<(Vec<f64>, NewtonReport)> {
    let mut x = x0;
    let mut r = problem.residual(&x)?;
    let mut rn = norm(&r);
    let initial = rn;
    let tol = cfg.tolerance(initial);
    if !rn.is_finite() {
        return Err(Error::NewtonNonConvergence { iterations: 0, residual: rn });
    }
    for it in 0..cfg.max_iter {
        if rn <= tol {
            log::trace!("newton converged: {it} iterations, residual {rn:.3e}");
            return Ok((x, NewtonReport { iterations: it, initial_residual: initial, final_residual: rn }));
        }
        let delta = problem.solve_linearised(&x, &r)?;
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..=cfg.max_halvings {
            let trial: Vec<f64> = x.iter().zip(&delta).map(|(a, d)| a - step * d).collect();
            // a trial point may leave the domain of the residual; treat as a failed step
            if let Ok(tr) = problem.residual(&trial) {
                let tn = norm(&tr);
                if tn.is_finite() && tn < rn {
                    x = trial;
                    r = tr;
                    rn = tn;
                    accepted = true;
                    break;
                }
            }
            step *= cfg.backtrack_factor;
        }
        if !accepted {
            // no decrease is possible: either converged to roundoff or stuck
            if rn <= tol {
                break;
            }
            return Err(Error::NewtonNonConvergence { iterations: it + 1, residual: rn });
        }
    }
    if rn <= tol {
        Ok((x, NewtonReport { iterations: cfg.max_iter, initial_residual: initial, final_residual: rn }))
    } else {
        Err(Error::NewtonNonConvergence { iterations: cfg.max_iter, residual: rn })
    }
}
