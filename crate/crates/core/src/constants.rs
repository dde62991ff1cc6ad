//! Discrete constants of the gradient discretisation for `p = 2`:
//! coercivity `C_D(2)`, inf-sup `β_D(2)` and the inverse-estimate constant
//! `𝔅_D(2)`, all from generalized symmetric eigenproblems solved by
//! power or inverse iteration.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::assembly::AssembledForms;
use crate::error::{Error, Result};
use crate::gd::{GradientDiscretisation, VEL_LOCAL};
use crate::solver::SaddleSystem;
use crate::sparse::{dot, CscMatrix, SparseLu};

pub const EIGEN_TOL: f64 = 1e-8;
pub const EIGEN_MAX_ITER: usize = 10_000;

#[derive(Clone, Copy, Debug, Serialize)]
pub struct DiscreteConstants {
    /// Sum of the square roots of `λmax(M, E)`, `λmax(D, E)`, `λmax(G, E)`.
    pub coercivity: f64,
    pub coercivity_mass: f64,
    pub coercivity_div: f64,
    pub coercivity_grad: f64,
    pub inf_sup: f64,
    pub inverse: f64,
}

/// Gram matrices of `div_D` and `∇_D` on the free velocity unknowns.
pub fn gradient_grams(gd: &GradientDiscretisation, forms: &AssembledForms) -> (CscMatrix, CscMatrix) {
    let layout = &forms.layout;
    let mut div = CscMatrix::zeros(layout.velocity.clone());
    let mut grad = CscMatrix::zeros(layout.velocity.clone());
    for t in 0..gd.mesh.num_triangles() {
        let free = gd.local_free_dofs(t);
        for data in gd.triangle_qps(t) {
            for k in 0..VEL_LOCAL {
                let Some(i) = free[k] else { continue };
                for l in 0..VEL_LOCAL {
                    let Some(j) = free[l] else { continue };
                    let (gk, gl) = (data.p2_grad[k / 2], data.p2_grad[l / 2]);
                    let s = layout.velocity.slot(i, j).expect("velocity slot");
                    div.values[s] += data.weight * gk[k % 2] * gl[l % 2];
                    if k % 2 == l % 2 {
                        grad.values[s] += data.weight * (gk[0] * gl[0] + gk[1] * gl[1]);
                    }
                }
            }
        }
    }
    (div, grad)
}

fn random_start(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn normalise(x: &mut [f64], b: &CscMatrix) {
    let s = b.bilinear(x, x).sqrt();
    for v in x.iter_mut() {
        *v /= s;
    }
}

/// Largest `λ` with `A x = λ B x`, `A` symmetric semidefinite, `B` SPD.
pub fn largest_generalized_eigenvalue(a: &CscMatrix, b: &CscMatrix) -> Result<f64> {
    let lu = SparseLu::new(b)?;
    let mut x = random_start(a.ncols(), 17);
    normalise(&mut x, b);
    let mut lambda = a.bilinear(&x, &x);
    for it in 0..EIGEN_MAX_ITER {
        let mut y = lu.solve(&a.mul_vec(&x))?;
        normalise(&mut y, b);
        let next = a.bilinear(&y, &y);
        x = y;
        let change = (next - lambda).abs() / next.abs().max(f64::MIN_POSITIVE);
        lambda = next;
        if change < EIGEN_TOL && it > 2 {
            return Ok(lambda);
        }
    }
    Err(Error::EigenNonConvergence { iterations: EIGEN_MAX_ITER, change: f64::NAN })
}

/// Smallest nonzero eigenvalue of `B E⁻¹ Bᵀ q = μ M_p q` on mean-zero
/// pressures, by inverse iteration through the saddle system.
pub fn smallest_schur_eigenvalue(forms: &AssembledForms) -> Result<f64> {
    let e = &forms.stiffness;
    let mp = &forms.pressure_mass;
    let mut sys = SaddleSystem::new(e.pattern.clone(), &forms.coupling, &forms.pressure_mean);
    sys.factor(e)?;
    let nv = e.ncols();
    let zero_v = vec![0.0; nv];
    let e_lu = SparseLu::new(e)?;
    let schur_apply = |q: &[f64]| -> Result<f64> {
        // qᵀ B E⁻¹ Bᵀ q = uᵀ E u with E u = Bᵀ q
        let u = e_lu.solve(&forms.coupling.transpose_mul_vec(q))?;
        Ok(e.bilinear(&u, &u))
    };
    let area: f64 = forms.pressure_mean.iter().sum();
    let mut q = random_start(mp.nrows(), 23);
    let shift = dot(&forms.pressure_mean, &q) / area;
    q.iter_mut().for_each(|v| *v -= shift);
    normalise(&mut q, mp);
    let mut mu = schur_apply(&q)?;
    let mut last_change = f64::NAN;
    for it in 0..EIGEN_MAX_ITER {
        // solve S q' = M_p q, mean(q') = 0
        let (_, mut next, _) = sys.solve(&zero_v, &mp.mul_vec(&q))?;
        normalise(&mut next, mp);
        q = next;
        let new_mu = schur_apply(&q)?;
        last_change = (new_mu - mu).abs() / new_mu.abs().max(f64::MIN_POSITIVE);
        mu = new_mu;
        if last_change < EIGEN_TOL && it > 2 {
            return Ok(mu);
        }
    }
    Err(Error::EigenNonConvergence { iterations: EIGEN_MAX_ITER, change: last_change })
}

pub fn estimate_constants_p2(gd: &GradientDiscretisation, forms: &AssembledForms) -> Result<DiscreteConstants> {
    let (div, grad) = gradient_grams(gd, forms);
    let e = &forms.stiffness;
    let coercivity_mass = largest_generalized_eigenvalue(&forms.mass, e)?.sqrt();
    let coercivity_div = largest_generalized_eigenvalue(&div, e)?.sqrt();
    let coercivity_grad = largest_generalized_eigenvalue(&grad, e)?.sqrt();
    let inverse = largest_generalized_eigenvalue(e, &forms.mass)?.sqrt();
    // for p = 2 the inf-sup denominator ‖ε v‖ + ‖ε v‖ equals 2‖ε v‖
    let inf_sup = 0.5 * smallest_schur_eigenvalue(forms)?.sqrt();
    Ok(DiscreteConstants {
        coercivity: coercivity_mass + coercivity_div + coercivity_grad,
        coercivity_mass,
        coercivity_div,
        coercivity_grad,
        inf_sup,
        inverse,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::ZeroField;
    use crate::gd::DiscreteVelocity;
    use nalgebra::{DMatrix, SymmetricEigen};

    fn forms(n: usize) -> (GradientDiscretisation, AssembledForms) {
        let gd = GradientDiscretisation::uniform(n, n).unwrap();
        let g = vec![0.0; gd.dim_full()];
        let f = AssembledForms::assemble_static(&gd, &ZeroField, &g, &ZeroField).unwrap();
        (gd, f)
    }

    fn dense(m: &CscMatrix) -> DMatrix<f64> {
        let d = m.to_dense();
        DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| d[i][j])
    }

    /// Eigenvalues of `A x = λ B x` via Cholesky reduction.
    fn dense_generalized(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Vec<f64> {
        let l = b.clone().cholesky().expect("SPD").l();
        let li = l.clone().try_inverse().unwrap();
        let c = &li * a * li.transpose();
        let c = (&c + c.transpose()) * 0.5;
        let mut ev: Vec<f64> = SymmetricEigen::new(c).eigenvalues.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    #[test]
    fn matches_dense_oracle() {
        let (gd, f) = forms(4);
        let c = estimate_constants_p2(&gd, &f).unwrap();
        let e = dense(&f.stiffness);
        let (div, grad) = gradient_grams(&gd, &f);
        let top = |a: &DMatrix<f64>, b: &DMatrix<f64>| *dense_generalized(a, b).last().unwrap();
        assert!((c.coercivity_mass - top(&dense(&f.mass), &e).sqrt()).abs() < 1e-6 * c.coercivity_mass);
        assert!((c.coercivity_div - top(&dense(&div), &e).sqrt()).abs() < 1e-6 * c.coercivity_div);
        assert!((c.coercivity_grad - top(&dense(&grad), &e).sqrt()).abs() < 1e-6 * c.coercivity_grad);
        assert!((c.inverse - top(&e, &dense(&f.mass)).sqrt()).abs() < 1e-6 * c.inverse);

        let b = dense(&f.coupling);
        let s = &b * e.clone().try_inverse().unwrap() * b.transpose();
        let ev = dense_generalized(&s, &dense(&f.pressure_mass));
        // one zero eigenvalue from the constants, the rest positive
        assert!(ev[0].abs() < 1e-10, "{ev:?}");
        let beta = 0.5 * ev[1].sqrt();
        assert!((c.inf_sup - beta).abs() < 1e-6 * beta, "{} vs {beta}", c.inf_sup);
    }

    #[test]
    fn coercivity_dominates_random_samples() {
        let (gd, f) = forms(5);
        let c = estimate_constants_p2(&gd, &f).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..1000 {
            let v = DiscreteVelocity { coeffs: (0..gd.dim_x0()).map(|_| rng.random_range(-1.0..1.0)).collect() };
            let eps = f.stiffness.bilinear(&v.coeffs, &v.coeffs).sqrt();
            let (mut g2, mut d2, mut m2) = (0.0, 0.0, 0.0);
            for q in gd.quad_points() {
                let w = gd.qp(q).weight;
                g2 += w * gd.reconstruct_gradient(&v, q).norm_sq();
                d2 += w * gd.divergence(&v, q).powi(2);
                let u = gd.reconstruct_velocity(&v, q);
                m2 += w * (u[0] * u[0] + u[1] * u[1]);
            }
            assert!(eps <= g2.sqrt() * (1.0 + 1e-12));
            assert!(g2.sqrt() <= c.coercivity_grad * eps * (1.0 + 1e-9));
            assert!(m2.sqrt() + d2.sqrt() + g2.sqrt() <= c.coercivity * eps * (1.0 + 1e-9));
        }
    }

    #[test]
    fn inverse_constant_grows_under_refinement() {
        let (gd5, f5) = forms(5);
        let (gd9, f9) = forms(9);
        let c5 = estimate_constants_p2(&gd5, &f5).unwrap();
        let c9 = estimate_constants_p2(&gd9, &f9).unwrap();
        assert!(c9.inverse > c5.inverse);
        assert!((c9.coercivity - c5.coercivity).abs() < 0.25 * c5.coercivity);
        assert!(c5.inf_sup > 0.0 && c9.inf_sup > 0.0);
    }
}
