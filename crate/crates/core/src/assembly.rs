//! Assembly of every discrete form appearing in the scheme.
//!
//! Rows index test functions and columns trial functions throughout. All
//! velocity blocks act on the free unknowns of `X_{D,0}`; boundary data enter
//! only through the full vector `g_D`.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::fields::VectorField;
use crate::gd::{DiscreteVelocity, GradientDiscretisation, QuadPoint, P1_LOCAL, P2_LOCAL, VEL_LOCAL};
use crate::par::{self, Execution};
use crate::rheology::{Mat2, RheologyParams};
use crate::sparse::{CscMatrix, CscPattern};

/// Sparsity layout of the velocity and coupling blocks with per-triangle
/// slot tables.
#[derive(Debug)]
pub struct Layout {
    pub velocity: Arc<CscPattern>,
    pub coupling: Arc<CscPattern>,
    pub pressure: Arc<CscPattern>,
    /// `velocity_slots[t][k * 12 + l]`: slot of (local row k, local col l).
    velocity_slots: Vec<[Option<usize>; VEL_LOCAL * VEL_LOCAL]>,
    /// `coupling_slots[t][a * 12 + l]`: slot of (pressure a, velocity l).
    coupling_slots: Vec<[Option<usize>; P1_LOCAL * VEL_LOCAL]>,
    pressure_slots: Vec<[usize; P1_LOCAL * P1_LOCAL]>,
}

impl Layout {
    pub fn new(gd: &GradientDiscretisation) -> Self {
        let nt = gd.mesh.num_triangles();
        let (nf, np) = (gd.dim_x0(), gd.dim_y());
        let mut vel_entries = Vec::new();
        let mut cpl_entries = Vec::new();
        let mut prs_entries = Vec::new();
        for t in 0..nt {
            let free = gd.local_free_dofs(t);
            let pdofs = gd.local_pressure_dofs(t);
            for &r in free.iter().flatten() {
                for &c in free.iter().flatten() {
                    vel_entries.push((r, c));
                }
            }
            for &q in &pdofs {
                for &c in free.iter().flatten() {
                    cpl_entries.push((q, c));
                }
                for &q2 in &pdofs {
                    prs_entries.push((q, q2));
                }
            }
        }
        let velocity = Arc::new(CscPattern::from_entries(nf, nf, vel_entries));
        let coupling = Arc::new(CscPattern::from_entries(np, nf, cpl_entries));
        let pressure = Arc::new(CscPattern::from_entries(np, np, prs_entries));

        let mut velocity_slots = Vec::with_capacity(nt);
        let mut coupling_slots = Vec::with_capacity(nt);
        let mut pressure_slots = Vec::with_capacity(nt);
        for t in 0..nt {
            let free = gd.local_free_dofs(t);
            let pdofs = gd.local_pressure_dofs(t);
            let mut vs = [None; VEL_LOCAL * VEL_LOCAL];
            for k in 0..VEL_LOCAL {
                for l in 0..VEL_LOCAL {
                    if let (Some(r), Some(c)) = (free[k], free[l]) {
                        vs[k * VEL_LOCAL + l] = velocity.slot(r, c);
                    }
                }
            }
            let mut cs = [None; P1_LOCAL * VEL_LOCAL];
            let mut ps = [0; P1_LOCAL * P1_LOCAL];
            for a in 0..P1_LOCAL {
                for l in 0..VEL_LOCAL {
                    if let Some(c) = free[l] {
                        cs[a * VEL_LOCAL + l] = coupling.slot(pdofs[a], c);
                    }
                }
                for b in 0..P1_LOCAL {
                    ps[a * P1_LOCAL + b] = pressure.slot(pdofs[a], pdofs[b]).expect("pressure slot");
                }
            }
            velocity_slots.push(vs);
            coupling_slots.push(cs);
            pressure_slots.push(ps);
        }
        Self { velocity, coupling, pressure, velocity_slots, coupling_slots, pressure_slots }
    }

    fn scatter_velocity(&self, m: &mut CscMatrix, t: usize, local: &[[f64; VEL_LOCAL]; VEL_LOCAL]) {
        let slots = &self.velocity_slots[t];
        for k in 0..VEL_LOCAL {
            for l in 0..VEL_LOCAL {
                if let Some(s) = slots[k * VEL_LOCAL + l] {
                    m.values[s] += local[k][l];
                }
            }
        }
    }
}

/// Symmetric gradients of the 12 local vector basis functions.
pub(crate) fn local_strains(grads: &[[f64; 2]; P2_LOCAL]) -> [Mat2; VEL_LOCAL] {
    std::array::from_fn(|k| {
        let g = grads[k / 2];
        if k % 2 == 0 {
            Mat2::new(g[0], 0.5 * g[1], 0.5 * g[1], 0.0)
        } else {
            Mat2::new(0.0, 0.5 * g[0], 0.5 * g[0], g[1])
        }
    })
}

/// Divergence of local vector basis function `k`.
fn local_div(grads: &[[f64; 2]; P2_LOCAL], k: usize) -> f64 {
    grads[k / 2][k % 2]
}

fn check_finite(v: [f64; 2], what: &str, x: [f64; 2]) -> Result<[f64; 2]> {
    if v[0].is_finite() && v[1].is_finite() {
        Ok(v)
    } else {
        Err(Error::Data(format!("{what} is not finite at ({}, {})", x[0], x[1])))
    }
}

/// Time-independent forms of the scheme.
#[derive(Debug)]
pub struct AssembledForms {
    pub layout: Arc<Layout>,
    /// `(Π_D φ_j, Π_D φ_i)`.
    pub mass: CscMatrix,
    /// `(χ_D q, div_D φ_j)`, pressure rows.
    pub coupling: CscMatrix,
    /// `B_D^σ(φ_j, φ_i)`; exactly skew.
    pub noise: CscMatrix,
    /// Linear strain stiffness `(ε_D φ_j, ε_D φ_i)`.
    pub stiffness: CscMatrix,
    /// `(χ_D q, χ_D r)`.
    pub pressure_mass: CscMatrix,
    /// `∫ χ_D q`.
    pub pressure_mean: Vec<f64>,
    /// `(F, Π_D φ_i)`.
    pub load: Vec<f64>,
    /// `((σ·∇) g, Π_D φ_i)`.
    pub g_noise: Vec<f64>,
    /// `(div_D g, χ_D q)`.
    pub g_div: Vec<f64>,
    /// Boundary datum as a full P2 vector.
    pub g_full: Vec<f64>,
}

struct LocalStatic {
    mass: [[f64; VEL_LOCAL]; VEL_LOCAL],
    noise: [[f64; VEL_LOCAL]; VEL_LOCAL],
    stiffness: [[f64; VEL_LOCAL]; VEL_LOCAL],
    coupling: [[f64; VEL_LOCAL]; P1_LOCAL],
    pmass: [[f64; P1_LOCAL]; P1_LOCAL],
    load: [f64; VEL_LOCAL],
    g_noise: [f64; VEL_LOCAL],
    g_div: [f64; P1_LOCAL],
}

fn local_static(
    gd: &GradientDiscretisation,
    t: usize,
    sigma: &dyn VectorField,
    g_full: &[f64],
    forcing: &dyn VectorField,
) -> Result<LocalStatic> {
    let mut out = LocalStatic {
        mass: [[0.0; VEL_LOCAL]; VEL_LOCAL],
        noise: [[0.0; VEL_LOCAL]; VEL_LOCAL],
        stiffness: [[0.0; VEL_LOCAL]; VEL_LOCAL],
        coupling: [[0.0; VEL_LOCAL]; P1_LOCAL],
        pmass: [[0.0; P1_LOCAL]; P1_LOCAL],
        load: [0.0; VEL_LOCAL],
        g_noise: [0.0; VEL_LOCAL],
        g_div: [0.0; P1_LOCAL],
    };
    // transport[k][l] = ∫ ((σ·∇)φ_l) · φ_k, antisymmetrized at the end
    let mut transport = [[0.0; VEL_LOCAL]; VEL_LOCAL];
    let g_zero = g_full.iter().all(|&v| v == 0.0);
    for (idx, data) in gd.triangle_qps(t).iter().enumerate() {
        let q = QuadPoint { triangle: t, index: idx };
        let w = data.weight;
        let strains = local_strains(&data.p2_grad);
        let s =
            if sigma.is_zero() { [0.0, 0.0] } else { check_finite(sigma.eval(data.x), "noise coefficient", data.x)? };
        let f = if forcing.is_zero() { [0.0, 0.0] } else { check_finite(forcing.eval(data.x), "forcing", data.x)? };
        let sgrad: [f64; P2_LOCAL] = std::array::from_fn(|a| s[0] * data.p2_grad[a][0] + s[1] * data.p2_grad[a][1]);
        for k in 0..VEL_LOCAL {
            let (ak, ck) = (k / 2, k % 2);
            for l in 0..VEL_LOCAL {
                let (al, cl) = (l / 2, l % 2);
                if ck == cl {
                    out.mass[k][l] += w * (data.p2[ak] * data.p2[al]);
                    transport[k][l] += w * sgrad[al] * data.p2[ak];
                }
                out.stiffness[k][l] += w * strains[k].ddot(&strains[l]);
            }
            out.load[k] += w * f[ck] * data.p2[ak];
            for a in 0..P1_LOCAL {
                out.coupling[a][k] += w * data.p1[a] * local_div(&data.p2_grad, k);
            }
        }
        for a in 0..P1_LOCAL {
            for b in 0..P1_LOCAL {
                out.pmass[a][b] += w * data.p1[a] * data.p1[b];
            }
        }
        if !g_zero {
            let gg = gd.gradient_full(g_full, q);
            // (σ·∇) g = σ^T ∇g
            let sg = [s[0] * gg.0[0][0] + s[1] * gg.0[1][0], s[0] * gg.0[0][1] + s[1] * gg.0[1][1]];
            for k in 0..VEL_LOCAL {
                out.g_noise[k] += w * sg[k % 2] * data.p2[k / 2];
            }
            let div_g = gg.trace();
            for a in 0..P1_LOCAL {
                out.g_div[a] += w * div_g * data.p1[a];
            }
        }
    }
    for k in 0..VEL_LOCAL {
        for l in 0..VEL_LOCAL {
            out.noise[k][l] = 0.5 * (transport[k][l] - transport[l][k]);
        }
    }
    Ok(out)
}

impl AssembledForms {
    /// Assembles all time-independent forms. `g_full` is the boundary datum
    /// as a full P2 coefficient vector (see [`GradientDiscretisation::interpolate`]).
    pub fn assemble_static(
        gd: &GradientDiscretisation,
        sigma: &dyn VectorField,
        g_full: &[f64],
        forcing: &dyn VectorField,
    ) -> Result<Self> {
        Self::assemble_static_with(gd, sigma, g_full, forcing, Execution::Sequential)
    }

    pub fn assemble_static_with(
        gd: &GradientDiscretisation,
        sigma: &dyn VectorField,
        g_full: &[f64],
        forcing: &dyn VectorField,
        exec: Execution,
    ) -> Result<Self> {
        if g_full.len() != gd.dim_full() {
            return Err(Error::Config(format!(
                "boundary vector has length {}, expected {}",
                g_full.len(),
                gd.dim_full()
            )));
        }
        let layout = Arc::new(Layout::new(gd));
        let locals = par::map_indexed(exec, gd.mesh.num_triangles(), |t| local_static(gd, t, sigma, g_full, forcing));

        let mut mass = CscMatrix::zeros(layout.velocity.clone());
        let mut noise = CscMatrix::zeros(layout.velocity.clone());
        let mut stiffness = CscMatrix::zeros(layout.velocity.clone());
        let mut coupling = CscMatrix::zeros(layout.coupling.clone());
        let mut pressure_mass = CscMatrix::zeros(layout.pressure.clone());
        let mut load = vec![0.0; gd.dim_x0()];
        let mut g_noise = vec![0.0; gd.dim_x0()];
        let mut g_div = vec![0.0; gd.dim_y()];
        // scatter strictly in triangle order
        for (t, local) in locals.into_iter().enumerate() {
            let local = local?;
            layout.scatter_velocity(&mut mass, t, &local.mass);
            layout.scatter_velocity(&mut noise, t, &local.noise);
            layout.scatter_velocity(&mut stiffness, t, &local.stiffness);
            let free = gd.local_free_dofs(t);
            let pdofs = gd.local_pressure_dofs(t);
            for a in 0..P1_LOCAL {
                for l in 0..VEL_LOCAL {
                    if let Some(s) = layout.coupling_slots[t][a * VEL_LOCAL + l] {
                        coupling.values[s] += local.coupling[a][l];
                    }
                }
                for b in 0..P1_LOCAL {
                    pressure_mass.values[layout.pressure_slots[t][a * P1_LOCAL + b]] += local.pmass[a][b];
                }
                g_div[pdofs[a]] += local.g_div[a];
            }
            for k in 0..VEL_LOCAL {
                if let Some(i) = free[k] {
                    load[i] += local.load[k];
                    g_noise[i] += local.g_noise[k];
                }
            }
        }
        let pressure_mean = gd.pressure_mean_weights();
        Ok(Self {
            layout,
            mass,
            coupling,
            noise,
            stiffness,
            pressure_mass,
            pressure_mean,
            load,
            g_noise,
            g_div,
            g_full: g_full.to_vec(),
        })
    }

    /// `½ vᵀ M v = ½ ‖Π_D v‖²`.
    pub fn kinetic_energy(&self, v: &DiscreteVelocity) -> f64 {
        0.5 * self.mass.bilinear(&v.coeffs, &v.coeffs)
    }

    /// `(Π_D f, Π_D φ_i)` for a closed-form field, i.e. the right-hand side
    /// of the discrete Helmholtz projection.
    pub fn project_rhs(gd: &GradientDiscretisation, f: &dyn VectorField) -> Result<Vec<f64>> {
        let mut rhs = vec![0.0; gd.dim_x0()];
        if f.is_zero() {
            return Ok(rhs);
        }
        for t in 0..gd.mesh.num_triangles() {
            let free = gd.local_free_dofs(t);
            for data in gd.triangle_qps(t) {
                let u = check_finite(f.eval(data.x), "initial velocity", data.x)?;
                for k in 0..VEL_LOCAL {
                    if let Some(i) = free[k] {
                        rhs[i] += data.weight * u[k % 2] * data.p2[k / 2];
                    }
                }
            }
        }
        Ok(rhs)
    }
}

/// Viscous residual `r_i = (S(ε_D w + ε g), ε_D φ_i)` and, when requested,
/// its Jacobian `(DS(ε_D w + ε g)[ε_D φ_j], ε_D φ_i)`.
pub fn viscous_residual_and_jacobian(
    gd: &GradientDiscretisation,
    layout: &Layout,
    params: &RheologyParams,
    w: &DiscreteVelocity,
    g_full: &[f64],
    want_jacobian: bool,
) -> Result<(Vec<f64>, Option<CscMatrix>)> {
    let full = gd.lift(w, g_full);
    let mut residual = vec![0.0; gd.dim_x0()];
    let mut jac = want_jacobian.then(|| CscMatrix::zeros(layout.velocity.clone()));
    let mut local_j = [[0.0; VEL_LOCAL]; VEL_LOCAL];
    for t in 0..gd.mesh.num_triangles() {
        let free = gd.local_free_dofs(t);
        let dofs = gd.local_full_dofs(t);
        let mut local_r = [0.0; VEL_LOCAL];
        if want_jacobian {
            local_j = [[0.0; VEL_LOCAL]; VEL_LOCAL];
        }
        for data in gd.triangle_qps(t) {
            let strains = local_strains(&data.p2_grad);
            let mut a = Mat2::ZERO;
            for k in 0..VEL_LOCAL {
                a = a + strains[k].scale(full[dofs[k]]);
            }
            let s = params.stress(&a)?;
            for k in 0..VEL_LOCAL {
                local_r[k] += data.weight * s.ddot(&strains[k]);
            }
            if want_jacobian {
                let (c, d) = params.derivative_coefficients(&a)?;
                let proj: [f64; VEL_LOCAL] = std::array::from_fn(|k| a.ddot(&strains[k]));
                for k in 0..VEL_LOCAL {
                    for l in k..VEL_LOCAL {
                        let v = data.weight * (c * strains[k].ddot(&strains[l]) + d * proj[k] * proj[l]);
                        local_j[k][l] += v;
                        if l != k {
                            local_j[l][k] += v;
                        }
                    }
                }
            }
        }
        for k in 0..VEL_LOCAL {
            if let Some(i) = free[k] {
                residual[i] += local_r[k];
            }
        }
        if let Some(j) = jac.as_mut() {
            layout.scatter_velocity(j, t, &local_j);
        }
    }
    Ok((residual, jac))
}

pub fn viscous_residual(
    gd: &GradientDiscretisation,
    layout: &Layout,
    params: &RheologyParams,
    w: &DiscreteVelocity,
    g_full: &[f64],
) -> Result<Vec<f64>> {
    Ok(viscous_residual_and_jacobian(gd, layout, params, w, g_full, false)?.0)
}

pub fn viscous_jacobian(
    gd: &GradientDiscretisation,
    layout: &Layout,
    params: &RheologyParams,
    w: &DiscreteVelocity,
    g_full: &[f64],
) -> Result<CscMatrix> {
    Ok(viscous_residual_and_jacobian(gd, layout, params, w, g_full, true)?.1.expect("jacobian requested"))
}

/// `Σ_q w_q |V(ε_D w + ε g)|²`, the dissipation `‖V(ε_D w + ε g)‖²_{L²}`.
pub fn dissipation(
    gd: &GradientDiscretisation,
    params: &RheologyParams,
    w: &DiscreteVelocity,
    g_full: &[f64],
) -> Result<f64> {
    let full = gd.lift(w, g_full);
    let mut total = 0.0;
    for q in gd.quad_points() {
        let a = gd.gradient_full(&full, q).sym();
        total += gd.qp(q).weight * params.v_tensor(&a)?.norm_sq();
    }
    Ok(total)
}

/// `‖V(ε_D a + ε g) − V(ε_D b + ε g)‖²_{L²}`.
pub fn v_difference_sq(
    gd: &GradientDiscretisation,
    params: &RheologyParams,
    a: &DiscreteVelocity,
    b: &DiscreteVelocity,
    g_full: &[f64],
) -> Result<f64> {
    let (fa, fb) = (gd.lift(a, g_full), gd.lift(b, g_full));
    let mut total = 0.0;
    for q in gd.quad_points() {
        let va = params.v_tensor(&gd.gradient_full(&fa, q).sym())?;
        let vb = params.v_tensor(&gd.gradient_full(&fb, q).sym())?;
        total += gd.qp(q).weight * (va - vb).norm_sq();
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{BumpVortex, FnField, LidIndicator, SineForcing, ZeroField};
    use crate::sparse::{dot, norm};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_velocity(n: usize, rng: &mut ChaCha8Rng) -> DiscreteVelocity {
        DiscreteVelocity { coeffs: (0..n).map(|_| rng.random_range(-1.0..1.0)).collect() }
    }

    fn exp1_forms(n: usize) -> (GradientDiscretisation, AssembledForms) {
        let gd = GradientDiscretisation::uniform(n, n).unwrap();
        let g = vec![0.0; gd.dim_full()];
        let forms =
            AssembledForms::assemble_static(&gd, &BumpVortex { scale: 1e3 }, &g, &SineForcing { scale: 1e2 }).unwrap();
        (gd, forms)
    }

    #[test]
    fn zero_noise_gives_zero_noise_forms() {
        let gd = GradientDiscretisation::uniform(5, 5).unwrap();
        let g = gd.interpolate(&LidIndicator { speed: 1.0 }, true).unwrap();
        let forms = AssembledForms::assemble_static(&gd, &ZeroField, &g, &ZeroField).unwrap();
        assert!(forms.noise.values.iter().all(|&v| v == 0.0));
        assert!(forms.g_noise.iter().all(|&v| v == 0.0));
        assert!(forms.load.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_boundary_gives_zero_boundary_forms() {
        let (_, forms) = exp1_forms(5);
        assert!(forms.g_noise.iter().all(|&v| v == 0.0));
        assert!(forms.g_div.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn noise_matrix_is_exactly_skew() {
        let (gd, forms) = exp1_forms(9);
        assert_eq!(forms.noise.max_transpose_defect(-1.0), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let v = random_velocity(gd.dim_x0(), &mut rng);
            let q = forms.noise.bilinear(&v.coeffs, &v.coeffs);
            assert!(q.abs() <= 1e-12 * dot(&v.coeffs, &v.coeffs));
        }
    }

    #[test]
    fn noise_matrix_matches_pointwise_definition() {
        // B(v, ξ) = ½(σᵀ∇v, Πξ) − ½(Πv, σᵀ∇ξ), evaluated from reconstructions
        let (gd, forms) = exp1_forms(4);
        let sigma = BumpVortex { scale: 1e3 };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let v = random_velocity(gd.dim_x0(), &mut rng);
        let xi = random_velocity(gd.dim_x0(), &mut rng);
        let mut direct = 0.0;
        for q in gd.quad_points() {
            let data = gd.qp(q);
            let s = sigma.eval(data.x);
            let (gv, gx) = (gd.reconstruct_gradient(&v, q), gd.reconstruct_gradient(&xi, q));
            let (pv, px) = (gd.reconstruct_velocity(&v, q), gd.reconstruct_velocity(&xi, q));
            let sv = [s[0] * gv.0[0][0] + s[1] * gv.0[1][0], s[0] * gv.0[0][1] + s[1] * gv.0[1][1]];
            let sx = [s[0] * gx.0[0][0] + s[1] * gx.0[1][0], s[0] * gx.0[0][1] + s[1] * gx.0[1][1]];
            direct += data.weight * 0.5 * (sv[0] * px[0] + sv[1] * px[1] - pv[0] * sx[0] - pv[1] * sx[1]);
        }
        let assembled = forms.noise.bilinear(&xi.coeffs, &v.coeffs);
        assert!((direct - assembled).abs() < 1e-9 * direct.abs().max(1.0), "{direct} vs {assembled}");
    }

    #[test]
    fn mass_matrix_energy_matches_quadrature() {
        let (gd, forms) = exp1_forms(7);
        assert_eq!(forms.mass.max_transpose_defect(1.0), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..20 {
            let v = random_velocity(gd.dim_x0(), &mut rng);
            let e = forms.kinetic_energy(&v);
            let direct = 0.5 * gd.l2_norm_sq_full(&gd.expand(&v));
            assert!((e - direct).abs() < 1e-12 * direct.max(1.0));
            assert!(e > 0.0);
        }
    }

    #[test]
    fn linear_residual_is_stiffness_times_w() {
        let (gd, forms) = exp1_forms(6);
        let params = RheologyParams::new(2.0, 0.1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let w = random_velocity(gd.dim_x0(), &mut rng);
        let g = vec![0.0; gd.dim_full()];
        let r = viscous_residual(&gd, &forms.layout, &params, &w, &g).unwrap();
        // independent stiffness: ε-Gram by direct quadrature of reconstructions
        let n = gd.dim_x0();
        let mut kw = vec![0.0; n];
        for i in 0..n {
            let mut e = DiscreteVelocity::zeros(n);
            e.coeffs[i] = 1.0;
            kw[i] = gd
                .quad_points()
                .map(|q| gd.qp(q).weight * gd.symmetric_gradient(&e, q).ddot(&gd.symmetric_gradient(&w, q)))
                .sum();
        }
        for i in 0..n {
            assert!((r[i] - kw[i]).abs() < 1e-12 * (1.0 + kw[i].abs()));
        }
        let j = viscous_jacobian(&gd, &forms.layout, &params, &w, &g).unwrap();
        for (a, b) in j.values.iter().zip(&forms.stiffness.values) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_state_zero_residual() {
        let (gd, forms) = exp1_forms(5);
        let params = RheologyParams::new(1.5, 0.1).unwrap();
        let r = viscous_residual(&gd, &forms.layout, &params, &DiscreteVelocity::zeros(gd.dim_x0()), &forms.g_full)
            .unwrap();
        assert!(r.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn jacobian_symmetric_semidefinite_and_consistent() {
        let gd = GradientDiscretisation::uniform(5, 5).unwrap();
        let g = gd.interpolate(&LidIndicator { speed: 1.0 }, true).unwrap();
        let forms = AssembledForms::assemble_static(&gd, &BumpVortex { scale: 1e3 }, &g, &ZeroField).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for p in [1.5, 3.0] {
            let params = RheologyParams::new(p, 0.1).unwrap();
            let w = random_velocity(gd.dim_x0(), &mut rng);
            let (r0, j) = viscous_residual_and_jacobian(&gd, &forms.layout, &params, &w, &g, true).unwrap();
            let j = j.unwrap();
            assert!(j.max_transpose_defect(1.0) < 1e-12);
            for _ in 0..100 {
                let v = random_velocity(gd.dim_x0(), &mut rng);
                assert!(j.bilinear(&v.coeffs, &v.coeffs) >= 0.0);
            }
            let dir = random_velocity(gd.dim_x0(), &mut rng);
            let jd = j.mul_vec(&dir.coeffs);
            let mut errs = Vec::new();
            for h in [1e-3, 1e-4] {
                let shifted =
                    DiscreteVelocity { coeffs: w.coeffs.iter().zip(&dir.coeffs).map(|(a, b)| a + h * b).collect() };
                let r1 = viscous_residual(&gd, &forms.layout, &params, &shifted, &g).unwrap();
                let fd: Vec<f64> = r1.iter().zip(&r0).map(|(a, b)| (a - b) / h).collect();
                let diff: Vec<f64> = fd.iter().zip(&jd).map(|(a, b)| a - b).collect();
                errs.push(norm(&diff) / norm(&jd));
            }
            assert!(errs[1] < errs[0] * 0.2, "p={p}: {errs:?}");
            assert!(errs[1] < 1e-3);
        }
    }

    #[test]
    fn coupling_annihilates_constants() {
        let (gd, forms) = exp1_forms(6);
        let ones = vec![1.0; gd.dim_y()];
        let bt1 = forms.coupling.transpose_mul_vec(&ones);
        assert!(norm(&bt1) < 1e-12);
    }

    #[test]
    fn lid_datum_has_no_discrete_divergence() {
        let gd = GradientDiscretisation::uniform(9, 9).unwrap();
        let g = gd.interpolate(&LidIndicator { speed: 1.0 }, true).unwrap();
        let forms = AssembledForms::assemble_static(&gd, &BumpVortex { scale: 1e3 }, &g, &ZeroField).unwrap();
        assert!(forms.g_div.iter().all(|v| v.abs() < 1e-14));
        assert!(norm(&forms.g_noise) > 0.0);
    }

    #[test]
    fn parallel_static_assembly_is_bitwise_identical() {
        let gd = GradientDiscretisation::uniform(7, 7).unwrap();
        let g = gd.interpolate(&LidIndicator { speed: 1.0 }, true).unwrap();
        let sigma = BumpVortex { scale: 1e3 };
        let f = FnField(|x: [f64; 2]| [x[1].sin(), x[0] * x[0]]);
        let a = AssembledForms::assemble_static_with(&gd, &sigma, &g, &f, Execution::Sequential).unwrap();
        let b = crate::par::with_threads(Some(4), || {
            AssembledForms::assemble_static_with(&gd, &sigma, &g, &f, Execution::Parallel).unwrap()
        });
        assert_eq!(a.mass.values, b.mass.values);
        assert_eq!(a.noise.values, b.noise.values);
        assert_eq!(a.load, b.load);
        assert_eq!(a.g_noise, b.g_noise);
    }
}
