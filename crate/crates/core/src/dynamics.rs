//! The time-stepping scheme: discrete Helmholtz initialisation, the
//! Crank–Nicolson step in half-step form, Wiener increments and full
//! trajectories.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::assembly::{viscous_jacobian, viscous_residual, AssembledForms};
use crate::error::{Error, Result};
use crate::fields::VectorField;
use crate::gd::{DiscretePressure, DiscreteVelocity, GradientDiscretisation};
use crate::rheology::RheologyParams;
use crate::solver::{newton_solve, NewtonConfig, NewtonProblem, NewtonReport, SaddleSystem};
use crate::sparse::{dot, norm, CscMatrix};

#[derive(Clone, Debug)]
pub struct DiscreteState {
    pub v: DiscreteVelocity,
    /// Time-integrated pressure.
    pub pi: DiscretePressure,
    pub n: usize,
    pub t: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepperConfig {
    pub tau: f64,
    pub steps: usize,
    pub rheology: RheologyParams,
    pub newton: NewtonConfig,
}

impl StepperConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Config(format!("time step must be positive, got {}", self.tau)));
        }
        self.rheology.validate()?;
        self.newton.validate()
    }
}

/// Wiener increments of one trajectory. Increment `n` (for the step from
/// `n - 1` to `n`) depends on `(master_seed, trajectory, n)` only: each draw
/// reads a fixed window of a ChaCha20 stream selected by the trajectory.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NoisePath {
    pub master_seed: u64,
    pub trajectory: u64,
    /// `false` gives the deterministic path `ΔW ≡ 0`.
    pub active: bool,
}

impl NoisePath {
    pub fn new(master_seed: u64, trajectory: u64) -> Self {
        Self { master_seed, trajectory, active: true }
    }

    pub fn deterministic() -> Self {
        Self { master_seed: 0, trajectory: 0, active: false }
    }

    /// Standard normal sample number `n` (`n ≥ 1`) by Box–Muller.
    pub fn standard_normal(&self, n: usize) -> f64 {
        let mut rng = ChaCha20Rng::seed_from_u64(self.master_seed);
        rng.set_stream(self.trajectory);
        rng.set_word_pos(4 * (n as u128).saturating_sub(1));
        // u1 in (0, 1], u2 in [0, 1)
        let u1 = ((rng.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
        let u2 = (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// `Δ_n W ~ N(0, τ)`.
    pub fn increment(&self, n: usize, tau: f64) -> f64 {
        if self.active {
            tau.sqrt() * self.standard_normal(n)
        } else {
            0.0
        }
    }
}

/// Diagnostics of one time step.
#[derive(Clone, Copy, Debug)]
pub struct StepReport {
    pub newton: NewtonReport,
    pub dw: f64,
    /// Residual of the one-step energy balance obtained by testing with `w`.
    pub energy_defect: f64,
    /// `‖B w + m λ − g_div‖` at the half step.
    pub half_div_residual: f64,
    /// `‖B v^{n+1} − g_div‖` at the integer step.
    pub integer_div_residual: f64,
}

/// Receives the solution operators in order: `integer(0)`, `shifted(0)`,
/// `integer(1)`, ..., `integer(N)`.
pub trait Observer {
    fn integer(&mut self, n: usize, v: &DiscreteVelocity);
    fn shifted(&mut self, _n: usize, _w: &DiscreteVelocity) {}
}

/// One stepper per trajectory: owns the factorization workspace.
pub struct Stepper<'a> {
    pub gd: &'a GradientDiscretisation,
    pub forms: &'a AssembledForms,
    pub cfg: StepperConfig,
    saddle: SaddleSystem,
}

struct CnProblem<'s, 'a> {
    stepper: &'s mut Stepper<'a>,
    v_old: &'s [f64],
    dw: f64,
    nf: usize,
    np: usize,
}

impl CnProblem<'_, '_> {
    fn split<'x>(&self, x: &'x [f64]) -> (&'x [f64], &'x [f64], f64) {
        (&x[..self.nf], &x[self.nf..self.nf + self.np], x[self.nf + self.np])
    }
}

impl NewtonProblem for CnProblem<'_, '_> {
    fn residual(&mut self, x: &[f64]) -> Result<Vec<f64>> {
        let (w, dpi, lambda) = self.split(x);
        let s = &*self.stepper;
        let f = s.forms;
        let tau = s.cfg.tau;
        let wv = DiscreteVelocity { coeffs: w.to_vec() };
        let visc = viscous_residual(s.gd, &f.layout, &s.cfg.rheology, &wv, &f.g_full)?;
        let diff: Vec<f64> = w.iter().zip(self.v_old).map(|(a, b)| a - b).collect();
        let mdiff = f.mass.mul_vec(&diff);
        let btp = f.coupling.transpose_mul_vec(dpi);
        let bsw = if self.dw != 0.0 { f.noise.mul_vec(w) } else { vec![0.0; self.nf] };
        let mut r = Vec::with_capacity(x.len());
        for i in 0..self.nf {
            r.push(2.0 * mdiff[i] + tau * visc[i] - btp[i] - self.dw * (bsw[i] + f.g_noise[i]) - tau * f.load[i]);
        }
        let bw = f.coupling.mul_vec(w);
        for q in 0..self.np {
            r.push(bw[q] - f.g_div[q] + f.pressure_mean[q] * lambda);
        }
        r.push(dot(&f.pressure_mean, dpi));
        Ok(r)
    }

    fn solve_linearised(&mut self, x: &[f64], r: &[f64]) -> Result<Vec<f64>> {
        let (w, _, _) = self.split(x);
        let s = &mut *self.stepper;
        let f = s.forms;
        let wv = DiscreteVelocity { coeffs: w.to_vec() };
        let jv = viscous_jacobian(s.gd, &f.layout, &s.cfg.rheology, &wv, &f.g_full)?;
        let a = CscMatrix::linear_combination(&[(2.0, &f.mass), (s.cfg.tau, &jv), (-self.dw, &f.noise)]);
        s.saddle.factor(&a)?;
        let (dv, dq, dl) =
            s.saddle.solve_with_mean(&r[..self.nf], &r[self.nf..self.nf + self.np], r[self.nf + self.np])?;
        let mut out = dv;
        out.extend(dq);
        out.push(dl);
        Ok(out)
    }
}

impl<'a> Stepper<'a> {
    pub fn new(gd: &'a GradientDiscretisation, forms: &'a AssembledForms, cfg: StepperConfig) -> Result<Self> {
        cfg.validate()?;
        let saddle = SaddleSystem::new(forms.layout.velocity.clone(), &forms.coupling, &forms.pressure_mean);
        Ok(Self { gd, forms, cfg, saddle })
    }

    pub fn kinetic_energy(&self, v: &DiscreteVelocity) -> f64 {
        self.forms.kinetic_energy(v)
    }

    /// Discrete Helmholtz projection of `v_in` onto the discretely
    /// divergence-free velocities.
    pub fn helmholtz_init(&mut self, v_in: &dyn VectorField) -> Result<DiscreteState> {
        let rhs = AssembledForms::project_rhs(self.gd, v_in)?;
        self.helmholtz_from_rhs(&rhs)
    }

    /// Helmholtz projection for the right-hand side `(f, Π_D φ_i)`.
    pub fn helmholtz_from_rhs(&mut self, rhs: &[f64]) -> Result<DiscreteState> {
        let (nf, np) = (self.gd.dim_x0(), self.gd.dim_y());
        if norm(rhs) == 0.0 {
            return Ok(DiscreteState {
                v: DiscreteVelocity::zeros(nf),
                pi: DiscretePressure { coeffs: vec![0.0; np], mean_zero: true },
                n: 0,
                t: 0.0,
            });
        }
        self.saddle.factor(&self.forms.mass)?;
        let (v, pi, _) = self.saddle.solve(rhs, &vec![0.0; np])?;
        Ok(DiscreteState {
            v: DiscreteVelocity { coeffs: v },
            pi: DiscretePressure { coeffs: pi, mean_zero: true },
            n: 0,
            t: 0.0,
        })
    }

    /// One Crank–Nicolson step with increment `dw`. `warm` is the Newton
    /// initial guess `(w, δπ)`; the previous half step by default.
    /// Returns the new state and the half-step velocity `w`.
    pub fn step(
        &mut self,
        state: &DiscreteState,
        dw: f64,
        warm: Option<(&[f64], &[f64])>,
    ) -> Result<(DiscreteState, DiscreteVelocity, Vec<f64>, StepReport)> {
        let (nf, np) = (self.gd.dim_x0(), self.gd.dim_y());
        let mut x0 = Vec::with_capacity(nf + np + 1);
        match warm {
            Some((w, dpi)) => {
                x0.extend_from_slice(w);
                x0.extend_from_slice(dpi);
            }
            None => {
                x0.extend_from_slice(&state.v.coeffs);
                x0.extend(std::iter::repeat_n(0.0, np));
            }
        }
        x0.push(0.0);
        let newton_cfg = self.cfg.newton;
        let mut problem = CnProblem { stepper: self, v_old: &state.v.coeffs, dw, nf, np };
        let (x, report) = newton_solve(&mut problem, x0, &newton_cfg)
            .map_err(|e| Error::Step { step: state.n + 1, source: Box::new(e) })?;
        let lambda = x[nf + np];
        let w = DiscreteVelocity { coeffs: x[..nf].to_vec() };
        let dpi = x[nf..nf + np].to_vec();
        let v_new =
            DiscreteVelocity { coeffs: w.coeffs.iter().zip(&state.v.coeffs).map(|(w, v)| 2.0 * w - v).collect() };
        let pi_new = DiscretePressure {
            coeffs: state.pi.coeffs.iter().zip(&dpi).map(|(a, b)| a + b).collect(),
            mean_zero: true,
        };
        if !v_new.is_finite() {
            return Err(Error::Step { step: state.n + 1, source: Box::new(Error::Data("non-finite velocity".into())) });
        }

        let f = self.forms;
        let tau = self.cfg.tau;
        let bw = f.coupling.mul_vec(&w.coeffs);
        let half: Vec<f64> =
            bw.iter().zip(&f.g_div).zip(&f.pressure_mean).map(|((b, g), m)| b - g + m * lambda).collect();
        let bv = f.coupling.mul_vec(&v_new.coeffs);
        let integer: Vec<f64> = bv.iter().zip(&f.g_div).map(|(b, g)| b - g).collect();
        // ½‖v^{n+1}‖² − ½‖v^n‖² + τ(S, ε w) − τ(F, w) − ΔW((σ·∇)g, w) − (δπ, div w)
        let visc = viscous_residual(self.gd, &f.layout, &self.cfg.rheology, &w, &f.g_full)?;
        let energy_defect = self.kinetic_energy(&v_new) - self.kinetic_energy(&state.v) + tau * dot(&visc, &w.coeffs)
            - tau * dot(&f.load, &w.coeffs)
            - dw * dot(&f.g_noise, &w.coeffs)
            - dot(&dpi, &bw);
        let step_report = StepReport {
            newton: report,
            dw,
            energy_defect,
            half_div_residual: norm(&half),
            integer_div_residual: norm(&integer),
        };
        log::debug!(
            "step {}: newton {} it, residual {:.2e}, energy defect {:.2e}, div half {:.2e} integer {:.2e}",
            state.n + 1,
            report.iterations,
            report.final_residual,
            energy_defect,
            step_report.half_div_residual,
            step_report.integer_div_residual
        );
        let next = DiscreteState { v: v_new, pi: pi_new, n: state.n + 1, t: (state.n + 1) as f64 * tau };
        Ok((next, w, dpi, step_report))
    }
}

/// Summary of one trajectory.
#[derive(Clone, Debug)]
pub struct TrajectoryRecord {
    /// `½‖Π_D v^n‖²` for `n = 0..=N`.
    pub energies: Vec<f64>,
    pub final_state: DiscreteState,
    pub newton_iterations: usize,
    /// `max_n |energy defect|`.
    pub max_energy_defect: f64,
    pub max_half_div_residual: f64,
    pub max_integer_div_residual: f64,
    pub increments: Vec<f64>,
}

/// Runs `cfg.steps` steps from `initial`, feeding every state to `observer`.
pub fn run_trajectory(
    stepper: &mut Stepper<'_>,
    initial: &DiscreteState,
    noise: &NoisePath,
    observer: &mut dyn Observer,
) -> Result<TrajectoryRecord> {
    let steps = stepper.cfg.steps;
    let tau = stepper.cfg.tau;
    let mut energies = Vec::with_capacity(steps + 1);
    let mut increments = Vec::with_capacity(steps);
    energies.push(stepper.kinetic_energy(&initial.v));
    observer.integer(0, &initial.v);
    let mut state = initial.clone();
    let mut warm: Option<(DiscreteVelocity, Vec<f64>)> = None;
    let (mut iters, mut defect, mut half_div, mut int_div) = (0, 0.0f64, 0.0f64, 0.0f64);
    for n in 1..=steps {
        let dw = noise.increment(n, tau);
        let warm_ref = warm.as_ref().map(|(w, p)| (w.coeffs.as_slice(), p.as_slice()));
        let (next, w, dpi, report) = stepper.step(&state, dw, warm_ref)?;
        observer.shifted(n - 1, &w);
        observer.integer(n, &next.v);
        energies.push(stepper.kinetic_energy(&next.v));
        increments.push(dw);
        iters += report.newton.iterations;
        defect = defect.max(report.energy_defect.abs());
        half_div = half_div.max(report.half_div_residual);
        int_div = int_div.max(report.integer_div_residual);
        warm = Some((w, dpi));
        state = next;
    }
    Ok(TrajectoryRecord {
        energies,
        final_state: state,
        newton_iterations: iters,
        max_energy_defect: defect,
        max_half_div_residual: half_div,
        max_integer_div_residual: int_div,
        increments,
    })
}

/// Observer that ignores everything.
pub struct NullObserver;

impl Observer for NullObserver {
    fn integer(&mut self, _n: usize, _v: &DiscreteVelocity) {}
}

/// Observer that stores every state (tests and small runs only).
#[derive(Default)]
pub struct StateRecorder {
    pub integer: Vec<DiscreteVelocity>,
    pub shifted: Vec<DiscreteVelocity>,
}

impl Observer for StateRecorder {
    fn integer(&mut self, n: usize, v: &DiscreteVelocity) {
        debug_assert_eq!(n, self.integer.len());
        self.integer.push(v.clone());
    }
    fn shifted(&mut self, n: usize, w: &DiscreteVelocity) {
        debug_assert_eq!(n, self.shifted.len());
        self.shifted.push(w.clone());
    }
}
