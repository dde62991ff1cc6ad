//! Monte-Carlo ensembles and the statistics computed from them: occupation
//! measures, invariance defects, the increment constant, field statistics
//! and streamlines of the mean field.

use serde::{Deserialize, Serialize};

use crate::assembly::{v_difference_sq, AssembledForms};
use crate::dynamics::{run_trajectory, DiscreteState, NoisePath, Observer, Stepper, StepperConfig};
use crate::error::{Error, Result};
use crate::gd::{DiscreteVelocity, GradientDiscretisation};
use crate::mesh::Point;
use crate::par::{self, Execution};

/// Default probe location for point statistics.
pub const DEFAULT_PROBE: Point = [0.5, 0.75];

/// Scalar functional of a velocity state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Observable {
    /// `½‖Π_D v‖²`.
    KineticEnergy,
    /// Component of `Π_D v + Π_D g` at a point.
    Point { x: Point, component: usize },
    /// `tanh(‖Π_D v‖ / scale)`: bounded by 1, Lipschitz with constant `1/scale`.
    BoundedNorm { scale: f64 },
}

impl Observable {
    pub fn name(&self) -> String {
        match self {
            Observable::KineticEnergy => "energy".into(),
            Observable::Point { x, component } => {
                format!("u{}({},{})", ["x", "y"][*component], x[0], x[1])
            }
            Observable::BoundedNorm { scale } => format!("tanh_norm({scale})"),
        }
    }

    pub fn bound(&self) -> Option<f64> {
        matches!(self, Observable::BoundedNorm { .. }).then_some(1.0)
    }

    pub fn eval(&self, gd: &GradientDiscretisation, forms: &AssembledForms, v: &DiscreteVelocity) -> Result<f64> {
        match self {
            Observable::KineticEnergy => Ok(forms.kinetic_energy(v)),
            Observable::Point { x, component } => Ok(gd.evaluate_full_at(&gd.lift(v, &forms.g_full), *x)?[*component]),
            Observable::BoundedNorm { scale } => Ok((forms.mass.bilinear(&v.coeffs, &v.coeffs).sqrt() / scale).tanh()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Observable::Point { x, component } => {
                if *component > 1 || !(0.0..=1.0).contains(&x[0]) || !(0.0..=1.0).contains(&x[1]) {
                    return Err(Error::Config(format!("invalid point observable {self:?}")));
                }
            }
            Observable::BoundedNorm { scale } if !(*scale > 0.0) => {
                return Err(Error::Config("bounded observable needs a positive scale".into()));
            }
            _ => {}
        }
        Ok(())
    }
}

pub fn default_observables() -> Vec<Observable> {
    vec![
        Observable::KineticEnergy,
        Observable::Point { x: DEFAULT_PROBE, component: 0 },
        Observable::Point { x: DEFAULT_PROBE, component: 1 },
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub samples: usize,
    pub master_seed: u64,
    pub stepper: StepperConfig,
    /// `false` runs every trajectory with `ΔW ≡ 0`.
    pub stochastic: bool,
    pub observables: Vec<Observable>,
    pub execution: Execution,
    /// Fail the whole ensemble on the first failing trajectory.
    pub strict: bool,
}

impl EnsembleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samples == 0 {
            return Err(Error::Config("sample size must be at least 1".into()));
        }
        self.stepper.validate()?;
        self.observables.iter().try_for_each(Observable::validate)
    }
}

/// Everything one trajectory contributes to the ensemble.
#[derive(Clone, Debug)]
pub struct TrajectorySeries {
    /// Trajectory index, starting at 1.
    pub index: usize,
    /// `integer[k][n]`: observable `k` at `𝔖(n)`, `n = 0..=N`.
    pub integer: Vec<Vec<f64>>,
    /// `shifted[k][n]`: observable `k` at `𝔖^{1/2}(n)`, `n = 0..N`.
    pub shifted: Vec<Vec<f64>>,
    /// `‖Π_D(v^{n+1} − v^n)‖²`, `n = 0..N`.
    pub increments: Vec<f64>,
    /// Final velocity including the boundary datum, as a full P2 vector.
    pub final_full: Vec<f64>,
    pub newton_iterations: usize,
    pub max_energy_defect: f64,
}

#[derive(Clone, Debug)]
pub struct EnsembleRecord {
    pub config: EnsembleConfig,
    /// Successful trajectories, ordered by index.
    pub trajectories: Vec<TrajectorySeries>,
    pub failures: Vec<(usize, String)>,
}

impl EnsembleRecord {
    pub fn is_partial(&self) -> bool {
        !self.failures.is_empty()
    }

    pub fn steps(&self) -> usize {
        self.config.stepper.steps
    }

    pub fn observable_index(&self, obs: &Observable) -> Option<usize> {
        self.config.observables.iter().position(|o| o == obs)
    }
}

struct SeriesObserver<'a> {
    gd: &'a GradientDiscretisation,
    forms: &'a AssembledForms,
    observables: &'a [Observable],
    integer: Vec<Vec<f64>>,
    shifted: Vec<Vec<f64>>,
    increments: Vec<f64>,
    previous: Option<DiscreteVelocity>,
    error: Option<Error>,
}

impl SeriesObserver<'_> {
    fn record(&mut self, v: &DiscreteVelocity, shifted: bool) {
        for (k, obs) in self.observables.iter().enumerate() {
            match obs.eval(self.gd, self.forms, v) {
                Ok(x) if shifted => self.shifted[k].push(x),
                Ok(x) => self.integer[k].push(x),
                Err(e) => {
                    self.error.get_or_insert(e);
                }
            }
        }
    }
}

impl Observer for SeriesObserver<'_> {
    fn integer(&mut self, _n: usize, v: &DiscreteVelocity) {
        self.record(v, false);
        if let Some(prev) = self.previous.take() {
            let d: Vec<f64> = v.coeffs.iter().zip(&prev.coeffs).map(|(a, b)| a - b).collect();
            self.increments.push(self.forms.mass.bilinear(&d, &d));
        }
        self.previous = Some(v.clone());
    }

    fn shifted(&mut self, _n: usize, w: &DiscreteVelocity) {
        self.record(w, true);
    }
}

/// Runs trajectory `index` (1-based) from `initial`.
pub fn run_series(
    gd: &GradientDiscretisation,
    forms: &AssembledForms,
    cfg: &EnsembleConfig,
    initial: &DiscreteState,
    index: usize,
) -> Result<TrajectorySeries> {
    let mut stepper = Stepper::new(gd, forms, cfg.stepper)?;
    let noise = if cfg.stochastic { NoisePath::new(cfg.master_seed, index as u64) } else { NoisePath::deterministic() };
    let k = cfg.observables.len();
    let steps = cfg.stepper.steps;
    let mut obs = SeriesObserver {
        gd,
        forms,
        observables: &cfg.observables,
        integer: vec![Vec::with_capacity(steps + 1); k],
        shifted: vec![Vec::with_capacity(steps); k],
        increments: Vec::with_capacity(steps),
        previous: None,
        error: None,
    };
    let rec = run_trajectory(&mut stepper, initial, &noise, &mut obs)?;
    if let Some(e) = obs.error {
        return Err(e);
    }
    Ok(TrajectorySeries {
        index,
        integer: obs.integer,
        shifted: obs.shifted,
        increments: obs.increments,
        final_full: gd.lift(&rec.final_state.v, &forms.g_full),
        newton_iterations: rec.newton_iterations,
        max_energy_defect: rec.max_energy_defect,
    })
}

/// Runs `L` independent trajectories. Results are keyed by trajectory index,
/// so the record does not depend on scheduling or thread count.
pub fn run_ensemble(
    gd: &GradientDiscretisation,
    forms: &AssembledForms,
    cfg: &EnsembleConfig,
    initial: &DiscreteState,
) -> Result<EnsembleRecord> {
    cfg.validate()?;
    let results = par::map_indexed(cfg.execution, cfg.samples, |l| run_series(gd, forms, cfg, initial, l + 1));
    let mut trajectories = Vec::with_capacity(cfg.samples);
    let mut failures = Vec::new();
    for (l, r) in results.into_iter().enumerate() {
        match r {
            Ok(s) => trajectories.push(s),
            Err(e) if cfg.strict => return Err(Error::Trajectory { trajectory: l + 1, source: Box::new(e) }),
            Err(e) => {
                log::warn!("trajectory {} failed: {e}", l + 1);
                failures.push((l + 1, e.to_string()));
            }
        }
    }
    if trajectories.is_empty() {
        return Err(Error::Data("every trajectory failed".into()));
    }
    Ok(EnsembleRecord { config: cfg.clone(), trajectories, failures })
}

/// Mean and standard error of a sample.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub standard_error: f64,
}

impl Estimate {
    pub fn from_samples(x: &[f64]) -> Self {
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let standard_error =
            if x.len() > 1 { (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt() } else { 0.0 };
        Self { mean, standard_error }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MeasureKind {
    Integer,
    Shifted,
}

impl MeasureKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MeasureKind::Integer => "integer",
            MeasureKind::Shifted => "shifted",
        }
    }
}

/// Empirical occupation measure of one observable: uniform weights over
/// `n = 0..N−1` and all trajectories.
#[derive(Clone, Debug)]
pub struct OccupationMeasure {
    pub kind: MeasureKind,
    pub observable: String,
    pub samples: Vec<f64>,
    pub horizon: usize,
    pub trajectories: usize,
}

impl OccupationMeasure {
    pub fn weight(&self) -> f64 {
        1.0 / self.samples.len() as f64
    }

    pub fn total_mass(&self) -> f64 {
        self.samples.iter().map(|_| self.weight()).sum()
    }

    /// Mass of `[lo, hi)`.
    pub fn mass_in(&self, lo: f64, hi: f64) -> f64 {
        self.samples.iter().filter(|&&x| x >= lo && x < hi).count() as f64 * self.weight()
    }

    pub fn mean(&self) -> f64 {
        self.samples.iter().sum::<f64>() * self.weight()
    }
}

fn series<'a>(t: &'a TrajectorySeries, kind: MeasureKind, k: usize) -> &'a [f64] {
    match kind {
        MeasureKind::Integer => &t.integer[k],
        MeasureKind::Shifted => &t.shifted[k],
    }
}

pub fn occupation_measure(
    ens: &EnsembleRecord,
    kind: MeasureKind,
    observable: usize,
    horizon: usize,
) -> Result<OccupationMeasure> {
    if horizon == 0 || horizon > ens.steps() {
        return Err(Error::Range { needed: horizon, available: ens.steps() });
    }
    let samples =
        ens.trajectories.iter().flat_map(|t| series(t, kind, observable)[..horizon].iter().copied()).collect();
    Ok(OccupationMeasure {
        kind,
        observable: ens.config.observables[observable].name(),
        samples,
        horizon,
        trajectories: ens.trajectories.len(),
    })
}

/// `|(1/N) Σ_{j<N} E f(n+j) − (1/N) Σ_{j<N} E f(j)|` with its Monte-Carlo
/// standard error, from per-trajectory index-shift differences.
pub fn invariance_defect(
    ens: &EnsembleRecord,
    kind: MeasureKind,
    observable: usize,
    n: usize,
    horizon: usize,
) -> Result<Estimate> {
    let available = match kind {
        MeasureKind::Integer => ens.steps() + 1,
        MeasureKind::Shifted => ens.steps(),
    };
    if horizon == 0 || n + horizon > available {
        return Err(Error::Range { needed: n + horizon, available });
    }
    let all: Vec<&[f64]> = ens.trajectories.iter().map(|t| series(t, kind, observable)).collect();
    shift_defect(&all, n, horizon)
}

/// Index-shift defect over raw per-trajectory series, each of length at
/// least `n + horizon`.
pub fn shift_defect(series: &[&[f64]], n: usize, horizon: usize) -> Result<Estimate> {
    if series.is_empty() {
        return Err(Error::Data("no trajectories".into()));
    }
    if let Some(short) = series.iter().map(|f| f.len()).filter(|&l| l < n + horizon).min() {
        return Err(Error::Range { needed: n + horizon, available: short });
    }
    let per: Vec<f64> =
        series.iter().map(|f| (0..horizon).map(|j| f[n + j] - f[j]).sum::<f64>() / horizon as f64).collect();
    let e = Estimate::from_samples(&per);
    Ok(Estimate { mean: e.mean.abs(), standard_error: e.standard_error })
}

/// `𝔠_D(τ)` estimator: `(1/N) Σ_{n<N} E ‖Π_D(v^{n+1} − v^n)‖²`.
pub fn increment_constant(ens: &EnsembleRecord, horizon: usize) -> Result<Estimate> {
    if horizon == 0 || horizon > ens.steps() {
        return Err(Error::Range { needed: horizon, available: ens.steps() });
    }
    let per: Vec<f64> =
        ens.trajectories.iter().map(|t| t.increments[..horizon].iter().sum::<f64>() / horizon as f64).collect();
    Ok(Estimate::from_samples(&per))
}

/// `log₂(c(2τ) / c(τ))`.
pub fn eoc(c_coarse: f64, c_fine: f64) -> f64 {
    (c_coarse / c_fine).log2()
}

/// Pointwise mean and unbiased standard deviation at every P2 node.
#[derive(Clone, Debug)]
pub struct FieldStatistics {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    pub samples: usize,
}

pub fn field_statistics(fields: &[&[f64]]) -> Result<FieldStatistics> {
    let Some(first) = fields.first() else {
        return Err(Error::Data("field statistics of an empty ensemble".into()));
    };
    let n = first.len();
    let l = fields.len() as f64;
    let mut mean = vec![0.0; n];
    for f in fields {
        for (m, v) in mean.iter_mut().zip(f.iter()) {
            *m += v / l;
        }
    }
    let mut sd = vec![0.0; n];
    if fields.len() > 1 {
        for f in fields {
            for ((s, v), m) in sd.iter_mut().zip(f.iter()).zip(&mean) {
                *s += (v - m).powi(2);
            }
        }
        sd.iter_mut().for_each(|s| *s = (*s / (l - 1.0)).sqrt());
    }
    Ok(FieldStatistics { mean, sd, samples: fields.len() })
}

pub fn ensemble_field_statistics(ens: &EnsembleRecord) -> Result<FieldStatistics> {
    let fields: Vec<&[f64]> = ens.trajectories.iter().map(|t| t.final_full.as_slice()).collect();
    field_statistics(&fields)
}

/// Seed for a streamline, tagged with the line it was generated on.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Seed {
    pub line: &'static str,
    pub point: Point,
}

/// 100 seeds on each of: both diagonals, the horizontal and the vertical line
/// through `(0.5, 0.75)`.
pub fn default_seeds() -> Vec<Seed> {
    let t = |k: usize| (k as f64 + 0.5) / 100.0;
    let mut seeds = Vec::with_capacity(400);
    seeds.extend((0..100).map(|k| Seed { line: "diagonal", point: [t(k), t(k)] }));
    seeds.extend((0..100).map(|k| Seed { line: "antidiagonal", point: [t(k), 1.0 - t(k)] }));
    seeds.extend((0..100).map(|k| Seed { line: "horizontal", point: [t(k), DEFAULT_PROBE[1]] }));
    seeds.extend((0..100).map(|k| Seed { line: "vertical", point: [DEFAULT_PROBE[0], t(k)] }));
    seeds
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StreamlineConfig {
    pub step: f64,
    pub max_steps: usize,
}

impl Default for StreamlineConfig {
    fn default() -> Self {
        Self { step: 1e-3, max_steps: 100_000 }
    }
}

#[derive(Clone, Debug)]
pub struct Streamline {
    pub seed: Seed,
    pub points: Vec<Point>,
    pub speeds: Vec<f64>,
}

fn inside(x: Point) -> bool {
    (0.0..=1.0).contains(&x[0]) && (0.0..=1.0).contains(&x[1])
}

/// RK4 particle path through the field `full` (a full P2 vector), stopping
/// on exit from the square, stagnation or after `max_steps`.
pub fn trace_streamline(
    gd: &GradientDiscretisation,
    full: &[f64],
    seed: Seed,
    cfg: &StreamlineConfig,
) -> Result<Streamline> {
    let eval = |x: Point| gd.evaluate_full_at(full, x);
    let speed = |u: [f64; 2]| u[0].hypot(u[1]);
    let mut x = seed.point;
    let mut u = eval(x)?;
    let mut points = vec![x];
    let mut speeds = vec![speed(u)];
    let h = cfg.step;
    for _ in 0..cfg.max_steps {
        if speed(u) < 1e-14 {
            break;
        }
        let stage = |x: Point, k: [f64; 2], a: f64| [x[0] + a * h * k[0], x[1] + a * h * k[1]];
        let k1 = u;
        let p2 = stage(x, k1, 0.5);
        let p3;
        let p4;
        let (k2, k3, k4);
        if !inside(p2) {
            break;
        }
        k2 = eval(p2)?;
        p3 = stage(x, k2, 0.5);
        if !inside(p3) {
            break;
        }
        k3 = eval(p3)?;
        p4 = stage(x, k3, 1.0);
        if !inside(p4) {
            break;
        }
        k4 = eval(p4)?;
        let next = [
            x[0] + h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
            x[1] + h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
        ];
        if !inside(next) {
            break;
        }
        x = next;
        u = eval(x)?;
        points.push(x);
        speeds.push(speed(u));
    }
    Ok(Streamline { seed, points, speeds })
}

/// Traces every seed; seeds outside the square are skipped with a warning.
pub fn streamlines(
    gd: &GradientDiscretisation,
    full: &[f64],
    seeds: &[Seed],
    cfg: &StreamlineConfig,
    exec: Execution,
) -> Result<Vec<Streamline>> {
    let traced = par::map_indexed(exec, seeds.len(), |i| {
        let s = seeds[i];
        if !inside(s.point) {
            log::warn!("streamline seed ({}, {}) lies outside the domain, skipped", s.point[0], s.point[1]);
            return Ok(None);
        }
        trace_streamline(gd, full, s, cfg).map(Some)
    });
    traced.into_iter().filter_map(|r| r.transpose()).collect()
}

/// Paired-trajectory bracket `[c, C]` for
/// `(‖Πδ^N‖² + Σ_n τ‖V(ε_D w_a + εg) − V(ε_D w_b + εg)‖²) / ‖Πδ⁰‖²`
/// over the given noise paths, evaluated at every `N`.
pub fn difference_energy_bracket(
    gd: &GradientDiscretisation,
    forms: &AssembledForms,
    cfg: &StepperConfig,
    a: &DiscreteState,
    b: &DiscreteState,
    paths: &[NoisePath],
) -> Result<(f64, f64)> {
    let mut lo = f64::INFINITY;
    let mut hi = 0.0f64;
    let dist = |x: &DiscreteVelocity, y: &DiscreteVelocity| {
        let d: Vec<f64> = x.coeffs.iter().zip(&y.coeffs).map(|(p, q)| p - q).collect();
        forms.mass.bilinear(&d, &d)
    };
    let d0 = dist(&a.v, &b.v);
    if d0 == 0.0 {
        return Err(Error::Data("paired initial data coincide".into()));
    }
    for path in paths {
        let mut sa = Stepper::new(gd, forms, *cfg)?;
        let mut sb = Stepper::new(gd, forms, *cfg)?;
        let (mut xa, mut xb) = (a.clone(), b.clone());
        let mut dissipated = 0.0;
        for n in 1..=cfg.steps {
            let dw = path.increment(n, cfg.tau);
            let (na, wa, _, _) = sa.step(&xa, dw, None)?;
            let (nb, wb, _, _) = sb.step(&xb, dw, None)?;
            dissipated += cfg.tau * v_difference_sq(gd, &cfg.rheology, &wa, &wb, &forms.g_full)?;
            xa = na;
            xb = nb;
            let ratio = (dist(&xa.v, &xb.v) + dissipated) / d0;
            lo = lo.min(ratio);
            hi = hi.max(ratio);
        }
    }
    Ok((lo, hi))
}
