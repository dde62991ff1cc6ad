//! Invariant battery behind the `validate` command: cheap structural and
//! short-run checks on the configured mesh, rheology and fields.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::ExperimentConfig;
use crate::dynamics::{run_trajectory, NoisePath, NullObserver, Stepper};
use crate::error::Result;
use crate::experiment::Experiment;
use crate::measures::{default_seeds, occupation_measure, run_ensemble, MeasureKind};
use crate::par::Execution;
use crate::rheology::Mat2;
use crate::sparse::norm;

const SHORT_RUN_STEPS: usize = 8;
const SHORT_RUN_PATHS: u64 = 2;

#[derive(Clone, Debug)]
pub struct Check {
    pub name: &'static str,
    pub value: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl Check {
    fn at_most(name: &'static str, value: f64, tolerance: f64) -> Self {
        Self { name, value, tolerance, passed: value <= tolerance }
    }
}

/// Runs every check; an error means the battery itself could not run.
pub fn run_battery(cfg: &ExperimentConfig) -> Result<Vec<Check>> {
    let exp = Experiment::build(cfg.clone())?;
    let (gd, forms) = (&exp.gd, &exp.forms);
    let mut checks = Vec::new();

    let mass_scale = forms.mass.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    checks.push(Check::at_most("mass matrix symmetry", forms.mass.max_transpose_defect(1.0) / mass_scale, 1e-14));
    checks.push(Check::at_most("noise form skew-symmetry", forms.noise.max_transpose_defect(-1.0), 1e-13));
    let ones = vec![1.0; gd.dim_y()];
    let kernel = norm(&forms.coupling.transpose_mul_vec(&ones));
    checks.push(Check::at_most("constant pressure in kernel of divergence", kernel, 1e-12));

    let v0 = &exp.initial.v.coeffs;
    let v0_norm = forms.mass.bilinear(v0, v0).sqrt();
    let div0 = norm(&forms.coupling.mul_vec(v0));
    checks.push(Check::at_most("initial state discretely divergence-free", div0 / v0_norm.max(1.0), 1e-10));
    let mut stepper = Stepper::new(gd, forms, cfg.stepper())?;
    let again = stepper.helmholtz_from_rhs(&forms.mass.mul_vec(v0))?.v.coeffs;
    let d: Vec<f64> = again.iter().zip(v0).map(|(a, b)| a - b).collect();
    checks.push(Check::at_most(
        "Helmholtz projection idempotent",
        forms.mass.bilinear(&d, &d).sqrt() / v0_norm.max(1.0),
        1e-10,
    ));

    let mut short = cfg.stepper();
    short.steps = short.steps.min(SHORT_RUN_STEPS);
    let mut stepper = Stepper::new(gd, forms, short)?;
    let (mut defect, mut div, mut scale) = (0.0f64, 0.0f64, stepper.kinetic_energy(&exp.initial.v));
    for l in 1..=SHORT_RUN_PATHS {
        let noise = if cfg.stochastic { NoisePath::new(cfg.seed, l) } else { NoisePath::deterministic() };
        let rec = run_trajectory(&mut stepper, &exp.initial, &noise, &mut NullObserver)?;
        defect = defect.max(rec.max_energy_defect);
        div = div.max(rec.max_integer_div_residual);
        scale = rec.energies.iter().fold(scale, |m, e| m.max(*e));
    }
    checks.push(Check::at_most("pathwise energy identity", defect / scale.max(f64::MIN_POSITIVE), 1e-7));
    checks.push(Check::at_most("discrete divergence of every state", div / scale.sqrt().max(1.0), 1e-8));

    let mut ens_cfg = cfg.ensemble();
    ens_cfg.samples = 2;
    ens_cfg.stepper = short;
    ens_cfg.execution = Execution::Sequential;
    let seq = run_ensemble(gd, forms, &ens_cfg, &exp.initial)?;
    ens_cfg.execution = Execution::Parallel;
    let par = run_ensemble(gd, forms, &ens_cfg, &exp.initial)?;
    let mut mass_gap = 0.0f64;
    let mut mismatch = 0.0f64;
    for kind in [MeasureKind::Integer, MeasureKind::Shifted] {
        for k in 0..ens_cfg.observables.len() {
            let a = occupation_measure(&seq, kind, k, short.steps)?;
            let b = occupation_measure(&par, kind, k, short.steps)?;
            mass_gap = mass_gap.max((a.total_mass() - 1.0).abs());
            if a.samples != b.samples {
                mismatch += 1.0;
            }
        }
    }
    checks.push(Check::at_most("occupation measures have unit mass", mass_gap, 1e-12));
    checks.push(Check::at_most("samples independent of execution policy", mismatch, 0.0));

    let params = cfg.rheology();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut fd = 0.0f64;
    for _ in 0..100 {
        let mut m = || {
            Mat2::new(
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
            )
        };
        let (a, h) = (m(), m());
        let h_step = 1e-5;
        let diff =
            (params.stress(&(a + h.scale(h_step)))? - params.stress(&(a - h.scale(h_step)))?).scale(0.5 / h_step);
        let exact = params.stress_derivative(&a, &h)?;
        fd = fd.max((diff - exact).norm() / exact.norm().max(f64::MIN_POSITIVE));
    }
    checks.push(Check::at_most("stress derivative matches finite differences", fd, 1e-5));

    let seeds = default_seeds();
    let per_line_ok = ["diagonal", "antidiagonal", "horizontal", "vertical"]
        .iter()
        .all(|line| seeds.iter().filter(|s| s.line == *line).count() == 100);
    let inside = seeds.iter().all(|s| (0.0..=1.0).contains(&s.point[0]) && (0.0..=1.0).contains(&s.point[1]));
    let seed_ok = seeds.len() == 400 && per_line_ok && inside;
    checks.push(Check {
        name: "streamline seed generator",
        value: f64::from(u8::from(!seed_ok)),
        tolerance: 0.0,
        passed: seed_ok,
    });

    Ok(checks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ConfigFile;

    #[test]
    fn default_config_passes_on_a_small_mesh() {
        let file = ConfigFile { mesh: Some([5, 5]), ..ConfigFile::default() };
        let cfg = ExperimentConfig::resolve(file).unwrap();
        let checks = run_battery(&cfg).unwrap();
        assert_eq!(checks.len(), 11);
        for c in &checks {
            assert!(c.passed, "{}: {:e} > {:e}", c.name, c.value, c.tolerance);
        }
    }

    #[test]
    fn lid_preset_passes_deterministically() {
        let file = ConfigFile {
            mesh: Some([5, 5]),
            preset: Some(crate::config::Preset::Exp2),
            stochastic: Some(false),
            ..ConfigFile::default()
        };
        let cfg = ExperimentConfig::resolve(file).unwrap();
        assert!(run_battery(&cfg).unwrap().iter().all(|c| c.passed));
    }
}
