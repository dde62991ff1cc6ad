//! Wiring from a resolved configuration to assembled forms, the initial
//! state and ensemble runs.

use crate::assembly::AssembledForms;
use crate::config::{ExperimentConfig, Preset, PresetFields};
use crate::dynamics::{DiscreteState, Stepper};
use crate::error::{Error, Result};
use crate::gd::GradientDiscretisation;
use crate::measures::{eoc, increment_constant, run_ensemble, EnsembleRecord, Estimate};
use crate::output::EocRow;
use crate::par;

pub struct Experiment {
    pub cfg: ExperimentConfig,
    pub gd: GradientDiscretisation,
    pub forms: AssembledForms,
    pub fields: PresetFields,
    pub initial: DiscreteState,
}

impl Experiment {
    pub fn build(cfg: ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let gd = GradientDiscretisation::uniform(cfg.mesh[0], cfg.mesh[1])?;
        let fields = cfg.fields();
        let g_full = gd.interpolate(fields.g.as_ref(), true)?;
        let forms = par::with_threads(cfg.threads, || {
            AssembledForms::assemble_static_with(
                &gd,
                fields.sigma.as_ref(),
                &g_full,
                fields.forcing.as_ref(),
                cfg.execution,
            )
        })?;
        let initial = Stepper::new(&gd, &forms, cfg.stepper())?.helmholtz_init(fields.v_in.as_ref())?;
        Ok(Self { cfg, gd, forms, fields, initial })
    }

    pub fn run_ensemble(&self) -> Result<EnsembleRecord> {
        let ens_cfg = self.cfg.ensemble();
        par::with_threads(self.cfg.threads, || run_ensemble(&self.gd, &self.forms, &ens_cfg, &self.initial))
    }

    /// Ensemble with a different time step; forms and initial state are reused.
    pub fn run_ensemble_with_tau(&self, tau: f64) -> Result<EnsembleRecord> {
        let mut cfg = self.cfg.clone();
        cfg.tau = tau;
        cfg.validate()?;
        let ens_cfg = cfg.ensemble();
        par::with_threads(cfg.threads, || run_ensemble(&self.gd, &self.forms, &ens_cfg, &self.initial))
    }
}

/// `𝔠_D(τ)` over successively halved time steps (coarsest first) for every
/// preset and exponent, with the EOC between neighbouring steps.
pub fn eoc_table(base: &ExperimentConfig, presets: &[Preset], ps: &[f64], taus: &[f64]) -> Result<Vec<EocRow>> {
    let mut taus = taus.to_vec();
    taus.sort_by(|a, b| b.total_cmp(a));
    check_halving(&taus)?;
    let mut estimates = Vec::new();
    for &preset in presets {
        for &p in ps {
            let mut cfg = base.clone();
            cfg.preset = preset;
            cfg.fields = crate::config::FieldSet::preset(preset);
            cfg.p = p;
            cfg.tau = taus[0];
            let exp = Experiment::build(cfg)?;
            for &tau in &taus {
                let ens = exp.run_ensemble_with_tau(tau)?;
                let c = increment_constant(&ens, ens.steps())?;
                log::info!("{} p={p} tau={tau}: c = {:.6e} ± {:.1e}", preset.as_str(), c.mean, c.standard_error);
                estimates.push(IncrementEstimate { experiment: preset.as_str().to_string(), p, tau, c });
            }
        }
    }
    eoc_rows(estimates)
}

fn check_halving(coarse_first: &[f64]) -> Result<()> {
    if coarse_first.windows(2).any(|w| (w[0] - 2.0 * w[1]).abs() > 1e-15 * w[0]) {
        return Err(Error::Config(format!("EOC time steps must halve successively, got {coarse_first:?}")));
    }
    Ok(())
}

/// One `𝔠_D(τ)` estimate, as produced by a run or read from stored output.
#[derive(Clone, Debug)]
pub struct IncrementEstimate {
    pub experiment: String,
    pub p: f64,
    pub tau: f64,
    pub c: Estimate,
}

/// Groups estimates by `(experiment, p)`, orders each group coarse-first and
/// attaches the EOC of every neighbouring pair. Groups keep first-seen order.
pub fn eoc_rows(estimates: Vec<IncrementEstimate>) -> Result<Vec<EocRow>> {
    let mut groups: Vec<((String, f64), Vec<IncrementEstimate>)> = Vec::new();
    for e in estimates {
        let key = (e.experiment.clone(), e.p);
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, g)) => g.push(e),
            None => groups.push((key, vec![e])),
        }
    }
    let mut rows = Vec::new();
    for (_, mut group) in groups {
        group.sort_by(|a, b| b.tau.total_cmp(&a.tau));
        check_halving(&group.iter().map(|e| e.tau).collect::<Vec<_>>())?;
        let mut previous: Option<f64> = None;
        for e in group {
            rows.push(EocRow {
                experiment: e.experiment,
                p: e.p,
                tau: e.tau,
                c_tau: e.c.mean,
                c_tau_se: e.c.standard_error,
                eoc: previous.map(|coarse| eoc(coarse, e.c.mean)),
            });
            previous = Some(e.c.mean);
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn est(experiment: &str, p: f64, tau: f64, c: f64) -> IncrementEstimate {
        IncrementEstimate { experiment: experiment.into(), p, tau, c: Estimate { mean: c, standard_error: 0.0 } }
    }

    #[test]
    fn rows_are_grouped_and_ordered_coarse_first() {
        let rows = eoc_rows(vec![
            est("exp1", 2.0, 0.25, 1.0),
            est("exp2", 2.0, 0.5, 8.0),
            est("exp1", 2.0, 0.5, 4.0),
            est("exp2", 2.0, 0.25, 2.0),
        ])
        .unwrap();
        let taus: Vec<f64> = rows.iter().map(|r| r.tau).collect();
        assert_eq!(taus, vec![0.5, 0.25, 0.5, 0.25]);
        assert_eq!(rows[0].eoc, None);
        assert_eq!(rows[1].eoc, Some(2.0));
        assert_eq!(rows[3].experiment, "exp2");
        assert_eq!(rows[3].eoc, Some(2.0));
    }

    #[test]
    fn gaps_in_the_step_sequence_are_rejected() {
        assert!(eoc_rows(vec![est("exp1", 2.0, 0.5, 1.0), est("exp1", 2.0, 0.125, 0.5)]).is_err());
    }
}
