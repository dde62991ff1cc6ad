//! Experiment configuration: presets, profiles, the TOML file schema and the
//! reproducibility manifest.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dynamics::StepperConfig;
use crate::error::{Error, Result};
use crate::fields::{BumpVortex, FieldExpr, LidIndicator, SineForcing, ZeroField};
use crate::measures::{default_observables, EnsembleConfig, Observable, StreamlineConfig, DEFAULT_PROBE};
use crate::par::Execution;
use crate::rheology::RheologyParams;
use crate::solver::NewtonConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// Homogeneous walls, vortex initial data and noise, sinusoidal forcing.
    Exp1,
    /// Lid-driven cavity from rest.
    Exp2,
    /// Fields taken from the `[fields]` table.
    Custom,
}

impl Preset {
    pub fn as_str(self) -> &'static str {
        match self {
            Preset::Exp1 => "exp1",
            Preset::Exp2 => "exp2",
            Preset::Custom => "custom",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// 9×9 mesh, 100 samples, τ = 2⁻⁵.
    Desk,
    /// 13×13 mesh, 1000 samples, τ = 2⁻⁹.
    Paper,
}

/// Closed-form field selectable from configuration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum FieldSpec {
    Zero,
    Vortex { scale: f64 },
    Sine { scale: f64 },
    Lid { speed: f64 },
}

impl FieldSpec {
    pub fn build(self) -> FieldExpr {
        match self {
            FieldSpec::Zero => Arc::new(ZeroField),
            FieldSpec::Vortex { scale } => Arc::new(BumpVortex { scale }),
            FieldSpec::Sine { scale } => Arc::new(SineForcing { scale }),
            FieldSpec::Lid { speed } => Arc::new(LidIndicator { speed }),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldSet {
    pub v_in: FieldSpec,
    pub sigma: FieldSpec,
    pub g: FieldSpec,
    pub forcing: FieldSpec,
}

impl FieldSet {
    pub fn preset(preset: Preset) -> Self {
        match preset {
            Preset::Exp1 => FieldSet {
                v_in: FieldSpec::Vortex { scale: 1e3 },
                sigma: FieldSpec::Vortex { scale: 1e3 },
                g: FieldSpec::Zero,
                forcing: FieldSpec::Sine { scale: 1e2 },
            },
            Preset::Exp2 => FieldSet {
                v_in: FieldSpec::Zero,
                sigma: FieldSpec::Vortex { scale: 1e3 },
                g: FieldSpec::Lid { speed: 1.0 },
                forcing: FieldSpec::Zero,
            },
            Preset::Custom => {
                FieldSet { v_in: FieldSpec::Zero, sigma: FieldSpec::Zero, g: FieldSpec::Zero, forcing: FieldSpec::Zero }
            }
        }
    }
}

/// Built field handles of an experiment.
#[derive(Clone, Debug)]
pub struct PresetFields {
    pub v_in: FieldExpr,
    pub sigma: FieldExpr,
    pub g: FieldExpr,
    pub forcing: FieldExpr,
}

impl From<FieldSet> for PresetFields {
    fn from(f: FieldSet) -> Self {
        Self { v_in: f.v_in.build(), sigma: f.sigma.build(), g: f.g.build(), forcing: f.forcing.build() }
    }
}

pub fn preset_fields(preset: Preset) -> PresetFields {
    FieldSet::preset(preset).into()
}

/// The configuration file. Every key is optional; missing keys come from the
/// profile and preset defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub preset: Option<Preset>,
    pub profile: Option<Profile>,
    pub mesh: Option<[usize; 2]>,
    pub p: Option<f64>,
    pub kappa: Option<f64>,
    pub tau: Option<f64>,
    pub horizon: Option<f64>,
    pub samples: Option<usize>,
    pub seed: Option<u64>,
    pub stochastic: Option<bool>,
    pub strict: Option<bool>,
    pub probe: Option<[f64; 2]>,
    pub execution: Option<Execution>,
    pub threads: Option<usize>,
    pub newton: Option<NewtonConfig>,
    pub streamlines: Option<StreamlineConfig>,
    pub fields: Option<FieldSet>,
    /// Present in manifests; informational when loading.
    pub manifest: Option<ManifestInfo>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Overlays the keys set in `other`.
    pub fn merge(mut self, other: ConfigFile) -> Self {
        macro_rules! take {
            ($($f:ident),*) => { $( if other.$f.is_some() { self.$f = other.$f; } )* };
        }
        take!(
            preset,
            profile,
            mesh,
            p,
            kappa,
            tau,
            horizon,
            samples,
            seed,
            stochastic,
            strict,
            probe,
            execution,
            threads,
            newton,
            streamlines,
            fields,
            manifest
        );
        self
    }
}

/// Fully resolved experiment.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub preset: Preset,
    pub profile: Profile,
    pub mesh: [usize; 2],
    pub p: f64,
    pub kappa: f64,
    pub tau: f64,
    pub horizon: f64,
    pub samples: usize,
    pub seed: u64,
    pub stochastic: bool,
    pub strict: bool,
    pub probe: [f64; 2],
    pub execution: Execution,
    pub threads: Option<usize>,
    pub newton: NewtonConfig,
    pub streamlines: StreamlineConfig,
    pub fields: FieldSet,
}

impl ExperimentConfig {
    pub fn resolve(file: ConfigFile) -> Result<Self> {
        let profile = file.profile.unwrap_or(Profile::Desk);
        let preset = file.preset.unwrap_or(Preset::Exp1);
        let (mesh, samples, tau) = match profile {
            Profile::Desk => ([9, 9], 100, 2f64.powi(-5)),
            Profile::Paper => ([13, 13], 1000, 2f64.powi(-9)),
        };
        if preset != Preset::Custom && file.fields.is_some() {
            return Err(Error::Config(format!("[fields] requires preset = \"custom\", got {}", preset.as_str())));
        }
        let cfg = Self {
            preset,
            profile,
            mesh: file.mesh.unwrap_or(mesh),
            p: file.p.unwrap_or(2.0),
            kappa: file.kappa.unwrap_or(0.1),
            tau: file.tau.unwrap_or(tau),
            horizon: file.horizon.unwrap_or(1.0),
            samples: file.samples.unwrap_or(samples),
            seed: file.seed.unwrap_or(1),
            stochastic: file.stochastic.unwrap_or(true),
            strict: file.strict.unwrap_or(true),
            probe: file.probe.unwrap_or(DEFAULT_PROBE),
            execution: file.execution.unwrap_or_default(),
            threads: file.threads,
            newton: file.newton.unwrap_or_default(),
            streamlines: file.streamlines.unwrap_or_default(),
            fields: file.fields.unwrap_or_else(|| FieldSet::preset(preset)),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Collects every violated invariant into one error.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.mesh[0] < 2 || self.mesh[1] < 2 {
            problems.push(format!("mesh needs at least 2×2 vertices, got {:?}", self.mesh));
        }
        if let Err(e) = RheologyParams::new(self.p, self.kappa) {
            problems.push(e.to_string());
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            problems.push(format!("tau must be positive, got {}", self.tau));
        } else if !(self.horizon > 0.0) {
            problems.push(format!("horizon must be positive, got {}", self.horizon));
        } else {
            let n = (self.horizon / self.tau).round();
            if n < 1.0 || (n * self.tau - self.horizon).abs() > 1e-12 {
                problems.push(format!("horizon {} is not a multiple of tau {}", self.horizon, self.tau));
            }
        }
        if self.samples == 0 {
            problems.push("samples must be at least 1".into());
        }
        if let Err(e) = self.newton.validate() {
            problems.push(e.to_string());
        }
        if !(self.streamlines.step > 0.0) {
            problems.push("streamline step must be positive".into());
        }
        if self.threads == Some(0) {
            problems.push("threads must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.probe[0]) || !(0.0..=1.0).contains(&self.probe[1]) {
            problems.push(format!("probe {:?} lies outside the unit square", self.probe));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }

    pub fn steps(&self) -> usize {
        (self.horizon / self.tau).round() as usize
    }

    pub fn rheology(&self) -> RheologyParams {
        RheologyParams { p: self.p, kappa: self.kappa }
    }

    pub fn stepper(&self) -> StepperConfig {
        StepperConfig { tau: self.tau, steps: self.steps(), rheology: self.rheology(), newton: self.newton }
    }

    pub fn observables(&self) -> Vec<Observable> {
        let mut obs = default_observables();
        for o in &mut obs {
            if let Observable::Point { x, .. } = o {
                *x = self.probe;
            }
        }
        obs
    }

    pub fn ensemble(&self) -> EnsembleConfig {
        EnsembleConfig {
            samples: self.samples,
            master_seed: self.seed,
            stepper: self.stepper(),
            stochastic: self.stochastic,
            observables: self.observables(),
            execution: self.execution,
            strict: self.strict,
        }
    }

    pub fn fields(&self) -> PresetFields {
        self.fields.into()
    }

    /// As a configuration file with every key set.
    pub fn to_file(&self) -> ConfigFile {
        ConfigFile {
            preset: Some(self.preset),
            profile: Some(self.profile),
            mesh: Some(self.mesh),
            p: Some(self.p),
            kappa: Some(self.kappa),
            tau: Some(self.tau),
            horizon: Some(self.horizon),
            samples: Some(self.samples),
            seed: Some(self.seed),
            stochastic: Some(self.stochastic),
            strict: Some(self.strict),
            probe: Some(self.probe),
            execution: Some(self.execution),
            threads: self.threads,
            newton: Some(self.newton),
            streamlines: Some(self.streamlines),
            fields: (self.preset == Preset::Custom).then_some(self.fields),
            manifest: None,
        }
    }

    /// SHA-256 of the canonical serialisation of everything that affects
    /// results (execution policy and thread count excluded).
    pub fn hash(&self) -> String {
        let mut file = self.to_file();
        file.execution = None;
        file.threads = None;
        file.fields = Some(self.fields);
        let text = toml::to_string(&file).expect("config serialises");
        let digest = Sha256::digest(text.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestInfo {
    pub config_hash: String,
    pub master_seed: u64,
    pub code_version: String,
    pub mesh: String,
    pub command: String,
}

/// Manifest text: a loadable configuration file with a `[manifest]` table.
pub fn manifest_text(cfg: &ExperimentConfig, command: &str) -> String {
    let mut file = cfg.to_file();
    file.manifest = Some(ManifestInfo {
        config_hash: cfg.hash(),
        master_seed: cfg.seed,
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        mesh: format!("uniform-{}x{}-diag-ll-ur", cfg.mesh[0], cfg.mesh[1]),
        command: command.to_string(),
    });
    toml::to_string(&file).expect("config serialises")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_exp1_desk_defaults() {
        let cfg = ExperimentConfig::resolve(ConfigFile::parse("").unwrap()).unwrap();
        assert_eq!(cfg.preset, Preset::Exp1);
        assert_eq!(cfg.mesh, [9, 9]);
        assert_eq!(cfg.samples, 100);
        assert_eq!(cfg.tau, 0.03125);
        assert_eq!(cfg.steps(), 32);
        assert_eq!(cfg.kappa, 0.1);
        assert_eq!(cfg.fields, FieldSet::preset(Preset::Exp1));
    }

    #[test]
    fn paper_profile() {
        let cfg = ExperimentConfig::resolve(ConfigFile::parse("profile = \"paper\"").unwrap()).unwrap();
        assert_eq!((cfg.mesh, cfg.samples, cfg.steps()), ([13, 13], 1000, 512));
    }

    #[test]
    fn non_divisible_horizon_is_rejected() {
        let err = ExperimentConfig::resolve(ConfigFile::parse("tau = 0.3").unwrap()).unwrap_err();
        assert!(err.to_string().contains("multiple"), "{err}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ConfigFile::parse("tua = 0.1").is_err());
        assert!(ConfigFile::parse("[newton]\nabs_toll = 1.0").is_err());
    }

    #[test]
    fn parse_errors_carry_position() {
        let err = ConfigFile::parse("p = \n").unwrap_err().to_string();
        assert!(err.contains("line 1"), "{err}");
    }

    #[test]
    fn all_violations_are_listed() {
        let err = ExperimentConfig::resolve(ConfigFile::parse("p = 0.5\nsamples = 0").unwrap()).unwrap_err();
        let s = err.to_string();
        assert!(s.contains("samples") && s.contains("p"), "{s}");
    }

    #[test]
    fn exp2_fields() {
        let f = preset_fields(Preset::Exp2);
        assert!(f.v_in.is_zero() && f.forcing.is_zero());
        assert_eq!(f.g.eval([0.5, 1.0]), [1.0, 0.0]);
        assert_eq!(f.g.eval([0.5, 0.999]), [0.0, 0.0]);
    }

    #[test]
    fn exp1_fields_match_printed_forms() {
        let f = preset_fields(Preset::Exp1);
        // hand-evaluated: x²(1−x)²(2−6y+4y²)y and −y²(1−y)²(2−6x+4x²)x, times 10³
        let cases: [([f64; 2], [f64; 2]); 5] = [
            ([0.5, 0.5], [0.0, 0.0]),
            ([0.5, 0.75], [-11.71875, 0.0]),
            ([0.25, 0.5], [0.0, -11.71875]),
            ([0.25, 0.25], [6.591796875, -6.591796875]),
            ([0.2, 0.9], [-3.6864, -1.5552]),
        ];
        for (x, want) in cases {
            let got = f.v_in.eval(x);
            let s = f.sigma.eval(x);
            for c in 0..2 {
                assert!((got[c] - want[c]).abs() < 1e-10, "{x:?}: {got:?} vs {want:?}");
                assert_eq!(got[c], s[c]);
            }
        }
        let forcing: [([f64; 2], [f64; 2]); 5] = [
            ([0.25, 0.125], [100.0, 0.0]),
            ([0.125, 0.25], [0.0, -100.0]),
            ([0.0, 0.3], [0.0, 0.0]),
            ([0.75, 0.125], [-100.0, 0.0]),
            ([0.125, 0.125], [70.71067811865476, -70.71067811865476]),
        ];
        for (x, want) in forcing {
            let got = f.forcing.eval(x);
            for c in 0..2 {
                assert!((got[c] - want[c]).abs() < 1e-10, "{x:?}: {got:?} vs {want:?}");
            }
        }
    }

    #[test]
    fn manifest_round_trips() {
        let cfg =
            ExperimentConfig::resolve(ConfigFile::parse("preset = \"exp2\"\np = 3.0\nsamples = 7").unwrap()).unwrap();
        let text = manifest_text(&cfg, "ensemble");
        let back = ExperimentConfig::resolve(ConfigFile::parse(&text).unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
        let mut threaded = cfg.clone();
        threaded.threads = Some(4);
        assert_eq!(threaded.hash(), cfg.hash());
        let mut other = cfg;
        other.seed += 1;
        assert_ne!(other.hash(), back.hash());
    }

    #[test]
    fn custom_fields() {
        let text = "preset = \"custom\"\n[fields]\nv_in = { kind = \"zero\" }\nsigma = { kind = \"vortex\", scale = 10.0 }\ng = { kind = \"lid\", speed = 2.0 }\nforcing = { kind = \"zero\" }\n";
        let cfg = ExperimentConfig::resolve(ConfigFile::parse(text).unwrap()).unwrap();
        assert_eq!(cfg.fields.g, FieldSpec::Lid { speed: 2.0 });
        assert!(ExperimentConfig::resolve(ConfigFile::parse(&text.replace("custom", "exp1")).unwrap()).is_err());
    }
}
