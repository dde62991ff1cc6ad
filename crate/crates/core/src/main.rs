use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use stokes_transport::assembly::AssembledForms;
use stokes_transport::config::{manifest_text, ConfigFile, ExperimentConfig, Preset, Profile};
use stokes_transport::constants::estimate_constants_p2;
use stokes_transport::experiment::{eoc_rows, eoc_table, Experiment, IncrementEstimate};
use stokes_transport::fields::ZeroField;
use stokes_transport::gd::GradientDiscretisation;
use stokes_transport::measures::{
    default_seeds, ensemble_field_statistics, field_statistics, shift_defect, streamlines, EnsembleRecord, Estimate,
    MeasureKind, Observable,
};
use stokes_transport::output::{self, SummaryRow};
use stokes_transport::par::{self, Execution};
use stokes_transport::validate::run_battery;

/// Shifts at which `stats` reports the invariance defect.
const DEFECT_SHIFTS: [usize; 3] = [1, 4, 16];

#[derive(Parser, Debug)]
#[command(
    name = "stokes-transport",
    version,
    about = "Power-law Stokes flow with transport noise: simulation and statistics"
)]
struct Cli {
    #[command(flatten)]
    opts: Opts,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct Opts {
    /// Configuration file (TOML); a manifest.toml from an earlier run works too.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    preset: Option<Preset>,
    #[arg(long, global = true, value_enum)]
    profile: Option<Profile>,
    /// Growth exponent of the power law.
    #[arg(long, global = true)]
    p: Option<f64>,
    /// Time step, as a number or `2^-k`.
    #[arg(long, global = true, value_parser = parse_step)]
    tau: Option<f64>,
    /// Final time T.
    #[arg(long, global = true)]
    horizon: Option<f64>,
    /// Number of Monte-Carlo trajectories.
    #[arg(long, global = true)]
    samples: Option<usize>,
    /// Master seed of the noise streams.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Vertices per side, `N` or `NXxNY`.
    #[arg(long, global = true, value_parser = parse_mesh)]
    mesh: Option<[usize; 2]>,
    /// Switch the noise off.
    #[arg(long, global = true)]
    deterministic: bool,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (results do not depend on it).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Run every loop on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// One trajectory (trajectory 1, or the deterministic path with --deterministic).
    Simulate,
    /// Full Monte-Carlo ensemble.
    Ensemble,
    /// Field statistics, occupation-measure summaries and the increment constant of a stored ensemble.
    Stats {
        /// Directory written by `ensemble`.
        dir: PathBuf,
    },
    /// Increment constant and its EOC, from stored ensembles or by running them.
    Eoc {
        /// Ensemble directories to read; when empty, ensembles are run.
        dirs: Vec<PathBuf>,
        /// Time steps to run (default: tau, tau/2, tau/4).
        #[arg(long, value_delimiter = ',', value_parser = parse_step)]
        taus: Vec<f64>,
    },
    /// RK4 streamlines of the ensemble mean field.
    Streamlines {
        /// Directory written by `ensemble` (or `stats`).
        dir: PathBuf,
    },
    /// Discrete constants for p = 2.
    Constants {
        /// Meshes to evaluate (default: the configured mesh).
        #[arg(long, value_delimiter = ',')]
        meshes: Vec<usize>,
    },
    /// Run the invariant battery on the configuration.
    Validate,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Ensemble => "ensemble",
            Command::Stats { .. } => "stats",
            Command::Eoc { .. } => "eoc",
            Command::Streamlines { .. } => "streamlines",
            Command::Constants { .. } => "constants",
            Command::Validate => "validate",
        }
    }
}

fn parse_step(s: &str) -> Result<f64, String> {
    let value = match s.strip_prefix("2^") {
        Some(exp) => exp.parse::<i32>().map(|k| 2f64.powi(k)).map_err(|e| format!("bad exponent in {s:?}: {e}"))?,
        None => s.parse::<f64>().map_err(|e| format!("bad number {s:?}: {e}"))?,
    };
    if value > 0.0 && value.is_finite() {
        Ok(value)
    } else {
        Err(format!("time step must be positive, got {s}"))
    }
}

fn parse_mesh(s: &str) -> Result<[usize; 2], String> {
    let parse = |t: &str| t.trim().parse::<usize>().map_err(|e| format!("bad mesh size {s:?}: {e}"));
    match s.split_once(['x', ',']) {
        Some((a, b)) => Ok([parse(a)?, parse(b)?]),
        None => parse(s).map(|n| [n, n]),
    }
}

impl Opts {
    fn overrides(&self) -> ConfigFile {
        ConfigFile {
            preset: self.preset,
            profile: self.profile,
            mesh: self.mesh,
            p: self.p,
            tau: self.tau,
            horizon: self.horizon,
            samples: self.samples,
            seed: self.seed,
            stochastic: self.deterministic.then_some(false),
            execution: self.sequential.then_some(Execution::Sequential),
            threads: self.threads,
            ..ConfigFile::default()
        }
    }

    fn resolve(&self) -> anyhow::Result<ExperimentConfig> {
        let base = match &self.config {
            Some(path) => ConfigFile::load(path)?,
            None => ConfigFile::default(),
        };
        Ok(ExperimentConfig::resolve(base.merge(self.overrides()))?)
    }

    fn out_dir(&self, default: &Path) -> anyhow::Result<PathBuf> {
        let dir = self.out.clone().unwrap_or_else(|| default.to_path_buf());
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(dir)
    }
}

/// Configuration stored with an earlier run, with command-line overrides.
fn stored_config(dir: &Path, opts: &Opts) -> anyhow::Result<ExperimentConfig> {
    let path = dir.join(output::MANIFEST);
    let file = ConfigFile::load(&path).with_context(|| format!("reading {}", path.display()))?;
    Ok(ExperimentConfig::resolve(file.merge(opts.overrides()))?)
}

fn write_manifest(dir: &Path, cfg: &ExperimentConfig, command: &str) -> anyhow::Result<()> {
    output::write_text(&dir.join(output::MANIFEST), &manifest_text(cfg, command))?;
    Ok(())
}

fn command_line() -> String {
    std::env::args().collect::<Vec<_>>().join(" ")
}

fn write_run_outputs(dir: &Path, exp: &Experiment, ens: &EnsembleRecord) -> anyhow::Result<()> {
    let obs = exp.cfg.observables();
    let index = |o: &Observable| ens.observable_index(o).context("observable missing from ensemble");
    output::write_energy(&dir.join(output::ENERGY_CSV), ens, index(&Observable::KineticEnergy)?)?;
    output::write_point(&dir.join(output::POINT_CSV), ens, index(&obs[1])?, index(&obs[2])?)?;
    output::write_increments(&dir.join(output::INCREMENT_CSV), ens)?;
    output::write_measures(&dir.join(output::MEASURE_CSV), ens)?;
    output::write_final_fields(&dir.join(output::FINAL_CSV), &exp.gd, ens)?;
    Ok(())
}

fn report_failures(ens: &EnsembleRecord) {
    for (trajectory, message) in &ens.failures {
        log::warn!("trajectory {trajectory} dropped: {message}");
    }
    if ens.is_partial() {
        log::warn!("{} of {} trajectories failed; statistics use the rest", ens.failures.len(), ens.config.samples);
    }
}

fn simulate(opts: &Opts) -> anyhow::Result<()> {
    let mut cfg = opts.resolve()?;
    cfg.samples = 1;
    let dir = opts.out_dir(Path::new("out/simulate"))?;
    let exp = Experiment::build(cfg.clone())?;
    let ens = exp.run_ensemble()?;
    let Some(t) = ens.trajectories.first() else { bail!("the trajectory failed: {:?}", ens.failures) };
    write_run_outputs(&dir, &exp, &ens)?;
    write_manifest(&dir, &cfg, &command_line())?;
    let energy = &t.integer[0];
    println!(
        "{} steps, {} Newton iterations, energy {:.6e} -> {:.6e}, max energy defect {:.2e}; output in {}",
        ens.steps(),
        t.newton_iterations,
        energy[0],
        energy[ens.steps()],
        t.max_energy_defect,
        dir.display()
    );
    Ok(())
}

fn ensemble(opts: &Opts) -> anyhow::Result<()> {
    let cfg = opts.resolve()?;
    let dir = opts.out_dir(Path::new("out/ensemble"))?;
    let exp = Experiment::build(cfg.clone())?;
    let ens = exp.run_ensemble()?;
    report_failures(&ens);
    write_run_outputs(&dir, &exp, &ens)?;
    output::write_field_stats(&dir.join(output::FIELD_STATS_CSV), &exp.gd, &ensemble_field_statistics(&ens)?)?;
    write_manifest(&dir, &cfg, &command_line())?;
    println!("{} trajectories x {} steps; output in {}", ens.trajectories.len(), ens.steps(), dir.display());
    Ok(())
}

fn increments_estimate(dir: &Path) -> anyhow::Result<Estimate> {
    let incs = output::read_increments(&dir.join(output::INCREMENT_CSV))?;
    if incs.is_empty() {
        bail!("{}: no increments stored", dir.display());
    }
    let per: Vec<f64> = incs.iter().map(|(_, v)| v.iter().sum::<f64>() / v.len() as f64).collect();
    Ok(Estimate::from_samples(&per))
}

fn stats(dir: &Path, opts: &Opts) -> anyhow::Result<()> {
    let cfg = stored_config(dir, opts)?;
    let out = opts.out_dir(dir)?;
    let gd = GradientDiscretisation::uniform(cfg.mesh[0], cfg.mesh[1])?;
    let finals = output::read_final_fields(&dir.join(output::FINAL_CSV), gd.n_nodes())?;
    let fields: Vec<&[f64]> = finals.iter().map(|(_, f)| f.as_slice()).collect();
    output::write_field_stats(&out.join(output::FIELD_STATS_CSV), &gd, &field_statistics(&fields)?)?;

    let series = output::read_measures(&dir.join(output::MEASURE_CSV))?;
    let mut groups: Vec<((MeasureKind, String), Vec<&[f64]>)> = Vec::new();
    for s in &series {
        let key = (s.kind, s.observable.clone());
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, g)) => g.push(&s.values),
            None => groups.push((key, vec![&s.values])),
        }
    }
    let mut rows = Vec::new();
    for ((kind, observable), group) in &groups {
        let means: Vec<f64> = group.iter().map(|f| f.iter().sum::<f64>() / f.len() as f64).collect();
        let m = Estimate::from_samples(&means);
        let row = |statistic, n, e: Estimate| SummaryRow {
            kind: kind.as_str().to_string(),
            observable: observable.clone(),
            statistic,
            n,
            value: e.mean,
            standard_error: e.standard_error,
        };
        rows.push(row("occupation_mean", None, m));
        let len = group.iter().map(|f| f.len()).min().unwrap_or(0);
        let largest = DEFECT_SHIFTS.iter().copied().filter(|&n| n < len).max();
        if let Some(largest) = largest {
            let horizon = len - largest;
            for n in DEFECT_SHIFTS.into_iter().filter(|&n| n <= largest) {
                rows.push(row("invariance_defect", Some(n), shift_defect(group, n, horizon)?));
            }
        }
    }
    let c = increments_estimate(dir)?;
    rows.push(SummaryRow {
        kind: String::new(),
        observable: "increment".into(),
        statistic: "increment_constant",
        n: None,
        value: c.mean,
        standard_error: c.standard_error,
    });
    output::write_summary(&out.join(output::SUMMARY_CSV), &rows)?;
    if out != dir {
        write_manifest(&out, &cfg, &command_line())?;
    }
    println!(
        "{} trajectories; increment constant {:.6e} ± {:.1e}; output in {}",
        finals.len(),
        c.mean,
        c.standard_error,
        out.display()
    );
    Ok(())
}

fn eoc(dirs: &[PathBuf], taus: &[f64], opts: &Opts) -> anyhow::Result<()> {
    let (rows, cfg) = if dirs.is_empty() {
        let cfg = opts.resolve()?;
        let taus = if taus.is_empty() { vec![cfg.tau, cfg.tau / 2.0, cfg.tau / 4.0] } else { taus.to_vec() };
        let presets = match opts.preset {
            Some(p) => vec![p],
            None => vec![Preset::Exp1, Preset::Exp2],
        };
        let ps = match opts.p {
            Some(p) => vec![p],
            None => vec![1.5, 2.0, 3.0],
        };
        (par::with_threads(cfg.threads, || eoc_table(&cfg, &presets, &ps, &taus))?, cfg)
    } else {
        let mut estimates = Vec::new();
        let mut first = None;
        for dir in dirs {
            let cfg = stored_config(dir, &Opts::default())?;
            let c = increments_estimate(dir)?;
            estimates.push(IncrementEstimate {
                experiment: cfg.preset.as_str().to_string(),
                p: cfg.p,
                tau: cfg.tau,
                c,
            });
            first.get_or_insert(cfg);
        }
        (eoc_rows(estimates)?, first.expect("at least one directory"))
    };
    let dir = opts.out_dir(Path::new("out/eoc"))?;
    output::write_eoc(&dir.join(output::EOC_CSV), &rows)?;
    write_manifest(&dir, &cfg, &command_line())?;
    for r in &rows {
        let eoc = r.eoc.map(|e| format!("{e:.3}")).unwrap_or_else(|| "-".into());
        println!(
            "{:>6} p={:<4} tau={:<10} c={:.6e} ± {:.1e}  eoc={eoc}",
            r.experiment, r.p, r.tau, r.c_tau, r.c_tau_se
        );
    }
    Ok(())
}

fn streamlines_cmd(dir: &Path, opts: &Opts) -> anyhow::Result<()> {
    let cfg = stored_config(dir, opts)?;
    let out = opts.out_dir(dir)?;
    let gd = GradientDiscretisation::uniform(cfg.mesh[0], cfg.mesh[1])?;
    let stats_path = dir.join(output::FIELD_STATS_CSV);
    let mean = if stats_path.exists() {
        output::read_mean_field(&stats_path, gd.n_nodes())?
    } else {
        let finals = output::read_final_fields(&dir.join(output::FINAL_CSV), gd.n_nodes())?;
        let fields: Vec<&[f64]> = finals.iter().map(|(_, f)| f.as_slice()).collect();
        field_statistics(&fields)?.mean
    };
    let lines =
        par::with_threads(cfg.threads, || streamlines(&gd, &mean, &default_seeds(), &cfg.streamlines, cfg.execution))?;
    output::write_streamlines(&out.join(output::STREAMLINES_CSV), &lines)?;
    if out != dir {
        write_manifest(&out, &cfg, &command_line())?;
    }
    println!("{} streamlines; output in {}", lines.len(), out.display());
    Ok(())
}

fn constants(meshes: &[usize], opts: &Opts) -> anyhow::Result<()> {
    let cfg = opts.resolve()?;
    let dir = opts.out_dir(Path::new("out/constants"))?;
    let meshes: Vec<[usize; 2]> =
        if meshes.is_empty() { vec![cfg.mesh] } else { meshes.iter().map(|&n| [n, n]).collect() };
    let mut rows = Vec::new();
    for mesh in meshes {
        let gd = GradientDiscretisation::uniform(mesh[0], mesh[1])?;
        let g = vec![0.0; gd.dim_full()];
        let forms = AssembledForms::assemble_static_with(&gd, &ZeroField, &g, &ZeroField, cfg.execution)?;
        let c = estimate_constants_p2(&gd, &forms)?;
        println!(
            "{}x{}: C_D = {:.6} (mass {:.6}, div {:.6}, grad {:.6}), beta_D = {:.6}, inverse = {:.6}",
            mesh[0],
            mesh[1],
            c.coercivity,
            c.coercivity_mass,
            c.coercivity_div,
            c.coercivity_grad,
            c.inf_sup,
            c.inverse
        );
        rows.push((mesh, c));
    }
    output::write_constants(&dir.join(output::CONSTANTS_CSV), &rows)?;
    write_manifest(&dir, &cfg, &command_line())?;
    Ok(())
}

/// Exit status for `validate` when a check fails.
const EXIT_CHECK_FAILED: u8 = 3;

fn validate(opts: &Opts) -> anyhow::Result<ExitCode> {
    let cfg = opts.resolve()?;
    let checks = par::with_threads(cfg.threads, || run_battery(&cfg))?;
    let mut failed = 0;
    for c in &checks {
        failed += usize::from(!c.passed);
        println!("{} {}: {:.3e} (tol {:.0e})", if c.passed { "PASS" } else { "FAIL" }, c.name, c.value, c.tolerance);
    }
    println!("{} checks, {failed} failed", checks.len());
    Ok(if failed == 0 { ExitCode::SUCCESS } else { ExitCode::from(EXIT_CHECK_FAILED) })
}

fn run(cli: &Cli) -> anyhow::Result<ExitCode> {
    let opts = &cli.opts;
    match &cli.command {
        Command::Simulate => simulate(opts)?,
        Command::Ensemble => ensemble(opts)?,
        Command::Stats { dir } => stats(dir, opts)?,
        Command::Eoc { dirs, taus } => eoc(dirs, taus, opts)?,
        Command::Streamlines { dir } => streamlines_cmd(dir, opts)?,
        Command::Constants { meshes } => constants(meshes, opts)?,
        Command::Validate => return validate(opts),
    }
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct ErrorReport<'a> {
    status: &'static str,
    command: &'a str,
    kind: &'static str,
    message: String,
    causes: Vec<String>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(err) => {
            let lib = err.chain().find_map(|e| e.downcast_ref::<stokes_transport::Error>());
            let kind = lib.map_or("other", |e| e.kind());
            let report = ErrorReport {
                status: "error",
                command: cli.command.name(),
                kind,
                message: err.to_string(),
                causes: err.chain().skip(1).map(|e| e.to_string()).collect(),
            };
            eprintln!("{}", serde_json::to_string(&report).expect("report serialises"));
            ExitCode::from(if kind == "config" { 2 } else { 1 })
        }
    }
}
