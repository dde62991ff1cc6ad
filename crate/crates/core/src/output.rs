//! CSV writers and readers for every artifact the CLI produces.
//!
//! Floats are written with Rust's shortest round-trip formatting, so a value
//! read back is bit-identical to the value written.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::constants::DiscreteConstants;
use crate::error::{Error, Result};
use crate::gd::GradientDiscretisation;
use crate::measures::{EnsembleRecord, FieldStatistics, MeasureKind, Streamline};

pub const ENERGY_CSV: &str = "energy.csv";
pub const POINT_CSV: &str = "point.csv";
pub const INCREMENT_CSV: &str = "increment.csv";
pub const MEASURE_CSV: &str = "measure.csv";
pub const FINAL_CSV: &str = "final.csv";
pub const FIELD_STATS_CSV: &str = "field_stats.csv";
pub const STREAMLINES_CSV: &str = "streamlines.csv";
pub const EOC_CSV: &str = "eoc.csv";
pub const CONSTANTS_CSV: &str = "constants.csv";
pub const SUMMARY_CSV: &str = "summary.csv";
pub const MANIFEST: &str = "manifest.toml";

fn writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    Ok(csv::Writer::from_writer(BufWriter::new(File::create(path)?)))
}

fn time(n: usize, tau: f64) -> f64 {
    n as f64 * tau
}

/// `trajectory,n,t,energy`.
pub fn write_energy(path: &Path, ens: &EnsembleRecord, energy: usize) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["trajectory", "n", "t", "energy"])?;
    let tau = ens.config.stepper.tau;
    for t in &ens.trajectories {
        for (n, e) in t.integer[energy].iter().enumerate() {
            w.write_record([t.index.to_string(), n.to_string(), time(n, tau).to_string(), e.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `trajectory,n,t,ux,uy`.
pub fn write_point(path: &Path, ens: &EnsembleRecord, ux: usize, uy: usize) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["trajectory", "n", "t", "ux", "uy"])?;
    let tau = ens.config.stepper.tau;
    for t in &ens.trajectories {
        for (n, (a, b)) in t.integer[ux].iter().zip(&t.integer[uy]).enumerate() {
            w.write_record([
                t.index.to_string(),
                n.to_string(),
                time(n, tau).to_string(),
                a.to_string(),
                b.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `trajectory,n,increment_sq` with `increment_sq = ‖Π(v^{n+1} − v^n)‖²`.
pub fn write_increments(path: &Path, ens: &EnsembleRecord) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["trajectory", "n", "increment_sq"])?;
    for t in &ens.trajectories {
        for (n, d) in t.increments.iter().enumerate() {
            w.write_record([t.index.to_string(), n.to_string(), d.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `kind,observable,trajectory,n,value`: samples of both occupation
/// measures (uniform weights) for every observable.
pub fn write_measures(path: &Path, ens: &EnsembleRecord) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["kind", "observable", "trajectory", "n", "value"])?;
    let horizon = ens.steps();
    for kind in [MeasureKind::Integer, MeasureKind::Shifted] {
        for (k, obs) in ens.config.observables.iter().enumerate() {
            let name = obs.name();
            for t in &ens.trajectories {
                let series = match kind {
                    MeasureKind::Integer => &t.integer[k],
                    MeasureKind::Shifted => &t.shifted[k],
                };
                for (n, x) in series[..horizon].iter().enumerate() {
                    w.write_record([kind.as_str(), &name, &t.index.to_string(), &n.to_string(), &x.to_string()])?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// One `(kind, observable, trajectory)` series read back from [`write_measures`] output.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasureSeries {
    pub kind: MeasureKind,
    pub observable: String,
    pub trajectory: usize,
    pub values: Vec<f64>,
}

fn parse_field<T: std::str::FromStr>(row: &csv::StringRecord, i: usize, path: &Path) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    let raw = row.get(i).ok_or_else(|| Error::Data(format!("{}: short row", path.display())))?;
    raw.parse().map_err(|e| Error::Data(format!("{}: bad value {raw:?}: {e}", path.display())))
}

/// Reads [`write_measures`] output; rows of one series must be contiguous
/// and ordered by `n`.
pub fn read_measures(path: &Path) -> Result<Vec<MeasureSeries>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out: Vec<MeasureSeries> = Vec::new();
    for row in r.records() {
        let row = row?;
        let kind = match row.get(0) {
            Some("integer") => MeasureKind::Integer,
            Some("shifted") => MeasureKind::Shifted,
            other => return Err(Error::Data(format!("{}: unknown measure kind {other:?}", path.display()))),
        };
        let observable = row.get(1).unwrap_or_default().to_string();
        let trajectory: usize = parse_field(&row, 2, path)?;
        let n: usize = parse_field(&row, 3, path)?;
        let value: f64 = parse_field(&row, 4, path)?;
        let same =
            out.last().is_some_and(|s| s.kind == kind && s.observable == observable && s.trajectory == trajectory);
        if !same {
            out.push(MeasureSeries { kind, observable, trajectory, values: Vec::new() });
        }
        let series = out.last_mut().expect("pushed");
        if n != series.values.len() {
            return Err(Error::Data(format!("{}: series rows out of order at n = {n}", path.display())));
        }
        series.values.push(value);
    }
    Ok(out)
}

/// Reads [`write_increments`] output as `(trajectory, increments)`.
pub fn read_increments(path: &Path) -> Result<Vec<(usize, Vec<f64>)>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out: Vec<(usize, Vec<f64>)> = Vec::new();
    for row in r.records() {
        let row = row?;
        let trajectory: usize = parse_field(&row, 0, path)?;
        let value: f64 = parse_field(&row, 2, path)?;
        if out.last().map(|(t, _)| *t) != Some(trajectory) {
            out.push((trajectory, Vec::new()));
        }
        out.last_mut().expect("pushed").1.push(value);
    }
    Ok(out)
}

/// `kind,observable,statistic,n,value,standard_error`.
pub fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["kind", "observable", "statistic", "n", "value", "standard_error"])?;
    for r in rows {
        w.write_record([
            r.kind.clone(),
            r.observable.clone(),
            r.statistic.to_string(),
            r.n.map(|n| n.to_string()).unwrap_or_default(),
            r.value.to_string(),
            r.standard_error.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub kind: String,
    pub observable: String,
    pub statistic: &'static str,
    pub n: Option<usize>,
    pub value: f64,
    pub standard_error: f64,
}

/// `trajectory,node,x,y,ux,uy`: final velocity (boundary datum included).
pub fn write_final_fields(path: &Path, gd: &GradientDiscretisation, ens: &EnsembleRecord) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["trajectory", "node", "x", "y", "ux", "uy"])?;
    for t in &ens.trajectories {
        for (node, x) in gd.node_coords.iter().enumerate() {
            w.write_record([
                t.index.to_string(),
                node.to_string(),
                x[0].to_string(),
                x[1].to_string(),
                t.final_full[2 * node].to_string(),
                t.final_full[2 * node + 1].to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads [`write_final_fields`] output back as full P2 vectors, ordered by
/// trajectory index.
pub fn read_final_fields(path: &Path, n_nodes: usize) -> Result<Vec<(usize, Vec<f64>)>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out: Vec<(usize, Vec<f64>)> = Vec::new();
    for row in r.records() {
        let row = row?;
        let field = |i: usize| -> Result<&str> {
            row.get(i).ok_or_else(|| Error::Data(format!("{}: short row", path.display())))
        };
        let parse_err = |e: &dyn std::fmt::Display| Error::Data(format!("{}: {e}", path.display()));
        let traj: usize = field(0)?.parse().map_err(|e| parse_err(&e))?;
        let node: usize = field(1)?.parse().map_err(|e| parse_err(&e))?;
        let ux: f64 = field(4)?.parse().map_err(|e| parse_err(&e))?;
        let uy: f64 = field(5)?.parse().map_err(|e| parse_err(&e))?;
        if node >= n_nodes {
            return Err(Error::Data(format!("{}: node {node} out of range (mesh has {n_nodes})", path.display())));
        }
        if out.last().map(|(t, _)| *t) != Some(traj) {
            out.push((traj, vec![f64::NAN; 2 * n_nodes]));
        }
        let full = &mut out.last_mut().expect("pushed").1;
        full[2 * node] = ux;
        full[2 * node + 1] = uy;
    }
    if out.iter().any(|(_, f)| f.iter().any(|v| v.is_nan())) {
        return Err(Error::Data(format!("{}: incomplete field data", path.display())));
    }
    Ok(out)
}

/// `node,x,y,mean_ux,mean_uy,sd_ux,sd_uy`.
pub fn write_field_stats(path: &Path, gd: &GradientDiscretisation, stats: &FieldStatistics) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["node", "x", "y", "mean_ux", "mean_uy", "sd_ux", "sd_uy"])?;
    for (node, x) in gd.node_coords.iter().enumerate() {
        w.write_record([
            node.to_string(),
            x[0].to_string(),
            x[1].to_string(),
            stats.mean[2 * node].to_string(),
            stats.mean[2 * node + 1].to_string(),
            stats.sd[2 * node].to_string(),
            stats.sd[2 * node + 1].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Mean field column pair of [`write_field_stats`] output as a full vector.
pub fn read_mean_field(path: &Path, n_nodes: usize) -> Result<Vec<f64>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut full = vec![f64::NAN; 2 * n_nodes];
    for row in r.records() {
        let row = row?;
        let get = |i: usize| -> Result<f64> {
            row.get(i)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Data(format!("{}: malformed row", path.display())))
        };
        let node = get(0)? as usize;
        if node >= n_nodes {
            return Err(Error::Data(format!("{}: node {node} out of range", path.display())));
        }
        full[2 * node] = get(3)?;
        full[2 * node + 1] = get(4)?;
    }
    if full.iter().any(|v| v.is_nan()) {
        return Err(Error::Data(format!("{}: incomplete field data", path.display())));
    }
    Ok(full)
}

/// `seed,line,k,x,y,speed`.
pub fn write_streamlines(path: &Path, lines: &[Streamline]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["seed", "line", "k", "x", "y", "speed"])?;
    for (s, line) in lines.iter().enumerate() {
        for (k, (p, v)) in line.points.iter().zip(&line.speeds).enumerate() {
            w.write_record([
                s.to_string(),
                line.seed.line.to_string(),
                k.to_string(),
                p[0].to_string(),
                p[1].to_string(),
                v.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// One row of the EOC table.
#[derive(Clone, Debug, PartialEq)]
pub struct EocRow {
    pub experiment: String,
    pub p: f64,
    pub tau: f64,
    pub c_tau: f64,
    pub c_tau_se: f64,
    /// `log₂(c(2τ)/c(τ))`; absent for the coarsest step.
    pub eoc: Option<f64>,
}

/// `experiment,p,tau,c_tau,c_tau_se,eoc`.
pub fn write_eoc(path: &Path, rows: &[EocRow]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["experiment", "p", "tau", "c_tau", "c_tau_se", "eoc"])?;
    for r in rows {
        w.write_record([
            r.experiment.clone(),
            r.p.to_string(),
            r.tau.to_string(),
            r.c_tau.to_string(),
            r.c_tau_se.to_string(),
            r.eoc.map(|e| e.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `mesh,coercivity,coercivity_mass,coercivity_div,coercivity_grad,inf_sup,inverse`.
pub fn write_constants(path: &Path, rows: &[([usize; 2], DiscreteConstants)]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record([
        "mesh",
        "coercivity",
        "coercivity_mass",
        "coercivity_div",
        "coercivity_grad",
        "inf_sup",
        "inverse",
    ])?;
    for (mesh, c) in rows {
        w.write_record([
            format!("{}x{}", mesh[0], mesh[1]),
            c.coercivity.to_string(),
            c.coercivity_mass.to_string(),
            c.coercivity_div.to_string(),
            c.coercivity_grad.to_string(),
            c.inf_sup.to_string(),
            c.inverse.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    f.write_all(text.as_bytes())?;
    f.flush()?;
    Ok(())
}
