use std::hint::black_box;
use std::time::Duration;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use stokes_transport::assembly::AssembledForms;
use stokes_transport::config::{ConfigFile, ExperimentConfig};
use stokes_transport::experiment::Experiment;
use stokes_transport::measures::run_ensemble;
use stokes_transport::par::{self, Execution};

fn experiment(mesh: usize, samples: usize) -> Experiment {
    let cfg = ExperimentConfig::resolve(ConfigFile {
        mesh: Some([mesh, mesh]),
        samples: Some(samples),
        tau: Some(2f64.powi(-5)),
        horizon: Some(0.25),
        ..ConfigFile::default()
    })
    .expect("bench config");
    Experiment::build(cfg).expect("bench experiment")
}

fn policies() -> Vec<Execution> {
    if par::available() {
        vec![Execution::Sequential, Execution::Parallel]
    } else {
        vec![Execution::Sequential]
    }
}

fn label(exec: Execution) -> &'static str {
    match exec {
        Execution::Sequential => "sequential",
        Execution::Parallel => "parallel",
    }
}

fn ensembles(c: &mut Criterion) {
    let mut group = c.benchmark_group("ensemble");
    group.sample_size(10).measurement_time(Duration::from_secs(10));
    for mesh in [5, 9] {
        let exp = experiment(mesh, 8);
        for exec in policies() {
            let mut cfg = exp.cfg.ensemble();
            cfg.execution = exec;
            group.bench_with_input(BenchmarkId::new(label(exec), format!("{mesh}x{mesh}")), &cfg, |b, cfg| {
                b.iter(|| black_box(run_ensemble(&exp.gd, &exp.forms, cfg, &exp.initial).unwrap()))
            });
        }
    }
    group.finish();
}

fn assembly(c: &mut Criterion) {
    let mut group = c.benchmark_group("assembly");
    group.sample_size(10);
    let exp = experiment(13, 1);
    let fields = exp.cfg.fields();
    for exec in policies() {
        group.bench_function(BenchmarkId::new(label(exec), "13x13"), |b| {
            b.iter(|| {
                black_box(
                    AssembledForms::assemble_static_with(
                        &exp.gd,
                        fields.sigma.as_ref(),
                        &exp.forms.g_full,
                        fields.forcing.as_ref(),
                        exec,
                    )
                    .unwrap(),
                )
            })
        });
    }
    group.finish();
}

criterion_group!(benches, ensembles, assembly);
criterion_main!(benches);
