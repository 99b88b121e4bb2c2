use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nalgebra::DVector;
use nino_core::chaos::{assemble_galerkin_system, solve_chaos, GalerkinSpec};
use nino_core::exec::{self, Execution};
use nino_core::grid::Grid;
use nino_core::path_sim::{run_ensemble, EnsembleOptions, Scheme};
use nino_core::scenario::{scenario_operators, ScenarioConfig};

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn ops_for(nx: usize, ny: usize) -> nino_core::calibration::OperatorSet {
    let grid = Grid::new(nx, ny, 130.0, 290.0, -20.0, 20.0).unwrap();
    let cfg = ScenarioConfig {
        kl_modes: 6,
        ..ScenarioConfig::new(grid, 1)
    };
    let vel = cfg.velocity.field(&grid).unwrap();
    scenario_operators(&cfg, &vel).unwrap()
}

fn bench_ensemble(c: &mut Criterion) {
    let ops = ops_for(16, 8);
    let x0 = DVector::zeros(ops.dim());
    let mut group = c.benchmark_group("taylor15_ensemble_256_paths");
    for (name, mode) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            exec::set_mode(mode);
            b.iter(|| {
                run_ensemble(&ops, &x0, 0.5, 20, 256, Scheme::Taylor15, 7, &EnsembleOptions::default()).unwrap()
            })
        });
    }
    group.finish();
}

fn bench_galerkin(c: &mut Criterion) {
    let ops = ops_for(16, 8);
    let spec = GalerkinSpec {
        degree: 2,
        window_steps: 10,
    };
    let sys = assemble_galerkin_system(&ops, 0.5, 20, &spec).unwrap();
    let x0 = DVector::zeros(ops.dim());
    let mut group = c.benchmark_group("galerkin_k2");
    for (name, mode) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            exec::set_mode(mode);
            b.iter(|| solve_chaos(black_box(&sys), &x0, 0).unwrap())
        });
    }
    group.finish();
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = bench_ensemble, bench_galerkin
}
criterion_main!(benches);
