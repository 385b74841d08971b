use std::collections::BTreeSet;
use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use ontwin::exec::Execution;
use ontwin::scenario::{make_plant, NoiseSpec, PerturbationSpec, ScenarioScript};
use ontwin::toolbox::{optimize_edfa_with, EdfaOptRequest, OptimizerOptions, Scope};
use ontwin::twin::{calibrate, predict_all, CalibrationOptions, SimOptions};

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn network_prediction(c: &mut Criterion) {
    let st = ScenarioScript::s2().state().unwrap();
    let opts = SimOptions::default();
    let mut g = c.benchmark_group("predict_all_system2");
    for (name, mode) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| predict_all(black_box(&st), &opts, mode).unwrap()));
    }
    g.finish();
}

fn calibration(c: &mut Criterion) {
    let st = ScenarioScript::s2().state().unwrap();
    let plant = make_plant(&st, &PerturbationSpec::default(), NoiseSpec::default(), 7).unwrap();
    let records: Vec<_> = (0..2).flat_map(|t| plant.snapshot(t, true).unwrap()).collect();
    let mut g = c.benchmark_group("calibrate_system2");
    g.sample_size(10);
    for (name, execution) in MODES {
        let opts = CalibrationOptions {
            max_iters: 5,
            execution,
            ..CalibrationOptions::default()
        };
        g.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| calibrate(black_box(&st), &records, &opts).unwrap()));
    }
    g.finish();
}

fn edfa_optimizer(c: &mut Criterion) {
    let st = ScenarioScript::s3().state().unwrap();
    let cuts: BTreeSet<usize> = [56, 68, 80, 92].into();
    let req = EdfaOptRequest::from_twin(&st, "B-Z", Scope::AlternatingHalf, cuts).unwrap();
    let mut g = c.benchmark_group("optimize_edfa_system3");
    g.sample_size(10);
    for (name, execution) in MODES {
        let opts = OptimizerOptions {
            max_evals: 40,
            execution,
            ..OptimizerOptions::default()
        };
        g.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| optimize_edfa_with(black_box(&req), &st, &opts).unwrap()));
    }
    g.finish();
}

criterion_group!(benches, network_prediction, calibration, edfa_optimizer);
criterion_main!(benches);
