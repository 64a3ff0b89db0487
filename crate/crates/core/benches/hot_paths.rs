//! Benchmarks for the per-wave hot paths: criterion-context assembly (the
//! Monte Carlo expectation grid), the greedy candidate scan, per-draw
//! observed information, and the execution helpers themselves.
//!
//! Bench ids are identical under both builds, so criterion baselines line
//! the rayon and sequential paths up directly:
//!
//! ```text
//! cargo bench -p subcohort --bench hot_paths -- --save-baseline par
//! cargo bench -p subcohort --bench hot_paths --no-default-features -- --baseline par
//! ```
//!
//! The `exec` group additionally pits the routed helper against an inline
//! sequential loop within a single build.

use std::hint::black_box;
use std::time::Duration;

use criterion::{criterion_group, criterion_main, Criterion};
use nalgebra::DMatrix;
use subcohort::cohort::{Cohort, Design};
use subcohort::covariate::FeatureFrame;
use subcohort::exec;
use subcohort::information::{d_beta_value, observed_info, CriterionContext, InformationMatrix};
use subcohort::mcmc::{run_chain, ModelSpec, PosteriorSample, PriorSpec};
use subcohort::rng::stream_rng;
use subcohort::selection::{build_criterion_context, greedy_select, wave_candidates};
use subcohort::sim::{generate_cohort, ExperimentConfig};

struct WaveFixture {
    fit: Cohort,
    candidates: Vec<usize>,
    sample: PosteriorSample,
    spec: ModelSpec,
    ctx: CriterionContext,
}

/// Wave-1 selection state on a reduced cohort: design applied, records
/// truncated, a short chain fit and the criterion cache built once.
fn wave_fixture() -> WaveFixture {
    let mut cfg = ExperimentConfig::desk();
    cfg.cohort.individuals = 150;
    let cohort = generate_cohort(&cfg.cohort, 20_260_819).unwrap();
    let design = Design::baseline_only(&cohort);
    let fit = cohort.apply_design(&design).truncated_at_wave(1);
    let candidates = wave_candidates(&cohort, 1).unwrap();
    let spec = cfg.selection_spec().unwrap();
    let mut chain = cfg.chain_settings(7);
    chain.iterations = 600;
    chain.burn_in = 200;
    chain.retain = 60;
    let posterior = run_chain(&fit, &spec, &PriorSpec::default(), &chain).unwrap();
    let sample = posterior.subsample(8).unwrap();
    let ctx = build_criterion_context(&fit, 1, &candidates, &sample, &spec, 10, 7).unwrap();
    WaveFixture {
        fit,
        candidates,
        sample,
        spec,
        ctx,
    }
}

fn bench_context_build(c: &mut Criterion, fx: &WaveFixture) {
    c.bench_function("context_build/q8_mc10", |b| {
        b.iter(|| {
            build_criterion_context(
                &fx.fit,
                1,
                black_box(&fx.candidates),
                &fx.sample,
                &fx.spec,
                10,
                7,
            )
            .unwrap()
        })
    });
}

fn bench_greedy(c: &mut Criterion, fx: &WaveFixture) {
    c.bench_function("greedy/budget20", |b| {
        b.iter(|| {
            let mut rng = stream_rng(11, &[1]);
            greedy_select(black_box(&fx.ctx), 20, 0.0, &mut rng).unwrap()
        })
    });
}

fn bench_observed_info(c: &mut Criterion, fx: &WaveFixture) {
    let base = FeatureFrame::from_panel(&fx.fit.panel, &fx.spec.feature_map);
    let frame = fx
        .sample
        .frame_for_draw(0, &fx.fit, &fx.spec.feature_map, &base);
    let params = &fx.sample.draws[0].survival;
    c.bench_function("observed_info/one_draw", |b| {
        b.iter(|| observed_info(black_box(&fx.fit), &frame, params).unwrap())
    });
}

fn bench_exec_helpers(c: &mut Criterion) {
    // representative per-item work: one criterion evaluation on a fixed
    // well-conditioned matrix
    let dim = 4;
    let entries = DMatrix::from_fn(dim, dim, |r, q| if r == q { 3.0 } else { 0.4 });
    let psi = InformationMatrix::from_matrix(entries).unwrap();
    let work = move |i: usize| d_beta_value(&psi, 2, None).unwrap() + i as f64;
    let mut group = c.benchmark_group("exec");
    group.bench_function("routed_map_range", |b| {
        b.iter(|| exec::map_range(256, black_box(&work)))
    });
    group.bench_function("inline_sequential", |b| {
        b.iter(|| (0..256).map(black_box(&work)).collect::<Vec<f64>>())
    });
    group.finish();
}

fn all_benches(c: &mut Criterion) {
    let fx = wave_fixture();
    bench_context_build(c, &fx);
    bench_greedy(c, &fx);
    bench_observed_info(c, &fx);
    bench_exec_helpers(c);
}

criterion_group! {
    name = benches;
    config = Criterion::default()
        .sample_size(20)
        .warm_up_time(Duration::from_millis(500))
        .measurement_time(Duration::from_secs(3));
    targets = all_benches
}
criterion_main!(benches);
