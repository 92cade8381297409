//! Pipeline benchmarks. Run them twice to compare the data-parallel build
//! against the sequential fallback:
//!
//! ```sh
//! cargo bench -p dptomo-core -- --save-baseline parallel
//! cargo bench -p dptomo-core --no-default-features -- --baseline parallel
//! ```
//!
//! Group names are identical in both builds, so criterion reports the ratio
//! directly.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use dptomo_autodiff::dip::{DipConfig, DipNetwork};
use dptomo_autodiff::TapeGraph;
use dptomo_core::forward::{simulate_stacks, ForwardModel, LedStack, Pupil};
use dptomo_core::geometry::{LedLayout, SystemGeometry};
use dptomo_core::objective::{
    evaluate_batch, LossConfig, ModelContexts, PreparedData, ReconstructionState,
    VolumeParameterization,
};
use dptomo_autodiff::Value;
use ndarray::{Array1, Array3};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

fn bench_geom() -> SystemGeometry {
    SystemGeometry {
        wavelength_um: 0.532,
        n0: 1.33,
        na_ill: 0.3,
        na_img: 0.45,
        nx: 32,
        ny: 32,
        nz: 16,
        dx_um: 0.25,
        dy_um: 0.25,
        dz_um: 0.4,
        leds: LedLayout::centered_grid(3, 4.0, 45.0),
        focus_offset_um: 0.0,
        snap_illumination: true,
    }
}

fn phantom(geom: &SystemGeometry) -> Array3<Complex64> {
    let (cx, cy, cz) = (geom.nx as f64 / 2.0, geom.ny as f64 / 2.0, geom.nz as f64 / 2.0);
    Array3::from_shape_fn((geom.nx, geom.ny, geom.nz), |(i, j, l)| {
        let r2 = (i as f64 - cx).powi(2) + (j as f64 - cy).powi(2) + (l as f64 - cz).powi(2);
        Complex64::new(geom.n0 + 0.03 * (-r2 / 16.0).exp(), 0.0)
    })
}

fn forward_models(c: &mut Criterion) {
    let geom = bench_geom();
    let ri = phantom(&geom);
    let pupil = Pupil::ideal(&geom);
    let mut group = c.benchmark_group("forward_stack");
    for model in [ForwardModel::Born, ForwardModel::Rytov, ForwardModel::Multislice] {
        group.bench_with_input(
            BenchmarkId::from_parameter(format!("{model:?}")),
            &model,
            |b, &model| {
                b.iter(|| {
                    simulate_stacks(&geom, black_box(&ri), model, 1.0, &pupil, false).unwrap()
                })
            },
        );
    }
    group.finish();
}

fn loss_and_gradients(c: &mut Criterion) {
    let geom = bench_geom();
    let ri = phantom(&geom);
    let pupil = Pupil::ideal(&geom);
    let mut group = c.benchmark_group("evaluate_batch");
    group.sample_size(20);
    for model in [ForwardModel::Born, ForwardModel::Multislice] {
        let (stack, _) = simulate_stacks(&geom, &ri, model, 1.0, &pupil, false).unwrap();
        let cfg = LossConfig {
            model,
            lambda_tv: 1e-3,
            lambda_pos: 1.0,
            ..LossConfig::default()
        };
        let n_led = stack.n_led();
        let state = ReconstructionState {
            geom: geom.clone(),
            cfg: cfg.clone(),
            volume: VolumeParameterization::Voxel {
                value: Value::complex(Array3::<Complex64>::zeros((geom.nx, geom.ny, geom.nz))),
            },
            u0: Value::real(Array1::from_elem(n_led, 1.0)),
            optimize_u0: true,
            pupil_phase: None,
            apodize: false,
        };
        let data = PreparedData::new(&geom, &stack, None, &cfg, false).unwrap();
        let contexts = ModelContexts::new(&geom, &cfg, &pupil, false).unwrap();
        let batch: Vec<usize> = (0..n_led).collect();
        group.bench_with_input(
            BenchmarkId::from_parameter(format!("{model:?}")),
            &model,
            |b, _| {
                b.iter(|| {
                    evaluate_batch(black_box(&state), &contexts, &data, &batch, None).unwrap()
                })
            },
        );
    }
    group.finish();
}

fn generator_forward(c: &mut Criterion) {
    let cfg = DipConfig { depth: 3, base_channels: 8, max_channels: 32, ..DipConfig::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let net = DipNetwork::new(cfg, [32, 32, 16], &mut rng).unwrap();
    let params = net.init_params(&mut rng);
    c.bench_function("dip_generate_32x32x16", |b| {
        b.iter(|| {
            let mut tape = TapeGraph::new();
            let leaves: Vec<_> =
                params.iter().map(|(_, v)| tape.leaf(v.clone())).collect();
            black_box(net.generate(&mut tape, &leaves))
        })
    });
}

fn camera_noise(c: &mut Criterion) {
    let geom = bench_geom();
    let ri = phantom(&geom);
    let pupil = Pupil::ideal(&geom);
    let (stack, _): (LedStack, _) =
        simulate_stacks(&geom, &ri, ForwardModel::Born, 1.0, &pupil, false).unwrap();
    let spec = dptomo_core::simkit::NoiseSpec::default();
    c.bench_function("poisson_camera_9x32x32", |b| {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        b.iter(|| dptomo_core::simkit::poisson_camera(black_box(&stack), &spec, &mut rng).unwrap())
    });
}

criterion_group!(benches, forward_models, loss_and_gradients, generator_forward, camera_noise);
criterion_main!(benches);
