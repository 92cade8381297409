//! Release acceptance checks. One test per criterion; each prints a single
//! `criterion N: PASS/FAIL` line (visible with `--nocapture`) carrying the
//! measured numbers next to the pinned tolerance. The bead-separation study
//! (criterion 6) runs for minutes and sits behind `--ignored`.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use dptomo_autodiff::dip::DipConfig;
use dptomo_autodiff::{gradcheck, Value};
use dptomo_core::config::RunConfig;
use dptomo_core::container::{read_tensor, TensorData};
use dptomo_core::forward::{
    potential_from_spectrum, potential_spectrum, scattering_potential_from_ri, simulate_stacks,
    ForwardModel, Pupil,
};
use dptomo_core::geometry::{
    illumination_wavevectors, synthesize_transfer_function, LedLayout, SystemGeometry,
};
use dptomo_core::objective::{
    evaluate_batch, LossConfig, ModelContexts, PreparedData, ReconstructionState,
    VolumeParameterization,
};
use dptomo_core::optim::{
    reconstruct, stitch_at, stochastic_stitch, AdamConfig, AdamState, GuardAction, GuardConfig,
    GuardState, PatchPlan, PriorChoice, ReconstructOptions,
};
use dptomo_core::simkit::{
    add_field_noise, axial_trace, bead_phantom, complex_field_noise_sigma, poisson_camera, rmse,
    ssim, BeadSpec, NoiseMode, NoiseSpec,
};
use ndarray::{Array1, Array3};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn report(criterion: usize, ok: bool, detail: &str) {
    println!("criterion {criterion}: {} — {detail}", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "criterion {criterion} FAILED — {detail}");
}

// -------------------------------------------------------------------------
// 1. Shot-noise-equivalent field noise level
// -------------------------------------------------------------------------

#[test]
fn criterion_01_field_noise_sigma_matches_the_calibration() {
    let s1 = complex_field_noise_sigma(1.0);
    let s10 = complex_field_noise_sigma(10.0);
    let values_ok = (s1 - 0.4551).abs() <= 1e-4 && (s10 - 0.4940).abs() <= 1e-4;

    // sigma must climb monotonically toward (but never reach) 1/2.
    let mut monotone = true;
    let mut bounded = true;
    let mut prev = 0.0;
    for e in 0..=110 {
        let mu = 10f64.powf(-2.0 + 0.1 * e as f64);
        let s = complex_field_noise_sigma(mu);
        monotone &= s > prev;
        bounded &= s < 0.5;
        prev = s;
    }
    let approaches_half = 0.5 - complex_field_noise_sigma(1e9) < 1e-4;

    report(
        1,
        values_ok && monotone && bounded && approaches_half,
        &format!(
            "sigma(1)={s1:.6} (want 0.4551±1e-4), sigma(10)={s10:.6} (want 0.4940±1e-4), \
             monotone={monotone}, <1/2 everywhere={bounded}, sigma(1e9) within 1e-4 of 1/2={approaches_half}"
        ),
    );
}

// -------------------------------------------------------------------------
// 2. Analytic gradients vs central finite differences on 8^3 volumes
// -------------------------------------------------------------------------

fn fd_geom() -> SystemGeometry {
    SystemGeometry {
        wavelength_um: 0.532,
        n0: 1.33,
        na_ill: 0.25,
        na_img: 0.4,
        nx: 8,
        ny: 8,
        nz: 8,
        dx_um: 0.3,
        dy_um: 0.3,
        dz_um: 0.4,
        leds: LedLayout::centered_grid(2, 4.0, 50.0),
        focus_offset_um: 0.0,
        snap_illumination: true,
    }
}

fn wiggle_volume(nx: usize, ny: usize, nz: usize, scale: f64) -> Array3<Complex64> {
    Array3::from_shape_fn((nx, ny, nz), |(i, j, l)| {
        let t = (i * 131 + j * 37 + l * 11) as f64;
        Complex64::new(
            scale * ((t * 0.7).sin() + 0.3 * (t * 1.9).cos()),
            0.2 * scale * (t * 1.3).sin(),
        )
    })
}

fn set_params(state: &mut ReconstructionState, vals: &[Value]) {
    let mut params = state.params_mut();
    for (p, v) in params.iter_mut().zip(vals) {
        **p = v.clone();
    }
}

/// Max relative-l2 gradient error for one (model, data-term) combination.
fn model_fd_error(model: ForwardModel, phase_sensitive: bool) -> f64 {
    let geom = fd_geom();
    let ri = wiggle_volume(geom.nx, geom.ny, geom.nz, 0.004).mapv(|c| c + geom.n0);
    let pupil = Pupil::ideal(&geom);
    let (stack, fields) = simulate_stacks(&geom, &ri, model, 1.0, &pupil, false).unwrap();
    let cfg = LossConfig {
        model,
        phase_sensitive,
        lambda_tv: 3e-3,
        lambda_pos: 2.0,
        use_dip: false,
    };
    let n_led = stack.n_led();
    let mut state = ReconstructionState {
        geom: geom.clone(),
        cfg: cfg.clone(),
        volume: VolumeParameterization::Voxel {
            value: Value::complex(wiggle_volume(geom.nx, geom.ny, geom.nz, 0.002)),
        },
        u0: Value::real(Array1::from_shape_fn(n_led, |p| 1.0 + 0.03 * p as f64)),
        optimize_u0: true,
        pupil_phase: None,
        apodize: false,
    };
    let data = PreparedData::new(&geom, &stack, Some(&fields.fields), &cfg, false).unwrap();
    let contexts = ModelContexts::new(&geom, &cfg, &pupil, false).unwrap();
    let batch: Vec<usize> = (0..n_led).collect();

    let at: Vec<Value> = state.params().into_iter().cloned().collect();
    let analytic = evaluate_batch(&state, &contexts, &data, &batch, None).unwrap().grads;
    gradcheck::check_against_fd(
        |vals: &[Value]| {
            set_params(&mut state, vals);
            evaluate_batch(&state, &contexts, &data, &batch, None).unwrap().loss.total
        },
        &at,
        &analytic,
        1e-6,
    )
}

#[test]
fn criterion_02_model_gradients_match_finite_differences() {
    let mut detail = String::new();
    let mut worst: f64 = 0.0;
    for model in [ForwardModel::Born, ForwardModel::Rytov, ForwardModel::Multislice] {
        for phase_sensitive in [false, true] {
            let err = model_fd_error(model, phase_sensitive);
            worst = worst.max(err);
            detail.push_str(&format!(
                "{model:?}/{} {err:.2e}; ",
                if phase_sensitive { "field" } else { "intensity" }
            ));
        }
    }
    report(
        2,
        worst <= 1e-5,
        &format!("rel l2 vs central FD on 8^3 volumes (tol 1e-5): {detail}worst {worst:.2e}"),
    );
}

// -------------------------------------------------------------------------
// 3. Cross-model agreement in the weak-contrast limit
// -------------------------------------------------------------------------

fn thin_sample_geom() -> SystemGeometry {
    SystemGeometry {
        wavelength_um: 0.532,
        n0: 1.33,
        na_ill: 0.1,
        na_img: 0.3,
        nx: 48,
        ny: 48,
        nz: 4,
        dx_um: 0.25,
        dy_um: 0.25,
        dz_um: 0.5,
        leds: LedLayout::single(60.0),
        focus_offset_um: 0.0,
        snap_illumination: true,
    }
}

fn first_slice_blob(geom: &SystemGeometry, s: f64) -> Array3<Complex64> {
    let (cx, cy) = geom.center_um();
    let sigma = 1.5f64;
    Array3::from_shape_fn((geom.nx, geom.ny, geom.nz), |(i, j, r)| {
        if r != 0 {
            return Complex64::new(geom.n0, 0.0);
        }
        let x = i as f64 * geom.dx_um - cx;
        let y = j as f64 * geom.dy_um - cy;
        Complex64::new(geom.n0 + s * (-(x * x + y * y) / (2.0 * sigma * sigma)).exp(), 0.0)
    })
}

fn rel_l2(a: &Array3<f64>, b: &Array3<f64>) -> f64 {
    let num: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - y).powi(2)).sum();
    let den: f64 = b.iter().map(|y| y * y).sum();
    (num / den).sqrt()
}

#[test]
fn criterion_03_models_agree_quadratically_at_weak_contrast() {
    let geom = thin_sample_geom();
    let pupil = Pupil::ideal(&geom);
    let mut ms_err = Vec::new();
    let mut ry_err = Vec::new();
    for s in [1e-2, 1e-3] {
        let ri = first_slice_blob(&geom, s);
        let (born, _) =
            simulate_stacks(&geom, &ri, ForwardModel::Born, 1.0, &pupil, false).unwrap();
        let (ms, _) =
            simulate_stacks(&geom, &ri, ForwardModel::Multislice, 1.0, &pupil, false).unwrap();
        let (ry, _) =
            simulate_stacks(&geom, &ri, ForwardModel::Rytov, 1.0, &pupil, false).unwrap();
        ms_err.push(rel_l2(&ms.images, &born.images));
        ry_err.push(rel_l2(&ry.images, &born.images));
    }
    let ms_factor = ms_err[0] / ms_err[1];
    let ry_factor = ry_err[0] / ry_err[1];
    report(
        3,
        ms_factor >= 50.0 && ry_factor >= 50.0,
        &format!(
            "contrast 1e-2 -> 1e-3 shrinks slice-model/Born intensity gap by {ms_factor:.0}x \
             ({:.2e} -> {:.2e}) and Rytov/Born by {ry_factor:.0}x ({:.2e} -> {:.2e}); need >= 50x",
            ms_err[0], ms_err[1], ry_err[0], ry_err[1]
        ),
    );
}

// -------------------------------------------------------------------------
// 4. Missing cone: empty axial frequency column, elongated filtered bead
// -------------------------------------------------------------------------

fn missing_cone_geom() -> SystemGeometry {
    SystemGeometry {
        wavelength_um: 0.532,
        n0: 1.33,
        na_ill: 0.4,
        na_img: 0.5,
        nx: 64,
        ny: 64,
        nz: 64,
        dx_um: 0.25,
        dy_um: 0.25,
        dz_um: 0.4,
        // Corner LEDs at 22.6 mm radius / 71.7 mm distance reach the 0.4
        // illumination aperture.
        leds: LedLayout::centered_grid(9, 4.0, 71.7),
        focus_offset_um: 0.0,
        snap_illumination: true,
    }
}

fn half_width(profile: &[f64], center: usize, spacing: f64, up: bool) -> f64 {
    let half = profile[center] / 2.0;
    let step: isize = if up { 1 } else { -1 };
    let mut s = center as isize;
    loop {
        let next = s + step;
        assert!(next >= 0 && (next as usize) < profile.len(), "profile never crosses half maximum");
        if profile[next as usize] < half {
            let a = profile[s as usize];
            let b = profile[next as usize];
            let t = (a - half) / (a - b);
            return ((s - center as isize).abs() as f64 + t) * spacing;
        }
        s = next;
    }
}

#[test]
fn criterion_04_missing_cone_empties_the_kz_axis_and_elongates_beads() {
    let geom = missing_cone_geom();
    let ills = illumination_wavevectors(&geom).unwrap();
    let h = synthesize_transfer_function(&geom, &ills);

    let off_axis_hits = (1..geom.nz).filter(|&l| h[[0, 0, l]]).count();
    let dc = h[[0, 0, 0]];

    // A subresolution bead filtered through the support smears axially.
    let spec = BeadSpec {
        diameters_um: vec![0.8],
        separations_um: vec![],
        bead_ri: 1.36,
        medium_ri: 1.33,
    };
    let truth = bead_phantom(&spec, &geom).unwrap();
    let v = scattering_potential_from_ri(&truth, geom.n0, geom.wavelength_um);
    let filtered_spec =
        dptomo_core::geometry::filter_through_transfer_function(&potential_spectrum(&v), &h)
            .unwrap();
    let filtered = potential_from_spectrum(&filtered_spec).mapv(|c| c.norm());
    let (mut ci, mut cj, mut cl) = (0, 0, 0);
    let mut best = f64::MIN;
    for ((i, j, l), &val) in filtered.indexed_iter() {
        if val > best {
            best = val;
            (ci, cj, cl) = (i, j, l);
        }
    }
    let along_x: Vec<f64> = (0..geom.nx).map(|i| filtered[[i, cj, cl]]).collect();
    let along_z: Vec<f64> = (0..geom.nz).map(|l| filtered[[ci, cj, l]]).collect();
    let wx = half_width(&along_x, ci, geom.dx_um, true) + half_width(&along_x, ci, geom.dx_um, false);
    let wz = half_width(&along_z, cl, geom.dz_um, true) + half_width(&along_z, cl, geom.dz_um, false);
    let elongation = wz / wx;

    report(
        4,
        dc && off_axis_hits == 0 && elongation >= 2.0,
        &format!(
            "(na_ill, na_img) = (0.4, 0.5) on a 64^3 grid: kz-axis bins occupied off DC = \
             {off_axis_hits} (want 0), DC occupied = {dc}; filtered 0.8 um bead FWHM axial/lateral \
             = {wz:.2}/{wx:.2} um = {elongation:.2}x (want >= 2x)"
        ),
    );
}

// -------------------------------------------------------------------------
// 5. Inverse-crime closed loop through the binary
// -------------------------------------------------------------------------

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_dptomo")
}

fn run_ok(args: &[&str]) {
    let out = Command::new(bin()).args(args).output().expect("failed to launch dptomo");
    assert!(
        out.status.success(),
        "dptomo {args:?} exited {:?}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn read_c128(path: &Path) -> Array3<Complex64> {
    let (data, header) = read_tensor(path).unwrap();
    let TensorData::C128(v) = data else {
        panic!("{} should hold c128 data, found {:?}", path.display(), header.dtype);
    };
    v.into_dimensionality().unwrap()
}

const INVERSE_CRIME_CONFIG: &str = r#"
seed = 11
model = "born"
phase_sensitive = false

[geometry]
wavelength_um = 0.532
n0 = 1.515
na_ill = 0.3
na_img = 0.45
nx = 32
ny = 32
nz = 32
dx_um = 0.25
dz_um = 0.3

[geometry.leds]
grid_per_side = 7
pitch_mm = 4.0
distance_mm = 60.0

[phantom]
diameters_um = [2.0, 2.0]
separations_um = [1.0]
bead_ri = 1.525
medium_ri = 1.515

[prior]
use_dip = false

[optimizer]
iterations = 1200
"#;

#[test]
fn criterion_05_noiseless_reconstruction_recovers_the_passband() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = tmp.path().join("run.toml");
    fs::write(&cfg_path, INVERSE_CRIME_CONFIG).unwrap();
    let sim = tmp.path().join("sim");
    let rec = tmp.path().join("rec");
    run_ok(&["simulate", "--config", cfg_path.to_str().unwrap(), "--out", sim.to_str().unwrap()]);
    run_ok(&[
        "reconstruct",
        "--config",
        cfg_path.to_str().unwrap(),
        "--data",
        sim.to_str().unwrap(),
        "--out",
        rec.to_str().unwrap(),
        "--prior",
        "none",
    ]);

    let config: RunConfig = toml::from_str(INVERSE_CRIME_CONFIG).unwrap();
    let geom = config.geometry.build().unwrap();
    let ills = illumination_wavevectors(&geom).unwrap();
    let h = synthesize_transfer_function(&geom, &ills);

    let truth = read_c128(&sim.join("truth_ri.dpt"));
    let recon = read_c128(&rec.join("recon_ri.dpt"));
    let vt = potential_spectrum(&scattering_potential_from_ri(&truth, geom.n0, geom.wavelength_um));
    let vr = potential_spectrum(&scattering_potential_from_ri(&recon, geom.n0, geom.wavelength_um));

    let mut num = 0.0;
    let mut den = 0.0;
    for (idx, &keep) in h.indexed_iter() {
        if keep {
            num += (vr[idx] - vt[idx]).norm_sqr();
            den += vt[idx].norm_sqr();
        }
    }
    let err = (num / den).sqrt();
    report(
        5,
        err <= 1e-3,
        &format!(
            "noiseless two-bead run, unregularized voxel reconstruction: in-band spectrum \
             rel l2 = {err:.2e} over {} occupied bins (tol 1e-3)",
            h.iter().filter(|&&k| k).count()
        ),
    );
}

// -------------------------------------------------------------------------
// 6. Deep-prior benefit on noisy bead pairs (slow suite)
// -------------------------------------------------------------------------

fn bead_study_geom() -> SystemGeometry {
    SystemGeometry {
        wavelength_um: 0.532,
        n0: 1.33,
        na_ill: 0.35,
        na_img: 0.5,
        nx: 32,
        ny: 32,
        nz: 32,
        dx_um: 0.3,
        dy_um: 0.3,
        dz_um: 0.375,
        leds: LedLayout::centered_grid(7, 4.0, 62.2),
        focus_offset_um: 0.0,
        snap_illumination: true,
    }
}

fn trace_rmse(volume: &Array3<Complex64>, truth_trace: &Array1<f64>, x: usize, y: usize) -> f64 {
    let t = axial_trace(&volume.mapv(|c| c.re), x, y).unwrap();
    let n = t.len() as f64;
    (t.iter().zip(truth_trace.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n).sqrt()
}

#[test]
#[ignore = "slow suite: full bead-separation study, run with --ignored"]
fn criterion_06_deep_prior_beats_unregularized_on_noisy_bead_pairs() {
    let geom = bead_study_geom();
    let pupil = Pupil::ideal(&geom);
    let noise = NoiseSpec { well_depth: 10_000.0, bit_depth: 8, mode: NoiseMode::PoissonCamera };
    let (cx, cy) = (geom.nx / 2, geom.ny / 2);
    let mut wins = 0;
    let mut detail = String::new();

    for (k, sep) in [0.75, 1.5, 2.25, 3.0].iter().enumerate() {
        let spec = BeadSpec {
            diameters_um: vec![2.0, 2.0],
            separations_um: vec![*sep],
            bead_ri: 1.36,
            medium_ri: 1.33,
        };
        let truth = bead_phantom(&spec, &geom).unwrap();
        let (clean, _) =
            simulate_stacks(&geom, &truth, ForwardModel::Born, 1.0, &pupil, false).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(400 + k as u64);
        let stack = poisson_camera(&clean, &noise, &mut rng).unwrap();
        let truth_trace = axial_trace(&truth.mapv(|c| c.re), cx, cy).unwrap();

        let cfg = LossConfig {
            model: ForwardModel::Born,
            phase_sensitive: false,
            lambda_tv: 0.0,
            lambda_pos: 0.0,
            use_dip: false,
        };
        let opts = ReconstructOptions::new(PriorChoice::Voxel, 400, 7);
        let plain = reconstruct(&geom, &stack, None, &cfg, &opts, |_, _| {}).unwrap();

        let dip_cfg = DipConfig {
            depth: 3,
            base_channels: 8,
            max_channels: 32,
            input_channels: 8,
            output_features: 4,
            kernel: 3,
            leaky_slope: 0.1,
            bn_eps: 1e-5,
            input_amplitude: 0.1,
        };
        let mut dip_loss = LossConfig { use_dip: true, ..cfg.clone() };
        dip_loss.lambda_tv = 0.0;
        let mut dip_opts = ReconstructOptions::new(PriorChoice::Dip(dip_cfg), 1200, 7);
        dip_opts.batch_leds = Some(12);
        let dip = reconstruct(&geom, &stack, None, &dip_loss, &dip_opts, |_, _| {}).unwrap();

        let e_plain = trace_rmse(&plain.ri, &truth_trace, cx, cy);
        let e_dip = trace_rmse(&dip.ri, &truth_trace, cx, cy);
        let won = e_dip <= e_plain;
        wins += won as usize;
        detail.push_str(&format!(
            "sep {sep:.2} um: dip {e_dip:.4} vs plain {e_plain:.4} ({}); ",
            if won { "dip" } else { "plain" }
        ));
    }

    report(
        6,
        wins >= 3,
        &format!("axial-trace RMSE under 8-bit shot noise: {detail}dip wins {wins}/4 (need >= 3)"),
    );
}

// -------------------------------------------------------------------------
// 7. Divergence guard: one spike, one restore, one exact anneal step
// -------------------------------------------------------------------------

#[test]
fn criterion_07_guard_restores_once_and_anneals_exactly() {
    let mut guard = GuardState::new(GuardConfig::default());
    let mut p = Value::real(Array1::from_vec(vec![0.25, -0.5, 1.0]));
    let snapshot = p.clone();
    let adam_cfg = AdamConfig::voxel();
    let alpha0 = adam_cfg.alpha;
    let mut adam = AdamState::new(adam_cfg, &[&p]);
    guard.snapshot(&[&p], &adam);

    let mut actions = Vec::new();
    // Ten steady losses fill the window, then a 10x spike, then steady again.
    for (i, loss) in
        (0..10).map(|_| 1.0).chain([10.0]).chain((0..9).map(|_| 1.0)).enumerate()
    {
        if loss > 5.0 {
            // Drift the parameters so the restore has something to undo.
            p = Value::real(Array1::from_vec(vec![9.0, 9.0, 9.0]));
        }
        let mut refs = [&mut p];
        actions.push(guard.observe(i, loss, &mut refs, &mut adam).unwrap());
    }

    let restores = guard.restores();
    let spike_restored = actions[10] == GuardAction::Restored;
    let others_continue =
        actions.iter().enumerate().all(|(i, &a)| (i == 10) == (a == GuardAction::Restored));
    let alpha_exact = adam.cfg.alpha == 0.9 * alpha0;
    let params_restored = p
        .as_real()
        .iter()
        .zip(snapshot.as_real().iter())
        .all(|(a, b)| a.to_bits() == b.to_bits());

    report(
        7,
        restores == 1 && spike_restored && others_continue && alpha_exact && params_restored,
        &format!(
            "10x spike in a steady trace: restores = {restores} (want exactly 1), spike action \
             restored = {spike_restored}, all other iterations continued = {others_continue}, \
             step size {alpha0:.1e} -> {:.2e} equals 0.9x bitwise = {alpha_exact}, parameters \
             restored bitwise = {params_restored}",
            adam.cfg.alpha
        ),
    );
}

// -------------------------------------------------------------------------
// 8. Patch stitching: constant fields survive, full-FOV patch is a no-op
// -------------------------------------------------------------------------

fn stitch_geom(nx: usize, ny: usize, nz: usize) -> SystemGeometry {
    SystemGeometry {
        wavelength_um: 0.532,
        n0: 1.33,
        na_ill: 0.3,
        na_img: 0.45,
        nx,
        ny,
        nz,
        dx_um: 0.3,
        dy_um: 0.3,
        dz_um: 0.4,
        leds: LedLayout::centered_grid(2, 4.0, 45.0),
        focus_offset_um: 0.0,
        snap_illumination: true,
    }
}

fn spatial_state(geom: &SystemGeometry, volume: VolumeParameterization) -> ReconstructionState {
    let n_led = geom.leds.len();
    ReconstructionState {
        geom: geom.clone(),
        cfg: LossConfig {
            model: ForwardModel::Multislice,
            phase_sensitive: false,
            lambda_tv: 0.0,
            lambda_pos: 0.0,
            use_dip: false,
        },
        volume,
        u0: Value::real(Array1::ones(n_led)),
        optimize_u0: false,
        pupil_phase: None,
        apodize: false,
    }
}

#[test]
fn criterion_08_stitching_preserves_constants_and_full_fov_patches() {
    // (a) 1000 random patches of a constant volume must average back to it.
    let geom = stitch_geom(24, 24, 8);
    let c = Complex64::new(1.337e-2, 2.5e-3);
    let state = spatial_state(
        &geom,
        VolumeParameterization::Voxel {
            value: Value::complex(Array3::from_elem((24, 24, 8), c)),
        },
    );
    let plan = PatchPlan { extent: 16, depad: 2, stitch_count: 1000 };
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let stitched = stochastic_stitch(&state, &plan, &mut rng).unwrap();
    let max_dev = stitched.iter().map(|v| (v - c).norm()).fold(0.0, f64::max);

    // (b) one patch spanning the field of view must pass the generator output
    // through bitwise.
    let dip_geom = stitch_geom(16, 16, 8);
    let net = dptomo_autodiff::dip::DipNetwork::new(
        DipConfig {
            depth: 2,
            base_channels: 4,
            max_channels: 8,
            input_channels: 4,
            output_features: 4,
            kernel: 3,
            leaky_slope: 0.1,
            bn_eps: 1e-5,
            input_amplitude: 0.1,
        },
        [16, 16, 8],
        &mut ChaCha8Rng::seed_from_u64(77),
    )
    .unwrap();
    let weights = net.init_params(&mut ChaCha8Rng::seed_from_u64(78));
    let dip_state =
        spatial_state(&dip_geom, VolumeParameterization::Dip { net, weights });
    let direct = dip_state.spatial_volume();
    let full_plan = PatchPlan { extent: 16, depad: 3, stitch_count: 1 };
    let via_stitch = stitch_at(&dip_state, &full_plan, &[(0, 0)]).unwrap();
    let bitwise = direct
        .iter()
        .zip(via_stitch.iter())
        .all(|(a, b)| a.re.to_bits() == b.re.to_bits() && a.im.to_bits() == b.im.to_bits());

    report(
        8,
        max_dev <= 1e-6 && bitwise,
        &format!(
            "1000-patch stitch of a constant volume: max |dev| = {max_dev:.2e} (tol 1e-6); \
             full-FOV single patch equals the direct generator output bitwise = {bitwise}"
        ),
    );
}

// -------------------------------------------------------------------------
// 9. End-to-end determinism of the binary
// -------------------------------------------------------------------------

const DETERMINISM_CONFIG: &str = r#"
seed = 3
model = "born"
phase_sensitive = false

[geometry]
wavelength_um = 0.532
n0 = 1.33
na_ill = 0.3
na_img = 0.45
nx = 16
ny = 16
nz = 8
dx_um = 0.3
dz_um = 0.4

[geometry.leds]
grid_per_side = 3
pitch_mm = 4.0
distance_mm = 45.0

[phantom]
diameters_um = [1.5]
separations_um = []
bead_ri = 1.36
medium_ri = 1.33

[noise]
well_depth = 50000.0
bit_depth = 8
mode = "poisson-8bit"

[prior]
use_dip = false
lambda_tv = 1e-4
lambda_pos = 0.0

[optimizer]
iterations = 30
batch_leds = 3
"#;

#[test]
fn criterion_09_identical_configs_reproduce_runs_bitwise() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = tmp.path().join("run.toml");
    fs::write(&cfg_path, DETERMINISM_CONFIG).unwrap();

    let run_pair = |name: &str| -> (PathBuf, PathBuf) {
        let sim = tmp.path().join(format!("sim_{name}"));
        let rec = tmp.path().join(format!("rec_{name}"));
        run_ok(&[
            "simulate",
            "--config",
            cfg_path.to_str().unwrap(),
            "--out",
            sim.to_str().unwrap(),
        ]);
        run_ok(&[
            "reconstruct",
            "--config",
            cfg_path.to_str().unwrap(),
            "--data",
            sim.to_str().unwrap(),
            "--out",
            rec.to_str().unwrap(),
        ]);
        (sim, rec)
    };
    let (sim_a, rec_a) = run_pair("a");
    let (sim_b, rec_b) = run_pair("b");

    let same = |a: &Path, b: &Path| fs::read(a).unwrap() == fs::read(b).unwrap();
    let images_same = same(&sim_a.join("images.dpt"), &sim_b.join("images.dpt"));
    let recon_same = same(&rec_a.join("recon_ri.dpt"), &rec_b.join("recon_ri.dpt"));
    let trace_same = same(&rec_a.join("trace.csv"), &rec_b.join("trace.csv"));

    report(
        9,
        images_same && recon_same && trace_same,
        &format!(
            "two simulate+reconstruct runs with the same config and seed: measured images \
             bitwise identical = {images_same}, reconstructed volume = {recon_same}, loss \
             trace = {trace_same}"
        ),
    );
}

// -------------------------------------------------------------------------
// 10. Metric identities and the shot-noise variance calibration
// -------------------------------------------------------------------------

#[test]
fn criterion_10_metric_identities_and_noise_moments_hold() {
    let v = Array3::from_shape_fn((16, 16, 16), |(i, j, l)| {
        1.33 + 0.01 * ((i * 7 + j * 3 + l) as f64).sin()
    });
    let r = rmse(&v, &v).unwrap();
    let s = ssim(&v, &v).unwrap();
    let identities = r == 0.0 && (s - 1.0).abs() <= 1e-12;

    // Monte-Carlo variance of the noisy intensity against the shot-noise
    // prediction mu + 1/4.
    let mut variance_detail = String::new();
    let mut variance_ok = true;
    for (k, &mu) in [25.0f64, 100.0].iter().enumerate() {
        let fields = Array3::from_elem((1, 500, 800), Complex64::new(mu.sqrt(), 0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(900 + k as u64);
        let noisy = add_field_noise(&fields, &mut rng);
        let n = noisy.len() as f64;
        let mean = noisy.iter().map(|c| c.norm_sqr()).sum::<f64>() / n;
        let var = noisy.iter().map(|c| (c.norm_sqr() - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let predicted = mu + 0.25;
        let rel = (var / predicted - 1.0).abs();
        variance_ok &= rel <= 0.03;
        variance_detail
            .push_str(&format!("mu={mu}: var {var:.2} vs {predicted:.2} ({:.2}%); ", 100.0 * rel));
    }

    report(
        10,
        identities && variance_ok,
        &format!(
            "rmse(v,v) = {r:.1e} (want 0), ssim(v,v) = {s:.15} (want 1); 400k-sample field-noise \
             variance vs mu + 1/4 within 3%: {variance_detail}"
        ),
    );
}
