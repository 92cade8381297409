//! Scratch diagnostics (deleted before release).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use dptomo_core::config::RunConfig;
use dptomo_core::container::{read_tensor, TensorData};
use dptomo_core::forward::{potential_spectrum, scattering_potential_from_ri};
use dptomo_core::geometry::{fft_wavenumbers, illumination_wavevectors, synthesize_transfer_function};
use ndarray::Array3;
use num_complex::Complex64;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_dptomo")
}

fn read_c128(path: &Path) -> Array3<Complex64> {
    let (data, _) = read_tensor(path).unwrap();
    let TensorData::C128(v) = data else { panic!() };
    v.into_dimensionality().unwrap()
}

const CONFIG: &str = r#"
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
fn inband_error_breakdown() {
    let root = Path::new("/tmp/diag5");
    let sim = root.join("sim");
    let rec = match std::env::var("DIAG_REC") {
        Ok(p) => PathBuf::from(p),
        Err(_) => root.join("rec"),
    };
    if !sim.join("images.dpt").is_file() {
        fs::create_dir_all(root).unwrap();
        let cfg_path = root.join("run.toml");
        fs::write(&cfg_path, CONFIG).unwrap();
        for args in [
            vec![
                "simulate",
                "--config",
                cfg_path.to_str().unwrap(),
                "--out",
                sim.to_str().unwrap(),
            ],
            vec![
                "reconstruct",
                "--config",
                cfg_path.to_str().unwrap(),
                "--data",
                sim.to_str().unwrap(),
                "--out",
                rec.to_str().unwrap(),
                "--prior",
                "none",
            ],
        ] {
            let out = Command::new(bin()).args(&args).output().unwrap();
            assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
            print!("{}", String::from_utf8_lossy(&out.stdout));
        }
    }

    let config: RunConfig = toml::from_str(CONFIG).unwrap();
    let geom = config.geometry.build().unwrap();
    let ills = illumination_wavevectors(&geom).unwrap();
    let h = synthesize_transfer_function(&geom, &ills);

    let truth = read_c128(&sim.join("truth_ri.dpt"));
    let recon = read_c128(&rec.join("recon_ri.dpt"));
    let vt = potential_spectrum(&scattering_potential_from_ri(&truth, geom.n0, geom.wavelength_um));
    let vr = potential_spectrum(&scattering_potential_from_ri(&recon, geom.n0, geom.wavelength_um));

    let (u0_data, _) = read_tensor(&rec.join("u0.dpt")).unwrap();
    if let TensorData::F64(u0) = u0_data {
        println!("u0 head: {:?}", u0.iter().take(4).collect::<Vec<_>>());
    }

    let kx = fft_wavenumbers(geom.nx, geom.dx_um);
    let ky = fft_wavenumbers(geom.ny, geom.dy_um);
    let kz = fft_wavenumbers(geom.nz, geom.dz_um);

    // Shell breakdown of the in-band mismatch.
    let kappa = 2.0 * std::f64::consts::PI * geom.n0 / geom.wavelength_um;
    let mut shells = vec![(0.0f64, 0.0f64, 0usize); 10];
    let mut num = 0.0;
    let mut den = 0.0;
    for ((i, j, l), &keep) in h.indexed_iter() {
        if !keep {
            continue;
        }
        let q = (kx[i] * kx[i] + ky[j] * ky[j] + kz[l] * kz[l]).sqrt();
        let b = ((q / kappa * 8.0) as usize).min(9);
        let d = (vr[[i, j, l]] - vt[[i, j, l]]).norm_sqr();
        let t = vt[[i, j, l]].norm_sqr();
        shells[b].0 += d;
        shells[b].1 += t;
        shells[b].2 += 1;
        num += d;
        den += t;
    }
    println!("total in-band rel l2: {:.3e}", (num / den).sqrt());
    println!("truth DC: {:?}  recon DC: {:?}", vt[[0, 0, 0]], vr[[0, 0, 0]]);
    for (b, (d, t, n)) in shells.iter().enumerate() {
        if *n > 0 {
            println!(
                "shell q/kappa in [{:.3},{:.3}): bins {n:5}  |dv|^2 {d:10.3e}  |vt|^2 {t:10.3e}  ratio {:8.3}",
                b as f64 / 8.0,
                (b + 1) as f64 / 8.0,
                if *t > 0.0 { (d / t).sqrt() } else { f64::NAN },
            );
        }
    }

    // How much of the mismatch is a Hermitian-asymmetric (imaginary-volume)
    // component that intensity data cannot see at first order?
    let (nx, ny, nz) = (geom.nx, geom.ny, geom.nz);
    let conj_mirror = |a: &Array3<Complex64>, i: usize, j: usize, l: usize| {
        a[[(nx - i) % nx, (ny - j) % ny, (nz - l) % nz]].conj()
    };
    let mut herm_num = 0.0;
    for ((i, j, l), &keep) in h.indexed_iter() {
        if keep {
            let dv = vr[[i, j, l]] - vt[[i, j, l]];
            let dv_m = conj_mirror(&vr, i, j, l) - conj_mirror(&vt, i, j, l);
            herm_num += ((dv + dv_m) / 2.0).norm_sqr();
        }
    }
    println!(
        "hermitian part of mismatch: {:.3e}  (full {:.3e})",
        (herm_num / den).sqrt(),
        (num / den).sqrt()
    );
}
