//! `dptomo analyze`: k-space, resolution, and accuracy reports computed from
//! configs and finished runs.

use crate::errors::CliError;
use crate::io::{self, RECON_FILE, TRUTH_FILE};
use crate::plots;
use dptomo_core::config::{GeometryConfig, RunConfig};
use dptomo_core::container::{read_tensor, write_f64};
use dptomo_core::geometry::{
    compute_sbp, fft_wavenumbers, fftshift2, illumination_wavevectors,
    synthesize_transfer_function,
};
use dptomo_core::simkit::{axial_trace, error_histogram, rmse, ssim};
use ndarray::{Array2, Array3, Axis};
use std::path::Path;

pub fn transfer_function(
    config: &RunConfig,
    out: &Path,
    with_plots: bool,
) -> Result<(), CliError> {
    let geom = config.geometry.build()?;
    let ills = illumination_wavevectors(&geom)?;
    let h = synthesize_transfer_function(&geom, &ills);
    io::ensure_dir(out)?;
    let as_f64 = h.mapv(|b| if b { 1.0 } else { 0.0 });
    write_f64(out.join("transfer_function.dpt"), as_f64.view().into_dyn(), "bool")?;

    // kx-kz cross-section through ky = 0 as a long-format table.
    let kx = fft_wavenumbers(geom.nx, geom.dx_um);
    let kz = fft_wavenumbers(geom.nz, geom.dz_um);
    let mut rows = Vec::with_capacity(geom.nx * geom.nz);
    for i in 0..geom.nx {
        for l in 0..geom.nz {
            rows.push(vec![kx[i], kz[l], if h[[i, 0, l]] { 1.0 } else { 0.0 }]);
        }
    }
    io::write_csv(&out.join("tf_kxkz.csv"), "kx_rad_um,kz_rad_um,occupied", &rows)?;

    if with_plots {
        let cross: Array2<f64> = {
            let mut c = Array2::zeros((geom.nx, geom.nz));
            for i in 0..geom.nx {
                for l in 0..geom.nz {
                    c[[i, l]] = if h[[i, 0, l]] { 1.0 } else { 0.0 };
                }
            }
            fftshift2(&c)
        };
        plots::heatmap(&out.join("tf_kxkz.png"), &cross)?;
    }

    let support = h.iter().filter(|&&b| b).count();
    println!(
        "transfer function covers {support} of {} bins ({:.2}%)",
        h.len(),
        100.0 * support as f64 / h.len() as f64
    );
    Ok(())
}

/// Sweeps a 3x3 grid of (illumination, imaging) apertures around the
/// configured pair and tabulates k-space support and space-bandwidth
/// product. The board distance is re-solved per illumination NA so the grid
/// actually changes the incident angles.
pub fn sbp(config: &RunConfig, out: &Path) -> Result<(), CliError> {
    if config.geometry.leds.grid_per_side < 2 {
        return Err(CliError::Data(
            "the SBP sweep re-aims the LED board and needs grid_per_side >= 2".into(),
        ));
    }
    let factors = [0.6, 0.8, 1.0];
    let mut rows = Vec::with_capacity(9);
    for fi in factors {
        for fm in factors {
            let na_ill = config.geometry.na_ill * fi;
            let na_img = config.geometry.na_img * fm;
            let mut gc: GeometryConfig = config.geometry.clone();
            gc.na_ill = na_ill;
            gc.na_img = na_img;
            gc.leds.distance_mm = None;
            gc.leds.na_target = Some(na_ill);
            let geom = gc.build()?;
            let ills = illumination_wavevectors(&geom)?;
            let h = synthesize_transfer_function(&geom, &ills);
            let support = h.iter().filter(|&&b| b).count();
            let (fx, fy) = geom.fov_um();
            let value = compute_sbp(&geom, &h, fx * fy, geom.axial_extent_um())?;
            rows.push(vec![na_ill, na_img, support as f64, value]);
        }
    }
    io::ensure_dir(out)?;
    io::write_csv(&out.join("sbp.csv"), "na_ill,na_img,support_bins,sbp_voxels", &rows)?;
    println!("wrote 9-point SBP sweep to {}", out.join("sbp.csv").display());
    Ok(())
}

fn load_volume(path: &Path, default_name: &str, what: &str) -> Result<Array3<f64>, CliError> {
    let resolved = io::resolve_tensor(path, default_name)?;
    let (data, _) = read_tensor(&resolved)?;
    io::tensor_real_part(data, what)
}

pub fn metrics(
    data: &Path,
    truth: &Path,
    out: &Path,
    with_plots: bool,
) -> Result<(), CliError> {
    let recon = load_volume(data, RECON_FILE, "reconstruction")?;
    let truth_vol = load_volume(truth, TRUTH_FILE, "ground truth")?;
    let rmse_value = rmse(&recon, &truth_vol)?;
    let ssim_value = ssim(&recon, &truth_vol)?;
    io::ensure_dir(out)?;
    io::write_csv(&out.join("metrics.csv"), "rmse,ssim", &[vec![rmse_value, ssim_value]])?;

    let hist = error_histogram(&recon, &truth_vol, 32)?;
    let mut rows = Vec::with_capacity(hist.counts.nrows());
    for r in hist.counts.rows() {
        rows.push(r.iter().map(|&c| c as f64).collect());
    }
    let header: Vec<String> = (0..hist.counts.ncols()).map(|c| format!("recon_bin{c}")).collect();
    io::write_csv(&out.join("error_hist.csv"), &header.join(","), &rows)?;

    if with_plots {
        let img = hist.counts.mapv(|c| ((c + 1) as f64).ln());
        plots::heatmap(&out.join("error_hist.png"), &img)?;
    }
    println!("rmse {rmse_value:.6e}, ssim {ssim_value:.6}");
    Ok(())
}

pub fn traces(
    data: &Path,
    truth: Option<&Path>,
    out: &Path,
    x: Option<usize>,
    y: Option<usize>,
    with_plots: bool,
) -> Result<(), CliError> {
    let recon = load_volume(data, RECON_FILE, "reconstruction")?;
    let (cx, cy) = io::center_xy(&recon);
    let (x, y) = (x.unwrap_or(cx), y.unwrap_or(cy));
    let recon_line = axial_trace(&recon, x, y)?;

    let truth_line = match truth {
        Some(p) => {
            let t = load_volume(p, TRUTH_FILE, "ground truth")?;
            if t.dim() != recon.dim() {
                return Err(CliError::Data(format!(
                    "trace volumes disagree: {:?} vs {:?}",
                    recon.dim(),
                    t.dim()
                )));
            }
            Some(axial_trace(&t, x, y)?)
        }
        None => None,
    };

    io::ensure_dir(out)?;
    let nz = recon.len_of(Axis(2));
    let mut rows = Vec::with_capacity(nz);
    for l in 0..nz {
        let mut row = vec![l as f64, recon_line[l]];
        if let Some(t) = &truth_line {
            row.push(t[l]);
        }
        rows.push(row);
    }
    let header = if truth_line.is_some() { "z_index,recon,truth" } else { "z_index,recon" };
    io::write_csv(&out.join("traces.csv"), header, &rows)?;

    if let Some(t) = &truth_line {
        let err = recon_line
            .iter()
            .zip(t.iter())
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            / nz as f64;
        println!("axial trace rmse at ({x}, {y}): {:.6e}", err.sqrt());
    }

    if with_plots {
        let r: Vec<f64> = recon_line.to_vec();
        match &truth_line {
            Some(t) => {
                let tv: Vec<f64> = t.to_vec();
                plots::line_chart(&out.join("traces.png"), &[&r, &tv])?;
            }
            None => plots::line_chart(&out.join("traces.png"), &[&r])?,
        }
    }
    Ok(())
}
