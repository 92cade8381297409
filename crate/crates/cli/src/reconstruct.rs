//! `dptomo reconstruct`: measured stack -> optimized RI volume, loss trace,
//! and report.

use crate::errors::CliError;
use crate::io::{self, FIELDS_FILE, RECON_FILE, REPORT_FILE, TRACE_FILE, U0_FILE};
use crate::plots;
use dptomo_core::config::RunConfig;
use dptomo_core::container::{read_c128, write_c128, write_f64};
use dptomo_core::optim::{reconstruct, Reconstruction};
use ndarray::{Array3, Axis};
use num_complex::Complex64;
use std::fs;
use std::path::Path;

pub fn run(
    config: &RunConfig,
    data_dir: &Path,
    out: &Path,
    with_plots: bool,
) -> Result<(), CliError> {
    let geom = config.geometry.build()?;
    let stack = io::read_stack(data_dir, &geom)?;
    let fields: Option<Array3<Complex64>> = if config.phase_sensitive {
        let path = data_dir.join(FIELDS_FILE);
        if !path.is_file() {
            return Err(CliError::Data(format!(
                "phase-sensitive run needs {} (simulate with phase_sensitive = true)",
                path.display()
            )));
        }
        let f = read_c128(path)?
            .into_dimensionality::<ndarray::Ix3>()
            .map_err(|_| CliError::Data("field stack must be a rank-3 tensor".into()))?;
        Some(f)
    } else {
        None
    };

    let cfg = config.loss_config();
    let opts = config.reconstruct_options();
    io::ensure_dir(out)?;
    let checkpoint_dir = out.join("checkpoints");
    if opts.emit_every.is_some() {
        io::ensure_dir(&checkpoint_dir)?;
    }

    let mut checkpoint_err = None;
    let rec: Reconstruction = reconstruct(
        &geom,
        &stack,
        fields.as_ref(),
        &cfg,
        &opts,
        |iteration, state| {
            if checkpoint_err.is_some() {
                return;
            }
            let path = checkpoint_dir.join(format!("iter_{iteration:06}.dpt"));
            if let Err(e) = write_c128(&path, state.ri_volume().view().into_dyn(), "ri") {
                checkpoint_err = Some(CliError::from(e));
            }
        },
    )?;
    if let Some(e) = checkpoint_err {
        return Err(e);
    }

    write_c128(out.join(RECON_FILE), rec.ri.view().into_dyn(), "ri")?;
    write_f64(
        out.join(U0_FILE),
        rec.state.u0.as_real().view(),
        "amplitude",
    )?;

    let header = "iteration,total,data_term,tv,positivity,alpha,restored";
    let rows: Vec<Vec<f64>> = rec
        .trace
        .iter()
        .map(|t| {
            vec![
                t.iteration as f64,
                t.total,
                t.data_term,
                t.tv,
                t.positivity,
                t.alpha,
                if t.restored { 1.0 } else { 0.0 },
            ]
        })
        .collect();
    io::write_csv(&out.join(TRACE_FILE), header, &rows)?;

    let last = rec.trace.last();
    let report = serde_json::json!({
        "iterations": rec.trace.len(),
        "restores": rec.restores,
        "final_total": last.map(|t| t.total),
        "final_data_term": last.map(|t| t.data_term),
        "model": format!("{:?}", config.model).to_lowercase(),
        "dip": config.prior.use_dip,
        "lambda_tv": config.prior.lambda_tv,
        "lambda_pos": config.prior.lambda_pos,
    });
    let report_path = out.join(REPORT_FILE);
    let mut text = serde_json::to_string_pretty(&report).expect("report serializes");
    text.push('\n');
    fs::write(&report_path, text).map_err(CliError::io(report_path))?;
    io::write_manifest(out, "reconstruct", config)?;

    if with_plots {
        let plot_dir = out.join("plots");
        io::ensure_dir(&plot_dir)?;
        let re = rec.ri.mapv(|c| c.re);
        let (_, cy) = io::center_xy(&re);
        plots::heatmap(&plot_dir.join("recon_xz.png"), &re.index_axis(Axis(1), cy).to_owned())?;
        let log_loss: Vec<f64> = rec.trace.iter().map(|t| t.total.max(1e-300).log10()).collect();
        plots::line_chart(&plot_dir.join("loss_trace.png"), &[&log_loss])?;
    }

    println!(
        "reconstructed {}x{}x{} volume in {} iterations ({} restores), final loss {:.3e}",
        geom.nx,
        geom.ny,
        geom.nz,
        rec.trace.len(),
        rec.restores,
        last.map(|t| t.total).unwrap_or(f64::NAN)
    );
    Ok(())
}
