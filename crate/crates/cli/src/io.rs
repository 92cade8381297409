//! Run-directory conventions: tensor file names, the reproducibility
//! manifest, and the LED-stack round trip.

use crate::errors::CliError;
use dptomo_core::config::RunConfig;
use dptomo_core::container::{read_f64, write_f64, TensorData};
use dptomo_core::forward::LedStack;
use dptomo_core::geometry::{illumination_wavevectors, SystemGeometry};
use ndarray::{Array2, Array3, ArrayD, Axis, IxDyn};
use std::fs;
use std::path::{Path, PathBuf};

pub const IMAGES_FILE: &str = "images.dpt";
pub const WAVEVECTORS_FILE: &str = "wavevectors.dpt";
pub const TRUTH_FILE: &str = "truth_ri.dpt";
pub const FIELDS_FILE: &str = "fields.dpt";
pub const RECON_FILE: &str = "recon_ri.dpt";
pub const U0_FILE: &str = "u0.dpt";
pub const TRACE_FILE: &str = "trace.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const REPORT_FILE: &str = "report.json";

pub fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(CliError::io(dir))
}

/// Serializes everything needed to replay the run: the effective config
/// (after flag overrides) and the code version. Deliberately free of
/// timestamps and absolute paths so identical runs write identical bytes.
pub fn write_manifest(dir: &Path, command: &str, config: &RunConfig) -> Result<(), CliError> {
    let manifest = serde_json::json!({
        "tool": "dptomo",
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "seed": config.seed,
        "config_toml": config.to_toml_string(),
    });
    let path = dir.join(MANIFEST_FILE);
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    fs::write(&path, text).map_err(CliError::io(path))
}

pub fn write_stack(dir: &Path, stack: &LedStack) -> Result<(), CliError> {
    write_f64(dir.join(IMAGES_FILE), stack.images.view().into_dyn(), "intensity")?;
    let mut wv = Array2::zeros((stack.wavevectors.len(), 3));
    for (p, w) in stack.wavevectors.iter().enumerate() {
        wv[[p, 0]] = w.kx;
        wv[[p, 1]] = w.ky;
        wv[[p, 2]] = w.kz;
    }
    write_f64(dir.join(WAVEVECTORS_FILE), wv.view().into_dyn(), "rad/um")?;
    Ok(())
}

fn as_array3(a: ArrayD<f64>, what: &str) -> Result<Array3<f64>, CliError> {
    a.into_dimensionality::<ndarray::Ix3>()
        .map_err(|_| CliError::Data(format!("{what} must be a rank-3 tensor")))
}

/// Reads a measured stack and checks it against the configured geometry:
/// image shape, LED count, and the recorded wavevectors (which must match
/// what the geometry produces, so config and data tell the same story).
pub fn read_stack(dir: &Path, geom: &SystemGeometry) -> Result<LedStack, CliError> {
    let images = as_array3(read_f64(dir.join(IMAGES_FILE))?, "image stack")?;
    let wv = read_f64(dir.join(WAVEVECTORS_FILE))?;
    let expected = illumination_wavevectors(geom)?;
    let n_led = expected.len();
    if images.shape() != [n_led, geom.nx, geom.ny] {
        return Err(CliError::Data(format!(
            "image stack {:?} does not match the configured geometry [{}, {}, {}]",
            images.shape(),
            n_led,
            geom.nx,
            geom.ny
        )));
    }
    if wv.shape() != [n_led, 3] {
        return Err(CliError::Data(format!(
            "wavevector table {:?} does not match {} LEDs",
            wv.shape(),
            n_led
        )));
    }
    for (p, w) in expected.iter().enumerate() {
        let stored = [wv[IxDyn(&[p, 0])], wv[IxDyn(&[p, 1])], wv[IxDyn(&[p, 2])]];
        let drift = (stored[0] - w.kx)
            .abs()
            .max((stored[1] - w.ky).abs())
            .max((stored[2] - w.kz).abs());
        if drift > 1e-9 {
            return Err(CliError::Data(format!(
                "stored wavevector {p} differs from the configured geometry by {drift:.2e} rad/um"
            )));
        }
    }
    Ok(LedStack { images, wavevectors: expected })
}

pub fn write_csv(path: &Path, header: &str, rows: &[Vec<f64>]) -> Result<(), CliError> {
    let mut text = String::from(header);
    text.push('\n');
    for row in rows {
        let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        text.push_str(&line.join(","));
        text.push('\n');
    }
    fs::write(path, text).map_err(CliError::io(path))
}

/// Resolves `path` to a tensor file: either the file itself or a run
/// directory containing `default_name`.
pub fn resolve_tensor(path: &Path, default_name: &str) -> Result<PathBuf, CliError> {
    let candidate = if path.is_dir() { path.join(default_name) } else { path.to_path_buf() };
    if candidate.is_file() {
        Ok(candidate)
    } else {
        Err(CliError::Data(format!("no tensor at {}", candidate.display())))
    }
}

pub fn tensor_real_part(data: TensorData, what: &str) -> Result<Array3<f64>, CliError> {
    match data {
        TensorData::F64(a) => as_array3(a, what),
        TensorData::C128(a) => as_array3(a.mapv(|c| c.re), what),
        other => Err(CliError::Data(format!(
            "{what}: expected f64 or c128 data, found {}",
            other.dtype()
        ))),
    }
}

pub fn center_xy(volume: &Array3<f64>) -> (usize, usize) {
    (volume.len_of(Axis(0)) / 2, volume.len_of(Axis(1)) / 2)
}
