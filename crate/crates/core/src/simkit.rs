//! Closed-loop experiment support: bead phantoms, camera and field noise
//! models, and the metrics used by reports (RMSE, SSIM, axial traces, 2-d
//! error histograms).

use crate::forward::LedStack;
use crate::geometry::SystemGeometry;
use ndarray::{Array1, Array2, Array3, Axis};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimkitError {
    #[error("invalid phantom: {0}")]
    BadPhantom(String),
    #[error("bead {index} (diameter {diameter_um} um) leaves the volume along {axis}")]
    BeadOutsideVolume { index: usize, diameter_um: f64, axis: char },
    #[error("invalid noise model: {0}")]
    BadNoise(String),
    #[error("{what}: expected shape {expected:?}, got {got:?}")]
    ShapeMismatch { what: &'static str, expected: Vec<usize>, got: Vec<usize> },
    #[error("volume {got:?} is smaller than the {window}-voxel comparison window")]
    VolumeTooSmall { got: Vec<usize>, window: usize },
    #[error("trace position ({x}, {y}) outside a {nx}x{ny} lateral grid")]
    TraceOutsideVolume { x: usize, y: usize, nx: usize, ny: usize },
}

// ---------------------------------------------------------------------------
// Bead phantoms
// ---------------------------------------------------------------------------

/// A chain of spherical beads along the optical axis, centered in the
/// volume.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BeadSpec {
    pub diameters_um: Vec<f64>,
    /// Edge-to-edge axial gaps between consecutive beads
    /// (`diameters_um.len() - 1` entries).
    pub separations_um: Vec<f64>,
    pub bead_ri: f64,
    pub medium_ri: f64,
}

impl BeadSpec {
    pub fn single(diameter_um: f64, bead_ri: f64, medium_ri: f64) -> Self {
        BeadSpec { diameters_um: vec![diameter_um], separations_um: vec![], bead_ri, medium_ri }
    }

    pub fn pair(diameter_um: f64, separation_um: f64, bead_ri: f64, medium_ri: f64) -> Self {
        BeadSpec {
            diameters_um: vec![diameter_um; 2],
            separations_um: vec![separation_um],
            bead_ri,
            medium_ri,
        }
    }

    fn validate(&self) -> Result<(), SimkitError> {
        if self.diameters_um.iter().any(|&d| d < 0.0 || !d.is_finite()) {
            return Err(SimkitError::BadPhantom("bead diameters must be nonnegative".into()));
        }
        if self.separations_um.len() + 1 != self.diameters_um.len().max(1) {
            return Err(SimkitError::BadPhantom(format!(
                "{} beads need {} separations, got {}",
                self.diameters_um.len(),
                self.diameters_um.len().max(1) - 1,
                self.separations_um.len()
            )));
        }
        if self.separations_um.iter().any(|&s| s < 0.0) {
            return Err(SimkitError::BadPhantom("separations must be nonnegative".into()));
        }
        if self.bead_ri < 1.0 || self.medium_ri < 1.0 {
            return Err(SimkitError::BadPhantom("refractive indices must be at least 1".into()));
        }
        Ok(())
    }
}

const SUPERSAMPLE: usize = 8;

/// Voxelizes the bead chain onto the reconstruction grid. Bead centres snap
/// to the nearest voxel centre (so the centre voxel carries the bead index
/// exactly); voxels cut by a sphere surface are averaged over an 8x8x8
/// subvoxel grid.
pub fn bead_phantom(
    spec: &BeadSpec,
    geom: &SystemGeometry,
) -> Result<Array3<Complex64>, SimkitError> {
    spec.validate()?;
    let (dx, dy, dz) = (geom.dx_um, geom.dy_um, geom.dz_um);
    let (nx, ny, nz) = (geom.nx, geom.ny, geom.nz);
    let half_z = geom.axial_extent_um() / 2.0;
    let (cx, cy) = geom.center_um();

    // Chain the beads along z, centered axially, then snap to voxel centres.
    let chain: f64 = spec.diameters_um.iter().sum::<f64>()
        + spec.separations_um.iter().sum::<f64>();
    let mut centers = Vec::with_capacity(spec.diameters_um.len());
    let mut z = -chain / 2.0;
    for (b, &d) in spec.diameters_um.iter().enumerate() {
        let cz = z + d / 2.0;
        z += d + spec.separations_um.get(b).copied().unwrap_or(0.0);
        let ix = ((cx / dx - 0.5).round().max(0.0) as usize).min(nx - 1);
        let iy = ((cy / dy - 0.5).round().max(0.0) as usize).min(ny - 1);
        let iz = (((cz + half_z) / dz - 0.5).round().max(0.0) as usize).min(nz - 1);
        centers.push((
            (ix as f64 + 0.5) * dx,
            (iy as f64 + 0.5) * dy,
            (iz as f64 + 0.5) * dz - half_z,
        ));
    }

    for (b, (&d, &(bx, by, bz))) in spec.diameters_um.iter().zip(&centers).enumerate() {
        let r = d / 2.0;
        let out = |lo: f64, v: f64, hi: f64| v - r < lo || v + r > hi;
        let axis = if out(0.0, bx, nx as f64 * dx) {
            Some('x')
        } else if out(0.0, by, ny as f64 * dy) {
            Some('y')
        } else if out(-half_z, bz, half_z) {
            Some('z')
        } else {
            None
        };
        if let Some(axis) = axis {
            return Err(SimkitError::BeadOutsideVolume { index: b, diameter_um: d, axis });
        }
    }

    let half_diag = 0.5 * (dx * dx + dy * dy + dz * dz).sqrt();
    let mut vol = Array3::from_elem((nx, ny, nz), Complex64::new(spec.medium_ri, 0.0));
    let delta = spec.bead_ri - spec.medium_ri;
    for (&d, &(bx, by, bz)) in spec.diameters_um.iter().zip(&centers) {
        if d == 0.0 {
            continue;
        }
        let r = d / 2.0;
        // Only voxels within the padded bounding box can intersect.
        let lo = |c: f64, step: f64, n: usize| {
            (((c - r - half_diag) / step - 0.5).floor().max(0.0) as usize).min(n - 1)
        };
        let hi = |c: f64, step: f64, n: usize| {
            (((c + r + half_diag) / step + 0.5).ceil().max(0.0) as usize).min(n - 1)
        };
        let (x0, x1) = (lo(bx, dx, nx), hi(bx, dx, nx));
        let (y0, y1) = (lo(by, dy, ny), hi(by, dy, ny));
        let (z0, z1) = (lo(bz + half_z, dz, nz), hi(bz + half_z, dz, nz));
        for i in x0..=x1 {
            for j in y0..=y1 {
                for l in z0..=z1 {
                    let vx = (i as f64 + 0.5) * dx;
                    let vy = (j as f64 + 0.5) * dy;
                    let vz = (l as f64 + 0.5) * dz - half_z;
                    let dist =
                        ((vx - bx).powi(2) + (vy - by).powi(2) + (vz - bz).powi(2)).sqrt();
                    let frac = if dist <= r - half_diag {
                        1.0
                    } else if dist >= r + half_diag {
                        0.0
                    } else {
                        let mut inside = 0usize;
                        for sx in 0..SUPERSAMPLE {
                            for sy in 0..SUPERSAMPLE {
                                for sz in 0..SUPERSAMPLE {
                                    let s = |u: usize| (u as f64 + 0.5) / SUPERSAMPLE as f64 - 0.5;
                                    let px = vx + s(sx) * dx;
                                    let py = vy + s(sy) * dy;
                                    let pz = vz + s(sz) * dz;
                                    let d2 = (px - bx).powi(2)
                                        + (py - by).powi(2)
                                        + (pz - bz).powi(2);
                                    if d2 <= r * r {
                                        inside += 1;
                                    }
                                }
                            }
                        }
                        inside as f64 / SUPERSAMPLE.pow(3) as f64
                    };
                    if frac > 0.0 {
                        vol[[i, j, l]] = Complex64::new(spec.medium_ri + delta * frac, 0.0);
                    }
                }
            }
        }
    }
    Ok(vol)
}

// ---------------------------------------------------------------------------
// Noise models
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NoiseMode {
    /// Shot noise plus ADC quantization on measured intensities.
    #[serde(rename = "poisson-8bit")]
    PoissonCamera,
    /// Circular complex Gaussian noise on measured fields.
    #[serde(rename = "complex-gaussian")]
    ComplexGaussian,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Pixel full-well capacity in photoelectrons.
    pub well_depth: f64,
    /// ADC resolution in bits.
    pub bit_depth: u32,
    pub mode: NoiseMode,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec { well_depth: 50_000.0, bit_depth: 8, mode: NoiseMode::PoissonCamera }
    }
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<(), SimkitError> {
        if !(self.well_depth > 0.0) {
            return Err(SimkitError::BadNoise(format!(
                "well depth must be positive, got {}",
                self.well_depth
            )));
        }
        if !(1..=16).contains(&self.bit_depth) {
            return Err(SimkitError::BadNoise(format!(
                "bit depth must lie in 1..=16, got {}",
                self.bit_depth
            )));
        }
        Ok(())
    }
}

/// Maximum exposure boost applied to dark-field LEDs before sampling.
pub const MAX_DARKFIELD_GAIN: f64 = 100.0;

/// Simulates the camera: the stack is scaled so its global maximum fills the
/// well, dark-field LEDs get an exposure boost (ratio of bright-field to
/// dark-field mean intensity, capped), each pixel draws a Poisson count,
/// counts are quantized by the ADC, and the result is mapped back to the
/// input intensity scale (undoing the boost).
pub fn poisson_camera<R: Rng>(
    stack: &LedStack,
    spec: &NoiseSpec,
    rng: &mut R,
) -> Result<LedStack, SimkitError> {
    spec.validate()?;
    if stack.wavevectors.len() != stack.n_led() {
        return Err(SimkitError::BadNoise(format!(
            "stack carries {} wavevectors for {} LEDs",
            stack.wavevectors.len(),
            stack.n_led()
        )));
    }
    let max = stack.images.iter().cloned().fold(0.0_f64, f64::max);
    if stack.images.iter().any(|&v| v < 0.0) {
        return Err(SimkitError::BadNoise("intensities must be nonnegative".into()));
    }
    if max == 0.0 {
        return Ok(stack.clone());
    }
    let scale = spec.well_depth / max;

    let means: Vec<f64> = (0..stack.n_led())
        .map(|p| {
            let img = stack.images.index_axis(Axis(0), p);
            img.sum() / img.len() as f64
        })
        .collect();
    let bright: Vec<usize> = stack
        .wavevectors
        .iter()
        .enumerate()
        .filter(|(_, w)| w.brightfield)
        .map(|(p, _)| p)
        .collect();
    let mean_bright = if bright.is_empty() {
        0.0
    } else {
        bright.iter().map(|&p| means[p]).sum::<f64>() / bright.len() as f64
    };

    let levels = (1u32 << spec.bit_depth) - 1;
    let mut out = stack.images.clone();
    for p in 0..stack.n_led() {
        let gain = if stack.wavevectors[p].brightfield || mean_bright == 0.0 {
            1.0
        } else if means[p] == 0.0 {
            MAX_DARKFIELD_GAIN
        } else {
            (mean_bright / means[p]).min(MAX_DARKFIELD_GAIN).max(1.0)
        };
        for v in out.index_axis_mut(Axis(0), p).iter_mut() {
            let lambda = *v * scale * gain;
            let counts = if lambda == 0.0 {
                0.0
            } else {
                Poisson::new(lambda)
                    .map_err(|e| SimkitError::BadNoise(format!("poisson mean {lambda}: {e}")))?
                    .sample(rng)
            };
            let code = ((counts * levels as f64 / spec.well_depth).round()).min(levels as f64);
            *v = code * spec.well_depth / (levels as f64 * scale * gain);
        }
    }
    Ok(LedStack { images: out, wavevectors: stack.wavevectors.clone() })
}

/// Standard deviation (per quadrature) of the complex field noise
/// equivalent to shot noise at mean intensity `mu` photons:
/// `sqrt((sqrt(mu^2 + mu) - mu) / 2)`, increasing toward 1/2.
pub fn complex_field_noise_sigma(mu: f64) -> f64 {
    assert!(mu >= 0.0, "mean intensity must be nonnegative");
    // Rationalized form of the formula above: the direct difference loses
    // all significance once mu >> 1 (and overflows mu^2 first), while this
    // one stays monotone, strictly below 1/2, and exact at mu = 0.
    1.0 / (2.0 * (1.0 + (1.0 + 1.0 / mu).sqrt())).sqrt()
}

/// Adds circular complex Gaussian noise with a per-pixel quadrature std
/// given by `sigma` of the pixel's intensity `|f|^2`.
pub fn add_field_noise_with<R: Rng>(
    fields: &Array3<Complex64>,
    rng: &mut R,
    sigma: impl Fn(f64) -> f64,
) -> Array3<Complex64> {
    let normal = Normal::new(0.0, 1.0).unwrap();
    fields.mapv(|f| {
        let s = sigma(f.norm_sqr());
        if s == 0.0 {
            f
        } else {
            f + Complex64::new(s * normal.sample(rng), s * normal.sample(rng))
        }
    })
}

/// [`add_field_noise_with`] using the shot-noise-equivalent
/// [`complex_field_noise_sigma`].
pub fn add_field_noise<R: Rng>(fields: &Array3<Complex64>, rng: &mut R) -> Array3<Complex64> {
    add_field_noise_with(fields, rng, complex_field_noise_sigma)
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

fn check_shapes(
    what: &'static str,
    a: &Array3<f64>,
    b: &Array3<f64>,
) -> Result<(), SimkitError> {
    if a.shape() != b.shape() {
        return Err(SimkitError::ShapeMismatch {
            what,
            expected: a.shape().to_vec(),
            got: b.shape().to_vec(),
        });
    }
    Ok(())
}

pub fn rmse(a: &Array3<f64>, b: &Array3<f64>) -> Result<f64, SimkitError> {
    check_shapes("rmse volumes", a, b)?;
    let n = a.len() as f64;
    Ok((a.iter().zip(b.iter()).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / n).sqrt())
}

pub const SSIM_WINDOW: usize = 7;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

/// Mean structural similarity between a reconstruction and the ground
/// truth: uniform 7x7x7 windows, dynamic range taken from the truth.
pub fn ssim(recon: &Array3<f64>, truth: &Array3<f64>) -> Result<f64, SimkitError> {
    check_shapes("ssim volumes", recon, truth)?;
    let w = SSIM_WINDOW;
    let dims = truth.dim();
    if dims.0 < w || dims.1 < w || dims.2 < w {
        return Err(SimkitError::VolumeTooSmall { got: truth.shape().to_vec(), window: w });
    }
    let (t_min, t_max) = truth
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = if t_max > t_min { t_max - t_min } else { 1.0 };
    let c1 = (SSIM_K1 * range).powi(2);
    let c2 = (SSIM_K2 * range).powi(2);

    let nw = w.pow(3) as f64;
    let mut sum = 0.0;
    let mut count = 0usize;
    for i in 0..=dims.0 - w {
        for j in 0..=dims.1 - w {
            for l in 0..=dims.2 - w {
                let (mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for a in 0..w {
                    for b in 0..w {
                        for c in 0..w {
                            let x = recon[[i + a, j + b, l + c]];
                            let y = truth[[i + a, j + b, l + c]];
                            sx += x;
                            sy += y;
                            sxx += x * x;
                            syy += y * y;
                            sxy += x * y;
                        }
                    }
                }
                let mx = sx / nw;
                let my = sy / nw;
                let vx = (sxx / nw - mx * mx).max(0.0);
                let vy = (syy / nw - my * my).max(0.0);
                let cxy = sxy / nw - mx * my;
                sum += ((2.0 * mx * my + c1) * (2.0 * cxy + c2))
                    / ((mx * mx + my * my + c1) * (vx + vy + c2));
                count += 1;
            }
        }
    }
    Ok(sum / count as f64)
}

/// Profile along z through one lateral position.
pub fn axial_trace(volume: &Array3<f64>, x: usize, y: usize) -> Result<Array1<f64>, SimkitError> {
    let (nx, ny, _) = volume.dim();
    if x >= nx || y >= ny {
        return Err(SimkitError::TraceOutsideVolume { x, y, nx, ny });
    }
    Ok(volume.index_axis(Axis(0), x).index_axis(Axis(0), y).to_owned())
}

/// Joint histogram of (truth value, reconstructed value) pairs over a shared
/// range, for scatter-style agreement plots.
#[derive(Debug, Clone)]
pub struct ErrorHistogram {
    /// `counts[[t, r]]` = voxels whose truth value falls in bin `t` and
    /// reconstructed value in bin `r`.
    pub counts: Array2<u64>,
    pub lo: f64,
    pub hi: f64,
}

pub fn error_histogram(
    recon: &Array3<f64>,
    truth: &Array3<f64>,
    bins: usize,
) -> Result<ErrorHistogram, SimkitError> {
    check_shapes("histogram volumes", recon, truth)?;
    if bins == 0 {
        return Err(SimkitError::BadNoise("histogram needs at least one bin".into()));
    }
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &v in truth.iter().chain(recon.iter()) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !(hi > lo) {
        hi = lo + 1.0;
    }
    let width = (hi - lo) / bins as f64;
    let bin = |v: f64| (((v - lo) / width) as usize).min(bins - 1);
    let mut counts = Array2::<u64>::zeros((bins, bins));
    for (&t, &r) in truth.iter().zip(recon.iter()) {
        counts[[bin(t), bin(r)]] += 1;
    }
    Ok(ErrorHistogram { counts, lo, hi })
}
