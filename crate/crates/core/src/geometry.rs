//! Imaging geometry and k-space bookkeeping.
//!
//! Conventions used throughout the workspace:
//!
//! * Real-space samples sit at `x_i = i * dx` (FFT-style, no centering); the
//!   lateral center of the field of view is `(nx/2) * dx`.
//! * Spatial frequencies are angular (`rad/um`) and FFT-ordered: bin `i`
//!   holds `2*pi * wrap(i) / (n * d)` with `wrap` mapping to `[-n/2, n/2)`.
//! * Axial position of slice `r` is `z_r = (r + 1) * dz - nz*dz/2`, i.e.
//!   `z = 0` falls on slice `nz/2 - 1` for even `nz`. This is the exit plane
//!   of slice `r` in the beam-propagation model and the nominal position of
//!   the slab collapsed onto it in the single-scattering models.
//! * Illumination travels toward `+z`; the LED board sits `distance_mm`
//!   below the sample. The detector focus plane can be offset by
//!   `focus_offset_um` from `z = 0`.
//!
//! Wavevector magnitudes: illumination and scattered waves live on the Ewald
//! sphere of radius `k * n0` (medium wavenumber); the imaging pupil cuts the
//! lateral plane at radius `k * na_img` with the vacuum wavenumber `k`, the
//! usual objective-NA convention.

use ndarray::{Array1, Array2, Array3};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Error, Debug)]
pub enum GeometryError {
    #[error("invalid geometry: {0}")]
    Invalid(String),
    #[error("degenerate illumination direction for LED {0} (no axial component)")]
    DegenerateIllumination(usize),
    #[error("illumination wavevector of LED {0} falls outside the lateral frequency grid")]
    IlluminationBeyondGrid(usize),
    #[error("shape mismatch: spectrum is {spectrum:?} but transfer function is {transfer:?}")]
    ShapeMismatch { spectrum: Vec<usize>, transfer: Vec<usize> },
    #[error("axial range must be positive")]
    EmptyAxialRange,
}

/// Conditions worth reporting but not fatal.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum GeometryWarning {
    /// `dx > lambda / (2 (na_ill + na_img))`: scattered frequencies alias.
    LateralUndersampling,
}

impl std::fmt::Display for GeometryWarning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            GeometryWarning::LateralUndersampling => write!(
                f,
                "lateral sampling coarser than lambda / (2 (na_ill + na_img)); \
                 scattered frequencies will alias"
            ),
        }
    }
}

/// Positions of the illumination LEDs on a planar board.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct LedLayout {
    /// Lateral positions in millimetres, relative to the optical axis.
    pub positions_mm: Vec<[f64; 2]>,
    /// Board distance below the sample, millimetres.
    pub distance_mm: f64,
}

impl LedLayout {
    /// Square grid of `per_side x per_side` LEDs centered on the axis.
    pub fn centered_grid(per_side: usize, pitch_mm: f64, distance_mm: f64) -> Self {
        let mut positions_mm = Vec::with_capacity(per_side * per_side);
        let half = (per_side as f64 - 1.0) / 2.0;
        for iy in 0..per_side {
            for ix in 0..per_side {
                positions_mm.push([(ix as f64 - half) * pitch_mm, (iy as f64 - half) * pitch_mm]);
            }
        }
        LedLayout { positions_mm, distance_mm }
    }

    /// Single on-axis LED (normal-incidence plane wave).
    pub fn single(distance_mm: f64) -> Self {
        LedLayout { positions_mm: vec![[0.0, 0.0]], distance_mm }
    }

    pub fn len(&self) -> usize {
        self.positions_mm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions_mm.is_empty()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct SystemGeometry {
    pub wavelength_um: f64,
    /// Background (immersion) refractive index.
    pub n0: f64,
    /// Illumination NA: `n0 * sin` of the steepest LED angle accepted.
    pub na_ill: f64,
    /// Imaging NA of the objective.
    pub na_img: f64,
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub dx_um: f64,
    pub dy_um: f64,
    pub dz_um: f64,
    pub leds: LedLayout,
    /// Detector focus plane relative to the volume center, micrometres.
    pub focus_offset_um: f64,
    /// Snap illumination wavevectors onto the lateral frequency grid so
    /// plane-wave ramps are exactly periodic over the field of view.
    pub snap_illumination: bool,
}

impl SystemGeometry {
    /// Vacuum wavenumber `2 pi / lambda`.
    pub fn k_vacuum(&self) -> f64 {
        2.0 * PI / self.wavelength_um
    }

    /// Medium wavenumber `k * n0` (Ewald sphere radius).
    pub fn k_medium(&self) -> f64 {
        self.k_vacuum() * self.n0
    }

    /// Lateral field of view `(nx*dx, ny*dy)` in micrometres.
    pub fn fov_um(&self) -> (f64, f64) {
        (self.nx as f64 * self.dx_um, self.ny as f64 * self.dy_um)
    }

    /// Axial extent `nz * dz` in micrometres.
    pub fn axial_extent_um(&self) -> f64 {
        self.nz as f64 * self.dz_um
    }

    /// Axial position of slice `r` (see module docs).
    pub fn slice_z_um(&self, r: usize) -> f64 {
        (r as f64 + 1.0) * self.dz_um - self.axial_extent_um() / 2.0
    }

    /// Lateral center of the field of view.
    pub fn center_um(&self) -> (f64, f64) {
        (self.nx as f64 / 2.0 * self.dx_um, self.ny as f64 / 2.0 * self.dy_um)
    }

    /// Checks physical consistency; returns non-fatal warnings.
    pub fn validate(&self) -> Result<Vec<GeometryWarning>, GeometryError> {
        let bad = |msg: String| Err(GeometryError::Invalid(msg));
        if !(self.wavelength_um > 0.0) {
            return bad(format!("wavelength must be positive, got {}", self.wavelength_um));
        }
        if !(self.n0 > 0.0) {
            return bad(format!("background index must be positive, got {}", self.n0));
        }
        if !(self.na_img > 0.0 && self.na_img <= self.n0) {
            return bad(format!(
                "imaging NA must lie in (0, n0]; got {} with n0 = {}",
                self.na_img, self.n0
            ));
        }
        if !(self.na_ill >= 0.0 && self.na_ill <= self.n0) {
            return bad(format!(
                "illumination NA must lie in [0, n0]; got {} with n0 = {}",
                self.na_ill, self.n0
            ));
        }
        if self.nx == 0 || self.ny == 0 || self.nz == 0 {
            return bad("grid extents must be nonzero".into());
        }
        if !(self.dx_um > 0.0 && self.dy_um > 0.0 && self.dz_um > 0.0) {
            return bad("voxel pitches must be positive".into());
        }
        if self.leds.is_empty() {
            return bad("LED layout is empty".into());
        }
        if !(self.leds.distance_mm > 0.0) {
            return Err(GeometryError::DegenerateIllumination(0));
        }
        let mut warnings = Vec::new();
        let nyquist = self.wavelength_um / (2.0 * (self.na_ill + self.na_img));
        if self.dx_um > nyquist || self.dy_um > nyquist {
            warnings.push(GeometryWarning::LateralUndersampling);
        }
        Ok(warnings)
    }
}

/// FFT-ordered angular frequencies for an axis of `n` samples at pitch `d`.
pub fn fft_wavenumbers(n: usize, d: f64) -> Array1<f64> {
    let dk = 2.0 * PI / (n as f64 * d);
    Array1::from_shape_fn(n, |i| {
        let m = if i < n.div_ceil(2) { i as isize } else { i as isize - n as isize };
        m as f64 * dk
    })
}

/// Maps an integer frequency index onto the FFT-ordered grid of extent `n`,
/// rejecting indices outside `[-n/2, (n-1)/2]`. Shared by the transfer
/// function synthesis and the forward-model gather so both place scattering
/// events in identical bins.
pub fn wrap_freq_index(m: isize, n: usize) -> Option<usize> {
    let n = n as isize;
    let lo = -(n / 2);
    let hi = (n - 1) / 2;
    if m < lo || m > hi {
        return None;
    }
    Some(((m + n) % n) as usize)
}

/// Scattered-side Ewald cap sampled on the lateral frequency grid.
///
/// Entry `(i, j)` carries the wavevector a plane wave must have to reach
/// detector frequency bin `(kx_i, ky_j)`: lateral components from the grid,
/// axial component `kz = sqrt((k n0)^2 - kx^2 - ky^2)`. `mask` marks bins
/// inside the imaging pupil; outside it `kz` is zeroed and meaningless.
#[derive(Clone, Debug)]
pub struct CapWavevectors {
    pub kx: Array2<f64>,
    pub ky: Array2<f64>,
    pub kz: Array2<f64>,
    pub mask: Array2<bool>,
}

impl CapWavevectors {
    pub fn shape(&self) -> (usize, usize) {
        self.kx.dim()
    }

    /// Number of pupil bins.
    pub fn mask_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// Samples the Ewald cap for the imaging pupil of `geom`.
pub fn ewald_cap(geom: &SystemGeometry) -> CapWavevectors {
    let kxs = fft_wavenumbers(geom.nx, geom.dx_um);
    let kys = fft_wavenumbers(geom.ny, geom.dy_um);
    let k_med = geom.k_medium();
    let k_pupil = geom.k_vacuum() * geom.na_img;
    let shape = (geom.nx, geom.ny);
    let mut kx = Array2::zeros(shape);
    let mut ky = Array2::zeros(shape);
    let mut kz = Array2::zeros(shape);
    let mut mask = Array2::from_elem(shape, false);
    for i in 0..geom.nx {
        for j in 0..geom.ny {
            let (kxi, kyj) = (kxs[i], kys[j]);
            let lat2 = kxi * kxi + kyj * kyj;
            kx[[i, j]] = kxi;
            ky[[i, j]] = kyj;
            if lat2 <= k_pupil * k_pupil {
                // na_img <= n0 keeps the radicand nonnegative.
                kz[[i, j]] = (k_med * k_med - lat2).sqrt();
                mask[[i, j]] = true;
            }
        }
    }
    CapWavevectors { kx, ky, kz, mask }
}

/// One LED's plane-wave wavevector inside the medium.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IlluminationWavevector {
    pub kx: f64,
    pub ky: f64,
    pub kz: f64,
    pub led_index: usize,
    /// Whether the unscattered beam lands inside the imaging pupil.
    pub brightfield: bool,
}

impl IlluminationWavevector {
    pub fn norm(&self) -> f64 {
        (self.kx * self.kx + self.ky * self.ky + self.kz * self.kz).sqrt()
    }
}

/// Illumination wavevectors for every LED: direction from the LED toward the
/// sample origin, magnitude `k * n0`, optionally snapped onto the lateral
/// frequency grid (axial component recomputed to stay on the Ewald sphere).
pub fn illumination_wavevectors(
    geom: &SystemGeometry,
) -> Result<Vec<IlluminationWavevector>, GeometryError> {
    let k_med = geom.k_medium();
    let k_pupil = geom.k_vacuum() * geom.na_img;
    let dist_um = geom.leds.distance_mm * 1e3;
    let dkx = 2.0 * PI / (geom.nx as f64 * geom.dx_um);
    let dky = 2.0 * PI / (geom.ny as f64 * geom.dy_um);
    let mut out = Vec::with_capacity(geom.leds.len());
    for (p, pos) in geom.leds.positions_mm.iter().enumerate() {
        let (px_um, py_um) = (pos[0] * 1e3, pos[1] * 1e3);
        let norm = (px_um * px_um + py_um * py_um + dist_um * dist_um).sqrt();
        if !(dist_um > 0.0) || !(dist_um / norm > 1e-12) {
            return Err(GeometryError::DegenerateIllumination(p));
        }
        let mut kx = k_med * (-px_um) / norm;
        let mut ky = k_med * (-py_um) / norm;
        if geom.snap_illumination {
            let mx = (kx / dkx).round() as isize;
            let my = (ky / dky).round() as isize;
            if wrap_freq_index(mx, geom.nx).is_none() || wrap_freq_index(my, geom.ny).is_none() {
                return Err(GeometryError::IlluminationBeyondGrid(p));
            }
            kx = mx as f64 * dkx;
            ky = my as f64 * dky;
        }
        let lat2 = kx * kx + ky * ky;
        if lat2 >= k_med * k_med {
            return Err(GeometryError::DegenerateIllumination(p));
        }
        let kz = (k_med * k_med - lat2).sqrt();
        out.push(IlluminationWavevector {
            kx,
            ky,
            kz,
            led_index: p,
            brightfield: lat2.sqrt() <= k_pupil * (1.0 + 1e-12),
        });
    }
    Ok(out)
}

/// Synthesizes the binary 3D transfer function: the union over LEDs of the
/// Ewald cap shifted by `-k_ill`, nearest-neighbor rounded onto the
/// `(nx, ny, nz)` frequency grid. Scattering events falling outside the
/// axial band are dropped.
pub fn synthesize_transfer_function(
    geom: &SystemGeometry,
    ills: &[IlluminationWavevector],
) -> Array3<bool> {
    let cap = ewald_cap(geom);
    let dkx = 2.0 * PI / (geom.nx as f64 * geom.dx_um);
    let dky = 2.0 * PI / (geom.ny as f64 * geom.dy_um);
    let dkz = 2.0 * PI / (geom.nz as f64 * geom.dz_um);
    let mut h = Array3::from_elem((geom.nx, geom.ny, geom.nz), false);
    for ill in ills {
        for i in 0..geom.nx {
            for j in 0..geom.ny {
                if !cap.mask[[i, j]] {
                    continue;
                }
                let qx = cap.kx[[i, j]] - ill.kx;
                let qy = cap.ky[[i, j]] - ill.ky;
                let qz = cap.kz[[i, j]] - ill.kz;
                let (Some(ix), Some(iy), Some(iz)) = (
                    wrap_freq_index((qx / dkx).round() as isize, geom.nx),
                    wrap_freq_index((qy / dky).round() as isize, geom.ny),
                    wrap_freq_index((qz / dkz).round() as isize, geom.nz),
                ) else {
                    continue;
                };
                h[[ix, iy, iz]] = true;
            }
        }
    }
    h
}

/// Zeroes every spectrum bin outside the transfer function support.
pub fn filter_through_transfer_function(
    spectrum: &Array3<num_complex::Complex64>,
    h: &Array3<bool>,
) -> Result<Array3<num_complex::Complex64>, GeometryError> {
    if spectrum.dim() != h.dim() {
        return Err(GeometryError::ShapeMismatch {
            spectrum: spectrum.shape().to_vec(),
            transfer: h.shape().to_vec(),
        });
    }
    let mut out = spectrum.clone();
    ndarray::Zip::from(&mut out).and(h).for_each(|v, &keep| {
        if !keep {
            *v = num_complex::Complex64::ZERO;
        }
    });
    Ok(out)
}

/// 3D space-bandwidth product: number of independent complex samples the
/// system transfers for a target field of view and axial range,
/// `|H| / (nx ny nz) * fov_area * axial_range / (dx dy dz)`.
pub fn compute_sbp(
    geom: &SystemGeometry,
    h: &Array3<bool>,
    fov_um2: f64,
    axial_range_um: f64,
) -> Result<f64, GeometryError> {
    if !(axial_range_um > 0.0) {
        return Err(GeometryError::EmptyAxialRange);
    }
    if !(fov_um2 > 0.0) {
        return Err(GeometryError::Invalid("field of view must be positive".into()));
    }
    let support = h.iter().filter(|&&b| b).count() as f64;
    let fraction = support / h.len() as f64;
    Ok(fraction * fov_um2 * axial_range_um / (geom.dx_um * geom.dy_um * geom.dz_um))
}

/// Re-centers an FFT-ordered axis for display: `out[i] = in[(i + ceil(n/2)) % n]`.
pub fn fftshift2<T: Clone>(a: &Array2<T>) -> Array2<T> {
    let (nx, ny) = a.dim();
    let (ox, oy) = (nx.div_ceil(2), ny.div_ceil(2));
    Array2::from_shape_fn((nx, ny), |(i, j)| a[[(i + ox) % nx, (j + oy) % ny]].clone())
}

pub fn fftshift3<T: Clone>(a: &Array3<T>) -> Array3<T> {
    let (nx, ny, nz) = a.dim();
    let (ox, oy, oz) = (nx.div_ceil(2), ny.div_ceil(2), nz.div_ceil(2));
    Array3::from_shape_fn((nx, ny, nz), |(i, j, l)| {
        a[[(i + ox) % nx, (j + oy) % ny, (l + oz) % nz]].clone()
    })
}
