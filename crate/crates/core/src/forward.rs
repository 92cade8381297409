//! Forward predictors: single-scattering (weak-contrast) and slice-stepping
//! (beam-propagation) intensity models, plus phase-sensitive field variants.
//!
//! Every model is expressed as a tape graph from `dptomo-autodiff`, so the
//! same code path serves simulation (evaluate the graph) and reconstruction
//! (evaluate, then backpropagate). Conventions shared with [`crate::geometry`]:
//! lateral coordinates `x_i = i·dx` with the volume centered at `(n/2)·dx`,
//! unitary DFTs, and slice planes `z_r = (r+1)·δz − Δz/2`.
//!
//! The single-scattering weight applied to the sampled potential spectrum is
//! `W(q) = 2πi·δz·√nz / kz_cap · exp(−i·qz·(δz − Δz/2 − Δz_f))` with
//! `qz = kz_cap − kz_ill` kept exact (not grid-rounded). The magnitude and
//! phase are fixed by requiring that a single-slice beam-propagation run,
//! linearized in the contrast, reproduces the scattered field on the same
//! discrete grid — the `1/kz_cap` obliquity and the slice-plane offset phase
//! carry over unchanged.

use crate::geometry::{
    ewald_cap, fft_wavenumbers, illumination_wavevectors, wrap_freq_index, CapWavevectors,
    GeometryError, IlluminationWavevector, SystemGeometry,
};
use dptomo_autodiff::{parallel, NodeId, SampleTaps, TapeGraph, Value};
use ndarray::{Array2, Array3, ArrayD, IxDyn};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ForwardError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("{what}: expected shape {expected:?}, got {got:?}")]
    ShapeMismatch { what: &'static str, expected: Vec<usize>, got: Vec<usize> },
    #[error("field ratio is undefined: background field contains a zero pixel")]
    ZeroBackground,
    #[error("LED {led_index} illuminates parallel to the focal plane (kz = 0)")]
    GrazingIllumination { led_index: usize },
    #[error("LED {led_index}: scattering frequency falls outside the {axis}-axis grid; refine the sampling or reduce the apertures")]
    FrequencyOutsideGrid { led_index: usize, axis: char },
}

/// Which forward model maps the volume to camera-plane predictions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ForwardModel {
    Born,
    Rytov,
    Multislice,
}

impl std::fmt::Display for ForwardModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ForwardModel::Born => "born",
            ForwardModel::Rytov => "rytov",
            ForwardModel::Multislice => "multislice",
        };
        f.write_str(s)
    }
}

/// A stack of per-LED intensity images, shape `[n_led, nx, ny]`.
#[derive(Debug, Clone)]
pub struct LedStack {
    pub images: Array3<f64>,
    pub wavevectors: Vec<IlluminationWavevector>,
}

impl LedStack {
    pub fn n_led(&self) -> usize {
        self.images.shape()[0]
    }
}

/// A stack of per-LED complex camera-plane fields, shape `[n_led, nx, ny]`.
#[derive(Debug, Clone)]
pub struct FieldStack {
    pub fields: Array3<Complex64>,
    pub wavevectors: Vec<IlluminationWavevector>,
}

impl FieldStack {
    pub fn n_led(&self) -> usize {
        self.fields.shape()[0]
    }
}

// ---------------------------------------------------------------------------
// Potential / refractive-index conversions
// ---------------------------------------------------------------------------

/// `V = (k²/4π)(n² − n0²)` with `k` the vacuum wavenumber; units µm⁻².
pub fn scattering_potential_from_ri(
    n: &Array3<Complex64>,
    n0: f64,
    wavelength_um: f64,
) -> Array3<Complex64> {
    let k = 2.0 * PI / wavelength_um;
    let c = k * k / (4.0 * PI);
    n.mapv(|v| c * (v * v - n0 * n0))
}

/// Inverse of [`scattering_potential_from_ri`]; principal square root, so the
/// real part of the result is nonnegative.
pub fn ri_from_scattering_potential(
    v: &Array3<Complex64>,
    n0: f64,
    wavelength_um: f64,
) -> Array3<Complex64> {
    let k = 2.0 * PI / wavelength_um;
    let c = 4.0 * PI / (k * k);
    v.mapv(|t| (n0 * n0 + c * t).sqrt())
}

/// Unitary 3-d spectrum of a potential volume.
pub fn potential_spectrum(v: &Array3<Complex64>) -> Array3<Complex64> {
    fft3(v, false)
}

/// Inverse of [`potential_spectrum`].
pub fn potential_from_spectrum(vs: &Array3<Complex64>) -> Array3<Complex64> {
    fft3(vs, true)
}

fn fft3(v: &Array3<Complex64>, inverse: bool) -> Array3<Complex64> {
    let mut a: ArrayD<Complex64> = v.to_owned().into_dyn();
    dptomo_autodiff::fft::fft_all_axes_unitary(a.view_mut(), inverse);
    a.into_dimensionality().unwrap()
}

// ---------------------------------------------------------------------------
// Pupil
// ---------------------------------------------------------------------------

/// Imaging-side aperture: binary amplitude plus a phase map (aberrations),
/// both on the FFT-ordered lateral frequency grid.
#[derive(Debug, Clone)]
pub struct Pupil {
    pub amplitude: Array2<f64>,
    pub phase: Array2<f64>,
}

impl Pupil {
    /// Aberration-free circular pupil of radius `k·na_img` on the full grid.
    pub fn ideal(geom: &SystemGeometry) -> Pupil {
        Self::ideal_on(geom, geom.nx, geom.ny)
    }

    /// Same pupil sampled on an `nx × ny` grid with the system pixel pitch
    /// (used for spatial patches).
    pub fn ideal_on(geom: &SystemGeometry, nx: usize, ny: usize) -> Pupil {
        let kxs = fft_wavenumbers(nx, geom.dx_um);
        let kys = fft_wavenumbers(ny, geom.dy_um);
        let r2 = (geom.k_vacuum() * geom.na_img).powi(2);
        let amplitude = Array2::from_shape_fn((nx, ny), |(i, j)| {
            if kxs[i] * kxs[i] + kys[j] * kys[j] <= r2 {
                1.0
            } else {
                0.0
            }
        });
        Pupil { amplitude, phase: Array2::zeros((nx, ny)) }
    }

    /// `A·exp(iφ)` as one complex filter.
    pub fn transmission(&self) -> Array2<Complex64> {
        let mut t = Array2::zeros(self.amplitude.raw_dim());
        ndarray::Zip::from(&mut t)
            .and(&self.amplitude)
            .and(&self.phase)
            .for_each(|o, &a, &p| *o = Complex64::from_polar(a, p));
        t
    }
}

// ---------------------------------------------------------------------------
// Fields, kernels, windows
// ---------------------------------------------------------------------------

/// Plane-wave background `u0·exp(i(kx·x + ky·y))` on an `nx × ny` patch whose
/// origin sits `offset_px` pixels into the full field of view.
pub fn background_field(
    nx: usize,
    ny: usize,
    dx_um: f64,
    dy_um: f64,
    offset_px: (usize, usize),
    u0: f64,
    ill: &IlluminationWavevector,
) -> Array2<Complex64> {
    Array2::from_shape_fn((nx, ny), |(i, j)| {
        let x = (offset_px.0 + i) as f64 * dx_um;
        let y = (offset_px.1 + j) as f64 * dy_um;
        Complex64::from_polar(u0, ill.kx * x + ill.ky * y)
    })
}

/// Angular-spectrum propagation filter over an axial distance `z`:
/// `D = exp(−i(kx²+ky²)·z / (k·n0 + sqrt(k²n0² − kx² − ky²)))`, zero on the
/// evanescent region.
pub fn fresnel_kernel(
    nx: usize,
    ny: usize,
    dx_um: f64,
    dy_um: f64,
    k_vacuum: f64,
    n0: f64,
    z_um: f64,
) -> Array2<Complex64> {
    let kxs = fft_wavenumbers(nx, dx_um);
    let kys = fft_wavenumbers(ny, dy_um);
    let km = k_vacuum * n0;
    Array2::from_shape_fn((nx, ny), |(i, j)| {
        let lat2 = kxs[i] * kxs[i] + kys[j] * kys[j];
        if lat2 <= km * km {
            Complex64::from_polar(1.0, -lat2 * z_um / (km + (km * km - lat2).sqrt()))
        } else {
            Complex64::new(0.0, 0.0)
        }
    })
}

/// Gaussian edge-taper window with σ = 0.4 of the (smaller) lateral width,
/// displaced by `(dist·kx/kz, dist·ky/kz)` so the windowed beam stays
/// centered after propagating `dist` to the camera conjugate plane.
pub fn gaussian_apodization(
    nx: usize,
    ny: usize,
    dx_um: f64,
    dy_um: f64,
    ill: &IlluminationWavevector,
    propagation_distance_um: f64,
) -> Result<Array2<f64>, ForwardError> {
    if ill.kz == 0.0 {
        return Err(ForwardError::GrazingIllumination { led_index: ill.led_index });
    }
    let sigma = 0.4 * (nx as f64 * dx_um).min(ny as f64 * dy_um);
    let xp = propagation_distance_um * ill.kx / ill.kz;
    let yp = propagation_distance_um * ill.ky / ill.kz;
    let xc = (nx / 2) as f64 * dx_um;
    let yc = (ny / 2) as f64 * dy_um;
    Ok(Array2::from_shape_fn((nx, ny), |(i, j)| {
        let rx = i as f64 * dx_um - xc - xp;
        let ry = j as f64 * dy_um - yc - yp;
        (-(rx * rx + ry * ry) / (2.0 * sigma * sigma)).exp()
    }))
}

// ---------------------------------------------------------------------------
// Single-scattering model
// ---------------------------------------------------------------------------

/// Precomputed per-LED pieces of the single-scattering model: the
/// nearest-bin gather from the 3-d spectrum onto the pupil grid, the complex
/// pupil-plane factor (weight × pupil transmission, zero off-aperture), and
/// the unit-amplitude illumination carrier on the camera grid.
#[derive(Debug, Clone)]
pub struct BornLed {
    pub taps: Arc<SampleTaps>,
    pub factor: Arc<Value>,
    pub ramp: Arc<Value>,
    pub ill: IlluminationWavevector,
}

/// Builds the gather plan and pupil-plane factor for one LED. The factor
/// already folds in `pupil`; pass a zero-phase pupil when the phase is to be
/// optimized as a tape node instead.
pub fn born_led_context(
    geom: &SystemGeometry,
    cap: &CapWavevectors,
    ill: &IlluminationWavevector,
    pupil: &Pupil,
) -> Result<BornLed, ForwardError> {
    let (nx, ny, nz) = (geom.nx, geom.ny, geom.nz);
    if pupil.amplitude.dim() != (nx, ny) {
        return Err(ForwardError::ShapeMismatch {
            what: "pupil",
            expected: vec![nx, ny],
            got: pupil.amplitude.shape().to_vec(),
        });
    }
    let dkx = 2.0 * PI / (nx as f64 * geom.dx_um);
    let dky = 2.0 * PI / (ny as f64 * geom.dy_um);
    let dkz = 2.0 * PI / (nz as f64 * geom.dz_um);
    let dz = geom.dz_um;
    let dzf = geom.focus_offset_um;
    let half_thickness = geom.axial_extent_um() / 2.0;
    let amp = 2.0 * PI * dz * (nz as f64).sqrt();

    let mut row_ptr = Vec::with_capacity(nx * ny + 1);
    row_ptr.push(0u32);
    let mut index = Vec::new();
    let mut factor = ArrayD::<Complex64>::zeros(IxDyn(&[nx, ny]));
    for i in 0..nx {
        for j in 0..ny {
            if cap.mask[[i, j]] {
                let qx = cap.kx[[i, j]] - ill.kx;
                let qy = cap.ky[[i, j]] - ill.ky;
                let qz = cap.kz[[i, j]] - ill.kz;
                let mx = (qx / dkx).round() as isize;
                let my = (qy / dky).round() as isize;
                let mz = (qz / dkz).round() as isize;
                let ix = wrap_freq_index(mx, nx).ok_or(ForwardError::FrequencyOutsideGrid {
                    led_index: ill.led_index,
                    axis: 'x',
                })?;
                let iy = wrap_freq_index(my, ny).ok_or(ForwardError::FrequencyOutsideGrid {
                    led_index: ill.led_index,
                    axis: 'y',
                })?;
                let iz = wrap_freq_index(mz, nz).ok_or(ForwardError::FrequencyOutsideGrid {
                    led_index: ill.led_index,
                    axis: 'z',
                })?;
                index.push(((ix * ny + iy) * nz + iz) as u32);
                let w = Complex64::new(0.0, amp / cap.kz[[i, j]])
                    * Complex64::from_polar(1.0, -qz * (dz - half_thickness - dzf));
                factor[[i, j]] = w
                    * Complex64::from_polar(pupil.amplitude[[i, j]], pupil.phase[[i, j]]);
            }
            row_ptr.push(index.len() as u32);
        }
    }
    let n_taps = index.len();
    let taps = SampleTaps {
        out_shape: vec![nx, ny],
        vol_shape: vec![nx, ny, nz],
        row_ptr,
        index,
        weight: vec![1.0; n_taps],
    };
    let ramp = background_field(nx, ny, geom.dx_um, geom.dy_um, (0, 0), 1.0, ill);
    Ok(BornLed {
        taps: Arc::new(taps),
        factor: Arc::new(Value::Complex(factor)),
        ramp: Arc::new(Value::Complex(ramp.into_dyn())),
        ill: *ill,
    })
}

/// Per-LED contexts for every illumination in `ills`.
pub fn born_contexts(
    geom: &SystemGeometry,
    ills: &[IlluminationWavevector],
    pupil: &Pupil,
) -> Result<Vec<BornLed>, ForwardError> {
    let cap = ewald_cap(geom);
    ills.iter().map(|ill| born_led_context(geom, &cap, ill, pupil)).collect()
}

/// Scattered camera-plane field for one LED: gather the spectrum on the
/// shifted sphere, weight, optionally apply an extra pupil-phase node, and
/// inverse-transform to the camera plane.
pub fn born_scattered_field_node(
    tape: &mut TapeGraph,
    spectrum: NodeId,
    led: &BornLed,
    pupil_phase: Option<NodeId>,
) -> NodeId {
    let gathered = tape.sample_weighted(spectrum, led.taps.clone());
    let mut f = tape.mul_const(gathered, led.factor.clone());
    if let Some(phase) = pupil_phase {
        let t = tape.exp_i(phase);
        f = tape.mul(f, t);
    }
    tape.fft2(f, true)
}

/// Background node `u0 · ramp` with `u0` a real scalar node (leaf when the
/// amplitude is optimized).
pub fn background_field_node(tape: &mut TapeGraph, u0: NodeId, led: &BornLed) -> NodeId {
    let ramp = tape.constant_shared(led.ramp.clone());
    tape.mul_scalar_node(u0, ramp)
}

/// `|u_back + u|²`.
pub fn interference_intensity_node(tape: &mut TapeGraph, u_back: NodeId, u: NodeId) -> NodeId {
    let t = tape.add(u_back, u);
    tape.abs_sq(t)
}

/// `|u_back·exp(u/u_back)|²`. The background must be nonzero everywhere
/// (guaranteed for a plane wave with `u0 > 0`).
pub fn ratio_intensity_node(tape: &mut TapeGraph, u_back: NodeId, u: NodeId) -> NodeId {
    let f = ratio_field_node(tape, u_back, u);
    tape.abs_sq(f)
}

/// Phase-sensitive variant of [`interference_intensity_node`]: the complex
/// field itself, with an optional constant path-length phase.
pub fn interference_field_node(
    tape: &mut TapeGraph,
    u_back: NodeId,
    u: NodeId,
    theta_back: f64,
) -> NodeId {
    let mut f = tape.add(u_back, u);
    if theta_back != 0.0 {
        f = tape.scale_complex(f, Complex64::from_polar(1.0, theta_back));
    }
    f
}

/// Phase-sensitive variant of [`ratio_intensity_node`].
pub fn ratio_field_node(tape: &mut TapeGraph, u_back: NodeId, u: NodeId) -> NodeId {
    let r = tape.div(u, u_back);
    let e = tape.exp(r);
    tape.mul(u_back, e)
}

// ---------------------------------------------------------------------------
// Plain (non-tape) image formation helpers
// ---------------------------------------------------------------------------

/// `|u_back + u|²` on plain arrays.
pub fn born_intensity(
    u_back: &Array2<Complex64>,
    u: &Array2<Complex64>,
) -> Result<Array2<f64>, ForwardError> {
    check_same_shape("fields", u_back, u)?;
    Ok(Array2::from_shape_fn(u_back.dim(), |ix| (u_back[ix] + u[ix]).norm_sqr()))
}

/// `|u_back·exp(u/u_back)|²` on plain arrays; errors if any background pixel
/// is exactly zero.
pub fn rytov_intensity(
    u_back: &Array2<Complex64>,
    u: &Array2<Complex64>,
) -> Result<Array2<f64>, ForwardError> {
    check_same_shape("fields", u_back, u)?;
    if u_back.iter().any(|v| *v == Complex64::new(0.0, 0.0)) {
        return Err(ForwardError::ZeroBackground);
    }
    Ok(Array2::from_shape_fn(u_back.dim(), |ix| {
        (u_back[ix] * (u[ix] / u_back[ix]).exp()).norm_sqr()
    }))
}

/// Complex camera fields for the phase-sensitive loss; `theta_back` is a
/// constant path-length phase (0 in all shipped configurations).
pub fn phase_sensitive_born_field(
    u_back: &Array2<Complex64>,
    u: &Array2<Complex64>,
    theta_back: f64,
) -> Result<Array2<Complex64>, ForwardError> {
    check_same_shape("fields", u_back, u)?;
    let rot = Complex64::from_polar(1.0, theta_back);
    Ok(Array2::from_shape_fn(u_back.dim(), |ix| (u_back[ix] + u[ix]) * rot))
}

/// Rytov counterpart of [`phase_sensitive_born_field`].
pub fn phase_sensitive_rytov_field(
    u_back: &Array2<Complex64>,
    u: &Array2<Complex64>,
    theta_back: f64,
) -> Result<Array2<Complex64>, ForwardError> {
    check_same_shape("fields", u_back, u)?;
    if u_back.iter().any(|v| *v == Complex64::new(0.0, 0.0)) {
        return Err(ForwardError::ZeroBackground);
    }
    let rot = Complex64::from_polar(1.0, theta_back);
    Ok(Array2::from_shape_fn(u_back.dim(), |ix| {
        u_back[ix] * rot * (u[ix] / u_back[ix]).exp()
    }))
}

fn check_same_shape(
    what: &'static str,
    a: &Array2<Complex64>,
    b: &Array2<Complex64>,
) -> Result<(), ForwardError> {
    if a.dim() != b.dim() {
        return Err(ForwardError::ShapeMismatch {
            what,
            expected: a.shape().to_vec(),
            got: b.shape().to_vec(),
        });
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Slice-stepping model
// ---------------------------------------------------------------------------

/// Grid-dependent constants of the slice-stepping model: the per-slice
/// propagation filter, the exit-to-camera filter with the pupil folded in,
/// and the contrast-to-phase factor `i·k·δz`.
#[derive(Debug, Clone)]
pub struct MultisliceKernels {
    pub slab: Arc<Value>,
    pub camera_filter: Arc<Value>,
    pub phase_scale: Complex64,
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
}

/// Builds the kernels for an `nx × ny` lateral grid (the full field of view
/// or a patch). `pupil` must match that grid; its phase is folded into the
/// camera filter, so pass a zero-phase pupil when optimizing the phase on
/// the tape.
pub fn multislice_kernels(
    geom: &SystemGeometry,
    nx: usize,
    ny: usize,
    pupil: &Pupil,
) -> Result<MultisliceKernels, ForwardError> {
    if pupil.amplitude.dim() != (nx, ny) {
        return Err(ForwardError::ShapeMismatch {
            what: "pupil",
            expected: vec![nx, ny],
            got: pupil.amplitude.shape().to_vec(),
        });
    }
    let k = geom.k_vacuum();
    let slab = fresnel_kernel(nx, ny, geom.dx_um, geom.dy_um, k, geom.n0, geom.dz_um);
    let to_camera = geom.focus_offset_um - geom.axial_extent_um() / 2.0;
    let final_prop = fresnel_kernel(nx, ny, geom.dx_um, geom.dy_um, k, geom.n0, to_camera);
    let camera_filter = &final_prop * &pupil.transmission();
    Ok(MultisliceKernels {
        slab: Arc::new(Value::Complex(slab.into_dyn())),
        camera_filter: Arc::new(Value::Complex(camera_filter.into_dyn())),
        phase_scale: Complex64::new(0.0, k * geom.dz_um),
        nx,
        ny,
        nz: geom.nz,
    })
}

/// Camera-plane field of the slice-stepping model. `dn` is the complex
/// refractive-index contrast `[nx, ny, nz]`; `u_in` the (optionally
/// apodized) entry-plane field. Slices are traversed in axial order:
/// propagate `δz`, then apply `exp(i·k·δz·δn_r)`; the exit field is carried
/// through the camera filter.
pub fn multislice_field_node(
    tape: &mut TapeGraph,
    dn: NodeId,
    u_in: NodeId,
    kern: &MultisliceKernels,
    pupil_phase: Option<NodeId>,
) -> NodeId {
    let (nx, ny, nz) = (kern.nx, kern.ny, kern.nz);
    let mut u = u_in;
    for r in 0..nz {
        let slab = tape.fft2(u, false);
        let prop = tape.mul_const(slab, kern.slab.clone());
        let back = tape.fft2(prop, true);
        let sl = tape.crop(dn, &[0, 0, r], &[nx, ny, 1]);
        let sl2 = tape.reshape(sl, &[nx, ny]);
        let scaled = tape.scale_complex(sl2, kern.phase_scale);
        let screen = tape.exp(scaled);
        u = tape.mul(back, screen);
    }
    let spec = tape.fft2(u, false);
    let mut filtered = tape.mul_const(spec, kern.camera_filter.clone());
    if let Some(phase) = pupil_phase {
        let t = tape.exp_i(phase);
        filtered = tape.mul(filtered, t);
    }
    tape.fft2(filtered, true)
}

/// `|multislice field|²`.
pub fn multislice_intensity_node(
    tape: &mut TapeGraph,
    dn: NodeId,
    u_in: NodeId,
    kern: &MultisliceKernels,
    pupil_phase: Option<NodeId>,
) -> NodeId {
    let f = multislice_field_node(tape, dn, u_in, kern, pupil_phase);
    tape.abs_sq(f)
}

/// Convenience single-LED evaluation on plain arrays (builds and evaluates a
/// constant graph). `apodize` tapers the entry field with the Gaussian
/// window.
pub fn multislice_intensity(
    geom: &SystemGeometry,
    dn: &Array3<Complex64>,
    ill: &IlluminationWavevector,
    u0: f64,
    pupil: &Pupil,
    apodize: bool,
) -> Result<Array2<f64>, ForwardError> {
    let kern = multislice_kernels(geom, geom.nx, geom.ny, pupil)?;
    let mut tape = TapeGraph::new();
    let dn_node = tape.constant(Value::Complex(dn.to_owned().into_dyn()));
    let entry = entry_field(geom, geom.nx, geom.ny, (0, 0), u0, ill, apodize)?;
    let u_in = tape.constant(Value::Complex(entry.into_dyn()));
    let node = multislice_intensity_node(&mut tape, dn_node, u_in, &kern, None);
    Ok(as_real2(tape.value(node)))
}

/// Entry-plane background field, apodized when requested.
pub fn entry_field(
    geom: &SystemGeometry,
    nx: usize,
    ny: usize,
    offset_px: (usize, usize),
    u0: f64,
    ill: &IlluminationWavevector,
    apodize: bool,
) -> Result<Array2<Complex64>, ForwardError> {
    let mut u = background_field(nx, ny, geom.dx_um, geom.dy_um, offset_px, u0, ill);
    if apodize {
        let dist = geom.focus_offset_um + geom.axial_extent_um() / 2.0;
        let w = gaussian_apodization(nx, ny, geom.dx_um, geom.dy_um, ill, dist)?;
        ndarray::Zip::from(&mut u).and(&w).for_each(|t, &a| *t *= a);
    }
    Ok(u)
}

// ---------------------------------------------------------------------------
// Whole-stack simulation
// ---------------------------------------------------------------------------

/// Predicts camera fields and intensities for every LED of `geom` from a
/// refractive-index volume. Single-scattering models sample the potential
/// spectrum; the slice-stepping model walks `n − n0`. Per-LED work runs in
/// parallel with a deterministic assembly order.
pub fn simulate_stacks(
    geom: &SystemGeometry,
    ri: &Array3<Complex64>,
    model: ForwardModel,
    u0: f64,
    pupil: &Pupil,
    apodize: bool,
) -> Result<(LedStack, FieldStack), ForwardError> {
    let expected = [geom.nx, geom.ny, geom.nz];
    if ri.shape() != expected {
        return Err(ForwardError::ShapeMismatch {
            what: "refractive-index volume",
            expected: expected.to_vec(),
            got: ri.shape().to_vec(),
        });
    }
    let ills = illumination_wavevectors(geom)?;
    let per_led: Vec<Result<(Array2<f64>, Array2<Complex64>), ForwardError>> = match model {
        ForwardModel::Born | ForwardModel::Rytov => {
            let v = scattering_potential_from_ri(ri, geom.n0, geom.wavelength_um);
            let spec = Arc::new(Value::Complex(potential_spectrum(&v).into_dyn()));
            let contexts = born_contexts(geom, &ills, pupil)?;
            parallel::map_ordered(ills.len(), |p| {
                let mut tape = TapeGraph::new();
                let s = tape.constant_shared(spec.clone());
                let u0n = tape.constant(Value::scalar(u0));
                let us = born_scattered_field_node(&mut tape, s, &contexts[p], None);
                let ub = background_field_node(&mut tape, u0n, &contexts[p]);
                let field = match model {
                    ForwardModel::Born => interference_field_node(&mut tape, ub, us, 0.0),
                    _ => ratio_field_node(&mut tape, ub, us),
                };
                let inten = tape.abs_sq(field);
                Ok((as_real2(tape.value(inten)), as_complex2(tape.value(field))))
            })
        }
        ForwardModel::Multislice => {
            let kern = multislice_kernels(geom, geom.nx, geom.ny, pupil)?;
            let dn = Arc::new(Value::Complex(
                ri.mapv(|v| v - geom.n0).into_dyn(),
            ));
            parallel::map_ordered(ills.len(), |p| {
                let mut tape = TapeGraph::new();
                let d = tape.constant_shared(dn.clone());
                let entry = entry_field(geom, geom.nx, geom.ny, (0, 0), u0, &ills[p], apodize)?;
                let u_in = tape.constant(Value::Complex(entry.into_dyn()));
                let field = multislice_field_node(&mut tape, d, u_in, &kern, None);
                let inten = tape.abs_sq(field);
                Ok((as_real2(tape.value(inten)), as_complex2(tape.value(field))))
            })
        }
    };

    let (nx, ny) = (geom.nx, geom.ny);
    let mut images = Array3::zeros((ills.len(), nx, ny));
    let mut fields = Array3::zeros((ills.len(), nx, ny));
    for (p, r) in per_led.into_iter().enumerate() {
        let (img, fld) = r?;
        images.index_axis_mut(ndarray::Axis(0), p).assign(&img);
        fields.index_axis_mut(ndarray::Axis(0), p).assign(&fld);
    }
    Ok((
        LedStack { images, wavevectors: ills.clone() },
        FieldStack { fields, wavevectors: ills },
    ))
}

pub(crate) fn as_real2(v: &Value) -> Array2<f64> {
    v.as_real().to_owned().into_dimensionality().unwrap()
}

pub(crate) fn as_complex2(v: &Value) -> Array2<Complex64> {
    v.as_complex().to_owned().into_dimensionality().unwrap()
}
