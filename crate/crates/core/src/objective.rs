//! Loss assembly: amplitude/field data terms, total-variation and positivity
//! regularizers, and the batched loss/gradient evaluation that drives the
//! reconstruction loop.
//!
//! The evaluation is split across tapes so the (possibly expensive) volume
//! parameterization runs once per iteration: a main tape maps parameters to
//! the model volume and the regularizers, then each LED in the batch gets its
//! own tape that consumes the volume *value* through a shared leaf. Per-LED
//! gradients are accumulated in LED order (bitwise deterministic under any
//! thread count) and injected back into the main tape as seeds.

use crate::forward::{
    self, born_contexts, entry_field, multislice_kernels, BornLed, ForwardError, ForwardModel,
    LedStack, MultisliceKernels, Pupil,
};
use crate::geometry::{illumination_wavevectors, IlluminationWavevector, SystemGeometry};
use dptomo_autodiff::dip::DipNetwork;
use dptomo_autodiff::{parallel, NodeId, TapeGraph, Value};
use ndarray::{Array2, Array3, ArrayD, Axis, IxDyn};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ObjectiveError {
    #[error(transparent)]
    Forward(#[from] ForwardError),
    #[error(transparent)]
    Geometry(#[from] crate::geometry::GeometryError),
    #[error("{what}: expected shape {expected:?}, got {got:?}")]
    ShapeMismatch { what: &'static str, expected: Vec<usize>, got: Vec<usize> },
    #[error("negative intensity at flat index {index}: {value}")]
    NegativeIntensity { index: usize, value: f64 },
    #[error("phase-sensitive loss requested but the data has no fields")]
    MissingFields,
    #[error("LED batch index {0} out of range ({1} LEDs)")]
    BadLedIndex(usize, usize),
    #[error("spatial patching requires the slice-stepping model")]
    PatchUnsupported,
    #[error("pupil-phase optimization is incompatible with spatial patching")]
    PatchWithPupilPhase,
    #[error("patch does not fit: offset {offset:?} + extent {extent} exceeds {nx}x{ny}")]
    PatchOutOfBounds { offset: (usize, usize), extent: usize, nx: usize, ny: usize },
}

/// Regularization weights and model switches.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LossConfig {
    pub lambda_tv: f64,
    pub lambda_pos: f64,
    pub use_dip: bool,
    pub model: ForwardModel,
    pub phase_sensitive: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda_tv: 0.0,
            lambda_pos: 0.0,
            use_dip: false,
            model: ForwardModel::Born,
            phase_sensitive: false,
        }
    }
}

// ---------------------------------------------------------------------------
// Plain loss terms
// ---------------------------------------------------------------------------

/// `(1/M)·Σ(√I_pred − √I_data)²` over all elements; rejects negative
/// intensities in either stack.
pub fn amplitude_mse(pred: &Array3<f64>, data: &Array3<f64>) -> Result<f64, ObjectiveError> {
    if pred.shape() != data.shape() {
        return Err(ObjectiveError::ShapeMismatch {
            what: "intensity stacks",
            expected: pred.shape().to_vec(),
            got: data.shape().to_vec(),
        });
    }
    for (idx, &v) in pred.iter().chain(data.iter()).enumerate() {
        if v < 0.0 {
            return Err(ObjectiveError::NegativeIntensity { index: idx % pred.len(), value: v });
        }
    }
    let m = pred.len() as f64;
    Ok(pred
        .iter()
        .zip(data.iter())
        .map(|(p, d)| (p.sqrt() - d.sqrt()).powi(2))
        .sum::<f64>()
        / m)
}

/// `(1/M)·Σ|f_pred − f_data|²`.
pub fn field_mse(
    pred: &Array3<Complex64>,
    data: &Array3<Complex64>,
) -> Result<f64, ObjectiveError> {
    if pred.shape() != data.shape() {
        return Err(ObjectiveError::ShapeMismatch {
            what: "field stacks",
            expected: pred.shape().to_vec(),
            got: data.shape().to_vec(),
        });
    }
    let m = pred.len() as f64;
    Ok(pred.iter().zip(data.iter()).map(|(p, d)| (p - d).norm_sqr()).sum::<f64>() / m)
}

/// Smoothing constant used inside the square root when TV runs on the tape,
/// so its gradient is defined at zero difference.
pub const TV_EPS: f64 = 1e-12;

/// Isotropic total variation of a complex volume: forward differences with
/// replicate boundaries, applied to the real and imaginary parts separately
/// and summed. The reported value is unsmoothed (a constant volume scores
/// exactly zero); see [`tv_isotropic_smoothed`] for the ε-regularized
/// variant that matches the on-tape gradient path.
pub fn tv_isotropic(s: &Array3<Complex64>) -> f64 {
    tv_isotropic_smoothed(s, 0.0, false)
}

pub fn tv_isotropic_smoothed(s: &Array3<Complex64>, eps: f64, periodic: bool) -> f64 {
    let re = s.mapv(|t| t.re);
    let im = s.mapv(|t| t.im);
    dptomo_autodiff::nn::tv_isotropic_value(re.view(), eps, periodic)
        + dptomo_autodiff::nn::tv_isotropic_value(im.view(), eps, periodic)
}

/// `Σ min(Re{n} − n0, 0)²` — penalizes refractive indices below the medium.
pub fn positivity_penalty(n: &Array3<Complex64>, n0: f64) -> f64 {
    n.iter().map(|t| (t.re - n0).min(0.0).powi(2)).sum()
}

// ---------------------------------------------------------------------------
// Reconstruction state
// ---------------------------------------------------------------------------

/// How the model volume is produced from parameters.
pub enum VolumeParameterization {
    /// Directly optimized voxels: the potential spectrum for the
    /// single-scattering models, the index contrast for the slice-stepping
    /// model.
    Voxel { value: Value },
    /// Generator-network weights; the network output is the spatial volume
    /// (index contrast or potential, per model).
    Dip { net: DipNetwork, weights: Vec<(String, Value)> },
}

/// Everything the optimizer owns.
pub struct ReconstructionState {
    pub geom: SystemGeometry,
    pub cfg: LossConfig,
    pub volume: VolumeParameterization,
    /// Per-LED background amplitudes (real, length `n_led`).
    pub u0: Value,
    pub optimize_u0: bool,
    /// Optional aberration phase on the pupil grid (real `[nx, ny]`).
    pub pupil_phase: Option<Value>,
    pub apodize: bool,
}

impl ReconstructionState {
    /// Ordered mutable views of every optimized parameter; gradient vectors
    /// from [`evaluate_batch`] follow the same order.
    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        match &self.volume {
            VolumeParameterization::Voxel { .. } => names.push("volume".to_string()),
            VolumeParameterization::Dip { weights, .. } => {
                names.extend(weights.iter().map(|(n, _)| n.clone()))
            }
        }
        if self.optimize_u0 {
            names.push("u0".to_string());
        }
        if self.pupil_phase.is_some() {
            names.push("pupil_phase".to_string());
        }
        names
    }

    pub fn params(&self) -> Vec<&Value> {
        let mut out = Vec::new();
        match &self.volume {
            VolumeParameterization::Voxel { value } => out.push(value),
            VolumeParameterization::Dip { weights, .. } => {
                out.extend(weights.iter().map(|(_, v)| v))
            }
        }
        if self.optimize_u0 {
            out.push(&self.u0);
        }
        if let Some(p) = &self.pupil_phase {
            out.push(p);
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Value> {
        let mut out = Vec::new();
        match &mut self.volume {
            VolumeParameterization::Voxel { value } => out.push(value),
            VolumeParameterization::Dip { weights, .. } => {
                out.extend(weights.iter_mut().map(|(_, v)| v))
            }
        }
        if self.optimize_u0 {
            out.push(&mut self.u0);
        }
        if let Some(p) = &mut self.pupil_phase {
            out.push(p);
        }
        out
    }

    /// The current spatial model volume (index contrast for slice-stepping,
    /// potential for the single-scattering models), evaluated without
    /// gradients.
    pub fn spatial_volume(&self) -> Array3<Complex64> {
        let mut tape = TapeGraph::new();
        let b = build_volume(&mut tape, self, None);
        let v = tape.value(b.spatial).as_complex().to_owned();
        v.into_dimensionality().unwrap()
    }

    /// The reconstructed refractive-index volume.
    pub fn ri_volume(&self) -> Array3<Complex64> {
        let s = self.spatial_volume();
        match self.cfg.model {
            ForwardModel::Born | ForwardModel::Rytov => forward::ri_from_scattering_potential(
                &s,
                self.geom.n0,
                self.geom.wavelength_um,
            ),
            ForwardModel::Multislice => s.mapv(|t| t + self.geom.n0),
        }
    }
}

// ---------------------------------------------------------------------------
// Prepared data and model contexts
// ---------------------------------------------------------------------------

/// Measurement stacks converted to per-LED tape constants. Amplitudes hold
/// `√I`; for the slice-stepping model with apodization the Gaussian window
/// is folded into the intensity first and the windows are kept for patch
/// evaluation.
pub struct PreparedData {
    pub sqrt_images: Vec<Arc<Value>>,
    pub fields: Option<Vec<Arc<Value>>>,
    pub wavevectors: Vec<IlluminationWavevector>,
    pub nx: usize,
    pub ny: usize,
    raw_images: Array3<f64>,
}

impl PreparedData {
    pub fn new(
        geom: &SystemGeometry,
        data: &LedStack,
        fields: Option<&Array3<Complex64>>,
        cfg: &LossConfig,
        apodize: bool,
    ) -> Result<PreparedData, ObjectiveError> {
        let shape = data.images.shape();
        if shape[1] != geom.nx || shape[2] != geom.ny {
            return Err(ObjectiveError::ShapeMismatch {
                what: "image stack",
                expected: vec![data.wavevectors.len(), geom.nx, geom.ny],
                got: shape.to_vec(),
            });
        }
        if let Some((idx, &v)) = data.images.iter().enumerate().find(|(_, v)| **v < 0.0) {
            return Err(ObjectiveError::NegativeIntensity { index: idx, value: v });
        }
        let window_data = cfg.model == ForwardModel::Multislice && apodize;
        let mut sqrt_images = Vec::with_capacity(shape[0]);
        for p in 0..shape[0] {
            let img = data.images.index_axis(Axis(0), p);
            let mut amp = img.mapv(f64::sqrt);
            if window_data {
                let dist = geom.focus_offset_um + geom.axial_extent_um() / 2.0;
                let w = forward::gaussian_apodization(
                    geom.nx,
                    geom.ny,
                    geom.dx_um,
                    geom.dy_um,
                    &data.wavevectors[p],
                    dist,
                )?;
                // Data gets the window to the first power; the prediction is
                // already windowed through its entry field.
                amp.zip_mut_with(&w, |a, &ww| *a *= ww.sqrt());
            }
            sqrt_images.push(Arc::new(Value::Real(amp.into_dyn())));
        }
        let fields = match (cfg.phase_sensitive, fields) {
            (false, _) => None,
            (true, None) => return Err(ObjectiveError::MissingFields),
            (true, Some(f)) => {
                if f.shape() != shape {
                    return Err(ObjectiveError::ShapeMismatch {
                        what: "field stack",
                        expected: shape.to_vec(),
                        got: f.shape().to_vec(),
                    });
                }
                Some(
                    (0..shape[0])
                        .map(|p| {
                            Arc::new(Value::Complex(
                                f.index_axis(Axis(0), p).to_owned().into_dyn(),
                            ))
                        })
                        .collect(),
                )
            }
        };
        Ok(PreparedData {
            sqrt_images,
            fields,
            wavevectors: data.wavevectors.clone(),
            nx: geom.nx,
            ny: geom.ny,
            raw_images: data.images.clone(),
        })
    }

    pub fn n_led(&self) -> usize {
        self.sqrt_images.len()
    }

    /// Mean measured amplitude per LED — the background-amplitude
    /// initialization.
    pub fn mean_amplitudes(&self) -> Vec<f64> {
        (0..self.n_led())
            .map(|p| {
                let img = self.raw_images.index_axis(Axis(0), p);
                img.iter().map(|v| v.sqrt()).sum::<f64>() / img.len() as f64
            })
            .collect()
    }
}

/// Cached per-model forward machinery for the full field of view.
pub enum ModelContexts {
    SingleScattering { per_led: Vec<BornLed> },
    SliceStepping { kernels: MultisliceKernels },
}

impl ModelContexts {
    pub fn new(
        geom: &SystemGeometry,
        cfg: &LossConfig,
        pupil: &Pupil,
        optimize_pupil_phase: bool,
    ) -> Result<ModelContexts, ObjectiveError> {
        // When the phase is optimized on-tape, fold only the amplitude here.
        let folded = if optimize_pupil_phase {
            Pupil { amplitude: pupil.amplitude.clone(), phase: Array2::zeros(pupil.amplitude.raw_dim()) }
        } else {
            pupil.clone()
        };
        match cfg.model {
            ForwardModel::Born | ForwardModel::Rytov => {
                let ills = illumination_wavevectors(geom)?;
                Ok(ModelContexts::SingleScattering {
                    per_led: born_contexts(geom, &ills, &folded)?,
                })
            }
            ForwardModel::Multislice => Ok(ModelContexts::SliceStepping {
                kernels: multislice_kernels(geom, geom.nx, geom.ny, &folded)?,
            }),
        }
    }
}

/// A lateral crop evaluated in place of the full field of view
/// (slice-stepping model only).
#[derive(Debug, Clone, Copy)]
pub struct PatchWindow {
    pub offset: (usize, usize),
    pub extent: usize,
}

// ---------------------------------------------------------------------------
// Batched loss + gradient evaluation
// ---------------------------------------------------------------------------

pub struct LossTerms {
    pub data_term: f64,
    pub tv: f64,
    pub positivity: f64,
    pub total: f64,
}

pub struct BatchEvaluation {
    pub loss: LossTerms,
    /// Gradients aligned with [`ReconstructionState::params`].
    pub grads: Vec<Value>,
}

struct VolumeBuild {
    /// Node holding the spatial model volume (full FOV or patch).
    spatial: NodeId,
    /// Node the per-LED gradients seed (spectrum for single-scattering,
    /// spatial for slice-stepping).
    fed: NodeId,
    /// Leaf ids of the tape parameters, aligned with the state's volume
    /// params.
    leaves: Vec<NodeId>,
}

/// Builds the main tape: parameters → spatial volume (optionally cropped to
/// a patch) → the node consumed by the per-LED tapes.
fn build_volume(
    tape: &mut TapeGraph,
    state: &ReconstructionState,
    patch: Option<PatchWindow>,
) -> VolumeBuild {
    let spectrum_model = matches!(state.cfg.model, ForwardModel::Born | ForwardModel::Rytov);
    let (spatial, leaves) = match &state.volume {
        VolumeParameterization::Voxel { value } => {
            let leaf = tape.leaf(value.clone());
            let spatial = if spectrum_model { tape.fft3(leaf, true) } else { leaf };
            (spatial, vec![leaf])
        }
        VolumeParameterization::Dip { net, weights } => {
            let ids: Vec<NodeId> = weights.iter().map(|(_, v)| tape.leaf(v.clone())).collect();
            let spatial = match patch {
                None => net.generate(tape, &ids),
                Some(w) => {
                    let pz = net.padded_shape()[2];
                    net.generate_region(
                        tape,
                        &ids,
                        [w.offset.0, w.offset.1, 0],
                        [w.extent, w.extent, pz],
                        true,
                    )
                }
            };
            (spatial, ids)
        }
    };
    // Voxel path crops after the fact; the generator already produced the
    // patch directly.
    let spatial = match (patch, &state.volume) {
        (Some(w), VolumeParameterization::Voxel { .. }) => {
            let nz = state.geom.nz;
            tape.crop(spatial, &[w.offset.0, w.offset.1, 0], &[w.extent, w.extent, nz])
        }
        _ => spatial,
    };
    let fed = if spectrum_model {
        debug_assert!(patch.is_none());
        match &state.volume {
            // For directly-optimized spectra the leaf is already in the
            // frequency domain; feed it straight through.
            VolumeParameterization::Voxel { .. } => leaves[0],
            VolumeParameterization::Dip { .. } => tape.fft3(spatial, false),
        }
    } else {
        spatial
    };
    VolumeBuild { spatial, fed, leaves }
}

/// Regularizer chain on the spatial volume; returns (tv, positivity) nodes.
fn regularizer_nodes(
    tape: &mut TapeGraph,
    state: &ReconstructionState,
    spatial: NodeId,
) -> (NodeId, NodeId) {
    let re = tape.re(spatial);
    let im = tape.im(spatial);
    let tv_re = tape.tv_isotropic(re, TV_EPS, false);
    let tv_im = tape.tv_isotropic(im, TV_EPS, false);
    let tv = tape.add(tv_re, tv_im);

    // Positivity measures Re{n} − n0; map the model volume to n first.
    let deficit = match state.cfg.model {
        ForwardModel::Born | ForwardModel::Rytov => {
            let k = state.geom.k_vacuum();
            let v_scaled = tape.scale(spatial, 4.0 * PI / (k * k));
            let n_sq = tape.add_scalar(v_scaled, state.geom.n0 * state.geom.n0);
            let n = tape.sqrt(n_sq);
            let n_re = tape.re(n);
            tape.add_scalar(n_re, -state.geom.n0)
        }
        ForwardModel::Multislice => tape.re(spatial),
    };
    let neg = tape.neg(deficit);
    let below = tape.leaky_relu(neg, 0.0);
    let sq = tape.mul(below, below);
    let pos = tape.sum(sq);
    (tv, pos)
}

/// One loss/gradient evaluation over an LED batch.
///
/// `patch` restricts the evaluation to a lateral window (slice-stepping
/// model only): the volume, entry fields, pupil grid and data are all
/// cropped consistently, and gradients flow back to the full parameters.
pub fn evaluate_batch(
    state: &ReconstructionState,
    contexts: &ModelContexts,
    data: &PreparedData,
    batch: &[usize],
    patch: Option<PatchWindow>,
) -> Result<BatchEvaluation, ObjectiveError> {
    for &p in batch {
        if p >= data.n_led() {
            return Err(ObjectiveError::BadLedIndex(p, data.n_led()));
        }
    }
    if patch.is_some() && state.cfg.model != ForwardModel::Multislice {
        return Err(ObjectiveError::PatchUnsupported);
    }
    if patch.is_some() && state.pupil_phase.is_some() {
        return Err(ObjectiveError::PatchWithPupilPhase);
    }
    if let Some(w) = patch {
        if w.offset.0 + w.extent > data.nx || w.offset.1 + w.extent > data.ny {
            return Err(ObjectiveError::PatchOutOfBounds {
                offset: w.offset,
                extent: w.extent,
                nx: data.nx,
                ny: data.ny,
            });
        }
    }

    let mut tape = TapeGraph::new();
    let build = build_volume(&mut tape, state, patch);
    let (tv_node, pos_node) = regularizer_nodes(&mut tape, state, build.spatial);
    let fed_value = tape.value_arc(build.fed);

    // Patch-specific machinery (slice-stepping only): the propagation and
    // camera kernels are rebuilt on the patch grid with the ideal pupil.
    let patch_kernels = match (patch, contexts) {
        (Some(w), ModelContexts::SliceStepping { .. }) => {
            let p = Pupil::ideal_on(&state.geom, w.extent, w.extent);
            Some(multislice_kernels(&state.geom, w.extent, w.extent, &p)?)
        }
        _ => None,
    };

    let u0_all = state.u0.as_real();
    let m_batch = {
        let (px, py) = patch.map(|w| (w.extent, w.extent)).unwrap_or((data.nx, data.ny));
        (batch.len() * px * py) as f64
    };

    struct LedResult {
        loss: f64,
        volume_grad: Option<Value>,
        u0_grad: f64,
        pupil_grad: Option<Value>,
    }

    let per_led: Vec<Result<LedResult, ObjectiveError>> =
        parallel::map_ordered(batch.len(), |bi| {
            let p = batch[bi];
            let mut lt = TapeGraph::new();
            let vol = lt.leaf_shared(fed_value.clone());
            let u0_leaf = lt.leaf(Value::scalar(u0_all[[p]]));
            let pupil_leaf = state.pupil_phase.as_ref().map(|ph| lt.leaf(ph.clone()));

            let field = match contexts {
                ModelContexts::SingleScattering { per_led } => {
                    let led = &per_led[p];
                    let us =
                        forward::born_scattered_field_node(&mut lt, vol, led, pupil_leaf);
                    let ub = forward::background_field_node(&mut lt, u0_leaf, led);
                    match state.cfg.model {
                        ForwardModel::Born => forward::interference_field_node(&mut lt, ub, us, 0.0),
                        _ => forward::ratio_field_node(&mut lt, ub, us),
                    }
                }
                ModelContexts::SliceStepping { kernels } => {
                    let kern = patch_kernels.as_ref().unwrap_or(kernels);
                    let (nx, ny) = (kern.nx, kern.ny);
                    let off = patch.map(|w| w.offset).unwrap_or((0, 0));
                    let entry = entry_field(
                        &state.geom,
                        nx,
                        ny,
                        off,
                        1.0,
                        &data.wavevectors[p],
                        state.apodize,
                    )?;
                    let entry_node = lt.constant(Value::Complex(entry.into_dyn()));
                    let u_in = lt.mul_scalar_node(u0_leaf, entry_node);
                    forward::multislice_field_node(&mut lt, vol, u_in, kern, pupil_leaf)
                }
            };

            // Data term for this LED.
            let e_p = if state.cfg.phase_sensitive {
                let f_data = data.fields.as_ref().unwrap()[p].clone();
                let f_data = crop_const(&f_data, patch);
                let target = lt.constant_shared(f_data);
                let diff = lt.sub(field, target);
                let sq = lt.abs_sq(diff);
                lt.sum(sq)
            } else {
                let inten = lt.abs_sq(field);
                let amp = lt.sqrt(inten);
                let target = crop_const(&data.sqrt_images[p], patch);
                let target = lt.constant_shared(target);
                let diff = lt.sub(amp, target);
                let sq = lt.mul(diff, diff);
                lt.sum(sq)
            };

            let seed = Value::scalar(1.0 / m_batch);
            let mut grads = lt.backward_seeded(vec![(e_p, seed)]);
            Ok(LedResult {
                loss: lt.value(e_p).scalar_value() / m_batch,
                volume_grad: grads.take(vol),
                u0_grad: grads.take(u0_leaf).map(|g| g.scalar_value()).unwrap_or(0.0),
                pupil_grad: pupil_leaf.and_then(|id| grads.take(id)),
            })
        });

    // Fixed-order accumulation across the batch.
    let mut data_term = 0.0;
    let mut fed_grad = fed_value.zeros_like();
    let mut u0_grad = ArrayD::<f64>::zeros(IxDyn(&[data.n_led()]));
    let mut pupil_grad_acc: Option<Value> = state.pupil_phase.as_ref().map(Value::zeros_like);
    for (bi, r) in per_led.into_iter().enumerate() {
        let r = r?;
        data_term += r.loss;
        if let Some(g) = r.volume_grad {
            fed_grad.add_assign_value(&g);
        }
        u0_grad[[batch[bi]]] = r.u0_grad;
        if let (Some(acc), Some(g)) = (pupil_grad_acc.as_mut(), r.pupil_grad) {
            acc.add_assign_value(&g);
        }
    }

    // Pull the data-term gradient through the volume build together with the
    // regularizers.
    let mut seeds = vec![(build.fed, fed_grad)];
    if state.cfg.lambda_tv > 0.0 {
        seeds.push((tv_node, Value::scalar(state.cfg.lambda_tv)));
    }
    if state.cfg.lambda_pos > 0.0 {
        seeds.push((pos_node, Value::scalar(state.cfg.lambda_pos)));
    }
    let mut main_grads = tape.backward_seeded(seeds);

    let mut grads = Vec::new();
    for leaf in &build.leaves {
        grads.push(match main_grads.take(*leaf) {
            Some(g) => g,
            None => tape.value(*leaf).zeros_like(),
        });
    }
    if state.optimize_u0 {
        grads.push(Value::Real(u0_grad));
    }
    if let Some(phase) = &state.pupil_phase {
        grads.push(pupil_grad_acc.unwrap_or_else(|| phase.zeros_like()));
    }

    let tv = tape.value(tv_node).scalar_value();
    let positivity = tape.value(pos_node).scalar_value();
    let total = data_term + state.cfg.lambda_tv * tv + state.cfg.lambda_pos * positivity;
    Ok(BatchEvaluation {
        loss: LossTerms { data_term, tv, positivity, total },
        grads,
    })
}

/// Total loss on plain arrays (used by tests and reports): data term through
/// the selected forward model plus weighted regularizers.
pub fn total_loss(
    state: &ReconstructionState,
    contexts: &ModelContexts,
    data: &PreparedData,
) -> Result<f64, ObjectiveError> {
    let batch: Vec<usize> = (0..data.n_led()).collect();
    let eval = evaluate_batch(state, contexts, data, &batch, None)?;
    Ok(eval.loss.total)
}

fn crop_const(v: &Arc<Value>, patch: Option<PatchWindow>) -> Arc<Value> {
    match patch {
        None => v.clone(),
        Some(w) => {
            let out = match &**v {
                Value::Real(a) => {
                    let a2 = a.view().into_dimensionality::<ndarray::Ix2>().unwrap();
                    Value::Real(
                        a2.slice(ndarray::s![
                            w.offset.0..w.offset.0 + w.extent,
                            w.offset.1..w.offset.1 + w.extent
                        ])
                        .to_owned()
                        .into_dyn(),
                    )
                }
                Value::Complex(a) => {
                    let a2 = a.view().into_dimensionality::<ndarray::Ix2>().unwrap();
                    Value::Complex(
                        a2.slice(ndarray::s![
                            w.offset.0..w.offset.0 + w.extent,
                            w.offset.1..w.offset.1 + w.extent
                        ])
                        .to_owned()
                        .into_dyn(),
                    )
                }
            };
            Arc::new(out)
        }
    }
}
