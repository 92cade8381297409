//! The reconstruction driver: Adam over the model parameters, LED batching
//! with epoch reshuffling, spatial patching with stochastic stitching, and a
//! divergence guard that restores the last checkpoint and anneals the
//! learning rate when the loss spikes.
//!
//! Determinism: a single seeded generator drives every random draw (noise
//! seed and weight init for the generator network, epoch shuffles, patch
//! offsets) in a fixed documented order, and all gradient reductions happen
//! in LED order, so a run is bitwise reproducible for a fixed seed and any
//! thread count.

use crate::forward::{ForwardModel, LedStack, Pupil};
use crate::geometry::SystemGeometry;
use crate::objective::{
    evaluate_batch, LossConfig, ModelContexts, ObjectiveError, PatchWindow, PreparedData,
    ReconstructionState, VolumeParameterization,
};
use dptomo_autodiff::dip::{DipConfig, DipError, DipNetwork};
use dptomo_autodiff::{TapeGraph, Value};
use ndarray::{Array1, Array3};
use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OptimError {
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Dip(#[from] DipError),
    #[error("non-finite gradient in parameter {param} at dof {dof}")]
    NonFiniteGradient { param: usize, dof: usize },
    #[error(
        "diverged at iteration {iteration}: loss spiked past guard recovery \
         budget ({restores} restores, last learning rate {alpha:.3e})"
    )]
    Diverged { iteration: usize, restores: u32, alpha: f64 },
    #[error("invalid reconstruction setup: {0}")]
    BadConfig(String),
    #[error("stitching left {voxels} voxels with zero accumulated weight")]
    InsufficientCoverage { voxels: usize },
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AdamConfig {
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    /// Default step size for direct voxel parameterizations.
    pub fn voxel() -> Self {
        AdamConfig { alpha: 1e-2, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    /// Smaller step size for generator-network weights.
    pub fn dip() -> Self {
        AdamConfig { alpha: 1e-3, ..Self::voxel() }
    }
}

/// Moment estimates over the flattened real degrees of freedom of every
/// parameter (complex tensors contribute two per element).
#[derive(Debug, Clone)]
pub struct AdamState {
    pub cfg: AdamConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(cfg: AdamConfig, params: &[&Value]) -> Self {
        AdamState {
            cfg,
            step: 0,
            m: params.iter().map(|p| vec![0.0; p.dof_count()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.dof_count()]).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One bias-corrected update. Validates every gradient before touching
    /// any parameter, so a non-finite gradient leaves the state unchanged.
    pub fn step(&mut self, params: &mut [&mut Value], grads: &[Value]) -> Result<(), OptimError> {
        assert_eq!(params.len(), grads.len(), "parameter/gradient count mismatch");
        for (pi, (p, g)) in params.iter().zip(grads).enumerate() {
            assert_eq!(p.shape(), g.shape(), "gradient shape mismatch in parameter {pi}");
            for d in 0..g.dof_count() {
                if !g.dof(d).is_finite() {
                    return Err(OptimError::NonFiniteGradient { param: pi, dof: d });
                }
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c = self.cfg;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        for (pi, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[pi], &mut self.v[pi]);
            for d in 0..g.dof_count() {
                let gd = g.dof(d);
                m[d] = c.beta1 * m[d] + (1.0 - c.beta1) * gd;
                v[d] = c.beta2 * v[d] + (1.0 - c.beta2) * gd * gd;
                let mh = m[d] / bc1;
                let vh = v[d] / bc2;
                let x = p.dof(d) - c.alpha * mh / (vh.sqrt() + c.eps);
                p.set_dof(d, x);
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Divergence guard
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct GuardConfig {
    /// Rolling-mean window length (iterations).
    pub window: usize,
    /// Trigger when `loss > ratio * mean(window)`.
    pub ratio: f64,
    /// Checkpoint refresh cadence (accepted iterations).
    pub checkpoint_every: u64,
    /// Learning-rate multiplier applied on every restore.
    pub anneal: f64,
    /// Restores allowed before the run is declared divergent.
    pub max_restores: u32,
    /// Losses at or below this value never count as spikes. Near machine
    /// precision the ratio test compares rounding jitter against rounding
    /// jitter and fires on runs that have simply finished converging.
    pub floor: f64,
}

impl Default for GuardConfig {
    fn default() -> Self {
        GuardConfig {
            window: 10,
            ratio: 3.0,
            checkpoint_every: 50,
            anneal: 0.9,
            max_restores: 20,
            floor: 1e-20,
        }
    }
}

struct Checkpoint {
    params: Vec<Value>,
    adam: AdamState,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GuardAction {
    Continue,
    Restored,
}

/// Loss watchdog. The window only ever holds accepted losses — a spike that
/// triggers a restore is not pushed, so one bad iteration cannot poison the
/// baseline it is judged against.
pub struct GuardState {
    pub cfg: GuardConfig,
    window: VecDeque<f64>,
    restores: u32,
    checkpoint: Option<Checkpoint>,
}

impl GuardState {
    pub fn new(cfg: GuardConfig) -> Self {
        assert!(cfg.window >= 1, "guard window must be at least 1");
        assert!(cfg.anneal > 0.0 && cfg.anneal < 1.0, "anneal factor must lie in (0,1)");
        GuardState { cfg, window: VecDeque::new(), restores: 0, checkpoint: None }
    }

    pub fn restores(&self) -> u32 {
        self.restores
    }

    /// Records the current parameters and optimizer moments as the restore
    /// target.
    pub fn snapshot(&mut self, params: &[&Value], adam: &AdamState) {
        self.checkpoint = Some(Checkpoint {
            params: params.iter().map(|p| (*p).clone()).collect(),
            adam: adam.clone(),
        });
    }

    /// Judges one loss value. On a spike (or non-finite loss) the parameters
    /// and moments are restored bitwise from the checkpoint and the learning
    /// rate is annealed; otherwise the loss joins the rolling window.
    pub fn observe(
        &mut self,
        iteration: usize,
        loss: f64,
        params: &mut [&mut Value],
        adam: &mut AdamState,
    ) -> Result<GuardAction, OptimError> {
        let spike = !loss.is_finite()
            || (loss > self.cfg.floor && self.window.len() >= self.cfg.window && {
                let mean = self.window.iter().sum::<f64>() / self.window.len() as f64;
                loss > self.cfg.ratio * mean
            });
        if !spike {
            if self.window.len() == self.cfg.window {
                self.window.pop_front();
            }
            self.window.push_back(loss);
            return Ok(GuardAction::Continue);
        }
        self.restores += 1;
        if self.restores > self.cfg.max_restores {
            return Err(OptimError::Diverged {
                iteration,
                restores: self.restores,
                alpha: adam.cfg.alpha,
            });
        }
        let cp = self
            .checkpoint
            .as_mut()
            .expect("guard observed a loss before any snapshot was taken");
        // Anneal the checkpointed rate too: repeated spikes from the same
        // checkpoint keep shrinking the step instead of resetting it.
        cp.adam.cfg.alpha *= self.cfg.anneal;
        for (p, saved) in params.iter_mut().zip(&cp.params) {
            **p = saved.clone();
        }
        *adam = cp.adam.clone();
        Ok(GuardAction::Restored)
    }
}

// ---------------------------------------------------------------------------
// Batching and patching
// ---------------------------------------------------------------------------

/// Shuffles the LED indices and cuts them into consecutive batches. Each
/// batch is sorted so the gradient accumulation order (and therefore the
/// result, bitwise) is independent of the shuffle; with `batch_size >=
/// n_led` this degenerates to one identity batch regardless of the seed.
pub fn led_batches<R: Rng>(n_led: usize, batch_size: usize, rng: &mut R) -> Vec<Vec<usize>> {
    assert!(batch_size >= 1, "batch size must be at least 1");
    let mut idx: Vec<usize> = (0..n_led).collect();
    idx.shuffle(rng);
    idx.chunks(batch_size.min(n_led.max(1)))
        .map(|c| {
            let mut b = c.to_vec();
            b.sort_unstable();
            b
        })
        .collect()
}

/// Spatial-patching schedule: per-iteration random crops during training and
/// the patch-averaging pass that assembles the final volume.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PatchPlan {
    /// Lateral patch extent in pixels (patches are square).
    pub extent: usize,
    /// Margin stripped from patch edges that cut through the interior
    /// before stitching.
    pub depad: usize,
    /// Number of random patches averaged by [`stochastic_stitch`].
    pub stitch_count: usize,
}

impl PatchPlan {
    pub fn new(extent: usize) -> Self {
        PatchPlan { extent, depad: extent / 8, stitch_count: 1000 }
    }
}

/// Uniform draw over all lateral offsets keeping the patch inside the field
/// of view.
pub fn draw_patch_offset<R: Rng>(
    rng: &mut R,
    nx: usize,
    ny: usize,
    extent: usize,
) -> Result<(usize, usize), OptimError> {
    if extent == 0 || extent > nx || extent > ny {
        return Err(OptimError::BadConfig(format!(
            "patch extent {extent} does not fit a {nx}x{ny} field of view"
        )));
    }
    let ox = rng.random_range(0..=nx - extent);
    let oy = rng.random_range(0..=ny - extent);
    Ok((ox, oy))
}

/// Cosine ramp from (almost) zero at a cut edge up to one over `taper`
/// pixels; edges flush with the field-of-view boundary keep weight one all
/// the way out.
fn stitch_weights_1d(len: usize, taper: usize, cut_lo: bool, cut_hi: bool) -> Vec<f64> {
    let mut w = vec![1.0; len];
    let t = taper.min(len / 2);
    for u in 0..t {
        let ramp = 0.5 * (1.0 - (std::f64::consts::PI * (u as f64 + 0.5) / t as f64).cos());
        if cut_lo {
            w[u] *= ramp;
        }
        if cut_hi {
            w[len - 1 - u] *= ramp;
        }
    }
    w
}

/// Extracts the spatial model volume over one lateral window.
fn patch_volume(
    state: &ReconstructionState,
    offset: (usize, usize),
    extent: usize,
) -> Array3<Complex64> {
    match &state.volume {
        VolumeParameterization::Dip { net, weights } => {
            let mut tape = TapeGraph::new();
            let ids: Vec<_> = weights.iter().map(|(_, v)| tape.leaf(v.clone())).collect();
            let pz = net.padded_shape()[2];
            let node = net.generate_region(
                &mut tape,
                &ids,
                [offset.0, offset.1, 0],
                [extent, extent, pz],
                true,
            );
            let v = tape.value(node).as_complex().to_owned();
            v.into_dimensionality().unwrap()
        }
        VolumeParameterization::Voxel { .. } => {
            let full = state.spatial_volume();
            full.slice(ndarray::s![
                offset.0..offset.0 + extent,
                offset.1..offset.1 + extent,
                ..
            ])
            .to_owned()
        }
    }
}

/// Assembles the full-FOV volume by averaging `plan.stitch_count` randomly
/// placed patches. Each patch is depadded on sides that cut through the
/// interior, weighted with a cosine taper toward those cut edges, and
/// accumulated; the result is the weighted mean per voxel. A patch spanning
/// the whole field of view keeps weight one everywhere, so a single such
/// patch passes through unchanged.
pub fn stochastic_stitch<R: Rng>(
    state: &ReconstructionState,
    plan: &PatchPlan,
    rng: &mut R,
) -> Result<Array3<Complex64>, OptimError> {
    let [nx, ny, _] = state.spatial_shape();
    if plan.stitch_count == 0 {
        return Err(OptimError::BadConfig("stitch count must be at least 1".into()));
    }
    let offsets: Vec<(usize, usize)> = (0..plan.stitch_count)
        .map(|_| draw_patch_offset(rng, nx, ny, plan.extent))
        .collect::<Result<_, _>>()?;
    stitch_at(state, plan, &offsets)
}

/// The accumulation half of [`stochastic_stitch`] with externally chosen
/// patch offsets; the result depends on the offset multiset, not its order
/// (up to floating-point rounding).
pub fn stitch_at(
    state: &ReconstructionState,
    plan: &PatchPlan,
    offsets: &[(usize, usize)],
) -> Result<Array3<Complex64>, OptimError> {
    let [nx, ny, nz] = state.spatial_shape();
    let e = plan.extent;
    if let VolumeParameterization::Dip { net, .. } = &state.volume {
        if e % net.alignment() != 0 {
            return Err(OptimError::BadConfig(format!(
                "patch extent {e} must be a multiple of the generator alignment {}",
                net.alignment()
            )));
        }
    }

    let mut acc = Array3::<Complex64>::zeros((nx, ny, nz));
    let mut wsum = Array3::<f64>::zeros((nx, ny, nz));
    for &(ox, oy) in offsets {
        if ox + e > nx || oy + e > ny {
            return Err(OptimError::BadConfig(format!(
                "patch at ({ox},{oy}) with extent {e} leaves the {nx}x{ny} field of view"
            )));
        }
        let patch = patch_volume(state, (ox, oy), e);
        let pz = patch.shape()[2];
        let (cut_x_lo, cut_x_hi) = (ox > 0, ox + e < nx);
        let (cut_y_lo, cut_y_hi) = (oy > 0, oy + e < ny);
        let dx_lo = if cut_x_lo { plan.depad } else { 0 };
        let dx_hi = if cut_x_hi { plan.depad } else { 0 };
        let dy_lo = if cut_y_lo { plan.depad } else { 0 };
        let dy_hi = if cut_y_hi { plan.depad } else { 0 };
        if dx_lo + dx_hi >= e || dy_lo + dy_hi >= e {
            return Err(OptimError::BadConfig(format!(
                "depad margin {} consumes the whole {e}-pixel patch",
                plan.depad
            )));
        }
        let kept_x = e - dx_lo - dx_hi;
        let kept_y = e - dy_lo - dy_hi;
        let wx = stitch_weights_1d(kept_x, plan.depad, cut_x_lo, cut_x_hi);
        let wy = stitch_weights_1d(kept_y, plan.depad, cut_y_lo, cut_y_hi);
        for ix in 0..kept_x {
            for iy in 0..kept_y {
                let w = wx[ix] * wy[iy];
                let (gx, gy) = (ox + dx_lo + ix, oy + dy_lo + iy);
                for iz in 0..pz {
                    acc[[gx, gy, iz]] += patch[[dx_lo + ix, dy_lo + iy, iz]] * w;
                    wsum[[gx, gy, iz]] += w;
                }
            }
        }
    }

    let uncovered = wsum.iter().filter(|&&w| w == 0.0).count();
    if uncovered > 0 {
        return Err(OptimError::InsufficientCoverage { voxels: uncovered });
    }
    Ok(Array3::from_shape_fn((nx, ny, nz), |ix| acc[ix] / wsum[ix]))
}

// ---------------------------------------------------------------------------
// Reconstruction driver
// ---------------------------------------------------------------------------

/// Volume parameterization requested for a run.
#[derive(Debug, Clone)]
pub enum PriorChoice {
    Voxel,
    Dip(DipConfig),
}

pub struct ReconstructOptions {
    pub adam: AdamConfig,
    pub guard: GuardConfig,
    pub iterations: usize,
    /// LEDs per optimization step; `None` runs full batches.
    pub batch_leds: Option<usize>,
    pub patch: Option<PatchPlan>,
    pub prior: PriorChoice,
    pub seed: u64,
    pub optimize_u0: bool,
    pub optimize_pupil_phase: bool,
    /// Gaussian entry-window for the slice-stepping model.
    pub apodize: bool,
    /// Invoke the checkpoint callback every this many iterations.
    pub emit_every: Option<usize>,
}

impl ReconstructOptions {
    pub fn new(prior: PriorChoice, iterations: usize, seed: u64) -> Self {
        let adam = match prior {
            PriorChoice::Voxel => AdamConfig::voxel(),
            PriorChoice::Dip(_) => AdamConfig::dip(),
        };
        ReconstructOptions {
            adam,
            guard: GuardConfig::default(),
            iterations,
            batch_leds: None,
            patch: None,
            prior,
            seed,
            optimize_u0: true,
            optimize_pupil_phase: false,
            apodize: true,
            emit_every: None,
        }
    }
}

/// One row of the loss trace.
#[derive(Debug, Clone, Serialize)]
pub struct TraceRecord {
    pub iteration: usize,
    pub total: f64,
    pub data_term: f64,
    pub tv: f64,
    pub positivity: f64,
    pub alpha: f64,
    pub restored: bool,
}

pub struct Reconstruction {
    /// Refractive-index volume (stitched when patch training was active).
    pub ri: Array3<Complex64>,
    pub state: ReconstructionState,
    pub trace: Vec<TraceRecord>,
    pub restores: u32,
}

fn validate_options(
    geom: &SystemGeometry,
    cfg: &LossConfig,
    opts: &ReconstructOptions,
) -> Result<(), OptimError> {
    if opts.iterations == 0 {
        return Err(OptimError::BadConfig("iteration count must be at least 1".into()));
    }
    if let Some(b) = opts.batch_leds {
        if b == 0 {
            return Err(OptimError::BadConfig("LED batch size must be at least 1".into()));
        }
    }
    if let Some(plan) = &opts.patch {
        if cfg.model != ForwardModel::Multislice {
            return Err(OptimError::BadConfig(
                "spatial patching is only defined for the slice-stepping model".into(),
            ));
        }
        if plan.extent == 0 || plan.extent > geom.nx || plan.extent > geom.ny {
            return Err(OptimError::BadConfig(format!(
                "patch extent {} does not fit the {}x{} field of view",
                plan.extent, geom.nx, geom.ny
            )));
        }
        if opts.optimize_pupil_phase {
            return Err(OptimError::BadConfig(
                "pupil-phase optimization is incompatible with spatial patching".into(),
            ));
        }
    }
    if let PriorChoice::Dip(dip) = &opts.prior {
        let align = 1usize << dip.depth;
        if let Some(plan) = &opts.patch {
            if plan.extent % align != 0 {
                return Err(OptimError::BadConfig(format!(
                    "patch extent {} must be a multiple of the generator alignment {align}",
                    plan.extent
                )));
            }
            if plan.extent / align < 2 {
                return Err(OptimError::BadConfig(format!(
                    "patch extent {} collapses the generator bottleneck (needs at least {})",
                    plan.extent,
                    2 * align
                )));
            }
        }
        for (axis, n) in [("x", geom.nx), ("y", geom.ny), ("z", geom.nz)] {
            let padded = n.div_ceil(align).max(1) * align;
            if padded / align < 2 {
                return Err(OptimError::BadConfig(format!(
                    "volume axis {axis} ({n} voxels) collapses the generator bottleneck to a \
                     single element; reduce the generator depth"
                )));
            }
        }
    }
    Ok(())
}

/// Runs the full optimization loop and returns the reconstructed volume,
/// the final state and the loss trace. `on_checkpoint` is invoked every
/// `opts.emit_every` iterations (if set) with the iteration number and the
/// current state.
pub fn reconstruct(
    geom: &SystemGeometry,
    data: &LedStack,
    fields: Option<&Array3<Complex64>>,
    cfg: &LossConfig,
    opts: &ReconstructOptions,
    mut on_checkpoint: impl FnMut(usize, &ReconstructionState),
) -> Result<Reconstruction, OptimError> {
    validate_options(geom, cfg, opts)?;
    let prepared = PreparedData::new(geom, data, fields, cfg, opts.apodize)?;
    let n_led = prepared.n_led();
    let pupil = Pupil::ideal(geom);
    let contexts = ModelContexts::new(geom, cfg, &pupil, opts.optimize_pupil_phase)?;

    // Draw order: generator noise seed, generator weights, then the training
    // loop (epoch shuffles interleaved with patch offsets).
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let volume = match &opts.prior {
        PriorChoice::Voxel => VolumeParameterization::Voxel {
            value: Value::zeros_complex(&[geom.nx, geom.ny, geom.nz]),
        },
        PriorChoice::Dip(dip_cfg) => {
            let net = DipNetwork::new(dip_cfg.clone(), [geom.nx, geom.ny, geom.nz], &mut rng)?;
            let weights = net.init_params(&mut rng);
            VolumeParameterization::Dip { net, weights }
        }
    };
    let mut state = ReconstructionState {
        geom: geom.clone(),
        cfg: cfg.clone(),
        volume,
        u0: Value::real(Array1::from_vec(prepared.mean_amplitudes())),
        optimize_u0: opts.optimize_u0,
        pupil_phase: opts
            .optimize_pupil_phase
            .then(|| Value::zeros_real(&[geom.nx, geom.ny])),
        apodize: opts.apodize,
    };

    let mut adam = AdamState::new(opts.adam, &state.params());
    let mut guard = GuardState::new(opts.guard);
    guard.snapshot(&state.params(), &adam);

    let batch_size = opts.batch_leds.unwrap_or(n_led).min(n_led);
    let mut queue: VecDeque<Vec<usize>> = VecDeque::new();
    let mut trace = Vec::with_capacity(opts.iterations);

    for it in 0..opts.iterations {
        let batch = match queue.pop_front() {
            Some(b) => b,
            None => {
                queue = led_batches(n_led, batch_size, &mut rng).into();
                queue.pop_front().expect("batching produced no batches")
            }
        };
        let window = match &opts.patch {
            None => None,
            Some(plan) => {
                let (ox, oy) = draw_patch_offset(&mut rng, geom.nx, geom.ny, plan.extent)?;
                Some(PatchWindow { offset: (ox, oy), extent: plan.extent })
            }
        };

        let eval = evaluate_batch(&state, &contexts, &prepared, &batch, window)?;
        let mut params = state.params_mut();
        let action = guard.observe(it, eval.loss.total, &mut params, &mut adam)?;
        let mut restored = action == GuardAction::Restored;
        if !restored {
            match adam.step(&mut params, &eval.grads) {
                Ok(()) => {}
                Err(OptimError::NonFiniteGradient { .. }) => {
                    // Treat like a loss spike: roll back and anneal.
                    guard.observe(it, f64::INFINITY, &mut params, &mut adam)?;
                    restored = true;
                }
                Err(e) => return Err(e),
            }
        }
        drop(params);
        if !restored && (it as u64) % guard.cfg.checkpoint_every == 0 {
            guard.snapshot(&state.params(), &adam);
        }

        trace.push(TraceRecord {
            iteration: it,
            total: eval.loss.total,
            data_term: eval.loss.data_term,
            tv: eval.loss.tv,
            positivity: eval.loss.positivity,
            alpha: adam.cfg.alpha,
            restored,
        });
        if let Some(k) = opts.emit_every {
            if k > 0 && (it + 1) % k == 0 {
                on_checkpoint(it + 1, &state);
            }
        }
    }

    // Patch-trained generators never produced the full volume in one pass;
    // average randomly placed patches to assemble it. Everything else reads
    // the volume directly.
    let spatial = match (&opts.patch, &state.volume) {
        (Some(plan), VolumeParameterization::Dip { .. }) => {
            stochastic_stitch(&state, plan, &mut rng)?
        }
        _ => state.spatial_volume(),
    };
    let ri = match cfg.model {
        ForwardModel::Born | ForwardModel::Rytov => crate::forward::ri_from_scattering_potential(
            &spatial,
            geom.n0,
            geom.wavelength_um,
        ),
        ForwardModel::Multislice => spatial.mapv(|t| t + geom.n0),
    };
    Ok(Reconstruction { ri, state, trace, restores: guard.restores() })
}

impl ReconstructionState {
    /// Shape of the spatial model volume.
    pub fn spatial_shape(&self) -> [usize; 3] {
        [self.geom.nx, self.geom.ny, self.geom.nz]
    }
}
