//! Run configuration: a human-readable TOML file (JSON accepted as an
//! alternative) describing the imaging geometry, forward model, prior,
//! optimizer schedule and noise model. The same structure is embedded in
//! every run manifest, so a manifest is itself a valid config.

use crate::forward::ForwardModel;
use crate::geometry::{LedLayout, SystemGeometry};
use crate::objective::LossConfig;
use crate::optim::{GuardConfig, PatchPlan, PriorChoice, ReconstructOptions};
use crate::simkit::{BeadSpec, NoiseSpec};
use dptomo_autodiff::dip::DipConfig;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("cannot parse {path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LedConfig {
    /// LEDs per side of the square board (1 = single on-axis LED).
    #[serde(default = "LedConfig::default_per_side")]
    pub grid_per_side: usize,
    #[serde(default = "LedConfig::default_pitch")]
    pub pitch_mm: f64,
    /// Board distance from the sample. Exactly one of `distance_mm` and
    /// `na_target` must be given.
    pub distance_mm: Option<f64>,
    /// Desired illumination NA of the outermost (diagonal) LED; the board
    /// distance is derived from it.
    pub na_target: Option<f64>,
}

impl LedConfig {
    fn default_per_side() -> usize {
        1
    }
    fn default_pitch() -> f64 {
        4.0
    }
}

impl Default for LedConfig {
    fn default() -> Self {
        LedConfig {
            grid_per_side: 1,
            pitch_mm: 4.0,
            distance_mm: Some(50.0),
            na_target: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeometryConfig {
    pub wavelength_um: f64,
    pub n0: f64,
    pub na_ill: f64,
    pub na_img: f64,
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub dx_um: f64,
    /// Defaults to `dx_um`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dy_um: Option<f64>,
    pub dz_um: f64,
    #[serde(default)]
    pub leds: LedConfig,
    #[serde(default)]
    pub focus_offset_um: f64,
    #[serde(default = "default_true")]
    pub snap_illumination: bool,
}

impl GeometryConfig {
    /// Board distance implied by the config (explicit, or derived from the
    /// requested NA of the outermost LED).
    pub fn led_distance_mm(&self) -> Result<f64, ConfigError> {
        match (self.leds.distance_mm, self.leds.na_target) {
            (Some(d), None) => {
                if !(d > 0.0) {
                    return Err(ConfigError::Invalid(format!(
                        "LED distance must be positive, got {d}"
                    )));
                }
                Ok(d)
            }
            (None, Some(na)) => {
                if self.leds.grid_per_side < 2 {
                    return Err(ConfigError::Invalid(
                        "na_target needs a board with at least 2 LEDs per side; give \
                         distance_mm for a single on-axis LED"
                            .into(),
                    ));
                }
                if !(na > 0.0 && na < self.n0) {
                    return Err(ConfigError::Invalid(format!(
                        "na_target must lie in (0, n0 = {}), got {na}",
                        self.n0
                    )));
                }
                // Farthest LED sits on the board diagonal.
                let r_max = self.leds.pitch_mm * (self.leds.grid_per_side - 1) as f64 / 2.0
                    * std::f64::consts::SQRT_2;
                Ok(r_max * ((self.n0 / na).powi(2) - 1.0).sqrt())
            }
            (Some(_), Some(_)) => Err(ConfigError::Invalid(
                "give either distance_mm or na_target, not both".into(),
            )),
            (None, None) => Err(ConfigError::Invalid(
                "the LED block needs distance_mm or na_target".into(),
            )),
        }
    }

    pub fn build(&self) -> Result<SystemGeometry, ConfigError> {
        let distance = self.led_distance_mm()?;
        let dy = self.dy_um.unwrap_or(self.dx_um);
        let leds = if self.leds.grid_per_side <= 1 {
            LedLayout::single(distance)
        } else {
            LedLayout::centered_grid(self.leds.grid_per_side, self.leds.pitch_mm, distance)
        };
        let geom = SystemGeometry {
            wavelength_um: self.wavelength_um,
            n0: self.n0,
            na_ill: self.na_ill,
            na_img: self.na_img,
            nx: self.nx,
            ny: self.ny,
            nz: self.nz,
            dx_um: self.dx_um,
            dy_um: dy,
            dz_um: self.dz_um,
            leds,
            focus_offset_um: self.focus_offset_um,
            snap_illumination: self.snap_illumination,
        };
        geom.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(geom)
    }
}

/// Generator-network architecture knobs (subset of the full config with
/// file-friendly defaults).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DipSettings {
    #[serde(default = "DipSettings::default_depth")]
    pub depth: usize,
    #[serde(default = "DipSettings::default_base_channels")]
    pub base_channels: usize,
    #[serde(default = "DipSettings::default_max_channels")]
    pub max_channels: usize,
    #[serde(default = "DipSettings::default_input_channels")]
    pub input_channels: usize,
    #[serde(default = "DipSettings::default_output_features")]
    pub output_features: usize,
}

impl DipSettings {
    fn default_depth() -> usize {
        3
    }
    fn default_base_channels() -> usize {
        8
    }
    fn default_max_channels() -> usize {
        64
    }
    fn default_input_channels() -> usize {
        8
    }
    fn default_output_features() -> usize {
        4
    }

    pub fn to_dip_config(&self) -> DipConfig {
        DipConfig {
            depth: self.depth,
            base_channels: self.base_channels,
            max_channels: self.max_channels,
            input_channels: self.input_channels,
            output_features: self.output_features,
            ..DipConfig::default()
        }
    }
}

impl Default for DipSettings {
    fn default() -> Self {
        DipSettings {
            depth: Self::default_depth(),
            base_channels: Self::default_base_channels(),
            max_channels: Self::default_max_channels(),
            input_channels: Self::default_input_channels(),
            output_features: Self::default_output_features(),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct PriorConfig {
    #[serde(default)]
    pub use_dip: bool,
    #[serde(default)]
    pub lambda_tv: f64,
    #[serde(default)]
    pub lambda_pos: f64,
    #[serde(default)]
    pub dip: DipSettings,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimizerConfig {
    #[serde(default = "OptimizerConfig::default_iterations")]
    pub iterations: usize,
    /// LEDs per step; absent = full batch.
    pub batch_leds: Option<usize>,
    /// Lateral patch extent in pixels; absent = full field of view.
    pub patch: Option<usize>,
    /// Adam step size; absent = per-prior default (1e-2 voxel, 1e-3 dip).
    pub alpha: Option<f64>,
    #[serde(default)]
    pub guard: GuardConfig,
    #[serde(default = "default_true")]
    pub optimize_u0: bool,
    #[serde(default)]
    pub optimize_pupil_phase: bool,
    /// Checkpoint emission cadence in iterations.
    pub emit_every: Option<usize>,
    pub stitch_count: Option<usize>,
}

impl OptimizerConfig {
    fn default_iterations() -> usize {
        500
    }
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            iterations: Self::default_iterations(),
            batch_leds: None,
            patch: None,
            alpha: None,
            guard: GuardConfig::default(),
            optimize_u0: true,
            optimize_pupil_phase: false,
            emit_every: None,
            stitch_count: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub geometry: GeometryConfig,
    #[serde(default = "RunConfig::default_model")]
    pub model: ForwardModel,
    #[serde(default)]
    pub prior: PriorConfig,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    /// Absent = noiseless simulation.
    pub noise: Option<NoiseSpec>,
    /// Bead phantom for `simulate`.
    pub phantom: Option<BeadSpec>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub phase_sensitive: bool,
    /// Gaussian entry window for the slice-stepping model.
    #[serde(default = "default_true")]
    pub apodize: bool,
}

impl RunConfig {
    fn default_model() -> ForwardModel {
        ForwardModel::Born
    }

    /// Parses TOML (default) or JSON (by `.json` extension).
    pub fn from_path(path: &Path) -> Result<RunConfig, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        let cfg: RunConfig = if is_json {
            serde_json::from_str(&text).map_err(|e| ConfigError::Parse {
                path: path.display().to_string(),
                message: e.to_string(),
            })?
        } else {
            toml::from_str(&text).map_err(|e| ConfigError::Parse {
                path: path.display().to_string(),
                message: e.to_string(),
            })?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml_str(text: &str) -> Result<RunConfig, ConfigError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: "<inline>".into(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.prior.lambda_tv < 0.0 || self.prior.lambda_pos < 0.0 {
            return Err(ConfigError::Invalid(format!(
                "regularization weights must be nonnegative (lambda_tv = {}, lambda_pos = {})",
                self.prior.lambda_tv, self.prior.lambda_pos
            )));
        }
        if let Some(a) = self.optimizer.alpha {
            if !(a > 0.0) {
                return Err(ConfigError::Invalid(format!(
                    "learning rate must be positive, got {a}"
                )));
            }
        }
        if let Some(n) = self.noise {
            n.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        self.geometry.led_distance_mm()?;
        Ok(())
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            lambda_tv: self.prior.lambda_tv,
            lambda_pos: self.prior.lambda_pos,
            use_dip: self.prior.use_dip,
            model: self.model,
            phase_sensitive: self.phase_sensitive,
        }
    }

    pub fn reconstruct_options(&self) -> ReconstructOptions {
        let prior = if self.prior.use_dip {
            PriorChoice::Dip(self.prior.dip.to_dip_config())
        } else {
            PriorChoice::Voxel
        };
        let mut opts = ReconstructOptions::new(prior, self.optimizer.iterations, self.seed);
        if let Some(a) = self.optimizer.alpha {
            opts.adam.alpha = a;
        }
        opts.guard = self.optimizer.guard;
        opts.batch_leds = self.optimizer.batch_leds;
        opts.patch = self.optimizer.patch.map(|extent| {
            let mut plan = PatchPlan::new(extent);
            if let Some(m) = self.optimizer.stitch_count {
                plan.stitch_count = m;
            }
            plan
        });
        opts.optimize_u0 = self.optimizer.optimize_u0;
        opts.optimize_pupil_phase = self.optimizer.optimize_pupil_phase;
        opts.apodize = self.apodize && self.model == ForwardModel::Multislice;
        opts.emit_every = self.optimizer.emit_every;
        opts
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    const MINIMAL: &str = r#"
        seed = 7
        model = "rytov"

        [geometry]
        wavelength_um = 0.532
        n0 = 1.515
        na_ill = 0.4
        na_img = 0.4
        nx = 32
        ny = 32
        nz = 16
        dx_um = 0.25
        dz_um = 0.25

        [geometry.leds]
        grid_per_side = 3
        pitch_mm = 4.0
        distance_mm = 40.0
    "#;

    #[test]
    fn minimal_toml_parses_with_defaults() {
        let cfg = RunConfig::from_toml_str(MINIMAL).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.model, ForwardModel::Rytov);
        assert_eq!(cfg.optimizer.iterations, 500);
        assert!(!cfg.prior.use_dip);
        assert!(cfg.noise.is_none());
        let geom = cfg.geometry.build().unwrap();
        assert_eq!(geom.dy_um, 0.25, "dy defaults to dx");
        assert_eq!(geom.nx, 32);
        assert!(geom.snap_illumination);
    }

    #[test]
    fn toml_round_trips_through_serialization() {
        let cfg = RunConfig::from_toml_str(MINIMAL).unwrap();
        let text = cfg.to_toml_string();
        let back = RunConfig::from_toml_str(&text).unwrap();
        assert_eq!(back.to_toml_string(), text);
    }

    #[test]
    fn json_is_accepted_by_extension() {
        let cfg = RunConfig::from_toml_str(MINIMAL).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.json");
        std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
        let back = RunConfig::from_path(&path).unwrap();
        assert_eq!(back.seed, cfg.seed);
        assert_eq!(back.geometry.nx, cfg.geometry.nx);
    }

    #[test]
    fn parse_errors_carry_line_diagnostics() {
        let broken = MINIMAL.replace("nx = 32", "nx = \"many\"");
        let err = RunConfig::from_toml_str(&broken).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line"), "diagnostic lacks a line reference: {msg}");
    }

    #[test]
    fn na_target_places_the_board_at_the_right_distance() {
        let mut cfg = RunConfig::from_toml_str(MINIMAL).unwrap();
        cfg.geometry.leds.distance_mm = None;
        cfg.geometry.leds.na_target = Some(0.35);
        let dist = cfg.geometry.led_distance_mm().unwrap();
        // The diagonal corner LED must land exactly at the requested NA.
        let r = cfg.geometry.leds.pitch_mm * std::f64::consts::SQRT_2;
        let sin_theta = r / (r * r + dist * dist).sqrt();
        assert_abs_diff_eq!(cfg.geometry.n0 * sin_theta, 0.35, epsilon = 1e-12);
    }

    #[test]
    fn bad_values_are_rejected() {
        let mut cfg = RunConfig::from_toml_str(MINIMAL).unwrap();
        cfg.prior.lambda_tv = -1.0;
        assert!(cfg.validate().is_err());

        let mut cfg = RunConfig::from_toml_str(MINIMAL).unwrap();
        cfg.geometry.leds.distance_mm = None;
        assert!(cfg.validate().is_err());

        let mut cfg = RunConfig::from_toml_str(MINIMAL).unwrap();
        cfg.geometry.leds.na_target = Some(0.3);
        assert!(cfg.validate().is_err(), "both distance and na_target must conflict");

        assert!(RunConfig::from_path(Path::new("/nonexistent/run.toml")).is_err());
    }

    #[test]
    fn options_map_prior_and_schedule() {
        let mut cfg = RunConfig::from_toml_str(MINIMAL).unwrap();
        cfg.prior.use_dip = true;
        cfg.prior.lambda_tv = 1e-8;
        cfg.optimizer.patch = Some(16);
        cfg.optimizer.stitch_count = Some(64);
        cfg.optimizer.batch_leds = Some(4);
        cfg.model = ForwardModel::Multislice;
        let opts = cfg.reconstruct_options();
        assert!(matches!(opts.prior, PriorChoice::Dip(_)));
        assert_abs_diff_eq!(opts.adam.alpha, 1e-3, epsilon = 0.0);
        let plan = opts.patch.unwrap();
        assert_eq!(plan.extent, 16);
        assert_eq!(plan.depad, 2);
        assert_eq!(plan.stitch_count, 64);
        assert_eq!(opts.batch_leds, Some(4));
        let loss = cfg.loss_config();
        assert!(loss.use_dip);
        assert_eq!(loss.lambda_tv, 1e-8);
    }
}
