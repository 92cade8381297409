//! Untrained volumetric generator: a symmetric encoder-decoder CNN whose
//! weights are the optimization variables and whose input is a fixed noise
//! seed. Optimizing the weights against a physics loss regularizes the
//! reconstruction toward images the architecture produces easily.
//!
//! Layout: `depth` encoder blocks (stride-2 conv, batch norm, leaky ReLU)
//! followed by `depth` decoder blocks (nearest-neighbor 2x upsample, conv,
//! batch norm, leaky ReLU). No skip connections. The last decoder block is
//! linear (no normalization, no nonlinearity) and emits an even number of
//! feature maps; the two halves are summed into the real and imaginary parts
//! of the output volume. The network is fully convolutional, so it can run
//! on any noise-seed crop whose extent is a multiple of `2^depth`.

use crate::tape::{NodeId, TapeGraph};
use crate::value::Value;
use ndarray::Array4;
use rand::Rng;
use std::sync::Arc;
use thiserror::Error;

#[derive(Clone, Debug)]
pub struct DipConfig {
    /// Number of down/up levels; the seed volume is padded to 2^depth.
    pub depth: usize,
    /// Channels at the first level; level `l` has `min(base << l, max)`.
    pub base_channels: usize,
    pub max_channels: usize,
    /// Channels of the fixed noise seed.
    pub input_channels: usize,
    /// Output feature maps; must be even (split into Re/Im halves).
    pub output_features: usize,
    /// Convolution kernel extent (odd).
    pub kernel: usize,
    pub leaky_slope: f64,
    pub bn_eps: f64,
    /// Noise seed is drawn uniformly from `[0, input_amplitude]`.
    pub input_amplitude: f64,
}

impl Default for DipConfig {
    fn default() -> Self {
        DipConfig {
            depth: 4,
            base_channels: 16,
            max_channels: 128,
            input_channels: 16,
            output_features: 8,
            kernel: 3,
            leaky_slope: 0.1,
            bn_eps: 1e-5,
            input_amplitude: 0.1,
        }
    }
}

#[derive(Error, Debug)]
pub enum DipError {
    #[error("output feature count {0} is odd; features are split into real/imaginary halves")]
    OddOutputFeatures(usize),
    #[error("generator depth must be at least 1")]
    ZeroDepth,
    #[error("convolution kernel extent {0} must be odd")]
    EvenKernel(usize),
}

/// Name and shape of one parameter tensor (checkpoint manifests, validation).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerSpec {
    pub name: String,
    pub shape: Vec<usize>,
}

pub struct DipNetwork {
    cfg: DipConfig,
    out_shape: [usize; 3],
    padded: [usize; 3],
    z_input: Arc<Value>,
}

fn next_multiple(n: usize, align: usize) -> usize {
    n.div_ceil(align).max(1) * align
}

impl DipNetwork {
    /// Builds a generator for a target volume shape, drawing the fixed noise
    /// seed from `rng`.
    pub fn new<R: Rng>(cfg: DipConfig, out_shape: [usize; 3], rng: &mut R) -> Result<Self, DipError> {
        if cfg.depth == 0 {
            return Err(DipError::ZeroDepth);
        }
        if cfg.output_features % 2 != 0 || cfg.output_features == 0 {
            return Err(DipError::OddOutputFeatures(cfg.output_features));
        }
        if cfg.kernel % 2 == 0 {
            return Err(DipError::EvenKernel(cfg.kernel));
        }
        let align = 1usize << cfg.depth;
        let padded = [
            next_multiple(out_shape[0], align),
            next_multiple(out_shape[1], align),
            next_multiple(out_shape[2], align),
        ];
        let amp = cfg.input_amplitude;
        let z = Array4::from_shape_fn(
            (cfg.input_channels, padded[0], padded[1], padded[2]),
            |_| rng.random::<f64>() * amp,
        );
        Ok(DipNetwork {
            cfg,
            out_shape,
            padded,
            z_input: Arc::new(Value::real(z)),
        })
    }

    pub fn config(&self) -> &DipConfig {
        &self.cfg
    }

    pub fn output_shape(&self) -> [usize; 3] {
        self.out_shape
    }

    pub fn padded_shape(&self) -> [usize; 3] {
        self.padded
    }

    /// Spatial alignment required of generator patches.
    pub fn alignment(&self) -> usize {
        1 << self.cfg.depth
    }

    fn channels_at(&self, level: usize) -> usize {
        (self.cfg.base_channels << level).min(self.cfg.max_channels)
    }

    /// Parameter names and shapes, in the order `generate` consumes them.
    pub fn layer_specs(&self) -> Vec<LayerSpec> {
        let k = self.cfg.kernel;
        let mut specs = Vec::new();
        let mut c_in = self.cfg.input_channels;
        for l in 0..self.cfg.depth {
            let c_out = self.channels_at(l);
            specs.push(LayerSpec {
                name: format!("enc{l}.conv"),
                shape: vec![c_out, c_in, k, k, k],
            });
            specs.push(LayerSpec { name: format!("enc{l}.bn.scale"), shape: vec![c_out] });
            specs.push(LayerSpec { name: format!("enc{l}.bn.offset"), shape: vec![c_out] });
            c_in = c_out;
        }
        for d in 0..self.cfg.depth {
            let last = d + 1 == self.cfg.depth;
            let c_out = if last {
                self.cfg.output_features
            } else {
                self.channels_at(self.cfg.depth - 2 - d)
            };
            specs.push(LayerSpec {
                name: format!("dec{d}.conv"),
                shape: vec![c_out, c_in, k, k, k],
            });
            if !last {
                specs.push(LayerSpec { name: format!("dec{d}.bn.scale"), shape: vec![c_out] });
                specs.push(LayerSpec { name: format!("dec{d}.bn.offset"), shape: vec![c_out] });
            }
            c_in = c_out;
        }
        specs
    }

    /// Fresh parameter tensors: LeCun-uniform kernels, identity batch norms.
    pub fn init_params<R: Rng>(&self, rng: &mut R) -> Vec<(String, Value)> {
        self.layer_specs()
            .into_iter()
            .map(|spec| {
                let v = if spec.shape.len() == 5 {
                    let fan_in: usize = spec.shape[1..].iter().product();
                    let a = (3.0 / fan_in as f64).sqrt();
                    let mut arr = ndarray::ArrayD::<f64>::zeros(ndarray::IxDyn(&spec.shape));
                    arr.mapv_inplace(|_| (rng.random::<f64>() * 2.0 - 1.0) * a);
                    Value::Real(arr)
                } else if spec.name.ends_with("scale") {
                    Value::Real(ndarray::ArrayD::from_elem(ndarray::IxDyn(&spec.shape), 1.0))
                } else {
                    Value::Real(ndarray::ArrayD::zeros(ndarray::IxDyn(&spec.shape)))
                };
                (spec.name, v)
            })
            .collect()
    }

    /// Builds the full-volume generator graph; output is a complex 3-d node
    /// of `output_shape`.
    pub fn generate(&self, tape: &mut TapeGraph, params: &[NodeId]) -> NodeId {
        self.generate_region(tape, params, [0, 0, 0], self.padded, true)
    }

    /// Builds the generator on a crop of the noise seed. `offset + size`
    /// must stay inside the padded seed and `size` must be a multiple of
    /// `2^depth` per axis. With `crop_output` the result is clipped back to
    /// the part of the region inside `output_shape`.
    pub fn generate_region(
        &self,
        tape: &mut TapeGraph,
        params: &[NodeId],
        offset: [usize; 3],
        size: [usize; 3],
        crop_output: bool,
    ) -> NodeId {
        let specs = self.layer_specs();
        assert!(
            params.len() == specs.len(),
            "generator expects {} parameter tensors, got {}",
            specs.len(),
            params.len()
        );
        for (id, spec) in params.iter().zip(&specs) {
            assert!(
                tape.value(*id).shape() == spec.shape.as_slice(),
                "parameter {} has shape {:?}, expected {:?}",
                spec.name,
                tape.value(*id).shape(),
                spec.shape
            );
        }
        let align = self.alignment();
        for a in 0..3 {
            assert!(size[a] % align == 0, "region extent {} not a multiple of {align}", size[a]);
            assert!(offset[a] + size[a] <= self.padded[a], "region leaves the seed volume");
        }

        let full = offset == [0, 0, 0] && size == self.padded;
        let z_full = tape.constant_shared(self.z_input.clone());
        let mut h = if full {
            z_full
        } else {
            tape.crop(
                z_full,
                &[0, offset[0], offset[1], offset[2]],
                &[self.cfg.input_channels, size[0], size[1], size[2]],
            )
        };

        let pad = (self.cfg.kernel - 1) / 2;
        let mut pi = 0;
        for _l in 0..self.cfg.depth {
            h = tape.conv3d(h, params[pi], 2, pad);
            h = tape.batch_norm(h, params[pi + 1], params[pi + 2], self.cfg.bn_eps);
            h = tape.leaky_relu(h, self.cfg.leaky_slope);
            pi += 3;
        }
        for d in 0..self.cfg.depth {
            let last = d + 1 == self.cfg.depth;
            h = tape.upsample3(h, 2);
            h = tape.conv3d(h, params[pi], 1, pad);
            pi += 1;
            if !last {
                h = tape.batch_norm(h, params[pi], params[pi + 1], self.cfg.bn_eps);
                h = tape.leaky_relu(h, self.cfg.leaky_slope);
                pi += 2;
            }
        }

        let half = self.cfg.output_features / 2;
        let re4 = tape.crop(h, &[0, 0, 0, 0], &[half, size[0], size[1], size[2]]);
        let im4 = tape.crop(h, &[half, 0, 0, 0], &[half, size[0], size[1], size[2]]);
        let re = tape.sum_axis(re4, 0);
        let im = tape.sum_axis(im4, 0);
        let out = tape.pack_complex(re, im);

        if !crop_output {
            return out;
        }
        // Clip the region to the part overlapping the target volume.
        let mut clip = [0usize; 3];
        let mut any = false;
        for a in 0..3 {
            let end = (offset[a] + size[a]).min(self.out_shape[a]);
            assert!(end > offset[a], "region lies entirely outside the target volume");
            clip[a] = end - offset[a];
            any |= clip[a] != size[a];
        }
        if any {
            tape.crop(out, &[0, 0, 0], &clip)
        } else {
            out
        }
    }
}
