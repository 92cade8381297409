//! `dptomo simulate`: phantom -> forward model -> camera noise -> run
//! directory.

use crate::errors::CliError;
use crate::io::{self, FIELDS_FILE, TRUTH_FILE};
use crate::plots;
use dptomo_core::config::RunConfig;
use dptomo_core::container::write_c128;
use dptomo_core::forward::{simulate_stacks, Pupil};
use dptomo_core::simkit::{add_field_noise, bead_phantom, poisson_camera, NoiseMode};
use ndarray::{Array2, Array3, Axis};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::Path;

pub fn run(config: &RunConfig, out: &Path, with_plots: bool) -> Result<(), CliError> {
    let geom = config.geometry.build()?;
    let truth: Array3<Complex64> = match &config.phantom {
        Some(spec) => bead_phantom(spec, &geom)?,
        None => Array3::from_elem((geom.nx, geom.ny, geom.nz), Complex64::new(geom.n0, 0.0)),
    };

    let pupil = Pupil::ideal(&geom);
    let (mut stack, mut fields) =
        simulate_stacks(&geom, &truth, config.model, 1.0, &pupil, false)?;

    if let Some(noise) = &config.noise {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        match noise.mode {
            NoiseMode::PoissonCamera => {
                stack = poisson_camera(&stack, noise, &mut rng)?;
            }
            NoiseMode::ComplexGaussian => {
                fields.fields = add_field_noise(&fields.fields, &mut rng);
                stack.images = fields.fields.mapv(|c| c.norm_sqr());
            }
        }
    }

    io::ensure_dir(out)?;
    io::write_stack(out, &stack)?;
    write_c128(out.join(TRUTH_FILE), truth.view().into_dyn(), "ri")?;
    if config.phase_sensitive {
        write_c128(out.join(FIELDS_FILE), fields.fields.view().into_dyn(), "field")?;
    }
    io::write_manifest(out, "simulate", config)?;

    if with_plots {
        let plot_dir = out.join("plots");
        io::ensure_dir(&plot_dir)?;
        let (_, cy) = io::center_xy(&truth.mapv(|c| c.re));
        let xz = truth.index_axis(Axis(1), cy).mapv(|c| c.re);
        plots::heatmap(&plot_dir.join("truth_xz.png"), &xz.to_owned())?;
        let first: Array2<f64> = stack.images.index_axis(Axis(0), 0).to_owned();
        plots::heatmap(&plot_dir.join("image_led0.png"), &first)?;
    }

    println!(
        "simulated {} LED images ({}x{}) into {}",
        stack.n_led(),
        geom.nx,
        geom.ny,
        out.display()
    );
    Ok(())
}
