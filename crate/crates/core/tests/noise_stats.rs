//! Monte Carlo checks that the simulated noise carries the advertised
//! statistics: Poisson means and variances survive the gain/quantization
//! round trip, and the matched complex field noise reproduces shot-noise
//! intensity moments exactly.

use dptomo_core::forward::LedStack;
use dptomo_core::geometry::IlluminationWavevector;
use dptomo_core::simkit::{
    add_field_noise, complex_field_noise_sigma, poisson_camera, NoiseMode, NoiseSpec,
};
use ndarray::{Array1, Array3};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn stack_of(images: Array3<f64>) -> LedStack {
    let wavevectors = (0..images.shape()[0])
        .map(|p| IlluminationWavevector {
            kx: 0.0,
            ky: 0.0,
            kz: 15.7,
            led_index: p,
            brightfield: true,
        })
        .collect();
    LedStack { images, wavevectors }
}

fn mean_var(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

#[test]
fn camera_round_trip_preserves_poisson_moments() {
    // 16-bit ADC keeps the quantization step far below the shot noise, so
    // the decoded samples should show plain Poisson statistics.
    let n = 200_000usize;
    let spec = NoiseSpec { well_depth: 50_000.0, bit_depth: 16, mode: NoiseMode::PoissonCamera };
    let mean_in = 1000.0;
    // One bright reference pixel pins the global scale so the working pixels
    // sit at lambda = 25_000 counts, comfortably below the full well.
    let mut images = Array3::from_elem((1, n + 1, 1), mean_in);
    images[[0, n, 0]] = 2.0 * mean_in;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let noisy = poisson_camera(&stack_of(images), &spec, &mut rng).unwrap();
    let samples: Vec<f64> = (0..n).map(|i| noisy.images[[0, i, 0]]).collect();
    let (mean, var) = mean_var(&samples);

    let scale = spec.well_depth / (2.0 * mean_in);
    let lambda = mean_in * scale;
    let expect_var = lambda / (scale * scale);
    let sigma_mean = (expect_var / n as f64).sqrt();
    assert!(
        (mean - mean_in).abs() <= 4.0 * sigma_mean,
        "decoded mean {mean:.3} vs {mean_in} (4 sigma = {:.3})",
        4.0 * sigma_mean
    );
    assert!(
        (var / expect_var - 1.0).abs() <= 0.02,
        "decoded variance {var:.3} vs {expect_var:.3}"
    );
}

#[test]
fn quantization_bias_stays_below_half_a_code() {
    let n = 100_000usize;
    let spec = NoiseSpec { well_depth: 50_000.0, bit_depth: 8, mode: NoiseMode::PoissonCamera };
    let mean_in = 400.0;
    let mut images = Array3::from_elem((1, n + 1, 1), mean_in);
    images[[0, n, 0]] = 1000.0;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let noisy = poisson_camera(&stack_of(images), &spec, &mut rng).unwrap();
    let samples: Vec<f64> = (0..n).map(|i| noisy.images[[0, i, 0]]).collect();
    let (mean, _) = mean_var(&samples);
    let scale = spec.well_depth / 1000.0;
    let code_step = spec.well_depth / ((1u64 << 8) - 1) as f64 / scale;
    assert!(
        (mean - mean_in).abs() <= 0.5 * code_step + 0.1,
        "8-bit mean {mean:.2} drifted more than half a code ({code_step:.2}) from {mean_in}"
    );
}

#[test]
fn matched_field_noise_reproduces_shot_noise_moments() {
    // With sigma^2 = (sqrt(mu^2 + mu) - mu) / 2 per quadrature the intensity
    // |f + n|^2 has Var = mu exactly and mean mu + 2 sigma^2.
    let n = 200_000usize;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for mu in [1.0f64, 10.0, 100.0] {
        let amp = mu.sqrt();
        let fields = Array3::from_elem((1, n, 1), Complex64::new(amp, 0.0));
        let noisy = add_field_noise(&fields, &mut rng);
        let intensities: Vec<f64> = noisy.iter().map(|c| c.norm_sqr()).collect();
        let (mean, var) = mean_var(&intensities);
        let sigma2 = complex_field_noise_sigma(mu).powi(2);
        let sigma_mean = (mu / n as f64).sqrt();
        assert!(
            (mean - (mu + 2.0 * sigma2)).abs() <= 5.0 * sigma_mean,
            "mu={mu}: mean {mean:.4} vs {:.4}",
            mu + 2.0 * sigma2
        );
        assert!(
            (var / mu - 1.0).abs() <= 0.03,
            "mu={mu}: intensity variance {var:.4} should equal the mean"
        );
    }
}

#[test]
fn field_noise_randomizes_phase_isotropically() {
    let n = 100_000usize;
    let mu = 4.0f64;
    let fields = Array3::from_elem((1, n, 1), Complex64::new(mu.sqrt(), 0.0));
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let noisy = add_field_noise(&fields, &mut rng);
    let (re, im): (Vec<f64>, Vec<f64>) =
        noisy.iter().map(|c| (c.re - mu.sqrt(), c.im)).unzip();
    let (mre, vre) = mean_var(&re);
    let (mim, vim) = mean_var(&im);
    let sigma2 = complex_field_noise_sigma(mu).powi(2);
    let tol = 5.0 * (sigma2 / n as f64).sqrt();
    assert!(mre.abs() <= tol && mim.abs() <= tol, "quadrature means biased");
    assert!((vre / sigma2 - 1.0).abs() <= 0.03, "re variance off: {vre:.5} vs {sigma2:.5}");
    assert!((vim / sigma2 - 1.0).abs() <= 0.03, "im variance off: {vim:.5} vs {sigma2:.5}");
    // Quadratures should be uncorrelated.
    let cov = re.iter().zip(&im).map(|(a, b)| a * b).sum::<f64>() / (n as f64 - 1.0);
    assert!(cov.abs() <= 5.0 * sigma2 / (n as f64).sqrt(), "quadratures correlated: {cov:.2e}");
}

fn spearman(a: &[f64], b: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Array1<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
        let mut r = Array1::zeros(v.len());
        for (rank, &i) in idx.iter().enumerate() {
            r[i] = rank as f64;
        }
        r
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let ma = ra.mean().unwrap();
    let mb = rb.mean().unwrap();
    let num: f64 = ra.iter().zip(rb.iter()).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let da: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let db: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    num / (da * db).sqrt()
}

#[test]
fn bright_pixels_keep_their_ordering_through_the_camera() {
    let n = 10_000usize;
    let clean = Array3::from_shape_fn((1, n, 1), |(_, i, _)| {
        100.0 + 900.0 * (i as f64 / n as f64)
    });
    let spec = NoiseSpec { well_depth: 50_000.0, bit_depth: 16, mode: NoiseMode::PoissonCamera };
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let noisy = poisson_camera(&stack_of(clean.clone()), &spec, &mut rng).unwrap();
    let a: Vec<f64> = clean.iter().copied().collect();
    let b: Vec<f64> = noisy.images.iter().copied().collect();
    let rho = spearman(&a, &b);
    assert!(rho > 0.99, "rank correlation {rho:.4} too weak at >= 100 e- means");
}
