//! Unitary discrete Fourier transforms over `ndarray` tensors.
//!
//! Both directions carry a `1/sqrt(N)` factor so forward and inverse are
//! exact adjoints of each other; that makes the backward rule for an FFT node
//! simply the opposite-direction transform of the incoming gradient.
//! Plans are cached per thread and per (length, direction).

use ndarray::{ArrayViewMutD, Axis};
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

thread_local! {
    static PLANS: RefCell<HashMap<(usize, bool), Arc<dyn Fft<f64>>>> =
        RefCell::new(HashMap::new());
}

fn plan(len: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANS.with(|cache| {
        cache
            .borrow_mut()
            .entry((len, inverse))
            .or_insert_with(|| {
                let mut planner = FftPlanner::new();
                if inverse {
                    planner.plan_fft_inverse(len)
                } else {
                    planner.plan_fft_forward(len)
                }
            })
            .clone()
    })
}

/// Unnormalized transform along one axis; lanes are copied through a scratch
/// buffer because rustfft wants contiguous data.
fn transform_axis(a: &mut ArrayViewMutD<'_, Complex64>, axis: usize, inverse: bool) {
    let len = a.shape()[axis];
    if len <= 1 {
        return;
    }
    let fft = plan(len, inverse);
    let mut lane_buf = vec![Complex64::ZERO; len];
    let mut scratch = vec![Complex64::ZERO; fft.get_inplace_scratch_len()];
    for mut lane in a.lanes_mut(Axis(axis)) {
        for (dst, src) in lane_buf.iter_mut().zip(lane.iter()) {
            *dst = *src;
        }
        fft.process_with_scratch(&mut lane_buf, &mut scratch);
        for (dst, src) in lane.iter_mut().zip(lane_buf.iter()) {
            *dst = *src;
        }
    }
}

/// In-place unitary DFT over every axis of `a`.
pub fn fft_all_axes_unitary(mut a: ArrayViewMutD<'_, Complex64>, inverse: bool) {
    let ndim = a.ndim();
    let total: usize = a.len();
    if total == 0 {
        return;
    }
    for axis in 0..ndim {
        transform_axis(&mut a, axis, inverse);
    }
    let norm = 1.0 / (total as f64).sqrt();
    a.mapv_inplace(|z| z * norm);
}
