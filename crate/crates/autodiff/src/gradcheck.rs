//! Central finite-difference checking of tape gradients (test support).
//!
//! A scalar objective is re-evaluated with each degree of freedom perturbed
//! by ±h; complex tensors are perturbed separately in their real and
//! imaginary parts, matching the gradient convention of the tape.

use crate::value::Value;

/// Central finite-difference gradient of `f` at `at`, one tensor per input.
pub fn fd_gradient<F>(mut f: F, at: &[Value], step: f64) -> Vec<Value>
where
    F: FnMut(&[Value]) -> f64,
{
    let mut grads = Vec::with_capacity(at.len());
    let mut work: Vec<Value> = at.to_vec();
    for p in 0..at.len() {
        let mut g = at[p].zeros_like();
        for i in 0..at[p].dof_count() {
            let x0 = at[p].dof(i);
            work[p].set_dof(i, x0 + step);
            let fp = f(&work);
            work[p].set_dof(i, x0 - step);
            let fm = f(&work);
            work[p].set_dof(i, x0);
            g.set_dof(i, (fp - fm) / (2.0 * step));
        }
        grads.push(g);
    }
    grads
}

/// Relative l2 distance between two gradient sets, flattened over all dofs.
pub fn relative_l2_error(analytic: &[Value], reference: &[Value]) -> f64 {
    assert!(analytic.len() == reference.len(), "gradient set size mismatch");
    let mut num = 0.0;
    let mut den = 0.0;
    for (a, r) in analytic.iter().zip(reference) {
        assert!(a.shape() == r.shape() && a.is_real() == r.is_real(), "gradient layout mismatch");
        for i in 0..a.dof_count() {
            let d = a.dof(i) - r.dof(i);
            num += d * d;
            den += r.dof(i) * r.dof(i);
        }
    }
    (num / den.max(1e-300)).sqrt()
}

/// Convenience: FD-checks `analytic` against `f` and returns the relative
/// error (callers assert against their own tolerance).
pub fn check_against_fd<F>(f: F, at: &[Value], analytic: &[Value], step: f64) -> f64
where
    F: FnMut(&[Value]) -> f64,
{
    let fd = fd_gradient(f, at, step);
    relative_l2_error(analytic, &fd)
}
