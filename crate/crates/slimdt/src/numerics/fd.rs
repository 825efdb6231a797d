//! Central finite differences, the independent oracle for gradient checks.
//!
//! Nothing here touches the tape: a check re-evaluates a plain closure at
//! perturbed inputs, so it stays valid no matter what the reverse pass does.

/// Step used throughout the gradient checks.
pub const FD_STEP: f64 = 1e-5;
/// Relative tolerance for autodiff-vs-finite-difference agreement.
pub const GRAD_RTOL: f64 = 1e-4;
/// Absolute floor so near-zero gradients compare sanely.
pub const GRAD_ATOL: f64 = 1e-7;

/// Central difference of `f` along coordinate `i`, restoring `x` afterward.
pub fn central_diff<F: FnMut(&[f64]) -> f64>(f: &mut F, x: &mut [f64], i: usize, step: f64) -> f64 {
    let orig = x[i];
    x[i] = orig + step;
    let fp = f(x);
    x[i] = orig - step;
    let fm = f(x);
    x[i] = orig;
    (fp - fm) / (2.0 * step)
}

/// True when `ad` and `fd` agree within `GRAD_RTOL` relative error
/// (with the `GRAD_ATOL` floor).
pub fn close(ad: f64, fd: f64) -> bool {
    (ad - fd).abs() <= GRAD_ATOL + GRAD_RTOL * ad.abs().max(fd.abs())
}

/// Checks an autodiff gradient against central differences coordinate by
/// coordinate. Returns the first disagreement as `(index, ad, fd)`.
pub fn check_grad<F: FnMut(&[f64]) -> f64>(
    f: &mut F,
    x: &[f64],
    ad_grad: &[f64],
) -> Result<(), (usize, f64, f64)> {
    assert_eq!(x.len(), ad_grad.len(), "check_grad: length mismatch");
    let mut probe = x.to_vec();
    for i in 0..probe.len() {
        let fd = central_diff(f, &mut probe, i, FD_STEP);
        if !close(ad_grad[i], fd) {
            return Err((i, ad_grad[i], fd));
        }
    }
    Ok(())
}
