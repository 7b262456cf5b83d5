//! Central finite-difference gradient checking. Evaluates only forward
//! passes, so it is independent of the backward implementation it verifies.
//! Meant to run at f64 precision.

use crate::arr::Arr;
use crate::param::Param;

pub const DEFAULT_STEP: f64 = 1e-4;
pub const DEFAULT_REL_TOL: f64 = 1e-3;

/// Compare analytic gradients (one per param, same order) against central
/// finite differences of `forward`, which must recompute the scalar loss
/// from the params' current values on every call.
pub fn check_param_gradients(
    params: &[Param<f64>],
    analytic: &[Arr<f64>],
    mut forward: impl FnMut() -> f64,
    step: f64,
    rel_tol: f64,
) -> Result<(), String> {
    assert_eq!(params.len(), analytic.len());
    for (p, an) in params.iter().zip(analytic) {
        let base = p.value();
        assert_eq!(base.shape(), an.shape(), "gradient shape mismatch");
        let n = base.len();
        for j in 0..n {
            let x0 = base.as_slice()[j];

            let mut plus = base.clone();
            plus.as_mut_slice()[j] = x0 + step;
            p.set_value(plus);
            let f_plus = forward();

            let mut minus = base.clone();
            minus.as_mut_slice()[j] = x0 - step;
            p.set_value(minus);
            let f_minus = forward();

            p.set_value(base.clone());

            let fd = (f_plus - f_minus) / (2.0 * step);
            let a = an.as_slice()[j];
            if !close(fd, a, rel_tol) {
                return Err(format!(
                    "gradcheck failed for {}[{}]: finite-diff {:.6e} vs analytic {:.6e}",
                    p.name(),
                    j,
                    fd,
                    a
                ));
            }
        }
    }
    Ok(())
}

/// Relative comparison with an absolute floor for near-zero gradients where
/// finite-difference noise dominates.
fn close(fd: f64, analytic: f64, rel_tol: f64) -> bool {
    let abs = (fd - analytic).abs();
    let denom = fd.abs().max(analytic.abs());
    if denom < 1e-6 {
        return abs < 1e-6;
    }
    abs / denom <= rel_tol
}
