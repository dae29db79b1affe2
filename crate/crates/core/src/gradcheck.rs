//! Central finite-difference gradient checks.
//!
//! Vector-valued maps are reduced to a scalar by projecting onto a fixed
//! random "probe" tensor, `L(x) = <probe, f(x)>`, so that the analytic
//! gradient of `L` is exactly the backward pass fed with `probe` as the
//! upstream gradient.

use crate::tensor::Tensor;

pub const STEP: f64 = 1e-5;

/// Central differences `(f(x + h·e_i) − f(x − h·e_i)) / 2h` for every element.
pub fn numeric_gradient(point: &Tensor, mut f: impl FnMut(&Tensor) -> f64, h: f64) -> Tensor {
    let mut grad = Tensor::zeros(point.shape());
    let mut x = point.clone();
    for i in 0..point.len() {
        let orig = x.data()[i];
        x.data_mut()[i] = orig + h;
        let up = f(&x);
        x.data_mut()[i] = orig - h;
        let down = f(&x);
        x.data_mut()[i] = orig;
        grad.data_mut()[i] = (up - down) / (2.0 * h);
    }
    grad
}

/// `‖a − b‖ / (‖a‖ + ‖b‖)`, or 0 when both are exactly zero.
pub fn relative_error(analytic: &Tensor, numeric: &Tensor) -> f64 {
    let (mut diff, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (a, b) in analytic.data().iter().zip(numeric.data()) {
        diff += (a - b) * (a - b);
        na += a * a;
        nb += b * b;
    }
    let denom = na.sqrt() + nb.sqrt();
    if denom == 0.0 {
        0.0
    } else {
        diff.sqrt() / denom
    }
}

/// Checks `analytic` against the numeric gradient of `<probe, f(point)>`.
/// Returns the relative error, or a message when it exceeds `tol`.
pub fn check_projected(
    point: &Tensor,
    probe: &Tensor,
    f: impl Fn(&Tensor) -> Tensor,
    analytic: &Tensor,
    tol: f64,
) -> Result<f64, String> {
    if analytic.shape() != point.shape() {
        return Err(format!(
            "gradient shape {:?} differs from parameter shape {:?}",
            analytic.shape(),
            point.shape()
        ));
    }
    let numeric = numeric_gradient(point, |x| f(x).dot(probe).expect("probe shape"), STEP);
    let err = relative_error(analytic, &numeric);
    if err < tol {
        Ok(err)
    } else {
        Err(format!("relative error {err:.3e} exceeds {tol:.0e}"))
    }
}

pub fn check_input_grad(
    x: &Tensor,
    probe: &Tensor,
    f: impl Fn(&Tensor) -> Tensor,
    analytic: &Tensor,
    tol: f64,
) -> Result<f64, String> {
    check_projected(x, probe, f, analytic, tol).map_err(|e| format!("input gradient: {e}"))
}

pub fn check_param_grad(
    param: &Tensor,
    probe: &Tensor,
    f: impl Fn(&Tensor) -> Tensor,
    analytic: &Tensor,
    tol: f64,
) -> Result<f64, String> {
    check_projected(param, probe, f, analytic, tol).map_err(|e| format!("parameter gradient: {e}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient() {
        let x = Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap();
        let g = numeric_gradient(&x, |t| t.data().iter().map(|v| v * v).sum(), STEP);
        let want = x.scale(2.0);
        assert!(relative_error(&g, &want) < 1e-9);
    }

    #[test]
    fn wrong_gradient_is_caught() {
        let x = Tensor::new(vec![2], vec![1.0, 2.0]).unwrap();
        let probe = Tensor::full(&[2], 1.0);
        let wrong = Tensor::full(&[2], 3.0);
        assert!(check_projected(&x, &probe, |t| t.scale(2.0), &wrong, 1e-6).is_err());
        let right = Tensor::full(&[2], 2.0);
        assert!(check_projected(&x, &probe, |t| t.scale(2.0), &right, 1e-6).is_ok());
    }
}
