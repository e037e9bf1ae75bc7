//! Central finite-difference verification of tape gradients.

use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Relative discrepancy used for every coordinate: `|a − n| / max(1e−8, |a| + |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Coordinate attaining the maximum.
    pub worst_index: usize,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

/// Compares the tape gradient of the scalar `f(θ)` at `point` with central differences
/// `(f(θ + h·e) − f(θ − h·e)) / 2h` over every coordinate.
pub fn gradient_check<F>(f: F, point: &[f64], h: f64) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>>,
{
    let all: Vec<usize> = (0..point.len()).collect();
    gradient_check_coords(f, point, h, &all).map(|r| r.max_rel_error)
}

/// Like [`gradient_check`] but restricted to `coords`; reports per-coordinate values.
pub fn gradient_check_coords<F>(f: F, point: &[f64], h: f64, coords: &[usize]) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>>,
{
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("step must be positive, got {h}")));
    }
    let n = point.len();
    let full_grad = {
        let tape = Tape::new();
        let theta = tape.param(Tensor::from_parts(vec![n], point.to_vec()));
        let out = f(&tape, theta)?;
        if !out.item().is_finite() {
            return Err(Error::NonFinite("objective at base point".into()));
        }
        tape.backward(out)?;
        theta.grad().into_data()
    };
    let eval = |x: Vec<f64>| -> Result<f64> {
        let tape = Tape::new();
        let theta = tape.constant(Tensor::from_parts(vec![n], x));
        let v = f(&tape, theta)?.item();
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite("objective at probe point".into()))
        }
    };
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: coords.first().copied().unwrap_or(0),
        analytic: Vec::with_capacity(coords.len()),
        numeric: Vec::with_capacity(coords.len()),
    };
    for &i in coords {
        let mut plus = point.to_vec();
        plus[i] += h;
        let mut minus = point.to_vec();
        minus[i] -= h;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * h);
        let analytic = full_grad[i];
        let err = relative_error(analytic, numeric);
        if err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst_index = i;
        }
        report.analytic.push(analytic);
        report.numeric.push(numeric);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_function_is_exact() {
        let err = gradient_check(
            |tape, theta| {
                let w = tape.constant(Tensor::new([3], vec![0.5, -1.25, 2.0]).unwrap());
                Ok(theta.mul(w)?.sum_all())
            },
            &[0.3, -0.7, 1.1],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn rejects_non_positive_step() {
        assert!(gradient_check(|_, t| Ok(t.sum_all()), &[1.0], 0.0).is_err());
    }

    #[test]
    fn non_finite_objective_errors() {
        // 1e400 overflows
        let r = gradient_check(|_, t| Ok(t.scale(1e200).squared_norm()), &[1e200], 1e-5);
        assert!(matches!(r, Err(Error::NonFinite(_))));
    }
}
