//! Finite-difference verification of tape gradients.

use super::matrix::Matrix;
use super::tape::{Tape, Var};
use super::DiffError;

/// Entries whose analytic and numeric gradients are both below this are
/// under the finite-difference noise floor and compare as exact.
const FD_FLOOR: f64 = 1e-8;

/// Compare the tape gradient of a scalar-valued function against central
/// finite differences, entry by entry, and return the worst relative error.
///
/// `f` rebuilds the computation on the tape it is given and returns the
/// (1x1) loss variable. Relative error uses max(|analytic|, |numeric|,
/// 1e-6) as the denominator; entries where both magnitudes sit below the
/// difference-quotient resolution count as zero error.
pub fn grad_check<F>(f: F, x: &Matrix, eps: f64) -> Result<f64, DiffError>
where
    F: Fn(&mut Tape, Var) -> Result<Var, DiffError>,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(DiffError::Domain(format!("eps {eps} outside [1e-7, 1e-3]")));
    }

    let mut tape = Tape::new();
    let var = tape.leaf(x.clone());
    let loss = f(&mut tape, var)?;
    let base = tape.value(loss).scalar()?;
    if !base.is_finite() {
        return Err(DiffError::NonFinite("function value not finite at x".into()));
    }
    let analytic = tape.backward(loss)?.wrt(var);

    let eval = |probe: &Matrix| -> Result<f64, DiffError> {
        let mut t = Tape::new();
        let v = t.leaf(probe.clone());
        let l = f(&mut t, v)?;
        let value = t.value(l).scalar()?;
        if !value.is_finite() {
            return Err(DiffError::NonFinite("function value not finite at probe point".into()));
        }
        Ok(value)
    };

    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let mut plus = x.clone();
        plus.data_mut()[i] += eps;
        let mut minus = x.clone();
        minus.data_mut()[i] -= eps;
        let numeric = (eval(&plus)? - eval(&minus)?) / (2.0 * eps);
        let a = analytic.data()[i];
        if a.abs() < FD_FLOOR && numeric.abs() < FD_FLOOR {
            continue;
        }
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    Ok(worst)
}
