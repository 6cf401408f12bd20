use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Result of comparing the tape gradient with central differences.
#[derive(Clone, Debug)]
pub struct GradCheck {
    /// max over checked coordinates of |analytic − numeric| / max(1, |analytic|).
    pub max_rel_error: f64,
    /// Coordinates skipped because the one-sided slopes disagree (a kink,
    /// e.g. ‖v‖^β at v = 0 for β < 2).
    pub excluded: Vec<usize>,
    pub checked: usize,
}

/// Slopes from the left and right must agree to this (relative) for a
/// coordinate to count as differentiable.
const KINK_TOLERANCE: f64 = 1e-3;

/// Checks the reverse-mode gradient of the scalar function `f` at `x`
/// against central differences with step `h`.
pub fn finite_diff_check<F>(f: F, x: &Tensor, h: f64) -> Result<GradCheck>
where
    F: for<'t> Fn(Var<'t>) -> Result<Var<'t>>,
{
    if !(h > 0.0) {
        return Err(Error::config(format!("finite-difference step must be > 0, got {h}")));
    }
    let analytic = {
        let tape = Tape::new();
        let leaf = tape.leaf(x.clone());
        let root = f(leaf).map_err(|e| Error::Evaluation(e.to_string()))?;
        tape.backward(root)?.get(leaf)
    };
    let eval = |t: &Tensor| -> Result<f64> {
        let tape = Tape::new();
        let v = f(tape.constant(t.clone())).map_err(|e| Error::Evaluation(e.to_string()))?;
        let y = v.item()?;
        if !y.is_finite() {
            return Err(Error::Evaluation(format!("f evaluated to {y}")));
        }
        Ok(y)
    };

    let f0 = eval(x)?;
    let mut probe = x.clone();
    let mut max_rel_error: f64 = 0.0;
    let mut excluded = Vec::new();
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        // Steps as actually represented after rounding orig ± h.
        let (up, down) = (orig + h, orig - h);
        probe.data_mut()[i] = up;
        let fp = eval(&probe)?;
        probe.data_mut()[i] = down;
        let fm = eval(&probe)?;
        probe.data_mut()[i] = orig;

        let central = (fp - fm) / (up - down);
        let right = (fp - f0) / (up - orig);
        let left = (f0 - fm) / (orig - down);
        if (right - left).abs() > KINK_TOLERANCE * central.abs().max(1.0) {
            excluded.push(i);
            continue;
        }
        let a = analytic.data()[i];
        let rel = (a - central).abs() / a.abs().max(1.0);
        max_rel_error = max_rel_error.max(rel);
    }
    Ok(GradCheck {
        max_rel_error,
        checked: x.numel() - excluded.len(),
        excluded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_is_exact() {
        let x = Tensor::new(vec![2, 3], vec![0.1, -0.4, 2.0, 3.3, -1.0, 0.5]).unwrap();
        for h in [1e-3, 1e-2] {
            let r = finite_diff_check(|v| v.sum(), &x, h).unwrap();
            assert!(r.max_rel_error <= 1e-10, "{}", r.max_rel_error);
            assert!(r.excluded.is_empty());
        }
        let r = finite_diff_check(|v| v.sum(), &x, 1e-6).unwrap();
        assert!(r.max_rel_error <= 1e-8, "{}", r.max_rel_error);
        assert!(r.excluded.is_empty());
    }

    #[test]
    fn squared_norm_is_near_exact() {
        let x = Tensor::vector(&[1.0, 2.0, 3.0]);
        let r = finite_diff_check(|v| v.pow_norm(2.0), &x, 1e-6).unwrap();
        assert!(r.max_rel_error <= 1e-8, "{}", r.max_rel_error);
    }

    #[test]
    fn norm_singularity_is_excluded_not_failed() {
        // ‖v‖ with v at the origin: every coordinate is a kink.
        let x = Tensor::vector(&[0.0, 0.0]);
        let r = finite_diff_check(|v| v.pow_norm(1.0), &x, 1e-6).unwrap();
        assert_eq!(r.excluded, vec![0, 1]);
        assert_eq!(r.checked, 0);
    }

    #[test]
    fn non_finite_evaluation_is_error() {
        let x = Tensor::vector(&[0.0]);
        let r = finite_diff_check(|v| v.log(), &x, 1e-6);
        assert!(matches!(r, Err(Error::Evaluation(_))));
    }
}
