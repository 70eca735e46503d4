//! Stable log-domain primitives for the lattice dynamic programs.

use crate::error::{Error, Result};

/// Log of probability zero.
pub const LOG_ZERO: f64 = f64::NEG_INFINITY;

/// log(exp(a) + exp(b)) with the max-shift trick. Total on the extended
/// reals: log-zero inputs are absorbed instead of producing NaN.
#[inline]
pub fn log_add(a: f64, b: f64) -> f64 {
    if a == LOG_ZERO {
        return b;
    }
    if b == LOG_ZERO {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// log(sum_i exp(v_i)) via max-shift. Returns log-zero on empty input or
/// when every input is log-zero.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(LOG_ZERO, f64::max);
    if max == LOG_ZERO {
        return LOG_ZERO;
    }
    let sum: f64 = values.iter().map(|&v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Log-probabilities from logits. Shift-invariant; the exponentials of the
/// output sum to one. Non-finite logits are rejected.
pub fn log_softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::invalid("log_softmax on empty input"));
    }
    if !logits.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("log_softmax input".into()));
    }
    Ok(log_softmax_unchecked(logits))
}

/// Internal variant for hot paths that already guarantee finite input.
pub(crate) fn log_softmax_unchecked(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse: f64 = logits.iter().map(|&v| (v - max).exp()).sum::<f64>().ln() + max;
    logits.iter().map(|&v| v - lse).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lse_two_halves_is_log_one() {
        let half = 0.5f64.ln();
        assert!((log_sum_exp(&[half, half]) - 0.0).abs() < 1e-15);
    }

    #[test]
    fn lse_empty_support() {
        assert_eq!(log_sum_exp(&[LOG_ZERO, LOG_ZERO]), LOG_ZERO);
        assert_eq!(log_sum_exp(&[]), LOG_ZERO);
    }

    #[test]
    fn lse_matches_linear_domain_sum() {
        let vals = [0.0, -1.0, -2.0];
        let direct = vals.iter().map(|v| v.exp()).sum::<f64>().ln();
        assert!((log_sum_exp(&vals) - direct).abs() < 1e-14);
        assert!((log_sum_exp(&vals) - 0.407_605_964_444_38).abs() < 1e-12);
    }

    #[test]
    fn log_add_guards_log_zero() {
        assert_eq!(log_add(LOG_ZERO, -1.5), -1.5);
        assert_eq!(log_add(-1.5, LOG_ZERO), -1.5);
        assert_eq!(log_add(LOG_ZERO, LOG_ZERO), LOG_ZERO);
    }

    #[test]
    fn log_softmax_symmetry_and_uniform() {
        for c in [-3.0, 0.0, 7.25] {
            let out = log_softmax(&[c, c]).unwrap();
            assert!((out[0] - 0.5f64.ln()).abs() < 1e-15);
            assert!((out[1] - 0.5f64.ln()).abs() < 1e-15);
        }
        let out = log_softmax(&[0.0; 4]).unwrap();
        for v in out {
            assert!((v - 0.25f64.ln()).abs() < 1e-15);
        }
    }

    #[test]
    fn log_softmax_direct_computation() {
        let out = log_softmax(&[1.0, 2.0, 3.0]).unwrap();
        let z: f64 = [1.0f64, 2.0, 3.0].iter().map(|v| v.exp()).sum();
        for (i, &v) in out.iter().enumerate() {
            assert!((v - ((i as f64 + 1.0) - z.ln())).abs() < 1e-12);
        }
        assert!((out[0] + 2.407_605_964_4).abs() < 1e-9);
        assert!((out[2] + 0.407_605_964_4).abs() < 1e-9);
    }

    #[test]
    fn log_softmax_rejects_non_finite() {
        assert!(log_softmax(&[1.0, f64::NAN]).is_err());
        assert!(log_softmax(&[1.0, f64::INFINITY]).is_err());
    }
}
