//! Log-space accumulation helpers.

/// `ln(exp(a) + exp(b))` without overflow; negative infinity is the additive identity.
#[inline]
pub fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    if a > b {
        a + (b - a).exp().ln_1p()
    } else {
        b + (a - b).exp().ln_1p()
    }
}

/// Max-shifted log-sum-exp over a slice. Empty input yields negative infinity.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let sum: f64 = values.iter().map(|&v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Normalises a score vector in place into log-probabilities.
pub fn log_softmax_in_place(scores: &mut [f64]) {
    let norm = log_sum_exp(scores);
    for s in scores.iter_mut() {
        *s -= norm;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_add_matches_direct_sum() {
        let got = log_add(0.5f64.ln(), 0.25f64.ln());
        assert!((got - 0.75f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn log_add_identity() {
        assert_eq!(log_add(f64::NEG_INFINITY, -3.0), -3.0);
        assert_eq!(log_add(-3.0, f64::NEG_INFINITY), -3.0);
        assert_eq!(log_add(f64::NEG_INFINITY, f64::NEG_INFINITY), f64::NEG_INFINITY);
    }

    #[test]
    fn log_add_large_values() {
        // ln(e^1234 + e^1232) = 1232 + ln(e^2 + 1)
        let got = log_add(1234.0, 1232.0);
        assert!((got - (1232.0 + (2f64.exp() + 1.0).ln())).abs() < 1e-12);
    }

    #[test]
    fn log_sum_exp_empty_and_all_neg_inf() {
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY; 3]), f64::NEG_INFINITY);
    }

    #[test]
    fn log_softmax_normalises() {
        let mut v = vec![1.0, 2.0, 3.0];
        log_softmax_in_place(&mut v);
        let total: f64 = v.iter().map(|x| x.exp()).sum();
        assert!((total - 1.0).abs() < 1e-15);
    }
}
