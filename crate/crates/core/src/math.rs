//! Log-domain helpers.

/// Sentinel for impossible or pruned hypotheses.
pub const LOG_ZERO: f64 = f64::NEG_INFINITY;

/// `ln(exp(a) + exp(b))` without overflow. Returns `LOG_ZERO` when both
/// arguments are `LOG_ZERO`.
#[inline]
pub fn log_add(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if hi == LOG_ZERO {
        return LOG_ZERO;
    }
    if hi == f64::INFINITY {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

/// `ln(Σ exp(x))` over an iterator, stable for any mix of finite values and
/// `LOG_ZERO`. Empty input gives `LOG_ZERO`.
pub fn log_sum_exp<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let values: Vec<f64> = values.into_iter().collect();
    let max = values.iter().copied().fold(LOG_ZERO, f64::max);
    if max == LOG_ZERO || !max.is_finite() {
        return max;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}
