//! Scalar math that works with and without `std`.

use num_traits::Float;

#[inline]
pub fn exp(x: f64) -> f64 {
    Float::exp(x)
}

#[inline]
pub fn ln(x: f64) -> f64 {
    Float::ln(x)
}

#[inline]
pub fn tanh(x: f64) -> f64 {
    Float::tanh(x)
}

#[inline]
pub fn sqrt(x: f64) -> f64 {
    Float::sqrt(x)
}

#[inline]
pub fn ceil(x: f64) -> f64 {
    Float::ceil(x)
}

#[inline]
pub fn powi(x: f64, n: i32) -> f64 {
    Float::powi(x, n)
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + exp(-x))
    } else {
        let e = exp(x);
        e / (1.0 + e)
    }
}

/// Floor used for log-probabilities of impossible states.
pub const LOG_ZERO: f64 = -1e30;

#[inline]
pub fn log_add(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    if lo <= LOG_ZERO {
        return hi;
    }
    hi + ln(1.0 + exp(lo - hi))
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY || m <= LOG_ZERO {
        return m.max(LOG_ZERO);
    }
    m + ln(xs.iter().map(|&x| exp(x - m)).sum::<f64>())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_is_symmetric() {
        assert_eq!(sigmoid(0.0), 0.5);
        for x in [0.3, 2.0, 11.0, 40.0] {
            assert!((sigmoid(x) + sigmoid(-x) - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn log_add_handles_floor() {
        assert_eq!(log_add(LOG_ZERO, -2.0), -2.0);
        assert!((log_add(ln(0.25), ln(0.5)) - ln(0.75)).abs() < 1e-15);
        assert!((log_sum_exp(&[0.0, 0.0]) - ln(2.0)).abs() < 1e-15);
    }
}
