use crate::error::{Error, Result};

/// Coefficients `B_{2k} / (2k)` of the asymptotic series for k = 1..=8.
const ASYMPTOTIC: [f64; 8] = [
    1.0 / 12.0,
    -1.0 / 120.0,
    1.0 / 252.0,
    -1.0 / 240.0,
    1.0 / 132.0,
    -691.0 / 32760.0,
    1.0 / 12.0,
    -3617.0 / 8160.0,
];

/// Below this argument the series is not used; the recurrence shifts upward first.
const SERIES_THRESHOLD: f64 = 6.0;

/// Digamma function `d/dx log Gamma(x)` for `x > 0`.
///
/// Shifts `x` above 6 with `psi(x) = psi(x + 1) - 1/x`, then evaluates the
/// eight-term asymptotic expansion.
pub fn digamma(x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::Domain {
            function: "digamma",
            value: x,
        });
    }
    let mut shift = 0.0;
    let mut z = x;
    while z < SERIES_THRESHOLD {
        shift += 1.0 / z;
        z += 1.0;
    }
    let inv2 = 1.0 / (z * z);
    // Horner in 1/z^2: sum_k c_k z^{-2k}
    let mut series = 0.0;
    for c in ASYMPTOTIC.iter().rev() {
        series = (series + c) * inv2;
    }
    Ok(z.ln() - 0.5 / z - series - shift)
}
