//! Extended-precision scalar support: the precision policy shared by every
//! numeric routine, decimal parsing/formatting, a small deterministic RNG for
//! sampling suites, and least-squares helpers for slope fits.

use rug::Float;

use crate::error::{Error, Result};

/// Smallest mantissa size the engine accepts. Below this the cascades lose
/// meaning long before they lose renormalizability.
pub const MIN_BITS: u32 = 64;

/// Default working precision in mantissa bits.
pub const DEFAULT_BITS: u32 = 256;

/// Controls the working precision and the stopping rules of the monotone
/// inverse solver.
#[derive(Clone, Debug)]
pub struct PrecisionPolicy {
    bits: u32,
    inv_tol: Float,
    max_iter: usize,
}

impl PrecisionPolicy {
    /// Policy with the default tolerance `2^-(bits-16)` and iteration cap.
    pub fn new(bits: u32) -> Result<Self> {
        if bits < MIN_BITS {
            return Err(Error::Invalid(format!(
                "mantissa bits {bits} below minimum {MIN_BITS}"
            )));
        }
        let mut tol = Float::with_val(bits, 1);
        tol >>= bits - 16;
        // Bisection fallback needs about one iteration per mantissa bit.
        Ok(PrecisionPolicy {
            bits,
            inv_tol: tol,
            max_iter: 128 + 2 * bits as usize,
        })
    }

    pub fn with_tolerance(bits: u32, inv_tol: Float, max_iter: usize) -> Result<Self> {
        let base = Self::new(bits)?;
        if !(inv_tol > 0) || !(inv_tol < 1) {
            return Err(Error::Invalid(format!(
                "inverse tolerance {inv_tol} outside (0, 1)"
            )));
        }
        Ok(PrecisionPolicy {
            inv_tol,
            max_iter,
            ..base
        })
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn inv_tol(&self) -> &Float {
        &self.inv_tol
    }

    pub fn max_iter(&self) -> usize {
        self.max_iter
    }
}

impl Default for PrecisionPolicy {
    fn default() -> Self {
        PrecisionPolicy::new(DEFAULT_BITS).expect("default precision is valid")
    }
}

/// Shorthand for `Float::with_val(prec, v)`.
pub fn float(prec: u32, v: f64) -> Float {
    Float::with_val(prec, v)
}

/// Parses a decimal string (plain or scientific) at the given precision.
pub fn parse_dec(prec: u32, s: &str) -> Result<Float> {
    let parsed = Float::parse(s.trim())
        .map_err(|e| Error::Invalid(format!("cannot parse number {s:?}: {e}")))?;
    Ok(Float::with_val(prec, parsed))
}

/// Decimal digits sufficient to round-trip a float of `bits` mantissa bits.
pub fn roundtrip_digits(bits: u32) -> usize {
    (bits as f64 * std::f64::consts::LOG10_2).ceil() as usize + 2
}

/// Scientific-notation rendering with a fixed significant-digit count.
/// Output always carries an explicit exponent so CSV columns stay uniform.
pub fn fmt_sci(x: &Float, digits: usize) -> String {
    if x.is_nan() {
        return "nan".to_string();
    }
    if x.is_infinite() {
        return if *x < 0 { "-inf" } else { "inf" }.to_string();
    }
    let s = x.to_string_radix(10, Some(digits.max(2)));
    if s.contains('e') || s.contains('@') {
        s
    } else {
        format!("{s}e0")
    }
}

/// Full-precision decimal rendering, suitable for lossless JSON round-trips.
pub fn fmt_full(x: &Float) -> String {
    fmt_sci(x, roundtrip_digits(x.prec()))
}

/// SplitMix64: small deterministic generator for the sampling suites.
/// Cross-platform reproducible, which the CSV determinism contract needs.
#[derive(Clone, Debug)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }

    /// Uniform draw in `[0, 1)` with 53 random bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw in `[lo, hi)`.
    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }
}

/// Ordinary least squares for `y = slope * x + intercept`.
/// Returns `(slope, intercept, rms_residual)`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Result<(f64, f64, f64)> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "linear fit needs >= 2 points, got {}",
            xs.len()
        )));
    }
    let n = xs.len() as f64;
    let sx: f64 = xs.iter().sum();
    let sy: f64 = ys.iter().sum();
    let sxx: f64 = xs.iter().map(|x| x * x).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| x * y).sum();
    let denom = n * sxx - sx * sx;
    if denom.abs() < f64::EPSILON * n * sxx.abs().max(1.0) {
        return Err(Error::InsufficientData(
            "degenerate abscissae in linear fit".to_string(),
        ));
    }
    let slope = (n * sxy - sx * sy) / denom;
    let intercept = (sy - slope * sx) / n;
    let mut ss = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        let r = y - (slope * x + intercept);
        ss += r * r;
    }
    Ok((slope, intercept, (ss / n).sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn policy_rejects_small_mantissa() {
        assert!(PrecisionPolicy::new(32).is_err());
        assert!(PrecisionPolicy::new(64).is_ok());
    }

    #[test]
    fn policy_default_tolerance() {
        let p = PrecisionPolicy::new(256).unwrap();
        let expected = Float::with_val(256, Float::i_exp(1, -240));
        assert_eq!(*p.inv_tol(), expected);
    }

    #[test]
    fn parse_and_format_round_trip() {
        let x = parse_dec(256, "4.1666666666666666666666666666666666e-1").unwrap();
        let s = fmt_full(&x);
        let y = parse_dec(256, &s).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn fmt_sci_always_has_exponent() {
        let one = float(128, 1.0);
        assert!(fmt_sci(&one, 10).contains('e'));
        let tiny = parse_dec(128, "1e-3000").unwrap();
        assert!(fmt_sci(&tiny, 10).contains("e-3000"));
    }

    #[test]
    fn splitmix_is_deterministic() {
        let mut a = SplitMix64::new(7);
        let mut b = SplitMix64::new(7);
        for _ in 0..16 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
        let u = SplitMix64::new(9).next_f64();
        assert!((0.0..1.0).contains(&u));
    }

    #[test]
    fn linear_fit_recovers_line() {
        let xs: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| -0.7 * x + 2.0).collect();
        let (slope, intercept, rms) = linear_fit(&xs, &ys).unwrap();
        assert!((slope + 0.7).abs() < 1e-12);
        assert!((intercept - 2.0).abs() < 1e-12);
        assert!(rms < 1e-12);
    }
}
