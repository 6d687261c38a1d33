//! Human-readable numbers for terminal summaries.

/// `v` rounded to six significant digits.
pub fn sig6(v: f64) -> String {
    if !v.is_finite() {
        return format!("{v}");
    }
    if v == 0.0 {
        return "0".into();
    }
    let exp = v.abs().log10().floor() as i32;
    if !(-4..6).contains(&exp) {
        return format!("{v:.5e}");
    }
    let decimals = (5 - exp).max(0) as usize;
    format!("{v:.decimals$}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_significant_digits() {
        assert_eq!(sig6(0.0), "0");
        assert_eq!(sig6(1.0 / 3.0), "0.333333");
        assert_eq!(sig6(123.456789), "123.457");
        assert_eq!(sig6(-2.5), "-2.50000");
        assert_eq!(sig6(1234567.0), "1.23457e6");
        assert_eq!(sig6(999999.0), "999999");
        assert_eq!(sig6(1.5e-7), "1.50000e-7");
    }
}
