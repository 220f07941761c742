//! Diff-stable number formatting for CSV, JSON and SVG artifacts.

/// Rounds to 12 significant digits and prints the shortest decimal that
/// round-trips the rounded value.
pub fn fmt12(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return if x.is_nan() {
            "NaN".to_string()
        } else if x > 0.0 {
            "inf".to_string()
        } else {
            "-inf".to_string()
        };
    }
    let rounded: f64 = format!("{:.11e}", x).parse().unwrap_or(x);
    let a = rounded.abs();
    if !(1e-6..1e15).contains(&a) {
        format!("{:e}", rounded)
    } else {
        format!("{}", rounded)
    }
}

/// Rounds a value to 12 significant digits.
pub fn round12(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{:.11e}", x).parse().unwrap_or(x)
}

pub fn fmt_vec(v: &[f64], sep: &str) -> String {
    v.iter().map(|x| fmt12(*x)).collect::<Vec<_>>().join(sep)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn twelve_digits() {
        assert_eq!(fmt12(1.0), "1");
        assert_eq!(fmt12(-0.5), "-0.5");
        assert_eq!(fmt12(std::f64::consts::PI), "3.14159265359");
        assert_eq!(fmt12(1.0 / 3.0), "0.333333333333");
        assert_eq!(fmt12(1e-20), "1e-20");
        assert_eq!(fmt12(-2.5e17), "-2.5e17");
        assert_eq!(fmt12(0.1 + 0.2), "0.3");
    }
}
