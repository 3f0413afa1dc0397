//! Text formats: the model file, query strings, and result rendering.

mod lexer;
mod model;
mod query;
mod render;
mod serialize;

pub use model::{parse_model, ModelFile};
pub use query::{parse_query, Query, QueryOptions, QuerySpec};
pub use render::{constraint_equations, render_distribution, render_value, Format};
pub use serialize::serialize_model;

/// Shortest decimal form that agrees with `x` to 12 significant digits.
pub fn fmt_num(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    // x rounded to 12 significant digits is the value we must reproduce
    let target: f64 = format!("{x:.11e}").parse().unwrap();
    for prec in 0..=11usize {
        let sci = format!("{target:.*e}", prec);
        let back: f64 = sci.parse().unwrap();
        if format!("{back:.11e}") == format!("{target:.11e}") {
            return to_plain(&sci);
        }
    }
    to_plain(&format!("{target:.11e}"))
}

/// Rewrites `d.ddde<exp>` as a plain decimal when the exponent is moderate.
fn to_plain(sci: &str) -> String {
    let (mantissa, exp) = match sci.split_once('e') {
        Some((m, e)) => (m, e.parse::<i32>().unwrap_or(0)),
        None => return sci.to_string(),
    };
    if !(-5..15).contains(&exp) {
        return sci.to_string();
    }
    let neg = mantissa.starts_with('-');
    let digits: String = mantissa.trim_start_matches('-').replace('.', "");
    let point = 1 + exp; // digits before the decimal point
    let mut out = String::new();
    if neg {
        out.push('-');
    }
    if point <= 0 {
        out.push_str("0.");
        out.push_str(&"0".repeat((-point) as usize));
        out.push_str(&digits);
    } else if (point as usize) >= digits.len() {
        out.push_str(&digits);
        out.push_str(&"0".repeat(point as usize - digits.len()));
    } else {
        out.push_str(&digits[..point as usize]);
        out.push('.');
        out.push_str(&digits[point as usize..]);
    }
    if out.contains('.') {
        out = out.trim_end_matches('0').trim_end_matches('.').to_string();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::fmt_num;

    #[test]
    fn formats_round_values_plainly() {
        assert_eq!(fmt_num(0.0), "0");
        assert_eq!(fmt_num(1.0), "1");
        assert_eq!(fmt_num(-3.0), "-3");
        assert_eq!(fmt_num(0.5), "0.5");
        assert_eq!(fmt_num(1.5), "1.5");
        assert_eq!(fmt_num(100.0), "100");
    }

    #[test]
    fn twelve_significant_digits() {
        let x = 1.0 / 3.0;
        let s = fmt_num(x);
        let back: f64 = s.parse().unwrap();
        assert!((back - x).abs() < 1e-12);
        assert!(s.len() <= 14, "{s}");
    }

    #[test]
    fn round_trips_representative_values() {
        for &x in &[0.1, 0.025, 2.0f64.sqrt(), -1e-7, 3.25e12, 0.3333333333333333] {
            let back: f64 = fmt_num(x).parse().unwrap();
            let scale = x.abs().max(1e-300);
            assert!((back - x).abs() / scale < 1e-11, "{x} -> {}", fmt_num(x));
        }
    }
}
