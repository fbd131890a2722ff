use std::fmt;

/// A bad flag value or flag combination, reported with exit status 64.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// Positive real given as a decimal, `sqrt(x)` or `√x`.
pub fn parse_real(s: &str) -> Result<f64, String> {
    let t = s.trim();
    let inner = t
        .strip_prefix("sqrt(")
        .and_then(|r| r.strip_suffix(')'))
        .or_else(|| t.strip_prefix('√'));
    let v = match inner {
        Some(x) => x.trim().parse::<f64>().map_err(|e| format!("{s:?}: {e}"))?.sqrt(),
        None => t.parse::<f64>().map_err(|e| format!("{s:?}: {e}"))?,
    };
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(format!("{s:?} is not a positive finite number"))
    }
}

/// Like [`parse_real`], but a decimal whose square is within a relative
/// 1e-6 of an integer `m` is read as `√m`, so `2.2360679` and `sqrt(5)`
/// select the same window.
pub fn parse_kcut(s: &str) -> Result<f64, String> {
    let v = parse_real(s)?;
    let m = (v * v).round();
    if m >= 1.0 && (v * v - m).abs() <= 1e-6 * m {
        Ok(m.sqrt())
    } else {
        Ok(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kcut_forms() {
        let r5 = 5f64.sqrt();
        assert_eq!(parse_kcut("sqrt(5)").unwrap(), r5);
        assert_eq!(parse_kcut("√5").unwrap(), r5);
        assert_eq!(parse_kcut("2.2360679").unwrap(), r5);
        assert_eq!(parse_kcut("2.5").unwrap(), 2.5);
        assert!(parse_kcut("-1").is_err());
        assert!(parse_kcut("sqrt(x)").is_err());
    }
}
