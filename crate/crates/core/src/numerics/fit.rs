use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LogLogFit {
    pub slope: f64,
    pub intercept: f64,
}

/// Ordinary least squares of `ln y` against `ln x`.
pub fn fit_loglog_slope(points: &[(f64, f64)]) -> Result<LogLogFit> {
    if points.len() < 2 {
        return Err(Error::TooFewPoints(points.len()));
    }
    if let Some(&(x, y)) = points.iter().find(|(x, y)| !(*x > 0.0 && *y > 0.0)) {
        return Err(Error::NonPositivePoint(x, y));
    }
    let n = points.len() as f64;
    let (mut sx, mut sy) = (0.0, 0.0);
    for &(x, y) in points {
        sx += libm::log(x);
        sy += libm::log(y);
    }
    let (mx, my) = (sx / n, sy / n);
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for &(x, y) in points {
        let dx = libm::log(x) - mx;
        sxx += dx * dx;
        sxy += dx * (libm::log(y) - my);
    }
    if sxx <= 1e-300 {
        return Err(Error::DegenerateFit);
    }
    let slope = sxy / sxx;
    Ok(LogLogFit {
        slope,
        intercept: my - slope * mx,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_power_law() {
        let fit = fit_loglog_slope(&[(1.0, 1.0), (10.0, 0.1)]).unwrap();
        assert!((fit.slope + 1.0).abs() < 1e-12);
        assert!(fit.intercept.abs() < 1e-12);
    }

    #[test]
    fn constant_has_zero_slope() {
        let fit = fit_loglog_slope(&[(1.0, 2.0), (2.0, 2.0), (4.0, 2.0)]).unwrap();
        assert!(fit.slope.abs() < 1e-12);
        assert!((fit.intercept - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn synthetic_inverse_law() {
        let pts: alloc::vec::Vec<_> = [0.01, 0.02, 0.05, 0.1].iter().map(|&e| (e, 3.0 / e)).collect();
        assert!((fit_loglog_slope(&pts).unwrap().slope + 1.0).abs() < 1e-12);
    }

    #[test]
    fn error_paths() {
        assert_eq!(fit_loglog_slope(&[(1.0, 1.0)]), Err(Error::TooFewPoints(1)));
        assert_eq!(fit_loglog_slope(&[(3.0, 1.0), (3.0, 2.0)]), Err(Error::DegenerateFit));
        assert_eq!(
            fit_loglog_slope(&[(1.0, 1.0), (0.0, 2.0)]),
            Err(Error::NonPositivePoint(0.0, 2.0))
        );
    }
}
