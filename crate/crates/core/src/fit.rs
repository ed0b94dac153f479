//! Least-squares line fits, used for convergence rates and boundary exponents.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    /// Half-width of the 95% confidence interval on the slope.
    pub slope_ci95: f64,
    pub r2: f64,
    pub points: usize,
}

pub fn fit_line(x: &[f64], y: &[f64]) -> Result<LineFit> {
    if x.len() != y.len() {
        return Err(Error::InvalidParameter("fit abscissae and ordinates differ in length".into()));
    }
    let n = x.len();
    if n < 3 {
        return Err(Error::InvalidParameter(format!("a line fit needs at least 3 points, got {n}")));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("fit data"));
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidParameter("fit abscissae are all equal".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let r2 = if syy == 0.0 { 1.0 } else { 1.0 - sse / syy };
    let dof = nf - 2.0;
    let se = (sse / dof / sxx).sqrt();
    let t = if dof > 0.0 {
        StudentsT::new(0.0, 1.0, dof)
            .map_err(|e| Error::InvalidParameter(e.to_string()))?
            .inverse_cdf(0.975)
    } else {
        f64::INFINITY
    };
    Ok(LineFit {
        slope,
        intercept,
        slope_ci95: t * se,
        r2,
        points: n,
    })
}

/// Fit `log y = rate · log x + c`; all inputs must be positive.
pub fn fit_power_law(x: &[f64], y: &[f64]) -> Result<LineFit> {
    if x.iter().chain(y).any(|&v| v <= 0.0) {
        return Err(Error::InvalidParameter("power-law fit needs positive data".into()));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    fit_line(&lx, &ly)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn exact_power_law() {
        let x: Vec<f64> = (1..=6).map(|k| 2f64.powi(-k)).collect();
        let y: Vec<f64> = x.iter().map(|v| 3.0 * v * v).collect();
        let f = fit_power_law(&x, &y).unwrap();
        assert!((f.slope - 2.0).abs() < 1e-12);
        assert!((f.intercept - 3f64.ln()).abs() < 1e-12);
        assert!(f.r2 > 1.0 - 1e-12);
        assert!(f.slope_ci95 < 1e-10);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(fit_line(&[1.0, 2.0], &[1.0, 2.0]).is_err());
        assert!(fit_line(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).is_err());
        assert!(fit_power_law(&[1.0, 2.0, 3.0], &[1.0, 0.0, 3.0]).is_err());
    }

    #[test]
    fn noisy_fit_has_positive_interval() {
        let x = [0.0, 1.0, 2.0, 3.0, 4.0];
        let y = [0.1, 0.9, 2.2, 2.8, 4.1];
        let f = fit_line(&x, &y).unwrap();
        assert!(f.slope_ci95 > 0.0 && (f.slope - 1.0).abs() < f.slope_ci95);
        assert!(f.r2 > 0.9 && f.r2 < 1.0);
    }

    proptest! {
        #[test]
        fn recovers_any_line(a in -5.0f64..5.0, b in -5.0f64..5.0) {
            let x: Vec<f64> = (0..7).map(|k| k as f64 * 0.5).collect();
            let y: Vec<f64> = x.iter().map(|v| a * v + b).collect();
            let f = fit_line(&x, &y).unwrap();
            prop_assert!((f.slope - a).abs() < 1e-9);
            prop_assert!((f.intercept - b).abs() < 1e-9);
        }
    }
}
