//! Univariate linear calibration of climate on a chronology.
//!
//! Classical calibration regresses z on x and inverts the fitted line;
//! inverse calibration regresses x on z directly. Inverse predictions are
//! shrunk toward the calibration-period climate mean by the factor r².

use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::stats;

const SLOPE_TOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum CalibrateError {
    #[error("need at least 3 calibration pairs, have {0}")]
    TooFewPairs(usize),
    #[error("calibration slope {0:.3e} is below tolerance; inversion is ill-conditioned")]
    IllConditioned(f64),
    #[error("chronology has zero variance over the calibration period")]
    ZeroVariance,
    #[error("calibration inputs contain non-finite values")]
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum CalibMethod {
    Classical,
    Inverse,
}

#[derive(Debug, Clone)]
pub struct CalibrationFit {
    pub method: CalibMethod,
    pub intercept: f64,
    pub slope: f64,
    pub residual_sd: f64,
    pub n_cal: usize,
    pub x_bar: f64,
    pub z_bar: f64,
    /// Centered sum of squares of the regressor (x for classical, z for inverse).
    pub s_reg: f64,
    pub r2: f64,
    pub slope_se: f64,
    pub slope_p: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct Prediction {
    pub xhat: f64,
    pub lo95: f64,
    pub hi95: f64,
}

fn check_inputs(z_obs: &[f64], x_obs: &[f64]) -> Result<(), CalibrateError> {
    if z_obs.len() != x_obs.len() || z_obs.len() < 3 {
        return Err(CalibrateError::TooFewPairs(z_obs.len().min(x_obs.len())));
    }
    if z_obs.iter().chain(x_obs).any(|v| !v.is_finite()) {
        return Err(CalibrateError::NonFinite);
    }
    Ok(())
}

fn fit_line(
    reg: &[f64],
    resp: &[f64],
) -> (f64, f64, f64, f64, f64, f64) {
    // returns (intercept, slope, residual_sd, s_reg, slope_se, slope_p)
    let n = reg.len();
    let (b0, b1) = stats::ols(reg, resp);
    let m = stats::mean(reg);
    let s_reg: f64 = reg.iter().map(|r| (r - m) * (r - m)).sum();
    let rss: f64 = reg
        .iter()
        .zip(resp)
        .map(|(r, y)| {
            let e = y - b0 - b1 * r;
            e * e
        })
        .sum();
    let df = (n - 2) as f64;
    let s = (rss / df).sqrt();
    let se = s / s_reg.sqrt();
    let tstat = b1 / se;
    let p = if tstat.is_finite() {
        let tdist = StudentsT::new(0.0, 1.0, df).expect("valid t distribution");
        2.0 * (1.0 - tdist.cdf(tstat.abs()))
    } else if b1 == 0.0 {
        // degenerate fit: flat response measured without noise
        1.0
    } else {
        0.0
    };
    (b0, b1, s, s_reg, se, p)
}

/// Classical calibration: OLS of z on x, prediction by inversion.
pub fn fit_classical(z_obs: &[f64], x_obs: &[f64]) -> Result<CalibrationFit, CalibrateError> {
    check_inputs(z_obs, x_obs)?;
    let (b0, b1, s, s_xx, se, p) = fit_line(x_obs, z_obs);
    if b1.abs() < SLOPE_TOL {
        return Err(CalibrateError::IllConditioned(b1));
    }
    Ok(CalibrationFit {
        method: CalibMethod::Classical,
        intercept: b0,
        slope: b1,
        residual_sd: s,
        n_cal: z_obs.len(),
        x_bar: stats::mean(x_obs),
        z_bar: stats::mean(z_obs),
        s_reg: s_xx,
        r2: stats::correlation(z_obs, x_obs).powi(2),
        slope_se: se,
        slope_p: p,
    })
}

/// Inverse calibration: OLS of x on z.
pub fn fit_inverse(z_obs: &[f64], x_obs: &[f64]) -> Result<CalibrationFit, CalibrateError> {
    check_inputs(z_obs, x_obs)?;
    let zm = stats::mean(z_obs);
    if z_obs.iter().all(|z| (z - zm).abs() < SLOPE_TOL) {
        return Err(CalibrateError::ZeroVariance);
    }
    let (c0, c1, s, s_zz, se, p) = fit_line(z_obs, x_obs);
    Ok(CalibrationFit {
        method: CalibMethod::Inverse,
        intercept: c0,
        slope: c1,
        residual_sd: s,
        n_cal: z_obs.len(),
        x_bar: stats::mean(x_obs),
        z_bar: zm,
        s_reg: s_zz,
        r2: stats::correlation(z_obs, x_obs).powi(2),
        slope_se: se,
        slope_p: p,
    })
}

/// Point prediction for one chronology value.
pub fn point_predict(fit: &CalibrationFit, z: f64) -> f64 {
    match fit.method {
        CalibMethod::Classical => (z - fit.intercept) / fit.slope,
        CalibMethod::Inverse => fit.intercept + fit.slope * z,
    }
}

/// Predictions with 95% intervals: inverted prediction band for classical
/// (Fieller-type), standard regression prediction interval for inverse.
pub fn predict(fit: &CalibrationFit, z_mis: &[f64]) -> Vec<Prediction> {
    predict_with_level(fit, z_mis, 0.95)
}

/// Same as `predict` at an arbitrary central coverage level.
pub fn predict_with_level(fit: &CalibrationFit, z_mis: &[f64], level: f64) -> Vec<Prediction> {
    assert!(level > 0.0 && level < 1.0);
    let df = (fit.n_cal - 2) as f64;
    let tdist = StudentsT::new(0.0, 1.0, df).expect("valid t distribution");
    let tq = tdist.inverse_cdf(0.5 + level / 2.0);
    z_mis
        .iter()
        .map(|&z| {
            let xhat = point_predict(fit, z);
            match fit.method {
                CalibMethod::Inverse => {
                    let half = tq
                        * fit.residual_sd
                        * (1.0 + 1.0 / fit.n_cal as f64
                            + (z - fit.z_bar).powi(2) / fit.s_reg)
                            .sqrt();
                    Prediction {
                        xhat,
                        lo95: xhat - half,
                        hi95: xhat + half,
                    }
                }
                CalibMethod::Classical => classical_interval(fit, z, tq, xhat),
            }
        })
        .collect()
}

/// Invert the 95% prediction band of the z-on-x regression at observed z.
/// Solves the quadratic in u = x - x_bar from
/// (d - b1 u)^2 = t^2 s^2 (1 + 1/n + u^2 / s_xx).
fn classical_interval(fit: &CalibrationFit, z: f64, tq: f64, xhat: f64) -> Prediction {
    let t2s2 = (tq * fit.residual_sd).powi(2);
    let d = z - fit.z_bar;
    let a = fit.slope * fit.slope - t2s2 / fit.s_reg;
    let b = -2.0 * fit.slope * d;
    let c = d * d - t2s2 * (1.0 + 1.0 / fit.n_cal as f64);
    let disc = b * b - 4.0 * a * c;
    if a <= 0.0 || disc < 0.0 {
        // band does not invert to a finite interval (slope not significant
        // enough at this distance); report unbounded limits
        return Prediction {
            xhat,
            lo95: f64::NEG_INFINITY,
            hi95: f64::INFINITY,
        };
    }
    let sq = disc.sqrt();
    let u1 = (-b - sq) / (2.0 * a);
    let u2 = (-b + sq) / (2.0 * a);
    Prediction {
        xhat,
        lo95: fit.x_bar + u1.min(u2),
        hi95: fit.x_bar + u1.max(u2),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};

    fn synthetic(seed: u64, n: usize, slope: f64, noise: f64) -> (Vec<f64>, Vec<f64>) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let xnoise = Normal::new(0.0, 1.5).unwrap();
        let znoise = Normal::new(0.0, noise).unwrap();
        let x: Vec<f64> = (0..n).map(|_| 10.0 + xnoise.sample(&mut rng)).collect();
        let z: Vec<f64> = x
            .iter()
            .map(|x| 1.0 + slope * x + znoise.sample(&mut rng))
            .collect();
        (z, x)
    }

    #[test]
    fn classical_exact_line_inverts() {
        let x: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let z: Vec<f64> = x.iter().map(|x| 1.0 + 0.5 * x).collect();
        let fit = fit_classical(&z, &x).unwrap();
        assert_abs_diff_eq!(point_predict(&fit, 4.0), 6.0, epsilon = 1e-10);
    }

    #[test]
    fn classical_flat_data_errors() {
        let x: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let z = vec![2.0; 10];
        assert!(matches!(
            fit_classical(&z, &x),
            Err(CalibrateError::IllConditioned(_))
        ));
    }

    #[test]
    fn classical_slope_recovered_within_3se() {
        let (z, x) = synthetic(7, 50, 0.4, 0.1);
        let fit = fit_classical(&z, &x).unwrap();
        assert!(
            (fit.slope - 0.4).abs() < 3.0 * fit.slope_se,
            "slope {} se {}",
            fit.slope,
            fit.slope_se
        );
    }

    #[test]
    fn inverse_zero_variance_errors() {
        let z = vec![1.0; 10];
        let x: Vec<f64> = (0..10).map(|i| i as f64).collect();
        assert!(matches!(
            fit_inverse(&z, &x),
            Err(CalibrateError::ZeroVariance)
        ));
    }

    #[test]
    fn perfectly_correlated_estimators_coincide() {
        let x: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let z: Vec<f64> = x.iter().map(|x| 2.0 - 0.3 * x).collect();
        let cl = fit_classical(&z, &x).unwrap();
        let inv = fit_inverse(&z, &x).unwrap();
        for z0 in [z[3], z[11], -5.0, 10.0] {
            assert_abs_diff_eq!(
                point_predict(&cl, z0),
                point_predict(&inv, z0),
                epsilon = 1e-8
            );
        }
    }

    #[test]
    fn shrinkage_identity() {
        let (z, x) = synthetic(3, 60, 0.4, 0.3);
        let cl = fit_classical(&z, &x).unwrap();
        let inv = fit_inverse(&z, &x).unwrap();
        for z0 in [-1.0, 3.0, 5.0, 9.0] {
            let lhs = point_predict(&inv, z0) - cl.x_bar;
            let rhs = cl.r2 * (point_predict(&cl, z0) - cl.x_bar);
            assert!(
                (lhs - rhs).abs() <= 1e-10 * rhs.abs().max(1.0),
                "z0={z0}: {lhs} vs {rhs}"
            );
        }
    }

    #[test]
    fn predictions_at_mean_chronology() {
        let (z, x) = synthetic(5, 40, 0.5, 0.2);
        let cl = fit_classical(&z, &x).unwrap();
        let inv = fit_inverse(&z, &x).unwrap();
        assert_abs_diff_eq!(point_predict(&cl, cl.z_bar), cl.x_bar, epsilon = 1e-9);
        assert_abs_diff_eq!(point_predict(&inv, inv.z_bar), inv.x_bar, epsilon = 1e-9);
    }

    #[test]
    fn extreme_z_classical_further_from_mean() {
        let (z, x) = synthetic(11, 50, 0.4, 0.3);
        let cl = fit_classical(&z, &x).unwrap();
        let inv = fit_inverse(&z, &x).unwrap();
        let z_sd = crate::stats::sd(&z);
        let z0 = cl.z_bar + 3.0 * z_sd;
        let dc = (point_predict(&cl, z0) - cl.x_bar).abs();
        let di = (point_predict(&inv, z0) - cl.x_bar).abs();
        assert!(dc > di);
    }

    #[test]
    fn affine_rescaling_of_z_leaves_predictions_unchanged() {
        let (z, x) = synthetic(13, 50, 0.4, 0.3);
        let z2: Vec<f64> = z.iter().map(|z| 3.0 * z - 7.0).collect();
        for method in [CalibMethod::Classical, CalibMethod::Inverse] {
            let (f1, f2) = match method {
                CalibMethod::Classical => {
                    (fit_classical(&z, &x).unwrap(), fit_classical(&z2, &x).unwrap())
                }
                CalibMethod::Inverse => {
                    (fit_inverse(&z, &x).unwrap(), fit_inverse(&z2, &x).unwrap())
                }
            };
            for z0 in [z[0], z[10], z[40]] {
                assert_abs_diff_eq!(
                    point_predict(&f1, z0),
                    point_predict(&f2, 3.0 * z0 - 7.0),
                    epsilon = 1e-8
                );
            }
        }
    }

    #[test]
    fn slope_p_small_on_real_signal() {
        let (z, x) = synthetic(17, 83, 0.4, 0.1);
        let cl = fit_classical(&z, &x).unwrap();
        let inv = fit_inverse(&z, &x).unwrap();
        assert!(cl.slope_p < 1e-5, "p = {}", cl.slope_p);
        assert!(inv.slope_p < 1e-5, "p = {}", inv.slope_p);
    }

    #[test]
    fn interval_coverage_monte_carlo() {
        // 500 replications of a small calibration problem; the 95% intervals
        // for a fresh missing-year value should cover truth >= 90% of the time
        let mut covered_cl = 0;
        let mut covered_inv = 0;
        let reps = 500;
        for seed in 0..reps {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1000 + seed);
            let xnoise = Normal::new(0.0, 1.5).unwrap();
            let znoise = Normal::new(0.0, 0.3).unwrap();
            let x: Vec<f64> = (0..40).map(|_| 10.0 + xnoise.sample(&mut rng)).collect();
            let z: Vec<f64> = x
                .iter()
                .map(|x| 1.0 + 0.4 * x + znoise.sample(&mut rng))
                .collect();
            let x_new = 10.0 + xnoise.sample(&mut rng);
            let z_new = 1.0 + 0.4 * x_new + znoise.sample(&mut rng);
            let cl = fit_classical(&z, &x).unwrap();
            let p = &predict(&cl, &[z_new])[0];
            if p.lo95 <= x_new && x_new <= p.hi95 {
                covered_cl += 1;
            }
            let inv = fit_inverse(&z, &x).unwrap();
            let p = &predict(&inv, &[z_new])[0];
            if p.lo95 <= x_new && x_new <= p.hi95 {
                covered_inv += 1;
            }
        }
        assert!(covered_cl * 10 >= reps * 9, "classical coverage {covered_cl}/{reps}");
        assert!(covered_inv * 10 >= reps * 9, "inverse coverage {covered_inv}/{reps}");
    }
}
