//! Model checking: hold-out prediction of halves of the observed climate,
//! RMSE/coverage scoring, and averaged per-year residual diagnostics with a
//! loess smooth.

use thiserror::Error;

use crate::calibrate::{self, CalibMethod, CalibrateError};
use crate::ingest::{ClimateSeries, RingWidthDataset};
use crate::mcmc::{self, McmcError, PosteriorDraws, SamplerConfig};
use crate::models::{ModelData, ModelError, ModelSpec};
use crate::standardize::{self, MeanFn, Method, StandardizeError};
use crate::stats;

#[derive(Debug, Error)]
pub enum CheckError {
    #[error("observed climate span too short to split (need >= 6 observed years, have {0})")]
    TooFewObserved(usize),
    #[error("no usable calibration pairs after hold-out")]
    NoCalibrationPairs,
    #[error("empty input")]
    Empty,
    #[error(transparent)]
    Standardize(#[from] StandardizeError),
    #[error(transparent)]
    Calibrate(#[from] CalibrateError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Mcmc(#[from] McmcError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum HoldoutHalf {
    FirstHalf,
    SecondHalf,
}

impl HoldoutHalf {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "first" | "first_half" => Some(Self::FirstHalf),
            "second" | "second_half" => Some(Self::SecondHalf),
            _ => None,
        }
    }
}

/// Which observed-climate years are withheld from fitting.
#[derive(Debug, Clone)]
pub struct HoldoutPlan {
    pub which: HoldoutHalf,
    /// 0-based year indices withheld.
    pub held: Vec<usize>,
    /// 0-based year indices kept for fitting.
    pub retained: Vec<usize>,
}

impl HoldoutPlan {
    pub fn new(climate: &ClimateSeries, which: HoldoutHalf) -> Result<Self, CheckError> {
        let obs: Vec<usize> = (0..climate.n())
            .filter(|&t| climate.value(t).is_some())
            .collect();
        if obs.len() < 6 {
            return Err(CheckError::TooFewObserved(obs.len()));
        }
        let split = obs.len() / 2;
        let (first, second) = obs.split_at(split);
        let (held, retained) = match which {
            HoldoutHalf::FirstHalf => (first.to_vec(), second.to_vec()),
            HoldoutHalf::SecondHalf => (second.to_vec(), first.to_vec()),
        };
        Ok(Self {
            which,
            held,
            retained,
        })
    }
}

#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct HoldoutPrediction {
    pub year: i32,
    pub truth: f64,
    pub xhat: f64,
    pub lo50: f64,
    pub hi50: f64,
    pub lo95: f64,
    pub hi95: f64,
}

/// Scores over a set of held-out predictions.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct HoldoutSummary {
    pub rmse: f64,
    pub coverage50: f64,
    pub coverage95: f64,
    pub mean_width95: f64,
    /// Regression slope of centered predictions on centered truths; below 1
    /// means predictions shrink toward the calibration mean.
    pub shrinkage_slope: f64,
}

pub fn summarize_holdout(preds: &[HoldoutPrediction], x_bar: f64) -> Result<HoldoutSummary, CheckError> {
    if preds.is_empty() {
        return Err(CheckError::Empty);
    }
    let truths: Vec<f64> = preds.iter().map(|p| p.truth).collect();
    let xhats: Vec<f64> = preds.iter().map(|p| p.xhat).collect();
    let n = preds.len() as f64;
    let cov = |lo: fn(&HoldoutPrediction) -> f64, hi: fn(&HoldoutPrediction) -> f64| {
        preds
            .iter()
            .filter(|p| p.truth >= lo(p) && p.truth <= hi(p))
            .count() as f64
            / n
    };
    let centered_t: Vec<f64> = truths.iter().map(|t| t - x_bar).collect();
    let centered_p: Vec<f64> = xhats.iter().map(|p| p - x_bar).collect();
    let (_, slope) = stats::ols(&centered_t, &centered_p);
    Ok(HoldoutSummary {
        rmse: rmse(&xhats, &truths)?,
        coverage50: cov(|p| p.lo50, |p| p.hi50),
        coverage95: cov(|p| p.lo95, |p| p.hi95),
        mean_width95: preds.iter().map(|p| p.hi95 - p.lo95).sum::<f64>() / n,
        shrinkage_slope: slope,
    })
}

pub fn rmse(predictions: &[f64], truths: &[f64]) -> Result<f64, CheckError> {
    if predictions.is_empty() || predictions.len() != truths.len() {
        return Err(CheckError::Empty);
    }
    let mse = predictions
        .iter()
        .zip(truths)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / predictions.len() as f64;
    Ok(mse.sqrt())
}

/// Hold-out run of the multi-step pipeline: standardize the full dataset,
/// calibrate on the retained years, predict the held ones.
pub fn holdout_multistep(
    dataset: &RingWidthDataset,
    climate: &ClimateSeries,
    method: Method,
    bin_width: u32,
    mean_fn: MeanFn,
    calib: CalibMethod,
    plan: &HoldoutPlan,
) -> Result<Vec<HoldoutPrediction>, CheckError> {
    let chron = standardize::standardize(dataset, method, bin_width, mean_fn)?;
    let climate = climate.reindexed(dataset.year_min(), dataset.n_years());
    let z_at = |t: usize| chron.index.get(t).copied().flatten();

    let mut z_cal = Vec::new();
    let mut x_cal = Vec::new();
    for &t in &plan.retained {
        if let (Some(z), Some(x)) = (z_at(t), climate.value(t)) {
            z_cal.push(z);
            x_cal.push(x);
        }
    }
    if z_cal.len() < 3 {
        return Err(CheckError::NoCalibrationPairs);
    }
    let fit = match calib {
        CalibMethod::Classical => calibrate::fit_classical(&z_cal, &x_cal)?,
        CalibMethod::Inverse => calibrate::fit_inverse(&z_cal, &x_cal)?,
    };

    let mut out = Vec::new();
    for &t in &plan.held {
        let (Some(z), Some(truth)) = (z_at(t), climate.value(t)) else {
            continue;
        };
        let p95 = calibrate::predict_with_level(&fit, &[z], 0.95)[0];
        let p50 = calibrate::predict_with_level(&fit, &[z], 0.50)[0];
        out.push(HoldoutPrediction {
            year: dataset.year_min() + t as i32,
            truth,
            xhat: p95.xhat,
            lo50: p50.lo95,
            hi50: p50.hi95,
            lo95: p95.lo95,
            hi95: p95.hi95,
        });
    }
    Ok(out)
}

/// Hold-out run of a joint model: held years are masked to missing, the
/// model refit, and their posterior climate draws summarized.
pub fn holdout_model(
    spec: &ModelSpec,
    dataset: &RingWidthDataset,
    climate: &ClimateSeries,
    plan: &HoldoutPlan,
    config: &SamplerConfig,
) -> Result<(Vec<HoldoutPrediction>, PosteriorDraws), CheckError> {
    let climate = climate.reindexed(dataset.year_min(), dataset.n_years());
    let masked = climate.with_masked(&plan.held);
    let data = ModelData::new(dataset, &masked)?;
    let sampler = mcmc::Sampler::new(spec.clone(), data)?;
    let draws = mcmc::run(&sampler, config)?;

    let mut out = Vec::new();
    for &t in &plan.held {
        let Some(truth) = climate.value(t) else {
            continue;
        };
        let Some(pos) = draws.x_mis_indices.iter().position(|&i| i == t) else {
            continue;
        };
        let d = draws.x_mis_draws(pos);
        out.push(HoldoutPrediction {
            year: dataset.year_min() + t as i32,
            truth,
            xhat: stats::quantile(&d, 0.5),
            lo50: stats::quantile(&d, 0.25),
            hi50: stats::quantile(&d, 0.75),
            lo95: stats::quantile(&d, 0.025),
            hi95: stats::quantile(&d, 0.975),
        });
    }
    Ok((out, draws))
}

/// Per-year averaged residuals on the log scale at posterior means.
#[derive(Debug, Clone)]
pub struct ResidualSeries {
    pub year_min: i32,
    /// Averaged residual per year; None where no tree contributes.
    pub delta: Vec<Option<f64>>,
    pub counts: Vec<u32>,
    /// True where the climate was observed that year.
    pub observed: Vec<bool>,
    /// Loess smooth of the defined residuals (same indexing).
    pub smooth: Vec<Option<f64>>,
}

impl ResidualSeries {
    pub fn write_csv(&self) -> String {
        use std::fmt::Write as _;
        let mut out = String::from("year,delta,count,climate_observed,smooth\n");
        for (j, d) in self.delta.iter().enumerate() {
            let year = self.year_min + j as i32;
            let dv = match d {
                Some(v) => format!("{v:.5e}"),
                None => "NA".into(),
            };
            let sv = match self.smooth[j] {
                Some(v) => format!("{v:.5e}"),
                None => "NA".into(),
            };
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                year, dv, self.counts[j], self.observed[j] as u8, sv
            );
        }
        out
    }
}

/// Residuals y_it minus the fitted mean at posterior means, averaged across
/// the trees present each year.
pub fn averaged_residuals(
    draws: &PosteriorDraws,
    spec: &ModelSpec,
    data: &ModelData,
) -> ResidualSeries {
    let means = &draws.posterior_means;
    let mut sums = vec![0.0; data.n];
    let mut counts = vec![0u32; data.n];
    for (i, obs) in data.per_tree.iter().enumerate() {
        for o in obs {
            let g = match spec.growth {
                crate::models::Growth::TsLinearAge => {
                    means.beta0[i] + means.beta1[i] * o.age as f64
                }
                crate::models::Growth::RcsBinned { bin_width } => {
                    means.zeta[ModelData::bin_of(o.age, bin_width)]
                }
            };
            sums[o.t] += o.log_width - g - means.eta[o.t];
            counts[o.t] += 1;
        }
    }
    let delta: Vec<Option<f64>> = sums
        .iter()
        .zip(&counts)
        .map(|(s, &c)| if c > 0 { Some(s / c as f64) } else { None })
        .collect();
    let observed: Vec<bool> = (0..data.n).map(|t| data.x_obs[t].is_some()).collect();

    let xs: Vec<f64> = (0..data.n)
        .filter(|&t| delta[t].is_some())
        .map(|t| t as f64)
        .collect();
    let ys: Vec<f64> = delta.iter().flatten().copied().collect();
    let sm = loess(&xs, &ys, 0.3);
    let mut smooth = vec![None; data.n];
    for (pos, &t) in xs.iter().enumerate() {
        smooth[t as usize] = Some(sm[pos]);
    }
    ResidualSeries {
        year_min: data.year_min,
        delta,
        counts,
        observed,
        smooth,
    }
}

/// Local linear loess with tricube weights, evaluated at the data points.
pub fn loess(xs: &[f64], ys: &[f64], span: f64) -> Vec<f64> {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len();
    if n == 0 {
        return Vec::new();
    }
    let q = ((span * n as f64).ceil() as usize).clamp(2, n);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let x0 = xs[i];
        // q-th nearest-neighbor bandwidth
        let mut dists: Vec<f64> = xs.iter().map(|x| (x - x0).abs()).collect();
        dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let h = dists[q - 1].max(1e-12);
        let mut sw = 0.0;
        let mut swx = 0.0;
        let mut swy = 0.0;
        let mut swxx = 0.0;
        let mut swxy = 0.0;
        for j in 0..n {
            let d = (xs[j] - x0).abs() / h;
            if d >= 1.0 {
                continue;
            }
            let w = (1.0 - d * d * d).powi(3);
            let dx = xs[j] - x0;
            sw += w;
            swx += w * dx;
            swy += w * ys[j];
            swxx += w * dx * dx;
            swxy += w * dx * ys[j];
        }
        let det = sw * swxx - swx * swx;
        let fit = if det.abs() < 1e-12 {
            swy / sw
        } else {
            // intercept of the weighted line at dx = 0
            (swxx * swy - swx * swxy) / det
        };
        out.push(fit);
    }
    out
}
