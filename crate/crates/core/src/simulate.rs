//! Synthetic tree-ring and climate data generated from the hierarchical
//! model run forward, including the segment-length-curse demonstration
//! scenario (short overlapping segments against a century-scale trend).

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal, StandardNormal, Uniform};
use thiserror::Error;

use crate::ingest::{ClimateSeries, IngestError, RingWidthDataset, TreeSeries};
use crate::stats;

#[derive(Debug, Error)]
pub enum SimulateError {
    #[error("invalid scenario: {0}")]
    BadScenario(String),
    #[error(transparent)]
    Ingest(#[from] IngestError),
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum ClimatePath {
    /// Flat mean; all variation is the year-to-year noise.
    Constant,
    /// Linear ramp rising `amplitude` degrees over the full span, centered
    /// on the scenario mean.
    LinearTrend { amplitude: f64 },
    /// Sinusoid with the given period (years) and half-amplitude.
    Sine { period: f64, amplitude: f64 },
}

impl ClimatePath {
    fn value(&self, t: usize, n: usize, mu: f64) -> f64 {
        match *self {
            ClimatePath::Constant => mu,
            ClimatePath::LinearTrend { amplitude } => {
                let frac = t as f64 / (n - 1).max(1) as f64;
                mu + amplitude * (frac - 0.5)
            }
            ClimatePath::Sine { period, amplitude } => {
                mu + amplitude * (2.0 * std::f64::consts::PI * t as f64 / period).sin()
            }
        }
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ScenarioSpec {
    pub n_years: usize,
    pub n_trees: usize,
    pub first_year: i32,
    /// Segment-length range (inclusive), sampled uniformly per tree.
    pub seg_min: usize,
    pub seg_max: usize,
    pub mu_beta0: f64,
    pub sigma_beta0: f64,
    pub mu_beta1: f64,
    pub sigma_beta1: f64,
    pub beta2: f64,
    pub sigma_y: f64,
    pub sigma_eta: f64,
    pub mu_x: f64,
    /// Year-to-year climate noise around the path.
    pub sigma_x: f64,
    pub path: ClimatePath,
    /// Final years with climate treated as observed when masking.
    pub observed_tail: usize,
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<(), SimulateError> {
        if self.n_years < 2 || self.n_trees == 0 {
            return Err(SimulateError::BadScenario(
                "need at least 2 years and 1 tree".into(),
            ));
        }
        if self.seg_min < 3 || self.seg_min > self.seg_max || self.seg_max > self.n_years {
            return Err(SimulateError::BadScenario(format!(
                "segment range {}..={} incompatible with {} years",
                self.seg_min, self.seg_max, self.n_years
            )));
        }
        if self.observed_tail > self.n_years {
            return Err(SimulateError::BadScenario(
                "observed tail longer than the series".into(),
            ));
        }
        Ok(())
    }

    fn base() -> Self {
        Self {
            n_years: 500,
            n_trees: 60,
            first_year: 1500,
            seg_min: 40,
            seg_max: 120,
            mu_beta0: 1.0,
            sigma_beta0: 0.3,
            mu_beta1: -0.02,
            sigma_beta1: 0.004,
            beta2: 0.15,
            sigma_y: 0.2,
            sigma_eta: 0.1,
            mu_x: 10.0,
            sigma_x: 0.5,
            path: ClimatePath::Constant,
            observed_tail: 100,
        }
    }

    pub fn flat() -> Self {
        Self::base()
    }

    pub fn trend() -> Self {
        Self {
            path: ClimatePath::LinearTrend { amplitude: 2.0 },
            ..Self::base()
        }
    }

    pub fn sine() -> Self {
        Self {
            path: ClimatePath::Sine {
                period: 150.0,
                amplitude: 1.0,
            },
            ..Self::base()
        }
    }

    /// Short segments against a slow trend: the configuration where
    /// tree-by-tree detrending removes the climate signal itself. Stronger
    /// climate response and tamer per-tree heterogeneity than the other
    /// presets so the contrast is not drowned in composition noise.
    pub fn curse() -> Self {
        Self {
            path: ClimatePath::LinearTrend { amplitude: 2.0 },
            beta2: 0.3,
            sigma_beta0: 0.15,
            sigma_beta1: 0.002,
            ..Self::base()
        }
    }

    pub fn by_name(name: &str) -> Result<Self, SimulateError> {
        match name {
            "flat" => Ok(Self::flat()),
            "trend" => Ok(Self::trend()),
            "sine" => Ok(Self::sine()),
            "curse" => Ok(Self::curse()),
            other => Err(SimulateError::BadScenario(format!(
                "unknown scenario '{other}' (expected flat, trend, sine or curse)"
            ))),
        }
    }
}

/// Generated dataset plus the full climate truth and the latent inputs that
/// produced it.
pub struct SimulatedData {
    pub dataset: RingWidthDataset,
    /// Climate for every year, fully observed.
    pub truth: ClimateSeries,
    pub beta0: Vec<f64>,
    pub beta1: Vec<f64>,
    pub eta: Vec<f64>,
}

impl SimulatedData {
    /// Climate with everything before the observed tail masked out, the
    /// shape a reconstruction problem actually presents.
    pub fn observed_climate(&self, scenario: &ScenarioSpec) -> ClimateSeries {
        let cut = scenario.n_years - scenario.observed_tail;
        let mask: Vec<usize> = (0..cut).collect();
        self.truth.with_masked(&mask)
    }
}

pub fn simulate_dataset(
    scenario: &ScenarioSpec,
    seed: u64,
) -> Result<SimulatedData, SimulateError> {
    scenario.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let n = scenario.n_years;
    let k = scenario.n_trees;

    let mut x = Vec::with_capacity(n);
    for t in 0..n {
        let noise = if scenario.sigma_x > 0.0 {
            scenario.sigma_x * rng.sample::<f64, _>(StandardNormal)
        } else {
            0.0
        };
        x.push(scenario.path.value(t, n, scenario.mu_x) + noise);
    }

    let mut eta = Vec::with_capacity(n);
    for &xt in &x {
        let noise = if scenario.sigma_eta > 0.0 {
            scenario.sigma_eta * rng.sample::<f64, _>(StandardNormal)
        } else {
            0.0
        };
        eta.push(scenario.beta2 * xt + noise);
    }

    let seg_dist = Uniform::new_inclusive(scenario.seg_min, scenario.seg_max)
        .expect("validated range");
    let b0_dist = Normal::new(scenario.mu_beta0, scenario.sigma_beta0.max(0.0))
        .map_err(|e| SimulateError::BadScenario(e.to_string()))?;
    let b1_dist = Normal::new(scenario.mu_beta1, scenario.sigma_beta1.max(0.0))
        .map_err(|e| SimulateError::BadScenario(e.to_string()))?;

    let mut trees = Vec::with_capacity(k);
    let mut beta0 = Vec::with_capacity(k);
    let mut beta1 = Vec::with_capacity(k);
    for i in 0..k {
        let seg = seg_dist.sample(&mut rng);
        // spread onsets evenly so every year has coverage, lengths random
        let first_idx = if k == 1 {
            0
        } else {
            i * (n - seg) / (k - 1)
        };
        let b0 = b0_dist.sample(&mut rng);
        let b1 = b1_dist.sample(&mut rng);
        let mut widths = Vec::with_capacity(seg);
        for a in 1..=seg {
            let t = first_idx + a - 1;
            let noise = if scenario.sigma_y > 0.0 {
                scenario.sigma_y * rng.sample::<f64, _>(StandardNormal)
            } else {
                0.0
            };
            let logw = b0 + b1 * a as f64 + eta[t] + noise;
            widths.push(Some(logw.exp()));
        }
        trees.push(TreeSeries {
            id: format!("T{:03}", i + 1),
            first_year: scenario.first_year + first_idx as i32,
            widths,
        });
        beta0.push(b0);
        beta1.push(b1);
    }

    let dataset = RingWidthDataset::new(trees)?;
    let truth = ClimateSeries::new(scenario.first_year, x.into_iter().map(Some).collect());
    Ok(SimulatedData {
        dataset,
        truth,
        beta0,
        beta1,
        eta,
    })
}

#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct ReconScore {
    pub rmse: f64,
    pub correlation: f64,
    /// Fitted linear slope of the prediction minus that of the truth.
    pub trend_slope_error: f64,
}

pub fn score_reconstruction(truth: &[f64], predicted: &[f64]) -> ReconScore {
    assert_eq!(truth.len(), predicted.len());
    assert!(truth.len() >= 2);
    let n = truth.len();
    let mse: f64 = truth
        .iter()
        .zip(predicted)
        .map(|(t, p)| (t - p) * (t - p))
        .sum::<f64>()
        / n as f64;
    let ts: Vec<f64> = (0..n).map(|i| i as f64).collect();
    let (_, slope_t) = stats::ols(&ts, truth);
    let (_, slope_p) = stats::ols(&ts, predicted);
    ReconScore {
        rmse: mse.sqrt(),
        correlation: stats::correlation(truth, predicted),
        trend_slope_error: slope_p - slope_t,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noise_free_generator_is_exact() {
        let mut sc = ScenarioSpec::flat();
        sc.sigma_y = 0.0;
        sc.sigma_eta = 0.0;
        sc.sigma_x = 0.0;
        sc.beta2 = 0.0;
        sc.n_trees = 5;
        sc.n_years = 100;
        sc.seg_max = 80;
        let sim = simulate_dataset(&sc, 7).unwrap();
        for (i, tree) in sim.dataset.trees().iter().enumerate() {
            for (j, w) in tree.widths.iter().enumerate() {
                let a = (j + 1) as f64;
                let expect = (sim.beta0[i] + sim.beta1[i] * a).exp();
                let got = w.unwrap();
                assert!((got - expect).abs() < 1e-12 * expect.max(1.0));
            }
        }
    }

    #[test]
    fn truth_follows_requested_trend() {
        let mut sc = ScenarioSpec::trend();
        sc.sigma_x = 0.0;
        let sim = simulate_dataset(&sc, 1).unwrap();
        let first = sim.truth.value(0).unwrap();
        let last = sim.truth.value(sc.n_years - 1).unwrap();
        assert!((first - 9.0).abs() < 1e-12);
        assert!((last - 11.0).abs() < 1e-12);
    }

    #[test]
    fn every_year_has_tree_coverage() {
        let sc = ScenarioSpec::curse();
        let sim = simulate_dataset(&sc, 3).unwrap();
        for year in sim.dataset.year_min()..=sim.dataset.year_max() {
            assert!(
                sim.dataset.trees_reaching(year) > 0,
                "no tree in year {year}"
            );
        }
        assert_eq!(sim.dataset.n_years(), sc.n_years);
    }

    #[test]
    fn masked_climate_keeps_only_tail() {
        let sc = ScenarioSpec::flat();
        let sim = simulate_dataset(&sc, 11).unwrap();
        let obs = sim.observed_climate(&sc);
        assert_eq!(obs.missing_count(), sc.n_years - sc.observed_tail);
        assert!(obs.observed_contiguous_tail());
        assert_eq!(obs.first_observed(), Some(sc.n_years - sc.observed_tail));
    }

    #[test]
    fn same_seed_reproduces() {
        let sc = ScenarioSpec::sine();
        let a = simulate_dataset(&sc, 99).unwrap();
        let b = simulate_dataset(&sc, 99).unwrap();
        assert_eq!(a.dataset, b.dataset);
        assert_eq!(a.truth.values(), b.truth.values());
    }

    #[test]
    fn score_identity_and_offset() {
        let truth: Vec<f64> = (0..50).map(|i| 10.0 + 0.01 * i as f64).collect();
        let s = score_reconstruction(&truth, &truth);
        assert!(s.rmse.abs() < 1e-12);
        assert!((s.correlation - 1.0).abs() < 1e-12);
        assert!(s.trend_slope_error.abs() < 1e-12);

        let shifted: Vec<f64> = truth.iter().map(|v| v + 1.0).collect();
        let s = score_reconstruction(&truth, &shifted);
        assert!((s.rmse - 1.0).abs() < 1e-12);
        assert!((s.correlation - 1.0).abs() < 1e-12);
    }

    #[test]
    fn detrended_prediction_has_slope_error_equal_to_trend() {
        let n = 200;
        let ts: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let truth: Vec<f64> = ts.iter().map(|t| 10.0 + 0.004 * t).collect();
        let mean = stats::mean(&truth);
        let detrended: Vec<f64> = vec![mean; n];
        let s = score_reconstruction(&truth, &detrended);
        assert!((s.trend_slope_error + 0.004).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_scenarios() {
        let mut sc = ScenarioSpec::flat();
        sc.seg_max = sc.n_years + 1;
        assert!(simulate_dataset(&sc, 0).is_err());
        let mut sc = ScenarioSpec::flat();
        sc.observed_tail = sc.n_years + 1;
        assert!(simulate_dataset(&sc, 0).is_err());
        assert!(ScenarioSpec::by_name("nope").is_err());
    }
}
