//! The five Bayesian reconstruction models: declarative specs, priors, and
//! the complete-data log joint density.
//!
//! All models share the skeleton
//!
//! ```text
//! log(y_it) ~ N(growth_it + eta_t, var_y)
//! eta_t     ~ N(mu_t, var_eta)          mu_t from the response function
//! x_t       ~ N(mean_t, var_x)          mean_t constant or a spline in t
//! ```
//!
//! with the growth term either per-tree linear in age (TS) or a shared
//! age-binned level (RCS), and the response either linear in x or piecewise
//! with a growth cutoff below x_min and saturation above x_max.

use std::f64::consts::PI;

use thiserror::Error;

use crate::ingest::{ClimateSeries, RingWidthDataset};
use crate::spline::{self, SplineBasis};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("inconsistent model options: {0}")]
    BadOptions(String),
    #[error("climate series years [{cmin}, {cmax}] do not cover dataset years [{dmin}, {dmax}]")]
    ClimateCoverage {
        cmin: i32,
        cmax: i32,
        dmin: i32,
        dmax: i32,
    },
    #[error("observed climate {value} in year index {t} is below x_min {x_min} under the piecewise response")]
    ObservedBelowXMin { t: usize, value: f64, x_min: f64 },
    #[error(transparent)]
    Spline(#[from] spline::SplineError),
    #[error("state dimensions do not match spec/data: {0}")]
    DimMismatch(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum ModelName {
    MTsConst,
    MRcsConst,
    MTsSpl,
    MTsSplSoft,
    MTsSplHard,
}

impl ModelName {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "m_ts_const" => Some(Self::MTsConst),
            "m_rcs_const" => Some(Self::MRcsConst),
            "m_ts_spl" => Some(Self::MTsSpl),
            "m_ts_spl_soft" => Some(Self::MTsSplSoft),
            "m_ts_spl_hard" => Some(Self::MTsSplHard),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::MTsConst => "m_ts_const",
            Self::MRcsConst => "m_rcs_const",
            Self::MTsSpl => "m_ts_spl",
            Self::MTsSplSoft => "m_ts_spl_soft",
            Self::MTsSplHard => "m_ts_spl_hard",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Growth {
    TsLinearAge,
    RcsBinned { bin_width: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ClimateMean {
    Constant,
    Spline { knot_spacing: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Response {
    Linear,
    Piecewise { x_min: f64, x_max: f64 },
}

/// Prior on a location hyperparameter.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NormalPrior {
    pub mean: f64,
    pub sd: f64,
}

/// Prior on a standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum ScalePrior {
    /// Half-t on the sd; implemented by parameter expansion in the sampler.
    HalfT { df: f64, scale: f64 },
    /// Inverse-gamma (shape, rate) on the variance; plain conjugate route.
    InvGamma { shape: f64, rate: f64 },
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PriorSet {
    pub mu_beta0: NormalPrior,
    pub mu_beta1: NormalPrior,
    pub mu_x: NormalPrior,
    pub mu_gamma: NormalPrior,
    pub beta2: NormalPrior,
    /// iid prior on each age-bin level under RCS.
    pub zeta: NormalPrior,
    pub sigma_y: ScalePrior,
    pub sigma_eta: ScalePrior,
    pub sigma_x: ScalePrior,
    pub sigma_beta0: ScalePrior,
    pub sigma_beta1: ScalePrior,
    pub sigma_gamma: ScalePrior,
}

const WIDE: NormalPrior = NormalPrior {
    mean: 0.0,
    sd: 100.0,
};
const HALF_T: ScalePrior = ScalePrior::HalfT {
    df: 3.0,
    scale: 5.0,
};

/// Soft-constraint priors for the x-process, tuned so the implied prior
/// predictive for x_t matches the target probabilities
/// Pr(8 < x < 12) = 0.81, Pr(x > 6) = 0.97, Pr(x > 4) = 0.99.
/// The tuning search lives in `examples/soft_prior_calibration.rs`.
pub mod soft_prior {
    use super::{NormalPrior, ScalePrior};

    pub const MU_GAMMA: NormalPrior = NormalPrior {
        mean: 10.0,
        sd: 0.39,
    };
    pub const SIGMA_GAMMA: ScalePrior = ScalePrior::HalfT {
        df: 3.0,
        scale: 0.83,
    };
    pub const SIGMA_X: ScalePrior = ScalePrior::HalfT {
        df: 3.0,
        scale: 1.17,
    };
}

impl PriorSet {
    /// Weakly-informative defaults.
    pub fn default_weak() -> Self {
        Self {
            mu_beta0: WIDE,
            mu_beta1: WIDE,
            mu_x: WIDE,
            mu_gamma: WIDE,
            beta2: WIDE,
            zeta: WIDE,
            sigma_y: HALF_T,
            sigma_eta: HALF_T,
            sigma_x: HALF_T,
            sigma_beta0: HALF_T,
            sigma_beta1: HALF_T,
            sigma_gamma: HALF_T,
        }
    }

    /// Defaults with the informative x-process priors of the soft model.
    pub fn default_soft() -> Self {
        Self {
            mu_gamma: soft_prior::MU_GAMMA,
            sigma_gamma: soft_prior::SIGMA_GAMMA,
            sigma_x: soft_prior::SIGMA_X,
            ..Self::default_weak()
        }
    }

    /// Swap every half-t scale prior for inverse-gamma(0.001, 0.001); the
    /// debugging switch that keeps all variance updates plainly conjugate.
    pub fn with_inv_gamma_scales(mut self) -> Self {
        let ig = ScalePrior::InvGamma {
            shape: 0.001,
            rate: 0.001,
        };
        for p in [
            &mut self.sigma_y,
            &mut self.sigma_eta,
            &mut self.sigma_x,
            &mut self.sigma_beta0,
            &mut self.sigma_beta1,
            &mut self.sigma_gamma,
        ] {
            if matches!(p, ScalePrior::HalfT { .. }) {
                *p = ig;
            }
        }
        self
    }
}

/// Options accepted by [`make_spec`].
#[derive(Debug, Clone)]
pub struct ModelOptions {
    pub bin_width: u32,
    pub knot_spacing: usize,
    pub x_min: f64,
    pub x_max: f64,
    /// Replace half-t scale priors with inverse-gamma(0.001, 0.001).
    pub inv_gamma_scales: bool,
    /// Freeze the spline at a constant: gamma_h == mu_gamma, sigma_gamma = 0.
    pub freeze_gamma: bool,
    pub prior_overrides: Option<PriorSet>,
}

impl Default for ModelOptions {
    fn default() -> Self {
        Self {
            bin_width: 10,
            knot_spacing: 25,
            x_min: 4.0,
            x_max: 20.0,
            inv_gamma_scales: false,
            freeze_gamma: false,
            prior_overrides: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub name: ModelName,
    pub growth: Growth,
    pub climate_mean: ClimateMean,
    pub response: Response,
    pub priors: PriorSet,
    /// Keep gamma pinned to mu_gamma (collapse mode).
    pub freeze_gamma: bool,
}

impl ModelSpec {
    pub fn uses_spline(&self) -> bool {
        matches!(self.climate_mean, ClimateMean::Spline { .. })
    }

    pub fn is_piecewise(&self) -> bool {
        matches!(self.response, Response::Piecewise { .. })
    }
}

/// Build one of the five named models.
pub fn make_spec(name: ModelName, options: &ModelOptions) -> Result<ModelSpec, ModelError> {
    if options.bin_width < 1 {
        return Err(ModelError::BadOptions("bin_width must be >= 1".into()));
    }
    if options.knot_spacing < 2 {
        return Err(ModelError::BadOptions("knot_spacing must be >= 2".into()));
    }
    if options.x_min >= options.x_max {
        return Err(ModelError::BadOptions(format!(
            "x_min {} must be below x_max {}",
            options.x_min, options.x_max
        )));
    }
    if options.freeze_gamma && matches!(name, ModelName::MTsConst | ModelName::MRcsConst) {
        return Err(ModelError::BadOptions(
            "freeze_gamma only applies to spline models".into(),
        ));
    }
    let mut priors = match options.prior_overrides.clone() {
        Some(p) => p,
        None if name == ModelName::MTsSplSoft => PriorSet::default_soft(),
        None => PriorSet::default_weak(),
    };
    if options.inv_gamma_scales {
        priors = priors.with_inv_gamma_scales();
    }
    let (growth, climate_mean, response) = match name {
        ModelName::MTsConst => (Growth::TsLinearAge, ClimateMean::Constant, Response::Linear),
        ModelName::MRcsConst => (
            Growth::RcsBinned {
                bin_width: options.bin_width,
            },
            ClimateMean::Constant,
            Response::Linear,
        ),
        ModelName::MTsSpl | ModelName::MTsSplSoft => (
            Growth::TsLinearAge,
            ClimateMean::Spline {
                knot_spacing: options.knot_spacing,
            },
            Response::Linear,
        ),
        ModelName::MTsSplHard => (
            Growth::TsLinearAge,
            ClimateMean::Spline {
                knot_spacing: options.knot_spacing,
            },
            Response::Piecewise {
                x_min: options.x_min,
                x_max: options.x_max,
            },
        ),
    };
    Ok(ModelSpec {
        name,
        growth,
        climate_mean,
        response,
        priors,
        freeze_gamma: options.freeze_gamma,
    })
}

/// Mean of eta_t given x_t. Returns -inf below x_min under the piecewise
/// response so the caller can reject the state.
pub fn response_mean(response: Response, x: f64, beta2: f64) -> f64 {
    match response {
        Response::Linear => beta2 * x,
        Response::Piecewise { x_min, x_max } => {
            if x < x_min {
                f64::NEG_INFINITY
            } else if x > x_max {
                beta2 * x_max
            } else {
                beta2 * x
            }
        }
    }
}

/// One ring observation placed on the shared time axis.
#[derive(Debug, Clone, Copy)]
pub struct Obs {
    /// 0-based year index.
    pub t: usize,
    pub log_width: f64,
    pub age: u32,
}

/// Precomputed fitting inputs: log widths indexed per tree and per year,
/// plus the observed climate on the dataset's year axis.
#[derive(Debug, Clone)]
pub struct ModelData {
    pub n: usize,
    pub year_min: i32,
    pub k: usize,
    pub per_tree: Vec<Vec<Obs>>,
    /// Per year: (tree index, log width, age).
    pub per_year: Vec<Vec<(usize, f64, u32)>>,
    pub x_obs: Vec<Option<f64>>,
}

impl ModelData {
    pub fn new(d: &RingWidthDataset, climate: &ClimateSeries) -> Result<Self, ModelError> {
        if climate.year_min() > d.year_min() || climate.year_max() < d.year_max() {
            return Err(ModelError::ClimateCoverage {
                cmin: climate.year_min(),
                cmax: climate.year_max(),
                dmin: d.year_min(),
                dmax: d.year_max(),
            });
        }
        let n = d.n_years();
        let climate = climate.reindexed(d.year_min(), n);
        let mut per_tree = Vec::with_capacity(d.tree_count());
        let mut per_year: Vec<Vec<(usize, f64, u32)>> = vec![Vec::new(); n];
        for (i, tree) in d.trees().iter().enumerate() {
            let mut obs = Vec::with_capacity(tree.widths.len());
            for (j, w) in tree.widths.iter().enumerate() {
                if let Some(w) = *w {
                    let t = d.year_index(tree.first_year + j as i32).unwrap();
                    let age = j as u32 + 1;
                    let log_width = w.ln();
                    obs.push(Obs { t, log_width, age });
                    per_year[t].push((i, log_width, age));
                }
            }
            per_tree.push(obs);
        }
        Ok(Self {
            n,
            year_min: d.year_min(),
            k: d.tree_count(),
            per_tree,
            per_year,
            x_obs: climate.values().to_vec(),
        })
    }

    pub fn missing_indices(&self) -> Vec<usize> {
        (0..self.n).filter(|&t| self.x_obs[t].is_none()).collect()
    }

    pub fn observed_indices(&self) -> Vec<usize> {
        (0..self.n).filter(|&t| self.x_obs[t].is_some()).collect()
    }

    pub fn max_age(&self) -> u32 {
        self.per_tree
            .iter()
            .flat_map(|obs| obs.iter().map(|o| o.age))
            .max()
            .unwrap_or(0)
    }

    pub fn bin_of(age: u32, b: u32) -> usize {
        (age.div_ceil(b) - 1) as usize
    }

    pub fn n_bins(&self, b: u32) -> usize {
        self.max_age().div_ceil(b) as usize
    }
}

/// All unknowns of one model at one iteration.
#[derive(Debug, Clone)]
pub struct LatentState {
    pub beta0: Vec<f64>,
    pub beta1: Vec<f64>,
    pub zeta: Vec<f64>,
    pub beta2: f64,
    pub eta: Vec<f64>,
    /// Full climate vector; observed entries fixed at the data.
    pub x: Vec<f64>,
    pub gamma: Vec<f64>,
    /// Cached spline mean, alpha = B * gamma; empty for constant-mean models.
    pub alpha: Vec<f64>,
    pub mu_x: f64,
    pub mu_gamma: f64,
    pub mu_beta0: f64,
    pub mu_beta1: f64,
    pub var_y: f64,
    pub var_eta: f64,
    pub var_x: f64,
    pub var_beta0: f64,
    pub var_beta1: f64,
    pub var_gamma: f64,
}

impl LatentState {
    /// Prior mean of x_t under the spec.
    pub fn x_prior_mean(&self, spec: &ModelSpec, t: usize) -> f64 {
        if spec.uses_spline() {
            self.alpha[t]
        } else {
            self.mu_x
        }
    }

    /// Growth contribution for tree i at age `age`.
    pub fn growth_mean(&self, spec: &ModelSpec, tree: usize, age: u32) -> f64 {
        match spec.growth {
            Growth::TsLinearAge => self.beta0[tree] + self.beta1[tree] * age as f64,
            Growth::RcsBinned { bin_width } => self.zeta[ModelData::bin_of(age, bin_width)],
        }
    }
}

pub fn log_normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    if !mean.is_finite() {
        return f64::NEG_INFINITY;
    }
    let d = x - mean;
    -0.5 * (2.0 * PI * var).ln() - 0.5 * d * d / var
}

fn log_scale_prior(prior: ScalePrior, var: f64) -> f64 {
    if var <= 0.0 {
        return f64::NEG_INFINITY;
    }
    match prior {
        ScalePrior::HalfT { df, scale } => {
            // half-t density on sigma, with the sigma -> sigma^2 jacobian;
            // normalizing constants dropped
            let sigma = var.sqrt();
            let lt = -0.5 * (df + 1.0) * (1.0 + sigma * sigma / (df * scale * scale)).ln();
            lt - (2.0 * sigma).ln()
        }
        ScalePrior::InvGamma { shape, rate } => -(shape + 1.0) * var.ln() - rate / var,
    }
}

/// Log density of each additive block of the joint, in model order:
/// likelihood, eta, x, gamma, growth parameters, hyperpriors.
#[derive(Debug, Clone, Copy, Default)]
pub struct LogJointParts {
    pub likelihood: f64,
    pub eta: f64,
    pub x: f64,
    pub gamma: f64,
    pub growth_params: f64,
    pub hyperpriors: f64,
}

impl LogJointParts {
    pub fn total(&self) -> f64 {
        self.likelihood + self.eta + self.x + self.gamma + self.growth_params + self.hyperpriors
    }
}

/// Complete-data log joint density of (y, eta, x, parameters). Constraint
/// violations yield -inf rather than an error so Metropolis steps can simply
/// reject.
pub fn log_joint(spec: &ModelSpec, state: &LatentState, data: &ModelData) -> f64 {
    log_joint_parts(spec, state, data).total()
}

pub fn log_joint_parts(spec: &ModelSpec, state: &LatentState, data: &ModelData) -> LogJointParts {
    let mut parts = LogJointParts::default();
    if state.var_y <= 0.0
        || state.var_eta <= 0.0
        || state.var_x <= 0.0
        || state.var_beta0 <= 0.0
        || state.var_beta1 <= 0.0
        || (spec.uses_spline() && !spec.freeze_gamma && state.var_gamma <= 0.0)
    {
        parts.hyperpriors = f64::NEG_INFINITY;
        return parts;
    }
    if let Response::Piecewise { x_min, .. } = spec.response {
        if state.beta2 <= 0.0 || state.x.iter().any(|x| *x < x_min) {
            parts.eta = f64::NEG_INFINITY;
            return parts;
        }
    }

    // likelihood of the log widths
    for (i, obs) in data.per_tree.iter().enumerate() {
        for o in obs {
            let mean = state.growth_mean(spec, i, o.age) + state.eta[o.t];
            parts.likelihood += log_normal_pdf(o.log_width, mean, state.var_y);
        }
    }

    // latent year effects
    for t in 0..data.n {
        let mu_t = response_mean(spec.response, state.x[t], state.beta2);
        parts.eta += log_normal_pdf(state.eta[t], mu_t, state.var_eta);
    }

    // climate process
    for t in 0..data.n {
        parts.x += log_normal_pdf(state.x[t], state.x_prior_mean(spec, t), state.var_x);
    }

    // spline coefficients
    if spec.uses_spline() && !spec.freeze_gamma {
        for g in &state.gamma {
            parts.gamma += log_normal_pdf(*g, state.mu_gamma, state.var_gamma);
        }
    }

    // growth parameters
    match spec.growth {
        Growth::TsLinearAge => {
            for i in 0..data.k {
                parts.growth_params +=
                    log_normal_pdf(state.beta0[i], state.mu_beta0, state.var_beta0);
                parts.growth_params +=
                    log_normal_pdf(state.beta1[i], state.mu_beta1, state.var_beta1);
            }
        }
        Growth::RcsBinned { .. } => {
            let p = spec.priors.zeta;
            for z in &state.zeta {
                parts.growth_params += log_normal_pdf(*z, p.mean, p.sd * p.sd);
            }
        }
    }

    // hyperpriors
    let pri = &spec.priors;
    let mut hp = 0.0;
    hp += log_normal_pdf(state.beta2, pri.beta2.mean, pri.beta2.sd * pri.beta2.sd);
    hp += log_scale_prior(pri.sigma_y, state.var_y);
    hp += log_scale_prior(pri.sigma_eta, state.var_eta);
    hp += log_scale_prior(pri.sigma_x, state.var_x);
    match spec.growth {
        Growth::TsLinearAge => {
            hp += log_normal_pdf(
                state.mu_beta0,
                pri.mu_beta0.mean,
                pri.mu_beta0.sd * pri.mu_beta0.sd,
            );
            hp += log_normal_pdf(
                state.mu_beta1,
                pri.mu_beta1.mean,
                pri.mu_beta1.sd * pri.mu_beta1.sd,
            );
            hp += log_scale_prior(pri.sigma_beta0, state.var_beta0);
            hp += log_scale_prior(pri.sigma_beta1, state.var_beta1);
        }
        Growth::RcsBinned { .. } => {}
    }
    if spec.uses_spline() {
        hp += log_normal_pdf(
            state.mu_gamma,
            pri.mu_gamma.mean,
            pri.mu_gamma.sd * pri.mu_gamma.sd,
        );
        if !spec.freeze_gamma {
            hp += log_scale_prior(pri.sigma_gamma, state.var_gamma);
        }
    } else {
        hp += log_normal_pdf(state.mu_x, pri.mu_x.mean, pri.mu_x.sd * pri.mu_x.sd);
    }
    parts.hyperpriors = hp;
    parts
}

/// Build the spline basis a spec calls for, if any.
pub fn basis_for(spec: &ModelSpec, n: usize) -> Result<Option<SplineBasis>, ModelError> {
    match spec.climate_mean {
        ClimateMean::Constant => Ok(None),
        ClimateMean::Spline { knot_spacing } => Ok(Some(spline::build_basis(n, knot_spacing)?)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::TreeSeries;
    use approx::assert_abs_diff_eq;

    fn tiny_data() -> ModelData {
        // single tree, single year
        let d = RingWidthDataset::new(vec![TreeSeries {
            id: "A".into(),
            first_year: 2000,
            widths: vec![Some(1.5)],
        }])
        .unwrap();
        let climate = ClimateSeries::new(2000, vec![None]);
        ModelData::new(&d, &climate).unwrap()
    }

    fn state_for(data: &ModelData) -> LatentState {
        LatentState {
            beta0: vec![0.2; data.k],
            beta1: vec![-0.01; data.k],
            zeta: Vec::new(),
            beta2: 0.1,
            eta: vec![0.05; data.n],
            x: vec![9.0; data.n],
            gamma: Vec::new(),
            alpha: Vec::new(),
            mu_x: 9.0,
            mu_gamma: 0.0,
            mu_beta0: 0.0,
            mu_beta1: 0.0,
            var_y: 0.09,
            var_eta: 0.04,
            var_x: 0.25,
            var_beta0: 1.0,
            var_beta1: 0.01,
            var_gamma: 1.0,
        }
    }

    #[test]
    fn log_joint_matches_hand_computed_normals() {
        let data = tiny_data();
        let spec = make_spec(ModelName::MTsConst, &ModelOptions::default()).unwrap();
        let state = state_for(&data);
        let parts = log_joint_parts(&spec, &state, &data);

        let logw = 1.5f64.ln();
        let lik = log_normal_pdf(logw, 0.2 - 0.01 + 0.05, 0.09);
        let eta = log_normal_pdf(0.05, 0.1 * 9.0, 0.04);
        let x = log_normal_pdf(9.0, 9.0, 0.25);
        assert_abs_diff_eq!(parts.likelihood, lik, epsilon = 1e-10);
        assert_abs_diff_eq!(parts.eta, eta, epsilon = 1e-10);
        assert_abs_diff_eq!(parts.x, x, epsilon = 1e-10);
        assert!(parts.total().is_finite());
    }

    #[test]
    fn parts_sum_to_total() {
        let data = tiny_data();
        let spec = make_spec(ModelName::MTsConst, &ModelOptions::default()).unwrap();
        let state = state_for(&data);
        let parts = log_joint_parts(&spec, &state, &data);
        assert_abs_diff_eq!(
            log_joint(&spec, &state, &data),
            parts.likelihood
                + parts.eta
                + parts.x
                + parts.gamma
                + parts.growth_params
                + parts.hyperpriors,
            epsilon = 1e-12
        );
    }

    #[test]
    fn piecewise_below_xmin_is_minus_infinity() {
        let spec = make_spec(ModelName::MTsSplHard, &ModelOptions::default()).unwrap();
        // build a 60-year version so the spline basis exists
        let d = RingWidthDataset::new(vec![TreeSeries {
            id: "A".into(),
            first_year: 2000,
            widths: vec![Some(1.5); 60],
        }])
        .unwrap();
        let climate = ClimateSeries::new(2000, vec![None; 60]);
        let data = ModelData::new(&d, &climate).unwrap();
        let basis = basis_for(&spec, data.n).unwrap().unwrap();
        let mut state = state_for(&data);
        state.gamma = vec![9.0; basis.basis_count()];
        state.alpha = basis.evaluate_mean(&state.gamma).unwrap();
        state.x = vec![9.0; data.n];
        assert!(log_joint(&spec, &state, &data).is_finite());
        state.x[10] = 3.0; // x_min - 1
        assert_eq!(log_joint(&spec, &state, &data), f64::NEG_INFINITY);
    }

    #[test]
    fn response_mean_branches() {
        let pw = Response::Piecewise {
            x_min: 4.0,
            x_max: 20.0,
        };
        assert_abs_diff_eq!(response_mean(pw, 25.0, 0.1), 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(response_mean(pw, 10.0, 0.1), 1.0, epsilon = 1e-12);
        assert_eq!(response_mean(pw, 3.9, 0.1), f64::NEG_INFINITY);
        assert_abs_diff_eq!(response_mean(Response::Linear, 10.0, 0.1), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn spl_with_frozen_constant_gamma_collapses_to_const() {
        // with gamma == mu_gamma the spline mean is constant (rows sum to 1),
        // so the joint equals the constant-mean model with mu_x = mu_gamma
        let d = RingWidthDataset::new(vec![TreeSeries {
            id: "A".into(),
            first_year: 2000,
            widths: vec![Some(1.5); 80],
        }])
        .unwrap();
        let climate = ClimateSeries::new(2000, vec![None; 80]);
        let data = ModelData::new(&d, &climate).unwrap();

        let spl = make_spec(
            ModelName::MTsSpl,
            &ModelOptions {
                freeze_gamma: true,
                ..ModelOptions::default()
            },
        )
        .unwrap();
        let con = make_spec(ModelName::MTsConst, &ModelOptions::default()).unwrap();
        let basis = basis_for(&spl, data.n).unwrap().unwrap();

        let mut s_spl = state_for(&data);
        s_spl.mu_gamma = 9.3;
        s_spl.gamma = vec![9.3; basis.basis_count()];
        s_spl.alpha = basis.evaluate_mean(&s_spl.gamma).unwrap();
        let mut s_con = state_for(&data);
        s_con.mu_x = 9.3;

        // compare data-dependent parts; the hyperpriors differ only in which
        // location hyperparameter they include (mu_gamma vs mu_x, both 9.3
        // under the same wide prior)
        let p_spl = log_joint_parts(&spl, &s_spl, &data);
        let p_con = log_joint_parts(&con, &s_con, &data);
        assert_abs_diff_eq!(p_spl.likelihood, p_con.likelihood, epsilon = 1e-9);
        assert_abs_diff_eq!(p_spl.eta, p_con.eta, epsilon = 1e-9);
        assert_abs_diff_eq!(p_spl.x, p_con.x, epsilon = 1e-9);
        assert_abs_diff_eq!(p_spl.total(), p_con.total(), epsilon = 1e-9);
    }

    #[test]
    fn make_spec_defaults() {
        let hard = make_spec(ModelName::MTsSplHard, &ModelOptions::default()).unwrap();
        assert_eq!(
            hard.response,
            Response::Piecewise {
                x_min: 4.0,
                x_max: 20.0
            }
        );
        assert_eq!(hard.climate_mean, ClimateMean::Spline { knot_spacing: 25 });

        let rcs = make_spec(ModelName::MRcsConst, &ModelOptions::default()).unwrap();
        assert_eq!(rcs.growth, Growth::RcsBinned { bin_width: 10 });

        let soft = make_spec(ModelName::MTsSplSoft, &ModelOptions::default()).unwrap();
        assert_eq!(soft.priors.mu_gamma, soft_prior::MU_GAMMA);
        assert_ne!(soft.priors.sigma_x, PriorSet::default_weak().sigma_x);
    }

    #[test]
    fn make_spec_rejects_bad_options() {
        let opts = ModelOptions {
            x_min: 20.0,
            x_max: 4.0,
            ..ModelOptions::default()
        };
        assert!(make_spec(ModelName::MTsSplHard, &opts).is_err());
    }
}
