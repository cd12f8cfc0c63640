//! Block Gibbs sampler with Metropolis-within-Gibbs for the non-conjugate
//! blocks, plus chain management, convergence diagnostics and posterior
//! summaries.
//!
//! Update schedule per iteration: per-tree growth pairs (or age-bin levels),
//! the eta vector sequentially, beta2, the missing climate values
//! sequentially, spline coefficients, hypermeans, then variances. All blocks
//! are exact conditional draws except the missing-x block under the piecewise
//! response, which uses random-walk Metropolis with acceptance-rate
//! adaptation toward 0.44 during burn-in only.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Gamma, Normal, StandardNormal};
use rayon::prelude::*;
use thiserror::Error;

use crate::models::{
    log_normal_pdf, response_mean, Growth, LatentState, ModelData, ModelError, ModelSpec,
    Response, ScalePrior,
};
use crate::spline::SplineBasis;
use crate::stats;

#[derive(Debug, Error)]
pub enum McmcError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("invalid sampler config: {0}")]
    BadConfig(String),
    #[error("non-finite log density at iteration {iteration} of chain {chain}; state dump: {dump}")]
    Diverged {
        chain: usize,
        iteration: usize,
        dump: String,
    },
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct SamplerConfig {
    pub chains: usize,
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    /// Initial random-walk scale for Metropolis blocks.
    pub step_scale: f64,
    /// Iterations per adaptation batch during burn-in.
    pub adapt_window: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            chains: 4,
            iterations: 20_000,
            burn_in: 10_000,
            thin: 5,
            seed: 0,
            step_scale: 0.5,
            adapt_window: 50,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<(), McmcError> {
        if self.burn_in >= self.iterations {
            return Err(McmcError::BadConfig(format!(
                "burn_in {} must be below iterations {}",
                self.burn_in, self.iterations
            )));
        }
        if self.thin < 1 {
            return Err(McmcError::BadConfig("thin must be >= 1".into()));
        }
        if self.chains < 1 {
            return Err(McmcError::BadConfig("need at least one chain".into()));
        }
        Ok(())
    }

    pub fn saved_per_chain(&self) -> usize {
        (self.iterations - self.burn_in) / self.thin
    }
}

/// One updatable block of the Gibbs schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    /// Joint bivariate (beta0_i, beta1_i) for one tree.
    TreeGrowth(usize),
    Zeta(usize),
    Eta(usize),
    Beta2,
    /// Beta2 drawn with eta integrated out of the likelihood; must be
    /// followed by a full eta refresh.
    Beta2Collapsed,
    XMis(usize),
    Gamma(usize),
    MuBeta0,
    MuBeta1,
    MuX,
    MuGamma,
    VarY,
    VarEta,
    VarX,
    VarBeta0,
    VarBeta1,
    VarGamma,
}

/// Parameter-expansion auxiliaries for half-t scale priors.
#[derive(Debug, Clone)]
pub struct XiAux {
    pub y: f64,
    pub eta: f64,
    pub x: f64,
    pub beta0: f64,
    pub beta1: f64,
    pub gamma: f64,
}

impl Default for XiAux {
    fn default() -> Self {
        Self {
            y: 1.0,
            eta: 1.0,
            x: 1.0,
            beta0: 1.0,
            beta1: 1.0,
            gamma: 1.0,
        }
    }
}

/// Per-chain mutable sampling state.
#[derive(Debug, Clone)]
pub struct ChainState {
    pub state: LatentState,
    pub xi: XiAux,
    /// Per-missing-year random-walk scales (piecewise response only).
    pub rw_scale: Vec<f64>,
    accepts: Vec<u64>,
    attempts: Vec<u64>,
    /// Log-scale random-walk state for the non-centered sigma_eta move.
    nc_scale: f64,
    nc_accepts: u64,
    nc_attempts: u64,
}

/// Immutable sampling context shared across chains.
pub struct Sampler {
    pub spec: ModelSpec,
    pub data: ModelData,
    pub basis: Option<SplineBasis>,
    missing: Vec<usize>,
    n_bins: usize,
    /// Per age bin: (tree, year index, log width).
    bin_obs: Vec<Vec<(usize, usize, f64)>>,
    /// Per basis column: 0-based year indices with nonzero support.
    col_support: Vec<Vec<usize>>,
    col_sumsq: Vec<f64>,
}

impl Sampler {
    pub fn new(spec: ModelSpec, data: ModelData) -> Result<Self, McmcError> {
        if let Response::Piecewise { x_min, .. } = spec.response {
            for (t, x) in data.x_obs.iter().enumerate() {
                if let Some(x) = *x {
                    if x < x_min {
                        return Err(ModelError::ObservedBelowXMin { t, value: x, x_min }.into());
                    }
                }
            }
        }
        let basis = crate::models::basis_for(&spec, data.n)?;
        let missing = data.missing_indices();
        let (n_bins, bin_obs) = match spec.growth {
            Growth::RcsBinned { bin_width } => {
                let n_bins = data.n_bins(bin_width);
                let mut bin_obs = vec![Vec::new(); n_bins];
                for (i, obs) in data.per_tree.iter().enumerate() {
                    for o in obs {
                        bin_obs[ModelData::bin_of(o.age, bin_width)].push((i, o.t, o.log_width));
                    }
                }
                (n_bins, bin_obs)
            }
            Growth::TsLinearAge => (0, Vec::new()),
        };
        let (col_support, col_sumsq) = match &basis {
            Some(b) => {
                let h = b.basis_count();
                let mut support = Vec::with_capacity(h);
                let mut sumsq = Vec::with_capacity(h);
                for col in 0..h {
                    let ts: Vec<usize> =
                        b.column_support(col).into_iter().map(|t| t - 1).collect();
                    let ss = ts.iter().map(|&t| b.value(t + 1, col).powi(2)).sum();
                    support.push(ts);
                    sumsq.push(ss);
                }
                (support, sumsq)
            }
            None => (Vec::new(), Vec::new()),
        };
        Ok(Self {
            spec,
            data,
            basis,
            missing,
            n_bins,
            bin_obs,
            col_support,
            col_sumsq,
        })
    }

    pub fn missing_indices(&self) -> &[usize] {
        &self.missing
    }

    /// Initial chain state; `chain` indexes the overdispersion jitter.
    pub fn init_state(&self, chain: usize, rng: &mut impl Rng) -> ChainState {
        let data = &self.data;
        let k = data.k;
        let n = data.n;
        let jitter = 0.5 + 0.5 * chain as f64;
        let norm: Normal<f64> = Normal::new(0.0, 1.0).unwrap();

        // per-tree OLS of log width on age as a starting point
        let mut beta0 = vec![0.0; k];
        let mut beta1 = vec![0.0; k];
        for (i, obs) in data.per_tree.iter().enumerate() {
            let ages: Vec<f64> = obs.iter().map(|o| o.age as f64).collect();
            let logw: Vec<f64> = obs.iter().map(|o| o.log_width).collect();
            if obs.len() >= 3 && ages.iter().any(|a| *a != ages[0]) {
                let (b0, b1) = stats::ols(&ages, &logw);
                beta0[i] = b0;
                beta1[i] = b1;
            } else {
                beta0[i] = stats::mean(&logw);
            }
            beta0[i] += 0.1 * jitter * norm.sample(rng);
            beta1[i] += 0.002 * jitter * norm.sample(rng);
        }

        // residual year means as an eta starting point
        let mut eta = vec![0.0; n];
        for (t, obs) in data.per_year.iter().enumerate() {
            if !obs.is_empty() {
                let r: Vec<f64> = obs
                    .iter()
                    .map(|&(i, logw, age)| logw - beta0[i] - beta1[i] * age as f64)
                    .collect();
                eta[t] = stats::mean(&r);
            }
        }

        let x_obs_vals: Vec<f64> = data.x_obs.iter().flatten().copied().collect();
        let x_mean = if x_obs_vals.is_empty() {
            match self.spec.response {
                Response::Piecewise { x_min, x_max } => 0.5 * (x_min + x_max),
                Response::Linear => 0.0,
            }
        } else {
            stats::mean(&x_obs_vals)
        };

        // beta2 from the eta-vs-x relationship on the observed span, signed
        // positive under the piecewise constraint
        let obs_idx = data.observed_indices();
        let mut beta2 = if obs_idx.len() >= 3 {
            let xs: Vec<f64> = obs_idx.iter().map(|&t| data.x_obs[t].unwrap()).collect();
            let es: Vec<f64> = obs_idx.iter().map(|&t| eta[t]).collect();
            let (_, slope) = stats::ols(&xs, &es);
            slope
        } else {
            0.1
        };
        if self.spec.is_piecewise() {
            beta2 = beta2.abs().max(0.01);
        }
        beta2 *= 1.0 + 0.3 * jitter * norm.sample(rng).tanh();

        let mut x = vec![0.0; n];
        for t in 0..n {
            x[t] = match data.x_obs[t] {
                Some(v) => v,
                None => {
                    let mut v = x_mean + jitter * norm.sample(rng);
                    if let Response::Piecewise { x_min, .. } = self.spec.response {
                        if v < x_min + 0.1 {
                            v = x_min + 0.1 + (v - x_min - 0.1).abs();
                        }
                    }
                    v
                }
            };
        }

        let x_var0 = if x_obs_vals.len() >= 3 {
            stats::variance(&x_obs_vals).max(1e-3)
        } else {
            1.0
        };

        let (gamma, alpha) = match &self.basis {
            Some(b) => {
                let g = vec![x_mean; b.basis_count()];
                let a = b.evaluate_mean(&g).unwrap();
                (g, a)
            }
            None => (Vec::new(), Vec::new()),
        };

        let zeta = if self.n_bins > 0 {
            let mut z = vec![0.0; self.n_bins];
            for (j, obs) in self.bin_obs.iter().enumerate() {
                if !obs.is_empty() {
                    let v: Vec<f64> = obs.iter().map(|&(_, _, w)| w).collect();
                    z[j] = stats::mean(&v);
                }
            }
            z
        } else {
            Vec::new()
        };

        let state = LatentState {
            mu_beta0: stats::mean(&beta0),
            mu_beta1: stats::mean(&beta1),
            beta0,
            beta1,
            zeta,
            beta2,
            eta,
            x,
            gamma,
            alpha,
            mu_x: x_mean,
            mu_gamma: x_mean,
            var_y: 0.1 * (1.0 + jitter),
            var_eta: 0.05 * (1.0 + jitter),
            var_x: x_var0 * (1.0 + jitter),
            var_beta0: 0.5,
            var_beta1: 0.001,
            var_gamma: 1.0,
        };
        let n_mis = self.missing.len();
        ChainState {
            state,
            xi: XiAux::default(),
            rw_scale: vec![0.5; n_mis],
            accepts: vec![0; n_mis],
            attempts: vec![0; n_mis],
            nc_scale: 0.3,
            nc_accepts: 0,
            nc_attempts: 0,
        }
    }

    /// Exact conditional (or Metropolis) update of one block.
    pub fn update_block(&self, block: Block, chain: &mut ChainState, rng: &mut impl Rng) {
        let spec = &self.spec;
        let data = &self.data;
        match block {
            Block::TreeGrowth(i) => {
                let s = &mut chain.state;
                let obs = &data.per_tree[i];
                let iy = 1.0 / s.var_y;
                let mut a11 = 1.0 / s.var_beta0;
                let mut a12 = 0.0;
                let mut a22 = 1.0 / s.var_beta1;
                let mut b1 = s.mu_beta0 / s.var_beta0;
                let mut b2 = s.mu_beta1 / s.var_beta1;
                for o in obs {
                    let a = o.age as f64;
                    let r = o.log_width - s.eta[o.t];
                    a11 += iy;
                    a12 += a * iy;
                    a22 += a * a * iy;
                    b1 += r * iy;
                    b2 += a * r * iy;
                }
                // 2x2 precision solve + Cholesky sample
                let det = a11 * a22 - a12 * a12;
                let m0 = (a22 * b1 - a12 * b2) / det;
                let m1 = (a11 * b2 - a12 * b1) / det;
                let l11 = a11.sqrt();
                let l21 = a12 / l11;
                let l22 = (a22 - l21 * l21).sqrt();
                let z0: f64 = rng.sample(StandardNormal);
                let z1: f64 = rng.sample(StandardNormal);
                // solve L^T u = z
                let u1 = z1 / l22;
                let u0 = (z0 - l21 * u1) / l11;
                s.beta0[i] = m0 + u0;
                s.beta1[i] = m1 + u1;
            }
            Block::Zeta(j) => {
                let s = &mut chain.state;
                let p = spec.priors.zeta;
                let mut prec = 1.0 / (p.sd * p.sd);
                let mut b = p.mean / (p.sd * p.sd);
                for &(_, t, logw) in &self.bin_obs[j] {
                    prec += 1.0 / s.var_y;
                    b += (logw - s.eta[t]) / s.var_y;
                }
                s.zeta[j] = draw_normal(b / prec, (1.0 / prec).sqrt(), rng);
            }
            Block::Eta(t) => {
                let s = &mut chain.state;
                // at missing years under the linear response, integrate x_t
                // out of the prior; the x draw that follows completes an
                // exact joint (eta_t, x_t) block and breaks their coupling
                let (mu_t, v_t) = if data.x_obs[t].is_none()
                    && matches!(spec.response, Response::Linear)
                {
                    (
                        s.beta2 * s.x_prior_mean(spec, t),
                        s.var_eta + s.beta2 * s.beta2 * s.var_x,
                    )
                } else {
                    (response_mean(spec.response, s.x[t], s.beta2), s.var_eta)
                };
                let mut prec = 1.0 / v_t;
                let mut b = mu_t / v_t;
                for &(i, logw, age) in &data.per_year[t] {
                    let g = s.growth_mean(spec, i, age);
                    prec += 1.0 / s.var_y;
                    b += (logw - g) / s.var_y;
                }
                s.eta[t] = draw_normal(b / prec, (1.0 / prec).sqrt(), rng);
            }
            Block::Beta2 => {
                let s = &mut chain.state;
                let p = spec.priors.beta2;
                let mut prec = 1.0 / (p.sd * p.sd);
                let mut b = p.mean / (p.sd * p.sd);
                for t in 0..data.n {
                    let g = match spec.response {
                        Response::Linear => s.x[t],
                        Response::Piecewise { x_max, .. } => s.x[t].min(x_max),
                    };
                    prec += g * g / s.var_eta;
                    b += g * s.eta[t] / s.var_eta;
                }
                let mean = b / prec;
                let sd = (1.0 / prec).sqrt();
                s.beta2 = if spec.is_piecewise() {
                    draw_truncated_normal_above(mean, sd, 0.0, rng)
                } else {
                    draw_normal(mean, sd, rng)
                };
            }
            Block::Beta2Collapsed => {
                // year means are sufficient for beta2 once eta is
                // marginalized: rbar_t ~ N(beta2 g_t, var_eta + var_y/k_t)
                let s = &mut chain.state;
                let p = spec.priors.beta2;
                let mut prec = 1.0 / (p.sd * p.sd);
                let mut b = p.mean / (p.sd * p.sd);
                for t in 0..data.n {
                    let obs = &data.per_year[t];
                    if obs.is_empty() {
                        continue;
                    }
                    let kt = obs.len() as f64;
                    let g = match spec.response {
                        Response::Linear => s.x[t],
                        Response::Piecewise { x_max, .. } => s.x[t].min(x_max),
                    };
                    let rbar = obs
                        .iter()
                        .map(|&(i, logw, age)| logw - s.growth_mean(spec, i, age))
                        .sum::<f64>()
                        / kt;
                    let v = s.var_eta + s.var_y / kt;
                    prec += g * g / v;
                    b += g * rbar / v;
                }
                let mean = b / prec;
                let sd = (1.0 / prec).sqrt();
                s.beta2 = if spec.is_piecewise() {
                    draw_truncated_normal_above(mean, sd, 0.0, rng)
                } else {
                    draw_normal(mean, sd, rng)
                };
            }
            Block::XMis(mis_idx) => {
                let t = self.missing[mis_idx];
                match spec.response {
                    Response::Linear => {
                        let s = &mut chain.state;
                        let pm = s.x_prior_mean(spec, t);
                        let prec = s.beta2 * s.beta2 / s.var_eta + 1.0 / s.var_x;
                        let b = s.beta2 * s.eta[t] / s.var_eta + pm / s.var_x;
                        s.x[t] = draw_normal(b / prec, (1.0 / prec).sqrt(), rng);
                    }
                    Response::Piecewise { x_min, .. } => {
                        let scale = chain.rw_scale[mis_idx];
                        let s = &mut chain.state;
                        let pm = s.x_prior_mean(spec, t);
                        let cur = s.x[t];
                        let prop = cur + scale * rng.sample::<f64, _>(StandardNormal);
                        chain.attempts[mis_idx] += 1;
                        if prop < x_min {
                            return;
                        }
                        let lp = |x: f64| {
                            log_normal_pdf(
                                s.eta[t],
                                response_mean(spec.response, x, s.beta2),
                                s.var_eta,
                            ) + log_normal_pdf(x, pm, s.var_x)
                        };
                        let log_ratio = lp(prop) - lp(cur);
                        if log_ratio >= 0.0 || rng.random::<f64>().ln() < log_ratio {
                            s.x[t] = prop;
                            chain.accepts[mis_idx] += 1;
                        }
                    }
                }
            }
            Block::Gamma(h) => {
                if spec.freeze_gamma {
                    return;
                }
                let basis = self.basis.as_ref().expect("gamma update requires a basis");
                let s = &mut chain.state;
                let mut prec = 1.0 / s.var_gamma;
                let mut b = s.mu_gamma / s.var_gamma;
                for &t in &self.col_support[h] {
                    let bv = basis.value(t + 1, h);
                    let partial = s.alpha[t] - bv * s.gamma[h];
                    b += bv * (s.x[t] - partial) / s.var_x;
                }
                prec += self.col_sumsq[h] / s.var_x;
                let new = draw_normal(b / prec, (1.0 / prec).sqrt(), rng);
                let delta = new - s.gamma[h];
                s.gamma[h] = new;
                for &t in &self.col_support[h] {
                    s.alpha[t] += basis.value(t + 1, h) * delta;
                }
            }
            Block::MuBeta0 => {
                let s = &mut chain.state;
                let p = spec.priors.mu_beta0;
                let k = data.k as f64;
                let prec = k / s.var_beta0 + 1.0 / (p.sd * p.sd);
                let b = s.beta0.iter().sum::<f64>() / s.var_beta0 + p.mean / (p.sd * p.sd);
                s.mu_beta0 = draw_normal(b / prec, (1.0 / prec).sqrt(), rng);
            }
            Block::MuBeta1 => {
                let s = &mut chain.state;
                let p = spec.priors.mu_beta1;
                let k = data.k as f64;
                let prec = k / s.var_beta1 + 1.0 / (p.sd * p.sd);
                let b = s.beta1.iter().sum::<f64>() / s.var_beta1 + p.mean / (p.sd * p.sd);
                s.mu_beta1 = draw_normal(b / prec, (1.0 / prec).sqrt(), rng);
            }
            Block::MuX => {
                let s = &mut chain.state;
                let p = spec.priors.mu_x;
                let n = data.n as f64;
                let prec = n / s.var_x + 1.0 / (p.sd * p.sd);
                let b = s.x.iter().sum::<f64>() / s.var_x + p.mean / (p.sd * p.sd);
                s.mu_x = draw_normal(b / prec, (1.0 / prec).sqrt(), rng);
            }
            Block::MuGamma => {
                let s = &mut chain.state;
                let p = spec.priors.mu_gamma;
                if spec.freeze_gamma {
                    // gamma pinned to mu_gamma: x_t ~ N(mu_gamma, var_x) directly
                    let n = data.n as f64;
                    let prec = n / s.var_x + 1.0 / (p.sd * p.sd);
                    let b = s.x.iter().sum::<f64>() / s.var_x + p.mean / (p.sd * p.sd);
                    s.mu_gamma = draw_normal(b / prec, (1.0 / prec).sqrt(), rng);
                    for g in s.gamma.iter_mut() {
                        *g = s.mu_gamma;
                    }
                    for a in s.alpha.iter_mut() {
                        *a = s.mu_gamma;
                    }
                } else {
                    let h = s.gamma.len() as f64;
                    let prec = h / s.var_gamma + 1.0 / (p.sd * p.sd);
                    let b =
                        s.gamma.iter().sum::<f64>() / s.var_gamma + p.mean / (p.sd * p.sd);
                    s.mu_gamma = draw_normal(b / prec, (1.0 / prec).sqrt(), rng);
                }
            }
            Block::VarY => {
                let s = &mut chain.state;
                let mut ss = 0.0;
                let mut count = 0usize;
                for (i, obs) in data.per_tree.iter().enumerate() {
                    for o in obs {
                        let d = o.log_width - s.growth_mean(spec, i, o.age) - s.eta[o.t];
                        ss += d * d;
                        count += 1;
                    }
                }
                let (var, xi) =
                    draw_variance(spec.priors.sigma_y, chain.xi.y, count, ss, rng);
                s.var_y = var;
                chain.xi.y = xi;
            }
            Block::VarEta => {
                let s = &mut chain.state;
                let mut ss = 0.0;
                for t in 0..data.n {
                    let d = s.eta[t] - response_mean(spec.response, s.x[t], s.beta2);
                    ss += d * d;
                }
                let (var, xi) =
                    draw_variance(spec.priors.sigma_eta, chain.xi.eta, data.n, ss, rng);
                s.var_eta = var;
                chain.xi.eta = xi;
            }
            Block::VarX => {
                let s = &mut chain.state;
                let mut ss = 0.0;
                for t in 0..data.n {
                    let d = s.x[t] - s.x_prior_mean(spec, t);
                    ss += d * d;
                }
                let (var, xi) =
                    draw_variance(spec.priors.sigma_x, chain.xi.x, data.n, ss, rng);
                s.var_x = var;
                chain.xi.x = xi;
            }
            Block::VarBeta0 => {
                let s = &mut chain.state;
                let ss: f64 = s
                    .beta0
                    .iter()
                    .map(|b| (b - s.mu_beta0) * (b - s.mu_beta0))
                    .sum();
                let (var, xi) =
                    draw_variance(spec.priors.sigma_beta0, chain.xi.beta0, data.k, ss, rng);
                s.var_beta0 = var;
                chain.xi.beta0 = xi;
            }
            Block::VarBeta1 => {
                let s = &mut chain.state;
                let ss: f64 = s
                    .beta1
                    .iter()
                    .map(|b| (b - s.mu_beta1) * (b - s.mu_beta1))
                    .sum();
                let (var, xi) =
                    draw_variance(spec.priors.sigma_beta1, chain.xi.beta1, data.k, ss, rng);
                s.var_beta1 = var;
                chain.xi.beta1 = xi;
            }
            Block::VarGamma => {
                if spec.freeze_gamma {
                    return;
                }
                let s = &mut chain.state;
                let ss: f64 = s
                    .gamma
                    .iter()
                    .map(|g| (g - s.mu_gamma) * (g - s.mu_gamma))
                    .sum();
                let (var, xi) = draw_variance(
                    spec.priors.sigma_gamma,
                    chain.xi.gamma,
                    s.gamma.len(),
                    ss,
                    rng,
                );
                s.var_gamma = var;
                chain.xi.gamma = xi;
            }
        }
    }

    /// One full Gibbs sweep.
    pub fn sweep(&self, chain: &mut ChainState, rng: &mut impl Rng) {
        match self.spec.growth {
            Growth::TsLinearAge => {
                for i in 0..self.data.k {
                    self.update_block(Block::TreeGrowth(i), chain, rng);
                }
            }
            Growth::RcsBinned { .. } => {
                for j in 0..self.n_bins {
                    self.update_block(Block::Zeta(j), chain, rng);
                }
            }
        }
        self.update_block(Block::Beta2Collapsed, chain, rng);
        for t in 0..self.data.n {
            self.update_block(Block::Eta(t), chain, rng);
        }
        for m in 0..self.missing.len() {
            self.update_block(Block::XMis(m), chain, rng);
        }
        if self.spec.uses_spline() {
            let h = chain.state.gamma.len();
            for col in 0..h {
                self.update_block(Block::Gamma(col), chain, rng);
            }
            self.update_block(Block::MuGamma, chain, rng);
        } else {
            self.update_block(Block::MuX, chain, rng);
        }
        if matches!(self.spec.growth, Growth::TsLinearAge) {
            self.update_block(Block::MuBeta0, chain, rng);
            self.update_block(Block::MuBeta1, chain, rng);
            self.update_block(Block::VarBeta0, chain, rng);
            self.update_block(Block::VarBeta1, chain, rng);
        }
        self.update_block(Block::VarY, chain, rng);
        self.update_block(Block::VarEta, chain, rng);
        self.update_block(Block::VarX, chain, rng);
        if self.spec.uses_spline() {
            self.update_block(Block::VarGamma, chain, rng);
        }
        self.level_shift(chain, rng);
        self.beta2_ridge_move(chain, rng);
        self.sigma_eta_interweave(chain, rng);
    }

    /// Translation move along the likelihood-invariant direction
    /// (growth levels up by c, every eta down by c). The likelihood only
    /// sees their sum, so single-site updates drift along this ridge
    /// slowly; sampling the shift from its exact Gaussian conditional
    /// (translation group, unit Jacobian) decorrelates the two levels.
    fn level_shift(&self, chain: &mut ChainState, rng: &mut impl Rng) {
        let spec = &self.spec;
        let s = &mut chain.state;
        let n = self.data.n as f64;
        let mut prec = n / s.var_eta;
        let mut grad = 0.0;
        for t in 0..self.data.n {
            let mu_t = response_mean(spec.response, s.x[t], s.beta2);
            grad += (s.eta[t] - mu_t) / s.var_eta;
        }
        match spec.growth {
            Growth::TsLinearAge => {
                prec += self.data.k as f64 / s.var_beta0;
                for b in &s.beta0 {
                    grad -= (b - s.mu_beta0) / s.var_beta0;
                }
            }
            Growth::RcsBinned { .. } => {
                let p = spec.priors.zeta;
                let v = p.sd * p.sd;
                prec += s.zeta.len() as f64 / v;
                for z in &s.zeta {
                    grad -= (z - p.mean) / v;
                }
            }
        }
        let c = draw_normal(grad / prec, (1.0 / prec).sqrt(), rng);
        match spec.growth {
            Growth::TsLinearAge => {
                for b in s.beta0.iter_mut() {
                    *b += c;
                }
            }
            Growth::RcsBinned { .. } => {
                for z in s.zeta.iter_mut() {
                    *z += c;
                }
            }
        }
        for e in s.eta.iter_mut() {
            *e -= c;
        }
    }

    /// Exact Gaussian move along the slow posterior ridge coupling beta2
    /// to the eta and growth levels: beta2 += d, eta_t += d g_t, growth
    /// levels -= d gbar (with mu_beta0 shifted alongside so the growth
    /// prior stays invariant). The eta prior residual eta - beta2 g is
    /// unchanged by construction, so only the likelihood and the flat
    /// hyperpriors inform d and its conditional is Gaussian (translation
    /// group, unit Jacobian). Truncated at d > -beta2 under the piecewise
    /// response.
    fn beta2_ridge_move(&self, chain: &mut ChainState, rng: &mut impl Rng) {
        let spec = &self.spec;
        let data = &self.data;
        let s = &mut chain.state;
        let g_of = |x: f64| match spec.response {
            Response::Linear => x,
            Response::Piecewise { x_max, .. } => x.min(x_max),
        };
        let mut n_obs = 0usize;
        let mut g_sum = 0.0;
        for t in 0..data.n {
            let kt = data.per_year[t].len();
            n_obs += kt;
            g_sum += kt as f64 * g_of(s.x[t]);
        }
        if n_obs == 0 {
            return;
        }
        let gbar = g_sum / n_obs as f64;

        let mut prec = 0.0;
        let mut lin = 0.0;
        for t in 0..data.n {
            let w = g_of(s.x[t]) - gbar;
            for &(i, logw, age) in &data.per_year[t] {
                let eps = logw - s.growth_mean(spec, i, age) - s.eta[t];
                prec += w * w / s.var_y;
                lin += eps * w / s.var_y;
            }
        }
        // beta2 prior
        let pb = spec.priors.beta2;
        prec += 1.0 / (pb.sd * pb.sd);
        lin += (pb.mean - s.beta2) / (pb.sd * pb.sd);
        match spec.growth {
            Growth::TsLinearAge => {
                // beta0 prior invariant (mu_beta0 shifts too); mu_beta0
                // hyperprior picks up the shift
                let p = spec.priors.mu_beta0;
                prec += gbar * gbar / (p.sd * p.sd);
                lin += (s.mu_beta0 - p.mean) * gbar / (p.sd * p.sd);
            }
            Growth::RcsBinned { .. } => {
                let p = spec.priors.zeta;
                let v = p.sd * p.sd;
                for z in &s.zeta {
                    prec += gbar * gbar / v;
                    lin += (z - p.mean) * gbar / v;
                }
            }
        }
        let mean = lin / prec;
        let sd = (1.0 / prec).sqrt();
        let d = if spec.is_piecewise() {
            draw_truncated_normal_above(mean, sd, -s.beta2, rng)
        } else {
            draw_normal(mean, sd, rng)
        };
        s.beta2 += d;
        for t in 0..data.n {
            s.eta[t] += d * g_of(s.x[t]);
        }
        match spec.growth {
            Growth::TsLinearAge => {
                for b in s.beta0.iter_mut() {
                    *b -= d * gbar;
                }
                s.mu_beta0 -= d * gbar;
            }
            Growth::RcsBinned { .. } => {
                for z in s.zeta.iter_mut() {
                    *z -= d * gbar;
                }
            }
        }
    }

    /// Interweaved non-centered update of sigma_eta: holding the
    /// standardized residuals eps_t = (eta_t - mu_t)/sigma_eta fixed,
    /// propose a new scale on the log axis and accept against the
    /// likelihood (eta enters it as mu_t + s * eps_t there) plus the
    /// variance prior. Escapes the funnel that traps the conjugate draw
    /// when sigma_eta wanders near zero.
    fn sigma_eta_interweave(&self, chain: &mut ChainState, rng: &mut impl Rng) {
        let spec = &self.spec;
        let data = &self.data;
        let s_old = chain.state.var_eta.sqrt();
        let step = chain.nc_scale;
        let s_new = (s_old.ln() + step * rng.sample::<f64, _>(StandardNormal)).exp();
        chain.nc_attempts += 1;
        let st = &mut chain.state;
        let mut eps = vec![0.0; data.n];
        let mut mu = vec![0.0; data.n];
        for t in 0..data.n {
            mu[t] = response_mean(spec.response, st.x[t], st.beta2);
            eps[t] = (st.eta[t] - mu[t]) / s_old;
        }
        // likelihood difference over every observation
        let mut delta = 0.0;
        for (i, obs) in data.per_tree.iter().enumerate() {
            for o in obs {
                let r = o.log_width - st.growth_mean(spec, i, o.age) - mu[o.t];
                let e_old = r - s_old * eps[o.t];
                let e_new = r - s_new * eps[o.t];
                delta += (e_old * e_old - e_new * e_new) / (2.0 * st.var_y);
            }
        }
        // variance prior (conditional IG under half-t expansion) plus the
        // log-scale proposal Jacobian
        let (a, b) = match spec.priors.sigma_eta {
            ScalePrior::InvGamma { shape, rate } => (shape, rate),
            ScalePrior::HalfT { df, .. } => (df / 2.0, df / chain.xi.eta),
        };
        let lp = |s: f64| -2.0 * (a + 1.0) * s.ln() - b / (s * s) + 2.0 * s.ln();
        delta += lp(s_new) - lp(s_old);
        if delta >= 0.0 || rng.random::<f64>().ln() < delta {
            chain.nc_accepts += 1;
            st.var_eta = s_new * s_new;
            for t in 0..data.n {
                st.eta[t] = mu[t] + s_new * eps[t];
            }
        }
    }

    fn adapt(&self, chain: &mut ChainState) {
        if chain.nc_attempts > 0 {
            let rate = chain.nc_accepts as f64 / chain.nc_attempts as f64;
            chain.nc_scale = (chain.nc_scale * ((rate - 0.44) * 1.2).exp()).clamp(1e-3, 5.0);
            chain.nc_accepts = 0;
            chain.nc_attempts = 0;
        }
        for m in 0..chain.rw_scale.len() {
            if chain.attempts[m] == 0 {
                continue;
            }
            let rate = chain.accepts[m] as f64 / chain.attempts[m] as f64;
            let factor = ((rate - 0.44) * 1.2).exp();
            chain.rw_scale[m] = (chain.rw_scale[m] * factor).clamp(1e-3, 50.0);
            chain.accepts[m] = 0;
            chain.attempts[m] = 0;
        }
    }

    /// Names of the scalar parameters stored in the draws, in order.
    pub fn scalar_names(&self) -> Vec<String> {
        let mut names = vec![
            "beta2".to_string(),
            "sigma_y".to_string(),
            "sigma_eta".to_string(),
            "sigma_x".to_string(),
        ];
        if self.spec.uses_spline() {
            names.push("mu_gamma".to_string());
            if !self.spec.freeze_gamma {
                names.push("sigma_gamma".to_string());
            }
        } else {
            names.push("mu_x".to_string());
        }
        if matches!(self.spec.growth, Growth::TsLinearAge) {
            names.extend(
                ["mu_beta0", "mu_beta1", "sigma_beta0", "sigma_beta1"]
                    .map(str::to_string),
            );
        }
        names
    }

    fn scalar_values(&self, s: &LatentState) -> Vec<f64> {
        let mut v = vec![
            s.beta2,
            s.var_y.sqrt(),
            s.var_eta.sqrt(),
            s.var_x.sqrt(),
        ];
        if self.spec.uses_spline() {
            v.push(s.mu_gamma);
            if !self.spec.freeze_gamma {
                v.push(s.var_gamma.sqrt());
            }
        } else {
            v.push(s.mu_x);
        }
        if matches!(self.spec.growth, Growth::TsLinearAge) {
            v.extend([
                s.mu_beta0,
                s.mu_beta1,
                s.var_beta0.sqrt(),
                s.var_beta1.sqrt(),
            ]);
        }
        v
    }
}

fn draw_normal(mean: f64, sd: f64, rng: &mut impl Rng) -> f64 {
    mean + sd * rng.sample::<f64, _>(StandardNormal)
}

/// Truncated normal on (lo, inf): plain rejection near the bulk, Robert's
/// translated-exponential proposal in the tail.
pub fn draw_truncated_normal_above(mean: f64, sd: f64, lo: f64, rng: &mut impl Rng) -> f64 {
    let a = (lo - mean) / sd;
    if a < 0.5 {
        loop {
            let z: f64 = rng.sample(StandardNormal);
            if z >= a {
                return mean + sd * z;
            }
        }
    }
    let lambda = 0.5 * (a + (a * a + 4.0).sqrt());
    loop {
        let u: f64 = rng.random();
        let z = a - u.ln() / lambda;
        let rho = (-0.5 * (z - lambda) * (z - lambda)).exp();
        if rng.random::<f64>() <= rho {
            return mean + sd * z;
        }
    }
}

fn draw_inv_gamma(shape: f64, rate: f64, rng: &mut impl Rng) -> f64 {
    let g = Gamma::new(shape, 1.0 / rate).expect("valid gamma");
    1.0 / g.sample(rng)
}

/// Conditional draw of a variance (and its expansion auxiliary under a
/// half-t prior) given the sum of squares of `count` residuals.
fn draw_variance(
    prior: ScalePrior,
    xi: f64,
    count: usize,
    ss: f64,
    rng: &mut impl Rng,
) -> (f64, f64) {
    match prior {
        ScalePrior::InvGamma { shape, rate } => (
            draw_inv_gamma(shape + count as f64 / 2.0, rate + ss / 2.0, rng),
            xi,
        ),
        ScalePrior::HalfT { df, scale } => {
            // Huang-Wand expansion: var | xi ~ IG(df/2, df/xi), xi ~ IG(1/2, 1/scale^2)
            let var = draw_inv_gamma(
                (df + count as f64) / 2.0,
                df / xi + ss / 2.0,
                rng,
            );
            let new_xi = draw_inv_gamma(
                (df + 1.0) / 2.0,
                df / var + 1.0 / (scale * scale),
                rng,
            );
            (var, new_xi)
        }
    }
}

/// Posterior samples plus running-mean summaries of the large latent blocks.
#[derive(Debug, Clone)]
pub struct PosteriorDraws {
    pub scalar_names: Vec<String>,
    /// Indexed [chain][saved iteration][scalar].
    pub scalars: Vec<Vec<Vec<f64>>>,
    /// Year indices (0-based) of the missing climate values.
    pub x_mis_indices: Vec<usize>,
    /// Indexed [chain][saved iteration][missing-year position].
    pub x_mis: Vec<Vec<Vec<f64>>>,
    pub posterior_means: PosteriorMeans,
    pub year_min: i32,
    pub n: usize,
}

/// Post-burn-in means of the latent blocks not stored draw by draw.
#[derive(Debug, Clone, Default)]
pub struct PosteriorMeans {
    pub beta0: Vec<f64>,
    pub beta1: Vec<f64>,
    pub zeta: Vec<f64>,
    pub eta: Vec<f64>,
    pub gamma: Vec<f64>,
    pub x: Vec<f64>,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct ReconRow {
    pub year: i32,
    pub median: f64,
    pub lo50: f64,
    pub hi50: f64,
    pub lo95: f64,
    pub hi95: f64,
}

impl PosteriorDraws {
    pub fn chains(&self) -> usize {
        self.scalars.len()
    }

    /// All post-burn-in draws of a scalar parameter, flattened across chains.
    pub fn scalar_draws(&self, name: &str) -> Option<Vec<f64>> {
        let idx = self.scalar_names.iter().position(|n| n == name)?;
        Some(
            self.scalars
                .iter()
                .flat_map(|chain| chain.iter().map(move |row| row[idx]))
                .collect(),
        )
    }

    /// Draws of x at a missing year index, flattened across chains.
    pub fn x_mis_draws(&self, mis_pos: usize) -> Vec<f64> {
        self.x_mis
            .iter()
            .flat_map(|chain| chain.iter().map(move |row| row[mis_pos]))
            .collect()
    }

    /// Central interval of a scalar parameter.
    pub fn scalar_interval(&self, name: &str, level: f64) -> Option<(f64, f64)> {
        let draws = self.scalar_draws(name)?;
        let lo = (1.0 - level) / 2.0;
        Some((stats::quantile(&draws, lo), stats::quantile(&draws, 1.0 - lo)))
    }

    /// Per-year reconstruction summary over the missing span.
    pub fn reconstruction_summary(&self) -> Vec<ReconRow> {
        self.x_mis_indices
            .iter()
            .enumerate()
            .map(|(pos, &t)| {
                let draws = self.x_mis_draws(pos);
                ReconRow {
                    year: self.year_min + t as i32,
                    median: stats::quantile(&draws, 0.5),
                    lo50: stats::quantile(&draws, 0.25),
                    hi50: stats::quantile(&draws, 0.75),
                    lo95: stats::quantile(&draws, 0.025),
                    hi95: stats::quantile(&draws, 0.975),
                }
            })
            .collect()
    }

    /// Monitored parameters for the convergence gate: every scalar plus 20
    /// evenly spaced missing-year climate values.
    pub fn diagnostics(&self) -> Vec<DiagRow> {
        let mut rows = Vec::new();
        for (idx, name) in self.scalar_names.iter().enumerate() {
            let per_chain: Vec<Vec<f64>> = self
                .scalars
                .iter()
                .map(|chain| chain.iter().map(|r| r[idx]).collect())
                .collect();
            rows.push(DiagRow {
                name: name.clone(),
                rhat: split_rhat(&per_chain),
                ess: effective_sample_size(&per_chain),
            });
        }
        let n_mis = self.x_mis_indices.len();
        if n_mis > 0 {
            let count = n_mis.min(20);
            for j in 0..count {
                let pos = j * n_mis / count;
                let per_chain: Vec<Vec<f64>> = self
                    .x_mis
                    .iter()
                    .map(|chain| chain.iter().map(|r| r[pos]).collect())
                    .collect();
                rows.push(DiagRow {
                    name: format!("x_{}", self.year_min + self.x_mis_indices[pos] as i32),
                    rhat: split_rhat(&per_chain),
                    ess: effective_sample_size(&per_chain),
                });
            }
        }
        rows
    }

    pub fn max_rhat(&self) -> f64 {
        self.diagnostics()
            .iter()
            .map(|d| d.rhat)
            .fold(f64::NAN, |acc, r| if acc.is_nan() || r > acc { r } else { acc })
    }
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct DiagRow {
    pub name: String,
    pub rhat: f64,
    pub ess: f64,
}

/// Run the sampler; chains execute in parallel, each with its own
/// counter-based RNG derived from the master seed.
pub fn run(
    sampler: &Sampler,
    config: &SamplerConfig,
) -> Result<PosteriorDraws, McmcError> {
    config.validate()?;
    let chain_ids: Vec<usize> = (0..config.chains).collect();
    let results: Vec<Result<ChainOutput, McmcError>> = chain_ids
        .par_iter()
        .map(|&c| run_chain(sampler, config, c))
        .collect();

    let mut scalars = Vec::with_capacity(config.chains);
    let mut x_mis = Vec::with_capacity(config.chains);
    let mut means = PosteriorMeans::default();
    let mut mean_count = 0usize;
    for r in results {
        let out = r?;
        scalars.push(out.scalars);
        x_mis.push(out.x_mis);
        accumulate(&mut means.beta0, &out.sums.beta0);
        accumulate(&mut means.beta1, &out.sums.beta1);
        accumulate(&mut means.zeta, &out.sums.zeta);
        accumulate(&mut means.eta, &out.sums.eta);
        accumulate(&mut means.gamma, &out.sums.gamma);
        accumulate(&mut means.x, &out.sums.x);
        mean_count += out.count;
    }
    let scale = 1.0 / mean_count as f64;
    for v in [
        &mut means.beta0,
        &mut means.beta1,
        &mut means.zeta,
        &mut means.eta,
        &mut means.gamma,
        &mut means.x,
    ] {
        for e in v.iter_mut() {
            *e *= scale;
        }
    }
    Ok(PosteriorDraws {
        scalar_names: sampler.scalar_names(),
        scalars,
        x_mis_indices: sampler.missing.clone(),
        x_mis,
        posterior_means: means,
        year_min: sampler.data.year_min,
        n: sampler.data.n,
    })
}

fn accumulate(dst: &mut Vec<f64>, src: &[f64]) {
    if dst.is_empty() {
        *dst = src.to_vec();
    } else {
        for (d, s) in dst.iter_mut().zip(src) {
            *d += s;
        }
    }
}

struct ChainOutput {
    scalars: Vec<Vec<f64>>,
    x_mis: Vec<Vec<f64>>,
    sums: PosteriorMeans,
    count: usize,
}

fn chain_rng(seed: u64, chain: usize) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(chain as u64 + 1);
    rng
}

fn run_chain(
    sampler: &Sampler,
    config: &SamplerConfig,
    chain_id: usize,
) -> Result<ChainOutput, McmcError> {
    let mut rng = chain_rng(config.seed, chain_id);
    let mut chain = sampler.init_state(chain_id, &mut rng);
    let saved = config.saved_per_chain();
    let mut scalars = Vec::with_capacity(saved);
    let mut x_mis = Vec::with_capacity(saved);
    let mut sums = PosteriorMeans {
        beta0: vec![0.0; chain.state.beta0.len()],
        beta1: vec![0.0; chain.state.beta1.len()],
        zeta: vec![0.0; chain.state.zeta.len()],
        eta: vec![0.0; chain.state.eta.len()],
        gamma: vec![0.0; chain.state.gamma.len()],
        x: vec![0.0; chain.state.x.len()],
    };
    let mut count = 0usize;
    for iter in 0..config.iterations {
        sampler.sweep(&mut chain, &mut rng);
        let in_burn = iter < config.burn_in;
        if in_burn && (iter + 1) % config.adapt_window == 0 {
            sampler.adapt(&mut chain);
        }
        if chain.state.beta2.is_nan()
            || !chain.state.var_y.is_finite()
            || chain.state.eta.iter().any(|e| !e.is_finite())
            || chain.state.x.iter().any(|x| !x.is_finite())
        {
            return Err(McmcError::Diverged {
                chain: chain_id,
                iteration: iter,
                dump: format!(
                    "beta2={} var_y={} var_eta={} var_x={}",
                    chain.state.beta2,
                    chain.state.var_y,
                    chain.state.var_eta,
                    chain.state.var_x
                ),
            });
        }
        if !in_burn {
            for (dst, src) in [
                (&mut sums.beta0, &chain.state.beta0),
                (&mut sums.beta1, &chain.state.beta1),
                (&mut sums.zeta, &chain.state.zeta),
                (&mut sums.eta, &chain.state.eta),
                (&mut sums.gamma, &chain.state.gamma),
                (&mut sums.x, &chain.state.x),
            ] {
                for (d, s) in dst.iter_mut().zip(src.iter()) {
                    *d += s;
                }
            }
            count += 1;
            if (iter - config.burn_in) % config.thin == 0 {
                scalars.push(sampler.scalar_values(&chain.state));
                x_mis.push(
                    sampler
                        .missing
                        .iter()
                        .map(|&t| chain.state.x[t])
                        .collect(),
                );
            }
        }
    }
    Ok(ChainOutput {
        scalars,
        x_mis,
        sums,
        count,
    })
}

/// Split-chain potential scale reduction factor.
pub fn split_rhat(chains: &[Vec<f64>]) -> f64 {
    let mut halves: Vec<&[f64]> = Vec::new();
    for c in chains {
        let h = c.len() / 2;
        if h < 2 {
            return f64::NAN;
        }
        halves.push(&c[..h]);
        halves.push(&c[h..h * 2]);
    }
    let m = halves.len() as f64;
    let n = halves[0].len() as f64;
    let means: Vec<f64> = halves.iter().map(|h| stats::mean(h)).collect();
    let vars: Vec<f64> = halves.iter().map(|h| stats::variance(h)).collect();
    let grand = stats::mean(&means);
    let b = n / (m - 1.0) * means.iter().map(|mu| (mu - grand).powi(2)).sum::<f64>();
    let w = stats::mean(&vars);
    if w <= 0.0 {
        return 1.0;
    }
    let var_plus = (n - 1.0) / n * w + b / n;
    (var_plus / w).sqrt()
}

/// Autocorrelation-based effective sample size over all chains (Geyer
/// initial positive sequence).
pub fn effective_sample_size(chains: &[Vec<f64>]) -> f64 {
    let m = chains.len() as f64;
    let n = chains[0].len();
    if n < 4 {
        return f64::NAN;
    }
    // within-chain autocovariances averaged across chains
    let mut acov = vec![0.0; n];
    let mut w = 0.0;
    for c in chains {
        let mu = stats::mean(c);
        let var = c.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / n as f64;
        w += var;
        for lag in 0..n {
            let mut s = 0.0;
            for i in 0..n - lag {
                s += (c[i] - mu) * (c[i + lag] - mu);
            }
            acov[lag] += s / n as f64;
        }
    }
    w /= m;
    if w <= 0.0 {
        return f64::NAN;
    }
    for a in acov.iter_mut() {
        *a /= m;
    }
    let mut sum_rho = 0.0;
    let mut lag = 1;
    while lag + 1 < n {
        let pair = (acov[lag] + acov[lag + 1]) / w;
        if pair < 0.0 {
            break;
        }
        sum_rho += pair;
        lag += 2;
    }
    let total = m * n as f64;
    total / (1.0 + 2.0 * sum_rho)
}
