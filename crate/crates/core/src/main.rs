//! Batch command-line front end. Every subcommand writes its outputs plus a
//! manifest (seed, config hash, versions) into the chosen directory.
//!
//! Exit codes: 0 success, 1 validation or input error, 2 convergence gate
//! tripped on `fit` without --force.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use dendrorecon::calibrate::{self, CalibMethod};
use dendrorecon::check::{self, HoldoutHalf, HoldoutPlan};
use dendrorecon::ingest::{self, ClimateSeries, RingWidthDataset, RingWidthFormat};
use dendrorecon::mcmc::{self, PosteriorDraws, Sampler, SamplerConfig};
use dendrorecon::models::{self, ModelData, ModelName, ModelOptions};
use dendrorecon::simulate::{self, ScenarioSpec};
use dendrorecon::standardize::{self, MeanFn, Method};

const RHAT_GATE: f64 = 1.05;

#[derive(Parser)]
#[command(name = "dendrorecon", version, about = "Climate reconstruction from tree-ring widths")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a site chronology from ring widths.
    Standardize(StandardizeArgs),
    /// Calibrate a chronology against observed climate and predict the rest.
    Calibrate(CalibrateArgs),
    /// Fit a joint Bayesian model by MCMC.
    Fit(FitArgs),
    /// Hold out half the observed climate, refit, score predictions.
    Check(CheckArgs),
    /// Averaged residual diagnostics from a finished fit.
    Residuals(ResidualsArgs),
    /// Generate a synthetic dataset.
    Simulate(SimulateArgs),
    /// Recompute the reconstruction summary from a draws CSV.
    Summary(SummaryArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum CliFormat {
    Csv,
    Tucson,
}

#[derive(Clone, Copy, ValueEnum)]
enum CliMethod {
    Ts,
    Rcs,
}

#[derive(Clone, Copy, ValueEnum)]
enum CliMean {
    Arithmetic,
    Biweight,
}

#[derive(Clone, Copy, ValueEnum)]
enum CliCalib {
    Classical,
    Inverse,
}

#[derive(Clone, Copy, ValueEnum)]
enum CliDrawsFormat {
    Csv,
    Bin,
}

#[derive(Clone, Copy, ValueEnum)]
enum CliHalf {
    First,
    Second,
}

#[derive(Args)]
struct StandardizeArgs {
    /// Ring-width file.
    #[arg(long)]
    rings: PathBuf,
    #[arg(long, value_enum, default_value = "csv")]
    format: CliFormat,
    #[arg(long, value_enum)]
    method: CliMethod,
    #[arg(long, default_value_t = 10)]
    bin_width: u32,
    #[arg(long, value_enum, default_value = "arithmetic")]
    mean: CliMean,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct CalibrateArgs {
    #[arg(long, value_enum)]
    method: CliCalib,
    /// Chronology CSV (year,z,sample_depth).
    #[arg(long)]
    chronology: PathBuf,
    /// Climate CSV (year,temperature_c).
    #[arg(long)]
    climate: PathBuf,
    #[arg(long)]
    allow_gaps: bool,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct SamplerArgs {
    #[arg(long, default_value_t = 4)]
    chains: usize,
    #[arg(long, default_value_t = 20000)]
    iters: usize,
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long, default_value_t = 5)]
    thin: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl SamplerArgs {
    fn to_config(&self) -> SamplerConfig {
        SamplerConfig {
            chains: self.chains,
            iterations: self.iters,
            burn_in: self.burn_in.unwrap_or(self.iters / 2),
            thin: self.thin,
            seed: self.seed,
            ..SamplerConfig::default()
        }
    }
}

#[derive(Args)]
struct FitArgs {
    /// One of m_ts_const, m_rcs_const, m_ts_spl, m_ts_spl_soft, m_ts_spl_hard.
    #[arg(long)]
    model: String,
    #[arg(long)]
    rings: PathBuf,
    #[arg(long, value_enum, default_value = "csv")]
    format: CliFormat,
    #[arg(long)]
    climate: PathBuf,
    #[arg(long)]
    allow_gaps: bool,
    /// TOML file overriding sampler and model options.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    sampler: SamplerArgs,
    #[arg(long, value_enum, default_value = "csv")]
    draws_format: CliDrawsFormat,
    /// Emit summaries even when the convergence gate trips.
    #[arg(long)]
    force: bool,
    /// Dump the spline basis matrix for debugging.
    #[arg(long)]
    dump_basis: bool,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct CheckArgs {
    #[arg(long, value_enum)]
    holdout: CliHalf,
    /// Joint model name; omit to check the multi-step pipeline instead.
    #[arg(long)]
    model: Option<String>,
    #[arg(long, value_enum, default_value = "ts")]
    method: CliMethod,
    #[arg(long, default_value_t = 10)]
    bin_width: u32,
    #[arg(long, value_enum, default_value = "arithmetic")]
    mean: CliMean,
    #[arg(long, value_enum, default_value = "inverse")]
    calib: CliCalib,
    #[arg(long)]
    rings: PathBuf,
    #[arg(long, value_enum, default_value = "csv")]
    format: CliFormat,
    #[arg(long)]
    climate: PathBuf,
    #[arg(long)]
    allow_gaps: bool,
    #[command(flatten)]
    sampler: SamplerArgs,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct ResidualsArgs {
    /// Directory written by `fit` (uses its posterior_means.json).
    #[arg(long)]
    fit: PathBuf,
    #[arg(long)]
    rings: PathBuf,
    #[arg(long, value_enum, default_value = "csv")]
    format: CliFormat,
    #[arg(long)]
    climate: PathBuf,
    #[arg(long)]
    allow_gaps: bool,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    /// One of flat, trend, sine, curse.
    #[arg(long)]
    scenario: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct SummaryArgs {
    /// Draws CSV written by `fit`.
    #[arg(long)]
    draws: PathBuf,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

fn main() -> ExitCode {
    if let Ok(threads) = std::env::var("DENDRORECON_THREADS") {
        if let Ok(n) = threads.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Standardize(a) => cmd_standardize(&a),
        Command::Calibrate(a) => cmd_calibrate(&a),
        Command::Fit(a) => cmd_fit(&a),
        Command::Check(a) => cmd_check(&a),
        Command::Residuals(a) => cmd_residuals(&a),
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Summary(a) => cmd_summary(&a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

type CliResult = Result<ExitCode, Box<dyn std::error::Error>>;

fn cmd_standardize(a: &StandardizeArgs) -> CliResult {
    let d = load_rings(&a.rings, a.format)?;
    let chron = standardize::standardize(&d, a.method.into(), a.bin_width, a.mean.into())?;
    fs::create_dir_all(&a.out)?;
    fs::write(a.out.join("chronology.csv"), chron.write_csv())?;
    write_manifest(&a.out, "standardize", 0, &format!(
        "method={:?},bin_width={},mean={:?}",
        a.method as u8, a.bin_width, a.mean as u8
    ))?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_calibrate(a: &CalibrateArgs) -> CliResult {
    let chron = read_chronology_csv(&a.chronology)?;
    let climate = ingest::parse_climate(&a.climate, a.allow_gaps)?;
    let climate = climate.reindexed(chron.0, chron.1.len());

    let mut z_cal = Vec::new();
    let mut x_cal = Vec::new();
    let mut z_mis = Vec::new();
    let mut mis_years = Vec::new();
    for (t, z) in chron.1.iter().enumerate() {
        let Some(z) = z else { continue };
        match climate.value(t) {
            Some(x) => {
                z_cal.push(*z);
                x_cal.push(x);
            }
            None => {
                z_mis.push(*z);
                mis_years.push(chron.0 + t as i32);
            }
        }
    }
    let fit = match a.method {
        CliCalib::Classical => calibrate::fit_classical(&z_cal, &x_cal)?,
        CliCalib::Inverse => calibrate::fit_inverse(&z_cal, &x_cal)?,
    };
    let preds = calibrate::predict(&fit, &z_mis);
    let mut out = String::from("year,xhat,lo95,hi95\n");
    for (year, p) in mis_years.iter().zip(&preds) {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            year,
            sig6(p.xhat),
            sig6(p.lo95),
            sig6(p.hi95)
        );
    }
    fs::create_dir_all(&a.out)?;
    fs::write(a.out.join("predictions.csv"), out)?;
    write_manifest(&a.out, "calibrate", 0, &format!("method={:?}", a.method as u8))?;
    Ok(ExitCode::SUCCESS)
}

/// TOML override file for `fit`.
#[derive(Default, serde::Deserialize)]
struct FileConfig {
    chains: Option<usize>,
    iterations: Option<usize>,
    burn_in: Option<usize>,
    thin: Option<usize>,
    seed: Option<u64>,
    bin_width: Option<u32>,
    knot_spacing: Option<usize>,
    inv_gamma_scales: Option<bool>,
}

fn cmd_fit(a: &FitArgs) -> CliResult {
    let name = ModelName::parse(&a.model).ok_or_else(|| format!("unknown model '{}'", a.model))?;
    let d = load_rings(&a.rings, a.format)?;
    let climate = ingest::parse_climate(&a.climate, a.allow_gaps)?;
    let climate = climate.reindexed(d.year_min(), d.n_years());

    let mut config = a.sampler.to_config();
    let mut options = ModelOptions::default();
    if let Some(path) = &a.config {
        let fc: FileConfig = toml::from_str(&fs::read_to_string(path)?)?;
        if let Some(v) = fc.chains {
            config.chains = v;
        }
        if let Some(v) = fc.iterations {
            config.iterations = v;
            config.burn_in = fc.burn_in.unwrap_or(v / 2);
        }
        if let Some(v) = fc.burn_in {
            config.burn_in = v;
        }
        if let Some(v) = fc.thin {
            config.thin = v;
        }
        if let Some(v) = fc.seed {
            config.seed = v;
        }
        if let Some(v) = fc.bin_width {
            options.bin_width = v;
        }
        if let Some(v) = fc.knot_spacing {
            options.knot_spacing = v;
        }
        if let Some(v) = fc.inv_gamma_scales {
            options.inv_gamma_scales = v;
        }
    }

    let spec = models::make_spec(name, &options)?;
    let data = ModelData::new(&d, &climate)?;
    let sampler = Sampler::new(spec.clone(), data)?;
    if a.dump_basis {
        if let Some(b) = &sampler.basis {
            fs::create_dir_all(&a.out)?;
            let mut s = String::new();
            for t in 1..=d.n_years() {
                let row: Vec<String> = (0..b.basis_count())
                    .map(|h| sig6(b.value(t, h)))
                    .collect();
                let _ = writeln!(s, "{}", row.join(","));
            }
            fs::write(a.out.join("basis.csv"), s)?;
        }
    }
    let draws = mcmc::run(&sampler, &config)?;
    let diagnostics = draws.diagnostics();
    let max_rhat = diagnostics
        .iter()
        .map(|r| r.rhat)
        .fold(f64::NEG_INFINITY, f64::max);

    fs::create_dir_all(&a.out)?;
    let mut diag_csv = String::from("name,rhat,ess\n");
    for r in &diagnostics {
        let _ = writeln!(diag_csv, "{},{},{}", r.name, sig6(r.rhat), sig6(r.ess));
    }
    fs::write(a.out.join("diagnostics.csv"), diag_csv)?;
    match a.draws_format {
        CliDrawsFormat::Csv => fs::write(a.out.join("draws.csv"), draws_csv(&draws))?,
        CliDrawsFormat::Bin => {
            fs::write(a.out.join("draws.bin"), draws_bin(&draws))?;
            fs::write(a.out.join("draws_columns.txt"), draws_columns(&draws))?;
        }
    }
    fs::write(
        a.out.join("posterior_means.json"),
        serde_json::to_string_pretty(&MeansFile::from(&draws, spec.name.as_str()))?,
    )?;
    let config_hash = fnv_hex(serde_json::to_string(&config)?.as_bytes());
    write_manifest(&a.out, &format!("fit {}", spec.name.as_str()), config.seed, &config_hash)?;

    if max_rhat > RHAT_GATE && !a.force {
        eprintln!(
            "convergence gate: max split-Rhat {max_rhat:.3} exceeds {RHAT_GATE}; \
             rerun longer or pass --force to emit summaries anyway"
        );
        return Ok(ExitCode::from(2));
    }
    let mut summary = String::from("year,median,lo50,hi50,lo95,hi95\n");
    for row in draws.reconstruction_summary() {
        let _ = writeln!(
            summary,
            "{},{},{},{},{},{}",
            row.year,
            sig6(row.median),
            sig6(row.lo50),
            sig6(row.hi50),
            sig6(row.lo95),
            sig6(row.hi95)
        );
    }
    fs::write(a.out.join("summary.csv"), summary)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_check(a: &CheckArgs) -> CliResult {
    let d = load_rings(&a.rings, a.format)?;
    let climate = ingest::parse_climate(&a.climate, a.allow_gaps)?;
    let climate = climate.reindexed(d.year_min(), d.n_years());
    let which = match a.holdout {
        CliHalf::First => HoldoutHalf::FirstHalf,
        CliHalf::Second => HoldoutHalf::SecondHalf,
    };
    let plan = HoldoutPlan::new(&climate, which)?;
    let preds = match &a.model {
        Some(model) => {
            let name =
                ModelName::parse(model).ok_or_else(|| format!("unknown model '{model}'"))?;
            let spec = models::make_spec(name, &ModelOptions::default())?;
            let config = a.sampler.to_config();
            check::holdout_model(&spec, &d, &climate, &plan, &config)?.0
        }
        None => check::holdout_multistep(
            &d,
            &climate,
            a.method.into(),
            a.bin_width,
            a.mean.into(),
            a.calib.into(),
            &plan,
        )?,
    };
    let x_bar = {
        let xs: Vec<f64> = plan
            .retained
            .iter()
            .filter_map(|&t| climate.value(t))
            .collect();
        xs.iter().sum::<f64>() / xs.len() as f64
    };
    let summary = check::summarize_holdout(&preds, x_bar)?;
    let mut csv = String::from("year,truth,xhat,lo50,hi50,lo95,hi95\n");
    for p in &preds {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{}",
            p.year,
            sig6(p.truth),
            sig6(p.xhat),
            sig6(p.lo50),
            sig6(p.hi50),
            sig6(p.lo95),
            sig6(p.hi95)
        );
    }
    fs::create_dir_all(&a.out)?;
    fs::write(a.out.join("holdout.csv"), csv)?;
    fs::write(
        a.out.join("holdout_summary.json"),
        serde_json::to_string_pretty(&summary)?,
    )?;
    write_manifest(&a.out, "check", a.sampler.seed, "holdout")?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_residuals(a: &ResidualsArgs) -> CliResult {
    let means_path = a.fit.join("posterior_means.json");
    let means: MeansFile = serde_json::from_str(&fs::read_to_string(&means_path)?)?;
    let d = load_rings(&a.rings, a.format)?;
    let climate = ingest::parse_climate(&a.climate, a.allow_gaps)?;
    let climate = climate.reindexed(d.year_min(), d.n_years());
    let name = ModelName::parse(&means.model)
        .ok_or_else(|| format!("unknown model '{}' in {}", means.model, means_path.display()))?;
    let spec = models::make_spec(name, &ModelOptions::default())?;
    let data = ModelData::new(&d, &climate)?;
    let draws = means.into_draws(data.year_min, data.n);
    let series = check::averaged_residuals(&draws, &spec, &data);
    fs::create_dir_all(&a.out)?;
    fs::write(a.out.join("residuals.csv"), series.write_csv())?;
    write_manifest(&a.out, "residuals", 0, "residuals")?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_simulate(a: &SimulateArgs) -> CliResult {
    let scenario = ScenarioSpec::by_name(&a.scenario)?;
    let sim = simulate::simulate_dataset(&scenario, a.seed)?;
    fs::create_dir_all(&a.out)?;
    fs::write(a.out.join("rings.csv"), sim.dataset.write_csv())?;
    fs::write(
        a.out.join("climate.csv"),
        climate_csv(&sim.observed_climate(&scenario)),
    )?;
    fs::write(a.out.join("climate_full.csv"), climate_csv(&sim.truth))?;
    write_manifest(&a.out, &format!("simulate {}", a.scenario), a.seed, &a.scenario)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_summary(a: &SummaryArgs) -> CliResult {
    let text = fs::read_to_string(&a.draws)?;
    let mut lines = text.lines();
    let header = lines.next().ok_or("empty draws file")?;
    let cols: Vec<&str> = header.split(',').collect();
    // x columns are named x_<year>
    let x_cols: Vec<(usize, i32)> = cols
        .iter()
        .enumerate()
        .filter_map(|(i, c)| c.strip_prefix("x_").and_then(|y| y.parse().ok()).map(|y| (i, y)))
        .collect();
    if x_cols.is_empty() {
        return Err("draws file has no x_<year> columns".into());
    }
    let mut per_col: Vec<Vec<f64>> = vec![Vec::new(); x_cols.len()];
    for line in lines {
        let fields: Vec<&str> = line.split(',').collect();
        for (j, &(i, _)) in x_cols.iter().enumerate() {
            per_col[j].push(fields[i].parse()?);
        }
    }
    let mut out = String::from("year,median,lo50,hi50,lo95,hi95\n");
    for (j, &(_, year)) in x_cols.iter().enumerate() {
        let d = &per_col[j];
        let q = |p| dendrorecon::stats::quantile(d, p);
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            year,
            sig6(q(0.5)),
            sig6(q(0.25)),
            sig6(q(0.75)),
            sig6(q(0.025)),
            sig6(q(0.975))
        );
    }
    fs::create_dir_all(&a.out)?;
    fs::write(a.out.join("summary.csv"), out)?;
    write_manifest(&a.out, "summary", 0, "summary")?;
    Ok(ExitCode::SUCCESS)
}

impl From<CliMethod> for Method {
    fn from(m: CliMethod) -> Self {
        match m {
            CliMethod::Ts => Method::Ts,
            CliMethod::Rcs => Method::Rcs,
        }
    }
}

impl From<CliMean> for MeanFn {
    fn from(m: CliMean) -> Self {
        match m {
            CliMean::Arithmetic => MeanFn::Arithmetic,
            CliMean::Biweight => MeanFn::TukeyBiweight,
        }
    }
}

impl From<CliCalib> for CalibMethod {
    fn from(m: CliCalib) -> Self {
        match m {
            CliCalib::Classical => CalibMethod::Classical,
            CliCalib::Inverse => CalibMethod::Inverse,
        }
    }
}

fn load_rings(path: &Path, format: CliFormat) -> Result<RingWidthDataset, ingest::IngestError> {
    let f = match format {
        CliFormat::Csv => RingWidthFormat::CsvLong,
        CliFormat::Tucson => RingWidthFormat::Tucson,
    };
    ingest::parse_ring_widths(path, f)
}

/// Chronology CSV reader: returns (year_min, index values).
fn read_chronology_csv(path: &Path) -> Result<(i32, Vec<Option<f64>>), Box<dyn std::error::Error>> {
    let text = fs::read_to_string(path)?;
    let mut year_min = None;
    let mut values = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            if !line.starts_with("year,z") {
                return Err(format!("unexpected chronology header {line:?}").into());
            }
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < 2 {
            return Err(format!("bad chronology line {}", i + 1).into());
        }
        let year: i32 = fields[0].trim().parse()?;
        if year_min.is_none() {
            year_min = Some(year);
        }
        let z = match fields[1].trim() {
            "NA" => None,
            v => Some(v.parse()?),
        };
        values.push(z);
    }
    Ok((year_min.ok_or("empty chronology")?, values))
}

fn climate_csv(c: &ClimateSeries) -> String {
    let mut out = String::from("year,temperature_c\n");
    for (j, v) in c.values().iter().enumerate() {
        let year = c.year_min() + j as i32;
        match v {
            Some(v) => {
                let _ = writeln!(out, "{},{}", year, sig6(*v));
            }
            None => {
                let _ = writeln!(out, "{},NA", year);
            }
        }
    }
    out
}

fn draws_columns(draws: &PosteriorDraws) -> String {
    let mut cols = vec!["chain".to_string(), "iter".to_string()];
    cols.extend(draws.scalar_names.iter().cloned());
    cols.extend(
        draws
            .x_mis_indices
            .iter()
            .map(|&t| format!("x_{}", draws.year_min + t as i32)),
    );
    cols.join(",")
}

fn draws_csv(draws: &PosteriorDraws) -> String {
    let mut out = draws_columns(draws);
    out.push('\n');
    for (c, (scalars, xs)) in draws.scalars.iter().zip(&draws.x_mis).enumerate() {
        for (i, (srow, xrow)) in scalars.iter().zip(xs).enumerate() {
            let _ = write!(out, "{},{}", c, i);
            for v in srow.iter().chain(xrow) {
                let _ = write!(out, ",{}", sig6(*v));
            }
            out.push('\n');
        }
    }
    out
}

/// Binary draws layout, all little-endian: three u64 (chains, rows per
/// chain, values per row), then row-major f64 values chain by chain in the
/// column order of draws_columns (without the chain/iter columns).
fn draws_bin(draws: &PosteriorDraws) -> Vec<u8> {
    let chains = draws.scalars.len() as u64;
    let rows = draws.scalars.first().map(|c| c.len()).unwrap_or(0) as u64;
    let width = (draws.scalar_names.len() + draws.x_mis_indices.len()) as u64;
    let mut buf = Vec::with_capacity(24 + (chains * rows * width * 8) as usize);
    for h in [chains, rows, width] {
        buf.extend_from_slice(&h.to_le_bytes());
    }
    for (scalars, xs) in draws.scalars.iter().zip(&draws.x_mis) {
        for (srow, xrow) in scalars.iter().zip(xs) {
            for v in srow.iter().chain(xrow) {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    buf
}

/// Posterior-mean export from `fit`, consumed by `residuals`.
#[derive(serde::Serialize, serde::Deserialize)]
struct MeansFile {
    model: String,
    beta0: Vec<f64>,
    beta1: Vec<f64>,
    zeta: Vec<f64>,
    eta: Vec<f64>,
    gamma: Vec<f64>,
    x: Vec<f64>,
}

impl MeansFile {
    fn from(draws: &PosteriorDraws, model: &str) -> Self {
        Self {
            model: model.to_string(),
            beta0: draws.posterior_means.beta0.clone(),
            beta1: draws.posterior_means.beta1.clone(),
            zeta: draws.posterior_means.zeta.clone(),
            eta: draws.posterior_means.eta.clone(),
            gamma: draws.posterior_means.gamma.clone(),
            x: draws.posterior_means.x.clone(),
        }
    }

    fn into_draws(self, year_min: i32, n: usize) -> PosteriorDraws {
        PosteriorDraws {
            scalar_names: Vec::new(),
            scalars: Vec::new(),
            x_mis_indices: Vec::new(),
            x_mis: Vec::new(),
            posterior_means: mcmc::PosteriorMeans {
                beta0: self.beta0,
                beta1: self.beta1,
                zeta: self.zeta,
                eta: self.eta,
                gamma: self.gamma,
                x: self.x,
            },
            year_min,
            n,
        }
    }
}

fn sig6(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.5e}")
    } else if v.is_nan() {
        "NaN".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

fn fnv_hex(bytes: &[u8]) -> String {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    format!("{h:016x}")
}

fn write_manifest(out: &Path, command: &str, seed: u64, config_hash: &str) -> std::io::Result<()> {
    let manifest = serde_json::json!({
        "command": command,
        "seed": seed,
        "config_hash": fnv_hex(config_hash.as_bytes()),
        "version": env!("CARGO_PKG_VERSION"),
        "timestamp": std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
    });
    let mut f = fs::File::create(out.join("manifest.json"))?;
    writeln!(f, "{}", serde_json::to_string_pretty(&manifest)?)
}
