//! Experiment orchestration: configuration, seeded trials, aggregation, CSV/SVG output
//! and the desk- and full-scale presets of the four-estimator comparison.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::amp::{init_u1, run_amp_from, AmpConfig, DenoiserChoice, DEFAULT_INIT_CORR};
use crate::bayes_theory::theory_point;
use crate::ensembles::{build_instance, NoiseSpec};
use crate::rng::{derive_seed, mix64, rng_from_seed};
use crate::spectral::spectral_pair;
use crate::state_evolution::{se_cumulants, se_predict_metrics, MCConfig, StateEvolution};

pub const CONFIG_VERSION: u32 = 1;
pub const THREADS_ENV: &str = "SPIKEBENCH_THREADS";
/// Largest tolerated fraction of failed trials per grid point and estimator.
pub const MAX_FAILURE_FRACTION: f64 = 0.1;
pub const CSV_HEADER: [&str; 10] = ["estimator", "lambda_star", "lambda", "metric", "value", "stderr", "n", "m", "trials", "seed"];

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("{failed} of {total} trials failed for {estimator} at lambda_star = {lambda_star}")]
    TooManyFailures { estimator: String, lambda_star: f64, failed: usize, total: usize },
    #[error("no records to write")]
    EmptyRecords,
    #[error("cannot write {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("malformed results file: {0}")]
    Parse(String),
}

impl HarnessError {
    pub fn is_config(&self) -> bool {
        matches!(self, HarnessError::Config(_))
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io { path: path.to_path_buf(), source }
}

/// How the assumed SNR λ is derived from the true SNR λ*.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case", deny_unknown_fields)]
pub enum MismatchRule {
    Matched,
    Scaled { factor: f64 },
    Fixed { lambda: f64 },
}

impl MismatchRule {
    pub fn lambda(&self, lambda_star: f64) -> f64 {
        match *self {
            MismatchRule::Matched => lambda_star,
            MismatchRule::Scaled { factor } => factor * lambda_star,
            MismatchRule::Fixed { lambda } => lambda,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    BayesTheory,
    Amp,
    Se,
    Optspec,
    Gauspec,
}

impl Estimator {
    pub const ALL: [Estimator; 5] =
        [Estimator::BayesTheory, Estimator::Amp, Estimator::Se, Estimator::Optspec, Estimator::Gauspec];

    pub fn name(&self) -> &'static str {
        match self {
            Estimator::BayesTheory => "bayes_theory",
            Estimator::Amp => "amp",
            Estimator::Se => "se",
            Estimator::Optspec => "optspec",
            Estimator::Gauspec => "gauspec",
        }
    }

    fn is_spectral(&self) -> bool {
        matches!(self, Estimator::Optspec | Estimator::Gauspec)
    }

    fn is_deterministic(&self) -> bool {
        matches!(self, Estimator::BayesTheory | Estimator::Se)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Mse,
    Overlap,
}

impl Metric {
    pub fn name(&self) -> &'static str {
        match self {
            Metric::Mse => "mse",
            Metric::Overlap => "overlap",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "mse" => Some(Metric::Mse),
            "overlap" => Some(Metric::Overlap),
            _ => None,
        }
    }
}

/// AMP settings shared by every grid point; λ comes from the mismatch rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AmpSettings {
    pub t_max: usize,
    pub init_corr: f64,
    pub denoiser: DenoiserChoice,
}

impl Default for AmpSettings {
    fn default() -> Self {
        AmpSettings { t_max: 8, init_corr: DEFAULT_INIT_CORR, denoiser: DenoiserChoice::LinearAssumedModel }
    }
}

impl AmpSettings {
    pub fn config(&self, lambda: f64) -> AmpConfig {
        AmpConfig { init_corr: self.init_corr, denoiser: self.denoiser.into(), ..AmpConfig::new(lambda, self.t_max) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub noise: NoiseSpec,
    pub aspect: f64,
    pub m: usize,
    /// Defaults to round(α·m).
    #[serde(default)]
    pub n: Option<usize>,
    /// Dimension m for the spectral estimators; defaults to `m`.
    #[serde(default)]
    pub spectral_m: Option<usize>,
    /// Trials for the spectral estimators; defaults to `trials`.
    #[serde(default)]
    pub spectral_trials: Option<usize>,
    pub lambda_star_grid: Vec<f64>,
    pub mismatch_rule: MismatchRule,
    pub estimators: Vec<Estimator>,
    pub trials: usize,
    pub base_seed: u64,
    #[serde(default)]
    pub amp: AmpSettings,
    #[serde(default)]
    pub mc: MCConfig,
    pub output_dir: PathBuf,
}

fn dims_for(aspect: f64, m: usize, n: Option<usize>) -> (usize, usize) {
    (n.unwrap_or_else(|| (aspect * m as f64).round() as usize), m)
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// (n, m) for AMP, SE and theory rows.
    pub fn dims(&self) -> (usize, usize) {
        dims_for(self.aspect, self.m, self.n)
    }

    /// (n, m) for the spectral estimators.
    pub fn spectral_dims(&self) -> (usize, usize) {
        match self.spectral_m {
            Some(m) if m != self.m => dims_for(self.aspect, m, None),
            _ => self.dims(),
        }
    }

    pub fn spectral_trial_count(&self) -> usize {
        self.spectral_trials.unwrap_or(self.trials)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |s: String| Err(HarnessError::Config(s));
        if self.version != CONFIG_VERSION {
            return bad(format!("unsupported config version {} (expected {CONFIG_VERSION})", self.version));
        }
        self.noise.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        if !(self.aspect > 0.0 && self.aspect <= 1.0) {
            return bad(format!("aspect = {} must lie in (0, 1]", self.aspect));
        }
        for (label, (n, m)) in [("", self.dims()), ("spectral ", self.spectral_dims())] {
            if n == 0 || n > m {
                return bad(format!("{label}dimensions n = {n}, m = {m} need 1 <= n <= m"));
            }
            if (n as f64 / m as f64 - self.aspect).abs() > 1.0 / m as f64 {
                return bad(format!("{label}n/m = {n}/{m} differs from aspect {} by more than 1/m", self.aspect));
            }
        }
        if self.lambda_star_grid.is_empty() {
            return bad("lambda_star_grid is empty".into());
        }
        for &ls in &self.lambda_star_grid {
            let l = self.mismatch_rule.lambda(ls);
            if !(ls > 0.0 && ls.is_finite() && l > 0.0 && l.is_finite()) {
                return bad(format!("lambda_star = {ls} gives lambda = {l}; both must be positive"));
            }
        }
        if self.estimators.is_empty() {
            return bad("no estimators selected".into());
        }
        let mut seen = self.estimators.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.estimators.len() {
            return bad("duplicate estimator".into());
        }
        if self.trials == 0 || self.spectral_trial_count() == 0 {
            return bad("trials must be at least 1".into());
        }
        self.amp.config(1.0).validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        if self.estimators.contains(&Estimator::Se) {
            self.mc.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
            if self.amp.denoiser == DenoiserChoice::SphereProjection {
                return bad("state evolution needs a separable denoiser; drop `se` or use linear_assumed_model".into());
            }
        }
        Ok(())
    }
}

/// One aggregated value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub estimator: String,
    pub lambda_star: f64,
    pub lambda: f64,
    pub metric: Metric,
    pub value: f64,
    pub stderr: f64,
    pub n: usize,
    pub m: usize,
    pub trials: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub records: Vec<ResultRecord>,
    pub failed_trials: usize,
    pub warnings: Vec<String>,
}

impl ExperimentReport {
    pub fn value(&self, estimator: Estimator, lambda_star: f64, metric: Metric) -> Option<f64> {
        self.records
            .iter()
            .find(|r| r.estimator == estimator.name() && r.lambda_star == lambda_star && r.metric == metric)
            .map(|r| r.value)
    }
}

/// Seed of trial `trial` at grid point `point`: base ⊕ mix64(index).
pub fn trial_seed(base_seed: u64, point: usize, trial: usize, stream: u64) -> u64 {
    base_seed ^ mix64(((point as u64) << 40) ^ (stream << 32) ^ trial as u64)
}

/// Worker pool bounded by `SPIKEBENCH_THREADS` when set.
pub fn thread_pool() -> Result<rayon::ThreadPool, HarnessError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let k: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|&k| k >= 1)
            .ok_or_else(|| HarnessError::Config(format!("{THREADS_ENV} = {v:?} is not a positive integer")))?;
        builder = builder.num_threads(k);
    }
    builder.build().map_err(|e| HarnessError::Config(e.to_string()))
}

struct Job {
    point: usize,
    seed: u64,
    dims: (usize, usize),
    amp: bool,
    spectral: bool,
}

type Outcome = Vec<(Estimator, Result<(f64, f64), String>)>;

fn run_job(cfg: &ExperimentConfig, job: &Job) -> (usize, Outcome) {
    let ls = cfg.lambda_star_grid[job.point];
    let lambda = cfg.mismatch_rule.lambda(ls);
    let mut out = Vec::new();
    let wanted = |e: Estimator| cfg.estimators.contains(&e);
    let inst = match build_instance(ls, &cfg.noise, job.dims.0, job.dims.1, job.seed) {
        Ok(i) => i,
        Err(e) => {
            let msg = e.to_string();
            for e in cfg.estimators.iter().filter(|e| (e.is_spectral() && job.spectral) || (**e == Estimator::Amp && job.amp)) {
                out.push((*e, Err(msg.clone())));
            }
            return (job.point, out);
        }
    };
    if job.amp {
        let acfg = cfg.amp.config(lambda);
        let res = init_u1(&inst, acfg.init_corr, &mut rng_from_seed(derive_seed(job.seed, 1)))
            .and_then(|u1| run_amp_from(&inst, &acfg, u1))
            .map_err(|e| e.to_string())
            .and_then(|st| st.history.last().map(|r| (r.mse, r.overlap)).ok_or_else(|| "no iterations".to_string()));
        out.push((Estimator::Amp, res));
    }
    if job.spectral {
        match spectral_pair(&inst, lambda) {
            Ok((os, gs)) => {
                if wanted(Estimator::Optspec) {
                    out.push((Estimator::Optspec, Ok((os.mse(&inst), os.overlap(&inst)))));
                }
                if wanted(Estimator::Gauspec) {
                    out.push((Estimator::Gauspec, Ok((gs.mse(&inst), gs.overlap(&inst)))));
                }
            }
            Err(e) => {
                for est in [Estimator::Optspec, Estimator::Gauspec].into_iter().filter(|e| wanted(*e)) {
                    out.push((est, Err(e.to_string())));
                }
            }
        }
    }
    (job.point, out)
}

fn plan_jobs(cfg: &ExperimentConfig) -> Vec<Job> {
    let want_amp = cfg.estimators.contains(&Estimator::Amp);
    let want_spec = cfg.estimators.iter().any(|e| e.is_spectral());
    let shared = cfg.spectral_dims() == cfg.dims();
    let mut jobs = Vec::new();
    for point in 0..cfg.lambda_star_grid.len() {
        let amp_trials = if want_amp { cfg.trials } else { 0 };
        let shared_spec = if want_spec && shared { cfg.spectral_trial_count() } else { 0 };
        let main_trials = amp_trials.max(shared_spec);
        for trial in 0..main_trials {
            jobs.push(Job {
                point,
                seed: trial_seed(cfg.base_seed, point, trial, 0),
                dims: cfg.dims(),
                amp: want_amp && trial < cfg.trials,
                spectral: want_spec && shared && trial < cfg.spectral_trial_count(),
            });
        }
        if want_spec && !shared {
            for trial in 0..cfg.spectral_trial_count() {
                jobs.push(Job {
                    point,
                    seed: trial_seed(cfg.base_seed, point, trial, 1),
                    dims: cfg.spectral_dims(),
                    amp: false,
                    spectral: true,
                });
            }
        }
    }
    jobs
}

fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let k = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / k;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (k - 1.0);
    (mean, (var / k).sqrt())
}

fn numerical(ctx: &str, ls: f64, e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Numerical(format!("{ctx} at lambda_star = {ls}: {e}"))
}

/// Deterministic rows: (estimator, mse, overlap) for theory and SE at one grid point.
fn deterministic_rows(cfg: &ExperimentConfig, ls: f64) -> Result<Vec<(Estimator, f64, f64)>, HarnessError> {
    let lambda = cfg.mismatch_rule.lambda(ls);
    let mut rows = Vec::new();
    if cfg.estimators.contains(&Estimator::BayesTheory) {
        let law = cfg.noise.law(cfg.aspect).map_err(|e| numerical("noise law", ls, e))?;
        let p = theory_point(&law, lambda, ls).map_err(|e| numerical("mismatched Bayes theory", ls, e))?;
        rows.push((Estimator::BayesTheory, p.mse, p.overlap));
    }
    if cfg.estimators.contains(&Estimator::Se) {
        let law = cfg.noise.law(cfg.aspect).map_err(|e| numerical("noise law", ls, e))?;
        let t_max = cfg.amp.t_max;
        let kappas = se_cumulants(&law, t_max).map_err(|e| numerical("cumulants", ls, e))?;
        let se = StateEvolution::new(kappas, &cfg.amp.config(lambda), cfg.mc).map_err(|e| numerical("state evolution", ls, e))?;
        let states = se.run(ls, cfg.amp.init_corr, t_max).map_err(|e| numerical("state evolution", ls, e))?;
        let last = *se_predict_metrics(states.last().expect("nonempty")).last().expect("t_max >= 1");
        rows.push((Estimator::Se, last.mse, last.overlap));
    }
    Ok(rows)
}

/// Runs every estimator over the grid. Trials fan out over the worker pool;
/// results are reduced in (point, trial) order so the output is independent of scheduling.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport, HarnessError> {
    cfg.validate()?;
    let pool = thread_pool()?;
    let jobs = plan_jobs(cfg);
    let outcomes: Vec<(usize, Outcome)> = pool.install(|| jobs.par_iter().map(|j| run_job(cfg, j)).collect());
    let deterministic: Vec<Vec<(Estimator, f64, f64)>> =
        pool.install(|| cfg.lambda_star_grid.par_iter().map(|&ls| deterministic_rows(cfg, ls)).collect::<Result<_, _>>())?;

    let mut samples: BTreeMap<(usize, Estimator), (Vec<f64>, Vec<f64>, Vec<String>)> = BTreeMap::new();
    for (point, outcome) in outcomes {
        for (est, res) in outcome {
            let entry = samples.entry((point, est)).or_default();
            match res {
                Ok((mse, ov)) => {
                    entry.0.push(mse);
                    entry.1.push(ov);
                }
                Err(e) => entry.2.push(e),
            }
        }
    }

    let (n, m) = cfg.dims();
    let mut records = Vec::new();
    let mut warnings = Vec::new();
    let mut failed_trials = 0;
    for (point, &ls) in cfg.lambda_star_grid.iter().enumerate() {
        let lambda = cfg.mismatch_rule.lambda(ls);
        for est in &cfg.estimators {
            let (mse, ov, stderr_mse, stderr_ov, trials, dims) = if est.is_deterministic() {
                let &(_, mse, ov) = deterministic[point].iter().find(|r| r.0 == *est).expect("row computed");
                (mse, ov, 0.0, 0.0, 0, (n, m))
            } else {
                let (mses, ovs, errs) = samples.remove(&(point, *est)).unwrap_or_default();
                let total = mses.len() + errs.len();
                if !errs.is_empty() {
                    failed_trials += errs.len();
                    warnings.push(format!("{}: {} of {total} trials failed at lambda_star = {ls} ({})", est.name(), errs.len(), errs[0]));
                    if errs.len() as f64 > MAX_FAILURE_FRACTION * total as f64 || mses.is_empty() {
                        return Err(HarnessError::TooManyFailures {
                            estimator: est.name().into(),
                            lambda_star: ls,
                            failed: errs.len(),
                            total,
                        });
                    }
                }
                let (a, sa) = mean_stderr(&mses);
                let (b, sb) = mean_stderr(&ovs);
                let dims = if est.is_spectral() { cfg.spectral_dims() } else { (n, m) };
                (a, b, sa, sb, mses.len(), dims)
            };
            for (metric, value, stderr) in [(Metric::Mse, mse, stderr_mse), (Metric::Overlap, ov, stderr_ov)] {
                records.push(ResultRecord {
                    estimator: est.name().into(),
                    lambda_star: ls,
                    lambda,
                    metric,
                    value,
                    stderr,
                    n: dims.0,
                    m: dims.1,
                    trials,
                    seed: cfg.base_seed,
                });
            }
        }
    }
    Ok(ExperimentReport { records, failed_trials, warnings })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fig1Side {
    PoissonMatched,
    GaussianScaled4,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    Paper,
    Desk,
}

/// λ* ∈ {0.5, 1, …, 8}.
pub fn fig1_grid() -> Vec<f64> {
    (1..=16).map(|k| 0.5 * k as f64).collect()
}

/// Presets of the four-estimator comparison at α = 0.6.
pub fn fig1_preset(side: Fig1Side, scale: Scale) -> ExperimentConfig {
    let (noise, rule, tag) = match side {
        Fig1Side::PoissonMatched => (NoiseSpec::RectPoisson { c: 1.0 }, MismatchRule::Matched, "poisson_matched"),
        Fig1Side::GaussianScaled4 => (NoiseSpec::GaussianIid, MismatchRule::Scaled { factor: 4.0 }, "gaussian_scaled4"),
    };
    let (m, spectral_m, trials, spectral_trials) = match scale {
        Scale::Paper => (20000, Some(10000), 100, Some(20)),
        Scale::Desk => (2000, None, 20, None),
    };
    ExperimentConfig {
        version: CONFIG_VERSION,
        noise,
        aspect: 0.6,
        m,
        n: None,
        spectral_m,
        spectral_trials,
        lambda_star_grid: fig1_grid(),
        mismatch_rule: rule,
        estimators: Estimator::ALL.to_vec(),
        trials,
        base_seed: 2024,
        amp: AmpSettings::default(),
        mc: MCConfig::default(),
        output_dir: PathBuf::from(format!("out/fig1_{tag}")),
    }
}

/// Scientific notation with 17 significant digits.
fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn emit_csv(records: &[ResultRecord], path: &Path) -> Result<(), HarnessError> {
    if records.is_empty() {
        return Err(HarnessError::EmptyRecords);
    }
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    let csv_err = |e: csv::Error| HarnessError::Io { path: path.to_path_buf(), source: e.into() };
    w.write_record(CSV_HEADER).map_err(csv_err)?;
    for r in records {
        w.write_record([
            r.estimator.clone(),
            fmt17(r.lambda_star),
            fmt17(r.lambda),
            r.metric.name().to_string(),
            fmt17(r.value),
            fmt17(r.stderr),
            r.n.to_string(),
            r.m.to_string(),
            r.trials.to_string(),
            r.seed.to_string(),
        ])
        .map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| HarnessError::Io { path: path.to_path_buf(), source: e.into_error() })?;
    fs::write(path, bytes).map_err(io_err(path))
}

pub fn read_csv(path: &Path) -> Result<Vec<ResultRecord>, HarnessError> {
    let mut rd = csv::Reader::from_path(path).map_err(|e| HarnessError::Parse(e.to_string()))?;
    let header = rd.headers().map_err(|e| HarnessError::Parse(e.to_string()))?.clone();
    if header.iter().ne(CSV_HEADER) {
        return Err(HarnessError::Parse(format!("unexpected header {header:?}")));
    }
    let mut out = Vec::new();
    for (line, row) in rd.records().enumerate() {
        let row = row.map_err(|e| HarnessError::Parse(e.to_string()))?;
        let bad = |what: &str| HarnessError::Parse(format!("row {}: bad {what}", line + 1));
        let f = |i: usize, what: &str| row[i].parse::<f64>().map_err(|_| bad(what));
        let u = |i: usize, what: &str| row[i].parse::<usize>().map_err(|_| bad(what));
        out.push(ResultRecord {
            estimator: row[0].to_string(),
            lambda_star: f(1, "lambda_star")?,
            lambda: f(2, "lambda")?,
            metric: Metric::parse(&row[3]).ok_or_else(|| bad("metric"))?,
            value: f(4, "value")?,
            stderr: f(5, "stderr")?,
            n: u(6, "n")?,
            m: u(7, "m")?,
            trials: u(8, "trials")?,
            seed: row[9].parse().map_err(|_| bad("seed"))?,
        });
    }
    Ok(out)
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// Two panels (MSE, overlap) of value against λ*, one polyline per estimator, ±1 stderr bars.
pub fn emit_svg(records: &[ResultRecord], path: &Path) -> Result<(), HarnessError> {
    if records.is_empty() {
        return Err(HarnessError::EmptyRecords);
    }
    let mut estimators: Vec<&str> = Vec::new();
    for r in records {
        if !estimators.contains(&r.estimator.as_str()) {
            estimators.push(&r.estimator);
        }
    }
    let (xmin, xmax) = records.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), r| (a.min(r.lambda_star), b.max(r.lambda_star)));
    let (xmin, xmax) = if xmax > xmin { (xmin, xmax) } else { (xmin - 0.5, xmax + 0.5) };
    let (pw, ph, margin) = (420.0, 300.0, 50.0);
    let width = 2.0 * (pw + 2.0 * margin) + 160.0;
    let height = ph + 2.0 * margin;
    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="12">"#);
    for (panel, metric) in [Metric::Mse, Metric::Overlap].into_iter().enumerate() {
        let rows: Vec<&ResultRecord> = records.iter().filter(|r| r.metric == metric).collect();
        let ymax = match metric {
            Metric::Overlap => 1.0,
            Metric::Mse => rows.iter().map(|r| r.value + r.stderr).fold(0.0f64, f64::max).max(1e-3) * 1.05,
        };
        let x0 = margin + panel as f64 * (pw + 2.0 * margin);
        let sx = |x: f64| x0 + (x - xmin) / (xmax - xmin) * pw;
        let sy = |y: f64| margin + ph - (y / ymax).clamp(0.0, 1.0) * ph;
        let _ = writeln!(s, r#"<g id="panel-{}">"#, metric.name());
        let _ = writeln!(s, r#"<rect x="{x0}" y="{margin}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#);
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, x0 + pw / 2.0, margin - 10.0, metric.name());
        for k in 0..=4 {
            let xv = xmin + (xmax - xmin) * k as f64 / 4.0;
            let yv = ymax * k as f64 / 4.0;
            let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{xv:.2}</text>"#, sx(xv), margin + ph + 16.0);
            let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{yv:.2}</text>"#, x0 - 4.0, sy(yv) + 4.0);
        }
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">lambda_star</text>"#, x0 + pw / 2.0, margin + ph + 36.0);
        for (k, est) in estimators.iter().enumerate() {
            let mut pts: Vec<&&ResultRecord> = rows.iter().filter(|r| r.estimator == *est).collect();
            if pts.is_empty() {
                continue;
            }
            pts.sort_by(|a, b| a.lambda_star.total_cmp(&b.lambda_star));
            let color = PALETTE[k % PALETTE.len()];
            let coords: Vec<String> = pts.iter().map(|r| format!("{:.2},{:.2}", sx(r.lambda_star), sy(r.value))).collect();
            let _ = writeln!(
                s,
                r#"<polyline data-series="{est}/{}" fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
                metric.name(),
                coords.join(" ")
            );
            for r in pts.iter().filter(|r| r.stderr > 0.0) {
                let x = sx(r.lambda_star);
                let _ = writeln!(
                    s,
                    r#"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="{color}"/>"#,
                    sy(r.value - r.stderr),
                    sy(r.value + r.stderr)
                );
            }
        }
        let _ = writeln!(s, "</g>");
    }
    let lx = 2.0 * (pw + 2.0 * margin) + 10.0;
    for (k, est) in estimators.iter().enumerate() {
        let y = margin + 18.0 * k as f64;
        let color = PALETTE[k % PALETTE.len()];
        let _ = writeln!(s, r#"<line x1="{lx}" y1="{y}" x2="{}" y2="{y}" stroke="{color}" stroke-width="2"/>"#, lx + 20.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}">{est}</text>"#, lx + 26.0, y + 4.0);
    }
    s.push_str("</svg>\n");
    fs::write(path, s).map_err(io_err(path))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    Csv,
    Svg,
    Both,
}

#[derive(Debug, Clone, Serialize)]
struct Metadata<'a> {
    config: &'a ExperimentConfig,
    lambda_star_grid: &'a [f64],
    t_max: usize,
    failed_trials: usize,
    warnings: &'a [String],
    crate_version: &'static str,
}

/// Writes results.csv / results.svg and metadata.json under `dir`; returns the files written.
pub fn write_outputs(
    report: &ExperimentReport,
    cfg: &ExperimentConfig,
    dir: &Path,
    format: OutputFormat,
) -> Result<Vec<PathBuf>, HarnessError> {
    if report.records.is_empty() {
        return Err(HarnessError::EmptyRecords);
    }
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut written = Vec::new();
    if matches!(format, OutputFormat::Csv | OutputFormat::Both) {
        let p = dir.join("results.csv");
        emit_csv(&report.records, &p)?;
        written.push(p);
    }
    if matches!(format, OutputFormat::Svg | OutputFormat::Both) {
        let p = dir.join("results.svg");
        emit_svg(&report.records, &p)?;
        written.push(p);
    }
    let meta = Metadata {
        config: cfg,
        lambda_star_grid: &cfg.lambda_star_grid,
        t_max: cfg.amp.t_max,
        failed_trials: report.failed_trials,
        warnings: &report.warnings,
        crate_version: env!("CARGO_PKG_VERSION"),
    };
    let p = dir.join("metadata.json");
    fs::write(&p, serde_json::to_string_pretty(&meta).expect("metadata serializes")).map_err(io_err(&p))?;
    written.push(p);
    Ok(written)
}
