//! Run configuration, experiment presets and report emission used by the
//! `ehmc` binary.
//!
//! Configurations are TOML documents with a top-level `seed` and the sections
//! `[target]`, `[sampler]`, `[adapt]` and `[output]`. Unknown keys are errors.
//! Any key can be overridden from the command line as `section.key=value`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{fmt_num, summary_fields, write_per_dim_csv, SUMMARY_COLUMNS};
use crate::entropy::Penalty;
use crate::error::{Error, Result};
use crate::objective::{default_lr_theta, AdaptConfig, Objective};
use crate::precond::{PrecondKind, Preconditioner};
use crate::sampler::{fixed_metric_preconditioner, Kernel, RunOutput, SamplerConfig, Session};
use crate::target::{
    anisotropic_gaussian, correlated_gaussian, cox_default_mu, load_logistic_csv,
    simulate_cox_data, simulate_logistic_data, simulate_sv_data, CoxProcess, GaussianTarget,
    LogisticRegression, PrecisionSpec, StochasticVolatility, TargetModel,
};

/// Build identifier written into every output file.
pub const VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "+", env!("EHMC_GIT_DESCRIBE"));

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    GaussianIso,
    Anisotropic,
    Correlated,
    Logistic,
    Cox,
    Sv,
}

impl Preset {
    pub fn as_str(self) -> &'static str {
        match self {
            Preset::GaussianIso => "gaussian_iso",
            Preset::Anisotropic => "anisotropic",
            Preset::Correlated => "correlated",
            Preset::Logistic => "logistic",
            Preset::Cox => "cox",
            Preset::Sv => "sv",
        }
    }

    pub const ALL: [Preset; 6] = [
        Preset::GaussianIso,
        Preset::Anisotropic,
        Preset::Correlated,
        Preset::Logistic,
        Preset::Cox,
        Preset::Sv,
    ];

    pub fn description(self) -> &'static str {
        match self {
            Preset::GaussianIso => "N(0, variance·I) in d dimensions",
            Preset::Anisotropic => "diagonal Gaussian with variances 10^(c(i-1)/(d-1))",
            Preset::Correlated => {
                "squared-exponential kernel Gaussian on d grid points over [0, 4]"
            }
            Preset::Logistic => "Bayesian logistic regression (CSV data or synthetic)",
            Preset::Cox => "log-Gaussian Cox process on a grid×grid lattice, simulated counts",
            Preset::Sv => "stochastic volatility model (return series or synthetic)",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetConfig {
    pub preset: Preset,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_obs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intercept: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub standardize: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior_variance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    #[serde(rename = "T", default, skip_serializing_if = "Option::is_none")]
    pub t_len: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_seed: Option<u64>,
}

fn default_chains() -> usize {
    10
}
fn default_one_u64() -> u64 {
    1
}
fn default_one_f64() -> f64 {
    1.0
}
fn default_precond() -> PrecondKind {
    PrecondKind::Diagonal
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerSection {
    pub h: f64,
    #[serde(rename = "L")]
    pub steps: usize,
    #[serde(default = "default_chains")]
    pub chains: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adapt_steps: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_steps: Option<u64>,
    /// Gradient-evaluation budget; both phases then run `budget / L` steps.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget: Option<u64>,
    #[serde(default = "default_one_u64")]
    pub thin: u64,
    #[serde(default = "default_precond")]
    pub precond: PrecondKind,
    #[serde(default = "default_one_f64")]
    pub init_scale: f64,
    #[serde(default)]
    pub init_jitter: f64,
    #[serde(default)]
    pub kernel: Kernel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdaptSection {
    pub objective: Objective,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lr_theta: Option<f64>,
    pub lr_beta: f64,
    pub lr_gamma: f64,
    pub target_accept: f64,
    pub beta_init: f64,
    pub beta_min: f64,
    pub beta_max: f64,
    pub gamma_init: f64,
    pub gamma_min: f64,
    pub gamma_max: f64,
    pub delta: f64,
    pub delta2: f64,
    pub delta_prime: f64,
    pub min_terms: usize,
    pub lambda_rate: f64,
}

impl Default for AdaptSection {
    fn default() -> Self {
        let base = AdaptConfig::new(Objective::Gsm, PrecondKind::Diagonal);
        let pen = Penalty::default();
        AdaptSection {
            objective: Objective::Gsm,
            lr_theta: None,
            lr_beta: base.lr_beta,
            lr_gamma: base.lr_gamma,
            target_accept: base.target_accept,
            beta_init: base.beta_init,
            beta_min: base.beta_bounds.0,
            beta_max: base.beta_bounds.1,
            gamma_init: base.gamma_init,
            gamma_min: base.gamma_bounds.0,
            gamma_max: base.gamma_bounds.1,
            delta: pen.delta(),
            delta2: pen.delta2(),
            delta_prime: base.delta_prime,
            min_terms: base.min_terms,
            lambda_rate: base.lambda_rate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    /// Record wall-clock time in `summary.csv`; disable for byte-identical
    /// repeated runs.
    #[serde(default = "default_true")]
    pub timing: bool,
    #[serde(default = "default_true")]
    pub checkpoint: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: None,
            timing: true,
            checkpoint: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub target: TargetConfig,
    pub sampler: SamplerSection,
    #[serde(default)]
    pub adapt: AdaptSection,
    #[serde(default)]
    pub output: OutputSection,
}

fn toml_error(e: impl std::fmt::Display) -> Error {
    Error::Config {
        field: "config".into(),
        message: e.to_string().trim().to_string(),
    }
}

/// Parses `value` as a TOML value, falling back to a bare string.
fn parse_override_value(value: &str) -> toml::Value {
    format!("v = {value}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.to_string()))
}

/// Applies a `section.key=value` override to a TOML table.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, value) = assignment
        .split_once('=')
        .ok_or_else(|| Error::config(assignment, "override must have the form key=value"))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(Error::config(key, "empty key segment"));
    }
    let mut node = table;
    for seg in &path[..path.len() - 1] {
        let entry = node
            .entry(seg.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = entry
            .as_table_mut()
            .ok_or_else(|| Error::config(key, format!("`{seg}` is not a section")))?;
    }
    node.insert(
        path[path.len() - 1].to_string(),
        parse_override_value(value.trim()),
    );
    Ok(())
}

impl RunConfig {
    /// Parses, applies overrides, fills defaults and validates.
    pub fn parse(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(toml_error)?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let mut cfg: RunConfig = toml::Value::Table(table).try_into().map_err(toml_error)?;
        cfg.normalize()?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>, overrides: &[String]) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, overrides)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(toml_error)
    }

    /// Steps of the adaptation and sampling phases.
    pub fn phase_steps(&self) -> (u64, u64) {
        let s = &self.sampler;
        match s.budget {
            Some(b) => {
                let n = b / s.steps as u64;
                (n, n)
            }
            None => (
                s.adapt_steps.unwrap_or(1000),
                s.sample_steps.unwrap_or(1000),
            ),
        }
    }

    /// Fills preset and structure defaults and checks every field.
    pub fn normalize(&mut self) -> Result<()> {
        self.target.normalize()?;
        let s = &mut self.sampler;
        if !(s.h > 0.0 && s.h.is_finite()) {
            return Err(Error::config("h", format!("must be positive, got {}", s.h)));
        }
        if s.steps == 0 {
            return Err(Error::config("L", "must be at least 1"));
        }
        if s.chains == 0 {
            return Err(Error::config("chains", "must be at least 1"));
        }
        if s.thin == 0 {
            return Err(Error::config("thin", "must be at least 1"));
        }
        if !(s.init_scale > 0.0 && s.init_scale.is_finite()) {
            return Err(Error::config("init_scale", "must be positive"));
        }
        if !(s.init_jitter >= 0.0 && s.init_jitter.is_finite()) {
            return Err(Error::config("init_jitter", "must be non-negative"));
        }
        match s.budget {
            Some(b) => {
                if s.adapt_steps.is_some() || s.sample_steps.is_some() {
                    return Err(Error::config(
                        "budget",
                        "cannot be combined with adapt_steps or sample_steps",
                    ));
                }
                if b < s.steps as u64 {
                    return Err(Error::config("budget", "must be at least L"));
                }
            }
            None => {
                s.adapt_steps.get_or_insert(1000);
                s.sample_steps.get_or_insert(1000);
            }
        }
        if s.kernel == Kernel::FixedMetric && self.target.preset == Preset::Sv {
            return Err(Error::config(
                "kernel",
                "fixed_metric is not available for the sv preset",
            ));
        }
        self.adapt
            .lr_theta
            .get_or_insert(default_lr_theta(s.precond));
        self.adapt_config()?.validate()?;
        self.prepare_output_dir()?;
        Ok(())
    }

    pub fn adapt_config(&self) -> Result<AdaptConfig> {
        let a = &self.adapt;
        let mut c = AdaptConfig::new(a.objective, self.sampler.precond);
        if let Some(lr) = a.lr_theta {
            c.lr_theta = lr;
        }
        c.lr_beta = a.lr_beta;
        c.lr_gamma = a.lr_gamma;
        c.target_accept = a.target_accept;
        c.beta_init = a.beta_init;
        c.beta_bounds = (a.beta_min, a.beta_max);
        c.gamma_init = a.gamma_init;
        c.gamma_bounds = (a.gamma_min, a.gamma_max);
        c.penalty =
            Penalty::new(a.delta, a.delta2).map_err(|e| Error::config("delta", e.to_string()))?;
        c.delta_prime = a.delta_prime;
        if a.min_terms == 0 {
            return Err(Error::config("min_terms", "must be at least 1"));
        }
        c.min_terms = a.min_terms;
        c.lambda_rate = a.lambda_rate;
        Ok(c)
    }

    /// Creates the output directory and checks that it is writable.
    fn prepare_output_dir(&self) -> Result<()> {
        let Some(dir) = &self.output.dir else {
            return Ok(());
        };
        let fail =
            |e: std::io::Error| Error::config("output.dir", format!("{}: {e}", dir.display()));
        std::fs::create_dir_all(dir).map_err(fail)?;
        let probe = dir.join(".ehmc-write-probe");
        File::create(&probe).map_err(fail)?;
        std::fs::remove_file(&probe).map_err(fail)?;
        Ok(())
    }

    /// `# ehmc <version> seed=<seed>` line heading every output file.
    pub fn provenance(&self) -> String {
        format!("# ehmc {VERSION} seed={}", self.seed)
    }
}

impl TargetConfig {
    pub fn new(preset: Preset) -> Self {
        TargetConfig {
            preset,
            d: None,
            c: None,
            variance: None,
            data: None,
            n_obs: None,
            intercept: None,
            standardize: None,
            prior_variance: None,
            grid: None,
            sigma2: None,
            beta: None,
            mu: None,
            t_len: None,
            phi: None,
            sigma: None,
            data_seed: None,
        }
    }

    fn present(&self) -> [(&'static str, bool); 16] {
        [
            ("d", self.d.is_some()),
            ("c", self.c.is_some()),
            ("variance", self.variance.is_some()),
            ("data", self.data.is_some()),
            ("n_obs", self.n_obs.is_some()),
            ("intercept", self.intercept.is_some()),
            ("standardize", self.standardize.is_some()),
            ("prior_variance", self.prior_variance.is_some()),
            ("grid", self.grid.is_some()),
            ("sigma2", self.sigma2.is_some()),
            ("beta", self.beta.is_some()),
            ("mu", self.mu.is_some()),
            ("T", self.t_len.is_some()),
            ("phi", self.phi.is_some()),
            ("sigma", self.sigma.is_some()),
            ("data_seed", self.data_seed.is_some()),
        ]
    }

    fn normalize(&mut self) -> Result<()> {
        let synthetic = self.data.is_none();
        let allowed: &[&str] = match self.preset {
            Preset::GaussianIso => &["d", "variance"],
            Preset::Anisotropic => &["d", "c"],
            Preset::Correlated => &["d"],
            Preset::Logistic if synthetic => &[
                "d",
                "n_obs",
                "data_seed",
                "intercept",
                "standardize",
                "prior_variance",
            ],
            Preset::Logistic => &["data", "intercept", "standardize", "prior_variance"],
            Preset::Cox => &["grid", "sigma2", "beta", "mu", "data_seed"],
            Preset::Sv if synthetic => &["T", "phi", "sigma", "mu", "data_seed"],
            Preset::Sv => &["data"],
        };
        for (name, present) in self.present() {
            if present && !allowed.contains(&name) {
                return Err(Error::config(
                    format!("target.{name}"),
                    format!("not used by preset `{}`", self.preset.as_str()),
                ));
            }
        }
        let pos_f = |v: Option<f64>, name: &str| match v {
            Some(x) if !(x > 0.0 && x.is_finite()) => {
                Err(Error::config(format!("target.{name}"), "must be positive"))
            }
            _ => Ok(()),
        };
        let pos_u = |v: Option<usize>, name: &str, min: usize| match v {
            Some(x) if x < min => Err(Error::config(
                format!("target.{name}"),
                format!("must be at least {min}"),
            )),
            _ => Ok(()),
        };
        match self.preset {
            Preset::GaussianIso => {
                self.d.get_or_insert(10);
                self.variance.get_or_insert(1.0);
                pos_u(self.d, "d", 1)?;
                pos_f(self.variance, "variance")?;
            }
            Preset::Anisotropic => {
                self.d.get_or_insert(100);
                self.c.get_or_insert(6.0);
                pos_u(self.d, "d", 2)?;
                pos_f(self.c, "c")?;
            }
            Preset::Correlated => {
                self.d.get_or_insert(51);
                pos_u(self.d, "d", 2)?;
            }
            Preset::Logistic => {
                if synthetic {
                    self.d.get_or_insert(5);
                    self.n_obs.get_or_insert(500);
                    self.data_seed.get_or_insert(0);
                    pos_u(self.d, "d", 1)?;
                    pos_u(self.n_obs, "n_obs", 1)?;
                }
                self.intercept.get_or_insert(true);
                self.standardize.get_or_insert(true);
                self.prior_variance.get_or_insert(1.0);
                pos_f(self.prior_variance, "prior_variance")?;
            }
            Preset::Cox => {
                self.grid.get_or_insert(16);
                self.sigma2.get_or_insert(1.91);
                self.beta.get_or_insert(1.0 / 33.0);
                let s2 = self.sigma2.unwrap();
                self.mu.get_or_insert(cox_default_mu(s2));
                self.data_seed.get_or_insert(0);
                pos_u(self.grid, "grid", 1)?;
                pos_f(self.sigma2, "sigma2")?;
                pos_f(self.beta, "beta")?;
                if !self.mu.unwrap().is_finite() {
                    return Err(Error::config("target.mu", "must be finite"));
                }
            }
            Preset::Sv => {
                if synthetic {
                    self.t_len.get_or_insert(1000);
                    self.phi.get_or_insert(0.95);
                    self.sigma.get_or_insert(0.2);
                    self.mu.get_or_insert(-1.0);
                    self.data_seed.get_or_insert(0);
                    pos_u(self.t_len, "T", 2)?;
                    pos_f(self.sigma, "sigma")?;
                    if !(self.phi.unwrap().abs() < 1.0) {
                        return Err(Error::config("target.phi", "must lie in (-1, 1)"));
                    }
                    if !self.mu.unwrap().is_finite() {
                        return Err(Error::config("target.mu", "must be finite"));
                    }
                }
            }
        }
        Ok(())
    }
}

/// A constructed target with its starting point and, where one exists, the
/// constant metric used by the fixed-metric baseline.
pub struct BuiltTarget {
    pub model: Box<dyn TargetModel>,
    pub init: Vec<f64>,
    pub metric: Option<DMatrix<f64>>,
}

/// Instantiates the target of a normalised configuration.
pub fn build_target(t: &TargetConfig) -> Result<BuiltTarget> {
    let need = |v: Option<f64>| v.expect("normalised configuration");
    match t.preset {
        Preset::GaussianIso => {
            let d = t.d.unwrap();
            let g = GaussianTarget::new(
                vec![0.0; d],
                PrecisionSpec::DiagonalCovariance(vec![need(t.variance); d]),
            )?
            .with_name("gaussian_iso");
            Ok(gaussian(g))
        }
        Preset::Anisotropic => Ok(gaussian(anisotropic_gaussian(t.d.unwrap(), need(t.c))?)),
        Preset::Correlated => Ok(gaussian(correlated_gaussian(t.d.unwrap())?)),
        Preset::Logistic => {
            let (x, y) = match &t.data {
                Some(p) => load_logistic_csv(p, t.intercept.unwrap(), t.standardize.unwrap())?,
                None => {
                    let (mut x, y) = simulate_logistic_data(
                        t.n_obs.unwrap(),
                        t.d.unwrap(),
                        t.data_seed.unwrap(),
                    )?;
                    if t.intercept.unwrap() {
                        let n = x.ncols();
                        x = x.insert_column(n, 1.0);
                    }
                    (x, y)
                }
            };
            let d = x.ncols();
            let model = LogisticRegression::new(
                x,
                y,
                PrecisionSpec::DiagonalCovariance(vec![need(t.prior_variance); d]),
            )?;
            let init = vec![0.0; d];
            let metric = Some(model.dense_hessian(&init));
            Ok(BuiltTarget {
                model: Box::new(model),
                init,
                metric,
            })
        }
        Preset::Cox => {
            let (n, s2, beta, mu) = (t.grid.unwrap(), need(t.sigma2), need(t.beta), need(t.mu));
            let sample = simulate_cox_data(n, mu, s2, beta, t.data_seed.unwrap())?;
            let model = CoxProcess::new(n, sample.counts, mu, s2, beta)?;
            let metric = Some(model.fixed_metric());
            Ok(BuiltTarget {
                init: vec![mu; n * n],
                model: Box::new(model),
                metric,
            })
        }
        Preset::Sv => {
            let returns = match &t.data {
                Some(p) => StochasticVolatility::load_returns(p)?,
                None => simulate_sv_data(
                    t.t_len.unwrap(),
                    need(t.phi),
                    need(t.sigma),
                    need(t.mu),
                    t.data_seed.unwrap(),
                )?,
            };
            let model = StochasticVolatility::new(&returns)?;
            let mean_sq = returns.iter().map(|r| r * r).sum::<f64>() / returns.len() as f64;
            let mut init = vec![0.0; returns.len()];
            // μ at the log mean square, φ = 0.9, σ = 0.2
            init.extend([mean_sq.max(1e-12).ln(), 19f64.ln(), 0.2f64.exp_m1().ln()]);
            Ok(BuiltTarget {
                model: Box::new(model),
                init,
                metric: None,
            })
        }
    }
}

fn gaussian(g: GaussianTarget) -> BuiltTarget {
    let d = g.dim();
    let metric = Some(g.precision_matrix());
    BuiltTarget {
        init: vec![0.0; d],
        model: Box::new(g),
        metric,
    }
}

/// Translates a normalised configuration into sampler settings.
pub fn sampler_config(cfg: &RunConfig, target: &BuiltTarget) -> Result<SamplerConfig> {
    let s = &cfg.sampler;
    let d = target.model.dim();
    let precond = match s.kernel {
        Kernel::Adaptive => Preconditioner::new(s.precond, d, s.init_scale)?,
        Kernel::FixedMetric => {
            let m = target
                .metric
                .as_ref()
                .ok_or_else(|| Error::config("kernel", "target has no fixed metric"))?;
            fixed_metric_preconditioner(m)?
        }
    };
    let (adapt_steps, sample_steps) = cfg.phase_steps();
    let mut adapt = cfg.adapt_config()?;
    if s.kernel == Kernel::FixedMetric {
        adapt.lr_theta = default_lr_theta(precond.kind());
    }
    Ok(SamplerConfig {
        h: s.h,
        steps: s.steps,
        chains: s.chains,
        adapt_steps,
        sample_steps,
        thin: s.thin,
        seed: cfg.seed,
        precond,
        adapt,
        kernel: s.kernel,
        init: target.init.clone(),
        init_jitter: s.init_jitter,
    })
}

/// Builds the target, runs (or resumes) the experiment and writes all outputs.
pub fn run(cfg: &RunConfig, resume: Option<&Path>) -> Result<RunOutput> {
    let target = build_target(&cfg.target)?;
    let scfg = sampler_config(cfg, &target)?;
    let session = match resume {
        Some(p) => {
            let f = File::open(p).map_err(|e| Error::io(p, e))?;
            Session::resume(scfg, target.model.as_ref(), BufReader::new(f))?
        }
        None => Session::new(scfg, target.model.as_ref())?,
    };
    let out = session.run(target.model.as_ref())?;
    if let Some(dir) = &cfg.output.dir {
        emit_report(cfg, &out, dir)?;
    }
    Ok(out)
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    let p = dir.join(name);
    File::create(&p)
        .map(BufWriter::new)
        .map_err(|e| Error::io(&p, e))
}

fn summary_header() -> String {
    let mut cols = vec!["L", "h", "objective", "precond", "kernel"];
    cols.extend(SUMMARY_COLUMNS);
    cols.join(",")
}

fn summary_row(cfg: &RunConfig, out: &RunOutput) -> String {
    let mut fields = vec![
        cfg.sampler.steps.to_string(),
        fmt_num(Some(out.session.h)),
        cfg.adapt.objective.to_string(),
        out.session.state.precond.kind().to_string(),
        match cfg.sampler.kernel {
            Kernel::Adaptive => "adaptive".to_string(),
            Kernel::FixedMetric => "fixed_metric".to_string(),
        },
    ];
    fields.extend(summary_fields(&out.report, cfg.output.timing));
    fields.join(",")
}

/// Writes `summary.csv`, `per_dim.csv`, `mu_trace.csv`, `config.echo` and
/// (unless disabled) `checkpoint.txt` into `dir`.
pub fn emit_report(cfg: &RunConfig, out: &RunOutput, dir: &Path) -> Result<()> {
    let io = |name: &str| {
        let p = dir.join(name);
        move |e: std::io::Error| Error::io(&p, e)
    };
    let head = cfg.provenance();

    let mut w = create(dir, "summary.csv")?;
    writeln!(w, "{head}\n{}\n{}", summary_header(), summary_row(cfg, out))
        .map_err(io("summary.csv"))?;
    w.flush().map_err(io("summary.csv"))?;

    let mut w = create(dir, "per_dim.csv")?;
    writeln!(w, "{head}").map_err(io("per_dim.csv"))?;
    write_per_dim_csv(&mut w, &out.report).map_err(io("per_dim.csv"))?;
    w.flush().map_err(io("per_dim.csv"))?;

    let mut w = create(dir, "mu_trace.csv")?;
    writeln!(w, "{head}\nstep,accept,mu_abs,entropy,beta,gamma,h").map_err(io("mu_trace.csv"))?;
    for r in &out.session.trace {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.step,
            fmt_num(Some(r.accept)),
            fmt_num(r.mu_abs),
            fmt_num(r.entropy),
            fmt_num(Some(r.beta)),
            fmt_num(Some(r.gamma)),
            fmt_num(Some(r.h)),
        )
        .map_err(io("mu_trace.csv"))?;
    }
    w.flush().map_err(io("mu_trace.csv"))?;

    let mut w = create(dir, "config.echo")?;
    write!(w, "{head}\n{}", cfg.to_toml()?).map_err(io("config.echo"))?;
    w.flush().map_err(io("config.echo"))?;

    if cfg.output.checkpoint {
        let mut w = create(dir, "checkpoint.txt")?;
        out.session.write_checkpoint(&mut w, VERSION)?;
        w.flush().map_err(io("checkpoint.txt"))?;
    }
    Ok(())
}

/// Runs the configuration once per value of `L`, writing each run to
/// `dir/L<value>/` and one summary row per run to `dir/sweep_summary.csv`.
pub fn sweep(cfg: &RunConfig, values: &[usize]) -> Result<Vec<RunOutput>> {
    if values.is_empty() {
        return Err(Error::config("L", "sweep needs at least one value"));
    }
    let mut rows = Vec::new();
    let mut outs = Vec::new();
    for &l in values {
        let mut c = cfg.clone();
        c.sampler.steps = l;
        if let Some(dir) = &cfg.output.dir {
            c.output.dir = Some(dir.join(format!("L{l}")));
        }
        c.normalize()?;
        let out = run(&c, None)?;
        rows.push(summary_row(&c, &out));
        outs.push(out);
    }
    if let Some(dir) = &cfg.output.dir {
        let mut w = create(dir, "sweep_summary.csv")?;
        let p = dir.join("sweep_summary.csv");
        writeln!(w, "{}\n{}", cfg.provenance(), summary_header()).map_err(|e| Error::io(&p, e))?;
        for r in rows {
            writeln!(w, "{r}").map_err(|e| Error::io(&p, e))?;
        }
        w.flush().map_err(|e| Error::io(&p, e))?;
    }
    Ok(outs)
}

/// Parses `1..10`, `1..=10` or comma-separated lists of leapfrog counts.
pub fn parse_l_values(spec: &str) -> Result<Vec<usize>> {
    let bad = || Error::config("L", format!("cannot parse sweep values `{spec}`"));
    let num = |s: &str| s.trim().parse::<usize>().map_err(|_| bad());
    let values: Vec<usize> = if let Some((a, b)) = spec.split_once("..") {
        let (a, b) = (num(a)?, num(b.trim_start_matches('='))?);
        if a > b {
            return Err(bad());
        }
        (a..=b).collect()
    } else {
        spec.split(',').map(num).collect::<Result<_>>()?
    };
    if values.is_empty() || values.contains(&0) {
        return Err(Error::config("L", "sweep values must be at least 1"));
    }
    Ok(values)
}
