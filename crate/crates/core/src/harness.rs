//! Monte Carlo experiment driver and validation suites.
//!
//! Experiments are declared as JSON configs (`schema: 1`, unknown keys
//! rejected) and produce tidy long-format CSV tables of
//! `(method, n, rho, statistic, mean, std_error, trials)` rows. Trials fan
//! out across threads with one counter-derived RNG stream per trial, and
//! aggregation runs in trial order, so results are bit-identical for any
//! thread count at a fixed seed.

use crate::elliptical::{
    sample_with_rng, DataMatrix, GeneratorSpec, RadialDistribution, ScatterSpec,
};
use crate::linalg::{fro_dist_sq, fro_norm_sq, trace_re, trace_sq_hermitian};
use crate::mest::{one_step, solve_sigma, WeightSpec};
use crate::shrinkage::{
    beta_general, cwh, estimate, estimate_dof, one_step_moments, mse_at_optimum, rscm_cv,
    sphericity_of, theta_unbiased, EstimateOptions, EstimatorFamily, SphericityMethod,
};
use crate::{Error, Field, Result, Scalar};
use ndarray::Array2;
use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{BufRead, Write};

pub const CONFIG_SCHEMA: u32 = 1;

/// Experiment kinds understood by the driver.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    NmseVsN,
    NmseVsRho,
    BetaVsN,
    ShapeNmse,
    LemmaValidation,
    BetaOracle,
    ThetaUnbiased,
    DofConvergence,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::NmseVsN => "nmse_vs_n",
            ExperimentKind::NmseVsRho => "nmse_vs_rho",
            ExperimentKind::BetaVsN => "beta_vs_n",
            ExperimentKind::ShapeNmse => "shape_nmse",
            ExperimentKind::LemmaValidation => "lemma_validation",
            ExperimentKind::BetaOracle => "beta_oracle",
            ExperimentKind::ThetaUnbiased => "theta_unbiased",
            ExperimentKind::DofConvergence => "dof_convergence",
        }
    }
}

/// Data-generator declaration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    pub kind: GeneratorKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GeneratorKind {
    Gaussian,
    Mvt,
}

impl GeneratorConfig {
    pub fn to_spec(self) -> Result<GeneratorSpec> {
        match self.kind {
            GeneratorKind::Gaussian => Ok(GeneratorSpec::Gaussian),
            GeneratorKind::Mvt => {
                let nu = self.nu.ok_or_else(|| {
                    Error::Config("mvt generator requires a `nu` value".into())
                })?;
                let spec = GeneratorSpec::Mvt { nu };
                spec.validate()?;
                Ok(spec)
            }
        }
    }

    pub fn label(self) -> String {
        match self.kind {
            GeneratorKind::Gaussian => "gaussian".into(),
            GeneratorKind::Mvt => format!("mvt(nu={})", self.nu.unwrap_or(f64::NAN)),
        }
    }
}

/// Declarative Monte Carlo study.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema: u32,
    pub experiment: ExperimentKind,
    pub field: Field,
    pub p: usize,
    #[serde(default)]
    pub n_grid: Vec<usize>,
    #[serde(default = "default_rho_grid")]
    pub rho_grid: Vec<f64>,
    #[serde(default = "default_tau")]
    pub tau: f64,
    pub generator: GeneratorConfig,
    #[serde(default)]
    pub methods: Vec<String>,
    pub trials: usize,
    pub seed: u64,
    #[serde(default = "default_huber_q")]
    pub huber_q: f64,
    /// Worker threads; 0 lets the runtime decide. Not part of the result
    /// identity: outputs are identical for every value.
    #[serde(default)]
    pub threads: usize,
    /// Weight under validation (lemma_validation / theta_unbiased /
    /// beta_oracle): gaussian | huber | tyler | mvt.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<String>,
    /// d.o.f. of the mvt weight under validation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight_nu: Option<f64>,
    /// T_max values for dof_convergence.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tmax_grid: Option<Vec<usize>>,
}

fn default_rho_grid() -> Vec<f64> {
    vec![0.6]
}
fn default_tau() -> f64 {
    10.0
}
fn default_huber_q() -> f64 {
    0.7
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != CONFIG_SCHEMA {
            return Err(Error::Config(format!(
                "unsupported config schema {} (expected {})",
                self.schema, CONFIG_SCHEMA
            )));
        }
        if self.trials == 0 {
            return Err(Error::Config("trials must be >= 1".into()));
        }
        if self.p == 0 {
            return Err(Error::Config("p must be >= 1".into()));
        }
        self.generator.to_spec()?;
        let needs_grid = !matches!(
            self.experiment,
            ExperimentKind::LemmaValidation
                | ExperimentKind::ThetaUnbiased
                | ExperimentKind::BetaOracle
        );
        if self.n_grid.is_empty() {
            return Err(Error::Config("n_grid must not be empty".into()));
        }
        for &rho in &self.rho_grid {
            if !(0.0..1.0).contains(&rho) {
                return Err(Error::Config(format!("rho {rho} outside [0,1)")));
            }
        }
        let methods = self.method_ids()?;
        if needs_grid && methods.is_empty() && self.methods.is_empty() {
            // beta/nmse/shape experiments need at least one method
            if !matches!(self.experiment, ExperimentKind::DofConvergence) {
                return Err(Error::Config("methods must not be empty".into()));
            }
        }
        let scm_only = methods.iter().all(|m| {
            matches!(
                m,
                MethodId::Pipeline(EstimatorFamily::Rscm, _) | MethodId::RscmCv
            )
        });
        if !scm_only || !needs_grid {
            for &n in &self.n_grid {
                if n <= self.p {
                    return Err(Error::Config(format!(
                        "n = {n} must exceed p = {} for M-estimation methods",
                        self.p
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn method_ids(&self) -> Result<Vec<MethodId>> {
        self.methods.iter().map(|s| MethodId::parse(s)).collect()
    }

    fn weight_spec(&self, p: usize, field: Field) -> Result<WeightSpec> {
        match self.weight.as_deref().unwrap_or("gaussian") {
            "gaussian" => Ok(WeightSpec::gaussian(field)),
            "huber" => WeightSpec::huber(p, self.huber_q, field),
            "tyler" => Ok(WeightSpec::tyler(field)),
            "mvt" => {
                let nu = self.weight_nu.ok_or_else(|| {
                    Error::Config("mvt weight validation requires `weight_nu`".into())
                })?;
                WeightSpec::mvt(nu, field)
            }
            other => Err(Error::Config(format!("unknown weight `{other}`"))),
        }
    }
}

/// Estimation method named in a config.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MethodId {
    Pipeline(EstimatorFamily, SphericityMethod),
    Cwh,
    RscmCv,
}

impl MethodId {
    pub fn parse(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase();
        let id = match norm.as_str() {
            "rscm" | "rscm-ell1" => MethodId::Pipeline(EstimatorFamily::Rscm, SphericityMethod::Ell1),
            "rscm-ell2" => MethodId::Pipeline(EstimatorFamily::Rscm, SphericityMethod::Ell2),
            "rhub" | "rhub-ell1" => MethodId::Pipeline(EstimatorFamily::Rhub, SphericityMethod::Ell1),
            "rhub-ell2" => MethodId::Pipeline(EstimatorFamily::Rhub, SphericityMethod::Ell2),
            "rtyl" | "rtyl-ell1" => MethodId::Pipeline(EstimatorFamily::Rtyl, SphericityMethod::Ell1),
            "rmvt" | "rmvt-ell1" => MethodId::Pipeline(EstimatorFamily::Rmvt, SphericityMethod::Ell1),
            "rmvt-ell2" => MethodId::Pipeline(EstimatorFamily::Rmvt, SphericityMethod::Ell2),
            "cwh" => MethodId::Cwh,
            "cv" | "rscm-cv" => MethodId::RscmCv,
            other => {
                return Err(Error::Config(format!("unknown method `{other}`")));
            }
        };
        Ok(id)
    }

    pub fn name(&self) -> String {
        match self {
            MethodId::Pipeline(f, s) => format!(
                "{}-{}",
                f.name(),
                match s {
                    SphericityMethod::Ell1 => "ell1",
                    SphericityMethod::Ell2 => "ell2",
                }
            ),
            MethodId::Cwh => "cwh".into(),
            MethodId::RscmCv => "rscm-cv".into(),
        }
    }
}

/// One aggregated statistic row.
#[derive(Clone, Debug, PartialEq)]
pub struct ResultRow {
    pub method: String,
    pub n: usize,
    pub rho: f64,
    pub statistic: String,
    pub mean: f64,
    pub std_error: f64,
    pub trials: usize,
}

/// Aggregated experiment output: metadata plus tidy rows.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ExperimentResult {
    pub metadata: BTreeMap<String, String>,
    pub rows: Vec<ResultRow>,
}

impl ExperimentResult {
    fn with_config(cfg: &ExperimentConfig) -> Self {
        let mut metadata = BTreeMap::new();
        metadata.insert("schema".into(), CONFIG_SCHEMA.to_string());
        metadata.insert("version".into(), env!("CARGO_PKG_VERSION").into());
        metadata.insert("experiment".into(), cfg.experiment.name().into());
        metadata.insert("field".into(), cfg.field.to_string());
        metadata.insert("p".into(), cfg.p.to_string());
        metadata.insert("tau".into(), fmt_f64(cfg.tau));
        metadata.insert("generator".into(), cfg.generator.label());
        metadata.insert("seed".into(), cfg.seed.to_string());
        metadata.insert("trials".into(), cfg.trials.to_string());
        metadata.insert("huber_q".into(), fmt_f64(cfg.huber_q));
        Self {
            metadata,
            rows: Vec::new(),
        }
    }

    /// Emit as CSV with `#key=value` metadata comment lines. Deliberately
    /// excludes wall time and thread count so the file is reproducible
    /// bit-for-bit from (config, seed).
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        for (k, v) in &self.metadata {
            writeln!(w, "#{k}={v}")?;
        }
        writeln!(w, "method,n,rho,statistic,mean,std_error,trials")?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                r.method,
                r.n,
                fmt_f64(r.rho),
                r.statistic,
                fmt_f64(r.mean),
                fmt_f64(r.std_error),
                r.trials
            )?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut out = ExperimentResult::default();
        let mut saw_header = false;
        for (idx, line) in r.lines().enumerate() {
            let line_no = idx + 1;
            let line = line?;
            let line = line.trim_end();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                let (k, v) = rest.split_once('=').ok_or(Error::Parse {
                    line: line_no,
                    message: "metadata line without `=`".into(),
                })?;
                out.metadata.insert(k.to_string(), v.to_string());
                continue;
            }
            if !saw_header {
                if line != "method,n,rho,statistic,mean,std_error,trials" {
                    return Err(Error::Parse {
                        line: line_no,
                        message: format!("unexpected header `{line}`"),
                    });
                }
                saw_header = true;
                continue;
            }
            let parts: Vec<&str> = line.split(',').collect();
            if parts.len() != 7 {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("expected 7 columns, got {}", parts.len()),
                });
            }
            let parse_f = |s: &str| {
                s.parse::<f64>().map_err(|e| Error::Parse {
                    line: line_no,
                    message: format!("`{s}`: {e}"),
                })
            };
            let parse_u = |s: &str| {
                s.parse::<usize>().map_err(|e| Error::Parse {
                    line: line_no,
                    message: format!("`{s}`: {e}"),
                })
            };
            out.rows.push(ResultRow {
                method: parts[0].to_string(),
                n: parse_u(parts[1])?,
                rho: parse_f(parts[2])?,
                statistic: parts[3].to_string(),
                mean: parse_f(parts[4])?,
                std_error: parse_f(parts[5])?,
                trials: parse_u(parts[6])?,
            });
        }
        if !saw_header {
            return Err(Error::Parse {
                line: 0,
                message: "missing result header".into(),
            });
        }
        Ok(out)
    }

    pub fn get(&self, method: &str, n: usize, statistic: &str) -> Option<&ResultRow> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.n == n && r.statistic == statistic)
    }
}

fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Run `trials` independent units, optionally in parallel, preserving the
/// trial index order of the outputs.
pub fn run_trials<T, F>(trials: usize, threads: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        if threads != 1 {
            let run = || (0..trials).into_par_iter().map(|i| f(i)).collect();
            return if threads == 0 {
                run()
            } else {
                let pool = rayon::ThreadPoolBuilder::new()
                    .num_threads(threads)
                    .build()
                    .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
                pool.install(run)
            };
        }
    }
    let _ = threads;
    (0..trials).map(f).collect()
}

/// Sequential reference path for the trial runner; the criterion bench
/// compares it against the parallel path.
pub fn run_trials_sequential<T, F>(trials: usize, f: F) -> Result<Vec<T>>
where
    F: Fn(usize) -> Result<T>,
{
    (0..trials).map(f).collect()
}

/// Independent RNG stream for one (grid point, trial) unit.
pub fn trial_rng(seed: u64, grid_idx: usize, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((grid_idx as u64) << 40) ^ trial as u64);
    rng
}

fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Consistency factor of a method's population target for the given
/// generator: `Sigma_0 = sigma * Sigma` (Tyler-type methods target the shape
/// matrix V instead and return None here).
fn method_sigma_factor(
    method: &MethodId,
    gen: GeneratorSpec,
    p: usize,
    field: Field,
    huber_q: f64,
) -> Result<Option<f64>> {
    let radial = RadialDistribution::new(gen, p, field)?;
    match method {
        MethodId::Pipeline(EstimatorFamily::Rscm, _) | MethodId::RscmCv => {
            let s = solve_sigma(&WeightSpec::gaussian(field), &radial, None)?;
            Ok(Some(s.sigma))
        }
        MethodId::Pipeline(EstimatorFamily::Rhub, _) => {
            let spec = WeightSpec::huber(p, huber_q, field)?;
            let s = solve_sigma(&spec, &radial, None)?;
            Ok(Some(s.sigma))
        }
        // adaptive d.o.f. estimation keeps the t-MLE near-matched, so
        // sigma ~= 1 for the Gaussian-consistency-rescaled estimate
        MethodId::Pipeline(EstimatorFamily::Rmvt, _) => Ok(Some(1.0)),
        MethodId::Pipeline(EstimatorFamily::Rtyl, _) | MethodId::Cwh => Ok(None),
    }
}

struct GridPoint {
    n: usize,
    rho: f64,
}

fn grid_points(cfg: &ExperimentConfig) -> Vec<GridPoint> {
    match cfg.experiment {
        ExperimentKind::NmseVsRho => cfg
            .rho_grid
            .iter()
            .map(|&rho| GridPoint {
                n: cfg.n_grid[0],
                rho,
            })
            .collect(),
        ExperimentKind::ShapeNmse => {
            let mut v = Vec::new();
            for &n in &cfg.n_grid {
                for &rho in &cfg.rho_grid {
                    v.push(GridPoint { n, rho });
                }
            }
            v
        }
        _ => cfg
            .n_grid
            .iter()
            .map(|&n| GridPoint {
                n,
                rho: cfg.rho_grid[0],
            })
            .collect(),
    }
}

/// Fit every requested method on one sample; returns (estimate, beta) per
/// method, computing the rtyl-ell1 coefficient once for cwh.
fn fit_methods<T: Scalar>(
    x: &DataMatrix<T>,
    methods: &[MethodId],
    opts: &EstimateOptions,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<(Array2<T>, f64)>> {
    let needs_rtyl_beta = methods.iter().any(|m| matches!(m, MethodId::Cwh));
    let mut rtyl_cache: Option<(Array2<T>, f64)> = None;
    if needs_rtyl_beta {
        let (est, rep) = estimate(x, EstimatorFamily::Rtyl, SphericityMethod::Ell1, opts)?;
        rtyl_cache = Some((est.matrix, rep.beta));
    }
    let mut out = Vec::with_capacity(methods.len());
    for m in methods {
        let fitted = match m {
            MethodId::Pipeline(family, sph) => {
                if *family == EstimatorFamily::Rtyl {
                    if let Some((mat, beta)) = &rtyl_cache {
                        (mat.clone(), *beta)
                    } else {
                        let (est, rep) = estimate(x, *family, *sph, opts)?;
                        (est.matrix, rep.beta)
                    }
                } else {
                    let (est, rep) = estimate(x, *family, *sph, opts)?;
                    (est.matrix, rep.beta)
                }
            }
            MethodId::Cwh => {
                let beta = rtyl_cache.as_ref().map(|(_, b)| *b).unwrap_or(0.5);
                // cwh requires beta strictly inside (0,1)
                let beta = beta.clamp(1e-12, 1.0 - 1e-12);
                let est = cwh(x, beta, opts.tol, opts.max_iter)?;
                (est.matrix, beta)
            }
            MethodId::RscmCv => {
                let seed = rng.random::<u64>();
                let (est, beta) = rscm_cv(x, 5, 0.05, seed)?;
                (est.matrix, beta)
            }
        };
        out.push(fitted);
    }
    Ok(out)
}

fn nmse_like_experiment<T: Scalar>(
    cfg: &ExperimentConfig,
    shape: bool,
) -> Result<ExperimentResult> {
    let methods = cfg.method_ids()?;
    let gen = cfg.generator.to_spec()?;
    let opts = EstimateOptions {
        huber_q: cfg.huber_q,
        ..EstimateOptions::default()
    };
    let mut result = ExperimentResult::with_config(cfg);
    // cache sigma factors in the metadata, one per (weight, generator, p)
    for m in &methods {
        if !shape {
            if let Some(s) = method_sigma_factor(m, gen, cfg.p, cfg.field, cfg.huber_q)? {
                result
                    .metadata
                    .insert(format!("sigma.{}", m.name()), fmt_f64(s));
            }
        }
    }
    for (gi, gp) in grid_points(cfg).iter().enumerate() {
        let scatter = ScatterSpec::<T>::Ar1 {
            p: cfg.p,
            rho: gp.rho,
            tau: cfg.tau,
        };
        let sigma = crate::elliptical::build_scatter(&scatter)?;
        let shape_target = {
            let s = cfg.p as f64 / trace_re(&sigma.view());
            sigma.mapv(|v| v.scale(s))
        };
        let mut targets: Vec<(Array2<T>, f64)> = Vec::new();
        for m in &methods {
            let t = if shape {
                shape_target.clone()
            } else {
                match method_sigma_factor(m, gen, cfg.p, cfg.field, cfg.huber_q)? {
                    Some(s) => sigma.mapv(|v| v.scale(s)),
                    None => shape_target.clone(),
                }
            };
            let norm = fro_norm_sq(&t.view());
            targets.push((t, norm));
        }
        let per_trial = run_trials(cfg.trials, cfg.threads, |trial| {
            let mut rng = trial_rng(cfg.seed, gi, trial);
            let x = sample_with_rng(gp.n, &scatter, &gen, &mut rng)?;
            let fits = fit_methods(&x, &methods, &opts, &mut rng)?;
            let mut vals = Vec::with_capacity(methods.len());
            for ((mat, _beta), (target, norm)) in fits.iter().zip(&targets) {
                let est = if shape && !is_trace_normalized(&methods[vals.len()]) {
                    let s = cfg.p as f64 / trace_re(&mat.view());
                    mat.mapv(|v| v.scale(s))
                } else {
                    mat.clone()
                };
                vals.push(fro_dist_sq(&est.view(), &target.view()) / norm);
            }
            Ok(vals)
        })?;
        let stat = if shape { "shape_nmse" } else { "nmse" };
        for (mi, m) in methods.iter().enumerate() {
            let vals: Vec<f64> = per_trial.iter().map(|v| v[mi]).collect();
            let (mean, se) = mean_se(&vals);
            result.rows.push(ResultRow {
                method: m.name(),
                n: gp.n,
                rho: gp.rho,
                statistic: stat.into(),
                mean,
                std_error: se,
                trials: cfg.trials,
            });
            // normal-approximation SE of the sample median
            result.rows.push(ResultRow {
                method: m.name(),
                n: gp.n,
                rho: gp.rho,
                statistic: format!("{stat}_median"),
                mean: median(&vals),
                std_error: 1.2533 * se,
                trials: cfg.trials,
            });
        }
    }
    Ok(result)
}

fn is_trace_normalized(m: &MethodId) -> bool {
    matches!(
        m,
        MethodId::Pipeline(EstimatorFamily::Rtyl, _) | MethodId::Cwh
    )
}

fn beta_trace_experiment_impl<T: Scalar>(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    let methods = cfg.method_ids()?;
    let gen = cfg.generator.to_spec()?;
    let opts = EstimateOptions {
        huber_q: cfg.huber_q,
        ..EstimateOptions::default()
    };
    let mut result = ExperimentResult::with_config(cfg);
    for (gi, gp) in grid_points(cfg).iter().enumerate() {
        let scatter = ScatterSpec::<T>::Ar1 {
            p: cfg.p,
            rho: gp.rho,
            tau: cfg.tau,
        };
        let per_trial = run_trials(cfg.trials, cfg.threads, |trial| {
            let mut rng = trial_rng(cfg.seed, gi, trial);
            let x = sample_with_rng(gp.n, &scatter, &gen, &mut rng)?;
            let fits = fit_methods(&x, &methods, &opts, &mut rng)?;
            Ok(fits.iter().map(|(_, beta)| *beta).collect::<Vec<f64>>())
        })?;
        for (mi, m) in methods.iter().enumerate() {
            let vals: Vec<f64> = per_trial.iter().map(|v| v[mi]).collect();
            let (mean, se) = mean_se(&vals);
            result.rows.push(ResultRow {
                method: m.name(),
                n: gp.n,
                rho: gp.rho,
                statistic: "beta".into(),
                mean,
                std_error: se,
                trials: cfg.trials,
            });
        }
    }
    Ok(result)
}

/// True psi_1 of a weight at a radial law via quadrature of psi^2.
pub fn psi1_true(spec: &WeightSpec, radial: &RadialDistribution, sigma: f64) -> Result<f64> {
    let p = radial.p as f64;
    let denom = match radial.field {
        Field::Real => p * (p + 2.0),
        Field::Complex => p * (p + 1.0),
    };
    let brk = if let crate::mest::WeightKind::Huber { c2, .. } = &spec.kind {
        vec![sigma * c2]
    } else {
        vec![]
    };
    let m = crate::elliptical::radial_moment_with_breakpoints(
        radial,
        |t| spec.psi_eval(t / sigma, radial.p).powi(2),
        &brk,
    )?;
    Ok(m.value / denom)
}

/// Population target of a validation weight: `sigma * Sigma` (Tyler: the
/// shape matrix V), plus sigma itself.
fn validation_target<T: Scalar>(
    spec: &WeightSpec,
    gen: GeneratorSpec,
    sigma_mat: &Array2<T>,
) -> Result<(Array2<T>, f64)> {
    let p = sigma_mat.nrows();
    let radial = RadialDistribution::new(gen, p, T::FIELD)?;
    if matches!(spec.kind, crate::mest::WeightKind::Tyler) {
        let tr = trace_re(&sigma_mat.view());
        let s = solve_sigma(spec, &radial, Some(tr))?;
        Ok((sigma_mat.mapv(|v| v.scale(s.sigma)), s.sigma))
    } else {
        let s = solve_sigma(spec, &radial, None)?;
        Ok((sigma_mat.mapv(|v| v.scale(s.sigma)), s.sigma))
    }
}

fn lemma_validation_impl<T: Scalar>(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    let gen = cfg.generator.to_spec()?;
    let n = cfg.n_grid[0];
    let rho = cfg.rho_grid[0];
    let spec = cfg.weight_spec(cfg.p, cfg.field)?;
    let scatter = ScatterSpec::<T>::Ar1 {
        p: cfg.p,
        rho,
        tau: cfg.tau,
    };
    let sigma = crate::elliptical::build_scatter(&scatter)?;
    let (sigma0, sigma_factor) = validation_target(&spec, gen, &sigma)?;
    let radial = RadialDistribution::new(gen, cfg.p, T::FIELD)?;
    let psi1 = psi1_true(&spec, &radial, sigma_factor)?;
    let closed = one_step_moments(&sigma0.view(), psi1, n);

    let per_trial = run_trials(cfg.trials, cfg.threads, |trial| {
        let mut rng = trial_rng(cfg.seed, 0, trial);
        let x = sample_with_rng(n, &scatter, &gen, &mut rng)?;
        let c = one_step(&x, &spec, &sigma0.view())?;
        let tr = trace_re(&c.view());
        Ok([trace_sq_hermitian(&c.view()), tr * tr])
    })?;

    let mut result = ExperimentResult::with_config(cfg);
    result
        .metadata
        .insert("weight".into(), spec.name().to_string());
    result.metadata.insert("psi1".into(), fmt_f64(psi1));
    result
        .metadata
        .insert("sigma_factor".into(), fmt_f64(sigma_factor));
    let method = spec.name().to_string();
    for (idx, (stat, expected)) in [("tr_c2", closed.e_tr_c2), ("tr_c_sq", closed.e_tr_c_sq)]
        .iter()
        .enumerate()
    {
        let vals: Vec<f64> = per_trial.iter().map(|v| v[idx]).collect();
        let (mean, se) = mean_se(&vals);
        let z = (mean - expected) / se;
        for (suffix, value, sev) in [
            ("_mc", mean, se),
            ("_closed", *expected, 0.0),
            ("_z", z, 0.0),
        ] {
            result.rows.push(ResultRow {
                method: method.clone(),
                n,
                rho,
                statistic: format!("{stat}{suffix}"),
                mean: value,
                std_error: sev,
                trials: cfg.trials,
            });
        }
    }
    Ok(result)
}

fn theta_unbiased_impl<T: Scalar>(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    let gen = cfg.generator.to_spec()?;
    let n = cfg.n_grid[0];
    let rho = cfg.rho_grid[0];
    let spec = cfg.weight_spec(cfg.p, cfg.field)?;
    let scatter = ScatterSpec::<T>::Ar1 {
        p: cfg.p,
        rho,
        tau: cfg.tau,
    };
    let sigma = crate::elliptical::build_scatter(&scatter)?;
    let (sigma0, sigma_factor) = validation_target(&spec, gen, &sigma)?;
    let radial = RadialDistribution::new(gen, cfg.p, T::FIELD)?;
    let psi1 = psi1_true(&spec, &radial, sigma_factor)?;
    let expected = trace_sq_hermitian(&sigma0.view()) / cfg.p as f64;

    let per_trial = run_trials(cfg.trials, cfg.threads, |trial| {
        let mut rng = trial_rng(cfg.seed, 0, trial);
        let x = sample_with_rng(n, &scatter, &gen, &mut rng)?;
        let c = one_step(&x, &spec, &sigma0.view())?;
        Ok(theta_unbiased(&c.view(), psi1, n))
    })?;
    let (mean, se) = mean_se(&per_trial);
    let z = (mean - expected) / se;

    let mut result = ExperimentResult::with_config(cfg);
    result
        .metadata
        .insert("weight".into(), spec.name().to_string());
    result.metadata.insert("psi1".into(), fmt_f64(psi1));
    let method = spec.name().to_string();
    for (stat, value, sev) in [
        ("theta_mc", mean, se),
        ("theta_closed", expected, 0.0),
        ("theta_z", z, 0.0),
    ] {
        result.rows.push(ResultRow {
            method: method.clone(),
            n,
            rho,
            statistic: stat.into(),
            mean: value,
            std_error: sev,
            trials: cfg.trials,
        });
    }
    Ok(result)
}

fn beta_oracle_impl<T: Scalar>(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    let gen = cfg.generator.to_spec()?;
    let n = cfg.n_grid[0];
    let rho = cfg.rho_grid[0];
    let spec = cfg.weight_spec(cfg.p, cfg.field)?;
    let scatter = ScatterSpec::<T>::Ar1 {
        p: cfg.p,
        rho,
        tau: cfg.tau,
    };
    let sigma = crate::elliptical::build_scatter(&scatter)?;
    let (sigma0, sigma_factor) = validation_target(&spec, gen, &sigma)?;
    let radial = RadialDistribution::new(gen, cfg.p, T::FIELD)?;
    let psi1 = psi1_true(&spec, &radial, sigma_factor)?;
    let gamma = sphericity_of(&sigma0.view());
    let beta_formula = beta_general(gamma, psi1, n, cfg.p, T::FIELD);
    let p = cfg.p;

    // per-trial quadratic coefficients of ||beta(C - mI) + (mI - Sigma0)||^2
    let per_trial = run_trials(cfg.trials, cfg.threads, |trial| {
        let mut rng = trial_rng(cfg.seed, 0, trial);
        let x = sample_with_rng(n, &scatter, &gen, &mut rng)?;
        let c = one_step(&x, &spec, &sigma0.view())?;
        let m = trace_re(&c.view()) / p as f64;
        let mut quad = 0.0;
        let mut lin = 0.0;
        let mut cons = 0.0;
        for i in 0..p {
            for j in 0..p {
                let mut a = c[(i, j)];
                let mut b = T::zero() - sigma0[(i, j)];
                if i == j {
                    a = a - T::from_re(m);
                    b = b + T::from_re(m);
                }
                quad += a.abs_sq();
                lin += 2.0 * (a * b.conj()).re();
                cons += b.abs_sq();
            }
        }
        Ok([quad, lin, cons])
    })?;

    let grid: Vec<f64> = (0..=100).map(|i| i as f64 / 100.0).collect();
    let tn = cfg.trials as f64;
    let (mut qm, mut lm, mut cm) = (0.0, 0.0, 0.0);
    for c in &per_trial {
        qm += c[0];
        lm += c[1];
        cm += c[2];
    }
    qm /= tn;
    lm /= tn;
    cm /= tn;
    let mut best = 0usize;
    let curve: Vec<f64> = grid.iter().map(|&b| qm * b * b + lm * b + cm).collect();
    for g in 1..grid.len() {
        if curve[g] < curve[best] {
            best = g;
        }
    }
    let beta_grid = grid[best];
    let mse_grid = curve[best];
    let per_trial_at_min: Vec<f64> = per_trial
        .iter()
        .map(|c| c[0] * beta_grid * beta_grid + c[1] * beta_grid + c[2])
        .collect();
    let (_, mse_se) = mean_se(&per_trial_at_min);
    let mse_formula = mse_at_optimum(&sigma0.view(), &one_step_moments(&sigma0.view(), psi1, n), beta_formula);
    let mse_z = (mse_grid - mse_formula) / mse_se;

    let mut result = ExperimentResult::with_config(cfg);
    result
        .metadata
        .insert("weight".into(), spec.name().to_string());
    result.metadata.insert("psi1".into(), fmt_f64(psi1));
    result.metadata.insert("gamma".into(), fmt_f64(gamma));
    let method = spec.name().to_string();
    for (stat, value, sev) in [
        ("beta_grid", beta_grid, 0.0),
        ("beta_formula", beta_formula, 0.0),
        ("beta_abs_diff", (beta_grid - beta_formula).abs(), 0.0),
        ("mse_grid_min", mse_grid, mse_se),
        ("mse_eq_opt", mse_formula, 0.0),
        ("mse_z", mse_z, 0.0),
    ] {
        result.rows.push(ResultRow {
            method: method.clone(),
            n,
            rho,
            statistic: stat.into(),
            mean: value,
            std_error: sev,
            trials: cfg.trials,
        });
    }
    Ok(result)
}

fn dof_convergence_impl<T: Scalar>(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    let gen = cfg.generator.to_spec()?;
    let tmax_grid = cfg.tmax_grid.clone().unwrap_or_else(|| vec![2, 5]);
    let mut result = ExperimentResult::with_config(cfg);
    for (gi, gp) in grid_points(cfg).iter().enumerate() {
        let scatter = ScatterSpec::<T>::Ar1 {
            p: cfg.p,
            rho: gp.rho,
            tau: cfg.tau,
        };
        let per_trial = run_trials(cfg.trials, cfg.threads, |trial| {
            let mut rng = trial_rng(cfg.seed, gi, trial);
            let x = sample_with_rng(gp.n, &scatter, &gen, &mut rng)?;
            let mut out = Vec::with_capacity(tmax_grid.len() + 1);
            for &tmax in &tmax_grid {
                let d = estimate_dof(&x, tmax)?;
                out.push(d.nu_hat);
            }
            let d0 = estimate_dof(&x, 0)?;
            out.push(d0.nu0);
            Ok(out)
        })?;
        for (ti, &tmax) in tmax_grid.iter().enumerate() {
            let vals: Vec<f64> = per_trial.iter().map(|v| v[ti]).collect();
            let (mean, se) = mean_se(&vals);
            result.rows.push(ResultRow {
                method: "rmvt".into(),
                n: gp.n,
                rho: gp.rho,
                statistic: format!("nu_hat_tmax{tmax}"),
                mean,
                std_error: se,
                trials: cfg.trials,
            });
        }
        let vals: Vec<f64> = per_trial.iter().map(|v| v[tmax_grid.len()]).collect();
        let (mean, se) = mean_se(&vals);
        result.rows.push(ResultRow {
            method: "rmvt".into(),
            n: gp.n,
            rho: gp.rho,
            statistic: "nu0".into(),
            mean,
            std_error: se,
            trials: cfg.trials,
        });
    }
    Ok(result)
}

fn run_typed<T: Scalar>(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    match cfg.experiment {
        ExperimentKind::NmseVsN | ExperimentKind::NmseVsRho => nmse_like_experiment::<T>(cfg, false),
        ExperimentKind::ShapeNmse => nmse_like_experiment::<T>(cfg, true),
        ExperimentKind::BetaVsN => beta_trace_experiment_impl::<T>(cfg),
        ExperimentKind::LemmaValidation => lemma_validation_impl::<T>(cfg),
        ExperimentKind::ThetaUnbiased => theta_unbiased_impl::<T>(cfg),
        ExperimentKind::BetaOracle => beta_oracle_impl::<T>(cfg),
        ExperimentKind::DofConvergence => dof_convergence_impl::<T>(cfg),
    }
}

/// Run any experiment config to a result table.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    match cfg.field {
        Field::Real => run_typed::<f64>(cfg),
        Field::Complex => run_typed::<Complex64>(cfg),
    }
}

/// NMSE study against each method's own population target.
pub fn nmse_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    match cfg.field {
        Field::Real => nmse_like_experiment::<f64>(cfg, false),
        Field::Complex => nmse_like_experiment::<Complex64>(cfg, false),
    }
}

/// NMSE study of trace-normalized shape estimates against V.
pub fn shape_nmse_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    match cfg.field {
        Field::Real => nmse_like_experiment::<f64>(cfg, true),
        Field::Complex => nmse_like_experiment::<Complex64>(cfg, true),
    }
}

/// Mean shrinkage coefficient per method and sample size.
pub fn beta_trace_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    match cfg.field {
        Field::Real => beta_trace_experiment_impl::<f64>(cfg),
        Field::Complex => beta_trace_experiment_impl::<Complex64>(cfg),
    }
}

/// Outcome of a statistical validation suite.
#[derive(Clone, Debug)]
pub struct ValidationOutcome {
    pub result: ExperimentResult,
    /// Largest |z| over the suite's comparisons.
    pub max_abs_z: f64,
    /// True when every |z| <= 4.
    pub pass: bool,
}

/// Run one of the closed-form validation suites (lemma_validation,
/// theta_unbiased, beta_oracle) and judge it on z-scores.
pub fn validation_suite(cfg: &ExperimentConfig) -> Result<ValidationOutcome> {
    cfg.validate()?;
    if !matches!(
        cfg.experiment,
        ExperimentKind::LemmaValidation | ExperimentKind::ThetaUnbiased | ExperimentKind::BetaOracle
    ) {
        return Err(Error::Config(format!(
            "`{}` is not a validation suite",
            cfg.experiment.name()
        )));
    }
    let result = run_experiment(cfg)?;
    let max_abs_z = result
        .rows
        .iter()
        .filter(|r| r.statistic.ends_with("_z"))
        .map(|r| r.mean.abs())
        .fold(0.0f64, f64::max);
    Ok(ValidationOutcome {
        pass: max_abs_z <= 4.0,
        max_abs_z,
        result,
    })
}
