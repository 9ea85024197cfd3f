//! From a raw M-estimate to a tuned shrinkage estimator: sphericity
//! estimation (Ell1/Ell2), psi_1 estimation per weight, the oracle shrinkage
//! coefficient formulas, data-adaptive t degrees-of-freedom estimation, the
//! end-to-end pipelines, and the CWH and cross-validation baselines.

use crate::elliptical::DataMatrix;
use crate::linalg::{
    cholesky, fro_dist_sq, quad_forms, scaled_eye, trace_re, trace_sq_hermitian, weighted_gram,
};
use crate::mest::{
    fixed_point, winsorize_rows, ScatterEstimate, WeightKind, WeightSpec, DEFAULT_MAX_ITER,
    DEFAULT_TOL,
};
use crate::numerics::elliptical_kurtosis;
use crate::{Error, Field, Result, Scalar};
use ndarray::ArrayView2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

/// Sphericity estimator variant.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SphericityMethod {
    Ell1,
    Ell2,
}

/// Estimated sphericity, clipped to the valid interval [1, p].
#[derive(Clone, Debug, Serialize)]
pub struct SphericityEstimate {
    pub gamma_hat: f64,
    pub method: SphericityMethod,
    /// Pre-clip value.
    pub raw: f64,
}

/// Where a psi_1 estimate came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Psi1Source {
    GaussianKurtosis,
    HuberWinsorized,
    TylerExact,
    MvtDof,
    Empirical,
}

#[derive(Clone, Debug, Serialize)]
pub struct Psi1Estimate {
    pub psi1_hat: f64,
    pub source: Psi1Source,
}

/// Data-adaptive t degrees-of-freedom estimate.
#[derive(Clone, Debug, Serialize)]
pub struct DofEstimate {
    pub nu_hat: f64,
    /// Kurtosis-based initial value 2/(max(0, kappa) + delta) + 4.
    pub nu0: f64,
    /// Number of fixed-point fits performed.
    pub iterations: usize,
    /// Trace ratios tr(SCM)/tr(Sigma_t) in iteration order.
    pub eta_trace: Vec<f64>,
    pub delta: f64,
    pub nu_max: f64,
}

pub const DOF_DELTA: f64 = 1e-3;
pub const DOF_NU_MAX: f64 = 1e3;

/// Finite-sample unbiasedness constants a_n, b_n.
#[derive(Clone, Copy, Debug)]
pub struct UnbiasednessConstants {
    pub a_n: f64,
    pub b_n: f64,
    pub field: Field,
}

impl UnbiasednessConstants {
    pub fn new(psi1: f64, n: usize, field: Field) -> Self {
        let nf = n as f64;
        let a_n = nf / (nf + psi1 - 1.0);
        let b_scale = match field {
            Field::Real => 3.0,
            Field::Complex => 2.0,
        };
        let b_n = nf / (nf - 1.0) * ((nf - 1.0 + psi1) / (nf - 1.0 + b_scale * psi1));
        Self { a_n, b_n, field }
    }
}

/// Full diagnostics of one shrinkage estimation run.
#[derive(Clone, Debug, Serialize)]
pub struct ShrinkageReport {
    pub method: String,
    pub beta: f64,
    pub gamma: SphericityEstimate,
    pub psi1: Psi1Estimate,
    /// Elliptical kurtosis of the raw data (clipped).
    pub kappa_hat: f64,
    pub nu: Option<DofEstimate>,
    /// tr(Sigma_hat)/p of the unshrunk estimate.
    pub eta_o_hat: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Sphericity of a Hermitian matrix: `p tr(S^2) / tr(S)^2`.
pub fn sphericity_of<T: Scalar>(m: &ArrayView2<'_, T>) -> f64 {
    let p = m.nrows() as f64;
    let tr = trace_re(m);
    p * trace_sq_hermitian(m) / (tr * tr)
}

/// Spatial-sign (Ell1) sphericity estimate from raw data:
/// `(n/(n-1)) (p tr(S_hat^2) - p/n)` with `S_hat` the average of
/// `x x^H / ||x||^2`, clipped to [1, p].
pub fn sphericity_ell1<T: Scalar>(x: &DataMatrix<T>) -> Result<SphericityEstimate> {
    let (n, p) = (x.n(), x.p());
    if n < 2 {
        return Err(Error::DegenerateInput("sphericity needs n >= 2".into()));
    }
    let mut w = Vec::with_capacity(n);
    for (i, row) in x.values().rows().into_iter().enumerate() {
        let norm_sq: f64 = row.iter().map(|v| v.abs_sq()).sum();
        if norm_sq == 0.0 {
            return Err(Error::DegenerateInput(format!(
                "zero observation row {i} in sphericity estimate"
            )));
        }
        w.push(1.0 / norm_sq);
    }
    let sign_cov = weighted_gram(&x.values(), &w);
    let nf = n as f64;
    let pf = p as f64;
    let raw = nf / (nf - 1.0) * (pf * trace_sq_hermitian(&sign_cov.view()) - pf / nf);
    Ok(SphericityEstimate {
        gamma_hat: raw.clamp(1.0, pf),
        method: SphericityMethod::Ell1,
        raw,
    })
}

/// Plug-in (Ell2) sphericity estimate from an unshrunk scatter estimate:
/// `b_n (p tr(S^2)/tr(S)^2 - psi1 a_n p/n)`, clipped to [1, p].
pub fn sphericity_ell2<T: Scalar>(
    sigma_hat: &ScatterEstimate<T>,
    psi1: &Psi1Estimate,
    n: usize,
) -> Result<SphericityEstimate> {
    if sigma_hat.beta != 1.0 {
        return Err(Error::Domain(
            "ell2 sphericity requires the unshrunk estimate (beta = 1)".into(),
        ));
    }
    let p = sigma_hat.p() as f64;
    let nf = n as f64;
    let c = UnbiasednessConstants::new(psi1.psi1_hat, n, T::FIELD);
    let m = sigma_hat.matrix.view();
    let tr = trace_re(&m);
    let raw = c.b_n * (p * trace_sq_hermitian(&m) / (tr * tr) - psi1.psi1_hat * c.a_n * p / nf);
    Ok(SphericityEstimate {
        gamma_hat: raw.clamp(1.0, p),
        method: SphericityMethod::Ell2,
        raw,
    })
}

/// Unbiased estimate of `tr(Sigma_0^2)/p` from a 1-step matrix:
/// `b_n (tr(C^2)/p - psi1 a_n (p/n) (tr(C)/p)^2)`.
pub fn theta_unbiased<T: Scalar>(c: &ArrayView2<'_, T>, psi1: f64, n: usize) -> f64 {
    let p = c.nrows() as f64;
    let k = UnbiasednessConstants::new(psi1, n, T::FIELD);
    let tr = trace_re(c);
    k.b_n * (trace_sq_hermitian(c) / p - psi1 * k.a_n * (p / n as f64) * (tr / p) * (tr / p))
}

/// Weight-specific psi_1 estimate.
///
/// Gaussian: `1 + kappa_hat` from the data kurtosis; Huber: `1 + kappa_w`
/// from the kurtosis of data winsorized against the Huber fit (the sigma = 1
/// form, exact at MVN); Tyler: `p/(p+2)` real, `p/(p+1)` complex, exact for
/// every elliptical law; MVT: `(p+nu)/(2+p+nu)` real,
/// `(2p+nu)/(2+2p+nu)` complex at the fitted d.o.f.
pub fn psi1_estimate<T: Scalar>(
    spec: &WeightSpec,
    x: &DataMatrix<T>,
    sigma_hat: &ScatterEstimate<T>,
) -> Result<Psi1Estimate> {
    let p = x.p() as f64;
    match &spec.kind {
        WeightKind::Gaussian => {
            let k = elliptical_kurtosis(&x.values())?;
            Ok(Psi1Estimate {
                psi1_hat: 1.0 + k.kappa_hat,
                source: Psi1Source::GaussianKurtosis,
            })
        }
        WeightKind::Huber { c2, b, .. } => {
            let w = winsorize_rows(x, &sigma_hat.matrix.view(), *c2, *b)?;
            let k = elliptical_kurtosis(&w.values())?;
            Ok(Psi1Estimate {
                psi1_hat: 1.0 + k.kappa_hat,
                source: Psi1Source::HuberWinsorized,
            })
        }
        WeightKind::Tyler => {
            let psi1 = match T::FIELD {
                Field::Real => p / (p + 2.0),
                Field::Complex => p / (p + 1.0),
            };
            Ok(Psi1Estimate {
                psi1_hat: psi1,
                source: Psi1Source::TylerExact,
            })
        }
        WeightKind::Mvt { nu, .. } => {
            let psi1 = match T::FIELD {
                Field::Real => (p + nu) / (2.0 + p + nu),
                Field::Complex => (2.0 * p + nu) / (2.0 + 2.0 * p + nu),
            };
            Ok(Psi1Estimate {
                psi1_hat: psi1,
                source: Psi1Source::MvtDof,
            })
        }
    }
}

/// Sample-mean version of the psi_1 integral:
/// `mean psi(x_i^H Sigma_hat^{-1} x_i)^2 / (p(p+2))` (real; `p(p+1)`
/// complex).
pub fn psi1_empirical<T: Scalar>(
    spec: &WeightSpec,
    x: &DataMatrix<T>,
    sigma_hat: &ScatterEstimate<T>,
) -> Result<Psi1Estimate> {
    let p = x.p();
    let chol = cholesky(&sigma_hat.matrix.view())?;
    let t = quad_forms(&chol.view(), &x.values());
    let mean_psi_sq =
        t.iter().map(|&ti| spec.psi_eval(ti, p).powi(2)).sum::<f64>() / x.n() as f64;
    let pf = p as f64;
    let denom = match T::FIELD {
        Field::Real => pf * (pf + 2.0),
        Field::Complex => pf * (pf + 1.0),
    };
    Ok(Psi1Estimate {
        psi1_hat: mean_psi_sq / denom,
        source: Psi1Source::Empirical,
    })
}

/// Oracle shrinkage coefficient for a general weight (real and complex
/// variants); 0/0 at gamma = 1 resolves to 0.
pub fn beta_general(gamma: f64, psi1: f64, n: usize, p: usize, field: Field) -> f64 {
    if gamma <= 1.0 {
        return 0.0;
    }
    let nf = n as f64;
    let pf = p as f64;
    let tail = match field {
        Field::Real => 2.0 * gamma + pf,
        Field::Complex => gamma + pf,
    };
    let num = nf * (gamma - 1.0);
    num / (num * (1.0 - 1.0 / nf) + psi1 * (1.0 - 1.0 / pf) * tail)
}

/// Shrinkage coefficient of the shrinkage SCM estimator in terms of the
/// elliptical kurtosis: `n(gamma-1) / (n(gamma-1) + p + a)`.
pub fn beta_rscm(gamma: f64, kappa: f64, n: usize, p: usize, field: Field) -> f64 {
    if gamma <= 1.0 {
        return 0.0;
    }
    let nf = n as f64;
    let pf = p as f64;
    let a = match field {
        Field::Real => {
            kappa * (2.0 * gamma * (1.0 - 1.0 / pf) + pf - 1.0) + gamma * (1.0 - 2.0 / pf)
        }
        Field::Complex => kappa * (gamma * (1.0 - 1.0 / pf) + pf - 1.0) - gamma / pf,
    };
    let num = nf * (gamma - 1.0);
    num / (num + pf + a)
}

/// Shrinkage coefficient for Tyler's weight; identical to
/// [`beta_general`] at psi_1 = p/(p+2) (real) or p/(p+1) (complex).
pub fn beta_tyler(gamma: f64, n: usize, p: usize, field: Field) -> f64 {
    if gamma <= 1.0 {
        return 0.0;
    }
    let nf = n as f64;
    let pf = p as f64;
    let num = nf * (gamma - 1.0);
    let den = match field {
        Field::Real => num * (1.0 - 1.0 / nf) + (pf - 1.0) / (pf + 2.0) * (2.0 * gamma + pf),
        Field::Complex => num * (1.0 - 1.0 / nf) + (pf - 1.0) / (pf + 1.0) * (gamma + pf),
    };
    num / den
}

/// Closed-form moments of the 1-step estimator under elliptical sampling.
#[derive(Clone, Copy, Debug)]
pub struct OneStepMoments {
    /// E[tr(C^2)]
    pub e_tr_c2: f64,
    /// E[tr(C)^2]
    pub e_tr_c_sq: f64,
}

/// Evaluate the closed-form moments for a known Sigma_0, psi_1 and n.
pub fn one_step_moments<T: Scalar>(sigma0: &ArrayView2<'_, T>, psi1: f64, n: usize) -> OneStepMoments {
    let nf = n as f64;
    let tr = trace_re(sigma0);
    let tr2 = trace_sq_hermitian(sigma0);
    match T::FIELD {
        Field::Real => OneStepMoments {
            e_tr_c2: (1.0 + (2.0 * psi1 - 1.0) / nf) * tr2 + psi1 / nf * tr * tr,
            e_tr_c_sq: 2.0 * psi1 / nf * tr2 + (1.0 + (psi1 - 1.0) / nf) * tr * tr,
        },
        Field::Complex => OneStepMoments {
            e_tr_c2: (1.0 + (psi1 - 1.0) / nf) * tr2 + psi1 / nf * tr * tr,
            e_tr_c_sq: psi1 / nf * tr2 + (1.0 + (psi1 - 1.0) / nf) * tr * tr,
        },
    }
}

/// MSE of the shrunk 1-step estimator at the oracle coefficient:
/// `(E[tr(C)^2] - tr(Sigma_0)^2)/p + (1 - beta) ||Sigma_0 - eta_o I||_F^2`.
pub fn mse_at_optimum<T: Scalar>(
    sigma0: &ArrayView2<'_, T>,
    moments: &OneStepMoments,
    beta_opt: f64,
) -> f64 {
    let p = sigma0.nrows() as f64;
    let tr = trace_re(sigma0);
    let tr2 = trace_sq_hermitian(sigma0);
    let eta = tr / p;
    let dist_sq = tr2 - p * eta * eta; // ||Sigma_0 - eta I||_F^2
    (moments.e_tr_c_sq - tr * tr) / p + (1.0 - beta_opt) * dist_sq
}

/// Data-adaptive estimation of the t degrees of freedom.
///
/// Starts at `nu_0 = 2/(max(0, kappa_hat) + delta) + 4` and iterates
/// `nu <- 2 eta/(eta - 1)` with `eta = tr(SCM)/tr(Sigma_nu)` from the t-MLE
/// fit at the current nu, stopping on a 1% relative change or after
/// `t_max` fits. `eta <= 1` (Gaussian-like data) caps nu at 1e3.
pub fn estimate_dof<T: Scalar>(x: &DataMatrix<T>, t_max: usize) -> Result<DofEstimate> {
    let kappa = elliptical_kurtosis(&x.values())?.kappa_hat;
    let nu0 = 2.0 / (kappa.max(0.0) + DOF_DELTA) + 4.0;
    let mut nu = nu0.min(DOF_NU_MAX);
    let scm_trace = trace_re(&weighted_gram(&x.values(), &vec![1.0; x.n()]).view());
    let mut eta_trace = Vec::new();
    let mut iterations = 0;
    for _ in 0..t_max {
        let spec = WeightSpec::mvt(nu, T::FIELD)?;
        let fit = fixed_point(x, &spec, DEFAULT_TOL, DEFAULT_MAX_ITER)?;
        iterations += 1;
        let eta = scm_trace / fit.trace();
        eta_trace.push(eta);
        let nu_next = if eta > 1.0 {
            (2.0 * eta / (eta - 1.0)).min(DOF_NU_MAX)
        } else {
            DOF_NU_MAX
        };
        let done = (nu_next - nu).abs() / nu < 0.01;
        nu = nu_next;
        if done {
            break;
        }
    }
    Ok(DofEstimate {
        nu_hat: nu,
        nu0,
        iterations,
        eta_trace,
        delta: DOF_DELTA,
        nu_max: DOF_NU_MAX,
    })
}

/// Shrink the eigenvalues of an estimate toward their grand mean:
/// `beta S + (1-beta) (tr(S)/p) I`.
pub fn shrink<T: Scalar>(est: &ScatterEstimate<T>, beta: f64) -> Result<ScatterEstimate<T>> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::Domain(format!(
            "shrinkage coefficient must be in [0,1], got {beta}"
        )));
    }
    let p = est.p();
    let target = trace_re(&est.matrix.view()) / p as f64;
    let mut m = est.matrix.mapv(|v| v.scale(beta));
    for j in 0..p {
        m[(j, j)] = m[(j, j)] + T::from_re((1.0 - beta) * target);
    }
    Ok(ScatterEstimate {
        matrix: m,
        weight: est.weight.clone(),
        beta,
        iterations: est.iterations,
        converged: est.converged,
    })
}

/// Estimator family of the end-to-end pipeline.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorFamily {
    Rscm,
    Rhub,
    Rtyl,
    Rmvt,
}

impl EstimatorFamily {
    pub fn name(self) -> &'static str {
        match self {
            EstimatorFamily::Rscm => "rscm",
            EstimatorFamily::Rhub => "rhub",
            EstimatorFamily::Rtyl => "rtyl",
            EstimatorFamily::Rmvt => "rmvt",
        }
    }
}

/// Pipeline options; defaults follow the reference experiment setup.
#[derive(Clone, Debug)]
pub struct EstimateOptions {
    pub huber_q: f64,
    pub tol: f64,
    pub max_iter: usize,
    /// Fixed-point fits allowed inside the d.o.f. search.
    pub dof_t_max: usize,
    /// Rescale the MVT fit to be Gaussian-consistent.
    pub mvt_gaussian_consistent: bool,
}

impl Default for EstimateOptions {
    fn default() -> Self {
        Self {
            huber_q: 0.7,
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
            dof_t_max: 5,
            mvt_gaussian_consistent: true,
        }
    }
}

/// End-to-end shrinkage estimation: fit the unshrunk M-estimator, estimate
/// psi_1 and the sphericity, evaluate the matching oracle coefficient and
/// shrink. `rtyl` is defined for Ell1 only.
pub fn estimate<T: Scalar>(
    x: &DataMatrix<T>,
    family: EstimatorFamily,
    sphericity: SphericityMethod,
    opts: &EstimateOptions,
) -> Result<(ScatterEstimate<T>, ShrinkageReport)> {
    if family == EstimatorFamily::Rtyl && sphericity == SphericityMethod::Ell2 {
        return Err(Error::Config(
            "rtyl is defined with the ell1 sphericity estimate only".into(),
        ));
    }
    let (n, p) = (x.n(), x.p());
    let kappa = elliptical_kurtosis(&x.values())?.kappa_hat;

    let mut nu_est = None;
    let spec = match family {
        EstimatorFamily::Rscm => WeightSpec::gaussian(T::FIELD),
        EstimatorFamily::Rhub => WeightSpec::huber(p, opts.huber_q, T::FIELD)?,
        EstimatorFamily::Rtyl => WeightSpec::tyler(T::FIELD),
        EstimatorFamily::Rmvt => {
            let dof = estimate_dof(x, opts.dof_t_max)?;
            let s = WeightSpec::mvt(dof.nu_hat, T::FIELD)?;
            nu_est = Some(dof);
            if opts.mvt_gaussian_consistent {
                s.with_gaussian_consistency()
            } else {
                s
            }
        }
    };

    let unshrunk = fixed_point(x, &spec, opts.tol, opts.max_iter)?;
    let psi1 = psi1_estimate(&spec, x, &unshrunk)?;
    let gamma = match sphericity {
        SphericityMethod::Ell1 => sphericity_ell1(x)?,
        SphericityMethod::Ell2 => sphericity_ell2(&unshrunk, &psi1, n)?,
    };
    let beta = match family {
        EstimatorFamily::Rscm => beta_rscm(gamma.gamma_hat, kappa, n, p, T::FIELD),
        EstimatorFamily::Rtyl => beta_tyler(gamma.gamma_hat, n, p, T::FIELD),
        EstimatorFamily::Rhub | EstimatorFamily::Rmvt => {
            beta_general(gamma.gamma_hat, psi1.psi1_hat, n, p, T::FIELD)
        }
    };
    let eta_o_hat = unshrunk.trace() / p as f64;
    let iterations = unshrunk.iterations;
    let converged = unshrunk.converged;
    let shrunk = shrink(&unshrunk, beta)?;
    let report = ShrinkageReport {
        method: format!(
            "{}-{}",
            family.name(),
            match sphericity {
                SphericityMethod::Ell1 => "ell1",
                SphericityMethod::Ell2 => "ell2",
            }
        ),
        beta,
        gamma,
        psi1,
        kappa_hat: kappa,
        nu: nu_est,
        eta_o_hat,
        iterations,
        converged,
    };
    Ok((shrunk, report))
}

/// Diagonally loaded Tyler iteration:
/// `Sigma <- beta (p/n) sum_i x_i x_i^H / (x_i^H V^{-1} x_i) + (1-beta) I`,
/// `V <- p Sigma / tr(Sigma)`, returning V at convergence.
pub fn cwh<T: Scalar>(
    x: &DataMatrix<T>,
    beta: f64,
    tol: f64,
    max_iter: usize,
) -> Result<ScatterEstimate<T>> {
    cwh_with_init(x, beta, None, tol, max_iter)
}

/// [`cwh`] from an arbitrary positive-definite start (the iteration has a
/// unique fixed point, which tests verify by varying the start).
pub fn cwh_with_init<T: Scalar>(
    x: &DataMatrix<T>,
    beta: f64,
    init: Option<&ArrayView2<'_, T>>,
    tol: f64,
    max_iter: usize,
) -> Result<ScatterEstimate<T>> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::Domain(format!(
            "cwh requires a fixed beta in (0,1), got {beta}"
        )));
    }
    let (n, p) = (x.n(), x.p());
    let mut v = match init {
        Some(m) => {
            let mut v = m.to_owned();
            let s = p as f64 / trace_re(&v.view());
            v.mapv_inplace(|x| x.scale(s));
            v
        }
        None => scaled_eye::<T>(p, 1.0),
    };
    let mut w = vec![0.0; n];
    let mut converged = false;
    let mut iterations = 0;
    for it in 1..=max_iter {
        iterations = it;
        let chol = cholesky(&v.view())
            .map_err(|e| Error::Conditioning(format!("cwh iterate at step {it}: {e}")))?;
        let t = quad_forms(&chol.view(), &x.values());
        for (wi, &ti) in w.iter_mut().zip(&t) {
            if ti == 0.0 {
                return Err(Error::DegenerateInput("zero observation row in cwh".into()));
            }
            *wi = p as f64 / ti;
        }
        // beta * (p/n) sum x x^H / t + (1 - beta) I
        let mut sigma = weighted_gram(&x.values(), &w);
        sigma.mapv_inplace(|v| v.scale(beta));
        for j in 0..p {
            sigma[(j, j)] = sigma[(j, j)] + T::from_re(1.0 - beta);
        }
        let s = p as f64 / trace_re(&sigma.view());
        sigma.mapv_inplace(|v| v.scale(s));
        let rel = (fro_dist_sq(&sigma.view(), &v.view())
            / crate::linalg::fro_norm_sq(&v.view()))
        .sqrt();
        v = sigma;
        if rel < tol {
            converged = true;
            break;
        }
    }
    Ok(ScatterEstimate {
        matrix: v,
        weight: WeightSpec::tyler(T::FIELD),
        beta,
        iterations,
        converged,
    })
}

/// Shrinkage SCM tuned by k-fold cross-validation on a uniform beta grid:
/// fit criterion `||S_{beta,train} - S_val||_F` averaged over folds, ties
/// broken toward the smaller beta. Folds are contiguous equal splits of a
/// seed-shuffled index permutation.
pub fn rscm_cv<T: Scalar>(
    x: &DataMatrix<T>,
    folds: usize,
    grid_step: f64,
    seed: u64,
) -> Result<(ScatterEstimate<T>, f64)> {
    let (n, p) = (x.n(), x.p());
    if folds < 2 {
        return Err(Error::Config("cross-validation needs at least 2 folds".into()));
    }
    if n < folds {
        return Err(Error::Config(format!(
            "cross-validation needs n >= folds, got n = {n}, folds = {folds}"
        )));
    }
    if !(grid_step > 0.0 && grid_step <= 1.0) {
        return Err(Error::Config(format!("invalid beta grid step {grid_step}")));
    }
    let steps = (1.0 / grid_step).round() as usize;
    let grid: Vec<f64> = (0..=steps).map(|i| i as f64 / steps as f64).collect();

    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);

    let mut fit = vec![0.0f64; grid.len()];
    for f in 0..folds {
        let lo = f * n / folds;
        let hi = (f + 1) * n / folds;
        let val_rows: Vec<usize> = idx[lo..hi].to_vec();
        let train_rows: Vec<usize> = idx[..lo].iter().chain(&idx[hi..]).copied().collect();
        let take = |rows: &[usize]| {
            let mut m = ndarray::Array2::<T>::zeros((rows.len(), p));
            for (r, &src) in rows.iter().enumerate() {
                for c in 0..p {
                    m[(r, c)] = x.values()[(src, c)];
                }
            }
            m
        };
        let tr_m = take(&train_rows);
        let val_m = take(&val_rows);
        let s_tr = weighted_gram(&tr_m.view(), &vec![1.0; train_rows.len()]);
        let s_val = weighted_gram(&val_m.view(), &vec![1.0; val_rows.len()]);
        let target = trace_re(&s_tr.view()) / p as f64;
        for (g, &beta) in grid.iter().enumerate() {
            // || beta S_tr + (1-beta) target I - S_val ||_F
            let mut acc = 0.0;
            for i in 0..p {
                for j in 0..p {
                    let mut d = s_tr[(i, j)].scale(beta) - s_val[(i, j)];
                    if i == j {
                        d = d + T::from_re((1.0 - beta) * target);
                    }
                    acc += d.abs_sq();
                }
            }
            fit[g] += acc.sqrt();
        }
    }
    let mut best = 0usize;
    for g in 1..grid.len() {
        if fit[g] < fit[best] {
            best = g;
        }
    }
    let beta = grid[best];
    let scm = ScatterEstimate {
        matrix: weighted_gram(&x.values(), &vec![1.0; n]),
        weight: WeightSpec::gaussian(T::FIELD),
        beta: 1.0,
        iterations: 1,
        converged: true,
    };
    Ok((shrink(&scm, beta)?, beta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::elliptical::{build_scatter, sample, GeneratorSpec, ScatterSpec};
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn ar1(p: usize, rho: f64, tau: f64) -> ScatterSpec<f64> {
        ScatterSpec::Ar1 { p, rho, tau }
    }

    #[test]
    fn ell1_hand_examples() {
        // orthogonal pair: raw 0, clipped to 1
        let x = DataMatrix::new(array![[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let e = sphericity_ell1(&x).unwrap();
        assert_abs_diff_eq!(e.raw, 0.0, epsilon = 1e-14);
        assert_eq!(e.gamma_hat, 1.0);
        // rank-1 extreme: raw = p = 2
        let x = DataMatrix::new(array![[1.0, 0.0], [1.0, 0.0]]).unwrap();
        let e = sphericity_ell1(&x).unwrap();
        assert_abs_diff_eq!(e.raw, 2.0, epsilon = 1e-14);
        assert_eq!(e.gamma_hat, 2.0);
    }

    #[test]
    fn ell1_zero_row_rejected() {
        let x = DataMatrix::new(array![[1.0, 0.0], [0.0, 0.0]]).unwrap();
        assert!(matches!(
            sphericity_ell1(&x),
            Err(Error::DegenerateInput(_))
        ));
    }

    #[test]
    fn ell1_near_identity_population() {
        let x = sample(20_000, &ar1(4, 0.0, 1.0), &GeneratorSpec::Gaussian, 44).unwrap();
        let e = sphericity_ell1(&x).unwrap();
        assert!(
            (e.gamma_hat - 1.0).abs() < 0.05,
            "gamma {} should approach 1",
            e.gamma_hat
        );
    }

    #[test]
    fn ell2_hand_example() {
        let est = ScatterEstimate {
            matrix: ndarray::Array2::<f64>::eye(2),
            weight: WeightSpec::gaussian(Field::Real),
            beta: 1.0,
            iterations: 1,
            converged: true,
        };
        let psi1 = Psi1Estimate {
            psi1_hat: 1.0,
            source: Psi1Source::GaussianKurtosis,
        };
        let e = sphericity_ell2(&est, &psi1, 10).unwrap();
        // b_n (1 - 0.2) with b_n = (10/9)(10/12)
        assert_abs_diff_eq!(e.raw, (10.0 / 9.0) * (10.0 / 12.0) * 0.8, epsilon = 1e-12);
        assert_eq!(e.gamma_hat, 1.0);
    }

    #[test]
    fn ell2_rejects_shrunk_input() {
        let est = ScatterEstimate {
            matrix: ndarray::Array2::<f64>::eye(2),
            weight: WeightSpec::gaussian(Field::Real),
            beta: 0.5,
            iterations: 1,
            converged: true,
        };
        let psi1 = Psi1Estimate {
            psi1_hat: 1.0,
            source: Psi1Source::GaussianKurtosis,
        };
        assert!(sphericity_ell2(&est, &psi1, 10).is_err());
    }

    #[test]
    fn ell2_limit_large_n() {
        let sigma = build_scatter(&ar1(4, 0.6, 10.0)).unwrap();
        let est = ScatterEstimate {
            matrix: sigma.clone(),
            weight: WeightSpec::gaussian(Field::Real),
            beta: 1.0,
            iterations: 1,
            converged: true,
        };
        let psi1 = Psi1Estimate {
            psi1_hat: 1.3,
            source: Psi1Source::GaussianKurtosis,
        };
        let e = sphericity_ell2(&est, &psi1, 100_000_000).unwrap();
        assert_abs_diff_eq!(e.raw, sphericity_of(&sigma.view()), epsilon = 1e-5);
    }

    #[test]
    fn theta_hand_example() {
        let c = ndarray::Array2::<f64>::eye(2);
        let v = theta_unbiased(&c.view(), 1.0, 10);
        assert_abs_diff_eq!(v, 20.0 / 27.0, epsilon = 1e-13);
        // psi1 = 1, real: a_n = 1, b_n = (n/(n-1)) (n/(n+2))
        let k = UnbiasednessConstants::new(1.0, 10, Field::Real);
        assert_abs_diff_eq!(k.a_n, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(k.b_n, (10.0 / 9.0) * (10.0 / 12.0), epsilon = 1e-15);
    }

    #[test]
    fn psi1_exact_values() {
        let x = sample(60, &ar1(40, 0.6, 10.0), &GeneratorSpec::Gaussian, 8).unwrap();
        let ty = fixed_point(&x, &WeightSpec::tyler(Field::Real), 1e-8, 500).unwrap();
        let psi = psi1_estimate(&WeightSpec::tyler(Field::Real), &x, &ty).unwrap();
        assert_abs_diff_eq!(psi.psi1_hat, 40.0 / 42.0, epsilon = 1e-15);
        assert_eq!(psi.source, Psi1Source::TylerExact);

        let spec = WeightSpec::mvt(5.0, Field::Real).unwrap();
        let psi = psi1_estimate(&spec, &x, &ty).unwrap();
        assert_abs_diff_eq!(psi.psi1_hat, 45.0 / 47.0, epsilon = 1e-15);
        assert_eq!(psi.source, Psi1Source::MvtDof);
    }

    #[test]
    fn psi1_gaussian_near_one_at_mvn() {
        let x = sample(50_000, &ar1(5, 0.6, 10.0), &GeneratorSpec::Gaussian, 12).unwrap();
        let spec = WeightSpec::gaussian(Field::Real);
        let est = fixed_point(&x, &spec, 1e-8, 500).unwrap();
        let psi = psi1_estimate(&spec, &x, &est).unwrap();
        assert!(
            (psi.psi1_hat - 1.0).abs() < 0.03,
            "psi1 {} should be near 1",
            psi.psi1_hat
        );
    }

    #[test]
    fn beta_general_examples() {
        assert_eq!(beta_general(1.0, 1.0, 100, 40, Field::Real), 0.0);
        assert_abs_diff_eq!(
            beta_general(5.0, 1.0, 100, 40, Field::Real),
            400.0 / 444.75,
            epsilon = 1e-12
        );
        assert!(beta_general(2.0, 1.0, 1_000_000_000, 40, Field::Real) > 0.999);
    }

    #[test]
    fn beta_monotone_in_gamma() {
        let mut prev = 0.0;
        for i in 0..200 {
            let g = 1.0 + 39.0 * i as f64 / 199.0;
            let b = beta_general(g, 1.2, 80, 40, Field::Real);
            assert!((0.0..1.0).contains(&b));
            assert!(b >= prev, "beta not monotone at gamma {g}");
            prev = b;
        }
    }

    #[test]
    fn beta_identity_chain() {
        for &(g, n, p) in &[(1.5, 10usize, 5usize), (5.0, 100, 40), (20.0, 300, 25)] {
            for field in [Field::Real, Field::Complex] {
                for kappa in [-0.1, 0.0, 0.7, 4.2] {
                    let lhs = beta_rscm(g, kappa, n, p, field);
                    let rhs = beta_general(g, 1.0 + kappa, n, p, field);
                    assert_abs_diff_eq!(lhs, rhs, epsilon = 1e-12);
                }
                let psi1 = match field {
                    Field::Real => p as f64 / (p as f64 + 2.0),
                    Field::Complex => p as f64 / (p as f64 + 1.0),
                };
                assert_abs_diff_eq!(
                    beta_tyler(g, n, p, field),
                    beta_general(g, psi1, n, p, field),
                    epsilon = 1e-12
                );
            }
        }
        // frozen oracle value
        assert_abs_diff_eq!(
            beta_tyler(5.0, 100, 40, Field::Real),
            0.9041007426541814,
            epsilon = 1e-12
        );
    }

    #[test]
    fn mse_at_optimum_spherical_case() {
        // Sigma_0 = eta I: beta = 0 and the distance term vanishes
        let sigma0 = ndarray::Array2::<f64>::eye(5) * 3.0;
        let m = one_step_moments(&sigma0.view(), 1.0, 20);
        let mse = mse_at_optimum(&sigma0.view(), &m, 0.0);
        let tr = 15.0;
        assert_abs_diff_eq!(mse, (m.e_tr_c_sq - tr * tr) / 5.0, epsilon = 1e-12);
    }

    #[test]
    fn dof_update_relation() {
        // eta = 5/3 inverts to nu = 5
        let eta: f64 = 5.0 / 3.0;
        assert_abs_diff_eq!(2.0 * eta / (eta - 1.0), 5.0, epsilon = 1e-12);
    }

    #[test]
    fn dof_initial_value_example() {
        // kappa = 0.5 gives nu0 = 2/(0.5 + 1e-3) + 4
        let nu0 = 2.0 / (0.5 + DOF_DELTA) + 4.0;
        assert!((nu0 - 7.992).abs() < 1e-3);
    }

    #[test]
    fn dof_estimate_on_t5_data() {
        let x = sample(2000, &ar1(10, 0.6, 10.0), &GeneratorSpec::Mvt { nu: 5.0 }, 77).unwrap();
        let d = estimate_dof(&x, 5).unwrap();
        assert!(d.nu_hat > 2.0 && d.nu_hat <= DOF_NU_MAX);
        assert!(d.iterations <= 5);
        assert!(
            (d.nu_hat - 5.0).abs() < 1.5,
            "nu_hat {} too far from 5",
            d.nu_hat
        );
        assert_eq!(d.eta_trace.len(), d.iterations);
    }

    #[test]
    fn shrink_endpoints() {
        let x = sample(50, &ar1(4, 0.5, 2.0), &GeneratorSpec::Gaussian, 2).unwrap();
        let est = fixed_point(&x, &WeightSpec::gaussian(Field::Real), 1e-8, 500).unwrap();
        let full = shrink(&est, 1.0).unwrap();
        assert_eq!(full.matrix, est.matrix);
        let none = shrink(&est, 0.0).unwrap();
        let target = est.trace() / 4.0;
        for i in 0..4 {
            for j in 0..4 {
                let expect = if i == j { target } else { 0.0 };
                assert_abs_diff_eq!(none.matrix[(i, j)], expect, epsilon = 1e-12);
            }
        }
        assert!(shrink(&est, 1.5).is_err());
    }

    #[test]
    fn shrink_preserves_tyler_trace() {
        let x = sample(60, &ar1(5, 0.6, 10.0), &GeneratorSpec::Mvt { nu: 5.0 }, 3).unwrap();
        let est = fixed_point(&x, &WeightSpec::tyler(Field::Real), 1e-10, 500).unwrap();
        let shrunk = shrink(&est, 0.3).unwrap();
        assert_abs_diff_eq!(shrunk.trace(), 5.0, epsilon = 1e-10);
    }

    #[test]
    fn rtyl_ell2_rejected() {
        let x = sample(60, &ar1(5, 0.6, 10.0), &GeneratorSpec::Gaussian, 4).unwrap();
        let res = estimate(
            &x,
            EstimatorFamily::Rtyl,
            SphericityMethod::Ell2,
            &EstimateOptions::default(),
        );
        assert!(matches!(res, Err(Error::Config(_))));
    }

    #[test]
    fn rscm_pipeline_matches_direct_composition() {
        let x = sample(80, &ar1(6, 0.6, 10.0), &GeneratorSpec::Mvt { nu: 7.0 }, 5).unwrap();
        let (est, rep) = estimate(
            &x,
            EstimatorFamily::Rscm,
            SphericityMethod::Ell1,
            &EstimateOptions::default(),
        )
        .unwrap();
        // direct composition of the closed formulas
        let scm = weighted_gram(&x.values(), &vec![1.0; 80]);
        let kappa = elliptical_kurtosis(&x.values()).unwrap().kappa_hat;
        let gamma = sphericity_ell1(&x).unwrap().gamma_hat;
        let beta = beta_rscm(gamma, kappa, 80, 6, Field::Real);
        let target = trace_re(&scm.view()) / 6.0;
        for i in 0..6 {
            for j in 0..6 {
                let direct =
                    beta * scm[(i, j)] + if i == j { (1.0 - beta) * target } else { 0.0 };
                assert_abs_diff_eq!(est.matrix[(i, j)], direct, epsilon = 1e-13);
            }
        }
        assert_abs_diff_eq!(rep.beta, beta, epsilon = 1e-15);
        assert!(rep.nu.is_none());
    }

    #[test]
    fn cwh_limits_and_uniqueness() {
        let x = sample(60, &ar1(5, 0.6, 10.0), &GeneratorSpec::Mvt { nu: 5.0 }, 6).unwrap();
        assert!(cwh(&x, 0.0, 1e-8, 500).is_err());
        assert!(cwh(&x, 1.0, 1e-8, 500).is_err());
        // beta -> 0+: V -> I
        let v = cwh(&x, 1e-7, 1e-10, 500).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(v.matrix[(i, j)], expect, epsilon = 1e-4);
            }
        }
        // unique limit from different starts
        let a = cwh(&x, 0.4, 1e-10, 1000).unwrap();
        let start = build_scatter(&ar1(5, 0.8, 3.0)).unwrap();
        let b = cwh_with_init(&x, 0.4, Some(&start.view()), 1e-10, 1000).unwrap();
        assert!(a.converged && b.converged);
        let dist = fro_dist_sq(&a.matrix.view(), &b.matrix.view()).sqrt();
        assert!(dist < 1e-8, "cwh limit depends on start: {dist}");
        assert_abs_diff_eq!(a.trace(), 5.0, epsilon = 1e-10);
    }

    #[test]
    fn cv_tie_breaks_to_smallest_beta() {
        // p = 1: every shrunk SCM equals the SCM, so all betas tie and the
        // smallest (full shrinkage) must win
        let x = DataMatrix::new(
            ndarray::Array2::from_shape_vec((10, 1), (1..=10).map(|v| v as f64).collect())
                .unwrap(),
        )
        .unwrap();
        let (_, beta) = rscm_cv(&x, 5, 0.05, 9).unwrap();
        assert_eq!(beta, 0.0);
    }

    #[test]
    fn cv_grid_contains_endpoints() {
        let steps = (1.0 / 0.05f64).round() as usize;
        let grid: Vec<f64> = (0..=steps).map(|i| i as f64 / steps as f64).collect();
        assert_eq!(grid.len(), 21);
        assert_eq!(grid[0], 0.0);
        assert_eq!(grid[20], 1.0);
    }

    #[test]
    fn cv_selects_interior_beta_on_structured_data() {
        let x = sample(100, &ar1(10, 0.7, 5.0), &GeneratorSpec::Gaussian, 15).unwrap();
        let (est, beta) = rscm_cv(&x, 5, 0.05, 1).unwrap();
        assert!(beta > 0.0 && beta <= 1.0);
        assert_eq!(est.beta, beta);
    }
}
