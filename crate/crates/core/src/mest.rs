//! M-estimation of scatter: weight functions, Huber tuning constants, the
//! fixed-point solver, winsorization, the 1-step estimator and the
//! consistency factor sigma with E[psi(r^2/sigma)] = p.

use crate::elliptical::{
    radial_moment_with_breakpoints, DataMatrix, GeneratorSpec, RadialDistribution,
};
use crate::linalg::{
    cholesky, fro_dist_sq, fro_norm_sq, quad_forms, scaled_eye, trace_re, weighted_gram,
};
use crate::numerics::{brent_root, chi2_cdf, chi2_quantile};
use crate::{Error, Field, Result, Scalar};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 500;

/// Weight function kind with its tuning state.
#[derive(Clone, Debug, PartialEq)]
pub enum WeightKind {
    /// u(t) = 1: the sample covariance matrix.
    Gaussian,
    /// Huber weight with threshold c^2 and Fisher-consistency scaling b,
    /// both derived from (p, q, field).
    Huber { p: usize, q: f64, c2: f64, b: f64 },
    /// u(t) = p/t: Tyler's distribution-free weight.
    Tyler,
    /// t-distribution MLE weight with nu degrees of freedom. When
    /// `gaussian_consistent` is set the fixed-point estimate is rescaled to
    /// be consistent for the covariance matrix under Gaussian data.
    Mvt { nu: f64, gaussian_consistent: bool },
}

/// A weight function bound to a scalar field.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightSpec {
    pub kind: WeightKind,
    pub field: Field,
}

/// Huber tuning constants for dimension `p` and quantile level `q`.
///
/// Real field: `c^2` is the q-quantile of chi2_p and
/// `b = F_{chi2_{p+2}}(c^2) + c^2 (1 - F_{chi2_p}(c^2))/p`. Complex field:
/// `2 ||Sigma^{-1/2}x||^2 ~ chi2_{2p}` under circular Gaussian data, so
/// `c^2 = chi2_quantile(q, 2p)/2` and the same b-formula with doubled
/// degrees of freedom. `q = 1` degenerates to the Gaussian weight
/// (`c^2 = inf`, `b = 1`).
pub fn huber_tuning(p: usize, q: f64, field: Field) -> Result<(f64, f64)> {
    if p == 0 {
        return Err(Error::Domain("huber tuning needs p >= 1".into()));
    }
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::Domain(format!(
            "huber quantile level must be in (0,1], got {q}"
        )));
    }
    if q == 1.0 {
        return Ok((f64::INFINITY, 1.0));
    }
    let pf = p as f64;
    match field {
        Field::Real => {
            let c2 = chi2_quantile(q, p)?;
            let b = chi2_cdf(c2, p + 2)? + c2 * (1.0 - chi2_cdf(c2, p)?) / pf;
            Ok((c2, b))
        }
        Field::Complex => {
            let c2 = chi2_quantile(q, 2 * p)? / 2.0;
            let b = chi2_cdf(2.0 * c2, 2 * p + 2)? + c2 * (1.0 - chi2_cdf(2.0 * c2, 2 * p)?) / pf;
            Ok((c2, b))
        }
    }
}

impl WeightSpec {
    pub fn gaussian(field: Field) -> Self {
        Self {
            kind: WeightKind::Gaussian,
            field,
        }
    }

    pub fn huber(p: usize, q: f64, field: Field) -> Result<Self> {
        let (c2, b) = huber_tuning(p, q, field)?;
        Ok(Self {
            kind: WeightKind::Huber { p, q, c2, b },
            field,
        })
    }

    pub fn tyler(field: Field) -> Self {
        Self {
            kind: WeightKind::Tyler,
            field,
        }
    }

    pub fn mvt(nu: f64, field: Field) -> Result<Self> {
        if !(nu >= 0.0) {
            return Err(Error::Domain(format!("mvt d.o.f. must be >= 0, got {nu}")));
        }
        Ok(Self {
            kind: WeightKind::Mvt {
                nu,
                gaussian_consistent: false,
            },
            field,
        })
    }

    /// Enable the Gaussian-consistency rescale of the fixed-point estimate.
    pub fn with_gaussian_consistency(mut self) -> Self {
        if let WeightKind::Mvt {
            gaussian_consistent,
            ..
        } = &mut self.kind
        {
            *gaussian_consistent = true;
        }
        self
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            WeightKind::Gaussian => "gaussian",
            WeightKind::Huber { .. } => "huber",
            WeightKind::Tyler => "tyler",
            WeightKind::Mvt { .. } => "mvt",
        }
    }

    /// Weight u(t) at squared Mahalanobis distance `t`.
    pub fn weight_eval(&self, t: f64, p: usize) -> Result<f64> {
        if !(t >= 0.0) {
            return Err(Error::Domain(format!("weight argument must be >= 0, got {t}")));
        }
        let pf = p as f64;
        match &self.kind {
            WeightKind::Gaussian => Ok(1.0),
            WeightKind::Huber { c2, b, p: hp, .. } => {
                if *hp != p {
                    return Err(Error::Config(format!(
                        "huber constants tuned for p = {hp}, evaluated at p = {p}"
                    )));
                }
                if t <= *c2 {
                    Ok(1.0 / b)
                } else {
                    Ok(c2 / (t * b))
                }
            }
            WeightKind::Tyler => {
                if t == 0.0 {
                    return Err(Error::Domain("tyler weight is singular at t = 0".into()));
                }
                Ok(pf / t)
            }
            WeightKind::Mvt { nu, .. } => {
                let (num, den) = match self.field {
                    Field::Real => (pf + nu, nu + t),
                    Field::Complex => (2.0 * pf + nu, nu + 2.0 * t),
                };
                if den == 0.0 {
                    return Err(Error::Domain(
                        "mvt weight with nu = 0 is singular at t = 0".into(),
                    ));
                }
                Ok(num / den)
            }
        }
    }

    /// psi(t) = u(t) * t, with the indeterminate limits resolved exactly.
    pub fn psi_eval(&self, t: f64, p: usize) -> f64 {
        let pf = p as f64;
        match &self.kind {
            WeightKind::Gaussian => t,
            WeightKind::Huber { c2, b, .. } => t.min(*c2) / b,
            WeightKind::Tyler => pf,
            WeightKind::Mvt { nu, .. } => match self.field {
                Field::Real => {
                    if *nu == 0.0 {
                        pf
                    } else {
                        (pf + nu) * t / (nu + t)
                    }
                }
                Field::Complex => {
                    if *nu == 0.0 {
                        pf
                    } else {
                        (2.0 * pf + nu) * t / (nu + 2.0 * t)
                    }
                }
            },
        }
    }

    fn is_tyler_like(&self) -> bool {
        matches!(self.kind, WeightKind::Tyler)
    }
}

/// A fitted scatter matrix with its provenance.
#[derive(Clone, Debug)]
pub struct ScatterEstimate<T: Scalar> {
    pub matrix: Array2<T>,
    pub weight: WeightSpec,
    /// Shrinkage coefficient applied; 1 means unshrunk.
    pub beta: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl<T: Scalar> ScatterEstimate<T> {
    pub fn p(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn trace(&self) -> f64 {
        trace_re(&self.matrix.view())
    }
}

fn check_field<T: Scalar>(spec: &WeightSpec) -> Result<()> {
    if spec.field != T::FIELD {
        return Err(Error::Config(format!(
            "weight bound to {} field applied to {} data",
            spec.field,
            T::FIELD
        )));
    }
    Ok(())
}

/// Solve the M-estimating fixed point
/// `Sigma = (1/n) sum_i u(x_i^H Sigma^{-1} x_i) x_i x_i^H`.
///
/// Initialization is the SCM (Huber/MVT), the identity with per-step trace
/// renormalization (Tyler), and the map is constant for the Gaussian weight
/// so the SCM is returned after one application. Convergence is relative
/// Frobenius change below `tol`. A non-converged run is returned with
/// `converged = false`, never silently.
pub fn fixed_point<T: Scalar>(
    x: &DataMatrix<T>,
    spec: &WeightSpec,
    tol: f64,
    max_iter: usize,
) -> Result<ScatterEstimate<T>> {
    check_field::<T>(spec)?;
    let (n, p) = (x.n(), x.p());
    if !matches!(spec.kind, WeightKind::Gaussian) && n <= p {
        return Err(Error::InsufficientSample {
            required: p,
            actual: n,
        });
    }
    let ones = vec![1.0; n];
    if matches!(spec.kind, WeightKind::Gaussian) {
        return Ok(ScatterEstimate {
            matrix: weighted_gram(&x.values(), &ones),
            weight: spec.clone(),
            beta: 1.0,
            iterations: 1,
            converged: true,
        });
    }

    let mut sigma = if spec.is_tyler_like() {
        scaled_eye::<T>(p, 1.0)
    } else {
        weighted_gram(&x.values(), &ones)
    };
    let mut converged = false;
    let mut iterations = 0;
    let mut w = vec![0.0; n];
    for it in 1..=max_iter {
        iterations = it;
        let chol = cholesky(&sigma.view()).map_err(|e| {
            Error::Conditioning(format!("singular iterate at step {it}: {e}"))
        })?;
        let t = quad_forms(&chol.view(), &x.values());
        for (wi, &ti) in w.iter_mut().zip(&t) {
            *wi = spec.weight_eval(ti, p)?;
        }
        let mut next = weighted_gram(&x.values(), &w);
        if spec.is_tyler_like() {
            let tr = trace_re(&next.view());
            if !(tr > 0.0) {
                return Err(Error::Conditioning("tyler iterate lost trace".into()));
            }
            let s = p as f64 / tr;
            next.mapv_inplace(|v| v.scale(s));
        }
        let rel = (fro_dist_sq(&next.view(), &sigma.view())
            / fro_norm_sq(&sigma.view()))
        .sqrt();
        sigma = next;
        if rel < tol {
            converged = true;
            break;
        }
    }

    if let WeightKind::Mvt {
        gaussian_consistent: true,
        ..
    } = spec.kind
    {
        let radial = RadialDistribution::new(GeneratorSpec::Gaussian, p, T::FIELD)?;
        let sigma_g = solve_sigma(spec, &radial, None)?.sigma;
        sigma.mapv_inplace(|v| v.scale(1.0 / sigma_g));
    }

    Ok(ScatterEstimate {
        matrix: sigma,
        weight: spec.clone(),
        beta: 1.0,
        iterations,
        converged,
    })
}

/// Relative Frobenius residual of the estimating equation at an estimate,
/// `||Sigma - map(Sigma)||_F / ||Sigma||_F`.
pub fn fixed_point_residual<T: Scalar>(
    est: &ScatterEstimate<T>,
    x: &DataMatrix<T>,
) -> Result<f64> {
    let p = x.p();
    // undo a Gaussian-consistency rescale: the estimating equation holds for
    // the raw fixed point
    let raw = if let WeightKind::Mvt {
        gaussian_consistent: true,
        ..
    } = est.weight.kind
    {
        let radial = RadialDistribution::new(GeneratorSpec::Gaussian, p, T::FIELD)?;
        let sigma_g = solve_sigma(&est.weight, &radial, None)?.sigma;
        est.matrix.mapv(|v| v.scale(sigma_g))
    } else {
        est.matrix.clone()
    };
    let chol = cholesky(&raw.view())?;
    let t = quad_forms(&chol.view(), &x.values());
    let mut w = vec![0.0; x.n()];
    for (wi, &ti) in w.iter_mut().zip(&t) {
        *wi = est.weight.weight_eval(ti, p)?;
    }
    let mut mapped = weighted_gram(&x.values(), &w);
    if est.weight.is_tyler_like() {
        let s = p as f64 / trace_re(&mapped.view());
        mapped.mapv_inplace(|v| v.scale(s));
    }
    Ok((fro_dist_sq(&mapped.view(), &raw.view()) / fro_norm_sq(&raw.view())).sqrt())
}

/// 1-step estimator `C = (1/n) sum_i u(x_i^H Sigma0^{-1} x_i) x_i x_i^H`
/// at a known reference scatter. Validation use only.
pub fn one_step<T: Scalar>(
    x: &DataMatrix<T>,
    spec: &WeightSpec,
    sigma0: &ArrayView2<'_, T>,
) -> Result<Array2<T>> {
    check_field::<T>(spec)?;
    let p = x.p();
    let chol = cholesky(sigma0)?;
    let t = quad_forms(&chol.view(), &x.values());
    let mut w = vec![0.0; x.n()];
    for (wi, &ti) in w.iter_mut().zip(&t) {
        *wi = spec.weight_eval(ti, p)?;
    }
    Ok(weighted_gram(&x.values(), &w))
}

/// Winsorize one observation at the Huber threshold:
/// `x/sqrt(b)` inside the ellipsoid `||Sigma^{-1/2}x||^2 <= c^2`, radially
/// truncated to the boundary (then scaled by `1/sqrt(b)`) outside.
pub fn winsorize<T: Scalar>(
    x: &ArrayView1<'_, T>,
    sigma: &ArrayView2<'_, T>,
    c2: f64,
    b: f64,
) -> Result<Array1<T>> {
    let chol = cholesky(sigma)?;
    let t = {
        let row = x.to_owned().insert_axis(ndarray::Axis(0));
        quad_forms(&chol.view(), &row.view())[0]
    };
    Ok(winsorize_with_t(x, t, c2, b))
}

fn winsorize_with_t<T: Scalar>(x: &ArrayView1<'_, T>, t: f64, c2: f64, b: f64) -> Array1<T> {
    let factor = if t <= c2 { 1.0 } else { (c2 / t).sqrt() } / b.sqrt();
    x.mapv(|v| v.scale(factor))
}

/// Winsorize every row of a data matrix against one scatter estimate.
pub fn winsorize_rows<T: Scalar>(
    x: &DataMatrix<T>,
    sigma: &ArrayView2<'_, T>,
    c2: f64,
    b: f64,
) -> Result<DataMatrix<T>> {
    let chol = cholesky(sigma)?;
    let t = quad_forms(&chol.view(), &x.values());
    let mut out = x.values().to_owned();
    for (mut row, &ti) in out.rows_mut().into_iter().zip(&t) {
        let w = winsorize_with_t(&row.view(), ti, c2, b);
        row.assign(&w);
    }
    DataMatrix::new(out)
}

/// How a consistency factor was obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SigmaMethod {
    /// Closed form (Tyler's weight).
    Analytic,
    /// Direct moment evaluation (identity psi).
    Direct,
    /// Bracketing root-finder on the radial moment.
    Bracketed,
}

/// Consistency factor sigma with `Sigma_0 = sigma * Sigma`.
#[derive(Clone, Copy, Debug)]
pub struct SigmaSolve {
    pub sigma: f64,
    pub method: SigmaMethod,
}

/// Solve `E[psi(r^2/sigma)] = p` for the consistency factor sigma.
///
/// Tyler's weight satisfies the equation for every sigma; the conventional
/// value `p/tr(Sigma)` (fixing `tr(Sigma_0) = p`) is returned analytically
/// and requires `scatter_trace`. The identity-psi weights (Gaussian, Huber
/// with q = 1) reduce to `sigma = E[r^2]/p`. Everything else is bracketed
/// root-finding on quadrature moments, tolerance 1e-10.
pub fn solve_sigma(
    spec: &WeightSpec,
    radial: &RadialDistribution,
    scatter_trace: Option<f64>,
) -> Result<SigmaSolve> {
    let p = radial.p;
    if spec.field != radial.field {
        return Err(Error::Config(format!(
            "weight field {} does not match radial law field {}",
            spec.field, radial.field
        )));
    }
    match &spec.kind {
        WeightKind::Tyler => {
            let tr = scatter_trace.ok_or_else(|| {
                Error::Config(
                    "tyler consistency factor is p/tr(Sigma); pass the scatter trace".into(),
                )
            })?;
            if !(tr > 0.0) {
                return Err(Error::Domain("scatter trace must be positive".into()));
            }
            Ok(SigmaSolve {
                sigma: p as f64 / tr,
                method: SigmaMethod::Analytic,
            })
        }
        WeightKind::Gaussian => {
            let m = radial_moment_with_breakpoints(radial, |t| t, &[])?;
            Ok(SigmaSolve {
                sigma: m.value / p as f64,
                method: SigmaMethod::Direct,
            })
        }
        WeightKind::Huber { c2, .. } if c2.is_infinite() => {
            let m = radial_moment_with_breakpoints(radial, |t| t, &[])?;
            Ok(SigmaSolve {
                sigma: m.value / p as f64,
                method: SigmaMethod::Direct,
            })
        }
        _ => {
            let g = |sigma: f64| -> Result<f64> {
                let brk = if let WeightKind::Huber { c2, .. } = &spec.kind {
                    vec![sigma * c2]
                } else {
                    vec![]
                };
                let m = radial_moment_with_breakpoints(
                    radial,
                    |t| spec.psi_eval(t / sigma, p),
                    &brk,
                )?;
                Ok(m.value - p as f64)
            };
            let mut lo = 0.05;
            let mut hi = 20.0;
            let mut g_lo = g(lo)?;
            let mut g_hi = g(hi)?;
            // psi is nondecreasing, so g is nonincreasing in sigma
            for _ in 0..12 {
                if g_lo > 0.0 {
                    break;
                }
                lo *= 0.25;
                g_lo = g(lo)?;
            }
            for _ in 0..12 {
                if g_hi < 0.0 {
                    break;
                }
                hi *= 4.0;
                g_hi = g(hi)?;
            }
            if !(g_lo > 0.0 && g_hi < 0.0) {
                return Err(Error::BracketFailure {
                    lo,
                    hi,
                    g_lo,
                    g_hi,
                });
            }
            // brent over a cached closure; quadrature errors already ruled
            // out by the bracket evaluations above
            let f = |s: f64| g(s).unwrap_or(f64::NAN);
            let root = brent_root(&f, lo, hi, 1e-12, 200).ok_or(Error::BracketFailure {
                lo,
                hi,
                g_lo,
                g_hi,
            })?;
            if !root.is_finite() {
                return Err(Error::Conditioning(
                    "consistency factor iteration produced NaN".into(),
                ));
            }
            Ok(SigmaSolve {
                sigma: root,
                method: SigmaMethod::Bracketed,
            })
        }
    }
}
