//! Synthetic elliptically symmetric data in real and complex fields, the
//! AR(1) scatter structures used by the experiments, and moments of the
//! radial part r = ||Sigma^{-1/2} x||.

use crate::linalg::cholesky;
use crate::numerics::{integrate, ln_gamma};
use crate::{Error, Field, Result, Scalar};
use ndarray::{Array2, ArrayView2};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution};
use std::io::{BufRead, Write};

/// n x p observation matrix; rows are i.i.d. observations.
#[derive(Clone, Debug, PartialEq)]
pub struct DataMatrix<T: Scalar> {
    values: Array2<T>,
}

impl<T: Scalar> DataMatrix<T> {
    pub fn new(values: Array2<T>) -> Result<Self> {
        let (n, p) = values.dim();
        if n == 0 || p == 0 {
            return Err(Error::DegenerateInput(format!(
                "data matrix must be at least 1x1, got {n}x{p}"
            )));
        }
        Ok(Self { values })
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn p(&self) -> usize {
        self.values.ncols()
    }

    pub fn field(&self) -> Field {
        T::FIELD
    }

    pub fn values(&self) -> ArrayView2<'_, T> {
        self.values.view()
    }

    /// Serialize as CSV: one row per observation, no header for real data,
    /// a `#field=complex` comment line and interleaved re/im columns for
    /// complex data. Numbers carry 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        if T::FIELD == Field::Complex {
            writeln!(w, "#field=complex")?;
        }
        for row in self.values.rows() {
            let mut first = true;
            let mut line = String::new();
            for v in row {
                if !first {
                    line.push(',');
                }
                first = false;
                match T::FIELD {
                    Field::Real => line.push_str(&format!("{:.16e}", v.re())),
                    Field::Complex => {
                        line.push_str(&format!("{:.16e},{:.16e}", v.re(), v.im()))
                    }
                }
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }
}

/// Data matrix over either field, as read from a CSV file.
#[derive(Clone, Debug)]
pub enum AnyDataMatrix {
    Real(DataMatrix<f64>),
    Complex(DataMatrix<Complex64>),
}

impl AnyDataMatrix {
    pub fn field(&self) -> Field {
        match self {
            AnyDataMatrix::Real(_) => Field::Real,
            AnyDataMatrix::Complex(_) => Field::Complex,
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        match self {
            AnyDataMatrix::Real(m) => (m.n(), m.p()),
            AnyDataMatrix::Complex(m) => (m.n(), m.p()),
        }
    }
}

/// Parse a data matrix CSV (format of [`DataMatrix::write_csv`]).
pub fn read_data_csv<R: BufRead>(r: R) -> Result<AnyDataMatrix> {
    let mut complex = false;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width: Option<usize> = None;
    for (idx, line) in r.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if trimmed.starts_with('#') {
            if trimmed == "#field=complex" && rows.is_empty() {
                complex = true;
                continue;
            }
            if trimmed.starts_with("#field=") {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("unrecognized field directive `{trimmed}`"),
                });
            }
            continue; // other comments ignored
        }
        let mut vals = Vec::new();
        for (col, tok) in trimmed.split(',').enumerate() {
            let v = tok.trim().parse::<f64>().map_err(|e| Error::Parse {
                line: line_no,
                message: format!("column {}: `{}`: {e}", col + 1, tok.trim()),
            })?;
            vals.push(v);
        }
        if let Some(w) = width {
            if vals.len() != w {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("expected {w} columns, got {}", vals.len()),
                });
            }
        } else {
            if complex && vals.len() % 2 != 0 {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!(
                        "complex data needs an even column count, got {}",
                        vals.len()
                    ),
                });
            }
            width = Some(vals.len());
        }
        rows.push(vals);
    }
    let width = width.ok_or(Error::Parse {
        line: 0,
        message: "no data rows".into(),
    })?;
    let n = rows.len();
    if complex {
        let p = width / 2;
        let mut m = Array2::<Complex64>::zeros((n, p));
        for (i, row) in rows.iter().enumerate() {
            for j in 0..p {
                m[(i, j)] = Complex64::new(row[2 * j], row[2 * j + 1]);
            }
        }
        Ok(AnyDataMatrix::Complex(DataMatrix::new(m)?))
    } else {
        let mut m = Array2::<f64>::zeros((n, width));
        for (i, row) in rows.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                m[(i, j)] = v;
            }
        }
        Ok(AnyDataMatrix::Real(DataMatrix::new(m)?))
    }
}

/// Scatter matrix specification.
#[derive(Clone, Debug)]
pub enum ScatterSpec<T: Scalar> {
    /// `(Sigma)_{ij} = tau * rho^{|i-j|}`, so `tr(Sigma) = p * tau`.
    Ar1 { p: usize, rho: f64, tau: f64 },
    /// Explicit positive-definite symmetric/Hermitian matrix.
    Explicit(Array2<T>),
}

impl<T: Scalar> ScatterSpec<T> {
    pub fn p(&self) -> usize {
        match self {
            ScatterSpec::Ar1 { p, .. } => *p,
            ScatterSpec::Explicit(m) => m.nrows(),
        }
    }
}

/// Realize the scatter matrix of a [`ScatterSpec`], validating positive
/// definiteness.
pub fn build_scatter<T: Scalar>(spec: &ScatterSpec<T>) -> Result<Array2<T>> {
    match spec {
        ScatterSpec::Ar1 { p, rho, tau } => {
            if *p == 0 {
                return Err(Error::Domain("ar1 scatter needs p >= 1".into()));
            }
            if !(*rho >= 0.0 && *rho < 1.0) {
                return Err(Error::Domain(format!(
                    "ar1 correlation must be in [0,1), got {rho}"
                )));
            }
            if !(*tau > 0.0) {
                return Err(Error::Domain(format!("ar1 scale must be positive, got {tau}")));
            }
            let mut m = Array2::<T>::zeros((*p, *p));
            for i in 0..*p {
                for j in 0..*p {
                    let k = i.abs_diff(j);
                    let v = if k == 0 {
                        *tau // rho = 0 handled exactly: rho^0 = 1
                    } else {
                        tau * rho.powi(k as i32)
                    };
                    m[(i, j)] = T::from_re(v);
                }
            }
            Ok(m)
        }
        ScatterSpec::Explicit(m) => {
            if m.nrows() != m.ncols() {
                return Err(Error::Domain("explicit scatter must be square".into()));
            }
            cholesky(&m.view()).map_err(|_| {
                Error::Domain("explicit scatter matrix is not positive definite".into())
            })?;
            Ok(m.clone())
        }
    }
}

/// Density generator family of the elliptical law.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum GeneratorSpec {
    Gaussian,
    Mvt { nu: f64 },
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<()> {
        if let GeneratorSpec::Mvt { nu } = self {
            if !(*nu > 0.0) {
                return Err(Error::Domain(format!("mvt d.o.f. must be positive, got {nu}")));
            }
        }
        Ok(())
    }
}

/// Draw an n x p sample, deterministic in `seed`.
///
/// Gaussian draws are `Sigma^{1/2} z` with standard-normal (real) or
/// circular complex normal components; MVT draws divide a Gaussian draw by
/// `sqrt(s/nu)` with `s ~ chi2_nu`.
pub fn sample<T: Scalar>(
    n: usize,
    scatter: &ScatterSpec<T>,
    gen: &GeneratorSpec,
    seed: u64,
) -> Result<DataMatrix<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_with_rng(n, scatter, gen, &mut rng)
}

/// [`sample`] with a caller-provided RNG stream (used by the trial-parallel
/// harness, which derives one independent stream per trial).
pub fn sample_with_rng<T: Scalar, R: Rng + ?Sized>(
    n: usize,
    scatter: &ScatterSpec<T>,
    gen: &GeneratorSpec,
    rng: &mut R,
) -> Result<DataMatrix<T>> {
    if n == 0 {
        return Err(Error::Domain("sample size must be >= 1".into()));
    }
    gen.validate()?;
    let sigma = build_scatter(scatter)?;
    let p = sigma.nrows();
    let chol = cholesky(&sigma.view())?;
    let mut x = Array2::<T>::zeros((n, p));
    let mut z = vec![T::zero(); p];
    let chi: Option<ChiSquared<f64>> = match gen {
        GeneratorSpec::Gaussian => None,
        GeneratorSpec::Mvt { nu } => Some(ChiSquared::new(*nu).map_err(|e| {
            Error::Domain(format!("invalid mvt d.o.f.: {e}"))
        })?),
    };
    for i in 0..n {
        for zj in z.iter_mut() {
            *zj = T::standard_normal(rng);
        }
        let radial_scale = match (&chi, gen) {
            (Some(chi), GeneratorSpec::Mvt { nu }) => {
                let s: f64 = chi.sample(rng);
                (s / nu).sqrt().recip()
            }
            _ => 1.0,
        };
        for j in 0..p {
            let mut acc = T::zero();
            for (k, &zk) in z.iter().enumerate().take(j + 1) {
                acc = acc + chol[(j, k)] * zk;
            }
            x[(i, j)] = acc.scale(radial_scale);
        }
    }
    DataMatrix::new(x)
}

/// Law of the squared radial part r^2 = ||Sigma^{-1/2} x||^2.
#[derive(Clone, Copy, Debug)]
enum RadialLaw {
    /// r^2 = scale * chi2_k
    Chi2 { k: usize, scale: f64 },
    /// r^2 = scale * F(d1, d2)
    FisherF { d1: usize, d2: f64, scale: f64 },
}

/// Distribution of r = ||Sigma^{-1/2} x|| for a generator/dimension/field
/// triple. The uniform spherical direction is implicit.
#[derive(Clone, Copy, Debug)]
pub struct RadialDistribution {
    pub generator: GeneratorSpec,
    pub p: usize,
    pub field: Field,
}

/// How a radial moment was evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EvalMethod {
    Quadrature,
    MonteCarlo,
}

/// Value of a radial moment together with its evaluation method.
#[derive(Clone, Copy, Debug)]
pub struct RadialMoment {
    pub value: f64,
    pub method: EvalMethod,
}

impl RadialDistribution {
    pub fn new(generator: GeneratorSpec, p: usize, field: Field) -> Result<Self> {
        generator.validate()?;
        if p == 0 {
            return Err(Error::Domain("radial law needs p >= 1".into()));
        }
        Ok(Self { generator, p, field })
    }

    fn law(&self) -> RadialLaw {
        let f = self.field.dof_factor();
        match self.generator {
            // real: r^2 ~ chi2_p; complex: 2 r^2 ~ chi2_{2p}
            GeneratorSpec::Gaussian => RadialLaw::Chi2 {
                k: f * self.p,
                scale: 1.0 / f as f64,
            },
            // r^2 / p ~ F(fp, nu) in both fields
            GeneratorSpec::Mvt { nu } => RadialLaw::FisherF {
                d1: f * self.p,
                d2: nu,
                scale: self.p as f64,
            },
        }
    }

    /// Density of r^2 at `t`.
    pub fn density(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        match self.law() {
            RadialLaw::Chi2 { k, scale } => crate::numerics::chi2_pdf(t / scale, k) / scale,
            RadialLaw::FisherF { d1, d2, scale } => f_pdf(t / scale, d1 as f64, d2) / scale,
        }
    }

    /// Draw one r^2 value.
    pub fn sample_r2<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self.law() {
            RadialLaw::Chi2 { k, scale } => {
                let chi = ChiSquared::new(k as f64).expect("valid dof");
                scale * chi.sample(rng)
            }
            RadialLaw::FisherF { d1, d2, scale } => {
                let num = ChiSquared::new(d1 as f64).expect("valid dof").sample(rng);
                let den = ChiSquared::new(d2).expect("valid dof").sample(rng);
                scale * (num / d1 as f64) / (den / d2)
            }
        }
    }
}

fn f_pdf(y: f64, d1: f64, d2: f64) -> f64 {
    if y <= 0.0 {
        return 0.0;
    }
    let ln_b = ln_gamma(0.5 * d1) + ln_gamma(0.5 * d2) - ln_gamma(0.5 * (d1 + d2));
    let ln = 0.5 * d1 * (d1 / d2).ln() + (0.5 * d1 - 1.0) * y.ln()
        - 0.5 * (d1 + d2) * (1.0 + d1 * y / d2).ln()
        - ln_b;
    ln.exp()
}

/// `E[h(r^2)]` by adaptive quadrature over the closed-form radial density.
pub fn radial_moment(
    dist: &RadialDistribution,
    h: impl Fn(f64) -> f64,
) -> Result<RadialMoment> {
    radial_moment_with_breakpoints(dist, h, &[])
}

/// [`radial_moment`] with known kink locations of `h` (in r^2 units), which
/// become explicit panel boundaries for the quadrature.
pub fn radial_moment_with_breakpoints(
    dist: &RadialDistribution,
    h: impl Fn(f64) -> f64,
    breakpoints: &[f64],
) -> Result<RadialMoment> {
    // Integrate in s = r: E[h(r^2)] = int h(s^2) * f_{r^2}(s^2) * 2s ds,
    // which removes the endpoint singularity of chi2_1-type densities.
    let g = |s: f64| {
        let t = s * s;
        h(t) * dist.density(t) * 2.0 * s
    };
    // anchor covering the bulk of the law
    let mean_t = match dist.law() {
        RadialLaw::Chi2 { k, scale } => scale * k as f64,
        RadialLaw::FisherF { d1, d2, scale } => {
            if d2 > 2.0 {
                scale * d2 / (d2 - 2.0)
            } else {
                scale * d1 as f64
            }
        }
    };
    let s_anchor = (4.0 * mean_t).sqrt().max(2.0);
    let tol = 1e-11;
    let mut panels: Vec<f64> = vec![0.0];
    let mut brk: Vec<f64> = breakpoints
        .iter()
        .copied()
        .filter(|&t| t > 0.0 && t.is_finite())
        .map(|t| t.sqrt())
        .filter(|&s| s < s_anchor)
        .collect();
    brk.sort_by(|a, b| a.partial_cmp(b).unwrap());
    panels.extend(brk);
    panels.push(s_anchor);

    let mut total = 0.0;
    for w in panels.windows(2) {
        let v = integrate(&g, w[0], w[1], tol);
        if !v.is_finite() {
            return Err(Error::DivergentIntegral(
                "non-finite panel in radial moment".into(),
            ));
        }
        total += v;
    }
    // geometric tail extension; detects divergent moments
    let mut lo = s_anchor;
    let mut small_in_a_row = 0;
    let mut prev_seg = f64::INFINITY;
    let mut grew = 0usize;
    for _ in 0..600 {
        let hi = lo * 2.0;
        let seg = integrate(&g, lo, hi, tol);
        if !seg.is_finite() {
            return Err(Error::DivergentIntegral(
                "non-finite tail segment in radial moment".into(),
            ));
        }
        total += seg;
        let thresh = 1e-11 * total.abs().max(1.0);
        if seg.abs() <= thresh {
            small_in_a_row += 1;
            if small_in_a_row >= 2 {
                return Ok(RadialMoment {
                    value: total,
                    method: EvalMethod::Quadrature,
                });
            }
        } else {
            small_in_a_row = 0;
        }
        if seg.abs() >= prev_seg.abs() * 0.999 {
            grew += 1;
            if grew >= 12 {
                return Err(Error::DivergentIntegral(format!(
                    "tail segments of E[h(r^2)] are not decaying \
                     (last segment {seg:.3e} at r^2 ~ {:.3e})",
                    hi * hi
                )));
            }
        } else {
            grew = 0;
        }
        prev_seg = seg;
        lo = hi;
        if lo > 1e140 {
            return Err(Error::DivergentIntegral(
                "radial moment did not converge below r^2 = 1e280".into(),
            ));
        }
    }
    Err(Error::DivergentIntegral(
        "radial moment tail did not converge".into(),
    ))
}

/// Monte Carlo estimate of `E[h(r^2)]`; used by validation suites as an
/// independent cross-check of the quadrature path.
pub fn radial_moment_mc(
    dist: &RadialDistribution,
    h: impl Fn(f64) -> f64,
    draws: usize,
    seed: u64,
) -> (RadialMoment, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..draws {
        let v = h(dist.sample_r2(&mut rng));
        sum += v;
        sum_sq += v * v;
    }
    let mean = sum / draws as f64;
    let var = (sum_sq / draws as f64 - mean * mean).max(0.0);
    (
        RadialMoment {
            value: mean,
            method: EvalMethod::MonteCarlo,
        },
        (var / draws as f64).sqrt(),
    )
}
