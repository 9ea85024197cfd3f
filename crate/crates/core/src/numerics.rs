//! Scalar statistical primitives shared by all estimators: chi-square
//! distribution functions and (elliptical) kurtosis estimation.
//!
//! The chi-square cdf goes through the regularized lower incomplete gamma
//! function with the usual series / continued-fraction split; the quantile
//! inverts it with a safeguarded Newton iteration. Kurtosis uses absolute
//! moments about zero throughout: the observation model fixes E[x] = 0, so
//! centering would only add noise.

use crate::{Error, Field, Result, Scalar};
use ndarray::ArrayView2;

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

/// Natural log of the gamma function (Lanczos, g = 7).
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = LANCZOS[0];
    for (i, &c) in LANCZOS.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + LANCZOS_G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Regularized lower incomplete gamma P(a, x).
fn gamma_p(a: f64, x: f64) -> f64 {
    debug_assert!(a > 0.0 && x >= 0.0);
    if x == 0.0 {
        return 0.0;
    }
    if x < a + 1.0 {
        // series expansion around 0
        let mut ap = a;
        let mut term = 1.0 / a;
        let mut sum = term;
        for _ in 0..500 {
            ap += 1.0;
            term *= x / ap;
            sum += term;
            if term.abs() < sum.abs() * 1e-16 {
                break;
            }
        }
        sum * (a * x.ln() - x - ln_gamma(a)).exp()
    } else {
        // modified Lentz continued fraction for Q(a, x)
        let tiny = 1e-300;
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..500 {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < tiny {
                d = tiny;
            }
            c = b + an / c;
            if c.abs() < tiny {
                c = tiny;
            }
            d = 1.0 / d;
            let del = d * c;
            h *= del;
            if (del - 1.0).abs() < 1e-16 {
                break;
            }
        }
        let q = (a * x.ln() - x - ln_gamma(a)).exp() * h;
        1.0 - q
    }
}

/// Chi-square cdf `F_{chi2_k}(x)`.
pub fn chi2_cdf(x: f64, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::Domain("chi-square d.o.f. must be >= 1".into()));
    }
    if !(x >= 0.0) {
        return Err(Error::Domain(format!("chi-square cdf needs x >= 0, got {x}")));
    }
    Ok(gamma_p(0.5 * k as f64, 0.5 * x).clamp(0.0, 1.0))
}

/// Chi-square density.
pub fn chi2_pdf(x: f64, k: usize) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let a = 0.5 * k as f64;
    ((a - 1.0) * x.ln() - 0.5 * x - a * std::f64::consts::LN_2 - ln_gamma(a)).exp()
}

/// Chi-square quantile: `x` with `chi2_cdf(x, k) = q`.
pub fn chi2_quantile(q: f64, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::Domain("chi-square d.o.f. must be >= 1".into()));
    }
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::Domain(format!(
            "chi-square quantile needs q in (0,1), got {q}"
        )));
    }
    let kf = k as f64;
    let mut lo = 0.0f64;
    let mut hi = kf + 10.0 * (2.0 * kf).sqrt() + 10.0;
    while chi2_cdf(hi, k)? < q {
        hi *= 2.0;
        if hi > 1e300 {
            return Err(Error::Domain("chi-square quantile bracket overflow".into()));
        }
    }
    // Wilson-Hilferty start, then safeguarded Newton
    let mut x = kf * (1.0 - 2.0 / (9.0 * kf)).powi(3);
    x = x.clamp(lo + 1e-12, hi);
    for _ in 0..200 {
        let f = chi2_cdf(x, k)? - q;
        if f > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        if f.abs() < 1e-13 {
            break;
        }
        let d = chi2_pdf(x, k);
        let mut step_ok = false;
        if d > 0.0 {
            let xn = x - f / d;
            if xn > lo && xn < hi {
                x = xn;
                step_ok = true;
            }
        }
        if !step_ok {
            x = 0.5 * (lo + hi);
        }
        if hi - lo < 1e-13 * (1.0 + hi) {
            break;
        }
    }
    Ok(x)
}

/// Elliptical kurtosis estimate produced by [`elliptical_kurtosis`].
#[derive(Clone, Debug)]
pub struct KurtosisEstimate {
    /// Clipped estimate; bounded below by the theoretical elliptical minimum
    /// plus 1e-6 so that psi_1 = 1 + kappa stays strictly positive.
    pub kappa_hat: f64,
    /// Per-column sample excess kurtosis (pre-division, pre-clip).
    pub per_column_kurtosis: Vec<f64>,
    pub field: Field,
}

impl KurtosisEstimate {
    /// Lower clip bound for the given field and dimension.
    pub fn lower_bound(field: Field, p: usize) -> f64 {
        match field {
            Field::Real => -2.0 / (p as f64 + 2.0) + 1e-6,
            Field::Complex => -1.0 / (p as f64 + 1.0) + 1e-6,
        }
    }
}

/// Sample excess kurtosis of one coordinate, moments taken about zero.
///
/// Real case: `m4/m2^2 - 3`; complex case: `m4/m2^2 - 2` with absolute
/// moments, so that a circular complex Gaussian gives 0.
pub fn sample_kurtosis<T: Scalar>(column: &[T]) -> Result<f64> {
    if column.len() < 4 {
        return Err(Error::DegenerateInput(format!(
            "kurtosis needs at least 4 samples, got {}",
            column.len()
        )));
    }
    let n = column.len() as f64;
    let mut m2 = 0.0;
    let mut m4 = 0.0;
    for &v in column {
        let a2 = v.abs_sq();
        m2 += a2;
        m4 += a2 * a2;
    }
    m2 /= n;
    m4 /= n;
    if m2 == 0.0 {
        return Err(Error::DegenerateInput("all-zero column in kurtosis".into()));
    }
    let excess = match T::FIELD {
        Field::Real => 3.0,
        Field::Complex => 2.0,
    };
    Ok(m4 / (m2 * m2) - excess)
}

/// Elliptical kurtosis estimate: mean of the marginal sample kurtosis
/// statistics scaled by 1/3 (real) or 1/2 (complex), clipped to the
/// theoretical lower bound.
pub fn elliptical_kurtosis<T: Scalar>(x: &ArrayView2<'_, T>) -> Result<KurtosisEstimate> {
    let (n, p) = x.dim();
    if n < 4 {
        return Err(Error::DegenerateInput(format!(
            "elliptical kurtosis needs n >= 4, got {n}"
        )));
    }
    let mut per_column = Vec::with_capacity(p);
    for col in x.columns() {
        let v: Vec<T> = col.iter().copied().collect();
        per_column.push(sample_kurtosis(&v)?);
    }
    let divisor = match T::FIELD {
        Field::Real => 3.0,
        Field::Complex => 2.0,
    };
    let raw = per_column.iter().sum::<f64>() / (p as f64) / divisor;
    let bound = KurtosisEstimate::lower_bound(T::FIELD, p);
    Ok(KurtosisEstimate {
        kappa_hat: raw.max(bound),
        per_column_kurtosis: per_column,
        field: T::FIELD,
    })
}

/// Composite Simpson integration with panel doubling and a Richardson
/// correction, converging on relative change.
pub(crate) fn integrate<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, rel_tol: f64) -> f64 {
    if !(b > a) {
        return 0.0;
    }
    let simpson_n = |n: usize| -> f64 {
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            let x = a + i as f64 * h;
            s += f(x) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    };
    let mut n = 16;
    let mut prev = simpson_n(n);
    loop {
        n *= 2;
        let cur = simpson_n(n);
        let err = (cur - prev).abs();
        if err <= rel_tol * cur.abs().max(1e-30) || n >= (1 << 15) {
            return cur + (cur - prev) / 15.0;
        }
        prev = cur;
    }
}

/// Brent's method on a bracketing interval.
pub(crate) fn brent_root<F: Fn(f64) -> f64>(
    f: &F,
    mut a: f64,
    mut b: f64,
    tol: f64,
    max_iter: usize,
) -> Option<f64> {
    let mut fa = f(a);
    let mut fb = f(b);
    if fa * fb > 0.0 {
        return None;
    }
    if fa.abs() < fb.abs() {
        std::mem::swap(&mut a, &mut b);
        std::mem::swap(&mut fa, &mut fb);
    }
    let mut c = a;
    let mut fc = fa;
    let mut d = b - a;
    let mut mflag = true;
    for _ in 0..max_iter {
        if fb == 0.0 || (b - a).abs() < tol * (1.0 + b.abs()) {
            return Some(b);
        }
        let mut s = if fa != fc && fb != fc {
            a * fb * fc / ((fa - fb) * (fa - fc))
                + b * fa * fc / ((fb - fa) * (fb - fc))
                + c * fa * fb / ((fc - fa) * (fc - fb))
        } else {
            b - fb * (b - a) / (fb - fa)
        };
        let lo = (3.0 * a + b) / 4.0;
        let cond = !((lo.min(b) < s && s < lo.max(b))
            || (mflag && (s - b).abs() < 0.5 * (b - c).abs())
            || (!mflag && (s - b).abs() < 0.5 * d.abs()));
        if cond {
            s = 0.5 * (a + b);
            mflag = true;
        } else {
            mflag = false;
        }
        let fs = f(s);
        d = c - b;
        c = b;
        fc = fb;
        if fa * fs < 0.0 {
            b = s;
            fb = fs;
        } else {
            a = s;
            fa = fs;
        }
        if fa.abs() < fb.abs() {
            std::mem::swap(&mut a, &mut b);
            std::mem::swap(&mut fa, &mut fb);
        }
    }
    Some(b)
}
