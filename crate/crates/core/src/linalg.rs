//! Dense linear-algebra helpers: small Hermitian blocks, Taylor exponentials
//! with shared powers, Gauss-Legendre rules and the real embedding of
//! conjugation-covariant operators.

use nalgebra::{ComplexField, DMatrix};
use num_complex::Complex64 as C64;

pub type CMat = DMatrix<C64>;
pub type RMat = DMatrix<f64>;

pub const I: C64 = C64 { re: 0.0, im: 1.0 };

/// Spectral norm of a block with at most two rows and two columns.
pub fn block_norm(b: &CMat) -> f64 {
    match (b.nrows(), b.ncols()) {
        (1, _) | (_, 1) => b.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt(),
        (2, 2) => {
            let (a, bb, c, d) = (b[(0, 0)], b[(0, 1)], b[(1, 0)], b[(1, 1)]);
            // Gram matrix entries.
            let g11 = a.norm_sqr() + c.norm_sqr();
            let g22 = bb.norm_sqr() + d.norm_sqr();
            let g12 = a.conj() * bb + c.conj() * d;
            let half = 0.5 * (g11 + g22);
            let disc = (0.25 * (g11 - g22).powi(2) + g12.norm_sqr()).sqrt();
            (half + disc).max(0.0).sqrt()
        }
        _ => b.clone().singular_values().max(),
    }
}

/// Spectral decomposition of a 2x2 Hermitian matrix. Eigenvalues ascending;
/// eigenvectors are the columns of the returned unitary, each normalised so
/// that its first nonzero component is real and non-negative.
pub fn herm2_eig(h: &CMat) -> ([f64; 2], CMat) {
    let a = h[(0, 0)].re;
    let c = h[(1, 1)].re;
    let b = 0.5 * (h[(0, 1)] + h[(1, 0)].conj());
    let mean = 0.5 * (a + c);
    let half = 0.5 * (a - c);
    let r = (half * half + b.norm_sqr()).sqrt();
    let vals = [mean - r, mean + r];
    let mut q = CMat::zeros(2, 2);
    if b.norm() <= 1e-300 || b.norm() <= 1e-17 * r {
        if a <= c {
            q[(0, 0)] = C64::new(1.0, 0.0);
            q[(1, 1)] = C64::new(1.0, 0.0);
        } else {
            q[(1, 0)] = C64::new(1.0, 0.0);
            q[(0, 1)] = C64::new(1.0, 0.0);
        }
        return (vals, q);
    }
    for (col, sign) in [-1.0, 1.0].into_iter().enumerate() {
        // Two candidate null vectors of (h - lam); keep the better scaled one.
        // lam - a and lam - c are formed without going through lam, which
        // loses r when it is far below the diagonal.
        let v1 = [b, C64::new(-half + sign * r, 0.0)];
        let v2 = [C64::new(half + sign * r, 0.0), b.conj()];
        let n1 = (v1[0].norm_sqr() + v1[1].norm_sqr()).sqrt();
        let n2 = (v2[0].norm_sqr() + v2[1].norm_sqr()).sqrt();
        let (v, n) = if n1 >= n2 { (v1, n1) } else { (v2, n2) };
        let mut x = [v[0] / n, v[1] / n];
        let lead = if x[0].norm() > 1e-14 { x[0] } else { x[1] };
        let phase = lead.conj() / lead.norm();
        x[0] *= phase;
        x[1] *= phase;
        q[(0, col)] = x[0];
        q[(1, col)] = x[1];
    }
    (vals, q)
}

/// Gauss-Legendre nodes and weights on `[0, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = 0.5 * (1.0 - z);
        w[i] = 1.0 / ((1.0 - z * z) * dp * dp);
    }
    (x, w)
}

fn norm1<T: ComplexField>(a: &DMatrix<T>) -> f64
where
    T::RealField: Into<f64>,
{
    (0..a.ncols())
        .map(|j| a.column(j).iter().map(|z| z.clone().modulus().into()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Powers of `A / 2^p` for a Taylor exponential with scaling and squaring.
/// All exponentials `exp(s A)` with `|s| <= 1` reuse the same powers.
pub struct ExpPowers<T: ComplexField> {
    powers: Vec<DMatrix<T>>,
    squarings: u32,
}

impl<T: ComplexField + Copy> ExpPowers<T>
where
    T::RealField: Into<f64> + From<f64>,
{
    /// Truncates the series once the tail is below `tol` relative to 1.
    pub fn new(a: &DMatrix<T>, tol: f64) -> Self {
        let nrm = norm1(a);
        let mut squarings = 0u32;
        let mut scaled = nrm;
        while scaled > 0.5 {
            scaled *= 0.5;
            squarings += 1;
        }
        let factor = T::from_real(<T::RealField as From<f64>>::from(0.5f64.powi(squarings as i32)));
        let x = a * factor;
        let n = a.nrows();
        let mut powers = vec![DMatrix::<T>::identity(n, n)];
        let mut term = 1.0;
        let mut k = 0usize;
        while k < 40 {
            k += 1;
            term *= scaled / k as f64;
            let next = &powers[k - 1] * &x;
            powers.push(next);
            if term < tol {
                break;
            }
        }
        ExpPowers { powers, squarings }
    }

    pub fn degree(&self) -> usize {
        self.powers.len() - 1
    }

    /// `exp(s A)` for real `s` with `|s| <= 1`.
    pub fn exp(&self, s: f64) -> DMatrix<T> {
        let mut out = self.powers[0].clone();
        let mut coef = 1.0;
        for (k, p) in self.powers.iter().enumerate().skip(1) {
            coef *= s / k as f64;
            let c = T::from_real(<T::RealField as From<f64>>::from(coef));
            out.zip_apply(p, |o, v| *o += v * c);
        }
        for _ in 0..self.squarings {
            out = &out * &out;
        }
        out
    }
}

/// Matrix exponential by Taylor series with scaling and squaring.
pub fn expm<T: ComplexField + Copy>(a: &DMatrix<T>) -> DMatrix<T>
where
    T::RealField: Into<f64> + From<f64>,
{
    ExpPowers::new(a, 1e-17).exp(1.0)
}

/// `exp(A) v` by a scaled Taylor series on the vector only.
pub fn expm_apply(a: &CMat, v: &nalgebra::DVector<C64>) -> nalgebra::DVector<C64> {
    let nrm = norm1(a);
    let steps = nrm.ceil().max(1.0) as usize;
    let h = 1.0 / steps as f64;
    let mut x = v.clone();
    for _ in 0..steps {
        let mut term = x.clone();
        let mut acc = x.clone();
        for k in 1..60 {
            term = (a * &term) * C64::new(h / k as f64, 0.0);
            acc += &term;
            if term.norm() <= 1e-18 * acc.norm() {
                break;
            }
        }
        x = acc;
    }
    x
}

/// Reverses the column order (right multiplication by the flip `j -> -j`).
pub fn flip_cols(a: &CMat) -> CMat {
    let n = a.ncols();
    CMat::from_fn(a.nrows(), n, |i, j| a[(i, n - 1 - j)])
}

/// Reverses the row order (left multiplication by the flip).
pub fn flip_rows(a: &CMat) -> CMat {
    let n = a.nrows();
    CMat::from_fn(n, a.ncols(), |i, j| a[(n - 1 - i, j)])
}

/// Real matrix of the real-linear map `q -> A q + C conj(q)` acting on
/// `(Re q, Im q)`.
pub fn real_form(a: &CMat, c: &CMat) -> RMat {
    let n = a.nrows();
    let mut r = RMat::zeros(2 * n, 2 * n);
    for j in 0..n {
        for i in 0..n {
            let (x, y) = (a[(i, j)], c[(i, j)]);
            r[(i, j)] = x.re + y.re;
            r[(i, j + n)] = y.im - x.im;
            r[(i + n, j)] = x.im + y.im;
            r[(i + n, j + n)] = x.re - y.re;
        }
    }
    r
}

/// Inverse of [`real_form`].
pub fn split_real_form(r: &RMat) -> (CMat, CMat) {
    let n = r.nrows() / 2;
    let mut a = CMat::zeros(n, n);
    let mut c = CMat::zeros(n, n);
    for j in 0..n {
        for i in 0..n {
            let (r11, r12, r21, r22) = (r[(i, j)], r[(i, j + n)], r[(i + n, j)], r[(i + n, j + n)]);
            a[(i, j)] = C64::new(0.5 * (r11 + r22), 0.5 * (r21 - r12));
            c[(i, j)] = C64::new(0.5 * (r11 - r22), 0.5 * (r21 + r12));
        }
    }
    (a, c)
}

/// Largest entry modulus.
pub fn max_abs(a: &CMat) -> f64 {
    a.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = x.iter().zip(y).filter(|(a, b)| **a > 0.0 && **b > 0.0).map(|(a, b)| (a.ln(), b.ln())).collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}
