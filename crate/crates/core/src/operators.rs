//! Quasi-periodic linear operators on the truncated space `span{e^{ijx} : |j| <= M}`
//! stored by their time-Fourier coefficients, and the 2x2 operator matrices
//! acting on `(q, conj q)`.

use crate::lattice::{block_rows, bracket, bracket_lj, sup_norm, Lattice};
use crate::linalg::{flip_cols, flip_rows, max_abs, CMat, I};
use crate::{Error, Result, C64};
use serde::{Deserialize, Serialize};

/// `A(theta) = sum_l A_hat(l) e^{i l.theta}`, each slice a `(2M+1)^2` matrix
/// indexed by `(k' + M, j + M)`.
#[derive(Clone, Debug, PartialEq)]
pub struct QPOperator {
    pub lat: Lattice,
    pub m: usize,
    pub slices: Vec<CMat>,
}

impl QPOperator {
    pub fn zeros(d: usize, l_max: i32, m: usize) -> Self {
        let lat = Lattice::new(d, l_max);
        let n = 2 * m + 1;
        let slices = vec![CMat::zeros(n, n); lat.len()];
        QPOperator { lat, m, slices }
    }

    /// Time-independent diagonal operator `e^{ijx} -> f(j) e^{ijx}`.
    pub fn diagonal(d: usize, l_max: i32, m: usize, f: impl Fn(i64) -> C64) -> Self {
        let mut op = Self::zeros(d, l_max, m);
        let z = op.lat.zero_index();
        for i in 0..op.n() {
            op.slices[z][(i, i)] = f(i as i64 - m as i64);
        }
        op
    }

    pub fn identity(d: usize, l_max: i32, m: usize) -> Self {
        Self::diagonal(d, l_max, m, |_| C64::new(1.0, 0.0))
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.lat.d, self.lat.l_max, self.m)
    }

    pub fn n(&self) -> usize {
        2 * self.m + 1
    }

    pub fn d(&self) -> usize {
        self.lat.d
    }

    pub fn slice(&self, l: &[i32]) -> Option<&CMat> {
        self.lat.index(l).map(|i| &self.slices[i])
    }

    pub fn slice_mut(&mut self, l: &[i32]) -> Option<&mut CMat> {
        self.lat.index(l).map(move |i| &mut self.slices[i])
    }

    /// Entry `[A_hat(l)]^{k'}_j`; zero outside the truncation.
    pub fn entry(&self, l: &[i32], kp: i64, j: i64) -> C64 {
        let m = self.m as i64;
        if kp.abs() > m || j.abs() > m {
            return C64::new(0.0, 0.0);
        }
        match self.slice(l) {
            Some(s) => s[((kp + m) as usize, (j + m) as usize)],
            None => C64::new(0.0, 0.0),
        }
    }

    pub fn check_shape(&self, other: &Self) -> Result<()> {
        if self.lat != other.lat || self.m != other.m {
            return Err(Error::Truncation(format!(
                "operators with (d, L, M) = ({}, {}, {}) and ({}, {}, {})",
                self.lat.d, self.lat.l_max, self.m, other.lat.d, other.lat.l_max, other.m
            )));
        }
        Ok(())
    }

    pub fn plus(&self, other: &Self) -> Result<Self> {
        self.check_shape(other)?;
        let mut out = self.clone();
        out.axpy(C64::new(1.0, 0.0), other);
        Ok(out)
    }

    pub fn minus(&self, other: &Self) -> Result<Self> {
        self.check_shape(other)?;
        let mut out = self.clone();
        out.axpy(C64::new(-1.0, 0.0), other);
        Ok(out)
    }

    /// `self += c * other`; shapes must agree.
    pub fn axpy(&mut self, c: C64, other: &Self) {
        assert_eq!(self.lat, other.lat);
        assert_eq!(self.m, other.m);
        for (a, b) in self.slices.iter_mut().zip(&other.slices) {
            a.zip_apply(b, |x, y| *x += c * y);
        }
    }

    pub fn scaled(&self, c: C64) -> Self {
        let mut out = self.clone();
        for s in &mut out.slices {
            *s *= c;
        }
        out
    }

    /// Composition `A B`, keeping `|l| <= L`.
    pub fn compose(&self, other: &Self) -> Result<Self> {
        self.check_shape(other)?;
        let mut out = self.zeros_like();
        let nz_a = self.nonzero_slices();
        let nz_b = other.nonzero_slices();
        let mut buf = vec![0i32; self.d()];
        for &ia in &nz_a {
            let la = self.lat.mode(ia);
            for &ib in &nz_b {
                let lb = other.lat.mode(ib);
                for (k, b) in buf.iter_mut().enumerate() {
                    *b = la[k] + lb[k];
                }
                if let Some(io) = out.lat.index(&buf) {
                    out.slices[io] += &self.slices[ia] * &other.slices[ib];
                }
            }
        }
        Ok(out)
    }

    /// Adjoint: `(A*)_hat(l) = A_hat(-l)^dagger`.
    pub fn adjoint(&self) -> Self {
        let mut out = self.zeros_like();
        for i in 0..self.lat.len() {
            out.slices[i] = self.slices[self.lat.neg_index(i)].adjoint();
        }
        out
    }

    /// Conjugate operator `conj(A) u = conj(A conj(u))`:
    /// `conj(A)_hat(l) = J conj(A_hat(-l)) J`.
    pub fn conj_op(&self) -> Self {
        let mut out = self.zeros_like();
        for i in 0..self.lat.len() {
            let s = self.slices[self.lat.neg_index(i)].map(|z| z.conj());
            out.slices[i] = flip_rows(&flip_cols(&s));
        }
        out
    }

    /// `omega . d_theta A`.
    pub fn dtheta(&self, omega: &[f64]) -> Self {
        let mut out = self.clone();
        for (i, s) in out.slices.iter_mut().enumerate() {
            let w = Lattice::dot(omega, &self.lat.mode(i));
            *s *= I * w;
        }
        out
    }

    /// Keeps the modes `|l| < n` (sup norm).
    pub fn project_low(&self, n: i32) -> Self {
        let mut out = self.clone();
        for (i, s) in out.slices.iter_mut().enumerate() {
            if sup_norm(&self.lat.mode(i)) >= n {
                s.fill(C64::new(0.0, 0.0));
            }
        }
        out
    }

    /// Keeps the modes `|l| >= n`.
    pub fn project_high(&self, n: i32) -> Self {
        let mut out = self.clone();
        for (i, s) in out.slices.iter_mut().enumerate() {
            if sup_norm(&self.lat.mode(i)) < n {
                s.fill(C64::new(0.0, 0.0));
            }
        }
        out
    }

    /// `<D>^sigma A` with `<D> e^{ijx} = <j> e^{ijx}`.
    pub fn left_weight(&self, sigma: f64) -> Self {
        let mut out = self.clone();
        let m = self.m as i64;
        for s in &mut out.slices {
            for i in 0..s.nrows() {
                let w = bracket(i as i64 - m).powf(sigma);
                s.row_mut(i).iter_mut().for_each(|z| *z *= w);
            }
        }
        out
    }

    /// `A <D>^sigma`.
    pub fn right_weight(&self, sigma: f64) -> Self {
        let mut out = self.clone();
        let m = self.m as i64;
        for s in &mut out.slices {
            for j in 0..s.ncols() {
                let w = bracket(j as i64 - m).powf(sigma);
                s.column_mut(j).iter_mut().for_each(|z| *z *= w);
            }
        }
        out
    }

    /// Block `[A_hat(l)]^beta_alpha` (rows `|k'| = beta`, columns `|j| = alpha`).
    pub fn block(&self, l_idx: usize, beta: usize, alpha: usize) -> CMat {
        let rows = block_rows(beta, self.m);
        let cols = block_rows(alpha, self.m);
        let s = &self.slices[l_idx];
        CMat::from_fn(rows.len(), cols.len(), |a, b| s[(rows[a], cols[b])])
    }

    pub fn set_block(&mut self, l_idx: usize, beta: usize, alpha: usize, b: &CMat) {
        let rows = block_rows(beta, self.m);
        let cols = block_rows(alpha, self.m);
        let s = &mut self.slices[l_idx];
        for (a, &r) in rows.iter().enumerate() {
            for (c, &col) in cols.iter().enumerate() {
                s[(r, col)] = b[(a, c)];
            }
        }
    }

    /// Column profile `alpha -> (sum_{l, beta} <l, beta - alpha>^{2s} |[A_hat(l)]^beta_alpha|^2)^{1/2}`.
    pub fn decay_profile(&self, s: f64) -> Vec<f64> {
        let m = self.m;
        let mut acc = vec![0.0; m + 1];
        for (li, sl) in self.slices.iter().enumerate() {
            if sl.iter().all(|z| z.re == 0.0 && z.im == 0.0) {
                continue;
            }
            let l = self.lat.mode(li);
            #[allow(clippy::needless_range_loop)]
            for alpha in 0..=m {
                let cols = block_rows(alpha, m);
                for beta in 0..=m {
                    let rows = block_rows(beta, m);
                    let nb = small_block_norm(sl, &rows, &cols);
                    if nb > 0.0 {
                        let w = bracket_lj(&l, beta as i64 - alpha as i64).powf(2.0 * s);
                        acc[alpha] += w * nb * nb;
                    }
                }
            }
        }
        acc.into_iter().map(f64::sqrt).collect()
    }

    /// Block-decay norm `|A|_s`.
    pub fn decay_norm(&self, s: f64) -> f64 {
        self.decay_profile(s).into_iter().fold(0.0, f64::max)
    }

    /// `A(theta)`.
    pub fn eval(&self, theta: &[f64]) -> CMat {
        let n = self.n();
        let mut out = CMat::zeros(n, n);
        for i in self.nonzero_slices() {
            let ph = Lattice::dot(theta, &self.lat.mode(i));
            let e = C64::from_polar(1.0, ph);
            out.zip_apply(&self.slices[i], |o, v| *o += e * v);
        }
        out
    }

    pub fn nonzero_slices(&self) -> Vec<usize> {
        (0..self.lat.len())
            .filter(|&i| self.slices[i].iter().any(|z| z.re != 0.0 || z.im != 0.0))
            .collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.slices.iter().flat_map(|s| s.iter()).map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// `max_l |A_hat(l) - A_hat(-l)^dagger|`.
    pub fn hermitian_defect(&self) -> f64 {
        (0..self.lat.len())
            .map(|i| max_abs(&(&self.slices[i] - self.slices[self.lat.neg_index(i)].adjoint())))
            .fold(0.0, f64::max)
    }

    /// `max_l |A_hat(l) - J conj(A_hat(-l)) J|`: zero for operators mapping
    /// real functions to real functions.
    pub fn reality_defect(&self) -> f64 {
        let c = self.conj_op();
        (0..self.lat.len()).map(|i| max_abs(&(&self.slices[i] - &c.slices[i]))).fold(0.0, f64::max)
    }

    /// Largest `|l|` carrying a nonzero slice.
    pub fn band(&self) -> i32 {
        self.nonzero_slices().into_iter().map(|i| sup_norm(&self.lat.mode(i))).max().unwrap_or(0)
    }
}

/// Spectral norm of the sub-block of `s` on the given rows and columns.
pub fn small_block_norm(s: &CMat, rows: &[usize], cols: &[usize]) -> f64 {
    if rows.len() == 2 && cols.len() == 2 {
        let a = s[(rows[0], cols[0])];
        let b = s[(rows[0], cols[1])];
        let c = s[(rows[1], cols[0])];
        let d = s[(rows[1], cols[1])];
        let g11 = a.norm_sqr() + c.norm_sqr();
        let g22 = b.norm_sqr() + d.norm_sqr();
        let g12 = a.conj() * b + c.conj() * d;
        let half = 0.5 * (g11 + g22);
        let disc = (0.25 * (g11 - g22).powi(2) + g12.norm_sqr()).sqrt();
        return (half + disc).max(0.0).sqrt();
    }
    let mut acc = 0.0;
    for &r in rows {
        for &c in cols {
            acc += s[(r, c)].norm_sqr();
        }
    }
    acc.sqrt()
}

/// Norms of a single operator with `<D>` weights.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct WeightedNorms {
    pub left: f64,
    pub right: f64,
    pub conjugated: [f64; 3],
    /// `|<D>^rho A|_s + |A <D>^rho|_s + sum_{sigma in {rho, -rho, 0}} |<D>^sigma A <D>^-sigma|_s`.
    pub ms_norm: f64,
}

pub fn weighted_norms(a: &QPOperator, s: f64, rho: f64) -> WeightedNorms {
    let left = a.left_weight(rho).decay_norm(s);
    let right = a.right_weight(rho).decay_norm(s);
    let mut conjugated = [0.0; 3];
    for (k, sig) in [rho, -rho, 0.0].into_iter().enumerate() {
        conjugated[k] = if sig == 0.0 {
            a.decay_norm(s)
        } else {
            a.left_weight(sig).right_weight(-sig).decay_norm(s)
        };
    }
    WeightedNorms {
        left,
        right,
        conjugated,
        ms_norm: left + right + conjugated.iter().sum::<f64>(),
    }
}

/// The operator matrix `[[A^d, A^a], [-conj A^a, -conj A^d]]` acting on
/// `(q, conj q)`. Only the first row is stored.
#[derive(Clone, Debug, PartialEq)]
pub struct MatrixPair {
    pub diag: QPOperator,
    pub anti: QPOperator,
}

/// Defects of the structure required of Hamiltonians and generators: the
/// diagonal part self-adjoint and the anti-diagonal part satisfying
/// `(A^a)* = conj(A^a)`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct StructureReport {
    pub diag_violation: f64,
    pub anti_violation: f64,
}

impl StructureReport {
    pub fn max(&self) -> f64 {
        self.diag_violation.max(self.anti_violation)
    }
}

/// `N_{s}(rho, o)` norm pieces of a pair.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct PairNorms {
    pub diag: WeightedNorms,
    pub anti: WeightedNorms,
    pub total: f64,
}

impl MatrixPair {
    pub fn new(diag: QPOperator, anti: QPOperator) -> Result<Self> {
        diag.check_shape(&anti)?;
        Ok(MatrixPair { diag, anti })
    }

    pub fn zeros(d: usize, l_max: i32, m: usize) -> Self {
        MatrixPair {
            diag: QPOperator::zeros(d, l_max, m),
            anti: QPOperator::zeros(d, l_max, m),
        }
    }

    pub fn zeros_like(&self) -> Self {
        MatrixPair {
            diag: self.diag.zeros_like(),
            anti: self.anti.zeros_like(),
        }
    }

    pub fn plus(&self, o: &Self) -> Result<Self> {
        Ok(MatrixPair {
            diag: self.diag.plus(&o.diag)?,
            anti: self.anti.plus(&o.anti)?,
        })
    }

    pub fn minus(&self, o: &Self) -> Result<Self> {
        Ok(MatrixPair {
            diag: self.diag.minus(&o.diag)?,
            anti: self.anti.minus(&o.anti)?,
        })
    }

    pub fn scaled(&self, c: C64) -> Self {
        MatrixPair {
            diag: self.diag.scaled(c),
            anti: self.anti.scaled(c),
        }
    }

    pub fn map(&self, f: impl Fn(&QPOperator) -> QPOperator) -> Self {
        MatrixPair {
            diag: f(&self.diag),
            anti: f(&self.anti),
        }
    }

    pub fn m(&self) -> usize {
        self.diag.m
    }

    pub fn lat(&self) -> &Lattice {
        &self.diag.lat
    }

    pub fn structure_check(&self) -> StructureReport {
        let diag_violation = self.diag.hermitian_defect();
        // (A^a)* = conj(A^a) at every l reads A_hat(l)^dagger = J conj(A_hat(l)) J.
        let anti_violation = self
            .anti
            .slices
            .iter()
            .map(|s| max_abs(&(s.adjoint() - flip_rows(&flip_cols(&s.map(|z| z.conj()))))))
            .fold(0.0, f64::max);
        StructureReport {
            diag_violation,
            anti_violation,
        }
    }

    /// `|||A|||_{s, rho, o}`.
    pub fn norms(&self, s: f64, rho: f64, o: f64) -> PairNorms {
        let diag = weighted_norms(&self.diag, s, rho);
        let anti = weighted_norms(&self.anti, s, o);
        let anti_total = if o == 0.0 {
            anti.left + anti.right + anti.conjugated[2]
        } else {
            anti.ms_norm
        };
        PairNorms {
            diag,
            anti,
            total: diag.ms_norm + anti_total,
        }
    }

    pub fn triple_norm(&self, s: f64, rho: f64, o: f64) -> f64 {
        self.norms(s, rho, o).total
    }

    /// Fourier coefficient of the full `2n x 2n` operator matrix.
    pub fn full_slice(&self, l_idx: usize) -> CMat {
        let n = self.diag.n();
        let neg = self.diag.lat.neg_index(l_idx);
        let cflip = |s: &CMat| flip_rows(&flip_cols(&s.map(|z| z.conj())));
        let mut out = CMat::zeros(2 * n, 2 * n);
        out.view_mut((0, 0), (n, n)).copy_from(&self.diag.slices[l_idx]);
        out.view_mut((0, n), (n, n)).copy_from(&self.anti.slices[l_idx]);
        out.view_mut((n, 0), (n, n)).copy_from(&(-cflip(&self.anti.slices[neg])));
        out.view_mut((n, n), (n, n)).copy_from(&(-cflip(&self.diag.slices[neg])));
        out
    }

    /// The full operator matrix at `theta`.
    pub fn full_at(&self, theta: &[f64]) -> CMat {
        let n = self.diag.n();
        let ad = self.diag.eval(theta);
        let aa = self.anti.eval(theta);
        let cflip = |s: &CMat| flip_rows(&flip_cols(&s.map(|z| z.conj())));
        let mut out = CMat::zeros(2 * n, 2 * n);
        out.view_mut((0, 0), (n, n)).copy_from(&ad);
        out.view_mut((0, n), (n, n)).copy_from(&aa);
        out.view_mut((n, 0), (n, n)).copy_from(&(-cflip(&aa)));
        out.view_mut((n, n), (n, n)).copy_from(&(-cflip(&ad)));
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.diag.max_abs().max(self.anti.max_abs())
    }
}
