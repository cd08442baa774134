//! Conjugation of a Hamiltonian by `e^{iU}` through collocation on a uniform
//! grid in `theta`.
//!
//! With `K` the real matrix of `q -> iU q` and `Y = [K, iH] - i omega.d_theta U`
//! (all in real form) the transformed Hamiltonian is
//! `H + int_0^1 e^{sK} Y e^{-sK} ds`, which equals
//! `e^{iU} H e^{-iU} - int_0^1 e^{isU} (omega.d_theta U) e^{-isU} ds`.
//! Writing it as an increment keeps the large diagonal part of `H` out of the
//! cancellation.

use crate::lattice::Lattice;
use crate::linalg::{flip_cols, gauss_legendre, real_form, split_real_form, CMat, ExpPowers, RMat, I};
use crate::operators::{MatrixPair, QPOperator};
use crate::{Error, Result, C64};
use rayon::prelude::*;
use rustfft::{Fft, FftDirection, FftPlanner};
use std::sync::Arc;

/// Number of Gauss-Legendre nodes for the `s` integrals.
pub const GL_NODES: usize = 8;

/// Generators whose real form exceeds this 1-norm are refused: the fixed
/// quadrature would no longer be accurate to machine precision.
pub const MAX_GENERATOR_NORM: f64 = 3.0;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ThetaGrid {
    pub d: usize,
    pub points: usize,
}

impl ThetaGrid {
    /// `4L + 1` points per direction: products of two band-`L` factors are
    /// resolved and content up to `3L` cannot alias into `|l| <= L`.
    pub fn for_band(d: usize, l_max: i32) -> Self {
        ThetaGrid {
            d,
            points: (4 * l_max + 1) as usize,
        }
    }

    pub fn with_points(d: usize, points: usize) -> Self {
        ThetaGrid { d, points }
    }

    pub fn len(&self) -> usize {
        self.points.pow(self.d as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn theta(&self, mut p: usize) -> Vec<f64> {
        let h = 2.0 * std::f64::consts::PI / self.points as f64;
        (0..self.d)
            .map(|_| {
                let t = (p % self.points) as f64 * h;
                p /= self.points;
                t
            })
            .collect()
    }

    fn wrap(&self, l: &[i32]) -> usize {
        let g = self.points as i64;
        l.iter().rev().fold(0usize, |acc, &c| acc * self.points + (c as i64).rem_euclid(g) as usize)
    }

    fn unwrap(&self, mut q: usize) -> Vec<i32> {
        let g = self.points;
        (0..self.d)
            .map(|_| {
                let c = q % g;
                q /= g;
                if c <= (g - 1) / 2 {
                    c as i32
                } else {
                    c as i32 - g as i32
                }
            })
            .collect()
    }
}

struct Transformer {
    grid: ThetaGrid,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl Transformer {
    fn new(grid: &ThetaGrid) -> Self {
        let mut planner = FftPlanner::new();
        Transformer {
            grid: grid.clone(),
            fwd: planner.plan_fft(grid.points, FftDirection::Forward),
            inv: planner.plan_fft(grid.points, FftDirection::Inverse),
        }
    }

    fn run(&self, buf: &mut [C64], forward: bool) {
        let fft = if forward { &self.fwd } else { &self.inv };
        let g = self.grid.points;
        let mut line = vec![C64::new(0.0, 0.0); g];
        for axis in 0..self.grid.d {
            let stride = g.pow(axis as u32);
            if stride == 1 {
                fft.process(buf);
                continue;
            }
            let block = stride * g;
            for base in (0..buf.len()).step_by(block) {
                for off in 0..stride {
                    for (t, x) in line.iter_mut().enumerate() {
                        *x = buf[base + off + t * stride];
                    }
                    fft.process(&mut line);
                    for (t, x) in line.iter().enumerate() {
                        buf[base + off + t * stride] = *x;
                    }
                }
            }
        }
    }
}

/// Values of every matrix entry on the grid, entry-major.
struct GridField {
    n: usize,
    len: usize,
    data: Vec<C64>,
    live: Vec<bool>,
}

impl GridField {
    fn synthesize(op: &QPOperator, tr: &Transformer) -> Self {
        let n = op.n();
        let len = tr.grid.len();
        let mut data = vec![C64::new(0.0, 0.0); n * n * len];
        let mut live = vec![false; n * n];
        let nz = op.nonzero_slices();
        let pos: Vec<usize> = nz.iter().map(|&i| tr.grid.wrap(&op.lat.mode(i))).collect();
        for c in 0..n {
            for r in 0..n {
                let e = c * n + r;
                let buf = &mut data[e * len..(e + 1) * len];
                let mut any = false;
                for (&i, &q) in nz.iter().zip(&pos) {
                    let v = op.slices[i][(r, c)];
                    if v.re != 0.0 || v.im != 0.0 {
                        buf[q] = v;
                        any = true;
                    }
                }
                if any {
                    tr.run(buf, false);
                    live[e] = true;
                }
            }
        }
        GridField { n, len, data, live }
    }

    fn at(&self, p: usize) -> CMat {
        let n = self.n;
        CMat::from_fn(n, n, |r, c| {
            let e = c * n + r;
            if self.live[e] {
                self.data[e * self.len + p]
            } else {
                C64::new(0.0, 0.0)
            }
        })
    }

    fn put(&mut self, p: usize, m: &CMat) {
        let n = self.n;
        for c in 0..n {
            for r in 0..n {
                self.data[(c * n + r) * self.len + p] = m[(r, c)];
            }
        }
    }

    /// Forward transform back to coefficients on `lat`; returns the operator
    /// and the squared mass that fell outside the band.
    fn analyze(mut self, lat: &Lattice, m: usize, tr: &Transformer) -> (QPOperator, f64) {
        let n = self.n;
        let len = self.len;
        let mut op = QPOperator::zeros(lat.d, lat.l_max, m);
        let targets: Vec<Option<usize>> = (0..len).map(|q| lat.index(&tr.grid.unwrap(q))).collect();
        let scale = 1.0 / len as f64;
        let mut dropped = 0.0;
        for c in 0..n {
            for r in 0..n {
                let e = c * n + r;
                let buf = &mut self.data[e * len..(e + 1) * len];
                tr.run(buf, true);
                for (q, t) in targets.iter().enumerate() {
                    let v = buf[q] * scale;
                    match t {
                        Some(li) => op.slices[*li][(r, c)] = v,
                        None => dropped += v.norm_sqr(),
                    }
                }
            }
        }
        (op, dropped)
    }
}

/// Real form of `q -> i (A^d q + A^a conj(q)_vec)` where `conj(q)_vec = J conj(q)`.
pub fn real_generator(ad: &CMat, aa: &CMat) -> RMat {
    real_form(&(ad * I), &(flip_cols(aa) * I))
}

/// Inverse of [`real_generator`].
pub fn pair_from_real_generator(r: &RMat) -> (CMat, CMat) {
    let (a, c) = split_real_form(r);
    (a * (-I), flip_cols(&(c * (-I))))
}

/// Output of a conjugation.
#[derive(Clone, Debug)]
pub struct Conjugation {
    pub result: MatrixPair,
    /// `result - H`.
    pub increment: MatrixPair,
    /// `l^2` mass of the increment on grid modes with `|l| > L`.
    pub dropped_band: f64,
    /// Largest 1-norm of the real generator over the grid.
    pub generator_norm: f64,
    pub taylor_degree: usize,
}

/// Increment `int_0^1 e^{sK} Y e^{-sK} ds` at one grid point, in real form.
fn point_increment(k: &RMat, y: &RMat, nodes: &(Vec<f64>, Vec<f64>)) -> (RMat, usize) {
    let pw = ExpPowers::new(k, 1e-17);
    let mut acc = RMat::zeros(k.nrows(), k.ncols());
    for (s, w) in nodes.0.iter().zip(&nodes.1) {
        let ep = pw.exp(*s);
        let em = pw.exp(-*s);
        acc += (ep * y * em) * *w;
    }
    (acc, pw.degree())
}

/// `e^{iU} H e^{-iU} - int_0^1 e^{isU} (omega.d_theta U) e^{-isU} ds` for
/// operator matrices `H` and `U`, both carrying the pair structure.
pub fn conjugate_hamiltonian(h: &MatrixPair, u: &MatrixPair, omega: &[f64], grid: &ThetaGrid) -> Result<Conjugation> {
    h.diag.check_shape(&u.diag)?;
    if omega.len() != h.lat().d || grid.d != h.lat().d {
        return Err(Error::Truncation("frequency, grid and operator dimensions differ".into()));
    }
    if grid.points < h.lat().side() {
        return Err(Error::Truncation(format!(
            "grid with {} points cannot carry |l| <= {}",
            grid.points,
            h.lat().l_max
        )));
    }
    let tr = Transformer::new(grid);
    let udot = u.map(|o| o.dtheta(omega));
    let hd = GridField::synthesize(&h.diag, &tr);
    let ha = GridField::synthesize(&h.anti, &tr);
    let ud = GridField::synthesize(&u.diag, &tr);
    let ua = GridField::synthesize(&u.anti, &tr);
    let mut out_d = GridField::synthesize(&udot.diag, &tr);
    let mut out_a = GridField::synthesize(&udot.anti, &tr);
    out_d.live.iter_mut().for_each(|x| *x = true);
    out_a.live.iter_mut().for_each(|x| *x = true);

    let nodes = gauss_legendre(GL_NODES);
    let npts = grid.len();
    let chunk = 32usize;
    let mut gen_norm: f64 = 0.0;
    let mut degree = 0usize;
    for start in (0..npts).step_by(chunk) {
        let end = (start + chunk).min(npts);
        let results: Vec<(CMat, CMat, f64, usize)> = (start..end)
            .into_par_iter()
            .map(|p| {
                let k = real_generator(&ud.at(p), &ua.at(p));
                let rh = real_generator(&hd.at(p), &ha.at(p));
                let rud = real_generator(&out_d.at(p), &out_a.at(p));
                let y = &k * &rh - &rh * &k - rud;
                let knorm = (0..k.ncols()).map(|j| k.column(j).iter().map(|x| x.abs()).sum::<f64>()).fold(0.0, f64::max);
                let (acc, deg) = point_increment(&k, &y, &nodes);
                let (dd, da) = pair_from_real_generator(&acc);
                (dd, da, knorm, deg)
            })
            .collect();
        for (p, (dd, da, kn, deg)) in (start..end).zip(results) {
            out_d.put(p, &dd);
            out_a.put(p, &da);
            gen_norm = gen_norm.max(kn);
            degree = degree.max(deg);
        }
        if gen_norm > MAX_GENERATOR_NORM {
            return Err(Error::StepSize(gen_norm));
        }
    }
    drop((hd, ha, ud, ua));
    let lat = h.lat().clone();
    let (dd, drop_d) = out_d.analyze(&lat, h.m(), &tr);
    let (da, drop_a) = out_a.analyze(&lat, h.m(), &tr);
    let inc = MatrixPair { diag: dd, anti: da };
    Ok(Conjugation {
        result: h.plus(&inc)?,
        increment: inc,
        dropped_band: (drop_d + drop_a).sqrt(),
        generator_norm: gen_norm,
        taylor_degree: degree,
    })
}

/// Reference evaluation of the conjugated full `2n x 2n` Hamiltonian at one
/// `theta`, using complex exponentials of the full operator matrices.
pub fn conjugate_at_point(h: &MatrixPair, u: &MatrixPair, omega: &[f64], theta: &[f64], nodes: usize) -> CMat {
    let hf = h.full_at(theta);
    let uf = u.full_at(theta);
    let udf = u.map(|o| o.dtheta(omega)).full_at(theta);
    let ep = crate::linalg::expm(&(&uf * I));
    let em = crate::linalg::expm(&(&uf * (-I)));
    let mut out = &ep * hf * &em;
    let (x, w) = gauss_legendre(nodes);
    for (s, wt) in x.iter().zip(&w) {
        let a = crate::linalg::expm(&(&uf * (I * *s)));
        let b = crate::linalg::expm(&(&uf * (-I * *s)));
        out -= (a * &udf * b) * C64::new(*wt, 0.0);
    }
    out
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::linalg::max_abs;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    /// A structured pair with band 1 in time, entries of size `amp`.
    pub(crate) fn test_pair(d: usize, l_max: i32, m: usize, amp: f64, seed: u64) -> MatrixPair {
        let mut raw = MatrixPair::zeros(d, l_max, m);
        let mut s = seed;
        let mut next = || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        for (li, l) in raw.lat().clone().modes().enumerate() {
            if crate::lattice::sup_norm(&l) > 1 {
                continue;
            }
            for r in 0..raw.diag.n() {
                for col in 0..raw.diag.n() {
                    raw.diag.slices[li][(r, col)] = c(next(), next()) * amp;
                    raw.anti.slices[li][(r, col)] = c(next(), next()) * amp;
                }
            }
        }
        crate::kam::symmetrize(&raw)
    }

    #[test]
    fn symmetrized_pairs_have_structure() {
        let p = test_pair(1, 2, 3, 1.0, 7);
        assert!(p.structure_check().max() < 1e-15);
    }

    #[test]
    fn grid_wrap_roundtrip() {
        let g = ThetaGrid::with_points(2, 9);
        for q in 0..g.len() {
            assert_eq!(g.wrap(&g.unwrap(q)), q);
        }
    }

    #[test]
    fn real_generator_roundtrip() {
        let p = test_pair(1, 1, 2, 1.0, 3);
        let th = [0.4];
        let (ad, aa) = (p.diag.eval(&th), p.anti.eval(&th));
        let (bd, ba) = pair_from_real_generator(&real_generator(&ad, &aa));
        assert!(max_abs(&(bd - ad)) < 1e-15 && max_abs(&(ba - aa)) < 1e-15);
    }

    #[test]
    fn collocation_matches_pointwise_reference() {
        let (d, l_max, m) = (1, 3, 3);
        let h = {
            let mut h = test_pair(d, l_max, m, 0.3, 1);
            let z = h.lat().zero_index();
            for i in 0..h.diag.n() {
                let j = i as f64 - m as f64;
                h.diag.slices[z][(i, i)] += c((j * j + 1.0).sqrt(), 0.0);
            }
            h
        };
        let u = test_pair(d, l_max, m, 0.05, 2);
        let omega = [1.3];
        let conj = conjugate_hamiltonian(&h, &u, &omega, &ThetaGrid::for_band(d, l_max)).unwrap();
        assert!(conj.result.structure_check().max() < 1e-12);
        // Band of the exact result exceeds L, so compare at theta through the
        // dropped-band diagnostic.
        for &t in &[0.0, 0.9, 2.2] {
            let reference = conjugate_at_point(&h, &u, &omega, &[t], 12);
            let ours = conj.result.full_at(&[t]);
            let err = max_abs(&(reference - ours));
            assert!(err < 10.0 * conj.dropped_band + 1e-12, "theta {t}: {err} vs dropped {}", conj.dropped_band);
        }
    }

    #[test]
    fn constant_generator_is_a_similarity() {
        // U independent of theta: spectrum of the full matrix preserved.
        let (d, l_max, m) = (1, 1, 3);
        let mut h = MatrixPair::zeros(d, l_max, m);
        let z = h.lat().zero_index();
        for i in 0..h.diag.n() {
            let j = i as f64 - m as f64;
            h.diag.slices[z][(i, i)] = c((j * j + 2.0).sqrt(), 0.0);
        }
        let mut u = test_pair(d, l_max, m, 0.2, 5);
        for li in 0..u.lat().len() {
            if li != z {
                u.diag.slices[li].fill(c(0.0, 0.0));
                u.anti.slices[li].fill(c(0.0, 0.0));
            }
        }
        let out = conjugate_hamiltonian(&h, &u, &[1.7], &ThetaGrid::for_band(d, l_max)).unwrap();
        let spec = |m: CMat| {
            let mut v: Vec<f64> = m.complex_eigenvalues_sorted();
            v.sort_by(|a, b| a.partial_cmp(b).unwrap());
            v
        };
        let a = spec(h.full_slice(z));
        let b = spec(out.result.full_slice(z));
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-9, "{x} {y}");
        }
    }

    trait Spectrum {
        fn complex_eigenvalues_sorted(self) -> Vec<f64>;
    }

    impl Spectrum for CMat {
        fn complex_eigenvalues_sorted(self) -> Vec<f64> {
            let schur = nalgebra::Schur::new(self);
            let (_, t) = schur.unpack();
            (0..t.nrows()).map(|i| t[(i, i)].re).collect()
        }
    }

    #[test]
    fn oversized_generator_is_refused() {
        let h = test_pair(1, 1, 2, 1.0, 9);
        let u = test_pair(1, 1, 2, 40.0, 4);
        let r = conjugate_hamiltonian(&h, &u, &[1.1], &ThetaGrid::for_band(1, 1));
        assert!(matches!(r, Err(Error::StepSize(_))));
    }
}
