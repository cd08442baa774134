//! The homological equation
//! `i[U, H] - omega.d_theta U + Pi_N P - [P] = 0`
//! solved block by block in Fourier space.

use super::sylvester::solve_sylvester_eig;
use super::BlockDiagHamiltonian;
use crate::lattice::{sup_norm, Lattice};
use crate::linalg::{flip_cols, flip_rows, I};
use crate::operators::MatrixPair;
use crate::{Error, Result, C64};

#[derive(Clone, Debug)]
pub struct HomologicalSolution {
    pub u: MatrixPair,
    /// Smallest Sylvester divisor actually used.
    pub min_divisor: f64,
}

/// The time-independent block-diagonal part `[P]` of a pair, as a pair.
pub fn floor_part(p: &MatrixPair) -> MatrixPair {
    let mut out = p.zeros_like();
    let z = p.lat().zero_index();
    for a in 0..=p.m() {
        out.diag.set_block(z, a, a, &p.diag.block(z, a, a));
    }
    out
}

/// Solves for `U` on `|l| < n`. Modes `(0, alpha, alpha)` of the diagonal part
/// are left to `[P]`.
pub fn solve_homological(h: &BlockDiagHamiltonian, p: &MatrixPair, omega: &[f64], n: i32, floor: f64) -> Result<HomologicalSolution> {
    let lat = p.lat().clone();
    if omega.len() != lat.d || h.m != p.m() {
        return Err(Error::Truncation("homological equation: shapes differ".into()));
    }
    let m = p.m();
    let z = lat.zero_index();
    let eig: Vec<_> = (0..=m).map(|a| h.eigen(a).clone()).collect();
    let eig_bar: Vec<_> = (0..=m).map(|a| super::sylvester::block_eig(&h.conj_block(a))).collect();
    let mut u = p.zeros_like();
    let mut min_div = f64::INFINITY;
    for li in 0..lat.len() {
        let l = lat.mode(li);
        if sup_norm(&l) >= n {
            continue;
        }
        let wl = Lattice::dot(omega, &l);
        let pd = &p.diag.slices[li];
        let pa = &p.anti.slices[li];
        let live_d = pd.iter().any(|z| z.re != 0.0 || z.im != 0.0);
        let live_a = pa.iter().any(|z| z.re != 0.0 || z.im != 0.0);
        for beta in 0..=m {
            for alpha in 0..=m {
                if live_d && !(li == z && alpha == beta) {
                    let y = p.diag.block(li, beta, alpha) * (-I);
                    let (x, md) = solve_sylvester_eig(wl, &eig[beta], &eig[alpha], &y, 1.0, floor)?;
                    min_div = min_div.min(md);
                    u.diag.set_block(li, beta, alpha, &x);
                }
                if live_a {
                    let y = p.anti.block(li, beta, alpha) * (-I);
                    let (x, md) = solve_sylvester_eig(wl, &eig[beta], &eig_bar[alpha], &y, -1.0, floor)?;
                    min_div = min_div.min(md);
                    u.anti.set_block(li, beta, alpha, &x);
                }
            }
        }
    }
    Ok(HomologicalSolution { u, min_divisor: min_div })
}

/// The two residual operators of the homological equation.
pub fn homological_residual(h: &BlockDiagHamiltonian, p: &MatrixPair, u: &MatrixPair, omega: &[f64], n: i32) -> MatrixPair {
    let lat = p.lat();
    let hm = h.to_operator(lat.d, lat.l_max).slices[lat.zero_index()].clone();
    let hbar = flip_rows(&flip_cols(&hm.map(|z| z.conj())));
    let mut r = p.zeros_like();
    let target = p.minus(&floor_part(p)).expect("same shape").map(|o| o.project_low(n));
    for li in 0..lat.len() {
        let wl = C64::new(0.0, Lattice::dot(omega, &lat.mode(li)));
        let ud = &u.diag.slices[li];
        let ua = &u.anti.slices[li];
        r.diag.slices[li] = ud * wl - (ud * &hm - &hm * ud) * I - &target.diag.slices[li];
        r.anti.slices[li] = ua * wl - (-(ua * &hbar) - &hm * ua) * I - &target.anti.slices[li];
    }
    r
}

/// `|R|_s / |P|_s`, using the block-decay norm on both parts.
pub fn relative_residual(h: &BlockDiagHamiltonian, p: &MatrixPair, u: &MatrixPair, omega: &[f64], n: i32, s: f64) -> f64 {
    let r = homological_residual(h, p, u, omega, n);
    let num = r.diag.decay_norm(s) + r.anti.decay_norm(s);
    let den = p.diag.decay_norm(s) + p.anti.decay_norm(s);
    if den == 0.0 {
        num
    } else {
        num / den
    }
}

/// Replaces the anti-diagonal part by its structured projection and the
/// diagonal part by its self-adjoint part.
pub fn symmetrize(p: &MatrixPair) -> MatrixPair {
    let d = p.diag.plus(&p.diag.adjoint()).expect("same shape").scaled(C64::new(0.5, 0.0));
    let a = p.anti.plus(&p.anti.conj_op().adjoint()).expect("same shape").scaled(C64::new(0.5, 0.0));
    MatrixPair { diag: d, anti: a }
}
