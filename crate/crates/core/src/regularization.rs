//! Preliminary conjugation by `e^{-iG}`, `G = diag(Op(g), -conj Op(g))`, which
//! removes the order-zero time dependence of the diagonal perturbation.

use crate::conjugate::{conjugate_hamiltonian, ThetaGrid};
use crate::kam::BlockDiagHamiltonian;
use crate::lattice::{bracket_lj, Lattice};
use crate::linalg::{loglog_slope, I};
use crate::operators::{MatrixPair, QPOperator};
use crate::symbols::{chi1_minus, chi1_plus, Symbol, Transport};
use crate::wave::FirstOrderSystem;
use crate::{Result, C64};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug)]
pub struct TransportSolution {
    /// Self-adjoint order-zero solution.
    pub g: Symbol,
    /// `k - <k> - omega.d_theta g - d_x g sign(xi) chi(xi)`.
    pub residual: Symbol,
    /// Smallest `|omega.l +/- k|` met on a nonzero coefficient.
    pub worst_divisor: f64,
    /// Smallest ratio of a divisor to its bound `gamma <l>^-tau0`.
    pub worst_margin: f64,
}

/// Forward operator `omega.d_theta g + d_x g sign(xi) chi(xi)`.
pub fn transport_forward(g: &Symbol, omega: &[f64]) -> Symbol {
    let plus = g.transport(omega, Transport::Plus).times_cutoff(|xi| if xi > 0 { 1.0 } else { 0.0 });
    let minus = g.transport(omega, Transport::Minus).times_cutoff(|xi| if xi < 0 { 1.0 } else { 0.0 });
    let zero = g.dtheta(omega).times_cutoff(|xi| if xi == 0 { 1.0 } else { 0.0 });
    plus.plus(&minus).and_then(|s| s.plus(&zero)).expect("same shape")
}

fn divisor_scan(k: &Symbol, omega: &[f64], gamma: f64, tau0: f64) -> (f64, f64) {
    let z = k.lat.zero_index();
    let mut worst = f64::INFINITY;
    let mut margin = f64::INFINITY;
    let kx = k.kx as i64;
    let live: Vec<bool> = {
        let mut v = vec![false; k.lat.len() * (2 * kx as usize + 1)];
        for (li, kk, _, val) in k.entries() {
            if val.norm() > 0.0 {
                v[li * (2 * kx as usize + 1) + (kk + kx) as usize] = true;
            }
        }
        v
    };
    for (li, l) in k.lat.modes().enumerate() {
        let wl = Lattice::dot(omega, &l);
        let bound = gamma / bracket_lj(&l, 0).powf(tau0);
        for kk in -kx..=kx {
            if (li == z && kk == 0) || !live[li * (2 * kx as usize + 1) + (kk + kx) as usize] {
                continue;
            }
            for dv in [wl + kk as f64, wl - kk as f64] {
                worst = worst.min(dv.abs());
                if bound > 0.0 {
                    margin = margin.min(dv.abs() / bound);
                }
            }
        }
    }
    (worst, margin)
}

/// Solves `omega.d_theta g + d_x g sign(xi) chi_1(xi) = k - <k>` on `|xi| >= 2`
/// and symmetrizes.
pub fn solve_transport_symbol(k: &Symbol, omega: &[f64], gamma: f64, tau0: f64) -> Result<TransportSolution> {
    let kt = k.minus_average();
    let qp = kt.times_cutoff(chi1_plus).transport_inverse(omega, Transport::Plus, gamma, tau0)?;
    let qm = kt.times_cutoff(chi1_minus).transport_inverse(omega, Transport::Minus, gamma, tau0)?;
    let q = qp.plus(&qm)?.representable();
    let g = q.plus(&q.adjoint())?.scaled(C64::new(0.5, 0.0)).representable();
    let residual = kt.minus(&transport_forward(&g, omega))?.representable();
    let (worst_divisor, worst_margin) = divisor_scan(&kt, omega, gamma, tau0);
    if worst_margin < 10.0 {
        log::warn!("transport divisor within 10x of its bound (margin {worst_margin:.2})");
    }
    Ok(TransportSolution {
        g,
        residual,
        worst_divisor,
        worst_margin,
    })
}

/// Log-log slope of a column profile over `alpha` in `lo..=hi`, ignoring
/// entries below `1e-14` of the profile maximum. Returns `-inf` when fewer
/// than two entries remain (a profile with compact support).
pub fn profile_slope(profile: &[f64], lo: usize, hi: usize) -> f64 {
    let hi = hi.min(profile.len() - 1);
    let top = profile.iter().cloned().fold(0.0, f64::max);
    let (x, y): (Vec<f64>, Vec<f64>) = (lo..=hi).filter(|&a| profile[a] > 1e-14 * top).map(|a| (a as f64, profile[a])).unzip();
    if x.len() < 2 {
        return f64::NEG_INFINITY;
    }
    loglog_slope(&x, &y)
}

/// Norms of the pieces of the new perturbation.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RegDiagnostics {
    pub norm_g: f64,
    pub norm_p_diag: f64,
    pub norm_p_diag_weighted: f64,
    pub norm_p_anti: f64,
    /// `i[G, D] + K - G' - [K]` on the diagonal: the part linear in `eps`.
    pub norm_linear_diag: f64,
    /// Remaining diagonal part, quadratic in `eps`.
    pub norm_higher_diag: f64,
    /// `P^a - eps K`.
    pub norm_anti_remainder: f64,
    pub dropped_band: f64,
    pub worst_divisor: f64,
    pub worst_margin: f64,
    pub p_diag_slope: f64,
    pub residual_slope: f64,
    pub structure: f64,
}

#[derive(Clone, Debug)]
pub struct RegularizationResult {
    pub g: Symbol,
    pub residual: Symbol,
    pub g_pair: MatrixPair,
    /// `<k>(xi)` for `xi = -M..=M`.
    pub k_avg: Vec<f64>,
    pub h0: BlockDiagHamiltonian,
    pub p: MatrixPair,
    pub diagnostics: RegDiagnostics,
}

impl RegularizationResult {
    /// `lambda^0_{j,+/-} = sqrt(j^2 + m) + <k>(+/- j)`, indexed by `j + M`.
    pub fn lambda0(&self) -> Vec<f64> {
        let m = self.h0.m;
        (0..2 * m + 1)
            .map(|i| self.h0.block(i.abs_diff(m))[(if i < m { 1 } else { 0 }, if i < m { 1 } else { 0 })].re)
            .collect()
    }
}

/// Fit window for block-decay slopes: `2 <= alpha <= M - Kx - 1`, away from the
/// truncation edge.
pub fn slope_window(m: usize, kx: i32) -> (usize, usize) {
    (2, m.saturating_sub(kx as usize + 1).max(3))
}

pub fn regularize(sys: &FirstOrderSystem, omega: &[f64], kx: i32, gamma: f64, tau0: f64, grid: &ThetaGrid) -> Result<RegularizationResult> {
    let lat = sys.k_op.lat.clone();
    let m = sys.k_op.m;
    let k = Symbol::dequantize(&sys.k_op, kx, 0.0);
    let sol = solve_transport_symbol(&k, omega, gamma, tau0)?;
    let g_op = sol.g.quantize();
    let g_pair = MatrixPair {
        diag: g_op.clone(),
        anti: QPOperator::zeros(lat.d, lat.l_max, m),
    };
    let h = sys.hamiltonian();
    let conj = conjugate_hamiltonian(&h, &g_pair, omega, grid)?;

    let k_avg = sys.k_average();
    let mi = m as i64;
    let h0_vals: Vec<f64> = (0..2 * m + 1).map(|i| sys.d_diag[i] + k_avg[i]).collect();
    let h0 = BlockDiagHamiltonian::from_diagonal(&h0_vals);
    let avg_op = QPOperator::diagonal(lat.d, lat.l_max, m, |j| C64::new(k_avg[(j + mi) as usize], 0.0));
    let mut p = sys.k_pair.plus(&conj.increment)?;
    p.diag = p.diag.minus(&avg_op)?;

    // Diagnostic split of the diagonal part.
    let d_op = sys.d_operator();
    let comm = g_op.compose(&d_op)?.minus(&d_op.compose(&g_op)?)?.scaled(I);
    let linear = comm.plus(&sys.k_op)?.minus(&g_op.dtheta(omega))?.minus(&avg_op)?;
    let higher = p.diag.minus(&linear)?;
    let anti_rem = p.anti.minus(&sys.k_op)?;
    let (lo, hi) = slope_window(m, kx);
    let s = 0.0;
    let p_prof = p.diag.decay_profile(s);
    let r_prof = sol.residual.quantize().decay_profile(s);
    let diagnostics = RegDiagnostics {
        norm_g: g_op.decay_norm(s),
        norm_p_diag: p.diag.decay_norm(s),
        norm_p_diag_weighted: crate::operators::weighted_norms(&p.diag, s, 1.0).ms_norm,
        norm_p_anti: p.anti.decay_norm(s),
        norm_linear_diag: linear.decay_norm(s),
        norm_higher_diag: higher.decay_norm(s),
        norm_anti_remainder: anti_rem.decay_norm(s),
        dropped_band: conj.dropped_band,
        worst_divisor: sol.worst_divisor,
        worst_margin: sol.worst_margin,
        p_diag_slope: profile_slope(&p_prof, lo, hi),
        residual_slope: profile_slope(&r_prof, lo, hi),
        structure: p.structure_check().max(),
    };
    let pn = p.max_abs();
    if conj.dropped_band > 1e-8 * pn.max(f64::MIN_POSITIVE) {
        log::warn!("regularization: dropped band mass {:.2e} exceeds 1e-8 |P|", conj.dropped_band);
    }
    Ok(RegularizationResult {
        g: sol.g,
        residual: sol.residual,
        g_pair,
        k_avg,
        h0,
        p,
        diagnostics,
    })
}
