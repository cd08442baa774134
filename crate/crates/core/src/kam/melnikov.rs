//! Second-order Melnikov conditions on the eigenvalues of the current
//! time-independent part.

use super::BlockDiagHamiltonian;
use crate::lattice::{bracket, Lattice};
use serde::Serialize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DivisorKind {
    Difference,
    Sum,
}

/// A divisor below its threshold. `a`, `ap` index the (ascending) eigenvalues
/// of blocks `i` and `j`.
#[derive(Clone, Debug, Serialize)]
pub struct Violation {
    pub l: Vec<i32>,
    pub i: usize,
    pub j: usize,
    pub a: usize,
    pub ap: usize,
    pub divisor: f64,
    pub kind: DivisorKind,
}

#[derive(Clone, Debug, Serialize)]
pub struct MelnikovReport {
    pub violations: Vec<Violation>,
    /// Smallest `|divisor|` met in the scan.
    pub min_divisor: f64,
}

impl MelnikovReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Scans `|l| <= n`, `0 <= i, j <= M` for
/// `|omega.l + lambda_i - lambda_j| < gamma <i - j> / n^tau` (except `(0, j, j)`)
/// and `|omega.l + lambda_i + lambda_j| < gamma <i + j> / n^tau`.
pub fn melnikov_check(h0: &BlockDiagHamiltonian, omega: &[f64], n: i32, gamma: f64, tau: f64) -> MelnikovReport {
    let lat = Lattice::new(omega.len(), n);
    let scale = gamma / (n.max(1) as f64).powf(tau);
    let eig: Vec<&[f64]> = (0..=h0.m).map(|a| h0.eigenvalues(a)).collect();
    let z = lat.zero_index();
    let mut violations = Vec::new();
    let mut min_divisor = f64::INFINITY;
    for (li, l) in lat.modes().enumerate() {
        let wl = Lattice::dot(omega, &l);
        for (i, ei) in eig.iter().enumerate() {
            for (j, ej) in eig.iter().enumerate() {
                let thr_d = scale * bracket(i as i64 - j as i64);
                let thr_s = scale * bracket((i + j) as i64);
                for (a, &x) in ei.iter().enumerate() {
                    for (ap, &y) in ej.iter().enumerate() {
                        if !(li == z && i == j) {
                            let dv = wl + x - y;
                            min_divisor = min_divisor.min(dv.abs());
                            if dv.abs() < thr_d {
                                violations.push(Violation {
                                    l: l.clone(),
                                    i,
                                    j,
                                    a,
                                    ap,
                                    divisor: dv,
                                    kind: DivisorKind::Difference,
                                });
                            }
                        }
                        let sv = wl + x + y;
                        min_divisor = min_divisor.min(sv.abs());
                        if sv.abs() < thr_s {
                            violations.push(Violation {
                                l: l.clone(),
                                i,
                                j,
                                a,
                                ap,
                                divisor: sv,
                                kind: DivisorKind::Sum,
                            });
                        }
                    }
                }
            }
        }
    }
    MelnikovReport { violations, min_divisor }
}
