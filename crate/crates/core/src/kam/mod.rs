//! KAM reducibility iteration: repeated conjugation by solutions of the
//! homological equation until the time-dependent remainder is negligible.

pub mod homological;
pub mod melnikov;
pub mod sylvester;
pub mod transforms;

pub use homological::{floor_part, homological_residual, relative_residual, solve_homological, symmetrize, HomologicalSolution};
pub use melnikov::{melnikov_check, DivisorKind, MelnikovReport, Violation};
pub use sylvester::{block_eig, solve_sylvester_2x2, sylvester_direct};
pub use transforms::compose_transforms;

use crate::conjugate::{conjugate_hamiltonian, ThetaGrid};
use crate::lattice::block_rows;
use crate::linalg::{flip_cols, flip_rows, CMat};
use crate::operators::{MatrixPair, QPOperator};
use crate::{Error, Result, C64};
use serde::{Deserialize, Serialize};
use std::time::Instant;

/// `s_0 = floor((d + 1) / 2) + 1`.
pub fn s0(d: usize) -> f64 {
    (d.div_ceil(2) + 1) as f64
}

/// Time-independent block-diagonal operator: a real number on `alpha = 0` and
/// a self-adjoint 2x2 block on each pair `(alpha, -alpha)`.
#[derive(Clone, Debug)]
pub struct BlockDiagHamiltonian {
    pub m: usize,
    blocks: Vec<CMat>,
    eig: Vec<(Vec<f64>, CMat)>,
}

impl BlockDiagHamiltonian {
    pub fn from_blocks(blocks: Vec<CMat>) -> Self {
        let m = blocks.len() - 1;
        let eig = blocks.iter().map(block_eig).collect();
        BlockDiagHamiltonian { m, blocks, eig }
    }

    /// Diagonal operator with `values[j + M]` on mode `j`.
    pub fn from_diagonal(values: &[f64]) -> Self {
        let m = values.len() / 2;
        let blocks = (0..=m)
            .map(|a| {
                let rows = block_rows(a, m);
                CMat::from_fn(
                    rows.len(),
                    rows.len(),
                    |r, c| if r == c { C64::new(values[rows[r]], 0.0) } else { C64::new(0.0, 0.0) },
                )
            })
            .collect();
        Self::from_blocks(blocks)
    }

    pub fn block(&self, alpha: usize) -> &CMat {
        &self.blocks[alpha]
    }

    /// Block of `J conj(H) J`: `sigma_1 conj(h_alpha) sigma_1`.
    pub fn conj_block(&self, alpha: usize) -> CMat {
        flip_rows(&flip_cols(&self.blocks[alpha].map(|z| z.conj())))
    }

    pub fn eigen(&self, alpha: usize) -> &(Vec<f64>, CMat) {
        &self.eig[alpha]
    }

    /// Ascending eigenvalues of block `alpha`.
    pub fn eigenvalues(&self, alpha: usize) -> &[f64] {
        &self.eig[alpha].0
    }

    pub fn to_operator(&self, d: usize, l_max: i32) -> QPOperator {
        let mut op = QPOperator::zeros(d, l_max, self.m);
        let z = op.lat.zero_index();
        for (a, b) in self.blocks.iter().enumerate() {
            op.set_block(z, a, a, b);
        }
        op
    }

    pub fn to_pair(&self, d: usize, l_max: i32) -> MatrixPair {
        MatrixPair {
            diag: self.to_operator(d, l_max),
            anti: QPOperator::zeros(d, l_max, self.m),
        }
    }

    /// `h + (F + F^dagger) / 2` for the block-diagonal correction `F`.
    pub fn corrected(&self, f: &[CMat]) -> Self {
        let blocks = self.blocks.iter().zip(f).map(|(h, f)| h + (f + f.adjoint()) * C64::new(0.5, 0.0)).collect();
        Self::from_blocks(blocks)
    }

    /// Largest `|h_alpha - h_alpha^dagger|`.
    pub fn hermitian_defect(&self) -> f64 {
        self.blocks.iter().map(|b| crate::linalg::max_abs(&(b - b.adjoint()))).fold(0.0, f64::max)
    }
}

/// Cut-off schedule `N_n = round(N_0^{(3/2)^n})`, effectively capped at `L + 1`
/// once it exceeds the stored band.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct KamSchedule {
    pub n0: f64,
    pub l_max: i32,
}

impl KamSchedule {
    pub fn nominal(&self, n: usize) -> f64 {
        self.n0.powf(1.5f64.powi(n as i32)).round()
    }

    pub fn effective(&self, n: usize) -> i32 {
        let nom = self.nominal(n);
        if nom >= (self.l_max + 1) as f64 {
            self.l_max + 1
        } else {
            nom as i32
        }
    }
}

/// Exponents `a = 6 tau + 4`, `b = a + 1` of the convergence estimates.
pub fn kam_exponents(tau: f64) -> (f64, f64) {
    let a = 6.0 * tau + 4.0;
    (a, a + 1.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KamParams {
    pub n0: f64,
    pub max_iter: usize,
    pub target: f64,
    pub gamma: f64,
    pub tau: f64,
    /// Sobolev index of the reported norm (defaults to `s_0`).
    pub s_norm: Option<f64>,
    /// Smallest accepted Sylvester divisor.
    pub floor: f64,
}

impl Default for KamParams {
    fn default() -> Self {
        KamParams {
            n0: 3.0,
            max_iter: 8,
            target: 1e-10,
            gamma: 0.05,
            tau: 16.0,
            s_norm: None,
            floor: 1e-14,
        }
    }
}

/// One row of the iteration log. Norms describe `P_n`; the step fields
/// describe the step taken from it and are empty on the last row.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IterRecord {
    pub n: usize,
    pub cut: Option<i32>,
    pub norm_p: f64,
    pub norm_p_low: f64,
    pub min_divisor: Option<f64>,
    pub wall_time: Option<f64>,
    pub residual: Option<f64>,
    pub generator_norm: Option<f64>,
    pub dropped_band: Option<f64>,
    pub structure: f64,
    /// Largest `|h_alpha - h_alpha^dagger|` of the Hamiltonian paired with `P_n`.
    pub h_defect: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum KamStatus {
    Converged,
    Rejected { n: usize, violations: usize, min_divisor: f64 },
    MaxIter,
}

#[derive(Clone, Debug)]
pub struct KamState {
    pub h: BlockDiagHamiltonian,
    pub p: MatrixPair,
    pub transforms: Vec<MatrixPair>,
    pub log: Vec<IterRecord>,
}

#[derive(Clone, Debug)]
pub struct KamOutcome {
    pub state: KamState,
    pub status: KamStatus,
    pub melnikov: Option<MelnikovReport>,
}

fn record(n: usize, h: &BlockDiagHamiltonian, p: &MatrixPair, s: f64) -> IterRecord {
    IterRecord {
        n,
        cut: None,
        norm_p: p.triple_norm(s, 1.0, 0.0),
        norm_p_low: p.triple_norm(0.0, 1.0, 0.0),
        min_divisor: None,
        wall_time: None,
        residual: None,
        generator_norm: None,
        dropped_band: None,
        structure: p.structure_check().max(),
        h_defect: h.hermitian_defect(),
    }
}

impl KamState {
    pub fn new(h: BlockDiagHamiltonian, p: MatrixPair, params: &KamParams) -> Result<Self> {
        if h.m != p.m() {
            return Err(Error::Truncation("Hamiltonian and perturbation sizes differ".into()));
        }
        let s = params.s_norm.unwrap_or_else(|| s0(p.lat().d));
        let log = vec![record(0, &h, &p, s)];
        Ok(KamState {
            h,
            p,
            transforms: Vec::new(),
            log,
        })
    }

    pub fn step_count(&self) -> usize {
        self.transforms.len()
    }
}

/// One KAM step at cut-off `n_cut`:
/// `P+ = P + (e^{iU} H e^{-iU} - ... - H) - [P]`, `h+ = h + [P]`.
pub fn kam_step(state: &mut KamState, omega: &[f64], n_cut: i32, params: &KamParams, grid: &ThetaGrid) -> Result<()> {
    let t0 = Instant::now();
    let lat = state.p.lat().clone();
    let s = params.s_norm.unwrap_or_else(|| s0(lat.d));
    let sol = solve_homological(&state.h, &state.p, omega, n_cut, params.floor)?;
    let residual = relative_residual(&state.h, &state.p, &sol.u, omega, n_cut, s);
    let full = state.h.to_pair(lat.d, lat.l_max).plus(&state.p)?;
    let conj = conjugate_hamiltonian(&full, &sol.u, omega, grid)?;
    let f = floor_part(&state.p);
    let z = lat.zero_index();
    let fb: Vec<CMat> = (0..=state.h.m).map(|a| f.diag.block(z, a, a)).collect();
    let h_new = state.h.corrected(&fb);
    // Keep h + P equal to the conjugated Hamiltonian exactly.
    let dh = h_new.to_pair(lat.d, lat.l_max).minus(&state.h.to_pair(lat.d, lat.l_max))?;
    let p_new = state.p.plus(&conj.increment)?.minus(&dh)?;
    let n = state.step_count();
    let last = state.log.last_mut().expect("log starts non-empty");
    last.cut = Some(n_cut);
    last.min_divisor = Some(sol.min_divisor);
    last.residual = Some(residual);
    last.generator_norm = Some(conj.generator_norm);
    last.dropped_band = Some(conj.dropped_band);
    last.wall_time = Some(t0.elapsed().as_secs_f64());
    state.h = h_new;
    state.p = p_new;
    state.transforms.push(sol.u);
    state.log.push(record(n + 1, &state.h, &state.p, s));
    log::info!(
        "kam step {n}: N = {n_cut}, |P| = {:.3e} -> {:.3e}, residual {:.1e}, {:.1}s",
        state.log[n].norm_p,
        state.log[n + 1].norm_p,
        residual,
        state.log[n].wall_time.unwrap_or(0.0)
    );
    Ok(())
}

/// Runs steps until `|||P|||_{s_0} <= target`, a Melnikov violation, or
/// `max_iter` steps.
pub fn kam_iterate(h: BlockDiagHamiltonian, p: MatrixPair, omega: &[f64], params: &KamParams, grid: &ThetaGrid) -> Result<KamOutcome> {
    let mut state = KamState::new(h, p, params)?;
    let sched = KamSchedule {
        n0: params.n0,
        l_max: state.p.lat().l_max,
    };
    let mut last_report = None;
    loop {
        let n = state.step_count();
        if state.log[n].norm_p <= params.target {
            return Ok(KamOutcome {
                state,
                status: KamStatus::Converged,
                melnikov: last_report,
            });
        }
        if n >= params.max_iter {
            return Ok(KamOutcome {
                state,
                status: KamStatus::MaxIter,
                melnikov: last_report,
            });
        }
        let cut = sched.effective(n);
        if sched.nominal(n) > sched.l_max as f64 {
            log::warn!(
                "kam step {n}: N_n = {} exceeds the band L = {}; solving on the full band",
                sched.nominal(n),
                sched.l_max
            );
        }
        let rep = melnikov_check(&state.h, omega, cut, params.gamma, params.tau);
        if !rep.passed() {
            log::warn!("kam step {n}: {} Melnikov violations at N = {cut}", rep.violations.len());
            let status = KamStatus::Rejected {
                n,
                violations: rep.violations.len(),
                min_divisor: rep.min_divisor,
            };
            return Ok(KamOutcome {
                state,
                status,
                melnikov: Some(rep),
            });
        }
        last_report = Some(rep);
        kam_step(&mut state, omega, cut, params, grid)?;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conjugate::tests::test_pair;
    use crate::linalg::max_abs;

    fn free(m: usize) -> BlockDiagHamiltonian {
        let mm = m as i64;
        let v: Vec<f64> = (-mm..=mm).map(|j| ((j * j) as f64 + 1.0).sqrt()).collect();
        BlockDiagHamiltonian::from_diagonal(&v)
    }

    fn params() -> KamParams {
        KamParams {
            gamma: 1e-3,
            tau: 2.0,
            ..KamParams::default()
        }
    }

    const OMEGA: [f64; 1] = [1.732_050_807_568_877_2];

    #[test]
    fn schedule_values() {
        let s = KamSchedule { n0: 3.0, l_max: 16 };
        let nom: Vec<f64> = (0..4).map(|n| s.nominal(n)).collect();
        assert_eq!(nom, vec![3.0, 5.0, 12.0, 41.0]);
        assert_eq!(s.effective(3), 17);
        assert_eq!(kam_exponents(16.0), (100.0, 101.0));
        assert_eq!(s0(1), 2.0);
        assert_eq!(s0(2), 2.0);
        assert_eq!(s0(3), 3.0);
    }

    #[test]
    fn free_blocks_and_eigenvalues() {
        let h = free(3);
        assert_eq!(h.block(0).nrows(), 1);
        assert_eq!(h.eigenvalues(2), &[5f64.sqrt(), 5f64.sqrt()]);
        let op = h.to_operator(1, 2);
        assert!((op.entry(&[0], -3, -3).re - 10f64.sqrt()).abs() < 1e-15);
        assert_eq!(h.hermitian_defect(), 0.0);
    }

    #[test]
    fn homological_residual_vanishes() {
        let h = free(4);
        let p = test_pair(1, 3, 4, 1e-2, 5);
        let sol = solve_homological(&h, &p, &OMEGA, 4, 1e-14).unwrap();
        let r = homological_residual(&h, &p, &sol.u, &OMEGA, 4);
        assert!(r.max_abs() < 1e-14, "{}", r.max_abs());
        assert!(relative_residual(&h, &p, &sol.u, &OMEGA, 4, 2.0) < 1e-12);
        // U inherits the structure of P.
        assert!(sol.u.structure_check().max() < 1e-13);
        assert!(sol.min_divisor > 0.0);
    }

    #[test]
    fn high_modes_are_left_alone() {
        let h = free(3);
        let p = test_pair(1, 3, 3, 1e-2, 9);
        let sol = solve_homological(&h, &p, &OMEGA, 1, 1e-14).unwrap();
        let lat = p.lat().clone();
        for li in 0..lat.len() {
            if lat.mode(li) != vec![0] {
                assert_eq!(max_abs(&sol.u.diag.slices[li]), 0.0);
            }
        }
        assert_eq!(max_abs(&sol.u.diag.block(lat.zero_index(), 2, 2)), 0.0);
    }

    #[test]
    fn new_perturbation_identity() {
        // P+ = Pi_N^perp P + R with R assembled from separate conjugations.
        let h = free(3);
        let p = test_pair(1, 4, 3, 1e-2, 11);
        let lat = p.lat().clone();
        let grid = ThetaGrid::for_band(1, lat.l_max);
        let mut state = KamState::new(h.clone(), p.clone(), &params()).unwrap();
        kam_step(&mut state, &OMEGA, 2, &params(), &grid).unwrap();
        let u = &state.transforms[0];
        let zero = [0.0];
        let h_pair = h.to_pair(1, lat.l_max);
        let i_comm = u
            .map(|o| o.dtheta(&OMEGA))
            .minus(&homological_residual(&h, &p.zeros_like(), u, &OMEGA, 5))
            .unwrap();
        let r1 = conjugate_hamiltonian(&h_pair, u, &zero, &grid).unwrap().increment.minus(&i_comm).unwrap();
        let r2 = conjugate_hamiltonian(&p, u, &zero, &grid).unwrap().increment;
        let r3 = conjugate_hamiltonian(&p.zeros_like(), u, &OMEGA, &grid)
            .unwrap()
            .increment
            .plus(&u.map(|o| o.dtheta(&OMEGA)))
            .unwrap();
        let expect = p.map(|o| o.project_high(2)).plus(&r1).unwrap().plus(&r2).unwrap().plus(&r3).unwrap();
        let defect = state.p.minus(&expect).unwrap().max_abs();
        assert!(defect < 1e-9, "{defect:e}");
        // R is quadratic in the perturbation.
        assert!(r1.plus(&r2).unwrap().plus(&r3).unwrap().max_abs() < 1e-2);
    }

    #[test]
    fn small_iteration_converges_superlinearly() {
        let h = free(5);
        let p = test_pair(1, 6, 5, 1e-3, 21);
        let grid = ThetaGrid::for_band(1, 6);
        let out = kam_iterate(h.clone(), p, &OMEGA, &params(), &grid).unwrap();
        assert_eq!(out.status, KamStatus::Converged, "{:?}", out.state.log);
        let log = &out.state.log;
        assert!(log.len() <= 7);
        for w in log.windows(2).skip(1) {
            if w[1].norm_p > 1e-10 {
                assert!(w[1].norm_p <= w[0].norm_p.powf(1.4), "{:?}", log);
            }
        }
        for r in log.iter().filter_map(|r| r.residual) {
            assert!(r < 1e-12);
        }
        assert!(log.iter().all(|r| r.structure < 1e-12));
        assert!(out.state.h.hermitian_defect() < 1e-15);
        // Corrections are of the size of the perturbation.
        let drift = (0..=5).map(|a| max_abs(&(out.state.h.block(a) - h.block(a)))).fold(0.0, f64::max);
        assert!(drift > 0.0 && drift < 1e-2);
    }

    #[test]
    fn resonant_frequency_is_rejected() {
        // omega = lambda_1 - lambda_0 makes l = -1, (i, j) = (1, 0) resonant.
        let h = free(3);
        let omega = [2f64.sqrt() - 1.0];
        let p = test_pair(1, 3, 3, 1e-3, 2);
        let out = kam_iterate(h, p, &omega, &params(), &ThetaGrid::for_band(1, 3)).unwrap();
        assert!(matches!(out.status, KamStatus::Rejected { n: 0, .. }));
        let rep = out.melnikov.unwrap();
        assert!(rep
            .violations
            .iter()
            .any(|v| v.l == vec![-1] && v.i == 1 && v.j == 0 && v.kind == DivisorKind::Difference));
    }
}
