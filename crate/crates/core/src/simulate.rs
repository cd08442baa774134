//! Time integration of `i q_t = H(omega t) q` by the exponential midpoint rule
//! and Sobolev-norm tracking.

use crate::lattice::bracket;
use crate::linalg::{expm, expm_apply, max_abs, CMat, I};
use crate::operators::{MatrixPair, QPOperator};
use crate::{Error, Result, C64};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub type CVec = DVector<C64>;

/// Which adjointness the generator must have.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    /// `H` self-adjoint: every step is unitary in `l^2`.
    Hermitian,
    /// `sigma_3 H` self-adjoint (the full operator matrix): every step preserves
    /// `q^dagger sigma_3 q`.
    Krein,
}

/// `H(t) = sum_l H_hat(l) e^{i l.omega t}` over the nonzero coefficients.
#[derive(Clone, Debug)]
pub struct QPField {
    pub omega: Vec<f64>,
    terms: Vec<(Vec<i32>, CMat)>,
}

impl QPField {
    /// The full `2n x 2n` operator matrix of a pair.
    pub fn from_pair(p: &MatrixPair, omega: &[f64]) -> Self {
        let mut idx = p.diag.nonzero_slices();
        idx.extend(p.anti.nonzero_slices());
        idx.sort_unstable();
        idx.dedup();
        // Lower blocks live on the negated mode.
        let mut all: Vec<usize> = idx.iter().flat_map(|&i| [i, p.lat().neg_index(i)]).collect();
        all.sort_unstable();
        all.dedup();
        let terms = all.into_iter().map(|i| (p.lat().mode(i), p.full_slice(i))).collect();
        QPField { omega: omega.to_vec(), terms }
    }

    pub fn from_operator(a: &QPOperator, omega: &[f64]) -> Self {
        let terms = a.nonzero_slices().into_iter().map(|i| (a.lat.mode(i), a.slices[i].clone())).collect();
        QPField { omega: omega.to_vec(), terms }
    }

    pub fn dim(&self) -> usize {
        self.terms.first().map(|t| t.1.nrows()).unwrap_or(0)
    }

    pub fn eval(&self, t: f64) -> CMat {
        let n = self.dim();
        let mut out = CMat::zeros(n, n);
        for (l, s) in &self.terms {
            let ph: f64 = l.iter().zip(&self.omega).map(|(a, w)| *a as f64 * w).sum::<f64>() * t;
            let e = C64::new(ph.cos(), ph.sin());
            out.zip_apply(s, |o, v| *o += v * e);
        }
        out
    }

    /// Largest column 1-norm bound `sum_l |H_hat(l)|_1`.
    pub fn norm_bound(&self) -> f64 {
        self.terms
            .iter()
            .map(|(_, s)| (0..s.ncols()).map(|j| s.column(j).iter().map(|z| z.norm()).sum::<f64>()).fold(0.0, f64::max))
            .sum()
    }
}

fn sigma3(n2: usize) -> Vec<f64> {
    (0..n2).map(|i| if i < n2 / 2 { 1.0 } else { -1.0 }).collect()
}

/// Self-adjointness defect of `H` (or of `sigma_3 H`), relative to `|H|`.
pub fn adjointness_defect(h: &CMat, scheme: Scheme) -> f64 {
    let scale = max_abs(h).max(f64::MIN_POSITIVE);
    match scheme {
        Scheme::Hermitian => max_abs(&(h - h.adjoint())) / scale,
        Scheme::Krein => {
            let s = sigma3(h.nrows());
            let sh = CMat::from_fn(h.nrows(), h.ncols(), |i, j| h[(i, j)] * s[i]);
            max_abs(&(&sh - sh.adjoint())) / scale
        }
    }
}

fn invariant(q: &CVec, scheme: Scheme) -> f64 {
    match scheme {
        Scheme::Hermitian => q.norm_squared(),
        Scheme::Krein => {
            let s = sigma3(q.len());
            q.iter().zip(&s).map(|(z, w)| z.norm_sqr() * w).sum()
        }
    }
}

/// `||q||_{H^r}` of a state on `|j| <= M`, or of a pair state `(q, conj q)`
/// of twice that length.
pub fn sobolev_norm(q: &CVec, r: f64) -> f64 {
    let n = if q.len().is_multiple_of(2) { q.len() / 2 } else { q.len() };
    let m = (n / 2) as i64;
    q.iter()
        .enumerate()
        .map(|(i, z)| bracket((i % n) as i64 - m).powf(2.0 * r) * z.norm_sqr())
        .sum::<f64>()
        .sqrt()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IntegrateOptions {
    pub t_end: f64,
    pub dt: f64,
    /// Record every `record_every` steps (the final state is always recorded).
    pub record_every: usize,
    pub r_list: Vec<f64>,
    pub scheme: Scheme,
    /// Upper bound on `dt |H|`.
    pub max_step_norm: f64,
}

impl IntegrateOptions {
    pub fn new(t_end: f64, dt: f64, scheme: Scheme) -> Self {
        IntegrateOptions {
            t_end,
            dt,
            record_every: 1,
            r_list: vec![0.0],
            scheme,
            max_step_norm: 4.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<CVec>,
    pub r_list: Vec<f64>,
    /// `r_norms[k][i]` is `||q(times[i])||_{H^{r_k}}`.
    pub r_norms: Vec<Vec<f64>>,
    /// Largest per-step relative change of the conserved quadratic form.
    pub max_step_defect: f64,
    pub max_adjointness_defect: f64,
}

impl Trajectory {
    pub fn last(&self) -> &CVec {
        self.states.last().expect("trajectory holds the initial state")
    }
}

/// Exponential midpoint `q_{k+1} = exp(-i dt H(t_k + dt/2)) q_k`. A negative
/// `dt` integrates backwards from `t0`.
pub fn integrate_from(h: &QPField, q0: &CVec, t0: f64, opts: &IntegrateOptions) -> Result<Trajectory> {
    if opts.dt == 0.0 || !opts.dt.is_finite() {
        return Err(Error::Integration("time step must be finite and nonzero".into()));
    }
    let steps = (opts.t_end / opts.dt.abs()).round() as usize;
    if ((steps as f64) * opts.dt.abs() - opts.t_end).abs() > 1e-9 * opts.t_end.max(1.0) {
        return Err(Error::Integration(format!("T = {} is not a multiple of dt = {}", opts.t_end, opts.dt)));
    }
    let bound = h.norm_bound();
    if bound * opts.dt.abs() > opts.max_step_norm {
        return Err(Error::Integration(format!(
            "dt = {} exceeds dt_max = {:.3e} (|H| <= {bound:.3e})",
            opts.dt,
            opts.max_step_norm / bound
        )));
    }
    let every = opts.record_every.max(1);
    let mut traj = Trajectory {
        times: vec![t0],
        states: vec![q0.clone()],
        r_list: opts.r_list.clone(),
        r_norms: opts.r_list.iter().map(|&r| vec![sobolev_norm(q0, r)]).collect(),
        max_step_defect: 0.0,
        max_adjointness_defect: 0.0,
    };
    let mut q = q0.clone();
    let mut inv = invariant(&q, opts.scheme);
    for k in 0..steps {
        let tm = t0 + (k as f64 + 0.5) * opts.dt;
        let hm = h.eval(tm);
        // Sample the structure along the run.
        if k % 64 == 0 {
            let def = adjointness_defect(&hm, opts.scheme);
            traj.max_adjointness_defect = traj.max_adjointness_defect.max(def);
            if def > 1e-9 {
                return Err(Error::Model(format!("generator not self-adjoint at t = {tm}: defect {def:.3e}")));
            }
        }
        q = expm_apply(&(hm * (-I * opts.dt)), &q);
        let inv_new = invariant(&q, opts.scheme);
        let scale = q.norm_squared().max(f64::MIN_POSITIVE);
        traj.max_step_defect = traj.max_step_defect.max((inv_new - inv).abs() / scale);
        inv = inv_new;
        if !q.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
            return Err(Error::Integration(format!("state diverged at t = {tm}")));
        }
        if (k + 1) % every == 0 || k + 1 == steps {
            traj.times.push(t0 + (k + 1) as f64 * opts.dt);
            for (ri, &r) in opts.r_list.iter().enumerate() {
                traj.r_norms[ri].push(sobolev_norm(&q, r));
            }
            traj.states.push(q.clone());
        }
    }
    Ok(traj)
}

pub fn integrate(h: &QPField, q0: &CVec, opts: &IntegrateOptions) -> Result<Trajectory> {
    integrate_from(h, q0, 0.0, opts)
}

/// Sup and inf over time of `||q(t)||_{H^r} / ||q(0)||_{H^r}`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BoundednessReport {
    pub r: f64,
    pub sup_ratio: f64,
    pub inf_ratio: f64,
}

pub fn boundedness_report(traj: &Trajectory) -> Vec<BoundednessReport> {
    traj.r_list
        .iter()
        .zip(&traj.r_norms)
        .map(|(&r, norms)| {
            let n0 = norms[0];
            let (lo, hi) = norms.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &x| (lo.min(x / n0), hi.max(x / n0)));
            BoundednessReport {
                r,
                sup_ratio: hi,
                inf_ratio: lo,
            }
        })
        .collect()
}

/// Observed order `log2(|q_dt - q_{dt/2}| / |q_{dt/2} - q_{dt/4}|)` of the
/// final state.
pub fn richardson_order(h: &QPField, q0: &CVec, t_end: f64, dt: f64, scheme: Scheme) -> Result<f64> {
    let run = |step: f64| -> Result<CVec> {
        let mut o = IntegrateOptions::new(t_end, step, scheme);
        o.record_every = usize::MAX;
        Ok(integrate(h, q0, &o)?.last().clone())
    };
    let a = run(dt)?;
    let b = run(dt / 2.0)?;
    let c = run(dt / 4.0)?;
    Ok(((&a - &b).norm() / (&b - &c).norm()).log2())
}

/// `|q0 - back(forward(q0))| / |q0|` over `[0, T]`.
pub fn time_reversal_error(h: &QPField, q0: &CVec, t_end: f64, dt: f64, scheme: Scheme) -> Result<f64> {
    let mut o = IntegrateOptions::new(t_end, dt, scheme);
    o.record_every = usize::MAX;
    let fwd = integrate(h, q0, &o)?;
    o.dt = -dt;
    let back = integrate_from(h, fwd.last(), t_end, &o)?;
    Ok((back.last() - q0).norm() / q0.norm())
}

/// Initial data on `|j| <= M`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitialState {
    /// `e^{ijx}`.
    Mode(i64),
    /// Random coefficients of size `<j>^{-r-1}`.
    RandomSobolev(f64),
}

impl std::str::FromStr for InitialState {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let (kind, val) = s
            .split_once(':')
            .ok_or_else(|| Error::Config(format!("initial state `{s}` is not kind:value")))?;
        let bad = || Error::Config(format!("bad initial state value in `{s}`"));
        match kind {
            "mode" => Ok(InitialState::Mode(val.parse().map_err(|_| bad())?)),
            "random-sobolev" => Ok(InitialState::RandomSobolev(val.parse().map_err(|_| bad())?)),
            _ => Err(Error::Config(format!("unknown initial state `{kind}` (mode, random-sobolev)"))),
        }
    }
}

/// The state `(q, J conj q)` on `2(2M+1)` coordinates.
pub fn initial_pair_state(init: &InitialState, m: usize, seed: u64) -> Result<CVec> {
    let n = 2 * m + 1;
    let mi = m as i64;
    let mut q = CVec::zeros(n);
    match *init {
        InitialState::Mode(j) => {
            if j.abs() > mi {
                return Err(Error::OutOfRange(format!("mode {j} outside |j| <= {m}")));
            }
            q[(j + mi) as usize] = C64::new(1.0, 0.0);
        }
        InitialState::RandomSobolev(r) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for j in -mi..=mi {
                let a = bracket(j).powf(-r - 1.0);
                q[(j + mi) as usize] = C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)) * a;
            }
        }
    }
    Ok(pair_state(&q))
}

/// `(q, J conj q)`.
pub fn pair_state(q: &CVec) -> CVec {
    let n = q.len();
    CVec::from_fn(2 * n, |i, _| if i < n { q[i] } else { q[2 * n - 1 - i].conj() })
}

/// Outcome of checking `v(t) = A^{-1}(omega t) q(t)` against the reduced flow.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReductionReport {
    pub r_list: Vec<f64>,
    /// Per `r`: `max_t | |v(t)|_{H^r} / |v(0)|_{H^r} - 1 |`.
    pub norm_deviation: Vec<f64>,
    /// `max_t |v(t) - e^{-i H_inf t} v(0)| / |v(0)|`.
    pub max_flow_deviation: f64,
    /// `max_{t, alpha} | |v_alpha(t)| - |v_alpha(0)| | / |v(0)|` over the
    /// blocks `alpha = {alpha, -alpha}` of either component.
    pub max_block_deviation: f64,
    pub worst_time: f64,
    /// Block index `alpha`.
    pub worst_block: usize,
    pub samples: usize,
    pub tolerance: f64,
    pub passed: bool,
}

impl ReductionReport {
    pub fn max_norm_deviation(&self) -> f64 {
        self.norm_deviation.iter().cloned().fold(0.0, f64::max)
    }
}

/// `(alpha, |v_alpha|)` for the blocks of both halves of a pair state.
fn block_moduli(v: &CVec) -> Vec<(usize, f64)> {
    let n = v.len() / 2;
    let m = n / 2;
    let mut out = Vec::with_capacity(2 * (m + 1));
    for half in [0, n] {
        for a in 0..=m {
            let up = v[half + m + a].norm_sqr();
            let down = if a == 0 { 0.0 } else { v[half + m - a].norm_sqr() };
            out.push((a, (up + down).sqrt()));
        }
    }
    out
}

/// Integrates `q` under `h`, maps it back with `a_inv` at about `samples`
/// equally spaced times and compares with the constant-coefficient flow of
/// `h_inf`. `tolerance` is applied to all three deviations.
#[allow(clippy::too_many_arguments)]
pub fn verify_reduction(
    h: &QPField,
    a_inv: &(dyn Fn(f64) -> Result<CMat> + Sync),
    h_inf: &CMat,
    q0: &CVec,
    t_end: f64,
    dt: f64,
    samples: usize,
    r_list: &[f64],
    tolerance: f64,
) -> Result<ReductionReport> {
    let steps = (t_end / dt).round() as usize;
    let mut o = IntegrateOptions::new(t_end, dt, Scheme::Krein);
    o.record_every = (steps / samples.max(1)).max(1);
    let traj = integrate(h, q0, &o)?;
    let v0 = a_inv(0.0)? * q0;
    let n0: Vec<f64> = r_list.iter().map(|&r| sobolev_norm(&v0, r)).collect();
    let l2 = v0.norm();
    // Reduced flow at the sample times, stepping with a cached propagator.
    let mut flows = Vec::with_capacity(traj.times.len());
    let mut cache: Option<(f64, CMat)> = None;
    let mut prev = (0.0, v0.clone());
    for &t in &traj.times {
        let gap = t - prev.0;
        if cache.as_ref().map(|c| c.0) != Some(gap) {
            cache = Some((gap, expm(&(h_inf * (-I * gap)))));
        }
        let f = &cache.as_ref().expect("set above").1 * &prev.1;
        flows.push(f.clone());
        prev = (t, f);
    }
    let per_time: Vec<(Vec<f64>, f64, f64, usize)> = traj
        .times
        .par_iter()
        .zip(traj.states.par_iter())
        .zip(flows.par_iter())
        .map(|((t, q), flow)| -> Result<_> {
            let v = a_inv(*t)? * q;
            let dev: Vec<f64> = r_list.iter().zip(&n0).map(|(&r, n)| (sobolev_norm(&v, r) / n - 1.0).abs()).collect();
            let fd = (&v - flow).norm() / l2;
            let (bv, b0) = (block_moduli(&v), block_moduli(&v0));
            let (wm, md) = bv
                .iter()
                .zip(&b0)
                .map(|(a, b)| (a.1 - b.1).abs() / l2)
                .zip(&bv)
                .fold((0, 0.0), |acc, (x, b)| if x > acc.1 { (b.0, x) } else { acc });
            Ok((dev, fd, md, wm))
        })
        .collect::<Result<_>>()?;
    let mut rep = ReductionReport {
        r_list: r_list.to_vec(),
        norm_deviation: vec![0.0; r_list.len()],
        max_flow_deviation: 0.0,
        max_block_deviation: 0.0,
        worst_time: 0.0,
        worst_block: 0,
        samples: traj.times.len(),
        tolerance,
        passed: true,
    };
    let mut worst = 0.0;
    for (t, (dev, fd, md, wm)) in traj.times.iter().zip(per_time) {
        for (a, b) in rep.norm_deviation.iter_mut().zip(&dev) {
            *a = a.max(*b);
        }
        rep.max_flow_deviation = rep.max_flow_deviation.max(fd);
        if md > rep.max_block_deviation {
            rep.max_block_deviation = md;
            rep.worst_block = wm;
        }
        let w = dev.iter().cloned().fold(fd.max(md), f64::max);
        if w > worst {
            worst = w;
            rep.worst_time = *t;
        }
    }
    rep.passed = rep.max_norm_deviation() < tolerance && rep.max_flow_deviation < tolerance && rep.max_block_deviation < tolerance;
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn free_field(m: usize) -> QPField {
        let op = QPOperator::diagonal(1, 1, m, |j| C64::new(((j * j) as f64 + 1.0).sqrt(), 0.0));
        QPField::from_operator(&op, &[1.3])
    }

    fn driven_field(m: usize, eps: f64) -> QPField {
        let mut op = QPOperator::diagonal(1, 1, m, |j| C64::new(((j * j) as f64 + 1.0).sqrt(), 0.0));
        let n = op.n();
        for (l, c) in [(1, C64::new(0.3, 0.2)), (-1, C64::new(0.3, -0.2))] {
            let s = op.slice_mut(&[l]).unwrap();
            for i in 0..n - 1 {
                s[(i + 1, i)] += c * eps;
                s[(i, i + 1)] += c * eps;
            }
        }
        // Make the l = +-1 coefficients adjoint to each other.
        let adj = op.adjoint();
        let op = op.plus(&adj).unwrap().scaled(C64::new(0.5, 0.0));
        QPField::from_operator(&op, &[1.3])
    }

    #[test]
    fn free_mode_phase() {
        let h = free_field(4);
        let mut q0 = CVec::zeros(9);
        q0[6] = C64::new(1.0, 0.0);
        let mut o = IntegrateOptions::new(100.0, 0.05, Scheme::Hermitian);
        o.record_every = 100;
        o.r_list = vec![0.0, 1.0, 2.0];
        let tr = integrate(&h, &q0, &o).unwrap();
        let lam = 5f64.sqrt();
        let expect = C64::new(0.0, -lam * 100.0).exp();
        assert!((tr.last()[6] - expect).norm() < 1e-10);
        for r in boundedness_report(&tr) {
            assert!((r.sup_ratio - 1.0).abs() < 1e-12 && (r.inf_ratio - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn unitary_steps_and_reversal() {
        let h = driven_field(6, 0.5);
        let q0 = CVec::from_fn(13, |i, _| C64::new(1.0 / (i + 1) as f64, 0.1 * i as f64));
        let o = IntegrateOptions::new(20.0, 0.01, Scheme::Hermitian);
        let tr = integrate(&h, &q0, &o).unwrap();
        assert!(tr.max_step_defect < 1e-13, "{}", tr.max_step_defect);
        assert!(time_reversal_error(&h, &q0, 20.0, 0.01, Scheme::Hermitian).unwrap() < 1e-9);
        let p = richardson_order(&h, &q0, 5.0, 0.02, Scheme::Hermitian).unwrap();
        assert!((p - 2.0).abs() < 0.1, "{p}");
    }

    #[test]
    fn rejects_non_hermitian_generator() {
        let mut op = QPOperator::zeros(1, 0, 2);
        op.slices[0][(0, 1)] = C64::new(1.0, 0.0);
        let h = QPField::from_operator(&op, &[1.0]);
        let q0 = CVec::from_element(5, C64::new(1.0, 0.0));
        let r = integrate(&h, &q0, &IntegrateOptions::new(1.0, 0.1, Scheme::Hermitian));
        assert!(matches!(r, Err(Error::Model(_))));
    }

    #[test]
    fn step_size_precheck() {
        let h = free_field(40);
        let q0 = CVec::zeros(81);
        let r = integrate(&h, &q0, &IntegrateOptions::new(1.0, 0.5, Scheme::Hermitian));
        assert!(matches!(r, Err(Error::Integration(_))));
    }

    #[test]
    fn pair_states_and_norms() {
        let q = initial_pair_state(&InitialState::Mode(-2), 3, 0).unwrap();
        assert_eq!(q.len(), 14);
        assert_eq!(q[1], C64::new(1.0, 0.0));
        assert_eq!(q[14 - 1 - 1], C64::new(1.0, 0.0));
        assert!((sobolev_norm(&q, 1.0) - (2.0f64 * 4.0).sqrt()).abs() < 1e-15);
        let a = initial_pair_state(&"random-sobolev:2".parse().unwrap(), 3, 5).unwrap();
        let b = initial_pair_state(&InitialState::RandomSobolev(2.0), 3, 5).unwrap();
        assert_eq!(a, b);
    }
}
