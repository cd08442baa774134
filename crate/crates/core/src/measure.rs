//! Monte-Carlo estimates of the measure of non-resonant frequency sets in
//! `[1, 2]^d`.

use crate::lattice::{bracket, Lattice};
use crate::wave::Family;
use crate::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// The frequency sets. `Chain` is the intersection of all four.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SetKind {
    #[serde(rename = "O-gamma")]
    OGamma,
    #[serde(rename = "O-tilde0")]
    OTilde0,
    #[serde(rename = "O-tilde1")]
    OTilde1,
    #[serde(rename = "O-inf")]
    OInf,
    #[serde(rename = "chain")]
    Chain,
}

impl SetKind {
    pub const ALL: [SetKind; 4] = [SetKind::OGamma, SetKind::OTilde0, SetKind::OTilde1, SetKind::OInf];

    pub fn name(self) -> &'static str {
        match self {
            SetKind::OGamma => "O-gamma",
            SetKind::OTilde0 => "O-tilde0",
            SetKind::OTilde1 => "O-tilde1",
            SetKind::OInf => "O-inf",
            SetKind::Chain => "chain",
        }
    }
}

impl fmt::Display for SetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SetKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "O-gamma" => Ok(SetKind::OGamma),
            "O-tilde0" => Ok(SetKind::OTilde0),
            "O-tilde1" => Ok(SetKind::OTilde1),
            "O-inf" => Ok(SetKind::OInf),
            "chain" => Ok(SetKind::Chain),
            other => Err(Error::Config(format!("unknown set `{other}` (O-gamma, O-tilde0, O-tilde1, O-inf, chain)"))),
        }
    }
}

/// `xi -> c*(xi)` in the first-order normalisation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum CStar {
    Constant(f64),
    /// Value on even and on odd frequencies.
    Parity(f64, f64),
}

impl CStar {
    /// `c*(xi) = eps a(xi) / 2` for a built-in family.
    pub fn from_family(family: &Family, epsilon: f64) -> Self {
        match family {
            Family::Constant { c_star, .. } | Family::Oscillatory { c_star, .. } => CStar::Constant(0.5 * epsilon * c_star),
            Family::TwoLevel { c1, c2, .. } => CStar::Parity(0.5 * epsilon * c1, 0.5 * epsilon * c2),
        }
    }

    pub fn at(&self, xi: i64) -> f64 {
        match *self {
            CStar::Constant(c) => c,
            CStar::Parity(e, o) => {
                if xi.rem_euclid(2) == 0 {
                    e
                } else {
                    o
                }
            }
        }
    }

    /// The finite value set `Gamma*`.
    pub fn values(&self) -> Vec<f64> {
        match *self {
            CStar::Constant(c) => vec![c],
            CStar::Parity(e, o) => vec![e, o],
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MeasureParams {
    pub d: usize,
    pub gamma: f64,
    pub tau0: f64,
    pub tau1: f64,
    pub tau: f64,
    pub mass: f64,
    pub c_star: CStar,
    /// Final eigenvalues `[lambda_{i,-}, lambda_{i,+}]` for `i = 0..`; beyond
    /// the list (or when empty) `d_{i,a}` is used.
    pub lambda_inf: Vec<[f64; 2]>,
    pub l_scan: i32,
    pub j_scan: usize,
}

impl MeasureParams {
    /// Scan bounds `|l| <= max(2L, 32)`, `i, j <= max(2M, 64)`.
    pub fn scan_bounds(l_max: i32, m: usize) -> (i32, usize) {
        ((2 * l_max).max(32), (2 * m).max(64))
    }

    pub fn gamma0(&self) -> f64 {
        self.gamma.powf(1.0 / 3.0)
    }

    pub fn gamma1(&self) -> f64 {
        self.gamma.powf(2.0 / 3.0)
    }

    /// `d_{j,a} = sqrt(j^2 + m) + c*(a j)`.
    pub fn d_ja(&self, j: usize, a: i64) -> f64 {
        let j = j as i64;
        ((j * j) as f64 + self.mass).sqrt() + self.c_star.at(a * j)
    }

    fn lambda(&self, j: usize, a: i64) -> f64 {
        match self.lambda_inf.get(j) {
            Some(p) => {
                if a < 0 {
                    p[0]
                } else {
                    p[1]
                }
            }
            None => self.d_ja(j, a),
        }
    }
}

/// Membership and the boundary-closest divisor of one set.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SetCheck {
    pub member: bool,
    /// `min |divisor| / threshold`; membership iff `>= 1`.
    pub worst_margin: f64,
    pub worst_divisor: f64,
    pub worst_index: String,
}

impl SetCheck {
    fn new() -> Self {
        SetCheck {
            member: true,
            worst_margin: f64::INFINITY,
            worst_divisor: f64::NAN,
            worst_index: String::new(),
        }
    }

    fn offer(&mut self, div: f64, thr: f64, index: impl FnOnce() -> String) {
        if thr <= 0.0 {
            return;
        }
        let margin = div.abs() / thr;
        if margin < self.worst_margin {
            self.worst_margin = margin;
            self.worst_divisor = div;
            self.worst_index = index();
        }
        if div.abs() < thr {
            self.member = false;
        }
    }

    fn and(mut self, o: &SetCheck) -> Self {
        self.member &= o.member;
        if o.worst_margin < self.worst_margin {
            self.worst_margin = o.worst_margin;
            self.worst_divisor = o.worst_divisor;
            self.worst_index = o.worst_index.clone();
        }
        self
    }
}

#[derive(Clone, Copy, Debug)]
struct Entry {
    value: f64,
    weight: f64,
    i: u32,
    j: u32,
    a: i8,
    ap: i8,
}

/// Sorted tables of `lambda_{i,a} +/- lambda_{j,a'}` with their weights.
#[derive(Clone, Debug)]
struct DivisorTable {
    sums: Vec<Entry>,
    diffs: Vec<Entry>,
    max_sum_weight: f64,
    max_diff_weight: f64,
}

impl DivisorTable {
    fn build(n: usize, lam: impl Fn(usize, i64) -> f64) -> Self {
        let mut sums = Vec::new();
        let mut diffs = Vec::new();
        for i in 0..=n {
            for j in 0..=n {
                for a in [-1i64, 1] {
                    for ap in [-1i64, 1] {
                        let (x, y) = (lam(i, a), lam(j, ap));
                        let base = Entry {
                            value: 0.0,
                            weight: 0.0,
                            i: i as u32,
                            j: j as u32,
                            a: a as i8,
                            ap: ap as i8,
                        };
                        sums.push(Entry {
                            value: x + y,
                            weight: bracket((i + j) as i64),
                            ..base
                        });
                        diffs.push(Entry {
                            value: x - y,
                            weight: bracket(i as i64 - j as i64),
                            ..base
                        });
                    }
                }
            }
        }
        sums.sort_by(|p, q| p.value.total_cmp(&q.value));
        diffs.sort_by(|p, q| p.value.total_cmp(&q.value));
        let mw = |v: &[Entry]| v.iter().map(|e| e.weight).fold(0.0, f64::max);
        DivisorTable {
            max_sum_weight: mw(&sums),
            max_diff_weight: mw(&diffs),
            sums,
            diffs,
        }
    }

    fn window(v: &[Entry], lo: f64, hi: f64) -> &[Entry] {
        let a = v.partition_point(|e| e.value < lo);
        let b = v.partition_point(|e| e.value <= hi);
        &v[a..b]
    }

    /// Checks `|omega.l + v| >= scale * weight / <l>^tau` over both tables.
    fn check(&self, lat: &Lattice, omega: &[f64], scale: f64, tau: f64, out: &mut SetCheck) {
        let z = lat.zero_index();
        for (li, l) in lat.modes().enumerate() {
            let wl = Lattice::dot(omega, &l);
            let lb = crate::lattice::bracket_lj(&l, 0).powf(tau);
            let thr = scale / lb;
            // Every entry whose divisor may fall below the largest threshold.
            let r_sum = thr * self.max_sum_weight;
            let mut probe = |tab: &[Entry], r: f64, kind: char, skip_diag: bool| {
                let w = DivisorTable::window(tab, -wl - r, -wl + r);
                // The best margin outside the window is at least 1; still record the
                // nearest entries on both sides for the report.
                let a = tab.partition_point(|e| e.value < -wl - r);
                let lo = a.saturating_sub(1);
                let hi = (a + w.len() + 1).min(tab.len());
                for e in &tab[lo..hi] {
                    if skip_diag && li == z && e.i == e.j {
                        continue;
                    }
                    out.offer(wl + e.value, thr * e.weight, || {
                        format!("l={l:?} i={} j={} a={} a'={} {kind}", e.i, e.j, e.a, e.ap)
                    });
                }
            };
            probe(&self.sums, r_sum, '+', false);
            probe(&self.diffs, thr * self.max_diff_weight, '-', true);
        }
    }
}

/// Precomputed scan data for one parameter set.
#[derive(Clone, Debug)]
pub struct SetScanner {
    pub params: MeasureParams,
    lat: Lattice,
    tilde1: DivisorTable,
    inf: DivisorTable,
    shifts: Vec<f64>,
}

impl SetScanner {
    pub fn new(params: MeasureParams) -> Self {
        let lat = Lattice::new(params.d, params.l_scan);
        let n = params.j_scan;
        let tilde1 = DivisorTable::build(n, |j, a| params.d_ja(j, a));
        let inf = DivisorTable::build(n, |j, a| params.lambda(j, a));
        let vals = params.c_star.values();
        let mut shifts = Vec::new();
        for &x in &vals {
            for &y in &vals {
                shifts.push(x + y);
                shifts.push(x - y);
            }
        }
        shifts.sort_by(f64::total_cmp);
        shifts.dedup();
        SetScanner {
            params,
            lat,
            tilde1,
            inf,
            shifts,
        }
    }

    fn o_gamma(&self, omega: &[f64], gamma: f64) -> SetCheck {
        let mut out = SetCheck::new();
        let jmax = self.params.j_scan as i64;
        let z = self.lat.zero_index();
        for (li, l) in self.lat.modes().enumerate() {
            let wl = Lattice::dot(omega, &l);
            let thr = gamma / crate::lattice::bracket_lj(&l, 0).powf(self.params.tau0);
            let c = (-wl).round() as i64;
            for j in (c - 1).max(-jmax)..=(c + 1).min(jmax) {
                if li == z && j == 0 {
                    continue;
                }
                out.offer(wl + j as f64, thr, || format!("l={l:?} j={j}"));
            }
        }
        out
    }

    fn o_tilde0(&self, omega: &[f64]) -> SetCheck {
        let g0 = self.params.gamma0();
        let mut out = SetCheck::new();
        let jmax = self.params.j_scan as i64;
        let z = self.lat.zero_index();
        for (li, l) in self.lat.modes().enumerate() {
            let wl = Lattice::dot(omega, &l);
            let lb = crate::lattice::bracket_lj(&l, 0).powf(self.params.tau0);
            for &s in &self.shifts {
                let x = wl + s;
                let reach = g0 * ((x.abs() + 1.0) / (1.0 - g0).max(1e-3) + 1.0) / lb;
                let lo = ((-x - reach).floor() as i64 - 1).max(-jmax);
                let hi = ((-x + reach).ceil() as i64 + 1).min(jmax);
                for j in lo..=hi {
                    if li == z && j == 0 {
                        continue;
                    }
                    out.offer(x + j as f64, g0 * bracket(j) / lb, || format!("l={l:?} j={j} shift={s:.3e}"));
                }
            }
        }
        out
    }

    /// Membership of `omega` in `kind`.
    pub fn check(&self, omega: &[f64], kind: SetKind) -> SetCheck {
        let p = &self.params;
        match kind {
            SetKind::OGamma => self.o_gamma(omega, p.gamma),
            SetKind::OTilde0 => self.o_tilde0(omega),
            SetKind::OTilde1 => {
                let mut out = SetCheck::new();
                self.tilde1.check(&self.lat, omega, p.gamma, p.tau1, &mut out);
                out
            }
            SetKind::OInf => {
                let mut out = SetCheck::new();
                self.inf.check(&self.lat, omega, p.gamma, p.tau, &mut out);
                out.and(&self.o_gamma(omega, p.gamma))
            }
            SetKind::Chain => SetKind::ALL.iter().fold(SetCheck::new(), |acc, k| acc.and(&self.check(omega, *k))),
        }
    }

    pub fn classify(&self, omega: &[f64]) -> FrequencySample {
        let checks: Vec<SetCheck> = SetKind::ALL.iter().map(|k| self.check(omega, *k)).collect();
        FrequencySample {
            omega: omega.to_vec(),
            flags: [checks[0].member, checks[1].member, checks[2].member, checks[3].member],
            checks,
        }
    }
}

/// Membership flags in the order `O-gamma, O-tilde0, O-tilde1, O-inf`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FrequencySample {
    pub omega: Vec<f64>,
    pub flags: [bool; 4],
    pub checks: Vec<SetCheck>,
}

impl FrequencySample {
    pub fn in_chain(&self) -> bool {
        self.flags.iter().all(|&f| f)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sampler {
    Random,
    Halton,
}

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while i > 0 {
        f /= base as f64;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

/// Sample `index` of a frequency sequence in `[1, 2]^d`.
pub fn sample_omega(d: usize, index: u64, seed: u64, sampler: Sampler) -> Vec<f64> {
    match sampler {
        Sampler::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ index);
            (0..d).map(|_| 1.0 + rng.gen::<f64>()).collect()
        }
        Sampler::Halton => {
            const PRIMES: [u64; 8] = [2, 3, 5, 7, 11, 13, 17, 19];
            (0..d).map(|k| 1.0 + radical_inverse(index + 1, PRIMES[k % PRIMES.len()])).collect()
        }
    }
}

/// Wilson score interval at 95%.
pub fn wilson_ci(k: usize, n: usize) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let z = 1.959_963_984_540_054;
    let nf = n as f64;
    let p = k as f64 / nf;
    let den = 1.0 + z * z / nf;
    let centre = (p + z * z / (2.0 * nf)) / den;
    let half = z * (p * (1.0 - p) / nf + z * z / (4.0 * nf * nf)).sqrt() / den;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MeasureEstimate {
    pub kind: SetKind,
    pub gamma: f64,
    pub samples: usize,
    pub excluded: usize,
    pub fraction_excluded: f64,
    pub wilson_ci_95: (f64, f64),
}

/// Fraction of `n` samples outside `kind`, with the per-sample records.
pub fn estimate_measure(scanner: &SetScanner, kind: SetKind, n: usize, seed: u64, sampler: Sampler) -> (MeasureEstimate, Vec<(Vec<f64>, SetCheck)>) {
    let d = scanner.params.d;
    let rows: Vec<(Vec<f64>, SetCheck)> = (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let w = sample_omega(d, i, seed, sampler);
            let c = scanner.check(&w, kind);
            (w, c)
        })
        .collect();
    let excluded = rows.iter().filter(|r| !r.1.member).count();
    let est = MeasureEstimate {
        kind,
        gamma: scanner.params.gamma,
        samples: n,
        excluded,
        fraction_excluded: excluded as f64 / n.max(1) as f64,
        wilson_ci_95: wilson_ci(excluded, n),
    };
    (est, rows)
}
