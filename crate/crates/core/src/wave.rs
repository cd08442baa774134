//! The first-order system `i q_t = (D + eps K(omega t)) q` obtained from
//! `u_tt - u_xx + m u + eps W u = 0`, and the built-in perturbation families.

use crate::kam::BlockDiagHamiltonian;
use crate::lattice::bracket;
use crate::operators::{MatrixPair, QPOperator};
use crate::symbols::{chi, Symbol};
use crate::{Error, Result, C64};
use serde::{Deserialize, Serialize};

impl std::fmt::Display for TrigTerm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let l: Vec<String> = self.l.iter().map(|x| x.to_string()).collect();
        write!(f, "{}:{}:{}:{}", if self.sine { "sin" } else { "cos" }, self.amp, l.join(","), self.k)
    }
}

/// `cos(l.theta + k x)` or `sin(l.theta + k x)` with an amplitude.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrigTerm {
    pub amp: f64,
    pub l: Vec<i32>,
    pub k: i32,
    pub sine: bool,
}

impl TrigTerm {
    /// Parses `cos:AMP:l1,l2,...:k` (or `sin:...`).
    pub fn parse(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split(':').map(str::trim).collect();
        if parts.len() != 4 {
            return Err(Error::Config(format!("trig term `{s}` is not kind:amp:l:k")));
        }
        let sine = match parts[0] {
            "cos" => false,
            "sin" => true,
            other => return Err(Error::Config(format!("trig kind `{other}` (expected cos or sin)"))),
        };
        let num = |x: &str| x.parse::<f64>().map_err(|_| Error::Config(format!("bad number `{x}` in `{s}`")));
        let int = |x: &str| x.trim().parse::<i32>().map_err(|_| Error::Config(format!("bad integer `{x}` in `{s}`")));
        let l = parts[2].split(',').map(int).collect::<Result<Vec<_>>>()?;
        Ok(TrigTerm {
            amp: num(parts[1])?,
            l,
            k: int(parts[3])?,
            sine,
        })
    }

    /// `;`-separated list; empty string gives no terms.
    pub fn parse_list(s: &str) -> Result<Vec<Self>> {
        s.split(';').filter(|t| !t.trim().is_empty()).map(Self::parse).collect()
    }

    /// Fourier coefficients `(l, k, value)` of the real function.
    pub fn coefficients(&self) -> Vec<(Vec<i32>, i32, C64)> {
        let neg: Vec<i32> = self.l.iter().map(|x| -x).collect();
        let zero = self.k == 0 && self.l.iter().all(|&x| x == 0);
        if zero {
            return if self.sine {
                vec![]
            } else {
                vec![(self.l.clone(), 0, C64::new(self.amp, 0.0))]
            };
        }
        let half = 0.5 * self.amp;
        if self.sine {
            vec![(self.l.clone(), self.k, C64::new(0.0, -half)), (neg, -self.k, C64::new(0.0, half))]
        } else {
            vec![(self.l.clone(), self.k, C64::new(half, 0.0)), (neg, -self.k, C64::new(half, 0.0))]
        }
    }
}

/// Built-in perturbation generators.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum Family {
    /// `w = c* <xi> chi(xi) + p(theta, x)` with `p` a real trigonometric polynomial.
    Constant { c_star: f64, lower: Vec<TrigTerm> },
    /// `w = (c* + v(theta, x)) <xi> chi(xi)`, symmetrized, with `v` of zero average.
    Oscillatory { c_star: f64, terms: Vec<TrigTerm> },
    /// `a(xi) = c1` on even, `c2` on odd frequencies, plus an oscillatory part.
    TwoLevel { c1: f64, c2: f64, terms: Vec<TrigTerm> },
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::Constant { .. } => "constant",
            Family::Oscillatory { .. } => "oscillatory",
            Family::TwoLevel { .. } => "two-level",
        }
    }
}

/// Truncation sizes of a model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Truncation {
    pub d: usize,
    pub l_max: i32,
    pub kx: i32,
    pub m: usize,
}

/// Model parameters and Diophantine constants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WaveConfig {
    pub mass: f64,
    pub epsilon: f64,
    pub trunc: Truncation,
    pub family: Family,
    pub omega: Vec<f64>,
    pub gamma: f64,
    pub tau0: f64,
    pub tau1: f64,
    pub tau: f64,
    pub seed: u64,
}

impl WaveConfig {
    /// Checks positivity and the chain `tau0 > d`, `tau1 > tau0 + d`,
    /// `tau > max(d + tau1/rho - 1/rho, d + tau0/rho - 1)` with `rho = min(1, e)`.
    pub fn validate(&self, e_decay: f64) -> Result<()> {
        let d = self.trunc.d as f64;
        let fail = |m: String| Err(Error::Config(m));
        if self.mass <= 0.0 {
            return fail(format!("mass m = {} must be positive", self.mass));
        }
        if self.epsilon < 0.0 {
            return fail(format!("epsilon = {} must be non-negative", self.epsilon));
        }
        if self.omega.len() != self.trunc.d {
            return fail(format!("omega has {} components, d = {}", self.omega.len(), self.trunc.d));
        }
        if self.gamma <= 0.0 {
            return fail("gamma must be positive".into());
        }
        if self.tau0 <= d {
            return fail(format!("tau0 > d violated: tau0 = {}, d = {d}", self.tau0));
        }
        if self.tau1 <= self.tau0 + d {
            return fail(format!("tau1 > tau0 + d violated: tau1 = {}, tau0 + d = {}", self.tau1, self.tau0 + d));
        }
        let rho = e_decay.min(1.0);
        let bound = (d + self.tau1 / rho - 1.0 / rho).max(d + self.tau0 / rho - 1.0);
        if self.tau <= bound {
            return fail(format!(
                "tau > max(d + tau1/rho - 1/rho, d + tau0/rho - 1) violated: tau = {}, bound = {bound}",
                self.tau
            ));
        }
        if self.trunc.m < 1 || self.trunc.kx < 0 || self.trunc.l_max < 0 {
            return fail("truncations must satisfy M >= 1, Kx >= 0, L >= 0".into());
        }
        Ok(())
    }
}

/// A perturbation symbol with the data of Condition II.
#[derive(Clone, Debug)]
pub struct PerturbationW {
    pub w: Symbol,
    /// The finite set of values taken by `a(xi)`.
    pub c_star_values: Vec<f64>,
    /// `a(xi)` for `xi = -M..=M`.
    pub a_of_xi: Vec<f64>,
    pub e_decay: f64,
    pub b_bound: f64,
}

/// Result of the Condition I-II checks.
#[derive(Clone, Debug, Serialize)]
pub struct ConditionReport {
    pub hermitian_defect: f64,
    pub reality_defect: f64,
    /// `|<w>(xi) - a(xi)<xi>| <xi>^{e-1}` per `xi`.
    pub b_profile: Vec<f64>,
    pub b_max: f64,
}

impl PerturbationW {
    /// Wraps a user symbol, running the condition checks. With `unchecked`
    /// the failures are logged instead of returned.
    pub fn from_symbol(w: Symbol, c_star_values: Vec<f64>, a_of_xi: Vec<f64>, e_decay: f64, b_bound: f64, unchecked: bool) -> Result<Self> {
        let p = PerturbationW {
            w,
            c_star_values,
            a_of_xi,
            e_decay,
            b_bound,
        };
        match p.check() {
            Ok(_) => Ok(p),
            Err(e) if unchecked => {
                log::warn!("perturbation accepted unchecked: {e}");
                Ok(p)
            }
            Err(e) => Err(e),
        }
    }

    pub fn report(&self) -> ConditionReport {
        let q = self.w.quantize();
        let avg = self.w.average();
        let m = self.w.m as i64;
        let b_profile: Vec<f64> = (-m..=m)
            .map(|xi| {
                let a = self.a_of_xi[(xi + m) as usize];
                (avg[(xi + m) as usize] - C64::new(a * bracket(xi), 0.0)).norm() * bracket(xi).powf(self.e_decay - 1.0)
            })
            .collect();
        let b_max = b_profile.iter().cloned().fold(0.0, f64::max);
        ConditionReport {
            hermitian_defect: q.hermitian_defect(),
            reality_defect: q.reality_defect(),
            b_profile,
            b_max,
        }
    }

    pub fn check(&self) -> Result<ConditionReport> {
        let r = self.report();
        if r.hermitian_defect > 1e-12 || r.reality_defect > 1e-12 {
            return Err(Error::Model(format!(
                "Condition I fails: self-adjoint defect {:.3e}, reality defect {:.3e}",
                r.hermitian_defect, r.reality_defect
            )));
        }
        let in_gamma = self.a_of_xi.iter().all(|a| self.c_star_values.iter().any(|c| c == a));
        if !in_gamma {
            return Err(Error::Model("Condition II fails: a(xi) takes values outside Gamma*".into()));
        }
        if r.b_max > self.b_bound * (1.0 + 1e-12) + 1e-14 {
            let profile: Vec<String> = r.b_profile.iter().map(|x| format!("{x:.3e}")).collect();
            return Err(Error::Model(format!(
                "Condition II fails: |<w> - a<xi>| <xi>^(e-1) reaches {:.3e} > C = {:.3e}; profile [{}]",
                r.b_max,
                self.b_bound,
                profile.join(", ")
            )));
        }
        Ok(r)
    }

    /// `c*(xi)` in the normalisation of the first-order system: the leading
    /// part `eps a(xi) / 2` of `<k>(xi)`.
    pub fn c_star_scaled(&self, epsilon: f64) -> Vec<f64> {
        self.a_of_xi.iter().map(|a| 0.5 * epsilon * a).collect()
    }
}

fn add_symmetrized_multiplier(w: &mut Symbol, terms: &[TrigTerm], weight: impl Fn(i64) -> f64) -> Result<()> {
    // (f m + (f m)*)/2 has coefficients f_hat(l, k) (m(xi) + m(xi + k)) / 2 for real f, m.
    let lat = w.lat.clone();
    for t in terms {
        for (l, k, c) in t.coefficients() {
            let li = lat
                .index(&l)
                .ok_or_else(|| Error::Config(format!("term frequency {l:?} exceeds L = {}", lat.l_max)))?;
            if k.abs() > w.kx {
                return Err(Error::Config(format!("term x-frequency {k} exceeds Kx = {}", w.kx)));
            }
            for xi in -(w.m as i64)..=w.m as i64 {
                let v = w.at(li, k as i64, xi) + c * 0.5 * (weight(xi) + weight(xi + k as i64));
                w.set_at(li, k as i64, xi, v);
            }
        }
    }
    Ok(())
}

/// Builds the perturbation symbol of a family on the given truncation.
pub fn make_perturbation(family: &Family, t: &Truncation) -> Result<PerturbationW> {
    make_perturbation_with(family, t, false)
}

/// As [`make_perturbation`]; with `unchecked` failed Condition checks are
/// logged instead of returned.
pub fn make_perturbation_with(family: &Family, t: &Truncation, unchecked: bool) -> Result<PerturbationW> {
    let mut w = Symbol::zeros(t.d, t.l_max, t.kx, t.m, 1.0);
    let z = w.lat.zero_index();
    let m = t.m as i64;
    let order_one = |xi: i64| bracket(xi) * chi(xi);
    let (a_of_xi, gamma_star, b_bound): (Vec<f64>, Vec<f64>, f64) = match family {
        Family::Constant { c_star, lower } => {
            add_symmetrized_multiplier(&mut w, lower, |_| 1.0)?;
            let mean: f64 = lower.iter().filter(|t| t.k == 0 && t.l.iter().all(|&x| x == 0) && !t.sine).map(|t| t.amp).sum();
            (vec![*c_star; 2 * t.m + 1], vec![*c_star], c_star.abs() + mean.abs())
        }
        Family::Oscillatory { c_star, terms } => {
            add_symmetrized_multiplier(&mut w, terms, order_one)?;
            (vec![*c_star; 2 * t.m + 1], vec![*c_star], c_star.abs())
        }
        Family::TwoLevel { c1, c2, terms } => {
            add_symmetrized_multiplier(&mut w, terms, order_one)?;
            let a: Vec<f64> = (-m..=m).map(|xi| if xi.rem_euclid(2) == 0 { *c1 } else { *c2 }).collect();
            (a, vec![*c1, *c2], c1.abs().max(c2.abs()))
        }
    };
    for xi in -m..=m {
        let v = w.at(z, 0, xi) + a_of_xi[(xi + m) as usize] * order_one(xi);
        w.set_at(z, 0, xi, v);
    }
    PerturbationW::from_symbol(w, gamma_star, a_of_xi, 1.0, b_bound, unchecked)
}

/// `D`, `eps K` and the pieces needed downstream.
#[derive(Clone, Debug)]
pub struct FirstOrderSystem {
    pub mass: f64,
    /// `sqrt(j^2 + m)` for `j = -M..=M`.
    pub d_diag: Vec<f64>,
    /// `eps K = eps/2 D^{-1/2} Op(w) D^{-1/2}`.
    pub k_op: QPOperator,
    /// `(diag, anti) = (eps K, eps K)`.
    pub k_pair: MatrixPair,
}

impl FirstOrderSystem {
    pub fn d_operator(&self) -> QPOperator {
        let m = self.k_op.m as i64;
        QPOperator::diagonal(self.k_op.d(), self.k_op.lat.l_max, self.k_op.m, |j| {
            C64::new(self.d_diag[(j + m) as usize], 0.0)
        })
    }

    /// `D + eps K` as an operator matrix.
    pub fn hamiltonian(&self) -> MatrixPair {
        let mut h = self.k_pair.clone();
        h.diag = h.diag.plus(&self.d_operator()).expect("same truncation");
        h
    }

    /// Time-independent seed `D` in block form.
    pub fn d_blocks(&self) -> BlockDiagHamiltonian {
        BlockDiagHamiltonian::from_diagonal(&self.d_diag)
    }

    /// `K_1 = diag(K, -K)` and `K_2 = [[0, K], [-K, 0]]`.
    pub fn split_k(&self) -> (MatrixPair, MatrixPair) {
        let zero = self.k_op.zeros_like();
        (
            MatrixPair {
                diag: self.k_op.clone(),
                anti: zero.clone(),
            },
            MatrixPair {
                diag: zero,
                anti: self.k_op.clone(),
            },
        )
    }

    /// `<k>(xi) = [K_hat(0)]^xi_xi`.
    pub fn k_average(&self) -> Vec<f64> {
        let s = &self.k_op.slices[self.k_op.lat.zero_index()];
        (0..s.nrows()).map(|i| s[(i, i)].re).collect()
    }

    /// Symbol of `eps K` read off its matrix.
    pub fn k_symbol(&self, kx: i32) -> Symbol {
        Symbol::dequantize(&self.k_op, kx, 0.0)
    }
}

pub fn build_first_order(w: &PerturbationW, cfg: &WaveConfig) -> FirstOrderSystem {
    let t = cfg.trunc;
    let m = t.m as i64;
    let d_diag: Vec<f64> = (-m..=m).map(|j| ((j * j) as f64 + cfg.mass).sqrt()).collect();
    let mut k_op = w.w.quantize();
    for s in &mut k_op.slices {
        for c in 0..s.ncols() {
            for r in 0..s.nrows() {
                s[(r, c)] *= 0.5 * cfg.epsilon / (d_diag[r] * d_diag[c]).sqrt();
            }
        }
    }
    let k_pair = MatrixPair {
        diag: k_op.clone(),
        anti: k_op.clone(),
    };
    FirstOrderSystem {
        mass: cfg.mass,
        d_diag,
        k_op,
        k_pair,
    }
}

/// `D = B + Z` with `B = |D_x|` and `Z` of order `-1`; returns `(B_j, Z_j)`
/// for `j = -M..=M`.
pub fn split_d(mass: f64, m: usize) -> (Vec<f64>, Vec<f64>) {
    let m = m as i64;
    let b: Vec<f64> = (-m..=m).map(|j| j.abs() as f64).collect();
    let z: Vec<f64> = (-m..=m).map(|j| ((j * j) as f64 + mass).sqrt() - j.abs() as f64).collect();
    (b, z)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trunc(d: usize) -> Truncation {
        Truncation { d, l_max: 2, kx: 2, m: 8 }
    }

    fn cfg(family: Family, eps: f64) -> WaveConfig {
        WaveConfig {
            mass: 1.0,
            epsilon: eps,
            trunc: trunc(1),
            family,
            omega: vec![1.4],
            gamma: 0.05,
            tau0: 1.5,
            tau1: 3.0,
            tau: 4.0,
            seed: 0,
        }
    }

    #[test]
    fn constant_family_average() {
        let f = Family::Constant { c_star: 0.3, lower: vec![] };
        let w = make_perturbation(&f, &trunc(1)).unwrap();
        let avg = w.w.average();
        for (i, a) in avg.iter().enumerate() {
            let xi = i as i64 - 8;
            assert_eq!(a.re, 0.3 * bracket(xi) * chi(xi));
        }
        // b is the cut at the origin only.
        assert!(w.report().b_profile.iter().enumerate().all(|(i, &b)| i == 8 || b == 0.0));
    }

    #[test]
    fn oscillatory_family_average_and_symmetry() {
        let v = TrigTerm::parse_list("cos:0.5:1:1; cos:0.5:1:-1").unwrap(); // cos(theta)cos(x)
        let f = Family::Oscillatory { c_star: 0.2, terms: v };
        let w = make_perturbation(&f, &trunc(1)).unwrap();
        for (i, a) in w.w.average().iter().enumerate() {
            let xi = i as i64 - 8;
            assert!((a.re - 0.2 * bracket(xi) * chi(xi)).abs() < 1e-15);
        }
        let r = w.report();
        assert!(r.hermitian_defect < 1e-15 && r.reality_defect < 1e-15);
    }

    #[test]
    fn two_level_average_alternates() {
        let f = Family::TwoLevel {
            c1: 0.1,
            c2: 0.4,
            terms: TrigTerm::parse_list("sin:1.0:1:2").unwrap(),
        };
        let w = make_perturbation(&f, &trunc(1)).unwrap();
        for (i, a) in w.w.average().iter().enumerate() {
            let xi = i as i64 - 8;
            let expect = if xi % 2 == 0 { 0.1 } else { 0.4 } * bracket(xi) * chi(xi);
            assert!((a.re - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn nonzero_mean_is_rejected() {
        let f = Family::Oscillatory {
            c_star: 0.2,
            terms: TrigTerm::parse_list("cos:0.3:0:0").unwrap(),
        };
        assert!(matches!(make_perturbation(&f, &trunc(1)), Err(Error::Model(_))));
    }

    #[test]
    fn zero_perturbation_gives_free_system() {
        let f = Family::Oscillatory { c_star: 0.0, terms: vec![] };
        let c = cfg(f.clone(), 0.1);
        let w = make_perturbation(&f, &c.trunc).unwrap();
        let sys = build_first_order(&w, &c);
        assert_eq!(sys.k_pair.max_abs(), 0.0);
        assert_eq!(sys.d_diag[8], 1.0);
        assert!((sys.d_diag[11] - 10f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn k_entry_at_origin() {
        // w = <xi> (no cutoff at the origin): K at (0,0) = 1/2 <0> / sqrt(1 * 1).
        let c = cfg(Family::Oscillatory { c_star: 1.0, terms: vec![] }, 1.0);
        let mut w = make_perturbation(&c.family, &c.trunc).unwrap();
        w.w.set(&[0], 0, 0, C64::new(1.0, 0.0)).unwrap();
        let sys = build_first_order(&w, &c);
        assert_eq!(sys.k_op.entry(&[0], 0, 0), C64::new(0.5, 0.0));
    }

    #[test]
    fn k_is_selfadjoint_and_real() {
        let terms = TrigTerm::parse_list("cos:1.0:1:1; sin:0.7:2:-2; cos:0.3:1:0").unwrap();
        let c = cfg(Family::Oscillatory { c_star: 0.4, terms }, 0.01);
        let w = make_perturbation(&c.family, &c.trunc).unwrap();
        let sys = build_first_order(&w, &c);
        assert!(sys.k_op.hermitian_defect() < 1e-12);
        assert!(sys.k_op.reality_defect() < 1e-12);
        assert!(sys.k_pair.structure_check().max() < 1e-12);
    }

    #[test]
    fn split_d_values() {
        let (b, z) = split_d(1.0, 5);
        assert_eq!(b[5], 0.0);
        assert_eq!(z[5], 1.0);
        assert!((z[8] - (10f64.sqrt() - 3.0)).abs() < 1e-15);
        assert!((z[8] - 0.16228).abs() < 1e-5);
        for (i, zj) in z.iter().enumerate() {
            let j = i as i64 - 5;
            assert!(zj * bracket(j) <= 1.0 + 1e-15);
        }
    }

    #[test]
    fn tau_chain_is_validated() {
        let mut c = cfg(Family::Oscillatory { c_star: 0.0, terms: vec![] }, 0.1);
        assert!(c.validate(1.0).is_ok());
        c.tau1 = 2.0;
        let err = c.validate(1.0).unwrap_err().to_string();
        assert!(err.contains("tau1 > tau0 + d"), "{err}");
    }
}
