//! Symbols `a(theta, x, xi)` on `T^d x T x Z`, stored by their Fourier
//! coefficients `a_hat(l, k, xi)` with `|l| <= L`, `|k| <= Kx`, `|xi| <= M`.

use crate::lattice::{bracket, bracket_lj, Lattice};
use crate::linalg::I;
use crate::operators::QPOperator;
use crate::{Error, Result, C64};

/// Cutoff `chi`: zero at the origin, one elsewhere.
pub fn chi(xi: i64) -> f64 {
    if xi == 0 {
        0.0
    } else {
        1.0
    }
}

/// Cutoff `chi_1`: zero for `|xi| <= 1`, one for `|xi| >= 2`.
pub fn chi1(xi: i64) -> f64 {
    if xi.abs() >= 2 {
        1.0
    } else {
        0.0
    }
}

/// `chi_1` restricted to positive frequencies.
pub fn chi1_plus(xi: i64) -> f64 {
    if xi > 0 {
        chi1(xi)
    } else {
        0.0
    }
}

/// `chi_1` restricted to non-positive frequencies.
pub fn chi1_minus(xi: i64) -> f64 {
    if xi <= 0 {
        chi1(xi)
    } else {
        0.0
    }
}

/// Sign of the transport operator `omega . d_theta +/- d_x`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Transport {
    Plus,
    Minus,
}

impl Transport {
    fn sign(self) -> f64 {
        match self {
            Transport::Plus => 1.0,
            Transport::Minus => -1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Symbol {
    pub lat: Lattice,
    pub kx: i32,
    pub m: usize,
    /// Nominal order in `xi`.
    pub order: f64,
    data: Vec<C64>,
}

impl Symbol {
    pub fn zeros(d: usize, l_max: i32, kx: i32, m: usize, order: f64) -> Self {
        let lat = Lattice::new(d, l_max);
        let len = lat.len() * (2 * kx as usize + 1) * (2 * m + 1);
        Symbol {
            lat,
            kx,
            m,
            order,
            data: vec![C64::new(0.0, 0.0); len],
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.lat.d, self.lat.l_max, self.kx, self.m, self.order)
    }

    fn nxi(&self) -> usize {
        2 * self.m + 1
    }

    fn nk(&self) -> usize {
        2 * self.kx as usize + 1
    }

    #[inline]
    fn pos(&self, l_idx: usize, k: i64, xi: i64) -> Option<usize> {
        if k.abs() > self.kx as i64 || xi.abs() > self.m as i64 {
            return None;
        }
        Some((l_idx * self.nk() + (k + self.kx as i64) as usize) * self.nxi() + (xi + self.m as i64) as usize)
    }

    /// Coefficient at lattice index `l_idx`; zero outside the truncation.
    #[inline]
    pub fn at(&self, l_idx: usize, k: i64, xi: i64) -> C64 {
        self.pos(l_idx, k, xi).map(|p| self.data[p]).unwrap_or(C64::new(0.0, 0.0))
    }

    pub fn get(&self, l: &[i32], k: i64, xi: i64) -> C64 {
        match self.lat.index(l) {
            Some(i) => self.at(i, k, xi),
            None => C64::new(0.0, 0.0),
        }
    }

    pub fn set(&mut self, l: &[i32], k: i64, xi: i64, v: C64) -> Result<()> {
        let p = self
            .lat
            .index(l)
            .and_then(|i| self.pos(i, k, xi))
            .ok_or_else(|| Error::OutOfRange(format!("(l, k, xi) = ({l:?}, {k}, {xi})")))?;
        self.data[p] = v;
        Ok(())
    }

    #[inline]
    pub fn set_at(&mut self, l_idx: usize, k: i64, xi: i64, v: C64) {
        if let Some(p) = self.pos(l_idx, k, xi) {
            self.data[p] = v;
        }
    }

    /// Iterates over `(l_idx, k, xi, value)`.
    pub fn entries(&self) -> impl Iterator<Item = (usize, i64, i64, C64)> + '_ {
        let (nk, nxi) = (self.nk(), self.nxi());
        self.data.iter().enumerate().map(move |(p, &v)| {
            let xi = (p % nxi) as i64 - self.m as i64;
            let k = ((p / nxi) % nk) as i64 - self.kx as i64;
            (p / (nxi * nk), k, xi, v)
        })
    }

    fn check_shape(&self, o: &Self) -> Result<()> {
        if self.lat != o.lat || self.kx != o.kx || self.m != o.m {
            return Err(Error::Truncation("symbols with different truncations".into()));
        }
        Ok(())
    }

    pub fn plus(&self, o: &Self) -> Result<Self> {
        self.check_shape(o)?;
        let mut out = self.clone();
        out.data.iter_mut().zip(&o.data).for_each(|(a, b)| *a += b);
        out.order = self.order.max(o.order);
        Ok(out)
    }

    pub fn minus(&self, o: &Self) -> Result<Self> {
        self.check_shape(o)?;
        let mut out = self.clone();
        out.data.iter_mut().zip(&o.data).for_each(|(a, b)| *a -= b);
        out.order = self.order.max(o.order);
        Ok(out)
    }

    pub fn scaled(&self, c: C64) -> Self {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|a| *a *= c);
        out
    }

    fn map_entries(&self, f: impl Fn(usize, i64, i64, C64) -> C64) -> Self {
        let mut out = self.clone();
        let vals: Vec<C64> = self.entries().map(|(l, k, xi, v)| f(l, k, xi, v)).collect();
        out.data = vals;
        out
    }

    /// Pointwise product with a cutoff in `xi`.
    pub fn times_cutoff(&self, f: impl Fn(i64) -> f64) -> Self {
        self.map_entries(|_, _, xi, v| v * f(xi))
    }

    /// Drops entries that `Op` cannot see (`|xi + k| > M`).
    pub fn representable(&self) -> Self {
        let m = self.m as i64;
        self.map_entries(|_, k, xi, v| if (xi + k).abs() > m { C64::new(0.0, 0.0) } else { v })
    }

    /// Average over `(theta, x)`: `xi -> a_hat(0, 0, xi)`.
    pub fn average(&self) -> Vec<C64> {
        let z = self.lat.zero_index();
        (-(self.m as i64)..=self.m as i64).map(|xi| self.at(z, 0, xi)).collect()
    }

    /// `a - <a>`.
    pub fn minus_average(&self) -> Self {
        let mut out = self.clone();
        let z = self.lat.zero_index();
        for xi in -(self.m as i64)..=self.m as i64 {
            out.set_at(z, 0, xi, C64::new(0.0, 0.0));
        }
        out
    }

    pub fn dx(&self) -> Self {
        self.map_entries(|_, k, _, v| v * I * k as f64)
    }

    /// `omega . d_theta a`.
    pub fn dtheta(&self, omega: &[f64]) -> Self {
        let w: Vec<f64> = self.lat.modes().map(|l| Lattice::dot(omega, &l)).collect();
        self.map_entries(|l, _, _, v| v * I * w[l])
    }

    /// `(omega . d_theta +/- d_x) a`.
    pub fn transport(&self, omega: &[f64], t: Transport) -> Self {
        let w: Vec<f64> = self.lat.modes().map(|l| Lattice::dot(omega, &l)).collect();
        let s = t.sign();
        self.map_entries(|l, k, _, v| v * I * (w[l] + s * k as f64))
    }

    /// Inverse of the transport operator on zero-average symbols. Fails when a
    /// nonzero coefficient sits on a divisor `|omega.l +/- k|` below
    /// `gamma <l>^-tau0`.
    pub fn transport_inverse(&self, omega: &[f64], t: Transport, gamma: f64, tau0: f64) -> Result<Self> {
        let s = t.sign();
        let mut out = self.zeros_like();
        let z = self.lat.zero_index();
        for (li, l) in self.lat.modes().enumerate() {
            let wl = Lattice::dot(omega, &l);
            let lb = bracket_lj(&l, 0).powf(tau0);
            for k in -(self.kx as i64)..=self.kx as i64 {
                if li == z && k == 0 {
                    continue;
                }
                let div = wl + s * k as f64;
                for xi in -(self.m as i64)..=self.m as i64 {
                    let v = self.at(li, k, xi);
                    if v.re == 0.0 && v.im == 0.0 {
                        continue;
                    }
                    if div.abs() < gamma / lb || div == 0.0 {
                        return Err(Error::NonAdmissible(format!(
                            "|omega.l {} k| = {:.3e} at l = {l:?}, k = {k}",
                            if s > 0.0 { "+" } else { "-" },
                            div.abs()
                        )));
                    }
                    out.set_at(li, k, xi, v / (I * div));
                }
            }
        }
        Ok(out)
    }

    /// Symbol of the adjoint: `a*_hat(l, k, xi) = conj(a_hat(-l, -k, xi + k))`;
    /// entries whose shifted frequency leaves the window are dropped.
    pub fn adjoint(&self) -> Self {
        let mut out = self.zeros_like();
        for li in 0..self.lat.len() {
            let neg = self.lat.neg_index(li);
            for k in -(self.kx as i64)..=self.kx as i64 {
                for xi in -(self.m as i64)..=self.m as i64 {
                    out.set_at(li, k, xi, self.at(neg, -k, xi + k).conj());
                }
            }
        }
        out
    }

    /// `Op(a)`: `[A_hat(l)]^{k'}_j = a_hat(l, k' - j, j)`.
    pub fn quantize(&self) -> QPOperator {
        let mut op = QPOperator::zeros(self.lat.d, self.lat.l_max, self.m);
        let m = self.m as i64;
        for li in 0..self.lat.len() {
            let s = &mut op.slices[li];
            for j in -m..=m {
                for k in -(self.kx as i64)..=self.kx as i64 {
                    let kp = j + k;
                    if kp.abs() <= m {
                        s[((kp + m) as usize, (j + m) as usize)] = self.at(li, k, j);
                    }
                }
            }
        }
        op
    }

    /// Recovers the symbol of `A` on `|k| <= kx`: `a_hat(l, k, xi) = [A_hat(l)]^{xi+k}_xi`.
    pub fn dequantize(a: &QPOperator, kx: i32, order: f64) -> Self {
        let mut out = Symbol::zeros(a.lat.d, a.lat.l_max, kx, a.m, order);
        let m = a.m as i64;
        for li in 0..a.lat.len() {
            let s = &a.slices[li];
            for xi in -m..=m {
                for k in -(kx as i64)..=kx as i64 {
                    let kp = xi + k;
                    if kp.abs() <= m {
                        out.set_at(li, k, xi, s[((kp + m) as usize, (xi + m) as usize)]);
                    }
                }
            }
        }
        out
    }

    /// `||a(., ., xi)||_s`.
    pub fn sobolev_norm_at(&self, xi: i64, s: f64) -> f64 {
        let mut acc = 0.0;
        for (li, l) in self.lat.modes().enumerate() {
            for k in -(self.kx as i64)..=self.kx as i64 {
                let v = self.at(li, k, xi);
                acc += bracket_lj(&l, k).powf(2.0 * s) * v.norm_sqr();
            }
        }
        acc.sqrt()
    }

    /// Forward difference `Delta^beta a` in `xi`, defined where `xi + beta <= M`.
    pub fn forward_difference(&self, beta: usize) -> Self {
        let mut cur = self.clone();
        let m = self.m as i64;
        for _ in 0..beta {
            let prev = cur.clone();
            for (li, k, xi, _) in prev.entries().collect::<Vec<_>>() {
                let next = if xi < m { prev.at(li, k, xi + 1) } else { prev.at(li, k, xi) };
                cur.set_at(li, k, xi, next - prev.at(li, k, xi));
            }
        }
        cur.order = self.order - beta as f64;
        cur
    }

    /// `|a|_{m, s, alpha} = max_{beta <= alpha} sup_xi ||Delta^beta a(xi)||_s <xi>^{-m + beta}`,
    /// the supremum over `xi` with `xi + beta` inside the window.
    pub fn symbol_norm_alpha(&self, m: f64, s: f64, alpha: usize) -> f64 {
        let mut best: f64 = 0.0;
        for beta in 0..=alpha {
            let da = self.forward_difference(beta);
            for xi in -(self.m as i64)..=(self.m as i64 - beta as i64) {
                let v = da.sobolev_norm_at(xi, s) * bracket(xi).powf(-m + beta as f64);
                best = best.max(v);
            }
        }
        best
    }

    /// `|a|_{m, s, 0}`.
    pub fn symbol_norm(&self, m: f64, s: f64) -> f64 {
        self.symbol_norm_alpha(m, s, 0)
    }

    /// Symbol of `Op(a) Op(b)` on the window:
    /// `sum a_hat(l1, k1, xi + k2) b_hat(l2, k2, xi)` with `l1 + l2 = l`, `k1 + k2 = k`.
    pub fn exact_compose(a: &Self, b: &Self) -> Result<Self> {
        if a.lat != b.lat || a.m != b.m {
            return Err(Error::Truncation("symbols with different truncations".into()));
        }
        let kx = a.kx + b.kx;
        let mut out = Symbol::zeros(a.lat.d, a.lat.l_max, kx, a.m, a.order + b.order);
        let m = a.m as i64;
        let mut buf = vec![0i32; a.lat.d];
        for l1i in 0..a.lat.len() {
            let l1 = a.lat.mode(l1i);
            for l2i in 0..b.lat.len() {
                let l2 = b.lat.mode(l2i);
                for (t, x) in buf.iter_mut().enumerate() {
                    *x = l1[t] + l2[t];
                }
                let Some(li) = out.lat.index(&buf) else { continue };
                for k2 in -(b.kx as i64)..=b.kx as i64 {
                    for xi in -m..=m {
                        let bv = b.at(l2i, k2, xi);
                        if bv.re == 0.0 && bv.im == 0.0 || (xi + k2).abs() > m {
                            continue;
                        }
                        for k1 in -(a.kx as i64)..=a.kx as i64 {
                            let av = a.at(l1i, k1, xi + k2);
                            if let Some(p) = out.pos(li, k1 + k2, xi) {
                                out.data[p] += av * bv;
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    /// Truncated composition `a #_{<N} b = sum_{beta < N} binom(k2, beta) Delta^beta a * b`,
    /// the lattice form of `sum 1/(i^beta beta!) d_xi^beta a d_x^beta b`
    /// (forward differences, constant extension past the window).
    pub fn compose(a: &Self, b: &Self, n: usize) -> Result<Self> {
        if a.lat != b.lat || a.m != b.m {
            return Err(Error::Truncation("symbols with different truncations".into()));
        }
        let kx = a.kx + b.kx;
        let mut out = Symbol::zeros(a.lat.d, a.lat.l_max, kx, a.m, a.order + b.order);
        let m = a.m as i64;
        let mut buf = vec![0i32; a.lat.d];
        for beta in 0..n {
            let da = a.forward_difference(beta);
            for l1i in 0..a.lat.len() {
                let l1 = a.lat.mode(l1i);
                for l2i in 0..b.lat.len() {
                    let l2 = b.lat.mode(l2i);
                    for (t, x) in buf.iter_mut().enumerate() {
                        *x = l1[t] + l2[t];
                    }
                    let Some(li) = out.lat.index(&buf) else { continue };
                    for k2 in -(b.kx as i64)..=b.kx as i64 {
                        let bin = falling_binomial(k2, beta);
                        if bin == 0.0 {
                            continue;
                        }
                        for xi in -m..=m {
                            let bv = b.at(l2i, k2, xi);
                            if bv.re == 0.0 && bv.im == 0.0 {
                                continue;
                            }
                            for k1 in -(a.kx as i64)..=a.kx as i64 {
                                let av = da.at(l1i, k1, xi);
                                if let Some(p) = out.pos(li, k1 + k2, xi) {
                                    out.data[p] += av * bv * bin;
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }
}

/// `k (k - 1) ... (k - beta + 1) / beta!`.
fn falling_binomial(k: i64, beta: usize) -> f64 {
    let mut v = 1.0;
    for t in 0..beta {
        v *= (k - t as i64) as f64 / (t + 1) as f64;
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn plane_wave(d: usize) -> Symbol {
        // e^{i theta_1 + i x}, constant in xi.
        let mut a = Symbol::zeros(d, 2, 2, 6, 0.0);
        let mut l = vec![0; d];
        l[0] = 1;
        for xi in -6..=6 {
            a.set(&l, 1, xi, c(1.0, 0.0)).unwrap();
        }
        a
    }

    #[test]
    fn plane_wave_norm() {
        let a = plane_wave(2);
        assert!((a.symbol_norm(0.0, 1.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn transport_inverse_plane_wave() {
        // (omega.d_theta + d_x) e^{i(theta_1 + x)} = 3i e^{...} for omega_1 = 2.
        let a = plane_wave(2);
        let inv = a.transport_inverse(&[2.0, 1.7], Transport::Plus, 0.01, 2.0).unwrap();
        assert!((inv.get(&[1, 0], 1, 3) - c(1.0, 0.0) / c(0.0, 3.0)).norm() < 1e-15);
        let back = inv.transport(&[2.0, 1.7], Transport::Plus);
        assert!(back.minus(&a).unwrap().max_abs() < 1e-15);
    }

    #[test]
    fn transport_inverse_rejects_resonance() {
        let a = plane_wave(1);
        let r = a.transport_inverse(&[1.0], Transport::Minus, 0.01, 2.0);
        assert!(matches!(r, Err(Error::NonAdmissible(_))));
    }

    #[test]
    fn cutoffs_on_integers() {
        assert_eq!((chi(0), chi(1), chi(-5)), (0.0, 1.0, 1.0));
        assert_eq!((chi1(1), chi1(-1), chi1(2), chi1(-2)), (0.0, 0.0, 1.0, 1.0));
        for xi in -6..=6 {
            assert_eq!(chi1_plus(xi) + chi1_minus(xi), chi1(xi));
        }
    }

    fn sample(d: usize, seed: u64) -> Symbol {
        let mut a = Symbol::zeros(d, 1, 2, 5, 1.0);
        let mut s = seed;
        for (li, k, xi, _) in a.clone().entries().collect::<Vec<_>>() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let u = ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5;
            let v = ((s >> 7) % 1000) as f64 / 1000.0 - 0.5;
            a.set_at(li, k, xi, c(u, v));
        }
        a
    }

    #[test]
    fn quantize_roundtrip() {
        let a = sample(2, 3);
        let back = Symbol::dequantize(&a.quantize(), a.kx, a.order);
        // Entries whose target frequency xi + k leaves the window are not representable.
        for (li, k, xi, v) in a.entries() {
            let w = back.at(li, k, xi);
            if (xi + k).abs() <= a.m as i64 {
                assert_eq!(v, w);
            } else {
                assert_eq!(w, c(0.0, 0.0));
            }
        }
    }

    #[test]
    fn adjoint_quantizes_to_matrix_adjoint() {
        let a = sample(1, 11);
        let lhs = a.adjoint().quantize();
        let rhs = a.quantize().adjoint();
        assert!(lhs.minus(&rhs).unwrap().max_abs() < 1e-15);
    }

    #[test]
    fn exact_compose_matches_matrix_product() {
        let a = sample(1, 5);
        let b = sample(1, 9);
        let ab = Symbol::exact_compose(&a, &b).unwrap();
        let prod = a.quantize().compose(&b.quantize()).unwrap();
        assert!(ab.quantize().minus(&prod).unwrap().max_abs() < 1e-13);
    }

    #[test]
    fn expansion_is_exact_for_linear_symbols() {
        // a = xi * v(theta, x) is linear in xi, so two terms of the expansion suffice.
        let mut a = Symbol::zeros(1, 1, 1, 8, 1.0);
        let mut b = Symbol::zeros(1, 1, 1, 8, 0.0);
        for xi in -8..=8i64 {
            a.set(&[1], 1, xi, c(xi as f64, 0.5)).unwrap();
            a.set(&[0], -1, xi, c(0.3 * xi as f64, 0.0)).unwrap();
            b.set(&[-1], 1, xi, c(0.7, -0.2)).unwrap();
            b.set(&[0], 0, xi, c(1.0, 0.0)).unwrap();
        }
        let exact = Symbol::exact_compose(&a, &b).unwrap();
        let two = Symbol::compose(&a, &b, 2).unwrap();
        for (li, k, xi, v) in exact.entries() {
            if xi.abs() <= 6 {
                assert!((v - two.at(li, k, xi)).norm() < 1e-13, "{li} {k} {xi}");
            }
        }
    }

    #[test]
    fn expansion_remainder_gains_decay() {
        // a = <xi> e^{ix}, b = e^{-ix}: the remainder of a #_{<N} b is of order 1 - N.
        let m = 40usize;
        let mut a = Symbol::zeros(1, 0, 1, m, 1.0);
        let mut b = Symbol::zeros(1, 0, 1, m, 0.0);
        for xi in -(m as i64)..=m as i64 {
            a.set(&[0], 1, xi, c((1.0 + (xi * xi) as f64).sqrt(), 0.0)).unwrap();
            b.set(&[0], -1, xi, c(1.0, 0.0)).unwrap();
        }
        let exact = Symbol::exact_compose(&a, &b).unwrap();
        for n in 1..=3usize {
            let rem = exact.minus(&Symbol::compose(&a, &b, n).unwrap()).unwrap();
            let r10 = rem.get(&[0], 0, 10).norm();
            let r20 = rem.get(&[0], 0, 20).norm();
            let slope = (r20 / r10).ln() / 2f64.ln();
            assert!(slope < 1.0 - n as f64 + 0.2, "N = {n}: slope {slope}");
        }
    }

    proptest! {
        #[test]
        fn adjoint_is_involution_on_window(seed in 0u64..1000) {
            let a = sample(1, seed);
            let aa = a.adjoint().adjoint();
            for (li, k, xi, v) in a.entries() {
                if (xi + k).abs() <= a.m as i64 {
                    prop_assert_eq!(aa.at(li, k, xi), v);
                }
            }
        }

        #[test]
        fn transport_roundtrip(seed in 0u64..1000, w in 1.1f64..1.9) {
            let a = sample(1, seed).minus_average();
            let omega = [w + 0.5_f64.sqrt() * 0.01];
            if let Ok(inv) = a.transport_inverse(&omega, Transport::Minus, 1e-8, 1.0) {
                let back = inv.transport(&omega, Transport::Minus);
                prop_assert!(back.minus(&a).unwrap().max_abs() < 1e-12);
            }
        }
    }
}
