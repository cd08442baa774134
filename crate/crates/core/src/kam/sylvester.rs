//! Spectral solution of `c X + A X - sign X B = Y` for self-adjoint blocks of
//! size one or two.

use crate::linalg::{herm2_eig, CMat};
use crate::{Error, Result, C64};

/// Eigenvalues (ascending) and eigenvectors of a 1x1 or 2x2 self-adjoint block.
pub fn block_eig(h: &CMat) -> (Vec<f64>, CMat) {
    if h.nrows() == 1 {
        return (vec![h[(0, 0)].re], CMat::identity(1, 1));
    }
    let (v, q) = herm2_eig(h);
    (v.to_vec(), q)
}

/// Solves with precomputed decompositions. Returns `X` and the smallest
/// divisor `|c + alpha_p - sign beta_q|`.
pub fn solve_sylvester_eig(c: f64, ea: &(Vec<f64>, CMat), eb: &(Vec<f64>, CMat), y: &CMat, sign: f64, floor: f64) -> Result<(CMat, f64)> {
    let (va, qa) = ea;
    let (vb, qb) = eb;
    let mut t = qa.adjoint() * y * qb;
    let mut min_div = f64::INFINITY;
    for p in 0..va.len() {
        for q in 0..vb.len() {
            let div = c + va[p] - sign * vb[q];
            min_div = min_div.min(div.abs());
            if div.abs() <= floor {
                return Err(Error::NonAdmissible(format!(
                    "Sylvester divisor ({p}, {q}) = {div:.3e} below floor {floor:.3e}"
                )));
            }
            t[(p, q)] /= C64::new(div, 0.0);
        }
    }
    Ok((qa * t * qb.adjoint(), min_div))
}

/// `X` with `c X + A X - sign X B = Y`.
pub fn solve_sylvester_2x2(c: f64, a: &CMat, b: &CMat, y: &CMat, sign: f64, floor: f64) -> Result<CMat> {
    solve_sylvester_eig(c, &block_eig(a), &block_eig(b), y, sign, floor).map(|r| r.0)
}

/// Direct solve of the vectorized system `(c I + I (x) A - sign B^T (x) I) vec X = vec Y`.
pub fn sylvester_direct(c: f64, a: &CMat, b: &CMat, y: &CMat, sign: f64) -> Option<CMat> {
    let (p, q) = (a.nrows(), b.nrows());
    let n = p * q;
    let mut m = CMat::zeros(n, n);
    // vec is column-major: index (r, s) -> s * p + r.
    for s in 0..q {
        for r in 0..p {
            let row = s * p + r;
            m[(row, row)] += C64::new(c, 0.0);
            for r2 in 0..p {
                m[(row, s * p + r2)] += a[(r, r2)];
            }
            for s2 in 0..q {
                m[(row, s2 * p + r)] -= b[(s2, s)] * sign;
            }
        }
    }
    let rhs = nalgebra::DVector::from_iterator(n, y.iter().cloned());
    let sol = m.lu().solve(&rhs)?;
    Some(CMat::from_column_slice(p, q, sol.as_slice()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::max_abs;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn diagonal_example() {
        let a = CMat::from_diagonal(&nalgebra::DVector::from_vec(vec![c(1.0, 0.0), c(2.0, 0.0)]));
        let b = CMat::from_diagonal(&nalgebra::DVector::from_vec(vec![c(3.0, 0.0), c(4.0, 0.0)]));
        let y = CMat::from_element(2, 2, c(1.0, 0.0));
        let x = solve_sylvester_2x2(0.5, &a, &b, &y, 1.0, 0.0).unwrap();
        // X_pq = 1 / (0.5 + a_p - b_q).
        let expect = [[-1.0 / 1.5, -0.4], [-2.0, -1.0 / 1.5]];
        for p in 0..2 {
            for q in 0..2 {
                assert!((x[(p, q)] - c(expect[p][q], 0.0)).norm() < 1e-15);
            }
        }
        let direct = sylvester_direct(0.5, &a, &b, &y, 1.0).unwrap();
        assert!(max_abs(&(direct - x)) < 1e-15);
    }

    #[test]
    fn zero_rhs_gives_zero() {
        let a = CMat::from_row_slice(2, 2, &[c(1.0, 0.0), c(0.2, 0.1), c(0.2, -0.1), c(3.0, 0.0)]);
        let x = solve_sylvester_2x2(0.7, &a, &a, &CMat::zeros(2, 2), -1.0, 0.0).unwrap();
        assert_eq!(max_abs(&x), 0.0);
    }

    #[test]
    fn mixed_sizes() {
        let a = CMat::from_element(1, 1, c(2.0, 0.0));
        let b = CMat::from_row_slice(2, 2, &[c(1.0, 0.0), c(0.3, 0.2), c(0.3, -0.2), c(-1.0, 0.0)]);
        let y = CMat::from_row_slice(1, 2, &[c(1.0, 2.0), c(-0.5, 0.1)]);
        let x = solve_sylvester_2x2(0.25, &a, &b, &y, -1.0, 0.0).unwrap();
        let res = &x * c(0.25, 0.0) + &a * &x + &x * &b - &y;
        assert!(max_abs(&res) < 1e-14);
    }

    #[test]
    fn floor_is_enforced() {
        let a = CMat::identity(2, 2);
        let r = solve_sylvester_2x2(0.0, &a, &a, &CMat::identity(2, 2), 1.0, 1e-12);
        assert!(matches!(r, Err(Error::NonAdmissible(_))));
    }

    fn herm(v: &[f64]) -> CMat {
        CMat::from_row_slice(2, 2, &[c(v[0], 0.0), c(v[1], v[2]), c(v[1], -v[2]), c(v[3], 0.0)])
    }

    #[test]
    fn random_instances_match_direct_solve() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let mut worst: f64 = 0.0;
        for k in 0..1000 {
            let mut r = || rng.gen_range(-2.0..2.0);
            let a = herm(&[r(), r(), r(), r()]);
            let b = herm(&[r(), r(), r(), r()]);
            let y = CMat::from_fn(2, 2, |_, _| c(r(), r()));
            let cc = r();
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            let (x, md) = solve_sylvester_eig(cc, &block_eig(&a), &block_eig(&b), &y, sign, 0.0).unwrap();
            if md < 0.05 {
                continue;
            }
            let direct = sylvester_direct(cc, &a, &b, &y, sign).unwrap();
            worst = worst.max(max_abs(&(&direct - &x)));
            let res = &x * c(cc, 0.0) + &a * &x - &x * &b * c(sign, 0.0) - &y;
            assert!(max_abs(&res) < 1e-12);
            // |X| <= |Y| / delta for normal blocks.
            assert!(x.norm() <= y.norm() / md * (1.0 + 1e-12));
        }
        assert!(worst < 1e-12, "{worst:e}");
    }
}
