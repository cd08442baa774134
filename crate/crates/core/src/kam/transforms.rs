//! Products of the exponentials produced by the reduction.

use crate::linalg::{expm, max_abs, CMat, I};
use crate::operators::MatrixPair;
use crate::{Error, Result};

/// `A(theta) = e^{-iG} e^{-iU_1} ... e^{-iU_n}` and its inverse, as full
/// `2n x 2n` matrices. `q = A v` carries reduced solutions `v` to solutions `q`
/// of the original system.
pub fn compose_transforms(transforms: &[MatrixPair], g: Option<&MatrixPair>, theta: &[f64]) -> Result<(CMat, CMat)> {
    let first = g.or(transforms.first()).ok_or_else(|| Error::Model("no transforms to compose".into()))?;
    let dim = 2 * first.diag.n();
    let mut a = CMat::identity(dim, dim);
    let mut a_inv = CMat::identity(dim, dim);
    for u in g.into_iter().chain(transforms.iter()) {
        let uf = u.full_at(theta);
        a *= expm(&(&uf * (-I)));
        a_inv = expm(&(&uf * I)) * a_inv;
    }
    let defect = max_abs(&(&a * &a_inv - CMat::identity(dim, dim)));
    if defect > 1e-10 {
        return Err(Error::Model(format!("composed transform not invertible to 1e-10 (defect {defect:.3e})")));
    }
    Ok((a, a_inv))
}
