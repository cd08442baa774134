//! Index bookkeeping for the Fourier lattice `Z^d` (time) and the spatial
//! modes `-M..=M`.

/// Japanese bracket `max(1, |j|)`.
#[inline]
pub fn bracket(j: i64) -> f64 {
    (j.unsigned_abs().max(1)) as f64
}

/// Sup norm of a multi-index.
#[inline]
pub fn sup_norm(l: &[i32]) -> i32 {
    l.iter().map(|x| x.abs()).max().unwrap_or(0)
}

/// `<l, j> = max(1, |j|, |l|)` with the sup norm on `l`.
#[inline]
pub fn bracket_lj(l: &[i32], j: i64) -> f64 {
    (sup_norm(l) as u64).max(j.unsigned_abs()).max(1) as f64
}

/// The cube `[-L, L]^d` of time frequencies, flattened with the first
/// coordinate varying fastest.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Lattice {
    pub d: usize,
    pub l_max: i32,
    side: usize,
    len: usize,
}

impl Lattice {
    pub fn new(d: usize, l_max: i32) -> Self {
        assert!(d >= 1, "lattice dimension must be positive");
        assert!(l_max >= 0);
        let side = (2 * l_max + 1) as usize;
        Lattice {
            d,
            l_max,
            side,
            len: side.pow(d as u32),
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn contains(&self, l: &[i32]) -> bool {
        l.len() == self.d && l.iter().all(|x| x.abs() <= self.l_max)
    }

    pub fn index(&self, l: &[i32]) -> Option<usize> {
        if !self.contains(l) {
            return None;
        }
        let mut idx = 0usize;
        for c in l.iter().rev() {
            idx = idx * self.side + (c + self.l_max) as usize;
        }
        Some(idx)
    }

    pub fn mode(&self, mut idx: usize) -> Vec<i32> {
        let mut l = Vec::with_capacity(self.d);
        for _ in 0..self.d {
            l.push((idx % self.side) as i32 - self.l_max);
            idx /= self.side;
        }
        l
    }

    /// Index of `-l`.
    pub fn neg_index(&self, idx: usize) -> usize {
        self.len - 1 - idx
    }

    pub fn zero_index(&self) -> usize {
        self.len / 2
    }

    pub fn modes(&self) -> impl Iterator<Item = Vec<i32>> + '_ {
        (0..self.len).map(move |i| self.mode(i))
    }

    pub fn dot(omega: &[f64], l: &[i32]) -> f64 {
        omega.iter().zip(l).map(|(w, &c)| w * c as f64).sum()
    }
}

/// Spatial mode `j` sits at row/column `j + M`.
#[inline]
pub fn mode_index(j: i64, m: usize) -> usize {
    (j + m as i64) as usize
}

/// Rows belonging to the block `|j| = alpha`, ordered `(alpha, -alpha)`.
pub fn block_rows(alpha: usize, m: usize) -> Vec<usize> {
    if alpha == 0 {
        vec![m]
    } else {
        vec![m + alpha, m - alpha]
    }
}
