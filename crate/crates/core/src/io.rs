//! File formats.
//!
//! Symbols, operators, operator matrices and block-diagonal Hamiltonians are
//! written as one JSON object with a `kind` tag. Only nonzero coefficients are
//! stored, as tuples:
//!
//! | kind       | fields                               | tuple                     |
//! |------------|--------------------------------------|---------------------------|
//! | `symbol`   | `order, d, L, Kx, M, coeffs`         | `(l, k, xi, re, im)`      |
//! | `operator` | `d, L, M, coeffs`                    | `(l, row j, col j, re, im)` |
//! | `pair`     | `d, L, M, diag, anti`                | as `operator`             |
//! | `blocks`   | `M, blocks`                          | `(alpha, row, col, re, im)` |
//!
//! Mode indices `j` run over `-M..=M`; `l` is the list of the `d` integer
//! time frequencies. Block rows of `alpha > 0` are `(alpha, -alpha)`.
//!
//! CSV files have a header row and floats in shortest round-trip exponent
//! form, so identical inputs give identical bytes.

use crate::kam::BlockDiagHamiltonian;
use crate::lattice::block_rows;
use crate::linalg::CMat;
use crate::operators::{MatrixPair, QPOperator};
use crate::symbols::Symbol;
use crate::{Error, Result, C64};
use serde::{Deserialize, Serialize};
use std::path::Path;

pub type Coeff = (Vec<i32>, i64, i64, f64, f64);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Container {
    Symbol {
        order: f64,
        d: usize,
        #[serde(rename = "L")]
        l_max: i32,
        #[serde(rename = "Kx")]
        kx: i32,
        #[serde(rename = "M")]
        m: usize,
        coeffs: Vec<Coeff>,
    },
    Operator {
        d: usize,
        #[serde(rename = "L")]
        l_max: i32,
        #[serde(rename = "M")]
        m: usize,
        coeffs: Vec<Coeff>,
    },
    Pair {
        d: usize,
        #[serde(rename = "L")]
        l_max: i32,
        #[serde(rename = "M")]
        m: usize,
        diag: Vec<Coeff>,
        anti: Vec<Coeff>,
    },
    Blocks {
        #[serde(rename = "M")]
        m: usize,
        blocks: Vec<(usize, usize, usize, f64, f64)>,
    },
}

fn op_coeffs(a: &QPOperator) -> Vec<Coeff> {
    let m = a.m as i64;
    let mut out = vec![];
    for (li, s) in a.slices.iter().enumerate() {
        let l = a.lat.mode(li);
        for c in 0..s.ncols() {
            for r in 0..s.nrows() {
                let v = s[(r, c)];
                if v != C64::new(0.0, 0.0) {
                    out.push((l.clone(), r as i64 - m, c as i64 - m, v.re, v.im));
                }
            }
        }
    }
    out
}

fn op_from(d: usize, l_max: i32, m: usize, coeffs: &[Coeff]) -> Result<QPOperator> {
    let mut a = QPOperator::zeros(d, l_max, m);
    let mi = m as i64;
    for (l, r, c, re, im) in coeffs {
        if r.abs() > mi || c.abs() > mi {
            return Err(Error::OutOfRange(format!("mode ({r}, {c}) outside |j| <= {m}")));
        }
        let s = a
            .slice_mut(l)
            .ok_or_else(|| Error::OutOfRange(format!("time frequency {l:?} outside |l| <= {l_max}")))?;
        s[((r + mi) as usize, (c + mi) as usize)] = C64::new(*re, *im);
    }
    Ok(a)
}

impl Container {
    pub fn kind(&self) -> &'static str {
        match self {
            Container::Symbol { .. } => "symbol",
            Container::Operator { .. } => "operator",
            Container::Pair { .. } => "pair",
            Container::Blocks { .. } => "blocks",
        }
    }

    pub fn from_symbol(a: &Symbol) -> Self {
        let coeffs = a
            .entries()
            .filter(|e| e.3 != C64::new(0.0, 0.0))
            .map(|(li, k, xi, v)| (a.lat.mode(li), k, xi, v.re, v.im))
            .collect();
        Container::Symbol {
            order: a.order,
            d: a.lat.d,
            l_max: a.lat.l_max,
            kx: a.kx,
            m: a.m,
            coeffs,
        }
    }

    pub fn from_operator(a: &QPOperator) -> Self {
        Container::Operator {
            d: a.d(),
            l_max: a.lat.l_max,
            m: a.m,
            coeffs: op_coeffs(a),
        }
    }

    pub fn from_pair(p: &MatrixPair) -> Self {
        Container::Pair {
            d: p.diag.d(),
            l_max: p.diag.lat.l_max,
            m: p.m(),
            diag: op_coeffs(&p.diag),
            anti: op_coeffs(&p.anti),
        }
    }

    pub fn from_blocks(h: &BlockDiagHamiltonian) -> Self {
        let mut blocks = vec![];
        for a in 0..=h.m {
            let b = h.block(a);
            for c in 0..b.ncols() {
                for r in 0..b.nrows() {
                    blocks.push((a, r, c, b[(r, c)].re, b[(r, c)].im));
                }
            }
        }
        Container::Blocks { m: h.m, blocks }
    }

    fn wrong(&self, want: &str) -> Error {
        Error::Config(format!("container holds `{}`, expected `{want}`", self.kind()))
    }

    pub fn to_symbol(&self) -> Result<Symbol> {
        let Container::Symbol {
            order,
            d,
            l_max,
            kx,
            m,
            coeffs,
        } = self
        else {
            return Err(self.wrong("symbol"));
        };
        let mut s = Symbol::zeros(*d, *l_max, *kx, *m, *order);
        for (l, k, xi, re, im) in coeffs {
            s.set(l, *k, *xi, C64::new(*re, *im))?;
        }
        Ok(s)
    }

    pub fn to_operator(&self) -> Result<QPOperator> {
        let Container::Operator { d, l_max, m, coeffs } = self else {
            return Err(self.wrong("operator"));
        };
        op_from(*d, *l_max, *m, coeffs)
    }

    pub fn to_pair(&self) -> Result<MatrixPair> {
        let Container::Pair { d, l_max, m, diag, anti } = self else {
            return Err(self.wrong("pair"));
        };
        Ok(MatrixPair {
            diag: op_from(*d, *l_max, *m, diag)?,
            anti: op_from(*d, *l_max, *m, anti)?,
        })
    }

    pub fn to_blocks(&self) -> Result<BlockDiagHamiltonian> {
        let Container::Blocks { m, blocks } = self else {
            return Err(self.wrong("blocks"));
        };
        let mut out: Vec<CMat> = (0..=*m).map(|a| CMat::zeros(block_rows(a, *m).len(), block_rows(a, *m).len())).collect();
        for &(a, r, c, re, im) in blocks {
            let b = out.get_mut(a).ok_or_else(|| Error::OutOfRange(format!("block {a} outside 0..={m}")))?;
            if r >= b.nrows() || c >= b.ncols() {
                return Err(Error::OutOfRange(format!("entry ({r}, {c}) outside block {a}")));
            }
            b[(r, c)] = C64::new(re, im);
        }
        Ok(BlockDiagHamiltonian::from_blocks(out))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// Shortest round-trip exponent form.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:e}")
}

pub fn write_csv<S: AsRef<str>>(path: &Path, header: &[S], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Io(e.into()))?;
    let io = |e: csv::Error| Error::Io(e.into());
    w.write_record(header.iter().map(|h| h.as_ref())).map_err(io)?;
    for r in rows {
        w.write_record(r).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conjugate::tests::test_pair;

    #[test]
    fn pair_round_trip() {
        let p = test_pair(2, 2, 3, 0.1, 4);
        let c = Container::from_pair(&p);
        let text = serde_json::to_string(&c).unwrap();
        assert!(text.starts_with("{\"kind\":\"pair\""));
        let back: Container = serde_json::from_str(&text).unwrap();
        let q = back.to_pair().unwrap();
        assert_eq!(q.diag.slices, p.diag.slices);
        assert_eq!(q.anti.slices, p.anti.slices);
        assert!(back.to_operator().is_err());
    }

    #[test]
    fn symbol_and_blocks_round_trip() {
        let mut s = Symbol::zeros(1, 2, 1, 4, 1.0);
        s.set(&[1], -1, 3, C64::new(0.25, -1.5)).unwrap();
        s.set(&[0], 0, 0, C64::new(1e-300, 0.0)).unwrap();
        let back = serde_json::from_str::<Container>(&serde_json::to_string(&Container::from_symbol(&s)).unwrap()).unwrap();
        assert_eq!(back.to_symbol().unwrap(), s);

        let h = BlockDiagHamiltonian::from_diagonal(&[3.0, 2.0, 1.0, 2.5, 3.5]);
        let hb = Container::from_blocks(&h).to_blocks().unwrap();
        for a in 0..=2 {
            assert_eq!(hb.block(a), h.block(a));
        }
    }

    #[test]
    fn csv_is_deterministic() {
        let dir = std::env::temp_dir().join(format!("wavered-io-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let rows = vec![vec![fmt_f64(0.1 + 0.2), fmt_f64(1e-300)], vec![fmt_f64(-0.0), fmt_f64(3.0)]];
        write_csv(&dir.join("a.csv"), &["x", "y"], &rows).unwrap();
        let text = std::fs::read_to_string(dir.join("a.csv")).unwrap();
        assert_eq!(text, "x,y\n3.0000000000000004e-1,1e-300\n-0e0,3e0\n");
        assert_eq!(fmt_f64(0.1 + 0.2).parse::<f64>().unwrap(), 0.1 + 0.2);
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
