//! Least-squares projection onto a polynomial basis in the Markov state.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Total-degree monomials in standardized state variables.
///
/// Constant coordinates are dropped and each variable's exponent is capped
/// at its number of distinct sample values minus one, so that indicator-like
/// variables (jump counts early in the grid) never produce collinear columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Basis {
    vars: Vec<usize>,
    mean: Vec<f64>,
    scale: Vec<f64>,
    exps: Vec<Vec<u32>>,
    degree: u32,
}

impl Basis {
    /// Builds a basis from sample rows, lowering the degree until at most
    /// `max_cols` columns remain. Returns the degree actually used.
    pub fn build(rows: &[&[f64]], degree: u32, max_cols: usize) -> (Basis, u32) {
        let nv = rows.first().map_or(0, |r| r.len());
        let n = rows.len().max(1) as f64;
        let mut vars = Vec::new();
        let mut mean = Vec::new();
        let mut scale = Vec::new();
        let mut caps = Vec::new();
        for v in 0..nv {
            let mu = rows.iter().map(|r| r[v]).sum::<f64>() / n;
            let var = rows.iter().map(|r| (r[v] - mu) * (r[v] - mu)).sum::<f64>() / n;
            let sd = var.sqrt();
            if sd > 1e-12 * (1.0 + mu.abs()) {
                vars.push(v);
                mean.push(mu);
                scale.push(sd);
                caps.push(distinct_capped(rows, v, degree as usize + 1).saturating_sub(1) as u32);
            }
        }
        let mut deg = degree;
        loop {
            let exps = monomials(&caps, deg);
            if exps.len() <= max_cols.max(1) || deg == 0 {
                return (
                    Basis {
                        vars,
                        mean,
                        scale,
                        exps,
                        degree: deg,
                    },
                    deg,
                );
            }
            deg -= 1;
        }
    }

    pub fn columns(&self) -> usize {
        self.exps.len()
    }

    pub fn degree(&self) -> u32 {
        self.degree
    }

    pub fn eval(&self, x: &[f64], out: &mut [f64]) {
        let dmax = self.degree as usize;
        let mut pows = vec![1.0; self.vars.len() * (dmax + 1)];
        for (a, &v) in self.vars.iter().enumerate() {
            let u = (x[v] - self.mean[a]) / self.scale[a];
            for e in 1..=dmax {
                pows[a * (dmax + 1) + e] = pows[a * (dmax + 1) + e - 1] * u;
            }
        }
        for (o, ex) in out.iter_mut().zip(&self.exps) {
            let mut s = 1.0;
            for (a, &e) in ex.iter().enumerate() {
                if e > 0 {
                    s *= pows[a * (dmax + 1) + e as usize];
                }
            }
            *o = s;
        }
    }

    pub fn design(&self, rows: &[&[f64]]) -> DMatrix<f64> {
        let k = self.columns();
        let mut m = DMatrix::zeros(rows.len(), k);
        let mut buf = vec![0.0; k];
        for (r, row) in rows.iter().enumerate() {
            self.eval(row, &mut buf);
            for (c, b) in buf.iter().enumerate() {
                m[(r, c)] = *b;
            }
        }
        m
    }
}

fn distinct_capped(rows: &[&[f64]], v: usize, cap: usize) -> usize {
    let mut seen: Vec<f64> = Vec::with_capacity(cap + 1);
    for r in rows {
        let x = r[v];
        if !seen.contains(&x) {
            seen.push(x);
            if seen.len() > cap {
                break;
            }
        }
    }
    seen.len()
}

/// Exponent vectors ordered by total degree, then lexicographically.
fn monomials(caps: &[u32], degree: u32) -> Vec<Vec<u32>> {
    let mut out = Vec::new();
    for total in 0..=degree {
        let mut cur = vec![0u32; caps.len()];
        fill(caps, total, 0, &mut cur, &mut out);
    }
    out
}

fn fill(caps: &[u32], left: u32, pos: usize, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
    if pos == caps.len() {
        if left == 0 {
            out.push(cur.clone());
        }
        return;
    }
    for e in (0..=left.min(caps[pos])).rev() {
        cur[pos] = e;
        fill(caps, left - e, pos + 1, cur, out);
    }
    cur[pos] = 0;
}

/// Orthogonal projector `Q Qᵀ` onto the column space of a design matrix.
pub struct Projector {
    q: DMatrix<f64>,
}

impl Projector {
    /// Fails with [`Error::RegressionSingular`] when a diagonal entry of `R`
    /// falls below `1e-10` times the largest.
    pub fn new(phi: DMatrix<f64>, step: usize) -> Result<Self> {
        let cols = phi.ncols();
        let qr = phi.qr();
        let r = qr.r();
        let diag: Vec<f64> = (0..cols.min(r.nrows())).map(|j| r[(j, j)].abs()).collect();
        let dmax = diag.iter().cloned().fold(0.0, f64::max);
        let dmin = diag.iter().cloned().fold(f64::INFINITY, f64::min);
        let rank = diag.iter().filter(|d| **d > 1e-10 * dmax).count();
        if rank < cols || !(dmax > 0.0) {
            return Err(Error::RegressionSingular {
                step,
                rank,
                columns: cols,
                condition: if dmin > 0.0 { dmax / dmin } else { f64::INFINITY },
            });
        }
        Ok(Projector { q: qr.q() })
    }

    /// Keeps a maximal independent subset of the columns, scanned in order,
    /// and returns the indices kept. A column is dropped when its component
    /// orthogonal to the kept ones has relative norm below `1e-8`.
    pub fn pruned(phi: &DMatrix<f64>, step: usize) -> Result<(Self, Vec<usize>)> {
        if phi.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                context: format!("regression design at step {step}"),
            });
        }
        let n = phi.nrows();
        let mut qs: Vec<nalgebra::DVector<f64>> = Vec::new();
        let mut kept = Vec::new();
        for j in 0..phi.ncols() {
            let col = phi.column(j).into_owned();
            let n0 = col.norm();
            if !(n0 > 0.0) {
                continue;
            }
            let mut v = col;
            // two passes of classical Gram-Schmidt
            for _ in 0..2 {
                for q in &qs {
                    let c = q.dot(&v);
                    v.axpy(-c, q, 1.0);
                }
            }
            let nv = v.norm();
            if nv > 1e-8 * n0 {
                qs.push(v / nv);
                kept.push(j);
            }
        }
        if qs.is_empty() {
            return Err(Error::RegressionSingular {
                step,
                rank: 0,
                columns: phi.ncols(),
                condition: f64::INFINITY,
            });
        }
        let q = DMatrix::from_columns(&qs);
        debug_assert_eq!(q.nrows(), n);
        Ok((Projector { q }, kept))
    }

    /// Fitted values of every column of `b`.
    pub fn project(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let coef = self.q.tr_mul(b);
        &self.q * coef
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn monomial_counts() {
        assert_eq!(monomials(&[3], 3).len(), 4);
        assert_eq!(monomials(&[3, 3], 3).len(), 10);
        assert_eq!(monomials(&[3, 3, 3], 3).len(), 20);
        assert_eq!(monomials(&[1, 3], 3).len(), 7);
        assert_eq!(monomials(&[], 3), vec![Vec::<u32>::new()]);
    }

    #[test]
    fn constant_variables_leave_intercept() {
        let data = [[0.0, 5.0]; 10];
        let rows: Vec<&[f64]> = data.iter().map(|r| &r[..]).collect();
        let (b, _) = Basis::build(&rows, 3, 100);
        assert_eq!(b.columns(), 1);
    }

    #[test]
    fn binary_variable_is_capped_at_degree_one() {
        let data: Vec<[f64; 1]> = (0..20).map(|i| [(i % 2) as f64]).collect();
        let rows: Vec<&[f64]> = data.iter().map(|r| &r[..]).collect();
        let (b, _) = Basis::build(&rows, 3, 100);
        assert_eq!(b.columns(), 2);
        assert!(Projector::new(b.design(&rows), 0).is_ok());
    }

    #[test]
    fn projection_reproduces_polynomials() {
        let data: Vec<[f64; 1]> = (0..50).map(|i| [i as f64 / 10.0 - 2.0]).collect();
        let rows: Vec<&[f64]> = data.iter().map(|r| &r[..]).collect();
        let (b, _) = Basis::build(&rows, 3, 100);
        let p = Projector::new(b.design(&rows), 0).unwrap();
        let y = DMatrix::from_fn(50, 1, |r, _| {
            let x = data[r][0];
            1.0 - 2.0 * x + 0.5 * x * x * x
        });
        let fit = p.project(&y);
        assert!((fit - &y).abs().max() < 1e-10);
    }

    #[test]
    fn singular_design_is_reported() {
        let phi = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 1.0, 2.0, 1.0, 2.0]);
        match Projector::new(phi, 7) {
            Err(Error::RegressionSingular { step, rank, columns, .. }) => {
                assert_eq!((step, rank, columns), (7, 1, 2));
            }
            _ => panic!("expected singular"),
        }
    }

    #[test]
    fn pruning_keeps_independent_columns() {
        let phi = DMatrix::from_row_slice(4, 3, &[1.0, 2.0, 0.0, 1.0, 2.0, 1.0, 1.0, 2.0, 2.0, 1.0, 2.0, 3.0]);
        let (p, kept) = Projector::pruned(&phi, 0).unwrap();
        assert_eq!(kept, vec![0, 2]);
        let b = DMatrix::from_fn(4, 1, |a, _| 1.0 + a as f64);
        let fit = p.project(&b);
        assert!((fit - b).norm() < 1e-12);
        assert!(Projector::pruned(&DMatrix::zeros(3, 2), 0).is_err());
        let mut bad = DMatrix::from_element(3, 1, 1.0);
        bad[(1, 0)] = f64::NAN;
        assert!(matches!(Projector::pruned(&bad, 0), Err(Error::NonFinite { .. })));
    }

    #[test]
    fn degree_drops_when_columns_exceed_budget() {
        let data: Vec<[f64; 2]> = (0..8).map(|i| [i as f64, (i * i % 5) as f64]).collect();
        let rows: Vec<&[f64]> = data.iter().map(|r| &r[..]).collect();
        let (b, deg) = Basis::build(&rows, 3, 4);
        assert!(b.columns() <= 4);
        assert_eq!(deg, 1);
    }
}
