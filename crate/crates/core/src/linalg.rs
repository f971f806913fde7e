//! Exact dense linear algebra over Q (`BigRational`) and over the scalar
//! field K. Desk-scale Gaussian elimination; no pivoting heuristics beyond
//! "first nonzero", which is exact anyway.

use crate::field::Scalar;
use num_rational::BigRational;
use num_traits::Zero;

/// Row-major rational matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct QMat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<BigRational>,
}

impl QMat {
    pub fn zero(rows: usize, cols: usize) -> Self {
        QMat { rows, cols, data: vec![BigRational::zero(); rows * cols] }
    }

    pub fn from_rows(rows: Vec<Vec<BigRational>>) -> Self {
        let r = rows.len();
        let c = rows.first().map(|x| x.len()).unwrap_or(0);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c);
            data.extend(row);
        }
        QMat { rows: r, cols: c, data }
    }

    pub fn at(&self, i: usize, j: usize) -> &BigRational {
        &self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: BigRational) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[BigRational] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// In-place reduced row echelon form; returns pivot columns.
    pub fn rref(&mut self) -> Vec<usize> {
        let mut pivots = Vec::new();
        let mut r = 0;
        for c in 0..self.cols {
            if r == self.rows {
                break;
            }
            let Some(p) = (r..self.rows).find(|&i| !self.at(i, c).is_zero()) else {
                continue;
            };
            if p != r {
                for j in 0..self.cols {
                    self.data.swap(p * self.cols + j, r * self.cols + j);
                }
            }
            let inv = self.at(r, c).recip();
            for j in c..self.cols {
                let v = self.at(r, j) * &inv;
                self.set(r, j, v);
            }
            for i in 0..self.rows {
                if i != r && !self.at(i, c).is_zero() {
                    let f = self.at(i, c).clone();
                    for j in c..self.cols {
                        let v = self.at(i, j) - &f * self.at(r, j);
                        self.set(i, j, v);
                    }
                }
            }
            pivots.push(c);
            r += 1;
        }
        pivots
    }

    pub fn rank(&self) -> usize {
        let mut m = self.clone();
        m.rref().len()
    }

    /// Basis of the right kernel, as rows.
    pub fn kernel_basis(&self) -> Vec<Vec<BigRational>> {
        let mut m = self.clone();
        let pivots = m.rref();
        let mut is_pivot = vec![false; self.cols];
        for &p in &pivots {
            is_pivot[p] = true;
        }
        let mut basis = Vec::new();
        for free in 0..self.cols {
            if is_pivot[free] {
                continue;
            }
            let mut v = vec![BigRational::zero(); self.cols];
            v[free] = BigRational::from_integer(1.into());
            for (r, &p) in pivots.iter().enumerate() {
                v[p] = -m.at(r, free).clone();
            }
            basis.push(v);
        }
        basis
    }

    /// Solve `self * x = b`; `None` when inconsistent.
    pub fn solve(&self, b: &[BigRational]) -> Option<Vec<BigRational>> {
        assert_eq!(b.len(), self.rows);
        let mut aug = QMat::zero(self.rows, self.cols + 1);
        for i in 0..self.rows {
            for j in 0..self.cols {
                aug.set(i, j, self.at(i, j).clone());
            }
            aug.set(i, self.cols, b[i].clone());
        }
        let pivots = aug.rref();
        if pivots.contains(&self.cols) {
            return None;
        }
        let mut x = vec![BigRational::zero(); self.cols];
        for (r, &p) in pivots.iter().enumerate() {
            x[p] = aug.at(r, self.cols).clone();
        }
        Some(x)
    }
}

/// Reduced row echelon form over the scalar field K. Returns (matrix, pivot
/// columns). Pivot selection is leftmost-first-nonzero; exact division.
pub fn k_rref(rows: &mut Vec<Vec<Scalar>>) -> Vec<usize> {
    let nrows = rows.len();
    let ncols = rows.first().map(|r| r.len()).unwrap_or(0);
    let mut pivots = Vec::new();
    let mut r = 0;
    for c in 0..ncols {
        if r == nrows {
            break;
        }
        let Some(p) = (r..nrows).find(|&i| !rows[i][c].is_zero()) else {
            continue;
        };
        rows.swap(p, r);
        let inv = rows[r][c].inv();
        for j in c..ncols {
            rows[r][j] = rows[r][j].mul(&inv);
        }
        for i in 0..nrows {
            if i != r && !rows[i][c].is_zero() {
                let f = rows[i][c].clone();
                for j in c..ncols {
                    rows[i][j] = rows[i][j].sub(&f.mul(&rows[r][j]));
                }
            }
        }
        pivots.push(c);
        r += 1;
    }
    pivots
}

/// Rank over K.
pub fn k_rank(rows: &[Vec<Scalar>]) -> usize {
    let mut m: Vec<Vec<Scalar>> = rows.to_vec();
    k_rref(&mut m).len()
}

/// Solve a linear system over K: `rows * x = rhs`; `None` when inconsistent.
pub fn k_solve(rows: &[Vec<Scalar>], rhs: &[Scalar]) -> Option<Vec<Scalar>> {
    assert_eq!(rows.len(), rhs.len());
    let ncols = rows.first().map(|r| r.len()).unwrap_or(0);
    if rows.is_empty() {
        return Some(Vec::new());
    }
    let ctx = rhs
        .first()
        .map(|s| s.context().clone())
        .unwrap_or_else(|| rows[0][0].context().clone());
    let mut aug: Vec<Vec<Scalar>> = rows
        .iter()
        .zip(rhs)
        .map(|(r, b)| {
            let mut row = r.clone();
            row.push(b.clone());
            row
        })
        .collect();
    let pivots = k_rref(&mut aug);
    if pivots.contains(&ncols) {
        return None;
    }
    let mut x = vec![Scalar::zero(&ctx); ncols];
    for (r, &p) in pivots.iter().enumerate() {
        x[p] = aug[r][ncols].clone();
    }
    Some(x)
}

/// Invert a square matrix of scalars; `None` if singular.
pub fn k_invert(mat: &[Vec<Scalar>]) -> Option<Vec<Vec<Scalar>>> {
    let n = mat.len();
    if n == 0 {
        return Some(Vec::new());
    }
    let ctx = mat[0][0].context().clone();
    let mut aug: Vec<Vec<Scalar>> = mat
        .iter()
        .enumerate()
        .map(|(i, row)| {
            assert_eq!(row.len(), n);
            let mut r = row.clone();
            for j in 0..n {
                r.push(if i == j { Scalar::one(&ctx) } else { Scalar::zero(&ctx) });
            }
            r
        })
        .collect();
    let pivots = k_rref(&mut aug);
    if pivots.len() < n || pivots.iter().take(n).enumerate().any(|(i, &p)| p != i) {
        return None;
    }
    Some(aug.into_iter().map(|row| row[n..].to_vec()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_bigint::BigInt;

    fn q(n: i64) -> BigRational {
        BigRational::from(BigInt::from(n))
    }

    #[test]
    fn rank_and_kernel() {
        let m = QMat::from_rows(vec![
            vec![q(1), q(2), q(3)],
            vec![q(2), q(4), q(6)],
            vec![q(0), q(1), q(1)],
        ]);
        assert_eq!(m.rank(), 2);
        let ker = m.kernel_basis();
        assert_eq!(ker.len(), 1);
        for i in 0..m.rows {
            let dot: BigRational = (0..m.cols).map(|j| m.at(i, j) * &ker[0][j]).sum();
            assert!(dot.is_zero());
        }
    }

    #[test]
    fn solve_consistent_and_not() {
        let m = QMat::from_rows(vec![vec![q(1), q(1)], vec![q(1), q(-1)]]);
        let x = m.solve(&[q(3), q(1)]).unwrap();
        assert_eq!(x, vec![q(2), q(1)]);
        let sing = QMat::from_rows(vec![vec![q(1), q(1)], vec![q(2), q(2)]]);
        assert!(sing.solve(&[q(0), q(1)]).is_none());
    }
}
