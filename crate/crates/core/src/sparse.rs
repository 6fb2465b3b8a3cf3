//! Compressed sparse row storage shared by operators and transfer matrices.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<f64>,
}

impl CsrMatrix {
    /// Builds a matrix from `(row, col, value)` triplets; duplicates are summed
    /// in input order, so the result is bit-identical for identical input.
    pub fn from_triplets(nrows: usize, ncols: usize, mut triplets: Vec<(u32, u32, f64)>) -> Self {
        triplets.sort_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0usize; nrows + 1];
        let mut cols = Vec::with_capacity(triplets.len());
        let mut vals: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(u32, u32)> = None;
        for (r, c, v) in triplets {
            debug_assert!((r as usize) < nrows && (c as usize) < ncols);
            if last == Some((r, c)) {
                *vals.last_mut().expect("nonempty") += v;
            } else {
                row_ptr[r as usize + 1] += 1;
                cols.push(c);
                vals.push(v);
                last = Some((r, c));
            }
        }
        for i in 0..nrows {
            row_ptr[i + 1] += row_ptr[i];
        }
        CsrMatrix { nrows, ncols, row_ptr, cols, vals }
    }

    pub fn identity(n: usize) -> Self {
        CsrMatrix {
            nrows: n,
            ncols: n,
            row_ptr: (0..=n).collect(),
            cols: (0..n as u32).collect(),
            vals: vec![1.0; n],
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// Column indices and values of row `i`.
    pub fn row(&self, i: usize) -> (&[u32], &[f64]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.cols[r.clone()], &self.vals[r])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (c, v) = self.row(i);
        match c.binary_search(&(j as u32)) {
            Ok(p) => v[p],
            Err(_) => 0.0,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.nrows.min(self.ncols)).map(|i| self.get(i, i)).collect()
    }

    /// `y = A x`.
    pub fn mul_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.ncols {
            return Err(Error::DimensionMismatch { expected: self.ncols, actual: x.len() });
        }
        let mut y = vec![0.0; self.nrows];
        self.mul_vec_into(x, &mut y);
        Ok(y)
    }

    pub(crate) fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            let (c, v) = self.row(i);
            *yi = c.iter().zip(v).map(|(&j, &a)| a * x[j as usize]).sum();
        }
    }

    /// `y = Aᵀ x`.
    pub fn mul_vec_transpose(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.nrows {
            return Err(Error::DimensionMismatch { expected: self.nrows, actual: x.len() });
        }
        let mut y = vec![0.0; self.ncols];
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let (c, v) = self.row(i);
            for (&j, &a) in c.iter().zip(v) {
                y[j as usize] += a * xi;
            }
        }
        Ok(y)
    }

    /// `xᵀ A x` for square matrices.
    pub fn quadratic_form(&self, x: &[f64]) -> f64 {
        (0..self.nrows)
            .map(|i| {
                let (c, v) = self.row(i);
                x[i] * c.iter().zip(v).map(|(&j, &a)| a * x[j as usize]).sum::<f64>()
            })
            .sum()
    }

    /// Exact structural and numerical symmetry.
    pub fn is_symmetric(&self) -> bool {
        self.nrows == self.ncols
            && (0..self.nrows).all(|i| {
                let (c, v) = self.row(i);
                c.iter().zip(v).all(|(&j, &a)| self.get(j as usize, i) == a)
            })
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.ncols]; self.nrows];
        for (i, row) in d.iter_mut().enumerate() {
            let (c, v) = self.row(i);
            for (&j, &a) in c.iter().zip(v) {
                row[j as usize] = a;
            }
        }
        d
    }

    /// Iterates `(row, col, value)` over stored entries.
    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.nrows).flat_map(move |i| {
            let (c, v) = self.row(i);
            c.iter().zip(v).map(move |(&j, &a)| (i, j as usize, a))
        })
    }

    /// Principal submatrix on `idx` (sorted or not) as a dense row-major array.
    pub fn dense_submatrix(&self, idx: &[u32]) -> Vec<f64> {
        let m = idx.len();
        let mut pos = std::collections::HashMap::with_capacity(m);
        for (p, &i) in idx.iter().enumerate() {
            pos.insert(i, p);
        }
        let mut out = vec![0.0; m * m];
        for (p, &i) in idx.iter().enumerate() {
            let (c, v) = self.row(i as usize);
            for (&j, &a) in c.iter().zip(v) {
                if let Some(&q) = pos.get(&j) {
                    out[p * m + q] = a;
                }
            }
        }
        out
    }

    /// `Aᵀ B A` for square `B` of size `nrows`.
    pub fn galerkin_product(&self, b: &CsrMatrix) -> CsrMatrix {
        let mut trip = Vec::new();
        // (B A)(i, :) then accumulate A(i, r) * (B A)(i, c)
        for i in 0..self.nrows {
            let (bc, bv) = b.row(i);
            let mut row: Vec<(u32, f64)> = Vec::new();
            for (&k, &bk) in bc.iter().zip(bv) {
                let (ac, av) = self.row(k as usize);
                row.extend(ac.iter().zip(av).map(|(&j, &a)| (j, bk * a)));
            }
            let (ac, av) = self.row(i);
            for (&r, &ar) in ac.iter().zip(av) {
                trip.extend(row.iter().map(|&(c, x)| (r, c, ar * x)));
            }
        }
        CsrMatrix::from_triplets(self.ncols, self.ncols, trip)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += alpha * x`.
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> CsrMatrix {
        CsrMatrix::from_triplets(
            3,
            3,
            vec![(0, 0, 2.0), (0, 1, -1.0), (1, 0, -1.0), (1, 1, 2.0), (1, 2, -1.0), (2, 1, -1.0), (2, 2, 1.0), (2, 2, 1.0)],
        )
    }

    #[test]
    fn duplicates_are_summed() {
        let a = sample();
        assert_eq!(a.get(2, 2), 2.0);
        assert_eq!(a.nnz(), 7);
        assert!(a.is_symmetric());
    }

    #[test]
    fn mul_matches_dense() {
        let a = sample();
        let x = [1.0, 2.0, 3.0];
        let d = a.to_dense();
        let y: Vec<f64> = d.iter().map(|r| dot(r, &x)).collect();
        assert_eq!(a.mul_vec(&x).unwrap(), y);
        assert_eq!(a.mul_vec_transpose(&x).unwrap(), y);
        assert!(matches!(a.mul_vec(&[1.0]), Err(Error::DimensionMismatch { expected: 3, actual: 1 })));
    }

    #[test]
    fn galerkin_product_with_identity() {
        let a = sample();
        let p = CsrMatrix::identity(3);
        assert_eq!(p.galerkin_product(&a), a);
        let p = CsrMatrix::from_triplets(3, 1, vec![(0, 0, 1.0), (1, 0, 1.0), (2, 0, 1.0)]);
        assert_eq!(p.galerkin_product(&a).get(0, 0), a.quadratic_form(&[1.0, 1.0, 1.0]));
    }

    #[test]
    fn dense_submatrix_picks_entries() {
        let a = sample();
        assert_eq!(a.dense_submatrix(&[2, 1]), vec![2.0, -1.0, -1.0, 2.0]);
    }
}
