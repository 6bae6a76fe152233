use super::scalar::Scalar;
use crate::error::{invalid, Result};

/// Compressed sparse row matrix.
///
/// After construction every `(row, col)` appears at most once and column
/// indices are sorted within each row.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix<S> {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<u32>,
    values: Vec<S>,
}

/// Builds a matrix from `(row, col, value)` triplets, summing duplicates.
///
/// Duplicates are summed in a canonical order (sorted by value), so the
/// result does not depend on the order of `triplets`.
pub fn assemble<S: Scalar>(
    nrows: usize,
    ncols: usize,
    triplets: &[(usize, usize, S)],
) -> Result<SparseMatrix<S>> {
    if let Some(&(r, c, _)) = triplets.iter().find(|&&(r, c, _)| r >= nrows || c >= ncols) {
        return Err(invalid(format!(
            "triplet ({r}, {c}) outside a {nrows}x{ncols} matrix"
        )));
    }
    if ncols > u32::MAX as usize {
        return Err(invalid("column count exceeds the index type"));
    }
    let mut order: Vec<(usize, u32, S)> =
        triplets.iter().map(|&(r, c, v)| (r, c as u32, v)).collect();
    order.sort_unstable_by(|a, b| {
        (a.0, a.1).cmp(&(b.0, b.1)).then_with(|| {
            let (ka, kb) = (a.2.sort_key(), b.2.sort_key());
            ka.0.total_cmp(&kb.0).then(ka.1.total_cmp(&kb.1))
        })
    });
    Ok(SparseMatrix::from_sorted(nrows, ncols, order.into_iter()))
}

impl<S: Scalar> SparseMatrix<S> {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            indptr: vec![0; nrows + 1],
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            nrows: n,
            ncols: n,
            indptr: (0..=n).collect(),
            indices: (0..n as u32).collect(),
            values: vec![S::from_f64(1.0); n],
        }
    }

    pub fn from_diagonal(d: &[S]) -> Self {
        let n = d.len();
        Self {
            nrows: n,
            ncols: n,
            indptr: (0..=n).collect(),
            indices: (0..n as u32).collect(),
            values: d.to_vec(),
        }
    }

    /// Entries must be sorted by `(row, col)`; repeated coordinates are summed.
    fn from_sorted(
        nrows: usize,
        ncols: usize,
        entries: impl Iterator<Item = (usize, u32, S)>,
    ) -> Self {
        let mut indptr = vec![0usize; nrows + 1];
        let mut indices: Vec<u32> = Vec::new();
        let mut values: Vec<S> = Vec::new();
        let mut last: Option<(usize, u32)> = None;
        for (r, c, v) in entries {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                indices.push(c);
                values.push(v);
                indptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for i in 0..nrows {
            indptr[i + 1] += indptr[i];
        }
        Self {
            nrows,
            ncols,
            indptr,
            indices,
            values,
        }
    }

    /// Builds from per-row lists that are already sorted and duplicate free.
    pub(crate) fn from_rows(ncols: usize, rows: Vec<Vec<(u32, S)>>) -> Self {
        let nrows = rows.len();
        let mut indptr = Vec::with_capacity(nrows + 1);
        indptr.push(0);
        let nnz = rows.iter().map(Vec::len).sum();
        let mut indices = Vec::with_capacity(nnz);
        let mut values = Vec::with_capacity(nnz);
        for row in rows {
            debug_assert!(row.windows(2).all(|w| w[0].0 < w[1].0));
            for (c, v) in row {
                indices.push(c);
                values.push(v);
            }
            indptr.push(indices.len());
        }
        Self {
            nrows,
            ncols,
            indptr,
            indices,
            values,
        }
    }

    /// Fixed pattern with zero values, used for accumulation.
    pub(crate) fn from_pattern(ncols: usize, pattern: Vec<Vec<u32>>) -> Self {
        Self::from_rows(
            ncols,
            pattern
                .into_iter()
                .map(|r| r.into_iter().map(|c| (c, S::zero())).collect())
                .collect(),
        )
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn row(&self, i: usize) -> (&[u32], &[S]) {
        let (s, e) = (self.indptr[i], self.indptr[i + 1]);
        (&self.indices[s..e], &self.values[s..e])
    }

    #[inline]
    pub(crate) fn row_values_mut(&mut self, i: usize) -> (&[u32], &mut [S]) {
        let (s, e) = (self.indptr[i], self.indptr[i + 1]);
        (&self.indices[s..e], &mut self.values[s..e])
    }

    pub fn get(&self, i: usize, j: usize) -> S {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&(j as u32)) {
            Ok(k) => vals[k],
            Err(_) => S::zero(),
        }
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, S)> + '_ {
        (0..self.nrows).flat_map(move |i| {
            let (cols, vals) = self.row(i);
            cols.iter()
                .zip(vals)
                .map(move |(&c, &v)| (i, c as usize, v))
        })
    }

    pub fn values(&self) -> &[S] {
        &self.values
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.modulus()))
    }

    /// `y = A x`
    pub fn mul_vec(&self, x: &[S]) -> Vec<S> {
        assert_eq!(x.len(), self.ncols, "dimension mismatch in sparse product");
        (0..self.nrows)
            .map(|i| {
                let (cols, vals) = self.row(i);
                cols.iter()
                    .zip(vals)
                    .map(|(&c, &v)| v * x[c as usize])
                    .sum()
            })
            .collect()
    }

    /// `y = Aᵀ x` (plain transpose, no conjugation).
    pub fn mul_transpose_vec(&self, x: &[S]) -> Vec<S> {
        assert_eq!(
            x.len(),
            self.nrows,
            "dimension mismatch in transposed product"
        );
        let mut y = vec![S::zero(); self.ncols];
        for (i, &xi) in x.iter().enumerate() {
            let (cols, vals) = self.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                y[c as usize] += v * xi;
            }
        }
        y
    }

    /// Bilinear form `xᵀ A y` without conjugation.
    pub fn bilinear(&self, x: &[S], y: &[S]) -> S {
        let ay = self.mul_vec(y);
        x.iter().zip(&ay).map(|(&a, &b)| a * b).sum()
    }

    /// Sesquilinear form `x^H A y`.
    pub fn quadratic(&self, x: &[S], y: &[S]) -> S {
        let ay = self.mul_vec(y);
        super::scalar::dot(x, &ay)
    }

    pub fn transpose(&self) -> Self {
        let mut counts = vec![0usize; self.ncols + 1];
        for &c in &self.indices {
            counts[c as usize + 1] += 1;
        }
        for j in 0..self.ncols {
            counts[j + 1] += counts[j];
        }
        let mut next = counts.clone();
        let mut indices = vec![0u32; self.nnz()];
        let mut values = vec![S::zero(); self.nnz()];
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                let dst = next[c as usize];
                indices[dst] = i as u32;
                values[dst] = v;
                next[c as usize] += 1;
            }
        }
        Self {
            nrows: self.ncols,
            ncols: self.nrows,
            indptr: counts,
            indices,
            values,
        }
    }

    /// Largest entry of `|A - Aᵀ|` relative to the largest entry of `A`.
    pub fn symmetry_defect(&self) -> f64 {
        if self.nrows != self.ncols {
            return f64::INFINITY;
        }
        let t = self.transpose();
        let mut worst = 0.0_f64;
        for i in 0..self.nrows {
            let (ca, va) = self.row(i);
            let (cb, vb) = t.row(i);
            let (mut p, mut q) = (0, 0);
            while p < ca.len() || q < cb.len() {
                let d = match (ca.get(p), cb.get(q)) {
                    (Some(&x), Some(&y)) if x == y => {
                        p += 1;
                        q += 1;
                        va[p - 1] - vb[q - 1]
                    }
                    (Some(&x), Some(&y)) if x < y => {
                        p += 1;
                        va[p - 1]
                    }
                    (Some(_), None) => {
                        p += 1;
                        va[p - 1]
                    }
                    _ => {
                        q += 1;
                        vb[q - 1]
                    }
                };
                worst = worst.max(d.modulus());
            }
        }
        let scale = self.max_abs();
        if scale == 0.0 {
            worst
        } else {
            worst / scale
        }
    }

    /// Submatrix `A[rows, cols]`; `cols` must be sorted ascending.
    pub fn submatrix(&self, rows: &[usize], cols: &[usize]) -> Self {
        debug_assert!(cols.windows(2).all(|w| w[0] < w[1]));
        let mut map = vec![u32::MAX; self.ncols];
        for (k, &c) in cols.iter().enumerate() {
            map[c] = k as u32;
        }
        let out: Vec<Vec<(u32, S)>> = rows
            .iter()
            .map(|&r| {
                let (cs, vs) = self.row(r);
                cs.iter()
                    .zip(vs)
                    .filter_map(|(&c, &v)| {
                        let k = map[c as usize];
                        (k != u32::MAX).then_some((k, v))
                    })
                    .collect()
            })
            .collect();
        Self::from_rows(cols.len(), out)
    }

    /// `self + alpha * other` (same shape).
    pub fn add_scaled(&self, other: &Self, alpha: S) -> Self {
        assert_eq!((self.nrows, self.ncols), (other.nrows, other.ncols));
        let rows = (0..self.nrows)
            .map(|i| {
                let (ca, va) = self.row(i);
                let (cb, vb) = other.row(i);
                let mut out = Vec::with_capacity(ca.len().max(cb.len()));
                let (mut p, mut q) = (0, 0);
                while p < ca.len() || q < cb.len() {
                    match (ca.get(p), cb.get(q)) {
                        (Some(&x), Some(&y)) if x == y => {
                            out.push((x, va[p] + alpha * vb[q]));
                            p += 1;
                            q += 1;
                        }
                        (Some(&x), Some(&y)) if x < y => {
                            out.push((x, va[p]));
                            p += 1;
                        }
                        (Some(&x), None) => {
                            out.push((x, va[p]));
                            p += 1;
                        }
                        (_, Some(&y)) => {
                            out.push((y, alpha * vb[q]));
                            q += 1;
                        }
                        (None, None) => unreachable!(),
                    }
                }
                out
            })
            .collect();
        Self::from_rows(self.ncols, rows)
    }

    pub fn scaled(&self, alpha: S) -> Self {
        let mut out = self.clone();
        for v in &mut out.values {
            *v *= alpha;
        }
        out
    }

    /// Converts a real matrix to the complex field.
    pub fn map<T: Scalar>(&self, f: impl Fn(S) -> T) -> SparseMatrix<T> {
        SparseMatrix {
            nrows: self.nrows,
            ncols: self.ncols,
            indptr: self.indptr.clone(),
            indices: self.indices.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub(crate) fn to_faer(&self) -> faer::sparse::SparseColMat<usize, S> {
        let trip: Vec<faer::sparse::Triplet<usize, usize, S>> = self
            .triplets()
            .map(|(i, j, v)| faer::sparse::Triplet::new(i, j, v))
            .collect();
        faer::sparse::SparseColMat::try_new_from_triplets(self.nrows, self.ncols, &trip)
            .expect("CSR entries are unique and in range")
    }

    pub fn to_dense(&self) -> Vec<Vec<S>> {
        let mut d = vec![vec![S::zero(); self.ncols]; self.nrows];
        for (i, j, v) in self.triplets() {
            d[i][j] = v;
        }
        d
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn duplicates_are_summed() {
        let m = assemble(1, 1, &[(0, 0, 1.0), (0, 0, 2.0)]).unwrap();
        assert_eq!(m.nnz(), 1);
        assert_eq!(m.get(0, 0), 3.0);
    }

    #[test]
    fn empty_triplets_give_zero_matrix() {
        let m = assemble::<f64>(3, 2, &[]).unwrap();
        assert_eq!(m.nnz(), 0);
        assert_eq!(m.mul_vec(&[1.0, 2.0]), vec![0.0; 3]);
    }

    #[test]
    fn out_of_range_is_rejected() {
        assert!(assemble(2, 2, &[(2, 0, 1.0)]).is_err());
        assert!(assemble(2, 2, &[(0, 5, 1.0)]).is_err());
    }

    #[test]
    fn p1_stencil_assembles_to_tridiagonal() {
        // 1D P1 stiffness on 4 cells of unit length, interior nodes 1..=3.
        let mut t = Vec::new();
        for cell in 0..4usize {
            let local = [[1.0, -1.0], [-1.0, 1.0]];
            for a in 0..2 {
                for b in 0..2 {
                    let (i, j) = (cell + a, cell + b);
                    if (1..=3).contains(&i) && (1..=3).contains(&j) {
                        t.push((i - 1, j - 1, local[a][b]));
                    }
                }
            }
        }
        let m = assemble(3, 3, &t).unwrap();
        let expect = [[2.0, -1.0, 0.0], [-1.0, 2.0, -1.0], [0.0, -1.0, 2.0]];
        assert_eq!(
            m.to_dense(),
            expect.iter().map(|r| r.to_vec()).collect::<Vec<_>>()
        );
        assert_eq!(m.nnz(), 7);
    }

    #[test]
    fn submatrix_and_transpose() {
        let m = assemble(3, 3, &[(0, 1, 1.0), (1, 2, 2.0), (2, 0, 3.0), (1, 1, 4.0)]).unwrap();
        let t = m.transpose();
        assert_eq!(t.get(1, 0), 1.0);
        assert_eq!(t.get(0, 2), 3.0);
        let s = m.submatrix(&[1, 2], &[0, 2]);
        assert_eq!(s.to_dense(), vec![vec![0.0, 2.0], vec![3.0, 0.0]]);
        assert!(m.symmetry_defect() > 0.0);
        let sym = m.add_scaled(&t, 1.0);
        assert_eq!(sym.symmetry_defect(), 0.0);
    }

    proptest! {
        #[test]
        fn assembly_is_independent_of_triplet_order(
            entries in proptest::collection::vec((0usize..5, 0usize..5, -1e3f64..1e3), 0..60),
            seed in any::<u64>(),
        ) {
            let a = assemble(5, 5, &entries).unwrap();
            let mut shuffled = entries.clone();
            // Deterministic Fisher-Yates driven by the seed.
            let mut s = seed | 1;
            for i in (1..shuffled.len()).rev() {
                s ^= s << 13; s ^= s >> 7; s ^= s << 17;
                shuffled.swap(i, (s % (i as u64 + 1)) as usize);
            }
            let b = assemble(5, 5, &shuffled).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn transpose_product_matches(
            entries in proptest::collection::vec((0usize..4, 0usize..6, -10.0f64..10.0), 0..30),
            x in proptest::collection::vec(-1.0f64..1.0, 4),
        ) {
            let a = assemble(4, 6, &entries).unwrap();
            let y1 = a.mul_transpose_vec(&x);
            let y2 = a.transpose().mul_vec(&x);
            for (u, v) in y1.iter().zip(&y2) {
                prop_assert!((u - v).abs() <= 1e-12 * (1.0 + u.abs()));
            }
        }
    }
}
