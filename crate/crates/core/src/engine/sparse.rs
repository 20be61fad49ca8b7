//! Fixed-pattern sparse matrix and a reusable LU factorization over it.

use faer::dyn_stack::{MemBuffer, MemStack};
use faer::sparse::linalg::lu::{factorize_symbolic_lu, NumericLu, SymbolicLu};
use faer::sparse::{SparseColMatRef, SymbolicSparseColMatRef};
use faer::{Conj, MatMut, Par};

/// Compressed-sparse-column matrix whose pattern is fixed at construction.
///
/// Values are filled through a list of `(row, col, value)` contributions in a
/// fixed order; `slot_positions` maps each contribution to its value index.
#[derive(Debug, Clone)]
pub struct SparseMatrix {
    n: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Builds the pattern from an ordered list of entries and returns the
    /// position of each entry in the value array (duplicates share one).
    pub fn from_entries(n: usize, entries: &[(usize, usize)]) -> (Self, Vec<usize>) {
        let mut sorted: Vec<(usize, usize)> = entries.iter().map(|&(r, c)| (c, r)).collect();
        // Every diagonal is kept structurally so pivoting always has a candidate.
        sorted.extend((0..n).map(|i| (i, i)));
        sorted.sort_unstable();
        sorted.dedup();
        let mut col_ptr = vec![0usize; n + 1];
        let mut row_idx = Vec::with_capacity(sorted.len());
        for &(c, r) in &sorted {
            col_ptr[c + 1] += 1;
            row_idx.push(r);
        }
        for c in 0..n {
            col_ptr[c + 1] += col_ptr[c];
        }
        let positions = entries
            .iter()
            .map(|&(r, c)| col_ptr[c] + row_idx[col_ptr[c]..col_ptr[c + 1]].binary_search(&r).unwrap())
            .collect();
        let nnz = row_idx.len();
        (
            Self {
                n,
                col_ptr,
                row_idx,
                values: vec![0.0; nnz],
            },
            positions,
        )
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        let range = self.col_ptr[col]..self.col_ptr[col + 1];
        match self.row_idx[range.clone()].binary_search(&row) {
            Ok(k) => self.values[range.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; self.n]; self.n];
        for c in 0..self.n {
            for k in self.col_ptr[c]..self.col_ptr[c + 1] {
                out[self.row_idx[k]][c] = self.values[k];
            }
        }
        out
    }

    /// `max(1, max_j |a_ij|)` per row: the size of a residual that roundoff
    /// alone can leave in that row.
    pub fn row_scales(&self) -> Vec<f64> {
        let mut out = vec![1.0f64; self.n];
        for (k, &r) in self.row_idx.iter().enumerate() {
            out[r] = out[r].max(self.values[k].abs());
        }
        out
    }

    /// `y = A·x`
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for c in 0..self.n {
            for k in self.col_ptr[c]..self.col_ptr[c + 1] {
                y[self.row_idx[k]] += self.values[k] * x[c];
            }
        }
        y
    }

    fn symbolic(&self) -> SymbolicSparseColMatRef<'_, usize> {
        SymbolicSparseColMatRef::new_checked(self.n, self.n, &self.col_ptr, None, &self.row_idx)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LuFailure {
    Singular,
}

/// LU factorization reusing the symbolic analysis of one pattern.
pub struct SparseLu {
    symbolic: SymbolicLu<usize>,
    numeric: NumericLu<usize, f64>,
    factor_mem: MemBuffer,
    solve_mem: MemBuffer,
    factored: bool,
}

impl std::fmt::Debug for SparseLu {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SparseLu").field("factored", &self.factored).finish()
    }
}

impl SparseLu {
    pub fn new(matrix: &SparseMatrix) -> Self {
        let symbolic = factorize_symbolic_lu(matrix.symbolic(), Default::default())
            .expect("symbolic LU analysis");
        let factor_mem =
            MemBuffer::new(symbolic.factorize_numeric_lu_scratch::<f64>(Par::Seq, Default::default()));
        let solve_mem = MemBuffer::new(symbolic.solve_in_place_scratch::<f64>(1, Par::Seq));
        Self {
            symbolic,
            numeric: NumericLu::new(),
            factor_mem,
            solve_mem,
            factored: false,
        }
    }

    pub fn factor(&mut self, matrix: &SparseMatrix) -> Result<(), LuFailure> {
        self.factored = false;
        if matrix.values.iter().any(|v| !v.is_finite()) {
            return Err(LuFailure::Singular);
        }
        let a = SparseColMatRef::new(matrix.symbolic(), &matrix.values);
        self.symbolic
            .factorize_numeric_lu(
                &mut self.numeric,
                a,
                Par::Seq,
                MemStack::new(&mut self.factor_mem),
                Default::default(),
            )
            .map_err(|_| LuFailure::Singular)?;
        self.factored = true;
        Ok(())
    }

    /// Solves in place; fails when the factorization produced non-finite
    /// values (numerically singular matrix).
    pub fn solve(&mut self, rhs: &mut [f64]) -> Result<(), LuFailure> {
        assert!(self.factored, "solve before factor");
        let n = rhs.len();
        let lu = faer::sparse::linalg::lu::LuRef::new_unchecked(&self.symbolic, &self.numeric);
        lu.solve_in_place_with_conj(
            Conj::No,
            MatMut::from_column_major_slice_mut(rhs, n, 1),
            Par::Seq,
            MemStack::new(&mut self.solve_mem),
        );
        if rhs.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(LuFailure::Singular)
        }
    }
}
