use std::collections::BTreeMap;
use std::sync::{Arc, OnceLock};

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::{Lu, SymbolicLu};
use faer::sparse::linalg::LuError;
use faer::sparse::{SparseColMat, SymbolicSparseColMat};
use faer::Mat;

use crate::error::{Error, Result};

use super::mesh::Mesh;

/// Compressed-row sparsity structure shared by every operator assembled on
/// the same mesh and block size. Also caches the symbolic LU.
#[derive(Debug)]
pub struct SparsityPattern {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    symbolic: OnceLock<SymbolicLu<usize>>,
}

impl SparsityPattern {
    /// All (node, node) pairs sharing a cell, expanded to `block` unknowns per node.
    pub fn from_mesh(mesh: &Mesh, block: usize) -> Arc<Self> {
        let n_nodes = mesh.n_nodes();
        let mut adjacency: Vec<Vec<usize>> = vec![Vec::new(); n_nodes];
        for c in 0..mesh.n_cells() {
            let cell = mesh.cell(c);
            for &a in cell {
                adjacency[a].extend_from_slice(cell);
            }
        }
        for row in &mut adjacency {
            row.sort_unstable();
            row.dedup();
        }
        let n = n_nodes * block;
        let mut row_ptr = Vec::with_capacity(n + 1);
        row_ptr.push(0);
        let mut cols = Vec::new();
        for row in &adjacency {
            for _ in 0..block {
                for &b in row {
                    cols.extend((0..block).map(|f| b * block + f));
                }
                row_ptr.push(cols.len());
            }
        }
        Arc::new(SparsityPattern {
            n,
            row_ptr,
            cols,
            symbolic: OnceLock::new(),
        })
    }

    /// Pattern from explicit (row, col) pairs; the diagonal is always included.
    pub fn from_entries(n: usize, entries: impl IntoIterator<Item = (usize, usize)>) -> Arc<Self> {
        let mut rows: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
        for (i, j) in entries {
            rows[i].push(j);
        }
        let mut row_ptr = vec![0];
        let mut cols = Vec::new();
        for mut r in rows {
            r.sort_unstable();
            r.dedup();
            cols.extend(r);
            row_ptr.push(cols.len());
        }
        Arc::new(SparsityPattern {
            n,
            row_ptr,
            cols,
            symbolic: OnceLock::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    pub fn row(&self, i: usize) -> &[usize] {
        &self.cols[self.row_ptr[i]..self.row_ptr[i + 1]]
    }

    /// Storage position of entry (i, j), if it is in the pattern.
    #[inline]
    pub fn position(&self, i: usize, j: usize) -> Option<usize> {
        let start = self.row_ptr[i];
        self.row(i).binary_search(&j).ok().map(|k| start + k)
    }

    fn symbolic(&self) -> Result<&SymbolicLu<usize>> {
        if let Some(s) = self.symbolic.get() {
            return Ok(s);
        }
        // CSR of A is read as CSC of Aᵀ
        let sym = SymbolicSparseColMat::new_checked(
            self.n,
            self.n,
            self.row_ptr.clone(),
            None,
            self.cols.clone(),
        );
        let lu =
            SymbolicLu::try_new(sym.as_ref()).map_err(|_| Error::SingularSystem { pivot: 0 })?;
        Ok(self.symbolic.get_or_init(|| lu))
    }
}

/// Square sparse matrix in compressed-row form.
#[derive(Clone, Debug)]
pub struct SparseOperator {
    pattern: Arc<SparsityPattern>,
    values: Vec<f64>,
}

impl SparseOperator {
    pub fn zeros(pattern: Arc<SparsityPattern>) -> Self {
        let nnz = pattern.nnz();
        SparseOperator {
            pattern,
            values: vec![0.0; nnz],
        }
    }

    pub fn identity(n: usize) -> Self {
        let pattern = SparsityPattern::from_entries(n, std::iter::empty());
        let mut op = SparseOperator::zeros(pattern);
        for i in 0..n {
            op.add(i, i, 1.0);
        }
        op
    }

    /// Builds an operator from triplets, summing duplicates.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        if let Some(&(i, j, _)) = triplets.iter().find(|&&(i, j, _)| i >= n || j >= n) {
            return Err(Error::invalid(format!(
                "entry ({i}, {j}) outside a {n}x{n} matrix"
            )));
        }
        let pattern = SparsityPattern::from_entries(n, triplets.iter().map(|&(i, j, _)| (i, j)));
        let mut op = SparseOperator::zeros(pattern);
        for &(i, j, v) in triplets {
            op.add(i, j, v);
        }
        Ok(op)
    }

    pub fn dim(&self) -> usize {
        self.pattern.n
    }

    pub fn pattern(&self) -> &Arc<SparsityPattern> {
        &self.pattern
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Adds `v` to entry (i, j). Panics if the entry is outside the pattern.
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let k = self
            .pattern
            .position(i, j)
            .unwrap_or_else(|| panic!("entry ({i}, {j}) is not in the sparsity pattern"));
        self.values[k] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.pattern.position(i, j).map_or(0.0, |k| self.values[k])
    }

    pub fn row_entries(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.pattern.row_ptr[i]..self.pattern.row_ptr[i + 1];
        self.pattern.cols[r.clone()]
            .iter()
            .copied()
            .zip(self.values[r].iter().copied())
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.dim())
            .map(|i| self.row_entries(i).map(|(j, a)| a * x[j]).sum())
            .collect()
    }

    pub fn transpose_matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.dim()];
        for i in 0..self.dim() {
            for (j, a) in self.row_entries(i) {
                y[j] += a * x[i];
            }
        }
        y
    }

    /// a·self + b·other on a shared pattern.
    pub fn linear_combination(
        &self,
        a: f64,
        other: &SparseOperator,
        b: f64,
    ) -> Result<SparseOperator> {
        let same = Arc::ptr_eq(&self.pattern, &other.pattern)
            || (self.pattern.row_ptr == other.pattern.row_ptr
                && self.pattern.cols == other.pattern.cols);
        if !same {
            return Err(Error::invalid("operators have different sparsity patterns"));
        }
        Ok(SparseOperator {
            pattern: self.pattern.clone(),
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(x, y)| a * x + b * y)
                .collect(),
        })
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.dim()]; self.dim()];
        for (i, row) in d.iter_mut().enumerate() {
            for (j, a) in self.row_entries(i) {
                row[j] += a;
            }
        }
        d
    }

    /// Sparse LU with partial pivoting.
    pub fn factorize(&self) -> Result<Factorization> {
        if let Some(k) = self.values.iter().position(|v| !v.is_finite()) {
            return Err(Error::AssemblyFailure {
                cell: usize::MAX,
                reason: format!("matrix entry {k} is not finite"),
            });
        }
        let p = &self.pattern;
        // faer panics on an exactly zero pivot; catch the obvious case first
        let mut col_nonzero = vec![false; p.n];
        for i in 0..p.n {
            let row = &self.values[p.row_ptr[i]..p.row_ptr[i + 1]];
            if row.iter().all(|v| *v == 0.0) {
                return Err(Error::SingularSystem { pivot: i });
            }
            for (k, &j) in p.cols[p.row_ptr[i]..p.row_ptr[i + 1]].iter().enumerate() {
                col_nonzero[j] |= row[k] != 0.0;
            }
        }
        if let Some(j) = col_nonzero.iter().position(|nz| !nz) {
            return Err(Error::SingularSystem { pivot: j });
        }
        let symbolic = p.symbolic()?.clone();
        let sym =
            SymbolicSparseColMat::new_checked(p.n, p.n, p.row_ptr.clone(), None, p.cols.clone());
        let transposed = SparseColMat::new(sym, self.values.clone());
        let attempt = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| {
            Lu::try_new_with_symbolic(symbolic, transposed.as_ref())
        }));
        let lu = match attempt {
            Ok(Ok(lu)) => lu,
            Ok(Err(LuError::SymbolicSingular { index })) => {
                return Err(Error::SingularSystem { pivot: index })
            }
            Ok(Err(LuError::Generic(_))) | Err(_) => {
                return Err(Error::SingularSystem { pivot: usize::MAX })
            }
        };
        Ok(Factorization {
            lu,
            n: p.n,
            op: self.clone(),
        })
    }
}

/// Factorized operator, reusable for many right-hand sides.
pub struct Factorization {
    // LU of Aᵀ
    lu: Lu<usize, f64>,
    n: usize,
    op: SparseOperator,
}

impl Factorization {
    /// Solves A x = rhs.
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        self.solve_impl(rhs, false)
    }

    /// Solves Aᵀ x = rhs.
    pub fn solve_transpose(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        self.solve_impl(rhs, true)
    }

    fn raw_solve(&self, rhs: &[f64], transpose: bool) -> Vec<f64> {
        let b = Mat::from_fn(self.n, 1, |i, _| rhs[i]);
        let x = if transpose {
            self.lu.solve(&b)
        } else {
            self.lu.solve_transpose(&b)
        };
        (0..self.n).map(|i| x[(i, 0)]).collect()
    }

    fn solve_impl(&self, rhs: &[f64], transpose: bool) -> Result<Vec<f64>> {
        if rhs.len() != self.n {
            return Err(Error::invalid(format!(
                "right-hand side has {} entries, system has {}",
                rhs.len(),
                self.n
            )));
        }
        if rhs.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("right-hand side is not finite"));
        }
        let mut x = self.raw_solve(rhs, transpose);
        if let Some(pivot) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::SingularSystem { pivot });
        }
        let residual = |x: &[f64]| -> Vec<f64> {
            let ax = if transpose {
                self.op.transpose_matvec(x)
            } else {
                self.op.matvec(x)
            };
            rhs.iter().zip(&ax).map(|(b, a)| b - a).collect()
        };
        let mut r = residual(&x);
        let bnorm = norm(rhs);
        if norm(&r) > 1e-12 * bnorm {
            // one step of iterative refinement
            let dx = self.raw_solve(&r, transpose);
            if dx.iter().all(|v| v.is_finite()) {
                for (xi, d) in x.iter_mut().zip(&dx) {
                    *xi += d;
                }
                r = residual(&x);
            }
        }
        // a vanishing pivot shows up as a residual far above rounding level
        let scale = bnorm.max(self.op.max_abs() * x.iter().fold(0.0f64, |m, v| m.max(v.abs())));
        if norm(&r) > 1e-8 * scale && norm(&r) > 1e-300 {
            let pivot = r
                .iter()
                .enumerate()
                .fold(
                    (0, 0.0),
                    |best, (i, v)| if v.abs() > best.1 { (i, v.abs()) } else { best },
                )
                .0;
            return Err(Error::SingularSystem { pivot });
        }
        Ok(x)
    }
}

pub fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solves `op · x = rhs` by sparse direct factorization.
pub fn solve_linear(op: &SparseOperator, rhs: &[f64]) -> Result<Vec<f64>> {
    op.factorize()?.solve(rhs)
}

/// Prescribed values on a set of degrees of freedom.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DirichletBC {
    values: BTreeMap<usize, f64>,
}

impl DirichletBC {
    pub fn new() -> Self {
        Self::default()
    }

    /// Prescribes `value` on `dof`; a different earlier value on the same dof is a conflict.
    pub fn insert(&mut self, dof: usize, value: f64) -> Result<()> {
        if !value.is_finite() {
            return Err(Error::invalid(format!(
                "non-finite prescription on dof {dof}"
            )));
        }
        if let Some(&old) = self.values.get(&dof) {
            if (old - value).abs() > 1e-14 * old.abs().max(value.abs()).max(1.0) {
                return Err(Error::invalid(format!(
                    "dof {dof} prescribed both {old} and {value}"
                )));
            }
            return Ok(());
        }
        self.values.insert(dof, value);
        Ok(())
    }

    pub fn merge(&mut self, other: &DirichletBC) -> Result<()> {
        for (&d, &v) in &other.values {
            self.insert(d, v)?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn contains(&self, dof: usize) -> bool {
        self.values.contains_key(&dof)
    }

    pub fn get(&self, dof: usize) -> Option<f64> {
        self.values.get(&dof).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.values.iter().map(|(&d, &v)| (d, v))
    }

    /// Same constrained set with every value replaced by `f(dof, value)`.
    pub fn map_values(&self, mut f: impl FnMut(usize, f64) -> f64) -> DirichletBC {
        DirichletBC {
            values: self.values.iter().map(|(&d, &v)| (d, f(d, v))).collect(),
        }
    }

    /// Writes the prescribed values into `x`.
    pub fn impose(&self, x: &mut [f64]) {
        for (&d, &v) in &self.values {
            x[d] = v;
        }
    }

    pub fn mask(&self, n: usize) -> Vec<bool> {
        let mut m = vec![false; n];
        for &d in self.values.keys() {
            m[d] = true;
        }
        m
    }
}

/// Replaces constrained rows with identity rows, sets their right-hand side to
/// the prescribed value and lifts the constrained columns out of the
/// remaining equations.
pub fn apply_dirichlet(op: &mut SparseOperator, rhs: &mut [f64], bc: &DirichletBC) -> Result<()> {
    let n = op.dim();
    if rhs.len() != n {
        return Err(Error::invalid(
            "right-hand side length differs from the operator",
        ));
    }
    if let Some((d, _)) = bc.iter().find(|&(d, _)| d >= n) {
        return Err(Error::invalid(format!(
            "constrained dof {d} outside the space"
        )));
    }
    let mask = bc.mask(n);
    let pattern = op.pattern.clone();
    for i in 0..n {
        let range = pattern.row_ptr[i]..pattern.row_ptr[i + 1];
        if mask[i] {
            for k in range {
                op.values[k] = if pattern.cols[k] == i { 1.0 } else { 0.0 };
            }
            rhs[i] = bc.get(i).unwrap_or(0.0);
        } else {
            for k in range {
                let j = pattern.cols[k];
                if mask[j] {
                    rhs[i] -= op.values[k] * bc.get(j).unwrap_or(0.0);
                    op.values[k] = 0.0;
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_solve_returns_rhs() {
        let op = SparseOperator::identity(4);
        let r = vec![1.0, -2.0, 3.5, 0.25];
        assert_eq!(solve_linear(&op, &r).unwrap(), r);
    }

    #[test]
    fn two_by_two_solve_matches_hand_inverse() {
        let op =
            SparseOperator::from_triplets(2, &[(0, 0, 4.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, 3.0)])
                .unwrap();
        let x = solve_linear(&op, &[1.0, 2.0]).unwrap();
        assert!((x[0] - 1.0 / 11.0).abs() < 1e-15);
        assert!((x[1] - 7.0 / 11.0).abs() < 1e-15);
        let xt = op
            .factorize()
            .unwrap()
            .solve_transpose(&[1.0, 2.0])
            .unwrap();
        assert!((xt[0] - 1.0 / 11.0).abs() < 1e-15);
    }

    #[test]
    fn nonsymmetric_transpose_solve() {
        let op =
            SparseOperator::from_triplets(2, &[(0, 0, 2.0), (0, 1, 1.0), (1, 1, 4.0)]).unwrap();
        let f = op.factorize().unwrap();
        let x = f.solve(&[3.0, 4.0]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-15 && (x[1] - 1.0).abs() < 1e-15);
        let y = f.solve_transpose(&[2.0, 5.0]).unwrap();
        // [[2,0],[1,4]] y = [2,5] -> y = [1, 1]
        assert!((y[0] - 1.0).abs() < 1e-15 && (y[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn zero_row_is_singular() {
        let op =
            SparseOperator::from_triplets(3, &[(0, 0, 1.0), (1, 1, 0.0), (2, 2, 1.0), (1, 0, 0.0)])
                .unwrap();
        match solve_linear(&op, &[1.0, 1.0, 1.0]) {
            Err(Error::SingularSystem { .. }) => {}
            other => panic!("expected singular-system error, got {other:?}"),
        }
    }

    #[test]
    fn dirichlet_on_identity() {
        let mut op = SparseOperator::identity(3);
        let mut rhs = vec![1.0, 2.0, 3.0];
        let mut bc = DirichletBC::new();
        bc.insert(0, 7.0).unwrap();
        apply_dirichlet(&mut op, &mut rhs, &bc).unwrap();
        assert_eq!(solve_linear(&op, &rhs).unwrap()[0], 7.0);
    }

    #[test]
    fn dirichlet_chain_midpoint() {
        let mut op = SparseOperator::from_triplets(
            3,
            &[
                (0, 0, 1.0),
                (0, 1, -1.0),
                (1, 0, -1.0),
                (1, 1, 2.0),
                (1, 2, -1.0),
                (2, 1, -1.0),
                (2, 2, 1.0),
            ],
        )
        .unwrap();
        let mut rhs = vec![0.0; 3];
        let mut bc = DirichletBC::new();
        bc.insert(0, 0.0).unwrap();
        bc.insert(2, 1.0).unwrap();
        apply_dirichlet(&mut op, &mut rhs, &bc).unwrap();
        let x = solve_linear(&op, &rhs).unwrap();
        assert!((x[1] - 0.5).abs() < 1e-15);
        assert_eq!((x[0], x[2]), (0.0, 1.0));
    }

    #[test]
    fn zero_prescription_everywhere_gives_zero() {
        let mut op =
            SparseOperator::from_triplets(2, &[(0, 0, 2.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, 2.0)])
                .unwrap();
        let mut rhs = vec![5.0, -3.0];
        let mut bc = DirichletBC::new();
        bc.insert(0, 0.0).unwrap();
        bc.insert(1, 0.0).unwrap();
        apply_dirichlet(&mut op, &mut rhs, &bc).unwrap();
        assert_eq!(solve_linear(&op, &rhs).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn dirichlet_is_idempotent() {
        let base = SparseOperator::from_triplets(
            3,
            &[
                (0, 0, 3.0),
                (0, 1, 1.0),
                (1, 0, 1.0),
                (1, 1, 3.0),
                (1, 2, 1.0),
                (2, 1, 1.0),
                (2, 2, 3.0),
            ],
        )
        .unwrap();
        let mut bc = DirichletBC::new();
        bc.insert(1, 2.0).unwrap();
        let (mut a1, mut r1) = (base.clone(), vec![1.0, 1.0, 1.0]);
        apply_dirichlet(&mut a1, &mut r1, &bc).unwrap();
        let (mut a2, mut r2) = (a1.clone(), r1.clone());
        apply_dirichlet(&mut a2, &mut r2, &bc).unwrap();
        assert_eq!(a1.values(), a2.values());
        assert_eq!(r1, r2);
    }

    #[test]
    fn conflicting_prescriptions_rejected() {
        let mut bc = DirichletBC::new();
        bc.insert(3, 1.0).unwrap();
        bc.insert(3, 1.0).unwrap();
        assert!(bc.insert(3, 2.0).is_err());
    }
}
