//! Linear-algebra kernels: sparse storage, banded complex LU, dense
//! generalized eigensolvers, Rayleigh-quotient refinement, reorderings and a
//! shift-invert Lanczos iteration for real symmetric pencils.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;

pub const I: C64 = C64::new(0.0, 1.0);

#[inline]
pub fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

/// Compressed sparse row matrix with real entries.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    pub n_rows: usize,
    pub n_cols: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds the matrix from unsorted triplets; duplicates are summed.
    pub fn from_triplets(n_rows: usize, n_cols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n_rows];
        for &(i, j, v) in triplets {
            rows[i].push((j, v));
        }
        let mut indptr = Vec::with_capacity(n_rows + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for row in rows.iter_mut() {
            row.sort_by_key(|e| e.0);
            let mut k = 0;
            while k < row.len() {
                let col = row[k].0;
                let mut acc = 0.0;
                while k < row.len() && row[k].0 == col {
                    acc += row[k].1;
                    k += 1;
                }
                indices.push(col);
                values.push(acc);
            }
            indptr.push(indices.len());
        }
        CsrMatrix { n_rows, n_cols, indptr, indices, values }
    }

    pub fn zeros_like(&self) -> Self {
        CsrMatrix { values: vec![0.0; self.values.len()], ..self.clone() }
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (self.indptr[i]..self.indptr[i + 1]).map(move |k| (self.indices[k], self.values[k]))
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n_rows).flat_map(move |i| self.row(i).map(move |(j, v)| (i, j, v)))
    }

    pub fn transpose(&self) -> Self {
        let trips: Vec<_> = self.iter().map(|(i, j, v)| (j, i, v)).collect();
        CsrMatrix::from_triplets(self.n_cols, self.n_rows, &trips)
    }

    /// Returns `a * self + b * other` on the union pattern.
    pub fn combine(&self, a: f64, other: &CsrMatrix, b: f64) -> Self {
        let mut trips: Vec<_> = self.iter().map(|(i, j, v)| (i, j, a * v)).collect();
        trips.extend(other.iter().map(|(i, j, v)| (i, j, b * v)));
        CsrMatrix::from_triplets(self.n_rows, self.n_cols, &trips)
    }

    pub fn matvec(&self, x: &[C64]) -> Vec<C64> {
        (0..self.n_rows)
            .map(|i| self.row(i).map(|(j, v)| x[j] * v).sum())
            .collect()
    }

    pub fn matvec_real(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n_rows)
            .map(|i| self.row(i).map(|(j, v)| x[j] * v).sum())
            .collect()
    }

    /// Sesquilinear form `vᴴ S u`.
    pub fn form(&self, u: &[C64], v: &[C64]) -> C64 {
        let mut acc = C64::new(0.0, 0.0);
        for i in 0..self.n_rows {
            let mut row = C64::new(0.0, 0.0);
            for (j, a) in self.row(i) {
                row += u[j] * a;
            }
            acc += v[i].conj() * row;
        }
        acc
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.n_rows, self.n_cols);
        for (i, j, v) in self.iter() {
            d[(i, j)] += v;
        }
        d
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Symmetric permutation `P S Pᵀ` with `new_index = perm[old_index]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let trips: Vec<_> = self.iter().map(|(i, j, v)| (perm[i], perm[j], v)).collect();
        CsrMatrix::from_triplets(self.n_rows, self.n_cols, &trips)
    }

    /// Maximal `|i - j|` over stored entries.
    pub fn bandwidth(&self) -> usize {
        self.iter().map(|(i, j, _)| i.abs_diff(j)).max().unwrap_or(0)
    }
}

/// A complex linear combination `Σ cₖ Sₖ` of real sparse matrices sharing a
/// common dimension.
pub struct Combination<'a> {
    pub terms: Vec<(C64, &'a CsrMatrix)>,
}

impl<'a> Combination<'a> {
    pub fn new() -> Self {
        Combination { terms: Vec::new() }
    }

    pub fn with(mut self, coef: C64, m: &'a CsrMatrix) -> Self {
        if coef != C64::new(0.0, 0.0) {
            self.terms.push((coef, m));
        }
        self
    }

    pub fn dim(&self) -> usize {
        self.terms.first().map(|t| t.1.n_rows).unwrap_or(0)
    }

    pub fn to_dense(&self, n: usize) -> DMatrix<C64> {
        let mut d = DMatrix::from_element(n, n, C64::new(0.0, 0.0));
        for &(coef, m) in &self.terms {
            for (i, j, v) in m.iter() {
                d[(i, j)] += coef * v;
            }
        }
        d
    }

    pub fn matvec(&self, n: usize, x: &[C64]) -> Vec<C64> {
        let mut y = vec![C64::new(0.0, 0.0); n];
        for &(coef, m) in &self.terms {
            for i in 0..m.n_rows {
                let mut acc = C64::new(0.0, 0.0);
                for (j, v) in m.row(i) {
                    acc += x[j] * v;
                }
                y[i] += coef * acc;
            }
        }
        y
    }

    pub fn to_band(&self, n: usize, kl: usize, ku: usize) -> BandMatrix {
        let mut b = BandMatrix::zeros(n, kl, ku);
        for &(coef, m) in &self.terms {
            for (i, j, v) in m.iter() {
                b.add(i, j, coef * v);
            }
        }
        b
    }
}

impl Default for Combination<'_> {
    fn default() -> Self {
        Self::new()
    }
}

/// Banded complex matrix in LAPACK `gbtrf` layout with room for pivoting
/// fill-in.
#[derive(Debug, Clone)]
pub struct BandMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    ldab: usize,
    ab: Vec<C64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let ldab = 2 * kl + ku + 1;
        BandMatrix { n, kl, ku, ldab, ab: vec![C64::new(0.0, 0.0); ldab * n] }
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        (self.kl + self.ku + i - j) + j * self.ldab
    }

    pub fn add(&mut self, i: usize, j: usize, v: C64) {
        debug_assert!(i <= j + self.kl && j <= i + self.ku, "entry ({i},{j}) outside band");
        let k = self.idx(i, j);
        self.ab[k] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> C64 {
        if i > j + self.kl || j > i + self.ku {
            C64::new(0.0, 0.0)
        } else {
            self.ab[self.idx(i, j)]
        }
    }

    /// LU factorization with partial pivoting (unblocked `gbtf2`).
    pub fn factor(mut self) -> Result<BandLu> {
        let n = self.n;
        let kl = self.kl;
        let kv = self.kl + self.ku;
        let mut ipiv = vec![0usize; n];
        let mut ju = 0usize;
        let mut max_pivot = 0.0f64;
        let mut min_pivot = f64::INFINITY;
        for j in 0..n {
            let km = kl.min(n - 1 - j);
            let mut jp = j;
            let mut best = -1.0;
            for i in j..=j + km {
                let a = self.ab[self.idx(i, j)].norm();
                if a > best {
                    best = a;
                    jp = i;
                }
            }
            ipiv[j] = jp;
            if best == 0.0 {
                return Err(Error::Singular(format!("zero pivot in column {j}")));
            }
            max_pivot = max_pivot.max(best);
            min_pivot = min_pivot.min(best);
            ju = ju.max((jp + self.ku).min(n - 1));
            if jp != j {
                for col in j..=ju {
                    let a = self.idx(j, col);
                    let b = self.idx(jp, col);
                    self.ab.swap(a, b);
                }
            }
            let piv = self.ab[self.idx(j, j)];
            let inv = piv.inv();
            for i in j + 1..=j + km {
                let k = self.idx(i, j);
                self.ab[k] *= inv;
            }
            for col in j + 1..=ju {
                let ujc = self.ab[self.idx(j, col)];
                if ujc == C64::new(0.0, 0.0) {
                    continue;
                }
                for i in j + 1..=j + km {
                    let l = self.ab[self.idx(i, j)];
                    let k = self.idx(i, col);
                    self.ab[k] -= l * ujc;
                }
            }
        }
        let _ = kv;
        Ok(BandLu { m: self, ipiv, pivot_ratio: min_pivot / max_pivot })
    }
}

/// Factored banded matrix.
#[derive(Debug, Clone)]
pub struct BandLu {
    m: BandMatrix,
    ipiv: Vec<usize>,
    /// Ratio of smallest to largest pivot magnitude (a cheap conditioning hint).
    pub pivot_ratio: f64,
}

impl BandLu {
    pub fn dim(&self) -> usize {
        self.m.n
    }

    /// Solves `A x = b` in place.
    pub fn solve_in_place(&self, b: &mut [C64]) {
        let m = &self.m;
        let n = m.n;
        let kv = m.kl + m.ku;
        for j in 0..n {
            let jp = self.ipiv[j];
            if jp != j {
                b.swap(j, jp);
            }
            let km = m.kl.min(n - 1 - j);
            let bj = b[j];
            if bj != C64::new(0.0, 0.0) {
                for i in j + 1..=j + km {
                    b[i] -= m.ab[m.idx(i, j)] * bj;
                }
            }
        }
        for j in (0..n).rev() {
            b[j] /= m.ab[m.idx(j, j)];
            let bj = b[j];
            let lo = j.saturating_sub(kv);
            for i in lo..j {
                b[i] -= m.ab[m.idx(i, j)] * bj;
            }
        }
    }

    pub fn solve(&self, b: &[C64]) -> Vec<C64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }

    /// Solves `Aᴴ x = b` using the same factorization.
    pub fn solve_adjoint(&self, b: &[C64]) -> Vec<C64> {
        let m = &self.m;
        let n = m.n;
        let kv = m.kl + m.ku;
        let mut x = b.to_vec();
        // Uᴴ y = b (forward substitution).
        for j in 0..n {
            let lo = j.saturating_sub(kv);
            let mut acc = x[j];
            for i in lo..j {
                acc -= m.ab[m.idx(i, j)].conj() * x[i];
            }
            x[j] = acc / m.ab[m.idx(j, j)].conj();
        }
        // Lᴴ z = y and undo the row interchanges in reverse order.
        for j in (0..n).rev() {
            let km = m.kl.min(n - 1 - j);
            let mut acc = x[j];
            for i in j + 1..=j + km {
                acc -= m.ab[m.idx(i, j)].conj() * x[i];
            }
            x[j] = acc;
            let jp = self.ipiv[j];
            if jp != j {
                x.swap(j, jp);
            }
        }
        x
    }
}

/// Cholesky-based reduction of a generalized eigenproblem `A v = λ M v`
/// with real symmetric positive definite `M` to standard form.
#[derive(Debug, Clone)]
pub struct PencilReducer {
    l_inv: DMatrix<C64>,
    l_inv_h: DMatrix<C64>,
}

impl PencilReducer {
    pub fn new(mass: &DMatrix<f64>) -> Option<Self> {
        let chol = mass.clone().cholesky()?;
        let l = chol.l();
        let n = l.nrows();
        let l_inv_real = l.solve_lower_triangular(&DMatrix::identity(n, n))?;
        let l_inv = l_inv_real.map(c);
        let l_inv_h = l_inv.adjoint();
        Some(PencilReducer { l_inv, l_inv_h })
    }

    pub fn reduce(&self, a: &DMatrix<C64>) -> DMatrix<C64> {
        &self.l_inv * a * &self.l_inv_h
    }

    /// `L⁻ᴴ`, mapping standard-form eigenvectors back to pencil eigenvectors.
    pub fn back_transform(&self) -> &DMatrix<C64> {
        &self.l_inv_h
    }

    /// Ascending eigen-decomposition of an already reduced Hermitian matrix;
    /// returns the standard-form eigenvectors.
    pub fn reduced_hermitian_eigen(b: DMatrix<C64>) -> (Vec<f64>, DMatrix<C64>) {
        let n = b.nrows();
        let herm = faer::Mat::<faer::c64>::from_fn(n, n, |i, j| {
            let z = (b[(i, j)] + b[(j, i)].conj()) * 0.5;
            faer::c64::new(z.re, z.im)
        });
        let eig = herm
            .self_adjoint_eigen(faer::Side::Lower)
            .expect("self-adjoint eigensolver failed to converge");
        // faer returns the eigenvalues in ascending order.
        let s = eig.S().column_vector();
        let values: Vec<f64> = (0..n).map(|i| s[i].re).collect();
        let u = eig.U();
        let y = DMatrix::from_fn(n, n, |i, j| C64::new(u[(i, j)].re, u[(i, j)].im));
        (values, y)
    }

    /// Ascending eigenvalues of an already reduced Hermitian matrix.
    pub fn reduced_hermitian_values(b: DMatrix<C64>) -> Vec<f64> {
        let n = b.nrows();
        let herm = faer::Mat::<faer::c64>::from_fn(n, n, |i, j| {
            let z = (b[(i, j)] + b[(j, i)].conj()) * 0.5;
            faer::c64::new(z.re, z.im)
        });
        let mut values =
            herm.self_adjoint_eigenvalues(faer::Side::Lower).expect("self-adjoint eigensolver failed to converge");
        values.sort_by(f64::total_cmp);
        values
    }

    /// All eigenpairs of a Hermitian pencil, ascending; eigenvectors are
    /// M-orthonormal and stored as matrix columns.
    pub fn hermitian_eigen(&self, a: &DMatrix<C64>) -> (Vec<f64>, DMatrix<C64>) {
        let (values, y) = Self::reduced_hermitian_eigen(self.reduce(a));
        let v = &self.l_inv_h * y;
        (values, v)
    }
}

/// Result of a two-sided Rayleigh-quotient refinement.
#[derive(Debug, Clone)]
pub struct RefinedPair {
    pub value: C64,
    pub right: Vec<C64>,
    pub left: Vec<C64>,
    pub residual: f64,
    pub iterations: usize,
}

/// Two-sided Rayleigh-quotient iteration for the pencil `(A, M)` using banded
/// factorizations. `a_band(σ)` must return `A − σM` in band form; `apply_a`
/// and `apply_m` apply `A` and `M`. The left vector is normalized so that
/// `wᴴ M v = 1` and the right vector has unit M-norm.
pub fn rayleigh_refine(
    a_band: &dyn Fn(C64) -> BandMatrix,
    apply_a: &dyn Fn(&[C64]) -> Vec<C64>,
    apply_m: &dyn Fn(&[C64]) -> Vec<C64>,
    lambda0: C64,
    v0: &[C64],
    w0: &[C64],
    tol: f64,
    max_iter: usize,
) -> Result<RefinedPair> {
    let mut v = v0.to_vec();
    let mut w = w0.to_vec();
    let mut lam = lambda0;
    let mass_norm = |x: &[C64]| dotc(x, &apply_m(x)).re.max(0.0).sqrt();
    let nv = mass_norm(&v);
    scale(&mut v, c(1.0 / nv));
    let nw = mass_norm(&w);
    scale(&mut w, c(1.0 / nw));
    let mut residual = f64::INFINITY;
    let scale_a = lambda0.norm().max(1.0);
    for it in 0..max_iter {
        let av = apply_a(&v);
        let mv = apply_m(&v);
        let num = dotc(&w, &av);
        let den = dotc(&w, &mv);
        if den.norm() < 1e-300 {
            return Err(Error::Eigensolver("left/right vectors orthogonal".into()));
        }
        lam = num / den;
        let r: Vec<C64> = av.iter().zip(&mv).map(|(a, m)| a - lam * m).collect();
        residual = norm2(&r) / (scale_a * norm2(&mv).max(1e-300));
        if residual < tol {
            let _ = it;
            let d = dotc(&w, &apply_m(&v));
            let mut wn = w.clone();
            scale(&mut wn, (d.conj()).inv());
            return Ok(RefinedPair { value: lam, right: v, left: wn, residual, iterations: it });
        }
        let lu = match a_band(lam).factor() {
            Ok(lu) => lu,
            Err(_) => {
                // Exactly singular shift: the current pair is already exact.
                let d = dotc(&w, &apply_m(&v));
                let mut wn = w.clone();
                scale(&mut wn, (d.conj()).inv());
                return Ok(RefinedPair { value: lam, right: v, left: wn, residual, iterations: it });
            }
        };
        let mut vn = lu.solve(&mv);
        let mw = apply_m(&w);
        let mut wn = lu.solve_adjoint(&mw);
        let a = mass_norm(&vn);
        scale(&mut vn, c(1.0 / a));
        let b = mass_norm(&wn);
        scale(&mut wn, c(1.0 / b));
        // Keep a continuous phase relative to the previous iterate.
        let ph = dotc(&v, &apply_m(&vn));
        if ph.norm() > 0.0 {
            scale(&mut vn, (ph / ph.norm()).conj());
        }
        let ph = dotc(&w, &apply_m(&wn));
        if ph.norm() > 0.0 {
            scale(&mut wn, (ph / ph.norm()).conj());
        }
        v = vn;
        w = wn;
    }
    if residual < tol.sqrt() {
        let d = dotc(&w, &apply_m(&v));
        let mut wn = w.clone();
        scale(&mut wn, (d.conj()).inv());
        return Ok(RefinedPair { value: lam, right: v, left: wn, residual, iterations: max_iter });
    }
    Err(Error::Eigensolver(format!(
        "Rayleigh iteration did not converge (residual {residual:.3e})"
    )))
}

pub fn dotc(x: &[C64], y: &[C64]) -> C64 {
    x.iter().zip(y).map(|(a, b)| a.conj() * b).sum()
}

pub fn norm2(x: &[C64]) -> f64 {
    x.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt()
}

pub fn scale(x: &mut [C64], s: C64) {
    for a in x.iter_mut() {
        *a *= s;
    }
}

pub fn column(m: &DMatrix<C64>, j: usize) -> Vec<C64> {
    m.column(j).iter().copied().collect()
}

/// Reverse Cuthill–McKee ordering of a symmetric sparsity pattern. Returns
/// `perm` with `new_index = perm[old_index]`.
pub fn reverse_cuthill_mckee(adjacency: &[Vec<usize>]) -> Vec<usize> {
    let n = adjacency.len();
    let degree: Vec<usize> = adjacency.iter().map(|a| a.len()).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    while order.len() < n {
        let start = (0..n)
            .filter(|&i| !visited[i])
            .min_by_key(|&i| (degree[i], i))
            .expect("unvisited node");
        // Walk to a pseudo-peripheral node by repeated breadth-first sweeps.
        let mut root = start;
        let mut depth = 0;
        loop {
            let levels = bfs_levels(adjacency, root, &visited);
            let last = levels.last().cloned().unwrap_or_default();
            if levels.len() <= depth || last.is_empty() {
                break;
            }
            depth = levels.len();
            let cand = *last.iter().min_by_key(|&&i| (degree[i], i)).unwrap();
            if cand == root {
                break;
            }
            let next_depth = bfs_levels(adjacency, cand, &visited).len();
            if next_depth <= depth {
                root = cand;
                break;
            }
            root = cand;
        }
        let mut queue = std::collections::VecDeque::new();
        visited[root] = true;
        queue.push_back(root);
        while let Some(u) = queue.pop_front() {
            order.push(u);
            let mut nb: Vec<usize> = adjacency[u].iter().copied().filter(|&v| !visited[v]).collect();
            nb.sort_by_key(|&v| (degree[v], v));
            for v in nb {
                if !visited[v] {
                    visited[v] = true;
                    queue.push_back(v);
                }
            }
        }
    }
    order.reverse();
    let mut perm = vec![0; n];
    for (new, &old) in order.iter().enumerate() {
        perm[old] = new;
    }
    perm
}

fn bfs_levels(adjacency: &[Vec<usize>], root: usize, blocked: &[bool]) -> Vec<Vec<usize>> {
    let n = adjacency.len();
    let mut seen = vec![false; n];
    seen[root] = true;
    let mut levels = vec![vec![root]];
    loop {
        let mut next = Vec::new();
        for &u in levels.last().unwrap() {
            for &v in &adjacency[u] {
                if !seen[v] && !blocked[v] {
                    seen[v] = true;
                    next.push(v);
                }
            }
        }
        if next.is_empty() {
            break;
        }
        levels.push(next);
    }
    levels
}

/// Maximum-weight perfect assignment on a square matrix (Hungarian method).
/// Returns `assign[row] = col`.
pub fn max_weight_assignment(weights: &[Vec<f64>]) -> Vec<usize> {
    let n = weights.len();
    if n == 0 {
        return Vec::new();
    }
    let big = weights.iter().flatten().fold(0.0f64, |m, &w| m.max(w));
    // Minimize cost = big − weight with the classical O(n³) potentials method.
    let cost = |i: usize, j: usize| big - weights[i][j];
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0; n];
    for j in 1..=n {
        if p[j] > 0 {
            assign[p[j] - 1] = j - 1;
        }
    }
    assign
}

/// Eigenpairs of a real symmetric pencil `(K, M)` closest to a shift `sigma`,
/// via shift-invert Lanczos with full reorthogonalization in the M-inner
/// product. `solve` applies `(K − σM)⁻¹`, `apply_m` applies `M`.
pub fn shift_invert_lanczos(
    n: usize,
    sigma: f64,
    n_wanted: usize,
    solve: &dyn Fn(&[f64]) -> Vec<f64>,
    apply_k: &dyn Fn(&[f64]) -> Vec<f64>,
    apply_m: &dyn Fn(&[f64]) -> Vec<f64>,
    tol: f64,
) -> Result<Vec<(f64, Vec<f64>)>> {
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let mut dim = (4 * n_wanted + 40).min(n);
    loop {
        // Deterministic, non-degenerate start vector.
        let mut q0: Vec<f64> = (0..n).map(|i| 1.0 + 0.5 * ((i as f64) * 0.7390851).sin()).collect();
        let m0 = apply_m(&q0);
        let nrm = dot(&q0, &m0).sqrt();
        q0.iter_mut().for_each(|x| *x /= nrm);
        let mut basis: Vec<Vec<f64>> = vec![q0];
        let mut mbasis: Vec<Vec<f64>> = vec![apply_m(&basis[0])];
        let mut alpha = Vec::new();
        let mut beta: Vec<f64> = Vec::new();
        for j in 0..dim {
            let mut wv = solve(&mbasis[j]);
            let a = dot(&wv, &mbasis[j]);
            alpha.push(a);
            // Full reorthogonalization (twice is enough).
            for _ in 0..2 {
                for k in 0..basis.len() {
                    let coef = dot(&wv, &mbasis[k]);
                    for (x, q) in wv.iter_mut().zip(&basis[k]) {
                        *x -= coef * q;
                    }
                }
            }
            if j + 1 == dim {
                break;
            }
            let mw = apply_m(&wv);
            let b = dot(&wv, &mw).max(0.0).sqrt();
            if b < 1e-14 * a.abs().max(1e-300) {
                break;
            }
            beta.push(b);
            wv.iter_mut().for_each(|x| *x /= b);
            let mw: Vec<f64> = mw.iter().map(|x| x / b).collect();
            basis.push(wv);
            mbasis.push(mw);
        }
        let m = alpha.len();
        let mut t = DMatrix::<f64>::zeros(m, m);
        for i in 0..m {
            t[(i, i)] = alpha[i];
            if i + 1 < m {
                t[(i, i + 1)] = beta[i];
                t[(i + 1, i)] = beta[i];
            }
        }
        let eig = t.symmetric_eigen();
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].abs().total_cmp(&eig.eigenvalues[a].abs()));
        let mut out = Vec::new();
        let mut all_ok = true;
        for &k in order.iter().take(n_wanted.min(m)) {
            let theta = eig.eigenvalues[k];
            let mut x = vec![0.0; n];
            for (j, q) in basis.iter().enumerate().take(m) {
                let s = eig.eigenvectors[(j, k)];
                for (xi, qi) in x.iter_mut().zip(q) {
                    *xi += s * qi;
                }
            }
            let mx = apply_m(&x);
            let nrm = dot(&x, &mx).sqrt();
            x.iter_mut().for_each(|v| *v /= nrm);
            let lam = sigma + 1.0 / theta;
            let kx = apply_k(&x);
            let mx = apply_m(&x);
            let r: f64 = kx.iter().zip(&mx).map(|(a, b)| (a - lam * b).powi(2)).sum::<f64>().sqrt();
            let rel = r / (lam.abs().max(1.0) * mx.iter().map(|v| v * v).sum::<f64>().sqrt());
            if rel > tol {
                all_ok = false;
            }
            out.push((lam, x));
        }
        if all_ok || dim == n {
            out.sort_by(|a, b| a.0.total_cmp(&b.0));
            return Ok(out);
        }
        if dim >= n {
            return Err(Error::Eigensolver("shift-invert Lanczos did not converge".into()));
        }
        dim = (2 * dim).min(n);
    }
}

/// Gauss–Legendre nodes and weights on `[-1, 1]` (Newton on the Legendre
/// recurrence; accurate to round-off for the orders used here).
pub fn gauss_legendre(order: usize) -> (Vec<f64>, Vec<f64>) {
    let n = order;
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..(n + 1) / 2 {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let mut p0 = 1.0;
            let mut p1 = 0.0;
            for k in 0..n {
                let p2 = p1;
                p1 = p0;
                p0 = ((2 * k + 1) as f64 * z * p1 - k as f64 * p2) / (k + 1) as f64;
            }
            dp = n as f64 * (z * p0 - p1) / (z * z - 1.0);
            let dz = p0 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// Smallest singular value and the corresponding right singular vector.
pub fn smallest_singular(m: &DMatrix<C64>) -> (f64, DVector<C64>, f64) {
    let svd = m.clone().svd(false, true);
    let vt = svd.v_t.expect("requested right singular vectors");
    let (k, smin) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(k, s)| (k, *s))
        .unwrap();
    let smax = svd.singular_values.iter().fold(0.0f64, |a, &b| a.max(b));
    let v: DVector<C64> = vt.row(k).adjoint();
    (smin, v, smax)
}

pub fn spectral_norm(m: &DMatrix<C64>) -> f64 {
    m.clone().singular_values().iter().fold(0.0f64, |a, &b| a.max(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn band_lu_solves_and_adjoint_solves() {
        let n = 9;
        let mut b = BandMatrix::zeros(n, 2, 1);
        let mut dense = DMatrix::from_element(n, n, C64::new(0.0, 0.0));
        for i in 0..n {
            for j in i.saturating_sub(2)..=(i + 1).min(n - 1) {
                let v = C64::new(((i * 7 + j * 3) % 5) as f64 - 2.0, ((i + 2 * j) % 3) as f64 - 1.0);
                let v = if i == j { v * 0.1 } else { v };
                b.add(i, j, v);
                dense[(i, j)] = v;
            }
        }
        let rhs: Vec<C64> = (0..n).map(|i| C64::new(i as f64, 1.0)).collect();
        let lu = b.factor().unwrap();
        let x = lu.solve(&rhs);
        let xv = DVector::from_vec(x);
        let r = &dense * &xv - DVector::from_vec(rhs.clone());
        assert!(r.norm() < 1e-10);
        let y = lu.solve_adjoint(&rhs);
        let r = dense.adjoint() * DVector::from_vec(y) - DVector::from_vec(rhs);
        assert!(r.norm() < 1e-10);
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(8);
        let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(14)).sum();
        assert!((s - 2.0 / 15.0).abs() < 1e-14);
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn hungarian_picks_maximal_assignment() {
        let w = vec![vec![0.1, 0.9, 0.0], vec![0.8, 0.85, 0.1], vec![0.0, 0.2, 0.7]];
        assert_eq!(max_weight_assignment(&w), vec![1, 0, 2]);
    }

    #[test]
    fn rcm_is_a_permutation() {
        let adj = vec![vec![3], vec![2, 4], vec![1], vec![0, 4], vec![1, 3]];
        let mut p = reverse_cuthill_mckee(&adj);
        p.sort();
        assert_eq!(p, vec![0, 1, 2, 3, 4]);
    }
}
