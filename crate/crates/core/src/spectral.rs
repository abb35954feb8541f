//! Non-negative square matrices and their Perron–Frobenius data.
//!
//! The spectral radius of a reducible matrix is the largest radius among the
//! irreducible diagonal blocks of its block upper-triangular form, so every
//! computation here starts from [`decompose`]. Radii of irreducible blocks are
//! bracketed with Collatz–Wielandt bounds while power-iterating the shifted
//! block `D/s + I`; the shift makes the iteration primitive even when `D`
//! is periodic.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

/// Default absolute tolerance on eigenvalues.
pub const DEFAULT_TOL: f64 = 1e-12;

/// Iteration cap for a single block before reporting non-convergence.
pub const MAX_ITERATIONS: usize = 1_000_000;

/// Iterations between repeated squarings of the iteration matrix.
const SQUARE_EVERY: usize = 32;
const MAX_SQUARINGS: usize = 48;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectralError {
    #[error("matrix must have at least one row")]
    Empty,
    #[error("expected {expected} entries for a square matrix, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("entry ({row}, {col}) = {value} is not a finite non-negative number")]
    InvalidEntry { row: usize, col: usize, value: f64 },
    #[error("power iteration did not converge after {iterations} iterations (bracket [{lower}, {upper}])")]
    NonConvergence {
        iterations: usize,
        lower: f64,
        upper: f64,
    },
}

/// Dense square matrix with non-negative entries, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NonNegMatrix {
    dim: usize,
    entries: Vec<f64>,
}

impl NonNegMatrix {
    pub fn new(dim: usize, entries: Vec<f64>) -> Result<Self, SpectralError> {
        if dim == 0 {
            return Err(SpectralError::Empty);
        }
        if entries.len() != dim * dim {
            return Err(SpectralError::Shape {
                expected: dim * dim,
                got: entries.len(),
            });
        }
        for (k, &value) in entries.iter().enumerate() {
            if !value.is_finite() || value < 0.0 {
                return Err(SpectralError::InvalidEntry {
                    row: k / dim,
                    col: k % dim,
                    value,
                });
            }
        }
        Ok(Self { dim, entries })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, SpectralError> {
        let dim = rows.len();
        let entries: Vec<f64> = rows.iter().flatten().copied().collect();
        if rows.iter().any(|r| r.len() != dim) {
            return Err(SpectralError::Shape {
                expected: dim * dim,
                got: entries.len(),
            });
        }
        Self::new(dim, entries)
    }

    pub fn zeros(dim: usize) -> Self {
        assert!(dim > 0, "dimension must be positive");
        Self {
            dim,
            entries: vec![0.0; dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.entries[i * dim + i] = 1.0;
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.entries[row * self.dim + col]
    }

    /// Adds a non-negative amount to one entry.
    pub(crate) fn accumulate(&mut self, row: usize, col: usize, amount: f64) {
        debug_assert!(amount >= 0.0 && amount.is_finite());
        self.entries[row * self.dim + col] += amount;
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.entries.chunks(self.dim).map(|r| r.to_vec()).collect()
    }

    pub fn is_zero(&self) -> bool {
        self.entries.iter().all(|&x| x == 0.0)
    }

    /// Entrywise comparison `self >= other`.
    pub fn dominates(&self, other: &NonNegMatrix) -> bool {
        self.dim == other.dim && self.entries.iter().zip(&other.entries).all(|(a, b)| a >= b)
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.dim);
        self.entries
            .chunks(self.dim)
            .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn mul(&self, other: &NonNegMatrix) -> NonNegMatrix {
        assert_eq!(self.dim, other.dim);
        let n = self.dim;
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for k in 0..n {
                let a = self.entries[i * n + k];
                if a == 0.0 {
                    continue;
                }
                for j in 0..n {
                    out[i * n + j] += a * other.entries[k * n + j];
                }
            }
        }
        NonNegMatrix {
            dim: n,
            entries: out,
        }
    }

    pub fn pow(&self, exponent: u32) -> NonNegMatrix {
        let mut result = NonNegMatrix::identity(self.dim);
        let mut base = self.clone();
        let mut e = exponent;
        while e > 0 {
            if e & 1 == 1 {
                result = result.mul(&base);
            }
            base = base.mul(&base);
            e >>= 1;
        }
        result
    }

    /// Principal submatrix on the given indices, in the given order.
    pub fn submatrix(&self, indices: &[usize]) -> NonNegMatrix {
        let n = indices.len();
        let mut entries = Vec::with_capacity(n * n);
        for &i in indices {
            for &j in indices {
                entries.push(self.get(i, j));
            }
        }
        NonNegMatrix { dim: n, entries }
    }

    /// Support digraph: an edge `i -> j` whenever entry `(i, j)` is positive.
    pub fn support_graph(&self) -> Vec<Vec<usize>> {
        (0..self.dim)
            .map(|i| (0..self.dim).filter(|&j| self.get(i, j) > 0.0).collect())
            .collect()
    }

    fn max_row_sum(&self) -> f64 {
        self.entries
            .chunks(self.dim)
            .map(|r| r.iter().sum::<f64>())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    Irreducible,
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Block {
    pub indices: Vec<usize>,
    pub kind: BlockKind,
}

/// Block upper-triangular form `P A P^-1`.
///
/// Blocks are listed so that every positive entry `(i, j)` has
/// `block_of(i) <= block_of(j)`; `order` is the concatenation of the blocks.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Decomposition {
    pub order: Vec<usize>,
    pub blocks: Vec<Block>,
}

impl Decomposition {
    pub fn block_of(&self) -> Vec<usize> {
        let mut owner = vec![usize::MAX; self.order.len()];
        for (b, block) in self.blocks.iter().enumerate() {
            for &i in &block.indices {
                owner[i] = b;
            }
        }
        owner
    }
}

/// Strongly connected components of the support digraph (Tarjan).
///
/// Components come out in reverse topological order: a component is emitted
/// only after everything reachable from it.
fn tarjan(graph: &[Vec<usize>]) -> Vec<Vec<usize>> {
    struct State<'g> {
        graph: &'g [Vec<usize>],
        next: usize,
        index: Vec<Option<usize>>,
        low: Vec<usize>,
        stack: Vec<usize>,
        on_stack: Vec<bool>,
        comps: Vec<Vec<usize>>,
    }

    fn visit(v: usize, st: &mut State<'_>) {
        st.index[v] = Some(st.next);
        st.low[v] = st.next;
        st.next += 1;
        st.stack.push(v);
        st.on_stack[v] = true;
        for &w in &st.graph[v] {
            match st.index[w] {
                None => {
                    visit(w, st);
                    st.low[v] = st.low[v].min(st.low[w]);
                }
                Some(iw) if st.on_stack[w] => st.low[v] = st.low[v].min(iw),
                Some(_) => {}
            }
        }
        if Some(st.low[v]) == st.index[v] {
            let mut comp = Vec::new();
            loop {
                let w = st.stack.pop().expect("tarjan stack underflow");
                st.on_stack[w] = false;
                comp.push(w);
                if w == v {
                    break;
                }
            }
            comp.sort_unstable();
            st.comps.push(comp);
        }
    }

    let n = graph.len();
    let mut st = State {
        graph,
        next: 0,
        index: vec![None; n],
        low: vec![0; n],
        stack: Vec::new(),
        on_stack: vec![false; n],
        comps: Vec::new(),
    };
    for v in 0..n {
        if st.index[v].is_none() {
            visit(v, &mut st);
        }
    }
    st.comps
}

/// Irreducible decomposition via strongly-connected-component condensation.
pub fn decompose(a: &NonNegMatrix) -> Decomposition {
    let graph = a.support_graph();
    let mut comps = tarjan(&graph);
    comps.reverse();
    let blocks: Vec<Block> = comps
        .into_iter()
        .map(|indices| {
            let kind = if indices.len() == 1 && a.get(indices[0], indices[0]) == 0.0 {
                BlockKind::Zero
            } else {
                BlockKind::Irreducible
            };
            Block { indices, kind }
        })
        .collect();
    let order = blocks
        .iter()
        .flat_map(|b| b.indices.iter().copied())
        .collect();
    Decomposition { order, blocks }
}

/// True iff the support digraph is strongly connected; `[[0]]` is not irreducible.
pub fn is_irreducible(a: &NonNegMatrix) -> bool {
    let dec = decompose(a);
    dec.blocks.len() == 1 && dec.blocks[0].kind == BlockKind::Irreducible
}

/// Collatz–Wielandt bracket `lower <= λ(D) <= upper` for an irreducible block,
/// with the positive vector that produced it.
#[derive(Debug, Clone)]
struct Bracket {
    lower: f64,
    upper: f64,
    vector: Vec<f64>,
}

impl Bracket {
    fn value(&self) -> f64 {
        0.5 * (self.lower + self.upper)
    }
}

fn collatz_wielandt(d: &NonNegMatrix, x: &[f64]) -> (f64, f64) {
    let y = d.mul_vec(x);
    let mut lo = f64::INFINITY;
    let mut hi = 0.0f64;
    for (yi, xi) in y.iter().zip(x) {
        let r = yi / xi;
        lo = lo.min(r);
        hi = hi.max(r);
    }
    (lo, hi)
}

fn irreducible_bracket(d: &NonNegMatrix, tol: f64) -> Result<Bracket, SpectralError> {
    let n = d.dim();
    if n == 1 {
        let v = d.get(0, 0);
        return Ok(Bracket {
            lower: v,
            upper: v,
            vector: vec![1.0],
        });
    }
    let scale = d.max_row_sum();
    // Iteration matrix D/s + I, later replaced by its repeated squares.
    let mut m: Vec<f64> = (0..n * n)
        .map(|k| {
            let (i, j) = (k / n, k % n);
            d.get(i, j) / scale + if i == j { 1.0 } else { 0.0 }
        })
        .collect();
    let mut x = vec![1.0 / n as f64; n];
    let mut squarings = 0;
    let mut best = (0.0, f64::INFINITY);
    for iter in 0..MAX_ITERATIONS {
        let (lo, hi) = collatz_wielandt(d, &x);
        if hi - lo < best.1 - best.0 {
            best = (lo, hi);
        }
        let floor = 16.0 * f64::EPSILON * hi * n as f64;
        if hi - lo <= tol.max(floor) {
            return Ok(Bracket {
                lower: lo,
                upper: hi,
                vector: x,
            });
        }
        let mut y = vec![0.0; n];
        for i in 0..n {
            y[i] = (0..n).map(|j| m[i * n + j] * x[j]).sum();
        }
        let total: f64 = y.iter().sum();
        for v in &mut y {
            *v /= total;
            // keep the iterate strictly inside the positive cone
            if *v < f64::MIN_POSITIVE {
                *v = f64::MIN_POSITIVE;
            }
        }
        x = y;
        if (iter + 1) % SQUARE_EVERY == 0 && squarings < MAX_SQUARINGS {
            let mut sq = vec![0.0; n * n];
            for i in 0..n {
                for k in 0..n {
                    let a = m[i * n + k];
                    for j in 0..n {
                        sq[i * n + j] += a * m[k * n + j];
                    }
                }
            }
            let peak = sq.iter().copied().fold(0.0, f64::max);
            m = sq.into_iter().map(|v| v / peak).collect();
            squarings += 1;
        }
    }
    Err(SpectralError::NonConvergence {
        iterations: MAX_ITERATIONS,
        lower: best.0,
        upper: best.1,
    })
}

fn block_brackets(
    a: &NonNegMatrix,
    dec: &Decomposition,
    tol: f64,
) -> Result<Vec<Bracket>, SpectralError> {
    dec.blocks
        .iter()
        .map(|block| match block.kind {
            BlockKind::Zero => Ok(Bracket {
                lower: 0.0,
                upper: 0.0,
                vector: vec![1.0],
            }),
            BlockKind::Irreducible => irreducible_bracket(&a.submatrix(&block.indices), tol),
        })
        .collect()
}

/// Spectral radius of each diagonal block of [`decompose`]`(a)`, in block order.
pub fn block_radii(a: &NonNegMatrix, tol: f64) -> Result<Vec<f64>, SpectralError> {
    let dec = decompose(a);
    Ok(block_brackets(a, &dec, tol)?
        .iter()
        .map(Bracket::value)
        .collect())
}

/// Perron–Frobenius eigenvalue λ(A), accurate to `tol` (absolute).
pub fn spectral_radius(a: &NonNegMatrix, tol: f64) -> Result<f64, SpectralError> {
    Ok(block_radii(a, tol)?.into_iter().fold(0.0, f64::max))
}

/// Index of the first diagonal block whose radius is within `tol` of λ(A).
pub fn leading_block(a: &NonNegMatrix, tol: f64) -> Result<usize, SpectralError> {
    let radii = block_radii(a, tol)?;
    let lambda = radii.iter().copied().fold(0.0, f64::max);
    Ok(radii
        .iter()
        .position(|&r| (r - lambda).abs() <= tol)
        .unwrap_or(0))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerronVector {
    pub value: f64,
    pub vector: Vec<f64>,
}

/// Non-negative unit-sum eigenvector for λ(A).
///
/// The vector is supported on the first leading block and the blocks that
/// feed into it. Those upstream blocks have strictly smaller radius, so
/// `(λ I - D_c) v_c = rhs` has a non-negative solution for each of them,
/// solved from the leading block backwards.
pub fn pf_eigenvector(a: &NonNegMatrix, tol: f64) -> Result<PerronVector, SpectralError> {
    let dec = decompose(a);
    let brackets = block_brackets(a, &dec, tol)?;
    let lambda = brackets.iter().map(Bracket::value).fold(0.0, f64::max);
    let lead = brackets
        .iter()
        .position(|b| (b.value() - lambda).abs() <= tol)
        .unwrap_or(0);

    let n = a.dim();
    let mut v = vec![0.0; n];
    let lead_block = &dec.blocks[lead];
    let lead_vec = &brackets[lead].vector;
    let lead_sum: f64 = lead_vec.iter().sum();
    for (&i, &x) in lead_block.indices.iter().zip(lead_vec) {
        v[i] = x / lead_sum;
    }

    for c in (0..lead).rev() {
        let idx = &dec.blocks[c].indices;
        let rhs: Vec<f64> = idx
            .iter()
            .map(|&i| {
                (0..n)
                    .filter(|j| !idx.contains(j))
                    .map(|j| a.get(i, j) * v[j])
                    .sum()
            })
            .collect();
        if rhs.iter().all(|&r| r == 0.0) {
            continue;
        }
        let k = idx.len();
        let system = DMatrix::from_fn(k, k, |r, s| {
            let delta = if r == s { lambda } else { 0.0 };
            delta - a.get(idx[r], idx[s])
        });
        let solved = system
            .lu()
            .solve(&DVector::from_vec(rhs))
            .unwrap_or_else(|| DVector::zeros(k));
        for (r, &i) in idx.iter().enumerate() {
            v[i] = solved[r].max(0.0);
        }
    }

    let total: f64 = v.iter().sum();
    for x in &mut v {
        *x /= total;
    }
    Ok(PerronVector {
        value: lambda,
        vector: v,
    })
}

/// `‖A v − λ v‖∞`.
pub fn eigen_residual(a: &NonNegMatrix, lambda: f64, v: &[f64]) -> f64 {
    a.mul_vec(v)
        .iter()
        .zip(v)
        .map(|(av, x)| (av - lambda * x).abs())
        .fold(0.0, f64::max)
}
