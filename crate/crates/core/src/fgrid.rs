//! Function-space numerics on a discretized interval.
//!
//! Every function lives on a [`Grid`]: uniform nodes on `[a1, a2]` with
//! trapezoid weights. Inner products are quadrature sums, and a bounded
//! operator is stored as a kernel matrix `K` acting by
//!
//! ```text
//! (A f)(s_i) = Σ_j K[i, j] · w_j · f(s_j)
//! ```
//!
//! Under this representation the adjoint is the transposed kernel, composition
//! is `K_A · diag(w) · K_B`, and the Hilbert–Schmidt norm is the Frobenius norm
//! of `W^{1/2} K W^{1/2}`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative eigenvalue floor below which eigenvalues count as zero.
pub const EIGEN_FLOOR: f64 = 1e-12;

/// Relative asymmetry tolerated by [`eig_self_adjoint`].
pub const SELF_ADJOINT_TOL: f64 = 1e-8;

/// A uniform grid on `[a1, a2]` with trapezoid quadrature weights.
#[derive(Clone, PartialEq)]
pub struct Grid {
    a1: f64,
    a2: f64,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    sqrt_weights: Vec<f64>,
}

impl fmt::Debug for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Grid[{}, {}; n={}]", self.a1, self.a2, self.n())
    }
}

impl Grid {
    /// Builds a uniform grid with `n >= 2` nodes, endpoints included.
    pub fn uniform(a1: f64, a2: f64, n: usize) -> Result<Arc<Grid>> {
        if !(a1.is_finite() && a2.is_finite()) || a2 <= a1 {
            return Err(Error::InvalidArgument(format!(
                "grid endpoints must satisfy a1 < a2, got [{a1}, {a2}]"
            )));
        }
        if n < 2 {
            return Err(Error::InvalidArgument(format!(
                "grid needs at least 2 nodes, got {n}"
            )));
        }
        let h = (a2 - a1) / (n - 1) as f64;
        let mut nodes: Vec<f64> = (0..n).map(|i| a1 + h * i as f64).collect();
        nodes[n - 1] = a2;
        let mut weights = vec![h; n];
        weights[0] = 0.5 * h;
        weights[n - 1] = 0.5 * h;
        let sqrt_weights = weights.iter().map(|w| w.sqrt()).collect();
        Ok(Arc::new(Grid {
            a1,
            a2,
            nodes,
            weights,
            sqrt_weights,
        }))
    }

    pub fn a1(&self) -> f64 {
        self.a1
    }

    pub fn a2(&self) -> f64 {
        self.a2
    }

    pub fn n(&self) -> usize {
        self.nodes.len()
    }

    pub fn len(&self) -> f64 {
        self.a2 - self.a1
    }

    pub fn step(&self) -> f64 {
        self.nodes[1] - self.nodes[0]
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn sqrt_weights(&self) -> &[f64] {
        &self.sqrt_weights
    }

    /// Index of the node closest to `u`.
    pub fn nearest_index(&self, u: f64) -> usize {
        let pos = ((u - self.a1) / self.step()).round();
        pos.clamp(0.0, (self.n() - 1) as f64) as usize
    }
}

pub(crate) fn check_same(a: &Grid, b: &Grid, what: &str) -> Result<()> {
    if std::ptr::eq(a, b) || a == b {
        Ok(())
    } else {
        Err(Error::GridMismatch(format!("{what}: {a:?} vs {b:?}")))
    }
}

/// A function sampled on the nodes of a grid.
#[derive(Clone, Debug)]
pub struct GridFn {
    grid: Arc<Grid>,
    values: DVector<f64>,
}

impl GridFn {
    pub fn new(grid: Arc<Grid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n() {
            return Err(Error::GridMismatch(format!(
                "function has {} values, grid has {} nodes",
                values.len(),
                grid.n()
            )));
        }
        Ok(GridFn {
            grid,
            values: DVector::from_vec(values),
        })
    }

    pub(crate) fn from_vector(grid: Arc<Grid>, values: DVector<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.n());
        GridFn { grid, values }
    }

    /// Samples a closure at the grid nodes.
    pub fn from_fn(grid: Arc<Grid>, f: impl Fn(f64) -> f64) -> Self {
        let values = DVector::from_iterator(grid.n(), grid.nodes().iter().map(|&u| f(u)));
        GridFn { grid, values }
    }

    pub fn zeros(grid: Arc<Grid>) -> Self {
        let n = grid.n();
        GridFn {
            grid,
            values: DVector::zeros(n),
        }
    }

    pub fn constant(grid: Arc<Grid>, c: f64) -> Self {
        let n = grid.n();
        GridFn {
            grid,
            values: DVector::from_element(n, c),
        }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        self.values.as_slice()
    }

    pub(crate) fn vector(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values.data.into()
    }

    /// Quadrature integral over `[a1, a2]`.
    pub fn integral(&self) -> f64 {
        self.values
            .iter()
            .zip(self.grid.weights())
            .map(|(v, w)| v * w)
            .sum()
    }

    pub fn inner(&self, other: &GridFn) -> Result<f64> {
        inner(self, other)
    }

    pub fn norm(&self) -> f64 {
        weighted_dot(self.values.as_slice(), self.values.as_slice(), self.grid.weights()).sqrt()
    }

    pub fn scale(&self, c: f64) -> GridFn {
        GridFn {
            grid: self.grid.clone(),
            values: &self.values * c,
        }
    }

    pub fn add(&self, other: &GridFn) -> Result<GridFn> {
        check_same(&self.grid, &other.grid, "add")?;
        Ok(GridFn {
            grid: self.grid.clone(),
            values: &self.values + &other.values,
        })
    }

    pub fn sub(&self, other: &GridFn) -> Result<GridFn> {
        check_same(&self.grid, &other.grid, "sub")?;
        Ok(GridFn {
            grid: self.grid.clone(),
            values: &self.values - &other.values,
        })
    }

    pub fn max_abs_diff(&self, other: &GridFn) -> f64 {
        self.values
            .iter()
            .zip(other.values.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

fn weighted_dot(f: &[f64], g: &[f64], w: &[f64]) -> f64 {
    f.iter().zip(g).zip(w).map(|((a, b), w)| a * b * w).sum()
}

/// Quadrature inner product `Σ_j w_j f(s_j) g(s_j)`.
pub fn inner(f: &GridFn, g: &GridFn) -> Result<f64> {
    check_same(&f.grid, &g.grid, "inner")?;
    Ok(weighted_dot(f.values(), g.values(), f.grid.weights()))
}

/// A time-indexed sample of grid functions, stored as a `T × n` matrix.
#[derive(Clone, Debug)]
pub struct FnSeries {
    grid: Arc<Grid>,
    values: DMatrix<f64>,
}

impl FnSeries {
    pub fn new(grid: Arc<Grid>, values: DMatrix<f64>) -> Result<Self> {
        if values.ncols() != grid.n() {
            return Err(Error::GridMismatch(format!(
                "series has {} columns, grid has {} nodes",
                values.ncols(),
                grid.n()
            )));
        }
        if values.nrows() == 0 {
            return Err(Error::InvalidArgument("series must be non-empty".into()));
        }
        Ok(FnSeries { grid, values })
    }

    pub fn from_rows(grid: Arc<Grid>, rows: &[Vec<f64>]) -> Result<Self> {
        let n = grid.n();
        if let Some((t, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != n) {
            return Err(Error::GridMismatch(format!(
                "row {t} has {} values, grid has {n} nodes",
                r.len()
            )));
        }
        let m = DMatrix::from_fn(rows.len(), n, |t, j| rows[t][j]);
        FnSeries::new(grid, m)
    }

    pub fn from_fns(fns: &[GridFn]) -> Result<Self> {
        let first = fns
            .first()
            .ok_or_else(|| Error::InvalidArgument("series must be non-empty".into()))?;
        let grid = first.grid.clone();
        for f in fns {
            check_same(&grid, &f.grid, "series row")?;
        }
        let m = DMatrix::from_fn(fns.len(), grid.n(), |t, j| fns[t].values[j]);
        FnSeries::new(grid, m)
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    /// Number of time points `T`.
    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn row(&self, t: usize) -> GridFn {
        GridFn::from_vector(self.grid.clone(), self.values.row(t).transpose())
    }

    pub fn rows(&self) -> impl Iterator<Item = GridFn> + '_ {
        (0..self.len()).map(|t| self.row(t))
    }

    /// Pointwise time average.
    pub fn mean(&self) -> GridFn {
        let m = self.values.row_mean();
        GridFn::from_vector(self.grid.clone(), m.transpose())
    }

    /// The series with its time average removed from every row.
    pub fn demeaned(&self) -> FnSeries {
        let mean = self.values.row_mean();
        let mut v = self.values.clone();
        for mut row in v.row_iter_mut() {
            row -= &mean;
        }
        FnSeries {
            grid: self.grid.clone(),
            values: v,
        }
    }

    pub fn scale(&self, c: f64) -> FnSeries {
        FnSeries {
            grid: self.grid.clone(),
            values: &self.values * c,
        }
    }

    pub fn sub(&self, other: &FnSeries) -> Result<FnSeries> {
        check_same(&self.grid, &other.grid, "series sub")?;
        if self.len() != other.len() {
            return Err(Error::InvalidArgument(format!(
                "series lengths differ: {} vs {}",
                self.len(),
                other.len()
            )));
        }
        Ok(FnSeries {
            grid: self.grid.clone(),
            values: &self.values - &other.values,
        })
    }

    /// Applies `op` to every observation.
    pub fn map_op(&self, op: &LinOp) -> Result<FnSeries> {
        check_same(&self.grid, &op.domain, "series map")?;
        // rows · (K · W)^T = rows · W · K^T
        let mut xw = self.values.clone();
        scale_columns(&mut xw, self.grid.weights());
        let out = xw * op.kernel.transpose();
        Ok(FnSeries {
            grid: op.codomain.clone(),
            values: out,
        })
    }

    /// Partial sums `S_t = Σ_{s ≤ t} x_s`.
    pub fn partial_sums(&self) -> FnSeries {
        let mut v = self.values.clone();
        for t in 1..v.nrows() {
            let prev = v.row(t - 1).into_owned();
            let mut row = v.row_mut(t);
            row += &prev;
        }
        FnSeries {
            grid: self.grid.clone(),
            values: v,
        }
    }
}

pub(crate) fn scale_columns(m: &mut DMatrix<f64>, w: &[f64]) {
    for (j, mut col) in m.column_iter_mut().enumerate() {
        col *= w[j];
    }
}

fn scale_rows(m: &mut DMatrix<f64>, w: &[f64]) {
    for (i, mut row) in m.row_iter_mut().enumerate() {
        row *= w[i];
    }
}

/// A bounded linear operator between two grid spaces, stored by its kernel.
#[derive(Clone, Debug)]
pub struct LinOp {
    domain: Arc<Grid>,
    codomain: Arc<Grid>,
    kernel: DMatrix<f64>,
}

impl LinOp {
    /// Kernel is `n_out × n_in`.
    pub fn from_kernel(domain: Arc<Grid>, codomain: Arc<Grid>, kernel: DMatrix<f64>) -> Result<Self> {
        if kernel.nrows() != codomain.n() || kernel.ncols() != domain.n() {
            return Err(Error::GridMismatch(format!(
                "kernel is {}×{}, grids need {}×{}",
                kernel.nrows(),
                kernel.ncols(),
                codomain.n(),
                domain.n()
            )));
        }
        Ok(LinOp {
            domain,
            codomain,
            kernel,
        })
    }

    pub fn zero(domain: Arc<Grid>, codomain: Arc<Grid>) -> Self {
        let kernel = DMatrix::zeros(codomain.n(), domain.n());
        LinOp {
            domain,
            codomain,
            kernel,
        }
    }

    /// The identity, whose kernel is `diag(1 / w)`.
    pub fn identity(grid: Arc<Grid>) -> Self {
        let n = grid.n();
        let kernel = DMatrix::from_diagonal(&DVector::from_iterator(
            n,
            grid.weights().iter().map(|w| 1.0 / w),
        ));
        LinOp {
            domain: grid.clone(),
            codomain: grid,
            kernel,
        }
    }

    pub fn domain(&self) -> &Arc<Grid> {
        &self.domain
    }

    pub fn codomain(&self) -> &Arc<Grid> {
        &self.codomain
    }

    pub fn kernel(&self) -> &DMatrix<f64> {
        &self.kernel
    }

    pub fn is_square(&self) -> bool {
        self.domain == self.codomain
    }

    pub fn apply(&self, f: &GridFn) -> Result<GridFn> {
        check_same(&self.domain, &f.grid, "apply")?;
        let wf = f.values.component_mul(&DVector::from_column_slice(self.domain.weights()));
        Ok(GridFn::from_vector(self.codomain.clone(), &self.kernel * wf))
    }

    /// `self ∘ inner`: apply `inner` first.
    pub fn compose(&self, inner: &LinOp) -> Result<LinOp> {
        check_same(&self.domain, &inner.codomain, "compose")?;
        let mut left = self.kernel.clone();
        scale_columns(&mut left, self.domain.weights());
        Ok(LinOp {
            domain: inner.domain.clone(),
            codomain: self.codomain.clone(),
            kernel: left * &inner.kernel,
        })
    }

    pub fn adjoint(&self) -> LinOp {
        LinOp {
            domain: self.codomain.clone(),
            codomain: self.domain.clone(),
            kernel: self.kernel.transpose(),
        }
    }

    pub fn add(&self, other: &LinOp) -> Result<LinOp> {
        self.check_same_shape(other, "add")?;
        Ok(LinOp {
            domain: self.domain.clone(),
            codomain: self.codomain.clone(),
            kernel: &self.kernel + &other.kernel,
        })
    }

    pub fn sub(&self, other: &LinOp) -> Result<LinOp> {
        self.check_same_shape(other, "sub")?;
        Ok(LinOp {
            domain: self.domain.clone(),
            codomain: self.codomain.clone(),
            kernel: &self.kernel - &other.kernel,
        })
    }

    pub fn scale(&self, c: f64) -> LinOp {
        LinOp {
            domain: self.domain.clone(),
            codomain: self.codomain.clone(),
            kernel: &self.kernel * c,
        }
    }

    fn check_same_shape(&self, other: &LinOp, what: &str) -> Result<()> {
        check_same(&self.domain, &other.domain, what)?;
        check_same(&self.codomain, &other.codomain, what)
    }

    /// `W_out^{1/2} K W_in^{1/2}`: the matrix of the operator in orthonormal
    /// nodal coordinates.
    pub fn symmetrized(&self) -> DMatrix<f64> {
        let mut m = self.kernel.clone();
        scale_rows(&mut m, self.codomain.sqrt_weights());
        scale_columns(&mut m, self.domain.sqrt_weights());
        m
    }

    pub fn hs_norm(&self) -> f64 {
        self.symmetrized().norm()
    }

    /// Largest singular value.
    pub fn op_norm(&self) -> f64 {
        let s = self.symmetrized();
        s.singular_values().iter().cloned().fold(0.0, f64::max)
    }

    /// `Σ_j ⟨A e_j, e_j⟩`, defined for square operators.
    pub fn trace(&self) -> Result<f64> {
        check_same(&self.domain, &self.codomain, "trace")?;
        Ok(self
            .kernel
            .diagonal()
            .iter()
            .zip(self.domain.weights())
            .map(|(k, w)| k * w)
            .sum())
    }

    /// `‖A − A*‖_HS / max(‖A‖_HS, tiny)`.
    pub fn asymmetry(&self) -> f64 {
        let s = self.symmetrized();
        let num = (&s - s.transpose()).norm();
        let den = s.norm();
        if den == 0.0 {
            0.0
        } else {
            num / den
        }
    }

    /// `⟨A f, g⟩`.
    pub fn quadratic(&self, f: &GridFn, g: &GridFn) -> Result<f64> {
        inner(&self.apply(f)?, g)
    }
}

/// Rank-one operator `h ↦ ⟨f, h⟩ g`.
pub fn tensor(f: &GridFn, g: &GridFn) -> LinOp {
    LinOp {
        domain: f.grid.clone(),
        codomain: g.grid.clone(),
        kernel: &g.values * f.values.transpose(),
    }
}

/// Descending eigenpairs of a self-adjoint operator, orthonormal in the grid
/// inner product.
#[derive(Clone, Debug)]
pub struct EigenSystem {
    values: Vec<f64>,
    functions: Vec<GridFn>,
}

impl EigenSystem {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn functions(&self) -> &[GridFn] {
        &self.functions
    }

    /// 1-based access, matching the usual `λ_j`, `v_j` indexing.
    pub fn value(&self, j: usize) -> f64 {
        self.values[j - 1]
    }

    pub fn function(&self, j: usize) -> &GridFn {
        &self.functions[j - 1]
    }

    /// Number of eigenvalues above `EIGEN_FLOOR · λ_1`.
    pub fn numerical_rank(&self) -> usize {
        let top = self.values.first().copied().unwrap_or(0.0);
        if top <= 0.0 {
            return 0;
        }
        self.values
            .iter()
            .take_while(|&&l| l > EIGEN_FLOOR * top)
            .count()
    }

    pub(crate) fn floor(&self) -> f64 {
        EIGEN_FLOOR * self.values.first().copied().unwrap_or(0.0).max(0.0)
    }

    /// `Σ_{j=lo}^{hi} c(λ_j) Π_j` (1-based, inclusive).
    pub fn spectral_sum(&self, lo: usize, hi: usize, c: impl Fn(f64) -> f64) -> LinOp {
        let grid = self.functions[0].grid.clone();
        let n = grid.n();
        let mut kernel = DMatrix::zeros(n, n);
        for j in lo..=hi {
            let v = &self.functions[j - 1].values;
            kernel.ger(c(self.values[j - 1]), v, v, 1.0);
        }
        LinOp {
            domain: grid.clone(),
            codomain: grid,
            kernel,
        }
    }

    /// Orthogonal projection onto `span{v_lo, …, v_hi}`.
    pub fn projection(&self, lo: usize, hi: usize) -> LinOp {
        self.spectral_sum(lo, hi, |_| 1.0)
    }

    /// `Σ_j λ_j Π_j` over all retained pairs.
    pub fn reconstruct(&self) -> LinOp {
        self.spectral_sum(1, self.values.len(), |l| l)
    }
}

/// Eigendecomposition of a self-adjoint operator via the symmetrized kernel
/// `W^{1/2} K W^{1/2}`.
///
/// Eigenfunctions are normalized in the grid inner product and signed so that
/// their largest-magnitude coordinate is positive.
pub fn eig_self_adjoint(a: &LinOp) -> Result<EigenSystem> {
    check_same(&a.domain, &a.codomain, "eig_self_adjoint")?;
    let asym = a.asymmetry();
    if asym > SELF_ADJOINT_TOL {
        return Err(Error::NotSelfAdjoint { asymmetry: asym });
    }
    let s = a.symmetrized();
    let s = (&s + s.transpose()) * 0.5;
    let eig = SymmetricEigen::new(s);
    let n = a.domain.n();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let sw = a.domain.sqrt_weights();
    let mut values = Vec::with_capacity(n);
    let mut functions = Vec::with_capacity(n);
    for &k in &order {
        values.push(eig.eigenvalues[k]);
        let u = eig.eigenvectors.column(k);
        let mut v = DVector::from_iterator(n, u.iter().zip(sw).map(|(x, s)| x / s));
        let (imax, _) = v
            .iter()
            .enumerate()
            .fold((0, 0.0f64), |(bi, bv), (i, x)| {
                if x.abs() > bv {
                    (i, x.abs())
                } else {
                    (bi, bv)
                }
            });
        if v[imax] < 0.0 {
            v.neg_mut();
        }
        functions.push(GridFn::from_vector(a.domain.clone(), v));
    }
    Ok(EigenSystem { values, functions })
}

/// First `count` orthonormal Fourier functions on `[a1, a2]`.
///
/// Order: optional constant, then `sin(2πk u'), cos(2πk u')` for
/// `k = 1, 2, …` with `u' = (u − a1)/(a2 − a1)`, each scaled to unit norm.
pub fn fourier_basis(grid: &Arc<Grid>, count: usize, include_constant: bool) -> Result<Vec<GridFn>> {
    if count == 0 {
        return Err(Error::InvalidArgument("Fourier basis needs count >= 1".into()));
    }
    if count as f64 > grid.n() as f64 / 4.0 {
        return Err(Error::InvalidArgument(format!(
            "{count} Fourier functions need at least {} grid nodes, grid has {}",
            4 * count,
            grid.n()
        )));
    }
    let len = grid.len();
    let a1 = grid.a1();
    let amp = (2.0 / len).sqrt();
    let mut out = Vec::with_capacity(count);
    if include_constant {
        out.push(GridFn::constant(grid.clone(), 1.0 / len.sqrt()));
    }
    let mut k = 1usize;
    while out.len() < count {
        let freq = 2.0 * std::f64::consts::PI * k as f64 / len;
        out.push(GridFn::from_fn(grid.clone(), |u| amp * (freq * (u - a1)).sin()));
        if out.len() < count {
            out.push(GridFn::from_fn(grid.clone(), |u| amp * (freq * (u - a1)).cos()));
        }
        k += 1;
    }
    Ok(out)
}

/// Stacks functions as the columns of a `n × J` matrix.
pub(crate) fn basis_matrix(basis: &[GridFn]) -> DMatrix<f64> {
    let n = basis[0].grid.n();
    DMatrix::from_fn(n, basis.len(), |i, j| basis[j].values[i])
}
