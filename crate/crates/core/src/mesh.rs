//! Uniform 1D mesh, grid functions with homogeneous Dirichlet boundary,
//! finite difference operators, discrete norms and the tridiagonal solves
//! used by the implicit stencils.

use std::ops::{Index, IndexMut};

use crate::error::{KgzError, Result};

/// Uniform mesh on `[a, b]` with `m` cells.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid1D {
    a: f64,
    b: f64,
    m: usize,
    h: f64,
    nodes: Vec<f64>,
}

impl Grid1D {
    pub fn new(a: f64, b: f64, m: usize) -> Result<Self> {
        if m < 2 {
            return Err(KgzError::Parameter(format!("grid needs M >= 2 cells, got {m}")));
        }
        if !(a.is_finite() && b.is_finite()) || b <= a {
            return Err(KgzError::Parameter(format!("invalid interval [{a}, {b}]")));
        }
        let h = (b - a) / m as f64;
        let mut nodes: Vec<f64> = (0..=m).map(|j| a + j as f64 * h).collect();
        nodes[0] = a;
        nodes[m] = b;
        Ok(Self { a, b, m, h, nodes })
    }

    /// Grid with spacing `h`; `(b - a) / h` must be an integer up to roundoff.
    pub fn with_spacing(a: f64, b: f64, h: f64) -> Result<Self> {
        if !(h > 0.0) {
            return Err(KgzError::Parameter(format!("mesh size must be positive, got {h}")));
        }
        let ratio = (b - a) / h;
        let m = ratio.round();
        if (ratio - m).abs() > 1e-9 * m.max(1.0) {
            return Err(KgzError::Parameter(format!(
                "mesh size h={h} does not divide the interval length {} (ratio {ratio})",
                b - a
            )));
        }
        Self::new(a, b, m as usize)
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn len(&self) -> f64 {
        self.b - self.a
    }

    /// Number of cells `M`.
    pub fn cells(&self) -> usize {
        self.m
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Number of interior unknowns, `M - 1`.
    pub fn interior(&self) -> usize {
        self.m - 1
    }

    /// Grid with `factor` times as many cells on the same interval.
    pub fn refined(&self, factor: usize) -> Result<Self> {
        Self::new(self.a, self.b, self.m * factor)
    }

    fn check(&self, len: usize, what: &str) -> Result<()> {
        if len != self.m + 1 {
            return Err(KgzError::Structural(format!(
                "{what} has {len} nodes, grid has {}",
                self.m + 1
            )));
        }
        Ok(())
    }
}

/// Node values on a grid with exact zeros at both endpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFn(Vec<f64>);

impl GridFn {
    /// Requires `values[0] == values[M] == 0`.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 3 {
            return Err(KgzError::Structural(format!(
                "grid function needs at least 3 nodes, got {}",
                values.len()
            )));
        }
        if values[0] != 0.0 || values[values.len() - 1] != 0.0 {
            return Err(KgzError::Structural(
                "grid function violates the homogeneous Dirichlet boundary".into(),
            ));
        }
        Ok(Self(values))
    }

    /// Takes any vector and overwrites the endpoints with zero.
    pub fn zeroed_boundary(mut values: Vec<f64>) -> Self {
        assert!(values.len() >= 3, "grid function needs at least 3 nodes");
        let last = values.len() - 1;
        values[0] = 0.0;
        values[last] = 0.0;
        Self(values)
    }

    pub fn zeros(grid: &Grid1D) -> Self {
        Self(vec![0.0; grid.cells() + 1])
    }

    /// Builds a grid function from the `M - 1` interior values.
    pub fn from_interior(interior: &[f64]) -> Self {
        let mut v = Vec::with_capacity(interior.len() + 2);
        v.push(0.0);
        v.extend_from_slice(interior);
        v.push(0.0);
        Self(v)
    }

    /// Samples `f` at the nodes; endpoint values are discarded.
    pub fn sample(grid: &Grid1D, f: impl Fn(f64) -> f64) -> Self {
        Self::zeroed_boundary(grid.nodes().iter().map(|&x| f(x)).collect())
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn interior(&self) -> &[f64] {
        &self.0[1..self.0.len() - 1]
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    /// Pointwise map; boundary stays zero.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::zeroed_boundary(self.0.iter().map(|&v| f(v)).collect())
    }

    /// Pointwise combination of two grid functions of equal length.
    pub fn zip_with(&self, other: &GridFn, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.len() != other.len() {
            return Err(KgzError::Structural(format!(
                "length mismatch: {} vs {}",
                self.len(),
                other.len()
            )));
        }
        Ok(Self::zeroed_boundary(
            self.0.iter().zip(&other.0).map(|(&a, &b)| f(a, b)).collect(),
        ))
    }

    pub fn scale(&self, c: f64) -> Self {
        self.map(|v| c * v)
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

impl Index<usize> for GridFn {
    type Output = f64;
    fn index(&self, j: usize) -> &f64 {
        &self.0[j]
    }
}

impl IndexMut<usize> for GridFn {
    fn index_mut(&mut self, j: usize) -> &mut f64 {
        &mut self.0[j]
    }
}

/// Second difference `(u_{j+1} - 2u_j + u_{j-1}) / h^2` at interior nodes, zero at the boundary.
pub fn diff_second(u: &GridFn, grid: &Grid1D) -> Result<GridFn> {
    grid.check(u.len(), "diff_second input")?;
    let inv_h2 = 1.0 / (grid.h() * grid.h());
    let v = u.values();
    let mut out = vec![0.0; v.len()];
    for j in 1..v.len() - 1 {
        out[j] = (v[j + 1] - 2.0 * v[j] + v[j - 1]) * inv_h2;
    }
    Ok(GridFn(out))
}

/// Forward difference `(u_{j+1} - u_j) / h` for `j = 0..M-1`.
pub fn diff_forward(u: &GridFn, grid: &Grid1D) -> Result<Vec<f64>> {
    grid.check(u.len(), "diff_forward input")?;
    let inv_h = 1.0 / grid.h();
    Ok(u.values().windows(2).map(|w| (w[1] - w[0]) * inv_h).collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Norms {
    pub l2: f64,
    pub h1_semi: f64,
    pub inf: f64,
}

impl Norms {
    /// `l2 + h1_semi`, the composite discrete H1 norm used by the error metrics.
    pub fn h1(&self) -> f64 {
        self.l2 + self.h1_semi
    }
}

pub fn norms(u: &GridFn, grid: &Grid1D) -> Result<Norms> {
    grid.check(u.len(), "norms input")?;
    let h = grid.h();
    let l2 = (h * u.interior().iter().map(|v| v * v).sum::<f64>()).sqrt();
    let d = diff_forward(u, grid)?;
    let h1_semi = (h * d.iter().map(|v| v * v).sum::<f64>()).sqrt();
    Ok(Norms {
        l2,
        h1_semi,
        inf: u.max_abs(),
    })
}

/// `(u, v) = h * sum_{j=1}^{M-1} u_j v_j`.
pub fn inner(u: &GridFn, v: &GridFn, grid: &Grid1D) -> Result<f64> {
    grid.check(u.len(), "inner lhs")?;
    grid.check(v.len(), "inner rhs")?;
    Ok(grid.h()
        * u.interior()
            .iter()
            .zip(v.interior())
            .map(|(a, b)| a * b)
            .sum::<f64>())
}

/// `<w1, w2> = h * sum_{j=0}^{M-1} w1_j w2_j` over cell-based vectors of length `M`.
pub fn inner_shifted(w1: &[f64], w2: &[f64], grid: &Grid1D) -> Result<f64> {
    if w1.len() != grid.cells() || w2.len() != grid.cells() {
        return Err(KgzError::Structural(format!(
            "inner_shifted expects length {}, got {} and {}",
            grid.cells(),
            w1.len(),
            w2.len()
        )));
    }
    Ok(grid.h() * w1.iter().zip(w2).map(|(a, b)| a * b).sum::<f64>())
}

/// Backward-error bound accepted from every tridiagonal solve.
pub const SOLVE_TOLERANCE: f64 = 1e-12;

/// Tridiagonal matrix stored by diagonals: `lower` and `upper` have length `n - 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tridiagonal {
    lower: Vec<f64>,
    diag: Vec<f64>,
    upper: Vec<f64>,
}

impl Tridiagonal {
    pub fn new(lower: Vec<f64>, diag: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let n = diag.len();
        if n == 0 || lower.len() + 1 != n || upper.len() + 1 != n {
            return Err(KgzError::Structural(format!(
                "tridiagonal shape mismatch: lower {}, diag {}, upper {}",
                lower.len(),
                n,
                upper.len()
            )));
        }
        Ok(Self { lower, diag, upper })
    }

    /// Constant-coefficient symmetric matrix with `off` on both off-diagonals.
    pub fn symmetric(diag: Vec<f64>, off: f64) -> Result<Self> {
        let n = diag.len();
        let offs = vec![off; n.saturating_sub(1)];
        Self::new(offs.clone(), diag, offs)
    }

    pub fn size(&self) -> usize {
        self.diag.len()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let n = self.size();
        (0..n)
            .map(|i| {
                let mut s = self.diag[i] * x[i];
                if i > 0 {
                    s += self.lower[i - 1] * x[i - 1];
                }
                if i + 1 < n {
                    s += self.upper[i] * x[i + 1];
                }
                s
            })
            .collect()
    }

    /// Smallest `|d_i| - |l_i| - |u_i|` over all rows and the row attaining it.
    pub fn dominance_margin(&self) -> (usize, f64) {
        let n = self.size();
        (0..n)
            .map(|i| {
                let mut off = 0.0;
                if i > 0 {
                    off += self.lower[i - 1].abs();
                }
                if i + 1 < n {
                    off += self.upper[i].abs();
                }
                (i, self.diag[i].abs() - off)
            })
            .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
    }

    /// Thomas solve; refuses matrices that are not strictly diagonally dominant.
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let (row, margin) = self.dominance_margin();
        if !(margin > 0.0) {
            return Err(KgzError::NotDominant { row, margin });
        }
        self.solve_pivot_free(rhs)
    }

    /// Thomas solve without the dominance precondition; the result is
    /// accepted only if its componentwise backward error is within
    /// [`SOLVE_TOLERANCE`].
    pub fn solve_pivot_free(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let n = self.size();
        if rhs.len() != n {
            return Err(KgzError::Structural(format!(
                "rhs has length {}, system has {n}",
                rhs.len()
            )));
        }
        let mut c = vec![0.0; n];
        let mut x = vec![0.0; n];
        let mut pivot = self.diag[0];
        if pivot == 0.0 {
            return Err(KgzError::Singular { row: 0 });
        }
        if n > 1 {
            c[0] = self.upper[0] / pivot;
        }
        x[0] = rhs[0] / pivot;
        for i in 1..n {
            let l = self.lower[i - 1];
            pivot = self.diag[i] - l * c[i - 1];
            if pivot == 0.0 || !pivot.is_finite() {
                return Err(KgzError::Singular { row: i });
            }
            let inv = 1.0 / pivot;
            if i + 1 < n {
                c[i] = self.upper[i] * inv;
            }
            x[i] = (rhs[i] - l * x[i - 1]) * inv;
        }
        for i in (0..n - 1).rev() {
            x[i] -= c[i] * x[i + 1];
        }

        let residual = self.backward_error(&x, rhs);
        if !(residual <= SOLVE_TOLERANCE) {
            return Err(KgzError::IllConditioned {
                residual,
                tolerance: SOLVE_TOLERANCE,
            });
        }
        Ok(x)
    }

    /// `max_i |Ax - b|_i / max_i (|A||x| + |b|)_i`.
    pub fn backward_error(&self, x: &[f64], rhs: &[f64]) -> f64 {
        let n = self.size();
        let mut num = 0.0_f64;
        let mut den = 0.0_f64;
        for i in 0..n {
            let mut s = self.diag[i] * x[i];
            let mut a = (self.diag[i] * x[i]).abs();
            if i > 0 {
                s += self.lower[i - 1] * x[i - 1];
                a += (self.lower[i - 1] * x[i - 1]).abs();
            }
            if i + 1 < n {
                s += self.upper[i] * x[i + 1];
                a += (self.upper[i] * x[i + 1]).abs();
            }
            num = num.max((s - rhs[i]).abs());
            den = den.max(a + rhs[i].abs());
        }
        if den == 0.0 {
            0.0
        } else {
            num / den.max(f64::MIN_POSITIVE)
        }
    }
}

/// Solves a tridiagonal system given by its three diagonals.
pub fn solve_tridiagonal(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
    Tridiagonal::new(lower.to_vec(), diag.to_vec(), upper.to_vec())?.solve(rhs)
}

/// Returns `phi` in X_M with `-delta_x^2 phi = f` at interior nodes.
pub fn solve_poisson_dirichlet(f: &GridFn, grid: &Grid1D) -> Result<GridFn> {
    grid.check(f.len(), "poisson rhs")?;
    let inv_h2 = 1.0 / (grid.h() * grid.h());
    let n = grid.interior();
    let system = Tridiagonal::symmetric(vec![2.0 * inv_h2; n], -inv_h2)?;
    // weakly dominant only; rely on the backward-error check
    let x = system.solve_pivot_free(f.interior())?;
    Ok(GridFn::from_interior(&x))
}
