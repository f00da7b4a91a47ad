//! Implicit diffusion solves `(I - c Lap_h) x = b` on the interior of a grid
//! with Dirichlet values taken from the boundary entries of `x`.
//!
//! The 1D operator is tridiagonal and solved by the Thomas algorithm. In 2D
//! the operator is diagonalised along `x` by the discrete sine basis, which
//! leaves one tridiagonal system along `y` per mode. Both solves are exact up
//! to rounding and the operator is symmetric, so the same solver serves the
//! adjoint sweep.

use std::f64::consts::PI;

use crate::domain::Grid;

/// Pre-factored constant tridiagonal matrix with `diag` on the diagonal and
/// `off` on both off-diagonals.
#[derive(Debug, Clone)]
pub struct Tridiagonal {
    off: f64,
    /// Modified super-diagonal of the forward sweep.
    cp: Vec<f64>,
    /// Reciprocal pivots.
    inv: Vec<f64>,
}

impl Tridiagonal {
    pub fn new(n: usize, diag: f64, off: f64) -> Self {
        let mut cp = vec![0.0; n];
        let mut inv = vec![0.0; n];
        for i in 0..n {
            let pivot = if i == 0 { diag } else { diag - off * cp[i - 1] };
            inv[i] = 1.0 / pivot;
            cp[i] = off * inv[i];
        }
        Tridiagonal { off, cp, inv }
    }

    pub fn len(&self) -> usize {
        self.cp.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cp.is_empty()
    }

    /// Solves in place on a strided view of `x`.
    pub fn solve_strided(&self, x: &mut [f64], start: usize, stride: usize) {
        let n = self.len();
        let mut prev = 0.0;
        for i in 0..n {
            let k = start + i * stride;
            let d = if i == 0 { x[k] } else { x[k] - self.off * prev };
            prev = d * self.inv[i];
            x[k] = prev;
        }
        for i in (0..n.saturating_sub(1)).rev() {
            let k = start + i * stride;
            x[k] -= self.cp[i] * x[k + stride];
        }
    }

    pub fn solve(&self, x: &mut [f64]) {
        self.solve_strided(x, 0, 1);
    }
}

#[derive(Debug, Clone)]
enum Kind {
    OneD(Tridiagonal),
    TwoD {
        /// Orthonormal sine basis, `mx * mx`, symmetric.
        basis: Vec<f64>,
        modes: Vec<Tridiagonal>,
    },
}

#[derive(Debug, Clone)]
pub struct DiffusionSolver {
    grid: Grid,
    cx: f64,
    cy: f64,
    kind: Kind,
}

impl DiffusionSolver {
    /// Solver for `I - c Lap_h`, `c = dt * diffusion`.
    pub fn new(grid: &Grid, c: f64) -> Self {
        let mx = grid.n(0) - 2;
        let cx = c / (grid.h(0) * grid.h(0));
        if grid.dim() == 1 {
            return DiffusionSolver {
                grid: grid.clone(),
                cx,
                cy: 0.0,
                kind: Kind::OneD(Tridiagonal::new(mx, 1.0 + 2.0 * cx, -cx)),
            };
        }
        let my = grid.n(1) - 2;
        let cy = c / (grid.h(1) * grid.h(1));
        let norm = (2.0 / (mx + 1) as f64).sqrt();
        let mut basis = vec![0.0; mx * mx];
        for k in 0..mx {
            for i in 0..mx {
                basis[k * mx + i] = norm * (PI * ((i + 1) * (k + 1)) as f64 / (mx + 1) as f64).sin();
            }
        }
        let modes = (0..mx)
            .map(|k| {
                let s = (PI * (k + 1) as f64 / (2 * (mx + 1)) as f64).sin();
                let lam = 4.0 * cx * s * s;
                Tridiagonal::new(my, 1.0 + lam + 2.0 * cy, -cy)
            })
            .collect();
        DiffusionSolver {
            grid: grid.clone(),
            cx,
            cy,
            kind: Kind::TwoD { basis, modes },
        }
    }

    /// On entry interior entries of `x` hold the right-hand side and boundary
    /// entries the Dirichlet values; on exit interior entries hold the
    /// solution. Boundary entries are not modified.
    pub fn solve(&self, x: &mut [f64]) {
        let g = &self.grid;
        let nx = g.n(0);
        let mx = nx - 2;
        match &self.kind {
            Kind::OneD(tri) => {
                x[1] += self.cx * x[0];
                x[mx] += self.cx * x[nx - 1];
                tri.solve(&mut x[1..=mx]);
            }
            Kind::TwoD { basis, modes } => {
                let ny = g.n(1);
                let my = ny - 2;
                // fold Dirichlet neighbours into the interior right-hand side
                for j in 1..=my {
                    x[g.index(1, j)] += self.cx * x[g.index(0, j)];
                    x[g.index(mx, j)] += self.cx * x[g.index(nx - 1, j)];
                }
                for i in 1..=mx {
                    x[g.index(i, 1)] += self.cy * x[g.index(i, 0)];
                    x[g.index(i, my)] += self.cy * x[g.index(i, ny - 1)];
                }
                // hat[k * my + j] = sum_i S[k][i] b[i][j]
                let mut hat = vec![0.0; mx * my];
                for j in 0..my {
                    let row = g.index(1, j + 1);
                    let b = &x[row..row + mx];
                    for k in 0..mx {
                        let s = &basis[k * mx..(k + 1) * mx];
                        hat[k * my + j] = s.iter().zip(b).map(|(a, b)| a * b).sum();
                    }
                }
                for (k, tri) in modes.iter().enumerate() {
                    tri.solve(&mut hat[k * my..(k + 1) * my]);
                }
                let mut col = vec![0.0; mx];
                for j in 0..my {
                    for (k, c) in col.iter_mut().enumerate() {
                        *c = hat[k * my + j];
                    }
                    let row = g.index(1, j + 1);
                    for i in 0..mx {
                        // S is symmetric
                        let s = &basis[i * mx..(i + 1) * mx];
                        x[row + i] = s.iter().zip(&col).map(|(a, b)| a * b).sum();
                    }
                }
            }
        }
    }

    /// Applies `I - c Lap_h` at interior points of `x` (boundary entries of
    /// `x` act as Dirichlet values). Boundary entries of the result are 0.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let g = &self.grid;
        let mut out = vec![0.0; x.len()];
        for k in g.interior_indices() {
            let (p, n) = g.axis_neighbors(k, 0);
            let mut v = x[k] - self.cx * (x[p.unwrap()] - 2.0 * x[k] + x[n.unwrap()]);
            if g.dim() == 2 {
                let (p, n) = g.axis_neighbors(k, 1);
                v -= self.cy * (x[p.unwrap()] - 2.0 * x[k] + x[n.unwrap()]);
            }
            out[k] = v;
        }
        out
    }
}
