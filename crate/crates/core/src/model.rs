//! Problem data, the reaction terms, the difference-system coefficients and
//! the admissibility checks.

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::domain::{diff_axis, l2_norm, Grid, TimeGrid};
use crate::expr::Expression;
use crate::forward::Trajectory;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid problem data: {0}")]
    Invalid(String),
}

/// A coefficient field over space and time.
#[derive(Debug, Clone, PartialEq)]
pub enum Coefficient {
    Constant(f64),
    /// Grid values, constant in time.
    Spatial(Arc<Vec<f64>>),
    Expr(Expression),
    /// Grid values per time level, `[level][point]`.
    Tabulated(Arc<Vec<Vec<f64>>>),
}

impl Coefficient {
    pub fn spatial(values: Vec<f64>) -> Self {
        Coefficient::Spatial(Arc::new(values))
    }

    pub fn is_time_independent(&self) -> bool {
        match self {
            Coefficient::Constant(_) | Coefficient::Spatial(_) => true,
            Coefficient::Expr(e) => e.is_time_independent(),
            Coefficient::Tabulated(_) => false,
        }
    }

    pub fn check_shape(&self, grid: &Grid, levels: usize) -> Result<(), ModelError> {
        match self {
            Coefficient::Spatial(v) if v.len() != grid.len() => Err(ModelError::Shape(format!(
                "spatial coefficient has {} values, grid has {}",
                v.len(),
                grid.len()
            ))),
            Coefficient::Tabulated(t) => {
                if t.len() < levels || t.iter().any(|l| l.len() != grid.len()) {
                    return Err(ModelError::Shape(format!(
                        "tabulated coefficient must cover {levels} levels of {} points",
                        grid.len()
                    )));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Values on the grid at time level `level` (time `t`).
    pub fn sample(&self, grid: &Grid, t: f64, level: usize) -> Vec<f64> {
        match self {
            Coefficient::Constant(c) => vec![*c; grid.len()],
            Coefficient::Spatial(v) => v.as_ref().clone(),
            Coefficient::Expr(e) => grid.sample(|x, y| e.eval(x, y, t)),
            Coefficient::Tabulated(tab) => tab[level].clone(),
        }
    }

    /// Samples every level of `tg`, storing one copy when time independent.
    pub fn tabulate(&self, grid: &Grid, tg: &TimeGrid) -> SampledCoefficient {
        if self.is_time_independent() {
            SampledCoefficient::Static(self.sample(grid, 0.0, 0))
        } else {
            SampledCoefficient::Dynamic((0..tg.levels()).map(|n| self.sample(grid, tg.time(n), n)).collect())
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SampledCoefficient {
    Static(Vec<f64>),
    Dynamic(Vec<Vec<f64>>),
}

impl SampledCoefficient {
    pub fn at(&self, level: usize) -> &[f64] {
        match self {
            SampledCoefficient::Static(v) => v,
            SampledCoefficient::Dynamic(v) => &v[level],
        }
    }

    pub fn sup_abs(&self) -> f64 {
        let sup = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        match self {
            SampledCoefficient::Static(v) => sup(v),
            SampledCoefficient::Dynamic(v) => v.iter().map(|l| sup(l)).fold(0.0, f64::max),
        }
    }

    pub fn min(&self) -> f64 {
        let min = |v: &[f64]| v.iter().copied().fold(f64::INFINITY, f64::min);
        match self {
            SampledCoefficient::Static(v) => min(v),
            SampledCoefficient::Dynamic(v) => v.iter().map(|l| min(l)).fold(f64::INFINITY, f64::min),
        }
    }

    /// Sup norm of the forward time difference.
    pub fn sup_abs_dt(&self, dt: f64) -> f64 {
        match self {
            SampledCoefficient::Static(_) => 0.0,
            SampledCoefficient::Dynamic(v) => v
                .windows(2)
                .flat_map(|w| w[0].iter().zip(&w[1]).map(|(a, b)| ((b - a) / dt).abs()))
                .fold(0.0, f64::max),
        }
    }
}

/// A priori bounds of the admissible class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdmissibilityBounds {
    /// Bound on the `W^{1,inf}` norms of `u`, `v` plus `||f||_{L2}`.
    pub m: f64,
    /// Bound on `sum_j sum_k ||d_t^k a_j||_inf`.
    pub m0: f64,
}

impl AdmissibilityBounds {
    pub fn new(m: f64, m0: f64) -> Result<Self, ModelError> {
        if !(m > 0.0 && m0 > 0.0 && m.is_finite() && m0.is_finite()) {
            return Err(ModelError::Invalid(format!(
                "bounds M = {m}, M0 = {m0} must be positive"
            )));
        }
        Ok(AdmissibilityBounds { m, m0 })
    }

    /// Worst case of `||p_k||_inf + ||d_t p_k||_inf` over `k` when every
    /// solution value and time derivative is bounded by `M` and the
    /// coefficient norms by `M0`. The maximum is attained by `p3`:
    /// `|u~(v+v~)| + |d_t(u~(v+v~))| <= 2M^2 + 4M^2`, plus `M0` from `a2`.
    pub fn m1(&self) -> f64 {
        6.0 * self.m * self.m + self.m0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemData {
    pub d1: f64,
    pub d2: f64,
    pub a1: Coefficient,
    pub a2: Coefficient,
    pub f: Vec<f64>,
    /// Source modulation, `R f` enters the first equation.
    pub r: Coefficient,
    /// Dirichlet data for `u`; only boundary points are read.
    pub g: Coefficient,
    /// Dirichlet data for `v`; only boundary points are read.
    pub h: Coefficient,
    pub u0: Vec<f64>,
    pub v0: Vec<f64>,
    pub bounds: AdmissibilityBounds,
    /// Declared a priori bound on `||v||_inf` used by the step restriction;
    /// falls back to `M`.
    pub v_bound: Option<f64>,
}

impl ProblemData {
    pub fn validate(&self, grid: &Grid, tg: &TimeGrid) -> Result<(), ModelError> {
        if !(self.d1 > 0.0 && self.d2 > 0.0 && self.d1.is_finite() && self.d2.is_finite()) {
            return Err(ModelError::Invalid(format!(
                "diffusion constants must be positive, got d1 = {}, d2 = {}",
                self.d1, self.d2
            )));
        }
        for (name, field) in [("f", &self.f), ("u0", &self.u0), ("v0", &self.v0)] {
            if field.len() != grid.len() {
                return Err(ModelError::Shape(format!(
                    "{name} has {} values, grid has {}",
                    field.len(),
                    grid.len()
                )));
            }
            if field.iter().any(|x| !x.is_finite()) {
                return Err(ModelError::Invalid(format!("{name} has non-finite values")));
            }
        }
        for (name, c) in [
            ("a1", &self.a1),
            ("a2", &self.a2),
            ("R", &self.r),
            ("g", &self.g),
            ("h", &self.h),
        ] {
            c.check_shape(grid, tg.levels())
                .map_err(|e| ModelError::Shape(format!("{name}: {e}")))?;
        }
        for (name, c) in [("a1", &self.a1), ("a2", &self.a2)] {
            let min = c.tabulate(grid, tg).min();
            if min < 0.0 {
                return Err(ModelError::Invalid(format!(
                    "{name} must be nonnegative, min is {min:.6e}"
                )));
            }
        }
        if let Some(vb) = self.v_bound {
            if !(vb > 0.0 && vb.is_finite()) {
                return Err(ModelError::Invalid(format!("v_bound must be positive, got {vb}")));
            }
        }
        Ok(())
    }

    /// Max mismatch between `g(., 0)`, `h(., 0)` and the initial data on the
    /// boundary.
    pub fn compatibility_defect(&self, grid: &Grid) -> f64 {
        let g0 = self.g.sample(grid, 0.0, 0);
        let h0 = self.h.sample(grid, 0.0, 0);
        grid.boundary_indices()
            .into_iter()
            .map(|k| (g0[k] - self.u0[k]).abs().max((h0[k] - self.v0[k]).abs()))
            .fold(0.0, f64::max)
    }

    /// `sum_j sum_{k=0,1} ||d_t^k a_j||_inf` on the grid.
    pub fn coefficient_norm(&self, grid: &Grid, tg: &TimeGrid) -> f64 {
        [&self.a1, &self.a2]
            .iter()
            .map(|c| {
                let s = c.tabulate(grid, tg);
                s.sup_abs() + s.sup_abs_dt(tg.dt())
            })
            .sum()
    }

    pub fn positivity_hypotheses(&self, grid: &Grid, tg: &TimeGrid) -> PositivityHypotheses {
        let bmin = |c: &Coefficient| {
            let s = c.tabulate(grid, tg);
            grid.boundary_indices()
                .into_iter()
                .flat_map(|k| (0..tg.levels()).map(move |n| (k, n)))
                .map(|(k, n)| s.at(n)[k])
                .fold(f64::INFINITY, f64::min)
        };
        let nonneg = |v: &[f64]| v.iter().all(|&x| x >= 0.0);
        let nonzero = |v: &[f64]| v.iter().any(|&x| x > 0.0);
        let r_min = self.r.tabulate(grid, tg).min();
        PositivityHypotheses {
            v_data: nonneg(&self.v0) && nonzero(&self.v0) && bmin(&self.h) >= 0.0,
            u_data: nonneg(&self.u0) && nonzero(&self.u0) && bmin(&self.g) >= 0.0 && nonneg(&self.f) && r_min >= 0.0,
        }
    }
}

/// Sign conditions on the data under which the maximum principle yields
/// positive lower bounds for `v` (and additionally `u`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PositivityHypotheses {
    /// `v0 >= 0`, `h >= 0`, `v0` not identically zero.
    pub v_data: bool,
    /// `u0 >= 0`, `g >= 0`, `u0` not identically zero, `R f >= 0`.
    pub u_data: bool,
}

fn check_same(len: usize, fields: &[(&str, &[f64])]) -> Result<(), ModelError> {
    for (name, f) in fields {
        if f.len() != len {
            return Err(ModelError::Shape(format!(
                "{name} has {} values, expected {len}",
                f.len()
            )));
        }
    }
    Ok(())
}

/// Pointwise reaction rates `(-u v^2 - a1 u + R f, u v^2 - a2 v)`.
pub fn reaction(
    u: &[f64],
    v: &[f64],
    a1: &[f64],
    a2: &[f64],
    f: &[f64],
    r: &[f64],
) -> Result<(Vec<f64>, Vec<f64>), ModelError> {
    check_same(u.len(), &[("v", v), ("a1", a1), ("a2", a2), ("f", f), ("R", r)])?;
    let mut ru = Vec::with_capacity(u.len());
    let mut rv = Vec::with_capacity(u.len());
    for k in 0..u.len() {
        let uvv = u[k] * v[k] * v[k];
        ru.push(-uvv - a1[k] * u[k] + r[k] * f[k]);
        rv.push(uvv - a2[k] * v[k]);
    }
    Ok((ru, rv))
}

/// Difference-system coefficients at one time level.
#[derive(Debug, Clone, PartialEq)]
pub struct PLevel {
    pub p1: Vec<f64>,
    pub p2: Vec<f64>,
    pub p3: Vec<f64>,
    pub p4: Vec<f64>,
}

/// `p1 = -v^2 - a1`, `p2 = -u~(v + v~)`, `p3 = u~(v + v~) - a2`, `p4 = v^2`.
pub fn p_coefficients(
    v: &[f64],
    u_tilde: &[f64],
    v_tilde: &[f64],
    a1: &[f64],
    a2: &[f64],
) -> Result<PLevel, ModelError> {
    check_same(v.len(), &[("u~", u_tilde), ("v~", v_tilde), ("a1", a1), ("a2", a2)])?;
    let n = v.len();
    let mut p = PLevel {
        p1: Vec::with_capacity(n),
        p2: Vec::with_capacity(n),
        p3: Vec::with_capacity(n),
        p4: Vec::with_capacity(n),
    };
    for k in 0..n {
        let vv = v[k] * v[k];
        let c = u_tilde[k] * (v[k] + v_tilde[k]);
        p.p1.push(-vv - a1[k]);
        p.p2.push(-c);
        p.p3.push(c - a2[k]);
        p.p4.push(vv);
    }
    Ok(p)
}

/// Coefficients of the difference system on the levels `lo..lo + len`.
#[derive(Debug, Clone, PartialEq)]
pub struct PCoefficients {
    pub lo: usize,
    pub levels: Vec<PLevel>,
}

impl PCoefficients {
    /// Coefficients for `(y, z) = (u - u~, v - v~)` on the given levels.
    /// Passing the same trajectory twice gives the tangent linearization.
    pub fn from_pair(
        traj: &Trajectory,
        tilde: &Trajectory,
        a1: &SampledCoefficient,
        a2: &SampledCoefficient,
        lo: usize,
        hi: usize,
    ) -> Result<Self, ModelError> {
        if hi >= traj.levels() || hi >= tilde.levels() {
            return Err(ModelError::Shape(format!(
                "level {hi} beyond the stored trajectories ({} and {} levels)",
                traj.levels(),
                tilde.levels()
            )));
        }
        let levels = (lo..=hi)
            .map(|n| p_coefficients(&traj.v[n], &tilde.u[n], &tilde.v[n], a1.at(n), a2.at(n)))
            .collect::<Result<_, _>>()?;
        Ok(PCoefficients { lo, levels })
    }

    pub fn at(&self, level: usize) -> &PLevel {
        &self.levels[level - self.lo]
    }

    pub fn hi(&self) -> usize {
        self.lo + self.levels.len() - 1
    }

    /// `max_k (||p_k||_inf + ||d_t p_k||_inf)`.
    pub fn sup_bound(&self, dt: f64) -> f64 {
        let pick = |l: &PLevel, k: usize| -> Vec<f64> {
            match k {
                0 => l.p1.clone(),
                1 => l.p2.clone(),
                2 => l.p3.clone(),
                _ => l.p4.clone(),
            }
        };
        (0..4)
            .map(|k| {
                let sup = self
                    .levels
                    .iter()
                    .flat_map(|l| pick(l, k))
                    .fold(0.0f64, |m, x| m.max(x.abs()));
                let sup_dt = self
                    .levels
                    .windows(2)
                    .flat_map(|w| {
                        let (a, b) = (pick(&w[0], k), pick(&w[1], k));
                        a.into_iter()
                            .zip(b)
                            .map(|(a, b)| ((b - a) / dt).abs())
                            .collect::<Vec<_>>()
                    })
                    .fold(0.0f64, f64::max);
                sup + sup_dt
            })
            .fold(0.0, f64::max)
    }
}

/// `max |u v^2 - u~ v~^2 - (v^2 (u - u~) + u~ (v + v~)(v - v~))|`.
pub fn factorisation_residual(u: &[f64], u_tilde: &[f64], v: &[f64], v_tilde: &[f64]) -> f64 {
    u.iter()
        .zip(u_tilde)
        .zip(v.iter().zip(v_tilde))
        .map(|((&u, &ut), (&v, &vt))| {
            let lhs = u * v * v - ut * vt * vt;
            let rhs = v * v * (u - ut) + ut * (v + vt) * (v - vt);
            (lhs - rhs).abs()
        })
        .fold(0.0, f64::max)
}

/// Discrete admissibility norms of a trajectory and its source.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmissibilityReport {
    pub sup_u: f64,
    pub sup_grad_u: f64,
    pub sup_dt_u: f64,
    pub sup_v: f64,
    pub sup_grad_v: f64,
    pub sup_dt_v: f64,
    pub f_l2: f64,
    /// `||u||_{W1,inf} + ||v||_{W1,inf} + ||f||_{L2}`.
    pub total: f64,
    pub m: f64,
    /// Largest second time difference of `u` and `v`.
    pub sup_dtt: f64,
    pub passed: bool,
}

impl AdmissibilityReport {
    pub fn margin(&self) -> f64 {
        self.m - self.total
    }
}

impl fmt::Display for AdmissibilityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "sup_u       {:.6e}", self.sup_u)?;
        writeln!(f, "sup_grad_u  {:.6e}", self.sup_grad_u)?;
        writeln!(f, "sup_dt_u    {:.6e}", self.sup_dt_u)?;
        writeln!(f, "sup_v       {:.6e}", self.sup_v)?;
        writeln!(f, "sup_grad_v  {:.6e}", self.sup_grad_v)?;
        writeln!(f, "sup_dt_v    {:.6e}", self.sup_dt_v)?;
        writeln!(f, "f_l2        {:.6e}", self.f_l2)?;
        writeln!(f, "sup_dtt     {:.6e}", self.sup_dtt)?;
        writeln!(f, "total       {:.6e}", self.total)?;
        writeln!(f, "M           {:.6e}", self.m)?;
        writeln!(f, "margin      {:.6e}", self.margin())?;
        writeln!(f, "status      {}", if self.passed { "pass" } else { "FAIL" })
    }
}

struct Sups {
    value: f64,
    grad: f64,
    dt: f64,
    dtt: f64,
}

fn sups(levels: &[Vec<f64>], grid: &Grid, dt: f64) -> Sups {
    let supabs = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let value = levels.iter().map(|l| supabs(l)).fold(0.0, f64::max);
    let grad = levels
        .iter()
        .map(|l| {
            let parts: Vec<Vec<f64>> = (0..grid.dim()).map(|a| diff_axis(l, grid, a)).collect();
            (0..grid.len())
                .map(|k| parts.iter().map(|p| p[k] * p[k]).sum::<f64>().sqrt())
                .fold(0.0, f64::max)
        })
        .fold(0.0, f64::max);
    let dtv = levels
        .windows(2)
        .flat_map(|w| w[0].iter().zip(&w[1]).map(|(a, b)| ((b - a) / dt).abs()))
        .fold(0.0, f64::max);
    let dtt = levels
        .windows(3)
        .flat_map(|w| (0..w[0].len()).map(move |k| ((w[2][k] - 2.0 * w[1][k] + w[0][k]) / (dt * dt)).abs()))
        .fold(0.0, f64::max);
    Sups {
        value,
        grad,
        dt: dtv,
        dtt,
    }
}

/// Compares the discrete `W^{1,inf}(Q)` norms of `(u, v)` plus `||f||_{L2}`
/// with `M`. Spatial gradients are one-sided at the boundary.
pub fn check_admissibility(traj: &Trajectory, f: &[f64], bounds: &AdmissibilityBounds) -> AdmissibilityReport {
    let grid = &traj.grid;
    let dt = traj.time.dt();
    let su = sups(&traj.u, grid, dt);
    let sv = sups(&traj.v, grid, dt);
    let f_l2 = l2_norm(f, None, grid).unwrap_or(f64::NAN);
    let total = su.value + su.grad + su.dt + sv.value + sv.grad + sv.dt + f_l2;
    AdmissibilityReport {
        sup_u: su.value,
        sup_grad_u: su.grad,
        sup_dt_u: su.dt,
        sup_v: sv.value,
        sup_grad_v: sv.grad,
        sup_dt_v: sv.dt,
        f_l2,
        total,
        m: bounds.m,
        sup_dtt: su.dtt.max(sv.dtt),
        passed: total <= bounds.m,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn reaction_examples() {
        let (ru, rv) = reaction(&[1.0], &[0.0], &[0.0], &[0.0], &[0.0], &[1.0]).unwrap();
        assert_eq!((ru[0], rv[0]), (0.0, 0.0));
        let (ru, rv) = reaction(&[2.0], &[3.0], &[0.5], &[1.0], &[1.0], &[1.0]).unwrap();
        assert_eq!((ru[0], rv[0]), (-18.0, 15.0));
        let (a, _) = reaction(&[2.0], &[3.0], &[0.5], &[1.0], &[1.0], &[0.0]).unwrap();
        let (b, _) = reaction(&[2.0], &[3.0], &[0.5], &[1.0], &[7.0], &[0.0]).unwrap();
        assert_eq!(a, b);
        assert!(reaction(&[1.0, 2.0], &[1.0], &[0.0], &[0.0], &[0.0], &[1.0]).is_err());
    }

    #[test]
    fn p_coefficient_examples() {
        let p = p_coefficients(&[3.0], &[1.0], &[1.0], &[0.5], &[1.0]).unwrap();
        assert_eq!((p.p1[0], p.p2[0], p.p3[0], p.p4[0]), (-9.5, -4.0, 3.0, 9.0));
        let p = p_coefficients(&[0.0], &[5.0], &[0.0], &[0.0], &[0.0]).unwrap();
        assert_eq!((p.p2[0], p.p4[0]), (0.0, 0.0));
    }

    #[test]
    fn factorisation_examples() {
        assert_eq!(factorisation_residual(&[2.0], &[1.0], &[3.0], &[1.0]), 0.0);
        assert_eq!(factorisation_residual(&[0.3], &[0.3], &[-0.7], &[-0.7]), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut draw = || (0..10_000).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
        let (u, ut, v, vt) = (draw(), draw(), draw(), draw());
        assert!(factorisation_residual(&u, &ut, &v, &vt) <= 1e-12);
    }

    #[test]
    fn m1_dominates_worst_case_inputs() {
        let b = AdmissibilityBounds::new(2.0, 0.5).unwrap();
        // extremal values with opposite-sign time derivatives
        let m = b.m;
        let p = p_coefficients(&[m], &[m], &[m], &[0.0], &[b.m0]).unwrap();
        let q = p_coefficients(&[-m], &[-m], &[-m], &[0.0], &[0.0]).unwrap();
        let coeffs = PCoefficients {
            lo: 0,
            levels: vec![p, q],
        };
        // dt chosen so that the difference quotient is the derivative bound M
        let bound = coeffs.sup_bound(2.0);
        assert!(bound <= b.m1(), "{bound} > {}", b.m1());
    }

    #[test]
    fn coefficient_tabulation() {
        let g = Grid::interval(1.0, 5).unwrap();
        let tg = TimeGrid::new(&crate::domain::TimeSpec {
            horizon: 1.0,
            dt: 0.1,
            t0: 0.5,
            delta: 0.2,
            delta0: 0.3,
            r: 0.1,
        })
        .unwrap();
        let c = Coefficient::Expr(Expression::parse("x + t").unwrap());
        let s = c.tabulate(&g, &tg);
        assert!((s.at(3)[4] - 1.3).abs() < 1e-14);
        assert!((s.sup_abs_dt(0.1) - 1.0).abs() < 1e-9);
        let s = Coefficient::Constant(2.0).tabulate(&g, &tg);
        assert_eq!(s, SampledCoefficient::Static(vec![2.0; 5]));
        assert!(Coefficient::spatial(vec![1.0; 3]).check_shape(&g, 11).is_err());
    }

    proptest! {
        #[test]
        fn factorisation_is_exact(u in -50.0f64..50.0, ut in -50.0f64..50.0, v in -50.0f64..50.0, vt in -50.0f64..50.0) {
            let big = u.abs().max(ut.abs()).max(v.abs()).max(vt.abs());
            let r = factorisation_residual(&[u], &[ut], &[v], &[vt]);
            prop_assert!(r <= 1e-12 * (1.0 + big.powi(3)));
        }

        #[test]
        fn reaction_sum_identity(u in -5.0f64..5.0, v in -5.0f64..5.0, a1 in 0.0f64..3.0, a2 in 0.0f64..3.0, f in -5.0f64..5.0, r in 0.0f64..2.0) {
            let (ru, rv) = reaction(&[u], &[v], &[a1], &[a2], &[f], &[r]).unwrap();
            let res = ru[0] + rv[0] + a1 * u + a2 * v - r * f;
            prop_assert!(res.abs() <= 1e-12 * (1.0 + (u * v * v).abs()));
        }
    }
}
