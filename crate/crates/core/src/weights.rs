//! Carleman weight functions: the spatial profile `d`, the singular weights
//! `theta`, `phi`, `alpha` on `(t0 - delta, t0 + delta)`, the regular weight
//! `psi` on `I0` with its separation constants, and numerical evaluation of
//! the weighted functionals.

use std::io::{self, Write};

use thiserror::Error;

use crate::domain::{diff2_axis, diff_axis, gradient_magnitude, Grid, SubdomainMask};

/// Floor applied to exponents before `exp`, so `e^{2 s alpha}` underflows
/// to a tiny positive number instead of producing NaN in products.
pub const EXP_FLOOR: f64 = -700.0;

/// Feasibility margin applied to both `(beta, r)` inequalities.
pub const MARGIN: f64 = 1.1;

pub const DEFAULT_LAMBDA: f64 = 2.0;
pub const DEFAULT_S_LADDER: [f64; 5] = [1.0, 2.0, 4.0, 8.0, 16.0];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WeightsError {
    #[error("grad d vanishes outside omega0 at {}", fmt_points(.0))]
    CriticalPoint(Vec<[f64; 2]>),
    #[error("d <= 0 at interior points {}", fmt_points(.0))]
    NonPositive(Vec<[f64; 2]>),
    #[error("d is nonzero on the boundary (max |d| = {0:.3e})")]
    BoundaryValue(f64),
    #[error("no built-in weight profile applies here: {0}; supply d explicitly")]
    NoProfile(String),
    #[error("theta vanishes at t = {0}: singular weights are not defined at the window endpoints")]
    Endpoint(f64),
    #[error("min of d over Omega0 is {0:.3e}; it must be positive")]
    DegenerateMin(f64),
    #[error("no feasible (beta, r) with r a multiple of dt = {dt} below delta0 = {delta0}; use a smaller dt")]
    Infeasible { dt: f64, delta0: f64 },
    #[error("separation violated: rho2 = {rho2:.6} <= rho1 = {rho1:.6}")]
    Separation { rho1: f64, rho2: f64 },
    #[error("w has nonzero boundary trace (max {0:.3e})")]
    BoundaryTrace(f64),
    #[error("shape mismatch: {0}")]
    Shape(String),
}

fn fmt_points(p: &[[f64; 2]]) -> String {
    let shown: Vec<String> = p
        .iter()
        .take(6)
        .map(|c| format!("({:.4}, {:.4})", c[0], c[1]))
        .collect();
    let more = if p.len() > 6 {
        format!(" and {} more", p.len() - 6)
    } else {
        String::new()
    };
    format!("{}{more}", shown.join(", "))
}

/// The spatial profile `d` with its verification data.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightFunctionD {
    pub values: Vec<f64>,
    pub lambda: f64,
    /// `max |d|` over the closed domain.
    pub sup: f64,
    /// Min of `d` over omega0.
    pub min_omega0: f64,
    pub grad_magnitude: Vec<f64>,
    /// Rectangle corners where the gradient necessarily vanishes.
    pub tolerated_corners: Vec<usize>,
}

impl WeightFunctionD {
    /// Verifies a user-supplied profile.
    pub fn from_values(
        grid: &Grid,
        values: Vec<f64>,
        omega0: &SubdomainMask,
        lambda: f64,
    ) -> Result<Self, WeightsError> {
        if values.len() != grid.len() {
            return Err(WeightsError::Shape(format!(
                "d has {} values, grid has {}",
                values.len(),
                grid.len()
            )));
        }
        let sup = values.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let bmax = grid
            .boundary_indices()
            .iter()
            .fold(0.0f64, |m, &k| m.max(values[k].abs()));
        if bmax > 1e-12 * sup.max(1.0) {
            return Err(WeightsError::BoundaryValue(bmax));
        }
        let bad: Vec<[f64; 2]> = grid
            .interior_indices()
            .into_iter()
            .filter(|&k| !(values[k] > 0.0))
            .map(|k| grid.coord(k))
            .collect();
        if !bad.is_empty() {
            return Err(WeightsError::NonPositive(bad));
        }
        let grad = gradient_magnitude(&values, grid);
        let crit = critical_points(grid, &values, &grad, omega0);
        if !crit.is_empty() {
            return Err(WeightsError::CriticalPoint(crit));
        }
        let tolerated_corners = (0..grid.len()).filter(|&k| grid.is_corner(k)).collect();
        let min_omega0 = omega0.indices().iter().fold(f64::INFINITY, |m, &k| m.min(values[k]));
        Ok(WeightFunctionD {
            values,
            lambda,
            sup,
            min_omega0,
            grad_magnitude: grad,
            tolerated_corners,
        })
    }

    /// Min of `d` over the nodes of `mask`.
    pub fn min_over(&self, mask: &SubdomainMask) -> f64 {
        mask.indices().iter().fold(f64::INFINITY, |m, &k| m.min(self.values[k]))
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Points outside omega0 where the discrete gradient vanishes or a
/// critical point sits between nodes.
fn critical_points(grid: &Grid, d: &[f64], grad: &[f64], omega0: &SubdomainMask) -> Vec<[f64; 2]> {
    let scale = grad.iter().fold(0.0f64, |m, x| m.max(*x));
    let tol = 1e-10 * scale.max(f64::MIN_POSITIVE);
    let mut out = Vec::new();
    for k in 0..grid.len() {
        if !omega0.contains(k) && !grid.is_corner(k) && grad[k] <= tol {
            out.push(grid.coord(k));
        }
    }
    let dx = diff_axis(d, grid, 0);
    let changes = |a: f64, b: f64| a * b < 0.0;
    if grid.dim() == 1 {
        for i in 0..grid.len() - 1 {
            if !omega0.contains(i) && !omega0.contains(i + 1) && changes(dx[i], dx[i + 1]) {
                out.push([0.5 * (grid.coord(i)[0] + grid.coord(i + 1)[0]), 0.0]);
            }
        }
        return out;
    }
    let dy = diff_axis(d, grid, 1);
    for j in 0..grid.n(1) - 1 {
        for i in 0..grid.n(0) - 1 {
            let cell = [
                grid.index(i, j),
                grid.index(i + 1, j),
                grid.index(i, j + 1),
                grid.index(i + 1, j + 1),
            ];
            if cell.iter().any(|&k| omega0.contains(k) || grid.is_corner(k)) {
                continue;
            }
            let spans = |f: &[f64]| {
                let (lo, hi) = cell.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &k| {
                    (a.min(f[k]), b.max(f[k]))
                });
                lo < 0.0 && hi > 0.0
            };
            if spans(&dx) && spans(&dy) {
                let (a, b) = (grid.coord(cell[0]), grid.coord(cell[3]));
                out.push([0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])]);
            }
        }
    }
    out
}

/// Built-in profile: `x (L - x) / L` in 1D, the normalised separable
/// product in 2D. The result is verified before it is returned.
pub fn build_d(grid: &Grid, omega0: &SubdomainMask, lambda: f64) -> Result<WeightFunctionD, WeightsError> {
    let (lx, ly) = (grid.extent(0), grid.extent(1));
    let values = if grid.dim() == 1 {
        grid.sample(|x, _| x * (lx - x) / lx)
    } else {
        grid.sample(|x, y| x * (lx - x) * y * (ly - y) / (lx * ly))
    };
    WeightFunctionD::from_values(grid, values, omega0, lambda).map_err(|e| match (grid.dim(), e) {
        (2, WeightsError::CriticalPoint(p)) => WeightsError::NoProfile(format!(
            "the separable default has a critical point outside omega0 near {}",
            fmt_points(&p)
        )),
        (_, e) => e,
    })
}

/// `(t - t0 + delta)(t0 + delta - t)`.
pub fn theta(t: f64, t0: f64, delta: f64) -> f64 {
    (t - t0 + delta) * (t0 + delta - t)
}

/// `e^x` with the exponent clamped at [`EXP_FLOOR`].
pub fn clamped_exp(x: f64) -> f64 {
    x.max(EXP_FLOOR).exp()
}

/// Singular weights on a uniform grid of the window `[t0 - delta, t0 +
/// delta]`. Only interior slices are stored; the endpoints are excluded.
#[derive(Debug, Clone, PartialEq)]
pub struct SingularWeights {
    pub delta: f64,
    pub t0: f64,
    pub lambda: f64,
    pub s: f64,
    /// Spacing of the window grid.
    pub tau: f64,
    /// Interior times, `t0 - delta + k tau` for `k = 1..steps`.
    pub times: Vec<f64>,
    pub theta: Vec<f64>,
    pub phi: Vec<Vec<f64>>,
    pub alpha: Vec<Vec<f64>>,
    /// `e^{lambda d}` per point.
    pub e_d: Vec<f64>,
    /// `e^{2 lambda ||d||}`.
    pub e_sup: f64,
}

pub fn singular_weights(
    d: &WeightFunctionD,
    delta: f64,
    t0: f64,
    s: f64,
    steps: usize,
) -> Result<SingularWeights, WeightsError> {
    if steps < 2 || !(delta > 0.0) {
        return Err(WeightsError::Shape(
            "the window needs delta > 0 and at least two steps".into(),
        ));
    }
    let tau = 2.0 * delta / steps as f64;
    let e_d: Vec<f64> = d.values.iter().map(|x| (d.lambda * x).exp()).collect();
    let e_sup = (2.0 * d.lambda * d.sup).exp();
    let times: Vec<f64> = (1..steps).map(|k| t0 - delta + k as f64 * tau).collect();
    let theta: Vec<f64> = times.iter().map(|&t| theta(t, t0, delta)).collect();
    let phi = theta.iter().map(|th| e_d.iter().map(|e| e / th).collect()).collect();
    let alpha = theta
        .iter()
        .map(|th| e_d.iter().map(|e| (e - e_sup) / th).collect())
        .collect();
    Ok(SingularWeights {
        delta,
        t0,
        lambda: d.lambda,
        s,
        tau,
        times,
        theta,
        phi,
        alpha,
        e_d,
        e_sup,
    })
}

impl SingularWeights {
    pub fn with_s(&self, s: f64) -> SingularWeights {
        SingularWeights { s, ..self.clone() }
    }

    /// Number of intervals of the window grid.
    pub fn steps(&self) -> usize {
        self.times.len() + 1
    }

    /// `(phi, alpha)` at point `k` and an arbitrary time.
    pub fn evaluate_at(&self, k: usize, t: f64) -> Result<(f64, f64), WeightsError> {
        let th = theta(t, self.t0, self.delta);
        if !(th > 0.0) {
            return Err(WeightsError::Endpoint(t));
        }
        Ok((self.e_d[k] / th, (self.e_d[k] - self.e_sup) / th))
    }

    /// `e^{2 s alpha}` on interior slice `i`.
    pub fn exp_weight(&self, i: usize) -> Vec<f64> {
        self.scaled_exp_weight(i, 0.0)
    }

    /// `e^{2 s (alpha - shift)}`; a common shift cancels in ratios and keeps
    /// the exponent away from the floor.
    pub fn scaled_exp_weight(&self, i: usize, shift: f64) -> Vec<f64> {
        self.alpha[i]
            .iter()
            .map(|a| clamped_exp(2.0 * self.s * (a - shift)))
            .collect()
    }

    pub fn max_alpha(&self) -> f64 {
        self.alpha.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Slice index of `t0` when it is a grid node.
    pub fn t0_slice(&self) -> Option<usize> {
        self.times.iter().position(|&t| (t - self.t0).abs() < 1e-9 * self.tau)
    }

    /// Checks `alpha < 0`, `alpha(., t) <= alpha(., t0)` and
    /// `phi >= 1 / theta >= 1 / delta^2` pointwise.
    pub fn invariants(&self) -> SingularInvariants {
        let max_alpha = self.alpha.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
        let th0 = self.delta * self.delta;
        let mut max_excess = f64::NEG_INFINITY;
        let mut phi_ok = true;
        for (i, row) in self.alpha.iter().enumerate() {
            for (k, a) in row.iter().enumerate() {
                let at_t0 = (self.e_d[k] - self.e_sup) / th0;
                // rounding in theta near t0
                max_excess = max_excess.max(a - at_t0 - 1e-13 * at_t0.abs());
                let floor = 1.0 / self.theta[i];
                phi_ok &= self.phi[i][k] >= floor * (1.0 - 1e-14) && floor >= 1.0 / th0 * (1.0 - 1e-14);
            }
        }
        SingularInvariants {
            max_alpha,
            max_excess,
            phi_floor_holds: phi_ok,
        }
    }

    /// Rows `t,x,y,theta,phi,alpha` for every interior slice and point.
    pub fn write_csv<W: Write>(&self, grid: &Grid, mut w: W) -> io::Result<()> {
        writeln!(w, "t,x,y,theta,phi,alpha")?;
        for (i, t) in self.times.iter().enumerate() {
            for k in 0..grid.len() {
                let c = grid.coord(k);
                writeln!(
                    w,
                    "{t:.10e},{:.10e},{:.10e},{:.10e},{:.10e},{:.10e}",
                    c[0], c[1], self.theta[i], self.phi[i][k], self.alpha[i][k]
                )?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SingularInvariants {
    pub max_alpha: f64,
    /// `max (alpha(x, t) - alpha(x, t0))`.
    pub max_excess: f64,
    pub phi_floor_holds: bool,
}

impl SingularInvariants {
    pub fn passed(&self) -> bool {
        self.max_alpha < 0.0 && self.max_excess <= 0.0 && self.phi_floor_holds
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DtAlphaReport {
    pub max_ratio: f64,
    pub at_point: usize,
    pub at_time: f64,
}

impl DtAlphaReport {
    pub fn passed(&self) -> bool {
        self.max_ratio <= 1.0
    }
}

/// Max over interior slices of `|d_t alpha| / (2 delta e^{2 lambda ||d||}
/// phi^2)`, with the analytic `d_t alpha = -A theta' / theta^2`.
pub fn check_dt_alpha_bound(sw: &SingularWeights) -> DtAlphaReport {
    let mut rep = DtAlphaReport {
        max_ratio: 0.0,
        at_point: 0,
        at_time: sw.t0,
    };
    for (i, &t) in sw.times.iter().enumerate() {
        let th = sw.theta[i];
        let dth = -2.0 * (t - sw.t0);
        for (k, &ed) in sw.e_d.iter().enumerate() {
            let dta = -(ed - sw.e_sup) * dth / (th * th);
            let phi = sw.phi[i][k];
            let ratio = dta.abs() / (2.0 * sw.delta * sw.e_sup * phi * phi);
            if ratio > rep.max_ratio {
                rep = DtAlphaReport {
                    max_ratio: ratio,
                    at_point: k,
                    at_time: t,
                };
            }
        }
    }
    rep
}

/// Open interval of admissible `beta` for given `r`, or `None` when empty.
pub fn feasible_beta_range(dmin: f64, dmax: f64, delta0: f64, r: f64) -> Option<(f64, f64)> {
    if !(r > 0.0 && r < delta0 && dmin > 0.0) {
        return None;
    }
    let lower = (dmax - dmin).max(0.0) / (delta0 * delta0 - r * r);
    let upper = dmin / (r * r);
    (lower < upper).then_some((lower, upper))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaR {
    pub beta: f64,
    pub r: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Smallest multiple of `dt` for `r` such that the feasible `beta` range
/// survives a [`MARGIN`] on both ends, and `beta` inside it.
pub fn select_beta_r(
    d: &WeightFunctionD,
    omega_big: &SubdomainMask,
    delta0: f64,
    dt: f64,
) -> Result<BetaR, WeightsError> {
    let dmin = d.min_over(omega_big);
    if !(dmin > 0.0) {
        return Err(WeightsError::DegenerateMin(dmin));
    }
    let dmax = d.max();
    let mut k = 1;
    while (k as f64) * dt < delta0 {
        let r = k as f64 * dt;
        if let Some((lower, upper)) = feasible_beta_range(dmin, dmax, delta0, r) {
            let (lo, hi) = (lower * MARGIN, upper / MARGIN);
            if lo < hi {
                let target = dmax / (delta0 * delta0);
                let beta = if lo > 0.0 { target.clamp(lo, hi) } else { target.min(hi) };
                return Ok(BetaR { beta, r, lower, upper });
            }
        }
        k += 1;
    }
    Err(WeightsError::Infeasible { dt, delta0 })
}

/// Regular weight `psi` on `[t0 - delta0, t0 + delta0]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegularWeights {
    pub delta0: f64,
    pub beta: f64,
    pub r: f64,
    pub t0: f64,
    pub lambda: f64,
    pub times: Vec<f64>,
    pub psi: Vec<Vec<f64>>,
    pub rho1: f64,
    pub rho2: f64,
}

impl RegularWeights {
    pub fn margin(&self) -> f64 {
        self.rho2 / self.rho1
    }

    pub fn write_csv<W: Write>(&self, grid: &Grid, mut w: W) -> io::Result<()> {
        writeln!(w, "t,x,y,psi")?;
        for (i, t) in self.times.iter().enumerate() {
            for k in 0..grid.len() {
                let c = grid.coord(k);
                writeln!(w, "{t:.10e},{:.10e},{:.10e},{:.10e}", c[0], c[1], self.psi[i][k])?;
            }
        }
        Ok(())
    }
}

/// `rho1` and `rho2` for the given constants.
pub fn separation_constants(lambda: f64, dmin: f64, dmax: f64, beta: f64, r: f64, delta0: f64) -> (f64, f64) {
    let rho1 = (lambda * (dmax - beta * delta0 * delta0)).exp().max(1.0);
    let rho2 = (lambda * (dmin - beta * r * r)).exp();
    (rho1, rho2)
}

/// `psi = e^{lambda (d - beta (t - t0)^2)}` on a uniform grid with `steps`
/// intervals over the closed window `I0`.
pub fn regular_weights(
    d: &WeightFunctionD,
    omega_big: &SubdomainMask,
    beta: f64,
    r: f64,
    delta0: f64,
    t0: f64,
    steps: usize,
) -> Result<RegularWeights, WeightsError> {
    if steps < 1 || !(r > 0.0 && r < delta0) {
        return Err(WeightsError::Shape("need 0 < r < delta0 and at least one step".into()));
    }
    let lambda = d.lambda;
    let tau = 2.0 * delta0 / steps as f64;
    let times: Vec<f64> = (0..=steps).map(|k| t0 - delta0 + k as f64 * tau).collect();
    let psi: Vec<Vec<f64>> = times
        .iter()
        .map(|t| {
            d.values
                .iter()
                .map(|x| (lambda * (x - beta * (t - t0) * (t - t0))).exp())
                .collect()
        })
        .collect();
    let rho1 = (lambda * (d.max() - beta * delta0 * delta0)).exp().max(1.0);
    // the minimum over |t - t0| <= r is attained at |t - t0| = r
    let rho2 = omega_big
        .indices()
        .iter()
        .map(|&k| (lambda * (d.values[k] - beta * r * r)).exp())
        .fold(f64::INFINITY, f64::min);
    if !(rho2 > rho1) {
        return Err(WeightsError::Separation { rho1, rho2 });
    }
    Ok(RegularWeights {
        delta0,
        beta,
        r,
        t0,
        lambda,
        times,
        psi,
        rho1,
        rho2,
    })
}

fn check_slices(w: &[Vec<f64>], grid: &Grid, count: usize) -> Result<(), WeightsError> {
    if w.len() != count || w.iter().any(|s| s.len() != grid.len()) {
        return Err(WeightsError::Shape(format!(
            "expected {count} slices of {} values",
            grid.len()
        )));
    }
    Ok(())
}

/// Quadrature of the singular-weight Carleman functional. `w` holds all
/// `steps + 1` slices of the window grid; the two endpoint slices only
/// enter through the time differences.
pub fn carleman_functional(w: &[Vec<f64>], sw: &SingularWeights, grid: &Grid) -> Result<f64, WeightsError> {
    carleman_scaled(w, sw, grid, 0.0)
}

fn carleman_scaled(w: &[Vec<f64>], sw: &SingularWeights, grid: &Grid, shift: f64) -> Result<f64, WeightsError> {
    check_slices(w, grid, sw.steps() + 1)?;
    let scale = w.iter().flatten().fold(0.0f64, |m, x| m.max(x.abs()));
    let trace = grid
        .boundary_indices()
        .iter()
        .flat_map(|&k| w.iter().map(move |s| s[k].abs()))
        .fold(0.0f64, f64::max);
    if trace > 1e-12 * scale.max(f64::MIN_POSITIVE) && trace > 0.0 {
        return Err(WeightsError::BoundaryTrace(trace));
    }
    let q = grid.quadrature_weights(None);
    let s = sw.s;
    let mut total = 0.0;
    for i in 0..sw.times.len() {
        let wi = &w[i + 1];
        let hess = hessian_sq(wi, grid);
        let grad = gradient_magnitude(wi, grid);
        let ew = sw.scaled_exp_weight(i, shift);
        for k in 0..grid.len() {
            let phi = sw.phi[i][k];
            let wt = (w[i + 2][k] - w[i][k]) / (2.0 * sw.tau);
            let density =
                (wt * wt + hess[k]) / (s * phi) + s * phi * grad[k] * grad[k] + (s * phi).powi(3) * wi[k] * wi[k];
            total += q[k] * sw.tau * density * ew[k];
        }
    }
    Ok(total)
}

/// `sum_{i,j} |d_i d_j w|^2` per point.
fn hessian_sq(w: &[f64], grid: &Grid) -> Vec<f64> {
    let xx = diff2_axis(w, grid, 0);
    if grid.dim() == 1 {
        return xx.iter().map(|a| a * a).collect();
    }
    let yy = diff2_axis(w, grid, 1);
    let xy = diff_axis(&diff_axis(w, grid, 0), grid, 1);
    (0..w.len())
        .map(|k| xx[k] * xx[k] + yy[k] * yy[k] + 2.0 * xy[k] * xy[k])
        .collect()
}

/// Right-hand side terms of the singular Carleman inequality for one `w`:
/// the weighted residual of `d_t - dk Lap + b` and the observation term on
/// omega0.
pub fn carleman_rhs(
    w: &[Vec<f64>],
    sw: &SingularWeights,
    grid: &Grid,
    dk: f64,
    b: f64,
    omega0: &SubdomainMask,
) -> Result<(f64, f64), WeightsError> {
    carleman_rhs_scaled(w, sw, grid, dk, b, omega0, 0.0)
}

fn carleman_rhs_scaled(
    w: &[Vec<f64>],
    sw: &SingularWeights,
    grid: &Grid,
    dk: f64,
    b: f64,
    omega0: &SubdomainMask,
    shift: f64,
) -> Result<(f64, f64), WeightsError> {
    check_slices(w, grid, sw.steps() + 1)?;
    let q = grid.quadrature_weights(None);
    let (mut residual, mut observed) = (0.0, 0.0);
    for i in 0..sw.times.len() {
        let wi = &w[i + 1];
        let ew = sw.scaled_exp_weight(i, shift);
        for k in grid.interior_indices() {
            let wt = (w[i + 2][k] - w[i][k]) / (2.0 * sw.tau);
            let res = wt - dk * grid.laplacian_at(wi, k) + b * wi[k];
            residual += q[k] * sw.tau * res * res * ew[k];
            if omega0.contains(k) {
                observed += q[k] * sw.tau * (sw.s * sw.phi[i][k]).powi(3) * wi[k] * wi[k] * ew[k];
            }
        }
    }
    Ok((residual, observed))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CarlemanRow {
    pub s: f64,
    /// Max ratio over the samples with a nonzero right-hand side.
    pub constant: f64,
    /// Per-sample ratio; `None` where the right-hand side vanishes.
    pub ratios: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CarlemanReport {
    pub rows: Vec<CarlemanRow>,
    /// Start of the non-increasing tail of `C(s)`.
    pub s0: f64,
}

impl CarlemanReport {
    pub fn finite(&self) -> bool {
        self.rows.iter().all(|r| r.constant.is_finite())
    }

    /// Whether `C(s)` is non-increasing from `s0` on.
    pub fn tail_non_increasing(&self) -> bool {
        self.rows
            .iter()
            .skip_while(|r| r.s < self.s0)
            .collect::<Vec<_>>()
            .windows(2)
            .all(|p| p[1].constant <= p[0].constant)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "s,C")?;
        for r in &self.rows {
            writeln!(w, "{},{:.10e}", r.s, r.constant)?;
        }
        Ok(())
    }
}

/// Ratio of the Carleman functional to the right-hand side terms, per
/// sample and per `s` of the ladder. Diagnostic only.
pub fn empirical_carleman_constant(
    samples: &[Vec<Vec<f64>>],
    sw: &SingularWeights,
    grid: &Grid,
    dk: f64,
    b: f64,
    omega0: &SubdomainMask,
    ladder: &[f64],
) -> Result<CarlemanReport, WeightsError> {
    let mut rows = Vec::with_capacity(ladder.len());
    for &s in ladder {
        let sws = sw.with_s(s);
        let shift = sws.max_alpha();
        let mut ratios = Vec::with_capacity(samples.len());
        for w in samples {
            let lhs = carleman_scaled(w, &sws, grid, shift)?;
            let (res, obs) = carleman_rhs_scaled(w, &sws, grid, dk, b, omega0, shift)?;
            let rhs = res + obs;
            ratios.push((rhs > 0.0).then(|| lhs / rhs));
        }
        let constant = ratios.iter().flatten().copied().fold(0.0f64, f64::max);
        rows.push(CarlemanRow { s, constant, ratios });
    }
    let mut start = rows.len().saturating_sub(1);
    while start > 0 && rows[start].constant <= rows[start - 1].constant {
        start -= 1;
    }
    let s0 = rows.get(start).map_or(f64::NAN, |r| r.s);
    Ok(CarlemanReport { rows, s0 })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegralReport {
    pub lhs: f64,
    pub rhs: f64,
    /// `lhs / rhs`; compare against `delta0^2`.
    pub ratio: f64,
    pub delta0: f64,
}

impl IntegralReport {
    /// `ratio <= delta0^2 (1 + 10 tau)`.
    pub fn passed(&self, tau: f64) -> bool {
        !(self.ratio > self.delta0 * self.delta0 * (1.0 + 10.0 * tau))
    }
}

/// Compares `int |int_{t0}^t w|^2 e^{2 s psi}` with `int |w|^2 e^{2 s psi}`
/// over `Omega x I0`. The inner integral is a cumulative trapezoid from the
/// slice at `t0`.
pub fn integral_estimate_check(
    w: &[Vec<f64>],
    rw: &RegularWeights,
    grid: &Grid,
    s: f64,
) -> Result<IntegralReport, WeightsError> {
    check_slices(w, grid, rw.times.len())?;
    let steps = rw.times.len() - 1;
    if steps % 2 != 0 {
        return Err(WeightsError::Shape(
            "t0 must be a node of the I0 grid (even step count)".into(),
        ));
    }
    let tau = 2.0 * rw.delta0 / steps as f64;
    let mid = steps / 2;
    let q = grid.quadrature_weights(None);
    let tw: Vec<f64> = (0..=steps)
        .map(|i| if i == 0 || i == steps { 0.5 * tau } else { tau })
        .collect();
    let (mut lhs, mut rhs) = (0.0, 0.0);
    for k in 0..grid.len() {
        let mut cum = vec![0.0; steps + 1];
        for i in mid + 1..=steps {
            cum[i] = cum[i - 1] + 0.5 * tau * (w[i - 1][k] + w[i][k]);
        }
        for i in (0..mid).rev() {
            cum[i] = cum[i + 1] - 0.5 * tau * (w[i + 1][k] + w[i][k]);
        }
        for i in 0..=steps {
            let e = (2.0 * s * rw.psi[i][k]).exp();
            lhs += q[k] * tw[i] * cum[i] * cum[i] * e;
            rhs += q[k] * tw[i] * w[i][k] * w[i][k] * e;
        }
    }
    let ratio = if rhs > 0.0 { lhs / rhs } else { 0.0 };
    Ok(IntegralReport {
        lhs,
        rhs,
        ratio,
        delta0: rw.delta0,
    })
}
