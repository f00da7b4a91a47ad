//! Source reconstruction: the pointwise identity at `t0`, the adjoint-based
//! variational method and the algebraic data reductions that turn reduced
//! measurements into reference (M1) data.

use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use crate::domain::{Grid, MaskRole, TimeGrid, Window};
use crate::forward::{solve_adjoint, solve_forward_until, ForwardError, LinearizedSystem, Trajectory};
use crate::measure::{MeasureError, MeasurementSet, Variant, WindowStack};
use crate::model::{ProblemData, SampledCoefficient};

/// Smallest admissible value of the source modulation at `t0`.
pub const EPS_R: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum InverseError {
    #[error(
        "positivity violated: min {component} = {min:.6e} at x = ({:.4}, {:.4}), t = {time:.4} is below {eps:.1e}; \
         the maximum-principle hypotheses (nonnegative initial and boundary data{}) do not hold for this data",
        location[0], location[1],
        if *component == "u" { ", nonnegative source" } else { "" }
    )]
    Positivity {
        component: &'static str,
        min: f64,
        eps: f64,
        location: [f64; 2],
        time: f64,
    },
    #[error("inconsistent data: recovered v^2 = {min_v2:.6e} at x = ({:.4}, {:.4}), t = {time:.4}", location[0], location[1])]
    Inconsistent { min_v2: f64, location: [f64; 2], time: f64 },
    #[error(
        "source modulation R(., t0) has minimum {0:.3e} <= {EPS_R:e}; the source cannot be recovered where R vanishes"
    )]
    Modulation(f64),
    #[error("{0} window data lack the spatial Laplacian needed by the reduction")]
    MissingLaplacian(&'static str),
    #[error("objective became non-finite at iteration {0}")]
    NonFinite(usize),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error(transparent)]
    Forward(#[from] ForwardError),
}

impl InverseError {
    pub fn is_positivity(&self) -> bool {
        matches!(
            self,
            InverseError::Positivity { .. } | InverseError::Inconsistent { .. }
        )
    }
}

/// `f = (u_t - d1 Lap u + u v^2 + a1 u) / R` at interior points, extended
/// linearly to the boundary (along the diagonal at rectangle corners).
pub fn source_from_fields(
    u_t0: &[f64],
    dt_u_t0: &[f64],
    v_t0: &[f64],
    a1_t0: &[f64],
    d1: f64,
    r_t0: &[f64],
    grid: &Grid,
) -> Result<Vec<f64>, InverseError> {
    for (name, f) in [("u", u_t0), ("u_t", dt_u_t0), ("v", v_t0), ("a1", a1_t0), ("R", r_t0)] {
        if f.len() != grid.len() {
            return Err(InverseError::Shape(format!(
                "{name} has {} values, grid has {}",
                f.len(),
                grid.len()
            )));
        }
    }
    let rmin = r_t0.iter().copied().fold(f64::INFINITY, f64::min);
    if !(rmin > EPS_R) {
        return Err(InverseError::Modulation(rmin));
    }
    let mut f = vec![0.0; grid.len()];
    for k in grid.interior_indices() {
        let u = u_t0[k];
        let raw = dt_u_t0[k] - d1 * grid.laplacian_at(u_t0, k) + u * v_t0[k] * v_t0[k] + a1_t0[k] * u;
        f[k] = raw / r_t0[k];
    }
    extend_to_boundary(&mut f, grid);
    Ok(f)
}

fn extend_to_boundary(f: &mut [f64], grid: &Grid) {
    let (nx, ny) = (grid.n(0), grid.n(1));
    if grid.dim() == 1 {
        f[0] = 2.0 * f[1] - f[2];
        f[nx - 1] = 2.0 * f[nx - 2] - f[nx - 3];
        return;
    }
    let id = |i: usize, j: usize| grid.index(i, j);
    for j in 1..ny - 1 {
        f[id(0, j)] = 2.0 * f[id(1, j)] - f[id(2, j)];
        f[id(nx - 1, j)] = 2.0 * f[id(nx - 2, j)] - f[id(nx - 3, j)];
    }
    for i in 1..nx - 1 {
        f[id(i, 0)] = 2.0 * f[id(i, 1)] - f[id(i, 2)];
        f[id(i, ny - 1)] = 2.0 * f[id(i, ny - 2)] - f[id(i, ny - 3)];
    }
    for (i, j, di, dj) in [
        (0, 0, 1i64, 1i64),
        (nx - 1, 0, -1, 1),
        (0, ny - 1, 1, -1),
        (nx - 1, ny - 1, -1, -1),
    ] {
        let at = |s: i64| id((i as i64 + s * di) as usize, (j as i64 + s * dj) as usize);
        f[at(0)] = 2.0 * f[at(1)] - f[at(2)];
    }
}

/// Applies the identity to a stored trajectory at `t0`, with the centred
/// time difference for `u_t`.
pub fn source_from_trajectory(problem: &ProblemData, traj: &Trajectory) -> Result<Vec<f64>, InverseError> {
    let n = traj.time.t0_index();
    if n + 1 >= traj.levels() {
        return Err(InverseError::Shape("trajectory stops before t0 + dt".into()));
    }
    let dt = traj.dt();
    let ut: Vec<f64> = traj.u[n + 1]
        .iter()
        .zip(&traj.u[n - 1])
        .map(|(a, b)| (a - b) / (2.0 * dt))
        .collect();
    let t = traj.time.time(n);
    source_from_fields(
        &traj.u[n],
        &ut,
        &traj.v[n],
        &problem.a1.sample(&traj.grid, t, n),
        problem.d1,
        &problem.r.sample(&traj.grid, t, n),
        &traj.grid,
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReductionOptions {
    /// Smallest admissible minimum of the dividing component.
    pub eps_pos: f64,
    /// Tolerated negative excursion of the recovered `v^2`.
    pub eps_neg: f64,
}

impl Default for ReductionOptions {
    fn default() -> Self {
        ReductionOptions {
            eps_pos: 1e-6,
            eps_neg: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReductionDiagnostics {
    pub m0_u: Option<f64>,
    pub m0_v: Option<f64>,
    /// Most negative recovered `v^2` before clamping.
    pub min_v2: Option<f64>,
    /// Source on omega computed from the snapshots.
    pub f_omega: Option<Vec<f64>>,
    pub trace: Vec<String>,
}

struct Sampler<'a> {
    ms: &'a MeasurementSet,
}

impl Sampler<'_> {
    fn coef(&self, c: &crate::model::Coefficient) -> SampledCoefficient {
        c.tabulate(&self.ms.grid, &self.ms.time)
    }

    fn locate(&self, j: usize, i: usize) -> ([f64; 2], f64) {
        (
            self.ms.grid.coord(self.ms.omega_points[j]),
            self.ms.time.time(self.ms.window.lo + i),
        )
    }

    fn min_positive(&self, component: &'static str, values: &[Vec<f64>], eps: f64) -> Result<f64, InverseError> {
        let (mut min, mut at) = (f64::INFINITY, (0, 0));
        for (i, row) in values.iter().enumerate() {
            for (j, &x) in row.iter().enumerate() {
                if x < min {
                    min = x;
                    at = (j, i);
                }
            }
        }
        if !(min >= eps) {
            let (location, time) = self.locate(at.0, at.1);
            return Err(InverseError::Positivity {
                component,
                min,
                eps,
                location,
                time,
            });
        }
        Ok(min)
    }
}

/// Recovers `u = (v_t - d2 Lap v + a2 v) / v^2` on `omega x window`.
pub fn reduce_m2(
    ms: &MeasurementSet,
    problem: &ProblemData,
    opts: &ReductionOptions,
) -> Result<(MeasurementSet, ReductionDiagnostics), InverseError> {
    let vw = ms.v_window()?;
    let lap = vw.lap.as_ref().ok_or(InverseError::MissingLaplacian("v"))?;
    let s = Sampler { ms };
    let m0_v = s.min_positive("v", &vw.values, opts.eps_pos)?;
    let a2 = s.coef(&problem.a2);
    let u: Vec<Vec<f64>> = ms
        .window
        .levels()
        .enumerate()
        .map(|(i, n)| {
            ms.omega_points
                .iter()
                .enumerate()
                .map(|(j, &k)| {
                    let v = vw.values[i][j];
                    (vw.dt[i][j] - problem.d2 * lap[i][j] + a2.at(n)[k] * v) / (v * v)
                })
                .collect()
        })
        .collect();
    let mut out = ms.clone();
    out.u_window = Some(WindowStack::from_values(u, ms.time.dt()));
    out.variant = Variant::M1;
    out.validate()?;
    let diag = ReductionDiagnostics {
        m0_v: Some(m0_v),
        trace: vec![format!(
            "M2: min v on omega x window = {m0_v:.6e}; u synthesized from the v equation"
        )],
        ..Default::default()
    };
    Ok((out, diag))
}

/// Recovers `v = sqrt((d1 Lap u - a1 u + R f - u_t) / u)` on
/// `omega x window` using the given source on omega.
pub fn reduce_m3(
    ms: &MeasurementSet,
    problem: &ProblemData,
    opts: &ReductionOptions,
) -> Result<(MeasurementSet, ReductionDiagnostics), InverseError> {
    let uw = ms.u_window()?;
    let f = ms.f_on_omega()?;
    let lap = uw.lap.as_ref().ok_or(InverseError::MissingLaplacian("u"))?;
    let s = Sampler { ms };
    let m0_u = s.min_positive("u", &uw.values, opts.eps_pos)?;
    let a1 = s.coef(&problem.a1);
    let r = s.coef(&problem.r);
    let (mut min_v2, mut at) = (f64::INFINITY, (0, 0));
    let mut v = Vec::with_capacity(ms.window.len());
    for (i, n) in ms.window.levels().enumerate() {
        let mut row = Vec::with_capacity(ms.omega_points.len());
        for (j, &k) in ms.omega_points.iter().enumerate() {
            let u = uw.values[i][j];
            let v2 = (problem.d1 * lap[i][j] - a1.at(n)[k] * u + r.at(n)[k] * f[j] - uw.dt[i][j]) / u;
            if v2 < min_v2 {
                min_v2 = v2;
                at = (j, i);
            }
            row.push(v2.max(0.0).sqrt());
        }
        v.push(row);
    }
    if min_v2 < -opts.eps_neg {
        let (location, time) = s.locate(at.0, at.1);
        return Err(InverseError::Inconsistent { min_v2, location, time });
    }
    let mut out = ms.clone();
    out.v_window = Some(WindowStack::from_values(v, ms.time.dt()));
    out.f_on_omega = None;
    out.variant = Variant::M1;
    out.validate()?;
    let diag = ReductionDiagnostics {
        m0_u: Some(m0_u),
        min_v2: Some(min_v2),
        trace: vec![format!(
            "M3: min u on omega x window = {m0_u:.6e}; min recovered v^2 = {min_v2:.6e}; v synthesized from the u equation"
        )],
        ..Default::default()
    };
    Ok((out, diag))
}

/// Computes `f` on omega from both snapshots at `t0`, then proceeds as for
/// M3.
pub fn reduce_m4(
    ms: &MeasurementSet,
    problem: &ProblemData,
    opts: &ReductionOptions,
) -> Result<(MeasurementSet, ReductionDiagnostics), InverseError> {
    let sv = ms.snapshot_v()?;
    let uw = ms.u_window()?;
    let lap = uw.lap.as_ref().ok_or(InverseError::MissingLaplacian("u"))?;
    let s = Sampler { ms };
    let m0_u = s.min_positive("u", &uw.values, opts.eps_pos)?;
    let t0 = ms.time.t0_index();
    let i0 = t0 - ms.window.lo;
    let vsnap: Vec<Vec<f64>> = vec![ms.omega_points.iter().map(|&k| sv[k]).collect()];
    let snap_min = Sampler { ms }
        .min_positive("v", &vsnap, opts.eps_pos)
        .map_err(|e| match e {
            InverseError::Positivity {
                component,
                min,
                eps,
                location,
                ..
            } => InverseError::Positivity {
                component,
                min,
                eps,
                location,
                time: ms.time.t0(),
            },
            other => other,
        })?;
    let a1 = s.coef(&problem.a1);
    let r = s.coef(&problem.r);
    let mut f = Vec::with_capacity(ms.omega_points.len());
    for (j, &k) in ms.omega_points.iter().enumerate() {
        let rr = r.at(t0)[k];
        if !(rr > EPS_R) {
            return Err(InverseError::Modulation(rr));
        }
        let u = uw.values[i0][j];
        let v = sv[k];
        f.push((uw.dt[i0][j] - problem.d1 * lap[i0][j] + u * v * v + a1.at(t0)[k] * u) / rr);
    }
    let mut m3 = ms.clone();
    m3.variant = Variant::M3;
    m3.snapshot_v = None;
    m3.f_on_omega = Some(f.clone());
    let (out, mut diag) = reduce_m3(&m3, problem, opts)?;
    let m0_v = s.min_positive("v", &out.v_window()?.values, opts.eps_pos)?;
    diag.trace.insert(
        0,
        format!("M4: min u = {m0_u:.6e}, min v(t0) = {snap_min:.6e} on omega; f on omega from the u equation at t0"),
    );
    diag.m0_v = Some(m0_v.min(snap_min));
    diag.f_omega = Some(f);
    Ok((out, diag))
}

/// Dispatches to the reduction of the set's variant; M1 passes through.
pub fn reduce(
    ms: &MeasurementSet,
    problem: &ProblemData,
    opts: &ReductionOptions,
) -> Result<(MeasurementSet, ReductionDiagnostics), InverseError> {
    match ms.variant {
        Variant::M1 => Ok((ms.clone(), ReductionDiagnostics::default())),
        Variant::M2 => reduce_m2(ms, problem, opts),
        Variant::M3 => reduce_m3(ms, problem, opts),
        Variant::M4 => reduce_m4(ms, problem, opts),
    }
}

/// Relative weights of the misfit terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MisfitWeights {
    pub snapshot: f64,
    pub u_value: f64,
    pub u_dt: f64,
    pub v_value: f64,
    pub v_dt: f64,
}

impl Default for MisfitWeights {
    fn default() -> Self {
        MisfitWeights {
            snapshot: 1.0,
            u_value: 1.0,
            u_dt: 1.0,
            v_value: 1.0,
            v_dt: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VariationalOptions {
    /// Tikhonov weight on `||f||^2`.
    pub gamma: f64,
    /// Stop when `||grad|| <= tol * ||grad_0||`.
    pub tol: f64,
    /// Stop when `||grad|| <= gtol_abs`.
    pub gtol_abs: f64,
    pub max_iter: usize,
    pub weights: MisfitWeights,
}

impl Default for VariationalOptions {
    fn default() -> Self {
        VariationalOptions {
            gamma: 0.0,
            tol: 1e-8,
            gtol_abs: 1e-14,
            max_iter: 200,
            weights: MisfitWeights::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Method {
    SourceIdentity,
    Variational,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::SourceIdentity => "source-identity",
            Method::Variational => "variational",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub j: f64,
    pub grad_norm: f64,
    pub step: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructionResult {
    pub f_hat: Vec<f64>,
    pub method: Method,
    pub log: Vec<IterationRecord>,
    /// Where the reconstruction is meaningful.
    pub support: MaskRole,
    pub converged: bool,
}

impl ReconstructionResult {
    pub fn final_j(&self) -> f64 {
        self.log.last().map_or(f64::NAN, |r| r.j)
    }

    pub fn iterations(&self) -> usize {
        self.log.last().map_or(0, |r| r.iter)
    }

    /// Writes `f_hat.csv` and `manifest.json`.
    pub fn write_dir(&self, dir: &Path, grid: &Grid, extra: &serde_json::Value) -> io::Result<()> {
        fs::create_dir_all(dir)?;
        let mut w = io::BufWriter::new(fs::File::create(dir.join("f_hat.csv"))?);
        writeln!(w, "# {}", grid.header())?;
        writeln!(w, "point,x,y,f_hat")?;
        for (k, f) in self.f_hat.iter().enumerate() {
            let c = grid.coord(k);
            writeln!(w, "{k},{:.12e},{:.12e},{f:.12e}", c[0], c[1])?;
        }
        w.flush()?;
        let mut dat = io::BufWriter::new(fs::File::create(dir.join("f_hat.dat"))?);
        for (k, f) in self.f_hat.iter().enumerate() {
            let c = grid.coord(k);
            if grid.dim() == 1 {
                writeln!(dat, "{:.12e} {f:.12e}", c[0])?;
            } else {
                writeln!(dat, "{:.12e} {:.12e} {f:.12e}", c[0], c[1])?;
            }
        }
        dat.flush()?;
        let manifest = serde_json::json!({
            "method": self.method.to_string(),
            "support": self.support.tag(),
            "iterations": self.iterations(),
            "converged": self.converged,
            "final_j": self.final_j(),
            "log": self.log,
            "extra": extra,
        });
        fs::write(
            dir.join("manifest.json"),
            serde_json::to_string_pretty(&manifest).expect("serializable") + "\n",
        )
    }
}

/// Misfit functional for M1 data, evaluated through forward solves.
pub struct Objective<'a> {
    problem: ProblemData,
    data: &'a MeasurementSet,
    opts: VariationalOptions,
    /// Lipschitz window `I`.
    window: Window,
    quad: Vec<f64>,
    omega_w: Vec<f64>,
    time_w: Vec<f64>,
}

/// Value of the objective with the trajectory it was computed from.
pub struct Evaluation {
    pub j: f64,
    pub traj: Trajectory,
}

impl<'a> Objective<'a> {
    pub fn new(
        problem: &ProblemData,
        data: &'a MeasurementSet,
        opts: VariationalOptions,
    ) -> Result<Self, InverseError> {
        data.u_window()?;
        data.v_window()?;
        let grid = &data.grid;
        let window = data.time.lipschitz_window();
        let q_omega = grid.quadrature_weights(Some(data.subdomains.omega.as_slice()));
        Ok(Objective {
            problem: problem.clone(),
            data,
            opts,
            window,
            quad: grid.quadrature_weights(None),
            omega_w: data.omega_points.iter().map(|&k| q_omega[k]).collect(),
            time_w: window.quadrature_weights(data.time.dt()),
        })
    }

    fn grid(&self) -> &Grid {
        &self.data.grid
    }

    fn tg(&self) -> &TimeGrid {
        &self.data.time
    }

    /// Last level the objective reads.
    fn last_level(&self) -> usize {
        (self.window.hi + 1).max(self.tg().t0_index())
    }

    pub fn evaluate(&self, f: &[f64]) -> Result<Evaluation, InverseError> {
        let mut p = self.problem.clone();
        p.f = f.to_vec();
        let traj = solve_forward_until(&p, self.grid(), self.tg(), self.last_level())?;
        let j = self.misfit(&traj, f, None);
        Ok(Evaluation { j, traj })
    }

    /// Misfit of `traj`; when `grad` is given it receives `dJ/du^n`,
    /// `dJ/dv^n` for the levels `0..=last_level`.
    fn misfit(&self, traj: &Trajectory, f: &[f64], mut grad: Option<(&mut [Vec<f64>], &mut [Vec<f64>])>) -> f64 {
        let w = &self.opts.weights;
        let dt = self.tg().dt();
        let t0 = self.tg().t0_index();
        let mut j = 0.0;
        for (k, q) in self.quad.iter().enumerate() {
            let r = traj.u[t0][k] - self.data.snapshot_u[k];
            j += w.snapshot * q * r * r;
            if let Some((gu, _)) = grad.as_mut() {
                gu[t0][k] += 2.0 * w.snapshot * q * r;
            }
        }
        let offset = self.window.lo - self.data.window.lo;
        let stacks = [
            (&traj.u, self.data.u_window.as_ref().unwrap(), w.u_value, w.u_dt, 0),
            (&traj.v, self.data.v_window.as_ref().unwrap(), w.v_value, w.v_dt, 1),
        ];
        for (model, st, wv, wd, comp) in stacks {
            for (i, n) in self.window.levels().enumerate() {
                for (jj, &k) in self.data.omega_points.iter().enumerate() {
                    let c = self.time_w[i] * self.omega_w[jj];
                    let rv = model[n][k] - st.values[offset + i][jj];
                    let rd = (model[n + 1][k] - model[n - 1][k]) / (2.0 * dt) - st.dt[offset + i][jj];
                    j += c * (wv * rv * rv + wd * rd * rd);
                    if let Some((gu, gv)) = grad.as_mut() {
                        let g = if comp == 0 { &mut **gu } else { &mut **gv };
                        g[n][k] += 2.0 * c * wv * rv;
                        g[n + 1][k] += c * wd * rd / dt;
                        g[n - 1][k] -= c * wd * rd / dt;
                    }
                }
            }
        }
        let reg: f64 = f.iter().zip(&self.quad).map(|(x, q)| q * x * x).sum();
        j + self.opts.gamma * reg
    }

    /// Euclidean gradient of the objective at the evaluated point.
    pub fn gradient(&self, eval: &Evaluation, f: &[f64]) -> Result<Vec<f64>, InverseError> {
        let last = self.last_level();
        let np = self.grid().len();
        let mut gu = vec![vec![0.0; np]; last + 1];
        let mut gv = vec![vec![0.0; np]; last + 1];
        self.misfit(&eval.traj, f, Some((&mut gu, &mut gv)));
        let window = Window { lo: 0, hi: last };
        let sys = LinearizedSystem::tangent(&self.problem, &eval.traj, 0, last.saturating_sub(1))
            .map_err(ForwardError::from)?;
        let adj = solve_adjoint(&sys, &gu, &gv, self.grid(), self.tg(), window)?;
        Ok(adj
            .gradient
            .iter()
            .zip(f)
            .zip(&self.quad)
            .map(|((g, x), q)| g + 2.0 * self.opts.gamma * q * x)
            .collect())
    }
}

/// Gradient descent in the `L^2` inner product with Armijo backtracking.
/// The trial step of each line search is the Barzilai-Borwein length of
/// the previous iteration; every accepted step decreases the objective.
pub fn variational_reconstruct(
    problem: &ProblemData,
    data: &MeasurementSet,
    init_f: &[f64],
    opts: &VariationalOptions,
) -> Result<ReconstructionResult, InverseError> {
    if data.variant != Variant::M1 {
        return Err(MeasureError::Absent {
            component: "reference (M1) data",
            variant: data.variant,
        }
        .into());
    }
    if init_f.len() != data.grid.len() || init_f.iter().any(|x| !x.is_finite()) {
        return Err(InverseError::Shape(
            "initial source must be finite and grid-sized".into(),
        ));
    }
    let obj = Objective::new(problem, data, *opts)?;
    let q = obj.quad.clone();
    let to_l2 = |g: &[f64]| -> Vec<f64> {
        g.iter()
            .zip(&q)
            .map(|(g, q)| if *q > 0.0 { g / q } else { 0.0 })
            .collect()
    };
    let dot = |a: &[f64], b: &[f64]| -> f64 { a.iter().zip(b).zip(&q).map(|((x, y), w)| w * x * y).sum() };

    let mut f = init_f.to_vec();
    let mut eval = obj.evaluate(&f)?;
    if !eval.j.is_finite() {
        return Err(InverseError::NonFinite(0));
    }
    let mut g = to_l2(&obj.gradient(&eval, &f)?);
    let mut gnorm = dot(&g, &g).sqrt();
    let g0 = gnorm;
    let mut log = vec![IterationRecord {
        iter: 0,
        j: eval.j,
        grad_norm: gnorm,
        step: 0.0,
    }];
    let mut converged = gnorm <= opts.gtol_abs;
    let mut step = if gnorm > 0.0 { eval.j / (gnorm * gnorm) } else { 0.0 };
    let mut iter = 0;
    while !converged && iter < opts.max_iter {
        iter += 1;
        let mut alpha = step;
        let mut accepted = None;
        for _ in 0..60 {
            let trial: Vec<f64> = f.iter().zip(&g).map(|(x, d)| x - alpha * d).collect();
            let e = obj.evaluate(&trial)?;
            if e.j.is_finite() && e.j <= eval.j - 1e-4 * alpha * gnorm * gnorm {
                accepted = Some((trial, e));
                break;
            }
            alpha *= 0.5;
        }
        let Some((fnew, enew)) = accepted else {
            // no decrease representable at this scale
            break;
        };
        let gnew = to_l2(&obj.gradient(&enew, &fnew)?);
        let s: Vec<f64> = fnew.iter().zip(&f).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gnew.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        step = if sy > 0.0 { dot(&s, &s) / sy } else { 2.0 * alpha };
        f = fnew;
        eval = enew;
        g = gnew;
        gnorm = dot(&g, &g).sqrt();
        log.push(IterationRecord {
            iter,
            j: eval.j,
            grad_norm: gnorm,
            step: alpha,
        });
        converged = gnorm <= opts.tol * g0 || gnorm <= opts.gtol_abs;
    }
    Ok(ReconstructionResult {
        f_hat: f,
        method: Method::Variational,
        log,
        support: MaskRole::OmegaBig,
        converged,
    })
}

/// Relative `L^2` error of `approx` against `exact` over `mask`.
pub fn relative_error(approx: &[f64], exact: &[f64], mask: Option<&[bool]>, grid: &Grid) -> f64 {
    let d: Vec<f64> = approx.iter().zip(exact).map(|(a, b)| a - b).collect();
    let num = crate::domain::l2_norm(&d, mask, grid).unwrap_or(f64::NAN);
    let den = crate::domain::l2_norm(exact, mask, grid).unwrap_or(f64::NAN);
    num / den
}
