//! IMEX Euler integration of the nonlinear system, of the linearized
//! difference system and of its discrete adjoint, plus manufactured steady
//! solutions.
//!
//! One step of the nonlinear scheme reads
//!
//! ```text
//! (I - dt d1 Lap) u^{n+1} = u^n + dt (-u^n (v^n)^2 - a1^n u^n + R^n f)
//! (I - dt d2 Lap) v^{n+1} = v^n + dt ( u^n (v^n)^2 - a2^n v^n)
//! ```
//!
//! with boundary rows pinned to `g^{n+1}`, `h^{n+1}`.

use std::f64::consts::PI;
use std::io::{self, Read, Write};

use thiserror::Error;

use crate::domain::{Grid, TimeGrid, TimeSpec, Window};
use crate::linalg::DiffusionSolver;
use crate::model::{AdmissibilityBounds, Coefficient, ModelError, PCoefficients, ProblemData, SampledCoefficient};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ForwardError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("time step dt = {dt:.6e} violates the positivity restriction; required dt <= {required:.6e}")]
    StepRestriction { dt: f64, required: f64 },
    #[error("initial data disagree with the boundary data at t = 0 by {0:.3e}")]
    Incompatible(f64),
    #[error("solution became non-finite at time level {0}")]
    NonFinite(usize),
    #[error("window {lo}..={hi} is outside the stored levels 0..{levels}")]
    Window { lo: usize, hi: usize, levels: usize },
    #[error("manufactured profile rejected: {0}")]
    Manufactured(String),
}

/// Stored history of `(u, v)` on the time levels `0..levels()`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub grid: Grid,
    pub time: TimeGrid,
    pub u: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub scheme: String,
}

const SCHEME: &str = "imex-euler";
const MAGIC: &[u8; 8] = b"KGSTRAJ1";

impl Trajectory {
    pub fn levels(&self) -> usize {
        self.u.len()
    }

    pub fn dt(&self) -> f64 {
        self.time.dt()
    }

    /// Smallest value of `u` (or `v`) over the given points and levels.
    pub fn min_over(&self, component: Component, points: &[usize], window: Window) -> (f64, usize, usize) {
        let data = match component {
            Component::U => &self.u,
            Component::V => &self.v,
        };
        let mut best = (f64::INFINITY, 0, 0);
        for n in window.levels() {
            for &k in points {
                if data[n][k] < best.0 {
                    best = (data[n][k], k, n);
                }
            }
        }
        best
    }

    pub fn global_min(&self, component: Component) -> f64 {
        let data = match component {
            Component::U => &self.u,
            Component::V => &self.v,
        };
        data.iter().flatten().copied().fold(f64::INFINITY, f64::min)
    }

    fn header(&self) -> String {
        let s = self.time.spec();
        format!(
            "{}\ntime T={} dt={} t0={} delta={} delta0={} r={} levels={}\nscheme {}\n",
            self.grid.header(),
            s.horizon,
            s.dt,
            s.t0,
            s.delta,
            s.delta0,
            s.r,
            self.levels(),
            self.scheme
        )
    }

    /// Binary export: magic, header length (u32 LE), text header, then `u`
    /// and `v` as row-major little-endian `f64` arrays `[level][point]`.
    pub fn write_binary<W: Write>(&self, mut w: W) -> io::Result<()> {
        let header = self.header();
        w.write_all(MAGIC)?;
        w.write_all(&(header.len() as u32).to_le_bytes())?;
        w.write_all(header.as_bytes())?;
        for field in [&self.u, &self.v] {
            for level in field {
                for x in level {
                    w.write_all(&x.to_le_bytes())?;
                }
            }
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> io::Result<Self> {
        let bad = |m: &str| io::Error::new(io::ErrorKind::InvalidData, m.to_string());
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(bad("not a trajectory file"));
        }
        let mut len = [0u8; 4];
        r.read_exact(&mut len)?;
        let mut header = vec![0u8; u32::from_le_bytes(len) as usize];
        r.read_exact(&mut header)?;
        let header = String::from_utf8(header).map_err(|_| bad("header is not UTF-8"))?;
        let mut lines = header.lines();
        let grid = Grid::parse_header(lines.next().ok_or_else(|| bad("missing grid line"))?)
            .map_err(|e| bad(&e.to_string()))?;
        let time_line = lines.next().ok_or_else(|| bad("missing time line"))?;
        let mut kv = std::collections::HashMap::new();
        for tok in time_line.split_whitespace().skip(1) {
            let (k, v) = tok.split_once('=').ok_or_else(|| bad("bad time line"))?;
            kv.insert(k, v);
        }
        let num = |k: &str| -> io::Result<f64> {
            kv.get(k)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| bad(&format!("missing {k}")))
        };
        let time = TimeGrid::new(&TimeSpec {
            horizon: num("T")?,
            dt: num("dt")?,
            t0: num("t0")?,
            delta: num("delta")?,
            delta0: num("delta0")?,
            r: num("r")?,
        })
        .map_err(|e| bad(&e.to_string()))?;
        let levels = num("levels")? as usize;
        let scheme = lines
            .next()
            .and_then(|l| l.strip_prefix("scheme "))
            .unwrap_or(SCHEME)
            .to_string();
        let mut read_field = || -> io::Result<Vec<Vec<f64>>> {
            let mut out = Vec::with_capacity(levels);
            let mut buf = [0u8; 8];
            for _ in 0..levels {
                let mut level = Vec::with_capacity(grid.len());
                for _ in 0..grid.len() {
                    r.read_exact(&mut buf)?;
                    level.push(f64::from_le_bytes(buf));
                }
                out.push(level);
            }
            Ok(out)
        };
        let u = read_field()?;
        let v = read_field()?;
        Ok(Trajectory {
            grid,
            time,
            u,
            v,
            scheme,
        })
    }

    /// Long-format CSV `level,t,point,x,y,u,v`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        for line in self.header().lines() {
            writeln!(w, "# {line}")?;
        }
        writeln!(w, "level,t,point,x,y,u,v")?;
        for n in 0..self.levels() {
            for k in 0..self.grid.len() {
                let c = self.grid.coord(k);
                writeln!(
                    w,
                    "{n},{:.12e},{k},{:.12e},{:.12e},{:.12e},{:.12e}",
                    self.time.time(n),
                    c[0],
                    c[1],
                    self.u[n][k],
                    self.v[n][k]
                )?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Component {
    U,
    V,
}

/// Largest `dt` allowed by `dt (V^2 + ||a1|| + ||a2||) <= 1`.
pub fn step_restriction(problem: &ProblemData, grid: &Grid, tg: &TimeGrid) -> f64 {
    let vbar = problem.v_bound.unwrap_or(problem.bounds.m);
    let a1 = problem.a1.tabulate(grid, tg).sup_abs();
    let a2 = problem.a2.tabulate(grid, tg).sup_abs();
    1.0 / (vbar * vbar + a1 + a2)
}

pub fn solve_forward(problem: &ProblemData, grid: &Grid, tg: &TimeGrid) -> Result<Trajectory, ForwardError> {
    solve_forward_until(problem, grid, tg, tg.levels() - 1)
}

/// Integrates up to and including level `last`.
pub fn solve_forward_until(
    problem: &ProblemData,
    grid: &Grid,
    tg: &TimeGrid,
    last: usize,
) -> Result<Trajectory, ForwardError> {
    problem.validate(grid, tg)?;
    if last >= tg.levels() {
        return Err(ForwardError::Window {
            lo: 0,
            hi: last,
            levels: tg.levels(),
        });
    }
    let required = step_restriction(problem, grid, tg);
    if tg.dt() > required * (1.0 + 1e-12) {
        return Err(ForwardError::StepRestriction { dt: tg.dt(), required });
    }
    let scale = problem.u0.iter().chain(&problem.v0).fold(1.0f64, |m, x| m.max(x.abs()));
    let defect = problem.compatibility_defect(grid);
    if defect > 1e-9 * scale {
        return Err(ForwardError::Incompatible(defect));
    }

    let dt = tg.dt();
    let a1 = problem.a1.tabulate(grid, tg);
    let a2 = problem.a2.tabulate(grid, tg);
    let r = problem.r.tabulate(grid, tg);
    let g = problem.g.tabulate(grid, tg);
    let h = problem.h.tabulate(grid, tg);
    let s1 = DiffusionSolver::new(grid, dt * problem.d1);
    let s2 = DiffusionSolver::new(grid, dt * problem.d2);
    let boundary = grid.boundary_indices();
    let interior = grid.interior_indices();

    let mut us = Vec::with_capacity(last + 1);
    let mut vs = Vec::with_capacity(last + 1);
    us.push(problem.u0.clone());
    vs.push(problem.v0.clone());
    for n in 0..last {
        let (u, v) = (&us[n], &vs[n]);
        let (a1n, a2n, rn) = (a1.at(n), a2.at(n), r.at(n));
        let mut un = vec![0.0; grid.len()];
        let mut vn = vec![0.0; grid.len()];
        for &k in &interior {
            let uvv = u[k] * v[k] * v[k];
            un[k] = u[k] + dt * (-uvv - a1n[k] * u[k] + rn[k] * problem.f[k]);
            vn[k] = v[k] + dt * (uvv - a2n[k] * v[k]);
        }
        for &k in &boundary {
            un[k] = g.at(n + 1)[k];
            vn[k] = h.at(n + 1)[k];
        }
        s1.solve(&mut un);
        s2.solve(&mut vn);
        if un.iter().chain(&vn).any(|x| !x.is_finite()) {
            return Err(ForwardError::NonFinite(n + 1));
        }
        us.push(un);
        vs.push(vn);
    }
    Ok(Trajectory {
        grid: grid.clone(),
        time: tg.clone(),
        u: us,
        v: vs,
        scheme: SCHEME.to_string(),
    })
}

/// The linear system satisfied by `(y, z)`:
/// `y_t = d1 Lap y + p1 y + p2 z + R F`, `z_t = d2 Lap z + p3 z + p4 y`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearizedSystem {
    pub d1: f64,
    pub d2: f64,
    pub p: PCoefficients,
    pub r: SampledCoefficient,
}

impl LinearizedSystem {
    /// Tangent system of `problem` about `traj` on the levels `lo..=hi`.
    pub fn tangent(problem: &ProblemData, traj: &Trajectory, lo: usize, hi: usize) -> Result<Self, ModelError> {
        Self::between(problem, traj, traj, lo, hi)
    }

    /// Exact difference system for two trajectories of `problem` with
    /// different sources.
    pub fn between(
        problem: &ProblemData,
        traj: &Trajectory,
        tilde: &Trajectory,
        lo: usize,
        hi: usize,
    ) -> Result<Self, ModelError> {
        let a1 = problem.a1.tabulate(&traj.grid, &traj.time);
        let a2 = problem.a2.tabulate(&traj.grid, &traj.time);
        Ok(LinearizedSystem {
            d1: problem.d1,
            d2: problem.d2,
            p: PCoefficients::from_pair(traj, tilde, &a1, &a2, lo, hi)?,
            r: problem.r.tabulate(&traj.grid, &traj.time),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearizedTrajectory {
    pub window: Window,
    /// `y[n - lo]`, zero on the boundary.
    pub y: Vec<Vec<f64>>,
    pub z: Vec<Vec<f64>>,
    pub forcing: Vec<f64>,
}

impl LinearizedTrajectory {
    pub fn y_at(&self, level: usize) -> &[f64] {
        &self.y[level - self.window.lo]
    }

    pub fn z_at(&self, level: usize) -> &[f64] {
        &self.z[level - self.window.lo]
    }
}

fn check_window(sys: &LinearizedSystem, tg: &TimeGrid, window: Window) -> Result<(), ForwardError> {
    let err = ForwardError::Window {
        lo: window.lo,
        hi: window.hi,
        levels: tg.levels(),
    };
    if window.hi >= tg.levels() || window.lo > window.hi {
        return Err(err);
    }
    if window.hi > window.lo && (window.lo < sys.p.lo || window.hi - 1 > sys.p.hi()) {
        return Err(err);
    }
    Ok(())
}

/// Zero initial and boundary data at `window.lo`, marched to `window.hi`.
pub fn solve_linearized(
    sys: &LinearizedSystem,
    forcing: &[f64],
    grid: &Grid,
    tg: &TimeGrid,
    window: Window,
) -> Result<LinearizedTrajectory, ForwardError> {
    grid.check_len(forcing).map_err(|e| ModelError::Shape(e.to_string()))?;
    check_window(sys, tg, window)?;
    let dt = tg.dt();
    let s1 = DiffusionSolver::new(grid, dt * sys.d1);
    let s2 = DiffusionSolver::new(grid, dt * sys.d2);
    let interior = grid.interior_indices();
    let mut ys = vec![vec![0.0; grid.len()]];
    let mut zs = vec![vec![0.0; grid.len()]];
    for n in window.lo..window.hi {
        let p = sys.p.at(n);
        let rn = sys.r.at(n);
        let (y, z) = (ys.last().unwrap(), zs.last().unwrap());
        let mut yn = vec![0.0; grid.len()];
        let mut zn = vec![0.0; grid.len()];
        for &k in &interior {
            yn[k] = y[k] + dt * (p.p1[k] * y[k] + p.p2[k] * z[k] + rn[k] * forcing[k]);
            zn[k] = z[k] + dt * (p.p3[k] * z[k] + p.p4[k] * y[k]);
        }
        s1.solve(&mut yn);
        s2.solve(&mut zn);
        if yn.iter().chain(&zn).any(|x| !x.is_finite()) {
            return Err(ForwardError::NonFinite(n + 1));
        }
        ys.push(yn);
        zs.push(zn);
    }
    Ok(LinearizedTrajectory {
        window,
        y: ys,
        z: zs,
        forcing: forcing.to_vec(),
    })
}

/// Result of the backward sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjointSolution {
    pub window: Window,
    /// Adjoint states `mu[n - lo]`.
    pub mu_y: Vec<Vec<f64>>,
    pub mu_z: Vec<Vec<f64>>,
    /// Euclidean gradient of `F -> sum_n <G_y^n, y^n> + <G_z^n, z^n>`.
    pub gradient: Vec<f64>,
}

/// Transpose of the map `F -> (y, z)` of [`solve_linearized`], applied to the
/// per-level weights `(gy, gz)` (indexed `n - lo`).
pub fn solve_adjoint(
    sys: &LinearizedSystem,
    gy: &[Vec<f64>],
    gz: &[Vec<f64>],
    grid: &Grid,
    tg: &TimeGrid,
    window: Window,
) -> Result<AdjointSolution, ForwardError> {
    check_window(sys, tg, window)?;
    if gy.len() != window.len() || gz.len() != window.len() {
        return Err(ModelError::Shape(format!(
            "adjoint data must have {} levels, got {} and {}",
            window.len(),
            gy.len(),
            gz.len()
        ))
        .into());
    }
    let dt = tg.dt();
    let s1 = DiffusionSolver::new(grid, dt * sys.d1);
    let s2 = DiffusionSolver::new(grid, dt * sys.d2);
    let interior = grid.interior_indices();
    let restrict = |g: &[f64]| {
        let mut out = vec![0.0; grid.len()];
        for &k in &interior {
            out[k] = g[k];
        }
        out
    };
    let m = window.len();
    let mut mu_y = vec![Vec::new(); m];
    let mut mu_z = vec![Vec::new(); m];
    mu_y[m - 1] = restrict(&gy[m - 1]);
    mu_z[m - 1] = restrict(&gz[m - 1]);
    let mut gradient = vec![0.0; grid.len()];
    for n in (window.lo..window.hi).rev() {
        let i = n - window.lo;
        let mut phi_y = mu_y[i + 1].clone();
        let mut phi_z = mu_z[i + 1].clone();
        s1.solve(&mut phi_y);
        s2.solve(&mut phi_z);
        let p = sys.p.at(n);
        let rn = sys.r.at(n);
        let mut my = vec![0.0; grid.len()];
        let mut mz = vec![0.0; grid.len()];
        for &k in &interior {
            my[k] = gy[i][k] + (1.0 + dt * p.p1[k]) * phi_y[k] + dt * p.p4[k] * phi_z[k];
            mz[k] = gz[i][k] + dt * p.p2[k] * phi_y[k] + (1.0 + dt * p.p3[k]) * phi_z[k];
            gradient[k] += dt * rn[k] * phi_y[k];
        }
        if my.iter().chain(&mz).any(|x| !x.is_finite()) {
            return Err(ForwardError::NonFinite(n));
        }
        mu_y[i] = my;
        mu_z[i] = mz;
    }
    Ok(AdjointSolution {
        window,
        mu_y,
        mu_z,
        gradient,
    })
}

/// Steady profiles with closed-form Laplacians. On a rectangle the 1D
/// profiles become tensor products, `S = sin(pi x/Lx) sin(pi y/Ly)` and
/// `C = cos(pi x/Lx) cos(pi y/Ly)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Profile {
    /// `u* = u`, `v* = v`.
    Constant { u: f64, v: f64 },
    /// `u* = 1 + S/2`, `v* = v`.
    SineWater { v: f64 },
    /// `u* = 1 + S/2`, `v* = 2 + C/2`.
    Standard,
    /// `u* = S`, `v* = 2 - C2/2` with `C2` at doubled frequency; the source
    /// vanishes on the boundary.
    Hump,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ManufacturedSpec {
    pub profile: Profile,
    pub d1: f64,
    pub d2: f64,
    pub a1: f64,
}

impl Default for ManufacturedSpec {
    fn default() -> Self {
        ManufacturedSpec {
            profile: Profile::Standard,
            d1: 1.0,
            d2: 0.5,
            a1: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manufactured {
    pub problem: ProblemData,
    pub exact_u: Vec<f64>,
    pub exact_v: Vec<f64>,
    pub exact_f: Vec<f64>,
    pub exact_a2: Vec<f64>,
}

/// Builds a time-independent exact pair and the `f`, `a2` that make both
/// equations hold with zero time derivative.
pub fn make_manufactured(grid: &Grid, spec: &ManufacturedSpec) -> Result<Manufactured, ForwardError> {
    let lx = grid.extent(0);
    let ly = if grid.dim() == 2 { grid.extent(1) } else { 0.0 };
    let kappa = PI * PI * (1.0 / (lx * lx) + if grid.dim() == 2 { 1.0 / (ly * ly) } else { 0.0 });
    let wave = |x: f64, y: f64, freq: f64, trig: fn(f64) -> f64| {
        let yfac = if grid.dim() == 2 { trig(freq * PI * y / ly) } else { 1.0 };
        trig(freq * PI * x / lx) * yfac
    };
    let n = grid.len();
    let (mut u, mut lu, mut v, mut lv) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for k in 0..n {
        let [x, y] = grid.coord(k);
        let s = wave(x, y, 1.0, f64::sin);
        let c = wave(x, y, 1.0, f64::cos);
        let c2 = wave(x, y, 2.0, f64::cos);
        (u[k], lu[k], v[k], lv[k]) = match spec.profile {
            Profile::Constant { u, v } => (u, 0.0, v, 0.0),
            Profile::SineWater { v } => (1.0 + s / 2.0, -kappa * s / 2.0, v, 0.0),
            Profile::Standard => (1.0 + s / 2.0, -kappa * s / 2.0, 2.0 + c / 2.0, -kappa * c / 2.0),
            Profile::Hump => (s, -kappa * s, 2.0 - c2 / 2.0, 2.0 * kappa * c2),
        };
    }
    if v.iter().any(|&x| x <= 0.0) {
        return Err(ForwardError::Manufactured(
            "v* must be positive on the closed domain".into(),
        ));
    }
    let mut f = vec![0.0; n];
    let mut a2 = vec![0.0; n];
    for k in 0..n {
        let uvv = u[k] * v[k] * v[k];
        f[k] = -spec.d1 * lu[k] + uvv + spec.a1 * u[k];
        a2[k] = (spec.d2 * lv[k] + uvv) / v[k];
    }
    if let Some(k) = a2.iter().position(|&x| x < -1e-14) {
        return Err(ForwardError::Manufactured(format!(
            "a2 = {:.3e} < 0 at x = {:?}; reduce d2",
            a2[k],
            grid.coord(k)
        )));
    }
    for x in a2.iter_mut() {
        *x = x.max(0.0);
    }
    let sup = |w: &[f64]| w.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let grad = |w: &[f64]| {
        crate::domain::gradient_magnitude(w, grid)
            .into_iter()
            .fold(0.0, f64::max)
    };
    let f_l2 = crate::domain::l2_norm(&f, None, grid).expect("grid-sized");
    let m = 2.0 * (sup(&u) + grad(&u) + sup(&v) + grad(&v) + f_l2);
    let m0 = 2.0 * (spec.a1.abs() + sup(&a2)).max(1e-3);
    let problem = ProblemData {
        d1: spec.d1,
        d2: spec.d2,
        a1: Coefficient::Constant(spec.a1),
        a2: Coefficient::spatial(a2.clone()),
        f: f.clone(),
        r: Coefficient::Constant(1.0),
        g: Coefficient::spatial(u.clone()),
        h: Coefficient::spatial(v.clone()),
        u0: u.clone(),
        v0: v.clone(),
        bounds: AdmissibilityBounds::new(m, m0)?,
        v_bound: Some(1.25 * sup(&v)),
    };
    Ok(Manufactured {
        problem,
        exact_u: u,
        exact_v: v,
        exact_f: f,
        exact_a2: a2,
    })
}
