//! Measurement sets, discrete time-derivative stacks, the data functionals
//! and seeded noise.
//!
//! All time-resolved data live on the union window
//! `[t0 - max(delta, delta0), t0 + max(delta, delta0)]`, so one set serves
//! both the Lipschitz window `I` and the Hölder window `I0`. Observed
//! components keep a raw block on `omega` dilated by one cell and padded by
//! one time level on each side; every derivative stack is recomputed from it.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{
    diff2_axis, diff_axis, dilate, Grid, MaskRole, SubdomainMask, Subdomains, TimeGrid, TimeSpec, Window,
};
use crate::forward::Trajectory;

#[derive(Debug, Error)]
pub enum MeasureError {
    #[error("{component} is not part of a {variant} measurement set")]
    Absent { component: &'static str, variant: Variant },
    #[error("{0} measurement requires the source on omega")]
    MissingSource(Variant),
    #[error("window [{lo}, {hi}] must stay at least two steps inside [0, {last}]")]
    WindowPlacement { lo: usize, hi: usize, last: usize },
    #[error("measurement sets have different supports: {0}")]
    Support(String),
    #[error("noise level must be nonnegative, got {0}")]
    NegativeNoise(f64),
    #[error("invalid measurement directory: {0}")]
    Manifest(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    M1,
    M2,
    M3,
    M4,
}

impl Variant {
    fn needs(self) -> (bool, bool, bool, bool) {
        // (snapshot_v, u_window, v_window, f_on_omega)
        match self {
            Variant::M1 => (false, true, true, false),
            Variant::M2 => (false, false, true, false),
            Variant::M3 => (false, true, false, true),
            Variant::M4 => (true, true, false, false),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "M1" => Ok(Variant::M1),
            "M2" => Ok(Variant::M2),
            "M3" => Ok(Variant::M3),
            "M4" => Ok(Variant::M4),
            other => Err(format!("unknown measurement variant `{other}` (expected M1..M4)")),
        }
    }
}

/// Primitive samples on `points` for the levels `lo..lo + values.len()`.
#[derive(Debug, Clone, PartialEq)]
pub struct RawBlock {
    pub points: Vec<usize>,
    pub lo: usize,
    pub values: Vec<Vec<f64>>,
}

/// Time-resolved restriction to `omega x window`, `[n - window.lo][j]` with
/// `j` running over the omega points.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowStack {
    pub values: Vec<Vec<f64>>,
    pub dt: Vec<Vec<f64>>,
    pub dtt: Vec<Vec<f64>>,
    /// Spatial Laplacian, available when neighbours were observed.
    pub lap: Option<Vec<Vec<f64>>>,
    pub raw: Option<RawBlock>,
}

impl WindowStack {
    /// Stacks derived from a raw block by centred stencils.
    pub fn from_raw(raw: RawBlock, omega: &[usize], grid: &Grid, window: Window, dt: f64) -> Self {
        let mut col = vec![usize::MAX; grid.len()];
        for (j, &k) in raw.points.iter().enumerate() {
            col[k] = j;
        }
        let at = |n: usize, k: usize| raw.values[n - raw.lo][col[k]];
        let mut st = WindowStack {
            values: Vec::new(),
            dt: Vec::new(),
            dtt: Vec::new(),
            lap: Some(Vec::new()),
            raw: None,
        };
        for n in window.levels() {
            st.values.push(omega.iter().map(|&k| at(n, k)).collect());
            st.dt.push(
                omega
                    .iter()
                    .map(|&k| (at(n + 1, k) - at(n - 1, k)) / (2.0 * dt))
                    .collect(),
            );
            st.dtt.push(
                omega
                    .iter()
                    .map(|&k| (at(n + 1, k) - 2.0 * at(n, k) + at(n - 1, k)) / (dt * dt))
                    .collect(),
            );
            let lap: Vec<f64> = omega
                .iter()
                .map(|&k| {
                    (0..grid.dim())
                        .map(|a| {
                            let (p, q) = grid.axis_neighbors(k, a);
                            let (p, q) = (p.expect("omega is interior"), q.expect("omega is interior"));
                            (at(n, p) - 2.0 * at(n, k) + at(n, q)) / (grid.h(a) * grid.h(a))
                        })
                        .sum()
                })
                .collect();
            st.lap.as_mut().unwrap().push(lap);
        }
        st.raw = Some(raw);
        st
    }

    /// Stacks from window values alone; second-order one-sided stencils at
    /// the two ends of the window.
    pub fn from_values(values: Vec<Vec<f64>>, dt: f64) -> Self {
        let m = values.len();
        let np = values.first().map_or(0, Vec::len);
        let mut d1 = vec![vec![0.0; np]; m];
        let mut d2 = vec![vec![0.0; np]; m];
        for j in 0..np {
            let a = |n: usize| values[n][j];
            for n in 0..m {
                d1[n][j] = if m < 3 {
                    if m == 2 {
                        (a(1) - a(0)) / dt
                    } else {
                        0.0
                    }
                } else if n == 0 {
                    (-3.0 * a(0) + 4.0 * a(1) - a(2)) / (2.0 * dt)
                } else if n == m - 1 {
                    (3.0 * a(n) - 4.0 * a(n - 1) + a(n - 2)) / (2.0 * dt)
                } else {
                    (a(n + 1) - a(n - 1)) / (2.0 * dt)
                };
                d2[n][j] = if m < 4 {
                    if m == 3 {
                        (a(2) - 2.0 * a(1) + a(0)) / (dt * dt)
                    } else {
                        0.0
                    }
                } else if n == 0 {
                    (2.0 * a(0) - 5.0 * a(1) + 4.0 * a(2) - a(3)) / (dt * dt)
                } else if n == m - 1 {
                    (2.0 * a(n) - 5.0 * a(n - 1) + 4.0 * a(n - 2) - a(n - 3)) / (dt * dt)
                } else {
                    (a(n + 1) - 2.0 * a(n) + a(n - 1)) / (dt * dt)
                };
            }
        }
        WindowStack {
            values,
            dt: d1,
            dtt: d2,
            lap: None,
            raw: None,
        }
    }

    /// Time-independent field with known Laplacian.
    pub fn steady(values: &[f64], lap: &[f64], omega: &[usize], levels: usize) -> Self {
        let v: Vec<f64> = omega.iter().map(|&k| values[k]).collect();
        let l: Vec<f64> = omega.iter().map(|&k| lap[k]).collect();
        let zero = vec![0.0; omega.len()];
        WindowStack {
            values: vec![v; levels],
            dt: vec![zero.clone(); levels],
            dtt: vec![zero; levels],
            lap: Some(vec![l; levels]),
            raw: None,
        }
    }

    fn sup_abs(&self) -> f64 {
        match &self.raw {
            Some(r) => r.values.iter().flatten().fold(0.0f64, |m, x| m.max(x.abs())),
            None => self.values.iter().flatten().fold(0.0f64, |m, x| m.max(x.abs())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseDescriptor {
    pub level: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSet {
    pub variant: Variant,
    pub grid: Grid,
    pub subdomains: Subdomains,
    pub time: TimeGrid,
    /// Union of the Lipschitz and Hölder windows.
    pub window: Window,
    pub omega_points: Vec<usize>,
    pub snapshot_u: Vec<f64>,
    pub snapshot_v: Option<Vec<f64>>,
    pub u_window: Option<WindowStack>,
    pub v_window: Option<WindowStack>,
    pub f_on_omega: Option<Vec<f64>>,
    pub noise: Option<NoiseDescriptor>,
}

/// Union of `t0 ± delta` and `t0 ± delta0`.
pub fn data_window(tg: &TimeGrid) -> Window {
    let half = tg.delta_steps().max(tg.delta0_steps());
    Window {
        lo: tg.t0_index() - half,
        hi: tg.t0_index() + half,
    }
}

impl MeasurementSet {
    pub fn u_window(&self) -> Result<&WindowStack, MeasureError> {
        self.u_window.as_ref().ok_or(MeasureError::Absent {
            component: "u_on_window",
            variant: self.variant,
        })
    }

    pub fn v_window(&self) -> Result<&WindowStack, MeasureError> {
        self.v_window.as_ref().ok_or(MeasureError::Absent {
            component: "v_on_window",
            variant: self.variant,
        })
    }

    pub fn snapshot_v(&self) -> Result<&[f64], MeasureError> {
        self.snapshot_v.as_deref().ok_or(MeasureError::Absent {
            component: "snapshot_v",
            variant: self.variant,
        })
    }

    pub fn f_on_omega(&self) -> Result<&[f64], MeasureError> {
        self.f_on_omega.as_deref().ok_or(MeasureError::Absent {
            component: "f_on_omega",
            variant: self.variant,
        })
    }

    /// Checks that exactly the components of the variant are present.
    pub fn validate(&self) -> Result<(), MeasureError> {
        let (sv, uw, vw, f) = self.variant.needs();
        let have = [
            ("snapshot_v", sv, self.snapshot_v.is_some()),
            ("u_on_window", uw, self.u_window.is_some()),
            ("v_on_window", vw, self.v_window.is_some()),
            ("f_on_omega", f, self.f_on_omega.is_some()),
        ];
        for (name, need, has) in have {
            if need != has {
                return Err(MeasureError::Manifest(format!(
                    "{} set {} {name}",
                    self.variant,
                    if need { "is missing" } else { "must not carry" }
                )));
            }
        }
        if self.snapshot_u.len() != self.grid.len() {
            return Err(MeasureError::Manifest("snapshot_u has the wrong length".into()));
        }
        for st in [&self.u_window, &self.v_window].into_iter().flatten() {
            let ok = st.values.len() == self.window.len()
                && st.dt.len() == self.window.len()
                && st.dtt.len() == self.window.len()
                && st.values.iter().all(|r| r.len() == self.omega_points.len());
            if !ok {
                return Err(MeasureError::Manifest("window stack shape mismatch".into()));
            }
        }
        Ok(())
    }

    /// Same data relabelled as another variant after components have been
    /// synthesized.
    pub fn relabel(mut self, variant: Variant) -> Result<Self, MeasureError> {
        let (sv, uw, vw, f) = variant.needs();
        if !sv {
            self.snapshot_v = None;
        }
        if !f {
            self.f_on_omega = None;
        }
        if !uw {
            self.u_window = None;
        }
        if !vw {
            self.v_window = None;
        }
        self.variant = variant;
        self.validate()?;
        Ok(self)
    }

    /// Steady data built from analytic fields: time derivatives vanish and
    /// Laplacians are supplied.
    #[allow(clippy::too_many_arguments)]
    pub fn steady(
        variant: Variant,
        grid: &Grid,
        subdomains: &Subdomains,
        tg: &TimeGrid,
        u: (&[f64], &[f64]),
        v: (&[f64], &[f64]),
        f: Option<&[f64]>,
    ) -> Result<Self, MeasureError> {
        let window = data_window(tg);
        let omega = subdomains.omega.indices();
        let (sv, uw, vw, needf) = variant.needs();
        if needf && f.is_none() {
            return Err(MeasureError::MissingSource(variant));
        }
        let ms = MeasurementSet {
            variant,
            grid: grid.clone(),
            subdomains: subdomains.clone(),
            time: tg.clone(),
            window,
            snapshot_u: u.0.to_vec(),
            snapshot_v: sv.then(|| v.0.to_vec()),
            u_window: uw.then(|| WindowStack::steady(u.0, u.1, &omega, window.len())),
            v_window: vw.then(|| WindowStack::steady(v.0, v.1, &omega, window.len())),
            f_on_omega: if needf {
                f.map(|f| omega.iter().map(|&k| f[k]).collect())
            } else {
                None
            },
            omega_points: omega,
            noise: None,
        };
        ms.validate()?;
        Ok(ms)
    }

    fn rederive(&mut self) {
        let dt = self.time.dt();
        for st in [&mut self.u_window, &mut self.v_window].into_iter().flatten() {
            *st = match st.raw.take() {
                Some(raw) => WindowStack::from_raw(raw, &self.omega_points, &self.grid, self.window, dt),
                None => WindowStack::from_values(std::mem::take(&mut st.values), dt),
            };
        }
    }
}

/// Extracts the components of `variant` from a trajectory.
pub fn observe(
    traj: &Trajectory,
    variant: Variant,
    subdomains: &Subdomains,
    f: Option<&[f64]>,
) -> Result<MeasurementSet, MeasureError> {
    let tg = &traj.time;
    let window = data_window(tg);
    let last = traj.levels() - 1;
    if window.lo < 2 || window.hi + 2 > last {
        return Err(MeasureError::WindowPlacement {
            lo: window.lo,
            hi: window.hi,
            last,
        });
    }
    let (sv, uw, vw, needf) = variant.needs();
    if needf && f.is_none() {
        return Err(MeasureError::MissingSource(variant));
    }
    let grid = &traj.grid;
    let omega = subdomains.omega.indices();
    let halo: Vec<usize> = dilate(subdomains.omega.as_slice(), grid)
        .iter()
        .enumerate()
        .filter_map(|(k, &b)| b.then_some(k))
        .collect();
    let block = |data: &[Vec<f64>]| RawBlock {
        points: halo.clone(),
        lo: window.lo - 1,
        values: (window.lo - 1..=window.hi + 1)
            .map(|n| halo.iter().map(|&k| data[n][k]).collect())
            .collect(),
    };
    let t0 = tg.t0_index();
    let ms = MeasurementSet {
        variant,
        grid: grid.clone(),
        subdomains: subdomains.clone(),
        time: tg.clone(),
        window,
        snapshot_u: traj.u[t0].clone(),
        snapshot_v: sv.then(|| traj.v[t0].clone()),
        u_window: uw.then(|| WindowStack::from_raw(block(&traj.u), &omega, grid, window, tg.dt())),
        v_window: vw.then(|| WindowStack::from_raw(block(&traj.v), &omega, grid, window, tg.dt())),
        f_on_omega: if needf {
            f.map(|f| omega.iter().map(|&k| f[k]).collect())
        } else {
            None
        },
        omega_points: omega,
        noise: None,
    };
    ms.validate()?;
    Ok(ms)
}

/// Uniform noise of amplitude `level * ||component||_inf` on every primitive
/// component; derivative stacks are recomputed afterwards.
pub fn add_noise(ms: &MeasurementSet, level: f64, seed: u64) -> Result<MeasurementSet, MeasureError> {
    if !(level >= 0.0) {
        return Err(MeasureError::NegativeNoise(level));
    }
    if level == 0.0 {
        return Ok(ms.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut perturb = |values: &mut [f64], amp: f64| {
        for x in values.iter_mut() {
            *x += amp * rng.random_range(-1.0..=1.0);
        }
    };
    let sup = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let mut out = ms.clone();
    let amp = level * sup(&out.snapshot_u);
    perturb(&mut out.snapshot_u, amp);
    if let Some(s) = out.snapshot_v.as_mut() {
        let amp = level * sup(s);
        perturb(s, amp);
    }
    for st in [&mut out.u_window, &mut out.v_window].into_iter().flatten() {
        let amp = level * st.sup_abs();
        match st.raw.as_mut() {
            Some(raw) => raw.values.iter_mut().for_each(|l| perturb(l, amp)),
            None => {
                st.values.iter_mut().for_each(|l| perturb(l, amp));
                st.lap = None;
            }
        }
    }
    if let Some(f) = out.f_on_omega.as_mut() {
        let amp = level * sup(f);
        perturb(f, amp);
    }
    out.rederive();
    out.noise = Some(NoiseDescriptor { level, seed });
    Ok(out)
}

/// Discrete `H^2` norm: value, gradient and every second derivative
/// (both mixed orderings in 2D), trapezoid weighted.
pub fn h2_norm(w: &[f64], grid: &Grid) -> f64 {
    let q = grid.quadrature_weights(None);
    let mut parts: Vec<Vec<f64>> = vec![w.to_vec()];
    let first: Vec<Vec<f64>> = (0..grid.dim()).map(|a| diff_axis(w, grid, a)).collect();
    for a in 0..grid.dim() {
        parts.push(diff2_axis(w, grid, a));
    }
    if grid.dim() == 2 {
        let mixed = diff_axis(&first[0], grid, 1);
        parts.push(mixed.clone());
        parts.push(mixed);
    }
    parts.extend(first);
    parts
        .iter()
        .map(|p| p.iter().zip(&q).map(|(x, w)| w * x * x).sum::<f64>())
        .sum::<f64>()
        .sqrt()
}

fn same_support(a: &MeasurementSet, b: &MeasurementSet) -> Result<(), MeasureError> {
    if a.grid != b.grid {
        return Err(MeasureError::Support("grids differ".into()));
    }
    if a.omega_points != b.omega_points {
        return Err(MeasureError::Support("omega differs".into()));
    }
    if a.window != b.window || a.time != b.time {
        return Err(MeasureError::Support("time windows differ".into()));
    }
    Ok(())
}

/// Space-time weights for `omega x sub` where `sub` lies inside the data
/// window.
fn omega_weights(ms: &MeasurementSet, sub: Window) -> (Vec<f64>, Vec<f64>) {
    let q = ms.grid.quadrature_weights(Some(ms.subdomains.omega.as_slice()));
    let wx = ms.omega_points.iter().map(|&k| q[k]).collect();
    (wx, sub.quadrature_weights(ms.time.dt()))
}

fn stack_sq(a: &[Vec<f64>], b: &[Vec<f64>], offset: usize, wx: &[f64], wt: &[f64]) -> f64 {
    wt.iter()
        .enumerate()
        .map(|(i, w)| {
            let (ra, rb) = (&a[offset + i], &b[offset + i]);
            w * ra
                .iter()
                .zip(rb)
                .zip(wx)
                .map(|((x, y), q)| q * (x - y) * (x - y))
                .sum::<f64>()
        })
        .sum()
}

/// `D1^2 = sum_{l=0,1} ||d_t^l (u - u~)||^2 + ||d_t^l (v - v~)||^2` over
/// `omega x I`.
pub fn functional_d1(ms: &MeasurementSet, other: &MeasurementSet) -> Result<f64, MeasureError> {
    same_support(ms, other)?;
    let sub = ms.time.lipschitz_window();
    let offset = sub.lo - ms.window.lo;
    let (wx, wt) = omega_weights(ms, sub);
    let mut acc = 0.0;
    for (a, b) in [(ms.u_window()?, other.u_window()?), (ms.v_window()?, other.v_window()?)] {
        acc += stack_sq(&a.values, &b.values, offset, &wx, &wt);
        acc += stack_sq(&a.dt, &b.dt, offset, &wx, &wt);
    }
    Ok(acc.sqrt())
}

/// `||u(t0) - u~(t0)||_{H^2}`.
pub fn functional_d2(ms: &MeasurementSet, other: &MeasurementSet) -> Result<f64, MeasureError> {
    if ms.grid != other.grid {
        return Err(MeasureError::Support("grids differ".into()));
    }
    let d: Vec<f64> = ms
        .snapshot_u
        .iter()
        .zip(&other.snapshot_u)
        .map(|(a, b)| a - b)
        .collect();
    Ok(h2_norm(&d, &ms.grid))
}

/// Sum of squares over `omega x I0` of the value, first and second time
/// derivative differences, plus the squared snapshot difference on the
/// whole domain.
pub fn functional_b(ms: &MeasurementSet, other: &MeasurementSet) -> Result<f64, MeasureError> {
    same_support(ms, other)?;
    let sub = ms.time.holder_window();
    let offset = sub.lo - ms.window.lo;
    let (wx, wt) = omega_weights(ms, sub);
    let mut acc = 0.0;
    for (a, b) in [(ms.u_window()?, other.u_window()?), (ms.v_window()?, other.v_window()?)] {
        acc += stack_sq(&a.values, &b.values, offset, &wx, &wt);
        acc += stack_sq(&a.dt, &b.dt, offset, &wx, &wt);
        acc += stack_sq(&a.dtt, &b.dtt, offset, &wx, &wt);
    }
    let q = ms.grid.quadrature_weights(None);
    acc += ms
        .snapshot_u
        .iter()
        .zip(&other.snapshot_u)
        .zip(&q)
        .map(|((a, b), w)| w * (a - b) * (a - b))
        .sum::<f64>();
    Ok(acc)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DataFunctionals {
    pub d1: f64,
    pub d2: f64,
    pub b: f64,
}

pub fn data_functionals(ms: &MeasurementSet, other: &MeasurementSet) -> Result<DataFunctionals, MeasureError> {
    Ok(DataFunctionals {
        d1: functional_d1(ms, other)?,
        d2: functional_d2(ms, other)?,
        b: functional_b(ms, other)?,
    })
}

/// Parts of the a priori quantity `N` for the difference of two
/// trajectories; `total` is their sum.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct NReport {
    /// Normal derivatives on the boundary.
    pub boundary_normal: f64,
    /// Tangential and time derivatives on the boundary.
    pub boundary_trace: f64,
    /// Spatial gradients on the slices `t0 ± delta0`.
    pub endpoint: f64,
    pub total: f64,
}

/// Boundary pieces: `(points, weights, normal axis, tangential axis)`.
fn boundary_edges(grid: &Grid) -> Vec<(Vec<usize>, Vec<f64>, usize, Option<usize>)> {
    let (nx, ny) = (grid.n(0), grid.n(1));
    if grid.dim() == 1 {
        return vec![(vec![0], vec![1.0], 0, None), (vec![nx - 1], vec![1.0], 0, None)];
    }
    let edge_w = |len: usize, h: f64| -> Vec<f64> {
        (0..len)
            .map(|i| if i == 0 || i + 1 == len { 0.5 * h } else { h })
            .collect()
    };
    vec![
        (
            (0..nx).map(|i| grid.index(i, 0)).collect(),
            edge_w(nx, grid.h(0)),
            1,
            Some(0),
        ),
        (
            (0..nx).map(|i| grid.index(i, ny - 1)).collect(),
            edge_w(nx, grid.h(0)),
            1,
            Some(0),
        ),
        (
            (0..ny).map(|j| grid.index(0, j)).collect(),
            edge_w(ny, grid.h(1)),
            0,
            Some(1),
        ),
        (
            (0..ny).map(|j| grid.index(nx - 1, j)).collect(),
            edge_w(ny, grid.h(1)),
            0,
            Some(1),
        ),
    ]
}

pub fn functional_n(traj: &Trajectory, tilde: &Trajectory) -> Result<NReport, MeasureError> {
    if traj.grid != tilde.grid || traj.time != tilde.time || traj.levels() != tilde.levels() {
        return Err(MeasureError::Support("trajectories live on different grids".into()));
    }
    let grid = &traj.grid;
    let tg = &traj.time;
    let dt = tg.dt();
    let i0 = tg.holder_window();
    let last = traj.levels() - 1;
    if i0.lo < 2 || i0.hi + 2 > last {
        return Err(MeasureError::WindowPlacement {
            lo: i0.lo,
            hi: i0.hi,
            last,
        });
    }
    let diff =
        |a: &[Vec<f64>], b: &[Vec<f64>], n: usize| -> Vec<f64> { a[n].iter().zip(&b[n]).map(|(x, y)| x - y).collect() };
    // d_t^k of the difference at level n, centred
    let dk = |a: &[Vec<f64>], b: &[Vec<f64>], n: usize, k: usize| -> Vec<f64> {
        if k == 0 {
            diff(a, b, n)
        } else {
            let (p, q) = (diff(a, b, n + 1), diff(a, b, n - 1));
            p.iter().zip(&q).map(|(x, y)| (x - y) / (2.0 * dt)).collect()
        }
    };
    let edges = boundary_edges(grid);
    let wt = i0.quadrature_weights(dt);
    let q = grid.quadrature_weights(None);
    let mut rep = NReport::default();
    for (a, b) in [(&traj.u, &tilde.u), (&traj.v, &tilde.v)] {
        for k in 0..2 {
            for (i, n) in i0.levels().enumerate() {
                let w = dk(a, b, n, k);
                let wp = dk(a, b, n + 1, k);
                let wm = dk(a, b, n - 1, k);
                for (pts, ew, normal, tangent) in &edges {
                    let dn = diff_axis(&w, grid, *normal);
                    let dtan = tangent.map(|t| diff_axis(&w, grid, t));
                    for (j, &p) in pts.iter().enumerate() {
                        let dtime = (wp[p] - wm[p]) / (2.0 * dt);
                        let tan = dtan.as_ref().map_or(0.0, |d| d[p]);
                        rep.boundary_normal += wt[i] * ew[j] * dn[p] * dn[p];
                        rep.boundary_trace += wt[i] * ew[j] * (tan * tan + dtime * dtime);
                    }
                }
            }
            for n in [i0.lo, i0.hi] {
                let w = dk(a, b, n, k);
                for axis in 0..grid.dim() {
                    let d = diff_axis(&w, grid, axis);
                    rep.endpoint += d.iter().zip(&q).map(|(x, w)| w * x * x).sum::<f64>();
                }
            }
        }
    }
    rep.total = rep.boundary_normal + rep.boundary_trace + rep.endpoint;
    Ok(rep)
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    variant: Variant,
    grid: String,
    masks: Vec<String>,
    horizon: f64,
    dt: f64,
    t0: f64,
    delta: f64,
    delta0: f64,
    r: f64,
    window: [usize; 2],
    noise: Option<NoiseDescriptor>,
    components: Vec<String>,
}

fn write_field(path: &Path, header: &str, rows: impl Iterator<Item = String>, columns: &str) -> io::Result<()> {
    let mut w = io::BufWriter::new(fs::File::create(path)?);
    writeln!(w, "# {header}")?;
    writeln!(w, "{columns}")?;
    for r in rows {
        writeln!(w, "{r}")?;
    }
    w.flush()
}

fn read_rows(path: &Path) -> Result<Vec<Vec<f64>>, MeasureError> {
    let file =
        fs::File::open(path).map_err(|e| MeasureError::Manifest(format!("cannot open {}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.starts_with('#') || line.trim().is_empty() || line.chars().next().is_some_and(char::is_alphabetic) {
            continue;
        }
        let row: Result<Vec<f64>, _> = line.split(',').map(|s| s.trim().parse::<f64>()).collect();
        rows.push(row.map_err(|_| MeasureError::Manifest(format!("{}:{}: malformed number", path.display(), i + 1)))?);
    }
    Ok(rows)
}

impl MeasurementSet {
    /// Writes `manifest.json` plus one CSV per component into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<(), MeasureError> {
        fs::create_dir_all(dir)?;
        let header = self.grid.header();
        let s = self.time.spec();
        let mut components = vec!["snapshot_u".to_string()];
        let point_rows =
            |f: &[f64]| -> Vec<String> { f.iter().enumerate().map(|(k, x)| format!("{k},{x:e}")).collect() };
        write_field(
            &dir.join("snapshot_u.csv"),
            &header,
            point_rows(&self.snapshot_u).into_iter(),
            "point,value",
        )?;
        if let Some(v) = &self.snapshot_v {
            components.push("snapshot_v".into());
            write_field(
                &dir.join("snapshot_v.csv"),
                &header,
                point_rows(v).into_iter(),
                "point,value",
            )?;
        }
        for (name, st) in [("u_window", &self.u_window), ("v_window", &self.v_window)] {
            let Some(st) = st else { continue };
            components.push(name.to_string());
            let mut rows = Vec::new();
            for (i, n) in self.window.levels().enumerate() {
                for (j, &k) in self.omega_points.iter().enumerate() {
                    let lap = st.lap.as_ref().map_or(f64::NAN, |l| l[i][j]);
                    rows.push(format!(
                        "{n},{k},{:e},{:e},{:e},{lap:e}",
                        st.values[i][j], st.dt[i][j], st.dtt[i][j]
                    ));
                }
            }
            write_field(
                &dir.join(format!("{name}.csv")),
                &header,
                rows.into_iter(),
                "level,point,value,dt,dtt,lap",
            )?;
            if let Some(raw) = &st.raw {
                let rows = raw.values.iter().enumerate().flat_map(|(i, l)| {
                    raw.points
                        .iter()
                        .zip(l)
                        .map(move |(k, x)| format!("{},{k},{x:e}", raw.lo + i))
                });
                write_field(&dir.join(format!("{name}_raw.csv")), &header, rows, "level,point,value")?;
            }
        }
        if let Some(f) = &self.f_on_omega {
            components.push("f_on_omega".into());
            let rows = self.omega_points.iter().zip(f).map(|(k, x)| format!("{k},{x:e}"));
            write_field(&dir.join("f_omega.csv"), &header, rows, "point,value")?;
        }
        let manifest = Manifest {
            variant: self.variant,
            grid: header.clone(),
            masks: [MaskRole::Omega0, MaskRole::Omega, MaskRole::OmegaBig]
                .iter()
                .map(|&r| self.subdomains.get(r).header())
                .collect(),
            horizon: s.horizon,
            dt: s.dt,
            t0: s.t0,
            delta: s.delta,
            delta0: s.delta0,
            r: s.r,
            window: [self.window.lo, self.window.hi],
            noise: self.noise,
            components,
        };
        let json = serde_json::to_string_pretty(&manifest).map_err(|e| MeasureError::Manifest(e.to_string()))?;
        fs::write(dir.join("manifest.json"), json + "\n")?;
        Ok(())
    }

    pub fn read_dir(dir: &Path) -> Result<Self, MeasureError> {
        let bad = |m: String| MeasureError::Manifest(m);
        let text = fs::read_to_string(dir.join("manifest.json"))
            .map_err(|e| bad(format!("cannot read {}: {e}", dir.join("manifest.json").display())))?;
        let man: Manifest = serde_json::from_str(&text).map_err(|e| bad(format!("manifest.json: {e}")))?;
        let grid = Grid::parse_header(&man.grid).map_err(|e| bad(e.to_string()))?;
        let mut masks = BTreeMap::new();
        for m in &man.masks {
            let mask = SubdomainMask::parse_header(m, &grid).map_err(|e| bad(e.to_string()))?;
            masks.insert(mask.role().tag(), mask);
        }
        let mut take = |role: MaskRole| {
            masks
                .remove(role.tag())
                .ok_or_else(|| bad(format!("manifest lacks mask {role}")))
        };
        let subdomains = Subdomains {
            omega0: take(MaskRole::Omega0)?,
            omega: take(MaskRole::Omega)?,
            omega_big: take(MaskRole::OmegaBig)?,
        };
        let time = TimeGrid::new(&TimeSpec {
            horizon: man.horizon,
            dt: man.dt,
            t0: man.t0,
            delta: man.delta,
            delta0: man.delta0,
            r: man.r,
        })
        .map_err(|e| bad(e.to_string()))?;
        let window = Window {
            lo: man.window[0],
            hi: man.window[1],
        };
        if window != data_window(&time) {
            return Err(bad("window does not match t0, delta, delta0".into()));
        }
        let omega = subdomains.omega.indices();
        let has = |c: &str| man.components.iter().any(|x| x == c);
        let point_field = |name: &str, len: usize| -> Result<Vec<f64>, MeasureError> {
            let rows = read_rows(&dir.join(name))?;
            if rows.len() != len || rows.iter().any(|r| r.len() != 2) {
                return Err(bad(format!("{name}: expected {len} rows of (point, value)")));
            }
            Ok(rows.into_iter().map(|r| r[1]).collect())
        };
        let stack = |name: &str| -> Result<WindowStack, MeasureError> {
            let rows = read_rows(&dir.join(format!("{name}.csv")))?;
            let np = omega.len();
            if rows.len() != np * window.len() || rows.iter().any(|r| r.len() != 6) {
                return Err(bad(format!("{name}.csv: expected {} rows", np * window.len())));
            }
            let grab =
                |c: usize| -> Vec<Vec<f64>> { rows.chunks(np).map(|ch| ch.iter().map(|r| r[c]).collect()).collect() };
            let lap = grab(5);
            let raw_path = dir.join(format!("{name}_raw.csv"));
            let raw = if raw_path.exists() {
                let rows = read_rows(&raw_path)?;
                let lo = rows.first().map_or(0, |r| r[0] as usize);
                let mut points = Vec::new();
                let mut values: Vec<Vec<f64>> = Vec::new();
                for r in &rows {
                    let level = r[0] as usize - lo;
                    if level == values.len() {
                        values.push(Vec::new());
                    }
                    if level == 0 {
                        points.push(r[1] as usize);
                    }
                    values[level].push(r[2]);
                }
                Some(RawBlock { points, lo, values })
            } else {
                None
            };
            Ok(WindowStack {
                values: grab(2),
                dt: grab(3),
                dtt: grab(4),
                lap: (!lap.iter().flatten().any(|x| x.is_nan())).then_some(lap),
                raw,
            })
        };
        let ms = MeasurementSet {
            variant: man.variant,
            snapshot_u: point_field("snapshot_u.csv", grid.len())?,
            snapshot_v: if has("snapshot_v") {
                Some(point_field("snapshot_v.csv", grid.len())?)
            } else {
                None
            },
            u_window: if has("u_window") {
                Some(stack("u_window")?)
            } else {
                None
            },
            v_window: if has("v_window") {
                Some(stack("v_window")?)
            } else {
                None
            },
            f_on_omega: if has("f_on_omega") {
                Some(point_field("f_omega.csv", omega.len())?)
            } else {
                None
            },
            grid,
            subdomains,
            time,
            window,
            omega_points: omega,
            noise: man.noise,
        };
        ms.validate()?;
        Ok(ms)
    }
}
