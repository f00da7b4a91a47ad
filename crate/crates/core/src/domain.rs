//! Uniform grids on intervals and rectangles, nested observation subdomains,
//! snapped time windows and trapezoid quadrature.
//!
//! Points are stored in a flat index `i + nx * j` with `i` running fastest.
//! A 1D grid is a 2D grid with a single row, so every routine below works on
//! both without special casing beyond the axis count.

use std::fmt;
use std::ops::RangeInclusive;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DomainError {
    #[error("grid needs at least 3 points per axis, got {0}")]
    TooFewPoints(usize),
    #[error("extent must be positive and finite, got {0}")]
    BadExtent(f64),
    #[error("dimension must be 1 or 2, got {0}")]
    BadDimension(usize),
    #[error("field has {got} values but the grid has {expected} points")]
    LengthMismatch { expected: usize, got: usize },
    #[error("time grid: {0}")]
    Time(String),
    #[error("subdomain {0} is empty on this grid")]
    EmptyMask(MaskRole),
    #[error("malformed header: {0}")]
    Header(String),
}

/// Uniform tensor grid on `[0, Lx]` or `[0, Lx] x [0, Ly]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    dim: usize,
    extent: [f64; 2],
    n: [usize; 2],
    h: [f64; 2],
}

/// `build_grid(1, 1.0, 11)` is the unit interval with spacing 0.1.
pub fn build_grid(dim: usize, extent: f64, n: usize) -> Result<Grid, DomainError> {
    match dim {
        1 => Grid::new(&[extent], &[n]),
        2 => Grid::new(&[extent, extent], &[n, n]),
        d => Err(DomainError::BadDimension(d)),
    }
}

impl Grid {
    pub fn new(extent: &[f64], n: &[usize]) -> Result<Self, DomainError> {
        let dim = extent.len();
        if !(1..=2).contains(&dim) || n.len() != dim {
            return Err(DomainError::BadDimension(dim.max(n.len())));
        }
        let mut g = Grid {
            dim,
            extent: [0.0; 2],
            n: [1; 2],
            h: [0.0; 2],
        };
        for a in 0..dim {
            if !(extent[a].is_finite() && extent[a] > 0.0) {
                return Err(DomainError::BadExtent(extent[a]));
            }
            if n[a] < 3 {
                return Err(DomainError::TooFewPoints(n[a]));
            }
            g.extent[a] = extent[a];
            g.n[a] = n[a];
            g.h[a] = extent[a] / (n[a] - 1) as f64;
        }
        Ok(g)
    }

    pub fn interval(length: f64, n: usize) -> Result<Self, DomainError> {
        Grid::new(&[length], &[n])
    }

    pub fn rectangle(lx: f64, ly: f64, nx: usize, ny: usize) -> Result<Self, DomainError> {
        Grid::new(&[lx, ly], &[nx, ny])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n(&self, axis: usize) -> usize {
        self.n[axis]
    }

    pub fn h(&self, axis: usize) -> f64 {
        self.h[axis]
    }

    pub fn extent(&self, axis: usize) -> f64 {
        self.extent[axis]
    }

    /// Total number of grid points.
    pub fn len(&self) -> usize {
        self.n[0] * self.n[1]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Volume of one grid cell, `h^dim`.
    pub fn cell_volume(&self) -> f64 {
        (0..self.dim).map(|a| self.h[a]).product()
    }

    /// Measure of the whole domain.
    pub fn volume(&self) -> f64 {
        (0..self.dim).map(|a| self.extent[a]).product()
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        i + self.n[0] * j
    }

    pub fn ij(&self, idx: usize) -> (usize, usize) {
        (idx % self.n[0], idx / self.n[0])
    }

    pub fn coord(&self, idx: usize) -> [f64; 2] {
        let (i, j) = self.ij(idx);
        [i as f64 * self.h[0], j as f64 * self.h[1]]
    }

    pub fn is_boundary(&self, idx: usize) -> bool {
        let (i, j) = self.ij(idx);
        let on_x = i == 0 || i + 1 == self.n[0];
        let on_y = self.dim == 2 && (j == 0 || j + 1 == self.n[1]);
        on_x || on_y
    }

    /// Boundary point whose gradient must vanish for any function that is
    /// zero on both adjacent edges (rectangle corners).
    pub fn is_corner(&self, idx: usize) -> bool {
        if self.dim < 2 {
            return false;
        }
        let (i, j) = self.ij(idx);
        (i == 0 || i + 1 == self.n[0]) && (j == 0 || j + 1 == self.n[1])
    }

    pub fn boundary_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&k| self.is_boundary(k)).collect()
    }

    pub fn interior_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&k| !self.is_boundary(k)).collect()
    }

    /// Neighbours of `idx` along `axis` (previous, next), `None` off the grid.
    pub fn axis_neighbors(&self, idx: usize, axis: usize) -> (Option<usize>, Option<usize>) {
        let (i, j) = self.ij(idx);
        let (pos, len) = if axis == 0 { (i, self.n[0]) } else { (j, self.n[1]) };
        let stride = if axis == 0 { 1 } else { self.n[0] };
        let prev = (pos > 0).then(|| idx - stride);
        let next = (pos + 1 < len).then(|| idx + stride);
        (prev, next)
    }

    pub fn check_len(&self, field: &[f64]) -> Result<(), DomainError> {
        if field.len() != self.len() {
            return Err(DomainError::LengthMismatch {
                expected: self.len(),
                got: field.len(),
            });
        }
        Ok(())
    }

    /// Samples `f(x, y)` at every grid point (`y = 0` in 1D).
    pub fn sample<F: Fn(f64, f64) -> f64>(&self, f: F) -> Vec<f64> {
        (0..self.len())
            .map(|k| {
                let c = self.coord(k);
                f(c[0], c[1])
            })
            .collect()
    }

    /// Five-point (three-point in 1D) Laplacian at an interior point.
    pub fn laplacian_at(&self, field: &[f64], idx: usize) -> f64 {
        let mut acc = 0.0;
        for a in 0..self.dim {
            let (p, n) = self.axis_neighbors(idx, a);
            let (p, n) = (p.expect("interior point"), n.expect("interior point"));
            acc += (field[p] - 2.0 * field[idx] + field[n]) / (self.h[a] * self.h[a]);
        }
        acc
    }

    /// Trapezoid weights restricted to `mask` (the whole grid when `None`).
    ///
    /// Along each axis a point is weighted by `h`, halved when one of its two
    /// axis neighbours lies outside the mask and zeroed when both do. For a
    /// box-shaped mask this is the tensor trapezoid rule on the box.
    pub fn quadrature_weights(&self, mask: Option<&[bool]>) -> Vec<f64> {
        let inside = |k: Option<usize>| match (k, mask) {
            (None, _) => false,
            (Some(k), None) => k < self.len(),
            (Some(k), Some(m)) => m[k],
        };
        (0..self.len())
            .map(|k| {
                if !inside(Some(k)) {
                    return 0.0;
                }
                let mut w = 1.0;
                for a in 0..self.dim {
                    let (p, n) = self.axis_neighbors(k, a);
                    let factor = match (inside(p), inside(n)) {
                        (true, true) => 1.0,
                        (false, false) => 0.0,
                        _ => 0.5,
                    };
                    w *= factor * self.h[a];
                }
                w
            })
            .collect()
    }

    /// Plain-text header embedded in output files.
    pub fn header(&self) -> String {
        let ext: Vec<String> = (0..self.dim).map(|a| self.extent[a].to_string()).collect();
        let n: Vec<String> = (0..self.dim).map(|a| self.n[a].to_string()).collect();
        format!("grid dim={} extent={} n={}", self.dim, ext.join(","), n.join(","))
    }

    pub fn parse_header(line: &str) -> Result<Self, DomainError> {
        let bad = || DomainError::Header(line.to_string());
        let body = line.trim().trim_start_matches('#').trim();
        let rest = body.strip_prefix("grid").ok_or_else(bad)?;
        let mut extent = None;
        let mut n = None;
        for tok in rest.split_whitespace() {
            let (k, v) = tok.split_once('=').ok_or_else(bad)?;
            match k {
                "dim" => {}
                "extent" => {
                    let e: Result<Vec<f64>, _> = v.split(',').map(str::parse).collect();
                    extent = Some(e.map_err(|_| bad())?);
                }
                "n" => {
                    let e: Result<Vec<usize>, _> = v.split(',').map(str::parse).collect();
                    n = Some(e.map_err(|_| bad())?);
                }
                _ => return Err(bad()),
            }
        }
        Grid::new(&extent.ok_or_else(bad)?, &n.ok_or_else(bad)?)
    }
}

/// Discrete `L^2` norm over the masked points, trapezoid weighted.
pub fn l2_norm(field: &[f64], mask: Option<&[bool]>, grid: &Grid) -> Result<f64, DomainError> {
    grid.check_len(field)?;
    if let Some(m) = mask {
        if m.len() != grid.len() {
            return Err(DomainError::LengthMismatch {
                expected: grid.len(),
                got: m.len(),
            });
        }
    }
    let w = grid.quadrature_weights(mask);
    Ok(field.iter().zip(&w).map(|(f, w)| w * f * f).sum::<f64>().sqrt())
}

/// First derivative along `axis`: centred inside, second-order one-sided at
/// the two ends of every grid line.
pub fn diff_axis(field: &[f64], grid: &Grid, axis: usize) -> Vec<f64> {
    let h = grid.h(axis);
    (0..grid.len())
        .map(|k| match grid.axis_neighbors(k, axis) {
            (Some(p), Some(n)) => (field[n] - field[p]) / (2.0 * h),
            (None, Some(n)) => {
                let nn = grid.axis_neighbors(n, axis).1.expect("n >= 3");
                (-3.0 * field[k] + 4.0 * field[n] - field[nn]) / (2.0 * h)
            }
            (Some(p), None) => {
                let pp = grid.axis_neighbors(p, axis).0.expect("n >= 3");
                (3.0 * field[k] - 4.0 * field[p] + field[pp]) / (2.0 * h)
            }
            (None, None) => 0.0,
        })
        .collect()
}

/// Second derivative along `axis`: centred inside, second-order one-sided
/// (four-point) at the ends when the line is long enough.
pub fn diff2_axis(field: &[f64], grid: &Grid, axis: usize) -> Vec<f64> {
    let h2 = grid.h(axis) * grid.h(axis);
    let line = grid.n(axis);
    (0..grid.len())
        .map(|k| match grid.axis_neighbors(k, axis) {
            (Some(p), Some(n)) => (field[p] - 2.0 * field[k] + field[n]) / h2,
            (None, Some(n)) => {
                let n2 = grid.axis_neighbors(n, axis).1.expect("n >= 3");
                if line >= 4 {
                    let n3 = grid.axis_neighbors(n2, axis).1.expect("n >= 4");
                    (2.0 * field[k] - 5.0 * field[n] + 4.0 * field[n2] - field[n3]) / h2
                } else {
                    (field[k] - 2.0 * field[n] + field[n2]) / h2
                }
            }
            (Some(p), None) => {
                let p2 = grid.axis_neighbors(p, axis).0.expect("n >= 3");
                if line >= 4 {
                    let p3 = grid.axis_neighbors(p2, axis).0.expect("n >= 4");
                    (2.0 * field[k] - 5.0 * field[p] + 4.0 * field[p2] - field[p3]) / h2
                } else {
                    (field[k] - 2.0 * field[p] + field[p2]) / h2
                }
            }
            (None, None) => 0.0,
        })
        .collect()
}

/// Pointwise magnitude of the discrete gradient.
pub fn gradient_magnitude(field: &[f64], grid: &Grid) -> Vec<f64> {
    let parts: Vec<Vec<f64>> = (0..grid.dim()).map(|a| diff_axis(field, grid, a)).collect();
    (0..grid.len())
        .map(|k| parts.iter().map(|p| p[k] * p[k]).sum::<f64>().sqrt())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MaskRole {
    Omega0,
    Omega,
    OmegaBig,
}

impl MaskRole {
    pub fn tag(self) -> &'static str {
        match self {
            MaskRole::Omega0 => "omega0",
            MaskRole::Omega => "omega",
            MaskRole::OmegaBig => "omega_big",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "omega0" => Some(MaskRole::Omega0),
            "omega" => Some(MaskRole::Omega),
            "omega_big" => Some(MaskRole::OmegaBig),
            _ => None,
        }
    }
}

impl fmt::Display for MaskRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

/// Indicator of one of the observation subdomains.
#[derive(Debug, Clone, PartialEq)]
pub struct SubdomainMask {
    role: MaskRole,
    mask: Vec<bool>,
}

impl SubdomainMask {
    pub fn from_indicator(role: MaskRole, mask: Vec<bool>) -> Result<Self, DomainError> {
        if !mask.iter().any(|&b| b) {
            return Err(DomainError::EmptyMask(role));
        }
        Ok(SubdomainMask { role, mask })
    }

    /// Closed box `[lo, hi]` per axis; grid points within `1e-9 h` of a face
    /// count as inside.
    pub fn from_box(grid: &Grid, role: MaskRole, bounds: &[(f64, f64)]) -> Result<Self, DomainError> {
        if bounds.len() != grid.dim() {
            return Err(DomainError::BadDimension(bounds.len()));
        }
        let mask = (0..grid.len())
            .map(|k| {
                let c = grid.coord(k);
                bounds.iter().enumerate().all(|(a, &(lo, hi))| {
                    let tol = 1e-9 * grid.h(a);
                    c[a] >= lo - tol && c[a] <= hi + tol
                })
            })
            .collect();
        SubdomainMask::from_indicator(role, mask)
    }

    pub fn role(&self) -> MaskRole {
        self.role
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.mask
    }

    pub fn contains(&self, idx: usize) -> bool {
        self.mask[idx]
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }

    /// Grid indices inside the mask, ascending.
    pub fn indices(&self) -> Vec<usize> {
        self.mask
            .iter()
            .enumerate()
            .filter_map(|(k, &b)| b.then_some(k))
            .collect()
    }

    /// The mask grown by one cell in every direction (diagonals included).
    pub fn dilate(&self, grid: &Grid) -> Vec<bool> {
        dilate(&self.mask, grid)
    }

    /// Run-length header: `mask omega rle=F15,T21,F15`.
    pub fn header(&self) -> String {
        let mut runs = Vec::new();
        let mut cur = self.mask[0];
        let mut len = 0usize;
        for &b in &self.mask {
            if b == cur {
                len += 1;
            } else {
                runs.push(format!("{}{}", if cur { 'T' } else { 'F' }, len));
                cur = b;
                len = 1;
            }
        }
        runs.push(format!("{}{}", if cur { 'T' } else { 'F' }, len));
        format!("mask {} rle={}", self.role, runs.join(","))
    }

    pub fn parse_header(line: &str, grid: &Grid) -> Result<Self, DomainError> {
        let bad = || DomainError::Header(line.to_string());
        let body = line.trim().trim_start_matches('#').trim();
        let mut toks = body.split_whitespace();
        if toks.next() != Some("mask") {
            return Err(bad());
        }
        let role = toks.next().and_then(MaskRole::from_tag).ok_or_else(bad)?;
        let rle = toks.next().and_then(|t| t.strip_prefix("rle=")).ok_or_else(bad)?;
        let mut mask = Vec::with_capacity(grid.len());
        for run in rle.split(',') {
            let (flag, count) = run.split_at(1);
            let value = match flag {
                "T" => true,
                "F" => false,
                _ => return Err(bad()),
            };
            let count: usize = count.parse().map_err(|_| bad())?;
            mask.extend(std::iter::repeat_n(value, count));
        }
        if mask.len() != grid.len() {
            return Err(bad());
        }
        SubdomainMask::from_indicator(role, mask)
    }
}

pub(crate) fn dilate(mask: &[bool], grid: &Grid) -> Vec<bool> {
    let (nx, ny) = (grid.n(0) as isize, grid.n(1) as isize);
    let mut out = vec![false; mask.len()];
    for (k, &b) in mask.iter().enumerate() {
        if !b {
            continue;
        }
        let (i, j) = grid.ij(k);
        let (i, j) = (i as isize, j as isize);
        let dj: &[isize] = if grid.dim() == 2 { &[-1, 0, 1] } else { &[0] };
        for &oy in dj {
            for ox in -1..=1 {
                let (a, c) = (i + ox, j + oy);
                if a >= 0 && a < nx && c >= 0 && c < ny {
                    out[grid.index(a as usize, c as usize)] = true;
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct InclusionCheck {
    pub label: &'static str,
    pub passed: bool,
    /// Points of the dilated inner set missing from the outer set.
    pub offending: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NestingReport {
    pub checks: Vec<InclusionCheck>,
}

impl NestingReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &InclusionCheck> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

impl fmt::Display for NestingReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            if c.passed {
                writeln!(f, "ok      {}", c.label)?;
            } else {
                writeln!(
                    f,
                    "FAILED  {} violated at {} point(s): {:?}",
                    c.label,
                    c.offending.len(),
                    c.offending
                )?;
            }
        }
        Ok(())
    }
}

/// Verifies `omega0 ⊂ closure(omega0) ⊂ omega ⊂ closure(omega) ⊂ Omega0 ⊂
/// closure(Omega0) ⊂ Omega`, where a closure is the set dilated by one cell
/// and `Omega` is the open domain (interior grid points).
pub fn check_nesting(
    omega0: &SubdomainMask,
    omega: &SubdomainMask,
    omega_big: &SubdomainMask,
    grid: &Grid,
) -> NestingReport {
    let interior: Vec<bool> = (0..grid.len()).map(|k| !grid.is_boundary(k)).collect();
    let inclusion = |label: &'static str, inner: &SubdomainMask, outer: &[bool]| {
        let offending: Vec<usize> = inner
            .dilate(grid)
            .iter()
            .enumerate()
            .filter_map(|(k, &b)| (b && !outer[k]).then_some(k))
            .collect();
        InclusionCheck {
            label,
            passed: offending.is_empty(),
            offending,
        }
    };
    NestingReport {
        checks: vec![
            inclusion("closure(omega0) ⊂ omega", omega0, omega.as_slice()),
            inclusion("closure(omega) ⊂ Omega0", omega, omega_big.as_slice()),
            inclusion("closure(omega) ⊂ Omega", omega, &interior),
            inclusion("closure(Omega0) ⊂ Omega", omega_big, &interior),
        ],
    }
}

/// The three observation subdomains `omega0 ⊂ omega ⊂ Omega0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Subdomains {
    pub omega0: SubdomainMask,
    pub omega: SubdomainMask,
    pub omega_big: SubdomainMask,
}

impl Subdomains {
    /// Boxes given as `(lo, hi)` per axis.
    pub fn from_boxes(
        grid: &Grid,
        omega0: &[(f64, f64)],
        omega: &[(f64, f64)],
        omega_big: &[(f64, f64)],
    ) -> Result<Self, DomainError> {
        Ok(Subdomains {
            omega0: SubdomainMask::from_box(grid, MaskRole::Omega0, omega0)?,
            omega: SubdomainMask::from_box(grid, MaskRole::Omega, omega)?,
            omega_big: SubdomainMask::from_box(grid, MaskRole::OmegaBig, omega_big)?,
        })
    }

    pub fn check_nesting(&self, grid: &Grid) -> NestingReport {
        check_nesting(&self.omega0, &self.omega, &self.omega_big, grid)
    }

    pub fn get(&self, role: MaskRole) -> &SubdomainMask {
        match role {
            MaskRole::Omega0 => &self.omega0,
            MaskRole::Omega => &self.omega,
            MaskRole::OmegaBig => &self.omega_big,
        }
    }
}

/// User-facing time parameters before snapping.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeSpec {
    pub horizon: f64,
    pub dt: f64,
    pub t0: f64,
    pub delta: f64,
    pub delta0: f64,
    pub r: f64,
}

/// Inclusive range of time levels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub lo: usize,
    pub hi: usize,
}

impl Window {
    pub fn len(&self) -> usize {
        self.hi - self.lo + 1
    }

    pub fn is_empty(&self) -> bool {
        self.hi < self.lo
    }

    pub fn levels(&self) -> RangeInclusive<usize> {
        self.lo..=self.hi
    }

    pub fn contains(&self, n: usize) -> bool {
        (self.lo..=self.hi).contains(&n)
    }

    /// Trapezoid weights over the window levels.
    pub fn quadrature_weights(&self, dt: f64) -> Vec<f64> {
        let m = self.len();
        (0..m)
            .map(|k| {
                if m == 1 {
                    0.0
                } else if k == 0 || k + 1 == m {
                    0.5 * dt
                } else {
                    dt
                }
            })
            .collect()
    }
}

/// Uniform time partition of `[0, T]` with the observation time and the
/// window half-widths snapped to whole steps.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    dt: f64,
    steps: usize,
    t0: usize,
    delta: usize,
    delta0: usize,
    r: usize,
}

impl TimeGrid {
    pub fn new(spec: &TimeSpec) -> Result<Self, DomainError> {
        let err = |m: String| Err(DomainError::Time(m));
        if !(spec.horizon.is_finite() && spec.horizon > 0.0) {
            return err(format!("horizon T must be positive, got {}", spec.horizon));
        }
        if !(spec.dt.is_finite() && spec.dt > 0.0 && spec.dt < spec.horizon) {
            return err(format!("dt must lie in (0, T), got {}", spec.dt));
        }
        let ratio = spec.horizon / spec.dt;
        let steps = ratio.round();
        if (ratio - steps).abs() > 1e-6 * steps {
            return err(format!(
                "T = {} is not a whole number of steps dt = {}",
                spec.horizon, spec.dt
            ));
        }
        let steps = steps as usize;
        let snap = |x: f64| (x / spec.dt).round().max(0.0) as usize;
        let (t0, delta, delta0, r) = (snap(spec.t0), snap(spec.delta), snap(spec.delta0), snap(spec.r));
        if delta == 0 || delta0 == 0 {
            return err("delta and delta0 must span at least one time step".into());
        }
        if r == 0 {
            return err("r must span at least one time step".into());
        }
        if r >= delta0 {
            return err(format!("r = {} must be smaller than delta0 = {}", spec.r, spec.delta0));
        }
        for (name, half) in [("delta", delta), ("delta0", delta0)] {
            if t0 < half + 1 || t0 + half + 1 > steps {
                return err(format!(
                    "window t0 ± {name} = [{}, {}] must lie strictly inside (0, T) = (0, {})",
                    (t0 as f64 - half as f64) * spec.dt,
                    (t0 + half) as f64 * spec.dt,
                    spec.horizon
                ));
            }
        }
        Ok(TimeGrid {
            horizon: spec.horizon,
            dt: spec.dt,
            steps,
            t0,
            delta,
            delta0,
            r,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Number of stored levels, `T/dt + 1`.
    pub fn levels(&self) -> usize {
        self.steps + 1
    }

    pub fn time(&self, n: usize) -> f64 {
        n as f64 * self.dt
    }

    pub fn t0_index(&self) -> usize {
        self.t0
    }

    pub fn t0(&self) -> f64 {
        self.time(self.t0)
    }

    pub fn delta(&self) -> f64 {
        self.delta as f64 * self.dt
    }

    pub fn delta0(&self) -> f64 {
        self.delta0 as f64 * self.dt
    }

    pub fn r(&self) -> f64 {
        self.r as f64 * self.dt
    }

    pub fn delta_steps(&self) -> usize {
        self.delta
    }

    pub fn delta0_steps(&self) -> usize {
        self.delta0
    }

    pub fn r_steps(&self) -> usize {
        self.r
    }

    /// `I = [t0 - delta, t0 + delta]`.
    pub fn lipschitz_window(&self) -> Window {
        Window {
            lo: self.t0 - self.delta,
            hi: self.t0 + self.delta,
        }
    }

    /// `I0 = [t0 - delta0, t0 + delta0]`.
    pub fn holder_window(&self) -> Window {
        Window {
            lo: self.t0 - self.delta0,
            hi: self.t0 + self.delta0,
        }
    }

    /// `[t0 - r, t0 + r]`.
    pub fn inner_window(&self) -> Window {
        Window {
            lo: self.t0 - self.r,
            hi: self.t0 + self.r,
        }
    }

    pub fn spec(&self) -> TimeSpec {
        TimeSpec {
            horizon: self.horizon,
            dt: self.dt,
            t0: self.t0(),
            delta: self.delta(),
            delta0: self.delta0(),
            r: self.r(),
        }
    }
}
