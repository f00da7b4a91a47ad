//! Ensemble experiments for the Lipschitz and Hölder stability estimates.
//!
//! Each trial perturbs the source by `eps * g`, solves both problems,
//! observes reference data and records the source difference against the
//! data functionals. Trials draw from independent seeded streams and are
//! aggregated in trial order, so reports do not depend on the thread count.

use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::Path;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::domain::{l2_norm, Grid, Subdomains, TimeGrid};
use crate::forward::{solve_forward, Trajectory};
use crate::measure::{data_functionals, observe, MeasurementSet, Variant};
use crate::model::ProblemData;

/// Lower bound on the fitted exponent used by the acceptance run.
pub const THETA_FLOOR: f64 = 0.3;

#[derive(Debug, Error)]
pub enum StabilityError {
    #[error("no rows")]
    NoRows,
    #[error("subdomains are not nested: {0}")]
    Nesting(String),
    #[error("base problem failed: {0}")]
    Base(String),
    #[error("perturbation sizes must be finite and nonnegative")]
    Sizes,
    #[error("thread pool: {0}")]
    Threads(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Family {
    /// `sum_k c_k sin(k pi x / L)` with `c_k` uniform in `[-1, 1] / k^2`,
    /// `k <= modes`; tensor products in 2D. Normalised to unit sup norm.
    RandomTrig {
        modes: usize,
    },
    /// `sin(k pi x / L)` (times `sin(k pi y / Ly)` in 2D) for every trial.
    SingleMode {
        k: usize,
    },
    Fixed(Vec<f64>),
}

impl Family {
    pub fn draw(&self, grid: &Grid, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let (lx, ly) = (grid.extent(0), grid.extent(1));
        let two_d = grid.dim() == 2;
        let sine = |k: usize, l: usize, x: f64, y: f64| {
            let sx = (k as f64 * std::f64::consts::PI * x / lx).sin();
            if two_d {
                sx * (l as f64 * std::f64::consts::PI * y / ly).sin()
            } else {
                sx
            }
        };
        match self {
            Family::Fixed(g) => g.clone(),
            Family::SingleMode { k } => grid.sample(|x, y| sine(*k, *k, x, y)),
            Family::RandomTrig { modes } => {
                let ly_modes = if two_d { *modes } else { 1 };
                let mut coef = Vec::new();
                for k in 1..=*modes {
                    for l in 1..=ly_modes {
                        let c: f64 = rng.random_range(-1.0..1.0);
                        coef.push((k, l, c / ((k * l) as f64).powi(2)));
                    }
                }
                let mut g = grid.sample(|x, y| coef.iter().map(|&(k, l, c)| c * sine(k, l, x, y)).sum());
                let sup = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                if sup > 0.0 {
                    g.iter_mut().for_each(|v| *v /= sup);
                }
                g
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnsembleSpec {
    pub family: Family,
    /// Trial `i` uses `sizes[i % sizes.len()]`.
    pub sizes: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
}

impl EnsembleSpec {
    fn rng(&self, trial: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(trial as u64);
        rng
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Kind {
    Lipschitz,
    Holder,
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Kind::Lipschitz => "lipschitz",
            Kind::Holder => "holder",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RowStatus {
    Ok,
    /// Zero perturbation; all functionals vanish.
    Degenerate,
    Failed(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRow {
    pub id: usize,
    pub epsilon: f64,
    pub f_omega: f64,
    pub f_omega0: f64,
    pub d1: f64,
    pub d2: f64,
    pub b: f64,
    pub ratio_l: f64,
    pub ratio_h: f64,
    pub status: RowStatus,
}

impl TrialRow {
    fn failed(id: usize, epsilon: f64, why: String) -> Self {
        TrialRow {
            id,
            epsilon,
            f_omega: f64::NAN,
            f_omega0: f64::NAN,
            d1: f64::NAN,
            d2: f64::NAN,
            b: f64::NAN,
            ratio_l: f64::NAN,
            ratio_h: f64::NAN,
            status: RowStatus::Failed(why),
        }
    }

    pub fn usable(&self) -> bool {
        self.status == RowStatus::Ok
    }
}

/// Least-squares slope of `log ||F||_{Omega0}` against `log B`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerFit {
    pub theta: f64,
    pub intercept: f64,
    /// Standard error of the slope.
    pub stderr: f64,
    pub r2: f64,
    /// Residual sum of squares.
    pub residual: f64,
    pub n: usize,
}

impl PowerFit {
    /// Normal-approximation 95% band for the slope.
    pub fn band(&self) -> (f64, f64) {
        (self.theta - 1.96 * self.stderr, self.theta + 1.96 * self.stderr)
    }
}

pub fn fit_power_law(xs: &[f64], ys: &[f64]) -> Option<PowerFit> {
    let pts: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .filter(|(x, y)| **x > 0.0 && **y > 0.0 && x.is_finite() && y.is_finite())
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    let n = pts.len();
    if n < 2 {
        return None;
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n as f64;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n as f64;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    if !(sxx > 0.0) {
        return None;
    }
    let theta = sxy / sxx;
    let intercept = my - theta * mx;
    let residual: f64 = pts.iter().map(|p| (p.1 - intercept - theta * p.0).powi(2)).sum();
    let r2 = if syy > 0.0 { 1.0 - residual / syy } else { 1.0 };
    let stderr = if n > 2 {
        (residual / (n - 2) as f64 / sxx).sqrt()
    } else {
        f64::NAN
    };
    Some(PowerFit {
        theta,
        intercept,
        stderr,
        r2,
        residual,
        n,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityReport {
    pub kind: Kind,
    pub rows: Vec<TrialRow>,
    pub fit: Option<PowerFit>,
    /// SHA-256 of the configuration description.
    pub digest: String,
}

fn summary(values: &[f64]) -> Option<(f64, f64, f64)> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let median = if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    };
    Some((v[0], v[n - 1], median))
}

impl StabilityReport {
    pub fn usable(&self) -> impl Iterator<Item = &TrialRow> {
        self.rows.iter().filter(|r| r.usable())
    }

    /// `(min, max, median)` of `ratio_L` over usable rows.
    pub fn ratio_l_summary(&self) -> Option<(f64, f64, f64)> {
        summary(&self.usable().map(|r| r.ratio_l).collect::<Vec<_>>())
    }

    pub fn ratio_h_summary(&self) -> Option<(f64, f64, f64)> {
        summary(&self.usable().map(|r| r.ratio_h).collect::<Vec<_>>())
    }

    pub fn footer(&self) -> Vec<String> {
        let count = |f: fn(&RowStatus) -> bool| self.rows.iter().filter(|r| f(&r.status)).count();
        let mut out = vec![
            format!("kind={}", self.kind),
            format!(
                "trials={} ok={} degenerate={} failed={}",
                self.rows.len(),
                count(|s| *s == RowStatus::Ok),
                count(|s| *s == RowStatus::Degenerate),
                count(|s| matches!(s, RowStatus::Failed(_))),
            ),
        ];
        for r in &self.rows {
            match &r.status {
                RowStatus::Degenerate => out.push(format!("degenerate id={} (zero perturbation)", r.id)),
                RowStatus::Failed(why) => out.push(format!("failed id={}: {why}", r.id)),
                RowStatus::Ok => {}
            }
        }
        if let Some((lo, hi, med)) = self.ratio_l_summary() {
            out.push(format!(
                "ratio_L min={lo:.6e} max={hi:.6e} median={med:.6e} spread={:.6e}",
                hi / lo
            ));
        }
        if let Some((lo, hi, med)) = self.ratio_h_summary() {
            out.push(format!("ratio_H min={lo:.6e} max={hi:.6e} median={med:.6e}"));
        }
        match &self.fit {
            Some(f) => {
                let (a, b) = f.band();
                out.push(format!(
                    "theta_fit={:.6} band95=[{a:.6}, {b:.6}] r2={:.6} residual={:.6e} rows={} floor={THETA_FLOOR}",
                    f.theta, f.r2, f.residual, f.n
                ));
            }
            None => out.push("insufficient rows for fit".into()),
        }
        out.push(format!("digest={}", self.digest));
        out
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "id,epsilon,F_omega,F_omega0,D1,D2,B,ratio_L,ratio_H")?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e}",
                r.id, r.epsilon, r.f_omega, r.f_omega0, r.d1, r.d2, r.b, r.ratio_l, r.ratio_h
            )?;
        }
        for line in self.footer() {
            writeln!(w, "# {line}")?;
        }
        Ok(())
    }
}

/// Writes the CSV report; refuses an empty report.
pub fn emit_report(report: &StabilityReport, path: &Path) -> Result<(), StabilityError> {
    if report.rows.is_empty() {
        return Err(StabilityError::NoRows);
    }
    let mut buf = Vec::new();
    report.write_csv(&mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

/// Base problem and geometry shared by every trial.
pub struct Setup<'a> {
    pub problem: &'a ProblemData,
    pub grid: &'a Grid,
    pub time: &'a TimeGrid,
    pub subdomains: &'a Subdomains,
}

struct Base {
    data: MeasurementSet,
}

fn run_trial(setup: &Setup, base: &Base, spec: &EnsembleSpec, id: usize) -> TrialRow {
    let epsilon = spec.sizes[id % spec.sizes.len()];
    let mut rng = spec.rng(id);
    let g = spec.family.draw(setup.grid, &mut rng);
    if g.len() != setup.grid.len() {
        return TrialRow::failed(id, epsilon, format!("perturbation has {} values", g.len()));
    }
    let diff: Vec<f64> = g.iter().map(|x| epsilon * x).collect();
    let f_omega = l2_norm(&diff, None, setup.grid).unwrap_or(f64::NAN);
    let f_omega0 = l2_norm(&diff, Some(setup.subdomains.omega_big.as_slice()), setup.grid).unwrap_or(f64::NAN);
    let mut p = setup.problem.clone();
    for (f, d) in p.f.iter_mut().zip(&diff) {
        *f -= d;
    }
    let traj: Trajectory = match solve_forward(&p, setup.grid, setup.time) {
        Ok(t) => t,
        Err(e) => return TrialRow::failed(id, epsilon, e.to_string()),
    };
    let data = match observe(&traj, Variant::M1, setup.subdomains, None) {
        Ok(d) => d,
        Err(e) => return TrialRow::failed(id, epsilon, e.to_string()),
    };
    let fun = match data_functionals(&base.data, &data) {
        Ok(f) => f,
        Err(e) => return TrialRow::failed(id, epsilon, e.to_string()),
    };
    let degenerate = f_omega == 0.0;
    TrialRow {
        id,
        epsilon,
        f_omega,
        f_omega0,
        d1: fun.d1,
        d2: fun.d2,
        b: fun.b,
        ratio_l: if degenerate {
            f64::NAN
        } else {
            f_omega / (fun.d1 + fun.d2)
        },
        ratio_h: if degenerate { f64::NAN } else { f_omega0 / fun.b.sqrt() },
        status: if degenerate {
            RowStatus::Degenerate
        } else {
            RowStatus::Ok
        },
    }
}

fn digest(kind: Kind, setup: &Setup, spec: &EnsembleSpec) -> String {
    let mut h = Sha256::new();
    h.update(kind.to_string());
    h.update(setup.grid.header());
    h.update(format!("{:?}", setup.time.spec()));
    for role in [
        &setup.subdomains.omega0,
        &setup.subdomains.omega,
        &setup.subdomains.omega_big,
    ] {
        h.update(role.header());
    }
    h.update(format!(
        "d1={} d2={} a1={:?} a2={:?} r={:?}",
        setup.problem.d1, setup.problem.d2, setup.problem.a1, setup.problem.a2, setup.problem.r
    ));
    for x in setup.problem.f.iter().chain(&setup.problem.u0).chain(&setup.problem.v0) {
        h.update(x.to_le_bytes());
    }
    h.update(serde_json::to_string(spec).expect("serializable"));
    hex::encode(h.finalize())
}

fn run_ensemble(
    kind: Kind,
    setup: &Setup,
    spec: &EnsembleSpec,
    threads: Option<usize>,
) -> Result<StabilityReport, StabilityError> {
    if spec.trials == 0 || spec.sizes.is_empty() {
        return Err(StabilityError::NoRows);
    }
    if spec.sizes.iter().any(|e| !(e.is_finite() && *e >= 0.0)) {
        return Err(StabilityError::Sizes);
    }
    if kind == Kind::Holder {
        let nest = setup.subdomains.check_nesting(setup.grid);
        if !nest.passed() {
            return Err(StabilityError::Nesting(nest.to_string()));
        }
    }
    let traj = solve_forward(setup.problem, setup.grid, setup.time).map_err(|e| StabilityError::Base(e.to_string()))?;
    let data = observe(&traj, Variant::M1, setup.subdomains, None).map_err(|e| StabilityError::Base(e.to_string()))?;
    let base = Base { data };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| StabilityError::Threads(e.to_string()))?;
    let rows: Vec<TrialRow> = pool.install(|| {
        (0..spec.trials)
            .into_par_iter()
            .map(|id| run_trial(setup, &base, spec, id))
            .collect()
    });
    let usable: Vec<&TrialRow> = rows.iter().filter(|r| r.usable()).collect();
    let fit = fit_power_law(
        &usable.iter().map(|r| r.b).collect::<Vec<_>>(),
        &usable.iter().map(|r| r.f_omega0).collect::<Vec<_>>(),
    );
    Ok(StabilityReport {
        kind,
        rows,
        fit,
        digest: digest(kind, setup, spec),
    })
}

pub fn run_lipschitz_ensemble(
    setup: &Setup,
    spec: &EnsembleSpec,
    threads: Option<usize>,
) -> Result<StabilityReport, StabilityError> {
    run_ensemble(Kind::Lipschitz, setup, spec, threads)
}

pub fn run_holder_ensemble(
    setup: &Setup,
    spec: &EnsembleSpec,
    threads: Option<usize>,
) -> Result<StabilityReport, StabilityError> {
    run_ensemble(Kind::Holder, setup, spec, threads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::TimeSpec;
    use crate::forward::{make_manufactured, ManufacturedSpec, Profile};
    use proptest::prelude::*;

    fn fixture() -> (ProblemData, Grid, TimeGrid, Subdomains) {
        let g = Grid::interval(1.0, 31).unwrap();
        let s = Subdomains::from_boxes(&g, &[(0.45, 0.55)], &[(0.3, 0.7)], &[(0.1, 0.9)]).unwrap();
        let tg = TimeGrid::new(&TimeSpec {
            horizon: 0.6,
            dt: 2e-3,
            t0: 0.3,
            delta: 0.1,
            delta0: 0.15,
            r: 0.05,
        })
        .unwrap();
        let m = make_manufactured(
            &g,
            &ManufacturedSpec {
                profile: Profile::Hump,
                d1: 0.1,
                d2: 0.05,
                a1: 0.5,
            },
        )
        .unwrap();
        (m.problem, g, tg, s)
    }

    fn spec(family: Family, sizes: Vec<f64>, trials: usize) -> EnsembleSpec {
        EnsembleSpec {
            family,
            sizes,
            trials,
            seed: 7,
        }
    }

    #[test]
    fn fit_recovers_exact_power_law() {
        let xs: Vec<f64> = (1..10).map(|i| i as f64 * 0.1).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 * x.powf(0.5)).collect();
        let f = fit_power_law(&xs, &ys).unwrap();
        assert!((f.theta - 0.5).abs() < 1e-12 && (f.intercept - 3f64.ln()).abs() < 1e-12);
        assert!(f.r2 > 1.0 - 1e-12);
        assert!(fit_power_law(&[1.0], &[2.0]).is_none());
    }

    #[test]
    fn zero_perturbation_is_degenerate() {
        let (p, g, tg, s) = fixture();
        let setup = Setup {
            problem: &p,
            grid: &g,
            time: &tg,
            subdomains: &s,
        };
        let rep =
            run_lipschitz_ensemble(&setup, &spec(Family::SingleMode { k: 1 }, vec![0.0, 1e-2], 2), Some(1)).unwrap();
        assert_eq!(rep.rows[0].status, RowStatus::Degenerate);
        assert_eq!(rep.rows[0].d1, 0.0);
        assert_eq!(rep.rows[0].d2, 0.0);
        assert!(rep.rows[1].usable());
        assert!(rep.fit.is_none());
        assert!(rep.footer().iter().any(|l| l == "insufficient rows for fit"));
        assert!(matches!(
            run_holder_ensemble(&setup, &spec(Family::SingleMode { k: 1 }, vec![1e-2], 0), None),
            Err(StabilityError::NoRows)
        ));
    }

    #[test]
    fn single_mode_ladder() {
        let (p, g, tg, s) = fixture();
        let setup = Setup {
            problem: &p,
            grid: &g,
            time: &tg,
            subdomains: &s,
        };
        let rep = run_holder_ensemble(
            &setup,
            &spec(Family::SingleMode { k: 1 }, vec![1e-3, 1e-2, 1e-1], 3),
            Some(2),
        )
        .unwrap();
        let (lo, hi, _) = rep.ratio_l_summary().unwrap();
        assert!(hi / lo <= 3.0, "{lo} {hi}");
        let fit = rep.fit.unwrap();
        assert!((fit.theta - 0.5).abs() < 0.05 && fit.r2 >= 0.95, "{fit:?}");
        // scale invariance of ratio_L at first order
        let rep2 = run_lipschitz_ensemble(
            &setup,
            &spec(Family::SingleMode { k: 1 }, vec![5e-3, 1e-2, 2e-2], 3),
            None,
        )
        .unwrap();
        let r: Vec<f64> = rep2.rows.iter().map(|r| r.ratio_l).collect();
        assert!(r.iter().all(|x| (x / r[1] - 1.0).abs() < 0.2), "{r:?}");
    }

    #[test]
    fn reports_are_thread_independent_and_recomputable() {
        let (p, g, tg, s) = fixture();
        let setup = Setup {
            problem: &p,
            grid: &g,
            time: &tg,
            subdomains: &s,
        };
        let sp = spec(Family::RandomTrig { modes: 5 }, vec![1e-3, 1e-2, 1e-1], 8);
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.csv");
        let b = dir.path().join("b.csv");
        emit_report(&run_lipschitz_ensemble(&setup, &sp, Some(1)).unwrap(), &a).unwrap();
        emit_report(&run_lipschitz_ensemble(&setup, &sp, Some(4)).unwrap(), &b).unwrap();
        let text = fs::read_to_string(&a).unwrap();
        assert_eq!(text, fs::read_to_string(&b).unwrap());

        // recompute the footer statistics from the table
        let ratios: Vec<f64> = text
            .lines()
            .skip(1)
            .filter(|l| !l.starts_with('#'))
            .map(|l| l.split(',').nth(7).unwrap().parse().unwrap())
            .collect();
        assert_eq!(ratios.len(), 8);
        let lo = ratios.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = ratios.iter().copied().fold(0.0, f64::max);
        let line = text.lines().find(|l| l.starts_with("# ratio_L")).unwrap();
        assert!(line.contains(&format!("min={lo:.6e}")) && line.contains(&format!("max={hi:.6e}")));
        assert!(hi / lo <= 10.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn random_trig_draws_are_bounded(seed in 0u64..10_000, modes in 1usize..6) {
            let g = Grid::interval(1.0, 41).unwrap();
            let sp = spec(Family::RandomTrig { modes }, vec![1.0], 1);
            let v = sp.family.draw(&g, &mut ChaCha8Rng::seed_from_u64(seed));
            let sup = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            prop_assert!((sup - 1.0).abs() < 1e-12);
            prop_assert!(v[0].abs() < 1e-12 && v[40].abs() < 1e-12);
        }
    }
}
