//! Experiment configuration: TOML with section tables, expression strings
//! for coefficient fields and `KGS__SECTION__KEY` environment overrides.

use std::path::PathBuf;

use serde::Deserialize;
use thiserror::Error;

use crate::domain::{Grid, Subdomains, TimeGrid, TimeSpec};
use crate::expr::Expression;
use crate::forward::{make_manufactured, ManufacturedSpec, Profile};
use crate::measure::Variant;
use crate::model::{AdmissibilityBounds, Coefficient, ProblemData};

pub const ENV_PREFIX: &str = "KGS__";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config: {0}")]
    Parse(String),
    #[error("config: {0}")]
    Invalid(String),
    #[error("config: cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

fn invalid<E: std::fmt::Display>(ctx: &str) -> impl FnOnce(E) -> ConfigError + '_ {
    move |e| ConfigError::Invalid(format!("{ctx}: {e}"))
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum Scalar {
    Num(f64),
    Expr(String),
}

impl Scalar {
    fn coefficient(&self, field: &str) -> Result<Coefficient, ConfigError> {
        match self {
            Scalar::Num(x) => Ok(Coefficient::Constant(*x)),
            Scalar::Expr(s) => Expression::parse(s)
                .map(Coefficient::Expr)
                .map_err(invalid(&format!("problem.{field}"))),
        }
    }

    fn field(&self, grid: &Grid, field: &str) -> Result<Vec<f64>, ConfigError> {
        Ok(self.coefficient(field)?.sample(grid, 0.0, 0))
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum PerAxis<T> {
    One(T),
    Each(Vec<T>),
}

impl<T: Copy> PerAxis<T> {
    fn expand(&self, dim: usize) -> Result<Vec<T>, ConfigError> {
        match self {
            PerAxis::One(x) => Ok(vec![*x; dim]),
            PerAxis::Each(v) if v.len() == dim => Ok(v.clone()),
            PerAxis::Each(v) => Err(ConfigError::Invalid(format!(
                "grid: {} per-axis values given for dimension {dim}",
                v.len()
            ))),
        }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub dim: usize,
    pub extent: PerAxis<f64>,
    pub n: PerAxis<usize>,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TimeConfig {
    pub horizon: f64,
    pub dt: f64,
    pub t0: f64,
    pub delta: f64,
    pub delta0: f64,
    pub r: f64,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SubdomainConfig {
    /// One `[lo, hi]` pair per axis.
    pub omega0: Vec<[f64; 2]>,
    pub omega: Vec<[f64; 2]>,
    pub omega_big: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    /// Built-in steady profile: `hump`, `standard`, `sine-water`, `constant`.
    pub manufactured: Option<String>,
    /// Profile constants for `sine-water` (`v`) and `constant` (`u`, `v`).
    pub profile_u: Option<f64>,
    pub profile_v: Option<f64>,
    /// Multiplies `v0` by `1 + c S(x)` to start away from the steady state.
    #[serde(default)]
    pub v0_modulation: f64,
    pub d1: f64,
    pub d2: f64,
    pub a1: Option<Scalar>,
    pub a2: Option<Scalar>,
    pub f: Option<Scalar>,
    pub r: Option<Scalar>,
    pub g: Option<Scalar>,
    pub h: Option<Scalar>,
    pub u0: Option<Scalar>,
    pub v0: Option<Scalar>,
    pub m: Option<f64>,
    pub m0: Option<f64>,
    pub v_bound: Option<f64>,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct WeightsConfig {
    pub lambda: f64,
    pub s_ladder: Vec<f64>,
    /// Optional expression for `d`; the built-in profile otherwise.
    pub d: Option<String>,
    pub beta: Option<f64>,
    pub r: Option<f64>,
    /// Intervals of the window grids.
    pub steps: usize,
    pub samples: usize,
    /// Zero-order coefficient in the Carleman residual.
    pub b: f64,
}

impl Default for WeightsConfig {
    fn default() -> Self {
        WeightsConfig {
            lambda: crate::weights::DEFAULT_LAMBDA,
            s_ladder: crate::weights::DEFAULT_S_LADDER.to_vec(),
            d: None,
            beta: None,
            r: None,
            steps: 100,
            samples: 6,
            b: 1.0,
        }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct MeasurementConfig {
    pub variant: String,
    pub noise: f64,
    pub seed: u64,
    /// Read data from this directory instead of generating it.
    pub data_dir: Option<PathBuf>,
}

impl Default for MeasurementConfig {
    fn default() -> Self {
        MeasurementConfig {
            variant: "M1".into(),
            noise: 0.0,
            seed: 0,
            data_dir: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    /// `variational` or `identity`.
    pub method: String,
    pub gamma: f64,
    pub tol: f64,
    pub max_iter: usize,
    /// `zero` or `truth`.
    pub init: String,
    pub eps_pos: f64,
    pub eps_neg: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            method: "variational".into(),
            gamma: 0.0,
            tol: 1e-8,
            max_iter: 200,
            init: "zero".into(),
            eps_pos: 1e-6,
            eps_neg: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct EnsembleConfig {
    /// `random` or `single`.
    pub family: String,
    pub modes: usize,
    pub k: usize,
    pub sizes: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        EnsembleConfig {
            family: "random".into(),
            modes: 5,
            k: 1,
            sizes: vec![1e-3, 1e-2, 1e-1],
            trials: 20,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub grid: GridConfig,
    pub time: TimeConfig,
    pub subdomains: SubdomainConfig,
    pub problem: ProblemConfig,
    #[serde(default)]
    pub weights: WeightsConfig,
    #[serde(default)]
    pub measurement: MeasurementConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub ensemble: EnsembleConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

fn parse_override(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

impl ExperimentConfig {
    /// Parses `text`, applying overrides given as `(SECTION__KEY, value)`.
    pub fn parse_with(text: &str, overrides: &[(String, String)]) -> Result<Self, ConfigError> {
        if overrides.is_empty() {
            return toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()));
        }
        let mut table: toml::Table = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        for (key, raw) in overrides {
            let parts: Vec<String> = key.split("__").map(str::to_lowercase).collect();
            let [section, field] = parts.as_slice() else {
                return Err(ConfigError::Parse(format!(
                    "override {ENV_PREFIX}{key}: expected SECTION__KEY"
                )));
            };
            let entry = table
                .entry(section.clone())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            let toml::Value::Table(t) = entry else {
                return Err(ConfigError::Parse(format!(
                    "override {ENV_PREFIX}{key}: [{section}] is not a table"
                )));
            };
            t.insert(field.clone(), parse_override(raw));
        }
        toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Parse(format!("after environment overrides: {e}")))
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        Self::parse_with(text, &[])
    }

    /// Reads the file and applies `KGS__SECTION__KEY` variables from the
    /// environment.
    pub fn load(path: &std::path::Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut overrides: Vec<(String, String)> = std::env::vars()
            .filter_map(|(k, v)| k.strip_prefix(ENV_PREFIX).map(|k| (k.to_string(), v)))
            .collect();
        overrides.sort();
        Self::parse_with(&text, &overrides)
    }

    /// Builds every domain object and checks cross-field constraints.
    pub fn resolve(&self) -> Result<Experiment, ConfigError> {
        let dim = self.grid.dim;
        if dim != 1 && dim != 2 {
            return Err(ConfigError::Invalid(format!("grid.dim must be 1 or 2, got {dim}")));
        }
        let grid = Grid::new(&self.grid.extent.expand(dim)?, &self.grid.n.expand(dim)?).map_err(invalid("grid"))?;
        let t = &self.time;
        let time = TimeGrid::new(&TimeSpec {
            horizon: t.horizon,
            dt: t.dt,
            t0: t.t0,
            delta: t.delta,
            delta0: t.delta0,
            r: t.r,
        })
        .map_err(invalid("time"))?;
        let boxes = |name: &str, b: &[[f64; 2]]| -> Result<Vec<(f64, f64)>, ConfigError> {
            if b.len() != dim {
                return Err(ConfigError::Invalid(format!(
                    "subdomains.{name}: {} intervals given for dimension {dim}",
                    b.len()
                )));
            }
            Ok(b.iter().map(|p| (p[0], p[1])).collect())
        };
        let sd = &self.subdomains;
        let subdomains = Subdomains::from_boxes(
            &grid,
            &boxes("omega0", &sd.omega0)?,
            &boxes("omega", &sd.omega)?,
            &boxes("omega_big", &sd.omega_big)?,
        )
        .map_err(invalid("subdomains"))?;
        let nest = subdomains.check_nesting(&grid);
        if !nest.passed() {
            return Err(ConfigError::Invalid(format!("subdomains are not nested: {nest}")));
        }
        let (problem, truth) = self.build_problem(&grid, &time)?;
        problem.validate(&grid, &time).map_err(invalid("problem"))?;
        let variant: Variant = self.measurement.variant.parse().map_err(|_| {
            ConfigError::Invalid(format!(
                "measurement.variant: unknown variant {:?}",
                self.measurement.variant
            ))
        })?;
        if !(self.measurement.noise >= 0.0 && self.measurement.noise.is_finite()) {
            return Err(ConfigError::Invalid(
                "measurement.noise must be a nonnegative number".into(),
            ));
        }
        let s = &self.solver;
        if !matches!(s.method.as_str(), "variational" | "identity") {
            return Err(ConfigError::Invalid(format!(
                "solver.method: expected variational or identity, got {:?}",
                s.method
            )));
        }
        if !matches!(s.init.as_str(), "zero" | "truth") || (s.init == "truth" && truth.is_none()) {
            return Err(ConfigError::Invalid(format!(
                "solver.init: expected zero, or truth with a manufactured problem, got {:?}",
                s.init
            )));
        }
        if !(s.gamma >= 0.0 && s.tol > 0.0 && s.eps_pos > 0.0 && s.eps_neg >= 0.0) {
            return Err(ConfigError::Invalid(
                "solver: gamma >= 0, tol > 0, eps_pos > 0, eps_neg >= 0 required".into(),
            ));
        }
        let w = &self.weights;
        if !(w.lambda > 0.0) || w.s_ladder.is_empty() || w.s_ladder.iter().any(|s| !(*s > 0.0)) {
            return Err(ConfigError::Invalid(
                "weights: lambda and every s must be positive, s_ladder nonempty".into(),
            ));
        }
        if w.steps < 4 || w.steps % 2 != 0 {
            return Err(ConfigError::Invalid(format!(
                "weights.steps must be even and at least 4, got {}",
                w.steps
            )));
        }
        match (w.beta, w.r) {
            (None, None) => {}
            (Some(b), Some(r)) if b > 0.0 && r > 0.0 && r < t.delta0 => {}
            (Some(_), Some(r)) if r >= t.delta0 => {
                return Err(ConfigError::Invalid(format!(
                    "weights.r = {r} must be below time.delta0 = {}",
                    t.delta0
                )));
            }
            _ => {
                return Err(ConfigError::Invalid(
                    "weights.beta and weights.r must be given together and positive".into(),
                ))
            }
        }
        let e = &self.ensemble;
        if !matches!(e.family.as_str(), "random" | "single") {
            return Err(ConfigError::Invalid(format!(
                "ensemble.family: expected random or single, got {:?}",
                e.family
            )));
        }
        if e.sizes.is_empty() || e.sizes.iter().any(|x| !(*x >= 0.0 && *x <= 1e-1)) {
            return Err(ConfigError::Invalid(
                "ensemble.sizes must be nonempty and lie in [0, 0.1]".into(),
            ));
        }
        if e.modes == 0 || e.k == 0 {
            return Err(ConfigError::Invalid(
                "ensemble.modes and ensemble.k must be positive".into(),
            ));
        }
        Ok(Experiment {
            config: self.clone(),
            grid,
            time,
            subdomains,
            problem,
            truth,
            variant,
        })
    }

    fn build_problem(&self, grid: &Grid, tg: &TimeGrid) -> Result<(ProblemData, Option<Vec<f64>>), ConfigError> {
        let p = &self.problem;
        if let Some(name) = &p.manufactured {
            let derived = [
                ("a2", &p.a2),
                ("f", &p.f),
                ("g", &p.g),
                ("h", &p.h),
                ("u0", &p.u0),
                ("v0", &p.v0),
                ("r", &p.r),
            ];
            if let Some((field, _)) = derived.iter().find(|(_, v)| v.is_some()) {
                return Err(ConfigError::Invalid(format!(
                    "problem.{field} cannot be set for a manufactured problem (it is derived)"
                )));
            }
            let a1 = match &p.a1 {
                None => 0.0,
                Some(Scalar::Num(x)) => *x,
                Some(Scalar::Expr(_)) => {
                    return Err(ConfigError::Invalid(
                        "problem.a1 must be a number for a manufactured problem".into(),
                    ))
                }
            };
            let profile = match name.as_str() {
                "hump" => Profile::Hump,
                "standard" => Profile::Standard,
                "sine-water" => Profile::SineWater {
                    v: p.profile_v.unwrap_or(1.5),
                },
                "constant" => Profile::Constant {
                    u: p.profile_u.unwrap_or(1.0),
                    v: p.profile_v.unwrap_or(1.0),
                },
                other => {
                    return Err(ConfigError::Invalid(format!(
                        "problem.manufactured: unknown profile {other:?}"
                    )))
                }
            };
            let m = make_manufactured(
                grid,
                &ManufacturedSpec {
                    profile,
                    d1: p.d1,
                    d2: p.d2,
                    a1,
                },
            )
            .map_err(invalid("problem"))?;
            let mut problem = m.problem;
            if p.v0_modulation != 0.0 {
                let (lx, ly) = (grid.extent(0), grid.extent(1));
                let two_d = grid.dim() == 2;
                for (k, v) in problem.v0.iter_mut().enumerate() {
                    let c = grid.coord(k);
                    let mut s = (std::f64::consts::PI * c[0] / lx).sin();
                    if two_d {
                        s *= (std::f64::consts::PI * c[1] / ly).sin();
                    }
                    *v *= 1.0 + p.v0_modulation * s;
                }
                let vmax = problem.v0.iter().fold(0.0f64, |a, b| a.max(*b));
                problem.v_bound = Some(problem.v_bound.unwrap_or(0.0).max(1.25 * vmax));
            }
            if let (Some(mm), Some(m0)) = (p.m, p.m0) {
                problem.bounds = AdmissibilityBounds::new(mm, m0).map_err(invalid("problem"))?;
            }
            if let Some(vb) = p.v_bound {
                problem.v_bound = Some(vb);
            }
            return Ok((problem, Some(m.exact_f)));
        }
        let need = |name: &str, v: &Option<Scalar>| {
            v.clone().ok_or_else(|| {
                ConfigError::Invalid(format!("problem.{name} is required without a manufactured profile"))
            })
        };
        let u0 = need("u0", &p.u0)?;
        let v0 = need("v0", &p.v0)?;
        let problem = ProblemData {
            d1: p.d1,
            d2: p.d2,
            a1: p.a1.clone().unwrap_or(Scalar::Num(0.0)).coefficient("a1")?,
            a2: p.a2.clone().unwrap_or(Scalar::Num(0.0)).coefficient("a2")?,
            f: need("f", &p.f)?.field(grid, "f")?,
            r: p.r.clone().unwrap_or(Scalar::Num(1.0)).coefficient("r")?,
            g: p.g.clone().unwrap_or_else(|| u0.clone()).coefficient("g")?,
            h: p.h.clone().unwrap_or_else(|| v0.clone()).coefficient("h")?,
            u0: u0.field(grid, "u0")?,
            v0: v0.field(grid, "v0")?,
            bounds: AdmissibilityBounds::new(p.m.unwrap_or(100.0), p.m0.unwrap_or(10.0)).map_err(invalid("problem"))?,
            v_bound: p.v_bound,
        };
        let _ = tg;
        Ok((problem, None))
    }
}

/// A validated configuration with its domain objects.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub grid: Grid,
    pub time: TimeGrid,
    pub subdomains: Subdomains,
    pub problem: ProblemData,
    /// Exact source of a manufactured problem.
    pub truth: Option<Vec<f64>>,
    pub variant: Variant,
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const BASE: &str = r#"
[grid]
dim = 1
extent = 1.0
n = 31

[time]
horizon = 0.6
dt = 0.002
t0 = 0.3
delta = 0.1
delta0 = 0.15
r = 0.05

[subdomains]
omega0 = [[0.45, 0.55]]
omega = [[0.3, 0.7]]
omega_big = [[0.1, 0.9]]

[problem]
manufactured = "hump"
d1 = 0.1
d2 = 0.05
a1 = 0.5
"#;

    #[test]
    fn parses_and_resolves_the_base_config() {
        let c = ExperimentConfig::parse(BASE).unwrap();
        assert_eq!(c.weights, WeightsConfig::default());
        let e = c.resolve().unwrap();
        assert_eq!(e.grid.len(), 31);
        assert!(e.truth.is_some());
        assert_eq!(e.variant, Variant::M1);
    }

    #[test]
    fn parse_errors_name_the_line() {
        let text = BASE.replace("dt = 0.002", "dt = 0.002\nbogus = 1");
        let msg = ExperimentConfig::parse(&text).unwrap_err().to_string();
        assert!(msg.contains("bogus") && msg.contains("line"), "{msg}");
        let msg = ExperimentConfig::parse(&BASE.replace("horizon = 0.6", "horizon = \"x\""))
            .unwrap_err()
            .to_string();
        assert!(msg.contains("line"), "{msg}");
    }

    #[test]
    fn overrides_replace_values() {
        let o = vec![
            ("GRID__N".to_string(), "41".to_string()),
            ("MEASUREMENT__VARIANT".to_string(), "M3".to_string()),
        ];
        let c = ExperimentConfig::parse_with(BASE, &o).unwrap();
        assert_eq!(c.grid.n, PerAxis::One(41));
        assert_eq!(c.measurement.variant, "M3");
        let bad = vec![("GRID".to_string(), "1".to_string())];
        assert!(ExperimentConfig::parse_with(BASE, &bad).is_err());
    }

    fn resolve_err(text: &str) -> String {
        ExperimentConfig::parse(text)
            .unwrap()
            .resolve()
            .unwrap_err()
            .to_string()
    }

    #[test]
    fn validation_messages_are_distinct() {
        let cases = [
            (
                BASE.replace("omega = [[0.3, 0.7]]", "omega = [[0.05, 0.7]]"),
                "not nested",
            ),
            (BASE.replace("r = 0.05", "r = 0.2"), "time"),
            (BASE.replace("dim = 1", "dim = 3"), "grid.dim"),
            (BASE.replace("n = 31", "n = [31, 31]"), "per-axis"),
            (
                BASE.replace("omega0 = [[0.45, 0.55]]", "omega0 = [[0.45, 0.55], [0.1, 0.2]]"),
                "subdomains.omega0",
            ),
            (BASE.replace("\"hump\"", "\"spiral\""), "unknown profile"),
            (BASE.replace("a1 = 0.5", "a1 = 0.5\nf = 1.0"), "problem.f cannot be set"),
            (
                BASE.to_string() + "\n[measurement]\nvariant = \"M9\"\n",
                "measurement.variant",
            ),
            (
                BASE.to_string() + "\n[measurement]\nnoise = -1.0\n",
                "measurement.noise",
            ),
            (BASE.to_string() + "\n[solver]\nmethod = \"newton\"\n", "solver.method"),
            (BASE.to_string() + "\n[solver]\ngamma = -1.0\n", "solver: gamma"),
            (BASE.to_string() + "\n[weights]\nr = 0.2\nbeta = 3.0\n", "weights.r"),
            (BASE.to_string() + "\n[weights]\nbeta = 3.0\n", "given together"),
            (BASE.to_string() + "\n[weights]\nsteps = 7\n", "weights.steps"),
            (BASE.to_string() + "\n[weights]\nlambda = 0.0\n", "weights: lambda"),
            (BASE.to_string() + "\n[ensemble]\nsizes = [0.5]\n", "ensemble.sizes"),
            (
                BASE.to_string() + "\n[ensemble]\nfamily = \"gauss\"\n",
                "ensemble.family",
            ),
            (BASE.to_string() + "\n[ensemble]\nmodes = 0\n", "ensemble.modes"),
            (
                BASE.replace("manufactured = \"hump\"", "f = 1.0"),
                "problem.u0 is required",
            ),
            (
                BASE.replace("manufactured = \"hump\"", "f = \"sin(\"\nu0 = 1.0\nv0 = 1.0"),
                "problem.f",
            ),
            (BASE.replace("d1 = 0.1", "d1 = -0.1"), "problem"),
        ];
        let mut seen = std::collections::HashSet::new();
        for (text, needle) in &cases {
            let msg = resolve_err(text);
            assert!(msg.contains(needle), "{needle}: {msg}");
            assert!(seen.insert(msg.clone()), "duplicate message {msg}");
        }
    }

    #[test]
    fn expression_problem() {
        let text = BASE.replace(
            "manufactured = \"hump\"",
            "f = \"1 + sin(pi*x)\"\nu0 = \"1\"\nv0 = \"2 - x*(1-x)\"\nm = 50.0\nm0 = 2.0",
        );
        let e = ExperimentConfig::parse(&text).unwrap().resolve().unwrap();
        assert!(e.truth.is_none());
        assert!((e.problem.f[15] - 2.0).abs() < 1e-12);
        assert_eq!(e.problem.bounds.m, 50.0);
    }
}
