//! Scenario documents: the JSON schema consumed by `pflow run`, validation
//! with path-naming errors, and the embedded presets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::system::{ControlRange, ControlSignal, LinearSystem};

/// One scenario: a system, a control signal and the analyses to run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub system: SystemSpec,
    #[serde(default)]
    pub control: ControlSpec,
    #[serde(default)]
    pub analyses: Vec<Analysis>,
    #[serde(default = "default_output_dir")]
    pub output_dir: String,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

fn default_output_dir() -> String {
    "out".into()
}

fn default_seed() -> u64 {
    20240611
}

/// A = `a` (n×n rows), B = `b` (n×m rows), U = `u`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSpec {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub u: ControlRange,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ControlSpec {
    /// An empty value means u ≡ 0.
    Constant {
        #[serde(default)]
        value: Vec<f64>,
    },
    Piecewise {
        breakpoints: Vec<f64>,
        values: Vec<Vec<f64>>,
    },
    Periodic {
        period: f64,
        #[serde(default)]
        breakpoints: Vec<f64>,
        values: Vec<Vec<f64>>,
    },
}

impl Default for ControlSpec {
    fn default() -> Self {
        ControlSpec::Constant { value: Vec::new() }
    }
}

macro_rules! defaults {
    ($($f:ident: $t:ty = $v:expr;)*) => {
        $(fn $f() -> $t { $v })*
    };
}

defaults! {
    d_group_tol: f64 = crate::spectral::DEFAULT_GROUP_TOL;
    d_t_end: f64 = 10.0;
    d_dt: f64 = 0.05;
    d_sphere_t_end: f64 = 20.0;
    d_horizon: f64 = 50.0;
    d_tol: f64 = 0.05;
    d_samples8: usize = 8;
    d_cells: usize = 201;
    d_radius: f64 = 2.0;
    d_reach_horizon: f64 = 20.0;
    d_reach_tau: f64 = 1.0;
    d_chain_tau: f64 = 1.5;
    d_one: f64 = 1.0;
    d_levels: usize = 9;
    d_true: bool = true;
    d_mesh_level: usize = 5;
    d_samples50: usize = 50;
    d_t_total: f64 = 200.0;
    d_t_tail: f64 = 50.0;
    d_cell: f64 = 0.05;
    d_max_inconclusive: f64 = 0.1;
    d_trajectories: usize = 12;
    d_delta: f64 = 1e-3;
    d_alpha: f64 = -0.5;
    d_stable_horizon: f64 = 30.0;
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointFrame {
    /// Coordinates on Sⁿ ⊂ ℝⁿ⁺¹ (normalized on input).
    #[default]
    Sphere,
    /// Points of ℝⁿ mapped to the upper hemisphere.
    Chart,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendSpec {
    #[default]
    ExactLift,
    Intrinsic,
}

/// Requested analysis with its parameters; every parameter except the
/// Lyapunov exponent λ_{i₀} has a default.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Analysis {
    Decompose {
        #[serde(default = "d_group_tol")]
        group_tol: f64,
    },
    Simulate {
        /// Empty means the origin.
        #[serde(default)]
        x0: Vec<f64>,
        #[serde(default = "d_t_end")]
        t_end: f64,
        #[serde(default = "d_dt")]
        dt: f64,
    },
    SphereSim {
        /// Empty means a ring of chart points around the origin.
        #[serde(default)]
        initial: Vec<Vec<f64>>,
        #[serde(default)]
        frame: PointFrame,
        #[serde(default = "d_sphere_t_end")]
        t_end: f64,
        #[serde(default = "d_dt")]
        dt: f64,
        #[serde(default)]
        backend: BackendSpec,
        /// Asserts a return time of this value (± 1e-3) for every trajectory.
        #[serde(default)]
        expect_period: Option<f64>,
    },
    Exponents {
        lambda: f64,
        /// Points of _S L(λ)^∞ as ℝⁿ directions; empty means sampled.
        #[serde(default)]
        base_points: Vec<Vec<f64>>,
        #[serde(default = "d_samples8")]
        samples: usize,
        #[serde(default = "d_horizon")]
        horizon: f64,
        #[serde(default = "d_tol")]
        tolerance: f64,
        /// Keep the propagated vector in its subbundle (suppresses rounding drift).
        #[serde(default = "d_true")]
        reproject: bool,
    },
    Selgrade {
        lambda: f64,
        #[serde(default)]
        base_point: Vec<f64>,
    },
    Reach {
        #[serde(default = "d_cells")]
        cells: usize,
        #[serde(default = "d_radius")]
        radius: f64,
        #[serde(default = "d_reach_horizon")]
        horizon: f64,
        #[serde(default = "d_reach_tau")]
        tau: f64,
    },
    Chain {
        #[serde(default = "d_cells")]
        cells: usize,
        #[serde(default = "d_radius")]
        radius: f64,
        #[serde(default = "d_chain_tau")]
        tau: f64,
        /// ε as a multiple of the cell diameter.
        #[serde(default = "d_one")]
        eps_factor: f64,
        #[serde(default = "d_levels")]
        control_levels: usize,
        #[serde(default = "d_true")]
        sphere: bool,
        #[serde(default = "d_mesh_level")]
        mesh_level: usize,
        #[serde(default = "d_one")]
        sphere_tau: f64,
    },
    Limits {
        #[serde(default = "d_samples50")]
        samples: usize,
        #[serde(default = "d_t_total")]
        t_total: f64,
        #[serde(default = "d_t_tail")]
        t_tail: f64,
        /// Resolution attributed to analytic sets at infinity.
        #[serde(default = "d_cell")]
        cell: f64,
        #[serde(default = "d_max_inconclusive")]
        max_inconclusive: f64,
    },
    Portrait {
        /// Plotted coordinates of the sphere points (2 or 3); empty means (s₁, s₂) for n ≤ 2.
        #[serde(default)]
        coords: Vec<usize>,
        #[serde(default = "d_trajectories")]
        trajectories: usize,
        #[serde(default = "d_sphere_t_end")]
        t_end: f64,
    },
    VerifyStable {
        lambda: f64,
        #[serde(default)]
        base_point: Vec<f64>,
        #[serde(default = "d_delta")]
        delta: f64,
        #[serde(default = "d_alpha")]
        alpha: f64,
        #[serde(default = "d_stable_horizon")]
        horizon: f64,
        /// Eigenvector z₀ for the divergence example; skipped when empty.
        #[serde(default)]
        divergence: Vec<f64>,
        #[serde(default = "d_one")]
        tau: f64,
    },
}

impl Analysis {
    pub fn kind(&self) -> &'static str {
        match self {
            Analysis::Decompose { .. } => "decompose",
            Analysis::Simulate { .. } => "simulate",
            Analysis::SphereSim { .. } => "sphere-sim",
            Analysis::Exponents { .. } => "exponents",
            Analysis::Selgrade { .. } => "selgrade",
            Analysis::Reach { .. } => "reach",
            Analysis::Chain { .. } => "chain",
            Analysis::Limits { .. } => "limits",
            Analysis::Portrait { .. } => "portrait",
            Analysis::VerifyStable { .. } => "verify-stable",
        }
    }

    /// Position in the dependency order used by the runner.
    pub fn rank(&self) -> u8 {
        match self {
            Analysis::Decompose { .. } => 0,
            Analysis::Simulate { .. } | Analysis::SphereSim { .. } => 1,
            Analysis::Selgrade { .. } => 2,
            Analysis::Exponents { .. } | Analysis::VerifyStable { .. } => 3,
            Analysis::Reach { .. } => 4,
            Analysis::Chain { .. } => 5,
            Analysis::Limits { .. } => 6,
            Analysis::Portrait { .. } => 7,
        }
    }

    /// Default parameters for an analysis named on the command line.
    /// Analyses that need λ_{i₀} are not constructible this way.
    pub fn from_kind(kind: &str) -> Result<Analysis> {
        let doc = format!("{{\"kind\": \"{kind}\"}}");
        serde_json::from_str(&doc).map_err(|e| Error::Schema {
            path: "analyses".into(),
            message: format!("cannot create `{kind}` with default parameters: {e}"),
        })
    }
}

pub const ANALYSIS_KINDS: [&str; 10] = [
    "decompose",
    "simulate",
    "sphere-sim",
    "exponents",
    "selgrade",
    "reach",
    "chain",
    "limits",
    "portrait",
    "verify-stable",
];

fn schema(path: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Schema {
        path: path.into(),
        message: message.into(),
    }
}

/// Parses and validates a scenario document, filling in every default.
pub fn parse_scenario(text: &str) -> Result<Scenario> {
    let doc: serde_json::Value = serde_json::from_str(text).map_err(|e| schema("", e.to_string()))?;
    let mut sc: Scenario = serde_path_to_error::deserialize(&doc).map_err(|e| {
        let path = e.path().to_string();
        let path = refine_analysis_path(&doc, &path).unwrap_or(path);
        schema(if path == "." { String::new() } else { path }, e.into_inner().to_string())
    })?;
    sc.fill_defaults();
    sc.validate()?;
    Ok(sc)
}

/// Tagged analyses are buffered before deserialization, so errors stop at
/// `analyses[k]`; find the field whose removal clears the error.
fn refine_analysis_path(doc: &serde_json::Value, path: &str) -> Option<String> {
    let k: usize = path.strip_prefix("analyses[")?.strip_suffix(']')?.parse().ok()?;
    let obj = doc.get("analyses")?.get(k)?.as_object()?;
    obj.keys().filter(|f| *f != "kind").find_map(|f| {
        let mut reduced = obj.clone();
        reduced.remove(f);
        match serde_json::from_value::<Analysis>(serde_json::Value::Object(reduced)) {
            Ok(_) => Some(format!("{path}.{f}")),
            Err(e) if e.to_string().contains(&format!("missing field `{f}`")) => Some(format!("{path}.{f}")),
            Err(_) => None,
        }
    })
}

impl Scenario {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    fn fill_defaults(&mut self) {
        let n = self.system.a.len();
        let m = self.system.u.dim();
        if let ControlSpec::Constant { value } = &mut self.control {
            if value.is_empty() {
                *value = vec![0.0; m];
            }
        }
        for a in &mut self.analyses {
            if let Analysis::Simulate { x0, .. } = a {
                if x0.is_empty() {
                    *x0 = vec![0.0; n];
                }
            }
        }
    }

    /// Dimension and parameter checks; errors name the offending path.
    pub fn validate(&self) -> Result<()> {
        let n = self.system.a.len();
        if n == 0 {
            return Err(schema("system.a", "A must be a non-empty square matrix"));
        }
        for (i, row) in self.system.a.iter().enumerate() {
            if row.len() != n {
                return Err(Error::dim(format!("system.a[{i}] (row length)"), n, row.len()));
            }
        }
        if self.system.b.len() != n {
            return Err(Error::dim("system.b (row count)", n, self.system.b.len()));
        }
        let m = self.system.u.dim();
        for (i, row) in self.system.b.iter().enumerate() {
            if row.len() != m {
                return Err(Error::dim(format!("system.b[{i}] (columns = dim U)"), m, row.len()));
            }
        }
        self.system.u.validate().map_err(|e| schema("system.u", e.to_string()))?;
        let sys = self.linear_system().map_err(|e| schema("system", e.to_string()))?;
        let u = self.control_signal().map_err(|e| schema("control", e.to_string()))?;
        u.validate_in(sys.range()).map_err(|e| schema("control", e.to_string()))?;
        for (k, a) in self.analyses.iter().enumerate() {
            let p = |f: &str| format!("analyses[{k}].{f}");
            let positive = |v: f64, f: &str| {
                if v > 0.0 && v.is_finite() {
                    Ok(())
                } else {
                    Err(schema(p(f), "must be positive"))
                }
            };
            match a {
                Analysis::Decompose { group_tol } => positive(*group_tol, "group_tol")?,
                Analysis::Simulate { x0, t_end, dt } => {
                    if x0.len() != n {
                        return Err(Error::dim(p("x0"), n, x0.len()));
                    }
                    positive(*t_end, "t_end")?;
                    positive(*dt, "dt")?;
                }
                Analysis::SphereSim {
                    initial,
                    frame,
                    t_end,
                    dt,
                    ..
                } => {
                    let d = if *frame == PointFrame::Sphere { n + 1 } else { n };
                    for (i, x) in initial.iter().enumerate() {
                        if x.len() != d {
                            return Err(Error::dim(p(&format!("initial[{i}]")), d, x.len()));
                        }
                    }
                    positive(*t_end, "t_end")?;
                    positive(*dt, "dt")?;
                }
                Analysis::Exponents {
                    lambda,
                    base_points,
                    horizon,
                    tolerance,
                    samples,
                    ..
                } => {
                    if *lambda == 0.0 {
                        return Err(schema(p("lambda"), "λ_i0 must be nonzero"));
                    }
                    for (i, x) in base_points.iter().enumerate() {
                        if x.len() != n {
                            return Err(Error::dim(p(&format!("base_points[{i}]")), n, x.len()));
                        }
                    }
                    if *samples == 0 {
                        return Err(schema(p("samples"), "must be at least 1"));
                    }
                    positive(*horizon, "horizon")?;
                    positive(*tolerance, "tolerance")?;
                }
                Analysis::Selgrade { lambda, base_point } | Analysis::VerifyStable { lambda, base_point, .. } => {
                    if *lambda == 0.0 {
                        return Err(schema(p("lambda"), "λ_i0 must be nonzero"));
                    }
                    if !base_point.is_empty() && base_point.len() != n {
                        return Err(Error::dim(p("base_point"), n, base_point.len()));
                    }
                    if let Analysis::VerifyStable {
                        horizon,
                        divergence,
                        tau,
                        ..
                    } = a
                    {
                        positive(*horizon, "horizon")?;
                        positive(*tau, "tau")?;
                        if !divergence.is_empty() && divergence.len() != n {
                            return Err(Error::dim(p("divergence"), n, divergence.len()));
                        }
                    }
                }
                Analysis::Reach {
                    cells,
                    radius,
                    horizon,
                    tau,
                } => {
                    if n > 4 {
                        return Err(schema(p("kind"), "grids support n ≤ 4"));
                    }
                    if *cells == 0 {
                        return Err(schema(p("cells"), "must be at least 1"));
                    }
                    positive(*radius, "radius")?;
                    positive(*horizon, "horizon")?;
                    positive(*tau, "tau")?;
                }
                Analysis::Chain {
                    cells,
                    radius,
                    tau,
                    eps_factor,
                    control_levels,
                    mesh_level,
                    sphere_tau,
                    ..
                } => {
                    if n > 4 {
                        return Err(schema(p("kind"), "grids support n ≤ 4"));
                    }
                    if *cells == 0 {
                        return Err(schema(p("cells"), "must be at least 1"));
                    }
                    positive(*radius, "radius")?;
                    positive(*tau, "tau")?;
                    positive(*sphere_tau, "sphere_tau")?;
                    if !(*eps_factor >= 1.0) {
                        return Err(schema(p("eps_factor"), "ε must be at least one cell diameter"));
                    }
                    if *control_levels < 2 {
                        return Err(schema(p("control_levels"), "must be at least 2"));
                    }
                    if *mesh_level > 7 {
                        return Err(schema(p("mesh_level"), "at most 7"));
                    }
                }
                Analysis::Limits {
                    samples,
                    t_total,
                    t_tail,
                    cell,
                    max_inconclusive,
                } => {
                    if *samples == 0 {
                        return Err(schema(p("samples"), "must be at least 1"));
                    }
                    positive(*t_tail, "t_tail")?;
                    positive(*cell, "cell")?;
                    if !(t_total > t_tail) {
                        return Err(schema(p("t_total"), "must exceed t_tail"));
                    }
                    if !(0.0..=1.0).contains(max_inconclusive) {
                        return Err(schema(p("max_inconclusive"), "must lie in [0, 1]"));
                    }
                }
                Analysis::Portrait { coords, t_end, .. } => {
                    positive(*t_end, "t_end")?;
                    if coords.is_empty() && n > 2 {
                        return Err(schema(
                            p("coords"),
                            format!("data has dimension {} > 3; choose 2 or 3 coordinates", n + 1),
                        ));
                    }
                    if !coords.is_empty() && !(2..=3).contains(&coords.len()) {
                        return Err(schema(p("coords"), "select 2 or 3 coordinates"));
                    }
                    if let Some(c) = coords.iter().find(|&&c| c > n) {
                        return Err(schema(p("coords"), format!("coordinate {c} out of range 0..={n}")));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn linear_system(&self) -> Result<LinearSystem> {
        LinearSystem::from_rows(&self.system.a, &self.system.b, self.system.u.clone())
    }

    pub fn control_signal(&self) -> Result<ControlSignal> {
        match &self.control {
            ControlSpec::Constant { value } => Ok(ControlSignal::constant(value.clone())),
            ControlSpec::Piecewise { breakpoints, values } => ControlSignal::piecewise(breakpoints.clone(), values.clone()),
            ControlSpec::Periodic {
                period,
                breakpoints,
                values,
            } => ControlSignal::periodic(*period, breakpoints.clone(), values.clone()),
        }
    }
}

/// Embedded scenarios for the five worked examples.
pub mod presets {
    use super::*;

    const PRESETS: [(&str, &str); 5] = [
        ("example1", include_str!("../presets/example1.json")),
        ("example2", include_str!("../presets/example2.json")),
        ("example3", include_str!("../presets/example3.json")),
        ("example4", include_str!("../presets/example4.json")),
        ("example5", include_str!("../presets/example5.json")),
    ];

    pub fn names() -> Vec<&'static str> {
        PRESETS.iter().map(|p| p.0).collect()
    }

    pub fn text(name: &str) -> Option<&'static str> {
        PRESETS.iter().find(|p| p.0 == name).map(|p| p.1)
    }

    pub fn get(name: &str) -> Result<Scenario> {
        let t = text(name).ok_or_else(|| {
            Error::input(format!("unknown preset `{name}` (available: {})", names().join(", ")))
        })?;
        parse_scenario(t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_example1_system() {
        let sc = presets::get("example1").unwrap();
        let sys = sc.linear_system().unwrap();
        assert_eq!(sys.a(), &nalgebra::DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]));
        assert_eq!(sys.b(), &nalgebra::DMatrix::from_row_slice(2, 1, &[1.0, 1.0]));
        assert_eq!(sys.range(), &ControlRange::symmetric_box(1, 1.0));
    }

    #[test]
    fn all_presets_round_trip() {
        for name in presets::names() {
            let sc = presets::get(name).unwrap();
            assert_eq!(parse_scenario(&sc.to_json()).unwrap(), sc, "{name}");
        }
    }

    #[test]
    fn empty_analyses_are_valid() {
        let sc = parse_scenario(
            r#"{"name": "x", "system": {"a": [[0]], "b": [[1]], "u": {"type": "box", "lower": [-1], "upper": [1]}}}"#,
        )
        .unwrap();
        assert!(sc.analyses.is_empty());
        assert_eq!(sc.control, ControlSpec::Constant { value: vec![0.0] });
        assert_eq!(sc.output_dir, "out");
    }

    #[test]
    fn wrong_b_rows_is_dimension_error() {
        let err = parse_scenario(
            r#"{"name": "x", "system": {"a": [[1, 0], [0, 1]], "b": [[1]], "u": {"type": "box", "lower": [-1], "upper": [1]}}}"#,
        )
        .unwrap_err();
        match err {
            Error::Dimension { what, expected, actual } => {
                assert!(what.contains("system.b"));
                assert_eq!((expected.as_str(), actual.as_str()), ("2", "1"));
            }
            e => panic!("{e:?}"),
        }
    }

    #[test]
    fn schema_errors_name_the_path() {
        let err = parse_scenario(
            r#"{"name": "x", "system": {"a": [[1]], "b": [[1]], "u": {"type": "box", "lower": [-1], "upper": [1]}},
                "analyses": [{"kind": "decompose"}, {"kind": "exponents", "horizon": 5}]}"#,
        )
        .unwrap_err();
        let Error::Schema { path, message } = err else { panic!() };
        assert_eq!(path, "analyses[1]");
        assert!(message.contains("lambda"), "{message}");
        let err = parse_scenario(
            r#"{"name": "x", "system": {"a": [[1]], "b": [[1]], "u": {"type": "box", "lower": [-1], "upper": [1]}},
                "analyses": [{"kind": "reach", "cells": "many"}]}"#,
        )
        .unwrap_err();
        let Error::Schema { path, .. } = err else { panic!() };
        assert_eq!(path, "analyses[0].cells");
        let err = parse_scenario(
            r#"{"name": "x", "system": {"a": [[1]], "b": [[1]], "u": {"type": "box", "lower": [-1], "upper": [1]}},
                "analyses": [{"kind": "chain", "eps_factor": 0.5}]}"#,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Schema { ref path, .. } if path == "analyses[0].eps_factor"));
    }

    #[test]
    fn from_kind_defaults() {
        assert!(matches!(Analysis::from_kind("reach").unwrap(), Analysis::Reach { cells: 201, .. }));
        assert!(Analysis::from_kind("exponents").is_err());
        assert!(Analysis::from_kind("bogus").is_err());
    }
}
