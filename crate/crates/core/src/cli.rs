//! Batch front end: JSON run configurations, their validation, and the
//! pipelines behind each command. Every command writes `manifest.json`,
//! `<command>.csv` and, when something fails, `violations.csv`.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::bezout::{hyperbolic_grid, verify_eigen_bounds, EigenBoundsReport};
use crate::discriminant::{hyperbolicity_report, verify_aux_bounds, verify_lower_bound};
use crate::error::{Error, Result};
use crate::report::{fmt_num, linspace, write_table, BoundPoint, BoundReport, Grid};
use crate::solver::{apriori_check, energy_trace, integrate, loss_sweep, reduce, ModelProblem};
use crate::symbols::{
    builtin_unchecked, find_triple_points, hamilton_spectrum, localize, FamilyName, FamilyParams, LocalizedFamily,
    SymbolFamily, TriplePoint,
};
use crate::weights::{build, check_kappa_bounds, check_phi_bounds, check_weight_identity, seminorm_estimate, WeightParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Analyze,
    VerifyDiscriminant,
    VerifyBezout,
    VerifyWeights,
    Solve,
    LossSweep,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Analyze => "analyze",
            Command::VerifyDiscriminant => "verify-discriminant",
            Command::VerifyBezout => "verify-bezout",
            Command::VerifyWeights => "verify-weights",
            Command::Solve => "solve",
            Command::LossSweep => "loss-sweep",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Profile {
    /// Weighted checks on `t in [t_start, M^-4]`.
    #[default]
    Theory,
    /// Weighted checks on the configured time range.
    Desk,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct FamilySpec {
    pub name: FamilyName,
    pub params: FamilyParams,
}

impl Default for FamilyName {
    fn default() -> Self {
        FamilyName::TricomiProduct
    }
}

/// `[lo, hi, count]`.
pub type Range3 = (f64, f64, usize);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSpec {
    pub t: Range3,
    pub x: Range3,
    pub xi: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            t: (0.0, 0.5, 200),
            x: (-0.5, 0.5, 101),
            xi: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiscriminantSpec {
    pub eps: Vec<f64>,
    pub c_bar: f64,
}

impl Default for DiscriminantSpec {
    fn default() -> Self {
        DiscriminantSpec {
            eps: vec![0.1, 0.05, 0.01],
            c_bar: crate::discriminant::C_BAR,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BezoutSpec {
    pub a_max: f64,
    pub na: usize,
    pub nb: usize,
    #[serde(rename = "K")]
    pub k: f64,
}

impl Default for BezoutSpec {
    fn default() -> Self {
        BezoutSpec {
            a_max: 0.05,
            na: 200,
            nb: 200,
            k: 100.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PrincipalKind {
    #[default]
    Regularized,
    Raw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSpec {
    pub n_max: i64,
    pub t_start: f64,
    pub t_end: f64,
    pub samples: usize,
    pub rtol: f64,
    pub x0: Option<Vec<f64>>,
    pub principal: PrincipalKind,
    pub compensator: bool,
    /// `u`, `du/dt`, `d^2u/dt^2` at `t = 0`, the same for every mode.
    pub data: [f64; 3],
}

impl Default for SolverSpec {
    fn default() -> Self {
        SolverSpec {
            n_max: 64,
            t_start: 1e-4,
            t_end: 0.5,
            samples: 41,
            rtol: 1e-10,
            x0: None,
            principal: PrincipalKind::Regularized,
            compensator: false,
            data: [1.0, 0.3, -0.2],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeRange {
    pub from: i64,
    pub to: i64,
    pub step: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossSpec {
    pub strengths: Vec<f64>,
    pub modes: ModeRange,
    pub t_end: f64,
    pub samples: usize,
    pub rtol: f64,
}

impl Default for LossSpec {
    fn default() -> Self {
        LossSpec {
            strengths: vec![0.0, 0.5, 1.0, 2.0, 4.0],
            modes: ModeRange {
                from: 16,
                to: 256,
                step: 16,
            },
            t_end: 0.5,
            samples: 101,
            rtol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    pub identity_analytic: f64,
    pub identity_fd: f64,
    pub energy_slack: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            identity_analytic: 1e-12,
            identity_fd: 1e-6,
            energy_slack: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Checks {
    pub identity_samples: usize,
    pub seminorm_order: usize,
}

impl Default for Checks {
    fn default() -> Self {
        Checks {
            identity_samples: 1000,
            seminorm_order: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub command: Command,
    #[serde(default)]
    pub family: FamilySpec,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default)]
    pub weights: WeightParams,
    #[serde(default)]
    pub discriminant: DiscriminantSpec,
    #[serde(default)]
    pub bezout: BezoutSpec,
    #[serde(default)]
    pub solver: SolverSpec,
    #[serde(default)]
    pub loss: LossSpec,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub checks: Checks,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub output: Option<String>,
}

fn default_seed() -> u64 {
    7
}

#[derive(Debug, Clone, Copy)]
enum Kind {
    Positive,
    AtLeastOne,
    NonNegative,
    Number,
    /// Integer in `[min, max]`.
    Int(i64, i64),
    /// Number in `[min, max]`.
    Between(f64, f64),
    OneOf(&'static [&'static str]),
    Bool,
    Text,
    NumberList,
    PositiveList,
    /// `[lo, hi, count]` with `lo <= hi`, `count >= 1`.
    Range,
    /// `[u, du, ddu]`.
    Triple,
    NullOrPositive,
    /// Absent, null, or the wrapped kind.
    Optional(&'static Kind),
    Object(&'static [(&'static str, Kind)]),
}

const COMMANDS: &[&str] = &[
    "analyze",
    "verify-discriminant",
    "verify-bezout",
    "verify-weights",
    "solve",
    "loss-sweep",
];

const VALIDATION: &[(&str, Kind)] = &[
    ("t_max", Kind::Positive),
    ("nt", Kind::Int(2, 100_000)),
    ("x_half_width", Kind::NonNegative),
    ("nx", Kind::Int(1, 100_000)),
];

const FAMILY_PARAMS: &[(&str, Kind)] = &[
    ("dim", Kind::Int(1, 8)),
    ("m", Kind::Int(1, 64)),
    ("alpha_scale", Kind::NullOrPositive),
    ("a2", Kind::Number),
    ("b3", Kind::Number),
    ("e_scale", Kind::Positive),
    ("a_poly", Kind::NumberList),
    ("b_poly", Kind::NumberList),
    ("validation", Kind::Object(VALIDATION)),
];

const FAMILY: &[(&str, Kind)] = &[
    ("name", Kind::OneOf(&["tricomi_product", "bbp", "example16", "custom"])),
    ("params", Kind::Object(FAMILY_PARAMS)),
];

const GRID: &[(&str, Kind)] = &[("t", Kind::Range), ("x", Kind::Range), ("xi", Kind::Number)];

const WEIGHTS: &[(&str, Kind)] = &[
    ("M", Kind::AtLeastOne),
    ("gamma", Kind::AtLeastOne),
    ("n", Kind::Positive),
    ("theta", Kind::Positive),
    ("nu_bar", Kind::Between(1.0, 1.0)),
];

const DISCRIMINANT: &[(&str, Kind)] = &[("eps", Kind::PositiveList), ("c_bar", Kind::Positive)];

const BEZOUT: &[(&str, Kind)] = &[
    ("a_max", Kind::Positive),
    ("na", Kind::Int(1, 100_000)),
    ("nb", Kind::Int(1, 100_000)),
    ("K", Kind::NonNegative),
];

const SOLVER: &[(&str, Kind)] = &[
    ("n_max", Kind::Int(0, 256)),
    ("t_start", Kind::Positive),
    ("t_end", Kind::Between(f64::MIN_POSITIVE, 1.0)),
    ("samples", Kind::Int(2, 1_000_000)),
    ("rtol", Kind::Between(1e-13, 1e-6)),
    ("x0", Kind::Optional(&Kind::NumberList)),
    ("principal", Kind::OneOf(&["regularized", "raw"])),
    ("compensator", Kind::Bool),
    ("data", Kind::Triple),
];

const MODES: &[(&str, Kind)] = &[
    ("from", Kind::Int(0, 256)),
    ("to", Kind::Int(0, 256)),
    ("step", Kind::Int(1, 256)),
];

const LOSS: &[(&str, Kind)] = &[
    ("strengths", Kind::NumberList),
    ("modes", Kind::Object(MODES)),
    ("t_end", Kind::Between(f64::MIN_POSITIVE, 1.0)),
    ("samples", Kind::Int(2, 1_000_000)),
    ("rtol", Kind::Between(1e-13, 1e-6)),
];

const TOLERANCES: &[(&str, Kind)] = &[
    ("identity_analytic", Kind::Positive),
    ("identity_fd", Kind::Positive),
    ("energy_slack", Kind::NonNegative),
];

const CHECKS: &[(&str, Kind)] = &[("identity_samples", Kind::Int(1, 1_000_000)), ("seminorm_order", Kind::Int(0, 3))];

const TOP: &[(&str, Kind)] = &[
    ("command", Kind::OneOf(COMMANDS)),
    ("family", Kind::Object(FAMILY)),
    ("grid", Kind::Object(GRID)),
    ("weights", Kind::Object(WEIGHTS)),
    ("discriminant", Kind::Object(DISCRIMINANT)),
    ("bezout", Kind::Object(BEZOUT)),
    ("solver", Kind::Object(SOLVER)),
    ("loss", Kind::Object(LOSS)),
    ("tolerances", Kind::Object(TOLERANCES)),
    ("checks", Kind::Object(CHECKS)),
    ("seed", Kind::Int(0, i64::MAX)),
    ("output", Kind::Optional(&Kind::Text)),
];

fn check_value(path: &str, v: &Value, kind: Kind, out: &mut Vec<String>) {
    let num = v.as_f64().filter(|x| x.is_finite());
    let mut bad = |what: &str| out.push(format!("{path}: {what}, got {v}"));
    match kind {
        Kind::Positive => {
            if !num.is_some_and(|x| x > 0.0) {
                bad("must be a number > 0");
            }
        }
        Kind::AtLeastOne => {
            if !num.is_some_and(|x| x >= 1.0) {
                bad("must be a number >= 1");
            }
        }
        Kind::NonNegative => {
            if !num.is_some_and(|x| x >= 0.0) {
                bad("must be a number >= 0");
            }
        }
        Kind::Number => {
            if num.is_none() {
                bad("must be a finite number");
            }
        }
        Kind::Int(lo, hi) => {
            if !v.as_i64().is_some_and(|x| x >= lo && x <= hi) && !v.as_u64().is_some_and(|x| lo <= 0 && x <= hi as u64) {
                bad(&format!("must be an integer in [{lo}, {hi}]"));
            }
        }
        Kind::Between(lo, hi) => {
            if !num.is_some_and(|x| x >= lo && x <= hi) {
                bad(&format!("must be a number in [{lo:e}, {hi:e}]"));
            }
        }
        Kind::OneOf(choices) => {
            if !v.as_str().is_some_and(|s| choices.contains(&s)) {
                bad(&format!("must be one of {}", choices.join(", ")));
            }
        }
        Kind::Bool => {
            if !v.is_boolean() {
                bad("must be true or false");
            }
        }
        Kind::Text => {
            if !v.is_string() {
                bad("must be a string");
            }
        }
        Kind::NullOrPositive => {
            if !v.is_null() && !num.is_some_and(|x| x > 0.0) {
                bad("must be null or a number > 0");
            }
        }
        Kind::NumberList | Kind::PositiveList => {
            let ok = v.as_array().is_some_and(|a| {
                a.iter().all(|x| {
                    x.as_f64()
                        .is_some_and(|x| x.is_finite() && (matches!(kind, Kind::NumberList) || x > 0.0))
                })
            });
            if !ok {
                bad(if matches!(kind, Kind::NumberList) {
                    "must be a list of numbers"
                } else {
                    "must be a list of numbers > 0"
                });
            }
        }
        Kind::Triple => {
            let ok = v
                .as_array()
                .is_some_and(|a| a.len() == 3 && a.iter().all(|x| x.as_f64().is_some_and(f64::is_finite)));
            if !ok {
                bad("must be a list of three numbers");
            }
        }
        Kind::Range => {
            let ok = v.as_array().is_some_and(|a| {
                a.len() == 3
                    && match (a[0].as_f64(), a[1].as_f64(), a[2].as_u64()) {
                        (Some(lo), Some(hi), Some(n)) => lo.is_finite() && hi.is_finite() && lo <= hi && n >= 1,
                        _ => false,
                    }
            });
            if !ok {
                bad("must be [lo, hi, count] with lo <= hi and count >= 1");
            }
        }
        Kind::Optional(inner) => {
            if !v.is_null() {
                check_value(path, v, *inner, out)
            }
        }
        Kind::Object(fields) => check_object(path, v, fields, out),
    }
}

fn check_object(path: &str, v: &Value, fields: &[(&str, Kind)], out: &mut Vec<String>) {
    let Some(obj) = v.as_object() else {
        out.push(format!("{path}: must be an object, got {v}"));
        return;
    };
    for (key, val) in obj {
        let sub = if path.is_empty() { key.clone() } else { format!("{path}.{key}") };
        match fields.iter().find(|(k, _)| k == key) {
            Some((_, kind)) => check_value(&sub, val, *kind, out),
            None => out.push(format!(
                "{}: unknown key '{key}'",
                if path.is_empty() { "config" } else { path }
            )),
        }
    }
}

/// Every problem with a configuration text, without running anything.
pub fn validate(text: &str) -> Vec<String> {
    if text.trim().is_empty() {
        return vec!["missing command".into()];
    }
    let v: Value = match serde_json::from_str(text) {
        Ok(v) => v,
        Err(e) => return vec![format!("line {}, column {}: {e}", e.line(), e.column())],
    };
    let mut out = Vec::new();
    if v.as_object().is_some_and(|o| !o.contains_key("command")) {
        out.push("missing command".into());
    }
    check_object("", &v, TOP, &mut out);
    if let Some(m) = v.pointer("/loss/modes") {
        if let (Some(a), Some(b)) = (m.get("from").and_then(Value::as_i64), m.get("to").and_then(Value::as_i64)) {
            if a > b {
                out.push(format!("loss.modes: from ({a}) must not exceed to ({b})"));
            }
        }
    }
    if out.is_empty() {
        if let Err(e) = serde_json::from_value::<RunConfig>(v) {
            out.push(e.to_string());
        }
    }
    out
}

pub fn parse_config(text: &str) -> Result<RunConfig> {
    let diags = validate(text);
    if !diags.is_empty() {
        return Err(Error::Config(diags.join("; ")));
    }
    serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out: PathBuf,
    pub threads: Option<usize>,
    pub profile: Profile,
}

/// Tables produced by one command.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub violations: Vec<Vec<String>>,
    pub summary: Value,
    pub warnings: Vec<String>,
}

impl RunOutcome {
    pub fn exit_code(&self) -> i32 {
        if self.violations.is_empty() {
            0
        } else {
            2
        }
    }
}

fn bound_header() -> Vec<String> {
    BoundReport::csv_header().iter().map(|s| s.to_string()).collect()
}

fn absorb(report: &BoundReport, rows: &mut Vec<Vec<String>>, violations: &mut Vec<Vec<String>>) {
    rows.extend(report.csv_rows(false));
    violations.extend(report.csv_rows(true));
}

fn summary_of(report: &BoundReport) -> Value {
    json!({
        "id": report.id,
        "grid": report.grid,
        "tolerance": report.tolerance,
        "worst_margin": report.worst_margin,
        "fitted_constant": report.fitted_constant,
        "violations": report.violating_points.len(),
    })
}

fn family_of(config: &RunConfig) -> SymbolFamily {
    builtin_unchecked(config.family.name, &config.family.params)
}

fn dim_of(config: &RunConfig) -> usize {
    config.family.params.dim.max(1)
}

fn unit(dim: usize, v: f64) -> Vec<f64> {
    let mut out = vec![0.0; dim];
    out[0] = v;
    out
}

fn config_grid(config: &RunConfig, t: Range3) -> Grid {
    let d = dim_of(config);
    let g = &config.grid;
    Grid {
        ts: linspace(t.0, t.1, t.2),
        xs: linspace(g.x.0, g.x.1, g.x.2).into_iter().map(|v| unit(d, v)).collect(),
        xis: vec![unit(d, g.xi)],
    }
}

/// `Delta >= 0` of the raw family on its validation grid.
fn validation_report(f: &SymbolFamily, params: &FamilyParams) -> BoundReport {
    let v = params.validation;
    let pts = v.points(f.dim);
    let grid = Grid {
        ts: v.times().collect(),
        xs: pts.iter().map(|p| p.0.clone()).collect(),
        xis: vec![],
    };
    let points: Vec<BoundPoint> = pts
        .iter()
        .flat_map(|(x, xi)| {
            grid.ts.iter().map(move |&t| {
                let d = crate::cubic::discriminant_unchecked(f.a(t, x, xi), f.b(t, x, xi));
                BoundPoint::new(t, x, xi, d, 0.0)
            })
        })
        .collect();
    BoundReport::from_points("hyperbolicity", format!("validation grid {}x{}", v.nt, v.nx), 1e-12, f64::NAN, points)
}

fn localized(config: &RunConfig, f: &SymbolFamily) -> Result<LocalizedFamily> {
    let d = dim_of(config);
    localize(f, config.weights.m, config.weights.gamma, &unit(d, 1.0))
}

fn run_analyze(config: &RunConfig) -> Result<RunOutcome> {
    let f = family_of(config);
    let d = dim_of(config);
    let hyp = validation_report(&f, &config.family.params);
    let header: Vec<String> = ["id", "t", "x", "xi", "re", "im"].iter().map(|s| s.to_string()).collect();
    let mut rows = Vec::new();
    let mut violations: Vec<Vec<String>> = Vec::new();
    let v = config.family.params.validation;
    let grid: Vec<_> = v.points(d).into_iter().filter(|(_, xi)| xi.iter().sum::<f64>() > 0.0).collect();
    let triples = find_triple_points(&f, &grid, 1e-12);
    for p in &triples {
        rows.push(vec![
            "triple_point".into(),
            fmt_num(p.t),
            crate::report::fmt_vec(&p.x),
            crate::report::fmt_vec(&p.xi),
            fmt_num(p.tau),
            "0".into(),
        ]);
    }
    let p = triples.first().cloned().unwrap_or_else(|| TriplePoint::at(vec![0.0; d], unit(d, 1.0)));
    let eff = hamilton_spectrum(&f, &p, 1e-5)?;
    for z in &eff.eigenvalues {
        rows.push(vec![
            "hamilton_eigenvalue".into(),
            fmt_num(p.t),
            crate::report::fmt_vec(&p.x),
            crate::report::fmt_vec(&p.xi),
            fmt_num(z.re),
            fmt_num(z.im),
        ]);
    }
    let pair_row = vec![
        "effective_hyperbolicity".into(),
        fmt_num(p.t),
        crate::report::fmt_vec(&p.x),
        crate::report::fmt_vec(&p.xi),
        fmt_num(eff.e_bar),
        "0".into(),
    ];
    rows.push(pair_row.clone());
    if !eff.nonzero_pair {
        violations.push(pair_row);
    }
    let hyp_rows: Vec<Vec<String>> = hyp
        .csv_rows(true)
        .into_iter()
        .map(|r| vec![r[0].clone(), r[1].clone(), r[2].clone(), r[3].clone(), r[4].clone(), "0".into()])
        .collect();
    rows.extend(hyp_rows.iter().cloned());
    violations.extend(hyp_rows);
    Ok(RunOutcome {
        header,
        rows,
        violations,
        summary: json!({
            "family": f.label,
            "e_bar": eff.e_bar,
            "nonzero_pair": eff.nonzero_pair,
            "hamilton_eigenvalues": eff.eigenvalues.iter().map(|z| [z.re, z.im]).collect::<Vec<_>>(),
            "error_estimate": eff.error_estimate,
            "triple_points": triples.len(),
            "hyperbolicity": summary_of(&hyp),
        }),
        warnings: vec![],
    })
}

fn run_discriminant(config: &RunConfig) -> Result<RunOutcome> {
    let f = family_of(config);
    let grid = config_grid(config, config.grid.t);
    let mut rows = Vec::new();
    let mut violations = Vec::new();
    let mut reports = Vec::new();
    let hyp = hyperbolicity_report(&f, &grid);
    absorb(&hyp, &mut rows, &mut violations);
    reports.push(summary_of(&hyp));
    match localized(config, &f) {
        Ok(lf) => {
            for &eps in &config.discriminant.eps {
                let lower = verify_lower_bound(&lf, &grid, eps, config.discriminant.c_bar);
                absorb(&lower, &mut rows, &mut violations);
                reports.push(summary_of(&lower));
                let aux = verify_aux_bounds(&lf, &grid, eps);
                for r in aux.all() {
                    absorb(r, &mut rows, &mut violations);
                    reports.push(summary_of(r));
                }
            }
        }
        Err(e) if !hyp.passed() => reports.push(json!({ "localization": e.to_string() })),
        Err(e) => return Err(e),
    }
    Ok(RunOutcome {
        header: bound_header(),
        rows,
        violations,
        summary: json!({ "family": f.label, "reports": reports }),
        warnings: vec![],
    })
}

fn run_bezout(config: &RunConfig) -> Result<RunOutcome> {
    let b = &config.bezout;
    let r: EigenBoundsReport = verify_eigen_bounds(&hyperbolic_grid(b.a_max, b.na, b.nb), b.k);
    Ok(RunOutcome {
        header: EigenBoundsReport::csv_header().iter().map(|s| s.to_string()).collect(),
        rows: r.csv_rows(false),
        violations: r.csv_rows(true),
        summary: serde_json::to_value(&r).map_err(|e| Error::Io(e.to_string()))?,
        warnings: vec![],
    })
}

fn weight_window(config: &RunConfig, profile: Profile) -> (Range3, Vec<String>) {
    let t0 = config.solver.t_start;
    let n = config.grid.t.2.max(2);
    match profile {
        Profile::Theory => ((t0, config.weights.m.powi(-4).max(t0), n), vec![]),
        Profile::Desk => {
            let hi = config.grid.t.1.max(t0);
            let warn = if hi > config.weights.m.powi(-4) {
                vec![format!("time window [{t0}, {hi}] extends past M^-4")]
            } else {
                vec![]
            };
            ((t0, hi, n), warn)
        }
    }
}

fn run_weights(config: &RunConfig, profile: Profile) -> Result<RunOutcome> {
    let f = family_of(config);
    let lf = localized(config, &f)?;
    let w = build(&lf, None, config.weights)?;
    let (window, warnings) = weight_window(config, profile);
    let grid = config_grid(config, window);
    let mut rows = Vec::new();
    let mut violations = Vec::new();
    let mut reports = Vec::new();

    let phi = check_phi_bounds(&w, &grid);
    for r in [&phi.lower, &phi.scale] {
        absorb(r, &mut rows, &mut violations);
        reports.push(summary_of(r));
    }
    let kappa = check_kappa_bounds(&w, lf.e_bar(), &grid);
    for r in [&kappa.first, &kappa.second] {
        absorb(r, &mut rows, &mut violations);
        reports.push(summary_of(r));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let d = dim_of(config);
    let (x0, x1, _) = config.grid.x;
    let samples: Vec<(f64, Vec<f64>, Vec<f64>)> = (0..config.checks.identity_samples)
        .map(|_| {
            let t = rng.gen_range(config.solver.t_start..=0.5);
            let x = rng.gen_range(x0..=x1);
            let xi = rng.gen_range(1.0..=256.0);
            (t, unit(d, x), unit(d, xi))
        })
        .collect();
    let tol = &config.tolerances;
    let mut worst = (0.0f64, 0.0f64);
    let mut id_points = Vec::new();
    for s in &samples {
        let r = check_weight_identity(&w, std::slice::from_ref(s))?;
        worst = (worst.0.max(r.analytic), worst.1.max(r.finite_difference));
        id_points.push(BoundPoint::new(s.0, &s.1, &s.2, tol.identity_analytic, r.analytic));
        id_points.push(BoundPoint::new(s.0, &s.1, &s.2, tol.identity_fd, r.finite_difference));
    }
    let identity = BoundReport::from_points("weight_identity", "random samples", 0.0, f64::NAN, id_points);
    absorb(&identity, &mut rows, &mut violations);

    let omega_at = |t: f64| {
        let w = w.clone();
        move |x: &[f64], xi: &[f64]| w.omega(t, x, xi).ok()
    };
    let pts: Vec<(Vec<f64>, Vec<f64>)> = grid.xs.iter().step_by(10).map(|x| (x.clone(), grid.xis[0].clone())).collect();
    let mut seminorm: f64 = 0.0;
    for &t in grid.ts.iter().step_by((grid.ts.len() / 5).max(1)) {
        let om = omega_at(t);
        let est = seminorm_estimate(&w, &om, &om, config.checks.seminorm_order, &pts, 1e-3)?;
        seminorm = seminorm.max(est);
    }

    Ok(RunOutcome {
        header: bound_header(),
        rows,
        violations,
        summary: json!({
            "family": f.label,
            "window": [window.0, window.1],
            "reports": reports,
            "eps_bar": kappa.eps_bar,
            "kappa_lambda1_c_fit": kappa.c_fit,
            "identity_analytic": worst.0,
            "identity_finite_difference": worst.1,
            "omega_seminorm": seminorm,
        }),
        warnings,
    })
}

fn model_problem(config: &RunConfig, lf: &LocalizedFamily, n_max: i64) -> Result<ModelProblem> {
    let x0 = config.solver.x0.clone().unwrap_or_else(|| vec![0.0; dim_of(config)]);
    let p = match config.solver.principal {
        PrincipalKind::Regularized => ModelProblem::regularized(lf, &x0, n_max)?,
        PrincipalKind::Raw => ModelProblem::raw(lf, &x0, n_max)?,
    };
    Ok(if config.solver.compensator {
        p.with_compensator(lf.m, lf.e_bar())
    } else {
        p
    })
}

fn run_solve(config: &RunConfig, profile: Profile) -> Result<RunOutcome> {
    let f = family_of(config);
    let lf = localized(config, &f)?;
    let w = build(&lf, None, config.weights)?;
    let s = &config.solver;
    let p = model_problem(config, &w.lf, s.n_max)?;
    let x0 = s.x0.clone().unwrap_or_else(|| vec![0.0; dim_of(config)]);
    let (hi, warnings) = match profile {
        Profile::Theory => (config.weights.m.powi(-4).max(s.t_start), vec![]),
        Profile::Desk => (s.t_end.max(s.t_start), vec![format!("energy window [{}, {}] is a desk profile", s.t_start, s.t_end)]),
    };
    let mut times = vec![0.0];
    times.extend(linspace(s.t_start, hi, s.samples));
    let modes = p.modes();
    let c = |v: f64| Complex64::new(v, 0.0);
    let u0: Vec<_> = modes
        .iter()
        .map(|&m| reduce(p.bracket(m as f64), c(s.data[0]), c(s.data[1]), c(s.data[2])))
        .collect();
    let mut run = integrate(&p, &modes, &u0, None, &times, s.rtol)?;
    run.times.remove(0);
    for st in run.states.iter_mut() {
        st.remove(0);
    }
    let trace = energy_trace(&run, &p, &w, &x0)?;
    let ap = apriori_check(&run, &trace, &w, &x0, config.tolerances.energy_slack)?;

    let header: Vec<String> = [
        "id", "t", "xi", "re_u1", "im_u1", "re_u2", "im_u2", "re_u3", "im_u3", "e", "e1", "e2",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    let mut rows = Vec::new();
    for (i, &t) in run.times.iter().enumerate() {
        for (k, &m) in run.modes.iter().enumerate() {
            let u = run.states[k][i];
            let mut row = vec!["energy_decay".to_string(), fmt_num(t), m.to_string()];
            for z in u {
                row.push(fmt_num(z.re));
                row.push(fmt_num(z.im));
            }
            row.extend([trace.e[i], trace.e1[i], trace.e2[i]].map(fmt_num));
            rows.push(row);
        }
    }
    let mut violations = Vec::new();
    for i in 1..trace.e.len() {
        if trace.e[i] > trace.e[i - 1] * (1.0 + config.tolerances.energy_slack) {
            let mut row = vec!["energy_decay".to_string(), fmt_num(trace.times[i]), "all".into()];
            row.extend(std::iter::repeat_n(String::new(), 6));
            row.extend([trace.e[i], trace.e1[i], trace.e2[i]].map(fmt_num));
            violations.push(row);
        }
    }
    Ok(RunOutcome {
        header,
        rows,
        violations,
        summary: json!({
            "family": f.label,
            "modes": modes.len(),
            "window": [s.t_start, hi],
            "apriori": ap,
            "amplification_max": trace.amplification.iter().map(|a| a.1).fold(0.0, f64::max),
        }),
        warnings,
    })
}

fn run_loss(config: &RunConfig) -> Result<RunOutcome> {
    let f = family_of(config);
    let lf = localized(config, &f)?;
    let l = &config.loss;
    let modes: Vec<i64> = (l.modes.from..=l.modes.to).step_by(l.modes.step.max(1) as usize).collect();
    let p = model_problem(config, &lf, l.modes.to)?;
    let sweep = loss_sweep(&p, &l.strengths, &modes, l.t_end, l.samples, l.rtol)?;
    let header: Vec<String> = ["id", "c", "xi", "amplification", "s"].iter().map(|s| s.to_string()).collect();
    let mut rows = Vec::new();
    let mut violations = Vec::new();
    for (k, r) in sweep.rows.iter().enumerate() {
        for &(m, g) in &r.amplification {
            rows.push(vec!["loss_trend".into(), fmt_num(r.c), m.to_string(), fmt_num(g), fmt_num(r.s)]);
        }
        for &m in &r.failed_modes {
            let row = vec!["loss_trend".into(), fmt_num(r.c), m.to_string(), "NaN".into(), fmt_num(r.s)];
            rows.push(row.clone());
            violations.push(row);
        }
        let decreasing = k > 0 && !(r.s >= sweep.rows[k - 1].s - 1e-9);
        if decreasing || r.s.is_nan() {
            violations.push(vec!["loss_trend".into(), fmt_num(r.c), "all".into(), String::new(), fmt_num(r.s)]);
        }
    }
    Ok(RunOutcome {
        header,
        rows,
        violations,
        summary: json!({
            "family": f.label,
            "exponents": sweep.exponents(),
            "modes": modes,
        }),
        warnings: vec![],
    })
}

fn execute(config: &RunConfig, profile: Profile) -> Result<RunOutcome> {
    match config.command {
        Command::Analyze => run_analyze(config),
        Command::VerifyDiscriminant => run_discriminant(config),
        Command::VerifyBezout => run_bezout(config),
        Command::VerifyWeights => run_weights(config, profile),
        Command::Solve => run_solve(config, profile),
        Command::LossSweep => run_loss(config),
    }
}

fn write_csv(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let file = fs::File::create(path)?;
    let h: Vec<&str> = header.iter().map(String::as_str).collect();
    write_table(std::io::BufWriter::new(file), &h, rows)
}

/// Runs the configured command and writes its files into `opts.out`.
pub fn run(config: &RunConfig, opts: &RunOptions) -> Result<RunOutcome> {
    let start = Instant::now();
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(k) = opts.threads {
        builder = builder.num_threads(k);
    }
    let pool = builder.build().map_err(|e| Error::Config(e.to_string()))?;
    let outcome = pool.install(|| execute(config, opts.profile))?;
    let elapsed = start.elapsed().as_secs_f64();

    fs::create_dir_all(&opts.out)?;
    let name = config.command.name();
    write_csv(&opts.out.join(format!("{name}.csv")), &outcome.header, &outcome.rows)?;
    let vpath = opts.out.join("violations.csv");
    if outcome.violations.is_empty() {
        if vpath.exists() {
            fs::remove_file(&vpath)?;
        }
    } else {
        write_csv(&vpath, &outcome.header, &outcome.violations)?;
    }
    let timestamp = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let manifest = json!({
        "version": env!("CARGO_PKG_VERSION"),
        "command": name,
        "profile": opts.profile,
        "threads": opts.threads,
        "config": config,
        "timings": { "total_seconds": elapsed },
        "timestamp": timestamp,
        "exit_code": outcome.exit_code(),
        "violations": outcome.violations.len(),
        "warnings": outcome.warnings,
        "summary": outcome.summary,
        "files": {
            "data": format!("{name}.csv"),
            "violations": if outcome.violations.is_empty() { Value::Null } else { json!("violations.csv") },
        },
    });
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Io(e.to_string()))?;
    fs::write(opts.out.join("manifest.json"), text)?;
    Ok(outcome)
}

/// A constant lower-order coefficient, for building problems by hand.
pub fn constant_coefficient(v: Complex64) -> crate::solver::Coefficient {
    Arc::new(move |_, _| v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagnostics() {
        assert_eq!(validate(""), vec!["missing command".to_string()]);
        assert_eq!(validate("{}"), vec!["missing command".to_string()]);
        let d = validate(r#"{"command": "solve", "weights": {"M": -1}}"#);
        assert_eq!(d.len(), 1);
        assert!(d[0].starts_with("weights.M:"), "{d:?}");
        let d = validate(r#"{"command": "solve", "bogus": 1, "solver": {"rtol": 1e-2, "what": 0}}"#);
        assert_eq!(d.len(), 3, "{d:?}");
        assert!(validate(r#"{"command": "verify-bezout"}"#).is_empty());
        let d = validate("{\n  \"command\": \n}");
        assert!(d[0].starts_with("line 3"), "{d:?}");
    }

    #[test]
    fn defaults_round_trip() {
        let c = parse_config(r#"{"command": "loss-sweep", "family": {"name": "example16"}}"#).unwrap();
        assert_eq!(c.loss.modes.to, 256);
        assert_eq!(c.family.name, FamilyName::Example16);
        let text = serde_json::to_string(&c).unwrap();
        assert!(validate(&text).is_empty(), "{:?}", validate(&text));
    }
}
