//! Run configuration, model files, scenario dispatch and output emission.
//!
//! A run is described by a [`RunConfig`] (parsed from a TOML file or assembled by the CLI)
//! and executed by [`run_scenario`], which writes its artifacts plus a JSON manifest with
//! SHA-256 checksums. Floats in CSV output always carry 17 significant digits, so identical
//! inputs and seeds give byte-identical files.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::expr::Expr;
use crate::field::{encode_tigrid, read_tigrid, Field, GridField, GridSpec};
use crate::inversion::{
    poincare_check, relative_error, width, ForwardOperator, RecoveryProblem, Scenario,
};
use crate::linalg::Vec3;
use crate::material_model::{MaterialModel, Mode, Param};
use crate::parabolic_calc::{
    inverse_parabolic, ne2_parabolic_symbol, parametrix_residual, smk_membership_test, HeatProblem, MembershipConfig,
    ParabolicSymbol, SmkSymbol, XDependence,
};
use crate::pseudolin::{differences, param_index, Cutoff, CutoffProfile, JacobianSource, PseudoLin, RayQuadrature, SphereRule};
use crate::raytracer::{sphere_point, PhasePoint, RayTracer};
use crate::symbols::{loglog_fit, principal_prediction, probe_symbol, ProbeConfig};

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Validation(Vec<String>),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Numerical(_) => 3,
            RunError::Validation(_) | RunError::Io(_) => 2,
        }
    }

    fn invalid(msg: impl Into<String>) -> Self {
        RunError::Validation(vec![msg.into()])
    }
}

impl From<std::io::Error> for RunError {
    fn from(e: std::io::Error) -> Self {
        RunError::Io(e.to_string())
    }
}

fn numerical<E: std::fmt::Display>(context: &str) -> impl Fn(E) -> RunError + '_ {
    move |e| RunError::Numerical(format!("{context}: {e}"))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Forward,
    Lens,
    Pseudo,
    SymbolCheck,
    ParabolicCheck,
    Poincare,
    Width,
    Invert,
    SuCheck,
}

impl Command {
    pub const ALL: [Command; 9] = [
        Command::Forward,
        Command::Lens,
        Command::Pseudo,
        Command::SymbolCheck,
        Command::ParabolicCheck,
        Command::Poincare,
        Command::Width,
        Command::Invert,
        Command::SuCheck,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::Forward => "forward",
            Command::Lens => "lens",
            Command::Pseudo => "pseudo",
            Command::SymbolCheck => "symbol-check",
            Command::ParabolicCheck => "parabolic-check",
            Command::Poincare => "poincare",
            Command::Width => "width",
            Command::Invert => "invert",
            Command::SuCheck => "su-check",
        }
    }

    pub fn parse(s: &str) -> Option<Command> {
        Command::ALL.into_iter().find(|c| c.name() == s)
    }

    fn default_output(self) -> &'static str {
        match self {
            Command::Forward => "lens.csv",
            Command::Lens => "lens_check.csv",
            Command::Pseudo => "Nu.tigrid",
            Command::SymbolCheck => "symbols.csv",
            Command::ParabolicCheck => "parabolic.csv",
            Command::Poincare => "poincare.csv",
            Command::Width => "width.csv",
            Command::Invert => "recon.tigrid",
            Command::SuCheck => "su.csv",
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct RunSection {
    pub command: Command,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub output: String,
    /// Secondary CSV (inversion report, pseudo-data residuals).
    pub report: Option<String>,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct ModelSection {
    pub base: Option<PathBuf>,
    pub pert: Option<PathBuf>,
    pub field: Option<PathBuf>,
    pub rays: Option<PathBuf>,
}

#[derive(Clone, Debug, Serialize)]
pub struct RaytracerSection {
    pub mode: String,
    pub n_rays: usize,
    pub ode_tol: f64,
    pub table_spacing: f64,
    pub su_time: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct PseudolinSection {
    pub nu: String,
    pub tilde: bool,
    pub eps: f64,
    pub profile: String,
    pub sphere_n_s: usize,
    pub sphere_n_phi: usize,
    /// `exact` restarts the perturbed flow at every ray node; `background` reuses the base flow's Jacobian.
    pub source: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct SymbolsSection {
    pub x: [f64; 3],
    pub probe_h: f64,
    /// Probe sphere quadrature; the azimuth must resolve the cutoff transition.
    pub probe_n_s: usize,
    pub probe_n_phi: usize,
    /// Fractions of the largest admissible |ζ| at which to probe.
    pub fractions: Vec<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ParabolicSection {
    pub case: String,
    pub pm: Option<String>,
    pub pm1: Option<String>,
    pub m: f64,
    pub n: usize,
    pub x: [f64; 3],
    pub zetas: Vec<f64>,
    pub sin_theta: f64,
    pub width: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct InversionSection {
    pub scenario: String,
    pub grid: usize,
    pub half_width: f64,
    pub lambda_reg: Option<f64>,
    pub cg_tol: f64,
    pub max_iter: usize,
    /// Relative threshold for supports (fraction of max |u|).
    pub threshold: f64,
    pub n_rot: usize,
    pub width: Option<f64>,
    pub min_sin: f64,
    pub zero_data_check: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunConfig {
    pub run: RunSection,
    pub model: ModelSection,
    pub raytracer: RaytracerSection,
    pub pseudolin: PseudolinSection,
    pub symbols: SymbolsSection,
    pub parabolic_calc: ParabolicSection,
    pub inversion: InversionSection,
}

impl RunConfig {
    pub fn new(command: Command) -> Self {
        RunConfig {
            run: RunSection {
                command,
                seed: 1,
                output_dir: PathBuf::from("."),
                output: command.default_output().to_string(),
                report: None,
            },
            model: ModelSection::default(),
            raytracer: RaytracerSection { mode: "qp".into(), n_rays: 16, ode_tol: 1e-10, table_spacing: 1e-3, su_time: 0.5 },
            pseudolin: PseudolinSection {
                nu: "a11".into(),
                tilde: false,
                eps: Cutoff::default().eps,
                profile: "c2".into(),
                sphere_n_s: 64,
                sphere_n_phi: 128,
                source: "exact".into(),
            },
            symbols: SymbolsSection { x: [0.0; 3], probe_h: 1.0 / 31.0, probe_n_s: 48, probe_n_phi: 512, fractions: vec![0.25, 0.5, 1.0] },
            parabolic_calc: ParabolicSection {
                case: "heat".into(),
                pm: None,
                pm1: None,
                m: 2.0,
                n: 256,
                x: [0.0, 0.0, 1.0],
                zetas: vec![8.0, 16.0, 32.0, 64.0],
                sin_theta: 0.5,
                width: 0.5,
            },
            inversion: InversionSection {
                scenario: "one:a11:qp".into(),
                grid: 32,
                half_width: 0.5,
                lambda_reg: None,
                cg_tol: 1e-10,
                max_iter: 2000,
                threshold: 1e-3,
                n_rot: 200,
                width: None,
                min_sin: 0.2,
                zero_data_check: false,
            },
        }
    }

    pub fn mode(&self) -> Mode {
        Mode::parse(&self.raytracer.mode).expect("validated mode")
    }

    pub fn nu(&self) -> Param {
        Param::parse(&self.pseudolin.nu).expect("validated parameter")
    }

    pub fn cutoff(&self) -> Cutoff {
        let profile = match self.pseudolin.profile.as_str() {
            "smooth" => CutoffProfile::Smooth,
            "none" => CutoffProfile::None,
            _ => CutoffProfile::C2,
        };
        if profile == CutoffProfile::None {
            Cutoff::none()
        } else {
            Cutoff::new(self.pseudolin.eps, profile)
        }
    }

    pub fn source(&self) -> JacobianSource {
        if self.pseudolin.source == "background" {
            JacobianSource::Background
        } else {
            JacobianSource::Exact
        }
    }

    pub fn sphere_rule(&self) -> SphereRule {
        SphereRule { n_s: self.pseudolin.sphere_n_s, n_phi: self.pseudolin.sphere_n_phi, band: true }
    }

    pub fn output_path(&self) -> PathBuf {
        self.run.output_dir.join(&self.run.output)
    }

    /// The effective configuration as TOML, defaults included.
    pub fn echo(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Semantic checks; returns every violation found.
    pub fn validate(&self) -> Vec<String> {
        let mut e = Vec::new();
        let cmd = self.run.command;
        if self.run.seed > i64::MAX as u64 {
            e.push(format!("run.seed must be at most {} (got {})", i64::MAX, self.run.seed));
        }

        let mut positive = |name: &str, v: f64| {
            if !(v > 0.0 && v.is_finite()) {
                e.push(format!("{name} must be positive and finite (got {v})"));
            }
        };
        positive("raytracer.ode_tol", self.raytracer.ode_tol);
        positive("raytracer.table_spacing", self.raytracer.table_spacing);
        positive("raytracer.su_time", self.raytracer.su_time);
        positive("pseudolin.eps", self.pseudolin.eps);
        positive("symbols.probe_h", self.symbols.probe_h);
        positive("parabolic_calc.sin_theta", self.parabolic_calc.sin_theta);
        positive("parabolic_calc.width", self.parabolic_calc.width);
        positive("inversion.half_width", self.inversion.half_width);
        positive("inversion.cg_tol", self.inversion.cg_tol);
        positive("inversion.threshold", self.inversion.threshold);
        positive("inversion.min_sin", self.inversion.min_sin);
        if let Some(l) = self.inversion.lambda_reg {
            positive("inversion.lambda_reg", l);
        }
        if let Some(w) = self.inversion.width {
            positive("inversion.width", w);
        }
        for z in &self.parabolic_calc.zetas {
            positive("parabolic_calc.zetas[]", *z);
        }
        for f in &self.symbols.fractions {
            positive("symbols.fractions[]", *f);
        }
        if self.pseudolin.eps > 1.0 {
            e.push("pseudolin.eps must not exceed 1".into());
        }
        if self.parabolic_calc.sin_theta > 1.0 {
            e.push("parabolic_calc.sin_theta must not exceed 1".into());
        }
        if self.inversion.threshold >= 1.0 {
            e.push("inversion.threshold is relative to max |u| and must be below 1".into());
        }
        if self.symbols.fractions.iter().any(|f| *f > 1.0) {
            e.push("symbols.fractions must lie in (0, 1]".into());
        }
        for (name, v, min) in [
            ("raytracer.n_rays", self.raytracer.n_rays, 1),
            ("pseudolin.sphere_n_s", self.pseudolin.sphere_n_s, 2),
            ("pseudolin.sphere_n_phi", self.pseudolin.sphere_n_phi, 4),
            ("symbols.probe_n_s", self.symbols.probe_n_s, 2),
            ("symbols.probe_n_phi", self.symbols.probe_n_phi, 4),
            ("parabolic_calc.n", self.parabolic_calc.n, 16),
            ("inversion.grid", self.inversion.grid, 4),
            ("inversion.max_iter", self.inversion.max_iter, 1),
            ("inversion.n_rot", self.inversion.n_rot, 1),
        ] {
            if v < min {
                e.push(format!("{name} must be at least {min} (got {v})"));
            }
        }
        if Mode::parse(&self.raytracer.mode).is_none() {
            e.push(format!("raytracer.mode: unknown mode `{}` (expected qp, qsv or qsh)", self.raytracer.mode));
        }
        if Param::parse(&self.pseudolin.nu).is_none() {
            e.push(format!("pseudolin.nu: unknown parameter `{}` (expected a11, a33 or e2)", self.pseudolin.nu));
        }
        if !["c2", "smooth", "none"].contains(&self.pseudolin.profile.as_str()) {
            e.push(format!("pseudolin.profile: unknown profile `{}` (expected c2, smooth or none)", self.pseudolin.profile));
        }
        if !["exact", "background"].contains(&self.pseudolin.source.as_str()) {
            e.push(format!("pseudolin.source: unknown source `{}` (expected exact or background)", self.pseudolin.source));
        }
        if Scenario::parse(&self.inversion.scenario).is_err() {
            e.push(format!("inversion.scenario: cannot parse `{}`", self.inversion.scenario));
        }
        match self.parabolic_calc.case.as_str() {
            "heat" | "ne2" => {}
            "custom" => {
                for (k, v) in [("parabolic_calc.pm", &self.parabolic_calc.pm), ("parabolic_calc.pm1", &self.parabolic_calc.pm1)] {
                    match v {
                        None if cmd == Command::ParabolicCheck => e.push(format!("{k}: required for the custom case")),
                        Some(s) => {
                            if let Err(err) = Expr::parse(s) {
                                e.push(format!("{k}: {err}"));
                            }
                        }
                        None => {}
                    }
                }
            }
            other => e.push(format!("parabolic_calc.case: unknown case `{other}` (expected heat, ne2 or custom)")),
        }
        if self.run.output.trim().is_empty() {
            e.push("run.output must not be empty".into());
        }
        let need = |e: &mut Vec<String>, present: bool, key: &str| {
            if !present {
                e.push(format!("{key}: required for command {}", cmd.name()));
            }
        };
        match cmd {
            Command::Forward | Command::Lens | Command::SymbolCheck => need(&mut e, self.model.base.is_some(), "model.base"),
            Command::Pseudo => {
                need(&mut e, self.model.base.is_some(), "model.base");
                need(&mut e, self.model.field.is_some() || self.model.rays.is_some(), "model.field");
            }
            Command::SuCheck | Command::Invert => {
                need(&mut e, self.model.base.is_some(), "model.base");
                need(&mut e, self.model.pert.is_some(), "model.pert");
            }
            Command::Poincare | Command::Width => need(&mut e, self.model.field.is_some(), "model.field"),
            Command::ParabolicCheck => {}
        }
        e
    }

    /// Resolves relative input paths against `dir`.
    fn rebase(&mut self, dir: &Path) {
        for p in [&mut self.model.base, &mut self.model.pert, &mut self.model.field, &mut self.model.rays].into_iter().flatten() {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        }
        if self.run.output_dir.is_relative() {
            self.run.output_dir = dir.join(&self.run.output_dir);
        }
    }
}

/// Typed reads from one TOML table with unknown-key detection.
struct Section<'a> {
    name: &'static str,
    table: Option<&'a toml::Table>,
    used: Vec<&'static str>,
}

impl<'a> Section<'a> {
    fn new(root: &'a toml::Table, name: &'static str, errs: &mut Vec<String>) -> Self {
        let table = match root.get(name) {
            None => None,
            Some(toml::Value::Table(t)) => Some(t),
            Some(_) => {
                errs.push(format!("{name}: expected a table"));
                None
            }
        };
        Section { name, table, used: Vec::new() }
    }

    fn raw(&mut self, key: &'static str) -> Option<&'a toml::Value> {
        self.used.push(key);
        self.table.and_then(|t| t.get(key))
    }

    fn f64(&mut self, key: &'static str, errs: &mut Vec<String>) -> Option<f64> {
        let name = self.name;
        match self.raw(key)? {
            toml::Value::Float(v) => Some(*v),
            toml::Value::Integer(v) => Some(*v as f64),
            _ => {
                errs.push(format!("{name}.{key}: expected a number"));
                None
            }
        }
    }

    fn int(&mut self, key: &'static str, errs: &mut Vec<String>) -> Option<u64> {
        let name = self.name;
        match self.raw(key)? {
            toml::Value::Integer(v) if *v >= 0 => Some(*v as u64),
            _ => {
                errs.push(format!("{name}.{key}: expected a non-negative integer"));
                None
            }
        }
    }

    fn bool(&mut self, key: &'static str, errs: &mut Vec<String>) -> Option<bool> {
        let name = self.name;
        match self.raw(key)? {
            toml::Value::Boolean(v) => Some(*v),
            _ => {
                errs.push(format!("{name}.{key}: expected true or false"));
                None
            }
        }
    }

    fn string(&mut self, key: &'static str, errs: &mut Vec<String>) -> Option<String> {
        let name = self.name;
        match self.raw(key)? {
            toml::Value::String(s) => Some(s.clone()),
            _ => {
                errs.push(format!("{name}.{key}: expected a string"));
                None
            }
        }
    }

    fn list(&mut self, key: &'static str, errs: &mut Vec<String>) -> Option<Vec<f64>> {
        let name = self.name;
        let bad = |errs: &mut Vec<String>| errs.push(format!("{name}.{key}: expected an array of numbers"));
        match self.raw(key)? {
            toml::Value::Array(a) => {
                let v: Option<Vec<f64>> = a
                    .iter()
                    .map(|x| match x {
                        toml::Value::Float(f) => Some(*f),
                        toml::Value::Integer(i) => Some(*i as f64),
                        _ => None,
                    })
                    .collect();
                if v.is_none() {
                    bad(errs);
                }
                v
            }
            _ => {
                bad(errs);
                None
            }
        }
    }

    fn point(&mut self, key: &'static str, errs: &mut Vec<String>) -> Option<[f64; 3]> {
        let v = self.list(key, errs)?;
        if v.len() != 3 {
            errs.push(format!("{}.{key}: expected 3 coordinates", self.name));
            return None;
        }
        Some([v[0], v[1], v[2]])
    }

    fn finish(self, errs: &mut Vec<String>) {
        if let Some(t) = self.table {
            for k in t.keys() {
                if !self.used.contains(&k.as_str()) {
                    errs.push(format!("{}.{k}: unknown key", self.name));
                }
            }
        }
    }
}

const SECTIONS: [&str; 7] = ["run", "model", "raytracer", "pseudolin", "symbols", "parabolic_calc", "inversion"];

/// Parses a run configuration; relative paths are taken relative to the file's directory.
pub fn parse_config(path: &Path) -> Result<RunConfig, RunError> {
    let text = std::fs::read_to_string(path).map_err(|e| RunError::invalid(format!("{}: {e}", path.display())))?;
    let mut cfg = parse_config_str(&text)?;
    cfg.rebase(path.parent().unwrap_or(Path::new(".")));
    Ok(cfg)
}

/// Parses configuration text, collecting every violation before failing.
pub fn parse_config_str(text: &str) -> Result<RunConfig, RunError> {
    let (cfg, mut errs) = read_config_str(text)?;
    errs.extend(cfg.validate());
    if errs.is_empty() {
        Ok(cfg)
    } else {
        Err(RunError::Validation(errs))
    }
}

/// Structural parse only; semantic checks are left to [`RunConfig::validate`], so a partial
/// config can be completed (e.g. by command-line flags) before validation.
pub fn parse_config_partial(path: &Path) -> Result<RunConfig, RunError> {
    let text = std::fs::read_to_string(path).map_err(|e| RunError::invalid(format!("{}: {e}", path.display())))?;
    let (mut cfg, errs) = read_config_str(&text)?;
    if !errs.is_empty() {
        return Err(RunError::Validation(errs));
    }
    cfg.rebase(path.parent().unwrap_or(Path::new(".")));
    Ok(cfg)
}

fn read_config_str(text: &str) -> Result<(RunConfig, Vec<String>), RunError> {
    let root: toml::Table = text.parse().map_err(|e: toml::de::Error| RunError::invalid(e.message().to_string()))?;
    let mut errs = Vec::new();
    for k in root.keys() {
        if !SECTIONS.contains(&k.as_str()) {
            errs.push(format!("{k}: unknown section"));
        }
    }
    let mut run = Section::new(&root, "run", &mut errs);
    let command = match run.string("command", &mut errs) {
        Some(c) => Command::parse(&c).unwrap_or_else(|| {
            errs.push(format!("run.command: unknown command `{c}`"));
            Command::Forward
        }),
        None => {
            errs.push("run.command: required".into());
            Command::Forward
        }
    };
    let mut cfg = RunConfig::new(command);
    macro_rules! set {
        ($sec:ident . $method:ident ( $key:literal ) => $target:expr) => {
            if let Some(v) = $sec.$method($key, &mut errs) {
                $target = v;
            }
        };
    }
    set!(run.int("seed") => cfg.run.seed);
    if let Some(v) = run.string("output_dir", &mut errs) {
        cfg.run.output_dir = PathBuf::from(v);
    }
    set!(run.string("output") => cfg.run.output);
    if let Some(v) = run.string("report", &mut errs) {
        cfg.run.report = Some(v);
    }
    run.finish(&mut errs);

    let mut s = Section::new(&root, "model", &mut errs);
    for (key, slot) in [("base", &mut cfg.model.base), ("pert", &mut cfg.model.pert), ("field", &mut cfg.model.field), ("rays", &mut cfg.model.rays)] {
        if let Some(v) = s.string(key, &mut errs) {
            *slot = Some(PathBuf::from(v));
        }
    }
    s.finish(&mut errs);

    let mut s = Section::new(&root, "raytracer", &mut errs);
    set!(s.string("mode") => cfg.raytracer.mode);
    if let Some(v) = s.int("n_rays", &mut errs) {
        cfg.raytracer.n_rays = v as usize;
    }
    set!(s.f64("ode_tol") => cfg.raytracer.ode_tol);
    set!(s.f64("table_spacing") => cfg.raytracer.table_spacing);
    set!(s.f64("su_time") => cfg.raytracer.su_time);
    s.finish(&mut errs);

    let mut s = Section::new(&root, "pseudolin", &mut errs);
    set!(s.string("nu") => cfg.pseudolin.nu);
    set!(s.bool("tilde") => cfg.pseudolin.tilde);
    set!(s.f64("eps") => cfg.pseudolin.eps);
    set!(s.string("profile") => cfg.pseudolin.profile);
    if let Some(v) = s.int("sphere_n_s", &mut errs) {
        cfg.pseudolin.sphere_n_s = v as usize;
    }
    if let Some(v) = s.int("sphere_n_phi", &mut errs) {
        cfg.pseudolin.sphere_n_phi = v as usize;
    }
    set!(s.string("source") => cfg.pseudolin.source);
    s.finish(&mut errs);

    let mut s = Section::new(&root, "symbols", &mut errs);
    set!(s.point("x") => cfg.symbols.x);
    set!(s.f64("probe_h") => cfg.symbols.probe_h);
    if let Some(v) = s.int("probe_n_s", &mut errs) {
        cfg.symbols.probe_n_s = v as usize;
    }
    if let Some(v) = s.int("probe_n_phi", &mut errs) {
        cfg.symbols.probe_n_phi = v as usize;
    }
    set!(s.list("fractions") => cfg.symbols.fractions);
    s.finish(&mut errs);

    let mut s = Section::new(&root, "parabolic_calc", &mut errs);
    set!(s.string("case") => cfg.parabolic_calc.case);
    if let Some(v) = s.string("pm", &mut errs) {
        cfg.parabolic_calc.pm = Some(v);
    }
    if let Some(v) = s.string("pm1", &mut errs) {
        cfg.parabolic_calc.pm1 = Some(v);
    }
    set!(s.f64("m") => cfg.parabolic_calc.m);
    if let Some(v) = s.int("n", &mut errs) {
        cfg.parabolic_calc.n = v as usize;
    }
    set!(s.point("x") => cfg.parabolic_calc.x);
    set!(s.list("zetas") => cfg.parabolic_calc.zetas);
    set!(s.f64("sin_theta") => cfg.parabolic_calc.sin_theta);
    set!(s.f64("width") => cfg.parabolic_calc.width);
    s.finish(&mut errs);

    let mut s = Section::new(&root, "inversion", &mut errs);
    set!(s.string("scenario") => cfg.inversion.scenario);
    if let Some(v) = s.int("grid", &mut errs) {
        cfg.inversion.grid = v as usize;
    }
    set!(s.f64("half_width") => cfg.inversion.half_width);
    if let Some(v) = s.f64("lambda_reg", &mut errs) {
        cfg.inversion.lambda_reg = Some(v);
    }
    set!(s.f64("cg_tol") => cfg.inversion.cg_tol);
    if let Some(v) = s.int("max_iter", &mut errs) {
        cfg.inversion.max_iter = v as usize;
    }
    set!(s.f64("threshold") => cfg.inversion.threshold);
    if let Some(v) = s.int("n_rot", &mut errs) {
        cfg.inversion.n_rot = v as usize;
    }
    if let Some(v) = s.f64("width", &mut errs) {
        cfg.inversion.width = Some(v);
    }
    set!(s.f64("min_sin") => cfg.inversion.min_sin);
    set!(s.bool("zero_data_check") => cfg.inversion.zero_data_check);
    s.finish(&mut errs);
    Ok((cfg, errs))
}

const PARAM_KEYS: [&str; 5] = ["a11", "a33", "a55", "a66", "E2"];

fn field_spec(v: &toml::Value, key: &str, dir: &Path, errs: &mut Vec<String>) -> Option<Field<f64>> {
    let Some(t) = v.as_table() else {
        errs.push(format!("params.{key}: expected a table with one of constant, grid, expr"));
        return None;
    };
    if t.len() != 1 {
        errs.push(format!("params.{key}: give exactly one of constant, grid, expr"));
        return None;
    }
    let (kind, val) = t.iter().next().expect("one entry");
    match (kind.as_str(), val) {
        ("constant", toml::Value::Float(c)) => Some(Field::constant(*c)),
        ("constant", toml::Value::Integer(c)) => Some(Field::constant(*c as f64)),
        ("expr", toml::Value::String(s)) => match Field::expr(s) {
            Ok(f) => Some(f),
            Err(e) => {
                errs.push(format!("params.{key}.expr: {e}"));
                None
            }
        },
        ("grid", toml::Value::String(p)) => {
            let path = dir.join(p);
            match GridField::read_tigrid(&path) {
                Ok(g) => Some(Field::Grid(Arc::new(g))),
                Err(e) => {
                    errs.push(format!("params.{key}.grid: {}: {e}", path.display()));
                    None
                }
            }
        }
        (k @ ("constant" | "expr" | "grid"), _) => {
            errs.push(format!("params.{key}.{k}: wrong value type"));
            None
        }
        (k, _) => {
            errs.push(format!("params.{key}.{k}: unknown field kind (expected constant, grid or expr)"));
            None
        }
    }
}

fn read_toml(path: &Path) -> Result<toml::Table, RunError> {
    let text = std::fs::read_to_string(path).map_err(|e| RunError::invalid(format!("{}: {e}", path.display())))?;
    text.parse().map_err(|e: toml::de::Error| RunError::invalid(format!("{}: {}", path.display(), e.message())))
}

/// Reads a model file: `domain_radius`, `layer_fn` (expression) and `[params]` with
/// a11, a33, a55, a66, E2 each given as `{ constant = v }`, `{ grid = "file" }` or `{ expr = "..." }`.
pub fn load_model(path: &Path) -> Result<MaterialModel<f64>, RunError> {
    let root = read_toml(path)?;
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut errs = Vec::new();
    for k in root.keys() {
        if !["domain_radius", "layer_fn", "params"].contains(&k.as_str()) {
            errs.push(format!("{k}: unknown key"));
        }
    }
    let radius = match root.get("domain_radius") {
        None => 1.0,
        Some(toml::Value::Float(r)) if *r > 0.0 => *r,
        Some(toml::Value::Integer(r)) if *r > 0 => *r as f64,
        Some(_) => {
            errs.push("domain_radius: expected a positive number".into());
            1.0
        }
    };
    let layer = match root.get("layer_fn") {
        None => Some(Field::expr("z").expect("literal")),
        Some(toml::Value::String(s)) => Field::expr(s).map_err(|e| errs.push(format!("layer_fn: {e}"))).ok(),
        Some(_) => {
            errs.push("layer_fn: expected an expression string".into());
            None
        }
    };
    let mut fields: Vec<Option<Field<f64>>> = vec![None; 5];
    match root.get("params").and_then(|p| p.as_table()) {
        None => errs.push("params: required table".into()),
        Some(p) => {
            for k in p.keys() {
                if !PARAM_KEYS.contains(&k.as_str()) {
                    errs.push(format!("params.{k}: unknown parameter"));
                }
            }
            for (i, key) in PARAM_KEYS.iter().enumerate() {
                match p.get(*key) {
                    None => errs.push(format!("params.{key}: required")),
                    Some(v) => fields[i] = field_spec(v, key, dir, &mut errs),
                }
            }
        }
    }
    if !errs.is_empty() {
        return Err(RunError::Validation(errs.into_iter().map(|e| format!("{}: {e}", path.display())).collect()));
    }
    let [a11, a33, a55, a66, e2]: [Field<f64>; 5] = fields.into_iter().map(|f| f.expect("checked")).collect::<Vec<_>>().try_into().expect("five");
    let m = MaterialModel { a11, a33, a55, a66, e2, layer: layer.expect("checked"), domain_radius: radius };
    check_model(&m).map_err(|e| RunError::Validation(e.into_iter().map(|e| format!("{}: {e}", path.display())).collect()))?;
    Ok(m)
}

/// Standing assumptions at the centre and on two shells of sample points.
fn check_model(m: &MaterialModel<f64>) -> Result<(), Vec<String>> {
    let mut pts = vec![Vec3::zero()];
    for r in [0.5, 0.95] {
        for i in -1..=1 {
            for j in -1..=1 {
                for k in -1..=1 {
                    if (i, j, k) != (0, 0, 0) {
                        pts.push(Vec3::new(i as f64, j as f64, k as f64).normalized() * (r * m.domain_radius));
                    }
                }
            }
        }
    }
    let errs: Vec<String> = pts.into_iter().filter_map(|x| m.validate_at(x).err().map(|e| e.to_string())).collect();
    if errs.is_empty() {
        Ok(())
    } else {
        Err(errs)
    }
}

/// Reads a parameter-difference file: `[params]` with any of a11, a33, E2 (missing entries are zero).
pub fn load_differences(path: &Path) -> Result<[Field<f64>; 3], RunError> {
    let root = read_toml(path)?;
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut errs = Vec::new();
    for k in root.keys() {
        if k != "params" {
            errs.push(format!("{k}: unknown key"));
        }
    }
    let mut out = [Field::constant(0.0), Field::constant(0.0), Field::constant(0.0)];
    if let Some(p) = root.get("params").and_then(|p| p.as_table()) {
        for (k, v) in p {
            let idx = match k.as_str() {
                "a11" => 0,
                "a33" => 1,
                "E2" => 2,
                _ => {
                    errs.push(format!("params.{k}: only a11, a33 and E2 may differ"));
                    continue;
                }
            };
            if let Some(f) = field_spec(v, k, dir, &mut errs) {
                out[idx] = f;
            }
        }
    } else {
        errs.push("params: required table".into());
    }
    if errs.is_empty() {
        Ok(out)
    } else {
        Err(RunError::Validation(errs.into_iter().map(|e| format!("{}: {e}", path.display())).collect()))
    }
}

/// Float formatting used in every CSV: 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// In-memory CSV table with a header row.
#[derive(Clone, Debug)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Table { header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push_floats(&mut self, vals: &[f64]) {
        self.rows.push(vals.iter().map(|v| fmt_f64(*v)).collect());
    }

    pub fn push(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header).expect("in-memory write");
        for r in &self.rows {
            w.write_record(r).expect("in-memory write");
        }
        w.into_inner().expect("in-memory flush")
    }
}

/// Rows of `width` floats from a CSV with a header line.
pub fn read_float_rows(path: &Path, width: usize) -> Result<Vec<Vec<f64>>, RunError> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_path(path).map_err(|e| RunError::invalid(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| RunError::invalid(format!("{}: {e}", path.display())))?;
        let vals: Result<Vec<f64>, _> = rec.iter().map(|s| s.parse::<f64>()).collect();
        match vals {
            Ok(v) if v.len() == width => out.push(v),
            _ => return Err(RunError::invalid(format!("{}: row {} must hold {width} numbers", path.display(), i + 1))),
        }
    }
    Ok(out)
}

/// One written file.
#[derive(Clone, Debug)]
pub struct Artifact {
    pub name: String,
    pub bytes: Vec<u8>,
}

#[derive(Clone, Debug, Serialize)]
pub struct OutputEntry {
    pub file: String,
    pub bytes: usize,
    pub sha256: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub outputs: Vec<OutputEntry>,
    pub started_unix: u64,
    pub wall_clock_seconds: f64,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Executes the configured command, writes its artifacts and `<output stem>.manifest.json`.
pub fn run_scenario(cfg: &RunConfig) -> Result<Manifest, RunError> {
    let errs = cfg.validate();
    if !errs.is_empty() {
        return Err(RunError::Validation(errs));
    }
    let started = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let clock = Instant::now();
    let artifacts = match cfg.run.command {
        Command::Forward => run_forward(cfg)?,
        Command::Lens => run_lens(cfg)?,
        Command::Pseudo => run_pseudo(cfg)?,
        Command::SymbolCheck => run_symbol_check(cfg)?,
        Command::ParabolicCheck => run_parabolic(cfg)?,
        Command::Poincare => run_poincare(cfg)?,
        Command::Width => run_width(cfg)?,
        Command::Invert => run_invert(cfg)?,
        Command::SuCheck => run_su(cfg)?,
    };
    std::fs::create_dir_all(&cfg.run.output_dir)?;
    let mut outputs = Vec::new();
    for a in &artifacts {
        std::fs::write(cfg.run.output_dir.join(&a.name), &a.bytes)?;
        outputs.push(OutputEntry { file: a.name.clone(), bytes: a.bytes.len(), sha256: sha256_hex(&a.bytes) });
    }
    let manifest = Manifest {
        tool: "tilens".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: cfg.run.command.name().into(),
        seed: cfg.run.seed,
        config: serde_json::to_value(cfg).expect("config serializes"),
        outputs,
        started_unix: started,
        wall_clock_seconds: clock.elapsed().as_secs_f64(),
    };
    let stem = Path::new(&cfg.run.output).file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "run".into());
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(cfg.run.output_dir.join(format!("{stem}.manifest.json")), json)?;
    Ok(manifest)
}

fn base_model(cfg: &RunConfig) -> Result<MaterialModel<f64>, RunError> {
    load_model(cfg.model.base.as_deref().expect("validated"))
}

fn pert_or_base(cfg: &RunConfig, base: &MaterialModel<f64>) -> Result<MaterialModel<f64>, RunError> {
    match &cfg.model.pert {
        Some(p) => load_model(p),
        None => Ok(base.clone()),
    }
}

fn unit_sphere(rng: &mut ChaCha8Rng) -> Vec3<f64> {
    let z: f64 = rng.gen_range(-1.0..1.0);
    let phi: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    sphere_point(1.0, z.acos(), phi)
}

/// Unit vector at angle ≤ `max_angle` from `dir`.
fn tilted(rng: &mut ChaCha8Rng, dir: Vec3<f64>, max_angle: f64) -> Vec3<f64> {
    let (e1, e2) = dir.orthonormal_complement();
    let a = rng.gen_range(0.0..max_angle);
    let phi: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    (dir * a.cos() + (e1 * phi.cos() + e2 * phi.sin()) * a.sin()).normalized()
}

fn name_with_suffix(name: &str, suffix: &str) -> String {
    let p = Path::new(name);
    let stem = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    match p.extension() {
        Some(ext) => format!("{stem}_{suffix}.{}", ext.to_string_lossy()),
        None => format!("{stem}_{suffix}"),
    }
}

fn run_forward(cfg: &RunConfig) -> Result<Vec<Artifact>, RunError> {
    let m = base_model(cfg)?;
    let tr = RayTracer::new(&m, cfg.mode()).with_tol(cfg.raytracer.ode_tol);
    let r = m.domain_radius;
    let starts: Vec<(Vec3<f64>, Vec3<f64>)> = match &cfg.model.rays {
        Some(p) => read_float_rows(p, 6)?.into_iter().map(|v| (Vec3::new(v[0], v[1], v[2]), Vec3::new(v[3], v[4], v[5]))).collect(),
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.run.seed);
            (0..cfg.raytracer.n_rays)
                .map(|_| {
                    let u = unit_sphere(&mut rng);
                    (u * r, tilted(&mut rng, -u, 0.7))
                })
                .collect()
        }
    };
    let mut t = Table::new(&["entry_x1", "entry_x2", "entry_x3", "entry_xi1", "entry_xi2", "entry_xi3", "exit_x1", "exit_x2", "exit_x3", "exit_xi1", "exit_xi2", "exit_xi3", "tau"]);
    for (i, (x, xi)) in starts.into_iter().enumerate() {
        let ctx = format!("ray {i}");
        let p = tr.normalize(PhasePoint::new(x, xi)).map_err(numerical(&ctx))?;
        let (rec, _) = tr.trace_to_exit(p).map_err(numerical(&ctx))?;
        let mut row: Vec<f64> = rec.entry.to_state().to_vec();
        row.extend(rec.exit.to_state());
        row.push(rec.tau);
        t.push_floats(&row);
    }
    Ok(vec![Artifact { name: cfg.run.output.clone(), bytes: t.to_bytes() }])
}

fn run_lens(cfg: &RunConfig) -> Result<Vec<Artifact>, RunError> {
    let m = base_model(cfg)?;
    let tr = RayTracer::new(&m, cfg.mode()).with_tol(cfg.raytracer.ode_tol);
    let r = m.domain_radius;
    let pairs: Vec<(Vec3<f64>, Vec3<f64>)> = match &cfg.model.rays {
        Some(p) => read_float_rows(p, 6)?
            .into_iter()
            .map(|v| (Vec3::new(v[0], v[1], v[2]).normalized() * r, Vec3::new(v[3], v[4], v[5]).normalized() * r))
            .collect(),
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.run.seed);
            (0..cfg.raytracer.n_rays)
                .map(|_| {
                    let u = unit_sphere(&mut rng);
                    (u * r, tilted(&mut rng, -u, 1.0) * r)
                })
                .collect()
        }
    };
    let mut t = Table::new(&["x0_1", "x0_2", "x0_3", "x1_1", "x1_2", "x1_3", "tau", "traced_xi1", "traced_xi2", "traced_xi3", "table_xi1", "table_xi2", "table_xi3", "rel_error"]);
    for (i, (x0, x1)) in pairs.into_iter().enumerate() {
        let ctx = format!("pair {i}");
        let (tau, rec) = tr.boundary_travel_time(x0, x1).map_err(numerical(&ctx))?;
        let mut table = |y: Vec3<f64>| tr.boundary_travel_time(x0, y).map(|v| v.0);
        let xi = tr.exit_covector_from_travel_times(x1, cfg.raytracer.table_spacing, &mut table).map_err(numerical(&ctx))?;
        let rel = (xi - rec.exit.xi).norm() / rec.exit.xi.norm();
        let mut row = vec![x0[0], x0[1], x0[2], x1[0], x1[1], x1[2], tau];
        row.extend(rec.exit.xi.0);
        row.extend(xi.0);
        row.push(rel);
        t.push_floats(&row);
    }
    Ok(vec![Artifact { name: cfg.run.output.clone(), bytes: t.to_bytes() }])
}

fn run_pseudo(cfg: &RunConfig) -> Result<Vec<Artifact>, RunError> {
    let base = base_model(cfg)?;
    let pert = pert_or_base(cfg, &base)?;
    let pl = PseudoLin::new(&base, &pert, cfg.mode()).with_cutoff(cfg.cutoff()).with_source(cfg.source());
    let mut out = Vec::new();
    if let Some(f) = &cfg.model.field {
        let u: GridField<f64> = GridField::read_tigrid(f).map_err(|e| RunError::invalid(format!("{}: {e}", f.display())))?;
        let spec = u.spec.clone();
        let vals = pl.apply_on_grid(cfg.nu(), &u, cfg.pseudolin.tilde, &spec, cfg.sphere_rule(), RayQuadrature::default()).map_err(numerical("operator application"))?;
        for c in 0..3 {
            let comp: Vec<f64> = vals.iter().map(|v| v[c]).collect();
            out.push(Artifact { name: name_with_suffix(&cfg.run.output, &(c + 1).to_string()), bytes: encode_tigrid(&spec, &comp) });
        }
    }
    if let Some(rays) = &cfg.model.rays {
        let tr = pl.base_tracer();
        let mut t = Table::new(&["ray", "pseudo1", "pseudo2", "pseudo3", "lens1", "lens2", "lens3", "rel_mismatch"]);
        for (i, v) in read_float_rows(rays, 6)?.into_iter().enumerate() {
            let ctx = format!("ray {i}");
            let p = tr.normalize(PhasePoint::new(Vec3::new(v[0], v[1], v[2]), Vec3::new(v[3], v[4], v[5]))).map_err(numerical(&ctx))?;
            let r = pl.pseudo_data_residual(p, RayQuadrature::default(), None).map_err(numerical(&ctx))?;
            let d = pl.lens_difference(p).map_err(numerical(&ctx))?;
            let rel = (r - d).norm() / d.norm();
            t.push(std::iter::once(i.to_string()).chain([r[0], r[1], r[2], d[0], d[1], d[2], rel].iter().map(|v| fmt_f64(*v))).collect());
        }
        out.push(Artifact { name: cfg.run.report.clone().unwrap_or_else(|| "residuals.csv".into()), bytes: t.to_bytes() });
    }
    Ok(out)
}

fn run_symbol_check(cfg: &RunConfig) -> Result<Vec<Artifact>, RunError> {
    let base = base_model(cfg)?;
    let pert = pert_or_base(cfg, &base)?;
    let mut pl = PseudoLin::new(&base, &pert, cfg.mode()).with_cutoff(cfg.cutoff());
    if cfg.model.pert.is_none() {
        pl = pl.with_source(JacobianSource::Background);
    }
    let nu = cfg.nu();
    let x = Vec3(cfg.symbols.x);
    let pcfg = ProbeConfig { h: cfg.symbols.probe_h, n_s: cfg.symbols.probe_n_s, n_phi: cfg.symbols.probe_n_phi, ..ProbeConfig::default() };
    let axis = base.local(x).axis();
    let (e1, _) = axis.orthonormal_complement();
    let dirs = [e1, (e1 + axis).normalized()];
    let mut t = Table::new(&["x1", "x2", "x3", "zeta1", "zeta2", "zeta3", "predicted_re", "predicted_im", "probed_re", "probed_im", "rel_error", "fitted_exponent"]);
    for dir in dirs {
        let mut rows = Vec::new();
        for &f in &cfg.symbols.fractions {
            let zeta = dir * (f * pcfg.max_zeta(dir));
            let pred = principal_prediction(&pl, nu, x, zeta, 256).map_err(numerical("prediction"))?;
            let probe = probe_symbol(&pl, nu, x, zeta, &pcfg).map_err(numerical("probe"))?;
            rows.push((zeta, pred.value, probe.scalar));
        }
        let norms: Vec<f64> = rows.iter().map(|r| r.0.norm()).collect();
        let mags: Vec<f64> = rows.iter().map(|r| r.2.norm()).collect();
        let exponent = if rows.len() >= 2 { loglog_fit(&norms, &mags).map(|f| f.0).unwrap_or(f64::NAN) } else { f64::NAN };
        for (zeta, pred, probed) in rows {
            let rel = if pred.norm() > 0.0 { (probed - pred).norm() / pred.norm() } else { probed.norm() };
            t.push_floats(&[x[0], x[1], x[2], zeta[0], zeta[1], zeta[2], pred.re, pred.im, probed.re, probed.im, rel, exponent]);
        }
    }
    Ok(vec![Artifact { name: cfg.run.output.clone(), bytes: t.to_bytes() }])
}

fn push_check(t: &mut Table, check: &str, parameter: f64, value: f64) {
    t.push(vec![check.to_string(), fmt_f64(parameter), fmt_f64(value)]);
}

fn run_parabolic(cfg: &RunConfig) -> Result<Vec<Artifact>, RunError> {
    let pc = &cfg.parabolic_calc;
    let mcfg = MembershipConfig::default();
    let mut t = Table::new(&["check", "parameter", "value"]);
    let membership = |t: &mut Table, label: &str, a: &SmkSymbol, m: f64, k: f64| {
        let rep = smk_membership_test(a, m, k, &mcfg);
        for (d, c) in rep.dyads.iter().zip(&rep.constants) {
            push_check(t, &format!("{label}_constant"), *d, *c);
        }
        push_check(t, &format!("{label}_plateau_ratio"), 0.0, rep.plateau_ratio);
        push_check(t, &format!("{label}_growth_per_dyad"), 0.0, rep.growth_per_dyad);
        push_check(t, &format!("{label}_passed"), 0.0, if rep.passed { 1.0 } else { 0.0 });
    };
    let symbol: ParabolicSymbol = match pc.case.as_str() {
        "heat" => {
            let hp = HeatProblem::new(pc.n, |x| 1.0 + 0.3 * x.sin(), |x| 1.0 + 0.2 * x.cos());
            let rep = parametrix_residual(&hp, &pc.zetas, pc.sin_theta, pc.width).map_err(numerical("parametrix residual"))?;
            for (z, r) in rep.zetas.iter().zip(&rep.residuals) {
                push_check(&mut t, "residual", *z, *r);
            }
            push_check(&mut t, "residual_exponent", pc.sin_theta, rep.exponent);
            HeatProblem::new(pc.n, |_| 1.0, |_| 1.0).symbol()
        }
        "ne2" => {
            let base = match &cfg.model.base {
                Some(p) => load_model(p)?,
                None => layered_demo_model(),
            };
            let pert = pert_or_base(cfg, &base)?;
            let pl = PseudoLin::new(&base, &pert, Mode::QSV).with_cutoff(Cutoff::none());
            ne2_parabolic_symbol(&pl, Vec3(pc.x)).map_err(numerical("symbol"))?
        }
        _ => custom_symbol(pc.pm.as_deref().expect("validated"), pc.pm1.as_deref().expect("validated"), pc.m)?,
    };
    let (q, lb) = inverse_parabolic(&symbol, &mcfg).map_err(numerical("inverse"))?;
    push_check(&mut t, "lower_bound_c", 0.0, lb.c);
    push_check(&mut t, "inverse_orders", q.m, q.k);
    membership(&mut t, "inverse", &q, q.m, q.k);
    Ok(vec![Artifact { name: cfg.run.output.clone(), bytes: t.to_bytes() }])
}

/// Spherical layers with parameters decreasing outward; the default model for the ne2 case.
pub fn layered_demo_model() -> MaterialModel<f64> {
    let mut m = MaterialModel::homogeneous(3.6, 3.0, 1.0, 1.0, 0.6, [0.0, 0.0, 1.0]).with_radius(3.0);
    m.layer = Field::expr("sqrt(x^2+y^2+z^2)").expect("literal");
    m.a11 = Field::expr("3.9 - 0.3*sqrt(x^2+y^2+z^2)").expect("literal");
    m.a55 = Field::expr("1.2 - 0.2*sqrt(x^2+y^2+z^2)").expect("literal");
    m
}

/// p_m, p_{m−1} as expressions in x (position), y = ζ₁ and z = ζ₂, with Σ along ζ₂.
fn custom_symbol(pm: &str, pm1: &str, m: f64) -> Result<ParabolicSymbol, RunError> {
    let a = Arc::new(Expr::parse(pm).map_err(|e| RunError::invalid(format!("parabolic_calc.pm: {e}")))?);
    let b = Arc::new(Expr::parse(pm1).map_err(|e| RunError::invalid(format!("parabolic_calc.pm1: {e}")))?);
    Ok(ParabolicSymbol {
        dim: 2,
        m,
        x_dep: XDependence::First,
        pm: Arc::new(move |x, z| a.eval([x[0], z[0], z[1]])),
        pm1: Arc::new(move |x, z| b.eval([x[0], z[0], z[1]])),
    })
}

fn read_field(cfg: &RunConfig) -> Result<GridField<f64>, RunError> {
    let f = cfg.model.field.as_deref().expect("validated");
    let (spec, data) = read_tigrid(f).map_err(|e| RunError::invalid(format!("{}: {e}", f.display())))?;
    Ok(GridField::new(spec, data))
}

fn run_poincare(cfg: &RunConfig) -> Result<Vec<Artifact>, RunError> {
    let u = read_field(cfg)?;
    if u.data.iter().all(|v| *v == 0.0) {
        return Err(RunError::Numerical("field is identically zero".into()));
    }
    let rep = poincare_check(&u, cfg.inversion.width);
    let h = u.spec.spacing.iter().fold(0.0f64, |a, b| a.max(*b));
    let mut t = Table::new(&["l2", "grad_l2", "h_half", "h1", "width", "ratio_l2", "ratio_h_half", "bound", "interpolation_holds"]);
    t.push_floats(&[
        rep.l2,
        rep.grad_l2,
        rep.h_half,
        rep.h1,
        rep.width,
        rep.ratio_l2,
        rep.ratio_h_half,
        1.0 + 3.0 * h / rep.width,
        if rep.interpolation_holds { 1.0 } else { 0.0 },
    ]);
    Ok(vec![Artifact { name: cfg.run.output.clone(), bytes: t.to_bytes() }])
}

fn run_width(cfg: &RunConfig) -> Result<Vec<Artifact>, RunError> {
    let u = read_field(cfg)?;
    let maxu = u.data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let w = width(&u, cfg.inversion.threshold * maxu, cfg.inversion.n_rot, cfg.run.seed);
    let mut t = Table::new(&["points", "width", "dir1", "dir2", "dir3"]);
    t.push(std::iter::once(w.points.to_string()).chain([w.width, w.direction[0], w.direction[1], w.direction[2]].iter().map(|v| fmt_f64(*v))).collect());
    Ok(vec![Artifact { name: cfg.run.output.clone(), bytes: t.to_bytes() }])
}

fn run_invert(cfg: &RunConfig) -> Result<Vec<Artifact>, RunError> {
    let ic = &cfg.inversion;
    let base = base_model(cfg)?;
    let diffs = load_differences(cfg.model.pert.as_deref().expect("validated"))?;
    let scenario = Scenario::parse(&ic.scenario).expect("validated");
    let spec = GridSpec::cube(ic.grid, ic.half_width);
    let op = ForwardOperator::new(&base, scenario.clone(), cfg.cutoff(), spec.clone()).map_err(numerical("forward operator"))?;
    let unknowns = scenario.unknowns();
    let weak = op.weakest_direction(ic.min_sin);
    let report_name = cfg.run.report.clone().unwrap_or_else(|| "report.csv".into());
    let mut t = Table::new(&[
        "scenario", "unknown", "rel_error", "iterations", "cg_residual", "lambda", "data_misfit", "weakest_ratio", "weak_dir_1", "weak_dir_2", "weak_zeta1", "weak_zeta2", "weak_zeta3", "status",
    ]);
    let dir = |k: usize| weak.direction.get(k).copied().unwrap_or(f64::NAN);
    let row = |t: &mut Table, unknown: &str, vals: [f64; 5], status: &str| {
        let mut r = vec![ic.scenario.clone(), unknown.to_string()];
        r.extend(vals.iter().map(|v| fmt_f64(*v)));
        r.extend([weak.ratio, dir(0), dir(1), weak.zeta[0], weak.zeta[1], weak.zeta[2]].iter().map(|v| fmt_f64(*v)));
        r.push(status.to_string());
        t.push(r);
    };
    if scenario.expected_ill_posed() {
        for p in &unknowns {
            row(&mut t, p.name(), [f64::NAN; 5], "expected-ill-posed");
        }
        return Ok(vec![Artifact { name: report_name, bytes: t.to_bytes() }]);
    }
    let truth: Vec<Vec<f64>> = unknowns
        .iter()
        .map(|p| {
            let f = &diffs[param_index(*p)];
            (0..spec.len()).map(|i| f.value(Vec3(spec.node(i)))).collect()
        })
        .collect();
    let mask = support_mask(&spec, &truth, ic.threshold);
    let data = op.apply(&truth);
    let mut pb = RecoveryProblem::new(op, mask.clone());
    pb.lambda_reg = ic.lambda_reg;
    pb.cg_tol = ic.cg_tol;
    pb.max_iter = ic.max_iter;
    let rec = pb.recover(&data, None).map_err(numerical("recovery"))?;
    let mut out = Vec::new();
    for (k, p) in unknowns.iter().enumerate() {
        let err = relative_error(std::slice::from_ref(&rec.fields[k]), std::slice::from_ref(&truth[k]));
        row(&mut t, p.name(), [err, rec.iterations as f64, rec.residual, rec.lambda, rec.data_misfit], "recovered");
        let name = if unknowns.len() == 1 { cfg.run.output.clone() } else { name_with_suffix(&cfg.run.output, p.name()) };
        out.push(Artifact { name, bytes: encode_tigrid(&spec, &rec.fields[k]) });
    }
    if ic.zero_data_check {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.run.seed);
        let init: Vec<Vec<f64>> = unknowns.iter().map(|_| mask.iter().map(|m| if *m { rng.gen_range(-1.0..1.0) } else { 0.0 }).collect()).collect();
        let zero: Vec<[Vec<f64>; 3]> = data.iter().map(|d| [vec![0.0; d[0].len()], vec![0.0; d[0].len()], vec![0.0; d[0].len()]]).collect();
        let n0 = init.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
        let z = pb.recover(&zero, Some(init)).map_err(numerical("zero-data recovery"))?;
        let n1 = z.fields.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
        row(&mut t, "zero-data", [n1 / n0, z.iterations as f64, z.residual, z.lambda, f64::NAN], "zero-data");
    }
    out.push(Artifact { name: report_name, bytes: t.to_bytes() });
    Ok(out)
}

/// Nodes where any field exceeds `rel` times the overall maximum, dilated by one node.
pub fn support_mask(spec: &GridSpec, fields: &[Vec<f64>], rel: f64) -> Vec<bool> {
    let maxv = fields.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    let core: Vec<bool> = (0..spec.len()).map(|i| fields.iter().any(|f| f[i].abs() > rel * maxv)).collect();
    let d = spec.dims;
    (0..spec.len())
        .map(|i| {
            let [a, b, c] = spec.ijk(i);
            (a.saturating_sub(1)..=(a + 1).min(d[0] - 1)).any(|x| {
                (b.saturating_sub(1)..=(b + 1).min(d[1] - 1)).any(|y| (c.saturating_sub(1)..=(c + 1).min(d[2] - 1)).any(|z| core[spec.index(x, y, z)]))
            })
        })
        .collect()
}

fn run_su(cfg: &RunConfig) -> Result<Vec<Artifact>, RunError> {
    let base = base_model(cfg)?;
    let pert = pert_or_base(cfg, &base)?;
    let mut pl = PseudoLin::new(&base, &pert, cfg.mode());
    pl.tol = cfg.raytracer.ode_tol;
    let tr = RayTracer::new(&base, cfg.mode()).with_tol(cfg.raytracer.ode_tol);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.run.seed);
    let mut t = Table::new(&["pair", "x1", "x2", "x3", "xi1", "xi2", "xi3", "t", "lhs_norm", "residual"]);
    for i in 0..cfg.raytracer.n_rays {
        let x = unit_sphere(&mut rng) * (0.5 * base.domain_radius * rng.gen_range(0.0f64..1.0).cbrt());
        let ctx = format!("pair {i}");
        let p = tr.normalize(PhasePoint::new(x, unit_sphere(&mut rng))).map_err(numerical(&ctx))?;
        let (lhs, _, res) = pl.su_identity_check(p, cfg.raytracer.su_time, 256).map_err(numerical(&ctx))?;
        let ln = lhs.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut r = vec![i.to_string()];
        r.extend([x[0], x[1], x[2], p.xi[0], p.xi[1], p.xi[2], cfg.raytracer.su_time, ln, res].iter().map(|v| fmt_f64(*v)));
        t.push(r);
    }
    Ok(vec![Artifact { name: cfg.run.output.clone(), bytes: t.to_bytes() }])
}

/// Difference fields of two models sampled on a grid, indexed a11, a33, E².
pub fn sampled_differences(base: &MaterialModel<f64>, pert: &MaterialModel<f64>, spec: &GridSpec) -> [Vec<f64>; 3] {
    let d = differences(base, pert);
    let s = |f: &Field<f64>| (0..spec.len()).map(|i| f.value(Vec3(spec.node(i)))).collect::<Vec<f64>>();
    [s(&d[0]), s(&d[1]), s(&d[2])]
}
