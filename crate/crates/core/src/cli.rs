//! Experiment driver: plain-text configuration, studies, exports and the
//! command-line front end.

use std::collections::HashMap;
use std::ffi::OsString;
use std::fmt::{self, Write as _};
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::analysis::{convergence_study, run_property_suite, write_convergence_csv, write_property_csv, PropertySuiteConfig};
use crate::assembly::{write_matrix_market, write_vector_csv, Coefficient, EnergyForm, Source};
use crate::error::{Error, Result};
use crate::geometry::{
    build_cantor_network_with, build_layered_network, network_stats, write_network, CantorPattern, InterfaceNetwork,
    LayeredNetworkConfig, NetworkKind,
};
use crate::mesh::{write_dof_csv, write_mesh_vtk, BrokenDofMap, Triangulation, NONE};
use crate::problem::Hierarchy;
use crate::solve::{
    nested_iteration, pcg, IdentityPreconditioner, InitialGuess, NestedOptions, PcgOptions, PreconditionerConfig,
    ReferenceOptions, SolveReport, StopRule,
};

/// Environment variable holding the default output directory.
pub const OUTPUT_DIR_ENV: &str = "FRACTAL_HOMOG_OUTPUT_DIR";

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum StudyKind {
    Convergence,
    Preconditioner,
    Nested,
    Properties,
}

impl fmt::Display for StudyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StudyKind::Convergence => "convergence",
            StudyKind::Preconditioner => "preconditioner",
            StudyKind::Nested => "nested",
            StudyKind::Properties => "properties",
        })
    }
}

impl FromStr for StudyKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "convergence" => Ok(StudyKind::Convergence),
            "preconditioner" => Ok(StudyKind::Preconditioner),
            "nested" => Ok(StudyKind::Nested),
            "properties" => Ok(StudyKind::Properties),
            other => Err(format!("unknown study `{other}` (expected convergence | preconditioner | nested | properties)")),
        }
    }
}

/// Right-hand side `f`: `1.5` or `affine a b c` for `a + b x + c y`.
#[derive(Clone, Debug, PartialEq)]
pub enum SourceSpec {
    Constant(f64),
    Affine([f64; 3]),
}

impl SourceSpec {
    pub fn to_source(&self) -> Source {
        match self {
            SourceSpec::Constant(a) => Source::Constant(*a),
            SourceSpec::Affine(c) => Source::Affine(*c),
        }
    }
}

/// Interface coefficient `A`: `1` or `levels a1 a2 ...`.
#[derive(Clone, Debug, PartialEq)]
pub enum CoefficientSpec {
    Constant(f64),
    PerLevel(Vec<f64>),
}

impl CoefficientSpec {
    pub fn to_coefficient(&self) -> Coefficient {
        match self {
            CoefficientSpec::Constant(a) => Coefficient::Constant(*a),
            CoefficientSpec::PerLevel(v) => Coefficient::PerLevel(v.clone()),
        }
    }
}

/// Stopping rule of the nested iteration.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NestedMode {
    /// Stop at `‖ũ_K − ũ_K^(ν)‖ ≤ ‖ũ_(K+1) − ũ_K‖` using reference solutions.
    Verify,
    /// A fixed number of steps per level.
    Fixed(usize),
}

/// Everything a run depends on. `None` fields resolve to defaults that
/// depend on the geometry and the study.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub geometry: NetworkKind,
    pub study: StudyKind,
    pub k_min: Option<u32>,
    pub k_max: Option<u32>,
    pub h1: Option<f64>,
    pub c: f64,
    pub f: SourceSpec,
    pub a: CoefficientSpec,
    /// Replaces the network's `C_k`.
    pub crossing: Option<Vec<u64>>,
    pub seed: u64,
    pub pattern: CantorPattern,
    pub macro_interfaces: u32,
    pub band_halfwidth: u32,
    pub tolerance: f64,
    pub max_iterations: usize,
    pub direct_threshold: usize,
    /// Multilevel preconditioner on, plain CG off.
    pub preconditioner: bool,
    pub pcg_steps: usize,
    pub initial: InitialGuess,
    pub nested: NestedMode,
    pub samples: usize,
    /// Allows the memory-hungry top levels.
    pub large: bool,
    pub output: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let layered = LayeredNetworkConfig::default();
        ExperimentConfig {
            geometry: NetworkKind::Cantor,
            study: StudyKind::Convergence,
            k_min: None,
            k_max: None,
            h1: None,
            c: 1.0,
            f: SourceSpec::Constant(1.0),
            a: CoefficientSpec::Constant(1.0),
            crossing: None,
            seed: layered.seed,
            pattern: CantorPattern::default(),
            macro_interfaces: layered.macro_interface_count,
            band_halfwidth: layered.band_halfwidth_cells,
            tolerance: 1e-12,
            max_iterations: 200_000,
            direct_threshold: ReferenceOptions::default().direct_threshold,
            preconditioner: true,
            pcg_steps: 8,
            initial: InitialGuess::Zero,
            nested: NestedMode::Verify,
            samples: 1000,
            large: false,
            output: None,
        }
    }
}

const KEYS: [&str; 23] = [
    "geometry",
    "study",
    "k_min",
    "k_max",
    "h1",
    "c",
    "f",
    "a",
    "crossing",
    "seed",
    "pattern",
    "macro_interfaces",
    "band_halfwidth",
    "tolerance",
    "max_iterations",
    "direct_threshold",
    "preconditioner",
    "pcg_steps",
    "initial",
    "nested_steps",
    "samples",
    "large",
    "output",
];

fn parse_num<T: FromStr>(v: &str) -> std::result::Result<T, String>
where
    T::Err: fmt::Display,
{
    v.parse::<T>().map_err(|e| format!("bad number `{v}`: {e}"))
}

/// Accepts decimals and fractions such as `1/16`.
fn parse_real(v: &str) -> std::result::Result<f64, String> {
    match v.split_once('/') {
        Some((n, d)) => Ok(parse_num::<f64>(n.trim())? / parse_num::<f64>(d.trim())?),
        None => parse_num(v),
    }
}

fn parse_list<T: FromStr>(v: &str) -> std::result::Result<Vec<T>, String>
where
    T::Err: fmt::Display,
{
    v.split_whitespace().map(parse_num).collect()
}

fn parse_bool(v: &str) -> std::result::Result<bool, String> {
    match v {
        "true" | "on" | "yes" => Ok(true),
        "false" | "off" | "no" => Ok(false),
        other => Err(format!("expected on | off, got `{other}`")),
    }
}

fn auto<T>(v: &str, parse: impl Fn(&str) -> std::result::Result<T, String>) -> std::result::Result<Option<T>, String> {
    if v == "auto" {
        Ok(None)
    } else {
        parse(v).map(Some)
    }
}

fn is_dyadic(h: f64) -> bool {
    h > 0.0 && h <= 1.0 && {
        let p = (-h.log2()).round();
        p <= 62.0 && 2f64.powi(-(p as i32)) == h
    }
}

impl ExperimentConfig {
    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let v = value.trim();
        match key {
            "geometry" => self.geometry = v.parse()?,
            "study" => self.study = v.parse()?,
            "k_min" => self.k_min = auto(v, parse_num)?,
            "k_max" => self.k_max = auto(v, parse_num)?,
            "h1" => self.h1 = auto(v, parse_real)?,
            "c" => self.c = parse_real(v)?,
            "f" => {
                self.f = match v.strip_prefix("affine") {
                    Some(rest) => {
                        let c: Vec<f64> = parse_list(rest)?;
                        SourceSpec::Affine(c.try_into().map_err(|_| "affine source needs three coefficients".to_string())?)
                    }
                    None => SourceSpec::Constant(parse_real(v)?),
                }
            }
            "a" => {
                self.a = match v.strip_prefix("levels") {
                    Some(rest) => CoefficientSpec::PerLevel(parse_list(rest)?),
                    None => CoefficientSpec::Constant(parse_real(v)?),
                }
            }
            "crossing" => self.crossing = auto(v, parse_list)?,
            "seed" => self.seed = parse_num(v)?,
            "pattern" => self.pattern = v.parse()?,
            "macro_interfaces" => self.macro_interfaces = parse_num(v)?,
            "band_halfwidth" => self.band_halfwidth = parse_num(v)?,
            "tolerance" => self.tolerance = parse_real(v)?,
            "max_iterations" => self.max_iterations = parse_num(v)?,
            "direct_threshold" => self.direct_threshold = parse_num(v)?,
            "preconditioner" => self.preconditioner = parse_bool(v)?,
            "pcg_steps" => self.pcg_steps = parse_num(v)?,
            "initial" => {
                self.initial = match v {
                    "zero" => InitialGuess::Zero,
                    "coarse" => InitialGuess::Coarse,
                    other => return Err(format!("expected zero | coarse, got `{other}`")),
                }
            }
            "nested_steps" => {
                self.nested = if v == "verify" { NestedMode::Verify } else { NestedMode::Fixed(parse_num(v)?) };
            }
            "samples" => self.samples = parse_num(v)?,
            "large" => self.large = parse_bool(v)?,
            "output" => self.output = if v == "auto" { None } else { Some(PathBuf::from(v)) },
            other => return Err(format!("unknown key `{other}`")),
        }
        Ok(())
    }

    /// Checks the invariants; on failure names the offending key.
    pub fn validate(&self) -> std::result::Result<(), (&'static str, String)> {
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(("c", format!("c must be positive, got {}", self.c)));
        }
        if let Some(h) = self.h1 {
            if !is_dyadic(h) {
                return Err(("h1", format!("h1 must be 2^-p with p >= 0, got {h}")));
            }
        }
        let (lo, hi) = self.level_range();
        if hi == 0 {
            return Err(("k_max", "k_max must be at least 1".into()));
        }
        if lo == 0 || lo > hi {
            return Err(("k_min", format!("need 1 <= k_min <= k_max, got {lo}..{hi}")));
        }
        let limit = match self.geometry {
            NetworkKind::Cantor => 8,
            NetworkKind::Layered => 6,
        };
        if hi > limit && !self.large {
            return Err(("k_max", format!("k_max = {hi} exceeds {limit} for {} networks; set `large = on` to allow it", self.geometry)));
        }
        match &self.f {
            SourceSpec::Constant(a) if !a.is_finite() => return Err(("f", "source must be finite".into())),
            SourceSpec::Affine(c) if c.iter().any(|x| !x.is_finite()) => return Err(("f", "source must be finite".into())),
            _ => {}
        }
        let a_ok = match &self.a {
            CoefficientSpec::Constant(a) => *a > 0.0 && a.is_finite(),
            CoefficientSpec::PerLevel(v) => !v.is_empty() && v.iter().all(|a| *a > 0.0 && a.is_finite()),
        };
        if !a_ok {
            return Err(("a", "coefficient values must be positive".into()));
        }
        if let Some(cs) = &self.crossing {
            if cs.contains(&0) {
                return Err(("crossing", "crossing constants must be positive".into()));
            }
        }
        if !(self.tolerance > 0.0) {
            return Err(("tolerance", "tolerance must be positive".into()));
        }
        if self.pcg_steps == 0 {
            return Err(("pcg_steps", "pcg_steps must be at least 1".into()));
        }
        if self.nested == NestedMode::Fixed(0) {
            return Err(("nested_steps", "nested_steps must be at least 1".into()));
        }
        if self.samples == 0 {
            return Err(("samples", "samples must be at least 1".into()));
        }
        if self.macro_interfaces == 0 {
            return Err(("macro_interfaces", "need at least one macro interface".into()));
        }
        Ok(())
    }

    /// Levels of the study; `k_min` is irrelevant for convergence studies.
    pub fn level_range(&self) -> (u32, u32) {
        use NetworkKind::*;
        use StudyKind::*;
        let (lo, hi) = match (self.study, self.geometry) {
            (Convergence, Cantor) => (1, 8),
            (Convergence, Layered) => (1, 5),
            (Preconditioner, Cantor) => (5, 8),
            (Preconditioner, Layered) => (2, 6),
            (Nested, _) => (2, if self.geometry == Cantor { 8 } else { 6 }),
            (Properties, _) => (1, 5),
        };
        let hi = self.k_max.unwrap_or(hi);
        (self.k_min.unwrap_or(lo.min(hi)), hi)
    }

    pub fn mesh_size(&self) -> f64 {
        self.h1.unwrap_or(match self.geometry {
            NetworkKind::Cantor => 0.5,
            NetworkKind::Layered => 1.0 / 16.0,
        })
    }

    pub fn reference_options(&self) -> ReferenceOptions {
        ReferenceOptions { direct_threshold: self.direct_threshold, tolerance: self.tolerance, max_iterations: self.max_iterations }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output.clone().unwrap_or_else(|| PathBuf::from("results"))
    }

    /// Canonical `key = value` text; parsing it gives back this config.
    pub fn to_config_string(&self) -> String {
        let opt = |v: Option<String>| v.unwrap_or_else(|| "auto".into());
        let list = |v: &[f64]| v.iter().map(f64::to_string).collect::<Vec<_>>().join(" ");
        let mut s = String::from("# fractal-homog experiment config\n");
        for key in KEYS {
            let value = match key {
                "geometry" => self.geometry.to_string(),
                "study" => self.study.to_string(),
                "k_min" => opt(self.k_min.map(|k| k.to_string())),
                "k_max" => opt(self.k_max.map(|k| k.to_string())),
                "h1" => opt(self.h1.map(|h| h.to_string())),
                "c" => self.c.to_string(),
                "f" => match &self.f {
                    SourceSpec::Constant(a) => a.to_string(),
                    SourceSpec::Affine(c) => format!("affine {}", list(c)),
                },
                "a" => match &self.a {
                    CoefficientSpec::Constant(a) => a.to_string(),
                    CoefficientSpec::PerLevel(v) => format!("levels {}", list(v)),
                },
                "crossing" => opt(self.crossing.as_ref().map(|c| c.iter().map(u64::to_string).collect::<Vec<_>>().join(" "))),
                "seed" => self.seed.to_string(),
                "pattern" => self.pattern.to_string(),
                "macro_interfaces" => self.macro_interfaces.to_string(),
                "band_halfwidth" => self.band_halfwidth.to_string(),
                "tolerance" => self.tolerance.to_string(),
                "max_iterations" => self.max_iterations.to_string(),
                "direct_threshold" => self.direct_threshold.to_string(),
                "preconditioner" => (if self.preconditioner { "on" } else { "off" }).to_string(),
                "pcg_steps" => self.pcg_steps.to_string(),
                "initial" => (if self.initial == InitialGuess::Zero { "zero" } else { "coarse" }).to_string(),
                "nested_steps" => match self.nested {
                    NestedMode::Verify => "verify".to_string(),
                    NestedMode::Fixed(n) => n.to_string(),
                },
                "samples" => self.samples.to_string(),
                "large" => (if self.large { "on" } else { "off" }).to_string(),
                "output" => opt(self.output.as_ref().map(|p| p.display().to_string())),
                _ => unreachable!("every key is serialized"),
            };
            let _ = writeln!(s, "{key} = {value}");
        }
        s
    }
}

/// Parses and validates a `key = value` config (`#` starts a comment).
/// Missing keys take their defaults; unknown or repeated keys are errors.
pub fn validate_config(text: &str) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::default();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or_default().trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| Error::Config { line, message: format!("expected `key = value`, got `{content}`") })?;
        let key = key.trim();
        if let Some(first) = seen.insert(key.to_string(), line) {
            return Err(Error::Config { line, message: format!("key `{key}` already set on line {first}") });
        }
        cfg.set(key, value).map_err(|message| Error::Config { line, message })?;
    }
    cfg.validate().map_err(|(key, message)| Error::Config { line: seen.get(key).copied().unwrap_or(0), message })?;
    Ok(cfg)
}

/// The interface network of the config up to `levels`.
pub fn build_network(cfg: &ExperimentConfig, levels: u32) -> Result<InterfaceNetwork> {
    let net = match cfg.geometry {
        NetworkKind::Cantor => build_cantor_network_with(levels, cfg.pattern),
        NetworkKind::Layered => {
            let layered = LayeredNetworkConfig {
                seed: cfg.seed,
                macro_interface_count: cfg.macro_interfaces,
                band_halfwidth_cells: cfg.band_halfwidth,
                base_exp: (-cfg.mesh_size().log2()).round() as u32,
            };
            build_layered_network(&layered, levels)?
        }
    };
    match &cfg.crossing {
        None => Ok(net),
        Some(cs) if cs.len() >= levels as usize => net.with_crossing_constants(cs[..levels as usize].to_vec()),
        Some(cs) => Err(Error::Config {
            line: 0,
            message: format!("crossing override lists {} constants, {levels} levels needed", cs.len()),
        }),
    }
}

pub fn build_hierarchy(cfg: &ExperimentConfig, levels: u32) -> Result<Hierarchy> {
    let form = EnergyForm::new(cfg.c, cfg.a.to_coefficient())?;
    Hierarchy::build(build_network(cfg, levels)?, cfg.mesh_size(), form, cfg.f.to_source(), levels)
}

/// Files written by a run and whether its checks passed.
#[derive(Clone, Debug, PartialEq)]
pub struct StudyOutcome {
    pub files: Vec<PathBuf>,
    /// False only when a property check fails.
    pub passed: bool,
    pub summary: String,
}

struct OutputDir {
    dir: PathBuf,
    files: Vec<PathBuf>,
}

impl OutputDir {
    fn create(dir: PathBuf) -> Result<Self> {
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(OutputDir { dir, files: Vec::new() })
    }

    fn write(&mut self, name: &str, body: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<()> {
        let path = self.dir.join(name);
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = BufWriter::new(file);
        body(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(&path, e))?;
        self.files.push(path);
        Ok(())
    }
}

fn summary_header(cfg: &ExperimentConfig) -> String {
    let (lo, hi) = cfg.level_range();
    let mut s = String::new();
    let _ = writeln!(s, "study: {}", cfg.study);
    let _ = writeln!(s, "geometry: {}", cfg.geometry);
    let _ = writeln!(s, "levels: {lo}..{hi}");
    let _ = writeln!(s, "h1: {}", cfg.mesh_size());
    let _ = writeln!(s, "c: {}", cfg.c);
    match cfg.geometry {
        NetworkKind::Layered => {
            let _ = writeln!(s, "network_seed: {}", cfg.seed);
        }
        NetworkKind::Cantor => {
            let _ = writeln!(s, "network_seed: none");
        }
    }
    s
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.12e}")).unwrap_or_default()
}

fn write_solver_log<W: Write>(reports: &[(u32, &SolveReport)], mut w: W) -> std::io::Result<()> {
    writeln!(w, "# schema: solver-log v1")?;
    writeln!(w, "level,iter,energy_error,rho,residual2")?;
    for (level, r) in reports {
        for it in 0..r.residual_norms.len() {
            let err = r.energy_errors.get(it).copied();
            let rho = if it == 0 { None } else { r.reduction_factors.get(it - 1).copied() };
            writeln!(w, "{level},{it},{},{},{:.12e}", fmt_opt(err), fmt_opt(rho), r.residual_norms[it])?;
        }
    }
    Ok(())
}

/// Runs the study selected by `cfg.study` and writes its tables into
/// `cfg.output_dir()/<study>/`.
pub fn run_study(cfg: &ExperimentConfig) -> Result<StudyOutcome> {
    cfg.validate().map_err(|(_, message)| Error::Config { line: 0, message })?;
    let mut out = OutputDir::create(cfg.output_dir().join(cfg.study.to_string()))?;
    out.write("config.txt", |w| w.write_all(cfg.to_config_string().as_bytes()))?;
    let mut summary = summary_header(cfg);
    let passed = match cfg.study {
        StudyKind::Convergence => convergence(cfg, &mut out, &mut summary)?,
        StudyKind::Preconditioner => preconditioner(cfg, &mut out, &mut summary)?,
        StudyKind::Nested => nested(cfg, &mut out, &mut summary)?,
        StudyKind::Properties => properties(cfg, &mut out, &mut summary)?,
    };
    let _ = writeln!(summary, "passed: {passed}");
    out.write("summary.txt", |w| w.write_all(summary.as_bytes()))?;
    Ok(StudyOutcome { files: out.files, passed, summary })
}

fn convergence(cfg: &ExperimentConfig, out: &mut OutputDir, summary: &mut String) -> Result<bool> {
    let (_, k_ref) = cfg.level_range();
    if k_ref < 3 {
        let _ = writeln!(summary, "reference_level: {k_ref}");
        let _ = writeln!(summary, "note: a fit needs K_ref >= 3; no errors computed");
        out.write("convergence.csv", |w| writeln!(w, "# schema: convergence v1\nK,e_K,fit_factor"))?;
        return Ok(true);
    }
    let h = build_hierarchy(cfg, k_ref + 1)?;
    let refs = h.reference_solutions(&cfg.reference_options())?;
    let study = convergence_study(&h, &refs, k_ref)?;
    out.write("convergence.csv", |w| write_convergence_csv(&study, w))?;
    let _ = writeln!(summary, "reference_level: {k_ref}");
    let _ = writeln!(summary, "fit_factor: {:.6}", study.fit_factor);
    let _ = writeln!(summary, "fit_residual: {:.6}", study.fit_residual);
    let _ = writeln!(summary, "expected_factor: {:.6}", 1.0 / (1.0 + cfg.c));
    let _ = writeln!(summary, "note: e_K is a heuristic estimate of the homogenization error");
    Ok(true)
}

/// Per-level PCG reports of a preconditioner study.
pub fn reduction_study(cfg: &ExperimentConfig, h: &Hierarchy, refs: &[Vec<f64>], lo: u32, hi: u32) -> Result<Vec<(u32, SolveReport)>> {
    let mut reports = Vec::new();
    for k in lo..=hi {
        let n = h.dofmap(k).total_dofs();
        let x0 = match cfg.initial {
            InitialGuess::Zero => vec![0.0; n],
            InitialGuess::Coarse => h.prolong(&refs[0], 1, k)?,
        };
        let opts = PcgOptions {
            rule: StopRule::Steps(cfg.pcg_steps),
            max_iterations: cfg.pcg_steps,
            min_iterations: 0,
            exact: Some(&refs[k as usize - 1]),
            norm: None,
        };
        let m = &h.energy(k).matrix;
        let (_, report) = if cfg.preconditioner {
            pcg(m, h.load(k), &h.preconditioner(k, PreconditionerConfig::default())?, &x0, &opts)?
        } else {
            pcg(m, h.load(k), &IdentityPreconditioner, &x0, &opts)?
        };
        eprintln!("level {k}: {n} dofs, average reduction {}", fmt_opt(report.average_reduction));
        reports.push((k, report));
    }
    Ok(reports)
}

fn preconditioner(cfg: &ExperimentConfig, out: &mut OutputDir, summary: &mut String) -> Result<bool> {
    let (lo, hi) = cfg.level_range();
    let h = build_hierarchy(cfg, hi)?;
    let refs = h.reference_solutions(&cfg.reference_options())?;
    let reports = reduction_study(cfg, &h, &refs, lo, hi)?;
    out.write("reduction_factors.csv", |w| {
        writeln!(w, "# schema: reduction-factors v1")?;
        let cols: Vec<String> = reports.iter().map(|(k, _)| format!("K{k}")).collect();
        writeln!(w, "nu,{}", cols.join(","))?;
        for nu in 0..cfg.pcg_steps {
            let row: Vec<String> =
                reports.iter().map(|(_, r)| r.reduction_factors.get(nu).map(|x| format!("{x:.6}")).unwrap_or_default()).collect();
            writeln!(w, "{},{}", nu + 1, row.join(","))?;
        }
        let avg: Vec<String> = reports.iter().map(|(_, r)| r.average_reduction.map(|x| format!("{x:.6}")).unwrap_or_default()).collect();
        writeln!(w, "rho,{}", avg.join(","))
    })?;
    let borrowed: Vec<(u32, &SolveReport)> = reports.iter().map(|(k, r)| (*k, r)).collect();
    out.write("solver_log.csv", |w| write_solver_log(&borrowed, w))?;
    let _ = writeln!(summary, "initial_iterate: {}", if cfg.initial == InitialGuess::Zero { "zero" } else { "coarse" });
    let _ = writeln!(summary, "pcg_steps: {}", cfg.pcg_steps);
    for (k, r) in &reports {
        let _ = writeln!(summary, "rho_{k}: {}", r.average_reduction.map(|x| format!("{x:.6}")).unwrap_or_else(|| "n/a".into()));
    }
    let _ = writeln!(summary, "reference_tolerance: {:e}", cfg.tolerance);
    Ok(true)
}

fn nested(cfg: &ExperimentConfig, out: &mut OutputDir, summary: &mut String) -> Result<bool> {
    let (_, hi) = cfg.level_range();
    let verify = cfg.nested == NestedMode::Verify;
    let levels = if verify { hi + 1 } else { hi };
    let h = build_hierarchy(cfg, levels)?;
    let refs = if verify { Some(h.reference_solutions(&cfg.reference_options())?) } else { None };
    let opts = NestedOptions {
        initial: InitialGuess::Coarse,
        fixed_steps: match cfg.nested {
            NestedMode::Verify => None,
            NestedMode::Fixed(n) => Some(n),
        },
        ..NestedOptions::default()
    };
    let report = nested_iteration(&h, hi, refs.as_deref(), &opts)?;
    out.write("nested.csv", |w| {
        writeln!(w, "# schema: nested v1")?;
        writeln!(w, "level,steps,error,bound,met")?;
        for l in &report.levels {
            let met = match (l.error, l.bound) {
                (Some(e), Some(b)) => (e <= b).to_string(),
                _ => String::new(),
            };
            writeln!(w, "{},{},{},{},{met}", l.level, l.steps, fmt_opt(l.error), fmt_opt(l.bound))?;
        }
        Ok(())
    })?;
    let borrowed: Vec<(u32, &SolveReport)> = report.levels.iter().map(|l| (l.level, &l.report)).collect();
    out.write("solver_log.csv", |w| write_solver_log(&borrowed, w))?;
    let steps: Vec<String> = report.levels.iter().map(|l| l.steps.to_string()).collect();
    let _ = writeln!(summary, "mode: {}", if verify { "verify" } else { "fixed" });
    let _ = writeln!(summary, "steps_per_level: [{}]", steps.join(", "));
    let _ = writeln!(summary, "max_steps: {}", report.max_steps());
    Ok(true)
}

fn properties(cfg: &ExperimentConfig, out: &mut OutputDir, summary: &mut String) -> Result<bool> {
    let (_, hi) = cfg.level_range();
    let h = build_hierarchy(cfg, hi)?;
    let suite = PropertySuiteConfig { samples: cfg.samples, seed: cfg.seed, max_level: hi };
    let outcomes = run_property_suite(&h, None, &suite)?;
    out.write("properties.csv", |w| write_property_csv(&outcomes, w))?;
    let _ = writeln!(summary, "property_seed: {}", cfg.seed);
    let _ = writeln!(summary, "samples: {}", cfg.samples);
    for o in &outcomes {
        let _ = writeln!(summary, "{}: {} (worst {:.3e}, threshold {:.1e})", o.check, if o.pass { "pass" } else { "FAIL" }, o.worst, o.threshold);
    }
    Ok(outcomes.iter().all(|o| o.pass))
}

/// Writes the network, its per-level statistics, and the mesh and dof map of
/// the top level into `cfg.output_dir()/generate/`.
pub fn generate(cfg: &ExperimentConfig) -> Result<StudyOutcome> {
    cfg.validate().map_err(|(_, message)| Error::Config { line: 0, message })?;
    let (_, hi) = cfg.level_range();
    let h = build_hierarchy(cfg, hi)?;
    let net = h.network();
    let stats = network_stats(net)?;
    let mut out = OutputDir::create(cfg.output_dir().join("generate"))?;
    out.write("config.txt", |w| w.write_all(cfg.to_config_string().as_bytes()))?;
    out.write("network.txt", |w| write_network(net, w))?;
    out.write("network_stats.csv", |w| {
        writeln!(w, "# schema: network-stats v1")?;
        writeln!(w, "level,facet_count,total_length,d_k,crossing_constant,shape_constant,cell_count")?;
        for l in &stats.levels {
            writeln!(
                w,
                "{},{},{:.12e},{:.12e},{},{:.12e},{}",
                l.level, l.facet_count, l.total_length, l.d_k, l.crossing_constant, l.shape_constant, l.cell_count
            )?;
        }
        Ok(())
    })?;
    out.write("mesh.vtk", |w| write_mesh_vtk(h.mesh(hi), h.dofmap(hi), w))?;
    out.write("dofmap.csv", |w| write_dof_csv(h.mesh(hi), h.dofmap(hi), w))?;
    let mut summary = summary_header(cfg);
    let _ = writeln!(summary, "facets: {}", stats.total_facets());
    let _ = writeln!(summary, "dofs_top_level: {}", h.dofmap(hi).total_dofs());
    out.write("summary.txt", |w| w.write_all(summary.as_bytes()))?;
    Ok(StudyOutcome { files: out.files, passed: true, summary })
}

/// VTK legacy ASCII grid with one point per broken dof followed by one per
/// boundary vertex, so jumps across interfaces render as discontinuities.
pub fn export_solution<W: Write>(u: &[f64], mesh: &Triangulation, dofmap: &BrokenDofMap, mut w: W) -> Result<()> {
    let n = dofmap.total_dofs();
    if u.len() != n {
        return Err(Error::DimensionMismatch { expected: n, actual: u.len() });
    }
    let boundary: Vec<u32> = (0..mesh.vertex_count() as u32).filter(|&v| mesh.is_boundary(v)).collect();
    let mut boundary_index = vec![NONE; mesh.vertex_count()];
    for (i, &v) in boundary.iter().enumerate() {
        boundary_index[v as usize] = (n + i) as u32;
    }
    let io = |e| Error::io("<vtk stream>", e);
    let points = n + boundary.len();
    let mut body = || -> std::io::Result<()> {
        writeln!(w, "# vtk DataFile Version 3.0")?;
        writeln!(w, "fractal-homog broken solution level {}", dofmap.level())?;
        writeln!(w, "ASCII")?;
        writeln!(w, "DATASET UNSTRUCTURED_GRID")?;
        writeln!(w, "POINTS {points} double")?;
        for d in dofmap.dofs() {
            let p = mesh.vertex(d.vertex);
            writeln!(w, "{} {} 0", p[0], p[1])?;
        }
        for &v in &boundary {
            let p = mesh.vertex(v);
            writeln!(w, "{} {} 0", p[0], p[1])?;
        }
        let t = mesh.triangle_count();
        writeln!(w, "CELLS {t} {}", 4 * t)?;
        for tr in 0..t as u32 {
            let corners = mesh.triangle(tr);
            let ids = dofmap.triangle_dofs(tr);
            let id = |l: usize| if ids[l] == NONE { boundary_index[corners[l] as usize] } else { ids[l] };
            writeln!(w, "3 {} {} {}", id(0), id(1), id(2))?;
        }
        writeln!(w, "CELL_TYPES {t}")?;
        for _ in 0..t {
            writeln!(w, "5")?;
        }
        writeln!(w, "POINT_DATA {points}")?;
        writeln!(w, "SCALARS u double 1")?;
        writeln!(w, "LOOKUP_TABLE default")?;
        for x in u.iter().copied().chain(std::iter::repeat_n(0.0, boundary.len())) {
            writeln!(w, "{x:.17e}")?;
        }
        writeln!(w, "CELL_DATA {t}")?;
        writeln!(w, "SCALARS cell_id int 1")?;
        writeln!(w, "LOOKUP_TABLE default")?;
        for tr in 0..t as u32 {
            writeln!(w, "{}", dofmap.triangle_cell(tr))?;
        }
        Ok(())
    };
    body().map_err(io)
}

/// Solves the reference problem on `level` and writes it (and optionally the
/// operator and load vector) into `cfg.output_dir()/export/`.
pub fn export(cfg: &ExperimentConfig, level: Option<u32>, matrix: bool) -> Result<StudyOutcome> {
    cfg.validate().map_err(|(_, message)| Error::Config { line: 0, message })?;
    let k = level.unwrap_or(cfg.level_range().1);
    if k == 0 {
        return Err(Error::InvalidLevel("export level must be at least 1".into()));
    }
    let h = build_hierarchy(cfg, k)?;
    let u = crate::solve::solve_reference(&h.energy(k).matrix, h.load(k), &cfg.reference_options())?;
    let mut out = OutputDir::create(cfg.output_dir().join("export"))?;
    out.write("config.txt", |w| w.write_all(cfg.to_config_string().as_bytes()))?;
    let path = out.dir.join("solution.vtk");
    let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut w = BufWriter::new(file);
    export_solution(&u, h.mesh(k), h.dofmap(k), &mut w).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(&path, source),
        other => other,
    })?;
    w.flush().map_err(|e| Error::io(&path, e))?;
    out.files.push(path);
    if matrix {
        out.write("operator.mtx", |w| write_matrix_market(h.energy(k), w))?;
        out.write("load.csv", |w| write_vector_csv(h.load(k), w))?;
    }
    let mut summary = summary_header(cfg);
    let _ = writeln!(summary, "export_level: {k}");
    let _ = writeln!(summary, "dofs: {}", h.dofmap(k).total_dofs());
    out.write("summary.txt", |w| w.write_all(summary.as_bytes()))?;
    Ok(StudyOutcome { files: out.files, passed: true, summary })
}

#[derive(Debug, Parser)]
#[command(name = "fractal-homog", version, about = "Multilevel solvers and studies for hierarchical interface networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build the interface network and write it with statistics, mesh and dof map.
    Generate(Common),
    /// Run a study and write plot-ready CSV tables and a summary.
    Study {
        #[arg(value_enum)]
        kind: StudyKind,
        #[command(flatten)]
        common: Common,
    },
    /// Solve the reference problem on one level and write it as VTK.
    Export {
        /// Level to solve (defaults to k_max).
        #[arg(long)]
        level: Option<u32>,
        /// Also write the operator (Matrix Market) and the load vector.
        #[arg(long)]
        matrix: bool,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Debug, Args)]
struct Common {
    /// Config file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override any config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    geometry: Option<NetworkKind>,
    #[arg(long)]
    k_min: Option<u32>,
    #[arg(long)]
    k_max: Option<u32>,
    /// Initial mesh size, e.g. `0.5` or `1/16`.
    #[arg(long)]
    h1: Option<String>,
    #[arg(long)]
    c: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    samples: Option<usize>,
    /// Allow the memory-hungry top levels.
    #[arg(long)]
    large: bool,
    /// Output directory.
    #[arg(long, env = OUTPUT_DIR_ENV)]
    out: Option<PathBuf>,
}

impl Common {
    fn config(&self, study: Option<StudyKind>) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => validate_config(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)?,
            None => ExperimentConfig::default(),
        };
        let mut overrides: Vec<(String, String)> = Vec::new();
        if let Some(s) = study {
            overrides.push(("study".into(), s.to_string()));
        }
        let flags = [
            ("geometry", self.geometry.map(|g| g.to_string())),
            ("k_min", self.k_min.map(|k| k.to_string())),
            ("k_max", self.k_max.map(|k| k.to_string())),
            ("h1", self.h1.clone()),
            ("c", self.c.map(|c| c.to_string())),
            ("seed", self.seed.map(|s| s.to_string())),
            ("samples", self.samples.map(|s| s.to_string())),
            ("large", self.large.then(|| "on".to_string())),
            ("output", self.out.as_ref().map(|p| p.display().to_string())),
        ];
        overrides.extend(flags.into_iter().filter_map(|(k, v)| v.map(|v| (k.to_string(), v))));
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config { line: 0, message: format!("--set expects KEY=VALUE, got `{kv}`") })?;
            overrides.push((k.trim().to_string(), v.trim().to_string()));
        }
        for (k, v) in overrides {
            cfg.set(&k, &v).map_err(|message| Error::Config { line: 0, message: format!("{k}: {message}") })?;
        }
        cfg.validate().map_err(|(key, message)| Error::Config { line: 0, message: format!("{key}: {message}") })?;
        Ok(cfg)
    }
}

/// Command-line entry point; returns the process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let result = match &cli.command {
        Command::Generate(common) => common.config(None).and_then(|cfg| generate(&cfg)),
        Command::Study { kind, common } => common.config(Some(*kind)).and_then(|cfg| run_study(&cfg)),
        Command::Export { level, matrix, common } => common.config(None).and_then(|cfg| export(&cfg, *level, *matrix)),
    };
    match result {
        Ok(outcome) => {
            print!("{}", outcome.summary);
            for f in &outcome.files {
                println!("wrote {}", f.display());
            }
            if outcome.passed {
                0
            } else {
                1
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

/// Reads a whole text file, mapping failures to [`Error::Io`].
pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_gives_defaults() {
        let cfg = validate_config("").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!((cfg.c, cfg.mesh_size(), cfg.geometry), (1.0, 0.5, NetworkKind::Cantor));
        assert_eq!(cfg.f, SourceSpec::Constant(1.0));
        assert_eq!(cfg.a, CoefficientSpec::Constant(1.0));
        assert_eq!(cfg.level_range(), (1, 8));
    }

    #[test]
    fn invalid_values_are_rejected_with_lines() {
        match validate_config("# comment\nc = 0\n") {
            Err(Error::Config { line, message }) => assert!(line == 2 && message.contains("positive"), "{message}"),
            other => panic!("{other:?}"),
        }
        assert!(matches!(validate_config("h1 = 0.3"), Err(Error::Config { line: 1, .. })));
        assert!(matches!(validate_config("colour = red"), Err(Error::Config { line: 1, .. })));
        assert!(matches!(validate_config("c = 1\nc = 2"), Err(Error::Config { line: 2, .. })));
        assert!(matches!(validate_config("k_max = 9"), Err(Error::Config { .. })));
        assert!(validate_config("k_max = 9\nlarge = on").is_ok());
        assert!(matches!(validate_config("just words"), Err(Error::Config { line: 1, .. })));
    }

    #[test]
    fn parses_every_key() {
        let text = "geometry = layered\nstudy = nested\nk_min = 2\nk_max = 4\nh1 = 1/16\nc = 2\nf = affine 1 0.5 -1\n\
                    a = levels 1 2 0.5\ncrossing = 1 3 7 15\nseed = 7\npattern = diagonal\nmacro_interfaces = 2\n\
                    band_halfwidth = 3\ntolerance = 1e-10\nmax_iterations = 50\ndirect_threshold = 10\npreconditioner = off\n\
                    pcg_steps = 4\ninitial = coarse\nnested_steps = 2\nsamples = 10\nlarge = off\noutput = /tmp/x\n";
        let cfg = validate_config(text).unwrap();
        assert_eq!(cfg.h1, Some(0.0625));
        assert_eq!(cfg.f, SourceSpec::Affine([1.0, 0.5, -1.0]));
        assert_eq!(cfg.a, CoefficientSpec::PerLevel(vec![1.0, 2.0, 0.5]));
        assert_eq!(cfg.nested, NestedMode::Fixed(2));
        assert_eq!(cfg.initial, InitialGuess::Coarse);
        assert!(!cfg.preconditioner);
        assert_eq!(validate_config(&cfg.to_config_string()).unwrap(), cfg);
    }

    #[test]
    fn degenerate_single_level_studies_complete() {
        let dir = tempfile::tempdir().unwrap();
        for study in [StudyKind::Convergence, StudyKind::Preconditioner, StudyKind::Nested, StudyKind::Properties] {
            let cfg = ExperimentConfig {
                study,
                k_max: Some(1),
                samples: 5,
                output: Some(dir.path().to_path_buf()),
                ..ExperimentConfig::default()
            };
            let out = run_study(&cfg).unwrap();
            assert!(out.passed, "{study}");
            assert!(out.files.iter().all(|f| f.exists()));
        }
        let table = fs::read_to_string(dir.path().join("preconditioner/reduction_factors.csv")).unwrap();
        assert!(table.starts_with("# schema: reduction-factors v1\nnu,K1\n"), "{table}");
    }

    #[test]
    fn export_counts_points() {
        let cfg = ExperimentConfig { k_max: Some(2), ..ExperimentConfig::default() };
        let h = build_hierarchy(&cfg, 2).unwrap();
        let u = vec![0.0; h.dofmap(2).total_dofs()];
        let mut buf = Vec::new();
        export_solution(&u, h.mesh(2), h.dofmap(2), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let boundary = (0..h.mesh(2).vertex_count() as u32).filter(|&v| h.mesh(2).is_boundary(v)).count();
        let expected = h.dofmap(2).total_dofs() + boundary;
        assert!(text.contains(&format!("POINTS {expected} double")));
        assert!(export_solution(&[1.0], h.mesh(2), h.dofmap(2), Vec::new()).is_err());
    }

    #[test]
    fn cli_rejects_bad_arguments() {
        assert_eq!(run(["fractal-homog", "study", "nonsense"]), 2);
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().to_str().unwrap();
        assert_eq!(run(["fractal-homog", "generate", "--k-max", "2", "--c", "0", "--out", out]), 1);
        assert_eq!(run(["fractal-homog", "generate", "--k-max", "2", "--out", out]), 0);
        assert!(dir.path().join("generate/network.txt").exists());
    }
}
