//! Scenario files, dispatch to the engines, and result files.
//!
//! A scenario file is TOML. Physical quantities are bare numbers in code
//! units (λbar = 1, γ = 1) or strings carrying the matching unit suffix:
//! `r0 = "20 lambdabar"`, `detuning = "-0.5 gamma"`, `n0 = "1e-3 lambdabar^-3"`,
//! `values = ["0 rad", "0.01 rad"]`. Any other unit is rejected, as are keys
//! and sections the chosen scenario does not use. Validation reports every
//! problem it finds, not only the first.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::Vector3;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::angular::{spherical_unit, HalfInt, LevelScheme};
use crate::error::{ConfigIssue, Error, Result};
use crate::mcscatter::{
    cbs_enhancement, gain_transport, resonance_cross_section, simulate_ladder, tail_log_ratio, Cloud, DensityProfile,
    McConfig, PolarizationChannel, Source,
};
use crate::medium::{mean_raman_frequency, susceptibility, Atom, ControlField, GroundState, ReferenceTransition};
use crate::microdipole::{
    ball_radius, cross_section_spectrum, random_ball, random_gaussian, self_consistent_epsilon, slab_transmission,
    sphere_extinction, DipoleModel, RunningStats, CONTACT_FLOOR,
};
use crate::protocols::{mz_signal, PsiMinusState};
use crate::transport::{
    critical_radius, diffusion_constant, letokhov_threshold, solve_gain_diffusion_sphere, Boundary, DiffusionModel,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    CbsCone,
    LadderSpectrum,
    GainTransport,
    EitSpectrum,
    CoupledDipoleSpectrum,
    SelfconsistentSlab,
    DiffusionThreshold,
    ProtocolUtils,
}

impl Scenario {
    pub const ALL: [Scenario; 8] = [
        Self::CbsCone,
        Self::LadderSpectrum,
        Self::GainTransport,
        Self::EitSpectrum,
        Self::CoupledDipoleSpectrum,
        Self::SelfconsistentSlab,
        Self::DiffusionThreshold,
        Self::ProtocolUtils,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::CbsCone => "cbs-cone",
            Self::LadderSpectrum => "ladder-spectrum",
            Self::GainTransport => "gain-transport",
            Self::EitSpectrum => "eit-spectrum",
            Self::CoupledDipoleSpectrum => "coupled-dipole-spectrum",
            Self::SelfconsistentSlab => "selfconsistent-slab",
            Self::DiffusionThreshold => "diffusion-threshold",
            Self::ProtocolUtils => "protocol-utils",
        }
    }

    fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == s)
    }

    /// Name and unit of the swept quantity.
    pub fn sweep_variable(self) -> (&'static str, Unit) {
        match self {
            Self::CbsCone => ("theta", Unit::Angle),
            Self::GainTransport => ("rabi", Unit::Frequency),
            Self::DiffusionThreshold => ("r0", Unit::Length),
            Self::ProtocolUtils => ("n_bar", Unit::Dimensionless),
            _ => ("detuning", Unit::Frequency),
        }
    }

    /// Sections this scenario reads besides `[sweep]` and `[output]`.
    fn sections(self) -> &'static [&'static str] {
        match self {
            Self::CbsCone => &["atom", "cloud", "detection", "mc"],
            Self::LadderSpectrum => &["atom", "cloud", "control", "detection", "mc"],
            Self::GainTransport => &["atom", "cloud", "control", "mc"],
            Self::EitSpectrum => &["atom", "cloud", "control"],
            Self::CoupledDipoleSpectrum => &["cloud", "dipoles", "mc"],
            Self::SelfconsistentSlab => &["cloud", "slab"],
            Self::DiffusionThreshold => &["diffusion"],
            Self::ProtocolUtils => &["protocol"],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Unit {
    Length,
    Frequency,
    Density,
    Angle,
    Dimensionless,
}

impl Unit {
    pub fn suffix(self) -> &'static str {
        match self {
            Unit::Length => "lambdabar",
            Unit::Frequency => "gamma",
            Unit::Density => "lambdabar^-3",
            Unit::Angle => "rad",
            Unit::Dimensionless => "",
        }
    }

    /// Label used in CSV headers.
    pub fn label(self) -> &'static str {
        match self {
            Unit::Dimensionless => "1",
            u => u.suffix(),
        }
    }

    fn describe(self) -> &'static str {
        match self {
            Unit::Length => "lengths are in lambdabar",
            Unit::Frequency => "frequencies are in gamma",
            Unit::Density => "densities are in lambdabar^-3",
            Unit::Angle => "angles are in rad",
            Unit::Dimensionless => "this quantity is dimensionless",
        }
    }
}

// ---------------------------------------------------------------------------
// Typed configuration

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioConfig {
    pub scenario: Scenario,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub atom: Option<AtomSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cloud: Option<CloudSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub control: Option<ControlSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detection: Option<DetectionSpec>,
    pub sweep: SweepSpec,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mc: Option<McSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dipoles: Option<DipoleSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub slab: Option<SlabSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diffusion: Option<DiffusionSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub protocol: Option<ProtocolSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<OutputSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AtomSpec {
    /// `two-level`, `rb85-d2` or `rb87-d2-lambda`.
    pub scheme: String,
    /// Isotropic population of each ground hyperfine level F0.
    pub population: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CloudSpec {
    /// `gaussian`, `sphere` or `slab`; absent for scenarios that only use n0.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub profile: Option<String>,
    pub n0: f64,
    /// Gaussian radius, ball radius or slab thickness; absent when the
    /// scenario derives the size itself.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r0: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ControlSpec {
    pub rabi: f64,
    /// Detuning from the reference transition F0 → F.
    pub detuning: f64,
    pub f0: i64,
    /// Ground sublevel of the reference transition; the excited sublevel
    /// follows from the polarisation.
    pub m0: i64,
    pub f: i64,
    /// `pi`, `sigma+` or `sigma-`.
    pub polarization: String,
    pub ground_width: f64,
    /// When set, the control frequency is corrected for its light shift so
    /// that the mean Raman line sits at this probe detuning.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub raman_line: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectionSpec {
    pub channels: Vec<String>,
    /// Probe detuning for the CBS cone.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detuning: Option<f64>,
    /// Detection angle from exact backscattering for ladder spectra.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepSpec {
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McSpec {
    /// Zero for coupled-dipole runs, which average over configurations instead.
    #[serde(skip_serializing_if = "is_zero")]
    pub trajectories: u64,
    pub seed: u64,
    pub workers: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_order: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weight_floor: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub crossed_damping: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tail_window: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DipoleSpec {
    pub n_atoms: usize,
    /// `scalar` or `vector`.
    pub model: String,
    pub configurations: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub positions: Option<Vec<[f64; 3]>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlabSpec {
    pub thickness: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiffusionSpec {
    pub l0: f64,
    pub cos_mean: f64,
    pub albedo: f64,
    /// Gain length; absent for a passive medium.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l_g: Option<f64>,
    pub velocity: f64,
    pub n_cells: usize,
    /// `absorbing`, `mixed` or `reflecting`.
    pub boundary: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProtocolSpec {
    pub tol: f64,
    pub i_mean: f64,
    pub xi: f64,
    pub n_atoms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutputSpec {
    pub dir: String,
    pub formats: Vec<String>,
}

impl ScenarioConfig {
    /// Canonical TOML: every default filled in, quantities as bare numbers.
    pub fn canonical_toml(&self) -> String {
        toml::to_string(self).expect("configuration is always representable in TOML")
    }

    /// SHA-256 of the canonical form without the fields that cannot change
    /// results (output location and worker count).
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output = None;
        if let Some(mc) = c.mc.as_mut() {
            mc.workers = 0;
        }
        hex(&Sha256::digest(c.canonical_toml().as_bytes()))
    }

    pub fn output_dir(&self) -> Option<PathBuf> {
        self.output.as_ref().map(|o| PathBuf::from(&o.dir))
    }
}

fn is_zero(x: &u64) -> bool {
    *x == 0
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

// ---------------------------------------------------------------------------
// Schema and raw validation

#[derive(Clone, Copy)]
enum Kind {
    Str(&'static [&'static str]),
    StrList(&'static [&'static str]),
    Int(i64),
    Num(Dim),
    NumList(Dim),
    Population,
    Points,
}

#[derive(Clone, Copy)]
enum Dim {
    Fixed(Unit),
    Sweep,
}

const SCHEMES: &[&str] = &["two-level", "rb85-d2", "rb87-d2-lambda"];
const CHANNELS: &[&str] = &["lin_par", "lin_perp", "hel_par", "hel_perp"];

const SCHEMA: &[(&str, &[(&str, Kind)])] = &[
    ("atom", &[("scheme", Kind::Str(SCHEMES)), ("population", Kind::Population)]),
    (
        "cloud",
        &[
            ("profile", Kind::Str(&["gaussian", "sphere", "slab"])),
            ("n0", Kind::Num(Dim::Fixed(Unit::Density))),
            ("b0", Kind::Num(Dim::Fixed(Unit::Dimensionless))),
            ("r0", Kind::Num(Dim::Fixed(Unit::Length))),
        ],
    ),
    (
        "control",
        &[
            ("rabi", Kind::Num(Dim::Fixed(Unit::Frequency))),
            ("detuning", Kind::Num(Dim::Fixed(Unit::Frequency))),
            ("f0", Kind::Int(0)),
            ("m0", Kind::Int(i64::MIN)),
            ("f", Kind::Int(0)),
            ("polarization", Kind::Str(&["pi", "sigma+", "sigma-"])),
            ("ground_width", Kind::Num(Dim::Fixed(Unit::Frequency))),
            ("raman_line", Kind::Num(Dim::Fixed(Unit::Frequency))),
        ],
    ),
    (
        "detection",
        &[
            ("channels", Kind::StrList(CHANNELS)),
            ("detuning", Kind::Num(Dim::Fixed(Unit::Frequency))),
            ("theta", Kind::Num(Dim::Fixed(Unit::Angle))),
        ],
    ),
    (
        "sweep",
        &[
            ("values", Kind::NumList(Dim::Sweep)),
            ("start", Kind::Num(Dim::Sweep)),
            ("stop", Kind::Num(Dim::Sweep)),
            ("count", Kind::Int(1)),
        ],
    ),
    (
        "mc",
        &[
            ("trajectories", Kind::Int(1)),
            ("seed", Kind::Int(0)),
            ("workers", Kind::Int(1)),
            ("max_order", Kind::Int(1)),
            ("weight_floor", Kind::Num(Dim::Fixed(Unit::Dimensionless))),
            ("crossed_damping", Kind::Num(Dim::Fixed(Unit::Dimensionless))),
            ("tail_window", Kind::Int(2)),
        ],
    ),
    (
        "dipoles",
        &[
            ("n_atoms", Kind::Int(1)),
            ("model", Kind::Str(&["scalar", "vector"])),
            ("configurations", Kind::Int(1)),
            ("positions", Kind::Points),
        ],
    ),
    ("slab", &[("thickness", Kind::Num(Dim::Fixed(Unit::Length)))]),
    (
        "diffusion",
        &[
            ("l0", Kind::Num(Dim::Fixed(Unit::Length))),
            ("cos_mean", Kind::Num(Dim::Fixed(Unit::Dimensionless))),
            ("albedo", Kind::Num(Dim::Fixed(Unit::Dimensionless))),
            ("l_g", Kind::Num(Dim::Fixed(Unit::Length))),
            ("velocity", Kind::Num(Dim::Fixed(Unit::Dimensionless))),
            ("n_cells", Kind::Int(8)),
            ("boundary", Kind::Str(&["absorbing", "mixed", "reflecting"])),
        ],
    ),
    (
        "protocol",
        &[
            ("tol", Kind::Num(Dim::Fixed(Unit::Dimensionless))),
            ("i_mean", Kind::Num(Dim::Fixed(Unit::Dimensionless))),
            ("xi", Kind::Num(Dim::Fixed(Unit::Dimensionless))),
            ("n_atoms", Kind::Num(Dim::Fixed(Unit::Dimensionless))),
        ],
    ),
    ("output", &[("dir", Kind::Str(&[])), ("formats", Kind::StrList(&["csv", "json"]))]),
];

/// Key names people reach for, mapped to the ones the schema uses.
const SYNONYMS: &[(&str, &str)] = &[
    ("radius", "r0"),
    ("size", "r0"),
    ("width", "r0"),
    ("density", "n0"),
    ("optical_depth", "b0"),
    ("omega", "rabi"),
    ("delta", "detuning"),
    ("length", "thickness"),
    ("n", "n_atoms"),
    ("threads", "workers"),
];

/// Foreign unit suffixes that signal a key written in laboratory units.
const FOREIGN_UNITS: &[&str] =
    &["mm", "cm", "m", "um", "nm", "km", "hz", "khz", "mhz", "ghz", "s", "ms", "us", "ns", "deg", "k", "mk", "uk"];

#[derive(Debug, Clone, PartialEq)]
enum Val {
    Num(f64),
    Int(i64),
    Str(String),
    StrList(Vec<String>),
    NumList(Vec<f64>),
    Population(BTreeMap<String, f64>),
    Points(Vec<[f64; 3]>),
}

struct Issues(Vec<ConfigIssue>);

impl Issues {
    fn push(&mut self, key: impl Into<String>, message: impl Into<String>) {
        self.0.push(ConfigIssue { key: key.into(), message: message.into() });
    }
}

fn suggest(word: &str, candidates: &[&str]) -> Option<String> {
    let lower = word.to_ascii_lowercase();
    let base = match lower.rsplit_once('_') {
        Some((b, u)) if FOREIGN_UNITS.contains(&u) => b.to_string(),
        _ => lower.clone(),
    };
    if let Some((_, to)) = SYNONYMS.iter().find(|(from, to)| *from == base && candidates.contains(to)) {
        return Some(to.to_string());
    }
    candidates
        .iter()
        .map(|c| (strsim::jaro_winkler(&base, c), *c))
        .filter(|(s, _)| *s > 0.75)
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, c)| c.to_string())
}

fn unknown_key_message(key: &str, candidates: &[&str]) -> String {
    let mut msg = "unknown key".to_string();
    if let Some((_, u)) = key.to_ascii_lowercase().rsplit_once('_') {
        if FOREIGN_UNITS.contains(&u) {
            msg.push_str(&format!(
                "; laboratory units such as `{u}` are not accepted (lengths in lambdabar, frequencies in gamma)"
            ));
        }
    }
    if let Some(s) = suggest(key, candidates) {
        msg.push_str(&format!("; did you mean `{s}`?"));
    }
    msg
}

fn number(v: &toml::Value) -> Option<f64> {
    match v {
        toml::Value::Float(f) => Some(*f),
        toml::Value::Integer(i) => Some(*i as f64),
        _ => None,
    }
}

/// A bare number, or "<number> <unit>" with exactly the expected unit.
fn quantity(v: &toml::Value, unit: Option<Unit>) -> std::result::Result<f64, String> {
    if let Some(x) = number(v) {
        return Ok(x);
    }
    let toml::Value::String(s) = v else {
        return Err("expected a number or a string such as \"1.5 gamma\"".into());
    };
    let mut parts = s.split_whitespace();
    let num = parts.next().unwrap_or("");
    let x: f64 = num.parse().map_err(|_| format!("cannot read a number from {s:?}"))?;
    let suffix: Vec<&str> = parts.collect();
    let suffix = suffix.join(" ");
    match unit {
        None => Ok(x),
        Some(u) if suffix.is_empty() || suffix == u.suffix() => Ok(x),
        Some(u) if u == Unit::Dimensionless => Err(format!("unit `{suffix}` given but {}", u.describe())),
        Some(u) => Err(format!("unit `{suffix}` is not accepted; {} (write \"{x} {}\")", u.describe(), u.suffix())),
    }
}

fn check_value(v: &toml::Value, kind: Kind, sweep_unit: Option<Unit>) -> std::result::Result<Val, String> {
    let unit_of = |d: Dim| match d {
        Dim::Fixed(u) => Some(u),
        Dim::Sweep => sweep_unit,
    };
    match kind {
        Kind::Str(allowed) => {
            let toml::Value::String(s) = v else { return Err("expected a string".into()) };
            if !allowed.is_empty() && !allowed.contains(&s.as_str()) {
                let mut msg = format!("`{s}` is not one of {}", allowed.join(", "));
                if let Some(g) = suggest(s, allowed) {
                    msg.push_str(&format!("; did you mean `{g}`?"));
                }
                return Err(msg);
            }
            Ok(Val::Str(s.clone()))
        }
        Kind::StrList(allowed) => {
            let toml::Value::Array(a) = v else { return Err("expected an array of strings".into()) };
            let mut out = Vec::new();
            for item in a {
                match check_value(item, Kind::Str(allowed), sweep_unit)? {
                    Val::Str(s) => out.push(s),
                    _ => unreachable!(),
                }
            }
            if out.is_empty() {
                return Err("must not be empty".into());
            }
            Ok(Val::StrList(out))
        }
        Kind::Int(min) => {
            let toml::Value::Integer(i) = v else { return Err("expected an integer".into()) };
            if *i < min {
                return Err(format!("must be at least {min}, got {i}"));
            }
            Ok(Val::Int(*i))
        }
        Kind::Num(d) => {
            let x = quantity(v, unit_of(d))?;
            Ok(Val::Num(x))
        }
        Kind::NumList(d) => {
            let toml::Value::Array(a) = v else { return Err("expected an array".into()) };
            let xs = a
                .iter()
                .enumerate()
                .map(|(i, item)| quantity(item, unit_of(d)).map_err(|e| format!("element {i}: {e}")))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            Ok(Val::NumList(xs))
        }
        Kind::Population => {
            let toml::Value::Table(t) = v else { return Err("expected a table of F0 = fraction".into()) };
            let mut out = BTreeMap::new();
            for (k, item) in t {
                let p = number(item).ok_or_else(|| format!("population of F0={k} must be a number"))?;
                out.insert(k.clone(), p);
            }
            Ok(Val::Population(out))
        }
        Kind::Points => {
            let toml::Value::Array(a) = v else { return Err("expected an array of [x, y, z] positions".into()) };
            let mut out = Vec::new();
            for (i, item) in a.iter().enumerate() {
                let p = match item {
                    toml::Value::Array(c) if c.len() == 3 => {
                        let xyz: Vec<f64> = c
                            .iter()
                            .map(|x| quantity(x, Some(Unit::Length)))
                            .collect::<std::result::Result<_, _>>()
                            .map_err(|e| format!("position {i}: {e}"))?;
                        [xyz[0], xyz[1], xyz[2]]
                    }
                    _ => return Err(format!("position {i} must be [x, y, z]")),
                };
                out.push(p);
            }
            Ok(Val::Points(out))
        }
    }
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, col)
}

/// Reads and validates a scenario file.
pub fn parse_config(path: &Path) -> Result<ScenarioConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config_str(&text)
}

/// Validates scenario text, returning every problem found.
pub fn parse_config_str(text: &str) -> Result<ScenarioConfig> {
    let table: toml::Table = match text.parse() {
        Ok(t) => t,
        Err(e) => {
            let e: toml::de::Error = e;
            let at = e.span().map(|s| line_col(text, s.start));
            let message = match at {
                Some((l, c)) => format!("syntax error at line {l}, column {c}: {}", e.message().trim()),
                None => format!("syntax error: {}", e.message().trim()),
            };
            return Err(Error::Config(vec![ConfigIssue { key: String::new(), message }]));
        }
    };
    let mut issues = Issues(Vec::new());

    let scenario = match table.get("scenario") {
        None => {
            issues.push("scenario", "missing; choose one of the scenario names");
            None
        }
        Some(toml::Value::String(s)) => match Scenario::from_name(s) {
            Some(sc) => Some(sc),
            None => {
                let names: Vec<&str> = Scenario::ALL.iter().map(|s| s.name()).collect();
                let mut msg = format!("unknown scenario `{s}`; expected one of {}", names.join(", "));
                if let Some(g) = suggest(s, &names) {
                    msg.push_str(&format!("; did you mean `{g}`?"));
                }
                issues.push("scenario", msg);
                None
            }
        },
        Some(_) => {
            issues.push("scenario", "expected a string");
            None
        }
    };
    let sweep_unit = scenario.map(|s| s.sweep_variable().1);

    let section_names: Vec<&str> = SCHEMA.iter().map(|(s, _)| *s).collect();
    let mut top_names = section_names.clone();
    top_names.push("scenario");
    let mut raw: BTreeMap<String, Val> = BTreeMap::new();
    for (name, value) in &table {
        if name == "scenario" {
            continue;
        }
        let Some((_, keys)) = SCHEMA.iter().find(|(s, _)| s == name) else {
            issues.push(name.clone(), unknown_key_message(name, &top_names));
            continue;
        };
        let toml::Value::Table(section) = value else {
            issues.push(name.clone(), "expected a section");
            continue;
        };
        if let Some(sc) = scenario {
            if !(sc.sections().contains(&name.as_str()) || name == "sweep" || name == "output") {
                issues.push(name.clone(), format!("section is not used by scenario {}", sc.name()));
                continue;
            }
        }
        let key_names: Vec<&str> = keys.iter().map(|(k, _)| *k).collect();
        for (key, v) in section {
            let path = format!("{name}.{key}");
            match keys.iter().find(|(k, _)| k == key) {
                None => issues.push(path, unknown_key_message(key, &key_names)),
                Some((_, kind)) => match check_value(v, *kind, sweep_unit) {
                    Ok(val) => {
                        raw.insert(path, val);
                    }
                    Err(msg) => issues.push(path, msg),
                },
            }
        }
    }

    let Some(scenario) = scenario else {
        return Err(Error::Config(issues.0));
    };
    let cfg = build(scenario, &raw, &mut issues);
    if issues.0.is_empty() {
        Ok(cfg)
    } else {
        Err(Error::Config(issues.0))
    }
}

// ---------------------------------------------------------------------------
// Defaults and semantic checks

struct Reader<'a> {
    raw: &'a BTreeMap<String, Val>,
    issues: &'a mut Issues,
}

impl Reader<'_> {
    fn num(&self, key: &str) -> Option<f64> {
        match self.raw.get(key) {
            Some(Val::Num(x)) => Some(*x),
            _ => None,
        }
    }

    fn int(&self, key: &str) -> Option<i64> {
        match self.raw.get(key) {
            Some(Val::Int(x)) => Some(*x),
            _ => None,
        }
    }

    fn string(&self, key: &str) -> Option<String> {
        match self.raw.get(key) {
            Some(Val::Str(x)) => Some(x.clone()),
            _ => None,
        }
    }

    fn has(&self, key: &str) -> bool {
        self.raw.contains_key(key)
    }

    fn positive(&mut self, key: &str, default: f64) -> f64 {
        let x = self.num(key).unwrap_or(default);
        if !(x > 0.0 && x.is_finite()) {
            self.issues.push(key, format!("must be positive and finite, got {x}"));
        }
        x
    }

    fn finite(&mut self, key: &str, default: f64) -> f64 {
        let x = self.num(key).unwrap_or(default);
        if !x.is_finite() {
            self.issues.push(key, "must be finite");
        }
        x
    }

    fn forbid(&mut self, key: &str, why: &str) {
        if self.has(key) {
            self.issues.push(key, why.to_string());
        }
    }
}

fn scheme_by_name(name: &str) -> LevelScheme {
    match name {
        "rb85-d2" => LevelScheme::rb85_d2(),
        "rb87-d2-lambda" => LevelScheme::rb87_d2_lambda(),
        _ => LevelScheme::two_level_0_1(),
    }
}

fn cycling_cross_section(scheme: &LevelScheme) -> f64 {
    let f0 = scheme.ground.iter().map(|l| l.f).max().expect("ground levels");
    let f = scheme.excited.iter().map(|l| l.f).max().expect("excited levels");
    resonance_cross_section(f0, f)
}

fn profile_of(name: &str, size: f64) -> DensityProfile {
    match name {
        "sphere" => DensityProfile::UniformSphere { radius: size },
        "slab" => DensityProfile::Slab { thickness: size },
        _ => DensityProfile::Gaussian { r0: size },
    }
}

fn build(scenario: Scenario, raw: &BTreeMap<String, Val>, issues: &mut Issues) -> ScenarioConfig {
    let mut r = Reader { raw, issues };
    let uses = |s: &str| scenario.sections().contains(&s);

    let atom = uses("atom").then(|| build_atom(scenario, &mut r));
    let scheme = scheme_by_name(atom.as_ref().map_or("two-level", |a| a.scheme.as_str()));
    let cloud = uses("cloud").then(|| build_cloud(scenario, &scheme, &mut r));
    let control = uses("control").then(|| build_control(scenario, &scheme, &mut r)).flatten();
    let detection = uses("detection").then(|| build_detection(scenario, &mut r));
    let sweep = build_sweep(scenario, &mut r);
    let mc = uses("mc").then(|| build_mc(scenario, &mut r));
    let dipoles = uses("dipoles").then(|| build_dipoles(&mut r));
    let slab = uses("slab").then(|| SlabSpec { thickness: r.positive("slab.thickness", 200.0) });
    let diffusion = uses("diffusion").then(|| build_diffusion(&mut r));
    let protocol = uses("protocol").then(|| build_protocol(&mut r));
    let output = OutputSpec {
        dir: r.string("output.dir").unwrap_or_else(|| "results".into()),
        formats: match raw.get("output.formats") {
            Some(Val::StrList(f)) => f.clone(),
            _ => vec!["csv".into(), "json".into()],
        },
    };
    ScenarioConfig {
        scenario,
        atom,
        cloud,
        control,
        detection,
        sweep,
        mc,
        dipoles,
        slab,
        diffusion,
        protocol,
        output: Some(output),
    }
}

fn build_atom(scenario: Scenario, r: &mut Reader) -> AtomSpec {
    let default_scheme = match scenario {
        Scenario::GainTransport => "rb85-d2",
        Scenario::EitSpectrum => "rb87-d2-lambda",
        _ => "two-level",
    };
    let scheme_name = r.string("atom.scheme").unwrap_or_else(|| default_scheme.into());
    let scheme = scheme_by_name(&scheme_name);
    let population = match r.raw.get("atom.population") {
        Some(Val::Population(p)) => p.clone(),
        _ => {
            let mut p = BTreeMap::new();
            match (scheme_name.as_str(), scenario) {
                ("rb85-d2", Scenario::GainTransport) => {
                    p.insert("2".into(), 0.6);
                    p.insert("3".into(), 0.4);
                }
                ("rb85-d2", _) => {
                    p.insert("3".into(), 1.0);
                }
                ("rb87-d2-lambda", _) => {
                    p.insert("1".into(), 1.0);
                }
                _ => {
                    p.insert("0".into(), 1.0);
                }
            }
            p
        }
    };
    let mut total = 0.0;
    for (k, p) in &population {
        let ok_level = k
            .parse::<i32>()
            .ok()
            .is_some_and(|f| scheme.ground_level(HalfInt::int(f)).is_some());
        if !ok_level {
            let levels: Vec<String> = scheme.ground.iter().map(|l| l.f.to_string()).collect();
            r.issues
                .push(format!("atom.population.{k}"), format!("no ground level F0={k}; levels are {}", levels.join(", ")));
        }
        if !(*p >= 0.0) {
            r.issues.push(format!("atom.population.{k}"), "population must be non-negative");
        }
        total += p;
    }
    if (total - 1.0).abs() > 1e-9 {
        r.issues.push("atom.population", format!("populations must sum to 1, got {total}"));
    }
    AtomSpec { scheme: scheme_name, population }
}

fn build_cloud(scenario: Scenario, scheme: &LevelScheme, r: &mut Reader) -> CloudSpec {
    let mc_scenario = matches!(scenario, Scenario::CbsCone | Scenario::LadderSpectrum | Scenario::GainTransport);
    let default_profile = if scenario == Scenario::CoupledDipoleSpectrum { "sphere" } else { "gaussian" };
    let profile = r.string("cloud.profile").unwrap_or_else(|| default_profile.into());
    if !mc_scenario {
        r.forbid("cloud.b0", &format!("not used by scenario {}", scenario.name()));
        r.forbid("cloud.r0", &format!("not used by scenario {}; the size follows from n0", scenario.name()));
        if scenario != Scenario::CoupledDipoleSpectrum {
            r.forbid("cloud.profile", &format!("not used by scenario {}", scenario.name()));
        } else if profile == "slab" {
            r.issues.push("cloud.profile", "coupled dipoles need a finite cloud (gaussian or sphere)");
        }
        let default_n0 = match scenario {
            Scenario::CoupledDipoleSpectrum | Scenario::SelfconsistentSlab => 0.05,
            _ => 1e-3,
        };
        let profile = (scenario == Scenario::CoupledDipoleSpectrum).then_some(profile);
        return CloudSpec { profile, n0: r.positive("cloud.n0", default_n0), r0: None };
    }
    let sigma0 = cycling_cross_section(scheme);
    let unit_column = profile_of(&profile, 1.0).central_column();
    let (default_r0, default_b0) = if scenario == Scenario::GainTransport { (None, 30.0) } else { (Some(20.0), 5.0) };
    let (n0, r0) = match (r.num("cloud.n0"), r.num("cloud.r0"), r.num("cloud.b0")) {
        (Some(_), Some(_), Some(_)) => {
            r.issues.push("cloud.b0", "over-determined: give at most two of n0, r0 and b0");
            (1.0, 1.0)
        }
        (Some(n0), Some(r0), None) => (n0, r0),
        (Some(n0), None, b0) => {
            let b0 = b0.unwrap_or(default_b0);
            (n0, b0 / (n0 * sigma0 * unit_column))
        }
        (None, r0, b0) => {
            let b0 = b0.unwrap_or(default_b0);
            let r0 = r0.or(default_r0).unwrap_or(b0 / (1e-3 * sigma0 * unit_column));
            (b0 / (r0 * sigma0 * unit_column), r0)
        }
    };
    for (key, x) in [("cloud.n0", n0), ("cloud.r0", r0)] {
        if !(x > 0.0 && x.is_finite()) {
            r.issues.push(key, format!("must be positive and finite, got {x}"));
        }
    }
    if let Some(b0) = r.num("cloud.b0") {
        if !(b0 > 0.0) {
            r.issues.push("cloud.b0", format!("must be positive, got {b0}"));
        }
    }
    CloudSpec { profile: Some(profile), n0, r0: Some(r0) }
}

fn build_control(scenario: Scenario, scheme: &LevelScheme, r: &mut Reader) -> Option<ControlSpec> {
    let given = r.raw.keys().any(|k| k.starts_with("control."));
    let required = matches!(scenario, Scenario::GainTransport | Scenario::EitSpectrum);
    if !given && !required {
        return None;
    }
    if scheme.ground.len() < 2 {
        r.issues.push("control", "a control field needs a scheme with two ground hyperfine levels");
        return None;
    }
    let e = |f: i32| scheme.excited_level(HalfInt::int(f)).map_or(0.0, |l| l.energy);
    // Gain: drive F0=2 towards F=3 but tuned near F=4, so the Raman line sits
    // on the F0=3 → F=4 resonance. EIT: resonant Λ via the excited F=1.
    let (f0, m0, f, detuning, width, line) = match scheme.ground[0].f.value() as i64 {
        2 => (2, 0, 3, e(4) - e(3), 0.05, Some(0.0)),
        _ => (2, 1, 1, 0.0, 0.0, None),
    };
    let spec = ControlSpec {
        rabi: r.positive("control.rabi", if scenario == Scenario::GainTransport { 4.0 } else { 1.0 }),
        detuning: r.finite("control.detuning", detuning),
        f0: r.int("control.f0").unwrap_or(f0),
        m0: r.int("control.m0").unwrap_or(m0),
        f: r.int("control.f").unwrap_or(f),
        polarization: r.string("control.polarization").unwrap_or_else(|| "pi".into()),
        ground_width: r.num("control.ground_width").unwrap_or(width),
        raman_line: r.num("control.raman_line").or(line),
    };
    if !(spec.ground_width >= 0.0) {
        r.issues.push("control.ground_width", "must be non-negative");
    }
    if scheme.ground_level(HalfInt::int(spec.f0 as i32)).is_none() {
        r.issues.push("control.f0", format!("no ground level F0={}", spec.f0));
    }
    if scheme.excited_level(HalfInt::int(spec.f as i32)).is_none() {
        r.issues.push("control.f", format!("no excited level F={}", spec.f));
    }
    let q = match spec.polarization.as_str() {
        "sigma+" => 1,
        "sigma-" => -1,
        _ => 0,
    };
    if spec.m0.abs() > spec.f0 || (spec.m0 + q).abs() > spec.f {
        r.issues.push(
            "control.m0",
            format!("m0={} does not give a reference transition F0={} → F={} for {}", spec.m0, spec.f0, spec.f, spec.polarization),
        );
    }
    Some(spec)
}

fn build_detection(scenario: Scenario, r: &mut Reader) -> DetectionSpec {
    let channels = match r.raw.get("detection.channels") {
        Some(Val::StrList(c)) => c.clone(),
        _ => CHANNELS.iter().map(|s| s.to_string()).collect(),
    };
    let (detuning, theta) = match scenario {
        Scenario::CbsCone => {
            r.forbid("detection.theta", "the cone angles come from [sweep]");
            (Some(r.finite("detection.detuning", 0.0)), None)
        }
        _ => {
            r.forbid("detection.detuning", "the probe detuning comes from [sweep]");
            (None, Some(r.finite("detection.theta", 0.0)))
        }
    };
    DetectionSpec { channels, detuning, theta }
}

fn build_sweep(scenario: Scenario, r: &mut Reader) -> SweepSpec {
    let grid = |a: f64, b: f64, n: usize| -> Vec<f64> {
        if n == 1 {
            return vec![a];
        }
        // Endpoint-weighted form keeps round grid points exact.
        (0..n).map(|i| (a * (n - 1 - i) as f64 + b * i as f64) / (n - 1) as f64).collect()
    };
    let explicit = match r.raw.get("sweep.values") {
        Some(Val::NumList(v)) => Some(v.clone()),
        _ => None,
    };
    let ranged = ["sweep.start", "sweep.stop", "sweep.count"].iter().filter(|k| r.has(k)).count();
    let values = match (explicit, ranged) {
        (Some(_), n) if n > 0 => {
            r.issues.push("sweep.values", "give either values or start/stop/count, not both");
            vec![0.0]
        }
        (Some(v), _) => v,
        (None, 3) => grid(
            r.num("sweep.start").unwrap_or(0.0),
            r.num("sweep.stop").unwrap_or(0.0),
            r.int("sweep.count").unwrap_or(1) as usize,
        ),
        (None, 0) => match scenario {
            Scenario::CbsCone => grid(0.0, 0.05, 11),
            Scenario::LadderSpectrum => grid(-2.0, 2.0, 9),
            Scenario::GainTransport => vec![0.5, 2.0, 4.0, 6.0, 8.0, 12.0],
            Scenario::EitSpectrum => grid(-2.0, 2.0, 81),
            Scenario::CoupledDipoleSpectrum => grid(-2.0, 2.0, 41),
            Scenario::SelfconsistentSlab => grid(-3.0, 3.0, 121),
            Scenario::DiffusionThreshold => grid(300.0, 900.0, 13),
            Scenario::ProtocolUtils => vec![0.1, 1.0, 10.0],
        },
        (None, _) => {
            r.issues.push("sweep", "start, stop and count must be given together");
            vec![0.0]
        }
    };
    if values.is_empty() {
        r.issues.push("sweep.values", "must not be empty");
    }
    let (var, _) = scenario.sweep_variable();
    for (i, x) in values.iter().enumerate() {
        let bad = match scenario {
            Scenario::GainTransport | Scenario::DiffusionThreshold => !(*x > 0.0),
            Scenario::ProtocolUtils | Scenario::CbsCone => !(*x >= 0.0),
            _ => false,
        };
        if bad || !x.is_finite() {
            r.issues.push(format!("sweep.values[{i}]"), format!("{var} = {x} is out of range"));
        }
    }
    SweepSpec { values }
}

fn build_mc(scenario: Scenario, r: &mut Reader) -> McSpec {
    let gain = scenario == Scenario::GainTransport;
    let seed = r.int("mc.seed").unwrap_or(1) as u64;
    let workers = r.int("mc.workers").unwrap_or(1) as usize;
    if scenario == Scenario::CoupledDipoleSpectrum {
        for k in ["mc.trajectories", "mc.max_order", "mc.weight_floor", "mc.crossed_damping", "mc.tail_window"] {
            r.forbid(k, "not used by coupled-dipole spectra (only seed and workers)");
        }
        return McSpec {
            trajectories: 0,
            seed,
            workers,
            max_order: None,
            weight_floor: None,
            crossed_damping: None,
            tail_window: None,
        };
    }
    let spec = McSpec {
        trajectories: r.int("mc.trajectories").unwrap_or(if gain { 20_000 } else { 20_000 }) as u64,
        seed,
        workers,
        max_order: Some(r.int("mc.max_order").unwrap_or(if gain { 60 } else { 50 }) as usize),
        weight_floor: Some(r.num("mc.weight_floor").unwrap_or(if gain { 1e-12 } else { 1e-8 })),
        crossed_damping: if scenario == Scenario::CbsCone {
            Some(r.num("mc.crossed_damping").unwrap_or(1.0))
        } else {
            r.forbid("mc.crossed_damping", "only the CBS cone has a crossed term");
            None
        },
        tail_window: Some(r.int("mc.tail_window").unwrap_or(if gain { 10 } else { 5 }) as usize),
    };
    if spec.weight_floor.is_some_and(|w| !(w >= 0.0)) {
        r.issues.push("mc.weight_floor", "must be non-negative");
    }
    if spec.crossed_damping.is_some_and(|d| !(0.0..=1.0).contains(&d)) {
        r.issues.push("mc.crossed_damping", "must lie in [0, 1]");
    }
    if spec.tail_window.zip(spec.max_order).is_some_and(|(w, m)| w > m) {
        r.issues.push("mc.tail_window", "cannot exceed mc.max_order");
    }
    spec
}

fn build_dipoles(r: &mut Reader) -> DipoleSpec {
    let positions = match r.raw.get("dipoles.positions") {
        Some(Val::Points(p)) => Some(p.clone()),
        _ => None,
    };
    let n_atoms = r.int("dipoles.n_atoms").map(|n| n as usize).or(positions.as_ref().map(Vec::len)).unwrap_or(50);
    let configurations = r.int("dipoles.configurations").map(|n| n as usize);
    if let Some(p) = &positions {
        if p.len() != n_atoms {
            r.issues.push("dipoles.n_atoms", format!("{n_atoms} atoms but {} positions", p.len()));
        }
        if configurations.is_some_and(|c| c != 1) {
            r.issues.push("dipoles.configurations", "fixed positions define exactly one configuration");
        }
    }
    DipoleSpec {
        n_atoms,
        model: r.string("dipoles.model").unwrap_or_else(|| "vector".into()),
        configurations: configurations.unwrap_or(if positions.is_some() { 1 } else { 100 }),
        positions,
    }
}

fn build_diffusion(r: &mut Reader) -> DiffusionSpec {
    let spec = DiffusionSpec {
        l0: r.positive("diffusion.l0", 100.0),
        cos_mean: r.finite("diffusion.cos_mean", 0.0),
        albedo: r.finite("diffusion.albedo", 1.0),
        l_g: match r.num("diffusion.l_g") {
            Some(x) => Some(r.positive("diffusion.l_g", x)),
            None => Some(1000.0),
        },
        velocity: r.positive("diffusion.velocity", 1.0),
        n_cells: r.int("diffusion.n_cells").unwrap_or(200) as usize,
        boundary: r.string("diffusion.boundary").unwrap_or_else(|| "absorbing".into()),
    };
    if !(-1.0..1.0).contains(&spec.cos_mean) {
        r.issues.push("diffusion.cos_mean", "must lie in [-1, 1)");
    }
    if !(0.0..=1.0).contains(&spec.albedo) {
        r.issues.push("diffusion.albedo", "must lie in [0, 1]");
    }
    spec
}

fn build_protocol(r: &mut Reader) -> ProtocolSpec {
    let spec = ProtocolSpec {
        tol: r.positive("protocol.tol", 1e-10),
        i_mean: r.finite("protocol.i_mean", 1.0),
        xi: r.finite("protocol.xi", 0.01),
        n_atoms: r.finite("protocol.n_atoms", 100.0),
    };
    if spec.tol >= 1.0 {
        r.issues.push("protocol.tol", "must be below 1");
    }
    for (k, v) in [("protocol.xi", spec.xi), ("protocol.n_atoms", spec.n_atoms)] {
        if v < 0.0 {
            r.issues.push(k, "must be non-negative");
        }
    }
    spec
}

// ---------------------------------------------------------------------------
// Results

/// One sweep point of one quantity.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Row {
    pub x: f64,
    pub value: f64,
    pub stat_err: Option<f64>,
    pub order: Option<usize>,
    pub channel: Option<String>,
}

/// All rows of one output quantity; becomes one CSV file.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table {
    pub quantity: String,
    pub unit: String,
    pub x_name: String,
    pub x_unit: String,
    pub rows: Vec<Row>,
}

impl Table {
    fn new(quantity: &str, unit: &str, x_name: &str, x_unit: Unit) -> Self {
        Self {
            quantity: quantity.into(),
            unit: unit.into(),
            x_name: x_name.into(),
            x_unit: x_unit.label().into(),
            rows: Vec::new(),
        }
    }

    fn push(&mut self, x: f64, value: f64, stat_err: Option<f64>, order: Option<usize>, channel: Option<&str>) {
        self.rows.push(Row { x, value, stat_err, order, channel: channel.map(str::to_string) });
    }

    /// CSV text; identical runs give identical bytes.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let opt = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
        w.write_record([
            format!("{} [{}]", self.x_name, self.x_unit),
            format!("{} [{}]", self.quantity, self.unit),
            "stat_err".into(),
            "order".into(),
            "channel".into(),
        ])
        .expect("in-memory write");
        for r in &self.rows {
            w.write_record([
                format!("{:e}", r.x),
                format!("{:e}", r.value),
                opt(r.stat_err),
                r.order.map(|o| o.to_string()).unwrap_or_default(),
                r.channel.clone().unwrap_or_default(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii output")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRecord {
    pub scenario: Scenario,
    pub config_hash: String,
    pub version: String,
    pub seed: Option<u64>,
    pub sweep_variable: String,
    pub sweep_unit: String,
    pub tables: Vec<Table>,
    /// Scalar summaries (thresholds, peak positions, flags).
    pub summary: BTreeMap<String, f64>,
    /// Set when an engine failed part-way; the tables hold the points
    /// completed before the failure.
    pub incomplete: bool,
    pub error: Option<String>,
    /// Not reproducible between runs; excluded from the CSV files.
    pub wall_time_s: f64,
    pub config: String,
}

/// Outcome of a run: the (possibly partial) record and the engine error
/// that stopped it, if any.
pub struct RunOutcome {
    pub record: ResultRecord,
    pub error: Option<Error>,
}

/// Command-line overrides applied before the run, so the echoed
/// configuration reflects what actually ran.
#[derive(Debug, Clone, Copy, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
}

pub fn apply_overrides(cfg: &mut ScenarioConfig, o: Overrides) {
    if let Some(mc) = cfg.mc.as_mut() {
        if let Some(s) = o.seed {
            mc.seed = s;
        }
        if let Some(w) = o.workers {
            mc.workers = w.max(1);
        }
    }
}

struct Run<'a> {
    cfg: &'a ScenarioConfig,
    tables: Vec<Table>,
    summary: BTreeMap<String, f64>,
    progress: &'a mut dyn FnMut(&str),
}

impl Run<'_> {
    fn table(&mut self, quantity: &str, unit: &str) -> usize {
        let (x, u) = self.cfg.scenario.sweep_variable();
        self.table_with_x(quantity, unit, x, u)
    }

    fn table_with_x(&mut self, quantity: &str, unit: &str, x: &str, u: Unit) -> usize {
        self.tables.push(Table::new(quantity, unit, x, u));
        self.tables.len() - 1
    }
}

/// Runs a validated scenario. Progress lines go to `progress`; results
/// computed before an engine error are kept and the record is marked
/// incomplete.
pub fn run_scenario(cfg: &ScenarioConfig, progress: &mut dyn FnMut(&str)) -> RunOutcome {
    let start = Instant::now();
    let mut run = Run { cfg, tables: Vec::new(), summary: BTreeMap::new(), progress };
    let result = match cfg.scenario {
        Scenario::CbsCone => run_cbs(&mut run),
        Scenario::LadderSpectrum => run_ladder(&mut run),
        Scenario::GainTransport => run_gain(&mut run),
        Scenario::EitSpectrum => run_eit(&mut run),
        Scenario::CoupledDipoleSpectrum => run_dipoles(&mut run),
        Scenario::SelfconsistentSlab => run_slab(&mut run),
        Scenario::DiffusionThreshold => run_diffusion(&mut run),
        Scenario::ProtocolUtils => run_protocol(&mut run),
    };
    let (var, unit) = cfg.scenario.sweep_variable();
    let error = result.err().map(|e| match e {
        Error::Numeric(m) => Error::Numeric(format!("{}: {m}", cfg.scenario.name())),
        Error::Domain(m) => Error::Domain(format!("{}: {m}", cfg.scenario.name())),
        other => other,
    });
    let record = ResultRecord {
        scenario: cfg.scenario,
        config_hash: cfg.hash(),
        version: env!("CARGO_PKG_VERSION").into(),
        seed: cfg.mc.as_ref().map(|m| m.seed),
        sweep_variable: var.into(),
        sweep_unit: unit.label().into(),
        tables: run.tables,
        summary: run.summary,
        incomplete: error.is_some(),
        error: error.as_ref().map(|e| e.to_string()),
        wall_time_s: start.elapsed().as_secs_f64(),
        config: cfg.canonical_toml(),
    };
    RunOutcome { record, error }
}

fn build_atom_state(spec: &AtomSpec, density: f64) -> Result<(Atom, GroundState)> {
    let atom = Atom::new(&scheme_by_name(&spec.scheme));
    let fractions: Vec<(HalfInt, f64)> = spec
        .population
        .iter()
        .map(|(k, p)| (HalfInt::int(k.parse().expect("validated level")), *p))
        .collect();
    let ground = GroundState::isotropic(&atom, &fractions, density)?;
    Ok((atom, ground))
}

/// Control field described by `spec`, with its frequency locked to the
/// requested Raman line when one is given.
pub fn build_control_field(atom: &Atom, ground: &GroundState, spec: &ControlSpec) -> Result<ControlField> {
    let q = match spec.polarization.as_str() {
        "sigma+" => 1,
        "sigma-" => -1,
        _ => 0,
    };
    let eps = spherical_unit(q);
    let reference = ReferenceTransition {
        f0: HalfInt::int(spec.f0 as i32),
        m0: HalfInt::int(spec.m0 as i32),
        f: HalfInt::int(spec.f as i32),
        m: HalfInt::int(spec.m0 as i32 + q),
    };
    let mut control = ControlField::new(atom, eps, spec.rabi, spec.detuning, reference, &[reference.f0])?
        .with_ground_width(spec.ground_width);
    if let Some(target) = spec.raman_line {
        // The light shift depends weakly on ω_c; a few fixed-point steps settle it.
        for _ in 0..6 {
            let mean = mean_raman_frequency(atom, ground, &control)
                .ok_or_else(|| Error::domain("control opens no Raman emission line"))?;
            control.frequency += target - mean;
        }
    }
    Ok(control)
}

fn mc_cloud(cfg: &ScenarioConfig, rabi: Option<f64>) -> Result<Cloud> {
    let atom_spec = cfg.atom.as_ref().expect("scenario uses [atom]");
    let cloud_spec = cfg.cloud.as_ref().expect("scenario uses [cloud]");
    let (atom, ground) = build_atom_state(atom_spec, cloud_spec.n0)?;
    let control = match &cfg.control {
        Some(c) => {
            let spec = ControlSpec { rabi: rabi.unwrap_or(c.rabi), ..c.clone() };
            Some(build_control_field(&atom, &ground, &spec)?)
        }
        None => None,
    };
    let profile = profile_of(
        cloud_spec.profile.as_deref().expect("MC clouds have a profile"),
        cloud_spec.r0.expect("MC clouds have a size"),
    );
    Cloud::new(atom, ground, profile, control)
}

fn mc_config(cfg: &ScenarioConfig, e: Vector3<Complex64>, omega: f64) -> McConfig {
    let mc = cfg.mc.as_ref().expect("scenario uses [mc]");
    let mut c = McConfig::beam(e, omega);
    c.workers = mc.workers;
    c.max_order = mc.max_order.unwrap_or(c.max_order);
    c.weight_floor = mc.weight_floor.unwrap_or(c.weight_floor);
    c.crossed_damping = mc.crossed_damping.unwrap_or(1.0);
    c.tail_window = mc.tail_window.unwrap_or(c.tail_window);
    c
}

fn channel_of(label: &str) -> PolarizationChannel {
    PolarizationChannel::ALL.into_iter().find(|c| c.label() == label).expect("validated channel")
}

fn run_cbs(run: &mut Run) -> Result<()> {
    let cfg = run.cfg;
    let cloud = mc_cloud(cfg, None)?;
    run.summary.insert("b0".into(), cloud.b0());
    let det = cfg.detection.as_ref().expect("cbs uses [detection]");
    let omega = det.detuning.unwrap_or(0.0);
    let mc = cfg.mc.as_ref().expect("cbs uses [mc]");
    let theta = &cfg.sweep.values;
    let t_eta = run.table("eta", "1");
    let t_ms = run.table("eta_multiple", "1");
    let t_s = run.table("single", "lambdabar^2/sr");
    let t_l = run.table("ladder", "lambdabar^2/sr");
    let t_c = run.table("crossed", "lambdabar^2/sr");
    let t_lo = run.table("ladder_by_order", "lambdabar^2/sr");
    let t_co = run.table("crossed_by_order", "lambdabar^2/sr");
    for label in &det.channels {
        (run.progress)(&format!("cbs-cone: channel {label}, {} trajectories", mc.trajectories));
        let channel = channel_of(label);
        let base = mc_config(cfg, channel.input(), omega);
        let r = cbs_enhancement(&cloud, &base, channel, omega, theta, mc.trajectories, mc.seed)?;
        let ch = Some(label.as_str());
        for (i, th) in theta.iter().enumerate() {
            let t = &mut run.tables;
            t[t_eta].push(*th, r.eta[i], None, None, ch);
            t[t_ms].push(*th, r.eta_multiple[i], Some(r.eta_multiple_err[i]), None, ch);
            t[t_s].push(*th, r.single[i], Some(r.single_err[i]), None, ch);
            t[t_l].push(*th, r.ladder[i], Some(r.ladder_err[i]), None, ch);
            t[t_c].push(*th, r.crossed[i], Some(r.crossed_err[i]), None, ch);
            for (order, (l, c)) in r.by_order[i].iter().enumerate().skip(1) {
                t[t_lo].push(*th, *l, None, Some(order), ch);
                if order >= 2 {
                    t[t_co].push(*th, *c, None, Some(order), ch);
                }
            }
        }
        if let Some(i0) = theta.iter().position(|t| *t == 0.0) {
            run.summary.insert(format!("eta_multiple_0_{label}"), r.eta_multiple[i0]);
        }
    }
    Ok(())
}

fn run_ladder(run: &mut Run) -> Result<()> {
    let cfg = run.cfg;
    let cloud = mc_cloud(cfg, None)?;
    run.summary.insert("b0".into(), cloud.b0());
    let det = cfg.detection.as_ref().expect("ladder uses [detection]");
    let mc = cfg.mc.as_ref().expect("ladder uses [mc]");
    let theta = det.theta.unwrap_or(0.0);
    let t_i = run.table("intensity_by_order", "lambdabar^2/sr");
    let t_tot = run.table("intensity", "lambdabar^2/sr");
    let t_esc = run.table("escaped_fraction", "1");
    let t_mean = run.table("mean_order", "1");
    for &omega in &cfg.sweep.values {
        for (k, label) in det.channels.iter().enumerate() {
            (run.progress)(&format!("ladder-spectrum: detuning {omega}, channel {label}"));
            let channel = channel_of(label);
            let mut c = mc_config(cfg, channel.input(), omega);
            c.detectors = vec![channel.detector(theta)];
            let r = simulate_ladder(&cloud, &c, mc.trajectories, mc.seed)?;
            let ch = Some(label.as_str());
            let by = r.detectors[0].ladder.mean_and_error(r.trajectories);
            let mut total = 0.0;
            for (order, (m, e)) in by.iter().enumerate().skip(1) {
                run.tables[t_i].push(omega, m * r.scale, Some(e * r.scale), Some(order), ch);
                total += m * r.scale;
            }
            run.tables[t_tot].push(omega, total, None, None, ch);
            if k == 0 {
                let esc = r.escaped_by_order();
                let frac: f64 = esc.iter().map(|p| p.0).sum();
                let scattered: f64 = esc.iter().skip(1).map(|p| p.0).sum();
                let mean_order = esc.iter().enumerate().skip(1).map(|(n, p)| n as f64 * p.0).sum::<f64>() / scattered;
                run.tables[t_esc].push(omega, frac, None, None, None);
                run.tables[t_mean].push(omega, mean_order, None, None, None);
            }
        }
    }
    Ok(())
}

fn run_gain(run: &mut Run) -> Result<()> {
    let cfg = run.cfg;
    let mc = cfg.mc.as_ref().expect("gain uses [mc]");
    let t_o = run.table("escaped_by_order", "1");
    let t_r = run.table("tail_log_ratio", "1");
    let t_f = run.table("unstable", "1");
    let t_a = run.table("amplified", "1");
    let t_t = run.table("truncated", "1");
    let mut flags = Vec::new();
    for &rabi in &cfg.sweep.values {
        (run.progress)(&format!("gain-transport: rabi {rabi}"));
        let cloud = mc_cloud(cfg, Some(rabi))?;
        run.summary.insert("b0".into(), cloud.b0());
        let mut c = mc_config(cfg, Vector3::new(Complex64::ONE, Complex64::ZERO, Complex64::ZERO), 0.0);
        c.source = Source::SpontaneousRaman;
        let r = gain_transport(&cloud, &c, mc.trajectories, mc.seed)?;
        let by = r.escaped_by_order();
        for (order, (m, e)) in by.iter().enumerate() {
            run.tables[t_o].push(rabi, *m, Some(*e), Some(order), None);
        }
        let means: Vec<f64> = by.iter().map(|p| p.0).collect();
        let ratio = tail_log_ratio(&means, c.tail_window).unwrap_or(f64::NAN);
        let n = r.trajectories as f64;
        run.tables[t_r].push(rabi, ratio, None, None, None);
        run.tables[t_f].push(rabi, f64::from(u8::from(r.unstable)), None, None, None);
        run.tables[t_a].push(rabi, r.amplified / n, None, None, None);
        run.tables[t_t].push(rabi, r.truncated / n, None, None, None);
        flags.push(r.unstable);
    }
    let monotone = flags.windows(2).all(|w| !w[0] || w[1]);
    run.summary.insert("flag_monotone".into(), f64::from(u8::from(monotone)));
    if let Some(i) = flags.iter().position(|f| *f) {
        run.summary.insert("first_unstable_rabi".into(), cfg.sweep.values[i]);
    }
    Ok(())
}

fn run_eit(run: &mut Run) -> Result<()> {
    let cfg = run.cfg;
    let n0 = cfg.cloud.as_ref().expect("eit uses [cloud]").n0;
    let (atom, ground) = build_atom_state(cfg.atom.as_ref().expect("eit uses [atom]"), n0)?;
    let control = build_control_field(&atom, &ground, cfg.control.as_ref().expect("eit requires [control]"))?;
    let t_im = run.table("im_chi", "1");
    let t_re = run.table("re_chi", "1");
    let t_u = run.table("im_chi_undressed", "1");
    let labels = ["xx", "yy", "zz"];
    for &omega in &cfg.sweep.values {
        let dressed = susceptibility(&atom, &ground, Some(&control), omega)?.chi;
        let bare = susceptibility(&atom, &ground, None, omega)?.chi;
        for (i, l) in labels.iter().enumerate() {
            run.tables[t_im].push(omega, dressed[(i, i)].im, None, None, Some(l));
            run.tables[t_re].push(omega, dressed[(i, i)].re, None, None, Some(l));
            run.tables[t_u].push(omega, bare[(i, i)].im, None, None, Some(l));
        }
    }
    Ok(())
}

fn run_dipoles(run: &mut Run) -> Result<()> {
    let cfg = run.cfg;
    let cloud = cfg.cloud.as_ref().expect("dipoles use [cloud]");
    let spec = cfg.dipoles.as_ref().expect("dipoles use [dipoles]");
    let mc = cfg.mc.as_ref().expect("dipoles use [mc]");
    let model = if spec.model == "scalar" { DipoleModel::Scalar } else { DipoleModel::Vector };
    let det = &cfg.sweep.values;
    let k = Vector3::z();
    let e = Vector3::new(Complex64::ONE, Complex64::ZERO, Complex64::ZERO);
    let n = spec.n_atoms;
    let radius = ball_radius(n, cloud.n0);
    let r0 = (n as f64 / (cloud.n0 * (2.0 * std::f64::consts::PI).powf(1.5))).cbrt();
    let configs = |c: usize| -> Result<Vec<Vector3<f64>>> {
        if let Some(p) = &spec.positions {
            return Ok(p.iter().map(|x| Vector3::new(x[0], x[1], x[2])).collect());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(mc.seed);
        rng.set_stream(c as u64);
        if cloud.profile.as_deref() == Some("gaussian") {
            random_gaussian(n, r0, CONTACT_FLOOR, &mut rng)
        } else {
            random_ball(n, radius, CONTACT_FLOOR, &mut rng)
        }
    };
    (run.progress)(&format!("coupled-dipole-spectrum: {} configurations of {n} atoms", spec.configurations));
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(mc.workers.max(1))
        .build()
        .map_err(|e| Error::numeric(format!("thread pool: {e}")))?;
    let spectra: Vec<Result<Vec<f64>>> = pool.install(|| {
        (0..spec.configurations)
            .into_par_iter()
            .map(|c| cross_section_spectrum(&configs(c)?, model, det, &k, &e))
            .collect()
    });
    let mut stats = RunningStats::new(det.len());
    let mut failure = None;
    for s in spectra {
        match s {
            Ok(s) => stats.push(&s),
            Err(e) => {
                failure = Some(e);
                break;
            }
        }
    }
    let t_q = run.table("q0", "lambdabar^2");
    let mean = stats.mean().to_vec();
    let err = stats.stderr();
    for (i, d) in det.iter().enumerate() {
        run.tables[t_q].push(*d, mean[i], Some(err[i]), None, Some(&spec.model));
    }
    if let Some(e) = failure {
        return Err(e);
    }
    if let Some(i) = argmax(&mean) {
        run.summary.insert("q0_peak_detuning".into(), det[i]);
    }
    // Continuum prediction for the same observable: Mie extinction of a
    // ball with the self-consistent permittivity (two-level vector model).
    if model == DipoleModel::Vector && cloud.profile.as_deref() == Some("sphere") && spec.positions.is_none() {
        let t_m = run.table("q0_continuum", "lambdabar^2");
        let mut mie = Vec::with_capacity(det.len());
        for d in det {
            let q = sphere_extinction(self_consistent_epsilon(cloud.n0, *d)?.eps, radius, 1.0)?;
            run.tables[t_m].push(*d, q, None, None, Some("selfconsistent"));
            mie.push(q);
        }
        if let Some(i) = argmax(&mie) {
            run.summary.insert("q0_continuum_peak_detuning".into(), det[i]);
        }
    }
    Ok(())
}

fn argmax(v: &[f64]) -> Option<usize> {
    (0..v.len()).max_by(|a, b| v[*a].total_cmp(&v[*b]))
}

fn run_slab(run: &mut Run) -> Result<()> {
    let cfg = run.cfg;
    let n0 = cfg.cloud.as_ref().expect("slab uses [cloud]").n0;
    let l = cfg.slab.as_ref().expect("slab uses [slab]").thickness;
    let sigma0 = resonance_cross_section(HalfInt::ZERO, HalfInt::ONE);
    let t_im = run.table("im_chi", "1");
    let t_re = run.table("re_chi", "1");
    let t_t = run.table("transmission", "1");
    let t_b = run.table("beer_lambert", "1");
    let mut im = Vec::new();
    for &d in &cfg.sweep.values {
        let eps = self_consistent_epsilon(n0, d)?;
        let t = slab_transmission(eps.eps, l, 1.0)?;
        run.tables[t_im].push(d, eps.chi.im, None, None, None);
        run.tables[t_re].push(d, eps.chi.re, None, None, None);
        run.tables[t_t].push(d, t.intensity, None, None, None);
        run.tables[t_b].push(d, (-n0 * sigma0 * l / (1.0 + 4.0 * d * d)).exp(), None, None, None);
        im.push(eps.chi.im);
    }
    if let Some(i) = argmax(&im) {
        run.summary.insert("im_chi_peak_detuning".into(), cfg.sweep.values[i]);
    }
    Ok(())
}

fn run_diffusion(run: &mut Run) -> Result<()> {
    let cfg = run.cfg;
    let spec = cfg.diffusion.as_ref().expect("diffusion uses [diffusion]");
    let boundary = match spec.boundary.as_str() {
        "mixed" => Boundary::Mixed,
        "reflecting" => Boundary::Reflecting,
        _ => Boundary::Absorbing,
    };
    let model = |r0: f64| DiffusionModel {
        v_bar: spec.velocity,
        l0_bar: spec.l0,
        cos_mean: spec.cos_mean,
        albedo: spec.albedo,
        l_g: spec.l_g.unwrap_or(f64::INFINITY),
        r0,
    };
    let t_g = run.table("growth_rate", "gamma");
    let mut rates = Vec::new();
    for &r0 in &cfg.sweep.values {
        let m = solve_gain_diffusion_sphere(&model(r0), boundary, spec.n_cells)?;
        run.tables[t_g].push(r0, m.growth_rate, None, None, Some(&spec.boundary));
        rates.push(m.growth_rate);
    }
    let l_tr = diffusion_constant(&model(1.0))?.l_tr;
    if let Some(l_g) = spec.l_g {
        let t_th = run.table_with_x("threshold_radius", "lambdabar", "l_g", Unit::Length);
        let analytic = letokhov_threshold(l_tr, l_g)?;
        run.tables[t_th].push(l_g, analytic, None, None, Some("letokhov"));
        run.summary.insert("letokhov_threshold".into(), analytic);
        let sweep = &cfg.sweep.values;
        if let Some(w) = (1..rates.len()).find(|&i| rates[i - 1].signum() != rates[i].signum()) {
            let rc = critical_radius(&model(1.0), boundary, spec.n_cells, sweep[w - 1], sweep[w])?;
            run.tables[t_th].push(l_g, rc, None, None, Some("pde"));
            run.summary.insert("pde_threshold".into(), rc);
        }
    }
    Ok(())
}

fn run_protocol(run: &mut Run) -> Result<()> {
    let cfg = run.cfg;
    let spec = cfg.protocol.as_ref().expect("protocol uses [protocol]");
    let t_norm = run.table("truncated_norm", "1");
    let t_n = run.table("n_max", "1");
    let t_b = run.table("tail_bound", "1");
    for &n_bar in &cfg.sweep.values {
        let s = PsiMinusState::with_tolerance(n_bar, spec.tol)?;
        run.tables[t_norm].push(n_bar, s.truncated_norm()?, None, None, None);
        run.tables[t_n].push(n_bar, s.n_max as f64, None, None, None);
        run.tables[t_b].push(n_bar, s.tail_bound(), None, None, None);
    }
    let t_mz = run.table_with_x("mz_signal", "1", "n_atoms", Unit::Dimensionless);
    run.tables[t_mz].push(spec.n_atoms, mz_signal(spec.i_mean, spec.xi, spec.n_atoms)?, None, None, None);
    Ok(())
}

/// File stem shared by the outputs of one record.
fn stem(record: &ResultRecord) -> String {
    record.scenario.name().replace('-', "_")
}

/// Writes one CSV per table and a JSON record into `dir`, returning the
/// paths written. An incomplete record also leaves an `INCOMPLETE` marker.
pub fn emit_results(record: &ResultRecord, dir: &Path, formats: &[String]) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    let write = |path: PathBuf, body: &str, written: &mut Vec<PathBuf>| -> Result<()> {
        std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        written.push(path);
        Ok(())
    };
    let stem = stem(record);
    if formats.iter().any(|f| f == "csv") {
        for t in &record.tables {
            write(dir.join(format!("{stem}_{}.csv", t.quantity)), &t.to_csv(), &mut written)?;
        }
    }
    if formats.iter().any(|f| f == "json") {
        let body = serde_json::to_string_pretty(record).map_err(|e| Error::numeric(format!("JSON encoding: {e}")))?;
        write(dir.join(format!("{stem}.json")), &body, &mut written)?;
    }
    let marker = dir.join(format!("{stem}.INCOMPLETE"));
    if record.incomplete {
        let why = record.error.clone().unwrap_or_default();
        write(marker, &format!("{why}\n"), &mut written)?;
    } else if marker.exists() {
        std::fs::remove_file(&marker).map_err(|e| Error::io(&marker, e))?;
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suggestion_strips_lab_units() {
        assert_eq!(suggest("radius_mm", &["profile", "n0", "b0", "r0"]).as_deref(), Some("r0"));
        assert_eq!(suggest("trajectorys", &["trajectories", "seed"]).as_deref(), Some("trajectories"));
    }

    #[test]
    fn quantity_units() {
        let s = |x: &str| toml::Value::String(x.into());
        assert_eq!(quantity(&s("5 lambdabar"), Some(Unit::Length)), Ok(5.0));
        assert!(quantity(&s("5 mm"), Some(Unit::Length)).is_err());
        assert!(quantity(&s("5 gamma"), Some(Unit::Dimensionless)).is_err());
    }
}
