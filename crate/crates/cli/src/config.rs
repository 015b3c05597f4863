//! Scenario files: `[section]` headers followed by `key = value` lines.
//!
//! Matrices are written row-major with `;` between rows and whitespace or
//! commas between entries, e.g. `A = 0 1; -2 -3`. `#` starts a comment.
//!
//! Default table (keys not listed are required):
//!
//! | key                      | default                                   |
//! |--------------------------|-------------------------------------------|
//! | nonlinearity.kind        | saturation                                |
//! | nonlinearity.levels      | 1                                         |
//! | nonlinearity.gain        | 1 (linear kind only)                      |
//! | nonlinearity.shaping     | none                                      |
//! | grid.cells               | 200                                       |
//! | grid.cfl_safety          | 0.9                                       |
//! | inner_product.mode       | auto (plain for one channel, else speed_weighted) |
//! | sim.t_final              | 60, with a warning                        |
//! | sim.record_stride        | 10                                        |
//! | sim.integrator           | euler                                     |
//! | init.z0                  | zeros, with a warning                     |
//! | init.w0                  | constant 0                                |
//! | sylvester.method         | discrete                                  |
//! | plant.D0, D1, R0, R1, E0, E1 | zero blocks (system kind)             |

use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};

use cascade_core::nonlinearity::compose_shaping;
use cascade_core::{
    build_plant, DenseMatrix, Grid, InitialProfile, Integrator, Nonlinearity, PlantSpec, RawPlant, SylvesterMethod,
    SynthesisOptions, WeightMode,
};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid {key}: {message}")]
    Invalid { key: String, message: String },
}

fn invalid(key: &str, message: impl fmt::Display) -> ConfigError {
    ConfigError::Invalid { key: key.to_string(), message: message.to_string() }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PlantConfig {
    Scalar {
        a: f64,
        lambda: f64,
        c: f64,
    },
    System {
        a: Vec<Vec<f64>>,
        b: Vec<Vec<f64>>,
        c: Vec<Vec<f64>>,
        speeds: Vec<f64>,
        d0: Option<Vec<Vec<f64>>>,
        d1: Option<Vec<Vec<f64>>>,
        r0: Option<Vec<Vec<f64>>>,
        r1: Option<Vec<Vec<f64>>>,
        e0: Option<Vec<Vec<f64>>>,
        e1: Option<Vec<Vec<f64>>>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SigmaKind {
    Linear,
    Saturation,
    SatPhi,
}

impl SigmaKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Linear => "linear",
            Self::Saturation => "saturation",
            Self::SatPhi => "sat_phi",
        }
    }

    fn parse(text: &str) -> Option<Self> {
        match text {
            "linear" => Some(Self::Linear),
            "saturation" | "sat" => Some(Self::Saturation),
            "sat_phi" => Some(Self::SatPhi),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum W0Config {
    Constant(f64),
    Sine(u32),
    /// Whitespace-separated values, cell-major, relative to the scenario file.
    Samples(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioFile {
    pub plant: PlantConfig,
    pub sigma_kind: SigmaKind,
    pub levels: Vec<f64>,
    pub gain: f64,
    /// Nonlinearity descriptor for ψ, e.g. `saturation 0.1`.
    pub shaping: Option<String>,
    pub cells: usize,
    pub cfl_safety: f64,
    /// `None` selects the per-plant default.
    pub weight: Option<WeightMode>,
    pub t_final: f64,
    pub record_stride: usize,
    pub integrator: Integrator,
    pub z0: Option<Vec<f64>>,
    pub w0: W0Config,
    pub method: SylvesterMethod,
}

/// Everything needed to synthesize and simulate, before synthesis.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub plant: PlantSpec,
    pub grid: Grid,
    pub sigma: Nonlinearity,
    pub options: SynthesisOptions,
    pub z0: Vec<f64>,
    pub w0: InitialProfile,
    pub t_final: f64,
    pub cfl_safety: f64,
    pub record_stride: usize,
    pub integrator: Integrator,
}

const SECTIONS: &[(&str, &[&str])] = &[
    ("plant", &["kind", "a", "lambda", "c", "A", "B", "C", "speeds", "D0", "D1", "R0", "R1", "E0", "E1"]),
    ("nonlinearity", &["kind", "levels", "level", "gain", "shaping"]),
    ("grid", &["cells", "cfl_safety"]),
    ("inner_product", &["mode"]),
    ("sim", &["t_final", "record_stride", "integrator"]),
    ("init", &["z0", "w0"]),
    ("sylvester", &["method"]),
];

const SCALAR_KEYS: &[&str] = &["kind", "a", "lambda", "c"];
const SYSTEM_KEYS: &[&str] = &["kind", "A", "B", "C", "speeds", "D0", "D1", "R0", "R1", "E0", "E1"];

struct Entry {
    section: String,
    key: String,
    value: String,
    line: usize,
}

struct Entries {
    items: Vec<Entry>,
}

impl Entries {
    fn get(&self, section: &str, key: &str) -> Option<&Entry> {
        self.items.iter().find(|e| e.section == section && e.key == key)
    }
}

fn split_entries(text: &str, lenient: bool, warnings: &mut Vec<String>) -> Result<Entries, ConfigError> {
    let mut items: Vec<Entry> = Vec::new();
    let mut section: Option<(String, bool)> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(rest) = content.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| ConfigError::Parse { line, message: format!("malformed section header {content:?}") })?
                .trim();
            let known = SECTIONS.iter().any(|(s, _)| *s == name);
            if !known {
                let message = format!("unknown section [{name}]");
                if !lenient {
                    return Err(ConfigError::Parse { line, message });
                }
                warnings.push(format!("line {line}: {message} ignored"));
            }
            section = Some((name.to_string(), known));
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| ConfigError::Parse { line, message: format!("expected key = value, got {content:?}") })?;
        let (key, value) = (key.trim(), value.trim());
        let Some((sec, known)) = &section else {
            return Err(ConfigError::Parse { line, message: format!("key {key:?} outside any section") });
        };
        if !known {
            continue;
        }
        let allowed = SECTIONS.iter().find(|(s, _)| s == sec).map(|(_, k)| *k).unwrap_or(&[]);
        if !allowed.contains(&key) {
            let message = format!("unknown key {sec}.{key}");
            if !lenient {
                return Err(ConfigError::Parse { line, message });
            }
            warnings.push(format!("line {line}: {message} ignored"));
            continue;
        }
        let key = if key == "level" { "levels" } else { key };
        if items.iter().any(|e| &e.section == sec && e.key == key) {
            return Err(ConfigError::Parse { line, message: format!("duplicate key {sec}.{key}") });
        }
        items.push(Entry { section: sec.clone(), key: key.to_string(), value: value.to_string(), line });
    }
    Ok(Entries { items })
}

fn qualified(e: &Entry) -> String {
    format!("{}.{}", e.section, e.key)
}

fn parse_f64(e: &Entry) -> Result<f64, ConfigError> {
    let v: f64 = e
        .value
        .parse()
        .map_err(|_| invalid(&qualified(e), format!("line {}: {:?} is not a number", e.line, e.value)))?;
    if !v.is_finite() {
        return Err(invalid(&qualified(e), format!("line {}: value must be finite", e.line)));
    }
    Ok(v)
}

fn parse_usize(e: &Entry) -> Result<usize, ConfigError> {
    e.value.parse().map_err(|_| {
        invalid(&qualified(e), format!("line {}: {:?} is not a nonnegative integer", e.line, e.value))
    })
}

fn parse_list(e: &Entry) -> Result<Vec<f64>, ConfigError> {
    parse_row(&e.value).map_err(|m| invalid(&qualified(e), format!("line {}: {m}", e.line)))
}

fn parse_row(text: &str) -> Result<Vec<f64>, String> {
    let mut out = Vec::new();
    for tok in text.split(|c: char| c == ',' || c.is_whitespace()).filter(|t| !t.is_empty()) {
        let v: f64 = tok.parse().map_err(|_| format!("{tok:?} is not a number"))?;
        if !v.is_finite() {
            return Err("entries must be finite".into());
        }
        out.push(v);
    }
    Ok(out)
}

fn parse_matrix(e: &Entry) -> Result<Vec<Vec<f64>>, ConfigError> {
    let rows: Vec<Vec<f64>> = e
        .value
        .split(';')
        .map(parse_row)
        .collect::<Result<_, _>>()
        .map_err(|m| invalid(&qualified(e), format!("line {}: {m}", e.line)))?;
    let width = rows.first().map_or(0, Vec::len);
    if width == 0 || rows.iter().any(|r| r.len() != width) {
        return Err(invalid(&qualified(e), format!("line {}: rows must be nonempty and of equal length", e.line)));
    }
    Ok(rows)
}

fn require<'a>(entries: &'a Entries, section: &str, key: &str) -> Result<&'a Entry, ConfigError> {
    entries.get(section, key).ok_or_else(|| invalid(&format!("{section}.{key}"), "missing required key"))
}

impl ScenarioFile {
    /// Parses scenario text. Unknown sections and keys are errors unless
    /// `lenient`, in which case they are returned as warnings along with
    /// notes about defaulted keys.
    pub fn parse(text: &str, lenient: bool) -> Result<(Self, Vec<String>), ConfigError> {
        let mut warnings = Vec::new();
        let entries = split_entries(text, lenient, &mut warnings)?;

        let kind = require(&entries, "plant", "kind")?;
        let relevant = match kind.value.as_str() {
            "transport_scalar" => SCALAR_KEYS,
            "transport_system" => SYSTEM_KEYS,
            other => {
                return Err(invalid(
                    "plant.kind",
                    format!("{other:?}; expected transport_scalar or transport_system"),
                ))
            }
        };
        for e in entries.items.iter().filter(|e| e.section == "plant") {
            if !relevant.contains(&e.key.as_str()) {
                let message = format!("line {}: plant.{} does not apply to {}", e.line, e.key, kind.value);
                if !lenient {
                    return Err(invalid(&qualified(e), message));
                }
                warnings.push(format!("{message}; ignored"));
            }
        }
        let plant = if kind.value == "transport_scalar" {
            PlantConfig::Scalar {
                a: parse_f64(require(&entries, "plant", "a")?)?,
                lambda: parse_f64(require(&entries, "plant", "lambda")?)?,
                c: parse_f64(require(&entries, "plant", "c")?)?,
            }
        } else {
            let opt = |k: &str| entries.get("plant", k).map(parse_matrix).transpose();
            PlantConfig::System {
                a: parse_matrix(require(&entries, "plant", "A")?)?,
                b: parse_matrix(require(&entries, "plant", "B")?)?,
                c: parse_matrix(require(&entries, "plant", "C")?)?,
                speeds: parse_list(require(&entries, "plant", "speeds")?)?,
                d0: opt("D0")?,
                d1: opt("D1")?,
                r0: opt("R0")?,
                r1: opt("R1")?,
                e0: opt("E0")?,
                e1: opt("E1")?,
            }
        };

        let sigma_kind = match entries.get("nonlinearity", "kind") {
            Some(e) => SigmaKind::parse(&e.value).ok_or_else(|| {
                invalid("nonlinearity.kind", format!("{:?}; expected linear, saturation or sat_phi", e.value))
            })?,
            None => SigmaKind::Saturation,
        };
        let levels = entries.get("nonlinearity", "levels").map(parse_list).transpose()?.unwrap_or_else(|| vec![1.0]);
        let gain = entries.get("nonlinearity", "gain").map(parse_f64).transpose()?.unwrap_or(1.0);
        let shaping = entries.get("nonlinearity", "shaping").map(|e| e.value.clone()).filter(|s| s != "none");

        let cells = entries.get("grid", "cells").map(parse_usize).transpose()?.unwrap_or(200);
        let cfl_safety = entries.get("grid", "cfl_safety").map(parse_f64).transpose()?.unwrap_or(0.9);

        let weight = match entries.get("inner_product", "mode") {
            None => None,
            Some(e) if e.value == "auto" => None,
            Some(e) => Some(WeightMode::parse(&e.value).ok_or_else(|| {
                invalid("inner_product.mode", format!("{:?}; expected plain, speed_weighted or auto", e.value))
            })?),
        };

        let t_final = match entries.get("sim", "t_final") {
            Some(e) => parse_f64(e)?,
            None => {
                warnings.push("sim.t_final missing; defaulting to 60".into());
                60.0
            }
        };
        let record_stride = entries.get("sim", "record_stride").map(parse_usize).transpose()?.unwrap_or(10);
        let integrator = match entries.get("sim", "integrator") {
            Some(e) => Integrator::parse(&e.value)
                .ok_or_else(|| invalid("sim.integrator", format!("{:?}; expected euler or rk4", e.value)))?,
            None => Integrator::Euler,
        };

        let z0 = match entries.get("init", "z0") {
            Some(e) => Some(parse_list(e)?),
            None => {
                warnings.push("init.z0 missing; defaulting to zeros".into());
                None
            }
        };
        let w0 = match entries.get("init", "w0") {
            Some(e) => parse_w0(&e.value).map_err(|m| invalid("init.w0", format!("line {}: {m}", e.line)))?,
            None => W0Config::Constant(0.0),
        };
        let method = match entries.get("sylvester", "method") {
            Some(e) => SylvesterMethod::parse(&e.value)
                .ok_or_else(|| invalid("sylvester.method", format!("{:?}; expected closed, bvp or discrete", e.value)))?,
            None => SylvesterMethod::Discrete,
        };

        let file = Self {
            plant,
            sigma_kind,
            levels,
            gain,
            shaping,
            cells,
            cfl_safety,
            weight,
            t_final,
            record_stride,
            integrator,
            z0,
            w0,
            method,
        };
        file.check_ranges()?;
        Ok((file, warnings))
    }

    fn check_ranges(&self) -> Result<(), ConfigError> {
        if self.cells < cascade_core::plant::MIN_CELLS {
            return Err(invalid("grid.cells", format!("{} < {}", self.cells, cascade_core::plant::MIN_CELLS)));
        }
        if !(self.cfl_safety > 0.0 && self.cfl_safety <= 1.0) {
            return Err(invalid("grid.cfl_safety", format!("{} is outside (0, 1]", self.cfl_safety)));
        }
        if self.t_final < 0.0 {
            return Err(invalid("sim.t_final", format!("{} is negative", self.t_final)));
        }
        if self.record_stride == 0 {
            return Err(invalid("sim.record_stride", "must be at least 1"));
        }
        if self.levels.is_empty() {
            return Err(invalid("nonlinearity.levels", "empty list"));
        }
        Ok(())
    }

    /// Serializes every key explicitly, so parsing the result reproduces
    /// `self` without defaults or warnings.
    pub fn to_text(&self) -> String {
        let mut out = String::from("[plant]\n");
        match &self.plant {
            PlantConfig::Scalar { a, lambda, c } => {
                let _ = writeln!(out, "kind = transport_scalar\na = {a}\nlambda = {lambda}\nc = {c}");
            }
            PlantConfig::System { a, b, c, speeds, d0, d1, r0, r1, e0, e1 } => {
                out.push_str("kind = transport_system\n");
                for (k, m) in [("A", a), ("B", b), ("C", c)] {
                    let _ = writeln!(out, "{k} = {}", matrix_text(m));
                }
                let _ = writeln!(out, "speeds = {}", list_text(speeds));
                for (k, m) in [("D0", d0), ("D1", d1), ("R0", r0), ("R1", r1), ("E0", e0), ("E1", e1)] {
                    if let Some(m) = m {
                        let _ = writeln!(out, "{k} = {}", matrix_text(m));
                    }
                }
            }
        }
        let _ = writeln!(
            out,
            "\n[nonlinearity]\nkind = {}\nlevels = {}\ngain = {}\nshaping = {}",
            self.sigma_kind.name(),
            list_text(&self.levels),
            self.gain,
            self.shaping.as_deref().unwrap_or("none")
        );
        let _ = writeln!(out, "\n[grid]\ncells = {}\ncfl_safety = {}", self.cells, self.cfl_safety);
        let _ = writeln!(out, "\n[inner_product]\nmode = {}", self.weight.map_or("auto", WeightMode::name));
        let _ = writeln!(
            out,
            "\n[sim]\nt_final = {}\nrecord_stride = {}\nintegrator = {}",
            self.t_final,
            self.record_stride,
            self.integrator.name()
        );
        out.push_str("\n[init]\n");
        if let Some(z0) = &self.z0 {
            let _ = writeln!(out, "z0 = {}", list_text(z0));
        }
        let w0 = match &self.w0 {
            W0Config::Constant(v) => format!("constant {v}"),
            W0Config::Sine(k) => format!("sine {k}"),
            W0Config::Samples(p) => format!("samples {}", p.display()),
        };
        let _ = writeln!(out, "w0 = {w0}");
        let _ = writeln!(out, "\n[sylvester]\nmethod = {}", self.method.name());
        out
    }

    /// Builds and cross-checks the plant, nonlinearities and initial data.
    /// `base_dir` resolves relative sample paths.
    pub fn prepare(&self, base_dir: &Path) -> Result<Prepared, ConfigError> {
        let plant = self.build_plant()?;
        let grid = Grid::new(self.cells).map_err(|e| invalid("grid.cells", e))?;
        let m = plant.m();
        let levels = if self.levels.len() == 1 { vec![self.levels[0]; m] } else { self.levels.clone() };
        if levels.len() != m {
            return Err(invalid("nonlinearity.levels", format!("{} levels for m = {m} inputs", levels.len())));
        }
        let sigma = match self.sigma_kind {
            SigmaKind::Linear => Nonlinearity::linear(m, self.gain),
            SigmaKind::Saturation => Nonlinearity::saturation(levels),
            SigmaKind::SatPhi => Nonlinearity::sat_phi(levels),
        }
        .map_err(|e| invalid("nonlinearity", e))?;
        let mut options = SynthesisOptions::new(self.method);
        options.weight = self.weight;
        if let Some(text) = &self.shaping {
            let psi = Nonlinearity::parse_descriptor(text, m).map_err(|e| invalid("nonlinearity.shaping", e))?;
            compose_shaping(&psi, &sigma).map_err(|e| invalid("nonlinearity.shaping", e))?;
            options.shaping = Some(psi);
        }
        if self.method == SylvesterMethod::Closed && plant.scalar_params().is_none() {
            return Err(invalid(
                "sylvester.method",
                "the closed form covers only the scalar transport loop; use bvp or discrete",
            ));
        }
        let z0 = match &self.z0 {
            Some(z) if z.len() != plant.n() => {
                return Err(invalid("init.z0", format!("{} entries for n = {}", z.len(), plant.n())))
            }
            Some(z) => z.clone(),
            None => vec![0.0; plant.n()],
        };
        let w0 = match &self.w0 {
            W0Config::Constant(v) => InitialProfile::Constant(*v),
            W0Config::Sine(k) => InitialProfile::Sine(*k),
            W0Config::Samples(p) => {
                let path = base_dir.join(p);
                let text = std::fs::read_to_string(&path)
                    .map_err(|e| ConfigError::Io { path: path.display().to_string(), message: e.to_string() })?;
                let values = parse_row(&text).map_err(|m| invalid("init.w0", format!("{}: {m}", path.display())))?;
                let expected = self.cells * plant.channels();
                if values.len() != expected {
                    return Err(invalid(
                        "init.w0",
                        format!("{} samples, expected cells × channels = {expected}", values.len()),
                    ));
                }
                InitialProfile::Samples(values)
            }
        };
        Ok(Prepared {
            plant,
            grid,
            sigma,
            options,
            z0,
            w0,
            t_final: self.t_final,
            cfl_safety: self.cfl_safety,
            record_stride: self.record_stride,
            integrator: self.integrator,
        })
    }

    fn build_plant(&self) -> Result<PlantSpec, ConfigError> {
        match &self.plant {
            PlantConfig::Scalar { a, lambda, c } => {
                PlantSpec::scalar(*a, *lambda, *c).map_err(|e| invalid("plant", e))
            }
            PlantConfig::System { a, b, c, speeds, d0, d1, r0, r1, e0, e1 } => {
                let mat = |key: &str, rows: &Vec<Vec<f64>>| {
                    DenseMatrix::from_rows(rows).map_err(|e| invalid(&format!("plant.{key}"), e))
                };
                let opt = |key: &str, rows: &Option<Vec<Vec<f64>>>| rows.as_ref().map(|r| mat(key, r)).transpose();
                let mut raw = RawPlant::new(mat("A", a)?, mat("B", b)?, mat("C", c)?, speeds.clone());
                raw.d0 = opt("D0", d0)?;
                raw.d1 = opt("D1", d1)?;
                raw.r0 = opt("R0", r0)?;
                raw.r1 = opt("R1", r1)?;
                raw.e0 = opt("E0", e0)?;
                raw.e1 = opt("E1", e1)?;
                build_plant(raw).map_err(|e| invalid("plant", e))
            }
        }
    }
}

fn parse_w0(text: &str) -> Result<W0Config, String> {
    let mut parts = text.splitn(2, char::is_whitespace);
    let kind = parts.next().unwrap_or("");
    let arg = parts.next().map(str::trim).unwrap_or("");
    match kind {
        "constant" => {
            let v: f64 = arg.parse().map_err(|_| format!("constant needs a number, got {arg:?}"))?;
            if !v.is_finite() {
                return Err("constant must be finite".into());
            }
            Ok(W0Config::Constant(v))
        }
        "sine" => arg.parse().map(W0Config::Sine).map_err(|_| format!("sine needs a mode number, got {arg:?}")),
        "samples" if !arg.is_empty() => Ok(W0Config::Samples(PathBuf::from(arg))),
        _ => Err(format!("{text:?}; expected `constant v`, `sine k` or `samples path`")),
    }
}

fn list_text(v: &[f64]) -> String {
    v.iter().map(f64::to_string).collect::<Vec<_>>().join(", ")
}

fn matrix_text(m: &[Vec<f64>]) -> String {
    m.iter().map(|r| list_text(r).replace(',', "")).collect::<Vec<_>>().join("; ")
}

/// Reads and parses a scenario file.
pub fn parse_scenario_file(path: &Path, lenient: bool) -> Result<(ScenarioFile, Vec<String>), ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::Io { path: path.display().to_string(), message: e.to_string() })?;
    ScenarioFile::parse(&text, lenient)
}
