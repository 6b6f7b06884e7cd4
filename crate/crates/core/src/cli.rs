//! Run configuration, dispatch and artifact emission behind the
//! `grushin-lab` binary.
//!
//! A run is described by one flat JSON document: the common keys `cmd`,
//! `seed`, `output_dir`, `emit_csv`, `emit_json`, plus the keys of the
//! selected subcommand. Every schema problem is collected before anything
//! runs, and the fully defaulted configuration is echoed next to the
//! results.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use crate::audit::{run_audit, write_margins_csv, AuditConfig};
use crate::error::{LabError, Result};
use crate::fd::{ode_lower_bound, run_to_verdict, fujita_sweep, Boundary, FdConfig, SweepTemplate};
use crate::grid::{make_initial, Grid2D, InitialData};
use crate::kernel::{
    kernel_density, kernel_gradient, kernel_mass, moments, pde_residual, KernelVariant, ResidualSteps, SpacePoint,
    StartPoint,
};
use crate::mild::{global_bound_monitor, picard_solve, PicardConfig};
use crate::quadrature::QuadSpec;
use crate::sde::{
    curve_residual, density_distance, empirical_moments, moment_zscores, simulate_endpoints, write_samples_csv,
    HistogramGrid, NoiseCoupling, SimConfig,
};
use crate::stats::ks_test_normal;

pub const DEFAULT_SEED: u64 = 20_240_601;
pub const DEFAULT_OUTPUT_DIR: &str = "grushin-out";
pub const SUBCOMMANDS: [&str; 6] = ["kernel", "mc", "picard", "fd", "sweep", "audit"];
const COMMON_KEYS: [&str; 5] = ["cmd", "seed", "output_dir", "emit_csv", "emit_json"];

/// Exit status of a completed run.
pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_FAILED_CHECK: i32 = 2;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KernelParams {
    pub t: f64,
    pub variant: KernelVariant,
    pub mu: [f64; 2],
    pub points: Vec<[f64; 2]>,
    pub residual: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HistogramParams {
    pub n1: usize,
    pub n2: usize,
    pub span: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McParams {
    pub t_end: f64,
    pub dt: f64,
    pub n_paths: u64,
    pub coupling: NoiseCoupling,
    pub mu: [f64; 2],
    pub antithetic: bool,
    pub histogram: Option<HistogramParams>,
    pub histogram_variant: KernelVariant,
    pub max_abs_z: Option<f64>,
    pub samples_csv: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PicardParams {
    pub p: f64,
    pub t_end: f64,
    pub n_time: usize,
    pub max_iter: usize,
    pub tol_sup: f64,
    pub variant: KernelVariant,
    pub reaction: bool,
    pub grid: Grid2D,
    pub data: InitialData,
    pub field_csv: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FdParams {
    pub p: f64,
    pub t_max: f64,
    pub grid: Grid2D,
    pub data: InitialData,
    pub bc: Option<Boundary>,
    pub dt_safety: f64,
    pub blow_threshold: f64,
    pub output_interval: Option<f64>,
    pub reaction: bool,
    pub g_variant: KernelVariant,
    pub field_csv: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepParams {
    pub p_list: Vec<f64>,
    pub data_list: Vec<InitialData>,
    pub grid: Grid2D,
    pub t_max: f64,
    pub bc: Option<Boundary>,
    pub dt_safety: f64,
    pub blow_threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditParams {
    pub inequality_samples: usize,
    pub quadrature_samples: usize,
    pub variant: KernelVariant,
    pub t_max: f64,
    pub coord_bound: f64,
    pub critical_times: Vec<f64>,
    pub critical_amplitude: f64,
    pub margins_csv: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Command {
    Kernel(KernelParams),
    Mc(McParams),
    Picard(PicardParams),
    Fd(FdParams),
    Sweep(SweepParams),
    Audit(AuditParams),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Kernel(_) => "kernel",
            Command::Mc(_) => "mc",
            Command::Picard(_) => "picard",
            Command::Fd(_) => "fd",
            Command::Sweep(_) => "sweep",
            Command::Audit(_) => "audit",
        }
    }

    fn params_value(&self) -> Value {
        let v = match self {
            Command::Kernel(p) => serde_json::to_value(p),
            Command::Mc(p) => serde_json::to_value(p),
            Command::Picard(p) => serde_json::to_value(p),
            Command::Fd(p) => serde_json::to_value(p),
            Command::Sweep(p) => serde_json::to_value(p),
            Command::Audit(p) => serde_json::to_value(p),
        };
        v.expect("parameter blocks serialize")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub emit_csv: bool,
    pub emit_json: bool,
    pub command: Command,
}

impl RunConfig {
    /// The flat JSON form, with every default filled in.
    pub fn to_json(&self) -> Value {
        let mut map = Map::new();
        map.insert("cmd".into(), json!(self.command.name()));
        map.insert("seed".into(), json!(self.seed));
        map.insert("output_dir".into(), json!(self.output_dir.to_string_lossy()));
        map.insert("emit_csv".into(), json!(self.emit_csv));
        map.insert("emit_json".into(), json!(self.emit_json));
        if let Value::Object(params) = self.command.params_value() {
            for (k, v) in params {
                // Absent optional values are simply left out of the echo.
                if !v.is_null() {
                    map.insert(k, v);
                }
            }
        }
        Value::Object(map)
    }

    /// Number of solver runs the configuration expands into.
    pub fn planned_runs(&self) -> usize {
        match &self.command {
            Command::Sweep(s) => s.p_list.len() * s.data_list.len(),
            _ => 1,
        }
    }
}

/// Pulls typed fields out of a JSON object, recording every problem.
struct Reader<'a> {
    map: &'a Map<String, Value>,
    errors: Vec<String>,
}

impl<'a> Reader<'a> {
    fn parse<T: DeserializeOwned>(&mut self, key: &str) -> Option<T> {
        let v = self.map.get(key)?;
        match serde_json::from_value::<T>(v.clone()) {
            Ok(x) => Some(x),
            Err(e) => {
                self.errors.push(format!("`{key}`: {e}"));
                None
            }
        }
    }

    fn or<T: DeserializeOwned>(&mut self, key: &str, default: T) -> T {
        self.parse(key).unwrap_or(default)
    }

    fn required<T: DeserializeOwned>(&mut self, key: &str) -> Option<T> {
        if !self.map.contains_key(key) {
            self.errors.push(format!("`{key}`: missing required field"));
            return None;
        }
        self.parse(key)
    }

    fn check(&mut self, ok: bool, key: &str, msg: impl std::fmt::Display) {
        if !ok {
            self.errors.push(format!("`{key}`: {msg}"));
        }
    }

    fn positive(&mut self, key: &str, v: f64) {
        self.check(v.is_finite() && v > 0.0, key, format_args!("must be finite and > 0, got {v}"));
    }

    fn grid(&mut self, key: &str, default: Grid2D) -> Grid2D {
        let g = self.or(key, default);
        if let Err(e) = g.validate() {
            self.errors.push(format!("`{key}`: {e}"));
        }
        g
    }

    fn data(&mut self, key: &str, d: &InitialData) {
        if let Err(e) = d.validate() {
            self.errors.push(format!("`{key}`: {e}"));
        }
    }
}

const KERNEL_KEYS: [&str; 5] = ["t", "variant", "mu", "points", "residual"];
const MC_KEYS: [&str; 10] = [
    "t_end",
    "dt",
    "n_paths",
    "coupling",
    "mu",
    "antithetic",
    "histogram",
    "histogram_variant",
    "max_abs_z",
    "samples_csv",
];
const PICARD_KEYS: [&str; 10] = [
    "p", "t_end", "n_time", "max_iter", "tol_sup", "variant", "reaction", "grid", "data", "field_csv",
];
const FD_KEYS: [&str; 11] = [
    "p",
    "t_max",
    "grid",
    "data",
    "bc",
    "dt_safety",
    "blow_threshold",
    "output_interval",
    "reaction",
    "g_variant",
    "field_csv",
];
const SWEEP_KEYS: [&str; 7] = ["p_list", "data_list", "grid", "t_max", "bc", "dt_safety", "blow_threshold"];
const AUDIT_KEYS: [&str; 8] = [
    "inequality_samples",
    "quadrature_samples",
    "variant",
    "t_max",
    "coord_bound",
    "critical_times",
    "critical_amplitude",
    "margins_csv",
];

fn subcommand_keys(cmd: &str) -> &'static [&'static str] {
    match cmd {
        "kernel" => &KERNEL_KEYS,
        "mc" => &MC_KEYS,
        "picard" => &PICARD_KEYS,
        "fd" => &FD_KEYS,
        "sweep" => &SWEEP_KEYS,
        "audit" => &AUDIT_KEYS,
        _ => &[],
    }
}

pub fn default_solver_grid() -> Grid2D {
    Grid2D {
        l1: 4.0,
        l2: 8.0,
        n1: 64,
        n2: 64,
    }
}

pub fn default_sweep_grid() -> Grid2D {
    Grid2D {
        l1: 6.0,
        l2: 12.0,
        n1: 96,
        n2: 96,
    }
}

pub fn default_sweep_p_list() -> Vec<f64> {
    vec![0.5, 1.2, 1.5, 1.6667, 2.0]
}

fn parse_kernel(r: &mut Reader) -> Option<Command> {
    let t: Option<f64> = r.required("t");
    let variant = r.or("variant", KernelVariant::PaperFormula);
    let mu: [f64; 2] = r.or("mu", [0.0, 0.0]);
    let points: Vec<[f64; 2]> = r.or("points", vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]);
    let residual = r.or("residual", true);
    if let Some(t) = t {
        r.positive("t", t);
    }
    r.check(mu.iter().all(|v| v.is_finite()), "mu", "coordinates must be finite");
    r.check(!points.is_empty(), "points", "must list at least one point");
    r.check(points.iter().flatten().all(|v| v.is_finite()), "points", "coordinates must be finite");
    Some(Command::Kernel(KernelParams {
        t: t?,
        variant,
        mu,
        points,
        residual,
    }))
}

fn parse_mc(r: &mut Reader) -> Option<Command> {
    let p = McParams {
        t_end: r.or("t_end", 1.0),
        dt: r.or("dt", 1e-3),
        n_paths: r.or("n_paths", 100_000),
        coupling: r.or("coupling", NoiseCoupling::IndependentPair),
        mu: r.or("mu", [0.0, 0.0]),
        antithetic: r.or("antithetic", false),
        histogram: r.parse("histogram"),
        histogram_variant: r.or("histogram_variant", KernelVariant::MomentGaussian),
        max_abs_z: r.parse("max_abs_z"),
        samples_csv: r.or("samples_csv", false),
    };
    r.positive("t_end", p.t_end);
    r.positive("dt", p.dt);
    r.check(p.n_paths >= 2, "n_paths", "needs at least two paths");
    r.check(p.mu.iter().all(|v| v.is_finite()), "mu", "coordinates must be finite");
    if let Some(h) = p.histogram {
        r.check(h.n1 > 0 && h.n2 > 0, "histogram", "needs at least one cell per axis");
        r.positive("histogram.span", h.span);
    }
    if let Some(z) = p.max_abs_z {
        r.positive("max_abs_z", z);
    }
    let sim = sim_config(&p, 0);
    if p.t_end > 0.0 && p.dt > 0.0 && p.n_paths >= 2 {
        if let Err(e) = sim.validate() {
            r.errors.push(e.to_string());
        } else if let Some(h) = p.histogram {
            if let Err(e) = HistogramGrid::covering(p.t_end, sim.mu, h.span, h.n1, h.n2) {
                r.errors.push(format!("`histogram`: {e}"));
            }
        }
    }
    Some(Command::Mc(p))
}

fn parse_picard(r: &mut Reader) -> Option<Command> {
    let p: Option<f64> = r.required("p");
    let t_end: Option<f64> = r.required("t_end");
    let n_time = r.or("n_time", 20usize);
    let max_iter = r.or("max_iter", 50usize);
    let tol_sup = r.or("tol_sup", 1e-6);
    let variant = r.or("variant", KernelVariant::UnitPaperFormula);
    let reaction = r.or("reaction", true);
    let grid = r.grid("grid", default_solver_grid());
    let data: Option<InitialData> = r.required("data");
    let field_csv = r.or("field_csv", false);
    if let Some(p) = p {
        r.positive("p", p);
    }
    if let Some(t) = t_end {
        r.positive("t_end", t);
    }
    r.check(n_time > 0, "n_time", "must be positive");
    r.check(max_iter > 0, "max_iter", "must be positive");
    r.positive("tol_sup", tol_sup);
    if let Some(d) = &data {
        r.data("data", d);
    }
    Some(Command::Picard(PicardParams {
        p: p?,
        t_end: t_end?,
        n_time,
        max_iter,
        tol_sup,
        variant,
        reaction,
        grid,
        data: data?,
        field_csv,
    }))
}

fn parse_fd(r: &mut Reader) -> Option<Command> {
    let p: Option<f64> = r.required("p");
    let t_max: Option<f64> = r.required("t_max");
    let grid = r.grid("grid", default_solver_grid());
    let data: Option<InitialData> = r.required("data");
    let bc: Option<Boundary> = r.parse("bc");
    let dt_safety = r.or("dt_safety", 0.4);
    let blow_threshold = r.or("blow_threshold", 1e8);
    let output_interval: Option<f64> = r.parse("output_interval");
    let reaction = r.or("reaction", true);
    let g_variant = r.or("g_variant", KernelVariant::PaperFormula);
    let field_csv = r.or("field_csv", false);
    if let Some(p) = p {
        r.positive("p", p);
    }
    if let Some(t) = t_max {
        r.positive("t_max", t);
    }
    if let Some(d) = &data {
        r.data("data", d);
    }
    r.check(dt_safety > 0.0 && dt_safety <= 1.0, "dt_safety", format_args!("must lie in (0, 1], got {dt_safety}"));
    r.positive("blow_threshold", blow_threshold);
    if let Some(o) = output_interval {
        r.positive("output_interval", o);
    }
    Some(Command::Fd(FdParams {
        p: p?,
        t_max: t_max?,
        grid,
        data: data?,
        bc,
        dt_safety,
        blow_threshold,
        output_interval,
        reaction,
        g_variant,
        field_csv,
    }))
}

fn parse_sweep(r: &mut Reader) -> Option<Command> {
    let p_list: Vec<f64> = r.or("p_list", default_sweep_p_list());
    let data_list: Vec<InitialData> = r.or("data_list", vec![InitialData::Ball { c1: 1.0 }]);
    let grid = r.grid("grid", default_sweep_grid());
    let t_max = r.or("t_max", 50.0);
    let bc: Option<Boundary> = r.parse("bc");
    let dt_safety = r.or("dt_safety", 0.4);
    let blow_threshold = r.or("blow_threshold", 1e8);
    r.check(!p_list.is_empty(), "p_list", "must be nonempty");
    r.check(!data_list.is_empty(), "data_list", "must be nonempty");
    for (k, &p) in p_list.iter().enumerate() {
        r.check(p.is_finite() && p > 0.0, "p_list", format_args!("entry {k} must be finite and > 0, got {p}"));
    }
    for d in &data_list {
        r.data("data_list", d);
    }
    r.positive("t_max", t_max);
    r.check(dt_safety > 0.0 && dt_safety <= 1.0, "dt_safety", format_args!("must lie in (0, 1], got {dt_safety}"));
    r.positive("blow_threshold", blow_threshold);
    Some(Command::Sweep(SweepParams {
        p_list,
        data_list,
        grid,
        t_max,
        bc,
        dt_safety,
        blow_threshold,
    }))
}

fn parse_audit(r: &mut Reader) -> Option<Command> {
    let d = AuditConfig::default();
    let p = AuditParams {
        inequality_samples: r.or("inequality_samples", d.inequality_samples),
        quadrature_samples: r.or("quadrature_samples", d.quadrature_samples),
        variant: r.or("variant", d.variant),
        t_max: r.or("t_max", d.t_max),
        coord_bound: r.or("coord_bound", d.coord_bound),
        critical_times: r.or("critical_times", d.critical_times.clone()),
        critical_amplitude: r.or("critical_amplitude", d.critical_amplitude),
        margins_csv: r.or("margins_csv", false),
    };
    if let Err(e) = audit_config(&p, 0).validate() {
        r.errors.push(e.to_string());
    }
    Some(Command::Audit(p))
}

/// Parses and validates a configuration document. Command-line overrides
/// for the seed and output directory take precedence over the document.
pub fn parse_config(text: &str, seed: Option<u64>, output_dir: Option<PathBuf>) -> Result<RunConfig> {
    let value: Value = serde_json::from_str(text).map_err(|e| LabError::Config(format!("config is not valid JSON: {e}")))?;
    let map = match &value {
        Value::Object(m) => m,
        _ => return Err(LabError::Config("config must be a JSON object".into())),
    };
    let mut r = Reader {
        map,
        errors: Vec::new(),
    };
    let cmd: Option<String> = r.required("cmd");
    let doc_seed = r.or("seed", DEFAULT_SEED);
    let doc_out: Option<String> = r.parse("output_dir");
    let emit_csv = r.or("emit_csv", true);
    let emit_json = r.or("emit_json", true);
    let known = cmd.as_deref().filter(|c| SUBCOMMANDS.contains(c));
    if let Some(c) = &cmd {
        if known.is_none() {
            r.errors
                .push(format!("`cmd`: unknown subcommand `{c}`; expected one of {}", SUBCOMMANDS.join(", ")));
        }
    }
    if let Some(c) = known {
        let allowed = subcommand_keys(c);
        for k in map.keys() {
            if !COMMON_KEYS.contains(&k.as_str()) && !allowed.contains(&k.as_str()) {
                r.errors.push(format!("`{k}`: unknown key for `{c}`"));
            }
        }
    }
    let command = match known {
        Some("kernel") => parse_kernel(&mut r),
        Some("mc") => parse_mc(&mut r),
        Some("picard") => parse_picard(&mut r),
        Some("fd") => parse_fd(&mut r),
        Some("sweep") => parse_sweep(&mut r),
        Some("audit") => parse_audit(&mut r),
        _ => None,
    };
    if !r.errors.is_empty() {
        return Err(LabError::Config(format!(
            "{} configuration error(s):\n  {}",
            r.errors.len(),
            r.errors.join("\n  ")
        )));
    }
    Ok(RunConfig {
        seed: seed.unwrap_or(doc_seed),
        output_dir: output_dir
            .or_else(|| doc_out.map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR)),
        emit_csv,
        emit_json,
        command: command.expect("a known subcommand without errors yields a command"),
    })
}

/// Git-style content address: SHA-256 over `"blob {len}\0"` and the bytes.
pub fn content_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn sim_config(p: &McParams, seed: u64) -> SimConfig {
    SimConfig {
        t_end: p.t_end,
        dt: p.dt,
        n_paths: p.n_paths,
        seed,
        coupling: p.coupling,
        mu: StartPoint::new(p.mu[0], p.mu[1]),
        antithetic: p.antithetic,
    }
}

fn audit_config(p: &AuditParams, seed: u64) -> AuditConfig {
    AuditConfig {
        seed,
        inequality_samples: p.inequality_samples,
        quadrature_samples: p.quadrature_samples,
        variant: p.variant,
        t_max: p.t_max,
        coord_bound: p.coord_bound,
        critical_times: p.critical_times.clone(),
        critical_amplitude: p.critical_amplitude,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub subcommand: String,
    pub input_hash: String,
    pub config_hash: String,
    pub passed: bool,
    pub headline: Value,
    pub warnings: Vec<String>,
    pub files: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub summary: RunSummary,
    pub exit_code: i32,
}

/// Long-format `t,metric,value` rows.
#[derive(Default)]
struct Trace(Vec<(f64, &'static str, f64)>);

impl Trace {
    fn push(&mut self, t: f64, metric: &'static str, value: f64) {
        self.0.push((t, metric, value));
    }

    fn write<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "t,metric,value")?;
        for (t, m, v) in &self.0 {
            writeln!(out, "{t:.16e},{m},{v:.16e}")?;
        }
        Ok(())
    }
}

struct Outputs {
    dir: PathBuf,
    files: Vec<String>,
}

impl Outputs {
    fn write_with<F>(&mut self, name: &str, f: F) -> Result<()>
    where
        F: FnOnce(&mut BufWriter<fs::File>) -> std::io::Result<()>,
    {
        let path = self.dir.join(name);
        let file = fs::File::create(&path).map_err(|e| LabError::Io(format!("{}: {e}", path.display())))?;
        let mut w = BufWriter::new(file);
        f(&mut w)?;
        w.flush()?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn json(&mut self, name: &str, v: &impl Serialize) -> Result<()> {
        let text = serde_json::to_string_pretty(v).map_err(|e| LabError::Io(e.to_string()))?;
        self.write_with(name, |w| writeln!(w, "{text}"))
    }
}

struct Produced {
    headline: Value,
    warnings: Vec<String>,
    passed: bool,
    trace: Option<Trace>,
}

/// Runs the configured subcommand and writes its artifacts.
pub fn execute(cfg: &RunConfig, raw_input: &[u8]) -> Result<RunOutcome> {
    fs::create_dir_all(&cfg.output_dir).map_err(|e| LabError::Io(format!("{}: {e}", cfg.output_dir.display())))?;
    let mut out = Outputs {
        dir: cfg.output_dir.clone(),
        files: Vec::new(),
    };
    let echo = serde_json::to_string_pretty(&cfg.to_json()).map_err(|e| LabError::Io(e.to_string()))? + "\n";
    out.write_with("config.echo.json", |w| w.write_all(echo.as_bytes()))?;

    let produced = match &cfg.command {
        Command::Kernel(p) => run_kernel(p, cfg, &mut out)?,
        Command::Mc(p) => run_mc(p, cfg, &mut out)?,
        Command::Picard(p) => run_picard(p, cfg, &mut out)?,
        Command::Fd(p) => run_fd(p, cfg, &mut out)?,
        Command::Sweep(p) => run_sweep(p, cfg, &mut out)?,
        Command::Audit(p) => run_audit_cmd(p, cfg, &mut out)?,
    };
    if let (true, Some(trace)) = (cfg.emit_csv, &produced.trace) {
        out.write_with("trace.csv", |w| trace.write(w))?;
    }
    let mut files = out.files.clone();
    if cfg.emit_json {
        files.push("summary.json".into());
    }
    let summary = RunSummary {
        subcommand: cfg.command.name().to_string(),
        input_hash: content_hash(raw_input),
        config_hash: content_hash(echo.as_bytes()),
        passed: produced.passed,
        headline: produced.headline,
        warnings: produced.warnings,
        files,
    };
    if cfg.emit_json {
        out.json("summary.json", &summary)?;
    }
    Ok(RunOutcome {
        exit_code: if summary.passed { EXIT_OK } else { EXIT_FAILED_CHECK },
        summary,
    })
}

fn run_kernel(p: &KernelParams, cfg: &RunConfig, out: &mut Outputs) -> Result<Produced> {
    let mu = StartPoint::new(p.mu[0], p.mu[1]);
    let mass = kernel_mass(p.variant, p.t, mu, &QuadSpec::default())?;
    let mut rows = Vec::new();
    for &[x1, x2] in &p.points {
        let x = SpacePoint::new(x1, x2);
        let d = kernel_density(p.variant, p.t, x, mu)?;
        let g = kernel_gradient(p.variant, p.t, x, mu)?;
        rows.push((x, d, g));
    }
    let mut trace = Trace::default();
    trace.push(p.t, "mass", mass.value);
    let mut warnings = Vec::new();
    let residual = if p.residual {
        let h = ResidualSteps {
            t: (p.t / 4.0).min(ResidualSteps::default().t),
            ..ResidualSteps::default()
        };
        let r = pde_residual(p.variant, p.t, SpacePoint::new(mu.mu1, mu.mu2), mu, &h)?;
        trace.push(p.t, "residual", r.value);
        trace.push(p.t, "residual_order", r.order);
        Some(r)
    } else {
        warnings.push("residual skipped".to_string());
        None
    };
    if cfg.emit_csv {
        out.write_with("kernel.csv", |w| {
            writeln!(w, "x1,x2,density,grad_x1,grad_x2")?;
            for (x, d, g) in &rows {
                writeln!(w, "{:.16e},{:.16e},{d:.16e},{:.16e},{:.16e}", x.x1, x.x2, g[0], g[1])?;
            }
            Ok(())
        })?;
    }
    let points: Vec<Value> = rows
        .iter()
        .map(|(x, d, g)| json!({"x1": x.x1, "x2": x.x2, "density": d, "gradient": g}))
        .collect();
    Ok(Produced {
        headline: json!({
            "variant": p.variant,
            "t": p.t,
            "mu": p.mu,
            "mass": mass,
            "total_mass_closed_form": p.variant.total_mass(),
            "moments": moments(p.t, mu)?,
            "residual": residual,
            "points": points,
        }),
        warnings,
        passed: true,
        trace: Some(trace),
    })
}

fn run_mc(p: &McParams, cfg: &RunConfig, out: &mut Outputs) -> Result<Produced> {
    let sim = sim_config(p, cfg.seed);
    let samples = simulate_endpoints(&sim)?;
    let mut emp = empirical_moments(&samples)?;
    emp.t = Some(p.t_end);
    let analytic = moments(p.t_end, sim.mu)?;
    let z = moment_zscores(&emp, &analytic)?;
    let x1: Vec<f64> = samples.iter().map(|s| s.x1).collect();
    let ks = ks_test_normal(&x1, sim.mu.mu1, p.t_end.sqrt());
    let curve = curve_residual(&samples, sim.mu, p.t_end);
    let density = match p.histogram {
        Some(h) => {
            let grid = HistogramGrid::covering(p.t_end, sim.mu, h.span, h.n1, h.n2)?;
            Some(density_distance(&samples, p.histogram_variant, p.t_end, sim.mu, &grid)?.distance)
        }
        None => None,
    };
    let mut trace = Trace::default();
    let t = p.t_end;
    trace.push(t, "mean_x1", emp.mean[0]);
    trace.push(t, "mean_x2", emp.mean[1]);
    trace.push(t, "cov_11", emp.cov[0][0]);
    trace.push(t, "cov_12", emp.cov[0][1]);
    trace.push(t, "cov_22", emp.cov[1][1]);
    trace.push(t, "max_abs_z", z.max_abs());
    trace.push(t, "ks_p_value_x1", ks.p_value);
    trace.push(t, "curve_residual_mean", curve.mean);
    if let Some(d) = density {
        trace.push(t, "density_distance", d);
    }
    if cfg.emit_csv && p.samples_csv {
        out.write_with("samples.csv", |w| write_samples_csv(&samples, w))?;
    }
    let passed = p.max_abs_z.is_none_or(|limit| z.max_abs() <= limit);
    Ok(Produced {
        headline: json!({
            "empirical": emp,
            "analytic": analytic,
            "zscores": z,
            "ks_x1": ks,
            "curve_residual": curve,
            "density_distance": density,
            "max_abs_z_limit": p.max_abs_z,
        }),
        warnings: Vec::new(),
        passed,
        trace: Some(trace),
    })
}

fn run_picard(p: &PicardParams, cfg: &RunConfig, out: &mut Outputs) -> Result<Produced> {
    let pc = PicardConfig {
        p: p.p,
        t_end: p.t_end,
        n_time: p.n_time,
        max_iter: p.max_iter,
        tol_sup: p.tol_sup,
        variant: p.variant,
        reaction: p.reaction,
    };
    let u0 = make_initial(&p.data, p.grid)?;
    let res = picard_solve(&pc, &u0)?;
    let mut trace = Trace::default();
    for s in &res.splits {
        trace.push(s.t(), "sup_u", s.total().sup());
        trace.push(s.t(), "sup_linear", s.linear_part.sup());
        trace.push(s.t(), "sup_nonlinear", s.nonlinear_part.sup());
    }
    let envelope = if p.p < 1.0 && p.reaction {
        Some(global_bound_monitor(&res.sup_trace, p.p, u0.sup())?)
    } else {
        None
    };
    let final_field = res.final_field();
    if cfg.emit_csv && p.field_csv {
        out.write_with("field.csv", |w| final_field.write_csv(w))?;
    }
    let mut warnings = res.warnings.clone();
    warnings.dedup();
    Ok(Produced {
        headline: json!({
            "status": res.status,
            "iterations": res.iterations,
            "last_change": res.last_change,
            "sup_final": final_field.sup(),
            "envelope": envelope,
        }),
        warnings,
        passed: envelope.is_none_or(|e| e.passed),
        trace: Some(trace),
    })
}

fn fd_config(p: &FdParams) -> FdConfig {
    FdConfig {
        dt_safety: p.dt_safety,
        blow_threshold: p.blow_threshold,
        output_interval: p.output_interval,
        reaction: p.reaction,
        g_variant: p.g_variant,
        ..FdConfig::new(p.grid, p.p, p.bc.unwrap_or_else(|| Boundary::default_for(&p.data)), p.t_max)
    }
}

fn run_fd(p: &FdParams, cfg: &RunConfig, out: &mut Outputs) -> Result<Produced> {
    let fc = fd_config(p);
    let u0 = make_initial(&p.data, p.grid)?;
    let run = run_to_verdict(&fc, &u0)?;
    let mut trace = Trace::default();
    for d in &run.diagnostics {
        trace.push(d.t, "sup_u", d.sup);
        trace.push(d.t, "mass", d.mass);
        if let Some(g) = d.g {
            trace.push(d.t, "G_t", g);
        }
    }
    if cfg.emit_csv && p.field_csv {
        out.write_with("field.csv", |w| run.final_field.write_csv(w))?;
    }
    let ode_time = match p.data {
        InitialData::Constant { level } if p.p > 1.0 && level > 0.0 => Some(ode_lower_bound(level, p.p)?),
        _ => None,
    };
    Ok(Produced {
        headline: json!({
            "verdict": run.verdict,
            "bc": fc.bc,
            "dt": run.dt,
            "steps": run.steps,
            "t_final": run.final_field.t,
            "sup_final": run.final_field.sup(),
            "ode_blowup_time": ode_time,
        }),
        warnings: run.warnings,
        passed: true,
        trace: Some(trace),
    })
}

fn run_sweep(p: &SweepParams, cfg: &RunConfig, out: &mut Outputs) -> Result<Produced> {
    let template = SweepTemplate {
        grid: p.grid,
        t_max: p.t_max,
        dt_safety: p.dt_safety,
        blow_threshold: p.blow_threshold,
        bc: p.bc,
    };
    let result = fujita_sweep(&p.p_list, &p.data_list, &template)?;
    if cfg.emit_csv {
        out.write_with("sweep.csv", |w| result.write_csv(w))?;
    }
    let warnings = result
        .rows
        .iter()
        .flat_map(|r| r.warnings.iter().map(move |w| format!("p = {}, {}: {w}", r.p, r.data)))
        .collect();
    let rows: Vec<Value> = result
        .rows
        .iter()
        .map(|r| json!({"p": r.p, "data": r.data.to_string(), "verdict": r.verdict, "regime": r.regime}))
        .collect();
    Ok(Produced {
        headline: json!({
            "planned_runs": cfg.planned_runs(),
            "critical_exponent": crate::fd::FUJITA_EXPONENT,
            "rows": rows,
        }),
        warnings,
        passed: true,
        trace: None,
    })
}

fn run_audit_cmd(p: &AuditParams, cfg: &RunConfig, out: &mut Outputs) -> Result<Produced> {
    let run = run_audit(&audit_config(p, cfg.seed))?;
    if cfg.emit_json {
        out.json("audit.json", &run.report)?;
    }
    if cfg.emit_csv && p.margins_csv {
        out.write_with("margins.csv", |w| {
            write_margins_csv(
                &[
                    ("exponent_inequality_x1", &run.x1_margins),
                    ("exponent_inequality_x2", &run.x2_margins),
                ],
                w,
            )
        })?;
    }
    let checks: Vec<Value> = run
        .report
        .checks
        .iter()
        .map(|c| json!({"name": c.name, "pass": c.pass, "min_margin": c.min_margin}))
        .collect();
    Ok(Produced {
        headline: json!({
            "passed": run.report.passed(),
            "constants": run.report.constants,
            "checks": checks,
        }),
        warnings: Vec::new(),
        passed: run.report.passed(),
        trace: None,
    })
}

/// Reads the config file, applies overrides and runs it.
pub fn run_file(path: &Path, seed: Option<u64>, output_dir: Option<PathBuf>) -> Result<RunOutcome> {
    let raw = fs::read(path).map_err(|e| LabError::Io(format!("{}: {e}", path.display())))?;
    let text = String::from_utf8(raw.clone()).map_err(|_| LabError::Config("config is not UTF-8".into()))?;
    let cfg = parse_config(&text, seed, output_dir)?;
    execute(&cfg, &raw)
}
