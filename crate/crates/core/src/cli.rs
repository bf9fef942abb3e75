//! Command-line front end: configuration files, run manifests and the
//! CSV/JSON outputs of each subcommand.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::experiments::{
    calibrate_hot_occupation, default_grid, donor_scan, jv_sweep, log_grid, max_power_point, open_circuit_voltage,
    CalibrationOptions, CalibrationTargets, ErrorClass, ExperimentError,
};
use crate::generator::rate_matrix;
use crate::model::{default_config, validate_config, HotOccupation, PhotocellConfig, MAX_DONORS};
use crate::observables::OperatingPoint;
use crate::solver::steady_state_populations;

/// Environment variable holding the `env_logger` filter.
pub const LOG_ENV: &str = "PHOTOCELL_LOG";

pub const EXIT_IO: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;
pub const EXIT_ROOT_FINDING: i32 = 4;
pub const EXIT_AUDIT: i32 = 5;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Experiment(#[from] ExperimentError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("audit failed: {0}")]
    Audit(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Io { .. } => EXIT_IO,
            CliError::Audit(_) => EXIT_AUDIT,
            CliError::Experiment(e) => match e.class() {
                ErrorClass::Config => EXIT_CONFIG,
                ErrorClass::Solver => EXIT_SOLVER,
                ErrorClass::RootFinding => EXIT_ROOT_FINDING,
            },
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "photocell",
    version,
    about = "Steady-state N-donor quantum photocell simulator"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Steady-state populations at the configured load.
    Steady(RunArgs),
    /// j-V-P characteristic over a load grid, one CSV per donor count.
    Sweep(RunArgs),
    /// Open-circuit voltage and maximum power point per donor count.
    Mpp(RunArgs),
    /// Normalized current at a fixed voltage versus donor count.
    Scan(RunArgs),
    /// Fit the hot-bath occupation to the voltage landmarks.
    Calibrate(RunArgs),
    /// Re-check P = j V on every row of sweep CSV files.
    Audit {
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// TOML configuration; defaults apply to every key left out.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory, created if missing.
    #[arg(long)]
    pub out: PathBuf,
    /// Donor counts: `3`, `3,6,9`, `1-9`.
    #[arg(long)]
    pub donors: Option<String>,
    /// Log-spaced load grid `lo:hi:count` in eV.
    #[arg(long)]
    pub grid: Option<String>,
    /// Fixed voltage for `scan` (V).
    #[arg(long)]
    pub v_target: Option<f64>,
}

/// Scalar or per-donor array in the config file.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum PerDonor {
    Scalar(f64),
    Array(Vec<f64>),
}

impl PerDonor {
    fn expand(&self, donors: usize) -> Vec<f64> {
        match self {
            PerDonor::Scalar(x) => vec![*x; donors],
            PerDonor::Array(v) => v.clone(),
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    donor_count: Option<usize>,
    #[serde(default)]
    energies: EnergiesFile,
    #[serde(default)]
    rates: RatesFile,
    #[serde(default)]
    bath: BathFile,
    #[serde(default)]
    solver: SolverFile,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
#[allow(non_snake_case)]
struct EnergiesFile {
    E_b: Option<f64>,
    E_a: Option<PerDonor>,
    E_alpha: Option<f64>,
    E_beta: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
#[allow(non_snake_case)]
struct RatesFile {
    gamma_h: Option<PerDonor>,
    gamma_c: Option<PerDonor>,
    Gamma_c: Option<f64>,
    Gamma: Option<f64>,
    chi: Option<f64>,
    J: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
#[allow(non_snake_case)]
struct BathFile {
    T_c: Option<f64>,
    n_h: Option<f64>,
    T_h: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SolverFile {
    steady_state_residual: Option<f64>,
    propagation_rtol: Option<f64>,
    root_find_vtol: Option<f64>,
}

/// Parses TOML config text; keys left out take their default values.
pub fn parse_config_str(text: &str) -> Result<PhotocellConfig, CliError> {
    let file: ConfigFile = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
    let n = file.donor_count.unwrap_or(3);
    if n == 0 || n > MAX_DONORS {
        return Err(CliError::Config(format!("donor_count = {n} outside 1..={MAX_DONORS}")));
    }
    let mut cfg = default_config(n).map_err(|e| CliError::Config(e.to_string()))?;

    let e = &file.energies;
    if let Some(v) = e.E_b {
        cfg.levels.ground = v;
    }
    if let Some(v) = &e.E_a {
        cfg.levels.donors = v.expand(n);
    }
    if let Some(v) = e.E_alpha {
        cfg.levels.alpha = v;
    }
    if let Some(v) = e.E_beta {
        cfg.levels.beta = v;
    }

    let r = &file.rates;
    if let Some(v) = &r.gamma_h {
        cfg.rates.hot = v.expand(n);
    }
    if let Some(v) = &r.gamma_c {
        cfg.rates.cold = v.expand(n);
    }
    if let Some(v) = r.Gamma_c {
        cfg.rates.trap = v;
    }
    if let Some(v) = r.Gamma {
        cfg.rates.load = v;
    }
    if let Some(v) = r.chi {
        cfg.rates.recombination = v;
    }
    if let Some(v) = r.J {
        cfg.rates.donor_coupling = v;
    }

    let b = &file.bath;
    if let Some(v) = b.T_c {
        cfg.baths.cold_temperature = v;
    }
    cfg.baths.hot = match (b.n_h, b.T_h) {
        (Some(_), Some(_)) => return Err(CliError::Config("bath.n_h and bath.T_h are exclusive".into())),
        (Some(n_h), None) => HotOccupation::Explicit { n_h },
        (None, Some(t_h)) => HotOccupation::FromTemperature { t_h },
        (None, None) => cfg.baths.hot,
    };

    let s = &file.solver;
    if let Some(v) = s.steady_state_residual {
        cfg.tolerances.steady_state_residual = v;
    }
    if let Some(v) = s.propagation_rtol {
        cfg.tolerances.propagation_rtol = v;
    }
    if let Some(v) = s.root_find_vtol {
        cfg.tolerances.root_find_vtol = v;
    }

    validate_config(&cfg).map_err(|v| CliError::Config(v.to_string()))?;
    Ok(cfg)
}

/// Reads and validates a config file.
pub fn parse_config(path: &Path) -> Result<PhotocellConfig, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    parse_config_str(&text).map_err(|e| match e {
        CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Donor counts from `3`, `3,6,9`, `1-9` or combinations such as `1-3,9`.
pub fn parse_donors(spec: &str) -> Result<Vec<usize>, CliError> {
    let bad = || CliError::Config(format!("invalid donor list '{spec}'"));
    let mut out = Vec::new();
    for part in spec.split(',') {
        let part = part.trim();
        if let Some((a, b)) = part.split_once('-') {
            let a: usize = a.trim().parse().map_err(|_| bad())?;
            let b: usize = b.trim().parse().map_err(|_| bad())?;
            if a > b {
                return Err(bad());
            }
            out.extend(a..=b);
        } else {
            out.push(part.parse().map_err(|_| bad())?);
        }
    }
    if let Some(&n) = out.iter().find(|&&n| n == 0 || n > MAX_DONORS) {
        return Err(CliError::Config(format!("donor count {n} outside 1..={MAX_DONORS}")));
    }
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

/// Grid from `lo:hi:count`.
pub fn parse_grid(spec: &str) -> Result<Vec<f64>, CliError> {
    let bad = || CliError::Config(format!("invalid grid '{spec}', expected lo:hi:count"));
    let parts: Vec<&str> = spec.split(':').collect();
    let [lo, hi, count] = parts.as_slice() else {
        return Err(bad());
    };
    let lo: f64 = lo.trim().parse().map_err(|_| bad())?;
    let hi: f64 = hi.trim().parse().map_err(|_| bad())?;
    let count: usize = count.trim().parse().map_err(|_| bad())?;
    log_grid(lo, hi, count).map_err(|e| CliError::Config(e.to_string()))
}

/// Everything that determines a run's outputs.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub subcommand: String,
    pub config_path: Option<PathBuf>,
    pub output_dir: PathBuf,
    /// SHA-256 over the resolved configuration.
    pub config_sha256: String,
    pub config: PhotocellConfig,
    pub donors: Vec<usize>,
    pub grid: Vec<f64>,
    pub v_target: Option<f64>,
}

impl RunManifest {
    pub fn resolve(subcommand: &str, args: &RunArgs) -> Result<Self, CliError> {
        let config = match &args.config {
            Some(p) => parse_config(p)?,
            None => default_config(3).map_err(|e| CliError::Config(e.to_string()))?,
        };
        let donors = match (&args.donors, subcommand) {
            (Some(spec), _) => parse_donors(spec)?,
            (None, "scan") => (1..=9).collect(),
            (None, _) => vec![config.donor_count()],
        };
        // Every requested N must be buildable before anything runs.
        for &n in &donors {
            config
                .with_donor_count(n)
                .map_err(|e| CliError::Config(e.to_string()))?;
        }
        let grid = match &args.grid {
            Some(spec) => parse_grid(spec)?,
            None => default_grid(),
        };
        let v_target = match subcommand {
            "scan" => Some(args.v_target.unwrap_or(1.35)),
            _ => args.v_target,
        };
        Ok(RunManifest {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            subcommand: subcommand.to_string(),
            config_path: args.config.clone(),
            output_dir: args.out.clone(),
            config_sha256: config.fingerprint(),
            config,
            donors,
            grid,
            v_target,
        })
    }

    fn config_for(&self, donors: usize) -> Result<PhotocellConfig, CliError> {
        self.config
            .with_donor_count(donors)
            .map_err(|e| CliError::Config(e.to_string()))
    }
}

/// Float with 17 significant digits; round-trips exactly.
pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        x.to_string()
    }
}

/// Pretty JSON with sorted keys and every float in [`fmt_f64`] form.
pub fn render_json(v: &Value) -> String {
    let mut out = String::new();
    render_value(v, 0, &mut out);
    out.push('\n');
    out
}

fn render_value(v: &Value, depth: usize, out: &mut String) {
    let pad = |d: usize| "  ".repeat(d);
    match v {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            if n.is_f64() {
                let x = n.as_f64().expect("f64 number");
                out.push_str(&fmt_f64(x));
            } else {
                out.push_str(&n.to_string());
            }
        }
        Value::String(s) => out.push_str(&Value::String(s.clone()).to_string()),
        Value::Array(items) => {
            if items.is_empty() {
                out.push_str("[]");
                return;
            }
            out.push_str("[\n");
            for (i, item) in items.iter().enumerate() {
                out.push_str(&pad(depth + 1));
                render_value(item, depth + 1, out);
                out.push_str(if i + 1 < items.len() { ",\n" } else { "\n" });
            }
            out.push_str(&pad(depth));
            out.push(']');
        }
        Value::Object(map) => {
            if map.is_empty() {
                out.push_str("{}");
                return;
            }
            out.push_str("{\n");
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            for (i, k) in keys.iter().enumerate() {
                out.push_str(&pad(depth + 1));
                out.push_str(&Value::String((*k).clone()).to_string());
                out.push_str(": ");
                render_value(&map[*k], depth + 1, out);
                out.push_str(if i + 1 < keys.len() { ",\n" } else { "\n" });
            }
            out.push_str(&pad(depth));
            out.push('}');
        }
    }
}

// Non-finite floats have no JSON form; they become null.
fn num(x: f64) -> Value {
    serde_json::Number::from_f64(x)
        .map(Value::Number)
        .unwrap_or(Value::Null)
}

fn to_json<T: Serialize>(x: &T) -> Value {
    serde_json::to_value(x).expect("serializable output")
}

/// Writes `contents` to `path` via a temporary file in the same directory.
pub fn write_atomic(path: &Path, contents: &str) -> Result<(), CliError> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err(dir))?;
    tmp.write_all(contents.as_bytes()).map_err(io_err(path))?;
    tmp.as_file().sync_all().map_err(io_err(path))?;
    tmp.persist(path).map_err(|e| CliError::Io {
        path: path.to_path_buf(),
        source: e.error,
    })?;
    Ok(())
}

struct Outputs {
    dir: PathBuf,
    written: Vec<PathBuf>,
}

impl Outputs {
    fn new(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        Ok(Outputs {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<(), CliError> {
        let path = self.dir.join(name);
        write_atomic(&path, contents)?;
        self.written.push(path);
        Ok(())
    }
}

pub const SWEEP_HEADER: &str = "Gamma_eV,V_volts,j_natural,j_norm,P_natural";

fn point_json(p: &OperatingPoint) -> Value {
    json!({
        "Gamma_eV": num(p.gamma),
        "V_volts": num(p.voltage),
        "j_natural": num(p.current),
        "j_norm": num(p.normalized_current),
        "P_natural": num(p.power),
    })
}

fn run_steady(m: &RunManifest, out: &mut Outputs) -> Result<(), CliError> {
    for &n in &m.donors {
        let cfg = m.config_for(n)?;
        let p = steady_state_populations(
            &rate_matrix(&cfg).map_err(ExperimentError::from)?,
            cfg.tolerances.steady_state_residual,
        )
        .map_err(|source| ExperimentError::Solver {
            gamma: cfg.rates.load,
            source,
        })?;
        let energies = cfg.levels.energies();
        let mut csv = String::from("index,state,energy_eV,population\n");
        for (k, label) in cfg.basis.labels().iter().enumerate() {
            writeln!(csv, "{k},{label},{},{}", fmt_f64(energies[k]), fmt_f64(p[k])).expect("string write");
        }
        out.write(&format!("steady_N{n}.csv"), &csv)?;
    }
    Ok(())
}

fn run_sweep(m: &RunManifest, out: &mut Outputs) -> Result<(), CliError> {
    for &n in &m.donors {
        let cfg = m.config_for(n)?;
        let sweep = jv_sweep(&cfg, &m.grid)?;
        let mut csv = String::from(SWEEP_HEADER);
        csv.push('\n');
        for p in &sweep.points {
            writeln!(
                csv,
                "{},{},{},{},{}",
                fmt_f64(p.gamma),
                fmt_f64(p.voltage),
                fmt_f64(p.current),
                fmt_f64(p.normalized_current),
                fmt_f64(p.power)
            )
            .expect("string write");
        }
        out.write(&format!("sweep_N{n}.csv"), &csv)?;
        let meta = json!({
            "donors": n,
            "config_sha256": sweep.fingerprint,
            "grid_points": m.grid.len(),
            "rows": sweep.points.len(),
            "dropped": to_json(&sweep.dropped),
            "negative_voltage_excluded": sweep.negative_voltage_excluded(),
            "V_oc": sweep.open_circuit.as_ref().and_then(|o| o.voltage()).map(num),
            "mpp": sweep.mpp.as_ref().map(|x| {
                let mut v = point_json(&x.point);
                v["at_boundary"] = Value::Bool(x.at_boundary);
                v
            }),
        });
        out.write(&format!("sweep_N{n}_meta.json"), &render_json(&meta))?;
    }
    Ok(())
}

fn run_mpp(m: &RunManifest, out: &mut Outputs) -> Result<(), CliError> {
    let mut results = Vec::new();
    for &n in &m.donors {
        let cfg = m.config_for(n)?;
        let oc = open_circuit_voltage(&cfg)?;
        let sweep = jv_sweep(&cfg, &m.grid)?;
        let mpp = max_power_point(&cfg, &sweep)?;
        let mut point = point_json(&mpp.point);
        point["at_boundary"] = Value::Bool(mpp.at_boundary);
        results.push(json!({
            "N": n,
            "V_oc": oc.voltage().map(num),
            "V_oc_zero_load": oc.exact.map(num),
            "V_oc_extrapolated": oc.extrapolated.map(num),
            "V_oc_extrapolation_spread": oc.spread.map(num),
            "V_oc_samples": oc.samples.iter().map(|(g, v)| json!([num(*g), num(*v)])).collect::<Vec<_>>(),
            "mpp": point,
        }));
    }
    out.write("mpp.json", &render_json(&json!({ "results": results })))
}

fn run_scan(m: &RunManifest, out: &mut Outputs) -> Result<(), CliError> {
    let v = m.v_target.expect("scan has a target voltage");
    let scan = donor_scan(&m.config, &m.donors, v, &m.grid)?;
    let mut csv = String::from("N,Gamma_star_eV,j_norm\n");
    for e in &scan.entries {
        writeln!(
            csv,
            "{},{},{}",
            e.donors,
            fmt_f64(e.gamma),
            fmt_f64(e.normalized_current)
        )
        .expect("string write");
    }
    out.write("scan.csv", &csv)?;
    let nums = |xs: Vec<f64>| xs.into_iter().map(num).collect::<Vec<_>>();
    let meta = json!({
        "V_volts": num(v),
        "failures": to_json(&scan.failures),
        "first_differences": nums(scan.first_differences()),
        "second_differences": nums(scan.second_differences()),
        "superlinearity_9_over_3": scan.superlinearity(3, 9).map(num),
    });
    out.write("scan_meta.json", &render_json(&meta))?;
    if scan.entries.is_empty() {
        return Err(CliError::Experiment(ExperimentError::RootNotConverged {
            target: v,
            residual: f64::NAN,
        }));
    }
    Ok(())
}

fn run_calibrate(m: &RunManifest, out: &mut Outputs) -> Result<(), CliError> {
    let donors = match m.donors.as_slice() {
        [n] => *n,
        _ => 3,
    };
    let options = CalibrationOptions {
        donors,
        grid: m.grid.clone(),
        ..CalibrationOptions::default()
    };
    let cal = calibrate_hot_occupation(&m.config, &CalibrationTargets::default(), &options)?;
    let doc = json!({
        "N": donors,
        "n_h": num(cal.best.hot_occupation),
        "objective": num(cal.best.objective),
        "V_oc": num(cal.best.open_circuit_voltage),
        "V_mpp": num(cal.best.mpp_voltage),
        "V_oc_residual": num(cal.open_circuit_residual),
        "V_mpp_residual": num(cal.mpp_residual),
        "targets": { "V_oc": num(cal.targets.open_circuit_voltage), "V_mpp": num(cal.targets.mpp_voltage) },
        "scan": cal.scan.iter().map(|s| json!({
            "n_h": num(s.hot_occupation),
            "V_oc": num(s.open_circuit_voltage),
            "V_mpp": num(s.mpp_voltage),
            "objective": num(s.objective),
        })).collect::<Vec<_>>(),
    });
    out.write("calibrate.json", &render_json(&doc))
}

/// Re-checks `P == j V` on every row of a sweep CSV; returns the row count.
pub fn audit_sweep_csv(path: &Path) -> Result<usize, CliError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut lines = text.lines();
    if lines.next() != Some(SWEEP_HEADER) {
        return Err(CliError::Audit(format!("{}: unexpected header", path.display())));
    }
    let mut rows = 0;
    for (i, line) in lines.enumerate() {
        let cols: Vec<f64> = line
            .split(',')
            .map(|c| c.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| CliError::Audit(format!("{}:{}: {e}", path.display(), i + 2)))?;
        let [_, v, j, _, p] = cols.as_slice() else {
            return Err(CliError::Audit(format!(
                "{}:{}: expected 5 columns",
                path.display(),
                i + 2
            )));
        };
        if *p != j * v {
            return Err(CliError::Audit(format!(
                "{}:{}: P = {p:e} but j V = {:e}",
                path.display(),
                i + 2,
                j * v
            )));
        }
        rows += 1;
    }
    Ok(rows)
}

/// Executes a parsed command; returns the files written.
pub fn execute(command: &Command) -> Result<Vec<PathBuf>, CliError> {
    let (name, args) = match command {
        Command::Audit { files } => {
            for f in files {
                let rows = audit_sweep_csv(f)?;
                println!("{}: {rows} rows ok", f.display());
            }
            return Ok(Vec::new());
        }
        Command::Steady(a) => ("steady", a),
        Command::Sweep(a) => ("sweep", a),
        Command::Mpp(a) => ("mpp", a),
        Command::Scan(a) => ("scan", a),
        Command::Calibrate(a) => ("calibrate", a),
    };
    let manifest = RunManifest::resolve(name, args)?;
    let mut out = Outputs::new(&manifest.output_dir)?;
    match name {
        "steady" => run_steady(&manifest, &mut out)?,
        "sweep" => run_sweep(&manifest, &mut out)?,
        "mpp" => run_mpp(&manifest, &mut out)?,
        "scan" => run_scan(&manifest, &mut out)?,
        _ => run_calibrate(&manifest, &mut out)?,
    }
    out.write("manifest.json", &render_json(&to_json(&manifest)))?;
    Ok(out.written)
}

/// Process entry point; returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::new().filter_or(LOG_ENV, "warn"))
        .format_timestamp(None)
        .try_init();
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { 0 };
        }
    };
    match execute(&cli.command) {
        Ok(_) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(parse_config_str("").unwrap(), default_config(3).unwrap());
        assert_eq!(parse_config_str("donor_count = 6").unwrap(), default_config(6).unwrap());
    }

    #[test]
    fn chi_zero_suppresses_recombination() {
        let cfg = parse_config_str("[rates]\nchi = 0.0\n").unwrap();
        assert_eq!(cfg.rates.recombination, 0.0);
    }

    #[test]
    fn negative_load_cites_invariant() {
        let err = parse_config_str("[rates]\nGamma = -1.0\n").unwrap_err();
        assert_eq!(err.exit_code(), EXIT_CONFIG);
        let msg = err.to_string();
        assert!(msg.contains("negative rate") && msg.contains("Gamma"), "{msg}");
    }

    #[test]
    fn unknown_key_rejected_with_line() {
        let msg = parse_config_str("donor_count = 3\n\n[rates]\nGama = 0.1\n")
            .unwrap_err()
            .to_string();
        assert!(msg.contains("Gama") && msg.contains("line 4"), "{msg}");
        assert!(parse_config_str("colour = 1").is_err());
    }

    #[test]
    fn arrays_and_hot_temperature() {
        let cfg = parse_config_str("donor_count = 2\n[rates]\ngamma_c = [6e-3, 5e-3]\n[bath]\nT_h = 5800.0\n").unwrap();
        assert_eq!(cfg.rates.cold, vec![6e-3, 5e-3]);
        assert_eq!(cfg.baths.hot, HotOccupation::FromTemperature { t_h: 5800.0 });
        assert!(parse_config_str("donor_count = 2\n[rates]\ngamma_c = [6e-3]\n").is_err());
        assert!(parse_config_str("[bath]\nn_h = 1e-3\nT_h = 5000.0\n").is_err());
    }

    #[test]
    fn donor_lists() {
        assert_eq!(parse_donors("3").unwrap(), vec![3]);
        assert_eq!(parse_donors("9,3,6").unwrap(), vec![3, 6, 9]);
        assert_eq!(parse_donors("1-4,9").unwrap(), vec![1, 2, 3, 4, 9]);
        assert!(parse_donors("0").is_err());
        assert!(parse_donors("17").is_err());
        assert!(parse_donors("5-2").is_err());
        assert!(parse_donors("x").is_err());
    }

    #[test]
    fn grid_specs() {
        let g = parse_grid("1e-6:1e2:9").unwrap();
        assert_eq!(g.len(), 9);
        assert!(parse_grid("1:2").is_err());
        assert!(parse_grid("-1:2:3").is_err());
    }

    #[test]
    fn float_format_round_trips() {
        for x in [0.1, 1.0 / 3.0, 6.02e23, -1.5e-300, 0.0] {
            let s = fmt_f64(x);
            assert_eq!(s.parse::<f64>().unwrap(), x);
        }
        assert_eq!(fmt_f64(0.12), "1.2000000000000000e-1");
    }

    #[test]
    fn json_rendering_is_sorted_and_precise() {
        let v = json!({"b": 0.1, "a": [1, 2.5], "c": null, "d": {}});
        let s = render_json(&v);
        assert_eq!(
            s,
            "{\n  \"a\": [\n    1,\n    2.5000000000000000e0\n  ],\n  \"b\": 1.0000000000000001e-1,\n  \"c\": null,\n  \"d\": {}\n}\n"
        );
        let back: Value = serde_json::from_str(&s).unwrap();
        assert_eq!(back["b"].as_f64(), Some(0.1));
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.txt");
        write_atomic(&p, "one").unwrap();
        write_atomic(&p, "two").unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "two");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn audit_detects_tampering() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        let (j, v) = (0.3f64, 1.2f64);
        let good = format!(
            "{SWEEP_HEADER}\n1e-3,{},{},1.0,{}\n",
            fmt_f64(v),
            fmt_f64(j),
            fmt_f64(j * v)
        );
        fs::write(&p, &good).unwrap();
        assert_eq!(audit_sweep_csv(&p).unwrap(), 1);
        fs::write(&p, format!("{SWEEP_HEADER}\n1e-3,1.2,0.3,1.0,0.37\n")).unwrap();
        assert_eq!(audit_sweep_csv(&p).unwrap_err().exit_code(), EXIT_AUDIT);
    }
}
