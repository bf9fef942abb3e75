//! Load sweeps and the derived device characteristics: open-circuit voltage,
//! maximum power point, fixed-voltage donor scans and the hot-occupation
//! calibration.
//!
//! Γ is the swept parameter. Voltage and current are both outputs of the
//! steady state, so a j–V curve is traced parametrically in Γ.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::generator::{rate_matrix, GeneratorError};
use crate::model::{ModelError, PhotocellConfig, MAX_DONORS};
use crate::observables::{voltage, ObservableError, OperatingPoint};
use crate::solver::{steady_state_populations, SolverError};

/// Populations below this make a sweep point numerically meaningless.
pub const MIN_POPULATION: f64 = 1e-30;

/// Loads at which V(Γ) is sampled for the Γ → 0 extrapolation.
pub const OPEN_CIRCUIT_SAMPLES: [f64; 3] = [1e-6, 1e-7, 1e-8];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExperimentError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Generator(#[from] GeneratorError),
    #[error("steady state at Gamma = {gamma:e} eV: {source}")]
    Solver { gamma: f64, source: SolverError },
    #[error("observables at Gamma = {gamma:e} eV: {source}")]
    Observable { gamma: f64, source: ObservableError },
    #[error("invalid load grid: {0}")]
    InvalidGrid(String),
    #[error("sweep has {0} points; at least 3 are required")]
    TooFewPoints(usize),
    #[error("open-circuit voltage undefined: {0}")]
    OpenCircuitUndefined(String),
    #[error("target voltage {target} V outside (0, V_oc = {v_oc} V)")]
    VoltageOutOfRange { target: f64, v_oc: f64 },
    #[error("target voltage {target} V is below the grid's lowest voltage {v_min} V")]
    VoltageBelowGrid { target: f64, v_min: f64 },
    #[error("V(Gamma) is not monotone; target {target} V is bracketed by {brackets:?}")]
    AmbiguousVoltage { target: f64, brackets: Vec<(f64, f64)> },
    #[error("root finding for {target} V stopped at |V - target| = {residual:e}")]
    RootNotConverged { target: f64, residual: f64 },
    #[error("donor count {0} outside 1..={MAX_DONORS}")]
    DonorRange(usize),
    #[error("calibration target {0} V outside (0, acceptor gap + 1 V)")]
    InvalidTarget(f64),
    #[error("calibration indeterminate: objective varies by only {spread:e} over the scan")]
    CalibrationIndeterminate { spread: f64 },
}

/// Failure class of an experiment error; drives CLI exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Solver,
    RootFinding,
}

impl ExperimentError {
    pub fn class(&self) -> ErrorClass {
        use ExperimentError::*;
        match self {
            Model(_) | Generator(_) | InvalidGrid(_) | DonorRange(_) | InvalidTarget(_) => ErrorClass::Config,
            Solver { .. }
            | Observable { .. }
            | TooFewPoints(_)
            | OpenCircuitUndefined(_)
            | CalibrationIndeterminate { .. } => ErrorClass::Solver,
            VoltageOutOfRange { .. } | VoltageBelowGrid { .. } | AmbiguousVoltage { .. } | RootNotConverged { .. } => {
                ErrorClass::RootFinding
            }
        }
    }
}

/// `count` log-spaced loads from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Result<Vec<f64>, ExperimentError> {
    if count == 0 {
        return Err(ExperimentError::InvalidGrid("count must be positive".into()));
    }
    if !(lo > 0.0) || !(hi >= lo) || !hi.is_finite() {
        return Err(ExperimentError::InvalidGrid(format!(
            "need 0 < lo <= hi, got {lo}:{hi}"
        )));
    }
    if count == 1 {
        return Ok(vec![lo]);
    }
    if hi == lo {
        return Err(ExperimentError::InvalidGrid("lo == hi with more than one point".into()));
    }
    let (a, b) = (lo.log10(), hi.log10());
    let step = (b - a) / (count - 1) as f64;
    let mut g: Vec<f64> = (0..count).map(|k| 10f64.powf(a + step * k as f64)).collect();
    g[0] = lo;
    g[count - 1] = hi;
    Ok(g)
}

/// Default load grid: 200 log-spaced points over [10⁻¹², 10²] eV.
pub fn default_grid() -> Vec<f64> {
    log_grid(DEFAULT_GRID_LO, DEFAULT_GRID_HI, DEFAULT_GRID_COUNT).expect("valid default grid")
}

pub const DEFAULT_GRID_LO: f64 = 1e-12;
pub const DEFAULT_GRID_HI: f64 = 1e2;
pub const DEFAULT_GRID_COUNT: usize = 200;

fn check_grid(grid: &[f64]) -> Result<(), ExperimentError> {
    if grid.is_empty() {
        return Err(ExperimentError::InvalidGrid("grid is empty".into()));
    }
    if let Some(g) = grid.iter().find(|g| !(**g > 0.0) || !g.is_finite()) {
        return Err(ExperimentError::InvalidGrid(format!("non-positive load {g}")));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(ExperimentError::InvalidGrid("loads must be strictly increasing".into()));
    }
    Ok(())
}

fn solve_point(cfg: &PhotocellConfig, gamma: f64) -> Result<OperatingPoint, ExperimentError> {
    OperatingPoint::solve(cfg, gamma).map_err(|e| match e {
        ObservableError::Generator(g) => ExperimentError::Generator(g),
        ObservableError::Solver(source) => ExperimentError::Solver { gamma, source },
        source => ExperimentError::Observable { gamma, source },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum DropReason {
    NegligiblePopulation { state: &'static str, value: f64 },
    NegativeVoltage { voltage: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DroppedPoint {
    pub gamma: f64,
    #[serde(flatten)]
    pub reason: DropReason,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub fingerprint: String,
    pub donor_count: usize,
    /// Retained points in ascending Γ.
    pub points: Vec<OperatingPoint>,
    pub dropped: Vec<DroppedPoint>,
    pub open_circuit: Option<OpenCircuit>,
    pub mpp: Option<MaxPowerPoint>,
}

impl SweepResult {
    pub fn negative_voltage_excluded(&self) -> usize {
        self.dropped
            .iter()
            .filter(|d| matches!(d.reason, DropReason::NegativeVoltage { .. }))
            .count()
    }
}

enum SweepSample {
    Kept(OperatingPoint),
    Dropped(DroppedPoint),
}

fn sample(cfg: &PhotocellConfig, gamma: f64) -> Result<SweepSample, ExperimentError> {
    let run = cfg.with_load(gamma);
    let p = steady_state_populations(&rate_matrix(&run)?, run.tolerances.steady_state_residual)
        .map_err(|source| ExperimentError::Solver { gamma, source })?;
    for (state, idx) in [("alpha", run.basis.alpha()), ("beta", run.basis.beta())] {
        if p[idx] < MIN_POPULATION {
            log::info!("dropping Gamma = {gamma:e}: p_{state} = {:e}", p[idx]);
            return Ok(SweepSample::Dropped(DroppedPoint {
                gamma,
                reason: DropReason::NegligiblePopulation { state, value: p[idx] },
            }));
        }
    }
    let op = OperatingPoint::from_populations(&run, gamma, p)
        .map_err(|source| ExperimentError::Observable { gamma, source })?;
    if op.voltage < 0.0 {
        return Ok(SweepSample::Dropped(DroppedPoint {
            gamma,
            reason: DropReason::NegativeVoltage { voltage: op.voltage },
        }));
    }
    Ok(SweepSample::Kept(op))
}

/// Steady-state operating points of `cfg` along `grid`.
///
/// Sweeps with at least three retained points also carry the open-circuit
/// and maximum-power markers.
pub fn jv_sweep(cfg: &PhotocellConfig, grid: &[f64]) -> Result<SweepResult, ExperimentError> {
    check_grid(grid)?;
    let samples: Vec<SweepSample> = grid.par_iter().map(|&g| sample(cfg, g)).collect::<Result<_, _>>()?;
    let mut points = Vec::new();
    let mut dropped = Vec::new();
    for s in samples {
        match s {
            SweepSample::Kept(p) => points.push(p),
            SweepSample::Dropped(d) => dropped.push(d),
        }
    }
    let (open_circuit, mpp) = if points.len() >= 3 {
        (open_circuit_voltage(cfg).ok(), max_power_point_of(cfg, &points).ok())
    } else {
        (None, None)
    };
    Ok(SweepResult {
        fingerprint: cfg.fingerprint(),
        donor_count: cfg.donor_count(),
        points,
        dropped,
        open_circuit,
        mpp,
    })
}

/// Open-circuit voltage, the Γ → 0⁺ limit of V(Γ).
///
/// The steady state is continuous in Γ, so whenever the zero-load chain
/// still has a unique steady state the limit is evaluated there directly.
/// The samples at [`OPEN_CIRCUIT_SAMPLES`] and their Richardson extrapolant
/// are kept as a diagnostic and as the fallback when the direct value is
/// undefined.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OpenCircuit {
    /// V at Γ = 0.
    pub exact: Option<f64>,
    /// (Γ, V) at the extrapolation loads, ascending Γ.
    pub samples: Vec<(f64, f64)>,
    /// Richardson extrapolant of the samples; absent when they are not monotone.
    pub extrapolated: Option<f64>,
    /// Difference between the last two Richardson levels.
    pub spread: Option<f64>,
}

impl OpenCircuit {
    pub fn voltage(&self) -> Option<f64> {
        self.exact.or(self.extrapolated)
    }
}

fn richardson(samples: &[(f64, f64)]) -> (Option<f64>, Option<f64>) {
    // samples ascending in Γ with ratio 10.
    let v: Vec<f64> = samples.iter().map(|s| s.1).collect();
    if v.len() < 2 {
        return (None, None);
    }
    let increasing = v.windows(2).all(|w| w[0] > w[1]);
    let decreasing = v.windows(2).all(|w| w[0] < w[1]);
    if !(increasing || decreasing) {
        return (None, None);
    }
    // first-order error in Γ: R = V(h) + (V(h) − V(10h)) / 9, then second order.
    let level1: Vec<f64> = v.windows(2).map(|w| w[0] + (w[0] - w[1]) / 9.0).collect();
    if level1.len() == 1 {
        return (Some(level1[0]), None);
    }
    let level2 = level1[0] + (level1[0] - level1[1]) / 99.0;
    (Some(level2), Some((level2 - level1[0]).abs()))
}

pub fn open_circuit_voltage(cfg: &PhotocellConfig) -> Result<OpenCircuit, ExperimentError> {
    let exact = match solve_point(cfg, 0.0) {
        Ok(op) => Some(op.voltage),
        Err(ExperimentError::Solver { .. }) | Err(ExperimentError::Observable { .. }) => None,
        Err(e) => return Err(e),
    };
    let mut samples = Vec::new();
    for &g in OPEN_CIRCUIT_SAMPLES.iter().rev() {
        if let Ok(op) = solve_point(cfg, g) {
            samples.push((g, op.voltage));
        }
    }
    let (extrapolated, spread) = richardson(&samples);
    let oc = OpenCircuit {
        exact,
        samples,
        extrapolated,
        spread,
    };
    if oc.voltage().is_none() {
        return Err(ExperimentError::OpenCircuitUndefined(format!(
            "zero-load state undefined and samples {:?} not extrapolable",
            oc.samples
        )));
    }
    Ok(oc)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MaxPowerPoint {
    pub point: OperatingPoint,
    /// The grid maximum sits at the first or last point; the grid is too narrow.
    pub at_boundary: bool,
}

fn golden_max<F: FnMut(f64) -> f64>(mut lo: f64, mut hi: f64, tol: f64, mut f: F) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    while hi - lo > tol {
        if f1 >= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = f(x2);
        }
    }
    if f1 >= f2 {
        x1
    } else {
        x2
    }
}

/// Grid maximum of P refined by golden-section search in log Γ between the
/// neighbouring grid points.
pub fn max_power_point(cfg: &PhotocellConfig, sweep: &SweepResult) -> Result<MaxPowerPoint, ExperimentError> {
    max_power_point_of(cfg, &sweep.points)
}

fn max_power_point_of(cfg: &PhotocellConfig, points: &[OperatingPoint]) -> Result<MaxPowerPoint, ExperimentError> {
    if points.len() < 3 {
        return Err(ExperimentError::TooFewPoints(points.len()));
    }
    let mut k = 0;
    for (i, p) in points.iter().enumerate() {
        if p.power > points[k].power {
            k = i;
        }
    }
    if k == 0 || k == points.len() - 1 {
        log::warn!(
            "maximum power at grid boundary (Gamma = {:e} eV); widen the grid",
            points[k].gamma
        );
        return Ok(MaxPowerPoint {
            point: points[k].clone(),
            at_boundary: true,
        });
    }
    let lo = points[k - 1].gamma.ln();
    let hi = points[k + 1].gamma.ln();
    let power_at = |x: f64| solve_point(cfg, x.exp()).map(|p| p.power).unwrap_or(f64::NEG_INFINITY);
    let best = golden_max(lo, hi, 1e-9, power_at);
    let refined = solve_point(cfg, best.exp())?;
    let point = if refined.power >= points[k].power {
        refined
    } else {
        points[k].clone()
    };
    Ok(MaxPowerPoint {
        point,
        at_boundary: false,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct VoltageRoot {
    pub gamma: f64,
    pub point: OperatingPoint,
}

/// Load Γ* with `|V(Γ*) − target| ≤ root_find_vtol`.
///
/// Brackets the target on `grid` (with Γ = 0 at V_oc prepended), then
/// bisects in log Γ. V(Γ) is checked for monotonicity on the grid first;
/// when it is not monotone every bracket is enumerated and more than one is
/// an error.
pub fn gamma_for_voltage(cfg: &PhotocellConfig, target: f64, grid: &[f64]) -> Result<VoltageRoot, ExperimentError> {
    check_grid(grid)?;
    let oc = open_circuit_voltage(cfg)?;
    let v_oc = oc
        .voltage()
        .ok_or_else(|| ExperimentError::OpenCircuitUndefined("no zero-load voltage".into()))?;
    if !(target > 0.0) || target >= v_oc {
        return Err(ExperimentError::VoltageOutOfRange { target, v_oc });
    }

    let mut curve: Vec<(f64, f64)> = vec![(0.0, v_oc)];
    for &g in grid {
        let p = match solve_point(cfg, g) {
            Ok(p) => p,
            // Undefined voltage at huge loads: the curve ends here.
            Err(ExperimentError::Observable { .. }) => break,
            Err(e) => return Err(e),
        };
        if p.voltage == target {
            return Ok(VoltageRoot { gamma: g, point: p });
        }
        curve.push((g, p.voltage));
    }

    let monotone = curve.windows(2).all(|w| w[1].1 < w[0].1);
    let brackets: Vec<(f64, f64)> = curve
        .windows(2)
        .filter(|w| (w[0].1 - target) * (w[1].1 - target) < 0.0)
        .map(|w| (w[0].0, w[1].0))
        .collect();
    if !monotone {
        log::warn!("V(Gamma) not monotone on the grid; enumerating brackets");
        if brackets.len() > 1 {
            return Err(ExperimentError::AmbiguousVoltage { target, brackets });
        }
    }
    let Some(&(mut lo, mut hi)) = brackets.first() else {
        let v_min = curve.last().map(|c| c.1).unwrap_or(v_oc);
        return Err(ExperimentError::VoltageBelowGrid { target, v_min });
    };

    let vtol = cfg.tolerances.root_find_vtol;
    let v_at = |g: f64| solve_point(cfg, g);
    if lo == 0.0 {
        // Walk down from the first grid point until V rises above target.
        let mut g = hi / 10.0;
        loop {
            let p = v_at(g)?;
            if p.voltage == target {
                return Ok(VoltageRoot { gamma: g, point: p });
            }
            if p.voltage > target {
                lo = g;
                break;
            }
            hi = g;
            g /= 10.0;
            if g < f64::MIN_POSITIVE {
                return Err(ExperimentError::RootNotConverged {
                    target,
                    residual: (p.voltage - target).abs(),
                });
            }
        }
    }

    let (mut a, mut b) = (lo.ln(), hi.ln());
    let mut best: Option<OperatingPoint> = None;
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        let p = v_at(mid.exp())?;
        let err = (p.voltage - target).abs();
        if best.as_ref().is_none_or(|q| err < (q.voltage - target).abs()) {
            best = Some(p.clone());
        }
        if p.voltage > target {
            a = mid;
        } else {
            b = mid;
        }
        if b - a < 1e-13 && err <= vtol {
            break;
        }
    }
    let best = best.expect("at least one bisection step");
    let residual = (best.voltage - target).abs();
    if residual > vtol {
        return Err(ExperimentError::RootNotConverged { target, residual });
    }
    Ok(VoltageRoot {
        gamma: best.gamma,
        point: best,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanEntry {
    pub donors: usize,
    pub gamma: f64,
    pub voltage: f64,
    pub normalized_current: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanFailure {
    pub donors: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DonorScan {
    pub voltage: f64,
    /// Successful entries in ascending N.
    pub entries: Vec<ScanEntry>,
    pub failures: Vec<ScanFailure>,
}

impl DonorScan {
    pub fn currents(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.normalized_current).collect()
    }

    /// `j(N+1) − j(N)` over consecutive successful entries.
    pub fn first_differences(&self) -> Vec<f64> {
        self.currents().windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn second_differences(&self) -> Vec<f64> {
        self.first_differences().windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// `(j(large)/j(small)) / (large/small)`; above 1 means superlinear growth.
    pub fn superlinearity(&self, small: usize, large: usize) -> Option<f64> {
        let j = |n| {
            self.entries
                .iter()
                .find(|e| e.donors == n)
                .map(|e| e.normalized_current)
        };
        Some((j(large)? / j(small)?) / (large as f64 / small as f64))
    }
}

/// Normalized current at fixed voltage for each donor count.
///
/// Per-N failures are recorded and the scan continues. Results are ordered
/// by N regardless of evaluation order.
pub fn donor_scan(
    template: &PhotocellConfig,
    donors: &[usize],
    voltage_fixed: f64,
    grid: &[f64],
) -> Result<DonorScan, ExperimentError> {
    if let Some(&n) = donors.iter().find(|&&n| n == 0 || n > MAX_DONORS) {
        return Err(ExperimentError::DonorRange(n));
    }
    check_grid(grid)?;
    let mut sorted = donors.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let results: Vec<(usize, Result<VoltageRoot, ExperimentError>)> = sorted
        .par_iter()
        .map(|&n| {
            let r = template
                .with_donor_count(n)
                .map_err(ExperimentError::from)
                .and_then(|cfg| gamma_for_voltage(&cfg, voltage_fixed, grid));
            (n, r)
        })
        .collect();
    let mut entries = Vec::new();
    let mut failures = Vec::new();
    for (n, r) in results {
        match r {
            Ok(root) => entries.push(ScanEntry {
                donors: n,
                gamma: root.gamma,
                voltage: root.point.voltage,
                normalized_current: root.point.normalized_current,
            }),
            Err(e) => {
                log::warn!("donor scan N = {n}: {e}");
                failures.push(ScanFailure {
                    donors: n,
                    error: e.to_string(),
                })
            }
        }
    }
    Ok(DonorScan {
        voltage: voltage_fixed,
        entries,
        failures,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CalibrationTargets {
    pub open_circuit_voltage: f64,
    pub mpp_voltage: f64,
}

impl Default for CalibrationTargets {
    fn default() -> Self {
        CalibrationTargets {
            open_circuit_voltage: 1.67,
            mpp_voltage: 1.35,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationOptions {
    pub occupation_lo: f64,
    pub occupation_hi: f64,
    pub candidates: usize,
    /// Donor count the objective is evaluated at.
    pub donors: usize,
    pub grid: Vec<f64>,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        CalibrationOptions {
            occupation_lo: 1e-6,
            occupation_hi: 1e2,
            candidates: 161,
            donors: 3,
            grid: default_grid(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationSample {
    pub hot_occupation: f64,
    pub open_circuit_voltage: f64,
    pub mpp_voltage: f64,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Calibration {
    pub targets: CalibrationTargets,
    pub best: CalibrationSample,
    /// `V_oc − target` at the optimum.
    pub open_circuit_residual: f64,
    /// `V_MPP − target` at the optimum.
    pub mpp_residual: f64,
    pub scan: Vec<CalibrationSample>,
}

/// Objective `(V_oc − t_oc)² + (V_MPP − t_mpp)²` at one hot occupation.
pub fn calibration_objective(
    template: &PhotocellConfig,
    hot_occupation: f64,
    targets: &CalibrationTargets,
    grid: &[f64],
) -> Result<CalibrationSample, ExperimentError> {
    let cfg = template.with_hot_occupation(hot_occupation);
    let oc = open_circuit_voltage(&cfg)?;
    let v_oc = oc
        .voltage()
        .ok_or_else(|| ExperimentError::OpenCircuitUndefined("calibration candidate".into()))?;
    let sweep = jv_sweep(&cfg, grid)?;
    let mpp = max_power_point(&cfg, &sweep)?;
    let v_mpp = mpp.point.voltage;
    Ok(CalibrationSample {
        hot_occupation,
        open_circuit_voltage: v_oc,
        mpp_voltage: v_mpp,
        objective: (v_oc - targets.open_circuit_voltage).powi(2) + (v_mpp - targets.mpp_voltage).powi(2),
    })
}

/// Log-spaced scan of the hot occupation, refined by golden-section search
/// around the best candidate.
pub fn calibrate_hot_occupation(
    template: &PhotocellConfig,
    targets: &CalibrationTargets,
    options: &CalibrationOptions,
) -> Result<Calibration, ExperimentError> {
    let upper = template.levels.acceptor_gap() + 1.0;
    for t in [targets.open_circuit_voltage, targets.mpp_voltage] {
        if !(t > 0.0 && t < upper) {
            return Err(ExperimentError::InvalidTarget(t));
        }
    }
    let cfg = template.with_donor_count(options.donors)?;
    let occupations = log_grid(options.occupation_lo, options.occupation_hi, options.candidates)?;
    let scan: Vec<CalibrationSample> = occupations
        .par_iter()
        .map(|&n_h| {
            calibration_objective(&cfg, n_h, targets, &options.grid).unwrap_or_else(|e| {
                log::info!("calibration candidate n_h = {n_h:e} failed: {e}");
                CalibrationSample {
                    hot_occupation: n_h,
                    open_circuit_voltage: f64::NAN,
                    mpp_voltage: f64::NAN,
                    objective: f64::INFINITY,
                }
            })
        })
        .collect();

    let finite: Vec<f64> = scan.iter().map(|s| s.objective).filter(|o| o.is_finite()).collect();
    let min = finite.iter().copied().fold(f64::INFINITY, f64::min);
    let max = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if finite.is_empty() || max - min < 1e-4 {
        return Err(ExperimentError::CalibrationIndeterminate {
            spread: if finite.is_empty() { 0.0 } else { max - min },
        });
    }
    let k = scan
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.objective.total_cmp(&b.1.objective))
        .map(|(i, _)| i)
        .expect("non-empty scan");

    let mut best = scan[k].clone();
    if k > 0 && k + 1 < scan.len() {
        let lo = scan[k - 1].hot_occupation.ln();
        let hi = scan[k + 1].hot_occupation.ln();
        let x = golden_max(lo, hi, 1e-8, |x| {
            calibration_objective(&cfg, x.exp(), targets, &options.grid)
                .map(|s| -s.objective)
                .unwrap_or(f64::NEG_INFINITY)
        });
        if let Ok(refined) = calibration_objective(&cfg, x.exp(), targets, &options.grid) {
            if refined.objective <= best.objective {
                best = refined;
            }
        }
    }
    Ok(Calibration {
        targets: *targets,
        open_circuit_residual: best.open_circuit_voltage - targets.open_circuit_voltage,
        mpp_residual: best.mpp_voltage - targets.mpp_voltage,
        best,
        scan,
    })
}

/// Voltage of solved populations; exposed for reload audits.
pub fn voltage_of(cfg: &PhotocellConfig, point: &OperatingPoint) -> Result<f64, ObservableError> {
    voltage(
        &point.populations,
        cfg.basis.alpha(),
        cfg.basis.beta(),
        &cfg.levels,
        cfg.baths.cold_temperature,
    )
}
