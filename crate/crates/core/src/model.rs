//! Domain types for the N-donor photocell: the state basis, level energies,
//! transition rates, bath description and the bundled configuration.
//!
//! Units follow ħ = 1 with every energy and rate expressed in eV. One unit
//! of time is therefore ħ/(1 eV) ≈ 6.582×10⁻¹⁶ s.

use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Boltzmann constant (CODATA 2018) in eV/K.
pub const BOLTZMANN_EV_PER_K: f64 = 8.617333262e-5;

/// Hot-bath photon occupation selected by `calibrate_hot_occupation` for
/// the default level scheme (N = 3, V_oc target 1.67 V, MPP target 1.35 V).
///
/// Regenerate with `photocell calibrate`. At this value V_oc = 1.654 V and
/// V_MPP = 1.492 V; no single occupation reaches both targets.
pub const CALIBRATED_HOT_OCCUPATION: f64 = 3.5875033754115375e-3;

// Default level scheme, measured from the ground state.
pub const DEFAULT_DONOR_ENERGY: f64 = 1.8;
pub const DEFAULT_ALPHA_ENERGY: f64 = 1.6;
pub const DEFAULT_BETA_ENERGY: f64 = 0.2;

// Default bare rates (eV).
pub const DEFAULT_HOT_RATE: f64 = 0.62e-6;
pub const DEFAULT_COLD_RATE: f64 = 6.0e-3;
pub const DEFAULT_TRAP_RATE: f64 = 0.025;
pub const DEFAULT_LOAD_RATE: f64 = 0.12;
pub const DEFAULT_RECOMBINATION_FRACTION: f64 = 0.2;

pub const DEFAULT_COLD_TEMPERATURE: f64 = 300.0;

/// Largest donor count accepted by the experiment drivers.
pub const MAX_DONORS: usize = 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid donor count {0}: at least one donor is required")]
    InvalidDonorCount(usize),
    #[error("planck occupation requires a positive energy gap, got {0} eV")]
    NonPositiveGap(f64),
    #[error("planck occupation requires a positive temperature, got {0} K")]
    NonPositiveTemperature(f64),
    #[error("donor {donor} out of range for a basis with {count} donors")]
    DonorOutOfRange { donor: usize, count: usize },
    #[error("cannot resize heterogeneous per-donor {0} from {1} to {2} donors")]
    HeterogeneousResize(&'static str, usize, usize),
}

/// Mean thermal occupation `1/(exp(ΔE/k_B T) − 1)` of a bosonic mode.
///
/// Large `ΔE/k_B T` underflows cleanly to 0.
pub fn planck_occupation(delta_e: f64, temperature: f64) -> Result<f64, ModelError> {
    if !(delta_e > 0.0) {
        return Err(ModelError::NonPositiveGap(delta_e));
    }
    if !(temperature > 0.0) {
        return Err(ModelError::NonPositiveTemperature(temperature));
    }
    Ok(1.0 / (delta_e / (BOLTZMANN_EV_PER_K * temperature)).exp_m1())
}

/// A basis state of the photocell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StateLabel {
    /// Ground state `b`.
    Ground,
    /// Excited state `a_i` of donor `i` (1-based).
    Donor(usize),
    /// Charge-separated acceptor state `alpha`.
    Alpha,
    /// Semi-stable post-work state `beta`.
    Beta,
}

impl fmt::Display for StateLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StateLabel::Ground => write!(f, "b"),
            StateLabel::Donor(i) => write!(f, "a_{i}"),
            StateLabel::Alpha => write!(f, "alpha"),
            StateLabel::Beta => write!(f, "beta"),
        }
    }
}

/// Ordered basis `[b, a_1 … a_N, alpha, beta]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "usize", into = "usize")]
pub struct StateBasis {
    donors: usize,
}

impl TryFrom<usize> for StateBasis {
    type Error = ModelError;

    fn try_from(value: usize) -> Result<Self, Self::Error> {
        build_basis(value)
    }
}

impl From<StateBasis> for usize {
    fn from(basis: StateBasis) -> usize {
        basis.donors
    }
}

pub fn build_basis(donors: usize) -> Result<StateBasis, ModelError> {
    if donors == 0 {
        return Err(ModelError::InvalidDonorCount(donors));
    }
    Ok(StateBasis { donors })
}

impl StateBasis {
    pub fn donor_count(&self) -> usize {
        self.donors
    }

    pub fn dimension(&self) -> usize {
        self.donors + 3
    }

    pub fn ground(&self) -> usize {
        0
    }

    /// Index of donor `i` (1-based).
    pub fn donor(&self, i: usize) -> usize {
        debug_assert!(i >= 1 && i <= self.donors);
        i
    }

    pub fn alpha(&self) -> usize {
        self.donors + 1
    }

    pub fn beta(&self) -> usize {
        self.donors + 2
    }

    pub fn label(&self, index: usize) -> Option<StateLabel> {
        match index {
            0 => Some(StateLabel::Ground),
            i if i <= self.donors => Some(StateLabel::Donor(i)),
            i if i == self.donors + 1 => Some(StateLabel::Alpha),
            i if i == self.donors + 2 => Some(StateLabel::Beta),
            _ => None,
        }
    }

    pub fn index(&self, label: StateLabel) -> Option<usize> {
        match label {
            StateLabel::Ground => Some(0),
            StateLabel::Donor(i) if i >= 1 && i <= self.donors => Some(i),
            StateLabel::Donor(_) => None,
            StateLabel::Alpha => Some(self.alpha()),
            StateLabel::Beta => Some(self.beta()),
        }
    }

    pub fn labels(&self) -> Vec<StateLabel> {
        (0..self.dimension()).filter_map(|k| self.label(k)).collect()
    }
}

/// Absolute level energies in eV with the ground state as reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelScheme {
    pub ground: f64,
    pub donors: Vec<f64>,
    pub alpha: f64,
    pub beta: f64,
}

impl LevelScheme {
    pub fn uniform(donors: usize) -> Self {
        LevelScheme {
            ground: 0.0,
            donors: vec![DEFAULT_DONOR_ENERGY; donors],
            alpha: DEFAULT_ALPHA_ENERGY,
            beta: DEFAULT_BETA_ENERGY,
        }
    }

    /// Energy of each basis state in basis order.
    pub fn energies(&self) -> Vec<f64> {
        let mut e = Vec::with_capacity(self.donors.len() + 3);
        e.push(self.ground);
        e.extend_from_slice(&self.donors);
        e.push(self.alpha);
        e.push(self.beta);
        e
    }

    /// Acceptor gap `E_alpha − E_beta`, the zero-load voltage scale.
    pub fn acceptor_gap(&self) -> f64 {
        self.alpha - self.beta
    }
}

/// Bare transition rates in eV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateSet {
    /// Hot-bath coupling `gamma_h` of each donor.
    pub hot: Vec<f64>,
    /// Cold-bath donor→acceptor transfer rate `gamma_c` of each donor.
    pub cold: Vec<f64>,
    /// Cold-bath decay `Gamma_c` of beta back to the ground state.
    pub trap: f64,
    /// Load rate `Gamma` for alpha → beta.
    pub load: f64,
    /// Recombination fraction `chi`; alpha → b proceeds at `chi * Gamma`.
    pub recombination: f64,
    /// Donor–donor coupling `J`. Only `J = 0` is modeled.
    pub donor_coupling: f64,
}

impl RateSet {
    pub fn uniform(donors: usize) -> Self {
        RateSet {
            hot: vec![DEFAULT_HOT_RATE; donors],
            cold: vec![DEFAULT_COLD_RATE; donors],
            trap: DEFAULT_TRAP_RATE,
            load: DEFAULT_LOAD_RATE,
            recombination: DEFAULT_RECOMBINATION_FRACTION,
            donor_coupling: 0.0,
        }
    }

    /// Rate used to normalize currents, `j / (2 gamma_h)`.
    ///
    /// For identical donors this is the common hot rate.
    pub fn reference_hot_rate(&self) -> f64 {
        self.hot.iter().sum::<f64>() / self.hot.len() as f64
    }
}

/// How the hot-bath occupation is specified.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HotOccupation {
    Explicit { n_h: f64 },
    FromTemperature { t_h: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BathSpec {
    /// Cold (phonon) bath temperature in K.
    pub cold_temperature: f64,
    pub hot: HotOccupation,
}

impl BathSpec {
    /// Occupation of the hot mode resonant with a donor gap.
    pub fn hot_occupation(&self, gap: f64) -> Result<f64, ModelError> {
        match self.hot {
            HotOccupation::Explicit { n_h } => Ok(n_h),
            HotOccupation::FromTemperature { t_h } => planck_occupation(gap, t_h),
        }
    }

    /// Occupation of the cold mode resonant with `gap`.
    pub fn cold_occupation(&self, gap: f64) -> Result<f64, ModelError> {
        planck_occupation(gap, self.cold_temperature)
    }

    /// `k_B T_c` in eV.
    pub fn cold_thermal_energy(&self) -> f64 {
        BOLTZMANN_EV_PER_K * self.cold_temperature
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverTolerances {
    /// Bound on `‖M p‖_∞` for a steady state.
    pub steady_state_residual: f64,
    /// Local relative error per accepted propagation step.
    pub propagation_rtol: f64,
    /// Voltage tolerance (V) for Γ root-finding.
    pub root_find_vtol: f64,
}

impl Default for SolverTolerances {
    fn default() -> Self {
        SolverTolerances {
            steady_state_residual: 1e-12,
            propagation_rtol: 1e-8,
            root_find_vtol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhotocellConfig {
    pub basis: StateBasis,
    pub levels: LevelScheme,
    pub rates: RateSet,
    pub baths: BathSpec,
    pub tolerances: SolverTolerances,
}

pub fn default_config(donors: usize) -> Result<PhotocellConfig, ModelError> {
    let basis = build_basis(donors)?;
    Ok(PhotocellConfig {
        basis,
        levels: LevelScheme::uniform(donors),
        rates: RateSet::uniform(donors),
        baths: BathSpec {
            cold_temperature: DEFAULT_COLD_TEMPERATURE,
            hot: HotOccupation::Explicit {
                n_h: CALIBRATED_HOT_OCCUPATION,
            },
        },
        tolerances: SolverTolerances::default(),
    })
}

impl PhotocellConfig {
    pub fn donor_count(&self) -> usize {
        self.basis.donor_count()
    }

    pub fn dimension(&self) -> usize {
        self.basis.dimension()
    }

    /// SHA-256 of the canonical JSON serialization, hex encoded.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }

    /// Copy of this configuration with a different load rate Γ.
    pub fn with_load(&self, load: f64) -> Self {
        let mut cfg = self.clone();
        cfg.rates.load = load;
        cfg
    }

    /// Copy with an explicit hot occupation.
    pub fn with_hot_occupation(&self, n_h: f64) -> Self {
        let mut cfg = self.clone();
        cfg.baths.hot = HotOccupation::Explicit { n_h };
        cfg
    }

    /// Copy with `donors` identical donors built from donor 1's parameters.
    ///
    /// Fails when the per-donor arrays are not uniform and the count changes.
    pub fn with_donor_count(&self, donors: usize) -> Result<Self, ModelError> {
        let basis = build_basis(donors)?;
        let n = self.donor_count();
        if donors == n {
            return Ok(self.clone());
        }
        let resize = |name: &'static str, v: &[f64]| -> Result<Vec<f64>, ModelError> {
            match v.first() {
                Some(&first) if v.iter().all(|&x| x == first) => Ok(vec![first; donors]),
                _ => Err(ModelError::HeterogeneousResize(name, n, donors)),
            }
        };
        let mut cfg = self.clone();
        cfg.basis = basis;
        cfg.levels.donors = resize("energies", &self.levels.donors)?;
        cfg.rates.hot = resize("gamma_h", &self.rates.hot)?;
        cfg.rates.cold = resize("gamma_c", &self.rates.cold)?;
        Ok(cfg)
    }

    /// Hot occupation of donor `i` (1-based).
    pub fn hot_occupation(&self, i: usize) -> Result<f64, ModelError> {
        let gap = self.donor_gap(i)?;
        self.baths.hot_occupation(gap)
    }

    /// Gap `E_a_i − E_b` of donor `i` (1-based).
    pub fn donor_gap(&self, i: usize) -> Result<f64, ModelError> {
        self.levels
            .donors
            .get(i.wrapping_sub(1))
            .map(|e| e - self.levels.ground)
            .ok_or(ModelError::DonorOutOfRange {
                donor: i,
                count: self.donor_count(),
            })
    }

    /// Every violated invariant; empty when the configuration is valid.
    pub fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut push = |field: &str, message: String| {
            out.push(Violation {
                field: field.to_string(),
                message,
            })
        };

        let n = self.basis.donor_count();
        let basis_ok = n >= 1
            && (0..self.basis.dimension()).all(|k| self.basis.label(k).and_then(|l| self.basis.index(l)) == Some(k));
        if !basis_ok {
            push("basis", format!("basis index map is not a bijection for N = {n}"));
        }
        for (name, len) in [
            ("energies.E_a", self.levels.donors.len()),
            ("rates.gamma_h", self.rates.hot.len()),
            ("rates.gamma_c", self.rates.cold.len()),
        ] {
            if len != n {
                push(name, format!("{name} has {len} entries but the basis has {n} donors"));
            }
        }

        let lv = &self.levels;
        let all_energies = lv.energies();
        if all_energies.iter().any(|e| !e.is_finite()) {
            push("energies", "level energies must be finite".to_string());
        }
        for (i, &ea) in lv.donors.iter().enumerate() {
            if !(ea > lv.alpha) {
                push(
                    "energies.E_a",
                    format!(
                        "energy ordering violated: E_a_{} = {ea} eV must exceed E_alpha = {} eV",
                        i + 1,
                        lv.alpha
                    ),
                );
            }
        }
        if !(lv.alpha > lv.beta) {
            push(
                "energies.E_alpha",
                format!(
                    "energy ordering violated: E_alpha = {} eV must exceed E_beta = {} eV",
                    lv.alpha, lv.beta
                ),
            );
        }
        if !(lv.beta > lv.ground) {
            push(
                "energies.E_beta",
                format!(
                    "energy ordering violated: E_beta = {} eV must exceed E_b = {} eV",
                    lv.beta, lv.ground
                ),
            );
        }

        let r = &self.rates;
        let mut check_rate = |name: &str, value: f64| {
            if !(value >= 0.0) || !value.is_finite() {
                push(&format!("rates.{name}"), format!("negative rate {name} = {value}"));
            }
        };
        for &v in &r.hot {
            check_rate("gamma_h", v);
        }
        for &v in &r.cold {
            check_rate("gamma_c", v);
        }
        check_rate("Gamma_c", r.trap);
        check_rate("Gamma", r.load);
        check_rate("chi", r.recombination);
        if r.donor_coupling != 0.0 {
            push(
                "rates.J",
                format!(
                    "donor coupling out of scope: J = {} eV, only uncoupled donors (J = 0) are modeled",
                    r.donor_coupling
                ),
            );
        }
        if !r.hot.is_empty() && !(r.reference_hot_rate() > 0.0) {
            push(
                "rates.gamma_h",
                "current normalization requires gamma_h > 0".to_string(),
            );
        }

        let b = &self.baths;
        if !(b.cold_temperature > 0.0) || !b.cold_temperature.is_finite() {
            push(
                "bath.T_c",
                format!("cold temperature must be positive, got {} K", b.cold_temperature),
            );
        }
        match b.hot {
            HotOccupation::Explicit { n_h } => {
                if !(n_h >= 0.0) || !n_h.is_finite() {
                    push("bath.n_h", format!("hot occupation must be non-negative, got {n_h}"));
                }
            }
            HotOccupation::FromTemperature { t_h } => {
                if !(t_h > 0.0) || !t_h.is_finite() {
                    push("bath.T_h", format!("hot temperature must be positive, got {t_h} K"));
                }
            }
        }

        let t = &self.tolerances;
        for (name, v) in [
            ("solver.steady_state_residual", t.steady_state_residual),
            ("solver.propagation_rtol", t.propagation_rtol),
            ("solver.root_find_vtol", t.root_find_vtol),
        ] {
            if !(v > 0.0) {
                push(name, format!("tolerance {name} must be positive, got {v}"));
            }
        }
        out
    }
}

/// Checks every invariant of `cfg`, collecting all violations.
pub fn validate_config(cfg: &PhotocellConfig) -> Result<(), Violations> {
    let v = cfg.violations();
    if v.is_empty() {
        Ok(())
    } else {
        Err(Violations(v))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub field: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub struct Violations(pub Vec<Violation>);

impl fmt::Display for Violations {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid configuration")?;
        for v in &self.0 {
            write!(f, "\n  - {v}")?;
        }
        Ok(())
    }
}

impl Violations {
    pub fn iter(&self) -> impl Iterator<Item = &Violation> {
        self.0.iter()
    }

    pub fn mentions(&self, needle: &str) -> bool {
        self.0.iter().any(|v| v.message.contains(needle))
    }
}
