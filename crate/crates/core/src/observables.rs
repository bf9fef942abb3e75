//! Device observables derived from steady-state populations.
//!
//! The elementary charge is carried as a unit rather than a number: currents
//! are `Γ p_alpha` in units of e·eV/ħ and voltages are numerically equal to
//! the corresponding energies in eV.

use serde::Serialize;
use thiserror::Error;

use crate::generator::{rate_matrix, GeneratorError};
use crate::model::{LevelScheme, PhotocellConfig, BOLTZMANN_EV_PER_K};
use crate::solver::{steady_state_populations, PopulationVector, SolverError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ObservableError {
    #[error("voltage undefined: population {state} is {value:e}")]
    UndefinedVoltage { state: &'static str, value: f64 },
    #[error(transparent)]
    Generator(#[from] GeneratorError),
    #[error(transparent)]
    Solver(#[from] SolverError),
}

/// Current `Γ p_alpha` (units of e·eV/ħ).
pub fn current(p: &PopulationVector, alpha: usize, load: f64) -> f64 {
    load * p[alpha]
}

/// Dimensionless current `j / (2 gamma_h)`.
pub fn normalized_current(current: f64, hot_rate: f64) -> f64 {
    current / (2.0 * hot_rate)
}

/// Photovoltage `(E_alpha − E_beta + k_B T_c ln(p_alpha / p_beta)) / e` in volts.
pub fn voltage(
    p: &PopulationVector,
    alpha: usize,
    beta: usize,
    levels: &LevelScheme,
    cold_temperature: f64,
) -> Result<f64, ObservableError> {
    let (pa, pb) = (p[alpha], p[beta]);
    if !(pa > 0.0) {
        return Err(ObservableError::UndefinedVoltage {
            state: "alpha",
            value: pa,
        });
    }
    if !(pb > 0.0) {
        return Err(ObservableError::UndefinedVoltage {
            state: "beta",
            value: pb,
        });
    }
    Ok(levels.acceptor_gap() + BOLTZMANN_EV_PER_K * cold_temperature * (pa / pb).ln())
}

pub fn power(current: f64, voltage: f64) -> f64 {
    current * voltage
}

/// One point of a device characteristic.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OperatingPoint {
    /// Load rate Γ (eV).
    pub gamma: f64,
    /// Voltage (V).
    pub voltage: f64,
    /// Current, e·eV/ħ.
    pub current: f64,
    /// `j / (2 gamma_h)`.
    pub normalized_current: f64,
    /// `j V`, eV²/ħ.
    pub power: f64,
    #[serde(skip)]
    pub populations: PopulationVector,
}

impl OperatingPoint {
    /// Observables of already-solved populations at load `gamma`.
    pub fn from_populations(
        cfg: &PhotocellConfig,
        gamma: f64,
        populations: PopulationVector,
    ) -> Result<Self, ObservableError> {
        let alpha = cfg.basis.alpha();
        let beta = cfg.basis.beta();
        let v = voltage(&populations, alpha, beta, &cfg.levels, cfg.baths.cold_temperature)?;
        let j = current(&populations, alpha, gamma);
        Ok(OperatingPoint {
            gamma,
            voltage: v,
            current: j,
            normalized_current: normalized_current(j, cfg.rates.reference_hot_rate()),
            power: power(j, v),
            populations,
        })
    }

    /// Solves the steady state of `cfg` at load `gamma`.
    pub fn solve(cfg: &PhotocellConfig, gamma: f64) -> Result<Self, ObservableError> {
        let cfg = cfg.with_load(gamma);
        let p = steady_state_populations(&rate_matrix(&cfg)?, cfg.tolerances.steady_state_residual)?;
        Self::from_populations(&cfg, gamma, p)
    }

    /// Recomputes the observables from the stored populations.
    pub fn recompute(&self, cfg: &PhotocellConfig) -> Result<Self, ObservableError> {
        Self::from_populations(cfg, self.gamma, self.populations.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{default_config, planck_occupation, HotOccupation};

    fn pops(values: &[f64]) -> PopulationVector {
        PopulationVector::from_raw(values.to_vec()).unwrap()
    }

    #[test]
    fn current_cases() {
        let p = pops(&[0.9, 0.05, 0.05]);
        assert_eq!(current(&p, 1, 0.0), 0.0);
        let empty = pops(&[0.5, 0.0, 0.5]);
        assert_eq!(current(&empty, 1, 0.12), 0.0);
        let j = current(&p, 1, 0.12);
        assert!((j - 6e-3).abs() < 1e-17);
        // 6e-3 / (2 * 0.62e-6) = 4838.709677419355
        assert!((normalized_current(j, 0.62e-6) - 4_838.709_677_419_355).abs() < 1e-9);
    }

    #[test]
    fn current_is_linear() {
        let p = pops(&[0.7, 0.2, 0.1]);
        let j1 = current(&p, 1, 0.3);
        assert!((current(&p, 1, 0.6) - 2.0 * j1).abs() < 1e-16);
        let q = pops(&[0.5, 0.4, 0.1]);
        assert!((current(&q, 1, 0.3) - 2.0 * j1).abs() < 1e-16);
    }

    #[test]
    fn voltage_cases() {
        let lv = LevelScheme::uniform(1);
        let equal = pops(&[0.4, 0.1, 0.25, 0.25]);
        assert!((voltage(&equal, 2, 3, &lv, 300.0).unwrap() - 1.4).abs() < 1e-15);

        let e10 = 10f64.exp();
        let ratio = pops(&[0.5, 0.0, 0.5 * e10 / (1.0 + e10), 0.5 / (1.0 + e10)]);
        let v = voltage(&ratio, 2, 3, &lv, 300.0).unwrap();
        // 1.4 + 10 k_B 300 = 1.65851999786
        assert!((v - 1.658_519_997_86).abs() < 1e-10, "{v}");

        let dark = pops(&[0.5, 0.0, 0.0, 0.5]);
        assert!(matches!(
            voltage(&dark, 2, 3, &lv, 300.0),
            Err(ObservableError::UndefinedVoltage { state: "alpha", .. })
        ));
        let no_beta = pops(&[0.5, 0.0, 0.5, 0.0]);
        assert!(matches!(
            voltage(&no_beta, 2, 3, &lv, 300.0),
            Err(ObservableError::UndefinedVoltage { state: "beta", .. })
        ));
    }

    #[test]
    fn voltage_depends_only_on_ratio() {
        let lv = LevelScheme::uniform(1);
        let a = pops(&[0.97, 0.0, 0.02, 0.01]);
        let b = pops(&[0.7, 0.0, 0.2, 0.1]);
        let va = voltage(&a, 2, 3, &lv, 300.0).unwrap();
        let vb = voltage(&b, 2, 3, &lv, 300.0).unwrap();
        assert!((va - vb).abs() < 1e-14);
    }

    #[test]
    fn power_cases() {
        assert_eq!(power(0.0, 1.4), 0.0);
        assert_eq!(power(3.0, 0.0), 0.0);
        assert!((power(2.0, 1.35) - 2.7).abs() < 1e-15);
    }

    #[test]
    fn gibbs_state_has_zero_voltage() {
        let mut cfg = default_config(3).unwrap();
        cfg.rates.recombination = 0.0;
        cfg.baths.hot = HotOccupation::Explicit {
            n_h: planck_occupation(1.8, 300.0).unwrap(),
        };
        let op = OperatingPoint::solve(&cfg, 0.0).unwrap();
        assert!(op.voltage.abs() < 1e-9, "{}", op.voltage);
        assert_eq!(op.current, 0.0);
    }

    #[test]
    fn operating_point_identity() {
        let cfg = default_config(3).unwrap();
        let op = OperatingPoint::solve(&cfg, 1e-6).unwrap();
        assert_eq!(op.power, op.current * op.voltage);
        assert_eq!(op.recompute(&cfg.with_load(1e-6)).unwrap(), op);
    }
}
