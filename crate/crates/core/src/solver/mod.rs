//! Steady states and transient dynamics.
//!
//! Two independent routes reach the same steady state: a direct null-space
//! computation on the generator ([`steady_state_populations`]) and time
//! propagation until the state stops changing ([`steady_state_by_propagation`]).

mod propagate;
mod steady;

pub use propagate::{propagate, propagate_observed, steady_state_by_propagation, PropagationOptions, PropagationStats};
pub use steady::{
    bordered_null_vector, liouvillian_steady_state, recurrent_classes, steady_state_bordered, steady_state_populations,
};

use nalgebra::{ComplexField, DMatrix, DVector};
use num_complex::Complex64;
use thiserror::Error;

use crate::generator::{Liouvillian, RateMatrix};

/// Output populations below zero but above this are clamped to zero.
pub const CLAMP_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("steady state is not unique: {} disconnected recurrent classes {classes:?}", classes.len())]
    DegenerateSteadyState { classes: Vec<Vec<usize>> },
    #[error("steady-state residual {residual:e} exceeds tolerance {tolerance:e}")]
    Residual { residual: f64, tolerance: f64 },
    #[error("population {index} = {value:e} is negative beyond the clamp tolerance")]
    NegativePopulation { index: usize, value: f64 },
    #[error("linear solve failed: {0}")]
    Singular(String),
    #[error("integration step size underflow at t = {t_reached:e}")]
    StepSizeUnderflow { t_reached: f64 },
    #[error("integration exceeded {steps} steps at t = {t_reached:e}")]
    StepBudgetExceeded { steps: usize, t_reached: f64 },
    #[error("no convergence within horizon {horizon:e}: residual {residual:e}")]
    NonConvergence { horizon: f64, residual: f64 },
    #[error("initial state has trace {0}, expected 1")]
    InvalidInitialState(f64),
    #[error("state dimension {got} does not match generator dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// Basis-ordered probabilities summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationVector(Vec<f64>);

impl PopulationVector {
    /// Clamps entries in `[−CLAMP_TOLERANCE, 0)` to zero and renormalizes.
    pub fn from_raw(mut values: Vec<f64>) -> Result<Self, SolverError> {
        let mut clamped = 0.0f64;
        for (index, v) in values.iter_mut().enumerate() {
            if !v.is_finite() || *v < -CLAMP_TOLERANCE {
                return Err(SolverError::NegativePopulation { index, value: *v });
            }
            if *v < 0.0 {
                clamped = clamped.max(-*v);
                *v = 0.0;
            }
        }
        if clamped > 0.0 {
            log::debug!("clamped negative populations, largest magnitude {clamped:e}");
        }
        let total: f64 = values.iter().sum();
        if !(total > 0.0) {
            return Err(SolverError::Singular(format!("populations sum to {total}")));
        }
        values.iter_mut().for_each(|v| *v /= total);
        Ok(PopulationVector(values))
    }

    /// All population in state `index`.
    pub fn pure(dimension: usize, index: usize) -> Self {
        let mut v = vec![0.0; dimension];
        v[index] = 1.0;
        PopulationVector(v)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn to_dvector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.0)
    }

    pub fn max_abs_diff(&self, other: &PopulationVector) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl std::ops::Index<usize> for PopulationVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Hermitian, unit-trace density matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix(DMatrix<Complex64>);

impl DensityMatrix {
    pub fn new(matrix: DMatrix<Complex64>) -> Self {
        DensityMatrix(matrix)
    }

    pub fn pure(dimension: usize, index: usize) -> Self {
        let mut m = DMatrix::zeros(dimension, dimension);
        m[(index, index)] = Complex64::new(1.0, 0.0);
        DensityMatrix(m)
    }

    pub fn from_populations(p: &PopulationVector) -> Self {
        let v = DVector::from_iterator(p.len(), p.as_slice().iter().map(|&x| Complex64::new(x, 0.0)));
        DensityMatrix(DMatrix::from_diagonal(&v))
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.0
    }

    pub fn dimension(&self) -> usize {
        self.0.nrows()
    }

    pub fn trace(&self) -> Complex64 {
        self.0.trace()
    }

    pub fn populations(&self) -> Vec<f64> {
        self.0.diagonal().iter().map(|z| z.re).collect()
    }

    /// Largest `|ρ[j][k]|` with `j ≠ k`.
    pub fn max_coherence(&self) -> f64 {
        let d = self.dimension();
        let mut m = 0.0f64;
        for k in 0..d {
            for j in 0..d {
                if j != k {
                    m = m.max(self.0[(j, k)].norm());
                }
            }
        }
        m
    }

    /// Largest deviation `|ρ − ρ†|`.
    pub fn hermiticity_error(&self) -> f64 {
        (&self.0 - self.0.adjoint())
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let herm = (&self.0 + self.0.adjoint()) * Complex64::new(0.5, 0.0);
        herm.symmetric_eigenvalues()
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }
}

/// A linear generator `dx/dt = G x` on some vectorized state.
pub trait Generator {
    type Scalar: ComplexField<RealField = f64> + Copy;

    fn matrix(&self) -> &DMatrix<Self::Scalar>;

    /// Number of basis states (populations).
    fn basis_dimension(&self) -> usize;

    /// Vectorized state with all population in `index`.
    fn pure_state(&self, index: usize) -> DVector<Self::Scalar>;

    fn trace(&self, x: &DVector<Self::Scalar>) -> Self::Scalar;

    fn populations(&self, x: &DVector<Self::Scalar>) -> Vec<f64>;

    /// Weights `w` with `trace(x) = w · x`.
    fn trace_weights(&self) -> DVector<Self::Scalar>;

    fn min_positive_rate(&self) -> Option<f64>;
}

impl Generator for RateMatrix {
    type Scalar = f64;

    fn matrix(&self) -> &DMatrix<f64> {
        RateMatrix::matrix(self)
    }

    fn basis_dimension(&self) -> usize {
        self.dimension()
    }

    fn pure_state(&self, index: usize) -> DVector<f64> {
        let mut v = DVector::zeros(self.dimension());
        v[index] = 1.0;
        v
    }

    fn trace(&self, x: &DVector<f64>) -> f64 {
        x.sum()
    }

    fn populations(&self, x: &DVector<f64>) -> Vec<f64> {
        x.iter().copied().collect()
    }

    fn trace_weights(&self) -> DVector<f64> {
        DVector::from_element(self.dimension(), 1.0)
    }

    fn min_positive_rate(&self) -> Option<f64> {
        RateMatrix::min_positive_rate(self)
    }
}

impl Generator for Liouvillian {
    type Scalar = Complex64;

    fn matrix(&self) -> &DMatrix<Complex64> {
        Liouvillian::matrix(self)
    }

    fn basis_dimension(&self) -> usize {
        self.dimension()
    }

    fn pure_state(&self, index: usize) -> DVector<Complex64> {
        let d = self.dimension();
        let mut v = DVector::zeros(d * d);
        v[self.vec_index(index, index)] = Complex64::new(1.0, 0.0);
        v
    }

    fn trace(&self, x: &DVector<Complex64>) -> Complex64 {
        (0..self.dimension()).map(|k| x[self.vec_index(k, k)]).sum()
    }

    fn populations(&self, x: &DVector<Complex64>) -> Vec<f64> {
        (0..self.dimension()).map(|k| x[self.vec_index(k, k)].re).collect()
    }

    fn trace_weights(&self) -> DVector<Complex64> {
        let d = self.dimension();
        let mut w = DVector::zeros(d * d);
        for k in 0..d {
            w[self.vec_index(k, k)] = Complex64::new(1.0, 0.0);
        }
        w
    }

    fn min_positive_rate(&self) -> Option<f64> {
        Liouvillian::min_positive_rate(self)
    }
}

pub(crate) fn max_modulus<S: ComplexField<RealField = f64> + Copy>(v: &DVector<S>) -> f64 {
    v.iter().map(|x| x.modulus()).fold(0.0, f64::max)
}
