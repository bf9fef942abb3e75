//! Hamiltonian, incoherent jump channels, the Pauli rate matrix on
//! populations and the full Lindblad superoperator.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::Serialize;
use thiserror::Error;

use crate::model::{ModelError, PhotocellConfig, Violations};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeneratorError {
    #[error(transparent)]
    Invalid(#[from] Violations),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("donor coupling J = {0} eV is out of scope; only J = 0 is supported")]
    CoupledDonors(f64),
    #[error("channel {source_state} -> {target} out of range for dimension {dimension}")]
    IndexOutOfRange {
        source_state: usize,
        target: usize,
        dimension: usize,
    },
    #[error("channel {0} -> {0} is a self-transition")]
    SelfTransition(usize),
    #[error("channel {source_state} -> {target} has invalid rate {rate}")]
    InvalidRate {
        source_state: usize,
        target: usize,
        rate: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelKind {
    HotAbsorb,
    HotEmit,
    ColdTransferDown,
    ColdTransferUp,
    TrapDecay,
    TrapExcite,
    Work,
    Recombination,
}

/// Incoherent transition `source -> target` with jump operator `|target⟩⟨source|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct JumpChannel {
    pub source: usize,
    pub target: usize,
    pub rate: f64,
    pub kind: ChannelKind,
}

fn check_config(cfg: &PhotocellConfig) -> Result<(), GeneratorError> {
    if cfg.rates.donor_coupling != 0.0 {
        return Err(GeneratorError::CoupledDonors(cfg.rates.donor_coupling));
    }
    crate::model::validate_config(cfg)?;
    Ok(())
}

/// Diagonal Hamiltonian with the level energies in basis order.
pub fn hamiltonian(cfg: &PhotocellConfig) -> Result<DMatrix<f64>, GeneratorError> {
    check_config(cfg)?;
    let e = cfg.levels.energies();
    Ok(DMatrix::from_diagonal(&nalgebra::DVector::from_vec(e)))
}

/// All `4N + 4` channels: per donor the hot pair and the cold transfer pair,
/// then the trap pair, work and recombination.
pub fn jump_channels(cfg: &PhotocellConfig) -> Result<Vec<JumpChannel>, GeneratorError> {
    check_config(cfg)?;
    let basis = &cfg.basis;
    let lv = &cfg.levels;
    let r = &cfg.rates;
    let b = basis.ground();
    let alpha = basis.alpha();
    let beta = basis.beta();
    let ch = |source, target, rate, kind| JumpChannel {
        source,
        target,
        rate,
        kind,
    };

    let mut out = Vec::with_capacity(4 * basis.donor_count() + 4);
    for i in 1..=basis.donor_count() {
        let a = basis.donor(i);
        let n_h = cfg.hot_occupation(i)?;
        let n_c = cfg.baths.cold_occupation(lv.donors[i - 1] - lv.alpha)?;
        let g_h = r.hot[i - 1];
        let g_c = r.cold[i - 1];
        out.push(ch(b, a, g_h * n_h, ChannelKind::HotAbsorb));
        out.push(ch(a, b, g_h * (n_h + 1.0), ChannelKind::HotEmit));
        out.push(ch(a, alpha, g_c * (n_c + 1.0), ChannelKind::ColdTransferDown));
        out.push(ch(alpha, a, g_c * n_c, ChannelKind::ColdTransferUp));
    }
    let n_trap = cfg.baths.cold_occupation(lv.beta - lv.ground)?;
    out.push(ch(beta, b, r.trap * (n_trap + 1.0), ChannelKind::TrapDecay));
    out.push(ch(b, beta, r.trap * n_trap, ChannelKind::TrapExcite));
    out.push(ch(alpha, beta, r.load, ChannelKind::Work));
    // Recombination empties the charge-separated state back to the ground state.
    out.push(ch(alpha, b, r.recombination * r.load, ChannelKind::Recombination));
    Ok(out)
}

/// Classical generator on populations: `M[t][s]` is the total rate `s -> t`
/// and every column sums to zero.
#[derive(Debug, Clone, PartialEq)]
pub struct RateMatrix {
    matrix: DMatrix<f64>,
}

impl RateMatrix {
    pub fn dimension(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// Total rate `source -> target` (off-diagonal entry).
    pub fn rate(&self, source: usize, target: usize) -> f64 {
        self.matrix[(target, source)]
    }

    /// Smallest strictly positive off-diagonal rate.
    pub fn min_positive_rate(&self) -> Option<f64> {
        off_diagonal(&self.matrix).filter(|&r| r > 0.0).min_by(f64::total_cmp)
    }

    /// Largest escape rate `−M[s][s]`.
    pub fn max_escape_rate(&self) -> f64 {
        (0..self.dimension()).map(|s| -self.matrix[(s, s)]).fold(0.0, f64::max)
    }

    /// Builds from raw entries, re-deriving the diagonal from the columns.
    pub fn from_off_diagonal(mut matrix: DMatrix<f64>) -> Result<Self, GeneratorError> {
        let d = matrix.nrows();
        assert_eq!(d, matrix.ncols(), "rate matrix must be square");
        for s in 0..d {
            let mut out = 0.0;
            for t in 0..d {
                if t != s {
                    let r = matrix[(t, s)];
                    if !(r >= 0.0) || !r.is_finite() {
                        return Err(GeneratorError::InvalidRate {
                            source_state: s,
                            target: t,
                            rate: r,
                        });
                    }
                    out += r;
                }
            }
            matrix[(s, s)] = -out;
        }
        Ok(RateMatrix { matrix })
    }
}

fn off_diagonal(m: &DMatrix<f64>) -> impl Iterator<Item = f64> + '_ {
    let d = m.nrows();
    (0..d).flat_map(move |s| (0..d).filter(move |&t| t != s).map(move |t| m[(t, s)]))
}

/// Accumulates `channels` into a `d × d` rate matrix; duplicates add up.
pub fn build_rate_matrix(channels: &[JumpChannel], d: usize) -> Result<RateMatrix, GeneratorError> {
    let mut m = DMatrix::zeros(d, d);
    for c in channels {
        if c.source >= d || c.target >= d {
            return Err(GeneratorError::IndexOutOfRange {
                source_state: c.source,
                target: c.target,
                dimension: d,
            });
        }
        if c.source == c.target {
            return Err(GeneratorError::SelfTransition(c.source));
        }
        if !(c.rate >= 0.0) || !c.rate.is_finite() {
            return Err(GeneratorError::InvalidRate {
                source_state: c.source,
                target: c.target,
                rate: c.rate,
            });
        }
        m[(c.target, c.source)] += c.rate;
    }
    RateMatrix::from_off_diagonal(m)
}

/// Rate matrix of a configuration.
pub fn rate_matrix(cfg: &PhotocellConfig) -> Result<RateMatrix, GeneratorError> {
    build_rate_matrix(&jump_channels(cfg)?, cfg.dimension())
}

/// Lindblad superoperator acting on the column-major vectorization of ρ,
/// `vec(ρ)[j + k d] = ρ[j][k]`.
///
/// The commutator of a diagonal Hamiltonian is purely imaginary on the
/// coherences, so the matrix is stored complex.
#[derive(Debug, Clone, PartialEq)]
pub struct Liouvillian {
    dim: usize,
    matrix: DMatrix<Complex64>,
    min_rate: Option<f64>,
}

impl Liouvillian {
    /// Hilbert-space dimension `d`; the superoperator is `d² × d²`.
    pub fn dimension(&self) -> usize {
        self.dim
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.matrix
    }

    pub fn min_positive_rate(&self) -> Option<f64> {
        self.min_rate
    }

    /// Position of `ρ[j][k]` in the vectorization.
    pub fn vec_index(&self, j: usize, k: usize) -> usize {
        j + k * self.dim
    }

    /// The block acting between diagonal entries, `d × d`.
    pub fn population_block(&self) -> DMatrix<Complex64> {
        let d = self.dim;
        DMatrix::from_fn(d, d, |t, s| self.matrix[(t * (d + 1), s * (d + 1))])
    }

    pub fn apply(&self, rho: &DMatrix<Complex64>) -> DMatrix<Complex64> {
        let d = self.dim;
        let v = nalgebra::DVector::from_column_slice(rho.as_slice());
        let out = &self.matrix * v;
        DMatrix::from_column_slice(d, d, out.as_slice())
    }
}

fn projector(d: usize, target: usize, source: usize) -> DMatrix<Complex64> {
    let mut a = DMatrix::zeros(d, d);
    a[(target, source)] = Complex64::new(1.0, 0.0);
    a
}

/// Full superoperator `−i[H, ·] + Σ_channels r (A ρ A† − ½{A†A, ρ})`,
/// assembled from Kronecker products of the operator matrices.
pub fn build_liouvillian(cfg: &PhotocellConfig) -> Result<Liouvillian, GeneratorError> {
    let h = hamiltonian(cfg)?.map(|x| Complex64::new(x, 0.0));
    let channels = jump_channels(cfg)?;
    let d = cfg.dimension();
    let id = DMatrix::<Complex64>::identity(d, d);
    let minus_i = Complex64::new(0.0, -1.0);

    // vec(A X B) = (Bᵀ ⊗ A) vec(X)
    let mut l = (id.kronecker(&h) - h.transpose().kronecker(&id)) * minus_i;
    for c in &channels {
        if c.rate == 0.0 {
            continue;
        }
        let a = projector(d, c.target, c.source);
        let ad = a.adjoint();
        let ada = &ad * &a;
        let r = Complex64::new(c.rate, 0.0);
        let half = Complex64::new(0.5, 0.0);
        let term = a.conjugate().kronecker(&a) - id.kronecker(&ada) * half - ada.transpose().kronecker(&id) * half;
        l += term * r;
    }
    let min_rate = channels
        .iter()
        .map(|c| c.rate)
        .filter(|&r| r > 0.0)
        .min_by(f64::total_cmp);
    Ok(Liouvillian {
        dim: d,
        matrix: l,
        min_rate,
    })
}
