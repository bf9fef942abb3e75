#![allow(clippy::needless_range_loop)]

use nalgebra::{ComplexField, DMatrix, DVector};
use num_complex::Complex64;

use super::{max_modulus, DensityMatrix, Generator, PopulationVector, SolverError};
use crate::generator::{Liouvillian, RateMatrix};

/// Condition estimate above which the bordered solve falls back to an SVD.
const BORDERED_CONDITION_LIMIT: f64 = 1e12;

/// Closed communicating classes of the chain, each sorted, ordered by their
/// smallest member. The steady state is unique iff there is exactly one.
pub fn recurrent_classes(m: &RateMatrix) -> Vec<Vec<usize>> {
    let d = m.dimension();
    let mut reach = vec![vec![false; d]; d];
    for s in 0..d {
        reach[s][s] = true;
        for t in 0..d {
            if t != s && m.rate(s, t) > 0.0 {
                reach[s][t] = true;
            }
        }
    }
    for k in 0..d {
        for i in 0..d {
            if reach[i][k] {
                for j in 0..d {
                    if reach[k][j] {
                        reach[i][j] = true;
                    }
                }
            }
        }
    }
    let recurrent: Vec<bool> = (0..d).map(|i| (0..d).all(|j| !reach[i][j] || reach[j][i])).collect();
    let mut assigned = vec![false; d];
    let mut classes = Vec::new();
    for i in 0..d {
        if recurrent[i] && !assigned[i] {
            let class: Vec<usize> = (i..d).filter(|&j| reach[i][j] && reach[j][i]).collect();
            for &j in &class {
                assigned[j] = true;
            }
            classes.push(class);
        }
    }
    classes
}

/// Stationary populations of a rate matrix via Grassmann–Taksar–Heyman state
/// reduction.
///
/// The reduction is subtraction-free, so every component, including ones
/// many orders of magnitude below the largest, carries full relative accuracy.
pub fn steady_state_populations(m: &RateMatrix, residual_tol: f64) -> Result<PopulationVector, SolverError> {
    let d = m.dimension();
    let classes = recurrent_classes(m);
    if classes.len() != 1 {
        return Err(SolverError::DegenerateSteadyState { classes });
    }
    if d == 1 {
        return Ok(PopulationVector::pure(1, 0));
    }

    // Put a recurrent state first; every state then reaches index 0.
    let first = classes[0][0];
    let mut order: Vec<usize> = vec![first];
    order.extend((0..d).filter(|&k| k != first));

    // r[i][j]: rate i -> j in the permuted ordering.
    let mut r: Vec<Vec<f64>> = order
        .iter()
        .map(|&i| order.iter().map(|&j| if i == j { 0.0 } else { m.rate(i, j) }).collect())
        .collect();

    for k in (1..d).rev() {
        let s: f64 = r[k][..k].iter().sum();
        if !(s > 0.0) || !s.is_finite() {
            return Err(SolverError::Singular(format!(
                "state reduction broke down at state {} (escape rate {s:e})",
                order[k]
            )));
        }
        for i in 0..k {
            r[i][k] /= s;
        }
        for i in 0..k {
            let rik = r[i][k];
            if rik == 0.0 {
                continue;
            }
            for j in 0..k {
                if j != i {
                    r[i][j] += rik * r[k][j];
                }
            }
        }
    }

    let mut pi = vec![0.0; d];
    pi[0] = 1.0;
    for k in 1..d {
        pi[k] = (0..k).map(|i| pi[i] * r[i][k]).sum();
    }
    let mut p = vec![0.0; d];
    for (pos, &state) in order.iter().enumerate() {
        p[state] = pi[pos];
    }
    let p = PopulationVector::from_raw(p)?;
    check_residual(m.matrix(), &p.to_dvector(), residual_tol)?;
    Ok(p)
}

fn check_residual<S: ComplexField<RealField = f64> + Copy>(
    m: &DMatrix<S>,
    x: &DVector<S>,
    tolerance: f64,
) -> Result<(), SolverError> {
    let residual = max_modulus(&(m * x));
    if residual <= tolerance {
        Ok(())
    } else {
        Err(SolverError::Residual { residual, tolerance })
    }
}

fn norm1<S: ComplexField<RealField = f64> + Copy>(a: &DMatrix<S>) -> f64 {
    a.column_iter()
        .map(|c| c.iter().map(|x| x.modulus()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Null vector of `g`, normalized so that `w · x = 1`, from the bordered
/// system with row 0 replaced by the trace weights `w`.
///
/// Falls back to the smallest right singular vector when the bordered matrix
/// is singular or its 1-norm condition estimate exceeds 10¹².
pub fn bordered_null_vector<S: ComplexField<RealField = f64> + Copy>(
    g: &DMatrix<S>,
    weights: &DVector<S>,
) -> Result<DVector<S>, SolverError> {
    let n = g.nrows();
    let mut a = g.clone();
    for j in 0..n {
        a[(0, j)] = weights[j];
    }
    let mut rhs = DVector::zeros(n);
    rhs[0] = S::from_real(1.0);

    let lu = a.clone().lu();
    let direct = lu.try_inverse().and_then(|inv| {
        let cond = norm1(&a) * norm1(&inv);
        (cond.is_finite() && cond <= BORDERED_CONDITION_LIMIT).then(|| inv * &rhs)
    });
    let x = match direct {
        Some(x) => x,
        None => {
            log::debug!("bordered system ill-conditioned, using SVD null vector");
            let svd = g.clone().svd(false, true);
            let v_t = svd
                .v_t
                .ok_or_else(|| SolverError::Singular("SVD did not converge".into()))?;
            let (idx, _) = svd
                .singular_values
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.total_cmp(b.1))
                .ok_or_else(|| SolverError::Singular("empty generator".into()))?;
            let v: DVector<S> = v_t.row(idx).adjoint();
            let tr = weights.dot(&v);
            if tr.modulus() == 0.0 {
                return Err(SolverError::Singular("null vector has zero trace".into()));
            }
            v.map(|x| x / tr)
        }
    };
    Ok(x)
}

/// Stationary populations from the bordered linear system.
///
/// Accurate in absolute terms to rounding; tiny components lose relative
/// accuracy, which [`steady_state_populations`] does not.
pub fn steady_state_bordered(m: &RateMatrix, residual_tol: f64) -> Result<PopulationVector, SolverError> {
    let classes = recurrent_classes(m);
    if classes.len() != 1 {
        return Err(SolverError::DegenerateSteadyState { classes });
    }
    let x = bordered_null_vector(m.matrix(), &m.trace_weights())?;
    let p = PopulationVector::from_raw(x.iter().copied().collect())?;
    check_residual(m.matrix(), &p.to_dvector(), residual_tol)?;
    Ok(p)
}

/// Steady state of the full superoperator, as a density matrix.
pub fn liouvillian_steady_state(l: &Liouvillian, residual_tol: f64) -> Result<DensityMatrix, SolverError> {
    let x = bordered_null_vector(l.matrix(), &l.trace_weights())?;
    check_residual(l.matrix(), &x, residual_tol)?;
    let d = l.dimension();
    let mut rho = DMatrix::from_column_slice(d, d, x.as_slice());
    // Symmetrize away rounding.
    rho = (&rho + rho.adjoint()) * Complex64::new(0.5, 0.0);
    Ok(DensityMatrix::new(rho))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::{build_liouvillian, build_rate_matrix, rate_matrix, ChannelKind, JumpChannel};
    use crate::model::{default_config, planck_occupation, HotOccupation, BOLTZMANN_EV_PER_K};

    fn ch(source: usize, target: usize, rate: f64) -> JumpChannel {
        JumpChannel {
            source,
            target,
            rate,
            kind: ChannelKind::TrapDecay,
        }
    }

    #[test]
    fn two_state_thermal_pair() {
        let n = planck_occupation(0.2, 300.0).unwrap();
        // b <-> beta only.
        let m = build_rate_matrix(&[ch(1, 0, 0.025 * (n + 1.0)), ch(0, 1, 0.025 * n)], 2).unwrap();
        let p = steady_state_populations(&m, 1e-12).unwrap();
        assert!((p[1] / p[0] - n / (n + 1.0)).abs() < 1e-15);
    }

    #[test]
    fn gibbs_state_when_all_baths_share_cold_temperature() {
        for n in [1, 3, 9] {
            let mut cfg = default_config(n).unwrap().with_load(0.0);
            cfg.rates.recombination = 0.0;
            cfg.baths.hot = HotOccupation::Explicit {
                n_h: planck_occupation(1.8, 300.0).unwrap(),
            };
            let p = steady_state_populations(&rate_matrix(&cfg).unwrap(), 1e-12).unwrap();
            let kt = BOLTZMANN_EV_PER_K * 300.0;
            let w: Vec<f64> = cfg.levels.energies().iter().map(|e| (-e / kt).exp()).collect();
            let z: f64 = w.iter().sum();
            for k in 0..cfg.dimension() {
                let g = w[k] / z;
                assert!((p[k] - g).abs() < 1e-9);
                assert!((p[k] / g - 1.0).abs() < 1e-12, "N={n} k={k} {} vs {g}", p[k]);
            }
        }
    }

    #[test]
    fn degenerate_chain_names_classes() {
        // 0 <-> 1 and 2 <-> 3 disconnected.
        let m = build_rate_matrix(&[ch(0, 1, 1.0), ch(1, 0, 1.0), ch(2, 3, 1.0), ch(3, 2, 2.0)], 4).unwrap();
        match steady_state_populations(&m, 1e-12) {
            Err(SolverError::DegenerateSteadyState { classes }) => {
                assert_eq!(classes, vec![vec![0, 1], vec![2, 3]]);
            }
            other => panic!("{other:?}"),
        }
        let mut cfg = default_config(2).unwrap().with_load(0.0).with_hot_occupation(0.0);
        cfg.baths.cold_temperature = 1.0;
        let err = steady_state_populations(&rate_matrix(&cfg).unwrap(), 1e-12).unwrap_err();
        assert!(matches!(err, SolverError::DegenerateSteadyState { .. }), "{err}");
    }

    #[test]
    fn transient_states_get_zero_weight() {
        // 0 -> 1, 1 <-> 2: state 0 is transient and not first in the recurrent class.
        let m = build_rate_matrix(&[ch(0, 1, 1.0), ch(1, 2, 1.0), ch(2, 1, 3.0)], 3).unwrap();
        let p = steady_state_populations(&m, 1e-12).unwrap();
        assert_eq!(p[0], 0.0);
        assert!((p[1] - 0.75).abs() < 1e-15 && (p[2] - 0.25).abs() < 1e-15);
        let single = build_rate_matrix(&[ch(0, 1, 0.4)], 2).unwrap();
        assert_eq!(
            steady_state_populations(&single, 1e-12).unwrap().as_slice(),
            &[0.0, 1.0]
        );
    }

    #[test]
    fn bordered_agrees_with_state_reduction() {
        for n in [1, 3, 6, 9] {
            for load in [1e-6, 1e-2, 0.12, 10.0] {
                let m = rate_matrix(&default_config(n).unwrap().with_load(load)).unwrap();
                let a = steady_state_populations(&m, 1e-12).unwrap();
                let b = steady_state_bordered(&m, 1e-12).unwrap();
                assert!(a.max_abs_diff(&b) < 1e-13, "N={n} G={load}");
            }
        }
    }

    #[test]
    fn liouvillian_steady_state_is_diagonal() {
        for n in [1, 3] {
            let cfg = default_config(n).unwrap();
            let rho = liouvillian_steady_state(&build_liouvillian(&cfg).unwrap(), 1e-12).unwrap();
            let p = steady_state_populations(&rate_matrix(&cfg).unwrap(), 1e-12).unwrap();
            let diag = rho.populations();
            for k in 0..cfg.dimension() {
                assert!((diag[k] - p[k]).abs() < 1e-10);
            }
            assert!(rho.max_coherence() < 1e-10);
            assert!((rho.trace().re - 1.0).abs() < 1e-10);
            assert!(rho.min_eigenvalue() > -1e-9);
        }
    }
}
