use nalgebra::{ComplexField, DMatrix, DVector};

use super::{max_modulus, Generator, PopulationVector, SolverError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PropagationOptions {
    /// Local relative error per accepted step.
    pub rtol: f64,
    /// Absolute error floor added to the error scale.
    pub atol: f64,
    pub max_steps: usize,
    /// Initial step; chosen from the generator norm when `None`.
    pub initial_step: Option<f64>,
}

impl Default for PropagationOptions {
    fn default() -> Self {
        PropagationOptions {
            rtol: 1e-8,
            atol: 1e-12,
            max_steps: 2_000_000,
            initial_step: None,
        }
    }
}

impl PropagationOptions {
    pub fn with_rtol(rtol: f64) -> Self {
        PropagationOptions {
            rtol,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PropagationStats {
    pub accepted: usize,
    pub rejected: usize,
}

// Dormand–Prince 5(4) tableau. The generator is autonomous, so the
// stage abscissae are not needed.
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
// Fifth-order weights minus embedded fourth-order weights.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

fn operator_norm_inf<S: ComplexField<RealField = f64> + Copy>(m: &DMatrix<S>) -> f64 {
    m.row_iter()
        .map(|r| r.iter().map(|x| x.modulus()).sum::<f64>())
        .fold(0.0, f64::max)
}

fn scale<S: ComplexField<RealField = f64> + Copy>(v: &DVector<S>, s: f64) -> DVector<S> {
    v.map(|x| x * S::from_real(s))
}

/// Integrates `dx/dt = G x` from `t = 0` to `t_final` with the adaptive
/// Dormand–Prince 5(4) pair.
pub fn propagate<G: Generator>(
    generator: &G,
    initial: &DVector<G::Scalar>,
    t_final: f64,
    options: &PropagationOptions,
) -> Result<DVector<G::Scalar>, SolverError> {
    propagate_observed(generator, initial, t_final, options, |_, _| {}).map(|(x, _)| x)
}

/// As [`propagate`], calling `observe(t, x)` at `t = 0` and after every
/// accepted step.
pub fn propagate_observed<G, F>(
    generator: &G,
    initial: &DVector<G::Scalar>,
    t_final: f64,
    options: &PropagationOptions,
    mut observe: F,
) -> Result<(DVector<G::Scalar>, PropagationStats), SolverError>
where
    G: Generator,
    F: FnMut(f64, &DVector<G::Scalar>),
{
    let m = generator.matrix();
    if initial.len() != m.nrows() {
        return Err(SolverError::DimensionMismatch {
            expected: m.nrows(),
            got: initial.len(),
        });
    }
    let trace = generator.trace(initial);
    if (trace - G::Scalar::from_real(1.0)).modulus() > 1e-10 {
        return Err(SolverError::InvalidInitialState(trace.real()));
    }

    let mut stats = PropagationStats::default();
    let mut t = 0.0;
    let mut x = initial.clone();
    observe(t, &x);
    if t_final <= 0.0 {
        return Ok((x, stats));
    }
    let norm = operator_norm_inf(m);
    if norm == 0.0 {
        observe(t_final, &x);
        return Ok((x, stats));
    }

    let mut h = options.initial_step.unwrap_or(0.01 / norm).min(t_final);
    let mut k = vec![m * &x; 7];
    while t < t_final {
        if stats.accepted + stats.rejected >= options.max_steps {
            return Err(SolverError::StepBudgetExceeded {
                steps: options.max_steps,
                t_reached: t,
            });
        }
        if h <= 1e-14 * t.max(1.0 / norm) {
            return Err(SolverError::StepSizeUnderflow { t_reached: t });
        }
        let h_step = h.min(t_final - t);
        for s in 1..7 {
            let mut xs = x.clone();
            for (j, kj) in k.iter().enumerate().take(s) {
                let a = A[s][j];
                if a != 0.0 {
                    xs += scale(kj, h_step * a);
                }
            }
            k[s] = m * xs;
        }
        // Stage 7 sits at t + h with the fifth-order weights, so the
        // solution is the last stage input.
        let mut x_new = x.clone();
        for (j, kj) in k.iter().enumerate().take(6) {
            let b = A[6][j];
            if b != 0.0 {
                x_new += scale(kj, h_step * b);
            }
        }
        let mut err = 0.0f64;
        for i in 0..x.len() {
            let mut e = G::Scalar::from_real(0.0);
            for (j, kj) in k.iter().enumerate() {
                if E[j] != 0.0 {
                    e += kj[i] * G::Scalar::from_real(E[j] * h_step);
                }
            }
            let sc = options.atol + options.rtol * x[i].modulus().max(x_new[i].modulus());
            err = err.max(e.modulus() / sc);
        }

        if err <= 1.0 {
            t = if h_step == t_final - t { t_final } else { t + h_step };
            x = x_new;
            k[0] = k[6].clone();
            stats.accepted += 1;
            observe(t, &x);
            let factor = if err == 0.0 {
                5.0
            } else {
                (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
            };
            h = h_step * factor;
        } else {
            stats.rejected += 1;
            h = h_step * (0.9 * err.powf(-0.2)).clamp(0.1, 0.9);
        }
    }
    Ok((x, stats))
}

/// Steady state reached by time stepping from all population in the
/// ground state.
///
/// Uses backward-Euler steps `(I − hG) x_{n+1} = x_n` with `h` doubling every
/// step, which is unconditionally stable and whose fixed point is exactly the
/// null vector of `G`. Stops once the step has passed the slowest channel
/// timescale and both `‖G x‖_∞` and the step-to-step change fall below `tol`.
/// Fails when the elapsed time exceeds `10⁴ / min_rate`.
pub fn steady_state_by_propagation<G: Generator>(generator: &G, tol: f64) -> Result<PopulationVector, SolverError> {
    let m = generator.matrix();
    let mut x = generator.pure_state(0);
    let Some(min_rate) = generator.min_positive_rate() else {
        return PopulationVector::from_raw(generator.populations(&x));
    };
    let horizon = 1e4 / min_rate;
    let n = m.nrows();
    let id = DMatrix::<G::Scalar>::identity(n, n);
    let mut h = 0.1 / operator_norm_inf(m);
    let mut t = 0.0;
    loop {
        let a = &id - m.map(|v| v * G::Scalar::from_real(h));
        let mut x_new = a
            .lu()
            .solve(&x)
            .ok_or_else(|| SolverError::Singular(format!("implicit step singular at h = {h:e}")))?;
        let tr = generator.trace(&x_new);
        x_new = x_new.map(|v| v / tr);
        t += h;
        let change = max_modulus(&(&x_new - &x));
        x = x_new;
        let residual = max_modulus(&(m * &x));
        if h * min_rate >= 1.0 && residual <= tol && change <= tol {
            return PopulationVector::from_raw(generator.populations(&x));
        }
        if t > horizon {
            return Err(SolverError::NonConvergence { horizon, residual });
        }
        h *= 2.0;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::{build_liouvillian, build_rate_matrix, rate_matrix, ChannelKind, JumpChannel};
    use crate::model::default_config;
    use crate::solver::{steady_state_populations, DensityMatrix};
    use num_complex::Complex64;

    fn decay(rate: f64) -> crate::generator::RateMatrix {
        build_rate_matrix(
            &[JumpChannel {
                source: 1,
                target: 0,
                rate,
                kind: ChannelKind::TrapDecay,
            }],
            2,
        )
        .unwrap()
    }

    #[test]
    fn zero_time_is_identity() {
        let m = rate_matrix(&default_config(2).unwrap()).unwrap();
        let x0 = DVector::from_vec(vec![0.2, 0.3, 0.1, 0.25, 0.15]);
        let x = propagate(&m, &x0, 0.0, &PropagationOptions::default()).unwrap();
        assert_eq!(x, x0);
    }

    #[test]
    fn zero_generator_keeps_state() {
        let m = build_rate_matrix(&[], 3).unwrap();
        let x0 = DVector::from_vec(vec![0.5, 0.5, 0.0]);
        let x = propagate(&m, &x0, 1e6, &PropagationOptions::default()).unwrap();
        assert_eq!(x, x0);
        let p = steady_state_by_propagation(&m, 1e-12).unwrap();
        assert_eq!(p.as_slice(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn pure_decay_matches_exponential() {
        let r = 0.37;
        let m = decay(r);
        let x0 = DVector::from_vec(vec![0.0, 1.0]);
        for &t in &[0.1, 1.0, 5.0, 20.0] {
            let x = propagate(&m, &x0, t, &PropagationOptions::with_rtol(1e-8)).unwrap();
            let exact = (-r * t).exp();
            assert!((x[1] - exact).abs() <= 1e-8, "t={t}: {} vs {exact}", x[1]);
            assert!((x[1] / exact - 1.0).abs() <= 1e-7, "t={t}: {} vs {exact}", x[1]);
            assert!((x[0] + x[1] - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn single_decay_settles_in_target() {
        let p = steady_state_by_propagation(&decay(2.0), 1e-12).unwrap();
        assert!(p[1] < 1e-12);
        // Initial state is the ground state, which is already the target.
        assert_eq!(p[0], 1.0);
        let up = build_rate_matrix(
            &[JumpChannel {
                source: 0,
                target: 1,
                rate: 0.5,
                kind: ChannelKind::TrapExcite,
            }],
            2,
        )
        .unwrap();
        let p = steady_state_by_propagation(&up, 1e-12).unwrap();
        assert!(p[1] > 1.0 - 1e-12);
    }

    #[test]
    fn trace_and_positivity_along_trajectory() {
        let m = rate_matrix(&default_config(3).unwrap()).unwrap();
        let x0 = m.pure_state(0);
        let mut worst_trace = 0.0f64;
        let mut min_pop = f64::INFINITY;
        let (_, stats) = propagate_observed(&m, &x0, 2000.0, &PropagationOptions::default(), |_, x| {
            worst_trace = worst_trace.max((x.sum() - 1.0).abs());
            min_pop = min_pop.min(x.min());
        })
        .unwrap();
        assert!(stats.accepted > 0);
        assert!(worst_trace < 1e-9);
        assert!(min_pop > -1e-9);
    }

    #[test]
    fn step_budget_reported() {
        let m = rate_matrix(&default_config(1).unwrap().with_load(10.0)).unwrap();
        let opts = PropagationOptions {
            max_steps: 10,
            ..Default::default()
        };
        let err = propagate(&m, &m.pure_state(0), 1e6, &opts).unwrap_err();
        assert!(matches!(err, SolverError::StepBudgetExceeded { .. }));
    }

    #[test]
    fn rejects_unnormalized_initial_state() {
        let m = decay(1.0);
        let err = propagate(
            &m,
            &DVector::from_vec(vec![0.5, 0.0]),
            1.0,
            &PropagationOptions::default(),
        );
        assert!(matches!(err, Err(SolverError::InvalidInitialState(_))));
    }

    #[test]
    fn implicit_route_matches_state_reduction() {
        for n in [1, 3] {
            for load in [1e-4, 0.12, 10.0] {
                let m = rate_matrix(&default_config(n).unwrap().with_load(load)).unwrap();
                let a = steady_state_populations(&m, 1e-12).unwrap();
                let b = steady_state_by_propagation(&m, 1e-12).unwrap();
                assert!(a.max_abs_diff(&b) < 1e-10, "N={n} G={load}: {}", a.max_abs_diff(&b));
            }
        }
    }

    #[test]
    fn liouvillian_propagation_keeps_coherences_zero() {
        let cfg = default_config(2).unwrap();
        let l = build_liouvillian(&cfg).unwrap();
        let m = rate_matrix(&cfg).unwrap();
        let rho0 = l.pure_state(0);
        let t = 500.0;
        let full = propagate(&l, &rho0, t, &PropagationOptions::default()).unwrap();
        let red = propagate(&m, &m.pure_state(0), t, &PropagationOptions::default()).unwrap();
        let d = cfg.dimension();
        let rho = DensityMatrix::new(DMatrix::from_column_slice(d, d, full.as_slice()));
        assert_eq!(rho.max_coherence(), 0.0);
        for k in 0..d {
            assert!((rho.matrix()[(k, k)] - Complex64::new(red[k], 0.0)).norm() < 1e-12);
        }
    }
}
