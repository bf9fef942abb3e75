//! Steady-state simulation of an N-donor quantum photocell.
//!
//! The cell is a ground state `b`, N identical donor excitations `a_i`, a
//! charge-separated acceptor state `alpha` and a semi-stable state `beta`,
//! driven by a hot photon bath and a cold phonon bath. The load Γ extracts
//! work on `alpha -> beta`. Steady states of the resulting Lindblad (and
//! equivalent Pauli) master equation give the current, voltage and power
//! of the cell.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod experiments;
pub mod generator;
pub mod model;
pub mod observables;
pub mod solver;
