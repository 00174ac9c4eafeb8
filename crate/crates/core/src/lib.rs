//! Finite-element solver for the stress-free reference configuration of a
//! nonlinear poroelastic body, with the forward problem for round-trip checks.

// Indexed loops mirror the tensor notation; `!(x > 0.0)` rejects NaN on purpose.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod fe;
pub mod mesh;
pub mod tensor;
pub mod constitutive;
pub mod weak_forms;
pub mod time_stepper;
pub mod stationary;
pub mod oracle0d;
pub mod config;
pub mod io;
pub mod driver;
