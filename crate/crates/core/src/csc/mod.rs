//! Convolutional sparse coding: the ISTA reference solver and the learnable
//! units unrolled from it.

mod dcu;
mod ista;

pub use dcu::{
    dcu_forward, dcu_stack_forward, init_filter, inverse_softplus, Activation, ActivationKind, BatchNormState,
    DcuParams, DcuStack, BN_EPS, BN_MOMENTUM, DEFAULT_CODE_CHANNELS, DEFAULT_KERNEL, INITIAL_PRELU_SLOPE,
    INITIAL_THRESHOLD,
};
pub use ista::{
    auto_rho, csc_objective, ista_solve, ista_step, lipschitz_constant, power_iteration, random_dictionary,
    IstaProblem, IstaSolution, POWER_ITERATIONS, POWER_TOLERANCE,
};
