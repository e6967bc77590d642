//! Accumulator-aware weight quantization.
//!
//! Integer weights whose l1 norm stays under a budget derived from the
//! accumulator width `P` and activation width `N` can never overflow a
//! `P`-bit register, for any input. This crate provides the exact budgets,
//! quantizers that enforce them during training, a projection-based
//! initializer, an exact integer dot-product simulator to check the
//! guarantee, and a small quantization-aware trainer.

pub mod bounds;
pub mod epinit;
pub mod error;
pub mod intsim;
pub mod props;
pub mod qat;
pub mod quantizers;

pub use bounds::{a2q_limit, a2q_plus_limit, bound_ratio, min_acc_width, BitWidths, RationalBound};
pub use epinit::{ep_init, init_scale, project_l1_ball, weight_quant_error, ProjectionResult};
pub use error::{Error, Result};
pub use intsim::{check_accumulator, exhaustive_check, verify_prop2, AccumWitness, AccumulatorSpec};
pub use quantizers::{
    forward_weights, quantize_a2q, quantize_a2q_plus, quantize_standard, round_to_zero,
    ActQuantSpec, BackwardTape, ChannelWeights, QuantMode, QuantResult, Variant,
};
