//! Dense tensors, explicit vector-Jacobian products and a finite-difference
//! gradient checker.
//!
//! Every learnable operation in this crate exposes a forward pass and a
//! hand-written backward pass. There is no tape: the model graph is small and
//! static, so each layer caches what its backward needs and the trainer chains
//! the backward calls in reverse order.

mod gradcheck;
mod ops;
mod rng;
mod tensor;

pub use gradcheck::{
    check_gradients, DifferentiableOp, GradientReport, FD_STEP, KINK_RADIUS, NOISE_FACTOR,
    RELATIVE_FLOOR,
    SCALE_FLOOR,
};
pub use ops::{ElementwiseOp, MatMulOp};
pub use rng::{child_seed, Rng, RngState};
pub use tensor::{
    elementwise, elementwise_backward, matmul, matmul_backward, ElementwiseKind, Tensor,
};
