//! Dense `f64` arithmetic, the fixed-graph kernels the model needs, and the
//! seeded counter-based generator used everywhere randomness appears.

mod ops;
mod rng;
mod tensor;

pub use ops::{cross_entropy_nll, logsumexp, rmsnorm, DEFAULT_NORM_EPS};
pub(crate) use ops::{rmsnorm_backward, rmsnorm_into, silu, silu_grad, softmax_in_place};
pub use rng::Rng;
pub use tensor::{matmul, Tensor2D};
pub(crate) use tensor::{matmul_a_bt, matmul_acc, matmul_at_b_acc};
