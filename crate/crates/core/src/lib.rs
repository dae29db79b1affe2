// `!(a > b)` comparisons are kept so that NaN falls on the rejecting side.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod im2col;
pub mod layers;
pub mod model;
pub mod optim;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use model::{build_model, param_count, Model, ModelConfig};
pub use optim::SgdConfig;
pub use rng::SeededRng;
pub use tensor::{matmul, Tensor};
