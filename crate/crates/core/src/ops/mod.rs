//! Forward/backward kernels used by the tape.

pub mod activation;
pub mod conv;
pub mod norm;

pub use activation::Activation;
pub use conv::{conv2d, conv2d_transpose, Geometry};
pub use norm::{instance_norm, INSTANCE_NORM_EPS};
