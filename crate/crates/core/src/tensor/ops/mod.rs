//! Operator set: forward kernels plus their adjoints, exposed as methods on
//! [`Tape`](super::Tape).

mod conv;
mod elementwise;
mod graph;
mod loss;
mod matmul;
mod norm;
mod softmax;

pub use conv::Conv2dSpec;
