//! Primitive operations. Each one records itself on the [`Tape`](crate::Tape)
//! together with the data its backward rule needs.

pub mod conv;
pub mod elementwise;
pub mod loss;
pub mod norm;
pub mod pool;
pub mod shape;
pub mod softmax;

pub use conv::ConvGeometry;
pub use pool::PoolMode;
