//! Attention modules for cross-domain person re-identification, together with
//! the small reverse-mode tensor engine they run on, the training recipe and
//! the retrieval metrics used to score them.
//!
//! The crate is `no_std` (it needs `alloc`). File formats, image IO and the
//! command line live in the `adfl-bench` companion crate.
#![cfg_attr(not(any(feature = "std", test)), no_std)]
#![allow(clippy::needless_range_loop, clippy::too_many_arguments)]

extern crate alloc;

pub mod attention;
pub mod error;
pub mod eval;
pub mod label;
pub mod math;
pub mod model;
pub mod nn;
pub mod ops;
pub mod params;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tape::{Ctx, Gradients, Mode, Tape, Var};
pub use tensor::Tensor;
