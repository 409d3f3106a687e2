pub mod augment;
pub mod data;
pub mod error;
pub mod nn;
pub mod tensor;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
pub use tensor::{Rng, Scalar, Tensor};

/// Substream identifiers passed as the first path element of
/// [`Rng::derive`], one per independent consumer of randomness.
pub mod streams {
    pub const INIT: u64 = 1;
    pub const SPLIT: u64 = 2;
    pub const SHUFFLE: u64 = 3;
    pub const AUGMENT: u64 = 4;
    pub const DROPOUT: u64 = 5;
    pub const PREVIEW: u64 = 6;
}
