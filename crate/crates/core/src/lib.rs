pub mod error;
pub mod grid;
pub mod heat;
pub mod noise;
pub mod rng;
pub mod norms;
pub mod products;
pub mod semigroup;
pub mod solver;
pub mod stats;
pub mod verify;

pub use error::{Error, Result};
