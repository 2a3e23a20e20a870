pub mod core_geometry;
pub mod error;
pub mod io;
pub mod kcd;
pub mod matops;
pub mod picse;
pub mod sim;
pub mod spd;

pub use error::{Error, Result};
