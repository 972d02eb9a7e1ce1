pub mod density;
pub mod engine;
pub mod eval;
pub mod error;
pub mod field;
pub mod filters;
pub mod io;
pub mod levelset;
pub mod phantom;
pub mod velocity;

pub use error::{Error, Result};
