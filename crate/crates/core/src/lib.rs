pub mod catalog;
pub mod coords;
pub mod douglas;
pub mod error;
pub mod expr;
pub mod finsler;
pub mod jet;
pub mod report;
pub mod spray;

pub use error::{Error, Result};
