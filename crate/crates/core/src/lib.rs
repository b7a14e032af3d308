pub mod benchdata;
pub mod checkpoint;
pub mod editors;
pub mod error;
pub mod grace;
pub mod harness;
pub mod metrics;
pub mod numcore;
pub mod toymodel;

pub use error::{Error, Result};
