pub mod channel;
pub mod config;
pub mod error;
pub mod experiment;
pub mod link;
pub mod numerics;
pub mod precoder;
pub mod robust;
pub mod surface;

pub use error::{Error, Result};
