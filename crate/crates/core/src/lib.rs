pub mod effective;
pub mod ensemble;
pub mod error;
pub mod exact;
pub mod experiments;
pub mod interactions;
pub mod kv;
pub mod selftest;
pub mod sequences;
pub mod spinops;

pub use error::{Error, Result};
