// SPDX-License-Identifier: MIT OR Apache-2.0

pub mod analysis;
pub mod cli;
pub mod corpus;
pub mod error;
pub mod evaluation;
pub mod model;
pub mod seed;
pub mod steering;

pub use error::{Error, Result};
