//! Sparse TSDF mapping with instance-level open-vocabulary semantics.

// `!(x > 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fmt;

use serde::{Deserialize, Serialize};

pub mod archive;
pub mod cache;
pub mod config;
pub mod error;
pub mod eval;
pub mod frame;
pub mod hungarian;
pub mod map;
pub mod pipeline;
pub mod ply;
pub mod query;
pub mod raster;
pub mod registry;
pub mod sampling;
pub mod synth;
pub mod tsdf;

pub use error::{Error, Result};

/// Identifier of a global 3D instance, unique within a map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct InstanceId(pub u32);

impl fmt::Display for InstanceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}
