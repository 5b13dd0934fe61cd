//! Synchronization of sparse gradient tensors across data-parallel workers.
//!
//! The crate models each piece of a sparse synchronization scheme and runs
//! whole schemes over a deterministic, receiver-bound network simulator:
//!
//! - [`tensor`]: sparse tensors, aggregation and sparsity metrics
//! - [`hashing`]: hierarchical hashing for balanced Push/Pull partitions
//! - [`codec`]: COO, bitmap, tensor-block and hash-bitmap wire formats
//! - [`simnet`]: stage-based traffic accounting
//! - [`schemes`]: AGsparse, recursive-doubling centralization, block-sparse
//!   parallelism and balanced parallelism
//! - [`costmodel`]: closed-form communication times and the scheme selector
//! - [`workload`]: synthetic workloads with tunable density, overlap and skew

pub mod codec;
pub mod costmodel;
pub mod error;
pub mod hashing;
pub mod schemes;
pub mod simnet;
pub mod tensor;
pub mod workload;

pub use error::{Error, Result};
