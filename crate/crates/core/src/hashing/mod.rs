//! Data-independent load balancing for the Push/Pull steps.
//!
//! A shared first-level hash `h0` fixes each index's server, so the same
//! index from any worker meets at one place, and its uniformity keeps every
//! partition near `|I|/n`. Second-level hashes place indices inside a
//! partition's memory without locks; see [`hierarchical_hash`].

mod bench;
mod family;
mod hierarchical;
mod imbalance;
mod strawman;

pub use bench::{bench_hashing, BenchCell, BenchGrid};
pub use family::{derive_seeds, mix64, reduce, seeded_hash, HashFamily};
pub use hierarchical::{
    collision_stats, hierarchical_hash, hierarchical_hash_with_stats, CollisionStats, HashConfig,
    HashMemory, PartitionedSparseTensor,
};
pub use imbalance::{
    imbalance_pull, imbalance_pull_counts, imbalance_push, imbalance_push_counts,
    load_balance_bound,
};
pub use strawman::strawman_hash;
