//! Long-and-rich-context building blocks for video token pipelines.
//!
//! The crate covers the mechanisms needed to feed very long videos through a
//! multimodal language model at desk scale:
//!
//! - [`sampler`]: duration-adaptive frame sampling with a frame budget.
//! - [`merger`]: per-clip token compression by iterative bipartite soft
//!   matching, with a full provenance trace.
//! - [`toyattn`]: a fixed-weight multi-head self-attention stack and the
//!   multi-task loss combinator.
//! - [`dropout`]: two-phase token dropout (uniform early, attention-guided deep).
//! - [`niah`]: a synthetic needle-in-a-haystack recall harness built from the
//!   pieces above.
//! - [`packer`]: order-preserving dynamic sequence packing.
//! - [`planner`]: a communication cost model for 2D (all-to-all × ring)
//!   sequence parallelism.
//!
//! All randomness flows through [`SeedSpec`], so every result is a pure
//! function of its inputs and seed.

pub mod cli;
pub mod dropout;
pub mod error;
pub mod io;
pub mod merger;
pub mod niah;
pub mod packer;
pub mod planner;
pub mod sampler;
pub mod seed;
pub mod tokens;
pub mod toyattn;

pub use error::{Error, Result};
pub use seed::SeedSpec;
pub use tokens::{cosine_sim, TokenSeq};
