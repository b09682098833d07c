//! Core kernels for a desk-scale knowledge-acquisition laboratory.
//!
//! Everything here is pure computation over in-memory values and builds
//! without `std` (an allocator is required). File formats, the training
//! driver and the command line live in the `factlab` crate.
//!
//! Module map:
//!
//! - [`synthkb`]: seeded fictional-knowledge generator with memorization,
//!   semantic and composition probes.
//! - [`corpus`]: replayable background token stream.
//! - [`microlm`]: word-level tokenizer and a small decoder-only transformer
//!   with hand-written reverse-mode gradients.
//! - [`optimizer`]: AdamW and warmup/cosine schedules.
//! - [`injector`]: injection schedules and batch composition.
//! - [`tracer`]: probe evaluation records and the single training step.
//! - [`dynamics`]: local acquisition maxima, effectivity, retainability,
//!   IQR filtering and grouped aggregation.
//! - [`forgetfit`]: retainability vs. log-time regression.
//! - [`acqsim`]: accumulation/forgetting simulator and learnability threshold.

#![cfg_attr(not(any(test, feature = "std")), no_std)]
#![forbid(unsafe_op_in_unsafe_fn)]

extern crate alloc;

pub mod acqsim;
pub mod corpus;
pub mod grammar;
pub mod dynamics;
pub mod forgetfit;
pub mod injector;
pub mod microlm;
pub mod optimizer;
pub mod seed;
pub mod synthkb;
pub mod tracer;

mod scenario;

pub use scenario::{Depth, Scenario};
