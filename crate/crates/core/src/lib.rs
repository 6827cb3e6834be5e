//! Bit-accurate, cycle-approximate simulator of a digital in-ReRAM
//! computing retrieval accelerator, with a retrieval-quality harness.
//!
//! The pipeline follows the hardware: embeddings are quantized
//! ([`store`]), placed into DIRC macros ([`layout`]), written into
//! multi-level ReRAM cells ([`device`]), and scored by bit-serial MAC
//! ([`macro_engine`]) across sixteen cores with hierarchical top-k
//! ([`retrieval`]). [`perf`] turns event counters into latency and energy;
//! [`eval`], [`synth`] and [`harness`] provide the retrieval-quality side.

pub mod device;
pub mod error;
pub mod eval;
pub mod harness;
pub mod layout;
pub mod macro_engine;
pub mod perf;
pub mod retrieval;
pub mod store;
pub mod synth;

pub use error::{Error, Result};
