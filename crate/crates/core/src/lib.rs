//! Dataflow compiler and cycle-level simulator for convolution on
//! spatial PE arrays.
//!
//! The crate compiles a convolution layer (direct, transposed or dilated)
//! into per-PE micro-op programs for one of three dataflows and simulates
//! them cycle by cycle, including the on-chip networks, the banked global
//! buffer and DRAM.

pub mod compiler;
pub mod error;
pub mod harness;
pub mod layer;
pub mod memory;
pub mod noc;
pub mod oracle;
pub mod sim;
pub mod tensor;

pub use compiler::program::CompiledLayer;
pub use compiler::{compile, compile_with_plan};
pub use error::{Error, Result};
pub use layer::{ConvType, Dataflow, LayerSpec};
pub use sim::{run, simulate_layer, ArrayConfig, SimResult};
