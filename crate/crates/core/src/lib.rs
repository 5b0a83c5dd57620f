//! Deployment planning for neural-network graphs on memory-constrained
//! microcontrollers.
//!
//! The crate covers the whole path from a model description to a deployment
//! estimate: shape inference and layout handling ([`graph`]), a reference
//! interpreter ([`executor`]), int8 quantisation ([`quantizer`]), memory
//! accounting and tiling ([`memory`]), stage partitioning ([`partition`]),
//! sequential and pipelined timing ([`pipeline`]) and latency statistics
//! ([`stats`]). The [`cli`] module wires these into the `mcuplan` binary.

pub mod cli;
pub mod error;
pub mod executor;
pub mod fixtures;
pub mod graph;
pub mod memory;
pub mod partition;
pub mod pipeline;
pub mod quantizer;
pub mod stats;
pub mod synth;
pub mod tensor_file;

pub use error::{Error, Result};
pub use executor::{compare_outputs, exec_float, exec_int8, Activation, Comparison};
pub use graph::{infer_shapes, load_graph, load_model, topo_order, DType, Graph, LayerKind, Resolution, TensorSpec};
pub use memory::{
    memory_report, peak_activation, place, tile_plan, weight_footprint, DeviceSpec, MemoryReport, Placement,
};
pub use partition::{auto_cuts, verify_plan, CutPoint, PartitionPlan};
pub use quantizer::{quantize_graph, QuantParams, QuantizedTensor};
