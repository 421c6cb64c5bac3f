//! Execution-trace toolkit: a per-NPU trace schema with JSON and binary
//! codecs, converters from framework traces, DOT and Chrome-trace emitters,
//! a dependency-resolving feeder, a deterministic replay simulator with
//! analytic collective cost models, and a generative trace synthesizer.

pub mod schema;
pub mod feeder;
pub mod gen;
pub mod viz;
pub mod sim;
pub mod par;
pub mod presets;
pub mod sweep;
pub mod convert;
pub mod synth;
