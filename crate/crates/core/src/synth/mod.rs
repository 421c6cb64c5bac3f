//! Generative synthesis of collective-communication traces: merge rank
//! traces into a master trace, fit models of type composition, sequence
//! length and message size, and sample new traces from them.

mod gmm;
mod master;
mod model;
mod stats;

pub use gmm::{Component, EmOptions, EmReport, Gmm, GmmError, VARIANCE_FLOOR};
pub use master::{
    build_master_trace, collective_order, comm_sequences, reconstruct_rank_traces, CommOp, MasterError, MasterOp,
    MasterTrace,
};
pub use model::{
    fit_models, ClusterModel, FitConfig, SynthConfig, SynthError, SynthModels, MODELED_TYPES, MODEL_FORMAT,
    MODEL_VERSION,
};
pub use stats::{copied_sequences, ks_statistic, total_variation, type_frequencies};
