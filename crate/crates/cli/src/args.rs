use std::path::PathBuf;

use chakra_core::gen::Parallelism;
use chakra_core::presets::Preset;
use chakra_core::schema::Format;
use chakra_core::sim::Topology;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "chakra", version, about = "Execution-trace toolkit: convert, inspect, generate, simulate and synthesize traces")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Convert a framework graph into per-NPU traces.
    Convert(ConvertArgs),
    /// Check traces for structural and attribute errors.
    Validate(ValidateArgs),
    /// Render a trace as a Graphviz DOT graph.
    Visualize(VisualizeArgs),
    /// Turn a simulator timeline CSV into a Chrome trace JSON.
    Timeline(TimelineArgs),
    /// Generate a synthetic layered workload.
    Generate(GenerateArgs),
    /// Replay traces on a modeled network.
    Simulate(SimulateArgs),
    /// Simulate a workload across NPU counts or bandwidths.
    Sweep(SweepArgs),
    /// Fit synthesis models to a corpus of trace directories.
    Fit(FitArgs),
    /// Sample new traces from fitted models.
    Synthesize(SynthesizeArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SourceFormat {
    Pytorch,
    Flexflow,
}

#[derive(Args, Debug)]
pub struct OutputTraces {
    /// Output directory for `<prefix>.<npu>.et` files.
    #[arg(long = "output", visible_alias = "out")]
    pub output: PathBuf,
    /// Encoding of written traces: json or binary.
    #[arg(long, default_value = "json")]
    pub format: Format,
    #[arg(long, default_value = "trace")]
    pub prefix: String,
}

#[derive(Args, Debug)]
pub struct ConvertArgs {
    /// Source graph format.
    #[arg(long, value_enum)]
    pub from: SourceFormat,
    #[arg(long)]
    pub input: PathBuf,
    #[command(flatten)]
    pub out: OutputTraces,
    /// PyTorch durations: cycles per microsecond.
    #[arg(long, default_value_t = 1.0)]
    pub cycles_per_us: f64,
    /// PyTorch nodes without placement go to this NPU.
    #[arg(long, default_value_t = 0)]
    pub default_npu: u32,
}

#[derive(Args, Debug)]
#[group(required = true, multiple = false)]
pub struct TraceInput {
    /// A single `.et` file.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// A directory of `.et` files.
    #[arg(long)]
    pub trace_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ValidateArgs {
    #[command(flatten)]
    pub src: TraceInput,
}

#[derive(Args, Debug)]
pub struct VisualizeArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// DOT file to write; stdout when omitted.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TimelineArgs {
    /// Timeline CSV written by `simulate --timeline`.
    #[arg(long)]
    pub input: PathBuf,
    /// Traces the timeline came from, for thread assignment by node type.
    #[arg(long)]
    pub trace_dir: Option<PathBuf>,
    /// Chrome trace JSON to write; stdout when omitted.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    /// JSON workload description; flags below override its fields.
    #[arg(long, conflicts_with = "preset")]
    pub spec: Option<PathBuf>,
    /// Named workload preset.
    #[arg(long)]
    pub preset: Option<Preset>,
    /// dp, mp, dp_mp, mp_dp or pipeline.
    #[arg(long)]
    pub parallelism: Option<Parallelism>,
    #[arg(long)]
    pub npus: Option<u32>,
    #[arg(long)]
    pub layers: Option<u32>,
    /// Grid shape D1xD2 for hybrid parallelism.
    #[arg(long, value_parser = parse_dims)]
    pub dims: Option<(u32, u32)>,
    /// Forward cycles of one layer on one NPU before division.
    #[arg(long)]
    pub compute_cycles: Option<u64>,
    #[arg(long)]
    pub weight_bytes: Option<u64>,
    #[arg(long)]
    pub activation_bytes: Option<u64>,
    #[arg(long)]
    pub microbatches: Option<u32>,
    #[command(flatten)]
    pub out: OutputTraces,
}

#[derive(Args, Debug)]
pub struct SystemArgs {
    /// torus2d:D1xD2 or switch2lvl:D1xD2.
    #[arg(long)]
    pub topology: Topology,
    /// Per-dimension bandwidth B1,B2 in bytes/s.
    #[arg(long, value_parser = parse_pair)]
    pub bw: Option<(f64, f64)>,
    /// Per-dimension link latency L1,L2 in seconds.
    #[arg(long, value_parser = parse_pair)]
    pub latency: Option<(f64, f64)>,
    /// Seconds per cycle.
    #[arg(long, default_value_t = 1e-9)]
    pub cycle_time: f64,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[arg(long)]
    pub trace_dir: PathBuf,
    #[command(flatten)]
    pub system: SystemArgs,
    /// Write the issue/callback timeline CSV here.
    #[arg(long)]
    pub timeline: Option<PathBuf>,
    /// Write per-NPU compute/exposed-communication CSV here.
    #[arg(long)]
    pub breakdown: Option<PathBuf>,
    /// Summary JSON destination; stdout when omitted.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[arg(long)]
    pub preset: Preset,
    /// Topology kind for NPU sweeps, or the fixed system for bandwidth sweeps.
    #[arg(long, default_value = "torus2d:2x2")]
    pub topology: Topology,
    /// Comma-separated NPU counts, each on the most-square grid.
    #[arg(long, value_delimiter = ',', conflicts_with = "bw_grid")]
    pub npus: Vec<u32>,
    /// Bandwidth pairs `B1,B2` separated by `;`.
    #[arg(long, value_delimiter = ';', value_parser = parse_pair)]
    pub bw_grid: Vec<(f64, f64)>,
    /// Bandwidth for NPU sweeps.
    #[arg(long, value_parser = parse_pair)]
    pub bw: Option<(f64, f64)>,
    /// Run cells one at a time.
    #[arg(long)]
    pub sequential: bool,
    /// CSV destination; stdout when omitted.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    /// Trace directories; each one is a corpus entry.
    #[arg(long, required = true, num_args = 1..)]
    pub corpus: Vec<PathBuf>,
    #[arg(long, default_value_t = 2)]
    pub components: usize,
    #[arg(long, default_value_t = 2)]
    pub clusters: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Model JSON destination.
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Args, Debug)]
pub struct SynthesizeArgs {
    /// Model JSON from `fit`.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub npus: u32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Fixed number of collectives instead of a sampled length.
    #[arg(long)]
    pub length: Option<usize>,
    /// Per-rank message size spread, 0 for an equal split.
    #[arg(long, default_value_t = 0.0)]
    pub jitter: f64,
    #[command(flatten)]
    pub out: OutputTraces,
}

fn parse_dims(s: &str) -> Result<(u32, u32), String> {
    let (a, b) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected D1xD2, got {s:?}"))?;
    Ok((a.trim().parse().map_err(|e| format!("{a:?}: {e}"))?, b.trim().parse().map_err(|e| format!("{b:?}: {e}"))?))
}

fn parse_pair(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or_else(|| format!("expected A,B, got {s:?}"))?;
    let num = |x: &str| x.trim().parse::<f64>().map_err(|e| format!("{x:?}: {e}"));
    let (a, b) = (num(a)?, num(b)?);
    if !(a.is_finite() && b.is_finite() && a >= 0.0 && b >= 0.0) {
        return Err(format!("values must be finite and non-negative, got {s:?}"));
    }
    Ok((a, b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn command_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn pair_parsing() {
        assert_eq!(parse_pair("62e9,31e9"), Ok((62e9, 31e9)));
        assert!(parse_pair("62e9").is_err());
        assert!(parse_pair("-1,2").is_err());
        assert_eq!(parse_dims("4x2"), Ok((4, 2)));
    }
}
