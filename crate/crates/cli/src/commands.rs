use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{bail, Context, Result};
use chakra_core::convert::{convert_flexflow_str, convert_pytorch, PyTorchOptions};
use chakra_core::gen::{generate_workload, WorkloadSpec};
use chakra_core::par::Execution;
use chakra_core::schema::{read_trace_dir, read_trace_file, write_trace_dir, NodeType, Trace};
use chakra_core::sim::{compute_breakdown, run_simulation, SimConfig};
use chakra_core::sweep::{bandwidth_cells, npu_cells, run_cells, sweep_csv};
use chakra_core::synth::{build_master_trace, fit_models, FitConfig, SynthConfig, SynthModels};
use chakra_core::viz::{emit_dot, read_timeline_csv, timeline_csv_string, timeline_to_chrome_trace};
use log::{info, warn};
use serde_json::json;

use crate::args::*;

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Convert(a) => convert(a),
        Command::Validate(a) => validate(a),
        Command::Visualize(a) => visualize(a),
        Command::Timeline(a) => timeline(a),
        Command::Generate(a) => generate(a),
        Command::Simulate(a) => simulate(a),
        Command::Sweep(a) => sweep(a),
        Command::Fit(a) => fit(a),
        Command::Synthesize(a) => synthesize(a),
    }
}

fn write_or_print(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => std::io::stdout().write_all(text.as_bytes()).context("writing stdout"),
    }
}

fn write_traces(out: &OutputTraces, traces: &[Trace]) -> Result<()> {
    let paths = write_trace_dir(&out.output, &out.prefix, traces, out.format)?;
    info!("wrote {} trace file(s) to {}", paths.len(), out.output.display());
    Ok(())
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn convert(a: ConvertArgs) -> Result<()> {
    let conv = match a.from {
        SourceFormat::Pytorch => {
            let bytes = fs::read(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
            let opts = PyTorchOptions { cycles_per_us: a.cycles_per_us, default_npu: Some(a.default_npu) };
            convert_pytorch(&bytes, &opts)?
        }
        SourceFormat::Flexflow => convert_flexflow_str(&read_text(&a.input)?)?,
    };
    for w in &conv.warnings {
        warn!("{w}");
        eprintln!("warning: {w}");
    }
    write_traces(&a.out, &conv.traces)
}

fn load(src: &TraceInput) -> Result<Vec<Trace>> {
    match (&src.input, &src.trace_dir) {
        (Some(f), _) => Ok(vec![read_trace_file(f)?]),
        (None, Some(d)) => Ok(read_trace_dir(d)?),
        (None, None) => bail!("no input given"),
    }
}

fn validate(a: ValidateArgs) -> Result<()> {
    let traces = load(&a.src)?;
    let mut bad = 0;
    for t in &traces {
        let report = t.validate();
        for v in &report.violations {
            eprintln!("npu {}: {v}", t.npu_id());
        }
        if !report.is_valid() {
            bad += 1;
        }
    }
    if bad > 0 {
        bail!("{bad} of {} trace(s) invalid", traces.len());
    }
    println!("{} trace(s) valid", traces.len());
    Ok(())
}

fn visualize(a: VisualizeArgs) -> Result<()> {
    let trace = read_trace_file(&a.input)?;
    write_or_print(a.output.as_deref(), &emit_dot(&trace))
}

fn timeline(a: TimelineArgs) -> Result<()> {
    let file = fs::File::open(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let rows = read_timeline_csv(file)?;
    let mut types: HashMap<(u32, u64), NodeType> = HashMap::new();
    if let Some(dir) = &a.trace_dir {
        for t in read_trace_dir(dir)? {
            types.extend(t.nodes().iter().map(|n| ((t.npu_id(), n.id), n.node_type)));
        }
    }
    let json = timeline_to_chrome_trace(&rows, |npu, id| types.get(&(npu, id)).copied())?;
    write_or_print(a.output.as_deref(), &json)
}

fn generate(a: GenerateArgs) -> Result<()> {
    let mut spec: Option<WorkloadSpec> = match (&a.spec, a.preset) {
        (Some(p), _) => {
            Some(serde_json::from_str(&read_text(p)?).with_context(|| format!("parsing workload {}", p.display()))?)
        }
        (None, Some(preset)) => {
            let npus = a.npus.context("--preset needs --npus")?;
            Some(preset.spec(npus)?)
        }
        (None, None) => None,
    };
    if spec.is_none() {
        let (Some(p), Some(n)) = (a.parallelism, a.npus) else {
            bail!("give --spec, --preset, or both --parallelism and --npus");
        };
        spec = Some(WorkloadSpec::new(p, n));
    }
    let mut spec = spec.expect("set above");
    if let Some(p) = a.parallelism {
        spec.parallelism = p;
    }
    if let Some(n) = a.npus {
        spec.npus = n;
    }
    macro_rules! overlay {
        ($($f:ident),*) => { $(if let Some(v) = a.$f { spec.$f = v; })* };
    }
    overlay!(layers, compute_cycles, weight_bytes, activation_bytes, microbatches);
    if a.dims.is_some() {
        spec.dims = a.dims;
    }
    let traces = generate_workload(&spec)?;
    write_traces(&a.out, &traces)
}

fn sim_config(s: &SystemArgs) -> SimConfig {
    let mut topo = s.topology;
    if let Some(bw) = s.bw {
        topo.bandwidth = bw;
    }
    if let Some(l) = s.latency {
        topo.latency = l;
    }
    let mut cfg = SimConfig::new(topo);
    cfg.cycle_time = s.cycle_time;
    cfg
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let traces = read_trace_dir(&a.trace_dir)?;
    let cfg = sim_config(&a.system);
    let r = run_simulation(&traces, &cfg)?;
    if let Some(p) = &a.timeline {
        fs::write(p, timeline_csv_string(&r.timeline)).with_context(|| format!("writing {}", p.display()))?;
    }
    let breakdown = compute_breakdown(&r);
    if let Some(p) = &a.breakdown {
        let mut csv = String::from("npu,compute,exposed_comm\n");
        for b in &breakdown {
            writeln!(csv, "{},{},{}", b.npu, b.compute, b.exposed_comm).unwrap();
        }
        fs::write(p, csv).with_context(|| format!("writing {}", p.display()))?;
    }
    let summary = json!({
        "makespan": r.makespan,
        "topology": cfg.topology.to_string(),
        "npus": r.npus.iter().map(|s| json!({
            "npu": s.npu,
            "compute_busy": s.compute_busy,
            "comm_busy": s.comm_busy,
            "mem_busy": s.mem_busy,
            "exposed_comm": s.exposed_comm,
        })).collect::<Vec<_>>(),
    });
    write_or_print(a.output.as_deref(), &(serde_json::to_string_pretty(&summary)? + "\n"))
}

fn sweep(a: SweepArgs) -> Result<()> {
    let mut template = SimConfig::new(a.topology);
    if let Some(bw) = a.bw {
        template.topology.bandwidth = bw;
    }
    let cells = match (a.bw_grid.is_empty(), a.npus.is_empty()) {
        (false, _) => bandwidth_cells(&a.preset.spec(template.topology.npus())?, &template, &a.bw_grid),
        (true, false) => {
            let specs: HashMap<u32, WorkloadSpec> =
                a.npus.iter().map(|&n| Ok((n, a.preset.spec(n)?))).collect::<Result<_>>()?;
            npu_cells(|n| specs[&n].clone(), template.topology.kind, &a.npus, template.topology.bandwidth, &template)
        }
        (true, true) => bail!("give --npus or --bw-grid"),
    };
    let exec = if a.sequential { Execution::Sequential } else { Execution::Auto };
    let rows = run_cells(&cells, exec)?;
    write_or_print(a.output.as_deref(), &sweep_csv(&rows))
}

fn fit(a: FitArgs) -> Result<()> {
    let mut corpus = Vec::with_capacity(a.corpus.len());
    for dir in &a.corpus {
        let traces = read_trace_dir(dir)?;
        corpus.push(build_master_trace(&traces).with_context(|| format!("merging {}", dir.display()))?);
    }
    let cfg = FitConfig { k_components: a.components, n_clusters: a.clusters, seed: a.seed, ..FitConfig::default() };
    let (models, warnings) = fit_models(&corpus, &cfg)?;
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    fs::write(&a.output, models.to_json()).with_context(|| format!("writing {}", a.output.display()))
}

fn synthesize(a: SynthesizeArgs) -> Result<()> {
    let models = SynthModels::from_json(&read_text(&a.model)?).with_context(|| format!("loading {}", a.model.display()))?;
    let cfg = SynthConfig { npus: a.npus, seed: a.seed, length: a.length, jitter: a.jitter };
    let traces = models.synthesize(&cfg)?;
    write_traces(&a.out, &traces)
}
