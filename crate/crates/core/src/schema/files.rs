//! Multi-NPU layout: one file per NPU, named `<prefix>.<npu_id>.et`.

use std::fs;
use std::path::{Path, PathBuf};

use super::{decode_trace, detect_format, encode_trace, Format, Trace, TraceIoError};

pub fn trace_file_name(prefix: &str, npu_id: u32) -> String {
    format!("{prefix}.{npu_id}.et")
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TraceIoError + '_ {
    move |source| TraceIoError::Io { path: path.display().to_string(), source }
}

pub fn write_trace_file(path: &Path, trace: &Trace, format: Format) -> Result<(), TraceIoError> {
    let bytes = encode_trace(trace, format)
        .map_err(|source| TraceIoError::Encode { path: path.display().to_string(), source })?;
    fs::write(path, bytes).map_err(io_err(path))
}

/// Reads one `.et` file, sniffing JSON vs binary from the magic bytes.
pub fn read_trace_file(path: &Path) -> Result<Trace, TraceIoError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    decode_trace(&bytes, detect_format(&bytes))
        .map_err(|source| TraceIoError::Decode { path: path.display().to_string(), source })
}

/// Writes every trace to `dir/<prefix>.<npu_id>.et`, creating `dir` if needed.
pub fn write_trace_dir(dir: &Path, prefix: &str, traces: &[Trace], format: Format) -> Result<Vec<PathBuf>, TraceIoError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    traces
        .iter()
        .map(|t| {
            let path = dir.join(trace_file_name(prefix, t.npu_id()));
            write_trace_file(&path, t, format).map(|_| path)
        })
        .collect()
}

/// Loads every `*.et` file in `dir`, ordered by npu_id.
pub fn read_trace_dir(dir: &Path) -> Result<Vec<Trace>, TraceIoError> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "et") && p.is_file())
        .collect();
    if paths.is_empty() {
        return Err(TraceIoError::Empty(dir.display().to_string()));
    }
    paths.sort();
    let mut traces = paths.iter().map(|p| read_trace_file(p)).collect::<Result<Vec<_>, _>>()?;
    traces.sort_by_key(|t| t.npu_id());
    for pair in traces.windows(2) {
        if pair[0].npu_id() == pair[1].npu_id() {
            return Err(TraceIoError::DuplicateNpu { path: dir.display().to_string(), npu: pair[0].npu_id() });
        }
    }
    Ok(traces)
}
