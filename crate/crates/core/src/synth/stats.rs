//! Distances used to judge synthesized traces against their sources.

use super::master::comm_sequences;
use super::model::MODELED_TYPES;
use super::MasterTrace;
use crate::schema::Trace;

/// Two-sample Kolmogorov-Smirnov statistic: the largest gap between the
/// empirical distribution functions.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return if a.len() == b.len() { 0.0 } else { 1.0 };
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
    }
    d
}

pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Share of each modeled collective type among the master's ops.
pub fn type_frequencies(m: &MasterTrace) -> Vec<f64> {
    let mut f = vec![0.0; MODELED_TYPES.len()];
    for op in &m.ops {
        if let Some(i) = MODELED_TYPES.iter().position(|&t| t == op.comm_type) {
            f[i] += 1.0;
        }
    }
    let n: f64 = f.iter().sum();
    if n > 0.0 {
        f.iter_mut().for_each(|x| *x /= n);
    }
    f
}

/// Pairs `(synthesized rank, source rank)` whose (type, size) sequences are
/// identical and at least `min_len` long.
pub fn copied_sequences(synthesized: &[Trace], sources: &[Trace], min_len: usize) -> Vec<(u32, u32)> {
    let key = |ts: &[Trace]| {
        comm_sequences(ts)
            .unwrap_or_default()
            .into_iter()
            .map(|(r, s)| (r, s.into_iter().map(|o| (o.comm_type, o.size)).collect::<Vec<_>>()))
            .collect::<Vec<_>>()
    };
    let src = key(sources);
    let mut out = Vec::new();
    for (r, seq) in key(synthesized) {
        if seq.len() < min_len {
            continue;
        }
        out.extend(src.iter().filter(|(_, s)| *s == seq).map(|(q, _)| (r, *q)));
    }
    out
}
