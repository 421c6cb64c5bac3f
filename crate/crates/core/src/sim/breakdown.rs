use super::engine::SimResult;

/// One bar of a per-NPU time breakdown.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BreakdownRow {
    pub npu: u32,
    pub compute: u64,
    pub exposed_comm: u64,
}

impl BreakdownRow {
    pub fn total(&self) -> u64 {
        self.compute + self.exposed_comm
    }
}

pub fn compute_breakdown(result: &SimResult) -> Vec<BreakdownRow> {
    result
        .npus
        .iter()
        .map(|s| BreakdownRow { npu: s.npu, compute: s.compute_busy, exposed_comm: s.exposed_comm })
        .collect()
}

/// Measure of the instants covered by some `comm` interval and no `comp`
/// interval. Intervals are half-open `[start, finish)`.
pub fn exposed_time(comm: &[(u64, u64)], comp: &[(u64, u64)]) -> u64 {
    // +1 opens an interval, -1 closes it; closes sort before opens at a tie
    let mut edges: Vec<(u64, i8, bool)> = Vec::with_capacity(2 * (comm.len() + comp.len()));
    for &(s, f) in comm.iter().filter(|(s, f)| f > s) {
        edges.push((s, 1, true));
        edges.push((f, -1, true));
    }
    for &(s, f) in comp.iter().filter(|(s, f)| f > s) {
        edges.push((s, 1, false));
        edges.push((f, -1, false));
    }
    edges.sort_unstable();
    let (mut n_comm, mut n_comp) = (0i64, 0i64);
    let mut last = 0u64;
    let mut exposed = 0u64;
    for (t, delta, is_comm) in edges {
        if n_comm > 0 && n_comp == 0 {
            exposed += t - last;
        }
        last = t;
        if is_comm {
            n_comm += delta as i64;
        } else {
            n_comp += delta as i64;
        }
    }
    exposed
}
