use std::collections::{BTreeSet, HashMap};

use serde_json::{json, Value};

use super::timeline::{RowKind, TimelineRow};
use crate::schema::NodeType;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ChromeError {
    #[error("callback for node {node_id} on gpu {gpu_id} without a matching issue")]
    UnmatchedCallback { gpu_id: u32, node_id: u64 },
    #[error("node {node_id} on gpu {gpu_id} issued again while in flight")]
    DuplicateIssue { gpu_id: u32, node_id: u64 },
    #[error("node {node_id} on gpu {gpu_id}: callback at {callback} precedes issue at {issue}")]
    NegativeDuration { gpu_id: u32, node_id: u64, issue: u64, callback: u64 },
    #[error("node {node_id} on gpu {gpu_id} issued but never completed")]
    Unfinished { gpu_id: u32, node_id: u64 },
}

/// Chrome thread id for a node class: 1 memory, 2 compute, 3 communication.
pub fn class_tid(t: Option<NodeType>) -> u32 {
    match t {
        Some(t) if t.is_mem() => 1,
        Some(NodeType::Comp) => 2,
        Some(t) if t.is_comm() => 3,
        _ => 0,
    }
}

const THREAD_NAMES: [(u32, &str); 3] = [(1, "memory"), (2, "compute"), (3, "communication")];

/// Pairs issue/callback rows into Chrome complete ("X") events, one cycle
/// rendered as one microsecond. Metadata ("M") events name processes and
/// threads and record the time unit.
pub fn timeline_to_chrome_trace(
    rows: &[TimelineRow],
    type_of: impl Fn(u32, u64) -> Option<NodeType>,
) -> Result<String, ChromeError> {
    let mut open: HashMap<(u32, u64), (usize, u64)> = HashMap::new();
    // (issue row index, event) so output follows issue order
    let mut events: Vec<(usize, Value)> = Vec::new();
    let mut gpus = BTreeSet::new();
    for (i, r) in rows.iter().enumerate() {
        let key = (r.gpu_id, r.node_id);
        match r.kind {
            RowKind::Issue => {
                if open.insert(key, (i, r.curr_cycle)).is_some() {
                    return Err(ChromeError::DuplicateIssue { gpu_id: r.gpu_id, node_id: r.node_id });
                }
            }
            RowKind::Callback => {
                let (at, issue) = open
                    .remove(&key)
                    .ok_or(ChromeError::UnmatchedCallback { gpu_id: r.gpu_id, node_id: r.node_id })?;
                if r.curr_cycle < issue {
                    return Err(ChromeError::NegativeDuration {
                        gpu_id: r.gpu_id,
                        node_id: r.node_id,
                        issue,
                        callback: r.curr_cycle,
                    });
                }
                gpus.insert(r.gpu_id);
                events.push((
                    at,
                    json!({
                        "name": rows[at].node_name,
                        "ph": "X",
                        "pid": r.gpu_id,
                        "tid": class_tid(type_of(r.gpu_id, r.node_id)),
                        "ts": issue,
                        "dur": r.curr_cycle - issue,
                        "args": {"node_id": r.node_id},
                    }),
                ));
            }
        }
    }
    if let Some(&(gpu_id, node_id)) = open.keys().min() {
        return Err(ChromeError::Unfinished { gpu_id, node_id });
    }
    events.sort_by_key(|(at, _)| *at);

    let mut out = Vec::with_capacity(events.len() + 4 * gpus.len());
    for &g in &gpus {
        out.push(json!({"name": "process_name", "ph": "M", "pid": g, "args": {"name": format!("NPU {g}")}}));
        out.push(json!({"name": "process_labels", "ph": "M", "pid": g, "args": {"labels": "1 cycle = 1 us"}}));
        for (tid, name) in THREAD_NAMES {
            out.push(json!({"name": "thread_name", "ph": "M", "pid": g, "tid": tid, "args": {"name": name}}));
        }
    }
    out.extend(events.into_iter().map(|(_, e)| e));
    Ok(serde_json::to_string_pretty(&Value::Array(out)).expect("chrome trace serialization") + "\n")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(kind: RowKind, gpu: u32, cycle: u64, node: u64) -> TimelineRow {
        TimelineRow { kind, gpu_id: gpu, curr_cycle: cycle, node_id: node, node_name: "COMP_NODE".into() }
    }

    fn x_events(json: &str) -> Vec<Value> {
        let v: Value = serde_json::from_str(json).unwrap();
        v.as_array().unwrap().iter().filter(|e| e["ph"] == "X").cloned().collect()
    }

    #[test]
    fn single_pair() {
        let rows = [row(RowKind::Issue, 0, 100, 5), row(RowKind::Callback, 0, 150, 5)];
        let out = timeline_to_chrome_trace(&rows, |_, _| Some(NodeType::Comp)).unwrap();
        let ev = x_events(&out);
        assert_eq!(ev.len(), 1);
        assert_eq!(ev[0]["pid"], 0);
        assert_eq!(ev[0]["tid"], 2);
        assert_eq!(ev[0]["ts"], 100);
        assert_eq!(ev[0]["dur"], 50);
        assert_eq!(ev[0]["name"], "COMP_NODE");
    }

    #[test]
    fn tid_classes() {
        assert_eq!(class_tid(Some(NodeType::MemLoad)), 1);
        assert_eq!(class_tid(Some(NodeType::MemStore)), 1);
        assert_eq!(class_tid(Some(NodeType::Comp)), 2);
        assert_eq!(class_tid(Some(NodeType::CommColl)), 3);
        assert_eq!(class_tid(Some(NodeType::CommSend)), 3);
        assert_eq!(class_tid(Some(NodeType::CommRecv)), 3);
    }

    #[test]
    fn pairing_errors() {
        let err = timeline_to_chrome_trace(&[row(RowKind::Callback, 0, 1, 9)], |_, _| None).unwrap_err();
        assert_eq!(err, ChromeError::UnmatchedCallback { gpu_id: 0, node_id: 9 });
        assert!(err.to_string().contains("node 9"));
        let dup = [row(RowKind::Issue, 0, 1, 9), row(RowKind::Issue, 0, 2, 9)];
        assert!(matches!(timeline_to_chrome_trace(&dup, |_, _| None), Err(ChromeError::DuplicateIssue { .. })));
        let neg = [row(RowKind::Issue, 0, 5, 9), row(RowKind::Callback, 0, 2, 9)];
        assert!(matches!(timeline_to_chrome_trace(&neg, |_, _| None), Err(ChromeError::NegativeDuration { .. })));
        let open = [row(RowKind::Issue, 0, 5, 9)];
        assert!(matches!(timeline_to_chrome_trace(&open, |_, _| None), Err(ChromeError::Unfinished { .. })));
    }
}
