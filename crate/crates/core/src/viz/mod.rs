//! DOT graphs of traces and Chrome trace-event JSON of simulator timelines.

mod chrome;
mod dot;
mod timeline;

pub use chrome::{class_tid, timeline_to_chrome_trace, ChromeError};
pub use dot::emit_dot;
pub use timeline::{read_timeline_csv, timeline_csv_string, write_timeline_csv, RowKind, TimelineError, TimelineRow};
