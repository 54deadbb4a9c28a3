use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    ComputeStart,
    ComputeEnd,
    CommStart,
    CommEnd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pass {
    Forward,
    Backward,
}

/// One line of the timeline trace. Compute events carry `layer` and
/// `pass`, communication events carry `bucket`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimelineEvent {
    pub event: EventKind,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub layer: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub bucket: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub pass: Option<Pass>,
    pub virtual_time: f64,
    pub step: u64,
}

impl TimelineEvent {
    pub(crate) fn compute(event: EventKind, layer: usize, pass: Pass, virtual_time: f64, step: u64) -> Self {
        Self {
            event,
            layer: Some(layer),
            bucket: None,
            pass: Some(pass),
            virtual_time,
            step,
        }
    }

    pub(crate) fn comm(event: EventKind, bucket: usize, virtual_time: f64, step: u64) -> Self {
        Self {
            event,
            layer: None,
            bucket: Some(bucket),
            pass: None,
            virtual_time,
            step,
        }
    }
}

/// Writes events as JSON lines.
pub fn write_jsonl(events: &[TimelineEvent], w: &mut impl Write) -> Result<()> {
    for e in events {
        serde_json::to_writer(&mut *w, e).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}
