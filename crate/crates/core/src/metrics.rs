//! Append-only, typed run telemetry.
//!
//! One log file per run, one JSON object per line:
//!
//! ```text
//! {"t":151.2,"node":7,"task":"l12-r0-c3","kind":"render_duration","value":136.1,"unit":"s"}
//! ```
//!
//! | field  | meaning                                                   |
//! |--------|-----------------------------------------------------------|
//! | `t`    | seconds since run start (virtual clock in simulation)     |
//! | `node` | node id                                                   |
//! | `task` | task id, omitted for node-level samples                   |
//! | `kind` | one of the [`MetricKind`] names                           |
//! | `value`| measurement                                               |
//! | `unit` | fixed per kind: `s`, `percent`, `celsius`, `W`, `state`   |
//!
//! Timestamps must not decrease per writer, where a writer is one
//! `(node, kind)` stream. Different writers may interleave freely.

use crate::orchestrator::RunRecord;
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("{kind:?} is measured in {expected:?}, not {got:?}")]
    InvalidUnit {
        kind: MetricKind,
        expected: Unit,
        got: Unit,
    },
    #[error("non-finite value or timestamp for {0:?}")]
    NonFinite(MetricKind),
    #[error("node {node} {kind:?}: timestamp {got} precedes {last}")]
    OutOfOrder {
        node: u32,
        kind: MetricKind,
        last: f64,
        got: f64,
    },
    #[error("metrics log I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("metrics log line {line}: {source}")]
    Parse {
        line: usize,
        source: serde_json::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    RenderDuration,
    TilingDuration,
    StorageDuration,
    GpuUtilization,
    GpuTemperature,
    GpuPower,
    NodeState,
}

impl MetricKind {
    pub fn unit(self) -> Unit {
        match self {
            MetricKind::RenderDuration
            | MetricKind::TilingDuration
            | MetricKind::StorageDuration => Unit::Seconds,
            MetricKind::GpuUtilization => Unit::Percent,
            MetricKind::GpuTemperature => Unit::Celsius,
            MetricKind::GpuPower => Unit::Watts,
            MetricKind::NodeState => Unit::State,
        }
    }

    pub const PHASES: [MetricKind; 3] = [
        MetricKind::RenderDuration,
        MetricKind::TilingDuration,
        MetricKind::StorageDuration,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Unit {
    #[serde(rename = "s")]
    Seconds,
    #[serde(rename = "percent")]
    Percent,
    #[serde(rename = "celsius")]
    Celsius,
    #[serde(rename = "W")]
    Watts,
    #[serde(rename = "state")]
    State,
}

/// `node_state` values.
pub mod node_state {
    pub const IDLE: f64 = 0.0;
    pub const BUSY: f64 = 1.0;
    pub const OFFLINE: f64 = 2.0;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    #[serde(rename = "t")]
    pub timestamp: f64,
    #[serde(rename = "node")]
    pub node_id: u32,
    #[serde(rename = "task", default, skip_serializing_if = "Option::is_none")]
    pub task_id: Option<String>,
    pub kind: MetricKind,
    pub value: f64,
    pub unit: Unit,
}

impl MetricRecord {
    /// Record with the kind's canonical unit.
    pub fn new(
        timestamp: f64,
        node_id: u32,
        task_id: Option<&str>,
        kind: MetricKind,
        value: f64,
    ) -> Self {
        Self {
            timestamp,
            node_id,
            task_id: task_id.map(str::to_string),
            kind,
            value,
            unit: kind.unit(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricFilter {
    pub kind: Option<MetricKind>,
    pub node: Option<u32>,
    pub task: Option<String>,
    /// Inclusive time range.
    pub from: Option<f64>,
    pub to: Option<f64>,
}

impl MetricFilter {
    pub fn kind(mut self, kind: MetricKind) -> Self {
        self.kind = Some(kind);
        self
    }
    pub fn node(mut self, node: u32) -> Self {
        self.node = Some(node);
        self
    }
    pub fn task(mut self, task: &str) -> Self {
        self.task = Some(task.to_string());
        self
    }
    pub fn between(mut self, from: f64, to: f64) -> Self {
        self.from = Some(from);
        self.to = Some(to);
        self
    }

    fn matches(&self, r: &MetricRecord) -> bool {
        self.kind.is_none_or(|k| k == r.kind)
            && self.node.is_none_or(|n| n == r.node_id)
            && self
                .task
                .as_deref()
                .is_none_or(|t| r.task_id.as_deref() == Some(t))
            && self.from.is_none_or(|f| r.timestamp >= f)
            && self.to.is_none_or(|t| r.timestamp <= t)
    }
}

const LOG_BUFFER_BYTES: usize = 64 * 1024;

#[derive(Default)]
struct Inner {
    records: Vec<MetricRecord>,
    last: HashMap<(u32, MetricKind), f64>,
    log: Option<BufWriter<File>>,
}

/// Multi-writer metrics store; optionally backed by a log file.
#[derive(Default)]
pub struct MetricsStore {
    inner: Mutex<Inner>,
}

impl std::fmt::Debug for MetricsStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MetricsStore")
            .field("records", &self.len())
            .finish()
    }
}

impl MetricsStore {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Open (or create) a log file, loading any records already in it.
    pub fn open(path: &Path) -> Result<Self, MetricsError> {
        let mut inner = Inner::default();
        if path.exists() {
            let reader = BufReader::new(File::open(path)?);
            for (i, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let rec: MetricRecord =
                    serde_json::from_str(&line).map_err(|source| MetricsError::Parse {
                        line: i + 1,
                        source,
                    })?;
                let last = inner
                    .last
                    .entry((rec.node_id, rec.kind))
                    .or_insert(rec.timestamp);
                *last = last.max(rec.timestamp);
                inner.records.push(rec);
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        inner.log = Some(BufWriter::with_capacity(LOG_BUFFER_BYTES, file));
        Ok(Self {
            inner: Mutex::new(inner),
        })
    }

    /// Starts a new log at `path`, discarding any previous contents.
    pub fn create(path: &Path) -> Result<Self, MetricsError> {
        let file = File::create(path)?;
        Ok(Self {
            inner: Mutex::new(Inner {
                log: Some(BufWriter::with_capacity(LOG_BUFFER_BYTES, file)),
                ..Inner::default()
            }),
        })
    }

    pub fn append(&self, record: MetricRecord) -> Result<(), MetricsError> {
        let expected = record.kind.unit();
        if record.unit != expected {
            return Err(MetricsError::InvalidUnit {
                kind: record.kind,
                expected,
                got: record.unit,
            });
        }
        if !record.value.is_finite() || !record.timestamp.is_finite() {
            return Err(MetricsError::NonFinite(record.kind));
        }
        let mut inner = self.inner.lock();
        let key = (record.node_id, record.kind);
        if let Some(&last) = inner.last.get(&key) {
            if record.timestamp < last {
                return Err(MetricsError::OutOfOrder {
                    node: record.node_id,
                    kind: record.kind,
                    last,
                    got: record.timestamp,
                });
            }
        }
        inner.last.insert(key, record.timestamp);
        if let Some(log) = inner.log.as_mut() {
            serde_json::to_writer(&mut *log, &record).map_err(std::io::Error::from)?;
            log.write_all(b"\n")?;
        }
        inner.records.push(record);
        Ok(())
    }

    pub fn flush(&self) -> Result<(), MetricsError> {
        if let Some(log) = self.inner.lock().log.as_mut() {
            log.flush()?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.inner.lock().records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Matching records ordered by timestamp (ties keep append order).
    pub fn query(&self, filter: &MetricFilter) -> Vec<MetricRecord> {
        let mut out: Vec<MetricRecord> = self
            .inner
            .lock()
            .records
            .iter()
            .filter(|r| filter.matches(r))
            .cloned()
            .collect();
        out.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
        out
    }

    /// Sum of the three phase durations per node.
    pub fn per_node_compute_seconds(&self) -> BTreeMap<u32, f64> {
        let mut totals = BTreeMap::new();
        for r in self.inner.lock().records.iter() {
            if MetricKind::PHASES.contains(&r.kind) {
                *totals.entry(r.node_id).or_insert(0.0) += r.value;
            }
        }
        totals
    }

    /// Per-task sum of the three phase durations.
    pub fn per_task_compute_seconds(&self) -> BTreeMap<String, f64> {
        let mut totals = BTreeMap::new();
        for r in self.inner.lock().records.iter() {
            if let (true, Some(t)) = (MetricKind::PHASES.contains(&r.kind), &r.task_id) {
                *totals.entry(t.clone()).or_insert(0.0) += r.value;
            }
        }
        totals
    }

    /// Mean total GPU power over the run in kW: per-node mean sample power, summed.
    pub fn average_power_kw(&self) -> Option<f64> {
        let mut per_node: BTreeMap<u32, (f64, usize)> = BTreeMap::new();
        for r in self.inner.lock().records.iter() {
            if r.kind == MetricKind::GpuPower {
                let e = per_node.entry(r.node_id).or_insert((0.0, 0));
                e.0 += r.value;
                e.1 += 1;
            }
        }
        if per_node.is_empty() {
            return None;
        }
        Some(per_node.values().map(|(s, n)| s / *n as f64).sum::<f64>() / 1000.0)
    }
}

/// Per-node compute totals laid out on a near-square grid for heat-map
/// plotting: `node,row,col,total_seconds`, one line per node.
pub fn heatmap_csv(totals: &BTreeMap<u32, f64>) -> String {
    let cols = (totals.len() as f64).sqrt().ceil().max(1.0) as usize;
    let mut out = String::from("node,row,col,total_seconds\n");
    for (i, (node, secs)) in totals.iter().enumerate() {
        out.push_str(&format!("{node},{},{},{secs}\n", i / cols, i % cols));
    }
    out
}

/// Two-point GPU model used to synthesise telemetry in simulated runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PowerModel {
    pub idle_watts: f64,
    pub busy_watts: f64,
    pub idle_celsius: f64,
    pub busy_celsius: f64,
}

impl Default for PowerModel {
    fn default() -> Self {
        Self {
            idle_watts: 40.0,
            busy_watts: 250.0,
            idle_celsius: 35.0,
            busy_celsius: 75.0,
        }
    }
}

/// Emit 1 Hz utilisation, power and temperature samples for every node over
/// `[0, makespan]`, derived from when each node was busy in `run`.
/// Returns the number of records appended per kind.
pub fn synthesize_gpu_telemetry(
    run: &RunRecord,
    model: &PowerModel,
    store: &MetricsStore,
) -> Result<usize, MetricsError> {
    let mut busy: BTreeMap<u32, Vec<(f64, f64)>> = BTreeMap::new();
    for node in 0..run.node_count {
        busy.insert(node, Vec::new());
    }
    for t in &run.tasks {
        busy.entry(t.node).or_default().push((t.start, t.end));
    }
    for a in &run.aborted_attempts {
        busy.entry(a.node).or_default().push((a.start, a.end));
    }
    let seconds = run.makespan_s.max(0.0).floor() as usize;
    let mut per_kind = 0;
    for (node, mut spans) in busy {
        spans.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut cursor = 0;
        for s in 0..=seconds {
            let t = s as f64;
            while cursor < spans.len() && spans[cursor].1 <= t {
                cursor += 1;
            }
            let is_busy = spans[cursor..]
                .iter()
                .take_while(|sp| sp.0 <= t)
                .any(|sp| sp.1 > t);
            let (util, watts, temp) = if is_busy {
                (100.0, model.busy_watts, model.busy_celsius)
            } else {
                (0.0, model.idle_watts, model.idle_celsius)
            };
            store.append(MetricRecord::new(
                t,
                node,
                None,
                MetricKind::GpuUtilization,
                util,
            ))?;
            store.append(MetricRecord::new(
                t,
                node,
                None,
                MetricKind::GpuPower,
                watts,
            ))?;
            store.append(MetricRecord::new(
                t,
                node,
                None,
                MetricKind::GpuTemperature,
                temp,
            ))?;
        }
        per_kind += seconds + 1;
    }
    Ok(per_kind)
}
