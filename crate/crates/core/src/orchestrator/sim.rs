//! Discrete-event replay of the worker pool on a virtual clock.

use super::{
    draw_seed, health_check, initial_queue, split_phases, AbortReason, AttemptRecord,
    ConfigSnapshot, FaultModel, Health, Job, NodeProfile, NodeView, OutageRecord, PoolOptions,
    QueuedTask, RestartReason, RestartRecord, RunMode, RunRecord, RunStatus, TaskRecord,
};
use crate::metrics::{node_state, MetricKind, MetricRecord, MetricsStore};
use crate::pyramid::PyramidSpec;
use crate::render::{estimate_task_seconds, CostModel, RenderRequest, RendererConfig};
use rand::{Rng, SeedableRng};
use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BinaryHeap, VecDeque};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum EventKind {
    // Listed in processing priority for simultaneous events.
    Finish { node: usize, attempt: u64 },
    Fail { node: usize, attempt: u64 },
    Watchdog { node: usize, attempt: u64 },
    NodeUp { node: usize },
    DeallocEnd { entry: usize },
    DeallocStart { entry: usize },
}

impl EventKind {
    fn priority(&self) -> u8 {
        match self {
            EventKind::Finish { .. } => 0,
            EventKind::Fail { .. } => 1,
            EventKind::Watchdog { .. } => 2,
            EventKind::NodeUp { .. } => 3,
            EventKind::DeallocEnd { .. } => 4,
            EventKind::DeallocStart { .. } => 5,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Event {
    time: f64,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Event {}
impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        self.time
            .total_cmp(&other.time)
            .then(self.kind.priority().cmp(&other.kind.priority()))
            .then(self.seq.cmp(&other.seq))
    }
}

#[derive(Debug, Clone, Copy)]
struct Running {
    attempt_id: u64,
    task: QueuedTask,
    start: f64,
    outlier: bool,
    attempt: u32,
}

#[derive(Debug)]
struct NodeState {
    profile: NodeProfile,
    running: Option<Running>,
    /// Number of active deallocations covering the node.
    held: u32,
    offline_until: f64,
}

impl NodeState {
    fn available(&self, now: f64) -> bool {
        self.running.is_none() && self.held == 0 && now >= self.offline_until
    }
}

/// Running median of completed GPU task durations.
#[derive(Default)]
struct RunningMedian {
    low: BinaryHeap<OrdF64>,
    high: BinaryHeap<Reverse<OrdF64>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct OrdF64(f64);
impl Eq for OrdF64 {}
impl PartialOrd for OrdF64 {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for OrdF64 {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

impl RunningMedian {
    fn push(&mut self, v: f64) {
        if self.low.peek().is_none_or(|top| v <= top.0) {
            self.low.push(OrdF64(v));
        } else {
            self.high.push(Reverse(OrdF64(v)));
        }
        if self.low.len() > self.high.len() + 1 {
            let x = self.low.pop().expect("non-empty");
            self.high.push(Reverse(x));
        } else if self.high.len() > self.low.len() {
            let Reverse(x) = self.high.pop().expect("non-empty");
            self.low.push(x);
        }
    }

    fn get(&self) -> Option<f64> {
        match (self.low.peek(), self.high.peek()) {
            (None, _) => None,
            (Some(l), Some(Reverse(h))) if self.low.len() == self.high.len() => {
                Some(0.5 * (l.0 + h.0))
            }
            (Some(l), _) => Some(l.0),
        }
    }
}

struct Sim<'a> {
    jobs: &'a [Job],
    spec: &'a PyramidSpec,
    cost: &'a CostModel,
    faults: &'a FaultModel,
    opts: &'a PoolOptions,
    metrics: Option<&'a MetricsStore>,

    now: f64,
    seq: u64,
    next_attempt: u64,
    events: BinaryHeap<Reverse<Event>>,
    queue: VecDeque<QueuedTask>,
    nodes: Vec<NodeState>,
    starts: Vec<u32>,
    failures: Vec<u32>,
    done: usize,
    total: usize,
    median: RunningMedian,
    groups: BTreeMap<u32, Vec<usize>>,
    /// Deallocation schedule index -> outage start, for the ones processed.
    outage_started: BTreeMap<usize, f64>,

    tasks: Vec<TaskRecord>,
    aborted: Vec<AttemptRecord>,
    restarts: Vec<RestartRecord>,
    abort_reason: Option<String>,
}

pub(super) fn simulate(
    jobs: &[Job],
    nodes: &[NodeProfile],
    spec: &PyramidSpec,
    cost: &CostModel,
    faults: &FaultModel,
    opts: &PoolOptions,
    metrics: Option<&MetricsStore>,
) -> RunRecord {
    let queue = initial_queue(jobs);
    let total = queue.len();
    let mut groups: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, n) in nodes.iter().enumerate() {
        groups.entry(n.group).or_default().push(i);
    }
    let mut sim = Sim {
        jobs,
        spec,
        cost,
        faults,
        opts,
        metrics,
        now: 0.0,
        seq: 0,
        next_attempt: 0,
        events: BinaryHeap::new(),
        queue,
        nodes: nodes
            .iter()
            .map(|p| NodeState {
                profile: p.clone(),
                running: None,
                held: 0,
                offline_until: 0.0,
            })
            .collect(),
        starts: vec![0; total],
        failures: vec![0; total],
        done: 0,
        total,
        median: RunningMedian::default(),
        groups,
        outage_started: BTreeMap::new(),
        tasks: Vec::with_capacity(total),
        aborted: Vec::new(),
        restarts: Vec::new(),
        abort_reason: None,
    };
    for (entry, d) in faults.deallocations.iter().enumerate() {
        if d.outage_seconds > 0.0 && sim.groups.contains_key(&d.group) {
            sim.schedule(d.time, EventKind::DeallocStart { entry });
        }
    }
    sim.run();
    sim.finish(nodes)
}

impl Sim<'_> {
    fn schedule(&mut self, time: f64, kind: EventKind) {
        self.seq += 1;
        self.events.push(Reverse(Event {
            time,
            seq: self.seq,
            kind,
        }));
    }

    fn emit(&self, rec: MetricRecord) {
        if let Some(store) = self.metrics {
            if let Err(e) = store.append(rec) {
                log::warn!("dropping metric: {e}");
            }
        }
    }

    fn node_state(&self, node: usize, value: f64) {
        let id = self.nodes[node].profile.node_id;
        self.emit(MetricRecord::new(
            self.now,
            id,
            None,
            MetricKind::NodeState,
            value,
        ));
    }

    fn run(&mut self) {
        self.dispatch();
        while self.done < self.total && self.abort_reason.is_none() {
            let Some(Reverse(ev)) = self.events.pop() else {
                // Nothing left to wake anyone up; cannot happen with a
                // non-empty pool, but never spin.
                self.abort_reason = Some("event queue drained with tasks outstanding".into());
                break;
            };
            self.now = ev.time;
            self.handle(ev.kind);
            self.dispatch();
        }
    }

    fn handle(&mut self, kind: EventKind) {
        match kind {
            EventKind::Finish { node, attempt } => {
                let Some(run) = self.current(node, attempt) else {
                    return;
                };
                self.complete(node, run);
            }
            EventKind::Fail { node, attempt } => {
                let Some(run) = self.current(node, attempt) else {
                    return;
                };
                self.abort_attempt(node, run, AbortReason::NodeFailure);
                // replacement node: same hardware profile, healthy GPU
                let n = &mut self.nodes[node];
                n.profile.gpu_ok = true;
                n.offline_until = self.now + self.faults.replacement_seconds;
                let until = n.offline_until;
                self.node_state(node, node_state::OFFLINE);
                self.schedule(until, EventKind::NodeUp { node });
            }
            EventKind::Watchdog { node, attempt } => {
                let Some(run) = self.current(node, attempt) else {
                    return;
                };
                let view = NodeView {
                    gpu_ok: self.nodes[node].profile.gpu_ok,
                    running_since: Some(run.start),
                };
                let median = self.median_reference(&run.task);
                match health_check(&view, self.now, median, &self.opts.health) {
                    Health::NeedsRestart(reason) => {
                        self.abort_attempt(node, run, AbortReason::SlowTask);
                        self.restart(node, reason);
                    }
                    // the median grew since the watchdog was armed
                    Health::Healthy => {
                        if !self.arm_watchdog(node, &run) {
                            self.abort_attempt(node, run, AbortReason::SlowTask);
                            self.restart(node, RestartReason::SlowTask);
                        }
                    }
                }
            }
            EventKind::NodeUp { node } => {
                if self.now >= self.nodes[node].offline_until && self.nodes[node].held == 0 {
                    self.node_state(node, node_state::IDLE);
                }
            }
            EventKind::DeallocStart { entry } => {
                let d = self.faults.deallocations[entry];
                self.outage_started.insert(entry, self.now);
                let members = self.groups[&d.group].clone();
                for node in members {
                    if let Some(run) = self.nodes[node].running {
                        self.abort_attempt(node, run, AbortReason::Deallocated);
                    }
                    self.nodes[node].held += 1;
                    self.node_state(node, node_state::OFFLINE);
                }
                self.schedule(self.now + d.outage_seconds, EventKind::DeallocEnd { entry });
            }
            EventKind::DeallocEnd { entry } => {
                let d = self.faults.deallocations[entry];
                let members = self.groups[&d.group].clone();
                for node in members {
                    let n = &mut self.nodes[node];
                    n.held -= 1;
                    if n.held == 0 && self.now >= n.offline_until {
                        self.node_state(node, node_state::IDLE);
                    }
                }
            }
        }
    }

    fn current(&self, node: usize, attempt: u64) -> Option<Running> {
        self.nodes[node].running.filter(|r| r.attempt_id == attempt)
    }

    fn nominal_seconds(&self, task: &QueuedTask) -> f64 {
        let t = &self.jobs[task.job].tasks[task.idx];
        let ratio = t.span_px as f64 / self.spec.task_px as f64;
        self.cost.base_seconds * ratio * ratio
    }

    /// Median of completed GPU task durations, or the nominal cost before
    /// any task has completed.
    fn median_reference(&self, task: &QueuedTask) -> f64 {
        self.median
            .get()
            .unwrap_or_else(|| self.nominal_seconds(task))
    }

    fn restart(&mut self, node: usize, reason: RestartReason) {
        let n = &mut self.nodes[node];
        n.profile.gpu_ok = true;
        n.offline_until = self.now + self.opts.health.restart_seconds;
        let until = n.offline_until;
        self.restarts.push(RestartRecord {
            node: n.profile.node_id,
            time: self.now,
            reason,
        });
        self.node_state(node, node_state::OFFLINE);
        self.schedule(until, EventKind::NodeUp { node });
    }

    fn dispatch(&mut self) {
        if self.abort_reason.is_some() {
            return;
        }
        for node in 0..self.nodes.len() {
            if self.queue.is_empty() {
                break;
            }
            if !self.nodes[node].available(self.now) {
                continue;
            }
            if self.opts.health.enabled && !self.nodes[node].profile.gpu_ok {
                self.restart(node, RestartReason::NoGpu);
                continue;
            }
            let task = self.queue.pop_front().expect("checked non-empty");
            self.start(node, task);
        }
    }

    fn start(&mut self, node: usize, task: QueuedTask) {
        self.starts[task.ordinal] += 1;
        let attempt = self.starts[task.ordinal];
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(draw_seed(
            self.opts.seed,
            task.ordinal,
            attempt,
        ));
        let lose_gpu: f64 = rng.random();
        let fail: f64 = rng.random();
        let fail_at: f64 = rng.random();
        if lose_gpu < self.faults.outlier_probability {
            self.nodes[node].profile.gpu_ok = false;
        }
        let request = RenderRequest {
            task: self.jobs[task.job].tasks[task.idx].clone(),
            spec: *self.spec,
            config: RendererConfig::default(),
        };
        let profile = &self.nodes[node].profile;
        let outlier = !profile.gpu_ok;
        let duration = estimate_task_seconds(
            &request,
            self.cost,
            profile,
            self.faults.outlier_factor,
            &mut rng,
        );

        self.next_attempt += 1;
        let run = Running {
            attempt_id: self.next_attempt,
            task,
            start: self.now,
            outlier,
            attempt,
        };
        self.nodes[node].running = Some(run);
        if fail < self.faults.node_failure_rate {
            self.schedule(
                self.now + fail_at * duration,
                EventKind::Fail {
                    node,
                    attempt: run.attempt_id,
                },
            );
        } else {
            self.schedule(
                self.now + duration,
                EventKind::Finish {
                    node,
                    attempt: run.attempt_id,
                },
            );
        }
        self.node_state(node, node_state::BUSY);
        if self.opts.health.enabled {
            self.arm_watchdog(node, &run);
        }
    }

    /// Returns false when the deadline has already passed.
    fn arm_watchdog(&mut self, node: usize, run: &Running) -> bool {
        let limit = self.opts.health.slow_task_multiple * self.median_reference(&run.task);
        // strictly after the limit so the check sees it exceeded
        let at = run.start + limit * (1.0 + 1e-9);
        if at <= self.now {
            return false;
        }
        self.schedule(
            at,
            EventKind::Watchdog {
                node,
                attempt: run.attempt_id,
            },
        );
        true
    }

    fn complete(&mut self, node: usize, run: Running) {
        self.nodes[node].running = None;
        let task = &self.jobs[run.task.job].tasks[run.task.idx];
        let duration = self.now - run.start;
        let (render_s, tiling_s, storage_s) = split_phases(duration, self.cost.phase_split);
        let node_id = self.nodes[node].profile.node_id;
        for (kind, v) in MetricKind::PHASES
            .iter()
            .zip([render_s, tiling_s, storage_s])
        {
            self.emit(MetricRecord::new(
                self.now,
                node_id,
                Some(&task.task_id),
                *kind,
                v,
            ));
        }
        if !run.outlier {
            self.median.push(duration);
        }
        self.tasks.push(TaskRecord {
            task_id: task.task_id.clone(),
            level: task.level,
            node: node_id,
            attempt: run.attempt,
            start: run.start,
            end: self.now,
            render_s,
            tiling_s,
            storage_s,
            outlier: run.outlier,
        });
        self.done += 1;
        self.node_state(node, node_state::IDLE);
    }

    fn abort_attempt(&mut self, node: usize, run: Running, reason: AbortReason) {
        self.nodes[node].running = None;
        let task = &self.jobs[run.task.job].tasks[run.task.idx];
        let counts = reason.counts_as_failure();
        self.aborted.push(AttemptRecord {
            task_id: task.task_id.clone(),
            node: self.nodes[node].profile.node_id,
            attempt: run.attempt,
            start: run.start,
            end: self.now,
            reason,
        });
        if counts {
            self.failures[run.task.ordinal] += 1;
            if self.failures[run.task.ordinal] >= self.opts.max_attempts {
                self.abort_reason = Some(format!(
                    "task {} failed {} times",
                    task.task_id, self.opts.max_attempts
                ));
                return;
            }
        }
        self.queue.push_front(run.task);
    }

    fn finish(self, nodes: &[NodeProfile]) -> RunRecord {
        let makespan = if self.abort_reason.is_some() {
            self.now
        } else {
            self.tasks.iter().map(|t| t.end).fold(0.0, f64::max)
        };
        let outlier_lost: f64 = self
            .tasks
            .iter()
            .filter(|t| t.outlier)
            .map(TaskRecord::duration)
            .fold(0.0, |a, d| a + d);
        let mut outages = Vec::new();
        for (&entry, &start) in &self.outage_started {
            if start >= makespan {
                continue;
            }
            let d = self.faults.deallocations[entry];
            let members: Vec<u32> = self.groups[&d.group]
                .iter()
                .map(|&i| self.nodes[i].profile.node_id)
                .collect();
            let scheduled_end = start + d.outage_seconds;
            let effective_end = scheduled_end.min(makespan);
            outages.push(OutageRecord {
                group: d.group,
                lost_s: members.len() as f64 * (effective_end - start),
                nodes: members,
                start,
                scheduled_end,
                effective_end,
            });
        }
        let outage_lost = outages.iter().map(|o| o.lost_s).fold(0.0, |a, l| a + l);
        RunRecord {
            run_id: self.opts.run_id.clone(),
            mode: RunMode::Simulated,
            node_count: nodes.len() as u32,
            makespan_s: makespan,
            status: match self.abort_reason {
                None => RunStatus::Complete,
                Some(reason) => RunStatus::Aborted { reason },
            },
            total_tasks: self.total,
            tasks: self.tasks,
            aborted_attempts: self.aborted,
            outlier_lost_time_s: outlier_lost,
            outage_lost_time_s: outage_lost,
            outages,
            restarts: self.restarts,
            metrics_overhead_s: 0.0,
            config: ConfigSnapshot {
                seed: self.opts.seed,
                faults: self.faults.clone(),
                health: self.opts.health,
                max_attempts: self.opts.max_attempts,
                cost: Some(*self.cost),
                nodes: nodes.to_vec(),
            },
        }
    }
}
