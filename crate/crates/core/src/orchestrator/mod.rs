//! Job queue and worker pool.
//!
//! Render tasks are grouped into one job per rendered level and pulled from a
//! single shared FIFO by idle workers. Failed or preempted attempts go back to
//! the head of the queue. Two execution modes share the queue, retry and
//! accounting logic:
//!
//! * [`ExecMode::Real`] runs render, tile and store on worker threads.
//! * [`ExecMode::Simulated`] replays the same schedule on a virtual clock with
//!   synthetic task costs and injected faults, for scaling studies.

mod real;
mod sim;

use crate::metrics::MetricsStore;
use crate::pyramid::{PyramidSpec, RenderTask};
use crate::render::{CostModel, Renderer, RendererConfig};
use crate::scene::Scene;
use crate::store::TileSink;
use crate::tiler::{EncodePolicy, Kernel};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error("the node pool is empty")]
    NoNodes,
    #[error("scene {scene} does not match the pyramid: {reason}")]
    SceneMismatch { scene: String, reason: String },
    #[error("invalid fault model: {0}")]
    Faults(String),
    #[error("invalid node profile for node {0}: speed factor must be positive")]
    Node(u32),
    #[error("max_attempts must be at least 1")]
    Attempts,
    #[error("malformed run record: {0}")]
    Parse(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobCounters {
    pub queued: usize,
    pub running: usize,
    pub done: usize,
    pub failed: usize,
}

/// All render tasks of one rendered level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Job {
    pub job_id: String,
    pub level: u32,
    pub tasks: Vec<RenderTask>,
    pub counters: JobCounters,
}

/// One job per rendered level, highest level first. With a seed the tasks
/// inside each job are shuffled deterministically; otherwise they stay
/// row-major.
pub fn enqueue_jobs(
    spec: &PyramidSpec,
    scene: &Scene,
    seed: Option<u64>,
) -> Result<Vec<Job>, OrchestratorError> {
    let mismatch = |reason: String| OrchestratorError::SceneMismatch {
        scene: scene.scene_id.clone(),
        reason,
    };
    if scene.world_side_mm != spec.world_side_mm {
        return Err(mismatch(format!(
            "world side {} mm vs plan {} mm",
            scene.world_side_mm, spec.world_side_mm
        )));
    }
    if scene.rendered_levels != spec.rendered_levels() {
        return Err(mismatch(format!(
            "rendered levels {:?} vs plan {:?}",
            scene.rendered_levels,
            spec.rendered_levels()
        )));
    }
    let mut rng = seed.map(rand_chacha::ChaCha8Rng::seed_from_u64);
    Ok(spec
        .rendered_levels()
        .into_iter()
        .map(|level| {
            let mut tasks = spec.tasks_at(level, &scene.scene_id);
            if let Some(rng) = rng.as_mut() {
                tasks.shuffle(rng);
            }
            Job {
                job_id: format!("render-l{level}"),
                level,
                counters: JobCounters {
                    queued: tasks.len(),
                    ..JobCounters::default()
                },
                tasks,
            }
        })
        .collect())
}

/// A compute node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeProfile {
    pub node_id: u32,
    /// Duration multiplier; 1.0 is nominal, larger is slower.
    pub speed_factor: f64,
    pub gpu_ok: bool,
    /// Deallocation group.
    pub group: u32,
}

impl NodeProfile {
    pub fn nominal(node_id: u32, group: u32) -> Self {
        Self {
            node_id,
            speed_factor: 1.0,
            gpu_ok: true,
            group,
        }
    }

    /// `n` nominal nodes in consecutive deallocation groups of `group_size`.
    pub fn pool(n: u32, group_size: u32) -> Vec<Self> {
        let g = group_size.max(1);
        (0..n).map(|i| Self::nominal(i, i / g)).collect()
    }
}

/// Deallocation group size observed on the cloud provider.
pub const DEFAULT_GROUP_SIZE: u32 = 4;

/// A group of nodes withdrawn at `time` and restored `outage_seconds` later.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Deallocation {
    pub time: f64,
    pub group: u32,
    #[serde(default = "Deallocation::default_outage")]
    pub outage_seconds: f64,
}

impl Deallocation {
    pub const DEFAULT_OUTAGE_SECONDS: f64 = 1200.0;

    fn default_outage() -> f64 {
        Self::DEFAULT_OUTAGE_SECONDS
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FaultModel {
    /// Chance, per task start, that the node loses GPU acceleration.
    pub outlier_probability: f64,
    /// Slowdown of tasks on a node without GPU.
    pub outlier_factor: f64,
    pub deallocations: Vec<Deallocation>,
    /// Chance, per task start, that the node dies during the attempt.
    pub node_failure_rate: f64,
    /// Time until a failed node is replaced.
    pub replacement_seconds: f64,
}

impl Default for FaultModel {
    fn default() -> Self {
        Self {
            outlier_probability: 0.0,
            outlier_factor: 70.0,
            deallocations: Vec::new(),
            node_failure_rate: 0.0,
            replacement_seconds: 600.0,
        }
    }
}

impl FaultModel {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<(), OrchestratorError> {
        let prob = |name: &str, p: f64| {
            if (0.0..=1.0).contains(&p) {
                Ok(())
            } else {
                Err(OrchestratorError::Faults(format!(
                    "{name} = {p} is not in [0, 1]"
                )))
            }
        };
        prob("outlier_probability", self.outlier_probability)?;
        prob("node_failure_rate", self.node_failure_rate)?;
        if !(self.outlier_factor >= 1.0) {
            return Err(OrchestratorError::Faults(format!(
                "outlier_factor = {} must be >= 1",
                self.outlier_factor
            )));
        }
        if !(self.replacement_seconds >= 0.0) {
            return Err(OrchestratorError::Faults(
                "replacement_seconds must be >= 0".into(),
            ));
        }
        for d in &self.deallocations {
            if !(d.time >= 0.0 && d.outage_seconds >= 0.0) {
                return Err(OrchestratorError::Faults(format!(
                    "deallocation {d:?} needs non-negative time and outage"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HealthPolicy {
    pub enabled: bool,
    /// A task running longer than this multiple of the median is flagged.
    pub slow_task_multiple: f64,
    pub restart_seconds: f64,
}

impl Default for HealthPolicy {
    fn default() -> Self {
        Self {
            enabled: false,
            slow_task_multiple: 10.0,
            restart_seconds: 120.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RestartReason {
    NoGpu,
    SlowTask,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Health {
    Healthy,
    NeedsRestart(RestartReason),
}

/// What a health check can see of a node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeView {
    pub gpu_ok: bool,
    /// Start time of the task currently running, if any.
    pub running_since: Option<f64>,
}

pub fn health_check(
    node: &NodeView,
    now: f64,
    median_task_seconds: f64,
    policy: &HealthPolicy,
) -> Health {
    if !node.gpu_ok {
        return Health::NeedsRestart(RestartReason::NoGpu);
    }
    if let Some(start) = node.running_since {
        if now - start > policy.slow_task_multiple * median_task_seconds {
            return Health::NeedsRestart(RestartReason::SlowTask);
        }
    }
    Health::Healthy
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolOptions {
    pub run_id: String,
    pub seed: u64,
    pub health: HealthPolicy,
    /// Attempts that fail (node failure, render or storage error) before the
    /// run is abandoned. Preemption by deallocation or health restarts does
    /// not count.
    pub max_attempts: u32,
}

impl Default for PoolOptions {
    fn default() -> Self {
        Self {
            run_id: "run".into(),
            seed: 0,
            health: HealthPolicy::default(),
            max_attempts: 3,
        }
    }
}

pub enum ExecMode<'a> {
    Simulated {
        spec: PyramidSpec,
        cost: CostModel,
    },
    Real {
        spec: PyramidSpec,
        renderer: &'a dyn Renderer,
        renderer_config: RendererConfig,
        kernel: Kernel,
        encode: EncodePolicy,
        sink: &'a dyn TileSink,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    Simulated,
    Real,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum RunStatus {
    Complete,
    Aborted { reason: String },
}

/// A completed task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub task_id: String,
    pub level: u32,
    pub node: u32,
    /// 1-based count of starts including this one.
    pub attempt: u32,
    pub start: f64,
    pub end: f64,
    pub render_s: f64,
    pub tiling_s: f64,
    pub storage_s: f64,
    /// Ran on a node without GPU acceleration.
    pub outlier: bool,
}

impl TaskRecord {
    pub fn duration(&self) -> f64 {
        self.end - self.start
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "detail", rename_all = "snake_case")]
pub enum AbortReason {
    NodeFailure,
    Deallocated,
    SlowTask,
    RenderError(String),
    StorageError(String),
}

impl AbortReason {
    /// Whether the attempt counts towards `max_attempts`.
    pub fn counts_as_failure(&self) -> bool {
        !matches!(self, AbortReason::Deallocated | AbortReason::SlowTask)
    }
}

/// An attempt that did not complete.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttemptRecord {
    pub task_id: String,
    pub node: u32,
    pub attempt: u32,
    pub start: f64,
    pub end: f64,
    pub reason: AbortReason,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutageRecord {
    pub group: u32,
    pub nodes: Vec<u32>,
    pub start: f64,
    pub scheduled_end: f64,
    /// `scheduled_end` clipped to the makespan.
    pub effective_end: f64,
    /// `nodes.len() * (effective_end - start)`.
    pub lost_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestartRecord {
    pub node: u32,
    pub time: f64,
    pub reason: RestartReason,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigSnapshot {
    pub seed: u64,
    pub faults: FaultModel,
    pub health: HealthPolicy,
    pub max_attempts: u32,
    pub cost: Option<CostModel>,
    pub nodes: Vec<NodeProfile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub mode: RunMode,
    pub node_count: u32,
    /// Wall clock from first task start to last completion.
    pub makespan_s: f64,
    pub status: RunStatus,
    pub total_tasks: usize,
    pub tasks: Vec<TaskRecord>,
    pub aborted_attempts: Vec<AttemptRecord>,
    /// Summed durations of completed tasks that ran without GPU.
    pub outlier_lost_time_s: f64,
    /// Summed node-seconds withdrawn by deallocations during the run.
    pub outage_lost_time_s: f64,
    pub outages: Vec<OutageRecord>,
    pub restarts: Vec<RestartRecord>,
    /// Real mode: time spent appending metrics.
    pub metrics_overhead_s: f64,
    pub config: ConfigSnapshot,
}

impl RunRecord {
    pub fn is_complete(&self) -> bool {
        self.status == RunStatus::Complete
    }

    pub fn completions_per_task(&self) -> HashMap<&str, usize> {
        let mut m = HashMap::new();
        for t in &self.tasks {
            *m.entry(t.task_id.as_str()).or_insert(0) += 1;
        }
        m
    }

    /// Sum of completed task durations.
    pub fn task_seconds(&self) -> f64 {
        self.tasks
            .iter()
            .map(TaskRecord::duration)
            .fold(0.0, |a, d| a + d)
    }

    /// Completed work over node-time available: `sum(durations) / (n * makespan)`.
    pub fn work_efficiency(&self) -> f64 {
        if self.makespan_s <= 0.0 {
            return 1.0;
        }
        self.task_seconds() / (self.node_count as f64 * self.makespan_s)
    }

    /// Latest completion among tasks that ran with GPU acceleration.
    pub fn non_outlier_makespan_s(&self) -> f64 {
        self.tasks
            .iter()
            .filter(|t| !t.outlier)
            .map(|t| t.end)
            .fold(0.0, f64::max)
    }

    pub fn to_text(&self) -> String {
        serde_json::to_string_pretty(self).expect("run record serializes")
    }

    pub fn from_text(text: &str) -> Result<Self, OrchestratorError> {
        Ok(serde_json::from_str(text)?)
    }
}

pub fn run_pool(
    jobs: &[Job],
    nodes: &[NodeProfile],
    mode: ExecMode<'_>,
    faults: &FaultModel,
    opts: &PoolOptions,
    metrics: Option<&MetricsStore>,
) -> Result<RunRecord, OrchestratorError> {
    if nodes.is_empty() {
        return Err(OrchestratorError::NoNodes);
    }
    if let Some(n) = nodes.iter().find(|n| !(n.speed_factor > 0.0)) {
        return Err(OrchestratorError::Node(n.node_id));
    }
    if opts.max_attempts == 0 {
        return Err(OrchestratorError::Attempts);
    }
    faults.validate()?;
    match mode {
        ExecMode::Simulated { spec, cost } => Ok(sim::simulate(
            jobs, nodes, &spec, &cost, faults, opts, metrics,
        )),
        ExecMode::Real {
            spec,
            renderer,
            renderer_config,
            kernel,
            encode,
            sink,
        } => Ok(real::run(
            jobs,
            nodes,
            &real::RealContext {
                spec,
                renderer,
                renderer_config,
                kernel,
                encode,
                sink,
            },
            faults,
            opts,
            metrics,
        )),
    }
}

/// Position of a task in the job list.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct QueuedTask {
    pub job: usize,
    pub idx: usize,
    /// Global ordinal across all jobs, used to key random draws.
    pub ordinal: usize,
}

pub(crate) fn initial_queue(jobs: &[Job]) -> std::collections::VecDeque<QueuedTask> {
    let mut ordinal = 0;
    let mut q = std::collections::VecDeque::new();
    for (j, job) in jobs.iter().enumerate() {
        for idx in 0..job.tasks.len() {
            q.push_back(QueuedTask {
                job: j,
                idx,
                ordinal,
            });
            ordinal += 1;
        }
    }
    q
}

/// Splits a task duration into render, tiling and storage phases that sum
/// back to exactly `duration`.
pub(crate) fn split_phases(duration: f64, split: [f64; 3]) -> (f64, f64, f64) {
    let total: f64 = split.iter().sum();
    let render = duration * split[0] / total;
    let tiling = duration * split[1] / total;
    let storage = duration - (render + tiling);
    (render, tiling, storage)
}

pub(crate) fn draw_seed(seed: u64, ordinal: usize, start: u32) -> u64 {
    let mut z =
        seed ^ (ordinal as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ ((start as u64) << 48);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{build_scene, SceneOptions};

    fn scene_for(spec: &PyramidSpec) -> Scene {
        build_scene(&[], spec, &SceneOptions::default()).unwrap()
    }

    #[test]
    fn full_size_jobs() {
        let spec = PyramidSpec::terapixel();
        let jobs = enqueue_jobs(&spec, &scene_for(&spec), None).unwrap();
        let sizes: Vec<usize> = jobs.iter().map(|j| j.tasks.len()).collect();
        assert_eq!(sizes, [65_536, 256, 1]);
        assert_eq!(jobs[0].counters.queued, 65_536);
    }

    #[test]
    fn four_level_pyramid_is_one_task() {
        let spec = PyramidSpec::terapixel_like(4).unwrap();
        let jobs = enqueue_jobs(&spec, &scene_for(&spec), Some(1)).unwrap();
        assert_eq!(jobs.len(), 1);
        assert_eq!(jobs[0].tasks.len(), 1);
    }

    #[test]
    fn queued_multiset_equals_plan() {
        for levels in 1..=8 {
            let spec = PyramidSpec::terapixel_like(levels).unwrap();
            let jobs = enqueue_jobs(&spec, &scene_for(&spec), Some(levels as u64)).unwrap();
            let mut queued: Vec<RenderTask> = jobs.into_iter().flat_map(|j| j.tasks).collect();
            let mut planned = spec.tasks("city");
            queued.sort();
            planned.sort();
            assert_eq!(queued, planned);
        }
    }

    #[test]
    fn shuffle_is_seeded() {
        let spec = PyramidSpec::terapixel_like(8).unwrap();
        let scene = scene_for(&spec);
        let a = enqueue_jobs(&spec, &scene, Some(7)).unwrap();
        let b = enqueue_jobs(&spec, &scene, Some(7)).unwrap();
        let c = enqueue_jobs(&spec, &scene, Some(8)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn scene_mismatch_rejected() {
        let spec = PyramidSpec::terapixel_like(8).unwrap();
        let other = PyramidSpec::terapixel_like(6).unwrap();
        assert!(matches!(
            enqueue_jobs(&spec, &scene_for(&other), None),
            Err(OrchestratorError::SceneMismatch { .. })
        ));
    }

    #[test]
    fn health_check_cases() {
        let policy = HealthPolicy {
            enabled: true,
            ..HealthPolicy::default()
        };
        let sick = NodeView {
            gpu_ok: false,
            running_since: None,
        };
        assert_eq!(
            health_check(&sick, 0.0, 150.0, &policy),
            Health::NeedsRestart(RestartReason::NoGpu)
        );
        let slow = NodeView {
            gpu_ok: true,
            running_since: Some(0.0),
        };
        assert_eq!(
            health_check(&slow, 1501.0, 150.0, &policy),
            Health::NeedsRestart(RestartReason::SlowTask)
        );
        assert_eq!(health_check(&slow, 1499.0, 150.0, &policy), Health::Healthy);
        let idle = NodeView {
            gpu_ok: true,
            running_since: None,
        };
        assert_eq!(health_check(&idle, 1e9, 150.0, &policy), Health::Healthy);
    }

    #[test]
    fn phases_sum_exactly() {
        for d in [150.0, 0.1 + 0.2, 10_500.0, 1.0 / 3.0, 149.37] {
            let (r, t, s) = split_phases(d, [0.9, 0.07, 0.03]);
            assert_eq!(r + t + s, d);
        }
    }

    #[test]
    fn fault_model_validation() {
        assert!(FaultModel::default().validate().is_ok());
        let bad = FaultModel {
            outlier_probability: 1.5,
            ..FaultModel::default()
        };
        assert!(bad.validate().is_err());
        let bad = FaultModel {
            outlier_factor: 0.5,
            ..FaultModel::default()
        };
        assert!(bad.validate().is_err());
    }
}
