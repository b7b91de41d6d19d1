//! Worker threads that render, tile and store for real.

use super::{
    draw_seed, initial_queue, AbortReason, AttemptRecord, ConfigSnapshot, FaultModel, Job,
    NodeProfile, PoolOptions, QueuedTask, RunMode, RunRecord, RunStatus, TaskRecord,
};
use crate::metrics::{node_state, MetricKind, MetricRecord, MetricsStore};
use crate::pyramid::PyramidSpec;
use crate::render::{RenderRequest, Renderer, RendererConfig};
use crate::store::TileSink;
use crate::tiler::{encode_tile, split_and_derive, EncodePolicy, Kernel};
use parking_lot::{Condvar, Mutex};
use rand::{Rng, SeedableRng};
use std::collections::VecDeque;
use std::time::{Duration, Instant};

pub(super) struct RealContext<'a> {
    pub spec: PyramidSpec,
    pub renderer: &'a dyn Renderer,
    pub renderer_config: RendererConfig,
    pub kernel: Kernel,
    pub encode: EncodePolicy,
    pub sink: &'a dyn TileSink,
}

struct Shared {
    queue: VecDeque<QueuedTask>,
    in_flight: usize,
    starts: Vec<u32>,
    failures: Vec<u32>,
    abort_reason: Option<String>,
    tasks: Vec<TaskRecord>,
    aborted: Vec<AttemptRecord>,
    metrics_overhead: Duration,
}

enum Outcome {
    Done {
        render_s: f64,
        tiling_s: f64,
        storage_s: f64,
    },
    Failed(AbortReason),
}

pub(super) fn run(
    jobs: &[Job],
    nodes: &[NodeProfile],
    ctx: &RealContext<'_>,
    faults: &FaultModel,
    opts: &PoolOptions,
    metrics: Option<&MetricsStore>,
) -> RunRecord {
    if !faults.deallocations.is_empty() || faults.outlier_probability > 0.0 {
        log::warn!("deallocations and GPU loss are only modelled in simulated runs");
    }
    let queue = initial_queue(jobs);
    let total = queue.len();
    let shared = Mutex::new(Shared {
        queue,
        in_flight: 0,
        starts: vec![0; total],
        failures: vec![0; total],
        abort_reason: None,
        tasks: Vec::with_capacity(total),
        aborted: Vec::new(),
        metrics_overhead: Duration::ZERO,
    });
    let wake = Condvar::new();
    let epoch = Instant::now();

    std::thread::scope(|s| {
        for node in nodes {
            let shared = &shared;
            let wake = &wake;
            s.spawn(move || worker(node, jobs, ctx, faults, opts, metrics, shared, wake, epoch));
        }
    });

    let state = shared.into_inner();
    let makespan = state.tasks.iter().map(|t| t.end).fold(0.0, f64::max);
    let status = match state.abort_reason {
        None => RunStatus::Complete,
        Some(reason) => RunStatus::Aborted { reason },
    };
    RunRecord {
        run_id: opts.run_id.clone(),
        mode: RunMode::Real,
        node_count: nodes.len() as u32,
        makespan_s: makespan,
        status,
        total_tasks: total,
        outlier_lost_time_s: 0.0,
        outage_lost_time_s: 0.0,
        tasks: state.tasks,
        aborted_attempts: state.aborted,
        outages: Vec::new(),
        restarts: Vec::new(),
        metrics_overhead_s: state.metrics_overhead.as_secs_f64(),
        config: ConfigSnapshot {
            seed: opts.seed,
            faults: faults.clone(),
            health: opts.health,
            max_attempts: opts.max_attempts,
            cost: None,
            nodes: nodes.to_vec(),
        },
    }
}

#[allow(clippy::too_many_arguments)]
fn worker(
    node: &NodeProfile,
    jobs: &[Job],
    ctx: &RealContext<'_>,
    faults: &FaultModel,
    opts: &PoolOptions,
    metrics: Option<&MetricsStore>,
    shared: &Mutex<Shared>,
    wake: &Condvar,
    epoch: Instant,
) {
    let emit = |recs: &[MetricRecord]| -> Duration {
        let Some(store) = metrics else {
            return Duration::ZERO;
        };
        let t0 = Instant::now();
        for r in recs {
            if let Err(e) = store.append(r.clone()) {
                log::warn!("dropping metric: {e}");
            }
        }
        t0.elapsed()
    };

    loop {
        let (task, attempt) = {
            let mut st = shared.lock();
            loop {
                if st.abort_reason.is_some() {
                    return;
                }
                if let Some(task) = st.queue.pop_front() {
                    st.in_flight += 1;
                    st.starts[task.ordinal] += 1;
                    break (task, st.starts[task.ordinal]);
                }
                if st.in_flight == 0 {
                    return;
                }
                wake.wait(&mut st);
            }
        };
        let render_task = &jobs[task.job].tasks[task.idx];
        let start = epoch.elapsed().as_secs_f64();
        let mut overhead = emit(&[MetricRecord::new(
            start,
            node.node_id,
            None,
            MetricKind::NodeState,
            node_state::BUSY,
        )]);

        let mut rng =
            rand_chacha::ChaCha8Rng::seed_from_u64(draw_seed(opts.seed, task.ordinal, attempt));
        let crash = rng.random::<f64>() < faults.node_failure_rate;
        let outcome = execute(ctx, render_task, crash);
        let end = epoch.elapsed().as_secs_f64();

        let mut recs = Vec::new();
        if let Outcome::Done {
            render_s,
            tiling_s,
            storage_s,
        } = &outcome
        {
            for (kind, v) in MetricKind::PHASES
                .iter()
                .zip([*render_s, *tiling_s, *storage_s])
            {
                recs.push(MetricRecord::new(
                    end,
                    node.node_id,
                    Some(&render_task.task_id),
                    *kind,
                    v,
                ));
            }
        }
        recs.push(MetricRecord::new(
            end,
            node.node_id,
            None,
            MetricKind::NodeState,
            node_state::IDLE,
        ));
        overhead += emit(&recs);

        let mut st = shared.lock();
        st.in_flight -= 1;
        st.metrics_overhead += overhead;
        match outcome {
            Outcome::Done {
                render_s,
                tiling_s,
                storage_s,
            } => st.tasks.push(TaskRecord {
                task_id: render_task.task_id.clone(),
                level: render_task.level,
                node: node.node_id,
                attempt,
                start,
                end,
                render_s,
                tiling_s,
                storage_s,
                outlier: false,
            }),
            Outcome::Failed(reason) => {
                log::warn!(
                    "task {} attempt {attempt} on node {}: {reason:?}",
                    render_task.task_id,
                    node.node_id
                );
                st.aborted.push(AttemptRecord {
                    task_id: render_task.task_id.clone(),
                    node: node.node_id,
                    attempt,
                    start,
                    end,
                    reason,
                });
                st.failures[task.ordinal] += 1;
                if st.failures[task.ordinal] >= opts.max_attempts {
                    st.abort_reason = Some(format!(
                        "task {} failed {} times",
                        render_task.task_id, opts.max_attempts
                    ));
                } else {
                    st.queue.push_front(task);
                }
            }
        }
        drop(st);
        wake.notify_all();
    }
}

fn execute(ctx: &RealContext<'_>, task: &crate::pyramid::RenderTask, crash: bool) -> Outcome {
    let t0 = Instant::now();
    let request = RenderRequest {
        task: task.clone(),
        spec: ctx.spec,
        config: ctx.renderer_config,
    };
    let region = match ctx.renderer.render_region(&request) {
        Ok(r) => r,
        Err(e) => return Outcome::Failed(AbortReason::RenderError(e.to_string())),
    };
    if crash {
        return Outcome::Failed(AbortReason::NodeFailure);
    }
    let t1 = Instant::now();
    let tiles = match split_and_derive(&region, task, &ctx.spec, &ctx.kernel) {
        Ok(t) => t,
        Err(e) => return Outcome::Failed(AbortReason::RenderError(e.to_string())),
    };
    let mut encoded = Vec::with_capacity(tiles.len());
    for tile in &tiles {
        match encode_tile(tile, &ctx.spec, ctx.encode) {
            Ok(bytes) => encoded.push((tile.coord, bytes)),
            Err(e) => return Outcome::Failed(AbortReason::StorageError(e.to_string())),
        }
    }
    let t2 = Instant::now();
    for (coord, bytes) in &encoded {
        if let Err(e) = ctx.sink.put_tile(*coord, bytes) {
            return Outcome::Failed(AbortReason::StorageError(e.to_string()));
        }
    }
    let t3 = Instant::now();
    Outcome::Done {
        render_s: (t1 - t0).as_secs_f64(),
        tiling_s: (t2 - t1).as_secs_f64(),
        storage_s: (t3 - t2).as_secs_f64(),
    }
}
