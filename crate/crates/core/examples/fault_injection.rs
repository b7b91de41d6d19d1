//! GPU loss, node failures and a group deallocation in one simulated run,
//! with and without health checks.

use tilefarm::analysis::{normalize, RunSummary, TimeBasis};
use tilefarm::orchestrator::{
    enqueue_jobs, run_pool, Deallocation, ExecMode, FaultModel, HealthPolicy, NodeProfile,
    PoolOptions,
};
use tilefarm::pyramid::PyramidSpec;
use tilefarm::render::CostModel;
use tilefarm::scene::{build_scene, SceneOptions};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = PyramidSpec::terapixel_like(10)?;
    let scene = build_scene(&[], &spec, &SceneOptions::default())?;
    let jobs = enqueue_jobs(&spec, &scene, Some(9))?;
    let faults = FaultModel {
        outlier_probability: 0.002,
        node_failure_rate: 0.001,
        deallocations: vec![Deallocation {
            time: 3000.0,
            group: 2,
            outage_seconds: Deallocation::DEFAULT_OUTAGE_SECONDS,
        }],
        ..FaultModel::default()
    };
    for enabled in [false, true] {
        let opts = PoolOptions {
            run_id: if enabled { "checked" } else { "unchecked" }.into(),
            seed: 3,
            health: HealthPolicy {
                enabled,
                ..HealthPolicy::default()
            },
            ..PoolOptions::default()
        };
        let mode = ExecMode::Simulated {
            spec,
            cost: CostModel::default(),
        };
        let r = run_pool(&jobs, &NodeProfile::pool(64, 4), mode, &faults, &opts, None)?;
        let n = normalize(&RunSummary::of(&r), TimeBasis::Normalized)?;
        println!(
            "{:>9}: makespan {:.0} s, {} aborted attempts, {} restarts, outlier {:.0} s, outage {:.0} s, {:.2} effective nodes",
            r.run_id,
            r.makespan_s,
            r.aborted_attempts.len(),
            r.restarts.len(),
            r.outlier_lost_time_s,
            r.outage_lost_time_s,
            n.normalized_nodes
        );
    }
    Ok(())
}
