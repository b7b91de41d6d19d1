//! Per-task metrics from a simulated run, synthetic GPU telemetry, and the
//! per-node compute heatmap.

use tilefarm::metrics::{heatmap_csv, synthesize_gpu_telemetry, MetricsStore, PowerModel};
use tilefarm::orchestrator::{
    enqueue_jobs, run_pool, ExecMode, FaultModel, NodeProfile, PoolOptions,
};
use tilefarm::pyramid::PyramidSpec;
use tilefarm::render::CostModel;
use tilefarm::scene::{build_scene, SceneOptions};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = PyramidSpec::terapixel_like(8)?;
    let scene = build_scene(&[], &spec, &SceneOptions::default())?;
    let jobs = enqueue_jobs(&spec, &scene, Some(2))?;
    let metrics = MetricsStore::in_memory();
    let mode = ExecMode::Simulated {
        spec,
        cost: CostModel::default(),
    };
    let run = run_pool(
        &jobs,
        &NodeProfile::pool(16, 4),
        mode,
        &FaultModel::none(),
        &PoolOptions::default(),
        Some(&metrics),
    )?;
    synthesize_gpu_telemetry(&run, &PowerModel::default(), &metrics)?;
    println!(
        "{} metric records over {:.0} s",
        metrics.len(),
        run.makespan_s
    );
    if let Some(kw) = metrics.average_power_kw() {
        println!("average draw {kw:.3} kW");
    }
    print!("{}", heatmap_csv(&metrics.per_node_compute_seconds()));
    Ok(())
}
