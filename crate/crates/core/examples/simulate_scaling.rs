//! Full-size task load on a virtual clock for growing pool sizes, with the
//! speedup table that results.

use tilefarm::analysis::{normalize_deallocations, speedup_report, RunSummary};
use tilefarm::orchestrator::{
    enqueue_jobs, run_pool, ExecMode, FaultModel, NodeProfile, PoolOptions,
};
use tilefarm::pyramid::PyramidSpec;
use tilefarm::render::CostModel;
use tilefarm::scene::{build_scene, SceneOptions};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = PyramidSpec::terapixel();
    let scene = build_scene(&[], &spec, &SceneOptions::default())?;
    let jobs = enqueue_jobs(&spec, &scene, Some(1))?;
    let mut runs = Vec::new();
    for n in [64, 128, 256, 512, 1024] {
        let opts = PoolOptions {
            run_id: n.to_string(),
            ..PoolOptions::default()
        };
        let mode = ExecMode::Simulated {
            spec,
            cost: CostModel::default(),
        };
        let record = run_pool(
            &jobs,
            &NodeProfile::pool(n, 4),
            mode,
            &FaultModel::none(),
            &opts,
            None,
        )?;
        println!(
            "{n:>5} nodes: {:>8.0} s, work efficiency {:.4}",
            record.makespan_s,
            record.work_efficiency()
        );
        runs.push(normalize_deallocations(&RunSummary::deallocations_of(
            &record,
        ))?);
    }
    print!("{}", speedup_report(&runs, "64")?.to_csv());
    Ok(())
}
