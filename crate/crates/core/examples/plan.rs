//! Level table, task counts and storage estimate for a pyramid.
//!
//! ```text
//! cargo run --example plan -- 12
//! ```

use tilefarm::pyramid::{plan_pyramid, storage_estimate};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let max_level = std::env::args()
        .nth(1)
        .map(|s| s.parse())
        .transpose()?
        .unwrap_or(12);
    let plan = plan_pyramid(max_level, 512, 4096, 4, 1.28e6)?;
    print!("{}", plan.summary_table(104.0));
    let storage = storage_estimate(&plan.spec, 104.0);
    println!(
        "rendered levels {:?}: {} tasks, {} tiles, {:.0} kB",
        plan.rendered_levels, plan.total_tasks, plan.total_tiles, storage.total_kb
    );
    Ok(())
}
