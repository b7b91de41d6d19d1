//! Normalization, speedup and cost tables from recorded run tables.

use tilefarm::analysis::{
    cost_table_csv, energy_cost, normalize, speedup_report, RunSummary, TimeBasis,
};
use tilefarm::cli::read_run_table;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    for (name, text, baseline) in [
        (
            "deallocation runs",
            include_str!("data/deallocation_runs.csv"),
            "64",
        ),
        ("outlier runs", include_str!("data/outlier_runs.csv"), "64"),
    ] {
        println!("## {name}");
        let mut runs = Vec::new();
        let mut costs = Vec::new();
        for row in read_run_table(text)? {
            let s = RunSummary {
                label: row.label.clone(),
                nodes: row.nodes,
                run_time_s: row.run_time_s,
                lost_time_s: row.lost_time_s,
                normalized_run_time_s: row.normalized_run_time_s,
                lost_kind: row.lost_kind.unwrap_or_default(),
            };
            let n = normalize(&s, TimeBasis::Normalized)?;
            if let (Some(p), Some(c)) = (row.p_av_kw, row.c_hr) {
                costs.push((
                    row.label,
                    energy_cost(n.normalized_run_time_s / 3600.0, p, c, 2f64.powi(40))?,
                ));
            }
            runs.push(n);
        }
        print!("{}", speedup_report(&runs, baseline)?.to_csv());
        if !costs.is_empty() {
            print!("{}", cost_table_csv(&costs));
        }
    }
    Ok(())
}
