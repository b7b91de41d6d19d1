//! Renders the 6-level pyramid into a directory, then verifies it.
//!
//! ```text
//! cargo run --release --example render_mini -- /tmp/mini
//! ```

use tilefarm::cli::render_with;
use tilefarm::config::RunConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "out-mini".into());
    let cfg = RunConfig {
        output: out.into(),
        ..RunConfig::from_toml(include_str!("configs/mini.toml"))?
    };
    let outcome = render_with(&cfg).map_err(|e| format!("{e:?}"))?;
    print!("{}", outcome.summary);
    println!("tiles in {}", cfg.output.display());
    Ok(())
}
