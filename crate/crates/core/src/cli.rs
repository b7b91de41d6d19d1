//! Command-line front end. `main.rs` only parses arguments and calls [`run`].
//!
//! Exit codes: 0 on success, 1 on a runtime failure (failed run, store
//! defects, I/O), 2 on a usage error or invalid configuration.

use crate::analysis::{
    cost_table_csv, energy_cost, normalize, speedup_report, LostKind, RunSummary, TimeBasis,
};
use crate::config::{ConfigError, KernelChoice, RunConfig};
use crate::metrics::{heatmap_csv, synthesize_gpu_telemetry, MetricsStore, PowerModel};
use crate::orchestrator::{enqueue_jobs, run_pool, ExecMode, NodeProfile, PoolOptions, RunRecord};
use crate::pyramid::{PyramidPlan, PyramidSpec};
use crate::render::ProceduralRenderer;
use crate::scene::{build_scene, ingest_readings, synthetic_readings, Scene};
use crate::store::{verify_store, Manifest, StoreReport, TileStore};
use crate::tiler::EncodePolicy;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

pub const PLAN_FILE: &str = "pyramid.plan";
pub const SCENE_FILE: &str = "scene.desc";
pub const RUN_FILE: &str = "run.json";

#[derive(Debug, Parser)]
#[command(name = "tilefarm", version, about = "Tile-pyramid render farm")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the level table and write the plan file.
    Plan(PlanArgs),
    /// Render, tile and store the pyramid with worker threads.
    Render(RenderArgs),
    /// Replay the schedule on a virtual clock for several pool sizes.
    Simulate(SimulateArgs),
    /// Speedup, efficiency, energy and cost tables from run records or a run table.
    Analyze(AnalyzeArgs),
    /// Serve a tile store over HTTP.
    Serve(ServeArgs),
    /// Check a tile store for missing, extra and undecodable tiles.
    Verify(VerifyArgs),
    /// Export plot-ready data from a metrics log.
    Export(ExportArgs),
}

/// Config file plus the overrides shared by most commands.
#[derive(Debug, Args, Default)]
pub struct ConfigArgs {
    /// TOML run configuration.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub max_level: Option<u32>,
    #[arg(long)]
    pub tile_px: Option<u64>,
    #[arg(long)]
    pub task_px: Option<u64>,
    #[arg(long)]
    pub stride: Option<u32>,
    #[arg(long)]
    pub world_side_mm: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

impl ConfigArgs {
    pub fn load(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        let p = &mut cfg.pyramid;
        if let Some(v) = self.max_level {
            p.max_level = v;
        }
        if let Some(v) = self.tile_px {
            p.tile_px = v;
        }
        if let Some(v) = self.task_px {
            p.task_px = v;
        }
        if let Some(v) = self.stride {
            p.rendered_level_stride = v;
        }
        if let Some(v) = self.world_side_mm {
            p.world_side_mm = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = &self.out {
            cfg.output = v.clone();
        }
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Encoded size per tile used for the storage column.
    #[arg(long, default_value_t = 104.0)]
    pub kb_per_tile: f64,
    /// Print the table without writing the plan file.
    #[arg(long)]
    pub dry_run: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FormatArg {
    Png,
    Jpeg,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long, short)]
    pub workers: Option<u32>,
    /// Sensor readings CSV.
    #[arg(long)]
    pub readings: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
    #[arg(long)]
    pub quality: Option<u8>,
    #[arg(long, value_enum)]
    pub kernel: Option<KernelArg>,
    /// Chance per task start of an injected node crash.
    #[arg(long)]
    pub failure_rate: Option<f64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum KernelArg {
    Box2,
    Binomial4,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Pool sizes, comma separated.
    #[arg(long, short, value_delimiter = ',', required = true)]
    pub nodes: Vec<u32>,
    #[arg(long)]
    pub outlier_probability: Option<f64>,
    #[arg(long)]
    pub failure_rate: Option<f64>,
    #[arg(long)]
    pub health_checks: bool,
    /// Also write synthetic GPU telemetry and task metrics per run.
    #[arg(long)]
    pub telemetry: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum BasisArg {
    Raw,
    Normalized,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Run records (`.json`) or run tables (`.csv`).
    pub inputs: Vec<PathBuf>,
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// Label of the baseline run; defaults to the run with the fewest nodes.
    #[arg(long)]
    pub baseline: Option<String>,
    /// Denominator for outlier lost nodes.
    #[arg(long, value_enum, default_value = "normalized")]
    pub basis: BasisArg,
    #[arg(long)]
    pub p_av_kw_per_node: Option<f64>,
    #[arg(long)]
    pub c_hr_per_node: Option<f64>,
    /// Pixels in the image; defaults to the configured pyramid's top level.
    #[arg(long)]
    pub pixels: Option<f64>,
    /// Write the report here as well as to stdout.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub root: PathBuf,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long)]
    pub root: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    /// Per-node compute totals on a grid.
    #[arg(long, required = true)]
    pub heatmap: bool,
    #[arg(long)]
    pub metrics: PathBuf,
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Usage(_) => ExitCode::from(2),
            CliError::Runtime(_) => ExitCode::from(1),
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Runtime(m) => write!(f, "error: {m}"),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Read { .. } => CliError::Runtime(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| runtime(format!("{}: {e}", dir.display())))?;
    }
    std::fs::write(path, text).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

pub fn run(cli: Cli) -> ExitCode {
    let result = match cli.command {
        Command::Plan(a) => cmd_plan(&a).map(|s| print!("{s}")),
        Command::Render(a) => cmd_render(&a).map(|o| print!("{}", o.summary)),
        Command::Simulate(a) => cmd_simulate(&a).map(|(_, s)| print!("{s}")),
        Command::Analyze(a) => cmd_analyze(&a).map(|s| print!("{s}")),
        Command::Serve(a) => crate::server::serve(&a.root, a.port).map_err(runtime),
        Command::Verify(a) => cmd_verify(&a.root).map(|(_, s)| print!("{s}")),
        Command::Export(a) => cmd_export(&a).map(|s| print!("{s}")),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}

/// Validates the configuration, writes `pyramid.plan` under the output
/// directory and returns the printed table.
pub fn cmd_plan(args: &PlanArgs) -> Result<String, CliError> {
    let cfg = args.config.load()?;
    let spec = cfg.validate()?;
    let plan = PyramidPlan::from_spec(spec);
    if !args.dry_run {
        write_file(&cfg.output.join(PLAN_FILE), &plan.to_text())?;
    }
    Ok(plan.summary_table(args.kb_per_tile))
}

pub fn load_scene(cfg: &RunConfig, spec: &PyramidSpec) -> Result<Scene, CliError> {
    let readings = match &cfg.scene.readings {
        Some(path) => {
            let report = ingest_readings(path, spec.world_side_mm).map_err(runtime)?;
            for r in &report.rejected {
                log::warn!("{}:{}: {}", path.display(), r.line, r.reason);
            }
            report.readings
        }
        None => synthetic_readings(cfg.scene.synthetic_sensors, spec.world_side_mm, cfg.seed),
    };
    build_scene(&readings, spec, &cfg.scene.options()).map_err(|e| CliError::Usage(e.to_string()))
}

pub struct RenderOutcome {
    pub record: RunRecord,
    pub report: StoreReport,
    pub summary: String,
}

pub fn cmd_render(args: &RenderArgs) -> Result<RenderOutcome, CliError> {
    let mut cfg = args.config.load()?;
    if let Some(w) = args.workers {
        cfg.workers = w;
    }
    if let Some(r) = &args.readings {
        cfg.scene.readings = Some(r.clone());
    }
    match (args.format, args.quality) {
        (Some(FormatArg::Png), _) => cfg.encode = EncodePolicy::Png,
        (Some(FormatArg::Jpeg), q) => {
            cfg.encode = EncodePolicy::Jpeg {
                quality: q.unwrap_or(crate::tiler::DEFAULT_JPEG_QUALITY),
            }
        }
        (None, Some(q)) => cfg.encode = EncodePolicy::Jpeg { quality: q },
        (None, None) => {}
    }
    if let Some(k) = args.kernel {
        cfg.kernel = match k {
            KernelArg::Box2 => KernelChoice::Box2,
            KernelArg::Binomial4 => KernelChoice::Binomial4,
        };
    }
    if let Some(f) = args.failure_rate {
        cfg.faults.node_failure_rate = f;
    }
    render_with(&cfg)
}

/// Full real-mode pipeline for an already assembled configuration.
pub fn render_with(cfg: &RunConfig) -> Result<RenderOutcome, CliError> {
    let spec = cfg.validate()?;
    let scene = load_scene(cfg, &spec)?;
    let out = &cfg.output;
    write_file(
        &out.join(PLAN_FILE),
        &PyramidPlan::from_spec(spec).to_text(),
    )?;
    write_file(&out.join(SCENE_FILE), &scene.to_text())?;

    let store = TileStore::create(out, Manifest::for_spec(&spec, cfg.encode)).map_err(runtime)?;
    let metrics = MetricsStore::create(&cfg.metrics_path()).map_err(runtime)?;
    let jobs =
        enqueue_jobs(&spec, &scene, Some(cfg.seed)).map_err(|e| CliError::Usage(e.to_string()))?;
    let renderer = ProceduralRenderer::with_scene(scene);
    let opts = PoolOptions {
        run_id: format!("render-n{}", cfg.workers),
        seed: cfg.seed,
        health: cfg.health,
        max_attempts: cfg.max_attempts,
    };
    let mode = ExecMode::Real {
        spec,
        renderer: &renderer,
        renderer_config: cfg.renderer,
        kernel: cfg.kernel.kernel(),
        encode: cfg.encode,
        sink: &store,
    };
    let record = run_pool(
        &jobs,
        &cfg.nodes(),
        mode,
        &cfg.faults,
        &opts,
        Some(&metrics),
    )
    .map_err(|e| CliError::Usage(e.to_string()))?;
    metrics.flush().map_err(runtime)?;
    write_file(&out.join(RUN_FILE), &record.to_text())?;

    let report = verify_store(out).map_err(runtime)?;
    let mut summary = String::new();
    let _ = writeln!(
        summary,
        "{} tasks on {} workers in {:.2} s, {} failed attempts, metrics overhead {:.4} s",
        record.tasks.len(),
        record.node_count,
        record.makespan_s,
        record.aborted_attempts.len(),
        record.metrics_overhead_s
    );
    summary.push_str(&report_text(&report));
    if !record.is_complete() {
        return Err(CliError::Runtime(format!(
            "run aborted: {:?}\n{summary}",
            record.status
        )));
    }
    if !report.is_clean() {
        return Err(CliError::Runtime(summary));
    }
    Ok(RenderOutcome {
        record,
        report,
        summary,
    })
}

/// Simulates each pool size and writes `run-n{N}.json` per run.
pub fn cmd_simulate(args: &SimulateArgs) -> Result<(Vec<RunRecord>, String), CliError> {
    let mut cfg = args.config.load()?;
    if let Some(p) = args.outlier_probability {
        cfg.faults.outlier_probability = p;
    }
    if let Some(f) = args.failure_rate {
        cfg.faults.node_failure_rate = f;
    }
    if args.health_checks {
        cfg.health.enabled = true;
    }
    if args.nodes.is_empty() || args.nodes.contains(&0) {
        return Err(CliError::Usage(
            "--nodes needs one or more positive pool sizes".into(),
        ));
    }
    let spec = cfg.validate()?;
    // glyphs do not affect synthetic costs
    let scene = build_scene(&[], &spec, &cfg.scene.options())
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let jobs =
        enqueue_jobs(&spec, &scene, Some(cfg.seed)).map_err(|e| CliError::Usage(e.to_string()))?;
    let mut records = Vec::new();
    let mut table = String::from(
        "nodes,makespan_s,work_efficiency,outlier_lost_s,outage_lost_s,aborted_attempts,status\n",
    );
    for &n in &args.nodes {
        let nodes = NodeProfile::pool(n, cfg.group_size);
        let opts = PoolOptions {
            run_id: format!("n{n}"),
            seed: cfg.seed,
            health: cfg.health,
            max_attempts: cfg.max_attempts,
        };
        let metrics = if args.telemetry {
            Some(
                MetricsStore::create(&cfg.output.join(format!("metrics-n{n}.jsonl")))
                    .map_err(runtime)?,
            )
        } else {
            None
        };
        let mode = ExecMode::Simulated {
            spec,
            cost: cfg.cost,
        };
        let record = run_pool(&jobs, &nodes, mode, &cfg.faults, &opts, metrics.as_ref())
            .map_err(|e| CliError::Usage(e.to_string()))?;
        if let Some(m) = &metrics {
            synthesize_gpu_telemetry(&record, &PowerModel::default(), m).map_err(runtime)?;
            m.flush().map_err(runtime)?;
        }
        write_file(
            &cfg.output.join(format!("run-n{n}.json")),
            &record.to_text(),
        )?;
        let _ = writeln!(
            table,
            "{n},{:.1},{:.4},{:.1},{:.1},{},{}",
            record.makespan_s,
            record.work_efficiency(),
            record.outlier_lost_time_s,
            record.outage_lost_time_s,
            record.aborted_attempts.len(),
            if record.is_complete() {
                "complete"
            } else {
                "aborted"
            }
        );
        records.push(record);
    }
    if let Some(bad) = records.iter().find(|r| !r.is_complete()) {
        return Err(CliError::Runtime(format!(
            "run {} aborted: {:?}\n{table}",
            bad.run_id, bad.status
        )));
    }
    Ok((records, table))
}

/// One row of a run table CSV. Power and price columns are optional
/// per-run overrides of the per-node constants.
#[derive(Debug, Clone, Deserialize)]
pub struct RunTableRow {
    pub label: String,
    pub nodes: f64,
    pub run_time_s: f64,
    pub lost_time_s: f64,
    #[serde(default)]
    pub normalized_run_time_s: Option<f64>,
    #[serde(default)]
    pub lost_kind: Option<LostKind>,
    #[serde(default)]
    pub p_av_kw: Option<f64>,
    #[serde(default)]
    pub c_hr: Option<f64>,
}

pub fn read_run_table(text: &str) -> Result<Vec<RunTableRow>, csv::Error> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes())
        .deserialize()
        .collect()
}

pub fn cmd_analyze(args: &AnalyzeArgs) -> Result<String, CliError> {
    if args.inputs.is_empty() {
        return Err(CliError::Usage(
            "analyze needs at least one run file".into(),
        ));
    }
    let cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let spec = cfg.validate()?;
    let p_node = args
        .p_av_kw_per_node
        .unwrap_or(cfg.economics.p_av_kw_per_node);
    let c_node = args.c_hr_per_node.unwrap_or(cfg.economics.c_hr_per_node);
    let pixels = args
        .pixels
        .or(cfg.economics.pixels)
        .unwrap_or_else(|| (spec.side_px(spec.max_level) as f64).powi(2));

    let mut rows: Vec<RunTableRow> = Vec::new();
    for path in &args.inputs {
        let text = std::fs::read_to_string(path)
            .map_err(|e| runtime(format!("{}: {e}", path.display())))?;
        if path.extension().is_some_and(|e| e == "csv") {
            rows.extend(
                read_run_table(&text)
                    .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?,
            );
        } else {
            let rec = RunRecord::from_text(&text)
                .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
            let s = RunSummary::of(&rec);
            rows.push(RunTableRow {
                label: s.label,
                nodes: s.nodes,
                run_time_s: s.run_time_s,
                lost_time_s: s.lost_time_s,
                normalized_run_time_s: s.normalized_run_time_s,
                lost_kind: Some(s.lost_kind),
                p_av_kw: None,
                c_hr: None,
            });
        }
    }
    if rows.len() < 2 {
        return Err(CliError::Usage(format!(
            "need at least two runs, got {}",
            rows.len()
        )));
    }
    let basis = match args.basis {
        BasisArg::Raw => TimeBasis::Raw,
        BasisArg::Normalized => TimeBasis::Normalized,
    };
    let mut normalized = Vec::new();
    let mut costs = Vec::new();
    for r in &rows {
        let summary = RunSummary {
            label: r.label.clone(),
            nodes: r.nodes,
            run_time_s: r.run_time_s,
            lost_time_s: r.lost_time_s,
            normalized_run_time_s: r.normalized_run_time_s,
            lost_kind: r.lost_kind.unwrap_or(if r.normalized_run_time_s.is_some() {
                LostKind::Outlier
            } else {
                LostKind::Deallocation
            }),
        };
        let n = normalize(&summary, basis).map_err(|e| CliError::Usage(e.to_string()))?;
        let cost = energy_cost(
            n.normalized_run_time_s / 3600.0,
            r.p_av_kw.unwrap_or(p_node * r.nodes),
            r.c_hr.unwrap_or(c_node * r.nodes),
            pixels,
        )
        .map_err(|e| CliError::Usage(e.to_string()))?;
        costs.push((r.label.clone(), cost));
        normalized.push(n);
    }
    let baseline = match &args.baseline {
        Some(b) => b.clone(),
        None => normalized
            .iter()
            .min_by(|a, b| a.nodes.total_cmp(&b.nodes))
            .map(|r| r.label.clone())
            .expect("at least two runs"),
    };
    let report =
        speedup_report(&normalized, &baseline).map_err(|e| CliError::Usage(e.to_string()))?;

    let mut out = String::new();
    out.push_str("# normalization\nlabel,nodes,run_time_s,lost_time_s,lost_nodes,normalized_nodes,normalized_run_time_s\n");
    for n in &normalized {
        let _ = writeln!(
            out,
            "{},{},{:.1},{:.1},{:.3},{:.3},{:.1}",
            n.label,
            n.nodes,
            n.run_time_s,
            n.lost_time_s,
            n.lost_nodes,
            n.normalized_nodes,
            n.normalized_run_time_s
        );
    }
    out.push_str("\n# scaling\n");
    out.push_str(&report.to_csv());
    out.push_str("\n# energy and cost\n");
    out.push_str(&cost_table_csv(&costs));
    if let Some(path) = &args.out {
        write_file(path, &out)?;
    }
    Ok(out)
}

pub fn report_text(r: &StoreReport) -> String {
    let mut s = format!(
        "{} of {} tiles present, {} missing, {} extra, {} undecodable\n",
        r.present,
        r.expected,
        r.missing.len(),
        r.extra.len(),
        r.undecodable.len()
    );
    for c in &r.missing {
        let _ = writeln!(s, "missing {c}");
    }
    for p in &r.extra {
        let _ = writeln!(s, "extra {}", p.display());
    }
    for c in &r.undecodable {
        let _ = writeln!(s, "undecodable {c}");
    }
    s
}

pub fn cmd_verify(root: &Path) -> Result<(StoreReport, String), CliError> {
    let report = verify_store(root).map_err(runtime)?;
    let text = report_text(&report);
    if report.is_clean() {
        Ok((report, text))
    } else {
        Err(CliError::Runtime(text))
    }
}

pub fn cmd_export(args: &ExportArgs) -> Result<String, CliError> {
    if !args.metrics.is_file() {
        return Err(CliError::Runtime(format!(
            "{}: no such metrics log",
            args.metrics.display()
        )));
    }
    let store = MetricsStore::open(&args.metrics).map_err(runtime)?;
    let csv = heatmap_csv(&store.per_node_compute_seconds());
    if let Some(path) = &args.out {
        write_file(path, &csv)?;
    }
    Ok(csv)
}
