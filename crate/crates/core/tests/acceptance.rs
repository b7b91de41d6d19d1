//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. Runs without the libtest harness so the lines are always shown.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};
use tilefarm::analysis::{
    amdahl, energy_cost, gustafson, normalize_deallocations, normalize_outliers, speedup_report,
    LostKind, NormalizedRun, RunSummary, TimeBasis, TERAPIXEL_PIXELS,
};
use tilefarm::cli::render_with;
use tilefarm::config::RunConfig;
use tilefarm::metrics::MetricsStore;
use tilefarm::orchestrator::{
    enqueue_jobs, run_pool, AbortReason, Deallocation, ExecMode, FaultModel, HealthPolicy, Job,
    NodeProfile, PoolOptions, RunRecord,
};
use tilefarm::pyramid::{
    plan_pyramid, storage_estimate, tiles_emitted_per_task, PyramidSpec, TileCoord,
};
use tilefarm::render::{paint_rect, CostModel, RegionImage};
use tilefarm::scene::{build_scene, Scene, SceneOptions};
use tilefarm::store::TileStore;
use tilefarm::tiler::{decode_tile, subsample, EncodePolicy, Kernel};

struct Criterion {
    name: &'static str,
    budget: Duration,
    check: fn(),
}

fn main() {
    let criteria = [
        Criterion {
            name: "pyramid arithmetic reproduces the level and task tables",
            budget: Duration::from_secs(1),
            check: pyramid_arithmetic,
        },
        Criterion {
            name: "tile-count conservation for 1..=8 levels",
            budget: Duration::from_secs(10),
            check: tile_conservation,
        },
        Criterion {
            name: "subsampling equals the naive oracle on 1000 images",
            budget: Duration::from_secs(60),
            check: subsampling_oracle,
        },
        Criterion {
            name: "end-to-end mini render, verify clean, compositional identity",
            budget: Duration::from_secs(300),
            check: mini_render,
        },
        Criterion {
            name: "scaling laws (Amdahl 506.2, Gustafson endpoints)",
            budget: Duration::from_secs(1),
            check: scaling_laws,
        },
        Criterion {
            name: "normalization regression (outlier and deallocation tables)",
            budget: Duration::from_secs(1),
            check: normalization_regression,
        },
        Criterion {
            name: "efficiency claim 15.73x, 98.3%, single-node 2,940,581 s",
            budget: Duration::from_secs(1),
            check: efficiency_claim,
        },
        Criterion {
            name: "energy, cost and pixels per pound tables",
            budget: Duration::from_secs(1),
            check: energy_and_cost,
        },
        Criterion {
            name: "simulator makespan, efficiency and full sweep time",
            budget: Duration::from_secs(120),
            check: simulator_properties,
        },
        Criterion {
            name: "fault exactness over 100 seeded trials",
            budget: Duration::from_secs(120),
            check: fault_exactness,
        },
    ];

    let mut failed = 0;
    for (i, c) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(c.check));
        let elapsed = start.elapsed();
        let verdict = match (&outcome, elapsed <= c.budget) {
            (Ok(()), true) => "PASS",
            _ => "FAIL",
        };
        if verdict == "FAIL" {
            failed += 1;
        }
        let note = match &outcome {
            Err(_) => " (assertion failed, see above)".to_string(),
            Ok(()) if elapsed > c.budget => format!(" (over budget {:?})", c.budget),
            Ok(()) => String::new(),
        };
        println!(
            "{verdict} [{:>2}] {:<62} {:>9.3}s{note}",
            i + 1,
            c.name,
            elapsed.as_secs_f64()
        );
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}

fn full_size_spec() -> PyramidSpec {
    PyramidSpec::new(12, 512, 4096, 4, 1.28e6).unwrap()
}

fn pyramid_arithmetic() {
    // level, side px, pixels, tiles, tile side mm
    const LEVELS: [(u32, u64, u128, u64, f64); 12] = [
        (12, 1048576, 1099511627776, 4194304, 625.0),
        (11, 524288, 274877906944, 1048576, 1250.0),
        (10, 262144, 68719476736, 262144, 2500.0),
        (9, 131072, 17179869184, 65536, 5000.0),
        (8, 65536, 4294967296, 16384, 10000.0),
        (7, 32768, 1073741824, 4096, 20000.0),
        (6, 16384, 268435456, 1024, 40000.0),
        (5, 8192, 67108864, 256, 80000.0),
        (4, 4096, 16777216, 64, 160000.0),
        (3, 2048, 4194304, 16, 320000.0),
        (2, 1024, 1048576, 4, 640000.0),
        (1, 512, 262144, 1, 1280000.0),
    ];
    // level, render tasks, storage kB at 104 kB per tile
    const TASKS: [(u32, u64, f64); 12] = [
        (12, 65536, 436207616.0),
        (11, 0, 109051904.0),
        (10, 0, 27262976.0),
        (9, 0, 6815744.0),
        (8, 256, 1703936.0),
        (7, 0, 425984.0),
        (6, 0, 106496.0),
        (5, 0, 26624.0),
        (4, 1, 6656.0),
        (3, 0, 1664.0),
        (2, 0, 416.0),
        (1, 0, 104.0),
    ];
    let plan = plan_pyramid(12, 512, 4096, 4, 1.28e6).unwrap();
    assert_eq!(plan.rendered_levels, [12, 8, 4]);
    for (level, side, pixels, tiles, mm) in LEVELS {
        let row = plan.level(level).unwrap();
        assert_eq!(row.side_px, side);
        assert_eq!(row.total_pixels, pixels);
        assert_eq!(row.tile_count, tiles);
        assert_eq!(row.tile_world_mm, mm);
    }
    let storage = storage_estimate(&plan.spec, 104.0);
    for (level, tasks, kb) in TASKS {
        assert_eq!(
            plan.level(level).unwrap().render_task_count,
            tasks,
            "level {level}"
        );
        let got = storage
            .per_level_kb
            .iter()
            .find(|(l, _)| *l == level)
            .unwrap()
            .1;
        assert_eq!(got, kb, "level {level}");
    }
    assert_eq!(plan.total_tasks, 65_793);
    assert_eq!(plan.total_tiles, 5_592_405);
    assert_eq!(storage.total_kb, 581_610_120.0);
}

/// Every coordinate of an `levels`-deep pyramid, by brute force.
fn enumerate_all_tiles(levels: u32) -> Vec<TileCoord> {
    let mut all = Vec::new();
    for l in 1..=levels {
        let side = 1u64 << (l - 1);
        for row in 0..side {
            for col in 0..side {
                all.push(TileCoord::new(l, col, row));
            }
        }
    }
    all
}

fn tile_conservation() {
    for levels in 1..=8 {
        let spec = PyramidSpec::terapixel_like(levels).unwrap();
        let mut emitted: Vec<TileCoord> = spec
            .tasks("s")
            .iter()
            .flat_map(|t| tiles_emitted_per_task(t, &spec))
            .collect();
        let closed_form = (4u64.pow(levels) - 1) / 3;
        assert_eq!(emitted.len() as u64, closed_form, "L = {levels}");
        let mut expected = enumerate_all_tiles(levels);
        emitted.sort();
        expected.sort();
        assert_eq!(emitted, expected, "L = {levels}");
    }
}

/// Literal double sum over the kernel support with edge reflection.
fn naive_subsample(img: &RegionImage, k: &Kernel) -> RegionImage {
    let refl = |i: i64, n: i64| -> u32 {
        let i = if i < 0 { -i - 1 } else { i };
        let i = if i >= n { 2 * n - i - 1 } else { i };
        i as u32
    };
    let mut out = RegionImage::new(img.width / 2, img.height / 2);
    for i in 0..out.height {
        for j in 0..out.width {
            let mut px = [0u8; 3];
            for (c, v) in px.iter_mut().enumerate() {
                let mut sum = 0.0f64;
                for m in 0..k.size {
                    for n in 0..k.size {
                        let y = refl(2 * i as i64 + k.origin as i64 + m as i64, img.height as i64);
                        let x = refl(2 * j as i64 + k.origin as i64 + n as i64, img.width as i64);
                        let w = k.weights[(m * k.size + n) as usize] as f64 / k.denominator as f64;
                        sum += w * img.get(x, y)[c] as f64;
                    }
                }
                *v = (sum + 0.5).floor() as u8;
            }
            out.set(j, i, px);
        }
    }
    out
}

fn subsampling_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for trial in 0..1000 {
        let w = 2 * rng.random_range(1..=32u32);
        let h = 2 * rng.random_range(1..=32u32);
        let img = RegionImage::from_fn(w, h, |_, _| rng.random());
        let k = if trial % 2 == 0 {
            Kernel::box2()
        } else {
            Kernel::binomial4()
        };
        let got = subsample(&img, &k).unwrap();
        assert_eq!(
            got.pixels,
            naive_subsample(&img, &k).pixels,
            "trial {trial} {w}x{h}"
        );

        let v: [u8; 3] = rng.random();
        let flat = RegionImage::from_fn(w, h, |_, _| v);
        assert!(subsample(&flat, &k)
            .unwrap()
            .pixels
            .chunks(3)
            .all(|p| p == v));

        if k == Kernel::box2() {
            // each output rounds half up, so the mean moves by at most 1/2
            let (a, b) = (img.channel_means(), got.channel_means());
            for c in 0..3 {
                assert!((b[c] - a[c]).abs() <= 0.5 + 1e-12, "trial {trial}");
            }
        }
    }
}

fn box_down(img: &RegionImage) -> RegionImage {
    naive_subsample(img, &Kernel::box2())
}

fn mini_render() {
    // full-size tile geometry at 6 levels, 8 workers, JPEG tiles
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        output: dir.path().to_path_buf(),
        workers: 8,
        ..RunConfig::default()
    };
    let outcome = render_with(&cfg).unwrap_or_else(|e| panic!("{e}"));
    assert!(outcome.record.is_complete());
    assert_eq!(outcome.record.tasks.len(), 17);
    assert_eq!(outcome.report.expected, 1365);
    assert_eq!(outcome.report.present, 1365);
    assert!(outcome.report.is_clean(), "{:?}", outcome.report);

    // Compositional identity on a geometry whose full levels fit in memory:
    // lossless tiles from the pipeline equal cutting the whole-level image
    // after repeated whole-image subsampling.
    let spec = PyramidSpec::new(6, 64, 512, 4, 1.28e6).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        output: dir.path().to_path_buf(),
        workers: 4,
        encode: EncodePolicy::Png,
        pyramid: tilefarm::config::PyramidConfig {
            max_level: 6,
            tile_px: 64,
            task_px: 512,
            rendered_level_stride: 4,
            world_side_mm: 1.28e6,
        },
        ..RunConfig::default()
    };
    let outcome = render_with(&cfg).unwrap_or_else(|e| panic!("{e}"));
    assert!(outcome.report.is_clean());
    let scene =
        Scene::from_text(&std::fs::read_to_string(dir.path().join("scene.desc")).unwrap()).unwrap();
    let store = TileStore::open(dir.path()).unwrap();
    let mut compared = 0;
    for rendered in spec.rendered_levels() {
        let side = spec.side_px(rendered);
        let mut whole = paint_rect(&scene, &spec, rendered, 0, 0, side, side).unwrap();
        for level in (spec.lowest_fed_level(rendered)..=rendered).rev() {
            if level != rendered {
                whole = box_down(&whole);
            }
            let per_side = spec.tiles_per_side(level) as u32;
            for row in 0..per_side {
                for col in 0..per_side {
                    let stored = decode_tile(
                        &store
                            .get_tile(TileCoord::new(level, col as u64, row as u64))
                            .unwrap(),
                    )
                    .unwrap();
                    let cut = whole.crop(col * 64, row * 64, 64, 64);
                    assert_eq!(stored.pixels, cut.pixels, "tile ({level}, {col}, {row})");
                    compared += 1;
                }
            }
        }
    }
    assert_eq!(compared, 1365);
}

fn scaling_laws() {
    let s = amdahl(0.001, 1024.0).unwrap();
    assert!((s - 506.2).abs() <= 0.1, "{s}");
    assert_eq!(amdahl(0.0, 1024.0).unwrap(), 1024.0);
    assert_eq!(amdahl(1.0, 1024.0).unwrap(), 1.0);
    assert_eq!(gustafson(0.0, 1024.0).unwrap(), 1024.0);
    for n in [1.0, 2.0, 64.0, 1024.0] {
        assert_eq!(gustafson(1.0, n).unwrap(), 1.0);
        assert_eq!(gustafson(0.0, n).unwrap(), n);
    }
    assert!((gustafson(0.02, 1024.0).unwrap() - 1003.54).abs() < 1e-9);
}

fn outlier_row(nodes: f64, lost: f64, norm_time: f64) -> RunSummary {
    RunSummary {
        label: format!("{nodes}"),
        nodes,
        run_time_s: norm_time + lost / nodes,
        lost_time_s: lost,
        normalized_run_time_s: Some(norm_time),
        lost_kind: LostKind::Outlier,
    }
}

fn dealloc_row(nodes: f64, run_time: f64, lost: f64) -> RunSummary {
    RunSummary {
        label: format!("{nodes}"),
        nodes,
        run_time_s: run_time,
        lost_time_s: lost,
        normalized_run_time_s: None,
        lost_kind: LostKind::Deallocation,
    }
}

fn normalization_regression() {
    for (nodes, run, lost, lost_nodes, normalized) in [
        (256.0, 11469.0, 5467.0, 0.477, 255.5),
        (768.0, 3824.0, 5896.0, 1.542, 766.5),
        (64.0, 45632.0, 0.0, 0.0, 64.0),
    ] {
        let n = normalize_deallocations(&dealloc_row(nodes, run, lost)).unwrap();
        assert!((n.lost_nodes - lost_nodes).abs() <= 0.001, "{n:?}");
        assert!((n.normalized_nodes - normalized).abs() <= 0.05, "{n:?}");
    }
    // rows 80..128 of the outlier table, normalized-time basis
    for (nodes, lost, norm_time, printed) in [
        (80.0, 49596.0, 119815.0, 79.60),
        (96.0, 27581.0, 98909.0, 95.73),
        (112.0, 60151.0, 81964.0, 111.25),
        (128.0, 0.0, 73268.0, 128.00),
    ] {
        let n = normalize_outliers(&outlier_row(nodes, lost, norm_time), TimeBasis::Normalized)
            .unwrap();
        assert!(
            (n.normalized_nodes - printed).abs() <= 0.02,
            "{nodes}: {}",
            n.normalized_nodes
        );
        assert_eq!(n.normalized_run_time_s, norm_time);
    }
    // row 64 does not reproduce from its own columns
    let row64 = normalize_outliers(
        &outlier_row(64.0, 159305.0, 150550.0),
        TimeBasis::Normalized,
    )
    .unwrap();
    assert!((row64.normalized_nodes - 63.00).abs() > 0.02);
}

const DEALLOCATION_TABLE: [(f64, f64, f64); 9] = [
    (64.0, 45632.0, 0.0),
    (80.0, 36567.0, 0.0),
    (96.0, 30900.0, 0.0),
    (112.0, 26551.0, 0.0),
    (128.0, 22778.0, 0.0),
    (256.0, 11469.0, 5467.0),
    (512.0, 5726.0, 0.0),
    (768.0, 3824.0, 5896.0),
    (1024.0, 2901.0, 0.0),
];

fn efficiency_claim() {
    let runs: Vec<NormalizedRun> = DEALLOCATION_TABLE
        .iter()
        .map(|&(n, t, l)| normalize_deallocations(&dealloc_row(n, t, l)).unwrap())
        .collect();
    let report = speedup_report(&runs, "64").unwrap();
    let top = report.row("1024").unwrap();
    assert!((top.speedup - 15.73).abs() < 0.005, "{}", top.speedup);
    assert!(
        (top.efficiency - 0.983).abs() <= 0.005,
        "{}",
        top.efficiency
    );
    let single = report.single_node_equivalent_s;
    assert!(
        (single - 2_940_581.0).abs() / 2_940_581.0 <= 0.02,
        "{single}"
    );
}

fn energy_and_cost() {
    // nodes, p_av kW, c_hr, r_norm h, E, C, PP millions
    let rows = [
        (64, 7.44, 42.94, 41.82, 311.0, 1796.0, 612.0),
        (80, 9.47, 53.68, 33.28, 315.0, 1787.0, 615.0),
        (96, 11.42, 64.42, 27.47, 314.0, 1770.0, 621.0),
        (112, 13.66, 75.15, 22.77, 311.0, 1711.0, 642.0),
        (128, 15.02, 85.89, 20.35, 306.0, 1748.0, 629.0),
    ];
    assert_eq!(TERAPIXEL_PIXELS, 2f64.powi(40));
    for (n, p, c, r, e, cost, pp) in rows {
        let rc = energy_cost(r, p, c, TERAPIXEL_PIXELS).unwrap();
        assert!((rc.energy_kwh - e).abs() <= 1.0, "{n}: E {}", rc.energy_kwh);
        assert!((rc.cost - cost).abs() <= 1.0, "{n}: C {}", rc.cost);
        assert!(
            (rc.pixels_per_pound / 1e6 - pp).abs() <= 2.0,
            "{n}: PP {}",
            rc.pixels_per_pound
        );
    }
}

fn empty_scene(spec: &PyramidSpec) -> Scene {
    build_scene(&[], spec, &SceneOptions::default()).unwrap()
}

fn simulate(
    jobs: &[Job],
    spec: PyramidSpec,
    cost: CostModel,
    n: u32,
    faults: &FaultModel,
    opts: &PoolOptions,
) -> RunRecord {
    run_pool(
        jobs,
        &NodeProfile::pool(n, 4),
        ExecMode::Simulated { spec, cost },
        faults,
        &PoolOptions {
            run_id: n.to_string(),
            ..opts.clone()
        },
        None,
    )
    .unwrap()
}

fn no_fault_runs(
    jobs: &[Job],
    spec: PyramidSpec,
    cost: CostModel,
    counts: &[u32],
) -> Vec<NormalizedRun> {
    counts
        .iter()
        .map(|&n| {
            let r = simulate(
                jobs,
                spec,
                cost,
                n,
                &FaultModel::none(),
                &PoolOptions::default(),
            );
            assert!(r.is_complete());
            normalize_deallocations(&RunSummary::deallocations_of(&r)).unwrap()
        })
        .collect()
}

fn simulator_properties() {
    // 256 equal 150 s tasks on 64 nodes: four rounds
    let giga = PyramidSpec::terapixel_like(8).unwrap();
    let mut jobs = enqueue_jobs(&giga, &empty_scene(&giga), None).unwrap();
    jobs.retain(|j| j.level == 8);
    let fixed = CostModel {
        jitter_fraction: 0.0,
        ..CostModel::default()
    };
    let r = simulate(
        &jobs,
        giga,
        fixed,
        64,
        &FaultModel::none(),
        &PoolOptions::default(),
    );
    assert_eq!(r.makespan_s, (256.0f64 / 64.0).ceil() * 150.0);
    assert_eq!(r.makespan_s, 600.0);

    // full task load with default jitter keeps efficiency at or above 0.97
    let tera = full_size_spec();
    let jobs = enqueue_jobs(&tera, &empty_scene(&tera), Some(7)).unwrap();
    assert_eq!(jobs.iter().map(|j| j.tasks.len()).sum::<usize>(), 65_793);
    let counts = [64, 128, 256, 512, 768, 1024];
    let runs = no_fault_runs(&jobs, tera, CostModel::default(), &counts);
    let report = speedup_report(&runs, "64").unwrap();
    for row in &report.rows {
        assert!(row.efficiency >= 0.97, "{}: {}", row.label, row.efficiency);
    }

    // light task load: efficiency falls as the pool grows towards 128
    let mut jobs = enqueue_jobs(&giga, &empty_scene(&giga), Some(7)).unwrap();
    jobs.retain(|j| j.level == 8);
    let runs = no_fault_runs(&jobs, giga, CostModel::default(), &[1, 16, 32, 64, 128]);
    let report = speedup_report(&runs, "1").unwrap();
    let eff: Vec<f64> = report.rows[1..].iter().map(|r| r.efficiency).collect();
    assert!(eff.windows(2).all(|w| w[1] < w[0]), "{eff:?}");
}

fn fault_exactness() {
    let spec = PyramidSpec::terapixel_like(8).unwrap();
    let scene = empty_scene(&spec);
    let cost = CostModel::default();
    let mut seen = [0usize; 4];
    for trial in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + trial);
        let jobs = enqueue_jobs(&spec, &scene, Some(trial)).unwrap();
        let n = rng.random_range(4..=48u32);
        let groups = n.div_ceil(4);
        let horizon = 150.0 * 257.0 / n as f64;
        let deallocations: Vec<Deallocation> = (0..rng.random_range(0..=3))
            .map(|_| Deallocation {
                time: rng.random_range(0.0..horizon * 1.5),
                group: rng.random_range(0..groups),
                outage_seconds: if rng.random_bool(0.5) {
                    1200.0
                } else {
                    rng.random_range(0.0..3000.0)
                },
            })
            .collect();
        let faults = FaultModel {
            outlier_probability: rng.random_range(0.0..0.05),
            node_failure_rate: rng.random_range(0.0..0.01),
            deallocations: deallocations.clone(),
            ..FaultModel::default()
        };
        let opts = PoolOptions {
            run_id: format!("trial-{trial}"),
            seed: trial,
            health: HealthPolicy {
                enabled: rng.random_bool(0.5),
                ..HealthPolicy::default()
            },
            max_attempts: 3,
        };
        let nodes = NodeProfile::pool(n, 4);
        let metrics = MetricsStore::in_memory();
        let r = run_pool(
            &jobs,
            &nodes,
            ExecMode::Simulated { spec, cost },
            &faults,
            &opts,
            Some(&metrics),
        )
        .unwrap();
        assert!(r.is_complete(), "trial {trial}: {:?}", r.status);

        // every task exactly once
        let done = r.completions_per_task();
        assert_eq!(done.len(), 257, "trial {trial}");
        assert!(done.values().all(|&c| c == 1), "trial {trial}");
        for t in spec.tasks("city") {
            assert_eq!(done.get(t.task_id.as_str()), Some(&1));
        }

        // outage ledger: injected node-seconds clipped to the run, schedule order
        let mut group_size: BTreeMap<u32, f64> = BTreeMap::new();
        for node in &nodes {
            *group_size.entry(node.group).or_default() += 1.0;
        }
        let mut injected = 0.0;
        for d in &deallocations {
            if d.outage_seconds > 0.0 && d.time < r.makespan_s {
                injected +=
                    group_size[&d.group] * ((d.time + d.outage_seconds).min(r.makespan_s) - d.time);
            }
        }
        assert_eq!(r.outage_lost_time_s, injected, "trial {trial}");

        // outlier ledger: injected slowdown observed on exactly the flagged tasks
        let mut outlier_total = 0.0;
        for t in &r.tasks {
            let ratio = t.duration() / cost.base_seconds;
            if t.outlier {
                outlier_total += t.duration();
                assert!(
                    (ratio / 70.0 - 1.0).abs() <= cost.jitter_fraction + 1e-9,
                    "trial {trial}: {ratio}"
                );
            } else {
                assert!(
                    (ratio - 1.0).abs() <= cost.jitter_fraction + 1e-9,
                    "trial {trial}: {ratio}"
                );
            }
        }
        assert_eq!(r.outlier_lost_time_s, outlier_total, "trial {trial}");

        // logged phases add back to each completed task's duration
        let per_task = metrics.per_task_compute_seconds();
        for t in &r.tasks {
            let logged = per_task[&t.task_id];
            assert!(
                (logged - t.duration()).abs() <= 1e-9 * t.duration().max(1.0),
                "trial {trial}"
            );
        }

        // preemptions happened only inside outage windows
        for a in r
            .aborted_attempts
            .iter()
            .filter(|a| a.reason == AbortReason::Deallocated)
        {
            assert!(r.outages.iter().any(|o| o.start == a.end), "trial {trial}");
        }

        seen[0] += r.tasks.iter().filter(|t| t.outlier).count();
        seen[1] += r.outages.len();
        seen[2] += r
            .aborted_attempts
            .iter()
            .filter(|a| a.reason == AbortReason::NodeFailure)
            .count();
        seen[3] += r
            .aborted_attempts
            .iter()
            .filter(|a| a.reason == AbortReason::Deallocated)
            .count();
    }
    // outliers, outages, node failures and preemptions were all exercised
    assert!(seen.iter().all(|&c| c > 0), "{seen:?}");
}
