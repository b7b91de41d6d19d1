//! Tile pyramid geometry.
//!
//! A pyramid has `max_level` levels; level `l` is a square image of
//! `tile_px * 2^(l-1)` pixels cut into `4^(l-1)` square tiles. Only every
//! few levels are rendered directly ("rendered levels"); the levels in
//! between are derived by repeated 2x subsampling of a render task's own
//! output region, so each task is independent of every other task.
//!
//! Everything here is pure arithmetic over immutable values.

use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum PlanError {
    #[error("max_level must be at least 1 (got {0})")]
    MaxLevel(u32),
    #[error("max_level {0} exceeds the supported maximum of {MAX_SUPPORTED_LEVEL}")]
    TooDeep(u32),
    #[error("tile_px must be positive")]
    ZeroTile,
    #[error("task_px {task_px} is not a multiple of tile_px {tile_px}")]
    TaskNotTileMultiple { task_px: u64, tile_px: u64 },
    #[error("task_px {task_px} must be tile_px {tile_px} times a power of two")]
    TaskNotPowerOfTwo { task_px: u64, tile_px: u64 },
    #[error("rendered level stride must be at least 1 (got {0})")]
    Stride(u32),
    #[error("world side length must be a positive finite number of millimetres (got {0})")]
    WorldSide(f64),
    #[error("level {level} is outside 1..={max_level}")]
    LevelOutOfRange { level: u32, max_level: u32 },
    #[error("task {0} does not belong to this pyramid")]
    ForeignTask(String),
}

/// Deepest pyramid supported; keeps every per-level count inside `u64`.
pub const MAX_SUPPORTED_LEVEL: u32 = 30;

/// Geometric description of a tile pyramid and its render-task decomposition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PyramidSpec {
    pub max_level: u32,
    pub tile_px: u64,
    pub task_px: u64,
    /// Requested distance between rendered levels. The effective stride is
    /// capped by how many halvings a task region can feed, see
    /// [`PyramidSpec::effective_stride`].
    pub rendered_level_stride: u32,
    pub world_side_mm: f64,
}

impl PyramidSpec {
    pub fn new(
        max_level: u32,
        tile_px: u64,
        task_px: u64,
        rendered_level_stride: u32,
        world_side_mm: f64,
    ) -> Result<Self, PlanError> {
        if max_level < 1 {
            return Err(PlanError::MaxLevel(max_level));
        }
        if max_level > MAX_SUPPORTED_LEVEL {
            return Err(PlanError::TooDeep(max_level));
        }
        if tile_px == 0 {
            return Err(PlanError::ZeroTile);
        }
        if task_px == 0 || !task_px.is_multiple_of(tile_px) {
            return Err(PlanError::TaskNotTileMultiple { task_px, tile_px });
        }
        if !(task_px / tile_px).is_power_of_two() {
            return Err(PlanError::TaskNotPowerOfTwo { task_px, tile_px });
        }
        if rendered_level_stride < 1 {
            return Err(PlanError::Stride(rendered_level_stride));
        }
        if !(world_side_mm.is_finite() && world_side_mm > 0.0) {
            return Err(PlanError::WorldSide(world_side_mm));
        }
        if tile_px.leading_zeros() < max_level + 1 {
            return Err(PlanError::TooDeep(max_level));
        }
        Ok(Self {
            max_level,
            tile_px,
            task_px,
            rendered_level_stride,
            world_side_mm,
        })
    }

    /// The 12-level, 512 px tile, 4096 px task pyramid over a 1.28 km square.
    pub fn terapixel() -> Self {
        Self::new(12, 512, 4096, 4, 1.28e6).expect("terapixel geometry is valid")
    }

    /// Same tile/task geometry as [`PyramidSpec::terapixel`] with fewer levels.
    pub fn terapixel_like(max_level: u32) -> Result<Self, PlanError> {
        Self::new(max_level, 512, 4096, 4, 1.28e6)
    }

    pub fn validate(&self) -> Result<(), PlanError> {
        Self::new(
            self.max_level,
            self.tile_px,
            self.task_px,
            self.rendered_level_stride,
            self.world_side_mm,
        )
        .map(|_| ())
    }

    /// Number of levels one task region can feed (itself plus halvings that
    /// still yield whole tiles).
    pub fn task_depth(&self) -> u32 {
        1 + (self.task_px / self.tile_px).trailing_zeros()
    }

    pub fn effective_stride(&self) -> u32 {
        self.rendered_level_stride.min(self.task_depth())
    }

    pub fn tiles_per_side(&self, level: u32) -> u64 {
        1u64 << (level - 1)
    }

    pub fn side_px(&self, level: u32) -> u64 {
        self.tile_px << (level - 1)
    }

    pub fn tile_count(&self, level: u32) -> u64 {
        1u64 << (2 * (level - 1))
    }

    /// Closed form `(4^max_level - 1) / 3`.
    pub fn total_tiles(&self) -> u64 {
        ((1u128 << (2 * self.max_level)) - 1) as u64 / 3
    }

    pub fn mm_per_px(&self, level: u32) -> f64 {
        self.world_side_mm / self.side_px(level) as f64
    }

    pub fn tile_world_mm(&self, level: u32) -> f64 {
        self.world_side_mm / self.tiles_per_side(level) as f64
    }

    /// Rendered levels in descending order: `max_level`, `max_level - s`, ...
    /// down to the smallest positive one.
    pub fn rendered_levels(&self) -> Vec<u32> {
        let s = self.effective_stride();
        let mut out = Vec::new();
        let mut level = self.max_level as i64;
        while level >= 1 {
            out.push(level as u32);
            level -= s as i64;
        }
        out
    }

    pub fn is_rendered(&self, level: u32) -> bool {
        level >= 1
            && level <= self.max_level
            && (self.max_level - level).is_multiple_of(self.effective_stride())
    }

    /// The rendered level whose tasks produce tiles for `level`.
    pub fn source_level(&self, level: u32) -> u32 {
        let s = self.effective_stride();
        let below_top = self.max_level - level;
        self.max_level - (below_top / s) * s
    }

    /// Lowest level a task at rendered level `level` emits tiles for.
    pub fn lowest_fed_level(&self, level: u32) -> u32 {
        (level + 1).saturating_sub(self.effective_stride()).max(1)
    }

    /// Side of a task region at `level`, clamped to the level image.
    pub fn task_span(&self, level: u32) -> u64 {
        self.task_px.min(self.side_px(level))
    }

    pub fn tasks_per_side(&self, level: u32) -> u64 {
        self.side_px(level) / self.task_span(level)
    }

    /// Render tasks at `level` (zero for derived levels).
    pub fn task_count(&self, level: u32) -> u64 {
        if self.is_rendered(level) {
            let n = self.tasks_per_side(level);
            n * n
        } else {
            0
        }
    }

    pub fn total_tasks(&self) -> u64 {
        self.rendered_levels()
            .into_iter()
            .map(|l| self.task_count(l))
            .sum()
    }

    /// Every task of one rendered level, row-major from the top-left.
    pub fn tasks_at(&self, level: u32, scene_id: &str) -> Vec<RenderTask> {
        if !self.is_rendered(level) {
            return Vec::new();
        }
        let span = self.task_span(level);
        let n = self.tasks_per_side(level);
        let mut out = Vec::with_capacity((n * n) as usize);
        for row in 0..n {
            for col in 0..n {
                out.push(RenderTask {
                    task_id: RenderTask::id_for(level, row, col),
                    level,
                    origin_x: col * span,
                    origin_y: row * span,
                    span_px: span,
                    scene_id: scene_id.to_string(),
                });
            }
        }
        out
    }

    /// All tasks, highest rendered level first.
    pub fn tasks(&self, scene_id: &str) -> Vec<RenderTask> {
        self.rendered_levels()
            .into_iter()
            .flat_map(|l| self.tasks_at(l, scene_id))
            .collect()
    }

    pub fn contains_tile(&self, tile: TileCoord) -> bool {
        tile.level >= 1
            && tile.level <= self.max_level
            && tile.col < self.tiles_per_side(tile.level)
            && tile.row < self.tiles_per_side(tile.level)
    }

    /// Whether `task` is one of this pyramid's tasks.
    pub fn owns_task(&self, task: &RenderTask) -> bool {
        let level = task.level;
        if !self.is_rendered(level) {
            return false;
        }
        let span = self.task_span(level);
        task.span_px == span
            && task.origin_x.is_multiple_of(span)
            && task.origin_y.is_multiple_of(span)
            && task.origin_x < self.side_px(level)
            && task.origin_y < self.side_px(level)
    }
}

/// One row of the pyramid table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelPlan {
    pub level: u32,
    pub side_px: u64,
    pub total_pixels: u128,
    pub tile_count: u64,
    pub tile_world_mm: f64,
    pub is_rendered: bool,
    pub render_task_count: u64,
    /// Rendered level this one is subsampled from; `None` for rendered levels.
    pub derived_from: Option<u32>,
}

/// A planned pyramid: geometry plus per-level rows and totals.
///
/// This is what gets written to `pyramid.plan`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PyramidPlan {
    pub spec: PyramidSpec,
    pub rendered_levels: Vec<u32>,
    /// Highest level first.
    pub levels: Vec<LevelPlan>,
    pub total_tiles: u64,
    pub total_tasks: u64,
}

impl PyramidPlan {
    pub fn from_spec(spec: PyramidSpec) -> Self {
        let levels: Vec<LevelPlan> = (1..=spec.max_level)
            .rev()
            .map(|level| {
                let side = spec.side_px(level);
                let rendered = spec.is_rendered(level);
                LevelPlan {
                    level,
                    side_px: side,
                    total_pixels: side as u128 * side as u128,
                    tile_count: spec.tile_count(level),
                    tile_world_mm: spec.tile_world_mm(level),
                    is_rendered: rendered,
                    render_task_count: spec.task_count(level),
                    derived_from: (!rendered).then(|| spec.source_level(level)),
                }
            })
            .collect();
        let total_tiles = levels.iter().map(|l| l.tile_count).sum();
        let total_tasks = levels.iter().map(|l| l.render_task_count).sum();
        Self {
            spec,
            rendered_levels: spec.rendered_levels(),
            levels,
            total_tiles,
            total_tasks,
        }
    }

    pub fn level(&self, level: u32) -> Option<&LevelPlan> {
        self.levels.iter().find(|l| l.level == level)
    }

    pub fn to_text(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes")
    }

    pub fn from_text(text: &str) -> Result<Self, PlanFileError> {
        let plan: Self = serde_json::from_str(text)?;
        plan.spec.validate()?;
        if Self::from_spec(plan.spec) != plan {
            return Err(PlanFileError::Inconsistent);
        }
        Ok(plan)
    }

    /// Fixed-width summary of the level table and totals.
    pub fn summary_table(&self, kb_per_tile: f64) -> String {
        use std::fmt::Write;
        let storage = storage_estimate(&self.spec, kb_per_tile);
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:>5} {:>10} {:>16} {:>10} {:>12} {:>8} {:>8} {:>14}",
            "level", "side_px", "pixels", "tiles", "tile_mm", "rendered", "tasks", "storage_kb"
        );
        for (row, kb) in self.levels.iter().zip(&storage.per_level_kb) {
            let _ = writeln!(
                s,
                "{:>5} {:>10} {:>16} {:>10} {:>12} {:>8} {:>8} {:>14}",
                row.level,
                row.side_px,
                row.total_pixels,
                row.tile_count,
                row.tile_world_mm,
                if row.is_rendered { "yes" } else { "-" },
                row.render_task_count,
                kb.1
            );
        }
        let _ = writeln!(
            s,
            "total tiles {}  total tasks {}  storage {} kB",
            self.total_tiles, self.total_tasks, storage.total_kb
        );
        s
    }
}

#[derive(Debug, Error)]
pub enum PlanFileError {
    #[error("malformed plan file: {0}")]
    Parse(#[from] serde_json::Error),
    #[error(transparent)]
    Geometry(#[from] PlanError),
    #[error("plan rows do not match the geometry they were planned from")]
    Inconsistent,
}

pub fn plan_pyramid(
    max_level: u32,
    tile_px: u64,
    task_px: u64,
    stride: u32,
    world_side_mm: f64,
) -> Result<PyramidPlan, PlanError> {
    let spec = PyramidSpec::new(max_level, tile_px, task_px, stride, world_side_mm)?;
    Ok(PyramidPlan::from_spec(spec))
}

/// One render unit: a square region of a rendered level.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RenderTask {
    pub task_id: String,
    pub level: u32,
    pub origin_x: u64,
    pub origin_y: u64,
    pub span_px: u64,
    pub scene_id: String,
}

impl RenderTask {
    pub fn id_for(level: u32, task_row: u64, task_col: u64) -> String {
        format!("l{level}-r{task_row}-c{task_col}")
    }
}

/// Tile address; origin top-left, `col` grows right, `row` grows down.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TileCoord {
    pub level: u32,
    pub col: u64,
    pub row: u64,
}

impl TileCoord {
    pub fn new(level: u32, col: u64, row: u64) -> Self {
        Self { level, col, row }
    }
}

impl fmt::Display for TileCoord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.level, self.col, self.row)
    }
}

/// Tiles produced by one task: its own level cut directly, then each derived
/// level below it down to the next rendered level. Highest level first,
/// row-major within a level.
pub fn tiles_emitted_per_task(task: &RenderTask, spec: &PyramidSpec) -> Vec<TileCoord> {
    let mut out = Vec::new();
    let lowest = spec.lowest_fed_level(task.level);
    for level in (lowest..=task.level).rev() {
        let shift = task.level - level;
        let tile_span = spec.tile_px << shift;
        if task.span_px < tile_span {
            break;
        }
        let per_side = task.span_px / tile_span;
        let col0 = task.origin_x / tile_span;
        let row0 = task.origin_y / tile_span;
        for r in 0..per_side {
            for c in 0..per_side {
                out.push(TileCoord::new(level, col0 + c, row0 + r));
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StorageEstimate {
    pub kb_per_tile: f64,
    /// `(level, kB)`, highest level first.
    pub per_level_kb: Vec<(u32, f64)>,
    pub total_kb: f64,
}

pub fn storage_estimate(spec: &PyramidSpec, kb_per_tile: f64) -> StorageEstimate {
    let per_level_kb: Vec<(u32, f64)> = (1..=spec.max_level)
        .rev()
        .map(|l| (l, spec.tile_count(l) as f64 * kb_per_tile))
        .collect();
    let total_kb = per_level_kb.iter().map(|(_, kb)| kb).sum();
    StorageEstimate {
        kb_per_tile,
        per_level_kb,
        total_kb,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn terapixel_level_twelve_row() {
        let plan = PyramidPlan::from_spec(PyramidSpec::terapixel());
        let top = plan.level(12).unwrap();
        assert_eq!(top.side_px, 1_048_576);
        assert_eq!(top.total_pixels, 1_099_511_627_776);
        assert_eq!(top.tile_count, 4_194_304);
        assert_eq!(top.tile_world_mm, 625.0);
        assert_eq!(top.render_task_count, 65_536);
        assert_eq!(plan.total_tiles, 5_592_405);
        assert_eq!(plan.total_tasks, 65_793);
        assert_eq!(plan.rendered_levels, vec![12, 8, 4]);
        assert_eq!(plan.level(11).unwrap().derived_from, Some(12));
        assert_eq!(plan.level(1).unwrap().derived_from, Some(4));
    }

    #[test]
    fn single_level_base_case() {
        let plan = plan_pyramid(1, 512, 4096, 4, 1.28e6).unwrap();
        assert_eq!(plan.total_tiles, 1);
        assert_eq!(plan.total_tasks, 1);
        assert_eq!(plan.levels[0].tile_world_mm, 1_280_000.0);
        let tasks = plan.spec.tasks("s");
        assert_eq!(tasks[0].span_px, 512);
        assert_eq!(tiles_emitted_per_task(&tasks[0], &plan.spec).len(), 1);
    }

    #[test]
    fn rejects_bad_geometry() {
        assert_eq!(
            plan_pyramid(4, 512, 1000, 4, 1.0).unwrap_err(),
            PlanError::TaskNotTileMultiple {
                task_px: 1000,
                tile_px: 512
            }
        );
        assert_eq!(
            plan_pyramid(4, 512, 4096, 0, 1.0).unwrap_err(),
            PlanError::Stride(0)
        );
        assert_eq!(
            plan_pyramid(0, 512, 4096, 4, 1.0).unwrap_err(),
            PlanError::MaxLevel(0)
        );
        assert!(matches!(
            plan_pyramid(4, 512, 1536, 4, 1.0),
            Err(PlanError::TaskNotPowerOfTwo { .. })
        ));
        assert!(plan_pyramid(4, 512, 4096, 4, -1.0).is_err());
        assert!(plan_pyramid(40, 512, 4096, 4, 1.0).is_err());
    }

    #[test]
    fn stride_is_capped_by_task_depth() {
        // 1024 px tasks over 256 px tiles feed three levels, not four
        let spec = PyramidSpec::new(6, 256, 1024, 4, 1.0e6).unwrap();
        assert_eq!(spec.effective_stride(), 3);
        assert_eq!(spec.rendered_levels(), vec![6, 3]);
        // bigger tasks than needed just feed `stride` levels
        let spec = PyramidSpec::new(6, 512, 8192, 2, 1.0e6).unwrap();
        assert_eq!(spec.effective_stride(), 2);
        assert_eq!(spec.rendered_levels(), vec![6, 4, 2]);
    }

    #[test]
    fn top_level_task_emits_85_tiles() {
        let spec = PyramidSpec::terapixel();
        let t = &spec.tasks_at(12, "s")[777];
        assert_eq!(tiles_emitted_per_task(t, &spec).len(), 85);
        let t4 = &spec.tasks_at(4, "s")[0];
        assert_eq!(t4.span_px, 4096);
        let tiles = tiles_emitted_per_task(t4, &spec);
        assert_eq!(tiles.len(), 85);
        let levels: Vec<u32> = tiles.iter().map(|t| t.level).collect();
        assert_eq!(levels.iter().filter(|&&l| l == 1).count(), 1);
        assert_eq!(levels.iter().filter(|&&l| l == 4).count(), 64);
    }

    #[test]
    fn clamped_task_emits_one_tile() {
        let spec = PyramidSpec::new(1, 512, 4096, 4, 1.0).unwrap();
        let task = &spec.tasks("s")[0];
        assert_eq!(
            tiles_emitted_per_task(task, &spec),
            vec![TileCoord::new(1, 0, 0)]
        );
    }

    #[test]
    fn storage_matches_table() {
        let est = storage_estimate(&PyramidSpec::terapixel(), 104.0);
        assert_eq!(est.per_level_kb[0], (12, 436_207_616.0));
        assert_eq!(est.total_kb, 581_610_120.0);
    }

    #[test]
    fn mm_per_px_at_top() {
        let mm = PyramidSpec::terapixel().mm_per_px(12);
        assert!((mm - 1.2207).abs() < 1e-4);
    }

    #[test]
    fn plan_text_round_trip_and_tamper() {
        let plan = PyramidPlan::from_spec(PyramidSpec::terapixel_like(6).unwrap());
        let text = plan.to_text();
        assert_eq!(PyramidPlan::from_text(&text).unwrap(), plan);
        let tampered = text.replacen("\"total_tiles\": 1365", "\"total_tiles\": 1366", 1);
        assert!(matches!(
            PyramidPlan::from_text(&tampered),
            Err(PlanFileError::Inconsistent)
        ));
    }

    fn any_spec() -> impl Strategy<Value = PyramidSpec> {
        (1u32..=9, 0u32..=3, 0u32..=4, 1u32..=5).prop_map(
            |(levels, tile_pow, ratio_pow, stride)| {
                let tile = 16u64 << tile_pow;
                PyramidSpec::new(levels, tile, tile << ratio_pow, stride, 1.0e5).unwrap()
            },
        )
    }

    proptest! {
        #[test]
        fn closed_form_total_matches_loop(spec in any_spec()) {
            let looped: u64 = (1..=spec.max_level).map(|l| spec.tile_count(l)).sum();
            prop_assert_eq!(looped, spec.total_tiles());
        }

        #[test]
        fn emitted_tiles_conserve_total(spec in any_spec()) {
            let emitted: usize = spec
                .tasks("s")
                .iter()
                .map(|t| tiles_emitted_per_task(t, &spec).len())
                .sum();
            prop_assert_eq!(emitted as u64, spec.total_tiles());
        }

        #[test]
        fn storage_grows_with_depth(levels in 1u32..12, kb in 0.1f64..500.0) {
            let a = PyramidSpec::terapixel_like(levels).unwrap();
            let b = PyramidSpec::terapixel_like(levels + 1).unwrap();
            prop_assert!(storage_estimate(&b, kb).total_kb > storage_estimate(&a, kb).total_kb);
        }
    }
}
