//! On-disk tile hierarchy.
//!
//! Layout under the root:
//!
//! ```text
//! manifest.json
//! l{level}/{row}/{col}.{ext}
//! ```
//!
//! Tiles are written to a temporary file in the target directory and renamed
//! into place, so readers never observe a partial tile.

use crate::pyramid::{PyramidSpec, TileCoord};
use crate::tiler::{decode_tile, EncodePolicy};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Destination for encoded tiles. Implementations must accept concurrent
/// calls for distinct coordinates and allow overwrites.
pub trait TileSink: Send + Sync {
    fn put_tile(&self, coord: TileCoord, bytes: &[u8]) -> io::Result<()>;
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("i/o error at {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("manifest at {path} is malformed: {source}")]
    Manifest {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("manifest is inconsistent: {0}")]
    Inconsistent(String),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelGrid {
    pub level: u32,
    pub tiles_per_side: u64,
    pub tile_count: u64,
}

/// Description of a stored pyramid, written as `manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tile_px: u64,
    pub max_level: u32,
    pub world_side_mm: f64,
    /// File extension of every tile, without the dot.
    pub extension: String,
    /// MIME type of every tile.
    pub content_type: String,
    /// Level 1 first.
    pub levels: Vec<LevelGrid>,
    pub total_tiles: u64,
}

impl Manifest {
    pub fn for_spec(spec: &PyramidSpec, encode: EncodePolicy) -> Self {
        Self {
            tile_px: spec.tile_px,
            max_level: spec.max_level,
            world_side_mm: spec.world_side_mm,
            extension: encode.extension().to_string(),
            content_type: encode.content_type().to_string(),
            levels: (1..=spec.max_level)
                .map(|level| LevelGrid {
                    level,
                    tiles_per_side: spec.tiles_per_side(level),
                    tile_count: spec.tile_count(level),
                })
                .collect(),
            total_tiles: spec.total_tiles(),
        }
    }

    pub fn grid(&self, level: u32) -> Option<&LevelGrid> {
        level
            .checked_sub(1)
            .and_then(|i| self.levels.get(i as usize))
            .filter(|g| g.level == level)
    }

    pub fn contains(&self, coord: TileCoord) -> bool {
        self.grid(coord.level)
            .is_some_and(|g| coord.col < g.tiles_per_side && coord.row < g.tiles_per_side)
    }

    pub fn check(&self) -> Result<(), StoreError> {
        let bad = |m: String| Err(StoreError::Inconsistent(m));
        if self.levels.len() != self.max_level as usize {
            return bad(format!(
                "{} level grids for max level {}",
                self.levels.len(),
                self.max_level
            ));
        }
        let mut sum = 0u64;
        for (i, g) in self.levels.iter().enumerate() {
            if g.level != i as u32 + 1 {
                return bad(format!("grid {i} is labelled level {}", g.level));
            }
            if g.tiles_per_side.checked_mul(g.tiles_per_side) != Some(g.tile_count) {
                return bad(format!(
                    "level {} count {} is not a square",
                    g.level, g.tile_count
                ));
            }
            sum += g.tile_count;
        }
        if sum != self.total_tiles {
            return bad(format!(
                "levels sum to {sum}, total says {}",
                self.total_tiles
            ));
        }
        Ok(())
    }

    /// All coordinates, level by level, row-major.
    pub fn coords(&self) -> impl Iterator<Item = TileCoord> + '_ {
        self.levels.iter().flat_map(|g| {
            (0..g.tiles_per_side).flat_map(move |row| {
                (0..g.tiles_per_side).map(move |col| TileCoord::new(g.level, col, row))
            })
        })
    }

    /// Path of a tile relative to the store root.
    pub fn relative_path(&self, coord: TileCoord) -> PathBuf {
        PathBuf::from(format!("l{}", coord.level))
            .join(coord.row.to_string())
            .join(format!("{}.{}", coord.col, self.extension))
    }
}

/// Filesystem-backed tile store.
#[derive(Debug, Clone)]
pub struct TileStore {
    root: PathBuf,
    manifest: Manifest,
}

impl TileStore {
    /// Creates the root if needed and writes the manifest.
    pub fn create(root: &Path, manifest: Manifest) -> Result<Self, StoreError> {
        manifest.check()?;
        fs::create_dir_all(root).map_err(io_err(root))?;
        let path = root.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        write_atomic(&path, text.as_bytes()).map_err(io_err(&path))?;
        Ok(Self {
            root: root.to_path_buf(),
            manifest,
        })
    }

    pub fn open(root: &Path) -> Result<Self, StoreError> {
        let manifest = read_manifest(root)?;
        Ok(Self {
            root: root.to_path_buf(),
            manifest,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn tile_path(&self, coord: TileCoord) -> PathBuf {
        self.root.join(self.manifest.relative_path(coord))
    }

    pub fn get_tile(&self, coord: TileCoord) -> io::Result<Vec<u8>> {
        if !self.manifest.contains(coord) {
            return Err(io::Error::new(
                io::ErrorKind::NotFound,
                format!("tile {coord} outside the pyramid"),
            ));
        }
        fs::read(self.tile_path(coord))
    }
}

impl TileSink for TileStore {
    fn put_tile(&self, coord: TileCoord, bytes: &[u8]) -> io::Result<()> {
        if !self.manifest.contains(coord) {
            return Err(io::Error::new(
                io::ErrorKind::InvalidInput,
                format!("tile {coord} outside the pyramid"),
            ));
        }
        let path = self.tile_path(coord);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        write_atomic(&path, bytes)
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

pub fn read_manifest(root: &Path) -> Result<Manifest, StoreError> {
    let path = root.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|source| StoreError::Manifest { path, source })?;
    manifest.check()?;
    Ok(manifest)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct StoreReport {
    pub expected: u64,
    pub present: u64,
    pub missing: Vec<TileCoord>,
    /// Files under the level directories that match no tile coordinate.
    pub extra: Vec<PathBuf>,
    pub undecodable: Vec<TileCoord>,
}

impl StoreReport {
    pub fn defects(&self) -> usize {
        self.missing.len() + self.extra.len() + self.undecodable.len()
    }

    pub fn is_clean(&self) -> bool {
        self.defects() == 0
    }
}

/// Checks every expected tile exists, decodes, and has the manifest's size,
/// and that no stray files sit under the `l{level}` directories. Other files
/// in the root (plan, run record, metrics) are ignored.
pub fn verify_store(root: &Path) -> Result<StoreReport, StoreError> {
    let store = TileStore::open(root)?;
    let manifest = store.manifest();
    let mut report = StoreReport {
        expected: manifest.total_tiles,
        ..StoreReport::default()
    };
    let mut expected_paths = BTreeSet::new();
    for coord in manifest.coords() {
        let rel = manifest.relative_path(coord);
        let path = root.join(&rel);
        expected_paths.insert(rel);
        match fs::read(&path) {
            Ok(bytes) => {
                report.present += 1;
                let ok = decode_tile(&bytes)
                    .map(|img| {
                        img.width as u64 == manifest.tile_px
                            && img.height as u64 == manifest.tile_px
                    })
                    .unwrap_or(false);
                if !ok {
                    report.undecodable.push(coord);
                }
            }
            Err(e) if e.kind() == io::ErrorKind::NotFound => report.missing.push(coord),
            Err(e) => return Err(io_err(&path)(e)),
        }
    }
    for entry in fs::read_dir(root).map_err(io_err(root))? {
        let entry = entry.map_err(io_err(root))?;
        let name = entry.file_name();
        let is_level_dir = name
            .to_str()
            .and_then(|n| n.strip_prefix('l'))
            .is_some_and(|n| !n.is_empty() && n.bytes().all(|b| b.is_ascii_digit()));
        if !is_level_dir {
            continue;
        }
        collect_extra(root, &entry.path(), &expected_paths, &mut report.extra)?;
    }
    report.extra.sort();
    Ok(report)
}

fn collect_extra(
    root: &Path,
    path: &Path,
    expected: &BTreeSet<PathBuf>,
    out: &mut Vec<PathBuf>,
) -> Result<(), StoreError> {
    if path.is_dir() {
        for entry in fs::read_dir(path).map_err(io_err(path))? {
            let entry = entry.map_err(io_err(path))?;
            collect_extra(root, &entry.path(), expected, out)?;
        }
    } else {
        let rel = path.strip_prefix(root).unwrap_or(path).to_path_buf();
        if !expected.contains(&rel) {
            out.push(rel);
        }
    }
    Ok(())
}
