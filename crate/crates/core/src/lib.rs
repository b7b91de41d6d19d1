//! Plan, render, tile, schedule and analyse a multi-resolution image pyramid.
//!
//! A pyramid of `L` levels has `4^(l-1)` tiles at level `l`. Only every
//! few levels are rendered; each render task covers a square region that is
//! cut into tiles and repeatedly subsampled to fill the levels beneath it.
//! Tasks run on a pool of workers, either for real (threads writing a
//! [`store::TileStore`]) or on a virtual clock ([`orchestrator`] simulated
//! mode) for scaling studies that [`analysis`] turns into speedup,
//! efficiency, energy and cost tables.
//!
//! ```
//! use tilefarm::pyramid::PyramidSpec;
//!
//! let spec = PyramidSpec::terapixel();
//! assert_eq!(spec.rendered_levels(), [12, 8, 4]);
//! assert_eq!(spec.total_tasks(), 65_793);
//! assert_eq!(spec.total_tiles(), 5_592_405);
//! ```

pub mod analysis;
pub mod cli;
pub mod config;
pub mod metrics;
pub mod orchestrator;
pub mod pyramid;
pub mod render;
pub mod scene;
pub mod server;
pub mod store;
pub mod tiler;
