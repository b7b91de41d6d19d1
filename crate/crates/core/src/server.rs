//! Read-only HTTP front end for a tile store.
//!
//! * `GET /manifest` returns `manifest.json`.
//! * `GET /tiles/l{level}/{row}/{col}.{ext}` returns one tile.
//!
//! Malformed tile paths get 400; coordinates outside the pyramid and absent
//! files get 404.

use crate::pyramid::TileCoord;
use crate::store::{StoreError, TileStore};
use axum::extract::{Path as UrlPath, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::Router;
use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;
use thiserror::Error;

pub const TILE_CACHE_CONTROL: &str = "public, max-age=31536000, immutable";

#[derive(Debug, Error)]
pub enum ServerError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: SocketAddr,
        source: std::io::Error,
    },
    #[error("server failed: {0}")]
    Serve(std::io::Error),
}

pub fn router(store: TileStore) -> Router {
    Router::new()
        .route("/manifest", get(manifest))
        .route("/tiles/{*path}", get(tile))
        .with_state(Arc::new(store))
}

async fn manifest(State(store): State<Arc<TileStore>>) -> Response {
    let body = serde_json::to_string_pretty(store.manifest()).expect("manifest serializes");
    ([(header::CONTENT_TYPE, "application/json")], body).into_response()
}

/// Parses `l{level}/{row}/{col}.{ext}`.
pub fn parse_tile_path(path: &str, extension: &str) -> Option<TileCoord> {
    let mut parts = path.split('/');
    let level = parts.next()?.strip_prefix('l')?;
    let row = parts.next()?;
    let (col, ext) = parts.next()?.split_once('.')?;
    if parts.next().is_some() || ext != extension {
        return None;
    }
    let digits = |s: &str| !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit());
    if !(digits(level) && digits(row) && digits(col)) {
        return None;
    }
    Some(TileCoord::new(
        level.parse().ok()?,
        col.parse().ok()?,
        row.parse().ok()?,
    ))
}

async fn tile(State(store): State<Arc<TileStore>>, UrlPath(path): UrlPath<String>) -> Response {
    let manifest = store.manifest();
    let Some(coord) = parse_tile_path(&path, &manifest.extension) else {
        return (
            StatusCode::BAD_REQUEST,
            "expected /tiles/l{level}/{row}/{col}.{ext}",
        )
            .into_response();
    };
    if !manifest.contains(coord) {
        return StatusCode::NOT_FOUND.into_response();
    }
    match tokio::fs::read(store.tile_path(coord)).await {
        Ok(bytes) => {
            let ctype = HeaderValue::from_str(&manifest.content_type)
                .unwrap_or(HeaderValue::from_static("application/octet-stream"));
            (
                [
                    (header::CONTENT_TYPE, ctype),
                    (
                        header::CACHE_CONTROL,
                        HeaderValue::from_static(TILE_CACHE_CONTROL),
                    ),
                ],
                bytes,
            )
                .into_response()
        }
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => StatusCode::NOT_FOUND.into_response(),
        Err(e) => {
            log::error!("reading tile {coord}: {e}");
            StatusCode::INTERNAL_SERVER_ERROR.into_response()
        }
    }
}

/// A bound but not yet running server.
pub struct TileServer {
    listener: tokio::net::TcpListener,
    app: Router,
}

impl TileServer {
    pub async fn bind(root: &Path, addr: SocketAddr) -> Result<Self, ServerError> {
        let store = TileStore::open(root)?;
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|source| ServerError::Bind { addr, source })?;
        Ok(Self {
            listener,
            app: router(store),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.listener
            .local_addr()
            .expect("bound listener has an address")
    }

    pub async fn run(self) -> Result<(), ServerError> {
        axum::serve(self.listener, self.app)
            .await
            .map_err(ServerError::Serve)
    }
}

/// Serves `root` on `port` until the process is stopped.
pub fn serve(root: &Path, port: u16) -> Result<(), ServerError> {
    let rt = tokio::runtime::Runtime::new().map_err(ServerError::Serve)?;
    rt.block_on(async {
        let server = TileServer::bind(root, SocketAddr::from(([0, 0, 0, 0], port))).await?;
        log::info!(
            "serving {} on http://{}",
            root.display(),
            server.local_addr()
        );
        server.run().await
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tile_paths() {
        assert_eq!(
            parse_tile_path("l3/2/1.jpg", "jpg"),
            Some(TileCoord::new(3, 1, 2))
        );
        assert_eq!(
            parse_tile_path("l99/0/0.jpg", "jpg"),
            Some(TileCoord::new(99, 0, 0))
        );
        for bad in [
            "3/2/1.jpg",
            "l3/2/1.png",
            "l3/2/1",
            "l3/2",
            "l3/2/1.jpg/x",
            "lx/2/1.jpg",
            "l3/-2/1.jpg",
            "l3/+2/1.jpg",
            "l/2/1.jpg",
        ] {
            assert_eq!(parse_tile_path(bad, "jpg"), None, "{bad}");
        }
    }
}
