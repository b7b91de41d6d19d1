//! Builds a tiny tile store, serves it on an ephemeral port and fetches a
//! tile back over HTTP.

use std::io::{Read, Write};
use std::net::{SocketAddr, TcpStream};
use tilefarm::pyramid::PyramidSpec;
use tilefarm::render::RegionImage;
use tilefarm::server::TileServer;
use tilefarm::store::{Manifest, TileSink, TileStore};
use tilefarm::tiler::{encode_image, EncodePolicy};

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let spec = PyramidSpec::new(2, 32, 64, 1, 100.0)?;
    let store = TileStore::create(dir.path(), Manifest::for_spec(&spec, EncodePolicy::Png))?;
    let coords: Vec<_> = store.manifest().coords().collect();
    for c in coords {
        let img = RegionImage::from_fn(32, 32, |x, y| {
            [(x * 8) as u8, (y * 8) as u8, (c.level * 100) as u8]
        });
        store.put_tile(c, &encode_image(&img, EncodePolicy::Png)?)?;
    }

    let server = TileServer::bind(dir.path(), SocketAddr::from(([127, 0, 0, 1], 0))).await?;
    let addr = server.local_addr();
    tokio::spawn(server.run());
    println!("serving {} on http://{addr}", dir.path().display());

    let response = tokio::task::spawn_blocking(move || -> std::io::Result<String> {
        let mut s = TcpStream::connect(addr)?;
        s.write_all(b"GET /tiles/l2/1/0.png HTTP/1.1\r\nHost: x\r\nConnection: close\r\n\r\n")?;
        let mut buf = Vec::new();
        s.read_to_end(&mut buf)?;
        let head = buf.split(|&b| b == b'\r').next().unwrap_or_default();
        Ok(format!(
            "{} ({} bytes on the wire)",
            String::from_utf8_lossy(head),
            buf.len()
        ))
    })
    .await??;
    println!("{response}");
    Ok(())
}
