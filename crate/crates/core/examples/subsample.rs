//! Derives a half-resolution image with both kernels and shows how they differ.

use tilefarm::render::RegionImage;
use tilefarm::tiler::{subsample, Kernel};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // an edge on an even column: the box keeps it sharp, the 4x4 kernel softens it
    let img = RegionImage::from_fn(8, 4, |x, _| if x < 4 { [0; 3] } else { [255; 3] });
    for (name, kernel) in [("box2", Kernel::box2()), ("binomial4", Kernel::binomial4())] {
        let half = subsample(&img, &kernel)?;
        let row: Vec<u8> = (0..half.width).map(|x| half.get(x, 0)[0]).collect();
        println!("{name:>9}: {row:?}");
    }
    // odd sizes are rejected rather than silently cropped
    println!(
        "{}",
        subsample(&RegionImage::new(5, 4), &Kernel::box2()).unwrap_err()
    );
    Ok(())
}
