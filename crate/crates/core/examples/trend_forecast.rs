//! Fits exponential growth to yearly performance figures and asks when a
//! target is reached.

use tilefarm::analysis::trend_forecast;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // year, sustained FLOP/s of a hypothetical leading system
    let points = [
        (2009.0, 1.76e15),
        (2011.0, 1.05e16),
        (2013.0, 3.39e16),
        (2016.0, 9.3e16),
        (2018.0, 1.44e17),
        (2020.0, 4.42e17),
    ];
    let (fit, year) = trend_forecast(&points, 1e18)?;
    println!("growth {:.2}x per year", fit.growth_per_year());
    println!("1e18 reached around {year:.1}");
    println!("fit at 2025: {:.3e}", fit.predict(2025.0));
    Ok(())
}
