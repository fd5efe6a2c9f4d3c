//! Truncating the Gaussian-alike kernel's series after N terms, with each
//! term computed as an inner product of explicit feature maps.

use pkkd::theory::{feature_term, phi_map, random_cases, residual_table, series_term, Side};

fn main() -> pkkd::Result<()> {
    let (x, f, sigma) = ([0.6, -0.2, 0.9], [0.4, 0.8, -0.3], 0.9);
    for n in 0..=4 {
        let left = phi_map(&x, n, sigma, Side::Left)?;
        println!(
            "order {n}: {:2} features, via maps {:+.12e}, closed form {:+.12e}",
            left.len(),
            feature_term(&x, &f, sigma, n)?,
            series_term(&x, &f, sigma, n)?
        );
    }

    let cases = random_cases(100, 3, 2.0, 0)?;
    println!("\norder  max residual  truncation bound");
    for row in residual_table(&cases, 15)? {
        println!("{:5}  {:12.3e}  {:16.3e}", row.order, row.max_residual, row.max_bound);
    }
    Ok(())
}
