//! Build a few atoms by hand and look at what the modulation network does to them.

use sdg::dictionary::softplus_inv;
use sdg::{make_time_grid, synthesize_basis, SpectralDictionary};

fn main() -> sdg::Result<()> {
    let grid = make_time_grid(16)?;
    let mut dict = SpectralDictionary::from_effective(&[1.0, 0.5], &[1.0, 4.0], &[0.0, std::f64::consts::FRAC_PI_2], 2)?;
    let plain = synthesize_basis(&dict, &grid);

    // let the hidden units follow t and push the first atom's amplitude up over time
    dict.modnet.input_weights.fill(1.0);
    dict.modnet.output_weights[[0, 0]] = 2.0;
    let modulated = synthesize_basis(&dict, &grid);

    println!("{:>6} {:>10} {:>10} {:>10}", "t", "atom 0", "atom 0 mod", "atom 1");
    for (j, t) in grid.points().iter().enumerate() {
        println!(
            "{t:6.3} {:10.5} {:10.5} {:10.5}",
            plain.0[[j, 0]],
            modulated.0[[j, 0]],
            plain.0[[j, 1]]
        );
    }
    println!("softplus_inv(1) = {:.6}", softplus_inv(1.0));
    Ok(())
}
