//! Synthetic anomaly, dipole main field, raster round trips and cell features.

use qmagnav::map::{
    feature_map, gradient_magnitude_map, read_asc, synth_map, total_field, write_asc, write_bin, read_bin, DipoleField,
    SynthSpec,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> qmagnav::Result<()> {
    let anomaly = synth_map(&SynthSpec::high_contrast(120, 90), &mut ChaCha8Rng::seed_from_u64(3))?;
    let total = total_field(&anomaly, &DipoleField::default())?;
    let (hx, hy) = total.spacing();
    println!("{}x{} pixels, spacing {hx:.1} m east, {hy:.1} m north", total.width(), total.height());

    let asc = write_asc(&total);
    let back = read_asc(&asc)?;
    let worst = total.values().iter().zip(back.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    println!("ESRI ASCII: {} bytes, max round-trip error {worst:e} nT", asc.len());
    let bin = write_bin(&total);
    println!("binary: {} bytes, identical = {}", bin.len(), read_bin(&bin)? == total);

    let grid = feature_map(&total)?;
    let grad: Vec<f64> = gradient_magnitude_map(&grid).into_iter().flatten().collect();
    let strong = grad.iter().filter(|&&g| g >= 0.05).count();
    println!("{} cells, {strong} with |grad B| >= 0.05 nT/m", grid.len());
    let f = grid.feature(60, 45).expect("valid cell");
    println!("cell (60, 45): gx {:.4} gy {:.4} nT/m, dxy {:e} nT/m^2", f.gx, f.gy, f.dxy);
    Ok(())
}
