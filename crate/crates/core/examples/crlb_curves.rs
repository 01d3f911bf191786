//! Budgeted quantum bound over dwell time and where it beats classical levels.

use qmagnav::crlb::{classical_crlb, log_grid, ClassicalSensorModel, CrlbCurve};
use qmagnav::sensor::NvSensorModel;

fn main() -> qmagnav::Result<()> {
    let model = NvSensorModel::default();
    let grid = log_grid(1e-6, 1.4e-3, 200)?;
    // made-up classical noise levels for illustration
    let classical = [
        ClassicalSensorModel { label: "fluxgate_1nT".into(), sigma: 1e-9 },
        ClassicalSensorModel { label: "mems_3nT".into(), sigma: 3e-9 },
    ];
    let curve = CrlbCurve::compute(&model, 1.5, &grid, &classical)?;
    let best = curve.argmin().expect("non-empty grid");
    println!("minimum at tau = {:.1} us: var = {:e} T^2 over {} shots", best.tau * 1e6, best.variance_b, best.shots);
    println!("T2*/2 = {:.1} us", model.t2_star / 2.0 * 1e6);
    for (c, w) in classical.iter().zip(&curve.windows) {
        println!("{}: var {:e} T^2, quantum better on {w:?}", c.label, classical_crlb(c)?);
    }
    Ok(())
}
