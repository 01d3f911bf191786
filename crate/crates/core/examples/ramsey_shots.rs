//! Empirical readout statistics of a simulated spin against the likelihood.

use qmagnav::sensor::{outcome_probability, sample_shot, NvSensorModel, RamseyControl};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> qmagnav::Result<()> {
    let model = NvSensorModel::default();
    let omega = model.gamma * 50_000e-9;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let shots = 20_000;
    println!("{:>10} {:>8} {:>10} {:>10}", "tau_s", "phase", "p0", "observed");
    for tau in [1e-7, 1e-6, 1e-5, 7.5e-4] {
        for phase in [0.0, std::f64::consts::FRAC_PI_2] {
            let c = RamseyControl::new(tau, phase)?;
            let p0 = outcome_probability(&model, &c, omega)?;
            let mut zeros = 0;
            for _ in 0..shots {
                zeros += sample_shot(&model, &c, omega, &mut rng)? as usize;
            }
            println!("{tau:>10.1e} {phase:>8.3} {p0:>10.4} {:>10.4}", zeros as f64 / shots as f64);
        }
    }
    Ok(())
}
