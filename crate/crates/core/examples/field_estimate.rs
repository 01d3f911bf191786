//! Two-stage estimation of one field value across budgets, against the bound.

use qmagnav::crlb::quantum_crlb_field;
use qmagnav::estimator::{estimate_field, EstimatorBudget, EstimatorConfig};
use qmagnav::sensor::NvSensorModel;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> qmagnav::Result<()> {
    let model = NvSensorModel::default();
    let config = EstimatorConfig::default();
    let b_true = 51_234.5e-9;
    let bound_tau = model.t2_star / 2.0;
    for t in [0.05, 0.1, 0.3, 0.6, 1.5] {
        let mut se = Vec::new();
        for seed in 0..40 {
            let mut budget = EstimatorBudget::new(t)?;
            let est = estimate_field(&model, &config, &mut budget, model.gamma * b_true, &mut ChaCha8Rng::seed_from_u64(seed))?;
            se.push((est.b_hat_nt() - b_true * 1e9).powi(2));
        }
        se.sort_by(f64::total_cmp);
        let bound = quantum_crlb_field(&model, bound_tau, t)?.variance_b * 1e18;
        println!("T = {t:>4} s  median SE = {:>9.4} nT^2  bound = {bound:.4} nT^2", se[se.len() / 2]);
    }
    Ok(())
}
