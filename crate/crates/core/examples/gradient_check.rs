//! Compares the analytic objective gradient to central differences on a
//! handful of coordinates.
use napo::data::{make_dataset, DataConfig};
use napo::objective::{loss_with_frozen_weights, total_objective, ObjectiveConfig};
use napo::policy::LogLinearPolicy;
use rand::SeedableRng;

fn main() -> napo::error::Result<()> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    let policy = LogLinearPolicy::random(&mut rng, 0.5);
    let reference = LogLinearPolicy::random(&mut rng, 0.5);
    let batch = make_dataset(&DataConfig {
        n_records: 8,
        rho_lb: 0.5,
        rho_vb: 0.5,
        ..DataConfig::default()
    })?;
    let cfg = ObjectiveConfig::default();
    let (b, grad) = total_objective(&batch, &policy, &reference, &cfg)?;
    let q = [b.q_rejected, b.q_lb, b.q_vb];
    let h = 1e-5;
    let mut coords: Vec<usize> = (0..grad.0.len()).filter(|&i| grad.0[i] != 0.0).collect();
    coords.sort_by(|&a, &b| grad.0[b].abs().total_cmp(&grad.0[a].abs()));
    for &i in coords.iter().take(8) {
        let mut up = policy.clone();
        up.params_mut()[i] += h;
        let mut dn = policy.clone();
        dn.params_mut()[i] -= h;
        let fd = (loss_with_frozen_weights(&batch, &up, &reference, &cfg, q, b.gamma)?
            - loss_with_frozen_weights(&batch, &dn, &reference, &cfg, q, b.gamma)?)
            / (2.0 * h);
        println!("param {i:4} analytic {:+.8} finite-diff {fd:+.8}", grad.0[i]);
    }
    Ok(())
}
