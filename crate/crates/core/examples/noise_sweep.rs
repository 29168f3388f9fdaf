//! A reduced noise sweep: three seeds, two noise levels, default arms.
use napo::sweep::{noise_sweep, SweepConfig};

fn main() -> napo::error::Result<()> {
    let mut cfg = SweepConfig {
        rhos: vec![0.0, 0.5],
        seeds: vec![0, 1, 2],
        ..SweepConfig::default()
    };
    cfg.data.n_records = 300;
    cfg.heldout.n_records = 300;
    let table = noise_sweep(&cfg)?;
    for s in &table.summary {
        println!(
            "rho {:.1} {:<14} bias {:.4}±{:.4} pref {:.3}",
            s.rho, s.variant, s.bias_rate_mean, s.bias_rate_sd, s.pref_accuracy_mean
        );
    }
    Ok(())
}
