//! Trains from the pilot on a noisy dataset and prints held-out metrics.
use napo::data::{make_dataset, DataConfig};
use napo::sweep::{default_heldout, PilotSpec};
use napo::trainer::{train_with_observer, TrainConfig};

fn main() -> napo::error::Result<()> {
    let data = make_dataset(&DataConfig {
        n_records: 600,
        rho_lb: 0.3,
        rho_vb: 0.3,
        ..DataConfig::default()
    })?;
    let heldout = make_dataset(&DataConfig {
        n_records: 400,
        ..default_heldout()
    })?;
    let init = PilotSpec::default().policy(0, 0.8)?;
    let cfg = TrainConfig {
        eval_every: 40,
        ..TrainConfig::default()
    };
    let (_, report) = train_with_observer(&data, &init, Some(&heldout), &cfg, |e| {
        if e.step % 40 == 0 {
            let b = &e.breakdown;
            println!("step {:4} loss {:.4} q_lb {:.3} q_vb {:.3} gamma {:.2?}", e.step, b.loss_total, b.q_lb, b.q_vb, b.gamma);
        }
    })?;
    for p in &report.evals {
        let m = p.metrics;
        println!("eval @{:4} pref {:.3} bias {:.3} halluc {:.3}", p.step, m.pref_accuracy, m.bias_rate, m.halluc_rate);
    }
    Ok(())
}
