//! Margin distributions of the pilot split by noise flag.
use napo::data::{make_dataset, DataConfig};
use napo::harness::analysis::analyze_margins;
use napo::sweep::PilotSpec;

fn main() -> napo::error::Result<()> {
    let records = make_dataset(&DataConfig {
        n_records: 2000,
        ..DataConfig::default()
    })?;
    let policy = PilotSpec::default().policy(0, 0.8)?;
    let a = analyze_margins(&records, &policy, None, 0.1, 20)?;
    for p in &a.panels {
        println!("{:<16} {:?} noisy={:<5} n={:4} mean {:+.4} sd {:.4}", p.role.label(), p.kind, p.noisy, p.n, p.mean, p.sd);
    }
    for o in &a.orderings {
        println!("{} clean {:+.4} noisy {:+.4} z {:.1} {:?}", o.role.label(), o.clean_mean, o.noisy_mean, o.z(), o.status);
    }
    Ok(())
}
