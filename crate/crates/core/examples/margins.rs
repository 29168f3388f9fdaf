//! Sum and length-normalized reward margins of one record under a trained
//! policy against a frozen reference.
use napo::data::{make_dataset, DataConfig};
use napo::margin::{reward_margin, MarginKind, Role};
use napo::sweep::PilotSpec;
use napo::policy::LogLinearPolicy;

fn main() -> napo::error::Result<()> {
    let policy = PilotSpec::default().policy(0, 0.8)?;
    let reference = LogLinearPolicy::zeros();
    let records = make_dataset(&DataConfig {
        n_records: 3,
        ..DataConfig::default()
    })?;
    for r in &records {
        for role in [Role::Rejected, Role::LanguageBiased, Role::VisionBiased] {
            let y_o = r.response(role);
            let sum = reward_margin(&policy, &reference, &r.prompt, &r.y_w, y_o, 0.1, MarginKind::SumLogP)?;
            let avg = reward_margin(&policy, &reference, &r.prompt, &r.y_w, y_o, 0.1, MarginKind::AvgLogP)?;
            println!("record {} {:<16} psi_sum {sum:+.4} psi_avg {avg:+.4}", r.id, role.label());
        }
    }
    Ok(())
}
