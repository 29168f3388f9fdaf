//! Greedy answers of a pilot policy with each modality hidden in turn.
use napo::data::{make_dataset, DataConfig};
use napo::policy::MaskMode;
use napo::sweep::PilotSpec;
use napo::vocab::token_strings;

fn main() -> napo::error::Result<()> {
    let policy = PilotSpec::default().policy(0, 0.8)?;
    let records = make_dataset(&DataConfig {
        n_records: 5,
        seed: 8,
        ..DataConfig::default()
    })?;
    for r in &records {
        println!("{:?} {:?}", token_strings(&r.prompt.visual_tokens), token_strings(&r.prompt.text_tokens));
        for mode in [MaskMode::None, MaskMode::MaskVisual, MaskMode::MaskText] {
            println!("  {mode:?}: {:?}", token_strings(&policy.respond(&r.prompt, mode, 12)));
        }
    }
    Ok(())
}
