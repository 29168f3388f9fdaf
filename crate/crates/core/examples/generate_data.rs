//! Builds a small noisy dataset and shows a few records with their noise flags.
use napo::data::{length_stats, make_dataset, noise_rates, DataConfig};
use napo::vocab::token_strings;

fn main() -> napo::error::Result<()> {
    let records = make_dataset(&DataConfig {
        n_records: 2000,
        rho_lb: 0.3,
        rho_vb: 0.3,
        seed: 1,
        ..DataConfig::default()
    })?;
    for r in records.iter().take(4) {
        let f = r.flags()?;
        println!("visual {:?} text {:?}", token_strings(&r.prompt.visual_tokens), token_strings(&r.prompt.text_tokens));
        println!("  y_w  {:?}", token_strings(&r.y_w));
        println!("  y_lb {:?} noisy={}", token_strings(&r.y_lb), f.lb_noise);
        println!("  y_vb {:?} noisy={}", token_strings(&r.y_vb), f.vb_noise);
    }
    let (lb, vb) = noise_rates(&records)?;
    println!("noise rates lb {lb:.3} vb {vb:.3}");
    let s = length_stats(&records)?;
    println!("length gap lb {:.2} vb {:.2}", s.lb_gap(), s.vb_gap());
    Ok(())
}
