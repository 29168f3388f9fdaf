//! DPO against the noise-aware loss at a few margins, with the adaptive q and
//! the dynamic role weights.
use napo::objective::{adaptive_q, dpo_loss, gamma_weights, gamma_weights_clamp_first, napo_loss, napo_margin_grad};

fn main() -> napo::error::Result<()> {
    println!("psi\tdpo\tnapo(q=0.5)\tgrad(q=0.5)");
    for psi in [-2.0, -0.5, 0.0, 0.5, 2.0] {
        println!("{psi}\t{:.4}\t{:.4}\t{:.4}", dpo_loss(psi), napo_loss(psi, 0.5)?, napo_margin_grad(psi, 0.5)?);
    }
    for m in [-1.0, 0.0, 0.5, 2.0] {
        println!("q(m={m}, alpha=1) = {:.4}", adaptive_q(m, 1.0, 0.01, 1.0));
    }
    let g = gamma_weights(0.8, 0.05, 0.3, 0.1, 0.8);
    println!("gamma normalize-then-clamp {:?} (raw {:?})", g.weights, g.raw);
    println!("gamma clamp-then-normalize {:?}", gamma_weights_clamp_first(0.8, 0.05, 0.3, 0.1, 0.8).weights);
    Ok(())
}
