//! Prints MAE, BCE and a few Box-Cox curves on a coarse grid.
use napo::harness::curves::{loss_curves, CurvesConfig};

fn main() -> napo::error::Result<()> {
    let cfg = CurvesConfig {
        q_list: vec![0.1, 0.5, 0.9],
        x_step: 0.1,
        ..CurvesConfig::default()
    };
    let table = loss_curves(&cfg)?;
    println!("{}", table.header().join("\t"));
    for r in &table.rows {
        let bc: Vec<String> = r.box_cox.iter().map(|v| format!("{v:.4}")).collect();
        println!("{:.2}\t{:.4}\t{:.4}\t{}", r.x, r.mae, r.bce, bc.join("\t"));
    }
    Ok(())
}
