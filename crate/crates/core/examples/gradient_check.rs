//! Compare analytic gradients with central finite differences.
//!
//! cargo run --example gradient_check

use shadowvlad::training::{gradient_check, GradCheckConfig};

fn main() -> shadowvlad::Result<()> {
    let cfg = GradCheckConfig::default();
    let mut worst: f64 = 0.0;
    for seed in 0..20 {
        let r = gradient_check(seed, &cfg)?;
        println!(
            "seed {seed:>2}: loss {:.4} over {} parameters, max relative error {:.2e}",
            r.loss, r.parameters, r.max_relative_error
        );
        worst = worst.max(r.max_relative_error);
    }
    println!("worst {worst:.2e}");
    Ok(())
}
