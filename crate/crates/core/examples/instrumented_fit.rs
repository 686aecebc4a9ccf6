//! Measurement error in the capital share attenuates the least-squares
//! curve; the profit-tax-rate first stage undoes most of it.

use grouped_tvc::panel::Quantile;
use grouped_tvc::simulate::{generate, DgpSpec};
use grouped_tvc::tvc::{fit_tvc, fit_tvc_iv, TvcConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let sim = generate(&DgpSpec {
        ex_sd: 0.05,
        seed: 11,
        ..DgpSpec::default()
    })?;
    let groups = sim.truth.assignment(&sim.dataset);
    let cfg = TvcConfig::default();
    let ls = fit_tvc(&sim.dataset, &groups, Quantile::Top5, &cfg)?;
    let (iv, first) = fit_tvc_iv(&sim.dataset, &groups, Quantile::Top5, &cfg)?;
    println!("first stage F = {:.1} on {:?} df", first.f_stat, first.f_df);
    println!("least squares average effect {:.4}", ls.pooled_average_effect().estimate);
    println!("instrumented average effect  {:.4}", iv.pooled_average_effect().estimate);
    Ok(())
}
