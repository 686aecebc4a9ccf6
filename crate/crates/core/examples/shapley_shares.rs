//! Attribute fitted top shares to the transmission deviation, the capital
//! share level effect and labor inequality.

use grouped_tvc::panel::Quantile;
use grouped_tvc::shapley::{decompose, summarize_proportions, ContributionMode, ShapleyMode};
use grouped_tvc::simulate::{generate, DgpSpec};
use grouped_tvc::tvc::{fit_tvc, TvcConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let sim = generate(&DgpSpec {
        seed: 2,
        ..DgpSpec::default()
    })?;
    let ds = &sim.dataset;
    let fit = fit_tvc(ds, &sim.truth.assignment(ds), Quantile::Top5, &TvcConfig::default())?;
    let report = decompose(&fit, ds, ShapleyMode::Exact)?;
    let a = &report.attributions[0];
    println!(
        "{} {}: prediction {:.4} = mu {:.4} + {:.4} + {:.4} + {:.4}",
        a.country, a.year, a.prediction, a.mu_hat, a.phi[0], a.phi[1], a.phi[2]
    );
    let summary = summarize_proportions(&report, ContributionMode::Change)?;
    summary.write_csv(std::io::stdout())?;
    Ok(())
}
