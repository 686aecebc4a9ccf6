//! Small Monte Carlo study: selection frequencies, bias, RMISE and band
//! coverage over replications with derived seeds.

use grouped_tvc::clustering::ClassifyConfig;
use grouped_tvc::panel::Quantile;
use grouped_tvc::simulate::{replicate_study, DgpSpec, StudyConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let replications = std::env::args().nth(1).map_or(Ok(20), |s| s.parse())?;
    let spec = DgpSpec {
        ex_sd: 0.05,
        ..DgpSpec::default()
    };
    let cfg = StudyConfig {
        replications,
        seed: 1,
        classify: Some(ClassifyConfig {
            quantile: Quantile::Top5,
            n_init: 20,
            ..ClassifyConfig::default()
        }),
        iv: true,
        ..StudyConfig::default()
    };
    let report = replicate_study(&spec, &cfg)?;
    report.write_summary(std::io::stdout())?;
    Ok(())
}
