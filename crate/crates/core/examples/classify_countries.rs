//! Group countries by their standardized time averages and pick the number
//! of groups with the information criterion.

use grouped_tvc::clustering::{classify, label_accuracy, ClassifyConfig};
use grouped_tvc::panel::Quantile;
use grouped_tvc::simulate::{generate, DgpSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let sim = generate(&DgpSpec {
        separation: 5.0,
        seed: 7,
        ..DgpSpec::default()
    })?;
    let cfg = ClassifyConfig {
        quantile: Quantile::Top5,
        seed: 7,
        ..ClassifyConfig::default()
    };
    let (groups, table) = classify(&sim.dataset, &cfg)?;
    if let Some(t) = table {
        t.write_csv(std::io::stdout())?;
    }
    println!("selected {} groups, sizes {:?}", groups.num_groups, groups.group_sizes());

    let fixed = ClassifyConfig {
        fixed_groups: Some(3),
        ..cfg
    };
    let (three, _) = classify(&sim.dataset, &fixed)?;
    println!("label accuracy with G = 3: {:.3}", label_accuracy(&three.labels, &sim.truth.labels));
    Ok(())
}
