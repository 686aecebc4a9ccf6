//! Validate a panel CSV: rejected rows are reported, not silently dropped.

use grouped_tvc::panel::{finish_load, validate_reader, write_csv, Quantile, SchemaConfig};
use grouped_tvc::simulate::{generate, DgpSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let sim = generate(&DgpSpec {
        countries: 6,
        years: 15,
        proportions: vec![1.0],
        delta: DgpSpec::default().delta[..1].to_vec(),
        omega: DgpSpec::default().omega[..1].to_vec(),
        ..DgpSpec::default()
    })?;
    let mut buf = Vec::new();
    write_csv(&sim.dataset, &mut buf)?;
    // An impossible row: top 1% share above top 5% share.
    buf.extend_from_slice(b"C001,1979,0.30,0.20,0.25,0.3,0.3\n");

    let report = validate_reader(buf.as_slice(), &SchemaConfig::default())?;
    println!("{} rows read, {} rejected", report.total_rows, report.rejections.len());
    report.write_rejections(std::io::stdout())?;

    let ds = finish_load(report)?.dataset;
    println!("{} countries, window {:?}", ds.num_countries(), ds.window());
    for (id, (s, c)) in ds.country_ids().iter().zip(grouped_tvc::panel::time_averages(&ds, Quantile::Top5)) {
        println!("{id}: mean top5 {s:.4}, mean capital share {c:.4}");
    }
    Ok(())
}
