//! Render an estimated curve with its band as SVG.

use grouped_tvc::panel::Quantile;
use grouped_tvc::report::{read_band, render_svg, PlotStyle};
use grouped_tvc::simulate::{generate, DgpSpec};
use grouped_tvc::tvc::{fit_tvc, TvcConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let sim = generate(&DgpSpec::default())?;
    let ds = &sim.dataset;
    let fit = fit_tvc(ds, &sim.truth.assignment(ds), Quantile::Top5, &TvcConfig::default())?;
    let mut table = Vec::new();
    fit.groups[1].curves.write_csv(&mut table)?;
    let series = read_band(table.as_slice(), "delta")?;
    let style = PlotStyle {
        title: "Transmission coefficient, group 2".into(),
        years: Some(ds.window()),
        ..PlotStyle::default()
    };
    print!("{}", render_svg(&series, &style));
    Ok(())
}
