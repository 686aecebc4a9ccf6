//! Cubic B-spline basis, its centered version and the difference penalty.

use grouped_tvc::splines::{center_basis, difference_operator, make_basis, penalty_matrix, uniform_grid};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let basis = make_basis(8, 3)?;
    for tau in [0.0, 0.25, 0.5, 0.9, 1.0] {
        let b = basis.evaluate(tau)?;
        let sum: f64 = b.iter().sum();
        println!("tau {tau:.2}: sum {sum:.15} values {b:.3?}");
    }
    let centered = center_basis(&basis, &uniform_grid(1001))?;
    println!("centering offsets {:.4?}", centered.offsets);

    let d = difference_operator(8, 2);
    let p = penalty_matrix(&basis, 2)?;
    println!("D is {}x{}, penalty is {}x{}", d.nrows(), d.ncols(), p.dim(), p.dim());
    let linear: Vec<f64> = (0..8).map(|j| 0.1 + 0.05 * j as f64).collect();
    let v = nalgebra::DVector::from_vec(linear);
    println!("penalty of a linear sequence: {:e}", (v.transpose() * &p.coefficients * &v)[0]);
    Ok(())
}
