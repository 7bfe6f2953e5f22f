use fascicle_core::cell_problem::CellProblem;
use fascicle_core::conductivity::ConductivityLaw;
use fascicle_core::ergodics::derive_seed;
use fascicle_core::geometry::{sample_periodic, GeometryModel};
use fascicle_core::optimize::MinimizeOptions;

#[test]
fn two_class_transverse_conductivity_is_bracketed() {
    let model = GeometryModel::from_pairs(&[0.2, 0.3], &[0.5, 1.0 / 6.0], 0.0).unwrap();
    let options = MinimizeOptions { tol: 1e-9, ..MinimizeOptions::default() };
    let ratios: Vec<f64> = (0..4)
        .map(|r| {
            let real = sample_periodic(&model, 16, derive_seed(345, r)).unwrap();
            let problem = CellProblem::new(&real, ConductivityLaw::constant(1.0), 1.0 / 32.0).unwrap();
            2.0 * problem.solve([0.0, 1.0, 0.0], &options).unwrap().energy
        })
        .collect();
    let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
    assert!((0.76..=0.90).contains(&mean), "{ratios:?}");
}
