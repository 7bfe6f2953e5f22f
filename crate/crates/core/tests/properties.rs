use fascicle_core::conductivity::ConductivityLaw;
use fascicle_core::geometry::{sample_realization, shift_realization, GeometryModel, Rect};
use fascicle_core::membrane::{lambda_bound, membrane_rhs, membrane_rhs_hat, monotonicity_increment, rk4_step, FhnParams};
use proptest::prelude::*;

fn figure_model() -> GeometryModel {
    GeometryModel::from_pairs(&[0.2, 0.3], &[0.5, 1.0 / 6.0], 0.1).unwrap()
}

fn sorted_centers(real: &fascicle_core::geometry::Realization) -> Vec<[f64; 3]> {
    let mut c: Vec<[f64; 3]> = real.disks.iter().map(|d| [d.center[0], d.center[1], d.radius]).collect();
    c.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    c
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn shifts_compose(seed in any::<u64>(), x in prop::array::uniform2(-3.0f64..3.0), y in prop::array::uniform2(-3.0f64..3.0)) {
        let model = figure_model();
        let real = sample_realization(&model, Rect::square(6.0), seed).unwrap();
        let two = shift_realization(&shift_realization(&real, x), y);
        let one = shift_realization(&real, [x[0] + y[0], x[1] + y[1]]);
        let (a, b) = (sorted_centers(&two), sorted_centers(&one));
        prop_assert_eq!(a.len(), b.len());
        for (p, q) in a.iter().zip(&b) {
            for k in 0..3 {
                prop_assert!((p[k] - q[k]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn disks_keep_their_distance(seed in any::<u64>()) {
        let model = figure_model();
        let real = sample_realization(&model, Rect::square(8.0), seed).unwrap();
        for (i, a) in real.disks.iter().enumerate() {
            prop_assert!(model.classes.iter().any(|c| c.radius == a.radius));
            for b in &real.disks[i + 1..] {
                let d = (a.center[0] - b.center[0]).hypot(a.center[1] - b.center[1]) - a.radius - b.radius;
                prop_assert!(d >= model.min_gap() - 1e-12);
            }
        }
    }

    #[test]
    fn sigmoid_flux_is_strongly_monotone(xi in prop::array::uniform3(-3.0f64..3.0), eta in prop::array::uniform3(-3.0f64..3.0)) {
        let law = ConductivityLaw::sigmoid(1.0, 2.0, 2.0, 1.0);
        let report = law.validate_h5(6.0, 400);
        let gap = law.monotonicity_gap(&report, xi, eta).unwrap();
        prop_assert!(gap >= -1e-10, "{}", gap);
    }

    #[test]
    fn rescaled_membrane_is_monotone(
        v in prop::array::uniform2(-5.0f64..5.0),
        g in prop::array::uniform2(-5.0f64..5.0),
        t in 0.0f64..2.0,
    ) {
        for p in [FhnParams::default(), FhnParams::bistable()] {
            let inc = monotonicity_increment((v[0], g[0]), (v[1], g[1]), t, lambda_bound(&p), &p);
            prop_assert!(inc >= -1e-10, "{}", inc);
        }
    }
}

#[test]
fn rescaling_commutes_with_integration() {
    let p = FhnParams::default();
    let lambda = lambda_bound(&p);
    let (mut s, mut h) = ((1.5, -0.3), (1.5, -0.3));
    let dt = 1e-3;
    let mut t = 0.0;
    for _ in 0..2000 {
        s = rk4_step(|_, v, g| membrane_rhs(v, g, &p), t, s, dt);
        h = rk4_step(|t, v, g| membrane_rhs_hat(v, g, t, lambda, &p), t, h, dt);
        t += dt;
    }
    let back = ((lambda * t).exp() * h.0, (lambda * t).exp() * h.1);
    assert!((back.0 - s.0).abs() < 1e-8 && (back.1 - s.1).abs() < 1e-8, "{back:?} vs {s:?}");
}

#[test]
fn increment_fails_below_the_bound() {
    let p = FhnParams::default();
    let lambda = lambda_bound(&p) - 0.5;
    let found = (0..360).any(|i| {
        let a = (i as f64).to_radians();
        let (dv, dg) = (0.05 * a.cos(), 0.05 * a.sin());
        monotonicity_increment((dv, dg), (-dv, -dg), 0.0, lambda, &p) < 0.0
    });
    assert!(found);
}
