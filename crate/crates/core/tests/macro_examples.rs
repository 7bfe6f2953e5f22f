use fascicle_core::macro_solver::{
    front_position, front_speed, InitialProfile, MacroConfig, MacroSolver, Stimulus, TimeSeries,
};
use fascicle_core::membrane::{ClassWeights, FhnParams};

fn class(lambda: f64, r: f64) -> ClassWeights {
    ClassWeights { radius: r, lambda, mu: 2.0 * lambda / r }
}

fn threshold(solver: &MacroSolver) -> f64 {
    let (rest, _) = solver.rest_state();
    let (excited, _) = solver.excited_state().expect("bistable membrane");
    0.5 * (rest + excited)
}

fn speeds(series: &TimeSeries, threshold: f64, row: usize, after: f64) -> Vec<f64> {
    (0..series.final_state().n_classes())
        .map(|k| {
            let (ts, xs): (Vec<f64>, Vec<f64>) = series
                .snapshots
                .iter()
                .filter(|s| s.t >= after)
                .filter_map(|s| {
                    let values = series.row(&s.v[k], row);
                    front_position(&series.x1, &values, threshold).map(|x| (s.t, x))
                })
                .unzip();
            assert!(ts.len() >= 3, "class {k} never formed a front");
            front_speed(&ts, &xs)
        })
        .collect()
}

fn grounded_cable(h: f64, amplitude: f64) -> (MacroSolver, TimeSeries) {
    let length = 30.0;
    let nx = (length / h).round() as usize + 1;
    let mut cfg = MacroConfig::one_d(length, nx, vec![class(0.1, 0.25)]);
    cfg.fhn = FhnParams::bistable();
    cfg.ground_extracellular = true;
    cfg.initial = InitialProfile::Bump { amplitude, center: 15.0, width: 3.0 };
    cfg.dt = 0.02;
    cfg.t_end = 30.0;
    cfg.snapshot_every = 50;
    let solver = MacroSolver::new(cfg).unwrap();
    let series = solver.run().unwrap();
    (solver, series)
}

#[test]
fn zero_duration_records_only_the_initial_state() {
    let mut cfg = MacroConfig::one_d(2.0, 21, vec![class(0.06, 0.2)]);
    cfg.t_end = 0.0;
    cfg.initial = InitialProfile::Bump { amplitude: 1.0, center: 1.0, width: 0.5 };
    let solver = MacroSolver::new(cfg).unwrap();
    let series = solver.run().unwrap();
    assert_eq!(series.steps, 0);
    assert_eq!(series.snapshots.len(), 1);
    assert_eq!(series.final_state(), &solver.initial_state().unwrap());
}

#[test]
fn supra_threshold_bump_spreads_at_a_grid_converged_speed() {
    let (solver, coarse) = grounded_cable(0.1, 3.0);
    let (_, fine) = grounded_cable(0.05, 3.0);
    let thr = threshold(&solver);
    let c = speeds(&coarse, thr, 0, 10.0)[0];
    let f = speeds(&fine, thr, 0, 10.0)[0];
    assert!(c > 0.0 && f > 0.0, "speeds {c} {f}");
    assert!((c - f).abs() <= 0.02 * f, "speeds {c} vs {f}");
}

#[test]
fn sub_threshold_bump_returns_to_rest() {
    let (solver, series) = grounded_cable(0.1, 0.5);
    let (rest, _) = solver.rest_state();
    let v = &series.final_state().v[0];
    let worst = v.iter().map(|x| (x - rest).abs()).fold(0.0, f64::max);
    assert!(worst < 1e-3, "{worst}");
}

#[test]
fn bipolar_lateral_stimulus_activates_both_classes() {
    let h: f64 = 0.1;
    let length = 30.0;
    let nx = (length / h).round() as usize + 1;
    let mut cfg = MacroConfig::two_d(length, 1.0, nx, 5, vec![class(0.06, 0.2), class(0.05, 0.3)]);
    cfg.fhn = FhnParams::bistable();
    cfg.stimulus = Some(Stimulus { amplitude: 20.0, anode: 4.0, cathode: Some(6.0), width: 1.0, t_on: 0.0, t_off: 10.0, ramp: 0.5 });
    cfg.t_end = 30.0;
    cfg.snapshot_every = 125;
    let solver = MacroSolver::new(cfg).unwrap();
    let thr = threshold(&solver);
    let series = solver.run().unwrap();
    for row in [0, 4] {
        let v = speeds(&series, thr, row, 15.0);
        assert!(v[0] > 0.0 && v[1] > v[0], "row {row}: speeds {v:?}");
    }
}

fn stimulated_cable(dt: f64) -> TimeSeries {
    let mut cfg = MacroConfig::one_d(10.0, 101, vec![class(0.06, 0.2), class(0.05, 0.3)]);
    cfg.stimulus = Some(Stimulus { amplitude: 5.0, anode: 3.0, cathode: Some(7.0), width: 1.0, t_on: 0.0, t_off: 2.0, ramp: 0.25 });
    cfg.dt = dt;
    cfg.t_end = 5.0;
    MacroSolver::new(cfg).unwrap().run().unwrap()
}

#[test]
fn rest_trajectory_accumulates_no_dissipation() {
    let mut cfg = MacroConfig::one_d(10.0, 101, vec![class(0.06, 0.2), class(0.05, 0.3)]);
    cfg.t_end = 5.0;
    let d = MacroSolver::new(cfg).unwrap().run().unwrap().diagnostics;
    assert!(d.cum_dv2 <= 1e-20 && d.cum_dg2 <= 1e-20, "{d:?}");
}

#[test]
fn stimulated_diagnostics_are_finite_and_stable_in_dt() {
    let a = stimulated_cable(0.02).diagnostics;
    let b = stimulated_cable(0.01).diagnostics;
    assert!(a.is_finite() && b.is_finite());
    assert!(a.cum_dv2 > 0.0, "{a:?}");
    for (x, y) in [(a.sup_v4, b.sup_v4), (a.cum_dv2, b.cum_dv2), (a.sup_g2, b.sup_g2), (a.cum_dg2, b.cum_dg2)] {
        assert!((x - y).abs() <= 0.05 * y.abs(), "{a:?} vs {b:?}");
    }
}
