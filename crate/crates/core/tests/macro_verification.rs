use fascicle_core::conductivity::ConductivityLaw;
use fascicle_core::macro_solver::{InitialProfile, MacroConfig, MacroSolver, MacroState, SigmaHom};
use fascicle_core::membrane::{ClassWeights, FhnParams};
use fascicle_core::numeric::fit_slope;
use std::f64::consts::PI;

fn class(lambda: f64, r: f64) -> ClassWeights {
    ClassWeights { radius: r, lambda, mu: 2.0 * lambda / r }
}

fn exact_ue(x: f64) -> f64 {
    (PI * x).sin() * (1.0 + 0.5 * x)
}

fn exact_v(x: f64) -> f64 {
    1.0 + 0.8 * (2.0 * x).cos()
}

fn second_derivative(f: impl Fn(f64) -> f64, x: f64) -> f64 {
    let e = 1e-3;
    (-f(x + 2.0 * e) + 16.0 * f(x + e) - 30.0 * f(x) + 16.0 * f(x - e) - f(x - 2.0 * e)) / (12.0 * e * e)
}

fn first_derivative(f: impl Fn(f64) -> f64, x: f64) -> f64 {
    let e = 1e-4;
    (-f(x + 2.0 * e) + 8.0 * f(x + e) - 8.0 * f(x - e) + f(x - 2.0 * e)) / (12.0 * e)
}

fn mms_error(nx: usize) -> f64 {
    let lam = 0.1;
    let sigma_i = ConductivityLaw::sigmoid(1.0, 2.0, 2.0, 1.0);
    let sigma_e = ConductivityLaw::sigmoid(0.5, 1.5, 1.5, 0.8);
    let mut cfg = MacroConfig::one_d(1.0, nx, vec![class(lam, 0.2)]);
    cfg.sigma_i = sigma_i.clone();
    cfg.sigma_hom = SigmaHom::Law(sigma_e.clone());
    cfg.tol = 1e-11;
    let solver = MacroSolver::new(cfg).unwrap();
    let x = solver.discretization().x1.clone();
    let u_i = |x: f64| exact_v(x) + exact_ue(x);
    let source: Vec<f64> = x
        .iter()
        .map(|&x| {
            let gi = first_derivative(u_i, x);
            let ge = first_derivative(exact_ue, x);
            -(lam * sigma_i.flux_derivative(gi.abs()) * second_derivative(u_i, x)
                + sigma_e.flux_derivative(ge.abs()) * second_derivative(exact_ue, x))
        })
        .collect();
    let v: Vec<f64> = x.iter().map(|&x| exact_v(x)).collect();
    let (u, _) = solver.solve_extracellular(&[v], 0.0, Some(&source), None).unwrap();
    u.iter().zip(&x).fold(0.0, |m, (a, &x)| m.max((a - exact_ue(x)).abs()))
}

#[test]
fn manufactured_extracellular_solution_converges_at_second_order() {
    let ns = [41, 81, 161];
    let errs: Vec<f64> = ns.iter().map(|&n| mms_error(n)).collect();
    let logs_h: Vec<f64> = ns.iter().map(|&n| (1.0 / (n - 1) as f64).ln()).collect();
    let logs_e: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
    let order = fit_slope(&logs_h, &logs_e);
    assert!(order >= 1.7, "order {order}, errors {errs:?}");
}

#[test]
fn rest_state_survives_many_steps() {
    let mut cfg = MacroConfig::one_d(2.0, 41, vec![class(0.06, 0.2), class(0.05, 0.3)]);
    cfg.sigma_i = ConductivityLaw::sigmoid(1.0, 2.0, 2.0, 1.0);
    cfg.dt = 0.01;
    let solver = MacroSolver::new(cfg).unwrap();
    let mut state = solver.initial_state().unwrap();
    let rest = state.clone();
    for _ in 0..1000 {
        let (next, _) = solver.step(&state).unwrap();
        let drift = next.sup_distance(&MacroState { t: next.t, ..state.clone() });
        assert!(drift <= 1e-8, "{drift}");
        state = next;
    }
    assert!(state.sup_distance(&MacroState { t: state.t, ..rest }) <= 1e-8);
}

fn front_run(dt: f64) -> MacroState {
    let mut cfg = MacroConfig::one_d(4.0, 81, vec![class(0.06, 0.2), class(0.05, 0.3)]);
    cfg.fhn = FhnParams::bistable();
    cfg.initial = InitialProfile::Front { position: 2.0, width: 0.3 };
    cfg.t_end = 1.0;
    cfg.dt = dt;
    cfg.snapshot_every = 1_000_000;
    MacroSolver::new(cfg).unwrap().run().unwrap().final_state().clone()
}

#[test]
fn imex_is_first_order_in_time() {
    let runs: Vec<MacroState> = [0.02, 0.01, 0.005].iter().map(|&dt| front_run(dt)).collect();
    let d1 = runs[0].sup_distance(&runs[1]);
    let d2 = runs[1].sup_distance(&runs[2]);
    let ratio = d1 / d2;
    assert!((ratio - 2.0).abs() < 0.3, "ratio {ratio}");
}
