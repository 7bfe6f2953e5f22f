//! End-to-end acceptance checks. Each criterion prints one line with its
//! verdict, headline numbers and runtime; the process fails if any does.

use std::f64::consts::PI;
use std::time::{Duration, Instant};

use fascicle::parallel;
use fascicle_core::cell_problem::{effective_flux, gradient_consistency, CellProblem};
use fascicle_core::conductivity::{ConductivityLaw, H5Report};
use fascicle_core::ergodics::{analytic_palm_masses, analytic_volume_fractions, derive_seed, radius_identity_from_samples, DensityEstimate, PalmEstimate, PASS_SIGMAS};
use fascicle_core::geometry::{sample_periodic, GeometryModel};
use fascicle_core::macro_solver::{front_position, front_speed, InitialProfile, MacroConfig, MacroSolver, MacroState, SigmaHom};
use fascicle_core::membrane::{lambda_bound, monotonicity_increment, ClassWeights, FhnParams};
use fascicle_core::micro_reference::{convergence_report, MicroSweepSpec};
use fascicle_core::numeric::fit_slope;
use fascicle_core::optimize::MinimizeOptions;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Verdict {
    pass: bool,
    detail: String,
}

fn figure_model() -> GeometryModel {
    GeometryModel::from_pairs(&[0.2, 0.3], &[0.5, 1.0 / 6.0], 0.0).unwrap()
}

fn default_sigmoid() -> ConductivityLaw {
    ConductivityLaw::sigmoid(1.0, 3.0, 2.0, 1.0)
}

fn tight(tol: f64) -> MinimizeOptions {
    MinimizeOptions { tol, ..MinimizeOptions::default() }
}

fn within(est: f64, exact: f64, se: f64) -> bool {
    (est - exact).abs() <= PASS_SIGMAS * se
}

fn densities() -> Verdict {
    let model = figure_model();
    let stats = parallel::collect_samples(&model, 50.0, 8, 1).unwrap();
    let est = DensityEstimate::from_samples(&stats, 50.0);
    let exact = analytic_volume_fractions(&model);
    let mut pass = (0..2).all(|k| within(est.lambda_by_class[k], exact[k], est.std_error[k]));
    let total: f64 = exact.iter().sum();
    pass &= within(est.lambda_total, total, est.total_std_error) && (total - 0.10996).abs() < 5e-5;
    Verdict {
        pass,
        detail: format!(
            "Lambda_hat = {:.5} +- {:.5} (exact {:.5}); per class {:.5}/{:.5} vs {:.5}/{:.5}",
            est.lambda_total, est.total_std_error, total, est.lambda_by_class[0], est.lambda_by_class[1], exact[0], exact[1]
        ),
    }
}

fn palm_masses() -> Verdict {
    let model = figure_model();
    let stats = parallel::collect_samples(&model, 50.0, 8, 1).unwrap();
    let est = PalmEstimate::from_samples(&stats, 50.0);
    let exact = analytic_palm_masses(&model);
    let masses_ok = (0..2).all(|k| within(est.mu_by_class[k], exact[k], est.std_error[k]));
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut worst: f64 = 0.0;
    let mut identity_ok = true;
    for _ in 0..100 {
        let f: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();
        let r = radius_identity_from_samples(&model, &f, &stats);
        identity_ok &= r.pass;
        if r.combined_se > 0.0 {
            worst = worst.max(r.difference.abs() / r.combined_se);
        }
    }
    Verdict {
        pass: masses_ok && identity_ok,
        detail: format!(
            "mu_hat {:.4}/{:.4} vs {:.4}/{:.4}; radius identity worst {:.2} se over 100 vectors",
            est.mu_by_class[0], est.mu_by_class[1], exact[0], exact[1], worst
        ),
    }
}

fn monotonicity() -> Verdict {
    let law = default_sigmoid();
    let report = law.validate_h5(10.0, 2000);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let draw = |rng: &mut ChaCha8Rng| -> [f64; 3] {
        let v: [f64; 3] = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let s = rng.random_range(0.0..5.0) / (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt().max(1e-12);
        [v[0] * s, v[1] * s, v[2] * s]
    };
    let mut min_gap = f64::INFINITY;
    for _ in 0..10_000 {
        let (xi, eta) = (draw(&mut rng), draw(&mut rng));
        min_gap = min_gap.min(law.monotonicity_gap(&report, xi, eta).unwrap());
    }
    // flux drops from 2 eta to 0.2 eta between eta = 1 and 2
    let bad = ConductivityLaw::table(vec![[0.0, 2.0], [1.0, 2.0], [2.0, 0.2], [4.0, 0.2]]).unwrap();
    let bad_report = bad.validate_h5(4.0, 2000);
    let probe = H5Report { sigma_lower: 0.0, ..bad_report.clone() };
    let control_gap = (0..100)
        .map(|i| {
            let a = 0.04 * i as f64;
            bad.monotonicity_gap(&probe, [a, 0.0, 0.0], [a - 0.02, 0.0, 0.0]).unwrap()
        })
        .fold(f64::INFINITY, f64::min);
    let control_fails = !bad_report.pass && control_gap < 0.0;
    Verdict {
        pass: min_gap >= -1e-10 && report.pass && control_fails,
        detail: format!(
            "min gap {min_gap:.3e} over 1e4 pairs; negative control rejected at eta = {:?}, min raw increment {control_gap:.3e}",
            bad_report.violation_at
        ),
    }
}

fn exactness() -> Verdict {
    let law = default_sigmoid();
    let real = sample_periodic(&figure_model(), 8, 11).unwrap();
    let problem = CellProblem::new(&real, law.clone(), 1.0 / 64.0).unwrap();
    let lam = problem.lambda_hat();
    let mut worst_rel: f64 = 0.0;
    for t in [0.5, 1.0, 2.0] {
        let corr = problem.solve([t, 0.0, 0.0], &tight(1e-10)).unwrap();
        let flux = effective_flux(&corr, &law)[0];
        let expect = (1.0 - lam) * law.sigma(t) * t;
        worst_rel = worst_rel.max((flux - expect).abs() / expect);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut voigt_ok = true;
    let mut worst_ratio: f64 = 0.0;
    for _ in 0..50 {
        let xi = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
        let corr = problem.solve(xi, &tight(1e-7)).unwrap();
        let voigt = problem.voigt_energy(xi);
        voigt_ok &= corr.energy <= voigt;
        worst_ratio = worst_ratio.max(corr.energy / voigt);
    }
    Verdict {
        pass: worst_rel <= 1e-6 && voigt_ok,
        detail: format!(
            "Lambda_N = {lam:.5}; longitudinal relative error {worst_rel:.2e}; max Phi/Voigt {worst_ratio:.4} over 50 gradients"
        ),
    }
}

fn gradient() -> Verdict {
    let law = default_sigmoid();
    let real = sample_periodic(&figure_model(), 4, 21).unwrap();
    let problem = CellProblem::new(&real, law, 1.0 / 32.0).unwrap();
    let points = [[0.5, 1.0, 0.0], [0.0, 0.7, -0.4], [1.2, 0.3, 0.9], [0.2, -1.5, 0.6], [-0.8, 0.4, 1.7]];
    let mut worst: f64 = 0.0;
    for xi in points {
        let rep = gradient_consistency(&problem, xi, 1e-3, &tight(1e-10)).unwrap();
        worst = worst.max(rep.relative_mismatch);
    }
    Verdict { pass: worst <= 1e-3, detail: format!("max relative mismatch {worst:.2e} at 5 gradients") }
}

fn variance(values: &[f64]) -> f64 {
    let m = values.iter().sum::<f64>() / values.len() as f64;
    values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (values.len() - 1) as f64
}

fn stabilization() -> Verdict {
    let law = default_sigmoid();
    let model = figure_model();
    let mut vars = Vec::new();
    for n in [8usize, 16, 32] {
        let phis: Vec<f64> = (0..4)
            .map(|r| {
                let real = sample_periodic(&model, n, derive_seed(6060 + n as u64, r)).unwrap();
                let problem = CellProblem::new(&real, law.clone(), 1.0 / 16.0).unwrap();
                problem.solve([0.0, 1.0, 0.0], &tight(1e-9)).unwrap().energy
            })
            .collect();
        vars.push(variance(&phis));
    }
    Verdict {
        pass: vars.windows(2).all(|w| w[1] < w[0]),
        detail: format!("replicate variance of Phi_N(0,1,0) at N = 8/16/32: {:.3e} / {:.3e} / {:.3e}", vars[0], vars[1], vars[2]),
    }
}

fn class(lambda: f64, r: f64) -> ClassWeights {
    ClassWeights { radius: r, lambda, mu: 2.0 * lambda / r }
}

fn derivative(f: &impl Fn(f64) -> f64, x: f64, order: u8) -> f64 {
    match order {
        1 => {
            let e = 1e-4;
            (-f(x + 2.0 * e) + 8.0 * f(x + e) - 8.0 * f(x - e) + f(x - 2.0 * e)) / (12.0 * e)
        }
        _ => {
            let e = 1e-3;
            (-f(x + 2.0 * e) + 16.0 * f(x + e) - 30.0 * f(x) + 16.0 * f(x - e) - f(x - 2.0 * e)) / (12.0 * e * e)
        }
    }
}

fn manufactured_error(nx: usize) -> f64 {
    let lam = 0.1;
    let sigma_i = ConductivityLaw::sigmoid(1.0, 2.0, 2.0, 1.0);
    let sigma_e = ConductivityLaw::sigmoid(0.5, 1.5, 1.5, 0.8);
    let u_e = |x: f64| (PI * x).sin() * (1.0 + 0.5 * x);
    let v = |x: f64| 1.0 + 0.8 * (2.0 * x).cos();
    let u_i = |x: f64| v(x) + u_e(x);
    let mut cfg = MacroConfig::one_d(1.0, nx, vec![class(lam, 0.2)]);
    cfg.sigma_i = sigma_i.clone();
    cfg.sigma_hom = SigmaHom::Law(sigma_e.clone());
    cfg.tol = 1e-11;
    let solver = MacroSolver::new(cfg).unwrap();
    let x = solver.discretization().x1.clone();
    let source: Vec<f64> = x
        .iter()
        .map(|&x| {
            let (gi, ge) = (derivative(&u_i, x, 1), derivative(&u_e, x, 1));
            -(lam * sigma_i.flux_derivative(gi.abs()) * derivative(&u_i, x, 2)
                + sigma_e.flux_derivative(ge.abs()) * derivative(&u_e, x, 2))
        })
        .collect();
    let vs: Vec<f64> = x.iter().map(|&x| v(x)).collect();
    let (u, _) = solver.solve_extracellular(&[vs], 0.0, Some(&source), None).unwrap();
    u.iter().zip(&x).fold(0.0, |m, (a, &x)| m.max((a - u_e(x)).abs()))
}

fn macro_verification() -> Verdict {
    let ns = [41usize, 81, 161];
    let errs: Vec<f64> = ns.iter().map(|&n| manufactured_error(n)).collect();
    let log_h: Vec<f64> = ns.iter().map(|&n| (1.0 / (n - 1) as f64).ln()).collect();
    let log_e: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
    let order = fit_slope(&log_h, &log_e);

    let mut cfg = MacroConfig::one_d(2.0, 41, vec![class(0.06, 0.2), class(0.05, 0.3)]);
    cfg.dt = 0.01;
    let solver = MacroSolver::new(cfg).unwrap();
    let mut state = solver.initial_state().unwrap();
    let mut drift: f64 = 0.0;
    for _ in 0..1000 {
        let (next, _) = solver.step(&state).unwrap();
        drift = drift.max(next.sup_distance(&MacroState { t: next.t, ..state.clone() }));
        state = next;
    }

    let front = |dt: f64| -> MacroState {
        let mut cfg = MacroConfig::one_d(4.0, 81, vec![class(0.06, 0.2), class(0.05, 0.3)]);
        cfg.fhn = FhnParams::bistable();
        cfg.initial = InitialProfile::Front { position: 2.0, width: 0.3 };
        cfg.t_end = 1.0;
        cfg.dt = dt;
        cfg.snapshot_every = usize::MAX;
        MacroSolver::new(cfg).unwrap().run().unwrap().final_state().clone()
    };
    let runs: Vec<MacroState> = [0.02, 0.01, 0.005].into_iter().map(front).collect();
    let ratio = runs[0].sup_distance(&runs[1]) / runs[1].sup_distance(&runs[2]);
    let time_order = ratio.log2();
    Verdict {
        pass: order >= 1.7 && drift <= 1e-8 && (time_order - 1.0).abs() <= 0.2,
        detail: format!("manufactured order {order:.3}; rest drift {drift:.1e} per step; imex Richardson order {time_order:.3}"),
    }
}

fn class_speeds(h: f64) -> Vec<f64> {
    let length = 30.0;
    let nx = (length / h).round() as usize + 1;
    let mut cfg = MacroConfig::one_d(length, nx, ClassWeights::from_model(&figure_model()));
    cfg.fhn = FhnParams::bistable();
    cfg.initial = InitialProfile::Front { position: 3.0, width: 0.5 };
    cfg.dt = 0.02;
    cfg.t_end = 40.0;
    cfg.snapshot_every = 50;
    let solver = MacroSolver::new(cfg).unwrap();
    let threshold = 0.5 * (solver.rest_state().0 + solver.excited_state().unwrap().0);
    let series = solver.run().unwrap();
    (0..2)
        .map(|k| {
            let (mut ts, mut xs) = (Vec::new(), Vec::new());
            for snap in series.snapshots.iter().filter(|s| s.t >= 10.0) {
                if let Some(x) = front_position(&series.x1, &snap.v[k], threshold) {
                    ts.push(snap.t);
                    xs.push(x);
                }
            }
            front_speed(&ts, &xs)
        })
        .collect()
}

fn multiclass() -> Verdict {
    let coarse = class_speeds(0.05);
    let fine = class_speeds(0.025);
    let self_converged = (0..2).all(|k| (coarse[k] - fine[k]).abs() <= 0.02 * fine[k].abs());
    Verdict {
        pass: self_converged && fine[1] > fine[0] && fine[0] > 0.0,
        detail: format!(
            "front speeds r = 0.2: {:.5} (h) / {:.5} (h/2); r = 0.3: {:.5} / {:.5}",
            coarse[0], fine[0], coarse[1], fine[1]
        ),
    }
}

fn homogenization_limit() -> Verdict {
    let model = GeometryModel::full_lattice(0.25).unwrap();
    let law = ConductivityLaw::constant(1.0);
    let spec = MicroSweepSpec::default();
    let (samples, reference) = parallel::micro_sweep(&model, &law, &spec).unwrap();
    let pairs: Vec<(f64, f64)> = samples.iter().map(|&(e, _, v)| (e, v)).collect();
    let report = convergence_report(&pairs, reference.energy).unwrap();
    let rows: Vec<String> =
        report.rows.iter().map(|r| format!("eps {}: gap {:.4} sd {:.4}", r.epsilon, r.mean_gap, r.gap_sd)).collect();
    Verdict { pass: report.pass, detail: format!("E_hom = {:.5}; {}", reference.energy, rows.join("; ")) }
}

fn lambda_monotonization() -> Verdict {
    let p = FhnParams::default();
    let bound = lambda_bound(&p);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let draw = |rng: &mut ChaCha8Rng| (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    let mut min_at_bound = f64::INFINITY;
    let mut min_below = f64::INFINITY;
    for _ in 0..10_000 {
        let (s1, s2, t) = (draw(&mut rng), draw(&mut rng), rng.random_range(0.0..2.0));
        min_at_bound = min_at_bound.min(monotonicity_increment(s1, s2, t, bound, &p));
        min_below = min_below.min(monotonicity_increment(s1, s2, t, bound - 0.5, &p));
    }
    Verdict {
        pass: min_at_bound >= -1e-10 && min_below < 0.0,
        detail: format!("bound {bound:.4}; min increment {min_at_bound:.3e} at the bound, {min_below:.3e} at bound - 0.5"),
    }
}

type Criterion = (u32, &'static str, Duration, fn() -> Verdict);

fn main() {
    let criteria: [Criterion; 10] = [
        (1, "density formulas", Duration::from_secs(10), densities),
        (2, "Palm masses and radius identity", Duration::from_secs(30), palm_masses),
        (3, "flux monotonicity", Duration::from_secs(5), monotonicity),
        (4, "longitudinal exactness and Voigt bound", Duration::from_secs(120), exactness),
        (5, "flux is the energy gradient", Duration::from_secs(300), gradient),
        (6, "ergodic stabilization", Duration::from_secs(1200), stabilization),
        (7, "macro solver verification", Duration::from_secs(300), macro_verification),
        (8, "class front speeds", Duration::from_secs(600), multiclass),
        (9, "homogenization limit", Duration::from_secs(1800), homogenization_limit),
        (10, "lambda monotonization", Duration::from_secs(5), lambda_monotonization),
    ];
    let filter: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = Vec::new();
    for (id, name, budget, run) in criteria {
        if !filter.is_empty() && !filter.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let verdict = run();
        let elapsed = start.elapsed();
        let pass = verdict.pass && elapsed <= budget;
        println!(
            "criterion {id:>2} {}: {name}: {} [{:.1} s of {} s]",
            if pass { "PASS" } else { "FAIL" },
            verdict.detail,
            elapsed.as_secs_f64(),
            budget.as_secs()
        );
        if !pass {
            failed.push(id);
        }
    }
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
