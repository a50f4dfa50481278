//! Acceptance suite: one line per criterion, nonzero exit if any fails.
//!
//! Run with `cargo test -p icmpr --test acceptance`. Set `ICMPR_TOOTH_DATA`
//! to a CSV with columns `left,right,sex,dmf` to enable the tooth-data check.

mod common;

use std::time::Instant;

use icmpr::io::{read_data_file, resolve_columns};
use icmpr::likelihood::{log_interval_prob, log_likelihood, score};
use icmpr::selection::{fit_model_grid, information_criteria, CovariateStructure, Criterion};
use icmpr::simulation::{
    calibrate, calibrate_censoring, covariate_sample, draw_covariates, draw_frailty, draw_survival_time,
    make_interval, run_study, simulate_dataset, Scenario, Truth,
};
use icmpr::turnbull::{turnbull_fit, turnbull_support, SupportInterval};
use icmpr::{
    estimator::predict_median, evaluate_parameters, fit, Dataset, FitOptions, FitResult, ModelSpec, ModelType,
    ParamTriple, Theta,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn verdict(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn p(l: f64, g: f64, f: f64) -> ParamTriple {
    ParamTriple::new(l, g, f).unwrap()
}

fn gradient() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for k in 0..100u64 {
        let t = ModelType::ALL[(k % 6) as usize];
        let (spec, theta, data) = common::random_case(1000 + k, t, 50);
        let a = score(&spec, &theta, &data).unwrap();
        worst = worst.max(common::max_rel_err(&a, &common::fd_score(&spec, &theta, &data)));
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        worst < 1e-6 && secs < 60.0,
        format!("100 cases, max rel err {worst:.2e} (< 1e-6), {secs:.1}s (< 60s)"),
    )
}

fn closed_form() -> Outcome {
    let e = std::f64::consts::E;
    let checks = [
        ("log_interval_prob (1,1,0) (1,2]", log_interval_prob(&p(1.0, 1.0, 0.0), 1.0, 2.0), (1.0 / e - 1.0 / (e * e)).ln()),
        ("log_interval_prob (1,1,1) (1,2]", log_interval_prob(&p(1.0, 1.0, 1.0), 1.0, 2.0), (1.0f64 / 6.0).ln()),
        ("log_interval_prob (1,1,0) (1,inf]", log_interval_prob(&p(1.0, 1.0, 0.0), 1.0, f64::INFINITY), -1.0),
        ("marginal_survivor (1,1,1) t=1", p(1.0, 1.0, 1.0).marginal_survivor(1.0), 0.5),
        ("marginal_survivor (1,1,0.5) t=2", p(1.0, 1.0, 0.5).marginal_survivor(2.0), 0.25),
        ("marginal_survivor (1,1,0) t=1", p(1.0, 1.0, 0.0).marginal_survivor(1.0), (-1.0f64).exp()),
        ("median_time (1,1,0)", median_of(1.0, 1.0, 0.0), std::f64::consts::LN_2),
        ("hazard (2,3) t=2", p(2.0, 3.0, 0.0).hazard(2.0).unwrap(), 24.0),
        ("hazard (1,2) t=0.5", p(1.0, 2.0, 0.0).hazard(0.5).unwrap(), 1.0),
        ("cum_hazard (2,3) t=2", p(2.0, 3.0, 0.0).cum_hazard(2.0), 16.0),
        ("marginal_hazard (1,1,1) t=1", p(1.0, 1.0, 1.0).marginal_hazard(1.0).unwrap(), 0.5),
        ("marginal_hazard (1,2,0.5) t=1", p(1.0, 2.0, 0.5).marginal_hazard(1.0).unwrap(), 4.0 / 3.0),
        ("loglik 2 x (1,2], MPR zero coefs", two_row_loglik(), 2.0 * (1.0 / e - 1.0 / (e * e)).ln()),
    ];
    let bad: Vec<String> = checks
        .iter()
        .filter(|(_, got, want)| !((got - want).abs() < 1e-10))
        .map(|(name, got, want)| format!("{name}: {got} vs {want}"))
        .collect();
    verdict(
        bad.is_empty(),
        if bad.is_empty() { format!("{} examples to 1e-10", checks.len()) } else { bad.join("; ") },
    )
}

fn median_of(l: f64, g: f64, f: f64) -> f64 {
    let spec = ModelSpec::uniform(if f > 0.0 { ModelType::Mprf } else { ModelType::Mpr }, &[]);
    let psi = if f > 0.0 { vec![f.ln()] } else { vec![] };
    let theta = Theta { beta: vec![l.ln()], alpha: vec![g.ln()], psi };
    let fit = FitResult::from_estimates(spec, theta, vec![], None).unwrap();
    predict_median(&fit, &[]).unwrap().median
}

fn two_row_loglik() -> f64 {
    let d = Dataset::intervals(vec![1.0, 1.0], vec![2.0, 2.0]).unwrap();
    let spec = ModelSpec::uniform(ModelType::Mpr, &[]);
    log_likelihood(&spec, &Theta::zeros(&spec), &d).unwrap().value
}

fn frailty_continuity() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..50u64 {
        let (spec, theta, data) = common::random_case(5000 + seed, ModelType::Mpr, 200);
        let mprf = ModelSpec::new(ModelType::Mprf, spec.scale_idx.clone(), spec.shape_idx.clone(), vec![]).unwrap();
        let theta_f = Theta { psi: vec![-23.0], ..theta.clone() };
        let a = log_likelihood(&spec, &theta, &data).unwrap().value;
        let b = log_likelihood(&mprf, &theta_f, &data).unwrap().value;
        worst = worst.max((a - b).abs());
    }
    verdict(worst < 1e-5, format!("50 datasets, max |diff| {worst:.2e} (< 1e-5)"))
}

fn nested_monotonicity() -> Outcome {
    let slack = 1e-4;
    let opts = FitOptions::default();
    let mut violations = Vec::new();
    let mut worst_gap = f64::NEG_INFINITY;
    for rep in 0..20u64 {
        let truth_type = ModelType::ALL[(rep % 6) as usize];
        let mut sc = Scenario::new(400, Truth::reference(truth_type), 0.3, 0.2, 1, 700 + rep);
        sc.covariate_draws = 2000;
        let data = simulate_dataset(&sc, &calibrate(&sc).unwrap(), 0).unwrap();
        let ll = ModelType::ALL.map(|t| fit(&ModelSpec::uniform(t, &[0, 1]), &data, &opts).unwrap().loglik);
        let [ph, phf, phdm, mpr, mprf, mprdm] = ll;
        for (lo, hi) in [(ph, mpr), (mpr, mprf), (mprf, mprdm), (ph, phf), (phf, phdm)] {
            worst_gap = worst_gap.max(lo - hi);
            if lo > hi + slack {
                violations.push(rep);
            }
        }
    }
    verdict(
        violations.is_empty(),
        format!("20 datasets, largest smaller-minus-larger {worst_gap:.2e} (slack 1e-4), violations {violations:?}"),
    )
}

fn simulation_reproduction() -> Outcome {
    let start = Instant::now();
    let sc = Scenario::new(1000, Truth::reference(ModelType::Mpr), 0.1, 0.0, 200, 1);
    let s = run_study(&sc, &FitOptions::default()).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let mut ok = s.converged == s.replicates && secs < 600.0;
    let mut parts = Vec::new();
    for c in &s.coefficients {
        let good = (c.median - c.truth).abs() <= 0.02 && c.pct_bias.abs() < 2.0;
        ok &= good;
        parts.push(format!("{} med {:.4} bias {:+.2}%{}", c.name, c.median, c.pct_bias, if good { "" } else { " !" }));
    }
    verdict(
        ok,
        format!("{}/{} converged, {secs:.0}s; {}", s.converged, s.replicates, parts.join(", ")),
    )
}

fn simulation_reproduction_large() -> String {
    let sc = Scenario::new(1000, Truth::reference(ModelType::Mpr), 0.1, 0.0, 2000, 1);
    let s = run_study(&sc, &FitOptions::default()).unwrap();
    let parts: Vec<String> = s.coefficients.iter().map(|c| format!("{} {:+.2}%", c.name, c.pct_bias)).collect();
    format!("same scenario at 2000 replicates: %bias {}", parts.join(", "))
}

fn frailty_recovery(realized: &mut Option<f64>) -> Outcome {
    let sc = Scenario::new(1000, Truth::reference(ModelType::Mprf), 0.5, 0.3, 200, 1);
    let s = run_study(&sc, &FitOptions::default()).unwrap();
    *realized = Some(s.realized_censoring);
    let phi = s.phi.as_ref().unwrap();
    verdict(
        (0.45..=0.55).contains(&phi.median),
        format!(
            "median phi {:.4} in [0.45, 0.55], %bias {:+.2}, {}/{} converged",
            phi.median, phi.pct_bias, s.converged, s.replicates
        ),
    )
}

fn interval_law() -> Outcome {
    let truth = Truth::reference(ModelType::Mpr);
    let sc = Scenario::new(1000, truth.clone(), 0.1, 0.0, 1, 1);
    let c = calibrate(&sc).unwrap().c;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let n = 1_000_000;
    let mut width = 0.0;
    let mut contained = 0usize;
    for _ in 0..n {
        let x = draw_covariates(&mut rng);
        let par = evaluate_parameters(&truth.spec, &truth.theta, &x).unwrap();
        let u = if par.phi > 0.0 { draw_frailty(par.phi, &mut rng).unwrap() } else { 1.0 };
        let t = draw_survival_time(&par, u, &mut rng);
        let (a, b) = make_interval(t, c, &mut rng);
        contained += usize::from(a < t && t <= b);
        width += b - a;
    }
    let ratio = width / n as f64 / (2.0 * c / 3.0);
    verdict(
        (ratio - 1.0).abs() < 0.01 && contained == n,
        format!("c = {c:.5}, E(b-a)/(2c/3) = {ratio:.5}, contained {contained}/{n}"),
    )
}

fn censoring(realized_mprf: Option<f64>) -> Outcome {
    let exp_truth = Truth {
        spec: ModelSpec::uniform(ModelType::Mpr, &[]),
        theta: Theta { beta: vec![0.0], alpha: vec![0.0], psi: vec![] },
    };
    let eta = calibrate_censoring(0.3, &exp_truth, &covariate_sample(100, 0)).unwrap().unwrap();
    let sc = Scenario::new(1000, Truth::reference(ModelType::Mpr), 0.1, 0.3, 200, 1);
    let cal = calibrate(&sc).unwrap();
    let realized = (0..200)
        .map(|r| simulate_dataset(&sc, &cal, r).unwrap().censored_fraction())
        .sum::<f64>()
        / 200.0;
    let mut ok = (eta - 0.3 / 0.7).abs() < 1e-4 && (realized - 0.3).abs() <= 0.02;
    let mut detail = format!("exponential eta {eta:.6} (0.428571 +- 1e-4), MPR truth realized {realized:.4}");
    if let Some(r) = realized_mprf {
        ok &= (r - 0.3).abs() <= 0.02;
        detail += &format!(", MPRF truth realized {r:.4}");
    }
    verdict(ok, detail + " (0.30 +- 0.02)")
}

/// Published (loglik, k, AIC, BIC) rows of the 24-model tooth-data grid.
const PUBLISHED_IC: [(f64, usize, f64, f64); 24] = [
    (-5562.1, 3, 11130.1, 11149.3),
    (-5559.2, 3, 11124.5, 11143.7),
    (-5523.9, 4, 11055.7, 11081.3),
    (-5520.2, 5, 11050.3, 11082.3),
    (-5540.9, 4, 11089.7, 11115.3),
    (-5526.6, 4, 11061.2, 11086.7),
    (-5488.2, 5, 10986.4, 11018.3),
    (-5485.1, 6, 10982.2, 11020.5),
    (-5540.8, 5, 11091.7, 11123.6),
    (-5516.3, 5, 11042.5, 11074.5),
    (-5475.2, 7, 10964.4, 11009.1),
    (-5472.6, 9, 10963.3, 11020.8),
    (-5560.8, 4, 11129.7, 11155.2),
    (-5538.3, 4, 11084.6, 11110.2),
    (-5501.7, 6, 11015.4, 11053.7),
    (-5493.7, 8, 11003.4, 11054.4),
    (-5540.7, 5, 11091.4, 11123.4),
    (-5511.3, 5, 11032.6, 11064.5),
    (-5471.6, 7, 10957.2, 11001.9),
    (-5466.1, 9, 10950.1, 11007.6),
    (-5540.7, 6, 11093.3, 11131.7),
    (-5511.2, 6, 11034.4, 11072.7),
    (-5469.8, 9, 10957.6, 11015.1),
    (-5465.6, 12, 10955.2, 11031.9),
];

fn information_criteria_arithmetic() -> Outcome {
    let n = 4386;
    let (aic0, bic0) = information_criteria(0.0, 0, n);
    let exact = aic0 == 0.0 && bic0 == 0.0 && {
        let (a, b) = information_criteria(-5471.6, 7, n);
        (a - (10943.2 + 14.0)).abs() < 1e-9 && (b - (10943.2 + 7.0 * (n as f64).ln())).abs() < 1e-9
    };
    // The table rounds loglik to 0.1, so -2*loglik carries +-0.1 and the
    // printed criterion another +-0.05.
    let envelope = 0.15 + 1e-9;
    let mut worst: f64 = 0.0;
    let mut cells_ok = true;
    for &(ll, k, aic, bic) in &PUBLISHED_IC {
        let (a, b) = information_criteria(ll, k, n);
        worst = worst.max((a - aic).abs()).max((b - bic).abs());
        // some loglik inside the rounding cell must reproduce both printed values
        cells_ok &= (0..=1000).any(|s| {
            let l = ll - 0.05 + 0.1 * s as f64 / 1000.0;
            let (a, b) = information_criteria(l, k, n);
            (a - aic).abs() <= 0.05 + 1e-9 && (b - bic).abs() <= 0.05 + 1e-9
        });
    }
    let (a, b) = information_criteria(-5520.2, 5, n);
    verdict(
        exact && worst <= envelope && cells_ok,
        format!(
            "(-5520.2, 5, 4386) -> AIC {a:.2}, BIC {b:.2} vs printed 11050.3, 11082.3; \
             all 24 published rows within +-{:.2} (max {worst:.3}), each consistent with its loglik rounding cell",
            envelope
        ),
    )
}

fn median_reproduction() -> Outcome {
    let cols: Vec<String> = ["girl", "dmf", "girl:dmf"].iter().map(|s| s.to_string()).collect();
    let ph = FitResult::from_estimates(
        ModelSpec::new(ModelType::Ph, vec![0, 1, 2], vec![], vec![]).unwrap(),
        Theta { beta: vec![-9.95, 0.43, 0.45, -0.21], alpha: vec![1.68], psi: vec![] },
        cols.clone(),
        None,
    )
    .unwrap();
    let mprf = FitResult::from_estimates(
        ModelSpec::new(ModelType::Mprf, vec![0, 1, 2], vec![1], vec![]).unwrap(),
        Theta { beta: vec![-13.22, 0.62, 2.93, -0.33], alpha: vec![1.99, -0.19], psi: vec![-0.46] },
        cols,
        None,
    )
    .unwrap();
    // (girl, dmf) rows in published order with PH and MPRF medians
    let groups = [
        ((1.0, 1.0), 5.27, 5.10),
        ((0.0, 1.0), 5.49, 5.35),
        ((1.0, 0.0), 5.51, 5.49),
        ((0.0, 0.0), 5.97, 5.98),
    ];
    let mut ok = true;
    let mut parts = Vec::new();
    for ((g, d), want_ph, want_mprf) in groups {
        let row = [g, d, g * d];
        let a = predict_median(&ph, &row).unwrap().median;
        let b = predict_median(&mprf, &row).unwrap().median;
        ok &= (a - want_ph).abs() <= 0.01 && (b - want_mprf).abs() <= 0.01;
        parts.push(format!("{a:.4}/{want_ph} {b:.4}/{want_mprf}"));
    }
    verdict(ok, format!("PH/MPRF-R medians: {}", parts.join(", ")))
}

fn turnbull() -> Outcome {
    let mut ok = true;
    let mut notes = Vec::new();
    let fit_of = |l: Vec<f64>, r: Vec<f64>| turnbull_fit(&Dataset::intervals(l, r).unwrap(), 1e-12, 10_000).unwrap();

    let d = Dataset::intervals(vec![0.0, 1.0], vec![1.0, 2.0]).unwrap();
    let s = turnbull_support(&d);
    let e = fit_of(vec![0.0, 1.0], vec![1.0, 2.0]);
    let steps = [e.survivor(0.0).0, e.survivor(1.0).0, e.survivor(2.0).0];
    let toy1 = s == [SupportInterval { left: 0.0, right: 1.0 }, SupportInterval { left: 1.0, right: 2.0 }]
        && e.masses.iter().all(|q| (q - 0.5).abs() < 1e-12)
        && steps == [1.0, 0.5, 0.0];
    ok &= toy1;
    notes.push(format!("(0,1],(1,2] S={steps:?}"));

    let e = fit_of(vec![0.0, 1.0], vec![2.0, 3.0]);
    let toy2 = e.support == [SupportInterval { left: 1.0, right: 2.0 }]
        && e.masses == [1.0]
        && e.survivor(1.0).0 == 1.0
        && e.survivor(2.0).0 == 0.0;
    ok &= toy2;
    notes.push(format!("(0,2],(1,3] support {:?}", e.support.iter().map(|s| (s.left, s.right)).collect::<Vec<_>>()));

    let single = turnbull_support(&Dataset::intervals(vec![0.3], vec![0.9]).unwrap());
    ok &= single == [SupportInterval { left: 0.3, right: 0.9 }];

    let sc = Scenario::new(500, Truth::reference(ModelType::Mprf), 0.5, 0.3, 1, 77);
    let data = simulate_dataset(&sc, &calibrate(&sc).unwrap(), 0).unwrap();
    let e = turnbull_fit(&data, 1e-10, 100_000).unwrap();
    let monotone = e.loglik_trace.windows(2).all(|w| w[1] >= w[0] - 1e-9 * w[0].abs());
    let total: f64 = e.masses.iter().sum();
    ok &= monotone && (total - 1.0).abs() < 1e-10 && e.converged;
    notes.push(format!(
        "simulated n=500: {} support intervals, {} iterations, EM monotone {monotone}, sum q - 1 = {:.1e}",
        e.support.len(),
        e.iterations,
        total - 1.0
    ));
    verdict(ok, notes.join("; "))
}

/// Published grid log-likelihoods in `ModelType::ALL` x structure order.
const PUBLISHED_LOGLIK: [[f64; 4]; 6] = [
    [-5562.1, -5559.2, -5523.9, -5520.2],
    [-5540.9, -5526.6, -5488.2, -5485.1],
    [-5540.8, -5516.3, -5475.2, -5472.6],
    [-5560.8, -5538.3, -5501.7, -5493.7],
    [-5540.7, -5511.3, -5471.6, -5466.1],
    [-5540.7, -5511.2, -5469.8, -5465.6],
];

fn tooth_data() -> Outcome {
    let Ok(path) = std::env::var("ICMPR_TOOTH_DATA") else {
        return Outcome::Skip("ICMPR_TOOTH_DATA not set".into());
    };
    let data = match read_data_file(path.as_ref(), 5.0, &["sex:dmf".to_string()]) {
        Ok(d) => d,
        Err(e) => return Outcome::Fail(format!("cannot read {path}: {e}")),
    };
    let names = |v: &[&str]| resolve_columns(&data, &v.iter().map(|s| s.to_string()).collect::<Vec<_>>()).unwrap();
    let structures = [
        CovariateStructure::uniform("I", &names(&["sex"])),
        CovariateStructure::uniform("II", &names(&["dmf"])),
        CovariateStructure::uniform("III", &names(&["sex", "dmf"])),
        CovariateStructure::uniform("IV", &names(&["sex", "dmf", "sex:dmf"])),
    ];
    let opts = FitOptions { restarts: 2, ..FitOptions::default() };
    let grid = fit_model_grid(&data, &structures, &ModelType::ALL, &opts).unwrap();
    let mut worst: f64 = 0.0;
    for row in &grid.rows {
        let ti = ModelType::ALL.iter().position(|&t| t == row.model_type).unwrap();
        let si = structures.iter().position(|s| s.label == row.structure).unwrap();
        worst = worst.max((row.loglik - PUBLISHED_LOGLIK[ti][si]).abs());
    }
    let aic = grid.best_by(Criterion::Aic).map(|r| r.label.clone()).unwrap_or_default();
    let bic = grid.best_by(Criterion::Bic).map(|r| r.label.clone()).unwrap_or_default();
    let coef = |label: &str| grid.rows.iter().find(|r| r.label == label).unwrap().fit.theta_hat.to_flat();
    let published: [(&str, &[f64]); 2] = [
        ("MPRF(III)", &[-12.97, 0.19, 2.73, 1.98, 0.02, -0.19, -0.45]),
        ("MPRF(IV)", &[-13.68, 1.52, 3.36, -1.08, 2.03, -0.07, -0.23, 0.06, -0.48]),
    ];
    let mut coef_err: f64 = 0.0;
    for (label, want) in published {
        for (a, b) in coef(label).iter().zip(want) {
            coef_err = coef_err.max((a - b).abs());
        }
    }
    verdict(
        worst <= 0.5 && aic == "MPRF(IV)" && bic == "MPRF(III)" && coef_err <= 0.02,
        format!("max |loglik diff| {worst:.3} (<= 0.5), AIC best {aic}, BIC best {bic}, max coef diff {coef_err:.3} (<= 0.02)"),
    )
}

fn main() {
    let mut realized_mprf = None;
    let criteria: Vec<(&str, Box<dyn FnOnce() -> Outcome + '_>)> = vec![
        ("gradient correctness", Box::new(gradient)),
        ("closed-form spot checks", Box::new(closed_form)),
        ("frailty-to-zero continuity", Box::new(frailty_continuity)),
        ("nested-model monotonicity", Box::new(nested_monotonicity)),
        ("simulation reproduction (MPR, n=1000, 200 reps)", Box::new(simulation_reproduction)),
        ("frailty recovery (MPRF, n=1000, p=0.3, d=0.5)", Box::new(|| frailty_recovery(&mut realized_mprf))),
        ("interval law", Box::new(interval_law)),
        ("information-criteria arithmetic", Box::new(information_criteria_arithmetic)),
        ("median reproduction from published coefficients", Box::new(median_reproduction)),
        ("turnbull", Box::new(turnbull)),
        ("tooth-data reproduction", Box::new(tooth_data)),
    ];
    let mut failed = 0;
    let mut run = |name: &str, outcome: Outcome| match outcome {
        Outcome::Pass(d) => println!("[PASS] {name}: {d}"),
        Outcome::Fail(d) => {
            failed += 1;
            println!("[FAIL] {name}: {d}");
        }
        Outcome::Skip(d) => println!("[SKIP] {name}: {d}"),
    };
    for (name, f) in criteria {
        run(name, f());
    }
    run("censoring calibration", censoring(realized_mprf));
    println!("[INFO] {}", simulation_reproduction_large());
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
