#![allow(dead_code)]

use icmpr::likelihood::log_likelihood;
use icmpr::{Dataset, ModelSpec, ModelType, Theta};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub const COLS: [&str; 3] = ["c0", "c1", "c2"];

fn subset(rng: &mut ChaCha8Rng, on: bool) -> Vec<usize> {
    if !on {
        return Vec::new();
    }
    (0..COLS.len()).filter(|_| rng.random_bool(0.6)).collect()
}

/// Random spec, coefficients and interval data for `model_type`.
pub fn random_case(seed: u64, model_type: ModelType, n: usize) -> (ModelSpec, Theta, Dataset) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = subset(&mut rng, true);
    let shape = subset(&mut rng, model_type.shape_regression());
    let disp = subset(&mut rng, model_type.dispersion_regression());
    let spec = ModelSpec::new(model_type, scale, shape, disp).unwrap();

    let mut block = |len: usize, (lo0, hi0): (f64, f64), half: f64| -> Vec<f64> {
        (0..len)
            .map(|k| if k == 0 { rng.random_range(lo0..hi0) } else { rng.random_range(-half..half) })
            .collect()
    };
    let beta = block(spec.dim_beta(), (-1.0, 0.5), 0.5);
    let alpha = block(spec.dim_alpha(), (-0.5, 0.7), 0.3);
    let psi = block(spec.dim_psi(), (-2.0, 0.5), 0.5);
    let theta = Theta { beta, alpha, psi };

    let (mut left, mut right, mut covs) = (Vec::new(), Vec::new(), Vec::new());
    for _ in 0..n {
        let a = if rng.random_bool(0.15) { 0.0 } else { rng.random_range(0.0..2.0) };
        let b = if rng.random_bool(0.2) { f64::INFINITY } else { a + rng.random_range(0.05..2.0) };
        left.push(a);
        right.push(b);
        let c1: f64 = StandardNormal.sample(&mut rng);
        covs.push(vec![if rng.random_bool(0.5) { 1.0 } else { 0.0 }, c1, rng.random_range(-1.0..1.0)]);
    }
    let data = Dataset::new(left, right, covs, COLS.iter().map(|s| s.to_string()).collect()).unwrap();
    (spec, theta, data)
}

fn lin(coef: &[f64], idx: &[usize], row: &[f64]) -> f64 {
    coef[0] + idx.iter().zip(&coef[1..]).map(|(&j, c)| c * row[j]).sum::<f64>()
}

/// Term-by-term log-likelihood written directly from the survivor formula,
/// without the log-space machinery of the library.
pub fn naive_loglik(spec: &ModelSpec, theta: &Theta, data: &Dataset) -> f64 {
    let mut total = 0.0;
    for i in 0..data.len() {
        let row = data.row(i);
        let lambda = lin(&theta.beta, &spec.scale_idx, row).exp();
        let gamma = lin(&theta.alpha, &spec.shape_idx, row).exp();
        let phi = if spec.model_type.has_frailty() { lin(&theta.psi, &spec.disp_idx, row).exp() } else { 0.0 };
        let surv = |t: f64| {
            if t.is_infinite() {
                return 0.0;
            }
            let cum = lambda * t.powf(gamma);
            if phi == 0.0 {
                (-cum).exp()
            } else {
                (1.0 + phi * cum).powf(-1.0 / phi)
            }
        };
        total += (surv(data.left()[i]) - surv(data.right()[i])).ln();
    }
    total
}

/// Central differences of the library log-likelihood with one Richardson
/// extrapolation step.
pub fn fd_score(spec: &ModelSpec, theta: &Theta, data: &Dataset) -> Vec<f64> {
    let x = theta.to_flat();
    let ll = |v: &[f64]| log_likelihood(spec, &Theta::from_flat(spec, v).unwrap(), data).unwrap().value;
    (0..x.len())
        .map(|j| {
            let central = |h: f64| {
                let mut up = x.clone();
                let mut dn = x.clone();
                up[j] += h;
                dn[j] -= h;
                (ll(&up) - ll(&dn)) / (2.0 * h)
            };
            let h = 1e-3 * x[j].abs().max(1.0);
            (4.0 * central(h / 2.0) - central(h)) / 3.0
        })
        .collect()
}

/// Largest `|analytic - fd| / max(1, |fd|)`.
pub fn max_rel_err(a: &[f64], fd: &[f64]) -> f64 {
    a.iter().zip(fd).map(|(x, y)| (x - y).abs() / y.abs().max(1.0)).fold(0.0, f64::max)
}
