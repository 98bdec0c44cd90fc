//! Shared fixtures: random instances and a direct, loop-by-loop evaluation
//! of the temporal objective used as an oracle.
#![allow(dead_code)]

use poiapp::model::{HyperParams, LatentMatrix, TemporalFactorSet};
use poiapp::numerics::{DenseMatrix, MaskedMatrix, SeededRng};
use poiapp::preprocessing::ObservationBundle;

pub struct Instance {
    pub bundle: ObservationBundle,
    pub factors: TemporalFactorSet,
    pub hyper: HyperParams,
}

fn latent(k: usize, count: usize, rng: &mut SeededRng) -> LatentMatrix {
    let v: Vec<Vec<f64>> = (0..count)
        .map(|_| (0..k).map(|_| rng.gaussian(0.6)).collect())
        .collect();
    LatentMatrix::from_vectors(k, &v).unwrap()
}

pub fn random_bundle(m: usize, n: usize, l: usize, periods: usize, rng: &mut SeededRng) -> ObservationBundle {
    let x = (0..periods)
        .map(|_| {
            let mut x = MaskedMatrix::empty(m, n);
            for i in 0..m {
                for j in 0..n {
                    if rng.uniform() < 0.6 {
                        x.observe(i, j, rng.uniform());
                    }
                }
            }
            x
        })
        .collect();
    let z = (0..periods)
        .map(|_| {
            let mut z = DenseMatrix::zeros(m, m);
            for i in 0..m {
                for j in i..m {
                    let v = rng.uniform();
                    z.set(i, j, v);
                    z.set(j, i, v);
                }
            }
            z
        })
        .collect();
    let y = DenseMatrix::from_fn(m, l, |_, _| rng.uniform());
    ObservationBundle {
        location_ids: (0..m).map(|i| format!("s{i}")).collect(),
        app_ids: (0..n).map(|j| format!("a{j}")).collect(),
        category_names: (0..l).map(|c| format!("c{c}")).collect(),
        x,
        z,
        y,
    }
}

pub fn random_factors(k: usize, m: usize, n: usize, l: usize, periods: usize, rng: &mut SeededRng) -> TemporalFactorSet {
    let a = latent(k, n, rng);
    let mut f = TemporalFactorSet {
        l1: Vec::new(),
        l2: Vec::new(),
        p: Vec::new(),
        a,
    };
    for _ in 0..periods {
        f.l1.push(latent(k, m, rng));
        f.l2.push(latent(k, m, rng));
        f.p.push(latent(k, l, rng));
    }
    f
}

/// Instance with dimensions drawn uniformly up to the given bounds.
pub fn random_instance(seed: u64, max_m: usize, max_n: usize, max_l: usize, max_t: usize, max_k: usize) -> Instance {
    let mut rng = SeededRng::new(seed);
    let m = 2 + rng.below(max_m - 1);
    let n = 1 + rng.below(max_n);
    let l = 1 + rng.below(max_l);
    let periods = 1 + rng.below(max_t);
    let k = 1 + rng.below(max_k);
    let bundle = random_bundle(m, n, l, periods, &mut rng);
    let factors = random_factors(k, m, n, l, periods, &mut rng);
    let mut w = || 0.05 + rng.uniform();
    let hyper = HyperParams {
        k,
        alpha: 3.0 * w(),
        beta: 3.0 * w(),
        lambda_l1: w(),
        lambda_l2: w(),
        lambda_a: w(),
        lambda_p: w(),
        lambda_1: w(),
        lambda_2: w(),
        ..HyperParams::default()
    };
    Instance { bundle, factors, hyper }
}

fn g(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn dotv(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn frob(m: &LatentMatrix) -> f64 {
    m.as_slice().iter().map(|v| v * v).sum()
}

fn chain(a: &LatentMatrix, b: &LatentMatrix) -> f64 {
    a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// The temporal objective written directly from its definition.
pub fn oracle_loss(b: &ObservationBundle, f: &TemporalFactorSet, h: &HyperParams) -> f64 {
    let periods = b.x.len();
    let (m, n, l) = (b.location_ids.len(), b.app_ids.len(), b.category_names.len());
    let mut total = 0.0;
    for t in 0..periods {
        let mut xs = 0.0;
        for i in 0..m {
            let loc: Vec<f64> = f.l1[t].vector(i).iter().zip(f.l2[t].vector(i)).map(|(a, c)| a + c).collect();
            for j in 0..n {
                if let Some(v) = b.x[t].get(i, j) {
                    xs += (v - g(dotv(&loc, f.a.vector(j)))).powi(2);
                }
            }
        }
        let mut ys = 0.0;
        for i in 0..m {
            for c in 0..l {
                ys += (b.y.get(i, c) - g(dotv(f.l1[t].vector(i), f.p[t].vector(c)))).powi(2);
            }
        }
        let mut zs = 0.0;
        for i in 0..m {
            for j in 0..m {
                zs += (b.z[t].get(i, j) - g(dotv(f.l2[t].vector(i), f.l2[t].vector(j)))).powi(2);
            }
        }
        total += 0.5 * xs + h.alpha / 2.0 * ys + h.beta / 2.0 * zs;
        total += h.lambda_l1 / 2.0 * frob(&f.l1[t])
            + h.lambda_l2 / 2.0 * frob(&f.l2[t])
            + h.lambda_a / 2.0 * frob(&f.a)
            + h.lambda_p / 2.0 * frob(&f.p[t]);
    }
    for t in 1..periods {
        total += h.lambda_1 / 2.0 * (chain(&f.l1[t], &f.l1[t - 1]) + chain(&f.l2[t], &f.l2[t - 1]));
        total += h.lambda_2 / 2.0 * chain(&f.p[t], &f.p[t - 1]);
    }
    total
}

/// Largest relative error between the analytic gradient and central finite
/// differences of `oracle_loss`, over every parameter. Relative error is
/// `|a - f| / max(|a|, |f|, floor)`.
pub fn max_gradient_error(inst: &Instance, step: f64, floor: f64) -> f64 {
    let grad = poiapp::model::gradients(&inst.bundle, &inst.factors, &inst.hyper, None).unwrap();
    let mut worst = 0.0f64;
    let analytic: Vec<f64> = grad.matrices().flat_map(|m| m.as_slice().to_vec()).collect();
    let mut idx = 0;
    let count = inst.factors.matrices().count();
    for which in 0..count {
        let len = inst.factors.matrices().nth(which).unwrap().as_slice().len();
        for e in 0..len {
            let mut plus = inst.factors.clone();
            let mut minus = inst.factors.clone();
            plus.matrices_mut().nth(which).unwrap().as_mut_slice()[e] += step;
            minus.matrices_mut().nth(which).unwrap().as_mut_slice()[e] -= step;
            let fd = (oracle_loss(&inst.bundle, &plus, &inst.hyper) - oracle_loss(&inst.bundle, &minus, &inst.hyper))
                / (2.0 * step);
            let a = analytic[idx];
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(floor);
            worst = worst.max(rel);
            idx += 1;
        }
    }
    worst
}
