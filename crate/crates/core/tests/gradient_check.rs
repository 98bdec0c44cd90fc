mod common;

use common::{max_gradient_error, oracle_loss, random_instance};
use poiapp::model::{gradients, loss, Batch, Cell};

#[test]
fn library_loss_matches_direct_formula() {
    for seed in 0..30 {
        let inst = random_instance(seed, 8, 6, 5, 3, 4);
        let lib = loss(&inst.bundle, &inst.factors, &inst.hyper).unwrap();
        let direct = oracle_loss(&inst.bundle, &inst.factors, &inst.hyper);
        assert!((lib - direct).abs() <= 1e-12 * direct.abs().max(1.0), "seed {seed}: {lib} vs {direct}");
    }
}

#[test]
fn analytic_gradient_matches_finite_differences() {
    for seed in 100..120 {
        let inst = random_instance(seed, 8, 6, 5, 3, 4);
        let err = max_gradient_error(&inst, 1e-5, 1e-6);
        assert!(err < 1e-4, "seed {seed}: relative error {err}");
    }
}

#[test]
fn gradient_with_zero_side_weights_matches() {
    for seed in 200..205 {
        let mut inst = random_instance(seed, 6, 5, 4, 2, 3);
        inst.hyper.alpha = 0.0;
        inst.hyper.beta = 0.0;
        assert!(max_gradient_error(&inst, 1e-5, 1e-6) < 1e-4);
    }
}

#[test]
fn batches_covering_everything_sum_to_full_gradient() {
    let inst = random_instance(7, 8, 6, 5, 3, 4);
    let full = gradients(&inst.bundle, &inst.factors, &inst.hyper, None).unwrap();
    let cells: Vec<Cell> = poiapp::model::observed_cells(&inst.bundle);
    let m = inst.bundle.location_ids.len();
    let locations: Vec<usize> = (0..m).collect();
    let batched = gradients(
        &inst.bundle,
        &inst.factors,
        &inst.hyper,
        Some(Batch {
            cells: &cells,
            locations: &locations,
        }),
    )
    .unwrap();
    for (a, b) in full.matrices().zip(batched.matrices()) {
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
