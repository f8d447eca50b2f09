//! Gradient checks: every backward rule against central finite differences.

mod common;

use common::{
    finite_diff_check, random_tensor, random_tensor_away_from_zero, random_tensor_distinct,
    weighted_sum,
};
use driveflow_core::tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-5;

#[test]
fn matmul_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let a = random_tensor(&mut rng, vec![3, 4]);
    let b = random_tensor(&mut rng, vec![4, 2]);
    finite_diff_check(
        &[a, b],
        &|tape, ids| {
            let y = tape.matmul(ids[0], ids[1]).unwrap();
            weighted_sum(tape, y, 7)
        },
        STEP,
        1e-6,
    )
    .unwrap();
}

#[test]
fn conv2d_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    let x = random_tensor(&mut rng, vec![3, 8, 8]);
    let k = random_tensor(&mut rng, vec![4, 3, 3, 3]);
    finite_diff_check(
        &[x, k],
        &|tape, ids| {
            let y = tape.conv2d(ids[0], ids[1], 2).unwrap();
            weighted_sum(tape, y, 8)
        },
        STEP,
        1e-6,
    )
    .unwrap();
}

#[test]
fn relu_gradients_match_finite_differences_away_from_kink() {
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let x = random_tensor_away_from_zero(&mut rng, vec![5, 7], 0.05);
    finite_diff_check(
        &[x],
        &|tape, ids| {
            let y = tape.relu(ids[0]);
            weighted_sum(tape, y, 9)
        },
        STEP,
        1e-6,
    )
    .unwrap();
}

#[test]
fn maxpool_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(45);
    let x = random_tensor_distinct(&mut rng, vec![2, 6, 6], 1e-3);
    finite_diff_check(
        &[x],
        &|tape, ids| {
            let y = tape.maxpool2d(ids[0], 2, 2).unwrap();
            weighted_sum(tape, y, 10)
        },
        STEP,
        1e-6,
    )
    .unwrap();
}

#[test]
fn global_max_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(46);
    let x = random_tensor_distinct(&mut rng, vec![6, 5], 1e-3);
    finite_diff_check(
        &[x],
        &|tape, ids| {
            let y = tape.global_max_over_points(ids[0]).unwrap();
            weighted_sum(tape, y, 11)
        },
        STEP,
        1e-6,
    )
    .unwrap();
}

/// Composite chain exercising gradient flow through several layers:
/// conv → relu → flatten → matmul → weighted scalar.
#[test]
fn composite_network_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(47);
    let x = random_tensor(&mut rng, vec![2, 6, 6]);
    let k = random_tensor(&mut rng, vec![3, 2, 3, 3]);
    let kb = random_tensor(&mut rng, vec![3]);
    let w = random_tensor(&mut rng, vec![12, 4]);
    let wb = random_tensor(&mut rng, vec![4]);
    finite_diff_check(
        &[x, k, kb, w, wb],
        &|tape, ids| {
            let c = tape.conv2d(ids[0], ids[1], 2).unwrap();
            let c = tape.add_channel_bias(c, ids[2]).unwrap();
            let a = tape.relu(c);
            let f = tape.flatten_row(a);
            let h = tape.matmul(f, ids[3]).unwrap();
            let h = tape.add_row_bias(h, ids[4]).unwrap();
            let s = tape.sigmoid(h);
            weighted_sum(tape, s, 12)
        },
        STEP,
        1e-5,
    )
    .unwrap();
}

#[test]
fn elementwise_and_reduction_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(48);
    let a = random_tensor(&mut rng, vec![3, 3]);
    let b = random_tensor(&mut rng, vec![3, 3]);
    finite_diff_check(
        &[a, b],
        &|tape, ids| {
            let s = tape.sub(ids[0], ids[1]).unwrap();
            let sq = tape.mul(s, s).unwrap();
            let m = tape.mean_all(sq);
            // Keep mean positive so sqrt stays differentiable.
            let shifted = {
                let one = tape.scalar(1.0);
                tape.add(m, one).unwrap()
            };
            tape.sqrt(shifted).unwrap()
        },
        STEP,
        1e-6,
    )
    .unwrap();
}

#[test]
fn concat_and_scale_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(49);
    let a = random_tensor(&mut rng, vec![1, 3]);
    let b = random_tensor(&mut rng, vec![1, 4]);
    finite_diff_check(
        &[a, b],
        &|tape, ids| {
            let cat = tape.concat(&[ids[0], ids[1]]).unwrap();
            let scaled = tape.scale(cat, -1.7);
            weighted_sum(tape, scaled, 13)
        },
        STEP,
        1e-6,
    )
    .unwrap();
}

/// Same seed and inputs twice: forward values and gradients must be
/// bitwise identical.
#[test]
fn forward_and_backward_are_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        let x = random_tensor(&mut rng, vec![2, 5, 5]);
        let k = random_tensor(&mut rng, vec![2, 2, 2, 2]);
        let mut tape = driveflow_core::tensor::Tape::new();
        let xi = tape.leaf(&x);
        let ki = tape.leaf(&k);
        let c = tape.conv2d(xi, ki, 1).unwrap();
        let r = tape.relu(c);
        let loss = tape.sum_all(r);
        tape.backward(loss).unwrap();
        (
            tape.value(loss).to_vec(),
            tape.grad(xi).unwrap().to_vec(),
            tape.grad(ki).unwrap().to_vec(),
        )
    };
    let (l1, gx1, gk1) = run();
    let (l2, gx2, gk2) = run();
    assert_eq!(l1, l2);
    assert_eq!(gx1, gx2);
    assert_eq!(gk1, gk2);
}

/// The backward example from the composite spec: every parameter gradient
/// of a conv → relu → matmul → loss chain within 1e-5 of central
/// differences at step 1e-5.
#[test]
fn conv_relu_matmul_loss_chain() {
    for seed in [60, 61, 62] {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_tensor(&mut rng, vec![1, 5, 5]);
        let k = random_tensor(&mut rng, vec![2, 1, 2, 2]);
        let w = random_tensor(&mut rng, vec![32, 3]);
        finite_diff_check(
            &[x, k, w],
            &|tape, ids| {
                let c = tape.conv2d(ids[0], ids[1], 1).unwrap();
                let r = tape.relu(c);
                let f = tape.flatten_row(r);
                let y = tape.matmul(f, ids[2]).unwrap();
                weighted_sum(tape, y, seed + 100)
            },
            STEP,
            1e-5,
        )
        .unwrap();
    }
}

#[test]
fn permutation_of_rows_leaves_global_max_unchanged() {
    use rand::seq::SliceRandom;
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    let base = random_tensor(&mut rng, vec![16, 8]);
    let reference = {
        let mut tape = driveflow_core::tensor::Tape::new();
        let id = tape.leaf(&base);
        let y = tape.global_max_over_points(id).unwrap();
        tape.value(y).to_vec()
    };
    for _ in 0..100 {
        let mut rows: Vec<usize> = (0..16).collect();
        rows.shuffle(&mut rng);
        let mut data = Vec::with_capacity(16 * 8);
        for &r in &rows {
            data.extend_from_slice(&base.data()[r * 8..(r + 1) * 8]);
        }
        let perm = Tensor::new(vec![16, 8], data).unwrap();
        let mut tape = driveflow_core::tensor::Tape::new();
        let id = tape.leaf(&perm);
        let y = tape.global_max_over_points(id).unwrap();
        assert_eq!(tape.value(y), &reference[..]);
    }
}
