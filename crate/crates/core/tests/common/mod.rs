//! Shared test harness: central finite-difference gradient checking.

use driveflow_core::tensor::{NodeId, Tape, Tensor};

/// Checks every analytic input gradient of a taped scalar against central
/// finite differences.
///
/// `build` must construct the same scalar loss from the given leaf ids each
/// time it is called; it is re-invoked twice per input element with
/// perturbed data. Passes when
/// `|g - fd| <= atol + tol * max(|g|, |fd|)` for every element.
pub fn finite_diff_check(
    inputs: &[Tensor],
    build: &dyn Fn(&mut Tape, &[NodeId]) -> NodeId,
    step: f64,
    tol: f64,
) -> Result<(), String> {
    let eval = |tensors: &[Tensor]| -> f64 {
        let mut tape = Tape::new();
        let ids: Vec<NodeId> = tensors.iter().map(|t| tape.leaf(t)).collect();
        let loss = build(&mut tape, &ids);
        tape.value(loss)[0]
    };

    // Analytic gradients.
    let mut tape = Tape::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| tape.leaf(t)).collect();
    let loss = build(&mut tape, &ids);
    tape.backward(loss).map_err(|e| e.to_string())?;
    let analytic: Vec<Vec<f64>> = ids
        .iter()
        .map(|&id| tape.grad(id).unwrap_or(&[]).to_vec())
        .collect();

    let atol = 1e-8;
    for (ti, input) in inputs.iter().enumerate() {
        if !input.requires_grad {
            continue;
        }
        let grads = &analytic[ti];
        if grads.is_empty() {
            return Err(format!("input {ti} received no gradient"));
        }
        #[allow(clippy::needless_range_loop)]
        for ei in 0..input.len() {
            let mut probe: Vec<Tensor> = inputs.to_vec();
            let orig = probe[ti].data()[ei];
            probe[ti].data_mut()[ei] = orig + step;
            let plus = eval(&probe);
            probe[ti].data_mut()[ei] = orig - step;
            let minus = eval(&probe);
            let fd = (plus - minus) / (2.0 * step);
            let g = grads[ei];
            let err = (g - fd).abs();
            let denom = g.abs().max(fd.abs());
            if err > atol + tol * denom {
                return Err(format!(
                    "input {ti} element {ei}: analytic {g:.12e} vs finite-diff {fd:.12e} \
                     (err {err:.3e}, tol {tol:.1e})"
                ));
            }
        }
    }
    Ok(())
}

/// Random tensor with entries uniform in [-1, 1].
pub fn random_tensor(rng: &mut impl rand::Rng, shape: Vec<usize>) -> Tensor {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::param(shape, data).unwrap()
}

/// Random tensor whose entries stay at least `margin` away from zero;
/// used for kink-free relu checks.
pub fn random_tensor_away_from_zero(
    rng: &mut impl rand::Rng,
    shape: Vec<usize>,
    margin: f64,
) -> Tensor {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n)
        .map(|_| {
            let v: f64 = rng.random_range(margin..1.0);
            if rng.random::<bool>() {
                v
            } else {
                -v
            }
        })
        .collect();
    Tensor::param(shape, data).unwrap()
}

/// Random tensor whose pairwise element gaps all exceed `gap`; keeps max /
/// pooling argmaxes stable under finite-difference perturbation.
pub fn random_tensor_distinct(
    rng: &mut impl rand::Rng,
    shape: Vec<usize>,
    gap: f64,
) -> Tensor {
    let n: usize = shape.iter().product();
    loop {
        let data: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut sorted = data.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        if sorted.windows(2).all(|w| w[1] - w[0] > gap) {
            return Tensor::param(shape, data).unwrap();
        }
    }
}

/// Fixed random linear functional turning a tensor node into a scalar:
/// loss = Σᵢ cᵢ·yᵢ with constants c. A weighted sum catches index bugs a
/// plain sum can miss.
pub fn weighted_sum(tape: &mut Tape, y: NodeId, seed: u64) -> NodeId {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let shape = tape.shape(y).to_vec();
    let n: usize = shape.iter().product();
    let coeffs: Vec<f64> = (0..n).map(|_| rng.random_range(0.25..1.0)).collect();
    let c = tape.constant(shape, coeffs).unwrap();
    let prod = tape.mul(y, c).unwrap();
    tape.sum_all(prod)
}
