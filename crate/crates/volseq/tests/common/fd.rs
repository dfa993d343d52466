//! Central finite-difference gradient oracle.
//!
//! Independent of the backward implementation: it re-evaluates the forward
//! path at perturbed inputs only. A check passes when the reverse-mode
//! gradient matches the central difference to a relative tolerance, with an
//! absolute escape scaled to the gradient magnitude for entries near zero.

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use volseq::autodiff::{backward, Tensor};

pub struct FdReport {
    pub name: String,
    pub max_rel_err: f64,
    pub checked: usize,
}

/// Random values in [lo, hi], reproducible from the seed.
pub fn random_values(n: usize, lo: f32, hi: f32, seed: u64) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = Uniform::new_inclusive(lo, hi);
    (0..n).map(|_| dist.sample(&mut rng)).collect()
}

/// Check d(build(leaves))/d(leaf) against central differences for every
/// leaf element. `build` must produce a scalar and be a pure function of
/// the leaf tensors.
pub fn check_gradients(
    name: &str,
    leaves: &[(Vec<f32>, Vec<usize>)],
    build: impl Fn(&[Tensor]) -> Tensor,
    eps: f32,
    tol: f64,
) -> FdReport {
    // reverse-mode gradients
    let params: Vec<Tensor> = leaves
        .iter()
        .map(|(v, s)| Tensor::param(v.clone(), s).unwrap())
        .collect();
    let loss = build(&params);
    assert_eq!(loss.numel(), 1, "{name}: build must return a scalar");
    backward(&loss).expect("backward failed");
    let grads: Vec<Vec<f32>> = params
        .iter()
        .map(|p| p.grad().unwrap_or_else(|| vec![0.0; p.numel()]))
        .collect();

    // forward-only evaluation at perturbed points
    let eval = |vals: &[Vec<f32>]| -> f64 {
        let ts: Vec<Tensor> = vals
            .iter()
            .zip(leaves)
            .map(|(v, (_, s))| Tensor::from_vec(v.clone(), s).unwrap())
            .collect();
        build(&ts).item().unwrap() as f64
    };

    let scale = grads
        .iter()
        .flat_map(|g| g.iter())
        .fold(0.0f64, |m, v| m.max(v.abs() as f64))
        .max(1.0);

    let mut max_rel = 0.0f64;
    let mut checked = 0usize;
    let base: Vec<Vec<f32>> = leaves.iter().map(|(v, _)| v.clone()).collect();
    for (li, leaf) in base.iter().enumerate() {
        for j in 0..leaf.len() {
            let mut plus = base.clone();
            plus[li][j] += eps;
            let mut minus = base.clone();
            minus[li][j] -= eps;
            let fd = (eval(&plus) - eval(&minus)) / (2.0 * eps as f64);
            let ad = grads[li][j] as f64;
            let err = (ad - fd).abs();
            let denom = ad.abs().max(fd.abs()).max(tol * scale);
            let rel = err / denom;
            assert!(
                rel < tol || err < tol * scale,
                "{name}: leaf {li} element {j}: reverse-mode {ad} vs finite-difference {fd} (rel {rel:.2e})"
            );
            max_rel = max_rel.max(err / ad.abs().max(fd.abs()).max(1e-12));
            checked += 1;
        }
    }
    FdReport {
        name: name.to_string(),
        max_rel_err: max_rel,
        checked,
    }
}
