//! The full per-operation gradient checklist, shared by the gradcheck
//! suite and the acceptance suite. Tensors stay at or below 500 elements;
//! eps = 1e-3 against the float32 forward path.

use volseq::autodiff::{conv3d, conv3d_general, conv_transpose3d, ops, Tensor};

use super::fd::{check_gradients, random_values, FdReport};

const EPS: f32 = 1e-3;
const TOL: f64 = 1e-3;

/// Deterministic weights so reduction losses have non-uniform upstream
/// gradients.
fn weight_tensor(shape: &[usize], seed: u64) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::from_vec(random_values(n, -1.0, 1.0, seed), shape).unwrap()
}

fn weighted_sum(t: &Tensor, seed: u64) -> Tensor {
    let w = weight_tensor(&t.shape(), seed);
    ops::sum(&ops::mul(t, &w).unwrap()).unwrap()
}

/// The upstream gradient of straight_through must reach `src` unchanged
/// and never touch the graph behind `value`.
fn straight_through_routing_check() -> FdReport {
    let src = Tensor::param(random_values(8, -1.0, 1.0, 40), &[8]).unwrap();
    let value = Tensor::param(random_values(8, -1.0, 1.0, 41), &[8]).unwrap();
    let st = ops::straight_through(&src, &value.detach()).unwrap();
    let w = weight_tensor(&[8], 42);
    let loss = ops::sum(&ops::mul(&st, &w).unwrap()).unwrap();
    volseq::autodiff::backward(&loss).unwrap();
    let got = src.grad().unwrap();
    let want = w.data();
    let mut max_rel = 0.0f64;
    for (g, e) in got.iter().zip(&want) {
        assert_eq!(g.to_bits(), e.to_bits(), "straight_through routing must be exact");
        max_rel = max_rel.max(((g - e).abs() as f64) / (e.abs() as f64).max(1e-12));
    }
    assert!(value.grad().is_none(), "straight_through leaked gradient into value");
    FdReport {
        name: "straight_through".to_string(),
        max_rel_err: max_rel,
        checked: got.len(),
    }
}

pub fn run_all() -> Vec<FdReport> {
    let mut reports = Vec::new();
    let mut check = |name: &str,
                     leaves: &[(Vec<f32>, Vec<usize>)],
                     build: &dyn Fn(&[Tensor]) -> Tensor| {
        reports.push(check_gradients(name, leaves, build, EPS, TOL));
    };

    let v8 = random_values(8, -1.0, 1.0, 11);
    let v8b = random_values(8, -1.0, 1.0, 12);

    check("sigmoid", &[(v8.clone(), vec![8])], &|p| {
        weighted_sum(&ops::sigmoid(&p[0]).unwrap(), 1)
    });
    check("tanh", &[(v8.clone(), vec![8])], &|p| {
        weighted_sum(&ops::tanh(&p[0]).unwrap(), 2)
    });
    // keep relu/leaky inputs away from the kink at zero
    let away: Vec<f32> = random_values(8, 0.2, 1.0, 13)
        .iter()
        .zip(&v8)
        .map(|(m, s)| if *s >= 0.0 { *m } else { -*m })
        .collect();
    check("relu", &[(away.clone(), vec![8])], &|p| {
        weighted_sum(&ops::relu(&p[0]).unwrap(), 3)
    });
    check("leaky_relu", &[(away.clone(), vec![8])], &|p| {
        weighted_sum(&ops::leaky_relu(&p[0], 0.2).unwrap(), 4)
    });
    check("add", &[(v8.clone(), vec![8]), (v8b.clone(), vec![8])], &|p| {
        weighted_sum(&ops::add(&p[0], &p[1]).unwrap(), 5)
    });
    check("sub", &[(v8.clone(), vec![8]), (v8b.clone(), vec![8])], &|p| {
        weighted_sum(&ops::sub(&p[0], &p[1]).unwrap(), 6)
    });
    check("mul", &[(v8.clone(), vec![8]), (v8b.clone(), vec![8])], &|p| {
        weighted_sum(&ops::mul(&p[0], &p[1]).unwrap(), 7)
    });
    check(
        "mul_scalar_broadcast",
        &[(v8.clone(), vec![8]), (vec![0.7], vec![1])],
        &|p| weighted_sum(&ops::mul(&p[0], &p[1]).unwrap(), 8),
    );
    check(
        "add_scalar_broadcast",
        &[(vec![0.3], vec![1]), (v8.clone(), vec![8])],
        &|p| weighted_sum(&ops::add(&p[0], &p[1]).unwrap(), 9),
    );
    check(
        "sub_scalar_broadcast",
        &[(vec![1.0], vec![1]), (v8.clone(), vec![8])],
        &|p| weighted_sum(&ops::sub(&p[0], &p[1]).unwrap(), 10),
    );
    check("mul_scalar_const", &[(v8.clone(), vec![8])], &|p| {
        weighted_sum(&ops::mul_scalar(&p[0], -1.7).unwrap(), 11)
    });
    check("add_scalar_const", &[(v8.clone(), vec![8])], &|p| {
        weighted_sum(&ops::add_scalar(&p[0], 0.4).unwrap(), 12)
    });
    let positive = random_values(8, 0.2, 2.0, 14);
    check("log", &[(positive.clone(), vec![8])], &|p| {
        weighted_sum(&ops::log(&p[0]).unwrap(), 13)
    });
    // clamp: half the inputs inside, half outside the active range; keep
    // all of them away from the boundary so eps cannot cross it
    let clamp_in: Vec<f32> = (0..8)
        .map(|i| if i % 2 == 0 { 0.1 + 0.05 * i as f32 } else { 1.5 + 0.1 * i as f32 })
        .collect();
    check("clamp", &[(clamp_in, vec![8])], &|p| {
        weighted_sum(&ops::clamp(&p[0], 0.0, 1.0).unwrap(), 14)
    });
    check("sum", &[(v8.clone(), vec![8])], &|p| ops::sum(&p[0]).unwrap());
    check("mean", &[(v8.clone(), vec![8])], &|p| {
        ops::mean(&p[0]).unwrap()
    });
    check(
        "l1_loss",
        &[(v8.clone(), vec![8]), (random_values(8, 2.0, 3.0, 15), vec![8])],
        &|p| ops::l1_loss(&p[0], &p[1]).unwrap(),
    );
    check(
        "l2_loss",
        &[(v8.clone(), vec![8]), (v8b.clone(), vec![8])],
        &|p| ops::l2_loss(&p[0], &p[1]).unwrap(),
    );
    // sum(x + sg(x)): reverse-mode sees ones through the differentiable
    // branch only. The finite-difference reference keeps the stopped branch
    // frozen at its original value, since sg is an identity in the forward.
    let frozen = Tensor::from_vec(v8.clone(), &[8]).unwrap();
    check("stop_gradient_branch", &[(v8.clone(), vec![8])], &move |p| {
        ops::sum(&ops::add(&p[0], &frozen).unwrap()).unwrap()
    });
    check("permute", &[(random_values(24, -1.0, 1.0, 16), vec![2, 3, 4])], &|p| {
        weighted_sum(&ops::permute(&p[0], &[2, 0, 1]).unwrap(), 15)
    });
    check("reshape", &[(v8.clone(), vec![2, 4])], &|p| {
        weighted_sum(&ops::reshape(&p[0], &[4, 2]).unwrap(), 16)
    });
    check(
        "concat_channels",
        &[
            (random_values(6, -1.0, 1.0, 17), vec![1, 1, 6]),
            (random_values(12, -1.0, 1.0, 18), vec![1, 2, 6]),
        ],
        &|p| weighted_sum(&ops::concat_channels(&[&p[0], &p[1]]).unwrap(), 17),
    );
    check(
        "slice_depth",
        &[(random_values(54, -1.0, 1.0, 19), vec![1, 2, 3, 3, 3])],
        &|p| weighted_sum(&ops::slice_depth(&p[0], 1).unwrap(), 18),
    );
    check(
        "gather_rows",
        &[(random_values(12, -1.0, 1.0, 20), vec![4, 3])],
        &|p| weighted_sum(&ops::gather_rows(&p[0], &[2, 0, 3, 2]).unwrap(), 19),
    );
    check(
        "channel_bias_add",
        &[
            (random_values(24, -1.0, 1.0, 21), vec![2, 3, 4]),
            (random_values(3, -1.0, 1.0, 22), vec![3]),
        ],
        &|p| weighted_sum(&ops::channel_bias_add(&p[0], &p[1]).unwrap(), 21),
    );
    check(
        "group_norm",
        &[
            (random_values(128, -1.0, 1.0, 23), vec![2, 4, 4, 2, 2]),
            (random_values(4, 0.5, 1.5, 24), vec![4]),
            (random_values(4, -0.5, 0.5, 25), vec![4]),
        ],
        &|p| weighted_sum(&ops::group_norm(&p[0], &p[1], &p[2], 2, 1e-5).unwrap(), 22),
    );
    // the spec's conv case: sum of output w.r.t. input and kernel
    check(
        "conv3d",
        &[
            (random_values(250, -1.0, 1.0, 26), vec![1, 2, 5, 5, 5]),
            (random_values(162, -1.0, 1.0, 27), vec![3, 2, 3, 3, 3]),
        ],
        &|p| ops::sum(&conv3d(&p[0], &p[1], 1, 1).unwrap()).unwrap(),
    );
    check(
        "conv3d_strided",
        &[
            (random_values(216, -1.0, 1.0, 28), vec![1, 1, 6, 6, 6]),
            (random_values(128, -1.0, 1.0, 29), vec![2, 1, 4, 4, 4]),
        ],
        &|p| weighted_sum(&conv3d(&p[0], &p[1], 2, 1).unwrap(), 23),
    );
    check(
        "conv_transpose3d",
        &[
            (random_values(128, -1.0, 1.0, 30), vec![1, 2, 4, 4, 4]),
            (random_values(128, -1.0, 1.0, 31), vec![2, 1, 4, 4, 4]),
        ],
        &|p| weighted_sum(&conv_transpose3d(&p[0], &p[1], 2, 1).unwrap(), 24),
    );
    check(
        "conv3d_planar",
        &[
            (random_values(98, -1.0, 1.0, 32), vec![1, 2, 1, 7, 7]),
            (random_values(32, -1.0, 1.0, 33), vec![1, 2, 1, 4, 4]),
        ],
        &|p| {
            weighted_sum(
                &conv3d_general(&p[0], &p[1], [1, 2, 2], [0, 1, 1]).unwrap(),
                25,
            )
        },
    );
    drop(check);
    // straight_through is an estimator: its backward is identity routing
    // by definition, not the derivative of its forward, so the check is
    // exact rather than finite-difference.
    reports.push(straight_through_routing_check());
    reports
}
