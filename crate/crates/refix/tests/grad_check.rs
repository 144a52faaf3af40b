//! Finite-difference validation of the reverse-mode gradients.
//!
//! Every differentiable operation is checked against central differences at
//! 64-bit precision on randomized instances, and the combined training loss
//! (supervised + weighted unlabeled terms) is checked end to end through
//! both architectures by perturbing every parameter. Branch decisions and
//! sharpened targets are held fixed under perturbation, matching their
//! stop-gradient role in the objective.

use rand::Rng;

use refix::models::{self, Arch, ModelSpec};
use refix::objective::{
    self, AblationMode, LossConfig, ThresholdMode, ThresholdPolicy,
};
use refix::ops;
use refix::rng;
use refix::tape::Tape;
use refix::tensor::Tensor;

const DOMAIN_TEST: u64 = 0xF0;

fn rand_vec(r: &mut impl Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| r.gen_range(lo..hi)).collect()
}

/// Central difference d(loss)/d(x_i) for a scalar-valued closure.
fn fd_grad(f: &dyn Fn(&[f64]) -> f64, x: &[f64], eps: f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let mut hi = x.to_vec();
            let mut lo = x.to_vec();
            hi[i] += eps;
            lo[i] -= eps;
            (f(&hi) - f(&lo)) / (2.0 * eps)
        })
        .collect()
}

fn assert_close(analytic: &[f64], numeric: &[f64], tol: f64, what: &str) {
    assert_eq!(analytic.len(), numeric.len(), "{what}: length");
    for (i, (&a, &n)) in analytic.iter().zip(numeric).enumerate() {
        let err = (a - n).abs() / (1.0 + a.abs().max(n.abs()));
        assert!(
            err <= tol,
            "{what}[{i}]: analytic {a} vs numeric {n} (rel {err:.3e} > {tol:.0e})"
        );
    }
}

/// Checks every leaf's gradient of a scalar graph. `build` must construct
/// the same graph from any leaf values.
fn check_leaves(
    shapes: &[Vec<usize>],
    values: &[Vec<f64>],
    build: &dyn Fn(&mut Tape<f64>, &[refix::tape::NodeId]) -> refix::tape::NodeId,
    tol: f64,
    what: &str,
) {
    let mut tape = Tape::new();
    let leaves: Vec<_> = shapes
        .iter()
        .zip(values)
        .map(|(sh, v)| tape.leaf(Tensor::from_vec(sh.clone(), v.clone()).unwrap()))
        .collect();
    let loss = build(&mut tape, &leaves);
    let grads = tape.backward(loss).unwrap();

    for (li, (sh, v)) in shapes.iter().zip(values).enumerate() {
        let f = |perturbed: &[f64]| -> f64 {
            let mut t = Tape::new();
            let ls: Vec<_> = shapes
                .iter()
                .zip(values)
                .enumerate()
                .map(|(i, (s, val))| {
                    let data = if i == li { perturbed.to_vec() } else { val.clone() };
                    t.leaf(Tensor::from_vec(s.clone(), data).unwrap())
                })
                .collect();
            let l = build(&mut t, &ls);
            t.value(l).item().unwrap()
        };
        let numeric = fd_grad(&f, v, 1e-6);
        let analytic = grads.get_or_zeros(leaves[li]);
        assert_eq!(analytic.shape(), sh.as_slice());
        assert_close(analytic.data(), &numeric, tol, &format!("{what} leaf {li}"));
    }
}

#[test]
fn matmul_gradients_match_fd() {
    for case in 0..20u64 {
        let mut r = rng::stream(31, DOMAIN_TEST, case, 0);
        let (m, k, n) = (r.gen_range(1..5), r.gen_range(1..5), r.gen_range(1..5));
        let a = rand_vec(&mut r, m * k, -2.0, 2.0);
        let b = rand_vec(&mut r, k * n, -2.0, 2.0);
        check_leaves(
            &[vec![m, k], vec![k, n]],
            &[a, b],
            &|t, l| {
                let p = t.matmul(l[0], l[1]).unwrap();
                t.mean(p).unwrap()
            },
            1e-7,
            &format!("matmul {m}x{k}x{n}"),
        );
    }
}

#[test]
fn conv2d_gradients_match_fd() {
    for (case, (stride, padding)) in [(1usize, 1usize), (1, 0), (2, 1), (2, 0)]
        .into_iter()
        .enumerate()
    {
        let mut r = rng::stream(32, DOMAIN_TEST, case as u64, 0);
        let input = rand_vec(&mut r, 2 * 2 * 5 * 5, -1.0, 1.0);
        let kernel = rand_vec(&mut r, 3 * 2 * 3 * 3, -1.0, 1.0);
        check_leaves(
            &[vec![2, 2, 5, 5], vec![3, 2, 3, 3]],
            &[input, kernel],
            &|t, l| {
                let c = t.conv2d(l[0], l[1], stride, padding).unwrap();
                t.mean(c).unwrap()
            },
            1e-6,
            &format!("conv2d stride {stride} pad {padding}"),
        );
    }
}

#[test]
fn relu_gradient_matches_fd_away_from_kink() {
    for case in 0..10u64 {
        let mut r = rng::stream(33, DOMAIN_TEST, case, 0);
        // Keep every activation at least 0.05 from zero so the central
        // difference never straddles the kink.
        let x: Vec<f64> = rand_vec(&mut r, 24, -2.0, 2.0)
            .into_iter()
            .map(|v| match v {
                v if v.abs() >= 0.05 => v,
                v if v >= 0.0 => v + 0.1,
                v => v - 0.1,
            })
            .collect();
        let y = rand_vec(&mut r, 24, -1.0, 1.0);
        check_leaves(
            &[vec![4, 6], vec![4, 6]],
            &[x, y],
            &|t, l| {
                let a = t.relu(l[0]);
                let p = t.mul(a, l[1]).unwrap();
                t.sum(p)
            },
            1e-7,
            "relu*y",
        );
    }
}

#[test]
fn log_softmax_gather_gradient_matches_fd() {
    for case in 0..20u64 {
        let mut r = rng::stream(34, DOMAIN_TEST, case, 0);
        let (n, k) = (r.gen_range(1..5), r.gen_range(2..6));
        let z = rand_vec(&mut r, n * k, -3.0, 3.0);
        let labels: Vec<usize> = (0..n).map(|_| r.gen_range(0..k)).collect();
        check_leaves(
            &[vec![n, k]],
            &[z],
            &|t, l| {
                let lp = t.log_softmax(l[0], 1).unwrap();
                let picked = t.gather_rows(lp, labels.clone()).unwrap();
                let s = t.sum(picked);
                t.scale(s, -1.0 / n as f64)
            },
            1e-7,
            &format!("nll {n}x{k}"),
        );
    }
}

#[test]
fn bias_add_gradient_matches_fd() {
    let mut r = rng::stream(35, DOMAIN_TEST, 0, 0);
    let x = rand_vec(&mut r, 3 * 4, -1.0, 1.0);
    let b = rand_vec(&mut r, 4, -1.0, 1.0);
    let w = rand_vec(&mut r, 3 * 4, -1.0, 1.0);
    check_leaves(
        &[vec![3, 4], vec![4], vec![3, 4]],
        &[x, b, w],
        &|t, l| {
            let z = t.bias_add(l[0], l[1], 1).unwrap();
            let p = t.mul(z, l[2]).unwrap();
            t.sum(p)
        },
        1e-7,
        "bias_add",
    );
}

#[test]
fn max_pool_gradient_matches_fd() {
    for case in 0..10u64 {
        // Resample until every pooling window has a clear maximum, so the
        // finite-difference step cannot change the argmax.
        let x = (0u64..)
            .map(|attempt| {
                let mut r = rng::stream(36, DOMAIN_TEST, case, attempt);
                rand_vec(&mut r, 2 * 4 * 4, 0.0, 1.0)
            })
            .find(|x| {
                x.chunks(16).all(|plane| {
                    (0..2).all(|py| {
                        (0..2).all(|px| {
                            let mut w: Vec<f64> = (0..2)
                                .flat_map(|dy| {
                                    (0..2).map(move |dx| plane[(py * 2 + dy) * 4 + px * 2 + dx])
                                })
                                .collect();
                            w.sort_by(|a, b| b.partial_cmp(a).unwrap());
                            w[0] - w[1] > 1e-3
                        })
                    })
                })
            })
            .unwrap();
        check_leaves(
            &[vec![1, 2, 4, 4]],
            &[x],
            &|t, l| {
                let p = t.max_pool2(l[0]).unwrap();
                t.sum(p)
            },
            1e-7,
            "max_pool2",
        );
    }
}

#[test]
fn arithmetic_composite_matches_fd() {
    let mut r = rng::stream(37, DOMAIN_TEST, 0, 0);
    let a = rand_vec(&mut r, 6, -2.0, 2.0);
    let b = rand_vec(&mut r, 6, -2.0, 2.0);
    let c = rand_vec(&mut r, 6, -2.0, 2.0);
    check_leaves(
        &[vec![6], vec![6], vec![6]],
        &[a, b, c],
        &|t, l| {
            // sum(0.5*(a-b)*c + (a+c))
            let d = t.sub(l[0], l[1]).unwrap();
            let p = t.mul(d, l[2]).unwrap();
            let p = t.scale(p, 0.5);
            let q = t.add(l[0], l[2]).unwrap();
            let s = t.add(p, q).unwrap();
            t.sum(s)
        },
        1e-8,
        "arithmetic",
    );
}

/// The full training objective through a real model: every parameter's
/// analytic gradient must match central differences. Covers both
/// architectures, all ablation modes, and both threshold policies.
#[test]
fn combined_loss_gradients_match_fd_for_random_models() {
    let mut checked_params = 0usize;
    for case in 0..20u64 {
        let mut r = rng::stream(38, DOMAIN_TEST, case, 0);
        let (spec, tol) = if case % 2 == 0 {
            (
                ModelSpec {
                    arch: Arch::Mlp { hidden: vec![r.gen_range(3..7)] },
                    in_channels: 1,
                    height: 4,
                    width: 4,
                    classes: r.gen_range(3..6),
                },
                1e-6,
            )
        } else {
            (
                ModelSpec {
                    arch: Arch::SmallConv { c1: r.gen_range(2..4), c2: r.gen_range(2..4) },
                    in_channels: 1,
                    height: 8,
                    width: 8,
                    classes: 3,
                },
                1e-5,
            )
        };
        let state = models::init::<f64>(&spec, 100 + case).unwrap();
        let names: Vec<String> = state.params.keys().cloned().collect();

        let b = 2usize;
        let ub = 3usize;
        let numel = spec.in_channels * spec.height * spec.width;
        let lab_images =
            Tensor::from_vec(vec![b, spec.in_channels, spec.height, spec.width],
                rand_vec(&mut r, b * numel, 0.0, 1.0)).unwrap();
        let unl_strong =
            Tensor::from_vec(vec![ub, spec.in_channels, spec.height, spec.width],
                rand_vec(&mut r, ub * numel, 0.0, 1.0)).unwrap();
        let unl_weak =
            Tensor::from_vec(vec![ub, spec.in_channels, spec.height, spec.width],
                rand_vec(&mut r, ub * numel, 0.0, 1.0)).unwrap();
        let labels: Vec<usize> = (0..b).map(|_| r.gen_range(0..spec.classes)).collect();

        let cfg = LossConfig {
            lambda_u: [1.0, 0.5, 2.0][case as usize % 3],
            temperature: [0.5, 1.0, 0.8][case as usize % 3],
            mode: [AblationMode::Both, AblationMode::HardOnly, AblationMode::SoftOnly]
                [case as usize % 3],
            kl_all_samples: case % 4 == 0,
        };
        // Mid confidence threshold so both branches usually appear.
        let mode = if case % 5 == 0 { ThresholdMode::Cpl } else { ThresholdMode::Fixed };
        let mut policy = ThresholdPolicy::new(mode, 0.5, spec.classes).unwrap();

        // Targets are generated once from the base parameters and held
        // fixed: they are constants of the objective.
        let weak_logits = models::forward_infer(&spec, &state.params, &unl_weak).unwrap();
        let weak_probs = ops::softmax(&weak_logits, 1).unwrap();
        let decisions = objective::select_branches(&weak_probs, &mut policy).unwrap();

        let loss_at = |params: &models::ParamMap<f64>| -> f64 {
            let mut tape = Tape::new();
            let taped = models::leaf_params(&mut tape, params);
            let sup = models::forward_train(&spec, &mut tape, &taped, &lab_images).unwrap();
            let strong = models::forward_train(&spec, &mut tape, &taped, &unl_strong).unwrap();
            let (nodes, _) = objective::build_loss(
                &mut tape, sup, &labels, strong, &weak_logits, &decisions, &cfg,
            )
            .unwrap();
            tape.value(nodes.total).item().unwrap()
        };

        // Analytic gradients from one recorded pass.
        let mut tape = Tape::new();
        let taped = models::leaf_params(&mut tape, &state.params);
        let sup = models::forward_train(&spec, &mut tape, &taped, &lab_images).unwrap();
        let strong = models::forward_train(&spec, &mut tape, &taped, &unl_strong).unwrap();
        let (nodes, _) = objective::build_loss(
            &mut tape, sup, &labels, strong, &weak_logits, &decisions, &cfg,
        )
        .unwrap();
        let grads = tape.backward(nodes.total).unwrap();

        for name in &names {
            let base = state.params[name].clone();
            let f = |x: &[f64]| -> f64 {
                let mut p = state.params.clone();
                p.insert(
                    name.clone(),
                    Tensor::from_vec(base.shape().to_vec(), x.to_vec()).unwrap(),
                );
                loss_at(&p)
            };
            let numeric = fd_grad(&f, base.data(), 1e-5);
            let analytic = grads.get_or_zeros(taped.id(name).unwrap());
            assert_close(
                analytic.data(),
                &numeric,
                tol,
                &format!("case {case} ({:?}) param {name}", spec.arch),
            );
            checked_params += analytic.data().len();
        }
    }
    assert!(checked_params > 1000, "checked {checked_params} parameter gradients");
}
