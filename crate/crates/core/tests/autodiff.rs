use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use toothrecon::autodiff::*;
use toothrecon::Error;

fn rand_tensor(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

fn t(shape: &[usize], data: &[f64]) -> Tensor {
    Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
}

fn check<F>(f: F, params: &[Tensor]) -> GradCheckReport
where
    F: Fn(&mut Tape, &[Var]) -> toothrecon::Result<Var>,
{
    let r = grad_check(f, params, &GradCheckOptions::default()).unwrap();
    assert!(r.max_rel_error <= 1e-6, "{r:?}");
    assert!(r.checked > 0);
    r
}

/// Reduces an arbitrary tensor to a scalar with non-uniform weights so that
/// every output element contributes a distinct gradient.
fn weighted_sum(tape: &mut Tape, x: Var) -> toothrecon::Result<Var> {
    let shape = tape.shape(x).to_vec();
    let w = tape.constant(Tensor::from_fn(&shape, |i| 0.3 + 0.17 * ((i * 7) % 11) as f64));
    let y = tape.mul(x, w)?;
    tape.sum(y)
}

#[test]
fn matmul_forward_matches_hand_product() {
    let mut tape = Tape::new();
    let a = tape.constant(t(&[2, 3], &[1., 2., 3., 4., 5., 6.]));
    let b = tape.constant(t(&[3, 2], &[7., 8., 9., 10., 11., 12.]));
    let c = tape.matmul(a, b).unwrap();
    assert_eq!(tape.value(c).data(), &[58., 64., 139., 154.]);
}

#[test]
fn grad_matmul_and_broadcast_add() {
    check(
        |tape, p| {
            let y = tape.matmul(p[0], p[1])?;
            let y = tape.add(y, p[2])?;
            weighted_sum(tape, y)
        },
        &[rand_tensor(&[3, 4], 1), rand_tensor(&[4, 5], 2), rand_tensor(&[5], 3)],
    );
}

#[test]
fn grad_mul_broadcast_and_self_product() {
    check(
        |tape, p| {
            let y = tape.mul(p[0], p[1])?;
            let z = tape.mul(y, y)?;
            weighted_sum(tape, z)
        },
        &[rand_tensor(&[2, 3, 4], 4), rand_tensor(&[3, 1], 5)],
    );
}

#[test]
fn grad_elementwise_ops() {
    check(
        |tape, p| {
            let s = tape.sigmoid(p[0])?;
            let l = tape.log(s)?;
            let q = tape.pow(s, 2.5)?;
            let c = tape.scale(q, -1.5)?;
            let c = tape.add_scalar(c, 0.25)?;
            let c = tape.sub(c, l)?;
            let r = tape.relu(p[0])?;
            let k = tape.clamp(p[0], -0.5, 0.5)?;
            let a = tape.add(c, r)?;
            let a = tape.add(a, k)?;
            weighted_sum(tape, a)
        },
        &[rand_tensor(&[4, 6], 6)],
    );
}

#[test]
fn grad_softmax_each_axis() {
    for axis in 0..3 {
        check(
            move |tape, p| {
                let s = tape.softmax(p[0], axis)?;
                weighted_sum(tape, s)
            },
            &[rand_tensor(&[3, 4, 2], 7 + axis as u64)],
        );
    }
}

#[test]
fn grad_reductions_concat_embedding() {
    check(
        |tape, p| {
            let c = tape.concat(&[p[0], p[1]], 1)?;
            let m = tape.reduce_max(c, 1)?;
            let s = tape.reduce_sum(c, 0)?;
            let e = tape.embedding(p[2], &[2, 0, 2, 1])?;
            let tr = tape.transpose(e)?;
            let r = tape.reshape(tr, &[12])?;
            let a = weighted_sum(tape, m)?;
            let b = weighted_sum(tape, s)?;
            let d = weighted_sum(tape, r)?;
            let ab = tape.add(a, b)?;
            tape.add(ab, d)
        },
        &[rand_tensor(&[3, 4], 8), rand_tensor(&[3, 2], 9), rand_tensor(&[3, 3], 10)],
    );
}

#[test]
fn grad_conv_pool_upconv_crop() {
    check(
        |tape, p| {
            let c = tape.conv2d_3x3_valid(p[0], p[1], p[2])?;
            let c = tape.relu(c)?;
            let m = tape.maxpool_2x2(c)?;
            let u = tape.upconv_2x2(m, p[3], p[4])?;
            let k = tape.crop2d(u, 1, 2, 3, 2)?;
            weighted_sum(tape, k)
        },
        &[
            rand_tensor(&[2, 6, 8], 11),
            rand_tensor(&[3, 2, 3, 3], 12),
            rand_tensor(&[3], 13),
            rand_tensor(&[3, 2, 2, 2], 14),
            rand_tensor(&[2], 15),
        ],
    );
}

#[test]
fn conv_matches_direct_sum() {
    let x = rand_tensor(&[2, 5, 6], 20);
    let w = rand_tensor(&[3, 2, 3, 3], 21);
    let b = rand_tensor(&[3], 22);
    let mut tape = Tape::new();
    let (xv, wv, bv) = (tape.constant(x.clone()), tape.constant(w.clone()), tape.constant(b.clone()));
    let y = tape.conv2d_3x3_valid(xv, wv, bv).unwrap();
    let out = tape.value(y);
    assert_eq!(out.shape(), &[3, 3, 4]);
    for co in 0..3 {
        for oy in 0..3 {
            for ox in 0..4 {
                let mut s = b.data()[co];
                for ci in 0..2 {
                    for ky in 0..3 {
                        for kx in 0..3 {
                            s += w.data()[((co * 2 + ci) * 3 + ky) * 3 + kx]
                                * x.data()[(ci * 5 + oy + ky) * 6 + ox + kx];
                        }
                    }
                }
                let got = out.data()[(co * 3 + oy) * 4 + ox];
                assert!((got - s).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn upconv_scatters_each_input_into_a_2x2_block() {
    let mut tape = Tape::new();
    let x = tape.constant(t(&[1, 1, 2], &[1.0, 2.0]));
    let w = tape.constant(t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]));
    let b = tape.constant(t(&[1], &[0.5]));
    let y = tape.upconv_2x2(x, w, b).unwrap();
    assert_eq!(tape.value(y).shape(), &[1, 2, 4]);
    assert_eq!(tape.value(y).data(), &[1.5, 2.5, 2.5, 4.5, 3.5, 4.5, 6.5, 8.5]);
}

#[test]
fn softmax_is_stable_for_large_logits() {
    let mut tape = Tape::new();
    let x = tape.constant(t(&[3], &[1000.0, 1000.0, -1000.0]));
    let s = tape.softmax(x, 0).unwrap();
    assert_eq!(tape.value(s).data(), &[0.5, 0.5, 0.0]);
}

#[test]
fn reduce_max_ties_pick_lowest_index() {
    let mut tape = Tape::new();
    let x = tape.param(t(&[3], &[2.0, 2.0, 1.0]));
    let m = tape.reduce_max(x, 0).unwrap();
    let g = tape.backward(m).unwrap();
    assert_eq!(g.get(x).data(), &[1.0, 0.0, 0.0]);
}

#[test]
fn unused_params_get_zero_gradients() {
    let mut tape = Tape::new();
    let x = tape.param(t(&[2], &[1.0, 2.0]));
    let unused = tape.param(t(&[3], &[1.0, 2.0, 3.0]));
    let l = tape.sum(x).unwrap();
    let g = tape.backward(l).unwrap();
    assert_eq!(g.get(unused).data(), &[0.0, 0.0, 0.0]);
}

#[test]
fn non_scalar_loss_is_rejected() {
    let mut tape = Tape::new();
    let x = tape.param(t(&[2], &[1.0, 2.0]));
    assert!(matches!(tape.backward(x), Err(Error::NonScalarLoss(s)) if s == vec![2]));
}

#[test]
fn non_finite_values_are_reported() {
    let mut tape = Tape::new();
    let x = tape.param(t(&[1], &[0.0]));
    let e = tape.log(x).unwrap_err();
    assert!(e.is_numeric());
    let big = tape.constant(t(&[1], &[1e300]));
    let e = tape.mul(big, big).unwrap_err();
    assert!(matches!(e, Error::NonFinite(_)));
}

#[test]
fn shape_mismatch_is_reported() {
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::zeros(&[2, 3]));
    let b = tape.constant(Tensor::zeros(&[2, 3]));
    assert!(matches!(tape.matmul(a, b), Err(Error::ShapeMismatch { op: "matmul", .. })));
    let c = tape.constant(Tensor::zeros(&[2]));
    assert!(matches!(tape.add(a, c), Err(Error::ShapeMismatch { op: "add", .. })));
}

#[test]
fn grad_check_detects_nondeterminism() {
    use std::cell::Cell;
    let counter = Cell::new(0.0);
    let r = grad_check(
        |tape, p| {
            counter.set(counter.get() + 1.0);
            let c = tape.constant(Tensor::scalar(counter.get()));
            let s = tape.sum(p[0])?;
            tape.mul(s, c)
        },
        &[t(&[1], &[1.0])],
        &GradCheckOptions::default(),
    );
    assert!(matches!(r, Err(Error::NonDeterministic)));
}

#[test]
fn grad_check_skips_relu_exactly_at_kink() {
    let r = grad_check(
        |tape, p| {
            let r = tape.relu(p[0])?;
            tape.sum(r)
        },
        &[t(&[2], &[0.0, 1.0])],
        &GradCheckOptions::default(),
    )
    .unwrap();
    assert_eq!(r.skipped, 1);
    assert_eq!(r.checked, 1);
    assert!(r.max_rel_error < 1e-9);
}

#[test]
fn grad_check_shrinks_step_near_a_kink() {
    // relu near its kink with a step that crosses it: the checker shrinks
    // the step until the branch is stable, so the estimate stays exact.
    let r = grad_check(
        |tape, p| {
            let r = tape.relu(p[0])?;
            tape.sum(r)
        },
        &[t(&[1], &[3e-6])],
        &GradCheckOptions::default(),
    )
    .unwrap();
    assert_eq!(r.checked, 1);
    assert!(r.max_rel_error < 1e-9);
}

#[test]
fn lr_schedule_step_decay() {
    let s = LrSchedule::default();
    assert_eq!(lr_at(0, &s), 1e-5);
    assert_eq!(lr_at(9, &s), 1e-5);
    assert_eq!(lr_at(10, &s), 1e-5 * 0.7);
    assert_eq!(lr_at(19, &s), 1e-5 * 0.7);
    assert_eq!(lr_at(20, &s), 1e-5 * 0.7 * 0.7);
    assert!((lr_at(10, &s) - 7e-6).abs() < 1e-20);
    assert!((lr_at(20, &s) - 4.9e-6).abs() < 1e-20);
}

#[test]
fn adam_first_step_moves_by_lr_times_sign() {
    let mut store = ParamStore::new();
    store.add("w", t(&[3], &[1.0, 1.0, 1.0]));
    let mut tape = Tape::new();
    let bound = store.bind(&mut tape);
    let g = tape.constant(t(&[3], &[2.0, -0.5, 0.0]));
    let y = tape.mul(bound.vars()[0], g).unwrap();
    let l = tape.sum(y).unwrap();
    let grads = tape.backward(l).unwrap();
    store.adam_step(&grads, &bound, 0.1, &AdamConfig::default()).unwrap();
    let v = store.params()[0].value.data();
    // m_hat = g, v_hat = g^2 after one step.
    let expect = |g: f64| 1.0 - 0.1 * g / (g.abs() + 1e-8);
    assert!((v[0] - expect(2.0)).abs() < 1e-15);
    assert!((v[1] - expect(-0.5)).abs() < 1e-15);
    assert_eq!(v[2], 1.0);
    assert_eq!(store.step(), 1);
}

#[test]
fn adam_minimizes_a_quadratic() {
    let mut store = ParamStore::new();
    store.add("x", t(&[2], &[3.0, -2.0]));
    for _ in 0..2000 {
        let mut tape = Tape::new();
        let b = store.bind(&mut tape);
        let sq = tape.mul(b.vars()[0], b.vars()[0]).unwrap();
        let l = tape.sum(sq).unwrap();
        let g = tape.backward(l).unwrap();
        store.adam_step(&g, &b, 0.05, &AdamConfig::default()).unwrap();
    }
    assert!(store.params()[0].value.max_abs() < 1e-2);
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sub/model.ckpt");
    let mut store = ParamStore::new();
    store.add("a", rand_tensor(&[2, 3], 30));
    store.add("b", rand_tensor(&[4], 31));
    store.params_mut()[1].m = rand_tensor(&[4], 32);
    store.set_step(17);
    save_checkpoint(&store, &path).unwrap();
    assert!(manifest_path(&path).exists());
    let loaded = load_checkpoint(&path).unwrap();
    assert_eq!(loaded, store);

    let mut fresh = ParamStore::new();
    fresh.add("a", Tensor::zeros(&[2, 3]));
    fresh.add("b", Tensor::zeros(&[4]));
    restore_into(&mut fresh, &loaded).unwrap();
    assert_eq!(fresh, store);

    let mut wrong = ParamStore::new();
    wrong.add("a", Tensor::zeros(&[3, 2]));
    wrong.add("b", Tensor::zeros(&[4]));
    assert!(restore_into(&mut wrong, &loaded).is_err());
}

#[test]
fn truncated_checkpoint_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let mut store = ParamStore::new();
    store.add("a", rand_tensor(&[5], 40));
    save_checkpoint(&store, &path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 8]).unwrap();
    assert!(matches!(load_checkpoint(&path), Err(Error::Format { .. })));
}
