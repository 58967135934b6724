use diffcore::{grad_check, grad_check_with_floor, roundoff_floor, Axis, Tape, TapeError, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Tensor {
    Tensor::from_fn(rows, cols, |_, _| rng.gen_range(lo..hi))
}

#[test]
fn single_add() {
    let mut tape = Tape::new();
    let a = tape.input(Tensor::scalar(1.0));
    let b = tape.input(Tensor::scalar(2.0));
    let c = tape.add(a, b).unwrap();
    assert_eq!(tape.value(c).item(), 3.0);
}

#[test]
fn softmax_of_equal_logits_is_uniform() {
    let mut tape = Tape::new();
    let x = tape.input(Tensor::row_vector(vec![0.0; 3]));
    let y = tape.softmax(x).unwrap();
    for &p in tape.value(y).data() {
        assert!((p - 1.0 / 3.0).abs() < 1e-15);
    }
}

#[test]
fn log_undoes_exp() {
    let mut tape = Tape::new();
    let x = tape.input(Tensor::scalar(0.7));
    let e = tape.exp(x).unwrap();
    let l = tape.log(e).unwrap();
    assert!((tape.value(l).item() - 0.7).abs() < 1e-15);
}

#[test]
fn product_rule() {
    let mut tape = Tape::new();
    let x = tape.param(Tensor::scalar(2.0));
    let y = tape.param(Tensor::scalar(3.0));
    let loss = tape.mul(x, y).unwrap();
    let grads = tape.backward(loss).unwrap();
    assert_eq!(grads.get(x).unwrap().item(), 3.0);
    assert_eq!(grads.get(y).unwrap().item(), 2.0);
}

#[test]
fn tanh_slope_at_origin() {
    let mut tape = Tape::new();
    let x = tape.param(Tensor::scalar(0.0));
    let loss = tape.tanh(x).unwrap();
    let grads = tape.backward(loss).unwrap();
    assert_eq!(grads.get(x).unwrap().item(), 1.0);
}

#[test]
fn cross_entropy_gradient_vanishes_at_one_hot_target() {
    // Logits far apart give a distribution equal to the one-hot target in f64.
    let mut tape = Tape::new();
    let logits = tape.param(Tensor::row_vector(vec![800.0, 0.0, 0.0]));
    let probs = tape.softmax(logits).unwrap();
    let picked = tape.gather_elements(probs, &[(0, 0)]).unwrap();
    let logp = tape.log_clamped(picked, 1e-12).unwrap();
    let nll = tape.scale(logp, -1.0).unwrap();
    let loss = tape.sum(nll).unwrap();
    assert_eq!(tape.value(loss).item(), 0.0);
    let grads = tape.backward(loss).unwrap();
    assert!(grads.get(logits).unwrap().data().iter().all(|&g| g == 0.0));
}

#[test]
fn non_scalar_loss_is_rejected() {
    let mut tape = Tape::new();
    let x = tape.param(Tensor::row_vector(vec![1.0, 2.0]));
    let y = tape.tanh(x).unwrap();
    assert_eq!(
        tape.backward(y).err(),
        Some(TapeError::NonScalarLoss { rows: 1, cols: 2 })
    );
}

#[test]
fn shape_mismatch_names_the_op_index() {
    let mut tape = Tape::new();
    let a = tape.input(Tensor::zeros(2, 3));
    let b = tape.input(Tensor::zeros(3, 2));
    let _ok = tape.matmul(a, b).unwrap();
    match tape.add(a, b) {
        Err(TapeError::Shape { index, op, .. }) => {
            assert_eq!(index, 3);
            assert_eq!(op, "add");
        }
        other => panic!("expected shape error, got {other:?}"),
    }
    assert!(matches!(tape.matmul(a, a), Err(TapeError::Shape { op: "matmul", .. })));
}

#[test]
fn forward_rejects_input_with_wrong_shape() {
    let mut tape = Tape::new();
    let a = tape.input(Tensor::zeros(2, 2));
    let s = tape.sum(a).unwrap();
    assert!(tape.forward(&[(a, Tensor::zeros(1, 2))]).is_err());
    assert!(matches!(
        tape.forward(&[(s, Tensor::scalar(0.0))]),
        Err(TapeError::NotALeaf { .. })
    ));
}

#[test]
fn forward_replay_is_bit_identical() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let w = random_tensor(&mut rng, 4, 3, -1.0, 1.0);
    let x = random_tensor(&mut rng, 2, 4, -1.0, 1.0);
    let mut tape = Tape::new();
    let wv = tape.param(w.clone());
    let xv = tape.input(x.clone());
    let h = tape.matmul(xv, wv).unwrap();
    let t = tape.tanh(h).unwrap();
    let p = tape.softmax(t).unwrap();
    let loss = tape.sum(p).unwrap();
    let first = tape.value(p).clone();
    let first_loss = tape.value(loss).item();
    tape.forward(&[(wv, w), (xv, x)]).unwrap();
    assert_eq!(tape.value(p), &first);
    assert_eq!(tape.value(loss).item().to_bits(), first_loss.to_bits());
}

#[test]
fn sum_of_squares_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let point = vec![random_tensor(&mut rng, 3, 4, -2.0, 2.0)];
    let report = grad_check(
        |tape, p| {
            let sq = tape.mul(p[0], p[0])?;
            tape.sum(sq)
        },
        &point,
        1e-5,
    )
    .unwrap();
    assert!(report.max_relative_error <= 1e-6, "{report:?}");
    assert_eq!(report.coordinates, 12);
}

#[test]
fn constant_loss_has_zero_error() {
    let point = vec![Tensor::row_vector(vec![0.3, -0.2])];
    let report = grad_check(
        |tape, _| {
            let c = tape.input(Tensor::scalar(4.0));
            tape.sum(c)
        },
        &point,
        1e-5,
    )
    .unwrap();
    assert_eq!(report.max_relative_error, 0.0);
}

type Builder = fn(&mut Tape, &[Var], &[Tensor]) -> Result<Var, TapeError>;

/// Reduces an op output to a scalar through a fixed random weighting so every output
/// element contributes a distinct gradient.
fn weighted_sum(tape: &mut Tape, out: Var, weights: &Tensor) -> Result<Var, TapeError> {
    let w = tape.input(weights.clone());
    let prod = tape.mul(out, w)?;
    tape.sum(prod)
}

fn check_op(name: &str, shapes: &[(usize, usize)], out_shape: (usize, usize), range: (f64, f64), build: Builder) {
    let mut rng = ChaCha8Rng::seed_from_u64(name.len() as u64 * 7919);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let point: Vec<Tensor> = shapes
            .iter()
            .map(|&(r, c)| random_tensor(&mut rng, r, c, range.0, range.1))
            .collect();
        let weights = vec![random_tensor(&mut rng, out_shape.0, out_shape.1, -1.0, 1.0)];
        let report = grad_check(
            |tape, vars| {
                let out = build(tape, vars, &weights)?;
                weighted_sum(tape, out, &weights[0])
            },
            &point,
            1e-5,
        )
        .unwrap();
        worst = worst.max(report.max_relative_error);
    }
    assert!(worst <= 1e-6, "{name}: max relative error {worst:e}");
}

#[test]
fn every_primitive_passes_grad_check() {
    check_op("add", &[(2, 3), (2, 3)], (2, 3), (-2.0, 2.0), |t, v, _| t.add(v[0], v[1]));
    check_op("mul", &[(2, 3), (2, 3)], (2, 3), (-2.0, 2.0), |t, v, _| t.mul(v[0], v[1]));
    check_op("matmul", &[(2, 3), (3, 4)], (2, 4), (-2.0, 2.0), |t, v, _| t.matmul(v[0], v[1]));
    check_op("concat_rows", &[(1, 3), (2, 3)], (3, 3), (-2.0, 2.0), |t, v, _| {
        t.concat(&[v[0], v[1]], Axis::Rows)
    });
    check_op("concat_cols", &[(2, 1), (2, 3)], (2, 4), (-2.0, 2.0), |t, v, _| {
        t.concat(&[v[0], v[1]], Axis::Cols)
    });
    check_op("slice_cols", &[(3, 5)], (3, 2), (-2.0, 2.0), |t, v, _| t.slice_cols(v[0], 1, 3));
    check_op("tanh", &[(2, 3)], (2, 3), (-2.0, 2.0), |t, v, _| t.tanh(v[0]));
    check_op("sigmoid", &[(2, 3)], (2, 3), (-3.0, 3.0), |t, v, _| t.sigmoid(v[0]));
    check_op("exp", &[(2, 3)], (2, 3), (-2.0, 2.0), |t, v, _| t.exp(v[0]));
    check_op("log", &[(2, 3)], (2, 3), (0.2, 3.0), |t, v, _| t.log(v[0]));
    check_op("softmax", &[(3, 4)], (3, 4), (-2.0, 2.0), |t, v, _| t.softmax(v[0]));
    check_op("gather_rows", &[(3, 2)], (4, 2), (-2.0, 2.0), |t, v, _| {
        t.gather_rows(v[0], &[2, 0, 2, 1])
    });
    check_op("gather_elements", &[(3, 2)], (3, 1), (-2.0, 2.0), |t, v, _| {
        t.gather_elements(v[0], &[(0, 1), (2, 0), (0, 1)])
    });
    check_op("expand_rows", &[(1, 3)], (4, 3), (-2.0, 2.0), |t, v, _| t.expand_rows(v[0], 4));
    check_op("sum", &[(2, 3)], (1, 1), (-2.0, 2.0), |t, v, _| t.sum(v[0]));
    check_op("scale", &[(2, 3)], (2, 3), (-2.0, 2.0), |t, v, _| t.scale(v[0], -1.7));
    check_op("smooth_l1", &[(2, 3)], (2, 3), (-3.0, 3.0), |t, v, _| t.smooth_l1(v[0]));
}

#[test]
fn smooth_l1_values() {
    let mut tape = Tape::new();
    let x = tape.input(Tensor::row_vector(vec![0.0, 0.5, 2.0, -2.0, 1.0]));
    let y = tape.smooth_l1(x).unwrap();
    assert_eq!(tape.value(y).data(), &[0.0, 0.125, 1.5, 1.5, 0.5]);
}

#[test]
fn roundoff_floor_scales_with_the_loss() {
    let a = roundoff_floor(50.0, 1e-5, 1e-4);
    assert!((a - 10.0 * f64::EPSILON * 50.0 / 1e-5 / 1e-4).abs() < 1e-18);
    assert_eq!(roundoff_floor(0.0, 1e-5, 1e-4), 1e-8);
}

#[test]
fn floored_check_matches_plain_check_above_the_floor() {
    let point = [Tensor::from_vec(1, 3, vec![0.3, -1.2, 2.0])];
    let f = |t: &mut Tape, v: &[Var]| {
        let y = t.tanh(v[0])?;
        t.sum(y)
    };
    let plain = grad_check(f, &point, 1e-5).unwrap();
    let floored = grad_check_with_floor(f, &point, 1e-5, |_| 1e-8).unwrap();
    assert_eq!(plain, floored);
    assert!(plain.max_relative_error < 1e-8);
}
