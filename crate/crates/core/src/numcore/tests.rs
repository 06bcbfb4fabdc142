use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn m(rows: usize, cols: usize, v: &[f64]) -> Tensor {
    Tensor::matrix(rows, cols, v.to_vec()).unwrap()
}

#[test]
fn matmul_identity() {
    let mut t = Tape::new();
    let i = t.constant(Tensor::identity(2));
    let a = t.constant(m(2, 2, &[1., 2., 3., 4.]));
    let c = t.matmul(i, a).unwrap();
    assert_eq!(t.value(c), &[1., 2., 3., 4.]);
}

#[test]
fn matmul_hand_arithmetic() {
    let mut t = Tape::new();
    let a = t.constant(m(2, 2, &[1., 2., 3., 4.]));
    let b = t.constant(m(2, 1, &[5., 6.]));
    let c = t.matmul(a, b).unwrap();
    assert_eq!(t.dims(c), (2, 1));
    assert_eq!(t.value(c), &[17., 39.]);
}

#[test]
fn matmul_zero_annihilates() {
    let mut t = Tape::new();
    let z = t.constant(Tensor::zeros(3, 2));
    let b = t.constant(m(2, 2, &[1.5, -2., 7., 0.25]));
    let c = t.matmul(z, b).unwrap();
    assert!(t.value(c).iter().all(|&v| v == 0.0));
}

#[test]
fn matmul_shape_error_reports_both_shapes() {
    let mut t = Tape::new();
    let a = t.constant(Tensor::zeros(2, 3));
    let b = t.constant(Tensor::zeros(2, 3));
    let err = t.matmul(a, b).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("[2, 3]") && msg.contains("[2, 3]"), "{msg}");
}

#[test]
fn tensor_rejects_non_finite_and_bad_length() {
    assert!(Tensor::new(vec![2], vec![1.0, f64::NAN]).is_err());
    assert!(Tensor::new(vec![2, 2], vec![1.0; 3]).is_err());
    assert!(Tensor::new(vec![1, 0], vec![]).is_err());
}

#[test]
fn backward_square() {
    let mut t = Tape::new();
    let x = t.leaf(Tensor::scalar(3.0).with_grad());
    let y = t.map(x, MapKind::Square).unwrap();
    t.backward(y).unwrap();
    assert_eq!(t.grad(x).unwrap(), &[6.0]);
}

#[test]
fn backward_sigmoid_sum_at_zero() {
    let mut t = Tape::new();
    let x = t.leaf(Tensor::zeros(1, 5).with_grad());
    let s = t.map(x, MapKind::Sigmoid).unwrap();
    let y = t.sum_all(s).unwrap();
    t.backward(y).unwrap();
    for g in t.grad(x).unwrap() {
        assert!((g - 0.25).abs() < 1e-15);
    }
}

#[test]
fn backward_rejects_non_scalar() {
    let mut t = Tape::new();
    let x = t.leaf(Tensor::zeros(2, 2).with_grad());
    assert!(matches!(t.backward(x), Err(NumError::NonScalarOutput(_))));
}

#[test]
fn detached_input_has_no_grad() {
    let mut t = Tape::new();
    let x = t.leaf(m(1, 2, &[1., 2.]).with_grad());
    let c = t.constant(m(1, 2, &[3., 4.]));
    let y = t.dot(x, c).unwrap();
    t.backward(y).unwrap();
    assert_eq!(t.grad(x).unwrap(), &[3., 4.]);
    assert!(t.grad(c).is_none());
}

// ---------------------------------------------------------------------------
// Finite-difference oracle. Each case builds a scalar function of its leaves
// from scratch, so perturbing an input re-runs the full forward pass.

type Build = fn(&mut Tape, &[Var]) -> Var;

fn eval(build: Build, inputs: &[Tensor]) -> f64 {
    let mut t = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| t.leaf(x.clone())).collect();
    let out = build(&mut t, &vars);
    t.scalar(out)
}

fn analytic(build: Build, inputs: &[Tensor]) -> Vec<Vec<f64>> {
    let mut t = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| t.leaf(x.clone().with_grad())).collect();
    let out = build(&mut t, &vars);
    t.backward(out).unwrap();
    vars.iter().map(|v| t.grad(*v).unwrap().to_vec()).collect()
}

fn central_difference(build: Build, inputs: &[Tensor], h: f64) -> Vec<Vec<f64>> {
    (0..inputs.len())
        .map(|k| {
            (0..inputs[k].numel())
                .map(|e| {
                    let mut plus = inputs.to_vec();
                    plus[k].values_mut()[e] += h;
                    let mut minus = inputs.to_vec();
                    minus[k].values_mut()[e] -= h;
                    (eval(build, &plus) - eval(build, &minus)) / (2.0 * h)
                })
                .collect()
        })
        .collect()
}

fn assert_fd(build: Build, inputs: &[Tensor]) {
    let a = analytic(build, inputs);
    let n = central_difference(build, inputs, 1e-5);
    for (k, (ga, gn)) in a.iter().zip(&n).enumerate() {
        for (e, (x, y)) in ga.iter().zip(gn).enumerate() {
            let rel = (x - y).abs() / x.abs().max(y.abs()).max(1e-6);
            assert!(rel < 1e-4, "input {k} elem {e}: analytic {x} fd {y} rel {rel}");
        }
    }
}

fn rand_t(rng: &mut ChaCha8Rng, r: usize, c: usize, lo: f64, hi: f64) -> Tensor {
    m(r, c, &(0..r * c).map(|_| rng.random_range(lo..hi)).collect::<Vec<_>>())
}

fn sum_sq(t: &mut Tape, x: Var) -> Var {
    let s = t.map(x, MapKind::Square).unwrap();
    t.sum_all(s).unwrap()
}

#[test]
fn fd_every_primitive() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let a34 = rand_t(&mut rng, 3, 4, -1.0, 1.0);
    let b42 = rand_t(&mut rng, 4, 2, -1.0, 1.0);
    let b34 = rand_t(&mut rng, 3, 4, -1.0, 1.0);
    let pos = rand_t(&mut rng, 3, 4, 0.2, 2.0);
    let row = rand_t(&mut rng, 1, 4, -1.0, 1.0);
    let b32 = rand_t(&mut rng, 3, 2, -1.0, 1.0);
    let b23 = rand_t(&mut rng, 2, 3, -1.0, 1.0);

    let cases: Vec<(&str, Build, Vec<Tensor>)> = vec![
        ("matmul", |t, v| { let c = t.matmul(v[0], v[1]).unwrap(); sum_sq(t, c) }, vec![a34.clone(), b42.clone()]),
        ("matmul_tn", |t, v| { let c = t.matmul_t(v[0], true, v[1], false).unwrap(); sum_sq(t, c) }, vec![a34.clone(), b34.clone()]),
        ("matmul_nt", |t, v| { let c = t.matmul_t(v[0], false, v[1], true).unwrap(); sum_sq(t, c) }, vec![a34.clone(), b34.clone()]),
        ("matmul_tt", |t, v| { let c = t.matmul_t(v[0], true, v[1], true).unwrap(); sum_sq(t, c) }, vec![a34.clone(), b23.clone()]),
        ("add", |t, v| { let c = t.add(v[0], v[1]).unwrap(); sum_sq(t, c) }, vec![a34.clone(), b34.clone()]),
        ("sub", |t, v| { let c = t.sub(v[0], v[1]).unwrap(); sum_sq(t, c) }, vec![a34.clone(), b34.clone()]),
        ("mul", |t, v| { let c = t.mul(v[0], v[1]).unwrap(); sum_sq(t, c) }, vec![a34.clone(), b34.clone()]),
        ("div", |t, v| { let c = t.div(v[0], v[1]).unwrap(); sum_sq(t, c) }, vec![a34.clone(), pos.clone()]),
        ("add_row", |t, v| { let c = t.add_row(v[0], v[1]).unwrap(); sum_sq(t, c) }, vec![a34.clone(), row.clone()]),
        ("concat", |t, v| { let c = t.concat(v[0], v[1]).unwrap(); let w = t.map(c, MapKind::Scale(1.7)).unwrap(); let q = t.map(w, MapKind::Sigmoid).unwrap(); sum_sq(t, q) }, vec![a34.clone(), b32.clone()]),
        ("relu", |t, v| { let c = t.relu(v[0]).unwrap(); sum_sq(t, c) }, vec![a34.clone()]),
        ("shift_clamp", |t, v| { let c = t.map(v[0], MapKind::Shift(0.3)).unwrap(); let d = t.map(c, MapKind::ClampMax(0.5)).unwrap(); sum_sq(t, d) }, vec![a34.clone()]),
        ("exp", |t, v| { let c = t.exp(v[0]).unwrap(); t.sum_all(c).unwrap() }, vec![a34.clone()]),
        ("mean_rows", |t, v| { let c = t.mean_rows(v[0]).unwrap(); sum_sq(t, c) }, vec![a34.clone()]),
        ("row_normalize", |t, v| { let c = t.row_normalize(v[0]).unwrap(); let d = t.mul(c, v[1]).unwrap(); t.sum_all(d).unwrap() }, vec![pos.clone(), b34.clone()]),
        ("col_normalize", |t, v| { let c = t.col_normalize(v[0]).unwrap(); let d = t.mul(c, v[1]).unwrap(); t.sum_all(d).unwrap() }, vec![pos.clone(), b34.clone()]),
        ("row_log_normalize", |t, v| { let c = t.row_log_normalize(v[0]).unwrap(); let e = t.exp(c).unwrap(); let d = t.mul(e, v[1]).unwrap(); t.sum_all(d).unwrap() }, vec![a34.clone(), b34.clone()]),
        ("col_log_normalize", |t, v| { let c = t.col_log_normalize(v[0]).unwrap(); let d = t.mul(c, v[1]).unwrap(); sum_sq(t, d) }, vec![a34.clone(), b34.clone()]),
        ("dot", |t, v| { let c = t.dot(v[0], v[1]).unwrap(); t.map(c, MapKind::Square).unwrap() }, vec![a34.clone(), b34.clone()]),
        ("norm", |t, v| t.norm(v[0]).unwrap(), vec![a34.clone()]),
        ("transpose", |t, v| { let c = t.transpose(v[0]).unwrap(); let d = t.matmul(c, v[1]).unwrap(); sum_sq(t, d) }, vec![a34.clone(), b32.clone()]),
        ("row_slice", |t, v| { let c = t.row_slice(v[0], 1, 2).unwrap(); let d = t.map(c, MapKind::Sigmoid).unwrap(); sum_sq(t, d) }, vec![a34.clone()]),
        ("vstack", |t, v| {
            let top = t.row_slice(v[0], 0, 1).unwrap();
            let c = t.vstack(&[v[1], top, v[0]]).unwrap();
            let d = t.map(c, MapKind::Sigmoid).unwrap();
            sum_sq(t, d)
        }, vec![a34.clone(), b34.clone()]),
        ("neighbor_sum", |t, v| {
            let adj = std::sync::Arc::new(vec![vec![1, 2], vec![0], vec![0]]);
            let c = t.neighbor_sum(v[0], adj).unwrap();
            let d = t.mul(c, v[1]).unwrap();
            sum_sq(t, d)
        }, vec![a34.clone(), b34.clone()]),
        ("cosine", |t, v| {
            let p = t.mean_rows(v[0]).unwrap();
            let q = t.mean_rows(v[1]).unwrap();
            let d = t.dot(p, q).unwrap();
            let np = t.norm(p).unwrap();
            let nq = t.norm(q).unwrap();
            let den = t.mul(np, nq).unwrap();
            t.div(d, den).unwrap()
        }, vec![a34.clone(), b34.clone()]),
    ];
    for (name, build, inputs) in cases {
        eprintln!("checking {name}");
        assert_fd(build, &inputs);
    }
}


#[test]
fn neighbor_sum_by_hand() {
    let mut t = Tape::new();
    let x = t.leaf(m(3, 2, &[1., 2., 10., 20., 100., 200.]).with_grad());
    let y = t.neighbor_sum(x, std::sync::Arc::new(vec![vec![1], vec![0, 2], vec![1]])).unwrap();
    assert_eq!(t.value(y), &[10., 20., 101., 202., 10., 20.]);
    assert!(t.neighbor_sum(x, std::sync::Arc::new(vec![vec![3], vec![], vec![]])).is_err());
    assert!(t.row_slice(x, 2, 2).is_err());
}

#[test]
fn fd_composite_mlp_with_sinkhorn() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = rand_t(&mut rng, 4, 3, -1.0, 1.0);
    let w1 = rand_t(&mut rng, 3, 5, -1.0, 1.0);
    let b1 = rand_t(&mut rng, 1, 5, -0.5, 0.5);
    let a = rand_t(&mut rng, 5, 5, -0.5, 0.5);
    let build: Build = |t, v| {
        let h = t.matmul(v[0], v[1]).unwrap();
        let h = t.add_row(h, v[2]).unwrap();
        let h = t.relu(h).unwrap();
        let ha = t.matmul(h, v[3]).unwrap();
        let logits = t.matmul_t(ha, false, h, true).unwrap();
        let k = t.exp(logits).unwrap();
        let mut s = k;
        for _ in 0..4 {
            s = t.row_normalize(s).unwrap();
            s = t.col_normalize(s).unwrap();
        }
        let agg = t.matmul(s, h).unwrap();
        let p = t.mean_rows(agg).unwrap();
        sum_sq(t, p)
    };
    assert_fd(build, &[x, w1, b1, a]);
}

#[test]
fn backward_is_linear() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x0 = rand_t(&mut rng, 2, 3, -1.0, 1.0);
    let (ca, cb) = (0.7, -1.3);
    let grad_of = |which: u8| {
        let mut t = Tape::new();
        let x = t.leaf(x0.clone().with_grad());
        let f = {
            let s = t.map(x, MapKind::Sigmoid).unwrap();
            t.sum_all(s).unwrap()
        };
        let g = {
            let s = t.map(x, MapKind::Square).unwrap();
            t.sum_all(s).unwrap()
        };
        let out = match which {
            0 => f,
            1 => g,
            _ => {
                let fa = t.map(f, MapKind::Scale(ca)).unwrap();
                let gb = t.map(g, MapKind::Scale(cb)).unwrap();
                t.add(fa, gb).unwrap()
            }
        };
        t.backward(out).unwrap();
        t.grad(x).unwrap().to_vec()
    };
    let (gf, gg, gc) = (grad_of(0), grad_of(1), grad_of(2));
    for i in 0..gf.len() {
        assert!((gc[i] - (ca * gf[i] + cb * gg[i])).abs() < 1e-12);
    }
}

#[test]
fn forward_and_backward_are_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let x = rand_t(&mut rng, 5, 4, -1.0, 1.0);
        let w = rand_t(&mut rng, 4, 4, -1.0, 1.0);
        let mut t = Tape::new();
        let xv = t.constant(x);
        let wv = t.leaf(w.with_grad());
        let h = t.matmul(xv, wv).unwrap();
        let e = t.exp(h).unwrap();
        let r = t.row_normalize(e).unwrap();
        let out = sum_sq(&mut t, r);
        t.backward(out).unwrap();
        (t.scalar(out).to_bits(), t.grad(wv).unwrap().iter().map(|v| v.to_bits()).collect::<Vec<_>>())
    };
    assert_eq!(run(), run());
}

#[test]
fn row_normalize_rejects_zero_row() {
    let mut t = Tape::new();
    let z = t.constant(m(2, 2, &[0., 0., 1., 1.]));
    assert!(t.row_normalize(z).is_err());
}

#[test]
fn log_normalize_matches_direct_normalize() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let k = rand_t(&mut rng, 3, 4, 0.1, 2.0);
    let logk = Tensor::matrix(3, 4, k.values().iter().map(|v| v.ln()).collect()).unwrap();
    let mut t = Tape::new();
    let (kv, lv) = (t.constant(k), t.constant(logk));
    let direct = [t.row_normalize(kv).unwrap(), t.col_normalize(kv).unwrap()];
    let logged = [t.row_log_normalize(lv).unwrap(), t.col_log_normalize(lv).unwrap()];
    for (d, l) in direct.iter().zip(&logged) {
        for (x, y) in t.value(*d).iter().zip(t.value(*l)) {
            assert!((x - y.exp()).abs() < 1e-12);
        }
    }
}

#[test]
fn log_normalize_survives_extreme_logits() {
    let mut t = Tape::new();
    let x = t.leaf(m(2, 2, &[-900., 0., 800., -800.]).with_grad());
    let r = t.row_log_normalize(x).unwrap();
    let e = t.exp(r).unwrap();
    let out = sum_sq(&mut t, e);
    t.backward(out).unwrap();
    assert!(t.value(r).iter().all(|v| v.is_finite()));
    assert!((t.value(e)[1] - 1.0).abs() < 1e-12 && (t.value(e)[2] - 1.0).abs() < 1e-12);
    assert!(t.grad(x).unwrap().iter().all(|v| v.is_finite()));
}

fn sample_checkpoint() -> Checkpoint {
    Checkpoint {
        header: CheckpointHeader {
            format_version: checkpoint::FORMAT_VERSION,
            layers: 2,
            cross_iterations: 1,
            d_intra: 4,
            d_cross: 4,
            input_dim: 3,
            meta: serde_json::json!({"note": "x"}),
        },
        tensors: vec![
            ("a".into(), m(2, 2, &[0.1, -0.0, 1e-300, 3.5])),
            ("s".into(), Tensor::scalar(std::f64::consts::PI)),
        ],
    }
}

#[test]
fn checkpoint_rejects_bad_magic() {
    let mut buf = Vec::new();
    sample_checkpoint().write_to(&mut buf).unwrap();
    buf[0] = b'X';
    assert!(Checkpoint::read_from(&mut buf.as_slice()).is_err());
}

proptest! {
    #[test]
    fn checkpoint_round_trip_is_bit_exact(values in proptest::collection::vec(-1e6f64..1e6, 1..24), cols in 1usize..4) {
        let rows = values.len() / cols;
        prop_assume!(rows > 0);
        let vals = values[..rows * cols].to_vec();
        let mut ck = sample_checkpoint();
        ck.tensors.push(("w".into(), m(rows, cols, &vals)));
        let mut buf = Vec::new();
        ck.write_to(&mut buf).unwrap();
        let back = Checkpoint::read_from(&mut buf.as_slice()).unwrap();
        prop_assert_eq!(&back, &ck);
        let mut buf2 = Vec::new();
        back.write_to(&mut buf2).unwrap();
        prop_assert_eq!(buf, buf2);
    }

    #[test]
    fn matmul_matches_naive(a in proptest::collection::vec(-3.0f64..3.0, 6), b in proptest::collection::vec(-3.0f64..3.0, 6)) {
        let mut t = Tape::new();
        let av = t.constant(m(2, 3, &a));
        let bv = t.constant(m(3, 2, &b));
        let c = t.matmul(av, bv).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let want: f64 = (0..3).map(|k| a[i * 3 + k] * b[k * 2 + j]).sum();
                prop_assert!((t.value(c)[i * 2 + j] - want).abs() < 1e-12);
            }
        }
    }
}
