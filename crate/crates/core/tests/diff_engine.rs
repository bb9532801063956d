use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wimp_core::diff::gradcheck::check_gradients;
use wimp_core::diff::{checkpoint, dropout_mask, AdamConfig, ParamId, ParameterStore, Tape, Tensor, Var};
use wimp_core::{Error, Result};

const EPS: f64 = 1e-5;
const PRIM_TOL: f64 = 1e-6;

fn rand_tensor(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor<f64> {
    Tensor::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
}

// values bounded away from zero so kinks (elu, |.|) are not straddled
fn rand_away(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor<f64> {
    Tensor::from_fn(r, c, |_, _| {
        let v: f64 = rng.random_range(0.1..1.0);
        if rng.random::<bool>() { v } else { -v }
    })
}

/// Projects an op output onto fixed random weights so every Jacobian entry matters.
fn project(tape: &mut Tape<f64>, out: Var, seed: u64) -> Result<Var> {
    let shape = tape.value(out).shape();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = tape.input(rand_tensor(&mut rng, shape[0], shape[1]));
    let m = tape.mul(out, w)?;
    Ok(tape.sum(m))
}

fn check(store: &ParameterStore<f64>, f: impl Fn(&mut Tape<f64>, &[Var]) -> Result<Var>) -> f64 {
    let ids: Vec<ParamId> = store.ids().collect();
    let res = check_gradients(store, EPS, 1e-6, |tape| {
        let vars: Vec<Var> = ids.iter().map(|&id| tape.param(id)).collect();
        let out = f(tape, &vars)?;
        project(tape, out, 99)
    })
    .unwrap();
    assert!(res.checked > 0);
    res.max_rel_error
}

fn store_of(tensors: Vec<Tensor<f64>>) -> ParameterStore<f64> {
    let mut s = ParameterStore::new();
    for (i, t) in tensors.into_iter().enumerate() {
        s.add(format!("p{i}"), t).unwrap();
    }
    s
}

#[test]
fn primitive_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut r = |a: usize, b: usize| rand_tensor(&mut rng, a, b);
    let cases: Vec<(&str, ParameterStore<f64>, Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>>)> = vec![
        ("matmul", store_of(vec![r(3, 4), r(4, 2)]), Box::new(|t, v| t.matmul(v[0], v[1]))),
        ("matmul_t", store_of(vec![r(3, 4), r(5, 4)]), Box::new(|t, v| t.matmul_t(v[0], v[1]))),
        ("add", store_of(vec![r(3, 4), r(3, 4)]), Box::new(|t, v| t.add(v[0], v[1]))),
        ("add_broadcast", store_of(vec![r(3, 4), r(1, 4)]), Box::new(|t, v| t.add(v[0], v[1]))),
        ("sub_broadcast", store_of(vec![r(3, 4), r(1, 4)]), Box::new(|t, v| t.sub(v[0], v[1]))),
        ("mul", store_of(vec![r(2, 5), r(2, 5)]), Box::new(|t, v| t.mul(v[0], v[1]))),
        ("scale", store_of(vec![r(2, 3)]), Box::new(|t, v| Ok(t.scale(v[0], -1.7)))),
        ("concat_rows", store_of(vec![r(2, 3), r(1, 3)]), Box::new(|t, v| t.concat(&[v[0], v[1]], 0))),
        ("concat_cols", store_of(vec![r(2, 3), r(2, 1)]), Box::new(|t, v| t.concat(&[v[0], v[1]], 1))),
        ("split", store_of(vec![r(3, 5)]), Box::new(|t, v| {
            let parts = t.split(v[0], 1, &[2, 3])?;
            let a = t.tanh(parts[0]);
            t.concat(&[parts[1], a], 1)
        })),
        ("slice_rows", store_of(vec![r(4, 3)]), Box::new(|t, v| t.slice(v[0], 0, 1, 2))),
        ("tanh", store_of(vec![r(3, 3)]), Box::new(|t, v| Ok(t.tanh(v[0])))),
        ("sigmoid", store_of(vec![r(3, 3)]), Box::new(|t, v| Ok(t.sigmoid(v[0])))),
        ("softmax_rows", store_of(vec![r(3, 4)]), Box::new(|t, v| t.softmax(v[0], 1))),
        ("softmax_cols", store_of(vec![r(3, 4)]), Box::new(|t, v| t.softmax(v[0], 0))),
        ("dot", store_of(vec![r(3, 4), r(3, 4)]), Box::new(|t, v| t.dot(v[0], v[1]))),
        ("sum", store_of(vec![r(3, 4)]), Box::new(|t, v| Ok(t.sum(v[0])))),
        ("mean", store_of(vec![r(3, 4)]), Box::new(|t, v| Ok(t.mean(v[0])))),
    ];
    for (name, store, f) in &cases {
        let err = check(store, f);
        assert!(err < PRIM_TOL, "{name}: relative error {err:e}");
    }

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let s = store_of(vec![rand_away(&mut rng, 3, 4)]);
    let err = check(&s, |t, v| Ok(t.elu(v[0])));
    assert!(err < PRIM_TOL, "elu: {err:e}");

    let a = rand_tensor(&mut rng, 3, 4);
    let gap = rand_away(&mut rng, 3, 4);
    let b = a.zip_map(&gap, |x, g| x + g);
    let err = check(&store_of(vec![a, b]), |t, v| t.l1_distance(v[0], v[1]));
    assert!(err < PRIM_TOL, "l1_distance: {err:e}");

    let mask = dropout_mask::<f64>(&mut rng, 3, 4, 0.4);
    let err = check(&store_of(vec![rand_tensor(&mut rng, 3, 4)]), |t, v| t.dropout(v[0], &mask, 0.4));
    assert!(err < PRIM_TOL, "dropout: {err:e}");
}

#[test]
fn lstm_cell_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (b, i, h) = (2, 3, 4);
    let store = store_of(vec![
        rand_tensor(&mut rng, b, i),
        rand_tensor(&mut rng, b, h),
        rand_tensor(&mut rng, b, h),
        rand_tensor(&mut rng, i, 4 * h),
        rand_tensor(&mut rng, h, 4 * h),
        rand_tensor(&mut rng, 1, 4 * h),
    ]);
    let err = check(&store, |t, v| t.lstm_cell(v[0], v[1], v[2], v[3], v[4], v[5]));
    assert!(err < PRIM_TOL, "lstm_cell: {err:e}");
    // chained through two steps, reusing weights
    let err = check(&store, |t, v| {
        let o = t.lstm_cell(v[0], v[1], v[2], v[3], v[4], v[5])?;
        let hc = t.split(o, 1, &[h, h])?;
        t.lstm_cell(v[0], hc[0], hc[1], v[3], v[4], v[5])
    });
    assert!(err < PRIM_TOL, "lstm_cell x2: {err:e}");
}

#[test]
fn lstm_cell_matches_reference_recurrence() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = rand_tensor(&mut rng, 1, 2);
    let h0 = rand_tensor(&mut rng, 1, 3);
    let c0 = rand_tensor(&mut rng, 1, 3);
    let wi = rand_tensor(&mut rng, 2, 12);
    let wh = rand_tensor(&mut rng, 3, 12);
    let bias = rand_tensor(&mut rng, 1, 12);
    let store = ParameterStore::<f64>::new();
    let mut tape = Tape::new(&store);
    let vs: Vec<Var> = [&x, &h0, &c0, &wi, &wh, &bias].iter().map(|t| tape.input((*t).clone())).collect();
    let out = tape.lstm_cell(vs[0], vs[1], vs[2], vs[3], vs[4], vs[5]).unwrap();
    let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
    for k in 0..3 {
        let z = |gate: usize| {
            let col = gate * 3 + k;
            bias.get(0, col)
                + (0..2).map(|j| x.get(0, j) * wi.get(j, col)).sum::<f64>()
                + (0..3).map(|j| h0.get(0, j) * wh.get(j, col)).sum::<f64>()
        };
        let c1 = sig(z(1)) * c0.get(0, k) + sig(z(0)) * z(2).tanh();
        let h1 = sig(z(3)) * c1.tanh();
        assert!((tape.value(out).get(0, k) - h1).abs() < 1e-14);
        assert!((tape.value(out).get(0, 3 + k) - c1).abs() < 1e-14);
    }
}

#[test]
fn basic_identities() {
    let store = ParameterStore::<f64>::new();
    let mut tape = Tape::new(&store);
    let l = tape.input(Tensor::row(vec![1.0, 1.0, 1.0]));
    let s = tape.softmax(l, 1).unwrap();
    for &v in tape.value(s).data() {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
    let a = tape.input(Tensor::from_fn(3, 3, |r, c| (r * 3 + c) as f64));
    let i = tape.input(Tensor::identity(3));
    let ai = tape.matmul(a, i).unwrap();
    assert_eq!(tape.value(ai), tape.value(a));
    let d = tape.dropout(a, &Tensor::zeros(3, 3), 0.0).unwrap();
    assert_eq!(d, a);
    let bad = tape.input(Tensor::zeros(2, 2));
    assert!(matches!(tape.matmul(a, bad), Err(Error::ShapeMismatch { op: "matmul", .. })));
    assert!(matches!(tape.backward(a), Err(Error::NonScalarLoss(_))));
}

#[test]
fn backward_reachability() {
    let mut store = ParameterStore::<f64>::new();
    let p = store.add("p", Tensor::from_fn(2, 3, |r, c| (r + c) as f64)).unwrap();
    let q = store.add("q", Tensor::zeros(4, 1)).unwrap();
    let mut tape = Tape::new(&store);
    let pv = tape.param(p);
    let loss = tape.sum(pv);
    let g = tape.backward(loss).unwrap();
    assert!(g.get(p).data().iter().all(|&v| v == 1.0));
    assert!(g.get(q).data().iter().all(|&v| v == 0.0));
}

#[test]
fn tape_replay_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let store = store_of(vec![rand_tensor(&mut rng, 4, 4), rand_tensor(&mut rng, 4, 4)]);
    let run = || {
        let mut tape = Tape::new(&store);
        let a = tape.param(ParamId::from_index(0));
        let b = tape.param(ParamId::from_index(1));
        let m = tape.matmul(a, b).unwrap();
        let s = tape.softmax(m, 1).unwrap();
        let mut r = ChaCha8Rng::seed_from_u64(1);
        let mask = dropout_mask(&mut r, 4, 4, 0.5);
        let d = tape.dropout(s, &mask, 0.5).unwrap();
        let t = tape.tanh(d);
        let loss = tape.sum(t);
        (tape.value(loss).clone(), tape.backward(loss).unwrap())
    };
    assert_eq!(run(), run());
}

#[test]
fn adam_behaviour() {
    let mut store = ParameterStore::<f64>::new();
    let p = store.add("p", Tensor::row(vec![1.0, -2.0])).unwrap();
    let cfg = AdamConfig::default();
    let before = store.clone();
    let zero = wimp_core::diff::Gradients::zeros_like(&store);
    store.adam_step(&zero, 0.1, &cfg).unwrap();
    assert_eq!(store.value(p), before.value(p));

    // norm-4 gradient under clip 1 equals the quarter-scaled gradient unclipped
    let mut g = wimp_core::diff::Gradients::zeros_like(&before);
    {
        let mut tape = Tape::new(&before);
        let v = tape.param(p);
        let w = tape.input(Tensor::row(vec![0.0, 4.0]));
        let m = tape.mul(v, w).unwrap();
        let l = tape.sum(m);
        g.add(&tape.backward(l).unwrap());
    }
    assert!((g.global_norm() - 4.0).abs() < 1e-12);
    let mut clipped = before.clone();
    let norm = clipped.adam_step(&g, 0.01, &cfg).unwrap();
    assert_eq!(norm, 4.0);
    let mut quarter = g.clone();
    quarter.scale(0.25);
    let mut manual = before.clone();
    manual
        .adam_step(&quarter, 0.01, &AdamConfig { clip_norm: None, ..cfg.clone() })
        .unwrap();
    assert_eq!(clipped, manual);
}

#[test]
fn adam_minimizes_quadratic() {
    // f(w) = (w - 3)^2, minimum at 3
    let mut store = ParameterStore::<f64>::new();
    let w = store.add("w", Tensor::scalar(-2.0)).unwrap();
    let cfg = AdamConfig::default();
    for _ in 0..200 {
        let g = {
            let mut tape = Tape::new(&store);
            let v = tape.param(w);
            let target = tape.input(Tensor::scalar(3.0));
            let d = tape.sub(v, target).unwrap();
            let sq = tape.mul(d, d).unwrap();
            tape.backward(sq).unwrap()
        };
        store.adam_step(&g, 0.1, &cfg).unwrap();
    }
    let v = store.value(w).item();
    assert!((v - 3.0).abs() < 0.05, "{v}");
}

#[test]
fn checkpoint_round_trip_is_byte_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut store = ParameterStore::<f64>::new();
    store.add("enc/w", rand_tensor(&mut rng, 3, 5)).unwrap();
    store.add("enc/b", rand_tensor(&mut rng, 1, 5)).unwrap();
    store.add("scalar", Tensor::scalar(f64::MIN_POSITIVE)).unwrap();
    let g = {
        let mut tape = Tape::new(&store);
        let v = tape.param(store.id("enc/w").unwrap());
        let t = tape.tanh(v);
        let l = tape.sum(t);
        tape.backward(l).unwrap()
    };
    store.adam_step(&g, 1e-3, &AdamConfig::default()).unwrap();
    let bytes = checkpoint::to_bytes(&store);
    assert_eq!(&bytes[..8], b"WIMPCKPT");
    let back = checkpoint::from_bytes::<f64>(&bytes).unwrap();
    assert_eq!(back, store);
    assert_eq!(checkpoint::to_bytes(&back), bytes);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    checkpoint::save(&store, &path).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), bytes);
    assert_eq!(checkpoint::load::<f64>(&path).unwrap(), store);

    assert!(checkpoint::from_bytes::<f64>(&bytes[..bytes.len() - 1]).is_err());
    assert!(checkpoint::from_bytes::<f64>(b"NOTACKPT").is_err());
}

#[test]
fn f32_tape_runs() {
    let mut store = ParameterStore::<f32>::new();
    let p = store.add("p", Tensor::row(vec![0.5f32, -0.5])).unwrap();
    let mut tape = Tape::new(&store);
    let v = tape.param(p);
    let s = tape.sigmoid(v);
    let l = tape.sum(s);
    let g = tape.backward(l).unwrap();
    assert!((g.get(p).data()[0] - 0.235_004_4).abs() < 1e-6);
}
