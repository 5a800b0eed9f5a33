use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::gradcheck::check;
use super::nn::Mlp;
use super::*;

fn mat(rows: usize, cols: usize, data: &[f64]) -> Tensor<f64> {
    Tensor::new(&[rows, cols], data.to_vec()).unwrap()
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

#[test]
fn matmul_relu_normalize_hand_values() {
    let store = ParamStore::<f64>::new();
    let mut g = Graph::new(&store);
    let a = g.constant(mat(2, 2, &[1.0, 2.0, 3.0, 4.0]));
    let b = g.constant(mat(2, 1, &[1.0, 1.0]));
    let c = g.matmul(a, b).unwrap();
    assert_eq!(g.value(c).data(), &[3.0, 7.0]);

    let x = g.constant(mat(1, 2, &[-1.0, 2.0]));
    let r = g.relu(x);
    assert_eq!(g.value(r).data(), &[0.0, 2.0]);

    let v = g.constant(mat(1, 3, &[3.0, 4.0, 0.0]));
    let n = g.normalize(v);
    assert_eq!(g.value(n).data(), &[0.6, 0.8, 0.0]);
}

#[test]
fn shape_mismatch_names_both_shapes() {
    let store = ParamStore::<f64>::new();
    let mut g = Graph::new(&store);
    let a = g.constant(Tensor::zeros(&[2, 3]));
    let b = g.constant(Tensor::zeros(&[2, 3]));
    let err = g.matmul(a, b).unwrap_err().to_string();
    assert!(err.contains("[2, 3]"), "{err}");
    let c = g.constant(Tensor::zeros(&[3, 2]));
    assert!(g.add(a, c).is_err());
}

#[test]
fn square_gradient_is_two_x() {
    let store = ParamStore::<f64>::new();
    let mut g = Graph::new(&store);
    let x = g.leaf(Tensor::scalar(3.0), true);
    let y = g.square(x);
    let grads = g.backward(y).unwrap();
    assert_eq!(grads.leaf(x).unwrap(), &[6.0]);
}

#[test]
fn two_paths_to_one_leaf_accumulate() {
    let store = ParamStore::<f64>::new();
    let mut g = Graph::new(&store);
    let x = g.leaf(Tensor::scalar(2.0), true);
    let a = g.scale(x, 3.0);
    let b = g.square(x);
    let s = g.add(a, b).unwrap();
    let grads = g.backward(s).unwrap();
    assert_eq!(grads.leaf(x).unwrap(), &[3.0 + 4.0]);
}

#[test]
fn non_scalar_loss_and_empty_tape_rejected() {
    let store = ParamStore::<f64>::new();
    let mut g = Graph::new(&store);
    let x = g.leaf(Tensor::zeros(&[2, 2]), true);
    assert!(matches!(g.backward(x), Err(DiffError::NonScalarLoss(_))));
}

#[test]
fn unreachable_parameters_get_zero_gradient() {
    let mut store = ParamStore::<f64>::new();
    let used = store.add("used", Tensor::scalar(2.0));
    let unused = store.add("unused", Tensor::zeros(&[3]));
    let mut g = Graph::new(&store);
    let u = g.param(used);
    let l = g.square(u);
    let grads = g.backward(l).unwrap();
    assert_eq!(grads.param(used).data(), &[4.0]);
    assert_eq!(grads.param(unused).data(), &[0.0, 0.0, 0.0]);
}

#[test]
fn sum_sigmoid_wx_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut store = ParamStore::new();
    let w = store.add("w", random(&mut rng, &[4, 4]));
    let x = random(&mut rng, &[4, 1]);
    let res = check(&store, 1e-4, usize::MAX, |g| {
        let wv = g.param(w);
        let xv = g.constant(x.clone());
        let y = g.matmul(wv, xv)?;
        let s = g.sigmoid(y);
        Ok(g.sum(s))
    })
    .unwrap();
    assert_eq!(res.checked, 16);
    assert!(res.relative_error < 1e-4, "{res:?}");
}

#[test]
fn composite_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = ParamStore::new();
    let s = store.add("sigma", Tensor::new(&[7, 1], (0..7).map(|_| rng.gen_range(0.1..3.0)).collect()).unwrap());
    let c = store.add("color", Tensor::new(&[7, 3], (0..21).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap());
    let deltas: Vec<f64> = (0..7).map(|_| rng.gen_range(0.05..0.5)).collect();
    let target = random(&mut rng, &[2, 3]);
    let res = check(&store, 1e-5, usize::MAX, |g| {
        let (sv, cv) = (g.param(s), g.param(c));
        let layout = CompositeLayout { offsets: vec![0, 3, 7], deltas: deltas.clone(), background: [1.0, 0.5, 0.25] };
        let out = g.composite(sv, cv, layout)?;
        let t = g.constant(target.clone());
        let d = g.sub(out, t)?;
        let sq = g.square(d);
        Ok(g.mean(sq))
    })
    .unwrap();
    assert!(res.relative_error < 1e-4, "{res:?}");
}

#[test]
fn weighted_gather_gradient_is_the_tap_weight() {
    let mut store = ParamStore::new();
    let table = store.add("table", Tensor::<f64>::zeros(&[4, 2]));
    let mut g = Graph::new(&store);
    let t = g.param(table);
    let pattern = GatherPattern { rows: 1, groups: 1, taps: 2, indices: vec![1, 3], weights: vec![0.25, 0.75] };
    let y = g.weighted_gather(t, pattern).unwrap();
    let l = g.sum(y);
    let grads = g.backward(l).unwrap();
    assert_eq!(grads.param(table).data(), &[0.0, 0.0, 0.25, 0.25, 0.0, 0.0, 0.75, 0.75]);
}

#[test]
fn composite_conserves_weight_plus_transmittance() {
    let sigma = [0.0, 3.0, 100.0, 0.5];
    let color = [0.0; 12];
    let deltas = [0.1, 0.2, 0.01, 1.0];
    let r = composite_ray(&sigma, &color, &deltas, [1.0; 3]);
    let total: f64 = r.weights.iter().sum::<f64>() + r.transmittance;
    assert!((total - 1.0).abs() < 1e-12);
}

#[test]
fn adam_zero_gradient_keeps_parameters() {
    let mut store = ParamStore::<f64>::new();
    let p = store.add("p", Tensor::new(&[3], vec![1.0, -2.0, 0.5]).unwrap());
    let mut adam = AdamState::new(&store, AdamConfig { lr: 0.1, ..Default::default() });
    let grads = {
        let mut g = Graph::new(&store);
        let v = g.param(p);
        let z = g.scale(v, 0.0);
        let l = g.sum(z);
        g.backward(l).unwrap()
    };
    adam.step(&mut store, &grads).unwrap();
    assert_eq!(store.get(p).data(), &[1.0, -2.0, 0.5]);
}

fn linear_grads(store: &ParamStore<f64>, p: ParamId, slope: f64) -> Gradients<f64> {
    let mut g = Graph::new(store);
    let v = g.param(p);
    let l = g.scale(v, slope);
    let l = g.sum(l);
    g.backward(l).unwrap()
}

#[test]
fn adam_first_step_moves_by_learning_rate() {
    // m = 0.1, v = 0.01 after one step; bias correction gives m_hat = 1, v_hat = 1.
    let mut store = ParamStore::<f64>::new();
    let p = store.add("p", Tensor::scalar(0.0));
    let mut adam = AdamState::new(&store, AdamConfig { lr: 0.1, beta1: 0.9, beta2: 0.999, eps: 1e-8 });
    let grads = linear_grads(&store, p, 1.0);
    adam.step(&mut store, &grads).unwrap();
    assert!((store.get(p).item() + 0.1).abs() < 1e-6, "{}", store.get(p).item());
}

#[test]
fn adam_constant_gradient_moves_monotonically() {
    let mut store = ParamStore::<f64>::new();
    let p = store.add("p", Tensor::scalar(0.0));
    let mut adam = AdamState::new(&store, AdamConfig::default());
    let mut prev = 0.0;
    for _ in 0..50 {
        let grads = linear_grads(&store, p, -2.0);
        adam.step(&mut store, &grads).unwrap();
        let now = store.get(p).item();
        assert!(now > prev);
        prev = now;
    }
    assert_eq!(adam.step_count(), 50);
}

#[test]
fn adam_rejects_nan_gradient_by_name() {
    let mut store = ParamStore::<f64>::new();
    let p = store.add("layer.weight", Tensor::scalar(0.0));
    let mut adam = AdamState::new(&store, AdamConfig::default());
    let grads = linear_grads(&store, p, f64::NAN);
    let err = adam.step(&mut store, &grads).unwrap_err();
    assert!(err.to_string().contains("layer.weight"));
}

/// Every primitive in one network; used by the randomized gradient check.
fn kitchen_sink(g: &mut Graph<'_, f64>, mlp: &Mlp, table: ParamId, x: &Tensor<f64>, rows: &[usize]) -> Result<Var, DiffError> {
    let xv = g.constant(x.clone());
    let h = mlp.forward(g, xv)?;
    let s = g.sigmoid(h);
    let t = g.tanh(h);
    let e = g.scale(h, 0.3);
    let e = g.exp(e);
    let sp = g.softplus(h);
    let m = g.mul(s, t)?;
    let a = g.add(m, e)?;
    let a = g.sub(a, sp)?;
    let cat = g.concat(&[a, s])?;
    let n = g.normalize(cat);
    let norm = g.row_norm(h);
    let nm = g.mul_col(n, norm)?;
    let picked = g.gather(nm, rows)?;
    let head = g.slice_rows(picked, 0, 2)?;
    let cols = g.slice_cols(head, 1, 2)?;
    let tv = g.param(table);
    let pattern = GatherPattern {
        rows: 2,
        groups: 1,
        taps: 3,
        indices: vec![0, 2, 5, 1, 1, 4],
        weights: vec![0.2, 0.5, 0.3, 0.6, 0.1, 0.3],
    };
    let emb = g.weighted_gather(tv, pattern)?;
    let mix = g.mul(cols, emb)?;
    let rs = g.sum_cols(mix);
    let sq = g.square(rs);
    let s1 = g.mean(sq);
    let s2 = g.sum(norm);
    let s2 = g.shift(s2, 0.5);
    g.add(s1, s2)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn composed_network_gradients_match_finite_differences(seed in 0u64..10_000, hidden in 2usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let mlp = Mlp::new(&mut store, "mlp", &[3, hidden, 4], false, &mut rng);
        let table = store.add("table", random(&mut rng, &[6, 2]));
        let x = random(&mut rng, &[5, 3]);
        let rows = [4usize, 1, 1, 3];
        let res = check(&store, 1e-5, 64, |g| kitchen_sink(g, &mlp, table, &x, &rows)).unwrap();
        prop_assert!(res.relative_error < 1e-4, "{:?}", res);
    }
}

#[test]
fn identical_seeds_give_identical_trajectories() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut store = ParamStore::<f32>::new();
        let mlp = Mlp::new(&mut store, "m", &[2, 8, 1], false, &mut rng);
        let mut adam = AdamState::new(&store, AdamConfig::default());
        let x = Tensor::<f32>::new(&[4, 2], vec![0.1, 0.2, -0.3, 0.4, 0.5, -0.6, 0.7, 0.8]).unwrap();
        let mut losses = Vec::new();
        for _ in 0..20 {
            let grads = {
                let mut g = Graph::new(&store);
                let xv = g.constant(x.clone());
                let y = mlp.forward(&mut g, xv).unwrap();
                let sq = g.square(y);
                let l = g.mean(sq);
                losses.push(g.value(l).item());
                g.backward(l).unwrap()
            };
            adam.step(&mut store, &grads).unwrap();
        }
        losses
    };
    assert_eq!(run(), run());
}
