//! Central finite-difference checks for every op the models use.

use fastmatch_tensor::{
    init, BatchNorm, Conv1dWords, Dense, EmbeddingSum, Graph, Mode, ParamStore, ResidualUnit, SparseVec, Tensor, Var,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-5;
const TOL: f64 = 1e-4;

type Build<'f> = dyn Fn(&mut Graph<'_>, &[Var]) -> fastmatch_tensor::Result<Var> + 'f;

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

fn eval_loss(store: &mut ParamStore, inputs: &[Tensor], mode: Mode, f: &Build<'_>) -> f64 {
    let mut g = Graph::new(store, mode);
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone()).unwrap()).collect();
    let loss = f(&mut g, &vars).unwrap();
    g.value(loss).data()[0]
}

/// Returns the worst relative error over every input coordinate and up to
/// `max_coords` coordinates of each trainable parameter.
fn check(store: &mut ParamStore, inputs: &[Tensor], mode: Mode, max_coords: usize, f: &Build<'_>) -> f64 {
    store.zero_grads();
    let (input_grads, mut param_grads) = {
        let mut g = Graph::new(store, mode);
        let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone()).unwrap()).collect();
        let loss = f(&mut g, &vars).unwrap();
        g.backward(loss).unwrap();
        let ig: Vec<Vec<f64>> =
            vars.iter().map(|v| g.grad(*v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; g.value(*v).len()])).collect();
        (ig, Vec::new())
    };
    for id in store.ids() {
        let t = store.get(id);
        param_grads.push(t.grad().map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.len()]));
    }

    let mut worst: f64 = 0.0;
    for (k, grads) in input_grads.iter().enumerate() {
        for (j, &analytic) in grads.iter().enumerate() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[j] += EPS;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[j] -= EPS;
            let num = (eval_loss(store, &plus, mode, f) - eval_loss(store, &minus, mode, f)) / (2.0 * EPS);
            worst = worst.max(rel_err(analytic, num));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for id in store.ids().collect::<Vec<_>>() {
        if !store.is_trainable(id) {
            continue;
        }
        let n = store.get(id).len();
        let coords: Vec<usize> = if n <= max_coords { (0..n).collect() } else { (0..max_coords).map(|_| rng.gen_range(0..n)).collect() };
        for j in coords {
            let orig = store.get(id).data()[j];
            store.get_mut(id).data_mut()[j] = orig + EPS;
            let lp = eval_loss(store, inputs, mode, f);
            store.get_mut(id).data_mut()[j] = orig - EPS;
            let lm = eval_loss(store, inputs, mode, f);
            store.get_mut(id).data_mut()[j] = orig;
            let num = (lp - lm) / (2.0 * EPS);
            worst = worst.max(rel_err(param_grads[id.index()][j], num));
        }
    }
    worst
}

fn random_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Projects an output onto fixed random weights so every coordinate matters.
fn probe(g: &mut Graph<'_>, y: Var, seed: u64) -> fastmatch_tensor::Result<Var> {
    let shape = g.value(y).shape().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = shape.iter().product();
    let r = g.constant(Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())?)?;
    let m = g.mul(y, r)?;
    g.sum(m)
}

fn random_words(n: usize, vocab: u32, rng: &mut impl Rng) -> Vec<SparseVec> {
    (0..n)
        .map(|_| {
            let k = rng.gen_range(1..4);
            SparseVec::from_pairs((0..k).map(|_| (rng.gen_range(0..vocab), rng.gen_range(1..3) as f64)).collect())
        })
        .collect()
}

#[test]
fn dense_gradients() {
    let mut rng = init::rng(1);
    let mut store = ParamStore::new();
    let layer = Dense::new(&mut store, "d", 4, 3, &mut rng);
    let x = random_matrix(5, 4, &mut rng);
    let err = check(&mut store, &[x], Mode::Train, 100, &|g, v| {
        let y = layer.forward(g, v[0])?;
        probe(g, y, 7)
    });
    assert!(err < TOL, "dense max rel err {err}");
}

#[test]
fn elementwise_activation_gradients() {
    let mut rng = init::rng(2);
    let x = random_matrix(4, 6, &mut rng);
    let mut store = ParamStore::new();
    for (name, act) in [("tanh", 0), ("relu", 1), ("sigmoid", 2)] {
        let err = check(&mut store, std::slice::from_ref(&x), Mode::Train, 0, &|g, v| {
            let y = match act {
                0 => g.tanh(v[0])?,
                1 => g.relu(v[0])?,
                _ => g.sigmoid(v[0])?,
            };
            probe(g, y, 3)
        });
        assert!(err < TOL, "{name} max rel err {err}");
    }
}

#[test]
fn conv_and_maxpool_gradients() {
    let mut rng = init::rng(3);
    let mut store = ParamStore::new();
    let conv = Conv1dWords::new(&mut store, "conv", 12, 5, &mut rng);
    let seqs = vec![random_words(4, 12, &mut rng), random_words(1, 12, &mut rng), random_words(6, 12, &mut rng)];
    let err = check(&mut store, &[], Mode::Train, 120, &|g, _| {
        let h = conv.forward(g, &seqs)?;
        let h = g.tanh(h)?;
        let p = g.max_pool_words(h)?;
        probe(g, p, 11)
    });
    assert!(err < TOL, "conv/maxpool max rel err {err}");
}

#[test]
fn maxpool_routes_gradient_from_downstream_dense() {
    let mut rng = init::rng(4);
    let mut store = ParamStore::new();
    let conv = Conv1dWords::new(&mut store, "conv", 9, 4, &mut rng);
    let dense = Dense::new(&mut store, "sem", 4, 3, &mut rng);
    let seqs = vec![random_words(5, 9, &mut rng), random_words(3, 9, &mut rng)];
    let err = check(&mut store, &[], Mode::Train, 80, &|g, _| {
        let h = conv.forward(g, &seqs)?;
        let p = g.max_pool_words(h)?;
        let s = dense.forward(g, p)?;
        let s = g.tanh(s)?;
        let n = g.l2_normalize(s)?;
        probe(g, n, 5)
    });
    assert!(err < TOL, "max rel err {err}");
}

#[test]
fn embedding_sum_gradients() {
    let mut rng = init::rng(5);
    let mut store = ParamStore::new();
    let emb = EmbeddingSum::new(&mut store, "emb", 10, 4, &mut rng);
    let bags = random_words(6, 10, &mut rng);
    let err = check(&mut store, &[], Mode::Train, 100, &|g, _| {
        let e = emb.forward(g, &bags)?;
        probe(g, e, 2)
    });
    assert!(err < TOL, "embedding max rel err {err}");
}

#[test]
fn batchnorm_gradients_train_and_eval() {
    let mut rng = init::rng(6);
    let mut store = ParamStore::new();
    let bn = BatchNorm::new(&mut store, "bn", 3);
    for (i, v) in store.get_mut(bn.gamma).data_mut().iter_mut().enumerate() {
        *v = 0.5 + i as f64;
    }
    let x = random_matrix(6, 3, &mut rng);
    let err = check(&mut store, std::slice::from_ref(&x), Mode::Train, 10, &|g, v| {
        let y = bn.forward(g, v[0])?;
        probe(g, y, 8)
    });
    assert!(err < TOL, "train-mode batchnorm max rel err {err}");

    store.get_mut(bn.running_mean).data_mut().copy_from_slice(&[0.1, -0.2, 0.3]);
    store.get_mut(bn.running_var).data_mut().copy_from_slice(&[0.5, 1.5, 2.0]);
    let err = check(&mut store, &[x], Mode::Eval, 10, &|g, v| {
        let y = bn.forward(g, v[0])?;
        probe(g, y, 8)
    });
    assert!(err < TOL, "eval-mode batchnorm max rel err {err}");
}

#[test]
fn residual_unit_gradients() {
    let mut rng = init::rng(7);
    let mut store = ParamStore::new();
    let unit = ResidualUnit::new(&mut store, "res", 4, 6, &mut rng);
    let x = random_matrix(5, 4, &mut rng);
    let err = check(&mut store, &[x], Mode::Train, 60, &|g, v| {
        let y = unit.forward(g, v[0])?;
        probe(g, y, 4)
    });
    assert!(err < TOL, "residual max rel err {err}");
}

#[test]
fn structural_op_gradients() {
    let mut rng = init::rng(8);
    let a = random_matrix(3, 4, &mut rng);
    let b = random_matrix(3, 4, &mut rng);
    let mut store = ParamStore::new();
    let err = check(&mut store, &[a, b], Mode::Train, 0, &|g, v| {
        let c = g.concat(&[v[0], v[1]])?;
        let m = g.mul(v[0], v[1])?;
        let na = g.l2_normalize(v[0])?;
        let nb = g.l2_normalize(v[1])?;
        let d = g.row_dot(na, nb)?;
        let d = g.affine(d, 0.5, 0.5)?;
        let l1 = probe(g, c, 1)?;
        let l2 = probe(g, m, 2)?;
        let l3 = probe(g, d, 3)?;
        let s = g.add(l1, l2)?;
        g.add(s, l3)
    });
    assert!(err < TOL, "structural ops max rel err {err}");
}

#[test]
fn loss_gradients() {
    let mut rng = init::rng(9);
    let logits = random_matrix(6, 3, &mut rng);
    let targets: Vec<f64> = (0..18).map(|i| (i % 2) as f64).collect();
    let sample_w: Vec<f64> = (0..6).map(|i| 0.5 + i as f64 * 0.1).collect();
    let task_w = [0.5, 0.25, 0.25];
    let mut store = ParamStore::new();
    let err = check(&mut store, std::slice::from_ref(&logits), Mode::Train, 0, &|g, v| {
        let p = g.sigmoid(v[0])?;
        g.cross_entropy(p, &targets, &sample_w, &task_w)
    });
    assert!(err < TOL, "cross-entropy max rel err {err}");

    let col = random_matrix(8, 1, &mut rng);
    let y: Vec<f64> = (0..8).map(|_| rng.gen_range(0.0..1.0)).collect();
    let w: Vec<f64> = (0..8).map(|i| if i == 3 { 0.0 } else { rng.gen_range(0.0..2.0) }).collect();
    let err = check(&mut store, &[col], Mode::Train, 0, &|g, v| {
        let p = g.sigmoid(v[0])?;
        g.weighted_mse(p, &y, &w)
    });
    assert!(err < TOL, "weighted mse max rel err {err}");
}
