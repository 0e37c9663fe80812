use fastmatch_tensor::{init, BatchNorm, Dense, Graph, Mode, ParamStore, ResidualUnit, Tensor};
use proptest::prelude::*;

fn eval_stack(store: &ParamStore, layers: &(Dense, ResidualUnit), x: Tensor) -> Vec<f64> {
    let mut g = Graph::inference(store);
    let v = g.constant(x).unwrap();
    let h = layers.0.forward(&mut g, v).unwrap();
    let h = g.relu(h).unwrap();
    let h = layers.1.forward(&mut g, h).unwrap();
    g.value(h).data().to_vec()
}

proptest! {
    #[test]
    fn eval_forward_is_batch_order_invariant(rows in prop::collection::vec(prop::collection::vec(-2.0f64..2.0, 3), 2..8), rot in 0usize..8) {
        let mut store = ParamStore::new();
        let mut rng = init::rng(5);
        let layers = (Dense::new(&mut store, "in", 3, 4, &mut rng), ResidualUnit::new(&mut store, "res", 4, 5, &mut rng));
        let n = rows.len();
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let out = eval_stack(&store, &layers, Tensor::matrix(n, 3, flat).unwrap());

        let k = rot % n;
        let mut rotated = rows.clone();
        rotated.rotate_left(k);
        let flat: Vec<f64> = rotated.iter().flatten().copied().collect();
        let out_rot = eval_stack(&store, &layers, Tensor::matrix(n, 3, flat).unwrap());
        for i in 0..n {
            let src = (i + k) % n;
            prop_assert_eq!(&out_rot[i * 4..(i + 1) * 4], &out[src * 4..(src + 1) * 4]);
        }
    }

    #[test]
    fn eval_batchnorm_is_affine(mean in -1.0f64..1.0, var in 0.1f64..3.0, gamma in -2.0f64..2.0, beta in -1.0f64..1.0,
                                xs in prop::collection::vec(-5.0f64..5.0, 1..10)) {
        let mut store = ParamStore::new();
        let bn = BatchNorm::new(&mut store, "bn", 1);
        store.get_mut(bn.running_mean).data_mut()[0] = mean;
        store.get_mut(bn.running_var).data_mut()[0] = var;
        store.get_mut(bn.gamma).data_mut()[0] = gamma;
        store.get_mut(bn.beta).data_mut()[0] = beta;
        let mut g = Graph::new(&mut store, Mode::Eval);
        let x = g.constant(Tensor::column(xs.clone())).unwrap();
        let y = bn.forward(&mut g, x).unwrap();
        let scale = gamma / (var + fastmatch_tensor::layers::BN_EPS).sqrt();
        for (yi, xi) in g.value(y).data().iter().zip(&xs) {
            prop_assert!((yi - (scale * (xi - mean) + beta)).abs() < 1e-12);
        }
        drop(g);
        // frozen statistics are untouched in eval mode
        prop_assert_eq!(store.get(bn.running_mean).data()[0], mean);
    }
}

#[test]
fn training_steps_are_bit_deterministic() {
    fn run() -> Vec<f64> {
        let mut store = ParamStore::new();
        let mut rng = init::rng(42);
        let d = Dense::new(&mut store, "d", 3, 2, &mut rng);
        let bn = BatchNorm::new(&mut store, "bn", 2);
        let mut opt = fastmatch_tensor::Sgd::new(0.05, 0.9);
        for step in 0..20 {
            let x: Vec<f64> = (0..12).map(|i| ((i * 7 + step) % 11) as f64 / 11.0 - 0.5).collect();
            let mut g = Graph::new(&mut store, Mode::Train);
            let xv = g.constant(Tensor::matrix(4, 3, x).unwrap()).unwrap();
            let h = d.forward(&mut g, xv).unwrap();
            let h = bn.forward(&mut g, h).unwrap();
            let p = g.sigmoid(h).unwrap();
            let loss = g.cross_entropy(p, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0, 0.0], &[1.0; 4], &[0.5, 0.5]).unwrap();
            g.backward(loss).unwrap();
            drop(g);
            opt.step(&mut store);
        }
        store.iter().flat_map(|(_, t)| t.data().to_vec()).collect()
    }
    let a = run();
    let b = run();
    assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
}
