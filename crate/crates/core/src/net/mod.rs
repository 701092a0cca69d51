//! Differentiable substrate: a reverse-mode tape over 2-D arrays, parameter
//! storage, MLP and LSTM layers, and the Adam optimiser.

mod layers;
mod optim;
mod params;
mod tape;

pub use layers::{Activation, Lstm, LstmSpec, Mlp, MlpSpec};
pub use optim::{Adam, AdamConfig};
pub use params::{Init, ParamId, ParamMeta, ParamStore, ParamTensor};
pub use tape::{Tape, Var};

/// Largest relative deviation between the tape gradient of `loss` and a central
/// finite difference with step `eps`, over every scalar of every parameter.
/// Entries where both gradients are below `floor` in magnitude are compared
/// against `floor` instead.
pub fn gradient_check(
    store: &mut ParamStore,
    eps: f64,
    floor: f64,
    loss: impl Fn(&mut Tape, &ParamStore) -> Var,
) -> crate::Result<f64> {
    store.zero_grad();
    let mut tape = Tape::new();
    let out = loss(&mut tape, store);
    tape.backward(out, store)?;
    let analytic: Vec<_> = store.tensors().iter().map(|t| t.grad.clone()).collect();
    store.zero_grad();
    let eval = |store: &ParamStore| {
        let mut tape = Tape::new();
        let out = loss(&mut tape, store);
        tape.scalar(out)
    };
    let mut worst = 0.0f64;
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let len = store.values(id).len();
        for k in 0..len {
            let orig = store.values(id).as_slice().expect("contiguous")[k];
            store.values_mut(id).as_slice_mut().expect("contiguous")[k] = orig + eps;
            let up = eval(store);
            store.values_mut(id).as_slice_mut().expect("contiguous")[k] = orig - eps;
            let down = eval(store);
            store.values_mut(id).as_slice_mut().expect("contiguous")[k] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let a = analytic[id.0].as_slice().expect("contiguous")[k];
            let denom = a.abs().max(numeric.abs()).max(floor);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    fn random_input(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        use rand::Rng;
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_simple_fn((rows, cols), || r.random_range(-1.0..1.0))
    }

    #[test]
    fn sum_of_params_has_unit_gradient() {
        let mut store = ParamStore::new();
        let p = store.add("p", 2, 3, Init::Xavier, &mut rng());
        let mut tape = Tape::new();
        let v = tape.param(&store, p);
        let s = tape.sum(v);
        tape.backward(s, &mut store).unwrap();
        assert!(store.grad(p).iter().all(|&g| g == 1.0));
    }

    #[test]
    fn backward_without_forward_is_a_state_error() {
        let mut store = ParamStore::new();
        let mut other = Tape::new();
        let v = other.constant(Array2::zeros((1, 1)));
        let empty = Tape::new();
        assert!(matches!(empty.backward(v, &mut store), Err(crate::Error::State(_))));
    }

    #[test]
    fn shared_param_gradients_accumulate() {
        let mut store = ParamStore::new();
        let p = store.add("p", 1, 1, Init::Constant(3.0), &mut rng());
        let mut tape = Tape::new();
        let a = tape.param(&store, p);
        let b = tape.param(&store, p);
        let m = tape.mul(a, b);
        tape.backward(m, &mut store).unwrap();
        assert_eq!(store.grad(p)[[0, 0]], 6.0);
    }

    #[test]
    fn zero_mlp_outputs_zero() {
        let mut store = ParamStore::new();
        let mlp = Mlp::new(&mut store, "m", MlpSpec::new(4, 8, 3, 2), &mut rng()).unwrap();
        for id in mlp.param_ids() {
            store.values_mut(id).fill(0.0);
        }
        let mut tape = Tape::new();
        let x = tape.constant(random_input(5, 4, 1));
        let y = mlp.forward(&mut tape, &store, x).unwrap();
        assert!(tape.value(y).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn relu_identity_mlp() {
        let mut store = ParamStore::new();
        let mlp = Mlp::new(&mut store, "m", MlpSpec::new(1, 1, 1, 1), &mut rng()).unwrap();
        let ids = mlp.param_ids();
        store.values_mut(ids[0]).fill(1.0);
        store.values_mut(ids[2]).fill(1.0);
        let mut tape = Tape::new();
        let x = tape.constant(array![[2.0], [-3.0]]);
        let y = mlp.forward(&mut tape, &store, x).unwrap();
        assert_eq!(tape.value(y), &array![[2.0], [0.0]]);
    }

    #[test]
    fn mlp_matches_hand_evaluation() {
        let mut store = ParamStore::new();
        let mlp = Mlp::new(&mut store, "m", MlpSpec::new(3, 4, 2, 1), &mut rng()).unwrap();
        let ids = mlp.param_ids();
        let x = random_input(2, 3, 3);
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let y = mlp.forward(&mut tape, &store, xv).unwrap();
        let (w0, b0, w1, b1) = (
            store.values(ids[0]),
            store.values(ids[1]),
            store.values(ids[2]),
            store.values(ids[3]),
        );
        for r in 0..2 {
            for o in 0..2 {
                let mut acc = b1[[0, o]];
                for h in 0..4 {
                    let mut z = b0[[0, h]];
                    for i in 0..3 {
                        z += x[[r, i]] * w0[[i, h]];
                    }
                    acc += z.max(0.0) * w1[[h, o]];
                }
                assert!((tape.value(y)[[r, o]] - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn mlp_width_mismatch() {
        let mut store = ParamStore::new();
        let mlp = Mlp::new(&mut store, "m", MlpSpec::new(3, 4, 2, 1), &mut rng()).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(Array2::zeros((1, 5)));
        assert!(matches!(mlp.forward(&mut tape, &store, x), Err(crate::Error::Shape(_))));
    }

    #[test]
    fn mlp_gradient_check() {
        let mut store = ParamStore::new();
        let spec = MlpSpec::new(3, 6, 2, 2).with_layer_norm();
        let mlp = Mlp::new(&mut store, "m", spec, &mut rng()).unwrap();
        let x = random_input(4, 3, 11);
        let err = gradient_check(&mut store, 1e-5, 1e-6, |tape, store| {
            let xv = tape.constant(x.clone());
            let y = mlp.forward(tape, store, xv).unwrap();
            let k = tape.constant(random_input(4, 2, 12));
            let y = tape.mul(y, k);
            tape.sum_squares(y)
        })
        .unwrap();
        assert!(err < 1e-4, "relative error {err}");
    }

    #[test]
    fn lstm_zero_weights() {
        let mut store = ParamStore::new();
        let spec = LstmSpec { input_width: 3, state_width: 4 };
        let lstm = Lstm::new(&mut store, "l", spec, &mut rng()).unwrap();
        for id in [lstm.w_x, lstm.w_h, lstm.bias] {
            store.values_mut(id).fill(0.0);
        }
        let mut tape = Tape::new();
        let x = tape.constant(random_input(2, 3, 1));
        let h = tape.constant(Array2::zeros((2, 4)));
        let c = tape.constant(Array2::zeros((2, 4)));
        let (h1, c1) = lstm.step(&mut tape, &store, x, h, c).unwrap();
        assert!(tape.value(h1).iter().all(|&v| v == 0.0));
        assert!(tape.value(c1).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn lstm_saturated_gates_keep_memory() {
        let mut store = ParamStore::new();
        let spec = LstmSpec { input_width: 3, state_width: 4 };
        let lstm = Lstm::new(&mut store, "l", spec, &mut rng()).unwrap();
        for id in [lstm.w_x, lstm.w_h] {
            store.values_mut(id).fill(0.0);
        }
        let b = store.values_mut(lstm.bias);
        b.fill(0.0);
        for j in 0..4 {
            b[[0, j]] = -50.0;
            b[[0, 4 + j]] = 50.0;
        }
        let c0 = random_input(2, 4, 5);
        let mut tape = Tape::new();
        let x = tape.constant(random_input(2, 3, 1));
        let h = tape.constant(random_input(2, 4, 2));
        let c = tape.constant(c0.clone());
        let (_, c1) = lstm.step(&mut tape, &store, x, h, c).unwrap();
        for (a, b) in tape.value(c1).iter().zip(&c0) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn lstm_unrolled_gradient_check() {
        let mut store = ParamStore::new();
        let spec = LstmSpec { input_width: 3, state_width: 4 };
        let lstm = Lstm::new(&mut store, "l", spec, &mut rng()).unwrap();
        {
            use rand::Rng;
            let mut r = ChaCha8Rng::seed_from_u64(99);
            store.values_mut(lstm.bias).mapv_inplace(|_| r.random_range(-0.5..0.5));
        }
        let xs: Vec<_> = (0..3).map(|k| random_input(2, 3, 20 + k)).collect();
        let err = gradient_check(&mut store, 1e-5, 1e-6, |tape, store| {
            let mut h = tape.constant(Array2::zeros((2, 4)));
            let mut c = tape.constant(Array2::zeros((2, 4)));
            let mut total = None;
            for x in &xs {
                let xv = tape.constant(x.clone());
                (h, c) = lstm.step(tape, store, xv, h, c).unwrap();
                let s = tape.sum_squares(h);
                total = Some(match total {
                    None => s,
                    Some(t) => tape.add(t, s),
                });
            }
            total.unwrap()
        })
        .unwrap();
        assert!(err < 1e-4, "relative error {err}");
    }

    #[test]
    fn tape_ops_gradient_check() {
        let mut store = ParamStore::new();
        let a = store.add("a", 4, 3, Init::Xavier, &mut rng());
        let b = store.add("b", 4, 3, Init::Xavier, &mut rng());
        let err = gradient_check(&mut store, 1e-5, 1e-6, |tape, store| {
            let av = tape.param(store, a);
            let bv = tape.param(store, b);
            let g = tape.gather_rows(av, &[3, 0, 0, 2, 1]);
            let sc = tape.scatter_add_rows(g, &[1, 1, 0, 2, 2], 3);
            let sl = tape.slice_cols(bv, 1, 3);
            let t = tape.tanh(sl);
            let cat = tape.concat_cols(&[av, t]);
            let scaled = tape.scale_cols(cat, &[1.0, -2.0, 0.5, 3.0, 1.5]);
            let sig = tape.sigmoid(scaled);
            let s1 = tape.sum_squares(sig);
            let d = tape.sub(sc, sc);
            let e = tape.scale(sc, 0.3);
            let f = tape.add(d, e);
            let s2 = tape.sum_squares(f);
            tape.add(s1, s2)
        })
        .unwrap();
        assert!(err < 1e-4, "relative error {err}");
    }

    #[test]
    fn adam_first_step() {
        let mut store = ParamStore::new();
        let p = store.add("p", 1, 1, Init::Constant(1.0), &mut rng());
        let mut adam = Adam::new(AdamConfig { learning_rate: 0.1, ..AdamConfig::default() }, &store);
        adam.step(&mut store).unwrap();
        assert_eq!(store.values(p)[[0, 0]], 1.0);
        let mut adam = Adam::new(AdamConfig { learning_rate: 0.1, ..AdamConfig::default() }, &store);
        store.grad_mut(p).fill(1.0);
        adam.step(&mut store).unwrap();
        // m̂ = 1, v̂ = 1 → Δ = lr / (1 + ε)
        assert!((store.values(p)[[0, 0]] - (1.0 - 0.1 / (1.0 + 1e-8))).abs() < 1e-12);
        assert_eq!(store.grad(p)[[0, 0]], 0.0);
        adam.end_epoch();
        assert!((adam.learning_rate - 0.0995).abs() < 1e-15);
    }

    #[test]
    fn adam_rejects_non_finite() {
        let mut store = ParamStore::new();
        let p = store.add("layer.w", 1, 2, Init::Constant(1.0), &mut rng());
        store.grad_mut(p)[[0, 1]] = f64::NAN;
        let mut adam = Adam::new(AdamConfig::default(), &store);
        match adam.step(&mut store) {
            Err(crate::Error::NonFiniteGradient(name)) => assert_eq!(name, "layer.w"),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(store.values(p)[[0, 1]], 1.0);
    }

    #[test]
    fn seeded_init_is_reproducible_and_bounded() {
        let build = || {
            let mut store = ParamStore::new();
            store.add("w", 10, 6, Init::Xavier, &mut rng());
            store
        };
        assert_eq!(build(), build());
        let bound = (6.0f64 / 16.0).sqrt();
        assert!(build().flat_values().iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn flat_round_trip() {
        let mut store = ParamStore::new();
        store.add("a", 2, 3, Init::Xavier, &mut rng());
        store.add("b", 1, 4, Init::Xavier, &mut rng());
        let flat = store.flat_values();
        let meta = store.meta();
        let mut other = store.clone();
        other.zero_grad();
        for id in other.ids().collect::<Vec<_>>() {
            other.values_mut(id).fill(0.0);
        }
        other.load_flat(&meta, &flat).unwrap();
        assert_eq!(other.flat_values(), flat);
        assert!(other.load_flat(&meta, &flat[1..]).is_err());
    }
}
