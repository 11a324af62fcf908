use super::*;
use crate::objective::{sharpe_loss, CostModel, ReturnsWindow};
use crate::test_util::{check_param_grads, lcg_values};

fn tiny() -> PtConfig {
    PtConfig {
        n_layers: 1,
        seed: 5,
        ..PtConfig::new(3, 8, 8, 2, 3)
    }
}

fn window_values(seed: u64, rows: usize, cols: usize) -> Tensor {
    Tensor::matrix(rows, cols, lcg_values(seed, rows * cols, -0.03, 0.03)).unwrap()
}

fn set(store: &mut ParamStore, id: crate::nn::ParamId, values: &[f64]) {
    store.get_mut(id).data_mut().copy_from_slice(values);
}

#[test]
fn config_validation() {
    assert!(tiny().validate().is_ok());
    let bad = [
        PtConfig { n_assets: 1, ..tiny() },
        PtConfig { window: 1, ..tiny() },
        PtConfig { n_heads: 3, ..tiny() },
        PtConfig { n_heads: 0, ..tiny() },
        PtConfig { t2v_k: 0, ..tiny() },
        PtConfig { n_layers: 0, ..tiny() },
        PtConfig { dropout: 1.0, ..tiny() },
    ];
    for c in bad {
        assert!(matches!(c.validate(), Err(Error::Config(_))), "{c:?}");
    }
}

#[test]
fn attention_scale_modes() {
    let c = PtConfig::new(3, 8, 16, 4, 2);
    assert_eq!(c.attention_scale(), 4.0);
    let c = PtConfig {
        scale_mode: ScaleMode::DK,
        ..c
    };
    assert_eq!(c.attention_scale(), 2.0);
}

#[test]
fn time2vec_components() {
    let model = PortfolioTransformer::new(tiny()).unwrap();
    let t2v = model.time2vec().clone();
    let mut store = model.params().clone();
    set(&mut store, t2v.omega, &[1.0, std::f64::consts::FRAC_PI_2, 0.3, 0.4]);
    set(&mut store, t2v.phi, &[0.0, 0.0, 0.1, 0.2]);
    let at3 = t2v.encode_at(&store, 3).unwrap();
    assert_eq!(at3[0], 3.0);
    let at1 = t2v.encode_at(&store, 1).unwrap();
    assert!((at1[1] - 1.0).abs() < 1e-15);
    assert_eq!(at1.len(), 4);

    let om = lcg_values(2, 4, -5.0, 5.0);
    let ph = lcg_values(3, 4, -5.0, 5.0);
    set(&mut store, t2v.omega, &om);
    set(&mut store, t2v.phi, &ph);
    for t in [0, 1, 7, 250, 10_000] {
        let v = t2v.encode_at(&store, t).unwrap();
        assert!(v[1..].iter().all(|x| (-1.0..=1.0).contains(x)));
        assert_eq!(v[0], om[0] * t as f64 + ph[0]);
    }
}

#[test]
fn embedding_shape_and_rowwise() {
    let model = PortfolioTransformer::new(tiny()).unwrap();
    let x = window_values(1, 8, 3);
    let mut y = x.clone();
    y.data_mut()[4 * 3 + 1] += 0.5;
    let embed = |x: &Tensor| {
        let mut s = Session::new(model.params());
        let v = s.input(x.clone());
        let e = model.embed(&mut s, v).unwrap();
        s.value(e).clone()
    };
    let (ex, ey) = (embed(&x), embed(&y));
    assert_eq!(ex.shape(), &[8, 8]);
    for r in 0..8 {
        let same = ex.row(r) == ey.row(r);
        assert_eq!(same, r != 4, "row {r}");
    }
    let ez = embed(&Tensor::zeros(&[8, 3]));
    for r in 1..8 {
        assert_ne!(ez.row(r), ez.row(0));
    }
}

#[test]
fn embedding_rejects_wrong_width() {
    let model = PortfolioTransformer::new(tiny()).unwrap();
    let mut s = Session::new(model.params());
    let v = s.input(Tensor::zeros(&[8, 4]));
    assert!(matches!(model.embed(&mut s, v), Err(Error::Shape { .. })));
}

#[test]
fn attention_degenerate_cases() {
    let store = ParamStore::new();
    let mut s = Session::new(&store);
    // single position
    let q = s.input(Tensor::matrix(1, 2, vec![0.3, -0.4]).unwrap());
    let k = s.input(Tensor::matrix(1, 2, vec![1.2, 0.7]).unwrap());
    let v = s.input(Tensor::matrix(1, 3, vec![5.0, -1.0, 2.0]).unwrap());
    let o = attention(&mut s, q, k, v, None, 2.0).unwrap();
    assert_eq!(s.value(o).data(), &[5.0, -1.0, 2.0]);

    // equal scores: every row is the column mean of V
    let q = s.input(Tensor::zeros(&[3, 2]));
    let k = s.input(Tensor::matrix(3, 2, lcg_values(1, 6, -1.0, 1.0)).unwrap());
    let vv = lcg_values(2, 12, -1.0, 1.0);
    let v = s.input(Tensor::matrix(3, 4, vv.clone()).unwrap());
    let o = attention(&mut s, q, k, v, None, 1.0).unwrap();
    for r in 0..3 {
        for c in 0..4 {
            let mean = (vv[c] + vv[4 + c] + vv[8 + c]) / 3.0;
            assert!((s.value(o).at(r, c) - mean).abs() < 1e-15);
        }
    }

    // causal: row 0 sees only itself
    let q = s.input(Tensor::matrix(3, 2, lcg_values(3, 6, -1.0, 1.0)).unwrap());
    let k = s.input(Tensor::matrix(3, 2, lcg_values(4, 6, -1.0, 1.0)).unwrap());
    let mask = s.input(causal_mask(3));
    let o = attention(&mut s, q, k, v, Some(mask), 1.0).unwrap();
    assert_eq!(s.value(o).row(0), &vv[0..4]);
}

#[test]
fn fully_masked_row_is_rejected() {
    let store = ParamStore::new();
    let mut s = Session::new(&store);
    let q = s.input(Tensor::zeros(&[2, 2]));
    let mut m = Tensor::zeros(&[2, 2]);
    m.data_mut()[0] = MASK_BLOCKED;
    m.data_mut()[1] = MASK_BLOCKED;
    let mask = s.input(m);
    assert!(matches!(
        attention(&mut s, q, q, q, Some(mask), 1.0),
        Err(Error::Contract(_))
    ));
}

#[test]
fn single_head_mha_is_attention_between_linear_maps() {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mha = MultiHeadAttention::new(&mut store, &mut rng, "m", 4, 1, 2.0);
    let x = Tensor::matrix(5, 4, lcg_values(5, 20, -1.0, 1.0)).unwrap();
    let mut s = Session::new(&store);
    let xv = s.input(x.clone());
    let out = mha.forward(&mut s, xv, xv, xv, None).unwrap();
    assert_eq!(s.value(out).shape(), &[5, 4]);

    let mut s2 = Session::new(&store);
    let xv = s2.input(x);
    let (wq, wk, wv, wo) = (
        s2.param(mha.w_q[0]),
        s2.param(mha.w_k[0]),
        s2.param(mha.w_v[0]),
        s2.param(mha.w_o),
    );
    let q = s2.tape.matmul(xv, wq).unwrap();
    let k = s2.tape.matmul(xv, wk).unwrap();
    let v = s2.tape.matmul(xv, wv).unwrap();
    let a = attention(&mut s2, q, k, v, None, 2.0).unwrap();
    let o = s2.tape.matmul(a, wo).unwrap();
    assert_eq!(s.value(out), s2.value(o));
}

#[test]
fn cross_attention_output_follows_query_shape() {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mha = MultiHeadAttention::new(&mut store, &mut rng, "m", 6, 3, 6f64.sqrt());
    let mut s = Session::new(&store);
    let q = s.input(Tensor::matrix(2, 6, lcg_values(1, 12, -1.0, 1.0)).unwrap());
    let kv = s.input(Tensor::matrix(7, 6, lcg_values(2, 42, -1.0, 1.0)).unwrap());
    let o = mha.forward(&mut s, q, kv, kv, None).unwrap();
    assert_eq!(s.value(o).shape(), &[2, 6]);
}

/// Finite-difference check of every parameter of `store` through `loss`.
#[test]
fn mha_gradient_check() {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mha = MultiHeadAttention::new(&mut store, &mut rng, "m", 4, 2, 2.0);
    let x = Tensor::matrix(4, 4, lcg_values(8, 16, -1.0, 1.0)).unwrap();
    let c = Tensor::matrix(4, 4, lcg_values(9, 16, -1.0, 1.0)).unwrap();
    check_param_grads(
        &store,
        |s| {
            let xv = s.input(x.clone());
            let mask = s.input(causal_mask(4));
            let o = mha.forward(s, xv, xv, xv, Some(mask)).unwrap();
            let cv = s.input(c.clone());
            let p = s.tape.mul(o, cv).unwrap();
            s.tape.sum(p)
        },
        1e-4,
    );
}

#[test]
fn grn_closed_gate_reduces_to_layer_norm() {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let grn = Grn::new(&mut store, &mut rng, "g", 4);
    store
        .get_mut(grn.glu_gate.bias)
        .data_mut()
        .iter_mut()
        .for_each(|b| *b = -1e3);
    let z = Tensor::matrix(3, 4, lcg_values(1, 12, -1.0, 1.0)).unwrap();
    let mut s = Session::new(&store);
    let zv = s.input(z.clone());
    let out = grn.forward(&mut s, zv).unwrap();
    assert_eq!(s.value(out).shape(), &[3, 4]);
    let ln = grn.norm.forward(&mut s, zv).unwrap();
    let (a, b) = (s.value(out).data(), s.value(ln).data());
    for (x, y) in a.iter().zip(b) {
        assert!((x - y).abs() < 1e-9);
    }
}

#[test]
fn grn_gradient_check() {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let grn = Grn::new(&mut store, &mut rng, "g", 4);
    let z = Tensor::matrix(3, 4, lcg_values(1, 12, -1.0, 1.0)).unwrap();
    let c = Tensor::matrix(3, 4, lcg_values(2, 12, -1.0, 1.0)).unwrap();
    check_param_grads(
        &store,
        |s| {
            let zv = s.input(z.clone());
            let o = grn.forward(s, zv).unwrap();
            let cv = s.input(c.clone());
            let p = s.tape.mul(o, cv).unwrap();
            s.tape.sum(p)
        },
        1e-4,
    );
}

#[test]
fn output_head_cases() {
    let store = ParamStore::new();
    let mut s = Session::new(&store);
    let sc = s.input(Tensor::matrix(2, 2, vec![2.0, -1.0, 0.7, 0.7]).unwrap());
    let w = allocation_head(&mut s, sc).unwrap();
    let w = s.value(w);
    let e = 2f64.exp() / (2f64.exp() + (-1f64).exp());
    assert!((w.at(0, 0) - 0.9526).abs() < 1e-4);
    assert!((w.at(0, 0) - e).abs() < 1e-15);
    assert!((w.at(0, 1) + 0.0474).abs() < 1e-4);
    assert!((w.at(0, 0) + w.at(0, 1).abs() - 1.0).abs() < 1e-15);
    assert_eq!(w.row(1), &[0.5, 0.5]);
}

#[test]
fn forward_rows_have_unit_gross_exposure() {
    let model = PortfolioTransformer::new(tiny()).unwrap();
    let w = model
        .forward_values(&window_values(1, 8, 3), &window_values(2, 8, 3))
        .unwrap();
    assert_eq!(w.shape(), &[8, 3]);
    for r in 0..8 {
        let gross: f64 = w.row(r).iter().map(|v| v.abs()).sum();
        assert!((gross - 1.0).abs() < 1e-9);
        assert!(w.row(r).iter().all(|v| v.abs() <= 1.0));
    }
}

#[test]
fn decoder_is_causal() {
    let model = PortfolioTransformer::new(PtConfig { n_layers: 2, ..tiny() }).unwrap();
    let enc = window_values(1, 8, 3);
    let dec = window_values(2, 8, 3);
    let base = model.forward_values(&enc, &dec).unwrap();
    for j in 0..8 {
        let mut d = dec.clone();
        d.data_mut()[j * 3 + 1] += 0.1;
        let w = model.forward_values(&enc, &d).unwrap();
        for r in 0..j {
            for c in 0..3 {
                assert!((w.at(r, c) - base.at(r, c)).abs() < 1e-12);
            }
        }
        if j < 7 {
            assert_ne!(w.row(7), base.row(7));
        }
    }
}

#[test]
fn forward_rejects_wrong_window() {
    let model = PortfolioTransformer::new(tiny()).unwrap();
    assert!(model
        .forward_values(&window_values(1, 7, 3), &window_values(2, 8, 3))
        .is_err());
    assert!(model.predict_next(&window_values(1, 8, 3)).is_err());
}

#[test]
fn full_model_gradient_check() {
    let model = PortfolioTransformer::new(tiny()).unwrap();
    let hist = window_values(11, 16, 3);
    let realized = window_values(12, 8, 3);
    let win = ReturnsWindow::new(realized);
    check_param_grads(
        model.params(),
        |s| {
            let w = model.weights(s, &hist).unwrap();
            sharpe_loss(&mut s.tape, w, &win, CostModel::default()).unwrap()
        },
        1e-4,
    );
}

#[test]
fn seeded_construction_is_deterministic() {
    let a = PortfolioTransformer::new(tiny()).unwrap();
    let b = PortfolioTransformer::new(tiny()).unwrap();
    assert_eq!(a.params(), b.params());
    let c = PortfolioTransformer::new(PtConfig { seed: 6, ..tiny() }).unwrap();
    assert_ne!(a.params(), c.params());
    let h = window_values(3, 16, 3);
    let (wa, wb) = (a.predict_next(&h).unwrap(), b.predict_next(&h).unwrap());
    assert!(wa.iter().zip(&wb).all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn asset_permutation_permutes_weights() {
    let model = PortfolioTransformer::new(tiny()).unwrap();
    let perm = [2usize, 0, 1];
    let mut permuted = model.clone();
    {
        let store = permuted.params_mut();
        let proj = model.input_projection().weight;
        let head_w = model.head().weight;
        let head_b = model.head().bias;
        let src = model.params();
        let d = 8;
        // input rows for assets follow the permutation; time rows are untouched
        for (new, &old) in perm.iter().enumerate() {
            let row = src.get(proj).row(old).to_vec();
            store.get_mut(proj).data_mut()[new * d..(new + 1) * d].copy_from_slice(&row);
        }
        for r in 0..d {
            for (new, &old) in perm.iter().enumerate() {
                let v = src.get(head_w).at(r, old);
                store.get_mut(head_w).data_mut()[r * 3 + new] = v;
            }
        }
        for (new, &old) in perm.iter().enumerate() {
            let v = src.get(head_b).data()[old];
            store.get_mut(head_b).data_mut()[new] = v;
        }
    }
    let permute_cols = |t: &Tensor| {
        let rows: Vec<Vec<f64>> = (0..t.rows())
            .map(|r| perm.iter().map(|&old| t.at(r, old)).collect())
            .collect();
        Tensor::from_rows(&rows).unwrap()
    };
    let hist = window_values(5, 16, 3);
    let w = model.predict_next(&hist).unwrap();
    let wp = permuted.predict_next(&permute_cols(&hist)).unwrap();
    for (new, &old) in perm.iter().enumerate() {
        assert!((wp[new] - w[old]).abs() < 1e-12);
    }
}

#[test]
fn checkpoint_round_trip() {
    let model = PortfolioTransformer::new(tiny()).unwrap();
    let mut buf = Vec::new();
    model.to_checkpoint().write_to(&mut buf).unwrap();
    assert!(buf.starts_with(b"PTCKPT1\n"));
    let ckpt = Checkpoint::read_from(&buf[..]).unwrap();
    let back = PortfolioTransformer::from_checkpoint(&ckpt).unwrap();
    assert_eq!(back.params(), model.params());
    assert_eq!(back.config(), model.config());

    let mut bad = buf.clone();
    bad[0] = b'X';
    assert!(matches!(Checkpoint::read_from(&bad[..]), Err(Error::Checkpoint(_))));
}

#[test]
fn dropout_changes_training_pass_only() {
    let model = PortfolioTransformer::new(PtConfig { dropout: 0.3, ..tiny() }).unwrap();
    let hist = window_values(5, 16, 3);
    let eval = {
        let mut s = Session::new(model.params());
        let w = model.weights(&mut s, &hist).unwrap();
        s.value(w).clone()
    };
    let train = {
        let mut s = Session::training(model.params(), 0.3, 1);
        let w = model.weights(&mut s, &hist).unwrap();
        s.value(w).clone()
    };
    assert_ne!(eval, train);
    for r in 0..8 {
        let gross: f64 = train.row(r).iter().map(|v| v.abs()).sum();
        assert!((gross - 1.0).abs() < 1e-9);
    }
}
