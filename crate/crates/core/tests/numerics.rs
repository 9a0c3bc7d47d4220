use clipa_core::numerics::{
    ops, AdamWConfig, AttentionShape, OptimizerState, ParamId, ParamStore, Schedule, SeedStream, Tape, Tensor, Var,
};
use proptest::prelude::*;
use rand::Rng as _;

fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = SeedStream::new(seed).rng();
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Fourth-order central difference of `f` along every element of every
/// parameter, compared with the tape's gradient. Returns the largest
/// relative error `|a - n| / max(|a|, |n|, 1e-6)`.
fn max_rel_error(store: &mut ParamStore<f64>, f: &dyn Fn(&mut Tape<f64>, &ParamStore<f64>) -> Var) -> f64 {
    let mut tape = Tape::new();
    let loss = f(&mut tape, store);
    let grads = tape.backward(loss).unwrap();
    let eval = |s: &ParamStore<f64>| {
        let mut t = Tape::new();
        let l = f(&mut t, s);
        t.value(l).item()
    };
    let h = 1e-3;
    let mut worst = 0f64;
    let ids: Vec<ParamId> = store.ids().collect();
    for id in ids {
        let g = grads.get_or_zeros(id, store.get(id).shape());
        for i in 0..store.get(id).len() {
            let x0 = store.get(id).data()[i];
            let mut at = |dx: f64| {
                store.get_mut(id).data_mut()[i] = x0 + dx;
                let v = eval(store);
                store.get_mut(id).data_mut()[i] = x0;
                v
            };
            let num = (-at(2.0 * h) + 8.0 * at(h) - 8.0 * at(-h) + at(-2.0 * h)) / (12.0 * h);
            let ana = g.data()[i];
            worst = worst.max((ana - num).abs() / ana.abs().max(num.abs()).max(1e-6));
        }
    }
    worst
}

/// `sum(out * w)` for a fixed random `w`, so every output element matters.
fn project(tape: &mut Tape<f64>, out: Var, seed: u64) -> Var {
    let w = random(tape.value(out).shape(), seed);
    let wv = tape.constant(w);
    let prod = tape.mul(out, wv).unwrap();
    tape.sum(prod)
}

#[test]
fn linear_and_matmul_gradients() {
    let mut s = ParamStore::new();
    let x = s.add("x", random(&[3, 4], 1));
    let w = s.add("w", random(&[4, 5], 2));
    let b = s.add("b", random(&[5], 3));
    let m = s.add("m", random(&[5, 2], 4));
    let err = max_rel_error(&mut s, &|t, s| {
        let (xv, wv, bv, mv) = (t.param(s, x), t.param(s, w), t.param(s, b), t.param(s, m));
        let y = t.linear(xv, wv, Some(bv)).unwrap();
        let z = t.matmul(y, mv).unwrap();
        project(t, z, 9)
    });
    assert!(err < 1e-7, "max relative error {err}");
}

#[test]
fn layer_norm_gelu_softmax_gradients() {
    let mut s = ParamStore::new();
    let x = s.add("x", random(&[4, 6], 11));
    let g = s.add("g", random(&[6], 12));
    let b = s.add("b", random(&[6], 13));
    let err = max_rel_error(&mut s, &|t, s| {
        let (xv, gv, bv) = (t.param(s, x), t.param(s, g), t.param(s, b));
        let y = t.layer_norm(xv, gv, bv).unwrap();
        let y = t.gelu(y);
        let y = t.softmax(y);
        let y = t.exp(y);
        project(t, y, 14)
    });
    assert!(err < 1e-7, "max relative error {err}");
}

#[test]
fn masked_attention_gradient() {
    let shape = AttentionShape { batch: 2, seq: 3, width: 4, heads: 2 };
    let mut s = ParamStore::new();
    let qkv = s.add("qkv", random(&[6, 12], 21));
    let mask = vec![true, true, false, true, true, true];
    let err = max_rel_error(&mut s, &|t, s| {
        let v = t.param(s, qkv);
        let y = t.attention(v, shape, Some(mask.clone())).unwrap();
        project(t, y, 22)
    });
    assert!(err < 1e-7, "max relative error {err}");
}

#[test]
fn pooling_and_contrastive_gradients() {
    let mut s = ParamStore::new();
    let x = s.add("x", random(&[6, 4], 31));
    let cls = s.add("cls", random(&[4], 32));
    let y = s.add("y", random(&[2, 4], 33));
    let scale = s.add("scale", Tensor::full(&[1], 2.5));
    let err = max_rel_error(&mut s, &|t, s| {
        let (xv, cv, yv, sv) = (t.param(s, x), t.param(s, cls), t.param(s, y), t.param(s, scale));
        let seq = t.prepend_token(xv, cv, 3).unwrap();
        let picked = t.gather_rows(seq, vec![0, 2, 5, 7]).unwrap();
        let pooled = t.group_mean(picked, 2, 0).unwrap();
        let gap = t.group_mean(seq, 4, 1).unwrap();
        let both = t.add(pooled, gap).unwrap();
        let a = t.l2_normalize(both);
        let b = t.l2_normalize(yv);
        let logits = t.matmul_nt(a, b).unwrap();
        let logits = t.scale(logits, sv).unwrap();
        t.clip_loss(logits).unwrap()
    });
    assert!(err < 1e-7, "max relative error {err}");
}

#[test]
fn clip_loss_of_constant_logits_is_log_n() {
    for n in [2usize, 5, 16] {
        let (loss, _) = ops::clip_loss(&Tensor::<f64>::zeros(&[n, n])).unwrap();
        assert!((loss - (n as f64).ln()).abs() < 1e-12);
    }
}

fn naive_matmul(a: &Tensor<f64>, b: &Tensor<f64>) -> Vec<f64> {
    let (n, k, m) = (a.rows(), a.cols(), b.cols());
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            out[i * m + j] = (0..k).map(|p| a.row(i)[p] * b.row(p)[j]).sum();
        }
    }
    out
}

proptest! {
    #[test]
    fn gemm_matches_triple_loop(n in 1usize..9, k in 1usize..9, m in 1usize..9, seed in any::<u64>()) {
        let a = random(&[n, k], seed);
        let b = random(&[k, m], seed ^ 1);
        let c = ops::matmul(&a, &b).unwrap();
        for (x, y) in c.data().iter().zip(naive_matmul(&a, &b)) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn schedule_stays_between_floor_and_peak(base in 1e-5f64..1e-2, warm in 0u64..50, total in 1u64..500, k in 0u64..600) {
        let s = Schedule { base_lr: base, min_lr: base / 10.0, warmup_steps: warm, total_steps: total };
        let lr = s.lr_at_step(k);
        prop_assert!((0.0..=base * (1.0 + 1e-12)).contains(&lr));
        if k >= warm && total > warm {
            prop_assert!(lr >= base / 10.0 - 1e-15);
        }
    }
}

#[test]
fn cosine_schedule_landmarks() {
    let s = Schedule { base_lr: 1.0, min_lr: 0.0, warmup_steps: 10, total_steps: 110 };
    assert_eq!(s.lr_at_step(0), 0.0);
    assert!((s.lr_at_step(5) - 0.5).abs() < 1e-12);
    assert_eq!(s.lr_at_step(10), 1.0);
    assert!((s.lr_at_step(60) - 0.5).abs() < 1e-12);
    assert!(s.lr_at_step(110).abs() < 1e-12);
}

#[test]
fn adamw_first_steps_match_hand_computation() {
    let cfg = AdamWConfig::default();
    let mut store = ParamStore::new();
    let w = store.add("w", Tensor::new(&[1, 2], vec![1.0, -2.0]).unwrap());
    let b = store.add("b", Tensor::new(&[2], vec![0.5, 0.5]).unwrap());
    let mut opt = OptimizerState::new(cfg, &store);
    let (lr, g) = (0.1, [0.3, -0.6]);
    let (mut pw, mut pb) = ([1.0f64, -2.0], [0.5f64, 0.5]);
    let (mut mw, mut vw, mut mb, mut vb) = ([0.0f64; 2], [0.0f64; 2], [0.0f64; 2], [0.0f64; 2]);
    for t in 1..=3 {
        let mut tape = Tape::new();
        let (wv, bv) = (tape.param(&store, w), tape.param(&store, b));
        let gw = tape.constant(Tensor::new(&[1, 2], g.to_vec()).unwrap());
        let gb = tape.constant(Tensor::new(&[2], g.to_vec()).unwrap());
        let a = tape.mul(wv, gw).unwrap();
        let c = tape.mul(bv, gb).unwrap();
        let (sa, sc) = (tape.sum(a), tape.sum(c));
        let tot = tape.add(sa, sc).unwrap();
        let grads = tape.backward(tot).unwrap();
        opt.step(&mut store, &grads, lr);
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for i in 0..2 {
            for (p, m, v, decay) in [(&mut pw[i], &mut mw[i], &mut vw[i], true), (&mut pb[i], &mut mb[i], &mut vb[i], false)] {
                *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g[i];
                *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g[i] * g[i];
                let upd = lr * (*m / bc1) / ((*v / bc2).sqrt() + cfg.eps);
                *p = if decay { *p * (1.0 - lr * cfg.weight_decay) } else { *p } - upd;
            }
        }
    }
    for i in 0..2 {
        assert!((store.get(w).data()[i] - pw[i]).abs() < 1e-12);
        assert!((store.get(b).data()[i] - pb[i]).abs() < 1e-12);
    }
}
