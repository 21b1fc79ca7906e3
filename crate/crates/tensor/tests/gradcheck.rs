use acrodis_tensor::{Matrix, ParamGroup, ParamId, ParamStore, Tape, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
    Matrix::from_shape_fn((r, c), |_| rng.gen_range(-1.0..1.0))
}

/// Compares the tape gradient of `f` against central differences for every
/// entry of every parameter.
fn check(store: &mut ParamStore, f: impl Fn(&mut Tape) -> Var) {
    let grads = {
        let mut tape = Tape::new(store);
        let loss = f(&mut tape);
        tape.backward(loss)
    };
    let h = 1e-6;
    let ids: Vec<ParamId> = store.iter().map(|(id, _)| id).collect();
    for id in ids {
        let shape = store.value(id).dim();
        for r in 0..shape.0 {
            for c in 0..shape.1 {
                let orig = store.value(id)[[r, c]];
                store.value_mut(id)[[r, c]] = orig + h;
                let plus = {
                    let mut t = Tape::new(store);
                    let l = f(&mut t);
                    t.scalar(l)
                };
                store.value_mut(id)[[r, c]] = orig - h;
                let minus = {
                    let mut t = Tape::new(store);
                    let l = f(&mut t);
                    t.scalar(l)
                };
                store.value_mut(id)[[r, c]] = orig;
                let numeric = (plus - minus) / (2.0 * h);
                let analytic = grads.get(id).map_or(0.0, |g| g[[r, c]]);
                let denom = analytic.abs().max(numeric.abs()).max(1e-6);
                assert!(
                    (analytic - numeric).abs() / denom < 1e-4,
                    "{} [{r},{c}]: analytic {analytic} numeric {numeric}",
                    store.get(id).name
                );
            }
        }
    }
}

#[test]
fn attention_block_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = ParamStore::new();
    let table = store.add("table", ParamGroup::Encoder, random(&mut rng, 6, 4));
    let wq = store.add("wq", ParamGroup::Encoder, random(&mut rng, 4, 3));
    let wk = store.add("wk", ParamGroup::Encoder, random(&mut rng, 4, 3));
    let wv = store.add("wv", ParamGroup::Encoder, random(&mut rng, 4, 4));
    let gain = store.add("gain", ParamGroup::Encoder, random(&mut rng, 1, 4));
    let bias = store.add("bias", ParamGroup::Encoder, random(&mut rng, 1, 4));
    let w_out = store.add("w_out", ParamGroup::Head, random(&mut rng, 8, 1));
    let b_out = store.add("b_out", ParamGroup::Head, random(&mut rng, 1, 1));

    check(&mut store, |t| {
        let x = t.gather(table, &[0, 3, 3, 5]);
        let (q, k, v) = (t.param(wq), t.param(wk), t.param(wv));
        let q = t.matmul(x, q);
        let k = t.matmul(x, k);
        let v = t.matmul(x, v);
        let scores = t.matmul_t(q, k);
        let scores = t.scale(scores, 0.5);
        let attn = t.softmax(scores);
        let ctx = t.matmul(attn, v);
        let h = t.add(x, ctx);
        let (g, b) = (t.param(gain), t.param(bias));
        let h = t.layer_norm(h, g, b);
        let h = t.gelu(h);
        let cls = t.select_rows(h, &[0]);
        let pair = t.select_rows(h, &[1, 2]);
        let mean = t.select_rows(pair, &[0]);
        let mean2 = t.select_rows(pair, &[1]);
        let m = t.add(mean, mean2);
        let m = t.scale(m, 0.5);
        let rep = t.concat_cols(&[cls, m]);
        let rep2 = t.concat_cols(&[m, cls]);
        let reps = t.concat_rows(&[rep, rep2]);
        let mask = Matrix::from_shape_vec((2, 8), (0..16).map(|i| (i % 3) as f64).collect()).unwrap();
        let reps = t.mul_const(reps, mask);
        let (w, bo) = (t.param(w_out), t.param(b_out));
        let z = t.linear(reps, w, bo);
        t.bce_with_logits(z, &[1.0, 0.0])
    });
}

#[test]
fn block_attention_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut store = ParamStore::new();
    let x = store.add("x", ParamGroup::Encoder, random(&mut rng, 7, 4));
    let wq = store.add("wq", ParamGroup::Encoder, random(&mut rng, 4, 3));
    let wk = store.add("wk", ParamGroup::Encoder, random(&mut rng, 4, 3));
    let wv = store.add("wv", ParamGroup::Encoder, random(&mut rng, 4, 2));
    let w_out = store.add("w_out", ParamGroup::Head, random(&mut rng, 2, 1));
    let labels = [1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0];
    check(&mut store, |t| {
        let xv = t.param(x);
        let (q, k, v) = (t.param(wq), t.param(wk), t.param(wv));
        let q = t.matmul(xv, q);
        let k = t.matmul(xv, k);
        let v = t.matmul(xv, v);
        let ctx = t.block_attention(q, k, v, &[3, 1, 3], 0.7);
        let w = t.param(w_out);
        let z = t.matmul(ctx, w);
        t.bce_with_logits(z, &labels)
    });
}

#[test]
fn block_attention_matches_separate_blocks() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let store = ParamStore::new();
    let mut t = Tape::new(&store);
    let (q, k, v) = (random(&mut rng, 5, 3), random(&mut rng, 5, 3), random(&mut rng, 5, 2));
    let (qa, ka, va) = (t.constant(q.clone()), t.constant(k.clone()), t.constant(v.clone()));
    let joint = t.block_attention(qa, ka, va, &[2, 3], 0.5);
    let joint = t.value(joint).clone();
    let mut start = 0;
    for len in [2, 3] {
        let rows: Vec<usize> = (start..start + len).collect();
        let qb = t.select_rows(qa, &rows);
        let kb = t.select_rows(ka, &rows);
        let vb = t.select_rows(va, &rows);
        let s = t.matmul_t(qb, kb);
        let s = t.scale(s, 0.5);
        let a = t.softmax(s);
        let o = t.matmul(a, vb);
        for (i, r) in rows.iter().enumerate() {
            for c in 0..2 {
                assert!((t.value(o)[[i, c]] - joint[[*r, c]]).abs() < 1e-12);
            }
        }
        start += len;
    }
}

#[test]
fn relu_and_cross_entropy_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut store = ParamStore::new();
    let x = store.add("x", ParamGroup::Encoder, random(&mut rng, 3, 5));
    let w = store.add("w", ParamGroup::Head, random(&mut rng, 5, 7));
    let b = store.add("b", ParamGroup::Pretraining, random(&mut rng, 1, 7));
    check(&mut store, |t| {
        let xv = t.param(x);
        let h = t.relu(xv);
        let (wv, bv) = (t.param(w), t.param(b));
        let logits = t.linear(h, wv, bv);
        t.cross_entropy(logits, &[0, 6, 2])
    });
}

#[test]
fn bce_value_matches_closed_form() {
    let store = ParamStore::new();
    let mut t = Tape::new(&store);
    let z = t.constant(Matrix::from_shape_vec((2, 1), vec![0.0, 0.0]).unwrap());
    let l = t.bce_with_logits(z, &[1.0, 0.0]);
    assert!((t.scalar(l) - std::f64::consts::LN_2).abs() < 1e-12);
}

#[test]
fn adam_moves_against_gradient() {
    let mut store = ParamStore::new();
    let p = store.add("p", ParamGroup::Head, Matrix::from_elem((1, 2), 1.0));
    let frozen = store.add("q", ParamGroup::Encoder, Matrix::from_elem((1, 1), 1.0));
    let mut grads = acrodis_tensor::Grads::new(2);
    grads.accumulate(p, &Matrix::from_shape_vec((1, 2), vec![2.0, -3.0]).unwrap());
    grads.accumulate(frozen, &Matrix::from_elem((1, 1), 1.0));
    let mut adam = acrodis_tensor::Adam::default();
    adam.step(&mut store, &grads, |g| (g == ParamGroup::Head).then_some(0.1));
    let v = store.value(p);
    // First Adam step moves each coordinate by ~lr in the sign direction.
    assert!((v[[0, 0]] - 0.9).abs() < 1e-6);
    assert!((v[[0, 1]] - 1.1).abs() < 1e-6);
    assert_eq!(store.value(frozen)[[0, 0]], 1.0);
}
