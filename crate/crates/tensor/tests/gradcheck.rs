//! Central-difference checks of every operator's backward rule at f64.

use windflow_tensor::{ParamId, Params, Tape, Tensor, Var};

fn pseudo(shape: &[usize], seed: u64) -> Tensor<f64> {
    // deterministic, irregular values in (-1, 1)
    Tensor::from_fn(shape, |i| {
        let x = (i as f64 + 1.0) * 12.9898 + seed as f64 * 78.233;
        (x.sin() * 43758.5453).fract()
    })
}

/// Build a scalar loss from `build`, then compare analytic and numeric
/// gradients for every parameter entry.
fn check(params: &mut Params<f64>, build: impl Fn(&mut Tape<f64>, &Params<f64>) -> Var) {
    let mut tape = Tape::new();
    let out = build(&mut tape, params);
    // project onto a fixed random direction so every output entry matters
    let proj = tape.constant(pseudo(tape.shape(out), 99));
    let prod = tape.mul(out, proj).unwrap();
    let loss = tape.mean(prod);
    let grads = tape.backward(loss);

    let eval = |p: &Params<f64>| {
        let mut t = Tape::new();
        let o = build(&mut t, p);
        let pr = t.constant(pseudo(t.shape(o), 99));
        let m = t.mul(o, pr).unwrap();
        let l = t.mean(m);
        t.value(l).data()[0]
    };

    let ids: Vec<ParamId> = params.ids().collect();
    let h = 1e-6;
    for id in ids {
        let analytic = grads
            .get(params, id)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(params.value(id).shape()));
        for i in 0..params.value(id).numel() {
            let orig = params.value(id).data()[i];
            params.value_mut(id).data_mut()[i] = orig + h;
            let up = eval(params);
            params.value_mut(id).data_mut()[i] = orig - h;
            let down = eval(params);
            params.value_mut(id).data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic.data()[i];
            let scale = a.abs().max(numeric.abs()).max(1e-7);
            assert!(
                (a - numeric).abs() / scale < 1e-5,
                "{} [{i}]: analytic {a} vs numeric {numeric}",
                params.name(id)
            );
        }
    }
}

#[test]
fn conv2d_all_geometries() {
    for (stride, pad, k) in [(1, 0, 3), (2, 1, 4), (1, 1, 3), (2, 0, 1)] {
        let mut p = Params::new();
        let x = p.add("x", pseudo(&[2, 3, 7, 6], 1));
        let w = p.add("w", pseudo(&[4, 3, k, k], 2));
        let b = p.add("b", pseudo(&[4], 3));
        check(&mut p, |t, p| {
            let (x, w, b) = (t.param(p, x), t.param(p, w), t.param(p, b));
            t.conv2d(x, w, Some(b), stride, pad).unwrap()
        });
    }
}

#[test]
fn conv_transpose2d_all_geometries() {
    for (stride, pad, k, op) in [(2, 1, 4, 0), (2, 1, 3, 1), (1, 0, 3, 0)] {
        let mut p = Params::new();
        let x = p.add("x", pseudo(&[2, 3, 4, 5], 4));
        let w = p.add("w", pseudo(&[3, 2, k, k], 5));
        let b = p.add("b", pseudo(&[2], 6));
        check(&mut p, |t, p| {
            let (x, w, b) = (t.param(p, x), t.param(p, w), t.param(p, b));
            t.conv_transpose2d(x, w, Some(b), stride, pad, op).unwrap()
        });
    }
}

#[test]
fn pointwise_and_structural_ops() {
    let mut p = Params::new();
    let a = p.add("a", pseudo(&[2, 3, 4, 4], 7));
    let b = p.add("b", pseudo(&[2, 3, 4, 4], 8));
    check(&mut p, |t, p| {
        let (a, b) = (t.param(p, a), t.param(p, b));
        let s = t.add(a, b).unwrap();
        let d = t.sub(s, b).unwrap();
        let r = t.relu(d);
        let l = t.leaky_relu(b, 0.2);
        let th = t.tanh(l);
        let sg = t.sigmoid(a);
        let ab = t.abs(sg);
        let c = t.concat(&[r, th, ab]).unwrap();
        let c = t.scale(c, 1.7);
        let rp = t.reflect_pad(c, 2).unwrap();
        t.instance_norm(rp, 1e-5).unwrap()
    });
}

#[test]
fn broadcast_mul_and_pools() {
    let mut p = Params::new();
    let f = p.add("f", pseudo(&[2, 4, 3, 5], 9));
    let g = p.add("gamma", pseudo(&[1, 1, 1, 1], 10));
    check(&mut p, |t, p| {
        let (f, g) = (t.param(p, f), t.param(p, g));
        let cm = t.spatial_mean(f).unwrap();
        let cx = t.spatial_max(f).unwrap();
        let c = t.add(cm, cx).unwrap();
        let gate = t.sigmoid(c);
        let f1 = t.mul(f, gate).unwrap();
        let sm = t.channel_mean(f1).unwrap();
        let sx = t.channel_max(f1).unwrap();
        let s = t.add(sm, sx).unwrap();
        let f2 = t.mul(f1, s).unwrap();
        t.mul(f2, g).unwrap()
    });
}

#[test]
fn matmul_softmax_reshape() {
    for (ta, tb) in [(false, false), (true, false), (false, true), (true, true)] {
        let mut p = Params::new();
        let a_shape = if ta { [2, 4, 3] } else { [2, 3, 4] };
        let b_shape = if tb { [2, 5, 4] } else { [2, 4, 5] };
        let a = p.add("a", pseudo(&a_shape, 11));
        let b = p.add("b", pseudo(&b_shape, 12));
        check(&mut p, |t, p| {
            let (a, b) = (t.param(p, a), t.param(p, b));
            let m = t.matmul(a, b, ta, tb).unwrap();
            let s = t.softmax_last(m).unwrap();
            t.reshape(s, &[6, 5]).unwrap()
        });
    }
}

#[test]
fn losses() {
    let mut p = Params::new();
    let x = p.add("x", pseudo(&[1, 1, 3, 3], 13));
    check(&mut p, |t, p| {
        let x = t.param(p, x);
        let a = t.bce_with_logits(x, 1.0);
        let b = t.bce_with_logits(x, 0.0);
        let c = t.mse_to_const(x, 0.3);
        let s = t.add(a, b).unwrap();
        t.add(s, c).unwrap()
    });
}

#[test]
fn spectral_norm_backward() {
    let mut p = Params::new();
    let w = p.add("w", pseudo(&[3, 2, 2, 2], 14));
    let u = [0.6, 0.0, 0.8];
    let v: Vec<f64> = {
        let raw = pseudo(&[8], 15).into_data();
        let n = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
        raw.iter().map(|x| x / n).collect()
    };
    check(&mut p, |t, p| {
        let w = t.param(p, w);
        t.spectral_norm(w, &u, &v).unwrap()
    });
}

#[test]
fn shared_parameter_accumulates() {
    let mut p = Params::new();
    let w = p.add("w", pseudo(&[2, 2, 1, 1], 16));
    let x = p.add("x", pseudo(&[1, 2, 3, 3], 17));
    check(&mut p, |t, p| {
        let x = t.param(p, x);
        let w1 = t.param(p, w);
        let y = t.conv2d(x, w1, None, 1, 0).unwrap();
        let w2 = t.param(p, w);
        t.conv2d(y, w2, None, 1, 0).unwrap()
    });
}
