//! Independent reference implementations used by the integration tests.
//! Everything here works on plain nested `Vec<f64>` with explicit loops.
#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use sumsr_core::autodiff::{Mat, Tape};
use sumsr_core::networks::{BiLstm, Linear, LstmCell, Parameters, Reconstructor, Selector};
use sumsr_core::segmentation::ScatterTable;

pub type Rows = Vec<Vec<f64>>;

pub fn rows(m: &Mat) -> Rows {
    m.outer_iter().map(|r| r.to_vec()).collect()
}

fn affine(x: &[f64], lin: &Linear) -> Vec<f64> {
    let out = lin.weight.ncols();
    let mut y = vec![0.0; out];
    for (j, yj) in y.iter_mut().enumerate() {
        let mut acc = lin.bias[[0, j]];
        for (k, xk) in x.iter().enumerate() {
            acc += xk * lin.weight[[k, j]];
        }
        *yj = acc;
    }
    y
}

fn sig(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// One LSTM step; gate blocks in the order input, forget, candidate, output.
pub fn lstm_step(cell: &LstmCell, x: &[f64], h: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let hid = h.len();
    let mut pre = vec![0.0; 4 * hid];
    for (g, p) in pre.iter_mut().enumerate() {
        let mut acc = cell.bias[[0, g]];
        for (k, xk) in x.iter().enumerate() {
            acc += xk * cell.w_ih[[k, g]];
        }
        for (k, hk) in h.iter().enumerate() {
            acc += hk * cell.w_hh[[k, g]];
        }
        *p = acc;
    }
    let mut h2 = vec![0.0; hid];
    let mut c2 = vec![0.0; hid];
    for u in 0..hid {
        let i = sig(pre[u]);
        let f = sig(pre[hid + u]);
        let g = pre[2 * hid + u].tanh();
        let o = sig(pre[3 * hid + u]);
        c2[u] = f * c[u] + i * g;
        h2[u] = o * c2[u].tanh();
    }
    (h2, c2)
}

/// Per-layer, per-direction final `(h, c)`.
pub type Finals = Vec<[(Vec<f64>, Vec<f64>); 2]>;

pub fn bilstm(net: &BiLstm, xs: &Rows) -> (Rows, Finals) {
    let n = xs.len();
    let mut input = xs.clone();
    let mut finals = Vec::new();
    for cells in &net.layers {
        let hid = cells[0].w_hh.nrows();
        let mut fwd = vec![vec![]; n];
        let mut bwd = vec![vec![]; n];
        let (mut h, mut c) = (vec![0.0; hid], vec![0.0; hid]);
        for t in 0..n {
            let (h2, c2) = lstm_step(&cells[0], &input[t], &h, &c);
            h = h2;
            c = c2;
            fwd[t] = h.clone();
        }
        let f_final = (h, c);
        let (mut h, mut c) = (vec![0.0; hid], vec![0.0; hid]);
        for t in (0..n).rev() {
            let (h2, c2) = lstm_step(&cells[1], &input[t], &h, &c);
            h = h2;
            c = c2;
            bwd[t] = h.clone();
        }
        finals.push([f_final, (h, c)]);
        input = (0..n).map(|t| [fwd[t].clone(), bwd[t].clone()].concat()).collect();
    }
    (input, finals)
}

pub fn selector_scores(sel: &Selector, x: &Mat) -> Vec<f64> {
    let z: Rows = rows(x).iter().map(|r| affine(r, &sel.input)).collect();
    let (h, _) = bilstm(&sel.lstm, &z);
    h.iter()
        .map(|r| {
            let logits = affine(r, &sel.head);
            let a = logits[0] / sel.tau;
            let b = logits[1] / sel.tau;
            let m = a.max(b);
            let ea = (a - m).exp();
            let eb = (b - m).exp();
            ea / (ea + eb)
        })
        .collect()
}

fn softmax(v: &[f64]) -> Vec<f64> {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

/// Reconstruction and per-step attention weights.
pub fn reconstruct(rec: &Reconstructor, x: &Mat) -> (Rows, Rows) {
    let xs = rows(x);
    let n = xs.len();
    let (y, finals) = bilstm(&rec.encoder, &xs);
    let top = finals.last().unwrap();
    let mut z_prev = [top[0].0.clone(), top[1].0.clone()].concat();
    let d_h = z_prev.len();
    let mut states: Finals = finals.clone();
    let mut prev_out = vec![0.0; d_h];
    let mut outs = Vec::new();
    let mut attn = Vec::new();
    for _ in 0..n {
        // e_t = y_t . (W_b z_prev)
        let mut q = vec![0.0; d_h];
        for (r, qr) in q.iter_mut().enumerate() {
            for (c, zc) in z_prev.iter().enumerate() {
                *qr += rec.attention[[r, c]] * zc;
            }
        }
        let e: Vec<f64> = y.iter().map(|yt| yt.iter().zip(&q).map(|(a, b)| a * b).sum()).collect();
        let w = softmax(&e);
        let mut ctx = vec![0.0; d_h];
        for (t, wt) in w.iter().enumerate() {
            for k in 0..d_h {
                ctx[k] += wt * y[t][k];
            }
        }
        attn.push(w);
        let mut input = [ctx, prev_out.clone()].concat();
        for (l, cells) in rec.decoder.layers.iter().enumerate() {
            let mut hs = Vec::new();
            for dir in 0..2 {
                let (h, c) = &states[l][dir];
                let (h2, c2) = lstm_step(&cells[dir], &input, h, c);
                hs.push(h2.clone());
                states[l][dir] = (h2, c2);
            }
            input = hs.concat();
        }
        outs.push(affine(&input, &rec.output));
        z_prev = input.clone();
        prev_out = input;
    }
    (outs, attn)
}

/// Brute-force 0/1 knapsack with the documented tie rules; the value of a
/// subset is summed from its last chosen item back to the first.
pub fn knapsack_brute(values: &[f64], lengths: &[usize], budget: usize) -> (f64, usize, Vec<bool>) {
    let n = values.len();
    let mut best: Option<(f64, usize, Vec<bool>)> = None;
    for bits in 0u32..(1 << n) {
        let sel: Vec<bool> = (0..n).map(|i| bits & (1 << i) != 0).collect();
        let len: usize = (0..n).filter(|&i| sel[i]).map(|i| lengths[i]).sum();
        if len > budget {
            continue;
        }
        let value = (0..n).rev().filter(|&i| sel[i]).fold(0.0, |acc, i| values[i] + acc);
        let replace = match &best {
            None => true,
            Some((bv, bl, bs)) => value > *bv || (value == *bv && (len < *bl || (len == *bl && sel < *bs))),
        };
        if replace {
            best = Some((value, len, sel));
        }
    }
    best.unwrap()
}

/// Direct within-segment scatter `sum ||x_t - mean||^2`.
pub fn direct_scatter(x: &Mat, a: usize, b: usize) -> f64 {
    let d = x.ncols();
    let len = (b - a) as f64;
    let mut total = 0.0;
    for k in 0..d {
        let mean: f64 = (a..b).map(|t| x[[t, k]]).sum::<f64>() / len;
        total += (a..b).map(|t| (x[[t, k]] - mean).powi(2)).sum::<f64>();
    }
    total
}

fn combos(n: usize, k: usize, start: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    if cur.len() == k {
        out.push(cur.clone());
        return;
    }
    for c in start..n {
        cur.push(c);
        combos(n, k, c + 1, cur, out);
        cur.pop();
    }
}

/// Exhaustive minimum total scatter for exactly `k` change points, with all
/// minimizing change-point sets. Segment costs come from the same table the
/// solver uses and are summed left to right.
pub fn kts_exhaustive(x: &Mat, k: usize) -> (f64, Vec<Vec<usize>>) {
    let n = x.nrows();
    let table = ScatterTable::new(x);
    let mut sets = Vec::new();
    combos(n, k, 1, &mut Vec::new(), &mut sets);
    let mut best = f64::INFINITY;
    let mut argmins = Vec::new();
    for cps in sets {
        let mut bounds = vec![0];
        bounds.extend(&cps);
        bounds.push(n);
        let cost = bounds.windows(2).fold(0.0, |acc, w| acc + table.cost(w[0], w[1]));
        if cost < best {
            best = cost;
            argmins = vec![cps];
        } else if cost == best {
            argmins.push(cps);
        }
    }
    (best, argmins)
}

/// Mean F-score of uniformly random shot values pushed through the knapsack.
pub fn random_shot_fscore<R: rand::Rng>(
    lengths: &[usize],
    budget: usize,
    reference: &[bool],
    draws: usize,
    rng: &mut R,
) -> f64 {
    let mut total = 0.0;
    for _ in 0..draws {
        let values: Vec<f64> = lengths.iter().map(|_| rng.random::<f64>()).collect();
        let (_, _, sel) = knapsack_brute_or_dp(&values, lengths, budget);
        let mut mask = Vec::with_capacity(reference.len());
        for (i, &l) in lengths.iter().enumerate() {
            mask.extend(std::iter::repeat_n(sel[i], l));
        }
        total += fscore(&mask, reference);
    }
    total / draws as f64
}

fn knapsack_brute_or_dp(values: &[f64], lengths: &[usize], budget: usize) -> (f64, usize, Vec<bool>) {
    if values.len() <= 16 {
        knapsack_brute(values, lengths, budget)
    } else {
        let sel = sumsr_core::summarizer::knapsack_select(values, lengths, budget).unwrap();
        (0.0, 0, sel)
    }
}

/// Keyshot F-score on the 0-100 scale, zero for empty masks or no overlap.
pub fn fscore(pred: &[bool], reference: &[bool]) -> f64 {
    let tp = pred.iter().zip(reference).filter(|(a, b)| **a && **b).count() as f64;
    let np = pred.iter().filter(|v| **v).count() as f64;
    let nr = reference.iter().filter(|v| **v).count() as f64;
    if tp == 0.0 {
        return 0.0;
    }
    let p = tp / np;
    let r = tp / nr;
    200.0 * p * r / (p + r)
}

// Finite-difference gradient checks.

pub struct Model {
    pub sel: Selector,
    pub rec: Reconstructor,
    pub m: Mat,
}

/// Blended-summary model loss with gradients for every selector tensor,
/// every reconstructor tensor and `m`, in that order.
pub fn model_loss(model: &Model, x: &Mat, sigma: f64) -> (f64, Vec<Mat>) {
    let mut tape = Tape::new();
    let sv = model.sel.bind(&mut tape, true);
    let rv = model.rec.bind(&mut tape, true);
    let m = tape.param(model.m.clone());
    let xv = tape.constant(x.clone());
    let p = model.sel.forward(&mut tape, &sv, xv);
    let su = tape.blend(xv, p, m);
    let out = model.rec.forward(&mut tape, &rv, su).output;
    let lr = tape.sum_squared_diff(out, xv);
    let ls = tape.abs_mean_deviation(p, sigma);
    let loss = tape.add(lr, ls);
    let mut grads = tape.backward(loss);
    let mut vars = sv.vars();
    vars.extend(rv.vars());
    vars.push(m);
    let g = vars.iter().map(|&v| grads.take(v).unwrap()).collect();
    (tape.scalar(loss), g)
}

/// `sum(w * reconstruction)` through selector, blend and reconstructor, with
/// gradients in the order of [`model_loss`]. Its value carries no large
/// constant part, so central differences resolve even tiny derivatives.
pub fn projection_loss(model: &Model, x: &Mat, w: &Mat) -> (f64, Vec<Mat>) {
    let (n, d) = x.dim();
    let mut tape = Tape::new();
    let sv = model.sel.bind(&mut tape, true);
    let rv = model.rec.bind(&mut tape, true);
    let m = tape.param(model.m.clone());
    let xv = tape.constant(x.clone());
    let p = model.sel.forward(&mut tape, &sv, xv);
    let su = tape.blend(xv, p, m);
    let out = model.rec.forward(&mut tape, &rv, su).output;
    let wv = tape.constant(w.clone());
    let weighted = tape.mul(out, wv);
    let left = tape.constant(Mat::ones((1, n)));
    let right = tape.constant(Mat::ones((d, 1)));
    let rows = tape.matmul(left, weighted);
    let loss = tape.matmul(rows, right);
    let mut grads = tape.backward(loss);
    let mut vars = sv.vars();
    vars.extend(rv.vars());
    vars.push(m);
    let g = vars.iter().map(|&v| grads.take(v).unwrap()).collect();
    (tape.scalar(loss), g)
}

pub fn mask_loss(model: &Model, x: &Mat, replaced: &[bool]) -> (f64, Vec<Mat>) {
    let masked: Vec<usize> = (0..replaced.len()).filter(|&i| replaced[i]).collect();
    let mut tape = Tape::new();
    let rv = model.rec.bind(&mut tape, true);
    let m = tape.param(model.m.clone());
    let xv = tape.constant(x.clone());
    let vp = tape.replace_rows(xv, m, replaced);
    let out = model.rec.forward(&mut tape, &rv, vp).output;
    let loss = tape.masked_mean_squared_diff(vp, out, &masked);
    let mut grads = tape.backward(loss);
    let mut vars = rv.vars();
    vars.push(m);
    let g = vars.iter().map(|&v| grads.take(v).unwrap()).collect();
    (tape.scalar(loss), g)
}

pub fn tensor_names(model: &Model, with_selector: bool) -> Vec<String> {
    let mut names = Vec::new();
    if with_selector {
        names.extend(
            model
                .sel
                .named_params()
                .into_iter()
                .map(|(n, _)| format!("selector.{n}")),
        );
    }
    names.extend(
        model
            .rec
            .named_params()
            .into_iter()
            .map(|(n, _)| format!("reconstructor.{n}")),
    );
    names.push("mask".into());
    names
}

pub fn tensor_mut(model: &mut Model, with_selector: bool, idx: usize) -> &mut Mat {
    let n_sel = if with_selector {
        model.sel.named_params().len()
    } else {
        0
    };
    let n_rec = model.rec.named_params().len();
    if idx < n_sel {
        model.sel.params_mut().into_iter().nth(idx).unwrap()
    } else if idx < n_sel + n_rec {
        model.rec.params_mut().into_iter().nth(idx - n_sel).unwrap()
    } else {
        &mut model.m
    }
}

/// Worst relative error between analytic and central-difference gradients
/// over a few sampled entries of every tensor.
pub fn check_gradients(
    model: Model,
    with_selector: bool,
    loss: impl Fn(&Model) -> (f64, Vec<Mat>),
    rng: &mut ChaCha8Rng,
) -> Vec<(String, f64)> {
    check_gradient_entries(model, with_selector, loss, Some((3, rng)))
}

/// Like [`check_gradients`] but over every entry of every tensor.
pub fn check_all_gradients(
    model: Model,
    with_selector: bool,
    loss: impl Fn(&Model) -> (f64, Vec<Mat>),
) -> Vec<(String, f64)> {
    check_gradient_entries(model, with_selector, loss, None)
}

fn check_gradient_entries(
    mut model: Model,
    with_selector: bool,
    loss: impl Fn(&Model) -> (f64, Vec<Mat>),
    mut sample: Option<(usize, &mut ChaCha8Rng)>,
) -> Vec<(String, f64)> {
    let step = 1e-5;
    let (_, analytic) = loss(&model);
    let names = tensor_names(&model, with_selector);
    assert_eq!(names.len(), analytic.len());
    let mut report = Vec::new();
    for (idx, name) in names.iter().enumerate() {
        let (r, c) = analytic[idx].dim();
        let mut worst: f64 = 0.0;
        let entries: Vec<(usize, usize)> = match &mut sample {
            Some((k, rng)) => (0..*k)
                .map(|_| (rng.random_range(0..r), rng.random_range(0..c)))
                .collect(),
            None => (0..r).flat_map(|i| (0..c).map(move |j| (i, j))).collect(),
        };
        for (i, j) in entries {
            let orig = tensor_mut(&mut model, with_selector, idx)[[i, j]];
            tensor_mut(&mut model, with_selector, idx)[[i, j]] = orig + step;
            let up = loss(&model).0;
            tensor_mut(&mut model, with_selector, idx)[[i, j]] = orig - step;
            let down = loss(&model).0;
            tensor_mut(&mut model, with_selector, idx)[[i, j]] = orig;
            let numeric = (up - down) / (2.0 * step);
            let a = analytic[idx][[i, j]];
            let scale = a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max((a - numeric).abs() / scale);
        }
        report.push((name.clone(), worst));
    }
    report
}

pub fn tiny_model(rng: &mut ChaCha8Rng, d: usize, d_h: usize) -> Model {
    let sel = Selector::new(rng, d, d_h, 0.5).unwrap();
    let rec = Reconstructor::new(rng, d, d_h).unwrap();
    let m = random_mat(rng, 1, d) * 0.5;
    Model { sel, rec, m }
}

pub fn random_mat(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Mat {
    ndarray::Array2::from_shape_simple_fn((n, d), || rng.random_range(-1.0..1.0))
}
