//! Independent reference implementations used by the integration tests.
#![allow(dead_code)]

use std::collections::HashMap;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tabext_core::evalmetrics::{ClassMetrics, MetricsReport};
use tabext_core::features::{alignment_groups, Axis};
use tabext_core::ingest::Token;
use tabext_core::neuralnet::Mlp;

/// Forward pass with plain loops over the layer parameters.
pub fn forward_oracle(m: &Mlp, x: &[f64]) -> f64 {
    let mut a = x.to_vec();
    let n = m.layers().len();
    for (l, layer) in m.layers().iter().enumerate() {
        let mut z = vec![0.0; layer.out_dim()];
        for (o, zo) in z.iter_mut().enumerate() {
            let mut s = layer.bias[o];
            for (i, ai) in a.iter().enumerate() {
                s += layer.weights[[o, i]] * ai;
            }
            *zo = s;
        }
        a = if l + 1 == n {
            z.iter().map(|v| 1.0 / (1.0 + (-v).exp())).collect()
        } else {
            z.iter().map(|v| if *v > 0.0 { *v } else { 0.0 }).collect()
        };
    }
    a[0]
}

/// Mean binary cross-entropy written out directly from its definition.
pub fn bce_oracle(p: &[f64], y: &[f64]) -> f64 {
    let eps = 1e-7;
    let mut s = 0.0;
    for (&p, &y) in p.iter().zip(y) {
        let p = p.max(eps).min(1.0 - eps);
        s += if y == 1.0 { -p.ln() } else { -(1.0 - p).ln() };
    }
    s / p.len() as f64
}

pub struct GradCheck {
    pub checked: usize,
    pub skipped_small: usize,
    pub skipped_kink: usize,
    pub worst_rel: f64,
    pub failures: Vec<String>,
}

fn relu_signs(m: &Mlp, x: &Array2<f64>) -> Vec<bool> {
    let cache = m.forward_batch(x.view()).unwrap();
    let hidden = cache.pre.len() - 1;
    cache.pre[..hidden].iter().flat_map(|z| z.iter().map(|v| *v > 0.0)).collect()
}

/// Central finite differences against `Mlp::backward` on every parameter.
/// Coordinates where a perturbation flips a ReLU are not differentiable
/// there and are skipped.
pub fn gradient_check(m: &Mlp, x: &Array2<f64>, y: &[f64], h: f64, tol: f64) -> GradCheck {
    let (grads, _) = m.backward(x.view(), y).unwrap();
    let base = relu_signs(m, x);
    let mut out = GradCheck {
        checked: 0,
        skipped_small: 0,
        skipped_kink: 0,
        worst_rel: 0.0,
        failures: Vec::new(),
    };
    let mut probe = m.clone();
    for l in 0..m.layers().len() {
        let (rows, cols) = m.layers()[l].weights.dim();
        let coords: Vec<(usize, Option<usize>)> = (0..rows)
            .flat_map(|r| (0..cols).map(move |c| (r, Some(c))))
            .chain((0..rows).map(|r| (r, None)))
            .collect();
        for (r, c) in coords {
            let analytic = match c {
                Some(c) => grads.weights[l][[r, c]],
                None => grads.biases[l][r],
            };
            let mut eval = |delta: f64| {
                let layer = &mut probe.layers_mut()[l];
                let p = match c {
                    Some(c) => &mut layer.weights[[r, c]],
                    None => &mut layer.bias[r],
                };
                let orig = *p;
                *p = orig + delta;
                let loss = probe.loss(x.view(), y).unwrap();
                let signs = relu_signs(&probe, x);
                let layer = &mut probe.layers_mut()[l];
                match c {
                    Some(c) => layer.weights[[r, c]] = orig,
                    None => layer.bias[r] = orig,
                }
                (loss, signs)
            };
            let (lp, sp) = eval(h);
            let (lm, sm) = eval(-h);
            if sp != base || sm != base {
                out.skipped_kink += 1;
                continue;
            }
            let numeric = (lp - lm) / (2.0 * h);
            if analytic.abs() < 1e-8 && numeric.abs() < 1e-8 {
                out.skipped_small += 1;
                continue;
            }
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs());
            out.checked += 1;
            out.worst_rel = out.worst_rel.max(rel);
            if rel >= tol {
                out.failures.push(format!(
                    "layer {l} {:?}: analytic {analytic:e} numeric {numeric:e} rel {rel:e}",
                    (r, c)
                ));
            }
        }
    }
    out
}

/// A random 8-layer network with input width 4..=16 and hidden widths 3..=8.
pub fn random_small_net(rng: &mut ChaCha8Rng) -> Mlp {
    let mut dims = vec![rng.random_range(4..=16)];
    dims.extend((0..6).map(|_| rng.random_range(3..=8)));
    dims.push(1);
    let mut m = Mlp::new(&dims, rng);
    // non-zero biases so bias gradients are exercised away from symmetry
    for layer in m.layers_mut() {
        layer.bias.mapv_inplace(|_| rng.random_range(-0.1..0.1));
    }
    m
}

/// Partition of indices into connected components of the graph joining
/// coordinates at most `tol` apart, by repeated closure over all pairs.
pub fn closure_components(coords: &[u32], tol: u32) -> Vec<usize> {
    let n = coords.len();
    let mut comp: Vec<usize> = (0..n).collect();
    loop {
        let mut changed = false;
        for i in 0..n {
            for j in 0..n {
                if coords[i].abs_diff(coords[j]) <= tol && comp[j] < comp[i] {
                    comp[i] = comp[j];
                    changed = true;
                }
            }
        }
        if !changed {
            return comp;
        }
    }
}

/// Check one page and axis against the closure oracle; returns a mismatch
/// description if any.
pub fn compare_alignment(tokens: &[Token], axis: Axis, tol: u32) -> Option<String> {
    let coords: Vec<u32> = tokens
        .iter()
        .map(|t| match axis {
            Axis::Left => t.left,
            Axis::Right => t.left + t.width,
        })
        .collect();
    let got = alignment_groups(tokens, axis, tol);
    let want = closure_components(&coords, tol);
    let mut sizes: HashMap<usize, u32> = HashMap::new();
    for c in &want {
        *sizes.entry(*c).or_default() += 1;
    }
    for i in 0..tokens.len() {
        for j in 0..tokens.len() {
            if (got[i].group_id == got[j].group_id) != (want[i] == want[j]) {
                return Some(format!("{axis:?}: tokens {i} and {j} (coords {} {})", coords[i], coords[j]));
            }
        }
        if got[i].group_count != sizes[&want[i]] {
            return Some(format!("{axis:?}: token {i} count {} != {}", got[i].group_count, sizes[&want[i]]));
        }
        for j in 0..tokens.len() {
            if got[i].group_id < got[j].group_id && coords[i] >= coords[j] {
                return Some(format!("{axis:?}: group ids not ascending with coordinate"));
            }
        }
    }
    None
}

/// 100-token page with clustered and scattered edges.
pub fn random_page(rng: &mut ChaCha8Rng, n: usize) -> Vec<Token> {
    let anchors: Vec<u32> = (0..rng.random_range(1..8)).map(|_| rng.random_range(0..2300)).collect();
    (0..n)
        .map(|i| {
            let left = if rng.random_bool(0.6) {
                let a = anchors[rng.random_range(0..anchors.len())];
                (a + rng.random_range(0..25)).saturating_sub(12)
            } else {
                rng.random_range(0..2400)
            };
            Token {
                level: 5,
                page_num: 1,
                block_num: rng.random_range(1..6),
                par_num: 1,
                line_num: rng.random_range(1..10),
                word_num: i as u32 + 1,
                left,
                top: rng.random_range(0..3400),
                width: if rng.random_bool(0.5) { 40 } else { rng.random_range(5..200) },
                height: 40,
                conf: 90.0,
                text: "x".into(),
            }
        })
        .collect()
}

/// Report rebuilt from raw counts, with the usual zero-division rule.
pub fn metrics_oracle(pred: &[u8], truth: &[u8]) -> MetricsReport {
    let mut tp = 0u64;
    let mut fp = 0u64;
    let mut fn_ = 0u64;
    let mut tn = 0u64;
    for (p, t) in pred.iter().zip(truth) {
        match (p, t) {
            (1, 1) => tp += 1,
            (1, 0) => fp += 1,
            (0, 1) => fn_ += 1,
            _ => tn += 1,
        }
    }
    let mut zero = false;
    let mut div = |a: u64, b: u64| {
        if b == 0 {
            zero = true;
            0.0
        } else {
            a as f64 / b as f64
        }
    };
    let p1 = div(tp, tp + fp);
    let r1 = div(tp, tp + fn_);
    let p0 = div(tn, tn + fn_);
    let r0 = div(tn, tn + fp);
    let f = |p: f64, r: f64| if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    let c1 = ClassMetrics { precision: p1, recall: r1, f1: f(p1, r1), support: tp + fn_ };
    let c0 = ClassMetrics { precision: p0, recall: r0, f1: f(p0, r0), support: tn + fp };
    let n = (tp + fp + fn_ + tn) as f64;
    let (w0, w1) = (c0.support as f64 / n, c1.support as f64 / n);
    MetricsReport {
        class_0: c0,
        class_1: c1,
        accuracy: (tp + tn) as f64 / n,
        macro_avg: tabext_core::evalmetrics::Averages {
            precision: (p0 + p1) / 2.0,
            recall: (r0 + r1) / 2.0,
            f1: (c0.f1 + c1.f1) / 2.0,
        },
        weighted_avg: tabext_core::evalmetrics::Averages {
            precision: w0 * p0 + w1 * p1,
            recall: w0 * r0 + w1 * r1,
            f1: w0 * c0.f1 + w1 * c1.f1,
        },
        confusion: tabext_core::evalmetrics::Confusion { tp, fp, fn_, tn },
        total: tp + fp + fn_ + tn,
        zero_division: zero,
    }
}

pub fn random_pairs(rng: &mut ChaCha8Rng, n: usize) -> (Vec<u8>, Vec<u8>) {
    let bias: f64 = rng.random_range(0.05..0.95);
    let pred = (0..n).map(|_| u8::from(rng.random_bool(bias))).collect();
    let truth = (0..n).map(|_| u8::from(rng.random_bool(0.3))).collect();
    (pred, truth)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
