#![allow(dead_code)]

pub mod windows;

use rand::Rng;
use sightgrasp::graspnet::{ParamSet, Tensor};

pub fn rand_tensor(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Random attention parameters under `prefix` for `c` channels, `heads`
/// heads and window size `m`.
pub fn rand_attention_params(prefix: &str, c: usize, heads: usize, m: usize, rng: &mut impl Rng) -> ParamSet {
    let span = 2 * m - 1;
    let mut p = ParamSet::default();
    p.insert(format!("{prefix}.qkv.weight"), rand_tensor(&[c, 3 * c], rng));
    p.insert(format!("{prefix}.qkv.bias"), rand_tensor(&[3 * c], rng));
    p.insert(format!("{prefix}.rel_bias"), rand_tensor(&[span * span, heads], rng));
    p.insert(format!("{prefix}.proj.weight"), rand_tensor(&[c, c], rng));
    p.insert(format!("{prefix}.proj.bias"), rand_tensor(&[c], rng));
    p
}

/// Random small window-attention case: batch, grid, heads, head dim, window.
#[derive(Debug, Clone, Copy)]
pub struct WindowCase {
    pub batch: usize,
    pub h: usize,
    pub w: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub window: usize,
}

impl WindowCase {
    pub fn random(rng: &mut impl Rng) -> Self {
        Self {
            batch: rng.random_range(1..=2),
            h: rng.random_range(2..=10),
            w: rng.random_range(2..=10),
            heads: rng.random_range(1..=3),
            head_dim: rng.random_range(1..=3),
            window: rng.random_range(2..=4),
        }
    }

    pub fn channels(&self) -> usize {
        self.heads * self.head_dim
    }
}

/// Largest absolute difference between library window attention and the
/// reference for one case, non-shifted and shifted.
pub fn window_attention_errors(case: WindowCase, rng: &mut impl Rng) -> (f64, f64) {
    use sightgrasp::graspnet::{Net, WindowPlan};
    let c = case.channels();
    let params = rand_attention_params("a", c, case.heads, case.window, rng);
    let x = rand_tensor(&[case.batch, case.h, case.w, c], rng);
    let ap = windows::AttnParams::from_set(&params, "a");
    let mut errs = [0.0; 2];
    for (k, shifted) in [false, true].into_iter().enumerate() {
        let plan = WindowPlan::new(case.h, case.w, case.window, shifted);
        let mut net = Net::new(&params);
        let xv = net.graph.leaf(x.clone());
        let y = net.window_attention(xv, "a", case.heads, &plan, case.window).unwrap();
        let got = net.graph.value(y);
        let expect = if shifted {
            windows::explicit_shifted(&x, &ap, case.heads, case.window)
        } else {
            windows::dense_block_masked(&x, &ap, case.heads, case.window)
        };
        errs[k] = got.max_abs_diff(&expect);
    }
    (errs[0], errs[1])
}
