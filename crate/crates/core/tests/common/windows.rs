//! Reference window attention written directly from the definition: dense
//! masked attention for W-MSA and an explicit roll/partition/unroll for
//! SW-MSA.

use sightgrasp::graspnet::{ParamSet, Tensor};

pub struct AttnParams<'a> {
    pub qkv_w: &'a Tensor,
    pub qkv_b: &'a Tensor,
    pub bias: &'a Tensor,
    pub proj_w: &'a Tensor,
    pub proj_b: &'a Tensor,
}

impl<'a> AttnParams<'a> {
    pub fn from_set(p: &'a ParamSet, prefix: &str) -> Self {
        let g = |n: &str| p.get(&format!("{prefix}.{n}")).unwrap();
        Self { qkv_w: g("qkv.weight"), qkv_b: g("qkv.bias"), bias: g("rel_bias"), proj_w: g("proj.weight"), proj_b: g("proj.bias") }
    }
}

fn affine(x: &[f64], w: &Tensor, b: &Tensor) -> Vec<f64> {
    let (n_in, n_out) = (w.shape[0], w.shape[1]);
    (0..n_out).map(|j| b.data[j] + (0..n_in).map(|i| x[i] * w.data[i * n_out + j]).sum::<f64>()).collect()
}

/// One attention evaluation over a list of tokens with an explicit
/// admissibility predicate and relative coordinates.
#[allow(clippy::too_many_arguments)]
fn attend(
    tokens: &[Vec<f64>],
    coords: &[(i64, i64)],
    allowed: &dyn Fn(usize, usize) -> bool,
    p: &AttnParams,
    heads: usize,
    m: usize,
) -> Vec<Vec<f64>> {
    let c = p.proj_w.shape[0];
    let d = c / heads;
    let span = 2 * m as i64 - 1;
    let qkv: Vec<Vec<f64>> = tokens.iter().map(|t| affine(t, p.qkv_w, p.qkv_b)).collect();
    let n = tokens.len();
    let mut out = vec![vec![0.0; c]; n];
    for i in 0..n {
        for hd in 0..heads {
            let mut logits = Vec::new();
            for j in 0..n {
                if !allowed(i, j) {
                    continue;
                }
                let dot: f64 = (0..d).map(|k| qkv[i][hd * d + k] * qkv[j][c + hd * d + k]).sum();
                let ry = coords[i].0 - coords[j].0 + m as i64 - 1;
                let rx = coords[i].1 - coords[j].1 + m as i64 - 1;
                let b = p.bias.data[((ry * span + rx) as usize) * heads + hd];
                logits.push((j, dot / (d as f64).sqrt() + b));
            }
            let mx = logits.iter().map(|l| l.1).fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = logits.iter().map(|l| (l.1 - mx).exp()).sum();
            for &(j, l) in &logits {
                let a = (l - mx).exp() / z;
                for k in 0..d {
                    out[i][hd * d + k] += a * qkv[j][2 * c + hd * d + k];
                }
            }
        }
    }
    out.iter().map(|o| affine(o, p.proj_w, p.proj_b)).collect()
}

fn token(x: &Tensor, bi: usize, y: usize, xx: usize) -> Vec<f64> {
    let (h, w, c) = (x.shape[1], x.shape[2], x.shape[3]);
    let base = ((bi * h + y) * w + xx) * c;
    x.data[base..base + c].to_vec()
}

/// Non-shifted windows as a dense `HW × HW` attention whose mask admits only
/// pairs inside the same `win × win` block.
pub fn dense_block_masked(x: &Tensor, p: &AttnParams, heads: usize, m: usize) -> Tensor {
    let (b, h, w, c) = (x.shape[0], x.shape[1], x.shape[2], x.shape[3]);
    let win = if h.max(w) <= m { h.max(w) } else { m };
    let mut out = Tensor::zeros(&[b, h, w, c]);
    for bi in 0..b {
        let pos: Vec<(usize, usize)> = (0..h).flat_map(|y| (0..w).map(move |xx| (y, xx))).collect();
        let tokens: Vec<Vec<f64>> = pos.iter().map(|&(y, xx)| token(x, bi, y, xx)).collect();
        let coords: Vec<(i64, i64)> = pos.iter().map(|&(y, xx)| (y as i64, xx as i64)).collect();
        let same = |i: usize, j: usize| pos[i].0 / win == pos[j].0 / win && pos[i].1 / win == pos[j].1 / win;
        let res = attend(&tokens, &coords, &same, p, heads, m);
        for (t, r) in res.iter().enumerate() {
            let base = (bi * h * w + t) * c;
            out.data[base..base + c].copy_from_slice(r);
        }
    }
    out
}

/// Shifted windows: zero-pad to a multiple of `m`, roll by `-m/2`, split into
/// windows, mask pairs from different slices of the rolled grid and padded
/// keys, attend per window, then roll back and crop.
pub fn explicit_shifted(x: &Tensor, p: &AttnParams, heads: usize, m: usize) -> Tensor {
    let (b, h, w, c) = (x.shape[0], x.shape[1], x.shape[2], x.shape[3]);
    let (win, s) = if h.max(w) <= m { (h.max(w), 0) } else { (m, m / 2) };
    let hp = h.div_ceil(win) * win;
    let wp = w.div_ceil(win) * win;
    let slice = |v: usize, n: usize| {
        if s == 0 {
            0
        } else if v < n - win {
            0
        } else if v < n - s {
            1
        } else {
            2
        }
    };
    let mut out = Tensor::zeros(&[b, h, w, c]);
    for bi in 0..b {
        // rolled[r][q] = padded[(r + s) % hp][(q + s) % wp]
        let orig = |r: usize, q: usize| ((r + s) % hp, (q + s) % wp);
        for wy in 0..hp / win {
            for wx in 0..wp / win {
                let cells: Vec<(usize, usize)> =
                    (0..win).flat_map(|ty| (0..win).map(move |tx| (wy * win + ty, wx * win + tx))).collect();
                let tokens: Vec<Vec<f64>> = cells
                    .iter()
                    .map(|&(r, q)| {
                        let (y, xx) = orig(r, q);
                        if y < h && xx < w {
                            token(x, bi, y, xx)
                        } else {
                            vec![0.0; c]
                        }
                    })
                    .collect();
                let coords: Vec<(i64, i64)> = cells.iter().map(|&(r, q)| (r as i64, q as i64)).collect();
                let ok = |i: usize, j: usize| {
                    let (jy, jx) = orig(cells[j].0, cells[j].1);
                    jy < h
                        && jx < w
                        && slice(cells[i].0, hp) == slice(cells[j].0, hp)
                        && slice(cells[i].1, wp) == slice(cells[j].1, wp)
                };
                let res = attend(&tokens, &coords, &ok, p, heads, m);
                for (t, &(r, q)) in cells.iter().enumerate() {
                    let (y, xx) = orig(r, q);
                    if y < h && xx < w {
                        let base = ((bi * h + y) * w + xx) * c;
                        out.data[base..base + c].copy_from_slice(&res[t]);
                    }
                }
            }
        }
    }
    out
}
