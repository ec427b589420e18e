//! Hierarchical shifted-window transformer producing dense grasp maps.

use std::collections::BTreeMap;
use std::rc::Rc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::params::{trunc_normal, ParamSet};
use super::tape::{Graph, Var};
use super::tensor::Tensor;
use super::GraspNetError;
use crate::grasp::GraspMaps;

pub const NUM_STAGES: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub input_size: usize,
    pub in_channels: usize,
    pub patch_size: usize,
    pub base_channels: usize,
    /// Block pairs (W-MSA then SW-MSA) per stage.
    pub depths: [usize; NUM_STAGES],
    pub heads: [usize; NUM_STAGES],
    pub window_size: usize,
    pub mlp_ratio: usize,
    /// Loss weights for quality, angle and width.
    pub loss_weights: [f64; 3],
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_size: 224,
            in_channels: 3,
            patch_size: 4,
            base_channels: 96,
            depths: [2, 2, 2, 2],
            heads: [3, 6, 12, 24],
            window_size: 7,
            mlp_ratio: 4,
            loss_weights: [1.0, 1.0, 1.0],
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// 32×32 input, 8 channels, window 4.
    pub fn toy() -> Self {
        Self { input_size: 32, base_channels: 8, depths: [1; 4], heads: [1, 2, 2, 4], window_size: 4, ..Self::default() }
    }

    /// 16×16 input, 4 channels, window 2, used for gradient checks. The patch
    /// is 2 so that four halvings still leave a 1×1 grid.
    pub fn tiny() -> Self {
        Self {
            input_size: 16,
            patch_size: 2,
            base_channels: 4,
            depths: [1; 4],
            heads: [1, 2, 2, 4],
            window_size: 2,
            ..Self::default()
        }
    }

    /// Small network at the 224×224 scene resolution.
    pub fn scene() -> Self {
        Self { base_channels: 8, depths: [1; 4], heads: [1, 2, 2, 4], ..Self::default() }
    }

    pub fn channels(&self, stage: usize) -> usize {
        self.base_channels << stage
    }

    pub fn grid(&self, stage: usize) -> usize {
        self.input_size / self.patch_size >> stage
    }

    pub fn validate(&self) -> Result<(), GraspNetError> {
        let bad = |m: String| Err(GraspNetError::InvalidConfig(m));
        if self.patch_size == 0 || self.input_size == 0 || self.base_channels == 0 || self.in_channels == 0 {
            return bad("sizes must be positive".into());
        }
        let unit = self.patch_size << (NUM_STAGES - 1);
        if self.input_size % unit != 0 {
            return bad(format!("input {} is not divisible by patch·8 = {unit}", self.input_size));
        }
        if self.window_size == 0 || self.mlp_ratio == 0 {
            return bad("window and mlp ratio must be positive".into());
        }
        for s in 0..NUM_STAGES {
            if self.heads[s] == 0 || self.channels(s) % self.heads[s] != 0 {
                return bad(format!("stage {s}: {} channels do not split into {} heads", self.channels(s), self.heads[s]));
            }
        }
        Ok(())
    }
}

/// Window layout for one attention layer on an `h`×`w` grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowPlan {
    pub window: usize,
    pub shift: usize,
    pub padded: (usize, usize),
}

impl WindowPlan {
    /// Grids no larger than the window use one window without shift.
    pub fn new(h: usize, w: usize, window_size: usize, shifted: bool) -> Self {
        if h.max(w) <= window_size {
            let win = h.max(w);
            return Self { window: win, shift: 0, padded: (win, win) };
        }
        let pad = |n: usize| n.div_ceil(window_size) * window_size;
        let shift = if shifted { window_size / 2 } else { 0 };
        Self { window: window_size, shift, padded: (pad(h), pad(w)) }
    }

    pub fn num_windows(&self) -> usize {
        (self.padded.0 / self.window) * (self.padded.1 / self.window)
    }

    pub fn tokens(&self) -> usize {
        self.window * self.window
    }

    /// Original padded coordinate of token `t` in window `wi`.
    pub fn source(&self, wi: usize, t: usize) -> (usize, usize) {
        let per_row = self.padded.1 / self.window;
        let (wy, wx) = (wi / per_row, wi % per_row);
        let (ty, tx) = (t / self.window, t % self.window);
        let y = (wy * self.window + ty + self.shift) % self.padded.0;
        let x = (wx * self.window + tx + self.shift) % self.padded.1;
        (y, x)
    }

    /// Window and token holding original coordinate `(y, x)`.
    pub fn locate(&self, y: usize, x: usize) -> (usize, usize) {
        let sy = (y + self.padded.0 - self.shift) % self.padded.0;
        let sx = (x + self.padded.1 - self.shift) % self.padded.1;
        let per_row = self.padded.1 / self.window;
        let wi = (sy / self.window) * per_row + sx / self.window;
        (wi, (sy % self.window) * self.window + sx % self.window)
    }

    /// Label of the contiguous region holding `(y, x)`; tokens attend to each
    /// other only within one region.
    pub fn region(&self, y: usize, x: usize) -> (usize, usize) {
        let label = |v: usize| if v < self.shift { 0 } else { 1 + (v - self.shift) / self.window };
        (label(y), label(x))
    }
}

/// Parameter lookup plus graph, caching one leaf per parameter.
pub struct Net<'a> {
    pub graph: Graph,
    params: &'a ParamSet,
    pub vars: BTreeMap<String, Var>,
}

impl<'a> Net<'a> {
    pub fn new(params: &'a ParamSet) -> Self {
        Self { graph: Graph::new(), params, vars: BTreeMap::new() }
    }

    pub fn p(&mut self, name: &str) -> Result<Var, GraspNetError> {
        if let Some(&v) = self.vars.get(name) {
            return Ok(v);
        }
        let v = self.graph.leaf(self.params.get(name)?.clone());
        self.vars.insert(name.to_string(), v);
        Ok(v)
    }

    fn linear(&mut self, x: Var, prefix: &str) -> Result<Var, GraspNetError> {
        let w = self.p(&format!("{prefix}.weight"))?;
        let b = self.p(&format!("{prefix}.bias"))?;
        self.graph.linear(x, w, b)
    }

    fn norm(&mut self, x: Var, prefix: &str) -> Result<Var, GraspNetError> {
        let g = self.p(&format!("{prefix}.gamma"))?;
        let b = self.p(&format!("{prefix}.beta"))?;
        self.graph.layer_norm(x, g, b)
    }

    /// `[B, H, W, Cin]` image to `[B, H/p, W/p, C]` tokens; each token is an
    /// affine map of one patch.
    pub fn patch_embed(&mut self, image: Var, patch: usize) -> Result<Var, GraspNetError> {
        let shape = self.graph.value(image).shape.clone();
        let [b, h, w, cin] = shape4(&shape)?;
        if h % patch != 0 || w % patch != 0 {
            return Err(GraspNetError::ShapeMismatch(format!("{h}×{w} image is not divisible into {patch}-patches")));
        }
        let (gh, gw) = (h / patch, w / patch);
        let mut idx = Vec::with_capacity(b * h * w * cin);
        for bi in 0..b {
            for py in 0..gh {
                for px in 0..gw {
                    for dy in 0..patch {
                        for dx in 0..patch {
                            for c in 0..cin {
                                idx.push(Some(((bi * h + py * patch + dy) * w + px * patch + dx) * cin + c));
                            }
                        }
                    }
                }
            }
        }
        let patches = self.graph.gather(image, Rc::new(idx), &[b, gh, gw, patch * patch * cin])?;
        self.linear(patches, "patch_embed")
    }

    /// Multi-head self-attention inside windows. `x` is `[B, H, W, C]`.
    pub fn window_attention(&mut self, x: Var, prefix: &str, heads: usize, plan: &WindowPlan, window_size: usize) -> Result<Var, GraspNetError> {
        let shape = self.graph.value(x).shape.clone();
        let [b, h, w, c] = shape4(&shape)?;
        if c % heads != 0 {
            return Err(GraspNetError::ShapeMismatch(format!("{c} channels into {heads} heads")));
        }
        let d = c / heads;
        let (nw, n) = (plan.num_windows(), plan.tokens());
        let qkv = self.linear(x, &format!("{prefix}.qkv"))?;

        // gather q, k, v as [B·nW·heads, n, d]
        let mut parts = Vec::with_capacity(3);
        for part in 0..3 {
            let mut idx = Vec::with_capacity(b * nw * heads * n * d);
            for bi in 0..b {
                for wi in 0..nw {
                    for hd in 0..heads {
                        for t in 0..n {
                            let (y, xx) = plan.source(wi, t);
                            for k in 0..d {
                                idx.push((y < h && xx < w).then(|| ((bi * h + y) * w + xx) * 3 * c + part * c + hd * d + k));
                            }
                        }
                    }
                }
            }
            parts.push(self.graph.gather(qkv, Rc::new(idx), &[b * nw * heads, n, d])?);
        }
        let logits = self.graph.bmm(parts[0], parts[1], true)?;
        let logits = self.graph.scale(logits, 1.0 / (d as f64).sqrt());

        let table = self.p(&format!("{prefix}.rel_bias"))?;
        let span = 2 * window_size - 1;
        let mut bidx = Vec::with_capacity(heads * n * n);
        for hd in 0..heads {
            for i in 0..n {
                for j in 0..n {
                    let (iy, ix) = (i / plan.window, i % plan.window);
                    let (jy, jx) = (j / plan.window, j % plan.window);
                    let ry = iy + window_size - 1 - jy;
                    let rx = ix + window_size - 1 - jx;
                    bidx.push(Some((ry * span + rx) * heads + hd));
                }
            }
        }
        let bias = self.graph.gather(table, Rc::new(bidx), &[heads, n, n])?;
        let logits = self.graph.add_repeat(logits, bias)?;

        let mask = attention_mask(plan, h, w, heads);
        let probs = self.graph.masked_softmax(logits, mask)?;
        let out = self.graph.bmm(probs, parts[2], false)?;

        // back to [B, H, W, C]
        let mut idx = Vec::with_capacity(b * h * w * c);
        for bi in 0..b {
            for y in 0..h {
                for xx in 0..w {
                    let (wi, t) = plan.locate(y, xx);
                    for hd in 0..heads {
                        for k in 0..d {
                            idx.push(Some((((bi * nw + wi) * heads + hd) * n + t) * d + k));
                        }
                    }
                }
            }
        }
        let merged = self.graph.gather(out, Rc::new(idx), &[b, h, w, c])?;
        self.linear(merged, &format!("{prefix}.proj"))
    }

    /// One pre-norm residual sub-block: attention then MLP.
    pub fn swin_sub_block(&mut self, x: Var, prefix: &str, heads: usize, plan: &WindowPlan, window_size: usize) -> Result<Var, GraspNetError> {
        let n1 = self.norm(x, &format!("{prefix}.norm1"))?;
        let a = self.window_attention(n1, &format!("{prefix}.attn"), heads, plan, window_size)?;
        let x_hat = self.graph.add(a, x)?;
        let n2 = self.norm(x_hat, &format!("{prefix}.norm2"))?;
        let h1 = self.linear(n2, &format!("{prefix}.mlp.fc1"))?;
        let h1 = self.graph.gelu(h1);
        let h2 = self.linear(h1, &format!("{prefix}.mlp.fc2"))?;
        self.graph.add(h2, x_hat)
    }

    /// W-MSA sub-block followed by an SW-MSA sub-block.
    pub fn swin_block(&mut self, x: Var, prefix: &str, heads: usize, window_size: usize) -> Result<Var, GraspNetError> {
        let shape = self.graph.value(x).shape.clone();
        let [_, h, w, _] = shape4(&shape)?;
        let plain = WindowPlan::new(h, w, window_size, false);
        let shifted = WindowPlan::new(h, w, window_size, true);
        let y = self.swin_sub_block(x, &format!("{prefix}.w"), heads, &plain, window_size)?;
        self.swin_sub_block(y, &format!("{prefix}.sw"), heads, &shifted, window_size)
    }

    /// 2×2 token groups concatenated, normalized and projected to `2C`.
    pub fn patch_merge(&mut self, x: Var, prefix: &str) -> Result<Var, GraspNetError> {
        let shape = self.graph.value(x).shape.clone();
        let [b, h, w, c] = shape4(&shape)?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(GraspNetError::OddGrid(h, w));
        }
        let (oh, ow) = (h / 2, w / 2);
        let mut idx = Vec::with_capacity(b * h * w * c);
        for bi in 0..b {
            for y in 0..oh {
                for xx in 0..ow {
                    for (dy, dx) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                        for k in 0..c {
                            idx.push(Some(((bi * h + 2 * y + dy) * w + 2 * xx + dx) * c + k));
                        }
                    }
                }
            }
        }
        let cat = self.graph.gather(x, Rc::new(idx), &[b, oh, ow, 4 * c])?;
        let normed = self.norm(cat, &format!("{prefix}.norm"))?;
        let red = self.p(&format!("{prefix}.reduction"))?;
        self.graph.matmul(normed, red)
    }

    /// Nearest-neighbour upsampling of `[B, H, W, C]` by an integer factor.
    pub fn upsample(&mut self, x: Var, factor: usize) -> Result<Var, GraspNetError> {
        if factor == 1 {
            return Ok(x);
        }
        let shape = self.graph.value(x).shape.clone();
        let [b, h, w, c] = shape4(&shape)?;
        let (oh, ow) = (h * factor, w * factor);
        let mut idx = Vec::with_capacity(b * oh * ow * c);
        for bi in 0..b {
            for y in 0..oh {
                for xx in 0..ow {
                    for k in 0..c {
                        idx.push(Some(((bi * h + y / factor) * w + xx / factor) * c + k));
                    }
                }
            }
        }
        self.graph.gather(x, Rc::new(idx), &[b, oh, ow, c])
    }

    /// Full network on `[B, H, W, Cin]`; returns the four head maps, each
    /// `[B, H, W, 1]`.
    pub fn forward(&mut self, image: Var, cfg: &ModelConfig) -> Result<Heads, GraspNetError> {
        let mut x = self.patch_embed(image, cfg.patch_size)?;
        let mut feats = Vec::with_capacity(NUM_STAGES);
        for s in 0..NUM_STAGES {
            if s > 0 {
                x = self.patch_merge(x, &format!("stage{s}.merge"))?;
            }
            for blk in 0..cfg.depths[s] {
                x = self.swin_block(x, &format!("stage{s}.block{blk}"), cfg.heads[s], cfg.window_size)?;
            }
            feats.push(x);
        }
        let mut ups = Vec::with_capacity(NUM_STAGES);
        for (s, &f) in feats.iter().enumerate() {
            ups.push(self.upsample(f, 1 << s)?);
        }
        let cat = self.graph.concat(&ups)?;
        let fused = self.linear(cat, "fuse")?;
        let fused = self.graph.gelu(fused);
        let head = |net: &mut Self, name: &str| -> Result<Var, GraspNetError> {
            let raw = net.linear(fused, &format!("head.{name}"))?;
            net.upsample(raw, cfg.patch_size)
        };
        let q = head(self, "quality")?;
        let c = head(self, "cos2t")?;
        let s = head(self, "sin2t")?;
        let wd = head(self, "width")?;
        Ok(Heads {
            quality: self.graph.sigmoid(q),
            cos2t: self.graph.tanh(c),
            sin2t: self.graph.tanh(s),
            width: self.graph.softplus(wd),
        })
    }

    /// Weighted sum-of-squares loss against stacked truth maps.
    pub fn loss(&mut self, heads: &Heads, truth: &HeadTargets, weights: [f64; 3]) -> Result<Var, GraspNetError> {
        let lq = self.graph.sse(heads.quality, truth.quality.clone())?;
        let lc = self.graph.sse(heads.cos2t, truth.cos2t.clone())?;
        let ls = self.graph.sse(heads.sin2t, truth.sin2t.clone())?;
        let lw = self.graph.sse(heads.width, truth.width.clone())?;
        self.graph.weighted_sum(&[(lq, weights[0]), (lc, weights[1]), (ls, weights[1]), (lw, weights[2])])
    }
}

fn shape4(shape: &[usize]) -> Result<[usize; 4], GraspNetError> {
    shape.try_into().map_err(|_| GraspNetError::ShapeMismatch(format!("expected [B, H, W, C], got {shape:?}")))
}

/// Mask (true = excluded) with period `nW·heads·n·n`, or `None` when every
/// pair is allowed.
fn attention_mask(plan: &WindowPlan, h: usize, w: usize, heads: usize) -> Option<Rc<Vec<bool>>> {
    let (nw, n) = (plan.num_windows(), plan.tokens());
    let padded = plan.padded != (h, w);
    if plan.shift == 0 && !padded {
        return None;
    }
    let mut mask = Vec::with_capacity(nw * heads * n * n);
    for wi in 0..nw {
        let src: Vec<(usize, usize)> = (0..n).map(|t| plan.source(wi, t)).collect();
        let regions: Vec<_> = src.iter().map(|&(y, x)| plan.region(y, x)).collect();
        for _ in 0..heads {
            for i in 0..n {
                for j in 0..n {
                    let (jy, jx) = src[j];
                    mask.push(jy >= h || jx >= w || regions[i] != regions[j]);
                }
            }
        }
    }
    Some(Rc::new(mask))
}

#[derive(Debug, Clone, Copy)]
pub struct Heads {
    pub quality: Var,
    pub cos2t: Var,
    pub sin2t: Var,
    pub width: Var,
}

/// Truth maps stacked as `[B, H, W, 1]` tensors.
#[derive(Debug, Clone)]
pub struct HeadTargets {
    pub quality: Rc<Tensor>,
    pub cos2t: Rc<Tensor>,
    pub sin2t: Rc<Tensor>,
    pub width: Rc<Tensor>,
}

impl HeadTargets {
    pub fn from_maps(maps: &[GraspMaps]) -> Result<Self, GraspNetError> {
        let first = maps.first().ok_or_else(|| GraspNetError::ShapeMismatch("no truth maps".into()))?;
        let (w, h) = (first.width, first.height);
        if maps.iter().any(|m| m.width != w || m.height != h || m.validate().is_err()) {
            return Err(GraspNetError::ShapeMismatch("truth maps differ in size".into()));
        }
        let stack = |f: fn(&GraspMaps) -> &Vec<f64>| {
            let data = maps.iter().flat_map(|m| f(m).iter().copied()).collect();
            Rc::new(Tensor { shape: vec![maps.len(), h, w, 1], data })
        };
        Ok(Self { quality: stack(|m| &m.quality), cos2t: stack(|m| &m.cos2t), sin2t: stack(|m| &m.sin2t), width: stack(|m| &m.grip_width) })
    }
}

/// Parameter shapes for a configuration, in creation order.
pub fn param_shapes(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let mut out = Vec::new();
    let mut add = |name: String, shape: Vec<usize>| out.push((name, shape));
    let c0 = cfg.base_channels;
    add("patch_embed.weight".into(), vec![cfg.patch_size * cfg.patch_size * cfg.in_channels, c0]);
    add("patch_embed.bias".into(), vec![c0]);
    let span = 2 * cfg.window_size - 1;
    for s in 0..NUM_STAGES {
        let c = cfg.channels(s);
        if s > 0 {
            let prev = cfg.channels(s - 1);
            add(format!("stage{s}.merge.norm.gamma"), vec![4 * prev]);
            add(format!("stage{s}.merge.norm.beta"), vec![4 * prev]);
            add(format!("stage{s}.merge.reduction"), vec![4 * prev, c]);
        }
        for blk in 0..cfg.depths[s] {
            for half in ["w", "sw"] {
                let p = format!("stage{s}.block{blk}.{half}");
                add(format!("{p}.norm1.gamma"), vec![c]);
                add(format!("{p}.norm1.beta"), vec![c]);
                add(format!("{p}.attn.qkv.weight"), vec![c, 3 * c]);
                add(format!("{p}.attn.qkv.bias"), vec![3 * c]);
                add(format!("{p}.attn.rel_bias"), vec![span * span, cfg.heads[s]]);
                add(format!("{p}.attn.proj.weight"), vec![c, c]);
                add(format!("{p}.attn.proj.bias"), vec![c]);
                add(format!("{p}.norm2.gamma"), vec![c]);
                add(format!("{p}.norm2.beta"), vec![c]);
                add(format!("{p}.mlp.fc1.weight"), vec![c, cfg.mlp_ratio * c]);
                add(format!("{p}.mlp.fc1.bias"), vec![cfg.mlp_ratio * c]);
                add(format!("{p}.mlp.fc2.weight"), vec![cfg.mlp_ratio * c, c]);
                add(format!("{p}.mlp.fc2.bias"), vec![c]);
            }
        }
    }
    let pyramid: usize = (0..NUM_STAGES).map(|s| cfg.channels(s)).sum();
    add("fuse.weight".into(), vec![pyramid, c0]);
    add("fuse.bias".into(), vec![c0]);
    for head in ["quality", "cos2t", "sin2t", "width"] {
        add(format!("head.{head}.weight"), vec![c0, 1]);
        add(format!("head.{head}.bias"), vec![1]);
    }
    out
}

/// Seeded initialization: truncated normal (σ = 0.02) for projections and
/// position biases, unit norm scales, zero biases.
pub fn init_params(cfg: &ModelConfig) -> Result<ParamSet, GraspNetError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = ParamSet::default();
    for (name, shape) in param_shapes(cfg) {
        let n: usize = shape.iter().product();
        let data = if name.ends_with(".gamma") {
            vec![1.0; n]
        } else if name.ends_with(".bias") || name.ends_with(".beta") {
            vec![0.0; n]
        } else {
            (0..n).map(|_| trunc_normal(0.02, &mut rng)).collect()
        };
        params.insert(name, Tensor { shape, data });
    }
    Ok(params)
}

/// Checks that `params` holds exactly the tensors `cfg` needs.
pub fn check_params(cfg: &ModelConfig, params: &ParamSet) -> Result<(), GraspNetError> {
    cfg.validate()?;
    let shapes = param_shapes(cfg);
    for (name, shape) in &shapes {
        let t = params.get(name)?;
        if &t.shape != shape {
            return Err(GraspNetError::ShapeMismatch(format!("{name}: {:?} vs expected {shape:?}", t.shape)));
        }
    }
    if params.tensors.len() != shapes.len() {
        return Err(GraspNetError::ShapeMismatch(format!("{} tensors, expected {}", params.tensors.len(), shapes.len())));
    }
    if !params.is_finite() {
        return Err(GraspNetError::NonFinite);
    }
    Ok(())
}

fn check_images(images: &Tensor, cfg: &ModelConfig) -> Result<(), GraspNetError> {
    let ok = images.shape.len() == 4
        && images.shape[1] == cfg.input_size
        && images.shape[2] == cfg.input_size
        && images.shape[3] == cfg.in_channels;
    if !ok {
        return Err(GraspNetError::ShapeMismatch(format!(
            "images {:?} do not match [B, {s}, {s}, {}]",
            images.shape,
            cfg.in_channels,
            s = cfg.input_size
        )));
    }
    Ok(())
}

fn maps_from(heads: &Heads, g: &Graph, batch: usize, size: usize) -> Vec<GraspMaps> {
    let n = size * size;
    (0..batch)
        .map(|b| {
            let take = |v: Var| g.value(v).data[b * n..(b + 1) * n].to_vec();
            GraspMaps {
                width: size,
                height: size,
                quality: take(heads.quality),
                cos2t: take(heads.cos2t),
                sin2t: take(heads.sin2t),
                grip_width: take(heads.width),
            }
        })
        .collect()
}

/// Grasp maps for a batch `[B, H, W, Cin]`, one per image, each exactly
/// input-sized.
pub fn forward(images: &Tensor, params: &ParamSet, cfg: &ModelConfig) -> Result<Vec<GraspMaps>, GraspNetError> {
    check_images(images, cfg)?;
    let mut net = Net::new(params);
    let x = net.graph.leaf(images.clone());
    let heads = net.forward(x, cfg)?;
    Ok(maps_from(&heads, &net.graph, images.shape[0], cfg.input_size))
}

/// Loss of predicted against truth maps:
/// `w1·Σ(q−q*)² + w2·[Σ(c−c*)² + Σ(s−s*)²] + w3·Σ(w−w*)²`.
pub fn loss(pred: &GraspMaps, truth: &GraspMaps, weights: [f64; 3]) -> Result<f64, GraspNetError> {
    if pred.width != truth.width || pred.height != truth.height || pred.validate().is_err() || truth.validate().is_err() {
        return Err(GraspNetError::ShapeMismatch("prediction and truth maps differ in size".into()));
    }
    let sse = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    Ok(weights[0] * sse(&pred.quality, &truth.quality)
        + weights[1] * (sse(&pred.cos2t, &truth.cos2t) + sse(&pred.sin2t, &truth.sin2t))
        + weights[2] * sse(&pred.grip_width, &truth.grip_width))
}

/// Loss value and its gradient with respect to every parameter.
pub fn loss_and_grad(
    images: &Tensor,
    truth: &[GraspMaps],
    params: &ParamSet,
    cfg: &ModelConfig,
) -> Result<(f64, ParamSet), GraspNetError> {
    check_images(images, cfg)?;
    if truth.len() != images.shape[0] {
        return Err(GraspNetError::ShapeMismatch(format!("{} truth maps for {} images", truth.len(), images.shape[0])));
    }
    let targets = HeadTargets::from_maps(truth)?;
    let mut net = Net::new(params);
    let x = net.graph.leaf(images.clone());
    let heads = net.forward(x, cfg)?;
    let l = net.loss(&heads, &targets, cfg.loss_weights)?;
    let grads = net.graph.backward(l);
    let mut out = ParamSet::default();
    for (name, t) in &params.tensors {
        let data = net.vars.get(name).and_then(|v| grads[v.0].clone()).unwrap_or_else(|| vec![0.0; t.len()]);
        out.insert(name.clone(), Tensor { shape: t.shape.clone(), data });
    }
    Ok((net.graph.value(l).data[0], out))
}

/// One plain gradient-descent step; returns the loss before the step.
pub fn sgd_step(
    images: &Tensor,
    truth: &[GraspMaps],
    params: &mut ParamSet,
    cfg: &ModelConfig,
    lr: f64,
) -> Result<f64, GraspNetError> {
    let (l, grads) = loss_and_grad(images, truth, params, cfg)?;
    params.axpy(-lr, &grads);
    Ok(l)
}

/// RGB image to a `[1, S, S, 3]` tensor scaled to `[-0.5, 0.5]`, resampled
/// (nearest) to the model input size.
pub fn image_tensor(img: &image::RgbImage, size: usize) -> Tensor {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = Vec::with_capacity(size * size * 3);
    for y in 0..size {
        for x in 0..size {
            let sx = (x * w / size).min(w.saturating_sub(1));
            let sy = (y * h / size).min(h.saturating_sub(1));
            let p = img.get_pixel(sx as u32, sy as u32).0;
            data.extend(p.iter().map(|&v| v as f64 / 255.0 - 0.5));
        }
    }
    Tensor { shape: vec![1, size, size, 3], data }
}

/// RGB plus one depth channel, depth normalized by its 16-bit range.
pub fn rgbd_tensor(img: &image::RgbImage, depth: &image::ImageBuffer<image::Luma<u16>, Vec<u16>>, size: usize) -> Tensor {
    let rgb = image_tensor(img, size);
    let (w, h) = (depth.width() as usize, depth.height() as usize);
    let mut data = Vec::with_capacity(size * size * 4);
    for (i, px) in rgb.data.chunks_exact(3).enumerate() {
        let (x, y) = (i % size, i / size);
        let sx = (x * w / size).min(w.saturating_sub(1));
        let sy = (y * h / size).min(h.saturating_sub(1));
        data.extend_from_slice(px);
        data.push(depth.get_pixel(sx as u32, sy as u32).0[0] as f64 / 65535.0 - 0.5);
    }
    Tensor { shape: vec![1, size, size, 4], data }
}
