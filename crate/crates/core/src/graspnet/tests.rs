use super::*;
use crate::grasp::GraspMaps;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

#[test]
fn patch_embed_shape_zero_and_locality() {
    let cfg = ModelConfig::toy();
    let params = init_params(&cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let img = rand_tensor(&[1, 32, 32, 3], &mut rng);
    let run = |img: &Tensor| {
        let mut net = Net::new(&params);
        let x = net.graph.leaf(img.clone());
        let y = net.patch_embed(x, 4).unwrap();
        net.graph.value(y).clone()
    };
    let base = run(&img);
    assert_eq!(base.shape, vec![1, 8, 8, 8]);
    assert!(run(&Tensor::zeros(&[1, 32, 32, 3])).data.iter().all(|&v| v == 0.0));

    let mut poked = img.clone();
    poked.data[(13 * 32 + 22) * 3 + 1] += 0.7; // pixel (22, 13) lives in token (5, 3)
    let out = run(&poked);
    let changed: Vec<usize> = (0..64).filter(|t| (0..8).any(|c| out.data[t * 8 + c] != base.data[t * 8 + c])).collect();
    assert_eq!(changed, vec![3 * 8 + 5]);
}

#[test]
fn plain_attention_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let v = rand_tensor(&[1, 5], &mut rng);
    let q = rand_tensor(&[1, 5], &mut rng);
    assert_eq!(attention(&q, &q, &v).unwrap(), v);

    let v = rand_tensor(&[4, 8], &mut rng);
    let k = rand_tensor(&[4, 8], &mut rng);
    let out = attention(&Tensor::zeros(&[4, 8]), &k, &v).unwrap();
    for c in 0..8 {
        let mean = (0..4).map(|r| v.data[r * 8 + c]).sum::<f64>() / 4.0;
        for r in 0..4 {
            assert!((out.data[r * 8 + c] - mean).abs() < 1e-15);
        }
    }

    // naive dense evaluation
    let q = rand_tensor(&[4, 8], &mut rng);
    let out = attention(&q, &k, &v).unwrap();
    for i in 0..4 {
        let logits: Vec<f64> =
            (0..4).map(|j| (0..8).map(|c| q.data[i * 8 + c] * k.data[j * 8 + c]).sum::<f64>() / 8f64.sqrt()).collect();
        let z: f64 = logits.iter().map(|l| l.exp()).sum();
        for c in 0..8 {
            let expect: f64 = (0..4).map(|j| logits[j].exp() / z * v.data[j * 8 + c]).sum();
            assert!((out.data[i * 8 + c] - expect).abs() < 1e-12);
            let lo = (0..4).map(|j| v.data[j * 8 + c]).fold(f64::INFINITY, f64::min);
            let hi = (0..4).map(|j| v.data[j * 8 + c]).fold(f64::NEG_INFINITY, f64::max);
            assert!(out.data[i * 8 + c] >= lo - 1e-12 && out.data[i * 8 + c] <= hi + 1e-12);
        }
    }
    assert!(attention(&q, &rand_tensor(&[3, 8], &mut rng), &v).is_err());
}

#[test]
fn window_plan_rules() {
    let p = WindowPlan::new(8, 8, 4, true);
    assert_eq!((p.window, p.shift, p.padded, p.num_windows()), (4, 2, (8, 8), 4));
    let p = WindowPlan::new(2, 2, 4, true);
    assert_eq!((p.window, p.shift), (2, 0));
    let p = WindowPlan::new(5, 5, 4, false);
    assert_eq!(p.padded, (8, 8));
    for y in 0..8 {
        for x in 0..8 {
            let shifted = WindowPlan::new(8, 8, 4, true);
            let (wi, t) = shifted.locate(y, x);
            assert_eq!(shifted.source(wi, t), (y, x));
        }
    }
}

#[test]
fn single_window_equals_plain_attention() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (m, c) = (4, 6);
    let mut params = ParamSet::default();
    params.insert("a.qkv.weight", rand_tensor(&[c, 3 * c], &mut rng));
    params.insert("a.qkv.bias", Tensor::zeros(&[3 * c]));
    params.insert("a.rel_bias", Tensor::zeros(&[(2 * m - 1) * (2 * m - 1), 1]));
    let mut eye = Tensor::zeros(&[c, c]);
    (0..c).for_each(|i| eye.data[i * c + i] = 1.0);
    params.insert("a.proj.weight", eye);
    params.insert("a.proj.bias", Tensor::zeros(&[c]));
    let x = rand_tensor(&[1, m, m, c], &mut rng);
    let mut net = Net::new(&params);
    let xv = net.graph.leaf(x.clone());
    let plan = WindowPlan::new(m, m, m, false);
    let y = net.window_attention(xv, "a", 1, &plan, m).unwrap();
    let got = net.graph.value(y).clone();

    let w = params.get("a.qkv.weight").unwrap();
    let proj = |part: usize| {
        let mut t = Tensor::zeros(&[m * m, c]);
        for r in 0..m * m {
            for j in 0..c {
                t.data[r * c + j] = (0..c).map(|i| x.data[r * c + i] * w.data[i * 3 * c + part * c + j]).sum();
            }
        }
        t
    };
    let expect = attention(&proj(0), &proj(1), &proj(2)).unwrap();
    assert!(got.data.iter().zip(&expect.data).all(|(a, b)| (a - b).abs() < 1e-12));
}

fn zero_residual_branches(params: &mut ParamSet) {
    let names: Vec<String> = params.names().map(String::from).collect();
    for n in names {
        if n.contains(".attn.proj.") || n.contains(".mlp.fc2.") {
            params.get_mut(&n).unwrap().data.iter_mut().for_each(|v| *v = 0.0);
        }
    }
}

#[test]
fn swin_block_residual_identity() {
    let cfg = ModelConfig::toy();
    let mut params = init_params(&cfg).unwrap();
    zero_residual_branches(&mut params);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = rand_tensor(&[2, 8, 8, 8], &mut rng);
    let mut net = Net::new(&params);
    let xv = net.graph.leaf(x.clone());
    let y = net.swin_block(xv, "stage0.block0", 1, 4).unwrap();
    assert_eq!(net.graph.value(y), &x);
}

#[test]
fn patch_merge_contract() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let c = 3;
    let mut params = ParamSet::default();
    params.insert("m.norm.gamma", Tensor::filled(&[4 * c], 1.0));
    params.insert("m.norm.beta", Tensor::zeros(&[4 * c]));
    params.insert("m.reduction", rand_tensor(&[4 * c, 2 * c], &mut rng));
    let x = rand_tensor(&[1, 8, 8, c], &mut rng);
    let run = |x: &Tensor| {
        let mut net = Net::new(&params);
        let v = net.graph.leaf(x.clone());
        let y = net.patch_merge(v, "m")?;
        Ok::<_, GraspNetError>(net.graph.value(y).clone())
    };
    let base = run(&x).unwrap();
    assert_eq!(base.shape, vec![1, 4, 4, 2 * c]);
    let mut poked = x.clone();
    poked.data[(5 * 8 + 2) * c] += 1.0; // token (2, 5) merges into (1, 2)
    let out = run(&poked).unwrap();
    let changed: Vec<usize> =
        (0..16).filter(|t| (0..2 * c).any(|k| out.data[t * 2 * c + k] != base.data[t * 2 * c + k])).collect();
    assert_eq!(changed, vec![2 * 4 + 1]);
    assert!(matches!(run(&rand_tensor(&[1, 5, 4, c], &mut rng)), Err(GraspNetError::OddGrid(5, 4))));

    // constant input through an identity-block projection stays constant
    let mut params = ParamSet::default();
    params.insert("m.norm.gamma", Tensor::zeros(&[4 * c]));
    params.insert("m.norm.beta", Tensor::filled(&[4 * c], 0.3));
    let mut red = Tensor::zeros(&[4 * c, 2 * c]);
    (0..2 * c).for_each(|i| red.data[i * 2 * c + i] = 1.0);
    params.insert("m.reduction", red);
    let mut net = Net::new(&params);
    let v = net.graph.leaf(Tensor::filled(&[1, 4, 4, c], 2.0));
    let y = net.patch_merge(v, "m").unwrap();
    assert!(net.graph.value(y).data.iter().all(|&v| (v - 0.3).abs() < 1e-15));
}

#[test]
fn forward_contract_and_determinism() {
    for cfg in [ModelConfig::toy(), ModelConfig::tiny()] {
        let params = init_params(&cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let s = cfg.input_size;
        let img = rand_tensor(&[2, s, s, 3], &mut rng);
        let a = forward(&img, &params, &cfg).unwrap();
        let b = forward(&img, &init_params(&cfg).unwrap(), &cfg).unwrap();
        assert_eq!(a, b);
        for m in &a {
            assert_eq!((m.width, m.height), (s, s));
            m.validate().unwrap();
            assert!(m.quality.iter().all(|&q| q > 0.0 && q < 1.0));
            assert!(m.cos2t.iter().chain(&m.sin2t).all(|&v| v > -1.0 && v < 1.0));
            assert!(m.grip_width.iter().all(|&w| w >= 0.0));
        }
        assert!(forward(&rand_tensor(&[1, s + 4, s + 4, 3], &mut rng), &params, &cfg).is_err());
    }
}

#[test]
fn batch_permutation() {
    let cfg = ModelConfig::toy();
    let params = init_params(&cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let img = rand_tensor(&[2, 32, 32, 3], &mut rng);
    let n = 32 * 32 * 3;
    let mut swapped = img.clone();
    swapped.data[..n].copy_from_slice(&img.data[n..]);
    swapped.data[n..].copy_from_slice(&img.data[..n]);
    let a = forward(&img, &params, &cfg).unwrap();
    let b = forward(&swapped, &params, &cfg).unwrap();
    assert_eq!(a[0], b[1]);
    assert_eq!(a[1], b[0]);
}

fn maps(size: usize, fill: f64) -> GraspMaps {
    let n = size * size;
    GraspMaps { width: size, height: size, quality: vec![fill; n], cos2t: vec![fill; n], sin2t: vec![fill; n], grip_width: vec![fill; n] }
}

#[test]
fn loss_examples() {
    let t = maps(4, 0.2);
    assert_eq!(loss(&t, &t, [1.0, 1.0, 1.0]).unwrap(), 0.0);
    let mut p = t.clone();
    p.quality[5] += 0.5;
    assert!((loss(&p, &t, [1.0, 1.0, 1.0]).unwrap() - 0.25).abs() < 1e-15);
    assert!((loss(&p, &t, [2.0, 1.0, 1.0]).unwrap() - 0.5).abs() < 1e-15);
    p.cos2t[0] += 1.0;
    p.grip_width[1] += 2.0;
    assert!((loss(&p, &t, [1.0, 3.0, 0.5]).unwrap() - (0.25 + 3.0 + 2.0)).abs() < 1e-12);
    assert!(loss(&maps(3, 0.0), &t, [1.0; 3]).is_err());
}

#[test]
fn gradient_is_zero_at_exact_fit_and_linear_in_weights() {
    let mut cfg = ModelConfig::tiny();
    let params = init_params(&cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let img = rand_tensor(&[1, 16, 16, 3], &mut rng);
    let pred = forward(&img, &params, &cfg).unwrap();
    let (l, g) = loss_and_grad(&img, &pred, &params, &cfg).unwrap();
    assert_eq!(l, 0.0);
    assert!(g.tensors.values().all(|t| t.data.iter().all(|&v| v == 0.0)));

    let mut truth = pred.clone();
    truth[0].quality.iter_mut().for_each(|q| *q = rng.random_range(0.0..1.0));
    truth[0].grip_width.iter_mut().for_each(|w| *w = rng.random_range(0.0..3.0));
    cfg.loss_weights = [1.0, 0.0, 0.0];
    let (_, g1) = loss_and_grad(&img, &truth, &params, &cfg).unwrap();
    cfg.loss_weights = [2.0, 0.0, 0.0];
    let (_, g2) = loss_and_grad(&img, &truth, &params, &cfg).unwrap();
    for (name, t) in &g2.tensors {
        let base = &g1.tensors[name];
        for (a, b) in t.data.iter().zip(&base.data) {
            assert!((a - 2.0 * b).abs() <= 1e-12 * a.abs().max(1.0), "{name}");
        }
    }
}

#[test]
fn gradient_matches_finite_differences_on_a_sample() {
    let cfg = ModelConfig::tiny();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut params = init_params(&cfg).unwrap();
    // move away from the symmetric initialization
    for t in params.tensors.values_mut() {
        t.data.iter_mut().for_each(|v| *v += rng.random_range(-0.3..0.3));
    }
    let img = rand_tensor(&[1, 16, 16, 3], &mut rng);
    let mut truth = maps(16, 0.0);
    truth.quality.iter_mut().for_each(|v| *v = rng.random_range(0.0..1.0));
    truth.cos2t.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
    truth.sin2t.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
    truth.grip_width.iter_mut().for_each(|v| *v = rng.random_range(0.0..2.0));
    let truth = vec![truth];
    let (_, grads) = loss_and_grad(&img, &truth, &params, &cfg).unwrap();
    let names: Vec<String> = params.names().map(String::from).collect();
    for _ in 0..50 {
        let name = &names[rng.random_range(0..names.len())];
        let i = rng.random_range(0..params.get(name).unwrap().len());
        let h = 1e-4;
        let eval = |delta: f64| {
            let mut p = params.clone();
            p.get_mut(name).unwrap().data[i] += delta;
            let pred = forward(&img, &p, &cfg).unwrap();
            loss(&pred[0], &truth[0], cfg.loss_weights).unwrap()
        };
        let numeric = (eval(h) - eval(-h)) / (2.0 * h);
        let analytic = grads.get(name).unwrap().data[i];
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
        assert!(rel < 1e-4, "{name}[{i}]: analytic {analytic} numeric {numeric}");
    }
}

#[test]
fn sgd_reduces_loss() {
    let cfg = ModelConfig::tiny();
    let mut params = init_params(&cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let img = rand_tensor(&[1, 16, 16, 3], &mut rng);
    let mut truth = maps(16, 0.0);
    truth.quality[16 * 8 + 8] = 1.0;
    truth.grip_width.iter_mut().for_each(|w| *w = 1.5);
    let truth = vec![truth];
    let first = sgd_step(&img, &truth, &mut params, &cfg, 1e-3).unwrap();
    let mut last = first;
    for _ in 0..5 {
        last = sgd_step(&img, &truth, &mut params, &cfg, 1e-3).unwrap();
    }
    assert!(last < first, "{first} -> {last}");
}

#[test]
fn model_file_round_trip() {
    let cfg = ModelConfig::toy();
    let params = init_params(&cfg).unwrap();
    let mut buf = Vec::new();
    write_model(&mut buf, &cfg, &params).unwrap();
    let (cfg2, p2) = read_model(&mut buf.as_slice()).unwrap();
    assert_eq!(cfg2, cfg);
    check_params(&cfg2, &p2).unwrap();
    for (name, t) in &params.tensors {
        assert!(t.max_abs_diff(&p2.tensors[name]) < 1e-8);
    }
    buf[0] = b'X';
    assert!(matches!(read_model(&mut buf.as_slice()), Err(GraspNetError::Format(_))));
    let mut missing = params.clone();
    missing.tensors.remove("fuse.bias");
    assert!(matches!(check_params(&cfg, &missing), Err(GraspNetError::MissingParam(_))));
}

#[test]
fn config_validation() {
    assert!(ModelConfig::default().validate().is_ok());
    assert!(ModelConfig::scene().validate().is_ok());
    let bad = ModelConfig { input_size: 16, patch_size: 4, ..ModelConfig::tiny() };
    assert!(matches!(bad.validate(), Err(GraspNetError::InvalidConfig(_))));
    let bad = ModelConfig { heads: [3, 2, 2, 4], ..ModelConfig::toy() };
    assert!(bad.validate().is_err());
}
