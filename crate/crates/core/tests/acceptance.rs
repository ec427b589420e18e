//! Acceptance suite. Each criterion prints one PASS/FAIL line; the test
//! fails if any criterion fails.

mod common;

use std::f64::consts::PI;
use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sightgrasp::eyesim::scene::{plane_frame, plane_point};
use sightgrasp::eyesim::*;
use sightgrasp::fuse::*;
use sightgrasp::gaze::{estimate_gaze, observation_from_features, GazeError};
use sightgrasp::geom::{angle_between, intersect_ray_plane, Pixel};
use sightgrasp::grasp::cornell::{parse_cornell, DEFAULT_CROP};
use sightgrasp::grasp::{angle_difference, decode_grasp, encode_truth, is_success, jaccard, GraspMaps, GraspRectangle};
use sightgrasp::graspnet::{forward, init_params, loss, loss_and_grad, ModelConfig};
use sightgrasp::pupil::{fit_ellipse, PupilDetector};

type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn rect(u: f64, v: f64, theta: f64, w: f64, h: f64) -> GraspRectangle {
    GraspRectangle::new(Pixel::new(u, v), theta, w, h).unwrap()
}

/// Eye looking at scene pixel `px` with the given pupil radius.
fn eye_at_pixel(rig: &Rig, px: Pixel, pupil_radius: f64) -> EyeState {
    let target = intersect_ray_plane(&rig.scene_camera.pixel_ray(&px), &rig.working_plane).unwrap();
    let g = EyeGeometry { pupil_radius, ..rig.eye };
    EyeState::looking_at(g.cornea_center, target, &g).unwrap()
}

fn random_pixel(rig: &Rig, rng: &mut impl Rng) -> Pixel {
    let (w, h) = (rig.scene_size.0 as f64, rig.scene_size.1 as f64);
    Pixel::new(rng.random_range(0.2 * w..0.8 * w), rng.random_range(0.2 * h..0.8 * h))
}

fn gaze_round_trip() -> Outcome {
    let rig = Rig::default();
    let det = PupilDetector::new(rig.pupil.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let start = Instant::now();
    let (mut worst_deg, mut worst_px, mut failures) = (0.0f64, 0.0f64, 0);
    for _ in 0..100 {
        let px = random_pixel(&rig, &mut rng);
        let eye = eye_at_pixel(&rig, px, rng.random_range(1.6e-3..2.4e-3));
        let obs = observe(&eye, &rig, 0.0, &mut rng).unwrap();
        let mut meas = [NearEyeObservation::blink(); 2];
        for k in 0..2 {
            let img = render_eye_image(&obs[k], rig.eye_image_size, 0.0, &rig.render, &mut rng);
            meas[k] = observation_from_features(det.detect(&img).ok().as_ref());
        }
        match estimate_gaze(&meas, &rig) {
            Ok(est) => {
                worst_deg = worst_deg.max(angle_between(&est.axis.dir, &eye.axis).to_degrees());
                worst_px = worst_px.max(est.scene_px.map_or(f64::INFINITY, |p| p.dist(&px)));
            }
            Err(_) => failures += 1,
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        failures == 0 && worst_deg < 0.1 && worst_px < 3.0 && secs < 10.0,
        format!("100 states: max {worst_deg:.4} deg, max {worst_px:.3} px, {failures} failures, {secs:.2} s"),
    )
}

fn noise_degradation() -> Outcome {
    let rig = Rig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let eyes: Vec<EyeState> = (0..200).map(|_| eye_at_pixel(&rig, random_pixel(&rig, &mut rng), rig.eye.pupil_radius)).collect();
    let levels = [0.0, 0.25, 0.5, 1.0];
    let mut means = Vec::new();
    let mut failures = 0;
    for &sigma in &levels {
        let mut noise_rng = ChaCha8Rng::seed_from_u64(102);
        let mut sum = 0.0;
        for eye in &eyes {
            let obs = observe(eye, &rig, sigma, &mut noise_rng).unwrap();
            match estimate_gaze(&obs, &rig) {
                Ok(est) => sum += angle_between(&est.axis.dir, &eye.axis).to_degrees(),
                Err(_) => failures += 1,
            }
        }
        means.push(sum / eyes.len() as f64);
    }
    let monotone = means.windows(2).all(|w| w[1] >= w[0]);
    let detail = levels.iter().zip(&means).map(|(s, m)| format!("{s} px: {m:.4} deg")).collect::<Vec<_>>().join(", ");
    check(monotone && means[2] < 1.5 && failures == 0, format!("{detail}; {failures} failures"))
}

/// Ellipse samples from the parametric form, written out independently.
fn ellipse_samples(cu: f64, cv: f64, a: f64, b: f64, tilt: f64, n: usize) -> Vec<Pixel> {
    (0..n)
        .map(|i| {
            let t = 2.0 * PI * i as f64 / n as f64;
            let (x, y) = (a * t.cos(), b * t.sin());
            Pixel::new(cu + x * tilt.cos() - y * tilt.sin(), cv + x * tilt.sin() + y * tilt.cos())
        })
        .collect()
}

fn pupil_detection() -> Outcome {
    let rig = Rig::default();
    let det = PupilDetector::new(rig.pupil.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let mut worst = 0.0f64;
    let mut failures = 0;
    for i in 0..100 {
        let eye = eye_at_pixel(&rig, random_pixel(&rig, &mut rng), rng.random_range(1.6e-3..2.4e-3));
        let obs = observe(&eye, &rig, 0.0, &mut rng).unwrap();
        let o = &obs[i % 2];
        let img = render_eye_image(o, rig.eye_image_size, 0.0, &rig.render, &mut rng);
        match det.detect(&img) {
            Ok(f) => worst = worst.max(f.pupil.center.dist(&o.pupil_ellipse.center)),
            Err(_) => failures += 1,
        }
    }

    let mut fit_err = 0.0f64;
    for _ in 0..50 {
        let (cu, cv) = (rng.random_range(20.0..200.0), rng.random_range(20.0..200.0));
        let a = rng.random_range(5.0..40.0);
        let b = a * rng.random_range(0.3..0.9);
        let tilt = rng.random_range(0.0..PI);
        let fit = fit_ellipse(&ellipse_samples(cu, cv, a, b, tilt, 40)).map_err(|e| e.to_string())?;
        let dtilt = (fit.tilt - tilt + PI / 2.0).rem_euclid(PI) - PI / 2.0;
        for e in [fit.center.u - cu, fit.center.v - cv, fit.semi_major - a, fit.semi_minor - b, dtilt] {
            fit_err = fit_err.max(e.abs());
        }
    }
    check(
        failures == 0 && worst < 0.5 && fit_err < 1e-6,
        format!("100 renders: max center error {worst:.3} px, {failures} failures; exact-sample fit max error {fit_err:.2e}"),
    )
}

fn attention_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let (mut w_max, mut sw_max) = (0.0f64, 0.0f64);
    for _ in 0..20 {
        let case = common::WindowCase::random(&mut rng);
        let (w, sw) = common::window_attention_errors(case, &mut rng);
        w_max = w_max.max(w);
        sw_max = sw_max.max(sw);
    }
    check(w_max < 1e-10 && sw_max < 1e-10, format!("20 configs: W-MSA max diff {w_max:.2e}, SW-MSA max diff {sw_max:.2e}"))
}

fn random_maps(size: usize, rng: &mut impl Rng) -> GraspMaps {
    let mut m = GraspMaps::zeros(size, size);
    m.quality.iter_mut().for_each(|v| *v = rng.random_range(0.0..1.0));
    m.cos2t.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
    m.sin2t.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
    m.grip_width.iter_mut().for_each(|v| *v = rng.random_range(0.0..2.0));
    m
}

fn gradient_check() -> Outcome {
    let start = Instant::now();
    let cfg = ModelConfig::tiny();
    let mut rng = ChaCha8Rng::seed_from_u64(105);
    let mut params = init_params(&cfg).unwrap();
    for t in params.tensors.values_mut() {
        t.data.iter_mut().for_each(|v| *v += rng.random_range(-0.3..0.3));
    }
    let s = cfg.input_size;
    let img = common::rand_tensor(&[1, s, s, 3], &mut rng);
    let truth = vec![random_maps(s, &mut rng)];
    let (_, grads) = loss_and_grad(&img, &truth, &params, &cfg).unwrap();
    let names: Vec<String> = params.names().map(String::from).collect();
    let h = 1e-4;
    let mut worst = 0.0f64;
    let samples = 60;
    for _ in 0..samples {
        let name = &names[rng.random_range(0..names.len())];
        let i = rng.random_range(0..params.get(name).unwrap().len());
        let eval = |delta: f64| {
            let mut p = params.clone();
            p.get_mut(name).unwrap().data[i] += delta;
            loss(&forward(&img, &p, &cfg).unwrap()[0], &truth[0], cfg.loss_weights).unwrap()
        };
        let numeric = (eval(h) - eval(-h)) / (2.0 * h);
        let analytic = grads.get(name).unwrap().data[i];
        worst = worst.max((analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6));
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        worst < 1e-4 && secs < 60.0,
        format!("{samples} params of {s}x{s} C={} M={}: max rel error {worst:.2e}, {secs:.2} s", cfg.base_channels, cfg.window_size),
    )
}

fn head_contract() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(106);
    let mut checked = Vec::new();
    for cfg in [ModelConfig::toy(), ModelConfig::tiny()] {
        let s = cfg.input_size;
        let params = init_params(&cfg).unwrap();
        let img = common::rand_tensor(&[2, s, s, 3], &mut rng);
        for m in forward(&img, &params, &cfg).unwrap() {
            let sized = (m.width, m.height) == (s, s)
                && [&m.quality, &m.cos2t, &m.sin2t, &m.grip_width].iter().all(|v| v.len() == s * s);
            if !sized {
                return Err(format!("{s}x{s} input gave {}x{} maps", m.width, m.height));
            }
            if !m.quality.iter().all(|&q| q > 0.0 && q < 1.0) {
                return Err(format!("quality outside (0,1) at input {s}"));
            }
        }
        checked.push(format!("{s}x{s}"));
    }
    Ok(format!("four input-sized maps, quality in (0,1) for inputs {}", checked.join(", ")))
}

/// Interval of x where row `y` lies inside the rectangle, from its two slabs.
fn row_interval(r: &GraspRectangle, y: f64) -> Option<(f64, f64)> {
    let (s, c) = r.theta.sin_cos();
    let dy = y - r.center.v;
    let mut lo = f64::NEG_INFINITY;
    let mut hi = f64::INFINITY;
    // |c·dx + s·dy| <= w/2 and |-s·dx + c·dy| <= h/2
    for (k, off, half) in [(c, s * dy, r.width / 2.0), (-s, c * dy, r.height / 2.0)] {
        if k.abs() < 1e-15 {
            if off.abs() > half {
                return None;
            }
            continue;
        }
        let (a, b) = ((-half - off) / k, (half - off) / k);
        lo = lo.max(a.min(b));
        hi = hi.min(a.max(b));
    }
    (hi > lo).then_some((lo + r.center.u, hi + r.center.u))
}

/// Jaccard index by scanning rows at 0.01 px pitch.
fn raster_jaccard(a: &GraspRectangle, b: &GraspRectangle) -> f64 {
    let reach = |r: &GraspRectangle| r.width.hypot(r.height) / 2.0;
    let y0 = (a.center.v - reach(a)).min(b.center.v - reach(b));
    let y1 = (a.center.v + reach(a)).max(b.center.v + reach(b));
    let step = 0.01;
    let rows = ((y1 - y0) / step).ceil() as usize;
    let (mut area_a, mut area_b, mut inter) = (0.0, 0.0, 0.0);
    for i in 0..rows {
        let y = y0 + (i as f64 + 0.5) * step;
        let ia = row_interval(a, y);
        let ib = row_interval(b, y);
        if let Some((l, h)) = ia {
            area_a += h - l;
        }
        if let Some((l, h)) = ib {
            area_b += h - l;
        }
        if let (Some((la, ha)), Some((lb, hb))) = (ia, ib) {
            inter += (ha.min(hb) - la.max(lb)).max(0.0);
        }
    }
    inter / (area_a + area_b - inter)
}

fn metric_fidelity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(107);
    let mut worst = 0.0f64;
    for _ in 0..500 {
        let a = rect(rng.random_range(30.0..50.0), rng.random_range(30.0..50.0), rng.random_range(-PI..PI), rng.random_range(4.0..30.0), rng.random_range(4.0..30.0));
        let b = rect(
            a.center.u + rng.random_range(-10.0..10.0),
            a.center.v + rng.random_range(-10.0..10.0),
            rng.random_range(-PI..PI),
            rng.random_range(4.0..30.0),
            rng.random_range(4.0..30.0),
        );
        worst = worst.max((jaccard(&a, &b) - raster_jaccard(&a, &b)).abs());
    }
    let t = rect(50.0, 50.0, 0.2, 30.0, 15.0);
    let rotated = rect(50.0, 50.0, 0.2 + PI / 6.0, 30.0, 15.0);
    let angle_passes = is_success(&rotated, &[t]).unwrap();
    // (0..5)x(0..4) against (3..8)x(0..4): 8 / 32
    let (p, q) = (rect(2.5, 2.0, 0.0, 5.0, 4.0), rect(5.5, 2.0, 0.0, 5.0, 4.0));
    let quarter_fails = jaccard(&p, &q) == 0.25 && !is_success(&p, &[q]).unwrap();
    check(
        worst < 0.01 && angle_passes && quarter_fails,
        format!("500 pairs: max |J - raster| {worst:.2e}; 30 deg passes: {angle_passes}; J=0.25 fails: {quarter_fails}"),
    )
}

fn cornell_ingestion() -> Outcome {
    let text = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/tests/data/pcd0100cpos.txt")).unwrap();
    let ann = parse_cornell(&text, (640, 480), DEFAULT_CROP).map_err(|e| e.to_string())?;
    let count_ok = ann.rects.len() == 3;

    let mut rng = ChaCha8Rng::seed_from_u64(108);
    let mut rects = ann.rects.clone();
    for _ in 0..200 {
        rects.push(rect(
            rng.random_range(20.0..204.0),
            rng.random_range(20.0..204.0),
            rng.random_range(-PI..PI),
            rng.random_range(10.0..60.0),
            rng.random_range(5.0..30.0),
        ));
    }
    let (mut center_err, mut theta_err) = (0.0f64, 0.0f64);
    for r in &rects {
        let maps = encode_truth(&[*r], (DEFAULT_CROP, DEFAULT_CROP)).map_err(|e| e.to_string())?;
        let g = decode_grasp(&maps, r.height).map_err(|e| e.to_string())?.grasp;
        center_err = center_err.max(g.center.dist(&r.center));
        theta_err = theta_err.max(angle_difference(g.theta, r.theta));
    }
    check(
        count_ok && center_err <= 1.0 && theta_err <= 1e-6,
        format!(
            "sample file: {} rectangles (NaN one skipped); {} round trips: max center {center_err:.3} px, max theta {theta_err:.2e} rad",
            ann.rects.len(),
            rects.len()
        ),
    )
}

fn peak_maps(size: usize, peaks: &[(usize, usize, f64)]) -> GraspMaps {
    let mut m = GraspMaps::zeros(size, size);
    m.cos2t.iter_mut().for_each(|c| *c = 1.0);
    m.grip_width.iter_mut().for_each(|w| *w = 12.0);
    for &(x, y, q) in peaks {
        let i = m.index(x, y);
        m.quality[i] = q;
    }
    m
}

fn fusion() -> Outcome {
    let cfg = FusionConfig::default();
    let equal = peak_maps(100, &[(20, 50, 0.8), (80, 50, 0.8)]);
    let left = gaze_filter(&equal, Pixel::new(25.0, 45.0), &cfg).unwrap().grasp.center == Pixel::new(20.0, 50.0);
    let right = gaze_filter(&equal, Pixel::new(70.0, 55.0), &cfg).unwrap().grasp.center == Pixel::new(80.0, 50.0);

    let mut m = peak_maps(64, &[(5, 7, 0.7), (50, 60, 0.71), (30, 2, 0.2)]);
    let i = m.index(10, 10);
    m.quality[i] = 0.705;
    let wide = FusionConfig { sigma_g: 6400.0, ..cfg };
    let global = gaze_filter(&m, Pixel::new(3.0, 3.0), &wide).unwrap().grasp.center == Pixel::new(50.0, 60.0);

    // far peak 0.9 at distance 60 = 2σ weighs 0.9·e⁻² ≈ 0.122 < 0.5
    let near = peak_maps(200, &[(40, 100, 0.9), (100, 100, 0.5)]);
    let s = gaze_filter(&near, Pixel::new(100.0, 100.0), &cfg).unwrap();
    let near_ok = s.grasp.center == Pixel::new(100.0, 100.0) && (0.9 * (-2.0f64).exp()) < 0.5;
    check(
        left && right && global && near_ok,
        format!("equal peaks follow gaze: {}; large sigma = global argmax: {global}; 0.9e^-2 case picks near peak: {near_ok}", left && right),
    )
}

fn end_to_end() -> Outcome {
    let rig = Rig::default();
    let spec = SceneSpec {
        objects: vec![
            SceneObject::Bar { x: -0.07, y: -0.01, yaw: 0.5, length: 0.10, thickness: 0.025 },
            SceneObject::Box { x: 0.065, y: 0.02, yaw: -0.4, length: 0.07, width: 0.045 },
        ],
    };
    let scene = make_scene(&spec, &rig.scene_camera, &rig.working_plane, rig.scene_size).unwrap();
    let frame = plane_frame(&rig.scene_camera, &rig.working_plane).unwrap();
    let eye = EyeState::looking_at(rig.eye.cornea_center, plane_point(&frame, 0.065, 0.02), &rig.eye).unwrap();
    let pupil = PupilDetector::new(rig.pupil.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(109);
    let mut tracker = SelectionTracker::default();

    let obs = observe(&eye, &rig, 0.0, &mut rng).unwrap();
    let out = run_pipeline(&scene, &obs, &rig, &pupil, &ScriptedDetector, &FusionConfig::default(), &mut rng);
    let Some(sel) = tracker.update(&out).copied() else {
        return Err(format!("no selection: {:?}", out.err()));
    };
    let c = sel.grasp.center;
    let inside = scene.truth_grasps[1].contains(c.u, c.v);

    let blink = run_pipeline(&scene, &[NearEyeObservation::blink(); 2], &rig, &pupil, &ScriptedDetector, &FusionConfig::default(), &mut rng);
    let blink_kind = matches!(blink, Err(PipelineError::Gaze(GazeError::BlinkFrame)));
    let retained = tracker.update(&blink) == Some(&sel);
    check(
        inside && blink_kind && retained,
        format!("gaze on object 2 selects ({:.1}, {:.1}) inside its rectangle: {inside}; blink retains selection: {}", c.u, c.v, blink_kind && retained),
    )
}

fn benchmark() -> Outcome {
    let cfg = BenchConfig { iterations: 20, warmup: 2, ..BenchConfig::default() };
    let report = run_bench(&cfg).map_err(|e| e.to_string())?;
    let expected = ["Image Acquisition", "Image Preprocessing", "Gaze Point Estimation", "Grasp Detection", "Total"];
    let names: Vec<&str> = report.stages.iter().map(|s| s.stage.as_str()).collect();
    let complete = names == expected && report.stages.iter().all(|s| s.median_ms.is_finite() && s.p95_ms >= s.median_ms);
    let rows = report.stages.iter().map(|s| format!("{} {:.3}/{:.3}", s.stage, s.median_ms, s.p95_ms)).collect::<Vec<_>>().join("; ");
    let g = &report.gaze_on_features;
    let soft = if g.median_ms < 5.0 { "met" } else { "missed" };
    check(
        complete,
        format!("median/p95 ms: {rows}; gaze on features median {:.4} ms (5 ms soft target {soft}, informational)", g.median_ms),
    )
}

#[test]
fn acceptance() {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("gaze round trip", gaze_round_trip),
        ("noise degradation", noise_degradation),
        ("pupil detection", pupil_detection),
        ("attention equivalence", attention_equivalence),
        ("gradient check", gradient_check),
        ("head contract", head_contract),
        ("metric fidelity", metric_fidelity),
        ("cornell ingestion", cornell_ingestion),
        ("fusion", fusion),
        ("end-to-end simulation", end_to_end),
        ("benchmark harness", benchmark),
    ];
    let mut failed = Vec::new();
    // write past the test harness capture so the summary always shows
    let mut out = std::io::stdout().lock();
    for (name, f) in criteria {
        let result = std::panic::catch_unwind(f).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or(p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        let line = match &result {
            Ok(d) => format!("PASS  {name}: {d}"),
            Err(d) => {
                failed.push(name);
                format!("FAIL  {name}: {d}")
            }
        };
        writeln!(out, "{line}").unwrap();
        out.flush().unwrap();
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
