use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use sightgrasp::eyesim::{make_scene, observe, render_eye_image, EyeState, Rig, SceneSpec};
use sightgrasp::fuse::{run_bench, run_pipeline, BenchConfig, FusionConfig, GraspDetector, NetworkDetector, ScriptedDetector};
use sightgrasp::geom::{intersect_ray_plane, Pixel};
use sightgrasp::grasp::cornell::DEFAULT_CROP;
use sightgrasp::graspnet::eval::{evaluate_dataset, InputMode};
use sightgrasp::graspnet::{init_params, load_model, save_model, ModelConfig};
use sightgrasp::pupil::PupilDetector;
use sightgrasp::serve::{heatmap_image, serve, synthetic_frame, Service};

#[derive(Parser)]
#[command(name = "sightgrasp", version, about = "Gaze-guided grasp selection")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Success rate of a model on a Cornell-layout dataset directory.
    Evaluate {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, value_enum, default_value = "rgb")]
        input: InputMode,
        #[arg(long, default_value_t = DEFAULT_CROP)]
        crop: usize,
        /// Also write the full report as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Per-stage latency over simulated frames.
    Bench {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Run one simulated frame: the eye looks at scene pixel `u,v`.
    Simulate {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long, value_parser = parse_pixel)]
        gaze: Pixel,
        #[arg(long)]
        rig: Option<PathBuf>,
        /// Model file, or `scripted` for the ground-truth detector.
        #[arg(long, default_value = "scripted")]
        model: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Directory for scene, eye and heatmap PNGs.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// HTTP service for the operator console.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: SocketAddr,
        /// Model file, or `scripted` for the ground-truth detector.
        #[arg(long)]
        model: String,
        #[arg(long)]
        rig: Option<PathBuf>,
        /// Scene for the initial synthetic frame.
        #[arg(long)]
        scene: Option<PathBuf>,
        #[arg(long)]
        fusion: Option<PathBuf>,
    },
    /// Grasp network utilities.
    Graspnet {
        #[command(subcommand)]
        cmd: NetCmd,
    },
    /// Pupil and glint detection on one near-eye image.
    Pupil {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        rig: Option<PathBuf>,
        /// Write the symmetry response and edge map here.
        #[arg(long)]
        debug_dir: Option<PathBuf>,
    },
    /// Print or write the built-in rig as JSON.
    Rig {
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum NetCmd {
    /// Write a freshly initialized model.
    Init {
        /// `toy`, `tiny`, `scene`, `default`, or a JSON config file.
        #[arg(long, default_value = "toy")]
        config: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Per-image success on a directory of `*cpos.txt` / `*r.png` pairs.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        images: PathBuf,
        #[arg(long, value_enum, default_value = "rgb")]
        input: InputMode,
    },
    /// Config and parameter count of a model file.
    Info {
        #[arg(long)]
        model: PathBuf,
    },
}

fn parse_pixel(s: &str) -> Result<Pixel, String> {
    let (u, v) = s.split_once(',').ok_or("expected u,v")?;
    let f = |t: &str| t.trim().parse::<f64>().map_err(|e| e.to_string());
    Ok(Pixel::new(f(u)?, f(v)?))
}

fn load_rig(path: Option<&Path>) -> Result<Rig> {
    match path {
        Some(p) => Rig::load(p).with_context(|| format!("loading rig {}", p.display())),
        None => Ok(Rig::default()),
    }
}

fn load_detector(spec: &str) -> Result<Box<dyn GraspDetector>> {
    if spec == "scripted" {
        return Ok(Box::new(ScriptedDetector));
    }
    Ok(Box::new(NetworkDetector::load(Path::new(spec)).with_context(|| format!("loading model {spec}"))?))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn model_config(name: &str) -> Result<ModelConfig> {
    Ok(match name {
        "toy" => ModelConfig::toy(),
        "tiny" => ModelConfig::tiny(),
        "scene" => ModelConfig::scene(),
        "default" => ModelConfig::default(),
        path => read_json(Path::new(path))?,
    })
}

fn simulate(scene: &Path, gaze: Pixel, rig: Option<&Path>, model: &str, seed: u64, out: Option<&Path>) -> Result<()> {
    let rig = load_rig(rig)?;
    let spec: SceneSpec = read_json(scene)?;
    let frame = make_scene(&spec, &rig.scene_camera, &rig.working_plane, rig.scene_size)?;
    let detector = load_detector(model)?;
    let target = intersect_ray_plane(&rig.scene_camera.pixel_ray(&gaze), &rig.working_plane)?;
    let eye = EyeState::looking_at(rig.eye.cornea_center, target, &rig.eye)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let obs = observe(&eye, &rig, 0.0, &mut rng)?;
    let pupil = PupilDetector::new(rig.pupil.clone());
    let result = run_pipeline(&frame, &obs, &rig, &pupil, detector.as_ref(), &FusionConfig::default(), &mut rng)?;

    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        frame.image.save(dir.join("scene.png"))?;
        heatmap_image(&result.maps).save(dir.join("heatmap.png"))?;
        let mut img_rng = ChaCha8Rng::seed_from_u64(seed);
        for (k, o) in obs.iter().enumerate() {
            render_eye_image(o, rig.eye_image_size, rig.eye_noise, &rig.render, &mut img_rng).save(dir.join(format!("eye{k}.png")))?;
        }
    }
    let report = serde_json::json!({
        "gaze_target": [gaze.u, gaze.v],
        "gaze_estimate": result.gaze.scene_px.map(|p| [p.u, p.v]),
        "selection": result.selection.to_json(),
        "timings_ms": result.timings,
        "truth_grasps": frame.truth_grasps.iter().map(|r| r.to_json()).collect::<Vec<_>>(),
    });
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn pupil_cmd(image: &Path, rig: Option<&Path>, debug_dir: Option<&Path>) -> Result<()> {
    let rig = load_rig(rig)?;
    let img = image::open(image)?.to_luma8();
    let det = PupilDetector::new(rig.pupil.clone());
    let (res, debug) = det.detect_with_debug(&img);
    if let (Some(dir), Some(debug)) = (debug_dir, debug) {
        std::fs::create_dir_all(dir)?;
        debug.response.total.to_gray_normalized().save(dir.join("frst_response.png"))?;
        if let Some(edges) = &debug.edges {
            edges.to_gray().save(dir.join("edges.png"))?;
        }
    }
    match res {
        Ok(f) => {
            let out = serde_json::json!({
                "pupil": f.pupil,
                "glint": f.glint.map(|g| [g.u, g.v]),
                "coarse": [f.coarse.center.u, f.coarse.center.v],
                "edge_points": f.edge_points,
            });
            println!("{}", serde_json::to_string_pretty(&out)?);
            Ok(())
        }
        Err(e) => bail!("detection failed: {e}"),
    }
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().cmd {
        Cmd::Evaluate { dataset, model, input, crop, json } => {
            let (cfg, params) = load_model(&model)?;
            let report = evaluate_dataset(&dataset, &params, &cfg, input, crop)?;
            print!("{}", report.table());
            if let Some(path) = json {
                std::fs::write(path, serde_json::to_string_pretty(&report)?)?;
            }
        }
        Cmd::Bench { config, json } => {
            let cfg: BenchConfig = match config {
                Some(p) => read_json(&p)?,
                None => BenchConfig::default(),
            };
            let report = run_bench(&cfg)?;
            print!("{}", report.table());
            if let Some(path) = json {
                std::fs::write(path, serde_json::to_string_pretty(&report)?)?;
            }
        }
        Cmd::Simulate { scene, gaze, rig, model, seed, out } => {
            simulate(&scene, gaze, rig.as_deref(), &model, seed, out.as_deref())?;
        }
        Cmd::Serve { bind, model, rig, scene, fusion } => {
            let rig = load_rig(rig.as_deref())?;
            let detector = load_detector(&model)?;
            let frame = match scene {
                Some(p) => make_scene(&read_json::<SceneSpec>(&p)?, &rig.scene_camera, &rig.working_plane, rig.scene_size)?,
                None => synthetic_frame(&rig)?,
            };
            let fusion = match fusion {
                Some(p) => read_json(&p)?,
                None => FusionConfig::default(),
            };
            let service = Service::new(detector, fusion, frame)?;
            tokio::runtime::Runtime::new()?.block_on(serve(bind, service))?;
        }
        Cmd::Graspnet { cmd } => match cmd {
            NetCmd::Init { config, out, seed } => {
                let mut cfg = model_config(&config)?;
                if let Some(s) = seed {
                    cfg.seed = s;
                }
                let params = init_params(&cfg)?;
                save_model(&out, &cfg, &params)?;
                println!("wrote {} ({} parameters)", out.display(), params.num_scalars());
            }
            NetCmd::Eval { model, images, input } => {
                let (cfg, params) = load_model(&model)?;
                let report = evaluate_dataset(&images, &params, &cfg, input, DEFAULT_CROP)?;
                for r in &report.images {
                    println!("{}", serde_json::to_string(r)?);
                }
                eprint!("{}", report.table().lines().last().map(|l| format!("{l}\n")).unwrap_or_default());
            }
            NetCmd::Info { model } => {
                let (cfg, params) = load_model(&model)?;
                println!("{}", serde_json::to_string_pretty(&cfg)?);
                println!("{} tensors, {} parameters", params.tensors.len(), params.num_scalars());
            }
        },
        Cmd::Pupil { image, rig, debug_dir } => pupil_cmd(&image, rig.as_deref(), debug_dir.as_deref())?,
        Cmd::Rig { out } => {
            let json = Rig::default().to_json_pretty();
            match out {
                Some(p) => std::fs::write(p, json)?,
                None => println!("{json}"),
            }
        }
    }
    Ok(())
}
