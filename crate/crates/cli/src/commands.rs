use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, ensure, Context, Result};
use dynmotion::analysis::{exchange_motion, intrackability, lds_fit, lds_synthesize, mse, transfer_motion};
use dynmotion::inference::infer_latents;
use dynmotion::io::{
    apply_overrides, flow_to_color, frame_path, load_checkpoint, load_config_onto, load_flow, load_image, load_video,
    save_checkpoint, save_flow, save_image, save_video, verify_config,
};
use dynmotion::model::check::{check_model_gradients, DEFAULT_STEPS, TOLERANCE};
use dynmotion::model::unroll;
use dynmotion::training::synthesize;
use dynmotion::{BatchNormMode, DecompositionTrace, RunConfig, Tensor, Trainer32, Video32};
use image::RgbImage;
use serde_json::{json, Value};

use crate::{Command, ConfigArgs, InferArgs};

/// Batch-norm mode used to explain videos; matches the mode the chains
/// were fitted under.
const DECOMPOSE_MODE: BatchNormMode = BatchNormMode::Train;

fn emit(value: Value) {
    println!("{value}");
}

fn echo_config(cfg: &RunConfig) {
    emit(json!({ "effective_config": cfg }));
}

fn resolve_config(base: RunConfig, args: &ConfigArgs) -> Result<RunConfig> {
    let cfg = match &args.config {
        Some(path) => load_config_onto(&base, path).with_context(|| format!("reading {}", path.display()))?,
        None => base,
    };
    Ok(apply_overrides(&cfg, &args.overrides)?)
}

fn load_trainer(path: &Path) -> Result<Trainer32> {
    load_checkpoint(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn checkpoint_config(t: &Trainer32) -> RunConfig {
    RunConfig {
        model: t.model.clone(),
        train: t.train.clone(),
    }
}

fn load_frames(dir: &Path) -> Result<Video32> {
    load_video(dir).with_context(|| format!("loading video {}", dir.display()))
}

pub fn run(command: Command) -> Result<ExitCode> {
    match command {
        Command::Train {
            video,
            config,
            out,
            trackable_only,
            resume,
            log,
        } => train(&video, &config, &out, trackable_only, resume.as_deref(), log),
        Command::Synthesize { ckpt, length, seed, out } => {
            let t = load_trainer(&ckpt)?;
            echo_config(&checkpoint_config(&t));
            let (video, _) = synthesize(&t.model, &t.params, seed, length)?;
            save_video(&video, &out)?;
            emit(json!({ "frames": video.num_frames(), "seed": seed, "out": out }));
            Ok(ExitCode::SUCCESS)
        }
        Command::Decompose { ckpt, video, out, infer } => {
            let t = load_trainer(&ckpt)?;
            echo_config(&checkpoint_config(&t));
            let v = load_frames(&video)?;
            let trace = explain(&t, &v, &infer)?;
            write_decomposition(&trace, &v, &out)?;
            let score = intrackability(&trace, &v).map(|r| r.score).ok();
            let recon = mse(&trace.frames, v.frames())?;
            emit(json!({ "frames": v.num_frames(), "reconstruction_mse": recon, "intrackability": score, "out": out }));
            Ok(ExitCode::SUCCESS)
        }
        Command::Transfer {
            ckpt,
            appearance,
            out,
            chain,
        } => {
            let t = load_trainer(&ckpt)?;
            echo_config(&checkpoint_config(&t));
            let trace = stored_trace(&t, chain)?;
            let app: Tensor<f32> = load_image(&appearance)?;
            let video = transfer_motion(&trace.flows, &fit_channels(app, t.model.channels)?)?;
            save_video(&video, &out)?;
            emit(json!({ "frames": video.num_frames(), "out": out }));
            Ok(ExitCode::SUCCESS)
        }
        Command::Exchange { ckpt_a, ckpt_b, out } => {
            let (a, b) = (load_trainer(&ckpt_a)?, load_trainer(&ckpt_b)?);
            echo_config(&checkpoint_config(&a));
            echo_config(&checkpoint_config(&b));
            let (ta, tb) = (stored_trace(&a, 0)?, stored_trace(&b, 0)?);
            let (va, vb) = exchange_motion(&ta, &tb, &ta.trackable(0), &tb.trackable(0))?;
            let dir_a = out.join("a_appearance_b_motion");
            let dir_b = out.join("b_appearance_a_motion");
            save_video(&va, &dir_a)?;
            save_video(&vb, &dir_b)?;
            emit(json!({ "outputs": [dir_a, dir_b] }));
            Ok(ExitCode::SUCCESS)
        }
        Command::Intrackability {
            ckpt,
            video,
            report,
            infer,
        } => {
            let t = load_trainer(&ckpt)?;
            echo_config(&checkpoint_config(&t));
            let v = load_frames(&video)?;
            let trace = explain(&t, &v, &infer)?;
            let r = intrackability(&trace, &v)?.with_config(&t.model);
            if let Some(dir) = report.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            fs::write(&report, serde_json::to_string_pretty(&r)?)?;
            let csv = report.with_extension("csv");
            fs::write(&csv, r.to_csv())?;
            emit(json!({ "intrackability": r.score, "report": report, "per_frame": csv }));
            Ok(ExitCode::SUCCESS)
        }
        Command::Lds {
            video,
            dim,
            out,
            length,
            seed,
            no_center,
        } => {
            let v = load_frames(&video)?;
            let length = length.unwrap_or(v.transitions());
            emit(json!({ "effective_config": { "dim": dim, "length": length, "seed": seed, "center": !no_center } }));
            let model = lds_fit(&v, dim, !no_center)?;
            let recon = model.reconstruct()?;
            let recon_mse = mse(recon.frames(), &v.frames().cast())?;
            save_video(&recon, &out.join("reconstruction"))?;
            save_video(&lds_synthesize(&model, length, seed)?, &out.join("synthesized"))?;
            emit(json!({ "reconstruction_mse": recon_mse, "out": out }));
            Ok(ExitCode::SUCCESS)
        }
        Command::Flowviz { flow, out, max } => {
            emit(json!({ "effective_config": { "max_magnitude": max } }));
            let field: Tensor<f32> = load_flow(&flow)?;
            flow_to_color(&field, max)?
                .save(&out)
                .with_context(|| format!("writing {}", out.display()))?;
            emit(json!({ "out": out }));
            Ok(ExitCode::SUCCESS)
        }
        Command::Gradcheck { config, seeds } => gradcheck(&config, &seeds),
    }
}

fn train(
    videos: &[PathBuf],
    args: &ConfigArgs,
    out: &Path,
    trackable_only: bool,
    resume: Option<&Path>,
    log: Option<PathBuf>,
) -> Result<ExitCode> {
    let previous = resume.map(load_trainer).transpose()?;
    let base = previous.as_ref().map(checkpoint_config).unwrap_or_default();
    let mut cfg = resolve_config(base, args)?;
    if trackable_only {
        cfg.model.trackable_only = true;
    }
    cfg.validate()?;
    echo_config(&cfg);

    let frames: Vec<Video32> = videos.iter().map(|d| load_frames(d)).collect::<Result<_>>()?;
    let m = &cfg.model;
    for (dir, v) in videos.iter().zip(&frames) {
        let shape = v.frames().shape();
        ensure!(
            shape == [m.transitions + 1, m.image_size, m.image_size, m.channels],
            "{} has {} frames of {}x{}x{}; the model expects {} frames of {}x{}x{} \
             (set transitions, image_size and channels to match)",
            dir.display(),
            shape[0],
            shape[1],
            shape[2],
            shape[3],
            m.transitions + 1,
            m.image_size,
            m.image_size,
            m.channels
        );
    }

    let mut trainer = match previous {
        Some(mut t) => {
            verify_config(&t.model, &cfg.model)?;
            ensure!(
                t.chains.len() == frames.len(),
                "checkpoint holds {} chains but {} videos were given",
                t.chains.len(),
                frames.len()
            );
            t.train = cfg.train.clone();
            t
        }
        None => Trainer32::new(cfg.model.clone(), cfg.train.clone(), frames.len())?,
    };
    let log_path = log.unwrap_or_else(|| PathBuf::from(format!("{}.log.csv", out.display())));
    let every = cfg.train.checkpoint_every;
    let total = cfg.train.epochs;
    trainer.run(&frames, |t, r| {
        if t.train.log_every > 0 && r.epoch % t.train.log_every == 0 {
            log::info!(
                "epoch {}/{total} mse {:.5} objective {:.3} intrackability {:.4} ({:.2}s)",
                r.epoch,
                r.mse,
                r.objective,
                r.intrackability,
                r.seconds
            );
        }
        if every > 0 && r.epoch % every == 0 {
            save_checkpoint(t, out)?;
            fs::write(&log_path, t.log.to_csv())?;
        }
        Ok(())
    })?;
    save_checkpoint(&trainer, out)?;
    fs::write(&log_path, trainer.log.to_csv())?;
    emit(json!({
        "epochs": trainer.epoch,
        "final": trainer.log.records.last(),
        "checkpoint": out,
        "log": log_path,
    }));
    Ok(ExitCode::SUCCESS)
}

fn gradcheck(args: &ConfigArgs, seeds: &[u64]) -> Result<ExitCode> {
    let toy = RunConfig {
        model: dynmotion::ModelConfig::toy(),
        ..RunConfig::default()
    };
    let cfg = resolve_config(toy, args)?;
    echo_config(&cfg);
    ensure!(!seeds.is_empty(), "at least one seed is required");
    let mut worst = (0.0f64, String::new(), 0u64);
    for &seed in seeds {
        let report = check_model_gradients(&cfg.model, seed, &DEFAULT_STEPS)?;
        let (name, r) = report.worst().context("no gradients were checked")?;
        log::info!("seed {seed}: max rel err {:.3e} at {name}", r.max_rel_err);
        if r.max_rel_err >= worst.0 {
            worst = (r.max_rel_err, name.clone(), seed);
        }
    }
    let passed = worst.0 < TOLERANCE;
    emit(json!({
        "max_rel_err": worst.0,
        "worst": worst.1,
        "seed": worst.2,
        "tolerance": TOLERANCE,
        "passed": passed,
    }));
    Ok(if passed { ExitCode::SUCCESS } else { ExitCode::from(2) })
}

/// Decomposition of a stored chain's training video.
fn stored_trace(t: &Trainer32, chain: usize) -> Result<DecompositionTrace<f32>> {
    ensure!(chain < t.chains.len(), "checkpoint has {} chains, no chain {chain}", t.chains.len());
    Ok(t.decompose(chain, DECOMPOSE_MODE)?)
}

/// Langevin inference on `video`, warm-started from a stored chain when its
/// length matches.
fn explain(t: &Trainer32, video: &Video32, args: &InferArgs) -> Result<DecompositionTrace<f32>> {
    let init = (!args.cold)
        .then(|| t.chains.get(args.chain))
        .flatten()
        .map(|c| &c.latents)
        .filter(|l| l.transitions() == video.transitions());
    if !args.cold && init.is_none() {
        log::warn!("no stored chain matches the video length; starting from zero latents");
    }
    let mut lcfg = t.train.langevin.clone();
    lcfg.steps_per_iteration = args.steps;
    if args.steps == 0 {
        let latents = init.cloned().context("--steps 0 needs a matching stored chain")?;
        return Ok(unroll(&t.model, &t.params, &latents, DECOMPOSE_MODE)?.0);
    }
    let latents = infer_latents(video, &t.params, init, &t.model, &lcfg, DECOMPOSE_MODE)?;
    Ok(unroll(&t.model, &t.params, &latents, DECOMPOSE_MODE)?.0)
}

fn fit_channels(app: Tensor<f32>, channels: usize) -> Result<Tensor<f32>> {
    match channels {
        3 => Ok(app),
        1 => {
            let &[h, w, _] = app.shape() else { unreachable!("images are H x W x 3") };
            let grey = app.data().chunks_exact(3).map(|p| (p[0] + p[1] + p[2]) / 3.0).collect();
            Ok(Tensor::from_vec(&[h, w, 1], grey)?)
        }
        c => bail!("cannot map an RGB image onto {c} channels"),
    }
}

/// Writes reconstruction, trackable and residual frames, colored and raw
/// flows, the appearance image and a summary strip.
fn write_decomposition(trace: &DecompositionTrace<f32>, observed: &Video32, out: &Path) -> Result<()> {
    save_video(&Video32::new(trace.frames.clone())?, &out.join("reconstruction"))?;
    save_video(&Video32::new(trace.trackables.clone())?, &out.join("trackable"))?;
    save_video(&Video32::new(trace.residuals.clone())?, &out.join("residual"))?;
    save_image(&trace.trackable(0), &out.join("appearance.png"))?;
    let (color_dir, raw_dir) = (out.join("flow"), out.join("flow_raw"));
    fs::create_dir_all(&color_dir)?;
    fs::create_dir_all(&raw_dir)?;
    let max = trace.flows.max_abs().into();
    let mut colored = Vec::with_capacity(trace.transitions());
    // File k holds the field that produces frame k + 1.
    for t in 1..=trace.transitions() {
        let field = trace.flow(t);
        save_flow(&field, &raw_dir.join(format!("flow_{:04}.mbgf", t - 1)))?;
        let img = flow_to_color(&field, Some(f64::max(max, 1e-9)))?;
        img.save(frame_path(&color_dir, t - 1))?;
        colored.push(img);
    }
    strip(trace, observed, &colored)?.save(out.join("strip.png"))?;
    Ok(())
}

fn to_rgb(frame: &Tensor<f32>) -> RgbImage {
    let &[h, w, c] = frame.shape() else { unreachable!("frames are H x W x C") };
    let px = |v: f32| dynmotion::io::frames::value_to_pixel(f64::from(v));
    RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let base = (y as usize * w + x as usize) * c;
        let d = frame.data();
        if c == 3 {
            image::Rgb([px(d[base]), px(d[base + 1]), px(d[base + 2])])
        } else {
            image::Rgb([px(d[base]); 3])
        }
    })
}

/// Rows: observed, reconstruction, trackable, residual, flow (first cell
/// blank).
fn strip(trace: &DecompositionTrace<f32>, observed: &Video32, flows: &[RgbImage]) -> Result<RgbImage> {
    let (h, w) = (trace.height() as u32, trace.width() as u32);
    let n = trace.transitions() as u32 + 1;
    let mut img = RgbImage::from_pixel(n * w, 5 * h, image::Rgb([255, 255, 255]));
    let rows: [&dyn Fn(usize) -> Tensor<f32>; 4] =
        [&|t| observed.frame(t), &|t| trace.frame(t), &|t| trace.trackable(t), &|t| trace.residual(t)];
    for (r, get) in rows.iter().enumerate() {
        for t in 0..n {
            image::imageops::replace(&mut img, &to_rgb(&get(t as usize)), (t * w).into(), (r as u32 * h).into());
        }
    }
    for (t, f) in flows.iter().enumerate() {
        image::imageops::replace(&mut img, f, ((t as u32 + 1) * w).into(), (4 * h).into());
    }
    Ok(img)
}
