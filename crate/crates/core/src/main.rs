//! Command-line entry point: dataset synthesis and statistics, training,
//! evaluation, cross-region protocol, inference, Grad-CAM and complexity
//! reports. Exit codes: 0 success, 2 usage/config errors, 1 runtime
//! errors; diagnostics go to stderr as `error: ...` lines.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mcdnet::config::RunConfig;
use mcdnet::data::{
    compute_stats, generate_synthetic_to, load_dataset, sichuan_regions, random_split, region_split,
    Sample, SynthConfig,
};
use mcdnet::error::{Error, Result};
use mcdnet::eval::{cross_region_eval, evaluate, grad_cam};
use mcdnet::model::{predict_scalar, ForwardOpts, McdNet, ModelConfig, ParamStore};
use mcdnet::png_io;
use mcdnet::report;
use mcdnet::tensor::{Graph, Tensor};
use mcdnet::train::{config_snapshot, train_loop, Checkpoint};

#[derive(Parser)]
#[command(
    name = "mcdnet",
    about = "Optical moraine segmentation toolkit",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic moraine dataset with a manifest.
    Synth {
        #[arg(long, default_value_t = 16)]
        n: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        /// Target moraine fraction per tile (band of ±0.05 around it).
        #[arg(long, default_value_t = 0.15)]
        fraction: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Dataset statistics: class proportions and coverage histogram.
    Stats {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on the 9:1 train split of the manifest.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Evaluate a checkpoint on a split of the manifest.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_parser = ["train", "test", "all"], default_value = "test")]
        split: String,
    },
    /// Bidirectional cross-region protocol (four-row table).
    Xregion {
        #[arg(long)]
        config: PathBuf,
    },
    /// Predict a mask for one image.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Grad-CAM heatmap for one image.
    Gradcam {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long = "class", default_value_t = 1)]
        class: usize,
        #[arg(long)]
        layer: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Parameter and MAC/FLOP accounting at a given resolution.
    Flops {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 1024)]
        res: usize,
        /// Directory for the per-layer CSV (defaults to the config's out_dir).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_usage() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth {
            n,
            size,
            fraction,
            seed,
            out,
        } => cmd_synth(n, size, fraction, seed, &out),
        Command::Stats { manifest, out } => cmd_stats(&manifest, &out),
        Command::Train { config } => cmd_train(&config),
        Command::Eval {
            config,
            checkpoint,
            split,
        } => cmd_eval(&config, &checkpoint, &split),
        Command::Xregion { config } => cmd_xregion(&config),
        Command::Infer {
            checkpoint,
            image,
            out,
        } => cmd_infer(&checkpoint, &image, &out),
        Command::Gradcam {
            checkpoint,
            image,
            class,
            layer,
            out,
        } => cmd_gradcam(&checkpoint, &image, class, layer.as_deref(), &out),
        Command::Flops { config, res, out } => cmd_flops(&config, res, out.as_deref()),
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Every command leaves its effective configuration in the output
/// directory for provenance.
fn write_provenance(dir: &Path, text: &str) -> Result<()> {
    write_text(&dir.join("resolved_config.ini"), text)
}

fn cmd_synth(n: usize, size: usize, fraction: f64, seed: u64, out: &Path) -> Result<()> {
    if !(0.0..1.0).contains(&fraction) || fraction == 0.0 {
        return Err(Error::Config(format!(
            "--fraction must be inside (0,1), got {fraction}"
        )));
    }
    let lo = (fraction - 0.05).max(0.005);
    let hi = (fraction + 0.05).min(0.95);
    ensure_dir(out)?;
    let config = SynthConfig {
        n,
        size,
        fraction_range: (lo, hi),
        seed,
    };
    let (samples, manifest) = generate_synthetic_to(out, &config)?;
    write_provenance(
        out,
        &format!("[synth]\nn = {n}\nsize = {size}\nfraction = {fraction}\nseed = {seed}\n"),
    )?;
    println!(
        "wrote {} samples ({}x{}) to {} (manifest {})",
        samples.len(),
        size,
        size,
        out.display(),
        manifest.display()
    );
    Ok(())
}

fn cmd_stats(manifest: &Path, out: &Path) -> Result<()> {
    let samples = load_dataset(manifest)?;
    let stats = compute_stats(&samples, 20)?;
    ensure_dir(out)?;
    write_text(&out.join("stats.csv"), &report::stats_csv(&stats))?;
    let labels = vec!["background".to_string(), "moraine".to_string()];
    write_text(
        &out.join("pixel_distribution.svg"),
        &report::bar_chart_svg(
            "Pixel distribution across classes",
            &labels,
            &[stats.proportions.0, stats.proportions.1],
        ),
    )?;
    let bin_labels: Vec<String> = (0..stats.histogram.len())
        .map(|i| format!("{}%", i * 5))
        .collect();
    let bin_values: Vec<f64> = stats.histogram.iter().map(|c| *c as f64).collect();
    write_text(
        &out.join("area_histogram.svg"),
        &report::bar_chart_svg("Moraine coverage histogram", &bin_labels, &bin_values),
    )?;
    write_provenance(
        out,
        &format!("[stats]\nmanifest = {}\nbins = 20\n", manifest.display()),
    )?;
    println!(
        "stats: background {:.4}, moraine {:.4} over {} samples",
        stats.proportions.0,
        stats.proportions.1,
        samples.len()
    );
    Ok(())
}

/// Deterministic train/test partition shared by `train` and `eval`.
fn manifest_split(config: &RunConfig) -> Result<(Vec<Sample>, Vec<Sample>)> {
    let samples = load_dataset(config.require_manifest()?)?;
    random_split(samples, config.train.seed)
}

fn cmd_train(config_path: &Path) -> Result<()> {
    let config = RunConfig::load(config_path)?;
    let out = config.require_out_dir()?.to_path_buf();
    ensure_dir(&out)?;
    let (train_set, _test) = manifest_split(&config)?;
    let model = McdNet::build(config.model.clone())?;
    let mut store: ParamStore<f32> = model.init_params(config.train.seed)?;
    let (ckpt, history) = train_loop(&model, &mut store, &train_set, &config.train)?;
    ckpt.save(&out.join("checkpoint.mcdn"))?;
    write_text(&out.join("history.csv"), &history.to_csv())?;
    let loss_points: Vec<(f64, f64)> = history
        .epochs
        .iter()
        .map(|e| (e.epoch as f64, e.train_loss))
        .collect();
    write_text(
        &out.join("loss.svg"),
        &report::line_chart_svg("Training loss", "epoch", "loss", &loss_points),
    )?;
    let lr_points: Vec<(f64, f64)> = history
        .epochs
        .iter()
        .map(|e| (e.epoch as f64, e.lr))
        .collect();
    write_text(
        &out.join("lr.svg"),
        &report::line_chart_svg("Learning rate", "epoch", "lr", &lr_points),
    )?;
    write_provenance(&out, &config.resolved_text())?;
    println!(
        "trained {} epochs; best val mIoU {:.4} at epoch {} -> {}",
        history.epochs.len(),
        ckpt.best_val_miou,
        ckpt.epoch,
        out.join("checkpoint.mcdn").display()
    );
    Ok(())
}

fn load_model_from_checkpoint(path: &Path) -> Result<(McdNet, ParamStore<f32>, Checkpoint)> {
    let ckpt = Checkpoint::load(path)?;
    let model_config = ModelConfig::from_snapshot(&ckpt.config_line)?;
    let model = McdNet::build(model_config)?;
    let mut store: ParamStore<f32> = model.init_params(0)?;
    ckpt.apply_to(&mut store)?;
    Ok((model, store, ckpt))
}

fn cmd_eval(config_path: &Path, checkpoint: &Path, split: &str) -> Result<()> {
    let config = RunConfig::load(config_path)?;
    let out = config.require_out_dir()?.to_path_buf();
    ensure_dir(&out)?;
    let (model, store, _ckpt) = load_model_from_checkpoint(checkpoint)?;
    let (train_set, test_set) = manifest_split(&config)?;
    let chosen: Vec<Sample> = match split {
        "train" => train_set,
        "test" => test_set,
        "all" => train_set.into_iter().chain(test_set).collect(),
        other => return Err(Error::Config(format!("unknown split '{other}'"))),
    };
    let metrics = evaluate(&model, &store, &chosen)?;
    let params = model.count_params(&store);
    let macs: u64 = model.total_macs(chosen[0].height(), chosen[0].width())?;
    let name = if model.config.use_cbam {
        "mobilenetv2+cbam"
    } else {
        "mobilenetv2"
    };
    let csv = format!(
        "{}\n{}\n",
        report::METRICS_CSV_HEADER,
        report::metrics_csv_row(name, params, macs, &metrics)
    );
    write_text(&out.join(format!("metrics_{split}.csv")), &csv)?;
    write_provenance(&out, &config.resolved_text())?;
    println!(
        "{split} split: mIoU {:.4}, dice {:.4}, recall {:.4}, precision {:.4}, PA {:.4}",
        metrics.miou, metrics.dice, metrics.recall, metrics.precision, metrics.pixel_accuracy
    );
    Ok(())
}

fn cmd_xregion(config_path: &Path) -> Result<()> {
    let config = RunConfig::load(config_path)?;
    let out = config.require_out_dir()?.to_path_buf();
    ensure_dir(&out)?;
    let samples = load_dataset(config.require_manifest()?)?;
    let split = region_split(samples, &sichuan_regions())?;
    if !split.unassigned.is_empty() {
        eprintln!(
            "note: {} samples fall outside both regions and are ignored",
            split.unassigned.len()
        );
    }
    let rows = cross_region_eval(&config.model, &config.train, &split.regions)?;
    write_text(&out.join("xregion.csv"), &report::xregion_csv(&rows))?;
    write_provenance(&out, &config.resolved_text())?;
    for r in &rows {
        let delta = r
            .delta_miou
            .map(|d| format!(" (dmiou {d:+.4})"))
            .unwrap_or_default();
        println!(
            "train {} -> test {}: mIoU {:.4}{delta}",
            r.train_region, r.test_region, r.metrics.miou
        );
    }
    Ok(())
}

fn load_image_tensor(path: &Path) -> Result<Tensor<f32>> {
    let (w, h, rgb) = png_io::read_rgb(path)?;
    let mut data = vec![0f32; 3 * h * w];
    for p in 0..h * w {
        for ch in 0..3 {
            data[ch * h * w + p] = rgb[p * 3 + ch] as f32 / 255.0;
        }
    }
    Tensor::new(&[3, h, w], data)
}

fn cmd_infer(checkpoint: &Path, image: &Path, out: &Path) -> Result<()> {
    let (model, store, _) = load_model_from_checkpoint(checkpoint)?;
    let img = load_image_tensor(image)?;
    let (h, w) = (img.shape()[1], img.shape()[2]);
    let batch = Tensor::new(&[1, 3, h, w], img.data().to_vec())?;
    let mut graph: Graph<f32> = Graph::new();
    let input = graph.leaf_tensor(&batch, false);
    let pass = model.forward(&mut graph, &store, input, ForwardOpts::inference())?;
    let mask = predict_scalar(graph.data(pass.logits), graph.shape(pass.logits))?;
    ensure_dir(out)?;
    let mask_bytes: Vec<u8> = mask.iter().map(|v| v * 255).collect();
    png_io::write_gray(&out.join("mask.png"), w, h, &mask_bytes)?;
    // Overlay: predicted moraine tinted red over the input.
    let mut overlay = vec![0u8; h * w * 3];
    let data = img.data();
    for p in 0..h * w {
        if mask[p] == 1 {
            overlay[p * 3] = 255;
            overlay[p * 3 + 1] = (data[h * w + p] * 127.0) as u8;
            overlay[p * 3 + 2] = (data[2 * h * w + p] * 127.0) as u8;
        } else {
            for ch in 0..3 {
                overlay[p * 3 + ch] = (data[ch * h * w + p] * 255.0).round() as u8;
            }
        }
    }
    png_io::write_rgb(&out.join("overlay.png"), w, h, &overlay)?;
    let moraine = mask.iter().filter(|v| **v == 1).count();
    println!(
        "inferred {}x{} mask: {:.2}% moraine -> {}",
        w,
        h,
        100.0 * moraine as f64 / mask.len() as f64,
        out.join("mask.png").display()
    );
    Ok(())
}

fn cmd_gradcam(
    checkpoint: &Path,
    image: &Path,
    class: usize,
    layer: Option<&str>,
    out: &Path,
) -> Result<()> {
    let (model, store, _) = load_model_from_checkpoint(checkpoint)?;
    let img = load_image_tensor(image)?;
    let cam = grad_cam(&model, &store, &img, class, layer)?;
    ensure_dir(out)?;
    let bytes: Vec<u8> = cam
        .values
        .iter()
        .map(|v| (v * 255.0).round() as u8)
        .collect();
    png_io::write_gray(&out.join("gradcam.png"), cam.width, cam.height, &bytes)?;
    println!(
        "grad-cam for class {class} at layer {} -> {}",
        cam.target_layer,
        out.join("gradcam.png").display()
    );
    Ok(())
}

fn cmd_flops(config_path: &Path, res: usize, out: Option<&Path>) -> Result<()> {
    let config = RunConfig::load(config_path)?;
    if res == 0 || !res.is_multiple_of(config.model.output_stride) {
        return Err(Error::Config(format!(
            "--res must be a positive multiple of the output stride ({})",
            config.model.output_stride
        )));
    }
    let model = McdNet::build(config.model.clone())?;
    let store: ParamStore<f32> = model.init_params(0)?;
    let params = model.count_params(&store);
    let items = model.count_macs(res, res)?;
    let macs: u64 = items.iter().map(|i| i.macs).sum();
    println!(
        "params {params} | macs {macs} | flops {} @ {res}x{res} (snapshot: {})",
        2 * macs,
        config_snapshot(&config.model, &config.train)
    );
    let out_dir = match out {
        Some(d) => d.to_path_buf(),
        None => config.require_out_dir()?.to_path_buf(),
    };
    ensure_dir(&out_dir)?;
    write_text(
        &out_dir.join(format!("macs_{res}.csv")),
        &report::macs_csv(&items),
    )?;
    write_provenance(&out_dir, &config.resolved_text())?;
    Ok(())
}
