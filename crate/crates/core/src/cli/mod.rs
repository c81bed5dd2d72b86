//! Command-line front end: `pretrain`, `eval-prop`, `attn-map`,
//! `recon-grid`, `make-synth` and `flops`.
//!
//! Exit codes: 0 ok, 2 usage or configuration, 3 numeric failure, 4 data
//! contract, 5 io.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use crate::model::{
    count_attention_ops, extract_cls_attention, make_mask_plan, patchify, resolve_mask_ratio,
    unpatchify, ModelConfig, ModelError, ModelParams, TARGET_EPS,
};
use crate::numerics::{domain, NumericsError, Rng, Tape, Tensor};
use crate::optim::OptimError;
use crate::propeval::{evaluate_frames, format_report, EvalConfig, PropError, PropagationConfig, SequenceReport};
use crate::trainer::{load_checkpoint, train, TrainConfig, TrainError};
use crate::views::{
    generate_view_pair, load_ppm, resize_bilinear, save_gray_ppm, save_ppm, scan_dataset, synth_moving_shapes, CropRect,
    Image, SynthConfig, ViewError, CHANNELS,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;
pub const EXIT_DATA: i32 = 4;
pub const EXIT_IO: i32 = 5;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Numeric(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Numeric(_) => EXIT_NUMERIC,
            CliError::Data(_) => EXIT_DATA,
            CliError::Io(_) => EXIT_IO,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<ViewError> for CliError {
    fn from(e: ViewError) -> Self {
        match e {
            ViewError::Io(io) => CliError::Io(io.to_string()),
            ViewError::Parse { .. } => CliError::Data(e.to_string()),
            ViewError::Param(_) => CliError::Usage(e.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Param(_) => CliError::Usage(e.to_string()),
            ModelError::Numerics(NumericsError::NonFinite(_)) => CliError::Numeric(e.to_string()),
            ModelError::View(v) => v.into(),
            ModelError::Contract(_) | ModelError::Numerics(_) => CliError::Data(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config { .. } => CliError::Usage(e.to_string()),
            TrainError::NonFinite { .. } | TrainError::Optim(OptimError::NonFinite(_)) => {
                CliError::Numeric(e.to_string())
            }
            TrainError::Optim(_) => CliError::Usage(e.to_string()),
            TrainError::Data(_) | TrainError::Format { .. } | TrainError::Version { .. } => {
                CliError::Data(e.to_string())
            }
            TrainError::Model(m) => m.into(),
            TrainError::View(v) => v.into(),
            TrainError::Io(io) => CliError::Io(io.to_string()),
        }
    }
}

impl From<PropError> for CliError {
    fn from(e: PropError) -> Self {
        match e {
            PropError::Param(_) => CliError::Usage(e.to_string()),
            PropError::Contract(_) => CliError::Data(e.to_string()),
            PropError::Model(m) => m.into(),
            PropError::View(v) => v.into(),
            PropError::Io(io) => CliError::Io(io.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "cropmae", version, about = "Cropped-view masked autoencoder pre-training and evaluation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Pre-train on a dataset directory; writes metrics.log and checkpoints under --out.
    Pretrain(PretrainArgs),
    /// Propagate first-frame labels with a frozen encoder and report J, F, mIoU and PCK.
    EvalProp(EvalPropArgs),
    /// Write one CLS attention map per head of the chosen encoder layer.
    AttnMap(AttnMapArgs),
    /// Write a grid with rows Input, Crop, Masked, Reconstruction.
    ReconGrid(ReconGridArgs),
    /// Generate a synthetic moving-shapes dataset.
    MakeSynth(MakeSynthArgs),
    /// Print attention multiply-accumulate counts for several visible-patch counts.
    Flops(FlopsArgs),
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    /// Flat `key = value` configuration file; flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset root (sequence directories of frame_NNNNN.ppm).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Crop strategy: same, random, local-to-global, global-to-local, frame-pair [default: global-to-local]
    #[arg(long)]
    pub strategy: Option<String>,
    /// Mask ratio quoted for a 196-patch grid [default: 0.985]
    #[arg(long)]
    pub mask_ratio: Option<f64>,
    /// Training length in epochs [default: 100]
    #[arg(long)]
    pub epochs: Option<f64>,
    /// Training length in optimizer steps (overrides --epochs)
    #[arg(long)]
    pub steps: Option<u64>,
    /// Effective batch size [default: 64]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Random seed [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Extra `key=value` settings, applied after the config file and before other flags.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Output directory.
    #[arg(long, default_value = "runs/pretrain")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalPropArgs {
    /// Checkpoint written by pretrain.
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Dataset root or single sequence directory with frame_NNNNN.ppm files.
    #[arg(long)]
    pub frames: PathBuf,
    /// Directory holding mask_NNNNN.pgm (and kp_NNNNN.txt) files laid out like
    /// --frames; defaults to the frame directories themselves.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long, default_value_t = 7)]
    pub top_k: usize,
    #[arg(long, default_value_t = 20)]
    pub queue: usize,
    /// Chebyshev neighbourhood radius in grid cells.
    #[arg(long, default_value_t = 20)]
    pub radius: usize,
    #[arg(long, default_value_t = 0.07)]
    pub temperature: f64,
    /// Report file (key=value lines).
    #[arg(long, default_value = "report.txt")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AttnMapArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Input PPM image; resized to the model input size.
    #[arg(long)]
    pub image: PathBuf,
    /// Encoder layer (0-based) [default: last]
    #[arg(long)]
    pub layer: Option<usize>,
    /// Output directory for head_NN.ppm files.
    #[arg(long, default_value = "attn")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReconGridArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Input PPM images, one grid column each.
    #[arg(long, num_args = 1.., required = true)]
    pub images: Vec<PathBuf>,
    /// Seed for crops and masks.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output PPM file.
    #[arg(long, default_value = "recon.ppm")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct MakeSynthArgs {
    #[arg(long, default_value = "moving-shapes")]
    pub kind: String,
    /// Number of sequences.
    #[arg(long, default_value_t = 200)]
    pub n: usize,
    #[arg(long, default_value_t = 8)]
    pub frames: usize,
    /// Frame side in pixels.
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "data/moving-shapes")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FlopsArgs {
    /// Training config file to take the model from [default: vit-small-16 preset]
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Model preset when no config is given: vit-small-16, desk or micro.
    #[arg(long, default_value = "vit-small-16")]
    pub preset: String,
    /// Visible V2 patch counts to compare (repeatable).
    #[arg(long, default_values_t = [9usize, 2])]
    pub visible: Vec<usize>,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, S>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if code == EXIT_OK { write!(out, "{text}") } else { write!(err, "{text}") };
            return code;
        }
    };
    match dispatch(cli.command, out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cmd: Command, out: &mut dyn Write) -> Result<(), CliError> {
    match cmd {
        Command::Pretrain(a) => pretrain(a, out),
        Command::EvalProp(a) => eval_prop(a, out),
        Command::AttnMap(a) => attn_map(a, out),
        Command::ReconGrid(a) => recon_grid(a, out),
        Command::MakeSynth(a) => make_synth(a, out),
        Command::Flops(a) => flops(a, out),
    }
}

/// Defaults, then the config file, then `--set` pairs, then dedicated flags.
pub fn resolve_train_config(a: &PretrainArgs) -> Result<TrainConfig, CliError> {
    let mut cfg = TrainConfig::default();
    if let Some(path) = &a.config {
        let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        cfg.apply_text(&text)?;
    }
    for pair in &a.set {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got {pair:?}")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    let mut flag = |key: &str, value: Option<String>| -> Result<(), CliError> {
        if let Some(v) = value {
            cfg.set(key, &v)?;
        }
        Ok(())
    };
    flag("data", a.data.as_ref().map(|p| p.display().to_string()))?;
    flag("strategy", a.strategy.clone())?;
    flag("mask_ratio", a.mask_ratio.map(|v| v.to_string()))?;
    flag("epochs", a.epochs.map(|v| v.to_string()))?;
    flag("steps", a.steps.map(|v| v.to_string()))?;
    flag("batch_size", a.batch_size.map(|v| v.to_string()))?;
    flag("seed", a.seed.map(|v| v.to_string()))?;
    if cfg.data.as_os_str().is_empty() {
        return Err(CliError::Usage("no dataset given (--data or `data =` in --config)".into()));
    }
    cfg.validate()?;
    Ok(cfg)
}

fn pretrain(a: PretrainArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let cfg = resolve_train_config(&a)?;
    if !cfg.data.is_dir() {
        return Err(CliError::Io(format!("dataset {} not found", cfg.data.display())));
    }
    let result = train(&cfg, &a.out)?;
    let last = result.records.last().map_or(f64::NAN, |r| r.loss);
    writeln!(
        out,
        "trained {} steps (mask ratio {:.5} on {} patches); final loss {last}; wrote {}",
        result.plan.total_steps,
        result.mask_ratio,
        cfg.model.patch.n_patches(),
        a.out.join("final.cmae").display()
    )?;
    Ok(())
}

fn load_params(path: &Path) -> Result<(TrainConfig, ModelParams<f32>), CliError> {
    if !path.exists() {
        return Err(CliError::Io(format!("checkpoint {} not found", path.display())));
    }
    let ck = load_checkpoint::<f32>(path)?;
    Ok((ck.config, ck.params))
}

fn eval_prop(a: EvalPropArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let (_, params) = load_params(&a.ckpt)?;
    let cfg = EvalConfig {
        propagation: PropagationConfig {
            top_k: a.top_k,
            queue_len: a.queue,
            radius: a.radius,
            temperature: a.temperature,
        },
        ..EvalConfig::default()
    };
    cfg.propagation.validate()?;
    if !a.frames.is_dir() {
        return Err(CliError::Io(format!("{} is not a directory", a.frames.display())));
    }
    let sequences = scan_dataset(&a.frames)?;
    if sequences.is_empty() {
        return Err(CliError::Data(format!("no sequences under {}", a.frames.display())));
    }
    let single = sequences.len() == 1 && sequences[0].dir == a.frames;
    let mut reports: Vec<SequenceReport> = Vec::new();
    for seq in &sequences {
        let mut labels = seq.clone();
        if let Some(root) = &a.labels {
            labels.dir = if single { root.clone() } else { root.join(&seq.name) };
        }
        let frames = seq.load_frames()?;
        let masks = (0..frames.len()).map(|i| labels.load_mask(i)).collect::<Result<Vec<_>, _>>()?;
        let kps = if labels.keypoint_path(0).exists() {
            Some((0..frames.len()).map(|i| labels.load_keypoints(i)).collect::<Result<Vec<_>, _>>()?)
        } else {
            None
        };
        let r = evaluate_frames(&params, &seq.name, &frames, &masks, kps.as_deref(), &cfg)?;
        writeln!(out, "{}: J={:.4} F={:.4} J&F={:.4} mIoU={:.4}", r.name, r.j, r.f, r.jf, r.miou)?;
        reports.push(r);
    }
    let report = format_report(&reports, cfg.pck_alphas);
    fs::write(&a.out, &report)?;
    writeln!(out, "wrote {}", a.out.display())?;
    Ok(())
}

/// Resizes `image` to a square `size` input if needed.
fn fit(image: &Image, size: usize) -> Result<Image, CliError> {
    if image.height() == size && image.width() == size {
        return Ok(image.clone());
    }
    Ok(resize_bilinear(image, &CropRect::full(image.height(), image.width()), size, size)?)
}

fn attn_map(a: AttnMapArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let (_, params) = load_params(&a.ckpt)?;
    let size = params.config.patch.image_size;
    let image = fit(&load_ppm(&a.image)?, size)?;
    let maps = extract_cls_attention(&params, &image, a.layer)?;
    let (heads, g) = (maps.shape()[0], maps.shape()[1]);
    fs::create_dir_all(&a.out)?;
    for h in 0..heads {
        let cell = &maps.data()[h * g * g..(h + 1) * g * g];
        let peak = cell.iter().copied().fold(0.0f32, f32::max).max(f32::MIN_POSITIVE);
        let scale = size / g;
        let pixels: Vec<f32> = (0..size * size).map(|i| cell[(i / size / scale) * g + (i % size) / scale] / peak).collect();
        save_gray_ppm(&pixels, size, size, a.out.join(format!("head_{h:02}.ppm")))?;
    }
    writeln!(out, "wrote {heads} attention maps to {}", a.out.display())?;
    Ok(())
}

/// Source, masked view and reconstruction for one image, each `size × size`.
pub struct ReconRow {
    pub input: Image,
    pub crop: Image,
    pub masked: Image,
    pub reconstruction: Image,
}

/// Runs the model on one image: a view pair under the checkpoint's strategy,
/// a mask plan on V2, and a prediction rescaled by each target patch's own
/// mean and spread. Visible patches are shown as given.
pub fn reconstruct(params: &ModelParams<f32>, cfg: &TrainConfig, image: &Image, seed: u64) -> Result<ReconRow, CliError> {
    let size = params.config.patch.image_size;
    let mut rng = Rng::new(seed, domain::PROBE | 7);
    let pair = generate_view_pair(image, cfg.strategy, &cfg.augment, &mut rng)?;
    let n = params.config.patch.n_patches();
    let plan = make_mask_plan(n, resolve_mask_ratio(cfg.mask_ratio, n)?, &mut rng)?;
    let tape = Tape::new();
    let net = params.bind_frozen(&tape);
    let v1 = net.encode(&pair.v1, None, false)?;
    let v2 = net.encode(&pair.v2, Some(&plan), false)?;
    let pred = net.decode(&v2, &plan, &v1, None, false)?.pred.value();

    let patches = patchify::<f32>(&pair.v2, &params.config.patch)?;
    let pd = params.config.patch.patch_dim();
    let mut recon = patches.data().to_vec();
    let mut masked = patches.data().to_vec();
    for r in plan.masked() {
        let row = patches.row(r);
        let mean = row.iter().sum::<f32>() / pd as f32;
        let std = (row.iter().map(|v| (v - mean).powi(2)).sum::<f32>() / pd as f32 + TARGET_EPS as f32).sqrt();
        for c in 0..pd {
            recon[r * pd + c] = pred.at(&[r, c]) * std + mean;
            masked[r * pd + c] = 0.5;
        }
    }
    let to_image = |data: Vec<f32>| -> Result<Image, CliError> {
        Ok(unpatchify(&Tensor::new(patches.shape(), data).map_err(ModelError::from)?, &params.config.patch)?)
    };
    Ok(ReconRow {
        input: fit(image, size)?,
        crop: pair.v2.clone(),
        masked: to_image(masked)?,
        reconstruction: to_image(recon)?,
    })
}

/// Tiles rows (Input, Crop, Masked, Reconstruction) over one column per image.
pub fn tile_grid(rows: &[ReconRow], gap: usize) -> Result<Image, CliError> {
    let size = rows.first().map_or(0, |r| r.input.height());
    let (cols, lines) = (rows.len(), 4);
    let (h, w) = (lines * size + (lines + 1) * gap, cols * size + (cols + 1) * gap);
    let mut grid = Image::filled(h, w, [1.0; 3]);
    for (c, row) in rows.iter().enumerate() {
        for (l, tile) in [&row.input, &row.crop, &row.masked, &row.reconstruction].into_iter().enumerate() {
            let (oy, ox) = (gap + l * (size + gap), gap + c * (size + gap));
            for y in 0..size {
                for x in 0..size {
                    grid.set_pixel(oy + y, ox + x, tile.pixel(y, x));
                }
            }
        }
    }
    debug_assert_eq!(grid.data().len(), h * w * CHANNELS);
    Ok(grid)
}

fn recon_grid(a: ReconGridArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let (cfg, params) = load_params(&a.ckpt)?;
    let rows = a
        .images
        .iter()
        .enumerate()
        .map(|(i, p)| reconstruct(&params, &cfg, &load_ppm(p)?, a.seed.wrapping_add(i as u64)))
        .collect::<Result<Vec<_>, _>>()?;
    save_ppm(&tile_grid(&rows, 2)?, &a.out)?;
    writeln!(out, "wrote {} ({} columns; rows: input, crop, masked, reconstruction)", a.out.display(), rows.len())?;
    Ok(())
}

fn make_synth(a: MakeSynthArgs, out: &mut dyn Write) -> Result<(), CliError> {
    if a.kind != "moving-shapes" {
        return Err(CliError::Usage(format!("unknown dataset kind {:?} (moving-shapes)", a.kind)));
    }
    if a.n == 0 {
        return Err(CliError::Usage("--n must be at least 1".into()));
    }
    let cfg = SynthConfig {
        sequences: a.n,
        frames: a.frames,
        size: a.size,
        ..SynthConfig::default()
    };
    let n = synth_moving_shapes(a.seed, &cfg, &a.out)?;
    writeln!(out, "wrote {n} sequences of {} frames ({}×{}) to {}", a.frames, a.size, a.size, a.out.display())?;
    Ok(())
}

fn flops(a: FlopsArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let model = match &a.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
            TrainConfig::from_text(&text)?.model
        }
        None => match a.preset.as_str() {
            "vit-small-16" => ModelConfig::vit_small_16(),
            "desk" => ModelConfig::desk(),
            "micro" => ModelConfig::micro(),
            other => return Err(CliError::Usage(format!("unknown preset {other:?} (vit-small-16|desk|micro)"))),
        },
    };
    model.validate()?;
    let n = model.patch.n_patches();
    if a.visible.is_empty() {
        return Err(CliError::Usage("give at least one --visible count".into()));
    }
    if let Some(&bad) = a.visible.iter().find(|&&v| v == 0 || v > n) {
        return Err(CliError::Usage(format!("--visible {bad} not in [1, {n}]")));
    }
    writeln!(out, "patches={n} encoder_dim={} decoder_dim={}", model.encoder.dim, model.decoder.dim)?;
    let costs: Vec<_> = a
        .visible
        .iter()
        .map(|&v| count_attention_ops(&model.encoder, &model.decoder, &model.patch, v))
        .collect();
    for (&v, c) in a.visible.iter().zip(&costs) {
        writeln!(
            out,
            "visible={v} encoder_v1={} encoder_v2={} decoder_self={} decoder_cross={} total={}",
            c.encoder_v1,
            c.encoder_v2,
            c.decoder_self,
            c.decoder_cross,
            c.total()
        )?;
    }
    if costs.len() >= 2 {
        let ratio = costs[0].encoder_v2 as f64 / costs[1].encoder_v2 as f64;
        writeln!(
            out,
            "encoder_v2_ratio visible={}/visible={} = {ratio:.4}",
            a.visible[0], a.visible[1]
        )?;
    }
    Ok(())
}
