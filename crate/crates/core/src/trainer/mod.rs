//! Pre-training loop: seeded data order, repeated sampling, a view-generation
//! producer feeding one optimizer thread, checkpoints and a per-step log.

mod checkpoint;
mod config;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, RngState, MAGIC, VERSION,
};
pub use config::{parse_kv, TrainConfig, KEYS};

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::mpsc::sync_channel;

use rayon::prelude::*;
use thiserror::Error;

use crate::model::{
    forward_train, make_mask_plan, resolve_mask_ratio, ModelError, ModelParams, Params,
};
use crate::numerics::{domain, NumericsError, Rng, Tape, Tensor};
use crate::optim::{adamw_step, lr_at, AdamWState, OptimError};
use crate::views::{generate_view_pair, Image, generate_view_pair_from_frames, scan_dataset, Strategy, ViewError, ViewPair};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("config key {key}: {msg}")]
    Config { key: String, msg: String },
    #[error("dataset: {0}")]
    Data(String),
    #[error("non-finite {what} at step {step} (seed {seed}, sample streams {first_sample}..{end_sample})")]
    NonFinite {
        what: String,
        step: u64,
        seed: u64,
        first_sample: u64,
        end_sample: u64,
    },
    #[error("checkpoint format error at byte {offset}: {msg}")]
    Format { offset: usize, msg: String },
    #[error("checkpoint version {found} unsupported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    View(#[from] ViewError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Training frames grouped by sequence. A still-image dataset is a set of
/// one-frame sequences.
#[derive(Clone, Debug, Default)]
pub struct Dataset {
    pub sequences: Vec<Vec<Image>>,
}

impl Dataset {
    pub fn load(root: &Path) -> Result<Self, TrainError> {
        if !root.is_dir() {
            return Err(TrainError::Data(format!("{} is not a directory", root.display())));
        }
        let files = scan_dataset(root)?;
        let sequences = files.iter().map(|s| s.load_frames()).collect::<Result<Vec<_>, _>>()?;
        let ds = Self { sequences };
        if ds.frame_count() == 0 {
            return Err(TrainError::Data(format!("no frames under {}", root.display())));
        }
        Ok(ds)
    }

    pub fn frame_count(&self) -> usize {
        self.sequences.iter().map(Vec::len).sum()
    }

    /// Units drawn per epoch: whole sequences in frame-pair mode, frames otherwise.
    pub fn items(&self, strategy: Strategy) -> usize {
        match strategy {
            Strategy::FramePair => self.sequences.len(),
            _ => self.frame_count(),
        }
    }

    fn frame(&self, mut index: usize) -> &Image {
        for seq in &self.sequences {
            if index < seq.len() {
                return &seq[index];
            }
            index -= seq.len();
        }
        panic!("frame index out of range")
    }
}

/// Builds the view pair of one sample. Frame-pair mode draws the gap from
/// `gap` (capped by the sequence length) and then a start frame.
pub fn sample_views(
    data: &Dataset,
    item: usize,
    cfg: &TrainConfig,
    rng: &mut Rng,
) -> Result<ViewPair, TrainError> {
    match cfg.strategy {
        Strategy::FramePair => {
            let seq = &data.sequences[item];
            let longest = seq.len() - 1;
            let gap = if longest >= cfg.frame_gap.0 {
                rng.int_inclusive(cfg.frame_gap.0, cfg.frame_gap.1.min(longest))
            } else {
                longest
            };
            let start = rng.int_inclusive(0, longest - gap);
            Ok(generate_view_pair_from_frames(&seq[start], &seq[start + gap], &cfg.augment, rng)?)
        }
        s => Ok(generate_view_pair(data.frame(item), s, &cfg.augment, rng)?),
    }
}

/// Sample layout derived from the dataset size and the config.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Plan {
    pub items: usize,
    pub items_per_step: usize,
    pub steps_per_epoch: u64,
    pub total_steps: u64,
}

impl Plan {
    pub fn new(cfg: &TrainConfig, items: usize) -> Result<Self, TrainError> {
        let items_per_step = cfg.batch_size / cfg.repeated_sampling;
        if items < items_per_step {
            return Err(TrainError::Data(format!(
                "{items} items cannot fill one batch of {items_per_step} distinct items"
            )));
        }
        let steps_per_epoch = (items / items_per_step) as u64;
        let total_steps = cfg
            .steps
            .unwrap_or_else(|| (cfg.epochs * steps_per_epoch as f64).ceil().max(1.0) as u64);
        Ok(Self {
            items,
            items_per_step,
            steps_per_epoch,
            total_steps,
        })
    }

    /// Item indices of every sample in `step`, each repeated `repeats` times
    /// consecutively. Epoch `e` visits items in the order of a shuffle drawn
    /// from `(seed, SHUFFLE | e)`; a partial last batch is dropped.
    pub fn batch_items(&self, seed: u64, step: u64, repeats: usize) -> Vec<usize> {
        let epoch = step / self.steps_per_epoch;
        let within = (step % self.steps_per_epoch) as usize;
        let mut order: Vec<usize> = (0..self.items).collect();
        Rng::new(seed, domain::SHUFFLE | epoch).shuffle(&mut order);
        order[within * self.items_per_step..(within + 1) * self.items_per_step]
            .iter()
            .flat_map(|&i| std::iter::repeat_n(i, repeats))
            .collect()
    }
}

/// One line of the metrics log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    /// 1-based.
    pub step: u64,
    pub epoch: u64,
    pub lr: f64,
    pub loss: f64,
}

impl std::fmt::Display for StepRecord {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "step={} epoch={} lr={:e} loss={}", self.step, self.epoch, self.lr, self.loss)
    }
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub params: ModelParams<f32>,
    pub optim: AdamWState<f32>,
    pub records: Vec<StepRecord>,
    pub plan: Plan,
    /// The ratio actually used on this grid.
    pub mask_ratio: f64,
}

fn sample_id(step: u64, batch: usize, slot: usize) -> u64 {
    step * batch as u64 + slot as u64
}

fn batch_pairs(data: &Dataset, cfg: &TrainConfig, plan: &Plan, step: u64) -> Result<Vec<ViewPair>, TrainError> {
    plan.batch_items(cfg.seed, step, cfg.repeated_sampling)
        .into_par_iter()
        .enumerate()
        .map(|(slot, item)| {
            let mut rng = Rng::new(cfg.seed, domain::VIEWS | sample_id(step, cfg.batch_size, slot));
            sample_views(data, item, cfg, &mut rng)
        })
        .collect()
}

fn add_into(acc: &mut [Vec<f64>], grads: &[Tensor<f32>]) {
    for (a, g) in acc.iter_mut().zip(grads) {
        for (x, &y) in a.iter_mut().zip(g.data()) {
            *x += y as f64;
        }
    }
}

/// Mean loss and mean gradients of one batch. Samples are processed in slot
/// order on fresh tapes so the reduction order never changes.
pub fn batch_gradients(
    params: &ModelParams<f32>,
    pairs: &[ViewPair],
    cfg: &TrainConfig,
    ratio: f64,
    step: u64,
) -> Result<(f64, Params<Tensor<f32>>), TrainError> {
    let shapes = params.weights.named();
    let mut acc: Vec<Vec<f64>> = shapes.iter().map(|(_, t)| vec![0.0; t.numel()]).collect();
    let mut loss_sum = 0.0;
    for (slot, pair) in pairs.iter().enumerate() {
        let tape = Tape::new();
        let net = params.bind(&tape);
        let mut rng = Rng::new(cfg.seed, domain::MODEL | sample_id(step, cfg.batch_size, slot));
        let (loss, _) = forward_train(&net, pair, ratio, cfg.loss_scope, &mut rng, true)?;
        loss_sum += loss.value().data()[0] as f64;
        let grads = tape.backward(loss).map_err(ModelError::from)?;
        let leaves: Vec<Tensor<f32>> = net.weights.named().into_iter().map(|(_, v)| grads.get_or_zeros(*v)).collect();
        add_into(&mut acc, &leaves);
    }
    let n = pairs.len() as f64;
    let mean: Vec<Tensor<f32>> = acc
        .into_iter()
        .zip(&shapes)
        .map(|(a, (_, t))| Tensor::from_fn(t.shape(), |i| (a[i] / n) as f32))
        .collect();
    Ok((loss_sum / n, params.weights.rebuild(mean)?))
}

/// Runs the full schedule. With `out` set, writes `metrics.log`, periodic
/// checkpoints and `final.cmae` there. `on_step` sees every record as it is logged.
pub fn train_with(
    cfg: &TrainConfig,
    data: &Dataset,
    out: Option<&Path>,
    on_step: &mut dyn FnMut(&StepRecord),
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    let items = data.items(cfg.strategy);
    if items == 0 {
        return Err(TrainError::Data("dataset is empty".into()));
    }
    if let Some(bad) = data.sequences.iter().flatten().find(|im| im.height() < 2 || im.width() < 2) {
        return Err(TrainError::Data(format!("frame {}×{} too small", bad.height(), bad.width())));
    }
    let plan = Plan::new(cfg, items)?;
    let ratio = resolve_mask_ratio(cfg.mask_ratio, cfg.model.patch.n_patches())?;
    let mut schedule = cfg.schedule;
    schedule.batch_size = cfg.batch_size;
    schedule.total_epochs = plan.total_steps as f64 / plan.steps_per_epoch as f64;
    schedule.warmup_epochs = schedule.warmup_epochs.min(schedule.total_epochs);
    schedule.validate()?;

    let mut log = match out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            fs::write(dir.join("config.txt"), cfg.to_text())?;
            Some(BufWriter::new(File::create(dir.join("metrics.log"))?))
        }
        None => None,
    };

    let mut params = ModelParams::<f32>::init(cfg.model, cfg.seed)?;
    let mut optim = AdamWState::zeros_like(&params.weights);
    let mut records = Vec::with_capacity(plan.total_steps as usize);
    let workers = if cfg.workers == 0 { rayon::current_num_threads() } else { cfg.workers };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| TrainError::Config {
            key: "workers".into(),
            msg: e.to_string(),
        })?;

    std::thread::scope(|scope| -> Result<(), TrainError> {
        let (tx, rx) = sync_channel::<Result<Vec<ViewPair>, TrainError>>(2);
        let producer = scope.spawn(move || {
            for step in 0..plan.total_steps {
                let batch = pool.install(|| batch_pairs(data, cfg, &plan, step));
                if tx.send(batch).is_err() {
                    break;
                }
            }
        });
        let result = (|| {
            for step in 0..plan.total_steps {
                let pairs = rx.recv().map_err(|_| TrainError::Data("view producer stopped".into()))??;
                let lr = lr_at(step, plan.steps_per_epoch, &schedule);
                let nonfinite = |what: &str| TrainError::NonFinite {
                    what: what.into(),
                    step: step + 1,
                    seed: cfg.seed,
                    first_sample: sample_id(step, cfg.batch_size, 0),
                    end_sample: sample_id(step + 1, cfg.batch_size, 0),
                };
                let (loss, grads) = match batch_gradients(&params, &pairs, cfg, ratio, step) {
                    Err(TrainError::Model(ModelError::Numerics(NumericsError::NonFinite(at)))) => {
                        return Err(dump(out, nonfinite(&format!("value in {at}"))))
                    }
                    r => r?,
                };
                if !loss.is_finite() {
                    return Err(dump(out, nonfinite("loss")));
                }
                match adamw_step(&mut params.weights, &grads, &mut optim, lr, &cfg.adamw) {
                    Err(OptimError::NonFinite(name)) => {
                        return Err(dump(out, nonfinite(&format!("gradient in {name}"))))
                    }
                    r => r?,
                }
                if !params.is_finite() || !optim.is_finite() {
                    return Err(dump(out, nonfinite("parameter or moment")));
                }
                let rec = StepRecord {
                    step: step + 1,
                    epoch: step / plan.steps_per_epoch,
                    lr,
                    loss,
                };
                if let Some(w) = log.as_mut() {
                    writeln!(w, "{rec}")?;
                }
                on_step(&rec);
                records.push(rec);
                let done = step + 1;
                if let Some(dir) = out {
                    if cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 && done < plan.total_steps {
                        let ck = snapshot(cfg, &params, &optim, done);
                        save_checkpoint(&dir.join(format!("checkpoint_{done:06}.cmae")), &ck)?;
                    }
                }
            }
            Ok(())
        })();
        drop(rx);
        producer.join().expect("view producer panicked");
        result
    })?;

    if let Some(w) = log.as_mut() {
        w.flush()?;
    }
    if let Some(dir) = out {
        save_checkpoint(&dir.join("final.cmae"), &snapshot(cfg, &params, &optim, plan.total_steps))?;
    }
    Ok(TrainOutcome {
        params,
        optim,
        records,
        plan,
        mask_ratio: ratio,
    })
}

/// Loads `cfg.data` and trains, writing results under `out`.
pub fn train(cfg: &TrainConfig, out: &Path) -> Result<TrainOutcome, TrainError> {
    let data = Dataset::load(&cfg.data)?;
    train_with(cfg, &data, Some(out), &mut |_| {})
}

fn snapshot(cfg: &TrainConfig, params: &ModelParams<f32>, optim: &AdamWState<f32>, step: u64) -> Checkpoint<f32> {
    Checkpoint {
        config: cfg.clone(),
        params: params.clone(),
        optim: optim.clone(),
        step,
        rng: RngState::of(&Rng::new(cfg.seed, domain::VIEWS | sample_id(step, cfg.batch_size, 0))),
    }
}

/// Writes the offending batch's seed and sample streams next to the log.
fn dump(out: Option<&Path>, err: TrainError) -> TrainError {
    if let (Some(dir), TrainError::NonFinite { step, seed, first_sample, end_sample, what }) = (out, &err) {
        let text = format!(
            "what={what}\nstep={step}\nseed={seed}\nview_streams={}..{}\nmodel_streams={}..{}\n",
            domain::VIEWS | first_sample,
            domain::VIEWS | end_sample,
            domain::MODEL | first_sample,
            domain::MODEL | end_sample
        );
        if let Err(io) = fs::write(dir.join(format!("nonfinite_step_{step:06}.txt")), text) {
            return TrainError::Io(io);
        }
    }
    err
}

/// Deterministic evaluation input derived from the seed alone.
pub fn probe_pair(cfg: &TrainConfig) -> Result<ViewPair, TrainError> {
    let size = 2 * cfg.augment.output_size;
    let mut rng = Rng::new(cfg.seed, domain::PROBE);
    let image = Image::from_fn(size, size, |_, _| {
        [rng.uniform() as f32, rng.uniform() as f32, rng.uniform() as f32]
    });
    Ok(generate_view_pair(&image, Strategy::GlobalToLocal, &cfg.augment, &mut rng)?)
}

/// Eval-mode predictions on the probe pair, flattened, followed by the loss.
pub fn probe_outputs(params: &ModelParams<f32>, cfg: &TrainConfig) -> Result<Vec<f32>, TrainError> {
    let pair = probe_pair(cfg)?;
    let n = params.config.patch.n_patches();
    let ratio = resolve_mask_ratio(cfg.mask_ratio, n)?;
    let tape = Tape::new();
    let net = params.bind_frozen(&tape);
    let mut rng = Rng::new(cfg.seed, domain::PROBE | 1);
    let plan = make_mask_plan(n, ratio, &mut rng)?;
    let v1 = net.encode(&pair.v1, None, false)?;
    let v2 = net.encode(&pair.v2, Some(&plan), false)?;
    let dec = net.decode(&v2, &plan, &v1, None, false)?;
    let mut out = dec.pred.value().into_vec();
    let mut rng = Rng::new(cfg.seed, domain::PROBE | 2);
    let (loss, _) = forward_train(&net, &pair, ratio, cfg.loss_scope, &mut rng, false)?;
    out.push(loss.value().data()[0]);
    Ok(out)
}

/// Reads a metrics log back into records.
pub fn parse_metrics(text: &str) -> Result<Vec<StepRecord>, TrainError> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            let mut rec = StepRecord {
                step: 0,
                epoch: 0,
                lr: 0.0,
                loss: 0.0,
            };
            for field in line.split_whitespace() {
                let (k, v) = field.split_once('=').ok_or_else(|| TrainError::Data(format!("bad log field {field:?}")))?;
                let bad = || TrainError::Data(format!("bad log value {field:?}"));
                match k {
                    "step" => rec.step = v.parse().map_err(|_| bad())?,
                    "epoch" => rec.epoch = v.parse().map_err(|_| bad())?,
                    "lr" => rec.lr = v.parse().map_err(|_| bad())?,
                    "loss" => rec.loss = v.parse().map_err(|_| bad())?,
                    _ => {}
                }
            }
            Ok(rec)
        })
        .collect()
}

#[cfg(test)]
mod tests;
