use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::Preset;
use super::net::{InitialNet, Refiner};
use crate::data::{augment, resize_bilinear, resize_nearest, Sample};
use crate::metrics::{aggregate, evaluate, FAggregation, MetricsReport};
use crate::nn::{bce_with_logits, Gradients, Mode, ParamStore, Session};
use crate::optim::{clip_gradients, OptimState, OptimizerKind, PlateauSchedule, CLIP_HI, CLIP_LO};
use crate::tensor::Tensor;
use crate::{Error, Result};

/// Stacked network inputs `[B, 3, S, S]` and targets `[B, 1, M, M]`.
#[derive(Clone, Debug)]
pub struct Batch {
    pub images: Tensor,
    pub targets: Tensor,
}

/// Resizes an image to the preset input size.
pub fn fit_image(preset: &Preset, image: &Tensor) -> Result<Tensor> {
    let n = preset.input_size;
    resize_bilinear(image, n, n)
}

pub fn make_batch(preset: &Preset, samples: &[&Sample]) -> Result<Batch> {
    if samples.is_empty() {
        return Err(Error::InvalidBatch("empty batch".into()));
    }
    let m = preset.map_size()?;
    let mut images = Vec::with_capacity(samples.len());
    let mut targets = Vec::with_capacity(samples.len());
    for s in samples {
        s.validate()?;
        images.push(fit_image(preset, &s.image)?);
        targets.push(resize_nearest(&s.mask, m, m)?.reshape(&[1, m, m])?);
    }
    Ok(Batch {
        images: Tensor::stack(&images)?,
        targets: Tensor::stack(&targets)?,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageOptions {
    pub optimizer: OptimizerKind,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub augment: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}

pub struct TrainOutcome {
    pub logs: Vec<EpochLog>,
    pub optimizer: OptimState,
}

fn ensure_finite(what: &str, loss: f64, grads: &Gradients) -> Result<()> {
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("{what}: loss is {loss}")));
    }
    if let Some((name, _)) = grads.iter().find(|(_, g)| g.iter().any(|v| !v.is_finite())) {
        return Err(Error::Numeric(format!("{what}: non-finite gradient for {name}")));
    }
    Ok(())
}

/// One optimizer step of the initial network on a batch; returns the batch
/// loss.
pub fn initial_train_step(
    net: &InitialNet,
    store: &mut ParamStore,
    opt: &mut OptimState,
    batch: &Batch,
) -> Result<f64> {
    let (loss, grads, updates) = {
        let mut s = Session::new(store, Mode::Train, true);
        let x = s.input(batch.images.clone());
        let r = net.forward(&mut s, x)?;
        let l = bce_with_logits(&mut s.graph, r, &batch.targets)?;
        s.backward(l)?;
        (s.value(l).data()[0], s.gradients(), s.into_stat_updates())
    };
    ensure_finite("initial network", loss, &grads)?;
    opt.step(store, &grads)?;
    store.apply_stat_updates(&updates).map(|_| loss)
}

/// Initial raw maps `[B, 1, M, M]` in inference mode.
pub fn initial_logits(net: &InitialNet, store: &ParamStore, images: &Tensor) -> Result<Tensor> {
    let mut s = Session::new(store, Mode::Infer, false);
    let x = s.input(images.clone());
    let r = net.forward(&mut s, x)?;
    Ok(s.value(r).clone())
}

/// One optimizer step of the refinement network with elementwise gradient
/// clipping; the initial network only supplies `r_0`.
pub fn refine_train_step(
    refiner: &Refiner,
    store: &mut ParamStore,
    opt: &mut OptimState,
    batch: &Batch,
    iterations: usize,
) -> Result<f64> {
    let initial = InitialNet::new(refiner.preset.clone())?;
    let r0 = initial_logits(&initial, store, &batch.images)?;
    let (loss, mut grads, updates) = {
        let mut s = Session::new(store, Mode::Train, true);
        let x = s.input(batch.images.clone());
        let r = s.input(r0);
        let out = refiner.rollout(&mut s, x, r, iterations, false)?;
        let l = bce_with_logits(&mut s.graph, out.logits, &batch.targets)?;
        if iterations > 1 {
            s.backward(l)?;
        }
        (s.value(l).data()[0], s.gradients(), s.into_stat_updates())
    };
    grads.retain(|name, _| Refiner::is_refinement_param(name));
    ensure_finite("refinement network", loss, &grads)?;
    clip_gradients(&mut grads, CLIP_LO, CLIP_HI);
    opt.step(store, &grads)?;
    store.apply_stat_updates(&updates).map(|_| loss)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Initial,
    Refined,
}

impl std::str::FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "initial" => Ok(Stage::Initial),
            "refined" => Ok(Stage::Refined),
            _ => Err(Error::InvalidArgument(format!(
                "unknown stage {s:?} (expected initial or refined)"
            ))),
        }
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Stage::Initial => "initial",
            Stage::Refined => "refined",
        })
    }
}

/// Raw maps `[B, 1, M, M]` of either stage for a batch, in inference mode.
pub fn predict_logits(
    store: &ParamStore,
    preset: &Preset,
    stage: Stage,
    iterations: usize,
    images: &Tensor,
) -> Result<Tensor> {
    let initial = InitialNet::new(preset.clone())?;
    let r0 = initial_logits(&initial, store, images)?;
    match stage {
        Stage::Initial => Ok(r0),
        Stage::Refined => {
            let refiner = Refiner::new(preset.clone())?;
            let mut s = Session::new(store, Mode::Infer, false);
            let x = s.input(images.clone());
            let r = s.input(r0);
            let out = refiner.rollout(&mut s, x, r, iterations, false)?;
            Ok(s.value(out.logits).clone())
        }
    }
}

/// Normalized maps resized to each sample's mask size.
pub fn predict_maps(
    store: &ParamStore,
    preset: &Preset,
    stage: Stage,
    iterations: usize,
    samples: &[Sample],
) -> Result<Vec<Tensor>> {
    const CHUNK: usize = 16;
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(CHUNK) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let batch = make_batch(preset, &refs)?;
        let logits = predict_logits(store, preset, stage, iterations, &batch.images)?;
        for (b, s) in chunk.iter().enumerate() {
            let m = logits.shape()[2];
            let map = logits
                .slice_outer(b)?
                .reshape(&[m, m])?
                .map(crate::tensor::sigmoid_value);
            let (h, w) = (s.mask.shape()[0], s.mask.shape()[1]);
            out.push(resize_bilinear(&map, h, w)?);
        }
    }
    Ok(out)
}

/// Dataset metrics of one stage; per-image scoring runs on all cores.
pub fn evaluate_stage(
    store: &ParamStore,
    preset: &Preset,
    stage: Stage,
    iterations: usize,
    samples: &[Sample],
    mode: FAggregation,
) -> Result<MetricsReport> {
    let preds = predict_maps(store, preset, stage, iterations, samples)?;
    let workers = std::thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(samples.len().max(1));
    let per = samples.len().div_ceil(workers).max(1);
    let reports: Vec<Result<Vec<MetricsReport>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = preds
            .chunks(per)
            .zip(samples.chunks(per))
            .map(|(p, s)| scope.spawn(move || p.iter().zip(s).map(|(p, s)| evaluate(p, &s.mask)).collect()))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("metrics worker panicked"))
            .collect()
    });
    let mut all = Vec::with_capacity(samples.len());
    for r in reports {
        all.extend(r?);
    }
    aggregate(&all, mode)
}

/// Mean per-pixel BCE of a stage's raw maps against downsampled masks.
pub fn stage_loss(
    store: &ParamStore,
    preset: &Preset,
    stage: Stage,
    iterations: usize,
    samples: &[Sample],
) -> Result<f64> {
    const CHUNK: usize = 16;
    let mut total = 0.0;
    for chunk in samples.chunks(CHUNK) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let batch = make_batch(preset, &refs)?;
        let logits = predict_logits(store, preset, stage, iterations, &batch.images)?;
        let mut g = crate::tensor::Graph::no_grad();
        let r = g.constant(logits);
        let l = bce_with_logits(&mut g, r, &batch.targets)?;
        total += g.value(l).data()[0] * chunk.len() as f64;
    }
    Ok(total / samples.len().max(1) as f64)
}

fn epoch_batches(n: usize, batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    order.shuffle(&mut rng);
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    // training-mode batch norm needs two samples
    if batches.len() > 1 && batches.last().is_some_and(|b| b.len() < 2) {
        let tail = batches.pop().expect("nonempty");
        batches.last_mut().expect("nonempty").extend(tail);
    }
    batches
}

fn augmented(samples: &[Sample], idx: &[usize], opts: &StageOptions, epoch: usize) -> Result<Vec<Sample>> {
    idx.iter()
        .map(|&i| {
            if opts.augment {
                let seed = opts.seed ^ ((epoch as u64) << 32) ^ i as u64;
                augment(&samples[i], seed)
            } else {
                Ok(samples[i].clone())
            }
        })
        .collect()
}

fn check_options(opts: &StageOptions, n: usize) -> Result<()> {
    if opts.batch_size < 2 {
        return Err(Error::InvalidBatch(format!(
            "batch size {} must be >= 2",
            opts.batch_size
        )));
    }
    if opts.epochs > 0 && n < 2 {
        return Err(Error::InvalidBatch(format!(
            "need at least 2 training samples, got {n}"
        )));
    }
    Ok(())
}

/// Runs one stage: epochs of shuffled minibatch steps, validation loss after
/// every epoch and reduce-on-plateau learning-rate decay.
#[allow(clippy::too_many_arguments)]
fn run_stage(
    store: &mut ParamStore,
    train: &[Sample],
    val: &[Sample],
    opts: &StageOptions,
    mut opt: OptimState,
    preset: &Preset,
    mut step: impl FnMut(&mut ParamStore, &mut OptimState, &Batch) -> Result<f64>,
    val_loss: impl Fn(&ParamStore, &[Sample]) -> Result<f64>,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    check_options(opts, train.len())?;
    let mut schedule = PlateauSchedule::default();
    let mut logs = Vec::with_capacity(opts.epochs);
    for epoch in 1..=opts.epochs {
        let mut sum = 0.0;
        for idx in epoch_batches(train.len(), opts.batch_size, opts.seed, epoch) {
            let samples = augmented(train, &idx, opts, epoch)?;
            let refs: Vec<&Sample> = samples.iter().collect();
            let batch = make_batch(preset, &refs)?;
            sum += step(store, &mut opt, &batch)? * idx.len() as f64;
        }
        let train_loss = sum / train.len() as f64;
        let val_loss = if val.is_empty() {
            train_loss
        } else {
            val_loss(store, val)?
        };
        if !val_loss.is_finite() {
            return Err(Error::Numeric(format!(
                "validation loss is {val_loss} at epoch {epoch}"
            )));
        }
        opt.lr = schedule.update(opt.lr, val_loss);
        let log = EpochLog {
            epoch,
            train_loss,
            val_loss,
            lr: opt.lr,
        };
        on_epoch(&log);
        logs.push(log);
    }
    Ok(TrainOutcome { logs, optimizer: opt })
}

/// Trains the initial network.
pub fn train_initial(
    net: &InitialNet,
    store: &mut ParamStore,
    train: &[Sample],
    val: &[Sample],
    opts: &StageOptions,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    let opt = OptimState::new(opts.optimizer, opts.lr)?;
    let preset = net.preset.clone();
    run_stage(
        store,
        train,
        val,
        opts,
        opt,
        &preset,
        |st, o, b| initial_train_step(net, st, o, b),
        |st, v| stage_loss(st, &preset, Stage::Initial, 1, v),
        on_epoch,
    )
}

/// Trains the refinement network; the initial network in `store` stays
/// frozen.
pub fn train_refinement(
    refiner: &Refiner,
    store: &mut ParamStore,
    train: &[Sample],
    val: &[Sample],
    opts: &StageOptions,
    iterations: usize,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    let opt = OptimState::new(opts.optimizer, opts.lr)?;
    let preset = refiner.preset.clone();
    run_stage(
        store,
        train,
        val,
        opts,
        opt,
        &preset,
        |st, o, b| refine_train_step(refiner, st, o, b, iterations),
        |st, v| stage_loss(st, &preset, Stage::Refined, iterations, v),
        on_epoch,
    )
}
