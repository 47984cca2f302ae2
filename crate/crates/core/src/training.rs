//! The two training phases: pretraining the flow and reconstruction networks
//! on real events, then adversarial training of the generator against a
//! discriminator with the (frozen) cycle networks in the loop.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use eventgan_grad::{Graph, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data_io::{weighted_dataset_sampler, Dataset, FramePair, WeightedSampler};
use crate::error::{Error, Result};
use crate::event::{build_volume, normalize_volume, CollapseMode, EventStream, EventVolume};
use crate::losses::{self, CycleForm, LossWeights};
use crate::nets::{save_checkpoint, DiscriminatorConfig, FlowNetConfig, Forward, GeneratorConfig, Mode, Net, NetConfig, ReconNetConfig};
use crate::optim::{RAdam, RAdamConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub d_steps_per_g: usize,
    pub label_flip_prob: f64,
    pub epochs: usize,
    /// Overrides `epochs` when set: number of generator iterations.
    pub iterations: Option<usize>,
    pub pretrain_steps: usize,
    pub frame_gap_range: (usize, usize),
    pub dataset_weights: Vec<f64>,
    pub lr_generator: f64,
    pub lr_discriminator: f64,
    pub lr_cycle: f64,
    pub batch_size: usize,
    pub crop_size: usize,
    pub flip_prob: f64,
    pub num_bins: usize,
    pub collapse: CollapseMode,
    pub cycle_form: CycleForm,
    pub loss: LossWeights,
    pub seed: u64,
    /// Iterations between checkpoints (0 = only at the end).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            d_steps_per_g: 2,
            label_flip_prob: 0.1,
            epochs: 100,
            iterations: None,
            pretrain_steps: 20_000,
            frame_gap_range: (1, 6),
            dataset_weights: vec![0.8, 0.2],
            lr_generator: 1e-4,
            lr_discriminator: 4e-4,
            lr_cycle: 1e-4,
            batch_size: 8,
            crop_size: 256,
            flip_prob: 0.5,
            num_bins: 9,
            collapse: CollapseMode::Unsigned,
            cycle_form: CycleForm::FlowRecon,
            loss: LossWeights::default(),
            seed: 0,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if !(0.0..=1.0).contains(&self.label_flip_prob) {
            return bad("label_flip_prob must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return bad("flip_prob must lie in [0, 1]");
        }
        if self.d_steps_per_g == 0 || self.batch_size == 0 || self.crop_size == 0 || self.num_bins == 0 {
            return bad("d_steps_per_g, batch_size, crop_size and num_bins must be >= 1");
        }
        let (lo, hi) = self.frame_gap_range;
        if lo == 0 || hi < lo {
            return bad("frame_gap_range must satisfy 1 <= lo <= hi");
        }
        if [self.lr_generator, self.lr_discriminator, self.lr_cycle].iter().any(|lr| !(*lr > 0.0)) {
            return bad("learning rates must be > 0");
        }
        self.loss.validate()
    }

    /// Generator iterations for the whole run. One epoch is one pass over
    /// the available adjacent frame pairs.
    pub fn total_iterations(&self, datasets: &[Dataset]) -> usize {
        if let Some(n) = self.iterations {
            return n;
        }
        let pairs: usize = datasets.iter().flat_map(|d| &d.sequences).map(|s| s.len() - 1).sum();
        self.epochs * (pairs / self.batch_size).max(1)
    }

    fn optimizer(&self, lr: f64) -> RAdamConfig {
        RAdamConfig { lr, ..RAdamConfig::default() }
    }
}

/// One row of the scalar log.
#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub iteration: usize,
    pub kind: StepKind,
    pub total: f64,
    pub adv: f64,
    pub flow: f64,
    pub recon: f64,
    pub d_real: f64,
    pub d_fake: f64,
    pub elapsed_s: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepKind {
    Pretrain,
    Discriminator,
    Generator,
}

impl StepKind {
    pub fn as_str(self) -> &'static str {
        match self {
            StepKind::Pretrain => "pretrain",
            StepKind::Discriminator => "D",
            StepKind::Generator => "G",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "pretrain" => Some(StepKind::Pretrain),
            "D" => Some(StepKind::Discriminator),
            "G" => Some(StepKind::Generator),
            _ => None,
        }
    }
}

pub const LOG_HEADER: &str = "iteration,kind,total,adv,flow,recon,d_real,d_fake,elapsed_s";

/// Append-only CSV of per-step losses, also kept in memory.
pub struct ScalarLog {
    out: Option<BufWriter<File>>,
    rows: Vec<LogRow>,
    start: Instant,
}

impl ScalarLog {
    pub fn in_memory() -> Self {
        Self { out: None, rows: Vec::new(), start: Instant::now() }
    }

    /// Appends to `path`, writing the header if the file is new or empty.
    pub fn to_file(path: &Path) -> Result<Self> {
        let fresh = std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
        let f = std::fs::OpenOptions::new().create(true).append(true).open(path).map_err(|e| Error::file(path, e))?;
        let mut out = BufWriter::new(f);
        if fresh {
            writeln!(out, "{LOG_HEADER}")?;
        }
        Ok(Self { out: Some(out), rows: Vec::new(), start: Instant::now() })
    }

    pub fn rows(&self) -> &[LogRow] {
        &self.rows
    }

    fn push(&mut self, mut row: LogRow) -> Result<()> {
        row.elapsed_s = self.start.elapsed().as_secs_f64();
        if let Some(out) = &mut self.out {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{:.3}",
                row.iteration,
                row.kind.as_str(),
                row.total,
                row.adv,
                row.flow,
                row.recon,
                row.d_real,
                row.d_fake,
                row.elapsed_s
            )?;
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        if let Some(out) = &mut self.out {
            out.flush()?;
        }
        Ok(())
    }
}

fn row(iteration: usize, kind: StepKind) -> LogRow {
    LogRow { iteration, kind, total: 0.0, adv: 0.0, flow: 0.0, recon: 0.0, d_real: 0.0, d_fake: 0.0, elapsed_s: 0.0 }
}

/// Parses a scalar log written by [`ScalarLog`].
pub fn read_log(path: &Path) -> Result<Vec<LogRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == LOG_HEADER => {}
        _ => return Err(Error::Parse { location: "line 1".into(), message: format!("expected header {LOG_HEADER:?}") }),
    }
    lines
        .map(|(n, line)| {
            let err = |m: String| Error::Parse { location: format!("line {}", n + 1), message: m };
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 9 {
                return Err(err(format!("expected 9 fields, got {}", f.len())));
            }
            let num = |i: usize| f[i].parse::<f64>().map_err(|e| err(format!("field {i}: {e}")));
            Ok(LogRow {
                iteration: f[0].parse().map_err(|e| err(format!("iteration: {e}")))?,
                kind: StepKind::parse(f[1]).ok_or_else(|| err(format!("unknown step kind {:?}", f[1])))?,
                total: num(2)?,
                adv: num(3)?,
                flow: num(4)?,
                recon: num(5)?,
                d_real: num(6)?,
                d_fake: num(7)?,
                elapsed_s: num(8)?,
            })
        })
        .collect()
}

/// A training batch: images `[N, 1, S, S]` and normalized real volumes
/// `[N, 2B, S, S]`.
#[derive(Clone, Debug)]
pub struct Batch {
    pub i0: Tensor<f32>,
    pub i1: Tensor<f32>,
    pub volume: Tensor<f32>,
}

/// Random crop and horizontal flip applied consistently to frames and events,
/// then voxelized and normalized.
pub fn augment_pair(pair: &FramePair, crop: usize, flip: bool, num_bins: usize, rng: &mut ChaCha8Rng) -> Result<(Tensor<f32>, Tensor<f32>, EventVolume)> {
    let (w, h) = (pair.width(), pair.height());
    if w < crop || h < crop {
        return Err(Error::InvalidArgument(format!("crop {crop} is larger than the {w}x{h} frames")));
    }
    let x0 = rng.random_range(0..=w - crop);
    let y0 = rng.random_range(0..=h - crop);
    let mut f0 = pair.first.crop(x0, y0, crop, crop)?;
    let mut f1 = pair.second.crop(x0, y0, crop, crop)?;
    let mut ev: EventStream = pair.events.crop(x0, y0, crop, crop);
    if flip {
        f0 = f0.flip_horizontal();
        f1 = f1.flip_horizontal();
        ev = ev.flip_horizontal();
    }
    let vol = normalize_volume(&build_volume(&ev, num_bins, crop, crop)?);
    Ok((f0.to_tensor(), f1.to_tensor(), vol))
}

fn next_batch(sampler: &mut WeightedSampler<'_>, cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Result<Batch> {
    let mut i0 = Vec::with_capacity(cfg.batch_size);
    let mut i1 = Vec::with_capacity(cfg.batch_size);
    let mut vols = Vec::with_capacity(cfg.batch_size);
    for _ in 0..cfg.batch_size {
        let (_, pair) = sampler.next().expect("sampler is endless");
        let flip = rng.random_bool(cfg.flip_prob);
        let (a, b, v) = augment_pair(&pair, cfg.crop_size, flip, cfg.num_bins, rng)?;
        i0.push(a);
        i1.push(b);
        vols.push(v.to_tensor());
    }
    Ok(Batch {
        i0: Tensor::stack(&i0.iter().collect::<Vec<_>>()),
        i1: Tensor::stack(&i1.iter().collect::<Vec<_>>()),
        volume: Tensor::stack(&vols.iter().collect::<Vec<_>>()),
    })
}

/// Sums gradients of every binding of a network's parameters.
fn gather(grads: &eventgan_grad::Gradients<f32>, bindings: &[&Forward], n: usize) -> Vec<Option<Tensor<f32>>> {
    (0..n)
        .map(|k| {
            let mut acc: Option<Tensor<f32>> = None;
            for b in bindings {
                if let Some(gr) = grads.get(b.params[k]) {
                    match &mut acc {
                        Some(a) => a.add_assign(gr),
                        None => acc = Some(gr.clone()),
                    }
                }
            }
            acc
        })
        .collect()
}

fn check_finite(step: usize, values: &[(&str, f64)]) -> Result<()> {
    if values.iter().all(|(_, v)| v.is_finite()) {
        return Ok(());
    }
    let detail = values.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(" ");
    Err(Error::Diverged { step, detail })
}

fn write_checkpoints(dir: Option<&Path>, nets: &[(&str, &Net<f32>)]) -> Result<()> {
    let Some(dir) = dir else { return Ok(()) };
    std::fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
    for (name, net) in nets {
        save_checkpoint(*net, &dir.join(format!("{name}.ckpt")))?;
    }
    Ok(())
}

pub struct CycleNets {
    pub flow: Net<f32>,
    pub recon: Net<f32>,
}

impl CycleNets {
    pub fn new(flow: FlowNetConfig, recon: ReconNetConfig, seed: u64) -> Result<Self> {
        Ok(Self { flow: Net::new(NetConfig::Flow(flow), seed)?, recon: Net::new(NetConfig::Recon(recon), seed + 1)? })
    }

    pub fn freeze(&mut self) {
        self.flow.freeze();
        self.recon.freeze();
    }
}

/// Flow and reconstruction losses of the cycle networks on one batch of
/// volumes (held as a graph node so gradients can reach it).
struct CycleTerms {
    flow: losses::FlowLoss,
    recon: Var,
}

#[allow(clippy::too_many_arguments)]
fn cycle_terms(
    g: &mut Graph<f32>,
    nets: &mut CycleNets,
    i0: Var,
    i1: Var,
    volume: Var,
    cfg: &TrainConfig,
    mode: Mode,
    trainable: bool,
) -> Result<(CycleTerms, Forward, Forward)> {
    let f = nets.flow.forward(g, volume, mode, trainable)?;
    let flow = losses::flow_loss(g, i0, i1, f.out, cfg.loss.lambda_smooth)?;
    let collapsed = g.weighted_channel_sum(volume, cfg.collapse.channel_weights(cfg.num_bins));
    let input = g.concat_channels(&[i0, collapsed]);
    let r = nets.recon.forward(g, input, mode, trainable)?;
    let recon = losses::recon_loss(g, r.out, i1)?;
    Ok((CycleTerms { flow, recon }, f, r))
}

/// Trains the flow network (photometric loss on real volumes) and the
/// reconstruction network (previous image plus collapsed real volume) for
/// `cfg.pretrain_steps` steps.
pub fn pretrain_cycle_nets(datasets: &[Dataset], nets: &mut CycleNets, cfg: &TrainConfig, log: &mut ScalarLog, checkpoint_dir: Option<&Path>) -> Result<()> {
    cfg.validate()?;
    if nets.flow.is_frozen() || nets.recon.is_frozen() {
        return Err(Error::InvalidArgument("cannot pretrain frozen networks".into()));
    }
    let mut sampler = weighted_dataset_sampler(datasets, &cfg.dataset_weights, cfg.frame_gap_range, cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0001);
    let mut opt_flow = RAdam::new(cfg.optimizer(cfg.lr_cycle), nets.flow.params())?;
    let mut opt_recon = RAdam::new(cfg.optimizer(cfg.lr_cycle), nets.recon.params())?;
    for step in 0..cfg.pretrain_steps {
        let batch = next_batch(&mut sampler, cfg, &mut rng)?;
        let mut g = Graph::new();
        let i0 = g.constant(batch.i0);
        let i1 = g.constant(batch.i1);
        let vol = g.constant(batch.volume);
        let (terms, f, r) = cycle_terms(&mut g, nets, i0, i1, vol, cfg, Mode::Train, true)?;
        let total = g.add(terms.flow.total, terms.recon);
        let (fl, rl) = (g.scalar(terms.flow.total) as f64, g.scalar(terms.recon) as f64);
        check_finite(step, &[("flow", fl), ("recon", rl)])?;
        let grads = g.backward(total);
        let (fg, rg) = (gather(&grads, &[&f], f.params.len()), gather(&grads, &[&r], r.params.len()));
        opt_flow.step(nets.flow.params_mut(), &fg)?;
        opt_recon.step(nets.recon.params_mut(), &rg)?;
        log.push(LogRow { total: fl + rl, flow: fl, recon: rl, ..row(step, StepKind::Pretrain) })?;
        if cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 {
            write_checkpoints(checkpoint_dir, &[("flow", &nets.flow), ("recon", &nets.recon)])?;
        }
    }
    write_checkpoints(checkpoint_dir, &[("flow", &nets.flow), ("recon", &nets.recon)])?;
    log.flush()
}

pub struct GanNets {
    pub generator: Net<f32>,
    pub discriminator: Net<f32>,
}

impl GanNets {
    pub fn new(generator: GeneratorConfig, discriminator: DiscriminatorConfig, seed: u64) -> Result<Self> {
        Ok(Self {
            generator: Net::new(NetConfig::Generator(generator), seed)?,
            discriminator: Net::new(NetConfig::Discriminator(discriminator), seed + 1)?,
        })
    }
}

/// Statistics gathered while training.
#[derive(Clone, Debug, Default)]
pub struct TrainSummary {
    pub iterations: usize,
    pub discriminator_steps: usize,
    pub generator_steps: usize,
    /// Smallest generator output value seen in any step.
    pub min_generated: f64,
    pub d_losses: Vec<f64>,
}

/// Alternates `d_steps_per_g` discriminator updates with one generator
/// update for `cfg.total_iterations` iterations.
pub fn train_eventgan(
    datasets: &[Dataset],
    gan: &mut GanNets,
    cycle: &mut CycleNets,
    cfg: &TrainConfig,
    log: &mut ScalarLog,
    checkpoint_dir: Option<&Path>,
) -> Result<TrainSummary> {
    cfg.validate()?;
    if !cycle.flow.is_frozen() || !cycle.recon.is_frozen() {
        return Err(Error::CycleNetsNotFrozen);
    }
    let mut sampler = weighted_dataset_sampler(datasets, &cfg.dataset_weights, cfg.frame_gap_range, cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0002);
    let mut opt_g = RAdam::new(cfg.optimizer(cfg.lr_generator), gan.generator.params())?;
    let mut opt_d = RAdam::new(cfg.optimizer(cfg.lr_discriminator), gan.discriminator.params())?;
    let iterations = cfg.total_iterations(datasets);
    let mut summary = TrainSummary { min_generated: f64::INFINITY, ..Default::default() };
    let nd = gan.discriminator.params().len();
    let ng = gan.generator.params().len();
    for it in 0..iterations {
        for _ in 0..cfg.d_steps_per_g {
            let batch = next_batch(&mut sampler, cfg, &mut rng)?;
            let flipped: Vec<bool> = (0..cfg.batch_size).map(|_| rng.random_bool(cfg.label_flip_prob)).collect();
            let fake = {
                let mut g = Graph::new();
                let x = g.constant(Tensor::concat_channels(&[&batch.i0, &batch.i1]));
                let f = gan.generator.forward(&mut g, x, Mode::BatchStats, false)?;
                g.value(f.out).clone()
            };
            summary.min_generated = summary.min_generated.min(fake.min() as f64);
            let mut g = Graph::new();
            let real_in = g.constant(Tensor::concat_channels(&[&batch.volume, &batch.i0, &batch.i1]));
            let fake_in = g.constant(Tensor::concat_channels(&[&fake, &batch.i0, &batch.i1]));
            let dr = gan.discriminator.forward(&mut g, real_in, Mode::Train, true)?;
            let df = gan.discriminator.forward(&mut g, fake_in, Mode::Train, true)?;
            let d_loss = losses::hinge_d_loss_flipped(&mut g, dr.out, df.out, &flipped);
            let loss = losses::discriminator_step_loss(d_loss);
            let (lv, rv, fv) = (g.scalar(loss) as f64, g.value(dr.out).mean() as f64, g.value(df.out).mean() as f64);
            check_finite(it, &[("d_loss", lv), ("d_real", rv), ("d_fake", fv)])?;
            let grads = g.backward(loss);
            opt_d.step(gan.discriminator.params_mut(), &gather(&grads, &[&dr, &df], nd))?;
            summary.discriminator_steps += 1;
            summary.d_losses.push(lv);
            log.push(LogRow { total: lv, d_real: rv, d_fake: fv, ..row(it, StepKind::Discriminator) })?;
        }

        let batch = next_batch(&mut sampler, cfg, &mut rng)?;
        let mut g = Graph::new();
        let i0 = g.constant(batch.i0);
        let i1 = g.constant(batch.i1);
        let x = g.concat_channels(&[i0, i1]);
        let gen = gan.generator.forward(&mut g, x, Mode::Train, true)?;
        summary.min_generated = summary.min_generated.min(g.value(gen.out).min() as f64);
        let d_in = g.concat_channels(&[gen.out, i0, i1]);
        let d = gan.discriminator.forward(&mut g, d_in, Mode::Eval, false)?;
        let adv = losses::hinge_g_loss(&mut g, d.out);
        let (terms, _, _) = cycle_terms(&mut g, cycle, i0, i1, gen.out, cfg, Mode::Eval, false)?;
        let second = match cfg.cycle_form {
            CycleForm::FlowRecon => terms.recon,
            CycleForm::FlowAdversarial => adv,
        };
        let cyc = losses::cycle_loss(&mut g, terms.flow.total, second, &cfg.loss, cfg.cycle_form);
        let total = losses::generator_step_loss(&mut g, adv, cyc, &cfg.loss);
        let vals = [
            ("g_loss", g.scalar(total) as f64),
            ("adv", g.scalar(adv) as f64),
            ("flow", g.scalar(terms.flow.total) as f64),
            ("recon", g.scalar(terms.recon) as f64),
            ("d_fake", g.value(d.out).mean() as f64),
        ];
        check_finite(it, &vals)?;
        let grads = g.backward(total);
        opt_g.step(gan.generator.params_mut(), &gather(&grads, &[&gen], ng))?;
        summary.generator_steps += 1;
        log.push(LogRow {
            total: vals[0].1,
            adv: vals[1].1,
            flow: vals[2].1,
            recon: vals[3].1,
            d_fake: vals[4].1,
            ..row(it, StepKind::Generator)
        })?;
        summary.iterations = it + 1;
        if cfg.checkpoint_every > 0 && (it + 1) % cfg.checkpoint_every == 0 {
            write_checkpoints(checkpoint_dir, &[("generator", &gan.generator), ("discriminator", &gan.discriminator)])?;
            log.flush()?;
        }
    }
    write_checkpoints(checkpoint_dir, &[("generator", &gan.generator), ("discriminator", &gan.discriminator)])?;
    log.flush()?;
    Ok(summary)
}

/// Held-out comparison of generated and real volumes.
#[derive(Clone, Debug, Default)]
pub struct EvalReport {
    pub real_nonzero_fraction: f64,
    pub generated_nonzero_fraction: f64,
    /// Photometric term of the flow loss with flow predicted from real volumes.
    pub real_photometric: f64,
    /// Same, with flow predicted from generated volumes.
    pub generated_photometric: f64,
    pub min_generated: f64,
}

/// Evaluates on `batches` batches drawn with `seed`, all networks in
/// inference mode.
pub fn evaluate(datasets: &[Dataset], gan: &mut GanNets, cycle: &mut CycleNets, cfg: &TrainConfig, batches: usize, seed: u64) -> Result<EvalReport> {
    let mut sampler = weighted_dataset_sampler(datasets, &cfg.dataset_weights, cfg.frame_gap_range, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0003);
    let mut r = EvalReport { min_generated: f64::INFINITY, ..Default::default() };
    for _ in 0..batches {
        let batch = next_batch(&mut sampler, cfg, &mut rng)?;
        let mut g = Graph::new();
        let i0 = g.constant(batch.i0);
        let i1 = g.constant(batch.i1);
        let real = g.constant(batch.volume);
        let x = g.concat_channels(&[i0, i1]);
        let gen = gan.generator.forward(&mut g, x, Mode::Eval, false)?;
        let nz = |t: &Tensor<f32>| t.data().iter().filter(|v| **v != 0.0).count() as f64 / t.len() as f64;
        r.real_nonzero_fraction += nz(g.value(real));
        r.generated_nonzero_fraction += nz(g.value(gen.out));
        r.min_generated = r.min_generated.min(g.value(gen.out).min() as f64);
        for (vol, acc) in [(real, &mut r.real_photometric), (gen.out, &mut r.generated_photometric)] {
            let f = cycle.flow.forward(&mut g, vol, Mode::Eval, false)?;
            let fl = losses::flow_loss(&mut g, i0, i1, f.out, cfg.loss.lambda_smooth)?;
            *acc += g.scalar(fl.photometric) as f64;
        }
    }
    let n = batches.max(1) as f64;
    r.real_nonzero_fraction /= n;
    r.generated_nonzero_fraction /= n;
    r.real_photometric /= n;
    r.generated_photometric /= n;
    Ok(r)
}

/// Paths of the four checkpoints under a run directory.
pub fn checkpoint_paths(dir: &Path) -> [(&'static str, PathBuf); 4] {
    ["generator", "discriminator", "flow", "recon"].map(|n| (n, dir.join(format!("{n}.ckpt"))))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_io::Sequence;
    use crate::event::{Event, Polarity};
    use crate::frame::Frame;

    fn dataset() -> Vec<Dataset> {
        let frames: Vec<Frame> = (0..8).map(|i| Frame::from_fn(16, 16, |x, y| ((x + y + i) % 7) as f32 / 7.0)).collect();
        let ts: Vec<f64> = (0..8).map(|i| i as f64 * 0.1).collect();
        let events = (0..200).map(|k| Event::new((k % 16) as u16, (k / 16 % 16) as u16, k as f64 * 0.0035, if k % 3 == 0 { Polarity::Negative } else { Polarity::Positive })).collect();
        let seq = Sequence::new(frames, ts, EventStream::new(16, 16, events).unwrap()).unwrap();
        vec![Dataset { name: "a".into(), sequences: vec![seq.clone()] }, Dataset { name: "b".into(), sequences: vec![seq] }]
    }

    fn tiny() -> TrainConfig {
        TrainConfig { batch_size: 2, crop_size: 16, num_bins: 3, pretrain_steps: 3, iterations: Some(2), ..TrainConfig::default() }
    }

    #[test]
    fn gan_requires_frozen_cycle_nets() {
        let cfg = tiny();
        let ds = dataset();
        let mut cycle = CycleNets::new(
            FlowNetConfig { base_channels: 2, num_encoder_levels: 2, num_bins: 3, ..Default::default() },
            ReconNetConfig { base_channels: 2, num_encoder_levels: 2, ..Default::default() },
            1,
        )
        .unwrap();
        let mut gan = GanNets::new(
            GeneratorConfig { base_channels: 2, num_encoder_levels: 2, num_bins: 3, ..Default::default() },
            DiscriminatorConfig { base_channels: 2, num_bins: 3, ..Default::default() },
            2,
        )
        .unwrap();
        let mut log = ScalarLog::in_memory();
        assert!(matches!(train_eventgan(&ds, &mut gan, &mut cycle, &cfg, &mut log, None), Err(Error::CycleNetsNotFrozen)));
        pretrain_cycle_nets(&ds, &mut cycle, &cfg, &mut log, None).unwrap();
        cycle.freeze();
        let s = train_eventgan(&ds, &mut gan, &mut cycle, &cfg, &mut log, None).unwrap();
        assert_eq!((s.discriminator_steps, s.generator_steps), (4, 2));
        assert!(s.min_generated >= 0.0);
    }

    #[test]
    fn log_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("log.csv");
        let mut log = ScalarLog::to_file(&p).unwrap();
        log.push(LogRow { total: 1.5, ..row(3, StepKind::Generator) }).unwrap();
        log.push(LogRow { d_real: -0.5, ..row(3, StepKind::Discriminator) }).unwrap();
        log.flush().unwrap();
        let rows = read_log(&p).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].kind, StepKind::Generator);
        assert_eq!(rows[1].d_real, -0.5);
    }

    #[test]
    fn augmentation_flips_events_with_frames() {
        let ds = dataset();
        let pair = crate::data_io::sample_pair(&ds[0].sequences[0], 1, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (a, _, v) = augment_pair(&pair, 16, true, 3, &mut rng).unwrap();
        assert_eq!(a.at(0, 0, 2, 0), pair.first.get(15, 2));
        let direct = normalize_volume(&build_volume(&pair.events.flip_horizontal(), 3, 16, 16).unwrap());
        assert_eq!(v, direct);
    }
}
