mod config;

use std::io;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use eventgan_core::data_io::{read_events, write_events, write_volume};
use eventgan_core::metrics::{self, VocConfig};
use eventgan_core::nets::{generator_forward, load_checkpoint, Net, NetConfig};
use eventgan_core::sim::{affine_sim_events, frame_pair_events, AffineMotion, ThresholdModel};
use eventgan_core::toy::ToyConfig;
use eventgan_core::training::{evaluate, pretrain_cycle_nets, train_eventgan, CycleNets, GanNets, ScalarLog};
use eventgan_core::{build_volume, collapse_time, normalize_volume, CollapseMode, Error, Frame};
use log::info;

use crate::config::RunConfig;

#[derive(Parser, Debug)]
#[command(name = "eventgan", version, about = "Event generation from image pairs, classical simulators and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Convert an event stream into a per-polarity voxel volume.
    Voxelize(VoxelizeArgs),
    /// Simulate events from images with a classical threshold model.
    SimClassical(SimArgs),
    /// Write the synthetic moving-shape sequences described by a config.
    ToyData(ToyArgs),
    /// Train the flow and reconstruction networks on real events.
    Pretrain(TrainArgs),
    /// Train the generator and discriminator against frozen cycle networks.
    Train(TrainArgs),
    /// Generate an event volume for an image pair.
    Generate(GenerateArgs),
    /// Score pose or detection results.
    Eval(EvalArgs),
    /// Print every command's flags and the full config schema with defaults.
    Reference,
}

#[derive(Args, Debug)]
struct VoxelizeArgs {
    /// Event stream file.
    #[arg(long)]
    events: PathBuf,
    /// Output volume file.
    #[arg(long)]
    out: PathBuf,
    /// Temporal bins per polarity.
    #[arg(long, default_value_t = 9)]
    bins: usize,
    /// Divide by the 98th percentile of nonzero voxels and clip to [0, 1].
    #[arg(long)]
    normalize: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SimMode {
    /// Log-intensity difference of two frames.
    Pair,
    /// Affine motion of one image, simulated in small steps.
    Affine,
}

#[derive(Args, Debug)]
struct SimArgs {
    #[arg(long, value_enum)]
    mode: SimMode,
    /// One image (affine) or two images (pair).
    #[arg(long, num_args = 1..=2, required = true)]
    images: Vec<PathBuf>,
    /// Output event stream file.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.2, allow_negative_numbers = true)]
    theta: f64,
    /// Per-pixel threshold noise standard deviation.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    sigma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Start time of the interval in seconds.
    #[arg(long, default_value_t = 0.0)]
    t0: f64,
    /// Interval length in seconds.
    #[arg(long, default_value_t = 1.0)]
    duration: f64,
    /// Affine translation in pixels over the interval.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    tx: f64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    ty: f64,
    /// Affine rotation in radians over the interval.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    rotation: f64,
    /// Affine scale reached at the end of the interval.
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    scale: f64,
    #[arg(long, default_value_t = 16)]
    substeps: usize,
}

#[derive(Args, Debug)]
struct ToyArgs {
    /// TOML file with toy dataset settings.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; one manifest per sequence.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Run config (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for checkpoints, logs and the effective config.
    #[arg(long)]
    out: PathBuf,
    /// Directory holding flow.ckpt and recon.ckpt (train only; defaults to --out).
    #[arg(long)]
    cycle: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides train.pretrain_steps.
    #[arg(long)]
    steps: Option<usize>,
    /// Overrides train.iterations.
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    crop_size: Option<usize>,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    /// Generator checkpoint.
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    first: PathBuf,
    #[arg(long)]
    second: PathBuf,
    /// Output volume file.
    #[arg(long)]
    out: PathBuf,
    /// Directory for average-timestamp and event-count images.
    #[arg(long)]
    viz: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(subcommand)]
    task: EvalTask,
}

#[derive(Subcommand, Debug)]
enum EvalTask {
    /// MPJPE and PCKh@0.5 from `sample,joint,pred_x,pred_y,gt_x,gt_y` rows.
    Pose {
        #[arg(long)]
        file: PathBuf,
        /// Joint index of the head top.
        #[arg(long, default_value_t = 9)]
        head: usize,
        /// Left and right shoulder joint indices.
        #[arg(long, num_args = 2, default_values_t = [12, 13])]
        shoulders: Vec<usize>,
    },
    /// VOC-style precision, recall and AP.
    Detection {
        /// `image,x1,y1,x2,y2,confidence` rows.
        #[arg(long)]
        detections: PathBuf,
        /// `image,x1,y1,x2,y2,difficulty` rows (easy, hard or dont_care).
        #[arg(long)]
        ground_truth: PathBuf,
        /// TOML file with VOC settings.
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("error kind=usage message={first:?}");
            return ExitCode::from(2);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = e.chain().find_map(|c| c.downcast_ref::<Error>()).map_or("cli", Error::kind);
            let mut message = String::new();
            for part in e.chain().map(|c| c.to_string()) {
                if !message.ends_with(&part) {
                    message = if message.is_empty() { part } else { format!("{message}: {part}") };
                }
            }
            let message = message.replace('\n', " ");
            eprintln!("error kind={kind} message={message:?}");
            ExitCode::FAILURE
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Voxelize(a) => voxelize(a),
        Command::SimClassical(a) => sim_classical(a),
        Command::ToyData(a) => toy_data(a),
        Command::Pretrain(a) => pretrain(a),
        Command::Train(a) => train(a),
        Command::Generate(a) => generate(a),
        Command::Eval(a) => eval(a.task),
        Command::Reference => {
            print!("{}", reference()?);
            Ok(())
        }
    }
}

fn voxelize(a: VoxelizeArgs) -> Result<()> {
    let stream = read_events(&a.events)?;
    let mut volume = build_volume(&stream, a.bins, stream.width(), stream.height())?;
    if a.normalize {
        volume = normalize_volume(&volume);
    }
    write_volume(&a.out, &volume)?;
    info!("{} events -> {} x {} x {}", stream.len(), volume.channels(), volume.height(), volume.width());
    Ok(())
}

fn sim_classical(a: SimArgs) -> Result<()> {
    let model = ThresholdModel::new(a.theta, a.sigma)?;
    let stream = match a.mode {
        SimMode::Pair => {
            let [first, second] = a.images.as_slice() else {
                bail!(Error::InvalidArgument("pair mode needs exactly two --images".into()));
            };
            frame_pair_events(&Frame::load(first)?, &Frame::load(second)?, a.t0, a.duration, &model, a.seed)?
        }
        SimMode::Affine => {
            let [image] = a.images.as_slice() else {
                bail!(Error::InvalidArgument("affine mode needs exactly one --images".into()));
            };
            let motion = AffineMotion { translation: (a.tx, a.ty), rotation: a.rotation, scale: a.scale, num_substeps: a.substeps };
            affine_sim_events(&Frame::load(image)?, &motion, a.duration, &model, a.seed)?.0
        }
    };
    write_events(&a.out, &stream)?;
    info!("{} events", stream.len());
    Ok(())
}

fn toy_data(a: ToyArgs) -> Result<()> {
    let mut cfg: ToyConfig = match &a.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::File { path: p.display().to_string(), source: e })?;
            toml::from_str(&text).map_err(|e| Error::Parse { location: p.display().to_string(), message: e.message().to_string() })?
        }
        None => ToyConfig::default(),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let sequences = eventgan_core::toy::toy_dataset(&cfg)?;
    std::fs::create_dir_all(&a.out).map_err(|e| Error::File { path: a.out.display().to_string(), source: e })?;
    std::fs::write(a.out.join("config.toml"), toml::to_string(&cfg)?)?;
    for (k, seq) in sequences.iter().enumerate() {
        let manifest = seq.save(&a.out.join(format!("seq{k:03}")))?;
        println!("{}", manifest.display());
    }
    Ok(())
}

fn run_config(a: &TrainArgs) -> Result<RunConfig> {
    let mut cfg = RunConfig::load_or_default(a.config.as_deref())?;
    if let Some(s) = a.seed {
        cfg.set_seed(s);
    }
    if let Some(n) = a.steps {
        cfg.train.pretrain_steps = n;
    }
    if let Some(n) = a.iterations {
        cfg.train.iterations = Some(n);
    }
    if let Some(n) = a.batch_size {
        cfg.train.batch_size = n;
    }
    if let Some(n) = a.crop_size {
        cfg.train.crop_size = n;
    }
    cfg.validate()?;
    cfg.echo(&a.out)?;
    Ok(cfg)
}

fn pretrain(a: TrainArgs) -> Result<()> {
    let cfg = run_config(&a)?;
    let datasets = cfg.load_datasets()?;
    let mut cycle = CycleNets::new(cfg.flow.clone(), cfg.recon.clone(), cfg.train.seed)?;
    let mut log = ScalarLog::to_file(&a.out.join("pretrain_log.csv"))?;
    let start = Instant::now();
    pretrain_cycle_nets(&datasets, &mut cycle, &cfg.train, &mut log, Some(&a.out))?;
    let last = log.rows().last();
    println!(
        "steps={} flow={} recon={} elapsed_s={:.1}",
        cfg.train.pretrain_steps,
        last.map_or(f64::NAN, |r| r.flow),
        last.map_or(f64::NAN, |r| r.recon),
        start.elapsed().as_secs_f64()
    );
    Ok(())
}

fn load_cycle_net(dir: &Path, name: &str, expected: NetConfig) -> Result<Net<f32>> {
    let path = dir.join(format!("{name}.ckpt"));
    if !path.is_file() {
        bail!(Error::File {
            path: path.display().to_string(),
            source: io::Error::new(io::ErrorKind::NotFound, "cycle network checkpoint not found; run `eventgan pretrain` first"),
        });
    }
    Ok(load_checkpoint(&path, Some(&expected))?)
}

fn train(a: TrainArgs) -> Result<()> {
    let cfg = run_config(&a)?;
    let cycle_dir = a.cycle.clone().unwrap_or_else(|| a.out.clone());
    let flow = load_cycle_net(&cycle_dir, "flow", NetConfig::Flow(cfg.flow.clone()))?;
    let recon = load_cycle_net(&cycle_dir, "recon", NetConfig::Recon(cfg.recon.clone()))?;
    let mut cycle = CycleNets { flow, recon };
    cycle.freeze();
    let datasets = cfg.load_datasets()?;
    let mut gan = GanNets::new(cfg.generator.clone(), cfg.discriminator.clone(), cfg.train.seed.wrapping_add(10))?;
    let mut log = ScalarLog::to_file(&a.out.join("train_log.csv"))?;
    let start = Instant::now();
    let summary = train_eventgan(&datasets, &mut gan, &mut cycle, &cfg.train, &mut log, Some(&a.out))?;
    let elapsed = start.elapsed().as_secs_f64();
    let report = evaluate(&datasets, &mut gan, &mut cycle, &cfg.train, 4, cfg.train.seed.wrapping_add(1))?;
    let text = format!(
        "iterations={}\ndiscriminator_steps={}\ngenerator_steps={}\nmin_generated={}\nreal_nonzero_fraction={}\ngenerated_nonzero_fraction={}\nreal_photometric={}\ngenerated_photometric={}\nelapsed_s={elapsed:.1}\n",
        summary.iterations,
        summary.discriminator_steps,
        summary.generator_steps,
        summary.min_generated,
        report.real_nonzero_fraction,
        report.generated_nonzero_fraction,
        report.real_photometric,
        report.generated_photometric,
    );
    let path = a.out.join("summary.txt");
    std::fs::write(&path, &text).with_context(|| format!("writing {}", path.display()))?;
    print!("{text}");
    Ok(())
}

fn generate(a: GenerateArgs) -> Result<()> {
    let mut net = load_checkpoint::<f32>(&a.checkpoint, None)?;
    let volume = generator_forward(&mut net, &Frame::load(&a.first)?, &Frame::load(&a.second)?)?;
    write_volume(&a.out, &volume)?;
    if let Some(dir) = &a.viz {
        std::fs::create_dir_all(dir).map_err(|e| Error::File { path: dir.display().to_string(), source: e })?;
        eventgan_core::event::volume_average_time_image(&volume).save_png(&dir.join("average_timestamp.png"))?;
        collapse_time(&volume, CollapseMode::Unsigned).normalized_for_display().save_png(&dir.join("event_count.png"))?;
    }
    Ok(())
}

fn eval(task: EvalTask) -> Result<()> {
    match task {
        EvalTask::Pose { file, head, shoulders } => {
            let set = metrics::parse_poses(&metrics::read_text(&file)?, head, (shoulders[0], shoulders[1]))?;
            let r = set.evaluate()?;
            println!("mpjpe={}\npckh50={}\njoints={}", r.mpjpe, r.pckh50, r.joints);
        }
        EvalTask::Detection { detections, ground_truth, config } => {
            let cfg: VocConfig = match &config {
                Some(p) => toml::from_str(&metrics::read_text(p)?)
                    .map_err(|e| Error::Parse { location: p.display().to_string(), message: e.message().to_string() })?,
                None => VocConfig::default(),
            };
            let dets = metrics::parse_detections(&metrics::read_text(&detections)?)?;
            let gts = metrics::parse_ground_truth(&metrics::read_text(&ground_truth)?)?;
            print!("{}", metrics::voc_detection_eval(&dets, &gts, &cfg)?.to_kv());
        }
    }
    Ok(())
}

/// Help text of every subcommand followed by the default configs.
fn reference() -> Result<String> {
    let mut out = String::from("# eventgan reference\n\n");
    let mut cmd = Cli::command();
    out.push_str(&format!("## eventgan\n\n```text\n{}\n```\n\n", cmd.render_long_help()));
    for sub in cmd.get_subcommands_mut() {
        let name = sub.get_name().to_string();
        out.push_str(&format!("## eventgan {name}\n\n```text\n{}\n```\n\n", sub.render_long_help()));
    }
    out.push_str(&format!("## Run config (pretrain, train)\n\n```toml\n{}```\n\n", RunConfig::default().to_toml()?));
    out.push_str(&format!("## Toy dataset config (toy-data, datasets.toy)\n\n```toml\n{}```\n\n", toml::to_string(&ToyConfig::default())?));
    out.push_str(&format!("## Detection config (eval detection)\n\n```toml\n{}```\n", toml::to_string(&VocConfig::default())?));
    Ok(out)
}
