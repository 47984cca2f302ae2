use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use eventgan_core::data_io::{read_events, read_volume, write_events};
use eventgan_core::training::{read_log, LOG_HEADER};
use eventgan_core::{build_volume, Event, EventStream, Frame, Polarity};

fn eventgan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_eventgan")).args(args).output().expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn assert_ok(o: &Output) {
    assert!(o.status.success(), "stderr: {}", stderr(o));
}

/// Fails with exactly one `error kind=<kind> ...` line on stderr.
fn assert_error(o: &Output, kind: &str) {
    assert!(!o.status.success());
    let err = stderr(o);
    let lines: Vec<&str> = err.lines().collect();
    assert_eq!(lines.len(), 1, "{err}");
    assert!(lines[0].starts_with(&format!("error kind={kind} ")), "{err}");
}

fn gradient(width: usize, height: usize, shift: f32) -> Frame {
    Frame::from_fn(width, height, |x, y| 0.1 + 0.8 * ((x as f32 + shift) / width as f32 * 0.5 + y as f32 / height as f32 * 0.3).fract())
}

#[test]
fn voxelize_three_events() {
    let dir = tempfile::tempdir().unwrap();
    let events = dir.path().join("in.evs");
    let stream = EventStream::new(
        4,
        3,
        vec![
            Event::new(0, 0, 0.0, Polarity::Positive),
            Event::new(3, 1, 0.5, Polarity::Negative),
            Event::new(2, 2, 1.0, Polarity::Positive),
        ],
    )
    .unwrap();
    write_events(&events, &stream).unwrap();
    let out = dir.path().join("out.evol");
    assert_ok(&eventgan(&["voxelize", "--events", p(&events), "--out", p(&out)]));
    let vol = read_volume(&out).unwrap();
    assert_eq!((vol.num_bins(), vol.channels(), vol.height(), vol.width()), (9, 18, 3, 4));
    assert_eq!(vol, build_volume(&stream, 9, 4, 3).unwrap());
    assert_eq!(vol.polarity_mass(true), 2.0);
    assert_eq!(vol.polarity_mass(false), 1.0);

    let norm = dir.path().join("norm.evol");
    assert_ok(&eventgan(&["voxelize", "--events", p(&events), "--out", p(&norm), "--bins", "3", "--normalize"]));
    let vol = read_volume(&norm).unwrap();
    assert_eq!(vol.num_bins(), 3);
    assert!(vol.is_normalized());
    assert!(vol.data().iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn voxelize_rejects_bad_input() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out.evol");
    assert_error(&eventgan(&["voxelize", "--events", p(&dir.path().join("missing.evs")), "--out", p(&out)]), "file");
    let junk = dir.path().join("junk.evs");
    std::fs::write(&junk, b"not an event file at all").unwrap();
    assert_error(&eventgan(&["voxelize", "--events", p(&junk), "--out", p(&out)]), "bad_magic");
    assert_error(&eventgan(&["voxelize", "--out", p(&out)]), "usage");
    assert!(!out.exists());
}

#[test]
fn sim_classical_pair_and_affine() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.png");
    let b = dir.path().join("b.png");
    gradient(24, 16, 0.0).save_png(&a).unwrap();
    gradient(24, 16, 3.0).save_png(&b).unwrap();

    let same = dir.path().join("same.evs");
    assert_ok(&eventgan(&["sim-classical", "--mode", "pair", "--images", p(&a), p(&a), "--out", p(&same)]));
    assert!(read_events(&same).unwrap().is_empty());

    let moved = dir.path().join("moved.evs");
    assert_ok(&eventgan(&["sim-classical", "--mode", "pair", "--images", p(&a), p(&b), "--out", p(&moved)]));
    let s = read_events(&moved).unwrap();
    assert!(!s.is_empty());
    assert_eq!((s.width(), s.height()), (24, 16));

    let run = |name: &str, seed: &str| {
        let out = dir.path().join(name);
        let args = ["sim-classical", "--mode", "affine", "--images", p(&a), "--tx", "3", "--ty", "-1", "--sigma", "0.03", "--seed", seed, "--out", p(&out)];
        assert_ok(&eventgan(&args));
        std::fs::read(out).unwrap()
    };
    let first = run("r1.evs", "7");
    assert_eq!(first, run("r2.evs", "7"));
    assert_ne!(first, run("r3.evs", "8"));

    for theta in ["0", "-0.1"] {
        let o = eventgan(&["sim-classical", "--mode", "pair", "--images", p(&a), p(&b), "--theta", theta, "--out", p(&same)]);
        assert_error(&o, "invalid_argument");
    }
    let o = eventgan(&["sim-classical", "--mode", "pair", "--images", p(&a), "--out", p(&same)]);
    assert_error(&o, "invalid_argument");
}

const TINY_RUN: &str = r#"
[train]
pretrain_steps = 3
iterations = 2
batch_size = 2
crop_size = 16
num_bins = 3
frame_gap_range = [1, 2]
dataset_weights = [1.0]

[generator]
base_channels = 2
num_encoder_levels = 2
num_residual_blocks = 1
num_bins = 3

[discriminator]
num_layers = 2
base_channels = 2
num_bins = 3

[flow]
base_channels = 2
num_encoder_levels = 2
num_residual_blocks = 1
num_bins = 3

[recon]
base_channels = 2
num_encoder_levels = 2
num_residual_blocks = 1

[[datasets]]
name = "toy"

[datasets.toy]
size = 16
num_sequences = 2
frames_per_sequence = 4
min_side = 4.0
max_side = 6.0
"#;

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("run.toml");
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn train_requires_cycle_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY_RUN);
    let out = dir.path().join("run");
    let o = eventgan(&["train", "--config", p(&cfg), "--out", p(&out)]);
    assert_error(&o, "file");
    assert!(stderr(&o).contains(p(&out.join("flow.ckpt"))), "{}", stderr(&o));
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &TINY_RUN.replace("batch_size = 2", "batch_size = 2\nbatchsize = 3"));
    let o = eventgan(&["pretrain", "--config", p(&cfg), "--out", p(&dir.path().join("run"))]);
    assert_error(&o, "parse");
    assert!(stderr(&o).contains("batchsize"));
}

#[test]
fn mismatched_bins_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &TINY_RUN.replace("num_bins = 3\n\n[discriminator]", "num_bins = 5\n\n[discriminator]"));
    let o = eventgan(&["pretrain", "--config", p(&cfg), "--out", p(&dir.path().join("run"))]);
    assert_error(&o, "config_mismatch");
}

#[test]
fn pretrain_train_generate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY_RUN);
    let out = dir.path().join("run");
    assert_ok(&eventgan(&["pretrain", "--config", p(&cfg), "--out", p(&out), "--seed", "3"]));
    for f in ["flow.ckpt", "recon.ckpt", "config.toml", "pretrain_log.csv"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let echoed = std::fs::read_to_string(out.join("config.toml")).unwrap();
    assert!(echoed.contains("seed = 3"), "{echoed}");
    let log = std::fs::read_to_string(out.join("pretrain_log.csv")).unwrap();
    assert_eq!(log.lines().next(), Some(LOG_HEADER));
    assert_eq!(read_log(&out.join("pretrain_log.csv")).unwrap().len(), 3);

    let flow_before = std::fs::read(out.join("flow.ckpt")).unwrap();
    assert_ok(&eventgan(&["train", "--config", p(&cfg), "--out", p(&out), "--seed", "3"]));
    assert_eq!(std::fs::read(out.join("flow.ckpt")).unwrap(), flow_before);
    let rows = read_log(&out.join("train_log.csv")).unwrap();
    let kinds: Vec<&str> = rows.iter().map(|r| r.kind.as_str()).collect();
    assert_eq!(kinds, ["D", "D", "G", "D", "D", "G"]);
    let summary = std::fs::read_to_string(out.join("summary.txt")).unwrap();
    assert!(summary.contains("generator_steps=2"), "{summary}");

    let a = dir.path().join("a.png");
    let b = dir.path().join("b.png");
    gradient(16, 8, 0.0).save_png(&a).unwrap();
    gradient(16, 8, 1.0).save_png(&b).unwrap();
    let gen = out.join("generator.ckpt");
    let v1 = dir.path().join("v1.evol");
    let v2 = dir.path().join("v2.evol");
    let viz = dir.path().join("viz");
    assert_ok(&eventgan(&["generate", "--checkpoint", p(&gen), "--first", p(&a), "--second", p(&b), "--out", p(&v1), "--viz", p(&viz)]));
    assert_ok(&eventgan(&["generate", "--checkpoint", p(&gen), "--first", p(&a), "--second", p(&b), "--out", p(&v2)]));
    let vol = read_volume(&v1).unwrap();
    assert_eq!((vol.channels(), vol.height(), vol.width()), (6, 8, 16));
    assert!(vol.data().iter().all(|v| *v >= 0.0));
    assert_eq!(std::fs::read(&v1).unwrap(), std::fs::read(&v2).unwrap());
    let mut pngs: Vec<String> = std::fs::read_dir(&viz).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    pngs.sort();
    assert_eq!(pngs, ["average_timestamp.png", "event_count.png"]);
    assert_eq!(Frame::load(&viz.join("event_count.png")).unwrap().width(), 16);

    // the flow network is not a generator
    let o = eventgan(&["generate", "--checkpoint", p(&out.join("flow.ckpt")), "--first", p(&a), "--second", p(&b), "--out", p(&v2)]);
    assert!(!o.status.success());
    // 6 pixels is not divisible by the generator's 4
    let odd = dir.path().join("odd.png");
    Frame::filled(6, 8, 0.5).save_png(&odd).unwrap();
    let o = eventgan(&["generate", "--checkpoint", p(&gen), "--first", p(&odd), "--second", p(&odd), "--out", p(&v2)]);
    assert_error(&o, "indivisible_input");
}

#[test]
fn toy_data_writes_loadable_manifests() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("toy.toml");
    std::fs::write(&cfg, "size = 16\nnum_sequences = 2\nframes_per_sequence = 3\nmin_side = 4.0\nmax_side = 6.0\n").unwrap();
    let out = dir.path().join("toy");
    let o = eventgan(&["toy-data", "--config", p(&cfg), "--out", p(&out), "--seed", "5"]);
    assert_ok(&o);
    let manifests: Vec<PathBuf> = String::from_utf8(o.stdout).unwrap().lines().map(PathBuf::from).collect();
    assert_eq!(manifests.len(), 2);
    for m in &manifests {
        let rec = eventgan_core::data_io::SequenceRecord::load(m).unwrap();
        let seq = eventgan_core::data_io::Sequence::load(&rec).unwrap();
        assert_eq!((seq.len(), seq.width()), (3, 16));
    }
}

#[test]
fn eval_pose_fixtures() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("pose.csv");
    // joints: 0 head, 1 and 2 shoulders, 3 wrist
    let gt = [(10.0, 0.0), (0.0, 10.0), (20.0, 10.0), (5.0, 20.0)];
    let write = |offset: (f64, f64)| {
        let mut s = String::from("sample,joint,pred_x,pred_y,gt_x,gt_y\n");
        for (j, (x, y)) in gt.iter().enumerate() {
            s.push_str(&format!("s0,{j},{},{},{x},{y}\n", x + offset.0, y + offset.1));
        }
        std::fs::write(&file, s).unwrap();
        let o = eventgan(&["eval", "pose", "--file", p(&file), "--head", "0", "--shoulders", "1", "2"]);
        assert_ok(&o);
        String::from_utf8(o.stdout).unwrap()
    };
    assert_eq!(write((0.0, 0.0)), "mpjpe=0\npckh50=100\njoints=4\n");
    assert!(write((3.0, 4.0)).starts_with("mpjpe=5\n"));
}

#[test]
fn eval_detection_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let dets = dir.path().join("dets.csv");
    let gts = dir.path().join("gt.csv");
    std::fs::write(&dets, "image,x1,y1,x2,y2,confidence\nim0,0,0,10,10,0.9\nim0,50,50,60,60,0.8\n").unwrap();
    std::fs::write(&gts, "image,x1,y1,x2,y2,difficulty\nim0,0,0,10,10,easy\nim0,50,50,60,60,dont_care\n").unwrap();
    let o = eventgan(&["eval", "detection", "--detections", p(&dets), "--ground-truth", p(&gts)]);
    assert_ok(&o);
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("precision=1\n"), "{text}");
    assert!(text.contains("recall_easy=1\n"), "{text}");
    assert!(text.contains("ignored=1\n"), "{text}");

    std::fs::write(&gts, "image,x1,y1,x2,y2,difficulty\nim0,10,0,0,10,easy\n").unwrap();
    let o = eventgan(&["eval", "detection", "--detections", p(&dets), "--ground-truth", p(&gts)]);
    assert_error(&o, "malformed_box");
}

#[test]
fn reference_lists_every_command() {
    let o = eventgan(&["reference"]);
    assert_ok(&o);
    let text = String::from_utf8(o.stdout).unwrap();
    for cmd in ["voxelize", "sim-classical", "toy-data", "pretrain", "train", "generate", "eval"] {
        assert!(text.contains(&format!("## eventgan {cmd}")), "{cmd}");
    }
    assert!(text.contains("[train]") && text.contains("d_steps_per_g = 2"));
}
