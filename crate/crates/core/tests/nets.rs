use eventgan_core::nets::checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint};
use eventgan_core::nets::spectral::{estimate_sigma, init_vector, spectral_normalize_step};
use eventgan_core::nets::{
    discriminator_forward, flow_net_forward, generator_forward, recon_net_forward, DiscriminatorConfig, FlowNetConfig, GeneratorConfig, Mode, Net,
    NetConfig, ReconNetConfig,
};
use eventgan_core::{Error, EventVolume, Frame};
use eventgan_grad::{Graph, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_configs() -> Vec<NetConfig> {
    vec![
        NetConfig::Generator(GeneratorConfig { base_channels: 4, num_encoder_levels: 2, num_bins: 3, ..Default::default() }),
        NetConfig::Discriminator(DiscriminatorConfig { num_layers: 2, base_channels: 4, num_bins: 3 }),
        NetConfig::Flow(FlowNetConfig { base_channels: 4, num_encoder_levels: 2, num_bins: 3, ..Default::default() }),
        NetConfig::Recon(ReconNetConfig { base_channels: 4, num_encoder_levels: 2, ..Default::default() }),
    ]
}

fn image(seed: u64, w: usize, h: usize) -> Frame {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Frame::from_fn(w, h, |_, _| rng.random::<f32>())
}

fn random_input(cfg: &NetConfig, n: usize, h: usize, w: usize, seed: u64) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn([n, cfg.in_channels(), h, w], |_| rng.random::<f32>())
}

#[test]
fn output_shapes() {
    let [g, d, f, r] = <[NetConfig; 4]>::try_from(small_configs()).unwrap();
    let (i0, i1) = (image(1, 16, 8), image(2, 16, 8));
    let mut gen = Net::<f32>::new(g, 1).unwrap();
    let vol = generator_forward(&mut gen, &i0, &i1).unwrap();
    assert_eq!((vol.channels(), vol.height(), vol.width()), (6, 8, 16));
    let mut disc = Net::<f32>::new(d, 1).unwrap();
    assert_eq!(discriminator_forward(&mut disc, &vol, &i0, &i1).unwrap().shape(), [1, 1, 2, 4]);
    let mut flow = Net::<f32>::new(f, 1).unwrap();
    assert_eq!(flow_net_forward(&mut flow, &vol).unwrap().shape(), [1, 2, 8, 16]);
    let mut recon = Net::<f32>::new(r, 1).unwrap();
    let out = recon_net_forward(&mut recon, &i0, &i1).unwrap();
    assert_eq!((out.width(), out.height()), (16, 8));
}

#[test]
fn default_discriminator_score_map_is_input_over_sixteen() {
    let mut disc = Net::<f32>::new(NetConfig::Discriminator(DiscriminatorConfig { base_channels: 4, ..Default::default() }), 0).unwrap();
    let vol = EventVolume::zeros(9, 32, 48);
    let scores = discriminator_forward(&mut disc, &vol, &Frame::zeros(48, 32), &Frame::zeros(48, 32)).unwrap();
    assert_eq!(scores.shape(), [1, 1, 2, 3]);
}

#[test]
fn construction_and_inference_are_deterministic() {
    for cfg in small_configs() {
        let mut a = Net::<f32>::new(cfg.clone(), 7).unwrap();
        let mut b = Net::<f32>::new(cfg.clone(), 7).unwrap();
        assert_eq!(a.params().tensors(), b.params().tensors());
        let c = Net::<f32>::new(cfg.clone(), 8).unwrap();
        assert_ne!(a.params().tensors(), c.params().tensors());
        let x = random_input(&cfg, 2, 8, 8, 3);
        assert_eq!(a.infer(x.clone(), Mode::Eval).unwrap(), b.infer(x, Mode::Eval).unwrap());
    }
}

#[test]
fn generator_output_is_non_negative() {
    let mut gen = Net::<f32>::new(small_configs()[0].clone(), 2).unwrap();
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for t in gen.params_mut().tensors_mut() {
            for v in t.data_mut() {
                *v += rng.random_range(-0.3..0.3);
            }
        }
        let vol = generator_forward(&mut gen, &image(seed, 8, 8), &image(seed + 10, 8, 8)).unwrap();
        assert!(vol.data().iter().all(|v| *v >= 0.0));
    }
}

#[test]
fn every_parameter_receives_gradient() {
    for cfg in small_configs() {
        let mut net = Net::<f64>::new(cfg.clone(), 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for t in net.params_mut().tensors_mut() {
            for v in t.data_mut() {
                *v += rng.random_range(-0.1..0.1);
            }
        }
        let x = random_input(&cfg, 2, 8, 8, 5).cast::<f64>();
        let mut g = Graph::new();
        let xv = g.constant(x);
        let f = net.forward(&mut g, xv, Mode::Train, true).unwrap();
        let loss = g.mean(f.out);
        let grads = g.backward(loss);
        for (name, v) in net.params().names().iter().zip(&f.params) {
            let gr = grads.get(*v).unwrap_or_else(|| panic!("{}: no gradient for {name}", cfg.name()));
            assert!(gr.data().iter().any(|x| *x != 0.0), "{}: zero gradient for {name}", cfg.name());
        }
    }
}

#[test]
fn indivisible_input_reports_padding() {
    let mut gen = Net::<f32>::new(small_configs()[0].clone(), 0).unwrap();
    match generator_forward(&mut gen, &Frame::zeros(10, 7), &Frame::zeros(10, 7)) {
        Err(Error::IndivisibleInput { divisor, padded_height, padded_width, .. }) => {
            assert_eq!((divisor, padded_height, padded_width), (4, 8, 12));
        }
        other => panic!("expected IndivisibleInput, got {other:?}"),
    }
    assert!(matches!(gen.infer(Tensor::zeros([1, 3, 8, 8]), Mode::Eval), Err(Error::ShapeMismatch(_))));
}

#[test]
fn eval_mode_leaves_state_alone() {
    let cfg = small_configs()[2].clone();
    let mut net = Net::<f32>::new(cfg.clone(), 1).unwrap();
    let before = net.buffers().tensors().to_vec();
    net.infer(random_input(&cfg, 2, 8, 8, 1), Mode::Eval).unwrap();
    net.infer(random_input(&cfg, 2, 8, 8, 1), Mode::BatchStats).unwrap();
    assert_eq!(net.buffers().tensors(), &before[..]);
    net.infer(random_input(&cfg, 2, 8, 8, 1), Mode::Train).unwrap();
    assert_ne!(net.buffers().tensors(), &before[..]);
}

#[test]
fn checkpoint_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    for cfg in small_configs() {
        let mut net = Net::<f32>::new(cfg.clone(), 3).unwrap();
        net.infer(random_input(&cfg, 2, 8, 8, 2), Mode::Train).unwrap();
        let path = dir.path().join(format!("{}.ckpt", cfg.name()));
        save_checkpoint(&net, &path).unwrap();
        let mut back = load_checkpoint::<f32>(&path, Some(&cfg)).unwrap();
        assert_eq!(encode_checkpoint(&back).unwrap(), encode_checkpoint(&net).unwrap());
        let x = random_input(&cfg, 1, 8, 8, 4);
        assert_eq!(back.infer(x.clone(), Mode::Eval).unwrap(), net.infer(x, Mode::Eval).unwrap());
        let other = small_configs().into_iter().find(|c| c.name() != cfg.name()).unwrap();
        assert!(matches!(load_checkpoint::<f32>(&path, Some(&other)), Err(Error::ConfigMismatch(_))));
    }
    assert!(load_checkpoint::<f32>(&dir.path().join("missing.ckpt"), None).is_err());
}

#[test]
fn checkpoint_version_is_checked() {
    let net = Net::<f32>::new(small_configs()[1].clone(), 0).unwrap();
    let mut bytes = encode_checkpoint(&net).unwrap();
    bytes[8..12].copy_from_slice(&99u32.to_le_bytes());
    assert!(matches!(decode_checkpoint::<f32>(&bytes), Err(Error::CheckpointVersion { found: 99, .. })));
}

#[test]
fn spectral_examples() {
    let diag = [3.0f64, 0.0, 0.0, 1.0];
    assert!((estimate_sigma(&diag, 2, 2, 30, 5) - 3.0).abs() < 1e-9);
    let mut u = init_vector(2, 1);
    let mut v = vec![0.0; 2];
    let mut normalized = diag.to_vec();
    for _ in 0..30 {
        normalized = spectral_normalize_step(&diag, 2, 2, &mut u, &mut v);
    }
    assert!((normalized[0] - 1.0).abs() < 1e-9 && (normalized[3] - 1.0 / 3.0).abs() < 1e-9);

    let (s, c) = 1.1f64.sin_cos();
    let rot = [c, -s, s, c];
    assert!((estimate_sigma(&rot, 2, 2, 5, 2) - 1.0).abs() < 1e-9);

    let rect = [1.0f64, 2.0, 2.0, 4.0, 3.0, 6.0];
    assert!((estimate_sigma(&rect, 3, 2, 10, 0) - 70f64.sqrt()).abs() < 1e-9);
}
