use cadence_core::autodiff::{directional_fd, Tape};
use cadence_core::checkpoint::Checkpoint;
use cadence_core::denoiser::{count_params, CondVar, Denoiser, DenoiserConfig, DenoiserKind};
use cadence_core::diffusion::Condition;
use cadence_core::error::Error;
use cadence_core::optim::{adam_step, AdamConfig, AdamState};
use cadence_core::params::ParamSet;
use cadence_core::rng::SplitMix64;
use cadence_core::tensor::Tensor;

fn tiny(kind: DenoiserKind) -> DenoiserConfig {
    DenoiserConfig {
        kind,
        layers: 2,
        hidden_dim: 16,
        heads: 2,
        dropout: 0.0,
        max_frames: 16,
        frame_width: 57,
        cond_dim: 512,
    }
}

fn model(kind: DenoiserKind, seed: u64) -> Denoiser<f64> {
    Denoiser::new(tiny(kind), &mut SplitMix64::new(seed)).unwrap()
}

#[test]
fn parameter_count_matches_hand_count() {
    // in 57·16+16, pos 17·16, time 2·(16·16+16), cond 512·16+16 plus null 512,
    // blocks 2·(12·16²+13·16), final norm 2·16, out 16·57+57.
    let expected = 928 + 272 + 544 + 8720 + 2 * 3280 + 32 + 969;
    assert_eq!(count_params(&tiny(DenoiserKind::M2d)), expected);
    assert_eq!(model(DenoiserKind::M2d, 0).params.count() as u64, expected);
    assert_eq!(
        model(DenoiserKind::Ssr, 0).params.count() as u64,
        count_params(&tiny(DenoiserKind::Ssr))
    );

    let mut deeper = tiny(DenoiserKind::M2d);
    deeper.layers = 4;
    assert_eq!(count_params(&deeper) - expected, 2 * 3280);

    let full_size = DenoiserConfig {
        kind: DenoiserKind::M2d,
        layers: 12,
        hidden_dim: 768,
        heads: 6,
        dropout: 0.1,
        max_frames: 300,
        frame_width: 24 * 6 + 3,
        cond_dim: 512,
    };
    assert!(count_params(&full_size) > 85_000_000);
}

#[test]
fn config_validation() {
    let mut c = tiny(DenoiserKind::M2d);
    c.heads = 3;
    assert!(c.validate().is_err());
    let mut c = tiny(DenoiserKind::M2d);
    c.dropout = 1.0;
    assert!(c.validate().is_err());
    let c = tiny(DenoiserKind::Ssr);
    assert_eq!(DenoiserConfig::from_map(&c.to_map()).unwrap(), c);
}

#[test]
fn output_shape_and_null_path() {
    let m = model(DenoiserKind::M2d, 1);
    let mut rng = SplitMix64::new(2);
    let c = Tensor::randn([512], 0.05, &mut rng);
    for l in [1, 5, 16] {
        let x = Tensor::randn([l, 57], 1.0, &mut rng);
        assert_eq!(m.m2d_forward(&x, 10, Condition::Embedding(&c)).unwrap().shape(), &[l, 57]);
        assert_eq!(m.m2d_forward(&x, 10, Condition::Null).unwrap().shape(), &[l, 57]);
    }
    let too_long = Tensor::zeros([17, 57]);
    assert!(m.m2d_forward(&too_long, 1, Condition::Null).is_err());
    assert!(m.m2d_forward(&Tensor::zeros([4, 56]), 1, Condition::Null).is_err());
    assert!(m.m2d_forward(&Tensor::zeros([4, 57]), 1, Condition::Embedding(&Tensor::zeros([10]))).is_err());
}

#[test]
fn ssr_contract() {
    let m = model(DenoiserKind::Ssr, 1);
    let mut rng = SplitMix64::new(3);
    let x = Tensor::randn([12, 57], 1.0, &mut rng);
    let low = Tensor::randn([12, 57], 1.0, &mut rng);
    assert_eq!(m.ssr_forward(&x, 5, Condition::Null, &low, 3).unwrap().shape(), &[12, 57]);
    assert!(m.ssr_forward(&x, 5, Condition::Null, &Tensor::zeros([11, 57]), 3).is_err());
    assert!(m.m2d_forward(&x, 5, Condition::Null).is_err());
    assert!(model(DenoiserKind::M2d, 0).ssr_forward(&x, 5, Condition::Null, &low, 0).is_err());
    // The SSR time input is t + s.
    let a = m.ssr_forward(&x, 5, Condition::Null, &low, 3).unwrap();
    let b = m.ssr_forward(&x, 8, Condition::Null, &low, 0).unwrap();
    assert_eq!(a, b);
}

#[test]
fn timestep_embedding() {
    let m = model(DenoiserKind::M2d, 4);
    let e0 = m.embed_timestep(0).unwrap();
    assert_eq!(e0, m.embed_timestep(0).unwrap());
    assert_eq!(e0.shape(), &[1, 16]);
    let cos = |a: &Tensor<f64>, b: &Tensor<f64>| {
        let dot: f64 = a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum();
        dot / (a.sum_sq().sqrt() * b.sum_sq().sqrt())
    };
    for (t, u) in [(0, 1), (1, 2), (500, 501), (999, 1000), (10, 1500)] {
        let (a, b) = (m.embed_timestep(t).unwrap(), m.embed_timestep(u).unwrap());
        assert!(cos(&a, &b) < 1.0 - 1e-6, "{t} vs {u}");
    }
}

#[test]
fn frame_order_matters_and_forward_is_deterministic() {
    let m = model(DenoiserKind::M2d, 5);
    let mut rng = SplitMix64::new(6);
    let x = Tensor::randn([8, 57], 1.0, &mut rng);
    let mut rows: Vec<Vec<f64>> = (0..8).map(|i| x.row(i).to_vec()).collect();
    rows.reverse();
    let shuffled = Tensor::new([8, 57], rows.concat()).unwrap();
    let a = m.m2d_forward(&x, 50, Condition::Null).unwrap();
    let b = m.m2d_forward(&shuffled, 50, Condition::Null).unwrap();
    let mut b_rows: Vec<Vec<f64>> = (0..8).map(|i| b.row(i).to_vec()).collect();
    b_rows.reverse();
    let b_back = Tensor::new([8, 57], b_rows.concat()).unwrap();
    assert!(a.max_abs_diff(&b_back).unwrap() > 1e-6);
    assert_eq!(a, m.m2d_forward(&x, 50, Condition::Null).unwrap());
}

fn gradient_check(kind: DenoiserKind) {
    let m = model(kind, 7);
    let mut rng = SplitMix64::new(8);
    let width = m.config.input_width();
    let x = Tensor::randn([6, width], 1.0, &mut rng);
    let c = Tensor::randn([1, 512], 0.05, &mut rng);
    let target = Tensor::randn([6, 57], 1.0, &mut rng);

    let loss = |params: &ParamSet<f64>, tape: &mut Tape<f64>| {
        let p = params.bind(tape, true);
        let xv = tape.constant(x.clone());
        let cv = tape.constant(c.clone());
        let tv = tape.constant(target.clone());
        let out = m.forward_var(tape, &p, xv, 37.0, CondVar::Embedding(cv), None).unwrap();
        let l = tape.mse(out, tv).unwrap();
        (l, p.vars().to_vec())
    };
    let mut tape = Tape::new();
    let (l, vars) = loss(&m.params, &mut tape);
    let grads = tape.backward(l).unwrap();
    let analytic: Vec<Tensor<f64>> = vars.iter().map(|&v| grads.wrt(v)).collect();

    let names = m.params.names().to_vec();
    let mut f = |ts: &[Tensor<f64>]| {
        let mut ps = ParamSet::new();
        for (n, t) in names.iter().zip(ts) {
            ps.push(n.clone(), t.clone()).unwrap();
        }
        let mut tape = Tape::new();
        let (l, _) = loss(&ps, &mut tape);
        tape.scalar_value(l)
    };
    for _ in 0..6 {
        let dir: Vec<Tensor<f64>> = m.params.tensors().iter().map(|t| Tensor::randn(t.shape().to_vec(), 1.0, &mut rng)).collect();
        let fd = directional_fd(&mut f, m.params.tensors(), &dir, 1e-5).unwrap();
        let an: f64 = analytic.iter().zip(&dir).map(|(g, d)| g.data().iter().zip(d.data()).map(|(a, b)| a * b).sum::<f64>()).sum();
        let rel = (fd - an).abs() / fd.abs().max(an.abs());
        assert!(rel < 1e-5, "rel {rel}: fd {fd} vs analytic {an}");
    }
}

#[test]
fn m2d_gradients_match_finite_differences() {
    gradient_check(DenoiserKind::M2d);
}

#[test]
fn ssr_gradients_match_finite_differences() {
    gradient_check(DenoiserKind::Ssr);
}

#[test]
fn reset_output_gives_constant_prediction() {
    let mut m = model(DenoiserKind::M2d, 9);
    let mean: Vec<f64> = (0..57).map(|i| i as f64 * 0.01).collect();
    m.reset_output(&mean).unwrap();
    let x = Tensor::randn([5, 57], 1.0, &mut SplitMix64::new(1));
    let out = m.m2d_forward(&x, 3, Condition::Null).unwrap();
    for i in 0..5 {
        assert_eq!(out.row(i), &mean[..]);
    }
    assert!(m.reset_output(&mean[..3]).is_err());
}

#[test]
fn ssr_overfits_one_clip() {
    let mut m = Denoiser::<f64>::new(
        DenoiserConfig { max_frames: 16, ..tiny(DenoiserKind::Ssr) },
        &mut SplitMix64::new(10),
    )
    .unwrap();
    let mut rng = SplitMix64::new(11);
    // Smooth ground truth and its coarse linear interpolation.
    let gt: Vec<f64> = (0..16)
        .flat_map(|i| (0..57).map(move |c| (0.4 * i as f64 + 0.3 * c as f64).sin()))
        .collect();
    let gt = Tensor::new([16, 57], gt).unwrap();
    let mut low = Vec::new();
    for i in 0..16 {
        // Keep every 4th frame and interpolate; the tail extrapolates the last segment.
        let a = 4 * (i / 4).min(2);
        let f = (i - a) as f64 / 4.0;
        low.extend((0..57).map(|c| gt.at2(a, c) + (gt.at2(a + 4, c) - gt.at2(a, c)) * f));
    }
    let low = Tensor::new([16, 57], low).unwrap();
    let residual = low.sub(&gt).unwrap().sum_sq() / gt.len() as f64;

    let cfg = AdamConfig { lr: 3e-3, ..AdamConfig::default() };
    let mut state = AdamState::new(m.params.tensors());
    let mut last = f64::INFINITY;
    for _ in 0..300 {
        let mut tape = Tape::new();
        let p = m.params.bind(&mut tape, true);
        let noise = Tensor::randn([16, 57], 1.0, &mut rng);
        let xt = gt.scale(0.5).unwrap().add(&noise.scale(0.75f64.sqrt()).unwrap()).unwrap();
        let input = tape.constant(Tensor::concat(&[&xt, &low], 1).unwrap());
        let out = m.forward_var(&mut tape, &p, input, 500.0, CondVar::Null, None).unwrap();
        let tv = tape.constant(gt.clone());
        let loss = tape.mse(out, tv).unwrap();
        last = tape.scalar_value(loss).unwrap();
        let grads = p.gradients(&tape.backward(loss).unwrap());
        drop(p);
        adam_step(m.params.tensors_mut(), &grads, &mut state, &cfg).unwrap();
    }
    assert!(last < residual, "loss {last} vs interpolation residual {residual}");
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let m = model(DenoiserKind::Ssr, 12);
    let mut state = AdamState::new(m.params.tensors());
    let grads: Vec<Tensor<f64>> = m.params.tensors().iter().map(|t| t.scale(0.1).unwrap()).collect();
    let mut params = m.params.clone();
    adam_step(params.tensors_mut(), &grads, &mut state, &AdamConfig::default()).unwrap();
    let ck = Checkpoint { config: m.config.to_map(), params, adam: Some(state) };
    let bytes = ck.encode().unwrap();
    let back = Checkpoint::decode(&bytes, "x".as_ref()).unwrap();
    assert_eq!(back, ck);
    assert_eq!(back.encode().unwrap(), bytes);
    let restored = Denoiser::from_parts(DenoiserConfig::from_map(&back.config).unwrap(), back.params).unwrap();
    assert_eq!(restored.config, m.config);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    ck.save(&path).unwrap();
    assert_eq!(Checkpoint::load(&path).unwrap(), ck);

    let mut bad = bytes.clone();
    bad[3] = b'?';
    assert!(matches!(Checkpoint::decode(&bad, "x".as_ref()), Err(Error::Format { .. })));
    assert!(matches!(Checkpoint::decode(&bytes[..bytes.len() - 9], "x".as_ref()), Err(Error::Format { .. })));
    let mut wrong_version = bytes.clone();
    wrong_version[8] = 9;
    assert!(Checkpoint::decode(&wrong_version, "x".as_ref()).is_err());
}

#[test]
fn mismatched_parameters_are_rejected() {
    let m = model(DenoiserKind::M2d, 0);
    assert!(Denoiser::from_parts(tiny(DenoiserKind::Ssr), m.params.clone()).is_err());
}
