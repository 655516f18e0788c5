//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Criteria 8 to 10 train the default desk-scale configuration for three
//! seeds, so a full run takes about seventeen minutes on one core.

use std::path::Path;
use std::time::Instant;

use cadence_core::alignment::{infonce_loss, AlignmentModel};
use cadence_core::autodiff::{directional_fd, Tape};
use cadence_core::denoiser::{CondVar, Denoiser, DenoiserConfig, DenoiserKind};
use cadence_core::diffusion::{
    cfg_combine, conditioning_augment, q_sample, Condition, NoiseSchedule, ReverseNoise, SamplerConfig, ScheduleKind,
};
use cadence_core::error::Result;
use cadence_core::losses::{dynamic_weight, loss_pos_key, loss_rot_key, total_loss_var, LossWeights};
use cadence_core::metrics::{
    beat_align_score, extract_dance_beats, frechet_distance, kinetic_features, GaussianStats, BAS_SIGMA_FRAMES,
};
use cadence_core::motion::rotation::{axis_angle, matrix_to_rot6d};
use cadence_core::motion::{BeatGrid, MotionSequence, SkeletonSpec};
use cadence_core::params::ParamSet;
use cadence_core::pipeline::cascade::{eval_items, generate_eval_set, sample_cascade, CascadeModel, CascadeSettings, EvalItem};
use cadence_core::pipeline::data::{derive_seed, gen_data, Dataset};
use cadence_core::pipeline::report::{augmentation_sweep, sweep_table, write_sweep_csv, SWEEP_PCTS};
use cadence_core::pipeline::train::{alignment_pairs, load_alignment, motion_tensor, train_align, train_stage, untrained_stage};
use cadence_core::pipeline::{RunConfig, HIGH_FPS, LOW_FPS};
use cadence_core::rng::SplitMix64;
use cadence_core::tensor::Tensor;
use nalgebra::{DMatrix, DVector};

const SEEDS: [u64; 3] = [0, 1, 2];
const TRAIN_BUDGET_S: f64 = 15.0 * 60.0;
const SWEEP_BUDGET_S: f64 = 10.0 * 60.0;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (m, xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0))
}

fn random_pose(skel: &SkeletonSpec, frames: usize, rng: &mut SplitMix64) -> Tensor<f64> {
    let mut data = Vec::new();
    for _ in 0..frames {
        for _ in 0..skel.num_joints() {
            let r = axis_angle([rng.normal(), rng.normal(), rng.normal()], rng.uniform_range(-1.0, 1.0));
            data.extend(matrix_to_rot6d(&r).unwrap());
        }
        data.extend([rng.normal() * 0.1, 0.9 + rng.normal() * 0.1, rng.normal() * 0.1]);
    }
    Tensor::new([frames, skel.frame_width()], data).unwrap()
}

fn gradient_integrity() -> Result<Outcome> {
    let skel = SkeletonSpec::compact();
    let fps = 15.0;
    let dcfg = DenoiserConfig {
        kind: DenoiserKind::M2d,
        layers: 2,
        hidden_dim: 16,
        heads: 2,
        dropout: 0.0,
        max_frames: 8,
        frame_width: skel.frame_width(),
        cond_dim: 512,
    };
    let mut rng = SplitMix64::new(101);
    let model = Denoiser::<f64>::new(dcfg, &mut rng)?;
    let gt = random_pose(&skel, 6, &mut rng);
    let x = Tensor::randn([6, skel.frame_width()], 1.0, &mut rng);
    let c = Tensor::randn([1, 512], 0.05, &mut rng);
    let weights = LossWeights::default();
    let (t, steps) = (420, 1000);

    let loss = |params: &ParamSet<f64>, tape: &mut Tape<f64>| -> Result<_> {
        let p = params.bind(tape, true);
        let xv = tape.constant(x.clone());
        let cv = tape.constant(c.clone());
        let gv = tape.constant(gt.clone());
        let out = model.forward_var(tape, &p, xv, t as f64, CondVar::Embedding(cv), None)?;
        let pred = tape.add(out, gv)?;
        let l = total_loss_var(tape, pred, gv, t, steps, &weights, &skel, fps)?;
        Ok((l.total, p.vars().to_vec()))
    };
    let mut tape = Tape::new();
    let (l, vars) = loss(&model.params, &mut tape)?;
    let grads = tape.backward(l)?;
    let analytic: Vec<Tensor<f64>> = vars.iter().map(|&v| grads.wrt(v)).collect();
    let names = model.params.names().to_vec();
    let mut f = |ts: &[Tensor<f64>]| {
        let mut ps = ParamSet::new();
        for (n, t) in names.iter().zip(ts) {
            ps.push(n.clone(), t.clone())?;
        }
        let mut tape = Tape::new();
        let (l, _) = loss(&ps, &mut tape)?;
        tape.scalar_value(l)
    };
    let directions = 20;
    let mut worst = 0.0f64;
    for _ in 0..directions {
        let dir: Vec<Tensor<f64>> = model
            .params
            .tensors()
            .iter()
            .map(|t| Tensor::randn(t.shape().to_vec(), 1.0, &mut rng))
            .collect();
        let fd = directional_fd(&mut f, model.params.tensors(), &dir, 1e-5)?;
        let an: f64 = analytic
            .iter()
            .zip(&dir)
            .map(|(g, d)| g.data().iter().zip(d.data()).map(|(a, b)| a * b).sum::<f64>())
            .sum();
        worst = worst.max(rel_err(fd, an));
    }
    Ok(outcome(
        worst < 1e-5,
        format!("{directions} parameter directions over the combined loss, max rel err {worst:.2e}"),
    ))
}

fn forward_process_law() -> Result<Outcome> {
    let s = NoiseSchedule::<f64>::build(1000, ScheduleKind::Cosine)?;
    let n = 100_000;
    let x0 = 0.8;
    let mut rng = SplitMix64::new(202);
    let mut ok = true;
    let mut notes = Vec::new();
    for t in [1, 500, 1000] {
        let mut draws = Vec::with_capacity(n);
        for _ in 0..n {
            draws.push(q_sample(&Tensor::scalar(x0), t, &Tensor::scalar(rng.normal()), &s)?.data()[0]);
        }
        let (m, v) = mean_var(&draws);
        let ab = s.alpha_bar(t);
        let var = 1.0 - ab;
        let zm = (m - ab.sqrt() * x0) / (var / n as f64).sqrt();
        let zv = (v - var) / (var * (2.0 / (n as f64 - 1.0)).sqrt());
        ok &= zm.abs() < 3.0 && zv.abs() < 3.0;
        notes.push(format!("t={t} z_mean {zm:+.2} z_var {zv:+.2}"));
    }
    let x0 = Tensor::new([1, 3], vec![1.0, -1.0, 0.5])?;
    let mut cols = vec![Vec::with_capacity(n); 3];
    for _ in 0..n {
        let x = q_sample(&x0, 1000, &Tensor::randn([1, 3], 1.0, &mut rng), &s)?;
        for (c, col) in cols.iter_mut().enumerate() {
            col.push(x.data()[c]);
        }
    }
    for col in &cols {
        let (m, v) = mean_var(col);
        ok &= m.abs() <= 0.02 && (0.95..=1.05).contains(&v);
        notes.push(format!("T channel mean {m:+.4} var {v:.4}"));
    }
    Ok(outcome(ok, notes.join(", ")))
}

fn cfg_identity() -> Result<Outcome> {
    let mut rng = SplitMix64::new(303);
    let mut worst = 0.0f64;
    let mut exact = true;
    for _ in 0..20 {
        let c: Tensor<f64> = Tensor::randn([7, 9], 1.0, &mut rng);
        let u: Tensor<f64> = Tensor::randn([7, 9], 1.0, &mut rng);
        exact &= cfg_combine(&c, &u, 1.0)? == c && cfg_combine(&c, &u, 0.0)? == u;
        let (a, b) = (rng.uniform_range(-3.0, 5.0), rng.uniform_range(-3.0, 5.0));
        let lam = rng.uniform();
        // Affine in w: the combination at a convex mix of weights is the mix of combinations.
        let mixed = cfg_combine(&c, &u, lam * a + (1.0 - lam) * b)?;
        let expect = cfg_combine(&c, &u, a)?.scale(lam)?.add(&cfg_combine(&c, &u, b)?.scale(1.0 - lam)?)?;
        worst = worst.max(mixed.max_abs_diff(&expect)?);
        let direct = u.add(&c.sub(&u)?.scale(a)?)?;
        worst = worst.max(cfg_combine(&c, &u, a)?.max_abs_diff(&direct)?);
    }
    Ok(outcome(
        exact && worst < 1e-12,
        format!("w=1 and w=0 bit-exact: {exact}, affine residual {worst:.1e} over 20 random pairs"),
    ))
}

fn dynamic_weight_ends() -> Result<Outcome> {
    let (a, b) = (dynamic_weight(0, 1000, 0.1)?, dynamic_weight(1000, 1000, 0.1)?);
    Ok(outcome(a == 1.0 && b == 0.9, format!("lambda_0 = {a}, lambda_T = {b}")))
}

fn brute_bas(dance: &[f64], music: &[f64], sigma: f64, fps: f64) -> f64 {
    let mut s = 0.0;
    for &m in music {
        let mut best = f64::INFINITY;
        for &d in dance {
            best = best.min(((m - d) * fps).powi(2));
        }
        s += (-best / (2.0 * sigma * sigma)).exp();
    }
    s / music.len() as f64
}

fn bas_correctness() -> Result<Outcome> {
    let mut rng = SplitMix64::new(404);
    let grid = |rng: &mut SplitMix64| -> Result<BeatGrid> {
        let n = 1 + rng.below(12) as usize;
        let mut t: Vec<f64> = (0..n).map(|_| rng.uniform_range(0.0, 10.0)).collect();
        t.sort_by(f64::total_cmp);
        t.dedup();
        BeatGrid::new(t, 10.0)
    };
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let d = grid(&mut rng)?;
        let m = grid(&mut rng)?;
        let a = beat_align_score(&d, &m, BAS_SIGMA_FRAMES, 60.0)?;
        worst = worst.max((a - brute_bas(d.timestamps(), m.timestamps(), BAS_SIGMA_FRAMES, 60.0)).abs());
    }
    let m = BeatGrid::new(vec![0.5, 1.0, 1.5, 2.0, 2.5], 3.0)?;
    let same = beat_align_score(&m, &m, BAS_SIGMA_FRAMES, 60.0)?;
    let shifted = BeatGrid::new(m.timestamps().iter().map(|t| t + BAS_SIGMA_FRAMES / 60.0).collect(), 3.0)?;
    let off = beat_align_score(&shifted, &m, BAS_SIGMA_FRAMES, 60.0)?;
    let off_err = (off - (-0.5f64).exp()).abs();
    Ok(outcome(
        worst < 1e-12 && same == 1.0 && off_err < 1e-12,
        format!("oracle max diff {worst:.1e} on 100 pairs, coincident {same}, sigma offset err {off_err:.1e}"),
    ))
}

fn fid_correctness(cfg: &RunConfig) -> Result<Outcome> {
    let one = |m: f64| GaussianStats::new(DVector::from_element(1, m), DMatrix::from_element(1, 1, 1.0));
    let d = frechet_distance(&one(0.0)?, &one(1.0)?)?;
    let skel = cfg.skeleton()?;
    let motions = Dataset::load(cfg.data_dir())?.motions();
    let feats = motions.iter().map(|m| kinetic_features(m, &skel)).collect::<Result<Vec<_>>>()?;
    let stats = GaussianStats::from_features(&feats)?;
    let same = frechet_distance(&stats, &stats)?;
    Ok(outcome(
        (d - 1.0).abs() <= 1e-9 && same.abs() <= 1e-9,
        format!(
            "N(0,1) vs N(1,1) = {d}, identical kinetic features of {} clips = {same:.1e}",
            feats.len()
        ),
    ))
}

fn cascade_oracle(cfg: &RunConfig) -> Result<Outcome> {
    let held = Dataset::load(cfg.heldout_dir())?;
    let mut exact = 0;
    for clip in &held.clips {
        let gt = clip.motion.window(0, cfg.high_frames())?;
        let gt_low = motion_tensor::<f64>(&gt.downsample(LOW_FPS)?);
        let gt_high = motion_tensor::<f64>(&gt);
        let m2d = |_: &Tensor<f64>, _: usize, _: Condition<'_, f64>| Ok(gt_low.clone());
        let ssr = |_: &Tensor<f64>, _: usize, _: Condition<'_, f64>, _: &Tensor<f64>, _: usize| Ok(gt_high.clone());
        let set = CascadeSettings {
            sampler: SamplerConfig {
                guidance_weight: cfg.guidance,
                inference_steps: cfg.inference_steps,
                noise: ReverseNoise::Zero,
                seed: 17,
            },
            schedule: NoiseSchedule::build(cfg.diffusion_steps, cfg.schedule)?,
            low_frames: cfg.low_frames,
            joints: gt.joints(),
            aug_step: cfg.pct_step(cfg.ssr_aug_pct),
            norm: None,
        };
        let cond = Tensor::full([1, 512], 1.0);
        let out = sample_cascade(&m2d, &ssr, Some(&cond), &set, None)?;
        let bits = |s: &MotionSequence| s.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        if out.high.fps() == HIGH_FPS && bits(&out.high) == bits(&gt) {
            exact += 1;
        }
    }
    Ok(outcome(
        exact == held.clips.len(),
        format!("{exact}/{} held-out clips reconstructed bit-exactly at 60 fps", held.clips.len()),
    ))
}

fn mean_bas(generated: &[MotionSequence], beats: &[&BeatGrid], skel: &SkeletonSpec) -> Result<f64> {
    let mut total = 0.0;
    for (g, b) in generated.iter().zip(beats) {
        total += beat_align_score(&extract_dance_beats(g, skel)?, b, BAS_SIGMA_FRAMES, f64::from(HIGH_FPS))?;
    }
    Ok(total / generated.len() as f64)
}

struct SeedRun {
    cfg: RunConfig,
    items: Vec<EvalItem>,
    train_s: f64,
    trained: f64,
    untrained: f64,
    random_init: f64,
    mismatched: f64,
}

fn run_seed(root: &Path, seed: u64) -> Result<SeedRun> {
    let mut cfg = RunConfig::default();
    cfg.seed = seed;
    cfg.out = root.join(format!("seed{seed}"));
    gen_data(&cfg)?;
    let start = Instant::now();
    train_align(&cfg)?;
    let m2d = train_stage::<f32>(&cfg, DenoiserKind::M2d, false)?;
    let ssr = train_stage::<f32>(&cfg, DenoiserKind::Ssr, false)?;
    let train_s = start.elapsed().as_secs_f64();
    eprintln!(
        "  seed {seed}: trained in {train_s:.0} s (m2d loss {:.3} -> {:.3}, ssr loss {:.3} -> {:.3})",
        m2d.first.as_ref().map_or(f64::NAN, |l| l.total),
        m2d.last.as_ref().map_or(f64::NAN, |l| l.total),
        ssr.first.as_ref().map_or(f64::NAN, |l| l.total),
        ssr.last.as_ref().map_or(f64::NAN, |l| l.total),
    );

    let skel = cfg.skeleton()?;
    let items = eval_items(&cfg, &Dataset::load(cfg.heldout_dir())?)?;
    let beats: Vec<&BeatGrid> = items.iter().map(|i| &i.beats).collect();
    let reference = cfg.out.join("reference");
    let trained_model = CascadeModel::<f32>::load(&cfg)?;
    let generated = generate_eval_set(&trained_model, &items, &cfg.out.join("samples"), &reference)?;
    let trained = mean_bas(&generated, &beats, &skel)?;
    let mut rotated = beats.clone();
    rotated.rotate_left(1);
    let mismatched = mean_bas(&generated, &rotated, &skel)?;

    let norm = trained_model.norm.clone();
    let untrained_model = CascadeModel::<f32>::new(
        &cfg,
        load_alignment(&cfg)?,
        untrained_stage(&cfg, DenoiserKind::M2d)?,
        untrained_stage(&cfg, DenoiserKind::Ssr)?,
        norm.clone(),
    )?;
    let base = generate_eval_set(&untrained_model, &items, &cfg.out.join("untrained"), &reference)?;
    let untrained = mean_bas(&base, &beats, &skel)?;

    let fresh = |kind: DenoiserKind| -> Result<Denoiser<f32>> {
        let mut init = SplitMix64::new(derive_seed(seed, &format!("{kind}-init")));
        Denoiser::new(cfg.denoiser_config(kind)?, &mut init)
    };
    let random_model = CascadeModel::<f32>::new(
        &cfg,
        load_alignment(&cfg)?,
        fresh(DenoiserKind::M2d)?,
        fresh(DenoiserKind::Ssr)?,
        norm,
    )?;
    let random = generate_eval_set(&random_model, &items, &cfg.out.join("random-init"), &reference)?;
    let random_init = mean_bas(&random, &beats, &skel)?;
    eprintln!(
        "  seed {seed}: BAS trained {trained:.4}, untrained {untrained:.4}, random-init {random_init:.4}, mismatched music {mismatched:.4}"
    );
    Ok(SeedRun {
        cfg,
        items,
        train_s,
        trained,
        untrained,
        random_init,
        mismatched,
    })
}

fn learning_signal(runs: &[SeedRun]) -> (Outcome, Vec<String>) {
    let total: f64 = runs.iter().map(|r| r.train_s).sum();
    let mut pass = total <= TRAIN_BUDGET_S;
    let mut parts = Vec::new();
    let mut info = Vec::new();
    for (seed, r) in SEEDS.iter().zip(runs) {
        let ok = r.trained > 0.0 && r.trained >= 1.5 * r.untrained;
        pass &= ok;
        parts.push(format!(
            "seed {seed}: {:.3} vs untrained {:.3} ({:.0} s)",
            r.trained, r.untrained, r.train_s
        ));
        info.push(format!(
            "seed {seed}: trained/random-init {:.3} ({:.3} vs {:.3}), matched/mismatched music {:.3} ({:.3} vs {:.3})",
            r.trained / r.random_init,
            r.trained,
            r.random_init,
            r.trained / r.mismatched,
            r.trained,
            r.mismatched
        ));
    }
    parts.push(format!("training {total:.0} s of {TRAIN_BUDGET_S:.0} s"));
    (outcome(pass, parts.join(", ")), info)
}

fn augmentation_sweep_check(run: &SeedRun) -> Result<Outcome> {
    let mut rng = SplitMix64::new(808);
    let s = NoiseSchedule::<f64>::build(run.cfg.diffusion_steps, run.cfg.schedule)?;
    let x: Tensor<f64> = Tensor::randn([run.cfg.high_frames(), 57], 1.0, &mut rng);
    let identity = conditioning_augment(&x, 0, &s, &mut rng)? == x && run.cfg.pct_step(0) == 0;

    let start = Instant::now();
    let cascade = CascadeModel::<f32>::load(&run.cfg)?;
    let rows = augmentation_sweep(&cascade, &run.items, &SWEEP_PCTS)?;
    let secs = start.elapsed().as_secs_f64();
    write_sweep_csv(&rows, &run.cfg.out.join("sweep.csv"))?;
    eprint!("{}", sweep_table(&rows));
    let shaped = rows.iter().map(|r| r.aug_pct).eq(SWEEP_PCTS)
        && rows.iter().all(|r| [r.fid_k, r.fid_g, r.div_k, r.div_g, r.bas].iter().all(|v| v.is_finite()));
    let best = rows
        .iter()
        .min_by(|a, b| a.fid_k.total_cmp(&b.fid_k))
        .map_or(0, |r| r.aug_pct);
    Ok(outcome(
        identity && shaped && secs < SWEEP_BUDGET_S,
        format!(
            "s=0 identity: {identity}, {} levels on {} held-out items in {secs:.0} s, lowest FID_k at {best}%",
            rows.len(),
            run.items.len()
        ),
    ))
}

fn alignment_retrieval(run: &SeedRun) -> Result<Outcome> {
    let cfg = &run.cfg;
    let skel = cfg.skeleton()?;
    let before = AlignmentModel::<f64>::new(
        skel.frame_width(),
        derive_seed(cfg.seed, "align-encoders"),
        derive_seed(cfg.seed, "align-adapter"),
    )?;
    let after = load_alignment::<f64>(cfg)?;
    let frozen = before.music == after.music && before.motion == after.motion;
    let held = alignment_pairs(&skel, 64, derive_seed(cfg.seed, "align-heldout"))?;
    let r0 = before.recall_at_1(&held)?;
    let r1 = after.recall_at_1(&held)?;
    Ok(outcome(
        frozen && r1 >= 10.0 / 64.0,
        format!(
            "held-out recall@1 {:.0}/64 (untrained adapter {:.0}/64, target 10/64), encoders bit-identical: {frozen}",
            r1 * 64.0,
            r0 * 64.0
        ),
    ))
}

fn infonce_sanity() -> Result<Outcome> {
    let mut worst = 0.0f64;
    for n in [2usize, 8, 64] {
        let ones = Tensor::<f64>::full([n, 512], 1.0);
        for sym in [false, true] {
            worst = worst.max((infonce_loss(&ones, &ones, 0.07, sym)? - (n as f64).ln()).abs());
        }
    }
    Ok(outcome(worst < 1e-9, format!("max |loss - ln N| {worst:.1e} for N in 2, 8, 64")))
}

fn loss_selectivity() -> Result<Outcome> {
    let fps = 15.0;
    let skel = SkeletonSpec::smpl24();
    let gt = random_pose(&skel, 6, &mut SplitMix64::new(1212));
    let w = skel.frame_width();
    let head = 15;
    let key = skel.key_joints();
    let mut data = gt.data().to_vec();
    for i in 0..6 {
        let r = matrix_to_rot6d(&axis_angle([0.2, 1.0, 0.0], 0.3 + 0.1 * i as f64))?;
        data[i * w + head * 6..i * w + head * 6 + 6].copy_from_slice(&r);
    }
    let moved_head = Tensor::new(gt.shape().to_vec(), data)?;
    let head_pos = loss_pos_key(&moved_head, &gt, &skel, fps)?;
    let head_rot = loss_rot_key(&moved_head, &gt, &skel, fps)?;

    // Scaling the first 6D column and shearing the second along it changes the
    // root channels without changing the decoded rotation.
    let mut data = gt.data().to_vec();
    for i in 0..6 {
        let o = i * w;
        let a1: Vec<f64> = data[o..o + 3].to_vec();
        for c in 0..3 {
            data[o + 3 + c] += 0.4 * a1[c];
            data[o + c] *= 1.5;
        }
    }
    let root_channels = Tensor::new(gt.shape().to_vec(), data)?;
    let rc_pos = loss_pos_key(&root_channels, &gt, &skel, fps)?;
    let rc_rot = loss_rot_key(&root_channels, &gt, &skel, fps)?;

    let pass = !key.contains(&head) && head_pos == 0.0 && head_rot == 0.0 && rc_rot > 0.0 && rc_pos < 1e-20;
    Ok(outcome(
        pass,
        format!(
            "head joint: pos {head_pos:.1e} rot {head_rot:.1e}; root 6D channels: pos {rc_pos:.1e} rot {rc_rot:.3}"
        ),
    ))
}

fn root_rotation_note() -> Result<String> {
    let skel = SkeletonSpec::smpl24();
    let gt = random_pose(&skel, 6, &mut SplitMix64::new(1213));
    let w = skel.frame_width();
    let mut data = gt.data().to_vec();
    for i in 0..6 {
        data[i * w..i * w + 6].copy_from_slice(&matrix_to_rot6d(&axis_angle([0.0, 1.0, 0.0], 0.2))?);
    }
    let turned = Tensor::new(gt.shape().to_vec(), data)?;
    Ok(format!(
        "a genuine root turn moves the key joints too: pos {:.3}, rot {:.3}",
        loss_pos_key(&turned, &gt, &skel, 15.0)?,
        loss_rot_key(&turned, &gt, &skel, 15.0)?
    ))
}

type Checked = std::result::Result<Outcome, String>;

fn record(results: &mut Vec<(usize, &'static str, Outcome)>, id: usize, name: &'static str, start: Instant, r: Checked) {
    let mut o = r.unwrap_or_else(|e| outcome(false, format!("error: {e}")));
    o.detail = format!("{} ({:.1} s)", o.detail, start.elapsed().as_secs_f64());
    eprintln!("[{}] criterion {id} done", if o.pass { "pass" } else { "FAIL" });
    results.push((id, name, o));
}

fn main() {
    let root = tempfile::tempdir().expect("temp dir");
    let mut results = Vec::new();
    let mut notes = Vec::new();

    macro_rules! check {
        ($id:expr, $name:expr, $body:expr) => {{
            let start = Instant::now();
            record(&mut results, $id, $name, start, $body.map_err(|e| e.to_string()));
        }};
    }

    check!(1, "gradient integrity", gradient_integrity());
    check!(2, "forward-process law", forward_process_law());
    check!(3, "CFG identity", cfg_identity());
    check!(4, "dynamic weight", dynamic_weight_ends());
    check!(5, "BAS correctness", bas_correctness());

    let mut probe = RunConfig::default();
    probe.out = root.path().join("probe");
    let probe_ok = gen_data(&probe).map(|_| ()).map_err(|e| e.to_string());
    check!(6, "FID correctness", probe_ok.clone().and_then(|_| fid_correctness(&probe).map_err(|e| e.to_string())));
    check!(7, "cascade oracle", probe_ok.and_then(|_| cascade_oracle(&probe).map_err(|e| e.to_string())));

    let start = Instant::now();
    let mut runs = Vec::new();
    let mut run_err = None;
    for seed in SEEDS {
        eprintln!("training seed {seed}");
        match run_seed(root.path(), seed) {
            Ok(r) => runs.push(r),
            Err(e) => {
                run_err = Some(format!("seed {seed}: {e}"));
                break;
            }
        }
    }
    let learning: Checked = match &run_err {
        Some(e) => Err(e.clone()),
        None => {
            let (o, info) = learning_signal(&runs);
            notes.extend(info);
            Ok(o)
        }
    };
    let learning_secs = start;
    let first = runs.first();
    check!(
        8,
        "conditioning augmentation sweep",
        first.ok_or_else(|| missing_run(&run_err)).and_then(|r| augmentation_sweep_check(r).map_err(|e| e.to_string()))
    );
    record(&mut results, 9, "end-to-end learning signal", learning_secs, learning);
    check!(
        10,
        "alignment retrieval",
        first.ok_or_else(|| missing_run(&run_err)).and_then(|r| alignment_retrieval(r).map_err(|e| e.to_string()))
    );
    check!(11, "InfoNCE sanity", infonce_sanity());
    check!(12, "loss selectivity", loss_selectivity());
    if let Ok(n) = root_rotation_note() {
        notes.push(n);
    }

    results.sort_by_key(|r| r.0);
    println!();
    for (id, name, o) in &results {
        println!("{} {id:>2}. {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    for n in &notes {
        println!("info: {n}");
    }
    let failed = results.iter().filter(|r| !r.2.pass).count();
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

fn missing_run(err: &Option<String>) -> String {
    err.clone().unwrap_or_else(|| "no training run available".into())
}
