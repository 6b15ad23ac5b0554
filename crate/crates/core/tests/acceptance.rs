//! Acceptance suite. Each test prints one `PASS`/`FAIL` line for its
//! criterion straight to stderr (bypassing capture) and then asserts.
//! Tests share one lock so wall-clock budgets are measured without
//! contention.

mod common;

use std::io::Write;
use std::path::Path;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use bimg_core::asyc::{stack_sides, Asyc, AsycConfig};
use bimg_core::asyd::{disentangle_pair, Decoder, DecoderConfig};
use bimg_core::evalkit::{auc, auc_exact, evaluate_pairs, iou_exact, mean_tiou, threshold_sweep_exact, EvalOptions, TIOU_THRESHOLDS};
use bimg_core::evalkit::{dice_exact, ior_exact, mean_tior, TIOR_THRESHOLDS};
use bimg_core::imgio::Split;
use bimg_core::selfadv::{
    copy_discriminator, fit, load_checkpoint, load_split, phase1, prepare_batch, train_step, Batch, Models, Sample, StepOptions, TrainState,
};
use bimg_core::synthlab::{
    generate_phantom, procedural_tumor_set, synthesize_asymmetric, write_phantom_dataset, PhantomConfig, SidePolicy, SplitFractions, SynthConfig,
};
use bimg_core::{BilateralPair, BinaryMask, GrayImage, Laterality, Plane, RunConfig, View};
use bimg_tensor::{Bound, ParameterStore, Scalar, Tensor};
use num_rational::Ratio;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

static LOCK: Mutex<()> = Mutex::new(());

fn serial() -> std::sync::MutexGuard<'static, ()> {
    LOCK.lock().unwrap_or_else(|e| e.into_inner())
}

/// Prints the verdict line and returns whether every check passed.
fn verdict(id: u32, title: &str, checks: &[(String, bool)], elapsed: Duration) -> bool {
    let ok = checks.iter().all(|c| c.1);
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "acceptance criterion {id} ({title}): {} in {:.1}s", if ok { "PASS" } else { "FAIL" }, elapsed.as_secs_f64());
    for (what, pass) in checks {
        let _ = writeln!(err, "    [{}] {what}", if *pass { "ok" } else { "FAILED" });
    }
    ok
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// 32x16 model used where a quick full pipeline is enough.
fn small_config() -> RunConfig {
    RunConfig {
        image_h: 32,
        image_w: 16,
        train_dataset: "phantom".into(),
        tumor_set: "procedural".into(),
        procedural_tumors: 8,
        enc_stem_width: 4,
        enc_stem_kernel: 3,
        enc_stem_stride: 1,
        enc_widths: [8, 8, 16, 16],
        enc_blocks: [1, 1, 1, 1],
        groups: 2,
        num_blocks: 1,
        num_heads: 2,
        ffn_hidden: 32,
        dec_widths: [16, 8, 8, 8, 4, 4],
        lr: 1e-3,
        ..RunConfig::default()
    }
}

fn small_phantoms() -> PhantomConfig {
    PhantomConfig { height: 32, width: 16, lesion_min: 4, lesion_max: 6, ..PhantomConfig::default() }
}

fn models(cfg: &RunConfig) -> Models {
    let asyc = Asyc::new(cfg.asyc_config()).unwrap();
    let decoder = Decoder::new(cfg.decoder_config(), &asyc.config.encoder).unwrap();
    Models { asyc, decoder }
}

fn phantom<T: Scalar>(seed: u64, cfg: &PhantomConfig) -> BilateralPair<T> {
    generate_phantom(seed, format!("ph{seed}"), if seed % 2 == 0 { View::Cc } else { View::Mlo }, cfg).unwrap()
}

fn max_plane_diff<T: Scalar>(a: &Plane<T>, b: &Plane<T>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x.as_f64() - y.as_f64()).abs()).fold(0.0, f64::max)
}

/// Batch of symmetric phantoms with synthesized tumors in every second pair.
fn mixed_batch<T: Scalar>(seeds: std::ops::Range<u64>) -> Batch<T> {
    let pc = PhantomConfig { lesion_prob_right: 0.0, lesion_prob_left: 0.0, ..small_phantoms() };
    let set = procedural_tumor_set::<T>(99, 6, 4, 6).unwrap();
    let samples: Vec<Sample<T>> = seeds
        .map(|s| {
            let pair = phantom::<T>(s, &pc);
            if s % 2 == 0 {
                Sample::synthetic(synthesize_asymmetric(&pair, &set, s, SidePolicy::Random, &SynthConfig::default()).unwrap())
            } else {
                Sample::real(pair)
            }
        })
        .collect();
    Batch::new(&samples).unwrap()
}

#[test]
fn criterion_1_invariant_suite() {
    let _g = serial();
    let start = Instant::now();
    let mut checks = Vec::new();
    let cfg = small_config();
    let m = models(&cfg);
    let state = TrainState::<f32>::init(&m, &mut rng(1)).unwrap();

    // Swap equivariance of classifier and decoder outputs, 32-bit.
    let (mut fwd, mut dis) = (0.0f64, 0.0f64);
    for s in 0..4 {
        let pair = phantom::<f32>(100 + s, &small_phantoms());
        let swapped = pair.swapped();
        let a = m.asyc.forward(&state.asyc, &pair).unwrap();
        let b = m.asyc.forward(&state.asyc, &swapped).unwrap();
        fwd = fwd
            .max((a.p_r - b.p_l).abs() as f64)
            .max((a.p_l - b.p_r).abs() as f64)
            .max((a.p_asy - b.p_asy).abs() as f64)
            .max(max_plane_diff(&a.cam_r, &b.cam_l))
            .max(max_plane_diff(&a.cam_l, &b.cam_r));
        let da = disentangle_pair(&m.asyc, &state.asyc, &m.decoder, &state.decoder, &pair).unwrap();
        let db = disentangle_pair(&m.asyc, &state.asyc, &m.decoder, &state.decoder, &swapped).unwrap();
        dis = dis
            .max(max_plane_diff(&da.right.x_n.pixels, &db.left.x_n.pixels))
            .max(max_plane_diff(&da.left.x_n.pixels, &db.right.x_n.pixels))
            .max(max_plane_diff(&da.right.x_ab, &db.left.x_ab))
            .max(max_plane_diff(&da.left.x_ab, &db.right.x_ab));
    }
    checks.push((format!("forward swap equivariance, max deviation {fwd:.2e} <= 1e-6"), fwd <= 1e-6));
    checks.push((format!("disentangle swap equivariance, max deviation {dis:.2e} <= 1e-6"), dis <= 1e-6));

    // Attention rows of every block sum to one.
    let pairs: Vec<BilateralPair<f32>> = (0..3).map(|s| phantom(200 + s, &small_phantoms())).collect();
    let refs: Vec<&BilateralPair<f32>> = pairs.iter().collect();
    let x = stack_sides(&refs).unwrap();
    let mut row_dev = 0.0f64;
    for (sa, ca) in m.asyc.attention_maps(&state.asyc, &x).unwrap() {
        let l = *sa.shape().last().unwrap();
        for row in sa.data().chunks(l).chain(ca.data().chunks(l)) {
            row_dev = row_dev.max((row.iter().map(|&p| p as f64).sum::<f64>() - 1.0).abs());
        }
    }
    checks.push((format!("attention row sums, max deviation {row_dev:.2e} <= 1e-6"), row_dev <= 1e-6));

    // Training-step invariants in 64-bit on batches mixing synthesized pairs.
    let mut s64 = TrainState::<f64>::init(&m, &mut rng(2)).unwrap();
    let opts = StepOptions { lr: 1e-3, ..StepOptions::default() };
    let (mut disc_equal, mut decomp, mut moved) = (true, 0.0f64, true);
    for step in 0..4 {
        let batch = mixed_batch::<f64>(step * 4..step * 4 + 4);
        let before = s64.asyc.deep_clone();
        let r = train_step(&m, &mut s64, &batch, &opts).unwrap();
        disc_equal &= s64.disc.max_abs_diff(&before) == Some(0.0);
        moved &= s64.asyc.max_abs_diff(&before).unwrap() > 0.0;
        decomp = decomp.max((r.total - r.weighted_sum(&opts.weights)).abs());
        if r.syn == 0.0 {
            decomp = f64::INFINITY;
        }
    }
    checks.push(("frozen discriminator equals the pre-update classifier after every copy (exact)".into(), disc_equal && moved));
    checks.push((format!("loss decomposition, max |L - sum lambda_i L_i| {decomp:.2e} <= 1e-6"), decomp <= 1e-6));

    // The discriminator copy receives no gradient.
    let batch = mixed_batch::<f64>(20..24);
    let disc = copy_discriminator(&s64.asyc);
    let (ga_len, gg_len, frozen_len) = {
        let mut pa = Bound::trainable(&s64.asyc);
        let mut pg = Bound::trainable(&s64.decoder);
        let ph = phase1(&m, &mut pa, &mut pg, &disc, &batch, &opts, None).unwrap();
        let grads = ph.tape.backward(ph.total).unwrap();
        let frozen = Bound::frozen(&disc);
        (pa.grads(&grads).len(), pg.grads(&grads).len(), frozen.grads(&grads).len())
    };
    checks.push((
        format!("no gradient reaches the discriminator ({frozen_len} entries; classifier {ga_len}, decoder {gg_len})"),
        frozen_len == 0 && ga_len > 0 && gg_len > 0,
    ));

    // Phase separation: refinement touches only the classifier.
    let base = s64.clone();
    let (mut with, mut without) = (base.clone(), base.clone());
    train_step(&m, &mut with, &batch, &opts).unwrap();
    train_step(&m, &mut without, &batch, &StepOptions { refine: false, ..opts }).unwrap();
    let g_same = with.decoder.max_abs_diff(&without.decoder) == Some(0.0);
    let a_diff = with.asyc.max_abs_diff(&without.asyc).unwrap() > 0.0;
    let p1_both = without.asyc.max_abs_diff(&base.asyc).unwrap() > 0.0 && without.decoder.max_abs_diff(&base.decoder).unwrap() > 0.0;
    checks.push(("phase 2 leaves the decoder unchanged (exact); phase 1 moves both".into(), g_same && a_diff && p1_both));

    // Synthesis gating.
    let mut gated = RunConfig { synth_fraction: 0.0, ..small_config() };
    gated.seed = 4;
    let pc = PhantomConfig { lesion_prob_right: 0.0, lesion_prob_left: 0.0, ..small_phantoms() };
    let pairs: Vec<BilateralPair<f64>> = (0..4).map(|s| phantom(300 + s, &pc)).collect();
    let refs: Vec<&BilateralPair<f64>> = pairs.iter().collect();
    let mut s_g = base.clone();
    let mut syn_zero = true;
    for step in 0..3 {
        let samples = prepare_batch(&refs, &gated, None, step).unwrap();
        let r = train_step(&m, &mut s_g, &Batch::new(&samples).unwrap(), &opts).unwrap();
        syn_zero &= r.syn == 0.0;
    }
    checks.push(("synth_fraction = 0 gives L_syn = 0 at every step".into(), syn_zero));

    let elapsed = start.elapsed();
    checks.push((format!("runtime {:.1}s < 120s", elapsed.as_secs_f64()), elapsed < Duration::from_secs(120)));
    assert!(verdict(1, "invariant suite", &checks, elapsed));
}

#[test]
fn criterion_2_gradient_audit() {
    let _g = serial();
    let start = Instant::now();
    let asyc = Asyc::new(AsycConfig::tiny()).unwrap();
    let decoder = Decoder::new(DecoderConfig::tiny(), &asyc.config.encoder).unwrap();
    let m = Models { asyc, decoder };
    let mut r = rng(7);
    let state = TrainState::<f64>::init(&m, &mut r).unwrap();
    let mut pa0 = state.asyc.deep_clone();
    let mut pg0 = state.decoder.deep_clone();
    // Shift the normal-image logits so |x_n - x| stays clear of its kink.
    pg0.make_mut("dec.out.b").unwrap().data_mut()[0] = 0.5;
    // Make the abnormality head nontrivial.
    for v in pa0.make_mut("head.ab.b").unwrap().data_mut() {
        *v = 0.3;
    }

    let img = |r: &mut ChaCha8Rng, lat| GrayImage::new(Plane::from_fn(16, 8, |_, _| r.gen_range(0.1..0.9)), lat, View::Cc).unwrap();
    let mut samples = Vec::new();
    for (i, (y_r, y_l)) in [(true, false), (false, false)].into_iter().enumerate() {
        let pair = BilateralPair::new(format!("g{i}"), img(&mut r, Laterality::Right), img(&mut r, Laterality::Left), y_r, y_l).unwrap();
        let mut s = Sample::real(pair.clone());
        if i == 0 {
            // Side 0 is treated as synthesized from a different clean image.
            let clean = BilateralPair::new("clean", img(&mut r, Laterality::Right), pair.left.clone(), false, false).unwrap();
            s = Sample { pair, real: Some(clean), synthesized: [true, false] };
        }
        samples.push(s);
    }
    let batch = Batch::new(&samples).unwrap();
    let opts = StepOptions { detach_decoder_input: false, ..StepOptions::default() };
    let disc = copy_discriminator(&pa0);

    let (cam, ga, gg) = {
        let cam = {
            let (mut a, mut g) = (Bound::frozen(&pa0), Bound::frozen(&pg0));
            phase1(&m, &mut a, &mut g, &disc, &batch, &opts, None).unwrap().cam
        };
        let mut pa = Bound::trainable(&pa0);
        let mut pg = Bound::trainable(&pg0);
        let ph = phase1(&m, &mut pa, &mut pg, &disc, &batch, &opts, Some(&cam)).unwrap();
        let grads = ph.tape.backward(ph.total).unwrap();
        (cam, pa.grads(&grads), pg.grads(&grads))
    };
    let loss = |pa: &ParameterStore<f64>, pg: &ParameterStore<f64>| -> f64 {
        let mut a = Bound::frozen(pa);
        let mut g = Bound::frozen(pg);
        let ph = phase1(&m, &mut a, &mut g, &disc, &batch, &opts, Some(&cam)).unwrap();
        ph.tape.value(ph.total).item()
    };

    let mut entries: Vec<(bool, String, usize)> = Vec::new();
    for (is_dec, store) in [(false, &pa0), (true, &pg0)] {
        for name in store.names() {
            for i in 0..store.get(name).unwrap().numel() {
                entries.push((is_dec, name.to_string(), i));
            }
        }
    }
    let l0 = loss(&pa0, &pg0);
    let eps = 1e-6;
    let mut pick = rng(11);
    let mut seen = Vec::new();
    let (mut audited, mut straddled, mut fails) = (0, 0, 0);
    let (mut worst, mut worst_at) = (0.0f64, String::new());
    while audited < 100 {
        let k = pick.gen_range(0..entries.len());
        if seen.contains(&k) {
            continue;
        }
        seen.push(k);
        let (is_dec, name, i) = &entries[k];
        let analytic = if *is_dec { gg.get(name) } else { ga.get(name) }.map_or(0.0, |t: &Tensor<f64>| t.data()[*i]);
        let eval = |delta: f64| {
            let (mut a, mut g) = (pa0.deep_clone(), pg0.deep_clone());
            let target = if *is_dec { &mut g } else { &mut a };
            target.make_mut(name).unwrap().data_mut()[*i] += delta;
            loss(&a, &g)
        };
        let (up, down) = (eval(eps), eval(-eps));
        // One-sided slopes that disagree mean a ReLU or L1 kink lies inside
        // [-eps, eps], where no finite difference estimates the derivative.
        let (fwd, bwd) = ((up - l0) / eps, (l0 - down) / eps);
        if (fwd - bwd).abs() > 1e-4 * fwd.abs().max(bwd.abs()).max(1e-6) {
            straddled += 1;
            continue;
        }
        audited += 1;
        let fd = (up - down) / (2.0 * eps);
        let rel = (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1e-6);
        if rel >= 1e-3 {
            fails += 1;
        }
        if rel > worst {
            worst = rel;
            worst_at = format!("{name}[{i}] analytic {analytic:.6e} fd {fd:.6e}");
        }
    }
    let elapsed = start.elapsed();
    let checks = vec![
        (
            format!(
                "{audited} sampled parameters of {} (eps {eps:e}), {fails} with relative error >= 1e-3; worst {worst:.2e} at {worst_at}",
                entries.len()
            ),
            fails == 0,
        ),
        (format!("{straddled} further draws redrawn because a kink lies within eps (<= 20)"), straddled <= 20),
        (format!("runtime {:.1}s < 300s", elapsed.as_secs_f64()), elapsed < Duration::from_secs(300)),
    ];
    assert!(verdict(2, "gradient audit of the full phase-1 loss", &checks, elapsed));
}

#[test]
fn criterion_3_metric_oracles() {
    let _g = serial();
    let start = Instant::now();
    let mut r = common::rng(2718);
    let (mut auc_ok, mut iou_ok, mut ior_ok, mut dice_ok, mut tiou_ok, mut tior_ok) = (0, 0, 0, 0, 0, 0);
    for _ in 0..100 {
        let (s, l) = common::random_scores(&mut r);
        auc_ok += (auc_exact(&s, &l).unwrap() == common::auc_oracle(&s, &l)) as usize;
        let (a, b) = common::random_masks(&mut r);
        iou_ok += (iou_exact(&a, &b).unwrap() == common::iou_oracle(&a, &b)) as usize;
        ior_ok += (ior_exact(&a, &b).ok() == common::ior_oracle(&a, &b)) as usize;
        dice_ok += (dice_exact(&a, &b).unwrap() == common::dice_oracle(&a, &b)) as usize;
        let v = common::random_overlaps(&mut r);
        tiou_ok += (mean_tiou(&v).unwrap() == common::as_f64(common::sweep_oracle(&v, &TIOU_THRESHOLDS))) as usize;
        tior_ok += (mean_tior(&v).unwrap() == common::as_f64(common::sweep_oracle(&v, &TIOR_THRESHOLDS))) as usize;
    }
    let mut checks: Vec<(String, bool)> = [("auc", auc_ok), ("iou", iou_ok), ("ior", ior_ok), ("dice", dice_ok), ("mean_tiou", tiou_ok), ("mean_tior", tior_ok)]
        .iter()
        .map(|&(n, k)| (format!("{n}: {k}/100 random instances equal the brute-force oracle"), k == 100))
        .collect();

    let auc_ex = auc(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true]).unwrap();
    checks.push((format!("AUC worked example = {auc_ex} (0.75)"), auc_ex == 0.75));
    let pred = BinaryMask::from_fn(4, 4, |r, c| r < 2 && c < 2);
    let refm = BinaryMask::from_fn(4, 4, |r, c| r < 2 && (1..3).contains(&c));
    let iou_ex = iou_exact(&pred, &refm).unwrap();
    checks.push((format!("IoU worked example = {iou_ex} (1/3)"), iou_ex == Ratio::new(1, 3)));
    let tiou_ex = threshold_sweep_exact(&[0.15, 0.35, 0.65], &TIOU_THRESHOLDS).unwrap();
    let tiou_f = mean_tiou(&[0.15, 0.35, 0.65]).unwrap();
    checks.push((format!("mean TIoU worked example = {tiou_ex} = {tiou_f:.4} (0.4762)"), tiou_ex == Ratio::new(10, 21) && (tiou_f - 0.4762).abs() < 5e-5));
    let elapsed = start.elapsed();
    assert!(verdict(3, "metric oracle equivalence", &checks, elapsed));
}

#[test]
fn criterion_4_overfit_smoke_test() {
    let _g = serial();
    let start = Instant::now();
    let cfg = small_config();
    let m = models(&cfg);
    let mut state = TrainState::<f32>::init(&m, &mut rng(3)).unwrap();
    let samples: Vec<Sample<f32>> = (0..8).map(|s| Sample::real(phantom(400 + s, &small_phantoms()))).collect();
    let labels: Vec<(bool, bool)> = samples.iter().map(|s| (s.pair.y_r, s.pair.y_l)).collect();
    let batch = Batch::new(&samples).unwrap();
    let opts = StepOptions { lr: cfg.lr, ..StepOptions::default() };
    let mut last = f64::INFINITY;
    for _ in 0..500 {
        last = train_step(&m, &mut state, &batch, &opts).unwrap().diag;
    }
    let after = {
        let mut pa = Bound::frozen(&state.asyc);
        let mut pg = Bound::frozen(&state.decoder);
        let ph = phase1(&m, &mut pa, &mut pg, &state.disc, &batch, &opts, None).unwrap();
        ph.tape.value(ph.diag).item() as f64
    };
    let elapsed = start.elapsed();
    let checks = vec![
        (format!("labels of the fixed batch (right, left): {labels:?}"), labels.iter().any(|l| l.0 || l.1) && labels.iter().any(|l| !l.0 && !l.1)),
        (format!("L_diag at step 500 = {last:.4}, after the final update = {after:.4}, both < 0.05"), last < 0.05 && after < 0.05),
        (format!("runtime {:.1}s < 300s", elapsed.as_secs_f64()), elapsed < Duration::from_secs(300)),
    ];
    assert!(verdict(4, "overfit smoke test", &checks, elapsed));
}

/// Per-image scores from `per_image.csv`, in file order.
fn dumped_scores(dir: &Path) -> (Vec<f64>, Vec<String>) {
    let mut rd = csv::Reader::from_path(dir.join("per_image.csv")).unwrap();
    let h = rd.headers().unwrap().clone();
    let col = |n: &str| h.iter().position(|x| x == n).unwrap();
    let (si, pi, side) = (col("score"), col("pair_id"), col("side"));
    let mut scores = Vec::new();
    let mut keys = Vec::new();
    for rec in rd.records() {
        let rec = rec.unwrap();
        scores.push(rec[si].parse().unwrap());
        keys.push(format!("{}:{}", &rec[pi], &rec[side]));
    }
    (scores, keys)
}

#[test]
fn criterion_5_toy_end_to_end() {
    let _g = serial();
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("phantoms");
    let ds = write_phantom_dataset(&data, 400, 5, &PhantomConfig::default(), SplitFractions::default()).unwrap();

    let mut cfg = RunConfig::toy();
    cfg.train_manifest = Some(ds.train.clone());
    cfg.val_manifest = Some(ds.val.clone());
    cfg.test_manifest = Some(ds.test.clone());
    let summary = fit::<f32>(&cfg, &dir.path().join("full")).unwrap();
    let trained = Instant::now();

    let test: Vec<BilateralPair<f32>> = load_split(&ds.test, Split::Test, cfg.image_h, cfg.image_w).unwrap();
    let opts = EvalOptions::from_config(&cfg);
    let ck = load_checkpoint::<f32>(&summary.best_checkpoint).unwrap();
    let m = models(&cfg);
    let report = evaluate_pairs(&m.asyc, &ck.state.asyc, &test, &opts, None).unwrap();
    let eval_dir = dir.path().join("eval");
    report.write_csv(&eval_dir).unwrap();

    // Only the transformer blocks are dropped; encoder, heads, decoder,
    // losses and synthesis stay as in the full run.
    let ablation = RunConfig { num_blocks: 0, ..cfg.clone() };
    let ab_summary = fit::<f32>(&ablation, &dir.path().join("ablation")).unwrap();
    let ab_ck = load_checkpoint::<f32>(&ab_summary.best_checkpoint).unwrap();
    let ab_asyc = Asyc::new(ablation.asyc_config()).unwrap();
    let ab_report = evaluate_pairs(&ab_asyc, &ab_ck.state.asyc, &test, &opts, None).unwrap();

    // Synthetic abnormal test pairs built from the symmetric test pairs.
    let set = procedural_tumor_set::<f32>(77, 32, cfg.image_h / 10, cfg.image_h / 6).unwrap();
    let (mut improved, mut total, mut exhausted) = (0usize, 0usize, 0usize);
    let mut x_ab_means = Vec::new();
    for (i, pair) in test.iter().enumerate().filter(|(_, p)| !p.y_asy) {
        let d = disentangle_pair(&m.asyc, &ck.state.asyc, &m.decoder, &ck.state.decoder, pair).unwrap();
        x_ab_means.push(((d.right.x_ab.mean() + d.left.x_ab.mean()) / 2.0) as f64);
        let rec = match synthesize_asymmetric(pair, &set, 1000 + i as u64, SidePolicy::Random, &SynthConfig::default()) {
            Ok(r) => r,
            Err(_) => {
                exhausted += 1;
                continue;
            }
        };
        let d = disentangle_pair(&m.asyc, &ck.state.asyc, &m.decoder, &ck.state.decoder, &rec.fake).unwrap();
        let (mut e_xn, mut e_in) = (0.0f64, 0.0f64);
        for lat in [Laterality::Right, Laterality::Left] {
            if rec.synthesized(lat) {
                let gt = &rec.real.side(lat).pixels;
                e_xn += d.side(lat).x_n.pixels.l1(gt).unwrap() as f64;
                e_in += rec.fake.side(lat).pixels.l1(gt).unwrap() as f64;
            }
        }
        total += 1;
        improved += (e_xn < e_in) as usize;
    }
    let frac = improved as f64 / total.max(1) as f64;
    let x_ab_mean = x_ab_means.iter().sum::<f64>() / x_ab_means.len().max(1) as f64;

    let (scores, _) = dumped_scores(&eval_dir);
    let labels: Vec<bool> = report.images.iter().map(|r| r.label).collect();
    let recomputed = common::as_f64(common::auc_oracle(&scores, &labels));

    let get = |r: &bimg_core::evalkit::EvalReport, k: &str| r.get(k).unwrap_or(f64::NAN);
    let (auc_ab, auc_asy, tiou, ab_tiou) = (get(&report, "auc_abnormal"), get(&report, "auc_asymmetry"), get(&report, "mean_tiou"), get(&ab_report, "mean_tiou"));
    let elapsed = start.elapsed();
    let checks = vec![
        (format!("abnormality AUC {auc_ab:.4} >= 0.90"), auc_ab >= 0.90),
        (format!("asymmetry AUC {auc_asy:.4} >= 0.90"), auc_asy >= 0.90),
        (format!("mean TIoU {tiou:.4} > no-transformer ablation {ab_tiou:.4}"), tiou > ab_tiou),
        (
            format!("x_n closer to the pre-insertion image on {improved}/{total} synthetic test pairs ({:.1}%) >= 80%; {exhausted} without room", 100.0 * frac),
            total > 0 && frac >= 0.8,
        ),
        (format!("AUC from the dumped per-image CSV {recomputed:.6} equals the report"), recomputed == auc_ab),
        (format!("mean x_ab on symmetric test pairs {x_ab_mean:.4} < 0.1"), x_ab_mean < 0.1),
        (
            format!(
                "runtime {:.1}s <= 1800s (training {:.1}s, {} steps; ablation AUCs {:.4}/{:.4})",
                elapsed.as_secs_f64(),
                trained.duration_since(start).as_secs_f64(),
                summary.steps,
                get(&ab_report, "auc_abnormal"),
                get(&ab_report, "auc_asymmetry")
            ),
            elapsed <= Duration::from_secs(1800),
        ),
    ];
    assert!(verdict(5, "toy end-to-end", &checks, elapsed));
}

#[test]
fn criterion_6_synthesis_determinism_and_locality() {
    let _g = serial();
    let start = Instant::now();
    let pc = PhantomConfig { lesion_prob_right: 0.0, lesion_prob_left: 0.0, ..PhantomConfig::default() };
    let set64 = procedural_tumor_set::<f64>(5, 16, 12, 21).unwrap();
    let set32 = procedural_tumor_set::<f32>(5, 16, 12, 21).unwrap();
    let (mut same, mut distinct, mut local, mut runs) = (true, true, true, 0);
    for seed in 0..40u64 {
        let policy = [SidePolicy::Right, SidePolicy::Left, SidePolicy::Both, SidePolicy::Random][seed as usize % 4];
        let p64 = phantom::<f64>(seed, &pc);
        let p32 = phantom::<f32>(seed, &pc);
        let a = synthesize_asymmetric(&p64, &set64, seed, policy, &SynthConfig::default()).unwrap();
        let b = synthesize_asymmetric(&p64, &set64, seed, policy, &SynthConfig::default()).unwrap();
        let c = synthesize_asymmetric(&p64, &set64, seed + 1000, policy, &SynthConfig::default()).unwrap();
        let d = synthesize_asymmetric(&p32, &set32, seed, policy, &SynthConfig::default()).unwrap();
        let e = synthesize_asymmetric(&p32, &set32, seed, policy, &SynthConfig::default()).unwrap();
        same &= a.to_bytes() == b.to_bytes() && d.to_bytes() == e.to_bytes();
        distinct &= a.to_bytes() != c.to_bytes();
        local &= outside_support_is_exact(&a) && outside_support_is_exact(&d);
        runs += 1;
    }
    let elapsed = start.elapsed();
    let checks = vec![
        (format!("byte-identical records for equal seeds over {runs} runs in 32 and 64 bit"), same),
        ("different seeds give different records".into(), distinct),
        ("fake equals real bit for bit wherever every alpha is zero".into(), local),
    ];
    assert!(verdict(6, "synthesis determinism and locality", &checks, elapsed));
}

fn outside_support_is_exact<T: Scalar>(rec: &bimg_core::synthlab::SynthesisRecord<T>) -> bool {
    [(Laterality::Right, &rec.insertions_r), (Laterality::Left, &rec.insertions_l)].iter().all(|(lat, ins)| {
        let (f, r) = (&rec.fake.side(*lat).pixels, &rec.real.side(*lat).pixels);
        (0..f.len()).all(|i| ins.iter().any(|k| k.alpha.data()[i] != T::zero()) || f.data()[i] == r.data()[i])
    })
}
