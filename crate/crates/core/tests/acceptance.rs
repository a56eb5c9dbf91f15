//! End-to-end acceptance run. Each criterion prints one PASS/FAIL line; the
//! process exits non-zero if any fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use lrsiam_core::checks::{gradcheck_suite, CHECKS};
use lrsiam_core::config::RunConfig;
use lrsiam_core::data::{decode_tensor, encode_tensor, load_checkpoint, read_tensor, write_toy_dataset, Checkpoint};
use lrsiam_core::flow::{lr_pair_flow, video_flow_stacks, FlowConfig};
use lrsiam_core::loss::{contrastive_pair_value, multi_siamese_value};
use lrsiam_core::model::{init_params, Model, ModelConfig};
use lrsiam_core::pipeline;
use lrsiam_core::trainer::{ExperimentReport, Mode};
use lrsiam_core::transform::{average_downsample, default_transform_grid};
use lrsiam_core::{Error, Tensor};

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn config() -> RunConfig {
    let p = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/acceptance.toml");
    RunConfig::load(p).expect("acceptance config loads")
}

fn rand_frames(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(0.0..1.0))
}

fn structure() -> Outcome {
    let t0 = Instant::now();
    let grid = default_transform_grid();
    ensure(grid.n() == 75, format!("grid has {} transforms", grid.n()))?;
    ensure(grid.identity_index().is_some(), "grid lacks the identity")?;

    let cfg = ModelConfig::default();
    let segments = cfg.pyramid.bounds(16).map_err(|e| e.to_string())?;
    ensure(segments.len() == 15, format!("{} pyramid segments", segments.len()))?;

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let rgb = rand_frames(&mut rng, &[16, 12, 16, 3]);
    let flow_cfg = FlowConfig {
        iterations: 5,
        ..FlowConfig::default()
    };
    let stacks = video_flow_stacks(&rgb.clone(), &flow_cfg.provider(), &flow_cfg).map_err(|e| e.to_string())?;
    ensure(stacks.shape() == [16, 12, 16, 20], format!("flow stacks {:?}", stacks.shape()))?;

    let model = Model::new(cfg, 0).map_err(|e| e.to_string())?;
    let h = model.frame_features(&rgb, Some(&stacks)).map_err(|e| e.to_string())?;
    ensure(h.shape() == [16, 512], format!("per-frame features {:?}", h.shape()))?;
    ensure(cfg.pooled_dim() == 7680, format!("pooled dim {}", cfg.pooled_dim()))?;
    let e = model.embed_features(&h).map_err(|e| e.to_string())?;
    ensure(e.shape() == [8192], format!("embedding {:?}", e.shape()))?;
    let params = init_params(&cfg, 0).map_err(|e| e.to_string())?;
    let w = params.get("embed.fc1.w").ok_or("no embed.fc1.w")?;
    ensure(w.value().shape() == [7680, 8192], format!("embed.fc1.w {:?}", w.value().shape()))?;
    Ok(format!(
        "75 transforms, 15 segments, 7680 -> 8192, h 512, stacks 16x12x20 ({:.2}s)",
        t0.elapsed().as_secs_f64()
    ))
}

fn gradients() -> Outcome {
    let t0 = Instant::now();
    let seeds: Vec<u64> = (0..20).collect();
    let results = gradcheck_suite(&seeds).map_err(|e| e.to_string())?;
    let secs = t0.elapsed().as_secs_f64();
    ensure(results.len() == CHECKS.len() * seeds.len(), "missing results")?;
    let worst = results.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    let failed: Vec<String> = results
        .iter()
        .filter(|r| !r.passed || r.max_rel_error >= 1e-3 || r.checked == 0)
        .map(|r| format!("{}@{}", r.name, r.seed))
        .collect();
    ensure(failed.is_empty(), format!("failed: {}", failed.join(", ")))?;
    ensure(secs < 120.0, format!("took {secs:.1}s"))?;
    Ok(format!(
        "{} checks x 20 seeds, worst rel err {worst:.1e}, {secs:.1}s",
        CHECKS.len()
    ))
}

fn sq_dist(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum()
}

fn loss_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst_ms: f64 = 0.0;
    let mut active = 0;
    for _ in 0..100 {
        let n = rng.gen_range(2..=5);
        let d = rng.gen_range(1..=8);
        let spread = rng.gen_range(0.05..2.0);
        let margin = rng.gen_range(0.0..2.0);
        let mut draw = || -> Vec<Vec<f32>> {
            (0..n).map(|_| (0..d).map(|_| rng.gen_range(-spread..spread)).collect()).collect()
        };
        let (b1, b2) = (draw(), draw());
        let mut expected = 0.0;
        for k in 0..n {
            for l in k + 1..n {
                expected += sq_dist(&b1[k], &b1[l]);
            }
        }
        let mut cross = 0.0;
        for a in &b1 {
            for b in &b2 {
                cross += sq_dist(a, b);
            }
        }
        let budget = (n * n) as f64 * margin * margin;
        if budget > cross {
            active += 1;
            expected += budget - cross;
        }
        let t = |v: &[Vec<f32>]| v.iter().map(|x| Tensor::from_vec(x.clone())).collect::<Vec<_>>();
        let got = multi_siamese_value(&t(&b1), &t(&b2), margin).map_err(|e| e.to_string())?;
        worst_ms = worst_ms.max((got - expected).abs());
    }
    ensure(worst_ms <= 1e-6, format!("multi-siamese off by {worst_ms:.2e}"))?;
    ensure(active > 10 && active < 90, format!("hinge active in {active}/100 instances"))?;

    let mut worst_pair: f64 = 0.0;
    for i in 0..100 {
        let d = rng.gen_range(1..=8);
        let a: Vec<f32> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f32> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let margin = rng.gen_range(0.0..3.0);
        let positive = i % 2 == 0;
        let dist = sq_dist(&a, &b).sqrt();
        let expected = if positive { dist * dist } else { (margin - dist).max(0.0).powi(2) };
        let got = contrastive_pair_value(&Tensor::from_vec(a), &Tensor::from_vec(b), positive, margin)
            .map_err(|e| e.to_string())?;
        worst_pair = worst_pair.max((got - expected).abs());
    }
    ensure(worst_pair <= 1e-7, format!("contrastive off by {worst_pair:.2e}"))?;
    Ok(format!(
        "multi-siamese max err {worst_ms:.1e} (hinge active {active}/100), contrastive max err {worst_pair:.1e}"
    ))
}

fn interior_mean(t: &Tensor, margin: usize) -> f64 {
    let (h, w) = (t.shape()[0], t.shape()[1]);
    let mut s = 0.0;
    let mut n = 0;
    for y in margin..h - margin {
        for x in margin..w - margin {
            s += t.at(&[y, x]) as f64;
            n += 1;
        }
    }
    s / n as f64
}

fn physics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst_mean: f64 = 0.0;
    for (h, w) in [(96, 128), (75, 100), (12, 16), (240, 320)] {
        let f = rand_frames(&mut rng, &[h, w, 3]);
        let d = average_downsample(&f).map_err(|e| e.to_string())?;
        ensure(d.shape() == [12, 16, 3], format!("downsample shape {:?}", d.shape()))?;
        worst_mean = worst_mean.max((d.mean() - f.mean()).abs());
    }
    ensure(worst_mean <= 1e-6, format!("downsample mean drift {worst_mean:.2e}"))?;

    let cfg = FlowConfig::default();
    let frame = rand_frames(&mut rng, &[12, 16, 3]);
    let still = Tensor::stack(&vec![frame; 4]).map_err(|e| e.to_string())?;
    let stacks = video_flow_stacks(&still, &cfg.provider(), &cfg).map_err(|e| e.to_string())?;
    ensure(stacks.data().iter().all(|&x| x == 0.0), "static video gives non-zero flow")?;

    let mut worst_err: f64 = 0.0;
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let wide = rand_frames(&mut rng, &[12, 17, 3]);
        let crop = |off: usize| Tensor::from_fn(&[12, 16, 3], |i| wide.at(&[i / 48, (i / 3) % 16 + off, i % 3]));
        // content moves one pixel to the right from the first frame to the second
        let f = lr_pair_flow(&crop(1), &crop(0), &cfg.provider(), &cfg).map_err(|e| e.to_string())?;
        let (mu, mv) = (interior_mean(&f.u, 3), interior_mean(&f.v, 3));
        worst_err = worst_err.max(((mu - 1.0).powi(2) + mv * mv).sqrt());
    }
    ensure(worst_err < 0.2, format!("1 px translation mean-flow error {:.1}%", 100.0 * worst_err))?;
    Ok(format!(
        "downsample mean drift {worst_mean:.1e}, static flow zero, 1 px error {:.1}%",
        100.0 * worst_err
    ))
}

/// Generates the toy HR set, its LR transforms and flow under `root`.
fn prepare_toy(cfg: &RunConfig, root: &Path) -> Result<PathBuf, String> {
    let hr = write_toy_dataset(&cfg.toy, &root.join("hr")).map_err(|e| e.to_string())?;
    let lr = pipeline::prepare_lr(&hr, &root.join("lr"), cfg, false).map_err(|e| e.to_string())?;
    pipeline::compute_flow(&lr, None, &cfg.flow, false).map_err(|e| e.to_string())?;
    Ok(lr)
}

fn ordering(report: &ExperimentReport, secs_per_seed: f64) -> Outcome {
    let mean = |m: Mode| report.stats(m).map(|s| s.mean).unwrap_or(f64::NAN);
    let (base, aug, ms) = (mean(Mode::Baseline), mean(Mode::Augment), mean(Mode::MultiSiamese));
    let summary = format!(
        "baseline {:.1}%, augment {:.1}%, multi-siamese {:.1}%, {secs_per_seed:.0}s per seed",
        100.0 * base,
        100.0 * aug,
        100.0 * ms
    );
    ensure(ms >= aug && aug >= base, format!("ordering violated: {summary}"))?;
    ensure(ms - base >= 0.03, format!("gap below 3 points: {summary}"))?;
    ensure(secs_per_seed < 1800.0, format!("too slow: {summary}"))?;
    Ok(summary)
}

fn invariance(report: &ExperimentReport) -> Outcome {
    let seeds: Vec<u64> = report.outcomes.iter().map(|o| o.seed).collect::<std::collections::BTreeSet<_>>().into_iter().collect();
    let mut wins = 0;
    let mut cells = Vec::new();
    for &s in &seeds {
        let find = |m: Mode| report.outcomes.iter().find(|o| o.seed == s && o.mode == m);
        let (ms, aug) = (find(Mode::MultiSiamese).ok_or("missing run")?, find(Mode::Augment).ok_or("missing run")?);
        let before = ms.ratio_before.ok_or("no ratio")?;
        let after = ms.ratio_after.ok_or("no ratio")?;
        let aug_after = aug.ratio_after.ok_or("no ratio")?;
        if after < before && after < aug_after {
            wins += 1;
        }
        cells.push(format!("{before:.3}->{after:.3} vs {aug_after:.3}"));
    }
    let summary = format!("{wins}/{} seeds [{}]", seeds.len(), cells.join(", "));
    ensure(seeds.len() == 5 && 2 * wins > seeds.len(), summary.clone())?;
    Ok(summary)
}

fn determinism(cfg: &RunConfig, lr_manifest: &Path, root: &Path) -> Outcome {
    let mut cfg = cfg.clone();
    cfg.seeds = vec![3];
    cfg.train.max_epochs = 2;
    cfg.train.stage1.steps = 40;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().map_err(|e| e.to_string())?;
    let run = |name: &str| {
        let out = root.join(name);
        pool.install(|| pipeline::train(lr_manifest, &out, &cfg, &[Mode::MultiSiamese]))
            .map(|r| (out, r))
            .map_err(|e| e.to_string())
    };
    let (out_a, a) = run("det-a")?;
    let (out_b, b) = run("det-b")?;
    let (la, lb) = (&a.outcomes[0].first_step_losses, &b.outcomes[0].first_step_losses);
    ensure(la.len() == 10, format!("{} first-step losses", la.len()))?;
    let same_losses = la.iter().zip(lb).all(|(x, y)| x.to_bits() == y.to_bits());
    ensure(same_losses, format!("losses differ: {la:?} vs {lb:?}"))?;
    let ck = |d: &Path| std::fs::read(d.join("seed-3/multi-siamese/model.lrck")).map_err(|e| e.to_string());
    let (ca, cb) = (ck(&out_a)?, ck(&out_b)?);
    ensure(ca == cb, "checkpoints differ")?;
    let h = |d: &Path| std::fs::read(d.join("seed-3/multi-siamese/history.jsonl")).map_err(|e| e.to_string());
    ensure(h(&out_a)? == h(&out_b)?, "histories differ")?;
    Ok(format!("10 step losses and a {}-byte checkpoint identical", ca.len()))
}

fn special_tensor(rng: &mut ChaCha8Rng) -> Tensor {
    let rank = rng.gen_range(0..=4);
    let shape: Vec<usize> = (0..rank).map(|_| rng.gen_range(1..=5)).collect();
    let specials = [0.0f32, -0.0, f32::MIN_POSITIVE, 1e-40, -1e-45, f32::MAX, f32::MIN, 1.0 / 3.0];
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            if rng.gen_bool(0.3) {
                specials[rng.gen_range(0..specials.len())]
            } else {
                f32::from_bits(rng.gen::<u32>() & 0xBF7F_FFFF)
            }
        })
        .collect();
    Tensor::new(shape, data).unwrap()
}

fn formats(root: &Path) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut tensors = Vec::new();
    for i in 0..50 {
        let t = special_tensor(&mut rng);
        let bytes = encode_tensor(&t).map_err(|e| e.to_string())?;
        let back = decode_tensor(&bytes).map_err(|e| format!("tensor {i}: {e}"))?;
        ensure(back.shape() == t.shape() && back.bit_eq(&t), format!("tensor {i} changed"))?;
        ensure(encode_tensor(&back).unwrap() == bytes, format!("tensor {i} re-encodes differently"))?;
        tensors.push((format!("layer{i}.w"), t));
    }
    let ck = Checkpoint {
        fingerprint: rng.gen(),
        tensors,
    };
    let ck_bytes = ck.encode().map_err(|e| e.to_string())?;
    let back = Checkpoint::decode(&ck_bytes).map_err(|e| e.to_string())?;
    ensure(back.fingerprint == ck.fingerprint, "fingerprint changed")?;
    ensure(
        back.tensors.len() == ck.tensors.len()
            && back.tensors.iter().zip(&ck.tensors).all(|((na, a), (nb, b))| na == nb && a.shape() == b.shape() && a.bit_eq(b)),
        "checkpoint tensors changed",
    )?;

    // every truncation is a typed error; random byte damage never panics
    let small = encode_tensor(&Tensor::from_fn(&[2, 3], |i| i as f32)).unwrap();
    let small_ck = Checkpoint {
        fingerprint: 7,
        tensors: vec![("a".into(), Tensor::from_vec(vec![1.0, 2.0])), ("b".into(), Tensor::scalar(3.0))],
    }
    .encode()
    .unwrap();
    let mut rejected = 0;
    for cut in 0..small.len() {
        ensure(decode_tensor(&small[..cut]).is_err(), format!("tensor truncated at {cut} decoded"))?;
        rejected += 1;
    }
    for cut in 0..small_ck.len() {
        ensure(Checkpoint::decode(&small_ck[..cut]).is_err(), format!("checkpoint truncated at {cut} decoded"))?;
        rejected += 1;
    }
    let mut damaged = 0;
    for trial in 0..2000 {
        let mut b = if trial % 2 == 0 { small.clone() } else { small_ck.clone() };
        for _ in 0..rng.gen_range(1..4) {
            let i = rng.gen_range(0..b.len());
            b[i] ^= 1 << rng.gen_range(0..8);
        }
        if rng.gen_bool(0.2) {
            b.extend((0..rng.gen_range(1..9)).map(|_| rng.gen::<u8>()));
        }
        let r = catch_unwind(AssertUnwindSafe(|| {
            if trial % 2 == 0 {
                decode_tensor(&b).is_err()
            } else {
                Checkpoint::decode(&b).is_err()
            }
        }));
        match r {
            Ok(err) => damaged += err as usize,
            Err(_) => return Err(format!("decoder panicked on damaged input {b:?}")),
        }
    }
    let garbage: Vec<u8> = (0..64).map(|_| rng.gen()).collect();
    ensure(decode_tensor(&garbage).is_err() && Checkpoint::decode(&garbage).is_err(), "garbage decoded")?;

    // the same through files, surfacing as format errors
    let p = root.join("cut.lrsv");
    std::fs::write(&p, &small[..small.len() - 3]).unwrap();
    ensure(matches!(read_tensor(&p), Err(Error::Format(_))), "truncated file not a format error")?;
    let p = root.join("cut.lrck");
    std::fs::write(&p, &small_ck[..small_ck.len() / 2]).unwrap();
    ensure(matches!(load_checkpoint(&p, None), Err(Error::Format(_))), "truncated checkpoint not a format error")?;
    Ok(format!(
        "50 tensors and a checkpoint bit-exact, {rejected} truncations rejected, {damaged}/2000 damaged inputs rejected, no panics"
    ))
}

fn main() {
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut record = |n: usize, name: &'static str, f: &mut dyn FnMut() -> Outcome| {
        let r = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let (tag, detail) = match &r {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        println!("criterion {n} {name}: {tag}: {detail}");
        results.push((n, name, r));
    };

    let tmp = tempfile::tempdir().expect("temp dir");
    let root = tmp.path();
    record(1, "structure", &mut structure);
    record(2, "gradients", &mut gradients);
    record(3, "loss oracles", &mut loss_oracles);
    record(4, "degradation and flow", &mut physics);

    let cfg = config();
    let t0 = Instant::now();
    let data = prepare_toy(&cfg, root);
    let prep_secs = t0.elapsed().as_secs_f64();
    let trained = data.as_ref().map_err(|e| e.clone()).and_then(|lr| {
        let t1 = Instant::now();
        let r = pipeline::train(lr, &root.join("runs"), &cfg, &Mode::ALL).map_err(|e| e.to_string())?;
        Ok((r, t1.elapsed().as_secs_f64()))
    });
    record(5, "mode ordering", &mut || {
        let (r, secs) = trained.as_ref().map_err(|e| e.clone())?;
        ordering(r, (prep_secs + secs) / cfg.seeds.len() as f64)
    });
    record(6, "embedding invariance", &mut || invariance(&trained.as_ref().map_err(|e| e.clone())?.0));
    record(7, "determinism", &mut || {
        let lr = data.as_ref().map_err(|e| e.clone())?;
        determinism(&cfg, lr, root)
    });
    record(8, "format round-trips", &mut || formats(root));

    let failed: Vec<String> = results.iter().filter(|r| r.2.is_err()).map(|r| format!("{} {}", r.0, r.1)).collect();
    if failed.is_empty() {
        println!("acceptance: all {} criteria passed", results.len());
    } else {
        println!("acceptance: failed {}", failed.join(", "));
        std::process::exit(1);
    }
}
