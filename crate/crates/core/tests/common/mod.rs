//! End-to-end checks shared by the integration tests and the acceptance
//! harness. Each returns a short summary on success.

#![allow(dead_code)]

use std::fmt::Display;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use autograd::Graph;
use geogan::data::{load_rgb, InMemoryPairs, ManifestDataset, PairSource};
use geogan::eval::{detect_collapse, mnist_pairs, mnist_sanity, read_idx_images, MnistConfig};
use geogan::losses::{gram, reconstruction_value, style_loss_value, RecNorm};
use geogan::models::{
    couplings, direct_gan, discriminate, generate, init_params, layout, nvp_forward_tensor,
    nvp_inverse_tensor, ArchConfig, Ctx, GradScope, Mode, NoiseMode, NoiseSpec, ParamSet, Trace,
    Variant,
};
use geogan::synthetic::{mock_dataset, synthetic_pairs};
use geogan::tilegrid::{ground_resolution, read_manifest, Season};
use geogan::training::{
    check_params, gradient_suite, train_on, TrainConfig, TrainState, CHECKPOINT_DIR, LATEST_FILE,
    LOSS_FILE,
};
use geogan::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type Check = Result<String, String>;

pub fn err(e: impl Display) -> String {
    e.to_string()
}

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

pub fn mnist_images() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/mnist/images-idx3-ubyte")
}

pub fn gaussian(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.sample::<f64, _>(StandardNormal))
}

pub fn uniform(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

pub fn mercator() -> Check {
    let r = ground_resolution(40.7128, 14).map_err(err)?;
    ensure!(
        (7.232..=7.252).contains(&r),
        "ground resolution {r} m/px outside [7.232, 7.252]"
    );
    Ok(format!("{r:.6} m/px"))
}

fn naive_gram(x: &[f64], hw: usize, c: usize) -> Vec<f64> {
    let mut g = vec![0.0; c * c];
    for i in 0..c {
        for j in 0..c {
            for p in 0..hw {
                g[i * c + j] += x[p * c + i] * x[p * c + j];
            }
        }
    }
    g
}

pub fn loss_oracles() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let (h, w, c) = (
            rng.random_range(1..=6),
            rng.random_range(1..=6),
            rng.random_range(1..=3),
        );
        let a = uniform(&[1, h, w, c], &mut rng);
        let b = uniform(&[1, h, w, c], &mut rng);
        let (ga, gb) = (
            naive_gram(a.data(), h * w, c),
            naive_gram(b.data(), h * w, c),
        );
        let g = gram(&a).map_err(err)?;
        for (x, y) in g.data().iter().zip(&ga) {
            worst = worst.max((x - y).abs());
        }
        let (n, m) = (c as f64, (h * w) as f64);
        let naive = ga
            .iter()
            .zip(&gb)
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            / (4.0 * n * n * m * m);
        worst = worst.max((style_loss_value(&a, &b).map_err(err)? - naive).abs());
    }
    ensure!(worst < 1e-10, "brute-force mismatch {worst:e}");
    let pair = |v: [f64; 2]| Tensor::new(vec![1, 1, 2, 1], v.to_vec()).unwrap();
    let s1 = style_loss_value(&pair([1.0, 2.0]), &pair([0.0, 0.0])).map_err(err)?;
    let s2 = style_loss_value(&pair([2.0, 4.0]), &pair([1.0, 2.0])).map_err(err)?;
    ensure!(s1 == 25.0 / 16.0, "style example gave {s1}");
    ensure!(s2 == 14.0625, "style example gave {s2}");
    let one = Tensor::full(&[1, 64, 64, 3], 1.0);
    let zero = Tensor::zeros(&[1, 64, 64, 3]);
    let l2 = reconstruction_value(&one, &zero, RecNorm::L2).map_err(err)?;
    ensure!(l2 == 12288f64.sqrt(), "unit-difference L2 gave {l2}");
    Ok(format!("max brute-force deviation {worst:.1e}"))
}

pub fn gradients(probes: usize, seed: u64) -> Check {
    let entries = gradient_suite(probes, seed).map_err(err)?;
    let failed: Vec<_> = entries
        .iter()
        .filter(|e| !e.passed())
        .map(|e| format!("{} {:.2e}", e.case, e.max_rel_error))
        .collect();
    ensure!(failed.is_empty(), "failed: {}", failed.join(", "));
    for v in Variant::ALL {
        for part in [
            "d_loss", "g_gan", "g_rec_l2", "g_rec_l1", "g_style", "g_total",
        ] {
            let case = format!("{v}/{part}");
            ensure!(entries.iter().any(|e| e.case == case), "{case} not checked");
        }
    }
    let (arch, loss): (Vec<_>, Vec<_>) = entries
        .iter()
        .partition(|e| e.case.contains('/') && !e.case.starts_with("loss/"));
    let worst =
        |v: &[&geogan::training::SuiteEntry]| v.iter().map(|e| e.max_rel_error).fold(0.0, f64::max);
    Ok(format!(
        "{} cases, worst architecture {:.1e}, worst standalone {:.1e}",
        entries.len(),
        worst(&arch),
        worst(&loss)
    ))
}

/// Every trainable flow coupling weight and output bias set to zero.
pub fn zero_couplings(params: &ParamSet) -> ParamSet {
    let map = params
        .iter()
        .map(|(n, t)| {
            let zero =
                n.starts_with("flow/") && (n.ends_with("/weight") || n.ends_with("fc2/bias"));
            let t = if zero {
                Arc::new(Tensor::zeros(t.shape()))
            } else {
                Arc::clone(t)
            };
            (n.to_string(), t)
        })
        .collect();
    ParamSet::from_map(map)
}

pub fn flow_bijectivity() -> Check {
    let cfg = ArchConfig::new(Variant::FlowGan);
    let layers = couplings(&cfg).map_err(err)?;
    let d = cfg.flat_dim();
    let default = init_params(&cfg, 4).map_err(err)?;
    let scaled = check_params(&cfg, 4).map_err(err)?;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut rec, mut ld) = (0.0f64, 0.0f64);
    for i in 0..100 {
        let params = if i % 2 == 0 { &default } else { &scaled };
        let z = uniform(&[2, d], &mut rng);
        let (x, ld_f) = nvp_forward_tensor(params, &cfg, &layers, &z).map_err(err)?;
        let (back, ld_i) = nvp_inverse_tensor(params, &cfg, &layers, &x).map_err(err)?;
        rec = rec.max(back.zip_map(&z, |a, b| a - b).map_err(err)?.max_abs());
        ld = ld.max(ld_f.zip_map(&ld_i, |a, b| a + b).map_err(err)?.max_abs());
    }
    ensure!(rec < 1e-5, "‖inverse(forward(z)) − z‖∞ = {rec:e}");
    ensure!(ld < 1e-8, "|log_det_fwd + log_det_inv| = {ld:e}");

    let zero = zero_couplings(&scaled);
    let z = uniform(&[3, d], &mut rng);
    let (x, ld_f) = nvp_forward_tensor(&zero, &cfg, &layers, &z).map_err(err)?;
    ensure!(x == z, "zero couplings changed the input");
    ensure!(
        ld_f.data().iter().all(|&v| v == 0.0),
        "zero couplings gave log_det {:?}",
        ld_f.data()
    );
    Ok(format!("reconstruction {rec:.1e}, log-det {ld:.1e}"))
}

pub const DESK_STEPS: u64 = 300;
pub const DESK_RATIO: f64 = 0.7;

/// Mean of `g_rec + g_style` over steps 251–300 relative to steps 1–50.
pub fn desk_training(dir: &Path) -> Check {
    let started = Instant::now();
    let (build, _) = mock_dataset(dir, 4, 4, &Season::ALL, 64, 2019).map_err(err)?;
    let data = ManifestDataset::open(&build.manifest_path, 64)
        .and_then(|d| d.preload())
        .map_err(err)?;
    ensure!(
        data.len() == 64,
        "fixture has {} pairs, expected 64",
        data.len()
    );
    let arch = ArchConfig::new(Variant::DirectGan).with_image_size(64);
    let mut cfg = TrainConfig::new(arch);
    cfg.batch_size = 1;
    cfg.epochs = 100;
    cfg.max_steps = Some(DESK_STEPS);
    cfg.checkpoint_interval = 0;
    cfg.deterministic = true;
    let out = train_on(&cfg, &data, &dir.join("run"), None).map_err(err)?;
    ensure!(
        out.reports.len() == DESK_STEPS as usize,
        "{} steps ran",
        out.reports.len()
    );
    let v: Vec<f64> = out.reports.iter().map(|r| r.g_rec + r.g_style).collect();
    let early = v[..50].iter().sum::<f64>() / 50.0;
    let late = v[v.len() - 50..].iter().sum::<f64>() / 50.0;
    let ratio = late / early;
    let secs = started.elapsed().as_secs_f64();
    let summary = format!("early {early:.3}, late {late:.3}, ratio {ratio:.3}, {secs:.0} s");
    ensure!(ratio <= DESK_RATIO, "{summary}");
    ensure!(secs <= 1800.0, "{summary}: over 30 min");
    Ok(summary)
}

pub fn mnist(dir: &Path) -> Check {
    let cfg = MnistConfig::new(mnist_images());
    let r = mnist_sanity(&cfg, dir).map_err(err)?;
    ensure!(
        r.reports.len() == 125,
        "{} steps for 2000 images at batch 16",
        r.reports.len()
    );
    ensure!(r.all_finite, "non-finite loss reported");
    ensure!(r.grid.exists(), "no grid at {}", r.grid.display());
    ensure!(r.seconds <= 900.0, "took {:.0} s", r.seconds);
    Ok(format!(
        "{} steps, {:.0} s, spread {:.3} vs real {:.3}",
        r.reports.len(),
        r.seconds,
        r.collapse.generated_spread,
        r.collapse.real_spread
    ))
}

pub fn collapse_detector() -> Check {
    let images = read_idx_images(&mnist_images()).map_err(err)?;
    let data = mnist_pairs(&images, 128, 32, 0).map_err(err)?;
    let maps: Vec<Tensor> = data.pairs.iter().map(|p| p.1.clone()).collect();
    let (a, b) = maps.split_at(64);
    let constant = vec![a[0].clone(); 64];
    let flagged =
        detect_collapse(&constant, b, geogan::eval::DEFAULT_COLLAPSE_THRESHOLD).map_err(err)?;
    ensure!(
        flagged.collapsed,
        "constant generator not flagged: {flagged:?}"
    );
    let real = detect_collapse(a, b, geogan::eval::DEFAULT_COLLAPSE_THRESHOLD).map_err(err)?;
    ensure!(!real.collapsed, "real digits flagged: {real:?}");
    Ok(format!(
        "real spread ratio {:.3}",
        real.generated_spread / real.real_spread
    ))
}

pub fn small_config(variant: Variant) -> TrainConfig {
    let mut cfg = TrainConfig::new(ArchConfig::reduced(variant, 16));
    cfg.batch_size = 4;
    cfg.epochs = 100;
    cfg.checkpoint_interval = 0;
    cfg.grid_size = 4;
    cfg.deterministic = true;
    cfg.seed = 11;
    cfg
}

pub fn small_data() -> InMemoryPairs {
    synthetic_pairs(8, 16, 5)
}

fn read(p: &Path) -> Result<Vec<u8>, String> {
    std::fs::read(p).map_err(|e| format!("{}: {e}", p.display()))
}

pub fn determinism(dir: &Path) -> Check {
    let data = small_data();
    let mut cfg = small_config(Variant::EncoderGan);
    cfg.max_steps = Some(50);
    cfg.checkpoint_interval = 25;
    let (a, b) = (dir.join("a"), dir.join("b"));
    train_on(&cfg, &data, &a, None).map_err(err)?;
    train_on(&cfg, &data, &b, None).map_err(err)?;
    let losses = read(&a.join(LOSS_FILE))?;
    ensure!(
        losses == read(&b.join(LOSS_FILE))?,
        "loss files differ between identical runs"
    );
    let latest = a.join(CHECKPOINT_DIR).join(LATEST_FILE);
    ensure!(
        read(&latest)? == read(&b.join(CHECKPOINT_DIR).join(LATEST_FILE))?,
        "final checkpoints differ"
    );

    let mid = TrainState::load(&a.join(CHECKPOINT_DIR).join("step_00000025.ckpt")).map_err(err)?;
    ensure!(mid.step == 25, "mid checkpoint at step {}", mid.step);
    let c = dir.join("c");
    train_on(&cfg, &data, &c, Some(mid)).map_err(err)?;
    let tail = |bytes: &[u8]| -> Vec<String> {
        String::from_utf8_lossy(bytes)
            .lines()
            .filter(|l| {
                l.split(',')
                    .next()
                    .and_then(|s| s.parse::<u64>().ok())
                    .is_some_and(|s| s > 25)
            })
            .map(str::to_string)
            .collect()
    };
    let resumed = tail(&read(&c.join(LOSS_FILE))?);
    ensure!(
        resumed.len() == 25,
        "resumed run logged {} steps",
        resumed.len()
    );
    ensure!(resumed == tail(&losses), "resumed trajectory differs");
    ensure!(
        read(&latest)? == read(&c.join(CHECKPOINT_DIR).join(LATEST_FILE))?,
        "resumed final state differs"
    );

    let state = TrainState::load(&latest).map_err(err)?;
    ensure!(
        state.to_archive().to_bytes() == read(&latest)?,
        "checkpoint re-encoding differs"
    );
    let (build, _) = mock_dataset(
        &dir.join("pipeline"),
        1,
        2,
        &[Season::Mar, Season::Sep],
        16,
        3,
    )
    .map_err(err)?;
    let text = read_manifest(&build.manifest_path)
        .and_then(|m| m.to_text())
        .map_err(err)?;
    ensure!(
        text.into_bytes() == read(&build.manifest_path)?,
        "manifest re-encoding differs"
    );
    Ok("50-step runs identical, resume identical, round-trips exact".into())
}

/// Forward trace of a whole generator + discriminator pass in inference
/// mode, plus the discriminator output shape.
pub fn trace(
    cfg: &ArchConfig,
    params: &ParamSet,
    batch: usize,
    seed: u64,
) -> Result<(Trace, Vec<usize>), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = cfg.image_size;
    let sat = uniform(&[batch, s, s, 3], &mut rng);
    let map = uniform(&[batch, s, s, 3], &mut rng);
    let mut g = Graph::new();
    let mut ctx = Ctx::new(&mut g, cfg, params, Mode::Inference, GradScope::None);
    let sat = ctx.g.constant(sat);
    let map = ctx.g.constant(map);
    let out = generate(&mut ctx, sat, &mut rng).map_err(err)?;
    let fake_shape = ctx.shape(out.fake).to_vec();
    let p = discriminate(&mut ctx, sat, map, out.cond).map_err(err)?;
    let p_shape = ctx.shape(p).to_vec();
    let mut trace = ctx.finish();
    trace.shapes.push(("generator/output".into(), fake_shape));
    Ok((trace, p_shape))
}

fn expect(trace: &Trace, table: &[(&str, Vec<usize>)]) -> Result<usize, String> {
    for (layer, want) in table {
        let got = trace
            .shape_of(layer)
            .ok_or_else(|| format!("{layer} never evaluated"))?;
        ensure!(
            got == want.as_slice(),
            "{layer}: {got:?}, expected {want:?}"
        );
    }
    Ok(table.len())
}

fn kernel(params: &ParamSet, name: &str) -> Result<Vec<usize>, String> {
    params
        .require(name)
        .map(|t| t.shape().to_vec())
        .map_err(err)
}

pub fn encoder_shapes() -> Result<usize, String> {
    let b = 2;
    let cfg = ArchConfig::new(Variant::EncoderGan);
    let params = init_params(&cfg, 0).map_err(err)?;
    let (t, p) = trace(&cfg, &params, b, 0)?;
    let mut n = expect(
        &t,
        &[
            ("encoder/conv0", vec![b, 32, 32, 1024]),
            ("encoder/conv1", vec![b, 16, 16, 512]),
            ("encoder/conv2", vec![b, 8, 8, 256]),
            ("encoder/conv3", vec![b, 4, 4, 128]),
            ("encoder/head", vec![b, 1, 1, 512]),
            ("encoder/head/bn", vec![b, 1, 1, 512]),
            ("generator/deconv0", vec![b, 4, 4, 1024]),
            ("generator/deconv1", vec![b, 8, 8, 512]),
            ("generator/deconv2", vec![b, 16, 16, 128]),
            ("generator/deconv3", vec![b, 32, 32, 32]),
            ("generator/out", vec![b, 64, 64, 3]),
            ("generator/output", vec![b, 64, 64, 3]),
            ("discriminator/conv0", vec![b, 32, 32, 128]),
            ("discriminator/conv1", vec![b, 16, 16, 256]),
            ("discriminator/conv2", vec![b, 8, 8, 512]),
            ("discriminator/conv3", vec![b, 4, 4, 1024]),
            ("discriminator/head", vec![b, 1, 1, 512]),
            ("discriminator/flatten", vec![b, 512]),
            ("discriminator/concat", vec![b, 512]),
            ("discriminator/fc0", vec![b, 512]),
            ("discriminator/fc1", vec![b, 1]),
        ],
    )?;
    ensure!(p == [b, 1], "discriminator output {p:?}");
    ensure!(
        kernel(&params, "discriminator/fc0/weight")? == [1024, 512],
        "concatenation is not 512 + 512 units"
    );
    ensure!(
        kernel(&params, "generator/deconv1/kernel")?[..2] == [8, 8],
        "second generator kernel is not 8×8"
    );
    n += 3;

    let mut append = cfg.clone();
    append.noise = NoiseSpec {
        mode: NoiseMode::Append,
        dim: 100,
        ..NoiseSpec::default()
    };
    let l = layout(&append).map_err(err)?;
    let k = l
        .entries
        .iter()
        .find(|e| e.0 == "generator/deconv0/kernel")
        .map(|e| e.1.clone())
        .ok_or("no generator/deconv0/kernel")?;
    ensure!(k == [4, 4, 1024, 612], "appended latent kernel {k:?}");
    Ok(n + 1)
}

pub fn direct_shapes() -> Result<usize, String> {
    let b = 1;
    let cfg = ArchConfig::new(Variant::DirectGan);
    let params = init_params(&cfg, 0).map_err(err)?;
    let (t, p) = trace(&cfg, &params, b, 0)?;
    let mut table = Vec::new();
    for (i, w) in [300, 150, 60, 20].into_iter().enumerate() {
        table.push((format!("generator/layer{i}/k3"), vec![b, 256, 256, w]));
        table.push((format!("generator/layer{i}/k5"), vec![b, 256, 256, w]));
    }
    table.push(("generator/out".into(), vec![b, 256, 256, 3]));
    table.push(("generator/output".into(), vec![b, 256, 256, 3]));
    for (i, (s, f)) in [(128, 128), (64, 256), (32, 512), (16, 768), (8, 1024)]
        .into_iter()
        .enumerate()
    {
        table.push((format!("discriminator/conv{i}"), vec![b, s, s, f]));
    }
    table.push(("discriminator/head".into(), vec![b, 5, 5, 1]));
    table.push(("discriminator/logit".into(), vec![b, 1]));
    let table: Vec<(&str, Vec<usize>)> =
        table.iter().map(|(n, s)| (n.as_str(), s.clone())).collect();
    let mut n = expect(&t, &table)?;
    ensure!(p == [b, 1], "discriminator output {p:?}");
    for (i, cin) in [(1, 600), (2, 300), (3, 120)] {
        let k = kernel(&params, &format!("generator/layer{i}/k3/kernel"))?;
        ensure!(
            k[2] == cin,
            "layer {i} reads {} channels, expected {cin}",
            k[2]
        );
    }
    ensure!(
        kernel(&params, "generator/out/kernel")? == [3, 3, 3, 40],
        "output layer is not 40 → 3"
    );
    ensure!(
        kernel(&params, "discriminator/conv0/kernel")?[2] == 6,
        "discriminator does not read 6 channels"
    );
    n += 6;

    let mut g = Graph::new();
    let mut ctx = Ctx::new(&mut g, &cfg, &params, Mode::Inference, GradScope::None);
    let sat = ctx.g.constant(Tensor::zeros(&[b, 256, 256, 3]));
    let map = ctx.g.constant(Tensor::zeros(&[b, 256, 256, 3]));
    let pair = direct_gan::pair_input(&mut ctx, sat, map).map_err(err)?;
    ensure!(
        ctx.shape(pair) == [b, 256, 256, 6],
        "pair input {:?}",
        ctx.shape(pair)
    );
    Ok(n + 1)
}

pub fn shapes() -> Check {
    let n = encoder_shapes()? + direct_shapes()?;
    Ok(format!("{n} layer shapes"))
}

pub fn pipeline(dir: &Path) -> Check {
    let (build, expected) = mock_dataset(dir, 2, 3, &Season::ALL, 16, 7).map_err(err)?;
    let m = &build.pairing.manifest;
    ensure!(build.grid.len() == 6, "{} tiles", build.grid.len());
    ensure!(m.len() == 24, "{} manifest entries", m.len());
    ensure!(
        build.report.failures.is_empty(),
        "failures: {:?}",
        build.report.failures
    );
    ensure!(
        expected.iter().any(|e| e.extensions > 0),
        "fixture never needs a window extension"
    );
    let root = build.manifest_path.parent().unwrap();
    let provider = dir.join("provider");
    for e in &m.entries {
        let pick = expected
            .iter()
            .find(|p| p.tile_id == e.tile_id && p.season == e.season)
            .ok_or_else(|| format!("no expectation for {} {}", e.tile_id, e.season))?;
        ensure!(
            e.cloud_fraction < 0.10,
            "{} {} kept cloud {}",
            e.tile_id,
            e.season,
            e.cloud_fraction
        );
        ensure!(
            (e.cloud_fraction - pick.cloud_fraction).abs() < 5e-5,
            "{} {} cloud {} vs {}",
            e.tile_id,
            e.season,
            e.cloud_fraction,
            pick.cloud_fraction
        );
        let stored = load_rgb(&root.join(&e.sat_path)).map_err(err)?;
        let source =
            load_rgb(&provider.join("sat").join(format!("{}.png", pick.scene_id))).map_err(err)?;
        ensure!(
            stored == source,
            "{} {} stored a different scene than {}",
            e.tile_id,
            e.season,
            pick.scene_id
        );
    }
    let extended = expected.iter().filter(|e| e.extensions > 0).count();
    Ok(format!(
        "24 entries, {extended} picks after window extension"
    ))
}
