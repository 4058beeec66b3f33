use std::path::Path;
use std::process::{Command, Output};

use geogan::models::{ArchConfig, Variant};
use geogan::synthetic::FIXTURE_ORIGIN;
use geogan::tilegrid::box_of_tiles;
use geogan::training::TrainConfig;

fn geogan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_geogan"))
        .args(args)
        .env_remove("GEOGAN_DATA_ROOT")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = geogan(args);
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn help_default(help: &str, flag: &str) -> String {
    let start = help
        .find(&format!("--{flag} "))
        .unwrap_or_else(|| panic!("--{flag} missing from help"));
    let rest = &help[start..];
    let d = rest.find("[default: ").expect("default shown") + "[default: ".len();
    rest[d..d + rest[d..].find(']').unwrap()].to_string()
}

#[test]
fn help_defaults_match_builtin_config() {
    let help = ok(&["train", "--help"]);
    let cfg = TrainConfig::new(ArchConfig::new(Variant::EncoderGan));
    let num = |flag: &str| help_default(&help, flag).parse::<f64>().unwrap();
    assert_eq!(help_default(&help, "arch"), cfg.arch.variant.to_string());
    assert!(help_default(&help, "image-size").starts_with(&cfg.arch.image_size.to_string()));
    assert_eq!(num("seed"), cfg.seed as f64);
    assert_eq!(
        help_default(&help, "rec-norm"),
        cfg.weights.rec_norm.to_string()
    );
    assert_eq!(num("w-gan"), cfg.weights.w_gan);
    assert_eq!(num("w-rec"), cfg.weights.w_rec);
    assert_eq!(num("w-style"), cfg.weights.w_style);
    assert_eq!(help_default(&help, "noise-mode"), "add");
    assert_eq!(num("noise-fraction"), cfg.arch.noise.fraction);
    assert_eq!(num("noise-std"), cfg.arch.noise.std);
    assert_eq!(num("noise-dim"), cfg.arch.noise.dim as f64);
    assert_eq!(
        help_default(&help, "separate-disc-encoder"),
        cfg.arch.separate_disc_encoder.to_string()
    );
    assert_eq!(
        help_default(&help, "flow-raw-scale"),
        cfg.arch.flow_raw_scale.to_string()
    );
    assert_eq!(num("lr"), cfg.learning_rate);
    assert_eq!(num("beta1"), cfg.beta1);
    assert_eq!(num("beta2"), cfg.beta2);
    assert!(help_default(&help, "batch-size").starts_with(&cfg.batch_size.to_string()));
    assert_eq!(num("epochs"), cfg.epochs as f64);
    assert_eq!(num("g-steps"), cfg.g_steps_per_d_step as f64);
    assert_eq!(num("checkpoint-interval"), cfg.checkpoint_interval as f64);
    assert_eq!(help_default(&help, "max-steps"), "none");
    assert_eq!(num("grid-size"), cfg.grid_size as f64);
    let direct = ArchConfig::new(Variant::DirectGan);
    assert!(
        help_default(&help, "image-size").contains(&format!("{} for direct", direct.image_size))
    );
}

#[test]
fn malformed_bbox_names_the_flag() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let out = geogan(&[
        "dataset",
        "--bbox",
        "40.7,40.8,-74.0",
        "--provider-dir",
        d,
        "--out",
        d,
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--bbox"));
}

fn bbox_of(rows: u32, cols: u32) -> String {
    let (lat, lon) = FIXTURE_ORIGIN;
    let b = box_of_tiles(lat, lon, rows, cols, 14, 512).unwrap();
    format!("{},{},{},{}", b.lat_min, b.lat_max, b.lon_min, b.lon_max)
}

/// Fixture provider and dataset for a 2×3 box; returns the manifest path
/// and the build summary line.
fn build_fixture(dir: &Path, seasons: &str) -> (String, String) {
    let provider = dir.join("provider");
    let data = dir.join("data");
    let bbox = bbox_of(2, 3);
    ok(&[
        "fixture",
        "--bbox",
        &bbox,
        "--image-px",
        "16",
        "--seasons",
        seasons,
        "--out",
        provider.to_str().unwrap(),
    ]);
    let line = ok(&[
        "dataset",
        "--bbox",
        &bbox,
        "--seasons",
        seasons,
        "--deterministic",
        "--provider-dir",
        provider.to_str().unwrap(),
        "--out",
        data.to_str().unwrap(),
    ]);
    (
        data.join("manifest.txt").to_str().unwrap().to_string(),
        line,
    )
}

#[test]
fn dataset_one_season_gives_one_entry_per_tile() {
    let dir = tempfile::tempdir().unwrap();
    let (_, line) = build_fixture(dir.path(), "mar");
    assert!(line.starts_with("tiles=6 pairs=6 failures=0"), "{line}");
}

#[test]
fn dataset_four_seasons_gives_four_entries_per_tile() {
    let dir = tempfile::tempdir().unwrap();
    let (_, line) = build_fixture(dir.path(), "mar,jun,sep,dec");
    assert!(line.starts_with("tiles=6 pairs=24 failures=0"), "{line}");
}

#[test]
fn gradcheck_passes_on_fresh_parameters() {
    let out = ok(&["gradcheck", "--probes", "12"]);
    let lines: Vec<_> = out.lines().collect();
    assert!(lines.len() > 10);
    assert!(
        lines
            .iter()
            .all(|l| l.starts_with("PASS ") && l.contains("max_rel_error=")),
        "{out}"
    );
    for v in ["encoder", "direct", "flow"] {
        assert!(
            lines.iter().any(|l| l.contains(&format!("{v}/g_total"))),
            "{v} missing"
        );
    }
}

#[test]
fn oracle_eval_scores_zero() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, _) = build_fixture(dir.path(), "mar");
    let line = ok(&[
        "eval",
        "--manifest",
        &manifest,
        "--oracle",
        "--image-size",
        "16",
    ]);
    assert!(
        line.starts_with("mean_l1=0 mean_l2=0 mean_style=0 combined=0"),
        "{line}"
    );
}

fn train_run(manifest: &str, out: &Path, config: &Path) {
    ok(&[
        "train",
        "--manifest",
        manifest,
        "--out",
        out.to_str().unwrap(),
        "--config",
        config.to_str().unwrap(),
        "--arch",
        "encoder",
        "--image-size",
        "16",
        "--batch-size",
        "2",
        "--max-steps",
        "2",
        "--grid-size",
        "1",
        "--deterministic",
        "--seed",
        "3",
    ]);
}

#[test]
fn train_eval_sample_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, _) = build_fixture(dir.path(), "mar,jun");
    let config = dir.path().join("run.toml");
    std::fs::write(&config, "batch_size = 8\nlr = 0.001\nmax_steps = 5\n").unwrap();
    let out = dir.path().join("run");
    train_run(&manifest, &out, &config);
    let effective = std::fs::read_to_string(out.join("effective_config.toml")).unwrap();
    assert!(effective.contains("batch_size = 2"), "{effective}");
    assert!(effective.contains("lr = 0.001"), "{effective}");
    assert!(effective.contains("max_steps = 2"), "{effective}");
    let losses = std::fs::read_to_string(out.join("losses.csv")).unwrap();
    assert_eq!(
        losses.lines().filter(|l| l.starts_with("2,")).count(),
        1,
        "{losses}"
    );

    let again = dir.path().join("again");
    train_run(&manifest, &again, &config);
    for f in [
        "losses.csv",
        "checkpoints/latest.ckpt",
        "effective_config.toml",
    ] {
        assert_eq!(
            std::fs::read(out.join(f)).unwrap(),
            std::fs::read(again.join(f)).unwrap(),
            "{f} differs"
        );
    }

    let ckpt = out.join("checkpoints").join("latest.ckpt");
    let ckpt = ckpt.to_str().unwrap();
    let line = ok(&["eval", "--manifest", &manifest, "--checkpoint", ckpt]);
    assert!(line.contains("sample_count=12"), "{line}");
    assert_eq!(
        line,
        ok(&["eval", "--manifest", &manifest, "--checkpoint", ckpt])
    );

    let grid = out.join("grid.png");
    ok(&[
        "sample",
        "--manifest",
        &manifest,
        "--checkpoint",
        ckpt,
        "--n",
        "9",
        "--out",
        grid.to_str().unwrap(),
    ]);
    let img = image::open(&grid).unwrap().to_rgb8();
    assert_eq!(img.dimensions(), (3 * 16 + 2 * 2, 3 * 16 + 2 * 2));

    let wrong = geogan(&[
        "eval",
        "--manifest",
        &manifest,
        "--checkpoint",
        ckpt,
        "--arch",
        "direct",
    ]);
    assert_eq!(wrong.status.code(), Some(2));
}

#[test]
fn unknown_config_key_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.toml");
    std::fs::write(&config, "learning_rte = 1.0\n").unwrap();
    let out = geogan(&[
        "train",
        "--manifest",
        "m.txt",
        "--out",
        dir.path().to_str().unwrap(),
        "--config",
        config.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning_rte"));
}

#[test]
fn data_root_resolves_relative_paths() {
    let dir = tempfile::tempdir().unwrap();
    build_fixture(dir.path(), "mar");
    let out = Command::new(env!("CARGO_BIN_EXE_geogan"))
        .args([
            "eval",
            "--manifest",
            "data/manifest.txt",
            "--oracle",
            "--image-size",
            "16",
        ])
        .env("GEOGAN_DATA_ROOT", dir.path())
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}
