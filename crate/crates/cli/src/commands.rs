use std::path::{Path, PathBuf};
use std::process::ExitCode;

use geogan::data::{save_png, ManifestDataset};
use geogan::eval::{
    evaluate, evaluate_pairs, mnist_sanity, sample_grid, MnistConfig, ModelGenerator,
    OracleGenerator,
};
use geogan::models::{Archive, ParamSet, PARAMS_KIND};
use geogan::synthetic::write_mock_fixture;
use geogan::tilegrid::{
    build_dataset, generate_grid, FetchOptions, GeoBox, MockProvider, SceneSelector,
};
use geogan::training::{gradient_suite, train, TrainConfig, TrainState, STATE_KIND};
use geogan::{Error, Result};

use crate::args::{
    DatasetArgs, EvalArgs, FixtureArgs, GradcheckArgs, MnistArgs, ModelArgs, SampleArgs, TrainArgs,
};
use crate::config::{layered, resolve_path, FileConfig};

pub const EFFECTIVE_CONFIG: &str = "effective_config.toml";

pub fn parse_bbox(s: &str) -> Result<GeoBox> {
    let bad = |why: &str| {
        Error::invalid(format!(
            "--bbox {s:?}: {why}; expected lat_min,lat_max,lon_min,lon_max"
        ))
    };
    let v = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|_| bad("not a number"))?;
    let [a, b, c, d] = v[..] else {
        return Err(bad("need four values"));
    };
    GeoBox::new(a, b, c, d).map_err(|e| bad(&e.to_string()))
}

fn mkdir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

pub fn dataset(a: &DatasetArgs, root: Option<&Path>) -> Result<ExitCode> {
    if a.provider != "mock" {
        return Err(Error::invalid(format!(
            "--provider {:?}: only the mock provider is available",
            a.provider
        )));
    }
    let bbox = parse_bbox(&a.bbox)?;
    let provider = MockProvider::open(resolve_path(root, &a.provider_dir))?;
    let opts = FetchOptions {
        year: a.year,
        seasons: a.seasons.clone(),
        selector: SceneSelector {
            cloud_threshold: a.cloud_threshold,
            extension_days: a.extension_days,
            max_extensions: a.max_extensions,
        },
        workers: if a.deterministic { 1 } else { a.workers.max(1) },
        overwrite: a.overwrite,
    };
    mkdir(&a.out)?;
    let built = build_dataset(
        &bbox, a.zoom, a.tile_px, &provider, &provider, &opts, &a.out,
    )?;
    println!(
        "tiles={} pairs={} failures={} manifest={}",
        built.grid.len(),
        built.pairing.manifest.len(),
        built.report.failures.len(),
        built.manifest_path.display()
    );
    Ok(ExitCode::SUCCESS)
}

pub fn fixture(a: &FixtureArgs) -> Result<ExitCode> {
    let grid = generate_grid(&parse_bbox(&a.bbox)?, a.zoom, a.tile_px)?;
    mkdir(&a.out)?;
    let picks = write_mock_fixture(&a.out, &grid, &a.seasons, a.year, a.image_px, a.seed)?;
    println!(
        "tiles={} scenes={} dir={}",
        grid.len(),
        picks.len(),
        a.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

/// Effective training settings; `manifest` wins over any configured one.
pub fn train_config(
    m: &ModelArgs,
    manifest: Option<&Path>,
    root: Option<&Path>,
) -> Result<TrainConfig> {
    let mut file = layered(m, root)?;
    if let Some(p) = manifest {
        file.manifest = Some(p.to_path_buf());
    }
    file.manifest = file.manifest.map(|p| resolve_path(root, &p));
    file.resolve()
}

pub fn run_train(a: &TrainArgs, root: Option<&Path>) -> Result<ExitCode> {
    let cfg = train_config(&a.model, a.manifest.as_deref(), root)?;
    if cfg.manifest.is_none() {
        return Err(Error::invalid(
            "--manifest is required unless the config file sets it",
        ));
    }
    mkdir(&a.out)?;
    let text = FileConfig::from_train(&cfg).to_toml();
    let path = a.out.join(EFFECTIVE_CONFIG);
    std::fs::write(&path, &text).map_err(|e| Error::io(&path, e))?;
    log::info!("effective config:\n{text}");
    let resume = a.resume.as_deref().map(TrainState::load).transpose()?;
    let outcome = train(&cfg, &a.out, resume)?;
    if let Some(r) = outcome.reports.last() {
        println!("step={} {}", outcome.state.step, r.csv_line());
    }
    println!("checkpoints={}", outcome.checkpoints.len());
    Ok(ExitCode::SUCCESS)
}

/// Parameters from a training-state or parameter checkpoint. A state also
/// supplies the architecture and image size unless they were set explicitly.
fn load_model(path: &Path, m: &ModelArgs, root: Option<&Path>) -> Result<(ParamSet, TrainConfig)> {
    let archive = Archive::load(path)?;
    let mut file = layered(m, root)?;
    let params = if archive.kind == STATE_KIND {
        let state = TrainState::from_archive(archive)?;
        file.arch = file.arch.or(Some(state.variant));
        file.image_size = file.image_size.or(Some(state.image_size));
        state.params
    } else {
        archive.expect_kind(PARAMS_KIND)?;
        ParamSet::load(path)?
    };
    let cfg = file.resolve()?;
    params.check_layout(&geogan::models::layout(&cfg.arch)?)?;
    Ok((params, cfg))
}

pub fn eval(a: &EvalArgs, root: Option<&Path>) -> Result<ExitCode> {
    let manifest = resolve_path(root, &a.manifest);
    let report = match &a.checkpoint {
        Some(ck) if !a.oracle => {
            let (params, cfg) = load_model(ck, &a.model, root)?;
            evaluate(&params, &cfg.arch, &manifest, &cfg.weights, cfg.seed)?
        }
        _ => {
            let cfg = train_config(&a.model, None, root)?;
            let data = ManifestDataset::open(&manifest, cfg.arch.image_size as u32)?;
            evaluate_pairs(&OracleGenerator, &data, cfg.weights.w_style)?
        }
    };
    println!("{report}");
    if let Some(out) = &a.out {
        std::fs::write(out, format!("{report}\n")).map_err(|e| Error::io(out, e))?;
    }
    Ok(ExitCode::SUCCESS)
}

pub fn sample(a: &SampleArgs, root: Option<&Path>) -> Result<ExitCode> {
    let (params, cfg) = load_model(&a.checkpoint, &a.model, root)?;
    let data = ManifestDataset::open(&resolve_path(root, &a.manifest), cfg.arch.image_size as u32)?;
    let gen = ModelGenerator {
        params: &params,
        arch: &cfg.arch,
        seed: cfg.seed,
    };
    let img = sample_grid(&gen, &data, a.n, cfg.seed)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        mkdir(dir)?;
    }
    save_png(&img, &a.out)?;
    println!("grid={}", a.out.display());
    Ok(ExitCode::SUCCESS)
}

pub fn gradcheck(a: &GradcheckArgs) -> Result<ExitCode> {
    let entries = gradient_suite(a.probes, a.seed)?;
    let mut ok = true;
    for e in &entries {
        let verdict = if e.passed() { "PASS" } else { "FAIL" };
        println!(
            "{verdict} {:<40} max_rel_error={:.3e} tolerance={:.0e} probes={}",
            e.case, e.max_rel_error, e.tolerance, e.probes
        );
        ok &= e.passed();
    }
    Ok(if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

pub fn mnist(a: &MnistArgs, root: Option<&Path>) -> Result<ExitCode> {
    let mut cfg = MnistConfig::new(resolve_path(root, &a.images));
    cfg.count = a.count;
    cfg.train.epochs = a.epochs;
    cfg.train.batch_size = a.batch_size;
    cfg.train.seed = a.seed;
    mkdir(&a.out)?;
    let r = mnist_sanity(&cfg, &a.out)?;
    let c = &r.collapse;
    println!(
        "steps={} all_finite={} generated_spread={:.4} real_spread={:.4} collapsed={} seconds={:.1} grid={}",
        r.reports.len(),
        r.all_finite,
        c.generated_spread,
        c.real_spread,
        c.collapsed,
        r.seconds,
        r.grid.display()
    );
    Ok(if r.all_finite && !c.collapsed {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

pub fn data_root(p: Option<&PathBuf>) -> Option<&Path> {
    p.map(PathBuf::as_path)
}
