//! Imagery providers and the tile download loop.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use chrono::NaiveDate;

use super::mercator::TileSpec;
use super::pairing::{MapEntry, SatEntry};
use super::scenes::{DateWindow, SceneCandidate, SceneSelector, Season};
use crate::error::{Error, Result};

/// Source of satellite scenes.
pub trait SceneProvider: Sync {
    /// Scenes covering `tile` acquired inside `window`.
    fn list_candidates(&self, tile: &TileSpec, window: &DateWindow) -> Result<Vec<SceneCandidate>>;
    /// Encoded image of `tile` cut from scene `scene_id`.
    fn fetch_scene(&self, tile: &TileSpec, scene_id: &str) -> Result<Vec<u8>>;
}

/// Source of rendered map tiles.
pub trait MapProvider: Sync {
    fn fetch_map(&self, tile: &TileSpec) -> Result<Vec<u8>>;
}

/// File-backed provider for offline runs.
///
/// Layout: `scenes.tsv` with `tile_id scene_id date cloud_fraction` rows,
/// `sat/<scene_id>.png` and `map/<tile_id>.png`.
#[derive(Debug, Clone)]
pub struct MockProvider {
    root: PathBuf,
    scenes: HashMap<String, Vec<SceneCandidate>>,
}

pub const SCENE_INDEX: &str = "scenes.tsv";

impl MockProvider {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        let index = root.join(SCENE_INDEX);
        let text = std::fs::read_to_string(&index).map_err(|e| Error::io(&index, e))?;
        let mut scenes: HashMap<String, Vec<SceneCandidate>> = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |message: String| Error::Parse {
                line: i + 1,
                message,
            };
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 4 {
                return Err(err(format!(
                    "expected 4 fields in {SCENE_INDEX}, found {}",
                    f.len()
                )));
            }
            let date = NaiveDate::parse_from_str(f[2], "%Y-%m-%d")
                .map_err(|e| err(format!("bad date {:?}: {e}", f[2])))?;
            let cloud: f64 = f[3]
                .parse()
                .map_err(|_| err(format!("bad cloud fraction {:?}", f[3])))?;
            let cand = SceneCandidate::new(f[1], date, cloud).map_err(|e| err(e.to_string()))?;
            scenes.entry(f[0].to_string()).or_default().push(cand);
        }
        Ok(Self { root, scenes })
    }

    fn read(&self, rel: PathBuf) -> Result<Vec<u8>> {
        let p = self.root.join(rel);
        std::fs::read(&p).map_err(|e| Error::Provider(format!("{}: {e}", p.display())))
    }
}

impl SceneProvider for MockProvider {
    fn list_candidates(&self, tile: &TileSpec, window: &DateWindow) -> Result<Vec<SceneCandidate>> {
        Ok(self
            .scenes
            .get(&tile.tile_id())
            .map(|v| {
                v.iter()
                    .filter(|c| window.contains(c.acquisition_date))
                    .cloned()
                    .collect()
            })
            .unwrap_or_default())
    }

    fn fetch_scene(&self, _tile: &TileSpec, scene_id: &str) -> Result<Vec<u8>> {
        self.read(Path::new("sat").join(format!("{scene_id}.png")))
    }
}

impl MapProvider for MockProvider {
    fn fetch_map(&self, tile: &TileSpec) -> Result<Vec<u8>> {
        self.read(Path::new("map").join(format!("{}.png", tile.tile_id())))
    }
}

pub fn sat_rel_path(tile_id: &str, season: Season) -> String {
    format!("sat/{tile_id}_{season}.png")
}

pub fn map_rel_path(tile_id: &str) -> String {
    format!("map/{tile_id}.png")
}

#[derive(Debug, Clone)]
pub struct FetchOptions {
    pub year: i32,
    pub seasons: Vec<Season>,
    pub selector: SceneSelector,
    /// Worker threads; 1 keeps all provider calls in order.
    pub workers: usize,
    /// Re-download images that already exist on disk.
    pub overwrite: bool,
}

impl Default for FetchOptions {
    fn default() -> Self {
        Self {
            year: 2019,
            seasons: Season::ALL.to_vec(),
            selector: SceneSelector::default(),
            workers: 4,
            overwrite: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FetchFailure {
    pub tile_id: String,
    /// `None` for a map tile.
    pub season: Option<Season>,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FetchReport {
    pub sat: Vec<SatEntry>,
    pub maps: Vec<MapEntry>,
    /// Images written in this run.
    pub fetched: usize,
    /// Images already on disk and left alone.
    pub skipped: usize,
    pub failures: Vec<FetchFailure>,
}

impl FetchReport {
    /// Tab-separated listing of every failure, one per line.
    pub fn failures_tsv(&self) -> String {
        self.failures
            .iter()
            .map(|f| {
                let season = f.season.map(|s| s.as_str()).unwrap_or("-");
                format!(
                    "{}\t{}\t{}\n",
                    f.tile_id,
                    season,
                    f.reason.replace(['\t', '\n'], " ")
                )
            })
            .collect()
    }
}

enum Job<'a> {
    Map(&'a TileSpec),
    Sat(&'a TileSpec, Season),
}

enum Outcome {
    Map(MapEntry, bool),
    Sat(SatEntry, bool),
    Failed(FetchFailure),
}

fn store(
    out_dir: &Path,
    rel: &str,
    overwrite: bool,
    fetch: impl FnOnce() -> Result<Vec<u8>>,
) -> Result<bool> {
    let path = out_dir.join(rel);
    if !overwrite && path.exists() {
        return Ok(false);
    }
    let bytes = fetch()?;
    std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    Ok(true)
}

fn run_job(
    job: &Job<'_>,
    scenes: &dyn SceneProvider,
    maps: &dyn MapProvider,
    opts: &FetchOptions,
    out_dir: &Path,
) -> Outcome {
    match *job {
        Job::Map(spec) => {
            let id = spec.tile_id();
            let rel = map_rel_path(&id);
            match store(out_dir, &rel, opts.overwrite, || maps.fetch_map(spec)) {
                Ok(new) => Outcome::Map(
                    MapEntry {
                        tile_id: id,
                        path: rel,
                    },
                    new,
                ),
                Err(e) => Outcome::Failed(FetchFailure {
                    tile_id: id,
                    season: None,
                    reason: e.to_string(),
                }),
            }
        }
        Job::Sat(spec, season) => {
            let id = spec.tile_id();
            let rel = sat_rel_path(&id, season);
            let result = (|| {
                let base = season.window(opts.year);
                let candidates = scenes.list_candidates(spec, &opts.selector.widest(&base))?;
                let pick = opts.selector.select(&id, &candidates, &base)?;
                let new = store(out_dir, &rel, opts.overwrite, || {
                    scenes.fetch_scene(spec, &pick.scene_id)
                })?;
                Ok::<_, Error>((pick, new))
            })();
            match result {
                Ok((pick, new)) => Outcome::Sat(
                    SatEntry {
                        tile_id: id,
                        season,
                        lat: spec.center_lat,
                        lon: spec.center_lon,
                        cloud_fraction: pick.cloud_fraction,
                        path: rel,
                    },
                    new,
                ),
                Err(e) => Outcome::Failed(FetchFailure {
                    tile_id: id,
                    season: Some(season),
                    reason: e.to_string(),
                }),
            }
        }
    }
}

/// Downloads the map tile and one satellite tile per season for every spec.
///
/// Images land in `out_dir/sat/<tile_id>_<SEASON>.png` and
/// `out_dir/map/<tile_id>.png`. Provider errors become per-tile failures;
/// the report is ordered by spec, map first, then seasons, whatever the
/// number of workers.
pub fn fetch_tiles(
    scenes: &dyn SceneProvider,
    maps: &dyn MapProvider,
    specs: &[TileSpec],
    opts: &FetchOptions,
    out_dir: &Path,
) -> Result<FetchReport> {
    for sub in ["sat", "map"] {
        let d = out_dir.join(sub);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let mut jobs = Vec::with_capacity(specs.len() * (1 + opts.seasons.len()));
    for spec in specs {
        jobs.push(Job::Map(spec));
        for &s in &opts.seasons {
            jobs.push(Job::Sat(spec, s));
        }
    }
    let results: Vec<Mutex<Option<Outcome>>> = jobs.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let worker = || loop {
        let i = next.fetch_add(1, Ordering::Relaxed);
        if i >= jobs.len() {
            break;
        }
        let out = run_job(&jobs[i], scenes, maps, opts, out_dir);
        *results[i].lock().unwrap() = Some(out);
    };
    let workers = opts.workers.clamp(1, jobs.len().max(1));
    if workers == 1 {
        worker();
    } else {
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(worker);
            }
        });
    }

    let mut report = FetchReport::default();
    for r in results {
        match r.into_inner().unwrap().expect("every job ran") {
            Outcome::Map(m, new) => {
                if new {
                    report.fetched += 1
                } else {
                    report.skipped += 1
                }
                report.maps.push(m);
            }
            Outcome::Sat(s, new) => {
                if new {
                    report.fetched += 1
                } else {
                    report.skipped += 1
                }
                report.sat.push(s);
            }
            Outcome::Failed(f) => {
                log::warn!(
                    "fetch failed for {} {:?}: {}",
                    f.tile_id,
                    f.season,
                    f.reason
                );
                report.failures.push(f);
            }
        }
    }
    Ok(report)
}
