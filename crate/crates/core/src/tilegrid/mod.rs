//! Tile geometry, scene selection, pairing and manifests.

mod manifest;
mod mercator;
mod pairing;
mod provider;
mod scenes;

use std::path::{Path, PathBuf};

pub use manifest::{
    read_manifest, write_manifest, Manifest, ManifestHeader, PairedSample, FORMAT_VERSION, MAGIC,
};
pub use mercator::{
    box_of_tiles, generate_grid, ground_resolution, tile_extent_degrees, tile_id, GeoBox, TileSpec,
    BASE_TILE_PX, EARTH_RADIUS_M, EQUATOR_RESOLUTION, MAX_LATITUDE, MAX_ZOOM,
};
pub use pairing::{pair_tiles, MapEntry, Pairing, SatEntry, UnmatchedReport};
pub use provider::{
    fetch_tiles, map_rel_path, sat_rel_path, FetchFailure, FetchOptions, FetchReport, MapProvider,
    MockProvider, SceneProvider, SCENE_INDEX,
};
pub use scenes::{
    select_scene, DateWindow, SceneCandidate, SceneSelector, Season, DEFAULT_CLOUD_THRESHOLD,
    DEFAULT_EXTENSION_DAYS, DEFAULT_MAX_EXTENSIONS,
};

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.txt";
pub const FAILURES_FILE: &str = "fetch_failures.tsv";
pub const UNMATCHED_FILE: &str = "unmatched.tsv";

#[derive(Debug, Clone)]
pub struct DatasetBuild {
    pub grid: Vec<TileSpec>,
    pub report: FetchReport,
    pub pairing: Pairing,
    pub manifest_path: PathBuf,
}

/// Grid, fetch, pair and write the manifest into `out_dir`.
///
/// Failures and unmatched tiles are written next to the manifest as
/// tab-separated files.
pub fn build_dataset(
    bbox: &GeoBox,
    zoom: u32,
    tile_px: u32,
    scenes: &dyn SceneProvider,
    maps: &dyn MapProvider,
    opts: &FetchOptions,
    out_dir: &Path,
) -> Result<DatasetBuild> {
    let grid = generate_grid(bbox, zoom, tile_px)?;
    log::info!("{} tiles at zoom {zoom}", grid.len());
    let report = fetch_tiles(scenes, maps, &grid, opts, out_dir)?;
    let mut pairing = pair_tiles(&report.sat, &report.maps, zoom, tile_px)?;
    pairing.manifest.header = pairing.manifest.header.clone().stamped();
    let manifest_path = out_dir.join(MANIFEST_FILE);
    write_manifest(&pairing.manifest, &manifest_path)?;

    let failures = out_dir.join(FAILURES_FILE);
    std::fs::write(&failures, report.failures_tsv()).map_err(|e| Error::io(&failures, e))?;
    let mut unmatched = String::new();
    for (id, season) in &pairing.unmatched.sat {
        unmatched.push_str(&format!("sat\t{id}\t{season}\n"));
    }
    for id in &pairing.unmatched.map {
        unmatched.push_str(&format!("map\t{id}\t-\n"));
    }
    let unmatched_path = out_dir.join(UNMATCHED_FILE);
    std::fs::write(&unmatched_path, unmatched).map_err(|e| Error::io(&unmatched_path, e))?;
    Ok(DatasetBuild {
        grid,
        report,
        pairing,
        manifest_path,
    })
}
