//! Joins seasonal satellite tiles with map tiles into a manifest.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::manifest::{Manifest, ManifestHeader, PairedSample};
use super::scenes::Season;
use crate::error::{Error, Result};

/// A stored satellite tile for one season.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SatEntry {
    pub tile_id: String,
    pub season: Season,
    pub lat: f64,
    pub lon: f64,
    pub cloud_fraction: f64,
    pub path: String,
}

/// A stored map tile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapEntry {
    pub tile_id: String,
    pub path: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct UnmatchedReport {
    /// Satellite (tile_id, season) keys with no map tile.
    pub sat: Vec<(String, Season)>,
    /// Map tiles with no satellite tile in any season.
    pub map: Vec<String>,
}

impl UnmatchedReport {
    pub fn is_empty(&self) -> bool {
        self.sat.is_empty() && self.map.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pairing {
    pub manifest: Manifest,
    pub unmatched: UnmatchedReport,
}

/// Pairs every satellite entry with the map tile of the same id.
///
/// Output is sorted by tile id (row-major, since ids are zero-padded
/// row/column) and then by season. Entries without a partner are returned in
/// the report and logged as warnings.
pub fn pair_tiles(sat: &[SatEntry], maps: &[MapEntry], zoom: u32, tile_px: u32) -> Result<Pairing> {
    let mut map_by_id: BTreeMap<&str, &MapEntry> = BTreeMap::new();
    for m in maps {
        if map_by_id.insert(&m.tile_id, m).is_some() {
            return Err(Error::DuplicateId {
                tile_id: m.tile_id.clone(),
                source_name: "map tiles".into(),
            });
        }
    }
    let mut sat_by_key: BTreeMap<(&str, Season), &SatEntry> = BTreeMap::new();
    for s in sat {
        if sat_by_key.insert((&s.tile_id, s.season), s).is_some() {
            return Err(Error::DuplicateId {
                tile_id: format!("{} {}", s.tile_id, s.season),
                source_name: "satellite tiles".into(),
            });
        }
    }

    let mut entries = Vec::new();
    let mut unmatched = UnmatchedReport::default();
    let mut used_maps = BTreeSet::new();
    for (&(id, season), s) in &sat_by_key {
        match map_by_id.get(id) {
            Some(m) => {
                used_maps.insert(id);
                entries.push(PairedSample::new(
                    id,
                    season,
                    s.lat,
                    s.lon,
                    zoom,
                    s.cloud_fraction,
                    s.path.clone(),
                    m.path.clone(),
                )?);
            }
            None => unmatched.sat.push((id.to_string(), season)),
        }
    }
    unmatched.map = map_by_id
        .keys()
        .filter(|id| !used_maps.contains(*id))
        .map(|id| id.to_string())
        .collect();
    for (id, season) in &unmatched.sat {
        log::warn!("satellite tile {id} {season} has no map tile");
    }
    for id in &unmatched.map {
        log::warn!("map tile {id} has no satellite tile");
    }
    Ok(Pairing {
        manifest: Manifest::new(ManifestHeader::new(zoom, tile_px), entries)?,
        unmatched,
    })
}
