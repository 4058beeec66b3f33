//! Procedural city tiles and mock-provider fixtures.
//!
//! A city is a jittered street grid with avenues, a river, parks and
//! buildings. Every tile is rendered twice from the same layout: once in a
//! flat cartographic palette and once as a noisy "satellite" view whose
//! vegetation follows the season and which may carry clouds.

use std::fmt::Write as _;
use std::path::Path;

use chrono::Duration;
use image::{Rgb, RgbImage};

use crate::data::{rgb_to_tensor, save_png, InMemoryPairs};
use crate::error::{Error, Result};
use crate::tilegrid::{
    box_of_tiles, build_dataset, generate_grid, DatasetBuild, FetchOptions, MockProvider, Season,
    TileSpec, SCENE_INDEX,
};

fn mix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

fn hash(seed: u64, a: i64, b: i64) -> u64 {
    mix(mix(seed ^ a as u64).wrapping_add(b as u64))
}

fn unit(h: u64) -> f64 {
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn value_noise(seed: u64, u: f64, v: f64) -> f64 {
    let (iu, iv) = (u.floor(), v.floor());
    let (fu, fv) = (u - iu, v - iv);
    let (su, sv) = (fu * fu * (3.0 - 2.0 * fu), fv * fv * (3.0 - 2.0 * fv));
    let at = |du: i64, dv: i64| unit(hash(seed, iu as i64 + du, iv as i64 + dv));
    let top = at(0, 0) * (1.0 - su) + at(1, 0) * su;
    let bot = at(0, 1) * (1.0 - su) + at(1, 1) * su;
    top * (1.0 - sv) + bot * sv
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Land {
    Ground,
    Street,
    Avenue,
    Water,
    Park,
    Building(u8),
}

const BLOCK: f64 = 0.25;

/// Deterministic city layout over tile-unit coordinates.
#[derive(Debug, Clone, Copy)]
pub struct City {
    pub seed: u64,
}

impl City {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    fn street_offset(&self, axis: i64, i: i64) -> f64 {
        (unit(hash(self.seed ^ 0x5157, axis, i)) - 0.5) * 0.06
    }

    fn land(&self, u: f64, v: f64) -> Land {
        let phase = unit(mix(self.seed)) * std::f64::consts::TAU;
        let river = 1.4 + 0.5 * (u * 1.3 + phase).sin();
        if (v - river).abs() < 0.11 {
            return Land::Water;
        }
        let (bu, bv) = ((u / BLOCK).floor() as i64, (v / BLOCK).floor() as i64);
        let lu = u - bu as f64 * BLOCK - self.street_offset(0, bu);
        let lv = v - bv as f64 * BLOCK - self.street_offset(1, bv);
        let avenue_u = bu.rem_euclid(4) == 0;
        let avenue_v = bv.rem_euclid(4) == 0;
        let near = |l: f64, w: f64| l.rem_euclid(BLOCK) < w;
        if (avenue_u && near(lu, 0.05)) || (avenue_v && near(lv, 0.05)) {
            return Land::Avenue;
        }
        if near(lu, 0.028) || near(lv, 0.028) {
            return Land::Street;
        }
        let h = hash(self.seed ^ 0xB10C, bu, bv);
        if h % 7 == 0 {
            return Land::Park;
        }
        let (iu, iv) = (lu.rem_euclid(BLOCK), lv.rem_euclid(BLOCK));
        let split = 0.09 + 0.08 * unit(mix(h));
        let inset = |l: f64| l > 0.045 && l < BLOCK - 0.015;
        if inset(iu) && inset(iv) && ((iu - split).abs() > 0.012 || h % 3 == 0) {
            return Land::Building((mix(h ^ (iu > split) as u64) % 4) as u8);
        }
        Land::Ground
    }

    fn map_color(land: Land) -> [f64; 3] {
        match land {
            Land::Ground => [242.0, 239.0, 233.0],
            Land::Street => [255.0, 255.0, 255.0],
            Land::Avenue => [252.0, 214.0, 112.0],
            Land::Water => [170.0, 211.0, 223.0],
            Land::Park => [200.0, 230.0, 190.0],
            Land::Building(_) => [217.0, 208.0, 201.0],
        }
    }

    fn sat_color(&self, land: Land, season: Season, u: f64, v: f64) -> [f64; 3] {
        let base = match land {
            Land::Ground => [118.0, 112.0, 98.0],
            Land::Street => [92.0, 92.0, 96.0],
            Land::Avenue => [70.0, 70.0, 76.0],
            Land::Water => [32.0, 52.0, 72.0],
            Land::Park => match season {
                Season::Mar => [96.0, 110.0, 72.0],
                Season::Jun => [52.0, 102.0, 46.0],
                Season::Sep => [78.0, 96.0, 52.0],
                Season::Dec => [124.0, 118.0, 106.0],
            },
            Land::Building(k) => [
                [152.0, 142.0, 132.0],
                [108.0, 100.0, 96.0],
                [182.0, 176.0, 170.0],
                [132.0, 74.0, 62.0],
            ][k as usize],
        };
        let n = value_noise(self.seed ^ 0x7EE7, u * 40.0, v * 40.0) - 0.5;
        let grain = unit(hash(
            self.seed ^ 0x6A11,
            (u * 4096.0) as i64,
            (v * 4096.0) as i64,
        )) - 0.5;
        base.map(|c| c + 30.0 * n + 14.0 * grain)
    }

    fn cloud_cover(&self, scene_key: u64, cloud_fraction: f64, u: f64, v: f64) -> f64 {
        if cloud_fraction <= 0.0 {
            return 0.0;
        }
        let n = 0.6 * value_noise(scene_key, u * 3.0, v * 3.0)
            + 0.4 * value_noise(scene_key ^ 1, u * 7.0, v * 7.0);
        // Noise values cluster around 0.5; this cut covers roughly the asked fraction.
        let cut = 0.5 + 0.28 * (1.0 - 2.0 * cloud_fraction);
        ((n - cut) * 12.0).clamp(0.0, 1.0)
    }

    fn render(
        &self,
        row: u32,
        col: u32,
        px: u32,
        mut color: impl FnMut(Land, f64, f64) -> [f64; 3],
    ) -> RgbImage {
        let mut img = RgbImage::new(px, px);
        for (x, y, p) in img.enumerate_pixels_mut() {
            let u = col as f64 + (x as f64 + 0.5) / px as f64;
            let v = row as f64 + (y as f64 + 0.5) / px as f64;
            let c = color(self.land(u, v), u, v);
            *p = Rgb(c.map(|c| c.round().clamp(0.0, 255.0) as u8));
        }
        img
    }

    pub fn map_tile(&self, row: u32, col: u32, px: u32) -> RgbImage {
        self.render(row, col, px, |land, _, _| Self::map_color(land))
    }

    /// Satellite view; `cloud_fraction` > 0 overlays clouds keyed by `scene_key`.
    pub fn sat_tile(
        &self,
        row: u32,
        col: u32,
        px: u32,
        season: Season,
        cloud_fraction: f64,
        scene_key: u64,
    ) -> RgbImage {
        self.render(row, col, px, |land, u, v| {
            let c = self.sat_color(land, season, u, v);
            let a = self.cloud_cover(scene_key, cloud_fraction, u, v);
            c.map(|c| c * (1.0 - a) + 245.0 * a)
        })
    }
}

/// `n` aligned pairs from a city, walking tiles row-major over an 8-wide
/// grid and cycling through the seasons.
pub fn synthetic_pairs(n: usize, px: u32, seed: u64) -> InMemoryPairs {
    let city = City::new(seed);
    let pairs = (0..n)
        .map(|k| {
            let (row, col) = ((k / 8) as u32, (k % 8) as u32);
            let season = Season::ALL[k % 4];
            let sat = city.sat_tile(row, col, px, season, 0.0, 0);
            let map = city.map_tile(row, col, px);
            (rgb_to_tensor(&sat), rgb_to_tensor(&map))
        })
        .collect();
    InMemoryPairs::new(pairs)
}

/// Scene the selector is expected to pick for one tile and season.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpectedPick {
    pub tile_id: String,
    pub season: Season,
    pub scene_id: String,
    pub cloud_fraction: f64,
    /// Number of window extensions needed to reach the pick.
    pub extensions: u32,
}

/// Writes a mock-provider directory for `grid`.
///
/// Each (tile, season) cycles through four candidate layouts: a clear scene
/// inside the month; only cloudy scenes inside the month with a clear one 10
/// days before it (and a clearer one 20 days after); an in-month scene at exactly
/// the threshold with a clear one 25 days after; and two equally clear
/// in-month scenes. Returns the scene the default selector should pick.
pub fn write_mock_fixture(
    dir: &Path,
    grid: &[TileSpec],
    seasons: &[Season],
    year: i32,
    px: u32,
    seed: u64,
) -> Result<Vec<ExpectedPick>> {
    let city = City::new(seed);
    for sub in ["sat", "map"] {
        let d = dir.join(sub);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let mut index = String::new();
    let mut expected = Vec::new();
    for (k, spec) in grid.iter().enumerate() {
        let id = spec.tile_id();
        save_png(
            &city.map_tile(spec.row, spec.col, px),
            &dir.join("map").join(format!("{id}.png")),
        )?;
        for (si, &season) in seasons.iter().enumerate() {
            let w = season.window(year);
            let day = |d: i64| w.start + Duration::days(d - 1);
            let after = |d: i64| w.end + Duration::days(d);
            let (cands, pick, ext) = match (k + si) % 4 {
                0 => (vec![(day(5), 0.34), (day(14), 0.04), (day(22), 0.07)], 1, 0),
                1 => (
                    vec![
                        (day(3), 0.15),
                        (day(20), 0.30),
                        (w.start - Duration::days(10), 0.08),
                        (after(20), 0.01),
                    ],
                    2,
                    1,
                ),
                2 => (
                    vec![(day(8), 0.10), (day(16), 0.12), (after(25), 0.06)],
                    2,
                    2,
                ),
                _ => (vec![(day(21), 0.05), (day(9), 0.05)], 1, 0),
            };
            for (i, &(date, cloud)) in cands.iter().enumerate() {
                let scene_id = format!("{id}_{season}_{i}");
                writeln!(index, "{id}\t{scene_id}\t{date}\t{cloud}").unwrap();
                let key = hash(seed, k as i64, (si * 16 + i) as i64);
                let img = city.sat_tile(spec.row, spec.col, px, season, cloud, key);
                save_png(&img, &dir.join("sat").join(format!("{scene_id}.png")))?;
                if i == pick {
                    expected.push(ExpectedPick {
                        tile_id: id.clone(),
                        season,
                        scene_id,
                        cloud_fraction: cloud,
                        extensions: ext,
                    });
                }
            }
        }
    }
    let p = dir.join(SCENE_INDEX);
    std::fs::write(&p, index).map_err(|e| Error::io(&p, e))?;
    Ok(expected)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rendering_is_deterministic_and_seed_dependent() {
        let a = City::new(3).map_tile(1, 2, 64);
        assert_eq!(a, City::new(3).map_tile(1, 2, 64));
        assert_ne!(a, City::new(4).map_tile(1, 2, 64));
    }

    #[test]
    fn both_views_share_a_layout() {
        let city = City::new(11);
        let map = city.map_tile(0, 0, 64);
        let sat = city.sat_tile(0, 0, 64, Season::Jun, 0.0, 0);
        // Streets are white on the map and dark on the ground.
        let mut checked = 0;
        for (x, y, p) in map.enumerate_pixels() {
            if p.0 == [255, 255, 255] {
                assert!(sat.get_pixel(x, y).0[0] < 140);
                checked += 1;
            }
        }
        assert!(checked > 100);
    }

    #[test]
    fn cloud_fraction_is_roughly_honoured() {
        let city = City::new(5);
        for target in [0.05, 0.3] {
            let mut covered = 0;
            let n = 128;
            for y in 0..n {
                for x in 0..n {
                    let (u, v) = (x as f64 / n as f64 * 4.0, y as f64 / n as f64 * 4.0);
                    covered += (city.cloud_cover(99, target, u, v) > 0.5) as usize;
                }
            }
            let f = covered as f64 / (n * n) as f64;
            assert!((f - target).abs() < 0.2, "{target} -> {f}");
        }
    }
}

/// Latitude and western longitude of the synthetic city's grid origin.
pub const FIXTURE_ORIGIN: (f64, f64) = (40.7128, -74.006);

/// A mock provider for a `rows × cols` box at zoom 14 written under
/// `dir/provider`, and the dataset the pipeline builds from it under
/// `dir/dataset`. Images are `px` wide.
pub fn mock_dataset(
    dir: &Path,
    rows: u32,
    cols: u32,
    seasons: &[Season],
    px: u32,
    seed: u64,
) -> Result<(DatasetBuild, Vec<ExpectedPick>)> {
    let (lat, lon) = FIXTURE_ORIGIN;
    let bbox = box_of_tiles(lat, lon, rows, cols, 14, 512)?;
    let grid = generate_grid(&bbox, 14, 512)?;
    let opts = FetchOptions {
        seasons: seasons.to_vec(),
        workers: 1,
        ..FetchOptions::default()
    };
    let provider_dir = dir.join("provider");
    let expected = write_mock_fixture(&provider_dir, &grid, seasons, opts.year, px, seed)?;
    let provider = MockProvider::open(&provider_dir)?;
    let build = build_dataset(
        &bbox,
        14,
        512,
        &provider,
        &provider,
        &opts,
        &dir.join("dataset"),
    )?;
    Ok((build, expected))
}
