//! Web Mercator ground resolution and city tile grids.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// WGS84 equatorial radius in meters.
pub const EARTH_RADIUS_M: f64 = 6_378_137.0;
/// Pixel width of a base tile in the slippy-map scheme.
pub const BASE_TILE_PX: f64 = 256.0;
/// Latitude limit of the Web Mercator square.
pub const MAX_LATITUDE: f64 = 85.051_128_78;
pub const MAX_ZOOM: u32 = 22;
/// Meters per pixel at the equator, zoom 0.
pub const EQUATOR_RESOLUTION: f64 = 2.0 * std::f64::consts::PI * EARTH_RADIUS_M / BASE_TILE_PX;

fn check_latitude(lat: f64) -> Result<()> {
    if !lat.is_finite() || lat.abs() > MAX_LATITUDE {
        return Err(Error::invalid(format!(
            "latitude {lat} outside Web Mercator bounds ±{MAX_LATITUDE}"
        )));
    }
    Ok(())
}

/// Meters represented by one pixel at `lat` degrees and `zoom`.
pub fn ground_resolution(lat: f64, zoom: i32) -> Result<f64> {
    check_latitude(lat)?;
    if zoom < 0 {
        return Err(Error::invalid(format!(
            "zoom must be non-negative, got {zoom}"
        )));
    }
    Ok(EQUATOR_RESOLUTION * lat.to_radians().cos() / 2f64.powi(zoom))
}

/// Geographic bounding box in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoBox {
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
}

impl GeoBox {
    pub fn new(lat_min: f64, lat_max: f64, lon_min: f64, lon_max: f64) -> Result<Self> {
        let b = Self {
            lat_min,
            lat_max,
            lon_min,
            lon_max,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        check_latitude(self.lat_min)?;
        check_latitude(self.lat_max)?;
        for lon in [self.lon_min, self.lon_max] {
            if !lon.is_finite() || lon.abs() > 180.0 {
                return Err(Error::invalid(format!(
                    "longitude {lon} outside [-180, 180]"
                )));
            }
        }
        if self.lat_min >= self.lat_max {
            return Err(Error::invalid(format!(
                "degenerate box: lat_min {} >= lat_max {}",
                self.lat_min, self.lat_max
            )));
        }
        if self.lon_min >= self.lon_max {
            return Err(Error::invalid(format!(
                "degenerate box: lon_min {} >= lon_max {}",
                self.lon_min, self.lon_max
            )));
        }
        Ok(())
    }

    pub fn center_lat(&self) -> f64 {
        0.5 * (self.lat_min + self.lat_max)
    }
}

/// One map/satellite tile request, located by its grid position.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TileSpec {
    pub center_lat: f64,
    pub center_lon: f64,
    pub zoom: u32,
    pub size_px: u32,
    pub row: u32,
    pub col: u32,
}

impl TileSpec {
    pub fn validate(&self) -> Result<()> {
        check_latitude(self.center_lat)?;
        if self.zoom > MAX_ZOOM {
            return Err(Error::invalid(format!(
                "zoom {} above {MAX_ZOOM}",
                self.zoom
            )));
        }
        if self.size_px == 0 {
            return Err(Error::invalid("tile size must be positive"));
        }
        Ok(())
    }

    pub fn tile_id(&self) -> String {
        tile_id(self.row, self.col, self.zoom)
    }
}

pub fn tile_id(row: u32, col: u32, zoom: u32) -> String {
    format!("{row:05}_{col:05}_z{zoom}")
}

/// Angular extent of one tile: (degrees of latitude, degrees of longitude).
///
/// Both correspond to `size_px · ground_resolution(center_lat)` meters on the
/// ground; the latitude step is evaluated once at the box's center.
pub fn tile_extent_degrees(center_lat: f64, zoom: u32, size_px: u32) -> (f64, f64) {
    let dlon = size_px as f64 * 360.0 / (BASE_TILE_PX * 2f64.powi(zoom as i32));
    (dlon * center_lat.to_radians().cos(), dlon)
}

/// Box spanning exactly `rows × cols` tiles, centred on `center_lat` and
/// starting at `west_lon`.
pub fn box_of_tiles(
    center_lat: f64,
    west_lon: f64,
    rows: u32,
    cols: u32,
    zoom: u32,
    size_px: u32,
) -> Result<GeoBox> {
    if rows == 0 || cols == 0 {
        return Err(Error::invalid(
            "a tile box needs at least one row and column",
        ));
    }
    let (dlat, dlon) = tile_extent_degrees(center_lat, zoom, size_px);
    let half = rows as f64 * dlat / 2.0;
    GeoBox::new(
        center_lat - half,
        center_lat + half,
        west_lon,
        west_lon + cols as f64 * dlon,
    )
}

fn cover_count(span: f64, step: f64) -> u32 {
    // Tolerate round-off so a span of exactly k tiles is not bumped to k+1.
    ((span / step) - 1e-9).ceil().max(1.0) as u32
}

/// Tiles covering `bbox`, row-major from the north-west corner.
pub fn generate_grid(bbox: &GeoBox, zoom: u32, size_px: u32) -> Result<Vec<TileSpec>> {
    bbox.validate()?;
    if zoom > MAX_ZOOM {
        return Err(Error::invalid(format!("zoom {zoom} above {MAX_ZOOM}")));
    }
    if size_px == 0 {
        return Err(Error::invalid("tile size must be positive"));
    }
    let (dlat, dlon) = tile_extent_degrees(bbox.center_lat(), zoom, size_px);
    let rows = cover_count(bbox.lat_max - bbox.lat_min, dlat);
    let cols = cover_count(bbox.lon_max - bbox.lon_min, dlon);
    let mut tiles = Vec::with_capacity((rows * cols) as usize);
    for row in 0..rows {
        for col in 0..cols {
            let spec = TileSpec {
                center_lat: bbox.lat_max - (row as f64 + 0.5) * dlat,
                center_lon: bbox.lon_min + (col as f64 + 0.5) * dlon,
                zoom,
                size_px,
                row,
                col,
            };
            spec.validate()?;
            tiles.push(spec);
        }
    }
    Ok(tiles)
}
