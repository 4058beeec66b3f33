//! Line-oriented manifest of paired satellite/map tiles.
//!
//! ```text
//! GEOGAN-MANIFEST v1 zoom=14 tile_px=512
//! 00000_00000_z14	MAR	40.712800	-74.006000	0.0312	sat/00000_00000_z14_MAR.png	map/00000_00000_z14.png
//! ```

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use chrono::{DateTime, SecondsFormat, Utc};

use super::scenes::Season;
use crate::error::{Error, Result};

pub const MAGIC: &str = "GEOGAN-MANIFEST";
pub const FORMAT_VERSION: u32 = 1;

fn quantize(v: f64, places: usize) -> f64 {
    format!("{v:.places$}")
        .parse()
        .expect("formatted float parses")
}

/// One aligned satellite/map pair for one season.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedSample {
    pub tile_id: String,
    pub season: Season,
    pub lat: f64,
    pub lon: f64,
    pub zoom: u32,
    pub cloud_fraction: f64,
    pub sat_path: String,
    pub map_path: String,
}

impl PairedSample {
    /// Builds a sample, rounding coordinates to 6 places and the cloud
    /// fraction to 4, which is the precision the manifest stores.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        tile_id: impl Into<String>,
        season: Season,
        lat: f64,
        lon: f64,
        zoom: u32,
        cloud_fraction: f64,
        sat_path: impl Into<String>,
        map_path: impl Into<String>,
    ) -> Result<Self> {
        let s = Self {
            tile_id: tile_id.into(),
            season,
            lat: quantize(lat, 6),
            lon: quantize(lon, 6),
            zoom,
            cloud_fraction: quantize(cloud_fraction, 4),
            sat_path: sat_path.into(),
            map_path: map_path.into(),
        };
        s.validate()?;
        Ok(s)
    }

    fn validate(&self) -> Result<()> {
        for (name, field) in [
            ("tile_id", &self.tile_id),
            ("sat_path", &self.sat_path),
            ("map_path", &self.map_path),
        ] {
            if field.is_empty() || field.contains(['\t', '\n', '\r']) {
                return Err(Error::invalid(format!(
                    "{name} {field:?} is empty or holds a tab/newline"
                )));
            }
        }
        if !self.lat.is_finite() || !self.lon.is_finite() {
            return Err(Error::invalid(format!(
                "non-finite coordinates for {}",
                self.tile_id
            )));
        }
        if !(0.0..=1.0).contains(&self.cloud_fraction) {
            return Err(Error::invalid(format!(
                "cloud fraction {} outside [0, 1] for {}",
                self.cloud_fraction, self.tile_id
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestHeader {
    pub format_version: u32,
    pub zoom: u32,
    pub tile_px: u32,
    /// Whole-second UTC timestamp, written as an optional trailing key.
    pub created: Option<DateTime<Utc>>,
}

impl ManifestHeader {
    pub fn new(zoom: u32, tile_px: u32) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            zoom,
            tile_px,
            created: None,
        }
    }

    /// Stamps the header with the current time, truncated to seconds.
    pub fn stamped(mut self) -> Self {
        let now = Utc::now();
        self.created = DateTime::from_timestamp(now.timestamp(), 0);
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub header: ManifestHeader,
    pub entries: Vec<PairedSample>,
}

impl Manifest {
    pub fn new(header: ManifestHeader, entries: Vec<PairedSample>) -> Result<Self> {
        let m = Self { header, entries };
        m.validate()?;
        Ok(m)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Checks every entry and that (tile_id, season) keys are unique.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for e in &self.entries {
            e.validate()?;
            if e.zoom != self.header.zoom {
                return Err(Error::invalid(format!(
                    "entry {} has zoom {}, manifest has {}",
                    e.tile_id, e.zoom, self.header.zoom
                )));
            }
            if !seen.insert((e.tile_id.as_str(), e.season)) {
                return Err(Error::DuplicateId {
                    tile_id: format!("{} {}", e.tile_id, e.season),
                    source_name: "manifest".into(),
                });
            }
        }
        Ok(())
    }

    pub fn to_text(&self) -> Result<String> {
        self.validate()?;
        let h = &self.header;
        let mut out = format!(
            "{MAGIC} v{} zoom={} tile_px={}",
            h.format_version, h.zoom, h.tile_px
        );
        if let Some(t) = h.created {
            write!(
                out,
                " created={}",
                t.to_rfc3339_opts(SecondsFormat::Secs, true)
            )
            .unwrap();
        }
        out.push('\n');
        for e in &self.entries {
            writeln!(
                out,
                "{}\t{}\t{:.6}\t{:.6}\t{:.4}\t{}\t{}",
                e.tile_id, e.season, e.lat, e.lon, e.cloud_fraction, e.sat_path, e.map_path
            )
            .unwrap();
        }
        Ok(out)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let parse_err = |line: usize, message: String| Error::Parse { line, message };
        let mut lines = text
            .split_inclusive('\n')
            .enumerate()
            .map(|(i, l)| (i + 1, l));
        let (_, first) = lines
            .next()
            .ok_or_else(|| parse_err(1, "empty file".into()))?;
        let first = first
            .strip_suffix('\n')
            .ok_or_else(|| parse_err(1, "header line is not newline-terminated".into()))?;
        let header = parse_header(first)?;
        let mut entries = Vec::new();
        for (n, raw) in lines {
            let line = raw
                .strip_suffix('\n')
                .ok_or_else(|| parse_err(n, "truncated line (no trailing newline)".into()))?;
            entries.push(parse_entry(line, header.zoom).map_err(|m| parse_err(n, m))?);
        }
        Self::new(header, entries)
    }
}

fn parse_header(line: &str) -> Result<ManifestHeader> {
    let err = |message: String| Error::Parse { line: 1, message };
    let mut parts = line.split(' ');
    if parts.next() != Some(MAGIC) {
        return Err(err(format!("expected {MAGIC} header, got {line:?}")));
    }
    let version = parts
        .next()
        .and_then(|v| v.strip_prefix('v'))
        .ok_or_else(|| err("missing format version".into()))?;
    let version: u32 = version
        .parse()
        .map_err(|_| err(format!("bad format version {version:?}")))?;
    if version != FORMAT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let mut field = |key: &str| -> Result<u32> {
        let kv = parts.next().ok_or_else(|| err(format!("missing {key}=")))?;
        let value = kv
            .strip_prefix(key)
            .and_then(|r| r.strip_prefix('='))
            .ok_or_else(|| err(format!("expected {key}=<n>, got {kv:?}")))?;
        value
            .parse()
            .map_err(|_| err(format!("bad {key} value {value:?}")))
    };
    let zoom = field("zoom")?;
    let tile_px = field("tile_px")?;
    let created = match parts.next() {
        None => None,
        Some(kv) => {
            let value = kv
                .strip_prefix("created=")
                .ok_or_else(|| err(format!("unexpected header field {kv:?}")))?;
            let t = DateTime::parse_from_rfc3339(value)
                .map_err(|e| err(format!("bad created timestamp: {e}")))?;
            Some(t.with_timezone(&Utc))
        }
    };
    if let Some(extra) = parts.next() {
        return Err(err(format!("unexpected header field {extra:?}")));
    }
    Ok(ManifestHeader {
        format_version: version,
        zoom,
        tile_px,
        created,
    })
}

fn parse_entry(line: &str, zoom: u32) -> std::result::Result<PairedSample, String> {
    let f: Vec<&str> = line.split('\t').collect();
    if f.len() != 7 {
        return Err(format!(
            "expected 7 tab-separated fields, found {}",
            f.len()
        ));
    }
    let num = |i: usize, name: &str| -> std::result::Result<f64, String> {
        f[i].parse::<f64>()
            .map_err(|_| format!("bad {name} {:?}", f[i]))
    };
    let season: Season = f[1].parse().map_err(|e: Error| e.to_string())?;
    let s = PairedSample {
        tile_id: f[0].to_string(),
        season,
        lat: num(2, "latitude")?,
        lon: num(3, "longitude")?,
        zoom,
        cloud_fraction: num(4, "cloud fraction")?,
        sat_path: f[5].to_string(),
        map_path: f[6].to_string(),
    };
    s.validate().map_err(|e| e.to_string())?;
    Ok(s)
}

pub fn write_manifest(m: &Manifest, path: &Path) -> Result<()> {
    let text = m.to_text()?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Manifest::parse(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample(row: u32, season: Season) -> PairedSample {
        let id = super::super::tile_id(row, 0, 14);
        PairedSample::new(
            id.clone(),
            season,
            40.712_812_345,
            -74.006_012_9,
            14,
            0.031_249,
            format!("sat/{id}_{season}.png"),
            format!("map/{id}.png"),
        )
        .unwrap()
    }

    #[test]
    fn empty_manifest_is_header_only() {
        let m = Manifest::new(ManifestHeader::new(14, 512), vec![]).unwrap();
        let text = m.to_text().unwrap();
        assert_eq!(text, "GEOGAN-MANIFEST v1 zoom=14 tile_px=512\n");
        assert_eq!(Manifest::parse(&text).unwrap(), m);
    }

    #[test]
    fn four_entries_round_trip_through_a_file() {
        let entries = Season::ALL.iter().map(|&s| sample(0, s)).collect();
        let m = Manifest::new(ManifestHeader::new(14, 512).stamped(), entries).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("manifest.txt");
        write_manifest(&m, &p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        assert_eq!(bytes.iter().filter(|&&b| b == b'\n').count(), 5);
        let back = read_manifest(&p).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_text().unwrap().into_bytes(), bytes);
        assert_eq!(back.entries[0].lat.to_bits(), m.entries[0].lat.to_bits());
    }

    #[test]
    fn values_are_stored_at_file_precision() {
        let s = sample(0, Season::Mar);
        assert_eq!(s.lat, 40.712_812);
        assert_eq!(s.lon, -74.006_013);
        assert_eq!(s.cloud_fraction, 0.0312);
    }

    #[test]
    fn truncated_last_line_names_the_line() {
        let entries = vec![sample(0, Season::Mar), sample(1, Season::Mar)];
        let text = Manifest::new(ManifestHeader::new(14, 512), entries)
            .unwrap()
            .to_text()
            .unwrap();
        let cut = &text[..text.len() - 10];
        match Manifest::parse(cut) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        let no_newline = &text[..text.len() - 1];
        assert!(matches!(
            Manifest::parse(no_newline),
            Err(Error::Parse { line: 3, .. })
        ));
    }

    #[test]
    fn malformed_fields_and_versions() {
        let bad = "GEOGAN-MANIFEST v1 zoom=14 tile_px=512\nx\tMAR\tnorth\t1.0\t0.1\ta\tb\n";
        assert!(matches!(
            Manifest::parse(bad),
            Err(Error::Parse { line: 2, .. })
        ));
        let v2 = "GEOGAN-MANIFEST v2 zoom=14 tile_px=512\n";
        assert!(matches!(
            Manifest::parse(v2),
            Err(Error::Version {
                found: 2,
                expected: 1
            })
        ));
        assert!(matches!(
            Manifest::parse("PNG\n"),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(matches!(
            Manifest::parse(""),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn duplicate_keys_are_rejected() {
        let entries = vec![sample(0, Season::Jun), sample(0, Season::Jun)];
        assert!(matches!(
            Manifest::new(ManifestHeader::new(14, 512), entries),
            Err(Error::DuplicateId { .. })
        ));
    }

    fn arb_manifest() -> impl Strategy<Value = Manifest> {
        let entry = (
            0u32..50,
            0usize..4,
            -85.0f64..85.0,
            -180.0f64..180.0,
            0.0f64..=1.0,
            "[a-z0-9_/.]{1,12}",
        );
        (
            prop::collection::vec(entry, 0..20),
            0u32..=22,
            1u32..2048,
            prop::option::of(0i64..4_000_000_000),
        )
            .prop_map(|(raw, zoom, px, ts)| {
                let mut seen = HashSet::new();
                let entries = raw
                    .into_iter()
                    .filter(|(r, s, ..)| seen.insert((*r, *s)))
                    .map(|(r, s, lat, lon, c, p)| {
                        let id = super::super::tile_id(r, 0, zoom);
                        PairedSample::new(id, Season::ALL[s], lat, lon, zoom, c, p.clone(), p)
                            .unwrap()
                    })
                    .collect();
                let mut header = ManifestHeader::new(zoom, px);
                header.created = ts.and_then(|t| DateTime::from_timestamp(t, 0));
                Manifest::new(header, entries).unwrap()
            })
    }

    proptest! {
        #[test]
        fn round_trip_is_the_identity(m in arb_manifest()) {
            let text = m.to_text().unwrap();
            let back = Manifest::parse(&text).unwrap();
            prop_assert_eq!(&back, &m);
            prop_assert_eq!(back.to_text().unwrap(), text);
        }
    }
}
