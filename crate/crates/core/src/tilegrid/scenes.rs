//! Seasonal scene selection under a cloud-cover threshold.

use std::fmt;
use std::str::FromStr;

use chrono::{Datelike, Duration, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scenes at or above this cloud fraction are never selected.
pub const DEFAULT_CLOUD_THRESHOLD: f64 = 0.10;
/// Days added on each side of the window per extension.
pub const DEFAULT_EXTENSION_DAYS: i64 = 15;
pub const DEFAULT_MAX_EXTENSIONS: u32 = 4;

/// The four sampled months. Declaration order is the manifest order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Season {
    Mar,
    Jun,
    Sep,
    Dec,
}

impl Season {
    pub const ALL: [Season; 4] = [Season::Mar, Season::Jun, Season::Sep, Season::Dec];

    pub fn month(self) -> u32 {
        match self {
            Season::Mar => 3,
            Season::Jun => 6,
            Season::Sep => 9,
            Season::Dec => 12,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Season::Mar => "MAR",
            Season::Jun => "JUN",
            Season::Sep => "SEP",
            Season::Dec => "DEC",
        }
    }

    /// The whole target month of `year`.
    pub fn window(self, year: i32) -> DateWindow {
        let start = NaiveDate::from_ymd_opt(year, self.month(), 1).expect("valid month start");
        let next = if self.month() == 12 {
            NaiveDate::from_ymd_opt(year + 1, 1, 1)
        } else {
            NaiveDate::from_ymd_opt(year, self.month() + 1, 1)
        }
        .expect("valid month start");
        DateWindow {
            start,
            end: next.pred_opt().expect("valid date"),
        }
    }

    /// Parses a comma-separated list such as `mar,jun,sep,dec`.
    pub fn parse_list(s: &str) -> Result<Vec<Season>> {
        let mut out: Vec<Season> = s
            .split(',')
            .filter(|p| !p.trim().is_empty())
            .map(|p| p.trim().parse())
            .collect::<Result<_>>()?;
        if out.is_empty() {
            return Err(Error::invalid("no seasons given"));
        }
        out.sort();
        out.dedup();
        Ok(out)
    }
}

impl fmt::Display for Season {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Season {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "MAR" => Ok(Season::Mar),
            "JUN" => Ok(Season::Jun),
            "SEP" => Ok(Season::Sep),
            "DEC" => Ok(Season::Dec),
            _ => Err(Error::invalid(format!(
                "unknown season {s:?}; expected one of MAR, JUN, SEP, DEC"
            ))),
        }
    }
}

/// Inclusive calendar date range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DateWindow {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl DateWindow {
    pub fn new(start: NaiveDate, end: NaiveDate) -> Result<Self> {
        if start > end {
            return Err(Error::invalid(format!("empty date window {start}..{end}")));
        }
        Ok(Self { start, end })
    }

    pub fn contains(&self, d: NaiveDate) -> bool {
        self.start <= d && d <= self.end
    }

    pub fn widened(&self, days: i64) -> Self {
        Self {
            start: self.start - Duration::days(days),
            end: self.end + Duration::days(days),
        }
    }

    pub fn year(&self) -> i32 {
        self.start.year()
    }
}

impl fmt::Display for DateWindow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}..{}", self.start, self.end)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneCandidate {
    pub scene_id: String,
    pub acquisition_date: NaiveDate,
    pub cloud_fraction: f64,
}

impl SceneCandidate {
    pub fn new(
        scene_id: impl Into<String>,
        acquisition_date: NaiveDate,
        cloud_fraction: f64,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&cloud_fraction) {
            return Err(Error::invalid(format!(
                "cloud fraction {cloud_fraction} outside [0, 1]"
            )));
        }
        Ok(Self {
            scene_id: scene_id.into(),
            acquisition_date,
            cloud_fraction,
        })
    }
}

/// Least-cloud scene selection with window extension.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneSelector {
    pub cloud_threshold: f64,
    pub extension_days: i64,
    pub max_extensions: u32,
}

impl Default for SceneSelector {
    fn default() -> Self {
        Self {
            cloud_threshold: DEFAULT_CLOUD_THRESHOLD,
            extension_days: DEFAULT_EXTENSION_DAYS,
            max_extensions: DEFAULT_MAX_EXTENSIONS,
        }
    }
}

impl SceneSelector {
    /// Window searched after `k` extensions.
    pub fn window_after(&self, base: &DateWindow, k: u32) -> DateWindow {
        base.widened(self.extension_days * k as i64)
    }

    /// The widest window the selector may ever look at.
    pub fn widest(&self, base: &DateWindow) -> DateWindow {
        self.window_after(base, self.max_extensions)
    }

    /// Picks the least cloudy in-window candidate strictly under the
    /// threshold, widening the window up to `max_extensions` times.
    /// Ties go to the earliest acquisition, then the smallest scene id.
    pub fn select(
        &self,
        tile_id: &str,
        candidates: &[SceneCandidate],
        window: &DateWindow,
    ) -> Result<SceneCandidate> {
        let mut best_seen: Option<f64> = None;
        for k in 0..=self.max_extensions {
            let w = self.window_after(window, k);
            let best = candidates
                .iter()
                .filter(|c| {
                    w.contains(c.acquisition_date) && (0.0..=1.0).contains(&c.cloud_fraction)
                })
                .min_by(|a, b| {
                    a.cloud_fraction
                        .total_cmp(&b.cloud_fraction)
                        .then(a.acquisition_date.cmp(&b.acquisition_date))
                        .then(a.scene_id.cmp(&b.scene_id))
                });
            if let Some(b) = best {
                best_seen = Some(b.cloud_fraction);
                if b.cloud_fraction < self.cloud_threshold {
                    return Ok(b.clone());
                }
            }
        }
        Err(Error::NoScene {
            tile_id: tile_id.to_string(),
            window: self.widest(window).to_string(),
            best: best_seen,
        })
    }
}

/// [`SceneSelector::select`] with the default threshold and extension step.
pub fn select_scene(
    tile_id: &str,
    candidates: &[SceneCandidate],
    window: &DateWindow,
    max_extensions: u32,
) -> Result<SceneCandidate> {
    SceneSelector {
        max_extensions,
        ..SceneSelector::default()
    }
    .select(tile_id, candidates, window)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn day(m: u32, d: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(2019, m, d).unwrap()
    }

    fn cand(id: &str, m: u32, d: u32, c: f64) -> SceneCandidate {
        SceneCandidate::new(id, day(m, d), c).unwrap()
    }

    #[test]
    fn picks_the_least_cloudy() {
        let w = Season::Mar.window(2019);
        let cs = [cand("a", 3, 4, 0.03), cand("b", 3, 20, 0.12)];
        assert_eq!(select_scene("t", &cs, &w, 4).unwrap().scene_id, "a");
    }

    #[test]
    fn extends_when_nothing_is_clear_enough() {
        let w = Season::Jun.window(2019);
        let cs = [
            cand("a", 6, 4, 0.15),
            cand("b", 6, 20, 0.30),
            cand("c", 7, 10, 0.08),
        ];
        let pick = select_scene("t", &cs, &w, 4).unwrap();
        assert_eq!(pick.scene_id, "c");
        // Without extensions the July scene is out of reach.
        assert!(select_scene("t", &cs, &w, 0).is_err());
    }

    #[test]
    fn empty_list_is_a_no_scene_error() {
        let w = Season::Sep.window(2019);
        match select_scene("00001_00002_z14", &[], &w, 4) {
            Err(Error::NoScene { tile_id, best, .. }) => {
                assert_eq!(tile_id, "00001_00002_z14");
                assert_eq!(best, None);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn ties_go_to_the_earliest_date() {
        let w = Season::Dec.window(2019);
        let cs = [cand("late", 12, 28, 0.05), cand("early", 12, 2, 0.05)];
        assert_eq!(select_scene("t", &cs, &w, 0).unwrap().scene_id, "early");
    }

    #[test]
    fn threshold_is_strict_and_configurable() {
        let w = Season::Mar.window(2019);
        let cs = [cand("a", 3, 4, 0.10)];
        assert!(select_scene("t", &cs, &w, 4).is_err());
        let lax = SceneSelector {
            cloud_threshold: 0.2,
            ..SceneSelector::default()
        };
        assert_eq!(lax.select("t", &cs, &w).unwrap().scene_id, "a");
    }

    #[test]
    fn month_windows_and_widening() {
        let w = Season::Dec.window(2019);
        assert_eq!((w.start, w.end), (day(12, 1), day(12, 31)));
        let w2 = SceneSelector::default().window_after(&w, 2);
        assert_eq!(w2.start, day(11, 1));
        assert_eq!(w2.end, NaiveDate::from_ymd_opt(2020, 1, 30).unwrap());
        assert!(DateWindow::new(day(3, 2), day(3, 1)).is_err());
    }

    #[test]
    fn season_lists_parse_in_manifest_order() {
        assert_eq!(
            Season::parse_list("dec,mar,jun,sep").unwrap(),
            Season::ALL.to_vec()
        );
        assert!(Season::parse_list("apr").is_err());
        assert!(SceneCandidate::new("x", day(3, 1), 1.5).is_err());
    }

    fn arb_candidates() -> impl Strategy<Value = Vec<SceneCandidate>> {
        prop::collection::vec((1u32..=200, 0.0f64..1.0), 0..12).prop_map(|v| {
            v.into_iter()
                .enumerate()
                .map(|(i, (doy, c))| {
                    let d = NaiveDate::from_yo_opt(2019, doy).unwrap();
                    SceneCandidate::new(format!("s{i}"), d, (c * 1e4).round() / 1e4).unwrap()
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn result_is_minimal_over_its_window(cs in arb_candidates()) {
            let base = Season::Mar.window(2019);
            let sel = SceneSelector::default();
            if let Ok(pick) = sel.select("t", &cs, &base) {
                prop_assert!(pick.cloud_fraction < sel.cloud_threshold);
                // The smallest k whose window holds a clear candidate.
                let k = (0..=sel.max_extensions)
                    .find(|&k| {
                        let w = sel.window_after(&base, k);
                        cs.iter().any(|c| w.contains(c.acquisition_date) && c.cloud_fraction < sel.cloud_threshold)
                    })
                    .unwrap();
                let w = sel.window_after(&base, k);
                prop_assert!(w.contains(pick.acquisition_date));
                for c in cs.iter().filter(|c| w.contains(c.acquisition_date)) {
                    prop_assert!(pick.cloud_fraction <= c.cloud_fraction);
                }
            }
        }

        #[test]
        fn cloudier_candidates_never_change_the_pick(cs in arb_candidates(), doy in 1u32..=200, extra in 0.0f64..1.0) {
            let base = Season::Mar.window(2019);
            let sel = SceneSelector::default();
            if let Ok(pick) = sel.select("t", &cs, &base) {
                // A candidate at or above the threshold, anywhere.
                let cloudy = 0.10 + extra * 0.9;
                let mut more = cs.clone();
                more.push(SceneCandidate::new("zz", NaiveDate::from_yo_opt(2019, doy).unwrap(), cloudy).unwrap());
                prop_assert_eq!(&sel.select("t", &more, &base).unwrap(), &pick);

                // A strictly cloudier candidate inside a base-window pick's window.
                if base.contains(pick.acquisition_date) && pick.cloud_fraction < 1.0 {
                    let c = pick.cloud_fraction + (1.0 - pick.cloud_fraction) * extra.max(1e-3);
                    let mut more = cs.clone();
                    more.push(SceneCandidate::new("zz", base.start, c.min(1.0)).unwrap());
                    prop_assert_eq!(&sel.select("t", &more, &base).unwrap(), &pick);
                }
            }
        }
    }
}
