//! Similarity metrics over held-out pairs, sample grids, the collapse
//! detector and the MNIST sanity run.

mod diversity;
mod grid;
mod mnist;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use diversity::{
    detect_collapse, mean_pairwise_l2, CollapseReport, DEFAULT_COLLAPSE_THRESHOLD,
};
pub use grid::{render_grid, sample_grid, sample_indices, GUTTER};
pub use mnist::{
    mnist_cond_image, mnist_map_image, mnist_pairs, mnist_sanity, read_idx_images, read_idx_labels,
    IdxImages, MnistConfig, MnistReport,
};

use crate::data::{ManifestDataset, PairSource};
use crate::error::{Error, Result};
use crate::losses::{reconstruction_value, style_loss_value, LossWeights, RecNorm};
use crate::models::{generate_tensor, ArchConfig, ParamSet};
use crate::Tensor;

/// Anything that turns a satellite tile into a map tile.
pub trait MapGenerator {
    /// `sat` and `real` are single pairs `[1, h, w, c]`; `real` is only for
    /// oracles.
    fn generate(&self, sat: &Tensor, real: &Tensor) -> Result<Tensor>;
}

/// A trained model in inference mode.
///
/// Injected noise is seeded from the run seed and the satellite pixels, so
/// a tile always gets the same map whatever order it is visited in.
pub struct ModelGenerator<'a> {
    pub params: &'a ParamSet,
    pub arch: &'a ArchConfig,
    pub seed: u64,
}

impl MapGenerator for ModelGenerator<'_> {
    fn generate(&self, sat: &Tensor, _real: &Tensor) -> Result<Tensor> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(content_key(sat));
        generate_tensor(self.params, self.arch, sat, &mut rng)
    }
}

/// Returns the ground-truth map.
pub struct OracleGenerator;

impl MapGenerator for OracleGenerator {
    fn generate(&self, _sat: &Tensor, real: &Tensor) -> Result<Tensor> {
        Ok(real.clone())
    }
}

pub(crate) fn content_key(t: &Tensor) -> u64 {
    t.data()
        .iter()
        .flat_map(|v| v.to_bits().to_le_bytes())
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
            (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
        })
}

/// Per-pair means over a test set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsReport {
    pub mean_l1: f64,
    pub mean_l2: f64,
    pub mean_style: f64,
    /// `mean_l2 + w_style·mean_style`.
    pub combined: f64,
    pub sample_count: usize,
}

impl MetricsReport {
    pub fn from_means(
        mean_l1: f64,
        mean_l2: f64,
        mean_style: f64,
        w_style: f64,
        sample_count: usize,
    ) -> Self {
        Self {
            mean_l1,
            mean_l2,
            mean_style,
            combined: mean_l2 + w_style * mean_style,
            sample_count,
        }
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "mean_l1={} mean_l2={} mean_style={} combined={} sample_count={}",
            self.mean_l1, self.mean_l2, self.mean_style, self.combined, self.sample_count
        )
    }
}

impl FromStr for MetricsReport {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut vals: [Option<&str>; 5] = [None; 5];
        const KEYS: [&str; 5] = [
            "mean_l1",
            "mean_l2",
            "mean_style",
            "combined",
            "sample_count",
        ];
        for field in s.split_whitespace() {
            let (k, v) = field.split_once('=').ok_or_else(|| {
                Error::invalid(format!("metrics field {field:?} is not key=value"))
            })?;
            let i = KEYS
                .iter()
                .position(|&key| key == k)
                .ok_or_else(|| Error::invalid(format!("unknown metrics key {k:?}")))?;
            if vals[i].replace(v).is_some() {
                return Err(Error::invalid(format!("metrics key {k:?} repeated")));
            }
        }
        let get = |i: usize| {
            vals[i].ok_or_else(|| Error::invalid(format!("metrics record lacks {}", KEYS[i])))
        };
        let num = |i: usize| -> Result<f64> {
            let v = get(i)?;
            v.parse()
                .map_err(|_| Error::invalid(format!("bad {} value {v:?}", KEYS[i])))
        };
        let count = get(4)?;
        Ok(Self {
            mean_l1: num(0)?,
            mean_l2: num(1)?,
            mean_style: num(2)?,
            combined: num(3)?,
            sample_count: count
                .parse()
                .map_err(|_| Error::invalid(format!("bad sample_count {count:?}")))?,
        })
    }
}

/// Runs `gen` over every pair and averages L1, L2 and style distances.
/// Pairs are reduced in index order.
pub fn evaluate_pairs(
    gen: &dyn MapGenerator,
    data: &dyn PairSource,
    w_style: f64,
) -> Result<MetricsReport> {
    if data.is_empty() {
        return Err(Error::invalid("evaluation set is empty"));
    }
    if !w_style.is_finite() || w_style < 0.0 {
        return Err(Error::invalid(format!(
            "w_style must be finite and ≥ 0, got {w_style}"
        )));
    }
    let (mut l1, mut l2, mut style) = (0.0, 0.0, 0.0);
    for i in 0..data.len() {
        let (sat, real) = data.pair(i)?;
        let fake = gen.generate(&sat, &real)?;
        if !fake.all_finite() {
            return Err(Error::numerical("generator output"));
        }
        l1 += reconstruction_value(&fake, &real, RecNorm::L1)?;
        l2 += reconstruction_value(&fake, &real, RecNorm::L2)?;
        style += style_loss_value(&fake, &real)?;
    }
    let n = data.len() as f64;
    Ok(MetricsReport::from_means(
        l1 / n,
        l2 / n,
        style / n,
        w_style,
        data.len(),
    ))
}

/// Metrics of a trained model on the pairs a manifest lists.
pub fn evaluate(
    params: &ParamSet,
    arch: &ArchConfig,
    manifest: &Path,
    weights: &LossWeights,
    seed: u64,
) -> Result<MetricsReport> {
    params.check_layout(&crate::models::layout(arch)?)?;
    let data = ManifestDataset::open(manifest, arch.image_size as u32)?;
    let gen = ModelGenerator { params, arch, seed };
    evaluate_pairs(&gen, &data, weights.w_style)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::InMemoryPairs;

    fn pairs(n: usize, s: usize, seed: u64) -> InMemoryPairs {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        InMemoryPairs::new(
            (0..n)
                .map(|_| {
                    let a = Tensor::from_fn(&[1, s, s, 3], |_| rng.random_range(-1.0..1.0));
                    let b = Tensor::from_fn(&[1, s, s, 3], |_| rng.random_range(-1.0..1.0));
                    (a, b)
                })
                .collect(),
        )
    }

    struct Shift(f64);

    impl MapGenerator for Shift {
        fn generate(&self, _sat: &Tensor, real: &Tensor) -> Result<Tensor> {
            Ok(real.map(|v| v + self.0))
        }
    }

    #[test]
    fn oracle_scores_zero() {
        let r = evaluate_pairs(&OracleGenerator, &pairs(4, 8, 1), 1.0).unwrap();
        assert_eq!(
            (r.mean_l1, r.mean_l2, r.mean_style, r.combined),
            (0.0, 0.0, 0.0, 0.0)
        );
        assert_eq!(r.sample_count, 4);
    }

    #[test]
    fn unit_difference_at_64() {
        let r = evaluate_pairs(&Shift(1.0), &pairs(1, 64, 2), 0.0).unwrap();
        assert!((r.mean_l2 - 12288f64.sqrt()).abs() < 1e-9);
        assert!((r.mean_l1 - 12288.0).abs() < 1e-9);
    }

    #[test]
    fn combined_is_definitional() {
        let r = evaluate_pairs(&Shift(0.3), &pairs(3, 8, 3), 2.5).unwrap();
        assert!((r.combined - (r.mean_l2 + 2.5 * r.mean_style)).abs() < 1e-12);
    }

    #[test]
    fn empty_set_rejected() {
        assert!(matches!(
            evaluate_pairs(&OracleGenerator, &InMemoryPairs::default(), 1.0),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn record_round_trips() {
        let r = evaluate_pairs(&Shift(0.1), &pairs(2, 4, 4), 1.0).unwrap();
        let back: MetricsReport = r.to_string().parse().unwrap();
        assert_eq!(back, r);
        assert!("mean_l1=1".parse::<MetricsReport>().is_err());
    }
}
