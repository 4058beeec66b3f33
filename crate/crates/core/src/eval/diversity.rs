use crate::error::{Error, Result};
use crate::Tensor;

/// Generated spread below this fraction of the real spread counts as collapse.
pub const DEFAULT_COLLAPSE_THRESHOLD: f64 = 0.1;

/// Mean Euclidean distance over all unordered pairs of samples.
pub fn mean_pairwise_l2(samples: &[Tensor]) -> Result<f64> {
    if samples.len() < 2 {
        return Err(Error::invalid("pairwise spread needs at least two samples"));
    }
    let shape = samples[0].shape();
    if samples.iter().any(|s| s.shape() != shape) {
        return Err(Error::invalid("samples differ in shape"));
    }
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..samples.len() {
        for j in i + 1..samples.len() {
            let d: f64 = samples[i]
                .data()
                .iter()
                .zip(samples[j].data())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            total += d.sqrt();
            pairs += 1;
        }
    }
    Ok(total / pairs as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CollapseReport {
    pub generated_spread: f64,
    pub real_spread: f64,
    pub threshold: f64,
    pub collapsed: bool,
}

/// Compares the spread of generated samples with that of real ones.
pub fn detect_collapse(
    generated: &[Tensor],
    real: &[Tensor],
    threshold: f64,
) -> Result<CollapseReport> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::invalid(format!(
            "collapse threshold must lie in [0, 1], got {threshold}"
        )));
    }
    let generated_spread = mean_pairwise_l2(generated)?;
    let real_spread = mean_pairwise_l2(real)?;
    Ok(CollapseReport {
        generated_spread,
        real_spread,
        threshold,
        collapsed: generated_spread < threshold * real_spread || generated_spread == 0.0,
    })
}
