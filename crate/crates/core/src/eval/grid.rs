use image::{Rgb, RgbImage};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::MapGenerator;
use crate::data::{tensor_to_rgb, PairSource};
use crate::error::{Error, Result};
use crate::Tensor;

/// White space between neighbouring tiles, in pixels.
pub const GUTTER: u32 = 2;

fn side(n: usize) -> Result<usize> {
    let k = (n as f64).sqrt().round() as usize;
    if n == 0 || k * k != n {
        return Err(Error::invalid(format!(
            "grid size must be a positive perfect square, got {n}"
        )));
    }
    Ok(k)
}

/// `n` distinct indices below `len`, a function of the seed only.
pub fn sample_indices(len: usize, n: usize, seed: u64) -> Result<Vec<usize>> {
    if n > len {
        return Err(Error::invalid(format!("cannot sample {n} of {len} pairs")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(rand::seq::index::sample(&mut rng, len, n).into_vec())
}

/// Lays single images `[1, h, w, 3]` out row-major on a square grid.
pub fn render_grid(images: &[Tensor]) -> Result<RgbImage> {
    let k = side(images.len())? as u32;
    let tiles = images
        .iter()
        .map(|t| tensor_to_rgb(t, 0))
        .collect::<Result<Vec<_>>>()?;
    let (w, h) = tiles[0].dimensions();
    if tiles.iter().any(|t| t.dimensions() != (w, h)) {
        return Err(Error::invalid("grid tiles differ in size"));
    }
    let mut out = RgbImage::from_pixel(
        k * w + (k - 1) * GUTTER,
        k * h + (k - 1) * GUTTER,
        Rgb([255; 3]),
    );
    for (i, tile) in tiles.iter().enumerate() {
        let (r, c) = (i as u32 / k, i as u32 % k);
        image::imageops::replace(
            &mut out,
            tile,
            (c * (w + GUTTER)) as i64,
            (r * (h + GUTTER)) as i64,
        );
    }
    Ok(out)
}

/// Generated maps for `n` seeded-random pairs, as a √n × √n grid.
pub fn sample_grid(
    gen: &dyn MapGenerator,
    data: &dyn PairSource,
    n: usize,
    seed: u64,
) -> Result<RgbImage> {
    side(n)?;
    let idx = sample_indices(data.len(), n, seed)?;
    let mut fakes = Vec::with_capacity(n);
    for i in idx {
        let (sat, real) = data.pair(i)?;
        fakes.push(gen.generate(&sat, &real)?);
    }
    render_grid(&fakes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::InMemoryPairs;
    use crate::eval::OracleGenerator;

    fn data(n: usize) -> InMemoryPairs {
        InMemoryPairs::new(
            (0..n)
                .map(|i| {
                    let v = i as f64 / n as f64 * 2.0 - 1.0;
                    (
                        Tensor::full(&[1, 4, 4, 3], 0.0),
                        Tensor::full(&[1, 4, 4, 3], v),
                    )
                })
                .collect(),
        )
    }

    #[test]
    fn nine_gives_three_by_three() {
        let g = sample_grid(&OracleGenerator, &data(12), 9, 7).unwrap();
        assert_eq!(g.dimensions(), (3 * 4 + 2 * GUTTER, 3 * 4 + 2 * GUTTER));
        assert_eq!(g.get_pixel(4, 0), &Rgb([255; 3]));
    }

    #[test]
    fn one_is_a_single_tile() {
        let g = sample_grid(&OracleGenerator, &data(3), 1, 0).unwrap();
        assert_eq!(g.dimensions(), (4, 4));
    }

    #[test]
    fn non_square_rejected() {
        assert!(matches!(
            sample_grid(&OracleGenerator, &data(12), 8, 0),
            Err(Error::InvalidArgument(_))
        ));
        assert!(sample_grid(&OracleGenerator, &data(3), 4, 0).is_err());
    }

    #[test]
    fn seeded_selection() {
        assert_eq!(
            sample_indices(100, 9, 5).unwrap(),
            sample_indices(100, 9, 5).unwrap()
        );
        assert_ne!(
            sample_indices(100, 9, 5).unwrap(),
            sample_indices(100, 9, 6).unwrap()
        );
        let a = sample_grid(&OracleGenerator, &data(20), 4, 3).unwrap();
        let b = sample_grid(&OracleGenerator, &data(20), 4, 3).unwrap();
        assert_eq!(a, b);
    }
}
