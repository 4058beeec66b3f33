//! Image decoding and paired-sample datasets.

use std::path::{Path, PathBuf};

use image::imageops::FilterType;
use image::{Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::tilegrid::{read_manifest, Manifest, PairedSample};
use crate::Tensor;

/// Converts an 8-bit RGB image to a `[1, h, w, 3]` tensor in [-1, 1].
pub fn rgb_to_tensor(img: &RgbImage) -> Tensor {
    let (w, h) = img.dimensions();
    let data = img
        .as_raw()
        .iter()
        .map(|&v| v as f64 / 127.5 - 1.0)
        .collect();
    Tensor::new(vec![1, h as usize, w as usize, 3], data)
        .expect("rgb buffer matches its dimensions")
}

/// Converts one image of a `[n, h, w, 3]` tensor back to 8-bit RGB.
pub fn tensor_to_rgb(t: &Tensor, index: usize) -> Result<RgbImage> {
    let (n, h, w, c) = t.dims4().map_err(|e| Error::shape("tensor_to_rgb", e))?;
    if c != 3 || index >= n {
        return Err(Error::invalid(format!(
            "cannot render image {index} of shape {:?}",
            t.shape()
        )));
    }
    let per = h * w * 3;
    let px = &t.data()[index * per..(index + 1) * per];
    let buf = px.iter().map(|&v| to_u8(v)).collect();
    Ok(RgbImage::from_raw(w as u32, h as u32, buf).expect("buffer matches its dimensions"))
}

/// Affine map from [-1, 1] to 0..=255, clamped.
pub fn to_u8(v: f64) -> u8 {
    ((v + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8
}

pub fn load_rgb(path: &Path) -> Result<RgbImage> {
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(img.to_rgb8())
}

pub fn save_png(img: &RgbImage, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
}

/// Loads an image and resamples it bilinearly to `size`×`size`.
pub fn load_image_tensor(path: &Path, size: u32) -> Result<Tensor> {
    let img = load_rgb(path)?;
    let img = if img.dimensions() == (size, size) {
        img
    } else {
        image::imageops::resize(&img, size, size, FilterType::Triangle)
    };
    Ok(rgb_to_tensor(&img))
}

/// Pads the borders of an `RgbImage` with `fill` to `size`×`size`, centred.
pub fn pad_to(img: &RgbImage, size: u32, fill: [u8; 3]) -> RgbImage {
    let (w, h) = img.dimensions();
    let mut out = RgbImage::from_pixel(size, size, Rgb(fill));
    let (ox, oy) = ((size - w) / 2, (size - h) / 2);
    image::imageops::replace(&mut out, img, ox as i64, oy as i64);
    out
}

/// Indexed collection of aligned (satellite, map) image pairs.
pub trait PairSource {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Pair `i` as two `[1, h, w, 3]` tensors.
    fn pair(&self, i: usize) -> Result<(Tensor, Tensor)>;

    /// Stacks the pairs at `indices` into two batched tensors.
    fn batch(&self, indices: &[usize]) -> Result<(Tensor, Tensor)> {
        if indices.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        let mut sats = Vec::with_capacity(indices.len());
        let mut maps = Vec::with_capacity(indices.len());
        for &i in indices {
            let (s, m) = self.pair(i)?;
            sats.push(s);
            maps.push(m);
        }
        let sat = Tensor::stack(&sats).map_err(|e| Error::shape("batch", e))?;
        let map = Tensor::stack(&maps).map_err(|e| Error::shape("batch", e))?;
        Ok((sat, map))
    }
}

/// Pairs held in memory.
#[derive(Debug, Clone, Default)]
pub struct InMemoryPairs {
    pub pairs: Vec<(Tensor, Tensor)>,
}

impl InMemoryPairs {
    pub fn new(pairs: Vec<(Tensor, Tensor)>) -> Self {
        Self { pairs }
    }
}

impl PairSource for InMemoryPairs {
    fn len(&self) -> usize {
        self.pairs.len()
    }

    fn pair(&self, i: usize) -> Result<(Tensor, Tensor)> {
        self.pairs
            .get(i)
            .cloned()
            .ok_or_else(|| Error::invalid(format!("pair index {i} out of range")))
    }
}

/// Pairs listed in a manifest, decoded from disk at a fixed training size.
#[derive(Debug, Clone)]
pub struct ManifestDataset {
    root: PathBuf,
    pub manifest: Manifest,
    pub size: u32,
}

impl ManifestDataset {
    /// Opens a manifest; relative image paths resolve against its directory.
    pub fn open(path: &Path, size: u32) -> Result<Self> {
        let manifest = read_manifest(path)?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_manifest(manifest, root, size)
    }

    pub fn from_manifest(manifest: Manifest, root: PathBuf, size: u32) -> Result<Self> {
        if size == 0 {
            return Err(Error::invalid("image size must be positive"));
        }
        Ok(Self {
            root,
            manifest,
            size,
        })
    }

    pub fn sample(&self, i: usize) -> Option<&PairedSample> {
        self.manifest.entries.get(i)
    }

    fn resolve(&self, p: &str) -> PathBuf {
        self.root.join(p)
    }

    /// Decodes everything up front.
    pub fn preload(&self) -> Result<InMemoryPairs> {
        (0..self.len())
            .map(|i| self.pair(i))
            .collect::<Result<_>>()
            .map(InMemoryPairs::new)
    }
}

impl PairSource for ManifestDataset {
    fn len(&self) -> usize {
        self.manifest.len()
    }

    fn pair(&self, i: usize) -> Result<(Tensor, Tensor)> {
        let s = self
            .sample(i)
            .ok_or_else(|| Error::invalid(format!("pair index {i} out of range")))?;
        let sat = load_image_tensor(&self.resolve(&s.sat_path), self.size)?;
        let map = load_image_tensor(&self.resolve(&s.map_path), self.size)?;
        Ok((sat, map))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pixel_range_maps_to_unit_interval() {
        let mut img = RgbImage::new(2, 1);
        img.put_pixel(0, 0, Rgb([0, 255, 128]));
        img.put_pixel(1, 0, Rgb([255, 0, 0]));
        let t = rgb_to_tensor(&img);
        assert_eq!(t.shape(), &[1, 1, 2, 3]);
        assert_eq!(t.data()[0], -1.0);
        assert_eq!(t.data()[1], 1.0);
        let back = tensor_to_rgb(&t, 0).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn resize_on_load() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.png");
        save_png(&RgbImage::from_pixel(512, 512, Rgb([200, 10, 10])), &p).unwrap();
        let t = load_image_tensor(&p, 64).unwrap();
        assert_eq!(t.shape(), &[1, 64, 64, 3]);
        assert!((t.data()[0] - (200.0 / 127.5 - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn padding_centres_the_image() {
        let img = RgbImage::from_pixel(28, 28, Rgb([255, 255, 255]));
        let p = pad_to(&img, 32, [0, 0, 0]);
        assert_eq!(p.get_pixel(1, 1).0, [0, 0, 0]);
        assert_eq!(p.get_pixel(2, 2).0, [255, 255, 255]);
        assert_eq!(p.get_pixel(29, 29).0, [255, 255, 255]);
        assert_eq!(p.get_pixel(30, 30).0, [0, 0, 0]);
    }

    #[test]
    fn empty_batches_are_rejected() {
        let d = InMemoryPairs::default();
        assert!(d.batch(&[]).is_err());
        assert!(d.pair(0).is_err());
    }
}
