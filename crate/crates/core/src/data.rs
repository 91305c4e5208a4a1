//! Training corpora: procedurally generated single-object images and image folders.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImageRGB;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Source {
    SyntheticShapes,
    ImageFolder,
}

/// Images at a common square resolution.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub source: Source,
    resolution: usize,
    items: Vec<ImageRGB>,
}

impl Dataset {
    pub fn new(source: Source, resolution: usize, items: Vec<ImageRGB>) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if let Some(bad) = items
            .iter()
            .find(|im| im.height() != resolution || im.width() != resolution)
        {
            return Err(Error::InvalidArgument(format!(
                "dataset item is {}x{}, expected {resolution}x{resolution}",
                bad.height(),
                bad.width()
            )));
        }
        Ok(Self {
            source,
            resolution,
            items,
        })
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn items(&self) -> &[ImageRGB] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Shuffle with `seed` and cut off `test_count` items as a disjoint test split.
    pub fn split(&self, test_count: usize, seed: u64) -> Result<(Dataset, Dataset)> {
        if test_count == 0 || test_count >= self.items.len() {
            return Err(Error::InvalidArgument(format!(
                "test split of {test_count} from {} items leaves an empty side",
                self.items.len()
            )));
        }
        let mut order: Vec<usize> = (0..self.items.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let pick = |idx: &[usize]| idx.iter().map(|&i| self.items[i].clone()).collect::<Vec<_>>();
        let test = Dataset::new(self.source, self.resolution, pick(&order[..test_count]))?;
        let train = Dataset::new(self.source, self.resolution, pick(&order[test_count..]))?;
        Ok((train, test))
    }
}

fn hsv_to_rgb(h: f32, s: f32, v: f32) -> [f32; 3] {
    let h6 = (h.rem_euclid(1.0)) * 6.0;
    let c = v * s;
    let x = c * (1.0 - ((h6 % 2.0) - 1.0).abs());
    let (r, g, b) = match h6 as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

/// Signed distance to a rounded box centred at the origin with half extents `(hx, hy)`.
fn rounded_box(px: f32, py: f32, hx: f32, hy: f32, r: f32) -> f32 {
    let qx = px.abs() - (hx - r);
    let qy = py.abs() - (hy - r);
    let outside = (qx.max(0.0).powi(2) + qy.max(0.0).powi(2)).sqrt();
    outside + qx.max(qy).min(0.0) - r
}

fn render_shape(rng: &mut impl Rng, res: usize) -> ImageRGB {
    let hue = rng.gen::<f32>();
    let fill = hsv_to_rgb(hue, rng.gen_range(0.55..1.0), rng.gen_range(0.45..0.95));
    let shade = rng.gen_range(0.0..0.35f32);
    let s = res as f32;
    let half_x = rng.gen_range(0.18..0.36) * s;
    let half_y = rng.gen_range(0.18..0.36) * s;
    let cx = s / 2.0 + rng.gen_range(-0.12..0.12) * s;
    let cy = s / 2.0 + rng.gen_range(-0.12..0.12) * s;
    let radius = rng.gen_range(0.2..1.0) * half_x.min(half_y);
    let angle = rng.gen_range(-0.6..0.6f32);
    let (sin, cos) = angle.sin_cos();
    let mut data = vec![0.0; 3 * res * res];
    for y in 0..res {
        for x in 0..res {
            let dx = x as f32 + 0.5 - cx;
            let dy = y as f32 + 0.5 - cy;
            let (rx, ry) = (cos * dx + sin * dy, -sin * dx + cos * dy);
            let d = rounded_box(rx, ry, half_x, half_y, radius);
            // One pixel of anti-aliasing at the silhouette.
            let cover = (0.5 - d).clamp(0.0, 1.0);
            // Vertical shading gives the objects some interior structure.
            let light = 1.0 - shade * (ry / half_y).clamp(-1.0, 1.0).max(0.0);
            for c in 0..3 {
                let unit = cover * fill[c] * light + (1.0 - cover);
                data[(c * res + y) * res + x] = unit * 2.0 - 1.0;
            }
        }
    }
    ImageRGB::new(res, res, data).expect("rendered image has the declared size")
}

/// `count` single rounded shapes of random hue, size, position and rotation on white.
pub fn synth_shapes(count: usize, resolution: usize, seed: u64) -> Result<Dataset> {
    if count == 0 {
        return Err(Error::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let items = (0..count).map(|_| render_shape(&mut rng, resolution)).collect();
    Dataset::new(Source::SyntheticShapes, resolution, items)
}

/// Every decodable image directly inside `dir`, center-cropped and resized to `resolution`.
///
/// Files that do not decode as images are skipped with a warning; I/O failures are errors.
pub fn ingest_folder(dir: impl AsRef<Path>, resolution: usize) -> Result<Dataset> {
    let dir = dir.as_ref();
    let mut paths: Vec<_> = fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    paths.retain(|p| p.is_file());
    paths.sort();
    let mut items = Vec::new();
    for path in paths {
        let bytes = fs::read(&path).map_err(|e| Error::UnreadableImage {
            path: path.clone(),
            reason: e.to_string(),
        })?;
        match image::load_from_memory(&bytes) {
            Ok(img) => {
                let square = crate::image::center_square_rgb8(&img.to_rgb8(), resolution);
                items.push(ImageRGB::from_rgb8(&square));
            }
            Err(e) => log::warn!("skipping {}: {e}", path.display()),
        }
    }
    Dataset::new(Source::ImageFolder, resolution, items)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hsv_primaries() {
        assert_eq!(hsv_to_rgb(0.0, 1.0, 1.0), [1.0, 0.0, 0.0]);
        let g = hsv_to_rgb(1.0 / 3.0, 1.0, 1.0);
        assert!((g[1] - 1.0).abs() < 1e-6 && g[0].abs() < 1e-5);
    }

    #[test]
    fn split_is_disjoint_and_complete() {
        let ds = synth_shapes(20, 32, 1).unwrap();
        let (train, test) = ds.split(5, 9).unwrap();
        assert_eq!((train.len(), test.len()), (15, 5));
        for t in test.items() {
            assert!(!train.items().contains(t));
        }
        assert!(ds.split(0, 1).is_err());
    }
}
