//! RGB images in the generator's `[-1, 1]` range, stored channel-major.

use std::io::Cursor;
use std::path::Path;

use image::{imageops::FilterType, ImageFormat, RgbImage};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A 3-channel image with values clamped to `[-1, 1]`, laid out as `[3][height][width]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageRGB {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl ImageRGB {
    pub fn new(height: usize, width: usize, mut data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || data.len() != 3 * height * width {
            return Err(Error::Shape {
                node: "image".into(),
                expected: vec![3, height, width],
                got: vec![data.len()],
            });
        }
        for v in &mut data {
            *v = if v.is_nan() { 0.0 } else { v.clamp(-1.0, 1.0) };
        }
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, rgb: [f32; 3]) -> Self {
        let mut data = Vec::with_capacity(3 * height * width);
        for c in rgb {
            data.extend(std::iter::repeat_n(c.clamp(-1.0, 1.0), height * width));
        }
        Self { height, width, data }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(3 * height * width);
        for c in 0..3 {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x).clamp(-1.0, 1.0));
                }
            }
        }
        Self { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    /// As a `[1, 3, h, w]` batch.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![1, 3, self.height, self.width], self.data.clone()).unwrap()
    }

    /// Batch item `i` of a `[n, 3, h, w]` tensor.
    pub fn from_tensor(t: &Tensor, i: usize) -> Result<Self> {
        match t.shape() {
            [_, 3, h, w] => Self::new(*h, *w, t.sample(i).to_vec()),
            other => Err(Error::Shape {
                node: "image".into(),
                expected: vec![0, 3, 0, 0],
                got: other.to_vec(),
            }),
        }
    }

    pub fn batch(images: &[ImageRGB]) -> Result<Tensor> {
        let ts: Vec<Tensor> = images.iter().map(|im| im.to_tensor().reshape(&[3, im.height, im.width])).collect::<Result<_>>()?;
        Tensor::stack(&ts)
    }

    /// Values mapped to `[0, 1]`, channel-major.
    pub fn to_unit(&self) -> Vec<f32> {
        self.data.iter().map(|v| (v + 1.0) * 0.5).collect()
    }

    /// Build from `[0, 1]` channel-major values.
    pub fn from_unit(height: usize, width: usize, unit: &[f32]) -> Result<Self> {
        Self::new(height, width, unit.iter().map(|v| v * 2.0 - 1.0).collect())
    }

    /// Per-pixel luminance (mean of the channels), in the image's own range.
    pub fn gray(&self) -> Vec<f32> {
        let n = self.height * self.width;
        (0..n)
            .map(|i| (self.data[i] + self.data[n + i] + self.data[2 * n + i]) / 3.0)
            .collect()
    }

    pub fn mean_abs_diff(&self, other: &ImageRGB) -> f32 {
        let s: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs() as f64)
            .sum();
        (s / self.data.len() as f64) as f32
    }

    pub fn mse(&self, other: &ImageRGB) -> f32 {
        let s: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| ((a - b) as f64).powi(2))
            .sum();
        (s / self.data.len() as f64) as f32
    }

    /// Peak signal-to-noise ratio in dB over the 8-bit range.
    pub fn psnr(&self, other: &ImageRGB) -> f32 {
        // The [-1, 1] range spans 2 units; rescale the MSE to [0, 1] intensities.
        let mse = self.mse(other) as f64 / 4.0;
        if mse == 0.0 {
            return f32::INFINITY;
        }
        (10.0 * (1.0 / mse).log10()) as f32
    }

    pub fn to_rgb8(&self) -> RgbImage {
        let (h, w) = (self.height, self.width);
        RgbImage::from_fn(w as u32, h as u32, |x, y| {
            let px = |c: usize| {
                let v = self.get(c, y as usize, x as usize);
                ((v + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8
            };
            image::Rgb([px(0), px(1), px(2)])
        })
    }

    pub fn from_rgb8(img: &RgbImage) -> Self {
        let (w, h) = (img.width() as usize, img.height() as usize);
        Self::from_fn(h, w, |c, y, x| img.get_pixel(x as u32, y as u32)[c] as f32 / 127.5 - 1.0)
    }

    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        self.to_rgb8().write_to(&mut Cursor::new(&mut buf), ImageFormat::Png)?;
        Ok(buf)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        Ok(Self::from_rgb8(&image::load_from_memory(bytes)?.to_rgb8()))
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_rgb8().save_with_format(path, ImageFormat::Png)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let img = image::open(path).map_err(|e| Error::UnreadableImage {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        Ok(Self::from_rgb8(&img.to_rgb8()))
    }

    /// Center-crop to a square and resize to `size x size`.
    pub fn center_square(&self, size: usize) -> Self {
        let img = self.to_rgb8();
        Self::from_rgb8(&center_square_rgb8(&img, size))
    }
}

pub(crate) fn center_square_rgb8(img: &RgbImage, size: usize) -> RgbImage {
    let (w, h) = (img.width(), img.height());
    let side = w.min(h);
    let cropped = image::imageops::crop_imm(img, (w - side) / 2, (h - side) / 2, side, side).to_image();
    if side as usize == size {
        cropped
    } else {
        image::imageops::resize(&cropped, size as u32, size as u32, FilterType::Triangle)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip_is_exact_on_8bit_values() {
        let img = ImageRGB::from_fn(5, 7, |c, y, x| ((c * 31 + y * 7 + x * 13) % 256) as f32 / 127.5 - 1.0);
        let back = ImageRGB::decode(&img.encode_png().unwrap()).unwrap();
        assert!(img.max_abs_pixel_diff(&back) < 1e-6);
    }

    #[test]
    fn construction_clamps() {
        let img = ImageRGB::new(1, 1, vec![2.0, -3.0, 0.5]).unwrap();
        assert_eq!(img.data(), &[1.0, -1.0, 0.5]);
    }

    impl ImageRGB {
        fn max_abs_pixel_diff(&self, o: &ImageRGB) -> f32 {
            self.data.iter().zip(&o.data).map(|(a, b)| (a - b).abs()).fold(0.0, f32::max)
        }
    }
}
