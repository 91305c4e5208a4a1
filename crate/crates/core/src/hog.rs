//! Differentiable histogram-of-oriented-gradients descriptor.
//!
//! Gradients come from central differences of the channel mean. Each pixel votes its gradient
//! magnitude into unsigned orientation bins through a softmax over `cos 2(theta - theta_b)`, and
//! into the neighbouring cells through bilinear (tent) weights. Every cell histogram is then
//! divided by `sqrt(|h|^2 + eps)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImageRGB;
use crate::tensor::Tensor;

/// Offset inside the magnitude square root; keeps the descriptor smooth at zero gradient.
pub const MAGNITUDE_DELTA: f32 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HogConfig {
    /// Cell side in pixels.
    pub cell: usize,
    pub bins: usize,
    /// Softmax temperature of the orientation assignment.
    pub temperature: f32,
    pub eps: f32,
}

impl Default for HogConfig {
    fn default() -> Self {
        Self {
            cell: 4,
            bins: 9,
            temperature: 0.1,
            eps: 1e-4,
        }
    }
}

impl HogConfig {
    pub fn validate(&self, height: usize, width: usize) -> Result<()> {
        if self.cell == 0 || height % self.cell != 0 || width % self.cell != 0 {
            return Err(Error::InvalidArgument(format!(
                "hog cell {} does not divide {height}x{width}",
                self.cell
            )));
        }
        if self.bins < 4 || !(self.temperature > 0.0) || !(self.eps > 0.0) {
            return Err(Error::InvalidArgument(
                "hog needs >= 4 bins and positive temperature and eps".into(),
            ));
        }
        Ok(())
    }

    /// `(cells_y, cells_x)` for an image of the given size.
    pub fn grid(&self, height: usize, width: usize) -> (usize, usize) {
        (height / self.cell, width / self.cell)
    }
}

/// Tent weights of one pixel coordinate onto the cells along that axis.
fn tent(p: usize, cell: usize, cells: usize) -> impl Iterator<Item = (usize, f32)> {
    let pc = p as f32 + 0.5;
    let j = p / cell;
    let lo = j.saturating_sub(1);
    let hi = (j + 1).min(cells - 1);
    (lo..=hi).filter_map(move |k| {
        let centre = (k as f32 + 0.5) * cell as f32;
        let w = 1.0 - (pc - centre).abs() / cell as f32;
        (w > 0.0).then_some((k, w))
    })
}

/// Intermediate values of one forward pass, kept for the vector-Jacobian product.
#[derive(Clone, Debug)]
pub struct HogTape {
    cfg: HogConfig,
    height: usize,
    width: usize,
    gx: Vec<f32>,
    gy: Vec<f32>,
    /// Orientation weights, `[pixel][bin]`.
    soft: Vec<f32>,
    mag: Vec<f32>,
    /// Raw cell histograms before normalization, `[cy][cx][bin]`.
    raw: Vec<f32>,
}

fn bin_axes(bins: usize) -> Vec<(f32, f32)> {
    (0..bins)
        .map(|b| {
            let theta = b as f32 * std::f32::consts::PI / bins as f32;
            ((2.0 * theta).cos(), (2.0 * theta).sin())
        })
        .collect()
}

/// Descriptor of a channel-major `[3, height, width]` buffer, shaped `[cells_y, cells_x, bins]`.
pub fn forward(pixels: &[f32], height: usize, width: usize, cfg: &HogConfig) -> Result<(Tensor, HogTape)> {
    cfg.validate(height, width)?;
    if pixels.len() != 3 * height * width {
        return Err(Error::Shape {
            node: "hog".into(),
            expected: vec![3, height, width],
            got: vec![pixels.len()],
        });
    }
    let n = height * width;
    let gray: Vec<f32> = (0..n)
        .map(|i| (pixels[i] + pixels[n + i] + pixels[2 * n + i]) / 3.0)
        .collect();
    let at = |y: usize, x: usize| gray[y * width + x];
    let mut gx = vec![0.0; n];
    let mut gy = vec![0.0; n];
    for y in 0..height {
        for x in 0..width {
            let (xl, xr) = (x.saturating_sub(1), (x + 1).min(width - 1));
            let (yu, yd) = (y.saturating_sub(1), (y + 1).min(height - 1));
            gx[y * width + x] = (at(y, xr) - at(y, xl)) * 0.5;
            gy[y * width + x] = (at(yd, x) - at(yu, x)) * 0.5;
        }
    }

    let bins = cfg.bins;
    let axes = bin_axes(bins);
    let (cy, cx) = cfg.grid(height, width);
    let mut soft = vec![0.0; n * bins];
    let mut mag = vec![0.0; n];
    let mut raw = vec![0.0; cy * cx * bins];
    let sqrt_delta = MAGNITUDE_DELTA.sqrt();
    for y in 0..height {
        for x in 0..width {
            let i = y * width + x;
            let (a, b) = (gx[i], gy[i]);
            let d = a * a + b * b + MAGNITUDE_DELTA;
            mag[i] = d.sqrt() - sqrt_delta;
            let cos2 = (a * a - b * b) / d;
            let sin2 = 2.0 * a * b / d;
            let w = &mut soft[i * bins..(i + 1) * bins];
            let mut top = f32::NEG_INFINITY;
            for (k, (c, s)) in axes.iter().enumerate() {
                w[k] = (cos2 * c + sin2 * s) / cfg.temperature;
                top = top.max(w[k]);
            }
            let mut z = 0.0;
            for v in w.iter_mut() {
                *v = (*v - top).exp();
                z += *v;
            }
            for v in w.iter_mut() {
                *v /= z;
            }
            for (ky, wy) in tent(y, cfg.cell, cy) {
                for (kx, wx) in tent(x, cfg.cell, cx) {
                    let cell = &mut raw[(ky * cx + kx) * bins..(ky * cx + kx + 1) * bins];
                    let s = wy * wx * mag[i];
                    for (h, v) in cell.iter_mut().zip(w.iter()) {
                        *h += s * v;
                    }
                }
            }
        }
    }

    let mut out = raw.clone();
    for cell in out.chunks_mut(bins) {
        let norm = (cell.iter().map(|v| v * v).sum::<f32>() + cfg.eps).sqrt();
        for v in cell.iter_mut() {
            *v /= norm;
        }
    }
    let tape = HogTape {
        cfg: *cfg,
        height,
        width,
        gx,
        gy,
        soft,
        mag,
        raw,
    };
    Ok((Tensor::new(vec![cy, cx, bins], out)?, tape))
}

impl HogTape {
    /// Gradient with respect to the `[3, height, width]` input given the descriptor gradient.
    pub fn backward(&self, upstream: &Tensor) -> Result<Vec<f32>> {
        let (h, w, bins) = (self.height, self.width, self.cfg.bins);
        let (cy, cx) = self.cfg.grid(h, w);
        if upstream.shape() != [cy, cx, bins] {
            return Err(Error::Shape {
                node: "hog".into(),
                expected: vec![cy, cx, bins],
                got: upstream.shape().to_vec(),
            });
        }
        let mut d_raw = vec![0.0; cy * cx * bins];
        for (k, (raw, up)) in self.raw.chunks(bins).zip(upstream.data().chunks(bins)).enumerate() {
            let norm = (raw.iter().map(|v| v * v).sum::<f32>() + self.cfg.eps).sqrt();
            let dot: f32 = raw.iter().zip(up).map(|(a, b)| a * b).sum();
            let n3 = norm * norm * norm;
            for b in 0..bins {
                d_raw[k * bins + b] = up[b] / norm - raw[b] * dot / n3;
            }
        }

        let axes = bin_axes(bins);
        let n = h * w;
        let mut d_gray = vec![0.0f32; n];
        let mut dc = vec![0.0f32; bins];
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                dc.iter_mut().for_each(|v| *v = 0.0);
                for (ky, wy) in tent(y, self.cfg.cell, cy) {
                    for (kx, wx) in tent(x, self.cfg.cell, cx) {
                        let cell = &d_raw[(ky * cx + kx) * bins..(ky * cx + kx + 1) * bins];
                        for (acc, v) in dc.iter_mut().zip(cell) {
                            *acc += wy * wx * v;
                        }
                    }
                }
                let soft = &self.soft[i * bins..(i + 1) * bins];
                let m = self.mag[i];
                let d_mag: f32 = dc.iter().zip(soft).map(|(a, b)| a * b).sum();
                // Softmax backward with d_soft = m * dc.
                let mean: f32 = soft.iter().zip(&dc).map(|(s, d)| s * m * d).sum();
                let (mut d_cos2, mut d_sin2) = (0.0, 0.0);
                for b in 0..bins {
                    let ds = soft[b] * (m * dc[b] - mean) / self.cfg.temperature;
                    d_cos2 += ds * axes[b].0;
                    d_sin2 += ds * axes[b].1;
                }
                let (a, bb) = (self.gx[i], self.gy[i]);
                let d = a * a + bb * bb + MAGNITUDE_DELTA;
                let root = d.sqrt();
                let cos2 = (a * a - bb * bb) / d;
                let sin2 = 2.0 * a * bb / d;
                let d_gx = d_mag * a / root + d_cos2 * (2.0 * a - cos2 * 2.0 * a) / d
                    + d_sin2 * (2.0 * bb - sin2 * 2.0 * a) / d;
                let d_gy = d_mag * bb / root + d_cos2 * (-2.0 * bb - cos2 * 2.0 * bb) / d
                    + d_sin2 * (2.0 * a - sin2 * 2.0 * bb) / d;
                let (xl, xr) = (x.saturating_sub(1), (x + 1).min(w - 1));
                let (yu, yd) = (y.saturating_sub(1), (y + 1).min(h - 1));
                d_gray[y * w + xr] += 0.5 * d_gx;
                d_gray[y * w + xl] -= 0.5 * d_gx;
                d_gray[yd * w + x] += 0.5 * d_gy;
                d_gray[yu * w + x] -= 0.5 * d_gy;
            }
        }
        let mut out = Vec::with_capacity(3 * n);
        for _ in 0..3 {
            out.extend(d_gray.iter().map(|v| v / 3.0));
        }
        Ok(out)
    }
}

pub fn hog_features(x: &ImageRGB, cfg: &HogConfig) -> Result<Tensor> {
    Ok(forward(x.data(), x.height(), x.width(), cfg)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tent_weights_partition_interior_pixels() {
        for p in 2..14 {
            let s: f32 = tent(p, 4, 4).map(|(_, w)| w).sum();
            assert!((s - 1.0).abs() < 1e-6, "pixel {p}: {s}");
        }
    }

    #[test]
    fn constant_image_has_empty_histograms() {
        let im = ImageRGB::filled(16, 16, [0.3, -0.2, 0.9]);
        let d = hog_features(&im, &HogConfig::default()).unwrap();
        assert!(d.data().iter().all(|v| v.abs() < 1e-6));
    }
}
