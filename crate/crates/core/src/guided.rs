//! Edge-aware upsampling of flow/color fields with a guided filter.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{resize_field, FlowColorField};
use crate::image::ImageRGB;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GuidedConfig {
    pub radius: usize,
    pub eps: f32,
}

impl Default for GuidedConfig {
    fn default() -> Self {
        Self { radius: 4, eps: 1e-4 }
    }
}

impl GuidedConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0) {
            return Err(Error::InvalidArgument(format!("guided filter eps {} must be positive", self.eps)));
        }
        Ok(())
    }
}

/// Summed-area table with one extra leading row and column of zeros.
struct Integral {
    w: usize,
    h: usize,
    table: Vec<f64>,
}

impl Integral {
    fn new(values: impl Iterator<Item = f64>, h: usize, w: usize) -> Self {
        let mut table = vec![0.0; (h + 1) * (w + 1)];
        let mut values = values;
        for y in 0..h {
            let mut row = 0.0;
            for x in 0..w {
                row += values.next().expect("plane shorter than its extents");
                table[(y + 1) * (w + 1) + x + 1] = table[y * (w + 1) + x + 1] + row;
            }
        }
        Self { w, h, table }
    }

    /// Mean over the `(2r+1)^2` window around `(y, x)`, clipped to the image.
    fn mean(&self, y: usize, x: usize, r: usize) -> f64 {
        let (y0, x0) = (y.saturating_sub(r), x.saturating_sub(r));
        let (y1, x1) = ((y + r + 1).min(self.h), (x + r + 1).min(self.w));
        let s = self.w + 1;
        let sum = self.table[y1 * s + x1] - self.table[y0 * s + x1] - self.table[y1 * s + x0] + self.table[y0 * s + x0];
        sum / ((y1 - y0) * (x1 - x0)) as f64
    }

    fn box_mean(&self, r: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.h * self.w);
        for y in 0..self.h {
            for x in 0..self.w {
                out.push(self.mean(y, x, r));
            }
        }
        out
    }
}

/// Guided filter of `input` with a single-channel `guide`, both `h x w`.
pub fn guided_filter(guide: &[f32], input: &[f32], h: usize, w: usize, cfg: &GuidedConfig) -> Result<Vec<f32>> {
    cfg.validate()?;
    let n = h * w;
    if guide.len() != n || input.len() != n || n == 0 {
        return Err(Error::InvalidArgument(format!(
            "guided filter needs {n} samples in guide and input, got {} and {}",
            guide.len(),
            input.len()
        )));
    }
    let r = cfg.radius;
    let g = |i: usize| guide[i] as f64;
    let p = |i: usize| input[i] as f64;
    let mean_i = Integral::new((0..n).map(g), h, w).box_mean(r);
    let mean_p = Integral::new((0..n).map(p), h, w).box_mean(r);
    let corr_ii = Integral::new((0..n).map(|i| g(i) * g(i)), h, w).box_mean(r);
    let corr_ip = Integral::new((0..n).map(|i| g(i) * p(i)), h, w).box_mean(r);
    let eps = cfg.eps as f64;
    let mut a = vec![0.0; n];
    let mut b = vec![0.0; n];
    for i in 0..n {
        let var = corr_ii[i] - mean_i[i] * mean_i[i];
        let cov = corr_ip[i] - mean_i[i] * mean_p[i];
        a[i] = cov / (var + eps);
        b[i] = mean_p[i] - a[i] * mean_i[i];
    }
    let mean_a = Integral::new(a.into_iter(), h, w).box_mean(r);
    let mean_b = Integral::new(b.into_iter(), h, w).box_mean(r);
    Ok((0..n).map(|i| (mean_a[i] * g(i) + mean_b[i]) as f32).collect())
}

/// Bilinearly resize `field` to the guide's extents, then filter every plane with the guide's
/// `[0, 1]` gray levels.
pub fn guided_upsample(field: &FlowColorField, guide: &ImageRGB, cfg: &GuidedConfig) -> Result<FlowColorField> {
    let (h, w) = (guide.height(), guide.width());
    let gray: Vec<f32> = guide.gray().iter().map(|v| (v + 1.0) * 0.5).collect();
    let up = resize_field(field, h, w);
    let u = guided_filter(&gray, up.u(), h, w, cfg)?;
    let v = guided_filter(&gray, up.v(), h, w, cfg)?;
    let mut a = Vec::with_capacity(12 * h * w);
    for k in 0..12 {
        a.extend(guided_filter(&gray, up.a_plane(k), h, w, cfg)?);
    }
    FlowColorField::from_parts(h, w, u, v, a)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integral_mean_clips_windows() {
        let t = Integral::new((0..12).map(|v| v as f64), 3, 4);
        // Top-left corner with radius 1 covers rows 0..2, columns 0..2.
        assert!((t.mean(0, 0, 1) - (0.0 + 1.0 + 4.0 + 5.0) / 4.0).abs() < 1e-12);
        assert!((t.mean(1, 1, 5) - 5.5).abs() < 1e-12);
    }
}
