//! Soft-binned HOG descriptor in `f64`, looping over every cell for every pixel.

/// Descriptor of a channel-major `[3, h, w]` image as a flat `[cells_y][cells_x][bins]` vector.
pub fn hog(pixels: &[f64], h: usize, w: usize, cell: usize, bins: usize, temperature: f64, eps: f64, delta: f64) -> Vec<f64> {
    let n = h * w;
    let gray = |y: usize, x: usize| (pixels[y * w + x] + pixels[n + y * w + x] + pixels[2 * n + y * w + x]) / 3.0;
    let (cy, cx) = (h / cell, w / cell);
    let mut hist = vec![0.0; cy * cx * bins];
    for y in 0..h {
        for x in 0..w {
            let left = if x == 0 { 0 } else { x - 1 };
            let right = if x + 1 == w { x } else { x + 1 };
            let up = if y == 0 { 0 } else { y - 1 };
            let down = if y + 1 == h { y } else { y + 1 };
            let gx = (gray(y, right) - gray(y, left)) / 2.0;
            let gy = (gray(down, x) - gray(up, x)) / 2.0;
            let mag = (gx * gx + gy * gy + delta).sqrt() - delta.sqrt();
            // cos 2(theta - theta_b) through the double-angle identities.
            let r2 = gx * gx + gy * gy + delta;
            let (c2, s2) = ((gx * gx - gy * gy) / r2, 2.0 * gx * gy / r2);
            let logits: Vec<f64> = (0..bins)
                .map(|b| {
                    let tb = b as f64 * std::f64::consts::PI / bins as f64;
                    (c2 * (2.0 * tb).cos() + s2 * (2.0 * tb).sin()) / temperature
                })
                .collect();
            let top = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = logits.iter().map(|l| (l - top).exp()).sum();
            for ky in 0..cy {
                for kx in 0..cx {
                    let wy = 1.0 - ((y as f64 + 0.5) - (ky as f64 + 0.5) * cell as f64).abs() / cell as f64;
                    let wx = 1.0 - ((x as f64 + 0.5) - (kx as f64 + 0.5) * cell as f64).abs() / cell as f64;
                    if wy <= 0.0 || wx <= 0.0 {
                        continue;
                    }
                    for b in 0..bins {
                        hist[(ky * cx + kx) * bins + b] += wy * wx * mag * (logits[b] - top).exp() / z;
                    }
                }
            }
        }
    }
    for c in 0..cy * cx {
        let norm = (hist[c * bins..(c + 1) * bins].iter().map(|v| v * v).sum::<f64>() + eps).sqrt();
        for b in 0..bins {
            hist[c * bins + b] /= norm;
        }
    }
    hist
}
