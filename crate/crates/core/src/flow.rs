//! Joint motion and local affine color flow between two frames.
//!
//! A field `(u, v, A)` lives on the grid of the second frame `I1`: the content seen at `q` came
//! from `q - (u, v)(q)` in `I0` and had its color changed by the affine map `A(q)`:
//!
//! ```text
//! I1(q)  ~  A(q) [I0(q - w(q)); 1]
//! ```
//!
//! Estimation minimizes, on `[0, 1]` intensities,
//!
//! ```text
//! sum_q |A(q) [I0(q - w(q)); 1] - I1(q)|^2 + sigma_s sum_{p~q} |w(p) - w(q)|^2 + sigma_c sum_{p~q} |A(p) - A(q)|^2
//! ```
//!
//! over 4-neighbour pairs `p~q`, with `I0` sampled bilinearly. Pixels whose source `q - w(q)`
//! falls outside `I0` have nothing to match and drop out of the data term; rendering clamps them.
//! Rendering a field is then a plain backward warp.
//! The solver alternates a coarse-to-fine linearized flow update on color-compensated frames with
//! a block Gauss-Seidel solve for `A`; a step is kept only if it does not raise the energy.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::ImageRGB;

/// Coefficients of the identity color map, row-major 3x4.
pub const IDENTITY_A: [f32; 12] = [1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0];

pub const GVMF_MAGIC: [u8; 4] = *b"GVMF";
pub const GVMF_VERSION: u32 = 1;

/// Per-pixel displacement and 3x4 affine color map.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowColorField {
    height: usize,
    width: usize,
    u: Vec<f32>,
    v: Vec<f32>,
    /// Twelve planes, one per coefficient of `A` in row-major order.
    a: Vec<f32>,
}

impl FlowColorField {
    pub fn identity(height: usize, width: usize) -> Self {
        let n = height * width;
        let mut a = Vec::with_capacity(12 * n);
        for k in IDENTITY_A {
            a.extend(std::iter::repeat_n(k, n));
        }
        Self {
            height,
            width,
            u: vec![0.0; n],
            v: vec![0.0; n],
            a,
        }
    }

    pub fn from_parts(height: usize, width: usize, u: Vec<f32>, v: Vec<f32>, a: Vec<f32>) -> Result<Self> {
        let n = height * width;
        if n == 0 || u.len() != n || v.len() != n || a.len() != 12 * n {
            return Err(Error::InvalidArgument(format!(
                "field planes do not match {height}x{width}"
            )));
        }
        let f = Self { height, width, u, v, a };
        if !f.is_finite() {
            return Err(Error::SolverDiverged("field contains non-finite values".into()));
        }
        Ok(f)
    }

    /// Same color maps everywhere, uniform translation `(u, v)`.
    pub fn uniform(height: usize, width: usize, u: f32, v: f32, a: [f32; 12]) -> Self {
        let n = height * width;
        let mut planes = Vec::with_capacity(12 * n);
        for k in a {
            planes.extend(std::iter::repeat_n(k, n));
        }
        Self {
            height,
            width,
            u: vec![u; n],
            v: vec![v; n],
            a: planes,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn u(&self) -> &[f32] {
        &self.u
    }

    pub fn v(&self) -> &[f32] {
        &self.v
    }

    /// Plane `k` of `A` (row-major coefficient index).
    pub fn a_plane(&self, k: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.a[k * n..(k + 1) * n]
    }

    pub fn a_at(&self, i: usize) -> [f32; 12] {
        let n = self.height * self.width;
        std::array::from_fn(|k| self.a[k * n + i])
    }

    /// All 14 planes: `u`, `v`, then the twelve coefficients of `A`.
    pub fn planes(&self) -> Vec<&[f32]> {
        let mut p = vec![self.u.as_slice(), self.v.as_slice()];
        p.extend((0..12).map(|k| self.a_plane(k)));
        p
    }

    pub fn is_finite(&self) -> bool {
        self.u.iter().chain(&self.v).chain(&self.a).all(|x| x.is_finite())
    }

    /// Force every color map to the identity, keeping the motion.
    pub fn drop_color(&mut self) {
        let n = self.height * self.width;
        for (k, id) in IDENTITY_A.iter().enumerate() {
            self.a[k * n..(k + 1) * n].fill(*id);
        }
    }

    pub fn has_identity_color(&self) -> bool {
        let n = self.height * self.width;
        IDENTITY_A
            .iter()
            .enumerate()
            .all(|(k, id)| self.a[k * n..(k + 1) * n].iter().all(|x| x == id))
    }

    /// Mean displacement magnitude and mean Frobenius distance of `A` from the identity.
    pub fn deviation_from_identity(&self) -> (f32, f32) {
        let n = self.height * self.width;
        let (mut m, mut c) = (0.0f64, 0.0f64);
        for i in 0..n {
            m += ((self.u[i] as f64).powi(2) + (self.v[i] as f64).powi(2)).sqrt();
            let a = self.a_at(i);
            c += a
                .iter()
                .zip(IDENTITY_A)
                .map(|(x, y)| ((x - y) as f64).powi(2))
                .sum::<f64>()
                .sqrt();
        }
        ((m / n as f64) as f32, (c / n as f64) as f32)
    }

    /// GVMF dump: magic, version, H, W, then `u`, `v` and the twelve `A` planes as f32.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 14 * 4 * self.u.len());
        out.extend_from_slice(&GVMF_MAGIC);
        out.extend_from_slice(&GVMF_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.height as u32).to_le_bytes());
        out.extend_from_slice(&(self.width as u32).to_le_bytes());
        for plane in self.planes() {
            for x in plane {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 {
            return Err(Error::Corrupt("field dump shorter than its header".into()));
        }
        let magic: [u8; 4] = bytes[..4].try_into().unwrap();
        if magic != GVMF_MAGIC {
            return Err(Error::BadMagic {
                expected: GVMF_MAGIC,
                found: magic,
            });
        }
        let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
        let version = word(4);
        if version != GVMF_VERSION {
            return Err(Error::VersionMismatch {
                expected: GVMF_VERSION,
                found: version,
            });
        }
        let (h, w) = (word(8) as usize, word(12) as usize);
        let n = h
            .checked_mul(w)
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::Corrupt(format!("bad field extents {h}x{w}")))?;
        if bytes.len() != 16 + 14 * 4 * n {
            return Err(Error::Corrupt(format!(
                "field dump has {} bytes, expected {}",
                bytes.len(),
                16 + 14 * 4 * n
            )));
        }
        let vals: Vec<f32> = bytes[16..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::from_parts(h, w, vals[..n].to_vec(), vals[n..2 * n].to_vec(), vals[2 * n..].to_vec())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::decode(&fs::read(path)?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FlowConfig {
    pub sigma_s: f32,
    pub sigma_c: f32,
    /// Maximum number of pyramid levels (each halves the size, never below `min_size`).
    pub levels: usize,
    pub min_size: usize,
    pub warps: usize,
    /// Gauss-Seidel sweeps per warp.
    pub sweeps: usize,
    /// Flow / color alternations.
    pub outer: usize,
    pub color_sweeps: usize,
    /// Half-size of the window for the initial local color fit (2 gives 5x5).
    pub window_radius: usize,
    /// Pull of the windowed color fit toward the identity.
    pub tikhonov: f32,
    /// When false, `A` stays the identity (motion only).
    pub estimate_color: bool,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            sigma_s: 0.02,
            sigma_c: 1.0,
            levels: 5,
            min_size: 8,
            warps: 3,
            sweeps: 60,
            outer: 3,
            color_sweeps: 40,
            window_radius: 2,
            tikhonov: 1e-3,
            estimate_color: true,
        }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_s > 0.0 && self.sigma_c > 0.0 && self.tikhonov > 0.0) {
            return Err(Error::InvalidArgument("flow regularization weights must be positive".into()));
        }
        if self.levels == 0 || self.warps == 0 || self.sweeps == 0 || self.outer == 0 || self.min_size == 0 {
            return Err(Error::InvalidArgument("flow iteration counts must be positive".into()));
        }
        Ok(())
    }
}

/// Energy and field after initialization and after every outer iteration.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FlowTrace {
    pub energies: Vec<f64>,
    pub fields: Vec<FlowColorField>,
}

/// Bilinear sample of one plane at `(x, y)`, coordinates clamped to the image.
pub(crate) fn sample(plane: &[f32], h: usize, w: usize, x: f32, y: f32) -> f32 {
    let x = x.clamp(0.0, (w - 1) as f32);
    let y = y.clamp(0.0, (h - 1) as f32);
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (fx, fy) = (x - x0 as f32, y - y0 as f32);
    let top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
    let bot = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
    top * (1.0 - fy) + bot * fy
}

fn neighbours(y: usize, x: usize, h: usize, w: usize) -> impl Iterator<Item = usize> {
    let mut n = [usize::MAX; 4];
    if x > 0 {
        n[0] = y * w + x - 1;
    }
    if x + 1 < w {
        n[1] = y * w + x + 1;
    }
    if y > 0 {
        n[2] = (y - 1) * w + x;
    }
    if y + 1 < h {
        n[3] = (y + 1) * w + x;
    }
    n.into_iter().filter(|&i| i != usize::MAX)
}

/// Whether a source position lies on the image grid.
fn inside(h: usize, w: usize, x: f32, y: f32) -> bool {
    (0.0..=(w - 1) as f32).contains(&x) && (0.0..=(h - 1) as f32).contains(&y)
}

/// 1 where `q - w(q)` lies inside the image, 0 elsewhere.
fn validity(h: usize, w: usize, u: &[f32], v: &[f32]) -> Vec<f32> {
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if inside(h, w, x as f32 - u[i], y as f32 - v[i]) {
                out[i] = 1.0;
            }
        }
    }
    out
}

/// `img` (3 planes) sampled at `q - w(q)`.
fn warp_planes(img: &[f32], h: usize, w: usize, u: &[f32], v: &[f32]) -> Vec<f32> {
    let n = h * w;
    let mut out = vec![0.0; 3 * n];
    for c in 0..3 {
        let plane = &img[c * n..(c + 1) * n];
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                out[c * n + i] = sample(plane, h, w, x as f32 - u[i], y as f32 - v[i]);
            }
        }
    }
    out
}

/// `A(q) [src(q); 1]` for every pixel.
fn compensate(src: &[f32], n: usize, a: &[f32]) -> Vec<f32> {
    let mut out = vec![0.0; 3 * n];
    for i in 0..n {
        let x = [src[i], src[n + i], src[2 * n + i], 1.0];
        for r in 0..3 {
            out[r * n + i] = (0..4).map(|k| a[(r * 4 + k) * n + i] * x[k]).sum();
        }
    }
    out
}

/// Sum-form energy of `field` for frames given as `[0, 1]` channel-major planes.
pub fn energy(i0: &[f32], i1: &[f32], field: &FlowColorField, sigma_s: f32, sigma_c: f32) -> f64 {
    let (h, w) = (field.height, field.width);
    let n = h * w;
    let warped = warp_planes(i0, h, w, &field.u, &field.v);
    let pred = compensate(&warped, n, &field.a);
    let valid = validity(h, w, &field.u, &field.v);
    let data: f64 = pred
        .iter()
        .zip(i1)
        .enumerate()
        .map(|(k, (a, b))| valid[k % n] as f64 * ((a - b) as f64).powi(2))
        .sum();
    let mut flow = 0.0f64;
    let mut color = 0.0f64;
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            for j in [(x + 1 < w).then(|| i + 1), (y + 1 < h).then(|| i + w)].into_iter().flatten() {
                flow += ((field.u[i] - field.u[j]) as f64).powi(2) + ((field.v[i] - field.v[j]) as f64).powi(2);
                for k in 0..12 {
                    color += ((field.a[k * n + i] - field.a[k * n + j]) as f64).powi(2);
                }
            }
        }
    }
    data + sigma_s as f64 * flow + sigma_c as f64 * color
}

/// Energy of `field` between two images.
pub fn field_energy(i0: &ImageRGB, i1: &ImageRGB, field: &FlowColorField, cfg: &FlowConfig) -> f64 {
    energy(&i0.to_unit(), &i1.to_unit(), field, cfg.sigma_s, cfg.sigma_c)
}

fn downsample(img: &[f32], planes: usize, h: usize, w: usize) -> (Vec<f32>, usize, usize) {
    let (h2, w2) = (h.div_ceil(2), w.div_ceil(2));
    let mut out = vec![0.0; planes * h2 * w2];
    for c in 0..planes {
        for y in 0..h2 {
            for x in 0..w2 {
                let mut s = 0.0;
                let mut k = 0.0;
                for yy in 2 * y..(2 * y + 2).min(h) {
                    for xx in 2 * x..(2 * x + 2).min(w) {
                        s += img[(c * h + yy) * w + xx];
                        k += 1.0;
                    }
                }
                out[(c * h2 + y) * w2 + x] = s / k;
            }
        }
    }
    (out, h2, w2)
}

/// Resize one plane with pixel-centre aligned bilinear interpolation.
pub(crate) fn resize_plane(plane: &[f32], h: usize, w: usize, nh: usize, nw: usize) -> Vec<f32> {
    let (sy, sx) = (h as f32 / nh as f32, w as f32 / nw as f32);
    let mut out = Vec::with_capacity(nh * nw);
    for y in 0..nh {
        for x in 0..nw {
            out.push(sample(plane, h, w, (x as f32 + 0.5) * sx - 0.5, (y as f32 + 0.5) * sy - 0.5));
        }
    }
    out
}

fn central_gradients(plane: &[f32], h: usize, w: usize) -> (Vec<f32>, Vec<f32>) {
    let mut gx = vec![0.0; h * w];
    let mut gy = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let (xl, xr) = (x.saturating_sub(1), (x + 1).min(w - 1));
            let (yu, yd) = (y.saturating_sub(1), (y + 1).min(h - 1));
            gx[y * w + x] = (plane[y * w + xr] - plane[y * w + xl]) / (xr - xl).max(1) as f32;
            gy[y * w + x] = (plane[yd * w + x] - plane[yu * w + x]) / (yd - yu).max(1) as f32;
        }
    }
    (gx, gy)
}

/// Linearized warping refinement of `(u, v)` at one pyramid level.
fn refine_level(src: &[f32], dst: &[f32], h: usize, w: usize, u: &mut [f32], v: &mut [f32], cfg: &FlowConfig) {
    let n = h * w;
    let grads: Vec<(Vec<f32>, Vec<f32>)> = (0..3).map(|c| central_gradients(&dst[c * n..(c + 1) * n], h, w)).collect();
    let sigma = cfg.sigma_s;
    let mut coef = vec![[0.0f32; 5]; n];
    let mut du = vec![0.0f32; n];
    let mut dv = vec![0.0f32; n];
    for _ in 0..cfg.warps {
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let (px, py) = (x as f32 + u[i], y as f32 + v[i]);
                let mut k = [0.0f32; 5];
                if !inside(h, w, px, py) {
                    coef[i] = k;
                    continue;
                }
                for c in 0..3 {
                    let plane = &dst[c * n..(c + 1) * n];
                    let tw = sample(plane, h, w, px, py);
                    let tx = sample(&grads[c].0, h, w, px, py);
                    let ty = sample(&grads[c].1, h, w, px, py);
                    let r = tw - src[c * n + i];
                    k[0] += tx * tx;
                    k[1] += tx * ty;
                    k[2] += ty * ty;
                    k[3] += tx * r;
                    k[4] += ty * r;
                }
                coef[i] = k;
            }
        }
        du.fill(0.0);
        dv.fill(0.0);
        for _ in 0..cfg.sweeps {
            for y in 0..h {
                for x in 0..w {
                    let i = y * w + x;
                    let (mut su, mut sv, mut cnt) = (0.0f32, 0.0f32, 0.0f32);
                    for j in neighbours(y, x, h, w) {
                        su += u[j] + du[j];
                        sv += v[j] + dv[j];
                        cnt += 1.0;
                    }
                    let k = coef[i];
                    let m11 = k[0] + sigma * cnt;
                    let m22 = k[2] + sigma * cnt;
                    let m12 = k[1];
                    let r1 = -k[3] + sigma * (su - cnt * u[i]);
                    let r2 = -k[4] + sigma * (sv - cnt * v[i]);
                    let det = m11 * m22 - m12 * m12;
                    du[i] = (m22 * r1 - m12 * r2) / det;
                    dv[i] = (m11 * r2 - m12 * r1) / det;
                }
            }
        }
        for i in 0..n {
            u[i] += du[i];
            v[i] += dv[i];
        }
    }
}

/// Coarse-to-fine flow from `src` to `dst` (both 3-plane), starting from `(u0, v0)`.
fn flow_step(src: &[f32], dst: &[f32], h: usize, w: usize, u0: &[f32], v0: &[f32], cfg: &FlowConfig) -> (Vec<f32>, Vec<f32>) {
    let mut pyr = vec![(src.to_vec(), dst.to_vec(), h, w)];
    while pyr.len() < cfg.levels {
        let (s, d, lh, lw) = pyr.last().unwrap();
        if lh.div_ceil(2) < cfg.min_size || lw.div_ceil(2) < cfg.min_size {
            break;
        }
        let (s2, h2, w2) = downsample(s, 3, *lh, *lw);
        let (d2, _, _) = downsample(d, 3, *lh, *lw);
        pyr.push((s2, d2, h2, w2));
    }
    let (_, _, ch, cw) = *pyr.last().unwrap();
    let mut u = resize_plane(u0, h, w, ch, cw);
    let mut v = resize_plane(v0, h, w, ch, cw);
    u.iter_mut().for_each(|x| *x *= cw as f32 / w as f32);
    v.iter_mut().for_each(|x| *x *= ch as f32 / h as f32);
    let (mut ph, mut pw) = (ch, cw);
    for (s, d, lh, lw) in pyr.iter().rev() {
        if (*lh, *lw) != (ph, pw) {
            u = resize_plane(&u, ph, pw, *lh, *lw);
            v = resize_plane(&v, ph, pw, *lh, *lw);
            let (fx, fy) = (*lw as f32 / pw as f32, *lh as f32 / ph as f32);
            u.iter_mut().for_each(|x| *x *= fx);
            v.iter_mut().for_each(|x| *x *= fy);
            (ph, pw) = (*lh, *lw);
        }
        refine_level(s, d, *lh, *lw, &mut u, &mut v, cfg);
    }
    (u, v)
}

/// Solve the symmetric positive definite 4x4 system `m x = b` (Cholesky, f64).
fn solve4(m: &[[f64; 4]; 4], b: [f64; 4]) -> [f64; 4] {
    let mut l = [[0.0f64; 4]; 4];
    for i in 0..4 {
        for j in 0..=i {
            let s: f64 = m[i][j] - (0..j).map(|k| l[i][k] * l[j][k]).sum::<f64>();
            l[i][j] = if i == j { s.max(1e-300).sqrt() } else { s / l[j][j] };
        }
    }
    let mut y = [0.0; 4];
    for i in 0..4 {
        y[i] = (b[i] - (0..i).map(|k| l[i][k] * y[k]).sum::<f64>()) / l[i][i];
    }
    let mut x = [0.0; 4];
    for i in (0..4).rev() {
        x[i] = (y[i] - (i + 1..4).map(|k| l[k][i] * x[k]).sum::<f64>()) / l[i][i];
    }
    x
}

fn homogeneous(src: &[f32], n: usize, i: usize) -> [f64; 4] {
    [src[i] as f64, src[n + i] as f64, src[2 * n + i] as f64, 1.0]
}

/// Per-pixel least-squares color maps over `(2r+1)^2` windows, pulled toward the identity.
fn windowed_color(src: &[f32], warped: &[f32], valid: &[f32], h: usize, w: usize, r: usize, tau: f32) -> Vec<f32> {
    let n = h * w;
    let mut a = vec![0.0f32; 12 * n];
    for y in 0..h {
        for x in 0..w {
            let mut m = [[0.0f64; 4]; 4];
            let mut b = [[0.0f64; 4]; 3];
            for yy in y.saturating_sub(r)..(y + r + 1).min(h) {
                for xx in x.saturating_sub(r)..(x + r + 1).min(w) {
                    let j = yy * w + xx;
                    let xt = homogeneous(src, n, j);
                    let wt = valid[j] as f64;
                    for p in 0..4 {
                        for q in 0..4 {
                            m[p][q] += wt * xt[p] * xt[q];
                        }
                        for c in 0..3 {
                            b[c][p] += wt * warped[c * n + j] as f64 * xt[p];
                        }
                    }
                }
            }
            for p in 0..4 {
                m[p][p] += tau as f64;
                for c in 0..3 {
                    b[c][p] += tau as f64 * IDENTITY_A[c * 4 + p] as f64;
                }
            }
            for c in 0..3 {
                let row = solve4(&m, b[c]);
                for p in 0..4 {
                    a[(c * 4 + p) * n + y * w + x] = row[p] as f32;
                }
            }
        }
    }
    a
}

/// One least-squares color map for the whole frame, pulled toward the identity.
fn global_color(src: &[f32], dst: &[f32], valid: &[f32], n: usize, tau: f32) -> [f32; 12] {
    let mut m = [[0.0f64; 4]; 4];
    let mut b = [[0.0f64; 4]; 3];
    for i in 0..n {
        let xt = homogeneous(src, n, i);
        let wt = valid[i] as f64;
        for p in 0..4 {
            for q in 0..4 {
                m[p][q] += wt * xt[p] * xt[q];
            }
            for c in 0..3 {
                b[c][p] += wt * dst[c * n + i] as f64 * xt[p];
            }
        }
    }
    let reg = tau as f64 * n as f64;
    for p in 0..4 {
        m[p][p] += reg;
        for c in 0..3 {
            b[c][p] += reg * IDENTITY_A[c * 4 + p] as f64;
        }
    }
    let mut a = [0.0f32; 12];
    for c in 0..3 {
        let row = solve4(&m, b[c]);
        for p in 0..4 {
            a[c * 4 + p] = row[p] as f32;
        }
    }
    a
}

/// Block Gauss-Seidel on the quadratic energy in `A` with the flow fixed.
fn color_sweeps(src: &[f32], warped: &[f32], valid: &[f32], h: usize, w: usize, a: &mut [f32], sigma: f32, sweeps: usize) {
    let n = h * w;
    let sigma = sigma as f64;
    for _ in 0..sweeps {
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let xt = homogeneous(src, n, i);
                let wt = valid[i] as f64;
                let mut m = [[0.0f64; 4]; 4];
                for p in 0..4 {
                    for q in 0..4 {
                        m[p][q] = wt * xt[p] * xt[q];
                    }
                }
                let mut b = [[0.0f64; 4]; 3];
                let mut cnt = 0.0;
                for j in neighbours(y, x, h, w) {
                    cnt += 1.0;
                    for c in 0..3 {
                        for p in 0..4 {
                            b[c][p] += sigma * a[(c * 4 + p) * n + j] as f64;
                        }
                    }
                }
                for p in 0..4 {
                    m[p][p] += sigma * cnt;
                    for c in 0..3 {
                        b[c][p] += wt * warped[c * n + i] as f64 * xt[p];
                    }
                }
                for c in 0..3 {
                    let row = solve4(&m, b[c]);
                    for p in 0..4 {
                        a[(c * 4 + p) * n + i] = row[p] as f32;
                    }
                }
            }
        }
    }
}

fn check_pair(i0: &ImageRGB, i1: &ImageRGB) -> Result<()> {
    if i0.height() != i1.height() || i0.width() != i1.width() {
        return Err(Error::Shape {
            node: "flow".into(),
            expected: vec![3, i0.height(), i0.width()],
            got: vec![3, i1.height(), i1.width()],
        });
    }
    Ok(())
}

/// One flow step followed by one color stage, each kept only if it does not raise the energy.
fn alternate(
    mut field: FlowColorField,
    mut e: f64,
    src: &[f32],
    dst: &[f32],
    cfg: &FlowConfig,
    eval: &dyn Fn(&FlowColorField) -> f64,
) -> (FlowColorField, f64) {
    let (h, w) = (field.height, field.width);
    let n = h * w;
    // Color is applied on the grid of I0 for the linearization; A is smooth, so this is close
    // to applying it after the warp, and the exact energy decides whether the step is kept.
    let compensated = compensate(src, n, &field.a);
    let neg = |p: &[f32]| p.iter().map(|x| -x).collect::<Vec<f32>>();
    let (u, v) = flow_step(dst, &compensated, h, w, &neg(&field.u), &neg(&field.v), cfg);
    let (u, v) = (neg(&u), neg(&v));
    if u.iter().chain(&v).all(|x| x.is_finite()) {
        let cand = FlowColorField { u, v, ..field.clone() };
        let ec = eval(&cand);
        if ec <= e {
            (field, e) = (cand, ec);
        }
    }
    if cfg.estimate_color {
        let warped = warp_planes(src, h, w, &field.u, &field.v);
        let valid = validity(h, w, &field.u, &field.v);
        let global = FlowColorField::uniform(h, w, 0.0, 0.0, global_color(&warped, dst, &valid, n, cfg.tikhonov)).a;
        let local = windowed_color(&warped, dst, &valid, h, w, cfg.window_radius, cfg.tikhonov);
        let mut cands = [field.clone(), field.clone(), field.clone()];
        cands[1].a = global;
        cands[2].a = local;
        for cand in cands.iter_mut() {
            color_sweeps(&warped, dst, &valid, h, w, &mut cand.a, cfg.sigma_c, cfg.color_sweeps);
        }
        for cand in cands {
            let ec = eval(&cand);
            if ec <= e && cand.is_finite() {
                (field, e) = (cand, ec);
            }
        }
    }
    (field, e)
}

/// Estimate the field from `i0` to `i1`, returning the energy after each stage.
pub fn estimate_flow_color_traced(i0: &ImageRGB, i1: &ImageRGB, cfg: &FlowConfig) -> Result<(FlowColorField, FlowTrace)> {
    check_pair(i0, i1)?;
    cfg.validate()?;
    let (h, w) = (i0.height(), i0.width());
    let n = h * w;
    let src = i0.to_unit();
    let dst = i1.to_unit();
    let eval = |f: &FlowColorField| energy(&src, &dst, f, cfg.sigma_s, cfg.sigma_c);
    let diverged = |what: &str, e: f64| {
        Error::SolverDiverged(format!("{what} produced energy {e} on a {h}x{w} pair"))
    };

    let mut field = FlowColorField::identity(h, w);
    let mut e = eval(&field);
    if cfg.estimate_color {
        // A single affine map over the whole frame absorbs global color changes before any
        // motion is estimated; local structure is left to the alternation.
        let cand = FlowColorField::uniform(h, w, 0.0, 0.0, global_color(&src, &dst, &vec![1.0; n], n, cfg.tikhonov));
        let ec = eval(&cand);
        if ec <= e {
            (field, e) = (cand, ec);
        }
    }
    if !e.is_finite() {
        return Err(diverged("initialization", e));
    }
    let mut trace = FlowTrace {
        energies: vec![e],
        fields: vec![field.clone()],
    };
    for _ in 0..cfg.outer {
        let mut best = alternate(field.clone(), e, &src, &dst, cfg, &eval);
        if cfg.estimate_color {
            // Second branch from a single color map at the current alignment, so motion that the
            // local maps absorbed early can still be recovered by the flow step.
            let warped = warp_planes(&src, h, w, &field.u, &field.v);
            let valid = validity(h, w, &field.u, &field.v);
            let reset = FlowColorField {
                a: FlowColorField::uniform(h, w, 0.0, 0.0, global_color(&warped, &dst, &valid, n, cfg.tikhonov)).a,
                ..field.clone()
            };
            let er = eval(&reset);
            if er.is_finite() {
                let other = alternate(reset, er, &src, &dst, cfg, &eval);
                if other.1 < best.1 {
                    best = other;
                }
            }
        }
        if best.1 <= e && best.0.is_finite() {
            (field, e) = best;
        }
        if !e.is_finite() || !field.is_finite() {
            return Err(diverged("outer iteration", e));
        }
        trace.energies.push(e);
        trace.fields.push(field.clone());
    }
    Ok((field, trace))
}

pub fn estimate_flow_color(i0: &ImageRGB, i1: &ImageRGB, cfg: &FlowConfig) -> Result<FlowColorField> {
    Ok(estimate_flow_color_traced(i0, i1, cfg)?.0)
}

fn compose_affine(outer: &[f32; 12], inner: &[f32; 12]) -> [f32; 12] {
    // [Mo | to] * [Mi | ti] = [Mo Mi | Mo ti + to]
    let mut r = [0.0f32; 12];
    for i in 0..3 {
        for j in 0..4 {
            let mut s: f32 = (0..3).map(|k| outer[i * 4 + k] * inner[k * 4 + j]).sum();
            if j == 3 {
                s += outer[i * 4 + 3];
            }
            r[i * 4 + j] = s;
        }
    }
    r
}

/// Field from `a` to `c` given fields `a -> b` and `b -> c` on their own grids.
pub fn compose_fields(ab: &FlowColorField, bc: &FlowColorField) -> Result<FlowColorField> {
    if (ab.height, ab.width) != (bc.height, bc.width) {
        return Err(Error::InvalidArgument("composed fields differ in size".into()));
    }
    let (h, w) = (ab.height, ab.width);
    let n = h * w;
    let mut out = FlowColorField::identity(h, w);
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            // c(q) ~ A_bc(q) b(r) with r = q - w_bc(q), and b(r) ~ A_ab(r) a(r - w_ab(r)).
            let (px, py) = (x as f32 - bc.u[i], y as f32 - bc.v[i]);
            out.u[i] = bc.u[i] + sample(&ab.u, h, w, px, py);
            out.v[i] = bc.v[i] + sample(&ab.v, h, w, px, py);
            let a_ab: [f32; 12] = std::array::from_fn(|k| sample(&ab.a[k * n..(k + 1) * n], h, w, px, py));
            let a = compose_affine(&bc.a_at(i), &a_ab);
            for k in 0..12 {
                out.a[k * n + i] = a[k];
            }
        }
    }
    Ok(out)
}

/// Render the image the field predicts from `x`: `A(q) [x(q - w(q)); 1]`, clamped to `[0, 1]`.
pub fn apply_field(x: &ImageRGB, f: &FlowColorField) -> Result<ImageRGB> {
    let (h, w) = (x.height(), x.width());
    if (h, w) != (f.height, f.width) {
        return Err(Error::InvalidArgument(format!(
            "field is {}x{}, image is {h}x{w}",
            f.height, f.width
        )));
    }
    let n = h * w;
    let warped = warp_planes(&x.to_unit(), h, w, &f.u, &f.v);
    let out: Vec<f32> = compensate(&warped, n, &f.a).into_iter().map(|c| c.clamp(0.0, 1.0)).collect();
    ImageRGB::from_unit(h, w, &out)
}

/// Resample every plane of a field to `nh x nw`, scaling displacements to the new pixel size.
pub fn resize_field(f: &FlowColorField, nh: usize, nw: usize) -> FlowColorField {
    let (h, w) = (f.height, f.width);
    let (sx, sy) = (nw as f32 / w as f32, nh as f32 / h as f32);
    let u = resize_plane(&f.u, h, w, nh, nw).into_iter().map(|x| x * sx).collect();
    let v = resize_plane(&f.v, h, w, nh, nw).into_iter().map(|x| x * sy).collect();
    let mut a = Vec::with_capacity(12 * nh * nw);
    for k in 0..12 {
        a.extend(resize_plane(f.a_plane(k), h, w, nh, nw));
    }
    FlowColorField {
        height: nh,
        width: nw,
        u,
        v,
        a,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solve4_recovers_known_solution() {
        let m = [[4.0, 1.0, 0.5, 0.0], [1.0, 3.0, 0.2, 0.1], [0.5, 0.2, 2.0, 0.3], [0.0, 0.1, 0.3, 1.0]];
        let x = [1.0, -2.0, 0.5, 3.0];
        let b: [f64; 4] = std::array::from_fn(|i| (0..4).map(|j| m[i][j] * x[j]).sum());
        let got = solve4(&m, b);
        for i in 0..4 {
            assert!((got[i] - x[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn affine_composition_is_matrix_product() {
        let scale = [0.5, 0.0, 0.0, 0.1, 0.0, 0.5, 0.0, 0.1, 0.0, 0.0, 0.5, 0.1];
        let shift = [1.0, 0.0, 0.0, 0.2, 0.0, 1.0, 0.0, 0.2, 0.0, 0.0, 1.0, 0.2];
        // shift after scale: x -> 0.5 x + 0.3
        let c = compose_affine(&shift, &scale);
        assert!((c[0] - 0.5).abs() < 1e-7 && (c[3] - 0.3).abs() < 1e-7);
    }

    #[test]
    fn gvmf_round_trip() {
        let f = FlowColorField::uniform(3, 4, 1.5, -0.25, [0.9, 0.1, 0.0, 0.05, 0.0, 1.0, 0.0, 0.0, 0.2, 0.0, 0.8, -0.1]);
        let back = FlowColorField::decode(&f.encode()).unwrap();
        assert_eq!(back, f);
        let mut bad = f.encode();
        bad[0] = b'X';
        assert!(matches!(FlowColorField::decode(&bad), Err(Error::BadMagic { .. })));
        assert!(matches!(FlowColorField::decode(&f.encode()[..20]), Err(Error::Corrupt(_))));
    }
}
