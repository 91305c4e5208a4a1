//! Motion+color field energy and field algebra, evaluated in `f64`.

/// A field given as plain planes: `u`, `v` and the twelve affine planes (row-major 3x4 matrix).
pub struct Field<'a> {
    pub height: usize,
    pub width: usize,
    pub u: &'a [f32],
    pub v: &'a [f32],
    /// `a[k]` is plane `k` of the affine map.
    pub a: Vec<&'a [f32]>,
}

/// Bilinear lookup with coordinates clamped to the grid.
pub fn bilinear(plane: &[f32], h: usize, w: usize, x: f64, y: f64) -> f64 {
    let x = x.max(0.0).min((w - 1) as f64);
    let y = y.max(0.0).min((h - 1) as f64);
    let xf = x.floor();
    let yf = y.floor();
    let (ax, ay) = (x - xf, y - yf);
    let px = |yy: usize, xx: usize| plane[yy.min(h - 1) * w + xx.min(w - 1)] as f64;
    let (x0, y0) = (xf as usize, yf as usize);
    (1.0 - ay) * ((1.0 - ax) * px(y0, x0) + ax * px(y0, x0 + 1)) + ay * ((1.0 - ax) * px(y0 + 1, x0) + ax * px(y0 + 1, x0 + 1))
}

/// `sum_q |A(q)[I0(q - w(q));1] - I1(q)|^2 + sigma_s |grad w|^2 + sigma_c |grad A|^2`, the data
/// sum taken over pixels whose source is on the grid, with forward differences over right and
/// down neighbours.
pub fn energy(i0: &[f32], i1: &[f32], f: &Field, sigma_s: f64, sigma_c: f64) -> f64 {
    let (h, w) = (f.height, f.width);
    let n = h * w;
    let mut total = 0.0;
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            let (sx, sy) = (x as f64 - f.u[p] as f64, y as f64 - f.v[p] as f64);
            // Sources off the grid carry no data term. The test runs in f32, the precision the
            // field is stored in, so both sides agree on pixels that land exactly on the border.
            let (fx, fy) = (x as f32 - f.u[p], y as f32 - f.v[p]);
            let on_grid = (0.0..=(w - 1) as f32).contains(&fx) && (0.0..=(h - 1) as f32).contains(&fy);
            let mut hom = [1.0; 4];
            for c in 0..3 {
                hom[c] = bilinear(&i0[c * n..(c + 1) * n], h, w, sx, sy);
            }
            for r in 0..3 {
                let mut pred = 0.0;
                for k in 0..4 {
                    pred += f.a[r * 4 + k][p] as f64 * hom[k];
                }
                let seen = i1[r * n + p] as f64;
                if on_grid {
                    total += (pred - seen) * (pred - seen);
                }
            }
            let mut pairs = Vec::new();
            if x + 1 < w {
                pairs.push(p + 1);
            }
            if y + 1 < h {
                pairs.push(p + w);
            }
            for q in pairs {
                let du = f.u[p] as f64 - f.u[q] as f64;
                let dv = f.v[p] as f64 - f.v[q] as f64;
                total += sigma_s * (du * du + dv * dv);
                for plane in &f.a {
                    let d = plane[p] as f64 - plane[q] as f64;
                    total += sigma_c * d * d;
                }
            }
        }
    }
    total
}
