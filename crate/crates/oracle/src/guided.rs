//! Guided filter and bilinear resize by direct window sums in `f64`.

/// Mean of `f` over the `(2r+1)^2` window around `(y, x)`, clipped to the image.
fn window_mean(f: &dyn Fn(usize, usize) -> f64, h: usize, w: usize, y: usize, x: usize, r: usize) -> f64 {
    let (mut s, mut k) = (0.0, 0.0);
    for yy in y.saturating_sub(r)..=(y + r).min(h - 1) {
        for xx in x.saturating_sub(r)..=(x + r).min(w - 1) {
            s += f(yy, xx);
            k += 1.0;
        }
    }
    s / k
}

pub fn guided_filter(guide: &[f64], input: &[f64], h: usize, w: usize, r: usize, eps: f64) -> Vec<f64> {
    let i = |y: usize, x: usize| guide[y * w + x];
    let p = |y: usize, x: usize| input[y * w + x];
    let mut a = vec![0.0; h * w];
    let mut b = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mi = window_mean(&i, h, w, y, x, r);
            let mp = window_mean(&p, h, w, y, x, r);
            let mii = window_mean(&|yy, xx| i(yy, xx) * i(yy, xx), h, w, y, x, r);
            let mip = window_mean(&|yy, xx| i(yy, xx) * p(yy, xx), h, w, y, x, r);
            let ak = (mip - mi * mp) / (mii - mi * mi + eps);
            a[y * w + x] = ak;
            b[y * w + x] = mp - ak * mi;
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let ma = window_mean(&|yy, xx| a[yy * w + xx], h, w, y, x, r);
            let mb = window_mean(&|yy, xx| b[yy * w + xx], h, w, y, x, r);
            out[y * w + x] = ma * i(y, x) + mb;
        }
    }
    out
}

/// Pixel-centre aligned bilinear resize of one plane, sampling positions clamped to the grid.
pub fn resize(plane: &[f64], h: usize, w: usize, nh: usize, nw: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(nh * nw);
    for y in 0..nh {
        for x in 0..nw {
            let sy = ((y as f64 + 0.5) * h as f64 / nh as f64 - 0.5).max(0.0).min((h - 1) as f64);
            let sx = ((x as f64 + 0.5) * w as f64 / nw as f64 - 0.5).max(0.0).min((w - 1) as f64);
            let (y0, x0) = (sy.floor() as usize, sx.floor() as usize);
            let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
            let (fy, fx) = (sy - y0 as f64, sx - x0 as f64);
            let v = plane[y0 * w + x0] * (1.0 - fy) * (1.0 - fx)
                + plane[y0 * w + x1] * (1.0 - fy) * fx
                + plane[y1 * w + x0] * fy * (1.0 - fx)
                + plane[y1 * w + x1] * fy * fx;
            out.push(v);
        }
    }
    out
}
