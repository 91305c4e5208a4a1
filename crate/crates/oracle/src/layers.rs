//! Naive layer definitions (4x4 kernels, stride 2, padding 1) over `[n, ...]` batches.

/// One reference layer with its parameters inlined.
#[derive(Clone, Debug)]
pub enum RefLayer {
    /// `w` is `[cout][cin][4][4]`.
    Conv { w: Vec<f64>, b: Vec<f64>, cin: usize, cout: usize },
    /// `w` is `[cin][cout][4][4]`; defined by scattering each input pixel through the kernel.
    ConvT { w: Vec<f64>, b: Vec<f64>, cin: usize, cout: usize },
    /// Normalizes with the statistics of the current batch.
    BatchNormTrain { gamma: Vec<f64>, beta: Vec<f64>, eps: f64 },
    BatchNormInference { gamma: Vec<f64>, beta: Vec<f64>, mean: Vec<f64>, var: Vec<f64>, eps: f64 },
    Relu,
    LeakyRelu(f64),
    Tanh,
    Sigmoid,
    /// `w` is `[fo][fi]`.
    Linear { w: Vec<f64>, b: Vec<f64>, fi: usize, fo: usize },
    Reshape(Vec<usize>),
}

/// Output of a reference forward pass.
#[derive(Clone, Debug)]
pub struct RefOutput {
    pub data: Vec<f64>,
    /// Per-sample output shape.
    pub shape: Vec<usize>,
    /// Branch taken by every relu / leaky-relu element, in evaluation order.
    pub gates: Vec<bool>,
}

pub fn forward(layers: &[RefLayer], input: &[f64], batch: usize, sample_shape: &[usize]) -> RefOutput {
    forward_gated(layers, input, batch, sample_shape, None)
}

/// Like [`forward`], but with every relu / leaky-relu branch taken from `frozen` (as returned in
/// [`RefOutput::gates`] at a base point) instead of the sign of its input. Finite differences of
/// this function give the one-sided derivative on the base point's linear piece.
pub fn forward_gated(
    layers: &[RefLayer],
    input: &[f64],
    batch: usize,
    sample_shape: &[usize],
    frozen: Option<&[bool]>,
) -> RefOutput {
    let mut x = input.to_vec();
    let mut shape = sample_shape.to_vec();
    let mut gates = Vec::new();
    for layer in layers {
        let (y, s) = apply(layer, &x, batch, &shape, &mut gates, frozen);
        x = y;
        shape = s;
    }
    RefOutput { data: x, shape, gates }
}

fn apply(
    layer: &RefLayer,
    x: &[f64],
    n: usize,
    shape: &[usize],
    gates: &mut Vec<bool>,
    frozen: Option<&[bool]>,
) -> (Vec<f64>, Vec<usize>) {
    let mut gate = |v: f64| {
        let g = match frozen {
            Some(f) => f[gates.len()],
            None => v > 0.0,
        };
        gates.push(g);
        g
    };
    match layer {
        RefLayer::Conv { w, b, cin, cout } => {
            let (h, wd) = (shape[1], shape[2]);
            assert_eq!(shape[0], *cin);
            let (oh, ow) = (h / 2, wd / 2);
            let mut y = vec![0.0; n * cout * oh * ow];
            for s in 0..n {
                for o in 0..*cout {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut acc = b[o];
                            for c in 0..*cin {
                                for ky in 0..4 {
                                    for kx in 0..4 {
                                        let iy = (2 * oy + ky) as isize - 1;
                                        let ix = (2 * ox + kx) as isize - 1;
                                        if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                            continue;
                                        }
                                        acc += w[((o * cin + c) * 4 + ky) * 4 + kx]
                                            * x[((s * cin + c) * h + iy as usize) * wd + ix as usize];
                                    }
                                }
                            }
                            y[((s * cout + o) * oh + oy) * ow + ox] = acc;
                        }
                    }
                }
            }
            (y, vec![*cout, oh, ow])
        }
        RefLayer::ConvT { w, b, cin, cout } => {
            let (h, wd) = (shape[1], shape[2]);
            assert_eq!(shape[0], *cin);
            let (oh, ow) = (2 * h, 2 * wd);
            let mut y = vec![0.0; n * cout * oh * ow];
            for s in 0..n {
                for o in 0..*cout {
                    for p in 0..oh * ow {
                        y[(s * cout + o) * oh * ow + p] = b[o];
                    }
                }
                for c in 0..*cin {
                    for iy in 0..h {
                        for ix in 0..wd {
                            let v = x[((s * cin + c) * h + iy) * wd + ix];
                            for o in 0..*cout {
                                for ky in 0..4 {
                                    for kx in 0..4 {
                                        let oy = (2 * iy + ky) as isize - 1;
                                        let ox = (2 * ix + kx) as isize - 1;
                                        if oy < 0 || ox < 0 || oy >= oh as isize || ox >= ow as isize {
                                            continue;
                                        }
                                        y[((s * cout + o) * oh + oy as usize) * ow + ox as usize] +=
                                            w[((c * cout + o) * 4 + ky) * 4 + kx] * v;
                                    }
                                }
                            }
                        }
                    }
                }
            }
            (y, vec![*cout, oh, ow])
        }
        RefLayer::BatchNormTrain { gamma, beta, eps } => {
            let c = shape[0];
            let sp: usize = shape[1..].iter().product();
            let mut y = x.to_vec();
            for ch in 0..c {
                let idx: Vec<usize> = (0..n).flat_map(|s| (0..sp).map(move |k| (s * c + ch) * sp + k)).collect();
                let m = idx.iter().map(|&i| x[i]).sum::<f64>() / idx.len() as f64;
                let v = idx.iter().map(|&i| (x[i] - m).powi(2)).sum::<f64>() / idx.len() as f64;
                for &i in &idx {
                    y[i] = gamma[ch] * (x[i] - m) / (v + eps).sqrt() + beta[ch];
                }
            }
            (y, shape.to_vec())
        }
        RefLayer::BatchNormInference { gamma, beta, mean, var, eps } => {
            let c = shape[0];
            let sp: usize = shape[1..].iter().product();
            let mut y = x.to_vec();
            for s in 0..n {
                for ch in 0..c {
                    for k in 0..sp {
                        let i = (s * c + ch) * sp + k;
                        y[i] = gamma[ch] * (x[i] - mean[ch]) / (var[ch] + eps).sqrt() + beta[ch];
                    }
                }
            }
            (y, shape.to_vec())
        }
        RefLayer::Relu => (
            x.iter().map(|&v| if gate(v) { v } else { 0.0 }).collect(),
            shape.to_vec(),
        ),
        RefLayer::LeakyRelu(a) => (
            x.iter().map(|&v| if gate(v) { v } else { a * v }).collect(),
            shape.to_vec(),
        ),
        RefLayer::Tanh => (x.iter().map(|v| v.tanh()).collect(), shape.to_vec()),
        RefLayer::Sigmoid => (x.iter().map(|v| 1.0 / (1.0 + (-v).exp())).collect(), shape.to_vec()),
        RefLayer::Linear { w, b, fi, fo } => {
            assert_eq!(shape, [*fi]);
            let mut y = vec![0.0; n * fo];
            for s in 0..n {
                for o in 0..*fo {
                    y[s * fo + o] = b[o] + (0..*fi).map(|i| w[o * fi + i] * x[s * fi + i]).sum::<f64>();
                }
            }
            (y, vec![*fo])
        }
        RefLayer::Reshape(s) => {
            assert_eq!(s.iter().product::<usize>(), shape.iter().product::<usize>());
            (x.to_vec(), s.clone())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_transpose_is_adjoint_of_conv() {
        // <conv(x), y> == <x, convT(y)> with shared weights and zero bias.
        let (cin, cout, h) = (2, 3, 4);
        let mut rng = crate::SplitMix(9);
        let w = rng.vec(cout * cin * 16, -1.0, 1.0);
        let x = rng.vec(cin * h * h, -1.0, 1.0);
        let y = rng.vec(cout * (h / 2) * (h / 2), -1.0, 1.0);
        let conv = RefLayer::Conv { w: w.clone(), b: vec![0.0; cout], cin, cout };
        // conv weight [cout][cin] used as convT weight [cin'=cout][cout'=cin].
        let convt = RefLayer::ConvT { w, b: vec![0.0; cin], cin: cout, cout: cin };
        let cx = forward(&[conv], &x, 1, &[cin, h, h]).data;
        let ty = forward(&[convt], &y, 1, &[cout, h / 2, h / 2]).data;
        let lhs: f64 = cx.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&ty).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
