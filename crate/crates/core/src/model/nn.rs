//! Minimal layers over a flat parameter vector: stride-2 3x3 convolutions and dense layers.

use std::ops::Range;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Named tensors laid out back to back.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamLayout {
    pub tensors: Vec<TensorSpec>,
    pub len: usize,
}

impl ParamLayout {
    pub fn add(&mut self, name: impl Into<String>, shape: &[usize]) -> Range<usize> {
        let spec = TensorSpec { name: name.into(), shape: shape.to_vec() };
        let start = self.len;
        self.len += spec.len();
        self.tensors.push(spec);
        start..self.len
    }

    /// Ranges in declaration order.
    pub fn ranges(&self) -> impl Iterator<Item = (&TensorSpec, Range<usize>)> {
        self.tensors.iter().scan(0, |at, t| {
            let r = *at..*at + t.len();
            *at = r.end;
            Some((t, r))
        })
    }
}

/// 3x3 convolution, stride 2, zero padding 1, channel-major `[c][y][x]`.
#[derive(Debug, Clone)]
pub struct Conv {
    pub w: Range<usize>,
    pub b: Range<usize>,
    pub cin: usize,
    pub cout: usize,
}

impl Conv {
    pub fn new(layout: &mut ParamLayout, name: &str, cin: usize, cout: usize) -> Self {
        let w = layout.add(format!("{name}.weight"), &[cout, cin, 3, 3]);
        let b = layout.add(format!("{name}.bias"), &[cout]);
        Self { w, b, cin, cout }
    }

    /// Patch matrix `[cin * 9][m * m]` of an `n x n` input, zero outside.
    fn im2col(&self, input: &[f64], n: usize) -> Vec<f64> {
        let m = n / 2;
        let mut col = vec![0.0; self.cin * 9 * m * m];
        for i in 0..self.cin {
            let src = &input[i * n * n..(i + 1) * n * n];
            for ky in 0..3 {
                for kx in 0..3 {
                    let row = &mut col[((i * 3 + ky) * 3 + kx) * m * m..][..m * m];
                    for y in 0..m {
                        let sy = (2 * y + ky) as isize - 1;
                        if sy < 0 || sy >= n as isize {
                            continue;
                        }
                        for x in 0..m {
                            let sx = (2 * x + kx) as isize - 1;
                            if sx >= 0 && sx < n as isize {
                                row[y * m + x] = src[sy as usize * n + sx as usize];
                            }
                        }
                    }
                }
            }
        }
        col
    }

    /// Input is `cin x n x n`; output is `cout x n/2 x n/2`.
    pub fn forward(&self, p: &[f64], input: &[f64], n: usize) -> Vec<f64> {
        let mm = (n / 2) * (n / 2);
        let k = self.cin * 9;
        let (w, b) = (&p[self.w.clone()], &p[self.b.clone()]);
        let col = self.im2col(input, n);
        let mut out = vec![0.0; self.cout * mm];
        for (o, plane) in out.chunks_exact_mut(mm).enumerate() {
            plane.fill(b[o]);
            for (wk, row) in w[o * k..(o + 1) * k].iter().zip(col.chunks_exact(mm)) {
                for (d, s) in plane.iter_mut().zip(row) {
                    *d += wk * s;
                }
            }
        }
        out
    }

    /// Accumulates parameter gradients into `grad` and returns the input gradient.
    pub fn backward(&self, p: &[f64], input: &[f64], n: usize, gout: &[f64], grad: &mut [f64]) -> Vec<f64> {
        let m = n / 2;
        let mm = m * m;
        let k = self.cin * 9;
        let w = &p[self.w.clone()];
        let col = self.im2col(input, n);
        let mut gcol = vec![0.0; k * mm];
        for (o, g) in gout.chunks_exact(mm).enumerate() {
            grad[self.b.start + o] += g.iter().sum::<f64>();
            let gw = &mut grad[self.w.start + o * k..self.w.start + (o + 1) * k];
            for (j, (row, grow)) in col.chunks_exact(mm).zip(gcol.chunks_exact_mut(mm)).enumerate() {
                gw[j] += dot(row, g);
                let wk = w[o * k + j];
                for (d, s) in grow.iter_mut().zip(g) {
                    *d += wk * s;
                }
            }
        }
        // col2im
        let mut gin = vec![0.0; self.cin * n * n];
        for i in 0..self.cin {
            let dst = &mut gin[i * n * n..(i + 1) * n * n];
            for ky in 0..3 {
                for kx in 0..3 {
                    let row = &gcol[((i * 3 + ky) * 3 + kx) * mm..][..mm];
                    for y in 0..m {
                        let sy = (2 * y + ky) as isize - 1;
                        if sy < 0 || sy >= n as isize {
                            continue;
                        }
                        for x in 0..m {
                            let sx = (2 * x + kx) as isize - 1;
                            if sx >= 0 && sx < n as isize {
                                dst[sy as usize * n + sx as usize] += row[y * m + x];
                            }
                        }
                    }
                }
            }
        }
        gin
    }
}

/// `y = W x + b` with `W` stored `[out][in]`.
#[derive(Debug, Clone)]
pub struct Dense {
    pub w: Range<usize>,
    pub b: Range<usize>,
    pub nin: usize,
    pub nout: usize,
}

impl Dense {
    pub fn new(layout: &mut ParamLayout, name: &str, nin: usize, nout: usize) -> Self {
        let w = layout.add(format!("{name}.weight"), &[nout, nin]);
        let b = layout.add(format!("{name}.bias"), &[nout]);
        Self { w, b, nin, nout }
    }

    pub fn forward(&self, p: &[f64], x: &[f64]) -> Vec<f64> {
        let (w, b) = (&p[self.w.clone()], &p[self.b.clone()]);
        (0..self.nout)
            .map(|o| b[o] + dot(&w[o * self.nin..(o + 1) * self.nin], x))
            .collect()
    }

    pub fn backward(&self, p: &[f64], x: &[f64], gy: &[f64], grad: &mut [f64]) -> Vec<f64> {
        let w = &p[self.w.clone()];
        let mut gx = vec![0.0; self.nin];
        for o in 0..self.nout {
            let g = gy[o];
            if g == 0.0 {
                continue;
            }
            grad[self.b.start + o] += g;
            let row = &w[o * self.nin..(o + 1) * self.nin];
            let grow = &mut grad[self.w.start + o * self.nin..self.w.start + (o + 1) * self.nin];
            for ((gw, gi), (xi, wi)) in grow.iter_mut().zip(gx.iter_mut()).zip(x.iter().zip(row)) {
                *gw += g * xi;
                *gi += g * wi;
            }
        }
        gx
    }
}

/// Dot product with four independent accumulators so the loop vectorizes.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

pub fn relu(mut x: Vec<f64>) -> Vec<f64> {
    x.iter_mut().for_each(|v| *v = v.max(0.0));
    x
}

/// Masks `g` where the activation output was zero.
pub fn relu_backward(out: &[f64], mut g: Vec<f64>) -> Vec<f64> {
    for (gi, o) in g.iter_mut().zip(out) {
        if *o <= 0.0 {
            *gi = 0.0;
        }
    }
    g
}

/// Returns `(u / |u|, |u|)`.
/// Unit vector and the norm it was divided by. A zero input maps to the first axis with an
/// infinite norm, so the backward pass sends no gradient through it.
pub fn l2_normalize(u: &[f64]) -> (Vec<f64>, f64) {
    let n = u.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n < 1e-12 {
        let mut e = vec![0.0; u.len()];
        if let Some(first) = e.first_mut() {
            *first = 1.0;
        }
        return (e, f64::INFINITY);
    }
    (u.iter().map(|v| v / n).collect(), n)
}

pub fn l2_normalize_backward(z: &[f64], norm: f64, g: &[f64]) -> Vec<f64> {
    let zg: f64 = z.iter().zip(g).map(|(a, b)| a * b).sum();
    z.iter().zip(g).map(|(zi, gi)| (gi - zi * zg) / norm).collect()
}
