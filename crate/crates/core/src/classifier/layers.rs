//! Dense kernels over `[batch][channel][height][width]` buffers.

use alloc::vec;
use alloc::vec::Vec;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape4 {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape4 {
    pub fn len(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }
}

#[inline]
fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yv, &xv) in y.iter_mut().zip(x) {
        *yv += a * xv;
    }
}

#[inline]
fn dot(x: &[f64], y: &[f64]) -> f64 {
    // four accumulators let the compiler vectorize
    let mut acc = [0.0; 4];
    let mut xc = x.chunks_exact(4);
    let mut yc = y.chunks_exact(4);
    for (a, b) in (&mut xc).zip(&mut yc) {
        for k in 0..4 {
            acc[k] += a[k] * b[k];
        }
    }
    let tail: f64 = xc.remainder().iter().zip(yc.remainder()).map(|(a, b)| a * b).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Valid output/input index ranges for a kernel offset `d` in {-1, 0, 1}.
#[inline]
fn span(len: usize, d: isize) -> (usize, usize) {
    let lo = if d < 0 { 1 } else { 0 };
    let hi = if d > 0 { len.saturating_sub(1) } else { len };
    (lo, hi)
}

/// 3x3 convolution, stride 1, zero padding 1, no bias.
/// `weight` is `[c_out][c_in][3][3]`.
pub fn conv3x3_forward(x: &[f64], s: Shape4, weight: &[f64], c_out: usize) -> Vec<f64> {
    let (h, w) = (s.h, s.w);
    let plane = s.plane();
    let mut out = vec![0.0; s.n * c_out * plane];
    for n in 0..s.n {
        for co in 0..c_out {
            let o = &mut out[(n * c_out + co) * plane..][..plane];
            for ci in 0..s.c {
                let inp = &x[(n * s.c + ci) * plane..][..plane];
                let k = &weight[(co * s.c + ci) * 9..][..9];
                for ky in 0..3 {
                    let dy = ky as isize - 1;
                    let (y0, y1) = span(h, dy);
                    for kx in 0..3 {
                        let dx = kx as isize - 1;
                        let (x0, x1) = span(w, dx);
                        if x1 <= x0 {
                            continue;
                        }
                        let wv = k[ky * 3 + kx];
                        for y in y0..y1 {
                            let src = ((y as isize + dy) as usize) * w;
                            let xs = (x0 as isize + dx) as usize;
                            axpy(wv, &inp[src + xs..src + xs + (x1 - x0)], &mut o[y * w + x0..y * w + x1]);
                        }
                    }
                }
            }
        }
    }
    out
}

/// Returns `(dx, dweight)`.
pub fn conv3x3_backward(x: &[f64], s: Shape4, weight: &[f64], c_out: usize, dout: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let (h, w) = (s.h, s.w);
    let plane = s.plane();
    let mut dx = vec![0.0; x.len()];
    let mut dw = vec![0.0; weight.len()];
    for n in 0..s.n {
        for co in 0..c_out {
            let g = &dout[(n * c_out + co) * plane..][..plane];
            for ci in 0..s.c {
                let base = (n * s.c + ci) * plane;
                let inp = &x[base..base + plane];
                let k = &weight[(co * s.c + ci) * 9..][..9];
                let dk = &mut dw[(co * s.c + ci) * 9..][..9];
                let di = &mut dx[base..base + plane];
                for ky in 0..3 {
                    let dy = ky as isize - 1;
                    let (y0, y1) = span(h, dy);
                    for kx in 0..3 {
                        let dxo = kx as isize - 1;
                        let (x0, x1) = span(w, dxo);
                        if x1 <= x0 {
                            continue;
                        }
                        let wv = k[ky * 3 + kx];
                        let mut acc = 0.0;
                        for y in y0..y1 {
                            let src = ((y as isize + dy) as usize) * w + (x0 as isize + dxo) as usize;
                            let grow = &g[y * w + x0..y * w + x1];
                            acc += dot(grow, &inp[src..src + (x1 - x0)]);
                            axpy(wv, grow, &mut di[src..src + (x1 - x0)]);
                        }
                        dk[ky * 3 + kx] += acc;
                    }
                }
            }
        }
    }
    (dx, dw)
}

/// Convolution whose kernel spans the full height: `[c_out][c_in][h]`
/// weights map `[n][c_in][h][w]` to `[n][c_out][1][w]`.
pub fn full_height_forward(x: &[f64], s: Shape4, weight: &[f64], c_out: usize) -> Vec<f64> {
    let plane = s.plane();
    let mut out = vec![0.0; s.n * c_out * s.w];
    for n in 0..s.n {
        for co in 0..c_out {
            let o = &mut out[(n * c_out + co) * s.w..][..s.w];
            for ci in 0..s.c {
                let inp = &x[(n * s.c + ci) * plane..][..plane];
                let k = &weight[(co * s.c + ci) * s.h..][..s.h];
                for (y, &wv) in k.iter().enumerate() {
                    axpy(wv, &inp[y * s.w..(y + 1) * s.w], o);
                }
            }
        }
    }
    out
}

/// Returns `(dx, dweight)`.
pub fn full_height_backward(x: &[f64], s: Shape4, weight: &[f64], c_out: usize, dout: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let plane = s.plane();
    let mut dx = vec![0.0; x.len()];
    let mut dw = vec![0.0; weight.len()];
    for n in 0..s.n {
        for co in 0..c_out {
            let g = &dout[(n * c_out + co) * s.w..][..s.w];
            for ci in 0..s.c {
                let base = (n * s.c + ci) * plane;
                let k = (co * s.c + ci) * s.h;
                for y in 0..s.h {
                    let row = base + y * s.w..base + (y + 1) * s.w;
                    dw[k + y] += dot(g, &x[row.clone()]);
                    axpy(weight[k + y], g, &mut dx[row]);
                }
            }
        }
    }
    (dx, dw)
}

pub fn relu_inplace(x: &mut [f64]) {
    for v in x {
        *v = v.max(0.0);
    }
}

/// Zeroes `dy` where the ReLU output was not positive.
pub fn relu_backward_inplace(dy: &mut [f64], out: &[f64]) {
    for (d, &o) in dy.iter_mut().zip(out) {
        if o <= 0.0 {
            *d = 0.0;
        }
    }
}

/// Non-overlapping average pooling; trailing rows/columns that do not fill
/// a window are dropped.
pub fn avg_pool_forward(x: &[f64], s: Shape4, ph: usize, pw: usize) -> (Vec<f64>, Shape4) {
    let os = Shape4 { n: s.n, c: s.c, h: s.h / ph, w: s.w / pw };
    let scale = 1.0 / (ph * pw) as f64;
    let mut out = vec![0.0; os.len()];
    for nc in 0..s.n * s.c {
        let inp = &x[nc * s.plane()..][..s.plane()];
        let o = &mut out[nc * os.plane()..][..os.plane()];
        for oy in 0..os.h {
            for iy in oy * ph..oy * ph + ph {
                let row = &inp[iy * s.w..][..os.w * pw];
                for (ox, win) in row.chunks_exact(pw).enumerate() {
                    o[oy * os.w + ox] += win.iter().sum::<f64>();
                }
            }
        }
        o.iter_mut().for_each(|v| *v *= scale);
    }
    (out, os)
}

pub fn avg_pool_backward(dout: &[f64], s: Shape4, ph: usize, pw: usize) -> Vec<f64> {
    let os = Shape4 { n: s.n, c: s.c, h: s.h / ph, w: s.w / pw };
    let scale = 1.0 / (ph * pw) as f64;
    let mut dx = vec![0.0; s.len()];
    for nc in 0..s.n * s.c {
        let g = &dout[nc * os.plane()..][..os.plane()];
        let d = &mut dx[nc * s.plane()..][..s.plane()];
        for oy in 0..os.h {
            for iy in oy * ph..oy * ph + ph {
                let row = &mut d[iy * s.w..][..os.w * pw];
                for (ox, win) in row.chunks_exact_mut(pw).enumerate() {
                    win.fill(g[oy * os.w + ox] * scale);
                }
            }
        }
    }
    dx
}
