//! Complex FFT: iterative radix-2 for power-of-two sizes, direct DFT
//! otherwise.

use alloc::vec::Vec;
use core::f64::consts::PI;
#[allow(unused_imports)]
use num_traits::Float;

#[derive(Debug, Clone)]
pub struct Fft {
    n: usize,
    cos: Vec<f64>,
    sin: Vec<f64>,
    bitrev: Vec<usize>,
}

impl Fft {
    pub fn new(n: usize) -> Self {
        let (cos, sin) = (0..n)
            .map(|k| {
                let a = -2.0 * PI * k as f64 / n as f64;
                (a.cos(), a.sin())
            })
            .unzip();
        let bitrev = if n.is_power_of_two() {
            let bits = n.trailing_zeros();
            (0..n).map(|i| if bits == 0 { 0 } else { i.reverse_bits() >> (usize::BITS - bits) }).collect()
        } else {
            Vec::new()
        };
        Fft { n, cos, sin, bitrev }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Forward transform in place.
    pub fn forward(&self, re: &mut [f64], im: &mut [f64]) {
        assert!(re.len() == self.n && im.len() == self.n);
        if self.n.is_power_of_two() {
            self.radix2(re, im);
        } else {
            self.direct(re, im);
        }
    }

    fn radix2(&self, re: &mut [f64], im: &mut [f64]) {
        let n = self.n;
        for i in 0..n {
            let j = self.bitrev[i];
            if j > i {
                re.swap(i, j);
                im.swap(i, j);
            }
        }
        let mut len = 2;
        while len <= n {
            let half = len / 2;
            let stride = n / len;
            for start in (0..n).step_by(len) {
                for k in 0..half {
                    let (wr, wi) = (self.cos[k * stride], self.sin[k * stride]);
                    let (a, b) = (start + k, start + k + half);
                    let tr = re[b] * wr - im[b] * wi;
                    let ti = re[b] * wi + im[b] * wr;
                    re[b] = re[a] - tr;
                    im[b] = im[a] - ti;
                    re[a] += tr;
                    im[a] += ti;
                }
            }
            len <<= 1;
        }
    }

    fn direct(&self, re: &mut [f64], im: &mut [f64]) {
        let n = self.n;
        let (xr, xi) = (re.to_vec(), im.to_vec());
        for k in 0..n {
            let (mut sr, mut si) = (0.0, 0.0);
            for t in 0..n {
                let idx = (k * t) % n;
                let (c, s) = (self.cos[idx], self.sin[idx]);
                sr += xr[t] * c - xi[t] * s;
                si += xr[t] * s + xi[t] * c;
            }
            re[k] = sr;
            im[k] = si;
        }
    }
}
