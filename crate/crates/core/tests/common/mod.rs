//! Reference computations for the integration tests. Nothing here calls
//! into the code under test.

#![allow(dead_code)]

use nalgebra::DMatrix;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Pad {
    Zero,
    Circular,
}

/// Pads the image by `p` on every side (zeros or periodic copies) and slides
/// the kernel over the padded image without index arithmetic on the
/// original grid.
pub fn direct_conv(kernel: &DMatrix<f64>, image: &DMatrix<f64>, pad: Pad) -> DMatrix<f64> {
    let f = kernel.nrows();
    let p = (f - 1) / 2;
    let (h, w) = image.shape();
    let padded = DMatrix::from_fn(h + 2 * p, w + 2 * p, |r, c| {
        let (r, c) = (r as i64 - p as i64, c as i64 - p as i64);
        match pad {
            Pad::Zero => {
                if r < 0 || c < 0 || r >= h as i64 || c >= w as i64 {
                    0.0
                } else {
                    image[(r as usize, c as usize)]
                }
            }
            Pad::Circular => image[(r.rem_euclid(h as i64) as usize, c.rem_euclid(w as i64) as usize)],
        }
    });
    DMatrix::from_fn(h, w, |r, c| {
        let window = padded.view((r, c), (f, f));
        window.component_mul(kernel).sum()
    })
}

/// Row-major flattening.
pub fn vec_row_major(m: &DMatrix<f64>) -> Vec<f64> {
    (0..m.nrows()).flat_map(|r| (0..m.ncols()).map(move |c| m[(r, c)])).collect()
}

/// Composite Simpson rule on `[a, b]` with `n` (even) panels.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        let x = a + i as f64 * h;
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(x);
    }
    s * h / 3.0
}

/// Variance of a standard normal truncated to `[-2, 2]`, by quadrature.
pub fn truncated_unit_variance() -> f64 {
    let phi = |x: f64| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let mass = simpson(phi, -2.0, 2.0, 2000);
    simpson(|x| x * x * phi(x), -2.0, 2.0, 2000) / mass
}

/// Small deterministic generator (SplitMix64) so test inputs do not share a
/// code path with the library's own sampling.
pub struct SplitMix(pub u64);

impl SplitMix {
    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in `[-1, 1)`.
    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
    }

    pub fn below(&mut self, n: usize) -> usize {
        (self.next_u64() % n as u64) as usize
    }

    pub fn matrix(&mut self, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| self.unit())
    }
}
