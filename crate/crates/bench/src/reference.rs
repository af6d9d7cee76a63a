//! Direct Rust implementations of the benchmarks, used to check the IR
//! kernels. Floating-point operations follow the kernels' evaluation order.

/// `input` is `(h + 2) x (w + 2)`, row-major; `k` is 3x3.
pub fn convolution(h: usize, w: usize, input: &[f64], k: &[f64; 9]) -> Vec<f64> {
    let pw = w + 2;
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut s = 0.0;
            for dy in 0..3 {
                for dx in 0..3 {
                    s += input[(y + dy) * pw + x + dx] * k[dy * 3 + dx];
                }
            }
            out[y * w + x] = s;
        }
    }
    out
}

pub fn matmult(n: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut c = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let mut s = 0.0;
            for k in 0..n {
                s += a[i * n + k] * b[k * n + j];
            }
            c[i * n + j] = s;
        }
    }
    c
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MandelbrotParams {
    pub h: usize,
    pub w: usize,
    pub max_iter: i64,
    pub x0: f64,
    pub y0: f64,
    pub dx: f64,
    pub dy: f64,
}

impl MandelbrotParams {
    /// The window `[-2, 1] x [-1.5, 1.5]` sampled on an `h x w` grid.
    pub fn standard(h: usize, w: usize, max_iter: i64) -> Self {
        MandelbrotParams { h, w, max_iter, x0: -2.0, y0: -1.5, dx: 3.0 / w.max(1) as f64, dy: 3.0 / h.max(1) as f64 }
    }
}

/// Iterations before escape, capped at `max_iter`.
pub fn mandelbrot(p: &MandelbrotParams) -> Vec<i64> {
    let mut out = vec![0; p.h * p.w];
    for y in 0..p.h {
        for x in 0..p.w {
            let cr = p.x0 + x as f64 * p.dx;
            let ci = p.y0 + y as f64 * p.dy;
            let (mut zr, mut zi) = (0.0f64, 0.0f64);
            let mut n = 0;
            for _ in 0..p.max_iter {
                if zr * zr + zi * zi > 4.0 {
                    break;
                }
                let (r2, i2) = (zr * zr, zi * zi);
                zi = 2.0 * zr * zi + ci;
                zr = r2 - i2 + cr;
                n += 1;
            }
            out[y * p.w + x] = n;
        }
    }
    out
}

/// Members of the set: points that never escaped.
pub fn mandelbrot_members(iters: &[i64], max_iter: i64) -> usize {
    iters.iter().filter(|&&n| n == max_iter).count()
}

/// Number of offsets where `pat` occurs in `seq`.
pub fn prnmatch(seq: &[i64], pat: &[i64]) -> i64 {
    if pat.len() > seq.len() {
        return 0;
    }
    (0..=seq.len() - pat.len()).filter(|&i| seq[i..i + pat.len()] == *pat).count() as i64
}

pub fn prefix(a: &[f64]) -> Vec<f64> {
    let mut out = a.to_vec();
    for i in 1..out.len() {
        out[i] += out[i - 1];
    }
    out
}
