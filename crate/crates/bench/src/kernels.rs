//! IR sources of the benchmark kernels.

use offload_core::ir::{parse_program, KernelFunction, Program};

/// 3x3 convolution of a zero-padded frame.
pub const CONVOLUTION: &str = "
func convolution(H: int, W: int, In: in float[H + 2][W + 2], K: in float[3][3], Out: out float[H][W]) {
    for y in [0, H) {
        for x in [0, W) {
            let s: float;
            s = 0.0;
            for dy in [0, 3) {
                for dx in [0, 3) {
                    s = s + In[y + dy][x + dx] * K[dy][dx];
                }
            }
            Out[y][x] = s;
        }
    }
}
entry convolution;
";

pub const MATMULT: &str = "
func matmult(n: int, A: in float[n][n], B: in float[n][n], C: out float[n][n]) {
    for i in [0, n) {
        for j in [0, n) {
            let s: float;
            s = 0.0;
            for k in [0, n) {
                s = s + A[i][k] * B[k][j];
            }
            C[i][j] = s;
        }
    }
}
entry matmult;
";

/// Escape-time iteration counts; a point stops updating once |z|^2 > 4.
pub const MANDELBROT: &str = "
func mandelbrot(H: int, W: int, MAXITER: int, x0: float, y0: float, dx: float, dy: float, Iter: out int[H][W]) {
    for y in [0, H) {
        for x in [0, W) {
            let cr: float;
            let ci: float;
            let zr: float;
            let zi: float;
            let zr2: float;
            let zi2: float;
            let live: int;
            let n: int;
            cr = x0 + x * dx;
            ci = y0 + y * dy;
            zr = 0.0;
            zi = 0.0;
            zr2 = 0.0;
            zi2 = 0.0;
            live = 1;
            n = 0;
            for k in [0, MAXITER) {
                live = select(live, zr2 + zi2 <= 4.0, 0);
                zi = select(live, 2.0 * zr * zi + ci, zi);
                zr = select(live, zr2 - zi2 + cr, zr);
                zr2 = zr * zr;
                zi2 = zi * zi;
                n = n + live;
            }
            Iter[y][x] = n;
        }
    }
}
entry mandelbrot;
";

/// Match[i] is 1 iff the pattern occurs at offset i; Count[0] sums them.
pub const PRNMATCH: &str = "
func prnmatch(N: int, M: int, Seq: in int[N], Pat: in int[M], Match: out int[N - M + 1], Count: out int[1]) {
    for i in [0, N - M + 1) {
        let m: int;
        m = 1;
        for j in [0, M) {
            m = m * (Seq[i + j] == Pat[j]);
        }
        Match[i] = m;
    }
    for i in [0, N - M + 1) {
        Count[0] = Count[0] + Match[i];
    }
}
entry prnmatch;
";

/// In-place inclusive prefix sum; every iteration reads the previous one.
pub const PREFIX: &str = "
func prefix(n: int, A: inout float[n]) {
    for i in [1, n) {
        A[i] = A[i] + A[i - 1];
    }
}
entry prefix;
";

pub fn source(name: &str) -> Option<&'static str> {
    Some(match name {
        "convolution" => CONVOLUTION,
        "matmult" => MATMULT,
        "mandelbrot" => MANDELBROT,
        "prnmatch" => PRNMATCH,
        "prefix" => PREFIX,
        _ => return None,
    })
}

/// Parses one of the built-in kernels.
///
/// # Panics
/// Never for the names accepted by [`source`]; the sources are tested.
pub fn program(name: &str) -> Option<Program> {
    source(name).map(|s| parse_program(s).expect("built-in kernel parses"))
}

pub fn function(name: &str) -> Option<KernelFunction> {
    program(name).map(|mut p| p.functions.remove(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use offload_core::ir::validate;

    #[test]
    fn all_kernels_validate() {
        for name in ["convolution", "matmult", "mandelbrot", "prnmatch", "prefix"] {
            let p = program(name).unwrap();
            let r = validate(&p);
            assert!(r.is_valid(), "{name}: {r}");
        }
    }
}
