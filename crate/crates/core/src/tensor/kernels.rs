//! Slice-level numeric kernels shared by the forward and backward passes.

use crate::Scalar;

/// `c += a · b` for row-major `a: m×k`, `b: k×n`, `c: m×n`.
pub fn matmul_acc<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if n == 0 {
        return;
    }
    for (arow, crow) in a.chunks_exact(k.max(1)).zip(c.chunks_exact_mut(n)).take(m) {
        for (p, &av) in arow.iter().enumerate().take(k) {
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

/// `c += aᵀ · b` for `a: m×k`, `b: m×n`, `c: k×n`.
pub fn matmul_tn_acc<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    if n == 0 || k == 0 {
        return;
    }
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let brow = &b[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            let crow = &mut c[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

pub fn transpose<T: Scalar>(a: &[T], m: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a[i * n + j];
        }
    }
    out
}

pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |s, (&x, &y)| s + x * y)
}

/// `y += s · x`
pub fn axpy<T: Scalar>(s: T, x: &[T], y: &mut [T]) {
    for (yv, &xv) in y.iter_mut().zip(x) {
        *yv += s * xv;
    }
}

pub fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().fold(T::neg_infinity(), |m, &x| m.max(x));
    let mut sum = T::zero();
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in row.iter_mut() {
        *x /= sum;
    }
}

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_C: f64 = 0.044_715;

pub fn gelu<T: Scalar>(x: T) -> T {
    let k = T::of(GELU_K);
    let c = T::of(GELU_C);
    let half = T::of(0.5);
    half * x * (T::one() + (k * (x + c * x * x * x)).tanh())
}

pub fn gelu_grad<T: Scalar>(x: T) -> T {
    let k = T::of(GELU_K);
    let c = T::of(GELU_C);
    let half = T::of(0.5);
    let u = k * (x + c * x * x * x);
    let t = u.tanh();
    let du = k * (T::one() + T::of(3.0) * c * x * x);
    half * (T::one() + t) + half * x * (T::one() - t * t) * du
}

pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Bilinear interpolation taps for a continuous grid coordinate.
///
/// `x` indexes columns in `[0, width-1]`, `y` rows in `[0, height-1]`; values
/// outside are clamped to the border, where the coordinate derivatives vanish.
#[derive(Clone, Copy, Debug)]
pub struct BilinearTaps<T> {
    /// Flat cell indices `row * width + col` of the four corners.
    pub cells: [usize; 4],
    pub weights: [T; 4],
    /// Derivatives of `weights` with respect to `x`.
    pub dx: [T; 4],
    /// Derivatives of `weights` with respect to `y`.
    pub dy: [T; 4],
}

pub fn bilinear_taps<T: Scalar>(x: T, y: T, height: usize, width: usize) -> BilinearTaps<T> {
    assert!(height > 0 && width > 0, "bilinear sampling of an empty grid");
    let (x0, x1, fx, gx) = axis_taps(x, width);
    let (y0, y1, fy, gy) = axis_taps(y, height);
    let one = T::one();
    BilinearTaps {
        cells: [y0 * width + x0, y0 * width + x1, y1 * width + x0, y1 * width + x1],
        weights: [(one - fx) * (one - fy), fx * (one - fy), (one - fx) * fy, fx * fy],
        dx: [-gx * (one - fy), gx * (one - fy), -gx * fy, gx * fy],
        dy: [-(one - fx) * gy, -fx * gy, (one - fx) * gy, fx * gy],
    }
}

/// Returns `(lo, hi, frac, dfrac/dcoord)` along one axis of `extent` cells.
fn axis_taps<T: Scalar>(coord: T, extent: usize) -> (usize, usize, T, T) {
    let max = T::of_usize(extent - 1);
    let inside = coord >= T::zero() && coord <= max;
    let c = coord.max(T::zero()).min(max);
    let lo = c.floor().to_usize().unwrap_or(0).min(extent - 1);
    let hi = (lo + 1).min(extent - 1);
    let frac = if hi == lo { T::zero() } else { c - T::of_usize(lo) };
    let grad = if inside && hi != lo { T::one() } else { T::zero() };
    (lo, hi, frac, grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_small() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = [7.0, 8.0, 9.0, 10.0, 11.0, 12.0];
        let mut c = [0.0; 4];
        matmul_acc(&a, &b, &mut c, 2, 3, 2);
        assert_eq!(c, [58.0, 64.0, 139.0, 154.0]);
        let mut ct = [0.0; 4];
        // aᵀ·a' where a' = a viewed as 3×2 is a different product; check against transpose.
        let at = transpose(&a, 2, 3);
        matmul_tn_acc(&at, &b, &mut ct, 3, 2, 2);
        assert_eq!(ct, c);
    }

    #[test]
    fn taps_on_cell_and_midpoint() {
        let t = bilinear_taps(1.0f64, 0.0, 2, 3);
        assert_eq!(t.cells[0], 1);
        assert_eq!(t.weights[0], 1.0);
        let m = bilinear_taps(0.5f64, 0.5, 2, 2);
        assert!(m.weights.iter().all(|&w| (w - 0.25).abs() < 1e-15));
    }

    #[test]
    fn taps_clamp_outside() {
        let t = bilinear_taps(-3.0f64, 9.0, 4, 4);
        assert_eq!(t.cells[0], 12);
        assert_eq!(t.weights[0], 1.0);
        assert!(t.dx.iter().chain(t.dy.iter()).all(|&d| d == 0.0));
    }

    #[test]
    fn gelu_derivative_matches_difference() {
        for &x in &[-3.0f64, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8);
        }
    }
}
