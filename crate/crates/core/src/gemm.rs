//! Bounds-checked wrappers over `matrixmultiply` kernels.

use num_complex::Complex64;

fn extent(rows: usize, cols: usize, rs: usize, cs: usize) -> usize {
    if rows == 0 || cols == 0 {
        0
    } else {
        (rows - 1) * rs + (cols - 1) * cs + 1
    }
}

/// Strided view description: `(row_stride, col_stride)`.
pub type Strides = (usize, usize);

/// `C <- alpha A B + beta C` with `A: m x k`, `B: k x n`, `C: m x n`.
#[allow(clippy::too_many_arguments)]
pub fn dgemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    sa: Strides,
    b: &[f64],
    sb: Strides,
    beta: f64,
    c: &mut [f64],
    sc: Strides,
) {
    assert!(a.len() >= extent(m, k, sa.0, sa.1), "gemm: A too short");
    assert!(b.len() >= extent(k, n, sb.0, sb.1), "gemm: B too short");
    assert!(c.len() >= extent(m, n, sc.0, sc.1), "gemm: C too short");
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: every index the kernel touches lies inside the extents checked
    // above, and `c` is exclusively borrowed.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            sa.0 as isize,
            sa.1 as isize,
            b.as_ptr(),
            sb.0 as isize,
            sb.1 as isize,
            beta,
            c.as_mut_ptr(),
            sc.0 as isize,
            sc.1 as isize,
        );
    }
}

/// Complex `C <- A B`.
#[allow(clippy::too_many_arguments)]
pub fn zgemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[Complex64],
    sa: Strides,
    b: &[Complex64],
    sb: Strides,
    c: &mut [Complex64],
    sc: Strides,
) {
    zgemm_beta(m, k, n, a, sa, b, sb, [0.0, 0.0], c, sc)
}

/// Complex `C <- A B + C`.
#[allow(clippy::too_many_arguments)]
pub fn zgemm_add(
    m: usize,
    k: usize,
    n: usize,
    a: &[Complex64],
    sa: Strides,
    b: &[Complex64],
    sb: Strides,
    c: &mut [Complex64],
    sc: Strides,
) {
    zgemm_beta(m, k, n, a, sa, b, sb, [1.0, 0.0], c, sc)
}

#[allow(clippy::too_many_arguments)]
fn zgemm_beta(
    m: usize,
    k: usize,
    n: usize,
    a: &[Complex64],
    sa: Strides,
    b: &[Complex64],
    sb: Strides,
    beta: [f64; 2],
    c: &mut [Complex64],
    sc: Strides,
) {
    assert!(a.len() >= extent(m, k, sa.0, sa.1), "zgemm: A too short");
    assert!(b.len() >= extent(k, n, sb.0, sb.1), "zgemm: B too short");
    assert!(c.len() >= extent(m, n, sc.0, sc.1), "zgemm: C too short");
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: Complex64 is repr(C) {re, im}, layout-identical to [f64; 2];
    // bounds checked above.
    unsafe {
        matrixmultiply::zgemm(
            matrixmultiply::CGemmOption::Standard,
            matrixmultiply::CGemmOption::Standard,
            m,
            k,
            n,
            [1.0, 0.0],
            a.as_ptr() as *const [f64; 2],
            sa.0 as isize,
            sa.1 as isize,
            b.as_ptr() as *const [f64; 2],
            sb.0 as isize,
            sb.1 as isize,
            beta,
            c.as_mut_ptr() as *mut [f64; 2],
            sc.0 as isize,
            sc.1 as isize,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dgemm_small() {
        // [1 2; 3 4] * [5; 6]
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [5.0, 6.0];
        let mut c = [0.0; 2];
        dgemm(2, 2, 1, 1.0, &a, (2, 1), &b, (1, 1), 0.0, &mut c, (1, 1));
        assert_eq!(c, [17.0, 39.0]);
        // transposed view of A
        dgemm(2, 2, 1, 1.0, &a, (1, 2), &b, (1, 1), 0.0, &mut c, (1, 1));
        assert_eq!(c, [23.0, 34.0]);
    }

    #[test]
    fn zgemm_small() {
        let i = Complex64::new(0.0, 1.0);
        let one = Complex64::new(1.0, 0.0);
        let a = [one, i];
        let b = [i, one];
        let mut c = [Complex64::new(9.0, 9.0)];
        zgemm(1, 2, 1, &a, (2, 1), &b, (1, 1), &mut c, (1, 1));
        assert_eq!(c[0], 2.0 * i);
        zgemm_add(1, 2, 1, &a, (2, 1), &b, (1, 1), &mut c, (1, 1));
        assert_eq!(c[0], 4.0 * i);
    }
}
