//! Dense row-major kernels shared by the training and inference paths.
//!
//! The batched training path goes through `matrixmultiply`; the inference
//! path uses [`matmul_acc_small`], which never allocates.

/// `c (m×n) = beta·c + a·b` where `a` is `m×k` and `b` is `k×n`.
///
/// `trans_a` / `trans_b` read the stored operand as its transpose, so a
/// stored `k×m` matrix can be used as `m×k` without copying.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    trans_a: bool,
    b: &[f64],
    trans_b: bool,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: strides describe exactly the checked slice extents above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `c (m×n) += a (m×k) · b (k×n)`, all row-major, no allocation.
///
/// Eight rows of `c` and eight columns are accumulated in registers at a
/// time; each `c` entry still sums its `k` products in index order.
pub fn matmul_acc_small(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    const R: usize = 8;
    const W: usize = 8;
    let n_full = n - n % W;
    let mut i = 0;
    while i + R <= m {
        let a_rows: [&[f64]; R] = std::array::from_fn(|r| &a[(i + r) * k..(i + r + 1) * k]);
        for j in (0..n_full).step_by(W) {
            let mut acc = [[0.0; W]; R];
            for r in 0..R {
                acc[r].copy_from_slice(&c[(i + r) * n + j..(i + r) * n + j + W]);
            }
            for p in 0..k {
                let bs: &[f64; W] = b[p * n + j..p * n + j + W].try_into().unwrap();
                for r in 0..R {
                    let av = a_rows[r][p];
                    for l in 0..W {
                        acc[r][l] = fmadd(av, bs[l], acc[r][l]);
                    }
                }
            }
            for r in 0..R {
                c[(i + r) * n + j..(i + r) * n + j + W].copy_from_slice(&acc[r]);
            }
        }
        for r in 0..R {
            row_tail(&a[(i + r) * k..(i + r + 1) * k], b, n, n_full, &mut c[(i + r) * n..(i + r + 1) * n]);
        }
        i += R;
    }
    for r in i..m {
        let a_row = &a[r * k..(r + 1) * k];
        let c_row = &mut c[r * n..(r + 1) * n];
        for j in (0..n_full).step_by(W) {
            let mut acc: [f64; W] = c_row[j..j + W].try_into().unwrap();
            for (p, &av) in a_row.iter().enumerate() {
                let bs = &b[p * n + j..p * n + j + W];
                for l in 0..W {
                    acc[l] = fmadd(av, bs[l], acc[l]);
                }
            }
            c_row[j..j + W].copy_from_slice(&acc);
        }
        row_tail(a_row, b, n, n_full, c_row);
    }
}

/// Columns `from..n` of one output row.
#[inline(always)]
fn row_tail(a_row: &[f64], b: &[f64], n: usize, from: usize, c_row: &mut [f64]) {
    for j in from..n {
        let mut acc = c_row[j];
        for (p, &av) in a_row.iter().enumerate() {
            acc = fmadd(av, b[p * n + j], acc);
        }
        c_row[j] = acc;
    }
}

/// Adds `bias` to every row of the row-major matrix `x`.
pub fn add_row_bias(x: &mut [f64], bias: &[f64]) {
    for row in x.chunks_exact_mut(bias.len()) {
        for (v, &b) in row.iter_mut().zip(bias) {
            *v += b;
        }
    }
}

/// Column sums of a row-major `rows × cols` matrix, accumulated into `out`.
pub fn col_sums_acc(x: &[f64], cols: usize, out: &mut [f64]) {
    for row in x.chunks_exact(cols) {
        for (o, &v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
}

#[inline(always)]
fn fmadd(a: f64, b: f64, c: f64) -> f64 {
    if cfg!(target_feature = "fma") {
        a.mul_add(b, c)
    } else {
        a * b + c
    }
}

/// `exp(x)` without branches or library calls, so loops over it
/// vectorize. Relative error below 1e-14 on `[-708, 709]`; inputs outside
/// are clamped.
#[inline(always)]
pub fn fast_exp(x: f64) -> f64 {
    const LN2_HI: f64 = 6.931_471_803_691_238_164_90e-1;
    const LN2_LO: f64 = 1.908_214_929_270_587_700_02e-10;
    // 1.5 · 2^52: adding and subtracting it rounds to the nearest integer
    const SHIFTER: f64 = 6_755_399_441_055_744.0;
    let x = x.clamp(-708.0, 709.0);
    let k = (x * std::f64::consts::LOG2_E + SHIFTER) - SHIFTER;
    let r = (x - k * LN2_HI) - k * LN2_LO;
    // Taylor series to degree 11 on |r| <= ln2 / 2
    let mut p = 1.0 / 39_916_800.0;
    for c in [
        1.0 / 3_628_800.0,
        1.0 / 362_880.0,
        1.0 / 40_320.0,
        1.0 / 5_040.0,
        1.0 / 720.0,
        1.0 / 120.0,
        1.0 / 24.0,
        1.0 / 6.0,
        0.5,
        1.0,
        1.0,
    ] {
        p = fmadd(p, r, c);
    }
    // 2^k assembled from the exponent bits
    let scale = f64::from_bits(((k + (SHIFTER + 1023.0)).to_bits()) << 52);
    p * scale
}

/// Dot product with eight independent partial sums, combined in a fixed
/// order.
#[inline(always)]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for j in 0..8 {
            acc[j] += x[j] * y[j];
        }
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + fast_exp(-x))
}

#[inline]
pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

/// Derivative of SiLU.
#[inline]
pub fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

/// `ln(1 + e^x)` as `max(x, 0) + ln(1 + t)` with `t = e^{-|x|}`, and
/// `ln(1 + t) = 2 atanh(t / (2 + t))` summed as an odd series. Branch-free;
/// relative error below 1e-14.
#[inline]
pub fn softplus(x: f64) -> f64 {
    let t = fast_exp(-x.abs());
    let s = t / (2.0 + t);
    let s2 = s * s;
    // s <= 1/3, so 18 terms bring the truncation below 1e-17.
    let mut p = 1.0 / 37.0;
    for j in (0..18).rev() {
        p = fmadd(p, s2, 1.0 / (2 * j + 1) as f64);
    }
    x.max(0.0) + 2.0 * s * p
}

/// Inverse of [`softplus`] for `y > 0`.
#[inline]
pub fn softplus_inv(y: f64) -> f64 {
    y.exp_m1().ln()
}
