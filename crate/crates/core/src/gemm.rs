//! Row-major single-precision matrix product with a fixed reduction order.
//!
//! Every output element is accumulated as `((0 + a0*b0) + a1*b1) + ...` in
//! ascending reduction index, with a separate multiply and add per term.
//! The tiled fast path and the edge path therefore agree bit for bit with a
//! plain triple loop, on every instruction set.

const MR: usize = 4;
const NR: usize = 16;

/// `c[m×n] = a[m×k] · b[k×n]`, overwriting `c`.
pub(crate) fn matmul(m: usize, n: usize, k: usize, a: &[f32], b: &[f32], c: &mut [f32]) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    #[cfg(target_arch = "x86_64")]
    {
        if std::is_x86_feature_detected!("avx2") {
            // SAFETY: the feature was detected at runtime.
            unsafe { matmul_avx2(m, n, k, a, b, c) };
            return;
        }
    }
    matmul_generic(m, n, k, a, b, c);
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn matmul_avx2(m: usize, n: usize, k: usize, a: &[f32], b: &[f32], c: &mut [f32]) {
    matmul_generic(m, n, k, a, b, c);
}

#[inline(always)]
fn matmul_generic(m: usize, n: usize, k: usize, a: &[f32], b: &[f32], c: &mut [f32]) {
    // Narrow outputs (deep, low-resolution layers) run transposed; the
    // per-element reduction order is unchanged.
    if n < NR && m >= NR {
        let at = transpose(m, k, a);
        let bt = transpose(k, n, b);
        let mut ct = vec![0.0; m * n];
        matmul_blocked(n, m, k, &bt, &at, &mut ct);
        c.copy_from_slice(&transpose(n, m, &ct));
    } else {
        matmul_blocked(m, n, k, a, b, c);
    }
}

#[inline(always)]
fn matmul_blocked(m: usize, n: usize, k: usize, a: &[f32], b: &[f32], c: &mut [f32]) {
    let mut panel = vec![0.0f32; k * NR];
    let mut a_pad = vec![0.0f32; MR * k];
    for j in (0..n).step_by(NR) {
        let width = NR.min(n - j);
        for p in 0..k {
            let dst = &mut panel[p * NR..p * NR + width];
            dst.copy_from_slice(&b[p * n + j..p * n + j + width]);
        }
        for i in (0..m).step_by(MR) {
            let height = MR.min(m - i);
            let rows: &[f32] = if height == MR {
                &a[i * k..(i + MR) * k]
            } else {
                a_pad[..height * k].copy_from_slice(&a[i * k..(i + height) * k]);
                a_pad[height * k..].fill(0.0);
                &a_pad
            };
            let acc = tile(rows, &panel, k);
            for r in 0..height {
                c[(i + r) * n + j..(i + r) * n + j + width].copy_from_slice(&acc[r][..width]);
            }
        }
    }
}

/// `MR × NR` block of `rows[MR×k] · panel[k×NR]`.
#[inline(always)]
fn tile(rows: &[f32], panel: &[f32], k: usize) -> [[f32; NR]; MR] {
    let rows: [&[f32]; MR] = std::array::from_fn(|r| &rows[r * k..(r + 1) * k]);
    let mut acc = [[0.0f32; NR]; MR];
    for (p, brow) in panel.chunks_exact(NR).enumerate().take(k) {
        let brow: &[f32; NR] = brow.try_into().unwrap();
        for r in 0..MR {
            let av = rows[r][p];
            for q in 0..NR {
                acc[r][q] += av * brow[q];
            }
        }
    }
    acc
}

/// Returns the `cols × rows` transpose of a row-major `rows × cols` matrix.
pub(crate) fn transpose(rows: usize, cols: usize, src: &[f32]) -> Vec<f32> {
    debug_assert_eq!(src.len(), rows * cols);
    let mut out = vec![0.0; rows * cols];
    const B: usize = 32;
    for r0 in (0..rows).step_by(B) {
        for c0 in (0..cols).step_by(B) {
            for r in r0..(r0 + B).min(rows) {
                for c in c0..(c0 + B).min(cols) {
                    out[c * rows + r] = src[r * cols + c];
                }
            }
        }
    }
    out
}
