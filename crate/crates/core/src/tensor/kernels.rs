/// `c = a * b + beta * c` for strided row-major views.
///
/// Strides are `(row_stride, col_stride)` in elements. Transposed operands are
/// expressed by swapping strides, so no copy is ever needed for `A^T B` or
/// `A B^T`.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (isize, isize),
    b: &[f64],
    b_strides: (isize, isize),
    c: &mut [f64],
    c_strides: (isize, isize),
    beta: f64,
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(span(m, k, a_strides) <= a.len(), "gemm: lhs view out of bounds");
    assert!(span(k, n, b_strides) <= b.len(), "gemm: rhs view out of bounds");
    assert!(span(m, n, c_strides) <= c.len(), "gemm: output view out of bounds");
    // SAFETY: every view was checked to lie inside its slice; `c` is uniquely
    // borrowed and cannot alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0,
            a_strides.1,
            b.as_ptr(),
            b_strides.0,
            b_strides.1,
            beta,
            c.as_mut_ptr(),
            c_strides.0,
            c_strides.1,
        );
    }
}

fn span(rows: usize, cols: usize, (rs, cs): (isize, isize)) -> usize {
    if rows == 0 || cols == 0 {
        return 0;
    }
    debug_assert!(rs >= 0 && cs >= 0);
    (rows - 1) * rs as usize + (cols - 1) * cs as usize + 1
}

/// Numerically stable softmax of one row, in place.
pub fn softmax_in_place(row: &mut [f64]) {
    softmax_scaled_in_place(row, 1.0);
}

/// `softmax(scale * row)` in place, for `scale > 0`.
pub fn softmax_scaled_in_place(row: &mut [f64], scale: f64) {
    let max = lane_max(row);
    row.iter_mut().for_each(|v| *v = (*v - max) * scale);
    exp_non_positive(row);
    let inv = 1.0 / lane_sum(row);
    row.iter_mut().for_each(|v| *v *= inv);
}

// Four independent accumulators let the reductions vectorize.
fn lane_max(row: &[f64]) -> f64 {
    let mut acc = [f64::NEG_INFINITY; 4];
    let mut chunks = row.chunks_exact(4);
    for c in &mut chunks {
        for (a, v) in acc.iter_mut().zip(c) {
            *a = if *v > *a { *v } else { *a };
        }
    }
    let tail = chunks.remainder().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    acc.iter().copied().fold(tail, f64::max)
}

fn lane_sum(row: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let mut chunks = row.chunks_exact(4);
    for c in &mut chunks {
        for (a, v) in acc.iter_mut().zip(c) {
            *a += v;
        }
    }
    let tail: f64 = chunks.remainder().iter().sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// In-place `exp` for arguments `<= 0`, accurate to a few ulp and flushed to
/// zero below `exp(-708)`.
///
/// Softmax spends most of its time here. Unlike `f64::exp` this loop has no
/// calls or branches, so it vectorizes; AVX2 is used when the CPU has it.
pub fn exp_non_positive(row: &mut [f64]) {
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("avx2") && std::arch::is_x86_feature_detected!("fma") {
            // SAFETY: the required CPU features were detected at runtime.
            unsafe { exp_non_positive_avx2(row) };
            return;
        }
    }
    exp_non_positive_generic(row);
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn exp_non_positive_avx2(row: &mut [f64]) {
    exp_non_positive_with(row, f64::mul_add)
}

fn exp_non_positive_generic(row: &mut [f64]) {
    exp_non_positive_with(row, |a, b, c| a * b + c)
}

/// Elements per block; independent blocks keep several polynomial chains in flight.
const EXP_BLOCK: usize = 16;

#[inline(always)]
fn exp_non_positive_with(row: &mut [f64], madd: impl Fn(f64, f64, f64) -> f64 + Copy) {
    let mut blocks = row.chunks_exact_mut(EXP_BLOCK);
    for block in &mut blocks {
        let mut x = [0.0; EXP_BLOCK];
        x.copy_from_slice(block);
        exp_block(&mut x, madd);
        block.copy_from_slice(&x);
    }
    let rest = blocks.into_remainder();
    let mut x = [0.0; EXP_BLOCK];
    x[..rest.len()].copy_from_slice(rest);
    exp_block(&mut x, madd);
    rest.copy_from_slice(&x[..rest.len()]);
}

#[inline(always)]
fn exp_block(x: &mut [f64; EXP_BLOCK], madd: impl Fn(f64, f64, f64) -> f64) {
    const LOG2E: f64 = std::f64::consts::LOG2_E;
    const LN2_HI: f64 = 6.931_471_803_691_238_164_90e-1;
    const LN2_LO: f64 = 1.908_214_929_270_587_700_02e-10;
    // adding 1.5 * 2^52 rounds to an integer held in the low mantissa bits
    const SHIFTER: f64 = 6_755_399_441_055_744.0;
    const FLOOR: f64 = -708.0;
    // 1/k! for k = 0..=13
    const C: [f64; 14] = [
        1.0,
        1.0,
        0.5,
        1.666_666_666_666_666_6e-1,
        4.166_666_666_666_666_4e-2,
        8.333_333_333_333_333e-3,
        1.388_888_888_888_889e-3,
        1.984_126_984_126_984_1e-4,
        2.480_158_730_158_730_2e-5,
        2.755_731_922_398_589e-6,
        2.755_731_922_398_589e-7,
        2.505_210_838_544_172e-8,
        2.087_675_698_786_81e-9,
        1.605_904_383_682_161_3e-10,
    ];
    let mut t = [0.0; EXP_BLOCK];
    let mut r = [0.0; EXP_BLOCK];
    for i in 0..EXP_BLOCK {
        let xc = if x[i] < FLOOR { FLOOR } else { x[i] };
        t[i] = madd(xc, LOG2E, SHIFTER);
        let k = t[i] - SHIFTER;
        r[i] = madd(-k, LN2_LO, madd(-k, LN2_HI, xc));
    }
    let mut p = [C[13]; EXP_BLOCK];
    for c in C[..13].iter().rev() {
        for i in 0..EXP_BLOCK {
            p[i] = madd(p[i], r[i], *c);
        }
    }
    for i in 0..EXP_BLOCK {
        let ki = t[i].to_bits().wrapping_sub(SHIFTER.to_bits()) as i64;
        let scale = f64::from_bits(((ki + 1023) as u64) << 52);
        x[i] = if x[i] < FLOOR { 0.0 } else { p[i] * scale };
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
