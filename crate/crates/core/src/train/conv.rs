//! Real-valued convolution via im2col + GEMM, used for pretraining and for
//! every backward pass.

use crate::topology::ConvShape;

/// `C = A * B (+ C)` for row-major operands described by strides.
#[allow(unsafe_code)]
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    (rsa, csa): (usize, usize),
    b: &[f32],
    (rsb, csb): (usize, usize),
    c: &mut [f32],
    accumulate: bool,
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(k == 0 || a.len() > (m - 1) * rsa + (k - 1) * csa);
    assert!(k == 0 || b.len() > (k - 1) * rsb + (n - 1) * csb);
    assert!(c.len() >= m * n);
    // SAFETY: the asserts above bound every index touched by the kernel and the
    // three slices cannot alias (one is borrowed mutably).
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            if accumulate { 1.0 } else { 0.0 },
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Unfolds group `g` of one `[C, H, W]` sample into `[cg * k * k, H' * W']`.
pub(crate) fn im2col(input: &[f32], s: &ConvShape, g: usize, pad_value: f32, col: &mut [f32]) {
    let cg = s.in_channels / s.groups;
    let (k, p, st) = (s.kernel, s.padding as isize, s.stride);
    let (h, w, oh, ow) = (s.in_height, s.in_width, s.out_height, s.out_width);
    let np = oh * ow;
    for ci in 0..cg {
        let plane = &input[(g * cg + ci) * h * w..(g * cg + ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut col[((ci * k + ky) * k + kx) * np..][..np];
                for oy in 0..oh {
                    let iy = (oy * st + ky) as isize - p;
                    let dst = &mut row[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= h as isize {
                        dst.fill(pad_value);
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * st + kx) as isize - p;
                        *d = if ix < 0 || ix >= w as isize {
                            pad_value
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Folds a column gradient back onto the input gradient; padded taps are dropped.
pub(crate) fn col2im_add(col: &[f32], s: &ConvShape, g: usize, dinput: &mut [f32]) {
    let cg = s.in_channels / s.groups;
    let (k, p, st) = (s.kernel, s.padding as isize, s.stride);
    let (h, w, oh, ow) = (s.in_height, s.in_width, s.out_height, s.out_width);
    let np = oh * ow;
    for ci in 0..cg {
        let plane = &mut dinput[(g * cg + ci) * h * w..(g * cg + ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &col[((ci * k + ky) * k + kx) * np..][..np];
                for oy in 0..oh {
                    let iy = (oy * st + ky) as isize - p;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..ow {
                        let ix = (ox * st + kx) as isize - p;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] += row[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn col_len(s: &ConvShape) -> usize {
    (s.in_channels / s.groups) * s.kernel * s.kernel * s.out_height * s.out_width
}

/// Forward pass of one sample: `out = W * x`, shapes `[Co, H', W']`.
pub(crate) fn conv_forward(
    input: &[f32],
    weight: &[f32],
    s: &ConvShape,
    pad_value: f32,
    col: &mut [f32],
    out: &mut [f32],
) {
    let kk = (s.in_channels / s.groups) * s.kernel * s.kernel;
    let np = s.out_height * s.out_width;
    let ocg = s.out_channels / s.groups;
    for g in 0..s.groups {
        im2col(input, s, g, pad_value, col);
        gemm(
            ocg,
            kk,
            np,
            &weight[g * ocg * kk..(g + 1) * ocg * kk],
            (kk, 1),
            col,
            (np, 1),
            &mut out[g * ocg * np..(g + 1) * ocg * np],
            false,
        );
    }
}

/// Backward pass of one sample. Adds `dL/dW` into `dweight` and, when
/// requested, `dL/dx` into `dinput`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_backward(
    input: &[f32],
    weight: &[f32],
    dout: &[f32],
    s: &ConvShape,
    pad_value: f32,
    col: &mut [f32],
    dweight: &mut [f32],
    mut dinput: Option<&mut [f32]>,
) {
    let kk = (s.in_channels / s.groups) * s.kernel * s.kernel;
    let np = s.out_height * s.out_width;
    let ocg = s.out_channels / s.groups;
    for g in 0..s.groups {
        let dout_g = &dout[g * ocg * np..(g + 1) * ocg * np];
        im2col(input, s, g, pad_value, col);
        gemm(
            ocg,
            np,
            kk,
            dout_g,
            (np, 1),
            col,
            (1, np),
            &mut dweight[g * ocg * kk..(g + 1) * ocg * kk],
            true,
        );
        if let Some(din) = dinput.as_deref_mut() {
            gemm(
                kk,
                ocg,
                np,
                &weight[g * ocg * kk..(g + 1) * ocg * kk],
                (1, kk),
                dout_g,
                (np, 1),
                col,
                false,
            );
            col2im_add(col, s, g, din);
        }
    }
}
