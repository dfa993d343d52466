//! Direct volumetric convolutions.
//!
//! Three raw kernels cover every case: `direct_conv` (correlation, C -> O),
//! `adjoint_conv` (its transpose, O -> C), and `kernel_grad`. The forward of
//! `conv_transpose3d` is the adjoint of `conv3d` with the same kernel, so
//! each raw kernel serves as a forward for one op and a backward for the
//! other. Output elements are computed independently (rayon over channel
//! planes) with a fixed-order f64 accumulation, so results do not depend on
//! thread count.

use rayon::prelude::*;

use super::tensor::{push_entry, should_record, Tensor};
use crate::{Error, Result};

#[derive(Clone, Copy)]
struct Geom {
    strides: [usize; 3],
    pads: [usize; 3],
}

fn spatial(shape: &[usize]) -> [usize; 3] {
    [shape[2], shape[3], shape[4]]
}

fn conv_out_dim(d: usize, k: usize, s: usize, p: usize) -> usize {
    (d + 2 * p - k) / s + 1
}

/// out[n,o,z,y,x] = sum_c sum_k a[n,c, z*s-p+kz, ...] * w[o,c,kz,ky,kx]
fn direct_conv(
    a: &[f32],
    ashape: &[usize],
    w: &[f32],
    kshape: &[usize],
    geom: Geom,
) -> (Vec<f32>, Vec<usize>) {
    let (n, c_in) = (ashape[0], ashape[1]);
    let [di, hi, wi] = spatial(ashape);
    let o_ch = kshape[0];
    let [kd, kh, kw] = [kshape[2], kshape[3], kshape[4]];
    let [sd, sh, sw] = geom.strides;
    let [pd, ph, pw] = geom.pads;
    let (do_, ho, wo) = (
        conv_out_dim(di, kd, sd, pd),
        conv_out_dim(hi, kh, sh, ph),
        conv_out_dim(wi, kw, sw, pw),
    );
    let plane = do_ * ho * wo;
    let mut out = vec![0.0f32; n * o_ch * plane];
    out.par_chunks_mut(plane).enumerate().for_each(|(no, chunk)| {
        let (ni, oi) = (no / o_ch, no % o_ch);
        let a_base = ni * c_in * di * hi * wi;
        let w_base = oi * c_in * kd * kh * kw;
        for oz in 0..do_ {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = 0.0f64;
                    for ci in 0..c_in {
                        let a_c = a_base + ci * di * hi * wi;
                        let w_c = w_base + ci * kd * kh * kw;
                        for kz in 0..kd {
                            let iz = (oz * sd + kz).wrapping_sub(pd);
                            if iz >= di {
                                continue;
                            }
                            for ky in 0..kh {
                                let iy = (oy * sh + ky).wrapping_sub(ph);
                                if iy >= hi {
                                    continue;
                                }
                                let a_row = a_c + (iz * hi + iy) * wi;
                                let w_row = w_c + (kz * kh + ky) * kw;
                                for kx in 0..kw {
                                    let ix = (ox * sw + kx).wrapping_sub(pw);
                                    if ix >= wi {
                                        continue;
                                    }
                                    acc += a[a_row + ix] as f64 * w[w_row + kx] as f64;
                                }
                            }
                        }
                    }
                    chunk[(oz * ho + oy) * wo + ox] = acc as f32;
                }
            }
        }
    });
    (out, vec![n, o_ch, do_, ho, wo])
}

/// out[n,c,z,y,x] = sum_o sum_k a[n,o,(z+p-kz)/s, ...] * w[o,c,kz,ky,kx]
/// (terms included only where the division is exact and in range).
fn adjoint_conv(
    a: &[f32],
    ashape: &[usize],
    w: &[f32],
    kshape: &[usize],
    geom: Geom,
    out_spatial: [usize; 3],
) -> (Vec<f32>, Vec<usize>) {
    let (n, o_ch) = (ashape[0], ashape[1]);
    let [da, ha, wa] = spatial(ashape);
    let c_out = kshape[1];
    let [kd, kh, kw] = [kshape[2], kshape[3], kshape[4]];
    let [sd, sh, sw] = geom.strides;
    let [pd, ph, pw] = geom.pads;
    let [do_, ho, wo] = out_spatial;
    let plane = do_ * ho * wo;
    let kvol = kd * kh * kw;
    let mut out = vec![0.0f32; n * c_out * plane];
    out.par_chunks_mut(plane).enumerate().for_each(|(nc, chunk)| {
        let (ni, ci) = (nc / c_out, nc % c_out);
        let a_base = ni * o_ch * da * ha * wa;
        for oz in 0..do_ {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = 0.0f64;
                    for kz in 0..kd {
                        let tz = oz + pd;
                        if tz < kz || (tz - kz) % sd != 0 {
                            continue;
                        }
                        let iz = (tz - kz) / sd;
                        if iz >= da {
                            continue;
                        }
                        for ky in 0..kh {
                            let ty = oy + ph;
                            if ty < ky || (ty - ky) % sh != 0 {
                                continue;
                            }
                            let iy = (ty - ky) / sh;
                            if iy >= ha {
                                continue;
                            }
                            for kx in 0..kw {
                                let tx = ox + pw;
                                if tx < kx || (tx - kx) % sw != 0 {
                                    continue;
                                }
                                let ix = (tx - kx) / sw;
                                if ix >= wa {
                                    continue;
                                }
                                let k_off = (kz * kh + ky) * kw + kx;
                                for oi in 0..o_ch {
                                    let av = a[a_base + ((oi * da + iz) * ha + iy) * wa + ix];
                                    let wv = w[(oi * c_out + ci) * kvol + k_off];
                                    acc += av as f64 * wv as f64;
                                }
                            }
                        }
                    }
                    chunk[(oz * ho + oy) * wo + ox] = acc as f32;
                }
            }
        }
    });
    (out, vec![n, c_out, do_, ho, wo])
}

/// d_w[o,c,kz,ky,kx] = sum_n sum_out g[n,o,out] * x[n,c, out*s-p+k]
fn kernel_grad(
    g: &[f32],
    gshape: &[usize],
    x: &[f32],
    xshape: &[usize],
    kshape: &[usize],
    geom: Geom,
) -> Vec<f32> {
    let n = gshape[0];
    let o_ch = gshape[1];
    let [do_, ho, wo] = spatial(gshape);
    let c_in = xshape[1];
    let [di, hi, wi] = spatial(xshape);
    let [kd, kh, kw] = [kshape[2], kshape[3], kshape[4]];
    let [sd, sh, sw] = geom.strides;
    let [pd, ph, pw] = geom.pads;
    let kvol = kd * kh * kw;
    let mut dw = vec![0.0f32; o_ch * c_in * kvol];
    dw.par_chunks_mut(c_in * kvol).enumerate().for_each(|(oi, chunk)| {
        for ci in 0..c_in {
            for kz in 0..kd {
                for ky in 0..kh {
                    for kx in 0..kw {
                        let mut acc = 0.0f64;
                        for ni in 0..n {
                            let g_base = (ni * o_ch + oi) * do_ * ho * wo;
                            let x_base = (ni * c_in + ci) * di * hi * wi;
                            for oz in 0..do_ {
                                let iz = (oz * sd + kz).wrapping_sub(pd);
                                if iz >= di {
                                    continue;
                                }
                                for oy in 0..ho {
                                    let iy = (oy * sh + ky).wrapping_sub(ph);
                                    if iy >= hi {
                                        continue;
                                    }
                                    let g_row = g_base + (oz * ho + oy) * wo;
                                    let x_row = x_base + (iz * hi + iy) * wi;
                                    for ox in 0..wo {
                                        let ix = (ox * sw + kx).wrapping_sub(pw);
                                        if ix >= wi {
                                            continue;
                                        }
                                        acc += g[g_row + ox] as f64 * x[x_row + ix] as f64;
                                    }
                                }
                            }
                        }
                        chunk[ci * kvol + (kz * kh + ky) * kw + kx] = acc as f32;
                    }
                }
            }
        }
    });
    dw
}

fn validate_conv(input: &Tensor, kernel: &Tensor, strides: [usize; 3], pads: [usize; 3]) -> Result<()> {
    let is = input.shape();
    let ks = kernel.shape();
    if is.len() != 5 || ks.len() != 5 {
        return Err(Error::Dim(format!(
            "conv expects rank-5 input and kernel, got {:?} and {:?}",
            is, ks
        )));
    }
    if is[1] != ks[1] {
        return Err(Error::Dim(format!(
            "input channels {} do not match kernel channels {}",
            is[1], ks[1]
        )));
    }
    if strides.iter().any(|&s| s < 1) {
        return Err(Error::Precondition("stride must be >= 1".into()));
    }
    for axis in 0..3 {
        if is[2 + axis] + 2 * pads[axis] < ks[2 + axis] {
            return Err(Error::Precondition(format!(
                "spatial dim {} plus padding is smaller than the kernel ({} + 2*{} < {})",
                axis,
                is[2 + axis],
                pads[axis],
                ks[2 + axis]
            )));
        }
    }
    Ok(())
}

/// 3D convolution: input [N,C,D,H,W] with kernel [O,C,kd,kh,kw].
/// Output spatial dims are floor((d + 2*padding - k)/stride) + 1.
pub fn conv3d(input: &Tensor, kernel: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
    conv3d_general(input, kernel, [stride; 3], [padding; 3])
}

/// 3D convolution with per-axis stride and padding. Used directly for
/// planar (depth-1) discriminators via k_depth = 1, stride/pad 1/0 on depth.
pub fn conv3d_general(
    input: &Tensor,
    kernel: &Tensor,
    strides: [usize; 3],
    pads: [usize; 3],
) -> Result<Tensor> {
    validate_conv(input, kernel, strides, pads)?;
    let geom = Geom { strides, pads };
    let ishape = input.shape();
    let kshape = kernel.shape();
    let (vals, oshape) =
        input.with_data(|iv| kernel.with_data(|kv| direct_conv(iv, &ishape, kv, &kshape, geom)));
    let out = Tensor::from_vec(vals, &oshape)?;
    if should_record(&[input, kernel]) {
        out.set_requires_grad(true);
        let (input, kernel) = (input.clone(), kernel.clone());
        let (iv, kv) = (input.data(), kernel.data());
        push_entry(
            &out,
            Box::new(move |g| {
                if input.requires_grad() {
                    let (dx, _) =
                        adjoint_conv(g, &oshape, &kv, &kshape, geom, spatial(&ishape));
                    input.accumulate_grad(&dx);
                }
                if kernel.requires_grad() {
                    let dw = kernel_grad(g, &oshape, &iv, &ishape, &kshape, geom);
                    kernel.accumulate_grad(&dw);
                }
            }),
        );
    }
    Ok(out)
}

/// Transposed 3D convolution, the adjoint of [`conv3d`] with the same
/// kernel: input [N,O,...] with kernel [O,C,...] yields [N,C,...] where
/// each output spatial dim is (in - 1)*stride - 2*padding + k.
pub fn conv_transpose3d(input: &Tensor, kernel: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
    let is = input.shape();
    let ks = kernel.shape();
    if is.len() != 5 || ks.len() != 5 {
        return Err(Error::Dim(format!(
            "conv_transpose3d expects rank-5 input and kernel, got {:?} and {:?}",
            is, ks
        )));
    }
    if is[1] != ks[0] {
        return Err(Error::Dim(format!(
            "input channels {} do not match kernel output-side channels {}",
            is[1], ks[0]
        )));
    }
    if stride < 1 {
        return Err(Error::Precondition("stride must be >= 1".into()));
    }
    let mut out_spatial = [0usize; 3];
    for axis in 0..3 {
        let d = (is[2 + axis] - 1) * stride + ks[2 + axis];
        if d <= 2 * padding {
            return Err(Error::Precondition(format!(
                "transposed output dim {} would be non-positive",
                axis
            )));
        }
        out_spatial[axis] = d - 2 * padding;
    }
    let geom = Geom {
        strides: [stride; 3],
        pads: [padding; 3],
    };
    let ishape = is.clone();
    let kshape = ks.clone();
    let (vals, oshape) = input.with_data(|iv| {
        kernel.with_data(|kv| adjoint_conv(iv, &ishape, kv, &kshape, geom, out_spatial))
    });
    let out = Tensor::from_vec(vals, &oshape)?;
    if should_record(&[input, kernel]) {
        out.set_requires_grad(true);
        let (input, kernel) = (input.clone(), kernel.clone());
        let (iv, kv) = (input.data(), kernel.data());
        push_entry(
            &out,
            Box::new(move |g| {
                if input.requires_grad() {
                    let (dx, dxshape) = direct_conv(g, &oshape, &kv, &kshape, geom);
                    debug_assert_eq!(dxshape, ishape);
                    input.accumulate_grad(&dx);
                }
                if kernel.requires_grad() {
                    // roles swap: the convT input plays the "output" side of
                    // the correlation that produced it.
                    let dw = kernel_grad(&iv, &ishape, g, &oshape, &kshape, geom);
                    kernel.accumulate_grad(&dw);
                }
            }),
        );
    }
    Ok(out)
}
