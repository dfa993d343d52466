//! Elementwise, reduction, loss, and structural operations.
//!
//! Binary ops accept operands of identical shape, or one operand with a
//! single element (scalar broadcasting); nothing more general. Losses and
//! reductions accumulate in f64 and emit one rounded f32.

use super::tensor::{push_entry, should_record, Tensor};
use crate::{Error, Result};

fn same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Dim(format!(
            "{what}: shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

fn mark_and_record(parents: &[&Tensor], out: &Tensor, build: impl FnOnce() -> Box<dyn FnOnce(&[f32])>) {
    if should_record(parents) {
        out.set_requires_grad(true);
        push_entry(out, build());
    }
}

// ---------------------------------------------------------------------------
// Binary elementwise
// ---------------------------------------------------------------------------

enum Broadcast {
    Match,
    ScalarLhs,
    ScalarRhs,
}

fn broadcast_kind(a: &Tensor, b: &Tensor, what: &str) -> Result<Broadcast> {
    if a.shape() == b.shape() {
        Ok(Broadcast::Match)
    } else if a.numel() == 1 {
        Ok(Broadcast::ScalarLhs)
    } else if b.numel() == 1 {
        Ok(Broadcast::ScalarRhs)
    } else {
        Err(Error::Dim(format!(
            "{what}: shapes {:?} and {:?} are not broadcast-compatible (exact match or scalar only)",
            a.shape(),
            b.shape()
        )))
    }
}

fn binary_forward(a: &Tensor, b: &Tensor, kind: &Broadcast, f: impl Fn(f32, f32) -> f32) -> (Vec<f32>, Vec<usize>) {
    match kind {
        Broadcast::Match => {
            let out = a.with_data(|av| b.with_data(|bv| av.iter().zip(bv).map(|(x, y)| f(*x, *y)).collect()));
            (out, a.shape())
        }
        Broadcast::ScalarLhs => {
            let s = a.with_data(|av| av[0]);
            let out = b.with_data(|bv| bv.iter().map(|y| f(s, *y)).collect());
            (out, b.shape())
        }
        Broadcast::ScalarRhs => {
            let s = b.with_data(|bv| bv[0]);
            let out = a.with_data(|av| av.iter().map(|x| f(*x, s)).collect());
            (out, a.shape())
        }
    }
}

/// Sum `g` into a scalar gradient (f64 accumulation).
fn reduce_to_scalar(g: &[f32]) -> f32 {
    g.iter().map(|v| *v as f64).sum::<f64>() as f32
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let kind = broadcast_kind(a, b, "add")?;
    let (vals, shape) = binary_forward(a, b, &kind, |x, y| x + y);
    let out = Tensor::from_vec(vals, &shape)?;
    mark_and_record(&[a, b], &out, || {
        let (a, b) = (a.clone(), b.clone());
        Box::new(move |g| {
            let a_scalar = a.numel() == 1 && g.len() > 1;
            let b_scalar = b.numel() == 1 && g.len() > 1;
            if a.requires_grad() {
                if a_scalar {
                    a.accumulate_grad(&[reduce_to_scalar(g)]);
                } else {
                    a.accumulate_grad(g);
                }
            }
            if b.requires_grad() {
                if b_scalar {
                    b.accumulate_grad(&[reduce_to_scalar(g)]);
                } else {
                    b.accumulate_grad(g);
                }
            }
        })
    });
    Ok(out)
}

pub fn sub(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let kind = broadcast_kind(a, b, "sub")?;
    let (vals, shape) = binary_forward(a, b, &kind, |x, y| x - y);
    let out = Tensor::from_vec(vals, &shape)?;
    mark_and_record(&[a, b], &out, || {
        let (a, b) = (a.clone(), b.clone());
        Box::new(move |g| {
            let a_scalar = a.numel() == 1 && g.len() > 1;
            let b_scalar = b.numel() == 1 && g.len() > 1;
            if a.requires_grad() {
                if a_scalar {
                    a.accumulate_grad(&[reduce_to_scalar(g)]);
                } else {
                    a.accumulate_grad(g);
                }
            }
            if b.requires_grad() {
                if b_scalar {
                    b.accumulate_grad(&[-reduce_to_scalar(g)]);
                } else {
                    let neg: Vec<f32> = g.iter().map(|v| -v).collect();
                    b.accumulate_grad(&neg);
                }
            }
        })
    });
    Ok(out)
}

pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let kind = broadcast_kind(a, b, "mul")?;
    let (vals, shape) = binary_forward(a, b, &kind, |x, y| x * y);
    let out = Tensor::from_vec(vals, &shape)?;
    mark_and_record(&[a, b], &out, || {
        let (a, b) = (a.clone(), b.clone());
        Box::new(move |g| {
            let a_scalar = a.numel() == 1 && g.len() > 1;
            let b_scalar = b.numel() == 1 && g.len() > 1;
            if a.requires_grad() {
                let da: Vec<f32> = if b.numel() == 1 {
                    let s = b.with_data(|bv| bv[0]);
                    g.iter().map(|gi| gi * s).collect()
                } else {
                    b.with_data(|bv| g.iter().zip(bv).map(|(gi, bi)| gi * bi).collect())
                };
                if a_scalar {
                    a.accumulate_grad(&[reduce_to_scalar(&da)]);
                } else {
                    a.accumulate_grad(&da);
                }
            }
            if b.requires_grad() {
                let db: Vec<f32> = if a.numel() == 1 {
                    let s = a.with_data(|av| av[0]);
                    g.iter().map(|gi| gi * s).collect()
                } else {
                    a.with_data(|av| g.iter().zip(av).map(|(gi, ai)| gi * ai).collect())
                };
                if b_scalar {
                    b.accumulate_grad(&[reduce_to_scalar(&db)]);
                } else {
                    b.accumulate_grad(&db);
                }
            }
        })
    });
    Ok(out)
}

// ---------------------------------------------------------------------------
// Unary elementwise
// ---------------------------------------------------------------------------

pub fn neg(x: &Tensor) -> Result<Tensor> {
    mul_scalar(x, -1.0)
}

pub fn mul_scalar(x: &Tensor, s: f32) -> Result<Tensor> {
    let vals = x.with_data(|v| v.iter().map(|a| a * s).collect());
    let out = Tensor::from_vec(vals, &x.shape())?;
    mark_and_record(&[x], &out, || {
        let x = x.clone();
        Box::new(move |g| {
            let dx: Vec<f32> = g.iter().map(|gi| gi * s).collect();
            x.accumulate_grad(&dx);
        })
    });
    Ok(out)
}

pub fn add_scalar(x: &Tensor, s: f32) -> Result<Tensor> {
    let vals = x.with_data(|v| v.iter().map(|a| a + s).collect());
    let out = Tensor::from_vec(vals, &x.shape())?;
    mark_and_record(&[x], &out, || {
        let x = x.clone();
        Box::new(move |g| x.accumulate_grad(g))
    });
    Ok(out)
}

pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    let vals: Vec<f32> = x.with_data(|v| v.iter().map(|a| 1.0 / (1.0 + (-a).exp())).collect());
    let out = Tensor::from_vec(vals, &x.shape())?;
    mark_and_record(&[x], &out, || {
        let x = x.clone();
        let y = out.clone();
        Box::new(move |g| {
            let dx: Vec<f32> =
                y.with_data(|yv| g.iter().zip(yv).map(|(gi, yi)| gi * yi * (1.0 - yi)).collect());
            x.accumulate_grad(&dx);
        })
    });
    Ok(out)
}

pub fn tanh(x: &Tensor) -> Result<Tensor> {
    let vals: Vec<f32> = x.with_data(|v| v.iter().map(|a| a.tanh()).collect());
    let out = Tensor::from_vec(vals, &x.shape())?;
    mark_and_record(&[x], &out, || {
        let x = x.clone();
        let y = out.clone();
        Box::new(move |g| {
            let dx: Vec<f32> =
                y.with_data(|yv| g.iter().zip(yv).map(|(gi, yi)| gi * (1.0 - yi * yi)).collect());
            x.accumulate_grad(&dx);
        })
    });
    Ok(out)
}

pub fn relu(x: &Tensor) -> Result<Tensor> {
    let vals: Vec<f32> = x.with_data(|v| v.iter().map(|a| a.max(0.0)).collect());
    let out = Tensor::from_vec(vals, &x.shape())?;
    mark_and_record(&[x], &out, || {
        let x = x.clone();
        let saved = x.data();
        Box::new(move |g| {
            let dx: Vec<f32> = g
                .iter()
                .zip(&saved)
                .map(|(gi, xi)| if *xi > 0.0 { *gi } else { 0.0 })
                .collect();
            x.accumulate_grad(&dx);
        })
    });
    Ok(out)
}

pub fn leaky_relu(x: &Tensor, slope: f32) -> Result<Tensor> {
    let vals: Vec<f32> = x.with_data(|v| v.iter().map(|a| if *a > 0.0 { *a } else { slope * a }).collect());
    let out = Tensor::from_vec(vals, &x.shape())?;
    mark_and_record(&[x], &out, || {
        let x = x.clone();
        let saved = x.data();
        Box::new(move |g| {
            let dx: Vec<f32> = g
                .iter()
                .zip(&saved)
                .map(|(gi, xi)| if *xi > 0.0 { *gi } else { gi * slope })
                .collect();
            x.accumulate_grad(&dx);
        })
    });
    Ok(out)
}

/// Natural log. Defined for strictly positive inputs.
pub fn log(x: &Tensor) -> Result<Tensor> {
    if x.with_data(|v| v.iter().any(|a| *a <= 0.0)) {
        return Err(Error::Precondition("log of a non-positive value".into()));
    }
    let vals: Vec<f32> = x.with_data(|v| v.iter().map(|a| a.ln()).collect());
    let out = Tensor::from_vec(vals, &x.shape())?;
    mark_and_record(&[x], &out, || {
        let x = x.clone();
        let saved = x.data();
        Box::new(move |g| {
            let dx: Vec<f32> = g.iter().zip(&saved).map(|(gi, xi)| gi / xi).collect();
            x.accumulate_grad(&dx);
        })
    });
    Ok(out)
}

/// Clamp values into [lo, hi]; gradient passes only where lo <= x <= hi.
pub fn clamp(x: &Tensor, lo: f32, hi: f32) -> Result<Tensor> {
    if !(lo <= hi) {
        return Err(Error::Precondition(format!("clamp bounds {lo} > {hi}")));
    }
    let vals: Vec<f32> = x.with_data(|v| v.iter().map(|a| a.clamp(lo, hi)).collect());
    let out = Tensor::from_vec(vals, &x.shape())?;
    mark_and_record(&[x], &out, || {
        let x = x.clone();
        let saved = x.data();
        Box::new(move |g| {
            let dx: Vec<f32> = g
                .iter()
                .zip(&saved)
                .map(|(gi, xi)| if *xi >= lo && *xi <= hi { *gi } else { 0.0 })
                .collect();
            x.accumulate_grad(&dx);
        })
    });
    Ok(out)
}

// ---------------------------------------------------------------------------
// Reductions and losses
// ---------------------------------------------------------------------------

pub fn sum(x: &Tensor) -> Result<Tensor> {
    let s = x.with_data(|v| v.iter().map(|a| *a as f64).sum::<f64>()) as f32;
    let out = Tensor::from_vec(vec![s], &[1])?;
    mark_and_record(&[x], &out, || {
        let x = x.clone();
        Box::new(move |g| {
            let dx = vec![g[0]; x.numel()];
            x.accumulate_grad(&dx);
        })
    });
    Ok(out)
}

pub fn mean(x: &Tensor) -> Result<Tensor> {
    let n = x.numel();
    if n == 0 {
        return Err(Error::Precondition("mean of an empty tensor".into()));
    }
    let s = x.with_data(|v| v.iter().map(|a| *a as f64).sum::<f64>()) / n as f64;
    let out = Tensor::from_vec(vec![s as f32], &[1])?;
    mark_and_record(&[x], &out, || {
        let x = x.clone();
        Box::new(move |g| {
            let dx = vec![g[0] / n as f32; n];
            x.accumulate_grad(&dx);
        })
    });
    Ok(out)
}

/// Mean absolute difference between `a` and `b`.
pub fn l1_loss(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape(a, b, "l1_loss")?;
    let n = a.numel();
    let s = a.with_data(|av| {
        b.with_data(|bv| av.iter().zip(bv).map(|(x, y)| (*x - *y).abs() as f64).sum::<f64>())
    }) / n as f64;
    let out = Tensor::from_vec(vec![s as f32], &[1])?;
    mark_and_record(&[a, b], &out, || {
        let (a, b) = (a.clone(), b.clone());
        let (av, bv) = (a.data(), b.data());
        Box::new(move |g| {
            let scale = g[0] / n as f32;
            if a.requires_grad() {
                let da: Vec<f32> = av
                    .iter()
                    .zip(&bv)
                    .map(|(x, y)| scale * (x - y).signum_or_zero())
                    .collect();
                a.accumulate_grad(&da);
            }
            if b.requires_grad() {
                let db: Vec<f32> = av
                    .iter()
                    .zip(&bv)
                    .map(|(x, y)| -scale * (x - y).signum_or_zero())
                    .collect();
                b.accumulate_grad(&db);
            }
        })
    });
    Ok(out)
}

trait SignumOrZero {
    fn signum_or_zero(self) -> f32;
}
impl SignumOrZero for f32 {
    // subgradient 0 at exact ties keeps l1_loss(x, x) gradients at zero
    fn signum_or_zero(self) -> f32 {
        if self > 0.0 {
            1.0
        } else if self < 0.0 {
            -1.0
        } else {
            0.0
        }
    }
}

/// Mean squared difference between `a` and `b`.
pub fn l2_loss(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape(a, b, "l2_loss")?;
    let n = a.numel();
    let s = a.with_data(|av| {
        b.with_data(|bv| {
            av.iter()
                .zip(bv)
                .map(|(x, y)| {
                    let d = (*x - *y) as f64;
                    d * d
                })
                .sum::<f64>()
        })
    }) / n as f64;
    let out = Tensor::from_vec(vec![s as f32], &[1])?;
    mark_and_record(&[a, b], &out, || {
        let (a, b) = (a.clone(), b.clone());
        let (av, bv) = (a.data(), b.data());
        Box::new(move |g| {
            let scale = 2.0 * g[0] / n as f32;
            if a.requires_grad() {
                let da: Vec<f32> = av.iter().zip(&bv).map(|(x, y)| scale * (x - y)).collect();
                a.accumulate_grad(&da);
            }
            if b.requires_grad() {
                let db: Vec<f32> = av.iter().zip(&bv).map(|(x, y)| -scale * (x - y)).collect();
                b.accumulate_grad(&db);
            }
        })
    });
    Ok(out)
}

// ---------------------------------------------------------------------------
// Structural ops
// ---------------------------------------------------------------------------

/// Forward identity, zero gradient upstream.
pub fn stop_gradient(x: &Tensor) -> Tensor {
    x.detach()
}

pub(crate) fn permute_raw(values: &[f32], shape: &[usize], axes: &[usize]) -> (Vec<f32>, Vec<usize>) {
    let rank = shape.len();
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let mut in_strides = vec![1usize; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * shape[i + 1];
    }
    let mut out = vec![0.0f32; values.len()];
    let mut idx = vec![0usize; rank];
    for (o, slot) in out.iter_mut().enumerate() {
        // decompose o into the output multi-index
        let mut rem = o;
        for d in (0..rank).rev() {
            idx[d] = rem % out_shape[d];
            rem /= out_shape[d];
        }
        let mut src = 0usize;
        for d in 0..rank {
            src += idx[d] * in_strides[axes[d]];
        }
        *slot = values[src];
    }
    (out, out_shape)
}

/// Reorder dimensions. `axes` must be a permutation of 0..rank.
pub fn permute(x: &Tensor, axes: &[usize]) -> Result<Tensor> {
    let shape = x.shape();
    let rank = shape.len();
    let mut seen = vec![false; rank];
    if axes.len() != rank || axes.iter().any(|&a| a >= rank || std::mem::replace(&mut seen[a], true)) {
        return Err(Error::Dim(format!(
            "permute axes {:?} invalid for rank {rank}",
            axes
        )));
    }
    let (vals, out_shape) = x.with_data(|v| permute_raw(v, &shape, axes));
    let out = Tensor::from_vec(vals, &out_shape)?;
    mark_and_record(&[x], &out, || {
        let x = x.clone();
        let mut inverse = vec![0usize; rank];
        for (i, &a) in axes.iter().enumerate() {
            inverse[a] = i;
        }
        Box::new(move |g| {
            let (dx, _) = permute_raw(g, &out_shape, &inverse);
            x.accumulate_grad(&dx);
        })
    });
    Ok(out)
}

/// Same data, new shape (element count preserved).
pub fn reshape(x: &Tensor, new_shape: &[usize]) -> Result<Tensor> {
    let n: usize = new_shape.iter().product();
    if n != x.numel() {
        return Err(Error::Dim(format!(
            "reshape {:?} -> {:?} changes element count",
            x.shape(),
            new_shape
        )));
    }
    let out = Tensor::from_vec(x.data(), new_shape)?;
    mark_and_record(&[x], &out, || {
        let x = x.clone();
        Box::new(move |g| x.accumulate_grad(g))
    });
    Ok(out)
}

/// Concatenate along the channel axis (axis 1) of same-rank tensors.
pub fn concat_channels(xs: &[&Tensor]) -> Result<Tensor> {
    if xs.is_empty() {
        return Err(Error::Precondition("concat_channels of nothing".into()));
    }
    let first = xs[0].shape();
    if first.len() < 2 {
        return Err(Error::Dim("concat_channels requires rank >= 2".into()));
    }
    let mut channels = Vec::with_capacity(xs.len());
    for x in xs {
        let s = x.shape();
        if s.len() != first.len()
            || s[0] != first[0]
            || s[2..] != first[2..]
        {
            return Err(Error::Dim(format!(
                "concat_channels: shape {:?} incompatible with {:?}",
                s, first
            )));
        }
        channels.push(s[1]);
    }
    let n = first[0];
    let inner: usize = first[2..].iter().product();
    let total_c: usize = channels.iter().sum();
    let mut out_shape = first.clone();
    out_shape[1] = total_c;

    let mut vals = vec![0.0f32; n * total_c * inner];
    for ni in 0..n {
        let mut c_off = 0usize;
        for (x, &c) in xs.iter().zip(&channels) {
            x.with_data(|xv| {
                let src = &xv[ni * c * inner..(ni + 1) * c * inner];
                let dst = &mut vals[(ni * total_c + c_off) * inner..(ni * total_c + c_off + c) * inner];
                dst.copy_from_slice(src);
            });
            c_off += c;
        }
    }
    let out = Tensor::from_vec(vals, &out_shape)?;
    if should_record(xs) {
        out.set_requires_grad(true);
        let parents: Vec<Tensor> = xs.iter().map(|x| (*x).clone()).collect();
        let channels_c = channels.clone();
        push_entry(
            &out,
            Box::new(move |g| {
                for (pi, p) in parents.iter().enumerate() {
                    if !p.requires_grad() {
                        continue;
                    }
                    let c = channels_c[pi];
                    let c_off: usize = channels_c[..pi].iter().sum();
                    let mut dp = vec![0.0f32; n * c * inner];
                    for ni in 0..n {
                        let src = &g[(ni * total_c + c_off) * inner..(ni * total_c + c_off + c) * inner];
                        dp[ni * c * inner..(ni + 1) * c * inner].copy_from_slice(src);
                    }
                    p.accumulate_grad(&dp);
                }
            }),
        );
    }
    Ok(out)
}

/// Extract one axial slice: [N,C,D,H,W] -> [N,C,1,H,W].
pub fn slice_depth(x: &Tensor, index: usize) -> Result<Tensor> {
    let s = x.shape();
    if s.len() != 5 {
        return Err(Error::Dim(format!("slice_depth needs rank 5, got {:?}", s)));
    }
    let (n, c, d, h, w) = (s[0], s[1], s[2], s[3], s[4]);
    if index >= d {
        return Err(Error::Precondition(format!(
            "slice index {index} out of range for depth {d}"
        )));
    }
    let plane = h * w;
    let mut vals = vec![0.0f32; n * c * plane];
    x.with_data(|xv| {
        for ni in 0..n {
            for ci in 0..c {
                let base = ((ni * c + ci) * d + index) * plane;
                let dst = (ni * c + ci) * plane;
                vals[dst..dst + plane].copy_from_slice(&xv[base..base + plane]);
            }
        }
    });
    let out = Tensor::from_vec(vals, &[n, c, 1, h, w])?;
    mark_and_record(&[x], &out, || {
        let x = x.clone();
        Box::new(move |g| {
            let mut dx = vec![0.0f32; n * c * d * plane];
            for ni in 0..n {
                for ci in 0..c {
                    let base = ((ni * c + ci) * d + index) * plane;
                    let src = (ni * c + ci) * plane;
                    dx[base..base + plane].copy_from_slice(&g[src..src + plane]);
                }
            }
            x.accumulate_grad(&dx);
        })
    });
    Ok(out)
}

/// Row lookup into a [M, e] table; backward scatter-adds into the table.
pub fn gather_rows(table: &Tensor, indices: &[u32]) -> Result<Tensor> {
    let s = table.shape();
    if s.len() != 2 {
        return Err(Error::Dim(format!("gather_rows table must be [M, e], got {:?}", s)));
    }
    let (m, e) = (s[0], s[1]);
    if let Some(bad) = indices.iter().find(|&&i| i as usize >= m) {
        return Err(Error::Precondition(format!(
            "gather_rows index {bad} out of range for table with {m} rows"
        )));
    }
    let k = indices.len();
    let mut vals = vec![0.0f32; k * e];
    table.with_data(|tv| {
        for (row, &idx) in indices.iter().enumerate() {
            let src = idx as usize * e;
            vals[row * e..(row + 1) * e].copy_from_slice(&tv[src..src + e]);
        }
    });
    let out = Tensor::from_vec(vals, &[k, e])?;
    mark_and_record(&[table], &out, || {
        let table = table.clone();
        let idx: Vec<u32> = indices.to_vec();
        Box::new(move |g| {
            let mut dt = vec![0.0f32; m * e];
            for (row, &i) in idx.iter().enumerate() {
                let dst = i as usize * e;
                for j in 0..e {
                    dt[dst + j] += g[row * e + j];
                }
            }
            table.accumulate_grad(&dt);
        })
    });
    Ok(out)
}

/// Straight-through combination: forward takes the values of `value`
/// bit-exactly; backward routes the full gradient to `src` and none to
/// `value`'s graph.
pub fn straight_through(src: &Tensor, value: &Tensor) -> Result<Tensor> {
    same_shape(src, value, "straight_through")?;
    let out = Tensor::from_vec(value.data(), &value.shape())?;
    mark_and_record(&[src], &out, || {
        let src = src.clone();
        Box::new(move |g| src.accumulate_grad(g))
    });
    Ok(out)
}

// ---------------------------------------------------------------------------
// Channel-structured ops
// ---------------------------------------------------------------------------

/// Add a per-channel bias: x [N,C,...] + b [C].
pub fn channel_bias_add(x: &Tensor, b: &Tensor) -> Result<Tensor> {
    let xs = x.shape();
    let bs = b.shape();
    if xs.len() < 2 || bs.len() != 1 || bs[0] != xs[1] {
        return Err(Error::Dim(format!(
            "channel_bias_add: x {:?} with bias {:?}",
            xs, bs
        )));
    }
    let (n, c) = (xs[0], xs[1]);
    let inner: usize = xs[2..].iter().product();
    let mut vals = x.data();
    b.with_data(|bv| {
        for ni in 0..n {
            for ci in 0..c {
                let base = (ni * c + ci) * inner;
                let bias = bv[ci];
                for v in &mut vals[base..base + inner] {
                    *v += bias;
                }
            }
        }
    });
    let out = Tensor::from_vec(vals, &xs)?;
    mark_and_record(&[x, b], &out, || {
        let (x, b) = (x.clone(), b.clone());
        Box::new(move |g| {
            if x.requires_grad() {
                x.accumulate_grad(g);
            }
            if b.requires_grad() {
                let mut db = vec![0.0f32; c];
                for (ci, slot) in db.iter_mut().enumerate() {
                    let mut acc = 0.0f64;
                    for ni in 0..n {
                        let base = (ni * c + ci) * inner;
                        for gi in &g[base..base + inner] {
                            acc += *gi as f64;
                        }
                    }
                    *slot = acc as f32;
                }
                b.accumulate_grad(&db);
            }
        })
    });
    Ok(out)
}

/// Group normalization over [N,C,spatial...] with per-channel affine.
pub fn group_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor, groups: usize, eps: f32) -> Result<Tensor> {
    let xs = x.shape();
    if xs.len() < 3 {
        return Err(Error::Dim(format!("group_norm needs rank >= 3, got {:?}", xs)));
    }
    let (n, c) = (xs[0], xs[1]);
    if groups == 0 || c % groups != 0 {
        return Err(Error::Precondition(format!(
            "group_norm: {groups} groups do not divide {c} channels"
        )));
    }
    if gamma.shape() != vec![c] || beta.shape() != vec![c] {
        return Err(Error::Dim("group_norm affine parameters must be [C]".into()));
    }
    let spatial: usize = xs[2..].iter().product();
    let cg = c / groups; // channels per group
    let group_elems = cg * spatial;

    let xv = x.data();
    let gammav = gamma.data();
    let betav = beta.data();

    // per-(n, group) statistics in f64
    let mut mean_g = vec![0.0f64; n * groups];
    let mut inv_std = vec![0.0f64; n * groups];
    for ni in 0..n {
        for gi in 0..groups {
            let mut acc = 0.0f64;
            let mut acc2 = 0.0f64;
            for cc in 0..cg {
                let ci = gi * cg + cc;
                let base = (ni * c + ci) * spatial;
                for v in &xv[base..base + spatial] {
                    let vf = *v as f64;
                    acc += vf;
                    acc2 += vf * vf;
                }
            }
            let m = acc / group_elems as f64;
            let var = (acc2 / group_elems as f64 - m * m).max(0.0);
            mean_g[ni * groups + gi] = m;
            inv_std[ni * groups + gi] = 1.0 / (var + eps as f64).sqrt();
        }
    }

    let mut vals = vec![0.0f32; xv.len()];
    for ni in 0..n {
        for ci in 0..c {
            let gi = ci / cg;
            let m = mean_g[ni * groups + gi];
            let is = inv_std[ni * groups + gi];
            let (ga, be) = (gammav[ci] as f64, betav[ci] as f64);
            let base = (ni * c + ci) * spatial;
            for k in 0..spatial {
                let xhat = (xv[base + k] as f64 - m) * is;
                vals[base + k] = (ga * xhat + be) as f32;
            }
        }
    }
    let out = Tensor::from_vec(vals, &xs)?;
    mark_and_record(&[x, gamma, beta], &out, || {
        let (x, gamma, beta) = (x.clone(), gamma.clone(), beta.clone());
        Box::new(move |g| {
            // recomputed x-hat from saved stats
            let xhat_at = |ni: usize, ci: usize, k: usize| -> f64 {
                let gi = ci / cg;
                (xv[(ni * c + ci) * spatial + k] as f64 - mean_g[ni * groups + gi])
                    * inv_std[ni * groups + gi]
            };
            if beta.requires_grad() {
                let mut db = vec![0.0f32; c];
                for (ci, slot) in db.iter_mut().enumerate() {
                    let mut acc = 0.0f64;
                    for ni in 0..n {
                        let base = (ni * c + ci) * spatial;
                        for gv in &g[base..base + spatial] {
                            acc += *gv as f64;
                        }
                    }
                    *slot = acc as f32;
                }
                beta.accumulate_grad(&db);
            }
            if gamma.requires_grad() {
                let mut dg = vec![0.0f32; c];
                for (ci, slot) in dg.iter_mut().enumerate() {
                    let mut acc = 0.0f64;
                    for ni in 0..n {
                        let base = (ni * c + ci) * spatial;
                        for k in 0..spatial {
                            acc += g[base + k] as f64 * xhat_at(ni, ci, k);
                        }
                    }
                    *slot = acc as f32;
                }
                gamma.accumulate_grad(&dg);
            }
            if x.requires_grad() {
                // dx = inv_std * (dxhat - mean(dxhat) - xhat * mean(dxhat * xhat))
                // with dxhat = g * gamma, means taken per (n, group).
                let mut dx = vec![0.0f32; xv.len()];
                for ni in 0..n {
                    for gi in 0..groups {
                        let mut sum_dxh = 0.0f64;
                        let mut sum_dxh_xh = 0.0f64;
                        for cc in 0..cg {
                            let ci = gi * cg + cc;
                            let base = (ni * c + ci) * spatial;
                            let ga = gammav[ci] as f64;
                            for k in 0..spatial {
                                let dxh = g[base + k] as f64 * ga;
                                sum_dxh += dxh;
                                sum_dxh_xh += dxh * xhat_at(ni, ci, k);
                            }
                        }
                        let m_dxh = sum_dxh / group_elems as f64;
                        let m_dxh_xh = sum_dxh_xh / group_elems as f64;
                        let is = inv_std[ni * groups + gi];
                        for cc in 0..cg {
                            let ci = gi * cg + cc;
                            let base = (ni * c + ci) * spatial;
                            let ga = gammav[ci] as f64;
                            for k in 0..spatial {
                                let dxh = g[base + k] as f64 * ga;
                                dx[base + k] =
                                    (is * (dxh - m_dxh - xhat_at(ni, ci, k) * m_dxh_xh)) as f32;
                            }
                        }
                    }
                }
                x.accumulate_grad(&dx);
            }
        })
    });
    Ok(out)
}

// ---------------------------------------------------------------------------
// Method sugar
// ---------------------------------------------------------------------------

impl Tensor {
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        add(self, other)
    }
    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        sub(self, other)
    }
    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        mul(self, other)
    }
    pub fn mul_scalar(&self, s: f32) -> Result<Tensor> {
        mul_scalar(self, s)
    }
    pub fn sigmoid(&self) -> Result<Tensor> {
        sigmoid(self)
    }
    pub fn tanh(&self) -> Result<Tensor> {
        tanh(self)
    }
    pub fn leaky_relu(&self, slope: f32) -> Result<Tensor> {
        leaky_relu(self, slope)
    }
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        reshape(self, shape)
    }
    pub fn permute(&self, axes: &[usize]) -> Result<Tensor> {
        permute(self, axes)
    }
    pub fn sum_all(&self) -> Result<Tensor> {
        sum(self)
    }
    pub fn mean_all(&self) -> Result<Tensor> {
        mean(self)
    }
}
