//! Image-quality metrics over volumes: MSE, PSNR (dB, capped), sliding
//! 3D-window SSIM, and per-split scoring of generated sequences.
//! Everything here is a pure f64 function of f32 voxel data.

use crate::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct VolumeMetrics {
    pub mse: f64,
    pub psnr: f64,
    pub ssim: f64,
}

/// PSNR returned for identical inputs; avoids infinities in CSV output.
pub const PSNR_CAP_DB: f64 = 100.0;

/// Mean squared voxel difference over the (optionally masked) region.
pub fn mse(a: &[f32], b: &[f32], mask: Option<&[bool]>) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dim(format!("mse: {} vs {} voxels", a.len(), b.len())));
    }
    if let Some(mk) = mask {
        if mk.len() != a.len() {
            return Err(Error::Dim("mse: mask length mismatch".into()));
        }
    }
    let mut acc = 0.0f64;
    let mut n = 0u64;
    for i in 0..a.len() {
        if mask.map_or(true, |mk| mk[i]) {
            let d = (a[i] - b[i]) as f64;
            acc += d * d;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::Precondition("mse: mask selects zero voxels".into()));
    }
    Ok(acc / n as f64)
}

/// 10 * log10(range^2 / mse), capped at [`PSNR_CAP_DB`] when mse is zero.
pub fn psnr_from_mse(mse: f64, data_range: f64) -> Result<f64> {
    if !(data_range > 0.0) {
        return Err(Error::Precondition(format!("psnr: data_range {data_range} must be positive")));
    }
    if mse <= 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (data_range * data_range / mse).log10()).min(PSNR_CAP_DB))
}

pub fn psnr(a: &[f32], b: &[f32], mask: Option<&[bool]>, data_range: f64) -> Result<f64> {
    psnr_from_mse(mse(a, b, mask)?, data_range)
}

#[derive(Debug, Clone, Copy)]
pub struct SsimOptions {
    pub window: usize,
    pub k1: f64,
    pub k2: f64,
    pub data_range: f64,
}

impl Default for SsimOptions {
    fn default() -> Self {
        SsimOptions {
            window: 7,
            k1: 0.01,
            k2: 0.03,
            data_range: 1.0,
        }
    }
}

/// Mean structural similarity over sliding cubic windows (uniform weights,
/// valid positions only). With a mask, a window counts when its center
/// voxel is inside the mask.
pub fn ssim3d(
    a: &[f32],
    b: &[f32],
    dims: [usize; 3],
    opts: SsimOptions,
    mask: Option<&[bool]>,
) -> Result<f64> {
    let [d, h, w] = dims;
    let n = d * h * w;
    if a.len() != n || b.len() != n {
        return Err(Error::Dim(format!(
            "ssim3d: dims {:?} need {n} voxels, got {} and {}",
            dims,
            a.len(),
            b.len()
        )));
    }
    let win = opts.window;
    if win % 2 == 0 || win == 0 {
        return Err(Error::Precondition(format!("ssim window {win} must be odd")));
    }
    if win > d.min(h).min(w) {
        return Err(Error::Precondition(format!(
            "ssim window {win} larger than smallest volume dim {}",
            d.min(h).min(w)
        )));
    }
    if let Some(mk) = mask {
        if mk.len() != n {
            return Err(Error::Dim("ssim3d: mask length mismatch".into()));
        }
    }
    let c1 = (opts.k1 * opts.data_range) * (opts.k1 * opts.data_range);
    let c2 = (opts.k2 * opts.data_range) * (opts.k2 * opts.data_range);
    let wn = (win * win * win) as f64;
    let half = win / 2;

    let mut acc = 0.0f64;
    let mut count = 0u64;
    for z0 in 0..=(d - win) {
        for y0 in 0..=(h - win) {
            for x0 in 0..=(w - win) {
                if let Some(mk) = mask {
                    let center = ((z0 + half) * h + (y0 + half)) * w + (x0 + half);
                    if !mk[center] {
                        continue;
                    }
                }
                let mut sa = 0.0f64;
                let mut sb = 0.0f64;
                let mut saa = 0.0f64;
                let mut sbb = 0.0f64;
                let mut sab = 0.0f64;
                for dz in 0..win {
                    for dy in 0..win {
                        let row = ((z0 + dz) * h + (y0 + dy)) * w + x0;
                        for dx in 0..win {
                            let av = a[row + dx] as f64;
                            let bv = b[row + dx] as f64;
                            sa += av;
                            sb += bv;
                            saa += av * av;
                            sbb += bv * bv;
                            sab += av * bv;
                        }
                    }
                }
                let ma = sa / wn;
                let mb = sb / wn;
                let va = saa / wn - ma * ma;
                let vb = sbb / wn - mb * mb;
                let cov = sab / wn - ma * mb;
                let s = ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                    / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                acc += s;
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(Error::Precondition("ssim3d: mask selects zero windows".into()));
    }
    Ok(acc / count as f64)
}

pub fn volume_metrics(
    a: &[f32],
    b: &[f32],
    dims: [usize; 3],
    opts: SsimOptions,
    mask: Option<&[bool]>,
) -> Result<VolumeMetrics> {
    let m = mse(a, b, mask)?;
    Ok(VolumeMetrics {
        mse: m,
        psnr: psnr_from_mse(m, opts.data_range)?,
        ssim: ssim3d(a, b, dims, opts, mask)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Interpolation,
    Extrapolation,
}

impl Split {
    pub fn label(&self) -> &'static str {
        match self {
            Split::Interpolation => "interpolation",
            Split::Extrapolation => "extrapolation",
        }
    }
}

/// Times strictly inside (t0, t_last_input) are interpolation; beyond
/// t_last_input, extrapolation; input times themselves are reconstructions
/// and belong to neither split.
pub fn classify_time(t: f64, t0: f64, t_last_input: f64) -> Option<Split> {
    const EPS: f64 = 1e-6;
    if t > t_last_input + EPS {
        Some(Split::Extrapolation)
    } else if t > t0 + EPS && t < t_last_input - EPS {
        Some(Split::Interpolation)
    } else {
        None
    }
}

pub struct SequenceScore {
    pub per_scan: Vec<(f64, Split, VolumeMetrics)>,
    pub interpolation: Option<VolumeMetrics>,
    pub extrapolation: Option<VolumeMetrics>,
}

fn mean_metrics(items: &[VolumeMetrics]) -> Option<VolumeMetrics> {
    if items.is_empty() {
        return None;
    }
    let n = items.len() as f64;
    Some(VolumeMetrics {
        mse: items.iter().map(|m| m.mse).sum::<f64>() / n,
        psnr: items.iter().map(|m| m.psnr).sum::<f64>() / n,
        ssim: items.iter().map(|m| m.ssim).sum::<f64>() / n,
    })
}

/// Score time-matched (prediction, truth) pairs and aggregate per split.
#[allow(clippy::type_complexity)]
pub fn score_sequence(
    pairs: &[(f64, &[f32], &[f32], Option<&[bool]>)],
    dims: [usize; 3],
    t0: f64,
    t_last_input: f64,
    opts: SsimOptions,
) -> Result<SequenceScore> {
    if pairs.is_empty() {
        return Err(Error::Precondition("score_sequence: no matched times".into()));
    }
    let mut per_scan = Vec::new();
    let mut interp = Vec::new();
    let mut extrap = Vec::new();
    for (t, pred, truth, mask) in pairs {
        let Some(split) = classify_time(*t, t0, t_last_input) else {
            continue;
        };
        let m = volume_metrics(pred, truth, dims, opts, *mask)?;
        per_scan.push((*t, split, m));
        match split {
            Split::Interpolation => interp.push(m),
            Split::Extrapolation => extrap.push(m),
        }
    }
    Ok(SequenceScore {
        interpolation: mean_metrics(&interp),
        extrapolation: mean_metrics(&extrap),
        per_scan,
    })
}
