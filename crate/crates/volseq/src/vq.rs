//! Discrete latent bottleneck: codebook storage, nearest-neighbour
//! quantization with a straight-through gradient, the three-term loss
//! (reconstruction + codebook + commitment), usage statistics, and
//! per-code latents for visualization.

use std::io::Write;
use std::path::Path;

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{ops, Tensor};
use crate::{Error, Result};

/// Trainable vocabulary of `m` embedding vectors of size `embed_dim`.
pub struct Codebook {
    entries: Tensor, // [m, embed_dim]
    m: usize,
    embed_dim: usize,
}

impl Codebook {
    /// Entries drawn uniformly from [-1/m, 1/m]; small symmetric init keeps
    /// early quantization spread across the vocabulary.
    pub fn init(m: usize, embed_dim: usize, seed: u64) -> Result<Codebook> {
        Self::validate_dims(m, embed_dim)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lim = 1.0 / m as f32;
        let dist = Uniform::new_inclusive(-lim, lim);
        let vals: Vec<f32> = (0..m * embed_dim).map(|_| dist.sample(&mut rng)).collect();
        Ok(Codebook {
            entries: Tensor::param(vals, &[m, embed_dim])?,
            m,
            embed_dim,
        })
    }

    pub fn from_entries(entries: Tensor) -> Result<Codebook> {
        let s = entries.shape();
        if s.len() != 2 {
            return Err(Error::Dim(format!("codebook entries must be [m, embed_dim], got {:?}", s)));
        }
        Self::validate_dims(s[0], s[1])?;
        if !entries.all_finite() {
            return Err(Error::Precondition("codebook contains non-finite values".into()));
        }
        Ok(Codebook {
            m: s[0],
            embed_dim: s[1],
            entries,
        })
    }

    fn validate_dims(m: usize, embed_dim: usize) -> Result<()> {
        if m < 2 {
            return Err(Error::Precondition(format!("codebook needs at least 2 entries, got {m}")));
        }
        if embed_dim < 1 {
            return Err(Error::Precondition("embed_dim must be at least 1".into()));
        }
        Ok(())
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    /// The trainable entry tensor ([m, embed_dim]).
    pub fn entries(&self) -> &Tensor {
        &self.entries
    }
}

/// Index grid plus the embedding grid it names. The embeddings are plain
/// values (no graph): each voxel's vector is bit-equal to its codebook row.
pub struct QuantizedLatent {
    pub dims: [usize; 3],
    pub indices: Vec<u32>,
    pub embeddings: Tensor, // [d, h, w, embed_dim]
}

impl QuantizedLatent {
    pub fn voxels(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }
}

/// Quantization output for training: the stored latent plus the two graph
/// views of it. `straight_through` feeds the decoder (gradient flows back
/// to the encoder output unchanged); `codebook_rows` is the same grid as a
/// differentiable gather from the codebook (gradient flows into entries).
pub struct Quantized {
    pub latent: QuantizedLatent,
    pub straight_through: Tensor,
    pub codebook_rows: Tensor,
}

/// Commitment weight for [`vq_loss`].
#[derive(Debug, Clone, Copy)]
pub struct VqLossWeights {
    pub beta: f32,
}

impl VqLossWeights {
    pub fn new(beta: f32) -> Result<VqLossWeights> {
        if !(beta > 0.0) {
            return Err(Error::Precondition(format!("beta must be positive, got {beta}")));
        }
        Ok(VqLossWeights { beta })
    }
}

/// Replace each spatial code vector of `z_hat` [d,h,w,embed_dim] with its
/// Euclidean-nearest codebook entry; ties break toward the lowest index.
pub fn quantize(z_hat: &Tensor, codebook: &Codebook) -> Result<Quantized> {
    let s = z_hat.shape();
    if s.len() != 4 || s[3] != codebook.embed_dim() {
        return Err(Error::Dim(format!(
            "quantize expects [d,h,w,{}], got {:?}",
            codebook.embed_dim(),
            s
        )));
    }
    if !z_hat.all_finite() {
        return Err(Error::Precondition("quantize input contains non-finite values".into()));
    }
    let dims = [s[0], s[1], s[2]];
    let e = codebook.embed_dim();
    let m = codebook.m();
    let indices = z_hat.with_data(|zv| {
        codebook.entries.with_data(|cv| {
            let voxels = dims[0] * dims[1] * dims[2];
            let mut idx = Vec::with_capacity(voxels);
            for v in 0..voxels {
                let z = &zv[v * e..(v + 1) * e];
                let mut best = 0u32;
                let mut best_d = f64::INFINITY;
                for row in 0..m {
                    let c = &cv[row * e..(row + 1) * e];
                    let mut d = 0.0f64;
                    for k in 0..e {
                        let diff = (z[k] - c[k]) as f64;
                        d += diff * diff;
                    }
                    if d < best_d {
                        best_d = d;
                        best = row as u32;
                    }
                }
                idx.push(best);
            }
            idx
        })
    });
    let codebook_rows = ops::gather_rows(codebook.entries(), &indices)?.reshape(&s)?;
    let straight_through = ops::straight_through(z_hat, &codebook_rows)?;
    let latent = QuantizedLatent {
        dims,
        indices,
        embeddings: codebook_rows.detach(),
    };
    Ok(Quantized {
        latent,
        straight_through,
        codebook_rows,
    })
}

/// The three loss terms, each retrievable separately.
pub struct VqLossTerms {
    pub total: Tensor,
    pub reconstruction: Tensor,
    pub codebook: Tensor,
    pub commitment: Tensor,
}

/// reconstruction |x - x_hat|_1 + codebook |sg[z_hat] - z_q|_2^2 +
/// beta * commitment |sg[z_q] - z_hat|_2^2, all as per-element means.
/// The codebook term's gradient reaches only the codebook entries; the
/// commitment term's only the encoder path.
pub fn vq_loss(
    x: &Tensor,
    x_hat: &Tensor,
    z_hat: &Tensor,
    z_q: &Tensor,
    weights: VqLossWeights,
) -> Result<VqLossTerms> {
    if x.shape() != x_hat.shape() {
        return Err(Error::Dim(format!(
            "vq_loss: x {:?} vs x_hat {:?}",
            x.shape(),
            x_hat.shape()
        )));
    }
    if z_hat.shape() != z_q.shape() {
        return Err(Error::Dim(format!(
            "vq_loss: z_hat {:?} vs z_q {:?}",
            z_hat.shape(),
            z_q.shape()
        )));
    }
    let reconstruction = ops::l1_loss(x, x_hat)?;
    let codebook = ops::l2_loss(&ops::stop_gradient(z_hat), z_q)?;
    let commitment = ops::l2_loss(&ops::stop_gradient(z_q), z_hat)?;
    let total = ops::add(
        &ops::add(&reconstruction, &codebook)?,
        &ops::mul_scalar(&commitment, weights.beta)?,
    )?;
    Ok(VqLossTerms {
        total,
        reconstruction,
        codebook,
        commitment,
    })
}

/// Normalized histogram of code usage over the (optionally masked) voxels.
pub fn code_frequencies(indices: &[u32], m: usize, mask: Option<&[bool]>) -> Result<Vec<f64>> {
    if let Some(mk) = mask {
        if mk.len() != indices.len() {
            return Err(Error::Dim(format!(
                "mask length {} does not match {} voxels",
                mk.len(),
                indices.len()
            )));
        }
    }
    let mut counts = vec![0u64; m];
    let mut total = 0u64;
    for (v, &idx) in indices.iter().enumerate() {
        if idx as usize >= m {
            return Err(Error::Precondition(format!("code index {idx} out of range for m = {m}")));
        }
        if mask.map_or(true, |mk| mk[v]) {
            counts[idx as usize] += 1;
            total += 1;
        }
    }
    if total == 0 {
        return Err(Error::Precondition("mask selects zero voxels".into()));
    }
    Ok(counts.iter().map(|&c| c as f64 / total as f64).collect())
}

pub struct CodebookUsage {
    /// exp(entropy) of the empirical code distribution.
    pub perplexity: f64,
    /// Entries never used across the supplied grids.
    pub dead_codes: Vec<usize>,
}

pub fn codebook_usage(grids: &[&[u32]], m: usize) -> Result<CodebookUsage> {
    if grids.is_empty() {
        return Err(Error::Precondition("codebook_usage needs at least one index grid".into()));
    }
    let mut counts = vec![0u64; m];
    let mut total = 0u64;
    for grid in grids {
        for &idx in *grid {
            if idx as usize >= m {
                return Err(Error::Precondition(format!("code index {idx} out of range for m = {m}")));
            }
            counts[idx as usize] += 1;
            total += 1;
        }
    }
    let mut entropy = 0.0f64;
    for &c in &counts {
        if c > 0 {
            let p = c as f64 / total as f64;
            entropy -= p * p.ln();
        }
    }
    let dead_codes = counts
        .iter()
        .enumerate()
        .filter(|(_, &c)| c == 0)
        .map(|(i, _)| i)
        .collect();
    Ok(CodebookUsage {
        perplexity: entropy.exp(),
        dead_codes,
    })
}

/// A latent grid that uses one code everywhere; decoding it through the
/// trained decoder yields that code's visualization volume.
pub fn single_code_latent(code_index: usize, dims: [usize; 3], codebook: &Codebook) -> Result<QuantizedLatent> {
    if code_index >= codebook.m() {
        return Err(Error::Precondition(format!(
            "code index {code_index} out of range for m = {}",
            codebook.m()
        )));
    }
    let voxels = dims[0] * dims[1] * dims[2];
    let e = codebook.embed_dim();
    let row = codebook
        .entries
        .with_data(|cv| cv[code_index * e..(code_index + 1) * e].to_vec());
    let mut vals = Vec::with_capacity(voxels * e);
    for _ in 0..voxels {
        vals.extend_from_slice(&row);
    }
    Ok(QuantizedLatent {
        dims,
        indices: vec![code_index as u32; voxels],
        embeddings: Tensor::from_vec(vals, &[dims[0], dims[1], dims[2], e])?,
    })
}

/// CSV export: header `code_index,dim_0,...,dim_{embed_dim-1}`.
pub fn write_codebook_csv(codebook: &Codebook, path: &Path) -> Result<()> {
    let mut out = String::new();
    out.push_str("code_index");
    for k in 0..codebook.embed_dim() {
        out.push_str(&format!(",dim_{k}"));
    }
    out.push('\n');
    codebook.entries.with_data(|cv| {
        let e = codebook.embed_dim();
        for row in 0..codebook.m() {
            out.push_str(&row.to_string());
            for k in 0..e {
                out.push_str(&format!(",{}", cv[row * e + k]));
            }
            out.push('\n');
        }
    });
    write_file(path, out.as_bytes())
}

/// CSV export: header `code_index,frequency`.
pub fn write_frequencies_csv(freqs: &[f64], path: &Path) -> Result<()> {
    let mut out = String::from("code_index,frequency\n");
    for (i, f) in freqs.iter().enumerate() {
        out.push_str(&format!("{i},{f}\n"));
    }
    write_file(path, out.as_bytes())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::backward;

    fn grid_tensor(vals: Vec<f32>, dims: [usize; 3], e: usize) -> Tensor {
        Tensor::param(vals, &[dims[0], dims[1], dims[2], e]).unwrap()
    }

    fn two_entry_codebook() -> Codebook {
        Codebook::from_entries(Tensor::param(vec![0.0, 0.0, 1.0, 1.0], &[2, 2]).unwrap()).unwrap()
    }

    #[test]
    fn nearest_by_inspection() {
        let cb = two_entry_codebook();
        let z = grid_tensor(vec![0.1, 0.2], [1, 1, 1], 2);
        let q = quantize(&z, &cb).unwrap();
        assert_eq!(q.latent.indices, vec![0]);
        assert_eq!(q.latent.embeddings.data(), vec![0.0, 0.0]);
    }

    #[test]
    fn tie_breaks_to_lowest_index() {
        // entries 1 and 3 equidistant from the voxel
        let entries = Tensor::param(vec![9.0, 9.0, 1.0, 0.0, 9.0, -9.0, 1.0, 0.0], &[4, 2]).unwrap();
        let cb = Codebook::from_entries(entries).unwrap();
        let z = grid_tensor(vec![0.0, 0.0], [1, 1, 1], 2);
        let q = quantize(&z, &cb).unwrap();
        assert_eq!(q.latent.indices, vec![1]);
    }

    #[test]
    fn matches_exhaustive_search() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        let (m, e, dims) = (8usize, 4usize, [3usize, 3, 3]);
        let cb_vals: Vec<f32> = (0..m * e).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let cb = Codebook::from_entries(Tensor::param(cb_vals.clone(), &[m, e]).unwrap()).unwrap();
        let z_vals: Vec<f32> = (0..27 * e).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let z = grid_tensor(z_vals.clone(), dims, e);
        let q = quantize(&z, &cb).unwrap();

        // brute force: per voxel, scan every entry
        for v in 0..27 {
            let zv = &z_vals[v * e..(v + 1) * e];
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for row in 0..m {
                let c = &cb_vals[row * e..(row + 1) * e];
                let d: f64 = zv
                    .iter()
                    .zip(c)
                    .map(|(a, b)| ((a - b) as f64) * ((a - b) as f64))
                    .sum();
                if d < best_d {
                    best_d = d;
                    best = row;
                }
            }
            assert_eq!(q.latent.indices[v] as usize, best, "voxel {v}");
        }
    }

    #[test]
    fn straight_through_gradient_is_all_ones() {
        let cb = two_entry_codebook();
        let z = grid_tensor(vec![0.1, 0.2, 0.9, 0.7], [2, 1, 1], 2);
        let q = quantize(&z, &cb).unwrap();
        let s = ops::sum(&q.straight_through).unwrap();
        backward(&s).unwrap();
        assert_eq!(z.grad().unwrap(), vec![1.0; 4]);
    }

    #[test]
    fn quantized_embeddings_bit_equal_codebook_rows() {
        let cb = two_entry_codebook();
        let z = grid_tensor(vec![0.4, 0.1, 0.8, 0.9], [2, 1, 1], 2);
        let q = quantize(&z, &cb).unwrap();
        let rows = cb.entries().data();
        for (v, &idx) in q.latent.indices.iter().enumerate() {
            let emb = q.latent.embeddings.data();
            for k in 0..2 {
                assert_eq!(emb[v * 2 + k].to_bits(), rows[idx as usize * 2 + k].to_bits());
            }
        }
    }

    #[test]
    fn quantize_is_idempotent() {
        let cb = Codebook::init(6, 3, 5).unwrap();
        let z = grid_tensor(
            (0..2 * 2 * 2 * 3).map(|i| (i as f32 * 0.37).sin()).collect(),
            [2, 2, 2],
            3,
        );
        let q1 = quantize(&z, &cb).unwrap();
        let q2 = quantize(&q1.latent.embeddings, &cb).unwrap();
        assert_eq!(q1.latent.indices, q2.latent.indices);
        let (a, b) = (q1.latent.embeddings.data(), q2.latent.embeddings.data());
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn loss_zero_at_identity() {
        let x = Tensor::from_vec(vec![0.3, 0.6], &[2]).unwrap();
        let z = Tensor::from_vec(vec![1.0, 2.0], &[2]).unwrap();
        let w = VqLossWeights::new(0.25).unwrap();
        let terms = vq_loss(&x, &x, &z, &z, w).unwrap();
        assert_eq!(terms.total.item().unwrap(), 0.0);
    }

    #[test]
    fn scalar_fixture_evaluates_to_six() {
        // x=1, x_hat=0, z_hat=2, z_q=0, beta=0.25 -> 1 + 4 + 0.25*4 = 6
        let x = Tensor::from_vec(vec![1.0], &[1]).unwrap();
        let x_hat = Tensor::from_vec(vec![0.0], &[1]).unwrap();
        let z_hat = Tensor::from_vec(vec![2.0], &[1]).unwrap();
        let z_q = Tensor::from_vec(vec![0.0], &[1]).unwrap();
        let w = VqLossWeights::new(0.25).unwrap();
        let terms = vq_loss(&x, &x_hat, &z_hat, &z_q, w).unwrap();
        assert_eq!(terms.total.item().unwrap(), 6.0);
        assert_eq!(terms.reconstruction.item().unwrap(), 1.0);
        assert_eq!(terms.codebook.item().unwrap(), 4.0);
        assert_eq!(terms.commitment.item().unwrap(), 4.0);
    }

    #[test]
    fn gradient_routing_between_codebook_and_encoder() {
        let cb = two_entry_codebook();
        let z_hat = grid_tensor(vec![0.3, 0.4], [1, 1, 1], 2);
        let q = quantize(&z_hat, &cb).unwrap();
        let w = VqLossWeights::new(0.5).unwrap();
        let x = Tensor::from_vec(vec![0.0], &[1]).unwrap();

        // commitment term alone: encoder gets gradient, codebook does not
        let terms = vq_loss(&x, &x, &z_hat, &q.codebook_rows, w).unwrap();
        backward(&terms.commitment).unwrap();
        assert!(z_hat.grad().is_some());
        assert!(cb.entries().grad().is_none());

        // codebook term alone: entries get gradient, encoder does not
        z_hat.zero_grad();
        let q = quantize(&z_hat, &cb).unwrap();
        let terms = vq_loss(&x, &x, &z_hat, &q.codebook_rows, w).unwrap();
        backward(&terms.codebook).unwrap();
        assert!(cb.entries().grad().is_some());
        assert!(z_hat.grad().is_none());
        cb.entries().zero_grad();
    }

    #[test]
    fn frequencies_count_correctly() {
        let freqs = code_frequencies(&[0, 0, 0, 1], 2, None).unwrap();
        assert_eq!(freqs, vec![0.75, 0.25]);

        let one_hot = code_frequencies(&[3, 3, 3], 5, None).unwrap();
        assert_eq!(one_hot, vec![0.0, 0.0, 0.0, 1.0, 0.0]);

        let masked = code_frequencies(&[0, 1, 1, 0], 2, Some(&[true, true, false, false])).unwrap();
        assert_eq!(masked, vec![0.5, 0.5]);

        assert!(code_frequencies(&[0], 2, Some(&[false])).is_err());
    }

    #[test]
    fn frequencies_match_recount_oracle() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let m = 7usize;
        let grid: Vec<u32> = (0..200).map(|_| rng.gen_range(0..m as u32)).collect();
        let freqs = code_frequencies(&grid, m, None).unwrap();
        for k in 0..m {
            let count = grid.iter().filter(|&&i| i as usize == k).count();
            assert_eq!(freqs[k], count as f64 / 200.0);
        }
        let total: f64 = freqs.iter().sum();
        assert!((total - 1.0).abs() < 1e-6);
    }

    #[test]
    fn usage_perplexity_and_dead_codes() {
        // uniform usage over m codes -> perplexity m
        let grid: Vec<u32> = (0..4).collect();
        let usage = codebook_usage(&[&grid], 4).unwrap();
        assert!((usage.perplexity - 4.0).abs() < 1e-9);
        assert!(usage.dead_codes.is_empty());

        // single code -> perplexity 1, m-1 dead
        let grid = vec![2u32; 10];
        let usage = codebook_usage(&[&grid], 4).unwrap();
        assert!((usage.perplexity - 1.0).abs() < 1e-9);
        assert_eq!(usage.dead_codes, vec![0, 1, 3]);

        // mixed histogram vs closed-form exp(entropy)
        let grid = vec![0u32, 0, 0, 1];
        let usage = codebook_usage(&[&grid], 2).unwrap();
        let expect = (-(0.75f64 * 0.75f64.ln() + 0.25 * 0.25f64.ln())).exp();
        assert!((usage.perplexity - expect).abs() < 1e-12);
    }

    #[test]
    fn single_code_latent_fixed_point() {
        let cb = Codebook::init(5, 3, 7).unwrap();
        let lat = single_code_latent(3, [2, 2, 2], &cb).unwrap();
        assert!(lat.indices.iter().all(|&i| i == 3));
        // requantizing the constant grid returns the same code everywhere
        let q = quantize(&lat.embeddings, &cb).unwrap();
        assert!(q.latent.indices.iter().all(|&i| i == 3));
        let freqs = code_frequencies(&lat.indices, 5, None).unwrap();
        assert_eq!(freqs[3], 1.0);
        assert!(single_code_latent(5, [1, 1, 1], &cb).is_err());
    }
}
