//! Small layer building blocks shared by the stage-1 and stage-2 models:
//! seeded initialization, convolution layers with bias, group norm, and
//! parameter collection for checkpoints and optimizers.

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{conv3d, conv3d_general, conv_transpose3d, ops, Tensor};
use crate::Result;

pub type NamedParams = Vec<(String, Tensor)>;

pub fn init_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Kaiming-style uniform init in [-sqrt(6/fan_in), sqrt(6/fan_in)].
pub fn kaiming_uniform(rng: &mut ChaCha8Rng, fan_in: usize, n: usize) -> Vec<f32> {
    let limit = (6.0 / fan_in.max(1) as f32).sqrt();
    let dist = Uniform::new_inclusive(-limit, limit);
    (0..n).map(|_| dist.sample(rng)).collect()
}

/// Largest group count <= 4 that divides the channel count.
pub fn norm_groups(channels: usize) -> usize {
    (1..=4usize.min(channels))
        .rev()
        .find(|g| channels % g == 0)
        .unwrap_or(1)
}

/// Order-insensitive fingerprint of parameter values, for asserting that a
/// set of tensors did not change.
pub fn param_fingerprint(params: &[(String, Tensor)]) -> u64 {
    let mut h = 0xcbf29ce484222325u64;
    for (name, t) in params {
        for b in name.as_bytes() {
            h = (h ^ *b as u64).wrapping_mul(0x100000001b3);
        }
        t.with_data(|vals| {
            for v in vals {
                h = (h ^ v.to_bits() as u64).wrapping_mul(0x100000001b3);
            }
        });
    }
    h
}

pub struct Conv3dLayer {
    pub weight: Tensor, // [out, in, k, k, k]
    pub bias: Tensor,   // [out]
    stride: usize,
    padding: usize,
}

impl Conv3dLayer {
    pub fn new(
        rng: &mut ChaCha8Rng,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        let fan_in = c_in * k * k * k;
        let weight = Tensor::param(kaiming_uniform(rng, fan_in, c_out * fan_in), &[c_out, c_in, k, k, k])?;
        let bias = Tensor::param(vec![0.0; c_out], &[c_out])?;
        Ok(Conv3dLayer {
            weight,
            bias,
            stride,
            padding,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        ops::channel_bias_add(&conv3d(x, &self.weight, self.stride, self.padding)?, &self.bias)
    }

    pub fn collect(&self, prefix: &str, out: &mut NamedParams) {
        out.push((format!("{prefix}.weight"), self.weight.clone()));
        out.push((format!("{prefix}.bias"), self.bias.clone()));
    }
}

/// Depth-1 convolution over [N,C,1,H,W] slices (kernel [out, in, 1, k, k]).
pub struct PlanarConvLayer {
    pub weight: Tensor,
    pub bias: Tensor,
    stride: usize,
    padding: usize,
}

impl PlanarConvLayer {
    pub fn new(
        rng: &mut ChaCha8Rng,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        let fan_in = c_in * k * k;
        let weight = Tensor::param(kaiming_uniform(rng, fan_in, c_out * fan_in), &[c_out, c_in, 1, k, k])?;
        let bias = Tensor::param(vec![0.0; c_out], &[c_out])?;
        Ok(PlanarConvLayer {
            weight,
            bias,
            stride,
            padding,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = conv3d_general(
            x,
            &self.weight,
            [1, self.stride, self.stride],
            [0, self.padding, self.padding],
        )?;
        ops::channel_bias_add(&y, &self.bias)
    }

    pub fn collect(&self, prefix: &str, out: &mut NamedParams) {
        out.push((format!("{prefix}.weight"), self.weight.clone()));
        out.push((format!("{prefix}.bias"), self.bias.clone()));
    }
}

pub struct ConvTranspose3dLayer {
    pub weight: Tensor, // [in, out, k, k, k]
    pub bias: Tensor,   // [out]
    stride: usize,
    padding: usize,
}

impl ConvTranspose3dLayer {
    pub fn new(
        rng: &mut ChaCha8Rng,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        let fan_in = c_in * k * k * k;
        let weight = Tensor::param(kaiming_uniform(rng, fan_in, c_in * c_out * k * k * k), &[c_in, c_out, k, k, k])?;
        let bias = Tensor::param(vec![0.0; c_out], &[c_out])?;
        Ok(ConvTranspose3dLayer {
            weight,
            bias,
            stride,
            padding,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        ops::channel_bias_add(
            &conv_transpose3d(x, &self.weight, self.stride, self.padding)?,
            &self.bias,
        )
    }

    pub fn collect(&self, prefix: &str, out: &mut NamedParams) {
        out.push((format!("{prefix}.weight"), self.weight.clone()));
        out.push((format!("{prefix}.bias"), self.bias.clone()));
    }
}

pub struct GroupNormLayer {
    pub gamma: Tensor,
    pub beta: Tensor,
    groups: usize,
}

impl GroupNormLayer {
    pub fn new(channels: usize) -> Result<Self> {
        Ok(GroupNormLayer {
            gamma: Tensor::param(vec![1.0; channels], &[channels])?,
            beta: Tensor::param(vec![0.0; channels], &[channels])?,
            groups: norm_groups(channels),
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        ops::group_norm(x, &self.gamma, &self.beta, self.groups, 1e-5)
    }

    pub fn collect(&self, prefix: &str, out: &mut NamedParams) {
        out.push((format!("{prefix}.gamma"), self.gamma.clone()));
        out.push((format!("{prefix}.beta"), self.beta.clone()));
    }
}
