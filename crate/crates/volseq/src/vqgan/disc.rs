//! Patch discriminators (volumetric and planar) and the fixed random
//! feature extractor standing in for a pretrained perceptual network.

use rand_chacha::ChaCha8Rng;

use crate::autodiff::{ops, Tensor};
use crate::nn::{Conv3dLayer, GroupNormLayer, NamedParams, PlanarConvLayer};
use crate::Result;

const LEAKY_SLOPE: f32 = 0.2;

/// Three strided convolutions mapping a volume to a grid of patch logits.
pub struct Discriminator3d {
    conv1: Conv3dLayer,
    conv2: Conv3dLayer,
    norm2: GroupNormLayer,
    conv3: Conv3dLayer,
}

impl Discriminator3d {
    pub fn new(rng: &mut ChaCha8Rng, in_channels: usize, base: usize) -> Result<Self> {
        Ok(Discriminator3d {
            conv1: Conv3dLayer::new(rng, in_channels, base, 4, 2, 1)?,
            conv2: Conv3dLayer::new(rng, base, base * 2, 4, 2, 1)?,
            norm2: GroupNormLayer::new(base * 2)?,
            conv3: Conv3dLayer::new(rng, base * 2, 1, 3, 1, 1)?,
        })
    }

    /// [1,C,D,H,W] -> patch logits [1,1,D/4,H/4,W/4].
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let h = self.conv1.forward(x)?.leaky_relu(LEAKY_SLOPE)?;
        let h = self.norm2.forward(&self.conv2.forward(&h)?)?.leaky_relu(LEAKY_SLOPE)?;
        self.conv3.forward(&h)
    }

    pub fn named_parameters(&self) -> NamedParams {
        let mut out = Vec::new();
        self.conv1.collect("disc3d.conv1", &mut out);
        self.conv2.collect("disc3d.conv2", &mut out);
        self.norm2.collect("disc3d.norm2", &mut out);
        self.conv3.collect("disc3d.conv3", &mut out);
        out
    }
}

/// The planar twin: judges one axial slice, shaped [1,C,1,H,W].
pub struct Discriminator2d {
    conv1: PlanarConvLayer,
    conv2: PlanarConvLayer,
    norm2: GroupNormLayer,
    conv3: PlanarConvLayer,
}

impl Discriminator2d {
    pub fn new(rng: &mut ChaCha8Rng, in_channels: usize, base: usize) -> Result<Self> {
        Ok(Discriminator2d {
            conv1: PlanarConvLayer::new(rng, in_channels, base, 4, 2, 1)?,
            conv2: PlanarConvLayer::new(rng, base, base * 2, 4, 2, 1)?,
            norm2: GroupNormLayer::new(base * 2)?,
            conv3: PlanarConvLayer::new(rng, base * 2, 1, 3, 1, 1)?,
        })
    }

    pub fn forward(&self, slice: &Tensor) -> Result<Tensor> {
        let h = self.conv1.forward(slice)?.leaky_relu(LEAKY_SLOPE)?;
        let h = self.norm2.forward(&self.conv2.forward(&h)?)?.leaky_relu(LEAKY_SLOPE)?;
        self.conv3.forward(&h)
    }

    pub fn named_parameters(&self) -> NamedParams {
        let mut out = Vec::new();
        self.conv1.collect("disc2d.conv1", &mut out);
        self.conv2.collect("disc2d.conv2", &mut out);
        self.norm2.collect("disc2d.norm2", &mut out);
        self.conv3.collect("disc2d.conv3", &mut out);
        out
    }
}

/// Feature distance in a fixed randomly-initialized two-layer extractor.
/// The weights never train; gradients still flow through them into the
/// reconstruction.
pub struct FeatureNet {
    conv1: Conv3dLayer,
    conv2: Conv3dLayer,
}

impl FeatureNet {
    pub fn new(rng: &mut ChaCha8Rng, in_channels: usize) -> Result<Self> {
        let conv1 = Conv3dLayer::new(rng, in_channels, 8, 3, 2, 1)?;
        let conv2 = Conv3dLayer::new(rng, 8, 8, 3, 2, 1)?;
        for t in [&conv1.weight, &conv1.bias, &conv2.weight, &conv2.bias] {
            t.set_requires_grad(false);
        }
        Ok(FeatureNet { conv1, conv2 })
    }

    fn features(&self, x: &Tensor) -> Result<Tensor> {
        self.conv2.forward(&self.conv1.forward(x)?.leaky_relu(LEAKY_SLOPE)?)
    }

    /// Mean absolute feature difference.
    pub fn distance(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        ops::l1_loss(&self.features(a)?, &self.features(b)?)
    }
}
