//! Stage-1 model: volumetric encoder/decoder around the vector-quantized
//! bottleneck, planar and volumetric discriminators, the adversarial loss,
//! and the stage-1 training loop with its warmup schedule.

mod disc;
mod loss;
mod train;

pub use disc::{Discriminator2d, Discriminator3d, FeatureNet};
pub use loss::{eq_gan_value, gan_loss, GanSide};
pub use train::{
    discriminator_slice_pick, pick_slice_index, train_stage1, Stage1RunResult, Stage1Trainer,
    StageOneLossWeights, StepLosses, LOG_HEADER,
};

use std::sync::atomic::{AtomicUsize, Ordering};

use rand_chacha::ChaCha8Rng;

use crate::autodiff::{no_grad, ops, Tensor};
use crate::nn::{Conv3dLayer, ConvTranspose3dLayer, GroupNormLayer, NamedParams};
use crate::vq::{quantize, Codebook, Quantized};
use crate::{Error, Result};

const LEAKY_SLOPE: f32 = 0.2;

#[derive(Debug, Clone)]
pub struct EncoderDecoderConfig {
    pub in_channels: usize,
    pub base_channels: usize,
    /// Spatial compression rate r (power of two); the latent grid is the
    /// input shape divided by r on every axis.
    pub compression_rate: usize,
    pub embed_dim: usize,
    pub input_shape: [usize; 3],
}

impl EncoderDecoderConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.compression_rate.is_power_of_two() {
            return Err(Error::Precondition(format!(
                "compression rate {} must be a power of two",
                self.compression_rate
            )));
        }
        for d in self.input_shape {
            if d == 0 || d % self.compression_rate != 0 {
                return Err(Error::Precondition(format!(
                    "compression rate {} must divide input shape {:?}",
                    self.compression_rate, self.input_shape
                )));
            }
        }
        if self.in_channels == 0 || self.base_channels == 0 || self.embed_dim == 0 {
            return Err(Error::Precondition("channel counts must be positive".into()));
        }
        Ok(())
    }

    pub fn latent_shape(&self) -> [usize; 3] {
        [
            self.input_shape[0] / self.compression_rate,
            self.input_shape[1] / self.compression_rate,
            self.input_shape[2] / self.compression_rate,
        ]
    }

    fn down_steps(&self) -> usize {
        self.compression_rate.trailing_zeros() as usize
    }
}

struct ResBlock {
    conv1: Conv3dLayer,
    norm1: GroupNormLayer,
    conv2: Conv3dLayer,
    norm2: GroupNormLayer,
}

impl ResBlock {
    fn new(rng: &mut ChaCha8Rng, channels: usize) -> Result<Self> {
        Ok(ResBlock {
            conv1: Conv3dLayer::new(rng, channels, channels, 3, 1, 1)?,
            norm1: GroupNormLayer::new(channels)?,
            conv2: Conv3dLayer::new(rng, channels, channels, 3, 1, 1)?,
            norm2: GroupNormLayer::new(channels)?,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let h = self.norm1.forward(&self.conv1.forward(x)?)?.leaky_relu(LEAKY_SLOPE)?;
        let h = self.norm2.forward(&self.conv2.forward(&h)?)?;
        x.add(&h)?.leaky_relu(LEAKY_SLOPE)
    }

    fn collect(&self, prefix: &str, out: &mut NamedParams) {
        self.conv1.collect(&format!("{prefix}.conv1"), out);
        self.norm1.collect(&format!("{prefix}.norm1"), out);
        self.conv2.collect(&format!("{prefix}.conv2"), out);
        self.norm2.collect(&format!("{prefix}.norm2"), out);
    }
}

/// Encoder E, decoder G, and the codebook Z.
pub struct VqGan {
    pub cfg: EncoderDecoderConfig,
    enc_stem: Conv3dLayer,
    enc_stem_norm: GroupNormLayer,
    enc_down: Vec<(Conv3dLayer, GroupNormLayer)>,
    enc_mid: ResBlock,
    enc_head: Conv3dLayer,
    dec_stem: Conv3dLayer,
    dec_stem_norm: GroupNormLayer,
    dec_mid: ResBlock,
    dec_up: Vec<(ConvTranspose3dLayer, GroupNormLayer)>,
    dec_head: Conv3dLayer,
    pub codebook: Codebook,
    encode_calls: AtomicUsize,
}

impl VqGan {
    pub fn new(cfg: EncoderDecoderConfig, codebook_m: usize, rng: &mut ChaCha8Rng, codebook_seed: u64) -> Result<VqGan> {
        cfg.validate()?;
        let b = cfg.base_channels;
        let enc_stem = Conv3dLayer::new(rng, cfg.in_channels, b, 3, 1, 1)?;
        let enc_stem_norm = GroupNormLayer::new(b)?;
        let mut enc_down = Vec::new();
        for _ in 0..cfg.down_steps() {
            enc_down.push((Conv3dLayer::new(rng, b, b, 4, 2, 1)?, GroupNormLayer::new(b)?));
        }
        let enc_mid = ResBlock::new(rng, b)?;
        let enc_head = Conv3dLayer::new(rng, b, cfg.embed_dim, 3, 1, 1)?;

        let dec_stem = Conv3dLayer::new(rng, cfg.embed_dim, b, 3, 1, 1)?;
        let dec_stem_norm = GroupNormLayer::new(b)?;
        let dec_mid = ResBlock::new(rng, b)?;
        let mut dec_up = Vec::new();
        for _ in 0..cfg.down_steps() {
            dec_up.push((
                ConvTranspose3dLayer::new(rng, b, b, 4, 2, 1)?,
                GroupNormLayer::new(b)?,
            ));
        }
        let dec_head = Conv3dLayer::new(rng, b, cfg.in_channels, 3, 1, 1)?;
        let codebook = Codebook::init(codebook_m, cfg.embed_dim, codebook_seed)?;
        Ok(VqGan {
            cfg,
            enc_stem,
            enc_stem_norm,
            enc_down,
            enc_mid,
            enc_head,
            dec_stem,
            dec_stem_norm,
            dec_mid,
            dec_up,
            dec_head,
            codebook,
            encode_calls: AtomicUsize::new(0),
        })
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let want = vec![
            1,
            self.cfg.in_channels,
            self.cfg.input_shape[0],
            self.cfg.input_shape[1],
            self.cfg.input_shape[2],
        ];
        if x.shape() != want {
            return Err(Error::Dim(format!(
                "encode input shape {:?}, model expects {:?}",
                x.shape(),
                want
            )));
        }
        Ok(())
    }

    /// E(X): [1,C,D,H,W] -> continuous latent [d,h,w,embed_dim].
    pub fn encode(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        self.encode_calls.fetch_add(1, Ordering::Relaxed);
        let mut h = self
            .enc_stem_norm
            .forward(&self.enc_stem.forward(x)?)?
            .leaky_relu(LEAKY_SLOPE)?;
        for (conv, norm) in &self.enc_down {
            h = norm.forward(&conv.forward(&h)?)?.leaky_relu(LEAKY_SLOPE)?;
        }
        h = self.enc_mid.forward(&h)?;
        let z = self.enc_head.forward(&h)?; // [1, e, d, h, w]
        let [d, hh, w] = self.cfg.latent_shape();
        let e = self.cfg.embed_dim;
        z.reshape(&[e, d, hh, w])?.permute(&[1, 2, 3, 0])
    }

    /// G(z_q): latent [d,h,w,embed_dim] -> volume [1,C,D,H,W] in [0,1].
    pub fn decode(&self, z_q: &Tensor) -> Result<Tensor> {
        let [d, hh, w] = self.cfg.latent_shape();
        let e = self.cfg.embed_dim;
        if z_q.shape() != vec![d, hh, w, e] {
            return Err(Error::Dim(format!(
                "decode latent shape {:?}, model expects {:?}",
                z_q.shape(),
                [d, hh, w, e]
            )));
        }
        let z = z_q.permute(&[3, 0, 1, 2])?.reshape(&[1, e, d, hh, w])?;
        let mut h = self
            .dec_stem_norm
            .forward(&self.dec_stem.forward(&z)?)?
            .leaky_relu(LEAKY_SLOPE)?;
        h = self.dec_mid.forward(&h)?;
        for (up, norm) in &self.dec_up {
            h = norm.forward(&up.forward(&h)?)?.leaky_relu(LEAKY_SLOPE)?;
        }
        ops::sigmoid(&self.dec_head.forward(&h)?)
    }

    /// Encode and quantize without recording gradients.
    pub fn encode_quantized(&self, x: &Tensor) -> Result<Quantized> {
        no_grad(|| quantize(&self.encode(x)?, &self.codebook))
    }

    pub fn encode_call_count(&self) -> usize {
        self.encode_calls.load(Ordering::Relaxed)
    }

    /// Every trainable tensor of E, G, and the codebook, with stable names.
    pub fn named_parameters(&self) -> NamedParams {
        let mut out = Vec::new();
        self.enc_stem.collect("encoder.stem", &mut out);
        self.enc_stem_norm.collect("encoder.stem_norm", &mut out);
        for (i, (conv, norm)) in self.enc_down.iter().enumerate() {
            conv.collect(&format!("encoder.down{i}"), &mut out);
            norm.collect(&format!("encoder.down{i}_norm"), &mut out);
        }
        self.enc_mid.collect("encoder.mid", &mut out);
        self.enc_head.collect("encoder.head", &mut out);
        self.dec_stem.collect("decoder.stem", &mut out);
        self.dec_stem_norm.collect("decoder.stem_norm", &mut out);
        self.dec_mid.collect("decoder.mid", &mut out);
        for (i, (up, norm)) in self.dec_up.iter().enumerate() {
            up.collect(&format!("decoder.up{i}"), &mut out);
            norm.collect(&format!("decoder.up{i}_norm"), &mut out);
        }
        self.dec_head.collect("decoder.head", &mut out);
        out.push(("codebook.entries".to_string(), self.codebook.entries().clone()));
        out
    }
}
