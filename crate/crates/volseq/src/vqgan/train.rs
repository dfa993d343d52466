//! Stage-1 training: reconstruction-only warmup, then per-step alternation
//! of one discriminator update (planar on a random axial slice, volumetric
//! on the full volume) and one generator update carrying the adversarial
//! term. Generator gradients may accumulate over several steps before an
//! optimizer update; discriminator updates never accumulate.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{backward, clear_tape, no_grad, ops, Optimizer, OptimizerKind, Tensor};
use crate::io::Stage1Section;
use crate::nn::{init_rng, NamedParams};
use crate::vq::{quantize, vq_loss, VqLossWeights};
use crate::{Error, Result};

use super::{
    gan_loss, Discriminator2d, Discriminator3d, EncoderDecoderConfig, FeatureNet, GanSide, VqGan,
};

#[derive(Debug, Clone, Copy)]
pub struct StageOneLossWeights {
    pub lambda_rec: f32,
    pub lambda_perc: f32,
    pub lambda_gan: f32,
    pub beta: f32,
    pub gan_start_step: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct StepLosses {
    pub step: usize,
    pub l_rec: f32,
    pub l_codebook: f32,
    pub l_commit: f32,
    pub l_perc: f32,
    pub l_gan_g: f32,
    pub l_gan_d2: f32,
    pub l_gan_d3: f32,
    /// The generator objective actually minimized this step.
    pub total: f32,
}

pub const LOG_HEADER: &str = "step,l_rec,l_codebook,l_commit,l_perc,l_gan_g,l_gan_d2,l_gan_d3";

impl StepLosses {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            self.step,
            self.l_rec,
            self.l_codebook,
            self.l_commit,
            self.l_perc,
            self.l_gan_g,
            self.l_gan_d2,
            self.l_gan_d3
        )
    }
}

/// Uniform axial slice index.
pub fn pick_slice_index(depth: usize, rng: &mut ChaCha8Rng) -> usize {
    rng.gen_range(0..depth)
}

/// Draw one axial slice of a [1,C,D,H,W] volume at a uniform index.
pub fn discriminator_slice_pick(volume: &Tensor, rng: &mut ChaCha8Rng) -> Result<(usize, Tensor)> {
    let s = volume.shape();
    if s.len() != 5 {
        return Err(Error::Dim(format!("slice pick needs rank 5, got {:?}", s)));
    }
    let idx = pick_slice_index(s[2], rng);
    Ok((idx, ops::slice_depth(volume, idx)?))
}

pub struct Stage1Trainer {
    pub model: VqGan,
    pub disc2: Discriminator2d,
    pub disc3: Discriminator3d,
    feature_net: Option<FeatureNet>,
    pub(crate) opt_g: Optimizer,
    pub(crate) opt_d: Optimizer,
    pub weights: StageOneLossWeights,
    accum_steps: usize,
    micro: usize,
    step: usize,
    slice_rng: ChaCha8Rng,
}

impl Stage1Trainer {
    /// Build the model, discriminators, feature extractor, and optimizers
    /// from one config section, all seeded from `section.seed`.
    pub fn from_section(section: &Stage1Section) -> Result<Stage1Trainer> {
        let cfg = EncoderDecoderConfig {
            in_channels: 1,
            base_channels: section.base_channels,
            compression_rate: section.compression_rate,
            embed_dim: section.embed_dim,
            input_shape: [section.input_dim; 3],
        };
        let mut rng = init_rng(section.seed);
        let model = VqGan::new(cfg, section.m, &mut rng, section.seed ^ 0xC0DEB00C)?;
        let disc_base = (section.base_channels / 2).max(4);
        let disc2 = Discriminator2d::new(&mut rng, 1, disc_base)?;
        let disc3 = Discriminator3d::new(&mut rng, 1, disc_base)?;
        let feature_net = if section.lambda_perc > 0.0 {
            Some(FeatureNet::new(&mut rng, 1)?)
        } else {
            None
        };
        let weights = StageOneLossWeights {
            lambda_rec: section.lambda_rec,
            lambda_perc: section.lambda_perc,
            lambda_gan: section.lambda_gan,
            beta: section.beta,
            gan_start_step: section.gan_start_step,
        };
        Stage1Trainer::new(
            model,
            disc2,
            disc3,
            feature_net,
            weights,
            section.lr,
            section.accum_steps,
            section.seed ^ 0x511CE,
        )
    }

    #[allow(clippy::too_many_arguments)]
    pub fn new(
        model: VqGan,
        disc2: Discriminator2d,
        disc3: Discriminator3d,
        feature_net: Option<FeatureNet>,
        weights: StageOneLossWeights,
        lr: f32,
        accum_steps: usize,
        slice_seed: u64,
    ) -> Result<Stage1Trainer> {
        if accum_steps == 0 {
            return Err(Error::Precondition("accum_steps must be at least 1".into()));
        }
        let g_params: Vec<Tensor> = model.named_parameters().into_iter().map(|(_, t)| t).collect();
        let mut d_params: Vec<Tensor> =
            disc2.named_parameters().into_iter().map(|(_, t)| t).collect();
        d_params.extend(disc3.named_parameters().into_iter().map(|(_, t)| t));
        // Adam with beta1 = 0.5, beta2 = 0.9 for both sides
        let opt_g = Optimizer::new(OptimizerKind::Adam, g_params, lr, 0.5, 0.9, 0.0);
        let opt_d = Optimizer::new(OptimizerKind::Adam, d_params, lr, 0.5, 0.9, 0.0);
        Ok(Stage1Trainer {
            model,
            disc2,
            disc3,
            feature_net,
            opt_g,
            opt_d,
            weights,
            accum_steps,
            micro: 0,
            step: 0,
            slice_rng: init_rng(slice_seed),
        })
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    pub fn discriminator_parameters(&self) -> NamedParams {
        let mut out = self.disc2.named_parameters();
        out.extend(self.disc3.named_parameters());
        out
    }

    fn reconstruct(&self, x: &Tensor) -> Result<(Tensor, crate::vq::Quantized, Tensor)> {
        let z_hat = self.model.encode(x)?;
        let q = quantize(&z_hat, &self.model.codebook)?;
        let x_hat = self.model.decode(&q.straight_through)?;
        Ok((z_hat, q, x_hat))
    }

    /// One training step on a single volume [1,C,D,H,W].
    pub fn train_step(&mut self, x: &Tensor) -> Result<StepLosses> {
        clear_tape();
        let w = self.weights;
        let gan_active = w.lambda_gan > 0.0 && self.step >= w.gan_start_step;
        let depth = x.shape()[2];
        let slice_idx = gan_active.then(|| pick_slice_index(depth, &mut self.slice_rng));

        let mut l_gan_d2 = 0.0f32;
        let mut l_gan_d3 = 0.0f32;
        if gan_active {
            // discriminators judge a detached reconstruction
            let x_hat_ng = no_grad(|| -> Result<Tensor> {
                let (_, q, x_hat) = self.reconstruct(x)?;
                let _ = q;
                Ok(x_hat)
            })?;
            let idx = slice_idx.expect("set when gan is active");
            let real_slice = ops::slice_depth(x, idx)?;
            let fake_slice = ops::slice_depth(&x_hat_ng, idx)?;
            let d2 = gan_loss(
                &self.disc2.forward(&real_slice)?,
                &self.disc2.forward(&fake_slice)?,
                GanSide::Discriminator,
            )?;
            let d3 = gan_loss(
                &self.disc3.forward(x)?,
                &self.disc3.forward(&x_hat_ng)?,
                GanSide::Discriminator,
            )?;
            l_gan_d2 = d2.item()?;
            l_gan_d3 = d3.item()?;
            let d_total = ops::add(&d2, &d3)?;
            if !d_total.item()?.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite discriminator loss at step {}: d2 {l_gan_d2}, d3 {l_gan_d3}",
                    self.step
                )));
            }
            backward(&d_total)?;
            self.opt_d.step()?;
        }

        // generator phase
        let (z_hat, q, x_hat) = self.reconstruct(x)?;
        let vq = vq_loss(x, &x_hat, &z_hat, &q.codebook_rows, VqLossWeights::new(w.beta)?)?;
        let mut g_total = ops::add(
            &ops::mul_scalar(&vq.reconstruction, w.lambda_rec)?,
            &vq.codebook,
        )?;
        g_total = ops::add(&g_total, &ops::mul_scalar(&vq.commitment, w.beta)?)?;
        let mut l_perc = 0.0f32;
        if w.lambda_perc > 0.0 {
            if let Some(fnet) = &self.feature_net {
                let p = fnet.distance(x, &x_hat)?;
                l_perc = p.item()?;
                g_total = ops::add(&g_total, &ops::mul_scalar(&p, w.lambda_perc)?)?;
            }
        }
        let mut l_gan_g = 0.0f32;
        if gan_active {
            let idx = slice_idx.expect("set when gan is active");
            let real_slice = ops::slice_depth(x, idx)?;
            let fake_slice = ops::slice_depth(&x_hat, idx)?;
            let g2 = gan_loss(
                &self.disc2.forward(&real_slice)?,
                &self.disc2.forward(&fake_slice)?,
                GanSide::Generator,
            )?;
            let g3 = gan_loss(
                &self.disc3.forward(x)?,
                &self.disc3.forward(&x_hat)?,
                GanSide::Generator,
            )?;
            let g_gan = ops::add(&g2, &g3)?;
            l_gan_g = g_gan.item()?;
            g_total = ops::add(&g_total, &ops::mul_scalar(&g_gan, w.lambda_gan)?)?;
        }

        let losses = StepLosses {
            step: self.step,
            l_rec: vq.reconstruction.item()?,
            l_codebook: vq.codebook.item()?,
            l_commit: vq.commitment.item()?,
            l_perc,
            l_gan_g,
            l_gan_d2,
            l_gan_d3,
            total: g_total.item()?,
        };
        if !losses.total.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite generator loss at step {}: rec {}, codebook {}, commit {}, perc {}, gan_g {}",
                self.step, losses.l_rec, losses.l_codebook, losses.l_commit, losses.l_perc, losses.l_gan_g
            )));
        }

        let objective = if self.accum_steps > 1 {
            ops::mul_scalar(&g_total, 1.0 / self.accum_steps as f32)?
        } else {
            g_total
        };
        backward(&objective)?;
        self.micro += 1;
        if self.micro % self.accum_steps == 0 {
            self.opt_g.step()?;
        }
        // the generator backward pushed gradients into the discriminators;
        // they must not leak into the next discriminator update
        for (_, t) in self.discriminator_parameters() {
            t.zero_grad();
        }
        self.step += 1;
        Ok(losses)
    }
}

pub struct Stage1RunResult {
    pub log: Vec<StepLosses>,
    /// Value snapshot of the model parameters at the best step (or the
    /// initialization when no steps ran).
    pub best_params: NamedParams,
    pub best_step: Option<usize>,
}

fn snapshot(params: &NamedParams) -> NamedParams {
    params
        .iter()
        .map(|(n, t)| {
            (
                n.clone(),
                Tensor::from_vec(t.data(), &t.shape()).expect("same shape"),
            )
        })
        .collect()
}

/// Run the stage-1 loop over the volumes in order, cycling; retains the
/// checkpoint with the lowest generator objective, preferring steps after
/// the adversarial phase began when any ran.
pub fn train_stage1(
    trainer: &mut Stage1Trainer,
    volumes: &[Tensor],
    steps: usize,
) -> Result<Stage1RunResult> {
    if volumes.is_empty() && steps > 0 {
        return Err(Error::Precondition("stage-1 training needs at least one volume".into()));
    }
    let mut log = Vec::with_capacity(steps);
    let mut best: Option<(bool, f32, usize, NamedParams)> = None;
    for i in 0..steps {
        let x = &volumes[i % volumes.len()];
        let losses = trainer.train_step(x)?;
        let gan_phase = trainer.weights.lambda_gan > 0.0 && losses.step >= trainer.weights.gan_start_step;
        let better = match &best {
            None => true,
            Some((best_gan, best_total, _, _)) => {
                (gan_phase, std::cmp::Reverse(losses.total)) > (*best_gan, std::cmp::Reverse(*best_total))
            }
        };
        if better {
            best = Some((gan_phase, losses.total, losses.step, snapshot(&trainer.model.named_parameters())));
        }
        log.push(losses);
    }
    let (best_params, best_step) = match best {
        Some((_, _, step, params)) => (params, Some(step)),
        None => (snapshot(&trainer.model.named_parameters()), None),
    };
    Ok(Stage1RunResult {
        log,
        best_params,
        best_step,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::param_fingerprint;

    fn toy_section(steps: usize, gan_start: usize, lambda_gan: f32) -> Stage1Section {
        Stage1Section {
            m: 8,
            embed_dim: 4,
            compression_rate: 4,
            input_dim: 16,
            base_channels: 8,
            lambda_rec: 4.0,
            lambda_perc: 4.0,
            lambda_gan,
            beta: 0.25,
            gan_start_step: gan_start,
            lr: 3e-4,
            steps,
            accum_steps: 1,
            seed: 11,
        }
    }

    fn toy_volume(seed: usize) -> Tensor {
        let n = 16 * 16 * 16;
        let vals: Vec<f32> = (0..n).map(|i| (((i * 31 + seed * 17) % 101) as f32) / 101.0).collect();
        Tensor::from_vec(vals, &[1, 1, 16, 16, 16]).unwrap()
    }

    #[test]
    fn slice_pick_is_seeded_and_in_range() {
        let mut a = init_rng(9);
        let mut b = init_rng(9);
        for _ in 0..50 {
            let ia = pick_slice_index(16, &mut a);
            let ib = pick_slice_index(16, &mut b);
            assert_eq!(ia, ib);
            assert!(ia < 16);
        }
    }

    #[test]
    fn slice_pick_distribution_is_roughly_uniform() {
        let mut rng = init_rng(13);
        let d = 16usize;
        let mut counts = vec![0usize; d];
        let draws = 10_000;
        for _ in 0..draws {
            counts[pick_slice_index(d, &mut rng)] += 1;
        }
        let expected = draws as f64 / d as f64;
        for (i, &c) in counts.iter().enumerate() {
            let ratio = c as f64 / expected;
            assert!((0.2..=5.0).contains(&ratio), "slice {i} ratio {ratio}");
        }
    }

    #[test]
    fn warmup_keeps_discriminators_bit_identical() {
        let mut trainer = Stage1Trainer::from_section(&toy_section(4, 1000, 1.0)).unwrap();
        let before = param_fingerprint(&trainer.discriminator_parameters());
        let x = toy_volume(0);
        for _ in 0..3 {
            let losses = trainer.train_step(&x).unwrap();
            assert_eq!(losses.l_gan_g, 0.0);
            assert_eq!(losses.l_gan_d2, 0.0);
        }
        assert_eq!(before, param_fingerprint(&trainer.discriminator_parameters()));
    }

    #[test]
    fn zero_lambda_gan_never_touches_discriminators() {
        let mut trainer = Stage1Trainer::from_section(&toy_section(4, 0, 0.0)).unwrap();
        let before = param_fingerprint(&trainer.discriminator_parameters());
        let x = toy_volume(1);
        for _ in 0..3 {
            trainer.train_step(&x).unwrap();
        }
        assert_eq!(before, param_fingerprint(&trainer.discriminator_parameters()));
    }

    #[test]
    fn gan_phase_updates_are_isolated() {
        // with the discriminator learning rate forced to zero, a full step
        // (including the generator backward through the discriminators)
        // must leave every discriminator parameter bit-identical
        let mut trainer = Stage1Trainer::from_section(&toy_section(4, 0, 1.0)).unwrap();
        trainer.opt_d.learning_rate = 0.0;
        let d_before = param_fingerprint(&trainer.discriminator_parameters());
        let g_before = param_fingerprint(&trainer.model.named_parameters());
        let losses = trainer.train_step(&toy_volume(2)).unwrap();
        assert!(losses.l_gan_g != 0.0);
        assert_eq!(d_before, param_fingerprint(&trainer.discriminator_parameters()));
        assert_ne!(g_before, param_fingerprint(&trainer.model.named_parameters()));

        // and vice versa: zero generator rate, one step moves only the
        // discriminators
        let mut trainer = Stage1Trainer::from_section(&toy_section(4, 0, 1.0)).unwrap();
        trainer.opt_g.learning_rate = 0.0;
        let d_before = param_fingerprint(&trainer.discriminator_parameters());
        let g_before = param_fingerprint(&trainer.model.named_parameters());
        trainer.train_step(&toy_volume(2)).unwrap();
        assert_ne!(d_before, param_fingerprint(&trainer.discriminator_parameters()));
        assert_eq!(g_before, param_fingerprint(&trainer.model.named_parameters()));
    }

    #[test]
    fn losses_stay_finite_through_gan_phase() {
        let mut trainer = Stage1Trainer::from_section(&toy_section(8, 2, 1.0)).unwrap();
        let vols = [toy_volume(0), toy_volume(1)];
        for i in 0..8 {
            let l = trainer.train_step(&vols[i % 2]).unwrap();
            for v in [l.l_rec, l.l_codebook, l.l_commit, l.l_perc, l.l_gan_g, l.l_gan_d2, l.l_gan_d3, l.total] {
                assert!(v.is_finite());
            }
        }
        assert_eq!(trainer.step_count(), 8);
    }

    #[test]
    fn zero_steps_returns_initialization() {
        let mut trainer = Stage1Trainer::from_section(&toy_section(0, 0, 1.0)).unwrap();
        let init_fp = param_fingerprint(&trainer.model.named_parameters());
        let result = train_stage1(&mut trainer, &[toy_volume(0)], 0).unwrap();
        assert!(result.log.is_empty());
        assert_eq!(result.best_step, None);
        assert_eq!(init_fp, param_fingerprint(&result.best_params));
    }

    #[test]
    fn log_has_one_row_per_step() {
        let mut trainer = Stage1Trainer::from_section(&toy_section(5, 1000, 1.0)).unwrap();
        let result = train_stage1(&mut trainer, &[toy_volume(0), toy_volume(1)], 5).unwrap();
        assert_eq!(result.log.len(), 5);
        assert!(result.best_step.is_some());
        let row = result.log[0].csv_row();
        assert_eq!(row.split(',').count(), LOG_HEADER.split(',').count());
    }

    #[test]
    fn gradient_accumulation_defers_generator_updates() {
        let section = Stage1Section {
            accum_steps: 3,
            ..toy_section(6, 1000, 0.0)
        };
        let mut trainer = Stage1Trainer::from_section(&section).unwrap();
        let g0 = param_fingerprint(&trainer.model.named_parameters());
        trainer.train_step(&toy_volume(0)).unwrap();
        trainer.train_step(&toy_volume(1)).unwrap();
        // two micro-steps: no update yet
        assert_eq!(g0, param_fingerprint(&trainer.model.named_parameters()));
        trainer.train_step(&toy_volume(0)).unwrap();
        assert_ne!(g0, param_fingerprint(&trainer.model.named_parameters()));
    }
}
