//! Run configuration: one JSON document with `stage1`, `stage2`,
//! `inference`, and `phantom` sections. Validation happens at load time
//! and fails fast with the offending key path.

use serde::{Deserialize, Serialize};

use crate::phantom::{GrowthMode, PhantomConfig};
use crate::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub stage1: Stage1Section,
    pub stage2: Stage2Section,
    pub inference: InferenceConfig,
    pub phantom: PhantomConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Stage1Section {
    /// Codebook vocabulary size.
    pub m: usize,
    pub embed_dim: usize,
    /// Spatial compression rate r (power of two).
    pub compression_rate: usize,
    /// Cubic input volume edge length.
    pub input_dim: usize,
    pub base_channels: usize,
    pub lambda_rec: f32,
    pub lambda_perc: f32,
    pub lambda_gan: f32,
    pub beta: f32,
    pub gan_start_step: usize,
    pub lr: f32,
    pub steps: usize,
    /// Generator gradients accumulate over this many steps per update.
    pub accum_steps: usize,
    pub seed: u64,
}

impl Default for Stage1Section {
    fn default() -> Self {
        Stage1Section {
            m: 64,
            embed_dim: 8,
            compression_rate: 4,
            input_dim: 32,
            base_channels: 16,
            lambda_rec: 4.0,
            lambda_perc: 4.0,
            lambda_gan: 1.0,
            beta: 0.25,
            gan_start_step: 500,
            lr: 3e-4,
            steps: 200,
            accum_steps: 1,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OdeMethod {
    Euler,
    Rk4,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeWeighting {
    Uniform,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage2Ablation {
    /// The full model: ConvGRU encoder plus embedding skip connections.
    None,
    /// Predict each latent directly from the hidden state, no skips.
    NoSkip,
    /// Evolve the hidden state with the ODE between observations while
    /// encoding backwards.
    OdeConvgru,
    /// Randomly drop non-baseline observations during training.
    MaskedInputs,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Stage2Section {
    pub hidden_channels: usize,
    /// 1 or 2 projector convolution layers.
    pub projector_depth: usize,
    pub solver: OdeMethod,
    /// Fixed integrator step in years.
    pub step_size: f64,
    pub lr: f32,
    pub weight_decay: f32,
    pub epochs: usize,
    pub time_weighting: TimeWeighting,
    pub ablation: Stage2Ablation,
    /// Drop probability for masked-inputs training.
    pub mask_ratio: f64,
    pub seed: u64,
}

impl Default for Stage2Section {
    fn default() -> Self {
        Stage2Section {
            hidden_channels: 16,
            projector_depth: 2,
            solver: OdeMethod::Rk4,
            step_size: 0.25,
            lr: 2e-4,
            weight_decay: 0.01,
            epochs: 100,
            time_weighting: TimeWeighting::Linear,
            ablation: Stage2Ablation::None,
            mask_ratio: 0.5,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InferenceConfig {
    pub interval_years: f64,
    pub total_duration_years: f64,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        InferenceConfig {
            interval_years: 0.5,
            total_duration_years: 5.5,
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            stage1: Stage1Section::default(),
            stage2: Stage2Section::default(),
            inference: InferenceConfig::default(),
            phantom: PhantomConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialization cannot fail")
    }

    pub fn validate(&self) -> Result<()> {
        let s1 = &self.stage1;
        if s1.m < 2 {
            return Err(Error::config("stage1.m", "vocabulary needs at least 2 entries"));
        }
        if s1.embed_dim == 0 {
            return Err(Error::config("stage1.embed_dim", "must be at least 1"));
        }
        if !s1.compression_rate.is_power_of_two() {
            return Err(Error::config("stage1.compression_rate", "must be a power of two"));
        }
        if s1.input_dim == 0 || s1.input_dim % s1.compression_rate != 0 {
            return Err(Error::config(
                "stage1.input_dim",
                format!("must be a positive multiple of compression_rate {}", s1.compression_rate),
            ));
        }
        if s1.base_channels == 0 {
            return Err(Error::config("stage1.base_channels", "must be at least 1"));
        }
        for (key, v) in [
            ("stage1.lambda_rec", s1.lambda_rec),
            ("stage1.lambda_perc", s1.lambda_perc),
            ("stage1.lambda_gan", s1.lambda_gan),
        ] {
            if !(v >= 0.0) {
                return Err(Error::config(key, "must be non-negative"));
            }
        }
        if !(s1.beta > 0.0) {
            return Err(Error::config("stage1.beta", "must be positive"));
        }
        if !(s1.lr > 0.0) {
            return Err(Error::config("stage1.lr", "must be positive"));
        }
        if s1.accum_steps == 0 {
            return Err(Error::config("stage1.accum_steps", "must be at least 1"));
        }

        let s2 = &self.stage2;
        if s2.hidden_channels == 0 {
            return Err(Error::config("stage2.hidden_channels", "must be at least 1"));
        }
        if !(1..=2).contains(&s2.projector_depth) {
            return Err(Error::config("stage2.projector_depth", "must be 1 or 2"));
        }
        if !(s2.step_size > 0.0) {
            return Err(Error::config("stage2.step_size", "must be positive"));
        }
        if !(s2.lr > 0.0) {
            return Err(Error::config("stage2.lr", "must be positive"));
        }
        if !(s2.weight_decay >= 0.0) {
            return Err(Error::config("stage2.weight_decay", "must be non-negative"));
        }
        if !(0.0..1.0).contains(&s2.mask_ratio) {
            return Err(Error::config("stage2.mask_ratio", "must be in [0, 1)"));
        }

        let inf = &self.inference;
        if !(inf.interval_years > 0.0) {
            return Err(Error::config("inference.interval_years", "must be positive"));
        }
        if !(inf.total_duration_years >= inf.interval_years) {
            return Err(Error::config(
                "inference.total_duration_years",
                "must be at least interval_years",
            ));
        }

        let ph = &self.phantom;
        if ph.n_subjects == 0 {
            return Err(Error::config("phantom.n_subjects", "must be at least 1"));
        }
        if ph.volume_dim == 0 || ph.volume_dim % s1.compression_rate != 0 {
            return Err(Error::config(
                "phantom.volume_dim",
                format!("must be a positive multiple of stage1.compression_rate {}", s1.compression_rate),
            ));
        }
        if ph.times_per_subject[0] < 2 || ph.times_per_subject[1] < ph.times_per_subject[0] {
            return Err(Error::config(
                "phantom.times_per_subject",
                "range must be ascending with at least 2 observations",
            ));
        }
        if !(ph.time_jitter >= 0.0 && ph.time_jitter < 0.5) {
            return Err(Error::config("phantom.time_jitter", "must be in [0, 0.5)"));
        }
        if !(ph.growth_rate_range[0] > 0.0 && ph.growth_rate_range[1] >= ph.growth_rate_range[0]) {
            return Err(Error::config(
                "phantom.growth_rate_range",
                "must be positive and ascending",
            ));
        }
        if !(ph.noise_sigma >= 0.0) {
            return Err(Error::config("phantom.noise_sigma", "must be non-negative"));
        }
        if let GrowthMode::Logistic = ph.growth_mode {
            // nothing extra; the variant only changes the radius curve
        }
        Ok(())
    }
}

/// Parse and validate a run configuration.
pub fn parse_run_config(bytes: &[u8]) -> Result<RunConfig> {
    let cfg: RunConfig =
        serde_json::from_slice(bytes).map_err(|e| Error::Format(format!("config JSON: {e}")))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_run_config(path: &std::path::Path) -> Result<RunConfig> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_run_config(&bytes).map_err(|e| match e {
        Error::Config { key, msg } => Error::Config {
            key: format!("{}: {key}", path.display()),
            msg,
        },
        other => Error::Format(format!("{}: {other}", path.display())),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_roundtrip() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        let parsed = parse_run_config(cfg.to_json().as_bytes()).unwrap();
        assert_eq!(parsed.stage1.m, 64);
        assert_eq!(parsed.stage2.solver, OdeMethod::Rk4);
    }

    #[test]
    fn partial_config_fills_defaults() {
        let cfg = parse_run_config(br#"{"stage1": {"m": 16}}"#).unwrap();
        assert_eq!(cfg.stage1.m, 16);
        assert_eq!(cfg.stage1.embed_dim, 8);
        assert_eq!(cfg.stage2.epochs, 100);
    }

    #[test]
    fn violation_reports_key_path() {
        let err = parse_run_config(br#"{"stage1": {"input_dim": 30}}"#).unwrap_err();
        assert!(err.to_string().contains("stage1.input_dim"), "{err}");

        let err = parse_run_config(br#"{"stage2": {"projector_depth": 3}}"#).unwrap_err();
        assert!(err.to_string().contains("stage2.projector_depth"), "{err}");

        let err = parse_run_config(br#"{"inference": {"interval_years": 0.0}}"#).unwrap_err();
        assert!(err.to_string().contains("inference.interval_years"), "{err}");
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(parse_run_config(br#"{"stage3": {}}"#).is_err());
    }

    #[test]
    fn paper_scale_values_are_expressible() {
        let json = r#"{
            "stage1": {"m": 256, "embed_dim": 16, "compression_rate": 4,
                        "input_dim": 96, "gan_start_step": 10000, "steps": 20000,
                        "accum_steps": 6}
        }"#;
        let cfg = parse_run_config(json.as_bytes()).unwrap();
        assert_eq!(cfg.stage1.m, 256);
        assert_eq!(cfg.stage1.embed_dim, 16);
        assert_eq!(cfg.stage1.steps, 20000);
    }
}
