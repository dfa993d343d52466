//! Deterministic synthetic 4D cohort: ellipsoidal "lung" ROIs with a
//! textured background and a growing bright lesion whose radius follows
//! each subject's growth rate, plus survival labels coupled to that rate.
//! Everything derives from the configured seed; the same seed reproduces
//! the cohort bit for bit.

use std::path::{Path, PathBuf};

use rand::distributions::{Distribution, Uniform};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::io::{Covariates, Manifest, ScanEntry, SubjectEntry, SurvivalEntry, Volume};
use crate::{Error, Result};

/// Voxel intensity separating lesion from background texture.
pub const LESION_THRESHOLD: f32 = 0.5;

const SURVIVAL_SCALE_YEARS: f64 = 6.0;
const SURVIVAL_COUPLING: f64 = 2.5;
const CENSOR_HORIZON_YEARS: f64 = 8.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GrowthMode {
    /// Lesion radius grows linearly in time (extrapolation is decidable).
    Linear,
    /// Logistic radius, saturating toward a cap.
    Logistic,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomConfig {
    pub n_subjects: usize,
    /// Cubic volume edge length.
    pub volume_dim: usize,
    /// Inclusive range for the number of observations per subject.
    pub times_per_subject: [usize; 2],
    /// Uniform jitter applied to the nominal yearly observation grid.
    pub time_jitter: f64,
    /// Lesion radius growth in voxels per year, sampled per subject.
    pub growth_rate_range: [f64; 2],
    /// Additive Gaussian noise per scan.
    pub noise_sigma: f32,
    pub growth_mode: GrowthMode,
    pub seed: u64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        PhantomConfig {
            n_subjects: 10,
            volume_dim: 32,
            times_per_subject: [3, 4],
            time_jitter: 0.15,
            growth_rate_range: [0.4, 1.3],
            noise_sigma: 0.01,
            growth_mode: GrowthMode::Linear,
            seed: 42,
        }
    }
}

pub struct PhantomSubject {
    pub id: String,
    pub growth_rate: f64,
    pub times: Vec<f64>,
    /// One volume per time, ROI mask embedded.
    pub scans: Vec<Volume>,
    pub duration_years: f64,
    pub event: bool,
    pub covariates: Covariates,
}

// ---------------------------------------------------------------------------
// Hash-lattice value noise
// ---------------------------------------------------------------------------

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E3779B97F4A7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D049BB133111EB);
    x ^ (x >> 31)
}

/// Lattice value in [-1, 1] for integer coordinates.
fn lattice(seed: u64, ix: i64, iy: i64, iz: i64) -> f64 {
    let h = splitmix64(
        seed ^ (ix as u64).wrapping_mul(0x8DA6B343)
            ^ (iy as u64).wrapping_mul(0xD8163841)
            ^ (iz as u64).wrapping_mul(0xCB1AB31F),
    );
    (h >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
}

fn smoothstep(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// Trilinearly interpolated value noise at `p` (lattice units).
fn value_noise(seed: u64, p: [f64; 3]) -> f64 {
    let base = [p[0].floor(), p[1].floor(), p[2].floor()];
    let frac = [
        smoothstep(p[0] - base[0]),
        smoothstep(p[1] - base[1]),
        smoothstep(p[2] - base[2]),
    ];
    let (ix, iy, iz) = (base[0] as i64, base[1] as i64, base[2] as i64);
    let mut acc = 0.0;
    for dz in 0..2i64 {
        for dy in 0..2i64 {
            for dx in 0..2i64 {
                let w = (if dz == 1 { frac[0] } else { 1.0 - frac[0] })
                    * (if dy == 1 { frac[1] } else { 1.0 - frac[1] })
                    * (if dx == 1 { frac[2] } else { 1.0 - frac[2] });
                acc += w * lattice(seed, ix + dz, iy + dy, iz + dx);
            }
        }
    }
    acc
}

// ---------------------------------------------------------------------------
// Geometry
// ---------------------------------------------------------------------------

const LUNG_CENTERS: [[f64; 3]; 2] = [[0.5, 0.5, 0.30], [0.5, 0.5, 0.70]];
const LUNG_RADII: [f64; 3] = [0.40, 0.38, 0.22];

fn inside_lung(p: [f64; 3]) -> bool {
    LUNG_CENTERS.iter().any(|c| {
        let mut s = 0.0;
        for k in 0..3 {
            let d = (p[k] - c[k]) / LUNG_RADII[k];
            s += d * d;
        }
        s <= 1.0
    })
}

/// Parameters that stay fixed across a subject's scans.
pub(crate) struct SubjectAnatomy {
    pub texture_seed: u64,
    pub reticulation_seed: u64,
    pub lesion_center: [f64; 3], // normalized coordinates
    pub initial_radius: f64,     // voxels
    pub growth_rate: f64,        // voxels per year
    pub growth_mode: GrowthMode,
    pub volume_dim: usize,
}

impl SubjectAnatomy {
    fn lesion_radius(&self, t: f64) -> f64 {
        match self.growth_mode {
            GrowthMode::Linear => self.initial_radius + self.growth_rate * t,
            GrowthMode::Logistic => {
                let r0 = self.initial_radius;
                let cap = r0 + 5.0;
                // rate chosen so the initial slope equals the linear rate
                let k = self.growth_rate / (r0 * (1.0 - r0 / cap));
                cap / (1.0 + ((cap - r0) / r0) * (-k * t).exp())
            }
        }
    }
}

/// Render one noiseless scan at time `t`; the mask is the lung ROI.
pub(crate) fn render_scan(anatomy: &SubjectAnatomy, t: f64) -> Volume {
    let n = anatomy.volume_dim;
    let dims = [n, n, n];
    let total = n * n * n;
    let mut voxels = Vec::with_capacity(total);
    let mut mask = Vec::with_capacity(total);
    let radius = anatomy.lesion_radius(t);
    let mid_cells = 6.0;
    let fine_cells = 14.0;
    let retic_cells = 11.0;
    for z in 0..n {
        for y in 0..n {
            for x in 0..n {
                let p = [
                    (z as f64 + 0.5) / n as f64,
                    (y as f64 + 0.5) / n as f64,
                    (x as f64 + 0.5) / n as f64,
                ];
                let in_roi = inside_lung(p);
                mask.push(in_roi);
                if !in_roi {
                    voxels.push(0.03);
                    continue;
                }
                let mid = value_noise(anatomy.texture_seed, [p[0] * mid_cells, p[1] * mid_cells, p[2] * mid_cells]);
                let fine = value_noise(
                    anatomy.texture_seed ^ 0x517C,
                    [p[0] * fine_cells, p[1] * fine_cells, p[2] * fine_cells],
                );
                let base = 0.16 + 0.10 * mid + 0.04 * fine;

                // distance to lesion center in voxels
                let mut d2 = 0.0;
                for k in 0..3 {
                    let d = (p[k] - anatomy.lesion_center[k]) * n as f64;
                    d2 += d * d;
                }
                let dist = d2.sqrt();
                let edge = 1.0 / (1.0 + ((dist - radius) / 0.7).exp());
                let retic = value_noise(
                    anatomy.reticulation_seed,
                    [p[0] * retic_cells, p[1] * retic_cells, p[2] * retic_cells],
                );
                let lesion = 0.65 + 0.20 * (0.5 + 0.5 * retic);
                let v = base * (1.0 - edge) + lesion * edge;
                voxels.push(v.clamp(0.0, 1.0) as f32);
            }
        }
    }
    Volume::new(dims, voxels, Some(mask)).expect("consistent by construction")
}

// ---------------------------------------------------------------------------
// Cohort generation
// ---------------------------------------------------------------------------

fn validate(config: &PhantomConfig) -> Result<()> {
    if config.n_subjects == 0 {
        return Err(Error::Precondition("phantom: n_subjects must be at least 1".into()));
    }
    if config.volume_dim < 8 {
        return Err(Error::Precondition("phantom: volume_dim must be at least 8".into()));
    }
    if config.times_per_subject[0] < 2 || config.times_per_subject[1] < config.times_per_subject[0] {
        return Err(Error::Precondition(
            "phantom: times_per_subject range must be ascending with at least 2".into(),
        ));
    }
    if !(config.time_jitter >= 0.0 && config.time_jitter < 0.5) {
        return Err(Error::Precondition("phantom: time_jitter must be in [0, 0.5)".into()));
    }
    if !(config.growth_rate_range[0] > 0.0 && config.growth_rate_range[1] >= config.growth_rate_range[0]) {
        return Err(Error::Precondition(
            "phantom: growth_rate_range must be positive and ascending".into(),
        ));
    }
    if !(config.noise_sigma >= 0.0) {
        return Err(Error::Precondition("phantom: noise_sigma must be non-negative".into()));
    }
    Ok(())
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller from two uniforms
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

pub fn generate_cohort(config: &PhantomConfig) -> Result<Vec<PhantomSubject>> {
    validate(config)?;
    let mut subjects = Vec::with_capacity(config.n_subjects);
    for si in 0..config.n_subjects {
        // per-subject derived seed keeps subjects independent of cohort size
        let subject_seed = config.seed ^ splitmix64(si as u64 + 1);
        let mut rng = ChaCha8Rng::seed_from_u64(subject_seed);

        let lung = rng.gen_range(0..2usize);
        let mut lesion_center = LUNG_CENTERS[lung];
        for c in &mut lesion_center {
            *c += rng.gen_range(-0.03..0.03);
        }
        let growth_rate = rng.gen_range(config.growth_rate_range[0]..=config.growth_rate_range[1]);

        let n_times = rng.gen_range(config.times_per_subject[0]..=config.times_per_subject[1]);
        let jitter = Uniform::new_inclusive(-config.time_jitter, config.time_jitter);
        let mut times = vec![0.0f64];
        for j in 1..n_times {
            times.push(j as f64 + jitter.sample(&mut rng));
        }

        let covariates = Covariates {
            age: (rng.gen_range(55.0..80.0f64) * 10.0).round() / 10.0,
            sex: rng.gen_range(0..2) as f64,
            smoking: (rng.gen_range(0.0..1.0f64) < 0.6) as u8 as f64,
        };

        // exponential event time scaled down by the growth rate
        let span = config.growth_rate_range[1] - config.growth_rate_range[0];
        let normalized_growth = if span > 0.0 {
            (growth_rate - config.growth_rate_range[0]) / span
        } else {
            0.5
        };
        let exp_sample: f64 = -rng.gen_range(f64::EPSILON..1.0f64).ln();
        let raw = exp_sample * SURVIVAL_SCALE_YEARS * (-SURVIVAL_COUPLING * normalized_growth).exp();
        let (duration_years, event) = if raw > CENSOR_HORIZON_YEARS {
            (CENSOR_HORIZON_YEARS, false)
        } else {
            (raw.max(0.05), true)
        };

        let anatomy = SubjectAnatomy {
            texture_seed: splitmix64(subject_seed ^ 0xA5A5),
            reticulation_seed: splitmix64(subject_seed ^ 0x3C3C),
            lesion_center,
            initial_radius: 2.0,
            growth_rate,
            growth_mode: config.growth_mode,
            volume_dim: config.volume_dim,
        };

        let mut scans = Vec::with_capacity(times.len());
        for (ti, &t) in times.iter().enumerate() {
            let mut vol = render_scan(&anatomy, t);
            if config.noise_sigma > 0.0 {
                let mut noise_rng =
                    ChaCha8Rng::seed_from_u64(splitmix64(subject_seed ^ (ti as u64 + 0x77)));
                for v in &mut vol.voxels {
                    *v = (*v + config.noise_sigma * gaussian(&mut noise_rng) as f32).clamp(0.0, 1.0);
                }
            }
            scans.push(vol);
        }

        subjects.push(PhantomSubject {
            id: format!("s{si:03}"),
            growth_rate,
            times,
            scans,
            duration_years,
            event,
            covariates,
        });
    }
    Ok(subjects)
}

/// Count of in-ROI voxels above the threshold.
pub fn lesion_volume(voxels: &[f32], roi_mask: &[bool], threshold: f32) -> usize {
    voxels
        .iter()
        .zip(roi_mask)
        .filter(|(v, m)| **m && **v > threshold)
        .count()
}

/// Write every scan (mask embedded) plus the manifest; returns the
/// manifest path.
pub fn write_cohort(subjects: &[PhantomSubject], out_dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut entries = Vec::with_capacity(subjects.len());
    for s in subjects {
        let mut scans = Vec::with_capacity(s.scans.len());
        for (t, vol) in s.times.iter().zip(&s.scans) {
            let name = format!("{}_t{t:.2}.vol", s.id);
            vol.write(&out_dir.join(&name))?;
            scans.push(ScanEntry {
                time_years: *t,
                volume_path: name.clone(),
                mask_path: name,
            });
        }
        entries.push(SubjectEntry {
            id: s.id.clone(),
            scans,
            survival: SurvivalEntry {
                duration_years: s.duration_years,
                event: s.event,
            },
            covariates: s.covariates.clone(),
        });
    }
    let manifest = Manifest { subjects: entries };
    let path = out_dir.join("manifest.json");
    manifest.save(&path)?;
    Ok(path)
}
