//! Multi-subject synthetic data with a shared ("commonality") and a
//! subject-specific component.
//!
//! A stimulus is a multi-hot label vector `y` plus a small latent `u`. Its
//! signature `A·y + B·u` is shared by all subjects. Subject `s` maps the
//! signature to `V_s` voxels through
//! `M_s = sqrt(1-ρ)·M_common + sqrt(ρ)·M_specific(s)`, adds its own offset
//! pattern and Gaussian noise, and the voxels are placed on the grid by the
//! subject's projection map. The target embedding is a fixed linear readout
//! of `y` plus a scaled readout of `u`.

use serde::{Deserialize, Serialize};

use crate::error::{CobraError, Result};
use crate::numerics::Rng;

use super::projection::{roi_cell_order, ProjectionMap};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    /// Subjects are numbered `1..=n_subjects`.
    pub n_subjects: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub n_classes: usize,
    /// Independent activation probability of each class.
    pub class_freq: Vec<f64>,
    pub voxel_min: usize,
    pub voxel_max: usize,
    /// Pseudo-ROI tile size and the empty border left inside each tile.
    pub roi_block: usize,
    pub roi_gap: usize,
    pub signature_dim: usize,
    /// Per-stimulus latent that is not determined by the labels.
    pub latent_dim: usize,
    /// Weight ρ of the subject-specific mixing component.
    pub specific_ratio: f64,
    pub subject_offset_scale: f64,
    pub noise_scale: f64,
    pub clip_len: usize,
    pub clip_dim: usize,
    pub clip_unique_scale: f64,
    pub train_per_subject: usize,
    /// Stimuli shown to every subject and used only for testing.
    pub test_stimuli: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            n_subjects: 8,
            height: 32,
            width: 32,
            channels: 1,
            n_classes: 10,
            class_freq: vec![0.35, 0.3, 0.3, 0.25, 0.25, 0.2, 0.2, 0.2, 0.15, 0.15],
            voxel_min: 560,
            voxel_max: 784,
            roi_block: 8,
            roi_gap: 1,
            signature_dim: 16,
            latent_dim: 4,
            specific_ratio: 0.9,
            subject_offset_scale: 0.5,
            noise_scale: 0.5,
            clip_len: 8,
            clip_dim: 32,
            clip_unique_scale: 0.2,
            train_per_subject: 96,
            test_stimuli: 32,
        }
    }
}

impl GeneratorConfig {
    pub fn roi_capacity(&self) -> usize {
        roi_cell_order(self.height, self.width, self.roi_block, self.roi_gap).len()
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(CobraError::Config(m));
        if self.n_subjects == 0 {
            return err("data.n_subjects must be at least 1".into());
        }
        if self.n_classes < 2 {
            return err("data.n_classes must be at least 2".into());
        }
        if self.class_freq.len() != self.n_classes {
            return err(format!(
                "data.class_freq has {} entries for {} classes",
                self.class_freq.len(),
                self.n_classes
            ));
        }
        if self.class_freq.iter().any(|p| !(*p > 0.0 && *p < 1.0)) {
            return err("data.class_freq entries must lie in (0, 1)".into());
        }
        if self.channels != 1 {
            return err("data.channels must be 1 for the voxel projection".into());
        }
        if self.voxel_min < 2 || self.voxel_min > self.voxel_max {
            return err(format!(
                "voxel range {}..={} is empty or too small",
                self.voxel_min, self.voxel_max
            ));
        }
        if self.voxel_max > self.roi_capacity() {
            return err(format!(
                "data.voxel_max {} exceeds the {} pseudo-ROI cells",
                self.voxel_max,
                self.roi_capacity()
            ));
        }
        if self.signature_dim == 0 || self.signature_dim > self.voxel_min {
            return err("data.signature_dim must be in 1..=voxel_min".into());
        }
        if !(0.0..=1.0).contains(&self.specific_ratio) {
            return err("data.specific_ratio must lie in [0, 1]".into());
        }
        for (name, v) in [
            ("subject_offset_scale", self.subject_offset_scale),
            ("noise_scale", self.noise_scale),
            ("clip_unique_scale", self.clip_unique_scale),
        ] {
            if !(v >= 0.0) {
                return err(format!("data.{name} must be non-negative"));
            }
        }
        if self.clip_len == 0 || self.clip_dim == 0 {
            return err("data.clip_len and data.clip_dim must be positive".into());
        }
        if self.train_per_subject == 0 || self.test_stimuli == 0 {
            return err("data.train_per_subject and data.test_stimuli must be positive".into());
        }
        Ok(())
    }

    /// Probability that class `i` is active, including the rule that an
    /// all-negative draw activates one uniformly chosen class.
    pub fn expected_marginals(&self) -> Vec<f64> {
        let none: f64 = self.class_freq.iter().map(|p| 1.0 - p).product();
        self.class_freq
            .iter()
            .map(|p| p + none / self.n_classes as f64)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectProfile {
    pub subject_id: u32,
    pub voxel_count: usize,
    pub projection: ProjectionMap,
    /// `voxel_count × signature_dim`, row-major.
    pub mixing: Vec<f32>,
    /// Per-voxel baseline specific to the subject.
    pub offset: Vec<f32>,
    pub noise_scale: f32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stimulus {
    pub id: u32,
    pub labels: Vec<u8>,
    pub latent: Vec<f64>,
    /// `clip_len × clip_dim`, row-major.
    pub target: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub subject: u32,
    pub stimulus: u32,
    pub split: Split,
    /// `H × W × C` grid.
    pub grid: Vec<f32>,
    pub labels: Vec<u8>,
    pub target: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub n_classes: usize,
    pub clip_len: usize,
    pub clip_dim: usize,
    pub signature_dim: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub subjects: Vec<SubjectProfile>,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn subject_ids(&self) -> Vec<u32> {
        self.subjects.iter().map(|s| s.subject_id).collect()
    }

    pub fn profile(&self, subject: u32) -> Option<&SubjectProfile> {
        self.subjects.iter().find(|s| s.subject_id == subject)
    }

    pub fn split(&self, subject: u32, split: Split) -> Vec<&Sample> {
        self.samples
            .iter()
            .filter(|s| s.subject == subject && s.split == split)
            .collect()
    }

    pub fn train(&self, subject: u32) -> Vec<&Sample> {
        self.split(subject, Split::Train)
    }

    pub fn test(&self, subject: u32) -> Vec<&Sample> {
        self.split(subject, Split::Test)
    }
}

// Stream labels for independent generator draws.
const SHARED: u64 = 1;
const SUBJECT: u64 = 2;
const STIMULUS: u64 = 3;
const NOISE: u64 = 4;

struct SharedWeights {
    /// `signature_dim × n_classes`
    label_sig: Vec<f64>,
    /// `signature_dim × latent_dim`
    latent_sig: Vec<f64>,
    /// `voxel_max × signature_dim`
    common_mixing: Vec<f64>,
    /// `(clip_len·clip_dim) × n_classes`
    label_clip: Vec<f64>,
    /// `(clip_len·clip_dim) × latent_dim`
    latent_clip: Vec<f64>,
}

fn gaussian(rng: &mut Rng, n: usize, std: f64) -> Vec<f64> {
    (0..n).map(|_| rng.normal() * std).collect()
}

impl SharedWeights {
    fn draw(cfg: &GeneratorConfig, seed: u64) -> Self {
        let mut rng = Rng::stream(seed, &[SHARED]);
        let sd = cfg.signature_dim;
        let out = cfg.clip_len * cfg.clip_dim;
        SharedWeights {
            label_sig: gaussian(&mut rng, sd * cfg.n_classes, 1.0),
            latent_sig: gaussian(&mut rng, sd * cfg.latent_dim, 0.5),
            common_mixing: gaussian(&mut rng, cfg.voxel_max * sd, 1.0 / (sd as f64).sqrt()),
            label_clip: gaussian(&mut rng, out * cfg.n_classes, 1.0),
            latent_clip: gaussian(&mut rng, out * cfg.latent_dim, 1.0),
        }
    }

    fn signature(&self, cfg: &GeneratorConfig, labels: &[u8], latent: &[f64]) -> Vec<f64> {
        (0..cfg.signature_dim)
            .map(|i| {
                let a: f64 = labels
                    .iter()
                    .enumerate()
                    .map(|(j, &y)| self.label_sig[i * cfg.n_classes + j] * y as f64)
                    .sum();
                let b: f64 = latent
                    .iter()
                    .enumerate()
                    .map(|(j, &u)| self.latent_sig[i * cfg.latent_dim + j] * u)
                    .sum();
                a + b
            })
            .collect()
    }

    fn target(&self, cfg: &GeneratorConfig, labels: &[u8], latent: &[f64]) -> Vec<f32> {
        (0..cfg.clip_len * cfg.clip_dim)
            .map(|i| {
                let a: f64 = labels
                    .iter()
                    .enumerate()
                    .map(|(j, &y)| self.label_clip[i * cfg.n_classes + j] * y as f64)
                    .sum();
                let b: f64 = latent
                    .iter()
                    .enumerate()
                    .map(|(j, &u)| self.latent_clip[i * cfg.latent_dim + j] * u)
                    .sum();
                (a + cfg.clip_unique_scale * b) as f32
            })
            .collect()
    }
}

/// Independent Bernoulli draw per class; an empty draw activates one class
/// chosen uniformly.
pub fn draw_labels(cfg: &GeneratorConfig, rng: &mut Rng) -> Vec<u8> {
    let mut labels: Vec<u8> = cfg
        .class_freq
        .iter()
        .map(|&p| u8::from(rng.bernoulli(p)))
        .collect();
    if labels.iter().all(|&y| y == 0) {
        labels[rng.below(cfg.n_classes)] = 1;
    }
    labels
}

fn draw_stimulus(cfg: &GeneratorConfig, shared: &SharedWeights, seed: u64, id: u32) -> Stimulus {
    let mut rng = Rng::stream(seed, &[STIMULUS, id as u64]);
    let labels = draw_labels(cfg, &mut rng);
    let latent = gaussian(&mut rng, cfg.latent_dim, 1.0);
    let target = shared.target(cfg, &labels, &latent);
    Stimulus {
        id,
        labels,
        latent,
        target,
    }
}

fn draw_profile(
    cfg: &GeneratorConfig,
    shared: &SharedWeights,
    seed: u64,
    subject: u32,
) -> Result<SubjectProfile> {
    let mut rng = Rng::stream(seed, &[SUBJECT, subject as u64]);
    let voxels = rng.range_inclusive(cfg.voxel_min, cfg.voxel_max);
    let projection =
        ProjectionMap::pseudo_roi(cfg.height, cfg.width, cfg.roi_block, cfg.roi_gap, voxels)?;
    let sd = cfg.signature_dim;
    let rho = cfg.specific_ratio;
    let spec_std = 1.0 / (sd as f64).sqrt();
    let mixing = (0..voxels * sd)
        .map(|i| {
            let own = rng.normal() * spec_std;
            ((1.0 - rho).sqrt() * shared.common_mixing[i] + rho.sqrt() * own) as f32
        })
        .collect();
    let offset = (0..voxels)
        .map(|_| (rng.normal() * cfg.subject_offset_scale) as f32)
        .collect();
    Ok(SubjectProfile {
        subject_id: subject,
        voxel_count: voxels,
        projection,
        mixing,
        offset,
        noise_scale: cfg.noise_scale as f32,
    })
}

/// Noise-free voxel response of `profile` to a signature.
pub fn voxel_response(profile: &SubjectProfile, signature: &[f64]) -> Vec<f64> {
    let sd = signature.len();
    (0..profile.voxel_count)
        .map(|v| {
            let row = &profile.mixing[v * sd..(v + 1) * sd];
            row.iter()
                .zip(signature)
                .map(|(m, s)| *m as f64 * s)
                .sum::<f64>()
                + profile.offset[v] as f64
        })
        .collect()
}

fn record(
    profile: &SubjectProfile,
    shared: &SharedWeights,
    cfg: &GeneratorConfig,
    stim: &Stimulus,
    split: Split,
    seed: u64,
) -> Result<Sample> {
    let sig = shared.signature(cfg, &stim.labels, &stim.latent);
    let mut rng = Rng::stream(seed, &[NOISE, profile.subject_id as u64, stim.id as u64]);
    let voxels: Vec<f32> = voxel_response(profile, &sig)
        .into_iter()
        .map(|v| (v + rng.normal() * profile.noise_scale as f64) as f32)
        .collect();
    Ok(Sample {
        subject: profile.subject_id,
        stimulus: stim.id,
        split,
        grid: profile.projection.project(&voxels)?,
        labels: stim.labels.clone(),
        target: stim.target.clone(),
    })
}

/// Test stimuli `0..test_stimuli` are shown to every subject; each subject
/// then gets `train_per_subject` stimuli of its own with ids that no other
/// subject or the test split uses.
pub fn generate(cfg: &GeneratorConfig, seed: u64) -> Result<Dataset> {
    cfg.validate()?;
    let shared = SharedWeights::draw(cfg, seed);
    let test: Vec<Stimulus> = (0..cfg.test_stimuli as u32)
        .map(|id| draw_stimulus(cfg, &shared, seed, id))
        .collect();
    let mut subjects = Vec::with_capacity(cfg.n_subjects);
    let mut samples = Vec::new();
    let mut next_id = cfg.test_stimuli as u32;
    for s in 1..=cfg.n_subjects as u32 {
        let profile = draw_profile(cfg, &shared, seed, s)?;
        for _ in 0..cfg.train_per_subject {
            let stim = draw_stimulus(cfg, &shared, seed, next_id);
            next_id += 1;
            samples.push(record(&profile, &shared, cfg, &stim, Split::Train, seed)?);
        }
        for stim in &test {
            samples.push(record(&profile, &shared, cfg, stim, Split::Test, seed)?);
        }
        subjects.push(profile);
    }
    Ok(Dataset {
        meta: DatasetMeta {
            seed,
            height: cfg.height,
            width: cfg.width,
            channels: cfg.channels,
            n_classes: cfg.n_classes,
            clip_len: cfg.clip_len,
            clip_dim: cfg.clip_dim,
            signature_dim: cfg.signature_dim,
        },
        subjects,
        samples,
    })
}

/// Shared signature of the stimulus behind a noise-free grid, recovered by
/// least squares on the subject's mixing map.
pub fn decode_signature(
    profile: &SubjectProfile,
    signature_dim: usize,
    grid: &[f32],
) -> Result<Vec<f64>> {
    let voxels = profile.projection.unproject(grid)?;
    let v = profile.voxel_count;
    let m = nalgebra::DMatrix::from_fn(v, signature_dim, |r, c| {
        profile.mixing[r * signature_dim + c] as f64
    });
    let b = nalgebra::DVector::from_fn(v, |r, _| voxels[r] as f64 - profile.offset[r] as f64);
    let svd = m.svd(true, true);
    let x = svd
        .solve(&b, 1e-10)
        .map_err(|e| CobraError::NonFinite(format!("signature solve: {e}")))?;
    Ok(x.iter().copied().collect())
}

/// Test accuracy of a nearest-centroid subject classifier on raw grids.
/// Centroids are linear in the input, so this is a linear probe.
pub fn subject_probe_accuracy(data: &Dataset) -> f64 {
    let ids = data.subject_ids();
    let centroids: Vec<Vec<f64>> = ids
        .iter()
        .map(|&s| {
            let train = data.train(s);
            let n = train.len().max(1) as f64;
            let len = train.first().map_or(0, |x| x.grid.len());
            let mut c = vec![0.0; len];
            for x in &train {
                for (a, v) in c.iter_mut().zip(&x.grid) {
                    *a += *v as f64 / n;
                }
            }
            c
        })
        .collect();
    let mut correct = 0usize;
    let mut total = 0usize;
    for (k, &s) in ids.iter().enumerate() {
        for x in data.test(s) {
            let best = centroids
                .iter()
                .enumerate()
                .map(|(i, c)| {
                    let d: f64 = c
                        .iter()
                        .zip(&x.grid)
                        .map(|(a, b)| (a - *b as f64).powi(2))
                        .sum();
                    (i, d)
                })
                .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal))
                .map(|(i, _)| i);
            correct += usize::from(best == Some(k));
            total += 1;
        }
    }
    correct as f64 / total.max(1) as f64
}
