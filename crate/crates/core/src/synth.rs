//! Seeded generators for samples, random matrices and three-phase training
//! trajectories.
//!
//! The trajectory generator plants a spectrum for every epoch and builds
//! `W = U·diag(√λ)·Vᵀ` from two fixed random orthonormal factors, so the ESD
//! of each matrix is the planted spectrum up to rounding:
//!
//! * Phase I: a power-law bulk whose exponent starts near 9.92 and wanders,
//!   with a volatile scale and two or three isolated outliers.
//! * Phase II: a fixed low body plus a stratified power-law tail whose
//!   exponent slides from 2.6 to 2.44 above a plateau near 0.1.
//! * Phase III: the same tail truncated above a shrinking multiple of a
//!   rising lower edge, with the exponent rebounding to 3.13.

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::calibration::sample_powerlaw;
use crate::error::{Error, Result};
use crate::ingest::{write_manifest, write_matrix, EntryKind, ManifestEntry, RunManifest};
use crate::rng::StreamRng;
use crate::spectra::{Spectrum, WeightMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SampleDistribution {
    PowerLaw {
        alpha: f64,
        x_min: f64,
    },
    /// Exponential with rate `lambda`, shifted to start at `x_min`.
    Exponential {
        lambda: f64,
        #[serde(default)]
        x_min: f64,
    },
    LogNormal {
        mu: f64,
        sigma: f64,
    },
}

impl SampleDistribution {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            SampleDistribution::PowerLaw { alpha, x_min } => {
                alpha > 1.0 && alpha.is_finite() && x_min > 0.0 && x_min.is_finite()
            }
            SampleDistribution::Exponential { lambda, x_min } => {
                lambda > 0.0 && lambda.is_finite() && x_min >= 0.0 && x_min.is_finite()
            }
            SampleDistribution::LogNormal { mu, sigma } => mu.is_finite() && sigma > 0.0 && sigma.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "invalid distribution parameters {self:?}"
            )))
        }
    }
}

/// `n` draws from `dist` on an existing stream.
pub fn sample_with(dist: &SampleDistribution, n: usize, rng: &mut StreamRng) -> Result<Vec<f64>> {
    dist.validate()?;
    Ok(match *dist {
        SampleDistribution::PowerLaw { alpha, x_min } => return sample_powerlaw(alpha, x_min, n, rng),
        SampleDistribution::Exponential { lambda, x_min } => {
            (0..n).map(|_| x_min - (1.0 - rng.next_f64()).ln() / lambda).collect()
        }
        SampleDistribution::LogNormal { mu, sigma } => (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                (mu + sigma * z).exp()
            })
            .collect(),
    })
}

/// `n` draws from `dist` on the root stream of `seed`.
pub fn gen_distribution(dist: &SampleDistribution, n: usize, seed: u64) -> Result<Vec<f64>> {
    sample_with(dist, n, &mut StreamRng::new(seed))
}

fn check_dims(n: usize, m: usize) -> Result<()> {
    if n == 0 || m == 0 {
        return Err(Error::InvalidConfig(format!(
            "matrix dimensions must be positive, got {n}x{m}"
        )));
    }
    Ok(())
}

fn gaussian_values(n: usize, m: usize, sigma: f64, rng: &mut StreamRng) -> Vec<f64> {
    (0..n * m)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            sigma * z
        })
        .collect()
}

/// `n×m` matrix of i.i.d. `N(0, σ²)` entries.
pub fn gen_gaussian_matrix(n: usize, m: usize, sigma: f64, seed: u64) -> Result<WeightMatrix> {
    check_dims(n, m)?;
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidConfig(format!("sigma must be nonnegative, got {sigma}")));
    }
    WeightMatrix::new(n, m, gaussian_values(n, m, sigma, &mut StreamRng::new(seed)))
}

/// Gaussian matrix with column `j` scaled by a power-law draw `s_j`.
pub fn gen_heavytail_matrix(n: usize, m: usize, tail_alpha: f64, seed: u64) -> Result<WeightMatrix> {
    check_dims(n, m)?;
    let root = StreamRng::new(seed);
    let scales = sample_powerlaw(tail_alpha, 1.0, m, &mut root.substream(1))?;
    let mut values = gaussian_values(n, m, 1.0, &mut root.substream(0));
    for row in values.chunks_exact_mut(m) {
        for (v, s) in row.iter_mut().zip(&scales) {
            *v *= s;
        }
    }
    WeightMatrix::new(n, m, values)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaSchedule {
    pub start: f64,
    /// Centre of the phase I exponent at the last phase I epoch.
    pub phase1_end: f64,
    /// Standard deviation of the per-epoch exponent jitter in phase I.
    pub phase1_noise: f64,
    pub phase2_start: f64,
    pub plateau: f64,
    pub rebound: f64,
    /// Epochs over which the phase III exponent climbs to `rebound`.
    pub rebound_epochs: u32,
}

impl Default for AlphaSchedule {
    fn default() -> Self {
        AlphaSchedule {
            start: 9.92,
            phase1_end: 6.0,
            phase1_noise: 1.0,
            phase2_start: 2.6,
            plateau: 2.44,
            rebound: 3.13,
            rebound_epochs: 30,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct XminSchedule {
    pub plateau: f64,
    /// Log-scale standard deviation of the phase I scale.
    pub phase1_log_sd: f64,
    /// Relative decline of the lower edge across phase II.
    pub phase2_decline: f64,
    /// Lower edge at the start of phase III, relative to `plateau`.
    pub phase3_start: f64,
    /// Relative growth of the lower edge per phase III epoch.
    pub drift: f64,
    /// Initial ratio of the truncation point to the lower edge.
    pub truncation_ratio: f64,
    /// Exponential decay rate of that ratio per phase III epoch.
    pub truncation_decay: f64,
}

impl Default for XminSchedule {
    fn default() -> Self {
        XminSchedule {
            plateau: 0.1,
            phase1_log_sd: 0.7,
            phase2_decline: 0.02,
            phase3_start: 0.98,
            drift: 0.03,
            truncation_ratio: 30.0,
            truncation_decay: 0.04,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySpec {
    pub epochs: u32,
    /// Last epochs of phases I and II.
    pub phase_boundaries: (u32, u32),
    pub alpha_schedule: AlphaSchedule,
    pub xmin_schedule: XminSchedule,
    /// `(n, m)` with `n ≥ m`.
    pub matrix_dims: (usize, usize),
    pub seed: u64,
}

impl Default for TrajectorySpec {
    fn default() -> Self {
        TrajectorySpec {
            epochs: 205,
            phase_boundaries: (25, 150),
            alpha_schedule: AlphaSchedule::default(),
            xmin_schedule: XminSchedule::default(),
            matrix_dims: (256, 128),
            seed: 0,
        }
    }
}

const PHASE1_ALPHA_RANGE: (f64, f64) = (4.5, 12.0);
const BODY_RANGE: (f64, f64) = (0.05, 0.6);
const JITTER_START: f64 = 1.0;
const JITTER_END: f64 = 0.15;
const MIN_EIGENVALUES: usize = 16;

impl TrajectorySpec {
    pub fn validate(&self) -> Result<()> {
        let (b1, b2) = self.phase_boundaries;
        if self.epochs < 1 {
            return Err(Error::InvalidConfig("epochs must be at least 1".into()));
        }
        if !(1 <= b1 && b1 < b2) {
            return Err(Error::InvalidConfig(format!(
                "phase boundaries must satisfy 1 <= b1 < b2, got ({b1}, {b2})"
            )));
        }
        let (n, m) = self.matrix_dims;
        if m < MIN_EIGENVALUES || n < m {
            return Err(Error::InvalidConfig(format!(
                "matrix dims must satisfy n >= m >= {MIN_EIGENVALUES}, got ({n}, {m})"
            )));
        }
        let a = &self.alpha_schedule;
        if [a.start, a.phase1_end, a.phase2_start, a.plateau, a.rebound]
            .iter()
            .any(|&v| !(v > 1.0))
        {
            return Err(Error::InvalidConfig("every scheduled exponent must exceed 1".into()));
        }
        let x = &self.xmin_schedule;
        if !(x.plateau > 0.0 && x.phase3_start > 0.0 && x.truncation_ratio > 1.0) {
            return Err(Error::InvalidConfig("invalid x_min schedule".into()));
        }
        Ok(())
    }

    /// Phase (1, 2 or 3) in which `epoch` was planted.
    pub fn planted_phase(&self, epoch: u32) -> u8 {
        let (b1, b2) = self.phase_boundaries;
        if epoch <= b1 {
            1
        } else if epoch <= b2 {
            2
        } else {
            3
        }
    }
}

/// Per-trajectory state shared by all epochs.
#[derive(Debug, Clone)]
pub struct TrajectoryGenerator {
    spec: TrajectorySpec,
    u: DMatrix<f64>,
    v: DMatrix<f64>,
    body: Vec<f64>,
    /// Stratified tail positions with zero-mean jitter offsets.
    offsets: Vec<f64>,
}

fn random_orthonormal(rows: usize, cols: usize, rng: &mut StreamRng) -> DMatrix<f64> {
    let g = DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng));
    g.qr().q()
}

impl TrajectoryGenerator {
    pub fn new(spec: TrajectorySpec) -> Result<Self> {
        spec.validate()?;
        let (n, m) = spec.matrix_dims;
        let root = StreamRng::new(spec.seed);
        let u = random_orthonormal(n, m, &mut root.substream(0));
        let v = random_orthonormal(m, m, &mut root.substream(1));

        let mut rng = root.substream(2);
        let n_tail = m / 2;
        let mut offsets: Vec<f64> = (0..n_tail).map(|_| rng.next_f64() - 0.5).collect();
        offsets[0] = 0.0;
        let plateau = spec.xmin_schedule.plateau;
        let mut body: Vec<f64> = (0..m - n_tail)
            .map(|_| plateau * (BODY_RANGE.0 + (BODY_RANGE.1 - BODY_RANGE.0) * rng.next_f64()))
            .collect();
        body.sort_by(f64::total_cmp);
        Ok(TrajectoryGenerator {
            spec,
            u,
            v,
            body,
            offsets,
        })
    }

    pub fn spec(&self) -> &TrajectorySpec {
        &self.spec
    }

    fn tail_positions(&self, jitter: f64) -> Vec<f64> {
        let k = self.offsets.len() as f64;
        let mut u: Vec<f64> = self
            .offsets
            .iter()
            .enumerate()
            .map(|(j, z)| ((j as f64 + jitter * z) / k).max(0.0))
            .collect();
        u.sort_by(f64::total_cmp);
        u
    }

    /// The eigenvalues planted at `epoch` (1-based), unsorted.
    pub fn planted_eigenvalues(&self, epoch: u32) -> Vec<f64> {
        let spec = &self.spec;
        let (b1, b2) = spec.phase_boundaries;
        let a_s = &spec.alpha_schedule;
        let x_s = &spec.xmin_schedule;
        let m = spec.matrix_dims.1;
        let mut rng = StreamRng::for_path(spec.seed, &[3, u64::from(epoch)]);

        if epoch <= b1 {
            let f = if b1 > 1 {
                f64::from(epoch - 1) / f64::from(b1 - 1)
            } else {
                0.0
            };
            let noise: f64 = StandardNormal.sample(&mut rng);
            let alpha = (a_s.start + (a_s.phase1_end - a_s.start) * f + a_s.phase1_noise * noise)
                .clamp(PHASE1_ALPHA_RANGE.0, PHASE1_ALPHA_RANGE.1);
            let scale_noise: f64 = StandardNormal.sample(&mut rng);
            let x0 = x_s.plateau * (x_s.phase1_log_sd * scale_noise).exp();
            let spikes = 2 + rng.next_index(2);
            let mut lam: Vec<f64> = (0..m - spikes)
                .map(|_| x0 * (1.0 - rng.next_f64()).powf(-1.0 / (alpha - 1.0)))
                .collect();
            let top = lam.iter().copied().fold(0.0, f64::max);
            lam.extend((0..spikes).map(|_| top * (1.5 + 1.5 * rng.next_f64()).exp()));
            lam
        } else if epoch <= b2 {
            let f = f64::from(epoch - b1) / f64::from(b2 - b1);
            let alpha = a_s.phase2_start + (a_s.plateau - a_s.phase2_start) * f;
            let jitter = JITTER_START * (1.0 - f) + JITTER_END * f;
            let x0 = x_s.plateau * (1.0 - x_s.phase2_decline * f);
            let mut lam = self.body.clone();
            lam.extend(
                self.tail_positions(jitter)
                    .into_iter()
                    .map(|u| x0 * (1.0 - u).powf(-1.0 / (alpha - 1.0))),
            );
            lam
        } else {
            let t = f64::from(epoch - b2);
            let ramp = (t / f64::from(a_s.rebound_epochs.max(1))).min(1.0);
            let alpha = a_s.plateau + (a_s.rebound - a_s.plateau) * ramp;
            let x0 = x_s.plateau * x_s.phase3_start * (1.0 + x_s.drift * t);
            let ratio = x_s.truncation_ratio * (-x_s.truncation_decay * t).exp();
            let mass = 1.0 - ratio.max(1.0 + 1e-9).powf(1.0 - alpha);
            let mut lam = self.body.clone();
            lam.extend(
                self.tail_positions(JITTER_END)
                    .into_iter()
                    .map(|u| x0 * (1.0 - u * mass).powf(-1.0 / (alpha - 1.0))),
            );
            lam
        }
    }

    pub fn planted_spectrum(&self, epoch: u32) -> Result<Spectrum> {
        let (n, m) = self.spec.matrix_dims;
        Spectrum::new(self.planted_eigenvalues(epoch), n, m)
    }

    /// The weight matrix of `epoch`.
    pub fn matrix(&self, epoch: u32) -> Result<WeightMatrix> {
        let roots: Vec<f64> = self.planted_eigenvalues(epoch).iter().map(|l| l.sqrt()).collect();
        let mut scaled = self.u.clone();
        for (j, s) in roots.iter().enumerate() {
            scaled.column_mut(j).scale_mut(*s);
        }
        WeightMatrix::from_dmatrix(&(scaled * self.v.transpose()))
    }
}

/// All matrices of a trajectory, in epoch order.
pub fn gen_trajectory(spec: &TrajectorySpec) -> Result<Vec<(u32, WeightMatrix)>> {
    let generator = TrajectoryGenerator::new(*spec)?;
    (1..=spec.epochs)
        .into_par_iter()
        .map(|e| generator.matrix(e).map(|w| (e, w)))
        .collect()
}

pub fn epoch_file_name(epoch: u32) -> String {
    format!("epoch_{epoch:04}.npy")
}

/// Writes one NPY file per epoch plus `manifest.json` into `dir`.
pub fn write_trajectory_files(spec: &TrajectorySpec, dir: impl AsRef<Path>) -> Result<RunManifest> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::Io(e).at_path(dir))?;
    let generator = TrajectoryGenerator::new(*spec)?;
    (1..=spec.epochs)
        .into_par_iter()
        .try_for_each(|e| write_matrix(dir.join(epoch_file_name(e)), &generator.matrix(e)?))?;
    let manifest = RunManifest {
        model_label: format!("synthetic-{}", spec.seed),
        matrix_id: "en.0.s.a.v".into(),
        c_constant: crate::calibration::DEFAULT_C,
        min_tail: crate::powerlaw::DEFAULT_MIN_TAIL,
        entries: (1..=spec.epochs)
            .map(|e| ManifestEntry {
                epoch: u64::from(e),
                path: epoch_file_name(e).into(),
                kind: EntryKind::Matrix,
            })
            .collect(),
    };
    write_manifest(dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}
