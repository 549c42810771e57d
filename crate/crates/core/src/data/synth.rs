//! Synthetic sensor windows with known activity, person and attribute factors.
//!
//! Channel `c` of a window for person `p` doing activity `a` at time `t` is
//! `sin(2π·f_a·t/T + φ[p][c])·s[p] + b[p] + ε`: the activity fixes the
//! frequency, the person fixes per-channel phase, amplitude and offset, and
//! `ε ~ N(0, noise²)`. The attribute is `person mod attribute_classes`.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::window::{SourceSpan, Window};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub persons: usize,
    pub activities: usize,
    pub attribute_classes: usize,
    pub windows_per_cell: usize,
    pub channels: usize,
    pub length: usize,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            persons: 4,
            activities: 3,
            attribute_classes: 2,
            windows_per_cell: 50,
            channels: 3,
            length: 64,
            noise: 0.3,
            seed: 0,
        }
    }
}

/// Per-person latent factors.
#[derive(Clone, Debug, PartialEq)]
pub struct PersonFactors {
    pub phase: Vec<f64>,
    pub scale: f64,
    pub offset: f64,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.persons < 2 || self.activities < 2 {
            return Err(Error::Config(
                "need at least 2 persons and 2 activities".into(),
            ));
        }
        if self.attribute_classes < 1 || self.windows_per_cell < 1 || self.channels < 1 {
            return Err(Error::Config(
                "attribute classes, windows per cell and channels must be positive".into(),
            ));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::Config("noise level must be >= 0".into()));
        }
        if self.length < 4 * self.activities {
            return Err(Error::Config(format!(
                "window length {} too short for {} distinct frequencies",
                self.length, self.activities
            )));
        }
        Ok(())
    }

    /// Cycles per window of each activity; all below a quarter of the
    /// window length so they stay well under Nyquist.
    pub fn activity_frequencies(&self) -> Vec<usize> {
        let spacing = (self.length / (4 * self.activities)).max(1);
        (1..=self.activities).map(|a| a * spacing).collect()
    }

    pub fn person_factors(&self) -> Vec<PersonFactors> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        (0..self.persons)
            .map(|_| PersonFactors {
                phase: (0..self.channels)
                    .map(|_| rng.random_range(0.0..TAU))
                    .collect(),
                scale: rng.random_range(0.5..1.5),
                offset: rng.random_range(-1.0..1.0),
            })
            .collect()
    }
}

/// Windows ordered by person, then activity, then repetition.
pub fn synth_generate(cfg: &SynthConfig) -> Result<Vec<Window>> {
    cfg.validate()?;
    let freqs = cfg.activity_frequencies();
    let persons = cfg.person_factors();
    let mut noise_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x005e_ed0f_00d5);
    let normal = Normal::new(0.0, cfg.noise).map_err(|e| Error::Config(e.to_string()))?;
    let t_len = cfg.length as f64;
    let mut out = Vec::with_capacity(cfg.persons * cfg.activities * cfg.windows_per_cell);
    for (p, pf) in persons.iter().enumerate() {
        for (a, &f) in freqs.iter().enumerate() {
            for _ in 0..cfg.windows_per_cell {
                let mut data = Vec::with_capacity(cfg.channels * cfg.length);
                for c in 0..cfg.channels {
                    for t in 0..cfg.length {
                        let clean = (TAU * f as f64 * t as f64 / t_len + pf.phase[c]).sin()
                            * pf.scale
                            + pf.offset;
                        let eps = if cfg.noise > 0.0 {
                            normal.sample(&mut noise_rng)
                        } else {
                            0.0
                        };
                        data.push((clean + eps) as f32);
                    }
                }
                let index = out.len();
                out.push(Window {
                    data: Tensor::new(vec![cfg.channels, cfg.length], data)?,
                    activity: a as u32,
                    person: p as u32,
                    attribute: Some((p % cfg.attribute_classes) as u32),
                    source: SourceSpan {
                        stream_id: 0,
                        start: index * cfg.length,
                    },
                });
            }
        }
    }
    Ok(out)
}
