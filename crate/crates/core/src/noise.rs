//! Gaussian phase noise on time bins and its closed-form consequences.
//!
//! Each bin receives an independent, unwrapped `N(0, σ²)` phase. Averaged
//! over the noise, a pure time-bin qubit becomes
//! `e^{-σ²}|ψ⟩⟨ψ| + (1 - e^{-σ²}) 1/2`, so the fringe visibility is `e^{-σ²}`.
//! Recombining `N` noisy replicas of each bin raises it to
//! `N / (N - 1 + e^{σ²})`.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::elements::{phase_modulator, PhaseSchedule};
use crate::error::{Error, Result};
use crate::state::{FieldState, Port};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    sigma2: f64,
}

impl NoiseModel {
    pub fn new(sigma2: f64) -> Result<Self> {
        if sigma2.is_finite() && sigma2 >= 0.0 {
            Ok(NoiseModel { sigma2 })
        } else {
            Err(Error::OutOfRange {
                name: "phase-noise variance",
                range: "[0, inf)",
                value: sigma2,
            })
        }
    }

    pub fn noiseless() -> Self {
        NoiseModel { sigma2: 0.0 }
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }
}

/// One realization of the channel phases, keyed by time bin.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NoiseSample {
    phases: BTreeMap<u32, f64>,
}

impl NoiseSample {
    pub fn zero(bins: impl IntoIterator<Item = u32>) -> Self {
        NoiseSample {
            phases: bins.into_iter().map(|b| (b, 0.0)).collect(),
        }
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (u32, f64)>) -> Self {
        NoiseSample {
            phases: pairs.into_iter().collect(),
        }
    }

    pub fn phase(&self, bin: u32) -> Option<f64> {
        self.phases.get(&bin).copied()
    }

    pub fn covers(&self, bin: u32) -> bool {
        self.phases.contains_key(&bin)
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, f64)> + '_ {
        self.phases.iter().map(|(b, p)| (*b, *p))
    }

    pub fn len(&self) -> usize {
        self.phases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phases.is_empty()
    }

    /// Same sample with `offset` added to every phase.
    pub fn shifted(&self, offset: f64) -> Self {
        NoiseSample {
            phases: self.phases.iter().map(|(b, p)| (*b, p + offset)).collect(),
        }
    }

    pub fn to_schedule(&self) -> Result<PhaseSchedule> {
        PhaseSchedule::from_pairs(self.iter())
    }
}

/// Draws one phase per bin, in ascending bin order.
pub fn sample_phases<R: Rng + ?Sized>(
    model: &NoiseModel,
    bins: impl IntoIterator<Item = u32>,
    rng: &mut R,
) -> NoiseSample {
    let sigma = model.sigma2.sqrt();
    let mut bins: Vec<u32> = bins.into_iter().collect();
    bins.sort_unstable();
    bins.dedup();
    NoiseSample {
        phases: bins
            .into_iter()
            .map(|b| (b, gaussian_phase(sigma, rng)))
            .collect(),
    }
}

/// A single `N(0, sigma^2)` draw; exactly zero when `sigma == 0`.
pub fn gaussian_phase<R: Rng + ?Sized>(sigma: f64, rng: &mut R) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    if sigma == 0.0 {
        0.0
    } else {
        sigma * z
    }
}

pub fn apply_noise(s: &FieldState, sample: &NoiseSample, path: Port) -> Result<FieldState> {
    Ok(phase_modulator(s, path, &sample.to_schedule()?))
}

/// Weight `e^{-σ²}` of the undisturbed state in the noise-averaged density matrix.
pub fn mixing_coefficient(sigma2: f64) -> f64 {
    (-sigma2).exp()
}

pub fn visibility_unfiltered(sigma2: f64) -> f64 {
    mixing_coefficient(sigma2)
}

pub fn ber_unfiltered(sigma2: f64) -> f64 {
    (1.0 - mixing_coefficient(sigma2)) / 2.0
}

/// Visibility when the qubit is spread over `2 * n_pairs` time bins and
/// recombined. `n_pairs == 1` is the unfiltered case.
pub fn visibility_filtered(n_pairs: u32, sigma2: f64) -> f64 {
    let n = f64::from(n_pairs);
    n / (n - 1.0 + sigma2.exp())
}

pub fn ber_from_visibility(v: f64) -> f64 {
    (1.0 - v) / 2.0
}

pub fn visibility_from_ber(ber: f64) -> f64 {
    1.0 - 2.0 * ber
}

/// Inverse of [`visibility_filtered`]: the `σ²` at which `2 * n_pairs` bins
/// give visibility `v`. `None` when `v` is outside `(0, 1]`.
pub fn sigma2_for_visibility(n_pairs: u32, v: f64) -> Option<f64> {
    if !(v > 0.0 && v <= 1.0) {
        return None;
    }
    let n = f64::from(n_pairs);
    Some((n / v - n + 1.0).ln())
}
