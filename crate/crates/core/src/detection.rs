//! Gated threshold detector: from gate intensity to click probability.

use rand::Rng;

use crate::apparatus::{ApparatusConfig, OutputPort};
use crate::error::{check_unit_interval, Error, Result};
use crate::noise::NoiseModel;
use crate::protocol::expected_raw_error;
use crate::state::Statistics;

/// Slack for intensities that overshoot `[0, 1]` through rounding.
const INTENSITY_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorConfig {
    /// Quantum efficiency η.
    pub efficiency: f64,
    /// Probability of a dark count within one gate.
    pub dark_prob: f64,
    /// Which C1 output the single detector watches.
    pub port: OutputPort,
    /// Output bin the gate is opened on; `None` means the apparatus's
    /// central bin.
    pub gate_bin: Option<u32>,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            efficiency: 0.1,
            dark_prob: 0.0,
            port: OutputPort::P1,
            gate_bin: None,
        }
    }
}

impl DetectorConfig {
    /// Unit efficiency, no dark counts.
    pub fn ideal() -> Self {
        DetectorConfig {
            efficiency: 1.0,
            ..Self::default()
        }
    }

    pub fn with_dark_prob(mut self, dark_prob: f64) -> Self {
        self.dark_prob = dark_prob;
        self
    }

    pub fn validate(&self) -> Result<()> {
        check_unit_interval("detector efficiency", self.efficiency)?;
        check_unit_interval("dark-count probability", self.dark_prob)
    }

    pub fn gate(&self, apparatus: &ApparatusConfig) -> u32 {
        self.gate_bin.unwrap_or_else(|| apparatus.central_bin())
    }
}

/// Probability that the gate fires when a fraction `intensity` of the source
/// reaches it.
///
/// Coherent light gives `1 - (1 - d) exp(-η μ I)`; a single photon gives
/// `1 - (1 - d)(1 - η I)`.
pub fn click_probability(intensity: f64, statistics: Statistics, det: &DetectorConfig) -> Result<f64> {
    det.validate()?;
    if !(-INTENSITY_SLACK..=1.0 + INTENSITY_SLACK).contains(&intensity) {
        return Err(Error::OutOfRange {
            name: "gate intensity",
            range: "[0, 1]",
            value: intensity,
        });
    }
    if let Statistics::Coherent { mu } = statistics {
        Statistics::coherent(mu)?;
    }
    Ok(click_probability_unchecked(intensity, statistics, det))
}

/// [`click_probability`] for inputs already validated.
pub(crate) fn click_probability_unchecked(intensity: f64, statistics: Statistics, det: &DetectorConfig) -> f64 {
    let intensity = intensity.clamp(0.0, 1.0);
    let no_signal = match statistics {
        Statistics::SinglePhoton => 1.0 - det.efficiency * intensity,
        Statistics::Coherent { mu } => (-det.efficiency * mu * intensity).exp(),
    };
    1.0 - (1.0 - det.dark_prob) * no_signal
}

pub fn sample_click<R: Rng + ?Sized>(p: f64, rng: &mut R) -> bool {
    rng.random::<f64>() < p
}

/// Tolerance on the dark-count probability returned by the calibration.
pub const CALIBRATION_TOLERANCE: f64 = 1e-6;

/// Finds by bisection the dark-count probability at which the expected raw
/// (sifted) error rate equals `target`, all other parameters held fixed.
///
/// The expected error rate is averaged over `trials` common noise samples, so
/// it is a smooth nondecreasing function of the dark-count probability.
pub fn calibrate_dark_for_raw_error(
    target: f64,
    apparatus: &ApparatusConfig,
    detector: &DetectorConfig,
    sigma2: f64,
    trials: u64,
    seed: u64,
) -> Result<f64> {
    let noise = NoiseModel::new(sigma2)?;
    let raw = |d: f64| {
        expected_raw_error(apparatus, &noise, &detector.with_dark_prob(d), trials, seed)
    };
    let (low, high) = (raw(0.0)?, raw(1.0)?);
    if !(low..=high).contains(&target) || target > 0.5 {
        return Err(Error::UnreachableTarget { target, low, high });
    }
    if target <= low {
        return Ok(0.0);
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    while hi - lo > CALIBRATION_TOLERANCE {
        let mid = 0.5 * (lo + hi);
        if raw(mid)? < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const COHERENT: Statistics = Statistics::Coherent { mu: 0.8 };

    #[test]
    fn click_probability_examples() {
        let det = DetectorConfig::ideal();
        assert_eq!(click_probability(0.0, COHERENT, &det).unwrap(), 0.0);
        let dark = det.with_dark_prob(0.03);
        assert!((click_probability(0.0, COHERENT, &dark).unwrap() - 0.03).abs() < 1e-15);
        let p = click_probability(1.0, COHERENT, &det).unwrap();
        assert!((p - (1.0 - (-0.8f64).exp())).abs() < 1e-15);
        assert!((p - 0.551).abs() < 5e-4);
        assert_eq!(click_probability(0.4, Statistics::SinglePhoton, &det).unwrap(), 0.4);
    }

    #[test]
    fn click_probability_rejects_bad_inputs() {
        let det = DetectorConfig::default();
        assert!(click_probability(1.5, COHERENT, &det).is_err());
        assert!(click_probability(-0.1, COHERENT, &det).is_err());
        assert!(click_probability(0.5, Statistics::Coherent { mu: -1.0 }, &det).is_err());
        assert!(click_probability(0.5, COHERENT, &det.with_dark_prob(2.0)).is_err());
        let bad_eta = DetectorConfig {
            efficiency: -0.2,
            ..det
        };
        assert!(click_probability(0.5, COHERENT, &bad_eta).is_err());
    }

    #[test]
    fn click_probability_is_monotone() {
        let grid = [0.0, 0.1, 0.3, 0.6, 1.0];
        for &i in &grid {
            for &eta in &grid {
                for &d in &grid {
                    for &mu in &[0.0, 0.5, 0.8, 5.0] {
                        let det = DetectorConfig {
                            efficiency: eta,
                            dark_prob: d,
                            ..DetectorConfig::default()
                        };
                        let base = click_probability(i, Statistics::Coherent { mu }, &det).unwrap();
                        let bump = |x: f64| (x + 0.05).min(1.0);
                        let more_i = click_probability(bump(i), Statistics::Coherent { mu }, &det).unwrap();
                        let more_mu = click_probability(i, Statistics::Coherent { mu: mu + 0.1 }, &det).unwrap();
                        let more_eta = click_probability(
                            i,
                            Statistics::Coherent { mu },
                            &DetectorConfig { efficiency: bump(eta), ..det },
                        )
                        .unwrap();
                        let more_d =
                            click_probability(i, Statistics::Coherent { mu }, &det.with_dark_prob(bump(d))).unwrap();
                        assert!(more_i >= base && more_mu >= base && more_eta >= base && more_d >= base);
                    }
                }
            }
        }
    }

    #[test]
    fn weak_pulse_limit_is_linear() {
        let det = DetectorConfig::default();
        for (mu, i) in [(0.01, 1.0), (0.02, 0.5), (0.1, 0.1)] {
            let p = click_probability(i, Statistics::Coherent { mu }, &det).unwrap();
            let linear = det.efficiency * mu * i;
            assert!((p - linear).abs() / linear < 0.01);
        }
    }

    #[test]
    fn bernoulli_sampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        assert!((0..10_000).all(|_| !sample_click(0.0, &mut rng)));
        assert!((0..10_000).all(|_| sample_click(1.0, &mut rng)));
        let p = 0.3;
        let n = 1_000_000;
        let hits = (0..n).filter(|_| sample_click(p, &mut rng)).count() as f64;
        let mean = hits / n as f64;
        assert!((mean - p).abs() < 3.0 * (p * (1.0 - p) / n as f64).sqrt());
    }

    #[test]
    fn calibration_zero_target_without_noise() {
        let app = ApparatusConfig::unfiltered();
        let d = calibrate_dark_for_raw_error(0.0, &app, &DetectorConfig::default(), 0.0, 200, 0).unwrap();
        assert_eq!(d, 0.0);
    }

    #[test]
    fn calibration_is_monotone_and_bounded() {
        let app = ApparatusConfig::unfiltered();
        let det = DetectorConfig::default();
        let d20 = calibrate_dark_for_raw_error(0.20, &app, &det, 0.3655, 2_000, 1).unwrap();
        let d30 = calibrate_dark_for_raw_error(0.30, &app, &det, 0.3655, 2_000, 1).unwrap();
        assert!(d20 > 0.0 && d30 > d20);
        assert!(matches!(
            calibrate_dark_for_raw_error(0.6, &app, &det, 0.3655, 200, 1),
            Err(Error::UnreachableTarget { .. })
        ));
        assert!(matches!(
            calibrate_dark_for_raw_error(0.05, &app, &det, 0.3655, 200, 1),
            Err(Error::UnreachableTarget { .. })
        ));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn click_probability_is_monotone(
                i in 0.0f64..=1.0,
                mu in 0.0f64..10.0,
                eta in 0.0f64..=1.0,
                d in 0.0f64..=1.0,
                bump in 0.0f64..0.5,
            ) {
                let det = DetectorConfig { efficiency: eta, dark_prob: d, ..DetectorConfig::default() };
                let p = |i: f64, mu: f64, det: &DetectorConfig| {
                    click_probability(i, Statistics::Coherent { mu }, det).unwrap()
                };
                let base = p(i, mu, &det);
                prop_assert!((0.0..=1.0).contains(&base));
                prop_assert!(p((i + bump).min(1.0), mu, &det) >= base);
                prop_assert!(p(i, mu + bump, &det) >= base);
                let more_eta = DetectorConfig { efficiency: (eta + bump).min(1.0), ..det };
                prop_assert!(p(i, mu, &more_eta) >= base);
                prop_assert!(p(i, mu, &det.with_dark_prob((d + bump).min(1.0))) >= base);
                let single = click_probability(i, Statistics::SinglePhoton, &det).unwrap();
                let single_more = click_probability((i + bump).min(1.0), Statistics::SinglePhoton, &det).unwrap();
                prop_assert!(single_more >= single);
            }

            #[test]
            fn weak_pulses_click_linearly(mu in 1e-6f64..0.01, i in 0.01f64..=1.0, eta in 0.01f64..=1.0) {
                let det = DetectorConfig { efficiency: eta, ..DetectorConfig::default() };
                let p = click_probability(i, Statistics::Coherent { mu }, &det).unwrap();
                let linear = eta * mu * i;
                prop_assert!((p - linear).abs() / linear < 0.01);
            }
        }
    }
}
