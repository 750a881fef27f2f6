//! Mode-indexed complex amplitudes of time-bin pulses.
//!
//! A [`FieldState`] is a sparse superposition over [`Mode`]s, where a mode is
//! a (time bin, polarization, fiber path) triple. Time is discretized on the
//! lattice `t_i = i * Δ`; the pulse and gate widths never enter the amplitudes.
//!
//! Amplitudes are left unnormalized after lossy elements: a single photon that
//! may have been lost has `total_probability() < 1`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Amplitudes below this magnitude may be discarded by [`FieldState::pruned`].
pub const PRUNE_THRESHOLD: f64 = 1e-15;

/// Slack allowed on the single-photon normalization bound.
pub const NORM_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Polarization {
    H,
    V,
}

impl Polarization {
    pub fn flipped(self) -> Self {
        match self {
            Polarization::H => Polarization::V,
            Polarization::V => Polarization::H,
        }
    }
}

/// Label of a fiber segment or coupler port.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Port {
    name: &'static str,
    index: u16,
}

impl Port {
    pub const fn new(name: &'static str) -> Self {
        Port { name, index: 0 }
    }

    /// A port belonging to the `index`-th copy of a repeated stage.
    pub const fn indexed(name: &'static str, index: u16) -> Self {
        Port { name, index }
    }

    pub fn name(&self) -> &'static str {
        self.name
    }

    pub fn index(&self) -> u16 {
        self.index
    }
}

impl fmt::Display for Port {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.index == 0 {
            f.write_str(self.name)
        } else {
            write!(f, "{}[{}]", self.name, self.index)
        }
    }
}

/// A single optical mode. Ordering is by time bin first, which keeps
/// iteration over a state in arrival order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Mode {
    pub time_bin: u32,
    pub pol: Polarization,
    pub path: Port,
}

impl Mode {
    pub const fn new(time_bin: u32, pol: Polarization, path: Port) -> Self {
        Mode {
            time_bin,
            pol,
            path,
        }
    }
}

/// Photon statistics of the source that produced a state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Statistics {
    SinglePhoton,
    /// Attenuated coherent pulse with mean photon number `mu` at the source.
    Coherent { mu: f64 },
}

impl Statistics {
    pub fn coherent(mu: f64) -> Result<Self> {
        if mu.is_finite() && mu >= 0.0 {
            Ok(Statistics::Coherent { mu })
        } else {
            Err(Error::InvalidMeanPhotonNumber(mu))
        }
    }

    pub fn mean_photon_number(&self) -> Option<f64> {
        match *self {
            Statistics::SinglePhoton => None,
            Statistics::Coherent { mu } => Some(mu),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldState {
    amplitudes: BTreeMap<Mode, Complex64>,
    statistics: Statistics,
}

impl FieldState {
    pub fn vacuum(statistics: Statistics) -> Self {
        FieldState {
            amplitudes: BTreeMap::new(),
            statistics,
        }
    }

    /// A single pulse occupying one mode.
    pub fn new_pulse(
        time_bin: i64,
        pol: Polarization,
        path: Port,
        amp: Complex64,
        statistics: Statistics,
    ) -> Result<Self> {
        let time_bin = u32::try_from(time_bin).map_err(|_| Error::NegativeTimeBin(time_bin))?;
        if let Statistics::Coherent { mu } = statistics {
            Statistics::coherent(mu)?;
        }
        if statistics == Statistics::SinglePhoton && amp.norm() > 1.0 + NORM_EPSILON {
            return Err(Error::AmplitudeTooLarge(amp.norm()));
        }
        let mut amplitudes = BTreeMap::new();
        amplitudes.insert(Mode::new(time_bin, pol, path), amp);
        Ok(FieldState {
            amplitudes,
            statistics,
        })
    }

    /// Builds a state from explicit amplitudes. Repeated modes are summed.
    pub fn from_amplitudes(
        amps: impl IntoIterator<Item = (Mode, Complex64)>,
        statistics: Statistics,
    ) -> Self {
        let mut amplitudes = BTreeMap::new();
        for (mode, amp) in amps {
            *amplitudes.entry(mode).or_insert(Complex64::new(0.0, 0.0)) += amp;
        }
        FieldState {
            amplitudes,
            statistics,
        }
    }

    pub(crate) fn from_map(amplitudes: BTreeMap<Mode, Complex64>, statistics: Statistics) -> Self {
        FieldState {
            amplitudes,
            statistics,
        }
    }

    pub fn statistics(&self) -> Statistics {
        self.statistics
    }

    pub fn amplitude(&self, mode: &Mode) -> Complex64 {
        self.amplitudes
            .get(mode)
            .copied()
            .unwrap_or(Complex64::new(0.0, 0.0))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Mode, &Complex64)> {
        self.amplitudes.iter()
    }

    pub fn modes(&self) -> impl Iterator<Item = &Mode> {
        self.amplitudes.keys()
    }

    pub fn len(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.amplitudes.is_empty()
    }

    /// Sum of `|a|^2` over all modes. For a single photon this is its
    /// survival probability.
    pub fn total_probability(&self) -> f64 {
        self.amplitudes.values().map(|a| a.norm_sqr()).sum()
    }

    /// Probability carried by the modes on `path`.
    pub fn probability_on(&self, path: Port) -> f64 {
        self.amplitudes
            .iter()
            .filter(|(m, _)| m.path == path)
            .map(|(_, a)| a.norm_sqr())
            .sum()
    }

    /// Post-selects the modes on `path` whose time bin is in `bins`, without
    /// renormalizing.
    pub fn project_window(&self, bins: impl IntoIterator<Item = u32>, path: Port) -> FieldState {
        let bins: BTreeSet<u32> = bins.into_iter().collect();
        self.filter(|m| m.path == path && bins.contains(&m.time_bin))
    }

    pub(crate) fn filter(&self, keep: impl Fn(&Mode) -> bool) -> FieldState {
        FieldState {
            amplitudes: self
                .amplitudes
                .iter()
                .filter(|(m, _)| keep(m))
                .map(|(m, a)| (*m, *a))
                .collect(),
            statistics: self.statistics,
        }
    }

    /// `<self|other>`.
    pub fn overlap(&self, other: &FieldState) -> Result<Complex64> {
        if self.statistics != other.statistics {
            return Err(Error::StatisticsMismatch);
        }
        Ok(self
            .amplitudes
            .iter()
            .filter_map(|(m, a)| other.amplitudes.get(m).map(|b| a.conj() * b))
            .sum())
    }

    pub fn scaled(&self, factor: Complex64) -> FieldState {
        FieldState {
            amplitudes: self
                .amplitudes
                .iter()
                .map(|(m, a)| (*m, a * factor))
                .collect(),
            statistics: self.statistics,
        }
    }

    /// Coherent sum of two states with the same statistics.
    pub fn superpose(&self, other: &FieldState) -> Result<FieldState> {
        if self.statistics != other.statistics {
            return Err(Error::StatisticsMismatch);
        }
        let mut amplitudes = self.amplitudes.clone();
        for (m, a) in &other.amplitudes {
            *amplitudes.entry(*m).or_insert(Complex64::new(0.0, 0.0)) += a;
        }
        Ok(FieldState {
            amplitudes,
            statistics: self.statistics,
        })
    }

    /// Drops amplitudes with magnitude below `threshold`.
    pub fn pruned(&self, threshold: f64) -> FieldState {
        self.filter_amplitudes(|a| a.norm() >= threshold)
    }

    fn filter_amplitudes(&self, keep: impl Fn(&Complex64) -> bool) -> FieldState {
        FieldState {
            amplitudes: self
                .amplitudes
                .iter()
                .filter(|(_, a)| keep(a))
                .map(|(m, a)| (*m, *a))
                .collect(),
            statistics: self.statistics,
        }
    }

    /// Largest entrywise amplitude difference; modes missing on one side count
    /// as zero.
    pub fn max_abs_diff(&self, other: &FieldState) -> f64 {
        let modes: BTreeSet<&Mode> = self.modes().chain(other.modes()).collect();
        modes
            .into_iter()
            .map(|m| (self.amplitude(m) - other.amplitude(m)).norm())
            .fold(0.0, f64::max)
    }

    /// Sorted set of time bins occupied on `path`.
    pub fn bins_on(&self, path: Port) -> Vec<u32> {
        let bins: BTreeSet<u32> = self
            .amplitudes
            .keys()
            .filter(|m| m.path == path)
            .map(|m| m.time_bin)
            .collect();
        bins.into_iter().collect()
    }
}
