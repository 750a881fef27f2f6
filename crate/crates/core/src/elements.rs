//! Linear optical elements acting on [`FieldState`]s.
//!
//! All reflections (coupler cross ports, PBS reflected port) pick up a factor
//! `i`. Two reflections therefore contribute `-1`, which is where the relative
//! sign between the two time bins of the plug-and-play state comes from.

use std::collections::BTreeMap;

use num_complex::Complex64;

use crate::error::{check_unit_interval, Error, Result};
use crate::state::{FieldState, Mode, Polarization, Port};

const I: Complex64 = Complex64::new(0.0, 1.0);

fn rebuild(s: &FieldState, f: impl Fn(&Mode, Complex64) -> (Mode, Complex64)) -> FieldState {
    let mut out = BTreeMap::new();
    for (mode, amp) in s.iter() {
        let (m, a) = f(mode, *amp);
        *out.entry(m).or_insert(Complex64::new(0.0, 0.0)) += a;
    }
    FieldState::from_map(out, s.statistics())
}

/// A 2x2 fiber coupler joining `port_a` and `port_b`. Light entering on a port
/// and transmitted keeps that port's label; reflected light takes the other.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CouplerSpec {
    pub port_a: Port,
    pub port_b: Port,
    pub transmittance: f64,
}

impl CouplerSpec {
    pub fn new(port_a: Port, port_b: Port, transmittance: f64) -> Result<Self> {
        if port_a == port_b {
            return Err(Error::DegeneratePorts(port_a));
        }
        check_unit_interval("coupler transmittance", transmittance)?;
        Ok(CouplerSpec {
            port_a,
            port_b,
            transmittance,
        })
    }

    /// 50/50 coupler.
    pub fn balanced(port_a: Port, port_b: Port) -> Result<Self> {
        Self::new(port_a, port_b, 0.5)
    }

    /// Transfer matrix `[[√t, i√(1−t)], [i√(1−t), √t]]` acting on `(a, b)`.
    pub fn matrix(&self) -> [[Complex64; 2]; 2] {
        let t = Complex64::new(self.transmittance.sqrt(), 0.0);
        let r = I * (1.0 - self.transmittance).sqrt();
        [[t, r], [r, t]]
    }
}

pub fn coupler(s: &FieldState, spec: &CouplerSpec) -> Result<FieldState> {
    if spec.port_a == spec.port_b {
        return Err(Error::DegeneratePorts(spec.port_a));
    }
    let [[t, r], _] = spec.matrix();
    let mut out = BTreeMap::new();
    let mut add = |m: Mode, a: Complex64| {
        *out.entry(m).or_insert(Complex64::new(0.0, 0.0)) += a;
    };
    for (mode, amp) in s.iter() {
        let other = if mode.path == spec.port_a {
            spec.port_b
        } else if mode.path == spec.port_b {
            spec.port_a
        } else {
            add(*mode, *amp);
            continue;
        };
        add(*mode, t * amp);
        add(Mode { path: other, ..*mode }, r * amp);
    }
    Ok(FieldState::from_map(out, s.statistics()))
}

/// Ports of a polarizing beamsplitter: H transmits between `port_h` and
/// `port_out`, V reflects between `port_v` and `port_out`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PbsSpec {
    pub port_h: Port,
    pub port_v: Port,
    pub port_out: Port,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Traversal {
    /// `port_h`/`port_v` into `port_out`.
    Forward,
    /// `port_out` back out through `port_h`/`port_v`.
    Backward,
}

pub fn pbs(s: &FieldState, spec: &PbsSpec, direction: Traversal) -> Result<FieldState> {
    use Polarization::{H, V};
    if let Traversal::Forward = direction {
        for mode in s.modes() {
            let wrong = (mode.path == spec.port_h && mode.pol != H)
                || (mode.path == spec.port_v && mode.pol != V);
            if wrong {
                return Err(Error::PolarizationMismatch {
                    port: mode.path,
                    pol: mode.pol,
                });
            }
        }
    }
    Ok(rebuild(s, |mode, amp| match direction {
        Traversal::Forward if mode.path == spec.port_h => {
            (Mode { path: spec.port_out, ..*mode }, amp)
        }
        Traversal::Forward if mode.path == spec.port_v => {
            (Mode { path: spec.port_out, ..*mode }, I * amp)
        }
        Traversal::Backward if mode.path == spec.port_out => match mode.pol {
            H => (Mode { path: spec.port_h, ..*mode }, amp),
            V => (Mode { path: spec.port_v, ..*mode }, I * amp),
        },
        _ => (*mode, amp),
    }))
}

/// Delays every mode on `path` by `bins` lattice steps.
pub fn delay(s: &FieldState, path: Port, bins: i64) -> Result<FieldState> {
    let shift = u32::try_from(bins).map_err(|_| Error::NegativeDelay(bins))?;
    Ok(rebuild(s, |mode, amp| {
        if mode.path == path {
            (
                Mode {
                    time_bin: mode.time_bin + shift,
                    ..*mode
                },
                amp,
            )
        } else {
            (*mode, amp)
        }
    }))
}

/// Phases (radians) per time bin. Bins not listed get phase 0.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PhaseSchedule {
    phases: BTreeMap<u32, f64>,
}

impl PhaseSchedule {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (u32, f64)>) -> Result<Self> {
        let mut sched = Self::new();
        for (bin, phase) in pairs {
            sched.set(bin, phase)?;
        }
        Ok(sched)
    }

    pub fn set(&mut self, bin: u32, phase: f64) -> Result<()> {
        if !phase.is_finite() {
            return Err(Error::NonFinitePhase { bin });
        }
        self.phases.insert(bin, phase);
        Ok(())
    }

    pub fn phase(&self, bin: u32) -> f64 {
        self.phases.get(&bin).copied().unwrap_or(0.0)
    }

    pub fn negated(&self) -> Self {
        PhaseSchedule {
            phases: self.phases.iter().map(|(b, p)| (*b, -p)).collect(),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, f64)> + '_ {
        self.phases.iter().map(|(b, p)| (*b, *p))
    }

    pub fn is_empty(&self) -> bool {
        self.phases.is_empty()
    }

    /// Drives `phase` on every bin of `s` where `path` carries `pol`, which is
    /// how a polarization-sensitive modulator acts on an interleaved pulse
    /// train.
    pub fn for_polarization(s: &FieldState, path: Port, pol: Polarization, phase: f64) -> Result<Self> {
        Self::from_pairs(
            s.modes()
                .filter(|m| m.path == path && m.pol == pol)
                .map(|m| (m.time_bin, phase)),
        )
    }
}

pub fn phase_modulator(s: &FieldState, path: Port, sched: &PhaseSchedule) -> FieldState {
    rebuild(s, |mode, amp| {
        if mode.path == path {
            let phi = sched.phase(mode.time_bin);
            if phi != 0.0 {
                return (*mode, amp * Complex64::from_polar(1.0, phi));
            }
        }
        (*mode, amp)
    })
}

/// Swaps H and V on `path`. The caller replays the network backwards after
/// the reflection.
pub fn faraday_mirror(s: &FieldState, path: Port) -> FieldState {
    rotate_polarization(s, path)
}

/// Ideal polarization controller set to exchange H and V on `path`.
pub fn rotate_polarization(s: &FieldState, path: Port) -> FieldState {
    rebuild(s, |mode, amp| {
        if mode.path == path {
            (
                Mode {
                    pol: mode.pol.flipped(),
                    ..*mode
                },
                amp,
            )
        } else {
            (*mode, amp)
        }
    })
}

/// Scales probabilities by `factor`.
pub fn attenuator(s: &FieldState, factor: f64) -> Result<FieldState> {
    check_unit_interval("attenuation factor", factor)?;
    if factor == 0.0 {
        return Ok(FieldState::vacuum(s.statistics()));
    }
    Ok(s.scaled(Complex64::new(factor.sqrt(), 0.0)))
}

/// Lossless relabeling of a path (circulator).
pub fn route(s: &FieldState, from: Port, to: Port) -> FieldState {
    rebuild(s, |mode, amp| {
        if mode.path == from {
            (Mode { path: to, ..*mode }, amp)
        } else {
            (*mode, amp)
        }
    })
}
