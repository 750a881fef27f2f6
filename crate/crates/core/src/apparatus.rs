//! The plug-and-play interferometer with optional error-filtration stages.
//!
//! Forward pass (Bob to Alice): source pulse, coupler C1 splitting into a
//! short arm and a one-bin delay arm, PBS merge, then `log2(N)` unbalanced
//! Mach-Zehnder stages (C2, long arm, C3) whose long arms are delayed by
//! `mz_delay_bins * 2^j`. Alice drives her polarization-sensitive modulator
//! on the V pulses and the Faraday mirror swaps H and V. Channel noise acts
//! on the returning pulse train. The return pass replays the stages in reverse
//! (C3, long arm, C2), applies Bob's phase to the H pulses, splits at the PBS
//! and interferes at C1, whose two source-side outputs are the detector ports
//! P1 and P2.
//!
//! Output bins are labeled relative to the earliest possible arrival, so the
//! unfiltered fringe lives in bin 0 and the filtered fringe of the two-pair
//! setup in bin 2.
//!
//! [`propagate`] runs every element on a sparse [`FieldState`]. Monte Carlo
//! code instead uses [`PreparedChannel`] and [`ReturnMap`], which are built by
//! pushing basis states through the same element chain and exploit linearity.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::elements::{
    coupler, delay, faraday_mirror, pbs, phase_modulator, rotate_polarization, route,
    CouplerSpec, PbsSpec, PhaseSchedule, Traversal,
};
use crate::error::{check_unit_interval, Error, Result};
use crate::noise::{apply_noise, gaussian_phase, NoiseModel, NoiseSample};
use crate::state::{FieldState, Mode, Polarization, Port, Statistics, PRUNE_THRESHOLD};
use crate::streams::{fold_trials, substream};

pub mod ports {
    use crate::state::Port;

    /// C1 port facing the source; also the short arm towards the PBS.
    pub const SOURCE_ARM: Port = Port::new("c1_short");
    /// C1 arm with the one-bin delay, entering the PBS on its V port.
    pub const DELAY_ARM: Port = Port::new("c1_long");
    /// PBS output, short arms of the filtration stages and the channel fiber.
    pub const LINE: Port = Port::new("line");
    pub const P1: Port = Port::new("P1");
    pub const P2: Port = Port::new("P2");

    /// Long arm of the `stage`-th filtration interferometer.
    pub const fn mz_long(stage: u16) -> Port {
        Port::indexed("mz_long", stage + 1)
    }
}

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Detector-side output of coupler C1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum OutputPort {
    P1,
    P2,
}

impl OutputPort {
    pub fn port(self) -> Port {
        match self {
            OutputPort::P1 => ports::P1,
            OutputPort::P2 => ports::P2,
        }
    }

    fn index(self) -> usize {
        match self {
            OutputPort::P1 => 0,
            OutputPort::P2 => 1,
        }
    }
}

impl std::str::FromStr for OutputPort {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "P1" | "p1" => Ok(OutputPort::P1),
            "P2" | "p2" => Ok(OutputPort::P2),
            other => Err(format!("unknown output port `{other}` (expected P1 or P2)")),
        }
    }
}

impl std::fmt::Display for OutputPort {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            OutputPort::P1 => "P1",
            OutputPort::P2 => "P2",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ApparatusConfig {
    /// Whether the filtration interferometers are installed.
    pub filtration: bool,
    /// Number of bin pairs carrying the qubit; a power of two. Ignored (treated
    /// as 1) without filtration.
    pub n_pairs: u32,
    /// Lattice spacing; bookkeeping only.
    pub bin_spacing_ns: f64,
    /// Long-arm delay of the first filtration stage, in bins.
    pub mz_delay_bins: u32,
    pub source: Statistics,
    /// Fraction of the C1 interference that stays coherent. 1 is ideal; the
    /// remainder adds at the detector as incoherent intensity.
    pub fringe_factor: f64,
    /// Extra phase (radians) picked up when a modulator is driven at a
    /// quarter-wave setting, scaled by `|sin φ|`.
    pub quarter_wave_phase_error: f64,
    /// Drop negligible amplitudes after every element.
    pub prune: bool,
}

impl Default for ApparatusConfig {
    fn default() -> Self {
        ApparatusConfig {
            filtration: true,
            n_pairs: 2,
            bin_spacing_ns: 60.0,
            mz_delay_bins: 2,
            source: Statistics::Coherent { mu: 0.8 },
            fringe_factor: 1.0,
            quarter_wave_phase_error: 0.0,
            prune: true,
        }
    }
}

impl ApparatusConfig {
    pub fn unfiltered() -> Self {
        ApparatusConfig {
            filtration: false,
            n_pairs: 1,
            ..Self::default()
        }
    }

    pub fn filtered(n_pairs: u32) -> Self {
        ApparatusConfig {
            filtration: true,
            n_pairs,
            ..Self::default()
        }
    }

    pub fn with_source(mut self, source: Statistics) -> Self {
        self.source = source;
        self
    }

    pub fn with_fringe_factor(mut self, factor: f64) -> Self {
        self.fringe_factor = factor;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |msg: String| Err(Error::InvalidConfig(msg));
        if self.n_pairs == 0 || !self.n_pairs.is_power_of_two() {
            return invalid(format!(
                "n_pairs must be a power of two >= 1 (cascaded stages), got {}",
                self.n_pairs
            ));
        }
        if self.n_pairs > 1 << 12 {
            return invalid(format!("n_pairs {} is too large", self.n_pairs));
        }
        if self.mz_delay_bins == 0 {
            return invalid("mz_delay_bins must be >= 1".into());
        }
        if !(self.bin_spacing_ns.is_finite() && self.bin_spacing_ns > 0.0) {
            return invalid(format!("bin_spacing_ns must be positive, got {}", self.bin_spacing_ns));
        }
        if let Statistics::Coherent { mu } = self.source {
            Statistics::coherent(mu)?;
        }
        check_unit_interval("fringe factor", self.fringe_factor)?;
        if !self.quarter_wave_phase_error.is_finite() {
            return invalid("quarter_wave_phase_error must be finite".into());
        }
        Ok(())
    }

    /// Pairs actually encoded: `n_pairs` with filtration, otherwise 1.
    pub fn effective_pairs(&self) -> u32 {
        if self.filtration {
            self.n_pairs
        } else {
            1
        }
    }

    pub fn stages(&self) -> u16 {
        self.effective_pairs().trailing_zeros() as u16
    }

    pub fn stage_delay(&self, stage: u16) -> u32 {
        self.mz_delay_bins << stage
    }

    /// Output bin carrying the fully recombined (filtered) fringe.
    pub fn central_bin(&self) -> u32 {
        self.mz_delay_bins * (self.effective_pairs() - 1)
    }

    /// Phase a modulator actually imprints when driven at `phi`.
    pub fn driven_phase(&self, phi: f64) -> f64 {
        phi + self.quarter_wave_phase_error * phi.sin().abs()
    }

    fn c1(&self) -> CouplerSpec {
        CouplerSpec {
            port_a: ports::SOURCE_ARM,
            port_b: ports::DELAY_ARM,
            transmittance: 0.5,
        }
    }

    fn pbs(&self) -> PbsSpec {
        PbsSpec {
            port_h: ports::SOURCE_ARM,
            port_v: ports::DELAY_ARM,
            port_out: ports::LINE,
        }
    }

    fn tidy(&self, s: FieldState) -> FieldState {
        if self.prune {
            s.pruned(PRUNE_THRESHOLD)
        } else {
            s
        }
    }
}

/// Splits `s` into the part off `path` and the probability carried on it.
fn discard(s: &FieldState, path: Port) -> (FieldState, f64) {
    (s.filter(|m| m.path != path), s.probability_on(path))
}

fn mz_stage(config: &ApparatusConfig, s: FieldState, stage: u16) -> Result<(FieldState, f64)> {
    let long = ports::mz_long(stage);
    let spec = CouplerSpec::balanced(ports::LINE, long)?;
    let s = config.tidy(coupler(&s, &spec)?);
    let s = delay(&s, long, i64::from(config.stage_delay(stage)))?;
    let s = config.tidy(coupler(&s, &spec)?);
    // The second coupler's other output is an unconnected pigtail.
    Ok(discard(&s, long))
}

/// State leaving Alice towards Bob, before channel noise.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedChannel {
    pub state: FieldState,
    /// Probability lost at the forward-pass pigtails.
    pub lost: f64,
}

impl PreparedChannel {
    pub fn bins(&self) -> Vec<u32> {
        self.state.bins_on(ports::LINE)
    }
}

/// Forward pass up to and including Alice's modulator and the Faraday mirror.
pub fn prepare_channel(config: &ApparatusConfig, phi_a: f64) -> Result<PreparedChannel> {
    config.validate()?;
    let one = Complex64::new(1.0, 0.0);
    let s = FieldState::new_pulse(0, Polarization::H, ports::SOURCE_ARM, one, config.source)?;
    let s = config.tidy(coupler(&s, &config.c1())?);
    let s = delay(&s, ports::DELAY_ARM, 1)?;
    let s = rotate_polarization(&s, ports::DELAY_ARM);
    let mut s = pbs(&s, &config.pbs(), Traversal::Forward)?;
    let mut lost = 0.0;
    for stage in 0..config.stages() {
        let (next, l) = mz_stage(config, s, stage)?;
        s = next;
        lost += l;
    }
    let sched =
        PhaseSchedule::for_polarization(&s, ports::LINE, Polarization::V, config.driven_phase(phi_a))?;
    let s = phase_modulator(&s, ports::LINE, &sched);
    let s = faraday_mirror(&s, ports::LINE);
    Ok(PreparedChannel {
        state: config.tidy(s),
        lost,
    })
}

/// Return pass from the channel up to (not including) C1.
struct ArmState {
    before_bob_modulator: FieldState,
    arms: FieldState,
    lost: f64,
}

fn return_to_arms(config: &ApparatusConfig, channel: &FieldState, phi_b: f64) -> Result<ArmState> {
    let mut s = channel.clone();
    let mut lost = 0.0;
    for stage in (0..config.stages()).rev() {
        let (next, l) = mz_stage(config, s, stage)?;
        s = next;
        lost += l;
    }
    let before_bob_modulator = s.clone();
    let sched =
        PhaseSchedule::for_polarization(&s, ports::LINE, Polarization::H, config.driven_phase(phi_b))?;
    let s = phase_modulator(&s, ports::LINE, &sched);
    let s = pbs(&s, &config.pbs(), Traversal::Backward)?;
    let s = rotate_polarization(&s, ports::DELAY_ARM);
    let s = delay(&s, ports::DELAY_ARM, 1)?;
    Ok(ArmState {
        before_bob_modulator,
        arms: config.tidy(s),
        lost,
    })
}

/// Every output bin is at least one lattice step after the source pulse.
const OUTPUT_ORIGIN: u32 = 1;

fn output_label(absolute: u32) -> u32 {
    absolute
        .checked_sub(OUTPUT_ORIGIN)
        .expect("light reaches the detector no earlier than one bin after emission")
}

/// Intensities C1 would deliver if its two inputs added incoherently.
fn incoherent_outputs(config: &ApparatusConfig, arms: &FieldState) -> BTreeMap<(OutputPort, u32), f64> {
    let t = config.c1().transmittance;
    let mut out = BTreeMap::new();
    for (mode, amp) in arms.iter() {
        let p = amp.norm_sqr();
        let bin = output_label(mode.time_bin);
        let (straight, cross) = if mode.path == ports::SOURCE_ARM {
            (OutputPort::P1, OutputPort::P2)
        } else if mode.path == ports::DELAY_ARM {
            (OutputPort::P2, OutputPort::P1)
        } else {
            continue;
        };
        *out.entry((straight, bin)).or_insert(0.0) += t * p;
        *out.entry((cross, bin)).or_insert(0.0) += (1.0 - t) * p;
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundTripResult {
    /// Noisy state on the channel as it leaves Alice.
    pub channel: FieldState,
    /// State entering Bob's modulator after the return filtration pass.
    pub before_bob_modulator: FieldState,
    /// Amplitudes on P1/P2, bins labeled from the output origin.
    pub detector: FieldState,
    incoherent: BTreeMap<(OutputPort, u32), f64>,
    pub input_probability: f64,
    pub lost_forward: f64,
    pub lost_return: f64,
    fringe_factor: f64,
}

impl RoundTripResult {
    /// Probability in `gate_bin` at `port`. With a fringe factor below 1 the
    /// missing coherence is replaced by the incoherent sum of C1's inputs.
    pub fn intensity(&self, port: OutputPort, gate_bin: u32) -> f64 {
        let coherent: f64 = self
            .detector
            .iter()
            .filter(|(m, _)| m.path == port.port() && m.time_bin == gate_bin)
            .map(|(_, a)| a.norm_sqr())
            .sum();
        let incoherent = self.incoherent.get(&(port, gate_bin)).copied().unwrap_or(0.0);
        self.fringe_factor * coherent + (1.0 - self.fringe_factor) * incoherent
    }

    pub fn detected_probability(&self) -> f64 {
        self.detector.total_probability()
    }

    pub fn lost_probability(&self) -> f64 {
        self.lost_forward + self.lost_return
    }

    pub fn output_bins(&self) -> Vec<u32> {
        let mut bins = self.detector.bins_on(ports::P1);
        bins.extend(self.detector.bins_on(ports::P2));
        bins.sort_unstable();
        bins.dedup();
        bins
    }
}

/// Full element-by-element round trip.
pub fn propagate(
    config: &ApparatusConfig,
    phi_a: f64,
    phi_b: f64,
    noise: &NoiseSample,
) -> Result<RoundTripResult> {
    let prepared = prepare_channel(config, phi_a)?;
    if let Some(bin) = prepared.bins().into_iter().find(|b| !noise.covers(*b)) {
        return Err(Error::MissingNoiseBin(bin));
    }
    let channel = config.tidy(apply_noise(&prepared.state, noise, ports::LINE)?);
    let mut result = propagate_from_channel(config, &channel, phi_b)?;
    result.lost_forward = prepared.lost;
    Ok(result)
}

/// Return pass for an arbitrary state on the channel (e.g. one injected by an
/// eavesdropper). `input_probability` is the channel state's norm and
/// `lost_forward` is zero.
pub fn propagate_from_channel(
    config: &ApparatusConfig,
    channel: &FieldState,
    phi_b: f64,
) -> Result<RoundTripResult> {
    config.validate()?;
    let ArmState {
        before_bob_modulator,
        arms,
        lost,
    } = return_to_arms(config, channel, phi_b)?;
    let incoherent = incoherent_outputs(config, &arms);
    let s = config.tidy(coupler(&arms, &config.c1())?);
    let s = route(&s, ports::SOURCE_ARM, ports::P1);
    let s = route(&s, ports::DELAY_ARM, ports::P2);
    let detector = FieldState::from_amplitudes(
        s.iter().map(|(m, a)| {
            (
                Mode {
                    time_bin: output_label(m.time_bin),
                    ..*m
                },
                *a,
            )
        }),
        s.statistics(),
    );
    Ok(RoundTripResult {
        channel: channel.clone(),
        before_bob_modulator,
        detector,
        incoherent,
        input_probability: channel.total_probability(),
        lost_forward: 0.0,
        lost_return: lost,
        fringe_factor: config.fringe_factor,
    })
}

/// Draws the channel noise for one round from `rng`.
pub fn sample_channel_noise<R: Rng + ?Sized>(
    prepared: &PreparedChannel,
    model: &NoiseModel,
    rng: &mut R,
) -> NoiseSample {
    crate::noise::sample_phases(model, prepared.bins(), rng)
}

/// Linear map from channel amplitudes to C1's input arms for one Bob setting.
#[derive(Debug, Clone)]
pub struct ReturnMap {
    channel_modes: Vec<Mode>,
    /// Rows grouped by output bin: for each bin, (coefficients into the source
    /// arm, coefficients into the delay arm), one pair per polarization.
    rows: Vec<(u32, Vec<[Vec<Complex64>; 2]>)>,
    central_bin: u32,
    transmittance: f64,
    fringe_factor: f64,
}

/// Noise-free channel amplitudes in a fixed mode order, plus the bin index of
/// each mode.
#[derive(Debug, Clone)]
pub struct ChannelVector {
    pub modes: Vec<Mode>,
    pub amplitudes: Vec<Complex64>,
    pub bins: Vec<u32>,
    bin_of_mode: Vec<usize>,
}

impl ChannelVector {
    pub fn new(prepared: &PreparedChannel) -> Self {
        let bins = prepared.bins();
        let modes: Vec<Mode> = prepared.state.modes().copied().collect();
        let bin_of_mode = modes
            .iter()
            .map(|m| bins.binary_search(&m.time_bin).expect("bin listed"))
            .collect();
        ChannelVector {
            amplitudes: modes.iter().map(|m| prepared.state.amplitude(m)).collect(),
            modes,
            bins,
            bin_of_mode,
        }
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum()
    }

    /// Applies one phase per channel bin (indexed like `self.bins`).
    pub fn with_phases(&self, phases: &[f64], out: &mut Vec<Complex64>) {
        out.clear();
        out.extend(
            self.amplitudes
                .iter()
                .zip(&self.bin_of_mode)
                .map(|(a, &b)| a * Complex64::from_polar(1.0, phases[b])),
        );
    }

    /// Draws the phases for one round, in ascending bin order.
    pub fn sample_phases<R: Rng + ?Sized>(&self, sigma: f64, rng: &mut R, out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.bins.iter().map(|_| gaussian_phase(sigma, rng)));
    }

    /// Haar-random pure state on the channel modes, scaled to this vector's
    /// norm.
    pub fn haar_random<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut Vec<Complex64>) {
        out.clear();
        out.extend(self.modes.iter().map(|_| {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            Complex64::new(re, im)
        }));
        let norm: f64 = out.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        let scale = self.norm_sqr().sqrt() / norm;
        out.iter_mut().for_each(|a| *a *= scale);
    }
}

impl ReturnMap {
    /// Compiles the return pass for Bob's phase `phi_b` by propagating each
    /// channel mode of `channel` separately.
    pub fn compile(config: &ApparatusConfig, channel: &ChannelVector, phi_b: f64) -> Result<Self> {
        config.validate()?;
        let one = Complex64::new(1.0, 0.0);
        let mut columns = Vec::with_capacity(channel.modes.len());
        for mode in &channel.modes {
            let basis = FieldState::from_amplitudes([(*mode, one)], config.source);
            columns.push(return_to_arms(config, &basis, phi_b)?.arms);
        }
        let mut by_bin: BTreeMap<u32, BTreeMap<Polarization, [Vec<Complex64>; 2]>> = BTreeMap::new();
        for (j, col) in columns.iter().enumerate() {
            for (m, a) in col.iter() {
                let arm = if m.path == ports::SOURCE_ARM {
                    0
                } else if m.path == ports::DELAY_ARM {
                    1
                } else {
                    continue;
                };
                let entry = by_bin
                    .entry(output_label(m.time_bin))
                    .or_default()
                    .entry(m.pol)
                    .or_insert_with(|| {
                        [vec![ZERO; channel.modes.len()], vec![ZERO; channel.modes.len()]]
                    });
                entry[arm][j] += a;
            }
        }
        Ok(ReturnMap {
            channel_modes: channel.modes.clone(),
            rows: by_bin
                .into_iter()
                .map(|(bin, pols)| (bin, pols.into_values().collect()))
                .collect(),
            central_bin: config.central_bin(),
            transmittance: config.c1().transmittance,
            fringe_factor: config.fringe_factor,
        })
    }

    pub fn central_bin(&self) -> u32 {
        self.central_bin
    }

    pub fn output_bins(&self) -> impl Iterator<Item = u32> + '_ {
        self.rows.iter().map(|(b, _)| *b)
    }

    /// `[P1, P2]` intensities in output bin `bin` for channel amplitudes `x`.
    pub fn intensities(&self, x: &[Complex64], bin: u32) -> [f64; 2] {
        debug_assert_eq!(x.len(), self.channel_modes.len());
        let Ok(k) = self.rows.binary_search_by_key(&bin, |(b, _)| *b) else {
            return [0.0; 2];
        };
        let t = self.transmittance.sqrt();
        let r = Complex64::new(0.0, (1.0 - self.transmittance).sqrt());
        let f = self.fringe_factor;
        let mut out = [0.0; 2];
        for [short_row, long_row] in &self.rows[k].1 {
            let s: Complex64 = short_row.iter().zip(x).map(|(c, a)| c * a).sum();
            let l: Complex64 = long_row.iter().zip(x).map(|(c, a)| c * a).sum();
            let (sp, lp) = (s.norm_sqr(), l.norm_sqr());
            let p1 = (t * s + r * l).norm_sqr();
            let p2 = (r * s + t * l).norm_sqr();
            let tt = self.transmittance;
            out[0] += f * p1 + (1.0 - f) * (tt * sp + (1.0 - tt) * lp);
            out[1] += f * p2 + (1.0 - f) * ((1.0 - tt) * sp + tt * lp);
        }
        out
    }

    pub fn intensity(&self, x: &[Complex64], port: OutputPort, bin: u32) -> f64 {
        self.intensities(x, bin)[port.index()]
    }
}

/// Monte Carlo fringe visibility at the central output bin of P1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VisibilityEstimate {
    pub visibility: f64,
    pub stderr: f64,
    pub i_max: f64,
    pub i_min: f64,
    pub trials: u64,
}

/// Running means and co-moments of `(hi - lo, hi + lo)`, merged with the
/// pairwise update so that constant inputs give exactly zero variance.
#[derive(Debug, Clone, Copy, Default)]
struct PairMoments {
    n: f64,
    mean_d: f64,
    mean_s: f64,
    m2_d: f64,
    m2_s: f64,
    c_ds: f64,
}

impl PairMoments {
    fn push(&mut self, hi: f64, lo: f64) {
        let (d, s) = (hi - lo, hi + lo);
        self.n += 1.0;
        let dd = d - self.mean_d;
        let ds = s - self.mean_s;
        self.mean_d += dd / self.n;
        self.mean_s += ds / self.n;
        self.m2_d += dd * (d - self.mean_d);
        self.m2_s += ds * (s - self.mean_s);
        self.c_ds += dd * (s - self.mean_s);
    }

    fn merge(&mut self, o: PairMoments) {
        if o.n == 0.0 {
            return;
        }
        if self.n == 0.0 {
            *self = o;
            return;
        }
        let n = self.n + o.n;
        let dd = o.mean_d - self.mean_d;
        let ds = o.mean_s - self.mean_s;
        let w = self.n * o.n / n;
        self.m2_d += o.m2_d + dd * dd * w;
        self.m2_s += o.m2_s + ds * ds * w;
        self.c_ds += o.c_ds + dd * ds * w;
        self.mean_d += dd * o.n / n;
        self.mean_s += ds * o.n / n;
        self.n = n;
    }
}

/// Averages the central-bin P1 intensity over `trials` noise realizations with
/// the fringe at its maximum (φ_A = φ_B = 0) and minimum (φ_A = π), using the
/// same noise for both. The standard error comes from the delta method on the
/// ratio of means.
pub fn estimate_visibility(
    config: &ApparatusConfig,
    sigma2: f64,
    trials: u64,
    seed: u64,
) -> Result<VisibilityEstimate> {
    let model = NoiseModel::new(sigma2)?;
    if trials == 0 {
        return Err(Error::Empty("trials"));
    }
    let bright = ChannelVector::new(&prepare_channel(config, 0.0)?);
    let dark = ChannelVector::new(&prepare_channel(config, PI)?);
    let ret = ReturnMap::compile(config, &bright, 0.0)?;
    let gate = ret.central_bin();
    let sigma = model.sigma2().sqrt();

    let m = fold_trials(
        trials,
        || (PairMoments::default(), Vec::new(), Vec::new()),
        |(acc, phases, x), t| {
            let mut rng = substream(seed, "visibility", t);
            bright.sample_phases(sigma, &mut rng, phases);
            bright.with_phases(phases, x);
            let hi = ret.intensity(x, OutputPort::P1, gate);
            dark.with_phases(phases, x);
            let lo = ret.intensity(x, OutputPort::P1, gate);
            acc.push(hi, lo);
        },
        |(a, _, _), (b, _, _)| a.merge(b),
    )
    .0;

    let n = m.n;
    let (d, s) = (m.mean_d, m.mean_s);
    let (var_d, var_s, cov) = (m.m2_d / n, m.m2_s / n, m.c_ds / n);
    let v = d / s;
    let var_v = (var_d / (s * s) - 2.0 * d * cov / s.powi(3) + d * d * var_s / s.powi(4)).max(0.0);
    Ok(VisibilityEstimate {
        visibility: v,
        stderr: (var_v / n).sqrt(),
        i_max: (s + d) / 2.0,
        i_min: (s - d) / 2.0,
        trials,
    })
}
