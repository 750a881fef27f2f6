//! BB84 sessions over the simulated interferometer.
//!
//! Alice picks a basis `b` and bit `k` and drives `φ_A = b·π/2 + k·π`; Bob
//! picks a basis and drives `φ_B = b·π/2`. The fringe at P1 is bright when
//! `φ_A + φ_B ≡ 0 (mod 2π)`, so a P1 click decodes to the bit that makes this
//! true (bit 0 in basis 0, bit 1 in basis 1) and a P2 click to the other.

use std::f64::consts::{FRAC_PI_2, PI};

use num_complex::Complex64;
use rand::Rng;

use crate::apparatus::{prepare_channel, ApparatusConfig, ChannelVector, OutputPort, ReturnMap};
use crate::detection::{click_probability_unchecked, sample_click, DetectorConfig};
use crate::error::{check_unit_interval, Error, Result};
use crate::noise::NoiseModel;
use crate::state::Statistics;
use crate::streams::{fold_trials, substream, StreamRng};

pub const BER_SECURE: f64 = 0.110;
pub const BER_INSECURE: f64 = 0.146;
pub const VISIBILITY_SECURE: f64 = 0.780;
pub const VISIBILITY_INSECURE: f64 = 0.707;

/// Two-sided 95% normal quantile.
const Z95: f64 = 1.959_963_984_540_054;

pub fn alice_phase(basis: u8, bit: u8) -> f64 {
    f64::from(basis) * FRAC_PI_2 + f64::from(bit) * PI
}

pub fn bob_phase(basis: u8) -> f64 {
    f64::from(basis) * FRAC_PI_2
}

/// Bit Bob assigns to a click on `port` when measuring in `bob_basis`.
pub fn decode(bob_basis: u8, port: OutputPort) -> u8 {
    match port {
        OutputPort::P1 => bob_basis,
        OutputPort::P2 => 1 - bob_basis,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundRecord {
    pub alice_basis: u8,
    pub alice_bit: u8,
    pub phi_a: f64,
    pub bob_basis: u8,
    pub monitored_port: OutputPort,
    pub clicked: bool,
    /// The channel state was swapped by the eavesdropper this round.
    pub replaced: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SecurityVerdict {
    Secure,
    Unknown,
    Insecure,
}

impl std::fmt::Display for SecurityVerdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SecurityVerdict::Secure => "Secure",
            SecurityVerdict::Unknown => "Unknown",
            SecurityVerdict::Insecure => "Insecure",
        })
    }
}

/// Secure below 11.0%, insecure from 14.6% on, unknown in between.
pub fn classify(ber: f64) -> Result<SecurityVerdict> {
    if !(0.0..=0.5).contains(&ber) {
        return Err(Error::OutOfRange {
            name: "bit error rate",
            range: "[0, 0.5]",
            value: ber,
        });
    }
    Ok(if ber < BER_SECURE {
        SecurityVerdict::Secure
    } else if ber >= BER_INSECURE {
        SecurityVerdict::Insecure
    } else {
        SecurityVerdict::Unknown
    })
}

/// Visibility form of [`classify`] with the published visibility bounds.
pub fn classify_visibility(v: f64) -> Result<SecurityVerdict> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::OutOfRange {
            name: "visibility",
            range: "[0, 1]",
            value: v,
        });
    }
    Ok(if v > VISIBILITY_SECURE {
        SecurityVerdict::Secure
    } else if v <= VISIBILITY_INSECURE {
        SecurityVerdict::Insecure
    } else {
        SecurityVerdict::Unknown
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EveModel {
    None,
    /// With probability `p_replace` the channel state is discarded and a
    /// Haar-random state on the channel modes is sent on instead.
    RandomReplacement { p_replace: f64 },
}

impl EveModel {
    pub fn random_replacement(p_replace: f64) -> Result<Self> {
        check_unit_interval("replacement probability", p_replace)?;
        Ok(EveModel::RandomReplacement { p_replace })
    }

    fn p_replace(&self) -> f64 {
        match *self {
            EveModel::None => 0.0,
            EveModel::RandomReplacement { p_replace } => p_replace,
        }
    }
}

/// Precompiled channel vectors for the four Alice phases and return maps for
/// Bob's two.
struct Kernel {
    channels: Vec<ChannelVector>,
    returns: Vec<ReturnMap>,
    sigma: f64,
    p_replace: f64,
}

impl Kernel {
    fn new(apparatus: &ApparatusConfig, noise: &NoiseModel, eve: &EveModel) -> Result<Self> {
        check_unit_interval("replacement probability", eve.p_replace())?;
        let mut channels = Vec::with_capacity(4);
        for basis in 0..2 {
            for bit in 0..2 {
                channels.push(ChannelVector::new(&prepare_channel(apparatus, alice_phase(basis, bit))?));
            }
        }
        let returns = (0..2)
            .map(|b| ReturnMap::compile(apparatus, &channels[0], bob_phase(b)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Kernel {
            channels,
            returns,
            sigma: noise.sigma2().sqrt(),
            p_replace: eve.p_replace(),
        })
    }

    fn channel(&self, basis: u8, bit: u8) -> &ChannelVector {
        &self.channels[usize::from(2 * basis + bit)]
    }

    /// Draws the noise phases and Eve's decision for a round. Every round
    /// consumes the replacement uniform so that `p_replace = 0` reproduces
    /// the eavesdropper-free streams exactly.
    fn channel_draw(&self, rng: &mut StreamRng, scratch: &mut Scratch) -> bool {
        self.channels[0].sample_phases(self.sigma, rng, &mut scratch.phases);
        let replaced = rng.random::<f64>() < self.p_replace;
        if replaced {
            self.channels[0].haar_random(rng, &mut scratch.eve);
        }
        replaced
    }

    /// Channel amplitudes reaching Bob for Alice's setting.
    fn state_for<'a>(&self, basis: u8, bit: u8, replaced: bool, scratch: &'a mut Scratch) -> &'a [Complex64] {
        if replaced {
            &scratch.eve
        } else {
            self.channel(basis, bit).with_phases(&scratch.phases, &mut scratch.x);
            &scratch.x
        }
    }

    fn output_bins(&self) -> Vec<u32> {
        self.returns[0].output_bins().collect()
    }
}

#[derive(Default)]
struct Scratch {
    phases: Vec<f64>,
    eve: Vec<Complex64>,
    x: Vec<Complex64>,
}

struct RoundContext<'a> {
    kernel: &'a Kernel,
    detector: &'a DetectorConfig,
    statistics: Statistics,
    gate: u32,
    seed: u64,
}

impl RoundContext<'_> {
    fn round(&self, index: u64, scratch: &mut Scratch) -> RoundRecord {
        let mut rng = substream(self.seed, "qkd", index);
        let alice_basis = u8::from(rng.random::<bool>());
        let alice_bit = u8::from(rng.random::<bool>());
        let bob_basis = u8::from(rng.random::<bool>());
        let replaced = self.kernel.channel_draw(&mut rng, scratch);
        let x = self.kernel.state_for(alice_basis, alice_bit, replaced, scratch);
        let port = self.detector.port;
        let intensity = self.kernel.returns[usize::from(bob_basis)].intensity(x, port, self.gate);
        let p = click_probability_unchecked(intensity, self.statistics, self.detector);
        RoundRecord {
            alice_basis,
            alice_bit,
            phi_a: alice_phase(alice_basis, alice_bit),
            bob_basis,
            monitored_port: port,
            clicked: sample_click(p, &mut rng),
            replaced,
        }
    }
}

/// Everything a BB84 session needs besides its length and seed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SessionConfig {
    pub apparatus: ApparatusConfig,
    pub noise: NoiseModel,
    pub detector: DetectorConfig,
    pub eve: EveModel,
}

impl SessionConfig {
    pub fn new(apparatus: ApparatusConfig, noise: NoiseModel, detector: DetectorConfig) -> Self {
        SessionConfig {
            apparatus,
            noise,
            detector,
            eve: EveModel::None,
        }
    }
}

fn with_rounds<T>(
    session: &SessionConfig,
    seed: u64,
    f: impl FnOnce(&RoundContext<'_>) -> T,
) -> Result<T> {
    session.apparatus.validate()?;
    session.detector.validate()?;
    let kernel = Kernel::new(&session.apparatus, &session.noise, &session.eve)?;
    let ctx = RoundContext {
        kernel: &kernel,
        detector: &session.detector,
        statistics: session.apparatus.source,
        gate: session.detector.gate(&session.apparatus),
        seed,
    };
    Ok(f(&ctx))
}

/// Runs `rounds` BB84 rounds. Round `i` draws only from substream
/// `(seed, "qkd", i)`, so the records do not depend on the thread count.
pub fn run_session(session: &SessionConfig, rounds: u64, seed: u64) -> Result<Vec<RoundRecord>> {
    if rounds == 0 {
        return Err(Error::Empty("rounds"));
    }
    with_rounds(session, seed, |ctx| {
        fold_trials(
            rounds,
            || (Vec::new(), Scratch::default()),
            |(records, scratch), i| records.push(ctx.round(i, scratch)),
            |(all, _), (part, _)| all.extend(part),
        )
        .0
    })
}

/// Streaming counterpart of [`run_session`] followed by [`sift`]: same rounds,
/// only the counts are kept.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SessionTally {
    pub rounds: u64,
    pub clicks: u64,
    pub sifted: u64,
    pub errors: u64,
}

impl SessionTally {
    fn push(&mut self, r: &RoundRecord) {
        self.rounds += 1;
        if r.clicked {
            self.clicks += 1;
            if r.alice_basis == r.bob_basis {
                self.sifted += 1;
                if decode(r.bob_basis, r.monitored_port) != r.alice_bit {
                    self.errors += 1;
                }
            }
        }
    }

    fn merge(&mut self, o: SessionTally) {
        self.rounds += o.rounds;
        self.clicks += o.clicks;
        self.sifted += o.sifted;
        self.errors += o.errors;
    }

    pub fn ber(&self) -> Result<BerEstimate> {
        BerEstimate::from_counts(self.errors, self.sifted)
    }
}

pub fn run_session_tally(session: &SessionConfig, rounds: u64, seed: u64) -> Result<SessionTally> {
    if rounds == 0 {
        return Err(Error::Empty("rounds"));
    }
    with_rounds(session, seed, |ctx| {
        fold_trials(
            rounds,
            || (SessionTally::default(), Scratch::default()),
            |(tally, scratch), i| tally.push(&ctx.round(i, scratch)),
            |(all, _), (part, _)| all.merge(part),
        )
        .0
    })
}

/// Keeps clicked rounds with matching bases as `(alice_bit, bob_bit)`.
pub fn sift(records: &[RoundRecord]) -> Vec<(u8, u8)> {
    records
        .iter()
        .filter(|r| r.clicked && r.alice_basis == r.bob_basis)
        .map(|r| (r.alice_bit, decode(r.bob_basis, r.monitored_port)))
        .collect()
}

/// Sifted-key error rate with its 95% Wilson score interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BerEstimate {
    pub ber: f64,
    /// Half-width of the Wilson interval.
    pub ci95: f64,
    pub lower: f64,
    pub upper: f64,
    pub n: u64,
}

impl BerEstimate {
    pub fn from_counts(errors: u64, n: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::Empty("sifted key"));
        }
        let nf = n as f64;
        let p = errors as f64 / nf;
        let z2 = Z95 * Z95;
        let denom = 1.0 + z2 / nf;
        let center = (p + z2 / (2.0 * nf)) / denom;
        let half = Z95 * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt() / denom;
        Ok(BerEstimate {
            ber: p,
            ci95: half,
            lower: if errors == 0 { 0.0 } else { (center - half).max(0.0) },
            upper: if errors == n { 1.0 } else { (center + half).min(1.0) },
            n,
        })
    }

    pub fn verdict(&self) -> Result<SecurityVerdict> {
        classify(self.ber.min(0.5))
    }
}

pub fn estimate_ber(sifted: &[(u8, u8)]) -> Result<BerEstimate> {
    let errors = sifted.iter().filter(|(a, b)| a != b).count() as u64;
    BerEstimate::from_counts(errors, sifted.len() as u64)
}

/// Expected sifted error rate, averaging exact click probabilities over
/// `trials` noise samples instead of sampling clicks.
pub fn expected_raw_error(
    apparatus: &ApparatusConfig,
    noise: &NoiseModel,
    detector: &DetectorConfig,
    trials: u64,
    seed: u64,
) -> Result<f64> {
    apparatus.validate()?;
    detector.validate()?;
    if trials == 0 {
        return Err(Error::Empty("trials"));
    }
    let kernel = Kernel::new(apparatus, noise, &EveModel::None)?;
    let gate = detector.gate(apparatus);
    let port = detector.port;
    let (errors, total, _) = fold_trials(
        trials,
        || (0.0, 0.0, Scratch::default()),
        |(errors, total, scratch), t| {
            let mut rng = substream(seed, "raw-error", t);
            kernel.channel_draw(&mut rng, scratch);
            for basis in 0..2u8 {
                for bit in 0..2u8 {
                    let x = kernel.state_for(basis, bit, false, scratch);
                    let i = kernel.returns[usize::from(basis)].intensity(x, port, gate);
                    let p = click_probability_unchecked(i, apparatus.source, detector);
                    *total += p;
                    if decode(basis, port) != bit {
                        *errors += p;
                    }
                }
            }
        },
        |a, b| {
            a.0 += b.0;
            a.1 += b.1;
        },
    );
    if total == 0.0 {
        return Err(Error::Empty("clicks"));
    }
    Ok(errors / total)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EveReport {
    /// Error rate of P1 clicks in matched bases, weighted by click intensity.
    pub ber_with_eve: f64,
    /// Mean fraction of the channel probability reaching the central bin in
    /// rounds Eve left alone. `None` if there were no such rounds.
    pub yield_legit: Option<f64>,
    /// Same for rounds where Eve substituted a random state.
    pub yield_replaced: Option<f64>,
    pub n_legit: u64,
    pub n_replaced: u64,
}

#[derive(Default)]
struct EveAccumulator {
    err: f64,
    total: f64,
    yield_legit: f64,
    yield_replaced: f64,
    n_legit: u64,
    n_replaced: u64,
}

/// Intercept-and-replace attack: with probability `p_replace` Eve keeps the
/// state and forwards a Haar-random one over the same channel modes.
pub fn eve_replacement_analysis(
    apparatus: &ApparatusConfig,
    sigma2: f64,
    p_replace: f64,
    trials: u64,
    seed: u64,
) -> Result<EveReport> {
    if trials == 0 {
        return Err(Error::Empty("trials"));
    }
    let noise = NoiseModel::new(sigma2)?;
    let eve = EveModel::random_replacement(p_replace)?;
    let kernel = Kernel::new(apparatus, &noise, &eve)?;
    let gate = apparatus.central_bin();
    let channel_norm = kernel.channels[0].norm_sqr();
    let acc = fold_trials(
        trials,
        || (EveAccumulator::default(), Scratch::default()),
        |(acc, scratch), t| {
            let mut rng = substream(seed, "eve", t);
            let replaced = kernel.channel_draw(&mut rng, scratch);
            for basis in 0..2u8 {
                for bit in 0..2u8 {
                    let x = kernel.state_for(basis, bit, replaced, scratch);
                    let i = kernel.returns[usize::from(basis)].intensity(x, OutputPort::P1, gate);
                    acc.total += i;
                    if decode(basis, OutputPort::P1) != bit {
                        acc.err += i;
                    }
                }
            }
            let x = kernel.state_for(0, 0, replaced, scratch);
            let [p1, p2] = kernel.returns[0].intensities(x, gate);
            let survival = (p1 + p2) / channel_norm;
            if replaced {
                acc.yield_replaced += survival;
                acc.n_replaced += 1;
            } else {
                acc.yield_legit += survival;
                acc.n_legit += 1;
            }
        },
        |(a, _), (b, _)| {
            a.err += b.err;
            a.total += b.total;
            a.yield_legit += b.yield_legit;
            a.yield_replaced += b.yield_replaced;
            a.n_legit += b.n_legit;
            a.n_replaced += b.n_replaced;
        },
    )
    .0;
    let mean = |sum: f64, n: u64| (n > 0).then(|| sum / n as f64);
    Ok(EveReport {
        ber_with_eve: acc.err / acc.total,
        yield_legit: mean(acc.yield_legit, acc.n_legit),
        yield_replaced: mean(acc.yield_replaced, acc.n_replaced),
        n_legit: acc.n_legit,
        n_replaced: acc.n_replaced,
    })
}

/// Mean detection probability for one BB84 setting, port and output bin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FringeBin {
    pub alice_basis: u8,
    pub alice_bit: u8,
    pub bob_basis: u8,
    pub port: OutputPort,
    pub bin: u32,
    pub mean: f64,
    pub stderr: f64,
}

/// Detection probabilities for all 8 BB84 settings, both ports and every
/// output bin, averaged over `trials` channel realizations.
pub fn fringe_statistics(
    apparatus: &ApparatusConfig,
    noise: &NoiseModel,
    eve: &EveModel,
    trials: u64,
    seed: u64,
) -> Result<Vec<FringeBin>> {
    if trials == 0 {
        return Err(Error::Empty("trials"));
    }
    let kernel = Kernel::new(apparatus, noise, eve)?;
    let bins = kernel.output_bins();
    let mut layout = Vec::new();
    for alice_basis in 0..2u8 {
        for alice_bit in 0..2u8 {
            for bob_basis in 0..2u8 {
                for &bin in &bins {
                    layout.push((alice_basis, alice_bit, bob_basis, bin));
                }
            }
        }
    }
    let cells = 2 * layout.len();
    let (sum, sum_sq, _) = fold_trials(
        trials,
        || (vec![0.0; cells], vec![0.0; cells], Scratch::default()),
        |(sum, sum_sq, scratch), t| {
            let mut rng = substream(seed, "fringe", t);
            let replaced = kernel.channel_draw(&mut rng, scratch);
            for (k, &(ab, bit, bb, bin)) in layout.iter().enumerate() {
                let x = kernel.state_for(ab, bit, replaced, scratch);
                let [p1, p2] = kernel.returns[usize::from(bb)].intensities(x, bin);
                for (j, p) in [p1, p2].into_iter().enumerate() {
                    sum[2 * k + j] += p;
                    sum_sq[2 * k + j] += p * p;
                }
            }
        },
        |a, b| {
            a.0.iter_mut().zip(b.0).for_each(|(x, y)| *x += y);
            a.1.iter_mut().zip(b.1).for_each(|(x, y)| *x += y);
        },
    );
    let n = trials as f64;
    let mut out = Vec::with_capacity(cells);
    for (k, &(alice_basis, alice_bit, bob_basis, bin)) in layout.iter().enumerate() {
        for (j, port) in [OutputPort::P1, OutputPort::P2].into_iter().enumerate() {
            let mean = sum[2 * k + j] / n;
            let var = (sum_sq[2 * k + j] / n - mean * mean).max(0.0);
            out.push(FringeBin {
                alice_basis,
                alice_bit,
                bob_basis,
                port,
                bin,
                mean,
                stderr: (var / n).sqrt(),
            });
        }
    }
    Ok(out)
}
