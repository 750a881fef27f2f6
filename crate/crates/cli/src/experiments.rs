//! The three experiments behind the `sweep`, `qkd` and `eve` subcommands.
//! Each returns its CSV text and a plain-text summary.

use std::fmt::Write as _;

use tbqkd::apparatus::estimate_visibility;
use tbqkd::detection::calibrate_dark_for_raw_error;
use tbqkd::noise::{sigma2_for_visibility, visibility_filtered, visibility_unfiltered};
use tbqkd::protocol::{
    classify_visibility, eve_replacement_analysis, fringe_statistics, run_session_tally, FringeBin, SessionTally,
    VISIBILITY_INSECURE, VISIBILITY_SECURE,
};
use tbqkd::streams::substream_seed;
use tbqkd::{
    ApparatusConfig, EveModel, NoiseModel, Result, SecurityVerdict, SessionConfig, Statistics,
};

use crate::config::{ExperimentConfig, Mode};

pub const SWEEP_HEADER: &str = "sigma2,variant,V_mc,stderr,V_closed_form,abs_diff";
pub const QKD_HEADER: &str = "filtration,sigma2,mu,dark_prob,n_sifted,ber,ci95,verdict";
pub const EVE_HEADER: &str =
    "n_pairs,sigma2,p_replace,ber_with_eve,yield_legit,yield_replaced,n_legit,n_replaced";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Report {
    pub csv: String,
    pub summary: String,
}

/// 17 significant digits, so every value round-trips.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

pub fn run(cfg: &ExperimentConfig) -> Result<Report> {
    match cfg.mode {
        Mode::Sweep => run_visibility_sweep(cfg),
        Mode::Qkd => run_qkd(cfg),
        Mode::Eve => run_eve(cfg),
    }
}

/// Closed-form visibility of an apparatus variant, fringe factor included.
pub fn closed_form_visibility(apparatus: &ApparatusConfig, sigma2: f64) -> f64 {
    let n = apparatus.effective_pairs();
    let v = if n == 1 {
        visibility_unfiltered(sigma2)
    } else {
        visibility_filtered(n, sigma2)
    };
    apparatus.fringe_factor * v
}

fn variant_name(n: u32) -> String {
    if n == 1 {
        "unfiltered".into()
    } else {
        format!("filtered_n{n}")
    }
}

struct SweepPoint {
    sigma2: f64,
    v_mc: f64,
    v_cf: f64,
}

pub fn run_visibility_sweep(cfg: &ExperimentConfig) -> Result<Report> {
    let mut variants = vec![1];
    if cfg.apparatus.filtration {
        variants.push(cfg.apparatus.n_pairs);
        variants.extend(&cfg.extra_n_pairs);
    }
    let mut seen = Vec::new();
    variants.retain(|n| {
        let fresh = !seen.contains(n);
        seen.push(*n);
        fresh
    });

    let mut csv = format!("{SWEEP_HEADER}\n");
    let mut curves: Vec<Vec<SweepPoint>> = variants.iter().map(|_| Vec::new()).collect();
    for &sigma2 in &cfg.sigma2_grid {
        for (k, &n) in variants.iter().enumerate() {
            let app = cfg.variant(n);
            let est = estimate_visibility(&app, sigma2, cfg.trials, cfg.seed)?;
            let v_cf = closed_form_visibility(&app, sigma2);
            writeln!(
                csv,
                "{},{},{},{},{},{}",
                fmt_f64(sigma2),
                variant_name(n),
                fmt_f64(est.visibility),
                fmt_f64(est.stderr),
                fmt_f64(v_cf),
                fmt_f64((est.visibility - v_cf).abs()),
            )
            .unwrap();
            curves[k].push(SweepPoint {
                sigma2,
                v_mc: est.visibility,
                v_cf,
            });
        }
    }

    let mut summary = String::from("security-zone crossings\n");
    for (k, &n) in variants.iter().enumerate() {
        let app = cfg.variant(n);
        for (label, threshold) in [("secure", VISIBILITY_SECURE), ("insecure", VISIBILITY_INSECURE)] {
            let exact = (app.fringe_factor > 0.0)
                .then(|| sigma2_for_visibility(app.effective_pairs(), threshold / app.fringe_factor))
                .flatten();
            writeln!(
                summary,
                "{} V={} ({label}): closed_form_sigma2={} mc_sigma2={}",
                variant_name(n),
                threshold,
                exact.map(fmt_f64).unwrap_or_else(|| "none".into()),
                crossing(&curves[k], threshold).map(fmt_f64).unwrap_or_else(|| "none".into()),
            )
            .unwrap();
        }
    }
    if variants.len() > 1 {
        let filtered = &curves[1];
        summary.push_str("\nunfiltered -> filtered\n");
        for (u, f) in curves[0].iter().zip(filtered) {
            writeln!(
                summary,
                "sigma2={} V={:.4} ({}) -> V={:.4} ({}) [closed form {:.4} -> {:.4}]",
                fmt_f64(u.sigma2),
                u.v_mc,
                classify_visibility(u.v_mc.clamp(0.0, 1.0))?,
                f.v_mc,
                classify_visibility(f.v_mc.clamp(0.0, 1.0))?,
                u.v_cf,
                f.v_cf,
            )
            .unwrap();
        }
    }
    Ok(Report { csv, summary })
}

/// First grid interval where the Monte Carlo curve drops to `threshold`,
/// linearly interpolated.
fn crossing(curve: &[SweepPoint], threshold: f64) -> Option<f64> {
    curve.windows(2).find_map(|w| {
        let (a, b) = (&w[0], &w[1]);
        (a.v_mc > threshold && b.v_mc <= threshold).then(|| {
            a.sigma2 + (a.v_mc - threshold) / (a.v_mc - b.v_mc) * (b.sigma2 - a.sigma2)
        })
    })
}

/// One QKD session row.
#[derive(Debug, Clone, PartialEq)]
pub struct QkdRow {
    pub filtration: bool,
    pub sigma2: f64,
    pub dark_prob: f64,
    pub tally: SessionTally,
    /// `None` when nothing was sifted.
    pub verdict: Option<(f64, f64, SecurityVerdict)>,
}

pub fn qkd_session(cfg: &ExperimentConfig, filtration: bool, sigma2: f64) -> Result<QkdRow> {
    let apparatus = cfg.variant(if filtration { cfg.apparatus.n_pairs } else { 1 });
    let noise = NoiseModel::new(sigma2)?;
    let mut detector = cfg.detector;
    if let Some(target) = cfg.target_raw_error {
        detector.dark_prob =
            calibrate_dark_for_raw_error(target, &apparatus, &detector, sigma2, cfg.calibration_trials, cfg.seed)?;
    }
    let session = SessionConfig::new(apparatus, noise, detector);
    let tally = run_session_tally(&session, cfg.rounds, cfg.seed)?;
    let verdict = match tally.ber() {
        Ok(est) => Some((est.ber, est.ci95, est.verdict()?)),
        Err(_) => None,
    };
    Ok(QkdRow {
        filtration: apparatus.filtration,
        sigma2,
        dark_prob: detector.dark_prob,
        tally,
        verdict,
    })
}

pub fn run_qkd(cfg: &ExperimentConfig) -> Result<Report> {
    let settings: Vec<bool> = if cfg.paired {
        vec![false, true]
    } else {
        vec![cfg.apparatus.filtration]
    };
    let mu = match cfg.apparatus.source {
        Statistics::Coherent { mu } => fmt_f64(mu),
        Statistics::SinglePhoton => String::new(),
    };
    let mut csv = format!("{QKD_HEADER}\n");
    let mut summary = String::new();
    for &sigma2 in &cfg.sigma2_grid {
        let mut verdicts = Vec::new();
        for &filtration in &settings {
            let row = qkd_session(cfg, filtration, sigma2)?;
            let (ber, ci, verdict) = match row.verdict {
                Some((ber, ci, v)) => (fmt_f64(ber), fmt_f64(ci), v.to_string()),
                None => (String::new(), String::new(), "error: no sifted bits".to_string()),
            };
            writeln!(
                csv,
                "{},{},{},{},{},{},{},{}",
                row.filtration,
                fmt_f64(sigma2),
                mu,
                fmt_f64(row.dark_prob),
                row.tally.sifted,
                ber,
                ci,
                verdict
            )
            .unwrap();
            let ber_text = row.verdict.map(|(b, c, _)| format!("{b:.4} +/- {c:.4}")).unwrap_or("n/a".into());
            writeln!(
                summary,
                "sigma2={} filtration={}: BER {} over {} sifted bits -> {}",
                fmt_f64(sigma2),
                row.filtration,
                ber_text,
                row.tally.sifted,
                verdict
            )
            .unwrap();
            verdicts.push(verdict);
        }
        if let [off, on] = verdicts.as_slice() {
            let what = if off == on { "no change" } else { "transition" };
            writeln!(summary, "sigma2={}: {what}: {off} -> {on}", fmt_f64(sigma2)).unwrap();
        }
    }
    Ok(Report { csv, summary })
}

/// Largest binned-probability disagreement between two fringe ensembles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FringeComparison {
    pub bins: usize,
    pub within_3_stderr: usize,
    pub max_abs_diff: f64,
    pub max_z: f64,
}

pub fn compare_fringes(a: &[FringeBin], b: &[FringeBin]) -> FringeComparison {
    let mut out = FringeComparison {
        bins: a.len(),
        within_3_stderr: 0,
        max_abs_diff: 0.0,
        max_z: 0.0,
    };
    for (x, y) in a.iter().zip(b) {
        debug_assert_eq!((x.alice_basis, x.alice_bit, x.bob_basis, x.port, x.bin), (y.alice_basis, y.alice_bit, y.bob_basis, y.port, y.bin));
        let diff = (x.mean - y.mean).abs();
        let se = x.stderr.hypot(y.stderr);
        let z = if se > 0.0 {
            diff / se
        } else if diff == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        if z <= 3.0 {
            out.within_3_stderr += 1;
        }
        out.max_abs_diff = out.max_abs_diff.max(diff);
        out.max_z = out.max_z.max(z);
    }
    out
}

/// Fringe statistics of the attack ensemble against the noise channel with
/// the same mean coherence, `(1 - p) e^{-σ²} = e^{-σ'²}`. Only meaningful
/// without filtration.
pub fn eve_equivalent_noise(
    apparatus: &ApparatusConfig,
    sigma2: f64,
    p_replace: f64,
    trials: u64,
    seed: u64,
) -> Result<Option<FringeComparison>> {
    if p_replace >= 1.0 {
        return Ok(None);
    }
    let attacked = fringe_statistics(
        apparatus,
        &NoiseModel::new(sigma2)?,
        &EveModel::random_replacement(p_replace)?,
        trials,
        seed,
    )?;
    let equivalent = NoiseModel::new(sigma2 - (1.0 - p_replace).ln())?;
    let reference = fringe_statistics(
        apparatus,
        &equivalent,
        &EveModel::None,
        trials,
        substream_seed(seed, "eve-reference", 0),
    )?;
    Ok(Some(compare_fringes(&attacked, &reference)))
}

pub fn run_eve(cfg: &ExperimentConfig) -> Result<Report> {
    let apparatus = cfg.effective_apparatus();
    let n = apparatus.effective_pairs();
    let mut csv = format!("{EVE_HEADER}\n");
    let mut summary = String::new();
    for &sigma2 in &cfg.sigma2_grid {
        for &p in &cfg.p_replace {
            let r = eve_replacement_analysis(&apparatus, sigma2, p, cfg.trials, cfg.seed)?;
            writeln!(
                csv,
                "{},{},{},{},{},{},{},{}",
                n,
                fmt_f64(sigma2),
                fmt_f64(p),
                fmt_f64(r.ber_with_eve),
                fmt_opt(r.yield_legit),
                fmt_opt(r.yield_replaced),
                r.n_legit,
                r.n_replaced,
            )
            .unwrap();
            let ratio = match (r.yield_legit, r.yield_replaced) {
                (Some(l), Some(x)) if x > 0.0 => format!("{:.4}", l / x),
                _ => "n/a".into(),
            };
            writeln!(
                summary,
                "n_pairs={n} sigma2={} p_replace={}: BER {:.4}, yield legit/replaced = {ratio}",
                fmt_f64(sigma2),
                fmt_f64(p),
                r.ber_with_eve
            )
            .unwrap();
            if cfg.compare_fringes && n == 1 {
                if let Some(c) = eve_equivalent_noise(&apparatus, sigma2, p, cfg.trials, cfg.seed)? {
                    writeln!(
                        summary,
                        "  vs noise channel at sigma2'={}: {}/{} bins within 3 stderr, max |diff| {:.3e}, max z {:.2}",
                        fmt_f64(sigma2 - (1.0 - p).ln()),
                        c.within_3_stderr,
                        c.bins,
                        c.max_abs_diff,
                        c.max_z
                    )
                    .unwrap();
                }
            }
        }
    }
    Ok(Report { csv, summary })
}
