//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails.

#[path = "../../core/tests/support/dense_network.rs"]
mod dense_network;

use std::f64::consts::PI;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tbqkd::apparatus::{estimate_visibility, ports};
use tbqkd::noise::{visibility_filtered, visibility_unfiltered, NoiseSample};
use tbqkd::protocol::{eve_replacement_analysis, expected_raw_error};
use tbqkd::{
    classify, propagate, ApparatusConfig, DetectorConfig, NoiseModel, Polarization, SecurityVerdict, Statistics,
};
use tbqkd_cli::experiments::{eve_equivalent_noise, qkd_session};
use tbqkd_cli::{parse_config, ExperimentConfig, Mode};

use dense_network::{random_phases, two_pair_state, Dense};

type Outcome = Result<String, String>;

const GRID: [f64; 5] = [0.0, 0.25, 0.5, 1.0, 1.5];
const VISIBILITY_TRIALS: u64 = 100_000;
const HEADLINE_SIGMA2: f64 = 0.3655;
const BASELINE_FRINGE: f64 = 0.972;
const SEED: u64 = 0;

fn ensure(ok: bool, msg: String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg)
    }
}

fn visibility_grid(config: &ApparatusConfig, closed: impl Fn(f64) -> f64) -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for s2 in GRID {
        let est = estimate_visibility(config, s2, VISIBILITY_TRIALS, SEED).map_err(|e| e.to_string())?;
        let tol = (3.0 * est.stderr).max(0.005);
        let diff = (est.visibility - closed(s2)).abs();
        ensure(
            diff <= tol,
            format!("sigma2={s2}: V_mc={:.5} closed={:.5} diff={diff:.2e} > tol {tol:.2e}", est.visibility, closed(s2)),
        )?;
        worst = worst.max(diff / tol);
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 30.0, format!("took {secs:.1} s (target < 30 s)"))?;
    Ok(format!("worst diff/tol {worst:.2}, {secs:.2} s"))
}

fn criterion_1() -> Outcome {
    visibility_grid(&ApparatusConfig::unfiltered(), visibility_unfiltered)
}

fn criterion_2() -> Outcome {
    visibility_grid(&ApparatusConfig::filtered(2), |s2| visibility_filtered(2, s2))
}

fn criterion_3() -> Outcome {
    let mut parts = Vec::new();
    let mut n1 = None;
    for n in [1u32, 2, 4, 8] {
        let est = estimate_visibility(&ApparatusConfig::filtered(n), 1.0, VISIBILITY_TRIALS, SEED)
            .map_err(|e| e.to_string())?;
        let closed = f64::from(n) / (f64::from(n) - 1.0 + 1f64.exp());
        ensure(
            (est.visibility - closed).abs() <= 0.01,
            format!("N={n}: V_mc={:.5} closed={closed:.5}", est.visibility),
        )?;
        if n == 1 {
            n1 = Some(est.visibility);
        }
        parts.push(format!("N={n} {:.4}/{closed:.4}", est.visibility));
    }
    let plain = estimate_visibility(&ApparatusConfig::unfiltered(), 1.0, VISIBILITY_TRIALS, SEED)
        .map_err(|e| e.to_string())?;
    ensure(
        n1 == Some(plain.visibility),
        format!("N=1 gives {n1:?}, unfiltered run gives {}", plain.visibility),
    )?;
    Ok(parts.join(", "))
}

fn headline_config(rounds: u64, extra: &str) -> ExperimentConfig {
    let text = format!("noise.sigma2_grid = {HEADLINE_SIGMA2}\nrounds = {rounds}\napparatus.n_pairs = 2\n{extra}");
    parse_config(Mode::Qkd, Some((Path::new("acceptance.cfg"), &text)), &[]).expect("valid acceptance config")
}

fn session_ber(cfg: &ExperimentConfig, filtration: bool) -> Result<(f64, f64, SecurityVerdict, f64), String> {
    let row = qkd_session(cfg, filtration, HEADLINE_SIGMA2).map_err(|e| e.to_string())?;
    let (ber, ci, verdict) = row.verdict.ok_or("no sifted bits")?;
    Ok((ber, ci, verdict, row.dark_prob))
}

fn criterion_4() -> Outcome {
    let ideal = "apparatus.source = single_photon\ndetector.efficiency = 1\n";
    let cfg = headline_config(10_000_000, ideal);
    let (off, off_ci, off_v, _) = session_ber(&cfg, false)?;
    ensure((off - 0.153).abs() <= 0.005, format!("unfiltered BER {off:.4} not 0.153 +/- 0.005"))?;
    ensure(off_v == SecurityVerdict::Insecure, format!("unfiltered verdict {off_v}"))?;

    let knob = headline_config(10_000_000, &format!("{ideal}apparatus.filtration_fringe_factor = {BASELINE_FRINGE}\n"));
    let (on, on_ci, on_v, _) = session_ber(&knob, true)?;
    ensure((0.10..=0.115).contains(&on), format!("filtered BER {on:.4} outside [0.10, 0.115]"))?;
    ensure(on_v == SecurityVerdict::Secure, format!("filtered verdict {on_v}"))?;

    let (clean, _, _, _) = session_ber(&cfg, true)?;
    ensure((clean - 0.090).abs() <= 0.005, format!("ideal filtered BER {clean:.4} not 0.090 +/- 0.005"))?;
    Ok(format!(
        "{off:.4}+/-{off_ci:.4} {off_v} -> {on:.4}+/-{on_ci:.4} {on_v} (fringe {BASELINE_FRINGE}); ideal filtered {clean:.4}"
    ))
}

fn criterion_5() -> Outcome {
    let config = ApparatusConfig::filtered(2).with_source(Statistics::SinglePhoton);
    let dense = Dense::new(2);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let phi_a = rng.random_range(0.0..2.0 * PI);
        let p = random_phases(&mut rng, 4);
        let noise = NoiseSample::from_pairs(p.iter().enumerate().map(|(b, x)| (b as u32, *x)));
        let r = propagate(&config, phi_a, 0.0, &noise).map_err(|e| e.to_string())?;
        let (oracle, _) = dense.run(phi_a, 0.0, &p);
        for (bin, pol, amp) in two_pair_state(phi_a, [p[0], p[1], p[2], p[3]]) {
            let lib = r.before_bob_modulator.amplitude(&tbqkd::Mode::new(bin as u32, pol, ports::LINE));
            worst = worst.max((lib - amp).norm()).max((dense.line_amp(&oracle, bin, pol) - amp).norm());
        }
        let lib_total = r.before_bob_modulator.total_probability();
        let listed: f64 = two_pair_state(phi_a, [p[0], p[1], p[2], p[3]]).iter().map(|t| t.2.norm_sqr()).sum();
        worst = worst.max((lib_total - listed).abs());
    }
    ensure(worst < 1e-12, format!("max entrywise error {worst:.2e}"))?;

    let r = propagate(&config, 0.0, 0.0, &NoiseSample::zero(0..4)).map_err(|e| e.to_string())?;
    let window = r.before_bob_modulator.project_window([2, 3], ports::LINE).total_probability();
    let (oracle, _) = dense.run(0.0, 0.0, &[0.0; 4]);
    let dense_window =
        dense.line_amp(&oracle, 2, Polarization::V).norm_sqr() + dense.line_amp(&oracle, 3, Polarization::H).norm_sqr();
    ensure(
        (window - 0.25).abs() < 1e-12 && (dense_window - 0.25).abs() < 1e-12,
        format!("window probability {window} (dense {dense_window})"),
    )?;
    Ok(format!("max entrywise error {worst:.1e} over 100 tuples, window {window}"))
}

fn criterion_6() -> Outcome {
    use SecurityVerdict::*;
    let cases = [
        (0.0, Secure),
        (0.109, Secure),
        (0.110, Unknown),
        (0.120, Unknown),
        (0.1459, Unknown),
        (0.146, Insecure),
        (0.30, Insecure),
    ];
    for (ber, want) in cases {
        let got = classify(ber).map_err(|e| e.to_string())?;
        ensure(got == want, format!("{ber} -> {got}, expected {want}"))?;
    }
    Ok("7/7 boundary cases".into())
}

fn criterion_7() -> Outcome {
    let coherent = "apparatus.source = coherent\napparatus.mu = 0.8\ndetector.efficiency = 0.1\n\
                    detector.calibration_trials = 20000\n";
    let knob = format!("apparatus.filtration_fringe_factor = {BASELINE_FRINGE}\n");
    let dark = headline_config(5_000_000, &format!("{coherent}{knob}detector.target_raw_error = 0.30\n"));
    let mut parts = Vec::new();
    for filtration in [false, true] {
        let (raw, _, _, d) = session_ber(&dark, filtration)?;
        ensure(
            (raw - 0.30).abs() <= 0.01,
            format!("filtration={filtration}: raw error {raw:.4} with dark_prob {d:.3e}"),
        )?;
        parts.push(format!("raw {raw:.4} at dark_prob {d:.3e}"));
    }

    let clean = headline_config(1, &format!("{coherent}{knob}"));
    let noise = NoiseModel::new(HEADLINE_SIGMA2).map_err(|e| e.to_string())?;
    let detector = DetectorConfig {
        dark_prob: 0.0,
        ..clean.detector
    };
    let err = |n: u32| {
        expected_raw_error(&clean.variant(n), &noise, &detector, 200_000, SEED).map_err(|e| e.to_string())
    };
    let (off, on) = (err(1)?, err(2)?);
    ensure((off - 0.153).abs() <= 0.005, format!("dark-free unfiltered {off:.4} not 0.153 +/- 0.005"))?;
    ensure((0.10..=0.115).contains(&on), format!("dark-free filtered {on:.4} outside [0.10, 0.115]"))?;
    parts.push(format!("without dark counts {off:.4} -> {on:.4}"));
    Ok(parts.join("; "))
}

fn criterion_8() -> Outcome {
    let unfiltered = ApparatusConfig::unfiltered().with_source(Statistics::SinglePhoton);
    let c = eve_equivalent_noise(&unfiltered, 0.0, 0.5, 1_000_000, SEED)
        .map_err(|e| e.to_string())?
        .ok_or("no comparison")?;
    ensure(
        c.within_3_stderr == c.bins && c.max_abs_diff < 1e-3,
        format!(
            "{}/{} bins within 3 stderr, max |diff| {:.2e}, max z {:.2}",
            c.within_3_stderr, c.bins, c.max_abs_diff, c.max_z
        ),
    )?;

    let r = eve_replacement_analysis(&ApparatusConfig::filtered(2), 0.0, 0.5, 1_000_000, SEED)
        .map_err(|e| e.to_string())?;
    let (legit, replaced) = (r.yield_legit.ok_or("no legit rounds")?, r.yield_replaced.ok_or("no replaced rounds")?);
    let ratio = legit / replaced;
    // Regression constant: legitimate rounds survive filtration twice as often.
    ensure(
        replaced < legit && (ratio - 2.0).abs() < 0.01,
        format!("yield legit {legit:.4} replaced {replaced:.4} ratio {ratio:.4}"),
    )?;
    Ok(format!(
        "N=1: {}/{} bins within 3 stderr (max |diff| {:.1e}); N=2: yield {legit:.4} vs {replaced:.4}, ratio {ratio:.4}",
        c.within_3_stderr, c.bins, c.max_abs_diff
    ))
}

fn run_cli(dir: &Path, name: &str, args: &[&str]) -> Result<Vec<u8>, String> {
    let out = dir.join(name);
    let status = Command::new(env!("CARGO_BIN_EXE_tbqkd"))
        .args(args)
        .arg("--out")
        .arg(&out)
        .status()
        .map_err(|e| e.to_string())?;
    ensure(status.success(), format!("{args:?} exited with {status}"))?;
    std::fs::read(&out).map_err(|e| e.to_string())
}

fn criterion_9() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let runs: [&[&str]; 3] = [
        &["sweep", "--trials", "20000", "--seed", "17"],
        &["qkd", "--rounds", "200000", "--sigma2", "0.3655", "--seed", "17"],
        &["eve", "--trials", "20000", "--sigma2", "0.2", "--seed", "17"],
    ];
    for (k, args) in runs.iter().enumerate() {
        let a = run_cli(dir.path(), &format!("{k}a.csv"), args)?;
        let b = run_cli(dir.path(), &format!("{k}b.csv"), args)?;
        let one = run_cli(dir.path(), &format!("{k}t1.csv"), &[*args, &["--threads", "1"]].concat())?;
        let four = run_cli(dir.path(), &format!("{k}t4.csv"), &[*args, &["--threads", "4"]].concat())?;
        ensure(a == b, format!("{}: repeated runs differ", args[0]))?;
        ensure(one == four && one == a, format!("{}: thread counts disagree", args[0]))?;
        let other = run_cli(dir.path(), &format!("{k}s.csv"), &[&args[..args.len() - 1], &["18"]].concat())?;
        ensure(other != a, format!("{}: seed has no effect", args[0]))?;
    }
    Ok("sweep, qkd, eve byte-identical across repeats and 1/4 threads".into())
}

fn main() {
    let criteria: [(u32, fn() -> Outcome); 9] = [
        (1, criterion_1),
        (2, criterion_2),
        (3, criterion_3),
        (4, criterion_4),
        (5, criterion_5),
        (6, criterion_6),
        (7, criterion_7),
        (8, criterion_8),
        (9, criterion_9),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (n, f) in criteria {
        if !filter.is_empty() && !filter.iter().any(|a| a == &n.to_string()) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {n}: PASS ({secs:.1} s) {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n}: FAIL ({secs:.1} s) {detail}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
