//! `combsound validate`: quick self checks on the selected sounder, and the
//! co-located / two-site example data as plot-ready CSV.

use std::fmt::Write as _;
use std::path::Path;

use serde_json::{json, Value};

use combsound::channel::{random_profile, Tap, TapProfile};
use combsound::config::{Sounder, SounderConfig, MULHOUSE};
use combsound::estimator::{ImpulseResponseEstimate, Method};
use combsound::iq::write_atomic;
use combsound::scenario::{magnitude_db, run_point, RunOptions};
use combsound::{Complex64, Error};

use crate::{display, CliResult, Failure};

const TRIALS: u64 = 10;

struct Check {
    name: &'static str,
    passed: bool,
    detail: String,
}

fn check(name: &'static str, result: Result<(bool, String), Error>) -> Check {
    match result {
        Ok((passed, detail)) => Check { name, passed, detail },
        Err(e) => Check {
            name,
            passed: false,
            detail: e.to_string(),
        },
    }
}

fn arithmetic() -> Result<(bool, String), Error> {
    let s = Sounder::preset(MULHOUSE)?;
    let offset = s.geometry(2)?.offset_frequency();
    let ok = (s.base_period() - 20.4e-6).abs() < 1e-18
        && s.record_len() == 1020
        && (offset - 12.5e6 / 510.0).abs() < 1e-9
        && (2.0 * s.band() * s.base_period() - 4.0 * s.half_lines() as f64).abs() < 1e-9;
    Ok((
        ok,
        format!(
            "{MULHOUSE}: T = {:.1} µs, {} samples, offset {offset:.1} Hz",
            s.base_period() * 1e6,
            s.record_len()
        ),
    ))
}

fn grid_profile(s: &Sounder, seed: u64) -> TapProfile {
    let step = s.base_period() / s.line_count() as f64;
    let mut p = random_profile(seed, 6, 0.8 * s.base_period());
    for t in &mut p.taps {
        t.delay_s = (t.delay_s / step).floor() * step;
    }
    p
}

fn round_trip(s: &Sounder, method: Method) -> Result<(bool, String), Error> {
    let options = RunOptions {
        method,
        ..RunOptions::default()
    };
    let mut worst = f64::NEG_INFINITY;
    for trial in 0..TRIALS {
        let profiles: Vec<_> = (0..s.transmitters() as u64)
            .map(|n| random_profile(trial * 16 + n, 6, 0.8 * s.base_period()))
            .collect();
        let r = run_point(s, trial as usize, &profiles, None, &options)?;
        worst = worst.max(r.report.metrics.worst_nmse_db());
    }
    Ok((
        worst <= -200.0,
        format!("{method}, worst NMSE {worst:.1} dB over {TRIALS} points"),
    ))
}

fn cross_talk(s: &Sounder, method: Method) -> Result<(bool, String), Error> {
    let p = s.transmitters();
    if p < 2 {
        return Ok((true, "skipped: single transmitter".into()));
    }
    let options = RunOptions {
        method,
        ..RunOptions::default()
    };
    let mut worst = f64::NEG_INFINITY;
    for trial in 0..TRIALS {
        let mut profiles: Vec<_> = (0..p as u64)
            .map(|n| random_profile(500 + trial * 16 + n, 6, 0.8 * s.base_period()))
            .collect();
        profiles[(trial as usize) % p] = TapProfile::silent();
        let r = run_point(s, trial as usize, &profiles, None, &options)?;
        worst = worst.max(r.report.metrics.cross_talk_db.unwrap_or(f64::INFINITY));
    }
    Ok((worst <= -200.0, format!("silent channel at most {worst:.1} dB")))
}

fn co_located(s: &Sounder) -> Result<(bool, String), Error> {
    if s.transmitters() < 2 {
        return Ok((true, "skipped: single transmitter".into()));
    }
    let mut worst = f64::NEG_INFINITY;
    for trial in 0..TRIALS {
        let profiles = vec![grid_profile(s, 900 + trial); s.transmitters()];
        let r = run_point(s, trial as usize, &profiles, None, &RunOptions::default())?;
        worst = worst.max(r.report.channel_difference_db.unwrap_or(f64::INFINITY));
    }
    Ok((
        worst <= -200.0,
        format!("inter-channel difference at most {worst:.1} dB"),
    ))
}

/// Distinct sites: channel n arrives later and weaker than channel n−1.
fn two_site_profiles(s: &Sounder) -> Vec<TapProfile> {
    let p = s.transmitters();
    let t = s.base_period();
    (0..p)
        .map(|i| {
            let base = 0.5 * i as f64 / p as f64 * t;
            let level = 10f64.powf(-0.25 * i as f64);
            TapProfile {
                taps: [
                    (0.02, Complex64::new(1.0, 0.0)),
                    (0.05, Complex64::new(0.0, 0.5)),
                    (0.11, Complex64::new(-0.25, 0.0)),
                ]
                .into_iter()
                .map(|(d, g)| Tap::new(base + d * t, g * level))
                .collect(),
            }
        })
        .collect()
}

/// Magnitude (dB) vs delay, one column per channel.
fn figure_csv(estimates: &[ImpulseResponseEstimate]) -> String {
    let mut out = String::from("sample_index,delay_s");
    for e in estimates {
        write!(out, ",ch{}_db", e.channel()).expect("string write");
    }
    out.push('\n');
    for (i, t) in estimates[0].times().into_iter().enumerate() {
        write!(out, "{i},{t:e}").expect("string write");
        for e in estimates {
            write!(out, ",{}", magnitude_db(e.samples()[i])).expect("string write");
        }
        out.push('\n');
    }
    out
}

pub fn validate(sounder: &Sounder, out_dir: &Path, method: Method) -> CliResult<Value> {
    let noiseless = Sounder::new(SounderConfig {
        snr_db: None,
        ..sounder.config().clone()
    })?;
    let checks = [
        check("arithmetic", arithmetic()),
        check("round_trip", round_trip(&noiseless, method)),
        check("cross_talk", cross_talk(&noiseless, method)),
        check("co_located", co_located(&noiseless)),
    ];

    // figure data uses the sounder as configured, noise included
    let options = RunOptions::default();
    let mut files = Vec::new();
    let p = sounder.transmitters();
    let same = vec![grid_profile(sounder, 4); p];
    for (name, profiles) in [
        ("fig4_colocated.csv", same),
        ("fig5_two_site.csv", two_site_profiles(sounder)),
    ] {
        let r = run_point(sounder, 0, &profiles, None, &options)?;
        let path = out_dir.join(name);
        write_atomic(&path, figure_csv(&r.estimates).as_bytes())?;
        files.push(display(&path));
    }

    let failed: Vec<String> = checks
        .iter()
        .filter(|c| !c.passed)
        .map(|c| format!("{}: {}", c.name, c.detail))
        .collect();
    if !failed.is_empty() {
        return Err(Failure::new("validation_failed", failed.join("; ")));
    }
    Ok(json!({
        "command": "validate",
        "checks": checks
            .iter()
            .map(|c| json!({ "name": c.name, "passed": c.passed, "detail": c.detail }))
            .collect::<Vec<_>>(),
        "files": files,
    }))
}
