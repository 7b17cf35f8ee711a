//! Batch experiments along a route: one acquisition per measurement point,
//! estimated, scored against the oracle, and written out as plot-ready files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::channel::{oracle_responses, random_profile, simulate_acquisition_with, AcquisitionRecord, Tap, TapProfile};
use crate::config::{Sounder, SounderConfig};
use crate::error::{Error, Result};
use crate::estimator::{correct_ramp, estimate_all, to_time, CalibrationRecord, ImpulseResponseEstimate, Method};
use crate::iq::write_atomic;
use crate::metrics::{compute_metrics, nmse_db, MetricsReport, DB_FLOOR};
use crate::par::Execution;

pub const REPORT_FILE: &str = "report.json";

/// Random profiles for a route of `points` positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomRoute {
    pub points: usize,
    #[serde(default = "default_max_taps")]
    pub max_taps: usize,
    /// Largest tap delay as a fraction of T.
    #[serde(default = "default_spread_fraction")]
    pub max_spread_fraction: f64,
    #[serde(default)]
    pub seed: u64,
    /// Snap delays to the estimate grid `T/(2N)`. Co-located transmitters
    /// only give identical estimates for such delays: off-grid taps are
    /// seen through differently offset combs.
    #[serde(default)]
    pub grid_delays: bool,
}

fn default_max_taps() -> usize {
    4
}

fn default_spread_fraction() -> f64 {
    0.5
}

/// Explicit channels for one point, one profile per transmitter (or a
/// single profile when the scenario is co-located).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointSpec {
    pub channels: Vec<TapProfile>,
}

/// The `[scenario]` table of a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    #[serde(default = "default_method")]
    pub method: Method,
    /// Base seed for receiver noise.
    #[serde(default)]
    pub seed: u64,
    /// Every transmitter sees the first channel of each point.
    #[serde(default)]
    pub co_located: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub points: Vec<PointSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub route: Option<RandomRoute>,
    /// Per-transmitter emission filters (empty for ideal equipment).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub equipment: Vec<TapProfile>,
    /// Measure a cable reference through `equipment` and divide it out.
    #[serde(default)]
    pub calibrate: bool,
}

fn default_method() -> Method {
    Method::Inversion
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            method: Method::Inversion,
            seed: 0,
            co_located: false,
            points: Vec::new(),
            route: None,
            equipment: Vec::new(),
            calibrate: false,
        }
    }
}

impl ScenarioSpec {
    /// Identity channels at a single point.
    pub fn identity() -> Self {
        Self {
            co_located: true,
            points: vec![PointSpec {
                channels: vec![TapProfile::identity()],
            }],
            ..Self::default()
        }
    }

    /// Expands explicit points and the random route into one profile list
    /// per point, explicit points first.
    pub fn point_profiles(&self, sounder: &Sounder) -> Result<Vec<Vec<TapProfile>>> {
        let p = sounder.transmitters();
        let mut out = Vec::new();
        for (i, point) in self.points.iter().enumerate() {
            let channels = match (self.co_located, point.channels.as_slice()) {
                (true, [first, ..]) => vec![first.clone(); p],
                (false, chans) if chans.len() == p => chans.to_vec(),
                _ => {
                    return Err(Error::InvalidConfig(format!(
                        "point {i} has {} channels for {p} transmitters",
                        point.channels.len()
                    )))
                }
            };
            out.push(channels);
        }
        if let Some(route) = &self.route {
            if !(route.max_spread_fraction > 0.0 && route.max_spread_fraction < 1.0) {
                return Err(Error::InvalidConfig(format!(
                    "max_spread_fraction {} must lie in (0, 1)",
                    route.max_spread_fraction
                )));
            }
            let max_delay = route.max_spread_fraction * sounder.base_period();
            let step = sounder.base_period() / sounder.line_count() as f64;
            for i in 0..route.points {
                let draw = |n: usize| {
                    let profile = random_profile(point_seed(route.seed, (i * p + n) as u64), route.max_taps, max_delay);
                    if route.grid_delays {
                        snap_to_grid(&profile, step)
                    } else {
                        profile
                    }
                };
                out.push(if self.co_located {
                    vec![draw(0); p]
                } else {
                    (0..p).map(draw).collect()
                });
            }
        }
        Ok(out)
    }
}

fn snap_to_grid(profile: &TapProfile, step: f64) -> TapProfile {
    TapProfile {
        taps: profile
            .taps
            .iter()
            .map(|t| Tap::new((t.delay_s / step).floor() * step, t.gain))
            .collect(),
    }
}

/// Reads the sounder and the `[scenario]` table (defaulted when absent)
/// from one config file.
pub fn load_scenario(path: &Path) -> Result<(Sounder, ScenarioSpec)> {
    let sounder = crate::config::load_config(path)?;
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::InvalidConfig(e.to_string()))?;
    let spec = match table.remove("scenario") {
        Some(value) => value
            .try_into()
            .map_err(|e: toml::de::Error| Error::InvalidConfig(format!("scenario: {e}")))?,
        None => ScenarioSpec::default(),
    };
    Ok((sounder, spec))
}

/// Decorrelated per-item seed (splitmix64 finalizer).
pub fn point_seed(base: u64, index: u64) -> u64 {
    let mut z = base ^ index.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub seed: u64,
    pub method: Method,
    pub equipment: Vec<TapProfile>,
    pub calibrate: bool,
    /// Where IR files and the report go; `None` keeps everything in memory.
    pub out_dir: Option<PathBuf>,
    pub exec: Execution,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            method: Method::Inversion,
            equipment: Vec::new(),
            calibrate: false,
            out_dir: None,
            exec: Execution::default(),
        }
    }
}

impl RunOptions {
    pub fn from_spec(spec: &ScenarioSpec) -> Self {
        Self {
            seed: spec.seed,
            method: spec.method,
            equipment: spec.equipment.clone(),
            calibrate: spec.calibrate,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PointReport {
    pub index: usize,
    pub noise_seed: u64,
    #[serde(flatten)]
    pub metrics: MetricsReport,
    /// Largest NMSE of channel n against channel 1, in dB, when every
    /// transmitter saw the same channel.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub channel_difference_db: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioReport {
    pub fingerprint: String,
    pub method: Method,
    pub seed: u64,
    pub transmitters: usize,
    pub points: Vec<PointReport>,
}

impl ScenarioReport {
    pub fn worst_nmse_db(&self) -> f64 {
        self.points
            .iter()
            .map(|p| p.metrics.worst_nmse_db())
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn worst_channel_difference_db(&self) -> Option<f64> {
        self.points
            .iter()
            .filter_map(|p| p.channel_difference_db)
            .reduce(f64::max)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::InvalidConfig(e.to_string()))
    }
}

/// Estimates and oracles of one point.
#[derive(Debug, Clone)]
pub struct PointResult {
    pub estimates: Vec<ImpulseResponseEstimate>,
    pub oracles: Vec<ImpulseResponseEstimate>,
    pub report: PointReport,
}

/// Acquisition through the equipment alone: identity channels, no noise,
/// no timing offset.
pub fn cable_acquisition(sounder: &Sounder, equipment: &[TapProfile]) -> Result<AcquisitionRecord> {
    let config = SounderConfig {
        snr_db: None,
        timing_offset_s: 0.0,
        ..sounder.config().clone()
    };
    let bench = Sounder::new(config)?;
    let identity = vec![TapProfile::identity(); bench.transmitters()];
    simulate_acquisition_with(&bench, &identity, equipment, 0)
}

pub fn cable_calibration(sounder: &Sounder, equipment: &[TapProfile]) -> Result<CalibrationRecord> {
    CalibrationRecord::from_cable(&cable_acquisition(sounder, equipment)?, sounder)
}

fn prepare_calibration(sounder: &Sounder, options: &RunOptions) -> Result<Option<CalibrationRecord>> {
    if options.calibrate {
        cable_calibration(sounder, &options.equipment).map(Some)
    } else {
        Ok(None)
    }
}

/// What a perfect receiver of `method` returns: the oracle for inversion,
/// the oracle with every line weighted by `|S_n[k]|²` for correlation.
pub fn reference_responses(
    sounder: &Sounder,
    profiles: &[TapProfile],
    method: Method,
) -> Result<Vec<ImpulseResponseEstimate>> {
    let oracles = oracle_responses(sounder, profiles)?;
    if method != Method::Correlation {
        return Ok(oracles);
    }
    oracles
        .iter()
        .map(|o| {
            let comb = sounder.comb(o.channel())?;
            let lines: Vec<_> = o
                .lines()
                .iter()
                .zip(comb.lines())
                .map(|(h, s)| h * s.norm_sqr())
                .collect();
            let weighted = correct_ramp(&to_time(&lines, o.geometry(), Method::Oracle)?)?;
            Ok(weighted)
        })
        .collect()
}

/// Simulates, estimates and scores point `index`.
pub fn run_point(
    sounder: &Sounder,
    index: usize,
    profiles: &[TapProfile],
    cal: Option<&CalibrationRecord>,
    options: &RunOptions,
) -> Result<PointResult> {
    let noise_seed = point_seed(options.seed, index as u64);
    let record = simulate_acquisition_with(sounder, profiles, &options.equipment, noise_seed)?;
    let estimates = estimate_all(&record, cal, sounder, options.method)?;
    let oracles = reference_responses(sounder, profiles, options.method)?;
    let metrics = compute_metrics(&estimates, &oracles)?;
    let channel_difference_db = (profiles.len() > 1 && profiles.iter().all(|p| *p == profiles[0])).then(|| {
        estimates[1..]
            .iter()
            .map(|e| nmse_db(e.samples(), estimates[0].samples()))
            .fold(DB_FLOOR, f64::max)
    });
    Ok(PointResult {
        estimates,
        oracles,
        report: PointReport {
            index,
            noise_seed,
            metrics,
            channel_difference_db,
        },
    })
}

/// Runs every point, writing `point_{index}_ch{n}.csv` per estimate as the
/// point completes and `report.json` once all are done. The first failing
/// point aborts the batch with its index.
pub fn run_scenario(sounder: &Sounder, points: &[Vec<TapProfile>], options: &RunOptions) -> Result<ScenarioReport> {
    let cal = prepare_calibration(sounder, options)?;
    if let Some(dir) = &options.out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let reports = options.exec.try_map_indexed(points.len(), |i| {
        let point = || -> Result<PointReport> {
            let result = run_point(sounder, i, &points[i], cal.as_ref(), options)?;
            if let Some(dir) = &options.out_dir {
                for est in &result.estimates {
                    write_ir_csv(&dir.join(ir_file_name(i, est.channel())), est)?;
                }
            }
            Ok(result.report)
        };
        point().map_err(|e| Error::Point {
            index: i,
            source: Box::new(e),
        })
    })?;
    let report = ScenarioReport {
        fingerprint: sounder.fingerprint().to_string(),
        method: options.method,
        seed: options.seed,
        transmitters: sounder.transmitters(),
        points: reports,
    };
    if let Some(dir) = &options.out_dir {
        write_atomic(&dir.join(REPORT_FILE), report.to_json()?.as_bytes())?;
    }
    Ok(report)
}

pub fn ir_file_name(point: usize, channel: usize) -> String {
    format!("point_{point:05}_ch{channel}.csv")
}

/// `20·log10|x|`, floored at [`DB_FLOOR`].
pub fn magnitude_db(x: num_complex::Complex64) -> f64 {
    let m = x.norm();
    if m == 0.0 {
        DB_FLOOR
    } else {
        (20.0 * m.log10()).max(DB_FLOOR)
    }
}

/// CSV with columns `sample_index,time_s,real,imag,magnitude_db`. Values use
/// shortest round-trip formatting, so the text is deterministic and parses
/// back to the same bits.
pub fn ir_csv(est: &ImpulseResponseEstimate) -> String {
    let mut out = String::from("sample_index,time_s,real,imag,magnitude_db\n");
    for (i, (x, t)) in est.samples().iter().zip(est.times()).enumerate() {
        writeln!(out, "{i},{t:e},{:e},{:e},{}", x.re, x.im, magnitude_db(*x)).expect("string write");
    }
    out
}

pub fn write_ir_csv(path: &Path, est: &ImpulseResponseEstimate) -> Result<()> {
    write_atomic(path, ir_csv(est).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::MULHOUSE;
    use num_complex::Complex64;

    fn mulhouse() -> Sounder {
        Sounder::preset(MULHOUSE).unwrap()
    }

    #[test]
    fn identity_point_is_exact() {
        let s = mulhouse();
        let points = ScenarioSpec::identity().point_profiles(&s).unwrap();
        for method in [Method::Inversion, Method::Correlation] {
            let report = run_scenario(
                &s,
                &points,
                &RunOptions {
                    method,
                    ..RunOptions::default()
                },
            )
            .unwrap();
            assert!(report.worst_nmse_db() <= -200.0, "{method}: {}", report.worst_nmse_db());
        }
    }

    #[test]
    fn co_located_channels_agree() {
        let s = mulhouse();
        let spec = ScenarioSpec {
            co_located: true,
            route: Some(RandomRoute {
                points: 8,
                max_taps: 5,
                max_spread_fraction: 0.8,
                seed: 11,
                grid_delays: true,
            }),
            ..ScenarioSpec::default()
        };
        let points = spec.point_profiles(&s).unwrap();
        let report = run_scenario(&s, &points, &RunOptions::from_spec(&spec)).unwrap();
        assert!(report.worst_channel_difference_db().unwrap() <= -200.0);
    }

    #[test]
    fn off_grid_co_located_taps_differ_by_offset_phase() {
        // single tap at τ: channel 2 = channel 1 · e^{j2πδ(t_i−τ)}, δ = 1/(pT)
        let s = mulhouse();
        let tau = 3.3 * s.base_period() / s.line_count() as f64;
        let tap = TapProfile::single(tau, Complex64::new(0.6, -0.2)).unwrap();
        let r = run_point(&s, 0, &[tap.clone(), tap], None, &RunOptions::default()).unwrap();
        let [a, b] = [&r.estimates[0], &r.estimates[1]];
        let delta = 1.0 / s.span();
        for (i, t) in a.times().into_iter().enumerate() {
            let expect = a.samples()[i] * Complex64::from_polar(1.0, std::f64::consts::TAU * delta * (t - tau));
            assert!((b.samples()[i] - expect).norm() <= 1e-12 * a.peak());
        }
        assert!(r.report.channel_difference_db.unwrap() > -200.0);
    }

    #[test]
    fn batch_of_3000_points_writes_every_record() {
        let s = mulhouse();
        let dir = tempfile::tempdir().unwrap();
        let spec = ScenarioSpec {
            route: Some(RandomRoute {
                points: 3000,
                max_taps: 4,
                max_spread_fraction: 0.5,
                seed: 2,
                grid_delays: false,
            }),
            ..ScenarioSpec::default()
        };
        let points = spec.point_profiles(&s).unwrap();
        let options = RunOptions {
            out_dir: Some(dir.path().to_path_buf()),
            ..RunOptions::from_spec(&spec)
        };
        let report = run_scenario(&s, &points, &options).unwrap();
        assert_eq!(report.points.len(), 3000);
        assert!(report.points.iter().enumerate().all(|(i, p)| p.index == i));
        let csvs = fs::read_dir(dir.path())
            .unwrap()
            .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "csv"))
            .count();
        assert_eq!(csvs, 3000 * s.transmitters());
        assert!(dir.path().join(REPORT_FILE).exists());
    }

    #[test]
    fn outputs_are_deterministic_across_strategies() {
        let mut config = mulhouse().config().clone();
        config.snr_db = Some(20.0);
        let s = Sounder::new(config).unwrap();
        let spec = ScenarioSpec {
            seed: 9,
            route: Some(RandomRoute {
                points: 6,
                max_taps: 3,
                max_spread_fraction: 0.5,
                seed: 4,
                grid_delays: false,
            }),
            ..ScenarioSpec::default()
        };
        let points = spec.point_profiles(&s).unwrap();
        let run = |exec| {
            let dir = tempfile::tempdir().unwrap();
            let options = RunOptions {
                exec,
                out_dir: Some(dir.path().to_path_buf()),
                ..RunOptions::from_spec(&spec)
            };
            run_scenario(&s, &points, &options).unwrap();
            let mut files: Vec<_> = fs::read_dir(dir.path())
                .unwrap()
                .map(|e| {
                    let path = e.unwrap().path();
                    (path.file_name().unwrap().to_owned(), fs::read(&path).unwrap())
                })
                .collect();
            files.sort();
            files
        };
        let a = run(Execution::Parallel);
        assert_eq!(a.len(), 6 * 2 + 1);
        assert_eq!(a, run(Execution::Parallel));
        assert_eq!(a, run(Execution::Sequential));
    }

    #[test]
    fn failing_point_is_named() {
        let s = mulhouse();
        let mut points = ScenarioSpec::identity().point_profiles(&s).unwrap();
        points.push(vec![TapProfile::single(1.0, Complex64::new(1.0, 0.0)).unwrap(); 2]);
        let err = run_scenario(&s, &points, &RunOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Point { index: 1, .. }), "{err}");
    }

    #[test]
    fn spec_parses_from_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        fs::write(
            &path,
            r#"
preset = "mulhouse"
snr_db = 30.0

[scenario]
method = "correlation"
seed = 5
calibrate = true
equipment = [
  { taps = [{ delay_s = 0.0, gain = [1.0, 0.0] }, { delay_s = 1e-7, gain = [0.0, 0.2] }] },
  { taps = [{ delay_s = 0.0, gain = [0.9, 0.1] }] },
]

[[scenario.points]]
channels = [{ taps = [{ delay_s = 2e-6, gain = [0.5, 0.5] }] }, { taps = [] }]

[scenario.route]
points = 3
"#,
        )
        .unwrap();
        let (s, spec) = load_scenario(&path).unwrap();
        assert_eq!(s.config().snr_db, Some(30.0));
        assert_eq!(spec.method, Method::Correlation);
        assert_eq!(spec.equipment.len(), 2);
        let points = spec.point_profiles(&s).unwrap();
        assert_eq!(points.len(), 4);
        assert!(points[0][1].is_silent());
        assert_eq!(spec.route.as_ref().unwrap().max_taps, default_max_taps());
    }

    #[test]
    fn wrong_channel_count_is_rejected() {
        let s = mulhouse();
        let spec = ScenarioSpec {
            points: vec![PointSpec {
                channels: vec![TapProfile::identity()],
            }],
            ..ScenarioSpec::default()
        };
        assert!(spec.point_profiles(&s).is_err());
    }

    #[test]
    fn csv_layout() {
        let s = mulhouse();
        let r = run_point(
            &s,
            0,
            &[TapProfile::identity(), TapProfile::silent()],
            None,
            &RunOptions::default(),
        )
        .unwrap();
        let text = ir_csv(&r.estimates[0]);
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "sample_index,time_s,real,imag,magnitude_db");
        assert_eq!(lines.len(), 1 + s.line_count());
        let first: Vec<f64> = lines[1].split(',').map(|v| v.parse().unwrap()).collect();
        assert_eq!(first[0], 0.0);
        assert_eq!(first[2], r.estimates[0].samples()[0].re);
        assert!((first[4] - magnitude_db(r.estimates[0].samples()[0])).abs() == 0.0);
        assert!(r.report.metrics.cross_talk_db.unwrap() <= -200.0);
    }

    #[test]
    fn point_seeds_differ() {
        let seeds: std::collections::HashSet<_> = (0..1000).map(|i| point_seed(7, i)).collect();
        assert_eq!(seeds.len(), 1000);
    }
}
