//! Ground-truth multipath channels, receiver noise, and end-to-end
//! simulation of one composite acquisition.
//!
//! Channels act on comb lines, `H(f) = Σ gain·e^{−j2πf·delay}`, so
//! fractional delays are exact.

use std::f64::consts::TAU;
use std::path::Path;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::config::Sounder;
use crate::dft::phasor_table;
use crate::error::{Error, Result};
use crate::estimator::{ImpulseResponseEstimate, Method};
use crate::iq::{read_signal, write_signal, IqMetadata};
use crate::waveform::{composite, synthesize, BasebandSignal, CombGeometry, SpectralComb};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tap {
    pub delay_s: f64,
    /// `[re, im]`.
    pub gain: Complex64,
}

impl Tap {
    pub fn new(delay_s: f64, gain: Complex64) -> Self {
        Self { delay_s, gain }
    }
}

/// Tapped-delay-line channel, static over one acquisition.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TapProfile {
    pub taps: Vec<Tap>,
}

impl TapProfile {
    /// Rejects negative or non-finite delays, non-finite gains, and
    /// profiles whose gains are all zero (use [`TapProfile::silent`]).
    pub fn new(taps: Vec<Tap>) -> Result<Self> {
        let profile = Self { taps };
        profile.validate()?;
        if profile.taps.iter().all(|t| t.gain.norm_sqr() == 0.0) {
            return Err(Error::InvalidProfile("no tap with nonzero gain".into()));
        }
        Ok(profile)
    }

    /// A channel that passes nothing.
    pub fn silent() -> Self {
        Self { taps: Vec::new() }
    }

    /// Unit gain at zero delay.
    pub fn identity() -> Self {
        Self {
            taps: vec![Tap::new(0.0, Complex64::new(1.0, 0.0))],
        }
    }

    pub fn single(delay_s: f64, gain: Complex64) -> Result<Self> {
        Self::new(vec![Tap::new(delay_s, gain)])
    }

    pub fn validate(&self) -> Result<()> {
        for t in &self.taps {
            if !(t.delay_s.is_finite() && t.delay_s >= 0.0) {
                return Err(Error::InvalidProfile(format!(
                    "delay {} must be finite and >= 0",
                    t.delay_s
                )));
            }
            if !(t.gain.re.is_finite() && t.gain.im.is_finite()) {
                return Err(Error::InvalidProfile("gain must be finite".into()));
            }
        }
        Ok(())
    }

    pub fn is_silent(&self) -> bool {
        self.taps.iter().all(|t| t.gain.norm_sqr() == 0.0)
    }

    /// Largest tap delay (0 for an empty profile).
    pub fn spread(&self) -> f64 {
        self.taps.iter().map(|t| t.delay_s).fold(0.0, f64::max)
    }

    pub fn transfer(&self, frequency: f64) -> Complex64 {
        self.taps
            .iter()
            .map(|t| t.gain * Complex64::from_polar(1.0, -TAU * frequency * t.delay_s))
            .sum()
    }

    /// Same taps shifted later by `delay_s`.
    pub fn delayed(&self, delay_s: f64) -> Self {
        Self {
            taps: self
                .taps
                .iter()
                .map(|t| Tap::new(t.delay_s + delay_s, t.gain))
                .collect(),
        }
    }

    pub fn scaled(&self, factor: Complex64) -> Self {
        Self {
            taps: self.taps.iter().map(|t| Tap::new(t.delay_s, t.gain * factor)).collect(),
        }
    }

    /// Parallel combination of two channels.
    pub fn plus(&self, other: &Self) -> Self {
        Self {
            taps: self.taps.iter().chain(&other.taps).copied().collect(),
        }
    }

    fn check_delays(&self, period: f64) -> Result<()> {
        self.validate()?;
        match self.taps.iter().find(|t| t.delay_s >= period) {
            Some(t) => Err(Error::DelayOutOfRange {
                delay: t.delay_s,
                period,
            }),
            None => Ok(()),
        }
    }
}

/// Random profile with 1..=`max_taps` taps, delays uniform in
/// `[0, max_delay_s)` and complex Gaussian gains. Deterministic per seed.
pub fn random_profile(seed: u64, max_taps: usize, max_delay_s: f64) -> TapProfile {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = rng.random_range(1..=max_taps.max(1));
    let normal = Normal::new(0.0, std::f64::consts::FRAC_1_SQRT_2).expect("valid");
    let taps = (0..count)
        .map(|_| {
            let delay = rng.random::<f64>() * max_delay_s;
            let gain = Complex64::new(normal.sample(&mut rng), normal.sample(&mut rng));
            Tap::new(delay, gain)
        })
        .collect();
    TapProfile { taps }
}

/// Multiplies each line by the channel response at its frequency.
pub fn apply_channel(comb: &SpectralComb, profile: &TapProfile) -> Result<SpectralComb> {
    let g = comb.geometry();
    profile.check_delays(g.base_period())?;
    let lines = g
        .ks()
        .zip(comb.lines())
        .map(|(k, &a)| a * profile.transfer(g.frequency(k)))
        .collect();
    comb.with_lines(lines)
}

/// Exact band-limited, T-periodized response of `profile` as seen on the
/// lines of `geometry`: `(1/2N) Σ_k H(f_k) e^{j2π f_k t_i}`, `t_i = iT/(2N)`.
pub fn oracle_ir(profile: &TapProfile, geometry: &CombGeometry) -> Result<ImpulseResponseEstimate> {
    profile.check_delays(geometry.base_period())?;
    let lines = geometry.line_count();
    // f_k·t_i = (p·k + n−1)·i / (p·2N)
    let grid = geometry.modulus() * lines;
    let table = phasor_table(grid);
    let terms: Vec<(i64, Complex64)> = geometry
        .ks()
        .map(|k| {
            (
                geometry.grid_index(k).rem_euclid(grid as i64),
                profile.transfer(geometry.frequency(k)),
            )
        })
        .collect();
    let samples = (0..lines as i64)
        .map(|i| {
            let sum: Complex64 = terms
                .iter()
                .map(|&(m, h)| h * table[((m * i) % grid as i64) as usize])
                .sum();
            sum / lines as f64
        })
        .collect();
    Ok(ImpulseResponseEstimate::new(samples, *geometry, true, Method::Oracle))
}

/// Adds circularly-symmetric complex Gaussian noise at `snr_db` relative to
/// the signal's mean power. `None` or `+∞` leaves the signal untouched.
pub fn add_awgn(signal: &BasebandSignal, snr_db: Option<f64>, seed: u64) -> Result<BasebandSignal> {
    let snr_db = match snr_db {
        Some(s) if s.is_finite() => s,
        Some(s) if s == f64::INFINITY => return Ok(signal.clone()),
        None => return Ok(signal.clone()),
        Some(s) => return Err(Error::InvalidConfig(format!("snr_db {s} is not usable"))),
    };
    let power = signal.mean_power();
    if power == 0.0 {
        return Err(Error::ZeroPowerSignal);
    }
    let variance = power / 10f64.powf(snr_db / 10.0);
    let normal = Normal::new(0.0, (variance / 2.0).sqrt()).expect("finite std dev");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = signal
        .samples()
        .iter()
        .map(|s| s + Complex64::new(normal.sample(&mut rng), normal.sample(&mut rng)))
        .collect();
    BasebandSignal::new(samples, signal.sample_rate(), signal.span())
}

/// One composite received window of f_e·pT samples.
#[derive(Debug, Clone, PartialEq)]
pub struct AcquisitionRecord {
    pub signal: BasebandSignal,
    pub fingerprint: String,
    pub noise_seed: u64,
    pub snr_db: Option<f64>,
    pub transmitters: usize,
}

impl AcquisitionRecord {
    pub fn samples(&self) -> &[Complex64] {
        self.signal.samples()
    }

    pub fn len(&self) -> usize {
        self.signal.len()
    }

    pub fn is_empty(&self) -> bool {
        self.signal.is_empty()
    }
}

pub const ACQUISITION_ROLE: &str = "acquisition";

/// Writes the record as an IQ file plus sidecar carrying fingerprint, seed
/// and SNR.
pub fn write_acquisition(path: &Path, record: &AcquisitionRecord) -> Result<()> {
    let meta = IqMetadata {
        role: Some(ACQUISITION_ROLE.into()),
        fingerprint: Some(record.fingerprint.clone()),
        seed: Some(record.noise_seed),
        snr_db: record.snr_db,
        transmitters: Some(record.transmitters),
        ..IqMetadata::for_signal(&record.signal)
    };
    write_signal(path, &record.signal, &meta)
}

pub fn read_acquisition(path: &Path) -> Result<AcquisitionRecord> {
    let (signal, meta) = read_signal(path)?;
    let missing = |what: &str| Error::Format {
        path: path.to_path_buf(),
        reason: format!("sidecar lacks `{what}`; not an acquisition file"),
    };
    if meta.role.as_deref() != Some(ACQUISITION_ROLE) {
        return Err(missing("role = \"acquisition\""));
    }
    Ok(AcquisitionRecord {
        signal,
        fingerprint: meta.fingerprint.ok_or_else(|| missing("fingerprint"))?,
        noise_seed: meta.seed.unwrap_or(0),
        snr_db: meta.snr_db,
        transmitters: meta.transmitters.ok_or_else(|| missing("transmitters"))?,
    })
}

/// The channel actually seen by transmitter `n`'s lines: the user profile
/// shifted by the receiver timing offset.
pub fn effective_profile(sounder: &Sounder, profile: &TapProfile) -> TapProfile {
    if sounder.config().timing_offset_s == 0.0 {
        profile.clone()
    } else {
        profile.delayed(sounder.config().timing_offset_s)
    }
}

/// Ground-truth responses for all transmitters, ramp-free.
pub fn oracle_responses(sounder: &Sounder, profiles: &[TapProfile]) -> Result<Vec<ImpulseResponseEstimate>> {
    check_profile_count(sounder, profiles)?;
    profiles
        .iter()
        .enumerate()
        .map(|(i, prof)| oracle_ir(&effective_profile(sounder, prof), &sounder.geometry(i + 1)?))
        .collect()
}

fn check_profile_count(sounder: &Sounder, profiles: &[TapProfile]) -> Result<()> {
    if profiles.len() != sounder.transmitters() {
        return Err(Error::InvalidProfile(format!(
            "{} profiles for {} transmitters",
            profiles.len(),
            sounder.transmitters()
        )));
    }
    Ok(())
}

/// Noiseless received branch of transmitter `n` through `profile`, with an
/// optional equipment filter applied at emission.
pub fn received_branch(
    sounder: &Sounder,
    n: usize,
    profile: &TapProfile,
    equipment: Option<&TapProfile>,
) -> Result<BasebandSignal> {
    let mut comb = sounder.comb(n)?.clone();
    if let Some(filter) = equipment {
        comb = apply_channel(&comb, filter)?;
    }
    let comb = apply_channel(&comb, &effective_profile(sounder, profile))?;
    synthesize(&comb, sounder.sample_rate(), sounder.span())
}

/// Builds every branch, sums them and adds receiver noise.
pub fn simulate_acquisition(sounder: &Sounder, profiles: &[TapProfile], seed: u64) -> Result<AcquisitionRecord> {
    simulate_acquisition_with(sounder, profiles, &[], seed)
}

/// As [`simulate_acquisition`], with per-transmitter equipment filters
/// (empty slice for none, otherwise one per transmitter).
pub fn simulate_acquisition_with(
    sounder: &Sounder,
    profiles: &[TapProfile],
    equipment: &[TapProfile],
    seed: u64,
) -> Result<AcquisitionRecord> {
    check_profile_count(sounder, profiles)?;
    if !equipment.is_empty() && equipment.len() != profiles.len() {
        return Err(Error::InvalidProfile(format!(
            "{} equipment filters for {} transmitters",
            equipment.len(),
            profiles.len()
        )));
    }
    let branches = profiles
        .iter()
        .enumerate()
        .map(|(i, prof)| received_branch(sounder, i + 1, prof, equipment.get(i)))
        .collect::<Result<Vec<_>>>()?;
    let clean = composite(&branches)?;
    let snr_db = sounder.config().snr_db;
    let signal = add_awgn(&clean, snr_db, seed)?;
    Ok(AcquisitionRecord {
        signal,
        fingerprint: sounder.fingerprint().to_string(),
        noise_seed: seed,
        snr_db,
        transmitters: sounder.transmitters(),
    })
}
