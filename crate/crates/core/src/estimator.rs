//! Recovers all p impulse responses from one composite acquisition.
//!
//! Pipeline: DFT over the full pT record, keep bins `≡ n−1 (mod p)` for
//! channel n, divide by the emitted lines (or correlate), optionally divide
//! by the cable calibration, return to time over one period T, then remove
//! the phase ramp `e^{−j2π(n−1)t/(pT)}` that the comb offset leaves behind.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::AcquisitionRecord;
use crate::config::Sounder;
use crate::dft::{self, unit_phasor};
use crate::error::{Error, Result};
use crate::par::Execution;
use crate::waveform::{synthesize, CombGeometry};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Line-wise division by the emitted comb.
    Inversion,
    /// Circular correlation with the emitted waveform.
    Correlation,
    /// Ground truth computed from the tap profile.
    Oracle,
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "inversion" => Ok(Method::Inversion),
            "correlation" => Ok(Method::Correlation),
            other => Err(Error::InvalidConfig(format!(
                "unknown method `{other}` (expected inversion or correlation)"
            ))),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Inversion => "inversion",
            Method::Correlation => "correlation",
            Method::Oracle => "oracle",
        })
    }
}

/// 2N samples of one channel's band-limited, T-periodized response at
/// `t_i = i·T/(2N)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImpulseResponseEstimate {
    samples: Vec<Complex64>,
    geometry: CombGeometry,
    ramp_corrected: bool,
    method: Method,
}

impl ImpulseResponseEstimate {
    pub fn new(samples: Vec<Complex64>, geometry: CombGeometry, ramp_corrected: bool, method: Method) -> Self {
        assert_eq!(samples.len(), geometry.line_count(), "estimate length must be 2N");
        Self {
            samples,
            geometry,
            ramp_corrected,
            method,
        }
    }

    pub fn samples(&self) -> &[Complex64] {
        &self.samples
    }

    pub fn geometry(&self) -> &CombGeometry {
        &self.geometry
    }

    /// 1-based channel index n.
    pub fn channel(&self) -> usize {
        self.geometry.channel()
    }

    pub fn ramp_corrected(&self) -> bool {
        self.ramp_corrected
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn sample_interval(&self) -> f64 {
        self.geometry.base_period() / self.geometry.line_count() as f64
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.samples.len()).map(|i| self.geometry.sample_time(i)).collect()
    }

    /// `e^{−j2π(n−1)t_i/(pT)}`, the factor left on sample `i` before correction.
    pub fn ramp(&self, i: usize) -> Complex64 {
        ramp(&self.geometry, i)
    }

    /// Line amplitudes (ascending k) this estimate was synthesized from.
    pub fn lines(&self) -> Vec<Complex64> {
        let mut x = self.samples.clone();
        if self.ramp_corrected {
            x.iter_mut()
                .enumerate()
                .for_each(|(i, v)| *v *= ramp(&self.geometry, i));
        }
        let len = x.len();
        let bins = dft::forward(&x);
        self.geometry
            .ks()
            .map(|k| bins[k.rem_euclid(len as i64) as usize] * len as f64)
            .collect()
    }

    pub fn peak(&self) -> f64 {
        dft::peak_magnitude(&self.samples)
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|s| s.norm_sqr()).sum()
    }
}

fn ramp(geometry: &CombGeometry, i: usize) -> Complex64 {
    // t_i/(pT) = i/(p·2N)
    let grid = geometry.modulus() * geometry.line_count();
    unit_phasor(-((geometry.offset_index() * i) as i64), grid)
}

/// DFT of the whole record, bins at `m/(pT)` in natural (m mod M) order.
#[derive(Debug, Clone, PartialEq)]
pub struct ReceivedSpectrum {
    bins: Vec<Complex64>,
}

impl ReceivedSpectrum {
    pub fn bins(&self) -> &[Complex64] {
        &self.bins
    }

    pub fn len(&self) -> usize {
        self.bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }

    /// Bin at signed frequency index m (units of 1/(pT)).
    pub fn bin(&self, m: i64) -> Complex64 {
        self.bins[m.rem_euclid(self.bins.len() as i64) as usize]
    }
}

fn check_record(record: &AcquisitionRecord, sounder: &Sounder) -> Result<()> {
    if record.len() != sounder.record_len() {
        return Err(Error::LengthMismatch {
            expected: sounder.record_len(),
            actual: record.len(),
        });
    }
    Ok(())
}

pub fn analyze(record: &AcquisitionRecord, sounder: &Sounder) -> Result<ReceivedSpectrum> {
    check_record(record, sounder)?;
    Ok(ReceivedSpectrum {
        bins: dft::forward(record.samples()),
    })
}

/// Bins at `k/T + (n−1)/(pT)`, `k ∈ [−N, N−1]`, ascending k.
pub fn extract_lines(spectrum: &ReceivedSpectrum, n: usize, sounder: &Sounder) -> Result<Vec<Complex64>> {
    let g = sounder.geometry(n)?;
    Ok(g.ks().map(|k| spectrum.bin(g.grid_index(k))).collect())
}

/// Line-wise `r/s`, or `r·conj(s)/(|s|² + ridge)` when `ridge > 0`.
pub fn wiener_invert(
    received: &[Complex64],
    emitted: &[Complex64],
    line_floor: f64,
    ridge: f64,
) -> Result<Vec<Complex64>> {
    if received.len() != emitted.len() {
        return Err(Error::SignalMismatch(format!(
            "{} received lines vs {} emitted",
            received.len(),
            emitted.len()
        )));
    }
    let half = (emitted.len() / 2) as i64;
    received
        .iter()
        .zip(emitted)
        .enumerate()
        .map(|(idx, (&r, &s))| {
            let mag = s.norm();
            if mag < line_floor || mag == 0.0 {
                return Err(Error::LineBelowFloor {
                    k: idx as i64 - half,
                    magnitude: mag,
                    floor: line_floor,
                });
            }
            Ok(if ridge > 0.0 {
                r * s.conj() / (s.norm_sqr() + ridge)
            } else {
                r / s
            })
        })
        .collect()
}

/// Back-to-back ("cable") reference lines per channel, each normalized to
/// unit mean magnitude.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationRecord {
    lines: Vec<Vec<Complex64>>,
    reference_gains: Vec<f64>,
}

impl CalibrationRecord {
    pub fn new(raw: Vec<Vec<Complex64>>, floor_rel: f64) -> Result<Self> {
        let mut lines = Vec::with_capacity(raw.len());
        let mut reference_gains = Vec::with_capacity(raw.len());
        for channel in raw {
            let floor = floor_rel * dft::peak_magnitude(&channel);
            let half = (channel.len() / 2) as i64;
            if let Some((idx, l)) = channel
                .iter()
                .enumerate()
                .find(|(_, l)| l.norm() < floor || l.norm() == 0.0)
            {
                return Err(Error::LineBelowFloor {
                    k: idx as i64 - half,
                    magnitude: l.norm(),
                    floor,
                });
            }
            let gain = channel.iter().map(|l| l.norm()).sum::<f64>() / channel.len() as f64;
            lines.push(channel.iter().map(|l| l / gain).collect());
            reference_gains.push(gain);
        }
        Ok(Self { lines, reference_gains })
    }

    /// All-ones reference for `channels` channels of `line_count` lines.
    pub fn unit(channels: usize, line_count: usize) -> Self {
        Self {
            lines: vec![vec![Complex64::new(1.0, 0.0); line_count]; channels],
            reference_gains: vec![1.0; channels],
        }
    }

    /// Measures the reference from an acquisition taken through the
    /// equipment alone (identity propagation channels).
    pub fn from_cable(record: &AcquisitionRecord, sounder: &Sounder) -> Result<Self> {
        let spectrum = analyze(record, sounder)?;
        let raw = (1..=sounder.transmitters())
            .map(|n| {
                let r = extract_lines(&spectrum, n, sounder)?;
                wiener_invert(
                    &r,
                    sounder.comb(n)?.lines(),
                    sounder.line_floor(),
                    sounder.config().ridge,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(raw, sounder.config().line_floor_rel)
    }

    pub fn channels(&self) -> usize {
        self.lines.len()
    }

    /// Normalized reference lines of channel `n`.
    pub fn lines(&self, n: usize) -> Option<&[Complex64]> {
        self.lines.get(n.wrapping_sub(1)).map(Vec::as_slice)
    }

    /// Mean reference magnitude removed by normalization.
    pub fn reference_gain(&self, n: usize) -> Option<f64> {
        self.reference_gains.get(n.wrapping_sub(1)).copied()
    }
}

pub fn apply_calibration(h_lines: &[Complex64], cal: &CalibrationRecord, n: usize) -> Result<Vec<Complex64>> {
    let reference = cal.lines(n).ok_or(Error::TransmitterIndex { n, p: cal.channels() })?;
    if reference.len() != h_lines.len() {
        return Err(Error::SignalMismatch(format!(
            "{} lines vs {} calibration lines",
            h_lines.len(),
            reference.len()
        )));
    }
    Ok(h_lines.iter().zip(reference).map(|(h, r)| h / r).collect())
}

/// Inverse DFT of the 2N lines at `t_i = iT/(2N)`, scaled by `1/(2N)`.
/// The result still carries the channel's phase ramp.
pub fn to_time(lines: &[Complex64], geometry: &CombGeometry, method: Method) -> Result<ImpulseResponseEstimate> {
    let len = geometry.line_count();
    if lines.len() != len {
        return Err(Error::InvalidLineCount {
            lines: lines.len(),
            period: len,
        });
    }
    let mut spectrum = vec![Complex64::new(0.0, 0.0); len];
    for (k, &l) in geometry.ks().zip(lines) {
        spectrum[k.rem_euclid(len as i64) as usize] = l;
    }
    let scale = 1.0 / len as f64;
    let samples = dft::inverse(&spectrum).into_iter().map(|v| v * scale).collect();
    Ok(ImpulseResponseEstimate::new(samples, *geometry, false, method))
}

/// Multiplies sample i by `e^{+j2π(n−1)t_i/(pT)}`.
pub fn correct_ramp(est: &ImpulseResponseEstimate) -> Result<ImpulseResponseEstimate> {
    if est.ramp_corrected {
        return Err(Error::AlreadyCorrected(est.channel()));
    }
    let samples = est
        .samples
        .iter()
        .enumerate()
        .map(|(i, v)| v * ramp(&est.geometry, i).conj())
        .collect();
    Ok(ImpulseResponseEstimate {
        samples,
        ramp_corrected: true,
        ..est.clone()
    })
}

/// `x[d] = (1/M) Σ_i a[(i+d) mod M]·conj(b[i])`, computed through the FFT.
pub fn circular_cross_correlation(a: &[Complex64], b: &[Complex64]) -> Vec<Complex64> {
    assert_eq!(a.len(), b.len(), "length mismatch");
    let fa = dft::forward(a);
    let fb = dft::forward(b);
    let product: Vec<Complex64> = fa.iter().zip(&fb).map(|(x, y)| x * y.conj()).collect();
    dft::inverse(&product)
}

/// Pulse-compression estimate of channel n: correlate the record with the
/// pT-long emitted waveform of transmitter n, fold to one period T and
/// remove the ramp. Equals the inversion estimate with every line weighted
/// by `|S_n[k]|²`.
pub fn correlate_estimate(record: &AcquisitionRecord, n: usize, sounder: &Sounder) -> Result<ImpulseResponseEstimate> {
    check_record(record, sounder)?;
    let comb = sounder.comb(n)?;
    let g = *comb.geometry();
    let reference = synthesize(comb, sounder.sample_rate(), sounder.span())?;
    let xcorr = circular_cross_correlation(record.samples(), reference.samples());
    let lines = g.line_count();
    let uncorrected = if sounder.is_critically_sampled() {
        let len = xcorr.len();
        let mut folded = vec![Complex64::new(0.0, 0.0); lines];
        for (d, x) in xcorr.iter().enumerate() {
            folded[d % lines] += x * unit_phasor(-((g.offset_index() * d) as i64), len);
        }
        // De-ramped and folded, this is already the uncorrected to_time form.
        // 1/p averages the folded periods, 1/(2N) matches the inversion scale.
        let scale = 1.0 / (g.modulus() * lines) as f64;
        folded.iter_mut().for_each(|v| *v *= scale);
        ImpulseResponseEstimate::new(folded, g, false, Method::Correlation)
    } else {
        // pT and T share no sample grid here, so read the lines off the
        // correlation spectrum instead of folding in time.
        let spectrum = ReceivedSpectrum {
            bins: dft::forward(&xcorr),
        };
        let l: Vec<_> = g.ks().map(|k| spectrum.bin(g.grid_index(k))).collect();
        to_time(&l, &g, Method::Correlation)?
    };
    correct_ramp(&uncorrected)
}

/// All p ramp-corrected estimates from one record.
pub fn estimate_all(
    record: &AcquisitionRecord,
    cal: Option<&CalibrationRecord>,
    sounder: &Sounder,
    method: Method,
) -> Result<Vec<ImpulseResponseEstimate>> {
    if record.fingerprint != sounder.fingerprint() {
        return Err(Error::FingerprintMismatch {
            record: record.fingerprint.clone(),
            config: sounder.fingerprint().to_string(),
        });
    }
    check_record(record, sounder)?;
    match method {
        Method::Inversion => {
            let spectrum = analyze(record, sounder)?;
            (1..=sounder.transmitters())
                .map(|n| {
                    let g = sounder.geometry(n)?;
                    let r = extract_lines(&spectrum, n, sounder)?;
                    let mut h = wiener_invert(
                        &r,
                        sounder.comb(n)?.lines(),
                        sounder.line_floor(),
                        sounder.config().ridge,
                    )?;
                    if let Some(cal) = cal {
                        h = apply_calibration(&h, cal, n)?;
                    }
                    correct_ramp(&to_time(&h, &g, Method::Inversion)?)
                })
                .collect()
        }
        Method::Correlation => (1..=sounder.transmitters())
            .map(|n| {
                let est = correlate_estimate(record, n, sounder)?;
                match cal {
                    Some(cal) => {
                        let h = apply_calibration(&est.lines(), cal, n)?;
                        correct_ramp(&to_time(&h, est.geometry(), Method::Correlation)?)
                    }
                    None => Ok(est),
                }
            })
            .collect(),
        Method::Oracle => Err(Error::InvalidConfig("oracle is not an estimation method".into())),
    }
}

/// [`estimate_all`] over many records; output order follows input order.
pub fn estimate_batch(
    records: &[AcquisitionRecord],
    cal: Option<&CalibrationRecord>,
    sounder: &Sounder,
    method: Method,
    exec: Execution,
) -> Result<Vec<Vec<ImpulseResponseEstimate>>> {
    exec.try_map_indexed(records.len(), |i| {
        estimate_all(&records[i], cal, sounder, method).map_err(|e| Error::Point {
            index: i,
            source: Box::new(e),
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{
        oracle_ir, oracle_responses, random_profile, simulate_acquisition, simulate_acquisition_with, Tap, TapProfile,
    };
    use crate::config::{SequenceSource, SounderConfig, MULHOUSE};
    use crate::dft::{forward_direct, max_deviation, peak_magnitude};
    use crate::waveform::{BasebandSignal, SpectralComb};
    use std::f64::consts::TAU;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn sounder(degree: u32, p: usize, half_lines: usize) -> Sounder {
        Sounder::new(SounderConfig::mseq(degree, p, 1e6, half_lines)).unwrap()
    }

    fn record(sounder: &Sounder, samples: Vec<Complex64>) -> AcquisitionRecord {
        AcquisitionRecord {
            signal: BasebandSignal::from_samples(samples, sounder.sample_rate()).unwrap(),
            fingerprint: sounder.fingerprint().into(),
            noise_seed: 0,
            snr_db: None,
            transmitters: sounder.transmitters(),
        }
    }

    fn rel_dev(a: &[Complex64], b: &[Complex64]) -> f64 {
        max_deviation(a, b) / peak_magnitude(b)
    }

    #[test]
    fn analyze_constant_and_single_line() {
        let s = sounder(4, 2, 7);
        let rec = record(&s, vec![c(1.0, 0.0); s.record_len()]);
        let spec = analyze(&rec, &s).unwrap();
        assert!((spec.bin(0) - 1.0).norm() < 1e-15);
        assert!(spec.bins()[1..].iter().all(|b| b.norm() < 1e-12));

        // one line at 3/T + 1/(2T) = grid index 7
        let g = s.geometry(2).unwrap();
        let mut lines = vec![c(0.0, 0.0); 14];
        lines[3 + 7] = c(0.5, -0.25);
        let comb = SpectralComb::new(lines, g).unwrap();
        let sig = synthesize(&comb, s.sample_rate(), s.span()).unwrap();
        let spec = analyze(&record(&s, sig.into_samples()), &s).unwrap();
        for m in 0..spec.len() as i64 {
            let expected = if m == 7 { c(0.5, -0.25) } else { c(0.0, 0.0) };
            assert!((spec.bin(m) - expected).norm() < 1e-12, "bin {m}");
        }

        let short = record(&s, vec![c(1.0, 0.0); s.record_len() - 1]);
        assert!(matches!(analyze(&short, &s), Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn mulhouse_bins_split_by_parity() {
        let s = Sounder::preset(MULHOUSE).unwrap();
        let profiles = [
            TapProfile::single(0.4e-6, c(1.0, 0.2)).unwrap(),
            TapProfile::single(1.3e-6, c(-0.5, 0.7)).unwrap(),
        ];
        let rec = simulate_acquisition(&s, &profiles, 0).unwrap();
        let bins = forward_direct(rec.samples());
        let len = bins.len() as i64;
        let scale = peak_magnitude(&bins);
        for (n, prof) in profiles.iter().enumerate() {
            let comb = s.comb(n + 1).unwrap();
            let g = comb.geometry();
            for (k, line) in g.ks().zip(comb.lines()) {
                let m = g.grid_index(k);
                assert_eq!(m.rem_euclid(2), n as i64);
                let expected = line * prof.transfer(g.frequency(k));
                assert!((bins[m.rem_euclid(len) as usize] - expected).norm() < 1e-12 * scale);
            }
        }
        // everything outside the two combs is empty
        let occupied: std::collections::HashSet<i64> = s
            .combs()
            .iter()
            .flat_map(|c| {
                c.geometry()
                    .ks()
                    .map(|k| c.geometry().grid_index(k).rem_euclid(len))
                    .collect::<Vec<_>>()
            })
            .collect();
        for (m, b) in bins.iter().enumerate() {
            if !occupied.contains(&(m as i64)) {
                assert!(b.norm() <= 1e-12 * scale, "bin {m}");
            }
        }
        let fast = analyze(&rec, &s).unwrap();
        assert!(max_deviation(fast.bins(), &bins) <= 1e-12 * scale);
    }

    #[test]
    fn extract_picks_residue_class() {
        let s = sounder(4, 3, 7);
        let rec = record(&s, (0..s.record_len()).map(|i| c(i as f64, 0.0)).collect());
        let spec = analyze(&rec, &s).unwrap();
        let lines = extract_lines(&spec, 2, &s).unwrap();
        for (idx, k) in (-7i64..7).enumerate() {
            let m = 3 * k + 1;
            assert_eq!(m.rem_euclid(3), 1);
            assert_eq!(lines[idx], spec.bin(m));
        }
        assert!(extract_lines(&spec, 4, &s).is_err());
    }

    #[test]
    fn inversion_examples() {
        let s = [c(1.0, 2.0), c(-0.5, 0.1), c(0.3, -0.3), c(2.0, 0.0)];
        let ones = wiener_invert(&s, &s, 1e-9, 0.0).unwrap();
        assert!(ones.iter().all(|v| (v - 1.0).norm() < 1e-15));
        let g = c(0.3, -1.1);
        let scaled: Vec<_> = s.iter().map(|v| v * g).collect();
        assert!(wiener_invert(&scaled, &s, 1e-9, 0.0)
            .unwrap()
            .iter()
            .all(|v| (v - g).norm() < 1e-15));

        let mut weak = s;
        weak[1] = c(1e-12, 0.0);
        match wiener_invert(&s, &weak, 1e-9, 0.0) {
            Err(Error::LineBelowFloor { k, .. }) => assert_eq!(k, -1),
            other => panic!("{other:?}"),
        }
        assert!(wiener_invert(&s[..3], &s, 1e-9, 0.0).is_err());
        // ridge shrinks towards zero
        let ridged = wiener_invert(&s, &s, 1e-9, 1.0).unwrap();
        assert!(ridged
            .iter()
            .zip(&s)
            .all(|(q, v)| (q.re - v.norm_sqr() / (v.norm_sqr() + 1.0)).abs() < 1e-15));
    }

    #[test]
    fn inversion_matches_channel_response() {
        let s = sounder(5, 2, 15);
        let prof = TapProfile::new(vec![Tap::new(0.0, c(1.0, 0.0)), Tap::new(3.7e-6, c(-0.4, 0.3))]).unwrap();
        let rec = simulate_acquisition(&s, &[TapProfile::silent(), prof.clone()], 0).unwrap();
        let spec = analyze(&rec, &s).unwrap();
        let h = wiener_invert(
            &extract_lines(&spec, 2, &s).unwrap(),
            s.comb(2).unwrap().lines(),
            s.line_floor(),
            0.0,
        )
        .unwrap();
        let g = s.geometry(2).unwrap();
        let expected: Vec<_> = g.ks().map(|k| prof.transfer(g.frequency(k))).collect();
        assert!(max_deviation(&h, &expected) < 1e-12);
    }

    #[test]
    fn calibration_examples() {
        let h = vec![c(1.0, 1.0), c(0.5, -0.2), c(2.0, 0.0), c(-1.0, 0.3)];
        let unit = CalibrationRecord::unit(1, 4);
        assert_eq!(apply_calibration(&h, &unit, 1).unwrap(), h);

        let cal = CalibrationRecord::new(vec![h.clone()], 1e-9).unwrap();
        let out = apply_calibration(&h, &cal, 1).unwrap();
        let gain = cal.reference_gain(1).unwrap();
        assert!(out.iter().all(|v| (v - gain).norm() < 1e-14));
        let mean: f64 = cal.lines(1).unwrap().iter().map(|l| l.norm()).sum::<f64>() / 4.0;
        assert!((mean - 1.0).abs() < 1e-15);

        let mut bad = h.clone();
        bad[2] = c(0.0, 0.0);
        assert!(matches!(
            CalibrationRecord::new(vec![bad], 1e-9),
            Err(Error::LineBelowFloor { k: 0, .. })
        ));
        assert!(apply_calibration(&h, &cal, 2).is_err());
    }

    #[test]
    fn equipment_filter_removed_up_to_reference_gain() {
        let s = sounder(6, 2, 31);
        let equipment = vec![
            TapProfile::new(vec![Tap::new(0.0, c(0.9, 0.0)), Tap::new(0.8e-6, c(0.3, -0.2))]).unwrap(),
            TapProfile::new(vec![Tap::new(0.2e-6, c(1.4, 0.1)), Tap::new(1.1e-6, c(-0.2, 0.05))]).unwrap(),
        ];
        let cable =
            simulate_acquisition_with(&s, &[TapProfile::identity(), TapProfile::identity()], &equipment, 0).unwrap();
        let cal = CalibrationRecord::from_cable(&cable, &s).unwrap();
        let profiles = [random_profile(3, 4, 30e-6), random_profile(4, 4, 30e-6)];
        let rec = simulate_acquisition_with(&s, &profiles, &equipment, 0).unwrap();
        let est = estimate_all(&rec, Some(&cal), &s, Method::Inversion).unwrap();
        let oracles = oracle_responses(&s, &profiles).unwrap();
        for (n, (e, o)) in est.iter().zip(&oracles).enumerate() {
            let gain = cal.reference_gain(n + 1).unwrap();
            let scaled: Vec<_> = o.samples().iter().map(|v| v * gain).collect();
            assert!(rel_dev(e.samples(), &scaled) < 1e-10, "channel {}", n + 1);
        }
    }

    #[test]
    fn to_time_examples() {
        let s = sounder(5, 2, 15);
        let g1 = s.geometry(1).unwrap();
        let delta = to_time(&vec![c(1.0, 0.0); 30], &g1, Method::Inversion).unwrap();
        assert!(!delta.ramp_corrected());
        assert!((delta.samples()[0] - 1.0).norm() < 1e-15);
        assert!(delta.samples()[1..].iter().all(|v| v.norm() < 1e-15));

        let zero = to_time(&vec![c(0.0, 0.0); 30], &g1, Method::Inversion).unwrap();
        assert!(zero.samples().iter().all(|v| v.norm() == 0.0));
        assert!(to_time(&vec![c(0.0, 0.0); 29], &g1, Method::Inversion).is_err());

        // n = 2: uncorrected output is the oracle times e^{−jπ i/(2N)}
        let g2 = s.geometry(2).unwrap();
        let prof = TapProfile::single(2.71e-6, c(1.0, 0.0)).unwrap();
        let lines: Vec<_> = g2.ks().map(|k| prof.transfer(g2.frequency(k))).collect();
        let est = to_time(&lines, &g2, Method::Inversion).unwrap();
        let oracle = oracle_ir(&prof, &g2).unwrap();
        for i in 0..30 {
            let ramp = Complex64::from_polar(1.0, -std::f64::consts::PI * i as f64 / 30.0);
            assert!((est.samples()[i] - oracle.samples()[i] * ramp).norm() < 1e-13);
        }
    }

    #[test]
    fn ramp_correction() {
        let s = sounder(5, 2, 15);
        let g1 = s.geometry(1).unwrap();
        let lines: Vec<_> = (0..30).map(|i| c(i as f64, -(i as f64) * 0.5)).collect();
        let est = to_time(&lines, &g1, Method::Inversion).unwrap();
        let fixed = correct_ramp(&est).unwrap();
        assert_eq!(fixed.samples(), est.samples());
        assert!(matches!(correct_ramp(&fixed), Err(Error::AlreadyCorrected(1))));

        // Identity channel on comb 2 becomes a real pulse again.
        let g2 = s.geometry(2).unwrap();
        let prof = TapProfile::single(3.0 * g2.base_period() / 30.0, c(1.0, 0.0)).unwrap();
        let h: Vec<_> = g2.ks().map(|k| prof.transfer(g2.frequency(k))).collect();
        let fixed = correct_ramp(&to_time(&h, &g2, Method::Inversion).unwrap()).unwrap();
        assert!(fixed.samples().iter().all(|v| v.im.abs() < 1e-12));
        assert!((fixed.samples()[3].re - 1.0).abs() < 1e-12);
        assert_eq!(fixed.lines().len(), 30);
        assert!(max_deviation(&fixed.lines(), &h) < 1e-12);
    }

    #[test]
    fn half_exponent_ramp_does_not_restore() {
        // Correcting with e^{+jπ(n−1)t/(pT)} instead of e^{+j2π(n−1)t/(pT)}
        // leaves a residual ramp, so the round trip fails.
        let s = sounder(5, 2, 15);
        let g = s.geometry(2).unwrap();
        let prof = random_profile(11, 4, 25e-6);
        let h: Vec<_> = g.ks().map(|k| prof.transfer(g.frequency(k))).collect();
        let raw = to_time(&h, &g, Method::Inversion).unwrap();
        let oracle = oracle_ir(&prof, &g).unwrap();
        let half: Vec<_> = raw
            .samples()
            .iter()
            .enumerate()
            .map(|(i, v)| {
                v * Complex64::from_polar(1.0, std::f64::consts::PI * g.sample_time(i) / (2.0 * g.base_period()))
            })
            .collect();
        assert!(rel_dev(&half, oracle.samples()) > 1e-3);
        assert!(rel_dev(correct_ramp(&raw).unwrap().samples(), oracle.samples()) < 1e-12);
    }

    #[test]
    fn four_tap_round_trip() {
        for p in 1..=4 {
            let s = sounder(6, p, 31);
            let profiles: Vec<_> = (0..p)
                .map(|n| random_profile(100 + n as u64, 4, 0.8 * s.base_period()))
                .collect();
            let rec = simulate_acquisition(&s, &profiles, 0).unwrap();
            let est = estimate_all(&rec, None, &s, Method::Inversion).unwrap();
            let oracles = oracle_responses(&s, &profiles).unwrap();
            for (e, o) in est.iter().zip(&oracles) {
                assert!(e.ramp_corrected());
                assert!(
                    max_deviation(e.samples(), o.samples()) <= 1e-10 * o.peak(),
                    "p={p} n={}",
                    e.channel()
                );
            }
        }
    }

    #[test]
    fn mulhouse_round_trip_both_methods() {
        let s = Sounder::preset(MULHOUSE).unwrap();
        let profiles = [random_profile(1, 5, 15e-6), random_profile(2, 5, 15e-6)];
        let rec = simulate_acquisition(&s, &profiles, 0).unwrap();
        let oracles = oracle_responses(&s, &profiles).unwrap();
        for e in estimate_all(&rec, None, &s, Method::Inversion).unwrap() {
            assert!(rel_dev(e.samples(), oracles[e.channel() - 1].samples()) < 1e-10);
        }
        for e in estimate_all(&rec, None, &s, Method::Correlation).unwrap() {
            let comb = s.comb(e.channel()).unwrap();
            let weighted: Vec<_> = oracles[e.channel() - 1]
                .lines()
                .iter()
                .zip(comb.lines())
                .map(|(h, l)| h * l.norm_sqr())
                .collect();
            assert!(rel_dev(&e.lines(), &weighted) < 1e-10);
        }
    }

    #[test]
    fn correlation_matches_direct_circular_correlation() {
        let s = sounder(4, 2, 7);
        let rec = simulate_acquisition(&s, &[random_profile(5, 3, 10e-6), random_profile(6, 3, 10e-6)], 0).unwrap();
        let reference = synthesize(s.comb(2).unwrap(), s.sample_rate(), s.span()).unwrap();
        let fast = circular_cross_correlation(rec.samples(), reference.samples());
        let len = rec.len();
        let direct: Vec<Complex64> = (0..len)
            .map(|d| {
                (0..len)
                    .map(|i| rec.samples()[(i + d) % len] * reference.samples()[i].conj())
                    .sum::<Complex64>()
                    / len as f64
            })
            .collect();
        assert!(max_deviation(&fast, &direct) < 1e-12);
    }

    fn zadoff_chu(len: usize, root: usize) -> Vec<Complex64> {
        (0..len)
            .map(|i| Complex64::from_polar(1.0, -std::f64::consts::PI * (root * i * i) as f64 / len as f64))
            .collect()
    }

    #[test]
    fn flat_comb_correlation_equals_inversion_up_to_scale() {
        let config = SounderConfig {
            sequence: SequenceSource::inline(&zadoff_chu(32, 5)),
            ..SounderConfig::mseq(5, 2, 1e6, 16)
        };
        let config = SounderConfig {
            sample_rate_hz: 1e6,
            ..config
        };
        let s = Sounder::new(config).unwrap();
        let mags: Vec<f64> = s.comb(1).unwrap().lines().iter().map(|l| l.norm()).collect();
        assert!(mags.iter().all(|m| (m - mags[0]).abs() < 1e-12));
        let profiles = [random_profile(7, 5, 25e-6), random_profile(8, 5, 25e-6)];
        let rec = simulate_acquisition(&s, &profiles, 0).unwrap();
        let inv = estimate_all(&rec, None, &s, Method::Inversion).unwrap();
        let cor = estimate_all(&rec, None, &s, Method::Correlation).unwrap();
        for (a, b) in inv.iter().zip(&cor) {
            let scale = b.peak() / a.peak();
            assert!(scale > 0.0);
            let normalized: Vec<_> = b.samples().iter().map(|v| v / scale).collect();
            assert!(rel_dev(&normalized, a.samples()) < 1e-10);
        }
    }

    #[test]
    fn correlation_peaks_at_tap() {
        let s = sounder(7, 2, 63);
        let dt = s.base_period() / s.line_count() as f64;
        let rec = simulate_acquisition(
            &s,
            &[
                TapProfile::single(17.0 * dt, c(1.0, 0.0)).unwrap(),
                TapProfile::single(40.0 * dt, c(0.0, 1.0)).unwrap(),
            ],
            0,
        )
        .unwrap();
        let est = estimate_all(&rec, None, &s, Method::Correlation).unwrap();
        let argmax = |e: &ImpulseResponseEstimate| {
            e.samples()
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.norm().total_cmp(&b.1.norm()))
                .unwrap()
                .0
        };
        assert_eq!(argmax(&est[0]), 17);
        assert_eq!(argmax(&est[1]), 40);
    }

    #[test]
    fn silent_channel_correlation_is_empty() {
        let s = sounder(6, 2, 31);
        let rec = simulate_acquisition(&s, &[random_profile(9, 4, 40e-6), TapProfile::silent()], 0).unwrap();
        let est = estimate_all(&rec, None, &s, Method::Correlation).unwrap();
        assert!(est[1].peak() <= 1e-10 * est[0].peak());
    }

    #[test]
    fn fingerprint_and_method_guards() {
        let s = sounder(4, 2, 7);
        let mut rec = simulate_acquisition(&s, &[TapProfile::identity(), TapProfile::identity()], 0).unwrap();
        assert!(estimate_all(&rec, None, &s, Method::Oracle).is_err());
        rec.fingerprint = "0000".into();
        assert!(matches!(
            estimate_all(&rec, None, &s, Method::Inversion),
            Err(Error::FingerprintMismatch { .. })
        ));
        assert_eq!("correlation".parse::<Method>().unwrap(), Method::Correlation);
        assert!("wiener".parse::<Method>().is_err());
    }

    #[test]
    fn shift_covariance() {
        let s = sounder(6, 3, 31);
        let dt = s.base_period() / s.line_count() as f64;
        let profiles: Vec<_> = (0..3)
            .map(|n| random_profile(20 + n, 4, 0.5 * s.base_period()))
            .collect();
        let d = 9usize;
        let shifted: Vec<_> = profiles.iter().map(|p| p.delayed(d as f64 * dt)).collect();
        let a = estimate_all(
            &simulate_acquisition(&s, &profiles, 0).unwrap(),
            None,
            &s,
            Method::Inversion,
        )
        .unwrap();
        let b = estimate_all(
            &simulate_acquisition(&s, &shifted, 0).unwrap(),
            None,
            &s,
            Method::Inversion,
        )
        .unwrap();
        let len = s.line_count();
        for (ea, eb) in a.iter().zip(&b) {
            let n = ea.channel();
            // samples wrapping past t = 0 pick up the periodization phase
            let wrap = Complex64::from_polar(1.0, -TAU * (n - 1) as f64 / 3.0);
            for i in 0..len {
                let expected = if i >= d {
                    ea.samples()[i - d]
                } else {
                    ea.samples()[i + len - d] * wrap
                };
                assert!((eb.samples()[i] - expected).norm() <= 1e-10 * ea.peak(), "n={n} i={i}");
            }
        }
    }

    #[test]
    fn scale_equivariance_and_isolation() {
        let s = sounder(5, 3, 15);
        let profiles: Vec<_> = (0..3).map(|n| random_profile(40 + n, 3, 20e-6)).collect();
        let base = estimate_all(
            &simulate_acquisition(&s, &profiles, 0).unwrap(),
            None,
            &s,
            Method::Inversion,
        )
        .unwrap();
        let g = c(-0.7, 1.9);
        let mut scaled_profiles = profiles.clone();
        scaled_profiles[1] = profiles[1].scaled(g);
        let scaled = estimate_all(
            &simulate_acquisition(&s, &scaled_profiles, 0).unwrap(),
            None,
            &s,
            Method::Inversion,
        )
        .unwrap();
        let expected: Vec<_> = base[1].samples().iter().map(|v| v * g).collect();
        assert!(rel_dev(scaled[1].samples(), &expected) < 1e-12);
        for n in [0, 2] {
            assert!(max_deviation(scaled[n].samples(), base[n].samples()) <= 1e-12 * base[n].peak());
        }

        // lines of channel 2 do not move when the others go silent
        let full = analyze(&simulate_acquisition(&s, &profiles, 0).unwrap(), &s).unwrap();
        let alone = analyze(
            &simulate_acquisition(
                &s,
                &[TapProfile::silent(), profiles[1].clone(), TapProfile::silent()],
                0,
            )
            .unwrap(),
            &s,
        )
        .unwrap();
        let a = extract_lines(&full, 2, &s).unwrap();
        let b = extract_lines(&alone, 2, &s).unwrap();
        assert!(max_deviation(&a, &b) <= 1e-12 * peak_magnitude(&b));
    }

    #[test]
    fn batch_matches_single_record_estimates() {
        let s = sounder(5, 2, 15);
        let records: Vec<_> = (0..6)
            .map(|i| {
                simulate_acquisition(&s, &[random_profile(i, 3, 20e-6), random_profile(i + 50, 3, 20e-6)], i).unwrap()
            })
            .collect();
        let par = estimate_batch(&records, None, &s, Method::Inversion, Execution::Parallel).unwrap();
        let seq = estimate_batch(&records, None, &s, Method::Inversion, Execution::Sequential).unwrap();
        assert_eq!(par, seq);
        assert_eq!(par[3], estimate_all(&records[3], None, &s, Method::Inversion).unwrap());
    }
}
