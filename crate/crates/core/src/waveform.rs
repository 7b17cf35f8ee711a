//! Spectral combs, per-transmitter comb offsets, exact line synthesis and
//! composite signals.
//!
//! Transmitter `n` of `p` places line `k ∈ [−N, N−1]` at
//! `k/T + (n−1)/(pT)`. In units of `1/(pT)` that is the integer
//! `p·k + (n−1)`, so every comb lands on its own residue class modulo `p`.

use num_complex::Complex64;

use crate::dft::phasor_table;
use crate::error::{Error, Result};
use crate::par::Execution;

/// Relative tolerance for "is an integer" checks on rate × duration products.
pub const GRID_TOLERANCE: f64 = 1e-9;

/// Rounds `x` to an integer if it is one within [`GRID_TOLERANCE`].
pub fn as_integer(x: f64) -> Option<usize> {
    if !x.is_finite() || x < 0.0 {
        return None;
    }
    let r = x.round();
    ((x - r).abs() <= GRID_TOLERANCE * r.max(1.0)).then_some(r as usize)
}

/// Where a comb's lines sit: 2N lines spaced `1/T`, shifted by
/// `offset_index/(modulus·T)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CombGeometry {
    half_lines: usize,
    base_period: f64,
    offset_index: usize,
    modulus: usize,
}

impl CombGeometry {
    pub fn new(half_lines: usize, base_period: f64, offset_index: usize, modulus: usize) -> Result<Self> {
        if half_lines == 0 {
            return Err(Error::InvalidConfig("comb needs at least two lines".into()));
        }
        if !(base_period.is_finite() && base_period > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "base period {base_period} must be positive"
            )));
        }
        if modulus == 0 || offset_index >= modulus {
            return Err(Error::TransmitterIndex {
                n: offset_index + 1,
                p: modulus,
            });
        }
        Ok(Self {
            half_lines,
            base_period,
            offset_index,
            modulus,
        })
    }

    pub fn half_lines(&self) -> usize {
        self.half_lines
    }

    /// 2N.
    pub fn line_count(&self) -> usize {
        2 * self.half_lines
    }

    pub fn base_period(&self) -> f64 {
        self.base_period
    }

    pub fn offset_index(&self) -> usize {
        self.offset_index
    }

    pub fn modulus(&self) -> usize {
        self.modulus
    }

    /// 1-based transmitter index n.
    pub fn channel(&self) -> usize {
        self.offset_index + 1
    }

    /// Occupied band B = 2N/T.
    pub fn band(&self) -> f64 {
        self.line_count() as f64 / self.base_period
    }

    /// Line indices k in ascending order.
    pub fn ks(&self) -> impl Iterator<Item = i64> {
        let n = self.half_lines as i64;
        -n..n
    }

    /// Integer position of line k on the `1/(pT)` grid.
    pub fn grid_index(&self, k: i64) -> i64 {
        self.modulus as i64 * k + self.offset_index as i64
    }

    /// Physical baseband frequency of line k in Hz.
    pub fn frequency(&self, k: i64) -> f64 {
        self.grid_index(k) as f64 / (self.modulus as f64 * self.base_period)
    }

    pub fn frequencies(&self) -> Vec<f64> {
        self.ks().map(|k| self.frequency(k)).collect()
    }

    /// Frequency shift `(n−1)/(pT)` of this comb.
    pub fn offset_frequency(&self) -> f64 {
        self.offset_index as f64 / (self.modulus as f64 * self.base_period)
    }

    /// Signal period pT (T for an unshifted comb).
    pub fn signal_period(&self) -> f64 {
        if self.offset_index == 0 {
            self.base_period
        } else {
            self.modulus as f64 * self.base_period
        }
    }

    /// Time of estimate sample `i` on the 2N-point grid `i·T/(2N)`.
    pub fn sample_time(&self, i: usize) -> f64 {
        i as f64 * self.base_period / self.line_count() as f64
    }
}

/// The 2N complex line amplitudes of one transmitter's periodic signal,
/// in ascending k.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralComb {
    lines: Vec<Complex64>,
    geometry: CombGeometry,
}

impl SpectralComb {
    pub fn new(lines: Vec<Complex64>, geometry: CombGeometry) -> Result<Self> {
        if lines.len() != geometry.line_count() {
            return Err(Error::InvalidLineCount {
                lines: lines.len(),
                period: geometry.line_count(),
            });
        }
        Ok(Self { lines, geometry })
    }

    pub fn lines(&self) -> &[Complex64] {
        &self.lines
    }

    pub fn geometry(&self) -> &CombGeometry {
        &self.geometry
    }

    /// Same geometry, new amplitudes.
    pub fn with_lines(&self, lines: Vec<Complex64>) -> Result<Self> {
        Self::new(lines, self.geometry)
    }
}

/// Moves a zero-offset comb to transmitter slot `n` of `p`.
pub fn apply_comb_offset(comb: &SpectralComb, n: usize, p: usize) -> Result<SpectralComb> {
    if n == 0 || n > p {
        return Err(Error::TransmitterIndex { n, p });
    }
    let g = comb.geometry();
    if g.offset_index() != 0 {
        return Err(Error::InvalidConfig(format!(
            "comb already carries offset index {}",
            g.offset_index()
        )));
    }
    let geometry = CombGeometry::new(g.half_lines(), g.base_period(), n - 1, p)?;
    SpectralComb::new(comb.lines.clone(), geometry)
}

/// Uniformly sampled complex baseband signal.
#[derive(Debug, Clone, PartialEq)]
pub struct BasebandSignal {
    samples: Vec<Complex64>,
    sample_rate: f64,
    span: f64,
}

impl BasebandSignal {
    pub fn new(samples: Vec<Complex64>, sample_rate: f64, span: f64) -> Result<Self> {
        if !(sample_rate.is_finite() && sample_rate > 0.0) {
            return Err(Error::SignalMismatch(format!(
                "sample rate {sample_rate} must be positive"
            )));
        }
        let expected = as_integer(sample_rate * span).ok_or(Error::SpanOffGrid { span, sample_rate })?;
        if expected != samples.len() {
            return Err(Error::LengthMismatch {
                expected,
                actual: samples.len(),
            });
        }
        Ok(Self {
            samples,
            sample_rate,
            span,
        })
    }

    /// Builds a signal whose span is implied by the sample count.
    pub fn from_samples(samples: Vec<Complex64>, sample_rate: f64) -> Result<Self> {
        let span = samples.len() as f64 / sample_rate;
        Self::new(samples, sample_rate, span)
    }

    pub fn zeros(len: usize, sample_rate: f64) -> Result<Self> {
        Self::from_samples(vec![Complex64::new(0.0, 0.0); len], sample_rate)
    }

    pub fn samples(&self) -> &[Complex64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<Complex64> {
        self.samples
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn span(&self) -> f64 {
        self.span
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn mean_power(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().map(|s| s.norm_sqr()).sum::<f64>() / self.samples.len() as f64
    }

    pub fn scaled(&self, factor: Complex64) -> Self {
        Self {
            samples: self.samples.iter().map(|s| s * factor).collect(),
            ..self.clone()
        }
    }

    /// `Σ x[i]·conj(y[i])`.
    pub fn inner_product(&self, other: &Self) -> Complex64 {
        self.samples.iter().zip(&other.samples).map(|(x, y)| x * y.conj()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.samples.iter().map(|s| s.norm_sqr()).sum::<f64>().sqrt()
    }
}

/// Number of samples in one full comb period pT at `sample_rate`, after
/// checking the sampling rule (`f_e ≥ B`, `f_e` a multiple of `1/(pT)`).
pub fn samples_per_comb_period(geometry: &CombGeometry, sample_rate: f64) -> Result<usize> {
    let band = geometry.band();
    if !(sample_rate.is_finite() && sample_rate >= band * (1.0 - GRID_TOLERANCE)) {
        return Err(Error::SamplingBelowBand { sample_rate, band });
    }
    let p_t = geometry.modulus() as f64 * geometry.base_period();
    as_integer(sample_rate * p_t).ok_or(Error::SampleRateOffGrid {
        sample_rate,
        spacing: 1.0 / p_t,
    })
}

/// Samples `s(t) = Σ_k lines[k]·e^{j2π f_k t}` at `t = i/f_e` over `span`.
///
/// Lines sit on the `1/(pT)` grid and one period holds `f_e·pT` samples, so
/// one inverse FFT of that length gives the period exactly; longer spans
/// repeat it.
pub fn synthesize(comb: &SpectralComb, sample_rate: f64, span: f64) -> Result<BasebandSignal> {
    let geometry = comb.geometry();
    let grid = samples_per_comb_period(geometry, sample_rate)?;
    let len = as_integer(sample_rate * span).ok_or(Error::SpanOffGrid { span, sample_rate })?;
    let mut spectrum = vec![Complex64::new(0.0, 0.0); grid];
    for (k, &a) in geometry.ks().zip(comb.lines()) {
        spectrum[geometry.grid_index(k).rem_euclid(grid as i64) as usize] += a;
    }
    let period = crate::dft::inverse(&spectrum);
    let samples = (0..len).map(|i| period[i % grid]).collect();
    BasebandSignal::new(samples, sample_rate, span)
}

/// Reference synthesis by direct line summation, O(2N × samples).
pub fn synthesize_direct(comb: &SpectralComb, sample_rate: f64, span: f64, exec: Execution) -> Result<BasebandSignal> {
    let geometry = comb.geometry();
    let grid = samples_per_comb_period(geometry, sample_rate)?;
    let len = as_integer(sample_rate * span).ok_or(Error::SpanOffGrid { span, sample_rate })?;
    // f_k·t_i = (p·k + n−1)·i / grid, so phases are exact table lookups.
    let table = phasor_table(grid);
    let indices: Vec<(i64, Complex64)> = geometry
        .ks()
        .zip(comb.lines())
        .map(|(k, &a)| (geometry.grid_index(k).rem_euclid(grid as i64), a))
        .collect();
    let samples = exec.map_indexed(len, |i| {
        let i = (i % grid) as i64;
        indices
            .iter()
            .map(|&(m, a)| a * table[((m * i) % grid as i64) as usize])
            .sum()
    });
    BasebandSignal::new(samples, sample_rate, span)
}

/// Sample-wise sum of signals sharing rate and span.
pub fn composite(signals: &[BasebandSignal]) -> Result<BasebandSignal> {
    let first = signals
        .first()
        .ok_or_else(|| Error::SignalMismatch("no signals to combine".into()))?;
    for s in &signals[1..] {
        if (s.sample_rate - first.sample_rate).abs() > 1e-12 * first.sample_rate {
            return Err(Error::SignalMismatch(format!(
                "sample rates {} and {} differ",
                first.sample_rate, s.sample_rate
            )));
        }
        if s.len() != first.len() {
            return Err(Error::SignalMismatch(format!(
                "lengths {} and {} differ",
                first.len(),
                s.len()
            )));
        }
    }
    let mut samples = first.samples.clone();
    for s in &signals[1..] {
        samples.iter_mut().zip(&s.samples).for_each(|(acc, v)| *acc += v);
    }
    BasebandSignal::new(samples, first.sample_rate, first.span)
}
