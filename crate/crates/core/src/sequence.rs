//! Periodic sounding sequences: LFSR m-sequences, antipodal symbol mapping,
//! circular autocorrelation, and reduction to a 2N-line spectral comb.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dft::unit_phasor;
use crate::error::{Error, Result};
use crate::waveform::{CombGeometry, SpectralComb};

/// Largest register length accepted by [`generate_mseq`].
pub const MAX_DEGREE: u32 = 24;

/// Default relative floor on retained line magnitudes.
pub const DEFAULT_LINE_FLOOR: f64 = 1e-9;

/// Fibonacci LFSR description. Tap positions are 1-based, position
/// `degree` being the output stage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MSequenceSpec {
    pub degree: u32,
    pub feedback_taps: Vec<u32>,
    pub initial_state: Vec<u8>,
}

impl MSequenceSpec {
    /// Primitive taps for `degree` in 2..=10, seeded with a single one in
    /// the first stage.
    pub fn with_default_taps(degree: u32) -> Result<Self> {
        let taps: &[u32] = match degree {
            2 => &[2, 1],
            3 => &[3, 2],
            4 => &[4, 3],
            5 => &[5, 3],
            6 => &[6, 5],
            7 => &[7, 6],
            8 => &[8, 6, 5, 4],
            9 => &[9, 5],
            10 => &[10, 7],
            _ => {
                return Err(Error::InvalidSequenceSpec(format!(
                    "no default taps for degree {degree}"
                )))
            }
        };
        let mut initial_state = vec![0u8; degree as usize];
        initial_state[0] = 1;
        Ok(Self {
            degree,
            feedback_taps: taps.to_vec(),
            initial_state,
        })
    }

    pub fn period(&self) -> usize {
        (1usize << self.degree) - 1
    }

    fn validate(&self) -> Result<()> {
        if !(2..=MAX_DEGREE).contains(&self.degree) {
            return Err(Error::InvalidSequenceSpec(format!(
                "degree {} outside [2, {MAX_DEGREE}]",
                self.degree
            )));
        }
        if self.feedback_taps.is_empty() {
            return Err(Error::InvalidSequenceSpec("no feedback taps".into()));
        }
        if let Some(t) = self.feedback_taps.iter().find(|&&t| t == 0 || t > self.degree) {
            return Err(Error::InvalidSequenceSpec(format!(
                "tap {t} outside [1, {}]",
                self.degree
            )));
        }
        if self.initial_state.len() != self.degree as usize {
            return Err(Error::InvalidSequenceSpec(format!(
                "initial state has {} bits, degree is {}",
                self.initial_state.len(),
                self.degree
            )));
        }
        if self.initial_state.iter().any(|&b| b > 1) {
            return Err(Error::InvalidSequenceSpec("initial state must contain only 0/1".into()));
        }
        if self.initial_state.iter().all(|&b| b == 0) {
            return Err(Error::InvalidSequenceSpec("initial state is all zeros".into()));
        }
        Ok(())
    }
}

struct Lfsr {
    state: u32,
    tap_mask: u32,
    degree: u32,
    mask: u32,
}

impl Lfsr {
    fn new(spec: &MSequenceSpec) -> Self {
        let state = spec
            .initial_state
            .iter()
            .enumerate()
            .fold(0u32, |acc, (i, &b)| acc | (u32::from(b) << i));
        let tap_mask = spec.feedback_taps.iter().fold(0u32, |acc, &t| acc | (1 << (t - 1)));
        Self {
            state,
            tap_mask,
            degree: spec.degree,
            mask: ((1u64 << spec.degree) - 1) as u32,
        }
    }

    fn step(&mut self) -> u8 {
        let out = ((self.state >> (self.degree - 1)) & 1) as u8;
        let feedback = (self.state & self.tap_mask).count_ones() & 1;
        self.state = ((self.state << 1) | feedback) & self.mask;
        out
    }
}

/// Runs the LFSR for one full period and returns the `2^degree − 1` output
/// bits. Rejects feedback polynomials whose period falls short.
pub fn generate_mseq(spec: &MSequenceSpec) -> Result<Vec<u8>> {
    spec.validate()?;
    let expected = spec.period();
    let mut lfsr = Lfsr::new(spec);
    let start = lfsr.state;
    let mut bits = Vec::with_capacity(expected);
    for step in 1..=expected {
        bits.push(lfsr.step());
        if lfsr.state == start && step < expected {
            return Err(Error::NotPrimitive {
                observed: step,
                expected,
            });
        }
    }
    if lfsr.state != start {
        // Transition map is not a permutation; measure the cycle we fell into.
        let mut seen = std::collections::HashMap::new();
        let mut step = 0usize;
        while let std::collections::hash_map::Entry::Vacant(e) = seen.entry(lfsr.state) {
            e.insert(step);
            lfsr.step();
            step += 1;
        }
        let observed = step - seen[&lfsr.state];
        return Err(Error::NotPrimitive { observed, expected });
    }
    Ok(bits)
}

/// A periodic train of complex chips. One period lasts `L / chip_rate`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolSequence {
    symbols: Vec<Complex64>,
    chip_rate: f64,
}

impl SymbolSequence {
    pub fn new(symbols: Vec<Complex64>, chip_rate: f64) -> Result<Self> {
        if symbols.is_empty() {
            return Err(Error::EmptySequence);
        }
        if symbols.iter().all(|s| s.norm_sqr() == 0.0) {
            return Err(Error::InvalidSequenceSpec("sequence is identically zero".into()));
        }
        if !(chip_rate.is_finite() && chip_rate > 0.0) {
            return Err(Error::InvalidSequenceSpec(format!(
                "chip rate {chip_rate} must be positive"
            )));
        }
        Ok(Self { symbols, chip_rate })
    }

    pub fn symbols(&self) -> &[Complex64] {
        &self.symbols
    }

    pub fn chip_rate(&self) -> f64 {
        self.chip_rate
    }

    pub fn period_chips(&self) -> usize {
        self.symbols.len()
    }

    /// Base period T in seconds.
    pub fn base_period(&self) -> f64 {
        self.symbols.len() as f64 / self.chip_rate
    }
}

/// Antipodal mapping 0 → +1, 1 → −1.
pub fn to_symbols(bits: &[u8], chip_rate: f64) -> Result<SymbolSequence> {
    if bits.is_empty() {
        return Err(Error::EmptySequence);
    }
    let symbols = bits
        .iter()
        .map(|&b| Complex64::new(if b == 0 { 1.0 } else { -1.0 }, 0.0))
        .collect();
    SymbolSequence::new(symbols, chip_rate)
}

/// `R[τ] = Σ_i s[(i+τ) mod L] · conj(s[i])` for every lag τ in `0..L`.
pub fn circular_autocorrelation(seq: &SymbolSequence) -> Vec<Complex64> {
    let s = seq.symbols();
    let len = s.len();
    (0..len)
        .map(|lag| s.iter().enumerate().map(|(i, si)| s[(i + lag) % len] * si.conj()).sum())
        .collect()
}

/// Line amplitude `(1/L) Σ s[i] e^{-j2πki/L}` of the L-periodic chip train.
pub fn line_amplitude(symbols: &[Complex64], k: i64) -> Complex64 {
    let len = symbols.len();
    let sum: Complex64 = symbols
        .iter()
        .enumerate()
        .map(|(i, &s)| s * unit_phasor(-k * i as i64, len))
        .sum();
    sum / len as f64
}

/// Keeps the 2N lines `k ∈ [−N, N−1]` of the chip train's spectrum.
///
/// Every retained line must exceed `floor_rel` times the largest retained
/// magnitude, otherwise inversion on that band is ill-posed.
pub fn band_limit(seq: &SymbolSequence, half_lines: usize, floor_rel: f64) -> Result<SpectralComb> {
    let period = seq.period_chips();
    if half_lines == 0 || 2 * half_lines > period {
        return Err(Error::InvalidLineCount {
            lines: 2 * half_lines,
            period,
        });
    }
    let n = half_lines as i64;
    let lines: Vec<Complex64> = (-n..n).map(|k| line_amplitude(seq.symbols(), k)).collect();
    let floor = floor_rel * crate::dft::peak_magnitude(&lines);
    if let Some((idx, line)) = lines
        .iter()
        .enumerate()
        .find(|(_, l)| l.norm() < floor || l.norm() == 0.0)
    {
        return Err(Error::LineBelowFloor {
            k: idx as i64 - n,
            magnitude: line.norm(),
            floor,
        });
    }
    let geometry = CombGeometry::new(half_lines, seq.base_period(), 0, 1)?;
    SpectralComb::new(lines, geometry)
}
