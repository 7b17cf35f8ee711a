//! Sounder configuration: the serializable parameter set, presets, and the
//! validated [`Sounder`] that every simulation and estimation step runs on.
//!
//! Config files are TOML with units in key names:
//!
//! ```toml
//! preset = "mulhouse"        # optional, expanded first
//! transmitters = 2
//! chip_rate_hz = 12.5e6
//! half_lines = 127           # N, the comb keeps 2N lines
//! sample_rate_hz = 25e6
//!
//! [sequence]
//! kind = "mseq"
//! degree = 8
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::iq;
use crate::sequence::{self, band_limit, generate_mseq, to_symbols, MSequenceSpec, SymbolSequence};
use crate::waveform::{apply_comb_offset, as_integer, samples_per_comb_period, CombGeometry, SpectralComb};

pub const MULHOUSE: &str = "mulhouse";

/// Where the sounding sequence comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SequenceSource {
    /// LFSR m-sequence, antipodally mapped. Taps and state default to the
    /// built-in primitive polynomial for `degree`.
    Mseq {
        degree: u32,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        feedback_taps: Option<Vec<u32>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        initial_state: Option<Vec<u8>>,
    },
    /// Complex symbols read from a binary IQ file.
    Iq { path: PathBuf },
    /// Complex symbols given inline as `[re, im]` pairs.
    Inline { symbols: Vec<[f64; 2]> },
}

impl SequenceSource {
    pub fn mseq(degree: u32) -> Self {
        SequenceSource::Mseq {
            degree,
            feedback_taps: None,
            initial_state: None,
        }
    }

    pub fn inline(symbols: &[Complex64]) -> Self {
        SequenceSource::Inline {
            symbols: symbols.iter().map(|c| [c.re, c.im]).collect(),
        }
    }

    fn symbols(&self) -> Result<Vec<Complex64>> {
        match self {
            SequenceSource::Mseq {
                degree,
                feedback_taps,
                initial_state,
            } => {
                let spec = resolve_mseq(*degree, feedback_taps.as_deref(), initial_state.as_deref())?;
                let bits = generate_mseq(&spec)?;
                Ok(to_symbols(&bits, 1.0)?.symbols().to_vec())
            }
            SequenceSource::Iq { path } => iq::read_iq(path),
            SequenceSource::Inline { symbols } => Ok(symbols.iter().map(|&[re, im]| Complex64::new(re, im)).collect()),
        }
    }
}

fn resolve_mseq(degree: u32, taps: Option<&[u32]>, state: Option<&[u8]>) -> Result<MSequenceSpec> {
    let mut spec = match taps {
        Some(taps) => MSequenceSpec {
            degree,
            feedback_taps: taps.to_vec(),
            initial_state: Vec::new(),
        },
        None => MSequenceSpec::with_default_taps(degree)?,
    };
    spec.initial_state = match state {
        Some(state) => state.to_vec(),
        None => (0..degree).map(|i| u8::from(i == 0)).collect(),
    };
    Ok(spec)
}

fn default_line_floor() -> f64 {
    sequence::DEFAULT_LINE_FLOOR
}

fn is_zero(x: &f64) -> bool {
    *x == 0.0
}

/// Full parameter set of a p-transmitter comb sounder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SounderConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    /// p, number of simultaneously sounded channels.
    pub transmitters: usize,
    pub chip_rate_hz: f64,
    /// N; the comb keeps lines k ∈ [−N, N−1].
    pub half_lines: usize,
    /// f_e.
    pub sample_rate_hz: f64,
    /// Carrier f_0, metadata only.
    #[serde(default)]
    pub carrier_hz: f64,
    /// ε_line relative to the largest retained line.
    #[serde(default = "default_line_floor")]
    pub line_floor_rel: f64,
    /// ε_w added to |S|² in the inversion; 0 gives plain division.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub ridge: f64,
    /// Receiver SNR; absent means noiseless.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snr_db: Option<f64>,
    /// Receiver timing offset t₀ added to every tap delay.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub timing_offset_s: f64,
    pub sequence: SequenceSource,
}

impl SounderConfig {
    /// m-sequence sounder sampled at the band edge rate `f_e = B = 2N/T`.
    pub fn mseq(degree: u32, transmitters: usize, chip_rate_hz: f64, half_lines: usize) -> Self {
        let period = (1usize << degree) - 1;
        let t = period as f64 / chip_rate_hz;
        Self {
            preset: None,
            transmitters,
            chip_rate_hz,
            half_lines,
            sample_rate_hz: 2.0 * half_lines as f64 / t,
            carrier_hz: 0.0,
            line_floor_rel: sequence::DEFAULT_LINE_FLOOR,
            ridge: 0.0,
            snr_db: None,
            timing_offset_s: 0.0,
            sequence: SequenceSource::mseq(degree),
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            MULHOUSE => Ok(Self {
                preset: Some(MULHOUSE.into()),
                transmitters: 2,
                chip_rate_hz: 12.5e6,
                half_lines: 127,
                sample_rate_hz: 25e6,
                carrier_hz: 2.2e9,
                ..Self::mseq(8, 2, 12.5e6, 127)
            }),
            other => Err(Error::UnknownPreset(other.into())),
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    /// Parses a config document. A `preset` key expands first; explicit
    /// keys override it. Any `[scenario]` table is ignored here.
    pub fn from_toml(text: &str) -> Result<Self> {
        let mut table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::InvalidConfig(e.to_string()))?;
        table.remove("scenario");
        if let Some(preset) = table.get("preset") {
            let name = preset
                .as_str()
                .ok_or_else(|| Error::InvalidConfig("preset must be a string".into()))?;
            let base = Self::preset(name)?;
            let mut merged: toml::Table =
                toml::Table::try_from(&base).map_err(|e| Error::InvalidConfig(e.to_string()))?;
            for (k, v) in table {
                merged.insert(k, v);
            }
            table = merged;
        }
        toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::InvalidConfig(e.to_string()))
    }
}

/// Reads and validates a config file. Relative IQ sequence paths resolve
/// against the config file's directory.
pub fn load_config(path: &Path) -> Result<Sounder> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut config = SounderConfig::from_toml(&text)?;
    if let SequenceSource::Iq { path: seq_path } = &mut config.sequence {
        if seq_path.is_relative() {
            if let Some(dir) = path.parent() {
                *seq_path = dir.join(&*seq_path);
            }
        }
    }
    Sounder::new(config)
}

pub fn write_config(path: &Path, config: &SounderConfig) -> Result<()> {
    let text = config.to_toml()?;
    iq::write_atomic(path, text.as_bytes())
}

/// A validated configuration with everything derived from it: symbols,
/// per-transmitter combs, record length and fingerprint.
#[derive(Debug, Clone)]
pub struct Sounder {
    config: SounderConfig,
    symbols: SymbolSequence,
    combs: Vec<SpectralComb>,
    record_len: usize,
    fingerprint: String,
}

impl Sounder {
    pub fn new(config: SounderConfig) -> Result<Self> {
        let c = &config;
        let p = c.transmitters;
        if p == 0 {
            return Err(Error::InvalidConfig("transmitters must be at least 1".into()));
        }
        if !(c.line_floor_rel.is_finite() && c.line_floor_rel >= 0.0) {
            return Err(Error::InvalidConfig("line_floor_rel must be non-negative".into()));
        }
        if !(c.ridge.is_finite() && c.ridge >= 0.0) {
            return Err(Error::InvalidConfig("ridge must be non-negative".into()));
        }
        if !(c.timing_offset_s.is_finite() && c.timing_offset_s >= 0.0) {
            return Err(Error::InvalidConfig("timing_offset_s must be non-negative".into()));
        }
        if matches!(c.snr_db, Some(s) if s.is_nan()) {
            return Err(Error::InvalidConfig("snr_db is NaN".into()));
        }
        let symbols = SymbolSequence::new(c.sequence.symbols()?, c.chip_rate_hz)?;
        if 2 * c.half_lines > symbols.period_chips() || c.half_lines == 0 {
            return Err(Error::InvalidLineCount {
                lines: 2 * c.half_lines,
                period: symbols.period_chips(),
            });
        }
        let base = band_limit(&symbols, c.half_lines, c.line_floor_rel)?;
        let combs = (1..=p)
            .map(|n| apply_comb_offset(&base, n, p))
            .collect::<Result<Vec<_>>>()?;
        let record_len = samples_per_comb_period(combs[0].geometry(), c.sample_rate_hz)?;
        let fingerprint = fingerprint(c, &symbols);
        Ok(Self {
            config,
            symbols,
            combs,
            record_len,
            fingerprint,
        })
    }

    pub fn preset(name: &str) -> Result<Self> {
        Self::new(SounderConfig::preset(name)?)
    }

    pub fn config(&self) -> &SounderConfig {
        &self.config
    }

    pub fn symbols(&self) -> &SymbolSequence {
        &self.symbols
    }

    /// p.
    pub fn transmitters(&self) -> usize {
        self.config.transmitters
    }

    pub fn half_lines(&self) -> usize {
        self.config.half_lines
    }

    pub fn line_count(&self) -> usize {
        2 * self.config.half_lines
    }

    /// T.
    pub fn base_period(&self) -> f64 {
        self.symbols.base_period()
    }

    /// B = 2N/T.
    pub fn band(&self) -> f64 {
        self.line_count() as f64 / self.base_period()
    }

    /// f_e.
    pub fn sample_rate(&self) -> f64 {
        self.config.sample_rate_hz
    }

    /// Acquisition span pT.
    pub fn span(&self) -> f64 {
        self.config.transmitters as f64 * self.base_period()
    }

    /// Samples per acquisition, f_e·pT.
    pub fn record_len(&self) -> usize {
        self.record_len
    }

    /// Whether f_e = B, i.e. the record holds exactly p·2N samples.
    pub fn is_critically_sampled(&self) -> bool {
        self.record_len == self.transmitters() * self.line_count()
    }

    /// Comb of transmitter `n` (1-based).
    pub fn comb(&self, n: usize) -> Result<&SpectralComb> {
        self.combs.get(n.wrapping_sub(1)).ok_or(Error::TransmitterIndex {
            n,
            p: self.transmitters(),
        })
    }

    pub fn combs(&self) -> &[SpectralComb] {
        &self.combs
    }

    pub fn geometry(&self, n: usize) -> Result<CombGeometry> {
        self.comb(n).map(|c| *c.geometry())
    }

    /// Absolute ε_line for inversion.
    pub fn line_floor(&self) -> f64 {
        self.config.line_floor_rel * crate::dft::peak_magnitude(self.combs[0].lines())
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    /// Offset frequency 1/(pT) between adjacent transmitters.
    pub fn comb_spacing(&self) -> f64 {
        1.0 / self.span()
    }

    /// Sample count over `periods` base periods, when that is an integer.
    pub fn samples_over(&self, periods: f64) -> Option<usize> {
        as_integer(self.sample_rate() * periods * self.base_period())
    }
}

fn fingerprint(config: &SounderConfig, symbols: &SymbolSequence) -> String {
    let mut hasher = Sha256::new();
    hasher.update((config.transmitters as u64).to_le_bytes());
    hasher.update(config.chip_rate_hz.to_le_bytes());
    hasher.update((config.half_lines as u64).to_le_bytes());
    hasher.update(config.sample_rate_hz.to_le_bytes());
    hasher.update(config.line_floor_rel.to_le_bytes());
    hasher.update(config.ridge.to_le_bytes());
    for s in symbols.symbols() {
        hasher.update(s.re.to_le_bytes());
        hasher.update(s.im.to_le_bytes());
    }
    hasher.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
}
