//! Binary IQ files: little-endian interleaved `f64` I then Q per sample,
//! no header. Metadata lives in a TOML sidecar named `<file>.toml`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::waveform::BasebandSignal;

const BYTES_PER_SAMPLE: usize = 16;

/// Writes `bytes` to a temporary sibling file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty());
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::Format {
            path: path.to_path_buf(),
            reason: "not a file path".into(),
        })?
        .to_string_lossy();
    let tmp = match dir {
        Some(d) => d.join(format!(".{file_name}.tmp")),
        None => PathBuf::from(format!(".{file_name}.tmp")),
    };
    let mut file = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    file.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    file.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(file);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn encode_iq(samples: &[Complex64]) -> Vec<u8> {
    let mut bytes = Vec::with_capacity(samples.len() * BYTES_PER_SAMPLE);
    for s in samples {
        bytes.extend_from_slice(&s.re.to_le_bytes());
        bytes.extend_from_slice(&s.im.to_le_bytes());
    }
    bytes
}

pub fn decode_iq(bytes: &[u8]) -> Option<Vec<Complex64>> {
    if !bytes.len().is_multiple_of(BYTES_PER_SAMPLE) {
        return None;
    }
    let samples = bytes
        .chunks_exact(BYTES_PER_SAMPLE)
        .map(|chunk| {
            let (i, q) = chunk.split_at(8);
            Complex64::new(
                f64::from_le_bytes(i.try_into().unwrap()),
                f64::from_le_bytes(q.try_into().unwrap()),
            )
        })
        .collect();
    Some(samples)
}

pub fn write_iq(path: &Path, samples: &[Complex64]) -> Result<()> {
    write_atomic(path, &encode_iq(samples))
}

pub fn read_iq(path: &Path) -> Result<Vec<Complex64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_iq(&bytes).ok_or_else(|| Error::Format {
        path: path.to_path_buf(),
        reason: format!("{} bytes is not a whole number of samples", bytes.len()),
    })
}

/// Sidecar describing an IQ file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct IqMetadata {
    pub sample_rate_hz: f64,
    pub span_s: f64,
    pub samples: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub role: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fingerprint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snr_db: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transmitters: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channel: Option<usize>,
}

impl IqMetadata {
    pub fn for_signal(signal: &BasebandSignal) -> Self {
        Self {
            sample_rate_hz: signal.sample_rate(),
            span_s: signal.span(),
            samples: signal.len(),
            ..Default::default()
        }
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".toml");
    PathBuf::from(name)
}

/// Writes the samples and their sidecar.
pub fn write_signal(path: &Path, signal: &BasebandSignal, meta: &IqMetadata) -> Result<()> {
    write_iq(path, signal.samples())?;
    let text = toml::to_string(meta).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    write_atomic(&sidecar_path(path), text.as_bytes())
}

pub fn read_metadata(path: &Path) -> Result<IqMetadata> {
    let side = sidecar_path(path);
    let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    toml::from_str(&text).map_err(|e| Error::Format {
        path: side,
        reason: e.to_string(),
    })
}

pub fn read_signal(path: &Path) -> Result<(BasebandSignal, IqMetadata)> {
    let samples = read_iq(path)?;
    let meta = read_metadata(path)?;
    if meta.samples != samples.len() {
        return Err(Error::Format {
            path: path.to_path_buf(),
            reason: format!("sidecar says {} samples, file holds {}", meta.samples, samples.len()),
        });
    }
    let signal = BasebandSignal::new(samples, meta.sample_rate_hz, meta.span_s)?;
    Ok((signal, meta))
}
