//! Estimate quality metrics: NMSE against the oracle, cross-talk into silent
//! channels, power-delay profile, dynamic range and RMS delay spread.

use serde::{Serialize, Serializer};

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::estimator::ImpulseResponseEstimate;

/// Lowest dB value reported for exact matches.
pub const DB_FLOOR: f64 = -300.0;

/// Samples within this many dB of the PDP peak enter the delay spread.
pub const SPREAD_THRESHOLD_DB: f64 = 30.0;

fn power_ratio_db(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        return if num == 0.0 { DB_FLOOR } else { f64::INFINITY };
    }
    if num == 0.0 {
        return DB_FLOOR;
    }
    (10.0 * (num / den).log10()).max(DB_FLOOR)
}

/// `‖est − oracle‖² / ‖oracle‖²` in dB, floored at [`DB_FLOOR`]; `+∞` when
/// the oracle is silent but the estimate is not.
pub fn nmse_db(estimate: &[Complex64], oracle: &[Complex64]) -> f64 {
    let err: f64 = estimate.iter().zip(oracle).map(|(e, o)| (e - o).norm_sqr()).sum();
    let reference: f64 = oracle.iter().map(|o| o.norm_sqr()).sum();
    power_ratio_db(err, reference)
}

/// `|est[i]|²` per sample.
pub fn power_delay_profile(estimate: &[Complex64]) -> Vec<f64> {
    estimate.iter().map(|v| v.norm_sqr()).collect()
}

/// Peak PDP over the median PDP (the noise floor), in dB.
pub fn dynamic_range_db(pdp: &[f64]) -> f64 {
    if pdp.is_empty() {
        return DB_FLOOR;
    }
    let peak = pdp.iter().copied().fold(0.0, f64::max);
    let mut sorted = pdp.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    let median = if sorted.len().is_multiple_of(2) {
        0.5 * (sorted[mid - 1] + sorted[mid])
    } else {
        sorted[mid]
    };
    if peak == 0.0 {
        return DB_FLOOR;
    }
    power_ratio_db(peak, median)
}

/// Power-weighted RMS spread of sample times, over samples within
/// `threshold_db` of the peak.
pub fn rms_delay_spread(pdp: &[f64], sample_interval: f64, threshold_db: f64) -> f64 {
    let peak = pdp.iter().copied().fold(0.0, f64::max);
    if peak == 0.0 {
        return 0.0;
    }
    let floor = peak * 10f64.powf(-threshold_db / 10.0);
    let (mut w, mut m1, mut m2) = (0.0, 0.0, 0.0);
    for (i, &p) in pdp.iter().enumerate().filter(|(_, &p)| p >= floor) {
        let t = i as f64 * sample_interval;
        w += p;
        m1 += p * t;
        m2 += p * t * t;
    }
    let mean = m1 / w;
    (m2 / w - mean * mean).max(0.0).sqrt()
}

fn db<S: Serializer>(value: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if value.is_finite() {
        s.serialize_f64(*value)
    } else if *value > 0.0 {
        s.serialize_str("+inf")
    } else {
        s.serialize_str("-inf")
    }
}

fn opt_db<S: Serializer>(value: &Option<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match value {
        Some(v) => db(v, s),
        None => s.serialize_none(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChannelMetrics {
    pub channel: usize,
    #[serde(serialize_with = "db")]
    pub nmse_db: f64,
    #[serde(serialize_with = "db")]
    pub peak_dynamic_range_db: f64,
    pub delay_spread_s: f64,
    pub energy: f64,
    #[serde(skip)]
    pub pdp: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub channels: Vec<ChannelMetrics>,
    /// Peak of the strongest silent-channel estimate over the peak of the
    /// strongest active one, in dB. `None` unless both kinds are present.
    #[serde(serialize_with = "opt_db")]
    pub cross_talk_db: Option<f64>,
}

impl MetricsReport {
    pub fn worst_nmse_db(&self) -> f64 {
        self.channels
            .iter()
            .map(|c| c.nmse_db)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

pub fn compute_metrics(
    estimates: &[ImpulseResponseEstimate],
    oracles: &[ImpulseResponseEstimate],
) -> Result<MetricsReport> {
    if estimates.len() != oracles.len() {
        return Err(Error::SignalMismatch(format!(
            "{} estimates vs {} oracles",
            estimates.len(),
            oracles.len()
        )));
    }
    let mut channels = Vec::with_capacity(estimates.len());
    let (mut silent_peak, mut active_peak) = (None::<f64>, None::<f64>);
    for (est, oracle) in estimates.iter().zip(oracles) {
        if est.samples().len() != oracle.samples().len() {
            return Err(Error::LengthMismatch {
                expected: oracle.samples().len(),
                actual: est.samples().len(),
            });
        }
        let pdp = power_delay_profile(est.samples());
        if oracle.energy() == 0.0 {
            silent_peak = Some(silent_peak.unwrap_or(0.0).max(est.peak()));
        } else {
            active_peak = Some(active_peak.unwrap_or(0.0).max(est.peak()));
        }
        channels.push(ChannelMetrics {
            channel: est.channel(),
            nmse_db: nmse_db(est.samples(), oracle.samples()),
            peak_dynamic_range_db: dynamic_range_db(&pdp),
            delay_spread_s: rms_delay_spread(&pdp, est.sample_interval(), SPREAD_THRESHOLD_DB),
            energy: est.energy(),
            pdp,
        });
    }
    let cross_talk_db = match (silent_peak, active_peak) {
        (Some(s), Some(a)) => Some(power_ratio_db(s * s, a * a)),
        _ => None,
    };
    Ok(MetricsReport {
        channels,
        cross_talk_db,
    })
}
