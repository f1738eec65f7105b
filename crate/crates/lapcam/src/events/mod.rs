//! Typed surgical events: the universal unit flowing through graph
//! construction, strategy mining, and supervision.

mod descriptor;
mod detectors;

pub use descriptor::{
    build_descriptor, l2_rows, normalize_descriptors, robust_scale_dataset, zscore_within_video,
    DescriptorContext, DescriptorLayout, DESCRIPTOR_DIM, DESCRIPTOR_NAMES,
};
pub use detectors::{
    contamination_score, deformation_score, deformation_score_raw, deformation_score_raw_with,
    detect_contamination, detect_depth_change, detect_interaction,
    detect_visibility_degradation, fuse_events, parse_stream, view_quality_series,
    working_distance, working_distance_raw,
};

use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const EVENT_FORMAT_VERSION: &str = "event-v1";

/// Event taxonomy. Same-label events never overlap within one video.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EventLabel {
    Interaction,
    DepthAdvance,
    DepthRetreat,
    VisibilityDegradation,
    LensContamination,
}

impl EventLabel {
    pub const ALL: [EventLabel; 5] = [
        EventLabel::Interaction,
        EventLabel::DepthAdvance,
        EventLabel::DepthRetreat,
        EventLabel::VisibilityDegradation,
        EventLabel::LensContamination,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            EventLabel::Interaction => "interaction",
            EventLabel::DepthAdvance => "depth_advance",
            EventLabel::DepthRetreat => "depth_retreat",
            EventLabel::VisibilityDegradation => "visibility_degradation",
            EventLabel::LensContamination => "lens_contamination",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        EventLabel::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| Error::data(format!("unknown event label `{s}`")))
    }
}

impl fmt::Display for EventLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Detector identity plus the statistics that triggered the event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Provenance {
    pub detector: String,
    /// Peak value of the triggering statistic over the interval.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub peak_stat: Option<f64>,
    /// Channels that were absent, limiting the trigger condition.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub absent_channels: Vec<String>,
    /// Lens-cleaning confirmation: focus and contrast both restored shortly
    /// after a retreat that followed this contamination event.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cleaning_confirmed: Option<bool>,
    /// Raw interval-level camera response (du px, dv px, dz mm), kept in
    /// physical units because the descriptor copy is normalized away.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub raw_action: Option<[f64; 3]>,
    /// RANSAC inlier ratio backing `raw_action`, when estimated.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inlier_ratio: Option<f64>,
}

impl Provenance {
    pub fn new(detector: &str) -> Self {
        Provenance {
            detector: detector.to_string(),
            ..Default::default()
        }
    }
}

/// A typed event: label, interval, fixed-length descriptor with validity
/// mask, and detector provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct EventRecord {
    pub video_id: String,
    pub label: EventLabel,
    pub t_s: f64,
    pub t_e: f64,
    pub descriptor: Vec<f64>,
    pub valid_mask: Vec<u8>,
    pub provenance: Provenance,
}

impl EventRecord {
    pub fn span(label: EventLabel, t_s: f64, t_e: f64, provenance: Provenance) -> Self {
        EventRecord {
            video_id: String::new(),
            label,
            t_s,
            t_e,
            descriptor: vec![0.0; DESCRIPTOR_DIM],
            valid_mask: vec![0; DESCRIPTOR_DIM],
            provenance,
        }
    }

    pub fn duration(&self) -> f64 {
        self.t_e - self.t_s
    }

    pub fn check(&self) -> Result<()> {
        if !(self.t_s < self.t_e) {
            return Err(Error::invariant(format!(
                "event {} has t_s {} >= t_e {}",
                self.label, self.t_s, self.t_e
            )));
        }
        if self.descriptor.len() != DESCRIPTOR_DIM || self.valid_mask.len() != DESCRIPTOR_DIM {
            return Err(Error::invariant("descriptor/mask length mismatch"));
        }
        for (i, (&x, &m)) in self.descriptor.iter().zip(&self.valid_mask).enumerate() {
            if m == 1 && !x.is_finite() {
                return Err(Error::invariant(format!(
                    "descriptor dim {i} valid but non-finite"
                )));
            }
            if m == 0 && x != 0.0 {
                return Err(Error::invariant(format!(
                    "descriptor dim {i} masked but nonzero"
                )));
            }
        }
        Ok(())
    }
}

/// Detector thresholds. Values that carry units are documented inline;
/// fields left `None` are calibrated per stream.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectorConfig {
    /// Deformation-score trigger level (ratio, unitless).
    pub tau_def: f64,
    /// Tool-tip speed gate, pixels per frame.
    pub tau_p: f64,
    /// Grasper rate gate, radians per frame.
    pub tau_theta: f64,
    /// Cumulative deformation energy floor (sums smoothed score over frames).
    pub delta_def: f64,
    /// Working-distance rate gate, millimeters per second.
    pub tau_z: f64,
    /// Minimum cumulative depth change as a fraction of median depth.
    pub delta_min_coeff: f64,
    /// Focus floor; `None` calibrates to the stream's 25th percentile.
    pub tau_f: Option<f64>,
    /// Contrast floor; `None` calibrates to the stream's 25th percentile.
    pub tau_c: Option<f64>,
    /// Temporal persistence level for contamination accumulation.
    pub tau_persist: f64,
    /// Contamination area ratio trigger.
    pub tau_cont: f64,
    /// Minimum event duration, seconds.
    pub t_min: f64,
    /// Contamination accumulation window, seconds.
    pub k_w: f64,
    /// Tool-centric near-region radius, pixels.
    pub r_act: f64,
    /// Maximum bridged gap between condition runs, seconds.
    pub bridge_gap: f64,
    /// Hysteresis band as a fraction of the trigger threshold.
    pub hysteresis_ratio: f64,
    /// Working-distance low-pass cutoff, Hz.
    pub depth_cutoff_hz: f64,
    /// Savitzky-Golay window (frames, odd) and degree for score smoothing.
    pub savgol_window: usize,
    pub savgol_degree: usize,
    /// Fraction of the ROI that low-visibility pixels may cover before a
    /// frame is treated as an occlusion gap for deformation scoring.
    pub occlusion_lowvis_frac: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            tau_def: 1.8,
            tau_p: 2.0,
            tau_theta: 0.05,
            delta_def: f64::NAN, // resolved by delta_def_for
            tau_z: 2.0,
            delta_min_coeff: 0.08,
            tau_f: None,
            tau_c: None,
            tau_persist: 0.9,
            tau_cont: 0.12,
            t_min: 0.6,
            k_w: 0.8,
            r_act: 60.0,
            bridge_gap: 0.3,
            hysteresis_ratio: 0.7,
            depth_cutoff_hz: 2.5,
            savgol_window: 11,
            savgol_degree: 3,
            occlusion_lowvis_frac: 0.5,
        }
    }
}

impl DetectorConfig {
    /// Cumulative deformation floor; defaults to `1.2 * tau_def * t_min * fps`
    /// when not set explicitly.
    pub fn delta_def_for(&self, fps: f64) -> f64 {
        if self.delta_def.is_finite() {
            self.delta_def
        } else {
            1.2 * self.tau_def * self.t_min * fps
        }
    }

    pub fn check(&self) -> Result<()> {
        let positive = [
            ("tau_def", self.tau_def),
            ("tau_p", self.tau_p),
            ("tau_theta", self.tau_theta),
            ("tau_z", self.tau_z),
            ("delta_min_coeff", self.delta_min_coeff),
            ("tau_cont", self.tau_cont),
            ("t_min", self.t_min),
            ("k_w", self.k_w),
            ("r_act", self.r_act),
            ("depth_cutoff_hz", self.depth_cutoff_hz),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(Error::config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.hysteresis_ratio > 0.0 && self.hysteresis_ratio < 1.0) {
            return Err(Error::config("hysteresis_ratio must lie in (0,1)"));
        }
        if !(self.tau_persist > 0.0 && self.tau_persist <= 1.0) {
            return Err(Error::config("tau_persist must lie in (0,1]"));
        }
        if self.bridge_gap < 0.0 {
            return Err(Error::config("bridge_gap must be nonnegative"));
        }
        Ok(())
    }
}

fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

/// Write events in the line-oriented event file format:
/// `video_id,label,t_s,t_e,x[24],mask[24],provenance-json`.
pub fn save_events(events: &[EventRecord], path: &Path) -> Result<()> {
    let mut out = String::new();
    out.push_str(&format!(
        "#format={EVENT_FORMAT_VERSION} #d={DESCRIPTOR_DIM}\n"
    ));
    out.push_str(&format!("#layout={}\n", DESCRIPTOR_NAMES.join("|")));
    for e in events {
        e.check()?;
        let mut fields: Vec<String> = vec![
            e.video_id.clone(),
            e.label.as_str().to_string(),
            fmt_f64(e.t_s),
            fmt_f64(e.t_e),
        ];
        fields.extend(e.descriptor.iter().map(|&x| fmt_f64(x)));
        fields.extend(e.valid_mask.iter().map(|&m| m.to_string()));
        let prov = serde_json::to_string(&e.provenance)
            .map_err(|err| Error::data(format!("provenance encode: {err}")))?;
        fields.push(prov);
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn load_events(path: &Path) -> Result<Vec<EventRecord>> {
    let text = fs::read_to_string(path)?;
    let path_str = path.display().to_string();
    let mut events = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        // The provenance JSON may contain commas: split only the fixed-count
        // prefix fields and keep the remainder intact.
        let mut toks = line.splitn(4 + 2 * DESCRIPTOR_DIM + 1, ',');
        let bad = |msg: String| Error::Parse {
            path: path_str.clone(),
            line: lineno,
            msg,
        };
        let mut next = |what: &str| {
            toks.next()
                .ok_or_else(|| bad(format!("missing field {what}")))
        };
        let video_id = next("video_id")?.to_string();
        let label = EventLabel::parse(next("label")?)?;
        let t_s: f64 = next("t_s")?
            .parse()
            .map_err(|_| bad("bad t_s".to_string()))?;
        let t_e: f64 = next("t_e")?
            .parse()
            .map_err(|_| bad("bad t_e".to_string()))?;
        let mut descriptor = Vec::with_capacity(DESCRIPTOR_DIM);
        for i in 0..DESCRIPTOR_DIM {
            descriptor.push(
                next("x")?
                    .parse()
                    .map_err(|_| bad(format!("bad descriptor value at dim {i}")))?,
            );
        }
        let mut valid_mask = Vec::with_capacity(DESCRIPTOR_DIM);
        for i in 0..DESCRIPTOR_DIM {
            valid_mask.push(
                next("mask")?
                    .parse()
                    .map_err(|_| bad(format!("bad mask value at dim {i}")))?,
            );
        }
        let prov_json = next("provenance")?;
        let provenance: Provenance = serde_json::from_str(prov_json)
            .map_err(|err| bad(format!("bad provenance json: {err}")))?;
        let e = EventRecord {
            video_id,
            label,
            t_s,
            t_e,
            descriptor,
            valid_mask,
            provenance,
        };
        e.check()
            .map_err(|err| bad(format!("record invariant: {err}")))?;
        events.push(e);
    }
    Ok(events)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn event_file_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("events.txt");
        let mut prov = Provenance::new("interaction");
        prov.peak_stat = Some(3.25);
        prov.raw_action = Some([12.5, -3.0, -8.0 / 3.0]);
        let mut e = EventRecord::span(EventLabel::Interaction, 1.0, 3.5, prov);
        e.video_id = "demo".into();
        for i in 0..DESCRIPTOR_DIM {
            e.descriptor[i] = (i as f64 + 1.0) / 7.0;
            e.valid_mask[i] = 1;
        }
        save_events(&[e.clone()], &path).unwrap();
        let loaded = load_events(&path).unwrap();
        assert_eq!(loaded.len(), 1);
        assert_eq!(loaded[0], e);
    }

    #[test]
    fn masked_dims_must_be_zero() {
        let mut e = EventRecord::span(
            EventLabel::Interaction,
            0.0,
            1.0,
            Provenance::new("interaction"),
        );
        e.descriptor[0] = 1.0; // mask[0] is 0
        assert!(e.check().is_err());
    }

    #[test]
    fn config_rejects_bad_hysteresis() {
        let mut cfg = DetectorConfig::default();
        cfg.hysteresis_ratio = 1.0;
        assert!(cfg.check().is_err());
    }
}
