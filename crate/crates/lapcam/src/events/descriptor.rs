//! Fixed-length event descriptors: layout, per-event construction from the
//! signal stream, and the hierarchical normalization pipeline
//! (within-video z-score, dataset robust scaling, row-wise l2).

use crate::error::{Error, Result};
use crate::events::{DetectorConfig, EventLabel, EventRecord};
use crate::series::{percentile, ScalarSeries};
use crate::stream::SignalStream;

use super::detectors::{
    contamination_score, deformation_score, view_quality_series, working_distance,
};

pub const DESCRIPTOR_DIM: usize = 24;

/// Published layout of the 24 descriptor dimensions, also embedded in the
/// event file header.
pub const DESCRIPTOR_NAMES: [&str; DESCRIPTOR_DIM] = [
    "tool_speed_mean",
    "tool_speed_peak",
    "tool_speed_var",
    "grasper_rate_mean",
    "grasper_rate_peak",
    "grasper_rate_var",
    "s_def_mean",
    "s_def_peak",
    "s_def_var",
    "depth_direction",
    "depth_abs_change",
    "depth_mean_rate",
    "focus_q25",
    "focus_q50",
    "focus_q75",
    "contrast_q25",
    "contrast_q50",
    "contrast_q75",
    "contamination_q25",
    "contamination_q50",
    "contamination_q75",
    "action_du",
    "action_dv",
    "action_dz",
];

/// Dimension groups of the layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DescriptorLayout {
    ToolSpeed,
    GrasperRate,
    Deformation,
    Depth,
    Focus,
    Contrast,
    Contamination,
    Action,
}

impl DescriptorLayout {
    pub fn dims(self) -> std::ops::Range<usize> {
        match self {
            DescriptorLayout::ToolSpeed => 0..3,
            DescriptorLayout::GrasperRate => 3..6,
            DescriptorLayout::Deformation => 6..9,
            DescriptorLayout::Depth => 9..12,
            DescriptorLayout::Focus => 12..15,
            DescriptorLayout::Contrast => 15..18,
            DescriptorLayout::Contamination => 18..21,
            DescriptorLayout::Action => 21..24,
        }
    }

    /// Groups applicable to an event type. Kinematic and biomechanical cues
    /// describe interactions; depth cues describe depth events; visual
    /// integrity and camera response apply everywhere.
    pub fn applicable(label: EventLabel) -> Vec<DescriptorLayout> {
        use DescriptorLayout::*;
        match label {
            EventLabel::Interaction => {
                vec![ToolSpeed, GrasperRate, Deformation, Focus, Contrast, Contamination, Action]
            }
            EventLabel::DepthAdvance | EventLabel::DepthRetreat => {
                vec![Depth, Focus, Contrast, Contamination, Action]
            }
            EventLabel::VisibilityDegradation | EventLabel::LensContamination => {
                vec![Focus, Contrast, Contamination, Action]
            }
        }
    }
}

/// Precomputed per-stream series shared by every descriptor build.
pub struct DescriptorContext {
    pub tool_speed: ScalarSeries,
    pub grasper_rate: ScalarSeries,
    pub s_def: ScalarSeries,
    pub z_tilde: ScalarSeries,
    pub focus: ScalarSeries,
    pub contrast: ScalarSeries,
    pub s_cont: ScalarSeries,
}

impl DescriptorContext {
    pub fn new(stream: &SignalStream, cfg: &DetectorConfig) -> Result<Self> {
        let times = stream.times();
        let n = stream.len();
        // Tool speed and grasper rate in per-second units for descriptors.
        let mut speed = vec![0.0; n];
        let mut speed_ok = vec![false; n];
        let mut rate = vec![0.0; n];
        let mut rate_ok = vec![false; n];
        for i in 0..n {
            let (a, b) = if i == 0 {
                (0, 1.min(n - 1))
            } else if i == n - 1 {
                (n - 2, n - 1)
            } else {
                (i - 1, i + 1)
            };
            if a == b {
                continue;
            }
            let dt = times[b] - times[a];
            if let (Some((ua, va)), Some((ub, vb))) =
                (stream.frames[a].tool_tip, stream.frames[b].tool_tip)
            {
                speed[i] = (ub - ua).hypot(vb - va) / dt;
                speed_ok[i] = true;
            }
            if let (Some(ta), Some(tb)) =
                (stream.frames[a].grasper_angle, stream.frames[b].grasper_angle)
            {
                rate[i] = (tb - ta).abs() / dt;
                rate_ok[i] = true;
            }
        }
        let (focus, contrast) = view_quality_series(stream)?;
        Ok(DescriptorContext {
            tool_speed: ScalarSeries::new(times.clone(), speed, speed_ok)?,
            grasper_rate: ScalarSeries::new(times, rate, rate_ok)?,
            s_def: deformation_score(stream, cfg)?,
            z_tilde: working_distance(stream, cfg)?,
            focus,
            contrast,
            s_cont: contamination_score(stream, cfg)?,
        })
    }
}

fn stats(values: &[f64]) -> Option<(f64, f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let peak = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Some((mean, peak, var))
}

fn quartiles(values: &[f64]) -> Option<(f64, f64, f64)> {
    Some((
        percentile(values, 25.0)?,
        percentile(values, 50.0)?,
        percentile(values, 75.0)?,
    ))
}

/// Fill an event's descriptor and validity mask from the stream context and
/// the interval-level camera response `(du, dv, dz)`. Dimensions that are
/// inapplicable to the event type, or whose data is unavailable over the
/// interval, stay masked at exactly zero.
pub fn build_descriptor(
    event: &EventRecord,
    ctx: &DescriptorContext,
    camera_response: Option<(f64, f64, f64)>,
) -> EventRecord {
    let mut e = event.clone();
    e.descriptor = vec![0.0; DESCRIPTOR_DIM];
    e.valid_mask = vec![0; DESCRIPTOR_DIM];
    // Half-open interval: t_e already points one frame past the last sample.
    let (t0, t1) = (e.t_s, e.t_e - 1e-9);
    let groups = DescriptorLayout::applicable(e.label);

    let set3 = |group: DescriptorLayout, vals: Option<(f64, f64, f64)>, e: &mut EventRecord| {
        if let Some((a, b, c)) = vals {
            let d = group.dims().start;
            e.descriptor[d] = a;
            e.descriptor[d + 1] = b;
            e.descriptor[d + 2] = c;
            e.valid_mask[d] = 1;
            e.valid_mask[d + 1] = 1;
            e.valid_mask[d + 2] = 1;
        }
    };

    for group in groups {
        match group {
            DescriptorLayout::ToolSpeed => {
                set3(group, stats(&ctx.tool_speed.valid_values_in(t0, t1)), &mut e)
            }
            DescriptorLayout::GrasperRate => {
                set3(group, stats(&ctx.grasper_rate.valid_values_in(t0, t1)), &mut e)
            }
            DescriptorLayout::Deformation => {
                set3(group, stats(&ctx.s_def.valid_values_in(t0, t1)), &mut e)
            }
            DescriptorLayout::Depth => {
                let zs = ctx.z_tilde.valid_values_in(t0, t1);
                if zs.len() >= 2 {
                    let dz = zs[zs.len() - 1] - zs[0];
                    let direction = if dz > 0.0 {
                        1.0
                    } else if dz < 0.0 {
                        -1.0
                    } else {
                        0.0
                    };
                    let duration = e.duration().max(1e-9);
                    set3(group, Some((direction, dz.abs(), dz.abs() / duration)), &mut e);
                }
            }
            DescriptorLayout::Focus => {
                set3(group, quartiles(&ctx.focus.valid_values_in(t0, t1)), &mut e)
            }
            DescriptorLayout::Contrast => {
                set3(group, quartiles(&ctx.contrast.valid_values_in(t0, t1)), &mut e)
            }
            DescriptorLayout::Contamination => {
                set3(group, quartiles(&ctx.s_cont.valid_values_in(t0, t1)), &mut e)
            }
            DescriptorLayout::Action => {
                if let Some((du, dv, dz)) = camera_response {
                    set3(group, Some((du, dv, dz)), &mut e);
                    e.provenance.raw_action = Some([du, dv, dz]);
                }
            }
        }
    }
    e
}

/// Sum in a value-sorted order so the result is independent of input order.
fn stable_sum(values: &mut Vec<f64>) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    values.iter().sum()
}

/// Within-video z-score per valid dimension. A zero-variance dimension maps
/// to zero.
pub fn zscore_within_video(events: &[EventRecord]) -> Result<Vec<EventRecord>> {
    let mut videos: Vec<String> = events.iter().map(|e| e.video_id.clone()).collect();
    videos.sort();
    videos.dedup();
    let mut out = events.to_vec();
    for video in videos {
        let idx: Vec<usize> = (0..events.len())
            .filter(|&i| events[i].video_id == video)
            .collect();
        if idx.len() < 2 {
            return Err(Error::data(format!(
                "video `{video}` has {} event(s); z-scoring needs at least 2",
                idx.len()
            )));
        }
        for d in 0..DESCRIPTOR_DIM {
            let vals: Vec<f64> = idx
                .iter()
                .filter(|&&i| events[i].valid_mask[d] == 1)
                .map(|&i| events[i].descriptor[d])
                .collect();
            if vals.is_empty() {
                continue;
            }
            let n = vals.len() as f64;
            let mean = stable_sum(&mut vals.clone()) / n;
            let mut sq: Vec<f64> = vals.iter().map(|v| (v - mean) * (v - mean)).collect();
            let sigma = (stable_sum(&mut sq) / n).sqrt();
            for &i in &idx {
                if out[i].valid_mask[d] == 1 {
                    out[i].descriptor[d] = if sigma < 1e-12 {
                        0.0
                    } else {
                        (out[i].descriptor[d] - mean) / sigma
                    };
                }
            }
        }
    }
    Ok(out)
}

/// Dataset-level robust scaling: per dimension, map the [p5, p95] range onto
/// [-1, 1] and clip at +/-1.5. Returns the scaled events plus the dimensions
/// that were valid nowhere in the dataset.
pub fn robust_scale_dataset(events: &[EventRecord]) -> (Vec<EventRecord>, Vec<usize>) {
    let mut out = events.to_vec();
    let mut dead_dims = Vec::new();
    for d in 0..DESCRIPTOR_DIM {
        let vals: Vec<f64> = events
            .iter()
            .filter(|e| e.valid_mask[d] == 1)
            .map(|e| e.descriptor[d])
            .collect();
        if vals.is_empty() {
            dead_dims.push(d);
            continue;
        }
        let p5 = percentile(&vals, 5.0).unwrap();
        let p95 = percentile(&vals, 95.0).unwrap();
        let span = p95 - p5;
        for e in out.iter_mut() {
            if e.valid_mask[d] == 1 {
                e.descriptor[d] = if span < 1e-12 {
                    0.0
                } else {
                    (2.0 * (e.descriptor[d] - p5) / span - 1.0).clamp(-1.5, 1.5)
                };
            }
        }
    }
    (out, dead_dims)
}

/// Row-wise l2 normalization over valid dimensions.
pub fn l2_rows(events: &[EventRecord]) -> Vec<EventRecord> {
    let mut out = events.to_vec();
    for e in out.iter_mut() {
        let norm = e
            .descriptor
            .iter()
            .zip(&e.valid_mask)
            .filter(|(_, &m)| m == 1)
            .map(|(&x, _)| x * x)
            .sum::<f64>()
            .sqrt();
        if norm > 0.0 {
            for (x, &m) in e.descriptor.iter_mut().zip(&e.valid_mask) {
                if m == 1 {
                    *x /= norm + 1e-9;
                }
            }
        }
    }
    out
}

/// Full hierarchical normalization. Returns the normalized events and the
/// list of dimensions left as zeros because they were valid nowhere.
pub fn normalize_descriptors(events: &[EventRecord]) -> Result<(Vec<EventRecord>, Vec<usize>)> {
    let z = zscore_within_video(events)?;
    let (scaled, dead) = robust_scale_dataset(&z);
    Ok((l2_rows(&scaled), dead))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::Provenance;
    use approx::assert_abs_diff_eq;

    fn event_with(video: &str, dims: &[(usize, f64)]) -> EventRecord {
        let mut e = EventRecord::span(
            EventLabel::Interaction,
            0.0,
            1.0,
            Provenance::new("test"),
        );
        e.video_id = video.into();
        for &(d, v) in dims {
            e.descriptor[d] = v;
            e.valid_mask[d] = 1;
        }
        e
    }

    #[test]
    fn identical_descriptors_zero_out() {
        let events = vec![
            event_with("a", &[(0, 3.0), (6, 1.0)]),
            event_with("a", &[(0, 3.0), (6, 1.0)]),
            event_with("a", &[(0, 3.0), (6, 1.0)]),
        ];
        let (out, _) = normalize_descriptors(&events).unwrap();
        for e in out {
            assert!(e.descriptor.iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn rows_are_unit_norm() {
        let events = vec![
            event_with("a", &[(0, 3.0), (6, 1.0), (12, 9.0)]),
            event_with("a", &[(0, 5.0), (6, 2.0), (12, 1.0)]),
            event_with("a", &[(0, 1.0), (6, 7.0), (12, 4.0)]),
        ];
        let (out, _) = normalize_descriptors(&events).unwrap();
        for e in &out {
            let norm: f64 = e.descriptor.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 0.0 {
                assert_abs_diff_eq!(norm, 1.0, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn outlier_clipped_to_band() {
        // 20 inliers around 1.0 plus one at 100x: after z-score and robust
        // scaling the outlier must sit on the clip boundary.
        let mut events: Vec<EventRecord> = (0..20)
            .map(|i| event_with("a", &[(0, 1.0 + 0.01 * i as f64)]))
            .collect();
        events.push(event_with("a", &[(0, 100.0)]));
        let z = zscore_within_video(&events).unwrap();
        let (scaled, _) = robust_scale_dataset(&z);
        let val = scaled.last().unwrap().descriptor[0];
        assert_abs_diff_eq!(val, 1.5, epsilon = 1e-12);
        for e in &scaled[..20] {
            assert!(e.descriptor[0].abs() <= 1.5 + 1e-12);
        }
    }

    #[test]
    fn permutation_round_trip_is_identical() {
        let events = vec![
            event_with("a", &[(0, 3.0), (12, 2.0)]),
            event_with("a", &[(0, 5.0), (12, 8.0)]),
            event_with("b", &[(0, 1.0), (12, 4.0)]),
            event_with("b", &[(0, 2.5), (12, 0.5)]),
        ];
        let (fwd, _) = normalize_descriptors(&events).unwrap();
        let permuted: Vec<EventRecord> = events.iter().rev().cloned().collect();
        let (rev, _) = normalize_descriptors(&permuted).unwrap();
        let unpermuted: Vec<EventRecord> = rev.into_iter().rev().collect();
        for (a, b) in fwd.iter().zip(&unpermuted) {
            assert_eq!(a.descriptor, b.descriptor);
        }
    }

    #[test]
    fn single_event_video_is_an_error() {
        let events = vec![event_with("a", &[(0, 1.0)])];
        assert!(normalize_descriptors(&events).is_err());
    }

    #[test]
    fn dead_dimension_reported() {
        let events = vec![
            event_with("a", &[(0, 1.0)]),
            event_with("a", &[(0, 2.0)]),
        ];
        let (_, dead) = normalize_descriptors(&events).unwrap();
        assert!(dead.contains(&5));
        assert!(!dead.contains(&0));
    }
}
