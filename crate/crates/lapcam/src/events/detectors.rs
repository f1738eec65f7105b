//! The three detector branches (interaction, depth change, view quality),
//! hysteresis bridging, and fusion into one event timeline.
//!
//! All detectors are deterministic functions of `(stream, cfg)`; an event
//! interval `[t_s, t_e]` uses `t_e = t(last frame) + 1/fps`, so an n-frame
//! run has duration `n / fps`.

use crate::error::{Error, Result};
use crate::events::{DetectorConfig, EventLabel, EventRecord, Provenance};
use crate::series::{median, percentile, savgol_smooth, lowpass_zero_phase, ScalarSeries};
use crate::stream::SignalStream;

const EPS_REF: f64 = 1e-6;

/// Contrastive deformation score before temporal smoothing: median flow
/// magnitude near the tool tip over the median in the distal reference
/// region.
pub fn deformation_score_raw(stream: &SignalStream) -> Result<ScalarSeries> {
    deformation_score_raw_with(stream, &DetectorConfig::default())
}

pub fn deformation_score_raw_with(
    stream: &SignalStream,
    cfg: &DetectorConfig,
) -> Result<ScalarSeries> {
    let n = stream.len();
    let mut v = vec![0.0; n];
    let mut valid = vec![false; n];
    let r2 = cfg.r_act * cfg.r_act;
    for (i, f) in stream.frames.iter().enumerate() {
        let Some((u, vpix)) = f.tool_tip else {
            continue;
        };
        // Heavy low-visibility coverage makes the flow untrustworthy: the
        // sample becomes an occlusion gap rather than a score.
        let roi_count = f.surg_roi.data.iter().filter(|&&m| m == 1.0).count();
        if roi_count > 0 {
            let occluded = f
                .surg_roi
                .data
                .iter()
                .zip(&f.low_vis.data)
                .filter(|(&roi, &lv)| roi == 1.0 && lv == 1.0)
                .count();
            if (occluded as f64) / (roi_count as f64) > cfg.occlusion_lowvis_frac {
                continue;
            }
        }
        let mut near = Vec::new();
        let mut reference = Vec::new();
        for y in 0..stream.h {
            for x in 0..stream.w {
                let dx = x as f64 - u;
                let dy = y as f64 - vpix;
                let in_disk = dx * dx + dy * dy <= r2;
                if in_disk {
                    near.push(f.flow.magnitude(y, x));
                } else if f.surg_roi.get(y, x) == 1.0 && f.tool_mask.get(y, x) == 0.0 {
                    reference.push(f.flow.magnitude(y, x));
                }
            }
        }
        let (Some(m_near), Some(m_ref)) = (median(&near), median(&reference)) else {
            continue;
        };
        v[i] = m_near / (m_ref + EPS_REF);
        valid[i] = true;
    }
    ScalarSeries::new(stream.times(), v, valid)
}

/// Smoothed deformation score `S_def(t)`.
pub fn deformation_score(stream: &SignalStream, cfg: &DetectorConfig) -> Result<ScalarSeries> {
    let raw = deformation_score_raw_with(stream, cfg)?;
    if raw.len() >= cfg.savgol_window {
        savgol_smooth(&raw, cfg.savgol_window, cfg.savgol_degree)
    } else {
        Ok(raw)
    }
}

/// Tool-tip speed in pixels per frame (central differences).
fn tool_speed_per_frame(stream: &SignalStream) -> Vec<Option<f64>> {
    let n = stream.len();
    let tip = |i: usize| stream.frames[i].tool_tip;
    (0..n)
        .map(|i| {
            let (a, b, span) = if i == 0 {
                (tip(0), tip(1.min(n - 1)), 1.0)
            } else if i == n - 1 {
                (tip(n - 2), tip(n - 1), 1.0)
            } else {
                (tip(i - 1), tip(i + 1), 2.0)
            };
            match (a, b) {
                (Some((ua, va)), Some((ub, vb))) => {
                    Some(((ub - ua).hypot(vb - va)) / span)
                }
                _ => None,
            }
        })
        .collect()
}

/// Grasper angular rate in radians per frame (central differences).
fn grasper_rate_per_frame(stream: &SignalStream) -> Vec<Option<f64>> {
    let n = stream.len();
    let theta = |i: usize| stream.frames[i].grasper_angle;
    (0..n)
        .map(|i| {
            let (a, b, span) = if i == 0 {
                (theta(0), theta(1.min(n - 1)), 1.0)
            } else if i == n - 1 {
                (theta(n - 2), theta(n - 1), 1.0)
            } else {
                (theta(i - 1), theta(i + 1), 2.0)
            };
            match (a, b) {
                (Some(ta), Some(tb)) => Some((tb - ta).abs() / span),
                _ => None,
            }
        })
        .collect()
}

/// Maximal index runs where `cond` holds.
fn runs(cond: &[bool]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, &c) in cond.iter().enumerate() {
        match (c, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                out.push((s, i - 1));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((s, cond.len() - 1));
    }
    out
}

/// Merge runs separated by at most `bridge_gap` seconds when `floor_ok`
/// holds on every gap sample.
fn bridge_runs(
    runs: Vec<(usize, usize)>,
    times: &[f64],
    bridge_gap: f64,
    floor_ok: &[bool],
) -> Vec<(usize, usize)> {
    let mut out: Vec<(usize, usize)> = Vec::new();
    for run in runs {
        match out.last_mut() {
            Some(prev) if times[run.0] - times[prev.1] <= bridge_gap => {
                let gap_ok = ((prev.1 + 1)..run.0).all(|i| floor_ok[i]);
                if gap_ok {
                    prev.1 = run.1;
                } else {
                    out.push(run);
                }
            }
            _ => out.push(run),
        }
    }
    out
}

fn run_interval(stream: &SignalStream, run: (usize, usize)) -> (f64, f64) {
    let dt = 1.0 / stream.fps;
    (stream.frames[run.0].t, stream.frames[run.1].t + dt)
}

/// Interaction events: tissue response above `tau_def` while the tool shows
/// kinematic intent, sustained long enough and with enough cumulative
/// deformation energy. Brief lulls are bridged while the score stays above
/// the hysteresis floor.
pub fn detect_interaction(
    stream: &SignalStream,
    cfg: &DetectorConfig,
) -> Result<Vec<EventRecord>> {
    cfg.check()?;
    let score = deformation_score(stream, cfg)?;
    if !score.valid.iter().any(|&ok| ok) {
        return Ok(Vec::new());
    }
    let speed = tool_speed_per_frame(stream);
    let rate = grasper_rate_per_frame(stream);
    let tip_absent = speed.iter().all(Option::is_none);
    let theta_absent = rate.iter().all(Option::is_none);

    let n = stream.len();
    let mut cond = vec![false; n];
    let mut floor_ok = vec![false; n];
    for i in 0..n {
        // Absent channels drop out of the intent disjunction.
        let intent = speed[i].map(|s| s > cfg.tau_p).unwrap_or(false)
            || rate[i].map(|r| r > cfg.tau_theta).unwrap_or(false);
        cond[i] = score.valid[i] && score.v[i] > cfg.tau_def && intent;
        floor_ok[i] = score.valid[i] && score.v[i] > cfg.hysteresis_ratio * cfg.tau_def;
    }

    let merged = bridge_runs(runs(&cond), &score.t, cfg.bridge_gap, &floor_ok);
    let delta_def = cfg.delta_def_for(stream.fps);
    let mut events = Vec::new();
    for run in merged {
        let (t_s, t_e) = run_interval(stream, run);
        if t_e - t_s + 1e-9 < cfg.t_min {
            continue;
        }
        let energy: f64 = (run.0..=run.1)
            .filter(|&i| score.valid[i])
            .map(|i| score.v[i])
            .sum();
        if energy <= delta_def {
            continue;
        }
        let peak = (run.0..=run.1)
            .filter(|&i| score.valid[i])
            .map(|i| score.v[i])
            .fold(f64::NEG_INFINITY, f64::max);
        let mut prov = Provenance::new("interaction");
        prov.peak_stat = Some(peak);
        if tip_absent {
            prov.absent_channels.push("tool_tip".into());
        }
        if theta_absent {
            prov.absent_channels.push("grasper_angle".into());
        }
        let mut e = EventRecord::span(EventLabel::Interaction, t_s, t_e, prov);
        e.video_id = stream.video_id.clone();
        events.push(e);
    }
    Ok(events)
}

/// Raw working distance: per-frame median depth over the surgical ROI.
pub fn working_distance_raw(stream: &SignalStream) -> Result<ScalarSeries> {
    let n = stream.len();
    let mut v = vec![0.0; n];
    let mut valid = vec![false; n];
    for (i, f) in stream.frames.iter().enumerate() {
        let vals: Vec<f64> = f
            .surg_roi
            .data
            .iter()
            .zip(&f.depth.data)
            .filter(|(&roi, _)| roi == 1.0)
            .map(|(_, &d)| d)
            .collect();
        if let Some(m) = median(&vals) {
            v[i] = m;
            valid[i] = true;
        }
    }
    ScalarSeries::new(stream.times(), v, valid)
}

/// Low-passed working distance `z~(t)`.
pub fn working_distance(stream: &SignalStream, cfg: &DetectorConfig) -> Result<ScalarSeries> {
    let raw = working_distance_raw(stream)?;
    lowpass_zero_phase(&raw, cfg.depth_cutoff_hz, stream.fps)
}

/// Central-difference derivative in value units per second.
fn derivative_per_second(s: &ScalarSeries) -> (Vec<f64>, Vec<bool>) {
    let n = s.len();
    let mut d = vec![0.0; n];
    let mut valid = vec![false; n];
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
        if s.valid[a] && s.valid[b] {
            d[i] = (s.v[b] - s.v[a]) / (s.t[b] - s.t[a]);
            valid[i] = true;
        }
    }
    (d, valid)
}

/// Depth-change events: sustained monotone trend of the filtered working
/// distance, classified Advance (decreasing) or Retreat (increasing), with a
/// scale-adaptive cumulative-magnitude floor.
pub fn detect_depth_change(
    stream: &SignalStream,
    cfg: &DetectorConfig,
) -> Result<Vec<EventRecord>> {
    cfg.check()?;
    let raw = working_distance_raw(stream)?;
    let valid_raw: Vec<f64> = raw
        .v
        .iter()
        .zip(&raw.valid)
        .filter(|(_, &ok)| ok)
        .map(|(&z, _)| z)
        .collect();
    let Some(z_median) = median(&valid_raw) else {
        return Ok(Vec::new());
    };
    let delta_min = cfg.delta_min_coeff * z_median;
    let zt = lowpass_zero_phase(&raw, cfg.depth_cutoff_hz, stream.fps)?;
    let (zdot, dvalid) = derivative_per_second(&zt);

    let n = stream.len();
    let mut events = Vec::new();
    for (label, sign) in [(EventLabel::DepthAdvance, -1.0), (EventLabel::DepthRetreat, 1.0)] {
        let cond: Vec<bool> = (0..n)
            .map(|i| dvalid[i] && zt.valid[i] && sign * zdot[i] > cfg.tau_z)
            .collect();
        for run in runs(&cond) {
            let (t_s, t_e) = run_interval(stream, run);
            if t_e - t_s + 1e-9 < cfg.t_min {
                continue;
            }
            let dz = zt.v[run.1] - zt.v[run.0];
            if dz.abs() <= delta_min {
                continue;
            }
            let peak = (run.0..=run.1)
                .map(|i| zdot[i].abs())
                .fold(f64::NEG_INFINITY, f64::max);
            let mut prov = Provenance::new("depth_change");
            prov.peak_stat = Some(peak);
            let mut e = EventRecord::span(label, t_s, t_e, prov);
            e.video_id = stream.video_id.clone();
            events.push(e);
        }
    }
    events.sort_by(|a, b| a.t_s.partial_cmp(&b.t_s).unwrap());
    Ok(events)
}

/// Focus measure `F(t)` (median forward-difference gradient magnitude over
/// the surgical ROI) and scale-invariant contrast `C(t)` (coefficient of
/// variation).
pub fn view_quality_series(stream: &SignalStream) -> Result<(ScalarSeries, ScalarSeries)> {
    let n = stream.len();
    let mut fv = vec![0.0; n];
    let mut f_ok = vec![false; n];
    let mut cv = vec![0.0; n];
    let mut c_ok = vec![false; n];
    for (i, f) in stream.frames.iter().enumerate() {
        let mut grads = Vec::new();
        let mut vals = Vec::new();
        for y in 0..stream.h {
            for x in 0..stream.w {
                if f.surg_roi.get(y, x) != 1.0 {
                    continue;
                }
                vals.push(f.intensity.get(y, x));
                if x + 1 < stream.w && y + 1 < stream.h {
                    let gx = f.intensity.get(y, x + 1) - f.intensity.get(y, x);
                    let gy = f.intensity.get(y + 1, x) - f.intensity.get(y, x);
                    grads.push(gx.hypot(gy));
                }
            }
        }
        if let Some(m) = median(&grads) {
            fv[i] = m;
            f_ok[i] = true;
        }
        if !vals.is_empty() {
            let mu = vals.iter().sum::<f64>() / vals.len() as f64;
            if mu != 0.0 {
                let var = vals.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>()
                    / vals.len() as f64;
                cv[i] = var.sqrt() / mu;
                c_ok[i] = true;
            }
        }
    }
    let t = stream.times();
    Ok((
        ScalarSeries::new(t.clone(), fv, f_ok)?,
        ScalarSeries::new(t, cv, c_ok)?,
    ))
}

/// Resolve the focus/contrast floors: configured values, or each stream's
/// own 25th percentile.
fn resolve_view_thresholds(
    cfg: &DetectorConfig,
    f: &ScalarSeries,
    c: &ScalarSeries,
) -> Result<(f64, f64)> {
    let calib = |s: &ScalarSeries| -> Option<f64> {
        let vals: Vec<f64> = s
            .v
            .iter()
            .zip(&s.valid)
            .filter(|(_, &ok)| ok)
            .map(|(&v, _)| v)
            .collect();
        percentile(&vals, 25.0)
    };
    let tau_f = match cfg.tau_f {
        Some(v) => v,
        None => calib(f).ok_or_else(|| Error::data("no valid focus samples to calibrate"))?,
    };
    let tau_c = match cfg.tau_c {
        Some(v) => v,
        None => calib(c).ok_or_else(|| Error::data("no valid contrast samples to calibrate"))?,
    };
    Ok((tau_f, tau_c))
}

/// Runs of a hysteresis state machine: enter when `enter[i]`, stay while
/// `stay[i]`; an invalid sample (`None`) ends the run.
fn hysteresis_runs(enter: &[Option<bool>], stay: &[Option<bool>]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start: Option<usize> = None;
    for i in 0..enter.len() {
        match start {
            None => {
                if enter[i] == Some(true) {
                    start = Some(i);
                }
            }
            Some(s) => {
                if stay[i] != Some(true) {
                    out.push((s, i - 1));
                    start = if enter[i] == Some(true) { Some(i) } else { None };
                }
            }
        }
    }
    if let Some(s) = start {
        out.push((s, enter.len() - 1));
    }
    out
}

/// Visibility-degradation events: focus and contrast both below their
/// floors, persisting at least `t_min`, with hysteresis exit at
/// `threshold / hysteresis_ratio`.
pub fn detect_visibility_degradation(
    stream: &SignalStream,
    cfg: &DetectorConfig,
) -> Result<Vec<EventRecord>> {
    cfg.check()?;
    let (f, c) = view_quality_series(stream)?;
    let (tau_f, tau_c) = resolve_view_thresholds(cfg, &f, &c)?;
    let exit_f = tau_f / cfg.hysteresis_ratio;
    let exit_c = tau_c / cfg.hysteresis_ratio;
    let n = stream.len();
    let enter: Vec<Option<bool>> = (0..n)
        .map(|i| (f.valid[i] && c.valid[i]).then(|| f.v[i] < tau_f && c.v[i] < tau_c))
        .collect();
    let stay: Vec<Option<bool>> = (0..n)
        .map(|i| (f.valid[i] && c.valid[i]).then(|| f.v[i] < exit_f && c.v[i] < exit_c))
        .collect();
    let mut events = Vec::new();
    for run in hysteresis_runs(&enter, &stay) {
        let (t_s, t_e) = run_interval(stream, run);
        if t_e - t_s + 1e-9 < cfg.t_min {
            continue;
        }
        let low = (run.0..=run.1)
            .filter(|&i| f.valid[i])
            .map(|i| f.v[i])
            .fold(f64::INFINITY, f64::min);
        let mut prov = Provenance::new("visibility");
        prov.peak_stat = Some(low);
        let mut e = EventRecord::span(EventLabel::VisibilityDegradation, t_s, t_e, prov);
        e.video_id = stream.video_id.clone();
        events.push(e);
    }
    Ok(events)
}

/// Contamination score: fraction of ROI pixels whose low-visibility flag
/// persisted above `tau_persist` across the trailing `k_w` window. The first
/// `ceil(k_w * fps) - 1` samples are invalid.
pub fn contamination_score(stream: &SignalStream, cfg: &DetectorConfig) -> Result<ScalarSeries> {
    cfg.check()?;
    let n = stream.len();
    let w = ((cfg.k_w * stream.fps).ceil() as usize).max(1);
    let hw = stream.h * stream.w;
    let mut acc = vec![0.0f64; hw];
    let mut v = vec![0.0; n];
    let mut valid = vec![false; n];
    for i in 0..n {
        for (a, &b) in acc.iter_mut().zip(&stream.frames[i].low_vis.data) {
            *a += b;
        }
        if i >= w {
            for (a, &b) in acc.iter_mut().zip(&stream.frames[i - w].low_vis.data) {
                *a -= b;
            }
        }
        if i + 1 < w {
            continue;
        }
        let roi = &stream.frames[i].surg_roi;
        let mut total = 0usize;
        let mut persistent = 0usize;
        for (j, &r) in roi.data.iter().enumerate() {
            if r == 1.0 {
                total += 1;
                if acc[j] / w as f64 > cfg.tau_persist {
                    persistent += 1;
                }
            }
        }
        if total > 0 {
            v[i] = persistent as f64 / total as f64;
            valid[i] = true;
        }
    }
    ScalarSeries::new(stream.times(), v, valid)
}

/// Lens-contamination events: contamination score above `tau_cont` for at
/// least `t_min`. Provenance records whether a subsequent retreat restored
/// focus and contrast within 2 s (a confirmed cleaning).
pub fn detect_contamination(
    stream: &SignalStream,
    cfg: &DetectorConfig,
) -> Result<Vec<EventRecord>> {
    cfg.check()?;
    let score = contamination_score(stream, cfg)?;
    let n = stream.len();
    let cond: Vec<bool> = (0..n)
        .map(|i| score.valid[i] && score.v[i] > cfg.tau_cont)
        .collect();

    let retreats: Vec<EventRecord> = detect_depth_change(stream, cfg)?
        .into_iter()
        .filter(|e| e.label == EventLabel::DepthRetreat)
        .collect();
    let (f, c) = view_quality_series(stream)?;
    let thresholds = resolve_view_thresholds(cfg, &f, &c).ok();

    let mut events = Vec::new();
    for run in runs(&cond) {
        let (t_s, t_e) = run_interval(stream, run);
        if t_e - t_s + 1e-9 < cfg.t_min {
            continue;
        }
        let peak = (run.0..=run.1)
            .filter(|&i| score.valid[i])
            .map(|i| score.v[i])
            .fold(f64::NEG_INFINITY, f64::max);
        let confirmed = thresholds.map(|(tau_f, tau_c)| {
            retreats.iter().any(|r| {
                r.t_s >= t_s
                    && (0..n).any(|i| {
                        f.t[i] >= r.t_e
                            && f.t[i] <= r.t_e + 2.0
                            && f.valid[i]
                            && c.valid[i]
                            && f.v[i] > tau_f
                            && c.v[i] > tau_c
                    })
            })
        });
        let mut prov = Provenance::new("contamination");
        prov.peak_stat = Some(peak);
        prov.cleaning_confirmed = confirmed;
        let mut e = EventRecord::span(EventLabel::LensContamination, t_s, t_e, prov);
        e.video_id = stream.video_id.clone();
        events.push(e);
    }
    Ok(events)
}

/// Concatenate detector branches into one timeline ordered by onset.
/// Overlaps between different labels are legitimate concurrency; a
/// same-label overlap means a detector broke its maximal-interval contract.
pub fn fuse_events(branches: Vec<Vec<EventRecord>>) -> Result<Vec<EventRecord>> {
    let mut all: Vec<EventRecord> = branches.into_iter().flatten().collect();
    all.sort_by(|a, b| {
        a.t_s
            .partial_cmp(&b.t_s)
            .unwrap()
            .then(a.label.cmp(&b.label))
            .then(a.t_e.partial_cmp(&b.t_e).unwrap())
    });
    for label in EventLabel::ALL {
        let same: Vec<&EventRecord> = all.iter().filter(|e| e.label == label).collect();
        for pair in same.windows(2) {
            if pair[1].t_s < pair[0].t_e - 1e-12 {
                return Err(Error::invariant(format!(
                    "same-label overlap: {label} [{}, {}] vs [{}, {}]",
                    pair[0].t_s, pair[0].t_e, pair[1].t_s, pair[1].t_e
                )));
            }
        }
    }
    Ok(all)
}

/// Run every branch and fuse. The standard entry point for the parse stage.
pub fn parse_stream(stream: &SignalStream, cfg: &DetectorConfig) -> Result<Vec<EventRecord>> {
    fuse_events(vec![
        detect_interaction(stream, cfg)?,
        detect_depth_change(stream, cfg)?,
        detect_visibility_degradation(stream, cfg)?,
        detect_contamination(stream, cfg)?,
    ])
}
