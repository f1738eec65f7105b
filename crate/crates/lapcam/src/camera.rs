//! Camera-induced motion estimation: per-frame 2D translation fitted to
//! background flow by RANSAC, axial increments from the filtered working
//! distance, and interval-level aggregation into `(du, dv, dz)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::events::{DetectorConfig, EventRecord};
use crate::series::ScalarSeries;
use crate::stream::{Grid, SignalFrame, SignalStream};

/// Flow vectors sampled from the valid background region of one frame pair.
#[derive(Debug, Clone)]
pub struct FlowSampleSet {
    pub points: Vec<(f64, f64)>,
    pub vectors: Vec<(f64, f64)>,
    pub frame_index: usize,
}

/// One frame-pair camera motion estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotionIncrement {
    pub du: f64,
    pub dv: f64,
    pub dz: f64,
    pub valid: bool,
    pub inlier_ratio: f64,
}

impl MotionIncrement {
    pub fn invalid() -> Self {
        MotionIncrement {
            du: 0.0,
            dv: 0.0,
            dz: 0.0,
            valid: false,
            inlier_ratio: 0.0,
        }
    }
}

/// RANSAC settings for the translation fit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RansacConfig {
    /// Inlier residual threshold, pixels.
    pub inlier_px: f64,
    pub iters: usize,
    /// Minimum inlier fraction for a valid estimate.
    pub min_inlier_frac: f64,
    pub seed: u64,
    /// Minimum fraction of valid background pixels for a usable frame.
    pub min_valid_frac: f64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        RansacConfig {
            inlier_px: 1.5,
            iters: 100,
            min_inlier_frac: 0.5,
            seed: 7,
            min_valid_frac: 0.2,
        }
    }
}

/// Valid background region: not tool, not border, visibility intact.
/// Returns `None` when fewer than `min_valid_frac` of pixels qualify.
pub fn background_region(
    frame: &SignalFrame,
    border_mask: &Grid,
    min_valid_frac: f64,
) -> Option<Grid> {
    let h = frame.tool_mask.h;
    let w = frame.tool_mask.w;
    let mut g = Grid::zeros(h, w);
    let mut count = 0usize;
    for i in 0..h * w {
        let ok = frame.tool_mask.data[i] == 0.0
            && border_mask.data[i] == 0.0
            && frame.low_vis.data[i] == 0.0;
        if ok {
            g.data[i] = 1.0;
            count += 1;
        }
    }
    if (count as f64) < min_valid_frac * (h * w) as f64 {
        None
    } else {
        Some(g)
    }
}

/// Collect background flow samples for frame `i` of the stream.
pub fn flow_samples(stream: &SignalStream, i: usize, min_valid_frac: f64) -> Option<FlowSampleSet> {
    let frame = &stream.frames[i];
    let bg = background_region(frame, &stream.border_mask, min_valid_frac)?;
    let mut points = Vec::new();
    let mut vectors = Vec::new();
    for y in 0..stream.h {
        for x in 0..stream.w {
            if bg.get(y, x) == 1.0 {
                points.push((x as f64, y as f64));
                vectors.push((frame.flow.du.get(y, x), frame.flow.dv.get(y, x)));
            }
        }
    }
    Some(FlowSampleSet {
        points,
        vectors,
        frame_index: i,
    })
}

/// Fit a pure 2D translation to the flow samples with RANSAC. A translation
/// hypothesis needs a single sample; the final estimate is the mean over the
/// largest consensus set. Deterministic given `cfg.seed`.
pub fn fit_translation(samples: &FlowSampleSet, cfg: &RansacConfig) -> MotionIncrement {
    let n = samples.vectors.len();
    if n < 3 {
        return MotionIncrement::invalid();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (samples.frame_index as u64) << 17);
    let thr2 = cfg.inlier_px * cfg.inlier_px;
    let mut best_count = 0usize;
    let mut best_hyp = (0.0, 0.0);
    for _ in 0..cfg.iters {
        let k = rng.gen_range(0..n);
        let hyp = samples.vectors[k];
        let count = samples
            .vectors
            .iter()
            .filter(|v| {
                let du = v.0 - hyp.0;
                let dv = v.1 - hyp.1;
                du * du + dv * dv <= thr2
            })
            .count();
        if count > best_count {
            best_count = count;
            best_hyp = hyp;
        }
    }
    if best_count == 0 {
        return MotionIncrement::invalid();
    }
    let mut su = 0.0;
    let mut sv = 0.0;
    for v in &samples.vectors {
        let du = v.0 - best_hyp.0;
        let dv = v.1 - best_hyp.1;
        if du * du + dv * dv <= thr2 {
            su += v.0;
            sv += v.1;
        }
    }
    let ratio = best_count as f64 / n as f64;
    MotionIncrement {
        du: su / best_count as f64,
        dv: sv / best_count as f64,
        dz: 0.0,
        valid: ratio >= cfg.min_inlier_frac,
        inlier_ratio: ratio,
    }
}

/// Axial increment between consecutive samples of the filtered working
/// distance: `z~(t+1) - z~(t)`. Invalid if either sample is invalid.
pub fn axial_increment(z_tilde: &ScalarSeries, t: usize) -> Option<f64> {
    if t + 1 >= z_tilde.len() {
        return None;
    }
    (z_tilde.valid[t] && z_tilde.valid[t + 1]).then(|| z_tilde.v[t + 1] - z_tilde.v[t])
}

/// Per-frame-pair motion increments for a whole stream.
pub fn estimate_increments(
    stream: &SignalStream,
    z_tilde: &ScalarSeries,
    cfg: &RansacConfig,
) -> Vec<MotionIncrement> {
    let n = stream.len();
    if n < 2 {
        return Vec::new();
    }
    (0..n - 1)
        .map(|i| {
            let mut inc = match flow_samples(stream, i, cfg.min_valid_frac) {
                Some(s) => fit_translation(&s, cfg),
                None => MotionIncrement::invalid(),
            };
            match axial_increment(z_tilde, i) {
                Some(dz) => inc.dz = dz,
                None => inc.valid = false,
            }
            inc
        })
        .collect()
}

/// Cumulative interval response: in-plane sums over valid increments and the
/// axial change between the first and last valid working-distance samples
/// inside `[t_s, t_e]`. Invalid frame pairs thin the sum rather than break it.
pub fn aggregate_interval(
    increments: &[MotionIncrement],
    z_tilde: &ScalarSeries,
    times: &[f64],
    t_s: f64,
    t_e: f64,
) -> Option<(f64, f64, f64)> {
    let first = times.iter().position(|&t| t >= t_s)?;
    let last = times.iter().rposition(|&t| t < t_e - 1e-9)?;
    if first > last {
        return None;
    }
    let mut du = 0.0;
    let mut dv = 0.0;
    let mut any = false;
    for i in first..last.min(increments.len()) {
        let inc = &increments[i];
        if inc.valid {
            du += inc.du;
            dv += inc.dv;
            any = true;
        }
    }
    let z_first = (first..=last).find(|&i| z_tilde.valid[i]);
    let z_last = (first..=last).rev().find(|&i| z_tilde.valid[i]);
    let dz = match (z_first, z_last) {
        (Some(a), Some(b)) if a != b => Some(z_tilde.v[b] - z_tilde.v[a]),
        (Some(_), Some(_)) => Some(0.0),
        _ => None,
    };
    match (any, dz) {
        (false, None) => None,
        (_, dz) => Some((du, dv, dz.unwrap_or(0.0))),
    }
}

/// Camera response per event: the `(du, dv, dz)` triple, or `None` when no
/// valid increments exist in the interval (action dims stay masked).
pub fn interval_responses(
    stream: &SignalStream,
    events: &[EventRecord],
    det_cfg: &DetectorConfig,
    cfg: &RansacConfig,
) -> Result<Vec<Option<(f64, f64, f64)>>> {
    let z_tilde = crate::events::working_distance(stream, det_cfg)?;
    let increments = estimate_increments(stream, &z_tilde, cfg);
    let times = stream.times();
    Ok(events
        .iter()
        .map(|e| aggregate_interval(&increments, &z_tilde, &times, e.t_s, e.t_e))
        .collect())
}
