//! Frame-level direction supervision: propagate cluster and direction labels
//! into event intervals, balance the hold class, and predict with cluster
//! prototypes in place of a learned model.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::events::EventRecord;
use crate::graph::masked_cosine;
use crate::mining::StrategyModel;

/// One supervised frame: strategy label and discrete direction inherited
/// from its source event.
#[derive(Debug, Clone, PartialEq)]
pub struct SupervisedSample {
    pub video_id: String,
    pub t: f64,
    pub strategy: usize,
    pub direction: [i8; 3],
    pub event_idx: usize,
}

impl SupervisedSample {
    pub fn is_hold(&self) -> bool {
        self.direction == [0, 0, 0]
    }
}

/// Sample frames at `rate_hz` inside every event interval; each frame
/// inherits the source event's cluster and direction prototype. A frame in
/// the overlap of several events goes to the event with the strongest
/// cluster membership (ties to the smaller event index).
pub fn propagate_labels(
    events: &[EventRecord],
    model: &StrategyModel,
    rate_hz: f64,
) -> Result<Vec<SupervisedSample>> {
    if !(rate_hz > 0.0) {
        return Err(Error::config("sampling rate must be positive"));
    }
    if events.len() != model.labels.len() {
        return Err(Error::data(
            "event list and model labels have different lengths",
        ));
    }
    let mut samples = Vec::new();
    for (idx, e) in events.iter().enumerate() {
        let count = ((e.t_e - e.t_s) * rate_hz).floor() as usize;
        for k in 0..count {
            let t = e.t_s + k as f64 / rate_hz;
            // Overlap rule: strongest membership wins the frame.
            let owner = events
                .iter()
                .enumerate()
                .filter(|(_, o)| o.video_id == e.video_id && t >= o.t_s && t < o.t_e)
                .max_by(|(i, _), (j, _)| {
                    model
                        .label_strength(*i)
                        .partial_cmp(&model.label_strength(*j))
                        .unwrap()
                        .then(j.cmp(i))
                })
                .map(|(i, _)| i)
                .unwrap_or(idx);
            if owner != idx {
                continue;
            }
            let cluster = model.labels[idx];
            samples.push(SupervisedSample {
                video_id: e.video_id.clone(),
                t,
                strategy: cluster,
                direction: model.direction_prototypes[cluster],
                event_idx: idx,
            });
        }
    }
    Ok(samples)
}

/// Downsample hold (zero-direction) samples without replacement to the
/// number of non-zero samples. Selection depends only on sample identity,
/// not input order, so reshuffled inputs select the same ids.
pub fn balance(samples: &[SupervisedSample], seed: u64) -> Vec<SupervisedSample> {
    let nonzero: Vec<&SupervisedSample> = samples.iter().filter(|s| !s.is_hold()).collect();
    let mut zeros: Vec<&SupervisedSample> = samples.iter().filter(|s| s.is_hold()).collect();
    if nonzero.is_empty() {
        return Vec::new();
    }
    let canonical = |s: &SupervisedSample| {
        (
            s.video_id.clone(),
            (s.t * 1e9).round() as i64,
            s.event_idx,
        )
    };
    zeros.sort_by_key(|s| canonical(s));
    let keep = nonzero.len().min(zeros.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..zeros.len()).collect();
    order.shuffle(&mut rng);
    let mut selected: Vec<usize> = order.into_iter().take(keep).collect();
    selected.sort_unstable();
    let mut out: Vec<SupervisedSample> = nonzero.into_iter().cloned().collect();
    out.extend(selected.into_iter().map(|i| zeros[i].clone()));
    out.sort_by(|a, b| {
        a.video_id
            .cmp(&b.video_id)
            .then(a.t.partial_cmp(&b.t).unwrap())
            .then(a.event_idx.cmp(&b.event_idx))
    });
    out
}

/// Prototype-based predictor standing in for a learned model: the nearest
/// prototype by masked-cosine distance yields the strategy and its direction
/// prototype. Ties go to the smaller cluster index.
pub fn prototype_predict(
    descriptor: &[f64],
    mask: &[u8],
    model: &StrategyModel,
) -> (usize, [i8; 3]) {
    let mut best = 0usize;
    let mut best_dist = f64::INFINITY;
    for (k, p) in model.prototypes.iter().enumerate() {
        if p.vacant {
            continue;
        }
        let cos = masked_cosine(descriptor, &p.descriptor, mask, &p.mask, 1);
        let dist = 1.0 - cos;
        if dist < best_dist {
            best_dist = dist;
            best = k;
        }
    }
    (best, model.direction_prototypes[best])
}

/// Direction component index in a 3-way class distribution over {-1, 0, +1}.
fn class_of(d: i8) -> usize {
    (d + 1) as usize
}

/// Cross-entropy evaluation loss `L = L_dir + lambda_s * L_str` over a batch
/// of predicted distributions. `dir_probs[i][axis]` is a 3-way distribution
/// over {-1, 0, +1}; `strategy_probs[i]` is a K-way distribution.
pub fn score_loss(
    truth: &[([i8; 3], usize)],
    dir_probs: &[[ [f64; 3]; 3 ]],
    strategy_probs: &[Vec<f64>],
    lambda_s: f64,
) -> Result<f64> {
    if truth.len() != dir_probs.len() || truth.len() != strategy_probs.len() {
        return Err(Error::data("loss batch lengths differ"));
    }
    if truth.is_empty() {
        return Ok(0.0);
    }
    const EPS: f64 = 1e-12;
    let mut dir_loss = 0.0;
    let mut str_loss = 0.0;
    for (i, (dirs, strategy)) in truth.iter().enumerate() {
        for axis in 0..3 {
            let p = dir_probs[i][axis][class_of(dirs[axis])];
            dir_loss += -(p.max(EPS)).ln();
        }
        let ps = strategy_probs[i]
            .get(*strategy)
            .copied()
            .ok_or_else(|| Error::data("strategy index out of range"))?;
        str_loss += -(ps.max(EPS)).ln();
    }
    let n = truth.len() as f64;
    Ok(dir_loss / (3.0 * n) + lambda_s * str_loss / n)
}

pub const SAMPLES_FORMAT_VERSION: &str = "samples-v1";

/// `video_id,t,s_star,du,dv,dz,event_idx` per line.
pub fn save_samples(samples: &[SupervisedSample], path: &Path) -> Result<()> {
    let mut out = String::new();
    writeln!(out, "#format={SAMPLES_FORMAT_VERSION}").unwrap();
    for s in samples {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            s.video_id, s.t, s.strategy, s.direction[0], s.direction[1], s.direction[2],
            s.event_idx
        )
        .unwrap();
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn load_samples(path: &Path) -> Result<Vec<SupervisedSample>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let toks: Vec<&str> = line.split(',').collect();
        if toks.len() != 7 {
            return Err(Error::Parse {
                path: path.display().to_string(),
                line: lineno + 1,
                msg: format!("expected 7 fields, found {}", toks.len()),
            });
        }
        let bad = |what: &str| Error::Parse {
            path: path.display().to_string(),
            line: lineno + 1,
            msg: format!("bad {what}"),
        };
        out.push(SupervisedSample {
            video_id: toks[0].to_string(),
            t: toks[1].parse().map_err(|_| bad("t"))?,
            strategy: toks[2].parse().map_err(|_| bad("s_star"))?,
            direction: [
                toks[3].parse().map_err(|_| bad("du"))?,
                toks[4].parse().map_err(|_| bad("dv"))?,
                toks[5].parse().map_err(|_| bad("dz"))?,
            ],
            event_idx: toks[6].parse().map_err(|_| bad("event_idx"))?,
        });
    }
    Ok(out)
}

/// Train/val/test split manifest keyed by video id.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize, PartialEq)]
pub struct SplitManifest {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

/// Deterministic split of video ids by ratio (by seeded shuffle of the
/// sorted id list). Ratios are normalized; with a single video everything
/// lands in train.
pub fn split_videos(video_ids: &[String], ratios: (f64, f64, f64), seed: u64) -> SplitManifest {
    let mut ids: Vec<String> = video_ids.to_vec();
    ids.sort();
    ids.dedup();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let total = (ratios.0 + ratios.1 + ratios.2).max(1e-12);
    let n = ids.len();
    let n_train = ((ratios.0 / total * n as f64).round() as usize).min(n).max(usize::from(n > 0));
    let n_val = ((ratios.1 / total * n as f64).round() as usize).min(n - n_train);
    SplitManifest {
        train: ids[..n_train].to_vec(),
        val: ids[n_train..n_train + n_val].to_vec(),
        test: ids[n_train + n_val..].to_vec(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::{EventLabel, Provenance, DESCRIPTOR_DIM};
    use crate::mining::{Deadbands, MiningConfig, Prototype};
    use approx::assert_abs_diff_eq;
    use ndarray::Array2;

    fn span(t_s: f64, t_e: f64) -> EventRecord {
        let mut e = EventRecord::span(EventLabel::Interaction, t_s, t_e, Provenance::new("t"));
        e.video_id = "v".into();
        e
    }

    fn model_with(labels: Vec<usize>, strengths: Vec<f64>, dirs: Vec<[i8; 3]>) -> StrategyModel {
        let k = dirs.len();
        let m = labels.len();
        let mut membership = Array2::zeros((m, k));
        for (i, (&l, &s)) in labels.iter().zip(&strengths).enumerate() {
            membership[(i, l)] = s;
        }
        let prototypes = (0..k)
            .map(|_| Prototype {
                descriptor: vec![0.0; DESCRIPTOR_DIM],
                mask: vec![0; DESCRIPTOR_DIM],
                name: "test".into(),
                dominant_label: None,
                median_action: None,
                member_count: 1,
                vacant: false,
                rotational_proxy: false,
            })
            .collect();
        StrategyModel {
            k,
            membership,
            labels,
            prototypes,
            direction_prototypes: dirs,
            embeddings: Array2::zeros((m, 2)),
            config: MiningConfig::default(),
            wsnmf_objective: 0.0,
            gaae_final_loss: 0.0,
            gaae_loss_curve: vec![],
        }
    }

    #[test]
    fn two_second_event_yields_twenty_samples() {
        let events = vec![span(1.0, 3.0)];
        let model = model_with(vec![0], vec![1.0], vec![[1, 0, 0]]);
        let samples = propagate_labels(&events, &model, 10.0).unwrap();
        assert_eq!(samples.len(), 20);
        assert!(samples.iter().all(|s| s.strategy == 0));
        assert!(samples.iter().all(|s| s.direction == [1, 0, 0]));
    }

    #[test]
    fn overlap_goes_to_stronger_membership() {
        let events = vec![span(0.0, 2.0), span(1.0, 3.0)];
        let model = model_with(
            vec![0, 1],
            vec![0.4, 0.9],
            vec![[1, 0, 0], [0, 1, 0]],
        );
        let samples = propagate_labels(&events, &model, 10.0).unwrap();
        // Frames in [1.0, 2.0) belong to event 1 (stronger membership).
        for s in &samples {
            if s.t >= 1.0 && s.t < 2.0 {
                assert_eq!(s.event_idx, 1, "frame at {}", s.t);
            }
        }
        // No duplicated frames at overlapping times with identical owner.
        let in_overlap = samples
            .iter()
            .filter(|s| s.t >= 1.0 && s.t < 2.0)
            .count();
        assert_eq!(in_overlap, 10);
    }

    #[test]
    fn no_events_no_samples() {
        let model = model_with(vec![], vec![], vec![[0, 0, 0]]);
        let samples = propagate_labels(&[], &model, 10.0).unwrap();
        assert!(samples.is_empty());
    }

    fn sample(t: f64, dir: [i8; 3]) -> SupervisedSample {
        SupervisedSample {
            video_id: "v".into(),
            t,
            strategy: 0,
            direction: dir,
            event_idx: 0,
        }
    }

    #[test]
    fn balance_downsamples_zeros_to_nonzero_count() {
        let mut samples = Vec::new();
        for i in 0..100 {
            samples.push(sample(i as f64, [1, 0, 0]));
        }
        for i in 0..500 {
            samples.push(sample(1000.0 + i as f64, [0, 0, 0]));
        }
        let out = balance(&samples, 42);
        assert_eq!(out.len(), 200);
        assert_eq!(out.iter().filter(|s| s.is_hold()).count(), 100);
    }

    #[test]
    fn balance_never_upsamples() {
        let mut samples = Vec::new();
        for i in 0..100 {
            samples.push(sample(i as f64, [0, -1, 0]));
        }
        for i in 0..50 {
            samples.push(sample(1000.0 + i as f64, [0, 0, 0]));
        }
        let out = balance(&samples, 42);
        assert_eq!(out.len(), 150);
    }

    #[test]
    fn balance_is_order_independent() {
        let mut samples = Vec::new();
        for i in 0..40 {
            samples.push(sample(i as f64, [1, 0, 0]));
        }
        for i in 0..200 {
            samples.push(sample(1000.0 + i as f64, [0, 0, 0]));
        }
        let a = balance(&samples, 7);
        samples.reverse();
        let b = balance(&samples, 7);
        assert_eq!(a, b);
    }

    #[test]
    fn zero_nonzero_returns_empty() {
        let samples = vec![sample(0.0, [0, 0, 0]), sample(1.0, [0, 0, 0])];
        assert!(balance(&samples, 1).is_empty());
    }

    #[test]
    fn prototype_prediction_matches_exact_descriptor() {
        let mut model = model_with(vec![0, 1], vec![1.0, 1.0], vec![[1, 0, 0], [0, 0, 1]]);
        for (k, p) in model.prototypes.iter_mut().enumerate() {
            p.descriptor[12] = if k == 0 { 1.0 } else { -1.0 };
            p.descriptor[13] = 0.5;
            p.mask[12] = 1;
            p.mask[13] = 1;
        }
        let mut desc = vec![0.0; DESCRIPTOR_DIM];
        let mut mask = vec![0u8; DESCRIPTOR_DIM];
        desc[12] = 1.0;
        desc[13] = 0.5;
        mask[12] = 1;
        mask[13] = 1;
        let (s, d) = prototype_predict(&desc, &mask, &model);
        assert_eq!(s, 0);
        assert_eq!(d, [1, 0, 0]);
    }

    #[test]
    fn equidistant_prediction_takes_smaller_index() {
        let mut model = model_with(vec![0, 1], vec![1.0, 1.0], vec![[1, 0, 0], [0, 0, 1]]);
        for p in model.prototypes.iter_mut() {
            p.descriptor[12] = 1.0;
            p.mask[12] = 1;
        }
        let mut desc = vec![0.0; DESCRIPTOR_DIM];
        let mut mask = vec![0u8; DESCRIPTOR_DIM];
        desc[12] = 0.7;
        mask[12] = 1;
        let (s, _) = prototype_predict(&desc, &mask, &model);
        assert_eq!(s, 0);
    }

    #[test]
    fn one_hot_predictions_have_zero_loss() {
        let truth = vec![([1i8, 0, -1], 2usize)];
        let mut dirs = [[0.0; 3]; 3];
        dirs[0][2] = 1.0; // +1
        dirs[1][1] = 1.0; // 0
        dirs[2][0] = 1.0; // -1
        let strategies = vec![vec![0.0, 0.0, 1.0]];
        let loss = score_loss(&truth, &[dirs], &strategies, 0.5).unwrap();
        assert_abs_diff_eq!(loss, 0.0, epsilon = 1e-9);
    }

    #[test]
    fn uniform_direction_loss_is_ln3() {
        let truth = vec![([0i8, 0, 0], 0usize)];
        let dirs = [[1.0 / 3.0; 3]; 3];
        let strategies = vec![vec![1.0]];
        let loss = score_loss(&truth, &[dirs], &strategies, 0.0).unwrap();
        assert_abs_diff_eq!(loss, 3.0f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn lambda_zero_drops_strategy_term() {
        let truth = vec![([1i8, 1, 1], 0usize)];
        let mut dirs = [[0.0; 3]; 3];
        for axis in 0..3 {
            dirs[axis][2] = 0.5;
            dirs[axis][0] = 0.5;
        }
        let strategies = vec![vec![0.1]];
        let with = score_loss(&truth, &[dirs], &strategies, 1.0).unwrap();
        let without = score_loss(&truth, &[dirs], &strategies, 0.0).unwrap();
        assert!(with > without);
        assert_abs_diff_eq!(without, 0.5f64.recip().ln(), epsilon = 1e-12);
    }

    #[test]
    fn samples_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("samples.txt");
        let samples = vec![sample(1.25, [1, -1, 0]), sample(2.5, [0, 0, 0])];
        save_samples(&samples, &path).unwrap();
        let loaded = load_samples(&path).unwrap();
        assert_eq!(loaded, samples);
    }

    #[test]
    fn split_is_deterministic_and_single_video_trains() {
        let ids = vec!["a".to_string(), "b".into(), "c".into(), "d".into()];
        let s1 = split_videos(&ids, (0.5, 0.25, 0.25), 3);
        let s2 = split_videos(&ids, (0.5, 0.25, 0.25), 3);
        assert_eq!(s1, s2);
        let single = split_videos(&["only".to_string()], (0.8, 0.1, 0.1), 3);
        assert_eq!(single.train, vec!["only".to_string()]);
        assert!(single.val.is_empty() && single.test.is_empty());
    }
}
