//! Timestamped scalar series and the temporal filters shared by all detectors.
//!
//! A [`ScalarSeries`] carries per-sample validity. Filters propagate
//! invalidity: an output sample whose input window touches an invalid
//! sample is itself invalid.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// A scalar signal sampled at strictly increasing times.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarSeries {
    pub t: Vec<f64>,
    pub v: Vec<f64>,
    pub valid: Vec<bool>,
}

impl ScalarSeries {
    pub fn new(t: Vec<f64>, v: Vec<f64>, valid: Vec<bool>) -> Result<Self> {
        if t.len() != v.len() || t.len() != valid.len() {
            return Err(Error::data("series t/v/validity lengths differ"));
        }
        if t.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::data("series timestamps not strictly increasing"));
        }
        Ok(Self { t, v, valid })
    }

    /// All samples valid.
    pub fn dense(t: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        let n = v.len();
        Self::new(t, v, vec![true; n])
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// Index of the first sample with `t >= time`, if any.
    pub fn index_at_or_after(&self, time: f64) -> Option<usize> {
        self.t.iter().position(|&ti| ti >= time)
    }

    /// Index of the last sample with `t <= time`, if any.
    pub fn index_at_or_before(&self, time: f64) -> Option<usize> {
        self.t.iter().rposition(|&ti| ti <= time)
    }

    /// Valid values over the closed time window `[t0, t1]`.
    pub fn valid_values_in(&self, t0: f64, t1: f64) -> Vec<f64> {
        self.t
            .iter()
            .zip(&self.v)
            .zip(&self.valid)
            .filter(|((ti, _), ok)| **ok && **ti >= t0 && **ti <= t1)
            .map(|((_, vi), _)| *vi)
            .collect()
    }
}

/// Median of a slice. Even counts average the middle pair. Empty gives None.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut buf = values.to_vec();
    let n = buf.len();
    let mid = n / 2;
    let (_, m, _) = buf.select_nth_unstable_by(mid, |a, b| a.partial_cmp(b).unwrap());
    let hi = *m;
    if n % 2 == 1 {
        Some(hi)
    } else {
        let lo = buf[..mid]
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        Some(0.5 * (lo + hi))
    }
}

/// Percentile with linear interpolation between closest ranks
/// (rank position `(n-1) * p / 100`).
pub fn percentile(values: &[f64], p: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut buf = values.to_vec();
    buf.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = buf.len();
    if n == 1 {
        return Some(buf[0]);
    }
    let pos = (n - 1) as f64 * p / 100.0;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    Some(buf[lo] + (buf[hi] - buf[lo]) * frac)
}

/// Savitzky-Golay smoothing by local least-squares polynomial fits.
///
/// Each output sample fits a degree-`degree` polynomial over a `window`-long
/// span of samples. Interior spans are centered; near the ends the span is
/// shifted to stay inside the series and the fit is evaluated at the sample's
/// own position, so polynomial inputs of order <= `degree` are reproduced
/// exactly everywhere. An output sample is invalid when its span contains an
/// invalid input.
pub fn savgol_smooth(s: &ScalarSeries, window: usize, degree: usize) -> Result<ScalarSeries> {
    if window % 2 == 0 {
        return Err(Error::config("savgol window must be odd"));
    }
    if window <= degree {
        return Err(Error::config("savgol window must exceed degree"));
    }
    let n = s.len();
    if n < window {
        return Err(Error::config(format!(
            "savgol series length {n} shorter than window {window}"
        )));
    }
    let half = window / 2;
    let mut out_v = vec![0.0; n];
    let mut out_valid = vec![false; n];

    // One fit basis per distinct span offset. Interior samples share the
    // centered pattern; only the first/last `half` differ.
    for i in 0..n {
        let start = i.saturating_sub(half).min(n - window);
        let span_valid = s.valid[start..start + window].iter().all(|&ok| ok);
        out_valid[i] = span_valid;
        if !span_valid {
            continue;
        }
        // Fit in the local index coordinate k - start to keep conditioning flat.
        let m = window;
        let cols = degree + 1;
        let mut a = DMatrix::zeros(m, cols);
        let mut y = DMatrix::zeros(m, 1);
        for (row, k) in (start..start + window).enumerate() {
            let x = (k as f64) - (start as f64);
            let mut pw = 1.0;
            for c in 0..cols {
                a[(row, c)] = pw;
                pw *= x;
            }
            y[(row, 0)] = s.v[k];
        }
        let ata = a.transpose() * &a;
        let aty = a.transpose() * y;
        let coef = ata
            .lu()
            .solve(&aty)
            .ok_or_else(|| Error::numeric("savgol normal equations singular"))?;
        let x_eval = (i - start) as f64;
        let mut acc = 0.0;
        let mut pw = 1.0;
        for c in 0..cols {
            acc += coef[(c, 0)] * pw;
            pw *= x_eval;
        }
        out_v[i] = acc;
    }
    ScalarSeries::new(s.t.clone(), out_v, out_valid)
}

/// Second-order Butterworth low-pass run forward and backward (zero phase).
///
/// Offline use only; the bilinear design keeps unit DC gain. Ends are
/// extended by odd reflection and the filter state starts at the step
/// steady-state of the first extended sample.
pub fn lowpass_zero_phase(s: &ScalarSeries, cutoff_hz: f64, fps: f64) -> Result<ScalarSeries> {
    if !(cutoff_hz > 0.0) || cutoff_hz >= fps / 2.0 {
        return Err(Error::config(format!(
            "cutoff {cutoff_hz} Hz must lie in (0, fps/2 = {})",
            fps / 2.0
        )));
    }
    let n = s.len();
    if n == 0 {
        return Ok(s.clone());
    }
    let (b, a) = butter2_lowpass(cutoff_hz, fps);

    let padlen = ((2.0 * fps / cutoff_hz).ceil() as usize).max(9).min(n - 1);
    let mut ext = Vec::with_capacity(n + 2 * padlen);
    for k in (1..=padlen).rev() {
        ext.push(2.0 * s.v[0] - s.v[k]);
    }
    ext.extend_from_slice(&s.v);
    for k in 1..=padlen {
        ext.push(2.0 * s.v[n - 1] - s.v[n - 1 - k]);
    }

    let fwd = biquad_steady(&ext, b, a);
    let mut rev: Vec<f64> = fwd.into_iter().rev().collect();
    rev = biquad_steady(&rev, b, a);
    let mut out: Vec<f64> = rev.into_iter().rev().collect();
    out.drain(..padlen);
    out.truncate(n);

    // Validity: a sample is invalid if any input within the effective
    // response span is invalid; the IIR tail is treated as padlen wide.
    let mut out_valid = vec![true; n];
    for i in 0..n {
        let lo = i.saturating_sub(padlen);
        let hi = (i + padlen).min(n - 1);
        if s.valid[lo..=hi].iter().any(|&ok| !ok) {
            out_valid[i] = false;
        }
    }
    ScalarSeries::new(s.t.clone(), out, out_valid)
}

/// Biquad coefficients (b0,b1,b2), (a1,a2) for a Butterworth low-pass via
/// the bilinear transform with prewarped cutoff.
fn butter2_lowpass(cutoff_hz: f64, fps: f64) -> ([f64; 3], [f64; 2]) {
    let w = (std::f64::consts::PI * cutoff_hz / fps).tan();
    let k1 = std::f64::consts::SQRT_2 * w;
    let k2 = w * w;
    let a0 = 1.0 + k1 + k2;
    let b = [k2 / a0, 2.0 * k2 / a0, k2 / a0];
    let a = [2.0 * (k2 - 1.0) / a0, (1.0 - k1 + k2) / a0];
    (b, a)
}

/// Direct-form-II-transposed biquad with the state preloaded to the step
/// steady-state of the first sample.
fn biquad_steady(x: &[f64], b: [f64; 3], a: [f64; 2]) -> Vec<f64> {
    let x0 = x.first().copied().unwrap_or(0.0);
    // Steady state for constant input x0 (output also x0 at DC gain 1).
    let mut z2 = (b[2] - a[1]) * x0;
    let mut z1 = (b[1] - a[0]) * x0 + z2;
    let mut y = Vec::with_capacity(x.len());
    for &xi in x {
        let yi = b[0] * xi + z1;
        z1 = b[1] * xi - a[0] * yi + z2;
        z2 = b[2] * xi - a[1] * yi;
        y.push(yi);
    }
    y
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn ramp(n: usize, fps: f64, f: impl Fn(f64) -> f64) -> ScalarSeries {
        let t: Vec<f64> = (0..n).map(|i| i as f64 / fps).collect();
        let v: Vec<f64> = t.iter().map(|&ti| f(ti)).collect();
        ScalarSeries::dense(t, v).unwrap()
    }

    #[test]
    fn savgol_reproduces_linear_ramp() {
        let s = ramp(60, 30.0, |t| 2.0 * t);
        let out = savgol_smooth(&s, 11, 3).unwrap();
        for (a, b) in s.v.iter().zip(&out.v) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-9);
        }
        assert!(out.valid.iter().all(|&ok| ok));
    }

    #[test]
    fn savgol_reproduces_constant() {
        let s = ramp(40, 30.0, |_| 7.5);
        let out = savgol_smooth(&s, 11, 3).unwrap();
        for v in &out.v {
            assert_abs_diff_eq!(*v, 7.5, epsilon = 1e-9);
        }
    }

    #[test]
    fn savgol_reproduces_cubic_everywhere() {
        let s = ramp(50, 30.0, |t| 1.0 - 3.0 * t + 0.5 * t * t + 2.0 * t * t * t);
        let out = savgol_smooth(&s, 11, 3).unwrap();
        for (a, b) in s.v.iter().zip(&out.v) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-7);
        }
    }

    #[test]
    fn savgol_denoises_cubic() {
        // Oracle: direct least-squares window fits computed independently of
        // the implementation path (explicit 4x4 normal equations per window).
        let n = 120;
        let fps = 30.0;
        let clean = ramp(n, fps, |t| 4.0 * t * t * t - 2.0 * t * t + t);
        let mut noisy = clean.clone();
        // Deterministic pseudo-noise.
        for (i, v) in noisy.v.iter_mut().enumerate() {
            *v += 0.3 * ((i as f64 * 12.9898).sin() * 43758.5453).fract();
        }
        let out = savgol_smooth(&noisy, 11, 3).unwrap();
        let rms = |a: &[f64], b: &[f64]| {
            (a.iter()
                .zip(b)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                / a.len() as f64)
                .sqrt()
        };
        assert!(rms(&out.v, &clean.v) < rms(&noisy.v, &clean.v));
    }

    #[test]
    fn savgol_rejects_bad_params() {
        let s = ramp(30, 30.0, |t| t);
        assert!(savgol_smooth(&s, 3, 3).is_err());
        assert!(savgol_smooth(&s, 4, 1).is_err());
    }

    #[test]
    fn savgol_propagates_invalidity() {
        let mut s = ramp(40, 30.0, |t| t);
        s.valid[20] = false;
        let out = savgol_smooth(&s, 11, 3).unwrap();
        for i in 0..40usize {
            let touches = (15..=25).contains(&i);
            assert_eq!(out.valid[i], !touches, "sample {i}");
        }
    }

    #[test]
    fn lowpass_keeps_constant() {
        let s = ramp(200, 30.0, |_| 3.25);
        let out = lowpass_zero_phase(&s, 2.5, 30.0).unwrap();
        for v in &out.v {
            assert_abs_diff_eq!(*v, 3.25, epsilon = 1e-9);
        }
    }

    /// DFT amplitude at a single frequency (independent oracle).
    fn dft_amplitude(v: &[f64], freq: f64, fps: f64) -> f64 {
        let n = v.len() as f64;
        let mut re = 0.0;
        let mut im = 0.0;
        for (i, &x) in v.iter().enumerate() {
            let ph = 2.0 * std::f64::consts::PI * freq * i as f64 / fps;
            re += x * ph.cos();
            im -= x * ph.sin();
        }
        2.0 * (re * re + im * im).sqrt() / n
    }

    #[test]
    fn lowpass_passband_and_stopband() {
        let fps = 30.0;
        let n = 1800; // 60 s, integer periods of both test tones
        let slow = ramp(n, fps, |t| (2.0 * std::f64::consts::PI * 0.2 * t).sin());
        let fast = ramp(n, fps, |t| (2.0 * std::f64::consts::PI * 10.0 * t).sin());
        let slow_out = lowpass_zero_phase(&slow, 2.5, fps).unwrap();
        let fast_out = lowpass_zero_phase(&fast, 2.5, fps).unwrap();
        assert!(dft_amplitude(&slow_out.v, 0.2, fps) >= 0.99);
        assert!(dft_amplitude(&fast_out.v, 10.0, fps) <= 0.05);
    }

    #[test]
    fn lowpass_rejects_cutoff_at_nyquist() {
        let s = ramp(100, 30.0, |t| t);
        assert!(lowpass_zero_phase(&s, 15.0, 30.0).is_err());
    }

    #[test]
    fn median_and_percentile_basics() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[60.0, 100.0]), Some(80.0));
        assert_eq!(median(&[]), None);
        assert_eq!(percentile(&[1.0, 2.0, 3.0, 4.0], 50.0), Some(2.5));
        assert_eq!(percentile(&[5.0], 95.0), Some(5.0));
    }

    #[test]
    fn median_robust_to_outliers() {
        let mut vals: Vec<f64> = (0..90).map(|_| 80.0).collect();
        vals.extend((0..10).map(|_| 999.0));
        assert_eq!(median(&vals), Some(80.0));
    }
}
