//! Multi-channel signal streams: one [`SignalFrame`] per video frame, with
//! per-frame grids (flow, depth, intensity, masks) at a fixed resolution.
//!
//! Streams load from a columnar text format (see [`load_stream`]) so they
//! stay human-diffable and language-neutral. Absent scalar channels are
//! `NA`, never zero-filled.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Row-major H x W grid of f64.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Grid {
    pub fn zeros(h: usize, w: usize) -> Self {
        Grid {
            h,
            w,
            data: vec![0.0; h * w],
        }
    }

    pub fn filled(h: usize, w: usize, value: f64) -> Self {
        Grid {
            h,
            w,
            data: vec![value; h * w],
        }
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.w + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: f64) {
        self.data[y * self.w + x] = v;
    }

    pub fn is_binary(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    /// Fraction of nonzero cells.
    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }
}

/// Dense 2-vector field stored as separate u/v component grids.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowGrid {
    pub du: Grid,
    pub dv: Grid,
}

impl FlowGrid {
    pub fn zeros(h: usize, w: usize) -> Self {
        FlowGrid {
            du: Grid::zeros(h, w),
            dv: Grid::zeros(h, w),
        }
    }

    #[inline]
    pub fn magnitude(&self, y: usize, x: usize) -> f64 {
        let u = self.du.get(y, x);
        let v = self.dv.get(y, x);
        (u * u + v * v).sqrt()
    }
}

/// One timestamped sample of every per-frame channel.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalFrame {
    pub t: f64,
    /// Tool tip pixel position (u, v), if tracked this frame.
    pub tool_tip: Option<(f64, f64)>,
    /// Grasper aperture in radians, if tracked.
    pub grasper_angle: Option<f64>,
    pub flow: FlowGrid,
    /// Scene depth in millimeters (monocular-relative scale).
    pub depth: Grid,
    pub intensity: Grid,
    /// Binary low-visibility map (1 = degraded pixel).
    pub low_vis: Grid,
    pub tool_mask: Grid,
    pub surg_roi: Grid,
}

/// A whole per-video channel recording plus the stream-fixed border mask.
#[derive(Debug, Clone)]
pub struct SignalStream {
    pub video_id: String,
    pub fps: f64,
    pub h: usize,
    pub w: usize,
    pub frames: Vec<SignalFrame>,
    /// Fixed border mask (1 = border pixel), shared by all frames.
    pub border_mask: Grid,
}

impl SignalStream {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn times(&self) -> Vec<f64> {
        self.frames.iter().map(|f| f.t).collect()
    }

    /// Frame indices whose timestamps fall in the closed interval.
    pub fn frame_range(&self, t_s: f64, t_e: f64) -> Option<(usize, usize)> {
        let first = self.frames.iter().position(|f| f.t >= t_s)?;
        let last = self.frames.iter().rposition(|f| f.t <= t_e)?;
        (first <= last).then_some((first, last))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fps > 0.0) {
            return Err(Error::data("fps must be positive"));
        }
        let dt_nominal = 1.0 / self.fps;
        for (i, pair) in self.frames.windows(2).enumerate() {
            let dt = pair[1].t - pair[0].t;
            if dt <= 0.0 {
                return Err(Error::data(format!(
                    "timestamps not strictly increasing at frame {}",
                    i + 1
                )));
            }
            if (dt - dt_nominal).abs() > 0.1 * dt_nominal {
                return Err(Error::data(format!(
                    "frame spacing {dt:.6}s at frame {} deviates more than 10% from 1/fps",
                    i + 1
                )));
            }
        }
        for (i, f) in self.frames.iter().enumerate() {
            for g in [&f.depth, &f.intensity, &f.low_vis, &f.tool_mask, &f.surg_roi] {
                if g.h != self.h || g.w != self.w {
                    return Err(Error::data(format!("grid shape mismatch at frame {i}")));
                }
            }
            if f.flow.du.h != self.h || f.flow.du.w != self.w {
                return Err(Error::data(format!("flow shape mismatch at frame {i}")));
            }
            if f.flow.du.data.iter().any(|v| !v.is_finite())
                || f.flow.dv.data.iter().any(|v| !v.is_finite())
            {
                return Err(Error::data(format!("non-finite flow at frame {i}")));
            }
            for (name, g) in [
                ("lowvis", &f.low_vis),
                ("toolmask", &f.tool_mask),
                ("surgroi", &f.surg_roi),
            ] {
                if !g.is_binary() {
                    return Err(Error::data(format!(
                        "{name} grid not binary at frame {i}"
                    )));
                }
            }
        }
        if self.border_mask.h != self.h || self.border_mask.w != self.w {
            return Err(Error::data("border mask shape mismatch"));
        }
        if !self.border_mask.is_binary() {
            return Err(Error::data("border mask not binary"));
        }
        Ok(())
    }
}

fn fmt_f64(buf: &mut String, v: f64) {
    // `{}` prints the shortest representation that parses back bit-exactly.
    write!(buf, "{v}").unwrap();
}

fn push_grid(buf: &mut String, g: &Grid) {
    for &v in &g.data {
        buf.push(',');
        fmt_f64(buf, v);
    }
}

/// Serialize a stream to the columnar text format.
pub fn save_stream(stream: &SignalStream, path: &Path) -> Result<()> {
    stream.validate()?;
    let mut out = String::new();
    writeln!(out, "#fps={}", stream.fps).unwrap();
    writeln!(out, "#H={}", stream.h).unwrap();
    writeln!(out, "#W={}", stream.w).unwrap();
    writeln!(out, "#video={}", stream.video_id).unwrap();
    for f in &stream.frames {
        fmt_f64(&mut out, f.t);
        match f.tool_tip {
            Some((u, v)) => {
                out.push(',');
                fmt_f64(&mut out, u);
                out.push(',');
                fmt_f64(&mut out, v);
            }
            None => out.push_str(",NA,NA"),
        }
        match f.grasper_angle {
            Some(a) => {
                out.push(',');
                fmt_f64(&mut out, a);
            }
            None => out.push_str(",NA"),
        }
        // Flow interleaved (du, dv) per pixel, row-major.
        for i in 0..f.flow.du.data.len() {
            out.push(',');
            fmt_f64(&mut out, f.flow.du.data[i]);
            out.push(',');
            fmt_f64(&mut out, f.flow.dv.data[i]);
        }
        push_grid(&mut out, &f.depth);
        push_grid(&mut out, &f.intensity);
        push_grid(&mut out, &f.low_vis);
        push_grid(&mut out, &f.tool_mask);
        push_grid(&mut out, &f.surg_roi);
        out.push('\n');
    }
    fs::write(path, out)?;
    save_border_sidecar(stream, &border_sidecar_path(path))?;
    Ok(())
}

pub fn border_sidecar_path(stream_path: &Path) -> std::path::PathBuf {
    let mut p = stream_path.as_os_str().to_owned();
    p.push(".border");
    std::path::PathBuf::from(p)
}

fn save_border_sidecar(stream: &SignalStream, path: &Path) -> Result<()> {
    let mut out = String::new();
    writeln!(out, "#H={}", stream.h).unwrap();
    writeln!(out, "#W={}", stream.w).unwrap();
    let mut first = true;
    for &v in &stream.border_mask.data {
        if !first {
            out.push(',');
        }
        fmt_f64(&mut out, v);
        first = false;
    }
    out.push('\n');
    fs::write(path, out)?;
    Ok(())
}

struct HeaderFields {
    fps: Option<f64>,
    h: Option<usize>,
    w: Option<usize>,
    video: Option<String>,
}

fn parse_header_line(line: &str, hf: &mut HeaderFields, path: &str, lineno: usize) -> Result<()> {
    let body = &line[1..];
    let (key, value) = body.split_once('=').ok_or_else(|| Error::Parse {
        path: path.into(),
        line: lineno,
        msg: format!("malformed header `{line}`"),
    })?;
    let bad = |msg: String| Error::Parse {
        path: path.into(),
        line: lineno,
        msg,
    };
    match key {
        "fps" => hf.fps = Some(value.parse().map_err(|_| bad(format!("bad fps `{value}`")))?),
        "H" => hf.h = Some(value.parse().map_err(|_| bad(format!("bad H `{value}`")))?),
        "W" => hf.w = Some(value.parse().map_err(|_| bad(format!("bad W `{value}`")))?),
        "video" => hf.video = Some(value.to_string()),
        other => return Err(bad(format!("unknown header key `{other}`"))),
    }
    Ok(())
}

/// Parse a stream file. The border mask is read from the `.border` sidecar
/// when present; otherwise it defaults to all-zero (no border).
pub fn load_stream(path: &Path) -> Result<SignalStream> {
    let text = fs::read_to_string(path)?;
    let path_str = path.display().to_string();
    let mut hf = HeaderFields {
        fps: None,
        h: None,
        w: None,
        video: None,
    };
    let mut frames = Vec::new();
    let mut h = 0usize;
    let mut w = 0usize;
    let mut header_done = false;

    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if line.starts_with('#') {
            if header_done {
                return Err(Error::Parse {
                    path: path_str,
                    line: lineno,
                    msg: "header line after frame records".into(),
                });
            }
            parse_header_line(line, &mut hf, &path_str, lineno)?;
            continue;
        }
        if !header_done {
            match (hf.fps, hf.h, hf.w, hf.video.as_ref()) {
                (Some(_), Some(hh), Some(ww), Some(_)) => {
                    h = hh;
                    w = ww;
                    header_done = true;
                }
                _ => {
                    return Err(Error::Parse {
                        path: path_str,
                        line: lineno,
                        msg: "frame record before complete header (#fps/#H/#W/#video)".into(),
                    })
                }
            }
        }
        frames.push(parse_frame_line(line, h, w, &path_str, lineno)?);
    }
    if !header_done {
        return Err(Error::data(format!("{path_str}: empty stream file")));
    }

    let border_path = border_sidecar_path(path);
    let border_mask = if border_path.exists() {
        load_border_sidecar(&border_path, h, w)?
    } else {
        Grid::zeros(h, w)
    };

    let stream = SignalStream {
        video_id: hf.video.unwrap(),
        fps: hf.fps.unwrap(),
        h,
        w,
        frames,
        border_mask,
    };
    stream.validate()?;
    Ok(stream)
}

fn load_border_sidecar(path: &Path, h: usize, w: usize) -> Result<Grid> {
    let text = fs::read_to_string(path)?;
    let mut data = Vec::with_capacity(h * w);
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        for tok in line.split(',') {
            let v: f64 = tok.trim().parse().map_err(|_| {
                Error::data(format!("{}: bad border value `{tok}`", path.display()))
            })?;
            data.push(v);
        }
    }
    if data.len() != h * w {
        return Err(Error::data(format!(
            "{}: border mask has {} values, expected {}",
            path.display(),
            data.len(),
            h * w
        )));
    }
    Ok(Grid { h, w, data })
}

fn parse_frame_line(
    line: &str,
    h: usize,
    w: usize,
    path: &str,
    lineno: usize,
) -> Result<SignalFrame> {
    let hw = h * w;
    let expected = 4 + 2 * hw + 5 * hw;
    let toks: Vec<&str> = line.split(',').collect();
    let bad = |msg: String| Error::Parse {
        path: path.into(),
        line: lineno,
        msg,
    };
    if toks.len() != expected {
        return Err(bad(format!(
            "expected {expected} fields, found {}",
            toks.len()
        )));
    }
    let parse_f = |tok: &str, what: &str| -> Result<f64> {
        tok.trim()
            .parse::<f64>()
            .map_err(|_| bad(format!("bad {what} `{tok}`")))
    };
    let parse_opt = |tok: &str, what: &str| -> Result<Option<f64>> {
        if tok.trim() == "NA" {
            Ok(None)
        } else {
            parse_f(tok, what).map(Some)
        }
    };

    let t = parse_f(toks[0], "timestamp")?;
    let tu = parse_opt(toks[1], "tool_u")?;
    let tv = parse_opt(toks[2], "tool_v")?;
    let tool_tip = match (tu, tv) {
        (Some(u), Some(v)) => Some((u, v)),
        (None, None) => None,
        _ => return Err(bad("tool_u/tool_v must both be NA or both present".into())),
    };
    let grasper_angle = parse_opt(toks[3], "theta")?;

    let mut pos = 4;
    let mut flow = FlowGrid::zeros(h, w);
    for i in 0..hw {
        flow.du.data[i] = parse_f(toks[pos], "flow_u")?;
        flow.dv.data[i] = parse_f(toks[pos + 1], "flow_v")?;
        pos += 2;
    }
    let read_grid = |what: &str, pos: &mut usize| -> Result<Grid> {
        let mut g = Grid::zeros(h, w);
        for i in 0..hw {
            g.data[i] = parse_f(toks[*pos], what)?;
            *pos += 1;
        }
        Ok(g)
    };
    let depth = read_grid("depth", &mut pos)?;
    let intensity = read_grid("intensity", &mut pos)?;
    let low_vis = read_grid("lowvis", &mut pos)?;
    let tool_mask = read_grid("toolmask", &mut pos)?;
    let surg_roi = read_grid("surgroi", &mut pos)?;

    Ok(SignalFrame {
        t,
        tool_tip,
        grasper_angle,
        flow,
        depth,
        intensity,
        low_vis,
        tool_mask,
        surg_roi,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny_stream(n: usize) -> SignalStream {
        let (h, w) = (4, 4);
        let frames = (0..n)
            .map(|i| SignalFrame {
                t: i as f64 / 30.0,
                tool_tip: Some((1.0 + i as f64 * 0.25, 2.0)),
                grasper_angle: Some(0.3),
                flow: FlowGrid::zeros(h, w),
                depth: Grid::filled(h, w, 80.0),
                intensity: Grid::filled(h, w, 100.0),
                low_vis: Grid::zeros(h, w),
                tool_mask: Grid::zeros(h, w),
                surg_roi: Grid::filled(h, w, 1.0),
            })
            .collect();
        SignalStream {
            video_id: "tiny".into(),
            fps: 30.0,
            h,
            w,
            frames,
            border_mask: Grid::zeros(h, w),
        }
    }

    #[test]
    fn round_trip_identity() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.txt");
        let mut stream = tiny_stream(3);
        stream.frames[1].flow.du.set(2, 3, -1.25);
        stream.frames[2].depth.set(0, 0, 79.333333333333333);
        stream.border_mask.set(0, 0, 1.0);
        save_stream(&stream, &path).unwrap();
        let loaded = load_stream(&path).unwrap();
        assert_eq!(loaded.fps, stream.fps);
        assert_eq!(loaded.frames.len(), 3);
        for (a, b) in stream.frames.iter().zip(&loaded.frames) {
            assert_eq!(a, b);
        }
        assert_eq!(loaded.border_mask, stream.border_mask);
    }

    #[test]
    fn duplicate_timestamp_is_integrity_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.txt");
        let row = "NA,NA,NA,0,0,80,100,0,0,1";
        let body = format!("#fps=30\n#H=1\n#W=1\n#video=x\n0,{row}\n0,{row}\n");
        std::fs::write(&path, body).unwrap();
        let err = load_stream(&path).unwrap_err();
        assert!(matches!(err, Error::Data(_)), "got {err:?}");
    }

    #[test]
    fn absent_grasper_column_loads_as_none() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.txt");
        let mut stream = tiny_stream(3);
        for f in &mut stream.frames {
            f.grasper_angle = None;
        }
        // Write-then-read oracle: field presence must survive the round trip.
        save_stream(&stream, &path).unwrap();
        let loaded = load_stream(&path).unwrap();
        assert!(loaded.frames.iter().all(|f| f.grasper_angle.is_none()));
        assert!(loaded.frames.iter().all(|f| f.tool_tip.is_some()));
    }

    #[test]
    fn malformed_row_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.txt");
        std::fs::write(&path, "#fps=30\n#H=1\n#W=1\n#video=x\n0,NA,NA,NA,oops\n").unwrap();
        match load_stream(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 5),
            other => panic!("expected parse error, got {other:?}"),
        }
    }
}
