//! The attributed event graph `(A, X, S)`: binary temporal adjacency,
//! stacked normalized descriptors, and masked-cosine attribute similarity
//! sparsified to top-k neighbors.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::{EventRecord, DESCRIPTOR_DIM};

pub const GRAPH_FORMAT_VERSION: &str = "graph-v1";

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GraphParams {
    /// Sequential-adjacency window, seconds.
    pub delta_t: f64,
    /// Minimum overlap duration for concurrency, seconds.
    pub delta_ovl: f64,
    /// Neighbors retained per row before symmetrization.
    pub k_topk: usize,
    /// Minimum shared valid dimensions for a similarity entry.
    pub min_shared: usize,
}

impl Default for GraphParams {
    fn default() -> Self {
        GraphParams {
            delta_t: 0.5,
            delta_ovl: 0.1,
            k_topk: 20,
            min_shared: 3,
        }
    }
}

/// The `(A, X, S)` triplet plus the event registry it was built from.
#[derive(Debug, Clone)]
pub struct AttributedEventGraph {
    pub adjacency: Array2<f64>,
    pub attributes: Array2<f64>,
    pub masks: Array2<u8>,
    pub similarity: Array2<f64>,
    pub events: Vec<EventRecord>,
    pub params: GraphParams,
}

/// Binary temporal adjacency: sequential within `delta_t`, or overlapping by
/// at least `delta_ovl`; symmetrized by max with zero diagonal.
pub fn temporal_adjacency(events: &[EventRecord], delta_t: f64, delta_ovl: f64) -> Array2<f64> {
    let m = events.len();
    let mut a: Array2<f64> = Array2::zeros((m, m));
    for i in 0..m {
        for j in 0..m {
            if i == j {
                continue;
            }
            let (ei, ej) = (&events[i], &events[j]);
            let gap = ej.t_s - ei.t_e;
            let seq = gap >= 0.0 && gap <= delta_t;
            let ovl = ei.t_e.min(ej.t_e) - ei.t_s.max(ej.t_s) >= delta_ovl;
            if seq || ovl {
                a[(i, j)] = 1.0;
            }
        }
    }
    for i in 0..m {
        for j in (i + 1)..m {
            let v = a[(i, j)].max(a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
    a
}

/// Cosine similarity over the shared valid dimensions of two masked
/// descriptors. Zero when fewer than `min_shared` dimensions are shared or
/// either masked norm vanishes.
pub fn masked_cosine(
    x_i: &[f64],
    x_j: &[f64],
    m_i: &[u8],
    m_j: &[u8],
    min_shared: usize,
) -> f64 {
    const EPS: f64 = 1e-12;
    let mut shared = 0usize;
    let mut dot = 0.0;
    let mut ni = 0.0;
    let mut nj = 0.0;
    for k in 0..x_i.len() {
        if m_i[k] == 1 && m_j[k] == 1 {
            shared += 1;
            dot += x_i[k] * x_j[k];
            ni += x_i[k] * x_i[k];
            nj += x_j[k] * x_j[k];
        }
    }
    if shared < min_shared {
        return 0.0;
    }
    let (ni, nj) = (ni.sqrt(), nj.sqrt());
    if ni < EPS || nj < EPS {
        return 0.0;
    }
    (dot / (ni * nj + EPS)).clamp(-1.0, 1.0)
}

/// Attribute similarity graph: dense masked cosine, negatives clamped to
/// zero, per-row top-k (ties to the smaller index), symmetrized by max.
pub fn similarity_graph(
    attributes: &Array2<f64>,
    masks: &Array2<u8>,
    k_topk: usize,
    min_shared: usize,
) -> Array2<f64> {
    let m = attributes.nrows();
    let mut s = Array2::zeros((m, m));
    for i in 0..m {
        for j in (i + 1)..m {
            let xi = attributes.row(i);
            let xj = attributes.row(j);
            let val = masked_cosine(
                xi.as_slice().unwrap(),
                xj.as_slice().unwrap(),
                masks.row(i).as_slice().unwrap(),
                masks.row(j).as_slice().unwrap(),
                min_shared,
            )
            .max(0.0);
            s[(i, j)] = val;
            s[(j, i)] = val;
        }
    }
    if m > 0 && m - 1 > k_topk {
        let mut kept = Array2::zeros((m, m));
        for i in 0..m {
            // Sort by descending value, ascending index on ties.
            let mut order: Vec<usize> = (0..m).filter(|&j| j != i).collect();
            order.sort_by(|&a, &b| {
                s[(i, b)]
                    .partial_cmp(&s[(i, a)])
                    .unwrap()
                    .then(a.cmp(&b))
            });
            for &j in order.iter().take(k_topk) {
                kept[(i, j)] = s[(i, j)];
            }
        }
        for i in 0..m {
            for j in (i + 1)..m {
                let v = kept[(i, j)].max(kept[(j, i)]);
                kept[(i, j)] = v;
                kept[(j, i)] = v;
            }
        }
        s = kept;
    }
    s
}

/// Assemble the full attributed graph from normalized events.
pub fn build_graph(events: Vec<EventRecord>, params: GraphParams) -> Result<AttributedEventGraph> {
    let m = events.len();
    if m == 0 {
        return Err(Error::data("cannot build a graph from zero events"));
    }
    let mut attributes = Array2::zeros((m, DESCRIPTOR_DIM));
    let mut masks = Array2::zeros((m, DESCRIPTOR_DIM));
    for (i, e) in events.iter().enumerate() {
        e.check()?;
        for d in 0..DESCRIPTOR_DIM {
            attributes[(i, d)] = e.descriptor[d];
            masks[(i, d)] = e.valid_mask[d];
        }
    }
    let adjacency = temporal_adjacency(&events, params.delta_t, params.delta_ovl);
    let similarity = similarity_graph(&attributes, &masks, params.k_topk, params.min_shared);
    Ok(AttributedEventGraph {
        adjacency,
        attributes,
        masks,
        similarity,
        events,
        params,
    })
}

fn write_coo(m: &Array2<f64>) -> String {
    let mut out = String::new();
    for ((i, j), &v) in m.indexed_iter() {
        if v != 0.0 {
            writeln!(out, "{i},{j},{v}").unwrap();
        }
    }
    out
}

fn read_coo(text: &str, m: usize, what: &str) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((m, m));
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut it = line.split(',');
        let mut field = |name: &str| {
            it.next()
                .ok_or_else(|| Error::data(format!("{what}:{}: missing {name}", lineno + 1)))
        };
        let i: usize = field("row")?
            .parse()
            .map_err(|_| Error::data(format!("{what}: bad row index")))?;
        let j: usize = field("col")?
            .parse()
            .map_err(|_| Error::data(format!("{what}: bad col index")))?;
        let v: f64 = field("value")?
            .parse()
            .map_err(|_| Error::data(format!("{what}: bad value")))?;
        if i >= m || j >= m {
            return Err(Error::data(format!("{what}: index ({i},{j}) out of range")));
        }
        out[(i, j)] = v;
    }
    Ok(out)
}

#[derive(Debug, Serialize, Deserialize)]
struct GraphManifest {
    format: String,
    m: usize,
    d: usize,
    params: GraphParams,
}

/// Serialize the graph as coordinate-list A and S, dense X (with masks), the
/// event registry, and a manifest carrying the parameters.
pub fn save_graph(graph: &AttributedEventGraph, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("adjacency.coo"), write_coo(&graph.adjacency))?;
    fs::write(dir.join("similarity.coo"), write_coo(&graph.similarity))?;
    let mut x = String::new();
    for i in 0..graph.attributes.nrows() {
        let row: Vec<String> = (0..DESCRIPTOR_DIM)
            .map(|d| format!("{}", graph.attributes[(i, d)]))
            .collect();
        let mask: Vec<String> = (0..DESCRIPTOR_DIM)
            .map(|d| format!("{}", graph.masks[(i, d)]))
            .collect();
        writeln!(x, "{};{}", row.join(","), mask.join(",")).unwrap();
    }
    fs::write(dir.join("attributes.txt"), x)?;
    crate::events::save_events(&graph.events, &dir.join("events.txt"))?;
    let manifest = GraphManifest {
        format: GRAPH_FORMAT_VERSION.into(),
        m: graph.events.len(),
        d: DESCRIPTOR_DIM,
        params: graph.params.clone(),
    };
    fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest).map_err(|e| Error::data(e.to_string()))?,
    )?;
    Ok(())
}

pub fn load_graph(dir: &Path) -> Result<AttributedEventGraph> {
    let manifest: GraphManifest =
        serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)
            .map_err(|e| Error::data(format!("graph manifest: {e}")))?;
    if manifest.format != GRAPH_FORMAT_VERSION {
        return Err(Error::data(format!(
            "unsupported graph format `{}`",
            manifest.format
        )));
    }
    let m = manifest.m;
    let adjacency = read_coo(&fs::read_to_string(dir.join("adjacency.coo"))?, m, "A")?;
    let similarity = read_coo(&fs::read_to_string(dir.join("similarity.coo"))?, m, "S")?;
    let mut attributes = Array2::zeros((m, DESCRIPTOR_DIM));
    let mut masks = Array2::zeros((m, DESCRIPTOR_DIM));
    let xtext = fs::read_to_string(dir.join("attributes.txt"))?;
    for (i, line) in xtext.lines().enumerate() {
        let (xs, ms) = line
            .split_once(';')
            .ok_or_else(|| Error::data("attributes line missing mask section"))?;
        for (d, tok) in xs.split(',').enumerate() {
            attributes[(i, d)] = tok
                .parse()
                .map_err(|_| Error::data("bad attribute value"))?;
        }
        for (d, tok) in ms.split(',').enumerate() {
            masks[(i, d)] = tok.parse().map_err(|_| Error::data("bad mask value"))?;
        }
    }
    let events = crate::events::load_events(&dir.join("events.txt"))?;
    if events.len() != m {
        return Err(Error::data("graph event registry size mismatch"));
    }
    Ok(AttributedEventGraph {
        adjacency,
        attributes,
        masks,
        similarity,
        events,
        params: manifest.params,
    })
}
