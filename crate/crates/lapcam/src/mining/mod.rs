//! Graph-boosted strategy mining: fuse the temporal and attribute graphs,
//! refine connectivity through non-negative self-expressiveness, embed with
//! a graph attention autoencoder, cluster by weighted symmetric NMF, and
//! turn the clusters into named strategy primitives with discrete direction
//! prototypes.

mod gaae;
mod naming;
mod selfexpr;
mod wsnmf;

pub use gaae::{gaae_fit, GaaeConfig, GaaeSolution};
pub use naming::{
    direction_prototypes, discretize_direction, extract_prototypes, names, Deadbands, Prototype,
};
pub use selfexpr::{self_express, SelfExpressConfig, SelfExpressSolution};
pub use wsnmf::{assign_labels, wsnmf, wsnmf_objective, WsnmfConfig, WsnmfSolution};

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::DESCRIPTOR_DIM;
use crate::graph::AttributedEventGraph;

pub const MODEL_FORMAT_VERSION: &str = "strategy-model-v1";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MiningConfig {
    /// Number of strategy clusters.
    pub k: usize,
    /// Boosted-graph fusion weight between similarity and adjacency.
    pub mu: f64,
    /// Refined-graph fusion weight between learned and raw similarity.
    pub lambda: f64,
    /// Self-expressiveness sparsity weight.
    pub alpha: f64,
    pub seed: u64,
    pub deadbands: Deadbands,
    pub self_express: SelfExpressConfig,
    pub wsnmf: WsnmfConfig,
    pub gaae: GaaeConfig,
    /// Use uniform confidence weights instead of boosted-graph confidence.
    pub uniform_weights: bool,
}

impl Default for MiningConfig {
    fn default() -> Self {
        MiningConfig {
            k: 12,
            mu: 0.5,
            lambda: 0.5,
            alpha: 0.1,
            seed: 17,
            deadbands: Deadbands::default(),
            self_express: SelfExpressConfig::default(),
            wsnmf: WsnmfConfig::default(),
            gaae: GaaeConfig::default(),
            uniform_weights: false,
        }
    }
}

impl MiningConfig {
    pub fn check(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.mu) {
            return Err(Error::config("mu must lie in [0,1]"));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::config("lambda must lie in [0,1]"));
        }
        if !(self.alpha > 0.0) {
            return Err(Error::config("alpha must be positive"));
        }
        Ok(())
    }

    /// Propagate the top-level seed into the component solvers.
    pub fn seeded(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.wsnmf.seed = seed.wrapping_mul(31).wrapping_add(1);
        self.gaae.seed = seed.wrapping_mul(31).wrapping_add(2);
        self
    }
}

/// Intermediate graphs of the refinement chain.
#[derive(Debug, Clone)]
pub struct RefinedGraphs {
    pub boosted: Array2<f64>,
    pub coefficients: Array2<f64>,
    pub symmetrized: Array2<f64>,
    pub refined: Array2<f64>,
    pub weights: Array2<f64>,
}

/// Auxiliary boosted graph: `mu * S + (1 - mu) * A`.
pub fn boost_graph(a: &Array2<f64>, s: &Array2<f64>, mu: f64) -> Array2<f64> {
    s * mu + &(a * (1.0 - mu))
}

/// Symmetrize coefficients and fuse with the raw similarity:
/// `S_c = (C + C^T) / 2`, `G_R = lambda * S_c + (1 - lambda) * S`.
pub fn refine_graph(
    c: &Array2<f64>,
    s: &Array2<f64>,
    lambda: f64,
) -> (Array2<f64>, Array2<f64>) {
    let s_c = (c + &c.t()) / 2.0;
    let g_r = &s_c * lambda + &(s * (1.0 - lambda));
    (s_c, g_r)
}

/// Confidence weights: higher where temporal and attribute evidence agree.
/// `W_ij = 0.5 + 0.5 * G_A_ij / max(G_A)` off the diagonal, `W_ii = 0`.
pub fn confidence_weights(boosted: &Array2<f64>) -> Array2<f64> {
    let max = boosted.iter().copied().fold(0.0f64, f64::max);
    let mut w = if max > 0.0 {
        boosted.mapv(|v| 0.5 + 0.5 * v / max)
    } else {
        boosted.mapv(|_| 0.5)
    };
    for i in 0..w.nrows() {
        w[(i, i)] = 0.0;
    }
    w
}

/// A complete mined strategy model.
#[derive(Debug, Clone)]
pub struct StrategyModel {
    pub k: usize,
    pub membership: Array2<f64>,
    pub labels: Vec<usize>,
    pub prototypes: Vec<Prototype>,
    pub direction_prototypes: Vec<[i8; 3]>,
    pub embeddings: Array2<f64>,
    pub config: MiningConfig,
    pub wsnmf_objective: f64,
    pub gaae_final_loss: f64,
    pub gaae_loss_curve: Vec<f64>,
}

impl StrategyModel {
    /// Membership strength backing each event's hard label.
    pub fn label_strength(&self, event_idx: usize) -> f64 {
        self.membership
            .row(event_idx)
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Run the whole mining chain on an attributed event graph.
pub fn mine(graph: &AttributedEventGraph, cfg: &MiningConfig) -> Result<StrategyModel> {
    let (model, _) = mine_with_graphs(graph, cfg)?;
    Ok(model)
}

/// As [`mine`], additionally returning the intermediate refined graphs.
pub fn mine_with_graphs(
    graph: &AttributedEventGraph,
    cfg: &MiningConfig,
) -> Result<(StrategyModel, RefinedGraphs)> {
    cfg.check()?;
    let boosted = boost_graph(&graph.adjacency, &graph.similarity, cfg.mu);
    let se = self_express(&graph.attributes, cfg.alpha, &cfg.self_express)?;
    let (symmetrized, refined) = refine_graph(&se.coefficients, &graph.similarity, cfg.lambda);
    let weights = if cfg.uniform_weights {
        let mut w = Array2::from_elem(boosted.dim(), 1.0);
        for i in 0..w.nrows() {
            w[(i, i)] = 0.0;
        }
        w
    } else {
        confidence_weights(&boosted)
    };

    let gaae_sol = gaae_fit(&refined, &graph.attributes, &weights, &cfg.gaae)?;
    let nmf = wsnmf(&refined, &weights, cfg.k, &cfg.wsnmf)?;
    let labels = assign_labels(&nmf.membership);
    let prototypes = extract_prototypes(&graph.events, &labels, cfg.k, cfg.deadbands);
    let directions = direction_prototypes(&prototypes, cfg.deadbands);

    let model = StrategyModel {
        k: cfg.k,
        membership: nmf.membership,
        labels,
        prototypes,
        direction_prototypes: directions,
        embeddings: gaae_sol.embeddings,
        config: cfg.clone(),
        wsnmf_objective: nmf.objective,
        gaae_final_loss: *gaae_sol.loss_curve.last().unwrap(),
        gaae_loss_curve: gaae_sol.loss_curve,
    };
    let graphs = RefinedGraphs {
        boosted,
        coefficients: se.coefficients,
        symmetrized,
        refined,
        weights,
    };
    Ok((model, graphs))
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelManifest {
    format: String,
    k: usize,
    m: usize,
    embedding_dim: usize,
    config: MiningConfig,
    wsnmf_objective: f64,
    gaae_final_loss: f64,
}

fn write_matrix(m: &Array2<f64>) -> String {
    let mut out = String::new();
    for row in m.rows() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        writeln!(out, "{}", cells.join(",")).unwrap();
    }
    out
}

fn read_matrix(text: &str, cols: usize, what: &str) -> Result<Array2<f64>> {
    let mut data = Vec::new();
    let mut rows = 0usize;
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        for tok in line.split(',') {
            data.push(
                tok.parse::<f64>()
                    .map_err(|_| Error::data(format!("{what}: bad value `{tok}`")))?,
            );
        }
        rows += 1;
    }
    Array2::from_shape_vec((rows, cols), data)
        .map_err(|e| Error::data(format!("{what}: shape error: {e}")))
}

/// Serialize the model: manifest, dense membership and embeddings,
/// prototypes (JSON), labels, and direction prototypes.
pub fn save_model(model: &StrategyModel, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let manifest = ModelManifest {
        format: MODEL_FORMAT_VERSION.into(),
        k: model.k,
        m: model.labels.len(),
        embedding_dim: model.embeddings.ncols(),
        config: model.config.clone(),
        wsnmf_objective: model.wsnmf_objective,
        gaae_final_loss: model.gaae_final_loss,
    };
    fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest).map_err(|e| Error::data(e.to_string()))?,
    )?;
    fs::write(dir.join("membership.txt"), write_matrix(&model.membership))?;
    fs::write(dir.join("embeddings.txt"), write_matrix(&model.embeddings))?;
    fs::write(
        dir.join("prototypes.json"),
        serde_json::to_string_pretty(&model.prototypes).map_err(|e| Error::data(e.to_string()))?,
    )?;
    let labels: Vec<String> = model.labels.iter().map(|l| l.to_string()).collect();
    fs::write(dir.join("labels.txt"), labels.join("\n") + "\n")?;
    let mut dirs = String::new();
    for d in &model.direction_prototypes {
        writeln!(dirs, "{},{},{}", d[0], d[1], d[2]).unwrap();
    }
    fs::write(dir.join("directions.txt"), dirs)?;
    let curve: Vec<String> = model.gaae_loss_curve.iter().map(|v| format!("{v}")).collect();
    fs::write(dir.join("gaae_loss.txt"), curve.join("\n") + "\n")?;
    Ok(())
}

pub fn load_model(dir: &Path) -> Result<StrategyModel> {
    let manifest: ModelManifest =
        serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)
            .map_err(|e| Error::data(format!("model manifest: {e}")))?;
    if manifest.format != MODEL_FORMAT_VERSION {
        return Err(Error::data(format!(
            "unsupported model format `{}`",
            manifest.format
        )));
    }
    let membership = read_matrix(
        &fs::read_to_string(dir.join("membership.txt"))?,
        manifest.k,
        "membership",
    )?;
    let embeddings = read_matrix(
        &fs::read_to_string(dir.join("embeddings.txt"))?,
        manifest.embedding_dim,
        "embeddings",
    )?;
    let prototypes: Vec<Prototype> =
        serde_json::from_str(&fs::read_to_string(dir.join("prototypes.json"))?)
            .map_err(|e| Error::data(format!("prototypes: {e}")))?;
    for p in &prototypes {
        if p.descriptor.len() != DESCRIPTOR_DIM {
            return Err(Error::data("prototype descriptor length mismatch"));
        }
    }
    let labels: Vec<usize> = fs::read_to_string(dir.join("labels.txt"))?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.trim().parse().map_err(|_| Error::data("bad label")))
        .collect::<Result<_>>()?;
    let direction_prototypes: Vec<[i8; 3]> = fs::read_to_string(dir.join("directions.txt"))?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let parts: Vec<i8> = l
                .split(',')
                .map(|t| t.trim().parse().map_err(|_| Error::data("bad direction")))
                .collect::<Result<_>>()?;
            if parts.len() != 3 {
                return Err(Error::data("direction rows need 3 components"));
            }
            Ok([parts[0], parts[1], parts[2]])
        })
        .collect::<Result<_>>()?;
    let gaae_loss_curve: Vec<f64> = fs::read_to_string(dir.join("gaae_loss.txt"))?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.trim().parse().map_err(|_| Error::data("bad loss value")))
        .collect::<Result<_>>()?;
    Ok(StrategyModel {
        k: manifest.k,
        membership,
        labels,
        prototypes,
        direction_prototypes,
        embeddings,
        config: manifest.config,
        wsnmf_objective: manifest.wsnmf_objective,
        gaae_final_loss: manifest.gaae_final_loss,
        gaae_loss_curve,
    })
}
