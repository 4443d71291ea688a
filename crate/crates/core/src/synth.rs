//! Synthetic dataset generation: ER/SBM base graphs lifted to hypergraphs by
//! a preferential-attachment growth process, random labels, label-keyed
//! structural features, and line-oriented serialization with a manifest.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

use crate::error::{Error, Result};
use crate::hypergraph::{compute_stats, FeatureSet, Hypergraph};
use crate::linalg::{vec_norm, Matrix};
use crate::parallel::map_range;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "model")]
pub enum BaseModel {
    #[serde(rename = "er")]
    Er { p: f64 },
    #[serde(rename = "sbm")]
    Sbm { blocks: usize, p_intra: f64, p_inter: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GenConfig {
    #[serde(flatten)]
    pub base: BaseModel,
    pub n: usize,
    pub m_cap: usize,
    pub r_cap: usize,
    pub pool: usize,
    pub classes: usize,
    pub d: usize,
    pub b_cap: f64,
    pub seed: u64,
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        match &self.base {
            BaseModel::Er { p } => {
                if !(*p > 0.0 && *p <= 1.0) {
                    return Err(Error::data("ER probability must lie in (0,1]".to_string()));
                }
            }
            BaseModel::Sbm { blocks, p_intra, p_inter } => {
                if *blocks == 0 {
                    return Err(Error::data("SBM needs at least one block".to_string()));
                }
                for p in [p_intra, p_inter] {
                    if !(0.0..=1.0).contains(p) {
                        return Err(Error::data("SBM probabilities must lie in [0,1]".to_string()));
                    }
                }
            }
        }
        if self.m_cap == 0 || self.r_cap == 0 {
            return Err(Error::data("caps must be >= 1".to_string()));
        }
        if self.classes < 2 {
            return Err(Error::data("class count must be >= 2".to_string()));
        }
        if self.d < 2 {
            return Err(Error::data("feature width must be >= 2".to_string()));
        }
        if self.n < 2 {
            return Err(Error::data("node count must be >= 2".to_string()));
        }
        if self.pool == 0 {
            return Err(Error::data("pool size must be >= 1".to_string()));
        }
        Ok(())
    }
}

/// Plain pairwise graph as adjacency lists.
#[derive(Debug, Clone)]
pub struct BaseGraph {
    pub n: usize,
    pub adj: Vec<Vec<usize>>,
}

pub fn gen_base_graph(config: &GenConfig, seed: u64) -> BaseGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = config.n;
    let mut adj = vec![Vec::new(); n];
    let blocks: Vec<usize> = match &config.base {
        BaseModel::Er { .. } => vec![0; n],
        BaseModel::Sbm { blocks, .. } => (0..n).map(|_| rng.gen_range(0..*blocks)).collect(),
    };
    for i in 0..n {
        for j in (i + 1)..n {
            let p = match &config.base {
                BaseModel::Er { p } => *p,
                BaseModel::Sbm { p_intra, p_inter, .. } => {
                    if blocks[i] == blocks[j] {
                        *p_intra
                    } else {
                        *p_inter
                    }
                }
            };
            if rng.gen_range(0.0..1.0) < p {
                adj[i].push(j);
                adj[j].push(i);
            }
        }
    }
    BaseGraph { n, adj }
}

fn weighted_pick(rng: &mut ChaCha8Rng, weights: &[(usize, f64)]) -> Option<usize> {
    let total: f64 = weights.iter().map(|(_, w)| w).sum();
    if total <= 0.0 || weights.is_empty() {
        return None;
    }
    let mut t = rng.gen_range(0.0..total);
    for (item, w) in weights {
        t -= w;
        if t <= 0.0 {
            return Some(*item);
        }
    }
    weights.last().map(|(i, _)| *i)
}

/// Preferential-attachment hyperedge growth: K = N hyperedges, each seeded
/// at an uncovered node while any remain (guaranteeing coverage) or at a
/// node sampled proportional to its current incident count + 1, then grown
/// along base-graph edges proportional to degree + 1, up to a size drawn
/// uniformly from [2, M_cap]. Additions that would push a node past R_cap
/// are rejected.
pub fn hyperpa_lift(graph: &BaseGraph, m_cap: usize, r_cap: usize, seed: u64) -> Result<Hypergraph> {
    let n = graph.n;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut incident = vec![0usize; n];
    let mut edges: Vec<Vec<usize>> = Vec::with_capacity(n);
    let target_k = n;
    for _ in 0..target_k {
        let uncovered: Vec<usize> = (0..n).filter(|&v| incident[v] == 0).collect();
        let seed_node = if !uncovered.is_empty() {
            uncovered[rng.gen_range(0..uncovered.len())]
        } else {
            let weights: Vec<(usize, f64)> = (0..n)
                .filter(|&v| incident[v] < r_cap)
                .map(|v| (v, (incident[v] + 1) as f64))
                .collect();
            match weighted_pick(&mut rng, &weights) {
                Some(v) => v,
                None => break, // every node is saturated
            }
        };
        let size = if m_cap < 2 { 1 } else { rng.gen_range(2..=m_cap) };
        let mut members = vec![seed_node];
        while members.len() < size {
            let mut cands: Vec<(usize, f64)> = Vec::new();
            for &m in &members {
                for &u in &graph.adj[m] {
                    if !members.contains(&u) && incident[u] < r_cap && !cands.iter().any(|(c, _)| *c == u)
                    {
                        cands.push((u, (graph.adj[u].len() + 1) as f64));
                    }
                }
            }
            match weighted_pick(&mut rng, &cands) {
                Some(u) => members.push(u),
                None => break, // no eligible neighbor: accept a short edge
            }
        }
        for &m in &members {
            incident[m] += 1;
        }
        edges.push(members);
    }
    let uncovered: Vec<usize> = (0..n).filter(|&v| incident[v] == 0).collect();
    if !uncovered.is_empty() {
        return Err(Error::data(format!(
            "could not cover nodes {uncovered:?} under caps M<={m_cap}, R<={r_cap}"
        )));
    }
    Hypergraph::new(n, edges)
}

/// Label-keyed structural features: two structural descriptors (normalized
/// neighbor count, normalized incident count) followed by a Gaussian shift
/// whose mean is 0.5 on the coordinate indexed by the label. Rows are capped
/// at norm B_cap.
pub fn gen_features(hg: &Hypergraph, label: usize, d: usize, b_cap: f64, seed: u64) -> Result<FeatureSet> {
    if d < 2 {
        return Err(Error::data("feature width must be >= 2".to_string()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stats = compute_stats(hg);
    let n = hg.num_nodes();
    let k = hg.num_edges();
    let pad = d - 2;
    let mk_shift = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        let mut row = vec![0.0; pad];
        for (j, v) in row.iter_mut().enumerate() {
            let mean = if pad > 0 && j == label % pad { 0.5 } else { 0.0 };
            // Box-Muller Gaussian, std 0.1
            let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
            let u2: f64 = rng.gen_range(0.0..1.0);
            let g = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
            *v = mean + 0.1 * g;
        }
        row
    };
    let cap_row = |mut row: Vec<f64>| -> Vec<f64> {
        let norm = vec_norm(&row);
        if norm > b_cap {
            let s = if norm > 0.0 { b_cap / norm } else { 0.0 };
            for v in row.iter_mut() {
                *v *= s;
            }
        }
        row
    };
    let mut x_rows = Vec::with_capacity(n);
    for v in 0..n {
        let mut row = vec![
            stats.neighbors[v].len() as f64 / (n.max(2) - 1) as f64,
            stats.incident[v].len() as f64 / k as f64,
        ];
        row.extend(mk_shift(&mut rng));
        x_rows.push(cap_row(row));
    }
    let mut z_rows = Vec::with_capacity(k);
    for e in hg.hyperedges() {
        let mean_deg: f64 = e
            .iter()
            .map(|&v| stats.neighbors[v].len() as f64 / (n.max(2) - 1) as f64)
            .sum::<f64>()
            / e.len() as f64;
        let mut row = vec![e.len() as f64 / stats.m_max as f64, mean_deg];
        row.extend(mk_shift(&mut rng));
        z_rows.push(cap_row(row));
    }
    FeatureSet::new(Matrix::from_rows(&x_rows)?, Some(Matrix::from_rows(&z_rows)?), b_cap)
}

#[derive(Debug, Clone)]
pub struct Sample {
    pub id: usize,
    pub hg: Hypergraph,
    pub feats: FeatureSet,
    pub label: usize,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub classes: usize,
    pub d: usize,
    pub b_cap: f64,
}

pub fn generate(config: &GenConfig) -> Result<Dataset> {
    config.validate()?;
    let results = map_range(config.pool, |id| {
        let sample_seed = config.seed.wrapping_add(id as u64).wrapping_mul(0x100000001B3);
        let graph = gen_base_graph(config, sample_seed ^ 0xA11CE);
        let hg = hyperpa_lift(&graph, config.m_cap, config.r_cap, sample_seed ^ 0xB0B)?;
        let mut rng = ChaCha8Rng::seed_from_u64(sample_seed ^ 0x1ABE1);
        let label = rng.gen_range(0..config.classes);
        let feats = gen_features(&hg, label, config.d, config.b_cap, sample_seed ^ 0xFEA7)?;
        Ok::<_, Error>(Sample { id, hg, feats, label })
    });
    let mut samples = Vec::with_capacity(config.pool);
    for r in results {
        samples.push(r?);
    }
    Ok(Dataset { samples, classes: config.classes, d: config.d, b_cap: config.b_cap })
}

// ---------------------------------------------------------------------------
// serialization
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct SampleLine {
    id: usize,
    n: usize,
    label: usize,
    hyperedges: Vec<Vec<usize>>,
    x: Vec<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    z: Option<Vec<Vec<f64>>>,
    b_cap: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleStats {
    pub id: usize,
    pub n: usize,
    pub k: usize,
    pub m_max: usize,
    pub r_max: usize,
    pub d_max: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PooledStats {
    pub max_k: usize,
    pub max_m: usize,
    pub max_r: usize,
    pub max_d: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config: Option<GenConfig>,
    pub classes: usize,
    pub feature_dim: usize,
    pub b_cap: f64,
    pub samples: Vec<SampleStats>,
    pub pooled: PooledStats,
    pub content_hash: String,
}

pub fn pooled_stats(ds: &Dataset) -> PooledStats {
    let mut pooled = PooledStats { max_k: 0, max_m: 0, max_r: 0, max_d: 0 };
    for s in &ds.samples {
        let st = compute_stats(&s.hg);
        pooled.max_k = pooled.max_k.max(s.hg.num_edges());
        pooled.max_m = pooled.max_m.max(st.m_max);
        pooled.max_r = pooled.max_r.max(st.r_max);
        pooled.max_d = pooled.max_d.max(st.d_max);
    }
    pooled
}

pub fn manifest_path(dataset_path: &Path) -> std::path::PathBuf {
    let mut os = dataset_path.as_os_str().to_owned();
    os.push(".manifest.json");
    std::path::PathBuf::from(os)
}

fn dataset_to_lines(ds: &Dataset) -> Result<String> {
    let mut out = String::new();
    for s in &ds.samples {
        let x: Vec<Vec<f64>> = (0..s.feats.x.rows()).map(|i| s.feats.x.row(i).to_vec()).collect();
        let z = s
            .feats
            .z
            .as_ref()
            .map(|z| (0..z.rows()).map(|i| z.row(i).to_vec()).collect());
        let line = SampleLine {
            id: s.id,
            n: s.hg.num_nodes(),
            label: s.label,
            hyperedges: s.hg.hyperedges().to_vec(),
            x,
            z,
            b_cap: s.feats.b_cap,
        };
        out.push_str(
            &serde_json::to_string(&line)
                .map_err(|e| Error::data(format!("sample serialization failed: {e}")))?,
        );
        out.push('\n');
    }
    Ok(out)
}

/// Write the dataset (one sample per line) plus a manifest alongside;
/// returns the manifest.
pub fn serialize(ds: &Dataset, path: &Path, config: Option<&GenConfig>) -> Result<DatasetManifest> {
    let text = dataset_to_lines(ds)?;
    std::fs::write(path, &text)?;
    let mut hasher = Sha256::new();
    hasher.update(text.as_bytes());
    let hash = format!("{:x}", hasher.finalize());
    let samples: Vec<SampleStats> = ds
        .samples
        .iter()
        .map(|s| {
            let st = compute_stats(&s.hg);
            SampleStats {
                id: s.id,
                n: s.hg.num_nodes(),
                k: s.hg.num_edges(),
                m_max: st.m_max,
                r_max: st.r_max,
                d_max: st.d_max,
            }
        })
        .collect();
    let manifest = DatasetManifest {
        config: config.cloned(),
        classes: ds.classes,
        feature_dim: ds.d,
        b_cap: ds.b_cap,
        samples,
        pooled: pooled_stats(ds),
        content_hash: hash,
    };
    let mtext = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::data(format!("manifest serialization failed: {e}")))?;
    std::fs::write(manifest_path(path), mtext)?;
    Ok(manifest)
}

pub fn load_manifest(dataset_path: &Path) -> Result<DatasetManifest> {
    let mpath = manifest_path(dataset_path);
    let text = std::fs::read_to_string(&mpath)
        .map_err(|e| Error::data(format!("cannot read manifest {}: {e}", mpath.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::data(format!("manifest parse error: {e}")))
}

/// Load a dataset; validates every hypergraph/feature invariant and reports
/// the first malformed line by number. Class count comes from the manifest
/// when present, otherwise it is inferred from the labels.
pub fn load(path: &Path) -> Result<Dataset> {
    let text = std::fs::read_to_string(path)?;
    let mut samples = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed: SampleLine = serde_json::from_str(line).map_err(|e| {
            Error::data(format!("{}: line {}: {e}", path.display(), lineno + 1))
        })?;
        let hg = Hypergraph::new(parsed.n, parsed.hyperedges)
            .map_err(|e| Error::data(format!("{}: line {}: {e}", path.display(), lineno + 1)))?;
        let x = Matrix::from_rows(&parsed.x)
            .map_err(|e| Error::data(format!("{}: line {}: {e}", path.display(), lineno + 1)))?;
        if x.rows() != hg.num_nodes() {
            return Err(Error::data(format!(
                "{}: line {}: X has {} rows for {} nodes",
                path.display(),
                lineno + 1,
                x.rows(),
                hg.num_nodes()
            )));
        }
        let z = match parsed.z {
            Some(rows) => {
                let z = Matrix::from_rows(&rows).map_err(|e| {
                    Error::data(format!("{}: line {}: {e}", path.display(), lineno + 1))
                })?;
                if z.rows() != hg.num_edges() {
                    return Err(Error::data(format!(
                        "{}: line {}: Z has {} rows for {} hyperedges",
                        path.display(),
                        lineno + 1,
                        z.rows(),
                        hg.num_edges()
                    )));
                }
                Some(z)
            }
            None => None,
        };
        let feats = FeatureSet::new(x, z, parsed.b_cap)
            .map_err(|e| Error::data(format!("{}: line {}: {e}", path.display(), lineno + 1)))?;
        samples.push(Sample { id: parsed.id, hg, feats, label: parsed.label });
    }
    if samples.is_empty() {
        return Err(Error::data(format!("{}: dataset is empty", path.display())));
    }
    let d = samples[0].feats.dim();
    let b_cap = samples[0].feats.b_cap;
    let classes = match load_manifest(path) {
        Ok(m) => m.classes,
        Err(_) => samples.iter().map(|s| s.label).max().unwrap() + 1,
    };
    if let Some(s) = samples.iter().find(|s| s.label >= classes) {
        return Err(Error::data(format!("sample {} has label {} >= classes {classes}", s.id, s.label)));
    }
    Ok(Dataset { samples, classes, d, b_cap })
}
