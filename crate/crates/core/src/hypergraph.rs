//! Hypergraph representation, validation, derived statistics, and the fixed
//! structural operators consumed by each architecture's forward pass.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Architecture tag shared across the crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Arch {
    #[serde(rename = "unigcn")]
    UniGcn,
    #[serde(rename = "alldeepsets")]
    AllDeepSets,
    #[serde(rename = "mign")]
    MIgn,
    #[serde(rename = "tmphn")]
    TMphn,
    #[serde(rename = "hgnnplus")]
    HgnnPlus,
    #[serde(rename = "hgnn")]
    Hgnn,
}

impl Arch {
    pub fn parse(s: &str) -> Result<Arch> {
        match s {
            "unigcn" => Ok(Arch::UniGcn),
            "alldeepsets" => Ok(Arch::AllDeepSets),
            "mign" => Ok(Arch::MIgn),
            "tmphn" => Ok(Arch::TMphn),
            "hgnnplus" => Ok(Arch::HgnnPlus),
            "hgnn" => Ok(Arch::Hgnn),
            _ => Err(Error::usage(format!(
                "unknown architecture '{s}' (expected unigcn|alldeepsets|mign|tmphn|hgnnplus|hgnn)"
            ))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Arch::UniGcn => "unigcn",
            Arch::AllDeepSets => "alldeepsets",
            Arch::MIgn => "mign",
            Arch::TMphn => "tmphn",
            Arch::HgnnPlus => "hgnnplus",
            Arch::Hgnn => "hgnn",
        }
    }

    pub const ALL: [Arch; 6] = [
        Arch::UniGcn,
        Arch::AllDeepSets,
        Arch::MIgn,
        Arch::TMphn,
        Arch::HgnnPlus,
        Arch::Hgnn,
    ];
}

impl std::fmt::Display for Arch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Node set [0, N) plus a list of K hyperedges (non-empty node-index sets).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Hypergraph {
    num_nodes: usize,
    hyperedges: Vec<Vec<usize>>,
}

impl Hypergraph {
    /// Validates: N >= 1, K >= 1, every hyperedge non-empty, indices < N,
    /// no duplicate node inside a hyperedge. Hyperedges are stored sorted.
    pub fn new(num_nodes: usize, hyperedges: Vec<Vec<usize>>) -> Result<Self> {
        if num_nodes == 0 {
            return Err(Error::data("hypergraph must have at least one node".to_string()));
        }
        if hyperedges.is_empty() {
            return Err(Error::data("hypergraph must have at least one hyperedge".to_string()));
        }
        let mut edges = Vec::with_capacity(hyperedges.len());
        for (k, e) in hyperedges.into_iter().enumerate() {
            if e.is_empty() {
                return Err(Error::data(format!("hyperedge {k} is empty")));
            }
            let mut e = e;
            e.sort_unstable();
            if e.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::data(format!("hyperedge {k} contains duplicate node indices")));
            }
            if *e.last().unwrap() >= num_nodes {
                return Err(Error::data(format!(
                    "hyperedge {k} references node {} >= N={num_nodes}",
                    e.last().unwrap()
                )));
            }
            edges.push(e);
        }
        Ok(Hypergraph { num_nodes, hyperedges: edges })
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }
    pub fn num_edges(&self) -> usize {
        self.hyperedges.len()
    }
    pub fn hyperedges(&self) -> &[Vec<usize>] {
        &self.hyperedges
    }
}

/// Derived statistics: M (max |e|), R (max incident count), D (max neighbor
/// count), plus the per-node neighbor and incident sets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HyperStats {
    pub m_max: usize,
    pub r_max: usize,
    pub d_max: usize,
    /// N_i: nodes sharing a hyperedge with v_i, excluding v_i itself.
    pub neighbors: Vec<Vec<usize>>,
    /// r_i: indices of hyperedges containing v_i.
    pub incident: Vec<Vec<usize>>,
}

pub fn compute_stats(hg: &Hypergraph) -> HyperStats {
    let n = hg.num_nodes();
    let mut incident = vec![Vec::new(); n];
    let mut neighbor_flags = vec![vec![false; n]; n];
    for (k, e) in hg.hyperedges().iter().enumerate() {
        for &v in e {
            incident[v].push(k);
            for &u in e {
                if u != v {
                    neighbor_flags[v][u] = true;
                }
            }
        }
    }
    let neighbors: Vec<Vec<usize>> = neighbor_flags
        .into_iter()
        .map(|flags| flags.iter().enumerate().filter(|(_, f)| **f).map(|(i, _)| i).collect())
        .collect();
    let m_max = hg.hyperedges().iter().map(|e| e.len()).max().unwrap_or(0);
    let r_max = incident.iter().map(|r| r.len()).max().unwrap_or(0);
    let d_max = neighbors.iter().map(|s| s.len()).max().unwrap_or(0);
    HyperStats { m_max, r_max, d_max, neighbors, incident }
}

/// Node features X (NxD), optional hyperedge features Z (KxD), row-norm cap.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub x: Matrix,
    pub z: Option<Matrix>,
    pub b_cap: f64,
}

impl FeatureSet {
    pub fn new(x: Matrix, z: Option<Matrix>, b_cap: f64) -> Result<Self> {
        if b_cap < 0.0 {
            return Err(Error::data("feature norm cap must be non-negative".to_string()));
        }
        let check = |m: &Matrix, name: &str| -> Result<()> {
            for i in 0..m.rows() {
                let norm = crate::linalg::vec_norm(m.row(i));
                if norm > b_cap + 1e-9 {
                    return Err(Error::data(format!(
                        "{name} row {i} has norm {norm} exceeding cap {b_cap}"
                    )));
                }
            }
            Ok(())
        };
        check(&x, "X")?;
        if let Some(z) = &z {
            check(z, "Z")?;
        }
        Ok(FeatureSet { x, z, b_cap })
    }

    pub fn dim(&self) -> usize {
        self.x.cols()
    }
}

/// Fixed structural matrices per architecture.
#[derive(Debug, Clone)]
pub enum StructuralOperators {
    UniGcn {
        /// C1 (NxK): C1[i,j] = 1 iff v_i in e_j.
        c1: Matrix,
        /// C2 (KxN): C2[i,j] = 1/sqrt(d_{e_i}) iff v_j in e_i.
        c2: Matrix,
        /// C3 diagonal entries 1/sqrt(|N_i|+1).
        c3_diag: Vec<f64>,
        /// C4 (NxN): 1 iff v_i in N_j or i = j.
        c4: Matrix,
    },
    AllDeepSets {
        /// Ce^T ((N+K)x(N+K)): edge row N+k sums node rows of e_k plus its
        /// own previous value; node rows are pass-through.
        ce_t: Matrix,
        /// Cv^T: node row i sums edge rows of r_i plus its own value.
        cv_t: Matrix,
    },
    MIgn {
        /// A_e (KxK): 1 iff i != j and e_i intersects e_j.
        a_e: Matrix,
        /// Node-to-edge init map (KxN): row k sums the members of e_k.
        init_map: Matrix,
    },
    Hgnn {
        /// J (NxK) incidence, T/Dv/De diagonals, and the precomputed NxN
        /// propagation matrix (degree placement differs between variants).
        j: Matrix,
        t_diag: Vec<f64>,
        dv_diag: Vec<f64>,
        de_diag: Vec<f64>,
        prop: Matrix,
        plus: bool,
    },
}

/// d_{e_i} = (1/|e_i|) * sum_{v_j in e_i} (|N_j| + 1).
pub fn unigcn_edge_degree(e: &[usize], stats: &HyperStats) -> f64 {
    let s: f64 = e.iter().map(|&v| (stats.neighbors[v].len() + 1) as f64).sum();
    s / e.len() as f64
}

pub fn build_operators(hg: &Hypergraph, stats: &HyperStats, arch: Arch) -> Result<StructuralOperators> {
    let n = hg.num_nodes();
    let k = hg.num_edges();
    match arch {
        Arch::UniGcn => {
            let mut c1 = Matrix::zeros(n, k);
            let mut c2 = Matrix::zeros(k, n);
            for (j, e) in hg.hyperedges().iter().enumerate() {
                let de = unigcn_edge_degree(e, stats);
                let w = 1.0 / de.sqrt();
                for &v in e {
                    c1.set(v, j, 1.0);
                    c2.set(j, v, w);
                }
            }
            let c3_diag: Vec<f64> =
                (0..n).map(|i| 1.0 / ((stats.neighbors[i].len() + 1) as f64).sqrt()).collect();
            let mut c4 = Matrix::zeros(n, n);
            for i in 0..n {
                c4.set(i, i, 1.0);
                for &u in &stats.neighbors[i] {
                    c4.set(i, u, 1.0);
                }
            }
            Ok(StructuralOperators::UniGcn { c1, c2, c3_diag, c4 })
        }
        Arch::AllDeepSets => {
            let dim = n + k;
            let mut ce_t = Matrix::identity(dim);
            let mut cv_t = Matrix::identity(dim);
            for (kk, e) in hg.hyperedges().iter().enumerate() {
                for &v in e {
                    ce_t.set(n + kk, v, 1.0);
                    cv_t.set(v, n + kk, 1.0);
                }
            }
            Ok(StructuralOperators::AllDeepSets { ce_t, cv_t })
        }
        Arch::MIgn => {
            let mut a_e = Matrix::zeros(k, k);
            for i in 0..k {
                for j in (i + 1)..k {
                    let ei = &hg.hyperedges()[i];
                    let ej = &hg.hyperedges()[j];
                    if intersects(ei, ej) {
                        a_e.set(i, j, 1.0);
                        a_e.set(j, i, 1.0);
                    }
                }
            }
            let mut init_map = Matrix::zeros(k, n);
            for (kk, e) in hg.hyperedges().iter().enumerate() {
                for &v in e {
                    init_map.set(kk, v, 1.0);
                }
            }
            Ok(StructuralOperators::MIgn { a_e, init_map })
        }
        Arch::HgnnPlus | Arch::Hgnn => {
            let mut j_mat = Matrix::zeros(n, k);
            let t_diag = vec![1.0; k]; // unit hyperedge weights throughout
            let mut de_diag = vec![0.0; k];
            for (kk, e) in hg.hyperedges().iter().enumerate() {
                de_diag[kk] = e.len() as f64;
                for &v in e {
                    j_mat.set(v, kk, 1.0);
                }
            }
            let dv_diag: Vec<f64> = (0..n)
                .map(|i| stats.incident[i].iter().map(|&e| t_diag[e]).sum::<f64>())
                .collect();
            if let Some(i) = dv_diag.iter().position(|&d| d <= 0.0) {
                return Err(Error::data(format!(
                    "node {i} is in no hyperedge; vertex degree matrix not invertible"
                )));
            }
            let plus = arch == Arch::HgnnPlus;
            // prop = Dv^-1 J T De^-1 J^T        (plus variant)
            //      = Dv^-1/2 J T De^-1 J^T Dv^-1/2  (original variant)
            let mut prop = Matrix::zeros(n, n);
            for kk in 0..k {
                let e = &hg.hyperedges()[kk];
                let w = t_diag[kk] / de_diag[kk];
                for &a in e {
                    for &b in e {
                        let v = prop.get(a, b) + w;
                        prop.set(a, b, v);
                    }
                }
            }
            for a in 0..n {
                for b in 0..n {
                    let scale = if plus {
                        1.0 / dv_diag[a]
                    } else {
                        1.0 / (dv_diag[a].sqrt() * dv_diag[b].sqrt())
                    };
                    let v = prop.get(a, b) * scale;
                    prop.set(a, b, v);
                }
            }
            Ok(StructuralOperators::Hgnn { j: j_mat, t_diag, dv_diag, de_diag, prop, plus })
        }
        Arch::TMphn => Err(Error::usage(
            "unknown architecture tag for structural operators: tmphn uses tensor structures"
                .to_string(),
        )),
    }
}

fn intersects(a: &[usize], b: &[usize]) -> bool {
    // both sorted
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => return true,
        }
    }
    false
}

/// A size-M multiset over the members of a hyperedge, stored as
/// (node, multiplicity) pairs in ascending node order.
pub type Multiset = Vec<(usize, u32)>;

/// One hyperedge's M-th-order expansion as seen from a member node v:
/// every multiset in span^M(e) with one copy of v removed.
#[derive(Debug, Clone)]
pub struct NodeEdgeExpansion {
    pub edge: usize,
    pub a_e: f64,
    /// Reduced multisets (one v deleted); may contain an empty multiset when
    /// |e| = 1 and M = 1.
    pub reduced: Vec<Multiset>,
}

/// Tensor structures for T-MPHN: adjacency values a_e, span sizes, and the
/// per-node reduced expansions driving the message computation.
#[derive(Debug, Clone)]
pub struct TmphnStructures {
    pub order_m: usize,
    pub a_e: Vec<f64>,
    pub span_sizes: Vec<usize>,
    /// per node v: expansions of every hyperedge incident to v.
    pub per_node: Vec<Vec<NodeEdgeExpansion>>,
}

pub const TENSOR_ORDER_CAP: usize = 4;

/// Number of surjective functions from an M-element sequence onto a set of
/// size s: sum_{i=0}^{s} (-1)^i C(s,i) (s-i)^M.
pub fn surjection_count(s: usize, m: usize) -> f64 {
    let mut total = 0.0;
    for i in 0..=s {
        let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
        total += sign * binom(s, i) * ((s - i) as f64).powi(m as i32);
    }
    total
}

pub fn binom(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut r = 1.0;
    for i in 0..k {
        r = r * (n - i) as f64 / (i + 1) as f64;
    }
    r
}

/// Enumerate span^M(e): all multisets of size M over e whose support is all
/// of e. Multiplicity vectors are generated in lexicographic order.
fn enumerate_span(e: &[usize], order_m: usize) -> Vec<Multiset> {
    let s = e.len();
    let mut out = Vec::new();
    // distribute (order_m - s) extra copies over s slots, each slot >= 1
    let extra = order_m - s;
    let mut counts = vec![0u32; s];
    fn rec(counts: &mut Vec<u32>, idx: usize, remaining: u32, out: &mut Vec<Vec<u32>>) {
        if idx == counts.len() - 1 {
            counts[idx] = remaining;
            out.push(counts.clone());
            return;
        }
        for c in 0..=remaining {
            counts[idx] = c;
            rec(counts, idx + 1, remaining - c, out);
        }
    }
    let mut all = Vec::new();
    if s == 1 {
        all.push(vec![extra as u32]);
    } else {
        rec(&mut counts, 0, extra as u32, &mut all);
    }
    for extra_counts in all {
        let ms: Multiset =
            e.iter().zip(&extra_counts).map(|(&v, &c)| (v, c + 1)).collect();
        out.push(ms);
    }
    out
}

pub fn build_tensor_structures(hg: &Hypergraph, order_m: usize) -> Result<TmphnStructures> {
    if order_m == 0 {
        return Err(Error::data("tensor order must be positive".to_string()));
    }
    if order_m > TENSOR_ORDER_CAP {
        return Err(Error::data(format!(
            "tensor order {order_m} exceeds cap {TENSOR_ORDER_CAP}"
        )));
    }
    let max_edge = hg.hyperedges().iter().map(|e| e.len()).max().unwrap();
    if order_m < max_edge {
        return Err(Error::data(format!(
            "tensor order {order_m} smaller than largest hyperedge size {max_edge}"
        )));
    }
    let k = hg.num_edges();
    let mut a_e = Vec::with_capacity(k);
    let mut span_sizes = Vec::with_capacity(k);
    let mut spans = Vec::with_capacity(k);
    for e in hg.hyperedges() {
        let denom = surjection_count(e.len(), order_m);
        a_e.push(e.len() as f64 / denom);
        let span = enumerate_span(e, order_m);
        span_sizes.push(span.len());
        spans.push(span);
    }
    let stats = compute_stats(hg);
    let mut per_node = Vec::with_capacity(hg.num_nodes());
    for v in 0..hg.num_nodes() {
        let mut exps = Vec::new();
        for &edge in &stats.incident[v] {
            let mut reduced = Vec::new();
            for ms in &spans[edge] {
                // delete exactly one copy of v
                let mut red: Multiset = Vec::with_capacity(ms.len());
                for &(u, c) in ms {
                    if u == v {
                        if c > 1 {
                            red.push((u, c - 1));
                        }
                    } else {
                        red.push((u, c));
                    }
                }
                reduced.push(red);
            }
            exps.push(NodeEdgeExpansion { edge, a_e: a_e[edge], reduced });
        }
        per_node.push(exps);
    }
    Ok(TmphnStructures { order_m, a_e, span_sizes, per_node })
}
