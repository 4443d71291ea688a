//! Forward passes and analytic reverse-mode gradients for the six
//! architectures: UniGCN, AllDeepSets, M-IGN, T-MPHN, HGNN+ and HGNN.
//!
//! All layer parameters are shared across rows, so the paper's tensor product
//! eta (x) H collapses to an ordinary matrix product H * W everywhere.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hypergraph::{
    build_operators, build_tensor_structures, compute_stats, Arch, FeatureSet, Hypergraph,
    HyperStats, StructuralOperators, TmphnStructures,
};
use crate::linalg::{mean_readout, row_normalize, vec_norm, Matrix};

pub const ROW_NORM_EPS: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct Layer {
    pub name: String,
    pub mat: Matrix,
}

/// Architecture tag, step count, dims, per-layer matrices, and the
/// architecture hyperparameters (alpha scalars for M-IGN, tensor order for
/// T-MPHN).
#[derive(Debug, Clone)]
pub struct ModelWeights {
    pub arch: Arch,
    pub l_steps: usize,
    pub input_dim: usize,
    pub hidden: usize,
    pub classes: usize,
    pub alphas: Vec<f64>,
    pub order_m: usize,
    pub layers: Vec<Layer>,
}

/// Expected (rows, cols, name) layout of the layer list for an architecture.
fn layer_shapes(
    arch: Arch,
    l: usize,
    d: usize,
    h: usize,
    c: usize,
) -> Vec<(String, usize, usize)> {
    let mut v = Vec::new();
    match arch {
        Arch::UniGcn | Arch::HgnnPlus | Arch::Hgnn => {
            for i in 1..=l {
                let rin = if i == 1 { d } else { h };
                v.push((format!("w{i}"), rin, h));
            }
            let rin = if l == 0 { d } else { h };
            v.push((format!("w{}", l + 1), rin, c));
        }
        Arch::AllDeepSets => {
            for j in 1..=l {
                let din = if j == 1 { d } else { h };
                v.push((format!("w{j}_1"), din, din));
                v.push((format!("w{j}_2"), din, din));
                v.push((format!("w{j}_3"), din, din));
                v.push((format!("w{j}_4"), din, h));
            }
            v.push(("w_out".to_string(), if l == 0 { d } else { h }, c));
        }
        Arch::MIgn => {
            v.push(("w0".to_string(), d, h));
            for i in 1..=l {
                v.push((format!("w{i}"), h, h));
            }
            v.push((format!("w{}", l + 1), h, c));
        }
        Arch::TMphn => {
            v.push(("w0".to_string(), d, h));
            for i in 1..=l {
                v.push((format!("w{i}"), 2 * h, h));
            }
            v.push((format!("w{}", l + 1), h, c));
        }
    }
    v
}

impl ModelWeights {
    pub fn validate(&self) -> Result<()> {
        if self.classes == 0 || self.hidden == 0 || self.input_dim == 0 {
            return Err(Error::data("model dimensions must be positive".to_string()));
        }
        let shapes = layer_shapes(self.arch, self.l_steps, self.input_dim, self.hidden, self.classes);
        if shapes.len() != self.layers.len() {
            return Err(Error::data(format!(
                "{} expects {} layer matrices, found {}",
                self.arch,
                shapes.len(),
                self.layers.len()
            )));
        }
        for (layer, (name, r, c)) in self.layers.iter().zip(&shapes) {
            if layer.mat.rows() != *r || layer.mat.cols() != *c {
                return Err(Error::data(format!(
                    "layer {name} expects {r}x{c}, found {}x{}",
                    layer.mat.rows(),
                    layer.mat.cols()
                )));
            }
        }
        if self.arch == Arch::MIgn {
            if self.alphas.len() != self.l_steps {
                return Err(Error::data("mign needs one alpha per step".to_string()));
            }
            if self.alphas.iter().any(|a| !(0.0..=1.0).contains(a)) {
                return Err(Error::data("alpha scalars must lie in [0,1]".to_string()));
            }
        }
        Ok(())
    }

    /// Glorot-uniform initialization, deterministic per seed.
    pub fn init_glorot(
        arch: Arch,
        l_steps: usize,
        input_dim: usize,
        hidden: usize,
        classes: usize,
        order_m: usize,
        seed: u64,
    ) -> Result<ModelWeights> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shapes = layer_shapes(arch, l_steps, input_dim, hidden, classes);
        let mut layers = Vec::with_capacity(shapes.len());
        for (name, r, c) in shapes {
            let a = (6.0 / (r + c) as f64).sqrt();
            let data: Vec<f64> = (0..r * c).map(|_| rng.gen_range(-a..a)).collect();
            layers.push(Layer { name, mat: Matrix::new(r, c, data)? });
        }
        let alphas = if arch == Arch::MIgn {
            (0..l_steps).map(|_| rng.gen_range(0.0..1.0)).collect()
        } else {
            Vec::new()
        };
        let w = ModelWeights {
            arch,
            l_steps,
            input_dim,
            hidden,
            classes,
            alphas,
            order_m,
            layers,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn layer(&self, idx: usize) -> &Matrix {
        &self.layers[idx].mat
    }

    /// Zero matrices matching every layer shape (gradient accumulators).
    pub fn zero_like(&self) -> Vec<Matrix> {
        self.layers
            .iter()
            .map(|l| Matrix::zeros(l.mat.rows(), l.mat.cols()))
            .collect()
    }
}

/// Everything needed to run one sample through one architecture: structural
/// operators (or tensor structures), statistics, and features.
#[derive(Debug, Clone)]
pub struct SampleCtx {
    pub arch: Arch,
    pub num_nodes: usize,
    pub num_edges: usize,
    pub stats: HyperStats,
    pub ops: Option<StructuralOperators>,
    pub tensor: Option<TmphnStructures>,
    pub x: Matrix,
    pub z: Option<Matrix>,
    pub b_cap: f64,
}

impl SampleCtx {
    pub fn prepare(arch: Arch, hg: &Hypergraph, feats: &FeatureSet, order_m: usize) -> Result<SampleCtx> {
        if feats.x.rows() != hg.num_nodes() {
            return Err(Error::data("feature row count does not match node count".to_string()));
        }
        let stats = compute_stats(hg);
        let (ops, tensor) = match arch {
            Arch::TMphn => (None, Some(build_tensor_structures(hg, order_m)?)),
            _ => (Some(build_operators(hg, &stats, arch)?), None),
        };
        if arch == Arch::AllDeepSets {
            match &feats.z {
                None => {
                    return Err(Error::data(
                        "alldeepsets requires hyperedge features Z".to_string(),
                    ))
                }
                Some(z) => {
                    if z.rows() != hg.num_edges() || z.cols() != feats.x.cols() {
                        return Err(Error::data("Z shape does not match hyperedges/d".to_string()));
                    }
                }
            }
        }
        Ok(SampleCtx {
            arch,
            num_nodes: hg.num_nodes(),
            num_edges: hg.num_edges(),
            stats,
            ops,
            tensor,
            x: feats.x.clone(),
            z: feats.z.clone(),
            b_cap: feats.b_cap,
        })
    }
}

/// Hadamard product of the hidden rows selected by the ordered sequence U.
/// Permutation-invariant, so the sum over all orderings of U is |U|! * cni.
pub fn cni(h: &Matrix, u: &[usize]) -> Result<Vec<f64>> {
    if u.is_empty() {
        return Err(Error::data("cni of empty sequence".to_string()));
    }
    let mut out = vec![1.0; h.cols()];
    for &i in u {
        if i >= h.rows() {
            return Err(Error::data(format!("cni index {i} out of range")));
        }
        for (o, v) in out.iter_mut().zip(h.row(i)) {
            *o *= v;
        }
    }
    Ok(out)
}

/// argmax with lowest-index tie-break.
pub fn predict(logits: &Matrix) -> usize {
    let row = logits.row(0);
    let mut best = 0usize;
    for (i, v) in row.iter().enumerate().skip(1) {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone)]
enum TraceDetail {
    /// UniGCN / HGNN+ / HGNN: one pre-activation per step.
    Simple { pre: Vec<Matrix> },
    /// AllDeepSets: the four pre-activations of each step.
    Ads { pre: Vec<[Matrix; 4]> },
    /// M-IGN: init pre-activation, per-step pre-activations, readout
    /// pre-activation, plus the summed hyperedge input.
    Mign { hbar0: Matrix, pre0: Matrix, pre: Vec<Matrix>, pre_read: Matrix },
    /// T-MPHN: init pre-activation, per-step concatenated inputs and
    /// pre-activations.
    Tmphn { pre0: Matrix, concat: Vec<Matrix>, pre: Vec<Matrix> },
}

/// Hidden states H^(0..L), pre-activations, and the final 1xC logits.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub hidden: Vec<Matrix>,
    pub logits: Matrix,
    detail: TraceDetail,
}

fn scale_rows(m: &Matrix, diag: &[f64]) -> Matrix {
    let mut out = m.clone();
    for i in 0..out.rows() {
        let d = diag[i];
        for v in out.row_mut(i).iter_mut() {
            *v *= d;
        }
    }
    out
}

fn stack_rows(top: &Matrix, bottom: &Matrix) -> Result<Matrix> {
    if top.cols() != bottom.cols() {
        return Err(Error::data("stack width mismatch".to_string()));
    }
    let mut data = Vec::with_capacity((top.rows() + bottom.rows()) * top.cols());
    data.extend_from_slice(top.data());
    data.extend_from_slice(bottom.data());
    Matrix::new(top.rows() + bottom.rows(), top.cols(), data)
}

fn hstack(left: &Matrix, right: &Matrix) -> Result<Matrix> {
    if left.rows() != right.rows() {
        return Err(Error::data("hstack height mismatch".to_string()));
    }
    let mut out = Matrix::zeros(left.rows(), left.cols() + right.cols());
    for i in 0..left.rows() {
        let row = out.row_mut(i);
        row[..left.cols()].copy_from_slice(left.row(i));
        row[left.cols()..].copy_from_slice(right.row(i));
    }
    Ok(out)
}

/// Column mean of T as a 1xC row.
fn col_mean(t: &Matrix) -> Matrix {
    let mut mean = Matrix::zeros(1, t.cols());
    let n = t.rows() as f64;
    for i in 0..t.rows() {
        for (m, v) in mean.row_mut(0).iter_mut().zip(t.row(i)) {
            *m += v / n;
        }
    }
    mean
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|i| i as f64).product()
}

/// T-MPHN message matrix from hidden state h: row v is the average over
/// incident hyperedge expansions of a_e times the permutation sum of CNI over
/// each reduced multiset. The Hadamard CNI is permutation-invariant, so the
/// permutation sum collapses to (M-1)! times the multiplicity-weighted row
/// product.
fn tmphn_messages(h: &Matrix, ts: &TmphnStructures) -> Matrix {
    let perm = factorial(ts.order_m.saturating_sub(1));
    let d = h.cols();
    let mut msg = Matrix::zeros(h.rows(), d);
    for (v, exps) in ts.per_node.iter().enumerate() {
        if exps.is_empty() {
            continue; // uncovered node: average over an empty set is zero
        }
        let inv = 1.0 / exps.len() as f64;
        let mut acc = vec![0.0; d];
        for exp in exps {
            let coef = exp.a_e * perm;
            for red in &exp.reduced {
                // empty reduced multiset contributes the multiplicative
                // identity (all-ones row)
                let mut p = vec![1.0; d];
                for &(u, c) in red {
                    let urow = h.row(u);
                    for (pj, hu) in p.iter_mut().zip(urow) {
                        *pj *= hu.powi(c as i32);
                    }
                }
                for (a, pj) in acc.iter_mut().zip(&p) {
                    *a += coef * pj;
                }
            }
        }
        for (m, a) in msg.row_mut(v).iter_mut().zip(&acc) {
            *m = a * inv;
        }
    }
    msg
}

/// Accumulate d(loss)/dH from the message gradient dMsg.
fn tmphn_messages_backward(
    h: &Matrix,
    ts: &TmphnStructures,
    dmsg: &Matrix,
    dh: &mut Matrix,
) {
    let perm = factorial(ts.order_m.saturating_sub(1));
    let d = h.cols();
    for (v, exps) in ts.per_node.iter().enumerate() {
        if exps.is_empty() {
            continue;
        }
        let inv = 1.0 / exps.len() as f64;
        let dv = dmsg.row(v);
        if dv.iter().all(|x| *x == 0.0) {
            continue;
        }
        for exp in exps {
            let coef = exp.a_e * perm * inv;
            for red in &exp.reduced {
                for (ui, &(u, cu)) in red.iter().enumerate() {
                    // d p / d h[u,j] = c_u * h[u,j]^(c_u-1) * prod_{w != u} h[w,j]^(c_w)
                    let urow = h.row(u);
                    for j in 0..d {
                        let mut partial = cu as f64 * urow[j].powi(cu as i32 - 1);
                        for (wi, &(w, cw)) in red.iter().enumerate() {
                            if wi != ui {
                                partial *= h.get(w, j).powi(cw as i32);
                            }
                        }
                        let g = coef * dv[j] * partial;
                        dh.set(u, j, dh.get(u, j) + g);
                    }
                }
            }
        }
    }
}

pub fn forward(w: &ModelWeights, ctx: &SampleCtx) -> Result<ForwardTrace> {
    w.validate()?;
    if ctx.arch != w.arch {
        return Err(Error::data(format!(
            "context built for {} but weights are {}",
            ctx.arch, w.arch
        )));
    }
    if ctx.x.cols() != w.input_dim {
        return Err(Error::data(format!(
            "feature width {} does not match model input dim {}",
            ctx.x.cols(),
            w.input_dim
        )));
    }
    let l = w.l_steps;
    match w.arch {
        Arch::UniGcn => {
            let Some(StructuralOperators::UniGcn { c1, c2, c3_diag, c4 }) = &ctx.ops else {
                return Err(Error::data("missing unigcn operators".to_string()));
            };
            let mut hidden = vec![ctx.x.clone()];
            let mut pre = Vec::with_capacity(l);
            for i in 0..l {
                let g = c1.transpose_matmul(&hidden[i])?; // K x d
                let zed = g.matmul(w.layer(i))?;
                let s = c2.transpose_matmul(&zed)?; // N x h
                let a = scale_rows(&s.relu(), c3_diag);
                let h = c4.transpose_matmul(&a)?;
                pre.push(s);
                hidden.push(h);
            }
            let logits = mean_readout(&hidden[l], w.layer(l))?;
            Ok(ForwardTrace { hidden, logits, detail: TraceDetail::Simple { pre } })
        }
        Arch::HgnnPlus | Arch::Hgnn => {
            let Some(StructuralOperators::Hgnn { prop, .. }) = &ctx.ops else {
                return Err(Error::data("missing hgnn operators".to_string()));
            };
            let mut hidden = vec![ctx.x.clone()];
            let mut pre = Vec::with_capacity(l);
            for i in 0..l {
                let ph = prop.matmul(&hidden[i])?;
                let a = ph.matmul(w.layer(i))?;
                hidden.push(a.relu());
                pre.push(a);
            }
            let logits = mean_readout(&hidden[l], w.layer(l))?;
            Ok(ForwardTrace { hidden, logits, detail: TraceDetail::Simple { pre } })
        }
        Arch::AllDeepSets => {
            let Some(StructuralOperators::AllDeepSets { ce_t, cv_t }) = &ctx.ops else {
                return Err(Error::data("missing alldeepsets operators".to_string()));
            };
            let z = ctx.z.as_ref().ok_or_else(|| {
                Error::data("alldeepsets requires hyperedge features".to_string())
            })?;
            let mut hidden = vec![stack_rows(&ctx.x, z)?];
            let mut pre = Vec::with_capacity(l);
            for j in 0..l {
                let h_prev = &hidden[j];
                let a1 = h_prev.matmul(w.layer(4 * j))?;
                let ce_b1 = ce_t.matmul(&a1.relu())?;
                let a2 = ce_b1.matmul(w.layer(4 * j + 1))?;
                let hbar = a2.relu();
                let a3 = hbar.matmul(w.layer(4 * j + 2))?;
                let cv_b3 = cv_t.matmul(&a3.relu())?;
                let a4 = cv_b3.matmul(w.layer(4 * j + 3))?;
                hidden.push(a4.relu());
                pre.push([a1, a2, a3, a4]);
            }
            let logits = mean_readout(&hidden[l], w.layer(4 * l))?;
            Ok(ForwardTrace { hidden, logits, detail: TraceDetail::Ads { pre } })
        }
        Arch::MIgn => {
            let Some(StructuralOperators::MIgn { a_e, init_map }) = &ctx.ops else {
                return Err(Error::data("missing mign operators".to_string()));
            };
            let hbar0 = init_map.matmul(&ctx.x)?; // K x d
            let pre0 = hbar0.matmul(w.layer(0))?;
            let mut hidden = vec![pre0.relu()];
            let mut pre = Vec::with_capacity(l);
            for i in 0..l {
                let alpha = w.alphas[i];
                let mut sh = a_e.matmul(&hidden[i])?;
                sh.add_scaled(&hidden[i], 1.0 + alpha)?;
                let a = sh.matmul(w.layer(i + 1))?;
                hidden.push(a.relu());
                pre.push(a);
            }
            let rm = a_e.matmul(&hidden[l])?;
            let pre_read = rm.matmul(w.layer(l + 1))?;
            let logits = col_mean(&pre_read.relu());
            Ok(ForwardTrace {
                hidden,
                logits,
                detail: TraceDetail::Mign { hbar0, pre0, pre, pre_read },
            })
        }
        Arch::TMphn => {
            let Some(ts) = &ctx.tensor else {
                return Err(Error::data("missing tmphn tensor structures".to_string()));
            };
            let pre0 = ctx.x.matmul(w.layer(0))?;
            let mut hidden = vec![pre0.relu()];
            let mut concat = Vec::with_capacity(l);
            let mut pre = Vec::with_capacity(l);
            for i in 0..l {
                let msg = tmphn_messages(&hidden[i], ts);
                let g = hstack(&hidden[i], &msg)?;
                let p = g.matmul(w.layer(i + 1))?;
                hidden.push(row_normalize(&p.relu(), ROW_NORM_EPS));
                concat.push(g);
                pre.push(p);
            }
            let logits = mean_readout(&hidden[l], w.layer(l + 1))?;
            Ok(ForwardTrace { hidden, logits, detail: TraceDetail::Tmphn { pre0, concat, pre } })
        }
    }
}

/// dH for the mean readout: each row gets (1/n) * upstream * W^T.
fn mean_readout_backward(
    h: &Matrix,
    w_read: &Matrix,
    upstream: &Matrix,
) -> Result<(Matrix, Matrix)> {
    // gradient w.r.t. the readout weights: mean(H)^T * upstream
    let mean = col_mean(h);
    let dw = mean.transpose_matmul(upstream)?;
    let drow = upstream.matmul_transpose(w_read)?; // 1 x h
    let n = h.rows() as f64;
    let mut dh = Matrix::zeros(h.rows(), h.cols());
    for i in 0..h.rows() {
        for (d, v) in dh.row_mut(i).iter_mut().zip(drow.row(0)) {
            *d = v / n;
        }
    }
    Ok((dw, dh))
}

/// Exact reverse-mode gradients of logits . upstream with respect to every
/// weight matrix. ReLU subgradient at 0 is 0; the row-normalization
/// zero-guard branch is treated as constant zero.
pub fn backward(
    w: &ModelWeights,
    ctx: &SampleCtx,
    trace: &ForwardTrace,
    upstream: &Matrix,
) -> Result<Vec<Matrix>> {
    if upstream.rows() != 1 || upstream.cols() != w.classes {
        return Err(Error::data("upstream gradient must be 1 x classes".to_string()));
    }
    let l = w.l_steps;
    let mut grads = w.zero_like();
    match (&trace.detail, w.arch) {
        (TraceDetail::Simple { pre }, Arch::UniGcn) => {
            let Some(StructuralOperators::UniGcn { c1, c2, c3_diag, c4 }) = &ctx.ops else {
                return Err(Error::data("missing unigcn operators".to_string()));
            };
            if pre.len() != l || trace.hidden.len() != l + 1 {
                return Err(Error::data("stale trace".to_string()));
            }
            let (dw_read, mut dh) = mean_readout_backward(&trace.hidden[l], w.layer(l), upstream)?;
            grads[l] = dw_read;
            for i in (0..l).rev() {
                let s = &pre[i];
                let db = c4.matmul(&dh)?;
                let da = scale_rows(&db, c3_diag);
                let ds = Matrix::relu_backward(&da, s)?;
                let dz = c2.matmul(&ds)?; // K x h
                let g = c1.transpose_matmul(&trace.hidden[i])?;
                grads[i] = g.transpose_matmul(&dz)?;
                let dg = dz.matmul_transpose(w.layer(i))?;
                dh = c1.matmul(&dg)?;
            }
        }
        (TraceDetail::Simple { pre }, Arch::HgnnPlus | Arch::Hgnn) => {
            let Some(StructuralOperators::Hgnn { prop, .. }) = &ctx.ops else {
                return Err(Error::data("missing hgnn operators".to_string()));
            };
            if pre.len() != l || trace.hidden.len() != l + 1 {
                return Err(Error::data("stale trace".to_string()));
            }
            let (dw_read, mut dh) = mean_readout_backward(&trace.hidden[l], w.layer(l), upstream)?;
            grads[l] = dw_read;
            for i in (0..l).rev() {
                let da = Matrix::relu_backward(&dh, &pre[i])?;
                let ph = prop.matmul(&trace.hidden[i])?;
                grads[i] = ph.transpose_matmul(&da)?;
                let dph = da.matmul_transpose(w.layer(i))?;
                dh = prop.transpose_matmul(&dph)?;
            }
        }
        (TraceDetail::Ads { pre }, Arch::AllDeepSets) => {
            let Some(StructuralOperators::AllDeepSets { ce_t, cv_t }) = &ctx.ops else {
                return Err(Error::data("missing alldeepsets operators".to_string()));
            };
            if pre.len() != l || trace.hidden.len() != l + 1 {
                return Err(Error::data("stale trace".to_string()));
            }
            let (dw_read, mut dh) = mean_readout_backward(&trace.hidden[l], w.layer(4 * l), upstream)?;
            grads[4 * l] = dw_read;
            for j in (0..l).rev() {
                let [a1, a2, a3, a4] = &pre[j];
                let da4 = Matrix::relu_backward(&dh, a4)?;
                let cv_b3 = cv_t.matmul(&a3.relu())?;
                grads[4 * j + 3] = cv_b3.transpose_matmul(&da4)?;
                let dcv = da4.matmul_transpose(w.layer(4 * j + 3))?;
                let db3 = cv_t.transpose_matmul(&dcv)?;
                let da3 = Matrix::relu_backward(&db3, a3)?;
                let hbar = a2.relu();
                grads[4 * j + 2] = hbar.transpose_matmul(&da3)?;
                let dhbar = da3.matmul_transpose(w.layer(4 * j + 2))?;
                let da2 = Matrix::relu_backward(&dhbar, a2)?;
                let ce_b1 = ce_t.matmul(&a1.relu())?;
                grads[4 * j + 1] = ce_b1.transpose_matmul(&da2)?;
                let dce = da2.matmul_transpose(w.layer(4 * j + 1))?;
                let db1 = ce_t.transpose_matmul(&dce)?;
                let da1 = Matrix::relu_backward(&db1, a1)?;
                grads[4 * j] = trace.hidden[j].transpose_matmul(&da1)?;
                dh = da1.matmul_transpose(w.layer(4 * j))?;
            }
        }
        (TraceDetail::Mign { hbar0, pre0, pre, pre_read }, Arch::MIgn) => {
            let Some(StructuralOperators::MIgn { a_e, .. }) = &ctx.ops else {
                return Err(Error::data("missing mign operators".to_string()));
            };
            if pre.len() != l || trace.hidden.len() != l + 1 {
                return Err(Error::data("stale trace".to_string()));
            }
            // readout: logits = col_mean(relu(A_e H^(L) W))
            let k = pre_read.rows() as f64;
            let mut dt = Matrix::zeros(pre_read.rows(), pre_read.cols());
            for i in 0..dt.rows() {
                for (d, u) in dt.row_mut(i).iter_mut().zip(upstream.row(0)) {
                    *d = u / k;
                }
            }
            let dar = Matrix::relu_backward(&dt, pre_read)?;
            let rm = a_e.matmul(&trace.hidden[l])?;
            grads[l + 1] = rm.transpose_matmul(&dar)?;
            let drm = dar.matmul_transpose(w.layer(l + 1))?;
            let mut dh = a_e.transpose_matmul(&drm)?;
            for i in (0..l).rev() {
                let alpha = w.alphas[i];
                let da = Matrix::relu_backward(&dh, &pre[i])?;
                let mut sh = a_e.matmul(&trace.hidden[i])?;
                sh.add_scaled(&trace.hidden[i], 1.0 + alpha)?;
                grads[i + 1] = sh.transpose_matmul(&da)?;
                let dsh = da.matmul_transpose(w.layer(i + 1))?;
                let mut next = a_e.transpose_matmul(&dsh)?;
                next.add_scaled(&dsh, 1.0 + alpha)?;
                dh = next;
            }
            let da0 = Matrix::relu_backward(&dh, pre0)?;
            grads[0] = hbar0.transpose_matmul(&da0)?;
        }
        (TraceDetail::Tmphn { pre0, concat, pre }, Arch::TMphn) => {
            let Some(ts) = &ctx.tensor else {
                return Err(Error::data("missing tmphn tensor structures".to_string()));
            };
            if pre.len() != l || trace.hidden.len() != l + 1 {
                return Err(Error::data("stale trace".to_string()));
            }
            let (dw_read, mut dh) =
                mean_readout_backward(&trace.hidden[l], w.layer(l + 1), upstream)?;
            grads[l + 1] = dw_read;
            for i in (0..l).rev() {
                // undo row normalization: y = a/|a|, dy/da = (I - y y^T)/|a|
                let abar = pre[i].relu();
                let hnorm = &trace.hidden[i + 1];
                let mut dabar = Matrix::zeros(abar.rows(), abar.cols());
                for r in 0..abar.rows() {
                    let norm = vec_norm(abar.row(r));
                    if norm <= ROW_NORM_EPS {
                        continue; // zero-guard branch is constant zero
                    }
                    let y = hnorm.row(r);
                    let g = dh.row(r);
                    let dot: f64 = y.iter().zip(g).map(|(a, b)| a * b).sum();
                    for (out, (yj, gj)) in dabar.row_mut(r).iter_mut().zip(y.iter().zip(g)) {
                        *out = (gj - yj * dot) / norm;
                    }
                }
                let dp = Matrix::relu_backward(&dabar, &pre[i])?;
                grads[i + 1] = concat[i].transpose_matmul(&dp)?;
                let dg = dp.matmul_transpose(w.layer(i + 1))?;
                // split concat gradient: first d columns feed H^(i) directly,
                // last d flow through the message computation
                let d = trace.hidden[i].cols();
                let mut dh_prev = Matrix::zeros(trace.hidden[i].rows(), d);
                let mut dmsg = Matrix::zeros(trace.hidden[i].rows(), d);
                for r in 0..dg.rows() {
                    let row = dg.row(r);
                    dh_prev.row_mut(r).copy_from_slice(&row[..d]);
                    dmsg.row_mut(r).copy_from_slice(&row[d..]);
                }
                tmphn_messages_backward(&trace.hidden[i], ts, &dmsg, &mut dh_prev);
                dh = dh_prev;
            }
            let da0 = Matrix::relu_backward(&dh, pre0)?;
            grads[0] = ctx.x.transpose_matmul(&da0)?;
        }
        _ => return Err(Error::data("trace does not match architecture".to_string())),
    }
    Ok(grads)
}

// ---------------------------------------------------------------------------
// weights file format
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct DimsDoc {
    input: usize,
    hidden: usize,
    classes: usize,
}

#[derive(Serialize, Deserialize)]
struct LayerDoc {
    name: String,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct WeightsDoc {
    arch: Arch,
    l: usize,
    dims: DimsDoc,
    alpha: Vec<f64>,
    order_m: usize,
    layers: Vec<LayerDoc>,
}

impl ModelWeights {
    pub fn to_text(&self) -> Result<String> {
        let doc = WeightsDoc {
            arch: self.arch,
            l: self.l_steps,
            dims: DimsDoc { input: self.input_dim, hidden: self.hidden, classes: self.classes },
            alpha: self.alphas.clone(),
            order_m: self.order_m,
            layers: self
                .layers
                .iter()
                .map(|l| LayerDoc {
                    name: l.name.clone(),
                    rows: l.mat.rows(),
                    cols: l.mat.cols(),
                    data: l.mat.data().to_vec(),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&doc)
            .map_err(|e| Error::data(format!("weights serialization failed: {e}")))
    }

    pub fn from_text(text: &str) -> Result<ModelWeights> {
        let doc: WeightsDoc = serde_json::from_str(text)
            .map_err(|e| Error::data(format!("weights file parse error: {e}")))?;
        let layers = doc
            .layers
            .into_iter()
            .map(|l| Ok(Layer { name: l.name, mat: Matrix::new(l.rows, l.cols, l.data)? }))
            .collect::<Result<Vec<_>>>()?;
        let w = ModelWeights {
            arch: doc.arch,
            l_steps: doc.l,
            input_dim: doc.dims.input,
            hidden: doc.dims.hidden,
            classes: doc.dims.classes,
            alphas: doc.alpha,
            order_m: doc.order_m,
            layers,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_text()?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<ModelWeights> {
        let text = std::fs::read_to_string(path)?;
        ModelWeights::from_text(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hypergraph::Hypergraph;

    #[test]
    fn predict_examples() {
        let l = Matrix::from_rows(&[vec![0.1, 0.9, 0.3]]).unwrap();
        assert_eq!(predict(&l), 1);
        let tie = Matrix::from_rows(&[vec![0.5, 0.5]]).unwrap();
        assert_eq!(predict(&tie), 0);
        let neg = Matrix::from_rows(&[vec![-1.0, -2.0]]).unwrap();
        assert_eq!(predict(&neg), 0);
    }

    #[test]
    fn cni_examples() {
        let h = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 0.0], vec![1.0, 1.0]]).unwrap();
        assert_eq!(cni(&h, &[0]).unwrap(), vec![1.0, 2.0]);
        assert_eq!(cni(&h, &[0, 1]).unwrap(), vec![3.0, 0.0]);
        // a row of ones is the multiplicative identity
        assert_eq!(cni(&h, &[0, 2]).unwrap(), cni(&h, &[0]).unwrap());
        assert!(cni(&h, &[]).is_err());
    }

    #[test]
    fn unigcn_single_node_identity_pipeline() {
        let hg = Hypergraph::new(1, vec![vec![0]]).unwrap();
        let x = Matrix::from_rows(&[vec![1.0]]).unwrap();
        let feats = FeatureSet::new(x, None, 1.0).unwrap();
        let ctx = SampleCtx::prepare(Arch::UniGcn, &hg, &feats, 0).unwrap();
        let w = ModelWeights {
            arch: Arch::UniGcn,
            l_steps: 1,
            input_dim: 1,
            hidden: 1,
            classes: 1,
            alphas: vec![],
            order_m: 0,
            layers: vec![
                Layer { name: "w1".into(), mat: Matrix::identity(1) },
                Layer { name: "w2".into(), mat: Matrix::identity(1) },
            ],
        };
        let trace = forward(&w, &ctx).unwrap();
        assert!((trace.logits.get(0, 0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn zero_features_give_zero_logits() {
        let hg = Hypergraph::new(4, vec![vec![0, 1], vec![1, 2, 3], vec![0, 3]]).unwrap();
        for arch in Arch::ALL {
            let x = Matrix::zeros(4, 3);
            let z = Matrix::zeros(3, 3);
            let feats = FeatureSet::new(x, Some(z), 1.0).unwrap();
            let ctx = SampleCtx::prepare(arch, &hg, &feats, 3).unwrap();
            let w = ModelWeights::init_glorot(arch, 2, 3, 4, 2, 3, 7).unwrap();
            let trace = forward(&w, &ctx).unwrap();
            for v in trace.logits.row(0) {
                assert_eq!(*v, 0.0, "{arch}: nonzero logit on zero input");
            }
        }
    }

    #[test]
    fn mign_single_edge_no_neighbors() {
        // K=1 so A_e is empty; with alpha=0 the step is plain relu(H W)
        let hg = Hypergraph::new(3, vec![vec![0, 1, 2]]).unwrap();
        let x = Matrix::from_rows(&[vec![0.5, 0.1], vec![0.2, 0.3], vec![0.1, 0.1]]).unwrap();
        let feats = FeatureSet::new(x, None, 1.0).unwrap();
        let ctx = SampleCtx::prepare(Arch::MIgn, &hg, &feats, 0).unwrap();
        let mut w = ModelWeights::init_glorot(Arch::MIgn, 1, 2, 3, 2, 0, 11).unwrap();
        w.alphas[0] = 0.0;
        let trace = forward(&w, &ctx).unwrap();
        let expect = trace.hidden[0].matmul(w.layer(1)).unwrap().relu();
        for (a, b) in trace.hidden[1].data().iter().zip(expect.data()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let hg = Hypergraph::new(5, vec![vec![0, 1, 2], vec![2, 3], vec![3, 4], vec![0, 4]]).unwrap();
        for arch in Arch::ALL {
            let w = ModelWeights::init_glorot(arch, 2, 3, 4, 3, 3, 5).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(42);
            let x = Matrix::new(5, 3, (0..15).map(|_| rng.gen_range(-0.4..0.4)).collect()).unwrap();
            let z = Matrix::new(4, 3, (0..12).map(|_| rng.gen_range(-0.4..0.4)).collect()).unwrap();
            let feats = FeatureSet::new(x, Some(z), 1.0).unwrap();
            let ctx = SampleCtx::prepare(arch, &hg, &feats, 3).unwrap();
            let trace = forward(&w, &ctx).unwrap();
            let grads = backward(&w, &ctx, &trace, &Matrix::zeros(1, 3)).unwrap();
            for g in grads {
                assert!(g.data().iter().all(|v| *v == 0.0));
            }
        }
    }

    #[test]
    fn tmphn_hidden_rows_unit_or_zero() {
        let hg = Hypergraph::new(6, vec![vec![0, 1, 2], vec![2, 3], vec![3, 4, 5], vec![0, 5]]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Matrix::new(6, 4, (0..24).map(|_| rng.gen_range(-0.4..0.4)).collect()).unwrap();
        let feats = FeatureSet::new(x, None, 1.0).unwrap();
        let ctx = SampleCtx::prepare(Arch::TMphn, &hg, &feats, 3).unwrap();
        let w = ModelWeights::init_glorot(Arch::TMphn, 3, 4, 5, 2, 3, 9).unwrap();
        let trace = forward(&w, &ctx).unwrap();
        for h in &trace.hidden[1..] {
            for i in 0..h.rows() {
                let n = vec_norm(h.row(i));
                assert!(n == 0.0 || (n - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn weights_roundtrip() {
        let w = ModelWeights::init_glorot(Arch::MIgn, 2, 3, 4, 3, 0, 123).unwrap();
        let text = w.to_text().unwrap();
        let back = ModelWeights::from_text(&text).unwrap();
        assert_eq!(w.l_steps, back.l_steps);
        for (a, b) in w.layers.iter().zip(&back.layers) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.mat, b.mat);
        }
        assert_eq!(w.alphas, back.alphas);
    }
}
