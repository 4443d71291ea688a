//! Study orchestration: for each dataset x architecture x L, train (or draw
//! random initializations), evaluate the empirical margin loss, certify, and
//! correlate empirical loss against log10 bound per (arch, L).
//!
//! Grid cells are independent and may run in parallel; rows are emitted in
//! a fixed (dataset, arch, L) order so re-runs are byte-identical. A failing
//! cell is recorded in its row and the grid continues.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use crate::bounds::{certify, weight_terms, BoundInputs, BoundMode, Provenance};
use crate::error::{Error, Result};
use crate::hypergraph::Arch;
use crate::models::{ModelWeights, SampleCtx};
use crate::parallel::map_range;
use crate::stats::{mc_estimate, pearson, savitzky_golay, MCConfig};
use crate::synth::{load, load_manifest, Dataset};
use crate::train::{
    dataset_margin_loss, log_to_csv, margin_loss, split_indices, train_model, Optimizer,
    TrainConfig,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossMode {
    #[serde(rename = "montecarlo")]
    MonteCarlo,
    #[serde(rename = "average")]
    Average,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WeightsMode {
    #[serde(rename = "trained")]
    Trained,
    #[serde(rename = "random")]
    Random,
}

fn default_lr() -> f64 {
    0.01
}
fn default_epochs() -> usize {
    100
}
fn default_batch() -> usize {
    20
}
fn default_l2() -> f64 {
    1e-4
}
fn default_gamma() -> f64 {
    0.25
}
fn default_hidden() -> usize {
    64
}
fn default_delta() -> f64 {
    0.1
}
fn default_split() -> (f64, f64, f64) {
    (0.5, 0.3, 0.2)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainSettings {
    /// per-arch default when absent: sgd for alldeepsets, adam otherwise
    #[serde(default)]
    pub optimizer: Option<String>,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch: usize,
    #[serde(default = "default_l2")]
    pub l2: f64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    #[serde(default = "default_split")]
    pub split: (f64, f64, f64),
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            optimizer: None,
            lr: default_lr(),
            epochs: default_epochs(),
            batch: default_batch(),
            l2: default_l2(),
            gamma: default_gamma(),
            hidden: default_hidden(),
            split: default_split(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudyConfig {
    pub datasets: Vec<String>,
    pub architectures: Vec<Arch>,
    pub l_values: Vec<usize>,
    #[serde(default)]
    pub train: TrainSettings,
    pub loss_mode: LossMode,
    pub bound_mode: BoundMode,
    #[serde(default = "default_weights_mode")]
    pub weights_mode: WeightsMode,
    pub out_dir: String,
    pub seed: u64,
    #[serde(default = "default_delta")]
    pub delta: f64,
}

fn default_weights_mode() -> WeightsMode {
    WeightsMode::Trained
}

impl StudyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.datasets.is_empty() || self.architectures.is_empty() || self.l_values.is_empty() {
            return Err(Error::data("study grid must be non-empty".to_string()));
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<StudyConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::data(format!("cannot read study config {}: {e}", path.display())))?;
        let cfg: StudyConfig = serde_json::from_str(&text)
            .map_err(|e| Error::data(format!("study config parse error: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone)]
pub struct StudyRow {
    pub dataset: String,
    pub arch: Arch,
    pub l: usize,
    pub max_k: usize,
    pub max_m: usize,
    pub max_r: usize,
    pub max_d: usize,
    pub seed: u64,
    pub empirical: Option<f64>,
    pub bound: Option<f64>,
    pub log10_bound: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct SummaryRow {
    pub arch: Arch,
    pub l: usize,
    pub r: Option<f64>,
    pub n: usize,
}

pub fn study_rows_to_csv(rows: &[StudyRow]) -> String {
    let mut out =
        String::from("dataset,arch,l,max_k,max_m,max_r,max_d,seed,empirical,bound,log10_bound,error\n");
    for r in rows {
        let opt = |v: &Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.dataset,
            r.arch,
            r.l,
            r.max_k,
            r.max_m,
            r.max_r,
            r.max_d,
            r.seed,
            opt(&r.empirical),
            opt(&r.bound),
            opt(&r.log10_bound),
            r.error.clone().unwrap_or_default().replace(',', ";")
        ));
    }
    out
}

pub fn summary_to_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::from("arch,l,r,n\n");
    for s in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            s.arch,
            s.l,
            s.r.map(|x| x.to_string()).unwrap_or_default(),
            s.n
        ));
    }
    out
}

struct CellOutput {
    row: StudyRow,
    cert_text: Option<String>,
    log_text: Option<String>,
}

fn dataset_stem(path: &str) -> String {
    Path::new(path)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.to_string())
}

#[allow(clippy::too_many_arguments)]
fn run_cell(
    config: &StudyConfig,
    dataset_path: &str,
    ds: &Dataset,
    manifest_hash: &str,
    pooled: &crate::synth::PooledStats,
    arch: Arch,
    l: usize,
) -> Result<(f64, f64, f64, Option<String>, Option<String>)> {
    let ts = &config.train;
    let order_m = pooled.max_m; // tensor order must cover the largest edge
    let optimizer = match &ts.optimizer {
        Some(s) => Optimizer::parse(s)?,
        None => Optimizer::default_for(arch),
    };
    let tc = TrainConfig {
        optimizer,
        lr: ts.lr,
        epochs: ts.epochs,
        batch_size: ts.batch,
        l2: ts.l2,
        gamma: ts.gamma,
        seed: config.seed,
        split: ts.split,
    };
    let (train_idx, test_idx, valid_idx) = split_indices(ds.samples.len(), tc.split, config.seed);
    let prep = |idx: &[usize]| -> Result<Vec<(SampleCtx, usize)>> {
        idx.iter()
            .map(|&i| {
                let s = &ds.samples[i];
                Ok((SampleCtx::prepare(arch, &s.hg, &s.feats, order_m)?, s.label))
            })
            .collect()
    };
    let train_set = prep(&train_idx)?;
    let valid_set = prep(&valid_idx)?;
    let m = train_set.len();
    // empirical margin loss is measured on the held-out test split (what the
    // bound is meant to predict); tiny datasets without one fall back to train
    let eval_set = if test_idx.is_empty() { prep(&train_idx)? } else { prep(&test_idx)? };

    let eval_empirical = |weights: &ModelWeights, seed: u64| -> Result<f64> {
        match config.loss_mode {
            LossMode::Average => dataset_margin_loss(weights, &eval_set, tc.gamma),
            LossMode::MonteCarlo => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xD460);
                let mc = MCConfig { seed, max_samples: 200_000, ..Default::default() };
                let est = mc_estimate(
                    || {
                        let (ctx, label) = &eval_set[rng.gen_range(0..eval_set.len())];
                        let trace = crate::models::forward(weights, ctx).expect("forward");
                        margin_loss(&trace.logits, *label, tc.gamma).expect("margin")
                    },
                    &mc,
                )?;
                Ok(est.estimate.min(1.0))
            }
        }
    };

    let mk_cert = |weights: &ModelWeights, empirical: f64| -> Result<crate::bounds::BoundCertificate> {
        let terms = weight_terms(weights)?;
        let inputs = BoundInputs {
            arch,
            l,
            gamma: tc.gamma,
            delta: config.delta,
            m,
            b: ds.b_cap,
            h: ts.hidden,
            d_max: pooled.max_d as f64,
            m_max: pooled.max_m as f64,
            r_max: pooled.max_r as f64,
            alphas: weights.alphas.clone(),
            t_max: 1.0,
            terms,
        };
        let mut cert = certify(&inputs, empirical, config.bound_mode)?;
        cert.provenance = Some(Provenance {
            weights_path: format!("{}_{}_L{}.weights.json", dataset_stem(dataset_path), arch, l),
            dataset_manifest_hash: manifest_hash.to_string(),
            mode: config.bound_mode.as_str().to_string(),
        });
        Ok(cert)
    };

    match config.weights_mode {
        WeightsMode::Trained => {
            let (weights, log) = train_model(
                arch,
                &train_set,
                &valid_set,
                ds.d,
                ts.hidden,
                ds.classes,
                order_m,
                l,
                &tc,
            )?;
            let empirical = eval_empirical(&weights, config.seed)?;
            let cert = mk_cert(&weights, empirical)?;
            Ok((
                empirical,
                cert.total_bound,
                cert.log10_complexity,
                Some(cert.to_text()?),
                Some(log_to_csv(&log)),
            ))
        }
        WeightsMode::Random => {
            // average over five seeded initializations
            let mut emp_sum = 0.0;
            let mut comp_sum = 0.0;
            let mut log10_max = f64::NEG_INFINITY;
            let mut last_cert = None;
            for run in 0..5u64 {
                let weights = ModelWeights::init_glorot(
                    arch,
                    l,
                    ds.d,
                    ts.hidden,
                    ds.classes,
                    order_m,
                    config.seed.wrapping_add(run),
                )?;
                let empirical = eval_empirical(&weights, config.seed.wrapping_add(run))?;
                let cert = mk_cert(&weights, empirical)?;
                emp_sum += empirical;
                comp_sum += cert.complexity;
                log10_max = log10_max.max(cert.log10_complexity);
                last_cert = Some(cert);
            }
            let empirical = emp_sum / 5.0;
            let complexity = comp_sum / 5.0;
            let log10 = if complexity.is_finite() { complexity.log10() } else { log10_max };
            let cert_text = last_cert.map(|c| c.to_text()).transpose()?;
            Ok((empirical, empirical + complexity, log10, cert_text, None))
        }
    }
}

/// Execute the full grid; writes study.csv, summary.csv, and per-cell
/// certificate/log files under `config.out_dir`.
pub fn run_study(config: &StudyConfig) -> Result<(Vec<StudyRow>, Vec<SummaryRow>)> {
    config.validate()?;
    let out_dir = PathBuf::from(&config.out_dir);
    std::fs::create_dir_all(&out_dir)?;

    // load every dataset once, up front
    let mut datasets = Vec::new();
    for path in &config.datasets {
        let ds = load(Path::new(path))?;
        let pooled = crate::synth::pooled_stats(&ds);
        let hash = load_manifest(Path::new(path))
            .map(|m| m.content_hash)
            .unwrap_or_else(|_| "unknown".to_string());
        datasets.push((path.clone(), ds, pooled, hash));
    }

    let n_arch = config.architectures.len();
    let n_l = config.l_values.len();
    let total = datasets.len() * n_arch * n_l;
    let cells = map_range(total, |idx| {
        let di = idx / (n_arch * n_l);
        let ai = (idx / n_l) % n_arch;
        let li = idx % n_l;
        let (path, ds, pooled, hash) = &datasets[di];
        let arch = config.architectures[ai];
        let l = config.l_values[li];
        let base = StudyRow {
            dataset: dataset_stem(path),
            arch,
            l,
            max_k: pooled.max_k,
            max_m: pooled.max_m,
            max_r: pooled.max_r,
            max_d: pooled.max_d,
            seed: config.seed,
            empirical: None,
            bound: None,
            log10_bound: None,
            error: None,
        };
        match run_cell(config, path, ds, hash, pooled, arch, l) {
            Ok((emp, bound, log10c, cert, log)) => CellOutput {
                row: StudyRow {
                    empirical: Some(emp),
                    bound: Some(bound),
                    log10_bound: Some(log10c),
                    ..base
                },
                cert_text: cert,
                log_text: log,
            },
            Err(e) => CellOutput {
                row: StudyRow { error: Some(e.to_string()), ..base },
                cert_text: None,
                log_text: None,
            },
        }
    });

    let mut rows = Vec::with_capacity(total);
    for cell in cells {
        let stem = format!("{}_{}_L{}", cell.row.dataset, cell.row.arch, cell.row.l);
        if let Some(cert) = &cell.cert_text {
            std::fs::write(out_dir.join(format!("{stem}.cert.json")), cert)?;
        }
        if let Some(log) = &cell.log_text {
            std::fs::write(out_dir.join(format!("{stem}.trainlog.csv")), log)?;
        }
        rows.push(cell.row);
    }

    // per-(arch, L) Pearson across datasets
    let mut summary = Vec::new();
    for &arch in &config.architectures {
        for &l in &config.l_values {
            let pts: Vec<(f64, f64)> = rows
                .iter()
                .filter(|r| r.arch == arch && r.l == l && r.error.is_none())
                .filter_map(|r| Some((r.empirical?, r.log10_bound?)))
                .collect();
            let r = if pts.len() >= 2 {
                let xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
                let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
                pearson(&xs, &ys).ok()
            } else {
                None
            };
            summary.push(SummaryRow { arch, l, r, n: pts.len() });
        }
    }

    std::fs::write(out_dir.join("study.csv"), study_rows_to_csv(&rows))?;
    std::fs::write(out_dir.join("summary.csv"), summary_to_csv(&summary))?;
    Ok((rows, summary))
}

/// Smooth the empirical and log10-bound series of a study.csv per (arch, L)
/// group; emits a CSV with raw and smoothed columns.
pub fn smooth_study_csv(study_csv: &str, window: usize, order: usize) -> Result<String> {
    let mut lines = study_csv.lines();
    let header = lines.next().ok_or_else(|| Error::data("empty study csv".to_string()))?;
    let cols: Vec<&str> = header.split(',').collect();
    let find = |name: &str| -> Result<usize> {
        cols.iter()
            .position(|c| *c == name)
            .ok_or_else(|| Error::data(format!("study csv missing column {name}")))
    };
    let (ci_ds, ci_arch, ci_l, ci_emp, ci_log) = (
        find("dataset")?,
        find("arch")?,
        find("l")?,
        find("empirical")?,
        find("log10_bound")?,
    );
    struct Rec {
        dataset: String,
        arch: String,
        l: String,
        emp: f64,
        log10: f64,
    }
    let mut groups: Vec<((String, String), Vec<Rec>)> = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() < cols.len() {
            return Err(Error::data(format!("study csv line {} malformed", lineno + 2)));
        }
        if f[ci_emp].is_empty() || f[ci_log].is_empty() {
            continue; // failed cell
        }
        let emp: f64 = f[ci_emp]
            .parse()
            .map_err(|_| Error::data(format!("bad empirical value on line {}", lineno + 2)))?;
        let log10: f64 = f[ci_log]
            .parse()
            .map_err(|_| Error::data(format!("bad log10_bound value on line {}", lineno + 2)))?;
        let key = (f[ci_arch].to_string(), f[ci_l].to_string());
        let rec = Rec {
            dataset: f[ci_ds].to_string(),
            arch: f[ci_arch].to_string(),
            l: f[ci_l].to_string(),
            emp,
            log10,
        };
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, v)) => v.push(rec),
            None => groups.push((key, vec![rec])),
        }
    }
    let mut out =
        String::from("dataset,arch,l,empirical,empirical_smooth,log10_bound,log10_bound_smooth\n");
    for (_, recs) in &groups {
        let emp: Vec<f64> = recs.iter().map(|r| r.emp).collect();
        let log10: Vec<f64> = recs.iter().map(|r| r.log10).collect();
        let emp_s = savitzky_golay(&emp, window, order)?;
        let log_s = savitzky_golay(&log10, window, order)?;
        for (i, r) in recs.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.dataset, r.arch, r.l, r.emp, emp_s[i], r.log10, log_s[i]
            ));
        }
    }
    Ok(out)
}
