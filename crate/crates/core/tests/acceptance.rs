//! End-to-end acceptance checks. Each test prints a single PASS line when its
//! criterion holds; a failed assertion keeps the line from printing.

use std::path::Path;
use std::process::Command;

use hypercert::bounds::{certify, weight_terms, BoundInputs, BoundMode};
use hypercert::hypergraph::Arch;
use hypercert::linalg::{spectral_norm_default, vec_norm, Matrix};
use hypercert::models::{backward, forward, ModelWeights, SampleCtx};
use hypercert::perturb::{run_suite, PerturbTrialConfig};
use hypercert::stats::{mc_estimate, savitzky_golay, MCConfig};
use hypercert::synth::{generate, serialize, BaseModel, GenConfig};
use hypercert::train::{cross_entropy, train_model, Optimizer, TrainConfig};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn gen_instances(
    arch: Arch,
    pool: usize,
    n: usize,
    m_cap: usize,
    d: usize,
    classes: usize,
    seed: u64,
) -> Vec<(SampleCtx, usize)> {
    let cfg = GenConfig {
        base: BaseModel::Er { p: 0.35 },
        n,
        m_cap,
        r_cap: 8,
        pool,
        classes,
        d,
        b_cap: 1.0,
        seed,
    };
    let ds = generate(&cfg).expect("dataset generation");
    ds.samples
        .iter()
        .map(|s| {
            (
                SampleCtx::prepare(arch, &s.hg, &s.feats, 4).expect("ctx"),
                s.label,
            )
        })
        .collect()
}

#[test]
fn acceptance_01_perturbation_lemmas() {
    let start = std::time::Instant::now();
    for arch in Arch::ALL {
        let m_cap = if arch == Arch::TMphn { 4 } else { 6 };
        let samples = gen_instances(arch, 20, 30, m_cap, 5, 3, 101);
        let instances: Vec<SampleCtx> = samples.into_iter().map(|(c, _)| c).collect();
        for l in [2usize, 3] {
            let weights =
                ModelWeights::init_glorot(arch, l, 5, 8, 3, 4, 900 + l as u64).expect("weights");
            for rho in [0.25, 1.0] {
                let cfg = PerturbTrialConfig { arch, trials: 5, rho, seed: 42 };
                let report = run_suite(&cfg, &weights, &instances).expect("suite");
                assert_eq!(report.rows.len(), 100);
                assert_eq!(
                    report.satisfaction_rate, 1.0,
                    "{arch} L={l} rho={rho}: rate {} max tightness {}",
                    report.satisfaction_rate, report.max_tightness
                );
            }
        }
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 120, "took {elapsed:?}");
    println!("ACCEPTANCE 1: PASS - perturbation lemmas hold in 100% of trials ({elapsed:?})");
}

fn max_row_norm(m: &Matrix) -> f64 {
    (0..m.rows()).map(|i| vec_norm(m.row(i))).fold(0.0, f64::max)
}

#[test]
fn acceptance_02_max_representation_bounds() {
    let b = 1.0;
    let l_steps = 2usize;
    for arch in [Arch::UniGcn, Arch::AllDeepSets, Arch::MIgn] {
        let samples = gen_instances(arch, 50, 30, 5, 5, 3, 202);
        let w = ModelWeights::init_glorot(arch, l_steps, 5, 8, 3, 0, 77).expect("weights");
        let norms: Vec<f64> = w
            .layers
            .iter()
            .map(|layer| spectral_norm_default(&layer.mat).unwrap())
            .collect();
        for (ctx, _) in &samples {
            let trace = forward(&w, ctx).expect("forward");
            let (d, r, m) = (
                ctx.stats.d_max as f64,
                ctx.stats.r_max as f64,
                ctx.stats.m_max as f64,
            );
            match arch {
                Arch::UniGcn => {
                    // Phi_l <= B (DRM)^l prod_{i<=l} ||W_i||
                    let mut prod = 1.0;
                    for l in 1..=l_steps {
                        prod *= norms[l - 1];
                        let phi = max_row_norm(&trace.hidden[l]);
                        let bound = b * (d * r * m).powi(l as i32) * prod;
                        assert!(phi <= bound * (1.0 + 1e-9), "unigcn phi_{l}: {phi} > {bound}");
                    }
                }
                Arch::AllDeepSets => {
                    // Phi_l <= B ((M+1)(R+1))^l prod zeta
                    let mut prod = 1.0;
                    for l in 1..=l_steps {
                        for i in 0..4 {
                            prod *= norms[4 * (l - 1) + i];
                        }
                        let phi = max_row_norm(&trace.hidden[l]);
                        let bound = b * ((m + 1.0) * (r + 1.0)).powi(l as i32) * prod;
                        assert!(phi <= bound * (1.0 + 1e-9), "ads phi_{l}: {phi} > {bound}");
                    }
                }
                Arch::MIgn => {
                    // Phi_l <= M B (MD)^l E^(1,l) prod_{i<=l} ||W_i||
                    let mut prod = norms[0];
                    let mut e_prod = 1.0;
                    for (t, h) in trace.hidden.iter().enumerate() {
                        if t > 0 {
                            prod *= norms[t];
                            e_prod *= 1.0 + w.alphas[t - 1];
                        }
                        let phi = max_row_norm(h);
                        let bound = m * b * (m * d).powi(t as i32) * e_prod * prod;
                        assert!(phi <= bound * (1.0 + 1e-9), "mign phi_{t}: {phi} > {bound}");
                    }
                }
                _ => unreachable!(),
            }
        }
    }
    println!("ACCEPTANCE 2: PASS - max-representation bounds hold on 50 instances per architecture");
}

#[test]
fn acceptance_03_homogeneity_invariance() {
    for arch in [Arch::UniGcn, Arch::AllDeepSets, Arch::MIgn, Arch::HgnnPlus, Arch::Hgnn] {
        let samples = gen_instances(arch, 20, 20, 4, 5, 3, 303);
        let w = ModelWeights::init_glorot(arch, 2, 5, 8, 3, 0, 13).expect("weights");
        // beta-normalization: every layer rescaled to the geometric-mean
        // spectral norm; the layer-norm product (and the logits, by positive
        // homogeneity of ReLU) is unchanged
        let norms: Vec<f64> = w
            .layers
            .iter()
            .map(|layer| spectral_norm_default(&layer.mat).unwrap())
            .collect();
        let beta = (norms.iter().map(|s| s.ln()).sum::<f64>() / norms.len() as f64).exp();
        let mut wn = w.clone();
        for (layer, s) in wn.layers.iter_mut().zip(&norms) {
            layer.mat = layer.mat.scale(beta / s);
        }
        for (ctx, _) in &samples {
            let base = forward(&w, ctx).unwrap();
            let normed = forward(&wn, ctx).unwrap();
            for (a, b) in base.logits.row(0).iter().zip(normed.logits.row(0)) {
                let scale = a.abs().max(b.abs()).max(1e-12);
                assert!((a - b).abs() / scale < 1e-8, "{arch}: {a} vs {b}");
            }
        }
    }
    println!("ACCEPTANCE 3: PASS - beta-normalized weights reproduce logits within 1e-8");
}

#[test]
fn acceptance_04_gradients_match_finite_differences() {
    let eps = 1e-5;
    for arch in Arch::ALL {
        let samples = gen_instances(arch, 1, 5, 3, 3, 2, 404);
        let (ctx, label) = &samples[0];
        let w = ModelWeights::init_glorot(arch, 2, 3, 4, 2, 4, 21).expect("weights");
        let trace = forward(&w, ctx).unwrap();
        let (_, dlogits) = cross_entropy(&trace.logits, *label).unwrap();
        let grads = backward(&w, ctx, &trace, &dlogits).unwrap();
        let loss_at = |w: &ModelWeights| -> f64 {
            let t = forward(w, ctx).unwrap();
            cross_entropy(&t.logits, *label).unwrap().0
        };
        for (li, g) in grads.iter().enumerate() {
            for r in 0..g.rows() {
                for c in 0..g.cols() {
                    let mut wp = w.clone();
                    wp.layers[li].mat.set(r, c, w.layers[li].mat.get(r, c) + eps);
                    let lp = loss_at(&wp);
                    let mut wm = w.clone();
                    wm.layers[li].mat.set(r, c, w.layers[li].mat.get(r, c) - eps);
                    let lm = loss_at(&wm);
                    let fd = (lp - lm) / (2.0 * eps);
                    let analytic = g.get(r, c);
                    let scale = analytic.abs().max(fd.abs()).max(1.0);
                    assert!(
                        (fd - analytic).abs() / scale < 1e-4,
                        "{arch} layer {li} ({r},{c}): analytic {analytic} fd {fd}"
                    );
                }
            }
        }
    }
    println!("ACCEPTANCE 4: PASS - analytic gradients match central differences within 1e-4");
}

/// Largest eigenvalue of a symmetric matrix by cyclic Jacobi rotations.
fn jacobi_max_eigenvalue(a: &Matrix) -> f64 {
    let n = a.rows();
    let mut m: Vec<Vec<f64>> = (0..n).map(|i| a.row(i).to_vec()).collect();
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += m[i][j] * m[i][j];
            }
        }
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                if m[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[k][p], m[k][q]);
                    m[k][p] = c * mkp - s * mkq;
                    m[k][q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[p][k], m[q][k]);
                    m[p][k] = c * mpk - s * mqk;
                    m[q][k] = s * mpk + c * mqk;
                }
            }
        }
    }
    (0..n).map(|i| m[i][i]).fold(f64::NEG_INFINITY, f64::max)
}

#[test]
fn acceptance_05_spectral_norm_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    for _ in 0..200 {
        let r = rng.gen_range(1..=6);
        let c = rng.gen_range(1..=6);
        let data: Vec<f64> = (0..r * c).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let a = Matrix::new(r, c, data).unwrap();
        let ours = spectral_norm_default(&a).unwrap();
        let ata = a.transpose_matmul(&a).unwrap();
        let oracle = jacobi_max_eigenvalue(&ata).max(0.0).sqrt();
        assert!(
            (ours - oracle).abs() <= 1e-8 * oracle.max(1.0),
            "{r}x{c}: power {ours} vs jacobi {oracle}"
        );
    }
    println!("ACCEPTANCE 5: PASS - spectral norm matches the Jacobi eigen oracle on 200 matrices");
}

#[test]
fn acceptance_06_bound_calculator_reference() {
    // a small trained UniGCN supplies realistic weight norms at h=64; the
    // structural statistics are the reference dataset's
    let samples = gen_instances(Arch::UniGcn, 20, 20, 4, 6, 2, 606);
    let (train, valid) = samples.split_at(15);
    let config = TrainConfig {
        optimizer: Optimizer::Adam,
        epochs: 5,
        batch_size: 5,
        seed: 11,
        ..Default::default()
    };
    let (w, _) = train_model(Arch::UniGcn, train, valid, 6, 64, 2, 0, 2, &config).unwrap();
    let inputs = BoundInputs {
        arch: Arch::UniGcn,
        l: 2,
        gamma: 0.25,
        delta: 0.1,
        m: 500,
        b: 1.0,
        h: 64,
        d_max: 166.0,
        m_max: 20.0,
        r_max: 20.0,
        alphas: vec![],
        t_max: 1.0,
        terms: weight_terms(&w).unwrap(),
    };
    let cert = certify(&inputs, 0.0, BoundMode::Appendix).unwrap();
    let reference: f64 = 6.46e8;
    let ratio = cert.complexity / reference;
    assert!(
        (0.01..=100.0).contains(&ratio),
        "complexity {:.3e} is not within 2 orders of {reference:.3e}",
        cert.complexity
    );
    // exact monotonicity in each structural statistic
    for bump in 0..3 {
        let mut inp = inputs.clone();
        match bump {
            0 => inp.d_max += 1.0,
            1 => inp.m_max += 1.0,
            _ => inp.r_max += 1.0,
        }
        let c = certify(&inp, 0.0, BoundMode::Appendix).unwrap();
        assert!(c.log10_complexity > cert.log10_complexity, "stat {bump} not monotone");
    }
    println!(
        "ACCEPTANCE 6: PASS - reference complexity {:.3e} within 2 orders of 6.46e8; monotone in D, M, R",
        cert.complexity
    );
}

#[test]
fn acceptance_07_correlation_study() {
    use hypercert::experiment::{run_study, LossMode, StudyConfig, TrainSettings, WeightsMode};
    let start = std::time::Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let mut datasets = Vec::new();
    let caps = [(3usize, 5usize), (4, 8), (5, 10), (6, 12)];
    for (i, &n) in [60usize, 120, 200].iter().enumerate() {
        for (j, &(m_cap, r_cap)) in caps.iter().enumerate() {
            let cfg = GenConfig {
                base: BaseModel::Er { p: 6.0 / n as f64 },
                n,
                m_cap,
                r_cap,
                pool: 24,
                classes: 3,
                d: 6,
                b_cap: 1.0,
                seed: 700 + (i * 4 + j) as u64,
            };
            let ds = generate(&cfg).unwrap();
            let path = dir.path().join(format!("er_n{n}_m{m_cap}.jsonl"));
            serialize(&ds, &path, Some(&cfg)).unwrap();
            datasets.push(path.to_string_lossy().into_owned());
        }
    }
    let study = StudyConfig {
        datasets,
        architectures: vec![Arch::UniGcn, Arch::AllDeepSets],
        l_values: vec![2, 4],
        train: TrainSettings {
            epochs: 2,
            hidden: 16,
            batch: 8,
            ..Default::default()
        },
        loss_mode: LossMode::Average,
        bound_mode: BoundMode::Appendix,
        weights_mode: WeightsMode::Trained,
        out_dir: dir.path().join("study").to_string_lossy().into_owned(),
        seed: 7,
        delta: 0.1,
    };
    let (rows, summary) = run_study(&study).unwrap();
    for row in &rows {
        assert!(row.error.is_none(), "cell failed: {:?}", row);
    }
    let positive = summary.iter().filter(|s| s.r.map(|r| r > 0.0).unwrap_or(false)).count();
    let elapsed = start.elapsed();
    assert!(
        positive >= 3,
        "only {positive}/4 cells with positive correlation: {:?}",
        summary
            .iter()
            .map(|s| (s.arch, s.l, s.r))
            .collect::<Vec<_>>()
    );
    assert!(elapsed.as_secs() < 1800, "took {elapsed:?}");
    println!(
        "ACCEPTANCE 7: PASS - positive empirical-bound correlation in {positive}/4 cells ({elapsed:?})"
    );
}

#[test]
fn acceptance_08_overfit_sanity() {
    for arch in Arch::ALL {
        let samples = gen_instances(arch, 5, 10, 3, 5, 2, 808);
        let config = TrainConfig {
            optimizer: Optimizer::default_for(arch),
            epochs: 500,
            batch_size: 5,
            l2: 0.0,
            seed: 0,
            ..Default::default()
        };
        let (_, log) = train_model(arch, &samples, &[], 5, 16, 2, 4, 2, &config).unwrap();
        let reached = log.iter().any(|e| e.train_margin_loss == 0.0);
        assert!(
            reached,
            "{arch} never reached margin loss 0 (best {})",
            log.iter().map(|e| e.train_margin_loss).fold(1.0, f64::min)
        );
    }
    println!("ACCEPTANCE 8: PASS - every architecture overfits 5 samples to margin loss 0");
}

#[test]
fn acceptance_09_mc_estimator_guarantee() {
    let mut hits = 0;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = MCConfig { seed, ..Default::default() };
        let est = mc_estimate(
            || if rng.gen_range(0.0..1.0) < 0.3 { 1.0 } else { 0.0 },
            &cfg,
        )
        .unwrap();
        if (est.estimate - 0.3).abs() <= 0.1 * 0.3 {
            hits += 1;
        }
    }
    assert!(hits >= 90, "only {hits}/100 runs within 10% relative error");
    println!("ACCEPTANCE 9: PASS - Bernoulli(0.3) estimated within 10% in {hits}/100 runs");
}

fn run_pipeline(dir: &Path) {
    let bin = env!("CARGO_BIN_EXE_hypercert");
    let run = |args: &[&str]| {
        let out = Command::new(bin)
            .args(args)
            .current_dir(dir)
            .output()
            .expect("binary runs");
        assert!(
            out.status.success(),
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    };
    run(&[
        "gen-data", "--model", "er", "--n", "20", "--p", "0.3", "--m-cap", "4", "--r-cap", "6",
        "--pool", "12", "--classes", "2", "--d", "5", "--seed", "7", "--out", "data.jsonl",
    ]);
    run(&[
        "train", "--arch", "unigcn", "--dataset", "data.jsonl", "--l", "2", "--epochs", "3",
        "--hidden", "8", "--seed", "7", "--out-weights", "w.json",
    ]);
    run(&[
        "certify", "--arch", "unigcn", "--weights", "w.json", "--dataset", "data.jsonl",
        "--gamma", "0.25", "--delta", "0.1", "--mode", "appendix", "--out", "cert.json",
    ]);
}

#[test]
fn acceptance_10_pipeline_determinism() {
    let d1 = tempfile::tempdir().unwrap();
    let d2 = tempfile::tempdir().unwrap();
    run_pipeline(d1.path());
    run_pipeline(d2.path());
    for file in ["data.jsonl", "data.jsonl.manifest.json", "w.json", "cert.json"] {
        let a = std::fs::read(d1.path().join(file)).unwrap();
        let b = std::fs::read(d2.path().join(file)).unwrap();
        assert_eq!(a, b, "{file} differs between identical runs");
        assert!(!a.is_empty());
    }
    println!("ACCEPTANCE 10: PASS - gen-data -> train -> certify is byte-deterministic");
}

#[test]
fn acceptance_11_savitzky_golay_exactness() {
    let ys: Vec<f64> = (0..21)
        .map(|i| {
            let x = i as f64;
            1.7 * x * x - 0.4 * x + 2.2
        })
        .collect();
    let sm = savitzky_golay(&ys, 7, 2).unwrap();
    for (a, b) in ys.iter().zip(&sm) {
        assert!((a - b).abs() < 1e-10, "{a} vs {b}");
    }
    let impulse = [0.0, 0.0, 1.0, 0.0, 0.0];
    let sm = savitzky_golay(&impulse, 5, 2).unwrap();
    assert!((sm[2] - 17.0 / 35.0).abs() < 1e-12);
    println!("ACCEPTANCE 11: PASS - smoothing is exact on quadratics; (5,2) center weight is 17/35");
}
