//! Command-line surface. Every subcommand is deterministic given its flags
//! and seed; errors land on stderr with a stable class prefix and the exit
//! code encodes the class (1 usage, 2 data/numeric).

use clap::{Parser, Subcommand};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use hypercert::bounds::{certify, weight_terms, BoundInputs, BoundMode, Provenance};
use hypercert::error::{Error, Result};
use hypercert::experiment::{run_study, smooth_study_csv, StudyConfig};
use hypercert::hypergraph::Arch;
use hypercert::models::{ModelWeights, SampleCtx};
use hypercert::perturb::{run_suite, PerturbTrialConfig};
use hypercert::synth::{generate, load, load_manifest, serialize, BaseModel, Dataset, GenConfig};
use hypercert::train::{log_to_csv, split_indices, train_model, Optimizer, TrainConfig};

#[derive(Parser)]
#[command(
    name = "hypercert",
    about = "Hypergraph neural network training and generalization certificates",
    version
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic hypergraph classification dataset (JSONL + manifest)
    #[command(name = "gen-data")]
    GenData {
        /// base graph model: er | sbm
        #[arg(long)]
        model: String,
        /// nodes per sample
        #[arg(long)]
        n: usize,
        /// edge probability (intra-block probability for sbm)
        #[arg(long)]
        p: f64,
        /// sbm only: inter-block edge probability
        #[arg(long, default_value_t = 0.05)]
        p_inter: f64,
        /// sbm only: block count
        #[arg(long, default_value_t = 2)]
        blocks: usize,
        /// max hyperedge cardinality
        #[arg(long)]
        m_cap: usize,
        /// max incident hyperedges per node
        #[arg(long)]
        r_cap: usize,
        /// samples to generate
        #[arg(long)]
        pool: usize,
        /// label classes
        #[arg(long)]
        classes: usize,
        /// feature width
        #[arg(long, default_value_t = 8)]
        d: usize,
        /// feature row-norm cap B
        #[arg(long, default_value_t = 1.0)]
        b_cap: f64,
        #[arg(long)]
        seed: u64,
        /// output dataset path (.jsonl; manifest written alongside)
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one architecture on a dataset and save the weights
    Train {
        /// unigcn | alldeepsets | mign | tmphn | hgnnplus | hgnn
        #[arg(long)]
        arch: String,
        #[arg(long)]
        dataset: PathBuf,
        /// message-passing steps L
        #[arg(long)]
        l: usize,
        #[arg(long, default_value_t = 0.01)]
        lr: f64,
        #[arg(long, default_value_t = 100)]
        epochs: usize,
        #[arg(long, default_value_t = 20)]
        batch: usize,
        #[arg(long, default_value_t = 1e-4)]
        l2: f64,
        #[arg(long, default_value_t = 0.25)]
        gamma: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 64)]
        hidden: usize,
        /// sgd | adam (default: sgd for alldeepsets, adam otherwise)
        #[arg(long)]
        optimizer: Option<String>,
        #[arg(long)]
        out_weights: PathBuf,
    },
    /// Evaluate a generalization-bound certificate for trained weights
    Certify {
        #[arg(long)]
        arch: String,
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value_t = 0.25)]
        gamma: f64,
        #[arg(long, default_value_t = 0.1)]
        delta: f64,
        /// appendix | theorem
        #[arg(long, default_value = "appendix")]
        mode: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Verify the perturbation lemma empirically on a dataset's instances
    #[command(name = "perturb-verify")]
    PerturbVerify {
        #[arg(long)]
        arch: String,
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        /// fraction of the lemma cap at which ratios are pinned, in (0,1]
        #[arg(long, default_value_t = 1.0)]
        rho: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a full correlation study from a JSON grid config
    Correlate {
        #[arg(long)]
        study_config: PathBuf,
        /// overrides the config's out_dir when given
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Smooth a study.csv's series per (arch, L) group
    Report {
        #[arg(long)]
        study_csv: PathBuf,
        #[arg(long, default_value_t = 5)]
        smooth_window: usize,
        #[arg(long, default_value_t = 2)]
        smooth_order: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_arch(s: &str) -> Result<Arch> {
    Arch::parse(s)
}

/// Prepare every sample of a dataset for one architecture; order_m covers
/// the largest hyperedge (T-MPHN needs it, the rest ignore it).
fn prepare_all(ds: &Dataset, arch: Arch, order_m: usize) -> Result<Vec<(SampleCtx, usize)>> {
    ds.samples
        .iter()
        .map(|s| Ok((SampleCtx::prepare(arch, &s.hg, &s.feats, order_m)?, s.label)))
        .collect()
}

fn load_weights_checked(path: &Path, arch: Arch) -> Result<ModelWeights> {
    let w = ModelWeights::load(path)?;
    if w.arch != arch {
        return Err(Error::usage(format!(
            "--arch {} does not match the weights file ({})",
            arch, w.arch
        )));
    }
    Ok(w)
}

fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::GenData {
            model,
            n,
            p,
            p_inter,
            blocks,
            m_cap,
            r_cap,
            pool,
            classes,
            d,
            b_cap,
            seed,
            out,
        } => {
            let base = match model.as_str() {
                "er" => BaseModel::Er { p },
                "sbm" => BaseModel::Sbm { blocks, p_intra: p, p_inter },
                _ => return Err(Error::usage(format!("unknown model '{model}' (expected er|sbm)"))),
            };
            let config = GenConfig { base, n, m_cap, r_cap, pool, classes, d, b_cap, seed };
            let ds = generate(&config)?;
            let manifest = serialize(&ds, &out, Some(&config))?;
            println!(
                "wrote {} samples to {} (pooled stats: K={} M={} R={} D={}, hash {})",
                ds.samples.len(),
                out.display(),
                manifest.pooled.max_k,
                manifest.pooled.max_m,
                manifest.pooled.max_r,
                manifest.pooled.max_d,
                &manifest.content_hash[..12]
            );
            Ok(())
        }
        Cmd::Train {
            arch,
            dataset,
            l,
            lr,
            epochs,
            batch,
            l2,
            gamma,
            seed,
            hidden,
            optimizer,
            out_weights,
        } => {
            let arch = parse_arch(&arch)?;
            let ds = load(&dataset)?;
            let pooled = hypercert::synth::pooled_stats(&ds);
            let config = TrainConfig {
                optimizer: match optimizer {
                    Some(s) => Optimizer::parse(&s)?,
                    None => Optimizer::default_for(arch),
                },
                lr,
                epochs,
                batch_size: batch,
                l2,
                gamma,
                seed,
                ..Default::default()
            };
            let (train_idx, _test_idx, valid_idx) =
                split_indices(ds.samples.len(), config.split, seed);
            let all = prepare_all(&ds, arch, pooled.max_m)?;
            let pick = |idx: &[usize]| idx.iter().map(|&i| all[i].clone()).collect::<Vec<_>>();
            let (weights, log) = train_model(
                arch,
                &pick(&train_idx),
                &pick(&valid_idx),
                ds.d,
                hidden,
                ds.classes,
                pooled.max_m,
                l,
                &config,
            )?;
            weights.save(&out_weights)?;
            print!("{}", log_to_csv(&log));
            println!("saved weights to {}", out_weights.display());
            Ok(())
        }
        Cmd::Certify { arch, weights, dataset, gamma, delta, mode, out } => {
            let arch = parse_arch(&arch)?;
            let mode = BoundMode::parse(&mode)?;
            let w = load_weights_checked(&weights, arch)?;
            let ds = load(&dataset)?;
            let pooled = hypercert::synth::pooled_stats(&ds);
            let order_m = if arch == Arch::TMphn { w.order_m } else { pooled.max_m };
            let samples = prepare_all(&ds, arch, order_m)?;
            let empirical = hypercert::train::dataset_margin_loss(&w, &samples, gamma)?;
            let inputs = BoundInputs {
                arch,
                l: w.l_steps,
                gamma,
                delta,
                m: samples.len(),
                b: ds.b_cap,
                h: w.hidden,
                d_max: pooled.max_d as f64,
                m_max: pooled.max_m as f64,
                r_max: pooled.max_r as f64,
                alphas: w.alphas.clone(),
                t_max: 1.0,
                terms: weight_terms(&w)?,
            };
            let mut cert = certify(&inputs, empirical, mode)?;
            cert.provenance = Some(Provenance {
                weights_path: weights.to_string_lossy().into_owned(),
                dataset_manifest_hash: load_manifest(&dataset)
                    .map(|m| m.content_hash)
                    .unwrap_or_else(|_| "unknown".to_string()),
                mode: mode.as_str().to_string(),
            });
            std::fs::write(&out, cert.to_text()?)?;
            println!(
                "{arch} L={} {}: empirical {:.6}, log10 complexity {:.3}, total {:.6e}",
                cert.l,
                mode.as_str(),
                cert.empirical_loss,
                cert.log10_complexity,
                cert.total_bound
            );
            Ok(())
        }
        Cmd::PerturbVerify { arch, weights, dataset, trials, rho, seed, out } => {
            let arch = parse_arch(&arch)?;
            let w = load_weights_checked(&weights, arch)?;
            let ds = load(&dataset)?;
            let pooled = hypercert::synth::pooled_stats(&ds);
            let order_m = if arch == Arch::TMphn { w.order_m } else { pooled.max_m };
            let instances: Vec<SampleCtx> = prepare_all(&ds, arch, order_m)?
                .into_iter()
                .map(|(ctx, _)| ctx)
                .collect();
            let config = PerturbTrialConfig { arch, trials, rho, seed };
            let report = run_suite(&config, &w, &instances)?;
            std::fs::write(&out, report.to_csv())?;
            println!(
                "{} trials x {} instances: satisfaction rate {:.4}, max tightness {:.4e}",
                trials,
                instances.len(),
                report.satisfaction_rate,
                report.max_tightness
            );
            Ok(())
        }
        Cmd::Correlate { study_config, out_dir } => {
            let mut config = StudyConfig::from_file(&study_config)?;
            if let Some(dir) = out_dir {
                config.out_dir = dir.to_string_lossy().into_owned();
            }
            let (rows, summary) = run_study(&config)?;
            let failed = rows.iter().filter(|r| r.error.is_some()).count();
            println!("{} cells ({} failed); outputs under {}", rows.len(), failed, config.out_dir);
            for s in &summary {
                match s.r {
                    Some(r) => println!("{} L={}: r={:.4} over n={}", s.arch, s.l, r, s.n),
                    None => println!("{} L={}: r undefined over n={}", s.arch, s.l, s.n),
                }
            }
            Ok(())
        }
        Cmd::Report { study_csv, smooth_window, smooth_order, out } => {
            let text = std::fs::read_to_string(&study_csv)
                .map_err(|e| Error::data(format!("cannot read {}: {e}", study_csv.display())))?;
            let smoothed = smooth_study_csv(&text, smooth_window, smooth_order)?;
            std::fs::write(&out, smoothed)?;
            println!("wrote smoothed report to {}", out.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            eprintln!("USAGE: {e}");
            return ExitCode::from(1);
        }
    };
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{} {e}", e.prefix());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
