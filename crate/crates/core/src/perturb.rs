//! Empirical verification of the perturbation lemmas: sample weight
//! perturbations rescaled to sit exactly at a chosen fraction of each
//! lemma's constraint cap, measure the logit drift, and compare against the
//! closed-form RHS. Any violation is an implementation bug, so the suite's
//! satisfaction rate doubles as a correctness oracle.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::hypergraph::Arch;
use crate::linalg::{spectral_norm_default, Matrix};
use crate::models::{forward, ModelWeights, SampleCtx};
use crate::parallel::map_range;

/// Constraint cap on max_i ||U^(i)||/||W^(i)|| for each lemma; T-MPHN has
/// none.
pub fn perturbation_cap(arch: Arch, l: usize) -> Option<f64> {
    match arch {
        Arch::UniGcn | Arch::HgnnPlus | Arch::Hgnn => Some(1.0 / (l as f64 + 1.0)),
        Arch::AllDeepSets => Some(1.0 / (4.0 * l as f64 + 1.0)),
        Arch::MIgn => Some(1.0 / (l as f64 + 2.0)),
        Arch::TMphn => None,
    }
}

#[derive(Debug, Clone)]
pub struct PerturbTrialConfig {
    pub arch: Arch,
    pub trials: usize,
    /// fraction of the cap at which every layer ratio is pinned
    pub rho: f64,
    pub seed: u64,
}

impl PerturbTrialConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::data("trial count must be >= 1".to_string()));
        }
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return Err(Error::data("rho must lie in (0,1]".to_string()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrialRow {
    pub trial: usize,
    pub arch: Arch,
    pub l: usize,
    pub measured: f64,
    pub rhs: f64,
    pub ratio: f64,
    pub satisfied: bool,
}

#[derive(Debug, Clone)]
pub struct PerturbReport {
    pub rows: Vec<TrialRow>,
    pub satisfaction_rate: f64,
    pub max_tightness: f64,
}

impl PerturbReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("trial,arch,l,measured,rhs,ratio,satisfied\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.trial, r.arch, r.l, r.measured, r.rhs, r.ratio, r.satisfied
            ));
        }
        out
    }
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller from two uniforms
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Gaussian perturbation per layer, rescaled so every spectral-norm ratio
/// ||U^(i)||/||W^(i)|| equals exactly rho * cap.
pub fn sample_constrained_perturbation(
    weights: &ModelWeights,
    cap: f64,
    rho: f64,
    seed: u64,
) -> Result<Vec<Matrix>> {
    if cap <= 0.0 {
        return Err(Error::data("perturbation cap must be positive".to_string()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let target = rho * cap;
    let mut out = Vec::with_capacity(weights.layers.len());
    for layer in &weights.layers {
        let w_norm = spectral_norm_default(&layer.mat)?;
        if w_norm == 0.0 {
            return Err(Error::numeric(format!(
                "layer {} has zero spectral norm; ratio constraint undefined",
                layer.name
            )));
        }
        let (r, c) = (layer.mat.rows(), layer.mat.cols());
        let raw: Vec<f64> = (0..r * c).map(|_| gaussian(&mut rng)).collect();
        let u = Matrix::new(r, c, raw)?;
        let u_norm = spectral_norm_default(&u)?;
        if u_norm == 0.0 {
            return Err(Error::numeric("degenerate zero perturbation draw".to_string()));
        }
        out.push(u.scale(target * w_norm / u_norm));
    }
    Ok(out)
}

/// Closed-form lemma RHS for the architecture, evaluated with measured
/// spectral norms:
///
/// UniGCN:      e B (DRM)^L  (prod ||W||) (sum ||U||/||W||)
/// AllDeepSets: 30 (4L+2) e B L (M+1)^L (R+1)^L (prod_j zeta_j) ||U_out||
/// M-IGN:       2 e^2 M^(L+2) D^(L+1) B E^(1,L) (prod ||W||) (sum ||U||/||W||)
/// T-MPHN:      2 ||W^(L+1)|| + 3 ||U^(L+1)||
/// HGNN+:       e B (C sqrt(D) R M)^L ...   HGNN: e B (sqrt(C) sqrt(D) R M)^L ...
pub fn lemma_rhs(
    arch: Arch,
    weights: &ModelWeights,
    perturbation: &[Matrix],
    d_max: f64,
    m_max: f64,
    r_max: f64,
    b: f64,
    t_max: f64,
) -> Result<f64> {
    if perturbation.len() != weights.layers.len() {
        return Err(Error::data("perturbation layer count mismatch".to_string()));
    }
    let l = weights.l_steps as f64;
    let mut w_norms = Vec::with_capacity(weights.layers.len());
    let mut u_norms = Vec::with_capacity(perturbation.len());
    for (layer, u) in weights.layers.iter().zip(perturbation) {
        w_norms.push(spectral_norm_default(&layer.mat)?);
        u_norms.push(spectral_norm_default(u)?);
    }
    // check the lemma's cap precondition (with slack for rescale rounding)
    if let Some(cap) = perturbation_cap(arch, weights.l_steps) {
        for (w, u) in w_norms.iter().zip(&u_norms) {
            if *w == 0.0 {
                return Err(Error::numeric("zero spectral norm layer".to_string()));
            }
            if u / w > cap * (1.0 + 1e-9) {
                return Err(Error::data(format!(
                    "perturbation ratio {} violates cap {cap}",
                    u / w
                )));
            }
        }
    }
    let e = std::f64::consts::E;
    let rhs = match arch {
        Arch::UniGcn | Arch::HgnnPlus | Arch::Hgnn => {
            let base = match arch {
                Arch::UniGcn => d_max * r_max * m_max,
                Arch::HgnnPlus => t_max * d_max.sqrt() * r_max * m_max,
                _ => t_max.sqrt() * d_max.sqrt() * r_max * m_max,
            };
            let ln_prod: f64 = w_norms.iter().map(|w| w.ln()).sum();
            let sum: f64 = u_norms.iter().zip(&w_norms).map(|(u, w)| u / w).sum();
            (e.ln() + b.ln() + l * base.ln() + ln_prod).exp() * sum
        }
        Arch::AllDeepSets => {
            let steps = weights.l_steps;
            let mut ln_zeta_prod = 0.0;
            for j in 0..steps {
                for i in 0..4 {
                    ln_zeta_prod += w_norms[4 * j + i].ln();
                }
            }
            let c = 30.0 * (4.0 * l + 2.0) * e * b * l;
            let ln_struct = l * ((m_max + 1.0).ln() + (r_max + 1.0).ln());
            (c.ln() + ln_struct + ln_zeta_prod).exp() * u_norms[4 * steps]
        }
        Arch::MIgn => {
            let e1l = crate::bounds::alpha_interval_product(&weights.alphas, 1, weights.l_steps);
            let ln_prod: f64 = w_norms.iter().map(|w| w.ln()).sum();
            let sum: f64 = u_norms.iter().zip(&w_norms).map(|(u, w)| u / w).sum();
            let ln_c = (2.0 * e * e).ln()
                + (l + 2.0) * m_max.ln()
                + (l + 1.0) * d_max.ln()
                + b.ln()
                + e1l.ln();
            (ln_c + ln_prod).exp() * sum
        }
        Arch::TMphn => {
            let last = w_norms.len() - 1;
            2.0 * w_norms[last] + 3.0 * u_norms[last]
        }
    };
    Ok(rhs)
}

/// Forward the same inputs under w and w+u; drift is the l2 distance of the
/// logits.
pub fn measure_drift(
    weights: &ModelWeights,
    perturbation: &[Matrix],
    ctx: &SampleCtx,
) -> Result<f64> {
    let base = forward(weights, ctx)?;
    let mut pert = weights.clone();
    for (layer, u) in pert.layers.iter_mut().zip(perturbation) {
        layer.mat = layer.mat.add(u)?;
    }
    let moved = forward(&pert, ctx)?;
    let diff = moved.logits.sub(&base.logits)?;
    Ok(crate::linalg::vec_norm(diff.row(0)))
}

/// Run `config.trials` perturbations against every instance; deterministic
/// per seed, trials independent (and run in parallel when enabled).
pub fn run_suite(
    config: &PerturbTrialConfig,
    weights: &ModelWeights,
    instances: &[SampleCtx],
) -> Result<PerturbReport> {
    config.validate()?;
    if instances.is_empty() {
        return Err(Error::data("perturbation suite needs at least one instance".to_string()));
    }
    let cap = perturbation_cap(config.arch, weights.l_steps).unwrap_or(1.0);
    let total = config.trials * instances.len();
    let results = map_range(total, |idx| {
        let trial = idx / instances.len();
        let inst = idx % instances.len();
        let ctx = &instances[inst];
        let seed = config
            .seed
            .wrapping_add((trial as u64).wrapping_mul(0x9E37_79B9))
            .wrapping_add(inst as u64);
        let u = sample_constrained_perturbation(weights, cap, config.rho, seed)?;
        let measured = measure_drift(weights, &u, ctx)?;
        let rhs = lemma_rhs(
            config.arch,
            weights,
            &u,
            ctx.stats.d_max as f64,
            ctx.stats.m_max as f64,
            ctx.stats.r_max as f64,
            ctx.b_cap,
            1.0,
        )?;
        Ok::<_, Error>(TrialRow {
            trial: idx,
            arch: config.arch,
            l: weights.l_steps,
            measured,
            rhs,
            ratio: if rhs > 0.0 { measured / rhs } else { f64::INFINITY },
            satisfied: measured <= rhs * (1.0 + 1e-9),
        })
    });
    let mut rows = Vec::with_capacity(total);
    for r in results {
        rows.push(r?);
    }
    let sat = rows.iter().filter(|r| r.satisfied).count() as f64 / rows.len() as f64;
    let max_tightness = rows.iter().map(|r| r.ratio).fold(0.0f64, f64::max);
    Ok(PerturbReport { rows, satisfaction_rate: sat, max_tightness })
}

/// Sequential twin of `run_suite` for benchmarking against the parallel
/// path.
pub fn run_suite_seq(
    config: &PerturbTrialConfig,
    weights: &ModelWeights,
    instances: &[SampleCtx],
) -> Result<PerturbReport> {
    config.validate()?;
    let cap = perturbation_cap(config.arch, weights.l_steps).unwrap_or(1.0);
    let mut rows = Vec::new();
    for trial in 0..config.trials {
        for (inst, ctx) in instances.iter().enumerate() {
            let idx = trial * instances.len() + inst;
            let seed = config
                .seed
                .wrapping_add((trial as u64).wrapping_mul(0x9E37_79B9))
                .wrapping_add(inst as u64);
            let u = sample_constrained_perturbation(weights, cap, config.rho, seed)?;
            let measured = measure_drift(weights, &u, ctx)?;
            let rhs = lemma_rhs(
                config.arch,
                weights,
                &u,
                ctx.stats.d_max as f64,
                ctx.stats.m_max as f64,
                ctx.stats.r_max as f64,
                ctx.b_cap,
                1.0,
            )?;
            rows.push(TrialRow {
                trial: idx,
                arch: config.arch,
                l: weights.l_steps,
                measured,
                rhs,
                ratio: if rhs > 0.0 { measured / rhs } else { f64::INFINITY },
                satisfied: measured <= rhs * (1.0 + 1e-9),
            });
        }
    }
    let sat = rows.iter().filter(|r| r.satisfied).count() as f64 / rows.len() as f64;
    let max_tightness = rows.iter().map(|r| r.ratio).fold(0.0f64, f64::max);
    Ok(PerturbReport { rows, satisfaction_rate: sat, max_tightness })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rescale_hits_exact_fraction() {
        let w = ModelWeights::init_glorot(Arch::UniGcn, 2, 3, 4, 2, 0, 5).unwrap();
        let cap = perturbation_cap(Arch::UniGcn, 2).unwrap();
        assert!((cap - 1.0 / 3.0).abs() < 1e-15);
        let u = sample_constrained_perturbation(&w, cap, 0.5, 11).unwrap();
        for (layer, ui) in w.layers.iter().zip(&u) {
            let r = spectral_norm_default(ui).unwrap() / spectral_norm_default(&layer.mat).unwrap();
            assert!((r - 0.5 * cap).abs() < 1e-10);
        }
        // rho = 1 pins every ratio at 1/3
        let u = sample_constrained_perturbation(&w, cap, 1.0, 11).unwrap();
        for (layer, ui) in w.layers.iter().zip(&u) {
            let r = spectral_norm_default(ui).unwrap() / spectral_norm_default(&layer.mat).unwrap();
            assert!((r - 1.0 / 3.0).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_perturbation_rhs() {
        let w = ModelWeights::init_glorot(Arch::UniGcn, 2, 3, 4, 2, 0, 5).unwrap();
        let zeros = w.zero_like();
        let rhs = lemma_rhs(Arch::UniGcn, &w, &zeros, 3.0, 2.0, 2.0, 1.0, 1.0).unwrap();
        assert_eq!(rhs, 0.0);
        // T-MPHN keeps the 2||W_out|| floor
        let wt = ModelWeights::init_glorot(Arch::TMphn, 2, 3, 4, 2, 3, 5).unwrap();
        let zeros = wt.zero_like();
        let rhs = lemma_rhs(Arch::TMphn, &wt, &zeros, 3.0, 2.0, 2.0, 1.0, 1.0).unwrap();
        let w_out = spectral_norm_default(&wt.layers.last().unwrap().mat).unwrap();
        assert!((rhs - 2.0 * w_out).abs() < 1e-12);
    }

    #[test]
    fn lemma1_scalar_example() {
        // L=1, d=1, all W=I, single U with ||U|| = 0.1, D=R=M=1, B=1:
        // RHS = e * 1 * 1 * (prod ||W||) * 0.1 = 0.2718...
        let w = ModelWeights {
            arch: Arch::UniGcn,
            l_steps: 1,
            input_dim: 1,
            hidden: 1,
            classes: 1,
            alphas: vec![],
            order_m: 0,
            layers: vec![
                crate::models::Layer { name: "w1".into(), mat: Matrix::identity(1) },
                crate::models::Layer { name: "w2".into(), mat: Matrix::identity(1) },
            ],
        };
        let u = vec![
            Matrix::from_rows(&[vec![0.1]]).unwrap(),
            Matrix::zeros(1, 1),
        ];
        let rhs = lemma_rhs(Arch::UniGcn, &w, &u, 1.0, 1.0, 1.0, 1.0, 1.0).unwrap();
        assert!((rhs - std::f64::consts::E * 0.1).abs() < 1e-12);
    }

    #[test]
    fn doubling_perturbation_doubles_lemma1_rhs() {
        let w = ModelWeights::init_glorot(Arch::UniGcn, 2, 3, 4, 2, 0, 5).unwrap();
        let cap = perturbation_cap(Arch::UniGcn, 2).unwrap();
        let u1 = sample_constrained_perturbation(&w, cap, 0.4, 3).unwrap();
        let u2: Vec<Matrix> = u1.iter().map(|m| m.scale(2.0)).collect();
        let r1 = lemma_rhs(Arch::UniGcn, &w, &u1, 3.0, 2.0, 2.0, 1.0, 1.0).unwrap();
        let r2 = lemma_rhs(Arch::UniGcn, &w, &u2, 3.0, 2.0, 2.0, 1.0, 1.0).unwrap();
        assert!((r2 / r1 - 2.0).abs() < 1e-9);
    }

    #[test]
    fn cap_violation_is_an_error() {
        let w = ModelWeights::init_glorot(Arch::MIgn, 2, 3, 4, 2, 0, 5).unwrap();
        let cap = perturbation_cap(Arch::MIgn, 2).unwrap();
        let u = sample_constrained_perturbation(&w, cap, 1.0, 3).unwrap();
        let too_big: Vec<Matrix> = u.iter().map(|m| m.scale(3.0)).collect();
        assert!(lemma_rhs(Arch::MIgn, &w, &too_big, 3.0, 2.0, 2.0, 1.0, 1.0).is_err());
    }
}
