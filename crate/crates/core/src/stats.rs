//! Statistical layer: adaptive Monte Carlo mean estimation (stopping-rule
//! algorithm), Pearson correlation, and Savitzky-Golay smoothing.

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct MCConfig {
    /// relative error target
    pub eps: f64,
    /// failure probability
    pub delta: f64,
    pub max_samples: usize,
    pub seed: u64,
}

impl Default for MCConfig {
    fn default() -> Self {
        MCConfig { eps: 0.10, delta: 0.10, max_samples: 1_000_000, seed: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct MCEstimate {
    pub estimate: f64,
    pub samples_used: usize,
}

/// First-phase stopping-rule estimator: draw Bernoulli samples until the
/// running sum reaches Upsilon = 4(e-2) ln(2/delta) / eps^2, then report
/// Upsilon / draws. Guarantees Pr[|est - p| <= eps*p] >= 1 - delta.
///
/// A source that never produces ones (or produces too few) exhausts
/// `max_samples` and surfaces as an error carrying the partial estimate.
pub fn mc_estimate<F>(mut source: F, config: &MCConfig) -> Result<MCEstimate>
where
    F: FnMut() -> f64,
{
    if !(config.eps > 0.0 && config.eps < 1.0) || !(config.delta > 0.0 && config.delta < 1.0) {
        return Err(Error::data("mc config requires eps, delta in (0,1)".to_string()));
    }
    let upsilon = 4.0 * (std::f64::consts::E - 2.0) * (2.0 / config.delta).ln()
        / (config.eps * config.eps);
    let mut sum = 0.0;
    for draws in 1..=config.max_samples {
        let v = source();
        debug_assert!(v == 0.0 || v == 1.0, "mc source must yield 0/1 draws");
        sum += v;
        if sum >= upsilon {
            return Ok(MCEstimate { estimate: upsilon / draws as f64, samples_used: draws });
        }
    }
    Err(Error::numeric(format!(
        "mc estimator exhausted {} samples before the stopping sum {upsilon:.3} \
         (partial estimate {:.6})",
        config.max_samples,
        sum / config.max_samples as f64
    )))
}

/// Sample Pearson correlation coefficient.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::data("pearson requires equal-length series of length >= 2".to_string()));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::numeric("pearson undefined: zero variance".to_string()));
    }
    Ok(sxy / (sxx.sqrt() * syy.sqrt()))
}

/// Solve the small symmetric system A c = b by Gaussian elimination with
/// partial pivoting (A is (order+1)^2, well-conditioned at these sizes).
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Result<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())
            .unwrap();
        if a[pivot][col].abs() < 1e-300 {
            return Err(Error::numeric("singular system in polynomial fit".to_string()));
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in (col + 1)..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for col in (0..n).rev() {
        let mut s = b[col];
        for k in (col + 1)..n {
            s -= a[col][k] * x[k];
        }
        x[col] = s / a[col][col];
    }
    Ok(x)
}

/// Per-point least-squares polynomial smoothing. Interior points use a
/// centered window; endpoints use shifted windows with the fit evaluated at
/// the point's offset inside the window.
pub fn savitzky_golay(ys: &[f64], window: usize, polyorder: usize) -> Result<Vec<f64>> {
    if window % 2 == 0 {
        return Err(Error::data("window must be odd".to_string()));
    }
    if window <= polyorder {
        return Err(Error::data("window must exceed polyorder".to_string()));
    }
    if ys.len() < window {
        return Err(Error::data("series shorter than window".to_string()));
    }
    let half = window / 2;
    let n = ys.len();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let start = i.saturating_sub(half).min(n - window);
        // normal equations for the fit over the window, with the abscissa
        // centered on the evaluation point so c_0 is the smoothed value
        let dim = polyorder + 1;
        let mut ata = vec![vec![0.0; dim]; dim];
        let mut atb = vec![0.0; dim];
        for j in start..start + window {
            let x = j as f64 - i as f64;
            let mut powers = vec![1.0; dim];
            for p in 1..dim {
                powers[p] = powers[p - 1] * x;
            }
            for p in 0..dim {
                for q in 0..dim {
                    ata[p][q] += powers[p] * powers[q];
                }
                atb[p] += powers[p] * ys[j];
            }
        }
        let c = solve(ata, atb)?;
        out.push(c[0]);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mc_constant_sources() {
        let cfg = MCConfig::default();
        let est = mc_estimate(|| 1.0, &cfg).unwrap();
        assert!((est.estimate - 1.0).abs() < 0.12); // Upsilon/ceil(Upsilon)
        assert!(est.estimate <= 1.0 + 1e-12);
        let err = mc_estimate(|| 0.0, &MCConfig { max_samples: 10_000, ..cfg }).unwrap_err();
        assert!(err.to_string().contains("exhausted"));
    }

    #[test]
    fn mc_fewer_draws_for_larger_p() {
        let mut avg_draws = Vec::new();
        for p in [0.2, 0.5, 0.8] {
            let mut total = 0usize;
            for seed in 0..10u64 {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let cfg = MCConfig { seed, ..Default::default() };
                let est = mc_estimate(
                    || if rng.gen_range(0.0..1.0) < p { 1.0 } else { 0.0 },
                    &cfg,
                )
                .unwrap();
                total += est.samples_used;
            }
            avg_draws.push(total as f64 / 10.0);
        }
        assert!(avg_draws[0] > avg_draws[1] && avg_draws[1] > avg_draws[2]);
    }

    #[test]
    fn pearson_examples() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x + 1.0).collect();
        assert!((pearson(&xs, &ys).unwrap() - 1.0).abs() < 1e-12);
        let neg: Vec<f64> = xs.iter().map(|x| -x).collect();
        assert!((pearson(&xs, &neg).unwrap() + 1.0).abs() < 1e-12);
        assert!((pearson(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap() - 0.5).abs() < 1e-12);
        assert!(pearson(&[1.0, 1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn pearson_affine_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let xs: Vec<f64> = (0..20).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let ys: Vec<f64> = (0..20).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let r = pearson(&xs, &ys).unwrap();
        let xs2: Vec<f64> = xs.iter().map(|x| 3.5 * x + 2.0).collect();
        assert!((pearson(&xs2, &ys).unwrap() - r).abs() < 1e-12);
    }

    #[test]
    fn sg_exact_on_quadratic() {
        let ys: Vec<f64> = (0..15).map(|i| {
            let x = i as f64;
            0.3 * x * x - 1.2 * x + 0.7
        }).collect();
        let sm = savitzky_golay(&ys, 5, 2).unwrap();
        for (a, b) in ys.iter().zip(&sm) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn sg_constant_unchanged() {
        let ys = vec![4.2; 9];
        let sm = savitzky_golay(&ys, 5, 2).unwrap();
        for v in sm {
            assert!((v - 4.2).abs() < 1e-12);
        }
    }

    #[test]
    fn sg_impulse_center_coefficient() {
        let ys = [0.0, 0.0, 1.0, 0.0, 0.0];
        let sm = savitzky_golay(&ys, 5, 2).unwrap();
        assert!((sm[2] - 17.0 / 35.0).abs() < 1e-12);
    }

    #[test]
    fn sg_precondition_errors() {
        assert!(savitzky_golay(&[1.0; 10], 4, 2).is_err()); // even window
        assert!(savitzky_golay(&[1.0; 10], 3, 3).is_err()); // order too high
        assert!(savitzky_golay(&[1.0; 3], 5, 2).is_err()); // short series
    }
}
