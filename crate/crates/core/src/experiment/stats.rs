//! Logistic trend fits, rank correlation and permutation tests.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ExperimentError, Result};
use crate::rng::SeedTree;

/// Iteration cap for the logistic fit.
pub const IRLS_MAX_ITER: usize = 100;

/// One observation for the trend fit. Points sharing a `group` are runs of
/// the same task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitPoint {
    pub group: String,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitConfig {
    /// Regress on `ln x` rather than raw `x`.
    pub log_x: bool,
    pub resamples: usize,
    /// Resample runs within each group so every group stays represented.
    pub stratified: bool,
    pub permutations: usize,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            log_x: true,
            resamples: 1000,
            stratified: true,
            permutations: 10_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub coefficient: Option<f64>,
    pub p_value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub intercept: f64,
    pub slope: f64,
    pub intercept_band: (f64, f64),
    pub slope_band: (f64, f64),
    pub converged: bool,
    pub iterations: usize,
    /// Bootstrap resamples whose fit converged and entered the bands.
    pub resamples_used: usize,
    pub log_x: bool,
    pub pearson: Correlation,
    pub spearman: Correlation,
    pub n_points: usize,
}

impl FitResult {
    pub fn predict(&self, x: f64) -> f64 {
        let u = if self.log_x { x.ln() } else { x };
        sigmoid(self.intercept + self.slope * u)
    }

    /// Both bounds of the slope band lie strictly on the positive side.
    pub fn slope_excludes_zero_positive(&self) -> bool {
        self.slope_band.0 > 0.0
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Quasi-binomial logistic regression of fractional `y` on `u` by IRLS.
/// Returns `(a, b, converged, iterations)`.
pub fn irls(u: &[f64], y: &[f64]) -> Result<(f64, f64, bool, usize)> {
    if u.len() != y.len() {
        return Err(ExperimentError::Fit(format!("{} regressors vs {} responses", u.len(), y.len())));
    }
    if u.len() < 3 {
        return Err(ExperimentError::TooFewPoints { needed: 3, got: u.len() });
    }
    if u.iter().chain(y).any(|v| !v.is_finite()) || y.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(ExperimentError::Fit("non-finite regressor or response outside [0, 1]".into()));
    }
    let ybar = (y.iter().sum::<f64>() / y.len() as f64).clamp(1e-3, 1.0 - 1e-3);
    let (mut a, mut b) = ((ybar / (1.0 - ybar)).ln(), 0.0);
    for it in 1..=IRLS_MAX_ITER {
        let (mut s_w, mut s_wu, mut s_wuu, mut s_wz, mut s_wuz) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (&ui, &yi) in u.iter().zip(y) {
            let eta = a + b * ui;
            let mu = sigmoid(eta);
            let w = (mu * (1.0 - mu)).max(1e-12);
            let z = eta + (yi - mu) / w;
            s_w += w;
            s_wu += w * ui;
            s_wuu += w * ui * ui;
            s_wz += w * z;
            s_wuz += w * ui * z;
        }
        let det = s_w * s_wuu - s_wu * s_wu;
        if det.abs() < 1e-12 * s_w.max(1.0).powi(2) {
            return Err(ExperimentError::Fit("regressor has no spread".into()));
        }
        let na = (s_wuu * s_wz - s_wu * s_wuz) / det;
        let nb = (s_w * s_wuz - s_wu * s_wz) / det;
        if !na.is_finite() || !nb.is_finite() {
            return Ok((a, b, false, it));
        }
        let step = (na - a).abs().max((nb - b).abs());
        a = na;
        b = nb;
        if step < 1e-9 * (1.0 + a.abs().max(b.abs())) {
            return Ok((a, b, true, it));
        }
    }
    Ok((a, b, false, IRLS_MAX_ITER))
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// `y = σ(a + b·u)` with `u = ln x` (or `x`), 95% percentile bootstrap bands
/// and permutation-tested correlations. Bands are widened to contain the
/// point estimate if the bootstrap distribution is lopsided.
pub fn logistic_fit(points: &[FitPoint], cfg: &FitConfig) -> Result<FitResult> {
    let u: Vec<f64> = points
        .iter()
        .map(|p| {
            if cfg.log_x {
                if p.x > 0.0 {
                    Ok(p.x.ln())
                } else {
                    Err(ExperimentError::Fit(format!("ln of non-positive regressor {}", p.x)))
                }
            } else {
                Ok(p.x)
            }
        })
        .collect::<Result<_>>()?;
    let y: Vec<f64> = points.iter().map(|p| p.y).collect();
    let (a, b, converged, iterations) = irls(&u, &y)?;
    if !converged {
        log::warn!("logistic fit did not converge in {IRLS_MAX_ITER} iterations");
    }

    let mut groups: Vec<&str> = points.iter().map(|p| p.group.as_str()).collect();
    groups.sort_unstable();
    groups.dedup();
    let members: Vec<Vec<usize>> = groups
        .iter()
        .map(|g| (0..points.len()).filter(|&i| points[i].group == *g).collect())
        .collect();
    let seeds = SeedTree::new(cfg.seed);
    let (mut as_, mut bs) = (Vec::new(), Vec::new());
    for r in 0..cfg.resamples {
        let mut rng = seeds.rng("bootstrap", r as u64);
        let idx: Vec<usize> = if cfg.stratified {
            members
                .iter()
                .flat_map(|m| (0..m.len()).map(|_| m[rng.random_range(0..m.len())]).collect::<Vec<_>>())
                .collect()
        } else {
            (0..points.len()).map(|_| rng.random_range(0..points.len())).collect()
        };
        let bu: Vec<f64> = idx.iter().map(|&i| u[i]).collect();
        let by: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
        if let Ok((ra, rb, true, _)) = irls(&bu, &by) {
            as_.push(ra);
            bs.push(rb);
        }
    }
    let band = |v: &mut Vec<f64>, est: f64| {
        if v.is_empty() {
            return (f64::NEG_INFINITY, f64::INFINITY);
        }
        v.sort_by(f64::total_cmp);
        (percentile(v, 0.025).min(est), percentile(v, 0.975).max(est))
    };
    let resamples_used = bs.len();
    let intercept_band = band(&mut as_, a);
    let slope_band = band(&mut bs, b);

    let mut rng = seeds.rng("fit-permutation", 0);
    let pearson = permutation_test(&u, &y, pearson, cfg.permutations, &mut rng);
    let xs: Vec<f64> = points.iter().map(|p| p.x).collect();
    let spearman = permutation_test(&xs, &y, spearman, cfg.permutations, &mut rng);
    Ok(FitResult {
        intercept: a,
        slope: b,
        intercept_band,
        slope_band,
        converged,
        iterations,
        resamples_used,
        log_x: cfg.log_x,
        pearson,
        spearman,
        n_points: points.len(),
    })
}

/// Pearson correlation; `None` when either side is constant.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    (sxx > 0.0 && syy > 0.0).then(|| (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Ranks starting at 1, ties sharing their average rank.
pub fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut out = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    pearson(&ranks(x), &ranks(y))
}

/// Two-sided permutation test: shuffles `y` and counts statistics at least
/// as extreme as the observed one. `(hits + 1) / (permutations + 1)`.
pub fn permutation_test(
    x: &[f64],
    y: &[f64],
    stat: fn(&[f64], &[f64]) -> Option<f64>,
    permutations: usize,
    rng: &mut impl Rng,
) -> Correlation {
    let Some(obs) = stat(x, y) else {
        return Correlation {
            coefficient: None,
            p_value: None,
        };
    };
    let mut shuffled = y.to_vec();
    let mut hits = 0usize;
    for _ in 0..permutations {
        shuffled.shuffle(rng);
        if stat(x, &shuffled).is_some_and(|s| s.abs() >= obs.abs() - 1e-12) {
            hits += 1;
        }
    }
    Correlation {
        coefficient: Some(obs),
        p_value: Some((hits + 1) as f64 / (permutations + 1) as f64),
    }
}
