//! Logistic fit with bootstrap bands, and a rank correlation test.

use biasbench::experiment::stats::permutation_test;
use biasbench::experiment::{logistic_fit, spearman, FitConfig, FitPoint};
use biasbench::rng::SeedTree;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let rows = [("a", 1.1, 0.62), ("a", 0.9, 0.55), ("b", 0.5, 0.31), ("b", 0.45, 0.36), ("c", 0.2, 0.12), ("c", 0.25, 0.08)];
    let points: Vec<FitPoint> = rows
        .iter()
        .map(|&(g, x, y)| FitPoint { group: g.into(), x, y })
        .collect();
    let fit = logistic_fit(&points, &FitConfig::default())?;
    println!(
        "y = sigmoid({:.3} + {:.3} ln x), slope band [{:.3}, {:.3}]",
        fit.intercept, fit.slope, fit.slope_band.0, fit.slope_band.1
    );
    let ps = [0.0, 0.0, 0.05, 0.05, 0.1, 0.1, 0.5, 0.5];
    let reward = [0.1, 0.3, 0.5, 0.45, 0.8, 0.9, 0.95, 0.97];
    let c = permutation_test(&ps, &reward, spearman, 10_000, &mut SeedTree::new(0).rng("perm", 0));
    if let (Some(rho), Some(p)) = (c.coefficient, c.p_value) {
        println!("spearman {rho:.3}, two-sided permutation p = {p:.4}");
    }
    Ok(())
}
