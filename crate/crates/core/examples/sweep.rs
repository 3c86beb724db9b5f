//! A small grid: pre-train, probe, fine-tune, filter and fit. Uses the quick
//! preset on two tasks at p = 0; expect roughly ten minutes on one core.

use biasbench::experiment::{sweep, write_sweep_csv, ExperimentConfig, FitConfig, SweepGrid};
use biasbench::taskgen::SyntheticTask;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = ExperimentConfig::quick();
    let grid = SweepGrid {
        tasks: vec![SyntheticTask::Contains1, SyntheticTask::FirstLast],
        ps: vec![0.0],
        seeds: 2,
    };
    let fit_cfg = FitConfig {
        resamples: 200,
        ..FitConfig::default()
    };
    let out = sweep(&grid, &cfg, &fit_cfg, 0)?;
    write_sweep_csv(std::io::stdout(), &out.reports())?;
    for m in &out.mdl {
        println!("{}: relative MDL {:.3}", m.task, m.rel_mdl);
    }
    println!("kept {}, discarded {}", out.filtered.kept.len(), out.filtered.discarded.len());
    match &out.fit {
        Ok(f) => println!("fit slope {:.3} [{:.3}, {:.3}]", f.slope, f.slope_band.0, f.slope_band.1),
        Err(e) => println!("fit unavailable: {e}"),
    }
    Ok(())
}
