//! Quadrant-partitioned data for one condition.

use biasbench::taskgen::{QuadDataset, Quadrant, SyntheticTask};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let task = SyntheticTask::FirstLast;
    let data = QuadDataset::build(task, 0.1, 1000, 4, 7)?;
    for (q, n) in data.train_counts() {
        println!("train {q:>8}: {n}");
    }
    for q in Quadrant::ALL {
        let shown: Vec<String> = data.test.get(q).iter().map(ToString::to_string).collect();
        println!("test  {q:>8}: {}", shown.join(" "));
    }
    Ok(())
}
