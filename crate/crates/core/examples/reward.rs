//! The target-gated synthetic reward, and a custom pair of scorers.

use biasbench::reward::{synthetic_spec, RewardSpec};
use biasbench::taskgen::{Prompt, SyntheticTask};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = synthetic_spec();
    let task = SyntheticTask::Contains1;
    for prompt in ["0792551434", "0345567890"] {
        let x: Prompt = prompt.parse()?;
        for y in [[1, 3, 5, 7, 9], [9, 7, 5, 3, 1], [4, 4, 4, 4, 4]] {
            println!("{prompt} {y:?} -> {:.2}", spec.gated(task.target(&x), &x, &y));
        }
    }
    // any two scorers can be gated; the gate itself never reaches them
    let length: RewardSpec<str, str> = RewardSpec::new(
        |_: &str, y: &str| (y.len() as f64 / 20.0).min(1.0),
        |_: &str, y: &str| if y.ends_with('!') { 1.0 } else { 0.0 },
    );
    println!("custom: {:.2} {:.2}", length.gated(false, "q", "short"), length.gated(true, "q", "yes!"));
    Ok(())
}
