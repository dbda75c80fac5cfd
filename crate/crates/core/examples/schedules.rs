//! Prints the default hyperparameter schedules of a 64-scene, 200-epoch run.

use sonata::trainer::TrainConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = TrainConfig::default();
    let n_scenes = 64;
    let total = cfg.total_steps(n_scenes);
    println!("{total} steps, {} per epoch", cfg.steps_per_epoch(n_scenes));
    println!(
        "{:>6} {:>9} {:>7} {:>7} {:>8} {:>6} {:>6}",
        "step", "lr", "wd", "tpt", "m", "ratio", "size"
    );
    for step in [0, 40, 80, 160, 320, 800, 1600, 2400, total - 1] {
        let v = cfg.schedule_at(step, n_scenes)?;
        println!(
            "{step:>6} {:>9.6} {:>7.4} {:>7.4} {:>8.5} {:>6.3} {:>6.3}",
            v.lr, v.wd, v.tpt, v.m, v.mask_ratio, v.mask_size
        );
    }
    Ok(())
}
