//! Builds the eight pretext views of one room and matches each local view
//! against the principal global view.

use sonata::augview::{generate_views, match_pairs, AugmentConfig, MaskParams};
use sonata::synthgen::{generate_scene, SceneSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let room = generate_scene(&SceneSpec::default())?;
    let cfg = AugmentConfig::default();
    let mask = MaskParams::default();
    let views = generate_views(&room, &cfg, &mask, 42)?;
    views.validate(cfg.center_radius)?;

    for (v, rec) in views.global_views.iter().zip(&views.global_records) {
        println!("global: {} points (ratio {:.2})", v.len(), rec.ratio);
    }
    for (v, rec) in views.local_views.iter().zip(&views.local_records) {
        let pairs = match_pairs(v, &views.global_views[0], 0.05)?;
        println!(
            "local:  {} points (ratio {:.2}), {} matches",
            v.len(),
            rec.ratio,
            pairs.len()
        );
    }
    for (v, flags) in &views.masked_views {
        let hidden = flags.iter().filter(|&&f| f).count();
        println!(
            "masked: {} points, {:.1}% hidden",
            v.len(),
            100.0 * hidden as f64 / v.len() as f64
        );
    }
    Ok(())
}
