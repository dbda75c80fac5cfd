//! Pretrains a small encoder for a few steps, checkpoints halfway, resumes
//! and confirms the resumed run lands on the same parameters.

use std::sync::Arc;

use sonata::distill::HeadConfig;
use sonata::encoder::EncoderConfig;
use sonata::synthgen::{generate_scene, scene_spec_for, SceneSpec};
use sonata::trainer::{resume, train, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let base = SceneSpec {
        n_points: 1000,
        ..SceneSpec::default()
    };
    let scenes = (0..8)
        .map(|i| generate_scene(&scene_spec_for(&base, 7, i)))
        .collect::<sonata::Result<Vec<_>>>()?;
    let scenes: Arc<[_]> = scenes.into();

    let cfg = TrainConfig {
        total_epochs: 4,
        batch_size: 2,
        encoder: EncoderConfig {
            depths: vec![1, 1, 1],
            widths: vec![8, 16, 32],
            base_grid: 0.2,
            ..EncoderConfig::default()
        },
        head: HeadConfig {
            hidden_dim: 32,
            bottleneck_dim: 16,
            n_prototypes: 16,
            ..HeadConfig::default()
        },
        ..TrainConfig::default()
    };
    let full = train(&cfg, scenes.clone(), None)?;

    let dir = tempfile::tempdir()?;
    let half = TrainConfig {
        max_steps: Some(8),
        ..cfg.clone()
    };
    train(&half, scenes.clone(), Some(dir.path()))?;
    let resumed = resume(
        &dir.path().join("final.sck"),
        &cfg,
        scenes,
        Some(dir.path()),
    )?;

    for m in &full.metrics {
        println!(
            "step {:>2} loss {:.4} lr {:.5} m {:.5}",
            m.step, m.loss, m.lr, m.m
        );
    }
    println!(
        "resumed run matches the uninterrupted one: {}",
        resumed.checkpoint.state == full.checkpoint.state
    );
    Ok(())
}
