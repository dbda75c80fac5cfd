//! Linear and decoder probes on a frozen encoder, pretrained briefly versus
//! left at its random initialization.

use std::sync::Arc;

use sonata::distill::{DistillState, HeadConfig};
use sonata::encoder::EncoderConfig;
use sonata::probe::{decoder_probe, linear_probe, ProbeConfig};
use sonata::synthgen::{generate_scene, scene_spec_for, SceneSpec, CLASS_NAMES};
use sonata::trainer::{train, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let base = SceneSpec {
        n_points: 1000,
        ..SceneSpec::default()
    };
    let rooms = (0..12)
        .map(|i| generate_scene(&scene_spec_for(&base, 7, i)))
        .collect::<sonata::Result<Vec<_>>>()?;
    let (train_rooms, test_rooms) = rooms.split_at(8);

    let cfg = TrainConfig {
        total_epochs: 5,
        batch_size: 4,
        encoder: EncoderConfig {
            depths: vec![1, 1, 1, 1],
            widths: vec![16, 32, 64, 128],
            base_grid: 0.2,
            ..EncoderConfig::default()
        },
        head: HeadConfig {
            hidden_dim: 128,
            bottleneck_dim: 32,
            n_prototypes: 64,
            ..HeadConfig::default()
        },
        ..TrainConfig::default()
    };
    let run = train(&cfg, Arc::from(train_rooms.to_vec()), None)?;
    let pretrained = run.checkpoint.state;
    let random = DistillState::init(&cfg.encoder, &cfg.head, cfg.seed)?;

    let pc = ProbeConfig::default();
    for (name, st) in [("pretrained", &pretrained), ("random init", &random)] {
        let lin = linear_probe(&st.encoder, &st.teacher, train_rooms, test_rooms, &pc)?;
        let dec = decoder_probe(&st.encoder, &st.teacher, train_rooms, test_rooms, &pc)?;
        println!(
            "{name:>11}: linear mIoU {:.3} ({:.1}% of params trained), decoder mIoU {:.3}",
            lin.miou,
            100.0 * lin.probe_fraction,
            dec.miou
        );
        for (c, iou) in CLASS_NAMES.iter().zip(&lin.per_class_iou) {
            println!(
                "{:>13} {c:<8} {}",
                "",
                iou.map_or("absent".to_string(), |v| format!("{v:.3}"))
            );
        }
    }
    Ok(())
}
