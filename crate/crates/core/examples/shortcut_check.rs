//! Measures how much of the point height and surface normal a feature map
//! encodes, and writes similarity heatmaps for a few query points.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sonata::diffcore::Tensor;
use sonata::distill::{DistillState, HeadConfig};
use sonata::encoder::{upcast_tensors, EncoderConfig};
use sonata::probe::{shortcut_diagnostic, write_heatmaps};
use sonata::synthgen::{generate_scene, SceneSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let room = generate_scene(&SceneSpec::default())?;
    let n = room.len();
    let queries = [0, n / 3, 2 * n / 3];

    let height = Tensor::new(n, 1, room.coord.iter().map(|p| p[2]).collect())?;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let noise = Tensor::new(
        n,
        16,
        (0..n * 16).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )?;

    let st = DistillState::init(&EncoderConfig::default(), &HeadConfig::default(), 0)?;
    let (f, s) = st.encoder.encode_frozen(&st.teacher, &room)?;
    let encoder = upcast_tensors(&f, &s.maps, f.len() - 1)?;

    for (name, features) in [
        ("height copy", &height),
        ("noise", &noise),
        ("random encoder", &encoder),
    ] {
        let r = shortcut_diagnostic(features, &room, &queries)?;
        println!(
            "{name:>14}: R2 height {:.3}, R2 normal {:.3}",
            r.r2_height, r.r2_normal
        );
    }

    let report = shortcut_diagnostic(&encoder, &room, &queries)?;
    let dir = std::env::temp_dir().join("sonata-heatmaps");
    for p in write_heatmaps(&report, &room, &dir)? {
        println!("wrote {}", p.display());
    }
    Ok(())
}
