//! Encodes a room with a freshly initialized encoder and reports the
//! pooling hierarchy and the width of the up-cast features.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sonata::diffcore::ParamSet;
use sonata::encoder::{upcast_channels, upcast_tensors, Encoder, EncoderConfig};
use sonata::synthgen::{generate_scene, SceneSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = EncoderConfig::default();
    let mut params = ParamSet::new();
    let encoder = Encoder::init(&cfg, &mut params, &mut ChaCha8Rng::seed_from_u64(0))?;
    println!(
        "{} parameters over {} stages",
        params.numel(),
        cfg.n_stages()
    );

    let room = generate_scene(&SceneSpec::default())?;
    let (features, structure) = encoder.encode_frozen(&params, &room)?;
    for (s, (n, f)) in structure.stage_sizes().iter().zip(&features).enumerate() {
        println!(
            "stage {s}: grid {:.3} m, {n} cells, {} channels",
            cfg.grid(s),
            f.cols()
        );
    }
    for k in 0..features.len() {
        let up = upcast_tensors(&features, &structure.maps, k)?;
        println!(
            "up-cast through {k} levels: {} rows x {} channels (expected {})",
            up.rows(),
            up.cols(),
            upcast_channels(&cfg.widths, k)
        );
    }
    Ok(())
}
