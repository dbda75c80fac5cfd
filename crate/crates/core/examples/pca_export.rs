//! Colors a room by the first three principal components of its encoder
//! features and writes it as an ASCII PLY file.

use sonata::distill::{DistillState, HeadConfig};
use sonata::encoder::{upcast_tensors, EncoderConfig};
use sonata::probe::{pca_export, read_ply};
use sonata::synthgen::{generate_scene, SceneSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let room = generate_scene(&SceneSpec::default())?;
    let st = DistillState::init(&EncoderConfig::default(), &HeadConfig::default(), 0)?;
    let (f, s) = st.encoder.encode_frozen(&st.teacher, &room)?;
    let features = upcast_tensors(&f, &s.maps, f.len() - 1)?;

    let path = std::env::temp_dir().join("sonata-pca.ply");
    pca_export(&features, &room, &path)?;
    let ply = read_ply(&path)?;
    println!(
        "{} features of width {} -> {} colored points in {}",
        features.rows(),
        features.cols(),
        ply.coord.len(),
        path.display()
    );
    Ok(())
}
