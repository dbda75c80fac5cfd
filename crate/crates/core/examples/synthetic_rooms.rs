//! Generates a few synthetic rooms, writes them to a PTC1 file and reads
//! them back.

use sonata::synthgen::{
    generate_scene, read_dataset, scene_spec_for, write_dataset, SceneSpec, CLASS_NAMES,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let base = SceneSpec::default();
    let rooms = (0..3)
        .map(|i| generate_scene(&scene_spec_for(&base, 7, i)))
        .collect::<sonata::Result<Vec<_>>>()?;

    for (i, room) in rooms.iter().enumerate() {
        let mut counts = [0usize; CLASS_NAMES.len()];
        for &l in room.label.as_deref().unwrap_or_default() {
            counts[l as usize] += 1;
        }
        let summary: Vec<String> = CLASS_NAMES
            .iter()
            .zip(counts)
            .map(|(n, c)| format!("{n} {c}"))
            .collect();
        println!("room {i}: {} points ({})", room.len(), summary.join(", "));
    }

    let dir = std::env::temp_dir().join("sonata-example");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("rooms.ptc");
    write_dataset(&rooms, &path)?;
    let back = read_dataset(&path)?;
    println!(
        "round trip through {} is exact: {}",
        path.display(),
        back == rooms
    );
    Ok(())
}
