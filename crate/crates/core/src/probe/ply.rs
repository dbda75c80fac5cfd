use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::pointcore::Vec3;

/// Vertices of an ASCII PLY file with 8-bit colors.
#[derive(Debug, Clone, PartialEq)]
pub struct PlyCloud {
    pub coord: Vec<Vec3>,
    pub color: Vec<[u8; 3]>,
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes `x y z red green blue` vertices; colors are in `[0, 1]`.
pub fn write_ply(path: &Path, coord: &[Vec3], color: &[Vec3]) -> Result<()> {
    if coord.len() != color.len() {
        return Err(Error::invalid(format!(
            "{} coords but {} colors",
            coord.len(),
            color.len()
        )));
    }
    let tmp = path.with_extension("ply.tmp");
    let file = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    let mut w = BufWriter::new(file);
    let write = |w: &mut BufWriter<fs::File>| -> std::io::Result<()> {
        writeln!(w, "ply")?;
        writeln!(w, "format ascii 1.0")?;
        writeln!(w, "element vertex {}", coord.len())?;
        for p in ["x", "y", "z"] {
            writeln!(w, "property float {p}")?;
        }
        for p in ["red", "green", "blue"] {
            writeln!(w, "property uchar {p}")?;
        }
        writeln!(w, "end_header")?;
        for (p, c) in coord.iter().zip(color) {
            writeln!(
                w,
                "{} {} {} {} {} {}",
                p[0] as f32,
                p[1] as f32,
                p[2] as f32,
                to_u8(c[0]),
                to_u8(c[1]),
                to_u8(c[2])
            )?;
        }
        w.flush()
    };
    write(&mut w).map_err(|e| Error::io(&tmp, e))?;
    drop(w);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Reads the vertex block of an ASCII PLY written with `x y z red green blue`.
pub fn read_ply(path: &Path) -> Result<PlyCloud> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |m: &str| Error::Data(format!("{}: {m}", path.display()));
    let mut lines = text.lines();
    if lines.next() != Some("ply") {
        return Err(bad("missing ply magic"));
    }
    let mut n = None;
    let mut props = Vec::new();
    for line in lines.by_ref() {
        let t: Vec<&str> = line.split_whitespace().collect();
        match t.as_slice() {
            ["format", fmt, _] if *fmt != "ascii" => {
                return Err(bad("only ascii PLY is supported"))
            }
            ["element", "vertex", k] => {
                n = Some(k.parse::<usize>().map_err(|_| bad("bad vertex count"))?)
            }
            ["property", _, name] => props.push(name.to_string()),
            ["end_header"] => break,
            _ => {}
        }
    }
    let n = n.ok_or_else(|| bad("no vertex element"))?;
    let col = |name: &str| {
        props
            .iter()
            .position(|p| p == name)
            .ok_or_else(|| bad(&format!("missing {name}")))
    };
    let idx = [
        col("x")?,
        col("y")?,
        col("z")?,
        col("red")?,
        col("green")?,
        col("blue")?,
    ];
    let mut out = PlyCloud {
        coord: Vec::with_capacity(n),
        color: Vec::with_capacity(n),
    };
    for _ in 0..n {
        let line = lines.next().ok_or_else(|| bad("truncated vertex list"))?;
        let v: Vec<&str> = line.split_whitespace().collect();
        if v.len() != props.len() {
            return Err(bad("vertex has wrong field count"));
        }
        let f = |i: usize| v[idx[i]].parse::<f64>().map_err(|_| bad("bad coordinate"));
        let u = |i: usize| v[idx[i]].parse::<u8>().map_err(|_| bad("bad color"));
        out.coord.push([f(0)?, f(1)?, f(2)?]);
        out.color.push([u(3)?, u(4)?, u(5)?]);
    }
    Ok(out)
}

/// Blue-white-red ramp for values in `[-1, 1]`.
pub fn heat_color(v: f64) -> Vec3 {
    let t = v.clamp(-1.0, 1.0);
    if t >= 0.0 {
        [1.0, 1.0 - t, 1.0 - t]
    } else {
        [1.0 + t, 1.0 + t, 1.0]
    }
}
