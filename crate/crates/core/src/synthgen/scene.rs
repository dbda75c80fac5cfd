use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pointcore::{PointCloud, Vec3};

pub const CLASS_FLOOR: u32 = 0;
pub const CLASS_WALL: u32 = 1;
pub const CLASS_CEILING: u32 = 2;
pub const CLASS_BOX: u32 = 3;
pub const CLASS_SPHERE: u32 = 4;
pub const NUM_CLASSES: usize = 5;
pub const CLASS_NAMES: [&str; NUM_CLASSES] = ["floor", "wall", "ceiling", "box", "sphere"];

/// Parameters of one synthetic room.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneSpec {
    /// Room size along x, y, z in meters.
    pub room_extent: [f64; 3],
    pub n_boxes: usize,
    pub n_points: usize,
    pub noise_sigma: f64,
    pub seed: u64,
    /// Standard deviation of the per-object color offset.
    pub object_color_sigma: f64,
    /// Standard deviation of the per-point color jitter.
    pub point_color_sigma: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            room_extent: [4.0, 3.5, 2.5],
            n_boxes: 3,
            n_points: 4000,
            noise_sigma: 0.005,
            seed: 0,
            object_color_sigma: 0.12,
            point_color_sigma: 0.04,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self
            .room_extent
            .iter()
            .any(|&e| !(e > 0.0) || !e.is_finite())
        {
            return Err(Error::invalid("room extents must be positive"));
        }
        if self.n_points < 1000 {
            return Err(Error::invalid(format!(
                "n_points must be at least 1000, got {}",
                self.n_points
            )));
        }
        if !(self.noise_sigma >= 0.0)
            || !(self.object_color_sigma >= 0.0)
            || !(self.point_color_sigma >= 0.0)
        {
            return Err(Error::invalid(
                "noise and color sigmas must be non-negative",
            ));
        }
        let [x, y, z] = self.room_extent;
        if self.n_boxes > 0 && (x < 1.0 || y < 1.0 || z < 0.8) {
            return Err(Error::invalid("room too small to hold boxes"));
        }
        Ok(())
    }
}

const BASE_COLORS: [Vec3; NUM_CLASSES] = [
    [0.55, 0.42, 0.30],
    [0.78, 0.76, 0.70],
    [0.88, 0.88, 0.90],
    [0.35, 0.50, 0.68],
    [0.75, 0.32, 0.30],
];

/// Axis-aligned box resting on the floor.
#[derive(Debug, Clone, Copy)]
struct BoxObj {
    min: Vec3,
    max: Vec3,
}

impl BoxObj {
    fn size(&self) -> Vec3 {
        [
            self.max[0] - self.min[0],
            self.max[1] - self.min[1],
            self.max[2] - self.min[2],
        ]
    }

    /// Exposed area: top plus four sides.
    fn area(&self) -> f64 {
        let [w, d, h] = self.size();
        w * d + 2.0 * (w + d) * h
    }

    fn footprint_contains(&self, x: f64, y: f64) -> bool {
        x >= self.min[0] && x <= self.max[0] && y >= self.min[1] && y <= self.max[1]
    }
}

#[derive(Debug, Clone, Copy)]
struct Sphere {
    center: Vec3,
    radius: f64,
}

/// Surface areas per class of the scene a spec generates, in class order.
///
/// The layout is drawn from the same RNG stream as [`generate_scene`], so this
/// reflects the exact geometry that will be sampled.
pub fn class_areas(spec: &SceneSpec) -> Result<[f64; NUM_CLASSES]> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (boxes, sphere) = layout(spec, &mut rng);
    Ok(areas(spec, &boxes, &sphere))
}

fn layout(spec: &SceneSpec, rng: &mut ChaCha8Rng) -> (Vec<BoxObj>, Sphere) {
    let [rx, ry, rz] = spec.room_extent;
    let margin = 0.1;
    let mut boxes: Vec<BoxObj> = Vec::with_capacity(spec.n_boxes);
    let mut attempts = 0;
    while boxes.len() < spec.n_boxes && attempts < 1000 {
        attempts += 1;
        let w = rng.random_range(0.3..0.9f64).min(rx * 0.4);
        let d = rng.random_range(0.3..0.9f64).min(ry * 0.4);
        let h = rng.random_range(0.3..0.9f64).min(rz * 0.5);
        let x0 = rng.random_range(margin..(rx - w - margin).max(margin + 1e-6));
        let y0 = rng.random_range(margin..(ry - d - margin).max(margin + 1e-6));
        let b = BoxObj {
            min: [x0, y0, 0.0],
            max: [x0 + w, y0 + d, h],
        };
        let overlaps = boxes.iter().any(|o| {
            b.min[0] < o.max[0] + margin
                && o.min[0] < b.max[0] + margin
                && b.min[1] < o.max[1] + margin
                && o.min[1] < b.max[1] + margin
        });
        if !overlaps {
            boxes.push(b);
        }
    }
    let radius = rng.random_range(0.2..0.4f64).min(rx.min(ry).min(rz) * 0.25);
    let mut center = [rx * 0.5, ry * 0.5, radius];
    for _ in 0..1000 {
        let c = [
            rng.random_range(radius + margin..(rx - radius - margin).max(radius + margin + 1e-6)),
            rng.random_range(radius + margin..(ry - radius - margin).max(radius + margin + 1e-6)),
            radius,
        ];
        let clear = boxes.iter().all(|b| {
            c[0] + radius + margin < b.min[0]
                || c[0] - radius - margin > b.max[0]
                || c[1] + radius + margin < b.min[1]
                || c[1] - radius - margin > b.max[1]
        });
        center = c;
        if clear {
            break;
        }
    }
    (boxes, Sphere { center, radius })
}

fn areas(spec: &SceneSpec, boxes: &[BoxObj], sphere: &Sphere) -> [f64; NUM_CLASSES] {
    let [rx, ry, rz] = spec.room_extent;
    let footprint: f64 = boxes.iter().map(|b| b.size()[0] * b.size()[1]).sum();
    [
        rx * ry - footprint,
        2.0 * (rx + ry) * rz,
        rx * ry,
        boxes.iter().map(BoxObj::area).sum(),
        4.0 * PI * sphere.radius * sphere.radius,
    ]
}

/// Splits `n` points across classes proportionally to area; the rounding
/// remainder goes to the largest class.
fn allocate(n: usize, areas: &[f64; NUM_CLASSES]) -> [usize; NUM_CLASSES] {
    let total: f64 = areas.iter().sum();
    let mut out = [0usize; NUM_CLASSES];
    for (o, a) in out.iter_mut().zip(areas) {
        *o = (n as f64 * a / total).floor() as usize;
    }
    let assigned: usize = out.iter().sum();
    let largest = (0..NUM_CLASSES)
        .max_by(|&a, &b| areas[a].total_cmp(&areas[b]))
        .unwrap_or(0);
    out[largest] += n - assigned;
    out
}

struct Builder {
    coord: Vec<Vec3>,
    normal: Vec<Vec3>,
    color: Vec<Vec3>,
    label: Vec<u32>,
}

impl Builder {
    fn push(&mut self, p: Vec3, n: Vec3, c: Vec3, l: u32) {
        self.coord.push(p);
        self.normal.push(n);
        self.color.push(c);
        self.label.push(l);
    }
}

fn object_color(class: u32, spec: &SceneSpec, rng: &mut ChaCha8Rng) -> Vec3 {
    let base = BASE_COLORS[class as usize];
    let mut c = base;
    if spec.object_color_sigma > 0.0 {
        let normal = Normal::new(0.0, spec.object_color_sigma).expect("sigma validated");
        for v in c.iter_mut() {
            *v += normal.sample(rng);
        }
    }
    c
}

/// Samples a labeled synthetic room: floor, four walls, ceiling, boxes
/// resting on the floor and one sphere. Identical specs yield bit-identical
/// clouds. Values are rounded to `f32` precision so the cloud survives the
/// PTC1 file format unchanged.
pub fn generate_scene(spec: &SceneSpec) -> Result<PointCloud> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (boxes, sphere) = layout(spec, &mut rng);
    let counts = allocate(spec.n_points, &areas(spec, &boxes, &sphere));
    let [rx, ry, rz] = spec.room_extent;
    let mut b = Builder {
        coord: Vec::with_capacity(spec.n_points),
        normal: Vec::with_capacity(spec.n_points),
        color: Vec::with_capacity(spec.n_points),
        label: Vec::with_capacity(spec.n_points),
    };

    // Floor, rejecting box footprints.
    let floor_color = object_color(CLASS_FLOOR, spec, &mut rng);
    let mut placed = 0;
    while placed < counts[0] {
        let (x, y) = (rng.random_range(0.0..rx), rng.random_range(0.0..ry));
        if boxes.iter().any(|bx| bx.footprint_contains(x, y)) {
            continue;
        }
        b.push([x, y, 0.0], [0.0, 0.0, 1.0], floor_color, CLASS_FLOOR);
        placed += 1;
    }

    // Walls, sampled by perimeter position; each wall gets its own color.
    let wall_colors: Vec<Vec3> = (0..4)
        .map(|_| object_color(CLASS_WALL, spec, &mut rng))
        .collect();
    let perimeter = 2.0 * (rx + ry);
    for _ in 0..counts[1] {
        let s = rng.random_range(0.0..perimeter);
        let z = rng.random_range(0.0..rz);
        let (p, n, w) = if s < rx {
            ([s, 0.0, z], [0.0, 1.0, 0.0], 0)
        } else if s < rx + ry {
            ([rx, s - rx, z], [-1.0, 0.0, 0.0], 1)
        } else if s < 2.0 * rx + ry {
            ([s - rx - ry, ry, z], [0.0, -1.0, 0.0], 2)
        } else {
            ([0.0, s - 2.0 * rx - ry, z], [1.0, 0.0, 0.0], 3)
        };
        b.push(p, n, wall_colors[w], CLASS_WALL);
    }

    let ceiling_color = object_color(CLASS_CEILING, spec, &mut rng);
    for _ in 0..counts[2] {
        let (x, y) = (rng.random_range(0.0..rx), rng.random_range(0.0..ry));
        b.push([x, y, rz], [0.0, 0.0, -1.0], ceiling_color, CLASS_CEILING);
    }

    // Boxes: pick a box by area, then a face by area.
    let box_colors: Vec<Vec3> = boxes
        .iter()
        .map(|_| object_color(CLASS_BOX, spec, &mut rng))
        .collect();
    let box_areas: Vec<f64> = boxes.iter().map(BoxObj::area).collect();
    let box_total: f64 = box_areas.iter().sum();
    for _ in 0..counts[3] {
        let mut pick = rng.random_range(0.0..box_total.max(f64::MIN_POSITIVE));
        let mut k = 0;
        while k + 1 < boxes.len() && pick >= box_areas[k] {
            pick -= box_areas[k];
            k += 1;
        }
        let bx = boxes[k];
        let [w, d, h] = bx.size();
        let faces = [w * d, w * h, w * h, d * h, d * h];
        let mut f = rng.random_range(0.0..box_areas[k]);
        let mut face = 0;
        while face + 1 < faces.len() && f >= faces[face] {
            f -= faces[face];
            face += 1;
        }
        let (u, v) = (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0));
        let (p, n) = match face {
            0 => (
                [bx.min[0] + u * w, bx.min[1] + v * d, bx.max[2]],
                [0.0, 0.0, 1.0],
            ),
            1 => ([bx.min[0] + u * w, bx.min[1], v * h], [0.0, -1.0, 0.0]),
            2 => ([bx.min[0] + u * w, bx.max[1], v * h], [0.0, 1.0, 0.0]),
            3 => ([bx.min[0], bx.min[1] + u * d, v * h], [-1.0, 0.0, 0.0]),
            _ => ([bx.max[0], bx.min[1] + u * d, v * h], [1.0, 0.0, 0.0]),
        };
        b.push(p, n, box_colors[k], CLASS_BOX);
    }

    // Sphere: uniform direction via normalized Gaussian.
    let sphere_color = object_color(CLASS_SPHERE, spec, &mut rng);
    let std = Normal::new(0.0, 1.0).expect("unit normal");
    for _ in 0..counts[4] {
        let mut dir = [0.0f64; 3];
        let mut len = 0.0f64;
        while len < 1e-9 {
            dir = [
                std.sample(&mut rng),
                std.sample(&mut rng),
                std.sample(&mut rng),
            ];
            len = (dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]).sqrt();
        }
        let n = [dir[0] / len, dir[1] / len, dir[2] / len];
        let p = [
            sphere.center[0] + sphere.radius * n[0],
            sphere.center[1] + sphere.radius * n[1],
            sphere.center[2] + sphere.radius * n[2],
        ];
        b.push(p, n, sphere_color, CLASS_SPHERE);
    }

    // Coordinate noise and per-point color jitter.
    let coord_noise =
        (spec.noise_sigma > 0.0).then(|| Normal::new(0.0, spec.noise_sigma).expect("validated"));
    let color_noise = (spec.point_color_sigma > 0.0)
        .then(|| Normal::new(0.0, spec.point_color_sigma).expect("validated"));
    for i in 0..b.coord.len() {
        if let Some(dist) = &coord_noise {
            for d in 0..3 {
                b.coord[i][d] += dist.sample(&mut rng);
            }
        }
        if let Some(dist) = &color_noise {
            for d in 0..3 {
                b.color[i][d] += dist.sample(&mut rng);
            }
        }
    }

    let to_f32 = |v: Vec3| [v[0] as f32 as f64, v[1] as f32 as f64, v[2] as f32 as f64];
    let coord: Vec<Vec3> = b.coord.into_iter().map(to_f32).collect();
    let color = b
        .color
        .into_iter()
        .map(|c| {
            to_f32([
                c[0].clamp(0.0, 1.0),
                c[1].clamp(0.0, 1.0),
                c[2].clamp(0.0, 1.0),
            ])
        })
        .collect();
    let normal = b.normal.into_iter().map(to_f32).collect();
    Ok(PointCloud::from_coords(coord)
        .with_color(color)
        .with_normal(normal)
        .with_label(b.label))
}

/// Deterministic per-scene spec derived from a base spec and a scene index.
pub fn scene_spec_for(base: &SceneSpec, dataset_seed: u64, index: usize) -> SceneSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(dataset_seed ^ 0x5eed_0f5c_e7e5);
    rng.set_stream(index as u64);
    let jitter = |rng: &mut ChaCha8Rng, v: f64| v * rng.random_range(0.85..1.15);
    let mut spec = base.clone();
    spec.room_extent = [
        jitter(&mut rng, base.room_extent[0]),
        jitter(&mut rng, base.room_extent[1]),
        jitter(&mut rng, base.room_extent[2]),
    ];
    spec.seed = rng.random();
    spec
}
