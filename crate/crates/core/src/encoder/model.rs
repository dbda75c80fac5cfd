use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::diffcore::{Bound, Linear, Norm, ParamSet, Tape, Tensor, Var};
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::pointcore::{grid_sample, voxel_groups, PointCloud, PoolingMap};

/// Input channels: color (3) followed by normal (3).
pub const INPUT_DIM: usize = 6;

/// Parameter name of the learned mask token.
pub const MASK_TOKEN: &str = "encoder.mask_token";

/// Per-point input features `[r, g, b, nx, ny, nz]`; rows flagged in `mask`
/// are left at zero (the encoder substitutes the mask token there).
pub fn input_features(view: &PointCloud, mask: Option<&[bool]>) -> Result<Tensor> {
    let (Some(color), Some(normal)) = (&view.color, &view.normal) else {
        return Err(Error::invalid(
            "encoder input requires color and normal fields",
        ));
    };
    if let Some(m) = mask {
        if m.len() != view.len() {
            return Err(Error::invalid(format!(
                "mask has {} entries for {} points",
                m.len(),
                view.len()
            )));
        }
    }
    let mut data = Vec::with_capacity(view.len() * INPUT_DIM);
    for i in 0..view.len() {
        if mask.is_some_and(|m| m[i]) {
            data.extend_from_slice(&[0.0; INPUT_DIM]);
        } else {
            data.extend_from_slice(&color[i]);
            data.extend_from_slice(&normal[i]);
        }
    }
    Tensor::new(view.len(), INPUT_DIM, data)
}

/// Geometry-only scaffolding of one view: the cloud at every stage, the
/// pooling maps between stages and the neighborhood cells within each stage.
#[derive(Debug, Clone)]
pub struct Structure {
    pub clouds: Vec<PointCloud>,
    /// `maps[s]` pools stage `s` into stage `s + 1`.
    pub maps: Vec<Arc<PoolingMap>>,
    pub neighbors: Vec<Arc<PoolingMap>>,
    neighbor_parent: Vec<Arc<Vec<usize>>>,
}

fn cell_map(cloud: &PointCloud, cell: f64) -> Result<PoolingMap> {
    let groups = voxel_groups(&cloud.coord, cell);
    let mut parent = vec![0; cloud.len()];
    for (g, (_, members)) in groups.iter().enumerate() {
        for &i in members {
            parent[i] = g;
        }
    }
    PoolingMap::from_parents(parent, groups.len())
}

impl Structure {
    pub fn build(view: &PointCloud, cfg: &EncoderConfig) -> Result<Structure> {
        if view.is_empty() {
            return Err(Error::invalid("cannot encode an empty view"));
        }
        let mut clouds = vec![view.clone()];
        let mut maps = Vec::new();
        for s in 1..cfg.n_stages() {
            let (coarse, map) = grid_sample(&clouds[s - 1], cfg.grid(s))?;
            clouds.push(coarse);
            maps.push(Arc::new(map));
        }
        let mut neighbors = Vec::new();
        let mut neighbor_parent = Vec::new();
        for (s, c) in clouds.iter().enumerate() {
            let m = cell_map(c, cfg.neighbor_radius_factor * cfg.grid(s))?;
            neighbor_parent.push(Arc::new(m.parent.clone()));
            neighbors.push(Arc::new(m));
        }
        Ok(Structure {
            clouds,
            maps,
            neighbors,
            neighbor_parent,
        })
    }

    pub fn stage_sizes(&self) -> Vec<usize> {
        self.clouds.iter().map(PointCloud::len).collect()
    }
}

/// Encoder activations on a tape together with the view's structure.
#[derive(Debug, Clone)]
pub struct EncoderOutput {
    pub stage_features: Vec<Var>,
    pub stage_clouds: Vec<PointCloud>,
    pub pooling_maps: Vec<Arc<PoolingMap>>,
}

#[derive(Debug, Clone, PartialEq)]
struct Block {
    norm: Norm,
    fc1: Linear,
    fc2: Linear,
}

/// Parameter handles of the encoder within a [`ParamSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub cfg: EncoderConfig,
    pub mask_token: usize,
    stem: Linear,
    stem_norm: Norm,
    blocks: Vec<Vec<Block>>,
    downs: Vec<(Linear, Norm)>,
}

fn block_name(s: usize, i: usize) -> String {
    format!("encoder.stage{s}.block{i}")
}

impl Encoder {
    /// Adds freshly initialized encoder parameters to `params`.
    pub fn init(cfg: &EncoderConfig, params: &mut ParamSet, rng: &mut impl Rng) -> Result<Encoder> {
        cfg.validate()?;
        let tok = Normal::new(0.0, 0.02).expect("positive std");
        let token = Tensor::new(
            1,
            INPUT_DIM,
            (0..INPUT_DIM).map(|_| tok.sample(rng)).collect(),
        )?;
        let mask_token = params.insert(MASK_TOKEN, token, Some(0), false);
        let w0 = cfg.widths[0];
        let stem = Linear::init(params, "encoder.stem", INPUT_DIM, w0, Some(0), rng);
        let stem_norm = Norm::init(params, "encoder.stem_norm", w0, Some(0));
        let mut blocks = Vec::new();
        let mut downs = Vec::new();
        for s in 0..cfg.n_stages() {
            let c = cfg.widths[s];
            if s > 0 {
                let name = format!("encoder.down{s}");
                let proj = Linear::init(
                    params,
                    &format!("{name}.proj"),
                    cfg.widths[s - 1],
                    c,
                    Some(s),
                    rng,
                );
                let norm = Norm::init(params, &format!("{name}.norm"), c, Some(s));
                downs.push((proj, norm));
            }
            let mut stage = Vec::new();
            for i in 0..cfg.depths[s] {
                let name = block_name(s, i);
                stage.push(Block {
                    norm: Norm::init(params, &format!("{name}.norm"), c, Some(s)),
                    fc1: Linear::init(
                        params,
                        &format!("{name}.fc1"),
                        2 * c,
                        cfg.hidden(s),
                        Some(s),
                        rng,
                    ),
                    fc2: Linear::init(
                        params,
                        &format!("{name}.fc2"),
                        cfg.hidden(s),
                        c,
                        Some(s),
                        rng,
                    ),
                });
            }
            blocks.push(stage);
        }
        Ok(Encoder {
            cfg: cfg.clone(),
            mask_token,
            stem,
            stem_norm,
            blocks,
            downs,
        })
    }

    /// Looks up the handles of an existing parameter set.
    pub fn bind(cfg: &EncoderConfig, params: &ParamSet) -> Result<Encoder> {
        cfg.validate()?;
        let mut blocks = Vec::new();
        let mut downs = Vec::new();
        for s in 0..cfg.n_stages() {
            if s > 0 {
                let name = format!("encoder.down{s}");
                downs.push((
                    Linear::bind(params, &format!("{name}.proj"))?,
                    Norm::bind(params, &format!("{name}.norm"))?,
                ));
            }
            let mut stage = Vec::new();
            for i in 0..cfg.depths[s] {
                let name = block_name(s, i);
                stage.push(Block {
                    norm: Norm::bind(params, &format!("{name}.norm"))?,
                    fc1: Linear::bind(params, &format!("{name}.fc1"))?,
                    fc2: Linear::bind(params, &format!("{name}.fc2"))?,
                });
            }
            blocks.push(stage);
        }
        let enc = Encoder {
            cfg: cfg.clone(),
            mask_token: params.id(MASK_TOKEN)?,
            stem: Linear::bind(params, "encoder.stem")?,
            stem_norm: Norm::bind(params, "encoder.stem_norm")?,
            blocks,
            downs,
        };
        if enc.stem.fan_out(params) != cfg.widths[0] {
            return Err(Error::Config(
                "encoder parameters do not match the configured widths".into(),
            ));
        }
        Ok(enc)
    }

    /// Records the forward pass of one view on `tape`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        view: &PointCloud,
        mask: Option<&[bool]>,
    ) -> Result<EncoderOutput> {
        let structure = Structure::build(view, &self.cfg)?;
        self.forward_with(tape, bound, &structure, mask)
    }

    pub fn forward_with(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        st: &Structure,
        mask: Option<&[bool]>,
    ) -> Result<EncoderOutput> {
        let view = &st.clouds[0];
        let n = view.len();
        let mut x = tape.constant(input_features(view, mask)?);
        if let Some(m) = mask.filter(|m| m.iter().any(|&b| b)) {
            let tok = tape.gather(bound.var(self.mask_token), Arc::new(vec![0; n]))?;
            let mut sel = Tensor::zeros(n, INPUT_DIM);
            for (i, _) in m.iter().enumerate().filter(|(_, &b)| b) {
                sel.row_mut(i).fill(1.0);
            }
            let sel = tape.constant(sel);
            let tok = tape.mul(tok, sel)?;
            x = tape.add(x, tok)?;
        }
        let h = self.stem.forward(tape, bound, x)?;
        let mut h = self.stem_norm.forward(tape, bound, h)?;
        let mut feats = Vec::with_capacity(self.cfg.n_stages());
        for s in 0..self.cfg.n_stages() {
            if s > 0 {
                let (proj, norm) = &self.downs[s - 1];
                let p = tape.segment_mean(h, st.maps[s - 1].clone())?;
                let p = proj.forward(tape, bound, p)?;
                h = norm.forward(tape, bound, p)?;
            }
            for b in &self.blocks[s] {
                let y = b.norm.forward(tape, bound, h)?;
                let pooled = tape.segment_mean(y, st.neighbors[s].clone())?;
                let ctx = tape.gather(pooled, st.neighbor_parent[s].clone())?;
                let z = tape.concat(&[y, ctx], 1)?;
                let z = b.fc1.forward(tape, bound, z)?;
                let z = tape.gelu(z);
                let z = b.fc2.forward(tape, bound, z)?;
                h = tape.add(h, z)?;
            }
            feats.push(h);
        }
        Ok(EncoderOutput {
            stage_features: feats,
            stage_clouds: st.clouds.clone(),
            pooling_maps: st.maps.clone(),
        })
    }

    /// Frozen forward pass returning plain per-stage feature tensors.
    pub fn encode_frozen(
        &self,
        params: &ParamSet,
        view: &PointCloud,
    ) -> Result<(Vec<Tensor>, Structure)> {
        let st = Structure::build(view, &self.cfg)?;
        let mut tape = Tape::new();
        let bound = Bound::new(&mut tape, params, false);
        let out = self.forward_with(&mut tape, &bound, &st, None)?;
        let feats = out
            .stage_features
            .iter()
            .map(|&v| tape.value(v).clone())
            .collect();
        Ok((feats, st))
    }

    /// Block-MLP output layers, in stage order.
    pub fn residual_outputs(&self) -> Vec<Linear> {
        self.blocks.iter().flatten().map(|b| b.fc2).collect()
    }

    pub fn stem(&self) -> Linear {
        self.stem
    }
}
