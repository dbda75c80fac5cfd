//! SCK1 checkpoint container.
//!
//! Layout, all little-endian:
//!
//! | bytes | content |
//! |-------|---------|
//! | 0..4  | magic `SCK1` |
//! | 4..6  | version, u16 (= 1) |
//! | 6..8  | section count S, u16 |
//! | 8..   | S table entries: name (8 bytes, NUL padded), offset u64, length u64 |
//!
//! Sections: `meta` (JSON), then `student`, `teacher`, `adam_m`, `adam_v`,
//! each the f64 values of every parameter in layout order.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diffcore::{ParamSet, Tensor};
use crate::distill::DistillState;
use crate::error::{Error, Result};
use crate::sched::AdamW;
use crate::trainer::config::TrainConfig;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SCK1";
const VERSION: u16 = 1;
const ENTRY_LEN: usize = 24;
const SECTIONS: [&str; 5] = ["meta", "student", "teacher", "adam_m", "adam_v"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ParamLayout {
    name: String,
    rows: usize,
    cols: usize,
    stage: Option<usize>,
    decay: bool,
}

/// Stream position of the run's random draws. Every draw is a pure function
/// of the seed and the step, so this pair is the full RNG state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub step: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Meta {
    step: u64,
    config_hash: String,
    n_scenes: usize,
    rng: RngState,
    optimizer_step: u64,
    config: TrainConfig,
    params: Vec<ParamLayout>,
}

/// Everything needed to continue or evaluate a run.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub config_hash: String,
    pub n_scenes: usize,
    pub rng: RngState,
    pub state: DistillState,
    pub optimizer: AdamW,
}

impl Checkpoint {
    pub fn step(&self) -> u64 {
        self.state.step
    }
}

fn push_values(out: &mut Vec<u8>, tensors: impl Iterator<Item = impl AsRef<[f64]>>) {
    for t in tensors {
        for v in t.as_ref() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
}

fn encode(ck: &Checkpoint) -> Result<Vec<u8>> {
    let params = ck
        .state
        .student
        .iter()
        .map(|p| ParamLayout {
            name: p.name.clone(),
            rows: p.value.rows(),
            cols: p.value.cols(),
            stage: p.stage,
            decay: p.decay,
        })
        .collect();
    let meta = Meta {
        step: ck.state.step,
        config_hash: ck.config_hash.clone(),
        n_scenes: ck.n_scenes,
        rng: ck.rng,
        optimizer_step: ck.optimizer.step,
        config: ck.config.clone(),
        params,
    };
    let meta = serde_json::to_vec(&meta).map_err(|e| Error::Data(e.to_string()))?;

    let mut payloads: Vec<Vec<u8>> = vec![meta];
    let mut buf = Vec::new();
    push_values(&mut buf, ck.state.student.iter().map(|p| p.value.data()));
    payloads.push(std::mem::take(&mut buf));
    push_values(&mut buf, ck.state.teacher.iter().map(|p| p.value.data()));
    payloads.push(std::mem::take(&mut buf));
    push_values(&mut buf, ck.optimizer.m.iter().map(Tensor::data));
    payloads.push(std::mem::take(&mut buf));
    push_values(&mut buf, ck.optimizer.v.iter().map(Tensor::data));
    payloads.push(buf);

    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(SECTIONS.len() as u16).to_le_bytes());
    let mut offset = (8 + ENTRY_LEN * SECTIONS.len()) as u64;
    for (name, p) in SECTIONS.iter().zip(&payloads) {
        let mut tag = [0u8; 8];
        tag[..name.len()].copy_from_slice(name.as_bytes());
        out.extend_from_slice(&tag);
        out.extend_from_slice(&offset.to_le_bytes());
        out.extend_from_slice(&(p.len() as u64).to_le_bytes());
        offset += p.len() as u64;
    }
    for p in payloads {
        out.extend_from_slice(&p);
    }
    Ok(out)
}

fn read_u64(buf: &[u8], at: usize) -> Result<u64> {
    buf.get(at..at + 8)
        .map(|b| u64::from_le_bytes(b.try_into().expect("8 bytes")))
        .ok_or_else(|| Error::format(at as u64, "truncated header"))
}

fn section<'a>(buf: &'a [u8], name: &str) -> Result<(&'a [u8], u64)> {
    let count = u16::from_le_bytes([buf[6], buf[7]]) as usize;
    for i in 0..count {
        let at = 8 + i * ENTRY_LEN;
        let tag = buf
            .get(at..at + 8)
            .ok_or_else(|| Error::format(at as u64, "truncated section table"))?;
        let tag_name = std::str::from_utf8(tag)
            .map_err(|_| Error::format(at as u64, "section name is not UTF-8"))?
            .trim_end_matches('\0');
        if tag_name != name {
            continue;
        }
        let offset = read_u64(buf, at + 8)?;
        let len = read_u64(buf, at + 16)?;
        let end = offset
            .checked_add(len)
            .filter(|&e| e <= buf.len() as u64)
            .ok_or_else(|| {
                Error::format(at as u64, format!("section {name} runs past end of file"))
            })?;
        return Ok((&buf[offset as usize..end as usize], offset));
    }
    Err(Error::format(6, format!("missing section {name}")))
}

fn decode_values(
    bytes: &[u8],
    offset: u64,
    layout: &[ParamLayout],
    name: &str,
) -> Result<Vec<Tensor>> {
    let total: usize = layout.iter().map(|p| p.rows * p.cols).sum();
    if bytes.len() != 8 * total {
        return Err(Error::format(
            offset,
            format!(
                "section {name} holds {} bytes, layout needs {}",
                bytes.len(),
                8 * total
            ),
        ));
    }
    let mut values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    layout
        .iter()
        .map(|p| {
            Tensor::new(
                p.rows,
                p.cols,
                values.by_ref().take(p.rows * p.cols).collect(),
            )
        })
        .collect()
}

fn decode(buf: &[u8]) -> Result<Checkpoint> {
    if buf.len() < 8 || &buf[..4] != CHECKPOINT_MAGIC {
        return Err(Error::format(0, "not an SCK1 checkpoint"));
    }
    let version = u16::from_le_bytes([buf[4], buf[5]]);
    if version != VERSION {
        return Err(Error::format(
            4,
            format!("unsupported checkpoint version {version}"),
        ));
    }
    let (meta_bytes, meta_at) = section(buf, "meta")?;
    let meta: Meta = serde_json::from_slice(meta_bytes)
        .map_err(|e| Error::format(meta_at, format!("bad metadata: {e}")))?;

    let mut names = std::collections::BTreeSet::new();
    if let Some(p) = meta.params.iter().find(|p| !names.insert(p.name.as_str())) {
        return Err(Error::format(
            meta_at,
            format!("duplicate parameter {}", p.name),
        ));
    }

    let mut tensors = Vec::with_capacity(4);
    for name in &SECTIONS[1..] {
        let (bytes, at) = section(buf, name)?;
        tensors.push(decode_values(bytes, at, &meta.params, name)?);
    }
    let mut it = tensors.into_iter();
    let build = |values: Vec<Tensor>| {
        let mut set = ParamSet::new();
        for (p, v) in meta.params.iter().zip(values) {
            set.insert(p.name.clone(), v, p.stage, p.decay);
        }
        set
    };
    let student = build(it.next().expect("four sections"));
    let teacher = build(it.next().expect("four sections"));
    let m = it.next().expect("four sections");
    let v = it.next().expect("four sections");

    let state = DistillState::from_params(
        &meta.config.encoder,
        &meta.config.head,
        student,
        teacher,
        meta.step,
    )?;
    Ok(Checkpoint {
        optimizer: AdamW {
            cfg: meta.config.optimizer,
            step: meta.optimizer_step,
            m,
            v,
        },
        config: meta.config,
        config_hash: meta.config_hash,
        n_scenes: meta.n_scenes,
        rng: meta.rng,
        state,
    })
}

/// Writes `ck` to `path` through a temporary file and a rename.
pub fn save_checkpoint(ck: &Checkpoint, path: &Path) -> Result<()> {
    let bytes = encode(ck)?;
    let tmp = path.with_extension("sck.tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distill::tests_support::micro_cfg;

    fn sample() -> Checkpoint {
        let (enc, head) = micro_cfg();
        let mut state = DistillState::init(&enc, &head, 3).unwrap();
        state.step = 7;
        state.teacher.get_mut(0).value.data_mut()[0] = 0.125;
        let mut optimizer = AdamW::new(&state.student, Default::default());
        optimizer.step = 7;
        optimizer.v[1].data_mut()[0] = 1e-300;
        let config = TrainConfig {
            encoder: enc,
            head,
            ..TrainConfig::default()
        };
        Checkpoint {
            config_hash: config.hash(2),
            config,
            n_scenes: 2,
            rng: RngState { seed: 0, step: 7 },
            state,
            optimizer,
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let ck = sample();
        let back = decode(&encode(&ck).unwrap()).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.state.student.checksum(), ck.state.student.checksum());
    }

    #[test]
    fn rejects_damage() {
        let bytes = encode(&sample()).unwrap();
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode(&bad).is_err());
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(decode(&bad).is_err());
        assert!(decode(&bytes[..20]).is_err());
    }

    #[test]
    fn save_is_atomic_rename() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.sck");
        save_checkpoint(&sample(), &path).unwrap();
        assert!(!dir.path().join("a.sck.tmp").exists());
        assert_eq!(load_checkpoint(&path).unwrap(), sample());
    }
}
