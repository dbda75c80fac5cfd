use std::sync::Arc;

use crate::diffcore::{Tape, Tensor, Var};
use crate::encoder::EncoderOutput;
use crate::error::{Error, Result};
use crate::pointcore::{PointCloud, PoolingMap};

/// Channel count after `k` up-cast steps: the sum of the last `k + 1` widths.
pub fn upcast_channels(widths: &[usize], k: usize) -> usize {
    widths[widths.len() - 1 - k.min(widths.len() - 1)..]
        .iter()
        .sum()
}

fn check_k(n_stages: usize, k: usize) -> Result<()> {
    if k >= n_stages {
        return Err(Error::invalid(format!(
            "upcast level {k} needs more than {n_stages} stages"
        )));
    }
    Ok(())
}

/// Replicates the deepest features `k` times down the pooling hierarchy,
/// concatenating each finer stage's own features on the right. Columns are
/// ordered deepest first.
pub fn upcast(tape: &mut Tape, out: &EncoderOutput, k: usize) -> Result<(Var, PointCloud)> {
    let n = out.stage_features.len();
    check_k(n, k)?;
    let mut f = out.stage_features[n - 1];
    for s in (n - 1 - k..n - 1).rev() {
        let parent = Arc::new(out.pooling_maps[s].parent.clone());
        let g = tape.gather(f, parent)?;
        f = tape.concat(&[g, out.stage_features[s]], 1)?;
    }
    Ok((f, out.stage_clouds[n - 1 - k].clone()))
}

/// Up-casts all the way to the input resolution.
pub fn upcast_full(tape: &mut Tape, out: &EncoderOutput) -> Result<Var> {
    let k = out.stage_features.len() - 1;
    Ok(upcast(tape, out, k)?.0)
}

/// Tensor version of [`upcast`] for frozen features.
pub fn upcast_tensors(features: &[Tensor], maps: &[Arc<PoolingMap>], k: usize) -> Result<Tensor> {
    let n = features.len();
    check_k(n, k)?;
    let mut f = features[n - 1].clone();
    for s in (n - 1 - k..n - 1).rev() {
        let fine = &features[s];
        let parent = &maps[s].parent;
        if parent.len() != fine.rows() {
            return Err(Error::shape(
                "upcast",
                format!("{} parents for {} rows", parent.len(), fine.rows()),
            ));
        }
        let cols = f.cols() + fine.cols();
        let mut data = Vec::with_capacity(fine.rows() * cols);
        for (i, &p) in parent.iter().enumerate() {
            data.extend_from_slice(f.row(p));
            data.extend_from_slice(fine.row(i));
        }
        f = Tensor::new(fine.rows(), cols, data)?;
    }
    Ok(f)
}
