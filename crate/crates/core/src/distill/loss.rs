use std::sync::Arc;

use crate::diffcore::{Tape, Tensor, Var, L2_NORMALIZE_EPS};
use crate::error::{Error, Result};

/// Added to nearest-neighbor distances before the log.
pub const KOLEO_EPS: f64 = 1e-8;

/// Mean over rows of the cross-entropy between teacher distributions and the
/// softmax of `student_logits / tps`.
pub fn distill_loss(
    tape: &mut Tape,
    student_logits: Var,
    teacher: &Tensor,
    tps: f64,
) -> Result<Var> {
    let s = tape.value(student_logits);
    if s.shape() != teacher.shape() {
        return Err(Error::shape(
            "distill_loss",
            format!("student {:?} vs teacher {:?}", s.shape(), teacher.shape()),
        ));
    }
    if s.rows() == 0 {
        return Err(Error::shape("distill_loss", "no rows"));
    }
    let p = s.rows() as f64;
    let scaled = tape.scale(student_logits, 1.0 / tps);
    let lp = tape.log_softmax(scaled, 1)?;
    let t = tape.constant(teacher.map(|v| -v / p));
    let prod = tape.mul(lp, t)?;
    Ok(tape.sum(prod))
}

/// Index of each row's nearest other row by cosine distance on unit rows.
fn nearest_other(unit: &Tensor) -> Vec<usize> {
    let gram = unit.matmul_t(false, unit, true).expect("square gram");
    (0..unit.rows())
        .map(|i| {
            let row = gram.row(i);
            let mut best = usize::MAX;
            let mut best_v = f64::NEG_INFINITY;
            for (j, &v) in row.iter().enumerate() {
                if j != i && v > best_v {
                    best_v = v;
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Kozachenko-Leonenko spreading term on l2-normalized rows:
/// `-mean_i log(min_{j != i} |f_i - f_j| + eps)`.
///
/// The neighbor choice is treated as fixed when differentiating.
pub fn koleo(tape: &mut Tape, features: Var) -> Result<Var> {
    let n = tape.value(features).rows();
    if n < 2 {
        return Err(Error::invalid(format!(
            "koleo needs at least 2 rows, got {n}"
        )));
    }
    let f = tape.l2_normalize(features, 1, L2_NORMALIZE_EPS)?;
    let nn = nearest_other(tape.value(f));
    let g = tape.gather(f, Arc::new(nn))?;
    let d = tape.sub(f, g)?;
    let dist = tape.row_norm(d);
    let eps = tape.constant(Tensor::filled(n, 1, KOLEO_EPS));
    let shifted = tape.add(dist, eps)?;
    let logd = tape.log(shifted);
    let m = tape.mean(logd);
    Ok(tape.scale(m, -1.0))
}

/// Forward-only [`koleo`].
pub fn koleo_value(features: &Tensor) -> Result<f64> {
    let mut tape = Tape::new();
    let f = tape.constant(features.clone());
    let k = koleo(&mut tape, f)?;
    Ok(tape.value(k).item())
}
