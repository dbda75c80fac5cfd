use crate::diffcore::Tensor;
use crate::error::{Error, Result};

fn check_finite(logits: &Tensor, tpt: f64) -> Result<()> {
    if !logits.all_finite() {
        return Err(Error::Numeric("non-finite teacher logits".into()));
    }
    if !(tpt > 0.0 && tpt.is_finite()) {
        return Err(Error::invalid(format!(
            "teacher temperature {tpt} must be positive"
        )));
    }
    if logits.rows() == 0 || logits.cols() == 0 {
        return Err(Error::invalid("empty teacher logits"));
    }
    Ok(())
}

/// Balanced soft assignments of rows (points) to columns (prototypes).
///
/// Starts from `exp(logits / tpt)`, then alternates column normalization
/// (uniform `1/K` prototype marginal) with row normalization for `n_iter`
/// rounds. Every row of the result sums to one.
pub fn sinkhorn_center(logits: &Tensor, n_iter: usize, tpt: f64) -> Result<Tensor> {
    check_finite(logits, tpt)?;
    let [b, k] = logits.shape();
    let max = logits
        .data()
        .iter()
        .fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    if logits.data().iter().all(|&v| v == max) {
        // Already balanced; skip the rounds so the result is exactly 1/K.
        return Ok(Tensor::filled(b, k, 1.0 / k as f64));
    }
    let mut q = logits.map(|v| ((v - max) / tpt).exp());
    let mut col = vec![0.0; k];
    for _ in 0..n_iter.max(1) {
        col.iter_mut().for_each(|c| *c = 0.0);
        for r in 0..b {
            for (c, v) in col.iter_mut().zip(q.row(r)) {
                *c += v;
            }
        }
        for r in 0..b {
            for (v, &c) in q.row_mut(r).iter_mut().zip(&col) {
                if c > 0.0 {
                    *v /= c * k as f64;
                }
            }
        }
        normalize_rows(&mut q);
    }
    Ok(q)
}

fn normalize_rows(q: &mut Tensor) {
    for r in 0..q.rows() {
        let row = q.row_mut(r);
        let s: f64 = row.iter().sum();
        if s > 0.0 {
            row.iter_mut().for_each(|v| *v /= s);
        }
    }
}

/// Row softmax of `logits / tpt` without prototype balancing.
pub fn softmax_center(logits: &Tensor, tpt: f64) -> Result<Tensor> {
    check_finite(logits, tpt)?;
    let mut q = logits.clone();
    for r in 0..q.rows() {
        let row = q.row_mut(r);
        let m = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.iter_mut().for_each(|v| *v = ((*v - m) / tpt).exp());
    }
    normalize_rows(&mut q);
    Ok(q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn col_dev(q: &Tensor) -> f64 {
        let (b, k) = (q.rows(), q.cols());
        (0..k)
            .map(|c| ((0..b).map(|r| q.get(r, c)).sum::<f64>() - b as f64 / k as f64).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn constant_logits_give_uniform() {
        let q = sinkhorn_center(&Tensor::filled(7, 5, 0.3), 3, 0.05).unwrap();
        assert!(q.data().iter().all(|&v| v == 0.2));
    }

    #[test]
    fn strong_diagonal_gives_identity() {
        let tpt = 0.05;
        let mut l = Tensor::zeros(6, 6);
        for i in 0..6 {
            l.set(i, i, 20.0 / tpt);
        }
        let q = sinkhorn_center(&l, 50, tpt).unwrap();
        let eye = Tensor::identity(6);
        for (a, b) in q.data().iter().zip(eye.data()) {
            assert!((a - b).abs() < 1e-3);
        }
    }

    #[test]
    fn converges_monotonically_to_balanced_columns() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let l = Tensor::new(
            40,
            8,
            (0..320).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let devs: Vec<f64> = [3, 10, 50]
            .iter()
            .map(|&n| col_dev(&sinkhorn_center(&l, n, 0.5).unwrap()))
            .collect();
        assert!(devs[0] >= devs[1] && devs[1] >= devs[2], "{devs:?}");
        assert!(devs[2] < 1e-6);
    }

    #[test]
    fn rejects_non_finite() {
        let mut l = Tensor::zeros(2, 2);
        l.set(0, 1, f64::NAN);
        assert!(matches!(
            sinkhorn_center(&l, 3, 0.1),
            Err(Error::Numeric(_))
        ));
    }
}
