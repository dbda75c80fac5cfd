use crate::diffcore::Tensor;
use crate::error::{Error, Result};

fn unit_rows(t: &Tensor) -> Tensor {
    let mut out = t.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 0.0 {
            row.iter_mut().for_each(|v| *v /= n);
        }
    }
    out
}

/// Majority label among the `k` most cosine-similar training rows; ties go to
/// the smaller label, and equal similarities to the earlier training row.
pub fn knn_predict(train: &Tensor, labels: &[u32], test: &Tensor, k: usize) -> Result<Vec<u32>> {
    if train.rows() == 0 {
        return Err(Error::invalid("knn needs a non-empty training set"));
    }
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if labels.len() != train.rows() || train.cols() != test.cols() {
        return Err(Error::shape(
            "knn_classify",
            format!(
                "train {:?}, {} labels, test {:?}",
                train.shape(),
                labels.len(),
                test.shape()
            ),
        ));
    }
    let k = k.min(train.rows());
    let sim = unit_rows(test).matmul_t(false, &unit_rows(train), true)?;
    let n_labels = *labels.iter().max().expect("non-empty") as usize + 1;
    Ok((0..test.rows())
        .map(|r| {
            let row = sim.row(r);
            let mut idx: Vec<usize> = (0..row.len()).collect();
            idx.select_nth_unstable_by(k - 1, |&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
            let mut votes = vec![0usize; n_labels];
            for &i in &idx[..k] {
                votes[labels[i] as usize] += 1;
            }
            let best = votes
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
                .expect("labels");
            best.0 as u32
        })
        .collect())
}

/// Fraction of test rows whose kNN prediction equals the given label.
pub fn knn_classify(
    train: &Tensor,
    labels: &[u32],
    test: &Tensor,
    test_labels: &[u32],
    k: usize,
) -> Result<f64> {
    if test_labels.len() != test.rows() {
        return Err(Error::shape(
            "knn_classify",
            "test labels do not match test rows",
        ));
    }
    let pred = knn_predict(train, labels, test, k)?;
    if pred.is_empty() {
        return Ok(0.0);
    }
    Ok(pred.iter().zip(test_labels).filter(|(a, b)| a == b).count() as f64 / pred.len() as f64)
}
