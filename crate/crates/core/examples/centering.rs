//! Compares plain softmax targets with Sinkhorn-balanced targets on logits
//! that favour a single prototype.

use sonata::diffcore::Tensor;
use sonata::distill::{sinkhorn_center, softmax_center};

fn column_mass(q: &Tensor) -> Vec<String> {
    (0..q.cols())
        .map(|j| format!("{:.2}", (0..q.rows()).map(|i| q.get(i, j)).sum::<f64>()))
        .collect()
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (b, k) = (8, 4);
    let logits = Tensor::new(
        b,
        k,
        (0..b * k)
            .map(|i| {
                if i % k == 0 {
                    0.9
                } else {
                    0.1 * (i % 3) as f64
                }
            })
            .collect(),
    )?;
    let tpt = 0.07;
    let soft = softmax_center(&logits, tpt)?;
    let balanced = sinkhorn_center(&logits, 3, tpt)?;
    let converged = sinkhorn_center(&logits, 50, tpt)?;
    println!("target column mass {:.2} each", b as f64 / k as f64);
    println!("softmax          {:?}", column_mass(&soft));
    println!("sinkhorn, 3 its  {:?}", column_mass(&balanced));
    println!("sinkhorn, 50 its {:?}", column_mass(&converged));
    Ok(())
}
