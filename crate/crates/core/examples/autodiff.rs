//! Records a small two-layer network on a tape, backpropagates, and checks
//! the result against finite differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sonata::diffcore::{grad_check, Tape, Tensor, Var};

fn net(tape: &mut Tape, v: &[Var]) -> sonata::Result<Var> {
    let h = tape.matmul(v[0], v[1])?;
    let h = tape.gelu(h);
    let out = tape.matmul(h, v[2])?;
    let p = tape.log_softmax(out, 1)?;
    Ok(tape.mean(p))
}

fn main() -> sonata::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut rand = |r, c| {
        Tensor::new(
            r,
            c,
            (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
    };
    let inputs = [rand(6, 4)?, rand(4, 8)?, rand(8, 3)?];

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = net(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;
    println!(
        "loss {:.6}, {} nodes on the tape",
        tape.value(loss).item(),
        tape.len()
    );
    for (i, v) in vars.iter().enumerate() {
        let g = grads.get(*v).expect("every input is a parameter");
        println!("input {i}: gradient shape {:?}", g.shape());
    }

    let report = grad_check(net, &inputs, 1e-6, 1e-6)?;
    println!(
        "finite-difference check passed: {} (max rel err {:.2e})",
        report.passed, report.max_rel_err
    );
    Ok(())
}
