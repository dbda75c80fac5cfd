use crate::diffcore::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Outcome of comparing tape gradients against central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// `(input index, flat coordinate)` of the worst coordinate, if any
    /// exceeded the tolerance.
    pub failing_coordinate: Option<(usize, usize)>,
    pub passed: bool,
}

/// Compares reverse-mode gradients of a scalar function to central
/// differences with step `h`, coordinate by coordinate.
///
/// The relative error of a coordinate is `|a - n| / max(|a|, |n|, floor)`
/// where `floor = max(1e-6, 1e-3 * max|n|)` over that input, so coordinates
/// whose true gradient is negligible next to the input's largest one are
/// judged on absolute error.
pub fn grad_check<F>(f: F, inputs: &[Tensor], h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |xs: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.constant(x.clone())).collect();
        let out = f(&mut tape, &vars)?;
        let v = tape.value(out);
        if v.len() != 1 {
            return Err(Error::invalid(format!(
                "grad_check needs a scalar function, got shape {:?}",
                v.shape()
            )));
        }
        Ok(v.item())
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.param(x.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;

    let mut worst = 0.0f64;
    let mut worst_at = None;
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (k, &v) in vars.iter().enumerate() {
        let analytic = grads
            .get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(inputs[k].rows(), inputs[k].cols()));
        let mut numeric = vec![0.0; inputs[k].len()];
        for (idx, n) in numeric.iter_mut().enumerate() {
            let x0 = inputs[k].data()[idx];
            work[k].data_mut()[idx] = x0 + h;
            let fp = eval(&work)?;
            work[k].data_mut()[idx] = x0 - h;
            let fm = eval(&work)?;
            work[k].data_mut()[idx] = x0;
            *n = (fp - fm) / (2.0 * h);
        }
        let floor = numeric
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()))
            .mul_add(1e-3, 0.0)
            .max(1e-6);
        for (idx, (&a, &n)) in analytic.data().iter().zip(&numeric).enumerate() {
            let rel = (a - n).abs() / a.abs().max(n.abs()).max(floor);
            if rel > worst || !rel.is_finite() {
                worst = if rel.is_finite() { rel } else { f64::INFINITY };
                worst_at = Some((k, idx));
            }
        }
    }
    let passed = worst < tol;
    Ok(GradCheckReport {
        max_rel_err: worst,
        failing_coordinate: if passed { None } else { worst_at },
        passed,
    })
}
