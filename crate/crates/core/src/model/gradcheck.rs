use ndarray::Array2;
use serde::Serialize;

use super::{backward, forward, ImpParams, StateInput};
use crate::error::{Error, Result};

/// Worst agreement between finite differences and [`backward`] for one tensor.
#[derive(Clone, Debug, Serialize)]
pub struct TensorCheck {
    pub name: String,
    pub entries: usize,
    pub max_rel_err: f64,
    /// Flat index of the worst entry.
    pub worst: usize,
    pub analytic: f64,
    pub numeric: f64,
    /// Entries whose step was shrunk because `±step` crossed a ReLU kink.
    pub refined: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradcheckReport {
    pub step: f64,
    pub floor: f64,
    pub tensors: Vec<TensorCheck>,
    pub max_rel_err: f64,
}

fn set_entry(p: &mut ImpParams, tensor: usize, idx: usize, value: f64) {
    let mut t = p.tensors_mut().swap_remove(tensor).1;
    t.as_slice_memory_order_mut().expect("owned tensors are contiguous")[idx] = value;
}

fn loss(p: &ImpParams, inputs: &[StateInput], dz: &Array2<f64>) -> Result<(f64, Vec<bool>)> {
    let fp = forward(p, inputs)?;
    let l = fp.z().iter().zip(dz.iter()).map(|(a, b)| a * b).sum();
    Ok((l, fp.activation_pattern()))
}

/// Compares [`backward`] against central differences of `Σ dz ⊙ z` for every
/// parameter entry.
///
/// The relative error of an entry is `|fd − an| / max(|fd|, |an|, floor)`.
/// When `±step` changes the sign of any ReLU input the difference quotient
/// straddles a kink, so the step is shrunk tenfold (down to `step·1e-4`)
/// until both sides share the base activation pattern.
pub fn gradcheck(
    params: &ImpParams,
    inputs: &[StateInput],
    dz: &Array2<f64>,
    step: f64,
    floor: f64,
) -> Result<GradcheckReport> {
    if !(step > 0.0) || !(floor > 0.0) {
        return Err(Error::Argument("step and floor must be positive".into()));
    }
    let fp = forward(params, inputs)?;
    let analytic = backward(params, &fp, dz.view())?;
    let base = fp.activation_pattern();
    let mut work = params.clone();
    let mut tensors = Vec::new();
    let names: Vec<String> = params.tensors().into_iter().map(|(n, _)| n).collect();
    for (ti, name) in names.iter().enumerate() {
        let values: Vec<f64> = params.tensors()[ti].1.iter().copied().collect();
        let grads: Vec<f64> = analytic.tensors()[ti].1.iter().copied().collect();
        let mut check = TensorCheck {
            name: name.clone(),
            entries: values.len(),
            max_rel_err: 0.0,
            worst: 0,
            analytic: 0.0,
            numeric: 0.0,
            refined: 0,
        };
        for (idx, (&v, &an)) in values.iter().zip(&grads).enumerate() {
            let mut h = step;
            let numeric = loop {
                set_entry(&mut work, ti, idx, v + h);
                let (lp, pp) = loss(&work, inputs, dz)?;
                set_entry(&mut work, ti, idx, v - h);
                let (lm, pm) = loss(&work, inputs, dz)?;
                if (pp == base && pm == base) || h <= step * 1e-4 {
                    break (lp - lm) / (2.0 * h);
                }
                if h == step {
                    check.refined += 1;
                }
                h /= 10.0;
            };
            set_entry(&mut work, ti, idx, v);
            let rel = (numeric - an).abs() / numeric.abs().max(an.abs()).max(floor);
            if rel > check.max_rel_err || !rel.is_finite() {
                check.max_rel_err = rel;
                check.worst = idx;
                check.analytic = an;
                check.numeric = numeric;
            }
        }
        tensors.push(check);
    }
    let max_rel_err = tensors.iter().map(|t| t.max_rel_err).fold(0.0, f64::max);
    Ok(GradcheckReport {
        step,
        floor,
        tensors,
        max_rel_err,
    })
}
