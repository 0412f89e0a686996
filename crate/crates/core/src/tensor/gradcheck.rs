//! Central finite-difference gradient checking.

use super::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Outcome of [`check_gradients`].
#[derive(Clone, Debug)]
pub struct GradCheck {
    /// Largest per-input relative error `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)`.
    pub max_rel_err: f64,
    /// Input index where it occurred.
    pub worst_input: usize,
}

/// Compares reverse-mode gradients of a scalar function against central
/// differences with the given step. Inputs marked `requires_grad` are checked.
pub fn check_gradients<F>(inputs: &[Tensor<f64>], step: f64, f: F) -> Result<GradCheck>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|t| g.leaf(t)).collect();
        let out = f(&mut g, &vars)?;
        if g.value(out).len() != 1 {
            return Err(Error::Backward("gradient check needs a scalar output".into()));
        }
        Ok(g.item(out))
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t)).collect();
    let out = f(&mut g, &vars)?;
    g.backward(out)?;

    let mut report = GradCheck {
        max_rel_err: 0.0,
        worst_input: 0,
    };
    let mut work = inputs.to_vec();
    for (idx, input) in inputs.iter().enumerate() {
        if !input.requires_grad() {
            continue;
        }
        let analytic = g
            .grad(vars[idx])
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; input.len()]);
        let mut numeric = vec![0.0; input.len()];
        for j in 0..input.len() {
            let orig = input.data()[j];
            work[idx].data_mut()[j] = orig + step;
            let plus = eval(&work)?;
            work[idx].data_mut()[j] = orig - step;
            let minus = eval(&work)?;
            work[idx].data_mut()[j] = orig;
            numeric[j] = (plus - minus) / (2.0 * step);
        }
        let diff = norm(analytic.iter().zip(&numeric).map(|(a, n)| a - n));
        let scale = norm(analytic.iter().copied()).max(norm(numeric.iter().copied()));
        let rel = if scale == 0.0 { diff } else { diff / scale };
        if rel > report.max_rel_err {
            report = GradCheck {
                max_rel_err: rel,
                worst_input: idx,
            };
        }
    }
    Ok(report)
}

fn norm(it: impl Iterator<Item = f64>) -> f64 {
    it.map(|v| v * v).sum::<f64>().sqrt()
}
