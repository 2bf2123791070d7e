use super::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Max relative error over every checked component.
    pub max_rel_error: f64,
    /// Max relative error per checked input, in the order given.
    pub per_input: Vec<f64>,
    /// `(input, flat index)` of the worst component.
    pub worst: (usize, usize),
    pub components: usize,
}

/// Compare analytic gradients against central finite differences for every
/// input. See [`grad_check_wrt`].
pub fn grad_check<F>(f: F, inputs: &[Tensor<f64>], eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let all: Vec<usize> = (0..inputs.len()).collect();
    grad_check_wrt(f, inputs, &all, eps)
}

/// Relative error per component is
/// `|analytic - fd| / max(|analytic|, |fd|, 1e-8)` with
/// `fd = (f(x + eps) - f(x - eps)) / (2 eps)`. Only inputs listed in `wrt`
/// are perturbed; all inputs are differentiable leaves.
pub fn grad_check_wrt<F>(f: F, inputs: &[Tensor<f64>], wrt: &[usize], eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let eval = |xs: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|t| g.variable(t.clone())).collect();
        let l = f(&mut g, &vars)?;
        let v = g.value(l);
        if v.len() != 1 {
            return Err(Error::NonScalarLoss(v.shape().to_vec()));
        }
        Ok(v.data()[0])
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.variable(t.clone())).collect();
    let loss = f(&mut g, &vars)?;
    let grads = g.backward(loss)?;

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        per_input: Vec::with_capacity(wrt.len()),
        worst: (0, 0),
        components: 0,
    };
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for &which in wrt {
        let analytic = grads.wrt(&g, vars[which]);
        let mut worst = 0.0f64;
        for idx in 0..inputs[which].len() {
            let orig = inputs[which].data()[idx];
            work[which].data_mut()[idx] = orig + eps;
            let up = eval(&work)?;
            work[which].data_mut()[idx] = orig - eps;
            let down = eval(&work)?;
            work[which].data_mut()[idx] = orig;

            let fd = (up - down) / (2.0 * eps);
            let a = analytic.data()[idx];
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-8);
            if rel > worst {
                worst = rel;
            }
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = (which, idx);
            }
            report.components += 1;
        }
        report.per_input.push(worst);
    }
    Ok(report)
}
