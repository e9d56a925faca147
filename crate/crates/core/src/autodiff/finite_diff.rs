//! Central finite differences, the independent oracle for every backward rule.

use super::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const GRAD_CHECK_EPS: f64 = 1e-5;
pub const GRAD_CHECK_TOL: f64 = 1e-4;

/// Gradient magnitudes below this are compared in absolute terms: the
/// round-off of a central difference at `eps = 1e-5` is about `1e-10`, so a
/// pure ratio is meaningless for near-zero entries.
const SCALE_FLOOR: f64 = 1e-5;

/// `(f(x + eps e_i) - f(x - eps e_i)) / (2 eps)` for every coordinate `i`.
pub fn finite_difference<F>(mut f: F, x: &Tensor, eps: f64) -> Result<Tensor>
where
    F: FnMut(&Tensor) -> Result<f64>,
{
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("eps must be positive, got {eps}")));
    }
    let mut probe = x.clone();
    let mut grad = Vec::with_capacity(x.numel());
    for i in 0..x.numel() {
        let orig = x.data()[i];
        probe.data_mut()[i] = orig + eps;
        let plus = f(&probe)?;
        probe.data_mut()[i] = orig - eps;
        let minus = f(&probe)?;
        probe.data_mut()[i] = orig;
        grad.push((plus - minus) / (2.0 * eps));
    }
    Tensor::new(x.shape().to_vec(), grad)
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(SCALE_FLOOR)
}

#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Coordinates compared.
    pub checked: usize,
    /// Coordinates whose `±eps` probes crossed a max/tie or hinge boundary.
    pub skipped: usize,
    /// `(input, flat index)` of the worst coordinate.
    pub worst: Option<(usize, usize)>,
}

impl GradCheckReport {
    pub fn passed(&self, tol: f64) -> bool {
        self.checked > 0 && self.max_rel_err < tol
    }

    pub fn merge(&mut self, other: &GradCheckReport) {
        if other.max_rel_err > self.max_rel_err || self.worst.is_none() {
            self.max_rel_err = self.max_rel_err.max(other.max_rel_err);
            self.worst = other.worst.or(self.worst);
        }
        self.checked += other.checked;
        self.skipped += other.skipped;
    }
}

/// Compares [`Graph::backward`] against central differences for every entry
/// of every input.
///
/// `build` receives one trainable leaf per input and returns a scalar loss.
/// Coordinates whose perturbations change any discrete forward decision
/// (see [`Graph::switch_signature`]) are skipped: the loss is not
/// differentiable across them.
pub fn check_gradients<F>(build: F, inputs: &[Tensor], eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor]| -> Result<(f64, u64)> {
        let mut g = Graph::new();
        let leaves: Vec<Var> = values.iter().map(|t| g.param(t.clone())).collect();
        let loss = build(&mut g, &leaves)?;
        let v = g
            .value(loss)
            .item()
            .ok_or_else(|| Error::shape("gradient check", "loss is not a scalar"))?;
        Ok((v, g.switch_signature()))
    };

    let mut g = Graph::new();
    let leaves: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let loss = build(&mut g, &leaves)?;
    let base_signature = g.switch_signature();
    let grads = g.backward(loss)?;

    let mut report = GradCheckReport::default();
    let mut probe: Vec<Tensor> = inputs.to_vec();
    for (k, leaf) in leaves.iter().enumerate() {
        let analytic = grads.get(*leaf).expect("every input is a trainable leaf");
        for i in 0..inputs[k].numel() {
            let orig = inputs[k].data()[i];
            probe[k].data_mut()[i] = orig + eps;
            let (plus, sig_plus) = eval(&probe)?;
            probe[k].data_mut()[i] = orig - eps;
            let (minus, sig_minus) = eval(&probe)?;
            probe[k].data_mut()[i] = orig;
            if sig_plus != base_signature || sig_minus != base_signature {
                report.skipped += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * eps);
            let err = relative_error(analytic.data()[i], numeric);
            report.checked += 1;
            if err > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = report.max_rel_err.max(err);
                report.worst = Some((k, i));
            }
        }
    }
    Ok(report)
}
