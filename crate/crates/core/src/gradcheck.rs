//! Central finite-difference verification of autodiff gradients.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Worst relative error for one parameter tensor.
#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub autodiff: f64,
    pub finite_diff: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub max_rel_err: f64,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tol
    }
}

/// |a - b| / max(|a|, |b|, 1e-6). The floor keeps finite-difference noise on
/// near-zero gradients (absolute error ~1e-11 at eps=1e-4) from registering
/// as a large relative error.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Compare autodiff gradients against central finite differences
/// (f(p+eps) - f(p-eps)) / 2eps for every entry of every parameter.
///
/// `eval` must be a deterministic scalar function of the parameters; it is
/// evaluated twice at the base point and any discrepancy is an error.
/// `grads` returns the autodiff gradient of the same function, one flat
/// buffer per parameter in the same order.
pub fn grad_check(
    params: &mut [Tensor],
    names: &[String],
    mut eval: impl FnMut(&[Tensor]) -> Result<f64>,
    mut grads: impl FnMut(&[Tensor]) -> Result<Vec<Vec<f64>>>,
    eps: f64,
    tol: f64,
) -> Result<GradCheckReport> {
    assert_eq!(params.len(), names.len());
    let base_a = eval(params)?;
    let base_b = eval(params)?;
    if base_a != base_b {
        return Err(Error::NonDeterministic {
            a: base_a,
            b: base_b,
        });
    }

    let ad = grads(params)?;
    if ad.len() != params.len() {
        return Err(Error::InvalidConfig(format!(
            "grads returned {} buffers for {} parameters",
            ad.len(),
            params.len()
        )));
    }

    let mut out = Vec::with_capacity(params.len());
    let mut overall = 0.0f64;
    for p in 0..params.len() {
        let n = params[p].numel();
        if ad[p].len() != n {
            return Err(Error::ShapeMismatch {
                op: "grad_check",
                lhs: params[p].shape().to_vec(),
                rhs: vec![ad[p].len()],
            });
        }
        let mut worst = ParamCheck {
            name: names[p].clone(),
            max_rel_err: 0.0,
            worst_index: 0,
            autodiff: 0.0,
            finite_diff: 0.0,
        };
        for i in 0..n {
            let orig = params[p].data()[i];
            params[p].data_mut()[i] = orig + eps;
            let fp = eval(params)?;
            params[p].data_mut()[i] = orig - eps;
            let fm = eval(params)?;
            params[p].data_mut()[i] = orig;
            let fd = (fp - fm) / (2.0 * eps);
            let e = rel_err(ad[p][i], fd);
            if e > worst.max_rel_err {
                worst.max_rel_err = e;
                worst.worst_index = i;
                worst.autodiff = ad[p][i];
                worst.finite_diff = fd;
            }
        }
        overall = overall.max(worst.max_rel_err);
        out.push(worst);
    }
    Ok(GradCheckReport {
        params: out,
        max_rel_err: overall,
        tol,
    })
}
