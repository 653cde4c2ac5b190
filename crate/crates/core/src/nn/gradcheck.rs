//! Central finite-difference check of autograd gradients.

use candle_core::{DType, Tensor, Var};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::scalar;

/// Denominator floor for the relative error, so coordinates whose true
/// gradient is ~0 are judged on absolute error instead.
pub const REL_ERR_FLOOR: f64 = 1e-4;
pub const DEFAULT_STEP: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    /// `(var name, flat index, analytic, numeric)` of the worst coordinate.
    pub worst: Option<(String, usize, f64, f64)>,
}

/// `|a - n| / max(|a|, |n|, REL_ERR_FLOOR)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

fn set_flat(var: &Var, values: &[f64]) -> Result<()> {
    let t = Tensor::from_slice(values, var.shape(), var.device())?;
    var.set(&t)?;
    Ok(())
}

/// Compares `d loss / d var` from backprop with `(L(v+h) - L(v-h)) / 2h` on
/// up to `per_var` randomly chosen coordinates of every var. Vars must be
/// f64 so the differences are meaningful.
pub fn check_gradients(
    vars: &[(String, Var)],
    loss_fn: impl Fn() -> Result<Tensor>,
    step: f64,
    per_var: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    if let Some((name, _)) = vars.iter().find(|(_, v)| v.dtype() != DType::F64) {
        return Err(Error::Invalid(format!(
            "gradient check needs f64 vars, `{name}` is not"
        )));
    }
    let loss = loss_fn()?;
    let grads = loss.backward()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradCheckReport {
        checked: 0,
        max_rel_err: 0.0,
        worst: None,
    };
    for (name, var) in vars {
        let base: Vec<f64> = var.flatten_all()?.to_vec1()?;
        let analytic: Vec<f64> = match grads.get(var.as_tensor()) {
            Some(g) => g.flatten_all()?.to_vec1()?,
            None => vec![0.0; base.len()],
        };
        let picks = sample(&mut rng, base.len(), per_var.min(base.len()));
        for i in picks {
            let mut v = base.clone();
            v[i] = base[i] + step;
            set_flat(var, &v)?;
            let up = scalar(&loss_fn()?)?;
            v[i] = base[i] - step;
            set_flat(var, &v)?;
            let down = scalar(&loss_fn()?)?;
            set_flat(var, &base)?;
            let numeric = (up - down) / (2.0 * step);
            let err = relative_error(analytic[i], numeric);
            report.checked += 1;
            if err > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = report.max_rel_err.max(err);
                report.worst = Some((name.clone(), i, analytic[i], numeric));
            }
        }
    }
    Ok(report)
}
