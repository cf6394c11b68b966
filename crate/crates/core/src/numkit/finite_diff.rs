use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Nested central differences: one level per entry of `dims` (flat indices
/// into `x`). Approximates the mixed partial ∂^|dims| f / ∂x_dims with
/// O(eps²) error per level, at the cost of 2^|dims| evaluations of `f`.
pub fn finite_diff<F>(f: &F, x: &Tensor, dims: &[usize], eps: f64) -> Result<f64>
where
    F: Fn(&Tensor) -> Result<f64>,
{
    if eps.is_nan() || eps <= 0.0 {
        return Err(Error::invalid(format!("finite_diff step must be positive, got {eps}")));
    }
    if dims.is_empty() {
        return Err(Error::invalid("finite_diff needs at least one dimension"));
    }
    if let Some(&d) = dims.iter().find(|&&d| d >= x.numel()) {
        return Err(Error::invalid(format!(
            "dimension {d} out of range for {} inputs",
            x.numel()
        )));
    }
    nested(f, x.clone(), dims, eps)
}

fn nested<F>(f: &F, x: Tensor, dims: &[usize], eps: f64) -> Result<f64>
where
    F: Fn(&Tensor) -> Result<f64>,
{
    let Some((&d, rest)) = dims.split_first() else {
        return f(&x);
    };
    let mut plus = x.clone();
    plus.data_mut()[d] += eps;
    let mut minus = x;
    minus.data_mut()[d] -= eps;
    Ok((nested(f, plus, rest, eps)? - nested(f, minus, rest, eps)?) / (2.0 * eps))
}

/// Central-difference gradient of a scalar function, same shape as `x`.
pub fn numeric_gradient<F>(f: &F, x: &Tensor, eps: f64) -> Result<Tensor>
where
    F: Fn(&Tensor) -> Result<f64>,
{
    let mut g = Tensor::zeros(x.shape());
    for i in 0..x.numel() {
        g.data_mut()[i] = finite_diff(f, x, &[i], eps)?;
    }
    Ok(g)
}
