use serde::{Deserialize, Serialize};

use super::tensor::{sigmoid, softplus};
use crate::error::{Error, Result};

/// Highest derivative order any activation provides. Derivative passes use up
/// to order 3; the extra order backs the gradient of the order-3 term.
pub const MAX_ORDER: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Softplus,
    /// `softplus(x)^3`. Its first three derivatives are nonnegative everywhere,
    /// which together with nonnegative weights makes every mixed partial up to
    /// order 3 of the network nonnegative.
    SoftplusCubed,
}

impl Activation {
    pub fn name(&self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Softplus => "softplus",
            Activation::SoftplusCubed => "softplus_cubed",
        }
    }

    /// Whether derivatives of orders `1..=order` are nonnegative on all of ℝ.
    pub fn nonneg_derivatives_up_to(&self, order: usize) -> bool {
        match self {
            Activation::Tanh => order <= 1,
            Activation::Softplus => order <= 2,
            Activation::SoftplusCubed => order <= 3,
        }
    }

    pub fn check_order(&self, order: usize) -> Result<()> {
        if order > MAX_ORDER {
            Err(Error::UnsupportedOrder {
                activation: self.name().to_string(),
                order,
            })
        } else {
            Ok(())
        }
    }

    /// `order`-th derivative at `x`; `order <= MAX_ORDER` is the caller's job.
    #[inline]
    pub fn eval(&self, x: f64, order: usize) -> f64 {
        match self {
            Activation::Tanh => tanh_poly(x.tanh(), order),
            Activation::Softplus => {
                if order == 0 {
                    return softplus(x);
                }
                let s = sigmoid(x);
                let q = s * (1.0 - s);
                match order {
                    1 => s,
                    2 => q,
                    3 => q * (1.0 - 2.0 * s),
                    _ => q * (1.0 - 6.0 * s + 6.0 * s * s),
                }
            }
            Activation::SoftplusCubed => {
                let u = softplus(x);
                let s = sigmoid(x);
                let q = s * (1.0 - s);
                let r = q * (1.0 - 2.0 * s);
                match order {
                    0 => u * u * u,
                    1 => 3.0 * u * u * s,
                    2 => 6.0 * u * s * s + 3.0 * u * u * q,
                    3 => 6.0 * s * s * s + 18.0 * u * s * q + 3.0 * u * u * r,
                    _ => {
                        let p = q * (1.0 - 6.0 * s + 6.0 * s * s);
                        36.0 * s * s * q + 18.0 * u * q * q + 24.0 * u * s * r + 3.0 * u * u * p
                    }
                }
            }
        }
    }

    /// The `order`-th derivative written in terms of the activation's own
    /// output `y`, for activations where that is possible.
    #[inline]
    pub fn derivative_from_output(&self, y: f64, order: usize) -> Option<f64> {
        match self {
            Activation::Tanh => Some(tanh_poly(y, order)),
            _ => None,
        }
    }
}

#[inline]
fn tanh_poly(t: f64, order: usize) -> f64 {
    let s = 1.0 - t * t;
    match order {
        0 => t,
        1 => s,
        2 => -2.0 * t * s,
        3 => s * (6.0 * t * t - 2.0),
        _ => 8.0 * t * s * (2.0 - 3.0 * t * t),
    }
}

impl std::fmt::Display for Activation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const ALL: [Activation; 3] = [
        Activation::Tanh,
        Activation::Softplus,
        Activation::SoftplusCubed,
    ];

    #[test]
    fn derivative_chain_matches_central_differences() {
        let h = 1e-5;
        for act in ALL {
            for i in 0..41 {
                let x = -4.0 + 0.2 * i as f64;
                for order in 0..MAX_ORDER {
                    let fd = (act.eval(x + h, order) - act.eval(x - h, order)) / (2.0 * h);
                    let exact = act.eval(x, order + 1);
                    assert!(
                        (fd - exact).abs() < 1e-7 * (1.0 + exact.abs()),
                        "{act} order {} at {x}: {fd} vs {exact}",
                        order + 1
                    );
                }
            }
        }
    }

    #[test]
    fn advertised_sign_conditions_hold() {
        for act in ALL {
            for i in 0..2001 {
                let x = -30.0 + 0.03 * i as f64;
                for order in 1..=3 {
                    if act.nonneg_derivatives_up_to(order) {
                        assert!(act.eval(x, order) >= 0.0, "{act} order {order} at {x}");
                    }
                }
            }
        }
        assert!(Activation::Softplus.eval(2.0, 3) < 0.0);
        assert!(Activation::Tanh.eval(0.5, 2) < 0.0);
    }

    #[test]
    fn output_form_matches_direct_evaluation() {
        for x in [-3.0, -0.4, 0.0, 1.7] {
            let y = Activation::Tanh.eval(x, 0);
            for k in 0..=MAX_ORDER {
                assert_eq!(Activation::Tanh.derivative_from_output(y, k), Some(Activation::Tanh.eval(x, k)));
            }
        }
        assert_eq!(Activation::Softplus.derivative_from_output(1.0, 1), None);
    }
}
