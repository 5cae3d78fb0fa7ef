//! Forward and backward kernels on raw slices. [`crate::Graph`] wraps these;
//! they are public so callers can run inference paths without a tape.

pub mod attention;
pub mod conv;
pub mod loss;
pub mod norm;
pub mod pool;

use crate::Real;

pub fn relu(x: Real) -> Real {
    x.max(0.0)
}

pub fn elu_plus_one(x: Real) -> Real {
    if x >= 0.0 {
        x + 1.0
    } else {
        x.exp()
    }
}

/// Derivative of [`elu_plus_one`] expressed through its output `y`.
pub fn elu_plus_one_grad(x: Real, y: Real) -> Real {
    if x >= 0.0 {
        1.0
    } else {
        y
    }
}

pub fn sigmoid(x: Real) -> Real {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
