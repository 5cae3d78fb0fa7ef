//! Penalty-reduced focal loss on a heatmap and L1 regression loss.

use crate::Real;

pub const FOCAL_ALPHA: i32 = 2;
pub const FOCAL_BETA: i32 = 4;
pub const PROB_CLAMP: Real = 1e-6;

fn is_positive(t: Real) -> bool {
    t == 1.0
}

/// Number of exact-1.0 cells, at least one.
pub fn positive_count(target: &[Real]) -> usize {
    target.iter().filter(|&&t| is_positive(t)).count().max(1)
}

pub fn focal_forward(pred: &[Real], target: &[Real]) -> Real {
    let npos = positive_count(target) as Real;
    let mut acc = 0.0;
    for (&p, &t) in pred.iter().zip(target) {
        let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        if is_positive(t) {
            acc += (1.0 - p).powi(FOCAL_ALPHA) * p.ln();
        } else {
            acc += (1.0 - t).powi(FOCAL_BETA) * p.powi(FOCAL_ALPHA) * (1.0 - p).ln();
        }
    }
    -acc / npos
}

/// Gradient with respect to the prediction; zero where the clamp is active.
pub fn focal_backward(pred: &[Real], target: &[Real], gy: Real) -> Vec<Real> {
    let npos = positive_count(target) as Real;
    pred.iter()
        .zip(target)
        .map(|(&p, &t)| {
            if !(PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&p) {
                return 0.0;
            }
            let d = if is_positive(t) {
                // d/dp [-(1-p)^2 ln p]
                2.0 * (1.0 - p) * p.ln() - (1.0 - p) * (1.0 - p) / p
            } else {
                // d/dp [-(1-t)^4 p^2 ln(1-p)]
                -(1.0 - t).powi(FOCAL_BETA) * (2.0 * p * (1.0 - p).ln() - p * p / (1.0 - p))
            };
            gy * d / npos
        })
        .collect()
}

pub fn l1_forward(pred: &[Real], target: &[Real]) -> Real {
    pred.iter().zip(target).map(|(p, t)| (p - t).abs()).sum::<Real>() / pred.len() as Real
}

pub fn l1_backward(pred: &[Real], target: &[Real], gy: Real) -> Vec<Real> {
    let n = pred.len() as Real;
    pred.iter()
        .zip(target)
        .map(|(p, t)| {
            let d = p - t;
            if d > 0.0 {
                gy / n
            } else if d < 0.0 {
                -gy / n
            } else {
                0.0
            }
        })
        .collect()
}
