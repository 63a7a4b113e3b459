//! Fast gradient sign method: one signed-gradient step of size epsilon.

use super::{attack_gradient_rows, project_ball_box, AttackSpec};
use crate::error::Result;
use crate::linalg::Mat;
use crate::nn::{Batch, Model};

/// `x' = clamp(x + epsilon * sign(grad_x J), lb, ub)`, row by row.
pub fn fgsm(model: &Model, batch: &Batch, epsilon: f64, spec: &AttackSpec) -> Result<Mat> {
    let grads = attack_gradient_rows(model, batch, spec.targeted)?;
    let mut out = Mat::zeros(batch.len(), batch.inputs.cols());
    for (i, grad) in grads.iter().enumerate() {
        let x = batch.inputs.row(i);
        let stepped: Vec<f64> = x
            .iter()
            .zip(grad)
            .map(|(&xi, &g)| xi as f64 + epsilon * sign(g))
            .collect();
        let projected = project_ball_box(&stepped, x, epsilon, spec.bounds);
        for (c, v) in projected.iter().enumerate() {
            out.set(i, c, *v as f32);
        }
    }
    Ok(out)
}

fn sign(g: f64) -> f64 {
    if g > 0.0 {
        1.0
    } else if g < 0.0 {
        -1.0
    } else {
        0.0
    }
}
