//! Projected gradient descent: iterated signed steps with projection onto
//! the epsilon-ball and the feature box after every step.

use super::{attack_gradient_rows, project_ball_box, AttackKind, AttackSpec};
use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::nn::{Batch, Model};
use crate::par;

pub fn pgd(model: &Model, batch: &Batch, spec: &AttackSpec) -> Result<Mat> {
    let params = match &spec.kind {
        AttackKind::Pgd(p) => p.clone(),
        other => {
            return Err(Error::Validation(format!(
                "pgd called with a {} spec",
                other.label()
            )))
        }
    };
    let step = params.step_size(spec.epsilon);
    let rows = par::try_map_indexed(batch.len(), |i| -> Result<Vec<f32>> {
        let origin = batch.inputs.row(i);
        let label = batch.labels[i];
        let mut current: Vec<f32> = origin.to_vec();
        for _ in 0..params.max_iter {
            let one = Batch {
                inputs: Mat::from_rows(&[current.clone()])?,
                labels: vec![label],
                bounds: batch.bounds,
            };
            let grad = &attack_gradient_rows(model, &one, spec.targeted)?[0];
            let stepped: Vec<f64> = current
                .iter()
                .zip(grad)
                .map(|(&x, &g)| {
                    x as f64
                        + step
                            * if g > 0.0 {
                                1.0
                            } else if g < 0.0 {
                                -1.0
                            } else {
                                0.0
                            }
                })
                .collect();
            let projected = project_ball_box(&stepped, origin, spec.epsilon, spec.bounds);
            current = projected.iter().map(|&v| v as f32).collect();
        }
        Ok(current)
    })?;
    Mat::from_rows(&rows)
}
