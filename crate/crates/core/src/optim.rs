//! SGD with momentum, optional weight decay, and step-decay learning-rate
//! schedules.
//!
//! The update rule is `v ← m·v + g (+ wd·p)` followed by `p ← p − lr·v`,
//! with weight decay added to the raw gradient before the momentum blend
//! and conventionally skipped for biases (the caller passes 0 for them).

use ndarray::Array2;

/// Momentum buffers for a fixed list of parameters, addressed by position.
#[derive(Debug, Clone)]
pub struct SgdMomentum {
    velocity: Vec<Array2<f64>>,
    momentum: f64,
}

impl SgdMomentum {
    /// Zero-initialized buffers of the given shapes.
    pub fn new(shapes: &[(usize, usize)], momentum: f64) -> Self {
        assert!((0.0..1.0).contains(&momentum), "momentum must lie in [0, 1)");
        SgdMomentum {
            velocity: shapes.iter().map(|&(r, c)| Array2::zeros((r, c))).collect(),
            momentum,
        }
    }

    /// Buffers matching an existing parameter list.
    pub fn matching(params: &[&Array2<f64>], momentum: f64) -> Self {
        let shapes: Vec<(usize, usize)> = params.iter().map(|p| p.dim()).collect();
        SgdMomentum::new(&shapes, momentum)
    }

    /// Number of parameter slots.
    pub fn len(&self) -> usize {
        self.velocity.len()
    }

    /// True when tracking no parameters.
    pub fn is_empty(&self) -> bool {
        self.velocity.is_empty()
    }

    /// Momentum buffer of one slot (for tests and checkpoints).
    pub fn velocity(&self, i: usize) -> &Array2<f64> {
        &self.velocity[i]
    }

    /// One update on the parameter in slot `i`.
    pub fn step_at(
        &mut self,
        i: usize,
        param: &mut Array2<f64>,
        grad: &Array2<f64>,
        lr: f64,
        weight_decay: f64,
    ) {
        let v = &mut self.velocity[i];
        assert_eq!(v.dim(), param.dim(), "parameter shape changed under the optimizer");
        assert_eq!(v.dim(), grad.dim(), "gradient shape must match the parameter");
        let m = self.momentum;
        if weight_decay == 0.0 {
            ndarray::Zip::from(&mut *v).and(grad).for_each(|v, &g| *v = m * *v + g);
        } else {
            ndarray::Zip::from(&mut *v)
                .and(grad)
                .and(&*param)
                .for_each(|v, &g, &p| *v = m * *v + g + weight_decay * p);
        }
        ndarray::Zip::from(param).and(&*v).for_each(|p, &v| *p -= lr * v);
    }
}

/// Step-decay schedule value at an iteration: `base · factor^⌊iter/step⌋`.
pub fn step_decay(base: f64, factor: f64, step: usize, iter: usize) -> f64 {
    assert!(step >= 1, "schedule step must be at least 1");
    base * factor.powi((iter / step) as i32)
}
