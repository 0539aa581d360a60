use serde::{Deserialize, Serialize};

/// Bias-corrected Adam moments for one parameter vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl Adam {
    pub fn new(n: usize, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            beta1,
            beta2,
            eps,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn reset(&mut self) {
        self.m.iter_mut().for_each(|x| *x = 0.0);
        self.v.iter_mut().for_each(|x| *x = 0.0);
        self.t = 0;
    }

    /// Updates `params` in place. Entries whose `mask` is false are left
    /// untouched, moments included.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64, mask: Option<&[bool]>) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            if mask.is_some_and(|m| !m[i]) {
                continue;
            }
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / bc1;
            let vh = self.v[i] / bc2;
            params[i] -= lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut a = Adam::new(3, 0.9, 0.999, 1e-8);
        let mut p = vec![1.0, -2.0, 3.0];
        a.step(&mut p, &[0.0; 3], 0.5, None);
        assert_eq!(p, vec![1.0, -2.0, 3.0]);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut a = Adam::new(2, 0.9, 0.999, 1e-8);
        let mut p = vec![0.0, 0.0];
        a.step(&mut p, &[3.0, -0.02], 0.1, None);
        assert!((p[0] + 0.1).abs() < 1e-8);
        assert!((p[1] - 0.1).abs() < 1e-6);
    }

    #[test]
    fn mask_freezes_entries_and_reset_clears() {
        let mut a = Adam::new(2, 0.9, 0.999, 1e-8);
        let mut p = vec![0.0, 0.0];
        a.step(&mut p, &[1.0, 1.0], 0.1, Some(&[true, false]));
        assert_eq!(p[1], 0.0);
        assert_eq!(a.m[1], 0.0);
        a.reset();
        assert_eq!(a.t, 0);
        assert!(a.m.iter().chain(&a.v).all(|&x| x == 0.0));
    }
}
