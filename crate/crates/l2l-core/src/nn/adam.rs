//! Adam optimizer over flat parameter slots.

use super::ParamSlot;

pub struct Adam {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    t: u64,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(lr: f32, beta1: f32, beta2: f32) -> Self {
        Adam {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// Apply one update. Slots must be passed in the same order every step;
    /// first- and second-moment state is keyed by position.
    pub fn step(&mut self, slots: &mut [ParamSlot<'_>]) {
        if self.m.is_empty() {
            self.m = slots.iter().map(|s| vec![0.0; s.data.len()]).collect();
            self.v = slots.iter().map(|s| vec![0.0; s.data.len()]).collect();
        }
        assert_eq!(self.m.len(), slots.len(), "slot count changed between steps");
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (slot, (m, v)) in slots.iter_mut().zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            for i in 0..slot.data.len() {
                let g = slot.grad[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                slot.data[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_descends_a_quadratic() {
        // minimize (x - 3)^2
        let mut x = vec![0.0f32];
        let mut g = vec![0.0f32];
        let mut opt = Adam::new(0.1, 0.9, 0.999);
        for _ in 0..500 {
            g[0] = 2.0 * (x[0] - 3.0);
            opt.step(&mut [ParamSlot {
                data: &mut x,
                grad: &mut g,
            }]);
        }
        assert!((x[0] - 3.0).abs() < 1e-2, "x = {}", x[0]);
    }
}
