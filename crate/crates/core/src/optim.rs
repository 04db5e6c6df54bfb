//! Adam moments for a block of parameter slices.

/// Adam state for one parameter block (a list of flat parameter groups).
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(group_sizes: &[usize], learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: group_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: group_sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Group sizes of the moment arrays.
    pub fn shapes(&self) -> Vec<usize> {
        self.m.iter().map(Vec::len).collect()
    }

    /// One bias-corrected Adam update. `params` and `grads` are matched by position.
    pub fn update(&mut self, params: Vec<&mut [f64]>, grads: &[&[f64]]) {
        assert_eq!(params.len(), self.m.len(), "parameter group count");
        assert_eq!(grads.len(), self.m.len(), "gradient group count");
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (g_idx, p) in params.into_iter().enumerate() {
            let g = grads[g_idx];
            let (m, v) = (&mut self.m[g_idx], &mut self.v[g_idx]);
            assert_eq!(p.len(), m.len(), "parameter group {g_idx} size");
            assert_eq!(g.len(), m.len(), "gradient group {g_idx} size");
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut opt = Adam::new(&[2], 0.1);
        let mut p = vec![1.0, -1.0];
        opt.update(vec![&mut p], &[&[3.0, -0.5]]);
        assert!((p[0] - 0.9).abs() < 1e-6);
        assert!((p[1] + 0.9).abs() < 1e-6);
        assert_eq!(opt.steps_taken(), 1);
    }

    #[test]
    fn zero_learning_rate_is_identity() {
        let mut opt = Adam::new(&[3], 0.0);
        let mut p = vec![0.25, 7.0, -3.0];
        let before = p.clone();
        opt.update(vec![&mut p], &[&[1.0, 2.0, 3.0]]);
        assert_eq!(p, before);
    }

    #[test]
    fn minimises_a_quadratic() {
        let mut opt = Adam::new(&[1], 0.05);
        let mut x = vec![4.0];
        for _ in 0..2000 {
            let g = 2.0 * (x[0] - 1.5);
            opt.update(vec![&mut x], &[&[g]]);
        }
        assert!((x[0] - 1.5).abs() < 1e-3);
    }
}
