use serde::{Deserialize, Serialize};

use super::{Matrix, ParamSet};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moment estimates, one flat vector per parameter tensor.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &ParamSet) -> Self {
        let zeros = |p: &ParamSet| p.ids().map(|id| vec![0.0; p.get(id).len()]).collect();
        AdamState { step: 0, m: zeros(params), v: zeros(params) }
    }
}

/// One bias-corrected Adam update. Tensors without a gradient, and buffers, are left alone.
pub fn adam_step(params: &mut ParamSet, grads: &[Option<Matrix>], state: &mut AdamState, cfg: &AdamConfig) {
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    let ids: Vec<_> = params.trainable_ids().collect();
    for id in ids {
        let Some(g) = grads.get(id.0).and_then(|g| g.as_ref()) else { continue };
        let (m, v) = (&mut state.m[id.0], &mut state.v[id.0]);
        let p = params.get_mut(id).data_mut();
        for i in 0..p.len() {
            let gi = g.data()[i];
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
            let mhat = m[i] / c1;
            let vhat = v[i] / c2;
            p[i] -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(values: Vec<f64>) -> (ParamSet, super::super::ParamId) {
        let mut ps = ParamSet::new();
        let n = values.len();
        let id = ps.add("p", Matrix::new(1, n, values).unwrap());
        (ps, id)
    }

    #[test]
    fn zero_gradient_leaves_fresh_params_and_decays_moments() {
        let (mut ps, id) = single(vec![1.0, -2.0]);
        let mut st = AdamState::new(&ps);
        let cfg = AdamConfig::default();
        adam_step(&mut ps, &[Some(Matrix::zeros(1, 2))], &mut st, &cfg);
        assert_eq!(ps.get(id).data(), &[1.0, -2.0]);

        st.m[0] = vec![0.5, 0.5];
        st.v[0] = vec![0.25, 0.25];
        adam_step(&mut ps, &[Some(Matrix::zeros(1, 2))], &mut st, &cfg);
        assert!((st.m[0][0] - 0.45).abs() < 1e-15);
        assert!((st.v[0][0] - 0.25 * 0.999).abs() < 1e-15);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let (mut ps, id) = single(vec![0.0, 0.0]);
        let mut st = AdamState::new(&ps);
        let cfg = AdamConfig { lr: 0.01, ..AdamConfig::default() };
        adam_step(&mut ps, &[Some(Matrix::row_vector(vec![3.0, -0.2]))], &mut st, &cfg);
        let p = ps.get(id).data();
        assert!((p[0] + 0.01).abs() < 1e-9);
        assert!((p[1] - 0.01).abs() < 1e-9);
    }

    #[test]
    fn convex_quadratic_descends() {
        // f(p) = Σ a_i (p_i - t_i)²
        let a = [1.0, 4.0, 0.5];
        let t = [0.3, -1.2, 2.0];
        let (mut ps, id) = single(vec![0.8, -0.9, 1.6]);
        let mut st = AdamState::new(&ps);
        let cfg = AdamConfig { lr: 0.004, ..AdamConfig::default() };
        let loss = |p: &[f64]| (0..3).map(|i| a[i] * (p[i] - t[i]).powi(2)).sum::<f64>();
        let start = loss(ps.get(id).data());
        let mut prev = start;
        for step in 0..100 {
            let p = ps.get(id).data().to_vec();
            let g = Matrix::row_vector((0..3).map(|i| 2.0 * a[i] * (p[i] - t[i])).collect());
            adam_step(&mut ps, &[Some(g)], &mut st, &cfg);
            let now = loss(ps.get(id).data());
            if step >= 5 {
                assert!(now < prev, "step {step}: {now} >= {prev}");
            }
            prev = now;
        }
        assert!(prev < 0.1 * start);
    }
}
