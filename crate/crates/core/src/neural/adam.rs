use crate::error::dim_check;
use crate::Result;

/// Bias-corrected Adam moments for a list of parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
    pub step_count: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new<I: IntoIterator<Item = usize>>(tensor_sizes: I) -> Self {
        let first_moment: Vec<Vec<f64>> = tensor_sizes.into_iter().map(|n| vec![0.0; n]).collect();
        Self {
            second_moment: first_moment.clone(),
            first_moment,
            step_count: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

pub fn adam_update(params: &mut [&mut [f64]], grads: &[&[f64]], state: &mut AdamState, lr: f64) -> Result<()> {
    dim_check("adam tensor count", state.first_moment.len(), params.len())?;
    dim_check("adam gradient count", params.len(), grads.len())?;
    for ((p, g), m) in params.iter().zip(grads).zip(&state.first_moment) {
        dim_check("adam parameter tensor", m.len(), p.len())?;
        dim_check("adam gradient tensor", m.len(), g.len())?;
    }
    state.step_count += 1;
    let (b1, b2) = (state.beta1, state.beta2);
    let t = state.step_count as i32;
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let m = &mut state.first_moment[k];
        let v = &mut state.second_moment[k];
        for j in 0..p.len() {
            m[j] = b1 * m[j] + (1.0 - b1) * g[j];
            v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
            p[j] -= lr * (m[j] / c1) / ((v[j] / c2).sqrt() + state.epsilon);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_everything_unchanged() {
        let mut p = vec![1.0, -2.0, 3.0];
        let mut st = AdamState::new([3]);
        adam_update(&mut [&mut p], &[&[0.0; 3]], &mut st, 0.01).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 3.0]);
        assert_eq!(st.first_moment[0], vec![0.0; 3]);
        assert_eq!(st.second_moment[0], vec![0.0; 3]);
    }

    #[test]
    fn first_step_moves_by_learning_rate_against_sign() {
        let mut p = vec![0.0; 4];
        let g = [0.5, -3.0, 1e3, -1e-2];
        let mut st = AdamState::new([4]);
        adam_update(&mut [&mut p], &[&g], &mut st, 0.01).unwrap();
        for (pv, gv) in p.iter().zip(g) {
            assert!((pv + 0.01 * gv.signum()).abs() < 1e-7);
        }
    }

    #[test]
    fn two_step_recursion() {
        let g = 0.3;
        let lr = 0.05;
        let mut p = vec![1.0];
        let mut st = AdamState::new([1]);
        for _ in 0..2 {
            adam_update(&mut [&mut p], &[&[g]], &mut st, lr).unwrap();
        }
        let m1 = 0.1 * g;
        let v1 = 0.001 * g * g;
        let m2 = 0.9 * m1 + 0.1 * g;
        let v2 = 0.999 * v1 + 0.001 * g * g;
        assert!((st.first_moment[0][0] - m2).abs() < 1e-15);
        assert!((st.second_moment[0][0] - v2).abs() < 1e-18);
        let step1 = lr * (m1 / 0.1) / ((v1 / 0.001).sqrt() + 1e-8);
        let step2 = lr * (m2 / (1.0 - 0.81)) / ((v2 / (1.0 - 0.999f64.powi(2))).sqrt() + 1e-8);
        assert!((p[0] - (1.0 - step1 - step2)).abs() < 1e-14);
        assert_eq!(st.step_count, 2);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut p = vec![0.0; 2];
        let mut st = AdamState::new([3]);
        assert!(adam_update(&mut [&mut p], &[&[0.0; 2]], &mut st, 0.1).is_err());
    }
}
