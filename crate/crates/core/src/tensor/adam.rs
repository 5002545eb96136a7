use super::{scalar, Params, Scalar};

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        AdamConfig {
            learning_rate,
            ..AdamConfig::default()
        }
    }
}

/// First/second moment accumulators aligned with a [`Params`] store.
pub struct AdamState<T: Scalar> {
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &Params<T>) -> Self {
        AdamState {
            m: params
                .entries()
                .iter()
                .map(|e| vec![T::zero(); e.data.len()])
                .collect(),
            v: params
                .entries()
                .iter()
                .map(|e| vec![T::zero(); e.data.len()])
                .collect(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update in place.
pub fn adam_step<T: Scalar>(
    params: &mut Params<T>,
    grads: &Params<T>,
    state: &mut AdamState<T>,
    cfg: &AdamConfig,
) {
    assert!(
        cfg.learning_rate > 0.0,
        "adam: learning rate must be positive"
    );
    assert_eq!(
        params.len(),
        grads.len(),
        "adam: gradient store shape mismatch"
    );
    state.step += 1;
    let b1 = scalar::<T>(cfg.beta1);
    let b2 = scalar::<T>(cfg.beta2);
    let lr = scalar::<T>(cfg.learning_rate);
    let eps = scalar::<T>(cfg.epsilon);
    let corr1 = T::one() - scalar::<T>(cfg.beta1.powi(state.step as i32));
    let corr2 = T::one() - scalar::<T>(cfg.beta2.powi(state.step as i32));

    for (i, (p, g)) in params
        .entries_mut()
        .iter_mut()
        .zip(grads.entries())
        .enumerate()
    {
        assert_eq!(p.data.len(), g.data.len(), "adam: entry {} length mismatch", p.name);
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for j in 0..p.data.len() {
            let grad = g.data[j];
            m[j] = b1 * m[j] + (T::one() - b1) * grad;
            v[j] = b2 * v[j] + (T::one() - b2) * grad * grad;
            let m_hat = m[j] / corr1;
            let v_hat = v[j] / corr2;
            p.data[j] = p.data[j] - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(value: f64) -> Params<f64> {
        let mut p = Params::new();
        p.insert("x", vec![1], vec![value]);
        p
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut params = single(1.5);
        let grads = params.zeros_like();
        let mut state = AdamState::new(&params);
        adam_step(&mut params, &grads, &mut state, &AdamConfig::default());
        assert_eq!(params.get("x").data[0], 1.5);
    }

    #[test]
    fn first_step_is_a_bias_corrected_unit_step() {
        let mut params = single(0.0);
        let mut grads = params.zeros_like();
        grads.get_mut("x").data[0] = 1.0;
        let mut state = AdamState::new(&params);
        adam_step(
            &mut params,
            &grads,
            &mut state,
            &AdamConfig::with_learning_rate(0.1),
        );
        assert!((params.get("x").data[0] + 0.1).abs() < 1e-6);
    }

    #[test]
    fn quadratic_descent_is_monotone_and_converges() {
        // minimize x^2 from x = 5; |x| must shrink every step and end < 1
        let mut params = single(5.0);
        let mut state = AdamState::new(&params);
        let cfg = AdamConfig::with_learning_rate(0.06);
        let mut prev = 5.0f64;
        for _ in 0..100 {
            let x = params.get("x").data[0];
            let mut grads = params.zeros_like();
            grads.get_mut("x").data[0] = 2.0 * x;
            adam_step(&mut params, &grads, &mut state, &cfg);
            let now = params.get("x").data[0].abs();
            assert!(now < prev, "|x| grew from {prev} to {now}");
            prev = now;
        }
        assert!(prev < 1.0, "final |x| = {prev}");
    }

    #[test]
    #[should_panic(expected = "learning rate must be positive")]
    fn rejects_non_positive_learning_rate() {
        let mut params = single(0.0);
        let grads = params.zeros_like();
        let mut state = AdamState::new(&params);
        adam_step(
            &mut params,
            &grads,
            &mut state,
            &AdamConfig::with_learning_rate(0.0),
        );
    }
}
