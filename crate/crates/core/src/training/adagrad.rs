/// One AdaGrad update over a flat parameter vector.
///
/// Per coordinate: `G ← G + g²`, then `θ ← θ − lr · g / (√G + ε)`.
pub fn adagrad_step(
    params: &mut [f64],
    grads: &[f64],
    accumulators: &mut [f64],
    learning_rate: f64,
    epsilon: f64,
) {
    assert_eq!(params.len(), grads.len());
    assert_eq!(params.len(), accumulators.len());
    for ((theta, g), acc) in params.iter_mut().zip(grads).zip(accumulators.iter_mut()) {
        *acc += g * g;
        *theta -= learning_rate * g / (acc.sqrt() + epsilon);
    }
}

#[derive(Clone, Debug)]
pub struct AdaGrad {
    learning_rate: f64,
    epsilon: f64,
    accumulators: Vec<f64>,
}

impl AdaGrad {
    pub fn new(n_params: usize, learning_rate: f64, epsilon: f64) -> Self {
        AdaGrad {
            learning_rate,
            epsilon,
            accumulators: vec![0.0; n_params],
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        adagrad_step(
            params,
            grads,
            &mut self.accumulators,
            self.learning_rate,
            self.epsilon,
        );
    }

    pub fn accumulators(&self) -> &[f64] {
        &self.accumulators
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut theta = [0.5, -2.0];
        let mut acc = [0.0, 3.0];
        adagrad_step(&mut theta, &[0.0, 0.0], &mut acc, 0.01, 1e-8);
        assert_eq!(theta, [0.5, -2.0]);
        assert_eq!(acc, [0.0, 3.0]);
    }

    #[test]
    fn first_and_second_steps() {
        let mut opt = AdaGrad::new(1, 0.01, 1e-8);
        let mut theta = [0.0];
        opt.step(&mut theta, &[1.0]);
        // −0.01 / (1 + 1e-8)
        assert!((theta[0] - (-0.01 / (1.0 + 1e-8))).abs() < 1e-18);
        assert!((theta[0] + 0.01).abs() < 1e-9);
        let before = theta[0];
        opt.step(&mut theta, &[1.0]);
        let second = theta[0] - before;
        assert!((second - (-0.01 / (2f64.sqrt() + 1e-8))).abs() < 1e-18);
        assert!((second + 0.01 / 2f64.sqrt()).abs() < 1e-9);
        assert_eq!(opt.accumulators(), &[2.0]);
    }

    proptest! {
        #[test]
        fn accumulators_never_decrease(
            grads in prop::collection::vec(prop::collection::vec(-10f64..10.0, 4), 1..20)
        ) {
            let mut opt = AdaGrad::new(4, 0.01, 1e-8);
            let mut theta = [0.0; 4];
            let mut prev = opt.accumulators().to_vec();
            for g in &grads {
                opt.step(&mut theta, g);
                for (a, b) in opt.accumulators().iter().zip(&prev) {
                    prop_assert!(a >= b);
                }
                prev = opt.accumulators().to_vec();
            }
        }
    }
}
