use super::encoder::EncoderParams;
use crate::scalar::Scalar;

/// `v <- momentum * v + grad + weight_decay * param; param <- param - lr * v`
pub fn sgd_update<T: Scalar>(param: &mut [T], grad: &[T], velocity: &mut [T], lr: T, momentum: T, weight_decay: T) {
    debug_assert!(param.len() == grad.len() && grad.len() == velocity.len());
    for ((p, &g), v) in param.iter_mut().zip(grad).zip(velocity.iter_mut()) {
        *v = momentum * *v + g + weight_decay * *p;
        *p -= lr * *v;
    }
}

/// Mini-batch SGD with heavy-ball momentum and L2 weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct Sgd<T> {
    pub momentum: T,
    pub weight_decay: T,
    pub velocity: EncoderParams<T>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(params: &EncoderParams<T>, momentum: T, weight_decay: T) -> Self {
        Self {
            momentum,
            weight_decay,
            velocity: params.zeros_like(),
        }
    }

    pub fn step(&mut self, params: &mut EncoderParams<T>, grads: &EncoderParams<T>, lr: T) {
        let gs = grads.tensors();
        let vs = self.velocity.tensors_mut();
        for (((pn, p), (gn, g)), (vn, v)) in params.tensors_mut().into_iter().zip(gs).zip(vs) {
            debug_assert!(pn == gn && gn == vn);
            sgd_update(p.data_mut(), g.data(), v.data_mut(), lr, self.momentum, self.weight_decay);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_lr_leaves_params() {
        let mut p = [1.0f64, -2.0];
        let mut v = [0.0; 2];
        sgd_update(&mut p, &[0.5, 0.5], &mut v, 0.0, 0.9, 1e-4);
        assert_eq!(p, [1.0, -2.0]);
    }

    #[test]
    fn plain_descent_without_momentum_or_decay() {
        let mut p = [1.0f64, -2.0];
        let mut v = [0.0; 2];
        sgd_update(&mut p, &[0.5, -1.0], &mut v, 0.1, 0.0, 0.0);
        assert_eq!(p, [0.95, -1.9]);
    }

    #[test]
    fn quadratic_hand_computation() {
        // f(x) = (x - 3)^2, x0 = 1, grad = 2(x - 3) = -4.
        // step 1: v = -4 + 0.01*1 = -3.99, x = 1 + 0.1*3.99 = 1.399
        // step 2: grad = -3.202, v = 0.9*(-3.99) - 3.202 + 0.01399 = -6.77901, x = 1.399 + 0.677901
        let mut x = [1.0f64];
        let mut v = [0.0f64];
        for _ in 0..2 {
            let g = [2.0 * (x[0] - 3.0)];
            sgd_update(&mut x, &g, &mut v, 0.1, 0.9, 0.01);
        }
        assert!((x[0] - 2.076901).abs() < 1e-12, "{}", x[0]);
    }
}
