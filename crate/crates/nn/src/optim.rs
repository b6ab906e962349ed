use ps_core::Scalar;

use crate::{Gradients, ParamSet, Tensor};

pub trait Optimizer<T: Scalar> {
    fn step(&mut self, set: &mut ParamSet<T>, grads: &Gradients<T>);

    /// Internal buffers, for checkpointing. Names are stable across runs.
    fn state(&self) -> Vec<(String, Tensor<T>)>;

    fn load_state(&mut self, state: &[(String, Tensor<T>)]);

    fn learning_rate(&self) -> f64;
}

fn ensure_buffers<T: Scalar>(buf: &mut Vec<Tensor<T>>, set: &ParamSet<T>) {
    if buf.len() != set.len() {
        *buf = set.tensors.iter().map(|t| Tensor::zeros(&t.shape)).collect();
    }
}

/// Adaptive moment estimation.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(lr: f64, beta1: f64, beta2: f64) -> Self {
        Adam { lr, beta1, beta2, eps: 1e-8, t: 0, m: Vec::new(), v: Vec::new() }
    }
}

impl<T: Scalar> Optimizer<T> for Adam<T> {
    fn step(&mut self, set: &mut ParamSet<T>, grads: &Gradients<T>) {
        ensure_buffers(&mut self.m, set);
        ensure_buffers(&mut self.v, set);
        self.t += 1;
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let c1 = T::lit(1.0 - self.beta1.powi(self.t as i32));
        let c2 = T::lit(1.0 - self.beta2.powi(self.t as i32));
        let (lr, eps) = (T::lit(self.lr), T::lit(self.eps));
        let one = T::one();
        for i in 0..set.len() {
            let Some(g) = grads.get(set.id, i) else { continue };
            let (m, v) = (&mut self.m[i].data, &mut self.v[i].data);
            for (((p, &gg), mm), vv) in set.tensors[i].data.iter_mut().zip(&g.data).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mm = b1 * *mm + (one - b1) * gg;
                *vv = b2 * *vv + (one - b2) * gg * gg;
                *p -= lr * (*mm / c1) / ((*vv / c2).sqrt() + eps);
            }
        }
    }

    fn state(&self) -> Vec<(String, Tensor<T>)> {
        let mut out = vec![("t".to_string(), Tensor::scalar(T::lit(self.t as f64)))];
        out.extend(self.m.iter().enumerate().map(|(i, t)| (format!("m.{i}"), t.clone())));
        out.extend(self.v.iter().enumerate().map(|(i, t)| (format!("v.{i}"), t.clone())));
        out
    }

    fn load_state(&mut self, state: &[(String, Tensor<T>)]) {
        self.m.clear();
        self.v.clear();
        for (name, t) in state {
            if name == "t" {
                self.t = t.item().to_f64_lossy() as u64;
            } else if name.starts_with("m.") {
                self.m.push(t.clone());
            } else if name.starts_with("v.") {
                self.v.push(t.clone());
            }
        }
    }

    fn learning_rate(&self) -> f64 {
        self.lr
    }
}

/// Stochastic gradient descent with heavy-ball momentum.
#[derive(Debug, Clone)]
pub struct Sgd<T> {
    pub lr: f64,
    pub momentum: f64,
    velocity: Vec<Tensor<T>>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(lr: f64, momentum: f64) -> Self {
        Sgd { lr, momentum, velocity: Vec::new() }
    }
}

impl<T: Scalar> Optimizer<T> for Sgd<T> {
    fn step(&mut self, set: &mut ParamSet<T>, grads: &Gradients<T>) {
        ensure_buffers(&mut self.velocity, set);
        let (lr, mu) = (T::lit(self.lr), T::lit(self.momentum));
        for i in 0..set.len() {
            let Some(g) = grads.get(set.id, i) else { continue };
            for ((p, &gg), vel) in set.tensors[i].data.iter_mut().zip(&g.data).zip(self.velocity[i].data.iter_mut()) {
                *vel = mu * *vel + gg;
                *p -= lr * *vel;
            }
        }
    }

    fn state(&self) -> Vec<(String, Tensor<T>)> {
        self.velocity.iter().enumerate().map(|(i, t)| (format!("velocity.{i}"), t.clone())).collect()
    }

    fn load_state(&mut self, state: &[(String, Tensor<T>)]) {
        self.velocity = state.iter().map(|(_, t)| t.clone()).collect();
    }

    fn learning_rate(&self) -> f64 {
        self.lr
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Tape;

    fn quadratic_grads(set: &ParamSet<f64>) -> Gradients<f64> {
        // loss = mean((p - 3)^2) over one parameter vector
        let mut tape = Tape::new();
        let p = tape.param(set, 0);
        let target = tape.constant(Tensor::full(&[4], 3.0));
        let d = tape.sub(p, target);
        let sq = tape.mul(d, d);
        let l = tape.mean(sq);
        tape.backward(l)
    }

    #[test]
    fn adam_and_sgd_minimize_quadratic() {
        let mut opts: Vec<Box<dyn Optimizer<f64>>> = vec![Box::new(Adam::new(0.1, 0.0, 0.999)), Box::new(Sgd::new(0.1, 0.9))];
        for opt in opts.iter_mut() {
            let mut set = ParamSet::new(0);
            set.add("p", Tensor::new(vec![4], vec![0.0, 1.0, -2.0, 5.0]));
            for _ in 0..500 {
                let g = quadratic_grads(&set);
                opt.step(&mut set, &g);
            }
            assert!(set.tensors[0].data.iter().all(|&v| (v - 3.0).abs() < 1e-2), "{:?}", set.tensors[0].data);
        }
    }

    #[test]
    fn adam_state_round_trip() {
        let mut set = ParamSet::new(0);
        set.add("p", Tensor::new(vec![4], vec![0.0; 4]));
        let mut a = Adam::new(0.01, 0.0, 0.999);
        let g = quadratic_grads(&set);
        a.step(&mut set, &g);
        let mut b = Adam::<f64>::new(0.01, 0.0, 0.999);
        b.load_state(&a.state());
        let (mut s1, mut s2) = (set.clone(), set.clone());
        a.step(&mut s1, &g);
        b.step(&mut s2, &g);
        assert_eq!(s1.tensors, s2.tensors);
    }
}
