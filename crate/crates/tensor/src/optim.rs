use crate::params::{Grads, Matrix, ParamGroup, ParamStore};

/// Adam with per-parameter step counts and per-group learning rates.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    state: Vec<Option<Moments>>,
}

#[derive(Debug, Clone)]
struct Moments {
    m: Matrix,
    v: Matrix,
    t: i32,
}

impl Default for Adam {
    fn default() -> Self {
        Self::new(0.9, 0.999, 1e-8)
    }
}

impl Adam {
    pub fn new(beta1: f64, beta2: f64, eps: f64) -> Self {
        Self { beta1, beta2, eps, state: Vec::new() }
    }

    /// Applies one update to every parameter that has a gradient. `lr` maps a
    /// group to its current rate; `None` freezes the group.
    pub fn step(&mut self, params: &mut ParamStore, grads: &Grads, lr: impl Fn(ParamGroup) -> Option<f64>) {
        if self.state.len() < params.len() {
            self.state.resize(params.len(), None);
        }
        for (id, g) in grads.iter() {
            let group = params.get(id).group;
            let Some(rate) = lr(group) else { continue };
            let st = self.state[id.0].get_or_insert_with(|| Moments {
                m: Matrix::zeros(g.dim()),
                v: Matrix::zeros(g.dim()),
                t: 0,
            });
            st.t += 1;
            let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
            st.m.zip_mut_with(g, |m, &g| *m = b1 * *m + (1.0 - b1) * g);
            st.v.zip_mut_with(g, |v, &g| *v = b2 * *v + (1.0 - b2) * g * g);
            let bc1 = 1.0 - b1.powi(st.t);
            let bc2 = 1.0 - b2.powi(st.t);
            let value = params.value_mut(id);
            ndarray::Zip::from(value).and(&st.m).and(&st.v).for_each(|p, &m, &v| {
                *p -= rate * (m / bc1) / ((v / bc2).sqrt() + eps);
            });
        }
    }
}
