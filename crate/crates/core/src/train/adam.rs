use crate::error::{Error, Result};
use crate::nn::OptimizerSnapshot;
use crate::tensor::{Real, Tensor};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Bias-corrected Adam over a fixed, ordered list of parameters.
///
/// The update is evaluated in f64 and rounded into `T`.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T: Real = f32> {
    step: u64,
    first: Vec<Tensor<T>>,
    second: Vec<Tensor<T>>,
}

impl<T: Real> Adam<T> {
    /// Zeroed moments mirroring `shapes`.
    pub fn new<'a>(shapes: impl IntoIterator<Item = &'a [usize]>) -> Self {
        let first: Vec<Tensor<T>> = shapes.into_iter().map(|s| Tensor::zeros(s)).collect();
        Adam {
            step: 0,
            second: first.clone(),
            first,
        }
    }

    /// Number of updates applied so far.
    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[Tensor<T>], &[Tensor<T>]) {
        (&self.first, &self.second)
    }

    /// One update. `params[i]` is `(name, tensor)`, `grads[i]` its gradient.
    /// Every gradient is checked before anything is touched, so a rejected
    /// step leaves both parameters and moments unchanged.
    pub fn step(&mut self, params: &mut [(&str, &mut Tensor<T>)], grads: &[&Tensor<T>], lr: f64) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != params.len() {
            return Err(Error::invalid(
                "adam_step",
                format!(
                    "{} moments, {} parameters, {} gradients",
                    self.first.len(),
                    params.len(),
                    grads.len()
                ),
            ));
        }
        for (i, ((name, p), g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || p.shape() != self.first[i].shape() {
                return Err(Error::shape("adam_step", p.shape(), g.shape()));
            }
            if !g.all_finite() {
                return Err(Error::NonFinite {
                    what: format!("gradient of `{name}`"),
                    step: self.step + 1,
                });
            }
        }

        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - ADAM_BETA1.powi(t);
        let c2 = 1.0 - ADAM_BETA2.powi(t);
        for (i, ((_, p), g)) in params.iter_mut().zip(grads).enumerate() {
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            for (((pj, &gj), mj), vj) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                let g = gj.to_f64();
                let m_new = ADAM_BETA1 * mj.to_f64() + (1.0 - ADAM_BETA1) * g;
                let v_new = ADAM_BETA2 * vj.to_f64() + (1.0 - ADAM_BETA2) * g * g;
                *mj = T::from_f64(m_new);
                *vj = T::from_f64(v_new);
                let update = lr * (m_new / c1) / ((v_new / c2).sqrt() + ADAM_EPS);
                *pj = T::from_f64(pj.to_f64() - update);
            }
        }
        Ok(())
    }
}

impl Adam<f32> {
    pub fn snapshot(&self) -> OptimizerSnapshot {
        OptimizerSnapshot {
            step: self.step,
            first: self.first.clone(),
            second: self.second.clone(),
        }
    }

    /// Restores moments, checking they mirror `shapes`.
    pub fn from_snapshot<'a>(snap: OptimizerSnapshot, shapes: impl IntoIterator<Item = &'a [usize]>) -> Result<Self> {
        let shapes: Vec<&[usize]> = shapes.into_iter().collect();
        if snap.first.len() != shapes.len() || snap.second.len() != shapes.len() {
            return Err(Error::invalid(
                "adam_restore",
                format!("snapshot has {} moments for {} parameters", snap.first.len(), shapes.len()),
            ));
        }
        for ((m, v), s) in snap.first.iter().zip(&snap.second).zip(&shapes) {
            if m.shape() != *s || v.shape() != *s {
                return Err(Error::shape("adam_restore", s, m.shape()));
            }
        }
        Ok(Adam {
            step: snap.step,
            first: snap.first,
            second: snap.second,
        })
    }
}
