//! Adam with bias correction, one independent state per parameter group.

use crate::error::{Error, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-15;

/// Moments and step counter for one parameter group.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamGroup {
    pub name: String,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamGroup {
    pub fn new(name: impl Into<String>, len: usize) -> Self {
        AdamGroup {
            name: name.into(),
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// One Adam update with a uniform learning rate.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
        self.step_with(params, grads, |_| lr)
    }

    /// One Adam update where element `i` uses `lr(i)`.
    pub fn step_with(
        &mut self,
        params: &mut [f64],
        grads: &[f64],
        lr: impl Fn(usize) -> f64,
    ) -> Result<()> {
        if params.len() != self.len() || grads.len() != self.len() {
            return Err(Error::ShapeMismatch(format!(
                "adam group {}: {} params, {} grads, {} moments",
                self.name,
                params.len(),
                grads.len(),
                self.len()
            )));
        }
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient(self.name.clone()));
        }
        self.step += 1;
        let bc1 = 1.0 - BETA1.powi(self.step as i32);
        let bc2 = 1.0 - BETA2.powi(self.step as i32);
        for (i, ((p, &g), (m, v))) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
            .enumerate()
        {
            *m = BETA1 * *m + (1.0 - BETA1) * g;
            *v = BETA2 * *v + (1.0 - BETA2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr(i) * m_hat / (v_hat.sqrt() + EPSILON);
        }
        Ok(())
    }

    /// Rebuilds moments after the parameter array was reindexed. Entry `j` of
    /// `sources` names the old element block feeding new block `j`, or `None`
    /// for fresh zero moments. Blocks are `stride` elements wide.
    pub fn remap(&mut self, sources: &[Option<usize>], stride: usize) {
        let mut m = Vec::with_capacity(sources.len() * stride);
        let mut v = Vec::with_capacity(sources.len() * stride);
        for src in sources {
            match src {
                Some(s) => {
                    m.extend_from_slice(&self.m[s * stride..(s + 1) * stride]);
                    v.extend_from_slice(&self.v[s * stride..(s + 1) * stride]);
                }
                None => {
                    m.extend(std::iter::repeat_n(0.0, stride));
                    v.extend(std::iter::repeat_n(0.0, stride));
                }
            }
        }
        self.m = m;
        self.v = v;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut g = AdamGroup::new("x", 3);
        let mut p = vec![1.0, -2.0, 3.0];
        g.step(&mut p, &[0.0; 3], 0.1).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 3.0]);
        assert_eq!(g.step, 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut g = AdamGroup::new("x", 1);
        let mut p = vec![0.5];
        g.step(&mut p, &[1.0], 0.01).unwrap();
        // m_hat = 1, v_hat = 1
        let expected = 0.5 - 0.01 * 1.0 / (1.0 + EPSILON);
        assert!((p[0] - expected).abs() < 1e-16);
        assert!((p[0] - 0.49).abs() < 1e-12);
    }

    #[test]
    fn hand_evaluated_second_step() {
        let mut g = AdamGroup::new("x", 1);
        let mut p = vec![0.0];
        g.step(&mut p, &[1.0], 0.1).unwrap();
        g.step(&mut p, &[-2.0], 0.1).unwrap();
        let m: f64 = 0.9 * 0.1 + 0.1 * -2.0;
        let v: f64 = 0.999 * 0.001 + 0.001 * 4.0;
        let step2 = 0.1 * (m / (1.0 - 0.81)) / ((v / (1.0 - 0.999f64.powi(2))).sqrt() + EPSILON);
        assert!((p[0] - (-0.1 - step2)).abs() < 1e-12);
    }

    #[test]
    fn groups_are_isolated() {
        let mut a = AdamGroup::new("a", 1);
        let mut b = AdamGroup::new("b", 1);
        let mut pa = vec![0.0];
        let mut pb = vec![0.0];
        a.step(&mut pa, &[1.0], 0.1).unwrap();
        a.step(&mut pa, &[1.0], 0.1).unwrap();
        b.step(&mut pb, &[1.0], 0.1).unwrap();
        assert_eq!(b.step, 1);
        assert!((pb[0] + 0.1).abs() < 1e-12);
    }

    #[test]
    fn non_finite_gradient_names_group() {
        let mut g = AdamGroup::new("positions", 2);
        let mut p = vec![0.0; 2];
        match g.step(&mut p, &[0.0, f64::NAN], 0.1) {
            Err(Error::NonFiniteGradient(name)) => assert_eq!(name, "positions"),
            other => panic!("{other:?}"),
        }
        assert_eq!(g.step, 0);
    }

    #[test]
    fn remap_keeps_and_zeroes_blocks() {
        let mut g = AdamGroup::new("x", 4);
        g.m = vec![1.0, 2.0, 3.0, 4.0];
        g.v = vec![5.0, 6.0, 7.0, 8.0];
        g.remap(&[Some(1), None, Some(0)], 2);
        assert_eq!(g.m, vec![3.0, 4.0, 0.0, 0.0, 1.0, 2.0]);
        assert_eq!(g.v, vec![7.0, 8.0, 0.0, 0.0, 5.0, 6.0]);
    }
}
