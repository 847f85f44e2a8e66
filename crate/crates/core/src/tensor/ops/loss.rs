use std::sync::Arc;

use crate::error::{shape_err, Result};
use crate::tensor::tape::Adjoint;
use crate::tensor::{Real, Tape, Tensor, Var};

struct DistAdjoint<F> {
    /// pred − target
    diff: Vec<F>,
    dist: Vec<F>,
    dims: [usize; 4],
}

impl<F: Real> Adjoint<F> for DistAdjoint<F> {
    fn backward(&self, g: &Tensor<F>, _needs: &[bool]) -> Vec<Option<Tensor<F>>> {
        let [b, c, t, n] = self.dims;
        let inner = t * n;
        let scale = g.item() / F::of((b * inner) as f64);
        let mut dx = vec![F::zero(); self.diff.len()];
        for bi in 0..b {
            for p in 0..inner {
                let d = self.dist[bi * inner + p];
                if d == F::zero() {
                    continue;
                }
                for ci in 0..c {
                    let i = (bi * c + ci) * inner + p;
                    dx[i] = scale * self.diff[i] / d;
                }
            }
        }
        vec![Some(Tensor::new(&self.dims, dx).unwrap())]
    }
}

impl<F: Real> Tape<F> {
    /// Mean Euclidean distance between `(B, D, T, N)` prediction and target,
    /// taken over the coordinate axis `D` and averaged over batch, frames and
    /// joints. The gradient at a zero distance is taken as 0.
    pub fn mean_joint_distance(&mut self, pred: &Var<F>, target: &Tensor<F>) -> Result<Var<F>> {
        let Ok(dims) = <[usize; 4]>::try_from(pred.shape()) else {
            return shape_err(format!("mean_joint_distance expects (B, D, T, N), got {:?}", pred.shape()));
        };
        if target.shape() != pred.shape() {
            return shape_err(format!("mean_joint_distance: {:?} vs {:?}", pred.shape(), target.shape()));
        }
        let [b, c, t, n] = dims;
        let inner = t * n;
        let diff: Vec<F> = pred.value().data().iter().zip(target.data()).map(|(&p, &q)| p - q).collect();
        let mut dist = vec![F::zero(); b * inner];
        for bi in 0..b {
            for ci in 0..c {
                for p in 0..inner {
                    let v = diff[(bi * c + ci) * inner + p];
                    dist[bi * inner + p] += v * v;
                }
            }
        }
        dist.iter_mut().for_each(|d| *d = d.sqrt());
        let mean = dist.iter().copied().sum::<F>() / F::of(dist.len().max(1) as f64);
        let y = Arc::new(Tensor::scalar(mean));
        self.push_lazy("mean_joint_distance", y, &[pred], || DistAdjoint { diff, dist, dims })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Mode;

    #[test]
    fn uniform_offset() {
        let mut tape = Tape::<f64>::new(Mode::Train, 0);
        let target = Tensor::from_fn(&[2, 3, 2, 4], |i| i as f64);
        let mut shifted = target.clone();
        for bi in 0..2 {
            for p in 0..8 {
                shifted.data_mut()[bi * 24 + p] += 10.0;
            }
        }
        let pred = tape.leaf(shifted, true);
        let loss = tape.mean_joint_distance(&pred, &target).unwrap();
        assert!((loss.value().item() - 10.0).abs() < 1e-12);
        tape.backward(&loss).unwrap();
        let g = tape.grad(&pred).unwrap();
        assert!((g.at(&[0, 0, 0, 0]) - 1.0 / 16.0).abs() < 1e-15);
        assert_eq!(g.at(&[0, 1, 0, 0]), 0.0);
    }

    #[test]
    fn zero_distance_has_zero_gradient() {
        let mut tape = Tape::<f64>::new(Mode::Train, 0);
        let t = Tensor::ones(&[1, 3, 1, 2]);
        let pred = tape.leaf(t.clone(), true);
        let loss = tape.mean_joint_distance(&pred, &t).unwrap();
        assert_eq!(loss.value().item(), 0.0);
        tape.backward(&loss).unwrap();
        assert!(tape.grad(&pred).unwrap().data().iter().all(|&v| v == 0.0));
    }
}
