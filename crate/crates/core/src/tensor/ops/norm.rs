use std::sync::Arc;

use crate::error::{shape_err, Result};
use crate::tensor::tape::Adjoint;
use crate::tensor::{ParamId, Real, StatUpdate, Tape, Tensor, Var};

/// Shared by both modes: `xhat` is the normalized input, `inv_std` the per
/// channel `1/sqrt(var + eps)`.
struct BnAdjoint<F> {
    xhat: Arc<Tensor<F>>,
    gamma: Arc<Tensor<F>>,
    inv_std: Vec<F>,
    dims: [usize; 4],
    batch_stats: bool,
}

impl<F: Real> Adjoint<F> for BnAdjoint<F> {
    fn backward(&self, g: &Tensor<F>, needs: &[bool]) -> Vec<Option<Tensor<F>>> {
        let [b, c, t, n] = self.dims;
        let inner = t * n;
        let m = F::of((b * inner) as f64);
        let xh = self.xhat.data();
        let gd = g.data();
        let mut dgamma = vec![F::zero(); c];
        let mut dbeta = vec![F::zero(); c];
        for bi in 0..b {
            for ci in 0..c {
                let s = (bi * c + ci) * inner;
                for i in s..s + inner {
                    dgamma[ci] += gd[i] * xh[i];
                    dbeta[ci] += gd[i];
                }
            }
        }
        let dx = needs[0].then(|| {
            let mut dx = vec![F::zero(); gd.len()];
            for bi in 0..b {
                for ci in 0..c {
                    let s = (bi * c + ci) * inner;
                    let k = self.gamma.data()[ci] * self.inv_std[ci];
                    for i in s..s + inner {
                        dx[i] = if self.batch_stats {
                            k * (gd[i] - (dbeta[ci] + xh[i] * dgamma[ci]) / m)
                        } else {
                            k * gd[i]
                        };
                    }
                }
            }
            Tensor::new(g.shape(), dx).unwrap()
        });
        vec![dx, needs[1].then(|| Tensor::from_vec(dgamma)), needs[2].then(|| Tensor::from_vec(dbeta))]
    }
}

impl<F: Real> Tape<F> {
    /// Per-channel normalization of `(B, C, T, N)` over batch, time and
    /// joints. Training mode normalizes with batch statistics and, when
    /// `stat_ids` names the running buffers, queues a [`StatUpdate`]; eval mode
    /// uses the running statistics.
    #[allow(clippy::too_many_arguments)]
    pub fn batchnorm2d(
        &mut self,
        x: &Var<F>,
        gamma: &Var<F>,
        beta: &Var<F>,
        running_mean: &Tensor<F>,
        running_var: &Tensor<F>,
        eps: f64,
        stat_ids: Option<(ParamId, ParamId)>,
    ) -> Result<Var<F>> {
        let Ok(dims) = <[usize; 4]>::try_from(x.shape()) else {
            return shape_err(format!("batchnorm2d expects (B, C, T, N), got {:?}", x.shape()));
        };
        let [b, c, t, n] = dims;
        for (what, s) in [
            ("gamma", gamma.shape()),
            ("beta", beta.shape()),
            ("running_mean", running_mean.shape()),
            ("running_var", running_var.shape()),
        ] {
            if s != [c] {
                return shape_err(format!("batchnorm2d: {what} {s:?} for {c} channels"));
            }
        }
        let inner = t * n;
        let count = b * inner;
        let xd = x.value().data();
        let training = self.is_training();
        let (mean, var) = if training {
            let mut mean = vec![0.0f64; c];
            let mut var = vec![0.0f64; c];
            for bi in 0..b {
                for ci in 0..c {
                    let s = (bi * c + ci) * inner;
                    mean[ci] += xd[s..s + inner].iter().map(|v| v.as_f64()).sum::<f64>();
                }
            }
            mean.iter_mut().for_each(|m| *m /= count as f64);
            for bi in 0..b {
                for ci in 0..c {
                    let s = (bi * c + ci) * inner;
                    var[ci] += xd[s..s + inner].iter().map(|v| (v.as_f64() - mean[ci]).powi(2)).sum::<f64>();
                }
            }
            var.iter_mut().for_each(|v| *v /= count as f64);
            (mean, var)
        } else {
            (
                running_mean.data().iter().map(|v| v.as_f64()).collect(),
                running_var.data().iter().map(|v| v.as_f64()).collect(),
            )
        };
        let inv_std: Vec<F> = var.iter().map(|&v| F::of(1.0 / (v + eps).sqrt())).collect();
        let mean_f: Vec<F> = mean.iter().map(|&m| F::of(m)).collect();
        let mut xhat = vec![F::zero(); xd.len()];
        let mut y = vec![F::zero(); xd.len()];
        let (gv, bv) = (gamma.value().data(), beta.value().data());
        for bi in 0..b {
            for ci in 0..c {
                let s = (bi * c + ci) * inner;
                for i in s..s + inner {
                    xhat[i] = (xd[i] - mean_f[ci]) * inv_std[ci];
                    y[i] = gv[ci] * xhat[i] + bv[ci];
                }
            }
        }
        if training {
            if let Some((rm, rv)) = stat_ids {
                let unbias = if count > 1 { count as f64 / (count - 1) as f64 } else { 1.0 };
                self.record_stats(StatUpdate {
                    running_mean: rm,
                    running_var: rv,
                    batch_mean: Tensor::from_vec(mean_f.clone()),
                    batch_var: Tensor::from_vec(var.iter().map(|&v| F::of(v * unbias)).collect()),
                });
            }
        }
        let y = Arc::new(Tensor::new(x.shape(), y)?);
        self.push_lazy("batchnorm2d", y, &[x, gamma, beta], || BnAdjoint {
            xhat: Arc::new(Tensor::new(x.shape(), xhat).unwrap()),
            gamma: gamma.arc().clone(),
            inv_std,
            dims,
            batch_stats: training,
        })
    }
}
