use std::sync::Arc;

use rand::Rng;

use crate::error::{shape_err, Result};
use crate::tensor::tape::Adjoint;
use crate::tensor::{Real, Tape, Tensor, Var};

fn same_shape<F: Real>(op: &str, a: &Var<F>, b: &Var<F>) -> Result<()> {
    if a.shape() != b.shape() {
        return shape_err(format!("{op}: {:?} vs {:?}", a.shape(), b.shape()));
    }
    Ok(())
}

fn dims4(op: &str, shape: &[usize]) -> Result<[usize; 4]> {
    <[usize; 4]>::try_from(shape).or_else(|_| shape_err(format!("{op} expects (B, C, T, N), got {shape:?}")))
}

/// Gradient scaled elementwise by a saved multiplier.
struct ScaleBy<F>(Arc<Tensor<F>>);

impl<F: Real> Adjoint<F> for ScaleBy<F> {
    fn backward(&self, g: &Tensor<F>, _needs: &[bool]) -> Vec<Option<Tensor<F>>> {
        let data = g.data().iter().zip(self.0.data()).map(|(&g, &m)| g * m).collect();
        vec![Some(Tensor::new(g.shape(), data).unwrap())]
    }
}

struct LeakyAdjoint<F> {
    x: Arc<Tensor<F>>,
    slope: F,
}

impl<F: Real> Adjoint<F> for LeakyAdjoint<F> {
    fn backward(&self, g: &Tensor<F>, _needs: &[bool]) -> Vec<Option<Tensor<F>>> {
        let data = g
            .data()
            .iter()
            .zip(self.x.data())
            .map(|(&g, &x)| if x > F::zero() { g } else { g * self.slope })
            .collect();
        vec![Some(Tensor::new(g.shape(), data).unwrap())]
    }
}

struct ReluAdjoint<F>(Arc<Tensor<F>>);

impl<F: Real> Adjoint<F> for ReluAdjoint<F> {
    fn backward(&self, g: &Tensor<F>, _needs: &[bool]) -> Vec<Option<Tensor<F>>> {
        let data = g
            .data()
            .iter()
            .zip(self.0.data())
            .map(|(&g, &y)| if y > F::zero() { g } else { F::zero() })
            .collect();
        vec![Some(Tensor::new(g.shape(), data).unwrap())]
    }
}

struct AddAdjoint;

impl<F: Real> Adjoint<F> for AddAdjoint {
    fn backward(&self, g: &Tensor<F>, needs: &[bool]) -> Vec<Option<Tensor<F>>> {
        needs.iter().map(|&n| n.then(|| g.clone())).collect()
    }
}

struct MulAdjoint<F> {
    a: Arc<Tensor<F>>,
    b: Arc<Tensor<F>>,
}

impl<F: Real> Adjoint<F> for MulAdjoint<F> {
    fn backward(&self, g: &Tensor<F>, needs: &[bool]) -> Vec<Option<Tensor<F>>> {
        let prod = |other: &Tensor<F>| {
            let data = g.data().iter().zip(other.data()).map(|(&g, &o)| g * o).collect();
            Tensor::new(g.shape(), data).unwrap()
        };
        vec![needs[0].then(|| prod(&self.b)), needs[1].then(|| prod(&self.a))]
    }
}

struct ScalarScale<F>(F);

impl<F: Real> Adjoint<F> for ScalarScale<F> {
    fn backward(&self, g: &Tensor<F>, _needs: &[bool]) -> Vec<Option<Tensor<F>>> {
        vec![Some(g.map(|v| v * self.0))]
    }
}

struct ConcatAdjoint {
    /// (channels, shape) per input
    parts: Vec<(usize, Vec<usize>)>,
    total: usize,
    inner: usize,
    batch: usize,
}

impl<F: Real> Adjoint<F> for ConcatAdjoint {
    fn backward(&self, g: &Tensor<F>, needs: &[bool]) -> Vec<Option<Tensor<F>>> {
        let mut out = Vec::with_capacity(self.parts.len());
        let mut c0 = 0;
        for (i, (c, shape)) in self.parts.iter().enumerate() {
            if needs[i] {
                let mut d = Vec::with_capacity(self.batch * c * self.inner);
                for b in 0..self.batch {
                    let start = (b * self.total + c0) * self.inner;
                    d.extend_from_slice(&g.data()[start..start + c * self.inner]);
                }
                out.push(Some(Tensor::new(shape, d).unwrap()));
            } else {
                out.push(None);
            }
            c0 += c;
        }
        out
    }
}

struct BiasAdjoint {
    dims: [usize; 4],
}

impl<F: Real> Adjoint<F> for BiasAdjoint {
    fn backward(&self, g: &Tensor<F>, needs: &[bool]) -> Vec<Option<Tensor<F>>> {
        let [b, c, t, n] = self.dims;
        let inner = t * n;
        let db = needs[1].then(|| {
            let mut db = vec![F::zero(); c];
            for bi in 0..b {
                for (ci, acc) in db.iter_mut().enumerate() {
                    let s = (bi * c + ci) * inner;
                    *acc += g.data()[s..s + inner].iter().copied().sum::<F>();
                }
            }
            Tensor::from_vec(db)
        });
        vec![needs[0].then(|| g.clone()), db]
    }
}

struct SliceAdjoint {
    dims: [usize; 4],
    start: usize,
    step: usize,
    count: usize,
}

impl<F: Real> Adjoint<F> for SliceAdjoint {
    fn backward(&self, g: &Tensor<F>, _needs: &[bool]) -> Vec<Option<Tensor<F>>> {
        let [b, c, t, n] = self.dims;
        let mut dx = vec![F::zero(); b * c * t * n];
        for bc in 0..b * c {
            for k in 0..self.count {
                let src = (bc * self.count + k) * n;
                let dst = (bc * t + self.start + k * self.step) * n;
                dx[dst..dst + n].copy_from_slice(&g.data()[src..src + n]);
            }
        }
        vec![Some(Tensor::new(&self.dims, dx).unwrap())]
    }
}

struct SumAdjoint {
    shape: Vec<usize>,
    scale: f64,
}

impl<F: Real> Adjoint<F> for SumAdjoint {
    fn backward(&self, g: &Tensor<F>, _needs: &[bool]) -> Vec<Option<Tensor<F>>> {
        vec![Some(Tensor::full(&self.shape, g.item() * F::of(self.scale)))]
    }
}

impl<F: Real> Tape<F> {
    pub fn relu(&mut self, x: &Var<F>) -> Result<Var<F>> {
        let y = Arc::new(x.value().map(|v| if v > F::zero() { v } else { F::zero() }));
        let keep = y.clone();
        self.push_lazy("relu", y, &[x], || ReluAdjoint(keep))
    }

    /// `x` for `x ≥ 0`, `slope · x` otherwise.
    pub fn leaky_relu(&mut self, x: &Var<F>, slope: f64) -> Result<Var<F>> {
        let slope = F::of(slope);
        let y = Arc::new(x.value().map(|v| if v >= F::zero() { v } else { v * slope }));
        self.push_lazy("leaky_relu", y, &[x], || LeakyAdjoint { x: x.arc().clone(), slope })
    }

    pub fn add(&mut self, a: &Var<F>, b: &Var<F>) -> Result<Var<F>> {
        same_shape("add", a, b)?;
        let data = a.value().data().iter().zip(b.value().data()).map(|(&x, &y)| x + y).collect();
        let y = Arc::new(Tensor::new(a.shape(), data)?);
        self.push("add", y, &[a, b], AddAdjoint)
    }

    pub fn mul(&mut self, a: &Var<F>, b: &Var<F>) -> Result<Var<F>> {
        same_shape("mul", a, b)?;
        let data = a.value().data().iter().zip(b.value().data()).map(|(&x, &y)| x * y).collect();
        let y = Arc::new(Tensor::new(a.shape(), data)?);
        self.push_lazy("mul", y, &[a, b], || MulAdjoint { a: a.arc().clone(), b: b.arc().clone() })
    }

    pub fn scale(&mut self, x: &Var<F>, c: f64) -> Result<Var<F>> {
        let c = F::of(c);
        let y = Arc::new(x.value().map(|v| v * c));
        self.push("scale", y, &[x], ScalarScale(c))
    }

    /// Concatenate `(B, C_i, T, N)` tensors along the channel axis.
    pub fn concat_channels(&mut self, xs: &[&Var<F>]) -> Result<Var<F>> {
        let Some(first) = xs.first() else {
            return shape_err("concat_channels of nothing");
        };
        let [b, _, t, n] = dims4("concat_channels", first.shape())?;
        let mut parts = Vec::with_capacity(xs.len());
        for x in xs {
            let [xb, c, xt, xn] = dims4("concat_channels", x.shape())?;
            if (xb, xt, xn) != (b, t, n) {
                return shape_err(format!("concat_channels: {:?} vs {:?}", first.shape(), x.shape()));
            }
            parts.push((c, x.shape().to_vec()));
        }
        let total: usize = parts.iter().map(|p| p.0).sum();
        let inner = t * n;
        let mut data = Vec::with_capacity(b * total * inner);
        for bi in 0..b {
            for (x, (c, _)) in xs.iter().zip(&parts) {
                let s = bi * c * inner;
                data.extend_from_slice(&x.value().data()[s..s + c * inner]);
            }
        }
        let y = Arc::new(Tensor::new(&[b, total, t, n], data)?);
        self.push("concat_channels", y, xs, ConcatAdjoint { parts, total, inner, batch: b })
    }

    /// Inverted dropout: identity in eval mode, otherwise zeroes elements with
    /// probability `p` and rescales survivors by `1/(1-p)`.
    pub fn dropout(&mut self, x: &Var<F>, p: f64) -> Result<Var<F>> {
        if !(0.0..1.0).contains(&p) {
            return shape_err(format!("dropout probability {p} outside [0, 1)"));
        }
        if !self.is_training() || p == 0.0 {
            return Ok(x.clone());
        }
        let keep = F::of(1.0 / (1.0 - p));
        let rng = self.rng();
        let mask = Arc::new(Tensor::from_fn(x.shape(), |_| if rng.gen::<f64>() < p { F::zero() } else { keep }));
        let data = x.value().data().iter().zip(mask.data()).map(|(&v, &m)| v * m).collect();
        let y = Arc::new(Tensor::new(x.shape(), data)?);
        self.push("dropout", y, &[x], ScaleBy(mask))
    }

    /// Adds a per-channel bias `(C)` to `(B, C, T, N)`.
    pub fn bias_channels(&mut self, x: &Var<F>, bias: &Var<F>) -> Result<Var<F>> {
        let dims = dims4("bias_channels", x.shape())?;
        let [_, c, t, n] = dims;
        if bias.shape() != [c] {
            return shape_err(format!("bias_channels: bias {:?} for {c} channels", bias.shape()));
        }
        let inner = t * n;
        let bv = bias.value().data();
        let data = x.value().data().iter().enumerate().map(|(i, &v)| v + bv[(i / inner) % c]).collect();
        let y = Arc::new(Tensor::new(x.shape(), data)?);
        self.push("bias_channels", y, &[x, bias], BiasAdjoint { dims })
    }

    /// Frames `start, start+step, …` (`count` of them) along the time axis.
    pub fn time_slice(&mut self, x: &Var<F>, start: usize, step: usize, count: usize) -> Result<Var<F>> {
        let dims = dims4("time_slice", x.shape())?;
        let [b, c, t, n] = dims;
        if step == 0 || count == 0 || start + (count - 1) * step >= t {
            return shape_err(format!("time_slice({start}, {step}, {count}) out of range for T={t}"));
        }
        let xv = x.value().data();
        let mut data = Vec::with_capacity(b * c * count * n);
        for bc in 0..b * c {
            for k in 0..count {
                let s = (bc * t + start + k * step) * n;
                data.extend_from_slice(&xv[s..s + n]);
            }
        }
        let y = Arc::new(Tensor::new(&[b, c, count, n], data)?);
        self.push("time_slice", y, &[x], SliceAdjoint { dims, start, step, count })
    }

    pub fn sum(&mut self, x: &Var<F>) -> Result<Var<F>> {
        let y = Arc::new(Tensor::scalar(x.value().sum()));
        self.push("sum", y, &[x], SumAdjoint { shape: x.shape().to_vec(), scale: 1.0 })
    }

    pub fn mean(&mut self, x: &Var<F>) -> Result<Var<F>> {
        let n = x.value().numel().max(1) as f64;
        let y = Arc::new(Tensor::scalar(x.value().sum() / F::of(n)));
        self.push("mean", y, &[x], SumAdjoint { shape: x.shape().to_vec(), scale: 1.0 / n })
    }
}
