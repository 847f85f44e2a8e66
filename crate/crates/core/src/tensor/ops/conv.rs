use std::sync::Arc;

use crate::error::{shape_err, GastError, Result};
use crate::tensor::tape::Adjoint;
use crate::tensor::{gemm, Mat, Real, Tape, Tensor, Var};

/// Temporal addressing of a convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub dilation: usize,
    pub stride: usize,
}

impl Conv2dSpec {
    pub const UNIT: Conv2dSpec = Conv2dSpec { dilation: 1, stride: 1 };

    pub fn dilated(dilation: usize) -> Self {
        Conv2dSpec { dilation, stride: 1 }
    }

    pub fn strided(stride: usize) -> Self {
        Conv2dSpec { dilation: 1, stride }
    }
}

#[derive(Clone, Copy, Debug)]
struct Geom {
    b: usize,
    ci: usize,
    t: usize,
    n: usize,
    co: usize,
    kt: usize,
    kn: usize,
    d: usize,
    s: usize,
    t_out: usize,
    n_out: usize,
}

impl Geom {
    fn new(x: &[usize], w: &[usize], spec: Conv2dSpec) -> Result<Geom> {
        if x.len() != 4 || w.len() != 4 {
            return shape_err(format!("conv2d expects 4-d input and weight, got {x:?} and {w:?}"));
        }
        let (b, ci, t, n) = (x[0], x[1], x[2], x[3]);
        let (co, wci, kt, kn) = (w[0], w[1], w[2], w[3]);
        if wci != ci {
            return shape_err(format!("conv2d: input has {ci} channels, weight expects {wci}"));
        }
        if kt == 0 || spec.dilation == 0 || spec.stride == 0 {
            return shape_err("conv2d: kernel, dilation and stride must be >= 1");
        }
        if kn != 1 && kn != n {
            return shape_err(format!("conv2d: joint kernel must be 1 or {n}, got {kn}"));
        }
        let extent = (kt - 1) * spec.dilation + 1;
        if t < extent {
            return Err(GastError::TooShort { needed: extent, got: t });
        }
        let t_out = (t - extent) / spec.stride + 1;
        Ok(Geom { b, ci, t, n, co, kt, kn, d: spec.dilation, s: spec.stride, t_out, n_out: n - kn + 1 })
    }

    /// Dilated and pointwise kernels read contiguous time slices directly.
    fn direct(&self) -> bool {
        self.kn == 1 && self.s == 1
    }

    fn rows(&self) -> usize {
        self.ci * self.kt * self.kn
    }

    fn cols(&self) -> usize {
        self.t_out * self.n_out
    }

    /// Weight slice for temporal tap `a` viewed as `co × ci` (direct path).
    fn w_tap(&self, a: usize) -> Mat {
        Mat::new(a, self.co, self.ci, self.ci * self.kt, self.kt)
    }

    /// Input view for batch `b`, tap `a` as `ci × (t_out·n)` (direct path).
    fn x_tap(&self, b: usize, a: usize) -> Mat {
        let off = b * self.ci * self.t * self.n + a * self.d * self.n;
        Mat::new(off, self.ci, self.cols(), self.t * self.n, 1)
    }

    fn y_batch(&self, b: usize) -> Mat {
        Mat::dense(b * self.co * self.cols(), self.co, self.cols())
    }

    fn im2col<F: Real>(&self, x: &[F], b: usize, col: &mut [F]) {
        let l = self.cols();
        let xb = &x[b * self.ci * self.t * self.n..];
        for c in 0..self.ci {
            for a in 0..self.kt {
                for e in 0..self.kn {
                    let row = (c * self.kt + a) * self.kn + e;
                    let dst = &mut col[row * l..(row + 1) * l];
                    for to in 0..self.t_out {
                        let ti = to * self.s + a * self.d;
                        let src = &xb[(c * self.t + ti) * self.n + e..][..self.n_out];
                        dst[to * self.n_out..(to + 1) * self.n_out].copy_from_slice(src);
                    }
                }
            }
        }
    }

    fn col2im_add<F: Real>(&self, col: &[F], b: usize, dx: &mut [F]) {
        let l = self.cols();
        let xb = &mut dx[b * self.ci * self.t * self.n..];
        for c in 0..self.ci {
            for a in 0..self.kt {
                for e in 0..self.kn {
                    let row = (c * self.kt + a) * self.kn + e;
                    let src = &col[row * l..(row + 1) * l];
                    for to in 0..self.t_out {
                        let ti = to * self.s + a * self.d;
                        let dst = &mut xb[(c * self.t + ti) * self.n + e..][..self.n_out];
                        for (d, &s) in dst.iter_mut().zip(&src[to * self.n_out..(to + 1) * self.n_out]) {
                            *d += s;
                        }
                    }
                }
            }
        }
    }
}

fn forward<F: Real>(x: &Tensor<F>, w: &Tensor<F>, g: &Geom) -> Tensor<F> {
    let mut y = vec![F::zero(); g.b * g.co * g.cols()];
    if g.direct() {
        for b in 0..g.b {
            for a in 0..g.kt {
                let beta = if a == 0 { F::zero() } else { F::one() };
                gemm(F::one(), w.data(), g.w_tap(a), x.data(), g.x_tap(b, a), beta, &mut y, g.y_batch(b));
            }
        }
    } else {
        let mut col = vec![F::zero(); g.rows() * g.cols()];
        let wm = Mat::dense(0, g.co, g.rows());
        for b in 0..g.b {
            g.im2col(x.data(), b, &mut col);
            gemm(F::one(), w.data(), wm, &col, Mat::dense(0, g.rows(), g.cols()), F::zero(), &mut y, g.y_batch(b));
        }
    }
    Tensor::new(&[g.b, g.co, g.t_out, g.n_out], y).expect("conv output shape")
}

struct ConvAdjoint<F> {
    x: Arc<Tensor<F>>,
    w: Arc<Tensor<F>>,
    g: Geom,
}

impl<F: Real> Adjoint<F> for ConvAdjoint<F> {
    fn backward(&self, gy: &Tensor<F>, needs: &[bool]) -> Vec<Option<Tensor<F>>> {
        let g = &self.g;
        let mut dx = needs[0].then(|| vec![F::zero(); self.x.numel()]);
        let mut dw = needs[1].then(|| vec![F::zero(); self.w.numel()]);
        if g.direct() {
            for b in 0..g.b {
                for a in 0..g.kt {
                    if let Some(dw) = dw.as_mut() {
                        gemm(F::one(), gy.data(), g.y_batch(b), self.x.data(), g.x_tap(b, a).t(), F::one(), dw, g.w_tap(a));
                    }
                    if let Some(dx) = dx.as_mut() {
                        gemm(F::one(), self.w.data(), g.w_tap(a).t(), gy.data(), g.y_batch(b), F::one(), dx, g.x_tap(b, a));
                    }
                }
            }
        } else {
            let (r, l) = (g.rows(), g.cols());
            let mut col = vec![F::zero(); r * l];
            let wm = Mat::dense(0, g.co, r);
            let cm = Mat::dense(0, r, l);
            for b in 0..g.b {
                if let Some(dw) = dw.as_mut() {
                    g.im2col(self.x.data(), b, &mut col);
                    gemm(F::one(), gy.data(), g.y_batch(b), &col, cm.t(), F::one(), dw, wm);
                }
                if let Some(dx) = dx.as_mut() {
                    gemm(F::one(), self.w.data(), wm.t(), gy.data(), g.y_batch(b), F::zero(), &mut col, cm);
                    g.col2im_add(&col, b, dx);
                }
            }
        }
        vec![
            dx.map(|d| Tensor::new(self.x.shape(), d).unwrap()),
            dw.map(|d| Tensor::new(self.w.shape(), d).unwrap()),
        ]
    }
}

impl<F: Real> Tape<F> {
    /// Valid convolution of `(B, C_in, T, N)` with `(C_out, C_in, k_t, k_n)`.
    /// Time is dilated/strided per `spec`; the joint axis is either untouched
    /// (`k_n = 1`) or fully contracted (`k_n = N`).
    pub fn conv2d(&mut self, x: &Var<F>, w: &Var<F>, spec: Conv2dSpec) -> Result<Var<F>> {
        let g = Geom::new(x.shape(), w.shape(), spec)?;
        let y = Arc::new(forward(x.value(), w.value(), &g));
        self.push_lazy("conv2d", y, &[x, w], || ConvAdjoint { x: x.arc().clone(), w: w.arc().clone(), g })
    }
}
