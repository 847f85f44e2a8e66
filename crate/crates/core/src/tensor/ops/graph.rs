//! Node-mixing kernels for graph layers on `(B, C, T, N)` features.

use std::sync::Arc;

use crate::error::{shape_err, Result};
use crate::tensor::tape::Adjoint;
use crate::tensor::{gemm, Mat, Real, Tape, Tensor, Var};

fn dims4(op: &str, shape: &[usize]) -> Result<[usize; 4]> {
    <[usize; 4]>::try_from(shape).or_else(|_| shape_err(format!("{op} expects (B, C, T, N), got {shape:?}")))
}

// ── static adjacency ────────────────────────────────────────────────────

#[derive(Clone, Copy)]
struct StaticGeom {
    b: usize,
    c: usize,
    t: usize,
    n: usize,
    g: usize,
}

impl StaticGeom {
    fn gs(&self) -> usize {
        self.c / self.g
    }

    /// Channels of group `g` in batch `b`, stacked as `(gs·T) × N`.
    fn x_block(&self, b: usize, g: usize) -> Mat {
        let off = (b * self.c + g * self.gs()) * self.t * self.n;
        Mat::dense(off, self.gs() * self.t, self.n)
    }

    fn adj(&self, g: usize) -> Mat {
        Mat::dense(g * self.n * self.n, self.n, self.n)
    }
}

struct StaticMixAdjoint<F> {
    x: Arc<Tensor<F>>,
    adj: Arc<Tensor<F>>,
    geom: StaticGeom,
}

impl<F: Real> Adjoint<F> for StaticMixAdjoint<F> {
    fn backward(&self, gy: &Tensor<F>, needs: &[bool]) -> Vec<Option<Tensor<F>>> {
        let s = self.geom;
        let mut dx = needs[0].then(|| vec![F::zero(); self.x.numel()]);
        let mut dadj = needs[1].then(|| vec![F::zero(); self.adj.numel()]);
        for b in 0..s.b {
            for g in 0..s.g {
                let blk = s.x_block(b, g);
                if let Some(dx) = dx.as_mut() {
                    gemm(F::one(), gy.data(), blk, self.adj.data(), s.adj(g), F::zero(), dx, blk);
                }
                if let Some(da) = dadj.as_mut() {
                    gemm(F::one(), gy.data(), blk.t(), self.x.data(), blk, F::one(), da, s.adj(g));
                }
            }
        }
        vec![
            dx.map(|d| Tensor::new(self.x.shape(), d).unwrap()),
            dadj.map(|d| Tensor::new(self.adj.shape(), d).unwrap()),
        ]
    }
}

// ── per-sample adjacency ────────────────────────────────────────────────

#[derive(Clone, Copy)]
struct DynGeom {
    b: usize,
    c: usize,
    t: usize,
    n: usize,
    g: usize,
}

impl DynGeom {
    fn x_block(&self, b: usize, g: usize, t: usize) -> Mat {
        let gs = self.c / self.g;
        let off = ((b * self.c + g * gs) * self.t + t) * self.n;
        Mat::new(off, gs, self.n, self.t * self.n, 1)
    }

    fn att(&self, b: usize, g: usize, t: usize) -> Mat {
        Mat::dense(((b * self.g + g) * self.t + t) * self.n * self.n, self.n, self.n)
    }
}

struct DynMixAdjoint<F> {
    x: Arc<Tensor<F>>,
    att: Arc<Tensor<F>>,
    geom: DynGeom,
}

impl<F: Real> Adjoint<F> for DynMixAdjoint<F> {
    fn backward(&self, gy: &Tensor<F>, needs: &[bool]) -> Vec<Option<Tensor<F>>> {
        let s = self.geom;
        let mut dx = needs[0].then(|| vec![F::zero(); self.x.numel()]);
        let mut datt = needs[1].then(|| vec![F::zero(); self.att.numel()]);
        for b in 0..s.b {
            for g in 0..s.g {
                for t in 0..s.t {
                    let blk = s.x_block(b, g, t);
                    let att = s.att(b, g, t);
                    if let Some(dx) = dx.as_mut() {
                        gemm(F::one(), gy.data(), blk, self.att.data(), att, F::zero(), dx, blk);
                    }
                    if let Some(da) = datt.as_mut() {
                        gemm(F::one(), gy.data(), blk.t(), self.x.data(), blk, F::zero(), da, att);
                    }
                }
            }
        }
        vec![
            dx.map(|d| Tensor::new(self.x.shape(), d).unwrap()),
            datt.map(|d| Tensor::new(self.att.shape(), d).unwrap()),
        ]
    }
}

// ── pairwise attention logits ───────────────────────────────────────────

struct LogitAdjoint<F> {
    theta: Arc<Tensor<F>>,
    phi: Arc<Tensor<F>>,
    wf: Arc<Tensor<F>>,
    dims: [usize; 4],
    g: usize,
}

impl<F: Real> Adjoint<F> for LogitAdjoint<F> {
    fn backward(&self, ge: &Tensor<F>, needs: &[bool]) -> Vec<Option<Tensor<F>>> {
        let [b, c, t, n] = self.dims;
        let g = self.g;
        let d = c / g;
        // ds[b,g,t,i] = Σ_j de[..,i,j]; dr[b,g,t,j] = Σ_i de[..,i,j]
        let mut ds = vec![F::zero(); b * g * t * n];
        let mut dr = vec![F::zero(); b * g * t * n];
        for (blk, e) in ge.data().chunks(n * n).enumerate() {
            for i in 0..n {
                for j in 0..n {
                    let v = e[i * n + j];
                    ds[blk * n + i] += v;
                    dr[blk * n + j] += v;
                }
            }
        }
        let wf = self.wf.data();
        let mut dtheta = needs[0].then(|| vec![F::zero(); self.theta.numel()]);
        let mut dphi = needs[1].then(|| vec![F::zero(); self.phi.numel()]);
        let mut dwf = vec![F::zero(); g * 2 * d];
        for bi in 0..b {
            for gi in 0..g {
                for k in 0..d {
                    let ch = gi * d + k;
                    for ti in 0..t {
                        let src = ((bi * c + ch) * t + ti) * n;
                        let red = ((bi * g + gi) * t + ti) * n;
                        let (th, ph) = (&self.theta.data()[src..src + n], &self.phi.data()[src..src + n]);
                        let (dsr, drr) = (&ds[red..red + n], &dr[red..red + n]);
                        let mut acc_s = F::zero();
                        let mut acc_r = F::zero();
                        for j in 0..n {
                            acc_s += th[j] * dsr[j];
                            acc_r += ph[j] * drr[j];
                        }
                        dwf[gi * 2 * d + k] += acc_s;
                        dwf[gi * 2 * d + d + k] += acc_r;
                        if let Some(dt) = dtheta.as_mut() {
                            let w = wf[gi * 2 * d + k];
                            for j in 0..n {
                                dt[src + j] = w * dsr[j];
                            }
                        }
                        if let Some(dp) = dphi.as_mut() {
                            let w = wf[gi * 2 * d + d + k];
                            for j in 0..n {
                                dp[src + j] = w * drr[j];
                            }
                        }
                    }
                }
            }
        }
        vec![
            dtheta.map(|v| Tensor::new(&self.dims, v).unwrap()),
            dphi.map(|v| Tensor::new(&self.dims, v).unwrap()),
            needs[2].then(|| Tensor::new(self.wf.shape(), dwf).unwrap()),
        ]
    }
}

impl<F: Real> Tape<F> {
    /// `y[b,c,t,i] = Σ_j adj[g(c),i,j] · x[b,c,t,j]` with `adj` of shape
    /// `(G, N, N)` and channel `c` in group `g(c) = c / (C/G)`.
    pub fn graph_mix(&mut self, x: &Var<F>, adj: &Var<F>) -> Result<Var<F>> {
        let [b, c, t, n] = dims4("graph_mix", x.shape())?;
        let a = adj.shape();
        if a.len() != 3 || a[1] != n || a[2] != n || a[0] == 0 || c % a[0] != 0 {
            return shape_err(format!("graph_mix: adjacency {a:?} for features {:?}", x.shape()));
        }
        let geom = StaticGeom { b, c, t, n, g: a[0] };
        let mut y = vec![F::zero(); x.value().numel()];
        for bi in 0..b {
            for g in 0..geom.g {
                let blk = geom.x_block(bi, g);
                gemm(F::one(), x.value().data(), blk, adj.value().data(), geom.adj(g).t(), F::zero(), &mut y, blk);
            }
        }
        let y = Arc::new(Tensor::new(x.shape(), y)?);
        self.push_lazy("graph_mix", y, &[x, adj], || StaticMixAdjoint {
            x: x.arc().clone(),
            adj: adj.arc().clone(),
            geom,
        })
    }

    /// Like [`graph_mix`](Self::graph_mix) with a separate adjacency per
    /// sample and frame: `att` has shape `(B, G, T, N, N)`.
    pub fn attention_mix(&mut self, x: &Var<F>, att: &Var<F>) -> Result<Var<F>> {
        let [b, c, t, n] = dims4("attention_mix", x.shape())?;
        let a = att.shape();
        if a.len() != 5 || a[0] != b || a[2] != t || a[3] != n || a[4] != n || a[1] == 0 || c % a[1] != 0 {
            return shape_err(format!("attention_mix: attention {a:?} for features {:?}", x.shape()));
        }
        let geom = DynGeom { b, c, t, n, g: a[1] };
        let mut y = vec![F::zero(); x.value().numel()];
        for bi in 0..b {
            for g in 0..geom.g {
                for ti in 0..t {
                    let blk = geom.x_block(bi, g, ti);
                    let am = geom.att(bi, g, ti);
                    gemm(F::one(), x.value().data(), blk, att.value().data(), am.t(), F::zero(), &mut y, blk);
                }
            }
        }
        let y = Arc::new(Tensor::new(x.shape(), y)?);
        self.push_lazy("attention_mix", y, &[x, att], || DynMixAdjoint {
            x: x.arc().clone(),
            att: att.arc().clone(),
            geom,
        })
    }

    /// Pairwise scores `e[b,g,t,i,j] = w_f[g] · [θ_i ‖ φ_j]` where `θ`, `φ`
    /// are `(B, C, T, N)` with head `g` owning channels `g·D..(g+1)·D` and
    /// `w_f` is `(G, 2D)`.
    pub fn attention_logits(&mut self, theta: &Var<F>, phi: &Var<F>, wf: &Var<F>) -> Result<Var<F>> {
        let dims = dims4("attention_logits", theta.shape())?;
        let [b, c, t, n] = dims;
        if phi.shape() != theta.shape() {
            return shape_err(format!("attention_logits: θ {:?} vs φ {:?}", theta.shape(), phi.shape()));
        }
        let w = wf.shape();
        if w.len() != 2 || w[0] == 0 || c % w[0] != 0 || w[1] != 2 * (c / w[0]) {
            return shape_err(format!("attention_logits: w_f {w:?} for {c} channels"));
        }
        let g = w[0];
        let d = c / g;
        let (th, ph, wv) = (theta.value().data(), phi.value().data(), wf.value().data());
        let mut s = vec![F::zero(); b * g * t * n];
        let mut r = vec![F::zero(); b * g * t * n];
        for bi in 0..b {
            for gi in 0..g {
                for k in 0..d {
                    let (ws, wr) = (wv[gi * 2 * d + k], wv[gi * 2 * d + d + k]);
                    for ti in 0..t {
                        let src = ((bi * c + gi * d + k) * t + ti) * n;
                        let dst = ((bi * g + gi) * t + ti) * n;
                        for j in 0..n {
                            s[dst + j] += ws * th[src + j];
                            r[dst + j] += wr * ph[src + j];
                        }
                    }
                }
            }
        }
        let mut e = vec![F::zero(); b * g * t * n * n];
        for (blk, out) in e.chunks_mut(n * n).enumerate() {
            for i in 0..n {
                for j in 0..n {
                    out[i * n + j] = s[blk * n + i] + r[blk * n + j];
                }
            }
        }
        let y = Arc::new(Tensor::new(&[b, g, t, n, n], e)?);
        self.push_lazy("attention_logits", y, &[theta, phi, wf], || LogitAdjoint {
            theta: theta.arc().clone(),
            phi: phi.arc().clone(),
            wf: wf.arc().clone(),
            dims,
            g,
        })
    }
}
