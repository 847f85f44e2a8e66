use std::sync::Arc;

use crate::error::{shape_err, Result};
use crate::tensor::tape::Adjoint;
use crate::tensor::{gemm, Mat, Real, Tape, Tensor, Var};

struct MatmulAdjoint<F> {
    a: Arc<Tensor<F>>,
    b: Arc<Tensor<F>>,
    batch: usize,
    m: usize,
    k: usize,
    p: usize,
}

impl<F: Real> Adjoint<F> for MatmulAdjoint<F> {
    fn backward(&self, g: &Tensor<F>, needs: &[bool]) -> Vec<Option<Tensor<F>>> {
        let (m, k, p) = (self.m, self.k, self.p);
        // leading axes folded into rows
        let rows = self.batch * m;
        let ga = Mat::dense(0, rows, p);
        let am = Mat::dense(0, rows, k);
        let bm = Mat::dense(0, k, p);
        let da = needs[0].then(|| {
            let mut da = vec![F::zero(); rows * k];
            gemm(F::one(), g.data(), ga, self.b.data(), bm.t(), F::zero(), &mut da, am);
            Tensor::new(self.a.shape(), da).unwrap()
        });
        let db = needs[1].then(|| {
            let mut db = vec![F::zero(); k * p];
            gemm(F::one(), self.a.data(), am.t(), g.data(), ga, F::zero(), &mut db, bm);
            Tensor::new(self.b.shape(), db).unwrap()
        });
        vec![da, db]
    }
}

impl<F: Real> Tape<F> {
    /// `(…, M, K) · (K, P) → (…, M, P)`, broadcasting over the leading axes.
    pub fn matmul(&mut self, a: &Var<F>, b: &Var<F>) -> Result<Var<F>> {
        let (sa, sb) = (a.shape(), b.shape());
        if sa.len() < 2 || sb.len() != 2 || sa[sa.len() - 1] != sb[0] {
            return shape_err(format!("matmul: {sa:?} · {sb:?}"));
        }
        let m = sa[sa.len() - 2];
        let (k, p) = (sb[0], sb[1]);
        let batch: usize = sa[..sa.len() - 2].iter().product();
        let mut out = vec![F::zero(); batch * m * p];
        gemm(
            F::one(),
            a.value().data(),
            Mat::dense(0, batch * m, k),
            b.value().data(),
            Mat::dense(0, k, p),
            F::zero(),
            &mut out,
            Mat::dense(0, batch * m, p),
        );
        let mut shape = sa.to_vec();
        *shape.last_mut().unwrap() = p;
        let y = Arc::new(Tensor::new(&shape, out)?);
        self.push_lazy("matmul", y, &[a, b], || MatmulAdjoint {
            a: a.arc().clone(),
            b: b.arc().clone(),
            batch,
            m,
            k,
            p,
        })
    }
}
