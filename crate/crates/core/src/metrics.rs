//! Protocol #1 (MPJPE) and Protocol #2 (Procrustes-aligned MPJPE) errors.

use nalgebra::{Matrix3, Vector3};

use crate::error::{GastError, Result};
use crate::tensor::{Real, Tensor};

pub type Frame3 = Vec<[f64; 3]>;

fn dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Mean Euclidean distance over every leading index of `(..., 3)` tensors.
pub fn mpjpe<F: Real>(pred: &Tensor<F>, gt: &Tensor<F>) -> Result<f64> {
    if pred.shape() != gt.shape() || pred.shape().last() != Some(&3) {
        return Err(GastError::Shape(format!("mpjpe needs equal (..., 3) shapes, got {:?} and {:?}", pred.shape(), gt.shape())));
    }
    let n = pred.numel() / 3;
    if n == 0 {
        return Err(GastError::Shape("mpjpe of an empty tensor".into()));
    }
    let total: f64 = pred
        .data()
        .chunks_exact(3)
        .zip(gt.data().chunks_exact(3))
        .map(|(p, g)| {
            let p = [p[0].as_f64(), p[1].as_f64(), p[2].as_f64()];
            dist(&p, &[g[0].as_f64(), g[1].as_f64(), g[2].as_f64()])
        })
        .sum();
    Ok(total / n as f64)
}

fn check_frames(pred: &[Frame3], gt: &[Frame3]) -> Result<usize> {
    if pred.len() != gt.len() || pred.is_empty() {
        return Err(GastError::Shape(format!("frame counts {} and {}", pred.len(), gt.len())));
    }
    let mut n = 0;
    for (p, g) in pred.iter().zip(gt) {
        if p.len() != g.len() || p.is_empty() {
            return Err(GastError::Shape(format!("joint counts {} and {}", p.len(), g.len())));
        }
        n += p.len();
    }
    Ok(n)
}

/// MPJPE over `[frame][joint]` poses.
pub fn mpjpe_frames(pred: &[Frame3], gt: &[Frame3]) -> Result<f64> {
    let n = check_frames(pred, gt)?;
    let total: f64 = pred.iter().zip(gt).flat_map(|(p, g)| p.iter().zip(g).map(|(a, b)| dist(a, b))).sum();
    Ok(total / n as f64)
}

/// Similarity transform `s·R·p + t` of `pred` closest to `gt` in least squares.
pub fn procrustes_align(pred: &[[f64; 3]], gt: &[[f64; 3]]) -> Result<Vec<[f64; 3]>> {
    if pred.len() != gt.len() {
        return Err(GastError::Shape(format!("procrustes on {} and {} joints", pred.len(), gt.len())));
    }
    if gt.len() < 3 {
        return Err(GastError::Degenerate(format!("procrustes needs at least 3 joints, got {}", gt.len())));
    }
    let v = |p: &[f64; 3]| Vector3::new(p[0], p[1], p[2]);
    let n = gt.len() as f64;
    let mu_x = gt.iter().map(v).sum::<Vector3<f64>>() / n;
    let mu_y = pred.iter().map(v).sum::<Vector3<f64>>() / n;
    let var_x: f64 = gt.iter().map(|p| (v(p) - mu_x).norm_squared()).sum();
    let var_y: f64 = pred.iter().map(|p| (v(p) - mu_y).norm_squared()).sum();
    if var_x <= f64::EPSILON * mu_x.norm_squared().max(1.0) {
        return Err(GastError::Degenerate("ground-truth joints coincide".into()));
    }
    if var_y == 0.0 {
        return Ok(vec![[mu_x.x, mu_x.y, mu_x.z]; gt.len()]);
    }
    let mut cov = Matrix3::zeros();
    for (p, g) in pred.iter().zip(gt) {
        cov += (v(g) - mu_x) * (v(p) - mu_y).transpose();
    }
    let svd = cov.svd(true, true);
    let (u, vt) = (svd.u.expect("u requested"), svd.v_t.expect("v_t requested"));
    let mut d = Matrix3::identity();
    if (u * vt).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let rot = u * d * vt;
    let scale = (svd.singular_values.component_mul(&d.diagonal())).sum() / var_y;
    Ok(pred
        .iter()
        .map(|p| {
            let a = rot * (v(p) - mu_y) * scale + mu_x;
            [a.x, a.y, a.z]
        })
        .collect())
}

/// Per-frame Procrustes alignment, then MPJPE averaged over all joints.
pub fn p_mpjpe_frames(pred: &[Frame3], gt: &[Frame3]) -> Result<f64> {
    let n = check_frames(pred, gt)?;
    let mut total = 0.0;
    for (p, g) in pred.iter().zip(gt) {
        let a = procrustes_align(p, g)?;
        total += a.iter().zip(g).map(|(x, y)| dist(x, y)).sum::<f64>();
    }
    Ok(total / n as f64)
}

/// `(T, N, 3)` or `(B, T, N, 3)` tensor to `[frame][joint]` poses.
pub fn tensor_frames<F: Real>(t: &Tensor<F>) -> Result<Vec<Frame3>> {
    let s = t.shape();
    if s.len() < 2 || s[s.len() - 1] != 3 {
        return Err(GastError::Shape(format!("expected (..., N, 3), got {s:?}")));
    }
    let n = s[s.len() - 2];
    Ok(t.data()
        .chunks_exact(3 * n.max(1))
        .map(|f| f.chunks_exact(3).map(|p| [p[0].as_f64(), p[1].as_f64(), p[2].as_f64()]).collect())
        .collect())
}

pub fn p_mpjpe<F: Real>(pred: &Tensor<F>, gt: &Tensor<F>) -> Result<f64> {
    if pred.shape() != gt.shape() {
        return Err(GastError::Shape(format!("p_mpjpe shapes {:?} and {:?}", pred.shape(), gt.shape())));
    }
    p_mpjpe_frames(&tensor_frames(pred)?, &tensor_frames(gt)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Rotation3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pose(rng: &mut ChaCha8Rng, n: usize) -> Frame3 {
        (0..n).map(|_| [rng.gen_range(-500.0..500.0), rng.gen_range(-500.0..500.0), rng.gen_range(-500.0..500.0)]).collect()
    }

    #[test]
    fn mpjpe_identity_and_offset() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x: Vec<Frame3> = (0..4).map(|_| pose(&mut rng, 17)).collect();
        assert_eq!(mpjpe_frames(&x, &x).unwrap(), 0.0);
        let y: Vec<Frame3> = x.iter().map(|f| f.iter().map(|p| [p[0] + 10.0, p[1], p[2]]).collect()).collect();
        assert!((mpjpe_frames(&y, &x).unwrap() - 10.0).abs() < 1e-9);
    }

    #[test]
    fn mpjpe_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = Tensor::<f64>::from_fn(&[2, 5, 17, 3], |_| rng.gen_range(-1.0..1.0));
        let b = Tensor::<f64>::from_fn(&[2, 5, 17, 3], |_| rng.gen_range(-1.0..1.0));
        let mut sum = 0.0;
        for bi in 0..2 {
            for t in 0..5 {
                for j in 0..17 {
                    let mut sq = 0.0;
                    for k in 0..3 {
                        let d = a.at(&[bi, t, j, k]) - b.at(&[bi, t, j, k]);
                        sq += d * d;
                    }
                    sum += sq.sqrt();
                }
            }
        }
        assert!((mpjpe(&a, &b).unwrap() - sum / 170.0).abs() < 1e-9);
        assert!(mpjpe(&a, &Tensor::zeros(&[2, 5, 17, 2])).is_err());
    }

    #[test]
    fn procrustes_absorbs_similarity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let gt = pose(&mut rng, 17);
            let r = Rotation3::from_euler_angles(rng.gen_range(-3.0..3.0), rng.gen_range(-1.5..1.5), rng.gen_range(-3.0..3.0));
            let s = rng.gen_range(0.5..2.0);
            let t = Vector3::new(rng.gen_range(-100.0..100.0), 3.0, -40.0);
            let pred: Frame3 = gt
                .iter()
                .map(|p| {
                    let q = r * Vector3::new(p[0], p[1], p[2]) * s + t;
                    [q.x, q.y, q.z]
                })
                .collect();
            assert!(p_mpjpe_frames(&[pred], &[gt]).unwrap() < 1e-6);
        }
    }

    #[test]
    fn procrustes_of_self_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let gt = pose(&mut rng, 17);
        let a = procrustes_align(&gt, &gt).unwrap();
        for (x, y) in a.iter().zip(&gt) {
            assert!(dist(x, y) < 1e-9);
        }
    }

    #[test]
    fn reflection_is_not_absorbed() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let gt = pose(&mut rng, 17);
        let mirrored: Frame3 = gt.iter().map(|p| [-p[0], p[1], p[2]]).collect();
        assert!(p_mpjpe_frames(&[mirrored], &[gt]).unwrap() > 1.0);
    }

    #[test]
    fn aligned_never_worse_than_raw() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let a = vec![pose(&mut rng, 17)];
            let b = vec![pose(&mut rng, 17)];
            assert!(p_mpjpe_frames(&a, &b).unwrap() <= mpjpe_frames(&a, &b).unwrap());
        }
    }

    #[test]
    fn degenerate_inputs() {
        let gt = vec![[1.0, 2.0, 3.0]; 17];
        assert!(matches!(procrustes_align(&gt, &gt), Err(GastError::Degenerate(_))));
        assert!(matches!(procrustes_align(&gt[..2], &gt[..2]), Err(GastError::Degenerate(_))));
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let g = pose(&mut rng, 17);
        let collapsed = procrustes_align(&gt, &g).unwrap();
        assert!(collapsed.windows(2).all(|w| w[0] == w[1]));
    }
}
