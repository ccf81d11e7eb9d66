//! Absolute pose error (translation part) with optional rigid alignment.

use std::io::Write;

use nalgebra::{Matrix3, Vector3};

use crate::error::EvalError;
use crate::se3::Pose;

#[derive(Clone, Debug, PartialEq)]
pub struct ApeReport {
    pub rmse: f64,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub per_frame: Vec<f64>,
    pub aligned: bool,
}

impl ApeReport {
    pub fn from_errors(per_frame: Vec<f64>, aligned: bool) -> Self {
        let n = per_frame.len().max(1) as f64;
        let mean = per_frame.iter().sum::<f64>() / n;
        let mean_sq = per_frame.iter().map(|e| e * e).sum::<f64>() / n;
        let var = per_frame.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / n;
        Self {
            rmse: mean_sq.sqrt(),
            mean,
            std: var.sqrt(),
            per_frame,
            aligned,
        }
    }

    /// `frame,ape_m` rows followed by an `rmse,mean,std` footer.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "frame,ape_m")?;
        for (i, e) in self.per_frame.iter().enumerate() {
            writeln!(out, "{i},{e:.9}")?;
        }
        writeln!(out, "rmse,mean,std")?;
        writeln!(out, "{:.9},{:.9},{:.9}", self.rmse, self.mean, self.std)
    }
}

/// Rigid transform `A` minimizing `sum |A t_est - t_ref|^2` (no scale).
pub fn align_umeyama_se3(estimate: &[Pose], reference: &[Pose]) -> Result<Pose, EvalError> {
    if estimate.len() != reference.len() {
        return Err(EvalError::LengthMismatch {
            estimate: estimate.len(),
            reference: reference.len(),
        });
    }
    if estimate.len() < 3 {
        return Err(EvalError::TooFewPoses {
            needed: 3,
            available: estimate.len(),
        });
    }
    let n = estimate.len() as f64;
    let mu_e = estimate.iter().map(|p| p.translation).sum::<Vector3<f64>>() / n;
    let mu_r = reference.iter().map(|p| p.translation).sum::<Vector3<f64>>() / n;
    let mut cross = Matrix3::zeros();
    let mut scatter = Matrix3::zeros();
    for (e, r) in estimate.iter().zip(reference) {
        let de = e.translation - mu_e;
        cross += (r.translation - mu_r) * de.transpose();
        scatter += de * de.transpose();
    }
    let sv = scatter.symmetric_eigenvalues();
    let mut sv: Vec<f64> = sv.iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    if sv[0] <= f64::EPSILON || sv[1] <= 1e-12 * sv[0] {
        return Err(EvalError::DegenerateGeometry);
    }
    let svd = (cross / n).svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut s = Matrix3::identity();
    if (u.determinant() * v_t.determinant()) < 0.0 {
        s[(2, 2)] = -1.0;
    }
    let rotation = u * s * v_t;
    Ok(Pose::new(rotation, mu_r - rotation * mu_e))
}

pub fn compute_ape(estimate: &[Pose], reference: &[Pose], align: bool) -> Result<ApeReport, EvalError> {
    if estimate.len() != reference.len() {
        return Err(EvalError::LengthMismatch {
            estimate: estimate.len(),
            reference: reference.len(),
        });
    }
    if estimate.is_empty() {
        return Err(EvalError::TooFewPoses {
            needed: 1,
            available: 0,
        });
    }
    let a = if align {
        align_umeyama_se3(estimate, reference)?
    } else {
        Pose::identity()
    };
    let errors = estimate
        .iter()
        .zip(reference)
        .map(|(e, r)| (r.translation - a.apply(&e.translation)).norm())
        .collect();
    Ok(ApeReport::from_errors(errors, align))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::se3::Twist;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_traj(rng: &mut ChaCha8Rng, n: usize) -> Vec<Pose> {
        (0..n)
            .map(|_| {
                Twist::new(
                    Vector3::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), rng.random_range(-3.0..3.0)),
                    Vector3::new(rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0), rng.random_range(-2.0..2.0)),
                )
                .exp()
            })
            .collect()
    }

    #[test]
    fn statistics_of_three_and_four() {
        let r = ApeReport::from_errors(vec![3.0, 4.0], false);
        assert_eq!(r.mean, 3.5);
        assert!((r.rmse - 12.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(r.std, 0.5);
    }

    #[test]
    fn identical_and_offset_trajectories() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let traj = random_traj(&mut rng, 20);
        let r = compute_ape(&traj, &traj, false).unwrap();
        assert_eq!((r.rmse, r.mean, r.std), (0.0, 0.0, 0.0));
        let shifted: Vec<Pose> = traj
            .iter()
            .map(|p| Pose::from_translation(Vector3::new(0.0, 1.0, 0.0)).compose(p))
            .collect();
        let r = compute_ape(&shifted, &traj, false).unwrap();
        assert!((r.rmse - 1.0).abs() < 1e-12 && (r.mean - 1.0).abs() < 1e-12 && r.std < 1e-6);
    }

    #[test]
    fn alignment_recovers_inverse_motion() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let reference = random_traj(&mut rng, 30);
        assert!((align_umeyama_se3(&reference, &reference).unwrap().translation).norm() < 1e-9);
        let q = Twist::new(Vector3::new(0.2, -0.4, 1.1), Vector3::new(5.0, -3.0, 1.0)).exp();
        let moved: Vec<Pose> = reference.iter().map(|p| q.compose(p)).collect();
        let a = align_umeyama_se3(&moved, &reference).unwrap();
        let qi = q.inverse();
        assert!((a.rotation - qi.rotation).norm() < 1e-9);
        assert!((a.translation - qi.translation).norm() < 1e-9);
    }

    #[test]
    fn degenerate_and_mismatched_inputs() {
        let line: Vec<Pose> = (0..5).map(|i| Pose::from_translation(Vector3::new(i as f64, 0.0, 0.0))).collect();
        assert_eq!(align_umeyama_se3(&line, &line).unwrap_err(), EvalError::DegenerateGeometry);
        assert!(matches!(compute_ape(&line[..2], &line, false), Err(EvalError::LengthMismatch { .. })));
        assert!(matches!(align_umeyama_se3(&line[..2], &line[..2]), Err(EvalError::TooFewPoses { .. })));
    }

    #[test]
    fn alignment_never_increases_rmse() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let reference = random_traj(&mut rng, 25);
            let q = Twist::new(
                Vector3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)),
                Vector3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)),
            )
            .exp();
            let est: Vec<Pose> = reference
                .iter()
                .map(|p| {
                    let noise = Vector3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5));
                    Pose::from_translation(noise).compose(&q.compose(p))
                })
                .collect();
            let raw = compute_ape(&est, &reference, false).unwrap();
            let aligned = compute_ape(&est, &reference, true).unwrap();
            assert!(aligned.rmse <= raw.rmse + 1e-12);
            assert!((aligned.rmse.powi(2) - aligned.mean.powi(2) - aligned.std.powi(2)).abs() < 1e-9);
        }
    }

    #[test]
    fn csv_layout() {
        let mut buf = Vec::new();
        ApeReport::from_errors(vec![3.0, 4.0], false).write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "frame,ape_m");
        assert_eq!(lines[1], "0,3.000000000");
        assert_eq!(lines[3], "rmse,mean,std");
        assert!(lines[4].starts_with("3.535533906,3.500000000,0.500000000"));
    }
}
