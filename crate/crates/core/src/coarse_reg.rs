//! Covariance-weighted coarse registration.
//!
//! Each source point is paired with its nearest target point. The pair error is
//! whitened by the joint covariance of both neighborhoods and weighted by
//! `exp(-d^2 / (2 sigma^2))`, and the weighted system is solved with damping.

use nalgebra::{Matrix3, Matrix3x6, Vector3};
use rayon::prelude::*;

use crate::cloud::{IndexedCloud, PointCloud};
use crate::config::EngineConfig;
use crate::error::RegistrationError;
use crate::se3::{accumulate_chunked, skew, NormalEquations, Pose, Twist};

/// Added to the diagonal of every joint covariance before inversion.
pub const JOINT_COV_EPS: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Correspondence {
    pub source_index: usize,
    pub target_index: usize,
    /// Source point after applying the current transform.
    pub transformed: Vector3<f64>,
    /// `q - T p`.
    pub error: Vector3<f64>,
    /// Regularized joint covariance.
    pub joint_cov: Matrix3<f64>,
    /// Inverse of `joint_cov`.
    pub information: Matrix3<f64>,
    pub mahalanobis_sq: f64,
    pub weight: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CoarseResult {
    pub transform: Pose,
    pub iterations: usize,
    pub converged: bool,
    /// Weighted cost `sum w d^2` of the last correspondence set at `transform`.
    pub final_weighted_cost: f64,
    /// The same correspondence set evaluated at the seed transform.
    pub seed_weighted_cost: f64,
    pub correspondence_count: usize,
}

#[inline]
pub fn correspondence_weight(mahalanobis_sq: f64, sigma: f64) -> f64 {
    (-mahalanobis_sq / (2.0 * sigma * sigma)).exp()
}

/// Pairs every transformed source point with its nearest target point within
/// `max_dist`.
///
/// The source covariance is rotated into the target frame before it is added
/// to the target covariance.
pub fn find_correspondences(
    source: &PointCloud,
    target: &IndexedCloud,
    pose: &Pose,
    sigma: f64,
    max_dist: f64,
) -> Result<Vec<Correspondence>, RegistrationError> {
    let src_cov = source.covariances().ok_or(RegistrationError::MissingCovariances)?;
    let tgt_cov = target
        .cloud()
        .covariances()
        .ok_or(RegistrationError::MissingCovariances)?;
    let tgt_pts = target.cloud().points();
    let r = pose.rotation;
    let corrs: Vec<Correspondence> = source
        .points()
        .par_iter()
        .enumerate()
        .filter_map(|(i, p)| {
            let transformed = pose.apply(p);
            let nn = target.index().nearest_within(&transformed, max_dist)?;
            let error = tgt_pts[nn.index] - transformed;
            let joint_cov = r * src_cov[i] * r.transpose() + tgt_cov[nn.index] + Matrix3::identity() * JOINT_COV_EPS;
            let information = joint_cov.try_inverse()?;
            let mahalanobis_sq = error.dot(&(information * error));
            Some(Correspondence {
                source_index: i,
                target_index: nn.index,
                transformed,
                error,
                joint_cov,
                information,
                mahalanobis_sq,
                weight: correspondence_weight(mahalanobis_sq, sigma),
            })
        })
        .collect();
    if corrs.is_empty() {
        return Err(RegistrationError::NoCorrespondences);
    }
    Ok(corrs)
}

/// Jacobian of a transformed point with respect to a left twist.
#[inline]
fn point_jacobian(p: &Vector3<f64>) -> Matrix3x6<f64> {
    let mut j = Matrix3x6::zeros();
    j.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-skew(p)));
    j.fixed_view_mut::<3, 3>(0, 3).copy_from(&Matrix3::identity());
    j
}

/// `H = sum w J^T M^-1 J`, `b = sum w J^T M^-1 e`, with `J` the derivative of the
/// transformed point, so `H^-1 b` moves the source toward the target.
pub fn accumulate_normal_equations(corrs: &[Correspondence]) -> NormalEquations {
    accumulate_chunked(corrs, |c, ne| {
        let j = point_jacobian(&c.transformed);
        let wj = (c.information * j) * c.weight;
        ne.hessian += j.transpose() * wj;
        ne.gradient += wj.transpose() * c.error;
    })
}

/// `sum w (q - T p)^T M^-1 (q - T p)` with pairs, weights and information frozen.
pub fn frozen_cost(corrs: &[Correspondence], source: &PointCloud, target: &PointCloud, pose: &Pose) -> f64 {
    let sp = source.points();
    let tp = target.points();
    corrs
        .iter()
        .map(|c| {
            let e = tp[c.target_index] - pose.apply(&sp[c.source_index]);
            c.weight * e.dot(&(c.information * e))
        })
        .sum()
}

/// Iterates correspondence search and damped updates `T <- exp(dx) T` from `seed`.
pub fn coarse_register(
    source: &PointCloud,
    target: &IndexedCloud,
    seed: &Pose,
    cfg: &EngineConfig,
) -> Result<CoarseResult, RegistrationError> {
    let mut pose = *seed;
    let mut lambda = cfg.lm_lambda;
    let mut iterations = 0;
    let mut converged = false;
    let mut last: Vec<Correspondence> = Vec::new();

    for iter in 1..=cfg.coarse_max_iters {
        let corrs = find_correspondences(source, target, &pose, cfg.coarse_sigma, cfg.coarse_max_dist)?;
        let ne = accumulate_normal_equations(&corrs);
        let current = frozen_cost(&corrs, source, target.cloud(), &pose);
        iterations = iter;

        let mut step: Option<(Twist, Pose)> = None;
        let mut attempted = Twist::zero();
        for _ in 0..=cfg.lm_max_retries {
            if let Ok(dx) = ne.solve_damped(lambda) {
                attempted = dx;
                let trial = pose.left_update(&dx);
                if frozen_cost(&corrs, source, target.cloud(), &trial) <= current {
                    step = Some((dx, trial));
                    break;
                }
            }
            lambda *= 10.0;
        }
        last = corrs;

        let Some((dx, trial)) = step else {
            converged = attempted.norm() < cfg.coarse_tol;
            break;
        };
        pose = trial;
        lambda = (lambda / 10.0).max(cfg.lm_lambda);
        let distance = (pose.translation - seed.translation).norm();
        if distance > cfg.max_translation {
            return Err(RegistrationError::DivergedTransform {
                distance,
                limit: cfg.max_translation,
            });
        }
        if dx.norm() < cfg.coarse_tol {
            converged = true;
            break;
        }
    }

    Ok(CoarseResult {
        transform: pose,
        iterations,
        converged,
        final_weighted_cost: frozen_cost(&last, source, target.cloud(), &pose),
        seed_weighted_cost: frozen_cost(&last, source, target.cloud(), seed),
        correspondence_count: last.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::estimate_local_geometry;

    fn iso_cloud(points: Vec<Vector3<f64>>) -> PointCloud {
        let n = points.len();
        PointCloud::new(points).with_covariances(vec![Matrix3::identity(); n]).unwrap()
    }

    #[test]
    fn identical_clouds_give_unit_weights() {
        let pts: Vec<_> = (0..20).map(|i| Vector3::new(i as f64, (i * i) as f64 * 0.1, 0.0)).collect();
        let c = iso_cloud(pts);
        let t = IndexedCloud::new(c.clone()).unwrap();
        let corrs = find_correspondences(&c, &t, &Pose::identity(), 1.0, 2.0).unwrap();
        assert_eq!(corrs.len(), 20);
        for c in &corrs {
            assert_eq!(c.error, Vector3::zeros());
            assert_eq!(c.weight, 1.0);
            assert_eq!(c.source_index, c.target_index);
        }
    }

    #[test]
    fn isotropic_weight_is_inverse_e() {
        let sigma = 0.5;
        let src = iso_cloud(vec![Vector3::zeros()]);
        // |e|^2 = 4 sigma^2
        let tgt = IndexedCloud::new(iso_cloud(vec![Vector3::new(2.0 * sigma, 0.0, 0.0)])).unwrap();
        let c = find_correspondences(&src, &tgt, &Pose::identity(), sigma, 5.0).unwrap()[0];
        let m = 2.0 + JOINT_COV_EPS;
        assert!((c.mahalanobis_sq - 4.0 * sigma * sigma / m).abs() < 1e-15);
        assert!((c.weight - (-1.0f64).exp()).abs() < 1e-6);
    }

    #[test]
    fn missing_covariances_and_empty_gate() {
        let bare = PointCloud::new(vec![Vector3::zeros()]);
        let tgt = IndexedCloud::new(iso_cloud(vec![Vector3::new(10.0, 0.0, 0.0)])).unwrap();
        assert_eq!(
            find_correspondences(&bare, &tgt, &Pose::identity(), 1.0, 2.0).unwrap_err(),
            RegistrationError::MissingCovariances
        );
        let src = iso_cloud(vec![Vector3::zeros()]);
        assert_eq!(
            find_correspondences(&src, &tgt, &Pose::identity(), 1.0, 2.0).unwrap_err(),
            RegistrationError::NoCorrespondences
        );
    }

    #[test]
    fn zero_error_gives_zero_gradient_and_sums_are_linear() {
        let src = iso_cloud(vec![Vector3::new(1.0, 2.0, 3.0)]);
        let tgt = IndexedCloud::new(src.clone()).unwrap();
        let corrs = find_correspondences(&src, &tgt, &Pose::identity(), 1.0, 1.0).unwrap();
        assert_eq!(accumulate_normal_equations(&corrs).gradient, nalgebra::Vector6::zeros());

        let mut c = corrs[0];
        c.error = Vector3::new(0.1, -0.2, 0.3);
        let one = accumulate_normal_equations(&[c]);
        let two = accumulate_normal_equations(&[c, c]);
        assert_eq!(two.hessian, one.hessian * 2.0);
        assert_eq!(two.gradient, one.gradient * 2.0);
    }

    #[test]
    fn one_step_reduces_pure_translation_offset() {
        let mut pts = Vec::new();
        for i in 0..6 {
            for j in 0..6 {
                pts.push(Vector3::new(i as f64, j as f64, ((i + 2 * j) % 3) as f64));
            }
        }
        let tgt = IndexedCloud::new(iso_cloud(pts.clone())).unwrap();
        let src = iso_cloud(pts.iter().map(|p| p + Vector3::new(0.1, 0.0, 0.0)).collect());
        let corrs = find_correspondences(&src, &tgt, &Pose::identity(), 10.0, 0.5).unwrap();
        let before = frozen_cost(&corrs, &src, tgt.cloud(), &Pose::identity());
        let dx = accumulate_normal_equations(&corrs).solve_damped(1e-4).unwrap();
        let after = frozen_cost(&corrs, &src, tgt.cloud(), &dx.exp());
        assert!(after < before * 1e-3, "{before} -> {after}");
        assert!((dx.trans.x + 0.1).abs() < 1e-4);
    }

    #[test]
    fn fixed_point_converges_immediately() {
        let mut pts = Vec::new();
        for i in 0..10 {
            for j in 0..10 {
                pts.push(Vector3::new(i as f64 * 0.4, j as f64 * 0.4, 0.0));
                pts.push(Vector3::new(i as f64 * 0.4, 0.0, j as f64 * 0.4 + 0.2));
                pts.push(Vector3::new(0.0, i as f64 * 0.4 + 0.2, j as f64 * 0.4 + 0.1));
            }
        }
        let cloud = estimate_local_geometry(&PointCloud::new(pts), 10, &Vector3::new(1.0, 1.0, 1.0)).unwrap();
        let target = IndexedCloud::new(cloud.clone()).unwrap();
        let res = coarse_register(&cloud, &target, &Pose::identity(), &EngineConfig::default()).unwrap();
        assert!(res.converged);
        assert!(res.iterations <= 3);
        assert!((res.transform.rotation - Matrix3::identity()).norm() < 1e-6);
        assert!(res.transform.translation.norm() < 1e-6);
    }
}
