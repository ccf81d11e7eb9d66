//! Adaptive point-to-plane ICP against the local map.

use nalgebra::{Vector3, Vector6};
use rayon::prelude::*;

use crate::cloud::{IndexedCloud, PointCloud};
use crate::config::EngineConfig;
use crate::error::RegistrationError;
use crate::se3::{accumulate_chunked, NormalEquations, Pose, Twist};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlanarResidual {
    pub source_index: usize,
    pub target_index: usize,
    /// Source point after applying the current transform.
    pub transformed: Vector3<f64>,
    pub target_point: Vector3<f64>,
    pub normal: Vector3<f64>,
    /// `(p - q) . n`
    pub residual: f64,
    pub weight: f64,
}

impl PlanarResidual {
    /// `n^T [skew(p), -I]`, the residual row with the sign that makes `H^-1 b`
    /// a descent step when `b = sum w row e`.
    #[inline]
    pub fn jacobian_row(&self) -> Vector6<f64> {
        let a = self.normal.cross(&self.transformed);
        let n = self.normal;
        Vector6::new(a.x, a.y, a.z, -n.x, -n.y, -n.z)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FineResult {
    pub transform: Pose,
    pub iterations: usize,
    pub converged: bool,
    /// `sum beta e^2` of the last residual set at `transform`.
    pub final_cost: f64,
    /// The same residual set evaluated at the initial transform.
    pub initial_cost: f64,
    pub inlier_count: usize,
}

/// `sigma^2 / (sigma^2 + e^2)`.
#[inline]
pub fn adaptive_weight(residual: f64, sigma_th: f64) -> f64 {
    let s2 = sigma_th * sigma_th;
    s2 / (s2 + residual * residual)
}

/// Correspondence gate used for a given adaptive threshold.
#[inline]
pub fn correspondence_gate(sigma_th: f64, min_gate: f64) -> f64 {
    (3.0 * sigma_th).max(min_gate)
}

/// Point-to-plane residuals of the transformed source against the nearest map
/// points. Pairs beyond the gate or on degenerate normals are dropped.
pub fn build_planar_residuals(
    source: &PointCloud,
    target: &IndexedCloud,
    pose: &Pose,
    sigma_th: f64,
    min_gate: f64,
) -> Result<Vec<PlanarResidual>, RegistrationError> {
    let normals = target.cloud().normals().ok_or(RegistrationError::MissingNormals)?;
    let tgt = target.cloud().points();
    let gate = correspondence_gate(sigma_th, min_gate);
    let out: Vec<PlanarResidual> = source
        .points()
        .par_iter()
        .enumerate()
        .filter_map(|(i, p)| {
            let transformed = pose.apply(p);
            let nn = target.index().nearest_within(&transformed, gate)?;
            let normal = normals[nn.index];
            if normal.degenerate {
                return None;
            }
            let q = tgt[nn.index];
            let residual = (transformed - q).dot(&normal.direction);
            Some(PlanarResidual {
                source_index: i,
                target_index: nn.index,
                transformed,
                target_point: q,
                normal: normal.direction,
                residual,
                weight: adaptive_weight(residual, sigma_th),
            })
        })
        .collect();
    if out.is_empty() {
        return Err(RegistrationError::NoCorrespondences);
    }
    Ok(out)
}

/// `H = sum beta j j^T`, `b = sum beta j e`.
pub fn accumulate_planar(residuals: &[PlanarResidual]) -> NormalEquations {
    accumulate_chunked(residuals, |r, ne| {
        let j = r.jacobian_row();
        let wj = j * r.weight;
        ne.hessian += wj * j.transpose();
        ne.gradient += wj * r.residual;
    })
}

/// `sum beta ((T p - q) . n)^2` with pairs and weights frozen.
pub fn frozen_planar_cost(residuals: &[PlanarResidual], source: &PointCloud, pose: &Pose) -> f64 {
    let sp = source.points();
    residuals
        .iter()
        .map(|r| {
            let e = (pose.apply(&sp[r.source_index]) - r.target_point).dot(&r.normal);
            r.weight * e * e
        })
        .sum()
}

/// Iteratively reweighted point-to-plane ICP from `initial`.
pub fn fine_register(
    source: &PointCloud,
    target: &IndexedCloud,
    initial: &Pose,
    sigma_th: f64,
    cfg: &EngineConfig,
) -> Result<FineResult, RegistrationError> {
    let mut pose = *initial;
    let mut lambda = cfg.lm_lambda;
    let mut iterations = 0;
    let mut converged = false;
    let mut last: Vec<PlanarResidual> = Vec::new();

    for iter in 1..=cfg.fine_max_iters {
        let residuals = build_planar_residuals(source, target, &pose, sigma_th, cfg.min_gate)?;
        let ne = accumulate_planar(&residuals);
        let current = frozen_planar_cost(&residuals, source, &pose);
        iterations = iter;

        let mut step: Option<(Twist, Pose)> = None;
        let mut attempted = Twist::zero();
        for _ in 0..=cfg.lm_max_retries {
            if let Ok(dx) = ne.solve_damped(lambda) {
                attempted = dx;
                let trial = pose.left_update(&dx);
                if frozen_planar_cost(&residuals, source, &trial) <= current {
                    step = Some((dx, trial));
                    break;
                }
            }
            lambda *= 10.0;
        }
        last = residuals;

        let Some((dx, trial)) = step else {
            converged = attempted.norm() < cfg.fine_tol;
            break;
        };
        pose = trial;
        lambda = (lambda / 10.0).max(cfg.lm_lambda);
        let distance = (pose.translation - initial.translation).norm();
        if distance > cfg.max_translation {
            return Err(RegistrationError::DivergedTransform {
                distance,
                limit: cfg.max_translation,
            });
        }
        if dx.norm() < cfg.fine_tol {
            converged = true;
            break;
        }
    }

    Ok(FineResult {
        transform: pose,
        iterations,
        converged,
        final_cost: frozen_planar_cost(&last, source, &pose),
        initial_cost: frozen_planar_cost(&last, source, initial),
        inlier_count: last.len(),
    })
}
