//! Rigid-body transform algebra on SE(3).
//!
//! Twists are ordered `(rotation, translation)` and increments are applied by
//! left multiplication: `T <- exp(dx) * T`.

use std::fmt;
use std::ops::Mul;

use nalgebra::{Matrix3, Matrix4, Matrix6, Vector3, Vector6};

use crate::error::Se3Error;

/// Rotations whose orthonormality residual exceeds this are re-projected.
pub const ORTHONORMAL_TOL: f64 = 1e-9;

/// `log` refuses rotations closer than this to pi.
pub const NEAR_PI_MARGIN: f64 = 1e-6;

/// Condition number above which a damped system is treated as singular.
pub const MAX_CONDITION: f64 = 1e12;

const SMALL_ANGLE: f64 = 1e-4;
/// Below this angle the Jacobian coefficients come from their Taylor series.
const SERIES_ANGLE: f64 = 0.5;

/// Skew-symmetric matrix such that `skew(v) * w == v.cross(&w)`.
#[inline]
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

#[inline]
fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

/// Rotation angle in `[0, pi]` from the trace, `acos((tr(R) - 1) / 2)`.
pub fn rotation_angle(rotation: &Matrix3<f64>) -> f64 {
    let c = ((rotation.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    c.acos()
}

/// Frobenius norm of `R^T R - I`.
pub fn orthonormality_residual(rotation: &Matrix3<f64>) -> f64 {
    (rotation.transpose() * rotation - Matrix3::identity()).norm()
}

/// Nearest rotation matrix in the Frobenius sense (polar projection).
pub fn project_to_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let u = svd.u.expect("svd u requested");
    let v_t = svd.v_t.expect("svd v_t requested");
    let mut r = u * v_t;
    if r.determinant() < 0.0 {
        let mut u = u;
        u.column_mut(2).neg_mut();
        r = u * v_t;
    }
    r
}

/// Series-safe coefficients `(sin t / t, (1 - cos t) / t^2, (t - sin t) / t^3)`.
fn rodrigues_coefficients(theta: f64) -> (f64, f64, f64) {
    if theta < SMALL_ANGLE {
        let t2 = theta * theta;
        (
            1.0 - t2 / 6.0 + t2 * t2 / 120.0,
            0.5 - t2 / 24.0 + t2 * t2 / 720.0,
            1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0,
        )
    } else {
        let s = theta.sin();
        let half = (0.5 * theta).sin() / (0.5 * theta);
        let t2 = theta * theta;
        // (t - sin t) / t^3 cancels badly well above the small-angle cutoff
        let c = if theta < SERIES_ANGLE {
            1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0 - t2.powi(3) / 362_880.0 + t2.powi(4) / 39_916_800.0
                - t2.powi(5) / 6_227_020_800.0
        } else {
            (theta - s) / (t2 * theta)
        };
        (s / theta, 0.5 * half * half, c)
    }
}

/// `(1 - (t / 2) cot(t / 2)) / t^2`, the second-order coefficient of the inverse
/// left Jacobian.
fn inverse_jacobian_coefficient(theta: f64) -> f64 {
    if theta < SERIES_ANGLE {
        let x2 = 0.25 * theta * theta;
        1.0 / 12.0
            + x2 / 180.0
            + x2 * x2 / 1890.0
            + x2.powi(3) / 18_900.0
            + x2.powi(4) / 187_110.0
            + x2.powi(5) * (1382.0 / 2_554_051_500.0)
    } else {
        let (s, c) = theta.sin_cos();
        (1.0 - theta * s / (2.0 * (1.0 - c))) / (theta * theta)
    }
}

/// Lie-algebra increment, rotational part first.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Twist {
    /// Axis-angle rotation (radians).
    pub rot: Vector3<f64>,
    /// Translational part (meters).
    pub trans: Vector3<f64>,
}

impl Twist {
    pub fn new(rot: Vector3<f64>, trans: Vector3<f64>) -> Self {
        Self { rot, trans }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn from_vector(v: &Vector6<f64>) -> Self {
        Self {
            rot: v.fixed_rows::<3>(0).into_owned(),
            trans: v.fixed_rows::<3>(3).into_owned(),
        }
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        Vector6::new(
            self.rot.x,
            self.rot.y,
            self.rot.z,
            self.trans.x,
            self.trans.y,
            self.trans.z,
        )
    }

    /// Euclidean norm of the stacked 6-vector.
    pub fn norm(&self) -> f64 {
        (self.rot.norm_squared() + self.trans.norm_squared()).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.rot.iter().chain(self.trans.iter()).all(|x| x.is_finite())
    }

    pub fn scale(&self, s: f64) -> Self {
        Self::new(self.rot * s, self.trans * s)
    }

    /// Full SE(3) exponential: Rodrigues rotation, left-Jacobian translation.
    pub fn exp(&self) -> Pose {
        let theta = self.rot.norm();
        let (a, b, c) = rodrigues_coefficients(theta);
        let k = skew(&self.rot);
        let k2 = k * k;
        let rotation = Matrix3::identity() + k * a + k2 * b;
        let left_jacobian = Matrix3::identity() + k * b + k2 * c;
        Pose {
            rotation,
            translation: left_jacobian * self.trans,
        }
    }
}

impl std::ops::Add for Twist {
    type Output = Twist;
    fn add(self, rhs: Twist) -> Twist {
        Twist::new(self.rot + rhs.rot, self.trans + rhs.trans)
    }
}

/// Rigid transform `x -> R x + t`.
#[derive(Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl fmt::Debug for Pose {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Pose")
            .field("rotation", &self.rotation.as_slice())
            .field("translation", &self.translation.as_slice())
            .finish()
    }
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Builds a pose, re-projecting the rotation when it is not orthonormal
    /// within [`ORTHONORMAL_TOL`].
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
        .renormalized()
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: t,
        }
    }

    /// Rotation of `angle` radians about `axis` (normalized internally).
    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64, translation: Vector3<f64>) -> Self {
        let rot = Twist::new(axis.normalize() * angle, Vector3::zeros()).exp().rotation;
        Self {
            rotation: rot,
            translation,
        }
    }

    pub fn from_matrix(m: &Matrix4<f64>) -> Self {
        Self::new(
            m.fixed_view::<3, 3>(0, 0).into_owned(),
            m.fixed_view::<3, 1>(0, 3).into_owned(),
        )
    }

    pub fn to_matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// `self * other`, re-orthonormalized when drift exceeds [`ORTHONORMAL_TOL`].
    pub fn compose(&self, other: &Pose) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
        .renormalized()
    }

    #[inline]
    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    #[inline]
    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    pub fn angle(&self) -> f64 {
        rotation_angle(&self.rotation)
    }

    pub fn is_valid(&self) -> bool {
        orthonormality_residual(&self.rotation) < ORTHONORMAL_TOL
            && (self.rotation.determinant() - 1.0).abs() < ORTHONORMAL_TOL
            && self.translation.iter().all(|x| x.is_finite())
    }

    pub fn renormalized(mut self) -> Self {
        if orthonormality_residual(&self.rotation) > ORTHONORMAL_TOL {
            self.rotation = project_to_rotation(&self.rotation);
        }
        self
    }

    /// Inverse of [`Twist::exp`].
    pub fn log(&self) -> Result<Twist, Se3Error> {
        let r = &self.rotation;
        let axis_sin = vee(&(r - r.transpose())) * 0.5;
        let cos = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
        let theta = axis_sin.norm().atan2(cos);
        if theta > std::f64::consts::PI - NEAR_PI_MARGIN {
            return Err(Se3Error::AngleNearPi { angle: theta });
        }
        let rot = if theta < SMALL_ANGLE {
            let t2 = theta * theta;
            axis_sin * (1.0 + t2 / 6.0 + 7.0 * t2 * t2 / 360.0)
        } else {
            axis_sin * (theta / theta.sin())
        };
        let k = skew(&rot);
        let inv_left_jacobian = Matrix3::identity() - k * 0.5 + k * k * inverse_jacobian_coefficient(theta);
        Ok(Twist::new(rot, inv_left_jacobian * self.translation))
    }

    /// Left-multiplicative increment `exp(dx) * self`.
    pub fn left_update(&self, dx: &Twist) -> Self {
        dx.exp().compose(self)
    }
}

impl Mul for Pose {
    type Output = Pose;
    fn mul(self, rhs: Pose) -> Pose {
        self.compose(&rhs)
    }
}

impl Mul<&Pose> for &Pose {
    type Output = Pose;
    fn mul(self, rhs: &Pose) -> Pose {
        self.compose(rhs)
    }
}

/// Gauss-Newton system `H dx = b` in twist coordinates.
///
/// `gradient` is stored with the sign that makes `H^-1 b` a descent step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormalEquations {
    pub hessian: Matrix6<f64>,
    pub gradient: Vector6<f64>,
}

impl Default for NormalEquations {
    fn default() -> Self {
        Self::zero()
    }
}

impl NormalEquations {
    pub fn zero() -> Self {
        Self {
            hessian: Matrix6::zeros(),
            gradient: Vector6::zeros(),
        }
    }

    /// Solves `(H + lambda I) dx = b`.
    pub fn solve_damped(&self, lambda: f64) -> Result<Twist, Se3Error> {
        let damped = self.hessian + Matrix6::identity() * lambda;
        let sym = (damped + damped.transpose()) * 0.5;
        let eig = sym.symmetric_eigenvalues();
        let max = eig.iter().fold(0.0_f64, |m, e| m.max(e.abs()));
        let min = eig.iter().fold(f64::INFINITY, |m, e| m.min(e.abs()));
        if !max.is_finite() || min == 0.0 || max / min > MAX_CONDITION {
            return Err(Se3Error::SingularSystem {
                condition: if min == 0.0 { f64::INFINITY } else { max / min },
            });
        }
        let x = match sym.cholesky() {
            Some(chol) => chol.solve(&self.gradient),
            None => damped
                .full_piv_lu()
                .solve(&self.gradient)
                .ok_or(Se3Error::SingularSystem {
                    condition: f64::INFINITY,
                })?,
        };
        Ok(Twist::from_vector(&x))
    }
}

/// Sums per-item contributions in fixed-size chunks and folds the chunk sums in
/// order, so the result does not depend on the number of worker threads.
pub(crate) fn accumulate_chunked<T: Sync>(
    items: &[T],
    contribute: impl Fn(&T, &mut NormalEquations) + Sync,
) -> NormalEquations {
    use rayon::prelude::*;
    const CHUNK: usize = 256;
    let partials: Vec<NormalEquations> = items
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut ne = NormalEquations::zero();
            for item in chunk {
                contribute(item, &mut ne);
            }
            ne
        })
        .collect();
    let mut total = NormalEquations::zero();
    for p in partials {
        total += p;
    }
    total
}

impl std::ops::AddAssign for NormalEquations {
    fn add_assign(&mut self, rhs: Self) {
        self.hessian += rhs.hessian;
        self.gradient += rhs.gradient;
    }
}
