//! Skeleton posing of a canonical Gaussian avatar.
//!
//! Bones are rigid transforms about their rest joints, composed down the
//! hierarchy by [`forward_kinematics`]. Any canonical point is posed by linear
//! blend skinning with weights read from a [`SkinningGrid`].

mod grid;
mod pose_io;

pub use grid::{build_skinning_grid, SkinningGrid};
pub use pose_io::{format_pose_sequence, parse_pose_sequence, read_pose_sequence, write_pose_sequence};

use nalgebra::{Isometry3, Matrix3, Matrix4, SymmetricEigen, Translation3, UnitQuaternion, Vector3};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gaussian::{normalize_quat, quat_from_rotation, GaussianCloud};

/// Canonical-to-posed rigid transform of one bone.
pub type RigidTransform = Isometry3<f64>;

/// Smallest covariance eigenvalue kept when re-factoring a transported Gaussian.
const MIN_EIGENVALUE: f64 = 1e-30;

#[derive(Debug, Clone, PartialEq)]
pub struct Skeleton {
    names: Vec<String>,
    parents: Vec<Option<usize>>,
    rest_joints: Vec<[f64; 3]>,
}

impl Skeleton {
    /// Bones must be listed parents-first with bone 0 as the only root.
    pub fn new(names: Vec<String>, parents: Vec<Option<usize>>, rest_joints: Vec<[f64; 3]>) -> Result<Self> {
        if parents.is_empty() {
            return Err(Error::InvalidInput("skeleton has no bones".into()));
        }
        if names.len() != parents.len() || rest_joints.len() != parents.len() {
            return Err(Error::InvalidInput(format!(
                "skeleton arrays disagree: {} names, {} parents, {} joints",
                names.len(),
                parents.len(),
                rest_joints.len()
            )));
        }
        for (j, p) in parents.iter().enumerate() {
            match (j, p) {
                (0, None) => {}
                (0, Some(_)) => return Err(Error::InvalidInput("bone 0 must be the root".into())),
                (_, None) => return Err(Error::InvalidInput(format!("bone {j} is a second root"))),
                (_, Some(p)) if *p >= j => {
                    return Err(Error::InvalidInput(format!(
                        "bone {j} has parent {p}; parents must precede children"
                    )))
                }
                _ => {}
            }
        }
        if rest_joints.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite rest joint".into()));
        }
        Ok(Self {
            names,
            parents,
            rest_joints,
        })
    }

    pub fn len(&self) -> usize {
        self.parents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parents.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn parent(&self, j: usize) -> Option<usize> {
        self.parents[j]
    }

    pub fn rest_joint(&self, j: usize) -> Vector3<f64> {
        Vector3::from(self.rest_joints[j])
    }

    pub fn bone_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

/// Local bone rotations relative to rest, plus a root translation.
#[derive(Debug, Clone, PartialEq)]
pub struct Pose {
    /// Scalar-first quaternions, one per bone.
    pub rotations: Vec<[f64; 4]>,
    pub root_translation: [f64; 3],
}

impl Pose {
    pub fn identity(n_bones: usize) -> Self {
        Self {
            rotations: vec![[1.0, 0.0, 0.0, 0.0]; n_bones],
            root_translation: [0.0; 3],
        }
    }

    /// Sets bone `j` to a rotation of `angle` radians about `axis`.
    pub fn set_axis_angle(&mut self, j: usize, axis: [f64; 3], angle: f64) {
        let q = UnitQuaternion::from_axis_angle(&nalgebra::Unit::new_normalize(Vector3::from(axis)), angle);
        self.rotations[j] = [q.w, q.i, q.j, q.k];
    }

    pub fn validate(&self, skeleton: &Skeleton) -> Result<()> {
        if self.rotations.len() != skeleton.len() {
            return Err(Error::InvalidInput(format!(
                "pose has {} rotations for {} bones",
                self.rotations.len(),
                skeleton.len()
            )));
        }
        for q in &self.rotations {
            normalize_quat(q)?;
        }
        if self.root_translation.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite root translation".into()));
        }
        Ok(())
    }

    pub fn is_identity(&self) -> bool {
        self.root_translation == [0.0; 3]
            && self
                .rotations
                .iter()
                .all(|q| q[1] == 0.0 && q[2] == 0.0 && q[3] == 0.0 && q[0] > 0.0)
    }
}

/// Per-bone canonical-to-posed transforms.
pub fn forward_kinematics(skeleton: &Skeleton, pose: &Pose) -> Result<Vec<RigidTransform>> {
    pose.validate(skeleton)?;
    let mut out: Vec<RigidTransform> = Vec::with_capacity(skeleton.len());
    for j in 0..skeleton.len() {
        let (q, _) = normalize_quat(&pose.rotations[j])?;
        let rot = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(q[0], q[1], q[2], q[3]));
        let c = skeleton.rest_joint(j);
        // Rotate about the rest joint: x -> R (x - c) + c.
        let local = Isometry3::from_parts(Translation3::from(c - rot * c), rot);
        let global = match skeleton.parent(j) {
            Some(p) => out[p] * local,
            None => Translation3::from(Vector3::from(pose.root_translation)) * local,
        };
        out.push(global);
    }
    Ok(out)
}

/// Blended 4×4 transform `Σ w_j T_j`; zero weights are skipped.
pub fn blend_transforms(weights: &[f64], transforms: &[RigidTransform]) -> Matrix4<f64> {
    let mut a = Matrix4::zeros();
    for (w, t) in weights.iter().zip(transforms) {
        if *w != 0.0 {
            a += t.to_homogeneous() * *w;
        }
    }
    a
}

pub fn lbs_transform(p: &Vector3<f64>, weights: &[f64], transforms: &[RigidTransform]) -> Vector3<f64> {
    let a = blend_transforms(weights, transforms);
    a.fixed_view::<3, 3>(0, 0) * p + a.fixed_view::<3, 1>(0, 3)
}

/// Poses every Gaussian of `canonical`.
///
/// Means move by the blended affine map `A p + t`, covariances become `A Σ Aᵀ`
/// and are re-factored into a right-handed rotation and log-scales. SH
/// coefficients are left in the canonical frame.
pub fn animate(
    canonical: &GaussianCloud,
    grid: &SkinningGrid,
    skeleton: &Skeleton,
    pose: &Pose,
) -> Result<GaussianCloud> {
    if grid.n_bones() != skeleton.len() {
        return Err(Error::InvalidInput(format!(
            "skinning grid has {} bones, skeleton {}",
            grid.n_bones(),
            skeleton.len()
        )));
    }
    let transforms = forward_kinematics(skeleton, pose)?;
    // `I + Σ w_j (T_j − I)`: equal to `Σ w_j T_j` for convex weights, and exactly
    // the identity when every weighted bone is at rest.
    let offsets: Vec<Option<Matrix4<f64>>> = transforms
        .iter()
        .map(|t| {
            let d = t.to_homogeneous() - Matrix4::identity();
            (d != Matrix4::zeros()).then_some(d)
        })
        .collect();
    let moved: Vec<Result<([f64; 3], [f64; 4], [f64; 3])>> = (0..canonical.len())
        .into_par_iter()
        .map(|i| {
            let mean = canonical.mean(i);
            let w = grid.query_weights(&mean);
            let mut a4 = Matrix4::identity();
            for (wj, d) in w.iter().zip(&offsets) {
                if let (true, Some(d)) = (*wj != 0.0, d) {
                    a4 += d * *wj;
                }
            }
            if a4.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidState(format!("gaussian {i}: blended transform is not finite")));
            }
            let a: Matrix3<f64> = a4.fixed_view::<3, 3>(0, 0).into();
            let t: Vector3<f64> = a4.fixed_view::<3, 1>(0, 3).into();
            if a == Matrix3::identity() && t == Vector3::zeros() {
                return Ok((canonical.means[i], canonical.rotations[i], canonical.log_scales[i]));
            }
            let new_mean = a * mean + t;
            let cov = a * canonical.covariance(i)? * a.transpose();
            let (rotation, log_scale) = refactor_covariance(&cov)
                .ok_or_else(|| Error::InvalidState(format!("gaussian {i}: transported covariance is not finite")))?;
            Ok((new_mean.into(), rotation, log_scale))
        })
        .collect();
    let mut out = canonical.clone();
    for (i, r) in moved.into_iter().enumerate() {
        let (m, q, s) = r?;
        out.means[i] = m;
        out.rotations[i] = q;
        out.log_scales[i] = s;
    }
    Ok(out)
}

/// Symmetric eigendecomposition of a covariance into a unit quaternion and
/// per-axis log standard deviations.
pub fn refactor_covariance(cov: &Matrix3<f64>) -> Option<([f64; 4], [f64; 3])> {
    let sym = (cov + cov.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut r = eig.eigenvectors;
    if r.determinant() < 0.0 {
        let c = -r.column(2);
        r.set_column(2, &c);
    }
    let log_scale = [0, 1, 2].map(|k| 0.5 * eig.eigenvalues[k].max(MIN_EIGENVALUE).ln());
    let q = quat_from_rotation(&r);
    if log_scale.iter().chain(q.iter()).all(|v| v.is_finite()) {
        Some((q, log_scale))
    } else {
        None
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::FRAC_PI_2;

    pub(crate) fn chain() -> Skeleton {
        Skeleton::new(
            vec!["a".into(), "b".into()],
            vec![None, Some(0)],
            vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]],
        )
        .unwrap()
    }

    #[test]
    fn identity_pose_gives_identity_transforms() {
        let s = chain();
        for t in forward_kinematics(&s, &Pose::identity(2)).unwrap() {
            assert_relative_eq!(t.to_homogeneous(), Matrix4::identity(), epsilon = 1e-15);
        }
    }

    #[test]
    fn root_rotation_propagates_rigidly() {
        let s = chain();
        let mut pose = Pose::identity(2);
        pose.set_axis_angle(0, [0.3, 1.0, -0.2], 0.8);
        let ts = forward_kinematics(&s, &pose).unwrap();
        let r = UnitQuaternion::from_axis_angle(&nalgebra::Unit::new_normalize(Vector3::new(0.3, 1.0, -0.2)), 0.8);
        let p = nalgebra::Point3::new(0.4, -1.2, 2.0);
        for t in ts {
            assert_relative_eq!(t * p, r * p, epsilon = 1e-12);
        }
    }

    #[test]
    fn child_rotation_about_child_joint() {
        let s = chain();
        let mut pose = Pose::identity(2);
        pose.set_axis_angle(1, [0.0, 0.0, 1.0], FRAC_PI_2);
        let ts = forward_kinematics(&s, &pose).unwrap();
        // Hand-composed: translate(+c) · Rz(90°) · translate(−c), c = (1,0,0).
        let rz = Matrix4::new(0.0, -1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        let c = Vector3::<f64>::x();
        let expected = Matrix4::new_translation(&c) * rz * Matrix4::new_translation(&-c);
        assert_relative_eq!(ts[1].to_homogeneous(), expected, epsilon = 1e-15);
        assert_relative_eq!(ts[0].to_homogeneous(), Matrix4::identity(), epsilon = 1e-15);
        // Point at (2,0,0) swings to (1,1,0); the joint stays put.
        let p = ts[1] * nalgebra::Point3::new(2.0, 0.0, 0.0);
        assert_relative_eq!(p.coords, Vector3::new(1.0, 1.0, 0.0), epsilon = 1e-15);
    }

    #[test]
    fn nested_rotations_compose() {
        let s = chain();
        let mut pose = Pose::identity(2);
        pose.set_axis_angle(0, [0.0, 0.0, 1.0], FRAC_PI_2);
        pose.set_axis_angle(1, [0.0, 0.0, 1.0], FRAC_PI_2);
        pose.root_translation = [0.0, 0.0, 5.0];
        let ts = forward_kinematics(&s, &pose).unwrap();
        // Tip at (2,0,0): child turns it to (1,1,0), root turns that to (−1,1,0), then lift.
        let p = ts[1] * nalgebra::Point3::new(2.0, 0.0, 0.0);
        assert_relative_eq!(p.coords, Vector3::new(-1.0, 1.0, 5.0), epsilon = 1e-14);
    }

    #[test]
    fn skeleton_validation() {
        assert!(Skeleton::new(vec!["a".into()], vec![Some(0)], vec![[0.0; 3]]).is_err());
        assert!(Skeleton::new(
            vec!["a".into(), "b".into()],
            vec![None, None],
            vec![[0.0; 3]; 2]
        )
        .is_err());
        assert!(Skeleton::new(
            vec!["a".into(), "b".into(), "c".into()],
            vec![None, Some(2), Some(0)],
            vec![[0.0; 3]; 3]
        )
        .is_err());
        let mut p = Pose::identity(2);
        p.rotations[1] = [0.0; 4];
        assert!(forward_kinematics(&chain(), &p).is_err());
    }

    #[test]
    fn lbs_examples() {
        let p = Vector3::new(0.3, -0.7, 1.1);
        let id = vec![RigidTransform::identity(); 3];
        assert_eq!(lbs_transform(&p, &[0.2, 0.5, 0.3], &id), p);

        let mut pose = Pose::identity(2);
        pose.set_axis_angle(1, [1.0, 2.0, 0.5], 1.3);
        pose.root_translation = [0.1, 0.2, 0.3];
        let ts = forward_kinematics(&chain(), &pose).unwrap();
        let expected = ts[1].to_homogeneous() * p.push(1.0);
        assert_eq!(lbs_transform(&p, &[0.0, 1.0], &ts), expected.xyz());

        let two = [
            RigidTransform::translation(1.0, 0.0, 0.0),
            RigidTransform::translation(0.0, 1.0, 0.0),
        ];
        let moved = lbs_transform(&p, &[0.25, 0.75], &two);
        assert_relative_eq!(moved, p + Vector3::new(0.25, 0.75, 0.0), epsilon = 1e-15);
    }

    #[test]
    fn refactor_round_trips_covariance() {
        let q = crate::gaussian::normalize_quat(&[0.9, 0.2, -0.3, 0.1]).unwrap().0;
        let ls = [-3.0, -2.5, -4.0];
        let cov = crate::gaussian::covariance_from_scale_rotation(&ls, &q).unwrap();
        let (q2, ls2) = refactor_covariance(&cov).unwrap();
        let cov2 = crate::gaussian::covariance_from_scale_rotation(&ls2, &q2).unwrap();
        assert_relative_eq!(cov, cov2, epsilon = 1e-15, max_relative = 1e-10);
        let r = crate::gaussian::rotation_from_quat(&q2).unwrap();
        assert!(r.determinant() > 0.0);
    }
}
