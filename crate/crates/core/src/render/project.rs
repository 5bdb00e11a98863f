use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};

use crate::gaussian::Camera;

/// Screen-space footprint of one Gaussian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    /// Pixel coordinates; pixel `(i, j)` is sampled at `(i, j)`.
    pub mean2d: Vector2<f64>,
    pub cov2d: Matrix2<f64>,
    /// Camera-space z.
    pub depth: f64,
}

/// Variance added to both screen axes so sub-pixel Gaussians stay resolvable.
pub const COV2D_DILATION: f64 = 0.3;

/// Perspective projection of a Gaussian with the local affine (EWA)
/// approximation. Returns `None` when the mean is outside `(near, far)`.
pub fn project_gaussian(
    mean: &Vector3<f64>,
    cov3d: &Matrix3<f64>,
    camera: &Camera,
) -> Option<Projection> {
    let p = camera.world_to_camera(mean);
    if p.z <= camera.near || p.z >= camera.far {
        return None;
    }
    let j = perspective_jacobian(&p, camera);
    let t = j * camera.rotation;
    let cov2d = t * cov3d * t.transpose() + Matrix2::identity() * COV2D_DILATION;
    Some(Projection {
        mean2d: Vector2::new(
            camera.fx * p.x / p.z + camera.cx,
            camera.fy * p.y / p.z + camera.cy,
        ),
        cov2d,
        depth: p.z,
    })
}

pub(crate) fn perspective_jacobian(p: &Vector3<f64>, camera: &Camera) -> Matrix2x3<f64> {
    let iz = 1.0 / p.z;
    let iz2 = iz * iz;
    Matrix2x3::new(
        camera.fx * iz,
        0.0,
        -camera.fx * p.x * iz2,
        0.0,
        camera.fy * iz,
        -camera.fy * p.y * iz2,
    )
}

/// Backward of [`perspective_jacobian`]: gradient w.r.t. the camera-space point.
pub(crate) fn perspective_jacobian_backward(
    p: &Vector3<f64>,
    camera: &Camera,
    grad_j: &Matrix2x3<f64>,
) -> Vector3<f64> {
    let iz = 1.0 / p.z;
    let iz2 = iz * iz;
    let iz3 = iz2 * iz;
    let (fx, fy) = (camera.fx, camera.fy);
    Vector3::new(
        grad_j[(0, 2)] * (-fx * iz2),
        grad_j[(1, 2)] * (-fy * iz2),
        grad_j[(0, 0)] * (-fx * iz2)
            + grad_j[(0, 2)] * (2.0 * fx * p.x * iz3)
            + grad_j[(1, 1)] * (-fy * iz2)
            + grad_j[(1, 2)] * (2.0 * fy * p.y * iz3),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::Intrinsics;
    use approx::assert_relative_eq;

    fn camera() -> Camera {
        Camera::new(
            Intrinsics {
                fx: 80.0,
                fy: 60.0,
                cx: 31.5,
                cy: 29.5,
                width: 64,
                height: 60,
            },
            Matrix3::identity(),
            Vector3::zeros(),
            0.1,
            100.0,
        )
        .unwrap()
    }

    #[test]
    fn on_axis_isotropic_closed_form() {
        let cam = camera();
        let sigma: f64 = 0.05;
        let z = 2.5;
        let cov = Matrix3::identity() * sigma * sigma;
        let p = project_gaussian(&Vector3::new(0.0, 0.0, z), &cov, &cam).unwrap();
        assert_relative_eq!(p.mean2d, Vector2::new(cam.cx, cam.cy), epsilon = 1e-12);
        let ex = (cam.fx * sigma / z).powi(2) + COV2D_DILATION;
        let ey = (cam.fy * sigma / z).powi(2) + COV2D_DILATION;
        assert_relative_eq!(p.cov2d, Matrix2::new(ex, 0.0, 0.0, ey), epsilon = 1e-12);
        assert_eq!(p.depth, z);
    }

    #[test]
    fn behind_camera_is_culled() {
        let cam = camera();
        assert!(project_gaussian(&Vector3::new(0.0, 0.0, -1.0), &Matrix3::identity(), &cam).is_none());
        assert!(project_gaussian(&Vector3::new(0.0, 0.0, 200.0), &Matrix3::identity(), &cam).is_none());
    }

    #[test]
    fn rigid_translation_invariance() {
        let cam = Camera::look_at(
            camera().intrinsics(),
            Vector3::new(0.3, 0.2, -3.0),
            Vector3::new(0.0, 0.1, 0.0),
            Vector3::y(),
            0.1,
            100.0,
        )
        .unwrap();
        let offset = Vector3::new(1.5, -2.0, 0.7);
        let moved = Camera::look_at(
            cam.intrinsics(),
            Vector3::new(0.3, 0.2, -3.0) + offset,
            Vector3::new(0.0, 0.1, 0.0) + offset,
            Vector3::y(),
            0.1,
            100.0,
        )
        .unwrap();
        let cov = Matrix3::new(0.02, 0.003, 0.0, 0.003, 0.01, -0.002, 0.0, -0.002, 0.015);
        let mean = Vector3::new(0.1, -0.2, 0.3);
        let a = project_gaussian(&mean, &cov, &cam).unwrap();
        let b = project_gaussian(&(mean + offset), &cov, &moved).unwrap();
        assert_relative_eq!(a.mean2d, b.mean2d, epsilon = 1e-9);
        assert_relative_eq!(a.cov2d, b.cov2d, epsilon = 1e-9);
        assert_relative_eq!(a.depth, b.depth, epsilon = 1e-12);
    }

    #[test]
    fn jacobian_backward_matches_fd() {
        let cam = camera();
        let p = Vector3::new(0.3, -0.2, 1.7);
        let g = Matrix2x3::new(0.3, -0.1, 0.7, 0.5, 0.9, -0.4);
        let f = |q: &Vector3<f64>| perspective_jacobian(q, &cam).component_mul(&g).sum();
        let an = perspective_jacobian_backward(&p, &cam, &g);
        for k in 0..3 {
            let mut a = p;
            let mut b = p;
            a[k] += 1e-6;
            b[k] -= 1e-6;
            assert_relative_eq!(an[k], (f(&a) - f(&b)) / 2e-6, epsilon = 1e-6);
        }
    }
}
