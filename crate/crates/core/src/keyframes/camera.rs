//! Pinhole cameras and multi-view triangulation of marked key points.

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::keyframes::KeyPoint;

/// Smallest-to-largest eigenvalue ratio of the normal matrix below which the
/// rays are treated as parallel.
pub const RAY_CONDITION_THRESHOLD: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// World-to-camera rotation, row-major.
    pub rotation: [[f64; 3]; 3],
    /// World-to-camera translation: `x_cam = R x_world + t`.
    pub translation: [f64; 3],
    pub width: u32,
    pub height: u32,
}

impl CameraModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::DegenerateGeometry("focal lengths must be positive".into()));
        }
        let r = self.rotation_matrix();
        let err = (r.transpose() * r - Matrix3::identity()).abs().max();
        if err > 1e-9 || (r.determinant() - 1.0).abs() > 1e-9 {
            return Err(Error::DegenerateGeometry(format!(
                "rotation is not orthonormal (error {err:.2e})"
            )));
        }
        Ok(())
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|i, j| self.rotation[i][j])
    }

    fn translation_vector(&self) -> Vector3<f64> {
        Vector3::from(self.translation)
    }

    /// Camera centre in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation_matrix().transpose() * self.translation_vector())
    }

    /// Pixel coordinates of a world point; `None` behind the camera.
    pub fn project(&self, point: &[f64; 3]) -> Option<(f64, f64)> {
        let pc = self.rotation_matrix() * Vector3::from(*point) + self.translation_vector();
        (pc.z > 0.0).then(|| (self.fx * pc.x / pc.z + self.cx, self.fy * pc.y / pc.z + self.cy))
    }

    /// World-space unit ray through pixel `(u, v)`.
    pub fn back_project(&self, u: f64, v: f64) -> Vector3<f64> {
        let dir_cam = Vector3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0);
        (self.rotation_matrix().transpose() * dir_cam).normalize()
    }

    pub fn contains(&self, u: f64, v: f64) -> bool {
        u >= 0.0 && v >= 0.0 && u < f64::from(self.width) && v < f64::from(self.height)
    }

    /// Camera at `eye` looking at `target` with the given world up vector.
    pub fn look_at(
        eye: [f64; 3],
        target: [f64; 3],
        up: [f64; 3],
        intrinsics: (f64, f64, f64, f64),
        size: (u32, u32),
    ) -> Result<Self> {
        let eye = Vector3::from(eye);
        let forward = Vector3::from(target) - eye;
        let right = forward.cross(&Vector3::from(up));
        if forward.norm() == 0.0 || right.norm() < 1e-12 {
            return Err(Error::DegenerateGeometry("look-at frame is degenerate".into()));
        }
        let z = forward.normalize();
        let x = right.normalize();
        let y = z.cross(&x);
        let r = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
        let t = -(r * eye);
        let (fx, fy, cx, cy) = intrinsics;
        Ok(Self {
            fx,
            fy,
            cx,
            cy,
            rotation: [
                [r[(0, 0)], r[(0, 1)], r[(0, 2)]],
                [r[(1, 0)], r[(1, 1)], r[(1, 2)]],
                [r[(2, 0)], r[(2, 1)], r[(2, 2)]],
            ],
            translation: [t.x, t.y, t.z],
            width: size.0,
            height: size.1,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Triangulation {
    pub point: [f64; 3],
    /// RMS reprojection error in pixels.
    pub residual: f64,
}

/// Least-squares point closest to all back-projected rays.
///
/// Minimises `sum_j |(I - d_j d_j^T)(X - o_j)|^2`; the normal matrix is
/// rank-deficient exactly when all rays are parallel.
pub fn triangulate(observations: &[(KeyPoint, CameraModel)]) -> Result<Triangulation> {
    if observations.len() < 2 {
        return Err(Error::DegenerateGeometry(format!(
            "triangulation needs at least 2 views, got {}",
            observations.len()
        )));
    }
    let mut normal = Matrix3::zeros();
    let mut rhs = Vector3::zeros();
    for (kp, cam) in observations {
        cam.validate()?;
        if !cam.contains(kp.u, kp.v) {
            return Err(Error::DegenerateGeometry(format!(
                "pixel ({}, {}) outside view {}",
                kp.u, kp.v, kp.view
            )));
        }
        let d = cam.back_project(kp.u, kp.v);
        let p = Matrix3::identity() - d * d.transpose();
        normal += p;
        rhs += p * cam.center();
    }
    let eig = SymmetricEigen::new(normal).eigenvalues;
    let (lo, hi) = (eig.min(), eig.max());
    if !(lo > RAY_CONDITION_THRESHOLD * hi) {
        return Err(Error::DegenerateGeometry(format!(
            "rays are (nearly) parallel: eigenvalue ratio {:.3e}",
            lo / hi
        )));
    }
    let x = normal
        .cholesky()
        .ok_or_else(|| Error::DegenerateGeometry("normal matrix not positive definite".into()))?
        .solve(&rhs);
    let point = [x.x, x.y, x.z];
    let mut sq = 0.0;
    for (kp, cam) in observations {
        let (u, v) = cam.project(&point).ok_or_else(|| {
            Error::DegenerateGeometry(format!("point lies behind camera {}", kp.view))
        })?;
        sq += (u - kp.u).powi(2) + (v - kp.v).powi(2);
    }
    Ok(Triangulation {
        point,
        residual: (sq / observations.len() as f64).sqrt(),
    })
}
