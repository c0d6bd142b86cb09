//! Pinhole cameras, rigid transforms and the pixel reprojection primitive.
//!
//! Conventions used throughout the crate:
//!
//! - Integer grid cell `(col, row)` has its center at the continuous pixel
//!   coordinate `(col + 0.5, row + 0.5)`.
//! - Depth is z-depth along the optical axis, not ray length.
//! - A [`RigidPose`] used as `P_{i->j}` maps points expressed in camera-i
//!   coordinates into camera-j coordinates. No world frame is involved.

use nalgebra::{Matrix3, Point3, Rotation3, Vector3};

use crate::error::{Error, Result};

/// Transformed points with `z` at or below this are classified as behind the camera.
pub const MIN_VISIBLE_Z: f64 = 1e-9;

const ROTATION_TOL: f64 = 1e-9;

/// Continuous pixel coordinate. No range restriction: reprojection may land outside the frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelCoord {
    pub u: f64,
    pub v: f64,
}

impl PixelCoord {
    pub fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }

    /// Center of grid cell `(col, row)`.
    pub fn cell_center(col: usize, row: usize) -> Self {
        Self {
            u: col as f64 + 0.5,
            v: row as f64 + 0.5,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.u.is_finite() && self.v.is_finite()
    }

    pub fn distance(&self, other: &PixelCoord) -> f64 {
        (self.u - other.u).hypot(self.v - other.v)
    }
}

/// Pinhole intrinsics `K` together with the image size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.fx, self.fy, self.cx, self.cy]
            .iter()
            .all(|x| x.is_finite());
        if !finite {
            return Err(Error::InvalidIntrinsics("non-finite parameter".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidIntrinsics("empty image size".into()));
        }
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::InvalidIntrinsics(format!(
                "focal lengths must be positive (fx = {}, fy = {})",
                self.fx, self.fy
            )));
        }
        if !(0.0..self.width as f64).contains(&self.cx) || !(0.0..self.height as f64).contains(&self.cy)
        {
            return Err(Error::InvalidIntrinsics(format!(
                "principal point ({}, {}) outside {}x{} image",
                self.cx, self.cy, self.width, self.height
            )));
        }
        Ok(())
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn inverse_matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            1.0 / self.fx,
            0.0,
            -self.cx / self.fx,
            0.0,
            1.0 / self.fy,
            -self.cy / self.fy,
            0.0,
            0.0,
            1.0,
        )
    }

    /// Lifts a pixel to the camera-frame point at z-depth `depth`.
    pub fn unproject(&self, x: PixelCoord, depth: f64) -> Point3<f64> {
        Point3::new(
            (x.u - self.cx) / self.fx * depth,
            (x.v - self.cy) / self.fy * depth,
            depth,
        )
    }

    /// Perspective projection. Callers check `z` first.
    pub fn project(&self, p: &Point3<f64>) -> PixelCoord {
        PixelCoord {
            u: self.fx * p.x / p.z + self.cx,
            v: self.fy * p.y / p.z + self.cy,
        }
    }

    pub fn contains(&self, x: PixelCoord) -> bool {
        x.u >= 0.0 && x.v >= 0.0 && x.u < self.width as f64 && x.v < self.height as f64
    }

    /// Intrinsics for the image downscaled by an integer `factor`.
    ///
    /// With cell-center coordinates the continuous map is `u' = u / factor`.
    pub fn downscaled(&self, factor: usize) -> Result<Self> {
        if factor == 0 {
            return Err(Error::InvalidArgument("downscale factor must be >= 1".into()));
        }
        let f = factor as f64;
        Self::new(
            self.fx / f,
            self.fy / f,
            self.cx / f,
            self.cy / f,
            self.width / factor,
            self.height / factor,
        )
    }
}

/// Rigid transform in SE(3).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidPose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl RigidPose {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        if rotation.iter().chain(translation.iter()).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("pose"));
        }
        let gram = rotation.transpose() * rotation - Matrix3::identity();
        if gram.amax() > ROTATION_TOL || (rotation.determinant() - 1.0).abs() > ROTATION_TOL {
            return Err(Error::InvalidRotation);
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: t,
        }
    }

    /// Rotation `exp([axis_angle]x)` followed by translation.
    pub fn from_axis_angle(axis_angle: Vector3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation: Rotation3::new(axis_angle).into_inner(),
            translation,
        }
    }

    /// Projects an arbitrary 3x3 matrix onto SO(3) (closest in Frobenius norm).
    pub fn orthonormalized(m: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let svd = m.svd(true, true);
        let (u, v_t) = match (svd.u, svd.v_t) {
            (Some(u), Some(v_t)) => (u, v_t),
            _ => return Err(Error::DegenerateConfiguration),
        };
        let mut r = u * v_t;
        if r.determinant() < 0.0 {
            let mut u = u;
            u.column_mut(2).neg_mut();
            r = u * v_t;
        }
        Self::new(r, translation)
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn axis_angle(&self) -> Vector3<f64> {
        Rotation3::from_matrix_unchecked(self.rotation).scaled_axis()
    }

    pub fn transform_point(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.rotation * p.coords + self.translation)
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// `self ∘ other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &RigidPose) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    /// Camera center of the frame this pose maps into, expressed in the source frame.
    pub fn camera_center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    /// Row-major rotation entries.
    pub fn rotation_row_major(&self) -> [f64; 9] {
        let r = &self.rotation;
        [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
        ]
    }

    pub fn from_row_major(rotation: [f64; 9], translation: [f64; 3]) -> Result<Self> {
        Self::new(
            Matrix3::from_row_slice(&rotation),
            Vector3::from_column_slice(&translation),
        )
    }

    /// Rotation Frobenius distance and translation distance to `other`.
    pub fn distance(&self, other: &RigidPose) -> (f64, f64) {
        (
            (self.rotation - other.rotation).norm(),
            (self.translation - other.translation).norm(),
        )
    }
}

impl Default for RigidPose {
    fn default() -> Self {
        Self::identity()
    }
}

/// Maps pixel `x` seen at z-depth `depth` in camera i to its continuous location in camera j.
pub fn reproject(
    x: PixelCoord,
    depth: f64,
    pose: &RigidPose,
    k: &CameraIntrinsics,
) -> Result<PixelCoord> {
    if !x.is_finite() {
        return Err(Error::NonFinite("pixel"));
    }
    if !depth.is_finite() {
        return Err(Error::NonFinite("depth"));
    }
    if depth <= 0.0 {
        return Err(Error::InvalidArgument(format!("depth must be positive, got {depth}")));
    }
    reproject_with_depth(x, depth, pose, k).map(|(p, _)| p)
}

/// Like [`reproject`], also returning the z-depth of the point in camera j.
/// Assumes `depth > 0` and finite inputs.
pub(crate) fn reproject_with_depth(
    x: PixelCoord,
    depth: f64,
    pose: &RigidPose,
    k: &CameraIntrinsics,
) -> Result<(PixelCoord, f64)> {
    let p = pose.transform_point(&k.unproject(x, depth));
    if p.z <= MIN_VISIBLE_Z {
        return Err(Error::BehindCamera { z: p.z });
    }
    Ok((k.project(&p), p.z))
}

/// Per-pixel Plücker rays `(d, o x d)`, 6 values per pixel, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RayGrid {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl RayGrid {
    pub const CHANNELS: usize = 6;

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn ray(&self, col: usize, row: usize) -> (Vector3<f64>, Vector3<f64>) {
        let o = (row * self.width + col) * Self::CHANNELS;
        let s = &self.data[o..o + 6];
        (
            Vector3::new(s[0], s[1], s[2]),
            Vector3::new(s[3], s[4], s[5]),
        )
    }
}

/// Rays of the camera `(k, pose)` expressed in the frame `pose` maps from.
///
/// `pose` follows the crate convention (source frame to camera frame), so the
/// camera center is `-Rᵀt` and ray directions are `Rᵀ K⁻¹ x` normalized.
pub fn plucker_rays(k: &CameraIntrinsics, pose: &RigidPose) -> RayGrid {
    let rt = pose.rotation().transpose();
    let origin = pose.camera_center();
    let mut data = Vec::with_capacity(k.width * k.height * RayGrid::CHANNELS);
    for row in 0..k.height {
        for col in 0..k.width {
            let x = PixelCoord::cell_center(col, row);
            let local = k.unproject(x, 1.0).coords;
            let d = (rt * local).normalize();
            let m = origin.cross(&d);
            data.extend_from_slice(&[d.x, d.y, d.z, m.x, m.y, m.z]);
        }
    }
    RayGrid {
        width: k.width,
        height: k.height,
        data,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cam() -> CameraIntrinsics {
        CameraIntrinsics::new(120.0, 110.0, 32.5, 24.5, 64, 48).unwrap()
    }

    #[test]
    fn intrinsics_validation() {
        assert!(CameraIntrinsics::new(0.0, 1.0, 1.0, 1.0, 4, 4).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 4.0, 1.0, 4, 4).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, -0.1, 1.0, 4, 4).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, f64::NAN, 1.0, 4, 4).is_err());
        let k = cam();
        let prod = k.matrix() * k.inverse_matrix();
        assert!((prod - Matrix3::identity()).amax() < 1e-15);
    }

    #[test]
    fn pose_validation() {
        let mut r = Matrix3::identity();
        r[(0, 0)] = -1.0;
        assert!(matches!(
            RigidPose::new(r, Vector3::zeros()),
            Err(Error::InvalidRotation)
        ));
        assert!(RigidPose::new(Matrix3::identity() * 1.01, Vector3::zeros()).is_err());
    }

    #[test]
    fn principal_point_fixed_by_identity_and_forward_motion() {
        let k = cam();
        let c = PixelCoord::new(k.cx, k.cy);
        let p = reproject(c, 3.7, &RigidPose::identity(), &k).unwrap();
        assert_eq!(p, c);
        let fwd = RigidPose::from_translation(Vector3::new(0.0, 0.0, -1.2));
        let p = reproject(c, 3.7, &fwd, &k).unwrap();
        assert!(p.distance(&c) < 1e-12);
    }

    #[test]
    fn behind_camera_and_non_finite() {
        let k = cam();
        let fwd = RigidPose::from_translation(Vector3::new(0.0, 0.0, -5.0));
        assert!(matches!(
            reproject(PixelCoord::new(10.0, 10.0), 2.0, &fwd, &k),
            Err(Error::BehindCamera { .. })
        ));
        assert!(matches!(
            reproject(PixelCoord::new(f64::NAN, 1.0), 2.0, &fwd, &k),
            Err(Error::NonFinite(_))
        ));
        assert!(matches!(
            reproject(PixelCoord::new(1.0, 1.0), f64::INFINITY, &fwd, &k),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn compose_with_identity_and_inverse() {
        let p = RigidPose::from_axis_angle(Vector3::new(0.1, -0.3, 0.2), Vector3::new(1.0, 2.0, -0.5));
        assert_eq!(p.compose(&RigidPose::identity()), p);
        let e = p.compose(&p.inverse());
        let (dr, dt) = e.distance(&RigidPose::identity());
        assert!(dr < 1e-9 && dt < 1e-9);
    }

    #[test]
    fn row_major_round_trip() {
        let p = RigidPose::from_axis_angle(Vector3::new(0.2, 0.1, -0.4), Vector3::new(0.5, 0.0, 1.0));
        let q = RigidPose::from_row_major(p.rotation_row_major(), [0.5, 0.0, 1.0]).unwrap();
        assert_eq!(p, q);
        assert_eq!(p.rotation_row_major()[1], p.rotation()[(0, 1)]);
    }

    #[test]
    fn plucker_identity_principal_ray() {
        let k = CameraIntrinsics::new(50.0, 50.0, 4.5, 3.5, 9, 7).unwrap();
        let rays = plucker_rays(&k, &RigidPose::identity());
        let (d, m) = rays.ray(4, 3);
        assert!((d - Vector3::z()).norm() < 1e-15);
        assert_eq!(m, Vector3::zeros());
    }

    #[test]
    fn plucker_moments_match_cross_product() {
        let k = CameraIntrinsics::new(50.0, 40.0, 4.5, 3.5, 9, 7).unwrap();
        let pose = RigidPose::from_axis_angle(Vector3::new(0.0, 0.2, 0.0), Vector3::new(1.5, -0.5, 0.3));
        let rays = plucker_rays(&k, &pose);
        // Independent origin: solve R o + t = 0 by hand.
        let r = pose.rotation();
        let t = pose.translation();
        let origin = -(r.transpose() * t);
        let mut nonzero = 0;
        for row in 0..7 {
            for col in 0..9 {
                let (d, m) = rays.ray(col, row);
                assert!((m - origin.cross(&d)).norm() < 1e-12);
                if m.norm() > 1e-3 {
                    nonzero += 1;
                }
            }
        }
        assert_eq!(nonzero, 63);
    }

    fn arb_pose() -> impl Strategy<Value = RigidPose> {
        (
            prop::array::uniform3(-1.0f64..1.0),
            prop::array::uniform3(-2.0f64..2.0),
        )
            .prop_map(|(w, t)| RigidPose::from_axis_angle(Vector3::from(w), Vector3::from(t)))
    }

    proptest! {
        #[test]
        fn compose_matches_sequential_application(a in arb_pose(), b in arb_pose(),
                                                  p in prop::array::uniform3(-5.0f64..5.0)) {
            let p = Point3::from(Vector3::from(p));
            let lhs = a.compose(&b).transform_point(&p);
            let rhs = a.transform_point(&b.transform_point(&p));
            prop_assert!((lhs - rhs).norm() < 1e-12);
            let c = a.compose(&b);
            prop_assert!(RigidPose::new(*c.rotation(), *c.translation()).is_ok());
        }

        #[test]
        fn identity_reprojection_is_identity(u in -50.0f64..150.0, v in -50.0f64..150.0, d in 0.01f64..100.0) {
            let k = cam();
            let x = PixelCoord::new(u, v);
            let y = reproject(x, d, &RigidPose::identity(), &k).unwrap();
            prop_assert!(x.distance(&y) < 1e-9);
        }

        #[test]
        fn round_trip_through_inverse(u in 0.0f64..64.0, v in 0.0f64..48.0, d in 0.5f64..20.0,
                                      pose in arb_pose()) {
            let k = cam();
            let x = PixelCoord::new(u, v);
            if let Ok((y, dj)) = reproject_with_depth(x, d, &pose, &k) {
                if let Ok((back, di)) = reproject_with_depth(y, dj, &pose.inverse(), &k) {
                    prop_assert!(x.distance(&back) < 1e-6);
                    prop_assert!((di - d).abs() < 1e-9 * d.max(1.0));
                }
            }
        }

        #[test]
        fn plucker_invariants(fx in 10.0f64..500.0, fy in 10.0f64..500.0, pose in arb_pose()) {
            let k = CameraIntrinsics::new(fx, fy, 3.3, 2.1, 7, 5).unwrap();
            let rays = plucker_rays(&k, &pose);
            for row in 0..5 {
                for col in 0..7 {
                    let (d, m) = rays.ray(col, row);
                    prop_assert!((d.norm() - 1.0).abs() < 1e-6);
                    prop_assert!(d.dot(&m).abs() < 1e-6);
                }
            }
        }
    }
}
