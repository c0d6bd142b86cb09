//! Synthetic planar scenes with exact depth, plus brute-force reference
//! implementations used to check the warping, embedding, attention and pose
//! code.
//!
//! Everything here is computed by direct ray casting against analytic planes;
//! nothing goes through the splatting or flow code it is meant to check.

pub mod fixture;
pub mod oracle;

use nalgebra::{Point3, Vector3};

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, PixelCoord, RigidPose};
use crate::grid::{DepthMap, FeatureGrid, OcclusionMask};

/// Smooth procedural textures, evaluated in plane coordinates (scene units).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Texture {
    /// `base + contrast * sin(2πs/period) * cos(2πt/period)` per channel, plus a
    /// per-channel phase so RGB channels differ.
    SmoothChecker {
        period: f64,
        contrast: f64,
        base: [f64; 3],
    },
    /// Linear ramp `base + slope · (s, t)`, clamped to [0, 1].
    Gradient { base: [f64; 3], slope: [f64; 2] },
}

impl Texture {
    pub fn eval(&self, s: f64, t: f64) -> [f64; 3] {
        match *self {
            Texture::SmoothChecker {
                period,
                contrast,
                base,
            } => {
                let w = 2.0 * std::f64::consts::PI / period;
                let mut out = [0.0; 3];
                for (c, o) in out.iter_mut().enumerate() {
                    let phase = c as f64 * 0.7;
                    *o = (base[c] + contrast * (w * s + phase).sin() * (w * t - phase).cos())
                        .clamp(0.0, 1.0);
                }
                out
            }
            Texture::Gradient { base, slope } => {
                base.map(|b| (b + slope[0] * s + slope[1] * t).clamp(0.0, 1.0))
            }
        }
    }
}

/// A textured plane `normal · X = offset` in world coordinates, optionally bounded.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanePrimitive {
    pub normal: Vector3<f64>,
    pub offset: f64,
    /// Point on the plane used as the texture origin.
    pub origin: Point3<f64>,
    pub axis_s: Vector3<f64>,
    pub axis_t: Vector3<f64>,
    /// `[s_min, s_max, t_min, t_max]` in plane coordinates; `None` is unbounded.
    pub extent: Option<[f64; 4]>,
    pub texture: Texture,
}

impl PlanePrimitive {
    /// Plane through `origin` spanned by `axis_s`, `axis_t` (orthonormalized).
    pub fn new(
        origin: Point3<f64>,
        axis_s: Vector3<f64>,
        axis_t: Vector3<f64>,
        extent: Option<[f64; 4]>,
        texture: Texture,
    ) -> Self {
        let axis_s = axis_s.normalize();
        let axis_t = (axis_t - axis_s * axis_s.dot(&axis_t)).normalize();
        let normal = axis_s.cross(&axis_t);
        Self {
            normal,
            offset: normal.dot(&origin.coords),
            origin,
            axis_s,
            axis_t,
            extent,
            texture,
        }
    }

    /// Fronto-parallel plane at world `z`, texture axes aligned with x and y.
    pub fn fronto_parallel(z: f64, extent: Option<[f64; 4]>, texture: Texture) -> Self {
        Self::new(Point3::new(0.0, 0.0, z), Vector3::x(), Vector3::y(), extent, texture)
    }

    fn plane_coords(&self, x: &Point3<f64>) -> (f64, f64) {
        let d = x - self.origin;
        (d.dot(&self.axis_s), d.dot(&self.axis_t))
    }

    /// Ray parameter of the hit, if the ray meets the (bounded) plane in front of its origin.
    fn intersect(&self, origin: &Point3<f64>, dir: &Vector3<f64>) -> Option<f64> {
        let denom = self.normal.dot(dir);
        if denom.abs() < 1e-12 {
            return None;
        }
        let lambda = (self.offset - self.normal.dot(&origin.coords)) / denom;
        if lambda <= 0.0 || !lambda.is_finite() {
            return None;
        }
        if let Some([s0, s1, t0, t1]) = self.extent {
            let (s, t) = self.plane_coords(&(origin + dir * lambda));
            if s < s0 || s > s1 || t < t0 || t > t1 {
                return None;
            }
        }
        Some(lambda)
    }
}

/// A camera in the scene: intrinsics plus world-to-camera pose.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneCamera {
    pub intrinsics: CameraIntrinsics,
    pub world_to_camera: RigidPose,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub primitives: Vec<PlanePrimitive>,
    pub cameras: Vec<SceneCamera>,
}

/// Nearest surface along a ray.
#[derive(Debug, Clone, Copy)]
struct Hit {
    /// Ray parameter; equals z-depth when the ray direction has unit camera-z.
    lambda: f64,
    point: Point3<f64>,
    primitive: usize,
}

impl SyntheticScene {
    /// Builds a scene, checking that every camera sees at least one primitive.
    pub fn new(primitives: Vec<PlanePrimitive>, cameras: Vec<SceneCamera>) -> Result<Self> {
        let scene = Self {
            primitives,
            cameras,
        };
        for (i, cam) in scene.cameras.iter().enumerate() {
            let k = cam.intrinsics;
            let sees = (0..k.height).any(|r| {
                (0..k.width).any(|c| scene.cast(i, PixelCoord::cell_center(c, r)).is_some())
            });
            if !sees {
                return Err(Error::InvalidArgument(format!("camera {i} sees no primitive")));
            }
        }
        Ok(scene)
    }

    pub fn camera(&self, index: usize) -> Result<&SceneCamera> {
        self.cameras.get(index).ok_or(Error::IndexOutOfRange {
            index,
            len: self.cameras.len(),
        })
    }

    /// Pose mapping camera-`from` coordinates into camera-`to` coordinates.
    pub fn relative_pose(&self, from: usize, to: usize) -> Result<RigidPose> {
        let a = self.camera(from)?.world_to_camera;
        let b = self.camera(to)?.world_to_camera;
        Ok(b.compose(&a.inverse()))
    }

    fn cast(&self, cam: usize, x: PixelCoord) -> Option<Hit> {
        let c = &self.cameras[cam];
        let k = &c.intrinsics;
        let to_world = c.world_to_camera.inverse();
        let origin = Point3::from(to_world.translation().to_owned());
        // camera-frame direction with unit z so the ray parameter is z-depth
        let dir_cam = Vector3::new((x.u - k.cx) / k.fx, (x.v - k.cy) / k.fy, 1.0);
        let dir = to_world.rotation() * dir_cam;
        let mut best: Option<Hit> = None;
        for (i, p) in self.primitives.iter().enumerate() {
            if let Some(lambda) = p.intersect(&origin, &dir) {
                if best.is_none_or(|b| lambda < b.lambda) {
                    best = Some(Hit {
                        lambda,
                        point: origin + dir * lambda,
                        primitive: i,
                    });
                }
            }
        }
        best
    }

    fn shade(&self, hit: &Hit) -> [f64; 3] {
        let p = &self.primitives[hit.primitive];
        let (s, t) = p.plane_coords(&hit.point);
        p.texture.eval(s, t)
    }

    /// Ray-traced RGB image and exact z-depth for one camera. Pixels that hit
    /// nothing are black and invalid in depth.
    pub fn render(&self, camera_index: usize) -> Result<(FeatureGrid, DepthMap)> {
        let k = self.camera(camera_index)?.intrinsics;
        let (w, h) = k.dims();
        let mut depth = vec![0.0; w * h];
        let mut valid = vec![false; w * h];
        let image = FeatureGrid::from_fn(w, h, 3, |c, r, px| {
            if let Some(hit) = self.cast(camera_index, PixelCoord::cell_center(c, r)) {
                px.copy_from_slice(&self.shade(&hit));
                depth[r * w + c] = hit.lambda;
                valid[r * w + c] = true;
            }
        });
        Ok((image, DepthMap::new(w, h, depth, valid, None)?))
    }

    /// Ground-truth warp from `source` to `target` by exact ray casting.
    ///
    /// A target pixel is filled when its visible surface point projects inside
    /// the source frame and is not occluded there; the value is the texture at
    /// that point. Everything else is a hole.
    pub fn bruteforce_warp(&self, source: usize, target: usize) -> Result<(FeatureGrid, OcclusionMask)> {
        let src = *self.camera(source)?;
        let k = self.camera(target)?.intrinsics;
        let (w, h) = k.dims();
        let mut mask = OcclusionMask::empty(w, h);
        let image = FeatureGrid::from_fn(w, h, 3, |c, r, px| {
            let visible = self.cast(target, PixelCoord::cell_center(c, r)).and_then(|hit| {
                let p = src.world_to_camera.transform_point(&hit.point);
                if p.z <= 0.0 {
                    return None;
                }
                let x = src.intrinsics.project(&p);
                if !src.intrinsics.contains(x) {
                    return None;
                }
                let seen = self.cast(source, x)?;
                ((seen.lambda - p.z).abs() <= 1e-9 * (1.0 + p.z)).then_some(hit)
            });
            match visible {
                Some(hit) => px.copy_from_slice(&self.shade(&hit)),
                None => mask.set(c, r, true),
            }
        });
        Ok((image, mask))
    }
}

/// Parameters of the canonical occlusion scene: a textured square floating in
/// front of a textured backdrop, seen by a reference camera and a camera
/// translated sideways by `baseline`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoPlaneConfig {
    pub width: usize,
    pub height: usize,
    pub focal: f64,
    pub near_z: f64,
    pub far_z: f64,
    /// Half extents of the near square in scene units.
    pub half_size: [f64; 2],
    pub baseline: f64,
}

impl Default for TwoPlaneConfig {
    /// Disparities are integers (12 px near, 6 px far) so every flow is
    /// pixel-aligned; the disoccluded band is 6 px wide.
    fn default() -> Self {
        Self {
            width: 96,
            height: 64,
            focal: 80.0,
            near_z: 2.0,
            far_z: 4.0,
            half_size: [0.4, 0.3],
            baseline: 0.3,
        }
    }
}

impl TwoPlaneConfig {
    pub fn intrinsics(&self) -> CameraIntrinsics {
        CameraIntrinsics::new(
            self.focal,
            self.focal,
            self.width as f64 / 2.0,
            self.height as f64 / 2.0,
            self.width,
            self.height,
        )
        .expect("valid two-plane intrinsics")
    }

    /// `baseline · focal · (1/near − 1/far)`.
    pub fn expected_band_width(&self) -> f64 {
        self.baseline * self.focal * (1.0 / self.near_z - 1.0 / self.far_z)
    }
}

pub fn two_plane_scene(cfg: &TwoPlaneConfig) -> SyntheticScene {
    let k = cfg.intrinsics();
    let [hx, hy] = cfg.half_size;
    let primitives = vec![
        PlanePrimitive::fronto_parallel(
            cfg.far_z,
            None,
            Texture::SmoothChecker {
                period: 1.1,
                contrast: 0.3,
                base: [0.35, 0.45, 0.55],
            },
        ),
        PlanePrimitive::fronto_parallel(
            cfg.near_z,
            Some([-hx, hx, -hy, hy]),
            Texture::Gradient {
                base: [0.8, 0.6, 0.3],
                slope: [0.2, -0.15],
            },
        ),
    ];
    let cameras = vec![
        SceneCamera {
            intrinsics: k,
            world_to_camera: RigidPose::identity(),
        },
        SceneCamera {
            intrinsics: k,
            world_to_camera: RigidPose::from_translation(Vector3::new(-cfg.baseline, 0.0, 0.0)),
        },
    ];
    SyntheticScene::new(primitives, cameras).expect("two-plane scene is visible")
}

/// Single textured fronto-parallel plane at `depth`, second camera rotated by `axis_angle`.
pub fn rotation_scene(k: CameraIntrinsics, depth: f64, axis_angle: Vector3<f64>) -> SyntheticScene {
    let primitives = vec![PlanePrimitive::fronto_parallel(
        depth,
        None,
        Texture::SmoothChecker {
            // about 64 px per period on the image
            period: 64.0 * depth / k.fx,
            contrast: 0.25,
            base: [0.5, 0.5, 0.5],
        },
    )];
    let cameras = vec![
        SceneCamera {
            intrinsics: k,
            world_to_camera: RigidPose::identity(),
        },
        SceneCamera {
            intrinsics: k,
            world_to_camera: RigidPose::from_axis_angle(axis_angle, Vector3::zeros()),
        },
    ];
    SyntheticScene::new(primitives, cameras).expect("rotation scene is visible")
}

/// A room-like scene (back wall, floor, side wall) whose depth is not planar,
/// with one camera per entry of `world_to_camera`.
pub fn room_scene(k: CameraIntrinsics, world_to_camera: &[RigidPose]) -> Result<SyntheticScene> {
    let primitives = vec![
        PlanePrimitive::fronto_parallel(
            6.0,
            None,
            Texture::SmoothChecker {
                period: 1.3,
                contrast: 0.3,
                base: [0.55, 0.5, 0.45],
            },
        ),
        // floor at y = 1.2, facing up (towards -y)
        PlanePrimitive::new(
            Point3::new(0.0, 1.2, 0.0),
            Vector3::x(),
            Vector3::z(),
            None,
            Texture::SmoothChecker {
                period: 0.9,
                contrast: 0.25,
                base: [0.4, 0.35, 0.3],
            },
        ),
        // left wall at x = -2.5
        PlanePrimitive::new(
            Point3::new(-2.5, 0.0, 0.0),
            Vector3::z(),
            Vector3::y(),
            None,
            Texture::Gradient {
                base: [0.3, 0.5, 0.7],
                slope: [0.03, 0.05],
            },
        ),
    ];
    let cameras = world_to_camera
        .iter()
        .map(|p| SceneCamera {
            intrinsics: k,
            world_to_camera: *p,
        })
        .collect();
    SyntheticScene::new(primitives, cameras)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fronto_parallel_plane_renders_constant_depth() {
        let k = CameraIntrinsics::new(50.0, 50.0, 16.0, 12.0, 32, 24).unwrap();
        let scene = rotation_scene(k, 2.5, Vector3::zeros());
        let (img, depth) = scene.render(0).unwrap();
        assert_eq!(depth.valid_count(), 32 * 24);
        assert!(depth.values().iter().all(|d| (d - 2.5).abs() < 1e-12));
        assert!(img.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn tilted_plane_inverse_depth_is_affine_in_pixels() {
        let k = CameraIntrinsics::new(60.0, 60.0, 20.0, 15.0, 40, 30).unwrap();
        // plane n·X = c with n = (0.2, -0.1, 1)/|n|: 1/z = (n·K⁻¹x)/c
        let n = Vector3::new(0.2, -0.1, 1.0).normalize();
        let origin = Point3::new(0.0, 0.0, 3.0);
        let a = n.cross(&Vector3::y()).normalize();
        let b = n.cross(&a);
        let plane = PlanePrimitive::new(origin, a, b, None, Texture::Gradient { base: [0.5; 3], slope: [0.0, 0.0] });
        let c = plane.normal.dot(&origin.coords);
        let scene = SyntheticScene::new(
            vec![plane],
            vec![SceneCamera {
                intrinsics: k,
                world_to_camera: RigidPose::identity(),
            }],
        )
        .unwrap();
        let (_, depth) = scene.render(0).unwrap();
        for r in 0..30 {
            for col in 0..40 {
                let x = PixelCoord::cell_center(col, r);
                let ray = Vector3::new((x.u - 20.0) / 60.0, (x.v - 15.0) / 60.0, 1.0);
                let expected = c / plane.normal.dot(&ray);
                assert!((depth.get(col, r).unwrap() - expected).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn bruteforce_identity_and_rotation() {
        let cfg = TwoPlaneConfig::default();
        let scene = two_plane_scene(&cfg);
        let (img, _) = scene.render(0).unwrap();
        let (warped, mask) = scene.bruteforce_warp(0, 0).unwrap();
        assert_eq!(mask.hole_count(), 0);
        for (a, b) in warped.data().iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-12);
        }

        let k = CameraIntrinsics::new(50.0, 50.0, 32.0, 24.0, 64, 48).unwrap();
        let scene = rotation_scene(k, 3.0, Vector3::new(0.0, 0.1, 0.0));
        let (_, mask) = scene.bruteforce_warp(0, 1).unwrap();
        // rotation about y shifts content sideways; holes only in a border strip
        let h = scene.relative_pose(0, 1).unwrap();
        for r in 0..48 {
            for c in 0..64 {
                if mask.is_hole(c, r) {
                    let x = oracle::homography_map(&k, &h.inverse(), PixelCoord::cell_center(c, r));
                    assert!(!k.contains(x), "hole at ({c},{r}) inside shared view");
                }
            }
        }
    }

    #[test]
    fn two_plane_band_matches_disparity_difference() {
        let cfg = TwoPlaneConfig::default();
        assert_eq!(cfg.expected_band_width(), 6.0);
        let scene = two_plane_scene(&cfg);
        let (_, mask) = scene.bruteforce_warp(0, 1).unwrap();
        let row = cfg.height / 2;
        assert_eq!(oracle::interior_hole_runs(&mask, row), vec![6]);
    }
}
