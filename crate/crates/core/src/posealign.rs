//! Relative pose from 3D-2D correspondences: linear PnP, Gauss-Newton
//! refinement and a seeded RANSAC wrapper.
//!
//! The 3D points come from unprojecting view-i pixels with view-i depth, so
//! the recovered translation lives in the depth map's scale.

use nalgebra::{DMatrix, Matrix3, Matrix3x4, Matrix4, Matrix6, Point3, Rotation3, Vector3, Vector6};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, PixelCoord, RigidPose, MIN_VISIBLE_Z};
use crate::grid::DepthMap;

/// Smallest sample for the linear solver.
pub const MIN_SAMPLE: usize = 6;
pub const DEFAULT_INLIER_THRESHOLD: f64 = 2.0;
pub const DEFAULT_CONFIDENCE: f64 = 0.999;

/// Hypotheses are drawn and scored in fixed-size batches so the adaptive
/// stopping point does not depend on the number of worker threads.
const RANSAC_BATCH: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    /// Point in camera-i coordinates.
    pub point3d: Point3<f64>,
    /// Observation in view j.
    pub point2d: PixelCoord,
    /// Match confidence; only used by weighted refinement.
    pub weight: f64,
}

impl Correspondence {
    pub fn new(point3d: Point3<f64>, point2d: PixelCoord) -> Self {
        Self {
            point3d,
            point2d,
            weight: 1.0,
        }
    }

    pub fn with_weight(mut self, weight: f64) -> Self {
        self.weight = weight;
        self
    }
}

/// A pixel match between view i and view j.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelMatch {
    pub source: PixelCoord,
    pub target: PixelCoord,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseEstimate {
    pub pose: RigidPose,
    /// Ascending indices into the input correspondences.
    pub inliers: Vec<usize>,
    /// RMS reprojection error over the inliers, in pixels.
    pub reprojection_rmse: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PnpOptions {
    pub max_iterations: usize,
    pub step_tolerance: f64,
    /// Weight residuals by `Correspondence::weight`.
    pub weighted: bool,
}

impl Default for PnpOptions {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            step_tolerance: 1e-10,
            weighted: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RansacOptions {
    pub inlier_threshold: f64,
    pub confidence: f64,
    pub seed: u64,
    pub max_iterations: usize,
    pub refine: PnpOptions,
}

impl Default for RansacOptions {
    fn default() -> Self {
        Self {
            inlier_threshold: DEFAULT_INLIER_THRESHOLD,
            confidence: DEFAULT_CONFIDENCE,
            seed: 0,
            max_iterations: 10_000,
            refine: PnpOptions::default(),
        }
    }
}

/// Euclidean reprojection error in pixels; infinite if the point ends up behind the camera.
pub fn reprojection_error(pose: &RigidPose, k: &CameraIntrinsics, c: &Correspondence) -> f64 {
    let q = pose.transform_point(&c.point3d);
    if q.z <= MIN_VISIBLE_Z {
        return f64::INFINITY;
    }
    k.project(&q).distance(&c.point2d)
}

/// Linear pose from ≥6 correspondences (DLT on normalized image coordinates).
pub fn dlt_pose(corr: &[Correspondence], k: &CameraIntrinsics) -> Result<RigidPose> {
    if corr.len() < MIN_SAMPLE {
        return Err(Error::InvalidArgument(format!(
            "need at least {MIN_SAMPLE} correspondences, got {}",
            corr.len()
        )));
    }
    // condition the 3D points: zero centroid, mean distance sqrt(3)
    let n = corr.len() as f64;
    let centroid = corr.iter().fold(Vector3::zeros(), |a, c| a + c.point3d.coords) / n;
    let spread = corr
        .iter()
        .map(|c| (c.point3d.coords - centroid).norm())
        .sum::<f64>()
        / n;
    if spread <= 0.0 || !spread.is_finite() {
        return Err(Error::DegenerateConfiguration);
    }
    let s = 3f64.sqrt() / spread;
    let mut norm = Matrix4::identity() * s;
    norm[(3, 3)] = 1.0;
    norm.fixed_view_mut::<3, 1>(0, 3).copy_from(&(-centroid * s));

    let kinv = k.inverse_matrix();
    let mut a = DMatrix::<f64>::zeros(2 * corr.len(), 12);
    for (i, c) in corr.iter().enumerate() {
        let p = (c.point3d.coords - centroid) * s;
        let x = [p.x, p.y, p.z, 1.0];
        let m = kinv * Vector3::new(c.point2d.u, c.point2d.v, 1.0);
        for j in 0..4 {
            a[(2 * i, j)] = x[j];
            a[(2 * i, 8 + j)] = -m.x * x[j];
            a[(2 * i + 1, 4 + j)] = x[j];
            a[(2 * i + 1, 8 + j)] = -m.y * x[j];
        }
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.ok_or(Error::DegenerateConfiguration)?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&x, &y| svd.singular_values[x].total_cmp(&svd.singular_values[y]));
    let sv = &svd.singular_values;
    if order.len() < 12 || sv[order[1]] <= 1e-9 * sv[order[11]] {
        return Err(Error::DegenerateConfiguration);
    }
    let h: Vec<f64> = v_t.row(order[0]).iter().copied().collect();
    let p_norm = Matrix3x4::from_row_slice(&h);
    let mut p = p_norm * norm;
    let mut m = p.fixed_view::<3, 3>(0, 0).into_owned();
    if m.determinant() < 0.0 {
        p = -p;
        m = -m;
    }
    let svd = m.svd(true, true);
    let (u, v_t) = (
        svd.u.ok_or(Error::DegenerateConfiguration)?,
        svd.v_t.ok_or(Error::DegenerateConfiguration)?,
    );
    let scale = svd.singular_values.mean();
    if scale <= 0.0 || !scale.is_finite() {
        return Err(Error::DegenerateConfiguration);
    }
    let r: Matrix3<f64> = u * v_t;
    let t = p.column(3) / scale;
    RigidPose::orthonormalized(r, t.into_owned())
}

/// Gauss-Newton refinement of the summed squared reprojection error.
///
/// Updates are left-multiplicative: `R ← exp(ω) R`, `t ← exp(ω) t + τ`.
pub fn refine_pose(
    corr: &[Correspondence],
    k: &CameraIntrinsics,
    init: RigidPose,
    opts: &PnpOptions,
) -> Result<RigidPose> {
    let cost = |pose: &RigidPose| -> f64 {
        corr.iter()
            .map(|c| {
                let w = if opts.weighted { c.weight } else { 1.0 };
                w * reprojection_error(pose, k, c).powi(2)
            })
            .sum()
    };
    let mut pose = init;
    let mut current = cost(&pose);
    for _ in 0..opts.max_iterations {
        let mut jtj = Matrix6::<f64>::zeros();
        let mut jtr = Vector6::<f64>::zeros();
        for c in corr {
            let q = pose.transform_point(&c.point3d);
            if q.z <= MIN_VISIBLE_Z {
                continue;
            }
            let w = if opts.weighted { c.weight } else { 1.0 };
            let iz = 1.0 / q.z;
            let ru = k.fx * q.x * iz + k.cx - c.point2d.u;
            let rv = k.fy * q.y * iz + k.cy - c.point2d.v;
            // d(u,v)/dq
            let du = Vector3::new(k.fx * iz, 0.0, -k.fx * q.x * iz * iz);
            let dv = Vector3::new(0.0, k.fy * iz, -k.fy * q.y * iz * iz);
            // dq/dω = -[q]x, so d/dω = q x d
            let q = q.coords;
            let ju = Vector6::new(
                q.y * du.z - q.z * du.y,
                q.z * du.x - q.x * du.z,
                q.x * du.y - q.y * du.x,
                du.x,
                du.y,
                du.z,
            );
            let jv = Vector6::new(
                q.y * dv.z - q.z * dv.y,
                q.z * dv.x - q.x * dv.z,
                q.x * dv.y - q.y * dv.x,
                dv.x,
                dv.y,
                dv.z,
            );
            jtj += w * (ju * ju.transpose() + jv * jv.transpose());
            jtr += w * (ju * ru + jv * rv);
        }
        let step = jtj
            .cholesky()
            .ok_or(Error::DegenerateConfiguration)?
            .solve(&(-jtr));
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..12 {
            let s = step * scale;
            let rot = Rotation3::new(Vector3::new(s[0], s[1], s[2])).into_inner();
            let cand = RigidPose::orthonormalized(
                rot * pose.rotation(),
                rot * pose.translation() + Vector3::new(s[3], s[4], s[5]),
            )?;
            let c = cost(&cand);
            if c <= current {
                accepted = Some((cand, c));
                break;
            }
            scale *= 0.5;
        }
        let Some((cand, c)) = accepted else {
            // no descent along the step: already at the numerical minimum
            return Ok(pose);
        };
        pose = cand;
        current = c;
        if (step * scale).norm() < opts.step_tolerance {
            return Ok(pose);
        }
    }
    Err(Error::NoConvergence(opts.max_iterations))
}

/// Least-squares pose: linear initialization followed by Gauss-Newton.
pub fn solve_pnp(corr: &[Correspondence], k: &CameraIntrinsics) -> Result<RigidPose> {
    solve_pnp_with(corr, k, &PnpOptions::default())
}

pub fn solve_pnp_with(corr: &[Correspondence], k: &CameraIntrinsics, opts: &PnpOptions) -> Result<RigidPose> {
    let init = dlt_pose(corr, k)?;
    refine_pose(corr, k, init, opts)
}

fn inlier_set(pose: &RigidPose, k: &CameraIntrinsics, corr: &[Correspondence], threshold: f64) -> Vec<usize> {
    corr.iter()
        .enumerate()
        .filter(|(_, c)| reprojection_error(pose, k, c) <= threshold)
        .map(|(i, _)| i)
        .collect()
}

fn required_iterations(inlier_ratio: f64, confidence: f64, cap: usize) -> usize {
    let good = inlier_ratio.powi(MIN_SAMPLE as i32);
    if good <= 0.0 {
        return cap;
    }
    if good >= 1.0 {
        return 1;
    }
    let n = (1.0 - confidence).ln() / (1.0 - good).ln();
    if !n.is_finite() {
        return cap;
    }
    (n.ceil() as usize).clamp(1, cap)
}

/// RANSAC over minimal 6-point samples with default options and the given seed.
pub fn pnp_ransac(
    corr: &[Correspondence],
    k: &CameraIntrinsics,
    inlier_threshold: f64,
    confidence: f64,
    seed: u64,
) -> Result<PoseEstimate> {
    pnp_ransac_with(
        corr,
        k,
        &RansacOptions {
            inlier_threshold,
            confidence,
            seed,
            ..RansacOptions::default()
        },
    )
}

/// Adaptive-iteration RANSAC followed by a least-squares refit on the consensus set.
///
/// Hypotheses are ranked by inlier count, ties broken by the earlier sample,
/// so a given seed always produces the same estimate.
pub fn pnp_ransac_with(corr: &[Correspondence], k: &CameraIntrinsics, opts: &RansacOptions) -> Result<PoseEstimate> {
    if !(0.0..1.0).contains(&opts.confidence) || opts.inlier_threshold <= 0.0 {
        return Err(Error::InvalidArgument(
            "confidence must be in [0, 1) and the threshold positive".into(),
        ));
    }
    let n = corr.len();
    if n < MIN_SAMPLE {
        return Err(Error::InsufficientInliers {
            found: n,
            needed: MIN_SAMPLE,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut needed = opts.max_iterations.max(1);
    let mut drawn = 0usize;
    let mut best: Option<(usize, Vec<usize>, RigidPose)> = None;
    while drawn < needed {
        let batch = RANSAC_BATCH.min(needed - drawn);
        let samples: Vec<Vec<usize>> = (0..batch)
            .map(|_| rand::seq::index::sample(&mut rng, n, MIN_SAMPLE).into_vec())
            .collect();
        let scored: Vec<Option<(Vec<usize>, RigidPose)>> = samples
            .par_iter()
            .map(|idx| {
                let subset: Vec<Correspondence> = idx.iter().map(|&i| corr[i]).collect();
                dlt_pose(&subset, k)
                    .ok()
                    .map(|pose| (inlier_set(&pose, k, corr, opts.inlier_threshold), pose))
            })
            .collect();
        for (inliers, pose) in scored.into_iter().flatten() {
            if best.as_ref().is_none_or(|(score, _, _)| inliers.len() > *score) {
                best = Some((inliers.len(), inliers, pose));
            }
        }
        drawn += batch;
        if let Some((score, _, _)) = &best {
            needed = required_iterations(*score as f64 / n as f64, opts.confidence, opts.max_iterations);
        }
    }

    let (mut inliers, mut pose) = best.map(|(_, s, p)| (s, p)).unwrap_or_default();
    if inliers.len() < MIN_SAMPLE {
        return Err(Error::InsufficientInliers {
            found: inliers.len(),
            needed: MIN_SAMPLE,
        });
    }
    for _ in 0..5 {
        let subset: Vec<Correspondence> = inliers.iter().map(|&i| corr[i]).collect();
        // a near-planar consensus set defeats the linear solve; start from the current pose instead
        pose = match solve_pnp_with(&subset, k, &opts.refine) {
            Err(Error::DegenerateConfiguration) => refine_pose(&subset, k, pose, &opts.refine)?,
            other => other?,
        };
        let updated = inlier_set(&pose, k, corr, opts.inlier_threshold);
        if updated == inliers {
            break;
        }
        inliers = updated;
        if inliers.len() < MIN_SAMPLE {
            return Err(Error::InsufficientInliers {
                found: inliers.len(),
                needed: MIN_SAMPLE,
            });
        }
    }
    let inliers = inlier_set(&pose, k, corr, opts.inlier_threshold);
    if inliers.len() < MIN_SAMPLE {
        return Err(Error::InsufficientInliers {
            found: inliers.len(),
            needed: MIN_SAMPLE,
        });
    }
    let sq: f64 = inliers
        .iter()
        .map(|&i| reprojection_error(&pose, k, &corr[i]).powi(2))
        .sum();
    Ok(PoseEstimate {
        pose,
        reprojection_rmse: (sq / inliers.len() as f64).sqrt(),
        inliers,
    })
}

/// Matches whose source pixel lies in frame on a cell with valid depth.
pub fn matches_with_depth(depth: &DepthMap, matches: &[PixelMatch], k: &CameraIntrinsics) -> Vec<PixelMatch> {
    matches
        .iter()
        .filter(|m| {
            let x = m.source;
            x.is_finite() && k.contains(x) && depth.get(x.u.floor() as usize, x.v.floor() as usize).is_some()
        })
        .copied()
        .collect()
}

/// Lifts each match's source pixel to 3D with the depth of the cell it falls in.
pub fn depth_to_correspondences(
    depth: &DepthMap,
    matches: &[PixelMatch],
    k: &CameraIntrinsics,
) -> Result<Vec<Correspondence>> {
    if depth.dims() != k.dims() {
        return Err(Error::DimensionMismatch {
            expected: k.dims(),
            got: depth.dims(),
        });
    }
    matches
        .iter()
        .enumerate()
        .map(|(index, m)| {
            let x = m.source;
            if !x.is_finite() || !k.contains(x) {
                return Err(Error::InvalidDepthAtMatch { index });
            }
            let d = depth
                .get(x.u.floor() as usize, x.v.floor() as usize)
                .ok_or(Error::InvalidDepthAtMatch { index })?;
            Ok(Correspondence::new(k.unproject(x, d), m.target).with_weight(m.weight))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthoracle::oracle;

    fn cam() -> CameraIntrinsics {
        CameraIntrinsics::new(500.0, 480.0, 320.0, 240.0, 640, 480).unwrap()
    }

    fn truth() -> RigidPose {
        RigidPose::from_axis_angle(Vector3::new(0.05, -0.12, 0.03), Vector3::new(0.4, -0.1, 0.25))
    }

    #[test]
    fn noiseless_recovery() {
        let k = cam();
        let (corr, _) = oracle::synthetic_correspondences(&truth(), &k, 8, 0.0, 0.0, 3);
        let est = solve_pnp(&corr, &k).unwrap();
        let (dr, dt) = est.distance(&truth());
        assert!(dr < 1e-6, "rotation error {dr}");
        assert!(dt / truth().translation().norm() < 1e-6);
    }

    #[test]
    fn identity_recovered() {
        let k = cam();
        let (corr, _) = oracle::synthetic_correspondences(&RigidPose::identity(), &k, 10, 0.0, 0.0, 5);
        let est = solve_pnp(&corr, &k).unwrap();
        let (dr, dt) = est.distance(&RigidPose::identity());
        assert!(dr < 1e-9 && dt < 1e-9);
    }

    #[test]
    fn coplanar_points_are_degenerate() {
        let k = cam();
        let corr: Vec<Correspondence> = (0..12)
            .map(|i| {
                let p = Point3::new((i % 4) as f64 * 0.5 - 0.7, (i / 4) as f64 * 0.4 - 0.4, 5.0);
                Correspondence::new(p, k.project(&p))
            })
            .collect();
        assert!(matches!(solve_pnp(&corr, &k), Err(Error::DegenerateConfiguration)));
    }

    #[test]
    fn too_few_points() {
        let k = cam();
        let (corr, _) = oracle::synthetic_correspondences(&truth(), &k, 5, 0.0, 0.0, 1);
        assert!(solve_pnp(&corr, &k).is_err());
        assert!(matches!(
            pnp_ransac(&corr, &k, 2.0, 0.999, 0),
            Err(Error::InsufficientInliers { .. })
        ));
    }

    #[test]
    fn iteration_cap_reports_no_convergence() {
        let k = cam();
        let (corr, _) = oracle::synthetic_correspondences(&truth(), &k, 30, 0.0, 0.0, 9);
        let opts = PnpOptions {
            max_iterations: 1,
            step_tolerance: 0.0,
            weighted: false,
        };
        let far = RigidPose::from_axis_angle(Vector3::new(0.2, 0.1, 0.0), Vector3::new(1.0, 0.0, 0.0));
        assert!(matches!(refine_pose(&corr, &k, far, &opts), Err(Error::NoConvergence(1))));
    }

    #[test]
    fn noisy_fit_matches_grid_search_oracle() {
        let k = cam();
        let (corr, _) = oracle::synthetic_correspondences(&truth(), &k, 100, 0.5, 0.0, 11);
        let est = solve_pnp(&corr, &k).unwrap();
        let w = truth().axis_angle();
        let t = *truth().translation();
        let center = [w.x, w.y, w.z, t.x, t.y, t.z];
        let (params, oracle_cost) = oracle::pnp_grid_search(&corr, &k, center, [0.02, 0.02, 0.02, 0.1, 0.1, 0.1], 1);
        let ours: f64 = corr.iter().map(|c| reprojection_error(&est, &k, c).powi(2)).sum();
        assert!(ours <= oracle_cost * (1.0 + 1e-9), "ours {ours} oracle {oracle_cost}");
        let ow = est.axis_angle();
        for (a, b) in [ow.x, ow.y, ow.z].iter().zip(&params[..3]) {
            assert!((a - b).abs() < 1e-4);
        }
        for (a, b) in est.translation().iter().zip(&params[3..]) {
            assert!((a - b).abs() < 1e-3);
        }
        let rmse = (ours / corr.len() as f64).sqrt();
        // per-axis sigma 0.5 gives a 2D rms near 0.5·sqrt(2)
        assert!((0.5..0.9).contains(&rmse), "rmse {rmse}");
        let (dr, dt) = est.distance(&truth());
        assert!(dr < 5e-3 && dt < 5e-2);
    }

    #[test]
    fn ransac_separates_outliers() {
        let k = cam();
        let (corr, labels) = oracle::synthetic_correspondences(&truth(), &k, 60, 0.0, 0.3, 21);
        let est = pnp_ransac(&corr, &k, 2.0, 0.999, 7).unwrap();
        let expected: Vec<usize> = labels.iter().enumerate().filter(|(_, l)| **l).map(|(i, _)| i).collect();
        assert_eq!(est.inliers, expected);
        let (dr, dt) = est.pose.distance(&truth());
        assert!(dr < 1e-5 && dt < 1e-5);
        assert!(est.reprojection_rmse < 1e-6);
    }

    #[test]
    fn ransac_without_outliers_equals_direct_solve() {
        let k = cam();
        let (corr, _) = oracle::synthetic_correspondences(&truth(), &k, 40, 0.0, 0.0, 2);
        let est = pnp_ransac(&corr, &k, 2.0, 0.999, 1).unwrap();
        assert_eq!(est.pose, solve_pnp(&corr, &k).unwrap());
        assert_eq!(est.inliers.len(), 40);
    }

    #[test]
    fn ransac_is_deterministic_and_rejects_noise() {
        let k = cam();
        let (corr, _) = oracle::synthetic_correspondences(&truth(), &k, 50, 0.3, 0.2, 4);
        let a = pnp_ransac(&corr, &k, 2.0, 0.999, 99).unwrap();
        let b = pnp_ransac(&corr, &k, 2.0, 0.999, 99).unwrap();
        assert_eq!(a, b);

        let (junk, _) = oracle::synthetic_correspondences(&truth(), &k, 40, 0.0, 1.0, 8);
        assert!(matches!(
            pnp_ransac(&junk, &k, 2.0, 0.999, 0),
            Err(Error::InsufficientInliers { .. })
        ));
    }

    #[test]
    fn looser_threshold_never_shrinks_consensus() {
        let k = cam();
        let (corr, _) = oracle::synthetic_correspondences(&truth(), &k, 80, 0.8, 0.25, 13);
        let mut last = 0;
        for th in [1.0, 1.5, 2.0, 3.0, 5.0, 8.0] {
            let est = pnp_ransac(&corr, &k, th, 0.999, 5).unwrap();
            assert!(est.inliers.len() >= last);
            for &i in &est.inliers {
                assert!(reprojection_error(&est.pose, &k, &corr[i]) <= th);
            }
            last = est.inliers.len();
        }
    }

    #[test]
    fn scaling_depth_scales_translation_only() {
        let k = cam();
        let (corr, _) = oracle::synthetic_correspondences(&truth(), &k, 30, 0.0, 0.0, 17);
        let base = solve_pnp(&corr, &k).unwrap();
        for s in [0.25, 3.0, 40.0] {
            let scaled: Vec<Correspondence> = corr
                .iter()
                .map(|c| Correspondence::new(Point3::from(c.point3d.coords * s), c.point2d))
                .collect();
            let est = solve_pnp(&scaled, &k).unwrap();
            assert!((est.rotation() - base.rotation()).norm() < 1e-6);
            let dt = (est.translation() - base.translation() * s).norm();
            assert!(dt < 1e-6 * s.max(1.0));
        }
    }

    #[test]
    fn unprojection_examples() {
        let k = cam();
        let depth = DepthMap::constant(640, 480, 2.5).unwrap();
        let m = |u, v| PixelMatch {
            source: PixelCoord::new(u, v),
            target: PixelCoord::new(0.0, 0.0),
            weight: 1.0,
        };
        let c = depth_to_correspondences(&depth, &[m(320.0, 240.0), m(820.0 - 1.0, 240.0)], &k);
        assert!(c.is_err());
        let c = depth_to_correspondences(&depth, &[m(320.0, 240.0)], &k).unwrap();
        assert_eq!(c[0].point3d, Point3::new(0.0, 0.0, 2.5));
        let k2 = CameraIntrinsics::new(100.0, 100.0, 320.0, 240.0, 640, 480).unwrap();
        let c = depth_to_correspondences(&depth, &[m(420.0, 240.0)], &k2).unwrap();
        assert_eq!(c[0].point3d, Point3::new(2.5, 0.0, 2.5));

        let mut vals = vec![1.0; 640 * 480];
        vals[0] = f64::NAN;
        let holey = DepthMap::from_values(640, 480, vals).unwrap();
        assert!(matches!(
            depth_to_correspondences(&holey, &[m(320.0, 240.0), m(0.2, 0.3)], &k),
            Err(Error::InvalidDepthAtMatch { index: 1 })
        ));
    }

    #[test]
    fn unprojection_matches_independent_inverse() {
        use rand::{Rng, SeedableRng};
        let k = cam();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let values: Vec<f64> = (0..640 * 480).map(|_| rng.random_range(0.5..9.0)).collect();
        let depth = DepthMap::from_values(640, 480, values).unwrap();
        let matches: Vec<PixelMatch> = (0..200)
            .map(|_| PixelMatch {
                source: PixelCoord::new(rng.random_range(0.0..640.0), rng.random_range(0.0..480.0)),
                target: PixelCoord::new(1.0, 1.0),
                weight: 1.0,
            })
            .collect();
        let corr = depth_to_correspondences(&depth, &matches, &k).unwrap();
        for (c, m) in corr.iter().zip(&matches) {
            let d = depth.get(m.source.u as usize, m.source.v as usize).unwrap();
            let p = oracle::unproject(&k, m.source, d);
            assert!((c.point3d.x - p[0]).abs() < 1e-12);
            assert!((c.point3d.y - p[1]).abs() < 1e-12);
            assert!((c.point3d.z - p[2]).abs() < 1e-12);
        }
    }
}
