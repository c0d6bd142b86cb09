//! Acceptance checks run by the `selftest` subcommand and the acceptance test
//! target. Each check returns a report instead of panicking so a run always
//! prints the full table.

use std::fmt;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use nalgebra::{Point3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attention::{augmented_attention, grid_tokens, softmax_in_place, AttentionConfig, AttentionResult};
use crate::coordembed::{canonical_coords, fourier_encode, warped_coord_embedding, CoordinateMap, DEFAULT_BANDS};
use crate::datapipe::{build_manifest, ManifestConfig};
use crate::geometry::{reproject, CameraIntrinsics, PixelCoord, RigidPose};
use crate::grid::{DepthMap, FeatureGrid, OcclusionMask};
use crate::posealign::{pnp_ransac, solve_pnp, Correspondence};
use crate::synthoracle::fixture::write_fixture_dataset;
use crate::synthoracle::oracle;
use crate::synthoracle::{rotation_scene, two_plane_scene, TwoPlaneConfig};
use crate::warpcore::{filter_occlusion_mask, forward_warp, inverse_warp, DEFAULT_MIN_OCCLUSION_SIZE};

/// Manifest produced from the bundled dataset fixture.
pub const GOLDEN_MANIFEST: &str = include_str!("../tests/fixtures/golden_manifest.jsonl");

#[derive(Debug, Clone, PartialEq)]
pub struct CriterionReport {
    pub id: usize,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub elapsed: Duration,
}

impl fmt::Display for CriterionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "criterion {:>2} {} {:<28} {:>8.3}s  {}",
            self.id,
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.elapsed.as_secs_f64(),
            self.detail
        )
    }
}

fn report(id: usize, name: &'static str, start: Instant, outcome: Result<String, String>) -> CriterionReport {
    let elapsed = start.elapsed();
    let (passed, detail) = match outcome {
        Ok(d) => (true, d),
        Err(d) => (false, d),
    };
    CriterionReport {
        id,
        name,
        passed,
        detail,
        elapsed,
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn random_pose(rng: &mut ChaCha8Rng, max_angle: f64, max_shift: f64) -> RigidPose {
    let mut v = || Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    let w = v() * max_angle / 3f64.sqrt();
    let t = v() * max_shift;
    RigidPose::from_axis_angle(w, t)
}

/// Reprojection against the homogeneous-matrix chain.
pub fn criterion_1() -> CriterionReport {
    let start = Instant::now();
    let outcome = (|| {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let k = CameraIntrinsics::new(520.0, 500.0, 319.5, 241.0, 640, 480).map_err(|e| e.to_string())?;
        let mut worst = 0.0f64;
        let mut compared = 0;
        for _ in 0..10_000 {
            let x = PixelCoord::new(rng.random_range(0.0..640.0), rng.random_range(0.0..480.0));
            let depth = rng.random_range(0.5..20.0);
            let pose = random_pose(&mut rng, 0.5, 1.0);
            let reference = oracle::reproject_homogeneous(x, depth, &pose, &k);
            match reproject(x, depth, &pose, &k) {
                Ok(y) => {
                    worst = worst.max((y.u - reference.u).abs()).max((y.v - reference.v).abs());
                    compared += 1;
                }
                Err(_) => {
                    let z = pose.transform_point(&k.unproject(x, depth)).z;
                    ensure(z <= 1e-9, || format!("rejected a point with z = {z}"))?;
                }
            }
        }
        let elapsed = start.elapsed();
        ensure(worst <= 1e-9, || format!("max deviation {worst:.3e} px"))?;
        ensure(elapsed < Duration::from_secs(1), || format!("took {elapsed:?}"))?;
        Ok(format!("{compared} samples, max deviation {worst:.2e} px"))
    })();
    report(1, "reprojection oracle", start, outcome)
}

fn rotation_case(width: usize, height: usize, focal: f64, axis_angle: Vector3<f64>) -> Result<(f64, usize, Duration), String> {
    let k = CameraIntrinsics::new(focal, focal, width as f64 / 2.0, height as f64 / 2.0, width, height)
        .map_err(|e| e.to_string())?;
    let depth = 3.0;
    let scene = rotation_scene(k, depth, axis_angle);
    let (image, _) = scene.render(0).map_err(|e| e.to_string())?;
    let depth_map = DepthMap::constant(width, height, depth).map_err(|e| e.to_string())?;
    let pose = scene.relative_pose(0, 1).map_err(|e| e.to_string())?;
    let (reference, interior) = oracle::homography_resample(&image, &k, &pose, 2.0);
    let t = Instant::now();
    let (fwd, fwd_mask) = forward_warp(&image, &depth_map, &pose, &k).map_err(|e| e.to_string())?;
    let (inv, inv_mask) = inverse_warp(&image, &depth_map, &pose, &k).map_err(|e| e.to_string())?;
    let warp_time = t.elapsed();
    let mut worst = 0.0f64;
    let mut checked = 0;
    for r in 0..height {
        for c in 0..width {
            if !interior[r * width + c] {
                continue;
            }
            if fwd_mask.is_hole(c, r) || inv_mask.is_hole(c, r) {
                return Err(format!("interior pixel ({c}, {r}) is a hole"));
            }
            for ch in 0..3 {
                let want = reference.pixel(c, r)[ch];
                worst = worst
                    .max((fwd.pixel(c, r)[ch] - want).abs())
                    .max((inv.pixel(c, r)[ch] - want).abs());
            }
            checked += 1;
        }
    }
    Ok((worst * 255.0, checked, warp_time))
}

/// Forward and inverse warps under pure rotation against `K R K⁻¹` resampling.
pub fn criterion_2() -> CriterionReport {
    let start = Instant::now();
    let outcome = (|| {
        let (small, _, _) = rotation_case(128, 96, 110.0, Vector3::new(0.03, -0.05, 0.02))?;
        ensure(small <= 0.5, || format!("128x96: {small:.3} levels"))?;
        let (large, checked, t) = rotation_case(512, 384, 420.0, Vector3::new(-0.02, 0.04, 0.03))?;
        ensure(large <= 0.5, || format!("512x384: {large:.3} levels"))?;
        ensure(t < Duration::from_secs(5), || format!("512x384 warps took {t:?}"))?;
        Ok(format!(
            "max error {:.3} / {large:.3} levels, {checked} interior px, 512x384 in {:.2}s",
            small,
            t.as_secs_f64()
        ))
    })();
    report(2, "rotation homography", start, outcome)
}

/// Forward-warp holes on the two-plane scene against the z-buffer oracle and
/// the disparity-difference band width.
pub fn criterion_3() -> CriterionReport {
    let start = Instant::now();
    let outcome = (|| {
        let cfg = TwoPlaneConfig::default();
        let k = cfg.intrinsics();
        let scene = two_plane_scene(&cfg);
        let (image, depth) = scene.render(0).map_err(|e| e.to_string())?;
        let pose = scene.relative_pose(0, 1).map_err(|e| e.to_string())?;
        let (_, mask) = forward_warp(&image, &depth, &pose, &k).map_err(|e| e.to_string())?;
        let (_, zmask) = oracle::zbuffer_warp(&image, &depth, &pose, &k);
        let iou = mask.iou(&zmask);
        ensure(iou >= 0.95, || format!("IoU {iou:.4}"))?;
        let expected = cfg.expected_band_width();
        let runs: Vec<usize> = (0..cfg.height).flat_map(|r| oracle::interior_hole_runs(&mask, r)).collect();
        ensure(!runs.is_empty(), || "no disoccluded band found".into())?;
        let worst = runs.iter().map(|&w| (w as f64 - expected).abs()).fold(0.0, f64::max);
        ensure(worst <= 1.0, || format!("band widths {runs:?}, expected {expected}"))?;
        Ok(format!("IoU {iou:.4}, {} band rows of width {expected} ± {worst}", runs.len()))
    })();
    report(3, "occlusion masks", start, outcome)
}

fn random_mask(rng: &mut ChaCha8Rng) -> OcclusionMask {
    let w = rng.random_range(4..40);
    let h = rng.random_range(4..30);
    let density = rng.random_range(0.0..0.15);
    let holes = (0..w * h).map(|_| rng.random_bool(density)).collect();
    OcclusionMask::new(w, h, holes).expect("consistent mask")
}

/// Checks the minimum-size rule, superset and idempotence on one mask.
pub fn check_mask_rule(mask: &OcclusionMask, min_size: usize) -> Result<(), String> {
    let out = filter_occlusion_mask(mask, min_size).map_err(|e| e.to_string())?;
    ensure(out.is_superset_of(mask), || "filter cleared a hole".into())?;
    let again = filter_occlusion_mask(&out, min_size).map_err(|e| e.to_string())?;
    ensure(again == out, || "filter is not idempotent".into())?;
    let (w, h) = mask.dims();
    let (need_w, need_h) = (min_size.min(w), min_size.min(h));
    let out_boxes = oracle::hole_component_boxes(&out);
    for (c0, r0, c1, r1) in oracle::hole_component_boxes(mask) {
        let holder = out_boxes
            .iter()
            .find(|b| b.0 <= c0 && b.1 <= r0 && b.2 >= c1 && b.3 >= r1)
            .ok_or("input component not covered")?;
        let (bw, bh) = (holder.2 - holder.0 + 1, holder.3 - holder.1 + 1);
        ensure(bw >= need_w && bh >= need_h, || format!("component grew only to {bw}x{bh}"))?;
    }
    Ok(())
}

/// Minimum occlusion size rule over 1000 random masks.
pub fn criterion_4() -> CriterionReport {
    let start = Instant::now();
    let outcome = (|| {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for n in 0..1000 {
            let mask = random_mask(&mut rng);
            check_mask_rule(&mask, DEFAULT_MIN_OCCLUSION_SIZE).map_err(|e| format!("mask {n}: {e}"))?;
        }
        Ok("1000 random masks: expanded, superset, idempotent".to_string())
    })();
    report(4, "minimum occlusion size", start, outcome)
}

/// Warped coordinate embedding and Fourier encoder.
pub fn criterion_5() -> CriterionReport {
    let start = Instant::now();
    let outcome = (|| {
        let e = |x: crate::Error| x.to_string();
        let k = CameraIntrinsics::new(60.0, 60.0, 24.0, 16.0, 48, 32).map_err(e)?;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let depth = DepthMap::from_values(48, 32, (0..48 * 32).map(|_| rng.random_range(1.0..6.0)).collect()).map_err(e)?;
        let (warped, _) = warped_coord_embedding(&depth, &RigidPose::identity(), &k, DEFAULT_BANDS).map_err(e)?;
        let plain = fourier_encode(&canonical_coords(48, 32).map_err(e)?, DEFAULT_BANDS).map_err(e)?;
        let identity_err = warped
            .grid()
            .data()
            .iter()
            .zip(plain.grid().data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        ensure(identity_err <= 1e-6, || format!("identity pose deviates by {identity_err:.3e}"))?;

        for _ in 0..5 {
            let pose = random_pose(&mut rng, 0.1, 0.3);
            let (emb, _) = warped_coord_embedding(&depth, &pose, &k, DEFAULT_BANDS).map_err(e)?;
            ensure(emb.grid().data().iter().all(|v| (-1.0..=1.0).contains(v)), || {
                "embedding entry outside [-1, 1]".into()
            })?;
        }

        let mut trig_err = 0.0f64;
        for bands in 1..=10 {
            let coords = FeatureGrid::from_fn(16, 16, 2, |_, _, px| {
                px[0] = rng.random_range(-1.0..1.0);
                px[1] = rng.random_range(-1.0..1.0);
            });
            let map = CoordinateMap::from_grid(coords).map_err(e)?;
            let enc = fourier_encode(&map, bands).map_err(e)?;
            for r in 0..16 {
                for c in 0..16 {
                    let (x, y) = map.get(c, r);
                    let mut direct = oracle::fourier_direct(x, bands);
                    direct.extend(oracle::fourier_direct(y, bands));
                    for (a, b) in enc.grid().pixel(c, r).iter().zip(&direct) {
                        trig_err = trig_err.max((a - b).abs());
                    }
                }
            }
        }
        ensure(trig_err <= 1e-12, || format!("encoder deviates from direct trig by {trig_err:.3e}"))?;
        Ok(format!("identity {identity_err:.1e}, trig {trig_err:.1e}"))
    })();
    report(5, "coordinate embedding", start, outcome)
}

fn random_tokens(rng: &mut ChaCha8Rng, rows: usize, dim: usize) -> nalgebra::DMatrix<f64> {
    nalgebra::DMatrix::from_fn(rows, dim, |_, _| rng.random_range(-2.0..2.0))
}

fn to_rows(m: &nalgebra::DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Augmented attention against the dense oracle.
pub fn criterion_6() -> CriterionReport {
    let start = Instant::now();
    let outcome = (|| {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let cfg = AttentionConfig::default();
        let (mut oracle_err, mut row_err, mut shift_err) = (0.0f64, 0.0f64, 0.0f64);
        for total in 1..=64usize {
            for _ in 0..3 {
                let n = rng.random_range(1..=total);
                let m = total - n;
                let dim = rng.random_range(1..9);
                let fi = random_tokens(&mut rng, m, dim);
                let fj = random_tokens(&mut rng, n, dim);
                let res = augmented_attention(&fi, &fj, &cfg).map_err(|e| e.to_string())?;
                let keys: Vec<Vec<f64>> = to_rows(&fi).into_iter().chain(to_rows(&fj)).collect();
                let (w, out) = oracle::dense_attention(&to_rows(&fj), &keys, &keys, 1.0 / (dim as f64).sqrt());
                for q in 0..n {
                    let row: Vec<f64> = res.a_cross.row(q).iter().chain(res.a_self.row(q).iter()).copied().collect();
                    ensure(row.iter().all(|a| *a >= 0.0), || "negative attention weight".into())?;
                    row_err = row_err.max((row.iter().sum::<f64>() - 1.0).abs());
                    for (a, b) in row.iter().zip(&w[q]) {
                        oracle_err = oracle_err.max((a - b).abs());
                    }
                    for c in 0..dim {
                        oracle_err = oracle_err.max((res.output[(q, c)] - out[q][c]).abs());
                    }
                }
                let mut logits: Vec<f64> = (0..total).map(|_| rng.random_range(-30.0..30.0)).collect();
                let shift = rng.random_range(-100.0..100.0);
                let mut shifted: Vec<f64> = logits.iter().map(|l| l + shift).collect();
                softmax_in_place(&mut logits);
                softmax_in_place(&mut shifted);
                for (a, b) in logits.iter().zip(&shifted) {
                    shift_err = shift_err.max((a - b).abs());
                }
            }
        }
        ensure(oracle_err <= 1e-10, || format!("oracle deviation {oracle_err:.3e}"))?;
        ensure(row_err <= 1e-6, || format!("row sum deviation {row_err:.3e}"))?;
        ensure(shift_err <= 1e-9, || format!("shift deviation {shift_err:.3e}"))?;

        let t = random_tokens(&mut rng, 1, 4);
        let single = augmented_attention(&t, &t, &cfg).map_err(|e| e.to_string())?;
        ensure(single.a_cross[(0, 0)] == 0.5 && single.a_self[(0, 0)] == 0.5, || {
            format!("single-token split {} / {}", single.a_cross[(0, 0)], single.a_self[(0, 0)])
        })?;
        Ok(format!(
            "oracle {oracle_err:.1e}, rows {row_err:.1e}, shift {shift_err:.1e}, split 0.5/0.5"
        ))
    })();
    report(6, "augmented attention", start, outcome)
}

/// Augmented attention on a two-plane scene with the source view's
/// coordinate encoding as input-view tokens and the warped embedding as
/// novel-view tokens. Also returns the forward-warp hole mask.
pub fn two_plane_attention(cfg: &TwoPlaneConfig, bands: usize) -> crate::Result<(AttentionResult, OcclusionMask)> {
    let k = cfg.intrinsics();
    let scene = two_plane_scene(cfg);
    let (_, depth) = scene.render(0)?;
    let pose = scene.relative_pose(0, 1)?;
    let source = fourier_encode(&canonical_coords(k.width, k.height)?, bands)?;
    let (warped, mask) = warped_coord_embedding(&depth, &pose, &k, bands)?;
    let res = augmented_attention(&grid_tokens(source.grid()), &grid_tokens(warped.grid()), &AttentionConfig::default())?;
    Ok((res, mask))
}

/// Mean self-attention mass at hole queries and at warped queries, with the query counts.
pub fn attention_mass_split(cfg: &TwoPlaneConfig, bands: usize) -> crate::Result<(f64, f64, usize, usize)> {
    let (res, mask) = two_plane_attention(cfg, bands)?;
    let (mut hole, mut filled) = ((0.0, 0usize), (0.0, 0usize));
    for (q, is_hole) in mask.holes().iter().enumerate() {
        let acc = if *is_hole { &mut hole } else { &mut filled };
        acc.0 += res.self_mass(q);
        acc.1 += 1;
    }
    Ok((hole.0 / hole.1.max(1) as f64, filled.0 / filled.1.max(1) as f64, hole.1, filled.1))
}

/// Hole queries lean on the novel view more than warped queries do.
pub fn criterion_7() -> CriterionReport {
    let start = Instant::now();
    let outcome = (|| {
        let cfg = TwoPlaneConfig {
            width: 48,
            height: 32,
            focal: 40.0,
            ..Default::default()
        };
        let (hole, filled, nh, nf) = attention_mass_split(&cfg, DEFAULT_BANDS).map_err(|e| e.to_string())?;
        ensure(nh > 0 && nf > 0, || "scene has no hole or no warped pixels".into())?;
        ensure(hole > filled, || format!("hole {hole:.4} <= warped {filled:.4}"))?;
        Ok(format!("mean a_self mass: hole {hole:.4} ({nh} px) > warped {filled:.4} ({nf} px)"))
    })();
    report(7, "attention mass split", start, outcome)
}

/// PnP and PnP-RANSAC recovery, consensus labels and depth-scale behaviour.
pub fn criterion_8() -> CriterionReport {
    let start = Instant::now();
    let outcome = (|| {
        let e = |x: crate::Error| x.to_string();
        let k = CameraIntrinsics::new(500.0, 480.0, 320.0, 240.0, 640, 480).map_err(e)?;
        let truth = RigidPose::from_axis_angle(Vector3::new(0.05, -0.12, 0.03), Vector3::new(0.4, -0.1, 0.25));
        let rel = |est: &RigidPose| {
            let (dr, dt) = est.distance(&truth);
            (dr, dt / truth.translation().norm())
        };

        let (corr, _) = oracle::synthetic_correspondences(&truth, &k, 40, 0.0, 0.0, 81);
        let (dr, dt) = rel(&solve_pnp(&corr, &k).map_err(e)?);
        ensure(dr < 1e-6 && dt < 1e-6, || format!("noiseless error {dr:.2e} / {dt:.2e}"))?;

        let (corr, labels) = oracle::synthetic_correspondences(&truth, &k, 100, 0.0, 0.3, 82);
        let est = pnp_ransac(&corr, &k, 2.0, 0.999, 7).map_err(e)?;
        let truth_inliers: Vec<usize> = labels.iter().enumerate().filter(|(_, l)| **l).map(|(i, _)| i).collect();
        ensure(est.inliers == truth_inliers, || {
            format!("{} inliers found, {} expected", est.inliers.len(), truth_inliers.len())
        })?;
        let (rr, rt) = rel(&est.pose);
        ensure(rr < 1e-4 && rt < 1e-4, || format!("RANSAC pose error {rr:.2e} / {rt:.2e}"))?;

        let s = 2.5;
        let base = solve_pnp(&corr_subset(&corr, &truth_inliers), &k).map_err(e)?;
        let scaled: Vec<Correspondence> = corr_subset(&corr, &truth_inliers)
            .iter()
            .map(|c| Correspondence::new(Point3::from(c.point3d.coords * s), c.point2d))
            .collect();
        let sp = solve_pnp(&scaled, &k).map_err(e)?;
        let rot_diff = (sp.rotation() - base.rotation()).norm();
        let t_diff = (sp.translation() - base.translation() * s).norm() / (base.translation().norm() * s);
        ensure(rot_diff < 1e-6 && t_diff < 1e-6, || format!("scale test {rot_diff:.2e} / {t_diff:.2e}"))?;
        Ok(format!(
            "noiseless {dr:.1e}, RANSAC {} inliers exact, pose {rr:.1e}, scale {t_diff:.1e}",
            est.inliers.len()
        ))
    })();
    report(8, "pose estimation", start, outcome)
}

fn corr_subset(corr: &[Correspondence], idx: &[usize]) -> Vec<Correspondence> {
    idx.iter().map(|&i| corr[i]).collect()
}

/// Location of the checked-in dataset fixture, if the source tree is present.
pub fn bundled_dataset() -> Option<PathBuf> {
    let p = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/dataset");
    p.is_dir().then_some(p)
}

/// Manifest determinism across runs and thread counts against the golden file.
///
/// Uses `dataset` if given, then the checked-in fixture, and otherwise
/// regenerates the fixture into a temporary directory.
pub fn criterion_9(dataset: Option<&Path>) -> CriterionReport {
    let start = Instant::now();
    let outcome = (|| {
        let tmp;
        let root = match dataset.map(Path::to_path_buf).or_else(bundled_dataset) {
            Some(p) => p,
            None => {
                tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
                write_fixture_dataset(tmp.path()).map_err(|e| e.to_string())?;
                tmp.path().to_path_buf()
            }
        };
        let cfg = ManifestConfig {
            dataset_tag: "fixture".into(),
            ..Default::default()
        };
        for threads in [1, 4, 1, 4] {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .map_err(|e| e.to_string())?;
            let text = pool
                .install(|| build_manifest(&root, &cfg, None))
                .and_then(|o| o.manifest.to_jsonl())
                .map_err(|e| e.to_string())?;
            ensure(text == GOLDEN_MANIFEST, || format!("manifest with {threads} threads differs from golden"))?;
        }
        Ok(format!("4 runs (threads 1, 4, 1, 4) match the golden manifest from {}", root.display()))
    })();
    report(9, "manifest determinism", start, outcome)
}

pub fn run_all(dataset: Option<&Path>) -> Vec<CriterionReport> {
    vec![
        criterion_1(),
        criterion_2(),
        criterion_3(),
        criterion_4(),
        criterion_5(),
        criterion_6(),
        criterion_7(),
        criterion_8(),
        criterion_9(dataset),
    ]
}
