//! Writers for on-disk fixtures: a synthetic multi-sequence dataset in the
//! layout `datapipe` reads, and the two-plane occlusion scene.

use std::fs;
use std::path::Path;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{room_scene, two_plane_scene, TwoPlaneConfig};
use crate::datapipe::{
    camera_path, depth_path, frame_path, matches_path, sample_pairs, sequence_seed, PairSampling,
};
use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, PixelCoord, RigidPose};
use crate::io::{write_camera, write_depth, write_image, write_mask, write_matches, CameraJson};
use crate::posealign::PixelMatch;

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceConfig {
    pub frames: usize,
    pub width: usize,
    pub height: usize,
    pub focal: f64,
    /// Must match the sampling later used to build the manifest.
    pub sampling: PairSampling,
    /// Every `match_step`-th pixel (both axes) becomes a match.
    pub match_step: usize,
    pub noise_sigma: f64,
    pub outlier_fraction: f64,
    /// Positions, among the sampled anchor frames, whose depth confidence is low.
    pub low_confidence_anchors: Vec<usize>,
    /// Positions, among the sampled anchor frames, whose depth file is written truncated.
    pub corrupt_depth_anchors: Vec<usize>,
}

impl Default for SequenceConfig {
    fn default() -> Self {
        Self {
            frames: 120,
            width: 24,
            height: 18,
            focal: 21.0,
            sampling: PairSampling::default(),
            match_step: 1,
            noise_sigma: 0.3,
            outlier_fraction: 0.2,
            low_confidence_anchors: Vec::new(),
            corrupt_depth_anchors: Vec::new(),
        }
    }
}

impl SequenceConfig {
    pub fn intrinsics(&self) -> Result<CameraIntrinsics> {
        CameraIntrinsics::new(
            self.focal,
            self.focal,
            self.width as f64 / 2.0,
            self.height as f64 / 2.0,
            self.width,
            self.height,
        )
    }

    /// World-to-camera pose of every frame: a slow dolly to the right and
    /// forward with a gentle yaw.
    pub fn poses(&self) -> Vec<RigidPose> {
        let n = self.frames.max(2) as f64 - 1.0;
        (0..self.frames)
            .map(|f| {
                let s = f as f64 / n;
                let center = Vector3::new(-0.6 + 1.2 * s, 0.05 * (f as f64 / 15.0).sin(), 0.6 * s);
                let yaw = 0.15 * (std::f64::consts::TAU * s).sin();
                let r = RigidPose::from_axis_angle(Vector3::new(0.0, yaw, 0.0), Vector3::zeros());
                RigidPose::from_axis_angle(Vector3::new(0.0, yaw, 0.0), -(r.rotation() * center))
            })
            .collect()
    }
}

/// Writes one sequence under `root/name` and returns the sampled pairs' ground-truth relative poses.
pub fn write_sequence(root: &Path, name: &str, cfg: &SequenceConfig) -> Result<Vec<(usize, usize, RigidPose)>> {
    let k = cfg.intrinsics()?;
    let poses = cfg.poses();
    let scene = room_scene(k, &poses)?;
    let dir = root.join(name);
    for sub in ["frames", "depth", "matches"] {
        fs::create_dir_all(dir.join(sub)).map_err(|e| Error::io(dir.join(sub), e))?;
    }
    write_camera(&root.join(camera_path(name)), &CameraJson::new(&k, None))?;
    for f in 0..cfg.frames {
        let (image, _) = scene.render(f)?;
        write_image(&root.join(frame_path(name, f)), &image)?;
    }

    let frames: Vec<usize> = (0..cfg.frames).collect();
    let seq_seed = sequence_seed(cfg.sampling.seed, name);
    let pairs = sample_pairs(
        &frames,
        &PairSampling {
            seed: seq_seed,
            ..cfg.sampling
        },
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(seq_seed ^ 0x5eed);
    let noise = Normal::new(0.0, cfg.noise_sigma.max(0.0)).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut anchors_written = Vec::new();
    let mut truth = Vec::new();
    for pair in pairs {
        let (i, j) = (pair.frame_i, pair.frame_j);
        let (_, depth) = scene.render(i)?;
        if !anchors_written.contains(&i) {
            let ordinal = anchors_written.len();
            let level = if cfg.low_confidence_anchors.contains(&ordinal) { 0.3 } else { 0.9 };
            let (w, h) = (cfg.width, cfg.height);
            let conf = (0..w * h)
                .map(|n| level + 0.05 * ((n % w) as f64 / w as f64 - (n / w) as f64 / h as f64))
                .collect();
            let path = root.join(depth_path(name, i));
            write_depth(&path, &depth.clone().with_confidence(conf)?)?;
            if cfg.corrupt_depth_anchors.contains(&ordinal) {
                let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
                fs::write(&path, &bytes[..bytes.len() / 2]).map_err(|e| Error::io(&path, e))?;
            }
            anchors_written.push(i);
        }
        let rel = scene.relative_pose(i, j)?;
        let mut matches = Vec::new();
        for r in (0..cfg.height).step_by(cfg.match_step.max(1)) {
            for c in (0..cfg.width).step_by(cfg.match_step.max(1)) {
                let Some(d) = depth.get(c, r) else { continue };
                let x = PixelCoord::cell_center(c, r);
                let p = rel.transform_point(&k.unproject(x, d));
                if p.z <= 0.0 {
                    continue;
                }
                let y = k.project(&p);
                if !k.contains(y) {
                    continue;
                }
                let target = if rng.random::<f64>() < cfg.outlier_fraction {
                    PixelCoord::new(rng.random::<f64>() * cfg.width as f64, rng.random::<f64>() * cfg.height as f64)
                } else {
                    PixelCoord::new(y.u + noise.sample(&mut rng), y.v + noise.sample(&mut rng))
                };
                matches.push(PixelMatch {
                    source: x,
                    target,
                    weight: 1.0,
                });
            }
        }
        write_matches(&root.join(matches_path(name, pair)), &matches)?;
        truth.push((i, j, rel));
    }
    Ok(truth)
}

/// The bundled pipeline fixture: a clean sequence with one low-confidence
/// anchor and a second sequence with one corrupt depth file.
pub fn fixture_sequences() -> Vec<(&'static str, SequenceConfig)> {
    vec![
        (
            "seq_a",
            SequenceConfig {
                low_confidence_anchors: vec![1],
                ..Default::default()
            },
        ),
        (
            "seq_b",
            SequenceConfig {
                frames: 100,
                corrupt_depth_anchors: vec![0],
                ..Default::default()
            },
        ),
    ]
}

pub fn write_fixture_dataset(root: &Path) -> Result<()> {
    for (name, cfg) in fixture_sequences() {
        write_sequence(root, name, &cfg)?;
    }
    Ok(())
}

/// Writes the two-plane scene: both views, source depth, the camera file
/// (intrinsics plus the source-to-target pose) and the exact occlusion mask.
pub fn write_two_plane(dir: &Path, cfg: &TwoPlaneConfig) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let scene = two_plane_scene(cfg);
    let (img0, depth0) = scene.render(0)?;
    let (img1, depth1) = scene.render(1)?;
    let (_, mask) = scene.bruteforce_warp(0, 1)?;
    write_image(&dir.join("view0.png"), &img0)?;
    write_image(&dir.join("view1.png"), &img1)?;
    write_depth(&dir.join("depth0.dpt"), &depth0)?;
    write_depth(&dir.join("depth1.dpt"), &depth1)?;
    write_mask(&dir.join("mask_oracle.png"), &mask)?;
    write_camera(
        &dir.join("camera.json"),
        &CameraJson::new(&cfg.intrinsics(), Some(&scene.relative_pose(0, 1)?)),
    )
}
