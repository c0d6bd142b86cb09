//! File formats.
//!
//! `DPT1`: 16-byte header (`b"DPT1"`, width, height, plane count, all u32
//! little-endian) followed by `planes` row-major f32 LE planes. Depth files
//! hold one plane, or two when a confidence plane follows the depth plane.
//! Embeddings store one plane per channel.
//!
//! `MCH1`: 8-byte header (`b"MCH1"`, record count u32 LE) followed by
//! `(u_i, v_i, u_j, v_j, weight)` f32 LE records.
//!
//! Masks are 8-bit grayscale PNGs with 255 marking a hole.

use std::fs;
use std::path::Path;

use image::{GrayImage, ImageBuffer, Luma, Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, PixelCoord, RigidPose};
use crate::grid::{DepthMap, FeatureGrid, OcclusionMask};
use crate::posealign::{PixelMatch, PoseEstimate};

const DPT_MAGIC: &[u8; 4] = b"DPT1";
const MCH_MAGIC: &[u8; 4] = b"MCH1";

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn open_image(path: &Path) -> Result<image::DynamicImage> {
    image::load_from_memory(&read_bytes(path)?).map_err(|e| Error::format(path, e.to_string()))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn u32_at(bytes: &[u8], offset: usize) -> u32 {
    u32::from_le_bytes(bytes[offset..offset + 4].try_into().unwrap())
}

fn f32_at(bytes: &[u8], offset: usize) -> f32 {
    f32::from_le_bytes(bytes[offset..offset + 4].try_into().unwrap())
}

/// Raw DPT1 contents: `planes` planes of `width * height` values each.
pub fn read_planes(path: &Path) -> Result<(usize, usize, Vec<Vec<f64>>)> {
    let bytes = read_bytes(path)?;
    if bytes.len() < 16 || &bytes[..4] != DPT_MAGIC {
        return Err(Error::format(path, "missing DPT1 header"));
    }
    let (w, h, planes) = (
        u32_at(&bytes, 4) as usize,
        u32_at(&bytes, 8) as usize,
        u32_at(&bytes, 12) as usize,
    );
    let n = w * h;
    if bytes.len() != 16 + 4 * n * planes {
        return Err(Error::format(
            path,
            format!("{w}x{h}x{planes} header but {} payload bytes", bytes.len() - 16),
        ));
    }
    let data = (0..planes)
        .map(|p| (0..n).map(|i| f32_at(&bytes, 16 + 4 * (p * n + i)) as f64).collect())
        .collect();
    Ok((w, h, data))
}

pub fn write_planes(path: &Path, width: usize, height: usize, planes: &[&[f64]]) -> Result<()> {
    let mut bytes = Vec::with_capacity(16 + planes.len() * width * height * 4);
    bytes.extend_from_slice(DPT_MAGIC);
    for v in [width, height, planes.len()] {
        bytes.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for plane in planes {
        debug_assert_eq!(plane.len(), width * height);
        for v in plane.iter() {
            bytes.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    write_bytes(path, &bytes)
}

/// Reads a DPT1 depth file; a second plane is taken as confidence.
pub fn read_depth(path: &Path) -> Result<DepthMap> {
    let (w, h, mut planes) = read_planes(path)?;
    let depth = match planes.len() {
        1 | 2 => DepthMap::from_values(w, h, planes.remove(0)),
        n => return Err(Error::format(path, format!("depth file has {n} planes"))),
    }
    .map_err(|e| Error::format(path, e.to_string()))?;
    match planes.pop() {
        Some(conf) => depth.with_confidence(conf).map_err(|e| Error::format(path, e.to_string())),
        None => Ok(depth),
    }
}

/// Invalid pixels are written as 0.
pub fn write_depth(path: &Path, depth: &DepthMap) -> Result<()> {
    let values: Vec<f64> = depth
        .values()
        .iter()
        .zip(depth.valid())
        .map(|(v, ok)| if *ok { *v } else { 0.0 })
        .collect();
    let mut planes: Vec<&[f64]> = vec![&values];
    if let Some(c) = depth.confidence() {
        planes.push(c);
    }
    write_planes(path, depth.width(), depth.height(), &planes)
}

/// 16-bit PNG depth: metric depth = stored value × `scale`; 0 marks invalid.
pub fn read_depth_png(path: &Path, scale: f64) -> Result<DepthMap> {
    if !(scale.is_finite() && scale > 0.0) {
        return Err(Error::InvalidArgument("depth scale must be positive".into()));
    }
    let img = open_image(path)?.into_luma16();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let values = img.pixels().map(|p| p.0[0] as f64 * scale).collect();
    DepthMap::from_values(w, h, values)
}

/// Loads any depth file by extension: `.png` uses `png_scale`, anything else is DPT1.
pub fn load_depth(path: &Path, png_scale: f64) -> Result<DepthMap> {
    match path.extension().and_then(|e| e.to_str()) {
        Some(e) if e.eq_ignore_ascii_case("png") => read_depth_png(path, png_scale),
        _ => read_depth(path),
    }
}

pub fn write_embedding(path: &Path, grid: &FeatureGrid) -> Result<()> {
    let c = grid.channels();
    let planes: Vec<Vec<f64>> = (0..c)
        .map(|ch| grid.data().iter().skip(ch).step_by(c).copied().collect())
        .collect();
    let refs: Vec<&[f64]> = planes.iter().map(|p| p.as_slice()).collect();
    write_planes(path, grid.width(), grid.height(), &refs)
}

pub fn read_embedding(path: &Path) -> Result<FeatureGrid> {
    let (w, h, planes) = read_planes(path)?;
    let c = planes.len();
    let mut data = vec![0.0; w * h * c];
    for (ch, plane) in planes.iter().enumerate() {
        for (i, v) in plane.iter().enumerate() {
            data[i * c + ch] = *v;
        }
    }
    FeatureGrid::new(w, h, c, data).map_err(|e| Error::format(path, e.to_string()))
}

/// Reads an 8-bit image as RGB in `[0, 1]`.
pub fn read_image(path: &Path) -> Result<FeatureGrid> {
    let img = open_image(path)?.into_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = img.as_raw().iter().map(|b| *b as f64 / 255.0).collect();
    FeatureGrid::new(w, h, 3, data)
}

/// Writes a 1- or 3-channel grid in `[0, 1]` as an 8-bit PNG.
pub fn write_image(path: &Path, grid: &FeatureGrid) -> Result<()> {
    let to_u8 = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    let (w, h) = (grid.width() as u32, grid.height() as u32);
    match grid.channels() {
        1 => GrayImage::from_fn(w, h, |x, y| Luma([to_u8(grid.pixel(x as usize, y as usize)[0])])).save(path).map_err(|e| Error::format(path, e.to_string()))?,
        3 => RgbImage::from_fn(w, h, |x, y| {
            let p = grid.pixel(x as usize, y as usize);
            Rgb([to_u8(p[0]), to_u8(p[1]), to_u8(p[2])])
        })
        .save(path).map_err(|e| Error::format(path, e.to_string()))?,
        c => return Err(Error::ShapeMismatch(format!("cannot write a {c}-channel image"))),
    }
    Ok(())
}

/// Any nonzero gray level counts as a hole.
pub fn read_mask(path: &Path) -> Result<OcclusionMask> {
    let img = open_image(path)?.into_luma8();
    let holes = img.pixels().map(|p| p.0[0] > 0).collect();
    OcclusionMask::new(img.width() as usize, img.height() as usize, holes)
}

pub fn write_mask(path: &Path, mask: &OcclusionMask) -> Result<()> {
    let img: ImageBuffer<Luma<u8>, Vec<u8>> =
        GrayImage::from_fn(mask.width() as u32, mask.height() as u32, |x, y| {
            Luma([if mask.is_hole(x as usize, y as usize) { 255 } else { 0 }])
        });
    img.save(path).map_err(|e| Error::format(path, e.to_string()))?;
    Ok(())
}

pub fn read_matches(path: &Path) -> Result<Vec<PixelMatch>> {
    let bytes = read_bytes(path)?;
    if bytes.len() < 8 || &bytes[..4] != MCH_MAGIC {
        return Err(Error::format(path, "missing MCH1 header"));
    }
    let n = u32_at(&bytes, 4) as usize;
    if bytes.len() != 8 + 20 * n {
        return Err(Error::format(path, format!("{n} records declared, {} bytes present", bytes.len() - 8)));
    }
    Ok((0..n)
        .map(|i| {
            let f = |k: usize| f32_at(&bytes, 8 + 20 * i + 4 * k) as f64;
            PixelMatch {
                source: PixelCoord::new(f(0), f(1)),
                target: PixelCoord::new(f(2), f(3)),
                weight: f(4),
            }
        })
        .collect())
}

pub fn write_matches(path: &Path, matches: &[PixelMatch]) -> Result<()> {
    let mut bytes = Vec::with_capacity(8 + 20 * matches.len());
    bytes.extend_from_slice(MCH_MAGIC);
    bytes.extend_from_slice(&(matches.len() as u32).to_le_bytes());
    for m in matches {
        for v in [m.source.u, m.source.v, m.target.u, m.target.v, m.weight] {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    write_bytes(path, &bytes)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseJson {
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
}

impl PoseJson {
    pub fn from_pose(pose: &RigidPose) -> Self {
        let t = pose.translation();
        Self {
            rotation: pose.rotation_row_major(),
            translation: [t.x, t.y, t.z],
        }
    }

    pub fn to_pose(&self) -> Result<RigidPose> {
        RigidPose::from_row_major(self.rotation, self.translation)
    }
}

/// Camera file: intrinsics plus an optional pose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraJson {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pose: Option<PoseJson>,
}

impl CameraJson {
    pub fn new(k: &CameraIntrinsics, pose: Option<&RigidPose>) -> Self {
        Self {
            fx: k.fx,
            fy: k.fy,
            cx: k.cx,
            cy: k.cy,
            width: k.width,
            height: k.height,
            pose: pose.map(PoseJson::from_pose),
        }
    }

    pub fn intrinsics(&self) -> Result<CameraIntrinsics> {
        CameraIntrinsics::new(self.fx, self.fy, self.cx, self.cy, self.width, self.height)
    }

    pub fn pose(&self) -> Result<Option<RigidPose>> {
        self.pose.as_ref().map(PoseJson::to_pose).transpose()
    }
}

pub fn read_camera(path: &Path) -> Result<CameraJson> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let cam: CameraJson = serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
    cam.intrinsics().map_err(|e| Error::format(path, e.to_string()))?;
    cam.pose().map_err(|e| Error::format(path, e.to_string()))?;
    Ok(cam)
}

pub fn write_camera(path: &Path, cam: &CameraJson) -> Result<()> {
    write_json(path, cam)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InlierSidecar {
    pub inliers: Vec<usize>,
    pub reprojection_rmse: f64,
}

/// Writes an estimate as a camera file for the target view plus an inlier sidecar.
pub fn write_pose_estimate(
    camera_path: &Path,
    sidecar_path: &Path,
    k: &CameraIntrinsics,
    estimate: &PoseEstimate,
) -> Result<()> {
    write_camera(camera_path, &CameraJson::new(k, Some(&estimate.pose)))?;
    write_json(
        sidecar_path,
        &InlierSidecar {
            inliers: estimate.inliers.clone(),
            reprojection_rmse: estimate.reprojection_rmse,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    #[test]
    fn depth_round_trip_with_confidence() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.dpt");
        let d = DepthMap::from_values(3, 2, vec![1.0, 2.5, f64::NAN, 4.0, -1.0, 0.5])
            .unwrap()
            .with_confidence(vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.75])
            .unwrap();
        write_depth(&p, &d).unwrap();
        assert_eq!(fs::metadata(&p).unwrap().len(), 16 + 2 * 6 * 4);
        let back = read_depth(&p).unwrap();
        assert_eq!(back.valid(), d.valid());
        assert_eq!(back.get(1, 0), Some(2.5));
        assert_eq!(back.get(2, 0), None);
        assert!((back.confidence().unwrap()[1] - 0.2).abs() < 1e-7);
    }

    #[test]
    fn truncated_depth_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.dpt");
        write_depth(&p, &DepthMap::constant(4, 4, 1.0).unwrap()).unwrap();
        let bytes = fs::read(&p).unwrap();
        fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(read_depth(&p), Err(Error::Format { .. })));
        fs::write(&p, b"JUNKJUNKJUNKJUNK").unwrap();
        assert!(matches!(read_depth(&p), Err(Error::Format { .. })));
    }

    #[test]
    fn embedding_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.dpt");
        let g = FeatureGrid::from_fn(4, 3, 5, |c, r, px| {
            for (k, v) in px.iter_mut().enumerate() {
                *v = (c * 100 + r * 10 + k) as f64 * 0.25;
            }
        });
        write_embedding(&p, &g).unwrap();
        assert_eq!(read_embedding(&p).unwrap(), g);
    }

    #[test]
    fn png_depth_scale() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.png");
        ImageBuffer::<Luma<u16>, Vec<u16>>::from_raw(2, 1, vec![0, 1500]).unwrap().save(&p).unwrap();
        let d = load_depth(&p, 0.001).unwrap();
        assert_eq!(d.get(0, 0), None);
        assert!((d.get(1, 0).unwrap() - 1.5).abs() < 1e-12);
    }

    #[test]
    fn image_and_mask_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let g = FeatureGrid::from_fn(5, 4, 3, |c, r, px| {
            px[0] = c as f64 / 4.0;
            px[1] = r as f64 / 3.0;
            px[2] = 1.0;
        });
        let p = dir.path().join("i.png");
        write_image(&p, &g).unwrap();
        let back = read_image(&p).unwrap();
        for (a, b) in back.data().iter().zip(g.data()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
        }
        let mut m = OcclusionMask::empty(5, 4);
        m.set(2, 1, true);
        m.set(4, 3, true);
        let p = dir.path().join("m.png");
        write_mask(&p, &m).unwrap();
        assert_eq!(read_mask(&p).unwrap(), m);
    }

    #[test]
    fn matches_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.mch");
        let ms = vec![
            PixelMatch {
                source: PixelCoord::new(1.5, 2.25),
                target: PixelCoord::new(3.0, 4.75),
                weight: 0.5,
            };
            3
        ];
        write_matches(&p, &ms).unwrap();
        assert_eq!(read_matches(&p).unwrap(), ms);
        fs::write(&p, b"MCH1\x05\0\0\0").unwrap();
        assert!(read_matches(&p).is_err());
    }

    #[test]
    fn camera_json() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("cam.json");
        let k = CameraIntrinsics::new(100.0, 90.0, 32.0, 24.0, 64, 48).unwrap();
        let pose = RigidPose::from_axis_angle(Vector3::new(0.1, -0.2, 0.05), Vector3::new(0.3, 0.0, -1.0));
        write_camera(&p, &CameraJson::new(&k, Some(&pose))).unwrap();
        let cam = read_camera(&p).unwrap();
        assert_eq!(cam.intrinsics().unwrap(), k);
        let (dr, dt) = cam.pose().unwrap().unwrap().distance(&pose);
        assert!(dr < 1e-12 && dt < 1e-12);

        fs::write(&p, r#"{"fx":1,"fy":1,"cx":0,"cy":0,"width":4,"height":4}"#).unwrap();
        assert!(read_camera(&p).unwrap().pose.is_none());
        fs::write(&p, r#"{"fx":-1,"fy":1,"cx":0,"cy":0,"width":4,"height":4}"#).unwrap();
        assert!(matches!(read_camera(&p), Err(Error::Format { .. })));
    }
}
