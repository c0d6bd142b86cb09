//! Python bindings. Images are nested lists indexed `[row][col][channel]`,
//! depth maps and masks `[row][col]`; anything with `tolist()` output works.

use nalgebra::{DMatrix, Matrix3, Point3, Vector3};
use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;

use warpkit::attention::{augmented_attention as attention_core, AttentionConfig};
use warpkit::coordembed::{self, CoordinateMap};
use warpkit::datapipe::{self, ManifestConfig, PairSampling};
use warpkit::geometry::{self, CameraIntrinsics, PixelCoord, RigidPose};
use warpkit::grid::{DepthMap, FeatureGrid, OcclusionMask};
use warpkit::posealign::{self, Correspondence, RansacOptions};
use warpkit::warpcore::{self, WarpMode};
use warpkit::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyOSError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn shape_err(what: &str) -> Error {
    Error::ShapeMismatch(format!("{what} rows must all have the same length"))
}

pub fn grid_from_nested(rows: Vec<Vec<Vec<f64>>>) -> Result<FeatureGrid, Error> {
    let h = rows.len();
    let w = rows.first().map_or(0, Vec::len);
    let c = rows.first().and_then(|r| r.first()).map_or(0, Vec::len);
    let mut data = Vec::with_capacity(w * h * c);
    for row in rows {
        if row.len() != w {
            return Err(shape_err("image"));
        }
        for px in row {
            if px.len() != c {
                return Err(Error::ShapeMismatch("pixels must all have the same channel count".into()));
            }
            data.extend(px);
        }
    }
    FeatureGrid::new(w, h, c, data)
}

pub fn grid_to_nested(grid: &FeatureGrid) -> Vec<Vec<Vec<f64>>> {
    (0..grid.height())
        .map(|r| (0..grid.width()).map(|c| grid.pixel(c, r).to_vec()).collect())
        .collect()
}

fn flatten<T: Copy>(rows: &[Vec<T>], what: &str) -> Result<(usize, usize, Vec<T>), Error> {
    let h = rows.len();
    let w = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != w) {
        return Err(shape_err(what));
    }
    Ok((w, h, rows.concat()))
}

/// Non-positive or non-finite entries become invalid pixels.
pub fn depth_from_nested(rows: Vec<Vec<f64>>) -> Result<DepthMap, Error> {
    let (w, h, values) = flatten(&rows, "depth")?;
    DepthMap::from_values(w, h, values)
}

pub fn mask_from_nested(rows: Vec<Vec<bool>>) -> Result<OcclusionMask, Error> {
    let (w, h, holes) = flatten(&rows, "mask")?;
    OcclusionMask::new(w, h, holes)
}

pub fn mask_to_nested(mask: &OcclusionMask) -> Vec<Vec<bool>> {
    mask.holes().chunks(mask.width()).map(<[bool]>::to_vec).collect()
}

fn matrix_from_rows(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>, Error> {
    let (d, n, data) = flatten(rows, what)?;
    Ok(DMatrix::from_row_slice(n, d, &data))
}

fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Pinhole intrinsics in pixels for a `width` x `height` image.
#[pyclass(name = "Intrinsics", frozen, from_py_object)]
#[derive(Clone)]
pub struct PyIntrinsics(CameraIntrinsics);

#[pymethods]
impl PyIntrinsics {
    #[new]
    fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> PyResult<Self> {
        CameraIntrinsics::new(fx, fy, cx, cy, width, height).map(Self).map_err(py_err)
    }

    #[getter]
    fn fx(&self) -> f64 {
        self.0.fx
    }
    #[getter]
    fn fy(&self) -> f64 {
        self.0.fy
    }
    #[getter]
    fn cx(&self) -> f64 {
        self.0.cx
    }
    #[getter]
    fn cy(&self) -> f64 {
        self.0.cy
    }
    #[getter]
    fn width(&self) -> usize {
        self.0.width
    }
    #[getter]
    fn height(&self) -> usize {
        self.0.height
    }

    fn project(&self, point: [f64; 3]) -> (f64, f64) {
        let x = self.0.project(&Point3::from(point));
        (x.u, x.v)
    }

    fn unproject(&self, u: f64, v: f64, depth: f64) -> [f64; 3] {
        self.0.unproject(PixelCoord::new(u, v), depth).coords.into()
    }

    fn downscaled(&self, factor: usize) -> PyResult<Self> {
        self.0.downscaled(factor).map(Self).map_err(py_err)
    }

    fn __repr__(&self) -> String {
        let k = &self.0;
        format!(
            "Intrinsics(fx={}, fy={}, cx={}, cy={}, width={}, height={})",
            k.fx, k.fy, k.cx, k.cy, k.width, k.height
        )
    }
}

/// Rigid transform from camera-i to camera-j coordinates.
#[pyclass(name = "Pose", frozen, from_py_object)]
#[derive(Clone)]
pub struct PyPose(RigidPose);

#[pymethods]
impl PyPose {
    /// `rotation` is 3x3 (nested, row-major) and must be orthonormal with determinant 1.
    #[new]
    fn new(rotation: [[f64; 3]; 3], translation: [f64; 3]) -> PyResult<Self> {
        let r = Matrix3::from_fn(|i, j| rotation[i][j]);
        RigidPose::new(r, Vector3::from(translation)).map(Self).map_err(py_err)
    }

    #[staticmethod]
    fn identity() -> Self {
        Self(RigidPose::identity())
    }

    #[staticmethod]
    #[pyo3(signature = (axis_angle, translation = [0.0; 3]))]
    fn from_axis_angle(axis_angle: [f64; 3], translation: [f64; 3]) -> Self {
        Self(RigidPose::from_axis_angle(Vector3::from(axis_angle), Vector3::from(translation)))
    }

    #[getter]
    fn rotation(&self) -> [[f64; 3]; 3] {
        let r = self.0.rotation();
        std::array::from_fn(|i| std::array::from_fn(|j| r[(i, j)]))
    }

    #[getter]
    fn translation(&self) -> [f64; 3] {
        (*self.0.translation()).into()
    }

    fn axis_angle(&self) -> [f64; 3] {
        self.0.axis_angle().into()
    }

    fn inverse(&self) -> Self {
        Self(self.0.inverse())
    }

    /// `self` after `other`.
    fn compose(&self, other: &PyPose) -> Self {
        Self(self.0.compose(&other.0))
    }

    fn transform_point(&self, point: [f64; 3]) -> [f64; 3] {
        self.0.transform_point(&Point3::from(point)).coords.into()
    }

    /// (rotation angle in radians, translation distance) to `other`.
    fn distance(&self, other: &PyPose) -> (f64, f64) {
        self.0.distance(&other.0)
    }

    fn __repr__(&self) -> String {
        format!("Pose(axis_angle={:?}, translation={:?})", self.axis_angle(), self.translation())
    }
}

/// Pixel (u, v) at z-depth `depth` in camera i, seen in camera j.
#[pyfunction]
fn reproject(u: f64, v: f64, depth: f64, pose: &PyPose, k: &PyIntrinsics) -> PyResult<(f64, f64)> {
    let x = geometry::reproject(PixelCoord::new(u, v), depth, &pose.0, &k.0).map_err(py_err)?;
    Ok((x.u, x.v))
}

type WarpOut = (Vec<Vec<Vec<f64>>>, Vec<Vec<bool>>);

/// Warps `image` into the target view. `mode` is "forward" or "inverse".
/// Returns (warped image, occlusion mask with True at holes).
#[pyfunction]
#[pyo3(signature = (image, depth, pose, k, mode = "forward"))]
fn warp(
    py: Python<'_>,
    image: Vec<Vec<Vec<f64>>>,
    depth: Vec<Vec<f64>>,
    pose: &PyPose,
    k: &PyIntrinsics,
    mode: &str,
) -> PyResult<WarpOut> {
    let mode = match mode {
        "forward" => WarpMode::Forward,
        "inverse" => WarpMode::Inverse,
        other => return Err(PyValueError::new_err(format!("unknown mode {other:?}"))),
    };
    let (pose, k) = (pose.0, k.0);
    py.detach(|| {
        let src = grid_from_nested(image)?;
        let depth = depth_from_nested(depth)?;
        let (out, mask) = warpcore::warp(mode, &src, &depth, &pose, &k)?;
        Ok((grid_to_nested(&out), mask_to_nested(&mask)))
    })
    .map_err(py_err)
}

/// Grows every hole component to at least `min_size` x `min_size`.
#[pyfunction]
#[pyo3(signature = (mask, min_size = warpcore::DEFAULT_MIN_OCCLUSION_SIZE))]
fn filter_occlusion_mask(mask: Vec<Vec<bool>>, min_size: usize) -> PyResult<Vec<Vec<bool>>> {
    let mask = mask_from_nested(mask).map_err(py_err)?;
    warpcore::filter_occlusion_mask(&mask, min_size)
        .map(|m| mask_to_nested(&m))
        .map_err(py_err)
}

/// `[row][col] = (x, y)` in [-1, 1], corners exact.
#[pyfunction]
fn canonical_coords(width: usize, height: usize) -> PyResult<Vec<Vec<Vec<f64>>>> {
    coordembed::canonical_coords(width, height)
        .map(|m| grid_to_nested(m.grid()))
        .map_err(py_err)
}

/// Sinusoidal encoding of a coordinate map: per axis, (sin, cos) for each band.
#[pyfunction]
#[pyo3(signature = (coords, bands = coordembed::DEFAULT_BANDS))]
fn fourier_encode(coords: Vec<Vec<Vec<f64>>>, bands: usize) -> PyResult<Vec<Vec<Vec<f64>>>> {
    let map = grid_from_nested(coords)
        .and_then(CoordinateMap::from_grid)
        .map_err(py_err)?;
    coordembed::fourier_encode(&map, bands)
        .map(|e| grid_to_nested(e.grid()))
        .map_err(py_err)
}

/// Source-view coordinate encoding warped into the target view.
/// Returns (embedding, occlusion mask) at `downscale` times lower resolution.
#[pyfunction]
#[pyo3(signature = (depth, pose, k, bands = coordembed::DEFAULT_BANDS, downscale = 1))]
fn warped_coord_embedding(
    py: Python<'_>,
    depth: Vec<Vec<f64>>,
    pose: &PyPose,
    k: &PyIntrinsics,
    bands: usize,
    downscale: usize,
) -> PyResult<WarpOut> {
    let (pose, k) = (pose.0, k.0);
    py.detach(|| {
        let depth = depth_from_nested(depth)?;
        let (emb, mask) = coordembed::warped_coord_embedding_scaled(&depth, &pose, &k, bands, downscale)?;
        Ok((grid_to_nested(emb.grid()), mask_to_nested(&mask)))
    })
    .map_err(py_err)
}

type AttentionOut = (Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<Vec<f64>>);

/// Joint attention of view-j tokens over view-i and view-j tokens.
/// `f_i` is M x D, `f_j` is N x D; returns (output N x D, a_cross N x M, a_self N x N).
#[pyfunction]
#[pyo3(signature = (f_i, f_j, heads = 1))]
fn augmented_attention(py: Python<'_>, f_i: Vec<Vec<f64>>, f_j: Vec<Vec<f64>>, heads: usize) -> PyResult<AttentionOut> {
    py.detach(|| {
        let (a, b) = (matrix_from_rows(&f_i, "f_i")?, matrix_from_rows(&f_j, "f_j")?);
        let res = attention_core(&a, &b, &AttentionConfig { heads, projections: None })?;
        Ok((matrix_to_rows(&res.output), matrix_to_rows(&res.a_cross), matrix_to_rows(&res.a_self)))
    })
    .map_err(py_err)
}

fn correspondences(points3d: &[[f64; 3]], points2d: &[[f64; 2]]) -> PyResult<Vec<Correspondence>> {
    if points3d.len() != points2d.len() {
        return Err(PyValueError::new_err("points3d and points2d differ in length"));
    }
    Ok(points3d
        .iter()
        .zip(points2d)
        .map(|(p, x)| Correspondence::new(Point3::from(*p), PixelCoord::new(x[0], x[1])))
        .collect())
}

/// Least-squares pose from 3D points in camera i and their pixels in view j.
#[pyfunction]
fn solve_pnp(points3d: Vec<[f64; 3]>, points2d: Vec<[f64; 2]>, k: &PyIntrinsics) -> PyResult<PyPose> {
    let corr = correspondences(&points3d, &points2d)?;
    posealign::solve_pnp(&corr, &k.0).map(PyPose).map_err(py_err)
}

/// Robust pose. Returns (pose, inlier indices, inlier RMS reprojection error).
#[pyfunction]
#[pyo3(signature = (points3d, points2d, k, threshold = posealign::DEFAULT_INLIER_THRESHOLD, confidence = posealign::DEFAULT_CONFIDENCE, seed = 0))]
fn pnp_ransac(
    py: Python<'_>,
    points3d: Vec<[f64; 3]>,
    points2d: Vec<[f64; 2]>,
    k: &PyIntrinsics,
    threshold: f64,
    confidence: f64,
    seed: u64,
) -> PyResult<(PyPose, Vec<usize>, f64)> {
    let corr = correspondences(&points3d, &points2d)?;
    let k = k.0;
    let opts = RansacOptions {
        inlier_threshold: threshold,
        confidence,
        seed,
        ..Default::default()
    };
    let est = py.detach(|| posealign::pnp_ransac_with(&corr, &k, &opts)).map_err(py_err)?;
    Ok((PyPose(est.pose), est.inliers, est.reprojection_rmse))
}

/// Frame pairs (i, j) with j - i within [min_interval, max_interval].
#[pyfunction]
#[pyo3(signature = (
    frames,
    min_interval = datapipe::DEFAULT_MIN_INTERVAL,
    max_interval = datapipe::DEFAULT_MAX_INTERVAL,
    stride = datapipe::DEFAULT_STRIDE,
    partners = datapipe::DEFAULT_PARTNERS,
    seed = 0,
))]
fn sample_pairs(
    frames: Vec<usize>,
    min_interval: usize,
    max_interval: usize,
    stride: usize,
    partners: usize,
    seed: u64,
) -> PyResult<Vec<(usize, usize)>> {
    let cfg = PairSampling {
        min_interval,
        max_interval,
        stride,
        partners,
        seed,
    };
    datapipe::sample_pairs(&frames, &cfg)
        .map(|p| p.into_iter().map(|p| (p.frame_i, p.frame_j)).collect())
        .map_err(py_err)
}

/// Builds the manifest for a dataset directory and returns it as JSON Lines.
/// Pairs that fail are left out and counted in the header stats.
#[pyfunction]
#[pyo3(signature = (root, seed = 0, conf_threshold = datapipe::DEFAULT_CONF_THRESHOLD))]
fn build_manifest(py: Python<'_>, root: std::path::PathBuf, seed: u64, conf_threshold: f64) -> PyResult<String> {
    let mut cfg = ManifestConfig {
        conf_threshold,
        ..Default::default()
    };
    cfg.sampling.seed = seed;
    py.detach(|| datapipe::build_manifest(&root, &cfg, None)?.manifest.to_jsonl())
        .map_err(py_err)
}

#[pymodule]
mod warpkit_py {
    #[pymodule_export]
    use super::{
        augmented_attention, build_manifest, canonical_coords, filter_occlusion_mask, fourier_encode, pnp_ransac,
        reproject, sample_pairs, solve_pnp, warp, warped_coord_embedding, PyIntrinsics, PyPose,
    };
}
