//! Canonical coordinate maps, Fourier features and the warped coordinate
//! embedding, plus the alternative conditioning signals it is compared with.

use crate::error::{Error, Result};
use crate::geometry::{plucker_rays, CameraIntrinsics, RayGrid, RigidPose};
use crate::grid::{DepthMap, FeatureGrid, OcclusionMask};
use crate::warpcore::forward_warp;

pub const DEFAULT_BANDS: usize = 6;

/// Ratio between image and latent resolution.
pub const LATENT_DOWNSCALE: usize = 8;

/// H×W×2 grid of `(x, y)` coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct CoordinateMap {
    grid: FeatureGrid,
}

impl CoordinateMap {
    pub fn from_grid(grid: FeatureGrid) -> Result<Self> {
        if grid.channels() != 2 {
            return Err(Error::ShapeMismatch(format!(
                "coordinate map needs 2 channels, got {}",
                grid.channels()
            )));
        }
        Ok(Self { grid })
    }

    pub fn grid(&self) -> &FeatureGrid {
        &self.grid
    }

    pub fn width(&self) -> usize {
        self.grid.width()
    }

    pub fn height(&self) -> usize {
        self.grid.height()
    }

    pub fn get(&self, col: usize, row: usize) -> (f64, f64) {
        let p = self.grid.pixel(col, row);
        (p[0], p[1])
    }
}

/// Fourier features: per axis and band, `sin` then `cos`; the x-axis block precedes the y-axis block.
#[derive(Debug, Clone, PartialEq)]
pub struct FourierEmbedding {
    grid: FeatureGrid,
    frequencies: Vec<f64>,
}

impl FourierEmbedding {
    pub fn grid(&self) -> &FeatureGrid {
        &self.grid
    }

    pub fn into_grid(self) -> FeatureGrid {
        self.grid
    }

    pub fn frequencies(&self) -> &[f64] {
        &self.frequencies
    }

    pub fn bands(&self) -> usize {
        self.frequencies.len()
    }

    pub fn channels(&self) -> usize {
        self.grid.channels()
    }
}

/// Linearly spaced grid from -1 to 1 per axis; corner cells hold exactly ±1.
pub fn canonical_coords(width: usize, height: usize) -> Result<CoordinateMap> {
    if width < 2 || height < 2 {
        return Err(Error::DegenerateSize { width, height });
    }
    let sx = 2.0 / (width - 1) as f64;
    let sy = 2.0 / (height - 1) as f64;
    let grid = FeatureGrid::from_fn(width, height, 2, |c, r, px| {
        px[0] = if c == width - 1 { 1.0 } else { -1.0 + sx * c as f64 };
        px[1] = if r == height - 1 { 1.0 } else { -1.0 + sy * r as f64 };
    });
    Ok(CoordinateMap { grid })
}

/// Octave schedule `2^k π`, `k = 0..bands`.
pub fn octave_frequencies(bands: usize) -> Vec<f64> {
    (0..bands)
        .map(|k| std::f64::consts::PI * (1u64 << k) as f64)
        .collect()
}

pub fn fourier_encode(coords: &CoordinateMap, bands: usize) -> Result<FourierEmbedding> {
    if bands == 0 {
        return Err(Error::InvalidArgument("at least one frequency band is required".into()));
    }
    fourier_encode_with(coords, &octave_frequencies(bands))
}

/// Encodes with an explicit frequency list.
pub fn fourier_encode_with(coords: &CoordinateMap, frequencies: &[f64]) -> Result<FourierEmbedding> {
    if frequencies.is_empty() || frequencies.iter().any(|f| !(f.is_finite() && *f > 0.0)) {
        return Err(Error::InvalidArgument("frequencies must be positive and finite".into()));
    }
    let l = frequencies.len();
    let grid = FeatureGrid::from_fn(coords.width(), coords.height(), 4 * l, |c, r, px| {
        let (x, y) = coords.get(c, r);
        for (axis, value) in [x, y].into_iter().enumerate() {
            for (k, f) in frequencies.iter().enumerate() {
                let (s, co) = (f * value).sin_cos();
                px[axis * 2 * l + 2 * k] = s;
                px[axis * 2 * l + 2 * k + 1] = co;
            }
        }
    });
    Ok(FourierEmbedding {
        grid,
        frequencies: frequencies.to_vec(),
    })
}

/// Encodes the canonical map of the source view and forward-warps the
/// encoding to the novel view. Holes are zero-filled.
pub fn warped_coord_embedding(
    depth: &DepthMap,
    pose: &RigidPose,
    k: &CameraIntrinsics,
    bands: usize,
) -> Result<(FourierEmbedding, OcclusionMask)> {
    let source = fourier_encode(&canonical_coords(k.width, k.height)?, bands)?;
    let frequencies = source.frequencies.clone();
    let (grid, mask) = forward_warp(&source.grid, depth, pose, k)?;
    Ok((FourierEmbedding { grid, frequencies }, mask))
}

/// [`warped_coord_embedding`] computed on a grid `downscale` times coarser than the depth map.
pub fn warped_coord_embedding_scaled(
    depth: &DepthMap,
    pose: &RigidPose,
    k: &CameraIntrinsics,
    bands: usize,
    downscale: usize,
) -> Result<(FourierEmbedding, OcclusionMask)> {
    if downscale == 1 {
        return warped_coord_embedding(depth, pose, k, bands);
    }
    warped_coord_embedding(&depth.downscaled(downscale)?, pose, &k.downscaled(downscale)?, bands)
}

/// Conditioning signals compared against each other in the ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConditionKind {
    WarpedCoords,
    WarpedDepth,
    WarpedImage,
    Plucker,
}

impl std::str::FromStr for ConditionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "warped_coords" | "warped-coords" => Ok(Self::WarpedCoords),
            "warped_depth" | "warped-depth" => Ok(Self::WarpedDepth),
            "warped_image" | "warped-image" => Ok(Self::WarpedImage),
            "plucker" => Ok(Self::Plucker),
            other => Err(Error::InvalidArgument(format!("unknown conditioning kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ConditionInputs<'a> {
    pub depth: Option<&'a DepthMap>,
    pub pose: Option<&'a RigidPose>,
    pub intrinsics: Option<&'a CameraIntrinsics>,
    pub image: Option<&'a FeatureGrid>,
    pub bands: Option<usize>,
}

/// Builds the conditioning grid for one ablation arm.
pub fn ablation_condition(kind: ConditionKind, inputs: &ConditionInputs<'_>) -> Result<FeatureGrid> {
    let pose = inputs.pose.ok_or(Error::MissingInput("pose"))?;
    let k = inputs.intrinsics.ok_or(Error::MissingInput("intrinsics"))?;
    if kind == ConditionKind::Plucker {
        return Ok(ray_grid_to_features(plucker_rays(k, pose)));
    }
    let depth = inputs.depth.ok_or(Error::MissingInput("depth"))?;
    match kind {
        ConditionKind::WarpedCoords => {
            let bands = inputs.bands.unwrap_or(DEFAULT_BANDS);
            Ok(warped_coord_embedding(depth, pose, k, bands)?.0.into_grid())
        }
        ConditionKind::WarpedDepth => Ok(forward_warp(&depth.to_feature_grid(), depth, pose, k)?.0),
        ConditionKind::WarpedImage => {
            let image = inputs.image.ok_or(Error::MissingInput("image"))?;
            Ok(forward_warp(image, depth, pose, k)?.0)
        }
        ConditionKind::Plucker => unreachable!(),
    }
}

pub fn ray_grid_to_features(rays: RayGrid) -> FeatureGrid {
    let (w, h) = (rays.width(), rays.height());
    FeatureGrid::new(w, h, RayGrid::CHANNELS, rays.into_data()).expect("ray grid is finite")
}
