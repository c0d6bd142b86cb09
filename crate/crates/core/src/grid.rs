//! Dense per-pixel containers shared by every module.

use crate::error::{Error, Result};

/// H×W×C real grid, row-major with interleaved channels.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl FeatureGrid {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || channels == 0 {
            return Err(Error::ShapeMismatch(format!(
                "feature grid needs positive dimensions, got {width}x{height}x{channels}"
            )));
        }
        if data.len() != width * height * channels {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {width}x{height}x{channels} grid",
                data.len()
            )));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("feature grid"));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        }
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, &mut [f64]),
    ) -> Self {
        let mut g = Self::zeros(width, height, channels);
        for row in 0..height {
            for col in 0..width {
                f(col, row, g.pixel_mut(col, row));
            }
        }
        g
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn pixel(&self, col: usize, row: usize) -> &[f64] {
        let o = (row * self.width + col) * self.channels;
        &self.data[o..o + self.channels]
    }

    pub fn pixel_mut(&mut self, col: usize, row: usize) -> &mut [f64] {
        let o = (row * self.width + col) * self.channels;
        &mut self.data[o..o + self.channels]
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Single-channel grid holding the per-pixel channel sum.
    pub fn channel_sum(&self) -> FeatureGrid {
        let data = self
            .data
            .chunks_exact(self.channels)
            .map(|px| px.iter().sum())
            .collect();
        FeatureGrid {
            width: self.width,
            height: self.height,
            channels: 1,
            data,
        }
    }

    /// Bilinear sample at a continuous pixel coordinate (cell centers at +0.5).
    ///
    /// Returns `None` when the location is outside the half-pixel border.
    /// Reads beyond the outermost centers clamp to the edge cell.
    pub fn sample_bilinear(&self, u: f64, v: f64, out: &mut [f64]) -> Option<()> {
        let (w, h) = (self.width as f64, self.height as f64);
        if !(u >= 0.0 && v >= 0.0 && u <= w && v <= h) {
            return None;
        }
        let x = (u - 0.5).clamp(0.0, w - 1.0);
        let y = (v - 0.5).clamp(0.0, h - 1.0);
        let x0 = (x.floor() as usize).min(self.width.saturating_sub(2));
        let y0 = (y.floor() as usize).min(self.height.saturating_sub(2));
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let ax = x - x0 as f64;
        let ay = y - y0 as f64;
        let taps = [
            (x0, y0, (1.0 - ax) * (1.0 - ay)),
            (x1, y0, ax * (1.0 - ay)),
            (x0, y1, (1.0 - ax) * ay),
            (x1, y1, ax * ay),
        ];
        out.iter_mut().for_each(|o| *o = 0.0);
        for (c, r, wt) in taps {
            if wt == 0.0 {
                continue;
            }
            for (o, s) in out.iter_mut().zip(self.pixel(c, r)) {
                *o += wt * s;
            }
        }
        Some(())
    }

    /// Block-average downscale by an integer factor.
    pub fn downscaled(&self, factor: usize) -> Result<FeatureGrid> {
        check_factor(factor, self.width, self.height)?;
        let (w, h) = (self.width / factor, self.height / factor);
        let n = (factor * factor) as f64;
        Ok(FeatureGrid::from_fn(w, h, self.channels, |c, r, px| {
            for dy in 0..factor {
                for dx in 0..factor {
                    for (o, s) in px.iter_mut().zip(self.pixel(c * factor + dx, r * factor + dy)) {
                        *o += s / n;
                    }
                }
            }
        }))
    }
}

/// Per-pixel depth with validity and optional confidence.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    width: usize,
    height: usize,
    values: Vec<f64>,
    valid: Vec<bool>,
    confidence: Option<Vec<f64>>,
}

impl DepthMap {
    /// Pixels with non-finite or non-positive depth are marked invalid.
    pub fn from_values(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        let valid = values.iter().map(|d| d.is_finite() && *d > 0.0).collect();
        Self::new(width, height, values, valid, None)
    }

    pub fn new(
        width: usize,
        height: usize,
        values: Vec<f64>,
        valid: Vec<bool>,
        confidence: Option<Vec<f64>>,
    ) -> Result<Self> {
        let n = width * height;
        if n == 0 || values.len() != n || valid.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "depth map {width}x{height} with {} values / {} flags",
                values.len(),
                valid.len()
            )));
        }
        if values
            .iter()
            .zip(&valid)
            .any(|(d, ok)| *ok && !(d.is_finite() && *d > 0.0))
        {
            return Err(Error::InvalidArgument(
                "valid depth pixels must be finite and positive".into(),
            ));
        }
        if let Some(c) = &confidence {
            if c.len() != n {
                return Err(Error::ShapeMismatch("confidence plane size".into()));
            }
            if c.iter().any(|x| !(0.0..=1.0).contains(x)) {
                return Err(Error::InvalidArgument("confidence outside [0, 1]".into()));
            }
        }
        Ok(Self {
            width,
            height,
            values,
            valid,
            confidence,
        })
    }

    pub fn constant(width: usize, height: usize, depth: f64) -> Result<Self> {
        Self::from_values(width, height, vec![depth; width * height])
    }

    pub fn with_confidence(mut self, confidence: Vec<f64>) -> Result<Self> {
        let (w, h) = self.dims();
        self = Self::new(w, h, self.values, self.valid, Some(confidence))?;
        Ok(self)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    pub fn confidence(&self) -> Option<&[f64]> {
        self.confidence.as_deref()
    }

    /// Depth at a grid cell, `None` when invalid.
    pub fn get(&self, col: usize, row: usize) -> Option<f64> {
        let i = row * self.width + col;
        self.valid[i].then_some(self.values[i])
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    /// Median over valid pixels (lower median for even counts).
    pub fn median_valid(&self) -> Option<f64> {
        let mut v: Vec<f64> = self
            .values
            .iter()
            .zip(&self.valid)
            .filter_map(|(d, ok)| ok.then_some(*d))
            .collect();
        if v.is_empty() {
            return None;
        }
        let mid = (v.len() - 1) / 2;
        let (_, m, _) = v.select_nth_unstable_by(mid, f64::total_cmp);
        Some(*m)
    }

    /// Mean confidence over valid pixels.
    pub fn mean_confidence(&self) -> Option<f64> {
        let conf = self.confidence.as_ref()?;
        let (sum, n) = conf
            .iter()
            .zip(&self.valid)
            .filter(|(_, ok)| **ok)
            .fold((0.0, 0usize), |(s, n), (c, _)| (s + c, n + 1));
        Some(if n == 0 { 0.0 } else { sum / n as f64 })
    }

    /// Block downscale: mean of valid depths per block; a block without valid pixels is invalid.
    pub fn downscaled(&self, factor: usize) -> Result<DepthMap> {
        check_factor(factor, self.width, self.height)?;
        let (w, h) = (self.width / factor, self.height / factor);
        let mut values = vec![0.0; w * h];
        let mut valid = vec![false; w * h];
        let mut conf = self.confidence.as_ref().map(|_| vec![0.0; w * h]);
        for r in 0..h {
            for c in 0..w {
                let (mut s, mut cs, mut n) = (0.0, 0.0, 0usize);
                for dy in 0..factor {
                    for dx in 0..factor {
                        let i = (r * factor + dy) * self.width + c * factor + dx;
                        if self.valid[i] {
                            s += self.values[i];
                            if let Some(cf) = &self.confidence {
                                cs += cf[i];
                            }
                            n += 1;
                        }
                    }
                }
                if n > 0 {
                    values[r * w + c] = s / n as f64;
                    valid[r * w + c] = true;
                    if let Some(cf) = conf.as_mut() {
                        cf[r * w + c] = cs / n as f64;
                    }
                }
            }
        }
        DepthMap::new(w, h, values, valid, conf)
    }

    /// Depth values as a one-channel grid, invalid pixels set to zero.
    pub fn to_feature_grid(&self) -> FeatureGrid {
        let data = self
            .values
            .iter()
            .zip(&self.valid)
            .map(|(d, ok)| if *ok { *d } else { 0.0 })
            .collect();
        FeatureGrid {
            width: self.width,
            height: self.height,
            channels: 1,
            data,
        }
    }
}

/// Hole indicator for a warped grid: `true` where no source pixel landed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OcclusionMask {
    width: usize,
    height: usize,
    holes: Vec<bool>,
}

impl OcclusionMask {
    pub fn new(width: usize, height: usize, holes: Vec<bool>) -> Result<Self> {
        if holes.len() != width * height {
            return Err(Error::ShapeMismatch(format!(
                "{} mask entries for {width}x{height}",
                holes.len()
            )));
        }
        Ok(Self {
            width,
            height,
            holes,
        })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            holes: vec![false; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn holes(&self) -> &[bool] {
        &self.holes
    }

    pub(crate) fn holes_mut(&mut self) -> &mut [bool] {
        &mut self.holes
    }

    pub fn is_hole(&self, col: usize, row: usize) -> bool {
        self.holes[row * self.width + col]
    }

    pub fn set(&mut self, col: usize, row: usize, hole: bool) {
        self.holes[row * self.width + col] = hole;
    }

    pub fn hole_count(&self) -> usize {
        self.holes.iter().filter(|h| **h).count()
    }

    pub fn is_superset_of(&self, other: &OcclusionMask) -> bool {
        self.dims() == other.dims() && self.holes.iter().zip(&other.holes).all(|(a, b)| *a || !*b)
    }

    /// Intersection over union of the hole sets. Two empty masks have IoU 1.
    pub fn iou(&self, other: &OcclusionMask) -> f64 {
        let (mut inter, mut union) = (0usize, 0usize);
        for (a, b) in self.holes.iter().zip(&other.holes) {
            inter += (*a && *b) as usize;
            union += (*a || *b) as usize;
        }
        if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        }
    }

    /// Block downscale: a block is a hole if any of its pixels is.
    pub fn downscaled(&self, factor: usize) -> Result<OcclusionMask> {
        check_factor(factor, self.width, self.height)?;
        let (w, h) = (self.width / factor, self.height / factor);
        let mut out = OcclusionMask::empty(w, h);
        for r in 0..h {
            for c in 0..w {
                let any = (0..factor)
                    .any(|dy| (0..factor).any(|dx| self.is_hole(c * factor + dx, r * factor + dy)));
                out.set(c, r, any);
            }
        }
        Ok(out)
    }
}

fn check_factor(factor: usize, width: usize, height: usize) -> Result<()> {
    if factor == 0 || width / factor == 0 || height / factor == 0 {
        return Err(Error::InvalidArgument(format!(
            "cannot downscale {width}x{height} by {factor}"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn feature_grid_rejects_bad_shapes() {
        assert!(FeatureGrid::new(0, 1, 1, vec![]).is_err());
        assert!(FeatureGrid::new(2, 2, 1, vec![0.0; 3]).is_err());
        assert!(FeatureGrid::new(1, 1, 1, vec![f64::NAN]).is_err());
    }

    #[test]
    fn bilinear_reproduces_centers_and_midpoints() {
        let g = FeatureGrid::new(2, 2, 1, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let mut o = [0.0];
        g.sample_bilinear(0.5, 0.5, &mut o).unwrap();
        assert_eq!(o[0], 0.0);
        g.sample_bilinear(1.5, 1.5, &mut o).unwrap();
        assert_eq!(o[0], 3.0);
        g.sample_bilinear(1.0, 1.0, &mut o).unwrap();
        assert!((o[0] - 1.5).abs() < 1e-15);
        assert!(g.sample_bilinear(2.1, 1.0, &mut o).is_none());
    }

    #[test]
    fn depth_validity_and_stats() {
        let d = DepthMap::from_values(2, 2, vec![1.0, -1.0, f64::NAN, 3.0]).unwrap();
        assert_eq!(d.valid(), &[true, false, false, true]);
        assert_eq!(d.median_valid(), Some(1.0));
        assert!(d.mean_confidence().is_none());
        let d = d.with_confidence(vec![0.5, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(d.mean_confidence(), Some(0.75));
        assert!(DepthMap::from_values(1, 1, vec![1.0])
            .unwrap()
            .with_confidence(vec![1.5])
            .is_err());
    }

    #[test]
    fn mask_downscale_is_any() {
        let mut m = OcclusionMask::empty(4, 4);
        m.set(3, 0, true);
        let d = m.downscaled(2).unwrap();
        assert_eq!(d.holes(), &[false, true, false, false]);
    }
}
