//! Depth-based view warping: flow fields, forward (splatting) and inverse
//! (gathering) warps, and occlusion-mask post-processing.

use std::collections::VecDeque;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{reproject_with_depth, CameraIntrinsics, PixelCoord, RigidPose};
use crate::grid::{DepthMap, FeatureGrid, OcclusionMask};

/// Accumulated footprint weight below which a target pixel is a hole.
pub const WEIGHT_EPSILON: f64 = 1e-4;

/// Softmax-splatting sharpness numerator; `alpha = SOFTMAX_SCALE / median_depth`.
pub const SOFTMAX_SCALE: f64 = 10.0;

/// Minimum hole size (pixels per side) used by [`filter_occlusion_mask`] by default.
pub const DEFAULT_MIN_OCCLUSION_SIZE: usize = 8;

/// Footprint taps below this are rounding noise and ignored.
const FOOTPRINT_CUTOFF: f64 = 1e-9;

/// Largest gap (in pixels) closed when densifying the inverse flow.
const INVERSE_GAP_RADIUS: isize = 2;

/// Relative depth jump treated as a surface discontinuity during inverse-flow refinement.
const DEPTH_EDGE_RATIO: f64 = 0.05;

/// Per-source-pixel continuous target coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    width: usize,
    height: usize,
    target: Vec<PixelCoord>,
    target_depth: Vec<f64>,
    valid: Vec<bool>,
}

impl FlowField {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn target_coords(&self) -> &[PixelCoord] {
        &self.target
    }

    /// z-depth of each source point in the target camera.
    pub fn target_depth(&self) -> &[f64] {
        &self.target_depth
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    pub fn get(&self, col: usize, row: usize) -> Option<(PixelCoord, f64)> {
        let i = row * self.width + col;
        self.valid[i].then(|| (self.target[i], self.target_depth[i]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WarpMode {
    Forward,
    Inverse,
}

impl std::str::FromStr for WarpMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "forward" => Ok(WarpMode::Forward),
            "inverse" => Ok(WarpMode::Inverse),
            other => Err(Error::InvalidArgument(format!("unknown warp mode {other:?}"))),
        }
    }
}

fn check_dims(expected: (usize, usize), got: (usize, usize)) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}

/// Reprojects every valid source pixel center into the target view.
pub fn compute_flow(depth: &DepthMap, pose: &RigidPose, k: &CameraIntrinsics) -> Result<FlowField> {
    check_dims(k.dims(), depth.dims())?;
    let (w, h) = k.dims();
    let rows: Vec<Vec<(PixelCoord, f64, bool)>> = (0..h)
        .into_par_iter()
        .map(|row| {
            (0..w)
                .map(|col| {
                    let x = PixelCoord::cell_center(col, row);
                    let hit = depth
                        .get(col, row)
                        .and_then(|d| reproject_with_depth(x, d, pose, k).ok())
                        .filter(|(p, z)| p.is_finite() && z.is_finite());
                    match hit {
                        Some((p, z)) => (p, z, true),
                        None => (PixelCoord::new(f64::NAN, f64::NAN), f64::NAN, false),
                    }
                })
                .collect()
        })
        .collect();
    let mut flow = FlowField {
        width: w,
        height: h,
        target: Vec::with_capacity(w * h),
        target_depth: Vec::with_capacity(w * h),
        valid: Vec::with_capacity(w * h),
    };
    for (p, z, ok) in rows.into_iter().flatten() {
        flow.target.push(p);
        flow.target_depth.push(z);
        flow.valid.push(ok);
    }
    Ok(flow)
}

/// Knobs for softmax splatting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplatOptions {
    /// Depth sharpness; `None` selects `SOFTMAX_SCALE / median(source depth)`.
    pub alpha: Option<f64>,
    pub weight_epsilon: f64,
}

impl Default for SplatOptions {
    fn default() -> Self {
        Self {
            alpha: None,
            weight_epsilon: WEIGHT_EPSILON,
        }
    }
}

/// Result of a forward warp, including the raw footprint weight per target pixel.
#[derive(Debug, Clone)]
pub struct SplatOutput {
    pub grid: FeatureGrid,
    pub mask: OcclusionMask,
    /// Sum of bilinear footprint weights received by each target pixel.
    pub footprint: Vec<f64>,
}

#[inline]
fn footprint_taps(p: PixelCoord, w: usize, h: usize) -> impl Iterator<Item = (usize, f64)> {
    let x = p.u - 0.5;
    let y = p.v - 0.5;
    let x0 = x.floor();
    let y0 = y.floor();
    let ax = x - x0;
    let ay = y - y0;
    let taps = [
        (x0, y0, (1.0 - ax) * (1.0 - ay)),
        (x0 + 1.0, y0, ax * (1.0 - ay)),
        (x0, y0 + 1.0, (1.0 - ax) * ay),
        (x0 + 1.0, y0 + 1.0, ax * ay),
    ];
    taps.into_iter().filter_map(move |(c, r, b)| {
        let inside = c >= 0.0 && r >= 0.0 && c < w as f64 && r < h as f64;
        (inside && b > FOOTPRINT_CUTOFF).then(|| (r as usize * w + c as usize, b))
    })
}

/// Splats `source` along `flow` with bilinear footprints and softmax depth weighting.
///
/// Each contribution is weighted by `b * exp(-alpha * (z - z_min))`, where `b`
/// is the bilinear footprint weight and `z_min` the nearest depth landing on
/// that target pixel. Output is the weighted average; pixels whose summed
/// footprint is below `weight_epsilon` are holes and zero-filled. Accumulation
/// runs in source scan order, so the result does not depend on thread count.
pub fn splat(
    source: &FeatureGrid,
    flow: &FlowField,
    depth: &DepthMap,
    opts: SplatOptions,
) -> Result<SplatOutput> {
    check_dims((flow.width, flow.height), source.dims())?;
    let (w, h) = source.dims();
    let ch = source.channels();
    let alpha = match opts.alpha {
        Some(a) => a,
        None => depth.median_valid().map_or(0.0, |m| SOFTMAX_SCALE / m),
    };

    let mut z_min = vec![f64::INFINITY; w * h];
    for (i, &ok) in flow.valid.iter().enumerate() {
        if !ok {
            continue;
        }
        let z = flow.target_depth[i];
        for (t, _) in footprint_taps(flow.target[i], w, h) {
            if z < z_min[t] {
                z_min[t] = z;
            }
        }
    }

    let mut num = vec![0.0; w * h * ch];
    let mut den = vec![0.0; w * h];
    let mut footprint = vec![0.0; w * h];
    for (i, &ok) in flow.valid.iter().enumerate() {
        if !ok {
            continue;
        }
        let z = flow.target_depth[i];
        let value = &source.data()[i * ch..(i + 1) * ch];
        for (t, b) in footprint_taps(flow.target[i], w, h) {
            let wt = b * (-alpha * (z - z_min[t])).exp();
            footprint[t] += b;
            den[t] += wt;
            for (acc, v) in num[t * ch..(t + 1) * ch].iter_mut().zip(value) {
                *acc += wt * v;
            }
        }
    }

    let mut grid = FeatureGrid::zeros(w, h, ch);
    let mut mask = OcclusionMask::empty(w, h);
    let out = grid.data_mut();
    for t in 0..w * h {
        if footprint[t] < opts.weight_epsilon || den[t] <= 0.0 {
            mask.holes_mut()[t] = true;
            continue;
        }
        for c in 0..ch {
            out[t * ch + c] = num[t * ch + c] / den[t];
        }
    }
    Ok(SplatOutput {
        grid,
        mask,
        footprint,
    })
}

/// Forward (splatting) warp of `source` into the view `pose` maps to.
pub fn forward_warp(
    source: &FeatureGrid,
    depth: &DepthMap,
    pose: &RigidPose,
    k: &CameraIntrinsics,
) -> Result<(FeatureGrid, OcclusionMask)> {
    check_dims(k.dims(), source.dims())?;
    let flow = compute_flow(depth, pose, k)?;
    let out = splat(source, &flow, depth, SplatOptions::default())?;
    Ok((out.grid, out.mask))
}

/// Dense target-to-source map produced by densifying the forward flow.
#[derive(Debug, Clone)]
pub struct InverseFlow {
    width: usize,
    height: usize,
    source: Vec<Option<PixelCoord>>,
}

impl InverseFlow {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Continuous source coordinate for a target cell, if reachable.
    pub fn get(&self, col: usize, row: usize) -> Option<PixelCoord> {
        self.source[row * self.width + col]
    }
}

/// Inverts a forward flow.
///
/// Source pixels are splatted to the target cell they land in, nearest depth
/// winning. Gaps of at most two pixels are closed from the nearest claimed
/// neighbour. Each seed is then refined by Newton iteration on the bilinearly
/// interpolated forward flow so that it maps exactly onto the target center,
/// as long as the iteration stays on a depth-continuous patch.
pub fn invert_flow(flow: &FlowField) -> InverseFlow {
    let (w, h) = (flow.width, flow.height);
    let mut zbuf = vec![f64::INFINITY; w * h];
    let mut owner: Vec<Option<usize>> = vec![None; w * h];
    for (i, &ok) in flow.valid.iter().enumerate() {
        if !ok {
            continue;
        }
        let p = flow.target[i];
        let (c, r) = (p.u.floor(), p.v.floor());
        if c < 0.0 || r < 0.0 || c >= w as f64 || r >= h as f64 {
            continue;
        }
        let t = r as usize * w + c as usize;
        let z = flow.target_depth[i];
        if z < zbuf[t] {
            zbuf[t] = z;
            owner[t] = Some(i);
        }
    }

    let mut offsets: Vec<(isize, isize)> = (-INVERSE_GAP_RADIUS..=INVERSE_GAP_RADIUS)
        .flat_map(|dy| (-INVERSE_GAP_RADIUS..=INVERSE_GAP_RADIUS).map(move |dx| (dx, dy)))
        .filter(|&o| o != (0, 0))
        .collect();
    offsets.sort_by_key(|&(dx, dy)| (dx * dx + dy * dy, dy, dx));

    let seeds: Vec<Option<usize>> = (0..w * h)
        .map(|t| {
            owner[t].or_else(|| {
                let (c, r) = ((t % w) as isize, (t / w) as isize);
                offsets.iter().find_map(|&(dx, dy)| {
                    let (nc, nr) = (c + dx, r + dy);
                    if nc < 0 || nr < 0 || nc >= w as isize || nr >= h as isize {
                        return None;
                    }
                    owner[nr as usize * w + nc as usize]
                })
            })
        })
        .collect();

    let source = seeds
        .par_iter()
        .enumerate()
        .map(|(t, seed)| {
            seed.map(|s| {
                let target = PixelCoord::cell_center(t % w, t / w);
                refine_inverse(flow, s, target)
            })
        })
        .collect();
    InverseFlow {
        width: w,
        height: h,
        source,
    }
}

/// Bilinear interpolation of the forward flow inside one depth-continuous cell.
/// Returns the mapped point and the 2x2 Jacobian `[du/dx, du/dy, dv/dx, dv/dy]`.
fn interpolate_flow(flow: &FlowField, x: PixelCoord) -> Option<(PixelCoord, [f64; 4])> {
    let (w, h) = (flow.width, flow.height);
    let px = x.u - 0.5;
    let py = x.v - 0.5;
    if !(px >= 0.0 && py >= 0.0 && px <= (w - 1) as f64 && py <= (h - 1) as f64) || w < 2 || h < 2 {
        return None;
    }
    let x0 = (px.floor() as usize).min(w - 2);
    let y0 = (py.floor() as usize).min(h - 2);
    let ax = px - x0 as f64;
    let ay = py - y0 as f64;
    let idx = [
        y0 * w + x0,
        y0 * w + x0 + 1,
        (y0 + 1) * w + x0,
        (y0 + 1) * w + x0 + 1,
    ];
    if idx.iter().any(|&i| !flow.valid[i]) {
        return None;
    }
    let zs = idx.map(|i| flow.target_depth[i]);
    let (zlo, zhi) = zs
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), &z| (lo.min(z), hi.max(z)));
    if zhi - zlo > DEPTH_EDGE_RATIO * zlo {
        return None;
    }
    let [p00, p10, p01, p11] = idx.map(|i| flow.target[i]);
    let lerp = |a: f64, b: f64, c: f64, d: f64| {
        (1.0 - ax) * (1.0 - ay) * a + ax * (1.0 - ay) * b + (1.0 - ax) * ay * c + ax * ay * d
    };
    let value = PixelCoord::new(
        lerp(p00.u, p10.u, p01.u, p11.u),
        lerp(p00.v, p10.v, p01.v, p11.v),
    );
    let dx = |a: f64, b: f64, c: f64, d: f64| (1.0 - ay) * (b - a) + ay * (d - c);
    let dy = |a: f64, b: f64, c: f64, d: f64| (1.0 - ax) * (c - a) + ax * (d - b);
    let jac = [
        dx(p00.u, p10.u, p01.u, p11.u),
        dy(p00.u, p10.u, p01.u, p11.u),
        dx(p00.v, p10.v, p01.v, p11.v),
        dy(p00.v, p10.v, p01.v, p11.v),
    ];
    Some((value, jac))
}

fn refine_inverse(flow: &FlowField, seed: usize, target: PixelCoord) -> PixelCoord {
    let start = PixelCoord::cell_center(seed % flow.width, seed / flow.width);
    let mut x = start;
    for _ in 0..8 {
        let Some((fx, j)) = interpolate_flow(flow, x) else {
            break;
        };
        let (ru, rv) = (target.u - fx.u, target.v - fx.v);
        if ru.hypot(rv) < 1e-10 {
            break;
        }
        let det = j[0] * j[3] - j[1] * j[2];
        if det.abs() < 1e-12 {
            break;
        }
        let step = PixelCoord::new((j[3] * ru - j[1] * rv) / det, (-j[2] * ru + j[0] * rv) / det);
        let next = PixelCoord::new(x.u + step.u, x.v + step.v);
        if next.distance(&start) > 2.0 * INVERSE_GAP_RADIUS as f64 + 1.0 {
            break;
        }
        x = next;
    }
    x
}

/// Inverse (gathering) warp: bilinear lookups at the densified inverse flow.
pub fn inverse_warp(
    source: &FeatureGrid,
    depth: &DepthMap,
    pose: &RigidPose,
    k: &CameraIntrinsics,
) -> Result<(FeatureGrid, OcclusionMask)> {
    check_dims(k.dims(), source.dims())?;
    let flow = compute_flow(depth, pose, k)?;
    let inv = invert_flow(&flow);
    Ok(gather(source, &inv))
}

/// Samples `source` at each target cell's inverse-flow location.
pub fn gather(source: &FeatureGrid, inv: &InverseFlow) -> (FeatureGrid, OcclusionMask) {
    let (w, h, ch) = (inv.width, inv.height, source.channels());
    let rows: Vec<(Vec<f64>, Vec<bool>)> = (0..h)
        .into_par_iter()
        .map(|row| {
            let mut vals = vec![0.0; w * ch];
            let mut holes = vec![false; w];
            for col in 0..w {
                let out = &mut vals[col * ch..(col + 1) * ch];
                let hit = inv
                    .get(col, row)
                    .and_then(|x| source.sample_bilinear(x.u, x.v, out));
                if hit.is_none() {
                    out.iter_mut().for_each(|o| *o = 0.0);
                    holes[col] = true;
                }
            }
            (vals, holes)
        })
        .collect();
    let mut data = Vec::with_capacity(w * h * ch);
    let mut holes = Vec::with_capacity(w * h);
    for (v, m) in rows {
        data.extend(v);
        holes.extend(m);
    }
    (
        FeatureGrid::new(w, h, ch, data).expect("gather produces finite values"),
        OcclusionMask::new(w, h, holes).expect("mask size"),
    )
}

/// Warp in the requested mode.
pub fn warp(
    mode: WarpMode,
    source: &FeatureGrid,
    depth: &DepthMap,
    pose: &RigidPose,
    k: &CameraIntrinsics,
) -> Result<(FeatureGrid, OcclusionMask)> {
    match mode {
        WarpMode::Forward => forward_warp(source, depth, pose, k),
        WarpMode::Inverse => inverse_warp(source, depth, pose, k),
    }
}

/// Expands every 4-connected hole component whose bounding box is smaller than
/// `min_size` on either side to a `min_size`-wide window centered on the box.
///
/// Windows that would cross the border are shifted back inside the image, and
/// only shrink when the image itself is narrower than `min_size`. The output is
/// a superset of the input and the filter is idempotent.
pub fn filter_occlusion_mask(mask: &OcclusionMask, min_size: usize) -> Result<OcclusionMask> {
    if min_size == 0 {
        return Err(Error::InvalidArgument("min_size must be at least 1".into()));
    }
    let (w, h) = mask.dims();
    let mut out = mask.clone();
    let mut seen = vec![false; w * h];
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if !mask.holes()[start] || seen[start] {
            continue;
        }
        let (mut c0, mut r0, mut c1, mut r1) = (usize::MAX, usize::MAX, 0, 0);
        seen[start] = true;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            let (c, r) = (i % w, i / w);
            c0 = c0.min(c);
            c1 = c1.max(c);
            r0 = r0.min(r);
            r1 = r1.max(r);
            let mut visit = |j: usize| {
                if mask.holes()[j] && !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            };
            if c > 0 {
                visit(i - 1);
            }
            if c + 1 < w {
                visit(i + 1);
            }
            if r > 0 {
                visit(i - w);
            }
            if r + 1 < h {
                visit(i + w);
            }
        }
        let (bw, bh) = (c1 - c0 + 1, r1 - r0 + 1);
        if bw >= min_size && bh >= min_size {
            continue;
        }
        let (x0, x1) = expand_span(c0, c1, min_size, w);
        let (y0, y1) = expand_span(r0, r1, min_size, h);
        for r in y0..=y1 {
            for c in x0..=x1 {
                out.set(c, r, true);
            }
        }
    }
    Ok(out)
}

/// Grows `[lo, hi]` to at least `min` cells centered on the span, kept inside `[0, len)`.
fn expand_span(lo: usize, hi: usize, min: usize, len: usize) -> (usize, usize) {
    let size = hi - lo + 1;
    if size >= min {
        return (lo, hi);
    }
    let target = min.min(len);
    let extra = target - size;
    let start = (lo as isize - (extra / 2) as isize).max(0) as usize;
    let start = start.min(len - target);
    (start, start + target - 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;
    use proptest::prelude::*;

    fn cam(w: usize, h: usize) -> CameraIntrinsics {
        CameraIntrinsics::new(40.0, 40.0, w as f64 / 2.0, h as f64 / 2.0, w, h).unwrap()
    }

    fn ramp(w: usize, h: usize, ch: usize) -> FeatureGrid {
        FeatureGrid::from_fn(w, h, ch, |c, r, px| {
            for (k, v) in px.iter_mut().enumerate() {
                *v = (c as f64 * 0.37 + r as f64 * 0.11 + k as f64).sin();
            }
        })
    }

    #[test]
    fn identity_flow_and_warps() {
        let k = cam(12, 9);
        let depth = DepthMap::from_values(12, 9, (0..108).map(|i| 1.0 + i as f64 * 0.01).collect()).unwrap();
        let flow = compute_flow(&depth, &RigidPose::identity(), &k).unwrap();
        for r in 0..9 {
            for c in 0..12 {
                let (p, _) = flow.get(c, r).unwrap();
                assert!(p.distance(&PixelCoord::cell_center(c, r)) < 1e-12);
            }
        }
        let src = ramp(12, 9, 3);
        let (fw, fm) = forward_warp(&src, &depth, &RigidPose::identity(), &k).unwrap();
        assert_eq!(fm.hole_count(), 0);
        for (a, b) in fw.data().iter().zip(src.data()) {
            assert!((a - b).abs() < 1e-6);
        }
        let (iw, im) = inverse_warp(&src, &depth, &RigidPose::identity(), &k).unwrap();
        assert_eq!(im.hole_count(), 0);
        assert_eq!(iw.data(), src.data());
    }

    #[test]
    fn dimension_mismatch() {
        let k = cam(12, 9);
        let depth = DepthMap::constant(10, 9, 2.0).unwrap();
        assert!(matches!(
            compute_flow(&depth, &RigidPose::identity(), &k),
            Err(Error::DimensionMismatch { .. })
        ));
        let depth = DepthMap::constant(12, 9, 2.0).unwrap();
        assert!(forward_warp(&ramp(5, 5, 1), &depth, &RigidPose::identity(), &k).is_err());
    }

    #[test]
    fn moving_past_plane_invalidates_everything() {
        let k = cam(8, 6);
        let depth = DepthMap::constant(8, 6, 2.0).unwrap();
        let pose = RigidPose::from_translation(Vector3::new(0.0, 0.0, -3.0));
        let flow = compute_flow(&depth, &pose, &k).unwrap();
        assert!(flow.valid().iter().all(|v| !v));
        let (_, mask) = forward_warp(&ramp(8, 6, 1), &depth, &pose, &k).unwrap();
        assert_eq!(mask.hole_count(), 48);
    }

    #[test]
    fn subpixel_translation_conserves_footprint() {
        let (w, h) = (20, 16);
        let k = cam(w, h);
        let depth = DepthMap::constant(w, h, 2.0).unwrap();
        // 0.3 px right, 0.45 px down at depth 2 with f = 40
        let pose = RigidPose::from_translation(Vector3::new(0.3 * 2.0 / 40.0, 0.45 * 2.0 / 40.0, 0.0));
        let flow = compute_flow(&depth, &pose, &k).unwrap();
        let out = splat(&ramp(w, h, 1), &flow, &depth, SplatOptions::default()).unwrap();
        for r in 1..h - 1 {
            for c in 1..w - 1 {
                assert!((out.footprint[r * w + c] - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn splat_is_linear_in_channels() {
        let (w, h) = (16, 12);
        let k = cam(w, h);
        let depth = DepthMap::from_values(w, h, (0..w * h).map(|i| 2.0 + (i % 7) as f64 * 0.3).collect()).unwrap();
        let pose = RigidPose::from_axis_angle(Vector3::new(0.02, -0.05, 0.01), Vector3::new(0.1, 0.0, 0.05));
        let src = ramp(w, h, 4);
        let (warped, _) = forward_warp(&src, &depth, &pose, &k).unwrap();
        let (warped_sum, _) = forward_warp(&src.channel_sum(), &depth, &pose, &k).unwrap();
        let sum_of_warped = warped.channel_sum();
        for (a, b) in warped_sum.data().iter().zip(sum_of_warped.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn nearer_surface_wins_conflict() {
        // two source pixels land on the same target: near one should dominate
        let (w, h) = (4, 1);
        let k = CameraIntrinsics::new(10.0, 10.0, 2.0, 0.5, w, h).unwrap();
        let depth = DepthMap::from_values(w, h, vec![1.0, 1.0, 4.0, 4.0]).unwrap();
        let mut flow = compute_flow(&depth, &RigidPose::identity(), &k).unwrap();
        flow.target[2] = flow.target[1];
        let src = FeatureGrid::new(w, h, 1, vec![0.0, 1.0, 0.0, 0.0]).unwrap();
        let out = splat(&src, &flow, &depth, SplatOptions::default()).unwrap();
        let alpha = SOFTMAX_SCALE / 1.0;
        let bg = (-alpha * 3.0).exp();
        assert!((out.grid.pixel(1, 0)[0] - 1.0 / (1.0 + bg)).abs() < 1e-12);
    }

    #[test]
    fn mask_filter_examples() {
        let mut m = OcclusionMask::empty(32, 32);
        for r in 15..18 {
            for c in 15..18 {
                m.set(c, r, true);
            }
        }
        let f = filter_occlusion_mask(&m, 8).unwrap();
        assert_eq!(f.hole_count(), 64);
        assert!(f.is_superset_of(&m));
        assert!((13..21).all(|r| (13..21).all(|c| f.is_hole(c, r))));

        let mut big = OcclusionMask::empty(32, 32);
        for r in 3..13 {
            for c in 5..15 {
                big.set(c, r, true);
            }
        }
        assert_eq!(filter_occlusion_mask(&big, 8).unwrap(), big);
        let empty = OcclusionMask::empty(10, 7);
        assert_eq!(filter_occlusion_mask(&empty, 8).unwrap(), empty);
        assert!(filter_occlusion_mask(&empty, 0).is_err());
    }

    #[test]
    fn corner_holes_stay_inside_and_reach_full_size() {
        let mut m = OcclusionMask::empty(20, 20);
        m.set(0, 0, true);
        m.set(19, 19, true);
        let f = filter_occlusion_mask(&m, 8).unwrap();
        assert_eq!(f.hole_count(), 128);
        assert_eq!(filter_occlusion_mask(&f, 8).unwrap(), f);
        let mut tiny = OcclusionMask::empty(5, 3);
        tiny.set(2, 1, true);
        let f = filter_occlusion_mask(&tiny, 8).unwrap();
        assert_eq!(f.hole_count(), 15);
    }

    #[test]
    fn diagonal_pixels_are_separate_components() {
        let mut m = OcclusionMask::empty(40, 40);
        m.set(10, 10, true);
        m.set(11, 11, true);
        let f = filter_occlusion_mask(&m, 8).unwrap();
        // two overlapping 8x8 windows offset by one pixel
        assert_eq!(f.hole_count(), 81 - 2);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn mask_filter_monotone_and_idempotent(
            bits in prop::collection::vec(prop::bool::weighted(0.03), 24 * 18),
            min_size in 1usize..10,
        ) {
            let m = OcclusionMask::new(24, 18, bits).unwrap();
            let f = filter_occlusion_mask(&m, min_size).unwrap();
            prop_assert!(f.is_superset_of(&m));
            prop_assert_eq!(filter_occlusion_mask(&f, min_size).unwrap(), f);
        }
    }
}
