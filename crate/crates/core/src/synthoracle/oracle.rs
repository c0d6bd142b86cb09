//! Reference computations written against plain arrays, with no shared code
//! paths with the library implementations they check.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::geometry::{CameraIntrinsics, PixelCoord, RigidPose};
use crate::grid::{DepthMap, FeatureGrid, OcclusionMask};
use crate::posealign::Correspondence;

pub type Mat3 = [[f64; 3]; 3];
pub type Mat4 = [[f64; 4]; 4];

pub fn mat4_mul(a: &Mat4, b: &Mat4) -> Mat4 {
    let mut out = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            for k in 0..4 {
                out[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    out
}

pub fn mat4_vec(a: &Mat4, v: &[f64; 4]) -> [f64; 4] {
    let mut out = [0.0; 4];
    for i in 0..4 {
        for k in 0..4 {
            out[i] += a[i][k] * v[k];
        }
    }
    out
}

/// Gauss-Jordan inverse with partial pivoting.
pub fn mat4_inv(a: &Mat4) -> Option<Mat4> {
    let mut m = *a;
    let mut inv = [[0.0; 4]; 4];
    for (i, row) in inv.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for col in 0..4 {
        let pivot = (col..4).max_by(|&x, &y| m[x][col].abs().total_cmp(&m[y][col].abs()))?;
        if m[pivot][col].abs() < 1e-300 {
            return None;
        }
        m.swap(col, pivot);
        inv.swap(col, pivot);
        let p = m[col][col];
        for j in 0..4 {
            m[col][j] /= p;
            inv[col][j] /= p;
        }
        for r in 0..4 {
            if r != col {
                let f = m[r][col];
                for j in 0..4 {
                    m[r][j] -= f * m[col][j];
                    inv[r][j] -= f * inv[col][j];
                }
            }
        }
    }
    Some(inv)
}

pub fn mat3_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            for k in 0..3 {
                out[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    out
}

pub fn mat3_vec(a: &Mat3, v: &[f64; 3]) -> [f64; 3] {
    [
        a[0][0] * v[0] + a[0][1] * v[1] + a[0][2] * v[2],
        a[1][0] * v[0] + a[1][1] * v[1] + a[1][2] * v[2],
        a[2][0] * v[0] + a[2][1] * v[1] + a[2][2] * v[2],
    ]
}

/// Inverse through the adjugate.
pub fn mat3_inv(a: &Mat3) -> Option<Mat3> {
    let c = |r0: usize, r1: usize, c0: usize, c1: usize| a[r0][c0] * a[r1][c1] - a[r0][c1] * a[r1][c0];
    let adj = [
        [c(1, 2, 1, 2), -c(0, 2, 1, 2), c(0, 1, 1, 2)],
        [-c(1, 2, 0, 2), c(0, 2, 0, 2), -c(0, 1, 0, 2)],
        [c(1, 2, 0, 1), -c(0, 2, 0, 1), c(0, 1, 0, 1)],
    ];
    let det = a[0][0] * adj[0][0] + a[0][1] * adj[1][0] + a[0][2] * adj[2][0];
    if det.abs() < 1e-300 {
        return None;
    }
    Some(adj.map(|row| row.map(|x| x / det)))
}

pub fn k_matrix(k: &CameraIntrinsics) -> Mat3 {
    [[k.fx, 0.0, k.cx], [0.0, k.fy, k.cy], [0.0, 0.0, 1.0]]
}

fn rotation_rows(pose: &RigidPose) -> Mat3 {
    let r = pose.rotation_row_major();
    [[r[0], r[1], r[2]], [r[3], r[4], r[5]], [r[6], r[7], r[8]]]
}

/// `K P D(x) K⁻¹ x` carried out with explicit 4×4 homogeneous matrices.
pub fn reproject_homogeneous(x: PixelCoord, depth: f64, pose: &RigidPose, k: &CameraIntrinsics) -> PixelCoord {
    let km = k_matrix(k);
    let mut k4 = [[0.0; 4]; 4];
    for i in 0..3 {
        for j in 0..3 {
            k4[i][j] = km[i][j];
        }
    }
    k4[3][3] = 1.0;
    let k4_inv = mat4_inv(&k4).expect("invertible intrinsics");
    let r = rotation_rows(pose);
    let t = pose.translation();
    let mut p4 = [[0.0; 4]; 4];
    for i in 0..3 {
        for j in 0..3 {
            p4[i][j] = r[i][j];
        }
        p4[i][3] = t[i];
    }
    p4[3][3] = 1.0;
    let chain = mat4_mul(&k4, &mat4_mul(&p4, &k4_inv));
    let xh = [x.u * depth, x.v * depth, depth, 1.0];
    let y = mat4_vec(&chain, &xh);
    PixelCoord::new(y[0] / y[2], y[1] / y[2])
}

/// `K⁻¹ [u, v, 1] · depth` through the adjugate inverse.
pub fn unproject(k: &CameraIntrinsics, x: PixelCoord, depth: f64) -> [f64; 3] {
    let kinv = mat3_inv(&k_matrix(k)).expect("invertible intrinsics");
    mat3_vec(&kinv, &[x.u, x.v, 1.0]).map(|c| c * depth)
}

/// Applies the rotation-only homography `K R K⁻¹` of `pose` to a pixel.
pub fn homography_map(k: &CameraIntrinsics, pose: &RigidPose, x: PixelCoord) -> PixelCoord {
    let km = k_matrix(k);
    let h = mat3_mul(&km, &mat3_mul(&rotation_rows(pose), &mat3_inv(&km).expect("K invertible")));
    let y = mat3_vec(&h, &[x.u, x.v, 1.0]);
    PixelCoord::new(y[0] / y[2], y[1] / y[2])
}

/// Independent bilinear lookup (cell centers at +0.5); `None` unless all four taps are inside.
pub fn bilinear(grid: &FeatureGrid, x: PixelCoord) -> Option<Vec<f64>> {
    let px = x.u - 0.5;
    let py = x.v - 0.5;
    let (w, h) = (grid.width() as f64, grid.height() as f64);
    if !(px >= 0.0 && py >= 0.0 && px <= w - 1.0 && py <= h - 1.0) {
        return None;
    }
    let (x0, y0) = (px.floor(), py.floor());
    let (fx, fy) = (px - x0, py - y0);
    let (x0, y0) = (x0 as usize, y0 as usize);
    let x1 = (x0 + 1).min(grid.width() - 1);
    let y1 = (y0 + 1).min(grid.height() - 1);
    let out = (0..grid.channels())
        .map(|c| {
            let top = grid.pixel(x0, y0)[c] + (grid.pixel(x1, y0)[c] - grid.pixel(x0, y0)[c]) * fx;
            let bottom = grid.pixel(x0, y1)[c] + (grid.pixel(x1, y1)[c] - grid.pixel(x0, y1)[c]) * fx;
            top + (bottom - top) * fy
        })
        .collect();
    Some(out)
}

/// Target image of a pure rotation: each target pixel samples the source at
/// `(K R K⁻¹)⁻¹ x`. The second value marks pixels whose source location lies
/// at least `margin` pixels inside the source frame.
pub fn homography_resample(
    source: &FeatureGrid,
    k: &CameraIntrinsics,
    pose: &RigidPose,
    margin: f64,
) -> (FeatureGrid, Vec<bool>) {
    let back = pose.inverse();
    let (w, h) = source.dims();
    let mut interior = vec![false; w * h];
    let grid = FeatureGrid::from_fn(w, h, source.channels(), |c, r, px| {
        let s = homography_map(k, &back, PixelCoord::cell_center(c, r));
        let inside = s.u >= margin && s.v >= margin && s.u <= w as f64 - margin && s.v <= h as f64 - margin;
        if let Some(v) = bilinear(source, s) {
            px.copy_from_slice(&v);
            interior[r * w + c] = inside;
        }
    });
    (grid, interior)
}

/// Hard z-buffer forward warp at integer resolution: every valid source pixel
/// is moved to the target cell containing its reprojection, nearest depth wins.
pub fn zbuffer_warp(
    source: &FeatureGrid,
    depth: &DepthMap,
    pose: &RigidPose,
    k: &CameraIntrinsics,
) -> (FeatureGrid, OcclusionMask) {
    let (w, h) = source.dims();
    let km = k_matrix(k);
    let r = rotation_rows(pose);
    let t = pose.translation();
    let mut zbuf = vec![f64::INFINITY; w * h];
    let mut owner = vec![usize::MAX; w * h];
    for row in 0..h {
        for col in 0..w {
            let Some(d) = depth.get(col, row) else { continue };
            let x = PixelCoord::cell_center(col, row);
            let p = unproject(k, x, d);
            let q = mat3_vec(&r, &p);
            let q = [q[0] + t[0], q[1] + t[1], q[2] + t[2]];
            if q[2] <= 1e-9 {
                continue;
            }
            let y = mat3_vec(&km, &q);
            let (u, v) = (y[0] / y[2], y[1] / y[2]);
            // tolerate float noise at exact cell boundaries
            let (cu, cv) = ((u - 0.5 + 1e-9).round(), (v - 0.5 + 1e-9).round());
            if cu < 0.0 || cv < 0.0 || cu >= w as f64 || cv >= h as f64 {
                continue;
            }
            let ti = cv as usize * w + cu as usize;
            if q[2] < zbuf[ti] {
                zbuf[ti] = q[2];
                owner[ti] = row * w + col;
            }
        }
    }
    let mut mask = OcclusionMask::empty(w, h);
    let grid = FeatureGrid::from_fn(w, h, source.channels(), |c, r, px| {
        let o = owner[r * w + c];
        if o == usize::MAX {
            mask.set(c, r, true);
        } else {
            px.copy_from_slice(source.pixel(o % w, o / w));
        }
    });
    (grid, mask)
}

/// Lengths of hole runs in `row` that touch neither image border.
pub fn interior_hole_runs(mask: &OcclusionMask, row: usize) -> Vec<usize> {
    let w = mask.width();
    let mut runs = Vec::new();
    let mut c = 0;
    while c < w {
        if mask.is_hole(c, row) {
            let start = c;
            while c < w && mask.is_hole(c, row) {
                c += 1;
            }
            if start > 0 && c < w {
                runs.push(c - start);
            }
        } else {
            c += 1;
        }
    }
    runs
}

/// Dense attention: `weights[n][m] = exp(q_n·k_m·scale) / Σ exp(...)`, `out = weights · v`.
/// No max subtraction; only for moderate logits.
pub fn dense_attention(
    queries: &[Vec<f64>],
    keys: &[Vec<f64>],
    values: &[Vec<f64>],
    scale: f64,
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut weights = Vec::with_capacity(queries.len());
    let mut outputs = Vec::with_capacity(queries.len());
    for q in queries {
        let e: Vec<f64> = keys
            .iter()
            .map(|k| (q.iter().zip(k).map(|(a, b)| a * b).sum::<f64>() * scale).exp())
            .collect();
        let z: f64 = e.iter().sum();
        let row: Vec<f64> = e.iter().map(|x| x / z).collect();
        let dim = values.first().map_or(0, |v| v.len());
        let mut out = vec![0.0; dim];
        for (p, v) in row.iter().zip(values) {
            for (o, x) in out.iter_mut().zip(v) {
                *o += p * x;
            }
        }
        weights.push(row);
        outputs.push(out);
    }
    (weights, outputs)
}

/// `[sin(2^k π x), cos(2^k π x)]` for `k = 0..bands`, evaluated term by term.
pub fn fourier_direct(x: f64, bands: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * bands);
    for k in 0..bands {
        let f = 2f64.powi(k as i32) * std::f64::consts::PI;
        out.push((f * x).sin());
        out.push((f * x).cos());
    }
    out
}

/// Synthetic 3D-2D correspondences for `pose`.
///
/// Points are drawn in a box in front of camera i, projected through `pose`
/// and `k`, perturbed by Gaussian pixel noise, and a fraction replaced by
/// uniform outliers in the image. Returns the set and per-item inlier labels.
pub fn synthetic_correspondences(
    pose: &RigidPose,
    k: &CameraIntrinsics,
    count: usize,
    noise_sigma: f64,
    outlier_fraction: f64,
    seed: u64,
) -> (Vec<Correspondence>, Vec<bool>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, noise_sigma.max(0.0)).expect("finite sigma");
    let n_out = (count as f64 * outlier_fraction).round() as usize;
    let mut out = Vec::with_capacity(count);
    let mut labels = Vec::with_capacity(count);
    while out.len() < count {
        let p = nalgebra::Point3::new(
            rng.random_range(-2.0..2.0),
            rng.random_range(-1.5..1.5),
            rng.random_range(3.0..8.0),
        );
        let q = pose.transform_point(&p);
        if q.z <= 0.5 {
            continue;
        }
        let x = k.project(&q);
        if !k.contains(x) {
            continue;
        }
        let is_outlier = out.len() < n_out;
        let x = if is_outlier {
            // keep outliers well away from their true projection
            loop {
                let y = PixelCoord::new(
                    rng.random_range(0.0..k.width as f64),
                    rng.random_range(0.0..k.height as f64),
                );
                if y.distance(&x) > 20.0 {
                    break y;
                }
            }
        } else if noise_sigma > 0.0 {
            PixelCoord::new(x.u + noise.sample(&mut rng), x.v + noise.sample(&mut rng))
        } else {
            x
        };
        out.push(Correspondence::new(p, x));
        labels.push(!is_outlier);
    }
    // interleave outliers through the set
    let mut order: Vec<usize> = (0..count).collect();
    for i in (1..count).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    let shuffled = order.iter().map(|&i| out[i]).collect();
    let labels = order.iter().map(|&i| labels[i]).collect();
    (shuffled, labels)
}

/// Rodrigues formula written out by hand.
pub fn rodrigues(w: [f64; 3]) -> Mat3 {
    let th = (w[0] * w[0] + w[1] * w[1] + w[2] * w[2]).sqrt();
    if th < 1e-15 {
        return [[1.0, -w[2], w[1]], [w[2], 1.0, -w[0]], [-w[1], w[0], 1.0]];
    }
    let (kx, ky, kz) = (w[0] / th, w[1] / th, w[2] / th);
    let (s, c) = th.sin_cos();
    let v = 1.0 - c;
    [
        [c + kx * kx * v, kx * ky * v - kz * s, kx * kz * v + ky * s],
        [ky * kx * v + kz * s, c + ky * ky * v, ky * kz * v - kx * s],
        [kz * kx * v - ky * s, kz * ky * v + kx * s, c + kz * kz * v],
    ]
}

/// Sum of squared reprojection errors for pose parameters `[w; t]`.
pub fn reprojection_cost(params: &[f64; 6], corr: &[Correspondence], k: &CameraIntrinsics) -> f64 {
    let r = rodrigues([params[0], params[1], params[2]]);
    corr.iter()
        .map(|c| {
            let p = [c.point3d.x, c.point3d.y, c.point3d.z];
            let q = mat3_vec(&r, &p);
            let q = [q[0] + params[3], q[1] + params[4], q[2] + params[5]];
            if q[2] <= 1e-9 {
                return 1e12;
            }
            let u = k.fx * q[0] / q[2] + k.cx;
            let v = k.fy * q[1] / q[2] + k.cy;
            (u - c.point2d.u).powi(2) + (v - c.point2d.v).powi(2)
        })
        .sum()
}

/// Exhaustive grid over `center ± span` (per parameter, `steps` samples each
/// side) followed by a compass-search polish. Slow, but shares nothing with
/// the Gauss-Newton solver.
pub fn pnp_grid_search(
    corr: &[Correspondence],
    k: &CameraIntrinsics,
    center: [f64; 6],
    span: [f64; 6],
    steps: usize,
) -> ([f64; 6], f64) {
    let n = 2 * steps + 1;
    let mut best = (center, f64::INFINITY);
    let total = n.pow(6);
    for idx in 0..total {
        let mut rem = idx;
        let mut p = [0.0; 6];
        for d in 0..6 {
            let i = rem % n;
            rem /= n;
            p[d] = center[d] + span[d] * (i as f64 - steps as f64) / steps.max(1) as f64;
        }
        let c = reprojection_cost(&p, corr, k);
        if c < best.1 {
            best = (p, c);
        }
    }
    let (mut p, mut cost) = best;
    let mut step = span.map(|s| s / steps.max(1) as f64);
    while step.iter().any(|s| *s > 1e-12) {
        let mut improved = false;
        for d in 0..6 {
            for sign in [1.0, -1.0] {
                let mut q = p;
                q[d] += sign * step[d];
                let c = reprojection_cost(&q, corr, k);
                if c < cost {
                    p = q;
                    cost = c;
                    improved = true;
                }
            }
        }
        if !improved {
            step = step.map(|s| s * 0.5);
        }
    }
    (p, cost)
}

/// 4-connected hole components as `(min_col, min_row, max_col, max_row)` boxes,
/// labelled by union-find over a row-major scan.
pub fn hole_component_boxes(mask: &OcclusionMask) -> Vec<(usize, usize, usize, usize)> {
    let (w, h) = mask.dims();
    let mut parent: Vec<usize> = (0..w * h).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for r in 0..h {
        for c in 0..w {
            if !mask.is_hole(c, r) {
                continue;
            }
            let i = r * w + c;
            for j in [(c > 0 && mask.is_hole(c - 1, r)).then(|| i - 1), (r > 0 && mask.is_hole(c, r - 1)).then(|| i - w)]
                .into_iter()
                .flatten()
            {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    let mut boxes = std::collections::BTreeMap::new();
    for r in 0..h {
        for c in 0..w {
            if mask.is_hole(c, r) {
                let root = find(&mut parent, r * w + c);
                let b = boxes.entry(root).or_insert((c, r, c, r));
                b.0 = b.0.min(c);
                b.1 = b.1.min(r);
                b.2 = b.2.max(c);
                b.3 = b.3.max(r);
            }
        }
    }
    boxes.into_values().collect()
}
