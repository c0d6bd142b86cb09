"""Builds the extension module and exercises it from Python.

    python3 python/smoke_test.py [--no-build]
"""

import argparse
import importlib.util
import math
import pathlib
import shutil
import subprocess
import sys
import tempfile

import numpy as np

ROOT = pathlib.Path(__file__).resolve().parent.parent


def build_and_load(build):
    if build:
        subprocess.run(
            ["cargo", "build", "-p", "warpkit-py", "--features", "extension-module"],
            cwd=ROOT,
            check=True,
        )
    lib = ROOT / "target" / "debug" / "libwarpkit_py.so"
    tmp = pathlib.Path(tempfile.mkdtemp())
    dest = tmp / "warpkit_py.so"
    shutil.copy(lib, dest)
    spec = importlib.util.spec_from_file_location("warpkit_py", dest)
    module = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(module)
    return module


def check_geometry(wk):
    k = wk.Intrinsics(50.0, 50.0, 32.0, 24.0, 64, 48)
    assert wk.reproject(10.5, 20.5, 3.0, wk.Pose.identity(), k) == (10.5, 20.5)

    pose = wk.Pose.from_axis_angle([0.0, 0.1, 0.0], [0.2, 0.0, 0.05])
    p = np.array(k.unproject(10.5, 20.5, 3.0))
    q = np.array(pose.rotation) @ p + np.array(pose.translation)
    expect = (50.0 * q[0] / q[2] + 32.0, 50.0 * q[1] / q[2] + 24.0)
    got = wk.reproject(10.5, 20.5, 3.0, pose, k)
    assert max(abs(a - b) for a, b in zip(got, expect)) < 1e-9, (got, expect)

    dr, dt = pose.compose(pose.inverse()).distance(wk.Pose.identity())
    assert dr < 1e-12 and dt < 1e-12

    try:
        wk.reproject(0.5, 0.5, 1.0, wk.Pose.from_axis_angle([0, 0, 0], [0, 0, -5.0]), k)
    except ValueError as e:
        assert "behind" in str(e)
    else:
        raise AssertionError("expected a behind-camera error")


def check_warp(wk):
    k = wk.Intrinsics(20.0, 20.0, 8.0, 6.0, 16, 12)
    rng = np.random.default_rng(0)
    image = rng.random((12, 16, 3))
    depth = np.full((12, 16), 2.0)
    for mode in ("forward", "inverse"):
        out, mask = wk.warp(image.tolist(), depth.tolist(), wk.Pose.identity(), k, mode)
        assert not np.any(mask), mode
        assert np.abs(np.array(out) - image).max() < 1e-9, mode

    shifted, mask = wk.warp(image.tolist(), depth.tolist(), wk.Pose.from_axis_angle([0, 0, 0], [0.2, 0, 0]), k)
    mask = np.array(mask)
    assert mask[:, :2].all() and not mask[:, 2:].any()

    hole = np.zeros((12, 16), dtype=bool)
    hole[5, 5] = True
    grown = np.array(wk.filter_occlusion_mask(hole.tolist(), 4))
    assert grown.sum() == 16 and grown[5, 5]
    assert wk.filter_occlusion_mask(grown.tolist(), 4) == grown.tolist()


def check_embedding(wk):
    coords = np.array(wk.canonical_coords(5, 4))
    assert coords[0, 0].tolist() == [-1.0, -1.0] and coords[-1, -1].tolist() == [1.0, 1.0]
    emb = np.array(wk.fourier_encode(coords.tolist(), 3))
    assert emb.shape == (4, 5, 12)
    x = coords[..., 0]
    for b in range(3):
        f = 2.0**b * math.pi
        assert np.abs(emb[..., 2 * b] - np.sin(f * x)).max() < 1e-12
        assert np.abs(emb[..., 2 * b + 1] - np.cos(f * x)).max() < 1e-12

    k = wk.Intrinsics(20.0, 20.0, 8.0, 6.0, 16, 12)
    warped, mask = wk.warped_coord_embedding(np.full((12, 16), 2.0).tolist(), wk.Pose.identity(), k, 3)
    direct = wk.fourier_encode(wk.canonical_coords(16, 12), 3)
    assert np.abs(np.array(warped) - np.array(direct)).max() < 1e-9
    assert not np.any(mask)


def check_attention(wk):
    rng = np.random.default_rng(1)
    f_i, f_j = rng.normal(size=(7, 4)), rng.normal(size=(5, 4))
    out, a_cross, a_self = map(np.array, wk.augmented_attention(f_i.tolist(), f_j.tolist()))
    keys = np.vstack([f_i, f_j])
    logits = f_j @ keys.T / 2.0
    w = np.exp(logits - logits.max(axis=1, keepdims=True))
    w /= w.sum(axis=1, keepdims=True)
    assert np.abs(a_cross - w[:, :7]).max() < 1e-12
    assert np.abs(a_self - w[:, 7:]).max() < 1e-12
    assert np.abs(out - w @ keys).max() < 1e-12


def check_pose(wk):
    k = wk.Intrinsics(100.0, 100.0, 64.0, 48.0, 128, 96)
    truth = wk.Pose.from_axis_angle([0.05, -0.1, 0.02], [0.3, -0.1, 0.2])
    rng = np.random.default_rng(2)
    pts = np.column_stack([rng.uniform(-1, 1, 60), rng.uniform(-1, 1, 60), rng.uniform(3, 6, 60)])
    pix = []
    for p in pts:
        q = truth.transform_point(p.tolist())
        pix.append([100.0 * q[0] / q[2] + 64.0, 100.0 * q[1] / q[2] + 48.0])
    dr, dt = wk.solve_pnp(pts.tolist(), pix, k).distance(truth)
    assert dr < 1e-9 and dt < 1e-9

    noisy = [list(x) for x in pix]
    for i in range(0, 60, 5):
        noisy[i] = [rng.uniform(0, 128), rng.uniform(0, 96)]
    pose, inliers, rmse = wk.pnp_ransac(pts.tolist(), noisy, k, seed=3)
    assert pose.distance(truth)[0] < 1e-6 and rmse < 1e-6
    assert set(inliers) == set(range(60)) - set(range(0, 60, 5))
    assert wk.pnp_ransac(pts.tolist(), noisy, k, seed=3)[1] == inliers


def check_pairs(wk):
    pairs = wk.sample_pairs(list(range(200)), seed=7)
    assert pairs and all(30 <= j - i <= 120 for i, j in pairs)
    assert pairs == wk.sample_pairs(list(range(200)), seed=7)
    try:
        wk.sample_pairs(list(range(20)))
    except ValueError:
        pass
    else:
        raise AssertionError("expected a too-short error")


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--no-build", action="store_true", help="use the existing build")
    args = parser.parse_args()
    wk = build_and_load(not args.no_build)
    checks = [check_geometry, check_warp, check_embedding, check_attention, check_pose, check_pairs]
    for check in checks:
        check(wk)
        print(f"ok  {check.__name__}")
    print(f"{len(checks)} checks passed")


if __name__ == "__main__":
    sys.exit(main())
