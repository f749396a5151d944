import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from deformodo.camera import (
    BehindCameraError,
    DepthMap,
    FlowField,
    Intrinsics,
    InvalidDepthError,
    InverseDepthMap,
    NormalMap,
    bilinear_sample,
    correspondence_map,
    project,
    read_raster,
    unproject,
    write_raster,
)
from deformodo.geometry import RigidTransform, TransformField, TwistField, exp_se3


def unit_intr(w=4, h=4):
    return Intrinsics(1.0, 1.0, 0.0, 0.0, w, h)


def plane(intr, z=2.0):
    return DepthMap(np.full(intr.shape, z))


def test_unproject_examples():
    np.testing.assert_allclose(unproject(unit_intr(), [0.5, 1.0], 2.0), [1, 2, 2])
    intr = Intrinsics(100, 90, 3.5, 2.5, 8, 6)
    np.testing.assert_allclose(unproject(intr, [3.5, 2.5], 7.0), [0, 0, 7])
    with pytest.raises(InvalidDepthError):
        unproject(intr, [1, 1], 0.0)


def test_project_examples():
    np.testing.assert_allclose(project(unit_intr(), [0, 0, 1]), [0, 0])
    np.testing.assert_allclose(project(unit_intr(), [1, 2, 2]), [0.5, 1])
    with pytest.raises(BehindCameraError):
        project(unit_intr(), [0, 0, -1])


def test_project_unproject_roundtrip(rng):
    intr = Intrinsics(120, 110, 31.5, 23.5, 64, 48)
    u = rng.uniform([0, 0], [64, 48], size=(1000, 2))
    z = rng.uniform(0.1, 10, size=1000)
    np.testing.assert_allclose(project(intr, unproject(intr, u, z)), u, atol=1e-9)


def test_intrinsics_invariants(tmp_path):
    with pytest.raises(ValueError):
        Intrinsics(0, 1, 0, 0, 4, 4)
    with pytest.raises(ValueError):
        Intrinsics(1, 1, 4, 0, 4, 4)
    intr = Intrinsics(np.float64(100.5), 99, 3, 2, 8, 6)
    intr.save(tmp_path / "intrinsics.txt")
    text = (tmp_path / "intrinsics.txt").read_text()
    assert text.splitlines()[0] == "fx 100.5" and "width 8" in text
    assert Intrinsics.load(tmp_path / "intrinsics.txt") == intr


def test_identity_field_correspondence():
    intr = Intrinsics(50, 50, 3.5, 3.5, 8, 8)
    depth = DepthMap(np.linspace(1, 3, 64).reshape(8, 8))
    flow, inv = correspondence_map(intr, depth, TransformField.identity(8, 8))
    np.testing.assert_allclose(flow.data, 0, atol=1e-12)
    np.testing.assert_allclose(inv.values, 1 / depth.values, rtol=1e-15)


def test_fronto_parallel_translation():
    intr = Intrinsics(100, 100, 3.5, 3.5, 8, 8)
    F = TransformField.constant(RigidTransform.from_translation([0.2, 0, 0]), 8, 8)
    flow, inv = correspondence_map(intr, plane(intr), F)
    np.testing.assert_allclose(flow.data[..., 0], 10.0, atol=1e-12)
    np.testing.assert_allclose(flow.data[..., 1], 0.0, atol=1e-12)
    np.testing.assert_allclose(inv.values, 0.5)


def test_behind_camera_flagged():
    intr = Intrinsics(100, 100, 3.5, 3.5, 8, 8)
    F = TransformField.constant(RigidTransform.from_translation([0, 0, -3]), 8, 8)
    flow, inv = correspondence_map(intr, plane(intr), F)
    assert not flow.valid.any() and not inv.valid.any()


def test_invalid_depth_propagates():
    intr = Intrinsics(100, 100, 3.5, 3.5, 8, 8)
    z = np.full((8, 8), 2.0)
    z[2, 3] = 0.0
    flow, inv = correspondence_map(intr, DepthMap(z), TransformField.identity(8, 8))
    assert not flow.valid[2, 3] and not inv.valid[2, 3]
    assert flow.valid.sum() == 63


def test_dimension_mismatch():
    intr = Intrinsics(100, 100, 3.5, 3.5, 8, 8)
    with pytest.raises(ValueError):
        correspondence_map(intr, DepthMap(np.ones((4, 8))), TransformField.identity(8, 8))


def scalar_reference(intr, depth, field):
    h, w = depth.shape
    flow = np.full((h, w, 2), np.nan)
    inv = np.full((h, w), np.nan)
    for v in range(h):
        for u in range(w):
            z = depth[v, u]
            if z <= 0:
                continue
            P = np.array([(u - intr.cx) * z / intr.fx, (v - intr.cy) * z / intr.fy, z])
            T = field[(v, u)]
            Q = T.rotation_matrix @ P + T.translation
            if Q[2] <= 1e-6:
                continue
            flow[v, u] = [intr.fx * Q[0] / Q[2] + intr.cx - u, intr.fy * Q[1] / Q[2] + intr.cy - v]
            inv[v, u] = 1 / Q[2]
    return flow, inv


def test_matches_scalar_reference_8x8(rng):
    intr = Intrinsics(40, 45, 3.2, 3.9, 8, 8)
    z = rng.uniform(1, 3, size=(8, 8))
    z[0, 0] = 0.0
    T = exp_se3(rng.normal(size=6) * 0.1)
    flow, inv = correspondence_map(intr, DepthMap(z), TransformField.constant(T, 8, 8))
    rf, ri = scalar_reference(intr, z, TransformField.constant(T, 8, 8))
    np.testing.assert_allclose(flow.data, rf, atol=1e-9)
    np.testing.assert_allclose(inv.data[..., 0], ri, atol=1e-12)
    np.testing.assert_array_equal(flow.valid, np.isfinite(ri))


@given(st.integers(0, 2**32 - 1))
def test_flow_invdepth_consistency(seed):
    r = np.random.default_rng(seed)
    intr = Intrinsics(30, 30, 2.5, 2.5, 6, 6)
    z = r.uniform(1, 4, size=(6, 6))
    F = TransformField.from_twists(TwistField(6, 6, r.normal(size=(36, 6)) * 0.1))
    flow, inv = correspondence_map(intr, DepthMap(z), F)
    v, u = np.mgrid[0:6, 0:6]
    ok = flow.valid.ravel()
    target = np.stack([u.ravel(), v.ravel()], 1) + flow.flat()
    Q = unproject(intr, target[ok], 1 / inv.flat()[ok, 0])
    Pback = np.array([F[i].inverse().act(q) for i, q in zip(np.nonzero(ok)[0], Q)])
    P = unproject(intr, np.stack([u.ravel(), v.ravel()], 1)[ok], z.ravel()[ok])
    np.testing.assert_allclose(Pback, P, atol=1e-6)


def test_bilinear_examples():
    ramp = FlowField(np.stack(np.meshgrid(np.arange(5.0), np.arange(4.0)), axis=-1))
    vals, ok = bilinear_sample(ramp, [[1.5, 2.0], [3.0, 1.0]])
    np.testing.assert_allclose(vals, [[1.5, 2.0], [3.0, 1.0]])
    assert ok.all()
    const = DepthMap(np.full((4, 4), 7.0))
    vals, ok = bilinear_sample(const, np.random.default_rng(0).uniform(0, 3, size=(20, 2)))
    np.testing.assert_allclose(vals, 7.0)


def test_bilinear_invalid_taps_and_outside():
    z = np.full((4, 4), 2.0)
    mask = np.ones((4, 4), bool)
    mask[1, 1] = False
    d = DepthMap(z, valid=mask)
    _, ok = bilinear_sample(d, [[0.5, 0.5], [2.5, 2.5], [-0.1, 1.0], [3.5, 1.0]])
    assert ok.tolist() == [False, True, False, False]


def test_raster_roundtrip(tmp_path, rng):
    for cls, c in ((DepthMap, 1), (InverseDepthMap, 1), (FlowField, 2), (NormalMap, 3)):
        data = rng.uniform(0.5, 2, size=(3, 5, c)).astype(np.float32).astype(np.float64)
        valid = rng.uniform(size=(3, 5)) > 0.3
        write_raster(tmp_path / "r.drkr", cls(data, valid))
        back = read_raster(tmp_path / "r.drkr")
        assert type(back) is cls
        np.testing.assert_array_equal(back.valid, valid)
        np.testing.assert_array_equal(back.data[valid], data[valid])


def test_raster_header_layout(tmp_path):
    write_raster(tmp_path / "f.drkr", FlowField(np.zeros((2, 3, 2))))
    blob = (tmp_path / "f.drkr").read_bytes()
    assert blob[:4] == b"DRKR"
    assert struct.unpack("<BII", blob[4:13]) == (3, 3, 2)
    assert len(blob) == 13 + 4 * 2 * 3 * 2


def test_raster_corrupt(tmp_path):
    (tmp_path / "bad.drkr").write_bytes(b"DRKR\x01\x02\x00\x00\x00")
    with pytest.raises(ValueError):
        read_raster(tmp_path / "bad.drkr")
    with pytest.raises(OSError):
        read_raster(tmp_path / "missing.drkr")
