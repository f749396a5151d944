"""Pinhole camera, geometric rasters and dense correspondences.

Pixel centres sit at integer coordinates: pixel ``(v, u)`` of a raster is the
continuous point ``(u, v)``. Flow is target minus source.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import TransformField

BEHIND_EPS = 1e-6

DRKR_MAGIC = b"DRKR"
KIND_DEPTH, KIND_INVDEPTH, KIND_FLOW, KIND_NORMAL, KIND_COLOR = 1, 2, 3, 4, 5
_CHANNELS = {KIND_DEPTH: 1, KIND_INVDEPTH: 1, KIND_FLOW: 2, KIND_NORMAL: 3, KIND_COLOR: 3}


class InvalidDepthError(ValueError):
    pass


class BehindCameraError(ValueError):
    pass


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        for name in ("fx", "fy", "cx", "cy"):
            object.__setattr__(self, name, float(getattr(self, name)))
        for name in ("width", "height"):
            object.__setattr__(self, name, int(getattr(self, name)))
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx} fy={self.fy}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    @classmethod
    def from_fov(cls, width: int, height: int, hfov_deg: float = 70.0) -> Intrinsics:
        f = 0.5 * width / np.tan(np.radians(hfov_deg) / 2)
        return cls(f, f, (width - 1) / 2, (height - 1) / 2, width, height)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0, self.cx], [0, self.fy, self.cy], [0, 0, 1.0]])

    def pixel_grid(self) -> tuple[np.ndarray, np.ndarray]:
        """Flat row-major (u, v) coordinates of every pixel centre."""
        v, u = np.mgrid[0 : self.height, 0 : self.width]
        return u.ravel().astype(np.float64), v.ravel().astype(np.float64)

    def save(self, path) -> None:
        lines = [
            f"fx {self.fx!r}",
            f"fy {self.fy!r}",
            f"cx {self.cx!r}",
            f"cy {self.cy!r}",
            f"width {self.width}",
            f"height {self.height}",
        ]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> Intrinsics:
        values = {}
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, val = line.split()
            values[key] = val
        try:
            return cls(
                float(values["fx"]),
                float(values["fy"]),
                float(values["cx"]),
                float(values["cy"]),
                int(values["width"]),
                int(values["height"]),
            )
        except KeyError as exc:
            raise ValueError(f"{path}: missing intrinsics key {exc}") from None


# ---------------------------------------------------------------------------
# rasters
# ---------------------------------------------------------------------------


class Raster:
    """Immutable (height, width, channels) array plus a validity mask."""

    kind = 0
    channels = 1

    def __init__(self, data, valid=None):
        data = np.asarray(data, dtype=np.float64)
        if data.ndim == 2:
            data = data[..., None]
        if data.ndim != 3 or data.shape[2] != self.channels:
            raise ValueError(
                f"{type(self).__name__} expects (H, W, {self.channels}) data, got {data.shape}"
            )
        if valid is None:
            valid = self._default_valid(data)
        valid = np.asarray(valid, dtype=bool).reshape(data.shape[:2])
        data = data.copy()
        data.setflags(write=False)
        valid = valid.copy()
        valid.setflags(write=False)
        self.data = data
        self.valid = valid

    def _default_valid(self, data):
        return np.all(np.isfinite(data), axis=2)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape[:2]

    def flat(self) -> np.ndarray:
        """(height*width, channels) view in row-major pixel order."""
        return self.data.reshape(-1, self.channels)

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.width}x{self.height}, valid={int(self.valid.sum())})"


class DepthMap(Raster):
    kind = KIND_DEPTH

    def _default_valid(self, data):
        return np.isfinite(data[..., 0]) & (data[..., 0] > 0)

    @property
    def values(self) -> np.ndarray:
        return self.data[..., 0]

    def inverse(self) -> InverseDepthMap:
        z = self.values
        inv = np.where(self.valid, 1.0 / np.where(self.valid, z, 1.0), np.nan)
        return InverseDepthMap(inv, self.valid)


class InverseDepthMap(Raster):
    kind = KIND_INVDEPTH

    @property
    def values(self) -> np.ndarray:
        return self.data[..., 0]


class FlowField(Raster):
    kind = KIND_FLOW
    channels = 2


class NormalMap(Raster):
    kind = KIND_NORMAL
    channels = 3


class ColorRaster(Raster):
    kind = KIND_COLOR
    channels = 3


_KIND_CLASSES = {
    KIND_DEPTH: DepthMap,
    KIND_INVDEPTH: InverseDepthMap,
    KIND_FLOW: FlowField,
    KIND_NORMAL: NormalMap,
    KIND_COLOR: ColorRaster,
}


def write_raster(path, raster: Raster) -> None:
    """Write a DRKR file; invalid pixels are stored as 0 (depth) or NaN."""
    data = np.array(raster.data, dtype=np.float64)
    fill = 0.0 if raster.kind == KIND_DEPTH else np.nan
    data[~raster.valid] = fill
    header = DRKR_MAGIC + struct.pack("<BII", raster.kind, raster.width, raster.height)
    payload = data.astype("<f4").tobytes(order="C")
    try:
        with open(path, "wb") as fh:
            fh.write(header + payload)
    except OSError as exc:
        raise OSError(f"cannot write raster {path}: {exc}") from exc


def read_raster(path) -> Raster:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise OSError(f"cannot read raster {path}: {exc}") from exc
    if len(blob) < 13 or blob[:4] != DRKR_MAGIC:
        raise ValueError(f"{path}: not a DRKR raster")
    kind, width, height = struct.unpack("<BII", blob[4:13])
    if kind not in _CHANNELS:
        raise ValueError(f"{path}: unknown raster kind {kind}")
    c = _CHANNELS[kind]
    expected = 13 + 4 * width * height * c
    if len(blob) != expected:
        raise ValueError(f"{path}: truncated payload ({len(blob)} bytes, expected {expected})")
    data = np.frombuffer(blob, dtype="<f4", offset=13).astype(np.float64).reshape(height, width, c)
    return _KIND_CLASSES[kind](data)


# ---------------------------------------------------------------------------
# projection
# ---------------------------------------------------------------------------


def unproject(intr: Intrinsics, u, z) -> np.ndarray:
    """Back-project pixel(s) ``u = (u, v)`` at z-depth ``z``; batches broadcast."""
    u = np.asarray(u, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if np.any(z <= 0):
        raise InvalidDepthError("depth must be positive")
    x = (u[..., 0] - intr.cx) * z / intr.fx
    y = (u[..., 1] - intr.cy) * z / intr.fy
    return np.stack(np.broadcast_arrays(x, y, z), axis=-1)


def project(intr: Intrinsics, p) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if np.any(p[..., 2] <= BEHIND_EPS):
        raise BehindCameraError("point at or behind the camera plane")
    return _project_unchecked(intr, p)


def _project_unchecked(intr: Intrinsics, p: np.ndarray) -> np.ndarray:
    z = p[..., 2]
    return np.stack([intr.fx * p[..., 0] / z + intr.cx, intr.fy * p[..., 1] / z + intr.cy], axis=-1)


def backproject_depth(intr: Intrinsics, depth: DepthMap) -> tuple[np.ndarray, np.ndarray]:
    """Flat (n, 3) camera points of every pixel and the flat validity mask."""
    u, v = intr.pixel_grid()
    z = depth.values.ravel()
    valid = depth.valid.ravel()
    zs = np.where(valid, z, 1.0)
    P = np.stack([(u - intr.cx) * zs / intr.fx, (v - intr.cy) * zs / intr.fy, zs], axis=1)
    return P, valid


def check_same_domain(intr: Intrinsics, *rasters) -> None:
    for r in rasters:
        if r is None:
            continue
        w, h = r.width, r.height
        if (w, h) != (intr.width, intr.height):
            raise ValueError(
                f"{type(r).__name__} is {w}x{h} but intrinsics are {intr.width}x{intr.height}"
            )


def correspondence_map(intr: Intrinsics, depth1: DepthMap, field: TransformField):
    """Flow and inverse depth induced by moving every pixel's 3D point with ``field``.

    Returns ``(FlowField, InverseDepthMap)``; pixels with invalid depth or whose
    moved point is behind the camera are flagged invalid in both.
    """
    check_same_domain(intr, depth1, field)
    P, valid = backproject_depth(intr, depth1)
    Q = field.act(P)
    valid = valid & (Q[:, 2] > BEHIND_EPS)
    zq = np.where(valid, Q[:, 2], 1.0)
    u, v = intr.pixel_grid()
    flow = np.stack([intr.fx * Q[:, 0] / zq + intr.cx - u, intr.fy * Q[:, 1] / zq + intr.cy - v], axis=1)
    flow[~valid] = np.nan
    inv = np.where(valid, 1.0 / zq, np.nan)
    shape = intr.shape
    mask = valid.reshape(shape)
    return FlowField(flow.reshape(shape + (2,)), mask), InverseDepthMap(inv.reshape(shape), mask)


def bilinear_sample(raster: Raster, u) -> tuple[np.ndarray, np.ndarray]:
    """Sample ``raster`` at continuous pixel coordinates ``u`` (..., 2).

    Returns ``(values (..., channels), valid (...))``. Points outside
    ``[0, width-1] x [0, height-1]`` or touching an invalid tap are invalid.
    """
    u = np.asarray(u, dtype=np.float64)
    batch = u.shape[:-1]
    uu = u[..., 0].ravel()
    vv = u[..., 1].ravel()
    h, w = raster.shape
    inside = np.isfinite(uu) & np.isfinite(vv) & (uu >= 0) & (vv >= 0) & (uu <= w - 1) & (vv <= h - 1)
    uc = np.where(inside, uu, 0.0)
    vc = np.where(inside, vv, 0.0)
    u0 = np.floor(uc).astype(np.intp)
    v0 = np.floor(vc).astype(np.intp)
    au = uc - u0
    av = vc - v0
    # upper tap may fall off the edge only when its weight is zero
    u1 = np.minimum(u0 + 1, w - 1)
    v1 = np.minimum(v0 + 1, h - 1)
    data = raster.data
    ok = raster.valid
    w00 = ((1 - au) * (1 - av))[:, None]
    w10 = (au * (1 - av))[:, None]
    w01 = ((1 - au) * av)[:, None]
    w11 = (au * av)[:, None]
    out = w00 * data[v0, u0] + w10 * data[v0, u1] + w01 * data[v1, u0] + w11 * data[v1, u1]
    valid = inside & ok[v0, u0] & ok[v0, u1] & ok[v1, u0] & ok[v1, u1]
    out[~valid] = np.nan
    return out.reshape(batch + (raster.channels,)), valid.reshape(batch)
