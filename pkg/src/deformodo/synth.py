"""Procedural deformable scenes with exact ground-truth labels.

Scenes are collections of height-field patches. A patch maps a material
point ``m = (mx, my)`` to the world as ``base.act((mx, my, h(m, t)))`` where
``h`` is a static relief plus a separable sinusoidal deformation. Depth comes
from Newton ray casting against ``h``; flow follows each hit material point to
the target frame, so labels are exact up to the ray-cast tolerance.
"""
from __future__ import annotations

import hashlib
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .camera import (
    BEHIND_EPS,
    ColorRaster,
    DepthMap,
    FlowField,
    Intrinsics,
    InverseDepthMap,
    NormalMap,
    write_raster,
)
from .geometry import RigidTransform, quat_rotate, se3_compose, se3_exp, se3_inverse, so3_exp
from .trajectory import Trajectory

FPS = 30.0
NEWTON_MAX_ITERS = 32
NEWTON_TOL = 1e-10
# hit at the expected range within this tolerance counts as unoccluded
OCCLUSION_TOL = 1e-6
NEAR_CLIP = 1e-3

LEVEL_AMPLITUDE = (0.0, 0.01, 0.02, 0.04)  # metres
LEVEL_NOISE_SCALE = (0.0, 1.0, 2.0, 4.0)
SIGMA1_TRANS = 0.01  # metres per frame
SIGMA1_ROT = 0.005  # radians per frame
OU_DECAY = 0.8
PRESETS = ("box", "corridor", "sheet")


@dataclass(frozen=True)
class DeformationDescriptor:
    amplitude: float = 0.0
    wavelengths: tuple[float, float] = (1.2, 0.9)
    frequency: float = 1.0  # Hz
    phases: tuple[float, float, float] = (0.0, 0.0, 0.0)  # cycles, (x, y, t)

    def __post_init__(self):
        if self.amplitude < 0:
            raise ValueError("deformation amplitude must be non-negative")
        if min(self.wavelengths) <= 0:
            raise ValueError("wavelengths must be positive")


@dataclass(frozen=True)
class Surface:
    base: RigidTransform  # world-from-patch; patch normal is local +z
    extent: tuple[float, float]  # half sizes, metres
    deformation: DeformationDescriptor = field(default_factory=DeformationDescriptor)
    relief: tuple[float, float, float] = (0.0, 1.0, 1.0)  # amplitude, wavelength x, wavelength y
    texture_seed: int = 0

    def height(self, mx, my, t):
        """Height above the patch plane and its material gradient."""
        mx = np.asarray(mx, dtype=np.float64)
        my = np.asarray(my, dtype=np.float64)
        ra, rlx, rly = self.relief
        h = ra * np.cos(2 * np.pi * mx / rlx) * np.cos(2 * np.pi * my / rly)
        hx = -ra * (2 * np.pi / rlx) * np.sin(2 * np.pi * mx / rlx) * np.cos(2 * np.pi * my / rly)
        hy = -ra * (2 * np.pi / rly) * np.cos(2 * np.pi * mx / rlx) * np.sin(2 * np.pi * my / rly)
        d = self.deformation
        if d.amplitude > 0:
            lx, ly = d.wavelengths
            px, py, pt = d.phases
            ax = 2 * np.pi * (mx / lx + px)
            ay = 2 * np.pi * (my / ly + py)
            st = math.sin(2 * math.pi * (d.frequency * t / FPS + pt))
            h = h + d.amplitude * np.sin(ax) * np.sin(ay) * st
            hx = hx + d.amplitude * (2 * np.pi / lx) * np.cos(ax) * np.sin(ay) * st
            hy = hy + d.amplitude * (2 * np.pi / ly) * np.sin(ax) * np.cos(ay) * st
        return h, hx, hy

    def contains(self, mx, my) -> np.ndarray:
        ex, ey = self.extent
        return (np.abs(mx) <= ex) & (np.abs(my) <= ey)

    def embed(self, mx, my, t) -> np.ndarray:
        h, _, _ = self.height(mx, my, t)
        local = np.stack(np.broadcast_arrays(mx, my, h), axis=-1)
        return quat_rotate(self.base.rotation, local) + self.base.translation

    def to_dict(self) -> dict:
        d = self.deformation
        return {
            "base": _pose_dict(self.base),
            "extent": list(self.extent),
            "deformation": {
                "amplitude": d.amplitude,
                "wavelengths": list(d.wavelengths),
                "frequency": d.frequency,
                "phases": list(d.phases),
            },
            "relief": list(self.relief),
            "texture_seed": self.texture_seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> Surface:
        dd = d["deformation"]
        return cls(
            base=_pose_from_dict(d["base"]),
            extent=tuple(d["extent"]),
            deformation=DeformationDescriptor(
                dd["amplitude"], tuple(dd["wavelengths"]), dd["frequency"], tuple(dd["phases"])
            ),
            relief=tuple(d["relief"]),
            texture_seed=int(d["texture_seed"]),
        )


def _pose_dict(p: RigidTransform) -> dict:
    return {"q": [float(x) for x in p.rotation], "t": [float(x) for x in p.translation]}


def _pose_from_dict(d: dict) -> RigidTransform:
    return RigidTransform(d["q"], d["t"])


@dataclass(frozen=True)
class SceneSpec:
    surfaces: tuple[Surface, ...]
    trajectory: tuple[RigidTransform, ...]  # world-from-camera, one per frame
    level: int
    seed: int
    intrinsics: Intrinsics
    closed: bool = True
    preset: str = "custom"

    def __post_init__(self):
        if self.level not in (0, 1, 2, 3):
            raise ValueError(f"level must be 0..3, got {self.level}")
        if len(self.trajectory) < 2:
            raise ValueError("a scene needs at least two frames")
        if self.closed:
            a, b = self.trajectory[0], self.trajectory[-1]
            if not (np.array_equal(a.rotation, b.rotation) and np.array_equal(a.translation, b.translation)):
                raise ValueError("closed-loop scene must end at its starting pose")

    @property
    def frame_count(self) -> int:
        return len(self.trajectory)

    def to_json(self) -> str:
        intr = self.intrinsics
        doc = {
            "preset": self.preset,
            "level": self.level,
            "seed": self.seed,
            "closed": self.closed,
            "fps": FPS,
            "intrinsics": [intr.fx, intr.fy, intr.cx, intr.cy, intr.width, intr.height],
            "surfaces": [s.to_dict() for s in self.surfaces],
            "trajectory": [_pose_dict(p) for p in self.trajectory],
        }
        return json.dumps(doc, indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> SceneSpec:
        doc = json.loads(text)
        fx, fy, cx, cy, w, h = doc["intrinsics"]
        return cls(
            surfaces=tuple(Surface.from_dict(s) for s in doc["surfaces"]),
            trajectory=tuple(_pose_from_dict(p) for p in doc["trajectory"]),
            level=int(doc["level"]),
            seed=int(doc["seed"]),
            intrinsics=Intrinsics(fx, fy, cx, cy, int(w), int(h)),
            closed=bool(doc["closed"]),
            preset=doc.get("preset", "custom"),
        )


@dataclass
class FrameLabels:
    pose: RigidTransform
    depth: DepthMap
    normals: NormalMap
    color: ColorRaster
    surface_id: np.ndarray  # (H, W) int, -1 on misses
    material: np.ndarray  # (H, W, 2) material coordinates of the hit
    flow_to_next: FlowField | None = None
    invdepth_to_next: InverseDepthMap | None = None


def _rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng([int(seed) & 0xFFFFFFFFFFFFFFFF, stream])


def deform_point(surface: Surface, material_point, t) -> np.ndarray:
    """World position of a material point at frame ``t``."""
    m = np.asarray(material_point, dtype=np.float64)
    if not np.all(surface.contains(m[..., 0], m[..., 1])):
        raise ValueError("material point outside the surface extent")
    return surface.embed(m[..., 0], m[..., 1], t)


# ---------------------------------------------------------------------------
# trajectories
# ---------------------------------------------------------------------------


def _yaw_pitch(yaw, pitch=0.0) -> np.ndarray:
    # camera axes: x right, y down, z forward; yaw about y, pitch about x
    qy = so3_exp(np.array([0.0, yaw, 0.0]))
    qx = so3_exp(np.array([pitch, 0.0, 0.0]))
    q, _ = se3_compose(qy, np.zeros(3), qx, np.zeros(3))
    return q


def loop_trajectory(preset: str, frames: int) -> list[RigidTransform]:
    """Smooth closed base loop for a preset; last pose is a copy of the first."""
    poses = []
    for i in range(frames):
        s = i / (frames - 1)
        c, sn = math.cos(2 * math.pi * s), math.sin(2 * math.pi * s)
        if preset == "sheet":
            pos = np.array([0.25 * sn, 0.15 * (1 - c), 0.1 * sn])
            q = _yaw_pitch(0.08 * sn, 0.05 * (1 - c))
        elif preset == "box":
            pos = np.array([0.4 * sn, 0.1 * sn, 0.4 * (1 - c)])
            q = _yaw_pitch(0.5 * sn, 0.1 * (1 - c))
        elif preset == "corridor":
            pos = np.array([0.3 * sn, 0.05 * (1 - c), 0.9 * (1 - c)])
            q = _yaw_pitch(0.15 * sn)
        else:
            raise ValueError(f"unknown preset {preset!r}; choose from {PRESETS}")
        poses.append(RigidTransform(q, pos))
    poses[-1] = poses[0]
    return poses


def drunken_trajectory(base, level: int, seed: int, sigma_trans=SIGMA1_TRANS, sigma_rot=SIGMA1_ROT):
    """Perturb ``base`` poses with a smooth Ornstein-Uhlenbeck walk in se(3).

    The walk is blended to zero at both ends, so endpoints (and loop closure)
    are preserved. The noise draw depends on ``seed`` only; ``level`` scales it.
    """
    poses = list(base.poses if isinstance(base, Trajectory) else base)
    if level not in (0, 1, 2, 3):
        raise ValueError(f"level must be 0..3, got {level}")
    n = len(poses)
    if level == 0 or n < 3:
        return Trajectory(base.frame_ids, poses) if isinstance(base, Trajectory) else poses
    walk = ou_walk(n, seed) * LEVEL_NOISE_SCALE[level]
    walk *= np.array([sigma_rot] * 3 + [sigma_trans] * 3)
    out = []
    for k, pose in enumerate(poses):
        s = k / (n - 1)
        w = 4.0 * s * (1.0 - s)
        if w == 0.0:
            out.append(pose)
            continue
        dq, dt = se3_exp(w * walk[k])
        out.append(RigidTransform(*se3_compose(pose.rotation, pose.translation, dq, dt)))
    if isinstance(base, Trajectory):
        return Trajectory(base.frame_ids, out)
    return out


def ou_walk(n: int, seed: int, decay: float = OU_DECAY) -> np.ndarray:
    """Unit-variance stationary OU sequence of 6-vectors."""
    eps = _rng(seed, 1).standard_normal((n, 6))
    x = np.empty((n, 6))
    x[0] = eps[0]
    k = math.sqrt(1.0 - decay * decay)
    for i in range(1, n):
        x[i] = decay * x[i - 1] + k * eps[i]
    return x


# ---------------------------------------------------------------------------
# scene presets
# ---------------------------------------------------------------------------


def _plane(origin, x_axis, y_axis) -> RigidTransform:
    x = np.asarray(x_axis, dtype=float)
    y = np.asarray(y_axis, dtype=float)
    z = np.cross(x, y)
    M = np.eye(4)
    M[:3, 0], M[:3, 1], M[:3, 2], M[:3, 3] = x, y, z, origin
    return RigidTransform.from_matrix(M)


def _preset_surfaces(preset: str):
    # (base, extent, relief)
    if preset == "sheet":
        return [(_plane([0, 0, 2.0], [1, 0, 0], [0, -1, 0]), (2.5, 2.5), (0.05, 0.7, 0.55))]
    if preset == "box":
        hx, hy, hz = 2.0, 1.5, 2.5
        return [
            (_plane([0, 0, hz], [1, 0, 0], [0, -1, 0]), (hx, hy), (0.04, 0.8, 0.6)),
            (_plane([0, 0, -hz], [-1, 0, 0], [0, -1, 0]), (hx, hy), (0.04, 0.8, 0.6)),
            (_plane([hx, 0, 0], [0, 0, 1], [0, -1, 0]), (hz, hy), (0.03, 0.9, 0.7)),
            (_plane([-hx, 0, 0], [0, 0, -1], [0, -1, 0]), (hz, hy), (0.03, 0.9, 0.7)),
            (_plane([0, hy, 0], [1, 0, 0], [0, 0, 1]), (hx, hz), (0.02, 1.1, 0.9)),
            (_plane([0, -hy, 0], [1, 0, 0], [0, 0, -1]), (hx, hz), (0.02, 1.1, 0.9)),
        ]
    if preset == "corridor":
        return [
            (_plane([1.0, 0, 3.0], [0, 0, 1], [0, -1, 0]), (4.0, 1.2), (0.03, 0.7, 0.5)),
            (_plane([-1.0, 0, 3.0], [0, 0, -1], [0, -1, 0]), (4.0, 1.2), (0.03, 0.7, 0.5)),
            (_plane([0, 1.0, 3.0], [1, 0, 0], [0, 0, 1]), (1.0, 4.0), (0.02, 0.6, 0.9)),
            (_plane([0, -1.2, 3.0], [1, 0, 0], [0, 0, -1]), (1.0, 4.0), (0.02, 0.6, 0.9)),
            (_plane([0, 0, 6.0], [1, 0, 0], [0, -1, 0]), (1.0, 1.2), (0.04, 0.5, 0.5)),
        ]
    raise ValueError(f"unknown preset {preset!r}; choose from {PRESETS}")


def make_scene(
    preset: str = "sheet",
    level: int = 0,
    frames: int = 30,
    resolution: tuple[int, int] = (128, 128),
    seed: int = 0,
    amplitude: float | None = None,
    closed: bool = True,
) -> SceneSpec:
    """Build a preset scene; deformation phases and trajectory noise come from ``seed``."""
    if level not in (0, 1, 2, 3):
        raise ValueError(f"level must be 0..3, got {level}")
    if frames < 2:
        raise ValueError("frames must be >= 2")
    w, h = resolution
    intr = Intrinsics.from_fov(w, h)
    amp = LEVEL_AMPLITUDE[level] if amplitude is None else amplitude
    rng = _rng(seed, 0)
    surfaces = []
    for i, (base, extent, relief) in enumerate(_preset_surfaces(preset)):
        phases = tuple(float(x) for x in rng.uniform(0.0, 1.0, size=3))
        surfaces.append(
            Surface(
                base=base,
                extent=extent,
                deformation=DeformationDescriptor(amplitude=amp, phases=phases),
                relief=relief,
                texture_seed=int(seed) * 1000 + i,
            )
        )
    base_traj = loop_trajectory(preset, frames)
    if not closed:
        # open variant: stop before returning to the start
        base_traj = loop_trajectory(preset, frames + 1)[:-1]
    traj = drunken_trajectory(base_traj, level, seed)
    return SceneSpec(tuple(surfaces), tuple(traj), level, int(seed), intr, closed, preset)


# ---------------------------------------------------------------------------
# rendering
# ---------------------------------------------------------------------------


def _camera_rays(intr: Intrinsics, pix_u, pix_v) -> np.ndarray:
    """Rays with unit z component, so the ray parameter is z-depth."""
    return np.stack([(pix_u - intr.cx) / intr.fx, (pix_v - intr.cy) / intr.fy, np.ones_like(pix_u)], axis=-1)


def _cast_surface(surface: Surface, origin_w, dirs_w, t):
    """Newton ray/height-field intersection; returns (s, mx, my, hit mask)."""
    qi, ti = se3_inverse(surface.base.rotation, surface.base.translation)
    o = quat_rotate(qi, origin_w) + ti
    d = quat_rotate(qi, dirs_w)
    dz = d[:, 2]
    ok = np.abs(dz) > 1e-9
    s = np.where(ok, -o[..., 2] / np.where(ok, dz, 1.0), np.nan)
    active = ok & (s > 0)
    s = np.where(active, s, np.nan)
    converged = np.zeros_like(active)
    for _ in range(NEWTON_MAX_ITERS):
        idx = np.nonzero(active & ~converged)[0]
        if idx.size == 0:
            break
        si = s[idx]
        mx = o[idx, 0] + si * d[idx, 0] if o.ndim == 2 else o[0] + si * d[idx, 0]
        my = o[idx, 1] + si * d[idx, 1] if o.ndim == 2 else o[1] + si * d[idx, 1]
        oz = o[idx, 2] if o.ndim == 2 else o[2]
        h, hx, hy = surface.height(mx, my, t)
        g = oz + si * d[idx, 2] - h
        dg = d[idx, 2] - hx * d[idx, 0] - hy * d[idx, 1]
        bad = np.abs(dg) < 1e-12
        step = np.where(bad, np.nan, g / np.where(bad, 1.0, dg))
        s[idx] = si - step
        done = np.abs(step) < NEWTON_TOL
        converged[idx[done]] = True
        failed = ~np.isfinite(step)
        active[idx[failed]] = False
    hit = active & converged & np.isfinite(s) & (s > NEAR_CLIP)
    if o.ndim == 2:
        mx = o[:, 0] + s * d[:, 0]
        my = o[:, 1] + s * d[:, 1]
    else:
        mx = o[0] + s * d[:, 0]
        my = o[1] + s * d[:, 1]
    hit &= surface.contains(np.nan_to_num(mx, nan=np.inf), np.nan_to_num(my, nan=np.inf))
    return s, mx, my, hit


def cast_rays(scene: SceneSpec, pose: RigidTransform, pix_u, pix_v, t):
    """Nearest hit for rays through continuous pixels; returns (depth, surface id, mx, my)."""
    rays_c = _camera_rays(scene.intrinsics, np.asarray(pix_u, float), np.asarray(pix_v, float))
    dirs_w = quat_rotate(pose.rotation, rays_c)
    origin = pose.translation
    n = rays_c.shape[0]
    best = np.full(n, np.inf)
    sid = np.full(n, -1, dtype=np.int64)
    mx_best = np.full(n, np.nan)
    my_best = np.full(n, np.nan)
    for i, surface in enumerate(scene.surfaces):
        s, mx, my, hit = _cast_surface(surface, origin, dirs_w, t)
        better = hit & (s < best)
        best[better] = s[better]
        sid[better] = i
        mx_best[better] = mx[better]
        my_best[better] = my[better]
    return best, sid, mx_best, my_best


def _surface_normals_world(scene: SceneSpec, sid, mx, my, t) -> np.ndarray:
    n = np.zeros((sid.shape[0], 3))
    for i, surface in enumerate(scene.surfaces):
        m = sid == i
        if not np.any(m):
            continue
        _, hx, hy = surface.height(mx[m], my[m], t)
        local = np.stack([-hx, -hy, np.ones_like(hx)], axis=1)
        local /= np.linalg.norm(local, axis=1, keepdims=True)
        n[m] = quat_rotate(surface.base.rotation, local)
    return n


def _embed_many(scene: SceneSpec, sid, mx, my, t) -> np.ndarray:
    X = np.full((sid.shape[0], 3), np.nan)
    for i, surface in enumerate(scene.surfaces):
        m = sid == i
        if np.any(m):
            X[m] = surface.embed(mx[m], my[m], t)
    return X


def _value_noise(seed: int, mx, my, cell: float = 0.08) -> np.ndarray:
    """Seeded bilinear value noise, three channels in [0, 1]."""
    gx = mx / cell
    gy = my / cell
    ix = np.floor(gx).astype(np.int64)
    iy = np.floor(gy).astype(np.int64)
    fx = gx - ix
    fy = gy - iy

    def lattice(a, b, ch):
        # integer hash; deterministic across platforms
        k = (a * 73856093) ^ (b * 19349663) ^ (ch * 83492791) ^ ((seed * 2654435761) & 0x7FFFFFFF)
        k = (k ^ (k >> 13)) * 1274126177
        k = k ^ (k >> 16)
        return (k & 0xFFFF).astype(np.float64) / 65535.0

    out = []
    for ch in range(3):
        v00 = lattice(ix, iy, ch)
        v10 = lattice(ix + 1, iy, ch)
        v01 = lattice(ix, iy + 1, ch)
        v11 = lattice(ix + 1, iy + 1, ch)
        out.append((1 - fx) * (1 - fy) * v00 + fx * (1 - fy) * v10 + (1 - fx) * fy * v01 + fx * fy * v11)
    return np.stack(out, axis=-1)


def track_points(scene: SceneSpec, sid, mx, my, t_target):
    """Project material points into frame ``t_target``.

    Returns (pixel coords (n, 2), camera-frame points (n, 3), visible mask).
    Visibility requires being in front, on screen, and the first hit along
    the ray at ``t_target``.
    """
    intr = scene.intrinsics
    pose = scene.trajectory[t_target]
    X = _embed_many(scene, sid, mx, my, t_target)
    qi, ti = se3_inverse(pose.rotation, pose.translation)
    Q = quat_rotate(qi, X) + ti
    ok = (sid >= 0) & np.isfinite(Q[:, 2]) & (Q[:, 2] > BEHIND_EPS)
    z = np.where(ok, Q[:, 2], 1.0)
    uv = np.stack([intr.fx * Q[:, 0] / z + intr.cx, intr.fy * Q[:, 1] / z + intr.cy], axis=1)
    ok &= (uv[:, 0] >= 0) & (uv[:, 0] <= intr.width - 1) & (uv[:, 1] >= 0) & (uv[:, 1] <= intr.height - 1)
    idx = np.nonzero(ok)[0]
    if idx.size:
        s, sid2, _, _ = cast_rays(scene, pose, uv[idx, 0], uv[idx, 1], t_target)
        seen = (sid2 == sid[idx]) & (np.abs(s - Q[idx, 2]) < OCCLUSION_TOL)
        ok[idx[~seen]] = False
    return uv, Q, ok


def render_frame(scene: SceneSpec, t: int, target: int | None = None) -> FrameLabels:
    """Render labels of frame ``t``; flow points to ``target`` (default ``t + 1``)."""
    n_frames = scene.frame_count
    if not 0 <= t < n_frames:
        raise ValueError(f"frame {t} outside 0..{n_frames - 1}")
    if target is None and t + 1 < n_frames:
        target = t + 1
    intr = scene.intrinsics
    shape = intr.shape
    pose = scene.trajectory[t]
    u, v = intr.pixel_grid()
    depth, sid, mx, my = cast_rays(scene, pose, u, v, t)
    hit = sid >= 0
    depth = np.where(hit, depth, 0.0)

    nw = _surface_normals_world(scene, sid, mx, my, t)
    qi, _ = se3_inverse(pose.rotation, pose.translation)
    nc = quat_rotate(qi, nw)
    rays = _camera_rays(intr, u, v)
    facing = np.sum(nc * rays, axis=1) > 0
    nc[facing] *= -1
    nc[~hit] = np.nan

    color = np.full((u.shape[0], 3), np.nan)
    for i, surface in enumerate(scene.surfaces):
        m = sid == i
        if np.any(m):
            color[m] = _value_noise(surface.texture_seed, mx[m], my[m])

    labels = FrameLabels(
        pose=pose,
        depth=DepthMap(depth.reshape(shape), hit.reshape(shape)),
        normals=NormalMap(nc.reshape(shape + (3,)), hit.reshape(shape)),
        color=ColorRaster(color.reshape(shape + (3,)), hit.reshape(shape)),
        surface_id=sid.reshape(shape),
        material=np.stack([mx, my], axis=1).reshape(shape + (2,)),
    )
    if target is not None:
        uv, Q, ok = track_points(scene, sid, mx, my, target)
        flow = uv - np.stack([u, v], axis=1)
        flow[~ok] = np.nan
        inv = np.where(ok, 1.0 / np.where(ok, Q[:, 2], 1.0), np.nan)
        labels.flow_to_next = FlowField(flow.reshape(shape + (2,)), ok.reshape(shape))
        labels.invdepth_to_next = InverseDepthMap(inv.reshape(shape), ok.reshape(shape))
    return labels


# ---------------------------------------------------------------------------
# dataset writer
# ---------------------------------------------------------------------------


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_dir: Path, files: list[str], name: str = "manifest.txt", header=()) -> dict:
    entries = {}
    for f in sorted(files):
        entries[f] = sha256_file(out_dir / f)
    lines = [f"# {h}" for h in header]
    lines += [f"{digest}  {f}" for f, digest in entries.items()]
    (out_dir / name).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return entries


def read_manifest(path) -> dict:
    entries = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        digest, name = line.split(None, 1)
        entries[name.strip()] = digest
    return entries


def frame_file(t: int, kind: str) -> str:
    return f"frame_{t:06d}.{kind}.drkr"


def generate_sequence(scene: SceneSpec, out_dir, threads: int = 1) -> dict:
    """Render every frame of ``scene`` into ``out_dir``; returns the manifest."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    n = scene.frame_count

    def work(t: int) -> list[str]:
        labels = render_frame(scene, t)
        names = []
        for kind, raster in (("depth", labels.depth), ("normal", labels.normals), ("color", labels.color)):
            write_raster(out / frame_file(t, kind), raster)
            names.append(frame_file(t, kind))
        if labels.flow_to_next is not None:
            write_raster(out / frame_file(t, "flow"), labels.flow_to_next)
            write_raster(out / frame_file(t, "invdepth"), labels.invdepth_to_next)
            names += [frame_file(t, "flow"), frame_file(t, "invdepth")]
        return names

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            per_frame = list(pool.map(work, range(n)))
    else:
        per_frame = [work(t) for t in range(n)]
    files = [f for names in per_frame for f in names]

    scene.intrinsics.save(out / "intrinsics.txt")
    Trajectory(range(n), scene.trajectory).save(out / "trajectory_gt.txt")
    (out / "scene.json").write_text(scene.to_json() + "\n", encoding="utf-8")
    files += ["intrinsics.txt", "trajectory_gt.txt", "scene.json"]
    header = [f"preset {scene.preset}", f"level {scene.level}", f"seed {scene.seed}", f"frames {n}"]
    return write_manifest(out, files, header=header)


def load_scene(dataset_dir) -> SceneSpec | None:
    path = Path(dataset_dir) / "scene.json"
    if not path.exists():
        return None
    return SceneSpec.from_json(path.read_text(encoding="utf-8"))


def with_amplitude(scene: SceneSpec, amplitude: float) -> SceneSpec:
    """Copy of ``scene`` with every surface's deformation amplitude replaced."""
    surfaces = tuple(replace(s, deformation=replace(s.deformation, amplitude=amplitude)) for s in scene.surfaces)
    return replace(scene, surfaces=surfaces)
