"""Trajectory alignment, RPE/ATE, palindrome sequences and APTE.

Trajectories are matched by frame id. Rotation errors are radians here;
the command line converts to degrees.
"""
from __future__ import annotations

import csv
import os
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .camera import write_raster
from .dataset import ABSENT, REMAP_FILE, Dataset
from .geometry import RigidTransform, Similarity, quat_from_matrix
from .synth import load_scene, render_frame, write_manifest
from .trajectory import Trajectory

ALIGN_MODES = ("se3", "sim3")
APTE_MODES = ("loopwise", "literal")
APTE_CONVENTION = "pose[k] = pose[k-1] o T[k] from the identity; forward legs first, then backward legs"
# relative translations below this count as "no motion" for the degenerate warning
STILL_TRANSLATION = 1e-9
# singular-value ratio under which matched positions are treated as collinear
COLLINEAR_RTOL = 1e-9


class DegenerateAlignmentError(ValueError):
    pass


class EmptyInputError(ValueError):
    pass


class FrameMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class AlignmentResult:
    transform: Similarity  # maps estimated positions onto ground truth
    residual_rmse: float
    mode: str
    n_matched: int

    @property
    def scale(self) -> float:
        return self.transform.scale


@dataclass
class RpeResult:
    frame_pairs: list
    trans_errors: np.ndarray  # metres
    rot_errors: np.ndarray  # radians

    @property
    def trans_rmse(self) -> float:
        return float(np.sqrt(np.mean(self.trans_errors ** 2)))

    @property
    def rot_rmse(self) -> float:
        return float(np.sqrt(np.mean(self.rot_errors ** 2)))

    @property
    def trans_mean(self) -> float:
        return float(np.mean(self.trans_errors))

    @property
    def rot_mean(self) -> float:
        return float(np.mean(self.rot_errors))


@dataclass
class ApteReport:
    values: np.ndarray  # APTE_k for k = 1..N
    mode: str
    scale: float = 1.0
    convention: str = APTE_CONVENTION
    warnings: list = field(default_factory=list)

    @property
    def mean(self) -> float:
        return float(np.mean(self.values))

    @property
    def profile(self) -> list[tuple[int, float]]:
        """``(k, APTE_k)`` rows, one per loop length."""
        return [(k, float(v)) for k, v in enumerate(self.values, 1)]


# ---------------------------------------------------------------------------
# association and alignment
# ---------------------------------------------------------------------------


def matched_ids(est: Trajectory, gt: Trajectory) -> np.ndarray:
    return np.intersect1d(est.frame_ids, gt.frame_ids)


def first_mismatch(est: Trajectory, gt: Trajectory):
    """First position at which the two frame-id lists differ, or ``None``."""
    a, b = [int(x) for x in est.frame_ids], [int(x) for x in gt.frame_ids]
    for i, (x, y) in enumerate(zip(a, b)):
        if x != y:
            return i, x, y
    if len(a) != len(b):
        i = min(len(a), len(b))
        return i, (a[i] if i < len(a) else None), (b[i] if i < len(b) else None)
    return None


def require_same_ids(est: Trajectory, gt: Trajectory) -> None:
    bad = first_mismatch(est, gt)
    if bad is not None:
        i, x, y = bad
        raise FrameMismatchError(f"frame ids differ at line {i}: estimate {x}, ground truth {y}")


def require_known_ids(est: Trajectory, gt: Trajectory, what: str = "estimate") -> None:
    known = set(int(f) for f in gt.frame_ids)
    for i, f in enumerate(est.frame_ids):
        if int(f) not in known:
            raise FrameMismatchError(f"{what} frame {int(f)} (line {i}) is not in the ground truth")


def _umeyama(src: np.ndarray, dst: np.ndarray, with_scale: bool):
    """Least-squares ``dst ~ s R src + t`` in closed form."""
    mu_s, mu_d = src.mean(axis=0), dst.mean(axis=0)
    xs, xd = src - mu_s, dst - mu_d
    cov = xd.T @ xs / len(src)
    U, D, Vt = np.linalg.svd(cov)
    S = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[2, 2] = -1.0
    R = U @ S @ Vt
    if with_scale:
        var_s = np.mean(np.sum(xs ** 2, axis=1))
        s = float(np.trace(np.diag(D) @ S) / var_s)
    else:
        s = 1.0
    t = mu_d - s * R @ mu_s
    return s, R, t


def align(est: Trajectory, gt: Trajectory, mode: str = "sim3") -> AlignmentResult:
    if mode not in ALIGN_MODES:
        raise ValueError(f"alignment mode must be one of {ALIGN_MODES}, got {mode!r}")
    ids = matched_ids(est, gt)
    if len(ids) < 3:
        raise DegenerateAlignmentError(f"alignment needs at least 3 matched frames, got {len(ids)}")
    src = est.subset(ids).positions
    dst = gt.subset(ids).positions
    for name, pts in (("estimated", src), ("ground-truth", dst)):
        sv = np.linalg.svd(pts - pts.mean(axis=0), compute_uv=False)
        if sv[0] == 0 or sv[1] <= COLLINEAR_RTOL * sv[0]:
            raise DegenerateAlignmentError(f"{name} positions are collinear; alignment is not unique")
    s, R, t = _umeyama(src, dst, mode == "sim3")
    sim = Similarity(s, quat_from_matrix(R), t)
    resid = sim.act(src) - dst
    rmse = float(np.sqrt(np.mean(np.sum(resid ** 2, axis=1))))
    return AlignmentResult(sim, rmse, mode, len(ids))


def apply_alignment(traj: Trajectory, sim: Similarity) -> Trajectory:
    return Trajectory(traj.frame_ids, [sim.apply_to_pose(p) for p in traj.poses])


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


def rpe(est: Trajectory, gt: Trajectory) -> RpeResult:
    ids = matched_ids(est, gt)
    if len(ids) < 2:
        raise EmptyInputError("RPE needs at least two matched frames")
    e = est.subset(ids).relative_poses()
    g = gt.subset(ids).relative_poses()
    trans, rot = [], []
    for re, rg in zip(e, g):
        E = rg.inverse() @ re
        trans.append(np.linalg.norm(E.translation))
        rot.append(E.angle())
    pairs = [(int(a), int(b)) for a, b in zip(ids[:-1], ids[1:])]
    return RpeResult(pairs, np.array(trans), np.array(rot))


def ate(est: Trajectory, gt: Trajectory, mode: str = "sim3") -> float:
    return align(est, gt, mode).residual_rmse


def scale_pose(T: RigidTransform, s: float) -> RigidTransform:
    return T if s == 1.0 else RigidTransform(T.rotation, s * T.translation)


def _chain(poses) -> RigidTransform:
    acc = RigidTransform.identity()
    for T in poses:
        acc = acc @ T
    return acc


def apte(forward, backward, mode: str = "loopwise", scale: float = 1.0) -> ApteReport:
    """Palindrome loop-closure error for every loop length ``k = 1..N``.

    ``forward[j]`` and ``backward[j]`` are trajectory increments in run
    order, so ``backward[0]`` retraces the last forward leg. Loopwise mode
    closes loop ``k`` with the backward legs that retrace the first ``k``
    forward legs; literal mode uses the first ``k`` backward legs.
    Translations are multiplied by ``scale`` before composing.
    """
    if mode not in APTE_MODES:
        raise ValueError(f"APTE mode must be one of {APTE_MODES}, got {mode!r}")
    forward, backward = list(forward), list(backward)
    if len(forward) != len(backward):
        raise ValueError(f"forward has {len(forward)} poses, backward {len(backward)}")
    if not forward:
        raise EmptyInputError("APTE needs at least one relative pose")
    if not scale > 0:
        raise ValueError(f"scale must be positive, got {scale}")
    n = len(forward)
    fwd = [scale_pose(T, scale) for T in forward]
    back = [scale_pose(T, scale) for T in backward]
    values = np.empty(n)
    for k in range(1, n + 1):
        legs = back[n - k:] if mode == "loopwise" else back[:k]
        loop = _chain(legs) @ _chain(fwd[:k])
        values[k - 1] = np.linalg.norm(loop.translation)
    report = ApteReport(values, mode, float(scale))
    still = sum(np.linalg.norm(T.translation) < STILL_TRANSLATION for T in forward + backward)
    if still > 0.5 * 2 * n:
        msg = (f"{still} of {2 * n} relative poses have translation below {STILL_TRANSLATION} m; "
               "APTE is trivially small for a motionless estimate")
        report.warnings.append(msg)
        warnings.warn(msg, stacklevel=2)
    return report


def split_palindrome(traj: Trajectory):
    """Forward and backward increments of a trajectory over a palindrome.

    The middle transition joins two copies of the same frame and belongs
    to neither half.
    """
    if len(traj) % 2 or len(traj) < 4:
        raise ValueError(f"a palindrome trajectory has an even length of at least 4, got {len(traj)}")
    rel = traj.relative_poses()
    n = len(traj) // 2
    return rel[: n - 1], rel[n:]


# ---------------------------------------------------------------------------
# palindrome datasets
# ---------------------------------------------------------------------------


def palindrome_order(n: int) -> list[int]:
    return list(range(1, n + 1)) + list(range(n, 0, -1))


def _ref(path, out: Path) -> str:
    return ABSENT if path is None else Path(os.path.relpath(path, out)).as_posix()


def palindrome(dataset_dir, out_dir) -> dict:
    """Write a looped ``1..N, N..1`` view of a dataset into ``out_dir``.

    Rasters of the source are referenced, not copied. Flow and inverse-depth
    labels of the reversed half are rendered again from ``scene.json`` when
    the source has one; otherwise they are marked absent.
    """
    src = Dataset(dataset_dir)
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    n = len(src)
    order = palindrome_order(n)
    scene = load_scene(src.root)
    files = [REMAP_FILE, "intrinsics.txt"]
    lines = ["# position ordinal depth flow invdepth"]
    for p, ordinal in enumerate(order):
        ref = src.frames[ordinal - 1]
        flow = inv = ABSENT
        if p < n - 1:
            flow, inv = _ref(ref.flow, out), _ref(ref.invdepth, out)
        elif p < 2 * n - 1 and scene is not None:
            target = order[p + 1] - 1
            try:
                labels = render_frame(scene, ordinal - 1, target=target)
            except ValueError as exc:
                raise OSError(f"{src.root}: cannot render palindrome position {p}: {exc}") from exc
            flow = f"pal_{p:06d}.flow.drkr"
            inv = f"pal_{p:06d}.invdepth.drkr"
            write_raster(out / flow, labels.flow_to_next)
            write_raster(out / inv, labels.invdepth_to_next)
            files += [flow, inv]
        lines.append(f"{p} {ordinal} {_ref(ref.depth, out)} {flow} {inv}")
    try:
        (out / REMAP_FILE).write_text("\n".join(lines) + "\n", encoding="utf-8")
        src.intrinsics.save(out / "intrinsics.txt")
        gt = src.ground_truth()
        if gt is not None:
            pos = {int(f): i for i, f in enumerate(gt.frame_ids)}
            poses = [gt.poses[pos[src.frames[o - 1].position]] for o in order]
            Trajectory(range(2 * n), poses).save(out / "trajectory_gt.txt")
            files.append("trajectory_gt.txt")
        header = [f"source {_ref(src.root, out)}", f"frames {2 * n}"]
        return write_manifest(out, files, header=header)
    except (OSError, KeyError) as exc:
        raise OSError(f"cannot write palindrome into {out}: {exc}") from exc


# ---------------------------------------------------------------------------
# CSV output
# ---------------------------------------------------------------------------


def _write_rows(path, header, rows) -> None:
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            writer.writerows(rows)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def write_apte_csv(path, report: ApteReport) -> None:
    rows = [(k, repr(v)) for k, v in report.profile]
    rows.append(("mean", repr(report.mean)))
    _write_rows(path, ("k", "apte_k"), rows)


def write_metrics_csv(path, rows) -> None:
    """``rows`` of ``(metric, value, unit)``."""
    def fmt(v):
        return str(int(v)) if isinstance(v, (int, np.integer)) else repr(float(v))

    _write_rows(path, ("metric", "value", "unit"), [(m, fmt(v), u) for m, v, u in rows])
