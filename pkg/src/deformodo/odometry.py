"""Frame-to-frame deformable odometry and the training-loss scorer.

Each frame pair is handled by an outer loop: correspondences of the current
field give the pixels at which frame two's inverse depth is sampled, the
field solver refines the field, and the camera motion is re-extracted as
the field's geometric median. Relative poses map camera-``t`` points into
camera ``t + 1``; absolute poses chain as ``pose[t+1] = pose[t] o Tc^-1``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .camera import (
    DepthMap,
    FlowField,
    Intrinsics,
    InverseDepthMap,
    bilinear_sample,
    check_same_domain,
    correspondence_map,
)
from .dataset import Dataset
from .flowsolver import (
    SolverConfig,
    SolverDivergenceError,
    WeightMap,
    decompose,
    estimate_camera,
    residuals,
    solve_field,
)
from .geometry import RigidTransform, TransformField, log_se3
from .trajectory import Trajectory

FLOW_SOURCES = ("oracle", "file")
INIT_MODES = ("identity", "previous")
DIAGNOSTICS_HEADER = ("frame", "cost", "td_p50", "td_p90", "iters")


class UnavailableLabelError(ValueError):
    pass


@dataclass(frozen=True)
class LossWeights:
    w1: float = 0.2  # intermediate flow
    w2: float = 100.0  # inverse depth
    w3: float = 200.0  # camera pose per iteration
    w4: float = 6.0  # initial camera pose
    gamma: float = 0.8

    def validate(self) -> None:
        if min(self.w1, self.w2, self.w3, self.w4) < 0:
            raise ValueError("loss weights must be non-negative")
        if not 0 < self.gamma <= 1:
            raise ValueError(f"gamma must lie in (0, 1], got {self.gamma}")


@dataclass
class OdometryConfig:
    iterations: int = 12
    flow_source: str = "oracle"
    init_mode: str = "identity"
    solver: SolverConfig = field(default_factory=SolverConfig)
    loss_weights: LossWeights = field(default_factory=LossWeights)
    # inverse depth is interpolated from frame two and far less exact than
    # flow; its residual weight relative to a flow pixel
    depth_weight: float = 1e-3
    stop_tol: float = 1e-4  # relative cost change that ends the outer loop early

    def validate(self) -> None:
        if not isinstance(self.iterations, (int, np.integer)) or self.iterations < 1:
            raise ValueError(f"iterations must be a positive integer, got {self.iterations!r}")
        if self.flow_source not in FLOW_SOURCES:
            raise ValueError(f"flow_source must be one of {FLOW_SOURCES}, got {self.flow_source!r}")
        if self.init_mode not in INIT_MODES:
            raise ValueError(f"init_mode must be one of {INIT_MODES}, got {self.init_mode!r}")
        if not self.depth_weight >= 0:
            raise ValueError("depth_weight must be non-negative")
        self.solver.validate()
        self.loss_weights.validate()


@dataclass
class IterationRecord:
    """Quantities of one outer iteration as scored by :func:`diagnostic_loss`."""

    flow: FlowField
    invdepth: InverseDepthMap
    camera: RigidTransform
    cost: float
    flow_pre: FlowField | None = None


@dataclass
class FrameEstimate:
    relative_pose: RigidTransform
    deformation: TransformField
    final_cost: float
    iterations_run: int
    scene_flow: TransformField | None = None
    init_pose: RigidTransform | None = None
    records: list = field(default_factory=list)
    residual_stats: dict = field(default_factory=dict)

    @property
    def costs(self) -> list[float]:
        return [r.cost for r in self.records]


def _sample_target(intr: Intrinsics, inv2: InverseDepthMap, flow: FlowField) -> InverseDepthMap:
    u, v = intr.pixel_grid()
    corr = np.stack([u, v], axis=1).reshape(intr.shape + (2,)) + flow.data
    vals, ok = bilinear_sample(inv2, corr)
    ok &= flow.valid
    return InverseDepthMap(np.where(ok, vals[..., 0], np.nan), ok)


def estimate_pair(intr: Intrinsics, depth1: DepthMap, depth2: DepthMap, target_flow: FlowField,
                  cfg: OdometryConfig | None = None, init: RigidTransform | None = None,
                  frame: int | None = None) -> FrameEstimate:
    """Camera motion and deformation field between two frames.

    ``init`` is the constant field the loop starts from (identity if omitted).
    """
    cfg = cfg or OdometryConfig()
    cfg.validate()
    check_same_domain(intr, depth1, depth2, target_flow)
    init = init or RigidTransform.identity()
    w, h = intr.width, intr.height
    F = TransformField.constant(init, w, h)
    inv2 = depth2.inverse()
    records = []
    camera = init
    weights = None
    for k in range(cfg.iterations):
        flow_k, _ = correspondence_map(intr, depth1, F)
        target_inv = _sample_target(intr, inv2, flow_k)
        weights = WeightMap.from_validity(target_flow, target_inv, shape=intr.shape,
                                          depth_weight=cfg.depth_weight)
        try:
            F_new = solve_field(intr, depth1, target_flow, target_inv, weights=weights, init=F, cfg=cfg.solver)
        except SolverDivergenceError as exc:
            where = "" if frame is None else f"frame {frame}: "
            raise SolverDivergenceError(f"{where}{exc}", exc.last_field) from exc
        cost, _ = residuals(intr, depth1, F_new, target_flow, target_inv, weights, cfg.solver)
        if records and not cost < records[-1].cost:
            # resampled targets no longer improve the fit; keep the previous iterate
            break
        F = F_new
        if np.any(weights.data > 0):
            camera = estimate_camera(F, weights)
        flow_out, inv_out = correspondence_map(intr, depth1, F)
        records.append(IterationRecord(flow_out, inv_out, camera, cost))
        if len(records) > 1 and records[-2].cost - cost <= cfg.stop_tol * records[-2].cost:
            break
    dec = decompose(F, camera)
    return FrameEstimate(
        relative_pose=camera,
        deformation=dec.deformation,
        final_cost=records[-1].cost,
        iterations_run=len(records),
        scene_flow=F,
        init_pose=init,
        records=records,
        residual_stats=dec.residual_stats,
    )


def run_sequence(dataset_dir, cfg: OdometryConfig | None = None, diagnostics=None,
                 estimates: list | None = None, flow_dir=None) -> Trajectory:
    """Track a whole sequence; returns world-from-camera poses starting at identity.

    ``diagnostics`` (a path) receives one CSV row per frame pair;
    ``estimates`` (a list) collects every :class:`FrameEstimate`.
    """
    cfg = cfg or OdometryConfig()
    cfg.validate()
    data = dataset_dir if isinstance(dataset_dir, Dataset) else Dataset(dataset_dir, flow_dir=flow_dir)
    intr = data.intrinsics
    n = len(data)
    poses = [RigidTransform.identity()]
    rows = []
    prev = None
    depth1 = data.depth(0)
    for i in range(n - 1):
        depth2 = data.depth(i + 1)
        flow = data.oracle_flow(i) if cfg.flow_source == "oracle" else data.file_flow(i)
        init = prev if (cfg.init_mode == "previous" and prev is not None) else None
        est = estimate_pair(intr, depth1, depth2, flow, cfg, init=init, frame=i)
        prev = est.relative_pose
        poses.append(poses[-1] @ est.relative_pose.inverse())
        stats = est.residual_stats
        rows.append((data.frames[i].position, est.final_cost, stats["p50"], stats["p90"], est.iterations_run))
        if estimates is not None:
            estimates.append(est)
        depth1 = depth2
    if diagnostics is not None:
        write_diagnostics(diagnostics, rows)
    return Trajectory(data.frame_ids, poses)


def write_diagnostics(path, rows) -> None:
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(DIAGNOSTICS_HEADER)
            for frame, cost, p50, p90, iters in rows:
                writer.writerow([int(frame), repr(float(cost)), repr(float(p50)), repr(float(p90)), int(iters)])
    except OSError as exc:
        raise OSError(f"cannot write diagnostics {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# training loss as a diagnostic
# ---------------------------------------------------------------------------


@dataclass
class GroundTruthPair:
    flow: FlowField
    invdepth: InverseDepthMap
    camera: RigidTransform


def _l1_flow(est: FlowField, gt: FlowField) -> float:
    ok = est.valid & gt.valid
    return float(np.abs(est.data[ok] - gt.data[ok]).sum())


def _pose_l1(est: RigidTransform, gt: RigidTransform) -> float:
    if np.array_equal(est.rotation, gt.rotation) and np.array_equal(est.translation, gt.translation):
        return 0.0  # est o gt^-1 would round to a few ulps off the identity
    return float(np.abs(log_se3(est @ gt.inverse()).vector).sum())


LOSS_TERMS = ("pose_pre", "flow", "flow_pre", "depth", "pose")


def diagnostic_loss(records, gt: GroundTruthPair, weights: LossWeights | None = None,
                    camera_pre: RigidTransform | None = None):
    """Weighted sum of flow, inverse-depth and pose errors over the outer iterations.

    Iteration ``k`` of ``M`` is weighted by ``gamma^(M-k)``. Flow and
    inverse-depth terms are L1 sums over pixels valid in both estimate and
    ground truth. Returns ``(total, breakdown)`` where ``total`` is the sum
    of the breakdown values in :data:`LOSS_TERMS` order.
    """
    weights = weights or LossWeights()
    weights.validate()
    if gt is None or gt.flow is None or gt.invdepth is None or gt.camera is None:
        raise UnavailableLabelError("ground-truth flow, inverse depth and camera motion are required")
    records = list(records)
    M = len(records)
    parts = dict.fromkeys(LOSS_TERMS, 0.0)
    if camera_pre is not None:
        parts["pose_pre"] = weights.w4 * _pose_l1(camera_pre, gt.camera)
    for k, rec in enumerate(records, 1):
        g = weights.gamma ** (M - k)
        parts["flow"] += g * _l1_flow(rec.flow, gt.flow)
        if rec.flow_pre is not None:
            parts["flow_pre"] += g * weights.w1 * _l1_flow(rec.flow_pre, gt.flow)
        ok = rec.invdepth.valid & gt.invdepth.valid
        parts["depth"] += g * weights.w2 * float(np.abs(rec.invdepth.values[ok] - gt.invdepth.values[ok]).sum())
        parts["pose"] += g * weights.w3 * _pose_l1(rec.camera, gt.camera)
    total = 0.0
    for name in LOSS_TERMS:
        total += parts[name]
    return total, parts


def pair_loss(est: FrameEstimate, gt: GroundTruthPair, weights: LossWeights | None = None):
    return diagnostic_loss(est.records, gt, weights, camera_pre=est.init_pose)
