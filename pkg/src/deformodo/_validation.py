"""Argument checks shared by the estimator wrappers."""
from __future__ import annotations

from .camera import DepthMap, FlowField, Intrinsics, InverseDepthMap, check_same_domain
from .trajectory import Trajectory


def check_instance(value, cls, name: str, optional: bool = False):
    if value is None and optional:
        return None
    if not isinstance(value, cls):
        raise TypeError(f"{name} must be {cls.__name__}, got {type(value).__name__}")
    return value


def check_pair(X, need_depth2: bool = False, need_invdepth: bool = False):
    """Validate a :class:`~deformodo.estimators.FramePair`-like object."""
    for attr in ("intrinsics", "depth1", "flow"):
        if not hasattr(X, attr):
            raise TypeError(f"expected a FramePair, got {type(X).__name__} without {attr!r}")
    check_instance(X.intrinsics, Intrinsics, "intrinsics")
    check_instance(X.depth1, DepthMap, "depth1")
    check_instance(X.flow, FlowField, "flow")
    inv = check_instance(getattr(X, "invdepth", None), InverseDepthMap, "invdepth", optional=not need_invdepth)
    d2 = check_instance(getattr(X, "depth2", None), DepthMap, "depth2", optional=not need_depth2)
    check_same_domain(X.intrinsics, *[r for r in (X.depth1, X.flow, inv, d2) if r is not None])
    return X


def check_trajectory(traj, name: str) -> Trajectory:
    check_instance(traj, Trajectory, name)
    if len(traj) < 2:
        raise ValueError(f"{name} needs at least two poses")
    return traj
