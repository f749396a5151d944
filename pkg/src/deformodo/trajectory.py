"""Frame-indexed camera trajectories and their text format.

One pose per line: ``frame_id tx ty tz qx qy qz qw`` (world-from-camera),
whitespace separated, ``#`` starts a comment.
"""
from __future__ import annotations

from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .geometry import RigidTransform, se3_compose, se3_inverse


class Trajectory:
    def __init__(self, frame_ids: Iterable[int], poses: Sequence[RigidTransform]):
        ids = np.asarray(list(frame_ids), dtype=np.int64)
        poses = list(poses)
        if len(ids) != len(poses):
            raise ValueError(f"{len(ids)} frame ids for {len(poses)} poses")
        if len(ids) > 1 and np.any(np.diff(ids) <= 0):
            raise ValueError("frame ids must be strictly increasing")
        self.frame_ids = ids
        self.poses = poses

    @classmethod
    def from_arrays(cls, frame_ids, quats, trans) -> Trajectory:
        return cls(frame_ids, [RigidTransform(q, t) for q, t in zip(quats, trans)])

    @classmethod
    def from_relative(cls, relative: Sequence[RigidTransform], frame_ids=None, start=None) -> Trajectory:
        """Chain increments ``pose[k] = pose[k-1] o relative[k-1]`` from ``start``."""
        pose = start or RigidTransform.identity()
        poses = [pose]
        for rel in relative:
            pose = pose @ rel
            poses.append(pose)
        if frame_ids is None:
            frame_ids = range(len(poses))
        return cls(frame_ids, poses)

    def __len__(self) -> int:
        return len(self.poses)

    def __getitem__(self, i) -> RigidTransform:
        return self.poses[i]

    @property
    def quats(self) -> np.ndarray:
        return np.array([p.rotation for p in self.poses]).reshape(-1, 4)

    @property
    def positions(self) -> np.ndarray:
        return np.array([p.translation for p in self.poses]).reshape(-1, 3)

    def relative_poses(self) -> list[RigidTransform]:
        """Increments ``pose[k-1]^-1 o pose[k]``."""
        q, t = self.quats, self.positions
        qi, ti = se3_inverse(q[:-1], t[:-1])
        rq, rt = se3_compose(qi, ti, q[1:], t[1:])
        return [RigidTransform(a, b) for a, b in zip(rq, rt)]

    def left_compose(self, G: RigidTransform) -> Trajectory:
        return Trajectory(self.frame_ids, [G @ p for p in self.poses])

    def subset(self, frame_ids) -> Trajectory:
        index = {int(f): i for i, f in enumerate(self.frame_ids)}
        ids = [int(f) for f in frame_ids]
        return Trajectory(ids, [self.poses[index[f]] for f in ids])

    def save(self, path, header: str | None = None) -> None:
        lines = []
        if header:
            lines.extend(f"# {h}" for h in header.splitlines())
        lines.append("# frame_id tx ty tz qx qy qz qw")
        for fid, pose in zip(self.frame_ids, self.poses):
            vals = list(pose.translation) + list(pose.rotation)
            lines.append(f"{int(fid)} " + " ".join(repr(float(v)) for v in vals))
        try:
            Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
        except OSError as exc:
            raise OSError(f"cannot write trajectory {path}: {exc}") from exc

    @classmethod
    def load(cls, path) -> Trajectory:
        rows = []
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise OSError(f"cannot read trajectory {path}: {exc}") from exc
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 8:
                raise ValueError(f"{path}:{lineno}: expected 8 fields, got {len(parts)}")
            rows.append((int(parts[0]), [float(x) for x in parts[1:]]))
        # line order in the file is irrelevant; frame ids define the order
        rows.sort(key=lambda r: r[0])
        ids = [r[0] for r in rows]
        if len(set(ids)) != len(ids):
            raise ValueError(f"{path}: duplicate frame ids")
        return cls(ids, [RigidTransform(v[3:], v[:3]) for _, v in rows])
