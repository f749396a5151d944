"""Read access to a generated sequence directory.

Two layouts are understood. A plain sequence holds ``frame_%06d.<kind>.drkr``
rasters next to ``intrinsics.txt``; frame ``t`` carries the flow towards
``t + 1``. A palindrome directory instead holds ``palindrome.txt``, which
maps every position of the looped sequence to raster files elsewhere.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from .camera import DepthMap, FlowField, Intrinsics, InverseDepthMap, read_raster
from .synth import frame_file
from .trajectory import Trajectory

REMAP_FILE = "palindrome.txt"
ABSENT = "-"


class DatasetError(OSError):
    pass


@dataclass(frozen=True)
class FrameRef:
    position: int
    ordinal: int  # 1-based index of the source frame
    depth: Path
    flow: Path | None  # towards position + 1
    invdepth: Path | None


def _opt(root: Path, name: str) -> Path | None:
    return None if name == ABSENT else root / name


class Dataset:
    def __init__(self, root, flow_dir=None):
        self.root = Path(root)
        if not self.root.is_dir():
            raise DatasetError(f"dataset directory {self.root} does not exist")
        try:
            self.intrinsics = Intrinsics.load(self.root / "intrinsics.txt")
        except (OSError, ValueError) as exc:
            raise DatasetError(f"{self.root}: cannot read intrinsics: {exc}") from exc
        if (self.root / REMAP_FILE).exists():
            self.frames = self._read_remap()
        else:
            self.frames = self._scan()
        if len(self.frames) < 1:
            raise DatasetError(f"{self.root}: no frames found")
        self.flow_dir = Path(flow_dir) if flow_dir is not None else None

    def _scan(self) -> list[FrameRef]:
        frames = []
        t = 0
        while (self.root / frame_file(t, "depth")).exists():
            flow = self.root / frame_file(t, "flow")
            inv = self.root / frame_file(t, "invdepth")
            frames.append(FrameRef(t, t + 1, self.root / frame_file(t, "depth"),
                                   flow if flow.exists() else None, inv if inv.exists() else None))
            t += 1
        return frames

    def _read_remap(self) -> list[FrameRef]:
        frames = []
        path = self.root / REMAP_FILE
        for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 5:
                raise DatasetError(f"{path}:{lineno}: expected 5 fields")
            pos, ordinal = int(parts[0]), int(parts[1])
            frames.append(FrameRef(pos, ordinal, self.root / parts[2], _opt(self.root, parts[3]),
                                   _opt(self.root, parts[4])))
        return frames

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def frame_ids(self) -> list[int]:
        return [f.position for f in self.frames]

    def _read(self, i: int, path: Path | None, kind: str, cls):
        if path is None:
            raise DatasetError(f"frame {i}: no {kind} raster in {self.root}")
        try:
            raster = read_raster(path)
        except (OSError, ValueError) as exc:
            raise DatasetError(f"frame {i}: {exc}") from exc
        if not isinstance(raster, cls):
            raise DatasetError(f"frame {i}: {path} holds {type(raster).__name__}, expected {cls.__name__}")
        if raster.shape != self.intrinsics.shape:
            raise DatasetError(f"frame {i}: {path} does not match the intrinsics size")
        return raster

    def depth(self, i: int) -> DepthMap:
        return self._read(i, self.frames[i].depth, "depth", DepthMap)

    def oracle_flow(self, i: int) -> FlowField:
        return self._read(i, self.frames[i].flow, "flow", FlowField)

    def oracle_invdepth(self, i: int) -> InverseDepthMap:
        return self._read(i, self.frames[i].invdepth, "invdepth", InverseDepthMap)

    def file_flow(self, i: int) -> FlowField:
        """External flow raster ``<flow_dir>/frame_%06d.flow.drkr`` for position ``i``."""
        base = self.flow_dir if self.flow_dir is not None else self.root / "flow"
        return self._read(i, base / frame_file(self.frames[i].position, "flow"), "flow", FlowField)

    def ground_truth(self) -> Trajectory | None:
        path = self.root / "trajectory_gt.txt"
        return Trajectory.load(path) if path.exists() else None
