"""Point clouds: timestamped lidar returns, voxel downsampling, PCSTREAM I/O.

Clouds are stored as flat numpy arrays for speed; the scalar `Point` type is a
convenience view for single-return code paths and tests.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import BinaryIO, Optional

import numpy as np

from .geometry import Pose3

# 21 bits per axis packed into one int64 voxel key; cells are anchored at the
# world origin so identical inputs always land in identical cells.
_KEY_BITS = 21
_KEY_OFFSET = 1 << (_KEY_BITS - 1)
_KEY_LIMIT = (1 << _KEY_BITS) - 1


@dataclass(frozen=True)
class Point:
    """A single lidar return."""

    position: np.ndarray
    timestamp: float = 0.0
    normal: Optional[np.ndarray] = None

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=np.float64).reshape(3))
        if self.normal is not None:
            n = np.asarray(self.normal, dtype=np.float64).reshape(3)
            if abs(np.linalg.norm(n) - 1.0) > 1e-6:
                raise ValueError("point normal must have unit norm")
            object.__setattr__(self, "normal", n)


@dataclass
class PointCloud:
    """Ordered lidar returns with per-point timestamps and optional normals.

    `stamps` are absolute seconds and must lie within [stamp, stamp + scan_period]
    for a physical scan; normals rows are NaN where no estimate exists.
    """

    xyz: np.ndarray
    stamps: np.ndarray
    stamp: float = 0.0
    frame: str = ""
    normals: Optional[np.ndarray] = None

    def __post_init__(self):
        self.xyz = np.asarray(self.xyz, dtype=np.float64).reshape(-1, 3)
        self.stamps = np.asarray(self.stamps, dtype=np.float64).reshape(-1)
        if self.stamps.shape[0] != self.xyz.shape[0]:
            raise ValueError("stamps length must match point count")
        if self.normals is not None:
            self.normals = np.asarray(self.normals, dtype=np.float64).reshape(-1, 3)
            if self.normals.shape[0] != self.xyz.shape[0]:
                raise ValueError("normals length must match point count")

    def __len__(self) -> int:
        return self.xyz.shape[0]

    @staticmethod
    def empty(stamp: float = 0.0, frame: str = "") -> "PointCloud":
        return PointCloud(np.zeros((0, 3)), np.zeros(0), stamp=stamp, frame=frame)

    @staticmethod
    def from_points(points: list[Point], stamp: float = 0.0, frame: str = "") -> "PointCloud":
        if not points:
            return PointCloud.empty(stamp, frame)
        xyz = np.stack([p.position for p in points])
        stamps = np.array([p.timestamp for p in points])
        normals = None
        if any(p.normal is not None for p in points):
            normals = np.full((len(points), 3), np.nan)
            for i, p in enumerate(points):
                if p.normal is not None:
                    normals[i] = p.normal
        return PointCloud(xyz, stamps, stamp=stamp, frame=frame, normals=normals)

    def validate_stamps(self, scan_period: float) -> bool:
        if len(self) == 0:
            return True
        lo, hi = self.stamps.min(), self.stamps.max()
        return lo >= self.stamp - 1e-9 and hi <= self.stamp + scan_period + 1e-9

    def transformed(self, pose: Pose3, frame: str = "") -> "PointCloud":
        """Express the cloud in the parent frame of `pose`."""
        normals = None if self.normals is None else pose.rotate(self.normals)
        return PointCloud(
            pose.apply(self.xyz), self.stamps.copy(), stamp=self.stamp,
            frame=frame or self.frame, normals=normals,
        )

    def concatenated(self, other: "PointCloud") -> "PointCloud":
        if len(self) == 0:
            return other
        if len(other) == 0:
            return self
        normals = None
        if self.normals is not None or other.normals is not None:
            a = self.normals if self.normals is not None else np.full((len(self), 3), np.nan)
            b = other.normals if other.normals is not None else np.full((len(other), 3), np.nan)
            normals = np.vstack([a, b])
        return PointCloud(
            np.vstack([self.xyz, other.xyz]),
            np.concatenate([self.stamps, other.stamps]),
            stamp=self.stamp, frame=self.frame, normals=normals,
        )

    def masked(self, mask: np.ndarray) -> "PointCloud":
        normals = None if self.normals is None else self.normals[mask]
        return PointCloud(self.xyz[mask], self.stamps[mask], stamp=self.stamp,
                          frame=self.frame, normals=normals)


def voxel_keys(xyz: np.ndarray, voxel_size: float) -> np.ndarray:
    """Packed int64 cell keys for each point, cells anchored at the world origin."""
    idx = np.floor(xyz / voxel_size).astype(np.int64)
    if np.any(np.abs(idx) > _KEY_OFFSET - 1):
        raise ValueError("point coordinates exceed the voxel key range")
    shifted = idx + _KEY_OFFSET
    return (shifted[:, 0] << (2 * _KEY_BITS)) | (shifted[:, 1] << _KEY_BITS) | shifted[:, 2]


def voxel_downsample(cloud: PointCloud, voxel_size: float) -> PointCloud:
    """One point per occupied voxel: the centroid of the cell's inputs.

    Normals are averaged over the cell's finite entries and renormalized; a
    cell with no usable normal gets NaN. Output is ordered by cell key, so the
    operation is deterministic and idempotent.
    """
    if voxel_size <= 0:
        raise ValueError("voxel_size must be positive")
    n = len(cloud)
    if n == 0:
        return cloud
    keys = voxel_keys(cloud.xyz, voxel_size)
    uniq, inverse = np.unique(keys, return_inverse=True)
    m = uniq.shape[0]
    counts = np.bincount(inverse, minlength=m).astype(np.float64)
    xyz = np.stack(
        [np.bincount(inverse, weights=cloud.xyz[:, k], minlength=m) for k in range(3)],
        axis=1,
    ) / counts[:, None]
    stamps = np.bincount(inverse, weights=cloud.stamps, minlength=m) / counts

    normals = None
    if cloud.normals is not None:
        valid = np.isfinite(cloud.normals).all(axis=1)
        nfill = np.where(valid[:, None], cloud.normals, 0.0)
        sums = np.stack(
            [np.bincount(inverse, weights=nfill[:, k], minlength=m) for k in range(3)],
            axis=1,
        )
        norms = np.linalg.norm(sums, axis=1)
        normals = np.full((m, 3), np.nan)
        ok = norms > 1e-9
        normals[ok] = sums[ok] / norms[ok, None]
    return PointCloud(xyz, stamps, stamp=cloud.stamp, frame=cloud.frame, normals=normals)


# ---------------------------------------------------------------------------
# PCSTREAM v1: one text header line, then little-endian float32 records
# (x, y, z, t) in point order. Used by the replay tools, debug dumps and the
# ground-control downlink.

_HEADER_RE = re.compile(rb"^PCSTREAM v1 count=(\d+) stamp=([-0-9.eE+]+)\n$")


def write_pcstream(fp: BinaryIO, cloud: PointCloud) -> None:
    fp.write(f"PCSTREAM v1 count={len(cloud)} stamp={cloud.stamp:.9g}\n".encode("ascii"))
    rec = np.empty((len(cloud), 4), dtype="<f4")
    rec[:, :3] = cloud.xyz
    rec[:, 3] = cloud.stamps
    fp.write(rec.tobytes())


def read_pcstream(fp: BinaryIO) -> PointCloud:
    header = fp.readline()
    m = _HEADER_RE.match(header)
    if not m:
        raise ValueError(f"not a PCSTREAM v1 header: {header!r}")
    count = int(m.group(1))
    stamp = float(m.group(2))
    raw = fp.read(count * 16)
    if len(raw) != count * 16:
        raise ValueError("PCSTREAM record block truncated")
    rec = np.frombuffer(raw, dtype="<f4").reshape(count, 4)
    return PointCloud(rec[:, :3].astype(np.float64), rec[:, 3].astype(np.float64), stamp=stamp)


def pcstream_bytes(cloud: PointCloud) -> bytes:
    import io

    buf = io.BytesIO()
    write_pcstream(buf, cloud)
    return buf.getvalue()


def pcstream_from_bytes(data: bytes) -> PointCloud:
    import io

    return read_pcstream(io.BytesIO(data))
