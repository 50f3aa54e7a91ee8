"""Repeat-mode localization against teach submaps.

Each cycle the compounded transform of the last localization and the odometry
accumulated since is the prior for an ICP solve against the nearest submap.
An exponential moving average of the solve runtime decides, before a solve
starts, whether to skip it and publish dead-reckoned state instead: that is
what keeps the controller fed at 10 Hz no matter how slow localization gets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .geometry import Pose3, compose, invert
from .odometry import IcpConfig, LocalMap, OdomResult, register_scan
from .pointcloud import PointCloud
from .teach_graph import TeachGraph, metric_embedding


class LocalizationError(RuntimeError):
    pass


@dataclass(frozen=True)
class LocPrior:
    """Last accepted localization plus odometry accumulated since."""

    last_loc_pose: Pose3
    odom_since_loc: Pose3

    def seed(self) -> Pose3:
        return compose(self.last_loc_pose, self.odom_since_loc)

    def advanced(self, odom_delta: Pose3) -> "LocPrior":
        return LocPrior(self.last_loc_pose, compose(self.odom_since_loc, odom_delta))

    def reset_at(self, loc_pose: Pose3) -> "LocPrior":
        return LocPrior(loc_pose, Pose3.identity())


@dataclass(frozen=True)
class EmaState:
    ema_runtime: float = 0.0
    alpha: float = 0.1
    budget: float = 0.08

    def __post_init__(self):
        if not (0.0 < self.alpha <= 1.0):
            raise ValueError("alpha must be in (0, 1]")
        if self.ema_runtime < 0:
            raise ValueError("ema_runtime must be >= 0")


def update_ema(ema: EmaState, runtime: float) -> EmaState:
    if runtime < 0:
        raise ValueError("runtime must be >= 0")
    return replace(ema, ema_runtime=ema.alpha * runtime + (1.0 - ema.alpha) * ema.ema_runtime)


def should_skip(ema: EmaState) -> bool:
    """True when the running average exceeds the cycle budget."""
    return ema.ema_runtime > ema.budget


def select_submap(graph: TeachGraph, estimated_pose: Pose3,
                  embedding: Optional[dict[int, Pose3]] = None) -> int:
    """Nearest submap-bearing live vertex to the estimate; ties pick the lower id."""
    embedding = embedding if embedding is not None else metric_embedding(graph)
    best_id, best_d = -1, math.inf
    for vid in sorted(graph.vertices):
        v = graph.vertices[vid]
        if v.stale or v.submap_ref is None:
            continue
        d = float(np.linalg.norm(embedding[vid].t - estimated_pose.t))
        if d < best_d - 1e-12:
            best_id, best_d = vid, d
    if best_id < 0:
        raise LocalizationError("graph has no live submap-bearing vertex")
    return best_id


def localize(scan: PointCloud, submap: LocalMap, prior: LocPrior,
             cfg: Optional[IcpConfig] = None) -> tuple[OdomResult, LocPrior]:
    """ICP against a teach submap, seeded by the compounded prior.

    On success the prior resets (odometry-since-localization becomes identity);
    on failure the caller keeps dead reckoning on the unchanged prior.
    """
    result = register_scan(scan, submap, prior.seed(), cfg)
    if result.converged:
        return result, prior.reset_at(result.pose)
    return result, prior


class SubmapFollower:
    """Keeps the active submap, with handoff hysteresis so the selection does
    not oscillate near vertex midpoints."""

    def __init__(self, graph: TeachGraph, hysteresis: float = 1.0):
        self.graph = graph
        self.hysteresis = hysteresis
        self.current: Optional[int] = None

    def select(self, estimated_pose: Pose3, embedding: dict[int, Pose3]) -> int:
        candidate = select_submap(self.graph, estimated_pose, embedding)
        if self.current is None or self.current == candidate:
            self.current = candidate
            return candidate
        cur_v = self.graph.vertices.get(self.current)
        if cur_v is None or cur_v.stale or cur_v.submap_ref is None:
            self.current = candidate
            return candidate
        d_cur = float(np.linalg.norm(embedding[self.current].t - estimated_pose.t))
        d_new = float(np.linalg.norm(embedding[candidate].t - estimated_pose.t))
        if d_new < d_cur - self.hysteresis:
            self.current = candidate
        return self.current
