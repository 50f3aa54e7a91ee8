"""Scan-to-local-map lidar odometry.

Point-to-point associations drive the solve, but each residual is weighted by
the map normal's outer product blended with an isotropic floor, which recovers
most of the convergence behaviour of point-to-plane. A robust loss (Cauchy by
default) rejects points with no counterpart in the map, e.g. the carried cargo
matching against cargo-free maps.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from .geometry import Pose3, compose, invert, quat_from_axis_angle
from .pointcloud import PointCloud, voxel_downsample, voxel_keys


@dataclass
class IcpConfig:
    max_iterations: int = 30
    convergence_translation: float = 1e-3
    convergence_rotation: float = 1e-3
    robust_loss: str = "cauchy"          # cauchy | huber
    robust_scale: float = 0.3            # meters
    max_correspondence_dist: float = 2.5
    normal_neighbors: int = 12
    normal_blend: float = 0.01           # isotropic floor added to n n^T
    max_correspondences: int = 5000      # deterministic stride cap per iteration
    prior_stiffness: float = 0.0         # weak pull toward the prior; stabilizes
                                         # directions the scene does not constrain

    def __post_init__(self):
        for name in ("max_iterations", "convergence_translation", "convergence_rotation",
                     "robust_scale", "max_correspondence_dist", "normal_neighbors",
                     "normal_blend", "max_correspondences"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.prior_stiffness < 0:
            raise ValueError("prior_stiffness must be >= 0")
        if self.robust_loss not in ("cauchy", "huber"):
            raise ValueError("robust_loss must be 'cauchy' or 'huber'")


@dataclass
class OdomResult:
    pose: Pose3
    iterations: int
    inlier_fraction: float
    runtime: float
    converged: bool
    n_attempted: int = 0
    cost_history: list[float] = field(default_factory=list)


@dataclass
class LocalMap:
    """Accumulated recent scans, cropped around the rover, one point per voxel."""

    cloud: PointCloud
    origin: Pose3 = field(default_factory=Pose3)
    radius: float = 40.0
    voxel_size: float = 0.2
    _keys: Optional[np.ndarray] = None
    _tree: Optional[cKDTree] = None

    def __len__(self) -> int:
        return len(self.cloud)

    @staticmethod
    def empty(radius: float = 40.0, voxel_size: float = 0.2) -> "LocalMap":
        return LocalMap(PointCloud.empty(frame="odom"), Pose3.identity(), radius, voxel_size)

    def keys(self) -> np.ndarray:
        if self._keys is None:
            self._keys = voxel_keys(self.cloud.xyz, self.voxel_size)
        return self._keys

    def tree(self) -> cKDTree:
        if self._tree is None:
            self._tree = cKDTree(self.cloud.xyz, balanced_tree=False, compact_nodes=False)
        return self._tree


def estimate_normals(cloud: PointCloud, k: int) -> PointCloud:
    """Per-point normals from the k-nearest-neighbour covariance.

    The smallest-eigenvector normal is oriented toward the sensor origin of the
    cloud's frame. Degenerate neighbourhoods (rank < 2) get NaN normals.
    """
    if k < 3:
        raise ValueError("k must be at least 3")
    n = len(cloud)
    if n == 0:
        return cloud
    kk = min(k, n)
    tree = cKDTree(cloud.xyz, balanced_tree=False, compact_nodes=False)
    _, idx = tree.query(cloud.xyz, k=kk)
    if kk == 1:
        idx = idx[:, None]
    neigh = cloud.xyz[idx]
    mean = neigh.mean(axis=1, keepdims=True)
    d = neigh - mean
    cov = np.einsum("nki,nkj->nij", d, d) / kk
    w, v = np.linalg.eigh(cov)
    normals = v[:, :, 0]
    # rank < 2: the two smallest eigenvalues both vanish
    degenerate = w[:, 1] <= 1e-12 + 1e-8 * np.maximum(w[:, 2], 0.0)
    flip = np.einsum("ni,ni->n", normals, cloud.xyz) > 0
    normals = np.where(flip[:, None], -normals, normals)
    normals = np.where(degenerate[:, None], np.nan, normals)
    return PointCloud(cloud.xyz, cloud.stamps, stamp=cloud.stamp, frame=cloud.frame,
                      normals=normals)


def _skew(v: np.ndarray) -> np.ndarray:
    return np.array([
        [0.0, -v[2], v[1]],
        [v[2], 0.0, -v[0]],
        [-v[1], v[0], 0.0],
    ])


def _robust_weight(r: np.ndarray, cfg: IcpConfig) -> np.ndarray:
    c = cfg.robust_scale
    if cfg.robust_loss == "cauchy":
        return 1.0 / (1.0 + (r / c) ** 2)
    return np.minimum(1.0, c / np.maximum(r, 1e-12))


def _robust_cost(r: np.ndarray, cfg: IcpConfig) -> float:
    c = cfg.robust_scale
    if cfg.robust_loss == "cauchy":
        return float(0.5 * c * c * np.log1p((r / c) ** 2).sum())
    quad = r <= c
    return float((0.5 * r[quad] ** 2).sum() + (c * (np.abs(r[~quad]) - 0.5 * c)).sum())


def register_scan(scan: PointCloud, local_map: LocalMap, prior: Pose3,
                  cfg: Optional[IcpConfig] = None) -> OdomResult:
    """Robust point-to-point ICP of `scan` against the map, seeded at `prior`.

    Returns the scan (body) pose in the map frame. Fewer than 10 usable
    correspondences means a failure result: not converged, pose kept at the
    prior, so the caller can fall back to dead reckoning.
    """
    cfg = cfg or IcpConfig()
    t_start = time.perf_counter()
    if len(local_map) == 0:
        raise ValueError("cannot register against an empty map")
    if not (np.all(np.isfinite(prior.t)) and np.all(np.isfinite(prior.q))):
        raise ValueError("prior must be finite")

    n = len(scan)
    stride = max(1, int(math.ceil(n / cfg.max_correspondences)))
    src = scan.xyz[::stride]
    attempted = src.shape[0]
    if attempted < 10:
        return OdomResult(prior, 0, 0.0, time.perf_counter() - t_start, False, attempted)

    tree = local_map.tree()
    map_pts = local_map.cloud.xyz
    map_normals = local_map.cloud.normals

    pose = prior
    lam = cfg.normal_blend

    def associate(p: Pose3):
        """Nearest-map associations plus the weighted residual norm
        r = sqrt(e^T (n n^T + lam I) e), which the robust loss acts on."""
        q = p.apply(src)
        dist, j = tree.query(q)
        valid = dist <= cfg.max_correspondence_dist
        e = map_pts[j] - q
        if map_normals is not None:
            nrm = map_normals[j]
            ok = np.isfinite(nrm).all(axis=1)
            nrm = np.where(ok[:, None], nrm, 0.0)
            lam_i = np.where(ok, lam, 1.0)
        else:
            nrm = np.zeros_like(q)
            lam_i = np.ones(len(q))
        ne = np.einsum("ni,ni->n", nrm, e)
        r = np.sqrt(lam_i * np.einsum("ni,ni->n", e, e) + ne * ne)
        cost = _robust_cost(r[valid], cfg)
        return q, j, valid, e, r, nrm, lam_i, cost

    q, j, valid, e, r, nrm_all, lam_all, cost = associate(pose)
    if int(valid.sum()) < 10:
        return OdomResult(prior, 0, 0.0, time.perf_counter() - t_start, False, attempted)

    history = [cost]
    iterations = 0
    converged = False

    eye3 = np.eye(3)
    for _ in range(cfg.max_iterations):
        vq, ve, vr = q[valid], e[valid], r[valid]
        nrm, lam_i = nrm_all[valid], lam_all[valid]
        w_rob = _robust_weight(vr, cfg)

        # W_i = w_i (n n^T + lam_i I); assembled from vector products only:
        # residual block u = W e, and the 3x3 Hessian blocks for J = [-I | [q]x]
        ne = np.einsum("ni,ni->n", nrm, ve)
        u = w_rob[:, None] * (lam_i[:, None] * ve + nrm * ne[:, None])
        b = np.cross(nrm, vq)              # n x q = (q x n)^T rows of W S
        wl = w_rob * lam_i
        H_tt = np.einsum("n,ni,nj->ij", w_rob, nrm, nrm) + wl.sum() * eye3
        WS = np.einsum("n,ni,nj->ij", w_rob, nrm, b) + _skew(wl @ vq)
        H_qq = (
            np.einsum("n,ni,nj->ij", w_rob, b, b)
            + (wl * np.einsum("ni,ni->n", vq, vq)).sum() * eye3
            - np.einsum("n,ni,nj->ij", wl, vq, vq)
        )
        H = np.block([[H_tt, -WS], [-WS.T, H_qq]])
        g = np.concatenate([-u.sum(axis=0), -np.cross(vq, u).sum(axis=0)])
        if cfg.prior_stiffness > 0:
            # small-angle pull toward the prior (motion-model anchor)
            rel = compose(pose, invert(prior))
            axis_p, angle_p = rel.axis_angle()
            r_prior = np.concatenate([pose.t - prior.t, axis_p * angle_p])
            H[np.diag_indices_from(H)] += cfg.prior_stiffness
            g += cfg.prior_stiffness * r_prior
        H[np.diag_indices_from(H)] += 1e-9
        try:
            delta = np.linalg.solve(H, -g)
        except np.linalg.LinAlgError:
            break

        small = (np.linalg.norm(delta[:3]) < cfg.convergence_translation
                 and np.linalg.norm(delta[3:]) < cfg.convergence_rotation)
        accepted = False
        for _halve in range(6):
            dt_vec = delta[:3]
            dth = delta[3:]
            angle = float(np.linalg.norm(dth))
            axis = dth / angle if angle > 1e-15 else np.array([0.0, 0.0, 1.0])
            step = Pose3(t=dt_vec, q=quat_from_axis_angle(axis, angle))
            cand = compose(step, pose)
            q2, j2, valid2, e2, r2, nrm2, lam2, cost2 = associate(cand)
            if int(valid2.sum()) >= 10 and cost2 <= cost + 1e-12:
                pose = cand
                q, j, valid, e, r, nrm_all, lam_all, cost = \
                    q2, j2, valid2, e2, r2, nrm2, lam2, cost2
                accepted = True
                break
            delta = delta * 0.5
        if small:
            # the remaining update is below both thresholds: solved
            converged = True
            if accepted:
                iterations += 1
                history.append(cost)
            break
        if not accepted:
            break
        iterations += 1
        history.append(cost)

    inliers = int((valid & (r <= cfg.robust_scale)).sum())
    return OdomResult(
        pose=pose,
        iterations=iterations,
        inlier_fraction=inliers / attempted,
        runtime=time.perf_counter() - t_start,
        converged=converged,
        n_attempted=attempted,
        cost_history=history,
    )


def update_local_map(local_map: LocalMap, scan: PointCloud, pose: Pose3) -> LocalMap:
    """Merge a scan (given its map-frame pose) and re-crop around the rover.

    New points are voxel-centroided and inserted only into unoccupied cells
    (existing cells keep their point so the map does not drift as terrain is
    re-observed); everything farther than the crop radius from the rover is
    dropped. The origin tracks the rover once it moves away from the previous
    anchor.
    """
    if not (np.all(np.isfinite(pose.t)) and np.all(np.isfinite(pose.q))):
        raise ValueError("pose must be finite")
    if len(scan) == 0:
        return local_map

    incoming = voxel_downsample(scan.transformed(pose, frame="odom"), local_map.voxel_size)
    in_keys = voxel_keys(incoming.xyz, local_map.voxel_size)

    if len(local_map) == 0:
        merged = incoming
        keys = in_keys
    else:
        keys_map = local_map.keys()
        pos = np.searchsorted(keys_map, in_keys)
        pos = np.minimum(pos, len(keys_map) - 1)
        new_mask = keys_map[pos] != in_keys
        merged = local_map.cloud.concatenated(incoming.masked(new_mask))
        keys = np.concatenate([keys_map, in_keys[new_mask]])

    center = pose.t[:2]
    keep = np.linalg.norm(merged.xyz[:, :2] - center, axis=1) <= local_map.radius
    merged = merged.masked(keep)
    keys = keys[keep]
    order = np.argsort(keys, kind="stable")
    merged = merged.masked(order)
    keys = keys[order]

    origin = local_map.origin
    if len(local_map) == 0 or np.linalg.norm(pose.t - origin.t) > 1.0:
        origin = pose
    return LocalMap(merged, origin, local_map.radius, local_map.voxel_size,
                    _keys=keys, _tree=None)
