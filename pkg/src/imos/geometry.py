"""Rigid-body poses, scan alignment, time channels, and 4D voxel binning.

Scans arrive in their own sensor frames. Relative poses between consecutive
scans are composed into scan-to-current transforms, past scans are aligned
into the current frame, every point gets a time channel, and the aligned
points are binned into integer (x, y, z, t) voxel coordinates.

Conventions:
  * a relative pose maps the coordinates of one scan into the frame of the
    next-newer scan; ``compose_poses([T_1, T_2, ..., T_j])`` is the
    left-to-right matrix product mapping scan-j coordinates into scan-0
    coordinates,
  * past scans get negative time: a point of the j-th scan back receives
    t = -j * delta_t, the current scan t = 0,
  * voxel index = floor(value / delta + FLOOR_GUARD) per axis, so values
    like -0.3 / 0.1 = -2.999... land deterministically in bin -3.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

LABEL_UNLABELED = 0
LABEL_STATIC = 1
LABEL_MOVING = 2

ORTHONORMAL_TOL = 1e-6
FLOOR_GUARD = 1e-9


class InvalidPoseError(ValueError):
    """Matrix is not a rigid-body homogeneous transform."""


@dataclass(frozen=True)
class Pose:
    """4x4 rigid-body homogeneous transform in meters."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.shape != (4, 4):
            raise InvalidPoseError(f"pose matrix must be 4x4, got {m.shape}")
        if not np.all(np.isfinite(m)):
            raise InvalidPoseError("pose matrix contains non-finite entries")
        if not np.allclose(m[3], (0.0, 0.0, 0.0, 1.0), atol=ORTHONORMAL_TOL):
            raise InvalidPoseError(f"last row must be [0,0,0,1], got {m[3]}")
        r = m[:3, :3]
        if not np.allclose(r.T @ r, np.eye(3), atol=ORTHONORMAL_TOL):
            raise InvalidPoseError("rotation block is not orthonormal")
        if abs(np.linalg.det(r) - 1.0) > ORTHONORMAL_TOL:
            raise InvalidPoseError("rotation block must have determinant +1")
        object.__setattr__(self, "matrix", m)

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.eye(4))

    @staticmethod
    def from_rotation_translation(rotation: np.ndarray, translation: np.ndarray) -> "Pose":
        m = np.eye(4)
        m[:3, :3] = rotation
        m[:3, 3] = translation
        return Pose(m)

    @staticmethod
    def translation(x: float, y: float, z: float) -> "Pose":
        m = np.eye(4)
        m[:3, 3] = (x, y, z)
        return Pose(m)

    @staticmethod
    def rotation_z(angle: float) -> "Pose":
        c, s = np.cos(angle), np.sin(angle)
        m = np.eye(4)
        m[:2, :2] = [[c, -s], [s, c]]
        return Pose(m)

    def inverse(self) -> "Pose":
        r = self.matrix[:3, :3]
        t = self.matrix[:3, 3]
        m = np.eye(4)
        m[:3, :3] = r.T
        m[:3, 3] = -r.T @ t
        return Pose(m)

    def __matmul__(self, other: "Pose") -> "Pose":
        return Pose(self.matrix @ other.matrix)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform an (M, 3) array of points."""
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.matrix[:3, :3].T + self.matrix[:3, 3]


@dataclass
class Scan:
    """One LiDAR sweep: positions in meters, intensity in [0, 1].

    ``gt_labels``, when present, holds one of LABEL_UNLABELED / LABEL_STATIC /
    LABEL_MOVING per point. ``scan_index`` is 0 for the current scan and
    counts backwards in time.
    """

    xyz: np.ndarray
    intensity: np.ndarray
    gt_labels: np.ndarray | None = None
    scan_index: int = 0

    def __post_init__(self):
        self.xyz = np.asarray(self.xyz, dtype=np.float64).reshape(-1, 3)
        self.intensity = np.asarray(self.intensity, dtype=np.float64).reshape(-1)
        if self.intensity.shape[0] != self.xyz.shape[0]:
            raise ValueError("intensity length must match point count")
        if not np.all(np.isfinite(self.xyz)):
            raise ValueError("scan coordinates must be finite")
        if self.gt_labels is not None:
            self.gt_labels = np.asarray(self.gt_labels, dtype=np.int64).reshape(-1)
            if self.gt_labels.shape[0] != self.xyz.shape[0]:
                raise ValueError(
                    f"gt_labels has length {self.gt_labels.shape[0]}, "
                    f"scan has {self.xyz.shape[0]} points"
                )

    def __len__(self) -> int:
        return self.xyz.shape[0]

    @staticmethod
    def empty() -> "Scan":
        return Scan(np.zeros((0, 3)), np.zeros(0))


@dataclass(frozen=True)
class QuantizationConfig:
    """Voxel resolutions and input-window length."""

    delta_s: float = 0.1
    delta_t: float = 0.1
    n_scans: int = 10

    def __post_init__(self):
        if self.delta_s <= 0:
            raise ValueError("delta_s must be positive")
        if self.delta_t <= 0:
            raise ValueError("delta_t must be positive")
        if self.n_scans < 1:
            raise ValueError("n_scans must be at least 1")


@dataclass
class QuantizeResult:
    """Unique voxel coordinates plus the per-point voxel row index.

    Points with non-finite coordinates are rejected: their index is -1 and
    ``n_rejected`` reports how many were dropped.
    """

    coords: np.ndarray
    point_to_voxel: np.ndarray
    n_rejected: int = 0


def compose_poses(relatives) -> Pose:
    """Left-to-right product of relative poses; empty sequence is identity."""
    result = np.eye(4)
    for pose in relatives:
        if not isinstance(pose, Pose):
            pose = Pose(pose)
        result = result @ pose.matrix
    return Pose(result)


def align_scan(scan: Scan, pose: Pose) -> Scan:
    """Transform a scan into another frame; intensity and labels carry over."""
    labels = None if scan.gt_labels is None else scan.gt_labels.copy()
    return Scan(
        xyz=pose.apply(scan.xyz),
        intensity=scan.intensity.copy(),
        gt_labels=labels,
        scan_index=scan.scan_index,
    )


def attach_time(scan: Scan, scan_index: int, delta_t: float) -> np.ndarray:
    """Return (M, 4) rows of (x, y, z, t) with t = -scan_index * delta_t."""
    if scan_index < 0:
        raise ValueError("scan_index must be non-negative")
    t = -scan_index * delta_t
    out = np.empty((len(scan), 4), dtype=np.float64)
    out[:, :3] = scan.xyz
    out[:, 3] = t
    return out


def voxelize(values: np.ndarray, deltas: np.ndarray) -> np.ndarray:
    """floor(value / delta + guard) per component, as int64."""
    return np.floor(values / deltas + FLOOR_GUARD).astype(np.int64)


def quantize(points: np.ndarray, cfg: QuantizationConfig) -> QuantizeResult:
    """Bin (x, y, z, t) points into unique integer 4D voxel coordinates.

    Returns the deduplicated coordinates, a per-point index into them, and
    the count of rejected (non-finite) points.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 4)
    deltas = np.array([cfg.delta_s, cfg.delta_s, cfg.delta_s, cfg.delta_t])
    finite = np.all(np.isfinite(pts), axis=1)
    n_rejected = int((~finite).sum())

    point_to_voxel = np.full(pts.shape[0], -1, dtype=np.int64)
    if finite.any():
        cells = voxelize(pts[finite], deltas)
        coords, inverse = np.unique(cells, axis=0, return_inverse=True)
        point_to_voxel[finite] = inverse.reshape(-1)
    else:
        coords = np.zeros((0, 4), dtype=np.int64)
    return QuantizeResult(coords=coords, point_to_voxel=point_to_voxel, n_rejected=n_rejected)


def points_in_oriented_box(
    points: np.ndarray,
    center: np.ndarray,
    size: np.ndarray,
    yaw: float,
) -> np.ndarray:
    """Boolean mask of points inside a yaw-rotated box (boundary inclusive).

    The box frame is reached by rotating by -yaw about z around the center;
    membership is |local| <= size/2 on every axis.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    local = pts - np.asarray(center, dtype=np.float64)
    c, s = np.cos(-yaw), np.sin(-yaw)
    lx = c * local[:, 0] - s * local[:, 1]
    ly = s * local[:, 0] + c * local[:, 1]
    lz = local[:, 2]
    half = np.asarray(size, dtype=np.float64) / 2.0
    return (np.abs(lx) <= half[0]) & (np.abs(ly) <= half[1]) & (np.abs(lz) <= half[2])
