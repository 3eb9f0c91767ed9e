"""Rigid-body pose algebra for movable antenna surfaces.

A surface is a small rigid array of ``N`` antennas.  Its pose is a center
``q`` and three rotation angles ``u = (alpha, beta, gamma)``; antenna ``n``
sits at ``q + R(u) @ r_n`` in the site frame, where ``r_n`` is its offset in
the surface's local frame.  Rotation matrices use the intrinsic order
``R(u) = Rz(gamma) @ Ry(beta) @ Rx(alpha)``.

Feasibility of a site is judged by :func:`check_constraints`:

* reflection  -- no other surface center lies in front of a surface,
  ``n_i . (q_j - q_i) <= 0``;
* blockage    -- no surface faces the CPU, ``n_i . (cpu - q_i) <= 0``;
* min_distance -- centers are at least ``d_min`` apart;
* region      -- centers lie inside a sphere of ``feasible_radius`` about
  the CPU.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

TWO_PI = 2.0 * math.pi

# Reflection/blockage are judged on the cosine between the normal and the
# unit direction; a violation needs cos > ANGLE_TOL.  The repair margin must
# stay below ANGLE_TOL so that coplanar stacks remain repairable.
ANGLE_TOL = 1e-5
REPAIR_MARGIN = 1e-6
DIST_RTOL = 1e-9
MAX_REPAIR_ITERS = 50
# rounds that push stuck surfaces out to the region boundary
REPAIR_ESCALATIONS = 3


class InfeasibleGeometryError(ValueError):
    """Raised when a site violates its movement constraints."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class NoFeasibleRepairError(InfeasibleGeometryError):
    """Raised when :func:`project_to_feasible` cannot repair a proposal."""


def _normalize_angle(a: float) -> float:
    a = float(a)
    if not math.isfinite(a):
        raise ValueError(f"rotation angle must be finite, got {a!r}")
    a = math.fmod(a, TWO_PI)
    if a < 0.0:
        a += TWO_PI
    # fmod of tiny negatives can round up to exactly 2*pi
    if a >= TWO_PI:
        a = 0.0
    return a


def circular_distance(a: float, b: float) -> float:
    """Shortest angular distance between two angles, in ``[0, pi]``."""
    d = math.fmod(abs(a - b), TWO_PI)
    return min(d, TWO_PI - d)


def as_vec3(v) -> np.ndarray:
    arr = np.asarray(v, dtype=float).reshape(-1)
    if arr.shape != (3,):
        raise ValueError(f"expected a 3-vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"vector components must be finite, got {arr}")
    return arr


def _vec_tuple(v) -> tuple[float, float, float]:
    arr = as_vec3(v)
    return (float(arr[0]), float(arr[1]), float(arr[2]))


@dataclass(frozen=True)
class RotationAngles:
    """Rotation angles in radians, stored modulo ``2*pi``."""

    alpha: float = 0.0
    beta: float = 0.0
    gamma: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "alpha", _normalize_angle(self.alpha))
        object.__setattr__(self, "beta", _normalize_angle(self.beta))
        object.__setattr__(self, "gamma", _normalize_angle(self.gamma))

    def as_array(self) -> np.ndarray:
        return np.array([self.alpha, self.beta, self.gamma])


def rotation_matrix(u: RotationAngles) -> np.ndarray:
    """Return ``R(u) = Rz(gamma) @ Ry(beta) @ Rx(alpha)``."""
    ca, sa = math.cos(u.alpha), math.sin(u.alpha)
    cb, sb = math.cos(u.beta), math.sin(u.beta)
    cg, sg = math.cos(u.gamma), math.sin(u.gamma)
    return np.array(
        [
            [cg * cb, cg * sb * sa - sg * ca, cg * sb * ca + sg * sa],
            [sg * cb, sg * sb * sa + cg * ca, sg * sb * ca - cg * sa],
            [-sb, cb * sa, cb * ca],
        ]
    )


def angles_from_matrix(R) -> RotationAngles:
    """Inverse of :func:`rotation_matrix` for a proper rotation matrix.

    At gimbal lock (``|beta| = pi/2``) alpha is set to zero and the whole
    residual rotation is attributed to gamma.
    """
    R = np.asarray(R, dtype=float)
    s = -R[2, 0]
    s = min(1.0, max(-1.0, s))
    beta = math.asin(s)
    if abs(s) < 1.0 - 1e-12:
        alpha = math.atan2(R[2, 1], R[2, 2])
        gamma = math.atan2(R[1, 0], R[0, 0])
    else:
        alpha = 0.0
        gamma = math.atan2(-R[0, 1], R[1, 1])
    return RotationAngles(alpha, beta, gamma)


def cross3(a, b) -> np.ndarray:
    """Cross product of two 3-vectors (cheaper than ``np.cross`` for one pair)."""
    return np.array([
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ])


def skew(v) -> np.ndarray:
    """Cross-product matrix ``[v]_x`` such that ``skew(v) @ w == cross(v, w)``."""
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def nearest_rotation(M) -> np.ndarray:
    """Project a 3x3 matrix onto SO(3) (nearest in Frobenius norm)."""
    U, _, Vt = np.linalg.svd(np.asarray(M, dtype=float))
    D = np.eye(3)
    D[2, 2] = np.sign(np.linalg.det(U @ Vt))
    return U @ D @ Vt


def rotation_between(a, b) -> np.ndarray:
    """Minimal rotation taking unit vector ``a`` onto unit vector ``b``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    axis = cross3(a, b)
    s = np.linalg.norm(axis)
    c = float(np.dot(a, b))
    if s < 1e-15:
        if c > 0:
            return np.eye(3)
        # antiparallel: half-turn about any axis perpendicular to a
        perp = cross3(a, (1.0, 0.0, 0.0))
        if np.linalg.norm(perp) < 1e-6:
            perp = cross3(a, (0.0, 1.0, 0.0))
        perp /= np.linalg.norm(perp)
        return 2.0 * np.outer(perp, perp) - np.eye(3)
    K = skew(axis / s)
    angle = math.atan2(s, c)
    return np.eye(3) + math.sin(angle) * K + (1.0 - math.cos(angle)) * (K @ K)


@dataclass(frozen=True)
class SurfaceSpec:
    """Antenna layout shared by all surfaces, in the local frame.

    ``local_offsets`` is an ``(N, 3)`` array-like of antenna offsets in
    meters and ``local_normal`` the boresight direction.
    """

    local_offsets: tuple
    local_normal: tuple = (1.0, 0.0, 0.0)

    def __post_init__(self):
        offsets = np.asarray(self.local_offsets, dtype=float)
        if offsets.ndim != 2 or offsets.shape[1] != 3 or offsets.shape[0] < 1:
            raise ValueError("local_offsets must be a non-empty list of 3-vectors")
        if not np.all(np.isfinite(offsets)):
            raise ValueError("local_offsets must be finite")
        normal = as_vec3(self.local_normal)
        if abs(np.linalg.norm(normal) - 1.0) > 1e-12:
            raise ValueError("local_normal must have unit norm")
        object.__setattr__(self, "local_offsets", tuple(map(tuple, offsets.tolist())))
        object.__setattr__(self, "local_normal", _vec_tuple(normal))

    @property
    def antennas_per_surface(self) -> int:
        return len(self.local_offsets)

    @property
    def offsets(self) -> np.ndarray:
        return np.array(self.local_offsets)

    @property
    def normal(self) -> np.ndarray:
        return np.array(self.local_normal)

    def local_frame(self) -> np.ndarray:
        """Rows ``(boresight, horizontal, up)`` of the local pattern frame.

        The pattern zenith ("up") is the local z axis made orthogonal to the
        normal, or local x when the normal is close to z.
        """
        return self._frame.copy()

    @cached_property
    def _frame(self) -> np.ndarray:
        b = self.normal
        ref = np.array([0.0, 0.0, 1.0]) if abs(b[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
        up = ref - np.dot(ref, b) * b
        up /= np.linalg.norm(up)
        h = cross3(up, b)
        return np.vstack([b, h, up])

    @classmethod
    def planar(cls, rows: int, cols: int, spacing: float, normal=(1.0, 0.0, 0.0)):
        """Uniform ``rows x cols`` grid centred on the surface origin.

        The grid lies in the local y-z plane, so ``normal`` should stay on
        the local x axis unless offsets are supplied directly.
        """
        ys = (np.arange(cols) - (cols - 1) / 2.0) * spacing
        zs = (np.arange(rows) - (rows - 1) / 2.0) * spacing
        offsets = [(0.0, y, z) for z in zs for y in ys]
        return cls(tuple(offsets), tuple(normal))


@dataclass(frozen=True)
class SurfacePose:
    center: tuple
    rotation: RotationAngles = field(default_factory=RotationAngles)
    frozen: bool = False

    def __post_init__(self):
        object.__setattr__(self, "center", _vec_tuple(self.center))
        if not isinstance(self.rotation, RotationAngles):
            object.__setattr__(self, "rotation", RotationAngles(*self.rotation))
        object.__setattr__(self, "frozen", bool(self.frozen))

    @property
    def q(self) -> np.ndarray:
        return np.array(self.center)

    def matrix(self) -> np.ndarray:
        return rotation_matrix(self.rotation)

    def moved(self, center=None, rotation=None) -> "SurfacePose":
        return replace(
            self,
            center=self.center if center is None else center,
            rotation=self.rotation if rotation is None else rotation,
        )


@dataclass(frozen=True)
class SiteGeometry:
    surfaces: tuple
    spec: SurfaceSpec
    cpu_position: tuple = (0.0, 0.0, 0.0)
    feasible_radius: float = 1.5
    d_min: float = 0.4

    def __post_init__(self):
        object.__setattr__(self, "surfaces", tuple(self.surfaces))
        object.__setattr__(self, "cpu_position", _vec_tuple(self.cpu_position))
        if len(self.surfaces) < 1:
            raise ValueError("a site needs at least one surface")
        if not self.d_min > 0:
            raise ValueError("d_min must be positive")
        if not self.feasible_radius > self.d_min:
            raise ValueError("feasible_radius must exceed d_min")

    @property
    def n_surfaces(self) -> int:
        return len(self.surfaces)

    @property
    def n_antennas(self) -> int:
        return self.n_surfaces * self.spec.antennas_per_surface

    @property
    def cpu(self) -> np.ndarray:
        return np.array(self.cpu_position)

    def with_surfaces(self, surfaces: Iterable[SurfacePose]) -> "SiteGeometry":
        return replace(self, surfaces=tuple(surfaces))

    def centers(self) -> np.ndarray:
        return np.array([s.center for s in self.surfaces])

    def normals(self) -> np.ndarray:
        return _normals(self.surfaces, self.spec)


def global_antenna_position(pose: SurfacePose, spec: SurfaceSpec, n: int) -> np.ndarray:
    """Position of antenna ``n`` (1-based) of a surface in the site frame."""
    N = spec.antennas_per_surface
    if not 1 <= n <= N:
        raise IndexError(f"antenna index {n} outside 1..{N}")
    return pose.q + pose.matrix() @ np.array(spec.local_offsets[n - 1])


def antenna_positions(pose: SurfacePose, spec: SurfaceSpec) -> np.ndarray:
    """All antenna positions of one surface, shape ``(N, 3)``."""
    return pose.q + spec.offsets @ pose.matrix().T


def surface_normal(pose: SurfacePose, spec: SurfaceSpec) -> np.ndarray:
    n = pose.matrix() @ spec.normal
    return n / np.linalg.norm(n)


@dataclass(frozen=True)
class Violation:
    kind: str  # reflection | blockage | min_distance | region
    surfaces: tuple
    margin: float


@dataclass
class ConstraintReport:
    violations: list

    @property
    def feasible(self) -> bool:
        return not self.violations

    def __len__(self):
        return len(self.violations)

    def __iter__(self):
        return iter(self.violations)

    def of_kind(self, kind: str) -> list:
        return [v for v in self.violations if v.kind == kind]

    def summary(self) -> str:
        if self.feasible:
            return "feasible"
        lines = [
            f"{v.kind} surfaces={list(v.surfaces)} margin={v.margin:.6g}"
            for v in self.violations
        ]
        return "\n".join(lines)


def _check_arrays(centers, normals, cpu, radius, d_min) -> list:
    out = []
    diff = centers[None, :, :] - centers[:, None, :]  # diff[i, j] = q_j - q_i
    dist = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    proj = np.einsum("ik,ijk->ij", normals, diff)
    bad = (proj > ANGLE_TOL * dist) & (dist > 0.0)
    for i, j in zip(*np.nonzero(bad)):
        out.append(Violation("reflection", (int(i), int(j)), float(proj[i, j])))
    to_cpu = cpu[None, :] - centers
    cpu_dist = np.sqrt(np.einsum("ik,ik->i", to_cpu, to_cpu))
    block = np.einsum("ik,ik->i", normals, to_cpu)
    for i in np.nonzero(block > ANGLE_TOL * cpu_dist)[0]:
        out.append(Violation("blockage", (int(i),), float(block[i])))
    close = np.triu(dist < d_min * (1.0 - DIST_RTOL), 1)
    for i, j in zip(*np.nonzero(close)):
        out.append(Violation("min_distance", (int(i), int(j)), float(dist[i, j] - d_min)))
    for i in np.nonzero(cpu_dist > radius * (1.0 + DIST_RTOL))[0]:
        out.append(Violation("region", (int(i),), float(cpu_dist[i] - radius)))
    return out


def rotation_matrices(angles) -> np.ndarray:
    """Vectorised :func:`rotation_matrix` for an ``(M, 3)`` angle array."""
    a = np.asarray(angles, dtype=float)
    ca, sa = np.cos(a[:, 0]), np.sin(a[:, 0])
    cb, sb = np.cos(a[:, 1]), np.sin(a[:, 1])
    cg, sg = np.cos(a[:, 2]), np.sin(a[:, 2])
    R = np.empty((len(a), 3, 3))
    R[:, 0, 0] = cg * cb
    R[:, 0, 1] = cg * sb * sa - sg * ca
    R[:, 0, 2] = cg * sb * ca + sg * sa
    R[:, 1, 0] = sg * cb
    R[:, 1, 1] = sg * sb * sa + cg * ca
    R[:, 1, 2] = sg * sb * ca - cg * sa
    R[:, 2, 0] = -sb
    R[:, 2, 1] = cb * sa
    R[:, 2, 2] = cb * ca
    return R


def _normals(surfaces, spec: SurfaceSpec) -> np.ndarray:
    angles = [(s.rotation.alpha, s.rotation.beta, s.rotation.gamma) for s in surfaces]
    n = rotation_matrices(angles) @ spec.normal
    return n / np.linalg.norm(n, axis=1, keepdims=True)


def check_constraints(site: SiteGeometry, surfaces: Sequence[SurfacePose] | None = None) -> ConstraintReport:
    """Evaluate every movement constraint; violations are returned as data.

    Margins are the signed constraint values: ``n_i.(q_j - q_i)`` for
    reflection, ``n_i.(cpu - q_i)`` for blockage, ``|q_i - q_j| - d_min`` and
    ``|q_i - cpu| - feasible_radius`` for the distance constraints.
    """
    surfaces = site.surfaces if surfaces is None else tuple(surfaces)
    centers = np.array([s.center for s in surfaces])
    normals = _normals(surfaces, site.spec)
    return ConstraintReport(
        _check_arrays(centers, normals, site.cpu, site.feasible_radius, site.d_min)
    )


def _turn_normal_behind(pose: SurfacePose, spec: SurfaceSpec, d_hat: np.ndarray) -> SurfacePose:
    """Rotate a surface minimally so its normal sits just behind ``d_hat``."""
    R = pose.matrix()
    n = R @ spec.normal
    n /= np.linalg.norm(n)
    perp = n - np.dot(n, d_hat) * d_hat
    norm = np.linalg.norm(perp)
    if norm < 1e-12:
        perp = cross3(d_hat, (1.0, 0.0, 0.0))
        if np.linalg.norm(perp) < 1e-6:
            perp = cross3(d_hat, (0.0, 1.0, 0.0))
        norm = np.linalg.norm(perp)
    perp /= norm
    target = math.cos(REPAIR_MARGIN) * perp - math.sin(REPAIR_MARGIN) * d_hat
    Q = rotation_between(n, target)
    return pose.moved(rotation=angles_from_matrix(Q @ R))


def _clip_into_region(pose: SurfacePose, cpu: np.ndarray, radius: float) -> SurfacePose:
    rel = pose.q - cpu
    r = np.linalg.norm(rel)
    if r <= radius:
        return pose
    return pose.moved(center=cpu + rel * (radius / r))


def _repair_sweeps(site: SiteGeometry, poses: list) -> list:
    """Local repair: push crowded centers apart and turn offending normals."""
    cpu = site.cpu
    for _ in range(MAX_REPAIR_ITERS):
        report = check_constraints(site, poses)
        if report.feasible:
            return poses
        for v in report:
            if v.kind == "region":
                (i,) = v.surfaces
                if not poses[i].frozen:
                    poses[i] = _clip_into_region(poses[i], cpu, site.feasible_radius)
            elif v.kind == "min_distance":
                i, j = v.surfaces
                qi, qj = poses[i].q, poses[j].q
                d = qj - qi
                dist = np.linalg.norm(d)
                if dist > 0:
                    u = d / dist
                else:
                    u = np.array([1.0, 0.0, 0.0])
                gap = site.d_min - dist
                if poses[i].frozen and poses[j].frozen:
                    continue
                if poses[i].frozen:
                    poses[j] = poses[j].moved(center=qj + gap * u)
                elif poses[j].frozen:
                    poses[i] = poses[i].moved(center=qi - gap * u)
                else:
                    mid = 0.5 * (qi + qj)
                    half = 0.5 * site.d_min
                    poses[i] = poses[i].moved(center=mid - half * u)
                    poses[j] = poses[j].moved(center=mid + half * u)
            else:
                i = v.surfaces[0]
                if poses[i].frozen:
                    continue
                target = poses[v.surfaces[1]].q if v.kind == "reflection" else cpu
                d = target - poses[i].q
                dist = np.linalg.norm(d)
                if dist == 0:
                    continue
                n = surface_normal(poses[i], site.spec)
                if np.dot(n, d) > ANGLE_TOL * dist:
                    poses[i] = _turn_normal_behind(poses[i], site.spec, d / dist)
    return poses


def _push_to_boundary(pose: SurfacePose, site: SiteGeometry) -> SurfacePose:
    """Move a center radially onto the region sphere, normal facing outward."""
    rel = pose.q - site.cpu
    r = np.linalg.norm(rel)
    u = rel / r if r > 0 else np.array([1.0, 0.0, 0.0])
    R = pose.matrix()
    Q = rotation_between(R @ site.spec.normal, u)
    return SurfacePose(site.cpu + site.feasible_radius * u, angles_from_matrix(Q @ R), pose.frozen)


def project_to_feasible(
    site: SiteGeometry,
    proposal: Sequence[SurfacePose],
    fallback: Sequence[SurfacePose] | None = None,
) -> list:
    """Repair a proposed pose list so that it satisfies every constraint.

    Feasible proposals come back unchanged.  Otherwise centers are clipped
    into the region, then up to ``MAX_REPAIR_ITERS`` sweeps push crowded
    centers apart symmetrically and turn offending normals onto their
    constraint boundary (plus a small margin).  A surface enclosed by the
    others cannot be fixed by turning, so if the sweeps stall every movable
    surface still in violation is pushed out to the region boundary with an
    outward normal and the sweeps rerun, up to ``REPAIR_ESCALATIONS`` times.
    Frozen surfaces are never touched.  If repair fails the caller's
    ``fallback`` is returned.
    """
    proposal = list(proposal)
    if len(proposal) != site.n_surfaces:
        raise ValueError(f"proposal has {len(proposal)} poses, site has {site.n_surfaces}")
    if check_constraints(site, proposal).feasible:
        return proposal

    poses = [p if p.frozen else _clip_into_region(p, site.cpu, site.feasible_radius) for p in proposal]
    for round_ in range(REPAIR_ESCALATIONS + 1):
        poses = _repair_sweeps(site, poses)
        report = check_constraints(site, poses)
        if report.feasible:
            return poses
        if round_ == REPAIR_ESCALATIONS:
            break
        stuck = sorted({i for v in report for i in v.surfaces if not poses[i].frozen})
        for i in stuck:
            poses[i] = _push_to_boundary(poses[i], site)

    if fallback is None:
        raise NoFeasibleRepairError("no feasible repair found and no fallback supplied", report)
    return list(fallback)
