"""Benchmark schemes built on a conventional three-sector base station."""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .channel import local_pattern_coords
from .geometry import (
    InfeasibleGeometryError,
    SiteGeometry,
    SurfacePose,
    SurfaceSpec,
    RotationAngles,
    angles_from_matrix,
    check_constraints,
    rotation_between,
    rotation_matrix,
)
from .metrics import STREAM_FAS, RealizationBatch, substream
from .optimize import OptimizerConfig

SECTOR_AZIMUTHS_DEG = (0.0, 120.0, 240.0)


def default_site(
    n_surfaces: int = 15,
    rows: int = 2,
    cols: int = 2,
    wavelength: float = 0.1,
    d_min: float = 0.4,
    feasible_radius: float = 1.5,
) -> SiteGeometry:
    """Site template: half-wavelength planar surfaces, all at the CPU.

    The poses are placeholders; lay them out with :func:`fpa_three_sector`.
    """
    spec = SurfaceSpec.planar(rows, cols, wavelength / 2.0)
    poses = [SurfacePose((0.0, 0.0, 0.0))] * n_surfaces
    return SiteGeometry(tuple(poses), spec, (0.0, 0.0, 0.0), feasible_radius, d_min)


def fpa_three_sector(
    template: SiteGeometry,
    downtilt_deg: float = 10.0,
    sector_radius: float | None = None,
) -> SiteGeometry:
    """Fixed three-sector layout.

    Each sector holds ``B/3`` coplanar surfaces sharing one boresight
    (azimuth 0, 120 or 240 degrees, tilted down by ``downtilt_deg``),
    placed side by side ``d_min`` apart along the horizontal tangent of the
    sector, at ``sector_radius`` from the CPU (default half the feasible
    radius).
    """
    B = template.n_surfaces
    if B % 3:
        raise ValueError(f"three-sector layout needs B divisible by 3, got {B}")
    m = B // 3
    r0 = 0.5 * template.feasible_radius if sector_radius is None else sector_radius
    d = template.d_min
    align = rotation_between(template.spec.normal, np.array([1.0, 0.0, 0.0]))
    cpu = template.cpu
    tilt = math.radians(downtilt_deg)
    poses = []
    for s, az_deg in enumerate(SECTOR_AZIMUTHS_DEG):
        az = math.radians(az_deg)
        R = rotation_matrix(RotationAngles(0.0, tilt, az)) @ align
        rot = angles_from_matrix(R)
        radial = np.array([math.cos(az), math.sin(az), 0.0])
        tangent = np.array([-math.sin(az), math.cos(az), 0.0])
        for k in range(m):
            offset = (k - (m - 1) / 2.0) * d
            poses.append(SurfacePose(cpu + r0 * radial + offset * tangent, rot))
    site = template.with_surfaces(poses)
    report = check_constraints(site)
    if not report.feasible:
        raise InfeasibleGeometryError(
            "three-sector layout does not fit the site constraints:\n" + report.summary(), report
        )
    return site


def rotation_only_site(cfg: OptimizerConfig) -> OptimizerConfig:
    """Optimizer settings for the rotation-only scheme: centers never move."""
    return replace(cfg, regime="continuous", position_step_cap=0.0)


@dataclass(frozen=True)
class FasMaConfig:
    """Per-antenna in-plane position search (FAS/MA-style baseline)."""

    aperture_wavelengths: float = 4.0
    min_spacing_wavelengths: float = 0.5
    sweeps: int = 2
    moves_per_antenna: int = 3
    step_wavelengths: float = 0.5

    def __post_init__(self):
        if not self.aperture_wavelengths > 0 or not self.min_spacing_wavelengths > 0:
            raise ValueError("aperture and spacing must be positive")
        if self.sweeps < 0 or self.moves_per_antenna < 0:
            raise ValueError("search budget must be non-negative")

    @property
    def budget(self) -> int:
        return self.sweeps * self.moves_per_antenna


def _in_plane(spec: SurfaceSpec):
    frame = spec.local_frame()
    offs = spec.offsets
    normal_part = offs @ frame[0]
    coords = np.stack([offs @ frame[1], offs @ frame[2]], axis=1)
    return frame, normal_part, coords


def check_aperture(spec: SurfaceSpec, fas: FasMaConfig, wavelength: float) -> None:
    aperture = fas.aperture_wavelengths * wavelength
    spacing = fas.min_spacing_wavelengths * wavelength
    N = spec.antennas_per_surface
    per_side = int(math.floor(aperture / spacing + 1e-9)) + 1
    if N > per_side ** 2:
        raise ValueError(f"{N} antennas cannot keep {spacing} m spacing in a {aperture} m aperture")
    _, _, coords = _in_plane(spec)
    if np.any(np.abs(coords) > aperture / 2.0 + 1e-12):
        raise ValueError("initial antenna offsets lie outside the aperture")
    if N > 1:
        dist = np.linalg.norm(coords[:, None] - coords[None], axis=-1)
        if np.min(dist[np.triu_indices(N, 1)]) < spacing * (1 - 1e-9):
            raise ValueError("initial antenna offsets violate the minimum spacing")


def _search_one(site, scenario, fas, users, H, rng):
    """Greedy per-antenna local search for one realization.

    ``H`` is the ``(K, B*N)`` FPA channel of this realization (real users
    only); the improved channel is returned.
    """
    K = H.shape[0]
    if K == 0 or fas.budget == 0:
        return H
    lam = scenario.wavelength
    kw = 2.0 * math.pi / lam
    snr = scenario.user_power_w / scenario.noise_power_w
    aperture = fas.aperture_wavelengths * lam / 2.0
    spacing = fas.min_spacing_wavelengths * lam
    step = fas.step_wavelengths * lam
    spec = site.spec
    N = spec.antennas_per_surface
    frame, normal_part, coords0 = _in_plane(spec)

    L = max(len(p) for p in users.paths)
    dirs = np.zeros((K, L, 3))
    dirs[..., 0] = 1.0
    gains = np.zeros((K, L), dtype=complex)
    for k, paths in enumerate(users.paths):
        for l, p in enumerate(paths):
            dirs[k, l] = p.direction
            gains[k, l] = p.complex_gain

    H = H.copy()
    G = np.eye(K) + snr * (H @ H.conj().T)
    _, cap = np.linalg.slogdet(G)
    for b, pose in enumerate(site.surfaces):
        R = pose.matrix()
        amp = gains * np.sqrt(scenario.pattern.gain_local(local_pattern_coords(pose, spec, dirs)))
        coords = coords0.copy()
        for _ in range(fas.sweeps):
            for a in range(N):
                col = b * N + a
                for _ in range(fas.moves_per_antenna):
                    trial = np.clip(coords[a] + rng.uniform(-step, step, 2), -aperture, aperture)
                    others = np.delete(coords, a, axis=0)
                    if len(others) and np.min(np.linalg.norm(others - trial, axis=1)) < spacing:
                        continue
                    local = normal_part[a] * frame[0] + trial[0] * frame[1] + trial[1] * frame[2]
                    pos = pose.q + R @ local
                    h_new = np.einsum("kl,kl->k", amp, np.exp(1j * kw * (dirs @ pos)))
                    h_old = H[:, col]
                    G_new = G + snr * (np.outer(h_new, h_new.conj()) - np.outer(h_old, h_old.conj()))
                    _, c_new = np.linalg.slogdet(G_new)
                    if c_new > cap + 1e-12:
                        cap, G = c_new, G_new
                        H[:, col] = h_new
                        coords[a] = trial
    return H


def _search_chunk(args):
    site, scenario, fas, users_list, H_list, seed, indices = args
    return [
        _search_one(site, scenario, fas, u, H, substream(seed, STREAM_FAS, i))
        for u, H, i in zip(users_list, H_list, indices)
    ]


def fas_ma_baseline(
    site: SiteGeometry,
    scenario,
    fas: FasMaConfig,
    batch: RealizationBatch,
    master_seed: int,
    workers: int = 1,
) -> np.ndarray:
    """Per-realization sum capacity after instantaneous antenna-position search.

    Surface poses stay at the given (FPA) layout; within each realization
    every antenna moves greedily inside its surface's square aperture while
    keeping the minimum spacing, and only capacity-increasing moves are
    kept.  With a zero budget the result equals the FPA capacities exactly.
    """
    check_aperture(site.spec, fas, scenario.wavelength)
    batch = RealizationBatch(scenario, batch.users)  # rebinding fixes the power
    H = batch.channels(site)
    n = len(batch)
    H_real = [H[r, : batch.counts[r]] for r in range(n)]
    indices = list(range(n))
    if workers <= 1 or n < 2:
        improved = _search_chunk((site, scenario, fas, batch.users, H_real, master_seed, indices))
    else:
        chunks = np.array_split(np.arange(n), min(4 * workers, n))
        jobs = [
            (site, scenario, fas, [batch.users[i] for i in c], [H_real[i] for i in c], master_seed, c.tolist())
            for c in chunks
        ]
        with ProcessPoolExecutor(max_workers=workers) as ex:
            improved = [h for part in ex.map(_search_chunk, jobs) for h in part]
    for r in range(n):
        H[r, : batch.counts[r]] = improved[r]
    return batch.capacities(H)
