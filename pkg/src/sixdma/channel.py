"""Narrowband far-field channel synthesis for movable antenna sites.

The channel seen by one user is built from three parts: the steering
vector of every surface toward each propagation path, the directional gain
of the surface's antenna elements toward that path, and the complex path
gains themselves.  Directions are unit vectors pointing from the site toward
the source of the incoming plane wave.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .geometry import SiteGeometry, SurfacePose, SurfaceSpec, antenna_positions, as_vec3, cross3


@dataclass(frozen=True)
class DirectionalPattern:
    """Single-element power pattern in the style of 3GPP TR 38.901 Table 7.3-1.

    Defaults are the usual sector-element values: 8 dBi peak, 65 degree
    half-power beamwidth in both planes and 30 dB attenuation limits.
    """

    g_max_db: float = 8.0
    hpbw_deg: float = 65.0
    side_att_max_db: float = 30.0
    front_back_db: float = 30.0

    def __post_init__(self):
        if not 0.0 < self.hpbw_deg < 180.0:
            raise ValueError("hpbw_deg must lie in (0, 180)")
        if self.side_att_max_db < 0 or self.front_back_db < 0:
            raise ValueError("attenuation limits must be non-negative")

    @classmethod
    def isotropic(cls) -> "DirectionalPattern":
        return cls(g_max_db=0.0, side_att_max_db=0.0, front_back_db=0.0)

    def gain_db(self, theta_deg, phi_deg):
        """Element gain in dBi at local zenith ``theta`` and azimuth ``phi``."""
        a_v = -np.minimum(12.0 * ((theta_deg - 90.0) / self.hpbw_deg) ** 2, self.front_back_db)
        a_h = -np.minimum(12.0 * (phi_deg / self.hpbw_deg) ** 2, self.front_back_db)
        return self.g_max_db - np.minimum(-(a_v + a_h), self.side_att_max_db)

    def gain_local(self, local_dirs):
        """Linear gain for direction(s) expressed in the pattern frame.

        ``local_dirs[..., :]`` holds (boresight, horizontal, up) components.
        """
        local_dirs = np.asarray(local_dirs, dtype=float)
        up = np.clip(local_dirs[..., 2], -1.0, 1.0)
        theta = np.degrees(np.arccos(up))
        phi = np.degrees(np.arctan2(local_dirs[..., 1], local_dirs[..., 0]))
        return 10.0 ** (self.gain_db(theta, phi) / 10.0)


@dataclass(frozen=True)
class PropagationPath:
    direction: tuple
    complex_gain: complex

    def __post_init__(self):
        d = as_vec3(self.direction)
        if abs(np.linalg.norm(d) - 1.0) > 1e-12:
            d = d / np.linalg.norm(d)
        object.__setattr__(self, "direction", tuple(d.tolist()))
        g = complex(self.complex_gain)
        if not (math.isfinite(g.real) and math.isfinite(g.imag)):
            raise ValueError("path gain must be finite")
        object.__setattr__(self, "complex_gain", g)


def wavenumber(wavelength: float) -> float:
    if not wavelength > 0:
        raise ValueError(f"wavelength must be positive, got {wavelength}")
    return 2.0 * math.pi / wavelength


def steering_vector(pose: SurfacePose, spec: SurfaceSpec, direction, wavelength: float) -> np.ndarray:
    """Per-antenna plane-wave phase ``exp(j k d.r_n)`` for one surface."""
    k = wavenumber(wavelength)
    d = as_vec3(direction)
    return np.exp(1j * k * (antenna_positions(pose, spec) @ d))


def local_pattern_coords(pose: SurfacePose, spec: SurfaceSpec, directions) -> np.ndarray:
    """Directions rotated into the surface's pattern frame."""
    frame = spec.local_frame() @ pose.matrix().T  # rows: R @ b, R @ h, R @ up
    return np.asarray(directions, dtype=float) @ frame.T


def element_gain(pose: SurfacePose, spec: SurfaceSpec, direction, pattern: DirectionalPattern) -> float:
    """Linear power gain of the surface's elements toward ``direction``."""
    local = local_pattern_coords(pose, spec, as_vec3(direction))
    return float(pattern.gain_local(local))


def surface_response(pose, spec, directions, gains, pattern, wavelength, offsets=None) -> np.ndarray:
    """Vectorised channel block of one surface.

    ``directions`` has shape ``(..., L, 3)`` and ``gains`` ``(..., L)``; the
    result has shape ``(..., N)`` and sums the paths.  ``offsets`` overrides
    the local antenna offsets (used by per-antenna position search).
    """
    k = wavenumber(wavelength)
    R = pose.matrix()
    local = spec.offsets if offsets is None else np.asarray(offsets, dtype=float)
    positions = pose.q + local @ R.T  # (N, 3)
    amp = np.asarray(gains) * np.sqrt(pattern.gain_local(local_pattern_coords(pose, spec, directions)))
    phase = np.exp(1j * k * (np.asarray(directions) @ positions.T))  # (..., L, N)
    return np.einsum("...l,...ln->...n", amp, phase)


def synthesize_channel(
    site: SiteGeometry,
    paths: Sequence[PropagationPath],
    pattern: DirectionalPattern,
    wavelength: float,
) -> np.ndarray:
    """Channel vector of one user over all site antennas (surface-major)."""
    if len(paths) == 0:
        raise ValueError("a user needs at least one propagation path")
    dirs = np.array([p.direction for p in paths])
    gains = np.array([p.complex_gain for p in paths])
    blocks = [
        surface_response(pose, site.spec, dirs, gains, pattern, wavelength)
        for pose in site.surfaces
    ]
    return np.concatenate(blocks)


def los_amplitude(distance: float, wavelength: float, exponent: float) -> float:
    """Free-space amplitude with the excess exponent folded into a power law."""
    return (wavelength / (4.0 * math.pi * distance)) * distance ** (-(exponent - 2.0) / 2.0)


def sample_cap_directions(axis, half_angle: float, n: int, rng) -> np.ndarray:
    """``n`` directions uniform on the spherical cap of ``half_angle`` about ``axis``."""
    axis = as_vec3(axis)
    axis = axis / np.linalg.norm(axis)
    cos_t = 1.0 - rng.random(n) * (1.0 - math.cos(half_angle))
    sin_t = np.sqrt(np.maximum(0.0, 1.0 - cos_t ** 2))
    phi = rng.random(n) * 2.0 * math.pi
    ref = np.array([0.0, 0.0, 1.0]) if abs(axis[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    e1 = cross3(axis, ref)
    e1 /= np.linalg.norm(e1)
    e2 = cross3(axis, e1)
    return (
        cos_t[:, None] * axis
        + (sin_t * np.cos(phi))[:, None] * e1
        + (sin_t * np.sin(phi))[:, None] * e2
    )


def user_paths(scenario, user_position, rng) -> list:
    """LOS path plus Rician-scaled NLOS paths from a user to the site.

    The LOS gain is deterministic (power-law path loss, propagation phase).
    NLOS directions are uniform within ``scenario.angular_spread_deg`` of the
    LOS direction and carry i.i.d. circular Gaussian gains whose total mean
    power is the LOS power divided by the Rician factor.
    """
    pos = as_vec3(user_position)
    if math.hypot(pos[0], pos[1]) > scenario.region_radius * (1.0 + 1e-12):
        raise ValueError(f"user at {pos.tolist()} lies outside the cell region")
    rel = pos - scenario.bs_position
    d = float(np.linalg.norm(rel))
    los_dir = rel / d
    lam = scenario.wavelength
    amp = los_amplitude(d, lam, scenario.pathloss_exponent)
    los_gain = amp * np.exp(-1j * 2.0 * math.pi * d / lam)
    paths = [PropagationPath(tuple(los_dir), los_gain)]

    K = scenario.rician_factor
    if scenario.n_nlos == 0 or math.isinf(K):
        return paths
    nlos_power = amp ** 2 / K / scenario.n_nlos
    dirs = sample_cap_directions(los_dir, math.radians(scenario.angular_spread_deg), scenario.n_nlos, rng)
    g = rng.standard_normal(scenario.n_nlos) + 1j * rng.standard_normal(scenario.n_nlos)
    g *= math.sqrt(nlos_power / 2.0)
    paths.extend(PropagationPath(tuple(dk), gk) for dk, gk in zip(dirs, g))
    return paths
