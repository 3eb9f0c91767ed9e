"""Cell scenario and hotspot user law.

Users live on a ground disc around the base station.  Their number is
Poisson; each one independently joins a hotspot disc (with probability
proportional to the hotspot weight) or the regular part of the cell, and is
placed uniformly inside the chosen sub-region.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .channel import DirectionalPattern, user_paths


@dataclass(frozen=True)
class Hotspot:
    center: tuple  # (x, y) on the ground, meters; a z entry is ignored
    radius: float
    weight: float

    def __post_init__(self):
        c = tuple(float(v) for v in self.center)
        if len(c) not in (2, 3):
            raise ValueError("hotspot center needs 2 or 3 coordinates")
        object.__setattr__(self, "center", c[:2])
        if not self.radius > 0:
            raise ValueError("hotspot radius must be positive")
        if not self.weight > 0:
            raise ValueError("hotspot weight must be positive")


def default_hotspots() -> tuple:
    """Three 20 m hotspots with 1:2:3 weights, off the classic sector boresights."""

    def at(az_deg, dist):
        a = math.radians(az_deg)
        return (dist * math.cos(a), dist * math.sin(a))

    return (
        Hotspot(at(60.0, 90.0), 20.0, 1.0),
        Hotspot(at(165.0, 130.0), 20.0, 2.0),
        Hotspot(at(290.0, 160.0), 20.0, 3.0),
    )


@dataclass(frozen=True)
class ScenarioSpec:
    region_radius: float = 200.0
    hotspots: tuple = field(default_factory=default_hotspots)
    # 6 : 2 makes hotspot users 75% of the total
    regular_weight: float = 2.0
    mean_user_count: float = 12.0
    user_power_dbm: float = 0.0
    noise_power_dbm: float = -94.0
    wavelength: float = 0.1
    rician_factor: float = 5.0
    n_nlos: int = 4
    angular_spread_deg: float = 30.0
    pathloss_exponent: float = 2.5
    bs_height: float = 25.0
    user_height: float = 1.5
    min_user_distance: float = 10.0
    pattern: DirectionalPattern = field(default_factory=DirectionalPattern)

    def __post_init__(self):
        object.__setattr__(self, "hotspots", tuple(
            h if isinstance(h, Hotspot) else Hotspot(**h) for h in self.hotspots
        ))
        if isinstance(self.pattern, dict):
            object.__setattr__(self, "pattern", DirectionalPattern(**self.pattern))
        if self.regular_weight < 0:
            raise ValueError("regular_weight must be non-negative")
        if not self.hotspots and self.regular_weight == 0:
            raise ValueError("no sub-region has positive weight")
        if not self.mean_user_count > 0:
            raise ValueError("mean_user_count must be positive")
        if not self.region_radius > self.min_user_distance >= 0:
            raise ValueError("need region_radius > min_user_distance >= 0")
        if not self.wavelength > 0:
            raise ValueError("wavelength must be positive")
        if not self.rician_factor > 0:
            raise ValueError("rician_factor must be positive (inf for LOS only)")
        if self.n_nlos < 0:
            raise ValueError("n_nlos must be non-negative")
        for h in self.hotspots:
            if math.hypot(*h.center) + h.radius > self.region_radius:
                raise ValueError(f"hotspot at {h.center} leaves the cell region")

    @property
    def bs_position(self) -> np.ndarray:
        return np.array([0.0, 0.0, self.bs_height])

    @property
    def user_power_w(self) -> float:
        return 10.0 ** (self.user_power_dbm / 10.0) * 1e-3

    @property
    def noise_power_w(self) -> float:
        return 10.0 ** (self.noise_power_dbm / 10.0) * 1e-3

    @property
    def weights(self) -> np.ndarray:
        """Sub-region weights: hotspots first, regular region last."""
        return np.array([h.weight for h in self.hotspots] + [self.regular_weight])

    @property
    def max_paths(self) -> int:
        return 1 if math.isinf(self.rician_factor) else 1 + self.n_nlos


@dataclass(frozen=True)
class UserRealization:
    positions: np.ndarray  # (K, 3)
    paths: tuple  # one list of PropagationPath per user
    regions: np.ndarray  # sub-region index per user; len(hotspots) = regular

    @property
    def n_users(self) -> int:
        return len(self.paths)


def _uniform_disc(center, radius, rng):
    r = radius * math.sqrt(rng.random())
    a = 2.0 * math.pi * rng.random()
    return center[0] + r * math.cos(a), center[1] + r * math.sin(a)


def _regular_point(spec: ScenarioSpec, rng):
    while True:
        x, y = _uniform_disc((0.0, 0.0), spec.region_radius, rng)
        if math.hypot(x, y) < spec.min_user_distance:
            continue
        if any(math.hypot(x - h.center[0], y - h.center[1]) <= h.radius for h in spec.hotspots):
            continue
        return x, y


def _hotspot_point(spec: ScenarioSpec, h: Hotspot, rng):
    while True:
        x, y = _uniform_disc(h.center, h.radius, rng)
        if math.hypot(x, y) >= spec.min_user_distance:
            return x, y


def sample_users(spec: ScenarioSpec, rng) -> UserRealization:
    """Draw one user population and its propagation paths from ``rng``."""
    n = int(rng.poisson(spec.mean_user_count))
    w = spec.weights
    regions = rng.choice(len(w), size=n, p=w / w.sum()) if n else np.zeros(0, dtype=int)
    positions = np.empty((n, 3))
    paths = []
    n_hot = len(spec.hotspots)
    for k, region in enumerate(regions):
        if region < n_hot:
            x, y = _hotspot_point(spec, spec.hotspots[region], rng)
        else:
            x, y = _regular_point(spec, rng)
        positions[k] = (x, y, spec.user_height)
        paths.append(user_paths(spec, positions[k], rng))
    return UserRealization(positions, tuple(paths), np.asarray(regions, dtype=int))
