"""Uplink sum capacity and its Monte-Carlo average.

Random streams are counter based: realization ``i`` of master seed ``s``
always uses ``SeedSequence(s, spawn_key=(0, i))``, so any subset of
realizations can be drawn in any order, by any number of workers, with the
same result.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .channel import surface_response, synthesize_channel
from .geometry import InfeasibleGeometryError, SiteGeometry, check_constraints
from .scenario import ScenarioSpec, UserRealization, sample_users

LN2 = math.log(2.0)

# first spawn-key word of every stream family
STREAM_REALIZATION = 0
STREAM_CANDIDATES = 1
STREAM_FAS = 2
STREAM_CSM = 3


def substream(master_seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(int(master_seed), spawn_key=tuple(int(k) for k in key)))


def realization_rng(master_seed: int, index: int) -> np.random.Generator:
    return substream(master_seed, STREAM_REALIZATION, index)


def derive_seed(master_seed: int, *key: int) -> int:
    """A new master seed, independent of the streams of ``master_seed``."""
    ss = np.random.SeedSequence(int(master_seed), spawn_key=(99,) + tuple(int(k) for k in key))
    return int(ss.generate_state(1, dtype=np.uint32)[0])


@dataclass
class ChannelRealization:
    per_user: list  # K complex vectors of length B*N
    user_powers: list  # W
    noise_power: float  # W

    def __post_init__(self):
        if len(self.per_user) != len(self.user_powers):
            raise ValueError("one power per user is required")
        if any(p <= 0 for p in self.user_powers) or not self.noise_power > 0:
            raise ValueError("powers must be positive")
        lengths = {len(h) for h in self.per_user}
        if len(lengths) > 1:
            raise ValueError(f"channel vectors differ in length: {sorted(lengths)}")

    @property
    def n_users(self) -> int:
        return len(self.per_user)


@dataclass(frozen=True)
class CapacityEstimate:
    mean: float
    std_error: float
    n_realizations: int

    @classmethod
    def from_samples(cls, samples) -> "CapacityEstimate":
        samples = np.asarray(samples, dtype=float)
        n = samples.size
        if n < 1:
            raise ValueError("no samples")
        # np.mean over a contiguous array uses fixed pairwise summation
        mean = float(np.mean(samples))
        se = float(np.std(samples, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
        return cls(mean, se, n)


def log2det_gram(H, snr) -> np.ndarray:
    """``log2 det(I + snr * H H^H)`` over the leading batch axes of ``H``.

    ``H`` has shape ``(..., K, M)``; the K x K form is used.  ``snr`` may be a
    scalar or broadcast against the batch axes.
    """
    H = np.asarray(H)
    K = H.shape[-2]
    if K == 0:
        return np.zeros(H.shape[:-2])
    G = H @ np.conj(np.swapaxes(H, -1, -2))
    snr = np.asarray(snr, dtype=float)[..., None, None]
    M = np.eye(K) + snr * G
    _, logdet = np.linalg.slogdet(M)
    return np.maximum(logdet / LN2, 0.0)


def sum_capacity(real: ChannelRealization) -> float:
    """Uplink MAC sum capacity ``log2 det(I + sigma^-2 sum_k p_k h_k h_k^H)``.

    Computed through the (usually smaller) user-domain Gram matrix, which
    has the same determinant.
    """
    if real.n_users < 1:
        raise ValueError("sum capacity needs at least one user")
    A = np.array([math.sqrt(p) * np.asarray(h) for p, h in zip(real.user_powers, real.per_user)])
    if A.ndim != 2:
        raise ValueError("channel vectors must be one-dimensional")
    M = A.shape[1]
    if A.shape[0] <= M:
        G = A @ A.conj().T
    else:
        G = A.T @ A.conj()
    _, logdet = np.linalg.slogdet(np.eye(G.shape[0]) + G / real.noise_power)
    return max(float(logdet) / LN2, 0.0)


def realization_users(scenario: ScenarioSpec, master_seed: int, index: int) -> UserRealization:
    return sample_users(scenario, realization_rng(master_seed, index))


def draw_realization(site: SiteGeometry, scenario: ScenarioSpec, master_seed: int, index: int) -> ChannelRealization:
    """Realization ``index`` of the channel law, synthesised for ``site``."""
    users = realization_users(scenario, master_seed, index)
    per_user = [
        synthesize_channel(site, paths, scenario.pattern, scenario.wavelength)
        for paths in users.paths
    ]
    return ChannelRealization(per_user, [scenario.user_power_w] * len(per_user), scenario.noise_power_w)


def _capacity_at(site, scenario, master_seed, index) -> float:
    real = draw_realization(site, scenario, master_seed, index)
    if real.n_users == 0:
        return 0.0
    return sum_capacity(real)


def _capacity_chunk(args) -> list:
    site, scenario, master_seed, indices = args
    return [_capacity_at(site, scenario, master_seed, i) for i in indices]


def capacity_samples(site, scenario, n, master_seed, workers=1) -> np.ndarray:
    """Per-realization sum capacities for realizations ``0 .. n-1``."""
    if workers <= 1 or n < 2:
        return np.array(_capacity_chunk((site, scenario, master_seed, range(n))))
    chunks = np.array_split(np.arange(n), min(workers * 4, n))
    jobs = [(site, scenario, master_seed, c.tolist()) for c in chunks]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        parts = list(ex.map(_capacity_chunk, jobs))
    return np.array([c for part in parts for c in part])


def monte_carlo_capacity(
    site: SiteGeometry,
    scenario: ScenarioSpec,
    n: int,
    master_seed: int,
    workers: int = 1,
) -> CapacityEstimate:
    """Mean and standard error of the sum capacity over ``n`` realizations.

    The result is bit-identical for any ``workers`` value: each realization
    owns its substream and the reduction runs in index order.
    """
    if n < 1:
        raise ValueError("need at least one realization")
    report = check_constraints(site)
    if not report.feasible:
        raise InfeasibleGeometryError("site violates movement constraints:\n" + report.summary(), report)
    return CapacityEstimate.from_samples(capacity_samples(site, scenario, n, master_seed, workers))


class RealizationBatch:
    """A fixed set of user realizations packed into padded arrays.

    Channel synthesis and capacity evaluation then vectorise over the whole
    batch, which is what the optimizers need: every candidate pose is scored
    on exactly the same realizations.  Padding users carry zero path gains
    and therefore contribute nothing to the determinant.
    """

    def __init__(self, scenario: ScenarioSpec, users: Sequence[UserRealization]):
        self.scenario = scenario
        self.users = list(users)
        n = len(self.users)
        k_max = max((u.n_users for u in self.users), default=0)
        l_max = max((len(p) for u in self.users for p in u.paths), default=1)
        self.directions = np.zeros((n, k_max, l_max, 3))
        self.directions[..., 0] = 1.0
        self.gains = np.zeros((n, k_max, l_max), dtype=complex)
        self.counts = np.array([u.n_users for u in self.users], dtype=int)
        for r, u in enumerate(self.users):
            for k, paths in enumerate(u.paths):
                for l, p in enumerate(paths):
                    self.directions[r, k, l] = p.direction
                    self.gains[r, k, l] = p.complex_gain

    @classmethod
    def draw(cls, scenario: ScenarioSpec, master_seed: int, n: int, start: int = 0) -> "RealizationBatch":
        return cls(scenario, [realization_users(scenario, master_seed, i) for i in range(start, start + n)])

    def __len__(self):
        return len(self.users)

    def subset(self, indices) -> "RealizationBatch":
        return RealizationBatch(self.scenario, [self.users[i] for i in indices])

    def block(self, pose, spec, offsets=None) -> np.ndarray:
        """Channel block of one surface for every realization, ``(n, K, N)``."""
        return surface_response(
            pose, spec, self.directions, self.gains,
            self.scenario.pattern, self.scenario.wavelength, offsets,
        )

    def blocks(self, site: SiteGeometry) -> list:
        return [self.block(pose, site.spec) for pose in site.surfaces]

    def channels(self, site: SiteGeometry) -> np.ndarray:
        """Stacked channels ``(n, K, B*N)``."""
        return np.concatenate(self.blocks(site), axis=-1)

    def capacities(self, H, power_w: float | None = None) -> np.ndarray:
        p = self.scenario.user_power_w if power_w is None else power_w
        return log2det_gram(H, p / self.scenario.noise_power_w)

    def site_capacities(self, site: SiteGeometry, power_w: float | None = None) -> np.ndarray:
        return self.capacities(self.channels(site), power_w)
