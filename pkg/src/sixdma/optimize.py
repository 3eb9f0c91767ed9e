"""Pose optimization for movable antenna sites.

Three regimes are provided:

``alternating_optimize``
    Statistical-CSI design.  Surfaces are visited one at a time with all
    others held fixed; each visit scores a handful of bounded random moves
    (small linearised rotations plus position steps) on a fixed batch of
    Monte-Carlo realizations and keeps the best one if it helps.
``relax_and_quantize``
    Discrete levels: optimize continuously, then snap every coordinate to
    its nearest level, repairing infeasible snaps locally.
``csm_optimize``
    No prior CSI: measure random grid configurations and pick, coordinate
    by coordinate, the level with the best conditional sample mean.

``exhaustive_search`` enumerates a small grid and serves as the oracle.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .geometry import (
    InfeasibleGeometryError,
    RotationAngles,
    SiteGeometry,
    SurfacePose,
    angles_from_matrix,
    check_constraints,
    circular_distance,
    nearest_rotation,
    project_to_feasible,
    rotation_between,
    rotation_matrix,
    skew,
)
from .metrics import (
    STREAM_CANDIDATES,
    STREAM_CSM,
    CapacityEstimate,
    RealizationBatch,
    substream,
)
from .scenario import ScenarioSpec, sample_users

REGIMES = ("continuous", "discrete", "csm")


@dataclass(frozen=True)
class OptimizerConfig:
    regime: str = "continuous"
    max_outer_iters: int = 8
    candidates_per_surface: int = 8
    rotation_step_cap: float = 0.2  # rad
    position_step_cap: float = 0.15  # m
    mc_realizations: int = 64
    master_seed: int = 0
    improvement_tol: float = 1e-4  # bits/s/Hz
    csm_budget: int = 200
    csm_realizations_per_sample: int = 4

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise ValueError(f"regime must be one of {REGIMES}, got {self.regime!r}")
        if self.max_outer_iters < 0:
            raise ValueError("max_outer_iters must be non-negative")
        if self.candidates_per_surface < 1 or self.mc_realizations < 1:
            raise ValueError("candidate and realization budgets must be >= 1")
        if not self.rotation_step_cap > 0:
            raise ValueError("rotation_step_cap must be positive")
        if self.position_step_cap < 0:
            raise ValueError("position_step_cap must be non-negative")
        if self.csm_budget < 1 or self.csm_realizations_per_sample < 1:
            raise ValueError("CSM budgets must be >= 1")


@dataclass(frozen=True)
class DiscreteGrid:
    position_levels: tuple
    alpha_levels: tuple = (0.0,)
    beta_levels: tuple = (0.0,)
    gamma_levels: tuple = (0.0,)

    def __post_init__(self):
        pos = tuple(tuple(float(c) for c in p) for p in self.position_levels)
        if not pos or any(len(p) != 3 for p in pos):
            raise ValueError("position_levels must be a non-empty list of 3-vectors")
        if len(set(pos)) != len(pos):
            raise ValueError("duplicate position level")
        object.__setattr__(self, "position_levels", pos)
        for name in ("alpha_levels", "beta_levels", "gamma_levels"):
            raw = getattr(self, name)
            levels = tuple(sorted(RotationAngles(a).alpha for a in raw))
            if not levels:
                raise ValueError(f"{name} is empty")
            if len(set(levels)) != len(levels):
                raise ValueError(f"duplicate level in {name}")
            object.__setattr__(self, name, levels)

    @property
    def angle_levels(self) -> tuple:
        return (self.alpha_levels, self.beta_levels, self.gamma_levels)

    @property
    def shape(self) -> tuple:
        """Level counts of one surface: (positions, alpha, beta, gamma)."""
        return (len(self.position_levels),) + tuple(len(a) for a in self.angle_levels)

    def pose(self, levels, frozen: bool = False) -> SurfacePose:
        p, a, b, g = levels
        rot = RotationAngles(self.alpha_levels[a], self.beta_levels[b], self.gamma_levels[g])
        return SurfacePose(self.position_levels[p], rot, frozen)

    def nearest_levels(self, pose: SurfacePose, k: int = 1) -> list:
        """Per coordinate, the ``k`` nearest level indices and their errors.

        Ties go to the lower level index.
        """
        out = []
        q = pose.q
        d = np.linalg.norm(np.array(self.position_levels) - q, axis=1)
        order = np.argsort(d, kind="stable")[:k]
        out.append([(int(i), float(d[i])) for i in order])
        for angle, levels in zip(pose.rotation.as_array(), self.angle_levels):
            d = np.array([circular_distance(angle, lv) for lv in levels])
            order = np.argsort(d, kind="stable")[:k]
            out.append([(int(i), float(d[i])) for i in order])
        return out


@dataclass(frozen=True)
class Move:
    iteration: int
    surface: int
    before: float
    after: float


@dataclass
class OptimizationTrace:
    """Result of an optimizer run.

    ``objectives[0]`` is the starting value and each later entry the value
    after one outer iteration.  ``info`` holds regime-specific extras, e.g.
    ``history`` (poses after every iteration) for the continuous regime.
    """

    objectives: list
    moves: list
    poses: tuple
    estimate: CapacityEstimate
    info: dict = field(default_factory=dict)

    @property
    def objective(self) -> float:
        return self.objectives[-1]

    def site(self, template: SiteGeometry) -> SiteGeometry:
        return template.with_surfaces(self.poses)


class NoFeasibleQuantizationError(InfeasibleGeometryError):
    pass


def linearized_rotation_step(u: RotationAngles, delta, cap: float | None = None) -> RotationAngles:
    """Apply a small body-frame rotation ``delta`` through ``R(u) (I + [delta]_x)``.

    The first-order product is projected back onto SO(3) before the angles
    are read off.
    """
    delta = np.asarray(delta, dtype=float)
    if cap is not None and np.max(np.abs(delta)) > cap:
        raise ValueError(f"rotation step {delta} exceeds cap {cap}")
    if not np.any(delta):
        return u
    R = rotation_matrix(u) @ (np.eye(3) + skew(delta))
    return angles_from_matrix(nearest_rotation(R))


def _require_feasible(site: SiteGeometry):
    report = check_constraints(site)
    if not report.feasible:
        raise InfeasibleGeometryError("initial site is infeasible:\n" + report.summary(), report)


def evaluate_poses(batch: RealizationBatch, site: SiteGeometry) -> np.ndarray:
    """Per-realization capacity of ``site`` on ``batch`` (fresh computation)."""
    return batch.site_capacities(site)


class _GramCache:
    """Per-surface Gram contributions, so one-surface changes are cheap."""

    def __init__(self, batch: RealizationBatch, site: SiteGeometry):
        self.batch = batch
        self.spec = site.spec
        self.snr = batch.scenario.user_power_w / batch.scenario.noise_power_w
        self.poses = list(site.surfaces)
        self.grams = [self._gram(p) for p in self.poses]
        self.total = sum(self.grams)

    def _gram(self, pose):
        h = self.batch.block(pose, self.spec)
        return h @ np.conj(np.swapaxes(h, -1, -2))

    def _capacity(self, G):
        K = G.shape[-1]
        if K == 0:
            return np.zeros(G.shape[0])
        _, logdet = np.linalg.slogdet(np.eye(K) + self.snr * G)
        return np.maximum(logdet / math.log(2.0), 0.0)

    def score(self, poses):
        G = self.total
        changed = {}
        for i, p in enumerate(poses):
            if p != self.poses[i]:
                changed[i] = self._gram(p)
                G = G - self.grams[i] + changed[i]
        return float(np.mean(self._capacity(G))), changed

    def commit(self, poses, changed):
        for i, g in changed.items():
            self.grams[i] = g
        self.poses = list(poses)
        self.total = sum(self.grams)


PAIR_SCALES = 4  # antithetic pairs use caps scaled by 1, 1/2, 1/4, 1/8


def _candidates(pose: SurfacePose, cfg: OptimizerConfig, rng) -> list:
    """Bounded random moves of one surface, in antithetic pairs.

    Pair ``m`` draws ``(delta, step)`` uniformly within the caps scaled by
    ``2**-(m % PAIR_SCALES)`` and proposes both ``+`` and ``-`` of it, so at
    least one side of a smooth objective is always probed, at several scales.
    """
    out = []
    for c in range(cfg.candidates_per_surface):
        if c % 2 == 0:
            scale = 0.5 ** ((c // 2) % PAIR_SCALES)
            delta = rng.uniform(-1.0, 1.0, 3) * (cfg.rotation_step_cap * scale)
            step = rng.uniform(-1.0, 1.0, 3) * (cfg.position_step_cap * scale)
            sign = 1.0
        else:
            sign = -1.0
        rot = linearized_rotation_step(pose.rotation, sign * delta, cfg.rotation_step_cap)
        center = pose.q + sign * step if cfg.position_step_cap > 0 else pose.center
        out.append(pose.moved(center=center, rotation=rot))
    return out


def alternating_optimize(
    site: SiteGeometry,
    scenario: ScenarioSpec,
    cfg: OptimizerConfig,
    batch: RealizationBatch | None = None,
) -> OptimizationTrace:
    """Statistical-CSI pose design by alternating per-surface random search.

    Each surface visit proposes ``cfg.candidates_per_surface`` moves (see
    :func:`_candidates`), repairs them with :func:`project_to_feasible` and
    keeps the best if it beats the incumbent by ``cfg.improvement_tol``.
    Every candidate in a run is scored on the same realization batch
    (``cfg.mc_realizations`` draws of ``cfg.master_seed``), so candidate
    rankings are noise-consistent and the objective trace is comparable
    across iterations.
    """
    if cfg.regime != "continuous":
        raise ValueError(f"alternating_optimize needs regime 'continuous', got {cfg.regime!r}")
    _require_feasible(site)
    if batch is None:
        batch = RealizationBatch.draw(scenario, cfg.master_seed, cfg.mc_realizations)
    cache = _GramCache(batch, site)
    poses = list(site.surfaces)
    current, _ = cache.score(poses)
    objectives = [current]
    history = [tuple(poses)]
    moves = []
    movable = [i for i, p in enumerate(poses) if not p.frozen]

    for it in range(1, cfg.max_outer_iters + 1):
        accepted = False
        for i in movable:
            rng = substream(cfg.master_seed, STREAM_CANDIDATES, it, i)
            best = None
            for cand in _candidates(poses[i], cfg, rng):
                proposal = list(poses)
                proposal[i] = cand
                repaired = project_to_feasible(site, proposal, fallback=poses)
                if repaired == poses:
                    continue
                value, changed = cache.score(repaired)
                if best is None or value > best[0]:
                    best = (value, repaired, changed)
            if best is not None and best[0] > current + cfg.improvement_tol:
                moves.append(Move(it, i, current, best[0]))
                current = best[0]
                poses = best[1]
                cache.commit(poses, best[2])
                accepted = True
        objectives.append(current)
        history.append(tuple(poses))
        if not accepted:
            break

    final = site.with_surfaces(poses)
    estimate = CapacityEstimate.from_samples(evaluate_poses(batch, final))
    return OptimizationTrace(objectives, moves, tuple(poses), estimate, {"history": history})


def _isotonic(y) -> np.ndarray:
    """Least-squares non-decreasing fit (pool adjacent violators)."""
    blocks = []  # [mean, weight]
    for v in y:
        blocks.append([float(v), 1])
        while len(blocks) > 1 and blocks[-2][0] > blocks[-1][0]:
            m2, w2 = blocks.pop()
            m1, w1 = blocks.pop()
            blocks.append([(m1 * w1 + m2 * w2) / (w1 + w2), w1 + w2])
    return np.concatenate([np.full(w, m) for m, w in blocks])


def los_directions(batch: RealizationBatch) -> np.ndarray:
    """Line-of-sight unit directions of every real user in ``batch``."""
    mask = np.arange(batch.directions.shape[1])[None, :] < batch.counts[:, None]
    return batch.directions[:, :, 0, :][mask]


def ring_layout(template: SiteGeometry, batch: RealizationBatch, tilt: float | None = None) -> SiteGeometry:
    """Statistical-CSI starting layout on a horizontal ring.

    Surfaces sit on the circle of radius ``feasible_radius`` about the CPU
    with outward normals, at azimuths that follow the quantiles of the
    users' line-of-sight azimuths, spread apart just enough to keep
    ``d_min``.  Every normal is tilted down by ``tilt`` radians (default:
    the median user depression angle).  A ring with outward normals is
    convex, so the layout is feasible by construction.
    """
    B = template.n_surfaces
    radius = template.feasible_radius
    if template.d_min > 2.0 * radius:
        raise InfeasibleGeometryError("d_min exceeds the ring diameter")
    sep = 2.0 * math.asin(template.d_min / (2.0 * radius)) * (1.0 + 1e-9)
    if B * sep > 2.0 * math.pi:
        raise InfeasibleGeometryError(f"{B} surfaces do not fit on the ring with spacing {template.d_min}")

    d = los_directions(batch)
    if len(d) == 0:
        az = 2.0 * math.pi * (np.arange(B) + 0.5) / B
        depression = 0.0
    else:
        raw = np.sort(np.mod(np.arctan2(d[:, 1], d[:, 0]), 2.0 * math.pi))
        # cut the circle at the widest empty gap
        gaps = np.diff(np.append(raw, raw[0] + 2.0 * math.pi))
        start = raw[(int(np.argmax(gaps)) + 1) % len(raw)]
        unwrapped = np.sort(np.mod(raw - start, 2.0 * math.pi))
        targets = np.quantile(unwrapped, (np.arange(B) + 0.5) / B)
        steps = sep * np.arange(B)
        az = _isotonic(targets - steps) + steps
        if az[-1] - az[0] > 2.0 * math.pi - sep:
            az = az[0] + 2.0 * math.pi * np.arange(B) / B
        az = az + start
        depression = float(np.median(np.arcsin(np.clip(-d[:, 2], -1.0, 1.0))))
    tilt = depression if tilt is None else tilt

    align = rotation_between(template.spec.normal, np.array([1.0, 0.0, 0.0]))
    poses = []
    for a in az:
        R = rotation_matrix(RotationAngles(0.0, tilt, a)) @ align
        center = template.cpu + radius * np.array([math.cos(a), math.sin(a), 0.0])
        poses.append(SurfacePose(center, angles_from_matrix(R)))
    site = template.with_surfaces(poses)
    _require_feasible(site)
    return site


def quantize_site(site: SiteGeometry, grid: DiscreteGrid) -> SiteGeometry:
    """Snap every movable surface to its nearest grid levels."""
    poses = []
    for p in site.surfaces:
        if p.frozen:
            poses.append(p)
            continue
        levels = [c[0][0] for c in grid.nearest_levels(p, 1)]
        poses.append(grid.pose(levels, frozen=False))
    return site.with_surfaces(poses)


def _neighbourhood(grid: DiscreteGrid, pose: SurfacePose) -> list:
    per_coord = grid.nearest_levels(pose, 3)
    combos = []
    for choice in itertools.product(*per_coord):
        err = sum(e for _, e in choice)
        combos.append((err, tuple(i for i, _ in choice)))
    combos.sort(key=lambda c: c[0])
    return [levels for _, levels in combos]


def _repair_quantized(relaxed: SiteGeometry, quantized: SiteGeometry, grid: DiscreteGrid) -> SiteGeometry:
    poses = list(quantized.surfaces)
    report = check_constraints(quantized)
    if report.feasible:
        return quantized
    offenders = []
    for v in report:
        for i in v.surfaces:
            if i not in offenders and not poses[i].frozen:
                offenders.append(i)
    for i in offenders:
        fixed_i = None
        for levels in _neighbourhood(grid, relaxed.surfaces[i]):
            trial = list(poses)
            trial[i] = grid.pose(levels)
            rep = check_constraints(quantized, trial)
            if rep.feasible:
                return quantized.with_surfaces(trial)
            if fixed_i is None and not any(i in v.surfaces for v in rep):
                fixed_i = trial[i]
        if fixed_i is not None:
            poses[i] = fixed_i
    final = quantized.with_surfaces(poses)
    report = check_constraints(final)
    if not report.feasible:
        raise NoFeasibleQuantizationError("no feasible quantized configuration found:\n" + report.summary(), report)
    return final


def relax_and_quantize(
    site: SiteGeometry,
    scenario: ScenarioSpec,
    cfg: OptimizerConfig,
    grid: DiscreteGrid,
) -> OptimizationTrace:
    """Continuous optimization followed by nearest-level quantization.

    The relaxation runs from ``site`` and, when no surface is frozen, also
    from :func:`ring_layout`; each result is quantized and the better one on
    the shared realization batch is returned.  The reported objective is
    evaluated at the quantized poses on that batch.
    """
    if cfg.regime != "discrete":
        raise ValueError(f"relax_and_quantize needs regime 'discrete', got {cfg.regime!r}")
    _require_feasible(site)
    batch = RealizationBatch.draw(scenario, cfg.master_seed, cfg.mc_realizations)
    starts = [("given", site)]
    if not any(p.frozen for p in site.surfaces):
        try:
            starts.append(("ring", ring_layout(site, batch)))
        except InfeasibleGeometryError:
            pass
    best, error = None, None
    for name, start in starts:
        relaxed_trace = alternating_optimize(start, scenario, replace(cfg, regime="continuous"), batch)
        relaxed = relaxed_trace.site(site)
        try:
            quantized = _repair_quantized(relaxed, quantize_site(relaxed, grid), grid)
        except NoFeasibleQuantizationError as exc:
            error = error or exc
            continue
        estimate = CapacityEstimate.from_samples(evaluate_poses(batch, quantized))
        if best is None or estimate.mean > best[0].mean:
            best = (estimate, quantized, relaxed_trace, relaxed, name)
    if best is None:
        raise error
    estimate, quantized, relaxed_trace, relaxed, name = best
    return OptimizationTrace(
        [estimate.mean],
        relaxed_trace.moves,
        quantized.surfaces,
        estimate,
        {"relaxed_objective": relaxed_trace.objective, "relaxed_poses": relaxed.surfaces, "start": name},
    )


def _surface_space(site: SiteGeometry, grid: DiscreteGrid):
    movable = [i for i, p in enumerate(site.surfaces) if not p.frozen]
    dims = grid.shape * len(movable)
    return movable, dims


def _config_poses(site, grid, movable, flat_levels):
    poses = list(site.surfaces)
    for s, i in enumerate(movable):
        poses[i] = grid.pose(flat_levels[4 * s: 4 * s + 4])
    return poses


def exhaustive_search(
    site: SiteGeometry,
    scenario: ScenarioSpec,
    grid: DiscreteGrid,
    n_realizations: int = 64,
    master_seed: int = 0,
    cap: int = 10 ** 6,
    metric: Callable | None = None,
):
    """Best feasible grid configuration by full enumeration.

    Returns ``(site, objective)``.  Configurations are visited in
    lexicographic level order and only a strictly better one replaces the
    incumbent.
    """
    movable, dims = _surface_space(site, grid)
    total = math.prod(dims)
    if total > cap:
        raise ValueError(f"{total} configurations exceed the enumeration cap {cap}")
    if metric is None:
        batch = RealizationBatch.draw(scenario, master_seed, n_realizations)

        def metric(candidate):
            return float(np.mean(evaluate_poses(batch, candidate)))

    best = None
    for flat in itertools.product(*(range(d) for d in dims)):
        candidate = site.with_surfaces(_config_poses(site, grid, movable, flat))
        if not check_constraints(candidate).feasible:
            continue
        value = metric(candidate)
        if best is None or value > best[1]:
            best = (candidate, value)
    if best is None:
        raise NoFeasibleQuantizationError("no feasible configuration in the grid")
    return best


def _csm_metric(scenario: ScenarioSpec, seed: int, per_sample: int):
    def metric(candidate: SiteGeometry, index: int) -> float:
        users = [sample_users(scenario, substream(seed, STREAM_CSM, index, r)) for r in range(per_sample)]
        batch = RealizationBatch(scenario, users)
        return float(np.mean(evaluate_poses(batch, candidate)))

    return metric


def csm_optimize(
    site: SiteGeometry,
    scenario: ScenarioSpec,
    grid: DiscreteGrid,
    budget: int,
    seed: int,
    realizations_per_sample: int = 4,
    metric: Callable | None = None,
    cap: int = 10 ** 6,
) -> OptimizationTrace:
    """Training-based design by conditional sample means.

    ``budget`` random feasible grid configurations are measured with
    ``metric(site, sample_index)`` (by default the mean capacity over a few
    fresh realizations, i.e. a noisy measurement).  Each coordinate -- a
    surface's position level or one of its angle levels -- is then set to
    the level whose samples have the highest mean metric.  If the assembled
    configuration is infeasible the best measured sample is returned.
    """
    if budget < 1:
        raise ValueError("empty training set: budget must be >= 1")
    if metric is None:
        metric = _csm_metric(scenario, seed, realizations_per_sample)
    rng = substream(seed, STREAM_CSM)
    movable, dims = _surface_space(site, grid)
    total = math.prod(dims)

    def candidates():
        if total <= cap:
            for flat in rng.permutation(total):
                yield np.unravel_index(int(flat), dims)
        else:
            for _ in range(50 * budget):
                yield tuple(int(rng.integers(d)) for d in dims)

    samples, values = [], []
    for levels in candidates():
        levels = tuple(int(v) for v in levels)
        cand = site.with_surfaces(_config_poses(site, grid, movable, levels))
        if not check_constraints(cand).feasible:
            continue
        values.append(metric(cand, len(samples)))
        samples.append(levels)
        if len(samples) == budget:
            break
    if not samples:
        raise NoFeasibleQuantizationError("no feasible training configuration drawn")

    S = np.array(samples)
    v = np.array(values)
    chosen = []
    for c, d in enumerate(dims):
        means = np.full(d, -np.inf)
        for level in range(d):
            hit = S[:, c] == level
            if hit.any():
                means[level] = v[hit].mean()
        chosen.append(int(np.argmax(means)))

    assembled = site.with_surfaces(_config_poses(site, grid, movable, chosen))
    fell_back = False
    if not check_constraints(assembled).feasible:
        best = int(np.argmax(v))
        assembled = site.with_surfaces(_config_poses(site, grid, movable, samples[best]))
        chosen = list(samples[best])
        fell_back = True
    final = metric(assembled, len(samples))
    return OptimizationTrace(
        [final],
        [],
        assembled.surfaces,
        CapacityEstimate(final, 0.0, 1),
        {"levels": tuple(chosen), "samples": samples, "values": values, "fell_back": fell_back},
    )
