import math
from dataclasses import replace

import numpy as np
import pytest
from numpy.testing import assert_allclose

from sixdma.baselines import default_site, fpa_three_sector
from sixdma.geometry import InfeasibleGeometryError, RotationAngles, SurfacePose
from sixdma.metrics import (
    CapacityEstimate,
    ChannelRealization,
    RealizationBatch,
    capacity_samples,
    derive_seed,
    draw_realization,
    log2det_gram,
    monte_carlo_capacity,
    sum_capacity,
)
from sixdma.scenario import ScenarioSpec

from .helpers import rotate_batch, rotate_site


@pytest.fixture(scope="module")
def small_site():
    return fpa_three_sector(default_site(3))


def random_realization(rng, K, M, scale=1.0):
    H = (rng.normal(size=(K, M)) + 1j * rng.normal(size=(K, M))) * scale
    powers = rng.uniform(0.1, 2.0, K)
    return ChannelRealization(list(H), list(powers), rng.uniform(0.1, 1.0))


def test_closed_form_examples():
    zero = ChannelRealization([np.zeros(4, complex)] * 2, [1.0, 1.0], 1.0)
    assert sum_capacity(zero) == 0.0
    one = ChannelRealization([np.array([1.0 + 0j])], [1.0], 1.0)
    assert abs(sum_capacity(one) - 1.0) <= 1e-12
    ortho = ChannelRealization([np.array([1.0, 0j]), np.array([0j, 1.0])], [3.0, 3.0], 1.0)
    assert abs(sum_capacity(ortho) - 4.0) <= 1e-12


def test_realization_validation():
    with pytest.raises(ValueError):
        ChannelRealization([np.ones(2), np.ones(3)], [1.0, 1.0], 1.0)
    with pytest.raises(ValueError):
        ChannelRealization([np.ones(2)], [0.0], 1.0)
    with pytest.raises(ValueError):
        ChannelRealization([np.ones(2)], [1.0, 2.0], 1.0)
    with pytest.raises(ValueError):
        sum_capacity(ChannelRealization([], [], 1.0))


def test_eigenvalue_form_agrees():
    rng = np.random.default_rng(0)
    for K, M in [(2, 5), (5, 2), (3, 3), (1, 8)]:
        real = random_realization(rng, K, M)
        A = np.array([math.sqrt(p) * h for p, h in zip(real.user_powers, real.per_user)])
        S = A.T @ A.conj() / real.noise_power  # M x M covariance
        eig = np.linalg.eigvalsh(S)
        expected = float(np.sum(np.log2(1.0 + eig)))
        assert sum_capacity(real) == pytest.approx(expected, rel=1e-9)
        assert log2det_gram(A / math.sqrt(real.noise_power), 1.0) == pytest.approx(expected, rel=1e-9)


def test_monotone_in_power_and_users():
    rng = np.random.default_rng(1)
    for _ in range(100):
        K, M = rng.integers(1, 6), rng.integers(1, 9)
        real = random_realization(rng, K, M)
        base = sum_capacity(real)
        c = rng.uniform(1.0, 10.0)
        louder = ChannelRealization(real.per_user, [c * p for p in real.user_powers], real.noise_power)
        assert sum_capacity(louder) >= base - 1e-12
        extra = random_realization(rng, 1, M)
        more = ChannelRealization(
            real.per_user + extra.per_user, real.user_powers + extra.user_powers, real.noise_power
        )
        assert sum_capacity(more) >= base - 1e-12


def test_log2det_gram_empty_and_batched():
    assert log2det_gram(np.zeros((3, 0, 4)), 1.0).tolist() == [0.0, 0.0, 0.0]
    rng = np.random.default_rng(2)
    H = rng.normal(size=(4, 2, 3)) + 1j * rng.normal(size=(4, 2, 3))
    batched = log2det_gram(H, 2.0)
    for r in range(4):
        real = ChannelRealization(list(H[r]), [2.0, 2.0], 1.0)
        assert batched[r] == pytest.approx(sum_capacity(real), rel=1e-12)


def test_estimate_from_samples():
    est = CapacityEstimate.from_samples([1.0, 2.0, 3.0, 4.0])
    assert est.mean == 2.5
    assert est.std_error == pytest.approx(np.std([1, 2, 3, 4], ddof=1) / 2.0)
    assert CapacityEstimate.from_samples([5.0]).std_error == 0.0
    with pytest.raises(ValueError):
        CapacityEstimate.from_samples([])


def test_single_realization_estimate(small_site):
    scen = ScenarioSpec()
    est = monte_carlo_capacity(small_site, scen, 1, 11)
    real = draw_realization(small_site, scen, 11, 0)
    expected = sum_capacity(real) if real.n_users else 0.0
    assert est.mean == expected
    assert est.n_realizations == 1


def test_monte_carlo_deterministic(small_site):
    scen = ScenarioSpec()
    a = monte_carlo_capacity(small_site, scen, 12, 5)
    b = monte_carlo_capacity(small_site, scen, 12, 5)
    c = monte_carlo_capacity(small_site, scen, 12, 5, workers=3)
    assert a == b == c


def test_monte_carlo_rejects_infeasible():
    site = fpa_three_sector(default_site(3))
    bad = site.with_surfaces([SurfacePose((0.5, 0, 0), RotationAngles(0, 0, math.pi))] + list(site.surfaces[1:]))
    with pytest.raises(InfeasibleGeometryError):
        monte_carlo_capacity(bad, ScenarioSpec(), 4, 0)
    with pytest.raises(ValueError):
        monte_carlo_capacity(site, ScenarioSpec(), 0, 0)


def test_batch_matches_per_realization(small_site):
    scen = replace(ScenarioSpec(), user_power_dbm=-5.0)
    batch = RealizationBatch.draw(scen, 21, 10)
    fast = batch.site_capacities(small_site)
    slow = capacity_samples(small_site, scen, 10, 21)
    assert_allclose(fast, slow, rtol=1e-12, atol=1e-12)


def test_batch_subsets_are_consistent():
    scen = ScenarioSpec()
    full = RealizationBatch.draw(scen, 3, 6)
    tail = RealizationBatch.draw(scen, 3, 3, start=3)
    for a, b in zip(full.users[3:], tail.users):
        assert a.paths == b.paths
    assert full.subset([1, 2]).users[0].paths == full.users[1].paths


def test_derive_seed_is_stable_and_distinct():
    assert derive_seed(7, 1) == derive_seed(7, 1)
    assert len({derive_seed(7, k) for k in range(20)}) == 20
    assert derive_seed(7, 1) != derive_seed(8, 1)


def test_std_error_halves_when_n_quadruples(small_site):
    scen = ScenarioSpec()
    ratios = []
    for rep in range(20):
        samples = capacity_samples(small_site, scen, 160, 1000 + rep)
        se_n = CapacityEstimate.from_samples(samples[:32]).std_error
        se_4n = CapacityEstimate.from_samples(samples[32:160]).std_error
        ratios.append(se_4n / se_n)
    assert 0.4 <= float(np.mean(ratios)) <= 0.6


def test_rigid_motion_invariance(small_site):
    scen = ScenarioSpec()
    batch = RealizationBatch.draw(scen, 4, 20)
    base = float(np.mean(batch.site_capacities(small_site)))
    rng = np.random.default_rng(3)
    for _ in range(5):
        Q = np.linalg.qr(rng.normal(size=(3, 3)))[0]
        Q *= np.sign(np.linalg.det(Q))
        moved = float(np.mean(rotate_batch(batch, Q).site_capacities(rotate_site(small_site, Q))))
        assert abs(moved - base) <= 1e-9 * abs(base)
