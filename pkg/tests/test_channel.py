import math
from dataclasses import replace

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from sixdma.channel import (
    DirectionalPattern,
    PropagationPath,
    element_gain,
    steering_vector,
    synthesize_channel,
    user_paths,
)
from sixdma.geometry import (
    RotationAngles,
    SiteGeometry,
    SurfacePose,
    SurfaceSpec,
    angles_from_matrix,
    rotation_matrix,
)
from sixdma.scenario import ScenarioSpec

LAM = 0.1


def unit(v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


def random_unit(rng, n=None):
    v = rng.normal(size=(3,) if n is None else (n, 3))
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def random_pose(rng, scale=1.0):
    return SurfacePose(rng.uniform(-scale, scale, 3), RotationAngles(*rng.uniform(0, 7, 3)))


def test_steering_zero_phase():
    spec = SurfaceSpec(((0.0, 0.0, 0.0),))
    rng = np.random.default_rng(0)
    for d in random_unit(rng, 5):
        assert_array_equal(steering_vector(SurfacePose((0, 0, 0)), spec, d, LAM), [1 + 0j])


def test_steering_endfire_pair():
    spec = SurfaceSpec(((LAM / 4, 0, 0), (-LAM / 4, 0, 0)))
    a = steering_vector(SurfacePose((0, 0, 0)), spec, (1, 0, 0), LAM)
    assert_allclose(a, [1j, -1j], atol=1e-15)


def test_steering_unit_modulus_and_bad_wavelength():
    rng = np.random.default_rng(1)
    spec = SurfaceSpec.planar(3, 3, LAM / 2)
    for _ in range(100):
        a = steering_vector(random_pose(rng, 5.0), spec, random_unit(rng), LAM)
        assert np.max(np.abs(np.abs(a) - 1.0)) <= 1e-12
    with pytest.raises(ValueError):
        steering_vector(SurfacePose((0, 0, 0)), spec, (1, 0, 0), 0.0)


def test_steering_rotation_transfer():
    rng = np.random.default_rng(2)
    spec = SurfaceSpec.planar(2, 2, LAM / 2)
    for _ in range(100):
        u = RotationAngles(*rng.uniform(0, 7, 3))
        k = random_unit(rng)
        rotated = steering_vector(SurfacePose((0, 0, 0), u), spec, k, LAM)
        plain = steering_vector(SurfacePose((0, 0, 0)), spec, rotation_matrix(u).T @ k, LAM)
        assert_allclose(rotated, plain, rtol=0, atol=1e-12)


def test_element_gain_reference_values():
    spec = SurfaceSpec(((0, 0, 0),))
    pattern = DirectionalPattern()
    pose = SurfacePose((0, 0, 0))
    assert element_gain(pose, spec, (1, 0, 0), pattern) == pytest.approx(10 ** 0.8, rel=1e-12)
    side = (math.cos(math.radians(65)), math.sin(math.radians(65)), 0.0)
    assert element_gain(pose, spec, side, pattern) == pytest.approx(10 ** -0.4, rel=1e-12)
    assert element_gain(pose, spec, (-1, 0, 0), pattern) == pytest.approx(10 ** -2.2, rel=1e-12)
    assert 10 ** -0.4 == pytest.approx(0.3981, abs=1e-4)


def test_element_gain_elevation_cut():
    # 65 degrees above boresight in the vertical plane: same -12 dB
    spec = SurfaceSpec(((0, 0, 0),))
    d = (math.cos(math.radians(65)), 0.0, math.sin(math.radians(65)))
    assert element_gain(SurfacePose((0, 0, 0)), spec, d, DirectionalPattern()) == pytest.approx(10 ** -0.4)


def test_element_gain_follows_rotation():
    spec = SurfaceSpec(((0, 0, 0),))
    pose = SurfacePose((0, 0, 0), RotationAngles(0.3, -0.4, 2.0))
    boresight = rotation_matrix(pose.rotation) @ [1, 0, 0]
    assert element_gain(pose, spec, boresight, DirectionalPattern()) == pytest.approx(10 ** 0.8)


def test_element_gain_peak_at_boresight():
    rng = np.random.default_rng(3)
    spec = SurfaceSpec(((0, 0, 0),), (0.0, 0.0, 1.0))
    pose = SurfacePose((0, 0, 0), RotationAngles(1.0, 2.0, 3.0))
    pattern = DirectionalPattern()
    peak = element_gain(pose, spec, rotation_matrix(pose.rotation) @ [0, 0, 1], pattern)
    for d in random_unit(rng, 10_000):
        assert element_gain(pose, spec, d, pattern) <= peak


def test_pattern_validation():
    with pytest.raises(ValueError):
        DirectionalPattern(hpbw_deg=0)
    with pytest.raises(ValueError):
        DirectionalPattern(front_back_db=-1)


def brute_force_channel(site, paths, pattern, lam):
    out = []
    for pose in site.surfaces:
        R = rotation_matrix(pose.rotation)
        for r in site.spec.local_offsets:
            pos = np.asarray(pose.center) + R @ np.asarray(r)
            h = 0j
            for p in paths:
                g = element_gain(pose, site.spec, p.direction, pattern)
                h += p.complex_gain * math.sqrt(g) * np.exp(1j * 2 * math.pi / lam * np.dot(p.direction, pos))
            out.append(h)
    return np.array(out)


def random_paths(rng, n):
    return [
        PropagationPath(tuple(random_unit(rng)), complex(*rng.normal(size=2)))
        for _ in range(n)
    ]


def test_synthesize_matches_double_loop():
    rng = np.random.default_rng(4)
    pattern = DirectionalPattern()
    for _ in range(10):
        spec = SurfaceSpec.planar(2, 2, LAM / 2)
        site = SiteGeometry(tuple(random_pose(rng) for _ in range(3)), spec, (0, 0, 0), 2.0, 0.1)
        paths = random_paths(rng, 5)
        h = synthesize_channel(site, paths, pattern, LAM)
        ref = brute_force_channel(site, paths, pattern, LAM)
        assert h.shape == (12,)
        assert np.linalg.norm(h - ref) <= 1e-10 * np.linalg.norm(ref)


def test_synthesize_trivial_cases():
    spec = SurfaceSpec(((0, 0, 0),))
    site = SiteGeometry((SurfacePose((0, 0, 0)),), spec, (0, 0, 0), 1.0, 0.1)
    iso = DirectionalPattern.isotropic()
    assert_allclose(synthesize_channel(site, [PropagationPath((0, 1, 0), 1.0)], iso, LAM), [1 + 0j])
    eta = 0.3 - 0.2j
    cancel = [PropagationPath((0, 0, 1), eta), PropagationPath((0, 0, 1), -eta)]
    assert_array_equal(synthesize_channel(site, cancel, DirectionalPattern(), LAM), [0j])
    with pytest.raises(ValueError):
        synthesize_channel(site, [], iso, LAM)


def test_synthesize_additive_in_paths():
    rng = np.random.default_rng(5)
    spec = SurfaceSpec.planar(2, 2, LAM / 2)
    site = SiteGeometry(tuple(random_pose(rng) for _ in range(3)), spec, (0, 0, 0), 2.0, 0.1)
    a, b = random_paths(rng, 3), random_paths(rng, 4)
    pattern = DirectionalPattern()
    whole = synthesize_channel(site, a + b, pattern, LAM)
    parts = synthesize_channel(site, a, pattern, LAM) + synthesize_channel(site, b, pattern, LAM)
    assert_allclose(whole, parts, rtol=0, atol=1e-12)


def test_rigid_motion_keeps_channel_modulus():
    rng = np.random.default_rng(6)
    spec = SurfaceSpec.planar(2, 2, LAM / 2)
    pattern = DirectionalPattern()
    for _ in range(10):
        poses = [random_pose(rng) for _ in range(3)]
        paths = random_paths(rng, 4)
        Q = rotation_matrix(RotationAngles(*rng.uniform(0, 7, 3)))
        moved = [
            SurfacePose(Q @ p.q, angles_from_matrix(Q @ p.matrix())) for p in poses
        ]
        turned = [PropagationPath(tuple(Q @ np.asarray(p.direction)), p.complex_gain) for p in paths]
        site = SiteGeometry(tuple(poses), spec, (0, 0, 0), 2.0, 0.1)
        h = synthesize_channel(site, paths, pattern, LAM)
        h2 = synthesize_channel(site.with_surfaces(moved), turned, pattern, LAM)
        assert_allclose(np.abs(h2), np.abs(h), rtol=0, atol=1e-10)


def test_path_direction_normalised():
    p = PropagationPath((3.0, 4.0, 0.0), 1.0)
    assert_allclose(p.direction, (0.6, 0.8, 0.0))
    with pytest.raises(ValueError):
        PropagationPath((1, 0, 0), complex("nan"))


def test_user_paths_los_only():
    scen = ScenarioSpec(rician_factor=math.inf)
    paths = user_paths(scen, (100.0, 0.0, 1.5), np.random.default_rng(0))
    assert len(paths) == 1
    d = np.array([100.0, 0.0, 1.5 - 25.0])
    assert_allclose(paths[0].direction, unit(d), atol=1e-15)
    dist = np.linalg.norm(d)
    amp = LAM / (4 * math.pi * dist) * dist ** -0.25
    assert abs(paths[0].complex_gain) == pytest.approx(amp, rel=1e-12)


def test_user_paths_deterministic_and_bounded():
    scen = ScenarioSpec()
    a = user_paths(scen, (50.0, 30.0, 1.5), np.random.default_rng(9))
    b = user_paths(scen, (50.0, 30.0, 1.5), np.random.default_rng(9))
    assert a == b
    assert len(a) == 1 + scen.n_nlos
    los = np.asarray(a[0].direction)
    for p in a[1:]:
        angle = math.degrees(math.acos(min(1.0, float(np.dot(los, p.direction)))))
        assert angle <= scen.angular_spread_deg + 1e-9
    with pytest.raises(ValueError):
        user_paths(scen, (300.0, 0.0, 1.5), np.random.default_rng(0))


def test_rician_ratio():
    scen = ScenarioSpec(rician_factor=4.0)
    rng = np.random.default_rng(10)
    los, nlos = 0.0, 0.0
    for _ in range(10_000):
        paths = user_paths(scen, (80.0, -40.0, 1.5), rng)
        los += abs(paths[0].complex_gain) ** 2
        nlos += sum(abs(p.complex_gain) ** 2 for p in paths[1:])
    assert los / nlos == pytest.approx(4.0, rel=0.05)


def test_zero_nlos_paths():
    scen = replace(ScenarioSpec(), n_nlos=0)
    assert len(user_paths(scen, (80.0, 0.0, 1.5), np.random.default_rng(0))) == 1
