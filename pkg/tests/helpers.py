"""Shared test utilities."""

import math

import numpy as np

from sixdma.channel import PropagationPath
from sixdma.geometry import RotationAngles, SiteGeometry, SurfacePose, SurfaceSpec, angles_from_matrix
from sixdma.metrics import RealizationBatch
from sixdma.optimize import DiscreteGrid, OptimizerConfig
from sixdma.scenario import ScenarioSpec, UserRealization


def rotate_site(site, Q):
    """Apply one rotation about the CPU (origin) to every surface pose."""
    poses = [
        SurfacePose(Q @ p.q, angles_from_matrix(Q @ p.matrix()), p.frozen)
        for p in site.surfaces
    ]
    return site.with_surfaces(poses)


def rotate_batch(batch, Q):
    """Rotate every user position and path direction of a batch."""
    users = []
    for u in batch.users:
        paths = tuple(
            [PropagationPath(tuple(Q @ np.asarray(p.direction)), p.complex_gain) for p in user]
            for user in u.paths
        )
        users.append(UserRealization(u.positions @ Q.T, paths, u.regions))
    return RealizationBatch(batch.scenario, users)


def single_user_batch(scenario, direction, gain=1.0):
    """A one-realization batch holding one user with a single plane wave."""
    path = PropagationPath(tuple(direction), gain)
    user = UserRealization(np.zeros((1, 3)), ([path],), np.zeros(1, dtype=int))
    return RealizationBatch(scenario, [user])


SURFACE = SurfaceSpec.planar(2, 2, 0.05)
QUARTERS = (0.0, math.pi / 2, math.pi, 3 * math.pi / 2)
A, B = (0.75, 0.0, 0.0), (0.0, 0.75, 0.0)


def direction(az_deg, el_deg):
    az, el = math.radians(az_deg), math.radians(el_deg)
    return np.array([math.cos(el) * math.cos(az), math.cos(el) * math.sin(az), math.sin(el)])


def one_surface_site(center=A, rotation=RotationAngles()):
    return SiteGeometry((SurfacePose(center, rotation),), SURFACE, (0, 0, 0), 1.5, 0.4)


def tiny_instance(seed):
    """1-2 surfaces on a grid of at most 64 configurations."""
    scen = ScenarioSpec(mean_user_count=4.0, user_power_dbm=-10.0 + 5.0 * (seed % 3))
    cfg = OptimizerConfig(regime="discrete", max_outer_iters=4, mc_realizations=16, master_seed=seed)
    if seed % 2 == 0:
        site = one_surface_site()
        grid = DiscreteGrid((A, B), beta_levels=(0.0, 0.3), gamma_levels=QUARTERS)
    else:
        poses = (SurfacePose(A), SurfacePose(B, RotationAngles(0, 0, math.pi / 2)))
        site = SiteGeometry(poses, SURFACE, (0, 0, 0), 1.5, 0.4)
        grid = DiscreteGrid((A, B), gamma_levels=QUARTERS)
    return site, scen, cfg, grid
