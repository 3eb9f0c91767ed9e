"""Simulation and pose optimization for six-dimensional movable antenna sites."""

from .channel import DirectionalPattern, PropagationPath, element_gain, steering_vector, synthesize_channel, user_paths
from .geometry import (
    ConstraintReport,
    InfeasibleGeometryError,
    NoFeasibleRepairError,
    RotationAngles,
    SiteGeometry,
    SurfacePose,
    SurfaceSpec,
    check_constraints,
    global_antenna_position,
    project_to_feasible,
    rotation_matrix,
    surface_normal,
)
from .metrics import CapacityEstimate, ChannelRealization, monte_carlo_capacity, sum_capacity
from .optimize import (
    DiscreteGrid,
    OptimizationTrace,
    OptimizerConfig,
    alternating_optimize,
    csm_optimize,
    exhaustive_search,
    linearized_rotation_step,
    relax_and_quantize,
)
from .scenario import Hotspot, ScenarioSpec, UserRealization, sample_users
from .baselines import FasMaConfig, default_site, fas_ma_baseline, fpa_three_sector, rotation_only_site

__version__ = "0.1.0"
