"""Calibration, registration, guidance simulation and evaluation for
robot-assisted needle navigation with a tracked, holographic overlay.

Units: millimetres, degrees at the user boundary (radians internally),
seconds. ``T_ab`` maps coordinates in frame ``b`` into frame ``a``.
"""

from ._kernels import BACKEND
from .errors import (
    ConditioningWarning,
    ConfigError,
    CorruptFile,
    DegenerateGeometry,
    DegenerateMotion,
    DimensionMismatch,
    EmptyBlock,
    EmptyGroup,
    EmptySample,
    InsufficientData,
    InvalidValue,
    InvalidTimestep,
    MismatchedSets,
    PnavError,
    ZeroVector,
)
from .geom import RigidTransform, UnitQuaternion, compose, invert
from .guidance import (
    ControlMode,
    FixtureFrame,
    ImpedanceParams,
    InsertionTask,
    OperatorModel,
    SimConfig,
    SimState,
    critical_damping,
    fixture_stiffness,
    impedance_force,
    simulate_insertion,
    step_dynamics,
)
from .handeye import HandEyeSolution, MotionPair, PosePair, make_motion_pairs, rmse_e2h, solve_axxb
from .metrics import (
    GroupStats,
    Modality,
    NeedleObservation,
    PathSpec,
    TrialResult,
    aggregate,
    path_errors,
    wilcoxon_ranksum,
)
from .register import FiducialSet, ProbeSampleBlock, average_blocks, rmse_fiducials, svd_rigid_fit
from .robot import KinematicChain, default_chain, forward_kinematics, geometric_jacobian
from .scenario import NoiseConfig, ScenarioConfig, WorldTruth, gen_world, run_experiment, run_pipeline
from .stream import PoseFrame, StreamHeader, read_stream, stream_record, stream_replay

__version__ = "0.1.0"
