"""stlplan: trajectory planning for Signal Temporal Logic tasks over
systems whose dynamics are known only through offline trajectory data.

The pipeline decomposes a formula into timed progress conditions, allocates
a timed waypoint skeleton guided by data-driven transition-time estimates,
and completes it segment-wise into a fine-resolution trajectory; a
consistency-scored anytime search refines allocations, and an online
replanner recovers from execution-time disturbances.
"""

from .stl import (
    Predicate,
    parse_formula,
    horizon,
    close_unbounded,
    eval_boolean,
    eval_robustness,
    eval_robustness_downsampled,
)
from .decompose import (
    Decomposition,
    ProgressCondition,
    SymbolicBound,
    decompose,
    eliminate_disjunctions,
    preprocess,
    satisfied_under,
)
from .timebase import ConstraintStore
from .dataset import Dataset, Trajectory, load_dataset, save_dataset, downsample_dataset
from .predict import HeuristicTimePredictor, KnnTimePredictor, TimePrediction
from .allocate import (
    AllocationLimits,
    AllocationResult,
    RegionSampler,
    TimedWaypoint,
    allocate,
    validate_allocation,
)
from .generate import (
    DatasetWarpGenerator,
    GeometricGenerator,
    PlanTrajectory,
    SegmentSpec,
    complete_trajectory,
    verify_plan,
)
from .consistency import ConsistencyReport, DcmConfig, cvar, score
from .refine import ArsBudget, ars_search, multi_hypothesis_assign
from .replan import ReplanConfig, classify, global_replan, local_repair
from .sim import DoubleIntegratorEnv, ExecutorConfig, execute_plan, generate_offline_data
from .pipeline import TaskContext, plan_basic, plan_variant

__version__ = "0.1.0"
