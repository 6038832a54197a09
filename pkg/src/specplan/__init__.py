"""Highway lane-change simulation with speculative planning under
adaptive probabilistic prediction of the surrounding vehicle."""

from .scenario import (
    EXITED_LANE,
    ConservativenessError,
    IdmParams,
    RandomizationSpec,
    RoadGeometry,
    RouteId,
    SafetyParams,
    ScenarioConfig,
    ScenarioValidationError,
    SurroundingDriverModel,
    SystemState,
    TrajectoryParams,
    lane_occupancy,
    load_config,
    save_config,
    validate,
)
from .dynamics import (
    lane_change_gap,
    phi_accel,
    psi_lane,
    step_ego,
    step_surrounding,
    system_step,
)
from .prediction import (
    BoundedDist,
    ParamDistribution,
    Prediction,
    PredictionEntry,
    adapt,
    condition_on_aggressiveness,
    is_feasible,
    make_prediction,
    sample_params,
)
from .reachability import MIN_GAP_SENTINEL, OccupancyTube, min_gap, occupancy_tube
from .planner import PlanResult, expected_reward, inner_q, plan, safety_eval
from .baselines import PLANNER_NAMES, idm_accel, make_planner, mpc_plan, with_aggressiveness
from .harness import (
    EpisodeResult,
    Metrics,
    run_batch,
    run_episode,
    sweep_ns,
    sweep_p1,
)

__version__ = "0.1.0"
