"""Domain types, road geometry and scenario configuration.

All types are immutable value objects once validated; they can be shared
freely across threads/processes. The scenario config round-trips through a
YAML file (see `load_config` / `save_config`), with every field optional and
defaulting to the values below.
"""

from __future__ import annotations

import dataclasses
import enum
import math
from dataclasses import dataclass, field
from typing import Optional

import yaml

CONFIG_SCHEMA_VERSION = 1

#: Sentinel lane value for a surrounding vehicle that has left the highway.
EXITED_LANE = -1.0


class RouteId(enum.IntEnum):
    """Discrete behavior hypotheses for the surrounding vehicle.

    ROUTE1: one lane change, then stays on that lane.
    ROUTE2: two lane changes, stays on the highway on the rightmost lane.
    ROUTE3: two lane changes, then exits via the off-ramp.
    """

    ROUTE1 = 1
    ROUTE2 = 2
    ROUTE3 = 3


ALL_ROUTES = (RouteId.ROUTE1, RouteId.ROUTE2, RouteId.ROUTE3)


class ScenarioValidationError(ValueError):
    """Raised by `validate`; `violations` lists every failed invariant."""

    def __init__(self, violations: list[str]):
        self.violations = list(violations)
        super().__init__("invalid scenario config:\n  - " + "\n  - ".join(violations))


class ConservativenessError(RuntimeError):
    """All routes became infeasible: the ground truth escaped the prediction.

    This signals a broken scenario generator (the prediction no longer
    brackets reality), not a planner failure, and is reported distinctly.
    """


@dataclass(frozen=True)
class RoadGeometry:
    lane_count: int = 4                # through lanes + off-ramp lane
    offramp_lane: int = 3              # highest id; carries the exit window
    offramp_start: float = 400.0       # m, first position where exiting is possible
    offramp_end: float = 500.0         # m, past this a route-3 vehicle is gone
    highway_length: float = 1000.0     # m

    @property
    def lane_ids(self) -> tuple[int, ...]:
        return tuple(range(self.lane_count))


@dataclass(frozen=True)
class SystemState:
    """Joint kinematic state of ego (E) and surrounding (S) vehicle.

    `lane_s` is fractional while a lane change is in progress: it moves from
    the source to the target lane, and the vehicle occupies *both* integer
    lanes for the whole maneuver (see `lane_occupancy`). `lane_s == EXITED_LANE`
    marks a vehicle that left via the off-ramp (empty occupancy, frozen state).
    """

    t: float = 0.0
    d_e: float = 240.0       # ego traveled distance, m
    v_e: float = 25.0        # ego speed, m/s
    lane_e: int = 3          # ego lane, constant over an episode
    d_s: float = 280.0       # surrounding traveled distance, m
    v_s: float = 25.0        # surrounding speed, m/s
    lane_s: float = 1.0      # surrounding lane (fractional mid-change)


def lane_occupancy(lane: float) -> frozenset[int]:
    """Integer lanes occupied for a (possibly fractional) lane value.

    A vehicle mid-change occupies both the source and the target lane; an
    exited vehicle occupies nothing.
    """
    if lane == EXITED_LANE:
        return frozenset()
    lo = math.floor(lane)
    if lane == lo:
        return frozenset((int(lane),))
    return frozenset((lo, lo + 1))


def occupies(lane: float, lane_id: int) -> bool:
    return lane_id in lane_occupancy(lane)


@dataclass(frozen=True)
class SafetyParams:
    d_m: float = 5.0        # collision gap, m (vehicle geometry folded in)
    dd_s: float = 10.0      # safety threshold on the guaranteed min gap, m
    a_min: float = -6.0     # ego acceleration range, m/s^2
    a_max: float = 3.0
    da: float = 0.5         # acceleration grid step, m/s^2
    v_limit: float = 30.0   # m/s

    def accel_grid(self) -> list[float]:
        n = int(round((self.a_max - self.a_min) / self.da)) + 1
        return [self.a_min + i * self.da for i in range(n)]


@dataclass(frozen=True)
class SurroundingDriverModel:
    """Behavior model of the surrounding vehicle.

    Longitudinal motion tracks the desired speed `v_d` with a proportional
    law clamped to `a_bound`. Lateral behavior is a sequence of lane changes
    whose spacing shrinks linearly with aggressiveness `q_a`:
    gap = d_a * q_a + d_c + noise, noise uniform on [-d_n_bound, d_n_bound].

    `d_lc0` is the position where the right-turn signal comes on (first gap
    is measured from it); None means "derive from geometry so that the whole
    maneuver fits inside the off-ramp window for every q_a and noise draw".
    `v_d_spread` is the half-width of the desired-speed uncertainty used by
    the prediction and the scenario generator.
    """

    v_d: float = 25.0
    k_v: float = 0.5            # 1/s, speed tracking gain
    a_bound: float = 2.0        # m/s^2, |accel| bound of the surrounding
    q_a: float = 0.0            # aggressiveness in [-1, 1]
    d_a: float = -20.0          # m, aggressiveness coefficient (negative)
    d_c: float = 60.0           # m, gap constant
    d_n_bound: float = 5.0      # m, noise half-width
    tau_lc: float = 2.0         # s, lane-change duration
    d_lc0: Optional[float] = None
    v_d_spread: float = 1.0     # m/s, desired-speed uncertainty half-width

    def min_gap(self) -> float:
        """Smallest possible lane-change gap over q_a in [-1,1] and noise."""
        return self.d_a * 1.0 + self.d_c - self.d_n_bound

    def max_gap(self) -> float:
        return self.d_a * (-1.0) + self.d_c + self.d_n_bound

    def signal_position(self, geometry: RoadGeometry) -> float:
        """Resolved d_lc0: explicit value, or derived so that two maximal
        gaps end exactly at offramp_end and two minimal gaps start exactly
        at offramp_start."""
        if self.d_lc0 is not None:
            return self.d_lc0
        return geometry.offramp_start - 2.0 * self.min_gap()


@dataclass(frozen=True)
class TrajectoryParams:
    """Concrete trajectory parameters under one route (the sampled vector).

    `d_lc1` / `d_lc2` are the positions where the first / second lane change
    is triggered; `d_lc2` is unused for ROUTE1. `v_d` is the realized desired
    speed of this trajectory.
    """

    route: RouteId
    d_lc1: float
    d_lc2: float = math.inf
    v_d: float = 25.0


@dataclass(frozen=True)
class IdmParams:
    v0: float = 25.0       # desired speed, m/s
    T: float = 1.5         # time headway, s
    s0: float = 2.0        # jam distance, m
    a: float = 1.5         # max accel, m/s^2
    b: float = 2.0         # comfortable decel, m/s^2
    delta: float = 4.0     # exponent
    hard_brake: float = 6.0  # emergency decel bound, m/s^2


@dataclass(frozen=True)
class RandomizationSpec:
    """Per-episode scenario randomization applied by the harness."""

    gap_lo: float = 10.0        # initial ego-behind-surrounding gap range, m
    gap_hi: float = 60.0
    v_e_lo: float = 20.0        # initial ego speed range, m/s
    v_e_hi: float = 30.0
    v_s_lo: float = 22.0        # initial surrounding speed range, m/s
    v_s_hi: float = 28.0
    randomize_aggressiveness: bool = True   # q_a ~ U[-1, 1] per episode


@dataclass(frozen=True)
class ScenarioConfig:
    geometry: RoadGeometry = field(default_factory=RoadGeometry)
    safety: SafetyParams = field(default_factory=SafetyParams)
    driver: SurroundingDriverModel = field(default_factory=SurroundingDriverModel)
    idm: IdmParams = field(default_factory=IdmParams)
    randomization: RandomizationSpec = field(default_factory=RandomizationSpec)
    horizon: float = 12.0            # episode duration, s
    dt: float = 0.1                  # simulation and control step, s
    t_h: float = 5.0                 # planning lookahead, s
    initial_state: SystemState = field(default_factory=SystemState)
    route_probs: tuple[float, float, float] = (0.4, 0.4, 0.2)
    n_samples: int = 50              # reward samples per route per action
    seed: int = 0
    gap_weight: float = 0.5          # lambda in the reward/gap balance
    gap_cap: float = 30.0            # d_cap in the reward/gap balance
    brake_fallback: bool = False     # max-brake instead of u=0 when nothing is safe
    tie_break: str = "magnitude"     # "magnitude" (smaller |a| wins) or "sweep"
    mpc_mode: str = "committed"      # "committed" or "recourse" feasibility

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon / self.dt))

    @property
    def lookahead_steps(self) -> int:
        return int(round(self.t_h / self.dt))

    @property
    def lane_change_steps(self) -> int:
        return int(round(self.driver.tau_lc / self.dt))


def _divides(step: float, total: float) -> bool:
    if step <= 0 or total <= 0:
        return False
    ratio = total / step
    return abs(ratio - round(ratio)) < 1e-6


def validate(config: ScenarioConfig) -> ScenarioConfig:
    """Check every type invariant; return the config unchanged if all hold.

    Raises ScenarioValidationError naming *every* violated invariant.
    Idempotent by construction (pure check, no normalization).
    """
    v: list[str] = []
    geo, sp, drv = config.geometry, config.safety, config.driver

    if geo.lane_count < 2:
        v.append(f"lane_count must be >= 2, got {geo.lane_count}")
    if geo.offramp_lane != geo.lane_count - 1:
        v.append(
            f"off-ramp must be the highest lane id ({geo.lane_count - 1}), "
            f"got {geo.offramp_lane}"
        )
    if not (0.0 < geo.offramp_start < geo.offramp_end <= geo.highway_length):
        v.append(
            "geometry ordering violated: need 0 < offramp_start < offramp_end "
            f"<= highway_length, got ({geo.offramp_start}, {geo.offramp_end}, "
            f"{geo.highway_length})"
        )

    p = config.route_probs
    if len(p) != 3 or any(pi < 0 for pi in p):
        v.append(f"route probabilities must be three non-negative values, got {p}")
    elif abs(sum(p) - 1.0) > 1e-9:
        v.append(f"route probabilities sum to {sum(p)!r}, expected 1 within 1e-9")

    if not (0 < sp.d_m <= sp.dd_s):
        v.append(f"need 0 < d_m <= dd_s, got d_m={sp.d_m}, dd_s={sp.dd_s}")
    if not (sp.a_min < 0 < sp.a_max):
        v.append(f"need a_min < 0 < a_max, got [{sp.a_min}, {sp.a_max}]")
    if sp.da <= 0:
        v.append(f"need da > 0, got {sp.da}")
    if sp.v_limit <= 0:
        v.append(f"need v_limit > 0, got {sp.v_limit}")

    if not (-1.0 <= drv.q_a <= 1.0):
        v.append(f"aggressiveness q_a must lie in [-1, 1], got {drv.q_a}")
    if drv.d_a >= 0:
        v.append(f"aggressiveness coefficient d_a must be negative, got {drv.d_a}")
    if drv.tau_lc <= 0:
        v.append(f"lane-change duration tau_lc must be positive, got {drv.tau_lc}")
    if drv.min_gap() <= 0:
        v.append(
            "lane-change gaps must stay positive for every q_a and noise: "
            f"d_a + d_c - d_n_bound = {drv.min_gap()} <= 0"
        )
    if drv.v_d_spread < 0:
        v.append(f"v_d_spread must be non-negative, got {drv.v_d_spread}")

    if not _divides(config.dt, config.horizon):
        v.append(f"dt={config.dt} does not divide horizon={config.horizon}")
    if not _divides(config.dt, config.t_h):
        v.append(f"dt={config.dt} does not divide lookahead t_h={config.t_h}")
    if config.dt > 0 and drv.tau_lc > 0 and not _divides(config.dt, drv.tau_lc):
        v.append(f"dt={config.dt} does not divide tau_lc={drv.tau_lc}")

    st = config.initial_state
    if st.v_e < 0 or st.v_s < 0:
        v.append(f"initial speeds must be non-negative, got v_e={st.v_e}, v_s={st.v_s}")
    if st.lane_e not in geo.lane_ids:
        v.append(f"ego lane {st.lane_e} not a valid lane id {geo.lane_ids}")
    if st.v_e > sp.v_limit:
        v.append(f"initial ego speed {st.v_e} exceeds the speed limit {sp.v_limit}")

    if config.n_samples < 1:
        v.append(f"n_samples must be >= 1, got {config.n_samples}")
    if config.tie_break not in ("magnitude", "sweep"):
        v.append(f"tie_break must be 'magnitude' or 'sweep', got {config.tie_break!r}")
    if config.mpc_mode not in ("committed", "recourse"):
        v.append(f"mpc_mode must be 'committed' or 'recourse', got {config.mpc_mode!r}")

    if v:
        raise ScenarioValidationError(v)
    return config


# --- config file round-trip -------------------------------------------------

def config_to_dict(config: ScenarioConfig) -> dict:
    d = dataclasses.asdict(config)
    d["initial_state"] = dataclasses.asdict(config.initial_state)
    d["route_probs"] = list(config.route_probs)
    return {"schema_version": CONFIG_SCHEMA_VERSION, **d}


def config_from_dict(data: dict) -> ScenarioConfig:
    data = dict(data)
    version = data.pop("schema_version", CONFIG_SCHEMA_VERSION)
    if version != CONFIG_SCHEMA_VERSION:
        raise ScenarioValidationError(
            [f"config schema_version {version} not supported (expected {CONFIG_SCHEMA_VERSION})"]
        )
    sub = {
        "geometry": RoadGeometry,
        "safety": SafetyParams,
        "driver": SurroundingDriverModel,
        "idm": IdmParams,
        "randomization": RandomizationSpec,
        "initial_state": SystemState,
    }
    kwargs = {}
    for key, value in data.items():
        if key in sub and isinstance(value, dict):
            kwargs[key] = sub[key](**value)
        elif key == "route_probs":
            kwargs[key] = tuple(value)
        else:
            kwargs[key] = value
    return ScenarioConfig(**kwargs)


def load_config(path: str) -> ScenarioConfig:
    with open(path, "r", encoding="utf-8") as fh:
        data = yaml.safe_load(fh) or {}
    return validate(config_from_dict(data))


def save_config(config: ScenarioConfig, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(config_to_dict(config), fh, sort_keys=False)
