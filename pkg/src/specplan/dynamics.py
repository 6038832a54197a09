"""Vehicle dynamics: ego integration and the surrounding-vehicle behavior model.

Both vehicles integrate with forward Euler on the shared grid `dt`, position
first (with the old speed), then speed. The surrounding vehicle tracks its
desired speed with a clamped proportional law and executes one or two lane
changes at trigger positions quantized to the grid: a change starts at the
first step whose updated position reaches the trigger, lasts `tau_lc`, and
occupies both lanes throughout. A second change waits for the first one to
finish (back-to-back chaining when the trigger is already passed).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

from .scenario import (
    EXITED_LANE,
    RoadGeometry,
    RouteId,
    SafetyParams,
    SurroundingDriverModel,
    SystemState,
    TrajectoryParams,
    lane_occupancy,
)


def start_lane(geometry: RoadGeometry) -> int:
    """Lane the surrounding vehicle departs from (two changes below the ramp)."""
    return geometry.offramp_lane - 2


@dataclass(frozen=True)
class LanePhase:
    """Decoded maneuver phase of the surrounding vehicle."""

    exited: bool
    changes_done: int        # completed lane changes (0, 1 or 2)
    in_change: bool
    elapsed_steps: int       # steps spent in the current change, if any


def encode_change_lane(src: int, tgt: int, elapsed_steps: int, n_lc_steps: int) -> float:
    """Fractional lane value for a change in progress.

    The +0.5 offset keeps the value strictly between src and tgt for every
    in-change step, so settled and in-change states are never ambiguous, and
    the elapsed step count can be recovered exactly.
    """
    return src + (elapsed_steps + 0.5) / n_lc_steps * (tgt - src)


def decode_lane_phase(lane_s: float, start: int, n_lc_steps: int) -> LanePhase:
    if lane_s == EXITED_LANE:
        return LanePhase(exited=True, changes_done=2, in_change=False, elapsed_steps=0)
    lo = math.floor(lane_s)
    if lane_s == lo:
        return LanePhase(False, int(lane_s) - start, False, 0)
    frac = lane_s - lo
    elapsed = int(round(frac * n_lc_steps - 0.5))
    return LanePhase(False, lo - start, True, elapsed)


def phi_accel(model: SurroundingDriverModel, v_s: float, v_d: Optional[float] = None) -> float:
    """Surrounding acceleration: proportional speed tracking, clamped.

    `v_d` overrides the model's nominal desired speed (sampled trajectories
    carry their own realized value).
    """
    target = model.v_d if v_d is None else v_d
    a = model.k_v * (target - v_s)
    return max(-model.a_bound, min(model.a_bound, a))


def lane_change_gap(model: SurroundingDriverModel, noise: float) -> float:
    """Distance between consecutive lane-change triggers for this driver.

    Linear in aggressiveness: more aggressive drivers change lanes sooner,
    leaving less room to react.
    """
    return model.d_a * model.q_a + model.d_c + noise


def step_ego(state: SystemState, u: float, dt: float, safety: SafetyParams) -> SystemState:
    """Advance the ego one step under acceleration `u`; clamps speed to
    [0, v_limit]. Surrounding fields are untouched; time advances here."""
    if not (safety.a_min - 1e-12 <= u <= safety.a_max + 1e-12):
        raise ValueError(f"ego acceleration {u} outside [{safety.a_min}, {safety.a_max}]")
    d = state.d_e + state.v_e * dt
    v = min(max(state.v_e + u * dt, 0.0), safety.v_limit)
    return replace(state, t=state.t + dt, d_e=d, v_e=v)


def step_surrounding(
    state: SystemState,
    params: TrajectoryParams,
    model: SurroundingDriverModel,
    geometry: RoadGeometry,
    dt: float,
) -> SystemState:
    """Advance the surrounding vehicle one step under its trajectory params.

    Deterministic. Leaves `t` and the ego fields untouched (compose with
    `step_ego` for a full system step). An exited vehicle is frozen.
    """
    if state.lane_s == EXITED_LANE:
        return state

    n_lc = int(round(model.tau_lc / dt))
    start = start_lane(geometry)
    phase = decode_lane_phase(state.lane_s, start, n_lc)

    d = state.d_s + state.v_s * dt
    v = max(state.v_s + phi_accel(model, state.v_s, params.v_d) * dt, 0.0)

    done = phase.changes_done
    in_change = phase.in_change
    elapsed = phase.elapsed_steps
    if in_change:
        elapsed += 1
        if elapsed >= n_lc:
            done += 1
            in_change = False

    n_changes = 1 if params.route == RouteId.ROUTE1 else 2
    if not in_change and done < n_changes:
        trigger = params.d_lc1 if done == 0 else params.d_lc2
        if d >= trigger:
            in_change = True
            elapsed = 0

    if params.route == RouteId.ROUTE3 and d > geometry.offramp_end:
        return replace(state, d_s=d, v_s=v, lane_s=EXITED_LANE)

    if in_change:
        lane = encode_change_lane(start + done, start + done + 1, elapsed, n_lc)
    else:
        lane = float(start + done)
    return replace(state, d_s=d, v_s=v, lane_s=lane)


def psi_lane(
    params: TrajectoryParams,
    model: SurroundingDriverModel,
    d_s: float,
    t_in_change: Optional[float] = None,
    *,
    geometry: RoadGeometry,
) -> frozenset[int]:
    """Idealized position-to-occupancy map for one trajectory.

    `t_in_change` is the time since the most recent change trigger (None when
    no change is in progress). This is a convenience view with continuous
    triggers; the stepper above is authoritative for grid-quantized event
    timing and back-to-back chaining.
    """
    start = start_lane(geometry)
    if params.route == RouteId.ROUTE3 and d_s > geometry.offramp_end:
        return frozenset()
    crossed = 0
    if d_s >= params.d_lc1:
        crossed = 1
    if params.route != RouteId.ROUTE1 and d_s >= params.d_lc2:
        crossed = 2
    if t_in_change is not None and 0.0 <= t_in_change < model.tau_lc and crossed >= 1:
        return frozenset((start + crossed - 1, start + crossed))
    return frozenset((start + crossed,))


def system_step(
    state: SystemState,
    u: float,
    params: TrajectoryParams,
    model: SurroundingDriverModel,
    geometry: RoadGeometry,
    dt: float,
    safety: SafetyParams,
) -> SystemState:
    """One joint step: both vehicles advance from the same pre-step state."""
    return step_surrounding(step_ego(state, u, dt, safety), params, model, geometry, dt)


def in_collision(state: SystemState, d_m: float) -> bool:
    """Shared lane occupancy with a gap below the collision distance."""
    return state.lane_e in lane_occupancy(state.lane_s) and abs(state.d_e - state.d_s) < d_m
