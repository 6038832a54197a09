"""Reachable occupancy of the surrounding vehicle and guaranteed gaps.

The tube for one route over-approximates every trajectory with positive
density under the (possibly adapted) parameter distribution: longitudinal
bounds come from the extreme desired speeds (the tracking law is monotone in
both the current and the desired speed, so the two extreme profiles bound
all others pointwise), lane occupancy from the earliest/latest possible
lane-change triggers with dual occupancy for the whole change duration, and
a route-3 tube is clipped at the off-ramp end where the vehicle leaves the
road.

`min_gap` evaluates the best guaranteed distance between the ego and the
tube in the ego's lane: the ego commits to the candidate acceleration for
one step and afterwards to the best of the three constant follow-ups
(full brake, same acceleration, full throttle); the gap at a step counts
only when the tube occupies the ego lane, is zero inside an interval, and a
tube that never touches the lane yields the 100 m sentinel.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .dynamics import decode_lane_phase, start_lane
from .prediction import ParamDistribution
from .scenario import (
    RoadGeometry,
    RouteId,
    SafetyParams,
    SurroundingDriverModel,
    SystemState,
)

MIN_GAP_SENTINEL = 100.0


@dataclass(frozen=True)
class OccupancyTube:
    """Per-step, per-lane longitudinal intervals of possible positions.

    Arrays have shape (lane_count, steps+1); a cell is meaningful only where
    `occ` is True. Step j corresponds to time t0 + j*dt.
    """

    route: RouteId
    lo: np.ndarray
    hi: np.ndarray
    occ: np.ndarray
    dt: float

    @property
    def steps(self) -> int:
        return self.lo.shape[1] - 1

    @property
    def lane_count(self) -> int:
        return self.lo.shape[0]

    def contains(self, step: int, lane: int, pos: float, tol: float = 1e-9) -> bool:
        if not self.occ[lane, step]:
            return False
        return self.lo[lane, step] - tol <= pos <= self.hi[lane, step] + tol

    def lane_cells(self, lane: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.occ[lane], self.lo[lane], self.hi[lane]

    def rows(self) -> list[tuple[int, int, float, float]]:
        """(step, lane, d_lo, d_hi) for every occupied cell (debug dump)."""
        out = []
        for j in range(self.steps + 1):
            for lane in range(self.lane_count):
                if self.occ[lane, j]:
                    out.append((j, lane, float(self.lo[lane, j]), float(self.hi[lane, j])))
        return out


def _first_crossing(pos: np.ndarray, x: float, big: int) -> int:
    """First step j >= 1 whose position reaches x (triggers fire on future
    steps only; the current state already reflects this step's checks)."""
    j = int(np.searchsorted(pos, x, side="left"))
    if j < 1:
        j = 1
    return j if j < pos.shape[0] else big


def occupancy_tube(
    state: SystemState,
    route: RouteId,
    dist: ParamDistribution,
    model: SurroundingDriverModel,
    geometry: RoadGeometry,
    t_h: float,
    dt: float,
) -> OccupancyTube:
    """Union occupancy of all positive-density trajectories under `route`."""
    H = int(round(t_h / dt))
    n_lc = int(round(model.tau_lc / dt))
    start = start_lane(geometry)
    n_lanes = geometry.lane_count
    lo = np.zeros((n_lanes, H + 1))
    hi = np.zeros((n_lanes, H + 1))
    occ = np.zeros((n_lanes, H + 1), dtype=np.uint8)

    phase = decode_lane_phase(state.lane_s, start, n_lc)
    if phase.exited:
        return OccupancyTube(route, lo, hi, occ.astype(bool), dt)

    pos_lo = np.empty(H + 1)
    pos_hi = np.empty(H + 1)
    spd = np.empty(H + 1)
    _kernels.speed_position_profile(
        state.d_s, state.v_s, dist.v_d.lo, model.k_v, model.a_bound, dt, H, pos_lo, spd
    )
    _kernels.speed_position_profile(
        state.d_s, state.v_s, dist.v_d.hi, model.k_v, model.a_bound, dt, H, pos_hi, spd
    )

    big = H + 2 * n_lc + 2
    done, in_change, elapsed = phase.changes_done, phase.in_change, phase.elapsed_steps

    # First change: earliest/latest start step (relative, may be in the past).
    if done == 0 and not in_change:
        es1 = _first_crossing(pos_hi, dist.d_lc1.lo, big)
        ls1 = _first_crossing(pos_lo, dist.d_lc1.hi, big)
    elif done == 0:
        es1 = ls1 = -elapsed
    else:
        es1 = ls1 = -big
    ec1, lc1 = es1 + n_lc, ls1 + n_lc

    two_changes = route != RouteId.ROUTE1
    if two_changes:
        if done >= 2:
            es2 = ls2 = -big
        elif done == 1 and in_change:
            es2 = ls2 = -elapsed
        else:
            es2 = max(ec1, _first_crossing(pos_hi, dist.d_lc2.lo, big))
            ls2 = max(lc1, _first_crossing(pos_lo, dist.d_lc2.hi, big))
        lc2 = ls2 + n_lc
    else:
        es2, lc2 = big, big

    def fill(lane: int, j_from: int, j_to: int) -> None:
        a = max(j_from, 0)
        b = min(j_to, H)
        if a > b:
            return
        occ[lane, a : b + 1] = 1
        lo[lane, a : b + 1] = pos_lo[a : b + 1]
        hi[lane, a : b + 1] = pos_hi[a : b + 1]

    if done == 0:
        fill(start, 0, lc1 - 1)
    fill(start + 1, es1, (lc2 - 1) if two_changes else H)
    if two_changes:
        fill(start + 2, es2, H)

    if route == RouteId.ROUTE3:
        # Past the ramp end the vehicle is off the road entirely.
        end = geometry.offramp_end
        gone = lo > end
        occ[gone] = 0
        np.minimum(hi, end, out=hi)

    return OccupancyTube(route, lo, hi, occ.astype(bool), dt)


def min_gap(
    tube: OccupancyTube,
    d_e: float,
    v_e: float,
    lane_e: int,
    a_t: float,
    safety: SafetyParams,
    t_h: float,
    dt: float,
) -> float:
    """Best guaranteed minimum gap to the tube in the ego lane under the
    restricted follow-up policy set (see module docstring)."""
    gaps = min_gap_for_actions(
        tube, d_e, v_e, lane_e, np.array([a_t], dtype=np.float64), safety, t_h, dt
    )
    return float(gaps[0])


def min_gap_for_actions(
    tube: OccupancyTube,
    d_e: float,
    v_e: float,
    lane_e: int,
    actions: np.ndarray,
    safety: SafetyParams,
    t_h: float,
    dt: float,
) -> np.ndarray:
    H = int(round(t_h / dt))
    if H != tube.steps:
        raise ValueError(f"tube has {tube.steps} steps, lookahead asks for {H}")
    occ, lo, hi = tube.lane_cells(lane_e)
    return _kernels.min_gap_batch(
        occ.astype(np.uint8),
        np.ascontiguousarray(lo),
        np.ascontiguousarray(hi),
        d_e,
        v_e,
        np.ascontiguousarray(actions, dtype=np.float64),
        safety.a_min,
        safety.a_max,
        safety.v_limit,
        dt,
        H,
        MIN_GAP_SENTINEL,
    )


def tube_dump_rows(tube: OccupancyTube, t0: float = 0.0) -> list[dict]:
    """Flat records for the CSV tube dump exposed by the harness."""
    return [
        {
            "t": round(t0 + j * tube.dt, 9),
            "step": j,
            "lane": lane,
            "d_lo": d_lo,
            "d_hi": d_hi,
        }
        for (j, lane, d_lo, d_hi) in tube.rows()
    ]
