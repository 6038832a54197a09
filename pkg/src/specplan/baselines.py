"""Comparison planners: IDM car-following variants and worst-case MPC.

The three IDM variants differ only in when the surrounding vehicle counts
as a leader: idm1 reacts to a vehicle ahead in the ego lane, idm2 also to
one in an adjacent lane once its turn signal is on (observable from the
signal position onward), idm3 to one ahead in any lane. Reaction sets are
nested, so idm1 <= idm2 <= idm3 in trigger frequency.

MPC sweeps the same acceleration grid against the same tubes but ignores
route probabilities twice over: feasibility is worst-case over all feasible
routes, and the reward of an action is the worst over routes of its reward
against a nominal (mid-support) trajectory. In the default "committed" mode
an action is feasible only if *holding that acceleration* keeps the
guaranteed gap above the threshold against every tube (no recourse to a
different follow-up per route); "recourse" mode uses the same
follow-up-aware safety evaluation as the speculative planner. When nothing
is feasible MPC brakes fully.
"""

from __future__ import annotations

import math

import numpy as np

from . import _kernels
from .dynamics import start_lane
from .planner import PlanResult, _phase_code, _safety_table, _select_safe, plan
from .prediction import Prediction, adapt, condition_on_aggressiveness
from .reachability import MIN_GAP_SENTINEL, occupancy_tube
from .scenario import (
    IdmParams,
    RouteId,
    ScenarioConfig,
    SystemState,
    lane_occupancy,
)

PLANNER_NAMES = ("idm1", "idm2", "idm3", "mpc", "mpc_agg", "spap", "spap_agg")


def _idm_leader(state: SystemState, variant: int, cfg: ScenarioConfig) -> bool:
    """Does the surrounding vehicle count as this variant's leader?"""
    if state.d_s <= state.d_e:
        return False
    occ = lane_occupancy(state.lane_s)
    if not occ:
        return False
    if state.lane_e in occ:
        return True
    if variant == 1:
        return False
    if variant == 3:
        return True
    signal_on = state.d_s >= cfg.driver.signal_position(cfg.geometry)
    adjacent = any(abs(lane - state.lane_e) == 1 for lane in occ)
    return signal_on and adjacent


def idm_accel(state: SystemState, variant: int, cfg: ScenarioConfig) -> float:
    """Intelligent Driver Model acceleration for the given variant."""
    p: IdmParams = cfg.idm
    v = state.v_e
    free = p.a * (1.0 - (v / p.v0) ** p.delta)
    if not _idm_leader(state, variant, cfg):
        u = free
    else:
        s = state.d_s - state.d_e
        dv = v - state.v_s
        s_star = p.s0 + v * p.T + v * dv / (2.0 * math.sqrt(p.a * p.b))
        u = p.a * (1.0 - (v / p.v0) ** p.delta - (s_star / s) ** 2)
    u = max(-p.hard_brake, min(p.a, u))
    return max(cfg.safety.a_min, min(cfg.safety.a_max, u))


def _nominal_params(route: RouteId, dist, n_actions: int) -> np.ndarray:
    d2 = dist.d_lc2.midpoint if dist.d_lc2 is not None else np.inf
    row = np.array([[[dist.d_lc1.midpoint, d2, dist.v_d.midpoint]]])
    return np.repeat(row, n_actions, axis=0)


def mpc_plan(state: SystemState, pred: Prediction, cfg: ScenarioConfig) -> PlanResult:
    """Worst-case MPC step (see module docstring for the two modes)."""
    adapted = adapt(pred, state, cfg.geometry)
    actions = np.array(cfg.safety.accel_grid(), dtype=np.float64)
    sp, drv, geo = cfg.safety, cfg.driver, cfg.geometry

    if cfg.mpc_mode == "recourse":
        theta, dd, tubes = _safety_table(state, adapted, actions, cfg)
    else:
        # Committing to a_t throughout: collapse the follow-up set to the
        # single constant policy.
        dd = np.full(actions.shape[0], MIN_GAP_SENTINEL)
        tubes = {}
        for entry in adapted.entries:
            tube = occupancy_tube(state, entry.route, entry.dist, drv, geo, cfg.t_h, cfg.dt)
            tubes[entry.route] = tube
            occ, lo, hi = tube.lane_cells(state.lane_e)
            gaps = _kernels.min_gap_committed_batch(
                occ.astype(np.uint8),
                np.ascontiguousarray(lo),
                np.ascontiguousarray(hi),
                state.d_e,
                state.v_e,
                actions,
                sp.v_limit,
                cfg.dt,
                cfg.lookahead_steps,
                MIN_GAP_SENTINEL,
            )
            np.minimum(dd, gaps, out=dd)
        theta = (dd <= sp.dd_s).astype(np.int64)

    if not (theta == 0).any():
        return PlanResult(u=sp.a_min, omega=0.0, theta=1, dd=MIN_GAP_SENTINEL)

    done, in_change, elapsed = _phase_code(state, cfg)
    reward = np.full(actions.shape[0], np.inf)
    for entry in adapted.entries:
        tube = tubes[entry.route]
        if not tube.occ[state.lane_e].any():
            q = _kernels.free_q_batch(
                state.v_e, actions, sp.a_max, sp.v_limit, cfg.dt, cfg.lookahead_steps
            )
        else:
            q = _kernels.route_q_batch(
                _nominal_params(entry.route, entry.dist, actions.shape[0]),
                actions,
                state.d_e,
                state.v_e,
                state.lane_e,
                state.d_s,
                state.v_s,
                done,
                in_change,
                elapsed,
                int(entry.route),
                drv.k_v,
                drv.a_bound,
                cfg.lane_change_steps,
                start_lane(geo),
                geo.offramp_end,
                sp.d_m,
                sp.a_min,
                sp.a_max,
                sp.da,
                sp.v_limit,
                cfg.dt,
                cfg.lookahead_steps,
            )[:, 0]
        np.minimum(reward, q, out=reward)

    best = _select_safe(actions, theta, reward, cfg.tie_break)
    return PlanResult(
        u=float(actions[best]), omega=float(reward[best]), theta=0, dd=float(dd[best])
    )


def with_aggressiveness(planner, q_a_est: float):
    """Wrap a prediction-consuming planner so the prediction is conditioned
    on a known aggressiveness level before planning."""

    def wrapped(state: SystemState, pred: Prediction, cfg: ScenarioConfig, rng):
        conditioned = condition_on_aggressiveness(
            pred, q_a_est, cfg.driver, geometry=cfg.geometry
        )
        return planner(state, conditioned, cfg, rng)

    return wrapped


def make_planner(name: str, cfg: ScenarioConfig, q_a_true: float = 0.0):
    """Planner factory: callable (state, pred, cfg, rng) -> PlanResult.

    The +agg variants receive the episode's true aggressiveness as their
    estimate (the accurate-prediction assumption of those baselines).
    """
    if name not in PLANNER_NAMES:
        raise KeyError(
            f"unknown planner {name!r}; valid names: {', '.join(PLANNER_NAMES)}"
        )
    if name.startswith("idm"):
        variant = int(name[3])

        def idm_planner(state, pred, cfg, rng):
            u = idm_accel(state, variant, cfg)
            return PlanResult(u=u, omega=0.0, theta=0, dd=MIN_GAP_SENTINEL)

        return idm_planner
    if name == "spap":
        return plan
    if name == "spap_agg":
        return with_aggressiveness(plan, q_a_true)

    def mpc_planner(state, pred, cfg, rng):
        return mpc_plan(state, pred, cfg)

    if name == "mpc":
        return mpc_planner
    return with_aggressiveness(mpc_planner, q_a_true)
