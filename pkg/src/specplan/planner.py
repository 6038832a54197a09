"""Speculative planning: worst-case-safe action filtering plus sampled
expected-reward maximization.

Every control step the planner sweeps the acceleration grid. An action is
safe when, for every feasible route tube, some follow-up keeps the
guaranteed gap above the threshold (`safety_eval`). Among safe actions the
planner maximizes the expected reward over the adapted prediction
(`expected_reward`): per feasible route it draws parameter samples, rolls
out the ego's greedy best response against each sampled trajectory
(`inner_q`), averages, and weights by the adapted route probabilities. The
selected action maximizes reward + gap_weight * min(gap, gap_cap); exact
ties prefer the smaller |a|, then the smaller a (configurable to the plain
ascending sweep instead). When no action is safe the action stays at the
0-initialization, or full braking with `brake_fallback`.

The same samples are reused across the action grid (common random numbers):
the per-action reward estimates stay unbiased while action comparisons lose
most of their Monte-Carlo noise, and routes with identical distributions
receive identical samples.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _kernels
from .dynamics import decode_lane_phase, start_lane
from .prediction import Prediction, adapt, sample_params_batch
from .reachability import MIN_GAP_SENTINEL, OccupancyTube, min_gap_for_actions, occupancy_tube
from .scenario import RouteId, ScenarioConfig, SystemState, TrajectoryParams

_RETRY_ROUNDS = 15


@dataclass(frozen=True)
class PlanResult:
    u: float          # chosen acceleration, m/s^2
    omega: float      # expected reward of the chosen action
    theta: int        # 0 = safe action found, 1 = possibly unsafe
    dd: float         # guaranteed minimum gap of the chosen action, m


@dataclass(frozen=True)
class PlanTable:
    """Per-action diagnostics of one planning call."""

    actions: np.ndarray
    theta: np.ndarray
    dd: np.ndarray
    omega: np.ndarray   # NaN where not evaluated


def _phase_code(state: SystemState, cfg: ScenarioConfig) -> tuple[int, int, int]:
    """(changes_done, in_change, elapsed_steps) for the kernels; an exited
    vehicle is encoded as changes_done=3."""
    phase = decode_lane_phase(
        state.lane_s, start_lane(cfg.geometry), cfg.lane_change_steps
    )
    if phase.exited:
        return 3, 0, 0
    return phase.changes_done, int(phase.in_change), phase.elapsed_steps


def _safety_table(
    state: SystemState,
    adapted: Prediction,
    actions: np.ndarray,
    cfg: ScenarioConfig,
) -> tuple[np.ndarray, np.ndarray, dict[RouteId, OccupancyTube]]:
    """Worst-case gap per action over every feasible route (probability-blind)."""
    dd = np.full(actions.shape[0], MIN_GAP_SENTINEL)
    tubes: dict[RouteId, OccupancyTube] = {}
    for entry in adapted.entries:
        tube = occupancy_tube(
            state, entry.route, entry.dist, cfg.driver, cfg.geometry, cfg.t_h, cfg.dt
        )
        tubes[entry.route] = tube
        gaps = min_gap_for_actions(
            tube, state.d_e, state.v_e, state.lane_e, actions, cfg.safety, cfg.t_h, cfg.dt
        )
        np.minimum(dd, gaps, out=dd)
    theta = (dd <= cfg.safety.dd_s).astype(np.int64)
    return theta, dd, tubes


def _route_samples(
    adapted: Prediction,
    cfg: ScenarioConfig,
    rng: np.random.Generator,
    n_actions: int,
) -> dict[RouteId, np.ndarray]:
    """Per-route sample tensors of shape (n_actions, n_samples, 3).

    Every action index gets its own independent sample set (the estimator
    the grid sweep evaluates per candidate action); the same uniforms are
    reused across routes, so identical distributions receive identical
    samples.
    """
    need = [e for e in adapted.entries if e.prob > 0.0]
    if not need:
        return {}
    n = n_actions * cfg.n_samples
    base = rng.random((1, n, 3))
    pool: Optional[np.ndarray] = None
    out: dict[RouteId, np.ndarray] = {}
    for e in need:
        try:
            flat = sample_params_batch(e.dist, e.route, base)
        except RuntimeError:
            if pool is None:
                pool = np.concatenate([base, rng.random((_RETRY_ROUNDS, n, 3))], axis=0)
            flat = sample_params_batch(e.dist, e.route, pool)
        out[e.route] = flat.reshape(n_actions, cfg.n_samples, 3)
    return out


def _reward_table(
    state: SystemState,
    adapted: Prediction,
    actions: np.ndarray,
    cfg: ScenarioConfig,
    rng: np.random.Generator,
    tubes: dict[RouteId, OccupancyTube],
    evaluate: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Expected reward per action over the adapted prediction.

    `evaluate` masks the action indices whose reward is actually needed
    (unsafe actions never are); masked-out entries come back NaN. Samples
    are always drawn for the full grid so the per-action sample sets do not
    depend on which subset gets evaluated.
    """
    samples = _route_samples(adapted, cfg, rng, actions.shape[0])
    if evaluate is None:
        evaluate = np.ones(actions.shape[0], dtype=bool)
    idx = np.nonzero(evaluate)[0]
    done, in_change, elapsed = _phase_code(state, cfg)
    sp, drv, geo = cfg.safety, cfg.driver, cfg.geometry
    H = cfg.lookahead_steps
    omega = np.zeros(idx.shape[0])
    p_total = 0.0
    for entry in adapted.entries:
        p_total += entry.prob
        if entry.prob <= 0.0:
            continue
        tube = tubes[entry.route]
        if not tube.occ[state.lane_e].any():
            # No positive-density trajectory of this route ever shares the
            # ego lane inside the window: every sample rolls out free.
            mean_q = _kernels.free_q_batch(
                state.v_e, actions[idx], sp.a_max, sp.v_limit, cfg.dt, H
            )
        else:
            q = _kernels.route_q_batch(
                np.ascontiguousarray(samples[entry.route][idx]),
                actions[idx],
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
                H,
            )
            mean_q = q.mean(axis=1)
        omega += entry.prob * mean_q
    if p_total > 0.0:
        omega /= p_total
    out = np.full(actions.shape[0], np.nan)
    out[idx] = omega
    return out


def safety_eval(
    state: SystemState,
    pred: Prediction,
    a_t: float,
    cfg: ScenarioConfig,
) -> tuple[int, float]:
    """Safety indicator and guaranteed minimum gap for one candidate action.

    theta == 0 means: for every feasible route there is a follow-up keeping
    the guaranteed gap above the `dd_s` threshold after applying `a_t` now.
    The gap starts from the 100 m sentinel and takes the minimum over routes.
    """
    adapted = adapt(pred, state, cfg.geometry)
    actions = np.array([a_t], dtype=np.float64)
    theta, dd, _ = _safety_table(state, adapted, actions, cfg)
    return int(theta[0]), float(dd[0])


def expected_reward(
    state: SystemState,
    pred: Prediction,
    a_t: float,
    cfg: ScenarioConfig,
    rng: np.random.Generator,
) -> float:
    """Sampled expectation of the best-response reward after applying `a_t`.

    Adapts the prediction, draws `n_samples` parameter vectors per feasible
    route, rolls out the greedy follow-up against each, and averages with
    the adapted route probabilities (normalized over feasible routes).
    """
    adapted = adapt(pred, state, cfg.geometry)
    actions = np.array([a_t], dtype=np.float64)
    _, _, tubes = _safety_table(state, adapted, actions, cfg)
    omega = _reward_table(state, adapted, actions, cfg, rng, tubes)
    return float(omega[0])


def inner_q(
    state: SystemState,
    a_t: float,
    params: TrajectoryParams,
    cfg: ScenarioConfig,
) -> float:
    """Reward of one sampled trajectory: the ego applies `a_t`, then per step
    the largest grid acceleration that still admits a bang-bang escape
    keeping the gap to this sample at or above d_m; the reward is the sum of
    ego speeds over the lookahead (including the current one)."""
    sample = np.array(
        [[[params.d_lc1, params.d_lc2 if math.isfinite(params.d_lc2) else np.inf, params.v_d]]]
    )
    done, in_change, elapsed = _phase_code(state, cfg)
    sp, drv, geo = cfg.safety, cfg.driver, cfg.geometry
    q = _kernels.route_q_batch(
        sample,
        np.array([a_t], dtype=np.float64),
        state.d_e,
        state.v_e,
        state.lane_e,
        state.d_s,
        state.v_s,
        done,
        in_change,
        elapsed,
        int(params.route),
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
    )
    return float(q[0, 0])


def _select_safe(
    actions: np.ndarray,
    theta: np.ndarray,
    phi: np.ndarray,
    tie_break: str,
) -> int:
    best = -1
    for i in range(actions.shape[0]):
        if theta[i] != 0:
            continue
        if best < 0:
            best = i
            continue
        if tie_break == "sweep":
            if phi[i] >= phi[best]:
                best = i
        else:
            if phi[i] > phi[best] or (
                phi[i] == phi[best]
                and (abs(actions[i]), actions[i]) < (abs(actions[best]), actions[best])
            ):
                best = i
    return best


def plan(
    state: SystemState,
    pred: Prediction,
    cfg: ScenarioConfig,
    rng: np.random.Generator,
    *,
    return_table: bool = False,
):
    """One receding-horizon planning step; only `u` is executed.

    Returns a PlanResult, or (PlanResult, PlanTable) with `return_table`.
    """
    adapted = adapt(pred, state, cfg.geometry)
    actions = np.array(cfg.safety.accel_grid(), dtype=np.float64)
    theta, dd, tubes = _safety_table(state, adapted, actions, cfg)

    safe = theta == 0
    if not safe.any():
        u = cfg.safety.a_min if cfg.brake_fallback else 0.0
        result = PlanResult(u=u, omega=0.0, theta=1, dd=MIN_GAP_SENTINEL)
        if return_table:
            return result, PlanTable(actions, theta, dd, np.full_like(dd, np.nan))
        return result

    omega = _reward_table(state, adapted, actions, cfg, rng, tubes, evaluate=safe)
    phi = omega + cfg.gap_weight * np.minimum(dd, cfg.gap_cap)
    best = _select_safe(actions, theta, phi, cfg.tie_break)
    result = PlanResult(
        u=float(actions[best]), omega=float(omega[best]), theta=0, dd=float(dd[best])
    )
    if return_table:
        return result, PlanTable(actions, theta, dd, omega)
    return result
