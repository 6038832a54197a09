import math
from dataclasses import replace

import numpy as np
import pytest

from oracles import min_gap_exhaustive, min_gap_policy_set
from specplan.dynamics import encode_change_lane, step_surrounding
from specplan.prediction import BoundedDist, ParamDistribution, adapt, make_prediction, sample_params
from specplan.reachability import (
    MIN_GAP_SENTINEL,
    min_gap,
    min_gap_for_actions,
    occupancy_tube,
    tube_dump_rows,
)
from specplan.scenario import (
    EXITED_LANE,
    RouteId,
    SystemState,
    TrajectoryParams,
    lane_occupancy,
)


def point_dist(d_lc1, d_lc2, v_d):
    return ParamDistribution(
        BoundedDist(d_lc1, d_lc1),
        None if d_lc2 is None else BoundedDist(d_lc2, d_lc2),
        BoundedDist(v_d, v_d),
    )


def box_dist(lo1, hi1, lo2, hi2, vd_lo, vd_hi):
    return ParamDistribution(
        BoundedDist(lo1, hi1),
        None if lo2 is None else BoundedDist(lo2, hi2),
        BoundedDist(vd_lo, vd_hi),
    )


# --- tube construction ------------------------------------------------------------

def test_point_mass_tube_is_the_trajectory(cfg):
    st = SystemState(d_s=380.0, v_s=24.0, lane_s=1.0)
    dist = point_dist(400.0, 450.0, 25.0)
    tube = occupancy_tube(st, RouteId.ROUTE2, dist, cfg.driver, cfg.geometry, cfg.t_h, cfg.dt)
    params = TrajectoryParams(RouteId.ROUTE2, 400.0, 450.0, 25.0)
    cur = st
    for j in range(tube.steps + 1):
        for lane in lane_occupancy(cur.lane_s):
            assert tube.occ[lane, j]
            assert tube.lo[lane, j] == pytest.approx(cur.d_s, abs=1e-12)
            assert tube.hi[lane, j] == pytest.approx(cur.d_s, abs=1e-12)
        # zero uncertainty: no other lane is occupied
        assert tube.occ[:, j].sum() == len(lane_occupancy(cur.lane_s))
        if j < tube.steps:
            cur = step_surrounding(cur, params, cfg.driver, cfg.geometry, cfg.dt)


def test_lane_change_window_edges(cfg):
    st = SystemState(d_s=380.0, v_s=25.0, lane_s=1.0)
    dist = box_dist(390.0, 410.0, 450.0, 460.0, 24.0, 26.0)
    tube = occupancy_tube(st, RouteId.ROUTE2, dist, cfg.driver, cfg.geometry, cfg.t_h, cfg.dt)

    # Earliest possible change: fastest profile crossing the lowest trigger.
    fast = TrajectoryParams(RouteId.ROUTE2, 390.0, 450.0, 26.0)
    cur = st
    first_lane2 = None
    for j in range(tube.steps + 1):
        if 2 in lane_occupancy(cur.lane_s):
            first_lane2 = j
            break
        cur = step_surrounding(cur, fast, cfg.driver, cfg.geometry, cfg.dt)
    lane2_steps = np.nonzero(tube.occ[2])[0]
    assert first_lane2 is not None
    assert lane2_steps[0] == first_lane2

    # Latest possible end of lane-1 occupancy: slowest profile, highest trigger.
    slow = TrajectoryParams(RouteId.ROUTE2, 410.0, 460.0, 24.0)
    cur = st
    last_lane1 = 0
    for j in range(tube.steps + 1):
        if 1 in lane_occupancy(cur.lane_s):
            last_lane1 = j
        if j < tube.steps:
            cur = step_surrounding(cur, slow, cfg.driver, cfg.geometry, cfg.dt)
    lane1_steps = np.nonzero(tube.occ[1])[0]
    assert lane1_steps[-1] == last_lane1


def test_route3_tube_empty_beyond_exit(cfg):
    st = SystemState(d_s=496.0, v_s=25.0, lane_s=3.0)
    dist = point_dist(400.0, 450.0, 25.0)
    tube = occupancy_tube(st, RouteId.ROUTE3, dist, cfg.driver, cfg.geometry, cfg.t_h, cfg.dt)
    # the vehicle passes 500 m within two steps and is gone afterwards
    assert tube.occ[3, 0] and tube.occ[3, 1]
    assert not tube.occ[:, 3:].any()
    assert tube.hi[3, tube.occ[3]].max() <= cfg.geometry.offramp_end + 1e-12


def test_exited_tube_is_empty(cfg):
    st = SystemState(d_s=520.0, v_s=25.0, lane_s=EXITED_LANE)
    dist = point_dist(400.0, 450.0, 25.0)
    tube = occupancy_tube(st, RouteId.ROUTE3, dist, cfg.driver, cfg.geometry, cfg.t_h, cfg.dt)
    assert not tube.occ.any()


def _random_phase_state(cfg, rng, dist, route):
    n_lc = cfg.lane_change_steps
    lo1, hi1 = dist.d_lc1.lo, dist.d_lc1.hi
    stage = int(rng.integers(0, 5 if route != RouteId.ROUTE1 else 3))
    if stage == 0:
        return SystemState(d_s=float(rng.uniform(300, hi1 - 0.5)), v_s=float(rng.uniform(20, 29)), lane_s=1.0)
    if stage == 1:
        lane = encode_change_lane(1, 2, int(rng.integers(0, n_lc)), n_lc)
        return SystemState(d_s=float(rng.uniform(lo1, hi1 + 40)), v_s=float(rng.uniform(20, 29)), lane_s=lane)
    if stage == 2:
        return SystemState(d_s=float(rng.uniform(lo1, 470.0)), v_s=float(rng.uniform(20, 29)), lane_s=2.0)
    if stage == 3:
        lane = encode_change_lane(2, 3, int(rng.integers(0, n_lc)), n_lc)
        return SystemState(d_s=float(rng.uniform(dist.d_lc2.lo, 499.0)), v_s=float(rng.uniform(20, 29)), lane_s=lane)
    return SystemState(d_s=float(rng.uniform(dist.d_lc2.lo, 499.0)), v_s=float(rng.uniform(20, 29)), lane_s=3.0)


def test_tube_soundness_against_sampled_trajectories(cfg):
    # Every positive-density trajectory stays inside the tube, from any phase.
    pred = make_prediction(cfg)
    rng = np.random.default_rng(123)
    checked = 0
    for trial in range(150):
        route = RouteId(int(rng.integers(1, 4)))
        base = pred.entry(route).dist
        st = _random_phase_state(cfg, rng, base, route)
        post = adapt(pred, st, cfg.geometry)
        entry = post.entry(route)
        if entry is None:
            continue
        tube = occupancy_tube(st, route, entry.dist, cfg.driver, cfg.geometry, cfg.t_h, cfg.dt)
        for _ in range(7):
            p = sample_params(entry.dist, route, rng)
            cur = st
            for j in range(tube.steps + 1):
                for lane in lane_occupancy(cur.lane_s):
                    assert tube.contains(j, lane, cur.d_s), (
                        f"trial {trial}: sample escaped tube at step {j}, lane {lane}"
                    )
                    checked += 1
                if j < tube.steps:
                    cur = step_surrounding(cur, p, cfg.driver, cfg.geometry, cfg.dt)
    assert checked > 10_000


def test_tube_invariants(cfg):
    pred = make_prediction(cfg)
    rng = np.random.default_rng(5)
    for _ in range(50):
        route = RouteId(int(rng.integers(1, 4)))
        base = pred.entry(route).dist
        st = _random_phase_state(cfg, rng, base, route)
        post = adapt(pred, st, cfg.geometry)
        entry = post.entry(route)
        if entry is None:
            continue
        tube = occupancy_tube(st, route, entry.dist, cfg.driver, cfg.geometry, cfg.t_h, cfg.dt)
        for lane in range(tube.lane_count):
            occ = np.nonzero(tube.occ[lane])[0]
            if occ.size == 0:
                continue
            lo = tube.lo[lane, occ]
            hi = tube.hi[lane, occ]
            assert (lo <= hi + 1e-12).all()
            assert (np.diff(lo) >= -1e-12).all()  # no reverse motion


def test_tube_dump_rows(cfg):
    st = SystemState(d_s=380.0, v_s=25.0, lane_s=1.0)
    tube = occupancy_tube(
        st, RouteId.ROUTE1, point_dist(400.0, None, 25.0), cfg.driver, cfg.geometry, cfg.t_h, cfg.dt
    )
    rows = tube_dump_rows(tube, t0=3.0)
    assert rows[0]["t"] == 3.0 and rows[0]["lane"] == 1
    assert all(r["d_lo"] <= r["d_hi"] for r in rows)


# --- min_gap ------------------------------------------------------------------------

def _tube_from_trajectory(cfg, pos, width, occupied):
    H = len(pos) - 1
    lo = np.zeros((4, H + 1))
    hi = np.zeros((4, H + 1))
    occ = np.zeros((4, H + 1), dtype=bool)
    lane = 3
    occ[lane] = occupied
    lo[lane] = pos - width
    hi[lane] = pos + width
    from specplan.reachability import OccupancyTube

    return OccupancyTube(RouteId.ROUTE2, lo, hi, occ, cfg.dt)


def test_min_gap_sentinel_when_lane_never_occupied(cfg):
    st = SystemState(d_s=300.0, v_s=25.0, lane_s=1.0)
    tube = occupancy_tube(
        st, RouteId.ROUTE1, point_dist(400.0, None, 25.0), cfg.driver, cfg.geometry, cfg.t_h, cfg.dt
    )
    g = min_gap(tube, 240.0, 25.0, 3, 0.0, cfg.safety, cfg.t_h, cfg.dt)
    assert g == MIN_GAP_SENTINEL == 100.0


def test_min_gap_parallel_constant_motion(cfg):
    st = SystemState(d_s=290.0, v_s=25.0, lane_s=3.0, d_e=240.0, v_e=25.0, lane_e=3)
    tube = occupancy_tube(
        st, RouteId.ROUTE2, point_dist(200.0, 210.0, 25.0), cfg.driver, cfg.geometry, cfg.t_h, cfg.dt
    )
    g = min_gap(tube, 240.0, 25.0, 3, 0.0, cfg.safety, cfg.t_h, cfg.dt)
    assert g == pytest.approx(50.0, abs=1e-9)


def _random_small_instance(cfg, rng, side):
    H = 10
    dt = cfg.dt
    v_s = rng.uniform(8, 28)
    pos0 = 0.0
    steps = rng.uniform(v_s * dt * 0.5, v_s * dt * 1.5, H)
    pos = np.concatenate([[pos0], pos0 + np.cumsum(steps)])
    width = rng.uniform(0.0, 4.0)
    occupied = np.ones(H + 1, dtype=bool)
    k0 = int(rng.integers(0, 4))
    occupied[:k0] = False
    v_e = rng.uniform(5, 30)
    if side == "behind":
        d_e = pos[0] - width - rng.uniform(1.0, 35.0)
    else:
        d_e = pos[-1] + width + rng.uniform(1.0, 60.0)
    return pos, width, occupied, d_e, v_e


def test_min_gap_matches_exhaustive_on_small_instances(cfg):
    # Brute force over every follow-up sequence from {a_min, a_t, a_max} on a
    # 1-second horizon; hazards purely ahead or purely behind.
    rng = np.random.default_rng(2024)
    sp = cfg.safety
    H = 10
    for trial in range(100):
        side = "behind" if trial % 2 == 0 else "ahead"
        pos, width, occupied, d_e, v_e = _random_small_instance(cfg, rng, side)
        a_t = float(rng.choice([sp.a_min, 0.0, sp.a_max]))
        tube = _tube_from_trajectory(cfg, pos, width, occupied)
        got = min_gap(tube, d_e, v_e, 3, a_t, sp, H * cfg.dt, cfg.dt)
        want = min_gap_exhaustive(
            occupied, pos - width, pos + width, d_e, v_e, a_t,
            [sp.a_min, a_t, sp.a_max], H, cfg.dt, sp.v_limit,
        )
        assert got == pytest.approx(want, abs=1e-9), f"trial {trial} ({side})"


def test_min_gap_never_exceeds_richer_policy_search(cfg):
    # Full-size horizon; the restricted three-policy value can never beat a
    # search over a superset of follow-up sequences.
    rng = np.random.default_rng(77)
    sp = cfg.safety
    H = cfg.lookahead_steps
    grid = sp.accel_grid()
    for trial in range(1000):
        v_s = rng.uniform(8, 28)
        steps = rng.uniform(v_s * cfg.dt * 0.5, v_s * cfg.dt * 1.5, H)
        pos = np.concatenate([[0.0], np.cumsum(steps)])
        width = rng.uniform(0.0, 5.0)
        occupied = np.ones(H + 1, dtype=bool)
        occupied[: int(rng.integers(0, H // 2))] = False
        d_e = pos[0] + rng.uniform(-90.0, 90.0)
        v_e = rng.uniform(0, 30)
        a_t = float(rng.choice(grid))
        tube = _tube_from_trajectory(cfg, pos, width, occupied)
        got = min_gap(tube, d_e, v_e, 3, a_t, sp, cfg.t_h, cfg.dt)

        policies = [[sp.a_min] * (H - 1), [a_t] * (H - 1), [sp.a_max] * (H - 1)]
        for _ in range(30):
            policies.append(list(rng.choice(grid, H - 1)))
        for switch in (5, 15, 30):
            policies.append([sp.a_max] * switch + [sp.a_min] * (H - 1 - switch))
            policies.append([sp.a_min] * switch + [sp.a_max] * (H - 1 - switch))
        richer = min_gap_policy_set(
            occupied, pos - width, pos + width, d_e, v_e, a_t, policies, H, cfg.dt, sp.v_limit
        )
        trio = min_gap_policy_set(
            occupied, pos - width, pos + width, d_e, v_e, a_t, policies[:3], H, cfg.dt, sp.v_limit
        )
        assert got == pytest.approx(trio, abs=1e-9)
        assert got <= richer + 1e-9


def test_min_gap_batch_matches_scalar(cfg):
    st = SystemState(d_s=430.0, v_s=25.0, lane_s=2.0, d_e=380.0, v_e=27.0, lane_e=3)
    pred = make_prediction(cfg)
    entry = adapt(pred, st, cfg.geometry).entry(RouteId.ROUTE2)
    tube = occupancy_tube(st, RouteId.ROUTE2, entry.dist, cfg.driver, cfg.geometry, cfg.t_h, cfg.dt)
    actions = np.array(cfg.safety.accel_grid())
    gaps = min_gap_for_actions(tube, st.d_e, st.v_e, 3, actions, cfg.safety, cfg.t_h, cfg.dt)
    for a, g in zip(actions, gaps):
        assert g == min_gap(tube, st.d_e, st.v_e, 3, float(a), cfg.safety, cfg.t_h, cfg.dt)


def test_tube_monotone_shrinkage(cfg):
    # One adapted replanning step later, the tube fits inside yesterday's,
    # shifted by one step (the containment used by the safety argument).
    from specplan.dynamics import system_step
    from specplan.harness import draw_ground_truth

    for seed in range(25):
        rng = np.random.default_rng(seed)
        state, truth = draw_ground_truth(cfg, rng)
        pred = make_prediction(cfg)
        prev = None
        for _ in range(cfg.n_steps):
            pred = adapt(pred, state, cfg.geometry)
            tubes = {
                e.route: occupancy_tube(state, e.route, e.dist, cfg.driver, cfg.geometry, cfg.t_h, cfg.dt)
                for e in pred.entries
            }
            if prev is not None:
                for route, t_new in tubes.items():
                    t_old = prev.get(route)
                    assert t_old is not None
                    for lane in range(cfg.geometry.lane_count):
                        for j in range(t_new.steps):
                            if t_new.occ[lane, j]:
                                assert t_old.occ[lane, j + 1]
                                assert t_new.lo[lane, j] >= t_old.lo[lane, j + 1] - 1e-9
                                assert t_new.hi[lane, j] <= t_old.hi[lane, j + 1] + 1e-9
            prev = tubes
            state = system_step(state, 0.0, truth.params, truth.driver, cfg.geometry, cfg.dt, cfg.safety)
