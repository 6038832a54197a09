"""Numba kernels for the hot numeric paths.

Everything here mirrors the public semantics exactly (the pure-Python
steppers and the brute-force test oracles are the reference); the kernels
only restructure the arithmetic for speed:

- surrounding-vehicle rollouts produce a position array plus the contiguous
  window of steps whose lane occupancy includes the ego lane;
- the reward rollout applies the first action, then at every step picks the
  largest grid acceleration whose successor state still admits an escape:
  braking forever while staying behind the sample, or accelerating forever
  while staying ahead (the two bang-bang extremes; with one surrounding
  vehicle and a collision band wider than one step of relative motion these
  certify exactly the same accelerations as the full three-policy bound);
- constant-acceleration ego profiles use closed forms for the clamped Euler
  integration, so each safety constraint costs O(1).

All speeds are clamped Euler on the shared grid: position first with the old
speed, then speed. Gap comparisons are non-strict (gap >= d_m is safe),
matching the collision definition |d_E - d_S| >= d_m.
"""

from __future__ import annotations

import numpy as np
from numba import njit

BIG = 1.0e18


@njit(cache=True, fastmath=False)
def _clamp(x, lo, hi):
    if x < lo:
        return lo
    if x > hi:
        return hi
    return x


@njit(cache=True, fastmath=False)
def s_trajectory(
    d_s, v_s, done, in_change, elapsed, route,
    d_lc1, d_lc2, v_d, k_v, a_bound, n_lc, start, offramp_end,
    lane_e, dt, H,
    pos, occ,
):
    """Roll the surrounding vehicle H steps forward from the observed state.

    Mirrors dynamics.step_surrounding step by step. Fills pos[0..H] and
    occ[0..H] (1 where the ego lane is occupied) and returns (k0, k1), the
    first/last occupied step (-1, -1 when never occupied).
    """
    n_changes = 1 if route == 1 else 2
    exited = done >= 3  # caller encodes an exited vehicle as done=3
    d = d_s
    v = v_s
    k0 = -1
    k1 = -1
    for j in range(H + 1):
        pos[j] = d
        if exited:
            occ[j] = 0
        else:
            lane_lo = start + done
            lane_hi = lane_lo + 1 if in_change else lane_lo
            occ[j] = 1 if (lane_lo <= lane_e <= lane_hi) else 0
        if occ[j] == 1:
            if k0 < 0:
                k0 = j
            k1 = j
        if j == H:
            break
        # advance one step
        if exited:
            continue
        d = d + v * dt
        a = k_v * (v_d - v)
        if a > a_bound:
            a = a_bound
        elif a < -a_bound:
            a = -a_bound
        v = v + a * dt
        if v < 0.0:
            v = 0.0
        if in_change:
            elapsed += 1
            if elapsed >= n_lc:
                done += 1
                in_change = False
        if (not in_change) and done < n_changes:
            trig = d_lc1 if done == 0 else d_lc2
            if d >= trig:
                in_change = True
                elapsed = 0
        if route == 3 and d > offramp_end:
            exited = True
    return k0, k1


@njit(cache=True, fastmath=False)
def _free_q(v0, a_t, a_max, v_lim, dt, H):
    """Reward of the unconstrained rollout: a_t once, then full throttle."""
    v = v0
    q = v0
    for j in range(H):
        u = a_t if j == 0 else a_max
        v = _clamp(v + u * dt, 0.0, v_lim)
        q += v
    return q


@njit(cache=True, fastmath=False)
def _stop_dist(w, cb, dt):
    """Total distance advanced while braking from speed w to standstill.

    cb is the per-step speed decrement |a_min|*dt; the position moves with
    the pre-decrement speed each step.
    """
    if w <= 0.0:
        return 0.0
    k = int(w / cb)  # steps with positive speed after the first, floor
    # sum_{i=0..k} (w - i*cb), last term may be the fractional remainder
    return dt * ((k + 1) * w - cb * k * (k + 1) * 0.5)


@njit(cache=True, fastmath=False)
def _stop_dist_inv(slack, cb, dt):
    """Largest speed whose full braking distance stays within slack (>= 0)."""
    if slack <= 0.0:
        return 0.0
    k = int((np.sqrt(1.0 + 8.0 * slack / (dt * cb)) - 1.0) * 0.5)
    while k > 0 and dt * cb * k * (k + 1) * 0.5 > slack:
        k -= 1
    while dt * cb * (k + 1) * (k + 2) * 0.5 <= slack:
        k += 1
    return slack / (dt * (k + 1)) + cb * k * 0.5


@njit(cache=True, fastmath=False)
def _behind_wmax(c, k0, k1, t0, d1, inv_ddt, half_cb, cb, dt):
    """Max successor speed from position d1 at step t0 such that braking
    forever keeps the ego at or below c[m] = pos[m] - d_m for every
    constrained step m in [max(k0,t0), k1]. Returns -BIG when no speed works.

    c is non-decreasing (the surrounding never reverses), so a negative
    slack at the first constraint already dooms every speed. inv_ddt[d] and
    half_cb[d] tabulate 1/(d*dt) and cb*(d-1)/2.
    """
    m = k0 if k0 > t0 else t0
    if c[m] < d1:
        return -BIG
    wmax = BIG
    while m <= k1:
        delta = m - t0
        if delta > 0:
            slack = c[m] - d1
            w = slack * inv_ddt[delta] + half_cb[delta]
            if w < (delta - 1) * cb:
                w = _stop_dist_inv(slack, cb, dt)
            if w < wmax:
                wmax = w
        m += 1
    return wmax


@njit(cache=True, fastmath=False)
def _accel_offset(w, delta, ca, v_lim, dt):
    """Position advance over delta steps at full throttle from speed w."""
    if delta <= 0:
        return 0.0
    if w >= v_lim:
        return v_lim * delta * dt
    nsat = int((v_lim - w) / ca)  # steps before the speed saturates
    if nsat >= delta:
        return dt * (delta * w + ca * delta * (delta - 1) * 0.5)
    return dt * ((nsat + 1) * w + ca * nsat * (nsat + 1) * 0.5) + \
        v_lim * (delta - nsat - 1) * dt


@njit(cache=True, fastmath=False)
def _ahead_ok(pos, k0, k1, t0, d1, w, d_m, ca, v_lim, dt):
    """True iff full throttle from (d1, w) at step t0 keeps the ego at or
    above pos[m] + d_m for every constrained step m in [max(k0,t0), k1]."""
    m = k0 if k0 > t0 else t0
    while m <= k1:
        if d1 + _accel_offset(w, m - t0, ca, v_lim, dt) < pos[m] + d_m:
            return False
        m += 1
    return True


@njit(cache=True, fastmath=False)
def greedy_rollout(
    pos, c, k0, k1, d_e, v_e, a_t,
    inv_ddt, half_cb,
    d_m, a_min, a_max, da, v_lim, dt, H,
):
    """Reward of: apply a_t, then per step the largest grid acceleration
    whose successor still admits a braking stay-behind or full-throttle
    stay-ahead escape against this sample. Falls back to full braking when
    no acceleration is certifiable.

    The stay-behind bound is checked first; the stay-ahead scan only runs
    when braking cannot certify full throttle (the two never certify the
    same side twice since the certificates cover disjoint gap signs).
    c[m] caches pos[m] - d_m.
    """
    cb = -a_min * dt
    ca = a_max * dt
    d = d_e
    v = v_e
    q = v_e
    n_grid = int(round((a_max - a_min) / da)) + 1
    for j in range(H):
        if j == 0:
            u = a_t
        elif k1 < 0 or j + 1 > k1:
            u = a_max
        else:
            d1 = d + v * dt
            v_top = _clamp(v + a_max * dt, 0.0, v_lim)
            wmax = _behind_wmax(c, k0, k1, j + 1, d1, inv_ddt, half_cb, cb, dt)
            if v_top <= wmax + 1e-12:
                u = a_max
            elif _ahead_ok(pos, k0, k1, j + 1, d1, v_top, d_m, ca, v_lim, dt):
                u = a_max
            elif max(0.0, v + a_min * dt) > wmax + 1e-12:
                u = a_min  # boxed in: nothing certifies, brake hard
            else:
                i = int((min(wmax - v, a_max * dt) - a_min * dt) / (da * dt) + 1e-9)
                if i < 0:
                    i = 0
                elif i >= n_grid:
                    i = n_grid - 1
                u = a_min + i * da
                while i > 0 and max(0.0, v + u * dt) > wmax + 1e-12:
                    i -= 1
                    u = a_min + i * da
        d = d + v * dt
        v = _clamp(v + u * dt, 0.0, v_lim)
        q += v
    return q


@njit(cache=True, fastmath=False)
def route_q_batch(
    samples, actions,
    d_e, v_e, lane_e,
    d_s, v_s, done, in_change, elapsed, route,
    k_v, a_bound, n_lc, start, offramp_end,
    d_m, a_min, a_max, da, v_lim, dt, H,
):
    """Q[a, k]: greedy reward of action a against its k-th sampled trajectory.

    samples is (n_a, n_s, 3): (d_lc1, d_lc2, v_d), drawn independently per
    action (row a holds action a's own sample set).
    """
    n_a = actions.shape[0]
    n_s = samples.shape[1]
    out = np.empty((n_a, n_s), dtype=np.float64)
    pos = np.empty(H + 1, dtype=np.float64)
    c = np.empty(H + 1, dtype=np.float64)
    occ = np.empty(H + 1, dtype=np.uint8)
    cb = -a_min * dt
    inv_ddt = np.empty(H + 2, dtype=np.float64)
    half_cb = np.empty(H + 2, dtype=np.float64)
    inv_ddt[0] = 0.0
    half_cb[0] = 0.0
    for delta in range(1, H + 2):
        inv_ddt[delta] = 1.0 / (delta * dt)
        half_cb[delta] = cb * (delta - 1) * 0.5
    for a in range(n_a):
        freeq = _free_q(v_e, actions[a], a_max, v_lim, dt, H)
        for k in range(n_s):
            k0, k1 = s_trajectory(
                d_s, v_s, done, in_change, elapsed, route,
                samples[a, k, 0], samples[a, k, 1], samples[a, k, 2],
                k_v, a_bound, n_lc, start, offramp_end,
                lane_e, dt, H, pos, occ,
            )
            if k1 < 0:
                out[a, k] = freeq
            else:
                for m in range(k0, k1 + 1):
                    c[m] = pos[m] - d_m
                out[a, k] = greedy_rollout(
                    pos, c, k0, k1, d_e, v_e, actions[a],
                    inv_ddt, half_cb,
                    d_m, a_min, a_max, da, v_lim, dt, H,
                )
    return out


@njit(cache=True, fastmath=False)
def min_gap_policies(
    occ, lo, hi, d_e, v_e, a_t,
    a_min, a_max, v_lim, dt, H, sentinel,
):
    """Best guaranteed minimum gap against a tube in the ego lane.

    The ego applies a_t for the first step and then one of the three
    constant follow-ups {a_min, a_t, a_max}; for each follow-up take the
    minimum over steps (including now) of the distance to the occupied tube
    interval (zero inside); return the best of the three. `sentinel` is
    returned when the tube never occupies the lane.
    """
    any_occ = False
    for j in range(H + 1):
        if occ[j] == 1:
            any_occ = True
            break
    if not any_occ:
        return sentinel
    best = -BIG
    for p in range(3):
        follow = a_min if p == 0 else (a_t if p == 1 else a_max)
        d = d_e
        v = v_e
        g = BIG
        for j in range(H + 1):
            if occ[j] == 1:
                dist = lo[j] - d
                if d - hi[j] > dist:
                    dist = d - hi[j]
                if dist < 0.0:
                    dist = 0.0
                if dist < g:
                    g = dist
            if j < H:
                u = a_t if j == 0 else follow
                d = d + v * dt
                v = _clamp(v + u * dt, 0.0, v_lim)
        if g > best:
            best = g
    return best


@njit(cache=True, fastmath=False)
def min_gap_batch(
    occ, lo, hi, d_e, v_e, actions,
    a_min, a_max, v_lim, dt, H, sentinel,
):
    n_a = actions.shape[0]
    out = np.empty(n_a, dtype=np.float64)
    for a in range(n_a):
        out[a] = min_gap_policies(
            occ, lo, hi, d_e, v_e, actions[a], a_min, a_max, v_lim, dt, H, sentinel
        )
    return out


@njit(cache=True, fastmath=False)
def min_gap_committed_batch(
    occ, lo, hi, d_e, v_e, actions,
    v_lim, dt, H, sentinel,
):
    """Gap when the ego holds each candidate acceleration for the whole
    window (no follow-up recourse): the committed-input MPC constraint."""
    n_a = actions.shape[0]
    out = np.empty(n_a, dtype=np.float64)
    for a in range(n_a):
        out[a] = min_gap_policies(
            occ, lo, hi, d_e, v_e, actions[a], actions[a], actions[a],
            v_lim, dt, H, sentinel,
        )
    return out


@njit(cache=True, fastmath=False)
def free_q_batch(v_e, actions, a_max, v_lim, dt, H):
    n_a = actions.shape[0]
    out = np.empty(n_a, dtype=np.float64)
    for a in range(n_a):
        out[a] = _free_q(v_e, actions[a], a_max, v_lim, dt, H)
    return out


@njit(cache=True, fastmath=False)
def speed_position_profile(d0, v0, v_d, k_v, a_bound, dt, H, pos, spd):
    """Euler profile of the surrounding longitudinal model (no lane logic)."""
    d = d0
    v = v0
    for j in range(H + 1):
        pos[j] = d
        spd[j] = v
        if j == H:
            break
        d = d + v * dt
        a = k_v * (v_d - v)
        if a > a_bound:
            a = a_bound
        elif a < -a_bound:
            a = -a_bound
        v = v + a * dt
        if v < 0.0:
            v = 0.0
