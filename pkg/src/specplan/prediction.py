"""Probabilistic multi-route prediction of the surrounding vehicle.

A prediction is a set of (route, probability, parameter distribution)
entries. Supports are always bounded boxes so that worst-case occupancy
stays finite, and the generator in `make_prediction` brackets everything
the scenario sampler can produce (conservativeness by construction).

`adapt` is the filtering step run every replan: routes contradicted by the
observed lane/position are dropped, parameter supports are truncated to the
region still consistent with the observation, and route probabilities are
reweighted in proportion to prior probability times surviving support mass,
then renormalized. It relies on two behavioral assumptions: the surrounding
vehicle never moves backward, and never returns to a lane after completing
a change.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from scipy.special import ndtr, ndtri

from .scenario import (
    EXITED_LANE,
    ALL_ROUTES,
    ConservativenessError,
    RoadGeometry,
    RouteId,
    ScenarioConfig,
    SurroundingDriverModel,
    SystemState,
    TrajectoryParams,
)
from .dynamics import start_lane

_PROB_TOL = 1e-9
_MAX_SAMPLE_ROUNDS = 16


@dataclass(frozen=True)
class BoundedDist:
    """A bounded scalar distribution: uniform or truncated normal on [lo, hi].

    Point masses (lo == hi) are allowed and arise from hard conditioning.
    """

    lo: float
    hi: float
    kind: str = "uniform"       # "uniform" | "truncnorm"
    mu: float = 0.0             # truncnorm only
    sigma: float = 1.0

    def __post_init__(self):
        if not (math.isfinite(self.lo) and math.isfinite(self.hi)) or self.lo > self.hi:
            raise ValueError(f"invalid support [{self.lo}, {self.hi}]")
        if self.kind not in ("uniform", "truncnorm"):
            raise ValueError(f"unknown distribution kind {self.kind!r}")

    @property
    def width(self) -> float:
        return self.hi - self.lo

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.lo + self.hi)

    def contains(self, x: float) -> bool:
        return self.lo <= x <= self.hi

    def _norm_cdf(self, x: float) -> float:
        return float(ndtr((x - self.mu) / self.sigma))

    def mass_fraction(self, lo: float, hi: float) -> float:
        """Fraction of this distribution's mass inside [lo, hi]."""
        lo, hi = max(lo, self.lo), min(hi, self.hi)
        if hi < lo:
            return 0.0
        if self.width == 0.0:
            return 1.0
        if self.kind == "uniform":
            return (hi - lo) / self.width
        total = self._norm_cdf(self.hi) - self._norm_cdf(self.lo)
        if total <= 0.0:
            return (hi - lo) / self.width
        return (self._norm_cdf(hi) - self._norm_cdf(lo)) / total

    def truncated(self, lo: float, hi: float) -> Optional["BoundedDist"]:
        """Intersect the support with [lo, hi]; None when empty."""
        new_lo, new_hi = max(lo, self.lo), min(hi, self.hi)
        if new_hi < new_lo:
            return None
        if new_lo == self.lo and new_hi == self.hi:
            return self
        return BoundedDist(new_lo, new_hi, self.kind, self.mu, self.sigma)

    def ppf(self, u):
        """Inverse CDF; maps uniforms on [0,1] into the support (vectorized)."""
        u = np.asarray(u, dtype=np.float64)
        if self.width == 0.0:
            return np.full_like(u, self.lo)
        if self.kind == "uniform":
            return self.lo + u * self.width
        a = self._norm_cdf(self.lo)
        b = self._norm_cdf(self.hi)
        if b - a <= 0.0:
            return self.lo + u * self.width
        return self.mu + self.sigma * ndtri(a + u * (b - a))


@dataclass(frozen=True)
class ParamDistribution:
    """Independent bounded distributions for the trajectory parameter vector.

    `d_lc2` is None for ROUTE1 (single lane change). Independence makes the
    support a box; the ordering constraint d_lc1 < d_lc2 is enforced at
    sampling time by rejection.
    """

    d_lc1: BoundedDist
    d_lc2: Optional[BoundedDist]
    v_d: BoundedDist

    def contains(self, params: TrajectoryParams) -> bool:
        """True iff the parameter vector has positive density (is in the box)."""
        if not self.d_lc1.contains(params.d_lc1):
            return False
        if self.d_lc2 is not None and not self.d_lc2.contains(params.d_lc2):
            return False
        return self.v_d.contains(params.v_d)


@dataclass(frozen=True)
class PredictionEntry:
    route: RouteId
    prob: float
    dist: ParamDistribution


@dataclass(frozen=True)
class Prediction:
    entries: tuple[PredictionEntry, ...]

    def __post_init__(self):
        routes = [e.route for e in self.entries]
        if len(set(routes)) != len(routes):
            raise ValueError("duplicate route in prediction")
        total = sum(e.prob for e in self.entries)
        if any(e.prob > 0 for e in self.entries) and abs(total - 1.0) > _PROB_TOL:
            raise ValueError(f"route probabilities sum to {total!r}, expected 1")

    def entry(self, route: RouteId) -> Optional[PredictionEntry]:
        for e in self.entries:
            if e.route == route:
                return e
        return None

    def probs(self) -> dict[RouteId, float]:
        return {e.route: e.prob for e in self.entries}


def make_prediction(config: ScenarioConfig) -> Prediction:
    """Initial prediction whose supports bracket the scenario generator.

    The lane-change gap ranges cover every aggressiveness in [-1, 1] plus
    the full noise band; the route-3 second change is additionally confined
    to the off-ramp window. Zero-probability routes keep an entry with
    prob 0 so later evidence can never resurrect a route that was excluded,
    only reweight the ones present.
    """
    drv, geo = config.driver, config.geometry
    d_lc0 = drv.signal_position(geo)
    g_lo, g_hi = drv.min_gap(), drv.max_gap()
    first = BoundedDist(d_lc0 + g_lo, d_lc0 + g_hi)
    second = BoundedDist(d_lc0 + 2 * g_lo, d_lc0 + 2 * g_hi)
    vd = BoundedDist(drv.v_d - drv.v_d_spread, drv.v_d + drv.v_d_spread)

    ramp_second = second.truncated(geo.offramp_start, geo.offramp_end)
    if ramp_second is None:
        if config.route_probs[2] > 0:
            raise ValueError(
                "off-ramp exit route has positive probability but its "
                "lane-change window does not intersect the off-ramp "
                f"[{geo.offramp_start}, {geo.offramp_end}]; adjust d_lc0"
            )
        ramp_second = BoundedDist(geo.offramp_start, geo.offramp_start)

    dists = {
        RouteId.ROUTE1: ParamDistribution(first, None, vd),
        RouteId.ROUTE2: ParamDistribution(first, second, vd),
        RouteId.ROUTE3: ParamDistribution(first, ramp_second, vd),
    }
    entries = tuple(
        PredictionEntry(route, config.route_probs[i], dists[route])
        for i, route in enumerate(ALL_ROUTES)
    )
    return Prediction(entries)


# --- observation consistency -------------------------------------------------

def _observed_phase(lane_s: float, start: int) -> tuple[bool, int, bool]:
    """(exited, changes_done, in_change) from the observed lane value."""
    if lane_s == EXITED_LANE:
        return True, 2, False
    lo = math.floor(lane_s)
    return False, lo - start, lane_s != lo


def _truncate_for_state(
    route: RouteId,
    dist: ParamDistribution,
    d_s: float,
    lane_s: float,
    geometry: RoadGeometry,
) -> Optional[tuple[ParamDistribution, float]]:
    """Truncated distribution + surviving mass fraction, or None if the
    observation rules the route out entirely.

    The rules follow from grid-triggered changes: while no change has begun
    the trigger must still be ahead; once a change is underway or done its
    trigger is at or behind the current position. While the first change is
    in progress nothing is learned about the second trigger (it may already
    be passed, waiting for the first change to finish).
    """
    exited, done, in_change = _observed_phase(lane_s, start_lane(geometry))

    if exited:
        if route != RouteId.ROUTE3:
            return None
        return dist, 1.0
    if route == RouteId.ROUTE1 and (done >= 2 or (done >= 1 and in_change)):
        return None

    d1, d2 = dist.d_lc1, dist.d_lc2
    frac = 1.0
    if done == 0 and not in_change:
        new = d1.truncated(d_s, math.inf)
        if new is None:
            return None
        frac *= d1.mass_fraction(new.lo, new.hi)
        d1 = new
        if d2 is not None:
            new2 = d2.truncated(d_s, math.inf)
            if new2 is None:
                return None
            frac *= d2.mass_fraction(new2.lo, new2.hi)
            d2 = new2
    else:
        new = d1.truncated(-math.inf, d_s)
        if new is None:
            return None
        frac *= d1.mass_fraction(new.lo, new.hi)
        d1 = new
        if d2 is not None:
            if done == 1 and not in_change:
                new2 = d2.truncated(d_s, math.inf)   # second trigger still ahead
            elif done >= 2 or (done == 1 and in_change):
                new2 = d2.truncated(-math.inf, d_s)  # second trigger passed
            else:
                new2 = d2                            # mid first change: no info
            if new2 is None:
                return None
            if new2 is not d2:
                frac *= d2.mass_fraction(new2.lo, new2.hi)
            d2 = new2

    return ParamDistribution(d1, d2, dist.v_d), frac


def is_feasible(
    route: RouteId,
    d_s: float,
    lane_s: float,
    geometry: RoadGeometry,
    dist: ParamDistribution,
) -> bool:
    """False iff no parameter vector in the support can explain the observed
    (position, lane occupancy) of the surrounding vehicle."""
    return _truncate_for_state(route, dist, d_s, lane_s, geometry) is not None


def adapt(pred: Prediction, state: SystemState, geometry: RoadGeometry) -> Prediction:
    """Filter and reweight the prediction against the latest observation.

    Infeasible routes are removed; surviving supports are truncated; the new
    probability of route i is proportional to prior prob times the mass
    fraction its support kept, renormalized to sum to one. Idempotent for a
    fixed state. Raises ConservativenessError when nothing survives.
    """
    survivors: list[tuple[RouteId, float, ParamDistribution]] = []
    for e in pred.entries:
        out = _truncate_for_state(e.route, e.dist, state.d_s, state.lane_s, geometry)
        if out is None:
            continue
        dist, frac = out
        survivors.append((e.route, e.prob * frac, dist))

    if not survivors:
        raise ConservativenessError(
            "every route is inconsistent with the observed surrounding state; "
            "the prediction was not conservative"
        )
    total = sum(w for _, w, _ in survivors)
    if total <= 0.0:
        # All surviving routes had zero prior probability; fall back to uniform.
        probs = [1.0 / len(survivors)] * len(survivors)
    else:
        probs = [w / total for _, w, _ in survivors]
    return Prediction(
        tuple(
            PredictionEntry(route, p, dist)
            for (route, _, dist), p in zip(survivors, probs)
        )
    )


def condition_on_aggressiveness(
    pred: Prediction,
    q_a_est: float,
    model: SurroundingDriverModel,
    *,
    geometry: RoadGeometry,
) -> Prediction:
    """Shrink lane-change supports using a known aggressiveness level.

    With q_a known the gap law pins each inter-change gap to a band of
    +-d_n_bound around d_a*q_a + d_c; supports are intersected with those
    bands (the route-3 band is clamped into the off-ramp window, mirroring
    the generator). Probabilities are unchanged when every route survives.

    A route whose already-truncated supports cannot be reconciled with the
    estimate is thereby proven impossible and is dropped (with the
    remaining probabilities rescaled); only an empty intersection for
    *every* route signals an inconsistent estimate and raises ValueError.
    """
    if not (-1.0 <= q_a_est <= 1.0):
        raise ValueError(f"aggressiveness estimate {q_a_est} outside [-1, 1]")
    gap = model.d_a * q_a_est + model.d_c
    half = model.d_n_bound
    d_lc0 = model.signal_position(geometry)

    entries = []
    dropped = False
    for e in pred.entries:
        d1 = e.dist.d_lc1.truncated(d_lc0 + gap - half, d_lc0 + gap + half)
        if d1 is None:
            dropped = True
            continue
        d2 = e.dist.d_lc2
        if d2 is not None:
            lo = d1.lo + gap - half
            hi = d1.hi + gap + half
            if e.route == RouteId.ROUTE3:
                lo = min(max(lo, geometry.offramp_start), geometry.offramp_end)
                hi = min(max(hi, geometry.offramp_start), geometry.offramp_end)
            d2 = d2.truncated(lo, hi)
            if d2 is None:
                dropped = True
                continue
        entries.append(replace(e, dist=ParamDistribution(d1, d2, e.dist.v_d)))
    if not entries:
        raise ValueError(
            f"aggressiveness estimate {q_a_est} is inconsistent with every "
            "route's current parameter supports"
        )
    if dropped:
        total = sum(e.prob for e in entries)
        if total > 0.0:
            entries = [replace(e, prob=e.prob / total) for e in entries]
        else:
            entries = [replace(e, prob=1.0 / len(entries)) for e in entries]
    return Prediction(tuple(entries))


# --- sampling -----------------------------------------------------------------

def sample_params_batch(
    dist: ParamDistribution,
    route: RouteId,
    uniforms: np.ndarray,
) -> np.ndarray:
    """Map pre-drawn uniforms to valid parameter vectors.

    `uniforms` has shape (rounds, n, 3); row k of the output uses round 0
    and is re-drawn from later rounds while the ordering constraint
    d_lc1 < d_lc2 fails. Sharing the same uniforms across routes makes
    identical distributions produce identical samples (common random
    numbers). Returns an (n, 3) array of (d_lc1, d_lc2, v_d); d_lc2 is inf
    for single-change routes.
    """
    rounds, n, _ = uniforms.shape
    out = np.empty((n, 3), dtype=np.float64)
    out[:, 0] = dist.d_lc1.ppf(uniforms[0, :, 0])
    out[:, 2] = dist.v_d.ppf(uniforms[0, :, 2])
    if dist.d_lc2 is None:
        out[:, 1] = np.inf
        return out
    out[:, 1] = dist.d_lc2.ppf(uniforms[0, :, 1])
    bad = out[:, 0] >= out[:, 1]
    r = 1
    while bad.any():
        if r >= rounds:
            raise RuntimeError(
                "sampling iteration cap exceeded: truncated supports leave "
                "almost no ordered (d_lc1, d_lc2) pairs"
            )
        idx = np.nonzero(bad)[0]
        out[idx, 0] = dist.d_lc1.ppf(uniforms[r, idx, 0])
        out[idx, 1] = dist.d_lc2.ppf(uniforms[r, idx, 1])
        out[idx, 2] = dist.v_d.ppf(uniforms[r, idx, 2])
        bad[idx] = out[idx, 0] >= out[idx, 1]
        r += 1
    return out


def sample_params(
    dist: ParamDistribution,
    route: RouteId,
    rng: np.random.Generator,
) -> TrajectoryParams:
    """Draw one parameter vector with positive density under `dist`."""
    uniforms = rng.random((_MAX_SAMPLE_ROUNDS, 1, 3))
    row = sample_params_batch(dist, route, uniforms)[0]
    return TrajectoryParams(route=route, d_lc1=row[0], d_lc2=row[1], v_d=row[2])


# --- serialization -------------------------------------------------------------

def prediction_to_dict(pred: Prediction) -> dict:
    def dist_d(d: Optional[BoundedDist]):
        if d is None:
            return None
        out = {"lo": d.lo, "hi": d.hi, "kind": d.kind}
        if d.kind == "truncnorm":
            out.update(mu=d.mu, sigma=d.sigma)
        return out

    return {
        "entries": [
            {
                "route": int(e.route),
                "prob": e.prob,
                "d_lc1": dist_d(e.dist.d_lc1),
                "d_lc2": dist_d(e.dist.d_lc2),
                "v_d": dist_d(e.dist.v_d),
            }
            for e in pred.entries
        ]
    }


def prediction_from_dict(data: dict) -> Prediction:
    def dist_f(d) -> Optional[BoundedDist]:
        if d is None:
            return None
        return BoundedDist(**d)

    return Prediction(
        tuple(
            PredictionEntry(
                RouteId(e["route"]),
                e["prob"],
                ParamDistribution(dist_f(e["d_lc1"]), dist_f(e["d_lc2"]), dist_f(e["v_d"])),
            )
            for e in data["entries"]
        )
    )


def save_prediction(pred: Prediction, path: str) -> None:
    """Same structured text format as the scenario config (for replay logs)."""
    import yaml

    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(prediction_to_dict(pred), fh, sort_keys=False)


def load_prediction(path: str) -> Prediction:
    import yaml

    with open(path, "r", encoding="utf-8") as fh:
        return prediction_from_dict(yaml.safe_load(fh))
