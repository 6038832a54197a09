"""Experiment harness: seeded episodes, batches and parameter sweeps.

Every episode draws a ground-truth route and trajectory from the same
parametric family the prediction brackets (asserted at episode start), then
steps both vehicles at `dt` for the full horizon, replanning every step with
the incrementally adapted prediction. Episodes are deterministic functions
of (config, planner name, seed); batches run seeds base..base+n-1 and
aggregate in seed order, so results are independent of worker count.

CSV outputs are long-format and byte-deterministic; wall-clock timing
metrics go to a separate `*_timings.csv` file so the primary outputs stay
identical across reruns.
"""

from __future__ import annotations

import dataclasses
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .baselines import PLANNER_NAMES, make_planner
from .dynamics import start_lane, system_step
from .planner import PlanResult
from .prediction import Prediction, adapt, make_prediction
from .scenario import (
    ConservativenessError,
    RouteId,
    ScenarioConfig,
    SurroundingDriverModel,
    SystemState,
    TrajectoryParams,
    lane_occupancy,
    validate,
)

CSV_SCHEMA_VERSION = 1
TRACE_SCHEMA_VERSION = 1

_GT_STREAM = 0xA11CE
_PLAN_STREAM = 0xB0B


@dataclass(frozen=True)
class GroundTruth:
    route: RouteId
    params: TrajectoryParams
    q_a: float
    driver: SurroundingDriverModel   # episode driver model (true q_a)


@dataclass
class EpisodeResult:
    planner: str
    seed: int
    collided: bool
    min_realized_gap: float          # inf when lanes never overlap
    avg_speed: float
    final_speed: float
    ground_truth_route: int
    unsafe_plan_steps: int = 0       # planner calls that found no safe action
    plan_times: list[float] = field(default_factory=list)
    trace: Optional[dict] = None

    def semantic_fields(self) -> tuple:
        """Everything except wall-clock measurements (determinism contract)."""
        return (
            self.planner,
            self.seed,
            self.collided,
            self.min_realized_gap,
            self.avg_speed,
            self.final_speed,
            self.ground_truth_route,
            self.unsafe_plan_steps,
        )


@dataclass(frozen=True)
class Metrics:
    n: int
    safety_rate: float
    avg_speed: float
    final_speed: float
    mean_plan_time: float
    p95_plan_time: float


def draw_ground_truth(
    cfg: ScenarioConfig, rng: np.random.Generator
) -> tuple[SystemState, GroundTruth]:
    """Sample the episode's initial state and true trajectory.

    Draw order is fixed: route, aggressiveness, the two gap noises, desired
    speed, then the initial-state randomization. The route-3 second change
    is clamped into the off-ramp window, which the prediction support covers
    by construction.
    """
    geo, drv, rnd = cfg.geometry, cfg.driver, cfg.randomization
    route = RouteId(1 + rng.choice(3, p=np.asarray(cfg.route_probs, dtype=np.float64)))
    q_a = rng.uniform(-1.0, 1.0) if rnd.randomize_aggressiveness else drv.q_a
    noise1 = rng.uniform(-drv.d_n_bound, drv.d_n_bound)
    noise2 = rng.uniform(-drv.d_n_bound, drv.d_n_bound)
    v_d_true = rng.uniform(drv.v_d - drv.v_d_spread, drv.v_d + drv.v_d_spread)

    driver = replace(drv, q_a=q_a)
    d_lc0 = driver.signal_position(geo)
    d_lc1 = d_lc0 + (driver.d_a * q_a + driver.d_c + noise1)
    d_lc2 = d_lc1 + (driver.d_a * q_a + driver.d_c + noise2)
    if route == RouteId.ROUTE3:
        d_lc2 = min(max(d_lc2, geo.offramp_start), geo.offramp_end)
    params = TrajectoryParams(
        route=route,
        d_lc1=d_lc1,
        d_lc2=math.inf if route == RouteId.ROUTE1 else d_lc2,
        v_d=v_d_true,
    )

    base = cfg.initial_state
    gap0 = rng.uniform(rnd.gap_lo, rnd.gap_hi)
    v_e0 = rng.uniform(rnd.v_e_lo, min(rnd.v_e_hi, cfg.safety.v_limit))
    v_s0 = rng.uniform(rnd.v_s_lo, rnd.v_s_hi)
    state = replace(
        base,
        d_e=base.d_s - gap0,
        v_e=v_e0,
        v_s=v_s0,
        lane_s=float(start_lane(geo)),
    )
    return state, GroundTruth(route=route, params=params, q_a=q_a, driver=driver)


def assert_conservative(pred: Prediction, truth: GroundTruth) -> None:
    entry = pred.entry(truth.route)
    if entry is None or not entry.dist.contains(truth.params):
        raise ConservativenessError(
            f"ground truth {truth.params} has zero density under the initial "
            f"prediction for {truth.route.name}"
        )


def run_episode(
    cfg: ScenarioConfig,
    planner_name: str,
    seed: int,
    *,
    record_trace: bool = False,
) -> EpisodeResult:
    """Run one seeded episode; deterministic given (cfg, planner_name, seed)."""
    validate(cfg)
    if planner_name not in PLANNER_NAMES:
        raise KeyError(
            f"unknown planner {planner_name!r}; valid names: {', '.join(PLANNER_NAMES)}"
        )
    rng_scenario = np.random.default_rng(np.random.SeedSequence((seed, _GT_STREAM)))
    state, truth = draw_ground_truth(cfg, rng_scenario)
    pred = make_prediction(cfg)
    assert_conservative(pred, truth)
    planner = make_planner(planner_name, cfg, q_a_true=truth.q_a)

    n_steps = cfg.n_steps
    d_m = cfg.safety.d_m
    states = [state]
    results: list[PlanResult] = []
    plan_times: list[float] = []

    def shared_gap(s: SystemState) -> float:
        if s.lane_e in lane_occupancy(s.lane_s):
            return abs(s.d_e - s.d_s)
        return math.inf

    collided = shared_gap(state) < d_m
    min_gap_seen = shared_gap(state)
    unsafe_steps = 0

    for k in range(n_steps):
        pred = adapt(pred, state, cfg.geometry)
        rng_plan = np.random.default_rng(np.random.SeedSequence((seed, _PLAN_STREAM, k)))
        t0 = time.perf_counter()
        res = planner(state, pred, cfg, rng_plan)
        plan_times.append(time.perf_counter() - t0)
        unsafe_steps += int(res.theta != 0)
        state = system_step(
            state, res.u, truth.params, truth.driver, cfg.geometry, cfg.dt, cfg.safety
        )
        states.append(state)
        results.append(res)
        g = shared_gap(state)
        min_gap_seen = min(min_gap_seen, g)
        if g < d_m:
            collided = True

    speeds = [s.v_e for s in states]
    trace = None
    if record_trace:
        trace = {
            "schema_version": TRACE_SCHEMA_VERSION,
            "planner": planner_name,
            "seed": seed,
            "ground_truth": {
                "route": int(truth.route),
                "q_a": truth.q_a,
                "d_lc1": truth.params.d_lc1,
                "d_lc2": truth.params.d_lc2 if math.isfinite(truth.params.d_lc2) else None,
                "v_d": truth.params.v_d,
            },
            "states": [dataclasses.asdict(s) for s in states],
            "plans": [dataclasses.asdict(r) for r in results],
        }
    return EpisodeResult(
        planner=planner_name,
        seed=seed,
        collided=collided,
        min_realized_gap=min_gap_seen,
        avg_speed=float(np.mean(speeds)),
        final_speed=speeds[-1],
        ground_truth_route=int(truth.route),
        unsafe_plan_steps=unsafe_steps,
        plan_times=plan_times,
        trace=trace,
    )


def _episode_worker(args) -> EpisodeResult:
    cfg, planner_name, seed = args
    return run_episode(cfg, planner_name, seed)


def run_batch(
    cfg: ScenarioConfig,
    planner_name: str,
    n: int,
    base_seed: Optional[int] = None,
    *,
    jobs: int = 1,
    progress: Optional[Callable[[int, int], None]] = None,
) -> tuple[Metrics, list[EpisodeResult]]:
    """Run episodes on seeds base..base+n-1 and aggregate in seed order."""
    if n < 1:
        raise ValueError(f"batch size must be >= 1, got {n}")
    if base_seed is None:
        base_seed = cfg.seed
    seeds = list(range(base_seed, base_seed + n))
    episodes: list[EpisodeResult] = []
    if jobs <= 1:
        for i, s in enumerate(seeds):
            episodes.append(run_episode(cfg, planner_name, s))
            if progress is not None:
                progress(i + 1, n)
    else:
        args = [(cfg, planner_name, s) for s in seeds]
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for i, ep in enumerate(pool.map(_episode_worker, args, chunksize=16)):
                episodes.append(ep)
                if progress is not None:
                    progress(i + 1, n)
    episodes.sort(key=lambda e: e.seed)
    times = np.concatenate([np.asarray(e.plan_times) for e in episodes])
    metrics = Metrics(
        n=n,
        safety_rate=float(np.mean([not e.collided for e in episodes])),
        avg_speed=float(np.mean([e.avg_speed for e in episodes])),
        final_speed=float(np.mean([e.final_speed for e in episodes])),
        mean_plan_time=float(times.mean()),
        p95_plan_time=float(np.percentile(times, 95)),
    )
    return metrics, episodes


def sweep_p1(
    cfg: ScenarioConfig,
    planners: Sequence[str],
    p1_grid: Sequence[float],
    n: int,
    base_seed: Optional[int] = None,
    *,
    jobs: int = 1,
    progress: Optional[Callable[[int, int], None]] = None,
) -> list[tuple[str, float, Metrics]]:
    """Route-probability sweep: (p1, 0.8 - p1, 0.2) per grid point."""
    rows = []
    total = len(planners) * len(p1_grid)
    done = 0
    for p1 in p1_grid:
        if not (0.0 <= p1 <= 0.8 + 1e-12):
            raise ValueError(f"p1 must lie in [0, 0.8], got {p1}")
        probs = (p1, 0.8 - p1, 0.2)
        point_cfg = replace(cfg, route_probs=probs)
        for name in planners:
            metrics, _ = run_batch(point_cfg, name, n, base_seed, jobs=jobs)
            rows.append((name, p1, metrics))
            done += 1
            if progress is not None:
                progress(done, total)
    return rows


def sweep_ns(
    cfg: ScenarioConfig,
    ns_grid: Sequence[int],
    n: int,
    base_seed: Optional[int] = None,
    *,
    jobs: int = 1,
    progress: Optional[Callable[[int, int], None]] = None,
) -> list[tuple[int, Metrics]]:
    """Sample-count sweep for the speculative planner at fixed route probs."""
    rows = []
    sweep_cfg = replace(cfg, route_probs=(0.4, 0.4, 0.2))
    for i, n_s in enumerate(ns_grid):
        if n_s < 1:
            raise ValueError(f"n_samples must be >= 1, got {n_s}")
        metrics, _ = run_batch(replace(sweep_cfg, n_samples=int(n_s)), "spap", n, base_seed, jobs=jobs)
        rows.append((int(n_s), metrics))
        if progress is not None:
            progress(i + 1, len(ns_grid))
    return rows


# --- CSV / JSON output ---------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, float):
        if math.isinf(v):
            return "inf"
        return format(v, ".12g")
    return str(v)


def _write_rows(path: str, header: list[str], rows: list[list]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


_METRIC_COLUMNS = ("safety_rate", "avg_speed", "final_speed")
_TIMING_COLUMNS = ("mean_plan_time", "p95_plan_time")


def write_metrics_csv(
    path: str,
    results: list[tuple[str, Metrics]],
    base_seed: int,
    *,
    timings_path: Optional[str] = None,
) -> None:
    rows, trows = [], []
    for name, m in results:
        for metric in _METRIC_COLUMNS:
            rows.append([CSV_SCHEMA_VERSION, name, m.n, base_seed, metric, getattr(m, metric)])
        for metric in _TIMING_COLUMNS:
            trows.append([CSV_SCHEMA_VERSION, name, m.n, base_seed, metric, getattr(m, metric)])
    header = ["schema_version", "planner", "n", "base_seed", "metric", "value"]
    _write_rows(path, header, rows)
    if timings_path:
        _write_rows(timings_path, header, trows)


def write_sweep_p1_csv(
    path: str,
    rows_in: list[tuple[str, float, Metrics]],
    n: int,
    base_seed: int,
) -> None:
    rows = []
    for name, p1, m in rows_in:
        for metric in _METRIC_COLUMNS:
            rows.append([CSV_SCHEMA_VERSION, name, p1, n, base_seed, metric, getattr(m, metric)])
    _write_rows(path, ["schema_version", "planner", "p1", "n", "base_seed", "metric", "value"], rows)


def write_sweep_ns_csv(
    path: str,
    rows_in: list[tuple[int, Metrics]],
    n: int,
    base_seed: int,
    *,
    timings_path: Optional[str] = None,
) -> None:
    rows, trows = [], []
    for n_s, m in rows_in:
        for metric in _METRIC_COLUMNS:
            rows.append([CSV_SCHEMA_VERSION, "spap", n_s, n, base_seed, metric, getattr(m, metric)])
        for metric in _TIMING_COLUMNS:
            trows.append([CSV_SCHEMA_VERSION, "spap", n_s, n, base_seed, metric, getattr(m, metric)])
    header = ["schema_version", "planner", "n_s", "n", "base_seed", "metric", "value"]
    _write_rows(path, header, rows)
    if timings_path:
        _write_rows(timings_path, header, trows)


def write_trace_json(path: str, episode: EpisodeResult) -> None:
    if episode.trace is None:
        raise ValueError("episode was run without record_trace=True")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(episode.trace, fh, indent=1, sort_keys=True)
        fh.write("\n")


def write_tube_dump_csv(path: str, cfg: ScenarioConfig, seed: int) -> None:
    """Debug/visualization dump: per-replan occupancy tubes of one episode.

    Walks the episode's surrounding vehicle (ego coasting; tubes are
    independent of ego motion) and writes one row per occupied cell:
    replan time, window step, route, lane, interval bounds.
    """
    from .reachability import occupancy_tube, tube_dump_rows

    validate(cfg)
    rng = np.random.default_rng(np.random.SeedSequence((seed, _GT_STREAM)))
    state, truth = draw_ground_truth(cfg, rng)
    pred = make_prediction(cfg)
    assert_conservative(pred, truth)
    rows = []
    for k in range(cfg.n_steps):
        pred = adapt(pred, state, cfg.geometry)
        for e in pred.entries:
            tube = occupancy_tube(state, e.route, e.dist, cfg.driver, cfg.geometry, cfg.t_h, cfg.dt)
            for r in tube_dump_rows(tube, t0=state.t):
                rows.append(
                    [CSV_SCHEMA_VERSION, seed, _fmt(round(state.t, 9)), int(e.route),
                     r["step"], r["lane"], r["d_lo"], r["d_hi"]]
                )
        state = system_step(state, 0.0, truth.params, truth.driver, cfg.geometry, cfg.dt, cfg.safety)
    _write_rows(
        path,
        ["schema_version", "seed", "t", "route", "step", "lane", "d_lo", "d_hi"],
        rows,
    )
