"""Simulated annealing over agent day trajectories."""

from __future__ import annotations

import hashlib
import logging
import math
import random
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Optional

from . import losses
from .losses import LossState, loss_total
from .model import (
    DAY_MINUTES,
    T_MIN,
    Demographic,
    InfeasibleError,
    InputError,
    InvariantError,
    ODMatrix,
    Trajectory,
    Weights,
    moves_of,
)
from .moves import KINDS, NULL_MOVE, Move
from .report import LossReport

log = logging.getLogger(__name__)

MOVE_PROBS = {"relocate": 0.4, "insert": 0.25, "remove": 0.25, "retime": 0.1}
MAX_PROPOSAL_TRIES = 16
TRACE_POINTS = 200
RESYNC_EVERY = 50_000
SEED_MASK = (1 << 64) - 1


@dataclass(frozen=True)
class Schedule:
    """Two-phase geometric cooling: ``t_max -> t_min`` twice over ``tau_max`` steps."""

    tau_max: int
    t_max: float = 1e-4
    t_min: float = 1e-8

    def __post_init__(self):
        if self.tau_max < 2:
            raise InputError("tau_max must be at least 2")
        if not 0 < self.t_min < self.t_max:
            raise InputError(f"need 0 < t_min < t_max, got {self.t_min}, {self.t_max}")

    @property
    def half(self) -> int:
        return self.tau_max // 2


def temperature(tau: int, s: Schedule) -> float:
    if not 0 <= tau < s.tau_max:
        raise ValueError(f"tau {tau} outside [0, {s.tau_max})")
    h = s.half
    if tau < h:
        frac = tau / h
    else:
        frac = (tau - h) / (s.tau_max - h)
    return s.t_max * (s.t_min / s.t_max) ** frac


@dataclass(frozen=True)
class RunConfig:
    weights: Weights
    schedule: Schedule
    seed: int = 0
    pool: str = "support"  # or "all": propose any reference cell
    n_max: int = losses.N_MAX
    t_min_dwell: int = T_MIN

    def __post_init__(self):
        if self.pool not in ("support", "all"):
            raise InputError(f"unknown candidate pool policy {self.pool!r}")


def table_hours(table) -> set:
    """Arrival hours for which the parameter table has any entry."""
    return {h for _, h in table}


def default_tau_max(population: int) -> int:
    return 2000 * population


def group_seed(seed: int, group: Demographic) -> int:
    """Per-group seed: ``seed XOR`` a stable 64-bit hash of the group label."""
    digest = hashlib.blake2b(group.label.encode(), digest_size=8).digest()
    return (seed ^ int.from_bytes(digest, "little")) & SEED_MASK


def init_state(population: Mapping[tuple[str, Demographic], int]) -> list[Trajectory]:
    """Everyone at home all day; agent ids dense from 0 in (group, home) order."""
    total = sum(population.values())
    if total <= 0:
        raise InputError("population is empty")
    out = []
    for (home, demo) in sorted(population, key=lambda k: (k[1].sort_key(), k[0])):
        for _ in range(population[(home, demo)]):
            out.append(Trajectory.from_lists(len(out), demo, [home], [0]))
    return out


class CandidatePool:
    """Destination cells keyed by origin, drawn from the reference OD support."""

    def __init__(self, F_r: ODMatrix, policy: str = "support", hours=range(24)):
        self.hour_ok = [h in set(hours) for h in range(24)]
        by_origin: dict = {}
        for o, d, _ in sorted(F_r.entries):
            by_origin.setdefault(o, set()).add(d)
        self.all = tuple(sorted(F_r.cells()))
        if not self.all:
            raise InfeasibleError("reference OD matrix has no cells")
        self.by_origin = {} if policy == "all" else {
            o: tuple(sorted(ds)) for o, ds in by_origin.items()}

    def draw(self, origin: str, rng: random.Random) -> str:
        cands = self.by_origin.get(origin) or self.all
        return cands[int(rng.random() * len(cands))]


_KIND_CDF = []
_acc = 0.0
for _k in KINDS:
    _acc += MOVE_PROBS[_k]
    _KIND_CDF.append((_acc, _k))


def _draw_kind(rng: random.Random) -> str:
    u = rng.random()
    for edge, kind in _KIND_CDF:
        if u < edge:
            return kind
    return KINDS[-1]


def propose_move(state: LossState, pool: CandidatePool, rng: random.Random) -> Move:
    """Draw a random valid edit of one agent's day, or the null move."""
    n_agents = len(state.cells)
    for _ in range(MAX_PROPOSAL_TRIES):
        kind = _draw_kind(rng)
        a = int(rng.random() * n_agents)
        c, t = state.cells[a], state.arrs[a]
        n = len(c)
        if kind == "insert":
            m = 1 + int(rng.random() * n)
            lo = t[m - 1] + T_MIN
            hi = (t[m] if m < n else DAY_MINUTES) - T_MIN
            if lo > hi:
                continue
            minute = rng.randint(lo, hi)
            if not pool.hour_ok[minute // 60]:
                continue
            cell = pool.draw(c[m - 1], rng)
            if cell == c[m - 1] or (m < n and cell == c[m]):
                continue
            return Move("insert", a, m, cell, minute)
        if n < 2:
            continue
        m = 1 + int(rng.random() * (n - 1))
        if kind == "relocate":
            cell = pool.draw(c[m - 1], rng)
            if cell == c[m] or cell == c[m - 1] or (m + 1 < n and cell == c[m + 1]):
                continue
            return Move("relocate", a, m, cell)
        if kind == "remove":
            if m + 1 < n and c[m - 1] == c[m + 1]:
                continue
            return Move("remove", a, m)
        # retime
        lo = t[m - 1] + T_MIN
        hi = (t[m + 1] if m + 1 < n else DAY_MINUTES) - T_MIN
        if lo >= hi:
            continue
        minute = rng.randint(lo, hi - 1)
        if minute >= t[m]:
            minute += 1
        if not pool.hour_ok[minute // 60]:
            continue
        return Move("retime", a, m, minute=minute)
    return NULL_MOVE


def accept(delta_total: float, temp: float, rng: random.Random) -> bool:
    """Metropolis rule."""
    if delta_total <= 0:
        return True
    return rng.random() < math.exp(-delta_total / temp)


@dataclass
class TraceRow:
    tau: int
    tau_frac: float
    temperature: float
    l_od_norm: float
    l_vf_norm: float
    l_dt_norm: float
    l_tot: float


@dataclass
class RunResult:
    group: Demographic
    trajectories: list
    report: LossReport
    trace: list = field(default_factory=list)
    accepted: int = 0


def _trace_row(tau, s: Schedule, temp, raw, norms, w) -> TraceRow:
    return TraceRow(tau, tau / s.tau_max, temp,
                    raw[0] / norms[0], raw[1] / norms[1], raw[2] / norms[2],
                    loss_total(raw, norms, w))


def optimize(F_r: ODMatrix, table, population: Mapping[tuple[str, Demographic], int],
             cfg: RunConfig, check_every: int = 0) -> RunResult:
    """Anneal one demographic group's trajectories against its OD matrix.

    ``population`` maps ``(home cell, demographic)`` to a head count; every key
    must belong to ``F_r.group``. ``check_every > 0`` cross-checks cached
    losses against a from-scratch rebuild at that interval.
    """
    group = F_r.group
    if any(d != group for _, d in population):
        raise InputError(f"population mixes groups other than {group.label}")
    agents = init_state(population)
    state = LossState([(t.cells, t.arrivals) for t in agents], F_r, table,
                      cfg.t_min_dwell, cfg.n_max)
    norms = state.raw
    for name, v in zip(("L_OD", "L_VF", "L_DT"), norms):
        if not v > 0:
            raise InfeasibleError(f"{name}(0) = {v}; cannot normalise")

    w, sched = cfg.weights, cfg.schedule
    rng = random.Random(cfg.seed)
    pool = CandidatePool(F_r, cfg.pool, table_hours(table))
    every = max(1, sched.tau_max // TRACE_POINTS)
    trace = []
    current = loss_total(norms, norms, w)
    accepted = 0
    for tau in range(sched.tau_max):
        temp = temperature(tau, sched)
        if tau % every == 0:
            trace.append(_trace_row(tau, sched, temp, state.raw, norms, w))
        if tau and tau % RESYNC_EVERY == 0:
            state.resync()
            current = loss_total(state.raw, norms, w)
        if check_every and tau and tau % check_every == 0:
            _check(state)
        move = propose_move(state, pool, rng)
        if move.is_null:
            continue
        raw, _ = state.apply_move(move)
        new = loss_total(raw, norms, w)
        if accept(new - current, temp, rng):
            current = new
            accepted += 1
            state.commit()
        else:
            state.revert()
    state.resync()
    trace.append(_trace_row(sched.tau_max, sched, sched.t_min, state.raw, norms, w))

    trajs = [Trajectory.from_lists(i, group, c, t)
             for i, (c, t) in enumerate(zip(state.cells, state.arrs))]
    report = LossReport.build(group.label, w, state.raw, state.l_od_eval, norms)
    log.info("%s: tau_max=%d accepted=%d l_tot=%.4g", group.label, sched.tau_max,
             accepted, report.l_tot)
    return RunResult(group, trajs, report, trace, accepted)


def _check(state: LossState, tol: float = 1e-9):
    cached = state.raw
    fresh = _fresh_raw(state)
    if any(abs(a - b) > tol for a, b in zip(cached, fresh)):
        raise InvariantError(f"cached losses {cached} drifted from {fresh}")


def _fresh_raw(state: LossState) -> tuple[float, float, float]:
    """Recompute raw losses for ``state`` with the from-scratch evaluators."""
    trajs = [Trajectory.from_lists(i, _ANY, c, t)
             for i, (c, t) in enumerate(zip(state.cells, state.arrs))]
    F_s = od_of_lists(state.cells, state.arrs)
    F_r = ODMatrix(_ANY, dict(state.ref))
    return (losses.loss_od(F_s, F_r), losses.loss_vf(trajs, state.n_max),
            losses.loss_dt(trajs, state.table, state.t_min))


_ANY = Demographic.all()[0]


def od_of_lists(cells, arrs) -> ODMatrix:
    counts: Counter = Counter()
    for c, t in zip(cells, arrs):
        counts.update(moves_of(c, t))
    return ODMatrix(_ANY, dict(counts))


@dataclass(frozen=True)
class GroupInput:
    od: ODMatrix
    population: Mapping[tuple[str, Demographic], int]


def _run_one(args) -> RunResult:
    group, gi, table, cfg = args
    try:
        return optimize(gi.od, table, gi.population, cfg)
    except (InputError, InfeasibleError) as exc:
        raise type(exc)(f"group {group.label}: {exc}") from exc


def run_all_groups(inputs: Mapping[Demographic, GroupInput], table, cfg: RunConfig,
                   jobs: int = 1) -> tuple[list[Trajectory], list[RunResult]]:
    """Optimise every group independently and merge the results.

    Group seeds are derived with :func:`group_seed`, so the outcome does not
    depend on ``jobs`` or execution order. Agents are renumbered densely in
    (sex, age group, per-group id) order.
    """
    if not inputs:
        raise InputError("no demographic groups to run")
    groups = sorted(inputs)
    tasks = []
    for g in groups:
        gcfg = RunConfig(cfg.weights, cfg.schedule, group_seed(cfg.seed, g), cfg.pool,
                         cfg.n_max, cfg.t_min_dwell)
        tasks.append((g, inputs[g], table, gcfg))
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_run_one, tasks))
    else:
        results = [_run_one(t) for t in tasks]
    merged = []
    for r in results:
        for t in r.trajectories:
            merged.append(Trajectory(len(merged), t.demographic, t.home, t.stays))
    return merged, results
