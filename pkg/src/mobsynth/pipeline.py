"""End-to-end steps shared by the CLI and the acceptance suite: evaluation
of finished trajectories and the weight grid search."""

from __future__ import annotations

import logging
import math
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

from . import losses
from .anneal import GroupInput, RunConfig, Schedule, init_state, run_all_groups
from .model import (
    InfeasibleError,
    InputError,
    InvariantError,
    ODMatrix,
    T_MIN,
    Weights,
    od_matrix_of,
)
from .report import LossReport

log = logging.getLogger(__name__)

DEFAULT_W_VF = (0.0, 0.001, 0.01, 0.1)
DEFAULT_W_DT = (0.0, 0.02, 0.05, 0.1, 0.2, 0.5, 1.0, 2.0)
GRID_HEADER = ["w_vf", "w_dt", "seed", "l_od_eval", "sqrt_l_od_eval", "l_vf", "l_dt", "status"]
MEANS_HEADER = ["w_vf", "w_dt", "n_ok", "l_od_eval", "sqrt_l_od_eval", "l_vf", "l_dt"]


def group_inputs(bundle) -> dict:
    return {g: GroupInput(m, bundle.population(g)) for g, m in sorted(bundle.od.items())}


def evaluate(trajs, bundle, table, weights: Weights = Weights(), n_max: int = losses.N_MAX,
             t_min: float = T_MIN) -> LossReport:
    """Score finished trajectories against a reference bundle, from scratch.

    Each group is normalised by its own all-at-home state built from the
    bundle census; the returned report pools the groups.
    """
    by_group = defaultdict(list)
    for t in trajs:
        by_group[t.demographic].append(t)
    if not by_group:
        raise InputError("no trajectories to evaluate")
    reports = []
    for g in sorted(by_group):
        if g not in bundle.od:
            raise InputError(f"group {g.label} has no reference OD matrix")
        ts = by_group[g]
        F_r = bundle.od[g]
        F_s = od_matrix_of(ts, g)
        raw = (losses.loss_od(F_s, F_r), losses.loss_vf(ts, n_max),
               losses.loss_dt(ts, table, t_min))
        init = init_state(bundle.population(g))
        norms = (losses.loss_od(ODMatrix(g, {}), F_r), losses.loss_vf(init, n_max),
                 losses.loss_dt(init, table, t_min))
        reports.append(LossReport.build(g.label, weights, raw, losses.loss_od_eval(F_s, F_r),
                                        norms))
    return LossReport.pooled(reports)


@dataclass(frozen=True)
class GridSearchPlan:
    w_vf: tuple = DEFAULT_W_VF
    w_dt: tuple = DEFAULT_W_DT
    seeds: tuple = (0,)
    jobs: int = 1
    w_od: float = 1.0

    def __post_init__(self):
        if not self.w_vf or not self.w_dt or not self.seeds:
            raise InputError("grid lists must be nonempty")
        if self.jobs < 1:
            raise InputError("jobs must be >= 1")
        if self.w_od != 1.0:
            raise InputError("w_od is fixed at 1 in the grid search")

    @property
    def cells(self) -> list[tuple[float, float]]:
        return [(v, d) for v in self.w_vf for d in self.w_dt]

    def tasks(self) -> list[tuple[float, float, int]]:
        return [(v, d, s) for v, d in self.cells for s in self.seeds]


@dataclass
class GridRow:
    w_vf: float
    w_dt: float
    seed: int
    l_od_eval: float = math.nan
    sqrt_l_od_eval: float = math.nan
    l_vf: float = math.nan
    l_dt: float = math.nan
    status: str = "ok"

    def as_row(self):
        return (self.w_vf, self.w_dt, self.seed, self.l_od_eval, self.sqrt_l_od_eval,
                self.l_vf, self.l_dt, self.status)


@dataclass
class GridReport:
    rows: list
    means: dict = field(default_factory=dict)  # (w_vf, w_dt) -> dict of means

    def mean(self, w_vf, w_dt, key):
        return self.means[(w_vf, w_dt)][key]

    def means_rows(self):
        for (v, d), m in self.means.items():
            yield (v, d, m["n_ok"], m["l_od_eval"], m["sqrt_l_od_eval"], m["l_vf"], m["l_dt"])


def _grid_task(args) -> GridRow:
    (w_vf, w_dt, seed), inputs, table, schedule, n_max, pool = args
    cfg = RunConfig(Weights(1.0, w_vf, w_dt), schedule, seed, pool, n_max)
    try:
        _, results = run_all_groups(inputs, table, cfg)
    except (InputError, InfeasibleError, InvariantError) as exc:
        log.warning("grid cell (%g, %g) seed %d failed: %s", w_vf, w_dt, seed, exc)
        return GridRow(w_vf, w_dt, seed, status=f"failed: {type(exc).__name__}")
    p = LossReport.pooled([r.report for r in results])
    return GridRow(w_vf, w_dt, seed, p.l_od_eval, math.sqrt(p.l_od_eval), p.l_vf, p.l_dt)


def _means(plan: GridSearchPlan, rows: Sequence[GridRow]) -> dict:
    out = {}
    for v, d in plan.cells:
        ok = [r for r in rows if r.w_vf == v and r.w_dt == d and r.status == "ok"]
        m = {"n_ok": len(ok)}
        for key in ("l_od_eval", "sqrt_l_od_eval", "l_vf", "l_dt"):
            m[key] = math.fsum(getattr(r, key) for r in ok) / len(ok) if ok else math.nan
        out[(v, d)] = m
    return out


def run_grid_search(plan: GridSearchPlan, bundle, table, schedule: Optional[Schedule] = None,
                    n_max: int = losses.N_MAX, pool: str = "support") -> GridReport:
    """Optimise every (w_vf, w_dt) x seed combination; failures are recorded, not raised.

    ``schedule=None`` uses the population-scaled default step count.
    """
    from .anneal import default_tau_max

    inputs = group_inputs(bundle)
    if schedule is None:
        biggest = max(sum(gi.population.values()) for gi in inputs.values())
        schedule = Schedule(default_tau_max(biggest))
    tasks = [(t, inputs, table, schedule, n_max, pool) for t in plan.tasks()]
    if plan.jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=plan.jobs) as ex:
            rows = list(ex.map(_grid_task, tasks))
    else:
        rows = [_grid_task(t) for t in tasks]
    return GridReport(rows, _means(plan, rows))
