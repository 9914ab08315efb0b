"""Synthetic ground-truth world and the aggregate inputs derived from it.

The generated population follows known laws (visit counts, destination
attraction, per cell-hour dwell-travel log-normals). Aggregating it the same
way an operator would (hourly OD counts per group, pooled dwell-travel
quantiles, home census) gives a complete, verifiable input bundle.
"""

from __future__ import annotations

import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import meshgrid
from .lognormal import DTParams, fill_missing, fit_table, truncated_quantile
from .losses import reference_visit_pmf
from .model import (
    DAY_MINUTES,
    QUANTILE_LEVELS,
    T_MIN,
    AgeGroup,
    Demographic,
    InputError,
    ODMatrix,
    QuantileRow,
    QuantileTable,
    Sex,
    Trajectory,
    od_matrix_of,
    observations_of,
)

MAX_VISITS = DAY_MINUTES // T_MIN  # 95 gaps of 15 min plus a 15 min tail
DEFAULT_GROUPS = {
    Demographic(Sex.MALE, AgeGroup.AGE_20S): 1000,
    Demographic(Sex.FEMALE, AgeGroup.AGE_30S): 1000,
}


def _zipf_weights(cells: Sequence[str], exponent: float, rng: np.random.Generator) -> dict:
    ranks = rng.permutation(len(cells)) + 1
    w = ranks.astype(float) ** -exponent
    return {c: float(x) for c, x in zip(cells, w / w.sum())}


@dataclass
class WorldSpec:
    levels: int = 3
    populations: dict = field(default_factory=lambda: dict(DEFAULT_GROUPS))
    home_weights: Optional[dict] = None
    attraction: Optional[dict] = None
    # (cell, hour) -> true DTParams; None selects the built-in law
    dt_law: Optional[Callable[[str, int], DTParams]] = None
    visit_mu: float = 1.0
    visit_sigma: float = 0.5
    visit_pmf: Optional[Sequence[float]] = None  # overrides mu/sigma; index k -> N = k + 1
    home_exponent: float = 3.0
    attraction_exponent: float = 3.0
    return_home: bool = False  # days with N >= 3 stays end back at home
    threshold: int = 1
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.levels <= meshgrid.MAX_LEVELS:
            raise InputError(f"levels must be in 1..{meshgrid.MAX_LEVELS}")
        if self.threshold < 0:
            raise InputError("threshold must be non-negative")
        if any(n < 0 for n in self.populations.values()):
            raise InputError("negative population")

    @property
    def cells(self) -> list[str]:
        return meshgrid.grid_cells(self.levels)


class DefaultLaw:
    """Built-in dwell-travel law.

    Arrivals before 05:00 (in practice the home stay that opens the day) last
    until a morning departure around 07:30. Later arrivals get a per-cell
    typical duration between 40 min and 4 h with moderate spread.
    """

    def __init__(self, cells: Sequence[str], rng: np.random.Generator):
        base = np.exp(rng.uniform(math.log(40.0), math.log(240.0), len(cells)))
        spread = rng.uniform(0.35, 0.6, len(cells))
        self.params = {c: DTParams(math.log(b), s) for c, b, s in zip(cells, base, spread)}
        self.morning = DTParams(math.log(450.0), 0.2)

    def __call__(self, cell: str, hour: int) -> DTParams:
        if hour < 5:
            return self.morning
        return self.params[cell]


def _visit_pmf(spec: WorldSpec) -> np.ndarray:
    if spec.visit_pmf is not None:
        p = np.asarray(spec.visit_pmf, dtype=float)
        if p.ndim != 1 or (p < 0).any() or p.sum() <= 0:
            raise InputError("visit_pmf must be a non-negative vector with positive mass")
        p = p[:MAX_VISITS]
        return p / p.sum()
    return reference_visit_pmf(MAX_VISITS, spec.visit_mu, spec.visit_sigma)


def _fit_in_day(gaps: list[int]) -> list[int]:
    """Shrink gaps proportionally (15 min floor) so the last stay ends by 23:45."""
    budget = DAY_MINUTES - T_MIN
    total = sum(gaps)
    if total <= budget:
        return gaps
    scale = budget / total
    out = [max(T_MIN, int(g * scale)) for g in gaps]
    excess = sum(out) - budget
    while excess > 0:
        i = max(range(len(out)), key=out.__getitem__)
        cut = min(excess, out[i] - T_MIN)
        out[i] -= cut
        excess -= cut
    return out


def _draw_other(cells, p, exclude, rng) -> str:
    q = np.array([0.0 if c == exclude else x for c, x in zip(cells, p)])
    return cells[int(rng.choice(len(cells), p=q / q.sum()))]


def _landscape(spec: WorldSpec, rng: np.random.Generator):
    cells = spec.cells
    homes = spec.home_weights or _zipf_weights(cells, spec.home_exponent, rng)
    attraction = spec.attraction or _zipf_weights(cells, spec.attraction_exponent, rng)
    law = spec.dt_law or DefaultLaw(cells, rng)
    return homes, attraction, law


def generate_world(spec: WorldSpec) -> list[Trajectory]:
    """Sample the ground-truth population. Same spec and seed, same world."""
    rng = np.random.default_rng(spec.seed)
    homes, attraction, law = _landscape(spec, rng)
    home_cells = sorted(homes)
    home_p = np.array([homes[c] for c in home_cells], dtype=float)
    home_p /= home_p.sum()
    dest_cells = sorted(attraction)
    dest_p = np.array([attraction[c] for c in dest_cells], dtype=float)
    dest_p /= dest_p.sum()
    dest_index = {c: i for i, c in enumerate(dest_cells)}
    visit_p = _visit_pmf(spec)

    out: list[Trajectory] = []
    for demo in sorted(spec.populations):
        counts = rng.multinomial(spec.populations[demo], home_p)
        for home, k in zip(home_cells, counts):
            for _ in range(int(k)):
                n = int(rng.choice(len(visit_p), p=visit_p)) + 1
                cells = [home]
                outings = n - 2 if spec.return_home and n >= 3 else n - 1
                for _ in range(outings):
                    p = dest_p
                    j = dest_index.get(cells[-1])
                    if j is not None:
                        p = dest_p.copy()
                        p[j] = 0.0
                        p /= p.sum()
                    cells.append(dest_cells[int(rng.choice(len(p), p=p))])
                if len(cells) < n:
                    if cells[-1] == home:
                        # already back; add one more outing instead
                        cells.append(_draw_other(dest_cells, dest_p, home, rng))
                    else:
                        cells.append(home)
                gaps, t = [], 0
                for m in range(n - 1):
                    g = truncated_quantile(law(cells[m], t // 60), T_MIN, float(rng.random()))
                    g = max(T_MIN, int(round(g)))
                    gaps.append(g)
                    t += g
                arrivals = [0]
                for g in _fit_in_day(gaps):
                    arrivals.append(arrivals[-1] + g)
                out.append(Trajectory.from_lists(len(out), demo, cells, arrivals))
    return out


def aggregate_quantiles(trajs, threshold: int = 0) -> QuantileTable:
    """Five-quantile dwell-travel summary per (cell, arrival hour), all groups pooled.

    Quantiles use linear interpolation between closest ranks; rows with fewer
    than ``threshold`` observations are suppressed.
    """
    groups = defaultdict(list)
    for t in trajs:
        for cell, hour, dur in observations_of(t.cells, t.arrivals):
            groups[(cell, hour)].append(dur)
    rows = {}
    for key in sorted(groups):
        samples = groups[key]
        if len(samples) < threshold:
            continue
        qs = np.quantile(np.asarray(samples, dtype=float), QUANTILE_LEVELS, method="linear")
        rows[key] = QuantileRow(*(float(q) for q in qs), n=len(samples))
    return QuantileTable(rows, threshold)


def census_of(trajs) -> dict:
    return dict(Counter((t.home, t.demographic) for t in trajs))


@dataclass
class Bundle:
    """Aggregate inputs for the optimiser."""

    od: dict  # Demographic -> ODMatrix
    quantiles: QuantileTable
    census: dict  # (home cell, Demographic) -> count

    def population(self, group: Demographic) -> dict:
        return {k: v for k, v in self.census.items() if k[1] == group}

    def universe(self) -> set:
        """(cell, hour) pairs the optimiser may observe.

        Cells are homes plus every OD cell; hours are those with at least one
        quantile row, since nothing can be said about arrivals in other hours.
        """
        cells = {h for h, _ in self.census}
        for m in self.od.values():
            cells |= m.cells()
        hours = {h for _, h in self.quantiles.rows}
        return {(c, h) for c in cells for h in hours}

    def suppressed(self, threshold: int) -> "Bundle":
        """Drop OD entries and quantile rows below ``threshold``."""
        rows = {k: r for k, r in self.quantiles.rows.items() if r.n >= threshold}
        od = {g: m.suppressed(threshold) for g, m in self.od.items()}
        return Bundle(od, QuantileTable(rows, max(threshold, self.quantiles.threshold)),
                      dict(self.census))

    def param_table(self) -> dict:
        """Fitted and hierarchically completed dwell-travel parameters."""
        return fill_missing(fit_table(self.quantiles), self.universe())


def reference_inputs(spec: WorldSpec, world: Optional[list] = None,
                     threshold: Optional[int] = None) -> Bundle:
    """OD per group (suppressed), pooled quantiles (suppressed) and home census."""
    if world is None:
        world = generate_world(spec)
    th = spec.threshold if threshold is None else threshold
    by_group = defaultdict(list)
    for t in world:
        by_group[t.demographic].append(t)
    od = {g: od_matrix_of(ts, g).suppressed(th) for g, ts in sorted(by_group.items())}
    return Bundle(od, aggregate_quantiles(world, th), census_of(world))
