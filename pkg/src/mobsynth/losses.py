"""Loss terms: OD consistency, visit-frequency law, dwell-travel distributions.

From-scratch evaluators are plain functions. :class:`LossState` keeps the
same quantities as running accumulators so the annealer can score a move by
touching only the edited agent.
"""

from __future__ import annotations

import math
from bisect import bisect_left, bisect_right, insort
from collections import Counter, defaultdict
from typing import Iterable, Sequence

import numpy as np

from .lognormal import DTParams, truncated_quantile
from .model import (
    T_MIN,
    InfeasibleError,
    InputError,
    ODMatrix,
    Trajectory,
    Weights,
    moves_of,
    observations_of,
)
from .moves import InvalidMove, Move, apply_move

ZERO_FLOW_PENALTY = 15
N_MAX = 50
VISIT_MU = 1.0
VISIT_SIGMA = 0.5


# --- OD -------------------------------------------------------------------

def _ref_norm(F_r: ODMatrix) -> int:
    den = sum(v * v for v in F_r.entries.values())
    if den == 0:
        raise InfeasibleError("undefined normalization: reference OD matrix is all zero")
    return den


def _od_sum(F_s: ODMatrix, F_r: ODMatrix, penalty: int) -> int:
    ref, syn = F_r.entries, F_s.entries
    num = 0
    for key in ref.keys() | syn.keys():
        r = ref.get(key, 0)
        diff = syn.get(key, 0) - r
        num += (1 if r > 0 else penalty) * diff * diff
    return num


def loss_od(F_s: ODMatrix, F_r: ODMatrix) -> float:
    """Weighted squared OD error relative to the reference mass.

    Synthetic flow on pairs the reference never observed costs
    ``ZERO_FLOW_PENALTY`` times more.
    """
    den = _ref_norm(F_r)
    return _od_sum(F_s, F_r, ZERO_FLOW_PENALTY) / den


def loss_od_eval(F_s: ODMatrix, F_r: ODMatrix) -> float:
    """Unweighted variant of :func:`loss_od`; its square root is the mean relative error."""
    den = _ref_norm(F_r)
    return _od_sum(F_s, F_r, 1) / den


# --- visit frequency ------------------------------------------------------

def reference_visit_pmf(n_max: int = N_MAX, mu: float = VISIT_MU,
                        sigma: float = VISIT_SIGMA) -> np.ndarray:
    """Discrete log-normal law of daily visit counts on ``1..n_max``.

    Index ``k`` of the returned array holds ``P(N = k + 1)``.
    """
    if n_max < 2:
        raise ValueError("n_max must be at least 2")
    n = np.arange(1, n_max + 1, dtype=float)
    mass = np.exp(-((np.log(n) - mu) ** 2) / (2.0 * sigma * sigma)) / n
    return mass / mass.sum()


def wasserstein_discrete(p: Sequence[float], q: Sequence[float]) -> float:
    """Order-1 Wasserstein distance between pmfs on ``1..n_max`` (unit spacing)."""
    if len(p) != len(q):
        raise ValueError(f"support mismatch: {len(p)} vs {len(q)}")
    cp = cq = 0.0
    total = 0.0
    for a, b in zip(p[:-1], q[:-1]):
        cp += a
        cq += b
        total += abs(cp - cq)
    return total


def _visit_terms(cum: Sequence[int], n_agents: int, ref_cdf: Sequence[float]) -> list[float]:
    # cum[k] = #agents with N <= k + 1; ref_cdf[k] = P_r(N <= k + 1); last level omitted
    return [abs(c / n_agents - f) for c, f in zip(cum, ref_cdf[:-1])]


def _cumulative(hist: Sequence[int]) -> list[int]:
    out, acc = [], 0
    for h in hist[:-1]:
        acc += h
        out.append(acc)
    return out


def _visit_distance(hist: Sequence[int], n_agents: int, ref_cdf: Sequence[float]) -> float:
    return sum(_visit_terms(_cumulative(hist), n_agents, ref_cdf))


def _ref_cdf(n_max: int) -> list[float]:
    return np.cumsum(reference_visit_pmf(n_max)).tolist()


def visit_histogram(counts: Iterable[int], n_max: int) -> list[int]:
    hist = [0] * n_max
    for n in counts:
        hist[min(n, n_max) - 1] += 1
    return hist


def loss_vf(trajs: Sequence[Trajectory], n_max: int = N_MAX) -> float:
    """Distance between the population's visit-count pmf and the reference law."""
    if not trajs:
        raise InputError("loss_vf needs at least one trajectory")
    hist = visit_histogram((t.n_visits for t in trajs), n_max)
    return _visit_distance(hist, len(trajs), _ref_cdf(n_max))


# --- dwell-travel ---------------------------------------------------------

def quantile_vector(p: DTParams, t_min: float, n: int) -> list[float]:
    """Truncated-law quantiles at the midpoint levels ``(k + 0.5) / n``."""
    return [truncated_quantile(p, t_min, (k + 0.5) / n) for k in range(n)]


def _sorted_distance(sorted_samples: Sequence[float], qvec: Sequence[float]) -> float:
    return sum(abs(a - b) for a, b in zip(sorted_samples, qvec)) / len(qvec)


def wasserstein_dt(samples: Sequence[float], p: DTParams, t_min: float = T_MIN) -> float:
    """Distance between a sample and the log-normal ``p`` truncated at ``t_min``.

    The k-th smallest sample is matched to the truncated quantile at level
    ``(k + 0.5) / n``.
    """
    if len(samples) == 0:
        raise InputError("wasserstein_dt needs at least one sample")
    s = sorted(samples)
    return _sorted_distance(s, quantile_vector(p, t_min, len(s)))


def _lookup(table, key) -> DTParams:
    try:
        return table[key]
    except KeyError:
        raise InputError(
            f"no dwell-travel parameters for cell {key[0]} hour {key[1]}; "
            "fill the table first") from None


def dt_groups(trajs: Iterable[Trajectory]) -> dict[tuple[str, int], list[int]]:
    groups: dict = defaultdict(list)
    for t in trajs:
        for cell, hour, dur in observations_of(t.cells, t.arrivals):
            groups[(cell, hour)].append(dur)
    return groups


def loss_dt(trajs: Iterable[Trajectory], table, t_min: float = T_MIN) -> float:
    """Observation-weighted mean of per-(cell, hour) distances, in minutes."""
    groups = dt_groups(trajs)
    if not groups:
        raise InputError("loss_dt needs at least one observation")
    terms, total_n = [], 0
    for key in sorted(groups):
        samples = groups[key]
        terms.append(len(samples) * wasserstein_dt(samples, _lookup(table, key), t_min))
        total_n += len(samples)
    return math.fsum(terms) / total_n


def loss_total(raw: Sequence[float], norms: Sequence[float], w: Weights) -> float:
    l_od, l_vf, l_dt = raw
    n_od, n_vf, n_dt = norms
    return w.w_od * l_od / n_od + w.w_vf * l_vf / n_vf + w.w_dt * l_dt / n_dt


# --- incremental state ----------------------------------------------------

_NUMPY_SPAN = 32


def _abs_dev(samples: Sequence[float], qvec: Sequence[float]) -> float:
    return sum(abs(a - b) for a, b in zip(samples, qvec))


def _abs_dev_span(samples: list, qarr: np.ndarray, lo: int, hi: int) -> float:
    if hi - lo < _NUMPY_SPAN:
        return sum(abs(a - b) for a, b in zip(samples[lo:hi], qarr[lo:hi].tolist()))
    return float(np.abs(np.array(samples[lo:hi], dtype=float) - qarr[lo:hi]).sum())


class LossState:
    """Running loss accumulators over one demographic group's agents.

    ``apply_move`` edits one agent and updates every accumulator; ``revert``
    undoes the most recent move exactly. Only one pending move is kept.

    Dwell-travel samples are held per (cell, hour) as sorted lists together
    with their summed absolute deviation from the matched quantiles, so the
    loss numerator is the sum of those deviations.
    """

    def __init__(self, agents: Sequence[tuple[list, list]], F_r: ODMatrix, table,
                 t_min: float = T_MIN, n_max: int = N_MAX):
        if not agents:
            raise InputError("no agents")
        self.cells = [list(c) for c, _ in agents]
        self.arrs = [list(t) for _, t in agents]
        self.ref = F_r.entries
        self.ref_sq = _ref_norm(F_r)
        self.table = table
        self.t_min = t_min
        self.n_max = n_max
        self._ref_cdf = _ref_cdf(n_max)
        self._qcache: dict = {}
        self._qarr: dict = {}
        self._undo = None
        self.rebuild()

    def rebuild(self):
        """Recompute every accumulator from the current trajectories."""
        self.syn: Counter = Counter()
        hist = [0] * self.n_max
        self.groups: dict = defaultdict(list)
        for c, t in zip(self.cells, self.arrs):
            self.syn.update(moves_of(c, t))
            hist[min(len(c), self.n_max) - 1] += 1
            for cell, hour, dur in observations_of(c, t):
                self.groups[(cell, hour)].append(dur)
        self.groups = dict(self.groups)
        for v in self.groups.values():
            v.sort()
        self.od_num = self.od_eval_num = 0
        for key in self.ref.keys() | self.syn.keys():
            r = self.ref.get(key, 0)
            diff = self.syn.get(key, 0) - r
            self.od_num += (1 if r > 0 else ZERO_FLOW_PENALTY) * diff * diff
            self.od_eval_num += diff * diff
        self.cum = _cumulative(hist)
        self.vf_terms = _visit_terms(self.cum, len(self.cells), self._ref_cdf)
        self.l_vf = sum(self.vf_terms)
        self.total_n = sum(len(v) for v in self.groups.values())
        self.resync()
        self._undo = None

    def resync(self):
        """Recompute per-group deviations to shed floating-point drift."""
        self.dev = {key: self._full_dev(key) for key in self.groups}
        self.dt_num = math.fsum(self.dev.values())

    def _qvec(self, key, n):
        ck = (key, n)
        q = self._qcache.get(ck)
        if q is None:
            q = self._qcache[ck] = quantile_vector(_lookup(self.table, key), self.t_min, n)
        return q

    def _qarray(self, key, n):
        ck = (key, n)
        q = self._qarr.get(ck)
        if q is None:
            q = self._qarr[ck] = np.array(self._qvec(key, n))
        return q

    def _full_dev(self, key) -> float:
        s = self.groups[key]
        if len(s) < _NUMPY_SPAN:
            return _abs_dev(s, self._qvec(key, len(s)))
        return _abs_dev_span(s, self._qarray(key, len(s)), 0, len(s))

    @property
    def raw(self) -> tuple[float, float, float]:
        return (self.od_num / self.ref_sq, self.l_vf,
                self.dt_num / self.total_n if self.total_n else 0.0)

    @property
    def l_od_eval(self) -> float:
        return self.od_eval_num / self.ref_sq

    def _bump_od(self, key, d):
        s = self.syn.get(key, 0)
        r = self.ref.get(key, 0)
        old = (s - r) ** 2
        s += d
        new = (s - r) ** 2
        if s:
            self.syn[key] = s
        else:
            del self.syn[key]
        self.od_num += (1 if r > 0 else ZERO_FLOW_PENALTY) * (new - old)
        self.od_eval_num += new - old

    def _shift_visits(self, a: int, b: int):
        # one agent's clipped visit count goes from a to b
        if a == b:
            return
        lo, hi, d = (a, b, -1) if a < b else (b, a, +1)
        n = len(self.cells)
        cdf = self._ref_cdf
        for k in range(lo - 1, min(hi - 1, self.n_max - 1)):
            self.cum[k] += d
            self.vf_terms[k] = abs(self.cum[k] / n - cdf[k])
        self.l_vf = sum(self.vf_terms)

    def _replace_sample(self, key, x, y):
        """Swap sample x for y in one group, updating its deviation in place."""
        s = self.groups[key]
        i = bisect_left(s, x)
        j = bisect_right(s, y)
        if j > i:
            j -= 1
        lo, hi = (i, j + 1) if i <= j else (j, i + 1)
        if hi - lo < _NUMPY_SPAN:
            q = self._qvec(key, len(s))[lo:hi]
            before = _abs_dev(s[lo:hi], q)
            del s[i]
            insort(s, y)
            after = _abs_dev(s[lo:hi], q)
        else:
            q = self._qarray(key, len(s))
            before = _abs_dev_span(s, q, lo, hi)
            del s[i]
            insort(s, y)
            after = _abs_dev_span(s, q, lo, hi)
        self.dev[key] += after - before

    def _set_agent(self, agent, new_c, new_t, saved_dev=None):
        """Swap in a new trajectory for ``agent``; return prior deviations of touched groups."""
        old_c, old_t = self.cells[agent], self.arrs[agent]

        gone = moves_of(old_c, old_t)
        for key in moves_of(new_c, new_t):
            try:
                gone.remove(key)
            except ValueError:
                self._bump_od(key, +1)
        for key in gone:
            self._bump_od(key, -1)

        self._shift_visits(min(len(old_c), self.n_max), min(len(new_c), self.n_max))

        removed = observations_of(old_c, old_t)
        added = []
        for ob in observations_of(new_c, new_t):
            try:
                removed.remove(ob)
            except ValueError:
                added.append(ob)
        delta: dict = {}
        for cell, hour, dur in removed:
            delta.setdefault((cell, hour), ([], []))[0].append(dur)
        for cell, hour, dur in added:
            delta.setdefault((cell, hour), ([], []))[1].append(dur)

        prior = {}
        for key, (out, into) in delta.items():
            d0 = self.dev.get(key)
            prior[key] = d0
            if saved_dev is not None:
                s = self.groups.get(key)
                if s is None:
                    s = self.groups[key] = []
                for x in out:
                    del s[bisect_left(s, x)]
                for y in into:
                    insort(s, y)
                d1 = saved_dev.get(key)
            elif len(out) == 1 and len(into) == 1:
                self._replace_sample(key, out[0], into[0])
                d1 = self.dev[key]
            else:
                s = self.groups.get(key)
                if s is None:
                    s = self.groups[key] = []
                for x in out:
                    del s[bisect_left(s, x)]
                for y in into:
                    insort(s, y)
                d1 = self._full_dev(key) if s else None
            if d1 is None:
                del self.groups[key]
                self.dev.pop(key, None)
            else:
                self.dev[key] = d1
            self.dt_num += (d1 or 0.0) - (d0 or 0.0)
        self.total_n += len(added) - len(removed)
        self.cells[agent], self.arrs[agent] = new_c, new_t
        return prior

    def apply_move(self, move: Move):
        """Apply ``move``; return ``(new raw losses, per-term deltas)``.

        Invalid moves raise :class:`~mobsynth.moves.InvalidMove` and leave the
        state untouched.
        """
        before = self.raw
        if move.is_null:
            self._undo = None
            return before, (0.0, 0.0, 0.0)
        if not 0 <= move.agent < len(self.cells):
            raise InvalidMove(f"no agent {move.agent}")
        old_c, old_t = self.cells[move.agent], self.arrs[move.agent]
        new_c, new_t = apply_move(old_c, old_t, move)
        scalars = (self.od_num, self.od_eval_num, self.dt_num, self.total_n, self.l_vf)
        prior = self._set_agent(move.agent, new_c, new_t)
        self._undo = (move.agent, old_c, old_t, scalars, prior)
        after = self.raw
        return after, tuple(a - b for a, b in zip(after, before))

    def revert(self):
        """Undo the last applied move bit-for-bit."""
        if self._undo is None:
            return
        agent, old_c, old_t, scalars, prior = self._undo
        self._set_agent(agent, old_c, old_t, saved_dev=prior)
        self.od_num, self.od_eval_num, self.dt_num, self.total_n, self.l_vf = scalars
        self._undo = None

    def commit(self):
        self._undo = None
