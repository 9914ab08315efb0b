"""Log-normal dwell-travel laws fitted from quantile summaries."""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Mapping

from . import meshgrid
from .model import InfeasibleError, InputError, QuantileTable

SIGMA_FLOOR = 1e-6
FIT_LEVELS = (0.5, 0.7, 0.9)

_SQRT2 = math.sqrt(2.0)
_SQRT2PI = math.sqrt(2.0 * math.pi)

# Acklam's rational approximation to the inverse normal CDF.
_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
      3.754408661907416e00)
_P_LOW = 0.02425


def norm_cdf(x: float) -> float:
    return 0.5 * math.erfc(-x / _SQRT2)


def norm_sf(x: float) -> float:
    return 0.5 * math.erfc(x / _SQRT2)


def _probit_lower(p: float) -> float:
    # p in (0, 0.5]
    if p < _P_LOW:
        q = math.sqrt(-2.0 * math.log(p))
        x = ((((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5])
             / ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0))
    else:
        q = p - 0.5
        r = q * q
        x = ((((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q
             / (((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0))
    # one Newton step on the CDF
    pdf = math.exp(-0.5 * x * x) / _SQRT2PI
    if pdf > 0.0:
        x -= (norm_cdf(x) - p) / pdf
    return x


def probit(z: float) -> float:
    """Inverse of the standard normal CDF."""
    if not 0.0 < z < 1.0:
        raise ValueError(f"probit is defined on (0, 1), got {z!r}")
    if z == 0.5:
        return 0.0
    if z < 0.5:
        return _probit_lower(z)
    # 1 - z is exact for z >= 0.5
    return -_probit_lower(1.0 - z)


@dataclass(frozen=True)
class DTParams:
    mu: float
    sigma: float

    def __post_init__(self):
        if not (math.isfinite(self.mu) and math.isfinite(self.sigma)) or self.sigma <= 0:
            raise InputError(f"invalid log-normal parameters mu={self.mu}, sigma={self.sigma}")

    def quantile(self, z: float) -> float:
        return math.exp(self.mu + self.sigma * probit(z))


DTParamTable = dict  # (cell, hour) -> DTParams


def fit_quantiles(q: Mapping[float, float]) -> DTParams:
    """Least-squares fit of ``ln T = mu + sigma * probit(z)``.

    ``q`` maps quantile levels to quantile values; normally the 50/70/90th
    percentiles. Equal quantiles give ``sigma = SIGMA_FLOOR``.
    """
    if len(q) < 2:
        raise InputError("need at least two quantiles to fit")
    xs, ys = [], []
    for z, t in sorted(q.items()):
        if not (t > 0 and math.isfinite(t)):
            raise InputError(f"quantile at level {z} must be positive and finite, got {t!r}")
        xs.append(probit(z))
        ys.append(math.log(t))
    n = len(xs)
    xbar = math.fsum(xs) / n
    ybar = math.fsum(ys) / n
    sxx = math.fsum((x - xbar) ** 2 for x in xs)
    sxy = math.fsum((x - xbar) * (y - ybar) for x, y in zip(xs, ys))
    sigma = sxy / sxx
    mu = ybar - sigma * xbar
    return DTParams(mu, max(sigma, SIGMA_FLOOR))


def cdf(p: DTParams, t: float) -> float:
    return norm_cdf((math.log(t) - p.mu) / p.sigma)


def truncated_quantile(p: DTParams, t_min: float, u: float) -> float:
    """Inverse CDF of the log-normal ``p`` conditioned on ``T >= t_min``.

    Equals ``F^-1((1 - F(t_min)) u + F(t_min))`` with ``F`` the untruncated
    CDF; evaluated through whichever tail keeps the argument accurate.
    """
    if not 0.0 <= u < 1.0:
        raise ValueError(f"u must lie in [0, 1), got {u!r}")
    if t_min <= 0:
        raise ValueError("t_min must be positive")
    if u == 0.0:
        return float(t_min)
    a = (math.log(t_min) - p.mu) / p.sigma
    if a < 0.0:
        lower = norm_cdf(a)
        z = probit(lower + (1.0 - lower) * u)
    else:
        upper = norm_sf(a) * (1.0 - u)
        if upper <= 0.0:
            return float(t_min)
        z = -probit(upper)
    return max(float(t_min), math.exp(p.mu + p.sigma * z))


def fit_table(qt: QuantileTable) -> DTParamTable:
    """Fit every row of a quantile table from its upper three quantiles."""
    out = {}
    for key in sorted(qt.rows):
        row = qt.rows[key]
        try:
            out[key] = fit_quantiles({0.5: row.q50, 0.7: row.q70, 0.9: row.q90})
        except InputError as exc:
            raise InputError(f"cannot fit cell {key[0]} hour {key[1]}: {exc}") from exc
    return out


def fill_missing(partial: DTParamTable, universe: Iterable[tuple[str, int]]) -> DTParamTable:
    """Complete ``partial`` over ``universe`` using the cell hierarchy.

    A missing (cell, hour) takes the mean parameters of all defined cells of
    the same hour under its nearest enclosing cell that has any. If no
    enclosing cell has data, the mean over the whole hour is used. Hours
    without any defined row raise :class:`InfeasibleError`.
    """
    universe = sorted(set(universe))
    missing = [k for k in universe if k not in partial]
    out = dict(partial)
    if not missing:
        return out

    by_hour: dict[int, list] = defaultdict(list)
    for (cell, hour), prm in partial.items():
        by_hour[hour].append((cell, prm))

    means: dict[int, dict[str, DTParams]] = {}
    for hour in sorted({h for _, h in missing}):
        rows = by_hour.get(hour)
        if not rows:
            raise InfeasibleError(f"hour {hour} unfillable: no defined cells")
        groups: dict[str, list] = defaultdict(list)
        for cell, prm in rows:
            for k in range(len(cell), -1, -1):
                groups[cell[:k]].append(prm)
        means[hour] = {
            prefix: DTParams(math.fsum(p.mu for p in ps) / len(ps),
                             math.fsum(p.sigma for p in ps) / len(ps))
            for prefix, ps in groups.items()
        }

    for cell, hour in missing:
        table = means[hour]
        for anc in meshgrid.ancestors(cell) + [""]:
            if anc in table:
                out[(cell, hour)] = table[anc]
                break
    return out
