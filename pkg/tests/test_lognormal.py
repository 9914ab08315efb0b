import math
import random

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mobsynth.lognormal import (
    DTParams,
    fill_missing,
    fit_quantiles,
    fit_table,
    norm_cdf,
    probit,
    truncated_quantile,
)
from mobsynth.model import InfeasibleError, InputError, QuantileRow, QuantileTable

mpmath.mp.dps = 40


def oracle_probit(z):
    # high-precision inverse of the normal CDF
    return float(mpmath.sqrt(2) * mpmath.erfinv(2 * mpmath.mpf(z) - 1))


def exact_quantiles(mu, sigma, levels=(0.5, 0.7, 0.9)):
    return {z: math.exp(mu + sigma * oracle_probit(z)) for z in levels}


def test_probit_examples():
    assert probit(0.5) == 0.0
    assert probit(0.9) == pytest.approx(1.2815516, abs=1e-7)


@pytest.mark.parametrize("z", [0.0, 1.0, -0.1, 1.5, float("nan")])
def test_probit_domain(z):
    with pytest.raises(ValueError):
        probit(z)


def test_probit_vs_high_precision_grid():
    for k in range(1, 100):
        z = k / 100
        assert abs(probit(z) - oracle_probit(z)) <= 1e-7


@given(st.floats(1e-12, 1 - 1e-12))
def test_probit_inverts_cdf(z):
    assert abs(norm_cdf(probit(z)) - z) <= 1e-12


# dyadic levels keep 1 - z exact
@given(st.integers(1, 2 ** 19).map(lambda k: k / 2 ** 20))
def test_probit_symmetry(z):
    assert probit(z) == pytest.approx(-probit(1 - z), abs=1e-9)


def test_fit_examples():
    p = fit_quantiles(exact_quantiles(1.0, 0.5))
    assert p.mu == pytest.approx(1.0, abs=1e-9)
    assert p.sigma == pytest.approx(0.5, abs=1e-9)
    flat = fit_quantiles({0.5: 30, 0.7: 30, 0.9: 30})
    assert flat.mu == pytest.approx(math.log(30), abs=1e-12)
    assert flat.sigma == 1e-6


@pytest.mark.parametrize("bad", [0.0, -1.0, float("inf")])
def test_fit_rejects_nonpositive(bad):
    with pytest.raises(InputError):
        fit_quantiles({0.5: bad, 0.7: 30, 0.9: 40})


@given(st.floats(2, 6), st.floats(0.1, 1.5))
def test_fit_recovers_parameters(mu, sigma):
    p = fit_quantiles(exact_quantiles(mu, sigma))
    assert abs(p.mu - mu) <= 1e-9 and abs(p.sigma - sigma) <= 1e-9


def test_truncated_quantile_examples():
    p = DTParams(math.log(60), 0.5)
    assert truncated_quantile(p, 15, 0.0) == 15.0
    assert truncated_quantile(p, 1e-12, 0.5) == pytest.approx(60.0, rel=1e-9)
    with pytest.raises(ValueError):
        truncated_quantile(p, 15, 1.0)


def test_truncated_median_monte_carlo():
    p = DTParams(4.0, 0.6)
    rng = np.random.default_rng(1)
    draws = rng.lognormal(p.mu, p.sigma, 1_300_000)
    draws = draws[draws >= 15][:1_000_000]
    assert len(draws) == 1_000_000
    assert abs(truncated_quantile(p, 15, 0.5) - np.median(draws)) <= 0.5


def test_truncated_quantile_matches_formula_with_mpmath():
    # F^-1((1 - F(t_min)) u + F(t_min)) evaluated at high precision
    for mu, sigma, u in [(4.0, 0.6, 0.3), (2.0, 1.5, 0.99), (7.0, 0.2, 0.01), (1.0, 0.3, 0.5)]:
        a = (mpmath.log(15) - mu) / sigma
        F = mpmath.ncdf(a)
        z = mpmath.sqrt(2) * mpmath.erfinv(2 * ((1 - F) * u + F) - 1)
        want = float(mpmath.exp(mu + sigma * z))
        assert truncated_quantile(DTParams(mu, sigma), 15, u) == pytest.approx(want, rel=1e-7)


@settings(max_examples=50)
@given(st.floats(0.5, 7), st.floats(0.05, 2))
def test_truncated_quantile_monotone_and_bounded(mu, sigma):
    p = DTParams(mu, sigma)
    us = sorted(random.Random(int(mu * 1e6)).random() for _ in range(1000))
    vals = [truncated_quantile(p, 15, u) for u in us]
    assert all(v >= 15 for v in vals)
    assert all(b >= a for a, b in zip(vals, vals[1:]))


def test_fit_table():
    assert fit_table(QuantileTable()) == {}
    row = QuantileRow(20, 25, 30, 40, 50, n=10)
    out = fit_table(QuantileTable({("1", 3): row}))
    assert set(out) == {("1", 3)}
    assert out[("1", 3)] == fit_quantiles({0.5: 30, 0.7: 40, 0.9: 50})


def test_fill_single_sibling_copied():
    out = fill_missing({("10", 8): DTParams(3.0, 0.4)}, {("10", 8), ("11", 8)})
    assert out[("11", 8)] == DTParams(3.0, 0.4)


def test_fill_two_sibling_mean():
    partial = {("10", 8): DTParams(3.0, 0.4), ("11", 8): DTParams(5.0, 0.6)}
    out = fill_missing(partial, set(partial) | {("12", 8)})
    assert out[("12", 8)].mu == pytest.approx(4.0)
    assert out[("12", 8)].sigma == pytest.approx(0.5)


def test_fill_prefers_finest_ancestor():
    partial = {("100", 1): DTParams(1.0, 0.1), ("200", 1): DTParams(9.0, 0.9)}
    out = fill_missing(partial, set(partial) | {("101", 1), ("300", 1)})
    assert out[("101", 1)] == DTParams(1.0, 0.1)
    # no common ancestor: mean over the whole hour
    assert out[("300", 1)].mu == pytest.approx(5.0)


def test_fill_complete_table_unchanged():
    partial = {("1", 0): DTParams(3.0, 0.4)}
    assert fill_missing(partial, set(partial)) == partial


def test_fill_empty_hour_unfillable():
    with pytest.raises(InfeasibleError, match="hour 5 unfillable"):
        fill_missing({("1", 4): DTParams(3.0, 0.4)}, {("1", 5)})


@st.composite
def partial_tables(draw):
    cells = [a + b + c for a in "0123" for b in "0123" for c in "0123"]
    keys = draw(st.sets(st.tuples(st.sampled_from(cells), st.integers(0, 3)), min_size=1,
                        max_size=30))
    table = {k: DTParams(draw(st.floats(1, 6)), draw(st.floats(0.1, 1.5))) for k in keys}
    hours = {h for _, h in keys}
    universe = {(c, h) for c in draw(st.sets(st.sampled_from(cells), max_size=20)) for h in hours}
    return table, universe | set(keys)


@settings(max_examples=60)
@given(partial_tables())
def test_fill_idempotent_order_free_per_hour(args):
    partial, universe = args
    out = fill_missing(partial, universe)
    assert set(out) == universe
    assert fill_missing(out, universe) == out
    shuffled = dict(reversed(list(partial.items())))
    assert sorted(fill_missing(shuffled, list(universe)).items()) == sorted(out.items())
    # filling hour h reads only hour h: dropping other hours leaves it unchanged
    for h in {h for _, h in partial}:
        only = {k: v for k, v in partial.items() if k[1] == h}
        sub = fill_missing(only, {k for k in universe if k[1] == h})
        assert all(out[k] == v for k, v in sub.items())
