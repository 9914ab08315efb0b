import math
import random

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import linprog

from mobsynth.anneal import CandidatePool, init_state, propose_move
from mobsynth.lognormal import DTParams, truncated_quantile
from mobsynth.losses import (
    LossState,
    loss_dt,
    loss_od,
    loss_od_eval,
    loss_total,
    loss_vf,
    reference_visit_pmf,
    wasserstein_discrete,
    wasserstein_dt,
)
from mobsynth.model import (
    InfeasibleError,
    InputError,
    ODMatrix,
    Trajectory,
    Weights,
    od_matrix_of,
)
from mobsynth.moves import NULL_MOVE, InvalidMove, Move

from conftest import M20


def od(entries):
    return ODMatrix(M20, entries)


def traj(cells, arrivals, aid=0):
    return Trajectory.from_lists(aid, M20, cells, arrivals)


# --- OD -------------------------------------------------------------------

def test_od_examples():
    F_r = od({("1", "2", 8): 10})
    assert loss_od(F_r, F_r) == 0.0
    assert loss_od(od({("1", "2", 8): 8}), F_r) == pytest.approx(0.04)
    extra = od({("1", "2", 8): 10, ("2", "1", 9): 1})
    assert loss_od(extra, F_r) == pytest.approx(0.15)
    assert loss_od_eval(extra, F_r) == pytest.approx(0.01)


def test_od_zero_reference():
    with pytest.raises(InfeasibleError, match="undefined normalization"):
        loss_od(od({("1", "2", 8): 1}), od({}))


od_maps = st.dictionaries(
    st.tuples(st.sampled_from("1234"), st.sampled_from("5678"), st.integers(0, 23)),
    st.integers(1, 20), max_size=12)


@given(od_maps, od_maps.filter(bool))
def test_eval_dominated_and_self_zero(s, r):
    F_s, F_r = od(s), od(r)
    assert loss_od_eval(F_s, F_r) <= loss_od(F_s, F_r)
    assert loss_od(F_r, F_r) == loss_od_eval(F_r, F_r) == 0.0


# --- visit frequency ------------------------------------------------------

def test_reference_pmf_examples():
    n = np.arange(1, 6)
    f = np.exp(-((np.log(n) - 1) ** 2) / 0.5) / n
    assert f[0] == pytest.approx(math.exp(-2), abs=1e-12)
    assert f[1] == pytest.approx(0.4141, abs=1e-4)
    assert f[2] == pytest.approx(0.3269, abs=1e-4)
    p = reference_visit_pmf(50)
    assert int(np.argmax(p)) + 1 == 2
    assert p[1] / p[0] == pytest.approx(f[1] / f[0], rel=1e-12)


@given(st.integers(2, 200))
def test_reference_pmf_normalized(n_max):
    p = reference_visit_pmf(n_max)
    assert len(p) == n_max and (p >= 0).all()
    assert abs(p.sum() - 1) <= 1e-12


def transport_oracle(p, q):
    """Minimal cost |i - j| transport plan via linear programming."""
    n = len(p)
    cost = np.abs(np.subtract.outer(np.arange(n), np.arange(n))).ravel()
    A_eq, b_eq = [], []
    for i in range(n):
        row = np.zeros((n, n)); row[i, :] = 1
        A_eq.append(row.ravel()); b_eq.append(p[i])
    for j in range(n):
        col = np.zeros((n, n)); col[:, j] = 1
        A_eq.append(col.ravel()); b_eq.append(q[j])
    res = linprog(cost, A_eq=np.array(A_eq), b_eq=b_eq, bounds=(0, None), method="highs")
    assert res.success
    return res.fun


def test_wasserstein_examples():
    d1 = [1, 0, 0]
    d3 = [0, 0, 1]
    assert wasserstein_discrete(d1, d1) == 0
    assert wasserstein_discrete(d1, d3) == 2
    with pytest.raises(ValueError):
        wasserstein_discrete([1, 0], [1, 0, 0])


def test_wasserstein_vs_transport_oracle_small():
    rng = np.random.default_rng(3)
    for _ in range(20):
        n = int(rng.integers(2, 11))
        p, q = rng.random(n), rng.random(n)
        p, q = p / p.sum(), q / q.sum()
        assert abs(wasserstein_discrete(p, q) - transport_oracle(p, q)) <= 1e-9


def test_loss_vf_examples():
    ref = reference_visit_pmf(50)
    home = [traj(["1"], [0], i) for i in range(5)]
    expected = float(np.sum(np.arange(1, 51) * ref)) - 1
    assert loss_vf(home, 50) == pytest.approx(expected, abs=1e-12)
    with pytest.raises(InputError):
        loss_vf([], 50)


def test_loss_vf_large_sample_from_reference():
    rng = np.random.default_rng(11)
    ref = reference_visit_pmf(50)
    counts = rng.choice(np.arange(1, 51), size=10_000, p=ref)
    trajs = []
    for i, n in enumerate(counts):
        cells = ["1" if k % 2 == 0 else "2" for k in range(n)]
        trajs.append(traj(cells, [15 * k for k in range(n)], i))
    assert loss_vf(trajs, 50) <= 0.05
    shuffled = list(trajs)
    random.Random(0).shuffle(shuffled)
    assert loss_vf(shuffled, 50) == loss_vf(trajs, 50)


def test_loss_vf_clips_long_days():
    n = 60
    t = traj(["1" if k % 2 == 0 else "2" for k in range(n)], [15 * k for k in range(n)])
    assert loss_vf([t], 10) == pytest.approx(wasserstein_discrete(
        [0] * 9 + [1], reference_visit_pmf(10)))


# --- dwell-travel ---------------------------------------------------------

def test_wasserstein_dt_examples():
    p = DTParams(4.0, 0.6)
    assert wasserstein_dt([truncated_quantile(p, 15, 0.5)], p, 15) == pytest.approx(0, abs=1e-9)
    spike = DTParams(math.log(60), 1e-6)
    assert wasserstein_dt([70, 50], spike, 15) == pytest.approx(10, abs=1e-3)
    with pytest.raises(InputError):
        wasserstein_dt([], p, 15)


def test_wasserstein_dt_sampling_oracle():
    p = DTParams(4.0, 0.6)
    rng = np.random.default_rng(5)
    x = rng.lognormal(p.mu, p.sigma, 140_000)
    x = x[x >= 15][:100_000]
    assert len(x) == 100_000
    assert wasserstein_dt(x.tolist(), p, 15) <= 1.0


def test_loss_dt_weighted_mean():
    # group A hour 0 (n=1) and group B hour 8 (n=3), spiked laws give exact distances
    a = traj(["1"], [0])
    b = [traj(["2", "3"], [0, 480 + 60 * k], k + 1) for k in range(3)]
    table = {("1", 0): DTParams(math.log(1440 - 8), 1e-9)}
    table[("2", 0)] = DTParams(math.log(540), 1e-9)
    table.update({("3", 8 + k): DTParams(math.log(960 - 60 * k), 1e-9) for k in range(3)})
    # (1,0): |1440 - 1432| = 8 ; (2,0): samples 480,540,600 vs 540 -> mean 40
    got = loss_dt([a] + b, table, 15)
    assert got == pytest.approx((1 * 8 + 3 * 40) / 7, abs=1e-4)
    single = loss_dt([a], table, 15)
    assert single == pytest.approx(wasserstein_dt([1440], table[("1", 0)], 15))


def test_loss_dt_missing_entry():
    with pytest.raises(InputError, match="fill the table"):
        loss_dt([traj(["1"], [0])], {}, 15)


def test_loss_total():
    w = Weights(1, 0.1, 0.2)
    assert loss_total((2, 3, 4), (2, 3, 4), w) == pytest.approx(1.3)
    assert loss_total((0.5, 9, 9), (2, 3, 4), Weights()) == 0.25
    assert loss_total((1, 2, 8), (2, 3, 4), w) == pytest.approx(0.5 + 0.1 * 2 / 3 + 0.2 * 2)


# --- incremental state ----------------------------------------------------

def scratch(state, group=M20):
    trajs = [Trajectory.from_lists(i, group, c, t)
             for i, (c, t) in enumerate(zip(state.cells, state.arrs))]
    F_r = ODMatrix(group, dict(state.ref))
    F_s = od_matrix_of(trajs, group)
    return ((loss_od(F_s, F_r), loss_vf(trajs, state.n_max), loss_dt(trajs, state.table)),
            loss_od_eval(F_s, F_r))


def make_state(bundle, table, group=M20):
    agents = init_state(bundle.population(group))
    state = LossState([(t.cells, t.arrivals) for t in agents], bundle.od[group], table)
    return state, CandidatePool(bundle.od[group], hours={h for _, h in table})


def test_null_move_zero_delta(small_world):
    _, _, bundle = small_world
    state, _ = make_state(bundle, bundle.param_table())
    raw, delta = state.apply_move(NULL_MOVE)
    assert delta == (0.0, 0.0, 0.0) and raw == state.raw


def test_invalid_move_leaves_state(small_world):
    _, _, bundle = small_world
    state, _ = make_state(bundle, bundle.param_table())
    before = (state.raw, [list(c) for c in state.cells])
    for bad in (Move("remove", 0, 0), Move("insert", 0, 1, state.cells[0][0], 300),
                Move("insert", 0, 1, "9", 5), Move("retime", 0, 1, minute=20)):
        with pytest.raises(InvalidMove):
            state.apply_move(bad)
    assert (state.raw, state.cells) == before


@pytest.mark.parametrize("seed", [0, 1])
def test_incremental_matches_scratch(small_world, seed):
    _, _, bundle = small_world
    table = bundle.param_table()
    state, pool = make_state(bundle, table)
    rng = random.Random(seed)
    for k in range(1, 601):
        move = propose_move(state, pool, rng)
        state.apply_move(move)
        if rng.random() < 0.3:
            state.revert()
        else:
            state.commit()
        if k % 100 == 0:
            raw, ev = scratch(state)
            assert all(abs(a - b) <= 1e-9 for a, b in zip(state.raw, raw))
            assert abs(state.l_od_eval - ev) <= 1e-12


def test_apply_revert_bit_exact(small_world):
    _, _, bundle = small_world
    state, pool = make_state(bundle, bundle.param_table())
    rng = random.Random(4)
    for _ in range(300):
        state.apply_move(propose_move(state, pool, rng))
        state.commit()
    for _ in range(300):
        snap = (state.raw, state.od_num, state.l_vf, state.dt_num, dict(state.dev),
                dict(state.syn), list(state.cum), [list(g) for g in state.groups.values()])
        state.apply_move(propose_move(state, pool, rng))
        state.revert()
        again = (state.raw, state.od_num, state.l_vf, state.dt_num, dict(state.dev),
                 {k: v for k, v in state.syn.items() if v}, list(state.cum),
                 [list(g) for g in state.groups.values() if g])
        assert again[:5] == snap[:5]
        assert again[5] == {k: v for k, v in snap[5].items() if v}
        assert again[6] == snap[6]


def test_losses_permutation_invariant(small_world):
    _, world, bundle = small_world
    table = bundle.param_table()
    ts = [t for t in world if t.demographic == M20]
    rev = list(reversed(ts))
    assert loss_vf(ts) == loss_vf(rev)
    assert loss_dt(ts, table) == loss_dt(rev, table)
    assert od_matrix_of(ts, M20) == od_matrix_of(rev, M20)
