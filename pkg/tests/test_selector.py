import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from instances import table2_selection, tiny_selection
from oracles import cv_of, exhaustive_selection
from vlcopt.cells import InfeasibleAssociation
from vlcopt.illumination import cv_rmse
from vlcopt.selector import (
    SelectionProblem, penalized_objective, penalty, project_count, rate_and_grad, relaxed_rate,
    round_and_repair, solve_selection, top_n,
)


def _oracle(p, cv_limit=math.inf):
    return exhaustive_selection(p.H.tolist(), p.W.tolist(), list(p.user_cell), list(p.noise),
                                p.signal_scale, p.n_active, p.field.E.tolist(), cv_limit)


def test_binary_has_no_penalty():
    p = tiny_selection(0)
    a = top_n(np.arange(p.n_leds, dtype=float), p.n_active)
    assert penalty(a) == 0.0
    assert penalized_objective(a, p, 1e5) == relaxed_rate(a, p)


def test_half_entry_penalty():
    p = tiny_selection(1)
    a = np.ones(p.n_leds)
    a[0] = 0.5
    assert relaxed_rate(a, p) - penalized_objective(a, p, 1e5) == pytest.approx(2.5e4)


def test_interior_objective_diverges():
    p = tiny_selection(2)
    a = np.full(p.n_leds, 0.5)
    assert penalized_objective(a, p, 1e12) < -1e10


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=2, max_size=12), st.data())
def test_projection(v, data):
    v = np.array(v)
    n = data.draw(st.integers(1, len(v)))
    a = project_count(v, n)
    assert a.sum() == pytest.approx(n, abs=1e-9)
    assert (a >= 0).all() and (a <= 1).all()
    # optimality: a is the clip of v - tau for a single tau on the free coordinates
    free = (a > 1e-9) & (a < 1 - 1e-9)
    if free.sum() > 1:
        shift = (v - a)[free]
        assert np.ptp(shift) < 1e-6


def test_round_examples():
    assert np.array_equal(round_and_repair([0.99, 0.98, 0.01, 0.02], 2), [1, 1, 0, 0])
    assert np.array_equal(round_and_repair([0, 1, 1, 0], 2), [0, 1, 1, 0])
    assert np.array_equal(round_and_repair([0.5, 0.7, 0.5, 0.5], 2), [1, 1, 0, 0])


def test_round_repairs_line_of_sight():
    gains = np.array([[1.0, 0.9, 0.0, 0.0], [0.0, 0.0, 0.0, 0.2]])
    sel = round_and_repair([0.9, 0.8, 0.7, 0.1], 2, gains, ((0,), (1,)))
    assert sel[3] == 1 and sel.sum() == 2
    with pytest.raises(InfeasibleAssociation):
        round_and_repair([0.9, 0.8, 0.7, 0.1], 1, gains, ((0,), (1,)))


def test_all_leds_when_count_is_full():
    p = tiny_selection(3)
    full = SelectionProblem(p.H, p.W, p.user_cell, p.noise, p.signal_scale, p.field, p.n_leds)
    st_ = solve_selection(full)
    assert (st_.a == 1).all() and st_.feasible


@pytest.mark.parametrize("seed", range(8))
def test_tiny_matches_exhaustive(seed):
    p = tiny_selection(seed)
    best, _ = _oracle(p)
    st_ = solve_selection(p)
    assert st_.a.sum() == p.n_active and set(np.unique(st_.a)) <= {0.0, 1.0}
    assert st_.rate >= 0.99 * best
    assert penalty(st_.a) == 0.0


def test_eight_led_example():
    for seed in range(200):
        p = tiny_selection(seed)
        if p.n_leds == 8 and len(p.noise) == 2 and p.n_active == 4:
            break
    else:
        pytest.skip("generator produced no 8-LED, 2-user, 4-active instance")
    best, _ = _oracle(p)
    assert solve_selection(p).rate >= 0.99 * best


def test_tight_uniformity_never_violated():
    p = tiny_selection(5)
    _, best_sel = _oracle(p)
    limit = 0.9 * cv_of(p.field.E.tolist(), best_sel)
    tight = SelectionProblem(p.H, p.W, p.user_cell, p.noise, p.signal_scale, p.field,
                             p.n_active, limit)
    st_ = solve_selection(tight)
    cv = cv_rmse(p.field, st_.a)[2]
    if st_.feasible:
        assert cv <= limit
    else:
        assert cv > limit and st_.report


def test_trace_monotone_per_stage():
    p = table2_selection(0)
    st_ = solve_selection(p, restarts=0)
    assert st_.feasible and st_.cv <= p.cv_limit
    by_stage = {}
    for row in st_.objective_trace:
        by_stage.setdefault(row["stage"], []).append(row["objective"])
    assert by_stage
    for vals in by_stage.values():
        assert all(b >= a - 1e-9 * max(1.0, abs(a)) for a, b in zip(vals, vals[1:]))


def test_gradient_fd_table2():
    p = table2_selection(1)
    rng = np.random.default_rng(0)
    for _ in range(3):
        a = rng.uniform(0.05, 1.0, p.n_leds)
        _, g = rate_and_grad(a, p)
        h = 1e-6
        fd = np.array([(relaxed_rate(a + h * e, p) - relaxed_rate(a - h * e, p)) / (2 * h)
                       for e in np.eye(p.n_leds)])
        assert np.abs(g - fd).max() <= 1e-4 * np.abs(fd).max()


def test_adaptive_penalty_runs():
    p = tiny_selection(6)
    st_ = solve_selection(p, adaptive_penalty=True, restarts=1)
    assert st_.a.sum() == p.n_active
    assert st_.penalty_lambda == pytest.approx(1e3 * abs(relaxed_rate(np.full(p.n_leds, p.n_active / p.n_leds), p)))
