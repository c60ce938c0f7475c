import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from instances import small_allocation
from oracles import grid_allocation
from vlcopt.allocator import (
    coefficient_matrix, dual_step, kkt_q, rate, row_values, run_algorithm1, stepsizes,
    strengthen_constraint,
)

LN2 = math.log(2)


def test_strengthen_identity():
    vals, bound = strengthen_constraint(np.eye(2), [1.0, 1.0], 2.0, 2)
    assert np.allclose(vals, [1.0, 1.0]) and bound == 2.0


def test_strengthen_zero_q():
    P = np.random.default_rng(0).normal(size=(5, 3))
    vals, _ = strengthen_constraint(P, np.zeros(3), 1.0)
    assert (vals == 0).all()


def test_strengthened_implies_amplitude_limit():
    rng = np.random.default_rng(1)
    P = rng.normal(size=(6, 3))
    dI = 0.8
    for _ in range(1000):
        q = rng.uniform(0, 1, 3)
        vals, bound = strengthen_constraint(P, q, dI)
        q *= bound / vals.max() * rng.uniform(0, 1)
        amp = np.abs(P * np.sqrt(q)[None, :]).sum(axis=1)
        assert amp.max() <= dI * (1 + 1e-12)


def test_kkt_cancel():
    q = kkt_q([1.0], [0.0], [1.0], [[1 / (2 * LN2)]])
    assert q[0] == pytest.approx(0.0, abs=1e-15)


def test_kkt_halved_denominator():
    q1 = kkt_q([1.0], [0.0], [1.0], [[1.0]])
    q2 = kkt_q([1.0], [0.0], [1.0], [[0.5]])
    assert q2[0] > q1[0]
    assert 1 / (2 * LN2 * 0.5) == pytest.approx(2 / (2 * LN2 * 1.0))


def test_kkt_unbounded_coordinate():
    q = kkt_q([1.0], [2.0], [1.0, 1.0], [[1.0, 3.0]])
    assert math.isinf(q[0]) and math.isfinite(q[1])


def test_coefficient_matrix_plain_row_sum():
    P = np.random.default_rng(2).normal(size=(4, 3))
    q = np.array([0.2, 0.5, 0.1])
    assert np.allclose(coefficient_matrix(P) @ q, ((P * q) @ P.T).sum(axis=1))


def test_single_led_saturates():
    dI = 0.9
    st_ = run_algorithm1(np.array([[1.0]]), [1e6], dI)
    assert st_.q[0] == pytest.approx(dI**2, rel=1e-3)
    assert st_.q[0] <= dI**2 * (1 + 1e-12)


def test_stepsizes():
    assert np.array_equal(stepsizes(0.01, 4), 0.01 / np.sqrt([1, 2, 3, 4]))


def test_dual_step_zero_violation_keeps_mu():
    mu, _ = dual_step([0.3, 0.7], [0.1], [0.0, 0.0], [0.5], 0.2)
    assert np.array_equal(mu, [0.3, 0.7])


def test_dual_step_clamps():
    mu, lam = dual_step([0.1], [0.1], [-5.0], [5.0], 0.5)
    assert mu[0] == 0.0 and lam[0] == 0.0


def test_small_instance_matches_grid():
    rng = np.random.default_rng(11)
    P = rng.uniform(0.2, 1.0, (2, 2)) * np.array([[1, -0.4], [-0.3, 1]])
    m = np.array([30.0, 12.0])
    dI = 1.0
    st_ = run_algorithm1(P, m, dI)
    best = grid_allocation(P, m, dI)
    assert st_.rate >= best * (1 - 1e-3)
    assert st_.rate <= best * (1 + 1e-9)


@pytest.mark.parametrize("seed", range(6))
def test_realistic_cells(seed):
    for P, m, dI in small_allocation(seed):
        st_ = run_algorithm1(P, m, dI)
        best = grid_allocation(P, m, dI)
        assert abs(st_.rate - best) <= 1e-3 * best
        bound = dI**2 / P.shape[1]
        assert row_values(P, st_.q).max() <= bound + 1e-8
        assert (st_.q >= 0).all()
        # best-so-far rate never drops; the dual bound stays above it
        r = [t["rate"] for t in st_.trace]
        assert all(b >= a for a, b in zip(r, r[1:]))
        assert all(t["dual"] >= t["rate"] - 1e-6 for t in st_.trace)
        assert st_.converged and st_.iterations <= 3000
        assert st_.row_slackness.shape == (P.shape[0],)
        assert st_.power_slackness.shape == (P.shape[1],)


def test_cap_reached_flags_nonconverged():
    P, m, dI = small_allocation(3)[0]
    st_ = run_algorithm1(P, m, dI, max_iters=2, eps=1e-30)
    assert not st_.converged and st_.iterations == 2


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_objective_midpoint_concave(seed):
    rng = np.random.default_rng(seed)
    m = rng.uniform(1, 100, 3)
    q1, q2 = rng.uniform(0, 1, 3), rng.uniform(0, 1, 3)
    assert rate(m, (q1 + q2) / 2) >= (rate(m, q1) + rate(m, q2)) / 2 - 1e-12


def test_zero_headroom():
    st_ = run_algorithm1(np.eye(2), [1.0, 1.0], 0.0)
    assert (st_.q == 0).all() and st_.rate == 0.0
