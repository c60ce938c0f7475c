import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import loop_sinr
from vlcopt.precoding import (
    SingularChannel, emitted_signals, fr_mbe, pseudo_inverse, sinr, sinr_terms, sum_rate,
    zf_precoder,
)


def test_identity_channel():
    p = zf_precoder(np.eye(2), np.ones(2), [4.0, 9.0])
    assert np.allclose(p.W, np.diag([2.0, 3.0]))


def test_zf_full_rank_2x3():
    H = np.array([[1.0, 0.5, 0.2], [0.3, 1.0, 0.7]])
    p = zf_precoder(H, np.ones(3), [1.0, 1.0])
    assert np.abs(H @ p.W - np.eye(2)).max() <= 1e-10


def test_zf_seeded_4x6():
    H = np.random.default_rng(4).uniform(0, 1, (4, 6))
    G = H @ zf_precoder(H, np.ones(6), np.arange(1.0, 5.0)).W
    off = G - np.diag(np.diag(G))
    assert np.abs(off).max() <= 1e-9 * np.abs(np.diag(G)).max()


def test_pinv_matches_formula():
    H = np.random.default_rng(5).uniform(0, 1, (3, 7))
    assert np.allclose(pseudo_inverse(H), H.T @ np.linalg.inv(H @ H.T))


def test_rank_deficient():
    with pytest.raises(SingularChannel):
        pseudo_inverse(np.array([[1.0, 2.0], [2.0, 4.0]]))
    with pytest.raises(SingularChannel):
        zf_precoder(np.ones((2, 3)), np.array([1.0, 0.0, 0.0]), [1.0, 1.0])


def test_sinr_single_cell_hand():
    xi = sinr(np.array([[1.0]]), [1.0], np.array([[1.0]]), [0], [1.0], 1.0)
    assert xi[0] == pytest.approx(2 / (math.pi * math.e))
    assert xi[0] == pytest.approx(0.2342, abs=1e-4)


def test_zero_desired():
    xi = sinr(np.array([[0.0]]), [1.0], np.array([[1.0]]), [0], [1.0], 1.0)
    assert xi[0] == 0


def _random_network(seed):
    rng = np.random.default_rng(seed)
    H = rng.uniform(0, 1, (4, 6))
    W = np.zeros((6, 4))
    W[:3, :2] = rng.normal(size=(3, 2))
    W[3:, 2:] = rng.normal(size=(3, 2))
    return H, W, np.array([0, 0, 1, 1]), rng.uniform(0.1, 1, 4)


def test_doubling_w():
    H, W, uc, noise = _random_network(0)
    a = np.ones(6)
    xi1 = sinr(H, a, W, uc, noise, 0.7)
    xi2 = sinr(H, a, 2 * W, uc, noise, 0.7)
    assert (xi2 < 4 * xi1).all()


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_sinr_matches_loop_oracle(seed):
    H, W, uc, noise = _random_network(seed)
    a = np.random.default_rng(seed + 1).uniform(0, 1, 6)
    ours = sinr(H, a, W, uc, noise, 0.3)
    ref = loop_sinr(H.tolist(), a.tolist(), W.tolist(), uc.tolist(), noise.tolist(), 0.3)
    assert np.allclose(ours, ref, rtol=1e-12, atol=0)


def test_sum_rate_examples():
    assert sum_rate([0.0, 0.0]) == 0
    assert sum_rate([3.0]) == pytest.approx(1.0)
    assert sum_rate([1.0, 1.0]) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        sum_rate([-1.0])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 1e3), min_size=1, max_size=8), st.integers(0, 7), st.floats(1e-3, 10))
def test_rate_monotone(xi, k, bump):
    k %= len(xi)
    up = list(xi)
    up[k] += bump
    assert sum_rate(up) > sum_rate(xi)


def test_fr_mbe():
    assert fr_mbe(6.0, 1) == 6.0
    assert fr_mbe(6.0, 3) == 2.0
    with pytest.raises(ValueError):
        fr_mbe(1.0, 0)


def test_fr_two_cells_removes_interference():
    H, W, uc, noise = _random_network(3)
    a = np.ones(6)
    G, mask = sinr_terms(H, a, W, uc, reuse_groups=np.arange(2))
    assert not mask.any()
    xi = sinr(H, a, W, uc, noise, 0.5, reuse_groups=np.arange(2))
    assert np.allclose(xi, 2 * 0.25 * np.diag(G) ** 2 / (math.pi * math.e * noise))
    assert fr_mbe(sum_rate(xi), 2) == sum_rate(xi) / 2


def test_emitted_signals_in_range():
    rng = np.random.default_rng(8)
    Wc = rng.normal(size=(5, 3))
    Wc *= 0.6 / np.abs(Wc).sum(axis=1, keepdims=True)
    x = emitted_signals(Wc, rng.uniform(-1, 1, (3, 10000)), 0.7)
    assert x.min() >= 0.1 - 1e-12 and x.max() <= 1.3 + 1e-12
